//! Sparse-representation classification.
//!
//! A test vector is coded over the dictionary of all training descriptors
//! by solving `min_z lambda * ||z||_1 + ||y - D z||_2^2` with a homotopy
//! path solver, and labeled by the class whose atoms reconstruct it with
//! the smallest residual. A nearest-neighbor classifier over the same
//! dictionary serves as the baseline comparator.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::matrix::{self, DenseMatrix};

/// Columns with L2 norm at or below this cannot be normalized.
const ZERO_NORM_TOLERANCE: f64 = 1e-12;

/// KKT pass tolerance: `max_violation <= KKT_TOLERANCE * max(1, lambda)`.
pub const KKT_TOLERANCE: f64 = 1e-6;

/// A normalized training dictionary partitioned into classes.
///
/// Columns are unit-norm feature vectors; each column belongs to exactly
/// one class and classes are ordered by first appearance, which fixes every
/// tie-break downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: DenseMatrix,
    col_class: Vec<usize>,
    class_ids: Vec<String>,
}

impl Dictionary {
    /// Builds a dictionary from raw descriptor columns and per-column class
    /// labels, normalizing every column to unit L2 norm.
    pub fn new(atoms: DenseMatrix, labels: &[String]) -> Result<Self> {
        if atoms.ncols() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} labels (one per column)", atoms.ncols()),
                actual: format!("{}", labels.len()),
            });
        }
        if atoms.ncols() == 0 || atoms.nrows() == 0 {
            return Err(Error::EmptyMatrix);
        }
        let atoms = normalize_columns(&atoms)?;
        let mut class_ids: Vec<String> = Vec::new();
        let mut col_class = Vec::with_capacity(labels.len());
        for label in labels {
            let idx = match class_ids.iter().position(|c| c == label) {
                Some(i) => i,
                None => {
                    class_ids.push(label.clone());
                    class_ids.len() - 1
                }
            };
            col_class.push(idx);
        }
        Ok(Self {
            atoms,
            col_class,
            class_ids,
        })
    }

    /// Rebuilds a dictionary from parts that are already normalized, as
    /// when loading a serialized model. Unit norms are re-verified.
    pub fn from_normalized(
        atoms: DenseMatrix,
        col_class: Vec<usize>,
        class_ids: Vec<String>,
    ) -> Result<Self> {
        if atoms.ncols() != col_class.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} class entries (one per column)", atoms.ncols()),
                actual: format!("{}", col_class.len()),
            });
        }
        for (j, &k) in col_class.iter().enumerate() {
            if k >= class_ids.len() {
                return Err(Error::InvalidInput(format!(
                    "column {j} references class index {k}, but only {} classes exist",
                    class_ids.len()
                )));
            }
        }
        for j in 0..atoms.ncols() {
            let norm = atoms.column(j).norm();
            if (norm - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidInput(format!(
                    "column {j} has norm {norm}, expected unit"
                )));
            }
        }
        Ok(Self {
            atoms,
            col_class,
            class_ids,
        })
    }

    /// The normalized atom matrix, feature_dim x m.
    pub fn atoms(&self) -> &DenseMatrix {
        &self.atoms
    }

    /// Class index (into [`Self::class_ids`]) of each column.
    pub fn col_class(&self) -> &[usize] {
        &self.col_class
    }

    /// Distinct class labels in first-appearance order.
    pub fn class_ids(&self) -> &[String] {
        &self.class_ids
    }

    /// Number of atoms.
    pub fn len(&self) -> usize {
        self.atoms.ncols()
    }

    /// True when the dictionary holds no atoms.
    pub fn is_empty(&self) -> bool {
        self.atoms.ncols() == 0
    }

    /// Feature dimensionality.
    pub fn feature_dim(&self) -> usize {
        self.atoms.nrows()
    }
}

/// Divides each column by its L2 norm; zero columns are rejected with the
/// offending index.
pub fn normalize_columns(atoms: &DenseMatrix) -> Result<DenseMatrix> {
    matrix::ensure_finite(atoms)?;
    let mut out = atoms.clone();
    for j in 0..out.ncols() {
        let norm = out.column(j).norm();
        if norm < ZERO_NORM_TOLERANCE {
            return Err(Error::ZeroColumn { index: j });
        }
        out.column_mut(j).scale_mut(1.0 / norm);
    }
    Ok(out)
}

/// How the l1 solver arrived at its answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverStatus {
    /// The homotopy path reached the target multiplier and the result
    /// certifies optimal.
    Converged,
    /// The path stagnated or failed certification; the returned point comes
    /// from a proximal-gradient refinement instead.
    Degraded,
}

/// Result of [`homotopy_l1`].
#[derive(Debug, Clone)]
pub struct L1Solution {
    /// Coefficient vector, one entry per atom.
    pub z: DVector<f64>,
    /// Whether the path completed cleanly.
    pub status: SolverStatus,
    /// Breakpoints processed along the path.
    pub breakpoints: usize,
}

/// Optimality certificate for `lambda * ||z||_1 + ||y - D z||_2^2`.
#[derive(Debug, Clone, Copy)]
pub struct KktReport {
    /// Largest stationarity violation over all coordinates.
    pub max_violation: f64,
    /// True iff `max_violation <= KKT_TOLERANCE * max(1, lambda)`.
    pub pass: bool,
}

/// Evaluates the first-order optimality conditions at `z`.
///
/// With `c = 2 D^T (y - D z)`, an active coordinate must satisfy
/// `c_j = lambda * sign(z_j)` and an inactive one `|c_j| <= lambda`.
pub fn kkt_check(d: &DenseMatrix, y: &DVector<f64>, z: &DVector<f64>, lambda: f64) -> KktReport {
    assert_eq!(d.nrows(), y.len(), "dictionary rows must match y length");
    assert_eq!(d.ncols(), z.len(), "dictionary columns must match z length");
    let residual = y - d * z;
    let c = 2.0 * d.transpose() * residual;
    let mut max_violation = 0.0f64;
    for j in 0..z.len() {
        let violation = if z[j] != 0.0 {
            (c[j] - lambda * z[j].signum()).abs()
        } else {
            (c[j].abs() - lambda).max(0.0)
        };
        max_violation = max_violation.max(violation);
    }
    KktReport {
        max_violation,
        pass: max_violation <= KKT_TOLERANCE * lambda.max(1.0),
    }
}

/// The l1 objective `lambda * ||z||_1 + ||y - D z||_2^2`.
pub fn l1_objective(d: &DenseMatrix, y: &DVector<f64>, z: &DVector<f64>, lambda: f64) -> f64 {
    let residual = y - d * z;
    lambda * z.iter().map(|v| v.abs()).sum::<f64>() + residual.norm_squared()
}

/// Maximum homotopy breakpoints before declaring stagnation.
fn breakpoint_cap(m: usize) -> usize {
    4 * m + 16
}

/// Solves `min_z lambda * ||z||_1 + ||y - D z||_2^2` by homotopy.
///
/// The path starts at `lambda_0 = 2 ||D^T y||_inf`, where the zero vector
/// is optimal, and follows the piecewise-linear solution path downward,
/// adding and removing active coordinates at breakpoints until it reaches
/// the requested multiplier. Simultaneous breakpoints (exact ties) are
/// applied as one batch. If the path stalls or the final point fails its
/// KKT certificate, a proximal-gradient refinement runs instead and the
/// result is marked [`SolverStatus::Degraded`].
pub fn homotopy_l1(d: &DenseMatrix, y: &DVector<f64>, lambda: f64) -> Result<L1Solution> {
    if !lambda.is_finite() || lambda <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "l1 multiplier must be positive, got {lambda}"
        )));
    }
    if d.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} query entries", d.nrows()),
            actual: format!("{}", y.len()),
        });
    }
    matrix::ensure_finite(d)?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue(f64::NAN));
    }

    let m = d.ncols();
    let correlation0 = 2.0 * d.transpose() * y;
    let lambda_start = correlation0.amax();
    if lambda >= lambda_start {
        return Ok(L1Solution {
            z: DVector::zeros(m),
            status: SolverStatus::Converged,
            breakpoints: 0,
        });
    }

    // The active set's atoms, Gram matrix, and right-hand side are
    // maintained incrementally across events: joins append a column (and a
    // bordering Gram row/column), leaves splice one out. This keeps each
    // breakpoint at O(k^2 + k d + m d) instead of re-forming the Gram at
    // O(k^2 d).
    let mut active: Vec<usize> = Vec::new();
    let mut signs: Vec<f64> = Vec::new();
    let mut d_a = DenseMatrix::zeros(d.nrows(), 0);
    let mut gram = DenseMatrix::zeros(0, 0);
    let mut rhs_y = DVector::<f64>::zeros(0);
    let join_slot = |j: usize,
                         sign: f64,
                         active: &mut Vec<usize>,
                         signs: &mut Vec<f64>,
                         d_a: &mut DenseMatrix,
                         gram: &mut DenseMatrix,
                         rhs_y: &mut DVector<f64>| {
        let k = active.len();
        let atom = d.column(j);
        let cross = d_a.transpose() * &atom;
        *d_a = d_a.clone().insert_column(k, 0.0);
        d_a.set_column(k, &atom);
        *gram = gram.clone().insert_row(k, 0.0).insert_column(k, 0.0);
        for (slot, &value) in cross.iter().enumerate() {
            gram[(slot, k)] = value;
            gram[(k, slot)] = value;
        }
        gram[(k, k)] = atom.norm_squared();
        *rhs_y = rhs_y.clone().insert_row(k, atom.dot(y));
        active.push(j);
        signs.push(sign);
    };
    let leave_slot = |slot: usize,
                      active: &mut Vec<usize>,
                      signs: &mut Vec<f64>,
                      d_a: &mut DenseMatrix,
                      gram: &mut DenseMatrix,
                      rhs_y: &mut DVector<f64>| {
        active.remove(slot);
        signs.remove(slot);
        *d_a = d_a.clone().remove_column(slot);
        *gram = gram.clone().remove_row(slot).remove_column(slot);
        *rhs_y = rhs_y.clone().remove_row(slot);
    };
    // Seed with every coordinate whose correlation attains the start value;
    // exact ties enter together.
    for j in 0..m {
        if correlation0[j].abs() >= lambda_start * (1.0 - 1e-12) {
            join_slot(
                j,
                correlation0[j].signum(),
                &mut active,
                &mut signs,
                &mut d_a,
                &mut gram,
                &mut rhs_y,
            );
        }
    }

    let mut lambda_cur = lambda_start;
    let mut breakpoints = 0usize;
    let mut stalls = 0usize;
    let mut resolves_here = 0usize;
    // Coordinate -> multiplier at which it was rejected as a boundary
    // touch; it may not rejoin until the multiplier strictly decreases.
    let mut banned_at = vec![f64::NAN; m];
    let mut z = DVector::zeros(m);
    let mut clean = true;

    loop {
        breakpoints += 1;
        if breakpoints > breakpoint_cap(m) || stalls > 32 {
            clean = false;
            break;
        }

        // Affine segment: z_A(t) = p - (t / 2) q on the current active set.
        // Cholesky on a nearly singular Gram (twin atoms both active) can
        // succeed yet return garbage, so verify the residuals and fall
        // back to the least-norm solve, which regularizes the degenerate
        // directions instead of amplifying them.
        let s_a = DVector::from_vec(signs.clone());
        let mut solved = None;
        if let Some(chol) = nalgebra::linalg::Cholesky::new(gram.clone()) {
            let p = chol.solve(&rhs_y);
            let q = chol.solve(&s_a);
            let p_ok = (&gram * &p - &rhs_y).norm() <= 1e-6 * rhs_y.norm().max(1e-300);
            let q_ok = (&gram * &q - &s_a).norm() <= 1e-6 * s_a.norm().max(1e-300);
            if p_ok && q_ok {
                solved = Some((p, q));
            }
        }
        let (p, q) = match solved {
            Some(pq) => pq,
            None => (least_norm_solve(&gram, &rhs_y)?, least_norm_solve(&gram, &s_a)?),
        };

        // Sign-feasibility sweep. Every active coefficient must agree with
        // its path sign here: one still at zero must move off zero in its
        // sign direction (otherwise its correlation only touched the
        // boundary and the "join" was spurious), and one that has drifted
        // to the wrong side — a zero crossing missed near an
        // ill-conditioned step — can never trigger a leave event again,
        // since its crossing now lies behind the path. Eject offenders and
        // re-solve at the same multiplier; an ejected coordinate whose
        // correlation still demands activity rejoins with the correct
        // sign, so the path self-heals instead of finishing with a
        // wrong-signed coefficient (a 2*lambda certificate violation).
        let coeff_here = |slot: usize| p[slot] - 0.5 * lambda_cur * q[slot];
        let zero_tol = |slot: usize| {
            1e-12 * (1.0 + p[slot].abs().max(0.5 * lambda_cur * q[slot].abs()))
        };
        let at_zero = |slot: usize| coeff_here(slot).abs() <= zero_tol(slot);
        let infeasible: Vec<usize> = (0..active.len())
            .filter(|&slot| {
                let wrong_signed = coeff_here(slot) * signs[slot] < -zero_tol(slot);
                wrong_signed || (at_zero(slot) && q[slot] * signs[slot] < 0.0)
            })
            .collect();
        if !infeasible.is_empty() {
            resolves_here += 1;
            if resolves_here > active.len() + 4 {
                clean = false;
                break;
            }
            for &slot in infeasible.iter().rev() {
                banned_at[active[slot]] = lambda_cur;
                leave_slot(slot, &mut active, &mut signs, &mut d_a, &mut gram, &mut rhs_y);
            }
            continue;
        }

        // Correlations off the active set evolve as c_j(t) = a_j + t * b_j.
        let residual_ls = y - &d_a * &p;
        let a = 2.0 * d.transpose() * residual_ls;
        let b = d.transpose() * (&d_a * &q);

        // First event below the current multiplier: an inactive coordinate
        // reaching |c_j(t)| = t, or an active coefficient crossing zero.
        let ceiling = lambda_cur * (1.0 - 1e-12);
        let mut t_max = f64::NEG_INFINITY;
        let mut is_active_mask = vec![false; m];
        for &j in &active {
            is_active_mask[j] = true;
        }
        for j in 0..m {
            if is_active_mask[j] {
                continue;
            }
            for t in [a[j] / (1.0 - b[j]), -a[j] / (1.0 + b[j])] {
                if t.is_finite() && t > lambda && t <= ceiling && t > t_max {
                    t_max = t;
                }
            }
        }
        // A coefficient sitting at zero right now (it joined at this very
        // breakpoint) is not a leave candidate: its "crossing" is the join
        // event itself, and treating it as a leave cycles the path.
        let moving = |slot: usize| !at_zero(slot);
        for (slot, &_j) in active.iter().enumerate() {
            if q[slot] != 0.0 && moving(slot) {
                let t = 2.0 * p[slot] / q[slot];
                if t.is_finite() && t > lambda && t <= ceiling && t > t_max {
                    t_max = t;
                }
            }
        }

        if !t_max.is_finite() {
            // No event before the target: evaluate the segment there.
            z = DVector::zeros(m);
            for (slot, &j) in active.iter().enumerate() {
                z[j] = p[slot] - 0.5 * lambda * q[slot];
            }
            break;
        }

        // Apply every event tied at the breakpoint as one batch.
        let window = t_max * (1.0 - 1e-10);
        let mut leaving = Vec::new();
        for (slot, &_j) in active.iter().enumerate() {
            if q[slot] != 0.0 && moving(slot) {
                let t = 2.0 * p[slot] / q[slot];
                if t.is_finite() && t > lambda && t <= ceiling && t >= window {
                    leaving.push(slot);
                }
            }
        }
        let mut joining = Vec::new();
        for j in 0..m {
            if is_active_mask[j] || banned_at[j] == lambda_cur {
                continue;
            }
            for t in [a[j] / (1.0 - b[j]), -a[j] / (1.0 + b[j])] {
                if t.is_finite() && t > lambda && t <= ceiling && t >= window {
                    joining.push((j, (a[j] + t_max * b[j]).signum()));
                    break;
                }
            }
        }
        for &slot in leaving.iter().rev() {
            leave_slot(slot, &mut active, &mut signs, &mut d_a, &mut gram, &mut rhs_y);
        }
        for (j, sign) in joining {
            join_slot(j, sign, &mut active, &mut signs, &mut d_a, &mut gram, &mut rhs_y);
        }
        if lambda_cur - t_max < 1e-14 {
            stalls += 1;
        } else {
            stalls = 0;
        }
        lambda_cur = t_max;
        resolves_here = 0;
        if active.is_empty() {
            // Every coefficient left the model; restart the segment from
            // wherever the correlations now stand (handled next loop by the
            // join candidates, since a and b come from an empty fit).
            continue;
        }
    }

    if clean {
        let report = kkt_check(d, y, &z, lambda);
        if report.pass {
            return Ok(L1Solution {
                z,
                status: SolverStatus::Converged,
                breakpoints,
            });
        }
    }

    let refined = proximal_refine(d, y, &z, lambda);
    Ok(L1Solution {
        z: refined,
        status: SolverStatus::Degraded,
        breakpoints,
    })
}

/// Least-norm solution of a (possibly singular) symmetric system.
fn least_norm_solve(g: &DenseMatrix, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let f = matrix::svd(g)?;
    let cutoff = f.s[0] * g.nrows() as f64 * f64::EPSILON;
    let mut coeffs = f.u.transpose() * rhs;
    for i in 0..coeffs.len() {
        coeffs[i] = if f.s[i] > cutoff { coeffs[i] / f.s[i] } else { 0.0 };
    }
    Ok(&f.v * coeffs)
}

/// Proximal-gradient fallback: ISTA iterations from `z0` until the KKT
/// certificate passes or the iteration budget runs out.
fn proximal_refine(
    d: &DenseMatrix,
    y: &DVector<f64>,
    z0: &DVector<f64>,
    lambda: f64,
) -> DVector<f64> {
    let lipschitz = match matrix::svd(d) {
        Ok(f) => 2.0 * f.s[0] * f.s[0],
        Err(_) => return z0.clone(),
    };
    if lipschitz <= 0.0 {
        return z0.clone();
    }
    let step = 1.0 / lipschitz;
    let mut z = z0.clone();
    for iter in 0..5000 {
        let residual = y - d * &z;
        let grad = -2.0 * d.transpose() * residual;
        for j in 0..z.len() {
            z[j] = crate::matrix::soft_threshold(z[j] - step * grad[j], lambda * step)
                .unwrap_or(0.0);
        }
        if iter % 50 == 49 && kkt_check(d, y, &z, lambda).pass {
            break;
        }
    }
    z
}

/// Squared reconstruction residual of `y` against each class's atoms.
///
/// `r_i = ||y - D_i z_i||^2`, where `z_i` keeps only the coefficients of
/// class-i columns.
pub fn class_residuals(dict: &Dictionary, z: &DVector<f64>, y: &DVector<f64>) -> Vec<f64> {
    assert_eq!(z.len(), dict.len(), "coefficient count must match atoms");
    assert_eq!(y.len(), dict.feature_dim(), "y must match feature dim");
    let classes = dict.class_ids().len();
    let mut residuals: Vec<DVector<f64>> = vec![y.clone(); classes];
    for j in 0..dict.len() {
        if z[j] != 0.0 {
            let class = dict.col_class[j];
            residuals[class].axpy(-z[j], &dict.atoms.column(j), 1.0);
        }
    }
    residuals.into_iter().map(|r| r.norm_squared()).collect()
}

/// A classified test vector with its code and per-class residuals.
#[derive(Debug, Clone)]
pub struct SparseCode {
    /// Minimizer of the l1 objective over the dictionary.
    pub z: DVector<f64>,
    /// Objective value at `z` (for the normalized test vector).
    pub objective: f64,
    /// Squared per-class residuals in `class_ids` order.
    pub residuals: Vec<f64>,
    /// Index of the predicted class in `class_ids` order.
    pub predicted_index: usize,
    /// Label of the predicted class.
    pub predicted: String,
    /// The multiplier the code was solved at.
    pub lambda: f64,
    /// Solver status carried through from [`homotopy_l1`].
    pub status: SolverStatus,
}

/// Index of the smallest residual; exact ties break toward the earlier
/// class in `class_ids` order.
fn argmin_residual(residuals: &[f64]) -> usize {
    let mut best = 0;
    for (i, &r) in residuals.iter().enumerate().skip(1) {
        if r < residuals[best] {
            best = i;
        }
    }
    best
}

/// Classifies `y` by sparse representation over the dictionary.
///
/// `y` is L2-normalized, coded with [`homotopy_l1`], and labeled by the
/// class with the smallest reconstruction residual.
pub fn src_classify(dict: &Dictionary, y: &DVector<f64>, lambda: f64) -> Result<SparseCode> {
    let normalized = normalize_query(dict, y)?;
    let solution = homotopy_l1(&dict.atoms, &normalized, lambda)?;
    let residuals = class_residuals(dict, &solution.z, &normalized);
    let predicted_index = argmin_residual(&residuals);
    let objective = l1_objective(&dict.atoms, &normalized, &solution.z, lambda);
    Ok(SparseCode {
        z: solution.z,
        objective,
        residuals,
        predicted_index,
        predicted: dict.class_ids[predicted_index].clone(),
        lambda,
        status: solution.status,
    })
}

/// A nearest-neighbor decision over the dictionary atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct NnMatch {
    /// Column index of the nearest atom.
    pub column: usize,
    /// Index of its class in `class_ids` order.
    pub class_index: usize,
    /// Label of its class.
    pub class: String,
    /// Inner product between the normalized query and the atom.
    pub similarity: f64,
}

/// Labels `y` by the dictionary atom with the largest inner product with
/// the normalized query (minimum Euclidean distance on the unit sphere).
/// Ties break toward the lowest column index.
pub fn nn_classify(dict: &Dictionary, y: &DVector<f64>) -> Result<NnMatch> {
    let normalized = normalize_query(dict, y)?;
    let similarities = dict.atoms.transpose() * &normalized;
    let mut best = 0;
    for j in 1..similarities.len() {
        if similarities[j] > similarities[best] {
            best = j;
        }
    }
    let class_index = dict.col_class[best];
    Ok(NnMatch {
        column: best,
        class_index,
        class: dict.class_ids[class_index].clone(),
        similarity: similarities[best],
    })
}

fn normalize_query(dict: &Dictionary, y: &DVector<f64>) -> Result<DVector<f64>> {
    if y.len() != dict.feature_dim() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} query entries", dict.feature_dim()),
            actual: format!("{}", y.len()),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue(f64::NAN));
    }
    let norm = y.norm();
    if norm < ZERO_NORM_TOLERANCE {
        return Err(Error::ZeroVector);
    }
    Ok(y / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| rng.gen::<f64>() * 2.0 - 1.0)
    }

    fn random_vector(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
        DVector::from_fn(len, |_, _| rng.gen::<f64>() * 2.0 - 1.0)
    }

    fn labels(groups: &[(&str, usize)]) -> Vec<String> {
        groups
            .iter()
            .flat_map(|(name, count)| std::iter::repeat_n(name.to_string(), *count))
            .collect()
    }

    #[test]
    fn normalize_columns_unit_norms() {
        let m = DenseMatrix::from_column_slice(2, 1, &[3.0, 4.0]);
        let out = normalize_columns(&m).unwrap();
        assert!((out[(0, 0)] - 0.6).abs() < 1e-15);
        assert!((out[(1, 0)] - 0.8).abs() < 1e-15);

        let again = normalize_columns(&out).unwrap();
        assert!((&again - &out).amax() < 1e-12, "normalization is idempotent");
    }

    #[test]
    fn normalize_columns_rejects_zero_column_by_index() {
        let mut m = random_matrix(&mut ChaCha8Rng::seed_from_u64(1), 4, 3);
        m.column_mut(2).fill(0.0);
        match normalize_columns(&m) {
            Err(Error::ZeroColumn { index }) => assert_eq!(index, 2),
            other => panic!("expected zero-column error, got {other:?}"),
        }
    }

    #[test]
    fn single_atom_closed_form() {
        // min over z of lambda*|z| + ||d - d z||^2 with unit d gives
        // z = 1 - lambda / 2.
        let d = DenseMatrix::from_column_slice(3, 1, &[0.6, 0.0, 0.8]);
        let y = DVector::from_vec(vec![0.6, 0.0, 0.8]);
        let solution = homotopy_l1(&d, &y, 0.4).unwrap();
        assert_eq!(solution.status, SolverStatus::Converged);
        assert!(
            (solution.z[0] - 0.8).abs() < 1e-10,
            "z = {}, expected 0.8",
            solution.z[0]
        );
    }

    #[test]
    fn origin_is_optimal_at_large_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = normalize_columns(&random_matrix(&mut rng, 10, 15)).unwrap();
        let y = random_vector(&mut rng, 10);
        let lambda_start = (2.0 * d.transpose() * &y).amax();
        for lambda in [lambda_start, lambda_start * 1.5] {
            let solution = homotopy_l1(&d, &y, lambda).unwrap();
            assert_eq!(solution.z.amax(), 0.0, "z must be exactly zero");
            assert!(kkt_check(&d, &y, &solution.z, lambda).pass);
        }
    }

    #[test]
    fn orthonormal_dictionary_reduces_to_soft_thresholding() {
        // Coordinate axes in R^6 as atoms: the objective decouples and
        // z_j = soft_threshold(d_j . y, lambda / 2).
        let d = DenseMatrix::identity(6, 4);
        let y = DVector::from_vec(vec![0.9, -0.4, 0.05, -0.75, 0.3, 0.2]);
        for lambda in [1e-3, 0.2, 0.5, 1.2] {
            let solution = homotopy_l1(&d, &y, lambda).unwrap();
            for j in 0..4 {
                let expected = matrix::soft_threshold(y[j], lambda / 2.0).unwrap();
                assert!(
                    (solution.z[j] - expected).abs() < 1e-10,
                    "lambda {lambda}, coordinate {j}: {} vs {expected}",
                    solution.z[j]
                );
            }
            assert!(kkt_check(&d, &y, &solution.z, lambda).pass);
        }
    }

    #[test]
    fn kkt_flags_perturbed_inactive_coordinate() {
        let d = DenseMatrix::identity(6, 4);
        let y = DVector::from_vec(vec![0.9, -0.4, 0.05, -0.75, 0.3, 0.2]);
        let lambda = 0.5;
        let solution = homotopy_l1(&d, &y, lambda).unwrap();
        assert!(kkt_check(&d, &y, &solution.z, lambda).pass);

        // Coordinate 2 is inactive (|y_2| = 0.05 < lambda/2); bumping it
        // breaks stationarity there by 2*0.1 minus the slack it had.
        let mut bad = solution.z.clone();
        bad[2] += 0.1;
        let report = kkt_check(&d, &y, &bad, lambda);
        assert!(!report.pass);
        // c_2 = 2 (y_2 - 0.1) = -0.1; violation = |c_2 - lambda * sign| = 0.6.
        assert!(
            (report.max_violation - 0.6).abs() < 1e-12,
            "violation {}",
            report.max_violation
        );
    }

    #[test]
    fn matches_proximal_oracle_on_random_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for trial in 0..5 {
            let d = normalize_columns(&random_matrix(&mut rng, 20, 40)).unwrap();
            let y = random_vector(&mut rng, 20);
            for lambda in [1e-3, 1e-2, 1e-1] {
                let solution = homotopy_l1(&d, &y, lambda).unwrap();
                assert_eq!(solution.status, SolverStatus::Converged, "trial {trial}");
                assert!(kkt_check(&d, &y, &solution.z, lambda).pass);

                // 500 ISTA iterations from zero as an independent oracle.
                let f = matrix::svd(&d).unwrap();
                let step = 1.0 / (2.0 * f.s[0] * f.s[0]);
                let mut z = DVector::zeros(40);
                for _ in 0..500 {
                    let grad = -2.0 * d.transpose() * (&y - &d * &z);
                    for j in 0..z.len() {
                        z[j] = matrix::soft_threshold(z[j] - step * grad[j], lambda * step)
                            .unwrap();
                    }
                }
                let oracle = l1_objective(&d, &y, &z, lambda);
                let ours = l1_objective(&d, &y, &solution.z, lambda);
                assert!(
                    ours <= oracle + 1e-8,
                    "trial {trial} lambda {lambda}: objective {ours} vs oracle {oracle}"
                );
            }
        }
    }

    #[test]
    fn duplicated_atoms_still_satisfy_kkt() {
        // A rank-deficient active set exercises the least-norm branch.
        let col = [0.6, 0.0, 0.8];
        let mut d = DenseMatrix::zeros(3, 2);
        d.set_column(0, &DVector::from_row_slice(&col));
        d.set_column(1, &DVector::from_row_slice(&col));
        let y = DVector::from_row_slice(&col);
        let solution = homotopy_l1(&d, &y, 0.3).unwrap();
        assert!(kkt_check(&d, &y, &solution.z, 0.3).pass);
    }

    #[test]
    fn near_duplicate_atoms_converge_without_fallback() {
        // Dictionaries whose atoms come in nearly identical pairs produce
        // ill-conditioned active sets and boundary-touch events, where a
        // naive path implementation finishes with a wrong-signed
        // coefficient (a violation of exactly 2 * lambda) or cycles until
        // a fallback engages. Every such problem must still finish on the
        // path with a passing certificate.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..20 {
            let base = normalize_columns(&random_matrix(&mut rng, 16, 12)).unwrap();
            let mut d = DenseMatrix::zeros(16, 24);
            for j in 0..12 {
                d.set_column(2 * j, &base.column(j));
                let mut twin = base.column(j).into_owned();
                for v in twin.iter_mut() {
                    *v += 1e-8 * (rng.gen::<f64>() - 0.5);
                }
                d.set_column(2 * j + 1, &twin);
            }
            let d = normalize_columns(&d).unwrap();
            let y = random_vector(&mut rng, 16);
            for lambda in [1e-3, 1e-2, 1e-1] {
                let solution = homotopy_l1(&d, &y, lambda).unwrap();
                assert_eq!(
                    solution.status,
                    SolverStatus::Converged,
                    "trial {trial} lambda {lambda} fell back"
                );
                assert!(kkt_check(&d, &y, &solution.z, lambda).pass);
            }
        }
    }

    #[test]
    fn class_residuals_at_zero_code() {
        let dict = Dictionary::new(
            DenseMatrix::identity(4, 3),
            &labels(&[("a", 2), ("b", 1)]),
        )
        .unwrap();
        let y = DVector::from_vec(vec![0.5, 0.5, 0.5, 0.5]);
        let r = class_residuals(&dict, &DVector::zeros(3), &y);
        assert_eq!(r.len(), 2);
        for v in r {
            assert!((v - 1.0).abs() < 1e-12, "r = {v}, expected ||y||^2 = 1");
        }
    }

    #[test]
    fn class_residuals_exact_single_atom() {
        let dict = Dictionary::new(
            DenseMatrix::identity(4, 2),
            &labels(&[("a", 1), ("b", 1)]),
        )
        .unwrap();
        let y = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        let mut z = DVector::zeros(2);
        z[0] = 1.0;
        let r = class_residuals(&dict, &z, &y);
        assert!(r[0].abs() < 1e-12);
        assert!((r[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn support_in_one_class_matches_full_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dict = Dictionary::new(
            random_matrix(&mut rng, 8, 6),
            &labels(&[("a", 3), ("b", 3)]),
        )
        .unwrap();
        let y = random_vector(&mut rng, 8);
        let mut z = DVector::zeros(6);
        z[3] = 0.4;
        z[5] = -0.2;
        let r = class_residuals(&dict, &z, &y);
        let full = (&y - dict.atoms() * &z).norm_squared();
        assert!((r[1] - full).abs() < 1e-12);
    }

    #[test]
    fn src_recovers_training_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dict = Dictionary::new(
            random_matrix(&mut rng, 20, 8),
            &labels(&[("a", 4), ("b", 4)]),
        )
        .unwrap();
        let y: DVector<f64> = dict.atoms().column(5).into();
        let code = src_classify(&dict, &y, 1e-3).unwrap();
        assert_eq!(code.predicted, "b");
        assert_eq!(code.status, SolverStatus::Converged);
    }

    #[test]
    fn src_orthogonal_classes_give_tiny_residual() {
        // Class a spans e1, e2; class b spans e3, e4; y inside span(a).
        let dict = Dictionary::new(
            DenseMatrix::identity(4, 4),
            &labels(&[("a", 2), ("b", 2)]),
        )
        .unwrap();
        let y = DVector::from_vec(vec![0.8, 0.6, 0.0, 0.0]);
        let code = src_classify(&dict, &y, 1e-4).unwrap();
        assert_eq!(code.predicted, "a");
        assert!(code.residuals[0] < 1e-6, "r_a = {}", code.residuals[0]);
    }

    #[test]
    fn src_residual_tie_breaks_to_earlier_class() {
        // y is equidistant from the two single-atom classes by symmetry.
        let mut d = DenseMatrix::zeros(2, 2);
        d.set_column(0, &DVector::from_vec(vec![1.0, 0.0]));
        d.set_column(1, &DVector::from_vec(vec![0.0, 1.0]));
        let dict = Dictionary::new(d, &labels(&[("first", 1), ("second", 1)])).unwrap();
        let y = DVector::from_vec(vec![1.0, 1.0]);
        let code = src_classify(&dict, &y, 1e-2).unwrap();
        assert!(
            (code.residuals[0] - code.residuals[1]).abs() < 1e-12,
            "residuals should tie: {:?}",
            code.residuals
        );
        assert_eq!(code.predicted, "first");
    }

    #[test]
    fn src_label_invariant_to_query_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dict = Dictionary::new(
            random_matrix(&mut rng, 12, 10),
            &labels(&[("a", 5), ("b", 5)]),
        )
        .unwrap();
        for _ in 0..10 {
            let y = random_vector(&mut rng, 12);
            let a = src_classify(&dict, &y, 1e-2).unwrap();
            let b = src_classify(&dict, &(37.5 * &y), 1e-2).unwrap();
            assert_eq!(a.predicted, b.predicted);
        }
    }

    #[test]
    fn src_rejects_zero_query() {
        let dict =
            Dictionary::new(DenseMatrix::identity(3, 2), &labels(&[("a", 1), ("b", 1)])).unwrap();
        assert!(matches!(
            src_classify(&dict, &DVector::zeros(3), 1e-2),
            Err(Error::ZeroVector)
        ));
        assert!(matches!(
            nn_classify(&dict, &DVector::zeros(3)),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn nn_finds_exact_atom() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dict = Dictionary::new(
            random_matrix(&mut rng, 10, 6),
            &labels(&[("a", 3), ("b", 3)]),
        )
        .unwrap();
        for j in 0..6 {
            let y: DVector<f64> = dict.atoms().column(j).into();
            let m = nn_classify(&dict, &y).unwrap();
            assert_eq!(m.column, j);
        }
    }

    #[test]
    fn nn_negated_atom_prefers_orthogonal_one() {
        let mut d = DenseMatrix::zeros(2, 2);
        d.set_column(0, &DVector::from_vec(vec![1.0, 0.0]));
        d.set_column(1, &DVector::from_vec(vec![0.0, 1.0]));
        let dict = Dictionary::new(d, &labels(&[("a", 1), ("b", 1)])).unwrap();
        let y = DVector::from_vec(vec![-1.0, 0.0]);
        let m = nn_classify(&dict, &y).unwrap();
        assert_eq!(m.class, "b", "inner products are -1 vs 0");
    }

    #[test]
    fn nn_matches_brute_force_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dict = Dictionary::new(
            random_matrix(&mut rng, 16, 30),
            &labels(&[("a", 10), ("b", 10), ("c", 10)]),
        )
        .unwrap();
        for _ in 0..100 {
            let y = random_vector(&mut rng, 16);
            let normalized = &y / y.norm();
            let mut best = 0;
            let mut best_dist = f64::INFINITY;
            for j in 0..dict.len() {
                let diff = &normalized - &DVector::from(dict.atoms().column(j));
                let dist = diff.norm_squared();
                if dist < best_dist {
                    best_dist = dist;
                    best = j;
                }
            }
            let m = nn_classify(&dict, &y).unwrap();
            assert_eq!(m.column, best);
        }
    }

    #[test]
    fn predictions_invariant_to_reordering_within_class() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let atoms = random_matrix(&mut rng, 12, 9);
        let lab = labels(&[("a", 3), ("b", 3), ("c", 3)]);
        let dict = Dictionary::new(atoms.clone(), &lab).unwrap();

        // Swap the first two class-a columns.
        let mut swapped = atoms.clone();
        let c0: DVector<f64> = atoms.column(0).into();
        let c1: DVector<f64> = atoms.column(1).into();
        swapped.set_column(0, &c1);
        swapped.set_column(1, &c0);
        let dict_swapped = Dictionary::new(swapped, &lab).unwrap();

        for _ in 0..20 {
            let y = random_vector(&mut rng, 12);
            assert_eq!(
                src_classify(&dict, &y, 1e-2).unwrap().predicted,
                src_classify(&dict_swapped, &y, 1e-2).unwrap().predicted
            );
            assert_eq!(
                nn_classify(&dict, &y).unwrap().class,
                nn_classify(&dict_swapped, &y).unwrap().class
            );
        }
    }

    #[test]
    fn dictionary_enforces_label_count_and_classes() {
        let atoms = DenseMatrix::identity(3, 2);
        assert!(Dictionary::new(atoms.clone(), &labels(&[("a", 1)])).is_err());
        let dict = Dictionary::new(atoms, &labels(&[("b", 1), ("a", 1)])).unwrap();
        assert_eq!(dict.class_ids(), &["b".to_string(), "a".to_string()]);
        assert_eq!(dict.col_class(), &[0, 1]);
    }
}
