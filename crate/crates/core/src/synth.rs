//! Procedural glyph corpora for desk-scale experiments: stroke-and-arc
//! renders of digits and a letter subset, with per-image affine jitter and
//! configurable Gaussian plus salt-and-pepper noise. Generation is fully
//! reproducible from a seed — every image draws from its own counter-mode
//! stream, so results are independent of generation order.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::imageio::{self, GrayImage};
use crate::pipeline::{CorpusManifest, ManifestEntry, Split};

/// A primitive glyph stroke in the unit square (x right, y down).
#[derive(Debug, Clone, Copy)]
enum Stroke {
    /// Line segment between two points.
    Line { from: (f64, f64), to: (f64, f64) },
    /// Circular arc: `center + r(cos t, sin t)` for `t` sweeping from
    /// `start_deg` through `start_deg + sweep_deg` (degrees, y-down frame,
    /// so 90 points down the image). A sweep of 360 or more is a full
    /// circle.
    Arc {
        center: (f64, f64),
        radius: f64,
        start_deg: f64,
        sweep_deg: f64,
    },
}

fn line(x0: f64, y0: f64, x1: f64, y1: f64) -> Stroke {
    Stroke::Line {
        from: (x0, y0),
        to: (x1, y1),
    }
}

fn arc(cx: f64, cy: f64, radius: f64, start_deg: f64, sweep_deg: f64) -> Stroke {
    Stroke::Arc {
        center: (cx, cy),
        radius,
        start_deg,
        sweep_deg,
    }
}

fn circle(cx: f64, cy: f64, radius: f64) -> Stroke {
    arc(cx, cy, radius, 0.0, 360.0)
}

/// Distance from `p` to the stroke.
fn stroke_distance(stroke: &Stroke, p: (f64, f64)) -> f64 {
    match *stroke {
        Stroke::Line { from, to } => {
            let (dx, dy) = (to.0 - from.0, to.1 - from.1);
            let len_sq = dx * dx + dy * dy;
            let t = if len_sq == 0.0 {
                0.0
            } else {
                (((p.0 - from.0) * dx + (p.1 - from.1) * dy) / len_sq).clamp(0.0, 1.0)
            };
            let (nx, ny) = (from.0 + t * dx, from.1 + t * dy);
            ((p.0 - nx).powi(2) + (p.1 - ny).powi(2)).sqrt()
        }
        Stroke::Arc {
            center,
            radius,
            start_deg,
            sweep_deg,
        } => {
            let (vx, vy) = (p.0 - center.0, p.1 - center.1);
            let dist_center = (vx * vx + vy * vy).sqrt();
            if sweep_deg >= 360.0 {
                return (dist_center - radius).abs();
            }
            let angle = vy.atan2(vx).to_degrees();
            let offset = (angle - start_deg).rem_euclid(360.0);
            if offset <= sweep_deg {
                (dist_center - radius).abs()
            } else {
                let endpoint = |deg: f64| {
                    let t = deg.to_radians();
                    (center.0 + radius * t.cos(), center.1 + radius * t.sin())
                };
                let a = endpoint(start_deg);
                let b = endpoint(start_deg + sweep_deg);
                let da = ((p.0 - a.0).powi(2) + (p.1 - a.1).powi(2)).sqrt();
                let db = ((p.0 - b.0).powi(2) + (p.1 - b.1).powi(2)).sqrt();
                da.min(db)
            }
        }
    }
}

/// Strokes for one glyph, or `None` if the name is not in the repertoire.
fn glyph_strokes(name: &str) -> Option<Vec<Stroke>> {
    let strokes = match name {
        "0" => vec![circle(0.5, 0.5, 0.28)],
        "1" => vec![line(0.5, 0.15, 0.5, 0.85), line(0.36, 0.29, 0.5, 0.15)],
        "2" => vec![
            arc(0.5, 0.34, 0.21, 195.0, 165.0),
            line(0.69, 0.42, 0.26, 0.85),
            line(0.26, 0.85, 0.74, 0.85),
        ],
        "3" => vec![
            arc(0.47, 0.325, 0.175, 250.0, 220.0),
            arc(0.47, 0.665, 0.19, 250.0, 220.0),
        ],
        "4" => vec![
            line(0.62, 0.15, 0.25, 0.62),
            line(0.25, 0.62, 0.78, 0.62),
            line(0.62, 0.15, 0.62, 0.85),
        ],
        "5" => vec![
            line(0.72, 0.15, 0.3, 0.15),
            line(0.3, 0.15, 0.3, 0.47),
            arc(0.46, 0.655, 0.19, 230.0, 240.0),
        ],
        "6" => vec![arc(0.75, 0.55, 0.42, 200.0, 55.0), circle(0.48, 0.63, 0.2)],
        "7" => vec![
            line(0.26, 0.16, 0.74, 0.16),
            line(0.74, 0.16, 0.4, 0.85),
            line(0.36, 0.5, 0.62, 0.5),
        ],
        "8" => vec![circle(0.5, 0.33, 0.165), circle(0.5, 0.665, 0.19)],
        "9" => vec![arc(0.25, 0.45, 0.45, 5.0, 60.0), circle(0.52, 0.37, 0.2)],
        "A" => vec![
            line(0.5, 0.15, 0.27, 0.85),
            line(0.5, 0.15, 0.73, 0.85),
            line(0.36, 0.58, 0.64, 0.58),
        ],
        "C" => vec![arc(0.5, 0.5, 0.3, 50.0, 260.0)],
        "E" => vec![
            line(0.3, 0.15, 0.3, 0.85),
            line(0.3, 0.15, 0.72, 0.15),
            line(0.3, 0.5, 0.66, 0.5),
            line(0.3, 0.85, 0.72, 0.85),
        ],
        "F" => vec![
            line(0.3, 0.15, 0.3, 0.85),
            line(0.3, 0.15, 0.72, 0.15),
            line(0.3, 0.5, 0.66, 0.5),
        ],
        "H" => vec![
            line(0.3, 0.15, 0.3, 0.85),
            line(0.7, 0.15, 0.7, 0.85),
            line(0.3, 0.5, 0.7, 0.5),
        ],
        "I" => vec![
            line(0.5, 0.15, 0.5, 0.85),
            line(0.35, 0.15, 0.65, 0.15),
            line(0.35, 0.85, 0.65, 0.85),
        ],
        "J" => vec![
            line(0.62, 0.15, 0.62, 0.68),
            arc(0.47, 0.68, 0.15, 0.0, 180.0),
            line(0.45, 0.15, 0.78, 0.15),
        ],
        "L" => vec![line(0.32, 0.15, 0.32, 0.85), line(0.32, 0.85, 0.72, 0.85)],
        "N" => vec![
            line(0.3, 0.15, 0.3, 0.85),
            line(0.7, 0.15, 0.7, 0.85),
            line(0.3, 0.15, 0.7, 0.85),
        ],
        "O" => vec![circle(0.5, 0.5, 0.33)],
        "P" => vec![line(0.32, 0.15, 0.32, 0.85), arc(0.32, 0.35, 0.2, 270.0, 180.0)],
        "T" => vec![line(0.25, 0.15, 0.75, 0.15), line(0.5, 0.15, 0.5, 0.85)],
        "U" => vec![
            line(0.3, 0.15, 0.3, 0.6),
            line(0.7, 0.15, 0.7, 0.6),
            arc(0.5, 0.6, 0.2, 0.0, 180.0),
        ],
        "V" => vec![line(0.27, 0.15, 0.5, 0.85), line(0.73, 0.15, 0.5, 0.85)],
        "X" => vec![line(0.28, 0.15, 0.72, 0.85), line(0.72, 0.15, 0.28, 0.85)],
        "Y" => vec![
            line(0.28, 0.15, 0.5, 0.48),
            line(0.72, 0.15, 0.5, 0.48),
            line(0.5, 0.48, 0.5, 0.85),
        ],
        "Z" => vec![
            line(0.28, 0.15, 0.72, 0.15),
            line(0.72, 0.15, 0.28, 0.85),
            line(0.28, 0.85, 0.72, 0.85),
        ],
        _ => return None,
    };
    Some(strokes)
}

/// Names of every glyph the generator can render, digits first.
pub fn glyph_names() -> Vec<&'static str> {
    vec![
        "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "A", "C", "E", "F", "H", "I", "J", "L",
        "N", "O", "P", "T", "U", "V", "X", "Y", "Z",
    ]
}

/// Half-width of glyph strokes in unit coordinates (~2 px at side 32).
const STROKE_HALF_WIDTH: f64 = 0.055;

/// One image's geometric perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlyphJitter {
    /// Uniform scale factor about the glyph center.
    pub scale: f64,
    /// Rotation about the glyph center, degrees.
    pub rotation_deg: f64,
    /// Translation in pixels.
    pub dx_px: f64,
    /// Translation in pixels.
    pub dy_px: f64,
}

impl GlyphJitter {
    pub const NONE: GlyphJitter = GlyphJitter {
        scale: 1.0,
        rotation_deg: 0.0,
        dx_px: 0.0,
        dy_px: 0.0,
    };

    /// Samples jitter uniformly from the generator's ranges: scale within
    /// ±10%, rotation within ±10 degrees, translation within ±2 px.
    fn sample<R: Rng>(rng: &mut R) -> Self {
        GlyphJitter {
            scale: rng.gen_range(0.9..=1.1),
            rotation_deg: rng.gen_range(-10.0..=10.0),
            dx_px: rng.gen_range(-2.0..=2.0),
            dy_px: rng.gen_range(-2.0..=2.0),
        }
    }
}

/// Renders a glyph as dark ink on a white background, the polarity of
/// photographed text. A bright background is itself rank-one, which is
/// what lets the decomposition-based denoiser separate strokes from
/// speckle noise instead of mistaking the strokes for noise.
///
/// The jitter transform is applied about the image center; stroke width
/// scales with the glyph. Edges are antialiased over one pixel.
pub fn render_glyph(name: &str, side: usize, jitter: &GlyphJitter) -> Result<GrayImage> {
    let strokes = glyph_strokes(name).ok_or_else(|| {
        Error::InvalidInput(format!(
            "unknown glyph {name:?}; available: {}",
            glyph_names().join(" ")
        ))
    })?;
    if side == 0 {
        return Err(Error::InvalidInput("glyph side must be positive".into()));
    }
    if jitter.scale <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "glyph scale must be positive, got {}",
            jitter.scale
        )));
    }
    let inv_scale = 1.0 / jitter.scale;
    let (sin, cos) = (-jitter.rotation_deg).to_radians().sin_cos();
    let px = 1.0 / side as f64;
    let (tx, ty) = (jitter.dx_px * px, jitter.dy_px * px);
    let aa = px;

    let mut pixels = vec![0.0; side * side];
    for r in 0..side {
        for c in 0..side {
            // Pull the pixel center back through the jitter transform into
            // glyph space; distances divide by the scale there, which is
            // exactly the similarity-transform metric.
            let x = (c as f64 + 0.5) * px - 0.5 - tx;
            let y = (r as f64 + 0.5) * px - 0.5 - ty;
            let q = (
                0.5 + inv_scale * (cos * x - sin * y),
                0.5 + inv_scale * (sin * x + cos * y),
            );
            let dist = strokes
                .iter()
                .map(|s| stroke_distance(s, q))
                .fold(f64::INFINITY, f64::min);
            let coverage = ((STROKE_HALF_WIDTH - dist) * jitter.scale / aa + 0.5).clamp(0.0, 1.0);
            pixels[r * side + c] = 1.0 - coverage;
        }
    }
    Ok(GrayImage::new(side, side, pixels)?.with_label(name))
}

/// Noise applied to every generated image.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Standard deviation of additive Gaussian noise (clamped to [0,1]).
    pub gaussian_sigma: f64,
    /// Per-pixel probability of being overwritten with 0 or 1.
    pub salt_pepper: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            gaussian_sigma: 0.0,
            salt_pepper: 0.0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.gaussian_sigma.is_finite() || self.gaussian_sigma < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "gaussian_sigma must be finite and nonnegative, got {}",
                self.gaussian_sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.salt_pepper) {
            return Err(Error::InvalidConfig(format!(
                "salt_pepper must lie in [0,1], got {}",
                self.salt_pepper
            )));
        }
        Ok(())
    }
}

/// Applies the configured noise in place, returning the number of pixels
/// hit by salt-and-pepper corruption.
fn apply_noise<R: Rng>(img: &mut GrayImage, noise: &NoiseSpec, rng: &mut R) -> usize {
    if noise.gaussian_sigma > 0.0 {
        let normal = Normal::new(0.0, noise.gaussian_sigma).expect("validated sigma");
        for v in img.pixels_mut() {
            *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
        }
    }
    let mut corrupted = 0;
    if noise.salt_pepper > 0.0 {
        for v in img.pixels_mut() {
            if rng.gen::<f64>() < noise.salt_pepper {
                *v = if rng.gen::<bool>() { 1.0 } else { 0.0 };
                corrupted += 1;
            }
        }
    }
    corrupted
}

/// Everything a generation run produced.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    /// Manifest with paths resolved under the output directory.
    pub manifest: CorpusManifest,
    /// Per-image count of salt-and-pepper-corrupted pixels, in manifest
    /// entry order.
    pub corrupted_counts: Vec<usize>,
    /// Path of the manifest CSV written alongside the images.
    pub manifest_path: PathBuf,
}

/// Generation parameters for [`synth_corpus`].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    /// Glyph names to render, one class per glyph.
    pub classes: Vec<String>,
    /// Total images per class; the first half (rounded up) is the train
    /// split, the rest the test split.
    pub per_class: usize,
    /// Square image side in pixels.
    pub side: usize,
    pub noise: NoiseSpec,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: (0..10).map(|d| d.to_string()).collect(),
            per_class: 10,
            side: 32,
            noise: NoiseSpec::default(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::InvalidConfig("classes must be nonempty".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for class in &self.classes {
            if glyph_strokes(class).is_none() {
                return Err(Error::InvalidInput(format!(
                    "unknown glyph {class:?}; available: {}",
                    glyph_names().join(" ")
                )));
            }
            if !seen.insert(class) {
                return Err(Error::InvalidConfig(format!("duplicate class {class:?}")));
            }
        }
        if self.per_class < 2 {
            return Err(Error::InvalidConfig(format!(
                "per_class must be at least 2 (one train and one test image), got {}",
                self.per_class
            )));
        }
        if self.side == 0 {
            return Err(Error::InvalidConfig("side must be positive".into()));
        }
        self.noise.validate()
    }
}

/// Renders image `index` of `class` exactly as [`synth_corpus`] would,
/// returning the image and its corrupted-pixel count.
///
/// Each image draws from stream `class_idx * per_class + index` of a
/// counter-mode generator keyed by `seed`, so any single image can be
/// reproduced without generating the rest of the corpus.
pub fn synth_image(
    spec: &SynthSpec,
    class_idx: usize,
    index: usize,
    seed: u64,
) -> Result<(GrayImage, usize)> {
    spec.validate()?;
    if class_idx >= spec.classes.len() || index >= spec.per_class {
        return Err(Error::InvalidInput(format!(
            "image ({class_idx}, {index}) outside the {} x {} corpus",
            spec.classes.len(),
            spec.per_class
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((class_idx * spec.per_class + index) as u64);
    let jitter = GlyphJitter::sample(&mut rng);
    let mut img = render_glyph(&spec.classes[class_idx], spec.side, &jitter)?;
    let corrupted = apply_noise(&mut img, &spec.noise, &mut rng);
    Ok((img, corrupted))
}

/// Generates the corpus under `dir`: one PGM per image plus
/// `manifest.csv`. Byte-identical for identical spec and seed.
pub fn synth_corpus(dir: &Path, spec: &SynthSpec, seed: u64) -> Result<SynthCorpus> {
    spec.validate()?;
    std::fs::create_dir_all(dir)?;
    let train_count = spec.per_class.div_ceil(2);
    let mut entries_rel = Vec::new();
    let mut entries_abs = Vec::new();
    let mut corrupted_counts = Vec::new();
    for (class_idx, class) in spec.classes.iter().enumerate() {
        for index in 0..spec.per_class {
            let (img, corrupted) = synth_image(spec, class_idx, index, seed)?;
            let name = format!("{class}_{index:03}.pgm");
            let path = dir.join(&name);
            imageio::write_pgm(&img, &path)?;
            let split = if index < train_count {
                Split::Train
            } else {
                Split::Test
            };
            entries_rel.push(ManifestEntry {
                path: PathBuf::from(&name),
                class: class.clone(),
                split,
            });
            entries_abs.push(ManifestEntry {
                path,
                class: class.clone(),
                split,
            });
            corrupted_counts.push(corrupted);
        }
    }
    let manifest_path = dir.join("manifest.csv");
    let relative = CorpusManifest::new(entries_rel, spec.side)?;
    let file = std::fs::File::create(&manifest_path)?;
    relative.write_csv(file)?;
    Ok(SynthCorpus {
        manifest: CorpusManifest::new(entries_abs, spec.side)?,
        corrupted_counts,
        manifest_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rpca::{self, RpcaConfig};

    #[test]
    fn every_listed_glyph_renders_with_ink() {
        for name in glyph_names() {
            let img = render_glyph(name, 32, &GlyphJitter::NONE).unwrap();
            let ink: f64 = img.pixels().iter().map(|v| 1.0 - v).sum();
            assert!(
                ink > 20.0,
                "glyph {name} renders almost empty: total ink {ink}"
            );
            let solid: usize = img.pixels().iter().filter(|&&v| v == 0.0).count();
            assert!(solid > 10, "glyph {name} has no solid stroke interior");
            let background: usize = img.pixels().iter().filter(|&&v| v == 1.0).count();
            assert!(background > 512, "glyph {name} floods the background");
            assert!(img.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn unknown_glyph_is_rejected_with_the_repertoire() {
        let err = render_glyph("!", 32, &GlyphJitter::NONE).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('!') && msg.contains("available"));
    }

    #[test]
    fn glyphs_are_pairwise_distinct() {
        let names = glyph_names();
        let renders: Vec<GrayImage> = names
            .iter()
            .map(|n| render_glyph(n, 32, &GlyphJitter::NONE).unwrap())
            .collect();
        for i in 0..renders.len() {
            for j in (i + 1)..renders.len() {
                let diff: f64 = renders[i]
                    .pixels()
                    .iter()
                    .zip(renders[j].pixels())
                    .map(|(a, b)| (a - b).abs())
                    .sum();
                // 0 vs O is the closest pair by design; even it differs in
                // tens of pixels.
                assert!(
                    diff > 10.0,
                    "glyphs {} and {} nearly coincide (l1 diff {diff})",
                    names[i],
                    names[j]
                );
            }
        }
    }

    #[test]
    fn jitter_moves_ink_where_requested() {
        let base = render_glyph("T", 32, &GlyphJitter::NONE).unwrap();
        let shifted = render_glyph(
            "T",
            32,
            &GlyphJitter {
                dx_px: 2.0,
                ..GlyphJitter::NONE
            },
        )
        .unwrap();
        // The shifted render equals the base translated right by 2 px.
        let mut worst: f64 = 0.0;
        for r in 0..32 {
            for c in 2..32 {
                worst = worst.max((shifted.get(r, c) - base.get(r, c - 2)).abs());
            }
        }
        assert!(worst < 1e-9, "translation jitter is not a pure shift: {worst}");
    }

    #[test]
    fn rotation_jitter_matches_rotating_the_glyph() {
        // Rotating the render by 90 degrees should match rendering the
        // glyph with a 90-degree jitter (pure geometry, no resampling
        // error at quarter turns).
        let quarter = render_glyph(
            "L",
            32,
            &GlyphJitter {
                rotation_deg: 90.0,
                ..GlyphJitter::NONE
            },
        )
        .unwrap();
        let base = render_glyph("L", 32, &GlyphJitter::NONE).unwrap();
        let mut worst: f64 = 0.0;
        for r in 0..32 {
            for c in 0..32 {
                // Image-frame rotation by +90 degrees (y down) maps source
                // (r, c) to destination (c, 31 - r).
                worst = worst.max((quarter.get(c, 31 - r) - base.get(r, c)).abs());
            }
        }
        assert!(worst < 1e-9, "rotation jitter disagrees with rotation: {worst}");
    }

    #[test]
    fn scale_jitter_thickens_strokes() {
        let thin = render_glyph(
            "I",
            32,
            &GlyphJitter {
                scale: 0.9,
                ..GlyphJitter::NONE
            },
        )
        .unwrap();
        let thick = render_glyph(
            "I",
            32,
            &GlyphJitter {
                scale: 1.1,
                ..GlyphJitter::NONE
            },
        )
        .unwrap();
        let ink = |img: &GrayImage| img.pixels().iter().map(|v| 1.0 - v).sum::<f64>();
        assert!(ink(&thick) > ink(&thin) * 1.1);
    }

    #[test]
    fn corpus_is_byte_identical_across_runs() {
        let spec = SynthSpec {
            classes: vec!["0".into(), "7".into(), "X".into()],
            per_class: 4,
            noise: NoiseSpec {
                gaussian_sigma: 0.1,
                salt_pepper: 0.05,
            },
            ..SynthSpec::default()
        };
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let a = synth_corpus(dir_a.path(), &spec, 42).unwrap();
        let b = synth_corpus(dir_b.path(), &spec, 42).unwrap();
        assert_eq!(a.corrupted_counts, b.corrupted_counts);
        for (ea, eb) in a.manifest.entries.iter().zip(&b.manifest.entries) {
            assert_eq!(ea.class, eb.class);
            assert_eq!(ea.split, eb.split);
            let bytes_a = std::fs::read(&ea.path).unwrap();
            let bytes_b = std::fs::read(&eb.path).unwrap();
            assert_eq!(bytes_a, bytes_b, "{} differs between runs", ea.class);
        }
        let ma = std::fs::read(&a.manifest_path).unwrap();
        let mb = std::fs::read(&b.manifest_path).unwrap();
        assert_eq!(ma, mb);

        let c = synth_corpus(dir_b.path(), &spec, 43).unwrap();
        let changed = a
            .manifest
            .entries
            .iter()
            .zip(&c.manifest.entries)
            .any(|(ea, ec)| std::fs::read(&ea.path).unwrap() != std::fs::read(&ec.path).unwrap());
        assert!(changed, "different seeds must give different corpora");
    }

    #[test]
    fn single_image_reproduction_matches_the_corpus() {
        let spec = SynthSpec {
            classes: vec!["3".into(), "N".into()],
            per_class: 3,
            noise: NoiseSpec {
                gaussian_sigma: 0.05,
                salt_pepper: 0.02,
            },
            ..SynthSpec::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let corpus = synth_corpus(dir.path(), &spec, 7).unwrap();
        for (i, entry) in corpus.manifest.entries.iter().enumerate() {
            let (class_idx, index) = (i / 3, i % 3);
            let (img, corrupted) = synth_image(&spec, class_idx, index, 7).unwrap();
            let from_disk = imageio::load_image(&entry.path).unwrap();
            let worst = img
                .pixels()
                .iter()
                .zip(from_disk.pixels())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            // Disk copies are 8-bit quantized; half a level of headroom.
            assert!(worst <= 0.5 / 255.0 + 1e-12, "entry {i}: {worst}");
            assert_eq!(corrupted, corpus.corrupted_counts[i]);
        }
    }

    #[test]
    fn manifest_counts_and_splits_follow_the_spec() {
        let spec = SynthSpec {
            classes: vec!["A".into(), "Z".into()],
            per_class: 5,
            ..SynthSpec::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let corpus = synth_corpus(dir.path(), &spec, 1).unwrap();
        assert_eq!(corpus.manifest.entries.len(), 10);
        let train: Vec<_> = corpus.manifest.split_entries(Split::Train);
        let test: Vec<_> = corpus.manifest.split_entries(Split::Test);
        // per_class 5 splits 3 train / 2 test per class.
        assert_eq!(train.len(), 6);
        assert_eq!(test.len(), 4);
        // The written manifest reads back with resolved paths.
        let read = CorpusManifest::read_csv(&corpus.manifest_path).unwrap();
        assert_eq!(read.entries.len(), 10);
        assert!(read.entries.iter().all(|e| e.path.exists()));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let base = SynthSpec::default();
        let cases: Vec<(SynthSpec, &str)> = vec![
            (
                SynthSpec {
                    per_class: 1,
                    ..base.clone()
                },
                "per_class below 2",
            ),
            (
                SynthSpec {
                    classes: vec![],
                    ..base.clone()
                },
                "no classes",
            ),
            (
                SynthSpec {
                    classes: vec!["0".into(), "0".into()],
                    ..base.clone()
                },
                "duplicate class",
            ),
            (
                SynthSpec {
                    classes: vec!["%".into()],
                    ..base.clone()
                },
                "unknown glyph",
            ),
            (
                SynthSpec {
                    noise: NoiseSpec {
                        gaussian_sigma: -0.1,
                        salt_pepper: 0.0,
                    },
                    ..base.clone()
                },
                "negative sigma",
            ),
            (
                SynthSpec {
                    noise: NoiseSpec {
                        gaussian_sigma: 0.0,
                        salt_pepper: 1.5,
                    },
                    ..base.clone()
                },
                "fraction above 1",
            ),
        ];
        for (spec, what) in cases {
            assert!(spec.validate().is_err(), "{what} must be rejected");
        }
    }

    #[test]
    fn salt_pepper_counts_follow_binomial_statistics() {
        // 5% corruption on 32x32 is Binomial(1024, 0.05): mean 51.2,
        // standard deviation ~6.97. With a fixed seed the observed counts
        // are deterministic; the bounds below are the 3-sigma band for the
        // mean of 100 draws and a 5-sigma band per draw.
        let spec = SynthSpec {
            classes: vec!["8".into()],
            per_class: 100,
            noise: NoiseSpec {
                gaussian_sigma: 0.0,
                salt_pepper: 0.05,
            },
            ..SynthSpec::default()
        };
        let n = 1024.0_f64;
        let p = 0.05_f64;
        let mean = n * p;
        let sd = (n * p * (1.0 - p)).sqrt();
        let counts: Vec<usize> = (0..100)
            .map(|i| synth_image(&spec, 0, i, 2024).unwrap().1)
            .collect();
        let avg = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
        assert!(
            (avg - mean).abs() <= 3.0 * sd / 100f64.sqrt(),
            "mean corrupted count {avg} too far from {mean}"
        );
        for (i, &count) in counts.iter().enumerate() {
            let z = (count as f64 - mean).abs() / sd;
            assert!(z <= 5.0, "image {i}: corrupted count {count} is {z:.1} sigma out");
        }
    }

    #[test]
    fn clean_renders_pass_the_denoiser_nearly_untouched() {
        // A clean render should not be mistaken for noise: the sparse term
        // of the decomposition stays a small fraction of the image mass.
        // Diagonal-heavy glyphs are the hardest, so they lead the list.
        let config = RpcaConfig::default();
        for name in ["4", "Z", "7", "N", "0", "E", "X"] {
            let img = render_glyph(name, 32, &GlyphJitter::NONE).unwrap();
            let x = img.to_matrix();
            let result = rpca::rpca_decompose(&x, &config).unwrap();
            let e_mass: f64 = result.sparse.iter().map(|v| v.abs()).sum();
            let x_mass: f64 = x.iter().map(|v| v.abs()).sum();
            let ratio = e_mass / x_mass;
            assert!(
                ratio <= 0.05,
                "glyph {name}: sparse term holds {ratio:.3} of the image mass"
            );
        }
    }

    #[test]
    fn gaussian_noise_perturbs_without_saturating() {
        let spec = SynthSpec {
            classes: vec!["H".into()],
            per_class: 2,
            noise: NoiseSpec {
                gaussian_sigma: 0.1,
                salt_pepper: 0.0,
            },
            ..SynthSpec::default()
        };
        let (noisy, corrupted) = synth_image(&spec, 0, 0, 5).unwrap();
        assert_eq!(corrupted, 0, "gaussian noise is not counted as corruption");
        let clean_spec = SynthSpec {
            noise: NoiseSpec::default(),
            ..spec
        };
        let (clean, _) = synth_image(&clean_spec, 0, 0, 5).unwrap();
        let mad: f64 = noisy
            .pixels()
            .iter()
            .zip(clean.pixels())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 1024.0;
        // Mean |N(0, 0.1)| is 0.08; clamping at [0,1] pulls it down for a
        // mostly-black image.
        assert!((0.02..0.12).contains(&mad), "mean perturbation {mad}");
        assert!(noisy.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
