//! Volume and similarity metrics over certified radius vectors, plus the
//! grayscale map export.

use std::path::Path;

use crate::error::{Error, Result};

/// Geometric mean of the radii, the per-feature-comparable volume measure.
pub fn geo_mean_volume(eps: &[f64]) -> Result<f64> {
    check_positive(eps)?;
    let mean_log = eps.iter().map(|e| e.ln()).sum::<f64>() / eps.len() as f64;
    Ok(mean_log.exp())
}

/// Negative log of the box volume, the optimizer's objective.
pub fn neg_log_volume(eps: &[f64]) -> Result<f64> {
    check_positive(eps)?;
    Ok(-eps.iter().map(|e| e.ln()).sum::<f64>())
}

fn check_positive(eps: &[f64]) -> Result<()> {
    if eps.is_empty() {
        return Err(Error::InvalidArg("empty radius vector".into()));
    }
    if eps.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
        return Err(Error::InvalidArg("radii must be positive and finite".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityStats {
    pub mean_cosine: f64,
    pub min_cosine: f64,
    pub pair_count: usize,
}

/// Mean and minimum cosine similarity over all unordered vector pairs.
pub fn cosine_stats(vectors: &[Vec<f64>]) -> Result<SimilarityStats> {
    if vectors.len() < 2 {
        return Err(Error::InvalidArg("need at least two vectors".into()));
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::DimMismatch("vectors differ in length".into()));
    }
    let norms: Vec<f64> = vectors.iter().map(|v| crate::linalg::norm2(v)).collect();
    if norms.iter().any(|&n| n <= 0.0) {
        return Err(Error::InvalidArg("zero-norm vector".into()));
    }
    let mut sum = 0.0;
    let mut min = f64::INFINITY;
    let mut count = 0usize;
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            let c = crate::linalg::dot(&vectors[i], &vectors[j]) / (norms[i] * norms[j]);
            sum += c;
            min = min.min(c);
            count += 1;
        }
    }
    Ok(SimilarityStats { mean_cosine: sum / count as f64, min_cosine: min, pair_count: count })
}

/// Gray value of one radius: clamp(1 - scale * eps, 0, 1) quantized to 0..=255
/// rounding half up.
fn quantize(eps: f64, scale: f64) -> u8 {
    let v = (1.0 - scale * eps).clamp(0.0, 1.0);
    (v * 255.0 + 0.5).floor() as u8
}

/// Renders the radius vector as a plain-text PGM image plus a CSV of the raw
/// values, row-major.
pub fn render_bounding_map(
    eps: &[f64],
    width: usize,
    height: usize,
    scale: f64,
) -> Result<(String, String)> {
    if eps.len() != width * height {
        return Err(Error::DimMismatch(format!(
            "{} radii cannot fill a {width}x{height} map",
            eps.len()
        )));
    }
    let mut pgm = format!("P2\n{width} {height}\n255\n");
    let mut csv = String::new();
    for row in eps.chunks(width) {
        let pixels: Vec<String> = row.iter().map(|&e| quantize(e, scale).to_string()).collect();
        pgm.push_str(&pixels.join(" "));
        pgm.push('\n');
        let raw: Vec<String> = row.iter().map(|e| e.to_string()).collect();
        csv.push_str(&raw.join(","));
        csv.push('\n');
    }
    Ok((pgm, csv))
}

/// Writes the PGM to `path` and the raw values next to it with a `.csv`
/// extension.
pub fn export_bounding_map(
    eps: &[f64],
    width: usize,
    height: usize,
    scale: f64,
    path: impl AsRef<Path>,
) -> Result<()> {
    let (pgm, csv) = render_bounding_map(eps, width, height, scale)?;
    let path = path.as_ref();
    std::fs::write(path, pgm)?;
    std::fs::write(path.with_extension("csv"), csv)?;
    Ok(())
}
