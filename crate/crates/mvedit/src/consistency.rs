//! Matched-point consistency loss between edited views.
//!
//! For a candidate edit and a set of already-edited neighbor views, the loss
//! walks the precomputed matches and penalizes disagreement at corresponding
//! points: an L1 color term over every match plus a patch-level perceptual
//! term over a seeded subsample of matches. Everything here is differentiable
//! with respect to the candidate image, and the gradient is assembled
//! analytically (bilinear weights for the color term, patch scatter for the
//! perceptual term) so guidance never needs numerical differentiation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::matching::MatchSet;

pub mod perceptual;

pub use perceptual::{PerceptualMetric, PyramidMetric};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConsistencyConfig {
    /// Weight of the perceptual term relative to the L1 term.
    pub lambda_perceptual: f64,
    /// Side length of the square patches fed to the perceptual metric.
    pub patch_size: usize,
    /// How many matches per pair get the (expensive) perceptual term.
    pub perceptual_subsample: usize,
    pub subsample_seed: u64,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        ConsistencyConfig {
            lambda_perceptual: 2.0,
            patch_size: 64,
            perceptual_subsample: 64,
            subsample_seed: 0,
        }
    }
}

impl ConsistencyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_perceptual < 0.0 || !self.lambda_perceptual.is_finite() {
            return Err(Error::InvalidInput(format!(
                "lambda_perceptual must be finite and nonnegative, got {}",
                self.lambda_perceptual
            )));
        }
        if self.patch_size < 8 || self.patch_size % 2 != 0 {
            return Err(Error::InvalidInput(format!(
                "patch_size must be even and at least 8, got {}",
                self.patch_size
            )));
        }
        Ok(())
    }
}

/// Bilinear sample at a continuous point, clamped to the image bounds.
pub fn sample_at(image: &Image, p: (f64, f64)) -> [f64; 3] {
    image.bilinear(p.0, p.1)
}

/// The four (pixel, weight) taps that [`sample_at`] combines, for routing
/// gradients back to pixels.
fn bilinear_taps(image: &Image, p: (f64, f64)) -> [(usize, usize, f64); 4] {
    let x = p.0.clamp(0.0, (image.width() - 1) as f64);
    let y = p.1.clamp(0.0, (image.height() - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(image.width() - 1);
    let y1 = (y0 + 1).min(image.height() - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x1, y0, fx * (1.0 - fy)),
        (x0, y1, (1.0 - fx) * fy),
        (x1, y1, fx * fy),
    ]
}

/// Square `size`-sided crop centered at the rounded center point. The center
/// lands on patch index size/2; out-of-image cells clamp to the border pixel.
/// Pure integer gather, so its adjoint is a plain scatter.
pub fn extract_patch(image: &Image, center: (f64, f64), size: usize) -> Image {
    assert!(size > 0, "patch size must be positive");
    let cx = center.0.round() as i64;
    let cy = center.1.round() as i64;
    let half = size as i64 / 2;
    let max_x = (image.width() - 1) as i64;
    let max_y = (image.height() - 1) as i64;
    Image::from_fn(size, size, |px, py| {
        let sx = (cx - half + px as i64).clamp(0, max_x) as usize;
        let sy = (cy - half + py as i64).clamp(0, max_y) as usize;
        image.get(sx, sy)
    })
}

/// Adds `scale * patch_grad` back into the source-image gradient, reversing
/// the clamped gather of [`extract_patch`].
fn scatter_patch_grad(
    grad: &mut Image,
    patch_grad: &Image,
    center: (f64, f64),
    size: usize,
    scale: f64,
) {
    let cx = center.0.round() as i64;
    let cy = center.1.round() as i64;
    let half = size as i64 / 2;
    let max_x = (grad.width() - 1) as i64;
    let max_y = (grad.height() - 1) as i64;
    for py in 0..size {
        for px in 0..size {
            let sx = (cx - half + px as i64).clamp(0, max_x) as usize;
            let sy = (cy - half + py as i64).clamp(0, max_y) as usize;
            grad.add_at(sx, sy, patch_grad.get(px, py), scale);
        }
    }
}

/// Deterministic choice of which matches get the perceptual term: a partial
/// Fisher-Yates over indices driven only by (seed, len, k), so both loss
/// orientations and repeated runs pick identical indices.
fn subsample_indices(len: usize, k: usize, seed: u64) -> Vec<usize> {
    let k = k.min(len);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..len).collect();
    for i in 0..k {
        let j = i + (rand::Rng::gen_range(&mut rng, 0..(len - i) as u64) as usize);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

fn l1(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|c| (a[c] - b[c]).abs()).sum()
}

/// Consistency loss between two edited views over one match set: the L1 color
/// difference summed over all matches plus `lambda_perceptual` times the
/// perceptual patch distance summed over the seeded subsample.
pub fn consistency_loss(
    edited_a: &Image,
    edited_b: &Image,
    matches: &MatchSet,
    cfg: &ConsistencyConfig,
    metric: &dyn PerceptualMetric,
) -> f64 {
    let mut total = 0.0;
    for m in &matches.matches {
        total += l1(sample_at(edited_a, m.x), sample_at(edited_b, m.y));
    }
    if cfg.lambda_perceptual > 0.0 {
        let mut perceptual = 0.0;
        for &i in &subsample_indices(matches.len(), cfg.perceptual_subsample, cfg.subsample_seed) {
            let m = &matches.matches[i];
            let pa = extract_patch(edited_a, m.x, cfg.patch_size);
            let pb = extract_patch(edited_b, m.y, cfg.patch_size);
            perceptual += metric.distance(&pa, &pb);
        }
        total += cfg.lambda_perceptual * perceptual;
    }
    total
}

/// Sum of [`consistency_loss`] against several neighbors. Every match set must
/// be oriented with the candidate as view a.
pub fn consistency_loss_multi(
    candidate: &Image,
    neighbors: &[(Image, MatchSet)],
    cfg: &ConsistencyConfig,
    metric: &dyn PerceptualMetric,
) -> f64 {
    neighbors
        .iter()
        .map(|(img, ms)| consistency_loss(candidate, img, ms, cfg, metric))
        .sum()
}

/// Exact gradient of [`consistency_loss_multi`] with respect to the candidate
/// pixels, plus the loss value. The L1 subgradient at exact ties is 0.
pub fn consistency_grad(
    candidate: &Image,
    neighbors: &[(Image, MatchSet)],
    cfg: &ConsistencyConfig,
    metric: &dyn PerceptualMetric,
) -> (f64, Image) {
    let mut loss = 0.0;
    let mut grad = Image::zeros(candidate.height(), candidate.width());
    for (neighbor, matches) in neighbors {
        for m in &matches.matches {
            let ca = sample_at(candidate, m.x);
            let cb = sample_at(neighbor, m.y);
            loss += l1(ca, cb);
            let sign = [
                (ca[0] - cb[0]).signum() * ((ca[0] != cb[0]) as i32 as f64),
                (ca[1] - cb[1]).signum() * ((ca[1] != cb[1]) as i32 as f64),
                (ca[2] - cb[2]).signum() * ((ca[2] != cb[2]) as i32 as f64),
            ];
            for (x, y, w) in bilinear_taps(candidate, m.x) {
                grad.add_at(x, y, sign, w);
            }
        }
        if cfg.lambda_perceptual > 0.0 {
            for &i in &subsample_indices(matches.len(), cfg.perceptual_subsample, cfg.subsample_seed)
            {
                let m = &matches.matches[i];
                let pa = extract_patch(candidate, m.x, cfg.patch_size);
                let pb = extract_patch(neighbor, m.y, cfg.patch_size);
                let (d, pgrad) = metric.distance_grad(&pa, &pb);
                loss += cfg.lambda_perceptual * d;
                scatter_patch_grad(&mut grad, &pgrad, m.x, cfg.patch_size, cfg.lambda_perceptual);
            }
        }
    }
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::Match;
    use rand::{Rng, SeedableRng};

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, |_, _| [rng.gen(), rng.gen(), rng.gen()])
    }

    fn random_matches(n: usize, h: usize, w: usize, seed: u64) -> MatchSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let span_x = (w - 1) as f64;
        let span_y = (h - 1) as f64;
        MatchSet {
            view_a: 0,
            view_b: 1,
            matches: (0..n)
                .map(|_| Match {
                    x: (rng.gen::<f64>() * span_x, rng.gen::<f64>() * span_y),
                    y: (rng.gen::<f64>() * span_x, rng.gen::<f64>() * span_y),
                    certainty: 1.0,
                })
                .collect(),
        }
    }

    fn small_cfg() -> ConsistencyConfig {
        ConsistencyConfig { patch_size: 8, ..ConsistencyConfig::default() }
    }

    #[test]
    fn sample_at_matches_the_four_term_formula() {
        let img = random_image(9, 7, 1);
        let (x, y) = (3.37, 5.81);
        let got = sample_at(&img, (x, y));
        let (x0, y0) = (3usize, 5usize);
        let (fx, fy) = (x - 3.0, y - 5.0);
        for c in 0..3 {
            let expect = (1.0 - fx) * (1.0 - fy) * img.get(x0, y0)[c]
                + fx * (1.0 - fy) * img.get(x0 + 1, y0)[c]
                + (1.0 - fx) * fy * img.get(x0, y0 + 1)[c]
                + fx * fy * img.get(x0 + 1, y0 + 1)[c];
            assert!((got[c] - expect).abs() < 1e-14);
        }
        // Clamped outside the bounds.
        assert_eq!(sample_at(&img, (-5.0, 100.0)), img.get(0, 8));
    }

    #[test]
    fn extract_patch_equals_naive_clamped_gather() {
        let img = random_image(12, 10, 2);
        let center = (1.4, 10.6);
        let size = 6;
        let patch = extract_patch(&img, center, size);
        let (cx, cy) = (1i64, 11i64);
        for py in 0..size {
            for px in 0..size {
                let sx = (cx - 3 + px as i64).clamp(0, 9) as usize;
                let sy = (cy - 3 + py as i64).clamp(0, 11) as usize;
                assert_eq!(patch.get(px, py), img.get(sx, sy));
            }
        }
    }

    #[test]
    fn identical_images_have_zero_loss_and_swapping_is_symmetric() {
        let img = random_image(16, 16, 3);
        let other = random_image(16, 16, 4);
        let ms = random_matches(25, 16, 16, 5);
        let cfg = small_cfg();
        let metric = PyramidMetric::default();
        assert_eq!(consistency_loss(&img, &img, &ms_self(&ms), &cfg, &metric), 0.0);

        let forward = consistency_loss(&img, &other, &ms, &cfg, &metric);
        let backward = consistency_loss(&other, &img, &ms.reversed(), &cfg, &metric);
        assert!((forward - backward).abs() < 1e-12);
        assert!(forward > 0.0);
    }

    /// Matches that relate an image to itself point-for-point.
    fn ms_self(ms: &MatchSet) -> MatchSet {
        MatchSet {
            view_a: 0,
            view_b: 0,
            matches: ms
                .matches
                .iter()
                .map(|m| Match { x: m.x, y: m.x, certainty: 1.0 })
                .collect(),
        }
    }

    #[test]
    fn empty_match_set_gives_zero() {
        let img = random_image(16, 16, 6);
        let ms = MatchSet { view_a: 0, view_b: 1, matches: vec![] };
        let metric = PyramidMetric::default();
        assert_eq!(consistency_loss(&img, &img, &ms, &small_cfg(), &metric), 0.0);
        let (loss, grad) = consistency_grad(&img, &[(img.clone(), ms)], &small_cfg(), &metric);
        assert_eq!(loss, 0.0);
        assert_eq!(grad.squared_norm(), 0.0);
    }

    #[test]
    fn loss_is_monotone_in_lambda() {
        let a = random_image(16, 16, 7);
        let b = random_image(16, 16, 8);
        let ms = random_matches(20, 16, 16, 9);
        let metric = PyramidMetric::default();
        let mut prev = -1.0;
        for lambda in [0.0, 0.5, 1.0, 2.0, 4.0] {
            let cfg = ConsistencyConfig { lambda_perceptual: lambda, ..small_cfg() };
            let loss = consistency_loss(&a, &b, &ms, &cfg, &metric);
            assert!(loss >= prev);
            prev = loss;
        }
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        let candidate = random_image(12, 12, 10);
        let n1 = random_image(12, 12, 11);
        let n2 = random_image(12, 12, 12);
        let neighbors = vec![
            (n1, random_matches(8, 12, 12, 13)),
            (n2, random_matches(6, 12, 12, 14)),
        ];
        let cfg = small_cfg();
        let metric = PyramidMetric::default();
        let (_, grad) = consistency_grad(&candidate, &neighbors, &cfg, &metric);

        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut max_rel = 0.0f64;
        for _ in 0..40 {
            let x = rng.gen_range(0..12);
            let y = rng.gen_range(0..12);
            let c = rng.gen_range(0..3);
            let flat = (y * 12 + x) * 3 + c;
            let mut plus = candidate.clone();
            plus.data_mut()[flat] += h;
            let mut minus = candidate.clone();
            minus.data_mut()[flat] -= h;
            let fd = (consistency_loss_multi(&plus, &neighbors, &cfg, &metric)
                - consistency_loss_multi(&minus, &neighbors, &cfg, &metric))
                / (2.0 * h);
            let g = grad.data()[flat];
            let denom = fd.abs().max(1e-6);
            max_rel = max_rel.max((fd - g).abs() / denom);
        }
        assert!(max_rel < 1e-4, "max relative FD error {max_rel}");
    }

    #[test]
    fn perceptual_subsample_is_capped_and_seed_stable() {
        let a = subsample_indices(100, 10, 3);
        let b = subsample_indices(100, 10, 3);
        let c = subsample_indices(100, 10, 4);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(subsample_indices(5, 64, 0).len(), 5);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), a.len(), "subsample must not repeat indices");
    }
}
