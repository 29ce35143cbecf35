//! Patch-level perceptual distance.
//!
//! The default metric is a small filter-bank stand-in for learned perceptual
//! distances: a 3-level Gaussian pyramid where each level compares raw values
//! plus horizontal and vertical finite differences, mean-squared per level and
//! summed across levels. It is symmetric, zero exactly on equal patches, and
//! smooth, with a closed-form gradient (the pyramid is linear, so the chain
//! rule is a pair of transposed blur/subsample passes). Anything implementing
//! [`PerceptualMetric`] can replace it, e.g. a learned metric behind FFI.

use crate::image::Image;

pub trait PerceptualMetric: Send + Sync {
    /// Nonnegative, symmetric, zero iff the patches are equal.
    fn distance(&self, a: &Image, b: &Image) -> f64;

    /// Distance plus its gradient with respect to `a`. Symmetry of the
    /// metric lets callers swap arguments for the gradient in `b`.
    fn distance_grad(&self, a: &Image, b: &Image) -> (f64, Image);
}

/// Binomial approximation of a Gaussian, normalized to sum 1.
const KERNEL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

fn blur_pass(src: &Image, horizontal: bool) -> Image {
    let (h, w) = (src.height(), src.width());
    let mut out = Image::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for (k, &wk) in KERNEL.iter().enumerate() {
                let off = k as i64 - 2;
                let (sx, sy) = if horizontal {
                    ((x as i64 + off).clamp(0, w as i64 - 1) as usize, y)
                } else {
                    (x, (y as i64 + off).clamp(0, h as i64 - 1) as usize)
                };
                let p = src.get(sx, sy);
                for c in 0..3 {
                    acc[c] += wk * p[c];
                }
            }
            out.put(x, y, acc);
        }
    }
    out
}

/// Adjoint of [`blur_pass`]: scatters each output tap back to its clamped
/// source position. Not identical to the blur because border weights pile up.
fn blur_pass_transpose(grad_out: &Image, horizontal: bool) -> Image {
    let (h, w) = (grad_out.height(), grad_out.width());
    let mut out = Image::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let g = grad_out.get(x, y);
            for (k, &wk) in KERNEL.iter().enumerate() {
                let off = k as i64 - 2;
                let (sx, sy) = if horizontal {
                    ((x as i64 + off).clamp(0, w as i64 - 1) as usize, y)
                } else {
                    (x, (y as i64 + off).clamp(0, h as i64 - 1) as usize)
                };
                out.add_at(sx, sy, g, wk);
            }
        }
    }
    out
}

fn half(n: usize) -> usize {
    n.div_ceil(2)
}

/// Blur then keep even-indexed rows and columns.
fn downsample(src: &Image) -> Image {
    let blurred = blur_pass(&blur_pass(src, true), false);
    Image::from_fn(half(src.height()), half(src.width()), |x, y| blurred.get(2 * x, 2 * y))
}

/// Adjoint of [`downsample`] back up to the given full size.
fn downsample_transpose(grad_small: &Image, full_h: usize, full_w: usize) -> Image {
    let mut spread = Image::zeros(full_h, full_w);
    for y in 0..grad_small.height() {
        for x in 0..grad_small.width() {
            spread.put(2 * x, 2 * y, grad_small.get(x, y));
        }
    }
    blur_pass_transpose(&blur_pass_transpose(&spread, false), true)
}

/// Mean squared difference of values and of forward finite differences; the
/// three means summed. Returns 0 contributions for dimensions too small to
/// difference.
fn level_distance(a: &Image, b: &Image) -> f64 {
    let (h, w) = (a.height(), a.width());
    let mut value = 0.0;
    for (&va, &vb) in a.data().iter().zip(b.data()) {
        value += (va - vb) * (va - vb);
    }
    value /= (h * w * 3) as f64;

    let mut dx = 0.0;
    if w >= 2 {
        for y in 0..h {
            for x in 0..w - 1 {
                let (pa0, pa1) = (a.get(x, y), a.get(x + 1, y));
                let (pb0, pb1) = (b.get(x, y), b.get(x + 1, y));
                for c in 0..3 {
                    let d = (pa1[c] - pa0[c]) - (pb1[c] - pb0[c]);
                    dx += d * d;
                }
            }
        }
        dx /= (h * (w - 1) * 3) as f64;
    }

    let mut dy = 0.0;
    if h >= 2 {
        for y in 0..h - 1 {
            for x in 0..w {
                let (pa0, pa1) = (a.get(x, y), a.get(x, y + 1));
                let (pb0, pb1) = (b.get(x, y), b.get(x, y + 1));
                for c in 0..3 {
                    let d = (pa1[c] - pa0[c]) - (pb1[c] - pb0[c]);
                    dy += d * d;
                }
            }
        }
        dy /= ((h - 1) * w * 3) as f64;
    }

    value + dx + dy
}

/// Gradient of [`level_distance`] with respect to `a`, same shape as `a`.
fn level_grad(a: &Image, b: &Image) -> Image {
    let (h, w) = (a.height(), a.width());
    let mut g = Image::zeros(h, w);
    let n_val = (h * w * 3) as f64;
    for y in 0..h {
        for x in 0..w {
            let (pa, pb) = (a.get(x, y), b.get(x, y));
            let mut gp = [0.0; 3];
            for c in 0..3 {
                gp[c] = 2.0 * (pa[c] - pb[c]) / n_val;
            }
            g.put(x, y, gp);
        }
    }
    if w >= 2 {
        let n_dx = (h * (w - 1) * 3) as f64;
        for y in 0..h {
            for x in 0..w - 1 {
                let (pa0, pa1) = (a.get(x, y), a.get(x + 1, y));
                let (pb0, pb1) = (b.get(x, y), b.get(x + 1, y));
                let mut r = [0.0; 3];
                for c in 0..3 {
                    r[c] = 2.0 * ((pa1[c] - pa0[c]) - (pb1[c] - pb0[c])) / n_dx;
                }
                g.add_at(x + 1, y, r, 1.0);
                g.add_at(x, y, r, -1.0);
            }
        }
    }
    if h >= 2 {
        let n_dy = ((h - 1) * w * 3) as f64;
        for y in 0..h - 1 {
            for x in 0..w {
                let (pa0, pa1) = (a.get(x, y), a.get(x, y + 1));
                let (pb0, pb1) = (b.get(x, y), b.get(x, y + 1));
                let mut r = [0.0; 3];
                for c in 0..3 {
                    r[c] = 2.0 * ((pa1[c] - pa0[c]) - (pb1[c] - pb0[c])) / n_dy;
                }
                g.add_at(x, y + 1, r, 1.0);
                g.add_at(x, y, r, -1.0);
            }
        }
    }
    g
}

#[derive(Debug, Clone)]
pub struct PyramidMetric {
    pub levels: usize,
}

impl Default for PyramidMetric {
    fn default() -> Self {
        PyramidMetric { levels: 3 }
    }
}

impl PyramidMetric {
    fn pyramid(&self, img: &Image) -> Vec<Image> {
        let mut levels = vec![img.clone()];
        for _ in 1..self.levels {
            levels.push(downsample(levels.last().unwrap()));
        }
        levels
    }
}

impl PerceptualMetric for PyramidMetric {
    fn distance(&self, a: &Image, b: &Image) -> f64 {
        assert!(a.same_shape(b), "patch shapes must match");
        assert!(self.levels >= 1);
        let pa = self.pyramid(a);
        let pb = self.pyramid(b);
        pa.iter().zip(&pb).map(|(la, lb)| level_distance(la, lb)).sum()
    }

    fn distance_grad(&self, a: &Image, b: &Image) -> (f64, Image) {
        assert!(a.same_shape(b), "patch shapes must match");
        let pa = self.pyramid(a);
        let pb = self.pyramid(b);
        let mut value = 0.0;
        // Walk from the coarsest level up, pushing the accumulated gradient
        // through the transposed downsampling at each stage.
        let mut acc: Option<Image> = None;
        for (la, lb) in pa.iter().zip(&pb).rev() {
            value += level_distance(la, lb);
            let mut g = level_grad(la, lb);
            if let Some(coarser) = acc {
                g.axpy(1.0, &downsample_transpose(&coarser, la.height(), la.width()));
            }
            acc = Some(g);
        }
        (value, acc.expect("at least one pyramid level"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, |_, _| [rng.gen(), rng.gen(), rng.gen()])
    }

    #[test]
    fn zero_on_equal_positive_otherwise_symmetric() {
        let m = PyramidMetric::default();
        let a = random_image(8, 8, 1);
        let b = random_image(8, 8, 2);
        assert_eq!(m.distance(&a, &a), 0.0);
        let d_ab = m.distance(&a, &b);
        let d_ba = m.distance(&b, &a);
        assert!(d_ab > 0.0);
        assert_eq!(d_ab, d_ba);
    }

    #[test]
    fn constant_patches_give_sum_of_squared_channel_gaps() {
        // Blur preserves constants and finite differences vanish, so every
        // level contributes mean((a-b)^2) = (dr^2 + dg^2 + db^2) / 3.
        let m = PyramidMetric::default();
        let a = Image::filled(8, 8, 0.0).map(|_| 0.0);
        let mut a = a;
        for y in 0..8 {
            for x in 0..8 {
                a.put(x, y, [0.7, 0.5, 0.2]);
            }
        }
        let b = a.map(|_| 0.0).zip_map(&a, |_, _| 0.0);
        let mut b = b;
        for y in 0..8 {
            for x in 0..8 {
                b.put(x, y, [0.4, 0.5, 0.6]);
            }
        }
        let expect = 3.0 * ((0.3f64 * 0.3) + 0.0 + (0.4 * 0.4)) / 3.0;
        assert!((m.distance(&a, &b) - expect).abs() < 1e-12);
    }

    #[test]
    fn downsample_halves_and_blur_adjoint_holds() {
        let img = random_image(8, 6, 3);
        let d1 = downsample(&img);
        assert_eq!((d1.height(), d1.width()), (4, 3));
        let d2 = downsample(&d1);
        assert_eq!((d2.height(), d2.width()), (2, 2));

        // <D x, y> == <x, D^T y> for random x, y.
        let x = random_image(8, 6, 4);
        let y = random_image(4, 3, 5);
        let lhs = downsample(&x).dot(&y);
        let rhs = x.dot(&downsample_transpose(&y, 8, 6));
        assert!((lhs - rhs).abs() < 1e-12, "adjoint mismatch {lhs} vs {rhs}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = PyramidMetric::default();
        let a = random_image(8, 8, 6);
        let b = random_image(8, 8, 7);
        let (val, grad) = m.distance_grad(&a, &b);
        assert!((val - m.distance(&a, &b)).abs() < 1e-14);

        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..30 {
            let x = rng.gen_range(0..8);
            let y = rng.gen_range(0..8);
            let c = rng.gen_range(0..3);
            let flat = (y * 8 + x) * 3 + c;
            let mut plus = a.clone();
            plus.data_mut()[flat] += h;
            let mut minus = a.clone();
            minus.data_mut()[flat] -= h;
            let fd = (m.distance(&plus, &b) - m.distance(&minus, &b)) / (2.0 * h);
            let g = grad.data()[flat];
            assert!(
                (fd - g).abs() <= 1e-6 + 1e-4 * fd.abs(),
                "fd {fd} vs analytic {g} at {flat}"
            );
        }
    }

    #[test]
    fn odd_sizes_and_tiny_patches_are_handled() {
        let m = PyramidMetric::default();
        let a = random_image(5, 7, 9);
        let b = random_image(5, 7, 10);
        // 5x7 -> 3x4 -> 2x2; all levels still have difference terms.
        assert!(m.distance(&a, &b) > 0.0);
        let a1 = random_image(1, 1, 11);
        let b1 = random_image(1, 1, 12);
        // Single-pixel patches: only value terms contribute.
        assert!(m.distance(&a1, &b1) > 0.0);
        let (_, g) = m.distance_grad(&a1, &b1);
        assert_eq!(g.height(), 1);
    }
}
