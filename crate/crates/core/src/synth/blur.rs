use ndarray::{Array2, Array3};

/// Normalized 1-D Gaussian taps of radius `ceil(2 sigma)`, i.e. `2 ceil(2 sigma) + 1` taps.
/// `sigma <= 0` yields the identity kernel `[1]`.
pub fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (2.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma as f64 * sigma as f64)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter().map(|t| (t / total) as f32).collect()
}

/// Separable convolution of a scalar field with zero padding outside the raster.
pub fn convolve_separable(field: &Array2<f32>, taps: &[f32]) -> Array2<f32> {
    let (h, w) = field.dim();
    let r = (taps.len() / 2) as isize;
    let mut rows = Array2::<f32>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f32;
            for (k, t) in taps.iter().enumerate() {
                let xx = x as isize + k as isize - r;
                if (0..w as isize).contains(&xx) {
                    acc += t * field[[y, xx as usize]];
                }
            }
            rows[[y, x]] = acc;
        }
    }
    let mut out = Array2::<f32>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f32;
            for (k, t) in taps.iter().enumerate() {
                let yy = y as isize + k as isize - r;
                if (0..h as isize).contains(&yy) {
                    acc += t * rows[[yy as usize, x]];
                }
            }
            out[[y, x]] = acc;
        }
    }
    out
}

/// Gaussian blur of a mask in `[0, 1]`; output is clipped back into `[0, 1]`
/// to absorb rounding.
pub fn blur_mask(mask: &Array2<f32>, sigma: f32) -> Array2<f32> {
    let taps = gaussian_kernel(sigma);
    convolve_separable(mask, &taps).mapv(|v| v.clamp(0.0, 1.0))
}

/// Channel-wise Gaussian blur with edge replication, used for image-space
/// blurring where darkening at the borders is unwanted.
pub fn blur_image(image: &Array3<f32>, sigma: f32) -> Array3<f32> {
    let taps = gaussian_kernel(sigma);
    if taps.len() == 1 {
        return image.clone();
    }
    let (h, w, c) = image.dim();
    let r = (taps.len() / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut rows = Array3::<f32>::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, t) in taps.iter().enumerate() {
                    acc += t * image[[y, clamp(x as isize + k as isize - r, w), ch]];
                }
                rows[[y, x, ch]] = acc;
            }
        }
    }
    let mut out = Array3::<f32>::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, t) in taps.iter().enumerate() {
                    acc += t * rows[[clamp(y as isize + k as isize - r, h), x, ch]];
                }
                out[[y, x, ch]] = acc;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_size_follows_two_sigma_rule() {
        assert_eq!(gaussian_kernel(1.0).len(), 5);
        assert_eq!(gaussian_kernel(1.2).len(), 7);
        assert_eq!(gaussian_kernel(4.0).len(), 17);
        assert_eq!(gaussian_kernel(0.0), vec![1.0]);
        let s: f32 = gaussian_kernel(2.5).iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zeros_stay_zero() {
        let out = blur_mask(&Array2::zeros((9, 9)), 2.0);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ones_stay_one_in_interior() {
        let sigma = 3.0;
        let r = (2.0f32 * sigma).ceil() as usize;
        let out = blur_mask(&Array2::ones((30, 30)), sigma);
        for y in r..30 - r {
            for x in r..30 - r {
                assert!((out[[y, x]] - 1.0).abs() < 1e-6);
            }
        }
        assert!(out[[0, 0]] < 0.5);
    }

    #[test]
    fn impulse_response_matches_closed_form_gaussian() {
        let sigma = 2.0f64;
        let mut field = Array2::zeros((33, 33));
        field[[16, 16]] = 1.0;
        let out = blur_mask(&field, sigma as f32);
        // Direct evaluation of the normalized, truncated 2-D Gaussian.
        let r = 4i64;
        let mut norm = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                norm += (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
            }
        }
        for y in 0..33i64 {
            for x in 0..33i64 {
                let (dy, dx) = (y - 16, x - 16);
                let expected = if dy.abs() <= r && dx.abs() <= r {
                    (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp() / norm
                } else {
                    0.0
                };
                assert!(
                    (out[[y as usize, x as usize]] as f64 - expected).abs() < 1e-6,
                    "({y},{x})"
                );
            }
        }
    }

    #[test]
    fn image_blur_preserves_constants() {
        let img = Array3::from_elem((6, 7, 3), 0.3f32);
        let out = blur_image(&img, 1.5);
        assert!(out.iter().all(|v| (v - 0.3).abs() < 1e-6));
    }
}
