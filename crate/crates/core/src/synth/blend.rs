use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::face::Image;

/// Composites `source` over `target` through `alpha * mask`.
///
/// `I_R = I_S * (alpha M) + I_T * (1 - alpha M)`, per pixel and channel.
pub fn blend(source: &Image, target: &Image, mask: &Array2<f32>, alpha: f32) -> Result<Image> {
    if !(0.5..=1.0).contains(&alpha) {
        return Err(Error::Param(format!("blend alpha {alpha} outside [0.5, 1]")));
    }
    let (h, w, c) = source.dim();
    if target.dim() != (h, w, c) || mask.dim() != (h, w) {
        return Err(Error::Shape(format!(
            "blend inputs disagree: source {:?}, target {:?}, mask {:?}",
            source.dim(),
            target.dim(),
            mask.dim()
        )));
    }
    let mut out = Image::zeros((h, w, c));
    for ((y, x, ch), v) in out.indexed_iter_mut() {
        let m = alpha * mask[[y, x]];
        *v = source[[y, x, ch]] * m + target[[y, x, ch]] * (1.0 - m);
    }
    Ok(out)
}

/// Blending-boundary field `E = 4 M (1 - M)`.
pub fn edge_from_mask(mask: &Array2<f32>) -> Array2<f32> {
    let mut edge = Array2::zeros(mask.raw_dim());
    Zip::from(&mut edge)
        .and(mask)
        .for_each(|e, &m| *e = 4.0 * m * (1.0 - m));
    edge
}

/// 2x2 mean pooling; odd trailing rows/columns are averaged over what exists.
pub fn downsample2(field: &Array2<f32>) -> Array2<f32> {
    let (h, w) = field.dim();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    Array2::from_shape_fn((oh, ow), |(y, x)| {
        let mut sum = 0.0;
        let mut n = 0.0;
        for yy in 2 * y..(2 * y + 2).min(h) {
            for xx in 2 * x..(2 * x + 2).min(w) {
                sum += field[[yy, xx]];
                n += 1.0;
            }
        }
        sum / n
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;

    #[test]
    fn blend_pixel_arithmetic() {
        let s = Array3::from_elem((1, 1, 3), 0.8f32);
        let t = Array3::from_elem((1, 1, 3), 0.4f32);
        let m = Array2::from_elem((1, 1), 1.0f32);
        let r = blend(&s, &t, &m, 0.5).unwrap();
        for v in r.iter() {
            assert!((v - 0.6).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_mask_returns_target_bit_exact() {
        let s = Array3::from_shape_fn((4, 5, 3), |(y, x, c)| (y * 7 + x * 3 + c) as f32 / 40.0);
        let t = Array3::from_shape_fn((4, 5, 3), |(y, x, c)| ((y + x + c) % 5) as f32 / 7.0);
        let r = blend(&s, &t, &Array2::zeros((4, 5)), 0.73).unwrap();
        assert_eq!(r, t);
    }

    #[test]
    fn full_mask_alpha_one_returns_source_bit_exact() {
        let s = Array3::from_shape_fn((4, 5, 3), |(y, x, c)| (y * 7 + x * 3 + c) as f32 / 40.0);
        let t = Array3::from_shape_fn((4, 5, 3), |(y, x, c)| ((y + x + c) % 5) as f32 / 7.0);
        let r = blend(&s, &t, &Array2::ones((4, 5)), 1.0).unwrap();
        assert_eq!(r, s);
    }

    #[test]
    fn alpha_out_of_range_is_rejected() {
        let img = Array3::zeros((2, 2, 3));
        let m = Array2::zeros((2, 2));
        assert!(matches!(blend(&img, &img, &m, 0.49), Err(Error::Param(_))));
        assert!(matches!(blend(&img, &img, &m, 1.01), Err(Error::Param(_))));
        assert!(matches!(
            blend(&img, &Array3::zeros((2, 3, 3)), &m, 0.7),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn edge_closed_forms() {
        let m = Array2::from_shape_vec((1, 4), vec![0.5, 0.0, 1.0, 0.25]).unwrap();
        let e = edge_from_mask(&m);
        assert_eq!(e[[0, 0]], 1.0);
        assert_eq!(e[[0, 1]], 0.0);
        assert_eq!(e[[0, 2]], 0.0);
        assert!((e[[0, 3]] - 0.75).abs() < 1e-7);
    }

    #[test]
    fn downsample_averages_blocks() {
        let f = Array2::from_shape_vec((2, 3), vec![0.0, 1.0, 1.0, 1.0, 1.0, 0.0]).unwrap();
        let d = downsample2(&f);
        assert_eq!(d.dim(), (1, 2));
        assert_eq!(d[[0, 0]], 0.75);
        assert_eq!(d[[0, 1]], 0.5);
    }

    proptest! {
        #[test]
        fn blend_is_a_convex_combination(
            s in 0.0f32..=1.0, t in 0.0f32..=1.0, m in 0.0f32..=1.0, alpha in 0.5f32..=1.0
        ) {
            let r = blend(
                &Array3::from_elem((1, 1, 3), s),
                &Array3::from_elem((1, 1, 3), t),
                &Array2::from_elem((1, 1), m),
                alpha,
            ).unwrap()[[0, 0, 0]];
            prop_assert!(r >= s.min(t) - 1e-6 && r <= s.max(t) + 1e-6);
        }

        #[test]
        fn edge_is_symmetric_and_bounded(k in 0u32..=(1 << 24)) {
            // Masks on the 2^-24 grid have exactly representable complements.
            let m = k as f32 / (1u32 << 24) as f32;
            let a = edge_from_mask(&Array2::from_elem((1, 1), m))[[0, 0]];
            let b = edge_from_mask(&Array2::from_elem((1, 1), 1.0 - m))[[0, 0]];
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert_eq!(a, b);
        }
    }
}
