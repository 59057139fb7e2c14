//! Sliding-window extraction (`unfold`) and its adjoint (`fold`).
//!
//! A token map has shape `[..., H, W, C]`; leading axes are treated as a
//! batch. `unfold` produces `[..., h*w, K*K, C]` where window `t = a*w + b`
//! is anchored at input row `a*s - p` and column `b*s - p`, and offset
//! `u = i*K + j` enumerates the window row-major. Positions outside the
//! input read as zero. `fold` sums every `(window, offset)` entry back to
//! the input location it was read from and drops the padded ones.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowGeometry {
    pub kernel: usize,
    pub padding: usize,
    pub stride: usize,
    pub height: usize,
    pub width: usize,
}

impl WindowGeometry {
    pub fn new(kernel: usize, padding: usize, stride: usize, height: usize, width: usize) -> Result<Self> {
        if kernel == 0 || kernel.is_multiple_of(2) {
            return Err(TensorError::Geometry(format!(
                "kernel must be a positive odd integer, got {kernel}"
            )));
        }
        if stride == 0 {
            return Err(TensorError::Geometry("stride must be positive".into()));
        }
        if height == 0 || width == 0 {
            return Err(TensorError::Geometry(format!(
                "empty input extents {height}x{width}"
            )));
        }
        if kernel > height + 2 * padding || kernel > width + 2 * padding {
            return Err(TensorError::Geometry(format!(
                "kernel {kernel} exceeds padded extents {}x{}",
                height + 2 * padding,
                width + 2 * padding
            )));
        }
        Ok(Self {
            kernel,
            padding,
            stride,
            height,
            width,
        })
    }

    /// Centered windows: padding `K / 2`.
    pub fn centered(kernel: usize, stride: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(kernel, kernel / 2, stride, height, width)
    }

    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn windows(&self) -> usize {
        self.out_height() * self.out_width()
    }

    pub fn offsets(&self) -> usize {
        self.kernel * self.kernel
    }

    /// Input location read by offset `u` of window `t`, if inside the map.
    #[inline]
    pub fn source(&self, t: usize, u: usize) -> Option<(usize, usize)> {
        let (a, b) = (t / self.out_width(), t % self.out_width());
        let (i, j) = (u / self.kernel, u % self.kernel);
        let r = (a * self.stride + i) as isize - self.padding as isize;
        let c = (b * self.stride + j) as isize - self.padding as isize;
        (r >= 0 && c >= 0 && (r as usize) < self.height && (c as usize) < self.width)
            .then_some((r as usize, c as usize))
    }

    /// `valid[t * K² + u]` is true when offset `u` of window `t` is in bounds.
    pub fn validity_mask(&self) -> Vec<bool> {
        let kk = self.offsets();
        (0..self.windows() * kk)
            .map(|i| self.source(i / kk, i % kk).is_some())
            .collect()
    }

    /// Number of `(window, offset)` pairs reading each input location,
    /// row-major over `H x W`.
    pub fn coverage(&self) -> Vec<usize> {
        let mut count = vec![0; self.height * self.width];
        for t in 0..self.windows() {
            for u in 0..self.offsets() {
                if let Some((r, c)) = self.source(t, u) {
                    count[r * self.width + c] += 1;
                }
            }
        }
        count
    }

    /// Flat gather table: `table[t * K² + u]` is the input pixel index, or
    /// `usize::MAX` for padding.
    fn gather_table(&self) -> Vec<usize> {
        let kk = self.offsets();
        (0..self.windows() * kk)
            .map(|i| {
                self.source(i / kk, i % kk)
                    .map_or(usize::MAX, |(r, c)| r * self.width + c)
            })
            .collect()
    }
}

fn split_token_map(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize, usize)> {
    if shape.len() < 3 {
        return Err(TensorError::InvalidArgument(format!(
            "{op}: expected [..., H, W, C], got {shape:?}"
        )));
    }
    let r = shape.len();
    let batch = shape[..r - 3].iter().product();
    Ok((batch, shape[r - 3], shape[r - 2], shape[r - 1]))
}

/// `[..., H, W, C] -> [..., h*w, K*K, C]`.
pub fn unfold<T: Scalar>(x: &Tensor<T>, g: &WindowGeometry) -> Result<Tensor<T>> {
    let (batch, h, w, c) = split_token_map(x.shape(), "unfold")?;
    if (h, w) != (g.height, g.width) {
        return Err(TensorError::shape("unfold", x.shape(), &[g.height, g.width]));
    }
    let table = g.gather_table();
    let per_in = h * w * c;
    let per_out = table.len() * c;
    let src = x.data();
    let mut out = vec![T::zero(); batch * per_out];
    for bi in 0..batch {
        let xin = &src[bi * per_in..(bi + 1) * per_in];
        let dst = &mut out[bi * per_out..(bi + 1) * per_out];
        for (slot, &pix) in table.iter().enumerate() {
            if pix != usize::MAX {
                dst[slot * c..(slot + 1) * c].copy_from_slice(&xin[pix * c..(pix + 1) * c]);
            }
        }
    }
    let mut shape = x.shape()[..x.rank() - 3].to_vec();
    shape.extend_from_slice(&[g.windows(), g.offsets(), c]);
    Tensor::from_vec(&shape, out)
}

/// `[..., h*w, K*K, C] -> [..., H, W, C]`, the exact adjoint of [`unfold`].
pub fn fold<T: Scalar>(y: &Tensor<T>, g: &WindowGeometry) -> Result<Tensor<T>> {
    let shape = y.shape();
    let r = shape.len();
    if r < 3 || shape[r - 3] != g.windows() || shape[r - 2] != g.offsets() {
        return Err(TensorError::shape(
            "fold",
            shape,
            &[g.windows(), g.offsets()],
        ));
    }
    let batch: usize = shape[..r - 3].iter().product();
    let c = shape[r - 1];
    let table = g.gather_table();
    let per_in = table.len() * c;
    let per_out = g.height * g.width * c;
    let src = y.data();
    let mut out = vec![T::zero(); batch * per_out];
    for bi in 0..batch {
        let yin = &src[bi * per_in..(bi + 1) * per_in];
        let dst = &mut out[bi * per_out..(bi + 1) * per_out];
        for (slot, &pix) in table.iter().enumerate() {
            if pix != usize::MAX {
                let row = &yin[slot * c..(slot + 1) * c];
                for (d, &v) in dst[pix * c..(pix + 1) * c].iter_mut().zip(row) {
                    *d += v;
                }
            }
        }
    }
    let mut out_shape = shape[..r - 3].to_vec();
    out_shape.extend_from_slice(&[g.height, g.width, c]);
    Tensor::from_vec(&out_shape, out)
}

/// Average pooling with an `s x s` window and stride `s` over `[..., H, W, C]`.
/// The output has `ceil(H/s) x ceil(W/s)` cells; edge cells average only the
/// in-bounds inputs.
pub fn avg_pool<T: Scalar>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let (batch, h, w, c) = split_token_map(x.shape(), "avg_pool")?;
    if s == 0 {
        return Err(TensorError::InvalidArgument("pool size must be positive".into()));
    }
    let (oh, ow) = (h.div_ceil(s), w.div_ceil(s));
    let src = x.data();
    let mut out = vec![T::zero(); batch * oh * ow * c];
    for bi in 0..batch {
        for a in 0..oh {
            for b in 0..ow {
                let rows = a * s..((a + 1) * s).min(h);
                let cols = b * s..((b + 1) * s).min(w);
                let inv = T::one() / T::of((rows.len() * cols.len()) as f64);
                let dst = &mut out[((bi * oh + a) * ow + b) * c..][..c];
                for r in rows {
                    for col in cols.clone() {
                        let px = &src[((bi * h + r) * w + col) * c..][..c];
                        for (d, &v) in dst.iter_mut().zip(px) {
                            *d += v;
                        }
                    }
                }
                dst.iter_mut().for_each(|d| *d *= inv);
            }
        }
    }
    let mut shape = x.shape()[..x.rank() - 3].to_vec();
    shape.extend_from_slice(&[oh, ow, c]);
    Tensor::from_vec(&shape, out)
}

/// Adjoint of [`avg_pool`]: spreads each pooled gradient over its cell.
pub(crate) fn avg_pool_backward<T: Scalar>(
    grad: &Tensor<T>,
    input_shape: &[usize],
    s: usize,
) -> Result<Tensor<T>> {
    let (batch, h, w, c) = split_token_map(input_shape, "avg_pool_backward")?;
    let (oh, ow) = (h.div_ceil(s), w.div_ceil(s));
    let g = grad.data();
    let mut out = vec![T::zero(); batch * h * w * c];
    for bi in 0..batch {
        for r in 0..h {
            for col in 0..w {
                let (a, b) = (r / s, col / s);
                let n = (((a + 1) * s).min(h) - a * s) * (((b + 1) * s).min(w) - b * s);
                let inv = T::one() / T::of(n as f64);
                let src = &g[((bi * oh + a) * ow + b) * c..][..c];
                let dst = &mut out[((bi * h + r) * w + col) * c..][..c];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = v * inv;
                }
            }
        }
    }
    Tensor::from_vec(input_shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn rejects_even_and_oversized_kernels() {
        assert!(WindowGeometry::new(2, 1, 1, 4, 4).is_err());
        assert!(WindowGeometry::new(5, 0, 1, 3, 3).is_err());
        assert!(WindowGeometry::new(3, 0, 0, 3, 3).is_err());
        assert!(WindowGeometry::new(5, 1, 1, 3, 3).is_ok());
    }

    #[test]
    fn identity_geometry_single_token() {
        let g = WindowGeometry::new(1, 0, 1, 1, 1).unwrap();
        let x = Tensor::<f64>::from_f64(&[1, 1, 3], &[1., 2., 3.]).unwrap();
        let u = unfold(&x, &g).unwrap();
        assert_eq!(u.shape(), &[1, 1, 3]);
        assert_eq!(u.data(), x.data());
    }

    #[test]
    fn corner_window_reads_zero_padding() {
        let g = WindowGeometry::centered(3, 1, 2, 2).unwrap();
        let x = Tensor::<f64>::from_f64(&[2, 2, 1], &[1., 2., 3., 4.]).unwrap();
        let u = unfold(&x, &g).unwrap();
        assert_eq!(u.shape(), &[4, 9, 1]);
        assert_eq!(&u.data()[..9], &[0., 0., 0., 0., 1., 2., 0., 3., 4.]);
    }

    #[test]
    fn strided_window_count() {
        let g = WindowGeometry::centered(3, 2, 28, 28).unwrap();
        assert_eq!((g.out_height(), g.out_width()), (14, 14));
        assert_eq!(g.windows(), 196);
    }

    #[test]
    fn fold_of_unfold_counts_coverage() {
        let g = WindowGeometry::centered(3, 1, 3, 3).unwrap();
        let ones = Tensor::<f64>::ones(&[3, 3, 1]);
        let back = fold(&unfold(&ones, &g).unwrap(), &g).unwrap();
        assert_eq!(back.data(), &[4., 6., 4., 6., 9., 6., 4., 6., 4.]);
        let cov: Vec<f64> = g.coverage().into_iter().map(|c| c as f64).collect();
        assert_eq!(back.data(), cov.as_slice());
    }

    #[test]
    fn single_pixel_fold_keeps_center() {
        let g = WindowGeometry::centered(3, 1, 1, 1).unwrap();
        let y = Tensor::<f64>::from_fn(&[1, 9, 2], |i| i as f64);
        let x = fold(&y, &g).unwrap();
        // offset 4 is the center
        assert_eq!(x.data(), &[8., 9.]);
    }

    #[test]
    fn fold_rejects_inconsistent_stack() {
        let g = WindowGeometry::centered(3, 1, 4, 4).unwrap();
        let y = Tensor::<f64>::zeros(&[15, 9, 2]);
        assert!(fold(&y, &g).is_err());
    }

    #[test]
    fn avg_pool_ceil_mode() {
        let x = Tensor::<f64>::from_fn(&[3, 3, 1], |i| i as f64);
        let p = avg_pool(&x, 2).unwrap();
        assert_eq!(p.shape(), &[2, 2, 1]);
        assert_eq!(p.data(), &[2.0, 3.5, 6.5, 8.0]);
    }

    #[test]
    fn avg_pool_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[2, 5, 3, 4], &mut rng);
        let y = random(&[2, 3, 2, 4], &mut rng);
        let lhs = avg_pool(&x, 2).unwrap().dot(&y).unwrap();
        let rhs = x.dot(&avg_pool_backward(&y, x.shape(), 2).unwrap()).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    fn geometry() -> impl Strategy<Value = WindowGeometry> {
        (0usize..3, 0usize..3, 1usize..4, 1usize..9, 1usize..9).prop_filter_map(
            "valid geometry",
            |(k, p, s, h, w)| WindowGeometry::new(2 * k + 1, p, s, h, w).ok(),
        )
    }

    proptest! {
        #[test]
        fn unfold_fold_adjoint(g in geometry(), c in 1usize..4, batch in 1usize..3, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(&[batch, g.height, g.width, c], &mut rng);
            let y = random(&[batch, g.windows(), g.offsets(), c], &mut rng);
            let lhs = unfold(&x, &g).unwrap().dot(&y).unwrap();
            let rhs = x.dot(&fold(&y, &g).unwrap()).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        }

        #[test]
        fn fold_unfold_is_coverage_scaling(g in geometry(), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(&[g.height, g.width, 2], &mut rng);
            let back = fold(&unfold(&x, &g).unwrap(), &g).unwrap();
            let cov = g.coverage();
            for (i, (&b, &v)) in back.data().iter().zip(x.data()).enumerate() {
                prop_assert!((b - cov[i / 2] as f64 * v).abs() < 1e-12);
            }
        }

        #[test]
        fn unfold_and_fold_are_linear(g in geometry(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(&[g.height, g.width, 3], &mut rng);
            let z = random(&[g.height, g.width, 3], &mut rng);
            let combo = x.zip_map(&z, "combo", |a, b| alpha * a + beta * b).unwrap();
            let lhs = unfold(&combo, &g).unwrap();
            let rhs = unfold(&x, &g).unwrap()
                .zip_map(&unfold(&z, &g).unwrap(), "combo", |a, b| alpha * a + beta * b).unwrap();
            for (a, b) in lhs.data().iter().zip(rhs.data()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let ys = random(&[g.windows(), g.offsets(), 3], &mut rng);
            let yt = random(&[g.windows(), g.offsets(), 3], &mut rng);
            let combo = ys.zip_map(&yt, "combo", |a, b| alpha * a + beta * b).unwrap();
            let lhs = fold(&combo, &g).unwrap();
            let rhs = fold(&ys, &g).unwrap()
                .zip_map(&fold(&yt, &g).unwrap(), "combo", |a, b| alpha * a + beta * b).unwrap();
            for (a, b) in lhs.data().iter().zip(rhs.data()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn padding_never_leaks(g in geometry()) {
            let x = Tensor::<f64>::ones(&[g.height, g.width, 1]);
            let u = unfold(&x, &g).unwrap();
            let valid = g.validity_mask();
            for (v, &ok) in u.data().iter().zip(&valid) {
                prop_assert_eq!(*v, if ok { 1.0 } else { 0.0 });
            }
        }
    }
}
