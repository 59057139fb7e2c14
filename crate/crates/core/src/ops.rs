//! Forward kernels shared by the tape and by callers that do not need
//! gradients. All operate on contiguous row-major buffers.

use crate::error::{Result, TensorError};
use crate::tensor::{Scalar, Tensor};

/// `out[m,n] += a[m,k] * b[k,n]`
pub(crate) fn gemm_nn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,n] += a[k,m]^T * b[k,n]`
pub(crate) fn gemm_tn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,n] += a[m,k] * b[n,k]^T`
pub(crate) fn gemm_nt<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    let bt = transpose(b, n, k);
    gemm_nn(a, &bt, out, m, k, n);
}

pub(crate) fn transpose<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Plain 2-D product. Returns the product and its multiply-add count.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(Tensor<T>, u64)> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return Err(TensorError::shape("matmul", sa, sb));
    }
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    let mut out = vec![T::zero(); m * n];
    gemm_nn(a.data(), b.data(), &mut out, m, k, n);
    Ok((Tensor::from_vec(&[m, n], out)?, (m * k * n) as u64))
}

/// Batched product `[..., m, k] x [..., k, n]` with identical leading axes.
pub fn batch_matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(Tensor<T>, u64)> {
    let (sa, sb) = (a.shape(), b.shape());
    let r = sa.len();
    if r < 2 || sb.len() != r || sa[..r - 2] != sb[..r - 2] || sa[r - 1] != sb[r - 2] {
        return Err(TensorError::shape("batch_matmul", sa, sb));
    }
    let (m, k, n) = (sa[r - 2], sa[r - 1], sb[r - 1]);
    let batch: usize = sa[..r - 2].iter().product();
    let mut out = vec![T::zero(); batch * m * n];
    for bi in 0..batch {
        gemm_nn(
            &a.data()[bi * m * k..(bi + 1) * m * k],
            &b.data()[bi * k * n..(bi + 1) * k * n],
            &mut out[bi * m * n..(bi + 1) * m * n],
            m,
            k,
            n,
        );
    }
    let mut shape = sa[..r - 2].to_vec();
    shape.extend_from_slice(&[m, n]);
    Ok((Tensor::from_vec(&shape, out)?, (batch * m * k * n) as u64))
}

/// Affine map over the last axis: `x[..., cin] * w[cin, cout] + b[cout]`.
pub fn linear<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Result<(Tensor<T>, u64)> {
    let (sx, sw) = (x.shape(), w.shape());
    if sx.is_empty() || sw.len() != 2 || sx[sx.len() - 1] != sw[0] {
        return Err(TensorError::shape("linear", sx, sw));
    }
    let (cin, cout) = (sw[0], sw[1]);
    if let Some(b) = b {
        if b.shape() != [cout] {
            return Err(TensorError::shape("linear bias", b.shape(), &[cout]));
        }
    }
    let rows = x.len() / cin;
    let mut out = match b {
        Some(b) => {
            let mut v = Vec::with_capacity(rows * cout);
            for _ in 0..rows {
                v.extend_from_slice(b.data());
            }
            v
        }
        None => vec![T::zero(); rows * cout],
    };
    gemm_nn(x.data(), w.data(), &mut out, rows, cin, cout);
    let mut shape = sx.to_vec();
    *shape.last_mut().unwrap() = cout;
    Ok((Tensor::from_vec(&shape, out)?, (rows * cin * cout) as u64))
}

/// (outer, extent, inner) decomposition around `axis`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

/// Numerically stable softmax along `axis`.
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(TensorError::InvalidArgument(format!(
            "softmax axis {axis} out of range for {:?}",
            x.shape()
        )));
    }
    let (outer, extent, inner) = axis_split(x.shape(), axis);
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |e: usize| (o * extent + e) * inner + i;
            let mut max = T::neg_infinity();
            for e in 0..extent {
                max = max.max(src[at(e)]);
            }
            let mut total = T::zero();
            for e in 0..extent {
                let v = (src[at(e)] - max).exp();
                out[at(e)] = v;
                total += v;
            }
            let inv = T::one() / total;
            for e in 0..extent {
                out[at(e)] *= inv;
            }
        }
    }
    Tensor::from_vec(x.shape(), out)
}

/// Softmax backward: `dx = y * (g - sum(g * y))` along `axis`.
pub(crate) fn softmax_backward<T: Scalar>(y: &Tensor<T>, g: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, extent, inner) = axis_split(y.shape(), axis);
    let (yd, gd) = (y.data(), g.data());
    let mut out = vec![T::zero(); yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |e: usize| (o * extent + e) * inner + i;
            let mut dot = T::zero();
            for e in 0..extent {
                dot += yd[at(e)] * gd[at(e)];
            }
            for e in 0..extent {
                out[at(e)] = yd[at(e)] * (gd[at(e)] - dot);
            }
        }
    }
    Tensor::from_vec(y.shape(), out).expect("shape preserved")
}

/// Normalized values and reciprocal standard deviations saved for backward.
pub(crate) struct LayerNormSaved<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

pub(crate) fn layer_norm_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, LayerNormSaved<T>)> {
    let c = *x
        .shape()
        .last()
        .ok_or_else(|| TensorError::InvalidArgument("layer_norm on a scalar".into()))?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(TensorError::shape("layer_norm", x.shape(), gamma.shape()));
    }
    if eps < 0.0 {
        return Err(TensorError::InvalidArgument(format!("negative eps {eps}")));
    }
    let eps = T::of(eps);
    let n = T::of(c as f64);
    let rows = x.len() / c;
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    let mut out = vec![T::zero(); x.len()];
    for r in 0..rows {
        let row = &x.data()[r * c..(r + 1) * c];
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..c {
            let h = (row[j] - mean) * rs;
            xhat[r * c + j] = h;
            out[r * c + j] = h * gamma.data()[j] + beta.data()[j];
        }
    }
    Ok((Tensor::from_vec(x.shape(), out)?, LayerNormSaved { xhat, rstd }))
}

/// Layer normalization over the last axis.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    layer_norm_forward(x, gamma, beta, eps).map(|(y, _)| y)
}

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Gaussian error linear unit, `x * Phi(x)` with the exact error function.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub(crate) fn gelu_grad_scalar(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        let (p, n) = matmul(&Tensor::eye(2), &a).unwrap();
        assert_eq!(p, a);
        assert_eq!(n, 8);
    }

    #[test]
    fn row_times_column() {
        let (p, _) = matmul(&t(&[1, 2], &[1., 2.]), &t(&[2, 1], &[3., 4.])).unwrap();
        assert_eq!(p.data(), &[11.]);
    }

    #[test]
    fn matmul_count_is_mkn() {
        let (_, n) = matmul(&Tensor::<f32>::ones(&[4, 5]), &Tensor::ones(&[5, 6])).unwrap();
        assert_eq!(n, 120);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Tensor::<f64>::ones(&[2, 3]), &Tensor::ones(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn gemm_variants_agree() {
        let a: Vec<f64> = (0..12).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..20).map(|i| (i % 7) as f64 - 3.0).collect();
        // a: 3x4, b: 4x5
        let mut nn = vec![0.0; 15];
        gemm_nn(&a, &b, &mut nn, 3, 4, 5);
        let mut tn = vec![0.0; 15];
        gemm_tn(&transpose(&a, 3, 4), &b, &mut tn, 3, 4, 5);
        let mut nt = vec![0.0; 15];
        gemm_nt(&a, &transpose(&b, 4, 5), &mut nt, 3, 4, 5);
        assert_eq!(nn, tn);
        assert_eq!(nn, nt);
    }

    #[test]
    fn linear_identity_and_bias() {
        let x = t(&[3, 2], &[1., 2., 3., 4., 5., 6.]);
        let (y, _) = linear(&x, &Tensor::eye(2), Some(&Tensor::zeros(&[2]))).unwrap();
        assert_eq!(y, x);
        let (y, n) = linear(&t(&[2], &[1., 1.]), &t(&[2, 1], &[1., 2.]), Some(&t(&[1], &[3.]))).unwrap();
        assert_eq!(y.data(), &[6.]);
        assert_eq!(n, 2);
    }

    #[test]
    fn linear_count_for_stage_one_projection() {
        let x = Tensor::<f32>::zeros(&[28, 28, 192]);
        let w = Tensor::<f32>::zeros(&[192, 192]);
        let (_, n) = linear(&x, &w, None).unwrap();
        assert_eq!(n, 28_901_376);
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(&t(&[2], &[0., 0.]), 0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax(&t(&[2], &[2f64.ln(), 0.]), 0).unwrap();
        assert!((s.data()[0] - 2. / 3.).abs() < 1e-15);
        assert!((s.data()[1] - 1. / 3.).abs() < 1e-15);
        let s = softmax(&t(&[2], &[1000., 0.]), 0).unwrap();
        assert!((s.data()[0] - 1.0).abs() < 1e-12 && s.data()[1].abs() < 1e-12);
        assert!(s.all_finite());
    }

    #[test]
    fn softmax_inner_axis() {
        let x = t(&[2, 3], &[1., 5., 2., 3., 0., 4.]);
        let s = softmax(&x, 0).unwrap();
        for col in 0..3 {
            assert!((s.data()[col] + s.data()[3 + col] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn layer_norm_examples() {
        let one = Tensor::<f64>::ones(&[2]);
        let zero = Tensor::<f64>::zeros(&[2]);
        let y = layer_norm(&t(&[2], &[3., 3.]), &one, &zero, 1e-5).unwrap();
        assert_eq!(y.data(), &[0., 0.]);
        let y = layer_norm(&t(&[2], &[1., 3.]), &one, &zero, 0.0).unwrap();
        assert_eq!(y.data(), &[-1., 1.]);
        let c = t(&[2], &[0.7, 0.7]);
        let y = layer_norm(&t(&[2], &[-4., 9.]), &zero, &c, 1e-5).unwrap();
        assert_eq!(y.data(), &[0.7, 0.7]);
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(1.0) - 0.841_344_746_068_542_9).abs() < 1e-12);
        let h = 1e-6;
        for x in [-2.0, -0.3, 0.0, 0.8, 3.0] {
            let fd = (gelu_scalar(x + h) - gelu_scalar(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad_scalar(x)).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn softmax_slices_sum_to_one_f64(v in prop::collection::vec(-1e4f64..1e4, 1..40)) {
            let n = v.len();
            let s = softmax(&t(&[n], &v), 0).unwrap();
            prop_assert!((s.sum() - 1.0).abs() < 1e-12);
            prop_assert!(s.all_finite());
        }

        #[test]
        fn softmax_slices_sum_to_one_f32(v in prop::collection::vec(-1e4f32..1e4, 1..40)) {
            let n = v.len();
            let s = softmax(&Tensor::from_vec(&[n], v).unwrap(), 0).unwrap();
            let total: f64 = s.data().iter().map(|&x| x as f64).sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
        }
    }
}
