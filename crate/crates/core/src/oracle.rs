//! Brute-force references.
//!
//! Everything here works on flat `f64` slices with explicit index loops.
//! Layers are only read for their weights; no unfold/fold, matmul, softmax
//! or tape machinery is used, so a bug in the optimized path cannot be
//! mirrored here.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::{Conv2d, LocalSelfAttention, OutlookAttention, SelfAttention};
use crate::error::{Result, TensorError};
use crate::nn::{randomize, Linear};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::window::{self, WindowGeometry};

/// Denominator floor of [`relative_error`].
pub const RELATIVE_FLOOR: f64 = 1e-12;

/// `|a - b| / max(|a|, |b|, floor)`
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Plain weight matrix `[in, out]` and optional bias.
struct Dense {
    w: Vec<f64>,
    b: Option<Vec<f64>>,
    cin: usize,
    cout: usize,
}

impl Dense {
    fn of(l: &Linear<f64>) -> Self {
        let s = l.weight.value.shape();
        Self {
            w: l.weight.value.data().to_vec(),
            b: l.bias.as_ref().map(|b| b.value.data().to_vec()),
            cin: s[0],
            cout: s[1],
        }
    }

    /// One row vector through the map.
    #[allow(clippy::needless_range_loop)]
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = match &self.b {
            Some(b) => b.clone(),
            None => vec![0.0; self.cout],
        };
        for i in 0..self.cin {
            for o in 0..self.cout {
                y[o] += x[i] * self.w[i * self.cout + o];
            }
        }
        y
    }

    /// Applies the map to each `cin`-long row.
    fn rows(&self, x: &[f64]) -> Vec<f64> {
        x.chunks(self.cin).flat_map(|r| self.apply(r)).collect()
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

fn hwc(x: &Tensor<f64>) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [h, w, c] => Ok((h, w, c)),
        ref s => Err(TensorError::InvalidArgument(format!("oracle expects [H, W, C], got {s:?}"))),
    }
}

/// Source coordinate of kernel tap `(t, u)` for the window anchored at
/// `(a, b)`, or `None` inside the padding.
#[allow(clippy::too_many_arguments)]
fn tap(a: usize, b: usize, t: usize, u: usize, pad: usize, stride: usize, h: usize, w: usize) -> Option<(usize, usize)> {
    let r = (a * stride + t) as isize - pad as isize;
    let c = (b * stride + u) as isize - pad as isize;
    (r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w).then_some((r as usize, c as usize))
}

/// Window count along one axis, computed without the geometry type.
fn out_len(n: usize, k: usize, pad: usize, stride: usize) -> usize {
    (n + 2 * pad - k) / stride + 1
}

/// Sliding windows `[H, W, C] -> [oh*ow, K*K, C]` with zero padding.
pub fn oracle_unfold(x: &Tensor<f64>, k: usize, pad: usize, stride: usize) -> Result<Tensor<f64>> {
    let (h, w, c) = hwc(x)?;
    let (oh, ow) = (out_len(h, k, pad, stride), out_len(w, k, pad, stride));
    let xd = x.data();
    let mut out = vec![0.0; oh * ow * k * k * c];
    for a in 0..oh {
        for b in 0..ow {
            for t in 0..k {
                for u in 0..k {
                    if let Some((r, s)) = tap(a, b, t, u, pad, stride, h, w) {
                        for ch in 0..c {
                            out[(((a * ow + b) * k + t) * k + u) * c + ch] = xd[(r * w + s) * c + ch];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[oh * ow, k * k, c], out)
}

/// Adjoint of [`oracle_unfold`]: `[oh*ow, K*K, C] -> [H, W, C]`.
pub fn oracle_fold(y: &Tensor<f64>, h: usize, w: usize, k: usize, pad: usize, stride: usize) -> Result<Tensor<f64>> {
    let (oh, ow) = (out_len(h, k, pad, stride), out_len(w, k, pad, stride));
    let s = y.shape();
    if s.len() != 3 || s[0] != oh * ow || s[1] != k * k {
        return Err(TensorError::shape("oracle_fold", s, &[oh * ow, k * k]));
    }
    let c = s[2];
    let yd = y.data();
    let mut out = vec![0.0; h * w * c];
    for a in 0..oh {
        for b in 0..ow {
            for t in 0..k {
                for u in 0..k {
                    if let Some((r, q)) = tap(a, b, t, u, pad, stride, h, w) {
                        for ch in 0..c {
                            out[(r * w + q) * c + ch] += yd[(((a * ow + b) * k + t) * k + u) * c + ch];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[h, w, c], out)
}

/// How many windows cover each pixel.
pub fn oracle_coverage(h: usize, w: usize, k: usize, pad: usize, stride: usize) -> Vec<usize> {
    let mut cov = vec![0; h * w];
    for a in 0..out_len(h, k, pad, stride) {
        for b in 0..out_len(w, k, pad, stride) {
            for t in 0..k {
                for u in 0..k {
                    if let Some((r, q)) = tap(a, b, t, u, pad, stride, h, w) {
                        cov[r * w + q] += 1;
                    }
                }
            }
        }
    }
    cov
}

/// Outlook attention on one `[H, W, C]` map.
pub fn oracle_outlook_attention(x: &Tensor<f64>, layer: &OutlookAttention<f64>) -> Result<Tensor<f64>> {
    let (h, w, c) = hwc(x)?;
    let (k, s, n) = (layer.kernel, layer.stride, layer.heads);
    let (d, kk, pad) = (c / n, k * k, k / 2);
    let (wv, wa, wo) = (Dense::of(&layer.value), Dense::of(&layer.attn), Dense::of(&layer.proj));
    let xd = x.data();
    let v = wv.rows(xd);
    let (oh, ow) = (h.div_ceil(s), w.div_ceil(s));
    let mut y = vec![0.0; h * w * c];
    for a in 0..oh {
        for b in 0..ow {
            // mean of the valid pixels in the s x s cell
            let mut pooled = vec![0.0; c];
            let mut count = 0.0;
            for r in a * s..((a + 1) * s).min(h) {
                for q in b * s..((b + 1) * s).min(w) {
                    for ch in 0..c {
                        pooled[ch] += xd[(r * w + q) * c + ch];
                    }
                    count += 1.0;
                }
            }
            pooled.iter_mut().for_each(|p| *p /= count);
            let logits = wa.apply(&pooled);
            for head in 0..n {
                for p in 0..kk {
                    let Some((pr, pc)) = tap(a, b, p / k, p % k, pad, s, h, w) else {
                        continue;
                    };
                    let mut row = logits[(head * kk + p) * kk..(head * kk + p + 1) * kk].to_vec();
                    softmax_in_place(&mut row);
                    for (q, weight) in row.iter().enumerate() {
                        let Some((qr, qc)) = tap(a, b, q / k, q % k, pad, s, h, w) else {
                            continue;
                        };
                        for e in 0..d {
                            let ch = head * d + e;
                            y[(pr * w + pc) * c + ch] += weight * v[(qr * w + qc) * c + ch];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[h, w, c], wo.rows(&y))
}

/// Windowed scaled dot-product attention on one `[H, W, C]` map.
pub fn oracle_local_self_attention(x: &Tensor<f64>, layer: &LocalSelfAttention<f64>) -> Result<Tensor<f64>> {
    let (h, w, c) = hwc(x)?;
    let (k, n) = (layer.kernel, layer.heads);
    let (d, pad) = (c / n, k / 2);
    let q = Dense::of(&layer.query).rows(x.data());
    let kv = Dense::of(&layer.key).rows(x.data());
    let vv = Dense::of(&layer.value).rows(x.data());
    let mut y = vec![0.0; h * w * c];
    for i in 0..h {
        for j in 0..w {
            let neighbors: Vec<(usize, usize)> = (0..k * k)
                .filter_map(|o| tap(i, j, o / k, o % k, pad, 1, h, w))
                .collect();
            for head in 0..n {
                let mut scores: Vec<f64> = neighbors
                    .iter()
                    .map(|&(r, s)| {
                        (0..d)
                            .map(|e| q[(i * w + j) * c + head * d + e] * kv[(r * w + s) * c + head * d + e])
                            .sum::<f64>()
                            / (d as f64).sqrt()
                    })
                    .collect();
                softmax_in_place(&mut scores);
                for (&(r, s), a) in neighbors.iter().zip(&scores) {
                    for e in 0..d {
                        y[(i * w + j) * c + head * d + e] += a * vv[(r * w + s) * c + head * d + e];
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[h, w, c], Dense::of(&layer.proj).rows(&y))
}

/// Global attention on one `[L, C]` sequence.
pub fn oracle_self_attention(x: &Tensor<f64>, layer: &SelfAttention<f64>) -> Result<Tensor<f64>> {
    let [l, c] = *x.shape() else {
        return Err(TensorError::InvalidArgument(format!("expected [L, C], got {:?}", x.shape())));
    };
    let (n, d) = (layer.heads, c / layer.heads);
    let q = Dense::of(&layer.query).rows(x.data());
    let kv = Dense::of(&layer.key).rows(x.data());
    let vv = Dense::of(&layer.value).rows(x.data());
    let mut y = vec![0.0; l * c];
    for i in 0..l {
        for head in 0..n {
            let mut scores: Vec<f64> = (0..l)
                .map(|j| {
                    (0..d).map(|e| q[i * c + head * d + e] * kv[j * c + head * d + e]).sum::<f64>()
                        / (d as f64).sqrt()
                })
                .collect();
            softmax_in_place(&mut scores);
            for (j, a) in scores.iter().enumerate() {
                for e in 0..d {
                    y[i * c + head * d + e] += a * vv[j * c + head * d + e];
                }
            }
        }
    }
    Tensor::from_vec(&[l, c], Dense::of(&layer.proj).rows(&y))
}

/// Direct zero-padded cross-correlation on one `[H, W, C_in]` map.
pub fn oracle_conv2d(x: &Tensor<f64>, layer: &Conv2d<f64>) -> Result<Tensor<f64>> {
    let (h, w, cin) = hwc(x)?;
    let (k, s, cout) = (layer.kernel, layer.stride, layer.out_channels);
    let pad = k / 2;
    let wt = layer.weight.value.data();
    let bias = layer.bias.as_ref().map(|b| b.value.data().to_vec());
    let (oh, ow) = (out_len(h, k, pad, s), out_len(w, k, pad, s));
    let xd = x.data();
    let mut y = vec![0.0; oh * ow * cout];
    for a in 0..oh {
        for b in 0..ow {
            let out = &mut y[(a * ow + b) * cout..(a * ow + b + 1) * cout];
            if let Some(bias) = &bias {
                out.copy_from_slice(bias);
            }
            for t in 0..k {
                for u in 0..k {
                    let Some((r, q)) = tap(a, b, t, u, pad, s, h, w) else {
                        continue;
                    };
                    for ci in 0..cin {
                        let xv = xd[(r * w + q) * cin + ci];
                        for (co, o) in out.iter_mut().enumerate() {
                            *o += xv * wt[((t * k + u) * cin + ci) * cout + co];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[oh, ow, cout], y)
}

/// Central-difference gradient of a scalar-valued `f` at `x`.
pub fn finite_diff_grad(
    mut f: impl FnMut(&Tensor<f64>) -> Result<Tensor<f64>>,
    x: &Tensor<f64>,
    h: f64,
) -> Result<Tensor<f64>> {
    let mut eval = |t: &Tensor<f64>| -> Result<f64> {
        let y = f(t)?;
        y.item().ok_or_else(|| TensorError::NonScalarLoss(y.shape().to_vec()))
    };
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        grad.push((up - down) / (2.0 * h));
    }
    Tensor::from_vec(x.shape(), grad)
}

/// One compared instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCase {
    pub name: String,
    pub seed: u64,
    pub shape: Vec<usize>,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub passed: bool,
}

impl OracleCase {
    /// Compares `actual` against `expected` elementwise.
    pub fn compare(name: &str, seed: u64, actual: &Tensor<f64>, expected: &Tensor<f64>, tolerance: f64) -> Self {
        let mut max_abs: f64 = 0.0;
        let mut max_rel: f64 = 0.0;
        let same_shape = actual.shape() == expected.shape();
        if same_shape {
            for (&a, &b) in actual.data().iter().zip(expected.data()) {
                max_abs = max_abs.max((a - b).abs());
                max_rel = max_rel.max(relative_error(a, b, RELATIVE_FLOOR));
            }
        } else {
            max_abs = f64::INFINITY;
            max_rel = f64::INFINITY;
        }
        let passed = same_shape && max_rel <= tolerance && max_rel.is_finite();
        Self {
            name: name.to_string(),
            seed,
            shape: expected.shape().to_vec(),
            max_abs_error: max_abs,
            max_rel_error: max_rel,
            passed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub tolerance: f64,
    pub seeds: Vec<u64>,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub cases: Vec<OracleCase>,
}

impl OracleReport {
    pub fn new(tolerance: f64, seeds: Vec<u64>, cases: Vec<OracleCase>) -> Self {
        let max_abs_error = cases.iter().map(|c| c.max_abs_error).fold(0.0, f64::max);
        let max_rel_error = cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
        Self {
            tolerance,
            seeds,
            max_abs_error,
            max_rel_error,
            cases,
        }
    }

    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &OracleCase> {
        self.cases.iter().filter(|c| !c.passed)
    }

    /// Cases grouped by name: (name, count, failures, worst relative error).
    pub fn summary(&self) -> Vec<(String, usize, usize, f64)> {
        let mut out: Vec<(String, usize, usize, f64)> = Vec::new();
        for c in &self.cases {
            let i = match out.iter().position(|r| r.0 == c.name) {
                Some(i) => i,
                None => {
                    out.push((c.name.clone(), 0, 0, 0.0));
                    out.len() - 1
                }
            };
            out[i].1 += 1;
            out[i].2 += usize::from(!c.passed);
            out[i].3 = out[i].3.max(c.max_rel_error);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<28} {:>6} {:>8} {:>12}  status", "case", "runs", "failed", "max rel")?;
        for (name, runs, failed, worst) in self.summary() {
            let status = if failed == 0 { "ok" } else { "FAIL" };
            writeln!(f, "{name:<28} {runs:>6} {failed:>8} {worst:>12.3e}  {status}")?;
        }
        write!(
            f,
            "tolerance {:.1e}; max abs {:.3e}; max rel {:.3e}; {}",
            self.tolerance,
            self.max_abs_error,
            self.max_rel_error,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Layer families covered by [`run_oracle_suite`].
pub const ORACLE_CASES: [&str; 7] = [
    "outlook_attention",
    "outlook_attention_stride2",
    "local_self_attention",
    "self_attention",
    "conv2d",
    "unfold",
    "fold",
];

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn unbatched_forward(x: &Tensor<f64>, f: impl for<'t> Fn(crate::tape::Var<'t, f64>) -> Result<crate::tape::Var<'t, f64>>) -> Result<Tensor<f64>> {
    let tape = Tape::new();
    Ok(f(tape.constant(x.clone()))?.value())
}

/// Runs one randomized instance of `case` and compares the optimized path
/// to its oracle. Shapes stay within 12 x 12 tokens and 16 channels.
pub fn oracle_case(case: &str, seed: u64, tolerance: f64) -> Result<OracleCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = rng.random_range(1..=12);
    let w = rng.random_range(1..=12);
    let heads = rng.random_range(1..=4usize);
    let c = heads * rng.random_range(1..=4usize);
    let k = [1, 3, 5][rng.random_range(0..3)];
    let scale = 0.5;
    let (actual, expected) = match case {
        "outlook_attention" | "outlook_attention_stride2" => {
            let stride = if case == "outlook_attention" { 1 } else { 2 };
            let mut layer = OutlookAttention::new(c, heads, k, stride, &mut rng)?;
            randomize(&mut layer, scale, &mut rng);
            let x = random_tensor(&[h, w, c], &mut rng);
            (unbatched_forward(&x, |v| layer.forward(v))?, oracle_outlook_attention(&x, &layer)?)
        }
        "local_self_attention" => {
            let mut layer = LocalSelfAttention::new(c, heads, k, &mut rng)?;
            randomize(&mut layer, scale, &mut rng);
            let x = random_tensor(&[h, w, c], &mut rng);
            (unbatched_forward(&x, |v| layer.forward(v))?, oracle_local_self_attention(&x, &layer)?)
        }
        "self_attention" => {
            let mut layer = SelfAttention::new(c, heads, &mut rng)?;
            randomize(&mut layer, scale, &mut rng);
            let x = random_tensor(&[h * w, c], &mut rng);
            (unbatched_forward(&x, |v| layer.forward(v))?, oracle_self_attention(&x, &layer)?)
        }
        "conv2d" => {
            let stride = rng.random_range(1..=2);
            let cout = rng.random_range(1..=16);
            let mut layer = Conv2d::new("conv", k, stride, c, cout, true, &mut rng)?;
            randomize(&mut layer, scale, &mut rng);
            let x = random_tensor(&[h, w, c], &mut rng);
            (unbatched_forward(&x, |v| layer.forward(v))?, oracle_conv2d(&x, &layer)?)
        }
        "unfold" | "fold" => {
            // integer-valued data: both paths must agree exactly
            let stride = rng.random_range(1..=3);
            let g = WindowGeometry::centered(k, stride, h, w)?;
            if case == "unfold" {
                let x = Tensor::from_fn(&[h, w, c], |_| rng.random_range(-50..=50) as f64);
                (window::unfold(&x, &g)?, oracle_unfold(&x, k, k / 2, stride)?)
            } else {
                let y = Tensor::from_fn(&[g.windows(), k * k, c], |_| rng.random_range(-50..=50) as f64);
                (window::fold(&y, &g)?, oracle_fold(&y, h, w, k, k / 2, stride)?)
            }
        }
        other => {
            return Err(TensorError::InvalidArgument(format!(
                "unknown oracle case '{other}' (expected one of {})",
                ORACLE_CASES.join(", ")
            )))
        }
    };
    let tol = if case == "unfold" || case == "fold" { 0.0 } else { tolerance };
    Ok(OracleCase::compare(case, seed, &actual, &expected, tol))
}

/// Every case in `cases` for every seed in `seeds`.
pub fn run_oracle_suite(cases: &[&str], seeds: &[u64], tolerance: f64) -> Result<OracleReport> {
    let mut out = Vec::with_capacity(cases.len() * seeds.len());
    for &case in cases {
        for &seed in seeds {
            out.push(oracle_case(case, seed, tolerance)?);
        }
    }
    Ok(OracleReport::new(tolerance, seeds.to_vec(), out))
}
