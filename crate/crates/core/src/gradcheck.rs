//! Finite-difference verification of every differentiable layer and block.
//!
//! Each case builds a small 64-bit instance, contracts its output with a
//! fixed random tensor into a scalar loss, and compares the tape gradient
//! with respect to the inputs and every parameter against central
//! differences.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::{Conv2d, LocalSelfAttention, OutlookAttention, SelfAttention};
use crate::blocks::{ClassAttentionBlock, ForwardCtx, Mlp, OutlookerBlock, TransformerBlock};
use crate::cost::MixerKind;
use crate::error::{Result, TensorError};
use crate::model::PatchEmbed;
use crate::nn::{randomize, LayerNorm, Linear};
use crate::oracle::{finite_diff_grad, relative_error};
use crate::param::{Module, Param};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::window::WindowGeometry;

/// Entries whose true and estimated gradients are both below this are
/// compared absolutely rather than relatively.
pub const GRADCHECK_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    pub tolerance: f64,
    pub step: f64,
    /// Perturbs the analytic gradient before comparison. Used to confirm
    /// the checker can fail.
    pub corrupt_backward: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            step: 1e-5,
            corrupt_backward: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckCase {
    pub name: String,
    pub seed: u64,
    /// Number of gradient entries compared.
    pub entries: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub step: f64,
    pub seeds: Vec<u64>,
    pub cases: Vec<GradcheckCase>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<28} {:>6} {:>8} {:>9} {:>12}  status", "layer", "seeds", "failed", "entries", "max rel")?;
        let mut names: Vec<&str> = Vec::new();
        for c in &self.cases {
            if !names.contains(&c.name.as_str()) {
                names.push(&c.name);
            }
        }
        for name in names {
            let cases: Vec<_> = self.cases.iter().filter(|c| c.name == name).collect();
            let failed = cases.iter().filter(|c| !c.passed).count();
            let entries: usize = cases.iter().map(|c| c.entries).sum();
            let worst = cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
            let status = if failed == 0 { "ok" } else { "FAIL" };
            writeln!(
                f,
                "{name:<28} {:>6} {failed:>8} {entries:>9} {worst:>12.3e}  {status}",
                cases.len()
            )?;
        }
        write!(
            f,
            "tolerance {:.1e}; step {:.0e}; max rel {:.3e}; {}",
            self.tolerance,
            self.step,
            self.max_rel_error(),
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// A layer with no parameters.
struct Stateless;

impl Module<f64> for Stateless {
    fn visit_params(&self, _: &mut dyn FnMut(&Param<f64>)) {}
    fn visit_params_mut(&mut self, _: &mut dyn FnMut(&mut Param<f64>)) {}
}

fn flatten_params<M: Module<f64>>(m: &M) -> Vec<f64> {
    let mut out = Vec::new();
    m.visit_params(&mut |p| out.extend_from_slice(p.value.data()));
    out
}

fn load_params<M: Module<f64>>(m: &mut M, flat: &[f64]) {
    let mut at = 0;
    m.visit_params_mut(&mut |p| {
        let n = p.len();
        p.value.data_mut().copy_from_slice(&flat[at..at + n]);
        at += n;
    });
}

/// Compares tape and finite-difference gradients of
/// `sum(forward(module, inputs) * r)` for a fixed random `r`, over the
/// inputs and every parameter of `module`.
pub fn check_module<M, F>(
    name: &str,
    seed: u64,
    module: &mut M,
    inputs: &[Tensor<f64>],
    opts: &GradcheckOptions,
    forward: F,
) -> Result<GradcheckCase>
where
    M: Module<f64>,
    F: for<'t> Fn(&M, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);

    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = forward(module, &vars)?;
    let shape = out.shape();
    let n_out: usize = shape.iter().product();
    let weights = Tensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0) / (n_out as f64).sqrt());
    let loss = out.mul(tape.constant(weights.clone()))?.sum();
    let grads = tape.backward(loss)?;

    let mut analytic = Vec::new();
    for (v, x) in vars.iter().zip(inputs) {
        match grads.wrt(*v) {
            Some(g) => analytic.extend_from_slice(g.data()),
            None => analytic.extend(std::iter::repeat_n(0.0, x.len())),
        }
    }
    module.visit_params(&mut |p| match grads.param(p) {
        Some(g) => analytic.extend_from_slice(g.data()),
        None => analytic.extend(std::iter::repeat_n(0.0, p.len())),
    });
    if opts.corrupt_backward {
        if let Some(i) = (0..analytic.len()).max_by(|&a, &b| analytic[a].abs().total_cmp(&analytic[b].abs())) {
            analytic[i] *= 1.05;
        }
    }

    let sizes: Vec<usize> = inputs.iter().map(|x| x.len()).collect();
    let mut point: Vec<f64> = inputs.iter().flat_map(|x| x.data().iter().copied()).collect();
    let n_inputs = point.len();
    point.extend(flatten_params(module));
    let point = Tensor::from_vec(&[point.len()], point)?;
    let original = flatten_params(module);

    let numeric = finite_diff_grad(
        |p| {
            let flat = p.data();
            load_params(module, &flat[n_inputs..]);
            let tape = Tape::new();
            let mut at = 0;
            let vars: Vec<_> = inputs
                .iter()
                .zip(&sizes)
                .map(|(x, &n)| {
                    let v = Tensor::from_vec(x.shape(), flat[at..at + n].to_vec()).expect("sizes agree");
                    at += n;
                    tape.constant(v)
                })
                .collect();
            let out = forward(module, &vars)?;
            Ok(out.mul(tape.constant(weights.clone()))?.sum().value())
        },
        &point,
        opts.step,
    );
    load_params(module, &original);
    let numeric = numeric?;

    let mut max_abs: f64 = 0.0;
    let mut max_rel: f64 = 0.0;
    for (&a, &b) in analytic.iter().zip(numeric.data()) {
        max_abs = max_abs.max((a - b).abs());
        max_rel = max_rel.max(relative_error(a, b, GRADCHECK_FLOOR));
    }
    Ok(GradcheckCase {
        name: name.to_string(),
        seed,
        entries: analytic.len(),
        max_abs_error: max_abs,
        max_rel_error: max_rel,
        passed: max_rel < opts.tolerance && max_rel.is_finite(),
    })
}

/// Layer and block kinds covered by [`run_gradcheck`].
pub const GRADCHECK_CASES: [&str; 22] = [
    "linear",
    "matmul",
    "layer_norm",
    "softmax",
    "gelu",
    "relu",
    "unfold",
    "fold",
    "avg_pool",
    "cross_entropy",
    "composite",
    "outlook_attention",
    "outlook_attention_stride2",
    "local_self_attention",
    "self_attention",
    "conv2d",
    "patch_embed",
    "mlp",
    "outlooker_block",
    "outlooker_block_drop_path",
    "transformer_block",
    "class_attention_block",
];

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Runs one gradient check of `case`.
pub fn gradcheck_case(case: &str, seed: u64, opts: &GradcheckOptions) -> Result<GradcheckCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let (h, w) = (rng.random_range(2..=5), rng.random_range(2..=5));
    let scale = 0.5;
    macro_rules! check {
        ($m:expr, $inputs:expr, |$layer:ident, $v:ident| $body:expr) => {{
            let mut m = $m;
            randomize(&mut m, scale, rng);
            let inputs = $inputs;
            check_module(case, seed, &mut m, &inputs, opts, |$layer, $v| $body)
        }};
    }
    match case {
        "linear" => check!(Linear::new("l", 5, 3, true, rng), [random(&[2, 4, 5], rng)], |l, v| l.forward(v[0])),
        "matmul" => check!(Stateless, [random(&[3, 4], rng), random(&[4, 2], rng)], |_l, v| v[0].matmul(v[1])),
        "layer_norm" => check!(LayerNorm::new("ln", 6), [random(&[3, 6], rng)], |l, v| l.forward(v[0])),
        "softmax" => check!(Stateless, [random(&[2, 3, 4], rng)], |_l, v| v[0].softmax(1)),
        "gelu" => check!(Stateless, [random(&[12], rng).scale(3.0)], |_l, v| Ok(v[0].gelu())),
        "relu" => {
            // keep inputs away from the kink
            let x = random(&[12], rng).map(|t| if t.abs() < 0.05 { t + 0.1f64.copysign(t) } else { t });
            check!(Stateless, [x], |_l, v| Ok(v[0].relu()))
        }
        "unfold" | "fold" => {
            let k = [1, 3, 5][rng.random_range(0..3)];
            let stride = rng.random_range(1..=2);
            let g = WindowGeometry::centered(k, stride, h, w)?;
            if case == "unfold" {
                check!(Stateless, [random(&[2, h, w, 3], rng)], |_l, v| v[0].unfold(&g))
            } else {
                check!(Stateless, [random(&[2, g.windows(), k * k, 3], rng)], |_l, v| v[0].fold(&g))
            }
        }
        "avg_pool" => check!(Stateless, [random(&[2, h, w, 3], rng)], |_l, v| v[0].avg_pool(2)),
        "cross_entropy" => {
            let labels = [rng.random_range(0..5), rng.random_range(0..5), rng.random_range(0..5)];
            check!(Stateless, [random(&[3, 5], rng).scale(2.0)], |_l, v| v[0].cross_entropy(&labels))
        }
        // the checker contracts the softmax output into the scalar loss
        "composite" => check!(Linear::new("l", 4, 6, true, rng), [random(&[3, 4], rng)], |l, v| l
            .forward(v[0])?
            .softmax(1)),
        "outlook_attention" | "outlook_attention_stride2" => {
            let stride = if case == "outlook_attention" { 1 } else { 2 };
            check!(OutlookAttention::new(4, 2, 3, stride, rng)?, [random(&[1, h, w, 4], rng)], |l, v| l
                .forward(v[0]))
        }
        "local_self_attention" => check!(LocalSelfAttention::new(4, 2, 3, rng)?, [random(&[1, h, w, 4], rng)], |l, v| l
            .forward(v[0])),
        "self_attention" => check!(SelfAttention::new(4, 2, rng)?, [random(&[2, h, 4], rng)], |l, v| l.forward(v[0])),
        "conv2d" => {
            let stride = rng.random_range(1..=2);
            check!(Conv2d::new("c", 3, stride, 3, 4, true, rng)?, [random(&[1, h, w, 3], rng)], |l, v| l
                .forward(v[0]))
        }
        "patch_embed" => check!(PatchEmbed::new("p", 2, 3, 4, rng), [random(&[1, 4, 2, 3], rng)], |l, v| l
            .forward(v[0])),
        "mlp" => check!(Mlp::new(4, 2.0, rng), [random(&[2, 3, 4], rng)], |l, v| l.forward(v[0])),
        "outlooker_block" => check!(
            OutlookerBlock::new(MixerKind::Oa, 4, 2, 3, 2, 2.0, 0.0, rng)?,
            [random(&[1, h, w, 4], rng)],
            |l, v| l.forward(v[0], &mut ForwardCtx::eval())
        ),
        "outlooker_block_drop_path" => {
            // a fresh identically seeded RNG per evaluation fixes the mask
            let mask_seed = rng.random::<u64>();
            check!(
                OutlookerBlock::new(MixerKind::Oa, 4, 2, 3, 1, 2.0, 0.5, rng)?,
                [random(&[3, h, w, 4], rng)],
                |l, v| {
                    let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
                    l.forward(v[0], &mut ForwardCtx::train(&mut mask_rng))
                }
            )
        }
        "transformer_block" => check!(TransformerBlock::new(4, 2, 2.0, 0.0, rng)?, [random(&[2, h, 4], rng)], |l, v| l
            .forward(v[0], &mut ForwardCtx::eval())),
        "class_attention_block" => check!(
            ClassAttentionBlock::new(4, 2, 2.0, 0.0, rng)?,
            [random(&[2, h + 1, 4], rng)],
            |l, v| l.forward(v[0], &mut ForwardCtx::eval())
        ),
        other => Err(TensorError::InvalidArgument(format!(
            "unknown gradcheck case '{other}' (expected one of {})",
            GRADCHECK_CASES.join(", ")
        ))),
    }
}

/// Every case in `cases` for every seed.
pub fn run_gradcheck(cases: &[&str], seeds: &[u64], opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut out = Vec::with_capacity(cases.len() * seeds.len());
    for &case in cases {
        for &seed in seeds {
            out.push(gradcheck_case(case, seed, opts)?);
        }
    }
    Ok(GradcheckReport {
        tolerance: opts.tolerance,
        step: opts.step,
        seeds: seeds.to_vec(),
        cases: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_cases_pass_for_one_seed() {
        let r = run_gradcheck(&GRADCHECK_CASES, &[3], &GradcheckOptions::default()).unwrap();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn corrupted_backward_is_caught() {
        let opts = GradcheckOptions {
            corrupt_backward: true,
            ..Default::default()
        };
        for case in ["linear", "outlook_attention"] {
            assert!(!gradcheck_case(case, 0, &opts).unwrap().passed, "{case}");
        }
    }

    #[test]
    fn reports_are_deterministic() {
        let opts = GradcheckOptions::default();
        let a = run_gradcheck(&["mlp", "softmax"], &[1, 2], &opts).unwrap();
        let b = run_gradcheck(&["mlp", "softmax"], &[1, 2], &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_case_is_an_error() {
        assert!(gradcheck_case("nope", 0, &GradcheckOptions::default()).is_err());
    }
}
