use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use volo::cost::CostQuery;
use volo::{Conv2d, LocalSelfAttention, MixerKind, OutlookAttention, SelfAttention, Tape, Tensor};

use crate::{thread_pool, write_csv, CliError, CliResult, Common};

type Forward = dyn Fn(&Tape<f32>) -> volo::Result<()>;

/// `HxWxC`
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl FromStr for Shape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<usize> = s
            .split('x')
            .map(|p| p.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| format!("shape '{s}' is not HxWxC"))?;
        match parts[..] {
            [h, w, c] if h > 0 && w > 0 && c > 0 => Ok(Self {
                height: h,
                width: w,
                channels: c,
            }),
            _ => Err(format!("shape '{s}' is not HxWxC with positive extents")),
        }
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Mixers to time (comma separated: oa, lsa, sa, conv).
    #[arg(long, value_delimiter = ',', default_value = "oa,lsa,sa,conv")]
    pub kinds: Vec<MixerKind>,
    /// Shape grid (comma separated HxWxC).
    #[arg(long, value_delimiter = ',', default_value = "14x14x192,28x28x192,28x28x384")]
    pub shapes: Vec<Shape>,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[arg(long, default_value_t = 6)]
    pub heads: usize,
    #[arg(long, default_value_t = 3)]
    pub kernel: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub kind: MixerKind,
    pub shape: Shape,
    pub kernel: usize,
    pub heads: usize,
    pub reps: usize,
    pub median_ms: f64,
    pub analytic_madds: u64,
    pub measured_madds: u64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times `reps` stride-1 forward passes of one freshly built layer.
pub fn bench_one(kind: MixerKind, shape: Shape, heads: usize, kernel: usize, reps: usize, seed: u64) -> CliResult<BenchRow> {
    let Shape { height: h, width: w, channels: c } = shape;
    let query = CostQuery::new(h as u64, w as u64, c as u64, kernel as u64, heads as u64)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = Tensor::<f32>::from_fn(&[1, h, w, c], |i| ((i % 97) as f32 - 48.0) / 48.0);
    let layer: Box<Forward> = match kind {
        MixerKind::Oa => {
            let l = OutlookAttention::new(c, heads, kernel, 1, &mut rng)?;
            Box::new(move |t| l.forward(t.constant(input.clone())).map(drop))
        }
        MixerKind::Lsa => {
            let l = LocalSelfAttention::new(c, heads, kernel, &mut rng)?;
            Box::new(move |t| l.forward(t.constant(input.clone())).map(drop))
        }
        MixerKind::Sa => {
            let l = SelfAttention::new(c, heads, &mut rng)?;
            let seq = input.reshape(&[1, h * w, c])?;
            Box::new(move |t| l.forward(t.constant(seq.clone())).map(drop))
        }
        MixerKind::Conv => {
            let l = Conv2d::new("conv", kernel, 1, c, c, true, &mut rng)?;
            Box::new(move |t| l.forward(t.constant(input.clone())).map(drop))
        }
    };
    let mut times = Vec::with_capacity(reps);
    let mut measured = 0;
    for _ in 0..reps.max(1) {
        let tape = Tape::new();
        let start = Instant::now();
        layer(&tape)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
        measured = tape.madds();
    }
    Ok(BenchRow {
        kind,
        shape,
        kernel,
        heads,
        reps: reps.max(1),
        median_ms: median(times),
        analytic_madds: query.madds(kind),
        measured_madds: measured,
    })
}

pub fn bench_rows(seed: u64, args: &BenchArgs) -> CliResult<Vec<BenchRow>> {
    if args.kinds.is_empty() || args.shapes.is_empty() {
        return Err(CliError::Usage("need at least one kind and one shape".into()));
    }
    if args.heads == 0 || args.kernel.is_multiple_of(2) {
        return Err(CliError::Usage("heads must be positive and the kernel odd".into()));
    }
    if let Some(s) = args.shapes.iter().find(|s| s.channels % args.heads != 0) {
        return Err(CliError::Usage(format!("{} channels not divisible by {} heads", s.channels, args.heads)));
    }
    let jobs: Vec<(MixerKind, Shape)> = args
        .kinds
        .iter()
        .flat_map(|&k| args.shapes.iter().map(move |&s| (k, s)))
        .collect();
    thread_pool()?.install(|| {
        jobs.par_iter()
            .map(|&(k, s)| bench_one(k, s, args.heads, args.kernel, args.reps, seed))
            .collect()
    })
}

pub fn cmd_bench(common: &Common, args: &BenchArgs, out: &mut dyn Write) -> CliResult {
    let rows = bench_rows(common.seed, args)?;
    if common.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&rows).map_err(anyhow::Error::from)?)?;
    } else {
        writeln!(
            out,
            "{:<5} {:<12} {:>3} {:>5} {:>11} {:>15} {:>15}",
            "kind", "shape", "K", "heads", "median ms", "analytic", "counted"
        )?;
        for r in &rows {
            writeln!(
                out,
                "{:<5} {:<12} {:>3} {:>5} {:>11.3} {:>15} {:>15}",
                r.kind.name(),
                format!("{}x{}x{}", r.shape.height, r.shape.width, r.shape.channels),
                r.kernel,
                r.heads,
                r.median_ms,
                r.analytic_madds,
                r.measured_madds
            )?;
        }
    }
    if let Some(path) = &common.csv {
        let lines: Vec<String> = rows
            .iter()
            .map(|r| {
                format!(
                    "{},{},{},{},{},{},{},{:.4},{},{}",
                    r.kind,
                    r.shape.height,
                    r.shape.width,
                    r.shape.channels,
                    r.kernel,
                    r.heads,
                    r.reps,
                    r.median_ms,
                    r.analytic_madds,
                    r.measured_madds
                )
            })
            .collect();
        write_csv(
            path,
            "kind,height,width,channels,kernel,heads,reps,median_ms,analytic_madds,measured_madds",
            &lines,
        )?;
    }
    Ok(())
}
