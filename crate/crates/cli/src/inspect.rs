use std::fmt::Write as _;
use std::io::Write;

use clap::Args;
use serde::Serialize;

use volo::model::{madds_breakdown, param_breakdown, reference_target, ModelConfig, ReferenceTarget};
use volo::MixerKind;

use crate::{load_config, write_csv, CliError, CliResult, Common};

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Preset or JSON file (same as --config).
    #[arg(value_name = "CONFIG")]
    pub target: Option<String>,
    /// Fine-stage token mixer: oa, lsa or conv.
    #[arg(long, default_value = "oa")]
    pub mixer: MixerKind,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageLine {
    pub part: &'static str,
    pub description: String,
    pub tokens: String,
    pub params: u64,
    pub madds: u64,
}

/// Published reference values and our deviation from them, in percent.
#[derive(Debug, Clone, Serialize)]
pub struct Deviation {
    pub target_params_millions: f64,
    pub target_madds_billions: f64,
    pub target_total_layers: usize,
    pub params_delta_pct: f64,
    pub madds_delta_pct: Option<f64>,
    pub total_layers_match: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct InspectReport {
    pub name: String,
    pub mixer: MixerKind,
    pub resolution: usize,
    pub config: ModelConfig,
    pub total_layers: usize,
    pub params: u64,
    pub madds: u64,
    pub stages: Vec<StageLine>,
    /// Only for named presets evaluated at their native resolution.
    pub reference: Option<Deviation>,
    pub warnings: Vec<String>,
}

fn pct(value: f64, target: f64) -> f64 {
    (value / target - 1.0) * 100.0
}

fn deviation(t: &ReferenceTarget, params: u64, madds: u64, layers: usize, native: bool) -> Deviation {
    Deviation {
        target_params_millions: t.params_millions,
        target_madds_billions: t.madds_billions,
        target_total_layers: t.total_layers,
        params_delta_pct: pct(params as f64 / 1e6, t.params_millions),
        madds_delta_pct: native.then(|| pct(madds as f64 / 1e9, t.madds_billions)),
        total_layers_match: layers == t.total_layers,
    }
}

/// Builds the report without allocating any weights.
pub fn inspect_report(name: &str, config: &ModelConfig, mixer: MixerKind, resolution: usize) -> CliResult<InspectReport> {
    if mixer == MixerKind::Sa {
        return Err(CliError::Usage("the fine stage accepts oa, lsa or conv".into()));
    }
    let warnings = config.validate()?;
    let p = param_breakdown(config, mixer);
    let m = madds_breakdown(config, mixer, resolution).map_err(|e| CliError::Usage(e.to_string()))?;
    let c = config;
    let g1 = c.stage1_grid(resolution);
    let g2 = c.stage2_grid(resolution);
    let r1 = resolution.div_ceil(2);
    let mixer_desc = match mixer {
        MixerKind::Oa => format!("Outlooker(C={}, heads={}, K={}, s={})", c.stage1_dim, c.stage1_heads, c.kernel_size, c.stride),
        MixerKind::Lsa => format!("LSA block(C={}, heads={}, K={})", c.stage1_dim, c.stage1_heads, c.kernel_size),
        _ => format!("Conv block(C={}, K={})", c.stage1_dim, c.kernel_size),
    };
    let row = |part, description: String, tokens: String, params, madds| StageLine {
        part,
        description,
        tokens,
        params,
        madds,
    };
    let stages = vec![
        row(
            "stem",
            format!(
                "conv 7x7/2 3->{sd}, 2 x conv 3x3 {sd}->{sd}, patch {p}x{p} {sd}->{}",
                c.stage1_dim,
                sd = c.stem_dim,
                p = c.patch_size / 2
            ),
            format!("{r1}x{r1} -> {g1}x{g1}"),
            p.stem,
            m.stem,
        ),
        row(
            "stage1",
            format!("{} x {mixer_desc}, mlp {}", c.stage1_layers, c.stage1_mlp_ratio),
            format!("{g1}x{g1}"),
            p.stage1,
            m.stage1,
        ),
        row(
            "downsample",
            format!(
                "patch {d}x{d} {}->{}, pos. embedding",
                c.stage1_dim,
                c.stage2_dim,
                d = c.downsample_patch
            ),
            format!("{g2}x{g2}"),
            p.downsample,
            m.downsample,
        ),
        row(
            "stage2",
            format!(
                "{} x Transformer(C={}, heads={}), mlp {}",
                c.stage2_layers, c.stage2_dim, c.stage2_heads, c.stage2_mlp_ratio
            ),
            format!("{g2}x{g2}"),
            p.stage2,
            m.stage2,
        ),
        row(
            "class_attention",
            format!(
                "{} x ClassAttention(C={}, heads={}) + class token",
                c.class_attention_layers, c.stage2_dim, c.stage2_heads
            ),
            format!("1+{}", g2 * g2),
            p.class_attention,
            m.class_attention,
        ),
        row(
            "head",
            format!("LayerNorm + Linear {}->{}", c.stage2_dim, c.num_classes),
            "1".into(),
            p.head,
            m.head,
        ),
    ];
    let (params, madds) = (p.total(), m.total());
    let reference = reference_target(name)
        .filter(|t| ModelConfig::preset(t.name).ok().as_ref() == Some(config) && mixer == MixerKind::Oa)
        .map(|t| deviation(t, params, madds, c.total_layers(), resolution == c.image_size));
    Ok(InspectReport {
        name: name.to_string(),
        mixer,
        resolution,
        config: *config,
        total_layers: c.total_layers(),
        params,
        madds,
        stages,
        reference,
        warnings,
    })
}

pub fn render(r: &InspectReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} at {}x{} (fine-stage mixer {}), {} layers",
        r.name, r.resolution, r.resolution, r.mixer, r.total_layers
    );
    let _ = writeln!(s, "{:<16} {:<58} {:<12} {:>13} {:>16}", "part", "layers", "tokens", "params", "M-Adds");
    for l in &r.stages {
        let _ = writeln!(
            s,
            "{:<16} {:<58} {:<12} {:>13} {:>16}",
            l.part, l.description, l.tokens, l.params, l.madds
        );
    }
    let _ = writeln!(s, "{:<16} {:<58} {:<12} {:>13} {:>16}", "total", "", "", r.params, r.madds);
    let _ = writeln!(s, "parameters  {:.2}M", r.params as f64 / 1e6);
    let _ = writeln!(s, "M-Adds      {:.2}B", r.madds as f64 / 1e9);
    if let Some(d) = &r.reference {
        let _ = writeln!(
            s,
            "reference   params {:.1}M ({:+.2}%)",
            d.target_params_millions, d.params_delta_pct
        );
        match d.madds_delta_pct {
            Some(m) => {
                let _ = writeln!(s, "reference   M-Adds {:.1}B ({m:+.2}%)", d.target_madds_billions);
            }
            None => {
                let _ = writeln!(
                    s,
                    "reference   M-Adds {:.1}B (not compared at this resolution)",
                    d.target_madds_billions
                );
            }
        }
        let _ = writeln!(
            s,
            "reference   total layers {} ({})",
            d.target_total_layers,
            if d.total_layers_match { "match" } else { "MISMATCH" }
        );
    }
    for w in &r.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

pub fn cmd_inspect(common: &Common, args: &InspectArgs, out: &mut dyn Write) -> CliResult {
    let arg = match (&args.target, &common.config) {
        (Some(a), None) | (None, Some(a)) => a,
        (Some(_), Some(_)) => return Err(CliError::Usage("give the config either positionally or with --config".into())),
        (None, None) => return Err(CliError::Usage("inspect needs a preset or config file".into())),
    };
    let (name, config) = load_config(arg)?;
    let resolution = common.resolution.unwrap_or(config.image_size);
    let report = inspect_report(&name, &config, args.mixer, resolution)?;
    if common.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?)?;
    } else {
        write!(out, "{}", render(&report))?;
    }
    if let Some(path) = &common.csv {
        let rows: Vec<String> = report
            .stages
            .iter()
            .map(|l| format!("{},{},{},{}", report.name, l.part, l.params, l.madds))
            .chain(std::iter::once(format!("{},total,{},{}", report.name, report.params, report.madds)))
            .collect();
        write_csv(path, "model,part,params,madds", &rows)?;
    }
    Ok(())
}
