use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use shortcut_audit::pipeline::{config_for_manifest, run_pipeline, InputConfig, PipelineError, StageStatus};
use shortcut_audit::synthgen::{write_synthetic_dataset, HighbitsField, Shortcut, Signal, SynthError, SynthSpec};
use shortcut_audit::{PipelineConfig, Stage};

#[derive(Parser)]
#[command(name = "shortcut-audit", version, about = "Find, validate and occlude shortcut features in labeled traffic captures")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Errors only.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct PipelineArgs {
    /// TOML pipeline config.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `rank.k=5` or `evaluate.depth_grid=[5,0]`.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Add an input as `PATH,LABEL[,DATASET_TAG]`.
    #[arg(short, long, value_name = "PATH,LABEL[,TAG]")]
    input: Vec<String>,
    /// Take the inputs from a synthetic dataset manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(short = 'j', long)]
    threads: Option<usize>,
    /// Recompute stages whose cache was produced with a different config.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Dissect inputs and assemble labeled sessions.
    Extract(PipelineArgs),
    /// Encode packet fields into the feature matrix.
    Encode(PipelineArgs),
    /// Rank fields by adjusted mutual information with the label.
    Rank(PipelineArgs),
    /// Assign shortcut categories to the top-ranked fields.
    Categorize(PipelineArgs),
    /// Run the category-specific validators.
    Validate(PipelineArgs),
    /// Write occluded session tensors.
    Occlude(PipelineArgs),
    /// Train and score decision trees on original and occluded tensors.
    Evaluate(PipelineArgs),
    /// Aggregate all stage outputs into a summary.
    Report(PipelineArgs),
    /// Run several stages, all of them by default.
    Run {
        #[command(flatten)]
        args: PipelineArgs,
        /// Comma-separated stage list.
        #[arg(long, value_delimiter = ',')]
        stages: Vec<Stage>,
    },
    /// Print the resolved config as TOML.
    Config(PipelineArgs),
    /// Generate labeled captures with planted shortcuts.
    Synth(SynthArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Spec file (TOML or JSON); the flags below are ignored when given.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 200)]
    flows: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// sii, highbits-seq, highbits-tsval or env-window (repeatable).
    #[arg(long = "shortcut")]
    shortcuts: Vec<String>,
    /// length or bytes (repeatable).
    #[arg(long = "signal")]
    signals: Vec<String>,
    /// Environment as `TAG=WINDOW_SHIFT` (repeatable).
    #[arg(long = "env")]
    envs: Vec<String>,
    /// Also write `pipeline.toml` for the generated captures.
    #[arg(long)]
    emit_config: bool,
}

fn config_err(m: impl Into<String>) -> PipelineError {
    PipelineError::Config(m.into())
}

fn parse_input(s: &str) -> Result<InputConfig, PipelineError> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let (path, label, tag) = match parts.as_slice() {
        [p, l] => (p, l, ""),
        [p, l, t] => (p, l, *t),
        _ => return Err(config_err(format!("--input `{s}` is not PATH,LABEL[,TAG]"))),
    };
    Ok(InputConfig {
        path: PathBuf::from(path),
        label: label.to_string(),
        dataset_tag: tag.to_string(),
        format: None,
        flow_labels: None,
    })
}

fn resolve_config(a: &PipelineArgs) -> Result<PipelineConfig, PipelineError> {
    let mut overrides = a.overrides.clone();
    if let Some(s) = a.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(t) = a.threads {
        overrides.push(format!("threads={t}"));
    }
    let mut cfg = match &a.config {
        Some(p) => PipelineConfig::load(p, &overrides)?,
        None => PipelineConfig::from_toml_str("seed = 0", &overrides)?,
    };
    if let Some(m) = &a.manifest {
        cfg.inputs = config_for_manifest(m, cfg.seed)?.inputs;
    }
    for i in &a.input {
        cfg.inputs.push(parse_input(i)?);
    }
    if let Some(o) = &a.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(a: &PipelineArgs, stages: &[Stage]) -> Result<(), PipelineError> {
    let cfg = resolve_config(a)?;
    let summary = run_pipeline(&cfg, stages, a.force)?;
    for (stage, status) in &summary.stages {
        let s = match status {
            StageStatus::Ran => "done",
            StageStatus::Cached => "cached",
        };
        println!("{stage:<11} {s:<7} {}", summary.output_dir.join(stage.name()).display());
    }
    println!("config hash {}", summary.config_hash);
    Ok(())
}

fn parse_shortcut(s: &str) -> Result<Shortcut, String> {
    Ok(match s {
        "sii" => Shortcut::SiiBijection,
        "highbits-seq" => Shortcut::SessionConstantHighbits { field: HighbitsField::Seq },
        "highbits-tsval" => Shortcut::SessionConstantHighbits { field: HighbitsField::Tsval },
        "env-window" => Shortcut::EnvCoupledWindow,
        _ => return Err(format!("unknown shortcut `{s}`")),
    })
}

fn parse_signal(s: &str) -> Result<Signal, String> {
    Ok(match s {
        "length" => Signal::PayloadLengthProfile,
        "bytes" => Signal::PayloadByteProfile,
        _ => return Err(format!("unknown signal `{s}`")),
    })
}

fn synth_spec(a: &SynthArgs) -> Result<SynthSpec, SynthError> {
    let invalid = SynthError::InvalidSpec;
    if let Some(p) = &a.spec {
        let text = std::fs::read_to_string(p)?;
        return if p.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| invalid(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| invalid(e.to_string()))
        };
    }
    let mut spec = SynthSpec::new(a.classes, a.flows, a.seed);
    for s in &a.shortcuts {
        spec = spec.with_shortcut(parse_shortcut(s).map_err(invalid)?);
    }
    for s in &a.signals {
        spec = spec.with_signal(parse_signal(s).map_err(invalid)?);
    }
    if !a.envs.is_empty() {
        let mut envs = Vec::new();
        for e in &a.envs {
            let (tag, shift) = e.split_once('=').unwrap_or((e, "0"));
            let shift: f64 = shift.parse().map_err(|_| invalid(format!("bad window shift in `{e}`")))?;
            envs.push((tag, shift));
        }
        spec = spec.with_environments(&envs);
    }
    Ok(spec)
}

fn synth(a: &SynthArgs) -> Result<(), SynthError> {
    let spec = synth_spec(a)?;
    let manifest = write_synthetic_dataset(&spec, &a.out)?;
    println!("{} captures, {} flows in {}", manifest.files.len(), manifest.flows.len(), a.out.display());
    if a.emit_config {
        let cfg = config_for_manifest(&a.out.join("manifest.json"), spec.seed)
            .map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
        let mut cfg = cfg;
        for i in &mut cfg.inputs {
            i.path = i.path.strip_prefix(&a.out).map(Path::to_path_buf).unwrap_or_else(|_| i.path.clone());
        }
        std::fs::write(a.out.join("pipeline.toml"), cfg.to_toml_string())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "error",
        (false, 0) => "warn",
        (false, 1) => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Extract(a) => run(a, &[Stage::Extract]),
        Command::Encode(a) => run(a, &[Stage::Encode]),
        Command::Rank(a) => run(a, &[Stage::Rank]),
        Command::Categorize(a) => run(a, &[Stage::Categorize]),
        Command::Validate(a) => run(a, &[Stage::Validate]),
        Command::Occlude(a) => run(a, &[Stage::Occlude]),
        Command::Evaluate(a) => run(a, &[Stage::Evaluate]),
        Command::Report(a) => run(a, &[Stage::Report]),
        Command::Run { args, stages } => run(args, if stages.is_empty() { &Stage::ALL } else { stages }),
        Command::Config(a) => resolve_config(a).map(|c| print!("{}", c.to_toml_string())),
        Command::Synth(a) => synth(a).map_err(|e| match e {
            SynthError::InvalidSpec(m) => PipelineError::Config(m),
            other => PipelineError::Input(other.to_string()),
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
