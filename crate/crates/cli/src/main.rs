use std::fmt::Write as _;
use std::io::{self, Write as _};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use migflow_core::pipeline::{self, Context};
use migflow_core::synth::{generate_synthetic, write_synthetic};
use migflow_core::{Error, InputFormat, PipelineConfig, Result, SynthSpec, WindowMode};

#[derive(Parser)]
#[command(name = "migflow", version, about = "Migration tensors from geo-tagged event streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, resolve and filter raw events into events.csv
    Ingest(StageArgs),
    /// Monthly residences from events.csv
    Residences(StageArgs),
    /// Window-k migrations from residences.csv
    Detect(StageArgs),
    /// Count tensor from migrations.csv
    Tensorize(StageArgs),
    /// Poisson CP fit of tensor.txt
    Fit(StageArgs),
    /// Gini-ranked component reports from model.txt
    Analyze(StageArgs),
    /// All stages end to end
    Run(StageArgs),
    /// Generate a synthetic event stream with planted moves
    Synth(SynthArgs),
}

#[derive(Args)]
struct StageArgs {
    /// Pipeline config (TOML)
    #[arg(short, long)]
    config: PathBuf,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_parser = parse_format)]
    format: Option<InputFormat>,
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    /// Window length k in months
    #[arg(short = 'k', long)]
    window: Option<usize>,
    #[arg(long, value_parser = parse_mode)]
    window_mode: Option<WindowMode>,
    /// CP rank K
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    n_top: Option<usize>,
    /// Worker thread cap (0 = all cores)
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    /// Synthetic spec (TOML)
    #[arg(short, long)]
    spec: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_format(s: &str) -> std::result::Result<InputFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_mode(s: &str) -> std::result::Result<WindowMode, String> {
    match s {
        "strict" => Ok(WindowMode::Strict),
        "modal" => Ok(WindowMode::Modal),
        _ => Err(format!("unknown window mode {s:?} (strict|modal)")),
    }
}

impl StageArgs {
    /// Config file with flag overrides applied; flags win.
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::load(&self.config)?;
        if let Some(v) = &self.input {
            cfg.input = v.clone();
        }
        if let Some(v) = self.format {
            cfg.input_format = v;
        }
        if let Some(v) = &self.output_dir {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = self.window {
            cfg.window = v;
        }
        if let Some(v) = self.window_mode {
            cfg.window_mode = v;
        }
        if let Some(v) = self.rank {
            cfg.fit.rank = v;
        }
        if let Some(v) = self.restarts {
            cfg.fit.restarts = v;
        }
        if let Some(v) = self.max_iters {
            cfg.fit.max_iters = v;
        }
        if let Some(v) = self.seed {
            cfg.fit.seed = v;
        }
        if let Some(v) = self.top_k {
            cfg.top_k = v;
        }
        if let Some(v) = self.n_top {
            cfg.n_top = v;
        }
        if let Some(v) = self.threads {
            cfg.threads = v;
        }
        Ok(cfg)
    }

    fn context(&self) -> Result<Context> {
        let cfg = self.load().map_err(|e| e.in_stage("config"))?;
        set_threads(cfg.threads);
        Context::new(cfg).map_err(|e| e.in_stage("config"))
    }
}

fn set_threads(threads: usize) {
    if threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            log::warn!("could not set thread count: {e}");
        }
    }
}

fn stage<T>(name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| e.in_stage(name))
}

fn run(cli: Cli, out: &mut String) -> Result<()> {
    match cli.command {
        Command::Ingest(args) => {
            let ctx = args.context()?;
            let (events, stats) = stage("ingest", || pipeline::ingest(&ctx))?;
            writeln!(
                out,
                "kept {} events from {} of {} users ({} records rejected)",
                events.len(),
                stats.users.users_kept,
                stats.users.users_in,
                stats.parse.total_rejected() + stats.resolve.total_rejected()
            )
            .ok();
        }
        Command::Residences(args) => {
            let ctx = args.context()?;
            let series = stage("residences", || {
                pipeline::residences(&ctx, &pipeline::load_events(&ctx)?)
            })?;
            writeln!(out, "{} residence series", series.len()).ok();
        }
        Command::Detect(args) => {
            let ctx = args.context()?;
            let events = stage("detect", || pipeline::detect(&ctx, &pipeline::load_residences(&ctx)?))?;
            writeln!(out, "{} migrations (k = {})", events.len(), ctx.config.window).ok();
        }
        Command::Tensorize(args) => {
            let ctx = args.context()?;
            let t = stage("tensorize", || {
                pipeline::tensorize(&ctx, &pipeline::load_migrations(&ctx)?)
            })?;
            writeln!(out, "tensor {:?}: nnz {}, total {}", t.dims(), t.nnz(), t.total()).ok();
        }
        Command::Fit(args) => {
            let ctx = args.context()?;
            match stage("fit", || pipeline::fit_model(&ctx, &pipeline::load_tensor(&ctx)?))? {
                Some(r) => writeln!(
                    out,
                    "best restart {} after {} sweeps (converged: {}), objective {:.6}",
                    r.best_restart,
                    r.trace.iterations,
                    r.trace.converged,
                    r.trace.final_objective()
                )
                .ok(),
                None => writeln!(out, "empty tensor; solver skipped").ok(),
            };
        }
        Command::Analyze(args) => {
            let ctx = args.context()?;
            let reports = stage("analyze", || {
                pipeline::analyze(&ctx, pipeline::load_model(&ctx)?.as_ref())
            })?;
            for r in &reports {
                let name = |l: &[migflow_core::CountryShare]| l.first().map(|c| c.country.clone()).unwrap_or_default();
                writeln!(
                    out,
                    "#{:<2} component {:<3} gini {:.4}  weight {:.1}  {} -> {}",
                    r.rank,
                    r.component,
                    r.gini,
                    r.weight,
                    name(&r.top_origins),
                    name(&r.top_destinations)
                )
                .ok();
            }
        }
        Command::Run(args) => {
            let cfg = args.load().map_err(|e| e.in_stage("config"))?;
            set_threads(cfg.threads);
            let summary = pipeline::run_pipeline(cfg)?;
            writeln!(out, "{summary}").ok();
        }
        Command::Synth(args) => {
            let mut spec = SynthSpec::load(&args.spec).map_err(|e| e.in_stage("synth"))?;
            if let Some(seed) = args.seed {
                spec.seed = seed;
            }
            let synth = stage("synth", || generate_synthetic(&spec))?;
            stage("synth", || write_synthetic(&synth, &args.out))?;
            writeln!(
                out,
                "{} events from {} users, {} planted moves -> {}",
                synth.events.len(),
                spec.users,
                synth.truth.len(),
                args.out.display()
            )
            .ok();
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut out = String::new();
    let result = run(Cli::parse(), &mut out);
    // A closed pipe downstream is not an error worth reporting.
    let _ = io::stdout().write_all(out.as_bytes());
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind().exit_code())
        }
    }
}
