//! Stage runners. Each stage writes its artifact into the output directory
//! and the next stage can start either from the in-memory value or from that
//! file; both routes produce the same bytes.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analysis::{emit_reports, rank_components, ComponentReport};
use crate::calendar::Calendar;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::ingestion::{
    filter_users, read_events, resolve_events, write_events, CentroidTable, CountryEvent, CountryRegistry,
    DroppedUserStats, GeoEvent, InputFormat, Location, RejectStats,
};
use crate::residence::{
    detect_all, read_migrations, read_residences, residences_by_user, write_migrations, write_residences,
    MigrationEvent, ResidenceSeries,
};
use crate::solver::{fit, FactorModel, FitResult};
use crate::tensor::{build_tensor, Dims, MigrationTensor};

pub const EVENTS_FILE: &str = "events.csv";
pub const INGEST_STATS_FILE: &str = "ingest_stats.json";
pub const RESIDENCES_FILE: &str = "residences.csv";
pub const MIGRATIONS_FILE: &str = "migrations.csv";
pub const TENSOR_FILE: &str = "tensor.txt";
pub const REGISTRY_FILE: &str = "registry.txt";
pub const MODEL_FILE: &str = "model.txt";
pub const TRACE_FILE: &str = "trace.csv";
pub const REPORTS_DIR: &str = "reports";

/// Loaded configuration plus the registry and calendar every stage needs.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: PipelineConfig,
    pub registry: CountryRegistry,
    pub calendar: Calendar,
}

impl Context {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let registry = CountryRegistry::read(&config.registry).map_err(|e| Error::Config(e.to_string()))?;
        let calendar = config.calendar()?;
        fs::create_dir_all(&config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;
        Ok(Context {
            config,
            registry,
            calendar,
        })
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.config.output_dir.join(name)
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.registry.len(), self.calendar.months)
    }

    fn write_artifact(
        &self,
        name: &str,
        write: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    ) -> Result<()> {
        let path = self.artifact(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        write(&mut out)
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(&path, e))
    }

    fn remove_artifact(&self, name: &str) -> Result<()> {
        let path = self.artifact(name);
        match fs::remove_file(&path) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(Error::io(path, e)),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    pub parse: RejectStats,
    pub resolve: RejectStats,
    pub users: DroppedUserStats,
}

/// Parse, resolve and filter the configured input; writes `events.csv` and
/// `ingest_stats.json`.
pub fn ingest(ctx: &Context) -> Result<(Vec<CountryEvent>, IngestStats)> {
    let cfg = &ctx.config;
    let centroids = match &cfg.centroids {
        Some(path) => Some(CentroidTable::read(path, &ctx.registry).map_err(|e| Error::Config(e.to_string()))?),
        None => None,
    };
    let (events, parse) = read_events(&cfg.input, cfg.input_format, Some(&ctx.calendar))?;
    let (events, resolve) = resolve_events(events, &ctx.registry, centroids.as_ref())?;
    let (events, users) = filter_users(events, &cfg.filter);
    let stats = IngestStats { parse, resolve, users };

    let dump: Vec<GeoEvent> = events
        .iter()
        .map(|e| GeoEvent {
            user_id: e.user_id.clone(),
            timestamp: e.timestamp,
            location: Location::Country(ctx.registry.code(e.country).to_string()),
        })
        .collect();
    ctx.write_artifact(EVENTS_FILE, |out| write_events(out, &dump, InputFormat::Csv))?;
    ctx.write_artifact(INGEST_STATS_FILE, |out| {
        serde_json::to_writer_pretty(&mut *out, &stats)?;
        writeln!(out)
    })?;
    Ok((events, stats))
}

/// Filtered events from a previous `ingest`.
pub fn load_events(ctx: &Context) -> Result<Vec<CountryEvent>> {
    let path = ctx.artifact(EVENTS_FILE);
    let (events, parse) = read_events(&path, InputFormat::Csv, Some(&ctx.calendar))?;
    let (events, resolve) = resolve_events(events, &ctx.registry, None)?;
    if parse.total_rejected() + resolve.total_rejected() > 0 {
        return Err(Error::Input(format!("{} contains invalid records", path.display())));
    }
    Ok(events)
}

pub fn residences(ctx: &Context, events: &[CountryEvent]) -> Result<Vec<ResidenceSeries>> {
    let series = residences_by_user(events, &ctx.calendar);
    ctx.write_artifact(RESIDENCES_FILE, |out| write_residences(out, &series, &ctx.registry))?;
    Ok(series)
}

pub fn load_residences(ctx: &Context) -> Result<Vec<ResidenceSeries>> {
    read_residences(&ctx.artifact(RESIDENCES_FILE), &ctx.registry, ctx.calendar.months)
}

pub fn detect(ctx: &Context, series: &[ResidenceSeries]) -> Result<Vec<MigrationEvent>> {
    let events = detect_all(series, ctx.config.window, ctx.config.window_mode)?;
    ctx.write_artifact(MIGRATIONS_FILE, |out| write_migrations(out, &events, &ctx.registry))?;
    Ok(events)
}

pub fn load_migrations(ctx: &Context) -> Result<Vec<MigrationEvent>> {
    read_migrations(&ctx.artifact(MIGRATIONS_FILE), &ctx.registry, ctx.calendar.months)
}

/// Writes `tensor.txt` and its sidecar `registry.txt`.
pub fn tensorize(ctx: &Context, events: &[MigrationEvent]) -> Result<MigrationTensor> {
    let tensor = build_tensor(events, ctx.dims())?;
    ctx.write_artifact(TENSOR_FILE, |out| tensor.write(out))?;
    ctx.write_artifact(REGISTRY_FILE, |out| ctx.registry.write(out))?;
    Ok(tensor)
}

pub fn load_tensor(ctx: &Context) -> Result<MigrationTensor> {
    let tensor = MigrationTensor::read(&ctx.artifact(TENSOR_FILE))?;
    if tensor.dims() != ctx.dims() {
        return Err(Error::Input(format!(
            "tensor dims {:?} do not match registry/calendar {:?}",
            tensor.dims(),
            ctx.dims()
        )));
    }
    Ok(tensor)
}

/// Fit the model; skipped (and any stale model removed) for an empty tensor.
pub fn fit_model(ctx: &Context, tensor: &MigrationTensor) -> Result<Option<FitResult>> {
    if tensor.nnz() == 0 {
        log::info!("empty tensor; skipping the solver");
        ctx.remove_artifact(MODEL_FILE)?;
        ctx.remove_artifact(TRACE_FILE)?;
        return Ok(None);
    }
    let result = fit(tensor, &ctx.config.fit)?;
    ctx.write_artifact(MODEL_FILE, |out| result.model.write(out))?;
    ctx.write_artifact(TRACE_FILE, |out| result.trace.write(out))?;
    Ok(Some(result))
}

/// The fitted model, or `None` when the solver was skipped.
pub fn load_model(ctx: &Context) -> Result<Option<FactorModel>> {
    let path = ctx.artifact(MODEL_FILE);
    if path.is_file() {
        return FactorModel::read(&path).map(Some);
    }
    if load_tensor(ctx)?.nnz() == 0 {
        return Ok(None);
    }
    Err(Error::Input(format!("{} not found; run `fit` first", path.display())))
}

pub fn analyze(ctx: &Context, model: Option<&FactorModel>) -> Result<Vec<ComponentReport>> {
    let reports = match model {
        Some(m) => rank_components(m, &ctx.registry, ctx.config.top_k, ctx.config.n_top)?,
        None => Vec::new(),
    };
    let dir = ctx.artifact(REPORTS_DIR);
    if dir.is_dir() {
        fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    emit_reports(&reports, &ctx.calendar, &dir)?;
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub users_in: usize,
    pub users_kept: usize,
    pub events_kept: usize,
    pub records_rejected: usize,
    pub migrations: usize,
    pub nnz: usize,
    pub final_objective: Option<f64>,
    pub top_ginis: Vec<f64>,
}

impl std::fmt::Display for RunSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "users kept:      {} / {}", self.users_kept, self.users_in)?;
        writeln!(
            f,
            "events kept:     {} ({} records rejected)",
            self.events_kept, self.records_rejected
        )?;
        writeln!(f, "migrations:      {}", self.migrations)?;
        writeln!(f, "tensor nnz:      {}", self.nnz)?;
        match self.final_objective {
            Some(v) => writeln!(f, "final objective: {v:.6}")?,
            None => writeln!(f, "final objective: (solver skipped)")?,
        }
        let ginis: Vec<String> = self.top_ginis.iter().map(|g| format!("{g:.4}")).collect();
        write!(f, "top ginis:       [{}]", ginis.join(", "))
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

/// parse -> filter -> residence -> detect -> tensor -> fit -> rank -> emit.
pub fn run_pipeline(config: PipelineConfig) -> Result<RunSummary> {
    let ctx = stage("config", Context::new(config))?;
    let (events, stats) = stage("ingest", ingest(&ctx))?;
    let series = stage("residences", residences(&ctx, &events))?;
    let migrations = stage("detect", detect(&ctx, &series))?;
    let tensor = stage("tensorize", tensorize(&ctx, &migrations))?;
    let fitted = stage("fit", fit_model(&ctx, &tensor))?;
    let reports = stage("analyze", analyze(&ctx, fitted.as_ref().map(|r| &r.model)))?;
    Ok(RunSummary {
        users_in: stats.users.users_in,
        users_kept: stats.users.users_kept,
        events_kept: events.len(),
        records_rejected: stats.parse.total_rejected() + stats.resolve.total_rejected(),
        migrations: migrations.len(),
        nnz: tensor.nnz(),
        final_objective: fitted.as_ref().map(|r| r.trace.final_objective()),
        top_ginis: reports.iter().map(|r| r.gini).collect(),
    })
}

/// Every file under the output directory, relative path to bytes, sorted.
pub fn snapshot(dir: &Path) -> Result<Vec<(PathBuf, Vec<u8>)>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), bytes));
            }
        }
    }
    out.sort();
    Ok(out)
}
