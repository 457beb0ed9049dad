use std::io::Write;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::model::{FactorModel, Mode};
use crate::solver::update::{log_likelihood, mode_update, Prior};
use crate::tensor::{Dims, MigrationTensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub rank: usize,
    pub max_iters: usize,
    /// Stop when the relative change of the objective drops below this.
    pub rel_tol: f64,
    pub seed: u64,
    pub prior_shape: f64,
    pub prior_rate: f64,
    pub restarts: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            rank: 15,
            max_iters: 500,
            rel_tol: 1e-6,
            seed: 0,
            prior_shape: 1.0,
            prior_rate: 0.0,
            restarts: 10,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(format!("fit: {msg}")));
        if self.rank == 0 {
            return fail("rank must be at least 1");
        }
        if self.max_iters == 0 {
            return fail("max_iters must be positive");
        }
        if self.restarts == 0 {
            return fail("restarts must be positive");
        }
        if self.rel_tol.is_nan() || self.rel_tol <= 0.0 {
            return fail("rel_tol must be positive");
        }
        if !(self.prior_shape >= 1.0 && self.prior_shape.is_finite()) {
            return fail("prior_shape must be >= 1");
        }
        if !(self.prior_rate >= 0.0 && self.prior_rate.is_finite()) {
            return fail("prior_rate must be >= 0");
        }
        Ok(())
    }

    pub fn prior(&self) -> Prior {
        Prior {
            shape: self.prior_shape,
            rate: self.prior_rate,
        }
    }
}

/// Objective values of one run. `objective[0]` is the initial model; each
/// further value follows one full sweep over the three modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    /// Negative Poisson log-likelihood.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl FitTrace {
    pub fn final_objective(&self) -> f64 {
        *self.objective.last().expect("trace holds the initial objective")
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "sweep,objective")?;
        for (i, v) in self.objective.iter().enumerate() {
            writeln!(out, "{i},{v:.16e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Best run, normalized, components sorted by weight.
    pub model: FactorModel,
    pub trace: FitTrace,
    pub best_restart: usize,
    pub restart_objectives: Vec<f64>,
}

fn init_run(dims: Dims, rank: usize, seed: u64, restart: usize) -> FactorModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    let mut draw = |rows: usize| Array2::from_shape_fn((rows, rank), |_| rng.random_range(0.1..1.1));
    let origin = draw(dims.countries);
    let destination = draw(dims.countries);
    let time = draw(dims.months);
    FactorModel {
        weights: Array1::ones(rank),
        origin,
        destination,
        time,
    }
}

/// Starting model of the first restart: entries uniform on [0.1, 1.1),
/// unit weights.
pub fn init_factors(dims: Dims, config: &FitConfig) -> FactorModel {
    init_run(dims, config.rank, config.seed, 0)
}

fn objective(tensor: &MigrationTensor, model: &FactorModel) -> Result<f64> {
    let nll = -log_likelihood(tensor, model)?.value;
    if nll.is_nan() {
        return Err(Error::Numerical("objective is NaN".into()));
    }
    Ok(nll)
}

fn run_once(tensor: &MigrationTensor, config: &FitConfig, restart: usize) -> Result<(FactorModel, FitTrace)> {
    let mut model = init_run(tensor.dims(), config.rank, config.seed, restart);
    let prior = config.prior();
    let mut current = objective(tensor, &model)?;
    let mut trace = FitTrace {
        objective: vec![current],
        iterations: 0,
        converged: config.rel_tol.is_infinite(),
    };
    while !trace.converged && trace.iterations < config.max_iters {
        for mode in Mode::ALL {
            mode_update(tensor, &mut model, mode, prior)?;
        }
        let next = objective(tensor, &model)?;
        let change = (current - next).abs() / current.abs().max(f64::MIN_POSITIVE);
        trace.objective.push(next);
        trace.iterations += 1;
        trace.converged = change < config.rel_tol;
        current = next;
    }
    model.normalize();
    model.sort_components();
    Ok((model, trace))
}

/// Fit `config.restarts` independently seeded runs and keep the one with the
/// lowest final objective (earliest restart on ties).
pub fn fit(tensor: &MigrationTensor, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let dims = tensor.dims();
    if config.rank > dims.countries.min(dims.months) {
        log::warn!(
            "rank {} exceeds min(N, M) = {}; fitting an overcomplete model",
            config.rank,
            dims.countries.min(dims.months)
        );
    }
    let runs: Vec<(FactorModel, FitTrace)> = (0..config.restarts)
        .into_par_iter()
        .map(|r| run_once(tensor, config, r))
        .collect::<Result<_>>()?;
    let restart_objectives: Vec<f64> = runs.iter().map(|(_, t)| t.final_objective()).collect();
    let best = restart_objectives
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Numerical("no restart reached a finite objective".into()))?;
    let (model, trace) = runs.into_iter().nth(best).expect("index in range");
    Ok(FitResult {
        model,
        trace,
        best_restart: best,
        restart_objectives,
    })
}
