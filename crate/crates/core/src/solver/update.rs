use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::solver::model::{FactorModel, Mode};
use crate::tensor::MigrationTensor;

/// Lower bound on a model rate inside data ratios.
pub const RATE_FLOOR: f64 = 1e-12;

/// Gamma(shape, rate) prior on the unnormalized factor being updated.
/// `shape = 1, rate = 0` is plain maximum likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prior {
    pub shape: f64,
    pub rate: f64,
}

impl Prior {
    pub const FLAT: Prior = Prior { shape: 1.0, rate: 0.0 };
}

impl Default for Prior {
    fn default() -> Self {
        Prior::FLAT
    }
}

/// Poisson log-likelihood without the `log A!` constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLikelihood {
    /// `-inf` when some observed cell has zero model rate.
    pub value: f64,
    /// Observed cells whose model rate is exactly zero.
    pub zero_rate_cells: usize,
}

fn check_shapes(tensor: &MigrationTensor, model: &FactorModel) -> Result<()> {
    if tensor.dims() != model.dims() {
        return Err(Error::Input(format!(
            "model dims {:?} do not match tensor dims {:?}",
            model.dims(),
            tensor.dims()
        )));
    }
    Ok(())
}

/// `sum_nnz A log rate - sum_admissible rate`, with the mass term in closed
/// form.
pub fn log_likelihood(tensor: &MigrationTensor, model: &FactorModel) -> Result<LogLikelihood> {
    check_shapes(tensor, model)?;
    let mut data = 0.0;
    let mut zero_rate_cells = 0;
    for e in tensor.entries() {
        let rate = model.reconstruct_entry(e.origin, e.destination, e.month);
        if rate > 0.0 {
            data += e.count as f64 * rate.ln();
        } else {
            zero_rate_cells += 1;
        }
    }
    let value = if zero_rate_cells > 0 {
        f64::NEG_INFINITY
    } else {
        data - model.admissible_mass()
    };
    Ok(LogLikelihood { value, zero_rate_cells })
}

fn column_sums(m: &Array2<f64>) -> Vec<f64> {
    m.columns().into_iter().map(|c| c.sum()).collect()
}

/// One multiplicative update of the factor for `mode`, holding the other two
/// fixed.
///
/// With `F = weight * factor` for the updated mode and `G`, `H` the other two
/// factors, each entry becomes
///
/// ```text
/// F[r,k] <- ((shape - 1) + F[r,k] * sum_{nnz in row r} (A / rate) G H) / (rate_prior + mass[r,k])
/// ```
///
/// where `mass[r,k]` is the admissible mass of component `k` through row
/// `r`, excluding diagonal cells. The numerator touches only nonzero tensor
/// entries. Afterwards the column sums of `F` become the new weights and the
/// factor is stored with unit-sum columns.
pub fn mode_update(tensor: &MigrationTensor, model: &mut FactorModel, mode: Mode, prior: Prior) -> Result<()> {
    check_shapes(tensor, model)?;
    let (factor, weights) = updated_factor(tensor, model, mode, prior);
    if !weights.iter().all(|w| w.is_finite()) {
        return Err(Error::Numerical(format!("non-finite weights after {mode:?} update")));
    }
    *model.factor_mut(mode) = factor;
    model.weights = weights;
    Ok(())
}

fn updated_factor(
    tensor: &MigrationTensor,
    model: &FactorModel,
    mode: Mode,
    prior: Prior,
) -> (Array2<f64>, Array1<f64>) {
    let rank = model.rank();
    let weights = &model.weights;
    let (o, d, t) = (
        model.origin.as_standard_layout(),
        model.destination.as_standard_layout(),
        model.time.as_standard_layout(),
    );
    let (o, d, t) = (o.as_slice().unwrap(), d.as_slice().unwrap(), t.as_slice().unwrap());
    let (target, rows, other_g, other_h) = match mode {
        Mode::Origin => (o, model.origin.nrows(), d, t),
        Mode::Destination => (d, model.destination.nrows(), o, t),
        Mode::Time => (t, model.time.nrows(), o, d),
    };
    let scaled: Vec<f64> = target
        .chunks_exact(rank.max(1))
        .flat_map(|row| row.iter().zip(weights.iter()).map(|(v, w)| v * w))
        .collect();

    let mut numer = vec![0.0; rows * rank];
    for e in tensor.entries() {
        let (r, g, h) = match mode {
            Mode::Origin => (e.origin, e.destination, e.month),
            Mode::Destination => (e.destination, e.origin, e.month),
            Mode::Time => (e.month, e.origin, e.destination),
        };
        let f_row = &scaled[r * rank..(r + 1) * rank];
        let g_row = &other_g[g * rank..(g + 1) * rank];
        let h_row = &other_h[h * rank..(h + 1) * rank];
        let rate: f64 = (0..rank).map(|k| f_row[k] * g_row[k] * h_row[k]).sum();
        let ratio = e.count as f64 / rate.max(RATE_FLOOR);
        let acc = &mut numer[r * rank..(r + 1) * rank];
        for k in 0..rank {
            acc[k] += ratio * g_row[k] * h_row[k];
        }
    }

    let (s_o, s_d, s_t) = (
        column_sums(&model.origin),
        column_sums(&model.destination),
        column_sums(&model.time),
    );
    let diag: Vec<f64> = (0..rank)
        .map(|k| {
            (0..model.origin.nrows())
                .map(|i| o[i * rank + k] * d[i * rank + k])
                .sum()
        })
        .collect();
    let mass = |r: usize, k: usize| -> f64 {
        match mode {
            Mode::Origin => (s_d[k] - d[r * rank + k]) * s_t[k],
            Mode::Destination => (s_o[k] - o[r * rank + k]) * s_t[k],
            Mode::Time => s_o[k] * s_d[k] - diag[k],
        }
    };

    let mut updated = Array2::<f64>::zeros((rows, rank));
    for r in 0..rows {
        for k in 0..rank {
            let idx = r * rank + k;
            let denom = prior.rate + mass(r, k);
            // no admissible mass through this row: the entry has no data to fit
            updated[[r, k]] = if denom > 0.0 {
                ((prior.shape - 1.0) + scaled[idx] * numer[idx]) / denom
            } else {
                0.0
            };
        }
    }

    let mut new_weights = Array1::<f64>::zeros(rank);
    for k in 0..rank {
        let mut col = updated.column_mut(k);
        let s = col.sum();
        if s > 0.0 {
            col.mapv_inplace(|v| v / s);
        }
        new_weights[k] = s;
    }
    (updated, new_weights)
}
