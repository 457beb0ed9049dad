//! Gini ranking of components and report emission.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calendar::Calendar;
use crate::error::{Error, Result};
use crate::ingestion::CountryRegistry;
use crate::solver::FactorModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gini {
    pub value: f64,
    /// Set for an all-zero vector, whose Gini is reported as 0.
    pub degenerate: bool,
}

/// Population Gini coefficient `sum_ij |v_i - v_j| / (2 M sum v)`.
///
/// Uses the sorted form `sum_r (2r - M - 1) v_(r) / (M sum v)` on the
/// vector scaled to unit sum and shifted by its minimum, which leaves the
/// pairwise differences unchanged and makes the uniform case exactly 0.
pub fn gini(values: &[f64]) -> Result<Gini> {
    if values.is_empty() {
        return Err(Error::Input("gini of an empty vector".into()));
    }
    if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Input("gini requires finite non-negative values".into()));
    }
    let total: f64 = values.iter().sum();
    if total == 0.0 {
        return Ok(Gini {
            value: 0.0,
            degenerate: true,
        });
    }
    let mut p: Vec<f64> = values.iter().map(|v| v / total).collect();
    p.sort_by(f64::total_cmp);
    let min = p[0];
    let m = p.len() as f64;
    let weighted: f64 = p
        .iter()
        .enumerate()
        .map(|(r, v)| (2.0 * (r + 1) as f64 - m - 1.0) * (v - min))
        .sum();
    let mass: f64 = p.iter().sum();
    Ok(Gini {
        value: (weighted / (m * mass)).max(0.0),
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryShare {
    pub country: String,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    /// 1-based position in the Gini ranking.
    pub rank: usize,
    /// Column index in the (weight-sorted) model.
    pub component: usize,
    pub weight: f64,
    pub gini: f64,
    pub degenerate: bool,
    pub top_origins: Vec<CountryShare>,
    pub top_destinations: Vec<CountryShare>,
    pub top_origin_mass: f64,
    pub top_destination_mass: f64,
    pub time_profile: Vec<f64>,
}

fn unit_sum(values: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let v: Vec<f64> = values.into_iter().collect();
    let s: f64 = v.iter().sum();
    v.iter().map(|x| if s > 0.0 { x / s } else { 0.0 }).collect()
}

/// Share of component `k`'s admissible mass leaving each origin and
/// entering each destination. Mass the factors place on diagonal cells is
/// invisible to the likelihood, so it is left out here.
fn admissible_shares(model: &FactorModel, k: usize) -> (Vec<f64>, Vec<f64>) {
    let o = model.origin.column(k);
    let d = model.destination.column(k);
    let (s_o, s_d) = (o.sum(), d.sum());
    let origins = unit_sum(o.iter().zip(d.iter()).map(|(oi, di)| oi * (s_d - di).max(0.0)));
    let destinations = unit_sum(d.iter().zip(o.iter()).map(|(dj, oj)| dj * (s_o - oj).max(0.0)));
    (origins, destinations)
}

fn top_shares(shares: &[f64], n_top: usize, registry: &CountryRegistry) -> Vec<CountryShare> {
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| shares[b].total_cmp(&shares[a]).then(a.cmp(&b)));
    order
        .into_iter()
        .take(n_top)
        .map(|i| CountryShare {
            country: registry.code(i).to_string(),
            share: shares[i],
        })
        .collect()
}

/// Rank components by the Gini coefficient of their time profile (ties by
/// weight, then index) and keep the first `top_k`.
pub fn rank_components(
    model: &FactorModel,
    registry: &CountryRegistry,
    top_k: usize,
    n_top: usize,
) -> Result<Vec<ComponentReport>> {
    if registry.len() != model.dims().countries {
        return Err(Error::Input(format!(
            "registry has {} countries but the model has {}",
            registry.len(),
            model.dims().countries
        )));
    }
    let mut reports = Vec::with_capacity(model.rank());
    for k in 0..model.rank() {
        let time_profile = unit_sum(model.time.column(k).iter().copied());
        let g = gini(&time_profile)?;
        if g.degenerate {
            log::warn!("component {k} has an all-zero time profile");
        }
        let (origins, destinations) = admissible_shares(model, k);
        let top_origins = top_shares(&origins, n_top, registry);
        let top_destinations = top_shares(&destinations, n_top, registry);
        reports.push(ComponentReport {
            rank: 0,
            component: k,
            weight: model.weights[k],
            gini: g.value,
            degenerate: g.degenerate,
            top_origin_mass: top_origins.iter().map(|c| c.share).sum(),
            top_destination_mass: top_destinations.iter().map(|c| c.share).sum(),
            top_origins,
            top_destinations,
            time_profile,
        });
    }
    reports.sort_by(|a, b| {
        b.gini
            .total_cmp(&a.gini)
            .then(b.weight.total_cmp(&a.weight))
            .then(a.component.cmp(&b.component))
    });
    reports.truncate(top_k);
    for (r, report) in reports.iter_mut().enumerate() {
        report.rank = r + 1;
    }
    Ok(reports)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Write `summary.json` plus per-component `component_<rank>_time.csv` and
/// `component_<rank>_countries.csv`.
pub fn emit_reports(reports: &[ComponentReport], calendar: &Calendar, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut summary = serde_json::to_vec_pretty(reports).expect("reports serialize");
    summary.push(b'\n');
    write_file(&out_dir.join("summary.json"), &summary)?;
    for report in reports {
        let mut time = Vec::new();
        writeln!(time, "month_index,calendar_month,value").unwrap();
        for (m, v) in report.time_profile.iter().enumerate() {
            writeln!(time, "{m},{},{v}", calendar.label(m)).unwrap();
        }
        write_file(&out_dir.join(format!("component_{}_time.csv", report.rank)), &time)?;

        let mut countries = Vec::new();
        writeln!(countries, "role,country,share").unwrap();
        for (role, list) in [
            ("origin", &report.top_origins),
            ("destination", &report.top_destinations),
        ] {
            for c in list {
                writeln!(countries, "{role},{},{}", c.country, c.share).unwrap();
            }
        }
        write_file(
            &out_dir.join(format!("component_{}_countries.csv", report.rank)),
            &countries,
        )?;
    }
    Ok(())
}
