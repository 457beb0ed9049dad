use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::tensor::Dims;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Origin,
    Destination,
    Time,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Origin, Mode::Destination, Mode::Time];
}

/// Non-negative CP factors. Row `i` of `origin` holds country `i`'s loading
/// on each component; `weights` carries the component masses once the model
/// is normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub weights: Array1<f64>,
    pub origin: Array2<f64>,
    pub destination: Array2<f64>,
    pub time: Array2<f64>,
}

impl FactorModel {
    pub fn new(weights: Array1<f64>, origin: Array2<f64>, destination: Array2<f64>, time: Array2<f64>) -> Result<Self> {
        let k = weights.len();
        if origin.ncols() != k || destination.ncols() != k || time.ncols() != k {
            return Err(Error::Input("factor matrices disagree on rank".into()));
        }
        if origin.nrows() != destination.nrows() {
            return Err(Error::Input("origin and destination factors disagree on N".into()));
        }
        let model = FactorModel {
            weights,
            origin,
            destination,
            time,
        };
        let all = model
            .weights
            .iter()
            .chain(&model.origin)
            .chain(&model.destination)
            .chain(&model.time);
        if !all.into_iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::Numerical(
                "factor entries must be finite and non-negative".into(),
            ));
        }
        Ok(model)
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.origin.nrows(), self.time.nrows())
    }

    pub fn factor(&self, mode: Mode) -> &Array2<f64> {
        match mode {
            Mode::Origin => &self.origin,
            Mode::Destination => &self.destination,
            Mode::Time => &self.time,
        }
    }

    pub fn factor_mut(&mut self, mode: Mode) -> &mut Array2<f64> {
        match mode {
            Mode::Origin => &mut self.origin,
            Mode::Destination => &mut self.destination,
            Mode::Time => &mut self.time,
        }
    }

    /// Model rate at one cell.
    pub fn reconstruct_entry(&self, i: usize, j: usize, t: usize) -> f64 {
        (0..self.rank())
            .map(|k| self.weights[k] * self.origin[[i, k]] * self.destination[[j, k]] * self.time[[t, k]])
            .sum()
    }

    /// Total model mass over admissible (off-diagonal) cells.
    pub fn admissible_mass(&self) -> f64 {
        (0..self.rank())
            .map(|k| {
                let o = self.origin.column(k);
                let d = self.destination.column(k);
                let t_sum = self.time.column(k).sum();
                let diag: f64 = o.iter().zip(d.iter()).map(|(a, b)| a * b).sum();
                self.weights[k] * (o.sum() * d.sum() - diag) * t_sum
            })
            .sum()
    }

    /// Rescale every column to unit sum, moving the scale into `weights`.
    /// A component with an all-zero column gets weight 0 and all-zero columns.
    pub fn normalize(&mut self) {
        for k in 0..self.rank() {
            let mut w = self.weights[k];
            for mode in Mode::ALL {
                let mut col = self.factor_mut(mode).column_mut(k);
                let s = col.sum();
                if s > 0.0 {
                    col.mapv_inplace(|v| v / s);
                }
                w *= s;
            }
            if w == 0.0 {
                for mode in Mode::ALL {
                    self.factor_mut(mode).column_mut(k).fill(0.0);
                }
            }
            self.weights[k] = w;
        }
    }

    /// Reorder components by weight, largest first; equal weights keep their
    /// original order.
    pub fn sort_components(&mut self) {
        let mut order: Vec<usize> = (0..self.rank()).collect();
        order.sort_by(|&a, &b| self.weights[b].total_cmp(&self.weights[a]).then(a.cmp(&b)));
        self.permute_components(&order);
    }

    /// New component `c` is old component `order[c]`.
    pub fn permute_components(&mut self, order: &[usize]) {
        let permute = |m: &Array2<f64>| Array2::from_shape_fn(m.raw_dim(), |(r, c)| m[[r, order[c]]]);
        self.weights = order.iter().map(|&k| self.weights[k]).collect();
        self.origin = permute(&self.origin);
        self.destination = permute(&self.destination);
        self.time = permute(&self.time);
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let Dims {
            countries: n,
            months: m,
        } = self.dims();
        writeln!(out, "# cp {n} {n} {m} {}", self.rank())?;
        write_row(&mut out, self.weights.iter())?;
        for mat in [&self.origin, &self.destination, &self.time] {
            for row in mat.rows() {
                write_row(&mut out, row.iter())?;
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<String> = BufReader::new(file)
            .lines()
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(path, e))?;
        let bad_header = || Error::parse(path, 1, "expected `# cp N N M K` header");
        let header = lines.first().ok_or_else(bad_header)?;
        let nums: Vec<usize> = header
            .strip_prefix("# cp")
            .ok_or_else(bad_header)?
            .split_whitespace()
            .map(|f| f.parse().map_err(|_| bad_header()))
            .collect::<Result<_>>()?;
        let &[n, n2, m, k] = nums.as_slice() else {
            return Err(bad_header());
        };
        if n != n2 {
            return Err(bad_header());
        }
        let expected = 2 + 2 * n + m;
        let body: Vec<&String> = lines.iter().filter(|l| !l.trim().is_empty()).collect();
        if body.len() != expected {
            return Err(Error::parse(
                path,
                body.len(),
                format!("expected {expected} non-empty lines, found {}", body.len()),
            ));
        }
        let parse_row = |idx: usize| -> Result<Vec<f64>> {
            let row: Vec<f64> = body[idx]
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(path, idx + 1, "bad number"))?;
            if row.len() != k {
                return Err(Error::parse(path, idx + 1, format!("expected {k} values")));
            }
            Ok(row)
        };
        let block = |start: usize, rows: usize| -> Result<Array2<f64>> {
            let mut data = Vec::with_capacity(rows * k);
            for r in 0..rows {
                data.extend(parse_row(start + r)?);
            }
            Ok(Array2::from_shape_vec((rows, k), data).expect("shape checked"))
        };
        let weights = Array1::from(parse_row(1)?);
        let origin = block(2, n)?;
        let destination = block(2 + n, n)?;
        let time = block(2 + 2 * n, m)?;
        FactorModel::new(weights, origin, destination, time)
    }
}

fn write_row<'a, W: Write>(out: &mut W, values: impl Iterator<Item = &'a f64>) -> std::io::Result<()> {
    let row: Vec<String> = values.map(|v| format!("{v:.16e}")).collect();
    writeln!(out, "{}", row.join(","))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn small() -> FactorModel {
        FactorModel::new(
            array![2.0, 1.0],
            array![[0.5, 1.0], [0.25, 0.0], [1.0, 3.0]],
            array![[0.5, 2.0], [0.5, 1.0], [0.0, 1.0]],
            array![[0.5, 1.0], [1.0, 1.0]],
        )
        .unwrap()
    }

    #[test]
    fn rank_one_reconstruction() {
        let m = FactorModel::new(array![2.0], array![[0.5]], array![[0.5]], array![[0.5]]).unwrap();
        assert_eq!(m.reconstruct_entry(0, 0, 0), 0.25);
    }

    #[test]
    fn zero_origin_annihilates() {
        let mut m = small();
        m.origin.fill(0.0);
        assert_eq!(m.reconstruct_entry(2, 1, 1), 0.0);
        assert_eq!(m.admissible_mass(), 0.0);
    }

    #[test]
    fn admissible_mass_matches_dense_sum() {
        let m = small();
        let mut dense = 0.0;
        for i in 0..3 {
            for j in (0..3).filter(|&j| j != i) {
                for t in 0..2 {
                    dense += m.reconstruct_entry(i, j, t);
                }
            }
        }
        assert!((m.admissible_mass() - dense).abs() < 1e-12);
    }

    #[test]
    fn normalize_and_sort() {
        let mut m = small();
        let before: Vec<f64> = (0..3).map(|i| m.reconstruct_entry(i, (i + 1) % 3, 1)).collect();
        m.normalize();
        m.sort_components();
        for mode in Mode::ALL {
            for col in m.factor(mode).columns() {
                assert!((col.sum() - 1.0).abs() < 1e-12);
            }
        }
        assert!(m.weights[0] >= m.weights[1]);
        for (i, b) in before.iter().enumerate() {
            assert!((m.reconstruct_entry(i, (i + 1) % 3, 1) - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dead_component_normalizes_to_zero() {
        let mut m = small();
        m.time.column_mut(1).fill(0.0);
        m.normalize();
        assert_eq!(m.weights[1], 0.0);
        assert!(m.origin.column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_negative_and_mismatched() {
        assert!(FactorModel::new(array![1.0], array![[-1.0]], array![[1.0]], array![[1.0]]).is_err());
        assert!(FactorModel::new(array![1.0], array![[1.0], [1.0]], array![[1.0]], array![[1.0]]).is_err());
    }

    #[test]
    fn file_round_trip_is_exact() {
        let mut m = small();
        m.origin[[1, 0]] = 0.1 + 0.2;
        m.time[[0, 1]] = 1.0 / 3.0;
        m.weights[1] = 1e-300;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        m.write(File::create(&path).unwrap()).unwrap();
        assert_eq!(FactorModel::read(&path).unwrap(), m);
    }

    proptest! {
        #[test]
        fn gauge_rescaling_preserves_rates(c in 1e-3f64..1e3, k in 0usize..2, i in 0usize..3, j in 0usize..3, t in 0usize..2) {
            let m = small();
            let mut scaled = m.clone();
            scaled.origin.column_mut(k).mapv_inplace(|v| v * c);
            scaled.weights[k] /= c;
            let (a, b) = (m.reconstruct_entry(i, j, t), scaled.reconstruct_entry(i, j, t));
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}
