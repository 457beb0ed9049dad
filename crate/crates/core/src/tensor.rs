//! Sparse origin x destination x month count tensor.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::residence::MigrationEvent;

/// Tensor shape `(countries, countries, months)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub countries: usize,
    pub months: usize,
}

impl Dims {
    pub fn new(countries: usize, months: usize) -> Self {
        Dims { countries, months }
    }

    /// Number of admissible cells (off-diagonal in the country modes).
    pub fn admissible_cells(&self) -> usize {
        self.countries * self.countries.saturating_sub(1) * self.months
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Entry {
    pub origin: usize,
    pub destination: usize,
    pub month: usize,
    pub count: u64,
}

/// Coordinate-list tensor: unique, sorted `(origin, destination, month)`
/// keys with positive counts and no diagonal cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MigrationTensor {
    dims: Dims,
    entries: Vec<Entry>,
}

impl MigrationTensor {
    pub fn empty(dims: Dims) -> Self {
        MigrationTensor {
            dims,
            entries: Vec::new(),
        }
    }

    /// Validate and sort a list of entries.
    pub fn from_entries(dims: Dims, mut entries: Vec<Entry>) -> Result<Self> {
        for e in &entries {
            check_cell(dims, e.origin, e.destination, e.month)?;
            if e.count == 0 {
                return Err(Error::Input(format!("zero count stored at {:?}", key(e))));
            }
        }
        entries.sort_unstable_by_key(key);
        if let Some(w) = entries.windows(2).find(|w| key(&w[0]) == key(&w[1])) {
            return Err(Error::Input(format!("duplicate tensor cell {:?}", key(&w[0]))));
        }
        Ok(MigrationTensor { dims, entries })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|e| e.count).sum()
    }

    pub fn get(&self, origin: usize, destination: usize, month: usize) -> u64 {
        self.entries
            .binary_search_by_key(&(origin, destination, month), key)
            .map(|i| self.entries[i].count)
            .unwrap_or(0)
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let Dims {
            countries: n,
            months: m,
        } = self.dims;
        writeln!(out, "# dims {n} {n} {m}")?;
        for e in &self.entries {
            writeln!(out, "{} {} {} {}", e.origin, e.destination, e.month, e.count)?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let header = match lines.next() {
            Some((_, line)) => line.map_err(|e| Error::io(path, e))?,
            None => return Err(Error::parse(path, 1, "missing `# dims N N M` header")),
        };
        let dims = parse_dims(&header).ok_or_else(|| Error::parse(path, 1, "bad `# dims N N M` header"))?;
        let mut entries = Vec::new();
        for (n, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let nums: Option<Vec<u64>> = line.split_whitespace().map(|f| f.parse().ok()).collect();
            match nums.as_deref() {
                Some(&[i, j, t, c]) => entries.push(Entry {
                    origin: i as usize,
                    destination: j as usize,
                    month: t as usize,
                    count: c,
                }),
                _ => return Err(Error::parse(path, n + 1, "expected `i j t c`")),
            }
        }
        Self::from_entries(dims, entries).map_err(|e| Error::parse(path, 0, e.to_string()))
    }
}

fn key(e: &Entry) -> (usize, usize, usize) {
    (e.origin, e.destination, e.month)
}

fn parse_dims(header: &str) -> Option<Dims> {
    let rest = header.trim().strip_prefix('#')?.trim().strip_prefix("dims")?;
    let nums: Vec<usize> = rest.split_whitespace().map(|f| f.parse().ok()).collect::<Option<_>>()?;
    match nums.as_slice() {
        &[a, b, m] if a == b => Some(Dims::new(a, m)),
        _ => None,
    }
}

fn check_cell(dims: Dims, i: usize, j: usize, t: usize) -> Result<()> {
    if i >= dims.countries || j >= dims.countries || t >= dims.months {
        return Err(Error::Input(format!(
            "cell ({i}, {j}, {t}) outside dims ({n}, {n}, {m})",
            n = dims.countries,
            m = dims.months
        )));
    }
    if i == j {
        return Err(Error::Input(format!(
            "diagonal cell ({i}, {j}, {t}) is not a migration"
        )));
    }
    Ok(())
}

/// Aggregate migration events into counts per `(origin, destination, month)`.
pub fn build_tensor(events: &[MigrationEvent], dims: Dims) -> Result<MigrationTensor> {
    let mut tally: BTreeMap<(usize, usize, usize), u64> = BTreeMap::new();
    for e in events {
        check_cell(dims, e.origin, e.destination, e.month)?;
        *tally.entry((e.origin, e.destination, e.month)).or_default() += 1;
    }
    let entries = tally
        .into_iter()
        .map(|((origin, destination, month), count)| Entry {
            origin,
            destination,
            month,
            count,
        })
        .collect();
    Ok(MigrationTensor { dims, entries })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Marginals {
    pub origin: Vec<u64>,
    pub destination: Vec<u64>,
    pub month: Vec<u64>,
}

/// Per-mode totals in a single pass over the entries.
pub fn mode_marginals(tensor: &MigrationTensor) -> Marginals {
    let Dims { countries, months } = tensor.dims;
    let mut m = Marginals {
        origin: vec![0; countries],
        destination: vec![0; countries],
        month: vec![0; months],
    };
    for e in &tensor.entries {
        m.origin[e.origin] += e.count;
        m.destination[e.destination] += e.count;
        m.month[e.month] += e.count;
    }
    m
}
