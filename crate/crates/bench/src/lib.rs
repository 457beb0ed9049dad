//! Fixtures shared by the benchmarks.

use migflow_core::tensor::{Dims, Entry, MigrationTensor};

/// Deterministic sparse tensor with roughly `density` of the admissible
/// cells filled.
pub fn lattice_tensor(countries: usize, months: usize, density: f64) -> MigrationTensor {
    let stride = (1.0 / density).round().max(1.0) as usize;
    let mut entries = Vec::new();
    let mut cell = 0usize;
    for i in 0..countries {
        for j in (0..countries).filter(|&j| j != i) {
            for t in 0..months {
                if cell.is_multiple_of(stride) {
                    entries.push(Entry {
                        origin: i,
                        destination: j,
                        month: t,
                        count: 1 + ((i * 31 + j * 17 + t * 7) % 9) as u64,
                    });
                }
                cell += 1;
            }
        }
    }
    MigrationTensor::from_entries(Dims::new(countries, months), entries).expect("valid lattice")
}
