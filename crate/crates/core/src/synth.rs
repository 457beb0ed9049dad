//! Synthetic event streams with planted migration patterns.
//!
//! Every user tweets at least once in every month of the calendar, so the
//! monthly residence of a generated user is exactly the country it was
//! placed in and a planted move at month `m` is detected at `m`.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use chrono::Duration;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::calendar::{Calendar, YearMonth};
use crate::error::{Error, Result};
use crate::ingestion::{write_events, CountryRegistry, GeoEvent, InputFormat, Location};
use crate::residence::{write_migrations, MigrationEvent};
use crate::tensor::{build_tensor, Dims, MigrationTensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedComponent {
    pub origin: String,
    pub destination: String,
    /// Month indices in which members of this component move.
    pub active_months: Vec<usize>,
    /// Expected movers per active month.
    pub intensity: f64,
    /// Months spent at the destination before moving back, if any.
    #[serde(default)]
    pub return_after: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub users: usize,
    pub epoch: YearMonth,
    pub months: usize,
    /// Registry of the generated world, in index order.
    pub countries: Vec<String>,
    #[serde(default)]
    pub components: Vec<PlantedComponent>,
    /// Background movers per month, relative to the summed component
    /// intensity. Origins, destinations and months are uniform.
    #[serde(default)]
    pub noise_rate: f64,
    #[serde(default = "default_events_per_month")]
    pub events_per_month: f64,
}

fn default_events_per_month() -> f64 {
    4.0
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub registry: CountryRegistry,
    pub calendar: Calendar,
    pub events: Vec<GeoEvent>,
    /// Every generated move, sorted by user then month.
    pub truth: Vec<MigrationEvent>,
    /// Moves that were requested but found no free user.
    pub truncated_moves: usize,
}

impl SynthOutput {
    pub fn truth_tensor(&self) -> MigrationTensor {
        build_tensor(&self.truth, Dims::new(self.registry.len(), self.calendar.months))
            .expect("generated moves are valid cells")
    }
}

#[derive(Debug, Clone, Copy)]
struct Plan {
    month: usize,
    origin: usize,
    destination: usize,
    return_after: Option<usize>,
}

impl SynthSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<CountryRegistry> {
        let registry = CountryRegistry::new(self.countries.iter().cloned())?;
        let fail = |msg: String| Err(Error::Config(format!("synth: {msg}")));
        if self.months < 2 {
            return fail("need at least 2 months".into());
        }
        if !(self.noise_rate >= 0.0 && self.noise_rate.is_finite()) {
            return fail("noise_rate must be >= 0".into());
        }
        if !(self.events_per_month >= 1.0 && self.events_per_month.is_finite()) {
            return fail("events_per_month must be >= 1".into());
        }
        if self.noise_rate > 0.0 && registry.len() < 2 {
            return fail("background noise needs at least two countries".into());
        }
        for c in &self.components {
            for code in [&c.origin, &c.destination] {
                if registry.index(&code.to_ascii_uppercase()).is_none() {
                    return fail(format!("planted country {code} not in countries"));
                }
            }
            if c.origin.eq_ignore_ascii_case(&c.destination) {
                return fail(format!("component {}->{} does not move", c.origin, c.destination));
            }
            if !(c.intensity >= 0.0 && c.intensity.is_finite()) {
                return fail("intensity must be >= 0".into());
            }
            if c.active_months.is_empty() || c.active_months.iter().any(|&m| m == 0 || m >= self.months) {
                return fail(format!("active months must lie in 1..{}", self.months));
            }
            if c.return_after == Some(0) {
                return fail("return_after must be positive".into());
            }
        }
        Ok(registry)
    }
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive finite mean").sample(rng) as u64
}

/// Generate a deterministic event stream and its ground-truth moves.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<SynthOutput> {
    let registry = spec.validate()?;
    let calendar = Calendar::new(spec.epoch, spec.months)?;
    let n = registry.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut plans = Vec::new();
    for c in &spec.components {
        let origin = registry.index(&c.origin.to_ascii_uppercase()).unwrap();
        let destination = registry.index(&c.destination.to_ascii_uppercase()).unwrap();
        let movers = (c.intensity * c.active_months.len() as f64).round() as usize;
        for _ in 0..movers {
            plans.push(Plan {
                month: *c.active_months.choose(&mut rng).unwrap(),
                origin,
                destination,
                return_after: c.return_after,
            });
        }
    }
    let total_intensity: f64 = spec.components.iter().map(|c| c.intensity).sum();
    let noise_movers = poisson(&mut rng, spec.noise_rate * total_intensity * (spec.months - 1) as f64);
    for _ in 0..noise_movers {
        let origin = rng.random_range(0..n);
        let destination = (origin + rng.random_range(1..n)) % n;
        plans.push(Plan {
            month: rng.random_range(1..spec.months),
            origin,
            destination,
            return_after: None,
        });
    }
    let truncated_moves = plans.len().saturating_sub(spec.users);
    if truncated_moves > 0 {
        log::warn!("synth: {truncated_moves} planned moves exceed the user pool and were dropped");
        plans.truncate(spec.users);
    }
    // movers are spread over the whole user id range
    let mut slots: Vec<Option<Plan>> = plans.into_iter().map(Some).collect();
    slots.resize(spec.users, None);
    slots.shuffle(&mut rng);

    let width = spec.users.saturating_sub(1).to_string().len();
    let extra_events = spec.events_per_month - 1.0;
    let mut events = Vec::new();
    let mut truth = Vec::new();
    for (u, slot) in slots.iter().enumerate() {
        let user_id = format!("u{u:0width$}");
        let home = match slot {
            Some(p) => p.origin,
            None => rng.random_range(0..n.max(1)),
        };
        if n == 0 {
            break;
        }
        let country_at = |m: usize| match slot {
            Some(p) if m >= p.month && p.return_after.is_none_or(|r| m < p.month + r) => p.destination,
            _ => home,
        };
        if let Some(p) = slot {
            truth.push(MigrationEvent {
                user_id: user_id.clone(),
                month: p.month,
                origin: p.origin,
                destination: p.destination,
            });
            if let Some(r) = p.return_after {
                if p.month + r < spec.months {
                    truth.push(MigrationEvent {
                        user_id: user_id.clone(),
                        month: p.month + r,
                        origin: p.destination,
                        destination: p.origin,
                    });
                }
            }
        }
        for m in 0..spec.months {
            let ym = calendar.year_month(m);
            let seconds = ym.days() as i64 * 86_400;
            let count = 1 + poisson(&mut rng, extra_events);
            let mut stamps: Vec<i64> = (0..count).map(|_| rng.random_range(0..seconds)).collect();
            stamps.sort_unstable();
            let code = registry.code(country_at(m)).to_string();
            for s in stamps {
                events.push(GeoEvent {
                    user_id: user_id.clone(),
                    timestamp: ym.first_instant() + Duration::seconds(s),
                    location: Location::Country(code.clone()),
                });
            }
        }
    }
    Ok(SynthOutput {
        registry,
        calendar,
        events,
        truth,
        truncated_moves,
    })
}

/// Write `events.csv`, `registry.txt`, `truth_migrations.csv` and
/// `truth_tensor.txt` into `out_dir`.
pub fn write_synthetic(output: &SynthOutput, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let create = |name: &str| {
        let path = out_dir.join(name);
        File::create(&path).map(BufWriter::new).map_err(|e| Error::io(path, e))
    };
    let io = |name: &str| {
        let path = out_dir.join(name);
        move |e| Error::io(path, e)
    };
    write_events(create("events.csv")?, &output.events, InputFormat::Csv).map_err(io("events.csv"))?;
    output
        .registry
        .write(create("registry.txt")?)
        .map_err(io("registry.txt"))?;
    write_migrations(create("truth_migrations.csv")?, &output.truth, &output.registry)
        .map_err(io("truth_migrations.csv"))?;
    output
        .truth_tensor()
        .write(create("truth_tensor.txt")?)
        .map_err(io("truth_tensor.txt"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingestion::{filter_users, resolve_events, FilterPolicy};
    use crate::residence::{detect_all, residences_by_user, WindowMode};

    fn spec(users: usize, noise_rate: f64) -> SynthSpec {
        SynthSpec {
            seed: 11,
            users,
            epoch: "2014-01".parse().unwrap(),
            months: 24,
            countries: ["GB", "ES", "KW", "FR"].map(String::from).to_vec(),
            components: vec![PlantedComponent {
                origin: "GB".into(),
                destination: "ES".into(),
                active_months: vec![10],
                intensity: 20.0,
                return_after: None,
            }],
            noise_rate,
            events_per_month: 3.0,
        }
    }

    fn detect(out: &SynthOutput, k: usize) -> Vec<MigrationEvent> {
        let (events, _) = resolve_events(out.events.clone(), &out.registry, None).unwrap();
        let (events, _) = filter_users(events, &FilterPolicy::default());
        let series = residences_by_user(&events, &out.calendar);
        detect_all(&series, k, WindowMode::Strict).unwrap()
    }

    #[test]
    fn zero_users_is_empty() {
        let out = generate_synthetic(&spec(0, 0.0)).unwrap();
        assert!(out.events.is_empty());
        assert!(out.truth.is_empty());
    }

    #[test]
    fn single_month_component_detected_at_that_month() {
        let out = generate_synthetic(&spec(50, 0.0)).unwrap();
        assert_eq!(out.truth.len(), 20);
        let detected = detect(&out, 1);
        assert_eq!(detected.len(), 20);
        assert!(detected
            .iter()
            .all(|e| e.month == 10 && e.origin == 0 && e.destination == 1));
    }

    #[test]
    fn detection_equals_truth_without_noise_and_contains_it_with_noise() {
        let mut s = spec(200, 0.0);
        s.components.push(PlantedComponent {
            origin: "FR".into(),
            destination: "KW".into(),
            active_months: vec![5, 6, 7],
            intensity: 8.0,
            return_after: Some(3),
        });
        let out = generate_synthetic(&s).unwrap();
        assert_eq!(detect(&out, 1), out.truth);
        assert_eq!(detect(&out, 3), out.truth);

        let noisy = generate_synthetic(&SynthSpec { noise_rate: 0.5, ..s }).unwrap();
        let detected = detect(&noisy, 1);
        for t in &noisy.truth {
            assert!(detected.contains(t), "missing {t:?}");
        }
    }

    #[test]
    fn deterministic_files() {
        let s = spec(30, 0.2);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_synthetic(&generate_synthetic(&s).unwrap(), a.path()).unwrap();
        write_synthetic(&generate_synthetic(&s).unwrap(), b.path()).unwrap();
        for name in ["events.csv", "registry.txt", "truth_migrations.csv", "truth_tensor.txt"] {
            assert_eq!(
                fs::read(a.path().join(name)).unwrap(),
                fs::read(b.path().join(name)).unwrap()
            );
        }
    }

    #[test]
    fn pool_exhaustion_truncates() {
        let out = generate_synthetic(&spec(5, 0.0)).unwrap();
        assert_eq!(out.truncated_moves, 15);
        assert_eq!(out.truth.len(), 5);
    }

    #[test]
    fn invalid_specs() {
        let mut s = spec(10, 0.0);
        s.components[0].destination = "US".into();
        assert!(s.validate().is_err());
        let mut s = spec(10, 0.0);
        s.components[0].active_months = vec![24];
        assert!(s.validate().is_err());
        let mut s = spec(10, 0.0);
        s.components[0].intensity = -1.0;
        assert!(s.validate().is_err());
    }
}
