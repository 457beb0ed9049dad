use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::ingestion::events::{CountryEvent, GeoEvent, GeoPoint, Location, RejectReason, RejectStats};

/// Ordered set of country codes; a code's position is its tensor index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountryRegistry {
    codes: Vec<String>,
    index: HashMap<String, usize>,
}

impl CountryRegistry {
    pub fn new<I, S>(codes: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut reg = CountryRegistry {
            codes: Vec::new(),
            index: HashMap::new(),
        };
        for code in codes {
            let code: String = code.into();
            let code = code.trim().to_ascii_uppercase();
            if code.is_empty() {
                return Err(Error::Config("empty country code in registry".into()));
            }
            if reg.index.insert(code.clone(), reg.codes.len()).is_some() {
                return Err(Error::Config(format!("duplicate country code {code} in registry")));
            }
            reg.codes.push(code);
        }
        Ok(reg)
    }

    /// One code per line; blank lines are ignored.
    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut codes = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if !line.trim().is_empty() {
                codes.push(line);
            }
        }
        Self::new(codes)
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for code in &self.codes {
            writeln!(out, "{code}")?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn index(&self, code: &str) -> Option<usize> {
        self.index.get(code).copied()
    }

    pub fn code(&self, index: usize) -> &str {
        &self.codes[index]
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Centroid {
    country: usize,
    lat_rad: f64,
    lon_rad: f64,
}

/// Country centroids used by the nearest-centroid resolver.
///
/// Rows are kept in registry-index order so that the strict `<` scan in
/// [`CentroidTable::resolve`] breaks ties toward the smaller index.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidTable {
    rows: Vec<Centroid>,
}

impl CentroidTable {
    pub fn new<'a, I>(registry: &CountryRegistry, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, f64, f64)>,
    {
        let mut out: Vec<Centroid> = Vec::new();
        for (code, lat, lon) in rows {
            let code = code.trim().to_ascii_uppercase();
            let country = registry
                .index(&code)
                .ok_or_else(|| Error::Config(format!("centroid for unregistered country {code}")))?;
            if out.iter().any(|c| c.country == country) {
                return Err(Error::Config(format!("duplicate centroid for {code}")));
            }
            let p =
                GeoPoint::new(lat, lon).ok_or_else(|| Error::Config(format!("centroid for {code} out of range")))?;
            out.push(Centroid {
                country,
                lat_rad: p.lat.to_radians(),
                lon_rad: p.lon.to_radians(),
            });
        }
        out.sort_by_key(|c| c.country);
        Ok(CentroidTable { rows: out })
    }

    /// CSV with optional `country,lat,lon` header.
    pub fn read(path: &Path, registry: &CountryRegistry) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rows = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim();
            if line.is_empty() || (n == 0 && line.starts_with("country")) {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed = match fields.as_slice() {
                [code, lat, lon] => lat
                    .parse::<f64>()
                    .ok()
                    .zip(lon.parse::<f64>().ok())
                    .map(|(lat, lon)| (code.to_string(), lat, lon)),
                _ => None,
            };
            rows.push(parsed.ok_or_else(|| Error::parse(path, n + 1, "expected country,lat,lon"))?);
        }
        Self::new(registry, rows.iter().map(|(c, a, b)| (c.as_str(), *a, *b)))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Registry index of the centroid nearest to `point` by great-circle
    /// distance.
    pub fn resolve(&self, point: GeoPoint) -> Result<usize> {
        let (lat, lon) = (point.lat.to_radians(), point.lon.to_radians());
        let mut best: Option<(f64, usize)> = None;
        for c in &self.rows {
            // haversine term; monotone in central angle, radius irrelevant
            let h = ((c.lat_rad - lat) / 2.0).sin().powi(2)
                + lat.cos() * c.lat_rad.cos() * ((c.lon_rad - lon) / 2.0).sin().powi(2);
            if best.is_none_or(|(d, _)| h < d) {
                best = Some((h, c.country));
            }
        }
        best.map(|(_, country)| country)
            .ok_or_else(|| Error::Config("centroid table is empty".into()))
    }

    pub fn resolve_country<'r>(&self, point: GeoPoint, registry: &'r CountryRegistry) -> Result<&'r str> {
        self.resolve(point).map(|i| registry.code(i))
    }
}

/// Map every event to a registry index. Unregistered country codes are
/// rejected as `unknown_country`; a geo point without a centroid table is a
/// configuration error.
pub fn resolve_events(
    events: Vec<GeoEvent>,
    registry: &CountryRegistry,
    centroids: Option<&CentroidTable>,
) -> Result<(Vec<CountryEvent>, RejectStats)> {
    let mut stats = RejectStats::default();
    let mut out = Vec::with_capacity(events.len());
    for ev in events {
        let country = match &ev.location {
            Location::Country(code) => registry.index(code),
            Location::Point(p) => {
                let table =
                    centroids.ok_or_else(|| Error::Config("geo-point events require a centroid table".into()))?;
                Some(table.resolve(*p)?)
            }
        };
        match country {
            Some(country) => {
                stats.accepted += 1;
                out.push(CountryEvent {
                    user_id: ev.user_id,
                    timestamp: ev.timestamp,
                    country,
                });
            }
            None => stats.reject(RejectReason::UnknownCountry),
        }
    }
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn registry() -> CountryRegistry {
        CountryRegistry::new(["GB", "FR", "ES"]).unwrap()
    }

    fn table(reg: &CountryRegistry) -> CentroidTable {
        CentroidTable::new(reg, [("GB", 54.0, -2.0), ("FR", 46.0, 2.0), ("ES", 40.0, -4.0)]).unwrap()
    }

    /// Great-circle distance in km via the spherical law of cosines.
    fn brute_force_nearest(point: (f64, f64), rows: &[(&str, f64, f64)]) -> String {
        let dist = |a: (f64, f64), b: (f64, f64)| {
            let (p1, l1, p2, l2) = (a.0.to_radians(), a.1.to_radians(), b.0.to_radians(), b.1.to_radians());
            let c = p1.sin() * p2.sin() + p1.cos() * p2.cos() * (l1 - l2).cos();
            6371.0 * c.clamp(-1.0, 1.0).acos()
        };
        rows.iter()
            .min_by(|a, b| dist(point, (a.1, a.2)).total_cmp(&dist(point, (b.1, b.2))))
            .unwrap()
            .0
            .to_string()
    }

    #[test]
    fn registry_bijection() {
        let reg = registry();
        for (i, code) in reg.codes().iter().enumerate() {
            assert_eq!(reg.index(code), Some(i));
        }
        assert!(CountryRegistry::new(["GB", "gb"]).is_err());
    }

    #[test]
    fn exact_centroid_resolves_to_itself() {
        let reg = registry();
        let t = table(&reg);
        let fr = GeoPoint::new(46.0, 2.0).unwrap();
        assert_eq!(t.resolve_country(fr, &reg).unwrap(), "FR");
    }

    #[test]
    fn london_is_gb() {
        let reg = registry();
        let rows = [("GB", 54.0, -2.0), ("FR", 46.0, 2.0), ("ES", 40.0, -4.0)];
        assert_eq!(brute_force_nearest((51.5, -0.1), &rows), "GB");
        let t = table(&reg);
        assert_eq!(
            t.resolve_country(GeoPoint::new(51.5, -0.1).unwrap(), &reg).unwrap(),
            "GB"
        );
    }

    #[test]
    fn equidistant_prefers_smaller_index() {
        let reg = CountryRegistry::new(["AA", "BB"]).unwrap();
        // rows given out of index order on purpose
        let t = CentroidTable::new(&reg, [("BB", 0.0, -10.0), ("AA", 0.0, 10.0)]).unwrap();
        assert_eq!(t.resolve(GeoPoint::new(0.0, 0.0).unwrap()).unwrap(), 0);
        let t = CentroidTable::new(&reg, [("BB", 0.0, 10.0), ("AA", 0.0, -10.0)]).unwrap();
        assert_eq!(t.resolve(GeoPoint::new(0.0, 0.0).unwrap()).unwrap(), 0);
    }

    #[test]
    fn empty_table_is_fatal() {
        let reg = registry();
        let t = CentroidTable::new(&reg, []).unwrap();
        assert!(matches!(
            t.resolve(GeoPoint::new(0.0, 0.0).unwrap()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn matches_brute_force_on_random_points() {
        use rand::{Rng, SeedableRng};
        let reg = CountryRegistry::new(["GB", "FR", "ES", "US", "KW", "AU"]).unwrap();
        let rows = [
            ("GB", 54.0, -2.0),
            ("FR", 46.0, 2.0),
            ("ES", 40.0, -4.0),
            ("US", 38.0, -97.0),
            ("KW", 29.5, 47.75),
            ("AU", -25.0, 135.0),
        ];
        let t = CentroidTable::new(&reg, rows).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let p = (rng.random_range(-90.0..=90.0), rng.random_range(-180.0..=180.0));
            let got = t.resolve_country(GeoPoint::new(p.0, p.1).unwrap(), &reg).unwrap();
            assert_eq!(got, brute_force_nearest(p, &rows), "point {p:?}");
        }
    }

    #[test]
    fn unknown_codes_rejected_not_registered() {
        let reg = registry();
        let ev = |loc| GeoEvent {
            user_id: "u".into(),
            timestamp: chrono::DateTime::from_timestamp(0, 0).unwrap(),
            location: loc,
        };
        let (out, stats) = resolve_events(
            vec![ev(Location::Country("DE".into())), ev(Location::Country("ES".into()))],
            &reg,
            None,
        )
        .unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].country, 2);
        assert_eq!(stats.count(RejectReason::UnknownCountry), 1);
        assert_eq!(reg.len(), 3);

        let err = resolve_events(vec![ev(Location::Point(GeoPoint { lat: 0.0, lon: 0.0 }))], &reg, None);
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
