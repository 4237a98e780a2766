//! Station registry, pairwise spatial covariates and nearest neighbors.
//!
//! Stations carry 1-based ids in files; in memory they are addressed by
//! their 0-based position (`id - 1`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub lon: f64,
    pub lat: f64,
    pub elev: f64,
}

impl Location {
    pub fn new(lon: f64, lat: f64, elev: f64) -> Result<Self> {
        let loc = Location { lon, lat, elev };
        loc.validate()?;
        Ok(loc)
    }

    pub fn validate(&self) -> Result<()> {
        if !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::InvalidInput(format!("longitude {} outside [-180, 180]", self.lon)));
        }
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(Error::InvalidInput(format!("latitude {} outside [-90, 90]", self.lat)));
        }
        if !self.elev.is_finite() {
            return Err(Error::InvalidInput("elevation must be finite".into()));
        }
        Ok(())
    }

    fn same_place(&self, other: &Location) -> bool {
        self.lon == other.lon && self.lat == other.lat
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub id: usize,
    pub name: String,
    pub lon: f64,
    pub lat: f64,
    pub elev: f64,
}

impl Station {
    pub fn location(&self) -> Location {
        Location {
            lon: self.lon,
            lat: self.lat,
            elev: self.elev,
        }
    }
}

/// Great-circle (haversine) distance in kilometers.
pub fn haversine_km(a: &Location, b: &Location) -> Result<f64> {
    if a.same_place(b) {
        return Err(Error::InvalidInput(format!(
            "identical coordinates ({}, {}) have no log-distance",
            a.lon, a.lat
        )));
    }
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    Ok(2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin())
}

pub fn distance_km(a: &Station, b: &Station) -> Result<f64> {
    haversine_km(&a.location(), &b.location())
}

/// ln(|Δelev| + 1), finite for equal elevations.
pub fn log_elev_diff(a: f64, b: f64) -> f64 {
    (a - b).abs().ln_1p()
}

/// Check ids are exactly 1..=d in order and coordinates are valid.
pub fn validate_stations(stations: &[Station]) -> Result<()> {
    for (i, s) in stations.iter().enumerate() {
        if s.id != i + 1 {
            return Err(Error::InvalidInput(format!(
                "station ids must be contiguous from 1; position {} has id {}",
                i + 1,
                s.id
            )));
        }
        s.location().validate().map_err(|e| {
            Error::InvalidInput(format!("station {}: {e}", s.id))
        })?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateTable {
    d: usize,
    log_dist: Vec<f64>,
    log_elev: Vec<f64>,
}

impl CovariateTable {
    pub fn build(stations: &[Station]) -> Result<Self> {
        let d = stations.len();
        if d < 4 {
            return Err(Error::InvalidInput(format!("need at least 4 stations, got {d}")));
        }
        validate_stations(stations)?;
        let mut log_dist = vec![f64::NAN; d * d];
        let mut log_elev = vec![f64::NAN; d * d];
        for p in 0..d {
            for q in p + 1..d {
                let dist = distance_km(&stations[p], &stations[q]).map_err(|_| {
                    Error::InvalidInput(format!(
                        "stations {} and {} share coordinates",
                        stations[p].id, stations[q].id
                    ))
                })?;
                let ld = dist.ln();
                let le = log_elev_diff(stations[p].elev, stations[q].elev);
                for (a, b) in [(p, q), (q, p)] {
                    log_dist[a * d + b] = ld;
                    log_elev[a * d + b] = le;
                }
            }
        }
        Ok(CovariateTable { d, log_dist, log_elev })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// ln of the distance in km between stations `p` and `q` (0-based).
    pub fn log_dist(&self, p: usize, q: usize) -> f64 {
        debug_assert!(p != q);
        self.log_dist[p * self.d + q]
    }

    pub fn log_elev(&self, p: usize, q: usize) -> f64 {
        debug_assert!(p != q);
        self.log_elev[p * self.d + q]
    }

    /// A copy with every log-distance shifted by `c` (a change of units).
    pub fn shifted(&self, c: f64) -> Self {
        CovariateTable {
            d: self.d,
            log_dist: self.log_dist.iter().map(|v| v + c).collect(),
            log_elev: self.log_elev.clone(),
        }
    }

    /// The `k` nearest stations to `s`, nearest first; ties by lower index.
    pub fn nearest_neighbors(&self, s: usize, k: usize) -> Result<Vec<usize>> {
        if k >= self.d {
            return Err(Error::InvalidInput(format!(
                "asked for {k} neighbors among {} stations",
                self.d
            )));
        }
        let mut others: Vec<usize> = (0..self.d).filter(|&q| q != s).collect();
        others.sort_by(|&a, &b| {
            self.log_dist(s, a)
                .total_cmp(&self.log_dist(s, b))
                .then(a.cmp(&b))
        });
        others.truncate(k);
        Ok(others)
    }
}

/// Distances from a free location to every station, ordered by index.
pub fn distances_from(loc: &Location, stations: &[Station]) -> Result<Vec<f64>> {
    stations
        .iter()
        .map(|s| {
            haversine_km(loc, &s.location()).map_err(|_| {
                Error::InvalidInput(format!(
                    "location coincides with station {} ({})",
                    s.id, s.name
                ))
            })
        })
        .collect()
}

/// The `k` stations nearest to a free location; ties by lower index.
pub fn nearest_to_location(loc: &Location, stations: &[Station], k: usize) -> Result<Vec<usize>> {
    if k > stations.len() {
        return Err(Error::InvalidInput(format!(
            "asked for {k} neighbors among {} stations",
            stations.len()
        )));
    }
    let dist = distances_from(loc, stations)?;
    let mut idx: Vec<usize> = (0..stations.len()).collect();
    idx.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

pub fn read_stations_csv(path: impl AsRef<Path>) -> Result<Vec<Station>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let expected = ["id", "name", "lon", "lat", "elev"];
    if headers.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(Error::Format(format!(
            "{}: station header must be id,name,lon,lat,elev",
            path.display()
        )));
    }
    let mut out: Vec<Station> = Vec::new();
    for rec in rdr.deserialize() {
        let s: Station = rec.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        out.push(s);
    }
    out.sort_by_key(|s| s.id);
    validate_stations(&out)?;
    Ok(out)
}

pub fn write_stations_csv(path: impl AsRef<Path>, stations: &[Station]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in stations {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}
