//! Marginal preprocessing: a seasonal regression per station, a Student-t
//! location-scale law for the residuals, the probability integral
//! transform to copula scale and its inverse.
//!
//! Mean model: y = a + b·elev + δ_s + Σ harmonics(t). The per-station fit
//! cannot separate the elevation slope from the intercept, so (a, b) come
//! from regressing the fitted station intercepts on elevation and δ_s is the
//! station's deviation from that line.

use std::f64::consts::PI;
use std::path::Path;

use chrono::NaiveDate;
use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bicop::U_EPS;
use crate::error::{Error, Result};
use crate::geo::{distances_from, Location, Station};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::special::{t_cdf, t_quantile};

pub const YEAR_DAYS: f64 = 365.25;
pub const SIGMA_MIN: f64 = 1e-6;
pub const ETA_MAX: f64 = 500.0;
/// Inverse-distance weighting for new locations.
pub const IDW_POWER: f64 = 2.0;
pub const IDW_NEIGHBORS: usize = 3;

/// Days since 1970-01-01.
pub fn day_number(date: NaiveDate) -> f64 {
    let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid epoch");
    (date - epoch).num_days() as f64
}

fn harmonics(t: f64) -> [f64; 4] {
    let w = 2.0 * PI * t / YEAR_DAYS;
    [w.sin(), w.cos(), (2.0 * w).sin(), (2.0 * w).cos()]
}

/// Observation matrix with one row per date and one column per station.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    pub dates: Vec<NaiveDate>,
    /// 1-based station ids of the columns.
    pub ids: Vec<usize>,
    /// `values[t][j]`; missing entries are NaN.
    pub values: Vec<Vec<f64>>,
}

impl Observations {
    pub fn n_times(&self) -> usize {
        self.dates.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[j]).collect()
    }

    pub fn column_of(&self, id: usize) -> Option<usize> {
        self.ids.iter().position(|&i| i == id)
    }

    pub fn row_of(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    pub fn has_missing(&self) -> bool {
        self.values.iter().flatten().any(|v| !v.is_finite())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let fmt = |msg: String| Error::Format(format!("{}: {msg}", path.display()));
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        if headers.len() < 2 {
            return Err(fmt("need a date column and at least one station column".into()));
        }
        let ids = headers
            .iter()
            .skip(1)
            .map(|h| {
                h.trim()
                    .parse::<usize>()
                    .map_err(|_| fmt(format!("column header '{h}' is not a station id")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut dates = Vec::new();
        let mut values = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != headers.len() {
                return Err(fmt(format!("row {} has {} fields", line + 2, rec.len())));
            }
            let date = NaiveDate::parse_from_str(rec[0].trim(), "%Y-%m-%d")
                .map_err(|e| fmt(format!("row {}: bad date '{}': {e}", line + 2, &rec[0])))?;
            let row = rec
                .iter()
                .skip(1)
                .map(|f| {
                    let f = f.trim();
                    if f.is_empty() || f.eq_ignore_ascii_case("na") || f.eq_ignore_ascii_case("nan") {
                        Ok(f64::NAN)
                    } else {
                        f.parse::<f64>()
                            .map_err(|_| fmt(format!("row {}: bad number '{f}'", line + 2)))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            dates.push(date);
            values.push(row);
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(fmt("dates must be strictly increasing".into()));
        }
        Ok(Observations { dates, ids, values })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["date".to_string()];
        header.extend(self.ids.iter().map(|i| i.to_string()));
        w.write_record(&header)?;
        for (date, row) in self.dates.iter().zip(&self.values) {
            let mut rec = vec![date.format("%Y-%m-%d").to_string()];
            rec.extend(row.iter().map(|v| {
                if v.is_finite() {
                    v.to_string()
                } else {
                    "NA".to_string()
                }
            }));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Student-t location-scale residual law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualLaw {
    pub mu: f64,
    pub sigma: f64,
    pub eta: f64,
}

impl ResidualLaw {
    pub fn cdf(&self, e: f64) -> f64 {
        t_cdf((e - self.mu) / self.sigma, self.eta)
    }

    pub fn quantile(&self, p: f64) -> f64 {
        self.mu + self.sigma * t_quantile(p, self.eta)
    }

    fn neg_loglik(&self, e: &[f64]) -> f64 {
        let lnorm = crate::special::t_ln_pdf(0.0, self.eta);
        let k = 0.5 * (self.eta + 1.0);
        let s: f64 = e
            .iter()
            .map(|&x| {
                let z = (x - self.mu) / self.sigma;
                lnorm - k * (z * z / self.eta).ln_1p() - self.sigma.ln()
            })
            .sum();
        -s
    }

    /// Maximum likelihood fit.
    pub fn fit(e: &[f64]) -> Result<Self> {
        let n = e.len() as f64;
        let mean = e.iter().sum::<f64>() / n;
        let sd = (e.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        let from = |z: &[f64]| ResidualLaw {
            mu: z[0],
            sigma: SIGMA_MIN + z[1].exp(),
            eta: (2.0 + z[2].exp()).min(ETA_MAX),
        };
        let scale = sd.max(SIGMA_MIN);
        // optimize on standardized residuals for a well-scaled simplex
        let std: Vec<f64> = e.iter().map(|x| (x - mean) / scale).collect();
        let obj = |z: &[f64]| {
            let law = ResidualLaw {
                mu: z[0],
                sigma: (SIGMA_MIN / scale) + z[1].exp(),
                eta: (2.0 + z[2].exp()).min(ETA_MAX),
            };
            law.neg_loglik(&std)
        };
        let opts = NelderMeadOptions {
            initial_step: 0.3,
            ftol: 1e-12,
            max_evals: 5000,
        };
        let mut res = nelder_mead(obj, &[0.0, 0.0, 6f64.ln()], &opts);
        if !res.converged {
            res = nelder_mead(obj, &res.x, &opts);
        }
        if !res.value.is_finite() {
            return Err(Error::NonConvergence("residual t fit failed".into()));
        }
        if !res.converged {
            return Err(Error::NonConvergence(
                "residual t fit did not converge".into(),
            ));
        }
        let z = &res.x;
        let law = from(&[mean + scale * z[0], (scale * z[1].exp()).max(1e-300).ln(), z[2]]);
        Ok(ResidualLaw {
            sigma: law.sigma.max(SIGMA_MIN),
            ..law
        })
    }
}

/// Mean model and residual law at a single site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiteMargin {
    pub intercept: f64,
    /// Coefficients of sin/cos of the annual and semiannual cycle.
    pub harmonics: [f64; 4],
    pub law: ResidualLaw,
}

impl SiteMargin {
    pub fn mean(&self, t: f64) -> f64 {
        let h = harmonics(t);
        self.intercept + self.harmonics.iter().zip(h).map(|(c, x)| c * x).sum::<f64>()
    }

    pub fn to_u(&self, y: f64, t: f64) -> f64 {
        self.law.cdf(y - self.mean(t)).clamp(U_EPS, 1.0 - U_EPS)
    }

    pub fn from_u(&self, u: f64, t: f64) -> f64 {
        self.mean(t) + self.law.quantile(u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationMargin {
    /// Deviation of the station intercept from the elevation line.
    pub offset: f64,
    pub harmonics: [f64; 4],
    pub law: ResidualLaw,
    /// AR(1) coefficient when residuals are pre-whitened.
    pub ar_phi: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MarginOptions {
    pub ar1: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalModel {
    pub elev_intercept: f64,
    pub elev_slope: f64,
    pub stations: Vec<StationMargin>,
    /// Station elevations the model was fitted with.
    pub elevations: Vec<f64>,
}

fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    let chol = xtx
        .cholesky()
        .ok_or_else(|| Error::Numeric("degenerate design matrix".into()))?;
    let beta = chol.solve(&xty);
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Numeric("degenerate design matrix".into()));
    }
    Ok(beta)
}

fn ar1_coefficient(e: &[f64]) -> f64 {
    let num: f64 = e.windows(2).map(|w| w[0] * w[1]).sum();
    let den: f64 = e[..e.len() - 1].iter().map(|x| x * x).sum();
    if den > 0.0 {
        (num / den).clamp(-0.99, 0.99)
    } else {
        0.0
    }
}

fn whiten(e: &[f64], phi: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(e.len());
    for (i, &x) in e.iter().enumerate() {
        out.push(if i == 0 { x } else { x - phi * e[i - 1] });
    }
    out
}

/// Per-station seasonal regression and residual fit.
pub fn fit_margins(obs: &Observations, stations: &[Station], opts: MarginOptions) -> Result<MarginalModel> {
    let d = stations.len();
    check_columns(obs, d)?;
    if obs.has_missing() {
        return Err(Error::MissingData("fitting margins requires complete observations".into()));
    }
    let n = obs.n_times();
    if n < 6 {
        return Err(Error::InvalidInput(format!("need at least 6 time points, got {n}")));
    }
    let times: Vec<f64> = obs.dates.iter().map(|&d| day_number(d)).collect();
    let x = DMatrix::from_fn(n, 5, |i, j| {
        if j == 0 {
            1.0
        } else {
            harmonics(times[i])[j - 1]
        }
    });
    let mut intercepts = Vec::with_capacity(d);
    let mut fits = Vec::with_capacity(d);
    for j in 0..d {
        let y = DVector::from_vec(obs.column(j));
        let beta = least_squares(&x, &y)?;
        let resid: Vec<f64> = (&y - &x * &beta).iter().copied().collect();
        let (innov, phi) = if opts.ar1 {
            let phi = ar1_coefficient(&resid);
            (whiten(&resid, phi), Some(phi))
        } else {
            (resid, None)
        };
        let law = ResidualLaw::fit(&innov)
            .map_err(|e| Error::NonConvergence(format!("station {}: {e}", stations[j].id)))?;
        intercepts.push(beta[0]);
        fits.push(([beta[1], beta[2], beta[3], beta[4]], law, phi));
    }
    let elevations: Vec<f64> = stations.iter().map(|s| s.elev).collect();
    let (a, b) = line_fit(&elevations, &intercepts);
    let stations_out = fits
        .into_iter()
        .enumerate()
        .map(|(j, (harm, law, ar_phi))| StationMargin {
            offset: intercepts[j] - (a + b * elevations[j]),
            harmonics: harm,
            law,
            ar_phi,
        })
        .collect();
    Ok(MarginalModel {
        elev_intercept: a,
        elev_slope: b,
        stations: stations_out,
        elevations,
    })
}

fn line_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx <= 1e-12 * n {
        (my, 0.0)
    } else {
        let b = sxy / sxx;
        (my - b * mx, b)
    }
}

fn check_columns(obs: &Observations, d: usize) -> Result<()> {
    let expected: Vec<usize> = (1..=d).collect();
    if obs.ids != expected {
        return Err(Error::InvalidInput(format!(
            "observation columns {:?} do not match station ids 1..={d}",
            obs.ids
        )));
    }
    Ok(())
}

impl MarginalModel {
    pub fn d(&self) -> usize {
        self.stations.len()
    }

    pub fn uses_ar1(&self) -> bool {
        self.stations.iter().any(|s| s.ar_phi.is_some())
    }

    /// Margin of training station `j` (0-based).
    pub fn site(&self, j: usize) -> SiteMargin {
        let s = &self.stations[j];
        SiteMargin {
            intercept: self.elev_intercept + self.elev_slope * self.elevations[j] + s.offset,
            harmonics: s.harmonics,
            law: s.law,
        }
    }

    /// Copula-scale data (N × d) from original observations.
    pub fn to_copula_data(&self, obs: &Observations) -> Result<Vec<Vec<f64>>> {
        check_columns(obs, self.d())?;
        let sites: Vec<SiteMargin> = (0..self.d()).map(|j| self.site(j)).collect();
        let times: Vec<f64> = obs.dates.iter().map(|&d| day_number(d)).collect();
        let mut out = vec![vec![0.0; self.d()]; obs.n_times()];
        for (j, site) in sites.iter().enumerate() {
            let mut prev_resid: Option<f64> = None;
            for (i, &t) in times.iter().enumerate() {
                let y = obs.values[i][j];
                let resid = y - site.mean(t);
                let innov = match (self.stations[j].ar_phi, prev_resid) {
                    (Some(phi), Some(p)) if p.is_finite() => resid - phi * p,
                    _ => resid,
                };
                prev_resid = Some(resid);
                out[i][j] = if y.is_finite() {
                    site.law.cdf(innov).clamp(U_EPS, 1.0 - U_EPS)
                } else {
                    f64::NAN
                };
            }
        }
        Ok(out)
    }

    /// Original-scale value at training station `j` and day number `t`.
    pub fn from_copula_data(&self, u: f64, t: f64, j: usize) -> Result<f64> {
        if self.stations[j].ar_phi.is_some() {
            return Err(Error::InvalidInput(
                "inverse transform of AR(1) margins needs the previous residual".into(),
            ));
        }
        Ok(self.site(j).from_u(u, t))
    }

    /// Interpolated margin at a new location.
    pub fn at_location(&self, loc: &Location, stations: &[Station]) -> Result<SiteMargin> {
        if stations.len() != self.d() {
            return Err(Error::InvalidInput("station list does not match margin model".into()));
        }
        if self.uses_ar1() {
            return Err(Error::InvalidInput(
                "margins with AR(1) pre-whitening cannot be transferred to new locations".into(),
            ));
        }
        warn_if_outside(loc, stations);
        let dist = distances_from(loc, stations)?;
        let mut idx: Vec<usize> = (0..dist.len()).collect();
        idx.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
        idx.truncate(IDW_NEIGHBORS);
        let w: Vec<f64> = idx.iter().map(|&j| dist[j].powf(-IDW_POWER)).collect();
        let wsum: f64 = w.iter().sum();
        let avg = |f: &dyn Fn(&StationMargin) -> f64| -> f64 {
            idx.iter().zip(&w).map(|(&j, wj)| wj * f(&self.stations[j])).sum::<f64>() / wsum
        };
        let mut harm = [0.0; 4];
        for (k, h) in harm.iter_mut().enumerate() {
            *h = avg(&|s| s.harmonics[k]);
        }
        Ok(SiteMargin {
            intercept: self.elev_intercept + self.elev_slope * loc.elev + avg(&|s| s.offset),
            harmonics: harm,
            law: ResidualLaw {
                mu: avg(&|s| s.law.mu),
                sigma: avg(&|s| s.law.sigma),
                eta: avg(&|s| s.law.eta),
            },
        })
    }
}

fn warn_if_outside(loc: &Location, stations: &[Station]) {
    let range = |f: &dyn Fn(&Station) -> f64| {
        stations
            .iter()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let (lon0, lon1) = range(&|s| s.lon);
    let (lat0, lat1) = range(&|s| s.lat);
    let (e0, e1) = range(&|s| s.elev);
    if loc.lon < lon0 || loc.lon > lon1 || loc.lat < lat0 || loc.lat > lat1 {
        warn!("location ({}, {}) lies outside the station bounding box", loc.lon, loc.lat);
    }
    if loc.elev < e0 || loc.elev > e1 {
        warn!("elevation {} outside the station range [{e0}, {e1}]", loc.elev);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    fn stations(n: usize) -> Vec<Station> {
        (0..n)
            .map(|i| Station {
                id: i + 1,
                name: format!("S{}", i + 1),
                lon: 7.0 + i as f64 * 0.5,
                lat: 50.0 + (i % 2) as f64 * 0.3,
                elev: 100.0 * i as f64,
            })
            .collect()
    }

    fn dates(n: usize) -> Vec<NaiveDate> {
        let start = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
        (0..n).map(|i| start + chrono::Days::new(i as u64)).collect()
    }

    fn synthetic(n: usize, noise: impl Fn(usize, usize) -> f64) -> (Observations, Vec<Station>) {
        let st = stations(4);
        let ds = dates(n);
        let values = ds
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let h = harmonics(day_number(d));
                (0..4)
                    .map(|j| 10.0 - 0.006 * st[j].elev + 7.0 * h[1] + 1.5 * h[0] - 0.4 * h[3] + noise(i, j))
                    .collect()
            })
            .collect();
        (
            Observations {
                dates: ds,
                ids: vec![1, 2, 3, 4],
                values,
            },
            st,
        )
    }

    #[test]
    fn exact_seasonal_signal_has_tiny_residuals() {
        let (obs, st) = synthetic(800, |_, _| 0.0);
        let m = fit_margins(&obs, &st, MarginOptions::default()).unwrap();
        for s in &m.stations {
            assert!(s.law.sigma < 1e-5, "{}", s.law.sigma);
            assert!((s.harmonics[1] - 7.0).abs() < 1e-8);
        }
        assert!((m.elev_slope + 0.006).abs() < 1e-9);
    }

    #[test]
    fn recovers_coefficients_and_roundtrips() {
        let rng = CounterRng::new(3);
        let (obs, st) = synthetic(1500, |i, j| {
            0.8 * t_quantile(rng.uniform(j as u64, i as u64), 5.0)
        });
        let m = fit_margins(&obs, &st, MarginOptions::default()).unwrap();
        for s in &m.stations {
            // standard error of a harmonic coefficient ≈ σ·sd(t5)·sqrt(2/N) ≈ 0.04
            assert!((s.harmonics[0] - 1.5).abs() < 0.12);
            assert!((s.harmonics[1] - 7.0).abs() < 0.12);
            assert!((s.law.sigma - 0.8).abs() < 0.1, "{}", s.law.sigma);
            assert!(s.law.eta > 3.0 && s.law.eta < 9.0, "{}", s.law.eta);
        }
        let u = m.to_copula_data(&obs).unwrap();
        for (i, row) in u.iter().enumerate() {
            let t = day_number(obs.dates[i]);
            for (j, &uj) in row.iter().enumerate() {
                assert!(uj > 0.0 && uj < 1.0);
                let y = m.from_copula_data(uj, t, j).unwrap();
                assert!((y - obs.values[i][j]).abs() < 1e-8);
            }
        }
        let col: Vec<f64> = u.iter().map(|r| r[2]).collect();
        let ks = crate::stats::ks_distance(&col, |x| x);
        // critical value at level 0.01 is 1.628/sqrt(N)
        assert!(ks < 1.628 / (1500f64).sqrt(), "{ks}");
    }

    #[test]
    fn median_maps_to_location() {
        let site = SiteMargin {
            intercept: 3.0,
            harmonics: [0.0; 4],
            law: ResidualLaw {
                mu: 0.25,
                sigma: 2.0,
                eta: 6.0,
            },
        };
        assert!((site.to_u(3.25, 100.0) - 0.5).abs() < 1e-15);
        assert!((site.from_u(0.5, 100.0) - 3.25).abs() < 1e-12);
        assert!(site.from_u(0.4, 0.0) < site.from_u(0.41, 0.0));
    }

    #[test]
    fn constant_series_has_no_seasonality() {
        let rng = CounterRng::new(8);
        let st = stations(4);
        let ds = dates(730);
        let values = (0..730)
            .map(|i| (0..4).map(|j| 5.0 + 1e-3 * (rng.uniform(j, i) - 0.5)).collect())
            .collect();
        let obs = Observations {
            dates: ds,
            ids: vec![1, 2, 3, 4],
            values,
        };
        let m = fit_margins(&obs, &st, MarginOptions::default()).unwrap();
        for s in &m.stations {
            assert!(s.harmonics.iter().all(|c| c.abs() < 1e-4));
        }
    }

    #[test]
    fn interpolates_shared_margins() {
        let (obs, st) = synthetic(400, |i, _| 0.3 * ((i * 7919 % 101) as f64 / 101.0 - 0.5));
        let m = fit_margins(&obs, &st, MarginOptions::default()).unwrap();
        let loc = Location::new(7.25, 50.15, 50.0).unwrap();
        let site = m.at_location(&loc, &st).unwrap();
        // all stations share the same noise, so their laws coincide
        assert!((site.law.sigma - m.stations[0].law.sigma).abs() < 1e-6);
        assert!((site.harmonics[1] - m.stations[0].harmonics[1]).abs() < 1e-9);
        let on = Location::new(st[1].lon, st[1].lat, 0.0).unwrap();
        assert!(m.at_location(&on, &st).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        let (mut obs, st) = synthetic(50, |_, _| 0.0);
        obs.values[3][1] = f64::NAN;
        assert!(matches!(
            fit_margins(&obs, &st, MarginOptions::default()),
            Err(Error::MissingData(_))
        ));
        let (mut obs, st) = synthetic(50, |_, _| 0.0);
        obs.ids = vec![1, 2, 4, 3];
        assert!(fit_margins(&obs, &st, MarginOptions::default()).is_err());
        let (obs, st) = synthetic(4, |_, _| 0.0);
        assert!(fit_margins(&obs, &st, MarginOptions::default()).is_err());
    }

    #[test]
    fn ar1_prewhitening() {
        let rng = CounterRng::new(5);
        let mut noise = vec![[0.0f64; 4]; 1200];
        for i in 0..1200 {
            for j in 0..4 {
                let z = crate::special::norm_quantile(rng.uniform(j as u64 + 10, i as u64));
                let prev = if i > 0 { noise[i - 1][j] } else { 0.0 };
                noise[i][j] = 0.6 * prev + z;
            }
        }
        let (obs, st) = synthetic(1200, |i, j| noise[i][j]);
        let m = fit_margins(&obs, &st, MarginOptions { ar1: true }).unwrap();
        for s in &m.stations {
            assert!((s.ar_phi.unwrap() - 0.6).abs() < 0.08);
        }
        assert!(m.from_copula_data(0.5, 0.0, 0).is_err());
        let loc = Location::new(7.25, 50.15, 50.0).unwrap();
        assert!(m.at_location(&loc, &st).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let (mut obs, _) = synthetic(5, |i, j| (i * j) as f64 * 0.1);
        obs.values[2][1] = f64::NAN;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("obs.csv");
        obs.write_csv(&p).unwrap();
        let back = Observations::read_csv(&p).unwrap();
        assert_eq!(back.dates, obs.dates);
        assert!(back.values[2][1].is_nan());
        assert_eq!(back.values[3], obs.values[3]);
        std::fs::write(&p, "date,1\n2001-13-01,3\n").unwrap();
        assert!(matches!(Observations::read_csv(&p), Err(Error::Format(_))));
    }
}
