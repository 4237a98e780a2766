//! Prediction at a new location from its three nearest stations.

use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;

use crate::bicop::{Family, U_EPS};
use crate::cvine::CVine;
use crate::error::{Error, Result};
use crate::geo::{haversine_km, log_elev_diff, Location, Station};
use crate::margins::{day_number, MarginalModel, Observations, SiteMargin};
use crate::rng::CounterRng;
use crate::slcvcl::{spatial_copula, ClampCounts, EdgeCovariates, SpatialParam};
use crate::stats::sorted_quantile;
use crate::structure::{build_predictive, edge_positions, PredictiveSpec};

/// Ensemble size used when none is given.
pub const DEFAULT_MEMBERS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveModel {
    pub spec: PredictiveSpec,
    /// C-vine on (p, q, r, s).
    pub vine: CVine,
    pub margin: SiteMargin,
    pub clamps: ClampCounts,
}

impl PredictiveModel {
    /// Spatial predictive vine for `location`; edges of tree l use
    /// `families[l - 1]`.
    pub fn new(
        location: &Location,
        stations: &[Station],
        beta: &SpatialParam,
        families: [Family; 3],
        margins: &MarginalModel,
    ) -> Result<Self> {
        let spec = build_predictive(location, stations)?;
        let d = stations.len();
        let point = |a: usize| if a == d { *location } else { stations[a].location() };
        // distances of distinct points; the new location differs from all
        // stations by construction
        let ld = |a: usize, b: usize| haversine_km(&point(a), &point(b)).map(f64::ln).unwrap_or(f64::NAN);
        let le = |a: usize, b: usize| log_elev_diff(point(a).elev, point(b).elev);
        let order: Vec<usize> = spec.neighbors.iter().copied().chain([d]).collect();
        let mut vine = CVine::independence(order.len());
        let mut clamps = ClampCounts::default();
        for (l, k) in edge_positions(order.len()) {
            let cov = EdgeCovariates::build(order[l], order[k], &order[..l], ld, le)?;
            if cov.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("prediction location coincides with a station".into()));
            }
            let (c, k_clamps) = spatial_copula(&cov, families[l], beta);
            clamps.theta += k_clamps.theta;
            clamps.nu += k_clamps.nu;
            vine.set_pair(l, k, c);
        }
        let margin = margins.at_location(location, stations)?;
        Ok(PredictiveModel {
            spec,
            vine,
            margin,
            clamps,
        })
    }

    fn check(u_pqr: &[f64]) -> Result<()> {
        if u_pqr.len() != 3 || u_pqr.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
            return Err(Error::InvalidInput(format!(
                "conditioning values must be three numbers in (0, 1), got {u_pqr:?}"
            )));
        }
        Ok(())
    }

    /// Draw u_s given the neighbours' copula values by inverting the
    /// conditional distribution at `w`.
    pub fn condition_sample(&self, u_pqr: &[f64], w: f64) -> Result<f64> {
        Self::check(u_pqr)?;
        Ok(self.vine.sample_last(u_pqr, w).clamp(U_EPS, 1.0 - U_EPS))
    }

    pub fn conditional_cdf(&self, u_pqr: &[f64], u_s: f64) -> Result<f64> {
        Self::check(u_pqr)?;
        Ok(self.vine.conditional_cdf_last(u_pqr, u_s))
    }

    /// c_{s|p,q,r}(u_s | u_pqr).
    pub fn predictive_density(&self, u_s: f64, u_pqr: &[f64]) -> Result<f64> {
        Self::check(u_pqr)?;
        let v = self.vine.conditional_ln_density_last(u_pqr, u_s).exp();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numeric(format!("predictive density not finite at u_s={u_s}")))
        }
    }

    /// Ensemble of `m` copula-scale draws for one time; draw `i` uses
    /// uniform `(stream, i)` of `rng`.
    pub fn ensemble(&self, u_pqr: &[f64], m: usize, rng: &CounterRng, stream: u64) -> Result<Vec<f64>> {
        Self::check(u_pqr)?;
        Ok((0..m as u64)
            .map(|i| self.vine.sample_last(u_pqr, rng.uniform(stream, i)).clamp(U_EPS, 1.0 - U_EPS))
            .collect())
    }
}

/// Summary of one predicted time step; statistics are NaN when the
/// neighbours were not all observed.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub date: NaiveDate,
    pub samples: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub q025: f64,
    pub q975: f64,
}

impl PredictionRow {
    pub fn is_missing(&self) -> bool {
        self.samples.is_empty()
    }

    fn from_samples(date: NaiveDate, samples: Vec<f64>) -> Self {
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        PredictionRow {
            date,
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            median: sorted_quantile(&sorted, 0.5),
            q025: sorted_quantile(&sorted, 0.025),
            q975: sorted_quantile(&sorted, 0.975),
            samples,
        }
    }

    fn missing(date: NaiveDate) -> Self {
        PredictionRow {
            date,
            samples: Vec::new(),
            mean: f64::NAN,
            median: f64::NAN,
            q025: f64::NAN,
            q975: f64::NAN,
        }
    }
}

/// RNG stream of a date, so draws do not depend on the requested range.
fn date_stream(date: NaiveDate) -> u64 {
    day_number(date) as i64 as u64
}

/// Original-scale ensembles for the requested dates.
///
/// `copula` is the N × d copula-scale training data aligned with
/// `obs.dates`; rows whose neighbours are missing are marked missing.
pub fn predict_series(
    model: &PredictiveModel,
    obs: &Observations,
    copula: &[Vec<f64>],
    dates: &[NaiveDate],
    m: usize,
    seed: u64,
) -> Result<Vec<PredictionRow>> {
    if m == 0 {
        return Err(Error::InvalidInput("ensemble size must be positive".into()));
    }
    let rows: Vec<usize> = dates
        .iter()
        .map(|&d| {
            obs.row_of(d)
                .ok_or_else(|| Error::MissingData(format!("no observations for {d}")))
        })
        .collect::<Result<_>>()?;
    let rng = CounterRng::new(seed);
    rows.par_iter()
        .zip(dates)
        .map(|(&t, &date)| {
            let u: Vec<f64> = model.spec.neighbors.iter().map(|&j| copula[t][j]).collect();
            if u.iter().any(|x| !x.is_finite()) {
                return Ok(PredictionRow::missing(date));
            }
            let day = day_number(date);
            let draws = model.ensemble(&u, m, &rng, date_stream(date))?;
            let samples = draws.into_iter().map(|x| model.margin.from_u(x, day)).collect();
            Ok(PredictionRow::from_samples(date, samples))
        })
        .collect()
}

fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        "NA".into()
    }
}

/// Prediction CSV: `time,mean,median,q025,q975` and, optionally, one
/// column per ensemble member.
pub fn write_predictions_csv(path: impl AsRef<Path>, rows: &[PredictionRow], with_samples: bool) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let m = rows.iter().map(|r| r.samples.len()).max().unwrap_or(0);
    write!(w, "time,mean,median,q025,q975")?;
    if with_samples {
        for i in 1..=m {
            write!(w, ",s{i}")?;
        }
    }
    writeln!(w)?;
    for r in rows {
        write!(
            w,
            "{},{},{},{},{}",
            r.date,
            fmt_num(r.mean),
            fmt_num(r.median),
            fmt_num(r.q025),
            fmt_num(r.q975)
        )?;
        if with_samples {
            for i in 0..m {
                write!(w, ",{}", r.samples.get(i).map_or("NA".into(), |&x| fmt_num(x)))?;
            }
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cvine::partial_correlations;
    use crate::geo::tests::st;
    use crate::special::{gauss_legendre, norm_cdf, norm_pdf, norm_quantile};
    use crate::stats::ks_distance;
    use crate::synth::{default_beta, default_margins};
    use nalgebra::DMatrix;

    fn stations() -> Vec<Station> {
        vec![
            st(1, 10.0, 50.0, 100.0),
            st(2, 10.6, 50.2, 300.0),
            st(3, 9.5, 50.5, 200.0),
            st(4, 10.2, 49.4, 500.0),
            st(5, 11.5, 51.0, 50.0),
            st(6, 8.8, 49.0, 700.0),
        ]
    }

    fn model(family: Family) -> PredictiveModel {
        let s = stations();
        let mut beta = default_beta();
        beta.nu_mut().copy_from_slice(&[1.2, 0.1, 0.1]);
        PredictiveModel::new(
            &Location::new(10.15, 50.05, 250.0).unwrap(),
            &s,
            &beta,
            [family; 3],
            &default_margins(&s, 1),
        )
        .unwrap()
    }

    #[test]
    fn layout_and_ranges() {
        let m = model(Family::STUDENT_T);
        assert_eq!(m.spec.neighbors, vec![0, 1, 2]);
        for tree in m.vine.pairs() {
            for c in tree {
                assert!(c.theta.abs() < 1.0 && c.nu > 2.0 && c.nu <= 100.0);
            }
        }
        let s = stations();
        assert!(PredictiveModel::new(&s[2].location(), &s, &default_beta(), [Family::STUDENT_T; 3], &default_margins(&s, 1)).is_err());
    }

    #[test]
    fn independence_passes_through() {
        let mut m = model(Family::GAUSSIAN);
        m.vine = CVine::independence(4);
        assert_eq!(m.condition_sample(&[0.2, 0.7, 0.4], 0.33).unwrap(), 0.33);
        assert_eq!(m.predictive_density(0.8, &[0.2, 0.7, 0.4]).unwrap(), 1.0);
    }

    #[test]
    fn sample_cdf_roundtrip_and_monotone() {
        let m = model(Family::STUDENT_T);
        let rng = CounterRng::new(4);
        for i in 0..1000 {
            let u: Vec<f64> = (0..3).map(|j| rng.uniform(j, i)).collect();
            let w = rng.uniform(3, i);
            let x = m.condition_sample(&u, w).unwrap();
            assert!((m.conditional_cdf(&u, x).unwrap() - w).abs() < 1e-7);
            let x2 = m.condition_sample(&u, (w + 0.01).min(0.999)).unwrap();
            assert!(x2 > x || w + 0.01 >= 0.999);
        }
    }

    #[test]
    fn density_normalizes() {
        let m = model(Family::STUDENT_T);
        let (x, w) = gauss_legendre(20);
        // integrate on the normal-score scale to resolve the tails
        for u in [[0.3, 0.5, 0.6], [0.05, 0.1, 0.2], [0.9, 0.8, 0.95]] {
            let mut total = 0.0;
            let panels = 60;
            let h = 16.0 / panels as f64;
            for p in 0..panels {
                let lo = -8.0 + p as f64 * h;
                for (xi, wi) in x.iter().zip(&w) {
                    let z = lo + 0.5 * h * (xi + 1.0);
                    total += 0.5 * h * wi * norm_pdf(z) * m.predictive_density(norm_cdf(z), &u).unwrap();
                }
            }
            assert!((total - 1.0).abs() < 1e-3, "{u:?}: {total}");
        }
    }

    #[test]
    fn gaussian_matches_normal_conditioning() {
        let m = model(Family::GAUSSIAN);
        let partials: Vec<Vec<f64>> = m.vine.pairs().iter().map(|t| t.iter().map(|c| c.theta).collect()).collect();
        let r = crate::cvine::correlation_from_partials(&partials);
        assert_eq!(partial_correlations(&r).len(), 3);
        let s12 = r.view((0, 3), (3, 1)).clone_owned();
        let s11 = r.view((0, 0), (3, 3)).clone_owned();
        let inv = s11.try_inverse().unwrap();
        let coef = inv * &s12;
        let var = 1.0 - (s12.transpose() * &coef)[(0, 0)];
        let rng = CounterRng::new(8);
        for i in 0..200 {
            // conditioning values drawn from the model, as in prediction
            let w: Vec<f64> = (0..4).map(|j| rng.uniform(j, i)).collect();
            let u = m.vine.sample(&w)[..3].to_vec();
            let us = rng.uniform(4, i);
            let z = DMatrix::from_iterator(3, 1, u.iter().map(|&x| norm_quantile(x)));
            let mean = (coef.transpose() * z)[(0, 0)];
            let zs = norm_quantile(us);
            let dens = norm_pdf((zs - mean) / var.sqrt()) / var.sqrt() / norm_pdf(zs);
            let got = m.predictive_density(us, &u).unwrap();
            assert!((got - dens).abs() < 1e-6 * dens.max(1.0), "{got} vs {dens} at {u:?} {us}");
            let cdf = norm_cdf((zs - mean) / var.sqrt());
            let got_cdf = m.conditional_cdf(&u, us).unwrap();
            assert!((got_cdf - cdf).abs() < 1e-6, "{got_cdf} vs {cdf}");
        }
    }

    #[test]
    fn positive_dependence_raises_median() {
        let m = model(Family::STUDENT_T);
        let lo = m.condition_sample(&[0.3, 0.3, 0.3], 0.5).unwrap();
        let hi = m.condition_sample(&[0.7, 0.7, 0.7], 0.5).unwrap();
        assert!(hi >= lo);
    }

    #[test]
    fn ks_against_conditional_cdf() {
        let m = model(Family::STUDENT_T);
        let u = [0.35, 0.6, 0.2];
        let draws = m.ensemble(&u, 20_000, &CounterRng::new(12), 0).unwrap();
        let ks = ks_distance(&draws, |x| m.conditional_cdf(&u, x).unwrap());
        assert!(ks < 0.015, "ks {ks}");
    }

    #[test]
    fn series_is_seeded_and_marks_missing() {
        let m = model(Family::STUDENT_T);
        let start = NaiveDate::from_ymd_opt(2001, 3, 1).unwrap();
        let dates: Vec<NaiveDate> = (0..5).map(|i| start + chrono::Duration::days(i)).collect();
        let mut copula = vec![vec![0.5; 6]; 5];
        copula[2][1] = f64::NAN;
        let obs = Observations {
            dates: dates.clone(),
            ids: (1..=6).collect(),
            values: vec![vec![1.0; 6]; 5],
        };
        let a = predict_series(&m, &obs, &copula, &dates, 50, 7).unwrap();
        let b = predict_series(&m, &obs, &copula, &dates[1..], 50, 7).unwrap();
        for (x, y) in a[1..].iter().zip(&b) {
            assert_eq!((x.date, &x.samples), (y.date, &y.samples));
        }
        assert!(a[2].is_missing() && a[2].mean.is_nan());
        assert!(a[0].q025 <= a[0].median && a[0].median <= a[0].q975);
        let late = NaiveDate::from_ymd_opt(2002, 1, 1).unwrap();
        assert!(matches!(predict_series(&m, &obs, &copula, &[late], 5, 1), Err(Error::MissingData(_))));
    }

    #[test]
    fn single_median_draw() {
        let m = model(Family::GAUSSIAN);
        let u = [0.5, 0.5, 0.5];
        let x = m.condition_sample(&u, 0.5).unwrap();
        // symmetric margins and symmetric copulas: median path at the centre
        assert!((x - 0.5).abs() < 1e-9);
    }
}
