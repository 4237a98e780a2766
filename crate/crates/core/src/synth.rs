//! Synthetic worlds with known spatial dependence, for recovery and
//! prediction checks.
//!
//! Two generators are available. `GaussianField` gives every station pair
//! the Kendall τ of the tree-1 link, ρ_ij = sin(π/2 · tanh(h₁(i, j))), and
//! samples the resulting Gaussian copula; the estimand of the spatial fit
//! is then the pseudo-true β maximising the population composite
//! likelihood (see [`pseudo_true_beta`]). `LinkedVine` samples one global
//! C-vine ordered by station index whose edges up to tree 3 take their
//! parameters from the links and are independent above.

use chrono::{Duration, NaiveDate};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bicop::{Family, FamilyKind, PairCopula, U_EPS};
use crate::cvine::{correlation_from_partials, partial_correlations, CVine};
use crate::error::{Error, Result};
use crate::geo::{CovariateTable, Station};
use crate::margins::{day_number, MarginalModel, Observations, ResidualLaw, StationMargin};
use crate::optim::{central_gradient, lbfgs, LbfgsOptions};
use crate::rng::CounterRng;
use crate::slcvcl::{spatial_copula, start_values, EdgeCovariates, SpatialParam, Standardizer};
use crate::structure::{edge_positions, VineCollection};

/// Default bounding box (lon, lat) and maximum elevation of random worlds.
pub const DEFAULT_LON: (f64, f64) = (6.0, 15.0);
pub const DEFAULT_LAT: (f64, f64) = (47.5, 55.0);
pub const DEFAULT_ELEV_MAX: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorldKind {
    GaussianField,
    LinkedVine,
}

/// Coefficients used when none are supplied: τ falls from about 0.77 at
/// 50 km to 0.3 at 800 km. Stronger decay or a larger elevation effect
/// quickly makes the implied correlation matrix indefinite.
pub fn default_beta() -> SpatialParam {
    let mut b = SpatialParam::zero();
    b.tree_mut(1).copy_from_slice(&[2.0, -0.25, -0.01]);
    b.tree_mut(2).copy_from_slice(&[0.6, -0.15, 0.05, 0.02]);
    b.tree_mut(3).copy_from_slice(&[0.3, -0.1, 0.02, 0.02, 0.02, 0.02]);
    b.nu_mut().copy_from_slice(&[1.5, 0.2, 0.1]);
    b
}

/// Stations drawn uniformly in a box.
pub fn random_stations(d: usize, seed: u64, lon: (f64, f64), lat: (f64, f64), elev_max: f64) -> Vec<Station> {
    let rng = CounterRng::new(seed).derive(0x5747);
    (0..d)
        .map(|i| {
            let i = i as u64;
            Station {
                id: i as usize + 1,
                name: format!("SYN{:03}", i + 1),
                lon: lon.0 + (lon.1 - lon.0) * rng.uniform(0, i),
                lat: lat.0 + (lat.1 - lat.0) * rng.uniform(1, i),
                elev: (elev_max * rng.uniform(2, i)).round(),
            }
        })
        .collect()
}

/// Stations on a regular lon/lat grid, row by row.
pub fn grid_stations(nx: usize, ny: usize, lon: (f64, f64), lat: (f64, f64), elev: f64) -> Vec<Station> {
    let step = |(a, b): (f64, f64), n: usize, i: usize| {
        if n > 1 {
            a + (b - a) * i as f64 / (n - 1) as f64
        } else {
            0.5 * (a + b)
        }
    };
    (0..ny)
        .flat_map(|y| (0..nx).map(move |x| (x, y)))
        .enumerate()
        .map(|(i, (x, y))| Station {
            id: i + 1,
            name: format!("GRD{:03}", i + 1),
            lon: step(lon, nx, x),
            lat: step(lat, ny, y),
            elev,
        })
        .collect()
}

/// Plausible temperature-like margins for the stations.
pub fn default_margins(stations: &[Station], seed: u64) -> MarginalModel {
    let rng = CounterRng::new(seed).derive(0x4d41);
    let margins = (0..stations.len() as u64)
        .map(|i| StationMargin {
            offset: rng.uniform(0, i) - 0.5,
            harmonics: [
                -2.0 + 0.4 * (rng.uniform(1, i) - 0.5),
                -8.5 + 1.0 * (rng.uniform(2, i) - 0.5),
                0.5,
                0.3,
            ],
            law: ResidualLaw {
                mu: 0.0,
                sigma: 2.5 + 0.5 * rng.uniform(3, i),
                eta: 8.0,
            },
            ar_phi: None,
        })
        .collect();
    MarginalModel {
        elev_intercept: 12.0,
        elev_slope: -0.0065,
        stations: margins,
        elevations: stations.iter().map(|s| s.elev).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub kind: WorldKind,
    pub stations: Vec<Station>,
    pub beta: SpatialParam,
    /// Families per tree level for `LinkedVine` worlds.
    pub families: [Family; 3],
    pub margins: MarginalModel,
    pub seed: u64,
}

impl SyntheticWorld {
    pub fn new(kind: WorldKind, stations: Vec<Station>, beta: SpatialParam, seed: u64) -> Result<Self> {
        if stations.len() < 4 {
            return Err(Error::InvalidInput(format!(
                "a synthetic world needs at least 4 stations, got {}",
                stations.len()
            )));
        }
        let margins = default_margins(&stations, seed);
        let world = SyntheticWorld {
            kind,
            stations,
            beta,
            families: [Family::GAUSSIAN; 3],
            margins,
            seed,
        };
        world.law()?;
        Ok(world)
    }

    /// A world with `d` random stations in the default box.
    pub fn random(kind: WorldKind, d: usize, beta: SpatialParam, seed: u64) -> Result<Self> {
        Self::new(
            kind,
            random_stations(d, seed, DEFAULT_LON, DEFAULT_LAT, DEFAULT_ELEV_MAX),
            beta,
            seed,
        )
    }

    pub fn with_families(mut self, families: [Family; 3]) -> Self {
        self.families = families;
        self
    }

    pub fn d(&self) -> usize {
        self.stations.len()
    }

    pub fn table(&self) -> Result<CovariateTable> {
        CovariateTable::build(&self.stations)
    }

    /// Pairwise Gaussian correlations of a `GaussianField` world.
    pub fn correlation(&self) -> Result<DMatrix<f64>> {
        let table = self.table()?;
        let d = self.d();
        let b = self.beta.tree(1);
        let r = DMatrix::from_fn(d, d, |i, j| {
            if i == j {
                1.0
            } else {
                let xi = b[0] + b[1] * table.log_dist(i, j) + b[2] * table.log_elev(i, j);
                (std::f64::consts::FRAC_PI_2 * xi.tanh()).sin()
            }
        });
        if r.clone().cholesky().is_none() {
            return Err(Error::InvalidParameter(
                "link coefficients give a correlation matrix that is not positive definite".into(),
            ));
        }
        Ok(r)
    }

    /// The global C-vine the world samples from, variables in station order.
    pub fn law(&self) -> Result<CVine> {
        match self.kind {
            WorldKind::GaussianField => {
                let partials = partial_correlations(&self.correlation()?);
                CVine::new(
                    partials
                        .iter()
                        .map(|t| t.iter().map(|&p| PairCopula::gaussian(p.clamp(-0.9999, 0.9999))).collect())
                        .collect::<Result<_>>()?,
                )
            }
            WorldKind::LinkedVine => {
                let table = self.table()?;
                let d = self.d();
                let mut vine = CVine::independence(d);
                for (l, k) in edge_positions(d) {
                    if l >= 3 {
                        break;
                    }
                    let given: Vec<usize> = (0..l).collect();
                    let cov = EdgeCovariates::build(
                        l,
                        k,
                        &given,
                        |a, b| table.log_dist(a, b),
                        |a, b| table.log_elev(a, b),
                    )?;
                    let (c, _) = spatial_copula(&cov, self.families[l], &self.beta);
                    vine.set_pair(l, k, c);
                }
                Ok(vine)
            }
        }
    }

    /// `n` daily observations from `start` plus the copula-scale truth.
    pub fn generate(&self, n: usize, start: NaiveDate) -> Result<(Observations, Vec<Vec<f64>>)> {
        let vine = self.law()?;
        let rng = CounterRng::new(self.seed).derive(0x4745);
        let d = self.d();
        let mut dates = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        let mut copula = Vec::with_capacity(n);
        for t in 0..n {
            let date = start + Duration::days(t as i64);
            let w: Vec<f64> = (0..d).map(|j| rng.uniform(j as u64, t as u64)).collect();
            let u: Vec<f64> = vine.sample(&w).into_iter().map(|x| x.clamp(U_EPS, 1.0 - U_EPS)).collect();
            let day = day_number(date);
            let y = (0..d)
                .map(|j| self.margins.from_copula_data(u[j], day, j))
                .collect::<Result<Vec<f64>>>()?;
            dates.push(date);
            values.push(y);
            copula.push(u);
        }
        let obs = Observations {
            dates,
            ids: self.stations.iter().map(|s| s.id).collect(),
            values,
        };
        Ok((obs, copula))
    }
}

/// Expected per-observation composite log-likelihood of an all-Gaussian
/// spatial model when the data are Gaussian with correlation `r`.
pub fn population_cll(
    collection: &VineCollection,
    covs: &[EdgeCovariates],
    r: &DMatrix<f64>,
    beta: &SpatialParam,
) -> f64 {
    let m = collection.vines[0].dim();
    let slot_rho: Vec<f64> = covs
        .iter()
        .map(|c| spatial_copula(c, Family::GAUSSIAN, beta).0.theta)
        .collect();
    collection
        .vines
        .iter()
        .zip(&collection.weights)
        .map(|(vine, w)| {
            let mut partials: Vec<Vec<f64>> = (0..m - 1).map(|l| Vec::with_capacity(m - 1 - l)).collect();
            for (e, &(l, _)) in edge_positions(m).iter().enumerate() {
                partials[l].push(slot_rho[vine.slots[e]]);
            }
            let model = correlation_from_partials(&partials);
            let sigma = DMatrix::from_fn(m, m, |a, b| r[(vine.roots[a], vine.roots[b])]);
            let Some(chol) = model.clone().cholesky() else {
                return f64::NEG_INFINITY;
            };
            let ln_det: f64 = chol.l().diagonal().iter().map(|x| 2.0 * x.ln()).sum();
            let inv = chol.inverse();
            let tr = ((inv - DMatrix::identity(m, m)) * sigma).trace();
            w * (-0.5 * ln_det - 0.5 * tr)
        })
        .sum()
}

/// The β maximising [`population_cll`]: what an all-Gaussian spatial fit
/// converges to as N grows. The ν block is left at zero.
pub fn pseudo_true_beta(collection: &VineCollection, covs: &[EdgeCovariates], r: &DMatrix<f64>) -> Result<SpatialParam> {
    let m = collection.vines[0].dim();
    // start from OLS on the true local partial correlations
    let mut truth = vec![PairCopula::independence(); collection.n_slots()];
    for vine in &collection.vines {
        let sub = DMatrix::from_fn(m, m, |a, b| r[(vine.roots[a], vine.roots[b])]);
        let p = partial_correlations(&sub);
        for (e, &(l, k)) in edge_positions(m).iter().enumerate() {
            truth[vine.slots[e]] = PairCopula::gaussian(p[l][k - l - 1].clamp(-0.9999, 0.9999))?;
        }
    }
    let mut start = start_values(&truth, covs)?;
    start.nu_mut().fill(0.0);
    let std = Standardizer::new(covs, &vec![Family::GAUSSIAN; covs.len()]);
    let n_tree = 13;
    let x0 = std.to_internal(&start.0);
    let full = |x: &[f64]| {
        let mut a = x0.clone();
        a[..n_tree].copy_from_slice(x);
        std.to_external(&a)
    };
    let f = |x: &[f64]| -population_cll(collection, covs, r, &full(x));
    let opts = LbfgsOptions {
        ftol: 1e-14,
        max_iter: 2000,
        ..Default::default()
    };
    let res = lbfgs(f, |x| central_gradient(f, x, 1e-6), &x0[..n_tree], &opts);
    if !res.value.is_finite() {
        return Err(Error::Numeric("population composite likelihood not finite".into()));
    }
    let mut out = full(&res.x);
    out.nu_mut().fill(0.0);
    Ok(out)
}

/// Default start date of generated series.
pub fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date")
}

/// Family triple for every tree of a `LinkedVine` world.
pub fn uniform_families(kind: FamilyKind) -> [Family; 3] {
    [Family::new(kind); 3]
}
