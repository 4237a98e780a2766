//! Spatial reparametrisation of the local C-vine composite likelihood: every
//! pair-copula parameter is generated from 16 regression coefficients on
//! log-distances and log-elevation differences.

use std::collections::BTreeMap;
use std::fmt;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::de::Error as _;
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::bicop::{fisher_z, theta_from_tau, Family, FamilyKind, PairCopula, NU_MAX, NU_MIN};
use crate::error::{Error, Result};
use crate::geo::CovariateTable;
use crate::lcvcl::{CompositeData, FittedLCVCL, FD_STEP};
use crate::optim::{lbfgs, LbfgsOptions};
use crate::structure::VineCollection;

pub const N_BETA: usize = 16;
/// Smallest degrees of freedom produced by the ν link.
pub const NU_FLOOR: f64 = NU_MIN + 1e-6;

pub const BETA_NAMES: [&str; N_BETA] = [
    "beta_0;1",
    "beta_ij;1",
    "beta_E_ij;1",
    "beta_0;2",
    "beta_ij;2",
    "beta_ik;2",
    "beta_jk;2",
    "beta_0;3",
    "beta_ij;3",
    "beta_ik;3",
    "beta_im;3",
    "beta_jk;3",
    "beta_jm;3",
    "beta_0^nu",
    "beta_1^nu",
    "beta_2^nu",
];

/// Offsets of the tree blocks inside the coefficient vector.
const TREE_RANGE: [(usize, usize); 3] = [(0, 3), (3, 7), (7, 13)];
const NU_RANGE: (usize, usize) = (13, 16);

/// Coefficients β = (β₁, β₂, β₃, β_ν) in that order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialParam(pub [f64; N_BETA]);

impl SpatialParam {
    pub fn zero() -> Self {
        SpatialParam([0.0; N_BETA])
    }

    pub fn from_slice(x: &[f64]) -> Result<Self> {
        let arr: [f64; N_BETA] = x.try_into().map_err(|_| {
            Error::InvalidInput(format!("spatial parameter needs {N_BETA} values, got {}", x.len()))
        })?;
        if arr.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite spatial coefficient".into()));
        }
        Ok(SpatialParam(arr))
    }

    /// Coefficients of tree level `l` (1-based), intercept first.
    pub fn tree(&self, l: usize) -> &[f64] {
        let (a, b) = TREE_RANGE[l - 1];
        &self.0[a..b]
    }

    pub fn tree_mut(&mut self, l: usize) -> &mut [f64] {
        let (a, b) = TREE_RANGE[l - 1];
        &mut self.0[a..b]
    }

    pub fn nu(&self) -> &[f64] {
        &self.0[NU_RANGE.0..NU_RANGE.1]
    }

    pub fn nu_mut(&mut self) -> &mut [f64] {
        &mut self.0[NU_RANGE.0..NU_RANGE.1]
    }

    /// Whether component `i` is an intercept.
    pub fn is_intercept(i: usize) -> bool {
        i == TREE_RANGE[0].0 || i == TREE_RANGE[1].0 || i == TREE_RANGE[2].0 || i == NU_RANGE.0
    }
}

impl fmt::Display for SpatialParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (name, v)) in BETA_NAMES.iter().zip(&self.0).enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{:>2} {:<12} {:>9.4}", i + 1, name, v)?;
        }
        Ok(())
    }
}

impl Serialize for SpatialParam {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(N_BETA))?;
        for (name, v) in BETA_NAMES.iter().zip(&self.0) {
            map.serialize_entry(name, v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for SpatialParam {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = BTreeMap::<String, f64>::deserialize(d)?;
        if raw.len() != N_BETA {
            return Err(D::Error::custom(format!("expected {N_BETA} coefficients, got {}", raw.len())));
        }
        let mut out = [0.0; N_BETA];
        for (slot, name) in out.iter_mut().zip(BETA_NAMES) {
            *slot = *raw
                .get(name)
                .ok_or_else(|| D::Error::custom(format!("missing coefficient {name}")))?;
        }
        Ok(SpatialParam(out))
    }
}

/// Regressors of one edge {i, j; D}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeCovariates {
    /// Tree level, 1-based.
    pub tree: usize,
    /// Tree 1: (ln D_ij, ln E_ij); tree 2: (ln D_ij, ln D_ik, ln D_jk);
    /// tree 3: (ln D_ij, ln D_ik, ln D_im, ln D_jk, ln D_jm).
    pub values: Vec<f64>,
}

pub fn covariate_count(tree: usize) -> usize {
    match tree {
        1 => 2,
        2 => 3,
        3 => 5,
        _ => 0,
    }
}

impl EdgeCovariates {
    /// Covariates of edge {i, j; given} with `k`, `m` the conditioning
    /// variables in order. `ld` and `le` give ln D and ln E for two points.
    pub fn build<D, E>(i: usize, j: usize, given: &[usize], ld: D, le: E) -> Result<Self>
    where
        D: Fn(usize, usize) -> f64,
        E: Fn(usize, usize) -> f64,
    {
        let values = match given {
            [] => vec![ld(i, j), le(i, j)],
            [k] => vec![ld(i, j), ld(i, *k), ld(j, *k)],
            [k, m] => vec![ld(i, j), ld(i, *k), ld(i, *m), ld(j, *k), ld(j, *m)],
            _ => {
                return Err(Error::InvalidInput(format!(
                    "no spatial model for tree {}",
                    given.len() + 1
                )))
            }
        };
        Ok(EdgeCovariates {
            tree: given.len() + 1,
            values,
        })
    }

    pub fn log_dist_ij(&self) -> f64 {
        self.values[0]
    }
}

/// Covariates of every slot of a collection.
pub fn slot_covariates(collection: &VineCollection, table: &CovariateTable) -> Result<Vec<EdgeCovariates>> {
    collection
        .slots
        .iter()
        .map(|s| {
            EdgeCovariates::build(
                s.pair.0,
                s.pair.1,
                &s.given,
                |a, b| table.log_dist(a, b),
                |a, b| table.log_elev(a, b),
            )
        })
        .collect()
}

/// Linear predictor ξ = h_l(i, j, D | β_l) on the Fisher-z scale.
pub fn model_h(l: usize, cov: &EdgeCovariates, beta: &SpatialParam) -> Result<f64> {
    if !(1..=3).contains(&l) || cov.tree != l || cov.values.len() != covariate_count(l) {
        return Err(Error::InvalidInput(format!(
            "tree {l} needs {} covariates, edge has {} (tree {})",
            covariate_count(l),
            cov.values.len(),
            cov.tree
        )));
    }
    Ok(h_unchecked(cov, beta))
}

fn h_unchecked(cov: &EdgeCovariates, beta: &SpatialParam) -> f64 {
    let b = beta.tree(cov.tree);
    b[0] + b[1..].iter().zip(&cov.values).map(|(c, x)| c * x).sum::<f64>()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClampCounts {
    pub theta: usize,
    pub nu: usize,
}

/// θ = g_τ⁻¹(tanh(h_l); family); the flag reports clamping.
pub fn theta_spatial(cov: &EdgeCovariates, family: Family, beta: &SpatialParam) -> Result<(f64, bool)> {
    let xi = model_h(cov.tree, cov, beta)?;
    let r = theta_from_tau(family, xi.tanh());
    Ok((r.theta, r.clamped))
}

/// ν = exp(β₀ + β₁ l + β₂ ln D_ij) limited to (2, 100]; the flag reports
/// clamping.
pub fn nu_spatial(cov: &EdgeCovariates, beta: &SpatialParam) -> (f64, bool) {
    let b = beta.nu();
    let raw = (b[0] + b[1] * cov.tree as f64 + b[2] * cov.log_dist_ij()).exp();
    let nu = if raw.is_nan() { NU_FLOOR } else { raw.clamp(NU_FLOOR, NU_MAX) };
    (nu, nu != raw)
}

/// Pair copula of an edge under the spatial model.
pub fn spatial_copula(cov: &EdgeCovariates, family: Family, beta: &SpatialParam) -> (PairCopula, ClampCounts) {
    let mut clamps = ClampCounts::default();
    if family.kind == FamilyKind::Independence {
        return (PairCopula::independence(), clamps);
    }
    let r = theta_from_tau(family, h_unchecked(cov, beta).tanh());
    clamps.theta += r.clamped as usize;
    let nu = if family.kind == FamilyKind::StudentT {
        let (nu, c) = nu_spatial(cov, beta);
        clamps.nu += c as usize;
        nu
    } else {
        0.0
    };
    (
        PairCopula {
            family,
            theta: r.theta,
            nu,
        },
        clamps,
    )
}

pub fn spatial_copulas(
    covs: &[EdgeCovariates],
    families: &[Family],
    beta: &SpatialParam,
) -> (Vec<PairCopula>, ClampCounts) {
    let mut total = ClampCounts::default();
    let cops = covs
        .iter()
        .zip(families)
        .map(|(c, &f)| {
            let (p, k) = spatial_copula(c, f, beta);
            total.theta += k.theta;
            total.nu += k.nu;
            p
        })
        .collect();
    (cops, total)
}

/// Least squares with a rank check; `None` when the design is deficient.
fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
    if x.nrows() < x.ncols() {
        return None;
    }
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if svd.rank(smax * 1e-10) < x.ncols() {
        return None;
    }
    svd.solve(y, smax * 1e-12).ok()
}

/// OLS start values from fitted (or sequential) per-slot copulas.
pub fn start_values(copulas: &[PairCopula], covs: &[EdgeCovariates]) -> Result<SpatialParam> {
    let mut beta = SpatialParam::zero();
    for l in 1..=3 {
        let rows: Vec<(usize, f64)> = covs
            .iter()
            .enumerate()
            .filter(|(i, c)| c.tree == l && copulas[*i].kind() != FamilyKind::Independence)
            .map(|(i, _)| Ok((i, fisher_z(copulas[i].tau().clamp(-0.999, 0.999))?)))
            .collect::<Result<_>>()?;
        let p = covariate_count(l) + 1;
        let x = DMatrix::from_fn(rows.len(), p, |r, c| if c == 0 { 1.0 } else { covs[rows[r].0].values[c - 1] });
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
        let b = ols(&x, &y).ok_or_else(|| {
            Error::Numeric(format!(
                "rank-deficient start-value design for tree {l} ({} edges, {p} coefficients)",
                rows.len()
            ))
        })?;
        beta.tree_mut(l).copy_from_slice(b.as_slice());
    }

    let t: Vec<usize> = (0..covs.len())
        .filter(|&i| copulas[i].kind() == FamilyKind::StudentT)
        .collect();
    if !t.is_empty() {
        let x = DMatrix::from_fn(t.len(), 3, |r, c| match c {
            0 => 1.0,
            1 => covs[t[r]].tree as f64,
            _ => covs[t[r]].log_dist_ij(),
        });
        let y = DVector::from_iterator(t.len(), t.iter().map(|&i| copulas[i].nu.ln()));
        let b = match ols(&x, &y) {
            Some(b) => b,
            None => {
                warn!("degrees-of-freedom design is rank deficient; using a constant");
                DVector::from_vec(vec![y.mean(), 0.0, 0.0])
            }
        };
        beta.nu_mut().copy_from_slice(b.as_slice());
    }
    Ok(beta)
}

pub fn start_values_from_fit(fit: &FittedLCVCL, covs: &[EdgeCovariates]) -> Result<SpatialParam> {
    start_values(&fit.copulas, covs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedSLCVCL {
    pub beta: SpatialParam,
    pub start: SpatialParam,
    pub cll: f64,
    pub start_cll: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Clamps that fired at the estimate.
    pub clamps: ClampCounts,
}

/// Evaluates the spatial composite log-likelihood for fixed data.
pub struct SpatialObjective<'a> {
    pub data: CompositeData<'a>,
    pub families: Vec<Family>,
    pub covs: Vec<EdgeCovariates>,
}

impl<'a> SpatialObjective<'a> {
    pub fn new(
        collection: &'a VineCollection,
        data: &[Vec<f64>],
        families: &[Family],
        covs: &[EdgeCovariates],
    ) -> Result<Self> {
        if families.len() != collection.n_slots() || covs.len() != collection.n_slots() {
            return Err(Error::InvalidInput(format!(
                "expected {} families and covariate rows, got {} and {}",
                collection.n_slots(),
                families.len(),
                covs.len()
            )));
        }
        if let Some(c) = covs.iter().find(|c| c.values.len() != covariate_count(c.tree)) {
            return Err(Error::InvalidInput(format!("malformed covariates for tree {}", c.tree)));
        }
        Ok(SpatialObjective {
            data: CompositeData::new(collection, data)?,
            families: families.to_vec(),
            covs: covs.to_vec(),
        })
    }

    pub fn cll(&self, beta: &SpatialParam) -> f64 {
        let (cops, _) = spatial_copulas(&self.covs, &self.families, beta);
        self.data.composite(&cops)
    }
}

/// Affine map between β and the coefficients of standardised covariates.
/// Raw log-distances sit far from zero, which ties every intercept to its
/// slopes and leaves the optimiser crawling along a narrow valley.
pub(crate) struct Standardizer {
    /// (block start, block end, per-covariate mean and sd)
    blocks: Vec<(usize, usize, Vec<(f64, f64)>)>,
}

impl Standardizer {
    pub(crate) fn new(covs: &[EdgeCovariates], families: &[Family]) -> Self {
        let mut blocks = Vec::new();
        let moments = |rows: Vec<Vec<f64>>, p: usize| -> Vec<(f64, f64)> {
            (0..p)
                .map(|k| {
                    let n = rows.len() as f64;
                    if rows.len() < 2 {
                        return (0.0, 1.0);
                    }
                    let mean = rows.iter().map(|r| r[k]).sum::<f64>() / n;
                    let var = rows.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / n;
                    if var > 1e-12 {
                        (mean, var.sqrt())
                    } else {
                        (0.0, 1.0)
                    }
                })
                .collect()
        };
        for (l, &(a, b)) in TREE_RANGE.iter().enumerate() {
            let rows = covs
                .iter()
                .zip(families)
                .filter(|(c, f)| c.tree == l + 1 && f.kind != FamilyKind::Independence)
                .map(|(c, _)| c.values.clone())
                .collect();
            blocks.push((a, b, moments(rows, b - a - 1)));
        }
        let rows = covs
            .iter()
            .zip(families)
            .filter(|(_, f)| f.kind == FamilyKind::StudentT)
            .map(|(c, _)| vec![c.tree as f64, c.log_dist_ij()])
            .collect();
        blocks.push((NU_RANGE.0, NU_RANGE.1, moments(rows, 2)));
        Standardizer { blocks }
    }

    pub(crate) fn to_internal(&self, beta: &[f64]) -> Vec<f64> {
        let mut out = beta.to_vec();
        for (a, b, m) in &self.blocks {
            for (k, &(mean, sd)) in m.iter().enumerate() {
                out[a + 1 + k] = beta[a + 1 + k] * sd;
                out[*a] += beta[a + 1 + k] * mean;
            }
            debug_assert_eq!(m.len(), b - a - 1);
        }
        out
    }

    pub(crate) fn to_external(&self, alpha: &[f64]) -> SpatialParam {
        let mut out = [0.0; N_BETA];
        out.copy_from_slice(alpha);
        for (a, _, m) in &self.blocks {
            for (k, &(mean, sd)) in m.iter().enumerate() {
                out[a + 1 + k] = alpha[a + 1 + k] / sd;
                out[*a] -= out[a + 1 + k] * mean;
            }
        }
        SpatialParam(out)
    }
}

/// Maximum composite likelihood over the 16 spatial coefficients.
pub fn fit_slcvcl(
    collection: &VineCollection,
    data: &[Vec<f64>],
    families: &[Family],
    covs: &[EdgeCovariates],
    start: &SpatialParam,
    opts: &LbfgsOptions,
) -> Result<FittedSLCVCL> {
    let obj = SpatialObjective::new(collection, data, families, covs)?;
    let std = Standardizer::new(covs, families);
    let f = |x: &[f64]| -obj.cll(&std.to_external(x));
    let grad = |x: &[f64]| -> Vec<f64> {
        (0..N_BETA)
            .into_par_iter()
            .map(|i| {
                let mut xp = x.to_vec();
                xp[i] = x[i] + FD_STEP;
                let fp = f(&xp);
                xp[i] = x[i] - FD_STEP;
                let fm = f(&xp);
                let g = (fp - fm) / (2.0 * FD_STEP);
                if g.is_finite() {
                    g
                } else {
                    0.0
                }
            })
            .collect()
    };
    let start_cll = obj.cll(start);
    if !start_cll.is_finite() {
        return Err(Error::Numeric("spatial composite log-likelihood not finite at start".into()));
    }
    info!("slcvcl: start cll {start_cll:.4}");
    let x0 = std.to_internal(&start.0);
    let res = lbfgs(f, grad, &x0, opts);
    if !res.converged {
        warn!("slcvcl optimizer stopped after {} iterations without converging", res.iterations);
    }
    let beta = if res.x == x0 {
        *start
    } else {
        SpatialParam::from_slice(&std.to_external(&res.x).0)?
    };
    let cll = obj.cll(&beta);
    let (_, clamps) = spatial_copulas(covs, families, &beta);
    if clamps.theta + clamps.nu > 0 {
        info!("slcvcl: {} theta and {} nu clamps at the estimate", clamps.theta, clamps.nu);
    }
    Ok(FittedSLCVCL {
        beta,
        start: *start,
        cll,
        start_cll,
        iterations: res.iterations,
        converged: res.converged,
        clamps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bicop::{tau_from_theta, Rotation};
    use crate::lcvcl::tests::{field_correlation, gaussian_sample, stations};
    use crate::lcvcl::{fit_lcvcl, ParamLayout};
    use crate::structure::{build_collection, select_families};
    use proptest::prelude::*;

    fn cov(tree: usize, values: &[f64]) -> EdgeCovariates {
        EdgeCovariates {
            tree,
            values: values.to_vec(),
        }
    }

    #[test]
    fn zero_beta_gives_zero() {
        let b = SpatialParam::zero();
        for (l, v) in [(1, vec![1.0, 2.0]), (2, vec![1.0, 2.0, 3.0]), (3, vec![1.0; 5])] {
            assert_eq!(model_h(l, &cov(l, &v), &b).unwrap(), 0.0);
        }
        let (th, clamped) = theta_spatial(&cov(1, &[3.0, 1.0]), Family::GAUSSIAN, &b).unwrap();
        assert_eq!(th, 0.0);
        assert!(!clamped);
    }

    #[test]
    fn tree_one_arithmetic() {
        let mut b = SpatialParam::zero();
        b.tree_mut(1).copy_from_slice(&[2.25, -0.30, -0.02]);
        let xi = model_h(1, &cov(1, &[2.3026, 0.0]), &b).unwrap();
        assert!((xi - 1.5592).abs() < 1e-4);
    }

    #[test]
    fn level_mismatch_rejected() {
        let b = SpatialParam::zero();
        assert!(model_h(2, &cov(1, &[1.0, 2.0]), &b).is_err());
        assert!(model_h(2, &cov(2, &[1.0, 2.0]), &b).is_err());
        assert!(model_h(4, &cov(4, &[]), &b).is_err());
    }

    #[test]
    fn chained_links() {
        let mut b = SpatialParam::zero();
        b.tree_mut(1)[0] = 0.5493;
        let (th, _) = theta_spatial(&cov(1, &[0.0, 0.0]), Family::GAUSSIAN, &b).unwrap();
        assert!((th - 0.70711).abs() < 1e-4);
        b.tree_mut(1)[0] = -5.0;
        let (th, clamped) = theta_spatial(&cov(1, &[0.0, 0.0]), Family::new(FamilyKind::Gumbel), &b).unwrap();
        assert!(clamped);
        assert!((th - 1.0 / 0.999).abs() < 1e-9);
    }

    #[test]
    fn nu_link() {
        let mut b = SpatialParam::zero();
        b.nu_mut().copy_from_slice(&[0.40, 0.02, 0.27]);
        let (nu, c) = nu_spatial(&cov(1, &[4.0, 0.0]), &b);
        assert!((nu - 1.5f64.exp()).abs() < 1e-9);
        assert!(!c);
        let (nu, c) = nu_spatial(&cov(1, &[4.0, 0.0]), &SpatialParam::zero());
        assert_eq!(nu, NU_FLOOR);
        assert!(c);
        let (n1, _) = nu_spatial(&cov(2, &[3.0, 0.0, 0.0]), &b);
        let (n2, _) = nu_spatial(&cov(2, &[3.5, 0.0, 0.0]), &b);
        assert!(n2 > n1);
    }

    #[test]
    fn serde_uses_names() {
        let mut b = SpatialParam::zero();
        for (i, v) in b.0.iter_mut().enumerate() {
            *v = i as f64 * 0.1 - 0.5;
        }
        let s = serde_json::to_string(&b).unwrap();
        assert!(s.starts_with("{\"beta_0;1\":"));
        let back: SpatialParam = serde_json::from_str(&s).unwrap();
        assert_eq!(back, b);
        assert!(serde_json::from_str::<SpatialParam>("{\"beta_0;1\": 1.0}").is_err());
    }

    fn random_beta(seed: u64) -> SpatialParam {
        let rng = crate::rng::CounterRng::new(seed);
        let mut b = SpatialParam::zero();
        for (i, v) in b.0.iter_mut().enumerate() {
            *v = rng.uniform(0, i as u64) - 0.5;
        }
        b
    }

    #[test]
    fn ols_recovers_exact_links() {
        let s = stations(20, 3);
        let table = CovariateTable::build(&s).unwrap();
        let c = build_collection(&table).unwrap();
        let covs = slot_covariates(&c, &table).unwrap();
        let mut beta = random_beta(4);
        for v in beta.0.iter_mut() {
            *v *= 0.2;
        }
        beta.tree_mut(1)[0] = 0.8;
        beta.nu_mut()[0] = 1.5;
        let fams: Vec<Family> = (0..c.n_slots())
            .map(|i| if i % 3 == 0 { Family::STUDENT_T } else { Family::GAUSSIAN })
            .collect();
        let (cops, clamps) = spatial_copulas(&covs, &fams, &beta);
        assert_eq!(clamps.theta, 0);
        let back = start_values(&cops, &covs).unwrap();
        for l in 1..=3 {
            for (a, b) in back.tree(l).iter().zip(beta.tree(l)) {
                assert!((a - b).abs() < 1e-9, "tree {l}: {a} vs {b}");
            }
        }
        if clamps.nu == 0 {
            for (a, b) in back.nu().iter().zip(beta.nu()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn constant_nu_gives_intercept_only() {
        let s = stations(12, 5);
        let table = CovariateTable::build(&s).unwrap();
        let c = build_collection(&table).unwrap();
        let covs = slot_covariates(&c, &table).unwrap();
        let cops: Vec<PairCopula> = (0..c.n_slots())
            .map(|i| PairCopula::student_t(0.1 + 0.5 * (i % 5) as f64 / 5.0, 6.0).unwrap())
            .collect();
        let b = start_values(&cops, &covs).unwrap();
        assert!((b.nu()[0] - 6f64.ln()).abs() < 1e-9);
        assert!(b.nu()[1].abs() < 1e-9 && b.nu()[2].abs() < 1e-9);
    }

    #[test]
    fn link_consistency() {
        let s = stations(15, 6);
        let table = CovariateTable::build(&s).unwrap();
        let c = build_collection(&table).unwrap();
        let covs = slot_covariates(&c, &table).unwrap();
        let beta = random_beta(9);
        let fams = [
            Family::GAUSSIAN,
            Family::STUDENT_T,
            Family::new(FamilyKind::Frank),
            Family::rotated(FamilyKind::Clayton, Rotation::R90).unwrap(),
            Family::rotated(FamilyKind::Gumbel, Rotation::R180).unwrap(),
        ];
        for (i, cv) in covs.iter().enumerate() {
            let fam = fams[i % fams.len()];
            let (th, clamped) = theta_spatial(cv, fam, &beta).unwrap();
            if !clamped {
                let xi = fisher_z(tau_from_theta(fam, th).unwrap()).unwrap();
                assert!((xi - model_h(cv.tree, cv, &beta).unwrap()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn units_shift_moves_only_intercepts_at_start() {
        let s = stations(16, 7);
        let table = CovariateTable::build(&s).unwrap();
        let c = build_collection(&table).unwrap();
        let data = gaussian_sample(&field_correlation(&s, 200.0), 400, 1);
        let cops = select_families(&c, &data, &[FamilyKind::Gaussian]).unwrap();
        let covs = slot_covariates(&c, &table).unwrap();
        let shifted_table = table.shifted(2.0);
        let covs2 = slot_covariates(&c, &shifted_table).unwrap();
        let a = start_values(&cops, &covs).unwrap();
        let b = start_values(&cops, &covs2).unwrap();
        for l in 1..=3 {
            for (x, y) in a.tree(l)[1..].iter().zip(&b.tree(l)[1..]) {
                assert!((x - y).abs() < 1e-9);
            }
        }
        for (c1, c2) in covs.iter().zip(&covs2) {
            let (h1, h2) = (model_h(c1.tree, c1, &a).unwrap(), model_h(c2.tree, c2, &b).unwrap());
            assert!((h1 - h2).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_iterations_returns_start_and_nested_dominance() {
        let s = stations(10, 8);
        let table = CovariateTable::build(&s).unwrap();
        let c = build_collection(&table).unwrap();
        let data = gaussian_sample(&field_correlation(&s, 250.0), 500, 2);
        let seq = select_families(&c, &data, &[FamilyKind::Gaussian]).unwrap();
        let fams: Vec<Family> = seq.iter().map(|p| p.family).collect();
        let covs = slot_covariates(&c, &table).unwrap();
        let start = start_values(&seq, &covs).unwrap();
        let zero = LbfgsOptions {
            max_iter: 0,
            ..Default::default()
        };
        let f0 = fit_slcvcl(&c, &data, &fams, &covs, &start, &zero).unwrap();
        assert_eq!(f0.cll, f0.start_cll);
        assert_eq!(f0.beta, start);
        let fs = fit_slcvcl(&c, &data, &fams, &covs, &start, &LbfgsOptions::default()).unwrap();
        assert!(fs.cll >= fs.start_cll);
        let fl = fit_lcvcl(&c, &data, &seq, &LbfgsOptions::default()).unwrap();
        assert!(fs.cll <= fl.cll + 1e-4, "{} vs {}", fs.cll, fl.cll);
    }

    #[test]
    fn sixteen_parameters_for_any_d() {
        for d in [4, 10, 54] {
            let s = stations(d, d as u64);
            let table = CovariateTable::build(&s).unwrap();
            let c = build_collection(&table).unwrap();
            let covs = slot_covariates(&c, &table).unwrap();
            assert_eq!(covs.len(), c.n_slots());
            assert_eq!(SpatialParam::zero().0.len(), N_BETA);
            // the unconstrained layout grows with d, the spatial one does not
            let t = vec![PairCopula::student_t(0.3, 5.0).unwrap(); c.n_slots()];
            assert!(ParamLayout::from_copulas(&t).len() > N_BETA || d == 4);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn intercept_shift_is_constant(shift in -1.0f64..1.0, seed in 0u64..500) {
            let beta = random_beta(seed);
            let mut moved = beta;
            moved.tree_mut(2)[0] += shift;
            let c = cov(2, &[1.0, 2.5, 3.0]);
            let d = model_h(2, &c, &moved).unwrap() - model_h(2, &c, &beta).unwrap();
            prop_assert!((d - shift).abs() < 1e-12);
        }
    }
}
