//! Local C-vine composite likelihood with one free parameter set per slot.

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bicop::{
    Family, FamilyKind, PairCopula, Pseudo, CLAYTON_MAX, FRANK_MAX, GUMBEL_MAX, NU_MAX, NU_MIN,
    RHO_MAX,
};
use crate::error::{Error, Result};
use crate::optim::{lbfgs, LbfgsOptions};
use crate::structure::{LocalVine, VineCollection};

/// Finite-difference step on the unconstrained coordinates.
pub const FD_STEP: f64 = 1e-5;
const CLAYTON_MIN: f64 = 1e-6;
/// Keep transformed values this far (relative) inside open bounds.
const EDGE: f64 = 1e-9;

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(EDGE, 1.0 - EDGE);
    (p / (1.0 - p)).ln()
}

/// Map between a bounded parameter and an unconstrained coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    /// ρ = RHO_MAX · tanh(z)
    Correlation,
    /// ν = NU_MIN + (NU_MAX − NU_MIN) · logistic(z)
    Dof,
    Clayton,
    Gumbel,
    /// θ = FRANK_MAX · tanh(z)
    Frank,
}

impl Transform {
    pub fn for_theta(kind: FamilyKind) -> Option<Self> {
        match kind {
            FamilyKind::Independence => None,
            FamilyKind::Gaussian | FamilyKind::StudentT => Some(Transform::Correlation),
            FamilyKind::Clayton => Some(Transform::Clayton),
            FamilyKind::Gumbel => Some(Transform::Gumbel),
            FamilyKind::Frank => Some(Transform::Frank),
        }
    }

    pub fn forward(self, z: f64) -> f64 {
        match self {
            Transform::Correlation => RHO_MAX * z.tanh(),
            Transform::Dof => (NU_MIN + (NU_MAX - NU_MIN) * logistic(z)).max(NU_MIN + 1e-9),
            Transform::Clayton => CLAYTON_MIN + (CLAYTON_MAX - CLAYTON_MIN) * logistic(z),
            Transform::Gumbel => 1.0 + (GUMBEL_MAX - 1.0) * logistic(z),
            Transform::Frank => FRANK_MAX * z.tanh(),
        }
    }

    /// Inverse of [`forward`](Self::forward); values on or beyond a bound
    /// are pulled just inside.
    pub fn inverse(self, x: f64) -> f64 {
        let atanh = |r: f64| r.clamp(-1.0 + EDGE, 1.0 - EDGE).atanh();
        match self {
            Transform::Correlation => atanh(x / RHO_MAX),
            Transform::Dof => logit((x - NU_MIN) / (NU_MAX - NU_MIN)),
            Transform::Clayton => logit((x - CLAYTON_MIN) / (CLAYTON_MAX - CLAYTON_MIN)),
            Transform::Gumbel => logit((x - 1.0) / (GUMBEL_MAX - 1.0)),
            Transform::Frank => atanh(x / FRANK_MAX),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Theta,
    Nu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub slot: usize,
    pub role: Role,
    pub transform: Transform,
}

/// Free parameters of a collection with fixed families, one entry per
/// distinct model parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub families: Vec<Family>,
    pub entries: Vec<ParamEntry>,
    /// First entry of each slot, if it has any.
    first: Vec<Option<usize>>,
}

impl ParamLayout {
    pub fn new(families: &[Family]) -> Self {
        let mut entries = Vec::new();
        let mut first = Vec::with_capacity(families.len());
        for (slot, fam) in families.iter().enumerate() {
            match Transform::for_theta(fam.kind) {
                None => first.push(None),
                Some(tr) => {
                    first.push(Some(entries.len()));
                    entries.push(ParamEntry {
                        slot,
                        role: Role::Theta,
                        transform: tr,
                    });
                    if fam.kind == FamilyKind::StudentT {
                        entries.push(ParamEntry {
                            slot,
                            role: Role::Nu,
                            transform: Transform::Dof,
                        });
                    }
                }
            }
        }
        ParamLayout {
            families: families.to_vec(),
            entries,
            first,
        }
    }

    pub fn from_copulas(copulas: &[PairCopula]) -> Self {
        Self::new(&copulas.iter().map(|c| c.family).collect::<Vec<_>>())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn encode(&self, copulas: &[PairCopula]) -> Vec<f64> {
        self.entries
            .iter()
            .map(|e| {
                let c = &copulas[e.slot];
                match e.role {
                    Role::Theta => e.transform.inverse(c.theta),
                    Role::Nu => e.transform.inverse(c.nu),
                }
            })
            .collect()
    }

    pub fn decode_slot(&self, slot: usize, z: &[f64]) -> PairCopula {
        let family = self.families[slot];
        match self.first[slot] {
            None => PairCopula {
                family,
                theta: 0.0,
                nu: 0.0,
            },
            Some(i) => {
                let theta = self.entries[i].transform.forward(z[i]);
                let nu = if family.kind == FamilyKind::StudentT {
                    Transform::Dof.forward(z[i + 1])
                } else {
                    0.0
                };
                PairCopula { family, theta, nu }
            }
        }
    }

    pub fn decode(&self, z: &[f64]) -> Vec<PairCopula> {
        (0..self.families.len()).map(|s| self.decode_slot(s, z)).collect()
    }
}

/// Σ_t log c(u_t) for one vine over row-major data with `vine.dim()`
/// columns.
pub fn vine_loglik(vine: &crate::cvine::CVine, rows: &[Pseudo]) -> f64 {
    rows.chunks_exact(vine.dim())
        .map(|r| vine.log_density_pseudo(r))
        .sum()
}

/// Per-vine data prepared once for repeated likelihood evaluation.
pub struct CompositeData<'a> {
    pub collection: &'a VineCollection,
    pub rows: Vec<Vec<Pseudo>>,
}

impl<'a> CompositeData<'a> {
    pub fn new(collection: &'a VineCollection, data: &[Vec<f64>]) -> Result<Self> {
        Ok(CompositeData {
            collection,
            rows: collection.vine_data(data)?,
        })
    }

    pub fn n_times(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len() / self.collection.vines[0].dim())
    }

    pub fn vine_loglik_with<F: Fn(usize) -> PairCopula>(&self, v: usize, slot: F) -> f64 {
        vine_loglik(&self.collection.vines[v].build_with(slot), &self.rows[v])
    }

    /// Weighted composite log-likelihood; vines are evaluated in parallel
    /// and summed in fixed order.
    pub fn composite_with<F: Fn(&LocalVine) -> crate::cvine::CVine + Sync>(&self, build: F) -> f64 {
        let per_vine: Vec<f64> = (0..self.collection.d())
            .into_par_iter()
            .map(|v| vine_loglik(&build(&self.collection.vines[v]), &self.rows[v]))
            .collect();
        per_vine
            .iter()
            .zip(&self.collection.weights)
            .map(|(ll, w)| w * ll)
            .sum()
    }

    pub fn composite(&self, copulas: &[PairCopula]) -> f64 {
        self.composite_with(|v| v.build(copulas))
    }

    /// Locate the first non-finite factor.
    fn diagnose(&self, copulas: &[PairCopula]) -> Error {
        for (v, vine) in self.collection.vines.iter().enumerate() {
            let cv = vine.build(copulas);
            let m = vine.dim();
            for (t, row) in self.rows[v].chunks_exact(m).enumerate() {
                let u: Vec<f64> = row.iter().map(|p| p.u()).collect();
                if let Err(e) = cv.try_log_density(&u) {
                    return Error::Numeric(format!("vine {} (root {}), time {t}: {e}", v, vine.roots[0]));
                }
            }
        }
        Error::Numeric("non-finite composite log-likelihood".into())
    }
}

/// Composite log-likelihood Σ_s w_s Σ_t log c_s(u_t).
pub fn composite_loglik(
    collection: &VineCollection,
    copulas: &[PairCopula],
    data: &[Vec<f64>],
) -> Result<f64> {
    if copulas.len() != collection.n_slots() {
        return Err(Error::InvalidInput(format!(
            "expected {} slot copulas, got {}",
            collection.n_slots(),
            copulas.len()
        )));
    }
    let prepared = CompositeData::new(collection, data)?;
    let v = prepared.composite(copulas);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(prepared.diagnose(copulas))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedLCVCL {
    pub collection: VineCollection,
    pub layout: ParamLayout,
    /// Estimated copula of every slot.
    pub copulas: Vec<PairCopula>,
    pub cll: f64,
    pub start_cll: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl FittedLCVCL {
    pub fn n_params(&self) -> usize {
        self.layout.len()
    }
}

/// Joint maximum composite likelihood from sequential start values.
pub fn fit_lcvcl(
    collection: &VineCollection,
    data: &[Vec<f64>],
    start: &[PairCopula],
    opts: &LbfgsOptions,
) -> Result<FittedLCVCL> {
    if start.len() != collection.n_slots() {
        return Err(Error::InvalidInput(format!(
            "expected {} start copulas, got {}",
            collection.n_slots(),
            start.len()
        )));
    }
    let prepared = CompositeData::new(collection, data)?;
    let layout = ParamLayout::from_copulas(start);
    let z0 = layout.encode(start);
    let weights = &collection.weights;

    let objective = |z: &[f64]| -prepared.composite(&layout.decode(z));
    let gradient = |z: &[f64]| -> Vec<f64> {
        let base = layout.decode(z);
        (0..z.len())
            .into_par_iter()
            .map(|i| {
                let slot = layout.entries[i].slot;
                let part = |zi: f64| {
                    let mut zz = z.to_vec();
                    zz[i] = zi;
                    let c = layout.decode_slot(slot, &zz);
                    collection
                        .slot_vines(slot)
                        .iter()
                        .map(|&v| {
                            weights[v] * prepared.vine_loglik_with(v, |s| if s == slot { c } else { base[s] })
                        })
                        .sum::<f64>()
                };
                let g = -(part(z[i] + FD_STEP) - part(z[i] - FD_STEP)) / (2.0 * FD_STEP);
                if g.is_finite() {
                    g
                } else {
                    0.0
                }
            })
            .collect()
    };

    let start_cll = -objective(&z0);
    if !start_cll.is_finite() {
        return Err(prepared.diagnose(&layout.decode(&z0)));
    }
    info!(
        "lcvcl: {} free parameters, start cll {start_cll:.4}",
        layout.len()
    );
    let res = lbfgs(objective, gradient, &z0, opts);
    if !res.converged {
        warn!("lcvcl optimizer stopped after {} iterations without converging", res.iterations);
    }
    let copulas = layout.decode(&res.x);
    Ok(FittedLCVCL {
        collection: collection.clone(),
        layout,
        copulas,
        cll: -res.value,
        start_cll,
        iterations: res.iterations,
        converged: res.converged,
    })
}
