//! Local C-vine collections: one small C-vine per station, rooted at the
//! station and its nearest neighbours, plus the predictive vine for a new
//! location.

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bicop::{fit_pair, FamilyKind, PairCopula, Pseudo};
use crate::cvine::CVine;
use crate::error::{Error, Result};
use crate::geo::{nearest_to_location, CovariateTable, Location, Station};

/// Neighbours per local vine; each vine has `NEIGHBORS + 1` variables.
pub const NEIGHBORS: usize = 3;
pub const VINE_DIM: usize = NEIGHBORS + 1;

/// Edges of a C-vine on `m` variables as (l, k) position pairs, tree by tree.
pub fn edge_positions(m: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(m * (m - 1) / 2);
    for l in 0..m.saturating_sub(1) {
        for k in l + 1..m {
            out.push((l, k));
        }
    }
    out
}

/// Index of edge (l, k) in [`edge_positions`] order.
pub fn edge_index(m: usize, l: usize, k: usize) -> usize {
    // edges before tree l: sum_{i<l} (m - 1 - i)
    l * (m - 1) - l * (l.saturating_sub(1)) / 2 + (k - l - 1)
}

/// One local C-vine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalVine {
    /// Station indices: the root station, then its neighbours by distance.
    pub roots: Vec<usize>,
    /// Parameter slot of each edge, in [`edge_positions`] order.
    pub slots: Vec<usize>,
    /// Set when the slot stores the copula with its arguments swapped
    /// relative to this vine's (root, other) orientation.
    pub transposed: Vec<bool>,
}

impl LocalVine {
    pub fn dim(&self) -> usize {
        self.roots.len()
    }

    /// Stations (i, j) joined by edge `e` and its conditioning set.
    pub fn edge_stations(&self, e: usize) -> (usize, usize, Vec<usize>) {
        let (l, k) = edge_positions(self.dim())[e];
        (self.roots[l], self.roots[k], self.roots[..l].to_vec())
    }

    /// Copula of edge `e` in this vine's orientation.
    pub fn oriented(&self, e: usize, copulas: &[PairCopula]) -> PairCopula {
        let c = copulas[self.slots[e]];
        if self.transposed[e] {
            c.transpose()
        } else {
            c
        }
    }

    pub fn build(&self, copulas: &[PairCopula]) -> CVine {
        self.build_with(|i| copulas[i])
    }

    /// Build the vine taking slot copulas from `slot`.
    pub fn build_with<F: Fn(usize) -> PairCopula>(&self, slot: F) -> CVine {
        let m = self.dim();
        let mut pairs: Vec<Vec<PairCopula>> = (0..m - 1).map(|l| Vec::with_capacity(m - 1 - l)).collect();
        for (e, &(l, _)) in edge_positions(m).iter().enumerate() {
            let c = slot(self.slots[e]);
            pairs[l].push(if self.transposed[e] { c.transpose() } else { c });
        }
        CVine::new(pairs).expect("edge layout is complete")
    }
}

/// A parameter slot: one distinct pair copula of the collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    /// Tree level, 1-based.
    pub tree: usize,
    /// Stations in the stored argument order.
    pub pair: (usize, usize),
    pub given: Vec<usize>,
    /// (vine, edge) occurrences.
    pub members: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VineCollection {
    pub vines: Vec<LocalVine>,
    pub slots: Vec<Slot>,
    /// Number of vines containing each station.
    pub counts: Vec<usize>,
    /// Composite-likelihood weight of each vine, 1 / count of its root.
    pub weights: Vec<f64>,
}

impl VineCollection {
    pub fn d(&self) -> usize {
        self.vines.len()
    }

    pub fn n_slots(&self) -> usize {
        self.slots.len()
    }

    /// Vines containing slot `i`, without repetition.
    pub fn slot_vines(&self, i: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self.slots[i].members.iter().map(|m| m.0).collect();
        v.dedup();
        v
    }

    /// Slot indices of tree level `tree` (1-based).
    pub fn tree_slots(&self, tree: usize) -> Vec<usize> {
        (0..self.slots.len()).filter(|&i| self.slots[i].tree == tree).collect()
    }

    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.d() {
            return Err(Error::InvalidInput(format!(
                "expected {} weights, got {}",
                self.d(),
                weights.len()
            )));
        }
        let mut out = self.clone();
        out.weights = weights;
        Ok(out)
    }

    /// Copula data rearranged per vine: `out[v][t * m + k]` is station
    /// `roots[k]` of vine `v` at time `t`, with normal scores precomputed.
    pub fn vine_data(&self, data: &[Vec<f64>]) -> Result<Vec<Vec<Pseudo>>> {
        check_copula_data(data, self.d())?;
        Ok(self
            .vines
            .iter()
            .map(|vine| {
                let mut out = Vec::with_capacity(data.len() * vine.dim());
                for row in data {
                    out.extend(vine.roots.iter().map(|&s| Pseudo::with_score(row[s])));
                }
                out
            })
            .collect())
    }
}

pub(crate) fn check_copula_data(data: &[Vec<f64>], d: usize) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidInput("no copula data".into()));
    }
    for (t, row) in data.iter().enumerate() {
        if row.len() != d {
            return Err(Error::InvalidInput(format!(
                "copula data row {t} has {} columns, expected {d}",
                row.len()
            )));
        }
        if let Some(x) = row.iter().find(|&&x| !(x > 0.0 && x < 1.0)) {
            return Err(Error::InvalidInput(format!(
                "copula data row {t} has value {x} outside (0, 1)"
            )));
        }
    }
    Ok(())
}

/// One local vine per station, rooted at the station and its nearest
/// neighbours. Tree-1 pairs appearing in two vines share one slot.
pub fn build_collection(table: &CovariateTable) -> Result<VineCollection> {
    let d = table.d();
    if d < VINE_DIM {
        return Err(Error::InvalidInput(format!(
            "need at least {VINE_DIM} stations, got {d}"
        )));
    }
    let m = VINE_DIM;
    let edges = edge_positions(m);
    let roots: Vec<Vec<usize>> = (0..d)
        .map(|s| {
            let mut r = vec![s];
            r.extend(table.nearest_neighbors(s, NEIGHBORS)?);
            Ok(r)
        })
        .collect::<Result<_>>()?;

    let mut slots: Vec<Slot> = Vec::new();
    let mut vine_slots = vec![vec![usize::MAX; edges.len()]; d];
    let mut vine_tr = vec![vec![false; edges.len()]; d];

    // tree 1: one slot per unordered pair, sorted for a stable layout
    let mut pairs: Vec<(usize, usize)> = roots
        .iter()
        .flat_map(|r| r[1..].iter().map(move |&x| (r[0].min(x), r[0].max(x))))
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    for &p in &pairs {
        slots.push(Slot {
            tree: 1,
            pair: p,
            given: vec![],
            members: vec![],
        });
    }
    for (v, r) in roots.iter().enumerate() {
        for k in 1..m {
            let key = (r[0].min(r[k]), r[0].max(r[k]));
            let i = pairs.binary_search(&key).expect("pair registered");
            let e = edge_index(m, 0, k);
            vine_slots[v][e] = i;
            vine_tr[v][e] = r[0] > r[k];
            slots[i].members.push((v, e));
        }
    }
    // higher trees: unique per vine
    for l in 1..m - 1 {
        for (v, r) in roots.iter().enumerate() {
            for k in l + 1..m {
                let e = edge_index(m, l, k);
                vine_slots[v][e] = slots.len();
                slots.push(Slot {
                    tree: l + 1,
                    pair: (r[l], r[k]),
                    given: r[..l].to_vec(),
                    members: vec![(v, e)],
                });
            }
        }
    }
    debug_assert!(edges.iter().enumerate().all(|(e, _)| vine_slots.iter().all(|s| s[e] != usize::MAX)));

    let mut counts = vec![0usize; d];
    for r in &roots {
        for &s in r {
            counts[s] += 1;
        }
    }
    let weights = (0..d).map(|s| 1.0 / counts[s] as f64).collect();
    let vines = roots
        .into_iter()
        .zip(vine_slots)
        .zip(vine_tr)
        .map(|((roots, slots), transposed)| LocalVine {
            roots,
            slots,
            transposed,
        })
        .collect();
    Ok(VineCollection {
        vines,
        slots,
        counts,
        weights,
    })
}

/// Sequential AIC selection and estimation of every slot, tree by tree.
///
/// Returns one copula per slot, in the slot's stored orientation.
pub fn select_families(
    collection: &VineCollection,
    data: &[Vec<f64>],
    allowed: &[FamilyKind],
) -> Result<Vec<PairCopula>> {
    check_copula_data(data, collection.d())?;
    let m = VINE_DIM;
    let n = data.len();
    // current pseudo-observations per vine, row-major N x m
    let mut pseudo: Vec<Vec<f64>> = collection
        .vines
        .iter()
        .map(|vine| {
            data.iter()
                .flat_map(|row| vine.roots.iter().map(move |&s| row[s]))
                .collect()
        })
        .collect();
    let mut copulas = vec![PairCopula::independence(); collection.n_slots()];

    for l in 0..m - 1 {
        let tree = collection.tree_slots(l + 1);
        let fits: Vec<Result<PairCopula>> = tree
            .par_iter()
            .map(|&i| {
                let (v, e) = collection.slots[i].members[0];
                let (_, k) = edge_positions(m)[e];
                let w = &pseudo[v];
                let a: Vec<f64> = (0..n).map(|t| w[t * m + l]).collect();
                let b: Vec<f64> = (0..n).map(|t| w[t * m + k]).collect();
                let (a, b) = if collection.vines[v].transposed[e] { (b, a) } else { (a, b) };
                fit_pair(&a, &b, allowed).map(|f| f.copula)
            })
            .collect();
        for (&i, fit) in tree.iter().zip(fits) {
            copulas[i] = fit?;
            debug!("slot {i} (tree {}): {}", l + 1, copulas[i].family);
        }
        if l + 2 < m {
            pseudo
                .par_iter_mut()
                .zip(&collection.vines)
                .for_each(|(w, vine)| {
                    for k in l + 1..m {
                        let c = vine.oriented(edge_index(m, l, k), &copulas);
                        for t in 0..n {
                            w[t * m + k] = c.h1(w[t * m + l], w[t * m + k]);
                        }
                    }
                });
        }
    }
    Ok(copulas)
}

/// The C-vine used to draw a new location given its nearest stations.
///
/// Variable order is (p, q, r, s): the target is the last variable, so
/// the first tree is rooted at the nearest station p.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSpec {
    pub location: Location,
    /// Nearest training stations by ascending distance.
    pub neighbors: Vec<usize>,
}

impl PredictiveSpec {
    /// Edges as (tree, a, b, given) where `a`, `b` are station indices and
    /// `None` stands for the target.
    pub fn edges(&self) -> Vec<(usize, Option<usize>, Option<usize>, Vec<Option<usize>>)> {
        let order: Vec<Option<usize>> = self
            .neighbors
            .iter()
            .map(|&x| Some(x))
            .chain(std::iter::once(None))
            .collect();
        edge_positions(order.len())
            .into_iter()
            .map(|(l, k)| (l + 1, order[l], order[k], order[..l].to_vec()))
            .collect()
    }
}

pub fn build_predictive(location: &Location, stations: &[Station]) -> Result<PredictiveSpec> {
    let neighbors = nearest_to_location(location, stations, NEIGHBORS)?;
    Ok(PredictiveSpec {
        location: *location,
        neighbors,
    })
}
