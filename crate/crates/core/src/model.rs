//! Persisted model file: a versioned JSON document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bicop::{Family, FamilyKind, PairCopula};
use crate::error::{Error, Result};
use crate::geo::{CovariateTable, Station};
use crate::margins::MarginalModel;
use crate::slcvcl::{ClampCounts, SpatialParam};
use crate::structure::{build_collection, VineCollection, NEIGHBORS};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMode {
    Lcvcl,
    Slcvcl,
    /// Spatial model with every pair copula Gaussian.
    GaussBaseline,
}

impl FitMode {
    pub fn name(self) -> &'static str {
        match self {
            FitMode::Lcvcl => "lcvcl",
            FitMode::Slcvcl => "slcvcl",
            FitMode::GaussBaseline => "gauss-baseline",
        }
    }

    pub fn is_spatial(self) -> bool {
        self != FitMode::Lcvcl
    }
}

impl std::str::FromStr for FitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lcvcl" => Ok(FitMode::Lcvcl),
            "slcvcl" => Ok(FitMode::Slcvcl),
            "gauss-baseline" => Ok(FitMode::GaussBaseline),
            _ => Err(Error::InvalidInput(format!("unknown mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VineEntry {
    /// Station id of the root.
    pub station: usize,
    /// Station ids in vine order.
    pub order: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotEntry {
    pub tree: usize,
    pub pair: [usize; 2],
    pub given: Vec<usize>,
    pub family: Family,
    /// Number of local vines sharing the edge.
    pub shared_by: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureBlock {
    pub neighbors: usize,
    pub vines: Vec<VineEntry>,
    pub slots: Vec<SlotEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LcvclBlock {
    pub cll: f64,
    pub start_cll: f64,
    pub iterations: usize,
    pub converged: bool,
    pub n_params: usize,
    /// Estimated copula per slot, in slot order.
    pub copulas: Vec<PairCopula>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlcvclBlock {
    pub beta: SpatialParam,
    pub start: SpatialParam,
    pub cll: f64,
    pub start_cll: f64,
    pub iterations: usize,
    pub converged: bool,
    pub clamps: ClampCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub version: String,
    pub seed: Option<u64>,
    pub families_allowed: Vec<FamilyKind>,
    /// Observation rows in the input and rows without missing values.
    pub n_times: usize,
    pub n_complete: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub mode: FitMode,
    pub stations: Vec<Station>,
    pub margins: MarginalModel,
    pub structure: StructureBlock,
    pub lcvcl: Option<LcvclBlock>,
    pub slcvcl: Option<SlcvclBlock>,
    pub metadata: Metadata,
}

impl StructureBlock {
    pub fn new(collection: &VineCollection, stations: &[Station], families: &[Family]) -> Self {
        let id = |i: usize| stations[i].id;
        StructureBlock {
            neighbors: NEIGHBORS,
            vines: collection
                .vines
                .iter()
                .map(|v| VineEntry {
                    station: id(v.roots[0]),
                    order: v.roots.iter().map(|&r| id(r)).collect(),
                })
                .collect(),
            slots: collection
                .slots
                .iter()
                .zip(families)
                .map(|(s, &family)| SlotEntry {
                    tree: s.tree,
                    pair: [id(s.pair.0), id(s.pair.1)],
                    given: s.given.iter().map(|&g| id(g)).collect(),
                    family,
                    shared_by: s.members.len(),
                })
                .collect(),
        }
    }
}

impl ModelFile {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("model file: {e}")))?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::Format(format!(
                    "model schema version {v} is not supported (expected {SCHEMA_VERSION})"
                )))
            }
            None => return Err(Error::Format("model file has no schema_version".into())),
        }
        let model: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("model file: {e}")))?;
        model.check()?;
        Ok(model)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Format(m));
        if self.margins.d() != self.stations.len() {
            return bad("margins and stations differ in length".into());
        }
        let n = self.structure.slots.len();
        if let Some(l) = &self.lcvcl {
            if l.copulas.len() != n {
                return bad(format!("lcvcl block has {} copulas for {n} slots", l.copulas.len()));
            }
        }
        if self.mode.is_spatial() && self.slcvcl.is_none() {
            return bad(format!("mode {} requires an slcvcl block", self.mode.name()));
        }
        let rebuilt = StructureBlock::new(&self.collection_unchecked()?, &self.stations, &self.families());
        if rebuilt != self.structure {
            return bad("structure block does not match the station geometry".into());
        }
        Ok(())
    }

    fn collection_unchecked(&self) -> Result<VineCollection> {
        build_collection(&CovariateTable::build(&self.stations)?)
    }

    /// The vine collection, rebuilt from the stations.
    pub fn collection(&self) -> Result<VineCollection> {
        self.collection_unchecked()
    }

    pub fn table(&self) -> Result<CovariateTable> {
        CovariateTable::build(&self.stations)
    }

    pub fn families(&self) -> Vec<Family> {
        self.structure.slots.iter().map(|s| s.family).collect()
    }

    pub fn beta(&self) -> Result<&SpatialParam> {
        self.slcvcl
            .as_ref()
            .map(|b| &b.beta)
            .ok_or_else(|| Error::InvalidInput(format!("model of mode {} has no spatial parameters", self.mode.name())))
    }

    pub fn converged(&self) -> bool {
        match (self.mode.is_spatial(), &self.lcvcl, &self.slcvcl) {
            (true, _, Some(s)) => s.converged,
            (false, Some(l), _) => l.converged,
            _ => false,
        }
    }

    /// Family per tree for vines at new locations: the most common fitted
    /// family of that tree.
    pub fn predictive_families(&self) -> [Family; 3] {
        let mut out = [Family::STUDENT_T; 3];
        for (l, f) in out.iter_mut().enumerate() {
            let mut counts: Vec<(Family, usize)> = Vec::new();
            for s in self.structure.slots.iter().filter(|s| s.tree == l + 1) {
                match counts.iter_mut().find(|c| c.0 == s.family) {
                    Some(c) => c.1 += 1,
                    None => counts.push((s.family, 1)),
                }
            }
            // ties go to the family listed first
            counts.sort_by(|a, b| {
                b.1.cmp(&a.1)
                    .then(a.0.kind.cmp(&b.0.kind))
                    .then(a.0.rotation.cmp(&b.0.rotation))
            });
            if let Some(c) = counts.first() {
                *f = c.0;
            }
        }
        out
    }
}
