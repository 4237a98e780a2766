//! WebAssembly bindings for the static demo in `www/`.
//!
//! Three operations are exposed: a pair-copula density heatmap, the
//! predictive density at a clicked location of a synthetic network, and
//! the CRPS of that location's ensemble against a chosen outcome.

use wasm_bindgen::prelude::*;

use lcvine::bicop::{theta_from_tau, Family, FamilyKind, PairCopula, Rotation};
use lcvine::geo::{Location, Station};
use lcvine::predict::PredictiveModel;
use lcvine::rng::CounterRng;
use lcvine::score::crps_ensemble;
use lcvine::synth::{default_beta, SyntheticWorld, WorldKind};
use lcvine::{Error, Result};

fn js_err(e: Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Pair copula of a family at Kendall's tau.
pub fn copula_at_tau(family: &str, rotation: u16, tau: f64, nu: f64) -> Result<PairCopula> {
    let kind: FamilyKind = family.parse()?;
    let rotation = Rotation::try_from(rotation).map_err(Error::InvalidParameter)?;
    let family = Family::rotated(kind, rotation)?;
    PairCopula::new(family, theta_from_tau(family, tau).theta, nu)
}

/// Density on the `n` x `n` grid of cell midpoints, row-major with `v`
/// increasing downwards.
pub fn density_grid(c: &PairCopula, n: usize) -> Vec<f64> {
    let mid = |i: usize| (i as f64 + 0.5) / n as f64;
    (0..n)
        .flat_map(|row| (0..n).map(move |col| (mid(col), mid(n - 1 - row))))
        .map(|(u, v)| c.pdf(u, v))
        .collect()
}

#[wasm_bindgen]
pub fn copula_density(family: &str, rotation: u16, tau: f64, nu: f64, n: usize) -> std::result::Result<Vec<f64>, JsValue> {
    let c = copula_at_tau(family, rotation, tau, nu).map_err(js_err)?;
    Ok(density_grid(&c, n))
}

/// Parameter used for a family at `tau`, after clamping.
#[wasm_bindgen]
pub fn copula_theta(family: &str, rotation: u16, tau: f64) -> std::result::Result<f64, JsValue> {
    copula_at_tau(family, rotation, tau, 8.0).map(|c| c.theta).map_err(js_err)
}

/// A synthetic station network with the default spatial parameters.
#[wasm_bindgen]
pub struct Network {
    world: SyntheticWorld,
}

impl Network {
    pub fn build(d: usize, seed: u64) -> Result<Self> {
        let world = SyntheticWorld::random(WorldKind::GaussianField, d, default_beta(), seed)?;
        Ok(Network { world })
    }

    pub fn stations(&self) -> &[Station] {
        &self.world.stations
    }

    pub fn model_at(&self, lon: f64, lat: f64, elev: f64, family: &str) -> Result<PredictiveModel> {
        let kind: FamilyKind = family.parse()?;
        let location = Location::new(lon, lat, elev)?;
        PredictiveModel::new(
            &location,
            &self.world.stations,
            &self.world.beta,
            [Family::rotated(kind, Rotation::R0)?; 3],
            &self.world.margins,
        )
    }

    /// Predictive density of u_s on `n` midpoints given the three nearest
    /// stations' values.
    pub fn density_curve(&self, model: &PredictiveModel, u_pqr: &[f64], n: usize) -> Result<Vec<f64>> {
        (0..n)
            .map(|i| model.predictive_density((i as f64 + 0.5) / n as f64, u_pqr))
            .collect()
    }
}

#[wasm_bindgen]
impl Network {
    #[wasm_bindgen(constructor)]
    pub fn new(d: usize, seed: u32) -> std::result::Result<Network, JsValue> {
        Network::build(d, seed.into()).map_err(js_err)
    }

    /// Flat `[lon, lat, elev, ...]` of every station.
    pub fn coords(&self) -> Vec<f64> {
        self.world.stations.iter().flat_map(|s| [s.lon, s.lat, s.elev]).collect()
    }

    /// Indices of the three conditioning stations for a location.
    pub fn neighbors(&self, lon: f64, lat: f64, elev: f64) -> std::result::Result<Vec<u32>, JsValue> {
        let m = self.model_at(lon, lat, elev, "gaussian").map_err(js_err)?;
        Ok(m.spec.neighbors.iter().map(|&i| i as u32).collect())
    }

    pub fn predictive_density(
        &self,
        lon: f64,
        lat: f64,
        elev: f64,
        family: &str,
        u_pqr: &[f64],
        n: usize,
    ) -> std::result::Result<Vec<f64>, JsValue> {
        let m = self.model_at(lon, lat, elev, family).map_err(js_err)?;
        self.density_curve(&m, u_pqr, n).map_err(js_err)
    }

    /// Ensemble of `m` copula-scale draws at the location.
    pub fn ensemble(
        &self,
        lon: f64,
        lat: f64,
        elev: f64,
        family: &str,
        u_pqr: &[f64],
        m: usize,
        seed: u32,
    ) -> std::result::Result<Vec<f64>, JsValue> {
        let model = self.model_at(lon, lat, elev, family).map_err(js_err)?;
        model.ensemble(u_pqr, m, &CounterRng::new(seed.into()), 0).map_err(js_err)
    }
}

#[wasm_bindgen]
pub fn crps(samples: &[f64], y: f64) -> std::result::Result<f64, JsValue> {
    crps_ensemble(samples, y).map_err(js_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_grid_integrates_to_one() {
        for (f, r, tau) in [("gaussian", 0, 0.5), ("clayton", 90, -0.4), ("frank", 0, 0.3), ("t", 0, 0.2)] {
            let c = copula_at_tau(f, r, tau, 5.0).unwrap();
            let n = 200;
            let mass: f64 = density_grid(&c, n).iter().sum::<f64>() / (n * n) as f64;
            assert!((mass - 1.0).abs() < 0.02, "{f}: {mass}");
        }
    }

    #[test]
    fn grid_orientation_puts_upper_tail_top_right() {
        let c = copula_at_tau("gumbel", 0, 0.6, 5.0).unwrap();
        let g = density_grid(&c, 20);
        // row 0 is v near 1, last column is u near 1
        assert!(g[19] > g[20 * 19]);
    }

    #[test]
    fn rejects_bad_families() {
        assert!(copula_at_tau("banana", 0, 0.3, 5.0).is_err());
        assert!(copula_at_tau("gaussian", 90, 0.3, 5.0).is_err());
        assert!(copula_at_tau("clayton", 45, 0.3, 5.0).is_err());
    }

    #[test]
    fn predictive_curve_is_a_density() {
        let net = Network::build(12, 5).unwrap();
        let s = &net.stations()[0];
        let m = net.model_at(s.lon + 0.05, s.lat + 0.05, s.elev, "gaussian").unwrap();
        assert_eq!(m.spec.neighbors.len(), 3);
        let n = 400;
        let curve = net.density_curve(&m, &[0.8, 0.7, 0.6], n).unwrap();
        let mass = curve.iter().sum::<f64>() / n as f64;
        assert!((mass - 1.0).abs() < 1e-3, "{mass}");
        assert!(curve.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn ensemble_crps_prefers_the_centre() {
        let net = Network::build(12, 5).unwrap();
        let s = &net.stations()[3];
        let m = net.model_at(s.lon - 0.1, s.lat, s.elev, "gaussian").unwrap();
        let draws = m.ensemble(&[0.5, 0.5, 0.5], 500, &CounterRng::new(1), 0).unwrap();
        let near = crps_ensemble(&draws, 0.5).unwrap();
        let far = crps_ensemble(&draws, 0.99).unwrap();
        assert!(near < far);
    }
}
