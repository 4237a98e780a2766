//! End-to-end workflows behind the command-line tool: fitting, prediction
//! at new locations, validation against held-out stations and simulation.

use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use log::info;

use crate::bicop::{FamilyKind, PairCopula};
use crate::error::{Error, Result};
use crate::geo::{validate_stations, write_stations_csv, CovariateTable, Location, Station};
use crate::lcvcl::fit_lcvcl;
use crate::margins::{fit_margins, MarginOptions, Observations};
use crate::model::{FitMode, LcvclBlock, Metadata, ModelFile, SlcvclBlock, StructureBlock, SCHEMA_VERSION};
use crate::optim::LbfgsOptions;
use crate::predict::{predict_series, PredictionRow, PredictiveModel};
use crate::score::{
    averaged_scores, outperformance, score_difference_series, score_series, write_differences_csv,
    write_scores_csv, AveragedScores, DifferencePoint, Outperformance, ScoreSeries,
};
use crate::slcvcl::{fit_slcvcl, slot_covariates, start_values_from_fit, SpatialParam, BETA_NAMES};
use crate::structure::{build_collection, select_families, VINE_DIM};
use crate::synth::{default_start, SyntheticWorld, WorldKind};

/// Fewest complete observation rows accepted for fitting.
pub const MIN_COMPLETE_ROWS: usize = 10;

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub mode: FitMode,
    pub families: Vec<FamilyKind>,
    pub margins: MarginOptions,
    pub lbfgs: LbfgsOptions,
    /// Recorded in the model file.
    pub seed: Option<u64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            mode: FitMode::Slcvcl,
            families: FamilyKind::PARAMETRIC.to_vec(),
            margins: MarginOptions::default(),
            lbfgs: LbfgsOptions::default(),
            seed: None,
        }
    }
}

/// Rows without missing values.
pub fn complete_rows(data: &[Vec<f64>]) -> Vec<Vec<f64>> {
    data.iter()
        .filter(|r| r.iter().all(|x| x.is_finite()))
        .cloned()
        .collect()
}

/// Margins, structure, family selection and estimation.
pub fn fit_model(stations: &[Station], obs: &Observations, opts: &FitOptions) -> Result<ModelFile> {
    validate_stations(stations)?;
    if stations.len() < VINE_DIM {
        return Err(Error::InvalidInput(format!(
            "need at least {VINE_DIM} stations, got {}",
            stations.len()
        )));
    }
    let margins = fit_margins(obs, stations, opts.margins)?;
    let data = complete_rows(&margins.to_copula_data(obs)?);
    if data.len() < MIN_COMPLETE_ROWS {
        return Err(Error::MissingData(format!(
            "only {} complete observation rows, need {MIN_COMPLETE_ROWS}",
            data.len()
        )));
    }
    info!("fit: {} stations, {} of {} rows complete", stations.len(), data.len(), obs.n_times());
    let table = CovariateTable::build(stations)?;
    let collection = build_collection(&table)?;
    let allowed = if opts.mode == FitMode::GaussBaseline {
        vec![FamilyKind::Gaussian]
    } else {
        opts.families.clone()
    };
    let selected = select_families(&collection, &data, &allowed)?;
    let fit = fit_lcvcl(&collection, &data, &selected, &opts.lbfgs)?;
    let families: Vec<_> = fit.copulas.iter().map(|c: &PairCopula| c.family).collect();
    let slcvcl = if opts.mode.is_spatial() {
        let covs = slot_covariates(&collection, &table)?;
        let start = start_values_from_fit(&fit, &covs)?;
        let s = fit_slcvcl(&collection, &data, &families, &covs, &start, &opts.lbfgs)?;
        Some(SlcvclBlock {
            beta: s.beta,
            start: s.start,
            cll: s.cll,
            start_cll: s.start_cll,
            iterations: s.iterations,
            converged: s.converged,
            clamps: s.clamps,
        })
    } else {
        None
    };
    Ok(ModelFile {
        schema_version: SCHEMA_VERSION,
        mode: opts.mode,
        stations: stations.to_vec(),
        structure: StructureBlock::new(&collection, stations, &families),
        margins,
        lcvcl: Some(LcvclBlock {
            cll: fit.cll,
            start_cll: fit.start_cll,
            iterations: fit.iterations,
            converged: fit.converged,
            n_params: fit.n_params(),
            copulas: fit.copulas,
        }),
        slcvcl,
        metadata: Metadata {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: opts.seed,
            families_allowed: allowed,
            n_times: obs.n_times(),
            n_complete: data.len(),
        },
    })
}

/// Objective values and the spatial coefficients laid out one per row.
pub fn parameter_table(model: &ModelFile) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "mode: {}", model.mode.name());
    if let Some(l) = &model.lcvcl {
        let _ = writeln!(
            out,
            "lcvcl:  cll = {:.2}  ({} parameters, {} iterations{})",
            l.cll,
            l.n_params,
            l.iterations,
            if l.converged { "" } else { ", not converged" }
        );
    }
    if let Some(s) = &model.slcvcl {
        let _ = writeln!(
            out,
            "slcvcl: cll = {:.2}  (16 parameters, {} iterations{})",
            s.cll,
            s.iterations,
            if s.converged { "" } else { ", not converged" }
        );
        let _ = writeln!(out, "{:<14}{:>12}{:>12}", "coefficient", "estimate", "start");
        for (i, name) in BETA_NAMES.iter().enumerate() {
            let _ = writeln!(out, "{:<14}{:>12.4}{:>12.4}", name, s.beta.0[i], s.start.0[i]);
        }
        if s.clamps.theta + s.clamps.nu > 0 {
            let _ = writeln!(out, "clamped: {} theta, {} nu", s.clamps.theta, s.clamps.nu);
        }
    }
    out
}

/// Dates selected by `all`, a single `YYYY-MM-DD`, or `START:END`
/// (inclusive, every calendar day); each must be present in `obs`.
pub fn expand_times(spec: &str, obs: &Observations) -> Result<Vec<NaiveDate>> {
    let parse = |s: &str| {
        NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
            .map_err(|e| Error::InvalidInput(format!("bad date '{s}': {e}")))
    };
    let dates: Vec<NaiveDate> = match spec.trim() {
        "all" => obs.dates.clone(),
        s => match s.split_once(':') {
            Some((a, b)) => {
                let (a, b) = (parse(a)?, parse(b)?);
                if b < a {
                    return Err(Error::InvalidInput(format!("empty time range {spec}")));
                }
                a.iter_days().take_while(|d| *d <= b).collect()
            }
            None => vec![parse(s)?],
        },
    };
    if let Some(d) = dates.iter().find(|d| obs.row_of(**d).is_none()) {
        return Err(Error::MissingData(format!("no observations for {d}")));
    }
    Ok(dates)
}

pub fn predictive_model(model: &ModelFile, location: &Location) -> Result<PredictiveModel> {
    PredictiveModel::new(
        location,
        &model.stations,
        model.beta()?,
        model.predictive_families(),
        &model.margins,
    )
}

/// Ensembles at `location` for `dates` given the training stations'
/// observations.
pub fn predict_location(
    model: &ModelFile,
    location: &Location,
    obs: &Observations,
    dates: &[NaiveDate],
    m: usize,
    seed: u64,
) -> Result<Vec<PredictionRow>> {
    let pm = predictive_model(model, location)?;
    if pm.clamps.theta + pm.clamps.nu > 0 {
        info!("prediction: {} theta and {} nu clamps", pm.clamps.theta, pm.clamps.nu);
    }
    let u = model.margins.to_copula_data(obs)?;
    predict_series(&pm, obs, &u, dates, m, seed)
}

#[derive(Debug, Clone)]
pub struct ModelScores {
    pub label: String,
    pub series: Vec<ScoreSeries>,
    pub averaged: AveragedScores,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub a: usize,
    pub b: usize,
    pub outperformance: Vec<Outperformance>,
    pub differences: Vec<DifferencePoint>,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub models: Vec<ModelScores>,
    /// Every pair of models, in input order.
    pub comparisons: Vec<Comparison>,
}

/// Scores each model at the truth stations. Every model is scored on the
/// same dates: those where all truth values are observed and all
/// predictions exist. All models share the seed, so they see the same
/// uniforms.
pub fn validate_models(
    models: &[(String, ModelFile)],
    truth_stations: &[Station],
    truth: &Observations,
    obs: &Observations,
    m: usize,
    seed: u64,
) -> Result<ValidationReport> {
    if models.is_empty() {
        return Err(Error::InvalidInput("no models to validate".into()));
    }
    let cols: Vec<usize> = truth_stations
        .iter()
        .map(|s| {
            truth
                .column_of(s.id)
                .ok_or_else(|| Error::InvalidInput(format!("truth file has no column for station {}", s.id)))
        })
        .collect::<Result<_>>()?;
    let dates: Vec<NaiveDate> = truth.dates.iter().copied().filter(|d| obs.row_of(*d).is_some()).collect();
    if dates.is_empty() {
        return Err(Error::InvalidInput("truth and observation dates do not overlap".into()));
    }
    // predictions[model][station]
    let mut predictions = Vec::with_capacity(models.len());
    for (label, model) in models {
        let mut per_station = Vec::with_capacity(truth_stations.len());
        for s in truth_stations {
            info!("validate: model {label}, station {}", s.id);
            per_station.push(predict_location(model, &s.location(), obs, &dates, m, seed)?);
        }
        predictions.push(per_station);
    }
    let usable: Vec<bool> = dates
        .iter()
        .enumerate()
        .map(|(t, d)| {
            let row = truth.row_of(*d).expect("date taken from truth");
            cols.iter().all(|&c| truth.values[row][c].is_finite())
                && predictions.iter().flatten().all(|rows| !rows[t].is_missing())
        })
        .collect();
    if !usable.iter().any(|&u| u) {
        return Err(Error::MissingData("no date has complete truth and predictions".into()));
    }
    let mut scored = Vec::with_capacity(models.len());
    for ((label, _), per_station) in models.iter().zip(&predictions) {
        let series = truth_stations
            .iter()
            .zip(&cols)
            .zip(per_station)
            .map(|((s, &c), rows)| {
                let rows: Vec<PredictionRow> = rows
                    .iter()
                    .zip(&usable)
                    .filter(|(_, &u)| u)
                    .map(|(r, _)| r.clone())
                    .collect();
                score_series(s.id, &rows, |d| truth.row_of(d).map(|r| truth.values[r][c]))
            })
            .collect::<Result<Vec<_>>>()?;
        let averaged = averaged_scores(&series)?;
        scored.push(ModelScores {
            label: label.clone(),
            series,
            averaged,
        });
    }
    let mut comparisons = Vec::new();
    for a in 0..scored.len() {
        for b in a + 1..scored.len() {
            comparisons.push(Comparison {
                a,
                b,
                outperformance: outperformance(&scored[a].series, &scored[b].series)?,
                differences: score_difference_series(&scored[a].series, &scored[b].series)?,
            });
        }
    }
    Ok(ValidationReport {
        models: scored,
        comparisons,
    })
}

/// Mean CRPS per station and model, followed by the outperformance shares
/// of every model pair.
pub fn comparison_table(report: &ValidationReport) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<10}", "station");
    for m in &report.models {
        let _ = write!(out, "{:>14}", m.label);
    }
    out.push('\n');
    let n_st = report.models[0].averaged.stations.len();
    for i in 0..n_st {
        let _ = write!(out, "{:<10}", report.models[0].averaged.stations[i].0);
        for m in &report.models {
            let _ = write!(out, "{:>14.4}", m.averaged.stations[i].1);
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<10}", "mean");
    for m in &report.models {
        let _ = write!(out, "{:>14.4}", m.averaged.overall);
    }
    out.push('\n');
    for c in &report.comparisons {
        let (a, b) = (&report.models[c.a].label, &report.models[c.b].label);
        let _ = writeln!(out, "\noutperformance {a} vs {b}");
        let _ = writeln!(out, "{:<10}{:>10}{:>10}{:>10}", "station", a.as_str(), b.as_str(), "ties");
        for o in &c.outperformance {
            let _ = writeln!(
                out,
                "{:<10}{:>10.3}{:>10.3}{:>10.3}",
                o.station,
                o.share_a(),
                o.share_b(),
                o.tie_share()
            );
        }
    }
    out
}

/// Writes `scores_<label>.csv`, `table.txt` and `diff_<a>_vs_<b>.csv`.
pub fn write_report(report: &ValidationReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for m in &report.models {
        write_scores_csv(dir.join(format!("scores_{}.csv", m.label)), &m.series)?;
    }
    for c in &report.comparisons {
        let name = format!("diff_{}_vs_{}.csv", report.models[c.a].label, report.models[c.b].label);
        write_differences_csv(dir.join(name), &c.differences)?;
    }
    std::fs::write(dir.join("table.txt"), comparison_table(report))?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SimulateOptions {
    pub kind: WorldKind,
    /// Training stations.
    pub d: usize,
    /// Additional stations held out as truth.
    pub holdout: usize,
    pub n: usize,
    pub seed: u64,
    pub beta: SpatialParam,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub world: SyntheticWorld,
    pub stations: Vec<Station>,
    pub obs: Observations,
    pub truth_stations: Vec<Station>,
    pub truth: Observations,
}

/// Simulates `d + holdout` stations and holds out the `holdout` stations
/// nearest the centre of the network. Both station sets are renumbered
/// from 1.
pub fn simulate(opts: &SimulateOptions) -> Result<Simulation> {
    if opts.d < VINE_DIM {
        return Err(Error::InvalidInput(format!("need d ≥ {VINE_DIM}, got {}", opts.d)));
    }
    if opts.n == 0 {
        return Err(Error::InvalidInput("need at least one time step".into()));
    }
    let world = SyntheticWorld::random(opts.kind, opts.d + opts.holdout, opts.beta, opts.seed)?;
    let (all, _) = world.generate(opts.n, default_start())?;
    let total = world.d();
    let (clon, clat) = world
        .stations
        .iter()
        .fold((0.0, 0.0), |a, s| (a.0 + s.lon / total as f64, a.1 + s.lat / total as f64));
    let mut order: Vec<usize> = (0..total).collect();
    let off = |s: &Station| (s.lon - clon).powi(2) + (s.lat - clat).powi(2);
    order.sort_by(|&a, &b| off(&world.stations[a]).total_cmp(&off(&world.stations[b])).then(a.cmp(&b)));
    let mut held: Vec<usize> = order[..opts.holdout].to_vec();
    held.sort_unstable();
    let train: Vec<usize> = (0..total).filter(|i| !held.contains(i)).collect();
    let pick = |idx: &[usize]| -> (Vec<Station>, Observations) {
        let stations = idx
            .iter()
            .enumerate()
            .map(|(k, &i)| Station {
                id: k + 1,
                ..world.stations[i].clone()
            })
            .collect();
        let obs = Observations {
            dates: all.dates.clone(),
            ids: (1..=idx.len()).collect(),
            values: all.values.iter().map(|r| idx.iter().map(|&i| r[i]).collect()).collect(),
        };
        (stations, obs)
    };
    let (stations, obs) = pick(&train);
    let (truth_stations, truth) = pick(&held);
    Ok(Simulation {
        world,
        stations,
        obs,
        truth_stations,
        truth,
    })
}

/// `stations.csv`, `obs.csv`, `world.json` and, with held-out stations,
/// `truth_stations.csv` and `truth_obs.csv`.
pub fn write_simulation(sim: &Simulation, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_stations_csv(dir.join("stations.csv"), &sim.stations)?;
    sim.obs.write_csv(dir.join("obs.csv"))?;
    if !sim.truth_stations.is_empty() {
        write_stations_csv(dir.join("truth_stations.csv"), &sim.truth_stations)?;
        sim.truth.write_csv(dir.join("truth_obs.csv"))?;
    }
    let mut world = serde_json::to_string_pretty(&sim.world)?;
    world.push('\n');
    std::fs::write(dir.join("world.json"), world)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::default_beta;

    fn sim(holdout: usize, n: usize) -> Simulation {
        simulate(&SimulateOptions {
            kind: WorldKind::GaussianField,
            d: 6,
            holdout,
            n,
            seed: 5,
            beta: default_beta(),
        })
        .unwrap()
    }

    #[test]
    fn holdout_split() {
        let s = sim(2, 30);
        assert_eq!(s.stations.len(), 6);
        assert_eq!(s.truth_stations.iter().map(|x| x.id).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(s.obs.ids, (1..=6).collect::<Vec<_>>());
        assert_eq!(s.truth.values[0].len(), 2);
        let all: Vec<(f64, f64)> = s.world.stations.iter().map(|x| (x.lon, x.lat)).collect();
        for t in &s.truth_stations {
            assert!(all.contains(&(t.lon, t.lat)));
            assert!(!s.stations.iter().any(|x| (x.lon, x.lat) == (t.lon, t.lat)));
        }
        assert!(simulate(&SimulateOptions { d: 3, ..SimulateOptions { kind: WorldKind::GaussianField, d: 6, holdout: 0, n: 5, seed: 1, beta: default_beta() } }).is_err());
    }

    #[test]
    fn time_ranges() {
        let s = sim(0, 10);
        let d0 = s.obs.dates[0];
        assert_eq!(expand_times("all", &s.obs).unwrap().len(), 10);
        assert_eq!(expand_times(&format!("{}:{}", d0, s.obs.dates[3]), &s.obs).unwrap().len(), 4);
        assert_eq!(expand_times(&d0.to_string(), &s.obs).unwrap(), vec![d0]);
        assert!(matches!(expand_times("1990-01-01", &s.obs), Err(Error::MissingData(_))));
        assert!(matches!(expand_times("nonsense", &s.obs), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn fit_modes_nest() {
        let s = sim(1, 300);
        let mut opts = FitOptions {
            families: vec![FamilyKind::Gaussian],
            ..FitOptions::default()
        };
        let spatial = fit_model(&s.stations, &s.obs, &opts).unwrap();
        opts.mode = FitMode::Lcvcl;
        let local = fit_model(&s.stations, &s.obs, &opts).unwrap();
        assert!(local.slcvcl.is_none());
        assert!(spatial.slcvcl.as_ref().unwrap().cll <= local.lcvcl.as_ref().unwrap().cll + 1e-9);
        assert!(spatial.families().iter().all(|f| f.kind == FamilyKind::Gaussian));
        let table = parameter_table(&spatial);
        assert!(table.contains("beta_E_ij;1") && table.contains("beta_2^nu"));
    }

    #[test]
    fn identical_models_tie() {
        let s = sim(1, 200);
        let opts = FitOptions {
            families: vec![FamilyKind::Gaussian],
            ..FitOptions::default()
        };
        let model = fit_model(&s.stations, &s.obs, &opts).unwrap();
        let single = validate_models(&[("a".into(), model.clone())], &s.truth_stations, &s.truth, &s.obs, 50, 3).unwrap();
        assert!(single.comparisons.is_empty());
        assert!(!comparison_table(&single).contains("outperformance"));
        let two = [("a".to_string(), model.clone()), ("b".to_string(), model)];
        let r = validate_models(&two, &s.truth_stations, &s.truth, &s.obs, 50, 3).unwrap();
        let o = r.comparisons[0].outperformance[0];
        assert_eq!((o.share_a(), o.share_b(), o.tie_share()), (0.0, 0.0, 1.0));
        let dir = tempfile::tempdir().unwrap();
        write_report(&r, dir.path()).unwrap();
        for f in ["scores_a.csv", "scores_b.csv", "diff_a_vs_b.csv", "table.txt"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }
}
