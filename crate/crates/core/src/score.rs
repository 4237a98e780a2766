//! Ensemble CRPS and model comparison summaries.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::predict::PredictionRow;

/// CRPS of an ensemble forecast, via the sorted-sample form of
/// (1/M) Σ|xᵢ − y| − (1/2M²) ΣᵢΣⱼ|xᵢ − xⱼ|.
pub fn crps_ensemble(samples: &[f64], y: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("empty ensemble".into()));
    }
    if !y.is_finite() || samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("ensemble and observation must be finite".into()));
    }
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let m = x.len() as f64;
    let mut abs_err = 0.0;
    let mut spread = 0.0;
    for (i, &xi) in x.iter().enumerate() {
        abs_err += (xi - y).abs();
        // ΣᵢΣⱼ|xᵢ − xⱼ| = 2 Σᵢ (2i − M + 1) x₍ᵢ₎ with 0-based i
        spread += (2.0 * i as f64 - m + 1.0) * xi;
    }
    Ok((abs_err / m - spread / (m * m)).max(0.0))
}

/// Direct O(M²) evaluation; reference for the sorted form.
pub fn crps_ensemble_naive(samples: &[f64], y: f64) -> f64 {
    let m = samples.len() as f64;
    let a: f64 = samples.iter().map(|x| (x - y).abs()).sum();
    let b: f64 = samples
        .iter()
        .map(|xi| samples.iter().map(|xj| (xi - xj).abs()).sum::<f64>())
        .sum();
    a / m - b / (2.0 * m * m)
}

/// Per-time CRPS of one model at one station.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    pub station: usize,
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

impl ScoreSeries {
    pub fn new(station: usize, dates: Vec<NaiveDate>, values: Vec<f64>) -> Result<Self> {
        if dates.len() != values.len() {
            return Err(Error::InvalidInput("dates and scores differ in length".into()));
        }
        if values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidInput(format!("negative or missing CRPS at station {station}")));
        }
        Ok(ScoreSeries { station, dates, values })
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Scores predictions against observed values; times where either side is
/// missing are skipped.
pub fn score_series<F>(station: usize, rows: &[PredictionRow], truth: F) -> Result<ScoreSeries>
where
    F: Fn(NaiveDate) -> Option<f64>,
{
    let mut dates = Vec::new();
    let mut values = Vec::new();
    for r in rows {
        let Some(y) = truth(r.date).filter(|y| y.is_finite()) else {
            continue;
        };
        if r.is_missing() {
            continue;
        }
        dates.push(r.date);
        values.push(crps_ensemble(&r.samples, y)?);
    }
    ScoreSeries::new(station, dates, values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AveragedScores {
    /// (station id, mean CRPS over time).
    pub stations: Vec<(usize, f64)>,
    /// Mean of the station means.
    pub overall: f64,
}

pub fn averaged_scores(series: &[ScoreSeries]) -> Result<AveragedScores> {
    let Some(first) = series.first() else {
        return Err(Error::InvalidInput("no score series".into()));
    };
    if series.iter().any(|s| s.values.len() != first.values.len()) {
        return Err(Error::InvalidInput("score series differ in length".into()));
    }
    if first.values.is_empty() {
        return Err(Error::InvalidInput("score series are empty".into()));
    }
    let stations: Vec<(usize, f64)> = series.iter().map(|s| (s.station, s.mean())).collect();
    let overall = stations.iter().map(|s| s.1).sum::<f64>() / stations.len() as f64;
    Ok(AveragedScores { stations, overall })
}

/// Win counts of model a against model b at one station.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outperformance {
    pub station: usize,
    pub wins_a: usize,
    pub wins_b: usize,
    pub ties: usize,
}

impl Outperformance {
    pub fn n(&self) -> usize {
        self.wins_a + self.wins_b + self.ties
    }

    /// Share of times with a strictly lower score for a.
    pub fn share_a(&self) -> f64 {
        self.wins_a as f64 / self.n() as f64
    }

    pub fn share_b(&self) -> f64 {
        self.wins_b as f64 / self.n() as f64
    }

    pub fn tie_share(&self) -> f64 {
        self.ties as f64 / self.n() as f64
    }
}

fn check_aligned(a: &ScoreSeries, b: &ScoreSeries) -> Result<()> {
    if a.station != b.station || a.dates != b.dates {
        return Err(Error::InvalidInput(format!(
            "score series for stations {} and {} are not aligned",
            a.station, b.station
        )));
    }
    Ok(())
}

pub fn outperformance(a: &[ScoreSeries], b: &[ScoreSeries]) -> Result<Vec<Outperformance>> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput("models scored at different station sets".into()));
    }
    a.iter()
        .zip(b)
        .map(|(sa, sb)| {
            check_aligned(sa, sb)?;
            let mut o = Outperformance {
                station: sa.station,
                wins_a: 0,
                wins_b: 0,
                ties: 0,
            };
            for (x, y) in sa.values.iter().zip(&sb.values) {
                match x.total_cmp(y) {
                    std::cmp::Ordering::Less => o.wins_a += 1,
                    std::cmp::Ordering::Greater => o.wins_b += 1,
                    std::cmp::Ordering::Equal => o.ties += 1,
                }
            }
            Ok(o)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Winner {
    A,
    B,
    Tie,
}

impl Winner {
    fn of(diff: f64) -> Self {
        if diff < 0.0 {
            Winner::A
        } else if diff > 0.0 {
            Winner::B
        } else {
            Winner::Tie
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Winner::A => "a",
            Winner::B => "b",
            Winner::Tie => "tie",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DifferencePoint {
    pub date: NaiveDate,
    /// Mean over stations of score_a − score_b.
    pub diff: f64,
    pub winner: Winner,
}

/// Station-averaged score difference per time; times are averaged over
/// the stations scored at that time.
pub fn score_difference_series(a: &[ScoreSeries], b: &[ScoreSeries]) -> Result<Vec<DifferencePoint>> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput("models scored at different station sets".into()));
    }
    let mut acc: BTreeMap<NaiveDate, (f64, usize)> = BTreeMap::new();
    for (sa, sb) in a.iter().zip(b) {
        check_aligned(sa, sb)?;
        for ((d, x), y) in sa.dates.iter().zip(&sa.values).zip(&sb.values) {
            let e = acc.entry(*d).or_insert((0.0, 0));
            e.0 += x - y;
            e.1 += 1;
        }
    }
    Ok(acc
        .into_iter()
        .map(|(date, (s, n))| {
            let diff = s / n as f64;
            DifferencePoint {
                date,
                diff,
                winner: Winner::of(diff),
            }
        })
        .collect())
}

/// Scores CSV: `station,time,crps`.
pub fn write_scores_csv(path: impl AsRef<Path>, series: &[ScoreSeries]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "station,time,crps")?;
    for s in series {
        for (d, v) in s.dates.iter().zip(&s.values) {
            writeln!(w, "{},{},{}", s.station, d, v)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Comparison CSV: `time,diff,winner`.
pub fn write_differences_csv(path: impl AsRef<Path>, points: &[DifferencePoint]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "time,diff,winner")?;
    for p in points {
        writeln!(w, "{},{},{}", p.date, p.diff, p.winner.label())?;
    }
    w.flush()?;
    Ok(())
}
