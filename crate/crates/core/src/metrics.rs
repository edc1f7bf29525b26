//! Navigation and weight-dispersion metrics and normalized result tables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::TaskKind;
use crate::scalar::Scalar;
use crate::trajectory::{trajectory_return, Trajectory};
use crate::weights::Weights;

/// Per-episode quantities consumed by the metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub task: TaskKind,
    /// `S_i` for object navigation, clamped `ℓ/ℓmax` for flee navigation.
    pub success: f64,
    pub path_length_m: f64,
    /// Geodesic start-to-goal distance (object navigation).
    pub shortest_path_m: f64,
    /// Distance from the start at termination (flee navigation).
    pub flee_distance_m: f64,
    /// Largest reachable distance from the start (flee navigation).
    pub max_distance_m: f64,
    /// Geodesic path length to the farthest cell (flee navigation).
    pub max_path_m: f64,
    pub episode_length: usize,
    pub final_distance_m: f64,
    pub sub_returns: Vec<f64>,
}

impl EpisodeRecord {
    pub fn from_trajectory(tau: &Trajectory) -> Result<EpisodeRecord> {
        let o = &tau.outcome;
        let record = EpisodeRecord {
            task: tau.task.kind,
            success: o.success_value,
            path_length_m: o.path_length_m,
            shortest_path_m: o.shortest_path_m,
            flee_distance_m: if tau.task.kind == TaskKind::FleeNav { o.final_distance_m } else { 0.0 },
            max_distance_m: o.max_distance_m,
            max_path_m: o.max_path_m,
            episode_length: o.episode_length,
            final_distance_m: o.final_distance_m,
            sub_returns: trajectory_return(tau)?.as_slice().to_vec(),
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.path_length_m >= 0.0) {
            return Err(Error::invalid("path length must be non-negative"));
        }
        match self.task {
            TaskKind::ObjectNav if !(self.shortest_path_m > 0.0) => {
                Err(Error::invalid("object navigation records need a positive shortest path"))
            }
            TaskKind::FleeNav if !(self.max_distance_m > 0.0 && self.max_path_m > 0.0) => {
                Err(Error::invalid("flee navigation records need positive maximum distances"))
            }
            _ => Ok(()),
        }
    }
}

fn nonempty(records: &[EpisodeRecord], task: TaskKind) -> Result<()> {
    if records.is_empty() {
        return Err(Error::invalid("no episode records"));
    }
    if let Some(r) = records.iter().find(|r| r.task != task) {
        return Err(Error::invalid(format!("expected {task} records, found {}", r.task)));
    }
    records.iter().try_for_each(EpisodeRecord::validate)
}

pub fn success_rate(records: &[EpisodeRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::invalid("no episode records"));
    }
    Ok(records.iter().map(|r| r.success).sum::<f64>() / records.len() as f64)
}

/// Mean of `S_i · ℓmin_i / max(ℓmin_i, ℓ_i)`.
pub fn spl(records: &[EpisodeRecord]) -> Result<f64> {
    nonempty(records, TaskKind::ObjectNav)?;
    let total: f64 =
        records.iter().map(|r| r.success * r.shortest_path_m / r.shortest_path_m.max(r.path_length_m)).sum();
    Ok(total / records.len() as f64)
}

/// Mean path length over the maximum path length, and mean `ℓ/ℓmax`, both clamped per episode.
pub fn plopl_and_flee_success(records: &[EpisodeRecord]) -> Result<(f64, f64)> {
    nonempty(records, TaskKind::FleeNav)?;
    let n = records.len() as f64;
    let plopl = records.iter().map(|r| (r.path_length_m / r.max_path_m).clamp(0.0, 1.0)).sum::<f64>() / n;
    let success = records.iter().map(|r| (r.flee_distance_m / r.max_distance_m).clamp(0.0, 1.0)).sum::<f64>() / n;
    Ok((plopl, success))
}

/// Gini coefficient `Σ_i Σ_j |w_i − w_j| / (2K)`, in `[0, (K−1)/K]`.
pub fn ggi<T: Scalar>(w: &Weights<T>) -> T {
    let v = w.as_slice();
    // Sorted form of the pairwise sum: Σ_i (2i − K + 1) w_(i).
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite weights"));
    let k = sorted.len();
    let s: T = sorted.iter().enumerate().map(|(i, x)| *x * T::of(2.0 * i as f64 + 1.0 - k as f64)).sum();
    (s / T::of_usize(k)).max(T::zero())
}

/// Mean of the off-diagonal entries of a square 0/1 outcome matrix.
pub fn win_rate(h: &[Vec<u8>]) -> Result<f64> {
    let s = h.len();
    if s < 2 {
        return Err(Error::invalid("win rate needs at least two scenarios"));
    }
    let mut wins = 0usize;
    for (i, row) in h.iter().enumerate() {
        if row.len() != s {
            return Err(Error::invalid(format!("row {i} has {} entries, expected {s}", row.len())));
        }
        for (j, &x) in row.iter().enumerate() {
            if x > 1 {
                return Err(Error::invalid(format!("entry ({i},{j}) is {x}, expected 0 or 1")));
            }
            if i == j && x != 0 {
                return Err(Error::invalid("diagonal entries must be 0"));
            }
            if i != j {
                wins += x as usize;
            }
        }
    }
    Ok(wins as f64 / (s * (s - 1)) as f64)
}

/// One evaluated configuration: a method run with one objective prioritized.
#[derive(Debug, Clone)]
pub struct EvalRun {
    pub method: String,
    pub prioritized: Option<usize>,
    pub records: Vec<EpisodeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: String,
    pub prioritized: Option<String>,
    pub episodes: usize,
    pub success: f64,
    /// SPL for object navigation, PLOPL for flee navigation.
    pub efficiency: f64,
    pub episode_length: f64,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub task: TaskKind,
    pub objectives: Vec<String>,
    pub rows: Vec<EvalRow>,
    /// Per objective: true when the raw column had zero variance and was zeroed.
    pub zero_variance: Vec<bool>,
}

/// Raw means per run, then per-column z-scores across rows (population variance).
pub fn build_eval_table(runs: &[EvalRun]) -> Result<EvalTable> {
    if runs.len() < 2 {
        return Err(Error::invalid("an evaluation table needs at least two rows"));
    }
    let task = runs[0].records.first().map(|r| r.task).ok_or_else(|| Error::invalid("run with no records"))?;
    let names = task.objectives();
    let k = names.len();
    let mut rows = Vec::with_capacity(runs.len());
    for run in runs {
        nonempty(&run.records, task)?;
        let n = run.records.len() as f64;
        let mut raw = vec![0.0; k];
        for r in &run.records {
            if r.sub_returns.len() != k {
                return Err(Error::ArityMismatch { expected: k, found: r.sub_returns.len() });
            }
            for (acc, v) in raw.iter_mut().zip(&r.sub_returns) {
                *acc += v;
            }
        }
        raw.iter_mut().for_each(|v| *v /= n);
        let efficiency = match task {
            TaskKind::ObjectNav => spl(&run.records)?,
            TaskKind::FleeNav => plopl_and_flee_success(&run.records)?.0,
        };
        if let Some(p) = run.prioritized {
            if p >= k {
                return Err(Error::invalid(format!("prioritized objective {p} out of range for K={k}")));
            }
        }
        rows.push(EvalRow {
            method: run.method.clone(),
            prioritized: run.prioritized.map(|p| names[p].to_string()),
            episodes: run.records.len(),
            success: success_rate(&run.records)?,
            efficiency,
            episode_length: run.records.iter().map(|r| r.episode_length as f64).sum::<f64>() / n,
            raw,
            normalized: vec![0.0; k],
        });
    }
    let m = rows.len() as f64;
    let mut zero_variance = vec![false; k];
    for j in 0..k {
        let mean = rows.iter().map(|r| r.raw[j]).sum::<f64>() / m;
        let var = rows.iter().map(|r| (r.raw[j] - mean).powi(2)).sum::<f64>() / m;
        let sd = var.sqrt();
        if sd <= 1e-12 * mean.abs().max(1.0) {
            zero_variance[j] = true;
            continue;
        }
        for r in rows.iter_mut() {
            r.normalized[j] = (r.raw[j] - mean) / sd;
        }
    }
    Ok(EvalTable { task, objectives: names.iter().map(|s| s.to_string()).collect(), rows, zero_variance })
}

impl EvalTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let efficiency = match self.task {
            TaskKind::ObjectNav => "spl",
            TaskKind::FleeNav => "plopl",
        };
        let mut header: Vec<String> =
            ["method", "prioritized", "episodes", "success", efficiency, "episode_length"].map(String::from).to_vec();
        header.extend(self.objectives.iter().map(|o| format!("raw_{o}")));
        header.extend(self.objectives.iter().map(|o| format!("norm_{o}")));
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![
                r.method.clone(),
                r.prioritized.clone().unwrap_or_default(),
                r.episodes.to_string(),
                r.success.to_string(),
                r.efficiency.to_string(),
                r.episode_length.to_string(),
            ];
            rec.extend(r.raw.iter().map(f64::to_string));
            rec.extend(r.normalized.iter().map(f64::to_string));
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Objectives whose prioritized row holds the column maximum of the raw means.
    pub fn diagonal_hits(&self) -> Vec<bool> {
        self.objectives
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let best = self.rows.iter().map(|r| r.raw[j]).fold(f64::NEG_INFINITY, f64::max);
                self.rows.iter().any(|r| r.prioritized.as_deref() == Some(name.as_str()) && r.raw[j] >= best)
            })
            .collect()
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(success: f64, l: f64, lmin: f64) -> EpisodeRecord {
        EpisodeRecord {
            task: TaskKind::ObjectNav,
            success,
            path_length_m: l,
            shortest_path_m: lmin,
            flee_distance_m: 0.0,
            max_distance_m: 0.0,
            max_path_m: 0.0,
            episode_length: 10,
            final_distance_m: 0.0,
            sub_returns: vec![0.0; 5],
        }
    }

    #[test]
    fn spl_examples() {
        assert_eq!(spl(&[obj(1.0, 3.0, 3.0)]).unwrap(), 1.0);
        assert_eq!(spl(&[obj(1.0, 4.0, 2.0), obj(0.0, 1.0, 2.0)]).unwrap(), 0.25);
        assert!(spl(&[]).is_err());
    }

    #[test]
    fn ggi_examples() {
        assert_eq!(ggi(&Weights::<f64>::uniform(5).unwrap()), 0.0);
        assert!((ggi(&Weights::<f64>::one_hot(5, 2).unwrap()) - 0.8).abs() < 1e-12);
        let w = Weights::<f64>::new(vec![0.5, 0.125, 0.125, 0.125, 0.125]).unwrap();
        assert!((ggi(&w) - 0.3).abs() < 1e-12);
        assert!((ggi(&Weights::<f32>::one_hot(5, 0).unwrap()) - 0.8).abs() < 1e-6);
    }

    #[test]
    fn win_rate_examples() {
        let mut h = vec![vec![0u8; 5]; 5];
        let mut wins = 0;
        'outer: for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    if wins == 13 {
                        break 'outer;
                    }
                    h[i][j] = 1;
                    wins += 1;
                }
            }
        }
        assert!((win_rate(&h).unwrap() - 0.65).abs() < 1e-12);
        assert!(win_rate(&[vec![1, 0], vec![0, 0]]).is_err());
        assert!(win_rate(&[vec![0]]).is_err());
    }
}
