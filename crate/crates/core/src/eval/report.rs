use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use super::{AccuracyReport, ClearanceReport, ClosedLoopReport, LatencyRow, StepLog};
use crate::error::Result;

/// Plot-ready row: one value per `(N, metric, algorithm)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LongRow {
    pub scenario: String,
    pub horizon: usize,
    pub metric: String,
    pub algorithm: String,
    pub value: f64,
}

pub const LONG_HEADER: [&str; 5] = ["scenario", "horizon", "metric", "algorithm", "value"];
pub const ACCURACY_HEADER: [&str; 7] = ["scenario", "horizon", "index", "dim", "mean", "max", "count"];
pub const LATENCY_HEADER: [&str; 5] = ["algorithm", "horizon", "repetitions", "median_us", "p95_us"];
pub const TRAJECTORY_HEADER: [&str; 15] = [
    "controller", "scenario", "horizon", "step", "px", "py", "phi", "v", "ref_px", "ref_py", "path_py", "u0", "u1", "stage_cost", "clearance",
];

/// Every report an evaluation run can produce.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: Vec<AccuracyReport>,
    pub closed_loop: Vec<ClosedLoopReport>,
    pub latency: Vec<LatencyRow>,
    pub clearance: Vec<ClearanceReport>,
}

impl EvalReport {
    pub fn long_rows(&self, algorithm: &str) -> Vec<LongRow> {
        let mut out = Vec::new();
        for a in &self.accuracy {
            for r in &a.rows {
                out.push(LongRow {
                    scenario: a.scenario.name().into(),
                    horizon: r.horizon,
                    metric: format!("accuracy_i{}_d{}", r.index, r.dim),
                    algorithm: algorithm.into(),
                    value: r.mean,
                });
            }
        }
        for c in &self.closed_loop {
            for (metric, value) in [("delta_y", c.delta_y), ("delta_y_path", c.delta_y_path), ("cost", c.cost)] {
                out.push(LongRow {
                    scenario: c.scenario.clone(),
                    horizon: c.horizon,
                    metric: metric.into(),
                    algorithm: c.controller.clone(),
                    value,
                });
            }
        }
        for l in &self.latency {
            out.push(LongRow {
                scenario: String::new(),
                horizon: l.horizon,
                metric: "latency_median_us".into(),
                algorithm: l.algorithm.clone(),
                value: l.median_us,
            });
        }
        for c in &self.clearance {
            out.push(LongRow {
                scenario: "obstacle".into(),
                horizon: 0,
                metric: "min_clearance".into(),
                algorithm: c.controller.clone(),
                value: c.min_clearance,
            });
        }
        out
    }
}

pub fn write_long_csv(path: &Path, rows: &[LongRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(LONG_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_long_csv(path: &Path) -> Result<Vec<LongRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

fn write_trajectories(path: &Path, runs: &[(&str, &str, usize, &[StepLog])]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRAJECTORY_HEADER)?;
    for (ctrl, scen, n, traj) in runs {
        for s in *traj {
            w.write_record([
                ctrl.to_string(),
                scen.to_string(),
                n.to_string(),
                s.step.to_string(),
                s.px.to_string(),
                s.py.to_string(),
                s.phi.to_string(),
                s.v.to_string(),
                s.ref_px.to_string(),
                s.ref_py.to_string(),
                s.path_py.to_string(),
                s.u0.to_string(),
                s.u1.to_string(),
                s.stage_cost.to_string(),
                s.clearance.map(|c| c.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// SHA-256 of the canonical JSON form of a config.
pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let v = serde_json::to_value(config)?;
    Ok(hex(&Sha256::digest(serde_json::to_vec(&v)?)))
}

/// Short content hash of a checkpoint file.
pub fn checkpoint_id(path: &Path) -> Result<String> {
    Ok(hex(&Sha256::digest(fs::read(path)?))[..16].to_string())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub checkpoint_id: Option<String>,
    pub version: String,
}

/// Writes `accuracy.csv`, `closed_loop.csv`, `trajectories.csv`,
/// `latency.csv`, `clearance.csv`, `long.csv` and `summary.json` under `dir`.
pub fn emit_report(dir: &Path, report: &EvalReport, algorithm: &str, provenance: &Provenance) -> Result<()> {
    fs::create_dir_all(dir)?;

    let mut w = csv::Writer::from_path(dir.join("accuracy.csv"))?;
    w.write_record(ACCURACY_HEADER)?;
    for a in &report.accuracy {
        for r in &a.rows {
            w.write_record([
                a.scenario.name().to_string(),
                r.horizon.to_string(),
                r.index.to_string(),
                r.dim.to_string(),
                r.mean.to_string(),
                r.max.to_string(),
                r.count.to_string(),
            ])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("closed_loop.csv"))?;
    w.write_record(["controller", "scenario", "horizon", "steps", "delta_y", "delta_y_path", "cost", "total_cost", "diverged"])?;
    for c in &report.closed_loop {
        w.write_record([
            c.controller.clone(),
            c.scenario.clone(),
            c.horizon.to_string(),
            c.trajectory.len().to_string(),
            c.delta_y.to_string(),
            c.delta_y_path.to_string(),
            c.cost.to_string(),
            c.total_cost.to_string(),
            c.diverged.to_string(),
        ])?;
    }
    w.flush()?;

    let mut runs: Vec<(&str, &str, usize, &[StepLog])> = report
        .closed_loop
        .iter()
        .map(|c| (c.controller.as_str(), c.scenario.as_str(), c.horizon, c.trajectory.as_slice()))
        .collect();
    runs.extend(report.clearance.iter().map(|c| (c.controller.as_str(), "obstacle", 0, c.trajectory.as_slice())));
    write_trajectories(&dir.join("trajectories.csv"), &runs)?;

    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(dir.join("latency.csv"))?;
    w.write_record(LATENCY_HEADER)?;
    for l in &report.latency {
        w.serialize(l)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("clearance.csv"))?;
    w.write_record(["controller", "steps", "min_clearance", "collision", "diverged"])?;
    for c in &report.clearance {
        w.write_record([
            c.controller.clone(),
            c.steps.to_string(),
            c.min_clearance.to_string(),
            c.collision.to_string(),
            c.diverged.to_string(),
        ])?;
    }
    w.flush()?;

    write_long_csv(&dir.join("long.csv"), &report.long_rows(algorithm))?;

    let mut summary = Map::new();
    summary.insert("provenance".into(), serde_json::to_value(provenance)?);
    summary.insert(
        "closed_loop".into(),
        Value::Array(
            report
                .closed_loop
                .iter()
                .map(|c| {
                    serde_json::json!({
                        "controller": c.controller, "scenario": c.scenario, "horizon": c.horizon,
                        "delta_y": c.delta_y, "delta_y_path": c.delta_y_path, "cost": c.cost, "diverged": c.diverged,
                    })
                })
                .collect(),
        ),
    );
    summary.insert("accuracy".into(), serde_json::to_value(&report.accuracy)?);
    summary.insert("latency".into(), serde_json::to_value(&report.latency)?);
    summary.insert(
        "clearance".into(),
        Value::Array(
            report
                .clearance
                .iter()
                .map(|c| serde_json::json!({"controller": c.controller, "min_clearance": c.min_clearance, "collision": c.collision}))
                .collect(),
        ),
    );
    fs::write(dir.join("summary.json"), serde_json::to_vec_pretty(&Value::Object(summary))?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn long_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            LongRow {
                scenario: "sine".into(),
                horizon: 20,
                metric: "cost".into(),
                algorithm: "transformer".into(),
                value: 0.125,
            },
            LongRow {
                scenario: String::new(),
                horizon: 1,
                metric: "latency_median_us".into(),
                algorithm: "mlp".into(),
                value: 1.0 / 3.0,
            },
        ];
        let p = dir.path().join("long.csv");
        write_long_csv(&p, &rows).unwrap();
        assert_eq!(read_long_csv(&p).unwrap(), rows);
        let header = fs::read_to_string(&p).unwrap();
        assert_eq!(header.lines().next().unwrap(), LONG_HEADER.join(","));
    }

    #[test]
    fn config_hash_is_stable() {
        let a = config_hash(&serde_json::json!({"b": 1, "a": [1, 2]})).unwrap();
        let b = config_hash(&serde_json::json!({"a": [1, 2], "b": 1})).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
    }
}
