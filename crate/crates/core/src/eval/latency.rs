use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::env::{Env, Scenario};
use crate::error::{Error, Result};
use crate::policy::Policy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub algorithm: String,
    pub horizon: usize,
    pub repetitions: usize,
    pub median_us: f64,
    pub p95_us: f64,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let k = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[k]
}

/// Median and p95 wall time of one forward call per horizon. The first call
/// at each horizon is discarded.
pub fn latency_bench(
    policy: &dyn Policy<f64>,
    env: &Env,
    scenario: Scenario,
    horizons: &[usize],
    repetitions: usize,
    algorithm: &str,
) -> Result<Vec<LatencyRow>> {
    if repetitions == 0 {
        return Err(Error::Config("latency repetitions must be positive".into()));
    }
    let s = env.initial_state(scenario)?;
    horizons
        .iter()
        .map(|&n| {
            let refs = env.reference(&s, n)?;
            policy.forward(&s.x, &refs)?;
            let mut times = Vec::with_capacity(repetitions);
            for _ in 0..repetitions {
                let t = Instant::now();
                let u = policy.forward(&s.x, &refs)?;
                times.push(t.elapsed().as_secs_f64() * 1e6);
                std::hint::black_box(u);
            }
            times.sort_by(f64::total_cmp);
            Ok(LatencyRow {
                algorithm: algorithm.into(),
                horizon: n,
                repetitions,
                median_us: percentile(&times, 0.5),
                p95_us: percentile(&times, 0.95),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentiles_on_known_list() {
        let v: Vec<f64> = (1..=101).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.5), 51.0);
        assert_eq!(percentile(&v, 0.95), 96.0);
    }
}
