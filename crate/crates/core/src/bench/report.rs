use super::{pass_at_k, pass_hat_k_with, BenchError, Estimator, TrialMatrix};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub n_trials: usize,
    pub k: usize,
    pub estimator: Estimator,
    pub agent: String,
    pub user: String,
    pub tasks: usize,
}

/// `pass_hat[j]` is pass^(j+1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub tasks: usize,
    pub pass_hat: Vec<f64>,
    pub pass_at_k: f64,
}

impl MetricSet {
    pub fn compute(matrix: &TrialMatrix, k: usize, estimator: Estimator) -> Result<Self, BenchError> {
        let pass_hat = (1..=k).map(|j| pass_hat_k_with(matrix, j, estimator)).collect::<Result<_, _>>()?;
        Ok(MetricSet { tasks: matrix.tasks().len(), pass_hat, pass_at_k: pass_at_k(matrix, k)? })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: RunMeta,
    pub overall: MetricSet,
    pub per_domain: BTreeMap<String, MetricSet>,
}

impl EvalReport {
    pub fn compute(matrix: &TrialMatrix, meta: RunMeta) -> Result<Self, BenchError> {
        let overall = MetricSet::compute(matrix, meta.k, meta.estimator)?;
        let mut per_domain = BTreeMap::new();
        for d in matrix.domains() {
            let sub = matrix.restrict(&d).expect("domain listed by the matrix");
            per_domain.insert(d, MetricSet::compute(&sub, meta.k, meta.estimator)?);
        }
        Ok(EvalReport { meta, overall, per_domain })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per domain plus an overall row, values in percent:
    ///
    /// ```text
    /// domain    tasks    p^1    p^2    p^3    p^4    p@4
    /// ```
    pub fn table(&self) -> String {
        let k = self.meta.k;
        let mut out = format!("agent={} user={} seed={} n={}\n", self.meta.agent, self.meta.user, self.meta.seed, self.meta.n_trials);
        let _ = write!(out, "{:<12}{:>6}", "domain", "tasks");
        for j in 1..=k {
            let _ = write!(out, "{:>8}", format!("p^{j}"));
        }
        let _ = writeln!(out, "{:>8}", format!("p@{k}"));
        let mut row = |name: &str, m: &MetricSet| {
            let _ = write!(out, "{name:<12}{:>6}", m.tasks);
            for v in &m.pass_hat {
                let _ = write!(out, "{:>8.1}", v * 100.0);
            }
            let _ = writeln!(out, "{:>8.1}", m.pass_at_k * 100.0);
        };
        for (d, m) in &self.per_domain {
            row(d, m);
        }
        if self.per_domain.len() > 1 {
            row("overall", &self.overall);
        }
        out
    }
}
