use super::{BenchError, TaskTrials, TrialMatrix};
use serde::{Deserialize, Serialize};

/// How pass^k is computed from n ≥ k trials.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// C(c,k)/C(n,k), averaged over tasks.
    #[default]
    Combinatorial,
    /// Trials split into ⌊n/k⌋ consecutive blocks of k; a block passes if all its trials pass.
    Partition,
}

/// C(m, k) as a float; zero when k > m.
pub fn binomial(m: usize, k: usize) -> f64 {
    if k > m {
        return 0.0;
    }
    let k = k.min(m - k);
    (0..k).fold(1.0, |acc, i| acc * (m - i) as f64 / (i + 1) as f64)
}

fn check_k(matrix: &TrialMatrix, k: usize) -> Result<(), BenchError> {
    if k == 0 {
        return Err(BenchError::ZeroK);
    }
    match matrix.tasks().iter().find(|t| t.n() < k) {
        Some(t) => Err(BenchError::KExceedsTrials { k, n: t.n(), task: t.task_id.clone() }),
        None => Ok(()),
    }
}

fn mean(matrix: &TrialMatrix, f: impl Fn(&TaskTrials) -> f64) -> f64 {
    matrix.tasks().iter().map(f).sum::<f64>() / matrix.tasks().len() as f64
}

pub fn pass_hat_k(matrix: &TrialMatrix, k: usize) -> Result<f64, BenchError> {
    pass_hat_k_with(matrix, k, Estimator::Combinatorial)
}

pub fn pass_hat_k_with(matrix: &TrialMatrix, k: usize, estimator: Estimator) -> Result<f64, BenchError> {
    check_k(matrix, k)?;
    Ok(match estimator {
        Estimator::Combinatorial => mean(matrix, |t| binomial(t.c(), k) / binomial(t.n(), k)),
        Estimator::Partition => mean(matrix, |t| {
            let blocks: Vec<&[bool]> = t.outcomes.chunks_exact(k).collect();
            blocks.iter().filter(|b| b.iter().all(|&o| o)).count() as f64 / blocks.len() as f64
        }),
    })
}

pub fn pass_at_k(matrix: &TrialMatrix, k: usize) -> Result<f64, BenchError> {
    check_k(matrix, k)?;
    Ok(mean(matrix, |t| 1.0 - binomial(t.n() - t.c(), k) / binomial(t.n(), k)))
}
