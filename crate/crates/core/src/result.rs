use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    MaxIterations,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::MaxIterations => "max-iters",
        }
    }

    pub fn is_converged(self) -> bool {
        self == Status::Converged
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Engine-independent outcome of an inference run.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    pub status: Status,
    pub iterations: usize,
    pub residual: f64,
    pub consistency_gap: Option<f64>,
    pub soundness_residual: Option<f64>,
    /// Named free-energy diagnostics, e.g. `bethe` or `regional`.
    pub free_energy: BTreeMap<String, f64>,
    /// Per-variable beliefs in graph variable order.
    pub beliefs: Vec<Vec<f64>>,
    pub variable_ids: Vec<String>,
    pub warnings: Vec<String>,
}

impl InferenceResult {
    pub fn marginal(&self, id: &str) -> Option<&[f64]> {
        self.variable_ids
            .iter()
            .position(|v| v == id)
            .map(|j| self.beliefs[j].as_slice())
    }

    pub fn marginals(&self) -> BTreeMap<String, Vec<f64>> {
        self.variable_ids
            .iter()
            .cloned()
            .zip(self.beliefs.iter().cloned())
            .collect()
    }
}

/// Largest total-variation distance between two lists of marginals.
pub fn max_tv(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| crate::logspace::total_variation(p, q))
        .fold(0.0, f64::max)
}
