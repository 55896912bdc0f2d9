use crate::error::{Error, Result};
use crate::graph::{strides, FactorGraph};
use crate::logspace;

/// Explicit probability table over an ordered scope, row-major with the last
/// variable fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseDistribution {
    pub scope: Vec<String>,
    pub cards: Vec<usize>,
    pub probabilities: Vec<f64>,
}

impl DenseDistribution {
    pub fn new(scope: Vec<String>, cards: Vec<usize>, probabilities: Vec<f64>) -> Result<Self> {
        let size: usize = cards.iter().product();
        if scope.len() != cards.len() || probabilities.len() != size {
            return Err(Error::input(format!(
                "distribution over {} variables needs {size} entries, got {}",
                scope.len(),
                probabilities.len()
            )));
        }
        if probabilities.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::input("probabilities must be finite and nonnegative"));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::input(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self {
            scope,
            cards,
            probabilities,
        })
    }

    /// Uniform distribution over the given scope of `graph`.
    pub fn uniform(graph: &FactorGraph, scope: &[&str]) -> Result<Self> {
        let cards = scope
            .iter()
            .map(|id| graph.require_variable(id).map(|j| graph.cardinality(j)))
            .collect::<Result<Vec<_>>>()?;
        let size: usize = cards.iter().product();
        Ok(Self {
            scope: scope.iter().map(|s| s.to_string()).collect(),
            cards,
            probabilities: vec![1.0 / size as f64; size],
        })
    }

    pub fn entropy(&self) -> f64 {
        logspace::entropy(&self.probabilities)
    }

    /// Sums out every variable not in `keep`; the result follows `keep`'s order.
    pub fn marginalize(&self, keep: &[&str]) -> Result<Self> {
        let positions = keep
            .iter()
            .map(|id| {
                self.scope
                    .iter()
                    .position(|s| s == id)
                    .ok_or_else(|| Error::input(format!("{id} is not in the distribution scope")))
            })
            .collect::<Result<Vec<_>>>()?;
        let out_cards: Vec<usize> = positions.iter().map(|&p| self.cards[p]).collect();
        let out_strides = strides(&out_cards);
        let in_strides = strides(&self.cards);
        let mut out = vec![0.0; out_cards.iter().product()];
        for (idx, &p) in self.probabilities.iter().enumerate() {
            let mut o = 0;
            for (k, &pos) in positions.iter().enumerate() {
                o += (idx / in_strides[pos]) % self.cards[pos] * out_strides[k];
            }
            out[o] += p;
        }
        Ok(Self {
            scope: keep.iter().map(|s| s.to_string()).collect(),
            cards: out_cards,
            probabilities: out,
        })
    }
}
