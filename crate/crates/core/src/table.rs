//! Dense local tables (a factor, or a region's augmented energy) and the
//! marginalization kernels every message update reduces to.

use crate::error::{Error, Result};
use crate::graph::{strides, Factor};

#[derive(Debug, Clone, PartialEq)]
pub struct LocalTable {
    /// Graph variable indices, one per axis.
    pub vars: Vec<usize>,
    pub cards: Vec<usize>,
    pub energies: Vec<f64>,
}

impl LocalTable {
    pub fn from_factor(f: &Factor) -> Self {
        Self {
            vars: f.scope.clone(),
            cards: f.cards.clone(),
            energies: f.energies.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn position(&self, var: usize) -> Option<usize> {
        self.vars.iter().position(|&v| v == var)
    }

    /// `-E(x)/kT + Σ_pos field_pos(x_pos)` for every entry. `None` fields are zero.
    pub fn log_weights(&self, kt: f64, fields: &[Option<&[f64]>]) -> Vec<f64> {
        debug_assert_eq!(fields.len(), self.cards.len());
        let st = strides(&self.cards);
        let active: Vec<(usize, &[f64])> = fields
            .iter()
            .enumerate()
            .filter_map(|(p, f)| f.map(|f| (p, f)))
            .collect();
        self.energies
            .iter()
            .enumerate()
            .map(|(idx, &e)| {
                let mut w = -e / kt;
                if w == f64::NEG_INFINITY {
                    return w;
                }
                for &(p, f) in &active {
                    w += f[(idx / st[p]) % self.cards[p]];
                }
                w
            })
            .collect()
    }

    /// Unnormalized `ln Σ_{x \ x_pos} exp(w(x))` at one axis.
    pub fn log_marginal(&self, log_weights: &[f64], pos: usize) -> Vec<f64> {
        let stride = strides(&self.cards)[pos];
        let card = self.cards[pos];
        let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return vec![f64::NEG_INFINITY; card];
        }
        let mut acc = vec![0.0; card];
        for (idx, &w) in log_weights.iter().enumerate() {
            acc[(idx / stride) % card] += (w - max).exp();
        }
        acc.into_iter().map(|a| a.ln() + max).collect()
    }

    /// Normalized joint probabilities from log weights.
    pub fn probabilities(&self, log_weights: &[f64], what: impl FnOnce() -> String) -> Result<Vec<f64>> {
        let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::Degenerate(format!("{} has no finite-energy configuration", what())));
        }
        let mut p: Vec<f64> = log_weights.iter().map(|w| (w - max).exp()).collect();
        let z: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= z);
        Ok(p)
    }

    /// Linear marginals of a normalized joint at every axis.
    pub fn marginals(&self, probs: &[f64]) -> Vec<Vec<f64>> {
        let st = strides(&self.cards);
        let mut out: Vec<Vec<f64>> = self.cards.iter().map(|&c| vec![0.0; c]).collect();
        for (idx, &p) in probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (k, m) in out.iter_mut().enumerate() {
                m[(idx / st[k]) % self.cards[k]] += p;
            }
        }
        out
    }

    /// Joint marginal of two axes, row-major over `(a, b)`.
    pub fn pair_marginal(&self, probs: &[f64], a: usize, b: usize) -> Vec<f64> {
        let st = strides(&self.cards);
        let cb = self.cards[b];
        let mut out = vec![0.0; self.cards[a] * cb];
        for (idx, &p) in probs.iter().enumerate() {
            let xa = (idx / st[a]) % self.cards[a];
            let xb = (idx / st[b]) % cb;
            out[xa * cb + xb] += p;
        }
        out
    }
}
