//! Brute-force ground truth by enumerating every joint configuration.

use std::collections::BTreeMap;

use crate::dist::DenseDistribution;
use crate::error::{Error, Result};
use crate::graph::FactorGraph;
use crate::logspace::log_sum_exp;
use crate::result::{InferenceResult, Status};

/// Largest joint state space enumerated by default (2^22).
pub const DEFAULT_ENUMERATION_CAP: u64 = 1 << 22;

/// Free-energy decomposition of a distribution `p`, in units where `k = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeEnergyReport {
    /// `U = Σ p E`
    pub internal_energy: f64,
    /// `TH = -kT Σ p ln p`
    pub entropy_times_t: f64,
    /// `A = U - TH`
    pub free_energy: f64,
    pub log_partition: Option<f64>,
    pub kl_to_boltzmann: Option<f64>,
    /// `|A + kT ln Z - kT D(p‖p0)|` when the reference quantities were computed.
    pub identity_residual: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct Oracle {
    pub cap: u64,
}

impl Default for Oracle {
    fn default() -> Self {
        Self {
            cap: DEFAULT_ENUMERATION_CAP,
        }
    }
}

/// Calls `visit(index, states)` for every configuration in row-major order.
pub(crate) fn for_each_configuration(cards: &[usize], mut visit: impl FnMut(usize, &[usize])) {
    let total: usize = cards.iter().product();
    let mut states = vec![0usize; cards.len()];
    for idx in 0..total {
        visit(idx, &states);
        for k in (0..cards.len()).rev() {
            states[k] += 1;
            if states[k] < cards[k] {
                break;
            }
            states[k] = 0;
        }
    }
}

impl Oracle {
    pub fn with_cap(cap: u64) -> Self {
        Self { cap }
    }

    fn check_cap(&self, graph: &FactorGraph) -> Result<()> {
        let needed = graph.total_state_space();
        if needed > self.cap as u128 {
            return Err(Error::Capacity {
                what: "joint enumeration".into(),
                needed,
                cap: self.cap,
            });
        }
        Ok(())
    }

    /// `-E(x)/kT` for every configuration, graph variable order.
    fn log_weights(&self, graph: &FactorGraph) -> Result<Vec<f64>> {
        self.check_cap(graph)?;
        let kt = graph.temperature();
        let mut out = vec![0.0; graph.total_state_space() as usize];
        for_each_configuration(&graph.cardinalities(), |idx, states| {
            out[idx] = -graph.energy_of(states) / kt;
        });
        Ok(out)
    }

    /// `ln Z = ln Σ_x exp(-E(x)/kT)`.
    pub fn log_partition(&self, graph: &FactorGraph) -> Result<f64> {
        let lz = log_sum_exp(&self.log_weights(graph)?);
        if lz == f64::NEG_INFINITY {
            return Err(Error::Degenerate("partition function is zero".into()));
        }
        Ok(lz)
    }

    /// The Boltzmann distribution `p0` over all variables, in graph order.
    pub fn boltzmann(&self, graph: &FactorGraph) -> Result<DenseDistribution> {
        let lw = self.log_weights(graph)?;
        let lz = log_sum_exp(&lw);
        if lz == f64::NEG_INFINITY {
            return Err(Error::Degenerate("partition function is zero".into()));
        }
        let probabilities = lw.iter().map(|w| (w - lz).exp()).collect();
        Ok(DenseDistribution {
            scope: graph.variables().iter().map(|v| v.id.clone()).collect(),
            cards: graph.cardinalities(),
            probabilities,
        })
    }

    /// Exact marginals of `p0` on each target set.
    pub fn exact_marginals(&self, graph: &FactorGraph, targets: &[Vec<&str>]) -> Result<Vec<DenseDistribution>> {
        for t in targets {
            for id in t {
                graph.require_variable(id)?;
            }
        }
        let joint = self.boltzmann(graph)?;
        targets.iter().map(|t| joint.marginalize(t)).collect()
    }

    /// Single-variable marginals for every variable, graph order.
    pub fn variable_marginals(&self, graph: &FactorGraph) -> Result<Vec<Vec<f64>>> {
        let joint = self.boltzmann(graph)?;
        graph
            .variables()
            .iter()
            .map(|v| joint.marginalize(&[v.id.as_str()]).map(|d| d.probabilities))
            .collect()
    }

    /// Exact marginals as an engine result; the free energy reported is
    /// `-kT ln Z`.
    pub fn infer(&self, graph: &FactorGraph) -> Result<InferenceResult> {
        let lw = self.log_weights(graph)?;
        let lz = log_sum_exp(&lw);
        if lz == f64::NEG_INFINITY {
            return Err(Error::Degenerate("partition function is zero".into()));
        }
        let joint = DenseDistribution {
            scope: graph.variables().iter().map(|v| v.id.clone()).collect(),
            cards: graph.cardinalities(),
            probabilities: lw.iter().map(|w| (w - lz).exp()).collect(),
        };
        let beliefs = graph
            .variables()
            .iter()
            .map(|v| joint.marginalize(&[v.id.as_str()]).map(|d| d.probabilities))
            .collect::<Result<Vec<_>>>()?;
        Ok(InferenceResult {
            status: Status::Converged,
            iterations: 0,
            residual: 0.0,
            consistency_gap: None,
            soundness_residual: None,
            free_energy: BTreeMap::from([("helmholtz".to_string(), -graph.temperature() * lz)]),
            beliefs,
            variable_ids: joint.scope,
            warnings: Vec::new(),
        })
    }

    /// Helmholtz free energy `A(p) = U(p) - TH(p)`. With `with_reference`, also
    /// computes `ln Z` and `D(p‖p0)` and the residual of
    /// `A = -kT ln Z + kT D(p‖p0)`.
    pub fn helmholtz_free_energy(
        &self,
        graph: &FactorGraph,
        p: &DenseDistribution,
        with_reference: bool,
    ) -> Result<FreeEnergyReport> {
        let order = graph_order(graph, p)?;
        let kt = graph.temperature();
        let n = graph.num_variables();
        let mut u = 0.0;
        let mut graph_states = vec![0usize; n];
        for_each_configuration(&p.cards, |idx, states| {
            let prob = p.probabilities[idx];
            if prob > 0.0 {
                for (pos, &j) in order.iter().enumerate() {
                    graph_states[j] = states[pos];
                }
                u += prob * graph.energy_of(&graph_states);
            }
        });
        let th = kt * p.entropy();
        let a = u - th;
        let mut report = FreeEnergyReport {
            internal_energy: u,
            entropy_times_t: th,
            free_energy: a,
            log_partition: None,
            kl_to_boltzmann: None,
            identity_residual: None,
        };
        if with_reference {
            let p0 = self.boltzmann(graph)?;
            let p_graph = reorder(p, &order, graph);
            let kl = kl_divergence(&p_graph, &p0)?;
            let lz = log_sum_exp(&self.log_weights(graph)?);
            let rhs = -kt * lz + kt * kl;
            report.log_partition = Some(lz);
            report.kl_to_boltzmann = Some(kl);
            report.identity_residual = Some(if a.is_infinite() && rhs == a { 0.0 } else { (a - rhs).abs() });
        }
        Ok(report)
    }
}

/// Maps each position of `p`'s scope to the graph variable index; the scope
/// must be a permutation of the graph's variables.
fn graph_order(graph: &FactorGraph, p: &DenseDistribution) -> Result<Vec<usize>> {
    if p.scope.len() != graph.num_variables() {
        return Err(Error::input("distribution scope must cover every variable exactly once"));
    }
    let order = p
        .scope
        .iter()
        .map(|id| graph.require_variable(id))
        .collect::<Result<Vec<_>>>()?;
    let mut seen = vec![false; order.len()];
    for (&j, &c) in order.iter().zip(&p.cards) {
        if seen[j] || c != graph.cardinality(j) {
            return Err(Error::input("distribution scope does not match the graph"));
        }
        seen[j] = true;
    }
    Ok(order)
}

fn reorder(p: &DenseDistribution, order: &[usize], graph: &FactorGraph) -> DenseDistribution {
    let ids: Vec<&str> = order.iter().map(|&j| graph.variable_id(j)).collect();
    let mut by_graph: Vec<&str> = vec![""; ids.len()];
    for (pos, &j) in order.iter().enumerate() {
        by_graph[j] = ids[pos];
    }
    p.marginalize(&by_graph).expect("scope already checked")
}

/// `D(p‖q) = Σ p ln(p/q)` with `0 ln(0/q) = 0`; `+inf` if `p > 0` where `q = 0`.
pub fn kl_divergence(p: &DenseDistribution, q: &DenseDistribution) -> Result<f64> {
    if p.scope != q.scope || p.cards != q.cards {
        return Err(Error::input("KL divergence needs identical scopes"));
    }
    let mut d = 0.0;
    for (&a, &b) in p.probabilities.iter().zip(&q.probabilities) {
        if a > 0.0 {
            if b == 0.0 {
                return Ok(f64::INFINITY);
            }
            d += a * (a / b).ln();
        }
    }
    Ok(d.max(0.0))
}

pub fn log_partition(graph: &FactorGraph) -> Result<f64> {
    Oracle::default().log_partition(graph)
}

pub fn exact_marginals(graph: &FactorGraph, targets: &[Vec<&str>]) -> Result<Vec<DenseDistribution>> {
    Oracle::default().exact_marginals(graph, targets)
}

pub fn helmholtz_free_energy(graph: &FactorGraph, p: &DenseDistribution, with_reference: bool) -> Result<FreeEnergyReport> {
    Oracle::default().helmholtz_free_energy(graph, p, with_reference)
}
