//! Sum-product belief propagation over non-prior factors, and the Bethe
//! free energy.
//!
//! Priors never get messages of their own: the message a prior would send is
//! proportional to the prior itself, so it is folded directly into the
//! variable-to-factor update and into the variable beliefs.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::FactorGraph;
use crate::logspace::{self, damp, max_abs_diff, normalize_log};
use crate::result::{InferenceResult, Status};
use crate::table::LocalTable;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the largest absolute log-message change.
    pub tolerance: f64,
    /// Weight on the old message when mixing in log space, in `[0, 1)`.
    pub damping: f64,
}

impl Default for BpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 1000,
            tolerance: 1e-8,
            damping: 0.5,
        }
    }
}

impl BpOptions {
    pub(crate) fn check(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::input("tolerance must be positive"));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::input("damping must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// One factor-variable incidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub factor: usize,
    pub pos: usize,
    pub var: usize,
}

/// Messages stored as normalized log-distributions, one pair per edge.
#[derive(Debug, Clone, PartialEq)]
pub struct BpMessageState {
    pub edges: Vec<Edge>,
    /// First edge index of each factor; edge `offsets[a] + pos`.
    offsets: Vec<usize>,
    pub factor_to_var: Vec<Vec<f64>>,
    pub var_to_factor: Vec<Vec<f64>>,
    pub iteration: usize,
    pub residual: f64,
}

impl BpMessageState {
    /// Factor messages start uniform; variable messages start at the
    /// variable update applied to them, i.e. proportional to the prior.
    pub fn initial(graph: &FactorGraph) -> Result<Self> {
        let mut edges = Vec::new();
        let mut offsets = Vec::with_capacity(graph.factors().len());
        for (a, f) in graph.factors().iter().enumerate() {
            offsets.push(edges.len());
            edges.extend(f.scope.iter().enumerate().map(|(pos, &var)| Edge { factor: a, pos, var }));
        }
        let kt = graph.temperature();
        let factor_to_var = edges.iter().map(|e| logspace::uniform_log(graph.cardinality(e.var))).collect();
        let var_to_factor = edges
            .iter()
            .map(|e| {
                let mut m: Vec<f64> = graph.prior(e.var).iter().map(|x| -x / kt).collect();
                normalize_log(&mut m, || format!("prior of {}", graph.variable_id(e.var)))?;
                Ok(m)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            edges,
            offsets,
            factor_to_var,
            var_to_factor,
            iteration: 0,
            residual: f64::INFINITY,
        })
    }

    pub fn edge_index(&self, factor: usize, pos: usize) -> usize {
        self.offsets[factor] + pos
    }

    fn lookup(&self, graph: &FactorGraph, factor: &str, var: &str) -> Option<usize> {
        let a = graph.factor_index(factor)?;
        let j = graph.variable_index(var)?;
        let pos = graph.factor(a).scope.iter().position(|&v| v == j)?;
        Some(self.edge_index(a, pos))
    }

    pub fn factor_to_var_message(&self, graph: &FactorGraph, factor: &str, var: &str) -> Option<&[f64]> {
        self.lookup(graph, factor, var).map(|e| self.factor_to_var[e].as_slice())
    }

    pub fn var_to_factor_message(&self, graph: &FactorGraph, var: &str, factor: &str) -> Option<&[f64]> {
        self.lookup(graph, factor, var).map(|e| self.var_to_factor[e].as_slice())
    }
}

fn message_name(graph: &FactorGraph, e: &Edge, to_var: bool) -> String {
    let f = &graph.factor(e.factor).id;
    let v = graph.variable_id(e.var);
    if to_var {
        format!("message {f}->{v}")
    } else {
        format!("message {v}->{f}")
    }
}

/// One synchronous round: all factor-to-variable messages from the old
/// variable messages, damped; then all variable-to-factor messages from the
/// new factor messages, damped.
pub fn bp_iterate(graph: &FactorGraph, state: &BpMessageState, opts: &BpOptions) -> Result<BpMessageState> {
    let kt = graph.temperature();
    let mut next = state.clone();
    let mut residual: f64 = 0.0;

    for (a, f) in graph.factors().iter().enumerate() {
        let table = LocalTable::from_factor(f);
        for pos in 0..f.scope.len() {
            let fields: Vec<Option<&[f64]>> = (0..f.scope.len())
                .map(|k| (k != pos).then(|| state.var_to_factor[state.edge_index(a, k)].as_slice()))
                .collect();
            let lw = table.log_weights(kt, &fields);
            let mut proposed = table.log_marginal(&lw, pos);
            let e = state.edge_index(a, pos);
            let edge = state.edges[e];
            normalize_log(&mut proposed, || message_name(graph, &edge, true))?;
            let new = damp(&state.factor_to_var[e], &proposed, opts.damping, || message_name(graph, &edge, true))?;
            residual = residual.max(max_abs_diff(&new, &state.factor_to_var[e]));
            next.factor_to_var[e] = new;
        }
    }

    for (e, edge) in state.edges.iter().enumerate() {
        let mut proposed: Vec<f64> = graph.prior(edge.var).iter().map(|x| -x / kt).collect();
        for &(b, q) in graph.neighbors(edge.var) {
            if b == edge.factor {
                continue;
            }
            let m = &next.factor_to_var[next.edge_index(b, q)];
            proposed.iter_mut().zip(m).for_each(|(p, v)| *p += v);
        }
        normalize_log(&mut proposed, || message_name(graph, edge, false))?;
        let new = damp(&state.var_to_factor[e], &proposed, opts.damping, || message_name(graph, edge, false))?;
        residual = residual.max(max_abs_diff(&new, &state.var_to_factor[e]));
        next.var_to_factor[e] = new;
    }

    next.iteration = state.iteration + 1;
    next.residual = residual;
    Ok(next)
}

/// Factor and variable beliefs, both normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct BetheBeliefs {
    /// One joint table per non-prior factor, in factor order.
    pub factors: Vec<Vec<f64>>,
    pub variables: Vec<Vec<f64>>,
}

pub fn beliefs(graph: &FactorGraph, state: &BpMessageState) -> Result<BetheBeliefs> {
    let kt = graph.temperature();
    let variables = (0..graph.num_variables())
        .map(|j| {
            let mut lb: Vec<f64> = graph.prior(j).iter().map(|x| -x / kt).collect();
            for &(a, pos) in graph.neighbors(j) {
                let m = &state.factor_to_var[state.edge_index(a, pos)];
                lb.iter_mut().zip(m).for_each(|(b, v)| *b += v);
            }
            if logspace::log_sum_exp(&lb) == f64::NEG_INFINITY {
                return Err(Error::Degenerate(format!("belief of {}", graph.variable_id(j))));
            }
            Ok(logspace::to_probabilities(&lb))
        })
        .collect::<Result<Vec<_>>>()?;
    let factors = graph
        .factors()
        .iter()
        .enumerate()
        .map(|(a, f)| {
            let table = LocalTable::from_factor(f);
            let fields: Vec<Option<&[f64]>> = (0..f.scope.len())
                .map(|k| Some(state.var_to_factor[state.edge_index(a, k)].as_slice()))
                .collect();
            table.probabilities(&table.log_weights(kt, &fields), || format!("belief of {}", f.id))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BetheBeliefs { factors, variables })
}

/// Largest `|Σ_{x_α \ x_j} b_α - b_j|` over all incidences.
pub fn marginal_consistency(graph: &FactorGraph, b: &BetheBeliefs) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, f) in graph.factors().iter().enumerate() {
        let table = LocalTable::from_factor(f);
        for (pos, m) in table.marginals(&b.factors[a]).iter().enumerate() {
            worst = worst.max(max_abs_diff(m, &b.variables[f.scope[pos]]));
        }
    }
    worst
}

fn check_normalized(p: &[f64], what: impl FnOnce() -> String) -> Result<()> {
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-6 || p.iter().any(|x| !(*x >= 0.0)) {
        return Err(Error::input(format!("{} is not normalized (sum {s})", what())));
    }
    Ok(())
}

fn neg_entropy(p: &[f64]) -> f64 {
    -logspace::entropy(p)
}

/// Bethe free energy with each prior treated as a unary factor whose belief
/// equals the variable belief, so `C_j` counts the prior as well:
///
/// `Σ_α [Σ b_α E_α + kT Σ b_α ln b_α] + Σ_j [Σ b_j E_j + kT Σ b_j ln b_j]
///  + kT Σ_j (1 - C_j) Σ b_j ln b_j`.
pub fn bethe_free_energy(graph: &FactorGraph, b: &BetheBeliefs) -> Result<f64> {
    let kt = graph.temperature();
    if b.factors.len() != graph.factors().len() || b.variables.len() != graph.num_variables() {
        return Err(Error::input("beliefs must cover every factor and variable"));
    }
    let mut total = 0.0;
    for (f, bf) in graph.factors().iter().zip(&b.factors) {
        if bf.len() != f.energies.len() {
            return Err(Error::input(format!("belief of {} has the wrong size", f.id)));
        }
        check_normalized(bf, || format!("belief of {}", f.id))?;
        total += logspace::expected_energy(bf, &f.energies) + kt * neg_entropy(bf);
    }
    for (j, bj) in b.variables.iter().enumerate() {
        if bj.len() != graph.cardinality(j) {
            return Err(Error::input(format!("belief of {} has the wrong size", graph.variable_id(j))));
        }
        check_normalized(bj, || format!("belief of {}", graph.variable_id(j)))?;
        let c = graph.neighbors(j).len() as f64 + 1.0;
        total += logspace::expected_energy(bj, graph.prior(j)) + kt * neg_entropy(bj);
        total += kt * (1.0 - c) * neg_entropy(bj);
    }
    Ok(total)
}

#[derive(Debug, Clone)]
pub struct BpOutcome {
    pub result: InferenceResult,
    pub state: BpMessageState,
    pub beliefs: BetheBeliefs,
}

/// Runs [`bp_iterate`] from the initial state until the residual drops to
/// the tolerance or the iteration budget is spent.
pub fn bp_run(graph: &FactorGraph, opts: &BpOptions) -> Result<BpOutcome> {
    opts.check()?;
    let mut state = BpMessageState::initial(graph)?;
    let mut status = Status::MaxIterations;
    if state.edges.is_empty() {
        state.residual = 0.0;
        status = Status::Converged;
    } else {
        for _ in 0..opts.max_iterations {
            state = bp_iterate(graph, &state, opts)?;
            if state.residual <= opts.tolerance {
                status = Status::Converged;
                break;
            }
        }
    }
    let b = beliefs(graph, &state)?;
    let mut free_energy = BTreeMap::new();
    free_energy.insert("bethe".to_string(), bethe_free_energy(graph, &b)?);
    let result = InferenceResult {
        status,
        iterations: state.iteration,
        residual: state.residual,
        consistency_gap: None,
        soundness_residual: None,
        free_energy,
        beliefs: b.variables.clone(),
        variable_ids: graph.variables().iter().map(|v| v.id.clone()).collect(),
        warnings: Vec::new(),
    };
    Ok(BpOutcome {
        result,
        state,
        beliefs: b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{g1, g2};
    use crate::graph::GraphSpec;
    use crate::oracle;

    fn probs(logs: &[f64]) -> Vec<f64> {
        logs.iter().map(|x| x.exp()).collect()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn g1_first_round() {
        let g = g1();
        let opts = BpOptions {
            damping: 0.0,
            ..Default::default()
        };
        let s = bp_iterate(&g, &BpMessageState::initial(&g).unwrap(), &opts).unwrap();
        let m = probs(s.factor_to_var_message(&g, "fa", "x1").unwrap());
        assert!(close(&m, &[0.5, 0.5], 1e-15));
        let m = probs(s.var_to_factor_message(&g, "x1", "fa").unwrap());
        assert!(close(&m, &[2.0 / 3.0, 1.0 / 3.0], 1e-15));
    }

    #[test]
    fn normalization_kept_every_round() {
        let g = g2();
        let mut s = BpMessageState::initial(&g).unwrap();
        for _ in 0..5 {
            s = bp_iterate(&g, &s, &BpOptions::default()).unwrap();
            for m in s.factor_to_var.iter().chain(&s.var_to_factor) {
                assert!(logspace::log_sum_exp(m).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn g1_and_g2_are_exact() {
        let opts = BpOptions {
            tolerance: 1e-12,
            ..Default::default()
        };
        let out = bp_run(&g1(), &opts).unwrap();
        assert!(out.result.status.is_converged());
        assert!(close(out.result.marginal("x1").unwrap(), &[2.0 / 3.0, 1.0 / 3.0], 1e-8));
        assert!(close(out.result.marginal("x2").unwrap(), &[5.0 / 9.0, 4.0 / 9.0], 1e-8));
        assert!((out.result.free_energy["bethe"] + 2.25f64.ln()).abs() < 1e-6);

        let g = g2();
        let out = bp_run(&g, &opts).unwrap();
        assert!(close(out.result.marginal("x3").unwrap(), &[14.0 / 27.0, 13.0 / 27.0], 1e-8));
        let lz = oracle::log_partition(&g).unwrap();
        assert!((out.result.free_energy["bethe"] + lz).abs() < 1e-6);
        assert!(marginal_consistency(&g, &out.beliefs) < 1e-10);
    }

    #[test]
    fn fixed_point_is_stationary() {
        let g = g2();
        let opts = BpOptions {
            tolerance: 1e-12,
            ..Default::default()
        };
        let out = bp_run(&g, &opts).unwrap();
        let again = bp_iterate(&g, &out.state, &opts).unwrap();
        assert!(again.residual <= opts.tolerance);
        let undamped = BpOptions { damping: 0.0, ..opts };
        assert!(bp_iterate(&g, &out.state, &undamped).unwrap().residual <= 10.0 * opts.tolerance);
    }

    #[test]
    fn priors_only() {
        let g = GraphSpec::new()
            .variable("a", 3)
            .prior("a", vec![0.0, 1.0, 2.0])
            .build()
            .unwrap();
        let out = bp_run(&g, &BpOptions::default()).unwrap();
        assert_eq!(out.result.iterations, 0);
        assert!(out.result.status.is_converged());
        let z: f64 = (0..3).map(|k| (-(k as f64)).exp()).sum();
        let expect: Vec<f64> = (0..3).map(|k| (-(k as f64)).exp() / z).collect();
        assert!(close(out.result.marginal("a").unwrap(), &expect, 1e-15));
    }

    #[test]
    fn single_factor_bethe_is_helmholtz() {
        let g = GraphSpec::new()
            .variable("a", 2)
            .variable("b", 3)
            .prior("a", vec![0.3, 0.0])
            .factor("f", ["a", "b"], vec![0.0, 1.0, 0.2, 0.7, f64::INFINITY, 0.1])
            .build()
            .unwrap();
        let joint = oracle::Oracle::default().boltzmann(&g).unwrap();
        let b = BetheBeliefs {
            factors: vec![joint.probabilities.clone()],
            variables: vec![
                joint.marginalize(&["a"]).unwrap().probabilities,
                joint.marginalize(&["b"]).unwrap().probabilities,
            ],
        };
        // the prior on `a` is a unary factor; C_a = 2, C_b = 1
        let value = bethe_free_energy(&g, &b).unwrap();
        assert!((value + oracle::log_partition(&g).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn unnormalized_beliefs_rejected() {
        let g = g1();
        let b = BetheBeliefs {
            factors: vec![vec![0.25; 4]],
            variables: vec![vec![0.5, 0.5], vec![0.5, 0.6]],
        };
        assert!(bethe_free_energy(&g, &b).is_err());
    }
}
