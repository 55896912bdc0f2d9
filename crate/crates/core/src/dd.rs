//! Domain decomposition: the outer loop that alternates corrective
//! potentials, per-region solves, and message re-estimation.
//!
//! Each round:
//! 1. `V_j^R = E_j + kT Σ_{S ∋ j, S ≠ R} ln F_{j→S}` for every boundary incidence;
//! 2. every region is solved independently (in parallel) with those
//!    potentials, its internal fields warm-started at `F_{j→R}`;
//! 3. `F_{R→j} ∝ μ_j^R / F_{j→R}`;
//! 4. `F_{j→R} ∝ f_j ∏_{S ∋ j, S ≠ R} F_{S→j}`.
//!
//! Both message families are damped in log space.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::FactorGraph;
use crate::logspace::{self, damp, max_abs_diff, normalize_log, total_variation, LOG_FLOOR, PROB_FLOOR};
use crate::regions::{self, region_message, variable_message, RegionDecomposition, RegionalBeliefs};
use crate::result::{InferenceResult, Status};
use crate::solvers::{
    solve_region_gibbs, solve_with_table, GibbsSolverOptions, InnerOptions, RegionProblem, RegionSolution,
};

/// Which black box solves the regions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegionSolver {
    Exact(InnerOptions),
    Gibbs(GibbsSolverOptions),
}

impl RegionSolver {
    /// Exact solver with no inner field updates: each region returns the
    /// Boltzmann marginals of its augmented energy under the fields `F_{j→R}`.
    pub fn exact_one_shot() -> Self {
        RegionSolver::Exact(InnerOptions {
            max_iterations: 0,
            ..InnerOptions::default()
        })
    }

    pub fn gibbs_one_shot(sampler: crate::solvers::GibbsOptions) -> Self {
        RegionSolver::Gibbs(GibbsSolverOptions {
            inner: InnerOptions {
                max_iterations: 0,
                ..InnerOptions::sampling()
            },
            sampler,
            outer_iteration: 0,
        })
    }
}

/// How `F_{j→R}` starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DdInit {
    Uniform,
    /// Proportional to the variable's prior factor `f_j`.
    Prior,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the largest log-message change.
    pub tolerance: f64,
    /// Weight on the old message, in `[0, 1]`.
    pub damping: f64,
    pub solver: RegionSolver,
    pub init: DdInit,
    /// Evaluate the soundness residual at the end of the run (needs exact
    /// marginalization of every region).
    pub check_soundness: bool,
}

impl Default for DdOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-6,
            damping: 0.5,
            solver: RegionSolver::exact_one_shot(),
            init: DdInit::Uniform,
            check_soundness: false,
        }
    }
}

impl DdOptions {
    fn check(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::input("tolerance must be positive"));
        }
        if !(0.0..=1.0).contains(&self.damping) {
            return Err(Error::input("damping must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// `F_{j→R}` and `F_{R→j}`, indexed `[region][boundary slot]`, as
/// normalized log-distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct DdMessageState {
    pub var_to_region: Vec<Vec<Vec<f64>>>,
    pub region_to_var: Vec<Vec<Vec<f64>>>,
    pub iteration: usize,
    pub residual: f64,
}

impl DdMessageState {
    pub fn initial(graph: &FactorGraph, decomp: &RegionDecomposition, init: DdInit) -> Result<Self> {
        let kt = graph.temperature();
        let uniform = |j: usize| logspace::uniform_log(graph.cardinality(j));
        let region_to_var = decomp
            .regions
            .iter()
            .map(|r| r.boundary.iter().map(|&j| uniform(j)).collect())
            .collect();
        let var_to_region = decomp
            .regions
            .iter()
            .map(|r| {
                r.boundary
                    .iter()
                    .map(|&j| match init {
                        DdInit::Uniform => Ok(uniform(j)),
                        DdInit::Prior => {
                            let mut m: Vec<f64> = graph.prior(j).iter().map(|e| -e / kt).collect();
                            normalize_log(&mut m, || format!("prior of {}", graph.variable_id(j)))?;
                            Ok(m)
                        }
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            var_to_region,
            region_to_var,
            iteration: 0,
            residual: f64::INFINITY,
        })
    }

    /// `F_{j→R}` for named endpoints.
    pub fn var_to_region_message(&self, decomp: &RegionDecomposition, graph: &FactorGraph, var: &str, region: &str) -> Option<&[f64]> {
        let (r, slot) = locate(decomp, graph, var, region)?;
        Some(&self.var_to_region[r][slot])
    }

    /// `F_{R→j}` for named endpoints.
    pub fn region_to_var_message(&self, decomp: &RegionDecomposition, graph: &FactorGraph, region: &str, var: &str) -> Option<&[f64]> {
        let (r, slot) = locate(decomp, graph, var, region)?;
        Some(&self.region_to_var[r][slot])
    }
}

fn locate(decomp: &RegionDecomposition, graph: &FactorGraph, var: &str, region: &str) -> Option<(usize, usize)> {
    let r = decomp.region_index(region)?;
    let j = graph.variable_index(var)?;
    Some((r, decomp.regions[r].boundary_slot(j)?))
}

/// Corrective potentials `V_j^R`, indexed `[region][boundary slot]`.
pub fn compute_potentials(graph: &FactorGraph, decomp: &RegionDecomposition, state: &DdMessageState) -> Vec<Vec<Vec<f64>>> {
    let kt = graph.temperature();
    decomp
        .regions
        .iter()
        .enumerate()
        .map(|(r, region)| {
            region
                .boundary
                .iter()
                .map(|&j| {
                    let mut v = graph.prior(j).to_vec();
                    for &(s, slot) in &decomp.boundary_memberships[j] {
                        if s != r {
                            v.iter_mut()
                                .zip(&state.var_to_region[s][slot])
                                .for_each(|(a, l)| *a += kt * l);
                        }
                    }
                    v
                })
                .collect()
        })
        .collect()
}

/// `V_j^R` for one named boundary incidence.
pub fn potential(graph: &FactorGraph, decomp: &RegionDecomposition, state: &DdMessageState, var: &str, region: &str) -> Result<Vec<f64>> {
    let j = graph.require_variable(var)?;
    let r = decomp
        .region_index(region)
        .ok_or_else(|| Error::input(format!("unknown region {region}")))?;
    let slot = decomp.regions[r]
        .boundary_slot(j)
        .ok_or_else(|| Error::input(format!("{var} is not a boundary variable of {region}")))?;
    Ok(compute_potentials(graph, decomp, state).swap_remove(r).swap_remove(slot))
}

/// Per-region data that does not change between rounds.
pub struct DdContext {
    problems: Vec<RegionProblem>,
    /// Dense augmented tables, present for the exact solver.
    tables: Option<Vec<Vec<f64>>>,
}

impl DdContext {
    pub fn new(graph: &FactorGraph, decomp: &RegionDecomposition, solver: &RegionSolver) -> Result<Self> {
        let problems: Vec<RegionProblem> = (0..decomp.regions.len())
            .map(|r| RegionProblem::from_region(graph, decomp, r))
            .collect();
        let tables = match solver {
            RegionSolver::Exact(inner) => Some(
                problems
                    .iter()
                    .map(|p| p.dense_energies(inner.cap).map_err(|e| e.in_region(&p.region_id)))
                    .collect::<Result<Vec<_>>>()?,
            ),
            RegionSolver::Gibbs(_) => None,
        };
        Ok(Self { problems, tables })
    }
}

fn solve_regions(
    ctx: &DdContext,
    potentials: &[Vec<Vec<f64>>],
    state: &DdMessageState,
    solver: &RegionSolver,
) -> Result<Vec<RegionSolution>> {
    let outer = state.iteration as u64 + 1;
    let results: Vec<Result<RegionSolution>> = ctx
        .problems
        .par_iter()
        .enumerate()
        .map(|(r, base)| {
            let mut problem = base.clone();
            for (site, v) in problem.boundary.iter_mut().zip(&potentials[r]) {
                site.potential = v.clone();
            }
            problem.initial_fields = Some(state.var_to_region[r].clone());
            match solver {
                RegionSolver::Exact(inner) => {
                    let table = &ctx.tables.as_ref().expect("tables built for the exact solver")[r];
                    solve_with_table(&problem, table, inner).map_err(|e| e.in_region(&problem.region_id))
                }
                RegionSolver::Gibbs(opts) => solve_region_gibbs(
                    &problem,
                    &GibbsSolverOptions {
                        outer_iteration: outer,
                        ..*opts
                    },
                ),
            }
        })
        .collect();
    results.into_iter().collect()
}

/// One outer round. Returns the new state and the region solutions the
/// round was computed from.
pub fn dd_iterate(
    graph: &FactorGraph,
    decomp: &RegionDecomposition,
    ctx: &DdContext,
    state: &DdMessageState,
    opts: &DdOptions,
) -> Result<(DdMessageState, Vec<RegionSolution>)> {
    let potentials = compute_potentials(graph, decomp, state);
    let solutions = solve_regions(ctx, &potentials, state, &opts.solver)?;
    let mut next = state.clone();
    let mut residual: f64 = 0.0;
    for (r, region) in decomp.regions.iter().enumerate() {
        for (slot, &j) in region.boundary.iter().enumerate() {
            let incoming = &state.var_to_region[r][slot];
            let mut proposed: Vec<f64> = logspace::to_floored_logs(&solutions[r].boundary_marginals[slot])
                .iter()
                .zip(incoming)
                .map(|(&m, &f)| if m <= LOG_FLOOR { LOG_FLOOR } else { m - f })
                .collect();
            let name = || format!("message {}->{}", region.id, graph.variable_id(j));
            normalize_log(&mut proposed, name)?;
            let old = &state.region_to_var[r][slot];
            let new = damp(old, &proposed, opts.damping, name)?;
            residual = residual.max(max_abs_diff(&new, old));
            next.region_to_var[r][slot] = new;
        }
    }
    for (r, region) in decomp.regions.iter().enumerate() {
        for (slot, &j) in region.boundary.iter().enumerate() {
            let proposed = variable_message(graph, decomp, &next.region_to_var, r, j)?;
            let old = &state.var_to_region[r][slot];
            let new = damp(old, &proposed, opts.damping, || {
                format!("message {}->{}", graph.variable_id(j), region.id)
            })?;
            residual = residual.max(max_abs_diff(&new, old));
            next.var_to_region[r][slot] = new;
        }
    }
    next.iteration = state.iteration + 1;
    next.residual = residual;
    Ok((next, solutions))
}

/// Largest total-variation distance between the estimates of one boundary
/// variable's marginal made by different regions.
pub fn consistency_gap(solutions: &[RegionSolution], decomp: &RegionDecomposition) -> f64 {
    let mut gap: f64 = 0.0;
    for memberships in &decomp.boundary_memberships {
        for (i, &(r, s)) in memberships.iter().enumerate() {
            for &(q, t) in &memberships[i + 1..] {
                gap = gap.max(total_variation(
                    &solutions[r].boundary_marginals[s],
                    &solutions[q].boundary_marginals[t],
                ));
            }
        }
    }
    gap
}

/// Residuals of the regional BP fixed-point equations with
/// `M_{j→R} := F_{j→R}` and `M_{R→j} := F_{R→j}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoundnessReport {
    /// Largest `|ln F_{R→j} - ln(Σ f̃_R ∏_{k≠j} F_{k→R})|`, both normalized.
    pub region_residual: f64,
    /// Largest `|ln F_{j→R} - ln(f_j ∏_{S≠R} F_{S→j})|`, both normalized.
    pub variable_residual: f64,
    pub residual: f64,
    pub passed: bool,
}

pub fn soundness_check(graph: &FactorGraph, decomp: &RegionDecomposition, state: &DdMessageState, tol: f64) -> Result<SoundnessReport> {
    let tables = regions::augmented_tables(graph, decomp, crate::oracle::DEFAULT_ENUMERATION_CAP)?;
    let mut region_residual: f64 = 0.0;
    let mut variable_residual: f64 = 0.0;
    for (r, region) in decomp.regions.iter().enumerate() {
        for (slot, &j) in region.boundary.iter().enumerate() {
            let m = region_message(graph, region, &tables[r], &state.var_to_region[r], slot)?;
            region_residual = region_residual.max(max_abs_diff(&m, &state.region_to_var[r][slot]));
            let v = variable_message(graph, decomp, &state.region_to_var, r, j)?;
            variable_residual = variable_residual.max(max_abs_diff(&v, &state.var_to_region[r][slot]));
        }
    }
    let residual = region_residual.max(variable_residual);
    Ok(SoundnessReport {
        region_residual,
        variable_residual,
        residual,
        passed: residual <= tol,
    })
}

#[derive(Debug, Clone)]
pub struct DdOutcome {
    pub result: InferenceResult,
    pub state: DdMessageState,
    /// Region solutions of the last round.
    pub solutions: Vec<RegionSolution>,
    pub soundness: Option<SoundnessReport>,
}

/// Variable beliefs: boundary variables average their regions' estimates,
/// interior variables take their owner's marginal, variables outside every
/// region are proportional to their prior.
fn assemble_beliefs(graph: &FactorGraph, decomp: &RegionDecomposition, solutions: &[RegionSolution]) -> Result<Vec<Vec<f64>>> {
    let kt = graph.temperature();
    (0..graph.num_variables())
        .map(|j| {
            if decomp.is_boundary(j) {
                let ms = &decomp.boundary_memberships[j];
                let mut b = vec![0.0; graph.cardinality(j)];
                for &(r, slot) in ms {
                    b.iter_mut()
                        .zip(&solutions[r].boundary_marginals[slot])
                        .for_each(|(a, m)| *a += m / ms.len() as f64);
                }
                let s: f64 = b.iter().sum();
                b.iter_mut().for_each(|x| *x /= s);
                Ok(b)
            } else if let Some(r) = decomp.owner[j] {
                let pos = decomp.regions[r].support.binary_search(&j).expect("owned");
                Ok(solutions[r].marginals[pos].clone())
            } else {
                let lb: Vec<f64> = graph.prior(j).iter().map(|e| -e / kt).collect();
                if logspace::log_sum_exp(&lb) == f64::NEG_INFINITY {
                    return Err(Error::Degenerate(format!("belief of {}", graph.variable_id(j))));
                }
                Ok(logspace::to_probabilities(&lb))
            }
        })
        .collect()
}

/// Runs the outer loop from the initial messages until the residual falls
/// to the tolerance or the iteration budget runs out. Non-convergence is a
/// status, not an error.
pub fn dd_run(graph: &FactorGraph, decomp: &RegionDecomposition, opts: &DdOptions) -> Result<DdOutcome> {
    opts.check()?;
    let ctx = DdContext::new(graph, decomp, &opts.solver)?;
    let mut state = DdMessageState::initial(graph, decomp, opts.init)?;
    let has_messages = decomp.regions.iter().any(|r| !r.boundary.is_empty());
    let mut status = Status::MaxIterations;
    let mut solutions = Vec::new();
    let rounds = if has_messages { opts.max_iterations } else { 1 };
    for _ in 0..rounds {
        let (next, sols) = dd_iterate(graph, decomp, &ctx, &state, opts)?;
        state = next;
        solutions = sols;
        if state.residual <= opts.tolerance {
            status = Status::Converged;
            break;
        }
    }
    if solutions.is_empty() {
        // zero iterations allowed: read the regions once at the initial state
        let potentials = compute_potentials(graph, decomp, &state);
        solutions = solve_regions(&ctx, &potentials, &state, &opts.solver)?;
    }
    let beliefs = assemble_beliefs(graph, decomp, &solutions)?;
    let gap = consistency_gap(&solutions, decomp);
    let mut free_energy = BTreeMap::new();
    if solutions.iter().all(|s| s.belief.is_some()) {
        let rb = RegionalBeliefs {
            regions: solutions.iter().map(|s| s.belief.clone().expect("checked")).collect(),
            variables: beliefs.clone(),
        };
        free_energy.insert("regional".to_string(), regions::regional_free_energy(graph, decomp, &rb)?);
    }
    let soundness = if opts.check_soundness {
        Some(soundness_check(graph, decomp, &state, opts.tolerance.max(1e-5))?)
    } else {
        None
    };
    let mut warnings = Vec::new();
    for (j, b) in beliefs.iter().enumerate() {
        if b.iter().any(|&p| p < PROB_FLOOR) {
            warnings.push(format!(
                "belief of {} has zero entries; the fixed point is not interior",
                graph.variable_id(j)
            ));
        }
    }
    for s in &solutions {
        if let Some(se) = &s.standard_errors {
            if se.iter().flatten().any(|e| e.is_nan()) {
                warnings.push(format!("region {} has too few samples for standard errors", s.region_id));
            }
        }
    }
    let result = InferenceResult {
        status,
        iterations: state.iteration,
        residual: if has_messages { state.residual } else { 0.0 },
        consistency_gap: Some(gap),
        soundness_residual: soundness.map(|s| s.residual),
        free_energy,
        beliefs,
        variable_ids: graph.variables().iter().map(|v| v.id.clone()).collect(),
        warnings,
    };
    Ok(DdOutcome {
        result,
        state,
        solutions,
        soundness,
    })
}
