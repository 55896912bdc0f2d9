use std::sync::Arc;

use rand::Rng;

use super::problem::{EnergyTerm, RegionProblem, RegionSolution};
use super::rng::StreamKey;
use super::{fixed_point_step, initial_fields, residual, targets, InnerOptions};
use crate::error::{Error, Result};
use crate::graph::{strides, FactorGraph};
use crate::result::Status;

/// Node budget for the depth-first search for a finite-energy start.
const SEARCH_BUDGET: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GibbsOptions {
    /// Sweeps kept after burn-in and thinning.
    pub sweeps: usize,
    /// Discarded leading sweeps; `None` means 10% of `sweeps`.
    pub burn_in: Option<usize>,
    /// Keep one sweep in every `thinning`.
    pub thinning: usize,
    pub seed: u64,
}

impl Default for GibbsOptions {
    fn default() -> Self {
        Self {
            sweeps: 100_000,
            burn_in: None,
            thinning: 1,
            seed: 0,
        }
    }
}

impl GibbsOptions {
    fn check(&self) -> Result<()> {
        if self.sweeps == 0 {
            return Err(Error::input("sweeps must be positive"));
        }
        if self.thinning == 0 {
            return Err(Error::input("thinning must be positive"));
        }
        Ok(())
    }

    fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.sweeps / 10)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GibbsSolverOptions {
    /// Inner iteration controls; the update is always the fixed-point map.
    pub inner: InnerOptions,
    pub sampler: GibbsOptions,
    /// Outer iteration number, used only to key the random streams.
    pub outer_iteration: u64,
}

impl Default for GibbsSolverOptions {
    fn default() -> Self {
        Self {
            inner: InnerOptions::sampling(),
            sampler: GibbsOptions::default(),
            outer_iteration: 0,
        }
    }
}

/// Energy as a sum of local terms over a list of discrete variables, with
/// per-variable incidence for computing single-site conditionals.
#[derive(Debug, Clone)]
pub struct EnergyModel {
    pub variables: Vec<String>,
    pub cards: Vec<usize>,
    pub temperature: f64,
    terms: Arc<Vec<EnergyTerm>>,
    term_strides: Vec<Vec<usize>>,
    /// For each variable, `(term, axis)` pairs.
    incidence: Vec<Vec<(usize, usize)>>,
}

impl EnergyModel {
    pub fn new(variables: Vec<String>, cards: Vec<usize>, terms: Arc<Vec<EnergyTerm>>, temperature: f64) -> Self {
        let term_strides = terms
            .iter()
            .map(|t| strides(&t.positions.iter().map(|&p| cards[p]).collect::<Vec<_>>()))
            .collect();
        let mut incidence = vec![Vec::new(); cards.len()];
        for (a, t) in terms.iter().enumerate() {
            for (axis, &p) in t.positions.iter().enumerate() {
                incidence[p].push((a, axis));
            }
        }
        Self {
            variables,
            cards,
            temperature,
            terms,
            term_strides,
            incidence,
        }
    }

    /// The whole graph, priors included, as one model.
    pub fn from_graph(graph: &FactorGraph) -> Self {
        let mut terms: Vec<EnergyTerm> = graph
            .factors()
            .iter()
            .map(|f| EnergyTerm {
                positions: f.scope.clone(),
                energies: f.energies.clone(),
            })
            .collect();
        terms.extend((0..graph.num_variables()).map(|j| EnergyTerm {
            positions: vec![j],
            energies: graph.prior(j).to_vec(),
        }));
        Self::new(
            graph.variables().iter().map(|v| v.id.clone()).collect(),
            graph.cardinalities(),
            Arc::new(terms),
            graph.temperature(),
        )
    }

    pub fn from_problem(problem: &RegionProblem) -> Self {
        Self::new(
            problem.variables.clone(),
            problem.cards.clone(),
            problem.terms.clone(),
            problem.temperature,
        )
    }

    fn index(&self, a: usize, states: &[usize]) -> usize {
        self.terms[a]
            .positions
            .iter()
            .zip(&self.term_strides[a])
            .map(|(&p, &s)| states[p] * s)
            .sum()
    }

    pub fn energy(&self, states: &[usize]) -> f64 {
        (0..self.terms.len())
            .map(|a| self.terms[a].energies[self.index(a, states)])
            .sum()
    }

    /// Depth-first search, in variable order, for a configuration of finite
    /// energy. Terms are checked as soon as all their variables are set.
    pub fn find_finite(&self) -> Option<Vec<usize>> {
        let n = self.cards.len();
        // terms become checkable at the largest position they touch
        let mut ready: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (a, t) in self.terms.iter().enumerate() {
            if let Some(&last) = t.positions.iter().max() {
                ready[last].push(a);
            }
        }
        let mut states = vec![0usize; n];
        let mut budget = SEARCH_BUDGET;
        fn go(m: &EnergyModel, ready: &[Vec<usize>], states: &mut [usize], k: usize, budget: &mut usize) -> bool {
            if k == states.len() {
                return true;
            }
            for s in 0..m.cards[k] {
                if *budget == 0 {
                    return false;
                }
                *budget -= 1;
                states[k] = s;
                if ready[k].iter().all(|&a| m.terms[a].energies[m.index(a, states)] < f64::INFINITY)
                    && go(m, ready, states, k + 1, budget)
                {
                    return true;
                }
            }
            false
        }
        go(self, &ready, &mut states, 0, &mut budget).then_some(states)
    }

    /// True if some term over two or more variables forbids a configuration.
    pub fn has_hard_coupling(&self) -> bool {
        self.terms
            .iter()
            .any(|t| t.positions.len() > 1 && t.energies.iter().any(|e| *e == f64::INFINITY))
    }

    /// `-E/kT` of each state of `pos` given the rest of `states`, plus `field`.
    fn conditional(&self, states: &mut [usize], pos: usize, field: Option<&[f64]>, out: &mut [f64]) {
        let kt = self.temperature;
        let current = states[pos];
        for (s, o) in out.iter_mut().enumerate() {
            states[pos] = s;
            let e: f64 = self.incidence[pos]
                .iter()
                .map(|&(a, _)| self.terms[a].energies[self.index(a, states)])
                .sum();
            *o = -e / kt + field.map_or(0.0, |f| f[s]);
        }
        states[pos] = current;
    }
}

/// Empirical marginals from one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsEstimate {
    pub marginals: Vec<Vec<f64>>,
    /// Batch-means standard errors of each marginal entry.
    pub standard_errors: Vec<Vec<f64>>,
    pub kept: usize,
    pub final_state: Vec<usize>,
}

const BATCHES: usize = 50;

fn run_chain(
    model: &EnergyModel,
    fields: &[Option<&[f64]>],
    init: &[usize],
    opts: &GibbsOptions,
    rng: &mut impl Rng,
) -> Result<GibbsEstimate> {
    let n = model.cards.len();
    if init.len() != n || init.iter().zip(&model.cards).any(|(s, c)| s >= c) {
        return Err(Error::input("initial assignment does not match the model"));
    }
    if model.energy(init) == f64::INFINITY {
        return Err(Error::Ergodicity("initial assignment has infinite energy".into()));
    }
    let mut states = init.to_vec();
    let maxcard = model.cards.iter().copied().max().unwrap_or(1);
    let mut logw = vec![0.0; maxcard];
    let mut counts: Vec<Vec<u64>> = model.cards.iter().map(|&c| vec![0; c]).collect();
    let batches = BATCHES.min(opts.sweeps);
    let mut batch_counts: Vec<Vec<Vec<u64>>> = vec![counts.clone(); batches];
    let mut batch_sizes = vec![0u64; batches];
    let burn = opts.burn_in();
    let total = burn + opts.sweeps * opts.thinning;
    let mut kept = 0;
    for sweep in 0..total {
        for pos in 0..n {
            let card = model.cards[pos];
            let w = &mut logw[..card];
            model.conditional(&mut states, pos, fields[pos], w);
            let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut acc = 0.0;
            for x in w.iter_mut() {
                *x = (*x - max).exp();
                acc += *x;
            }
            let mut u = rng.gen::<f64>() * acc;
            let mut pick = card - 1;
            for (s, &x) in w.iter().enumerate() {
                if u < x {
                    pick = s;
                    break;
                }
                u -= x;
            }
            // never move onto a zero-weight state through rounding
            if w[pick] == 0.0 {
                pick = states[pos];
            }
            states[pos] = pick;
        }
        if sweep >= burn && (sweep - burn) % opts.thinning == 0 {
            let b = kept * batches / opts.sweeps;
            batch_sizes[b] += 1;
            for (pos, &s) in states.iter().enumerate() {
                counts[pos][s] += 1;
                batch_counts[b][pos][s] += 1;
            }
            kept += 1;
        }
    }
    let marginals: Vec<Vec<f64>> = counts
        .iter()
        .map(|c| c.iter().map(|&k| k as f64 / kept as f64).collect())
        .collect();
    let standard_errors = marginals
        .iter()
        .enumerate()
        .map(|(pos, m)| {
            m.iter()
                .enumerate()
                .map(|(s, &mean)| {
                    if batches < 2 {
                        return f64::NAN;
                    }
                    let var: f64 = (0..batches)
                        .map(|b| {
                            let x = batch_counts[b][pos][s] as f64 / batch_sizes[b] as f64;
                            (x - mean).powi(2)
                        })
                        .sum::<f64>()
                        / (batches - 1) as f64;
                    (var / batches as f64).sqrt()
                })
                .collect()
        })
        .collect();
    Ok(GibbsEstimate {
        marginals,
        standard_errors,
        kept,
        final_state: states,
    })
}

/// Systematic-scan single-site Gibbs sampling of `exp(-E/kT)`. Starts from
/// `init`, or from a finite-energy configuration found by search. The
/// stream is keyed by `opts.seed` alone.
pub fn gibbs_sample(model: &EnergyModel, init: Option<&[usize]>, opts: &GibbsOptions) -> Result<GibbsEstimate> {
    opts.check()?;
    let start = match init {
        Some(s) => s.to_vec(),
        None => model
            .find_finite()
            .ok_or_else(|| Error::Ergodicity("no finite-energy configuration found to start from".into()))?,
    };
    let fields = vec![None; model.cards.len()];
    run_chain(model, &fields, &start, opts, &mut StreamKey::new(opts.seed).rng())
}

/// Sampling region solver: the fixed-point field iteration with boundary
/// marginals estimated by Gibbs sampling. Each inner step draws a fresh
/// chain keyed by `(seed, region, outer iteration, inner step)`.
pub fn solve_region_gibbs(problem: &RegionProblem, opts: &GibbsSolverOptions) -> Result<RegionSolution> {
    problem.check()?;
    opts.inner.check()?;
    opts.sampler.check()?;
    let in_region = |e: Error| e.in_region(&problem.region_id);
    let model = EnergyModel::from_problem(problem);
    if model.has_hard_coupling() {
        return Err(in_region(Error::Ergodicity(
            "single-site Gibbs cannot cross hard multi-variable constraints; \
             soften them (e.g. parity checks with a finite penalty) or use the exact solver"
                .into(),
        )));
    }
    let init = model.find_finite().ok_or_else(|| {
        in_region(Error::Ergodicity(
            "no finite-energy configuration found to start from; soften the constraints".into(),
        ))
    })?;
    let key = StreamKey::new(opts.sampler.seed)
        .region(&problem.region_id)
        .outer(opts.outer_iteration);
    let mut fields = initial_fields(problem).map_err(in_region)?;
    let mut iterations = 0;
    let mut samples = 0u64;
    loop {
        let mut site_fields: Vec<Option<&[f64]>> = vec![None; problem.cards.len()];
        for (site, f) in problem.boundary.iter().zip(&fields) {
            site_fields[site.position] = Some(f.as_slice());
        }
        let mut rng = key.inner(iterations as u64).rng();
        let est = run_chain(&model, &site_fields, &init, &opts.sampler, &mut rng).map_err(in_region)?;
        samples += est.kept as u64;
        let mu: Vec<Vec<f64>> = problem.boundary.iter().map(|s| est.marginals[s.position].clone()).collect();
        let t = targets(problem, &mu).map_err(in_region)?;
        let r = if problem.boundary.is_empty() { 0.0 } else { residual(&fields, &t) };
        if r <= opts.inner.tolerance || iterations >= opts.inner.max_iterations {
            return Ok(RegionSolution {
                region_id: problem.region_id.clone(),
                status: if r <= opts.inner.tolerance { Status::Converged } else { Status::MaxIterations },
                iterations,
                residual: r,
                boundary_marginals: mu,
                marginals: est.marginals,
                fields,
                belief: None,
                samples,
                standard_errors: Some(est.standard_errors),
                free_energy_trace: Vec::new(),
            });
        }
        fields = fixed_point_step(&fields, &t, opts.inner.damping).map_err(in_region)?;
        iterations += 1;
    }
}
