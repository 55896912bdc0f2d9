//! Region decompositions and regional belief propagation.
//!
//! Non-prior factors are partitioned into regions. A variable's count `C_j`
//! is the number of regions whose support contains it; variables with
//! `C_j ≥ 2` are boundary variables, the rest of a region's support is its
//! interior. Messages only run between regions and boundary variables;
//! interior priors are folded into the region's augmented energy.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::bethe::BpOptions;
use crate::error::{Error, Result};
use crate::graph::{state_space, EnergyTable, FactorGraph};
use crate::logspace::{self, damp, max_abs_diff, normalize_log};
use crate::oracle::{for_each_configuration, DEFAULT_ENUMERATION_CAP};
use crate::result::{InferenceResult, Status};
use crate::table::LocalTable;

/// Default state-space budget for automatically grown regions (2^16).
pub const DEFAULT_REGION_BUDGET: u64 = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub id: String,
    pub factors: Vec<usize>,
    /// Union of member scopes, ascending variable index.
    pub support: Vec<usize>,
    pub boundary: Vec<usize>,
    pub interior: Vec<usize>,
    /// Position of each boundary variable within `support`.
    pub boundary_positions: Vec<usize>,
}

impl Region {
    pub fn boundary_slot(&self, var: usize) -> Option<usize> {
        self.boundary.iter().position(|&v| v == var)
    }

    pub fn state_space(&self, graph: &FactorGraph) -> u128 {
        state_space(self.support.iter().map(|&j| graph.cardinality(j)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionDecomposition {
    pub regions: Vec<Region>,
    /// `C_j` per variable; 0 for variables touched by no factor.
    pub counts: Vec<usize>,
    /// For each variable, `(region index, boundary slot)` of every region it
    /// is a boundary variable of.
    pub boundary_memberships: Vec<Vec<(usize, usize)>>,
    /// For each interior variable, the region that owns it.
    pub owner: Vec<Option<usize>>,
}

impl RegionDecomposition {
    pub fn region_index(&self, id: &str) -> Option<usize> {
        self.regions.iter().position(|r| r.id == id)
    }

    pub fn region(&self, id: &str) -> Option<&Region> {
        self.regions.iter().find(|r| r.id == id)
    }

    pub fn is_boundary(&self, j: usize) -> bool {
        self.counts[j] >= 2
    }

    /// Distinct variables with `C_j ≥ 2`.
    pub fn boundary_variables(&self) -> Vec<usize> {
        (0..self.counts.len()).filter(|&j| self.is_boundary(j)).collect()
    }
}

/// Computes supports, counts and the boundary/interior split for a
/// partition of the non-prior factors.
pub fn build_decomposition(graph: &FactorGraph, partition: &BTreeMap<String, Vec<String>>) -> Result<RegionDecomposition> {
    let mut assigned: Vec<Option<&str>> = vec![None; graph.factors().len()];
    let mut raw = Vec::with_capacity(partition.len());
    for (rid, members) in partition {
        if members.is_empty() {
            return Err(Error::Partition(format!("region {rid} is empty")));
        }
        let mut factors = Vec::with_capacity(members.len());
        for fid in members {
            let a = graph
                .factor_index(fid)
                .ok_or_else(|| Error::Partition(format!("region {rid} names unknown factor {fid}")))?;
            if let Some(prev) = assigned[a] {
                return Err(Error::Partition(format!("factor {fid} is in both {prev} and {rid}")));
            }
            assigned[a] = Some(rid);
            factors.push(a);
        }
        let support: BTreeSet<usize> = factors
            .iter()
            .flat_map(|&a| graph.factor(a).scope.iter().copied())
            .collect();
        raw.push((rid.clone(), factors, support));
    }
    if let Some(a) = assigned.iter().position(Option::is_none) {
        return Err(Error::Partition(format!("factor {} is in no region", graph.factor(a).id)));
    }

    let mut counts = vec![0usize; graph.num_variables()];
    for (_, _, support) in &raw {
        for &j in support {
            counts[j] += 1;
        }
    }
    let mut boundary_memberships = vec![Vec::new(); graph.num_variables()];
    let mut owner = vec![None; graph.num_variables()];
    let regions = raw
        .into_iter()
        .enumerate()
        .map(|(r, (id, factors, support))| {
            let support: Vec<usize> = support.into_iter().collect();
            let mut boundary = Vec::new();
            let mut boundary_positions = Vec::new();
            let mut interior = Vec::new();
            for (pos, &j) in support.iter().enumerate() {
                if counts[j] >= 2 {
                    boundary_memberships[j].push((r, boundary.len()));
                    boundary.push(j);
                    boundary_positions.push(pos);
                } else {
                    owner[j] = Some(r);
                    interior.push(j);
                }
            }
            Region {
                id,
                factors,
                support,
                boundary,
                interior,
                boundary_positions,
            }
        })
        .collect();
    Ok(RegionDecomposition {
        regions,
        counts,
        boundary_memberships,
        owner,
    })
}

/// Decomposition from the graph's own region block.
pub fn from_graph(graph: &FactorGraph) -> Result<RegionDecomposition> {
    let partition = graph
        .regions()
        .ok_or_else(|| Error::Partition("graph has no region block".into()))?;
    build_decomposition(graph, partition)
}

/// One region per non-prior factor.
pub fn singleton_partition(graph: &FactorGraph) -> BTreeMap<String, Vec<String>> {
    graph
        .factors()
        .iter()
        .map(|f| (format!("R_{}", f.id), vec![f.id.clone()]))
        .collect()
}

/// Every non-prior factor in one region.
pub fn single_region_partition(graph: &FactorGraph) -> BTreeMap<String, Vec<String>> {
    let mut p = BTreeMap::new();
    if !graph.factors().is_empty() {
        p.insert("R".to_string(), graph.factors().iter().map(|f| f.id.clone()).collect());
    }
    p
}

/// Greedy region growing: seed with the first unassigned factor, then add
/// factors in breadth-first order over shared variables as long as the
/// region's state space stays within `budget`. A factor that alone exceeds
/// the budget becomes its own region.
pub fn auto_partition(graph: &FactorGraph, budget: u64) -> BTreeMap<String, Vec<String>> {
    let nf = graph.factors().len();
    let mut assigned = vec![false; nf];
    let mut out = BTreeMap::new();
    let width = nf.to_string().len();
    for seed in 0..nf {
        if assigned[seed] {
            continue;
        }
        assigned[seed] = true;
        let mut members = vec![seed];
        let mut support: BTreeSet<usize> = graph.factor(seed).scope.iter().copied().collect();
        let mut queued = vec![false; nf];
        queued[seed] = true;
        let mut queue = VecDeque::new();
        let push_neighbors = |a: usize, queue: &mut VecDeque<usize>, queued: &mut Vec<bool>, assigned: &[bool]| {
            for &j in &graph.factor(a).scope {
                for &(b, _) in graph.neighbors(j) {
                    if !assigned[b] && !queued[b] {
                        queued[b] = true;
                        queue.push_back(b);
                    }
                }
            }
        };
        push_neighbors(seed, &mut queue, &mut queued, &assigned);
        while let Some(b) = queue.pop_front() {
            if assigned[b] {
                continue;
            }
            let grown = state_space(
                support
                    .iter()
                    .copied()
                    .chain(graph.factor(b).scope.iter().copied())
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .map(|j| graph.cardinality(j)),
            );
            if grown > budget as u128 {
                continue;
            }
            assigned[b] = true;
            members.push(b);
            support.extend(graph.factor(b).scope.iter().copied());
            push_neighbors(b, &mut queue, &mut queued, &assigned);
        }
        members.sort_unstable();
        out.insert(
            format!("R{:0width$}", out.len() + 1),
            members.into_iter().map(|a| graph.factor(a).id.clone()).collect(),
        );
    }
    out
}

/// Dense energy table of a region over its support: the sum of its factor
/// energies, plus the priors of its interior variables when `with_interior_priors`.
pub(crate) fn region_table(
    graph: &FactorGraph,
    region: &Region,
    with_interior_priors: bool,
    cap: u64,
) -> Result<LocalTable> {
    let size = region.state_space(graph);
    if size > cap as u128 {
        return Err(Error::Capacity {
            what: format!("region {}", region.id),
            needed: size,
            cap,
        });
    }
    let cards: Vec<usize> = region.support.iter().map(|&j| graph.cardinality(j)).collect();
    let locate = |j: usize| region.support.binary_search(&j).expect("scope inside support");
    let members: Vec<(Vec<usize>, &[f64], Vec<usize>)> = region
        .factors
        .iter()
        .map(|&a| {
            let f = graph.factor(a);
            (f.scope.iter().map(|&j| locate(j)).collect(), f.energies.as_slice(), f.cards.clone())
        })
        .collect();
    let interior: Vec<(usize, &[f64])> = if with_interior_priors {
        region.interior.iter().map(|&j| (locate(j), graph.prior(j))).collect()
    } else {
        Vec::new()
    };
    let mut energies = vec![0.0; size as usize];
    for_each_configuration(&cards, |idx, states| {
        let mut e = 0.0;
        for (positions, table, fcards) in &members {
            let mut k = 0;
            for (&p, &c) in positions.iter().zip(fcards) {
                k = k * c + states[p];
            }
            e += table[k];
        }
        for &(p, prior) in &interior {
            e += prior[states[p]];
        }
        energies[idx] = e;
    });
    Ok(LocalTable {
        vars: region.support.clone(),
        cards,
        energies,
    })
}

/// Augmented region energy: region factors plus interior-variable priors.
/// Boundary priors are not included.
pub fn augmented_energy(graph: &FactorGraph, decomp: &RegionDecomposition, region_id: &str) -> Result<EnergyTable> {
    let region = decomp
        .region(region_id)
        .ok_or_else(|| Error::input(format!("unknown region {region_id}")))?;
    let t = region_table(graph, region, true, DEFAULT_ENUMERATION_CAP)?;
    Ok(EnergyTable {
        scope: t.vars.iter().map(|&j| graph.variable_id(j).to_string()).collect(),
        energies: t.energies,
    })
}

/// Messages between regions and their boundary variables, indexed
/// `[region][boundary slot]`, as normalized log-distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionalMessageState {
    pub region_to_var: Vec<Vec<Vec<f64>>>,
    pub var_to_region: Vec<Vec<Vec<f64>>>,
    pub iteration: usize,
    pub residual: f64,
}

fn prior_logs(graph: &FactorGraph, j: usize) -> Vec<f64> {
    let kt = graph.temperature();
    graph.prior(j).iter().map(|e| -e / kt).collect()
}

impl RegionalMessageState {
    /// Region messages uniform; variable messages proportional to the prior.
    pub fn initial(graph: &FactorGraph, decomp: &RegionDecomposition) -> Result<Self> {
        let region_to_var = decomp
            .regions
            .iter()
            .map(|r| r.boundary.iter().map(|&j| logspace::uniform_log(graph.cardinality(j))).collect())
            .collect();
        let var_to_region = decomp
            .regions
            .iter()
            .map(|r| {
                r.boundary
                    .iter()
                    .map(|&j| {
                        let mut m = prior_logs(graph, j);
                        normalize_log(&mut m, || format!("prior of {}", graph.variable_id(j)))?;
                        Ok(m)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            region_to_var,
            var_to_region,
            iteration: 0,
            residual: f64::INFINITY,
        })
    }
}

/// Augmented tables for every region.
pub fn augmented_tables(graph: &FactorGraph, decomp: &RegionDecomposition, cap: u64) -> Result<Vec<LocalTable>> {
    decomp
        .regions
        .iter()
        .map(|r| region_table(graph, r, true, cap).map_err(|e| e.in_region(&r.id)))
        .collect()
}

fn boundary_fields<'a>(region: &Region, from_var: &'a [Vec<f64>], skip: Option<usize>) -> Vec<Option<&'a [f64]>> {
    let mut fields = vec![None; region.support.len()];
    for (slot, &pos) in region.boundary_positions.iter().enumerate() {
        if Some(slot) != skip {
            fields[pos] = Some(from_var[slot].as_slice());
        }
    }
    fields
}

/// `ln Σ_{x_R \ x_j} f̃_R ∏_{k ∈ ∂R, k ≠ j} M_{k→R}` for boundary slot `slot`, normalized.
pub(crate) fn region_message(
    graph: &FactorGraph,
    region: &Region,
    table: &LocalTable,
    from_var: &[Vec<f64>],
    slot: usize,
) -> Result<Vec<f64>> {
    let fields = boundary_fields(region, from_var, Some(slot));
    let lw = table.log_weights(graph.temperature(), &fields);
    let mut m = table.log_marginal(&lw, region.boundary_positions[slot]);
    normalize_log(&mut m, || {
        format!("message {}->{}", region.id, graph.variable_id(region.boundary[slot]))
    })?;
    Ok(m)
}

/// `f_j ∏_{S ∋ j, S ≠ R} M_{S→j}`, normalized.
pub(crate) fn variable_message(
    graph: &FactorGraph,
    decomp: &RegionDecomposition,
    region_to_var: &[Vec<Vec<f64>>],
    region: usize,
    j: usize,
) -> Result<Vec<f64>> {
    let mut m = prior_logs(graph, j);
    for &(s, slot) in &decomp.boundary_memberships[j] {
        if s != region {
            m.iter_mut().zip(&region_to_var[s][slot]).for_each(|(a, b)| *a += b);
        }
    }
    normalize_log(&mut m, || {
        format!("message {}->{}", graph.variable_id(j), decomp.regions[region].id)
    })?;
    Ok(m)
}

/// One synchronous round of regional BP, with the same ordering and damping
/// as [`crate::bethe::bp_iterate`].
pub fn regional_bp_iterate(
    graph: &FactorGraph,
    decomp: &RegionDecomposition,
    tables: &[LocalTable],
    state: &RegionalMessageState,
    opts: &BpOptions,
) -> Result<RegionalMessageState> {
    let mut next = state.clone();
    let mut residual: f64 = 0.0;
    for (r, region) in decomp.regions.iter().enumerate() {
        for slot in 0..region.boundary.len() {
            let proposed = region_message(graph, region, &tables[r], &state.var_to_region[r], slot)?;
            let old = &state.region_to_var[r][slot];
            let new = damp(old, &proposed, opts.damping, || format!("message from {}", region.id))?;
            residual = residual.max(max_abs_diff(&new, old));
            next.region_to_var[r][slot] = new;
        }
    }
    for (r, region) in decomp.regions.iter().enumerate() {
        for (slot, &j) in region.boundary.iter().enumerate() {
            let proposed = variable_message(graph, decomp, &next.region_to_var, r, j)?;
            let old = &state.var_to_region[r][slot];
            let new = damp(old, &proposed, opts.damping, || format!("message into {}", region.id))?;
            residual = residual.max(max_abs_diff(&new, old));
            next.var_to_region[r][slot] = new;
        }
    }
    next.iteration = state.iteration + 1;
    next.residual = residual;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionalBeliefs {
    /// Joint belief over each region's support, row-major in support order.
    pub regions: Vec<Vec<f64>>,
    pub variables: Vec<Vec<f64>>,
}

/// `b_R ∝ f̃_R ∏ M_{j→R}`; boundary `b_j ∝ f_j ∏ M_{R→j}`; interior beliefs
/// are marginals of the owning region's belief.
pub fn regional_beliefs(
    graph: &FactorGraph,
    decomp: &RegionDecomposition,
    tables: &[LocalTable],
    state: &RegionalMessageState,
) -> Result<RegionalBeliefs> {
    let kt = graph.temperature();
    let regions = decomp
        .regions
        .iter()
        .zip(tables)
        .enumerate()
        .map(|(r, (region, table))| {
            let fields = boundary_fields(region, &state.var_to_region[r], None);
            table.probabilities(&table.log_weights(kt, &fields), || format!("belief of {}", region.id))
        })
        .collect::<Result<Vec<_>>>()?;
    let variables = (0..graph.num_variables())
        .map(|j| {
            if decomp.is_boundary(j) {
                let mut lb = prior_logs(graph, j);
                for &(s, slot) in &decomp.boundary_memberships[j] {
                    lb.iter_mut().zip(&state.region_to_var[s][slot]).for_each(|(a, b)| *a += b);
                }
                Ok(logspace::to_probabilities(&lb))
            } else if let Some(r) = decomp.owner[j] {
                let pos = decomp.regions[r].support.binary_search(&j).expect("owned");
                Ok(tables[r].marginals(&regions[r]).swap_remove(pos))
            } else {
                let lb = prior_logs(graph, j);
                if logspace::log_sum_exp(&lb) == f64::NEG_INFINITY {
                    return Err(Error::Degenerate(format!("belief of {}", graph.variable_id(j))));
                }
                Ok(logspace::to_probabilities(&lb))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RegionalBeliefs { regions, variables })
}

/// `Σ_R [Σ b_R E_R + kT Σ b_R ln b_R] + Σ_j [Σ b_j E_j - kT (C_j - 1) Σ b_j ln b_j]`
/// where `E_R` is the plain sum of the region's factor energies.
pub fn regional_free_energy(graph: &FactorGraph, decomp: &RegionDecomposition, beliefs: &RegionalBeliefs) -> Result<f64> {
    let kt = graph.temperature();
    if beliefs.regions.len() != decomp.regions.len() || beliefs.variables.len() != graph.num_variables() {
        return Err(Error::input("beliefs must cover every region and variable"));
    }
    let mut total = 0.0;
    for (region, b) in decomp.regions.iter().zip(&beliefs.regions) {
        let table = region_table(graph, region, false, DEFAULT_ENUMERATION_CAP)?;
        if b.len() != table.len() {
            return Err(Error::input(format!("belief of {} has the wrong size", region.id)));
        }
        check_normalized(b, &region.id)?;
        total += logspace::expected_energy(b, &table.energies) - kt * logspace::entropy(b);
    }
    for (j, b) in beliefs.variables.iter().enumerate() {
        check_normalized(b, graph.variable_id(j))?;
        let c = decomp.counts[j] as f64;
        total += logspace::expected_energy(b, graph.prior(j)) + kt * (c - 1.0) * logspace::entropy(b);
    }
    Ok(total)
}

fn check_normalized(p: &[f64], what: &str) -> Result<()> {
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-6 || p.iter().any(|x| !(*x >= 0.0)) {
        return Err(Error::input(format!("belief of {what} is not normalized (sum {s})")));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RegionalOutcome {
    pub result: InferenceResult,
    pub state: RegionalMessageState,
    pub beliefs: RegionalBeliefs,
}

/// Largest `|Σ_{x_R \ x_j} b_R - b_j|` over boundary incidences.
pub fn boundary_consistency(decomp: &RegionDecomposition, tables: &[LocalTable], b: &RegionalBeliefs) -> f64 {
    let mut worst: f64 = 0.0;
    for (r, region) in decomp.regions.iter().enumerate() {
        let margs = tables[r].marginals(&b.regions[r]);
        for (slot, &pos) in region.boundary_positions.iter().enumerate() {
            worst = worst.max(max_abs_diff(&margs[pos], &b.variables[region.boundary[slot]]));
        }
    }
    worst
}

pub fn regional_bp_run(graph: &FactorGraph, decomp: &RegionDecomposition, opts: &BpOptions) -> Result<RegionalOutcome> {
    opts.check()?;
    let tables = augmented_tables(graph, decomp, DEFAULT_ENUMERATION_CAP)?;
    let mut state = RegionalMessageState::initial(graph, decomp)?;
    let has_messages = decomp.regions.iter().any(|r| !r.boundary.is_empty());
    let mut status = Status::MaxIterations;
    if !has_messages {
        state.residual = 0.0;
        status = Status::Converged;
    } else {
        for _ in 0..opts.max_iterations {
            state = regional_bp_iterate(graph, decomp, &tables, &state, opts)?;
            if state.residual <= opts.tolerance {
                status = Status::Converged;
                break;
            }
        }
    }
    let beliefs = regional_beliefs(graph, decomp, &tables, &state)?;
    let mut free_energy = BTreeMap::new();
    free_energy.insert("regional".to_string(), regional_free_energy(graph, decomp, &beliefs)?);
    let result = InferenceResult {
        status,
        iterations: state.iteration,
        residual: state.residual,
        consistency_gap: None,
        soundness_residual: None,
        free_energy,
        beliefs: beliefs.variables.clone(),
        variable_ids: graph.variables().iter().map(|v| v.id.clone()).collect(),
        warnings: Vec::new(),
    };
    Ok(RegionalOutcome { result, state, beliefs })
}
