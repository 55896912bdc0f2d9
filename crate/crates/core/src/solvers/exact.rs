use nalgebra::{DMatrix, DVector};

use super::problem::{RegionProblem, RegionSolution};
use super::{fixed_point_step, initial_fields, residual, targets, InnerOptions, InnerUpdate};
use crate::dist::DenseDistribution;
use crate::error::{Error, Result};
use crate::graph::strides;
use crate::logspace::{entropy, expected_energy, normalize_log, PROB_FLOOR};
use crate::oracle::DEFAULT_ENUMERATION_CAP;
use crate::result::Status;

/// Everything derived from one set of fields.
struct Eval {
    probs: Vec<f64>,
    marginals: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    residual: f64,
    free_energy: f64,
}

fn joint(problem: &RegionProblem, table: &[f64], fields: &[Vec<f64>]) -> Result<Vec<f64>> {
    let kt = problem.temperature;
    let st = strides(&problem.cards);
    let mut lw: Vec<f64> = table.iter().map(|e| -e / kt).collect();
    for (site, f) in problem.boundary.iter().zip(fields) {
        let (stride, card) = (st[site.position], problem.cards[site.position]);
        for (idx, w) in lw.iter_mut().enumerate() {
            *w += f[(idx / stride) % card];
        }
    }
    let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Degenerate(format!("belief of region {} vanishes", problem.region_id)));
    }
    let mut p: Vec<f64> = lw.iter().map(|w| (w - max).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= z);
    Ok(p)
}

fn support_marginals(cards: &[usize], probs: &[f64]) -> Vec<Vec<f64>> {
    let st = strides(cards);
    let mut out: Vec<Vec<f64>> = cards.iter().map(|&c| vec![0.0; c]).collect();
    for (idx, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            for (k, m) in out.iter_mut().enumerate() {
                m[(idx / st[k]) % cards[k]] += p;
            }
        }
    }
    out
}

fn site_marginals(problem: &RegionProblem, marginals: &[Vec<f64>]) -> Vec<Vec<f64>> {
    problem.boundary.iter().map(|s| marginals[s.position].clone()).collect()
}

fn modified_value(problem: &RegionProblem, table: &[f64], probs: &[f64], mu: &[Vec<f64>]) -> f64 {
    let kt = problem.temperature;
    let mut a = expected_energy(probs, table) - kt * entropy(probs);
    for (site, m) in problem.boundary.iter().zip(mu) {
        a += expected_energy(m, &site.potential) + kt * (site.count - 1) as f64 * entropy(m);
    }
    a
}

fn evaluate(problem: &RegionProblem, table: &[f64], fields: &[Vec<f64>]) -> Result<Eval> {
    let probs = joint(problem, table, fields)?;
    let marginals = support_marginals(&problem.cards, &probs);
    let mu = site_marginals(problem, &marginals);
    let targets = targets(problem, &mu)?;
    let residual = residual(fields, &targets);
    let free_energy = modified_value(problem, table, &probs, &mu);
    Ok(Eval {
        probs,
        marginals,
        targets,
        residual,
        free_energy,
    })
}

fn centered(v: &[f64]) -> impl Iterator<Item = f64> + '_ {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(move |x| x - mean)
}

/// Stacked, per-site centered `target - field`.
fn phi(fields: &[Vec<f64>], targets: &[Vec<f64>]) -> DVector<f64> {
    let v: Vec<f64> = fields
        .iter()
        .zip(targets)
        .flat_map(|(f, t)| centered(t).zip(centered(f)).map(|(a, b)| a - b).collect::<Vec<_>>())
        .collect();
    DVector::from_vec(v)
}

/// Jacobian of [`phi`] with respect to the stacked fields.
fn jacobian(problem: &RegionProblem, ev: &Eval) -> DMatrix<f64> {
    let st = strides(&problem.cards);
    let sites = &problem.boundary;
    let offsets: Vec<usize> = sites
        .iter()
        .scan(0, |acc, s| {
            let o = *acc;
            *acc += problem.cards[s.position];
            Some(o)
        })
        .collect();
    let dim: usize = sites.iter().map(|s| problem.cards[s.position]).sum();
    // pair[u][v] = P(site u's state, site v's state), stacked indices
    let mut pair = DMatrix::<f64>::zeros(dim, dim);
    let mut rows = vec![0usize; sites.len()];
    for (idx, &p) in ev.probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for (k, s) in sites.iter().enumerate() {
            rows[k] = offsets[k] + (idx / st[s.position]) % problem.cards[s.position];
        }
        for &u in &rows {
            for &v in &rows {
                pair[(u, v)] += p;
            }
        }
    }
    let mu: Vec<f64> = sites
        .iter()
        .flat_map(|s| ev.marginals[s.position].iter().copied())
        .collect();
    let mut jac = DMatrix::<f64>::zeros(dim, dim);
    for (k, site) in sites.iter().enumerate() {
        let card = problem.cards[site.position];
        let c1 = (site.count - 1) as f64;
        for v in 0..dim {
            // d ln μ_k(a) / d l_v, zero where ln μ sits on the floor
            let d: Vec<f64> = (0..card)
                .map(|a| {
                    let u = offsets[k] + a;
                    if mu[u] < PROB_FLOOR {
                        0.0
                    } else {
                        pair[(u, v)] / mu[u] - mu[v]
                    }
                })
                .collect();
            let mean = d.iter().sum::<f64>() / card as f64;
            for a in 0..card {
                jac[(offsets[k] + a, v)] = c1 * (d[a] - mean);
            }
        }
        for a in 0..card {
            for b in 0..card {
                let delta = if a == b { 1.0 } else { 0.0 };
                jac[(offsets[k] + a, offsets[k] + b)] -= delta - 1.0 / card as f64;
            }
        }
    }
    jac
}

/// Levenberg-Marquardt on the centered residual. Returns `None` when no
/// step reduces it.
fn newton_step(
    problem: &RegionProblem,
    table: &[f64],
    fields: &[Vec<f64>],
    ev: &Eval,
    lambda: &mut f64,
) -> Result<Option<(Vec<Vec<f64>>, Eval)>> {
    let f = phi(fields, &ev.targets);
    let norm = f.norm();
    let jac = jacobian(problem, ev);
    let jt = jac.transpose();
    let jtj = &jt * &jac;
    let rhs = -(&jt * &f);
    while *lambda <= 1e12 {
        let mut lhs = jtj.clone();
        for i in 0..lhs.nrows() {
            lhs[(i, i)] += *lambda;
        }
        if let Some(step) = lhs.cholesky().map(|c| c.solve(&rhs)) {
            let mut k = 0;
            let candidate = fields
                .iter()
                .map(|l| {
                    let mut next: Vec<f64> = l.iter().enumerate().map(|(i, x)| x + step[k + i]).collect();
                    k += l.len();
                    normalize_log(&mut next, || "internal field".to_string())?;
                    Ok(next)
                })
                .collect::<Result<Vec<_>>>()?;
            let cand_ev = evaluate(problem, table, &candidate)?;
            if phi(&candidate, &cand_ev.targets).norm() < norm {
                *lambda = (*lambda * 0.3).max(1e-12);
                return Ok(Some((candidate, cand_ev)));
            }
        }
        *lambda *= 10.0;
    }
    Ok(None)
}

/// Runs the inner iteration against a precomputed dense energy table.
pub(crate) fn solve_with_table(problem: &RegionProblem, table: &[f64], opts: &InnerOptions) -> Result<RegionSolution> {
    let mut fields = initial_fields(problem)?;
    let mut ev = evaluate(problem, table, &fields)?;
    let mut trace = vec![ev.free_energy];
    let mut iterations = 0;
    let mut lambda = 1e-3;
    while !problem.boundary.is_empty() && ev.residual > opts.tolerance && iterations < opts.max_iterations {
        let next = match opts.update {
            InnerUpdate::FixedPoint => {
                let f = fixed_point_step(&fields, &ev.targets, opts.damping)?;
                let e = evaluate(problem, table, &f)?;
                Some((f, e))
            }
            InnerUpdate::Newton => newton_step(problem, table, &fields, &ev, &mut lambda)?,
        };
        let Some((f, e)) = next else {
            break;
        };
        fields = f;
        ev = e;
        iterations += 1;
        trace.push(ev.free_energy);
    }
    let converged = problem.boundary.is_empty() || ev.residual <= opts.tolerance;
    Ok(RegionSolution {
        region_id: problem.region_id.clone(),
        status: if converged { Status::Converged } else { Status::MaxIterations },
        iterations,
        residual: if problem.boundary.is_empty() { 0.0 } else { ev.residual },
        boundary_marginals: site_marginals(problem, &ev.marginals),
        marginals: ev.marginals,
        fields,
        belief: Some(ev.probs),
        samples: 0,
        standard_errors: None,
        free_energy_trace: trace,
    })
}

/// Exact region solver: marginals by enumeration of the region's support,
/// fields updated until the critical-point relation holds to `tolerance`.
/// Failure to converge is reported through the solution's status.
pub fn solve_region_exact(problem: &RegionProblem, opts: &InnerOptions) -> Result<RegionSolution> {
    problem.check()?;
    opts.check()?;
    let table = problem.dense_energies(opts.cap)?;
    solve_with_table(problem, &table, opts).map_err(|e| e.in_region(&problem.region_id))
}

/// `Σ b_R Ẽ_R + kT Σ b_R ln b_R + Σ_j [Σ b_j V_j - kT (C_j - 1) Σ b_j ln b_j]`
/// with `b_j` the marginals of `b_R`.
pub fn modified_free_energy(problem: &RegionProblem, belief: &DenseDistribution) -> Result<f64> {
    problem.check()?;
    let names: Vec<&str> = problem.variables.iter().map(String::as_str).collect();
    if belief.scope.len() != names.len() || names.iter().any(|v| !belief.scope.iter().any(|s| s == v)) {
        return Err(Error::input("belief must cover exactly the region's support"));
    }
    let b = belief.marginalize(&names)?;
    if b.cards != problem.cards {
        return Err(Error::input("belief cardinalities do not match the region"));
    }
    let sum: f64 = b.probabilities.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || b.probabilities.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::input("belief is not normalized"));
    }
    let table = problem.dense_energies(DEFAULT_ENUMERATION_CAP)?;
    let marginals = support_marginals(&problem.cards, &b.probabilities);
    let mu = site_marginals(problem, &marginals);
    Ok(modified_value(problem, &table, &b.probabilities, &mu))
}

/// Uniform joint over a problem's support, as a distribution.
pub fn uniform_belief(problem: &RegionProblem) -> DenseDistribution {
    let n = problem.state_space() as usize;
    DenseDistribution {
        scope: problem.variables.clone(),
        cards: problem.cards.clone(),
        probabilities: vec![1.0 / n as f64; n],
    }
}
