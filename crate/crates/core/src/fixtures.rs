//! Small reference graphs and random instance generators used by the test
//! suites and the CLI self-checks.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::graph::{FactorGraph, GraphSpec};
use crate::solvers::{solve_region_exact, InnerOptions, RegionProblem};

const LN2: f64 = std::f64::consts::LN_2;

/// Two binary variables, prior `[0, ln2]` on `x1`, one coupling factor
/// `fa = [0, ln2, ln2, 0]`. `Z = 2.25`.
pub fn g1() -> FactorGraph {
    GraphSpec::new()
        .variable("x1", 2)
        .variable("x2", 2)
        .prior("x1", vec![0.0, LN2])
        .factor("fa", ["x1", "x2"], vec![0.0, LN2, LN2, 0.0])
        .build()
        .expect("g1 is valid")
}

/// A three-variable chain `x1 - fa - x2 - fb - x3` with the same tables as
/// [`g1`], carrying the decomposition `R1 = {fa}`, `R2 = {fb}`.
pub fn g2() -> FactorGraph {
    GraphSpec::new()
        .variable("x1", 2)
        .variable("x2", 2)
        .variable("x3", 2)
        .prior("x1", vec![0.0, LN2])
        .factor("fa", ["x1", "x2"], vec![0.0, LN2, LN2, 0.0])
        .factor("fb", ["x2", "x3"], vec![0.0, LN2, LN2, 0.0])
        .region("R1", ["fa"])
        .region("R2", ["fb"])
        .build()
        .expect("g2 is valid")
}

fn random_energies(rng: &mut impl Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(0.0..scale)).collect()
}

fn var(j: usize) -> String {
    format!("v{j:02}")
}

/// Random loopy graph over `n` binary variables with random priors and
/// `n` pairwise or triple factors.
pub fn random_graph(rng: &mut impl Rng, n: usize) -> FactorGraph {
    let mut spec = GraphSpec::new();
    for j in 0..n {
        spec = spec.variable(var(j), 2).prior(var(j), random_energies(rng, 2, 2.0));
    }
    let ids: Vec<usize> = (0..n).collect();
    for a in 0..n {
        let arity = rng.gen_range(1..=3.min(n));
        let scope: Vec<String> = ids.choose_multiple(rng, arity).map(|&j| var(j)).collect();
        spec = spec.factor(format!("f{a:02}"), scope, random_energies(rng, 1 << arity, 2.0));
    }
    spec.build().expect("finite energies are always valid")
}

/// Random acyclic factor graph over `n ≥ 2` binary variables: each new factor
/// joins one existing variable to one or two fresh ones.
pub fn random_tree(rng: &mut impl Rng, n: usize) -> FactorGraph {
    let mut spec = GraphSpec::new().variable(var(0), 2);
    let mut count = 1;
    let mut a = 0;
    while count < n {
        let fresh = rng.gen_range(1..=2).min(n - count);
        let anchor = rng.gen_range(0..count);
        let mut scope = vec![var(anchor)];
        for _ in 0..fresh {
            spec = spec.variable(var(count), 2);
            scope.push(var(count));
            count += 1;
        }
        scope.shuffle(rng);
        let len = 1 << scope.len();
        spec = spec.factor(format!("f{a:02}"), scope, random_energies(rng, len, 3.0));
        a += 1;
    }
    for j in 0..n {
        if rng.gen_bool(0.7) {
            spec = spec.prior(var(j), random_energies(rng, 2, 2.0));
        }
    }
    spec.build().expect("finite energies are always valid")
}

/// Random graph with a region block whose region/shared-variable incidence
/// graph is a tree. Regions contain loops internally. Each region after the
/// first attaches to the existing structure through exactly one variable,
/// which may already be shared (giving counts above two).
pub fn random_region_tree(rng: &mut impl Rng, max_vars: usize, regions: usize) -> FactorGraph {
    let mut spec = GraphSpec::new();
    let mut n = 0;
    let mut region_vars: Vec<Vec<usize>> = Vec::new();
    let per_region = (max_vars.saturating_sub(1) / regions).max(2);
    let mut fid = 0;
    for r in 0..regions {
        let mut members = Vec::new();
        if r > 0 {
            let host = &region_vars[rng.gen_range(0..r)];
            members.push(host[rng.gen_range(0..host.len())]);
        }
        let fresh = if r == 0 { per_region + 1 } else { per_region };
        for _ in 0..fresh.min(max_vars - n) {
            spec = spec.variable(var(n), 2);
            members.push(n);
            n += 1;
        }
        let mut factor_ids = Vec::new();
        // chain through the members so the support is the whole block
        for w in members.windows(2) {
            let id = format!("f{fid:02}");
            fid += 1;
            spec = spec.factor(id.clone(), [var(w[0]), var(w[1])], random_energies(rng, 4, 2.0));
            factor_ids.push(id);
        }
        if members.len() >= 3 {
            let extra: Vec<String> = members.choose_multiple(rng, 3).map(|&j| var(j)).collect();
            let id = format!("f{fid:02}");
            fid += 1;
            spec = spec.factor(id.clone(), extra, random_energies(rng, 8, 2.0));
            factor_ids.push(id);
        }
        spec = spec.region(format!("R{r}"), factor_ids);
        region_vars.push(members);
    }
    for j in 0..n {
        spec = spec.prior(var(j), random_energies(rng, 2, 1.5));
    }
    spec.build().expect("finite energies are always valid")
}

/// Random region problem over 2-5 variables (cardinality 2 or 3) with one
/// boundary site shared by two regions. Its modified free energy is
/// `-kT H(b_R | x_j)` plus linear terms, strictly convex, so the critical
/// point is the unique interior minimum.
pub fn random_region_problem(rng: &mut impl Rng) -> RegionProblem {
    planted_problem(rng, 1, 2..=2)
}

/// Like [`random_region_problem`] but with one to three sites of count 2 or
/// 3. The critical point still exists, but need not be a minimum: with
/// several sites or a count above two the modified free energy is not convex.
pub fn random_region_problem_general(rng: &mut impl Rng) -> RegionProblem {
    let sites = rng.gen_range(1..=3);
    planted_problem(rng, sites, 2..=3)
}

/// The potentials are planted: computed from random internal fields so that
/// those fields satisfy the critical-point relation exactly.
fn planted_problem(rng: &mut impl Rng, max_sites: usize, counts: std::ops::RangeInclusive<usize>) -> RegionProblem {
    let n = rng.gen_range(2..=5);
    let cards: Vec<usize> = (0..n).map(|_| if rng.gen_bool(0.75) { 2 } else { 3 }).collect();
    let len = cards.iter().product();
    let kt = rng.gen_range(0.5..2.0);
    let variables: Vec<String> = (0..n).map(|j| format!("u{j}")).collect();
    let mut problem = RegionProblem::from_table("P", variables.clone(), cards.clone(), random_energies(rng, len, 2.0), kt);
    let k = max_sites.min(n);
    let mut sites: Vec<usize> = (0..n).collect::<Vec<_>>().choose_multiple(rng, k).copied().collect();
    sites.sort_unstable();
    for &p in &sites {
        let count = rng.gen_range(counts.clone());
        problem = problem
            .with_site(&variables[p], count, vec![0.0; cards[p]])
            .expect("site is in the support");
    }
    let planted: Vec<Vec<f64>> = sites
        .iter()
        .map(|&p| (0..cards[p]).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    problem.initial_fields = Some(planted);
    let read = InnerOptions {
        max_iterations: 0,
        ..Default::default()
    };
    let at_planted = solve_region_exact(&problem, &read).expect("small planted problem");
    for ((site, mu), l) in problem.boundary.iter_mut().zip(&at_planted.boundary_marginals).zip(&at_planted.fields) {
        let c1 = (site.count - 1) as f64;
        site.potential = mu.iter().zip(l).map(|(m, f)| kt * (c1 * m.ln() - f)).collect();
    }
    problem.initial_fields = None;
    problem
}
