//! Discrete factor graphs in energy form.
//!
//! Every table is stored row-major with the last scope variable varying
//! fastest. Energies are in the same units as the graph temperature `kT`;
//! `+inf` marks a forbidden configuration (factor value 0).

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableSpec {
    pub id: String,
    pub cardinality: usize,
}

/// Energies over an ordered scope of variable ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyTable {
    pub scope: Vec<String>,
    pub energies: Vec<f64>,
}

impl EnergyTable {
    pub fn new(scope: impl IntoIterator<Item = impl Into<String>>, energies: Vec<f64>) -> Self {
        Self {
            scope: scope.into_iter().map(Into::into).collect(),
            energies,
        }
    }
}

/// A non-prior factor with its scope resolved to variable indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub id: String,
    pub scope: Vec<usize>,
    pub cards: Vec<usize>,
    pub energies: Vec<f64>,
}

impl Factor {
    /// Row-major strides of this factor's table.
    pub fn strides(&self) -> Vec<usize> {
        strides(&self.cards)
    }
}

/// Row-major strides with the last axis fastest.
pub fn strides(cards: &[usize]) -> Vec<usize> {
    let mut s = vec![1; cards.len()];
    for i in (0..cards.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * cards[i + 1];
    }
    s
}

/// Product of cardinalities, saturating in `u128`.
pub fn state_space(cards: impl IntoIterator<Item = usize>) -> u128 {
    cards
        .into_iter()
        .fold(1u128, |acc, c| acc.saturating_mul(c as u128))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    DuplicateVariable,
    ZeroCardinality,
    UnknownVariable,
    TableLengthMismatch,
    RepeatedScopeVariable,
    NoFiniteEntry,
    InvalidEnergy,
    BadTemperature,
    Unsatisfiable,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ViolationKind::DuplicateVariable => "duplicate variable",
            ViolationKind::ZeroCardinality => "zero cardinality",
            ViolationKind::UnknownVariable => "unknown variable",
            ViolationKind::TableLengthMismatch => "table length mismatch",
            ViolationKind::RepeatedScopeVariable => "repeated scope variable",
            ViolationKind::NoFiniteEntry => "no finite entry",
            ViolationKind::InvalidEnergy => "invalid energy",
            ViolationKind::BadTemperature => "temperature must be positive and finite",
            ViolationKind::Unsatisfiable => "no finite-energy configuration",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// The offending object, e.g. `factor fa` or `variable x1`.
    pub object: String,
    pub kind: ViolationKind,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.object, self.kind)?;
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return f.write_str("ok");
        }
        let parts: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join("; "))
    }
}

/// Unvalidated graph description. Build one directly or through
/// [`crate::format::parse_graph`], then call [`GraphSpec::build`].
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSpec {
    pub temperature: f64,
    pub variables: Vec<VariableSpec>,
    /// Prior energies keyed by variable id; missing entries mean all zeros.
    pub priors: BTreeMap<String, Vec<f64>>,
    pub factors: BTreeMap<String, EnergyTable>,
    pub regions: Option<BTreeMap<String, Vec<String>>>,
}

impl Default for GraphSpec {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            variables: Vec::new(),
            priors: BTreeMap::new(),
            factors: BTreeMap::new(),
            regions: None,
        }
    }
}

impl GraphSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn temperature(mut self, kt: f64) -> Self {
        self.temperature = kt;
        self
    }

    pub fn variable(mut self, id: impl Into<String>, cardinality: usize) -> Self {
        self.variables.push(VariableSpec {
            id: id.into(),
            cardinality,
        });
        self
    }

    pub fn prior(mut self, id: impl Into<String>, energies: Vec<f64>) -> Self {
        self.priors.insert(id.into(), energies);
        self
    }

    pub fn factor(
        mut self,
        id: impl Into<String>,
        scope: impl IntoIterator<Item = impl Into<String>>,
        energies: Vec<f64>,
    ) -> Self {
        self.factors.insert(id.into(), EnergyTable::new(scope, energies));
        self
    }

    pub fn region(mut self, id: impl Into<String>, factors: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.regions
            .get_or_insert_with(BTreeMap::new)
            .insert(id.into(), factors.into_iter().map(Into::into).collect());
        self
    }

    pub fn build(self) -> Result<FactorGraph> {
        let report = validate_graph(&self);
        if !report.is_ok() {
            return Err(Error::Validation(report));
        }
        Ok(FactorGraph::from_valid_spec(self))
    }
}

fn check_energies(object: &str, energies: &[f64], out: &mut Vec<Violation>) {
    if energies.iter().any(|e| e.is_nan() || *e == f64::NEG_INFINITY) {
        out.push(Violation {
            object: object.to_string(),
            kind: ViolationKind::InvalidEnergy,
            detail: "energies must be finite reals or +inf".into(),
        });
    }
    if !energies.iter().any(|e| e.is_finite()) {
        out.push(Violation {
            object: object.to_string(),
            kind: ViolationKind::NoFiniteEntry,
            detail: String::new(),
        });
    }
}

/// Checks every graph invariant. Violations are data, never a failure.
pub fn validate_graph(spec: &GraphSpec) -> ValidationReport {
    let mut out = Vec::new();
    if !(spec.temperature > 0.0 && spec.temperature.is_finite()) {
        out.push(Violation {
            object: "graph".into(),
            kind: ViolationKind::BadTemperature,
            detail: format!("got {}", spec.temperature),
        });
    }

    let mut cards: HashMap<&str, usize> = HashMap::new();
    for v in &spec.variables {
        if cards.insert(v.id.as_str(), v.cardinality).is_some() {
            out.push(Violation {
                object: format!("variable {}", v.id),
                kind: ViolationKind::DuplicateVariable,
                detail: String::new(),
            });
        }
        if v.cardinality == 0 {
            out.push(Violation {
                object: format!("variable {}", v.id),
                kind: ViolationKind::ZeroCardinality,
                detail: String::new(),
            });
        }
    }

    for (id, energies) in &spec.priors {
        let object = format!("prior {id}");
        match cards.get(id.as_str()) {
            None => out.push(Violation {
                object,
                kind: ViolationKind::UnknownVariable,
                detail: id.clone(),
            }),
            Some(&c) => {
                if energies.len() != c {
                    out.push(Violation {
                        object: object.clone(),
                        kind: ViolationKind::TableLengthMismatch,
                        detail: format!("expected {c} entries, got {}", energies.len()),
                    });
                }
                check_energies(&object, energies, &mut out);
            }
        }
    }

    for (id, table) in &spec.factors {
        let object = format!("factor {id}");
        let mut resolved = true;
        let mut expected: u128 = 1;
        for (i, v) in table.scope.iter().enumerate() {
            match cards.get(v.as_str()) {
                None => {
                    resolved = false;
                    out.push(Violation {
                        object: object.clone(),
                        kind: ViolationKind::UnknownVariable,
                        detail: v.clone(),
                    });
                }
                Some(&c) => expected = expected.saturating_mul(c as u128),
            }
            if table.scope[..i].contains(v) {
                out.push(Violation {
                    object: object.clone(),
                    kind: ViolationKind::RepeatedScopeVariable,
                    detail: v.clone(),
                });
            }
        }
        if resolved && expected != table.energies.len() as u128 {
            out.push(Violation {
                object: object.clone(),
                kind: ViolationKind::TableLengthMismatch,
                detail: format!("expected {expected} entries, got {}", table.energies.len()),
            });
        }
        check_energies(&object, &table.energies, &mut out);
    }

    if out.is_empty() {
        let graph = FactorGraph::from_valid_spec(spec.clone());
        if graph.find_finite_configuration(SATISFIABILITY_BUDGET) == Search::Exhausted {
            out.push(Violation {
                object: "graph".into(),
                kind: ViolationKind::Unsatisfiable,
                detail: "every joint configuration has infinite energy".into(),
            });
        }
    }
    ValidationReport { violations: out }
}

const SATISFIABILITY_BUDGET: u64 = 1 << 22;

#[derive(Debug, PartialEq, Eq)]
enum Search {
    Found(Vec<usize>),
    Exhausted,
    /// Node budget ran out before a verdict.
    Unknown,
}

/// Validated, immutable factor graph.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorGraph {
    temperature: f64,
    variables: Vec<VariableSpec>,
    index: HashMap<String, usize>,
    priors: Vec<Vec<f64>>,
    explicit_priors: Vec<bool>,
    factors: Vec<Factor>,
    factor_index: HashMap<String, usize>,
    adjacency: Vec<Vec<(usize, usize)>>,
    regions: Option<BTreeMap<String, Vec<String>>>,
}

impl FactorGraph {
    fn from_valid_spec(spec: GraphSpec) -> Self {
        let index: HashMap<String, usize> = spec
            .variables
            .iter()
            .enumerate()
            .map(|(i, v)| (v.id.clone(), i))
            .collect();
        let mut priors: Vec<Vec<f64>> = spec.variables.iter().map(|v| vec![0.0; v.cardinality]).collect();
        let mut explicit_priors = vec![false; spec.variables.len()];
        for (id, e) in spec.priors {
            let i = index[&id];
            priors[i] = e;
            explicit_priors[i] = true;
        }
        let mut factors = Vec::with_capacity(spec.factors.len());
        let mut adjacency = vec![Vec::new(); spec.variables.len()];
        for (fi, (id, table)) in spec.factors.into_iter().enumerate() {
            let scope: Vec<usize> = table.scope.iter().map(|v| index[v]).collect();
            let cards = scope.iter().map(|&j| spec.variables[j].cardinality).collect();
            for (pos, &j) in scope.iter().enumerate() {
                adjacency[j].push((fi, pos));
            }
            factors.push(Factor {
                id,
                scope,
                cards,
                energies: table.energies,
            });
        }
        let factor_index = factors.iter().enumerate().map(|(i, f)| (f.id.clone(), i)).collect();
        Self {
            temperature: spec.temperature,
            variables: spec.variables,
            index,
            priors,
            explicit_priors,
            factors,
            factor_index,
            adjacency,
            regions: spec.regions,
        }
    }

    /// Back to the editable description.
    pub fn to_spec(&self) -> GraphSpec {
        GraphSpec {
            temperature: self.temperature,
            variables: self.variables.clone(),
            priors: self
                .variables
                .iter()
                .zip(&self.priors)
                .zip(&self.explicit_priors)
                .filter(|(_, &explicit)| explicit)
                .map(|((v, p), _)| (v.id.clone(), p.clone()))
                .collect(),
            factors: self
                .factors
                .iter()
                .map(|f| {
                    (
                        f.id.clone(),
                        EnergyTable {
                            scope: f.scope.iter().map(|&j| self.variables[j].id.clone()).collect(),
                            energies: f.energies.clone(),
                        },
                    )
                })
                .collect(),
            regions: self.regions.clone(),
        }
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn variables(&self) -> &[VariableSpec] {
        &self.variables
    }

    pub fn variable_id(&self, j: usize) -> &str {
        &self.variables[j].id
    }

    pub fn cardinality(&self, j: usize) -> usize {
        self.variables[j].cardinality
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.variables.iter().map(|v| v.cardinality).collect()
    }

    pub fn variable_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub(crate) fn require_variable(&self, id: &str) -> Result<usize> {
        self.variable_index(id)
            .ok_or_else(|| Error::input(format!("unknown variable {id}")))
    }

    /// Prior energies `E_j` (all zeros unless given).
    pub fn prior(&self, j: usize) -> &[f64] {
        &self.priors[j]
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn factor(&self, a: usize) -> &Factor {
        &self.factors[a]
    }

    pub fn factor_index(&self, id: &str) -> Option<usize> {
        self.factor_index.get(id).copied()
    }

    /// `(factor index, position in scope)` for every non-prior factor touching `j`.
    pub fn neighbors(&self, j: usize) -> &[(usize, usize)] {
        &self.adjacency[j]
    }

    /// Region block carried by the graph file, if any.
    pub fn regions(&self) -> Option<&BTreeMap<String, Vec<String>>> {
        self.regions.as_ref()
    }

    pub fn with_regions(mut self, regions: Option<BTreeMap<String, Vec<String>>>) -> Self {
        self.regions = regions;
        self
    }

    pub fn total_state_space(&self) -> u128 {
        state_space(self.variables.iter().map(|v| v.cardinality))
    }

    /// `E(x)` for a dense state vector in variable order; `+inf` if any
    /// selected entry is forbidden.
    pub fn energy_of(&self, states: &[usize]) -> f64 {
        let mut e: f64 = states.iter().enumerate().map(|(j, &s)| self.priors[j][s]).sum();
        for f in &self.factors {
            let mut idx = 0;
            for (&j, &c) in f.scope.iter().zip(&f.cards) {
                idx = idx * c + states[j];
            }
            e += f.energies[idx];
        }
        e
    }

    /// Depth-first search for a configuration of finite total energy.
    fn find_finite_configuration(&self, budget: u64) -> Search {
        let n = self.variables.len();
        // factors become checkable once their last variable (by index) is set
        let mut closing: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (a, f) in self.factors.iter().enumerate() {
            if let Some(&last) = f.scope.iter().max() {
                closing[last].push(a);
            }
        }
        let mut states = vec![0usize; n];
        let mut nodes = 0u64;
        let mut depth = 0usize;
        if n == 0 {
            return Search::Found(states);
        }
        let ok_at = |states: &[usize], j: usize| -> bool {
            if !self.priors[j][states[j]].is_finite() {
                return false;
            }
            closing[j].iter().all(|&a| {
                let f = &self.factors[a];
                let mut idx = 0;
                for (&k, &c) in f.scope.iter().zip(&f.cards) {
                    idx = idx * c + states[k];
                }
                f.energies[idx].is_finite()
            })
        };
        // states[depth] is the next candidate to try at `depth`
        loop {
            if states[depth] >= self.variables[depth].cardinality {
                states[depth] = 0;
                if depth == 0 {
                    return Search::Exhausted;
                }
                depth -= 1;
                states[depth] += 1;
                continue;
            }
            nodes += 1;
            if nodes > budget {
                return Search::Unknown;
            }
            if ok_at(&states, depth) {
                if depth + 1 == n {
                    return Search::Found(states);
                }
                depth += 1;
                states[depth] = 0;
            } else {
                states[depth] += 1;
            }
        }
    }

    /// Some configuration with finite energy, if the bounded search finds one.
    pub fn finite_configuration(&self) -> Option<Vec<usize>> {
        match self.find_finite_configuration(SATISFIABILITY_BUDGET) {
            Search::Found(s) => Some(s),
            _ => None,
        }
    }
}

/// Variable id → state index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Assignment(pub BTreeMap<String, usize>);

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(mut self, id: impl Into<String>, state: usize) -> Self {
        self.0.insert(id.into(), state);
        self
    }

    /// Dense state vector in the graph's variable order.
    pub fn to_states(&self, graph: &FactorGraph) -> Result<Vec<usize>> {
        for id in self.0.keys() {
            graph.require_variable(id)?;
        }
        graph
            .variables()
            .iter()
            .map(|v| {
                let s = *self
                    .0
                    .get(&v.id)
                    .ok_or_else(|| Error::input(format!("assignment misses variable {}", v.id)))?;
                if s >= v.cardinality {
                    return Err(Error::input(format!(
                        "state {s} out of range for {} (cardinality {})",
                        v.id, v.cardinality
                    )));
                }
                Ok(s)
            })
            .collect()
    }

    pub fn from_states(graph: &FactorGraph, states: &[usize]) -> Self {
        Self(
            graph
                .variables()
                .iter()
                .zip(states)
                .map(|(v, &s)| (v.id.clone(), s))
                .collect(),
        )
    }
}

/// `Σ_α E_α(x_α) + Σ_j E_j(x_j)`.
pub fn total_energy(graph: &FactorGraph, x: &Assignment) -> Result<f64> {
    Ok(graph.energy_of(&x.to_states(graph)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::g1;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn g1_is_valid() {
        assert!(validate_graph(&g1().to_spec()).is_ok());
    }

    #[test]
    fn unknown_scope_variable() {
        let spec = g1().to_spec().factor("fb", ["x1", "x9"], vec![0.0; 4]);
        let report = validate_graph(&spec);
        assert!(report.has(ViolationKind::UnknownVariable));
        assert!(report.to_string().contains("factor fb: unknown variable"));
    }

    #[test]
    fn short_table() {
        let spec = g1().to_spec().factor("fb", ["x1", "x2"], vec![0.0; 3]);
        let report = validate_graph(&spec);
        assert!(report.has(ViolationKind::TableLengthMismatch));
        assert!(report.to_string().contains("table length mismatch"));
    }

    #[test]
    fn other_violations() {
        let spec = GraphSpec::new()
            .temperature(0.0)
            .variable("a", 2)
            .variable("a", 0)
            .prior("zz", vec![0.0])
            .factor("f", ["a", "a"], vec![f64::INFINITY; 4])
            .factor("g", ["a"], vec![f64::NAN, 0.0]);
        let r = validate_graph(&spec);
        for kind in [
            ViolationKind::BadTemperature,
            ViolationKind::DuplicateVariable,
            ViolationKind::ZeroCardinality,
            ViolationKind::UnknownVariable,
            ViolationKind::RepeatedScopeVariable,
            ViolationKind::NoFiniteEntry,
            ViolationKind::InvalidEnergy,
        ] {
            assert!(r.has(kind), "missing {kind}");
        }
    }

    #[test]
    fn jointly_unsatisfiable() {
        let inf = f64::INFINITY;
        let spec = GraphSpec::new()
            .variable("a", 2)
            .variable("b", 2)
            .factor("eq", ["a", "b"], vec![0.0, inf, inf, 0.0])
            .factor("ne", ["a", "b"], vec![inf, 0.0, 0.0, inf]);
        assert!(validate_graph(&spec).has(ViolationKind::Unsatisfiable));
        assert!(matches!(spec.build(), Err(Error::Validation(_))));
    }

    #[test]
    fn g1_energies() {
        let g = g1();
        let e = |a, b| total_energy(&g, &Assignment::new().set("x1", a).set("x2", b)).unwrap();
        assert_eq!(e(0, 0), 0.0);
        assert!((e(1, 0) - 2.0 * LN2).abs() < 1e-15);
        assert!((e(1, 0) - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn forbidden_entry_is_infinite() {
        let g = GraphSpec::new()
            .variable("a", 2)
            .factor("f", ["a"], vec![0.0, f64::INFINITY])
            .build()
            .unwrap();
        let x = Assignment::new().set("a", 1);
        assert_eq!(total_energy(&g, &x).unwrap(), f64::INFINITY);
    }

    #[test]
    fn bad_assignments() {
        let g = g1();
        assert!(total_energy(&g, &Assignment::new().set("x1", 0)).is_err());
        assert!(total_energy(&g, &Assignment::new().set("x1", 0).set("x2", 2)).is_err());
        assert!(total_energy(&g, &Assignment::new().set("x1", 0).set("x2", 0).set("q", 0)).is_err());
    }

    #[test]
    fn strides_row_major() {
        assert_eq!(strides(&[2, 3, 4]), vec![12, 4, 1]);
        assert_eq!(strides(&[]), Vec::<usize>::new());
    }
}
