use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::{state_space, FactorGraph};
use crate::oracle::for_each_configuration;
use crate::regions::RegionDecomposition;
use crate::result::Status;

/// One additive energy term over some positions of a region's support.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyTerm {
    /// Support positions, one per axis of `energies` (row-major, last fastest).
    pub positions: Vec<usize>,
    pub energies: Vec<f64>,
}

/// A boundary variable as seen by one region.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySite {
    pub variable: String,
    /// Position within the region's support.
    pub position: usize,
    /// `C_j`, the number of regions containing the variable.
    pub count: usize,
    /// Corrective potential `V_j^R`, one energy per state.
    pub potential: Vec<f64>,
}

/// Input to a region solver: the augmented energy of one region as a sum of
/// terms over its support, and its boundary sites.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionProblem {
    pub region_id: String,
    pub variables: Vec<String>,
    pub cards: Vec<usize>,
    pub terms: Arc<Vec<EnergyTerm>>,
    pub boundary: Vec<BoundarySite>,
    pub temperature: f64,
    /// Optional warm start for the internal log-fields, one per boundary site.
    pub initial_fields: Option<Vec<Vec<f64>>>,
}

impl RegionProblem {
    /// A region with a single dense energy table over all its variables and
    /// no boundary sites.
    pub fn from_table(
        region_id: impl Into<String>,
        variables: Vec<String>,
        cards: Vec<usize>,
        energies: Vec<f64>,
        temperature: f64,
    ) -> Self {
        let positions = (0..variables.len()).collect();
        Self {
            region_id: region_id.into(),
            variables,
            cards,
            terms: Arc::new(vec![EnergyTerm { positions, energies }]),
            boundary: Vec::new(),
            temperature,
            initial_fields: None,
        }
    }

    /// Adds a boundary site for the named support variable.
    pub fn with_site(mut self, variable: &str, count: usize, potential: Vec<f64>) -> Result<Self> {
        let position = self
            .variables
            .iter()
            .position(|v| v == variable)
            .ok_or_else(|| Error::input(format!("{variable} is not in region {}", self.region_id)))?;
        self.boundary.push(BoundarySite {
            variable: variable.to_string(),
            position,
            count,
            potential,
        });
        Ok(self)
    }

    /// The problem of region `r` of a decomposition, without potentials
    /// (all zero). Terms are the region's factors plus its interior priors.
    pub fn from_region(graph: &FactorGraph, decomp: &RegionDecomposition, r: usize) -> Self {
        let region = &decomp.regions[r];
        let locate = |j: usize| region.support.binary_search(&j).expect("scope inside support");
        let mut terms: Vec<EnergyTerm> = region
            .factors
            .iter()
            .map(|&a| {
                let f = graph.factor(a);
                EnergyTerm {
                    positions: f.scope.iter().map(|&j| locate(j)).collect(),
                    energies: f.energies.clone(),
                }
            })
            .collect();
        terms.extend(region.interior.iter().map(|&j| EnergyTerm {
            positions: vec![locate(j)],
            energies: graph.prior(j).to_vec(),
        }));
        let boundary = region
            .boundary
            .iter()
            .zip(&region.boundary_positions)
            .map(|(&j, &position)| BoundarySite {
                variable: graph.variable_id(j).to_string(),
                position,
                count: decomp.counts[j],
                potential: vec![0.0; graph.cardinality(j)],
            })
            .collect();
        Self {
            region_id: region.id.clone(),
            variables: region.support.iter().map(|&j| graph.variable_id(j).to_string()).collect(),
            cards: region.support.iter().map(|&j| graph.cardinality(j)).collect(),
            terms: Arc::new(terms),
            boundary,
            temperature: graph.temperature(),
            initial_fields: None,
        }
    }

    pub fn state_space(&self) -> u128 {
        state_space(self.cards.iter().copied())
    }

    pub fn site_card(&self, s: usize) -> usize {
        self.cards[self.boundary[s].position]
    }

    /// Checks shapes and the boundary invariants.
    pub fn check(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::input(format!("region {}: {msg}", self.region_id)));
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return fail("temperature must be positive".into());
        }
        if self.variables.len() != self.cards.len() {
            return fail("variables and cardinalities differ in length".into());
        }
        if self.cards.contains(&0) {
            return fail("zero cardinality".into());
        }
        for t in self.terms.iter() {
            if t.positions.iter().any(|&p| p >= self.cards.len()) {
                return fail("energy term refers to a position outside the region".into());
            }
            let len: usize = t.positions.iter().map(|&p| self.cards[p]).product();
            if len != t.energies.len() {
                return fail("energy term has the wrong length".into());
            }
            if t.energies.iter().any(|e| e.is_nan() || *e == f64::NEG_INFINITY) {
                return fail("energies must be finite or +inf".into());
            }
        }
        let mut seen = vec![false; self.cards.len()];
        for site in &self.boundary {
            if site.position >= self.cards.len() || seen[site.position] {
                return fail(format!("bad boundary position for {}", site.variable));
            }
            seen[site.position] = true;
            if site.count < 2 {
                return fail(format!("boundary variable {} has count {} < 2", site.variable, site.count));
            }
            if site.potential.len() != self.cards[site.position] || site.potential.iter().any(|v| !v.is_finite()) {
                return fail(format!("potential of {} must be finite with one entry per state", site.variable));
            }
        }
        if let Some(fields) = &self.initial_fields {
            if fields.len() != self.boundary.len()
                || fields.iter().zip(0..).any(|(f, s)| f.len() != self.site_card(s))
            {
                return fail("initial fields do not match the boundary".into());
            }
        }
        Ok(())
    }

    /// Total augmented energy of one configuration of the support.
    pub fn energy(&self, states: &[usize]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let mut k = 0;
                for &p in &t.positions {
                    k = k * self.cards[p] + states[p];
                }
                t.energies[k]
            })
            .sum()
    }

    /// Dense augmented energy table over the support.
    pub fn dense_energies(&self, cap: u64) -> Result<Vec<f64>> {
        let size = self.state_space();
        if size > cap as u128 {
            return Err(Error::Capacity {
                what: format!("region {}", self.region_id),
                needed: size,
                cap,
            });
        }
        let mut out = vec![0.0; size as usize];
        for_each_configuration(&self.cards, |idx, states| out[idx] = self.energy(states));
        Ok(out)
    }
}

/// Output of a region solver.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSolution {
    pub region_id: String,
    pub status: Status,
    pub iterations: usize,
    /// Self-consistency residual of the critical-point relation, max-norm
    /// over normalized log-fields.
    pub residual: f64,
    /// `μ_j` per boundary site.
    pub boundary_marginals: Vec<Vec<f64>>,
    /// Marginal of every support variable, support order.
    pub marginals: Vec<Vec<f64>>,
    /// Final internal log-fields `ln m_j`, normalized.
    pub fields: Vec<Vec<f64>>,
    /// Joint belief `b_R` over the support (exact solver only).
    pub belief: Option<Vec<f64>>,
    /// Kept sweeps summed over inner steps (sampling solver only).
    pub samples: u64,
    /// Standard errors of `marginals` (sampling solver only).
    pub standard_errors: Option<Vec<Vec<f64>>>,
    /// Modified free energy after each inner step, starting with the initial fields.
    pub free_energy_trace: Vec<f64>,
}
