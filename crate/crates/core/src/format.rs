//! JSON graph files.
//!
//! ```json
//! { "temperature": 1.0,
//!   "variables": [ {"id": "x1", "cardinality": 2} ],
//!   "priors":    { "x1": [0.0, 0.6931471805599453] },
//!   "factors":   { "fa": {"scope": ["x1", "x2"], "energies": [0.0, "inf", 0.5, 0.0]} },
//!   "regions":   { "R1": ["fa"] } }
//! ```
//!
//! Energies are JSON numbers or the string `"inf"`. Numbers are written in
//! shortest round-trip form, so parsing a serialized graph is bit-exact.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::graph::{EnergyTable, FactorGraph, GraphSpec, VariableSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
struct Energy(f64);

impl Serialize for Energy {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Energy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct EnergyVisitor;
        impl Visitor<'_> for EnergyVisitor {
            type Value = Energy;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or the string \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Energy, E> {
                Ok(Energy(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Energy, E> {
                Ok(Energy(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Energy, E> {
                Ok(Energy(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Energy, E> {
                match v {
                    "inf" => Ok(Energy(f64::INFINITY)),
                    other => Err(E::invalid_value(de::Unexpected::Str(other), &self)),
                }
            }
        }
        d.deserialize_any(EnergyVisitor)
    }
}

fn energies(v: &[f64]) -> Vec<Energy> {
    v.iter().copied().map(Energy).collect()
}

fn raw(v: Vec<Energy>) -> Vec<f64> {
    v.into_iter().map(|e| e.0).collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VariableDoc {
    id: String,
    cardinality: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FactorDoc {
    scope: Vec<String>,
    energies: Vec<Energy>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDoc {
    #[serde(default = "unit_temperature")]
    temperature: f64,
    variables: Vec<VariableDoc>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    priors: BTreeMap<String, Vec<Energy>>,
    #[serde(default)]
    factors: BTreeMap<String, FactorDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    regions: Option<BTreeMap<String, Vec<String>>>,
}

fn unit_temperature() -> f64 {
    1.0
}

fn parse_error(e: serde_json::Error) -> Error {
    Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

/// Parses a graph document without validating it.
pub fn parse_spec(text: &str) -> Result<GraphSpec> {
    let doc: GraphDoc = serde_json::from_str(text).map_err(parse_error)?;
    Ok(GraphSpec {
        temperature: doc.temperature,
        variables: doc
            .variables
            .into_iter()
            .map(|v| VariableSpec {
                id: v.id,
                cardinality: v.cardinality,
            })
            .collect(),
        priors: doc.priors.into_iter().map(|(k, v)| (k, raw(v))).collect(),
        factors: doc
            .factors
            .into_iter()
            .map(|(k, f)| {
                (
                    k,
                    EnergyTable {
                        scope: f.scope,
                        energies: raw(f.energies),
                    },
                )
            })
            .collect(),
        regions: doc.regions,
    })
}

/// Parses and validates a graph document.
pub fn parse_graph(text: &str) -> Result<FactorGraph> {
    parse_spec(text)?.build()
}

pub fn serialize_spec(spec: &GraphSpec) -> String {
    let doc = GraphDoc {
        temperature: spec.temperature,
        variables: spec
            .variables
            .iter()
            .map(|v| VariableDoc {
                id: v.id.clone(),
                cardinality: v.cardinality,
            })
            .collect(),
        priors: spec.priors.iter().map(|(k, v)| (k.clone(), energies(v))).collect(),
        factors: spec
            .factors
            .iter()
            .map(|(k, t)| {
                (
                    k.clone(),
                    FactorDoc {
                        scope: t.scope.clone(),
                        energies: energies(&t.energies),
                    },
                )
            })
            .collect(),
        regions: spec.regions.clone(),
    };
    serde_json::to_string_pretty(&doc).expect("graph documents always serialize")
}

pub fn serialize_graph(graph: &FactorGraph) -> String {
    serialize_spec(&graph.to_spec())
}

/// Partition file: region id → factor ids.
pub fn parse_partition(text: &str) -> Result<BTreeMap<String, Vec<String>>> {
    serde_json::from_str(text).map_err(parse_error)
}

/// Renders a float with 17 significant digits (`6.6666666666666663e-1`);
/// non-finite values become `inf`, `-inf` or `nan`.
pub fn format_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}
