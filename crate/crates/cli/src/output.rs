use std::collections::BTreeMap;
use std::io;

use regionbp::format::format_f64;
use regionbp::InferenceResult;
use serde::Serialize;
use serde_json::{json, Value};

/// JSON formatter that prints every float with 17 significant digits.
struct Precise(serde_json::ser::PrettyFormatter<'static>);

impl serde_json::ser::Formatter for Precise {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(format_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Pretty JSON with 17-digit floats and a trailing newline. Non-finite
/// floats become `null`.
pub fn to_json(value: &impl Serialize) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Precise(serde_json::ser::PrettyFormatter::new()));
    value.serialize(&mut ser).expect("in-memory JSON serialization");
    out.push(b'\n');
    String::from_utf8(out).expect("serde_json writes UTF-8")
}

fn number(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

fn optional(x: Option<f64>) -> Value {
    x.map_or(Value::Null, number)
}

/// The result document shared by every engine.
pub fn result_document(method: &str, r: &InferenceResult) -> Value {
    let marginals: serde_json::Map<String, Value> = r
        .variable_ids
        .iter()
        .zip(&r.beliefs)
        .map(|(id, b)| (id.clone(), Value::Array(b.iter().map(|&p| number(p)).collect())))
        .collect();
    let free_energy: serde_json::Map<String, Value> =
        r.free_energy.iter().map(|(k, &v)| (k.clone(), number(v))).collect();
    let mut doc = json!({
        "status": r.status.as_str(),
        "method": method,
        "iterations": r.iterations,
        "residual": number(r.residual),
        "consistency_gap": optional(r.consistency_gap),
        "soundness_residual": optional(r.soundness_residual),
        "free_energy": free_energy,
        "marginals": marginals,
    });
    if !r.warnings.is_empty() {
        doc["warnings"] = json!(r.warnings);
    }
    doc
}

/// Per-method documents plus the pairwise max-TV matrix.
pub fn compare_document(results: &[(&str, InferenceResult)]) -> Value {
    let methods: serde_json::Map<String, Value> = results
        .iter()
        .map(|(m, r)| (m.to_string(), result_document(m, r)))
        .collect();
    let mut tv: BTreeMap<String, BTreeMap<String, Value>> = BTreeMap::new();
    for (a, ra) in results {
        for (b, rb) in results {
            let d = regionbp::result::max_tv(&ra.beliefs, &rb.beliefs);
            tv.entry(a.to_string()).or_default().insert(b.to_string(), number(d));
        }
    }
    json!({ "methods": methods, "max_tv": tv })
}
