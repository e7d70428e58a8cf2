//! Model profile documents (JSON).
//!
//! ```json
//! {
//!   "name": "chain",
//!   "input_bits": 80000,
//!   "t_max_ms": 50.0,
//!   "layers": [
//!     { "id": "v1", "device_time_ms": 1.0, "cloud_time_ms": 0.5,
//!       "output_elements": 4096, "output_channels": 16,
//!       "output_range": [0.0, 6.0],
//!       "accuracy_table": { "4": 0.71, "8": 0.76, "16": 0.76 } }
//!   ],
//!   "edges": [["v1", "v2"]]
//! }
//! ```
//!
//! `input_bits` (raw input size sent by a cloud-only plan), `t_max_ms` and
//! the per-layer output and accuracy fields are optional.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use splitpipe_core::{LayerNode, ModelGraph};

use crate::error::{read_file, Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    id: String,
    device_time_ms: f64,
    cloud_time_ms: f64,
    #[serde(default = "one")]
    output_elements: u64,
    #[serde(default = "one_u32")]
    output_channels: u32,
    #[serde(default = "unit_range")]
    output_range: (f64, f64),
    #[serde(default)]
    accuracy_table: BTreeMap<String, f64>,
}

fn one() -> u64 {
    1
}

fn one_u32() -> u32 {
    1
}

fn unit_range() -> (f64, f64) {
    (0.0, 1.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileDoc {
    name: String,
    #[serde(default, skip_serializing_if = "is_zero")]
    input_bits: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t_max_ms: Option<f64>,
    layers: Vec<LayerDoc>,
    edges: Vec<(String, String)>,
}

fn is_zero(v: &u64) -> bool {
    *v == 0
}

/// A loaded model and the profile-level latency budget.
#[derive(Debug, Clone)]
pub struct Profile {
    pub graph: ModelGraph,
    pub t_max_ms: Option<f64>,
}

pub fn parse_profile(text: &str, origin: &Path) -> Result<Profile> {
    let doc: ProfileDoc = serde_json::from_str(text).map_err(|e| Error::parse(origin, e))?;
    let mut layers = Vec::with_capacity(doc.layers.len());
    for l in doc.layers {
        let mut table = Vec::with_capacity(l.accuracy_table.len());
        for (k, acc) in &l.accuracy_table {
            let bits: u8 = k.parse().map_err(|_| {
                Error::parse(origin, format!("layer {}: accuracy key {k:?} is not a bit-width", l.id))
            })?;
            table.push((bits, *acc));
        }
        layers.push(
            LayerNode::new(l.id, l.device_time_ms, l.cloud_time_ms)
                .with_output(l.output_elements, l.output_channels)
                .with_range(l.output_range.0, l.output_range.1)
                .with_accuracy(table),
        );
    }
    let graph = ModelGraph::new(&doc.name, layers, &doc.edges)?.with_input_bits(doc.input_bits);
    Ok(Profile {
        graph,
        t_max_ms: doc.t_max_ms,
    })
}

pub fn load_profile(path: &Path) -> Result<Profile> {
    parse_profile(&read_file(path)?, path)
}

pub fn profile_to_json(p: &Profile) -> String {
    let g = &p.graph;
    let doc = ProfileDoc {
        name: g.name().to_string(),
        input_bits: g.input_bits(),
        t_max_ms: p.t_max_ms,
        layers: g
            .layers()
            .iter()
            .map(|l| LayerDoc {
                id: l.id.clone(),
                device_time_ms: l.device_time_ms,
                cloud_time_ms: l.cloud_time_ms,
                output_elements: l.output_elements,
                output_channels: l.output_channels,
                output_range: l.output_range,
                accuracy_table: l.accuracy_table.iter().map(|(b, a)| (b.to_string(), *a)).collect(),
            })
            .collect(),
        edges: g
            .edges()
            .iter()
            .map(|&(a, b)| (g.layer(a).id.clone(), g.layer(b).id.clone()))
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("profile serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const CHAIN3: &str = r#"{
        "name": "c3",
        "layers": [
            {"id": "a", "device_time_ms": 1, "cloud_time_ms": 0.5},
            {"id": "b", "device_time_ms": 2, "cloud_time_ms": 1,
             "output_elements": 10000, "accuracy_table": {"4": 0.9, "16": 0.91}},
            {"id": "c", "device_time_ms": 3, "cloud_time_ms": 1.5}
        ],
        "edges": [["a", "b"], ["b", "c"]]
    }"#;

    #[test]
    fn loads_three_layer_chain() {
        let p = parse_profile(CHAIN3, Path::new("c3.model")).unwrap();
        assert_eq!(p.graph.len(), 3);
        assert_eq!(p.graph.edges().len(), 2);
        assert_eq!(p.graph.layer(1).accuracy_table[&16], 0.91);
        assert_eq!(p.t_max_ms, None);
    }

    #[test]
    fn round_trips() {
        let p = parse_profile(CHAIN3, Path::new("c3.model")).unwrap();
        let again = parse_profile(&profile_to_json(&p), Path::new("x")).unwrap();
        assert_eq!(again.graph, p.graph);
    }

    #[test]
    fn rejects_cycles_and_bad_keys() {
        let cyc = CHAIN3.replace(r#"["b", "c"]"#, r#"["b", "a"]"#);
        let err = parse_profile(&cyc, Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Graph(_)), "{err}");
        let bad = CHAIN3.replace(r#""4": 0.9"#, r#""four": 0.9"#);
        assert!(matches!(parse_profile(&bad, Path::new("x")), Err(Error::Parse { .. })));
        let nonmono = CHAIN3.replace(r#""4": 0.9"#, r#""4": 0.95"#);
        assert!(matches!(parse_profile(&nonmono, Path::new("x")), Err(Error::Graph(_))));
        assert!(matches!(parse_profile("{", Path::new("x")), Err(Error::Parse { .. })));
    }
}
