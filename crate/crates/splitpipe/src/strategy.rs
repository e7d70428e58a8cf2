//! Strategy documents (JSON): which layers run where and how each cut is
//! quantized.
//!
//! ```json
//! {
//!   "model": "chain",
//!   "device_layers": ["v1", "v2"],
//!   "cloud_layers": ["v3"],
//!   "cuts": [{ "layer": "v2", "bits": 8, "severed": [["v2", "v3"]] }]
//! }
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use splitpipe_core::{ModelGraph, PartitionStrategy};

use crate::error::{read_file, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CutDoc {
    layer: String,
    bits: u8,
    severed: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StrategyDoc {
    model: String,
    device_layers: Vec<String>,
    cloud_layers: Vec<String>,
    cuts: Vec<CutDoc>,
}

pub fn strategy_to_json(g: &ModelGraph, s: &PartitionStrategy) -> String {
    let id = |v: usize| g.layer(v).id.clone();
    let doc = StrategyDoc {
        model: g.name().to_string(),
        device_layers: s.device_layers().map(id).collect(),
        cloud_layers: s.cloud_layers().map(id).collect(),
        cuts: s
            .cuts()
            .iter()
            .map(|c| CutDoc {
                layer: id(c.layer),
                bits: c.bits,
                severed: c.severed.iter().map(|&(a, b)| (id(a), id(b))).collect(),
            })
            .collect(),
    };
    let mut out = serde_json::to_string_pretty(&doc).expect("strategy serializes");
    out.push('\n');
    out
}

/// Parses a strategy and checks it against `g`: the layer sets must
/// partition the model, and the listed cuts must be exactly the device
/// layers feeding the cloud, with their severed edges.
pub fn parse_strategy(text: &str, g: &ModelGraph, origin: &Path) -> Result<PartitionStrategy> {
    let doc: StrategyDoc = serde_json::from_str(text).map_err(|e| Error::parse(origin, e))?;
    let bad = |msg: String| Error::parse(origin, msg);
    let index = |id: &str| g.index_of(id).ok_or_else(|| bad(format!("unknown layer `{id}`")));
    if doc.model != g.name() {
        return Err(bad(format!("strategy is for model `{}`, not `{}`", doc.model, g.name())));
    }

    let mut device = vec![false; g.len()];
    let mut seen = BTreeSet::new();
    for id in &doc.device_layers {
        let v = index(id)?;
        device[v] = true;
        seen.insert(v);
    }
    for id in &doc.cloud_layers {
        if !seen.insert(index(id)?) {
            return Err(bad(format!("layer `{id}` is listed twice")));
        }
    }
    if seen.len() != g.len() {
        return Err(bad("device and cloud layers must cover every layer".into()));
    }

    let mut bits = BTreeMap::new();
    let mut severed = BTreeMap::new();
    for c in &doc.cuts {
        let v = index(&c.layer)?;
        bits.insert(v, c.bits);
        let edges: Result<BTreeSet<(usize, usize)>> =
            c.severed.iter().map(|(a, b)| Ok((index(a)?, index(b)?))).collect();
        severed.insert(v, edges?);
    }
    let mut missing = None;
    let s = PartitionStrategy::from_device_set(g, device, |v| match bits.get(&v) {
        Some(&b) => b,
        None => {
            missing.get_or_insert(v);
            8
        }
    })
    .map_err(|e| bad(e.to_string()))?;
    if let Some(v) = missing {
        return Err(bad(format!("device layer `{}` feeds the cloud but has no cut", g.layer(v).id)));
    }
    if s.cuts().len() != doc.cuts.len() {
        return Err(bad("a listed cut has no severed edge under this placement".into()));
    }
    for c in s.cuts() {
        let expected: BTreeSet<(usize, usize)> = c.severed.iter().copied().collect();
        if severed[&c.layer] != expected {
            return Err(bad(format!("severed edges of cut `{}` do not match the model", g.layer(c.layer).id)));
        }
    }
    Ok(s)
}

pub fn load_strategy(path: &Path, g: &ModelGraph) -> Result<PartitionStrategy> {
    parse_strategy(&read_file(path)?, g, path)
}
