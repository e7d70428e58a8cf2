//! Bandwidth trace files: one `time_ms mbps` pair per line, ascending,
//! first at 0. Blank lines and `#` comments are ignored.

use std::path::Path;

use splitpipe_core::BandwidthTrace;

use crate::error::{read_file, Error, Result};

pub fn parse_trace(text: &str, origin: &Path) -> Result<BandwidthTrace> {
    let mut segments = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parsed = match fields.as_slice() {
            [t, b] => t.parse::<f64>().ok().zip(b.parse::<f64>().ok()),
            _ => None,
        };
        let Some(pair) = parsed else {
            return Err(Error::parse(origin, format!("line {}: expected `time_ms mbps`", n + 1)));
        };
        segments.push(pair);
    }
    BandwidthTrace::new(segments).map_err(|e| Error::parse(origin, e))
}

pub fn load_trace(path: &Path) -> Result<BandwidthTrace> {
    parse_trace(&read_file(path)?, path)
}

pub fn trace_to_text(t: &BandwidthTrace) -> String {
    t.segments().iter().map(|(s, b)| format!("{s} {b}\n")).collect()
}
