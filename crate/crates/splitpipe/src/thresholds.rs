//! Threshold documents (JSON). Disabled thresholds are written as the
//! string `"inf"`.
//!
//! ```json
//! { "s_ext": 2.5, "s_adj": { "2": "inf", "4": 1.25, "8": 0.0 } }
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use splitpipe_core::Thresholds;

use crate::error::{read_file, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum Value {
    Finite(f64),
    Sentinel(Inf),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
enum Inf {
    #[serde(rename = "inf")]
    Inf,
}

impl Value {
    fn from_f64(v: f64) -> Self {
        if v.is_finite() {
            Value::Finite(v)
        } else {
            Value::Sentinel(Inf::Inf)
        }
    }

    fn to_f64(self) -> f64 {
        match self {
            Value::Finite(v) => v,
            Value::Sentinel(_) => f64::INFINITY,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ThresholdsDoc {
    s_ext: Value,
    s_adj: BTreeMap<u8, Value>,
}

pub fn thresholds_to_json(t: &Thresholds) -> String {
    let doc = ThresholdsDoc {
        s_ext: Value::from_f64(t.s_ext),
        s_adj: t.s_adj.iter().map(|(&b, &v)| (b, Value::from_f64(v))).collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("thresholds serialize");
    s.push('\n');
    s
}

pub fn parse_thresholds(text: &str, origin: &Path) -> Result<Thresholds> {
    let doc: ThresholdsDoc = serde_json::from_str(text).map_err(|e| Error::parse(origin, e))?;
    let t = Thresholds {
        s_ext: doc.s_ext.to_f64(),
        s_adj: doc.s_adj.into_iter().map(|(b, v)| (b, v.to_f64())).collect(),
    };
    if !t.is_monotone() {
        return Err(Error::parse(origin, "s_adj must not decrease toward lower precisions"));
    }
    Ok(t)
}

pub fn load_thresholds(path: &Path) -> Result<Thresholds> {
    parse_thresholds(&read_file(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infinite_values_use_sentinel() {
        let t = Thresholds {
            s_ext: f64::INFINITY,
            s_adj: [(2, f64::INFINITY), (4, 1.5), (16, 0.0)].into_iter().collect(),
        };
        let text = thresholds_to_json(&t);
        assert!(text.contains(r#""s_ext": "inf""#), "{text}");
        assert!(text.find(r#""2""#) < text.find(r#""16""#), "keys sort by bit-width");
        assert_eq!(parse_thresholds(&text, Path::new("t")).unwrap(), t);
    }

    #[test]
    fn rejects_non_monotone() {
        let text = r#"{"s_ext": 1, "s_adj": {"2": 0.5, "8": 1.0}}"#;
        assert!(parse_thresholds(text, Path::new("t")).is_err());
        assert!(parse_thresholds(r#"{"s_ext": "nan", "s_adj": {}}"#, Path::new("t")).is_err());
        assert!(parse_thresholds(r#"{"s_ext": 1, "s_adj": {"x": 1}}"#, Path::new("t")).is_err());
    }
}
