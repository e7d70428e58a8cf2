//! File formats, scenario runner and reports around [`splitpipe_core`].
//!
//! | file | format | module |
//! |---|---|---|
//! | model profile | JSON | [`profile`] |
//! | strategy | JSON | [`strategy`] |
//! | bandwidth trace | `time_ms mbps` lines | [`trace`] |
//! | feature set | `label C H W values...` lines | [`features`] |
//! | thresholds | JSON | [`thresholds`] |
//! | scenario | TOML | [`scenario`] |
//! | reports | TSV and `key value` text | [`report`] |

pub mod error;
pub mod features;
pub mod profile;
pub mod report;
pub mod scenario;
pub mod strategy;
pub mod synth;
pub mod thresholds;
pub mod trace;

pub use error::{Error, Result};
