//! Simulation scenarios (TOML) and their runner.
//!
//! ```toml
//! model = "three_scheme.model"            # paths are relative to the scenario file
//! strategy = "scheme1.strategy"   # optional: optimized at `bandwidth_mbps` otherwise
//! bandwidth_mbps = 10.0           # optional: defaults to the trace's initial rate
//! trace = "traces/constant_1mbps.trace"
//! seed = 7                        # seeds every synthetic feature set
//! output_dir = "out/scheme1"      # optional
//! epsilon = 0.005                 # optional accuracy-loss limit
//! precision_domain = [2, 4, 8]    # optional
//!
//! [arrivals]                      # interval_ms (+ count) or explicit times
//! interval_ms = 2.0
//! count = 12                      # defaults to the stream's sample count
//!
//! [stream]                        # optional task features: file or generator
//! features = "clips.features"
//!
//! [online]
//! enabled = true
//! decision_cost_ms = 0.0
//! update_on_cloud_label = false
//! thresholds = "x.thresholds"     # optional: calibrated otherwise
//! range = [-4.0, 8.0]             # optional: calibration quantization range
//!
//! [online.calibration.generate]   # warm-up/calibration set: file or generator
//! labels = 4
//! channels = 8
//! height = 4
//! width = 4
//! separation = 3.0
//! correlation = "low"
//! count = 200
//! ```
//!
//! Generated sets take their seed from the scenario: `seed` for the stream
//! and `seed + 1` for calibration.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use splitpipe_core::{
    bubble_report, evaluate_strategy, gap, optimize, simulate, BandwidthTrace, BubbleReport, Evaluation,
    OnlineScheduler, OptimizerConfig, PartitionStrategy, PrecisionDomain, SemanticCache, SimReport, TaskSpec,
    TaskStream, Thresholds,
};

use crate::error::{read_file, write_file, Error, Result};
use crate::features::{generate, load_feature_set, GeneratorSpec, Sample};
use crate::profile::{load_profile, Profile};
use crate::report::{bubbles_text, summary_text, tasks_tsv};
use crate::strategy::{load_strategy, strategy_to_json};
use crate::thresholds::{load_thresholds, thresholds_to_json};
use crate::trace::load_trace;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: PathBuf,
    pub strategy: Option<PathBuf>,
    pub bandwidth_mbps: Option<f64>,
    pub trace: PathBuf,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub epsilon: Option<f64>,
    pub precision_domain: Option<Vec<u8>>,
    pub arrivals: Arrivals,
    pub stream: Option<FeatureSource>,
    pub online: Option<OnlineConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arrivals {
    pub interval_ms: Option<f64>,
    pub count: Option<usize>,
    pub times: Option<Vec<f64>>,
}

/// A feature set from a file or from the generator.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSource {
    pub features: Option<PathBuf>,
    pub generate: Option<GeneratorSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnlineConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default)]
    pub decision_cost_ms: f64,
    #[serde(default)]
    pub update_on_cloud_label: bool,
    pub thresholds: Option<PathBuf>,
    pub range: Option<(f64, f64)>,
    pub calibration: Option<FeatureSource>,
}

fn yes() -> bool {
    true
}

impl FeatureSource {
    fn load(&self, base: &Path, seed: u64) -> Result<Vec<Sample>> {
        match (&self.features, &self.generate) {
            (Some(path), None) => load_feature_set(&base.join(path)),
            (None, Some(spec)) => generate(&GeneratorSpec {
                seed,
                ..spec.clone()
            }),
            _ => Err(Error::Invalid("a feature source needs exactly one of `features` or `generate`".into())),
        }
    }
}

pub fn parse_scenario(text: &str, origin: &Path) -> Result<ScenarioConfig> {
    toml::from_str(text).map_err(|e| Error::parse(origin, e.message()))
}

/// Everything a scenario run produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub profile: Profile,
    pub strategy: PartitionStrategy,
    /// Offline evaluation of the strategy at the planning bandwidth.
    pub evaluation: Evaluation,
    pub thresholds: Option<Thresholds>,
    pub report: SimReport,
    pub bubbles: BubbleReport,
}

impl Outcome {
    /// Writes `tasks.tsv`, `summary.txt`, `bubbles.txt`, `strategy.json`
    /// and, with online scheduling, `thresholds.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        write_file(&dir.join("tasks.tsv"), &tasks_tsv(&self.report))?;
        write_file(&dir.join("summary.txt"), &summary_text(&self.report))?;
        write_file(&dir.join("bubbles.txt"), &bubbles_text(&self.bubbles))?;
        write_file(&dir.join("strategy.json"), &strategy_to_json(&self.profile.graph, &self.strategy))?;
        if let Some(t) = &self.thresholds {
            write_file(&dir.join("thresholds.json"), &thresholds_to_json(t))?;
        }
        Ok(())
    }
}

/// Warms a cache on labelled samples and calibrates thresholds on them.
pub fn calibrate_samples(
    samples: &[Sample],
    range: (f64, f64),
    domain: &PrecisionDomain,
    epsilon: f64,
) -> Result<(SemanticCache, Thresholds)> {
    let cache = warm_cache(samples)?;
    let pairs: Vec<_> = samples.iter().map(|s| (s.label, s.tensor.clone())).collect();
    let t = splitpipe_core::calibrate(&cache, &pairs, range, domain, epsilon)?;
    Ok((cache, t))
}

pub fn warm_cache(samples: &[Sample]) -> Result<SemanticCache> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Invalid("calibration set is empty".into()))?;
    let labels = samples.iter().map(|s| s.label).max().unwrap_or(0) + 1;
    let mut cache = SemanticCache::new(labels, first.tensor.dims().0);
    cache.warm_up(samples.iter().map(|s| (s.label, &s.tensor)))?;
    Ok(cache)
}

impl ScenarioConfig {
    pub fn optimizer_config(&self, profile: &Profile) -> Result<OptimizerConfig> {
        let mut cfg = OptimizerConfig {
            t_max_ms: profile.t_max_ms,
            ..OptimizerConfig::default()
        };
        if let Some(e) = self.epsilon {
            cfg.epsilon = e;
        }
        if let Some(d) = &self.precision_domain {
            cfg.precision_domain = PrecisionDomain::new(d.iter().copied())?;
        }
        Ok(cfg)
    }

    fn arrival_times(&self, stream_len: Option<usize>) -> Result<Vec<f64>> {
        let a = &self.arrivals;
        match (&a.times, a.interval_ms) {
            (Some(times), None) => Ok(times.clone()),
            (None, Some(interval)) => {
                let count = a.count.or(stream_len).ok_or_else(|| {
                    Error::Invalid("arrivals need a count when no stream is given".into())
                })?;
                Ok((0..count).map(|i| i as f64 * interval).collect())
            }
            _ => Err(Error::Invalid("arrivals need exactly one of `times` or `interval_ms`".into())),
        }
    }

    /// Runs the scenario; relative paths resolve against `base`.
    pub fn run(&self, base: &Path) -> Result<Outcome> {
        let profile = load_profile(&base.join(&self.model))?;
        let g = &profile.graph;
        let trace: BandwidthTrace = load_trace(&base.join(&self.trace))?;
        let cfg = self.optimizer_config(&profile)?;
        let plan_bw = self.bandwidth_mbps.unwrap_or_else(|| trace.mbps_at(0.0));

        let strategy = match &self.strategy {
            Some(p) => load_strategy(&base.join(p), g)?,
            None => optimize(g, plan_bw, &cfg)?.strategy,
        };
        let evaluation = evaluate_strategy(g, &strategy, plan_bw, &cfg);

        let stream_samples = match &self.stream {
            Some(src) => Some(src.load(base, self.seed)?),
            None => None,
        };
        let times = self.arrival_times(stream_samples.as_ref().map(Vec::len))?;
        if let Some(s) = &stream_samples {
            if s.len() < times.len() {
                return Err(Error::Invalid(format!(
                    "stream has {} samples for {} arrivals",
                    s.len(),
                    times.len()
                )));
            }
        }
        let tasks = times
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let sample = stream_samples.as_ref().map(|s| &s[i]);
                TaskSpec {
                    arrival_ms: t,
                    feature: sample.map(|s| gap(&s.tensor)),
                    label: sample.map(|s| s.label),
                }
            })
            .collect();
        let stream = TaskStream::new(tasks)?;

        let mut scheduler = match &self.online {
            Some(o) if o.enabled => Some(self.scheduler(o, base, &profile, &strategy, &cfg)?),
            _ => None,
        };
        let report = simulate(g, &strategy, &stream, &trace, scheduler.as_mut())?;
        let bubbles = bubble_report(&report);
        Ok(Outcome {
            thresholds: scheduler.map(|s| s.thresholds),
            profile,
            strategy,
            evaluation,
            report,
            bubbles,
        })
    }

    fn scheduler(
        &self,
        o: &OnlineConfig,
        base: &Path,
        profile: &Profile,
        strategy: &PartitionStrategy,
        cfg: &OptimizerConfig,
    ) -> Result<OnlineScheduler> {
        let src = o
            .calibration
            .as_ref()
            .ok_or_else(|| Error::Invalid("online scheduling needs a calibration set".into()))?;
        let samples = src.load(base, self.seed + 1)?;
        let range = match (o.range, strategy.cuts().first()) {
            (Some(r), _) => r,
            (None, Some(c)) => profile.graph.layer(c.layer).output_range,
            (None, None) => (0.0, 1.0),
        };
        let (cache, thresholds) = match &o.thresholds {
            Some(p) => (warm_cache(&samples)?, load_thresholds(&base.join(p))?),
            None => calibrate_samples(&samples, range, &cfg.precision_domain, cfg.epsilon)?,
        };
        let mut s = OnlineScheduler::new(cache, thresholds, cfg.precision_domain.clone());
        s.decision_cost_ms = o.decision_cost_ms;
        s.update_on_cloud_label = o.update_on_cloud_label;
        Ok(s)
    }
}

/// Loads and runs a scenario file.
pub fn run_scenario_file(path: &Path) -> Result<(ScenarioConfig, Outcome)> {
    let cfg = parse_scenario(&read_file(path)?, path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let outcome = cfg.run(base)?;
    Ok((cfg, outcome))
}
