//! Feature-set files and the synthetic Gaussian-cluster generator.
//!
//! One sample per line: `label C H W v_1 ... v_{C*H*W}`, values channel-major.
//! Blank lines and `#` comments are ignored.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;
use splitpipe_core::Tensor3;

use crate::error::{read_file, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub label: usize,
    pub tensor: Tensor3,
}

pub fn parse_feature_set(text: &str, origin: &Path) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::parse(origin, format!("line {}: {msg}", n + 1));
        let mut fields = line.split_whitespace();
        let mut int = || -> Result<usize> {
            fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| bad("expected `label C H W values...`"))
        };
        let (label, c, h, w) = (int()?, int()?, int()?, int()?);
        let values: Vec<f64> = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("value is not a number"))?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(bad("values must be finite"));
        }
        let tensor = Tensor3::new(c, h, w, values).map_err(|e| bad(&e.to_string()))?;
        out.push(Sample { label, tensor });
    }
    Ok(out)
}

pub fn load_feature_set(path: &Path) -> Result<Vec<Sample>> {
    parse_feature_set(&read_file(path)?, path)
}

pub fn feature_set_to_text(samples: &[Sample]) -> String {
    let mut s = String::new();
    for x in samples {
        let (c, h, w) = x.tensor.dims();
        write!(s, "{} {c} {h} {w}", x.label).unwrap();
        for v in x.tensor.data() {
            write!(s, " {v}").unwrap();
        }
        s.push('\n');
    }
    s
}

/// How long consecutive samples stay on one label and one clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Correlation {
    /// Independent frames.
    Low,
    /// Runs of about 5 frames.
    Medium,
    /// Runs of about 20 frames.
    High,
}

impl Correlation {
    pub fn mean_run_length(self) -> usize {
        match self {
            Correlation::Low => 1,
            Correlation::Medium => 5,
            Correlation::High => 20,
        }
    }
}

/// Parameters of a synthetic feature stream.
///
/// Label `j` has mean `1 + separation` on channels `c` with
/// `c % labels == j` and `1` elsewhere. Samples come in runs (clips) of one
/// label. Each run draws an anchor around the label mean with per-channel
/// spread `clip_spread`; each frame adds independent per-value noise
/// `frame_noise` to the anchor.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub labels: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub separation: f64,
    pub correlation: Correlation,
    pub count: usize,
    #[serde(default = "default_clip_spread")]
    pub clip_spread: f64,
    #[serde(default = "default_frame_noise")]
    pub frame_noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_clip_spread() -> f64 {
    0.5
}

fn default_frame_noise() -> f64 {
    1.0
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(format!("feature generator: {m}")));
        if self.labels < 2 {
            return bad("need at least 2 labels");
        }
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return bad("dimensions must be positive");
        }
        if self.count == 0 {
            return bad("count must be at least 1");
        }
        if !(self.separation >= 0.0 && self.clip_spread >= 0.0 && self.frame_noise >= 0.0) {
            return bad("separation and noise levels must be nonnegative");
        }
        Ok(())
    }

    pub fn label_mean(&self, label: usize, channel: usize) -> f64 {
        1.0 + if channel % self.labels == label { self.separation } else { 0.0 }
    }
}

/// Deterministic synthetic feature stream.
pub fn generate(spec: &GeneratorSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let clip = Normal::new(0.0, spec.clip_spread).map_err(|e| Error::Invalid(e.to_string()))?;
    let frame = Normal::new(0.0, spec.frame_noise).map_err(|e| Error::Invalid(e.to_string()))?;
    let plane = spec.height * spec.width;
    let mean_run = spec.correlation.mean_run_length();

    let mut out = Vec::with_capacity(spec.count);
    let mut label = rng.gen_range(0..spec.labels);
    while out.len() < spec.count {
        let run = if mean_run == 1 {
            1
        } else {
            rng.gen_range(mean_run / 2..=mean_run + mean_run / 2)
        };
        let anchor: Vec<f64> = (0..spec.channels)
            .map(|c| spec.label_mean(label, c) + clip.sample(&mut rng))
            .collect();
        for _ in 0..run.min(spec.count - out.len()) {
            let mut data = Vec::with_capacity(spec.channels * plane);
            for a in &anchor {
                data.extend((0..plane).map(|_| a + frame.sample(&mut rng)));
            }
            let tensor = Tensor3::new(spec.channels, spec.height, spec.width, data)?;
            out.push(Sample { label, tensor });
        }
        // Low correlation means independent frames, so the label may repeat.
        label = if mean_run == 1 {
            rng.gen_range(0..spec.labels)
        } else {
            (label + rng.gen_range(1..spec.labels)) % spec.labels
        };
    }
    Ok(out)
}

/// Mean length of maximal same-label runs.
pub fn mean_run_length(samples: &[Sample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let runs = 1 + samples.windows(2).filter(|w| w[0].label != w[1].label).count();
    samples.len() as f64 / runs as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(correlation: Correlation) -> GeneratorSpec {
        GeneratorSpec {
            labels: 4,
            channels: 8,
            height: 2,
            width: 2,
            separation: 3.0,
            correlation,
            count: 400,
            clip_spread: 0.5,
            frame_noise: 1.0,
            seed: 11,
        }
    }

    #[test]
    fn text_round_trip() {
        let samples = generate(&spec(Correlation::Medium)).unwrap();
        let text = feature_set_to_text(&samples);
        assert_eq!(parse_feature_set(&text, Path::new("f")).unwrap(), samples);
    }

    #[test]
    fn same_seed_same_stream() {
        let a = generate(&spec(Correlation::High)).unwrap();
        assert_eq!(a, generate(&spec(Correlation::High)).unwrap());
        let other = GeneratorSpec { seed: 12, ..spec(Correlation::High) };
        assert_ne!(a, generate(&other).unwrap());
    }

    #[test]
    fn run_lengths_follow_correlation() {
        let low = mean_run_length(&generate(&spec(Correlation::Low)).unwrap());
        let med = mean_run_length(&generate(&spec(Correlation::Medium)).unwrap());
        let high = mean_run_length(&generate(&spec(Correlation::High)).unwrap());
        assert!(low < 2.0, "{low}");
        assert!(low < med && med < high);
        assert!(high >= 10.0, "{high}");
    }

    #[test]
    fn zero_separation_means_coincide() {
        let s = GeneratorSpec { separation: 0.0, ..spec(Correlation::Low) };
        for c in 0..s.channels {
            assert_eq!(s.label_mean(0, c), s.label_mean(1, c));
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse_feature_set("0 1 1 1", Path::new("f")).is_err());
        assert!(parse_feature_set("0 1 2 1 1.0 x", Path::new("f")).is_err());
        assert!(parse_feature_set("x 1 1 1 1.0", Path::new("f")).is_err());
        assert!(generate(&GeneratorSpec { height: 0, ..spec(Correlation::Low) }).is_err());
        assert!(generate(&GeneratorSpec { count: 0, ..spec(Correlation::Low) }).is_err());
    }
}
