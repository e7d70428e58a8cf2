use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use splitpipe::error::{exit, read_file, write_file, Error, Result};
use splitpipe::features::{feature_set_to_text, generate, load_feature_set, Correlation, GeneratorSpec};
use splitpipe::profile::load_profile;
use splitpipe::report::{fmt6, metrics_text, strategy_text};
use splitpipe::scenario::{calibrate_samples, parse_scenario};
use splitpipe::strategy::{load_strategy, strategy_to_json};
use splitpipe::thresholds::thresholds_to_json;
use splitpipe_core::{brute_force_optimize, evaluate_strategy, optimize, OptimizerConfig, PrecisionDomain};

#[derive(Parser)]
#[command(name = "splitpipe", version, about = "Device/cloud split inference planner and pipeline simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Find the partition and cut precisions with the fewest pipeline bubbles.
    Optimize {
        model: PathBuf,
        /// Link bandwidth in Mbps.
        #[arg(long)]
        bw: f64,
        /// Write the strategy document here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Enumerate every strategy instead (small models only).
        #[arg(long)]
        exhaustive: bool,
        #[command(flatten)]
        opt: OptFlags,
    },
    /// Warm the semantic cache on a labelled feature set and fit thresholds.
    Calibrate {
        model: PathBuf,
        features: PathBuf,
        /// Quantization range `min,max`; defaults to the output range of `--layer`.
        #[arg(long, value_parser = parse_range)]
        range: Option<(f64, f64)>,
        /// Layer whose output range is used; defaults to the entry layer.
        #[arg(long)]
        layer: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        opt: OptFlags,
    },
    /// Run a scenario and write tasks.tsv, summary.txt and bubbles.txt.
    Simulate {
        scenario: PathBuf,
        /// Overrides the scenario's output_dir.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Generate a synthetic labelled feature stream.
    GenFeatures {
        #[arg(long)]
        labels: usize,
        #[arg(long)]
        channels: usize,
        #[arg(long, default_value_t = 1)]
        height: usize,
        #[arg(long, default_value_t = 1)]
        width: usize,
        #[arg(long)]
        separation: f64,
        #[arg(long, value_enum)]
        correlation: Correlation,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.5)]
        clip_spread: f64,
        #[arg(long, default_value_t = 1.0)]
        frame_noise: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a given strategy at a bandwidth.
    Report {
        model: PathBuf,
        strategy: PathBuf,
        #[arg(long)]
        bw: f64,
        #[command(flatten)]
        opt: OptFlags,
    },
}

#[derive(Args)]
struct OptFlags {
    /// Latency budget in ms; overrides the profile's.
    #[arg(long)]
    tmax: Option<f64>,
    /// Accuracy-loss limit.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Comma-separated candidate bit-widths.
    #[arg(long, value_delimiter = ',')]
    precisions: Option<Vec<u8>>,
}

impl OptFlags {
    fn config(&self, profile_t_max: Option<f64>) -> Result<OptimizerConfig> {
        let mut cfg = OptimizerConfig {
            t_max_ms: self.tmax.or(profile_t_max),
            ..OptimizerConfig::default()
        };
        if let Some(e) = self.epsilon {
            cfg.epsilon = e;
        }
        if let Some(p) = &self.precisions {
            cfg.precision_domain = PrecisionDomain::new(p.iter().copied())?;
        }
        Ok(cfg)
    }
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected `min,max`")?;
    let p = |x: &str| x.trim().parse::<f64>().map_err(|e| e.to_string());
    Ok((p(a)?, p(b)?))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Optimize { model, bw, out, exhaustive, opt } => {
            let profile = load_profile(&model)?;
            let cfg = opt.config(profile.t_max_ms)?;
            let plan = if exhaustive {
                brute_force_optimize(&profile.graph, bw, &cfg)?
            } else {
                optimize(&profile.graph, bw, &cfg)?
            };
            if let Some(p) = &out {
                write_file(p, &strategy_to_json(&profile.graph, &plan.strategy))?;
            }
            print!("{}", strategy_text(&profile.graph, &plan.strategy));
            print!("{}", metrics_text(&plan.metrics));
            println!("evaluations {}", plan.evaluations);
        }
        Command::Calibrate { model, features, range, layer, out, opt } => {
            let profile = load_profile(&model)?;
            let g = &profile.graph;
            let cfg = opt.config(profile.t_max_ms)?;
            let range = match (range, layer) {
                (Some(r), _) => r,
                (None, Some(id)) => {
                    let v = g.index_of(&id).ok_or_else(|| Error::Invalid(format!("unknown layer `{id}`")))?;
                    g.layer(v).output_range
                }
                (None, None) => g.layer(g.entry()).output_range,
            };
            let samples = load_feature_set(&features)?;
            let (_, thresholds) = calibrate_samples(&samples, range, &cfg.precision_domain, cfg.epsilon)?;
            emit(out.as_deref(), &thresholds_to_json(&thresholds))?;
        }
        Command::Simulate { scenario, out_dir } => {
            let cfg = parse_scenario(&read_file(&scenario)?, &scenario)?;
            let base = scenario.parent().unwrap_or(Path::new("."));
            let dir = match (out_dir, &cfg.output_dir) {
                (Some(d), _) => d,
                (None, Some(d)) => base.join(d),
                (None, None) => {
                    let stem = scenario.file_stem().unwrap_or_default().to_string_lossy();
                    PathBuf::from(format!("{stem}.out"))
                }
            };
            let outcome = cfg.run(base)?;
            outcome.write(&dir)?;
            let r = &outcome.report;
            println!("throughput_it_per_s {}", fmt6(r.steady_throughput_it_per_s));
            println!("mean_latency_ms {}", fmt6(r.mean_latency_ms()));
        }
        Command::GenFeatures {
            labels,
            channels,
            height,
            width,
            separation,
            correlation,
            count,
            seed,
            clip_spread,
            frame_noise,
            out,
        } => {
            let samples = generate(&GeneratorSpec {
                labels,
                channels,
                height,
                width,
                separation,
                correlation,
                count,
                clip_spread,
                frame_noise,
                seed,
            })?;
            emit(out.as_deref(), &feature_set_to_text(&samples))?;
        }
        Command::Report { model, strategy, bw, opt } => {
            let profile = load_profile(&model)?;
            let cfg = opt.config(profile.t_max_ms)?;
            let s = load_strategy(&strategy, &profile.graph)?;
            let e = evaluate_strategy(&profile.graph, &s, bw, &cfg);
            print!("{}", strategy_text(&profile.graph, &s));
            print!("{}", metrics_text(&e.metrics));
            match e.infeasible {
                None => println!("feasible yes"),
                Some(r) => println!("feasible no({})", r.code()),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = std::panic::catch_unwind(|| run(cli));
    let code = match result {
        Ok(Ok(())) => exit::OK,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
        // The panic message is already on stderr.
        Err(_) => exit::INTERNAL,
    };
    ExitCode::from(code as u8)
}
