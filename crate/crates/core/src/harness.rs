//! Running experiments end to end: execute, export, write a manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::clock::{run_clock, ClockTrace};
use crate::config::{parse_config, Experiment, ExperimentConfig, Format, Kind, LoadedConfig};
use crate::consensus::{run, run_replicas, sweep_fault_probability, ReplicaSummary, SimTrace, SweepPoint};
use crate::error::{Error, Result};
use crate::export::{self, OutputSet, RunManifest};
use crate::rng::GENERATOR_NAME;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "WLA_OUT_DIR";

/// `$WLA_OUT_DIR`, or `wla-out` in the working directory.
pub fn default_output_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("wla-out"))
}

const PRESETS: &[(&str, &str)] = &[
    ("fig2-pfn", include_str!("../presets/fig2-pfn.toml")),
    ("fig2-ifn", include_str!("../presets/fig2-ifn.toml")),
    ("fig2-mixed", include_str!("../presets/fig2-mixed.toml")),
    ("fig3-sweep", include_str!("../presets/fig3-sweep.toml")),
    ("fig4-stochastic", include_str!("../presets/fig4-stochastic.toml")),
    ("table1-weights", include_str!("../presets/table1-weights.toml")),
    ("clock-fig6-nowla", include_str!("../presets/clock-fig6-nowla.toml")),
    ("clock-fig7-wla", include_str!("../presets/clock-fig7-wla.toml")),
    ("stress-1000", include_str!("../presets/stress-1000.toml")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(name, _)| *name)
}

/// The shipped TOML text of a preset.
pub fn preset_text(name: &str) -> Result<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
        .ok_or_else(|| Error::UnknownPreset(name.to_string()))
}

pub fn preset_config(name: &str) -> Result<LoadedConfig> {
    parse_config(preset_text(name)?, format!("<preset {name}>"))
}

/// What an experiment produced.
#[derive(Clone, Debug, PartialEq)]
pub enum RunResult {
    /// Replica 0 in full plus a summary of every replica.
    Consensus {
        trace: SimTrace,
        replicas: Vec<ReplicaSummary>,
    },
    Sweep(Vec<SweepPoint>),
    Clock(ClockTrace),
}

/// Runs the experiment. `jobs` bounds replica parallelism (0 = all cores).
pub fn execute(cfg: &ExperimentConfig, jobs: usize) -> Result<RunResult> {
    match &cfg.experiment {
        Experiment::Consensus(c) => {
            let trace = run(&c.sim)?;
            let replicas = if c.replicas == 1 {
                let count = trace.convergence_count(c.threshold);
                vec![ReplicaSummary {
                    replica: 0,
                    convergence_count: count,
                    converged: trace.disagreement[count] < c.threshold,
                    final_disagreement: *trace.disagreement.last().expect("nonempty"),
                }]
            } else {
                run_replicas(&c.sim, c.replicas, c.threshold, jobs)?
            };
            Ok(RunResult::Consensus { trace, replicas })
        }
        Experiment::Sweep(s) => Ok(RunResult::Sweep(sweep_fault_probability(s, jobs)?)),
        Experiment::Clock(c) => Ok(RunResult::Clock(run_clock(c)?)),
    }
}

/// The export files for a result, named as they are written.
pub fn outputs(cfg: &ExperimentConfig, result: &RunResult) -> Result<OutputSet> {
    let mut set = OutputSet::new();
    set.add("config.toml", cfg.to_toml()?.into_bytes());
    let json = cfg.format() == Format::Json;
    match result {
        RunResult::Consensus { trace, replicas } => {
            if json {
                set.add("trace.json", export::trace_json(trace)?);
                set.add("replicas.json", export::replicas_json(replicas)?);
            } else {
                set.add("trace.csv", export::trace_csv(trace)?);
                set.add("replicas.csv", export::replicas_csv(replicas)?);
            }
            for (k, m) in &trace.snapshots {
                if json {
                    set.add(format!("weights_k{k}.json"), export::weights_json(*k, m)?);
                } else {
                    set.add(format!("weights_k{k}.csv"), export::weights_csv(*k, m)?);
                }
            }
        }
        RunResult::Sweep(points) => {
            if json {
                set.add("sweep.json", export::sweep_json(points)?);
            } else {
                set.add("sweep.csv", export::sweep_csv(points)?);
            }
        }
        RunResult::Clock(trace) => {
            if json {
                set.add("clock_trace.json", export::clock_json(trace)?);
            } else {
                set.add("clock_trace.csv", export::clock_trace_csv(trace)?);
                set.add("clock_disagreement.csv", export::clock_disagreement_csv(trace)?);
            }
            for (label, snaps) in [("skew", &trace.skew_snapshots), ("offset", &trace.offset_snapshots)] {
                for (k, m) in snaps {
                    if json {
                        set.add(format!("{label}_weights_k{k}.json"), export::weights_json(*k, m)?);
                    } else {
                        set.add(format!("{label}_weights_k{k}.csv"), export::weights_csv(*k, m)?);
                    }
                }
            }
        }
    }
    Ok(set)
}

/// Executes `cfg`, writes its exports to `out_dir`, then the manifest.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    jobs: usize,
    preset: Option<&str>,
) -> Result<(RunResult, RunManifest)> {
    let started = Instant::now();
    let result = execute(cfg, jobs)?;
    let files = outputs(cfg, &result)?.commit(out_dir)?;
    let manifest = RunManifest {
        tool: "wla".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        generator: GENERATOR_NAME.into(),
        kind: match cfg.kind() {
            Kind::Consensus => "consensus",
            Kind::Sweep => "sweep",
            Kind::Clock => "clock",
        }
        .into(),
        preset: preset.map(str::to_string),
        seed: cfg.seed(),
        config_digest: cfg.digest()?,
        duration_secs: started.elapsed().as_secs_f64(),
        outputs_digest: export::outputs_digest(&files),
        outputs: files,
    };
    export::write_manifest(out_dir, &manifest)?;
    log::info!(
        "wrote {} files to {} in {:.2}s",
        manifest.outputs.len() + 1,
        out_dir.display(),
        manifest.duration_secs
    );
    Ok((result, manifest))
}

/// Runs a shipped preset, optionally with another seed. Output goes to
/// `out_dir`, or `<default output dir>/<name>`.
pub fn run_preset(name: &str, seed: Option<u64>, out_dir: Option<&Path>, jobs: usize) -> Result<RunManifest> {
    let loaded = preset_config(name)?;
    let cfg = match seed {
        Some(_) => loaded.config.with_overrides(seed, None, None)?.config,
        None => loaded.config,
    };
    let dir = out_dir.map(Path::to_path_buf).unwrap_or_else(|| default_output_dir().join(name));
    Ok(run_experiment(&cfg, &dir, jobs, Some(name))?.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_loads_cleanly() {
        for name in preset_names() {
            let loaded = preset_config(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(loaded.warnings.is_empty(), "{name}: {:?}", loaded.warnings);
        }
    }

    #[test]
    fn unknown_preset() {
        assert!(matches!(preset_config("fig9"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn presets_round_trip() {
        for name in preset_names() {
            let loaded = preset_config(name).unwrap();
            let again = parse_config(&loaded.config.to_toml().unwrap(), "again").unwrap();
            assert_eq!(loaded.config, again.config, "{name}");
        }
    }
}
