use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wla_core::config::{load_config, Format, Kind};
use wla_core::harness::{default_output_dir, preset_config, preset_names, run_experiment};
use wla_core::Result;

/// Resilient consensus and clock synchronization experiments.
#[derive(Parser)]
#[command(name = "wla", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Run a shipped preset (`wla preset --list` to see them).
    Preset {
        #[arg(required_unless_present = "list")]
        name: Option<String>,
        /// Print the preset names and exit.
        #[arg(long)]
        list: bool,
        /// Print the preset's config instead of running it.
        #[arg(long)]
        show: bool,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Run a fault-probability sweep config.
    Sweep {
        config: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
}

#[derive(Args)]
struct RunOpts {
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: $WLA_OUT_DIR/<name> or wla-out/<name>].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Export format: csv or json.
    #[arg(long)]
    format: Option<Format>,
    /// Worker threads for replicas (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Steps at which to export weight matrices, comma separated.
    #[arg(long, value_delimiter = ',')]
    snapshot_steps: Option<Vec<usize>>,
}

fn run_loaded(
    loaded: wla_core::config::LoadedConfig,
    name: &str,
    opts: RunOpts,
    preset: Option<&str>,
    expect: Option<Kind>,
) -> Result<()> {
    for w in &loaded.warnings {
        log::warn!("{w}");
    }
    let cfg = loaded
        .config
        .with_overrides(opts.seed, opts.snapshot_steps, opts.format)?;
    for w in cfg.warnings.iter().filter(|w| !loaded.warnings.contains(w)) {
        log::warn!("{w}");
    }
    let cfg = cfg.config;
    if let Some(kind) = expect {
        if cfg.kind() != kind {
            return Err(wla_core::Error::Argument(format!(
                "`sweep` needs a config with kind = \"sweep\", got {:?}",
                cfg.kind()
            )));
        }
    }
    let out = opts.out.unwrap_or_else(|| default_output_dir().join(name));
    let (_, manifest) = run_experiment(&cfg, &out, opts.jobs, preset)?;
    println!("{}", out.display());
    for file in &manifest.outputs {
        println!("  {} ({} bytes)", file.path, file.bytes);
    }
    println!("  manifest.json  outputs digest {}", manifest.outputs_digest);
    Ok(())
}

fn stem(path: &std::path::Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, opts } => {
            load_config(&config).and_then(|loaded| run_loaded(loaded, &stem(&config), opts, None, None))
        }
        Command::Sweep { config, opts } => load_config(&config)
            .and_then(|loaded| run_loaded(loaded, &stem(&config), opts, None, Some(Kind::Sweep))),
        Command::Preset { name, list, show, opts } => {
            if list {
                for n in preset_names() {
                    println!("{n}");
                }
                Ok(())
            } else {
                let name = name.expect("clap requires a name without --list");
                if show {
                    wla_core::harness::preset_text(&name).map(|t| print!("{t}"))
                } else {
                    preset_config(&name).and_then(|loaded| run_loaded(loaded, &name, opts, Some(&name), None))
                }
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
