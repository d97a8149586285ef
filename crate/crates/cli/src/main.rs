use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use lengthlab_core::experiment::{
    self, config_with_override, evaluate_run, export_frontier, write_frontier, RunManifest,
    RunOptions, RunStatus,
};
use lengthlab_core::LabError;

/// Length-control experiments on synthetic reasoning tasks.
#[derive(Parser)]
#[command(name = "lengthlab", version)]
struct Cli {
    /// Default output root for runs and sweeps.
    #[arg(long, env = "LENGTHLAB_OUT", default_value = "runs", global = true)]
    out_root: PathBuf,
    /// Worker threads (default: all cores). Does not change results.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the `seed` key.
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory (default: `<out-root>/<config stem>-seed<seed>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-evaluate a finished run on its held-out set.
    Eval {
        #[arg(long)]
        run: PathBuf,
    },
    /// One run per value of a configuration key.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
        /// Runs executed at once.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        /// Sweep root (default: `<out-root>/<config stem>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Collect finished runs into a length/accuracy frontier table.
    Analyze {
        /// Glob matching run directories.
        #[arg(long)]
        runs: String,
        #[arg(long)]
        out: PathBuf,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_IO: u8 = 4;

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<LabError>() {
        Some(LabError::Config { .. } | LabError::InvalidArgument(_)) => EXIT_CONFIG,
        Some(LabError::Divergence { .. }) => EXIT_DIVERGED,
        Some(LabError::Io(_) | LabError::Csv(_) | LabError::Json(_)) => EXIT_IO,
        Some(_) => 1,
        None if err.downcast_ref::<std::io::Error>().is_some() => EXIT_IO,
        None => EXIT_CONFIG,
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into())
}

fn read_config(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path)
        .map_err(LabError::from)
        .with_context(|| format!("reading {}", path.display()))
}

fn report(m: &RunManifest, dir: &Path) {
    match (&m.status, &m.final_eval) {
        (RunStatus::Completed, Some(r)) => println!(
            "{}  {}  accuracy={:.4} mean_length={:.2} entropy={:.3}",
            dir.display(),
            m.status.label(),
            r.accuracy,
            r.mean_length,
            r.answer_entropy
        ),
        (RunStatus::Diverged { step, detail }, _) => {
            println!("{}  diverged at step {step}: {detail}", dir.display())
        }
        _ => println!("{}  {}", dir.display(), m.status.label()),
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let text = read_config(&config)?;
            let cfg = match seed {
                Some(s) => config_with_override(&text, "seed", &s.to_string())?,
                None => lengthlab_core::TrainConfig::from_text(&text)?,
            };
            let dir = out.unwrap_or_else(|| {
                cli.out_root
                    .join(format!("{}-seed{}", stem(&config), cfg.seed))
            });
            let opts = RunOptions {
                threads: cli.threads,
                sweep: None,
            };
            let m = experiment::run_training(&cfg, &dir, &opts)?;
            report(&m, &dir);
            Ok(if matches!(m.status, RunStatus::Diverged { .. }) {
                EXIT_DIVERGED
            } else {
                0
            })
        }
        Command::Eval { run } => {
            let r = evaluate_run(&run)?;
            println!("{}", serde_json::to_string_pretty(&r.report)?);
            Ok(0)
        }
        Command::Sweep {
            config,
            axis,
            values,
            parallel,
            out,
        } => {
            let text = read_config(&config)?;
            let root = out.unwrap_or_else(|| cli.out_root.join(stem(&config)));
            let manifests = experiment::sweep(&text, &axis, &values, &root, parallel.max(1))?;
            let mut diverged = false;
            for (m, v) in manifests.iter().zip(&values) {
                report(m, &experiment::sweep_dir(&root, &axis, v));
                diverged |= matches!(m.status, RunStatus::Diverged { .. });
            }
            Ok(if diverged { EXIT_DIVERGED } else { 0 })
        }
        Command::Analyze { runs, out } => {
            let mut manifests = Vec::new();
            let paths = glob::glob(&runs)
                .map_err(|e| LabError::InvalidArgument(format!("bad glob: {e}")))?;
            for entry in paths {
                let path = entry.map_err(|e| LabError::Io(e.into()))?;
                let dir = if path.is_dir() {
                    path
                } else {
                    path.parent().map(Path::to_path_buf).unwrap_or_default()
                };
                if dir.join(experiment::MANIFEST_FILE).exists() {
                    manifests.push(RunManifest::load(&dir)?);
                }
            }
            if manifests.is_empty() {
                return Err(
                    LabError::InvalidArgument(format!("no run manifests match `{runs}`")).into(),
                );
            }
            let rows = export_frontier(&manifests);
            write_frontier(&out, &rows)?;
            println!("{} runs -> {}", rows.len(), out.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
