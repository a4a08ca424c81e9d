use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use resinsert::bench::{self, Controller, ExperimentSpec, Method};
use resinsert::control::scripted_demo;
use resinsert::persist::{load_run, write_demos};
use resinsert::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "resinsert", version, about = "Residual RL for connector insertion")]
struct Cli {
    /// Experiment spec (JSON); `bench` also accepts a list of specs.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the spec's seed list with a single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Train one experiment cell and evaluate it.
    Train,
    /// Evaluate a saved run (or the P-controller when no run is given).
    Eval {
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long, default_value_t = bench::DEFAULT_EVAL_ROLLOUTS)]
        rollouts: usize,
    },
    /// Record scripted demonstrations as JSON lines.
    DemoCollect {
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Train and evaluate a grid of cells.
    Bench {
        #[arg(long)]
        parallel: bool,
    },
    /// Learning curves from metrics CSVs.
    Plot {
        metrics: Vec<PathBuf>,
        #[arg(long, default_value = "learning curve")]
        title: String,
    },
}

fn read_spec(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentSpec> {
    let path = path.ok_or_else(|| Error::InvalidConfig("--config is required".into()))?;
    let mut spec: ExperimentSpec = serde_json::from_slice(&fs::read(path)?)?;
    if let Some(s) = seed {
        spec.seeds = vec![s];
    }
    spec.validate()?;
    Ok(spec)
}

fn read_grid(path: Option<&Path>, seed: Option<u64>) -> Result<Vec<ExperimentSpec>> {
    let path = path.ok_or_else(|| Error::InvalidConfig("--config is required".into()))?;
    let value: serde_json::Value = serde_json::from_slice(&fs::read(path)?)?;
    let mut specs: Vec<ExperimentSpec> = match value {
        serde_json::Value::Array(_) => serde_json::from_value(value)?,
        other => vec![serde_json::from_value(other)?],
    };
    for s in &mut specs {
        if let Some(seed) = seed {
            s.seeds = vec![seed];
        }
        s.validate()?;
    }
    Ok(specs)
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train => {
            let spec = read_spec(cli.config.as_deref(), cli.seed)?;
            fs::create_dir_all(&cli.out)?;
            let runs = bench::train(&spec, Some(&cli.out))?;
            for r in &runs {
                let report = bench::evaluate(
                    &r.controller,
                    &spec,
                    spec.options.eval_rollouts,
                    bench::eval_seed_for(r.seed),
                )?;
                let path = cli.out.join(format!("seed_{}", r.seed)).join("eval.json");
                fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")?;
                println!(
                    "seed {}: success {:.2}, mean final distance {:.5} m, first success episode {:?}",
                    r.seed,
                    report.success_rate,
                    report.mean_final_distance_m,
                    r.first_success_episode()
                );
            }
        }
        Cmd::Eval { run, rollouts } => {
            let (spec, controller) = match run {
                Some(dir) => {
                    let expected = match &cli.config {
                        Some(p) => Some(serde_json::from_slice(&fs::read(p)?)?),
                        None => None,
                    };
                    let loaded = load_run(&dir, expected.as_ref())?;
                    for w in &loaded.warnings {
                        eprintln!("warning: {w}");
                    }
                    let mut spec: ExperimentSpec = serde_json::from_value(loaded.manifest.spec.clone())?;
                    if let Some(s) = cli.seed {
                        spec.seeds = vec![s];
                    }
                    let controller = match loaded.agent {
                        Some(agent) => Controller::Agent {
                            agent,
                            residual: spec.method.is_residual(),
                        },
                        None => Controller::PController,
                    };
                    (spec, controller)
                }
                None => {
                    let spec = read_spec(cli.config.as_deref(), cli.seed)?;
                    if spec.method != Method::PControllerOnly {
                        return Err(Error::InvalidConfig("pass --run to evaluate a trained agent".into()));
                    }
                    (spec, Controller::PController)
                }
            };
            let seed = spec.seeds[0];
            let report = bench::evaluate(&controller, &spec, rollouts, bench::eval_seed_for(seed))?;
            println!(
                "{}: success {:.2} over {} rollouts, mean final distance {:.5} m",
                spec.cell_key(),
                report.success_rate,
                report.rollouts.len(),
                report.mean_final_distance_m
            );
            fs::create_dir_all(&cli.out)?;
            fs::write(cli.out.join("eval.json"), serde_json::to_string_pretty(&report)? + "\n")?;
        }
        Cmd::DemoCollect { count } => {
            let spec = read_spec(cli.config.as_deref(), cli.seed)?;
            let task = spec.task()?;
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seeds[0]);
            let mut all = Vec::new();
            for _ in 0..count {
                all.extend(scripted_demo(&task, spec.options.demo_jitter_std, &mut rng)?);
            }
            fs::create_dir_all(&cli.out)?;
            let path = cli.out.join("demos.jsonl");
            write_demos(&path, &all)?;
            println!(
                "wrote {} transitions from {count} demonstrations to {}",
                all.len(),
                path.display()
            );
        }
        Cmd::Bench { parallel } => {
            let specs = read_grid(cli.config.as_deref(), cli.seed)?;
            let (table, _) = bench::run_grid(&specs, Some(&cli.out), parallel)?;
            print!("{}", table.to_csv()?);
        }
        Cmd::Plot { metrics, title } => {
            let out = cli.out.join("curves").join("learning_curve.svg");
            let band = bench::plot(&metrics, &title, &out)?;
            println!("plotted {} episodes to {}", band.episodes.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
