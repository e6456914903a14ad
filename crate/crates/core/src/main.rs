use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use prefdrive::agent::Td3;
use prefdrive::harness::dense::{self, DenseEpisode, DenseEvalPlan};
use prefdrive::harness::qualitative::{self, DEFAULT_SCENARIO};
use prefdrive::harness::serve::{ServeConfig, Server, Speed};
use prefdrive::harness::sweep::{self, SweepEpisode, SweepPlan};
use prefdrive::harness::{load_policy, write_json, RunConfig, Trainer};
use prefdrive::metrics::{EpisodeLog, PenaltyTable};
use prefdrive::reward::RewardParams;
use prefdrive::world::WorldConfig;
use serde::de::DeserializeOwned;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "prefdrive", version, about = "Preference-conditioned driving agent: training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent, or resume an interrupted run.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory; defaults to `<output_dir>/seed_<seed>` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue the run in `--out` from its last checkpoint.
        #[arg(long, requires = "out")]
        resume: bool,
        /// Overrides `train.total_steps`.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Vary one preference weight at a time and test driving-style differences.
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        /// TOML sweep plan; defaults to the 480-episode plan.
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Run config supplying reward parameters.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write every step of every episode.
        #[arg(long)]
        save_logs: bool,
    },
    /// Evaluate checkpoints over the 540-point preference grid and the fixed scenarios.
    DenseEval {
        #[arg(long, required = true, num_args = 1..)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// One-hot preference rollouts on a fixed scenario, exported per meter.
    Qualitative {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SCENARIO)]
        scenario: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stream live rollouts over WebSocket with runtime preference control.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// `real`, `max` or `xN`.
        #[arg(long, default_value = "real")]
        speed: Speed,
        #[arg(long, default_value_t = 1)]
        scenario: u32,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Exit after this many environment steps.
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Recompute a report from persisted per-episode JSON lines.
    Aggregate {
        #[arg(value_enum)]
        kind: ReportKind,
        input: PathBuf,
    },
    /// Print the default reward parameters.
    DumpParams {
        #[arg(long, value_enum, default_value_t = Format::Toml)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportKind {
    Sweep,
    Dense,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Toml,
    Json,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train {
            config,
            seed,
            out,
            resume,
            steps,
        } => train(config, seed, out, resume, steps),
        Command::Sweep {
            checkpoint,
            plan,
            config,
            out,
            save_logs,
        } => run_sweep(&checkpoint, plan, config, &out, save_logs),
        Command::DenseEval {
            checkpoint,
            plan,
            config,
            out,
        } => run_dense(&checkpoint, plan, config, &out),
        Command::Qualitative {
            checkpoint,
            scenario,
            seed,
            config,
            out,
        } => run_qualitative(&checkpoint, scenario, seed, config, &out),
        Command::Serve {
            checkpoint,
            port,
            host,
            speed,
            scenario,
            config,
            max_steps,
        } => serve(&checkpoint, &host, port, speed, scenario, config, max_steps),
        Command::Aggregate { kind, input } => aggregate(kind, &input),
        Command::DumpParams { format } => {
            let p = RewardParams::default();
            match format {
                Format::Toml => print!("{}", toml::to_string(&p)?),
                Format::Json => println!("{}", serde_json::to_string_pretty(&p)?),
            }
            Ok(())
        }
    }
}

fn train(config: Option<PathBuf>, seed: Option<u64>, out: Option<PathBuf>, resume: bool, steps: Option<u64>) -> Result<()> {
    let mut trainer = if resume {
        let dir = out.expect("clap enforces --out with --resume");
        Trainer::resume(&dir, steps).with_context(|| format!("resuming {}", dir.display()))?
    } else {
        let Some(path) = config else {
            bail!("--config is required unless --resume is given");
        };
        let mut cfg = RunConfig::load(&path)?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(n) = steps {
            cfg.train.total_steps = n;
        }
        cfg.validate()?;
        let dir = out.unwrap_or_else(|| cfg.run_dir());
        Trainer::create(cfg, &dir)?
    };
    let total = trainer.config().train.total_steps;
    eprintln!("training to {total} steps (at {})", trainer.env_steps());
    trainer.run()?;
    eprintln!("done: {} steps", trainer.env_steps());
    Ok(())
}

/// Reward parameters, penalties and world settings from an optional run config.
fn context(config: Option<PathBuf>) -> Result<(RewardParams, PenaltyTable, WorldConfig)> {
    Ok(match config {
        Some(p) => {
            let c = RunConfig::load(&p)?;
            (c.reward, c.penalties, c.world)
        }
        None => Default::default(),
    })
}

fn load_toml<T: DeserializeOwned + Default>(path: Option<PathBuf>) -> Result<T> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
        None => Ok(T::default()),
    }
}

fn jsonl_writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_line<T: serde::Serialize>(w: &mut impl Write, v: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, v)?;
    writeln!(w)?;
    Ok(())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?);
        }
    }
    Ok(out)
}

fn run_sweep(checkpoint: &Path, plan: Option<PathBuf>, config: Option<PathBuf>, out: &Path, save_logs: bool) -> Result<()> {
    let agent = load_policy(checkpoint)?;
    let plan: SweepPlan = load_toml(plan)?;
    let (reward, _, _) = context(config)?;
    fs::create_dir_all(out)?;
    let mut episodes = jsonl_writer(&out.join("sweep_episodes.jsonl"))?;
    let mut logs = if save_logs {
        Some(jsonl_writer(&out.join("sweep_logs.jsonl"))?)
    } else {
        None
    };
    let total = plan.total_episodes();
    let mut done = 0;
    let records = sweep::run_sweep(&agent, &reward, &plan, |_, log: &EpisodeLog| {
        if let Some(w) = logs.as_mut() {
            log.write_jsonl(w).map_err(|e| prefdrive::harness::HarnessError::Io {
                path: "sweep_logs.jsonl".into(),
                source: e,
            })?;
        }
        done += 1;
        if done % 40 == 0 {
            eprintln!("{done}/{total} episodes");
        }
        Ok(())
    })?;
    for r in &records {
        write_line(&mut episodes, r)?;
    }
    episodes.flush()?;
    if let Some(mut w) = logs {
        w.flush()?;
    }
    let report = sweep::aggregate(&records);
    write_json(&out.join("sweep_report.json"), &report)?;
    fs::write(out.join("sweep_report.txt"), report.to_text())?;
    print!("{}", report.to_text());
    Ok(())
}

fn run_dense(checkpoints: &[PathBuf], plan: Option<PathBuf>, config: Option<PathBuf>, out: &Path) -> Result<()> {
    let agents: Vec<Td3> = checkpoints.iter().map(|p| load_policy(p)).collect::<Result<_, _>>()?;
    let plan: DenseEvalPlan = load_toml(plan)?;
    let (reward, penalties, _) = context(config)?;
    fs::create_dir_all(out)?;
    let mut w = jsonl_writer(&out.join("dense_episodes.jsonl"))?;
    let episodes = dense::run_dense_eval(&agents, &reward, &penalties, &plan, |e| {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n").map_err(|source| prefdrive::harness::HarnessError::Io {
            path: "dense_episodes.jsonl".into(),
            source,
        })
    })?;
    w.flush()?;
    let Some(report) = dense::aggregate(&episodes) else {
        bail!("the plan produced no episodes");
    };
    write_json(&out.join("dense_report.json"), &report)?;
    fs::write(out.join("dense_report.txt"), report.to_text())?;
    print!("{}", report.to_text());
    Ok(())
}

fn run_qualitative(checkpoint: &Path, scenario: u32, seed: u64, config: Option<PathBuf>, out: &Path) -> Result<()> {
    let agent = load_policy(checkpoint)?;
    let (reward, _, world) = context(config)?;
    fs::create_dir_all(out)?;
    for run in qualitative::run_qualitative(&agent, &reward, &world, scenario, seed)? {
        let path = out.join(format!("qualitative_{}.json", run.name));
        write_json(&path, &run)?;
        println!(
            "{:<10} peak v {:6.2} m/s  peak |a_lat| {:6.2} m/s²  completion {:5.1}%  {:?}",
            run.name,
            run.peak_velocity,
            run.peak_abs_lateral_acceleration,
            100.0 * run.route_completion,
            run.termination
        );
    }
    Ok(())
}

fn serve(
    checkpoint: &Path,
    host: &str,
    port: u16,
    speed: Speed,
    scenario: u32,
    config: Option<PathBuf>,
    max_steps: Option<u64>,
) -> Result<()> {
    let agent = load_policy(checkpoint)?;
    let (reward, _, world) = context(config)?;
    let cfg = ServeConfig {
        scenario,
        speed,
        world,
        reward,
        max_steps,
        ..ServeConfig::default()
    };
    let server = Server::start(agent, cfg, &format!("{host}:{port}"))?;
    eprintln!("serving on ws://{}", server.addr());
    server.wait()?;
    Ok(())
}

fn aggregate(kind: ReportKind, input: &Path) -> Result<()> {
    match kind {
        ReportKind::Sweep => {
            let eps: Vec<SweepEpisode> = read_jsonl(input)?;
            let report = sweep::aggregate(&eps);
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        ReportKind::Dense => {
            let eps: Vec<DenseEpisode> = read_jsonl(input)?;
            let Some(report) = dense::aggregate(&eps) else {
                bail!("{} holds no episodes", input.display());
            };
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}
