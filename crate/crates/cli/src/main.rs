use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use uavirs::agent::Trainer;
use uavirs::experiment::{
    aggregate, evaluate, load_checkpoint, save_checkpoint, sweep, trace_csv, training_csv, write_csv, ExperimentConfig, PolicySpec,
    SweepAxis, AGGREGATE_HEADER, EVAL_HEADER, SWEEP_HEADER,
};

/// Train and evaluate energy-efficient UAV/IRS downlink controllers.
#[derive(Debug, Parser)]
#[command(name = "uavirs", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the hybrid agent and write its report, checkpoint and resolved config.
    Train(TrainArgs),
    /// Evaluate baselines or a trained checkpoint on paired seeds.
    Eval(EvalArgs),
    /// Sweep one system parameter for several policies.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, env = "UAVIRS_OUT", default_value = "runs")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    episodes: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated: random, no_irs, ao_lite, agent.
    #[arg(long, value_delimiter = ',', default_value = "random")]
    policy: Vec<String>,
    /// Checkpoint for the `agent` policy.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// `a..b` or a comma-separated list.
    #[arg(long)]
    seeds: Option<String>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// p_max_dbm or mission_seconds.
    #[arg(long)]
    axis: String,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "random")]
    policy: Vec<String>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    seeds: Option<String>,
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

type Outcome = Result<(), Failure>;

trait Classify<T> {
    fn usage(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }
    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    if !path.is_file() {
        return Err(Failure::Usage(anyhow!("config file not found: {}", path.display())));
    }
    ExperimentConfig::load(path).with_context(|| format!("invalid config {}", path.display())).usage()
}

fn parse_seeds(text: Option<&str>, cfg: &ExperimentConfig) -> anyhow::Result<Vec<u64>> {
    let Some(text) = text else {
        return Ok(cfg.eval.seeds());
    };
    let seeds: Vec<u64> = if let Some((a, b)) = text.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        (a..b).collect()
    } else {
        text.split(',').map(|s| s.trim().parse()).collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err(anyhow!("--seeds selects no seeds"));
    }
    Ok(seeds)
}

fn policies(names: &[String], checkpoint: Option<&Path>, cfg: &ExperimentConfig) -> Result<Vec<PolicySpec>, Failure> {
    names
        .iter()
        .map(|name| {
            if name == "agent" {
                let path = checkpoint.ok_or_else(|| Failure::Usage(anyhow!("policy `agent` needs --checkpoint")))?;
                let ckpt = load_checkpoint(path).with_context(|| format!("cannot read checkpoint {}", path.display())).usage()?;
                let spec = PolicySpec::Agent(Box::new(ckpt));
                spec.check(&cfg.system).context("checkpoint does not match --config").usage()?;
                Ok(spec)
            } else {
                PolicySpec::baseline(name, cfg.eval.ao_rounds).usage()
            }
        })
        .collect()
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display())).runtime()
}

fn run_train(args: TrainArgs) -> Outcome {
    let mut cfg = load_config(&args.common.config)?;
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    if let Some(n) = args.episodes {
        cfg.train.episodes = n;
    }
    let cfg = cfg.resolved().usage()?;
    let out = &args.common.out;
    create_dir(out)?;
    fs::write(out.join("config.resolved.toml"), cfg.to_toml_string().runtime()?).runtime()?;

    let mut trainer = Trainer::new(cfg.system.clone(), cfg.agent.clone(), cfg.train.episodes, cfg.train.seed).usage()?;
    while !trainer.is_finished() {
        let row = trainer.run_episode().runtime()?;
        let done = row.episode + 1;
        if done % 10 == 0 || done == cfg.train.episodes {
            eprintln!("episode {done}/{} return {:.4} ee_lb {:.4e}", cfg.train.episodes, row.episode_return, row.ee_lb);
        }
        if cfg.train.checkpoint_every > 0 && done % cfg.train.checkpoint_every == 0 && done < cfg.train.episodes {
            save_checkpoint(&out.join(format!("checkpoint_ep{done}.json")), &trainer.checkpoint()).runtime()?;
        }
    }
    fs::write(out.join("training.csv"), training_csv(trainer.report()).runtime()?).runtime()?;
    save_checkpoint(&out.join("checkpoint.json"), &trainer.checkpoint()).runtime()?;
    println!("wrote {}", out.display());
    Ok(())
}

fn run_eval(args: EvalArgs) -> Outcome {
    let cfg = load_config(&args.common.config)?;
    let seeds = parse_seeds(args.seeds.as_deref(), &cfg).usage()?;
    let specs = policies(&args.policy, args.checkpoint.as_deref(), &cfg)?;
    let out = &args.common.out;
    let traces = out.join("traces");
    create_dir(&traces)?;

    let mut records = Vec::new();
    for spec in &specs {
        for (rec, res) in evaluate(&cfg.system, spec, &seeds).runtime()? {
            let path = traces.join(format!("{}_seed{}.csv", rec.policy, rec.seed));
            fs::write(path, trace_csv(&res.trace).runtime()?).runtime()?;
            records.push(rec);
        }
    }
    write_csv(&out.join("eval.csv"), &records, EVAL_HEADER).runtime()?;
    let agg = aggregate(&records);
    write_csv(&out.join("aggregate.csv"), &agg, AGGREGATE_HEADER).runtime()?;
    for a in agg.iter().filter(|a| a.metric == "ee_lb") {
        println!("{:<8} ee_lb {:.6e} ± {:.3e} (n={})", a.policy, a.mean, a.std, a.n);
    }
    Ok(())
}

fn run_sweep(args: SweepArgs) -> Outcome {
    let cfg = load_config(&args.common.config)?;
    let axis: SweepAxis = args.axis.parse().usage()?;
    let seeds = parse_seeds(args.seeds.as_deref(), &cfg).usage()?;
    let specs = policies(&args.policy, args.checkpoint.as_deref(), &cfg)?;
    if args.values.len() < 2 {
        return Err(Failure::Usage(anyhow!("--values needs at least two entries")));
    }
    for &v in &args.values {
        axis.apply(&cfg.system, v).usage()?;
    }
    let out = &args.common.out;
    create_dir(out)?;
    let rows = sweep(&cfg.system, axis, &args.values, &specs, &seeds).runtime()?;
    let path = out.join("sweep.csv");
    write_csv(&path, &rows, SWEEP_HEADER).runtime()?;
    println!("wrote {} rows to {}", rows.len(), path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Sweep(a) => run_sweep(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
