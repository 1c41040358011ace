//! Experiment files, policy evaluation, parameter sweeps and their
//! CSV/JSON artifacts.
//!
//! An experiment file is TOML. The optional top-level `profile` key picks
//! the base constants (`full` or `desk`, default `full`); the `[system]`,
//! `[agent]`, `[train]` and `[eval]` tables override individual fields.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentHparams, Checkpoint, TrainedPolicy, TrainingRow};
use crate::baselines::{no_irs_config, run_episode, AoLitePolicy, EpisodeResult, NoIrsPolicy, Policy, RandomPolicy, TraceRow};
use crate::config::SystemConfig;
use crate::env::Env;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub episodes: usize,
    pub seed: u64,
    /// Write an intermediate checkpoint every this many episodes; 0 keeps
    /// only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self { episodes: 300, seed: 0, checkpoint_every: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Rounds of AO-lite coordinate ascent.
    pub ao_rounds: usize,
    /// Evaluation uses seeds `first_seed .. first_seed + num_seeds`, kept
    /// apart from the training seeds.
    pub first_seed: u64,
    pub num_seeds: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { ao_rounds: 3, first_seed: 1_000_000, num_seeds: 20 }
    }
}

impl EvalSettings {
    pub fn seeds(&self) -> Vec<u64> {
        (self.first_seed..self.first_seed + self.num_seeds as u64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub agent: AgentHparams,
    pub train: TrainSettings,
    pub eval: EvalSettings,
}

fn overlay<T: Serialize + DeserializeOwned>(base: &T, table: Option<toml::Value>, name: &str) -> Result<T> {
    let Some(table) = table else {
        return Ok(toml::Value::try_from(base)?.try_into()?);
    };
    let toml::Value::Table(over) = table else {
        return Err(Error::config(name, "must be a table"));
    };
    let mut merged = match toml::Value::try_from(base)? {
        toml::Value::Table(t) => t,
        _ => unreachable!("structs serialize to tables"),
    };
    for (k, v) in over {
        merged.insert(k, v);
    }
    toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| Error::config(name, e.message()))
}

impl ExperimentConfig {
    pub fn from_profile(name: &str) -> Result<Self> {
        let system = SystemConfig::by_profile(name).ok_or_else(|| Error::config("profile", format!("unknown profile `{name}`")))?;
        Ok(Self { system, agent: AgentHparams::default(), train: TrainSettings::default(), eval: EvalSettings::default() })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut root: toml::Table = text.parse()?;
        let profile = match root.remove("profile") {
            None => "full".to_string(),
            Some(toml::Value::String(s)) => s,
            Some(_) => return Err(Error::config("profile", "must be a string")),
        };
        let base = Self::from_profile(&profile)?;
        let system = overlay(&base.system, root.remove("system"), "system")?;
        let agent = overlay(&base.agent, root.remove("agent"), "agent")?;
        let train = overlay(&base.train, root.remove("train"), "train")?;
        let eval = overlay(&base.eval, root.remove("eval"), "eval")?;
        if let Some(k) = root.keys().next() {
            return Err(Error::config(k.clone(), "unknown top-level key"));
        }
        let out = Self { system, agent, train, eval };
        out.agent.validate()?;
        out.system.clone().resolved()?;
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    /// Copy with generated layouts and derived hyperparameters written out.
    pub fn resolved(&self) -> Result<Self> {
        let system = self.system.clone().resolved()?;
        let agent = self.agent.resolved(&system);
        Ok(Self { system, agent, train: self.train.clone(), eval: self.eval.clone() })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

/// Policies that can be evaluated side by side.
#[derive(Debug, Clone)]
pub enum PolicySpec {
    Random,
    NoIrs,
    AoLite { rounds: usize },
    Agent(Box<Checkpoint>),
}

impl PolicySpec {
    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::Random => "random",
            PolicySpec::NoIrs => "no_irs",
            PolicySpec::AoLite { .. } => "ao_lite",
            PolicySpec::Agent(_) => "agent",
        }
    }

    /// Builds a baseline by name; `agent` needs a checkpoint and is not
    /// accepted here.
    pub fn baseline(name: &str, ao_rounds: usize) -> Result<Self> {
        match name {
            "random" => Ok(PolicySpec::Random),
            "no_irs" => Ok(PolicySpec::NoIrs),
            "ao_lite" => Ok(PolicySpec::AoLite { rounds: ao_rounds }),
            other => Err(Error::config("policy", format!("unknown baseline `{other}`"))),
        }
    }

    /// The environment config this policy runs under.
    pub fn env_config(&self, cfg: &SystemConfig) -> SystemConfig {
        match self {
            PolicySpec::NoIrs => no_irs_config(cfg),
            _ => cfg.clone(),
        }
    }

    /// Fails if a trained agent was trained on a different configuration.
    pub fn check(&self, cfg: &SystemConfig) -> Result<()> {
        match self {
            PolicySpec::Agent(ckpt) => ckpt.verify(cfg),
            _ => Ok(()),
        }
    }

    fn instantiate(&self, episode_seed: u64) -> Box<dyn Policy> {
        match self {
            // Decorrelated from the channel stream of the same seed.
            PolicySpec::Random => Box::new(RandomPolicy::new(episode_seed ^ 0x005E_ED0F_0A11_CE55)),
            PolicySpec::NoIrs => Box::new(NoIrsPolicy::new()),
            PolicySpec::AoLite { rounds } => Box::new(AoLitePolicy::new(*rounds)),
            PolicySpec::Agent(ckpt) => Box::new(TrainedPolicy::from_checkpoint(ckpt)),
        }
    }
}

/// Per-seed evaluation metrics. Energies in joules, EE in bits per joule,
/// rates in bits per second, powers in dBm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub policy: String,
    pub seed: u64,
    pub ee_lb: f64,
    pub bits_total: f64,
    pub energy_ub: f64,
    pub mean_sum_rate: f64,
    pub max_pu_intf_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub policy: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Runs one episode per seed and returns the metrics and traces. Episode
/// `seed` fixes the channels, so policies evaluated on the same seeds are
/// paired. A trained agent runs under whatever `cfg` says; use
/// [`PolicySpec::check`] to insist on its training configuration.
pub fn evaluate(cfg: &SystemConfig, spec: &PolicySpec, seeds: &[u64]) -> Result<Vec<(EvalRecord, EpisodeResult)>> {
    if seeds.is_empty() {
        return Err(Error::config("seeds", "need at least one evaluation seed"));
    }
    let mut env = Env::new(spec.env_config(cfg))?;
    seeds
        .iter()
        .map(|&seed| {
            let mut policy = spec.instantiate(seed);
            let res = run_episode(&mut env, policy.as_mut(), seed)?;
            let rec = EvalRecord {
                policy: spec.name().to_string(),
                seed,
                ee_lb: res.ee_lb,
                bits_total: res.ledger.bits_total,
                energy_ub: res.ledger.e_ub_j,
                mean_sum_rate: res.mean_sum_rate,
                max_pu_intf_dbm: res.max_pu_interference_dbm,
            };
            Ok((rec, res))
        })
        .collect()
}

/// Sample mean and standard deviation (n − 1 denominator; 0 for one value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn aggregate(records: &[EvalRecord]) -> Vec<AggregateRow> {
    let mut policies: Vec<&str> = Vec::new();
    for r in records {
        if !policies.contains(&r.policy.as_str()) {
            policies.push(&r.policy);
        }
    }
    type Metric = (&'static str, fn(&EvalRecord) -> f64);
    let metrics: [Metric; 5] = [
        ("ee_lb", |r| r.ee_lb),
        ("bits_total", |r| r.bits_total),
        ("energy_ub", |r| r.energy_ub),
        ("mean_sum_rate", |r| r.mean_sum_rate),
        ("max_pu_intf_dbm", |r| r.max_pu_intf_dbm),
    ];
    let mut out = Vec::new();
    for p in policies {
        let rows: Vec<&EvalRecord> = records.iter().filter(|r| r.policy == p).collect();
        for (name, f) in metrics {
            let xs: Vec<f64> = rows.iter().map(|r| f(r)).collect();
            let (mean, std) = mean_std(&xs);
            out.push(AggregateRow { policy: p.to_string(), metric: name.to_string(), mean, std, n: xs.len() });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    PMaxDbm,
    MissionSeconds,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::PMaxDbm => "p_max_dbm",
            SweepAxis::MissionSeconds => "mission_seconds",
        }
    }

    /// Config with the axis set to `value`. Mission time changes the slot
    /// count at fixed slot length.
    pub fn apply(self, cfg: &SystemConfig, value: f64) -> Result<SystemConfig> {
        let mut c = cfg.clone();
        match self {
            SweepAxis::PMaxDbm => c.p_max_dbm = value,
            SweepAxis::MissionSeconds => {
                let n = value / c.slot_seconds;
                if !(n >= 1.0 && (n - n.round()).abs() < 1e-9) {
                    return Err(Error::config("mission_seconds", format!("{value} is not a positive multiple of the slot length")));
                }
                c.num_slots = n.round() as usize;
            }
        }
        Ok(c)
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p_max_dbm" => Ok(SweepAxis::PMaxDbm),
            "mission_seconds" => Ok(SweepAxis::MissionSeconds),
            other => Err(Error::config("axis", format!("unknown axis `{other}`; expected p_max_dbm or mission_seconds"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub policy: String,
    pub axis: String,
    pub value: f64,
    pub seed: u64,
    pub sum_rate: f64,
    pub ee_lb: f64,
}

/// One row per (policy, axis value, seed). A trained agent is checked
/// against `cfg` before the axis is applied.
pub fn sweep(cfg: &SystemConfig, axis: SweepAxis, values: &[f64], policies: &[PolicySpec], seeds: &[u64]) -> Result<Vec<SweepRow>> {
    if values.len() < 2 {
        return Err(Error::config("values", "a sweep needs at least two axis values"));
    }
    let mut rows = Vec::new();
    for spec in policies {
        spec.check(cfg)?;
        for &v in values {
            let swept = axis.apply(cfg, v)?;
            for (rec, res) in evaluate(&swept, spec, seeds)? {
                rows.push(SweepRow {
                    policy: spec.name().to_string(),
                    axis: axis.as_str().to_string(),
                    value: v,
                    seed: rec.seed,
                    sum_rate: res.mean_sum_rate,
                    ee_lb: rec.ee_lb,
                });
            }
        }
    }
    Ok(rows)
}

pub const TRAINING_HEADER: &str =
    "episode,return,ee_lb,bits_total,energy_ub,mean_g1,mean_g2,mean_g3,mean_g4,mean_g5,mean_g6,epsilon,alpha";
pub const TRACE_HEADER: &str = "slot,sum_rate,e_prop,g1,g2,g3,g4,g5,g6,reward,qx,qy,qz,speed,pu_intf_max_dbm";
pub const EVAL_HEADER: &str = "policy,seed,ee_lb,bits_total,energy_ub,mean_sum_rate,max_pu_intf_dbm";
pub const AGGREGATE_HEADER: &str = "policy,metric,mean,std,n";
pub const SWEEP_HEADER: &str = "policy,axis,value,seed,sum_rate,ee_lb";

/// Serializes rows with a header line; an empty slice yields `header` alone.
pub fn csv_string<T: Serialize>(rows: &[T], header: &str) -> Result<String> {
    if rows.is_empty() {
        return Ok(format!("{header}\n"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &str) -> Result<()> {
    fs::write(path, csv_string(rows, header)?)?;
    Ok(())
}

pub fn training_csv(rows: &[TrainingRow]) -> Result<String> {
    csv_string(rows, TRAINING_HEADER)
}

pub fn trace_csv(rows: &[TraceRow]) -> Result<String> {
    csv_string(rows, TRACE_HEADER)
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, serde_json::to_vec(ckpt)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}
