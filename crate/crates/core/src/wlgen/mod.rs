//! Synthetic workload generation.
//!
//! Fault and benchmark tasks are generated as two independent streams, each
//! driven by its own duration and inter-arrival distributions, then merged
//! by timestamp. A probe workload with one short run of every command is
//! produced alongside, for checking that all commands work on the targets.

mod dist;

use std::fs;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dist::{fit_distribution, ks_statistic, DistributionSpec, FIT_KS_LIMIT};

use crate::model::{CoreSet, Task};
use crate::storage::{write_workload, StorageError};

/// Replaced in command templates by the task's drawn duration.
pub const DURATION_PLACEHOLDER: &str = "{duration}";
pub const WORKLOAD_FILE: &str = "workload.csv";
pub const PROBE_FILE: &str = "workload_probe.csv";

#[derive(Debug, Error)]
pub enum WlgenError {
    #[error("invalid generation spec: {0}")]
    Spec(String),
    #[error("cannot fit distribution: {0}")]
    Fit(String),
    #[error("cannot read generation spec {path}: {message}")]
    Load { path: PathBuf, message: String },
    #[error(transparent)]
    Storage(#[from] StorageError),
}

fn default_probability() -> f64 {
    1.0
}

fn default_probe_duration() -> u64 {
    5
}

mod core_list {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::model::{parse_core_list, CoreSet};

    pub fn serialize<S: Serializer>(cores: &Option<CoreSet>, s: S) -> Result<S::Ok, S::Error> {
        match cores {
            Some(c) => s.serialize_str(&c.to_string()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<CoreSet>, D::Error> {
        match Option::<String>::deserialize(d)? {
            None => Ok(None),
            Some(text) => parse_core_list(&text).map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandSpec {
    /// Command line; may contain `{duration}`.
    pub command: String,
    /// Relative selection weight within the command's class.
    #[serde(default = "default_probability")]
    pub probability: f64,
    #[serde(default, with = "core_list", skip_serializing_if = "Option::is_none")]
    pub cores: Option<CoreSet>,
    #[serde(default)]
    pub is_fault: bool,
}

impl CommandSpec {
    pub fn new(command: impl Into<String>, is_fault: bool) -> Self {
        CommandSpec {
            command: command.into(),
            probability: 1.0,
            cores: None,
            is_fault,
        }
    }

    fn render(&self, duration: u64) -> String {
        self.command
            .replace(DURATION_PLACEHOLDER, &duration.to_string())
    }

    fn task(&self, timestamp: u64, duration: u64) -> Task {
        Task {
            args: self.render(duration),
            timestamp,
            duration,
            is_fault: self.is_fault,
            seq_num: 0,
            cores: self.cores.clone(),
        }
    }
}

/// Recipe for a generated workload. A class (fault or benchmark) whose two
/// distributions are both absent produces no tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationSpec {
    /// Arrivals at or beyond this many seconds are not generated.
    pub span: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault_duration: Option<DistributionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault_interarrival: Option<DistributionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bench_duration: Option<DistributionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bench_interarrival: Option<DistributionSpec>,
    pub commands: Vec<CommandSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_probe_duration")]
    pub probe_duration: u64,
}

struct Class<'a> {
    name: &'static str,
    is_fault: bool,
    duration: &'a DistributionSpec,
    interarrival: &'a DistributionSpec,
    commands: Vec<&'a CommandSpec>,
    weights: WeightedIndex<f64>,
}

impl GenerationSpec {
    fn classes(&self) -> Result<Vec<Class<'_>>, WlgenError> {
        if self.span == 0 {
            return Err(WlgenError::Spec("span must be positive".into()));
        }
        if self.probe_duration == 0 {
            return Err(WlgenError::Spec("probe_duration must be positive".into()));
        }
        if self.commands.is_empty() {
            return Err(WlgenError::Spec("no commands given".into()));
        }
        for c in &self.commands {
            if !(c.probability.is_finite() && c.probability >= 0.0) {
                return Err(WlgenError::Spec(format!(
                    "command `{}` has invalid probability {}",
                    c.command, c.probability
                )));
            }
            if c.command.trim().is_empty() || c.command.contains([';', '\n', '\r']) {
                return Err(WlgenError::Spec(format!(
                    "command `{}` is empty or contains a delimiter",
                    c.command
                )));
            }
        }
        let pairs = [
            ("benchmark", false, &self.bench_duration, &self.bench_interarrival),
            ("fault", true, &self.fault_duration, &self.fault_interarrival),
        ];
        let mut classes = Vec::new();
        for (name, is_fault, duration, interarrival) in pairs {
            let (duration, interarrival) = match (duration, interarrival) {
                (None, None) => continue,
                (Some(d), Some(i)) => (d, i),
                _ => {
                    return Err(WlgenError::Spec(format!(
                        "{name} class needs both a duration and an inter-arrival distribution"
                    )))
                }
            };
            duration.check()?;
            interarrival.check()?;
            let commands: Vec<&CommandSpec> =
                self.commands.iter().filter(|c| c.is_fault == is_fault).collect();
            let weights = WeightedIndex::new(commands.iter().map(|c| c.probability)).map_err(|_| {
                WlgenError::Spec(format!("{name} commands have zero total probability"))
            })?;
            classes.push(Class {
                name,
                is_fault,
                duration,
                interarrival,
                commands,
                weights,
            });
        }
        Ok(classes)
    }
}

fn generate_class(class: &Class<'_>, span: u64, seed: u64) -> Vec<Task> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(class.is_fault));
    let mut tasks = Vec::new();
    let mut arrival = 0.0f64;
    while arrival < span as f64 {
        let duration = (class.duration.sample(&mut rng).round() as u64).max(1);
        let command = class.commands[class.weights.sample(&mut rng)];
        tasks.push(command.task(arrival.floor() as u64, duration));
        arrival += class.interarrival.sample(&mut rng);
    }
    log::debug!("generated {} {} tasks", tasks.len(), class.name);
    tasks
}

/// Builds the workload and its probe. Deterministic for a given spec.
pub fn generate_workload(spec: &GenerationSpec) -> Result<(Vec<Task>, Vec<Task>), WlgenError> {
    let classes = spec.classes()?;
    let mut tasks: Vec<Task> = classes
        .iter()
        .flat_map(|c| generate_class(c, spec.span, spec.seed))
        .collect();
    // Stable, so equal timestamps keep benchmark-before-fault and draw order.
    tasks.sort_by_key(|t| t.timestamp);
    for (i, t) in tasks.iter_mut().enumerate() {
        t.seq_num = i as u64 + 1;
    }
    Ok((tasks, probe_workload(spec)))
}

/// One short run of every distinct command, back to back.
pub fn probe_workload(spec: &GenerationSpec) -> Vec<Task> {
    let mut seen = std::collections::HashSet::new();
    spec.commands
        .iter()
        .filter(|c| seen.insert(c.command.as_str()))
        .enumerate()
        .map(|(i, c)| {
            let mut t = c.task(i as u64 * (spec.probe_duration + 1), spec.probe_duration);
            t.seq_num = i as u64 + 1;
            t
        })
        .collect()
}

/// Writes `workload.csv` and `workload_probe.csv` into `out_dir`.
pub fn write_generated(spec: &GenerationSpec, out_dir: &Path) -> Result<(PathBuf, PathBuf), WlgenError> {
    let (tasks, probe) = generate_workload(spec)?;
    fs::create_dir_all(out_dir).map_err(|source| StorageError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let workload = out_dir.join(WORKLOAD_FILE);
    let probe_path = out_dir.join(PROBE_FILE);
    write_workload(&workload, &tasks)?;
    write_workload(&probe_path, &probe)?;
    Ok((workload, probe_path))
}

pub fn parse_spec(text: &str) -> Result<GenerationSpec, String> {
    serde_json::from_str(text).map_err(|e| e.to_string())
}

pub fn load_spec(path: &Path) -> Result<GenerationSpec, WlgenError> {
    let load_err = |message: String| WlgenError::Load {
        path: path.to_path_buf(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|e| load_err(e.to_string()))?;
    parse_spec(&text).map_err(load_err)
}
