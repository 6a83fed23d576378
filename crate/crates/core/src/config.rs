//! Experiment configuration files.
//!
//! Configs are TOML. Every setting has a dotted key path (`sgd.learning_rate`,
//! `antiflipper.k_factor`, ...) and may be written either inside its section
//! or as a dotted key. Command-line overrides use the same paths
//! (`--set sgd.learning_rate=0.1`) and take precedence over the file, which
//! takes precedence over the built-in defaults. See the README for the full
//! key table.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use toml::Value;

use crate::baselines::AggregatorSpec;
use crate::data::{AttackPlan, AttackSchedule, FlipMap, PartitionKind, PartitionSpec};
use crate::defense::DefenseConfig;
use crate::error::{Error, Result};
use crate::harness::{DataSource, DefenseSpec, ExperimentConfig};
use crate::model::{ModelArch, SgdConfig};
use crate::seed::{derive_seed, rng_from, stream};

pub const DEFENSE_NAMES: [&str; 5] = ["antiflipper", "fedavg", "median", "trimmed_mean", "multi_krum"];

pub mod defaults {
    pub const NUM_CLIENTS: usize = 10;
    pub const TOTAL_ROUNDS: usize = 50;
    pub const EVAL_FRACTION: f64 = 1.0;
    pub const MASTER_SEED: u64 = 0;

    pub const NUM_CLASSES: usize = 10;
    pub const SAMPLES_PER_CLASS: usize = 200;
    pub const TEST_SAMPLES_PER_CLASS: usize = 100;
    pub const INPUT_DIM: usize = 16;
    pub const SPREAD: f64 = 1.0;

    pub const HIDDEN_DIM: usize = 0;
    pub const LEARNING_RATE: f64 = 0.05;
    pub const MOMENTUM: f64 = 0.9;
    pub const BATCH_SIZE: usize = 32;
    pub const LOCAL_EPOCHS: usize = 3;

    pub const DIRICHLET_CONCENTRATION: f64 = 1.0;
    pub const MAX_MALICIOUS_FRACTION: f64 = 0.5;
    pub const PERIOD: usize = 15;
    pub const TRIM_RATIO: f64 = 0.2;
}

/// Parsed `key=value` override. Values are read as TOML scalars; anything
/// that does not parse is taken as a bare string.
pub fn parse_override(text: &str) -> Result<(String, Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::config(text, "override must have the form key=value"))?;
    let key = key.trim().to_string();
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((key, value))
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

/// Flat view of the settings that consumes keys as they are read, so that
/// leftovers can be reported as unknown.
struct Settings {
    values: BTreeMap<String, Value>,
}

impl Settings {
    fn take(&mut self, key: &str) -> Option<Value> {
        self.values.remove(key)
    }

    fn usize_or(&mut self, key: &str, default: usize) -> Result<usize> {
        match self.take(key) {
            None => Ok(default),
            Some(Value::Integer(i)) if i >= 0 => Ok(i as usize),
            Some(other) => Err(type_error(key, "a non-negative integer", &other)),
        }
    }

    fn opt_usize(&mut self, key: &str) -> Result<Option<usize>> {
        if self.values.contains_key(key) {
            self.usize_or(key, 0).map(Some)
        } else {
            Ok(None)
        }
    }

    fn u64_or(&mut self, key: &str, default: u64) -> Result<u64> {
        match self.take(key) {
            None => Ok(default),
            Some(Value::Integer(i)) if i >= 0 => Ok(i as u64),
            Some(other) => Err(type_error(key, "a non-negative integer", &other)),
        }
    }

    fn f64_or(&mut self, key: &str, default: f64) -> Result<f64> {
        match self.take(key) {
            None => Ok(default),
            Some(Value::Float(f)) => Ok(f),
            Some(Value::Integer(i)) => Ok(i as f64),
            Some(other) => Err(type_error(key, "a number", &other)),
        }
    }

    fn str_or(&mut self, key: &str, default: &str) -> Result<String> {
        match self.take(key) {
            None => Ok(default.to_string()),
            Some(Value::String(s)) => Ok(s),
            Some(other) => Err(type_error(key, "a string", &other)),
        }
    }

    fn path(&mut self, key: &str) -> Result<PathBuf> {
        match self.take(key) {
            Some(Value::String(s)) => Ok(PathBuf::from(s)),
            None => Err(Error::config(key, "is required for idx data")),
            Some(other) => Err(type_error(key, "a path string", &other)),
        }
    }

    fn opt_ids(&mut self, key: &str) -> Result<Option<BTreeSet<usize>>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .into_iter()
                .map(|v| match v {
                    Value::Integer(i) if i >= 0 => Ok(i as usize),
                    other => Err(type_error(key, "an array of client ids", &other)),
                })
                .collect::<Result<BTreeSet<_>>>()
                .map(Some),
            Some(other) => Err(type_error(key, "an array of client ids", &other)),
        }
    }
}

fn type_error(key: &str, expected: &str, found: &Value) -> Error {
    Error::config(key, format!("expected {expected}, found {} `{found}`", found.type_str()))
}

fn check(ok: bool, key: &str, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(key, message))
    }
}

/// Reads a config file and applies overrides.
pub fn parse_config(path: impl AsRef<Path>, overrides: &[(String, Value)]) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
    parse_config_str(&text, overrides)
}

pub fn parse_config_str(text: &str, overrides: &[(String, Value)]) -> Result<ExperimentConfig> {
    let table: toml::Table =
        toml::from_str(text).map_err(|e| Error::config("<file>", e.message().to_string()))?;
    let mut values = BTreeMap::new();
    flatten("", &table, &mut values);
    for (k, v) in overrides {
        values.insert(k.clone(), v.clone());
    }
    build(Settings { values })
}

fn build(mut s: Settings) -> Result<ExperimentConfig> {
    use defaults as d;

    let defense_name = s.str_or("defense", "antiflipper")?;
    if !DEFENSE_NAMES.contains(&defense_name.as_str()) {
        return Err(Error::config(
            "defense",
            format!("unknown defense `{defense_name}`; valid names: {}", DEFENSE_NAMES.join(", ")),
        ));
    }
    let name = s.str_or("name", &defense_name)?;

    let num_clients = s.usize_or("num_clients", d::NUM_CLIENTS)?;
    check(num_clients >= 2, "num_clients", "num_clients must be at least 2")?;
    let total_rounds = s.usize_or("total_rounds", d::TOTAL_ROUNDS)?;
    check(total_rounds >= 1, "total_rounds", "total_rounds must be at least 1")?;
    let clients_per_round = s.usize_or("clients_per_round", num_clients)?;
    check(
        (1..=num_clients).contains(&clients_per_round),
        "clients_per_round",
        "clients_per_round must lie between 1 and num_clients",
    )?;
    let eval_fraction = s.f64_or("eval_fraction", d::EVAL_FRACTION)?;
    check(
        eval_fraction > 0.0 && eval_fraction <= 1.0,
        "eval_fraction",
        "eval_fraction must lie in (0, 1]",
    )?;
    let master_seed = s.u64_or("master_seed", d::MASTER_SEED)?;

    let data = match s.str_or("data.source", "synthetic")?.as_str() {
        "synthetic" => {
            let num_classes = s.usize_or("data.num_classes", d::NUM_CLASSES)?;
            check(num_classes >= 2, "data.num_classes", "num_classes must be at least 2")?;
            let samples_per_class = s.usize_or("data.samples_per_class", d::SAMPLES_PER_CLASS)?;
            check(samples_per_class >= 1, "data.samples_per_class", "samples_per_class must be at least 1")?;
            let test_samples_per_class = s.usize_or("data.test_samples_per_class", d::TEST_SAMPLES_PER_CLASS)?;
            check(
                test_samples_per_class >= 1,
                "data.test_samples_per_class",
                "test_samples_per_class must be at least 1",
            )?;
            let input_dim = s.usize_or("data.input_dim", d::INPUT_DIM)?;
            check(input_dim >= 1, "data.input_dim", "input_dim must be at least 1")?;
            let spread = s.f64_or("data.spread", d::SPREAD)?;
            check(spread >= 0.0 && spread.is_finite(), "data.spread", "spread must be non-negative")?;
            DataSource::Synthetic {
                num_classes,
                samples_per_class,
                test_samples_per_class,
                input_dim,
                spread,
            }
        }
        "idx" => DataSource::Idx {
            train_images: s.path("data.train_images")?,
            train_labels: s.path("data.train_labels")?,
            test_images: s.path("data.test_images")?,
            test_labels: s.path("data.test_labels")?,
            train_limit: s.opt_usize("data.train_limit")?,
            test_limit: s.opt_usize("data.test_limit")?,
        },
        other => {
            return Err(Error::config(
                "data.source",
                format!("unknown data source `{other}`; valid: synthetic, idx"),
            ))
        }
    };
    let (input_dim, num_classes) = data.shape();

    let arch = ModelArch {
        input_dim,
        hidden_dim: s.usize_or("model.hidden_dim", d::HIDDEN_DIM)?,
        num_classes,
    };

    let sgd = SgdConfig {
        learning_rate: s.f64_or("sgd.learning_rate", d::LEARNING_RATE)?,
        momentum: s.f64_or("sgd.momentum", d::MOMENTUM)?,
        batch_size: s.usize_or("sgd.batch_size", d::BATCH_SIZE)?,
        local_epochs: s.usize_or("sgd.local_epochs", d::LOCAL_EPOCHS)?,
    };
    check(
        sgd.learning_rate >= 0.0 && sgd.learning_rate.is_finite(),
        "sgd.learning_rate",
        "learning_rate must be non-negative",
    )?;
    check((0.0..1.0).contains(&sgd.momentum), "sgd.momentum", "momentum must lie in [0, 1)")?;
    check(sgd.batch_size >= 1, "sgd.batch_size", "batch_size must be at least 1")?;
    check(sgd.local_epochs >= 1, "sgd.local_epochs", "local_epochs must be at least 1")?;

    let partition = match s.str_or("partition.kind", "iid")?.as_str() {
        "iid" => PartitionSpec::iid(num_clients),
        "dirichlet" => {
            let concentration = s.f64_or("partition.concentration", d::DIRICHLET_CONCENTRATION)?;
            check(
                concentration > 0.0 && concentration.is_finite(),
                "partition.concentration",
                "concentration must be positive",
            )?;
            PartitionSpec::dirichlet(num_clients, concentration)
        }
        other => {
            return Err(Error::config(
                "partition.kind",
                format!("unknown partition `{other}`; valid: iid, dirichlet"),
            ))
        }
    };
    if let PartitionKind::Iid = partition.kind {
        // Accept but ignore a stray concentration so configs can be toggled.
        s.take("partition.concentration");
    }

    let attack = build_attack(&mut s, num_clients, num_classes, total_rounds, master_seed)?;

    let defense = match defense_name.as_str() {
        "antiflipper" => {
            let cfg = DefenseConfig {
                trust_lr: s.f64_or("antiflipper.trust_lr", DefenseConfig::DEFAULT_TRUST_LR)?,
                k_factor: s.usize_or("antiflipper.k_factor", DefenseConfig::DEFAULT_K_FACTOR as usize)? as u32,
                cnt_max: s.usize_or("antiflipper.cnt_max", DefenseConfig::DEFAULT_CNT_MAX as usize)? as u32,
                num_clients,
            };
            check(
                cfg.trust_lr > 0.0 && cfg.trust_lr.is_finite(),
                "antiflipper.trust_lr",
                "trust_lr must be positive",
            )?;
            check(cfg.k_factor > 1, "antiflipper.k_factor", "k_factor must exceed 1")?;
            check(cfg.cnt_max >= 1, "antiflipper.cnt_max", "cnt_max must be at least 1")?;
            DefenseSpec::AntiFlipper(cfg)
        }
        "fedavg" => DefenseSpec::Baseline(AggregatorSpec::FedAvg),
        "median" => DefenseSpec::Baseline(AggregatorSpec::Median),
        "trimmed_mean" => {
            let trim_ratio = s.f64_or("baseline.trim_ratio", d::TRIM_RATIO)?;
            check(
                (0.0..0.5).contains(&trim_ratio),
                "baseline.trim_ratio",
                "trim_ratio must lie in [0, 0.5)",
            )?;
            DefenseSpec::Baseline(AggregatorSpec::TrimmedMean { trim_ratio })
        }
        "multi_krum" => {
            let num_byzantine = s.usize_or("baseline.num_byzantine", attack.malicious_ids.len())?;
            let default_selected = clients_per_round.saturating_sub(num_byzantine).max(1);
            let num_selected = s.usize_or("baseline.num_selected", default_selected)?;
            check(
                clients_per_round >= num_byzantine + 3,
                "baseline.num_byzantine",
                "multi-krum needs clients_per_round - num_byzantine - 2 >= 1",
            )?;
            check(
                num_selected >= 1 && num_selected <= clients_per_round - num_byzantine,
                "baseline.num_selected",
                "num_selected must lie in [1, clients_per_round - num_byzantine]",
            )?;
            DefenseSpec::Baseline(AggregatorSpec::MultiKrum {
                num_byzantine,
                num_selected,
            })
        }
        _ => unreachable!("checked against DEFENSE_NAMES"),
    };

    // Settings for the defenses that were not selected are tolerated.
    s.values.retain(|k, _| !is_known(k));
    if let Some(key) = s.values.keys().next() {
        return Err(Error::config(key.clone(), "unknown key"));
    }

    let cfg = ExperimentConfig {
        name,
        data,
        arch,
        sgd,
        partition,
        attack,
        defense,
        total_rounds,
        clients_per_round,
        eval_fraction,
        master_seed,
    };
    cfg.validate().map_err(|e| Error::config("config", e.to_string()))?;
    Ok(cfg)
}

const KNOWN_DEFENSE_KEYS: [&str; 6] = [
    "antiflipper.trust_lr",
    "antiflipper.k_factor",
    "antiflipper.cnt_max",
    "baseline.trim_ratio",
    "baseline.num_byzantine",
    "baseline.num_selected",
];

fn is_known(key: &str) -> bool {
    KNOWN_DEFENSE_KEYS.contains(&key)
}

fn build_attack(
    s: &mut Settings,
    num_clients: usize,
    num_classes: usize,
    total_rounds: usize,
    master_seed: u64,
) -> Result<AttackPlan> {
    let max_fraction = s.f64_or("attack.max_fraction", defaults::MAX_MALICIOUS_FRACTION)?;
    check(
        (0.0..=1.0).contains(&max_fraction),
        "attack.max_fraction",
        "max_fraction must lie in [0, 1]",
    )?;
    let explicit = s.opt_ids("attack.malicious_ids")?;
    let count = s.opt_usize("attack.num_malicious")?;
    let ids = match (explicit, count) {
        (Some(ids), Some(count)) if ids.len() != count => {
            return Err(Error::config(
                "attack.num_malicious",
                "disagrees with the length of attack.malicious_ids",
            ))
        }
        (Some(ids), _) => ids,
        (None, Some(count)) => {
            check(count < num_clients, "attack.num_malicious", "must be below num_clients")?;
            let mut rng = rng_from(derive_seed(master_seed, &[stream::ATTACKERS]));
            index::sample(&mut rng, num_clients, count).into_iter().collect()
        }
        (None, None) => BTreeSet::new(),
    };
    if let Some(&bad) = ids.iter().find(|&&c| c >= num_clients) {
        return Err(Error::config(
            "attack.malicious_ids",
            format!("client {bad} does not exist among {num_clients} clients"),
        ));
    }
    let flip = s.str_or("attack.flip", "rotation")?;
    let flip_map = FlipMap::parse(&flip, num_classes).map_err(|e| Error::config("attack.flip", e.to_string()))?;

    let schedule = match s.str_or("attack.schedule", "constant")?.as_str() {
        "constant" => AttackSchedule::Constant,
        "delayed" => {
            let start_round = s.usize_or("attack.start_round", (total_rounds / 2).max(1))?;
            check(start_round >= 1, "attack.start_round", "start_round must be at least 1")?;
            AttackSchedule::Delayed { start_round }
        }
        "periodic" => {
            let period = s.usize_or("attack.period", defaults::PERIOD)?;
            check(period >= 1, "attack.period", "period must be at least 1")?;
            AttackSchedule::Periodic { period }
        }
        other => {
            return Err(Error::config(
                "attack.schedule",
                format!("unknown schedule `{other}`; valid: constant, delayed, periodic"),
            ))
        }
    };
    // Schedule parameters for other schedule kinds are tolerated.
    s.take("attack.start_round");
    s.take("attack.period");

    AttackPlan::new(ids, flip_map, schedule, num_clients, max_fraction)
        .map_err(|e| Error::config("attack.malicious_ids", e.to_string()))
}

/// Serializes a config as TOML that parses back to an equal config.
pub fn to_toml(cfg: &ExperimentConfig) -> String {
    let mut root = toml::Table::new();
    root.insert("name".into(), cfg.name.clone().into());
    root.insert("defense".into(), cfg.defense.name().into());
    root.insert("num_clients".into(), (cfg.num_clients() as i64).into());
    root.insert("total_rounds".into(), (cfg.total_rounds as i64).into());
    root.insert("clients_per_round".into(), (cfg.clients_per_round as i64).into());
    root.insert("eval_fraction".into(), cfg.eval_fraction.into());
    root.insert("master_seed".into(), (cfg.master_seed as i64).into());

    let mut data = toml::Table::new();
    match &cfg.data {
        DataSource::Synthetic {
            num_classes,
            samples_per_class,
            test_samples_per_class,
            input_dim,
            spread,
        } => {
            data.insert("source".into(), "synthetic".into());
            data.insert("num_classes".into(), (*num_classes as i64).into());
            data.insert("samples_per_class".into(), (*samples_per_class as i64).into());
            data.insert("test_samples_per_class".into(), (*test_samples_per_class as i64).into());
            data.insert("input_dim".into(), (*input_dim as i64).into());
            data.insert("spread".into(), (*spread).into());
        }
        DataSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            train_limit,
            test_limit,
        } => {
            data.insert("source".into(), "idx".into());
            for (k, p) in [
                ("train_images", train_images),
                ("train_labels", train_labels),
                ("test_images", test_images),
                ("test_labels", test_labels),
            ] {
                data.insert(k.into(), p.display().to_string().into());
            }
            if let Some(l) = train_limit {
                data.insert("train_limit".into(), (*l as i64).into());
            }
            if let Some(l) = test_limit {
                data.insert("test_limit".into(), (*l as i64).into());
            }
        }
    }
    root.insert("data".into(), data.into());

    let mut model = toml::Table::new();
    model.insert("hidden_dim".into(), (cfg.arch.hidden_dim as i64).into());
    root.insert("model".into(), model.into());

    let mut sgd = toml::Table::new();
    sgd.insert("learning_rate".into(), cfg.sgd.learning_rate.into());
    sgd.insert("momentum".into(), cfg.sgd.momentum.into());
    sgd.insert("batch_size".into(), (cfg.sgd.batch_size as i64).into());
    sgd.insert("local_epochs".into(), (cfg.sgd.local_epochs as i64).into());
    root.insert("sgd".into(), sgd.into());

    let mut partition = toml::Table::new();
    match cfg.partition.kind {
        PartitionKind::Iid => {
            partition.insert("kind".into(), "iid".into());
        }
        PartitionKind::Dirichlet { concentration } => {
            partition.insert("kind".into(), "dirichlet".into());
            partition.insert("concentration".into(), concentration.into());
        }
    }
    root.insert("partition".into(), partition.into());

    let mut attack = toml::Table::new();
    let ids: Vec<Value> = cfg
        .attack
        .malicious_ids
        .iter()
        .map(|&c| Value::Integer(c as i64))
        .collect();
    attack.insert("malicious_ids".into(), Value::Array(ids));
    attack.insert("flip".into(), cfg.attack.flip_map.to_string().into());
    // The bound is not part of the plan; the loosest one admits any plan.
    attack.insert("max_fraction".into(), 1.0.into());
    match cfg.attack.schedule {
        AttackSchedule::Constant => {
            attack.insert("schedule".into(), "constant".into());
        }
        AttackSchedule::Delayed { start_round } => {
            attack.insert("schedule".into(), "delayed".into());
            attack.insert("start_round".into(), (start_round as i64).into());
        }
        AttackSchedule::Periodic { period } => {
            attack.insert("schedule".into(), "periodic".into());
            attack.insert("period".into(), (period as i64).into());
        }
    }
    root.insert("attack".into(), attack.into());

    match &cfg.defense {
        DefenseSpec::AntiFlipper(d) => {
            let mut t = toml::Table::new();
            t.insert("trust_lr".into(), d.trust_lr.into());
            t.insert("k_factor".into(), i64::from(d.k_factor).into());
            t.insert("cnt_max".into(), i64::from(d.cnt_max).into());
            root.insert("antiflipper".into(), t.into());
        }
        DefenseSpec::Baseline(spec) => {
            let mut t = toml::Table::new();
            match *spec {
                AggregatorSpec::TrimmedMean { trim_ratio } => {
                    t.insert("trim_ratio".into(), trim_ratio.into());
                }
                AggregatorSpec::MultiKrum {
                    num_byzantine,
                    num_selected,
                } => {
                    t.insert("num_byzantine".into(), (num_byzantine as i64).into());
                    t.insert("num_selected".into(), (num_selected as i64).into());
                }
                AggregatorSpec::FedAvg | AggregatorSpec::Median => {}
            }
            if !t.is_empty() {
                root.insert("baseline".into(), t.into());
            }
        }
    }
    toml::to_string(&root).expect("config tables always serialize")
}
