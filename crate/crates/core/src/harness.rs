//! Round loop: client sampling, local evaluation and training, filtering,
//! aggregation and metric capture.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::seq::index;
use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::AggregatorSpec;
use crate::data::{
    apply_flip, gen_synthetic, load_idx, partition, AttackPlan, LabeledDataset, PartitionSpec,
};
use crate::defense::{init_trust, mal_node_filter_over, weighted_aggregate, DefenseConfig, TrustState};
use crate::error::{Error, Result};
use crate::model::{evaluate, evaluate_all, init_params, local_train, ModelArch, ParamVector, SgdConfig};
use crate::seed::{derive_seed, rng_from, stream};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Gaussian blobs; the test set is drawn separately with its own seed.
    Synthetic {
        num_classes: usize,
        samples_per_class: usize,
        test_samples_per_class: usize,
        input_dim: usize,
        spread: f64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        train_limit: Option<usize>,
        test_limit: Option<usize>,
    },
}

impl DataSource {
    /// `(input_dim, num_classes)` of the samples this source yields.
    pub fn shape(&self) -> (usize, usize) {
        match self {
            DataSource::Synthetic {
                num_classes,
                input_dim,
                ..
            } => (*input_dim, *num_classes),
            DataSource::Idx { .. } => (784, 10),
        }
    }

    pub fn load(&self, master_seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
        match self {
            DataSource::Synthetic {
                num_classes,
                samples_per_class,
                test_samples_per_class,
                input_dim,
                spread,
            } => {
                let train = gen_synthetic(
                    *num_classes,
                    *samples_per_class,
                    *input_dim,
                    *spread,
                    derive_seed(master_seed, &[stream::TRAIN_DATA]),
                )?;
                let test = gen_synthetic(
                    *num_classes,
                    *test_samples_per_class,
                    *input_dim,
                    *spread,
                    derive_seed(master_seed, &[stream::TEST_DATA]),
                )?;
                Ok((train, test))
            }
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                train_limit,
                test_limit,
            } => Ok((
                load_idx(train_images, train_labels, *train_limit)?,
                load_idx(test_images, test_labels, *test_limit)?,
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DefenseSpec {
    AntiFlipper(DefenseConfig),
    Baseline(AggregatorSpec),
}

impl DefenseSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DefenseSpec::AntiFlipper(_) => "antiflipper",
            DefenseSpec::Baseline(spec) => spec.name(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub data: DataSource,
    pub arch: ModelArch,
    pub sgd: SgdConfig,
    pub partition: PartitionSpec,
    pub attack: AttackPlan,
    pub defense: DefenseSpec,
    pub total_rounds: usize,
    pub clients_per_round: usize,
    pub eval_fraction: f64,
    pub master_seed: u64,
}

impl ExperimentConfig {
    pub fn num_clients(&self) -> usize {
        self.partition.num_clients
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.sgd.validate()?;
        self.partition.validate()?;
        self.attack.schedule.validate()?;
        let n = self.num_clients();
        if self.total_rounds < 1 {
            return Err(Error::InvalidArgument("total_rounds must be at least 1".into()));
        }
        if self.clients_per_round < 1 || self.clients_per_round > n {
            return Err(Error::InvalidArgument(format!(
                "clients_per_round must lie in [1, {n}], got {}",
                self.clients_per_round
            )));
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "eval_fraction must lie in (0, 1], got {}",
                self.eval_fraction
            )));
        }
        if self.data.shape() != (self.arch.input_dim, self.arch.num_classes) {
            return Err(Error::InvalidArgument(
                "model architecture does not match the data shape".into(),
            ));
        }
        if let Some(&bad) = self.attack.malicious_ids.iter().find(|&&c| c >= n) {
            return Err(Error::InvalidArgument(format!("malicious client {bad} does not exist")));
        }
        match &self.defense {
            DefenseSpec::AntiFlipper(cfg) => {
                cfg.validate()?;
                if cfg.num_clients != n {
                    return Err(Error::InvalidArgument(
                        "defense num_clients must match the partition".into(),
                    ));
                }
            }
            DefenseSpec::Baseline(spec) => {
                spec.validate()?;
                if let AggregatorSpec::MultiKrum {
                    num_byzantine,
                    num_selected,
                } = *spec
                {
                    let nr = self.clients_per_round;
                    if nr < num_byzantine + 3 || num_selected > nr - num_byzantine {
                        return Err(Error::TooFewParticipants(format!(
                            "multi-krum with f = {num_byzantine}, m = {num_selected} cannot run on {nr} participants"
                        )));
                    }
                }
                if let AggregatorSpec::TrimmedMean { trim_ratio } = *spec {
                    let trim = (trim_ratio * self.clients_per_round as f64).floor() as usize;
                    if self.clients_per_round < 2 * trim + 1 {
                        return Err(Error::TooFewParticipants("trimmed mean over-trims".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub global_accuracy: f64,
    pub test_error: f64,
    pub local_accuracies: BTreeMap<usize, f64>,
    /// Empty for baseline aggregators, which keep no trust.
    pub trust_snapshot: BTreeMap<usize, f64>,
    pub beta_snapshot: BTreeSet<usize>,
    pub aggregation_time: Duration,
    pub participants: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DetectionReport {
    pub detected: BTreeSet<usize>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub first_detection_round: Option<usize>,
    pub last_detection_round: Option<usize>,
    /// Round in which each detected client entered the malicious list.
    pub detection_rounds: BTreeMap<usize, usize>,
}

impl DetectionReport {
    pub fn from_records(records: &[RoundRecord], malicious: &BTreeSet<usize>) -> Self {
        let mut detection_rounds = BTreeMap::new();
        for record in records {
            for &c in &record.beta_snapshot {
                detection_rounds.entry(c).or_insert(record.round);
            }
        }
        let detected: BTreeSet<usize> = records
            .last()
            .map(|r| r.beta_snapshot.clone())
            .unwrap_or_default();
        let true_positives = detected.intersection(malicious).count();
        Self {
            true_positives,
            false_positives: detected.len() - true_positives,
            false_negatives: malicious.len() - true_positives,
            first_detection_round: detection_rounds.values().min().copied(),
            last_detection_round: detection_rounds.values().max().copied(),
            detected,
            detection_rounds,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub records: Vec<RoundRecord>,
    pub report: DetectionReport,
    pub final_model: ParamVector,
}

impl ExperimentOutcome {
    pub fn final_accuracy(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.global_accuracy)
    }

    pub fn final_test_error(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.test_error)
    }

    pub fn mean_aggregation_time(&self) -> Duration {
        if self.records.is_empty() {
            return Duration::ZERO;
        }
        let total: Duration = self.records.iter().map(|r| r.aggregation_time).sum();
        total / self.records.len() as u32
    }
}

/// Result of one participant's round: accuracy of the received model on its
/// current data, and its locally trained model.
struct ClientUpdate {
    client: usize,
    accuracy: f64,
    model: ParamVector,
}

fn sample_participants(
    eligible: &[usize],
    count: usize,
    master_seed: u64,
    round: usize,
) -> BTreeSet<usize> {
    if count >= eligible.len() {
        return eligible.iter().copied().collect();
    }
    let mut rng = rng_from(derive_seed(master_seed, &[stream::SAMPLING, round as u64]));
    index::sample(&mut rng, eligible.len(), count)
        .into_iter()
        .map(|i| eligible[i])
        .collect()
}

/// Loads the configured datasets and runs the experiment.
pub fn run_configured(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let (train, test) = cfg.data.load(cfg.master_seed)?;
    run_experiment(cfg, &train, &test)
}

pub fn run_experiment(
    cfg: &ExperimentConfig,
    train: &LabeledDataset,
    test_set: &LabeledDataset,
) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    if test_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let seed = cfg.master_seed;
    let n = cfg.num_clients();
    let shards = partition(train, &cfg.partition, derive_seed(seed, &[stream::PARTITION]))?;
    let flipped: BTreeMap<usize, LabeledDataset> = cfg
        .attack
        .malicious_ids
        .iter()
        .map(|&c| Ok((c, apply_flip(&shards[c], &cfg.attack.flip_map)?)))
        .collect::<Result<_>>()?;

    let mut global = init_params(cfg.arch, derive_seed(seed, &[stream::INIT]))?;
    let mut trust = init_trust(n)?;
    let mut records = Vec::with_capacity(cfg.total_rounds);

    for round in 1..=cfg.total_rounds {
        let eligible: Vec<usize> = (0..n).filter(|c| !trust.is_malicious(*c)).collect();
        if eligible.is_empty() {
            return Err(Error::AggregationStarved);
        }
        let participants = sample_participants(&eligible, cfg.clients_per_round, seed, round);
        let ids: Vec<usize> = participants.iter().copied().collect();

        let updates = ids
            .par_iter()
            .map(|&client| {
                let data = if cfg.attack.poisons(client, round) {
                    &flipped[&client]
                } else {
                    &shards[client]
                };
                let tags = [round as u64, client as u64];
                let eval_seed = derive_seed(seed, &[stream::EVAL, tags[0], tags[1]]);
                let train_seed = derive_seed(seed, &[stream::TRAIN, tags[0], tags[1]]);
                let (accuracy, _) = evaluate(&global, data, cfg.eval_fraction, eval_seed)?;
                let model = local_train(&global, data, &cfg.sgd, train_seed)?;
                Ok(ClientUpdate {
                    client,
                    accuracy,
                    model,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let local_accuracies: BTreeMap<usize, f64> =
            updates.iter().map(|u| (u.client, u.accuracy)).collect();

        let (next, aggregation_time) = match &cfg.defense {
            DefenseSpec::AntiFlipper(defense) => {
                trust = mal_node_filter_over(&trust, &ids, &local_accuracies, defense)?;
                let models: BTreeMap<usize, ParamVector> =
                    updates.into_iter().map(|u| (u.client, u.model)).collect();
                let start = Instant::now();
                let aggregated = weighted_aggregate(&models, &trust, defense)?;
                (aggregated, start.elapsed())
            }
            DefenseSpec::Baseline(spec) => {
                let models: Vec<&ParamVector> = updates.iter().map(|u| &u.model).collect();
                let weights: Vec<f64> =
                    updates.iter().map(|u| shards[u.client].len() as f64).collect();
                let start = Instant::now();
                let aggregated = spec.aggregate(&models, &weights)?;
                (aggregated, start.elapsed())
            }
        };
        global = next;

        let (global_accuracy, test_error) = evaluate_all(&global, test_set)?;
        records.push(RoundRecord {
            round,
            global_accuracy,
            test_error,
            local_accuracies,
            trust_snapshot: trust_snapshot(&cfg.defense, &trust),
            beta_snapshot: trust.malicious.clone(),
            aggregation_time,
            participants,
        });
    }

    let report = DetectionReport::from_records(&records, &cfg.attack.malicious_ids);
    Ok(ExperimentOutcome {
        records,
        report,
        final_model: global,
    })
}

fn trust_snapshot(defense: &DefenseSpec, trust: &TrustState) -> BTreeMap<usize, f64> {
    match defense {
        DefenseSpec::AntiFlipper(_) => trust.trust.iter().copied().enumerate().collect(),
        DefenseSpec::Baseline(_) => BTreeMap::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteRow {
    pub name: String,
    pub defense: String,
    pub final_accuracy: f64,
    pub final_test_error: f64,
    pub mean_aggregation_time: Duration,
    pub detected: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

/// Runs every config, optionally forcing a shared master seed.
pub fn run_suite(configs: &[ExperimentConfig], master_seed: Option<u64>) -> Result<Vec<SuiteRow>> {
    configs
        .iter()
        .map(|cfg| {
            let mut cfg = cfg.clone();
            if let Some(seed) = master_seed {
                cfg.master_seed = seed;
            }
            let outcome = run_configured(&cfg)?;
            Ok(SuiteRow {
                name: cfg.name.clone(),
                defense: cfg.defense.name().to_string(),
                final_accuracy: outcome.final_accuracy(),
                final_test_error: outcome.final_test_error(),
                mean_aggregation_time: outcome.mean_aggregation_time(),
                detected: outcome.report.detected.len(),
                false_positives: outcome.report.false_positives,
                false_negatives: outcome.report.false_negatives,
            })
        })
        .collect()
}
