//! Python bindings for the antiflipper simulator.

use std::collections::{BTreeMap, BTreeSet};

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use antiflipper::baselines::{multi_krum_select, AggregatorSpec};
use antiflipper::config::{parse_config_str, parse_override};
use antiflipper::data::{self, AttackSchedule, FlipMap, LabeledDataset, PartitionSpec};
use antiflipper::defense::{self, DefenseConfig, TrustState};
use antiflipper::harness::run_configured;
use antiflipper::model::{self, ParamVector};
use antiflipper::Error;

fn py_err(err: Error) -> PyErr {
    match err {
        Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::DegenerateTrust(_) | Error::AggregationStarved => {
            PyRuntimeError::new_err(err.to_string())
        }
        _ => PyValueError::new_err(err.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for antiflipper::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

#[pyclass(name = "ModelArch", frozen, eq, skip_from_py_object)]
#[derive(Clone, PartialEq)]
struct PyModelArch(model::ModelArch);

#[pymethods]
impl PyModelArch {
    #[new]
    #[pyo3(signature = (input_dim, num_classes, hidden_dim = 0))]
    fn new(input_dim: usize, num_classes: usize, hidden_dim: usize) -> PyResult<Self> {
        model::ModelArch::new(input_dim, hidden_dim, num_classes).py().map(Self)
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.0.input_dim
    }

    #[getter]
    fn hidden_dim(&self) -> usize {
        self.0.hidden_dim
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.0.num_classes
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.0.param_count()
    }

    /// Weights drawn uniformly from [-0.05, 0.05], biases zero.
    fn init_params(&self, seed: u64) -> PyResult<PyParamVector> {
        model::init_params(self.0, seed).py().map(PyParamVector)
    }

    fn __repr__(&self) -> String {
        format!(
            "ModelArch(input_dim={}, num_classes={}, hidden_dim={})",
            self.0.input_dim, self.0.num_classes, self.0.hidden_dim
        )
    }
}

#[pyclass(name = "ParamVector", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyParamVector(ParamVector);

#[pymethods]
impl PyParamVector {
    #[new]
    fn new(arch: &PyModelArch, values: Vec<f64>) -> PyResult<Self> {
        ParamVector::new(arch.0, values).py().map(Self)
    }

    #[getter]
    fn arch(&self) -> PyModelArch {
        PyModelArch(self.0.arch())
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.0.values().to_vec()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    /// Mean cross-entropy and its gradient on `(features, labels)`.
    fn loss_and_grad(&self, dataset: &PyDataset) -> PyResult<(f64, PyParamVector)> {
        let (loss, grad) = model::forward_loss_grad(&self.0, &dataset.0).py()?;
        Ok((loss, PyParamVector(grad)))
    }

    #[pyo3(signature = (dataset, learning_rate = 0.05, momentum = 0.9, batch_size = 32, local_epochs = 3, seed = 0))]
    fn train(
        &self,
        dataset: &PyDataset,
        learning_rate: f64,
        momentum: f64,
        batch_size: usize,
        local_epochs: usize,
        seed: u64,
    ) -> PyResult<PyParamVector> {
        let cfg = model::SgdConfig {
            learning_rate,
            momentum,
            batch_size,
            local_epochs,
        };
        model::local_train(&self.0, &dataset.0, &cfg, seed).py().map(PyParamVector)
    }

    /// `(accuracy, mean_loss)` on a `fraction` subsample.
    #[pyo3(signature = (dataset, fraction = 1.0, seed = 0))]
    fn evaluate(&self, dataset: &PyDataset, fraction: f64, seed: u64) -> PyResult<(f64, f64)> {
        model::evaluate(&self.0, &dataset.0, fraction, seed).py()
    }
}

#[pyclass(name = "Dataset", frozen, skip_from_py_object)]
struct PyDataset(LabeledDataset);

#[pymethods]
impl PyDataset {
    /// `features` is one row per sample.
    #[new]
    fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, num_classes: usize) -> PyResult<Self> {
        let input_dim = features.first().map_or(1, Vec::len);
        if features.iter().any(|row| row.len() != input_dim) {
            return Err(PyValueError::new_err("feature rows differ in length"));
        }
        LabeledDataset::new(features.concat(), labels, input_dim, num_classes)
            .py()
            .map(Self)
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.0.labels().to_vec()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        self.0
            .features()
            .chunks(self.0.input_dim())
            .map(<[f64]>::to_vec)
            .collect()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.0.input_dim()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.0.num_classes()
    }

    fn class_histogram(&self) -> Vec<usize> {
        self.0.class_histogram()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    /// Relabels with a flip spec such as `"rotation"` or `"0:2,1:0"`.
    fn flip(&self, flips: &str) -> PyResult<PyDataset> {
        let map = FlipMap::parse(flips, self.0.num_classes()).py()?;
        data::apply_flip(&self.0, &map).py().map(PyDataset)
    }

    /// Sample indices of each client's shard.
    #[pyo3(signature = (num_clients, seed = 0, concentration = None))]
    fn partition(&self, num_clients: usize, seed: u64, concentration: Option<f64>) -> PyResult<Vec<Vec<usize>>> {
        let spec = match concentration {
            Some(c) => PartitionSpec::dirichlet(num_clients, c),
            None => PartitionSpec::iid(num_clients),
        };
        data::partition_indices(&self.0, &spec, seed).py()
    }
}

#[pyfunction]
#[pyo3(signature = (num_classes, samples_per_class, input_dim, spread = 1.0, seed = 0))]
fn gen_synthetic(
    num_classes: usize,
    samples_per_class: usize,
    input_dim: usize,
    spread: f64,
    seed: u64,
) -> PyResult<PyDataset> {
    data::gen_synthetic(num_classes, samples_per_class, input_dim, spread, seed)
        .py()
        .map(PyDataset)
}

/// `schedule` is `"constant"`, `"delayed"` or `"periodic"`.
#[pyfunction]
#[pyo3(signature = (schedule, round, start_round = 1, period = 1))]
fn is_attacking(schedule: &str, round: usize, start_round: usize, period: usize) -> PyResult<bool> {
    let schedule = match schedule {
        "constant" => AttackSchedule::Constant,
        "delayed" => AttackSchedule::Delayed { start_round },
        "periodic" => AttackSchedule::Periodic { period },
        other => return Err(PyValueError::new_err(format!("unknown schedule `{other}`"))),
    };
    schedule.validate().py()?;
    Ok(data::is_attacking(schedule, round))
}

#[pyclass(name = "TrustState", frozen, skip_from_py_object)]
struct PyTrustState(TrustState);

#[pymethods]
impl PyTrustState {
    #[new]
    fn new(num_clients: usize) -> PyResult<Self> {
        defense::init_trust(num_clients).py().map(Self)
    }

    #[getter]
    fn trust(&self) -> Vec<f64> {
        self.0.trust.clone()
    }

    #[getter]
    fn flags(&self) -> Vec<u32> {
        self.0.flags.clone()
    }

    #[getter]
    fn malicious(&self) -> BTreeSet<usize> {
        self.0.malicious.clone()
    }

    /// One filtering pass; `accuracies` maps client id to local accuracy.
    #[pyo3(signature = (accuracies, trust_lr = 1.0, k_factor = 2, cnt_max = 3))]
    fn filter(
        &self,
        accuracies: BTreeMap<usize, f64>,
        trust_lr: f64,
        k_factor: u32,
        cnt_max: u32,
    ) -> PyResult<PyTrustState> {
        let cfg = self.config(trust_lr, k_factor, cnt_max);
        defense::mal_node_filter(&self.0, &accuracies, &cfg).py().map(PyTrustState)
    }

    fn normalized(&self) -> PyResult<PyTrustState> {
        defense::normalize_trust(&self.0).py().map(PyTrustState)
    }

    /// Trust-weighted mean of the models of clients above the threshold.
    #[pyo3(signature = (models, k_factor = 2))]
    fn aggregate(&self, models: BTreeMap<usize, PyRef<'_, PyParamVector>>, k_factor: u32) -> PyResult<PyParamVector> {
        let cfg = self.config(DefenseConfig::DEFAULT_TRUST_LR, k_factor, DefenseConfig::DEFAULT_CNT_MAX);
        let models: BTreeMap<usize, ParamVector> = models.into_iter().map(|(c, m)| (c, m.0.clone())).collect();
        defense::weighted_aggregate(&models, &self.0, &cfg).py().map(PyParamVector)
    }
}

impl PyTrustState {
    fn config(&self, trust_lr: f64, k_factor: u32, cnt_max: u32) -> DefenseConfig {
        DefenseConfig {
            trust_lr,
            k_factor,
            cnt_max,
            num_clients: self.0.num_clients(),
        }
    }
}

#[pyfunction]
fn sq_deviation(acc: f64, acc_avg: f64) -> f64 {
    defense::sq_deviation(acc, acc_avg)
}

#[pyfunction]
fn compute_overhead_estimate(local_epochs: usize, eval_fraction: f64) -> PyResult<f64> {
    defense::compute_overhead_estimate(local_epochs, eval_fraction).py()
}

/// Baseline aggregation: `fedavg`, `median`, `trimmed_mean` or `multi_krum`.
#[pyfunction]
#[pyo3(signature = (name, models, weights = None, trim_ratio = 0.2, num_byzantine = 0, num_selected = 1))]
fn aggregate(
    name: &str,
    models: Vec<PyRef<'_, PyParamVector>>,
    weights: Option<Vec<f64>>,
    trim_ratio: f64,
    num_byzantine: usize,
    num_selected: usize,
) -> PyResult<PyParamVector> {
    let spec = match name {
        "fedavg" => AggregatorSpec::FedAvg,
        "median" => AggregatorSpec::Median,
        "trimmed_mean" => AggregatorSpec::TrimmedMean { trim_ratio },
        "multi_krum" => AggregatorSpec::MultiKrum {
            num_byzantine,
            num_selected,
        },
        other => return Err(PyValueError::new_err(format!("unknown aggregator `{other}`"))),
    };
    let refs: Vec<&ParamVector> = models.iter().map(|m| &m.0).collect();
    let weights = weights.unwrap_or_else(|| vec![1.0; refs.len()]);
    spec.aggregate(&refs, &weights).py().map(PyParamVector)
}

#[pyfunction]
fn krum_select(models: Vec<PyRef<'_, PyParamVector>>, num_byzantine: usize, num_selected: usize) -> PyResult<Vec<usize>> {
    let refs: Vec<&ParamVector> = models.iter().map(|m| &m.0).collect();
    multi_krum_select(&refs, num_byzantine, num_selected).py()
}

/// Runs an experiment from TOML text plus `key=value` overrides and returns
/// per-round metrics and the detection report as plain Python objects.
#[pyfunction]
#[pyo3(signature = (config = "", overrides = Vec::new()))]
fn run_experiment<'py>(py: Python<'py>, config: &str, overrides: Vec<String>) -> PyResult<Bound<'py, PyDict>> {
    let overrides = overrides
        .iter()
        .map(|s| parse_override(s))
        .collect::<antiflipper::Result<Vec<_>>>()
        .py()?;
    let cfg = parse_config_str(config, &overrides).py()?;
    let outcome = py.detach(|| run_configured(&cfg)).py()?;

    let rounds = PyList::empty(py);
    for r in &outcome.records {
        let row = PyDict::new(py);
        row.set_item("round", r.round)?;
        row.set_item("global_accuracy", r.global_accuracy)?;
        row.set_item("test_error", r.test_error)?;
        row.set_item("aggregation_time_ns", r.aggregation_time.as_nanos() as u64)?;
        row.set_item("participants", r.participants.clone())?;
        row.set_item("local_accuracies", r.local_accuracies.clone())?;
        row.set_item("trust", r.trust_snapshot.clone())?;
        row.set_item("malicious", r.beta_snapshot.clone())?;
        rounds.append(row)?;
    }
    let report = &outcome.report;
    let detection = PyDict::new(py);
    detection.set_item("detected", report.detected.clone())?;
    detection.set_item("true_positives", report.true_positives)?;
    detection.set_item("false_positives", report.false_positives)?;
    detection.set_item("false_negatives", report.false_negatives)?;
    detection.set_item("first_detection_round", report.first_detection_round)?;
    detection.set_item("last_detection_round", report.last_detection_round)?;
    detection.set_item("detection_rounds", report.detection_rounds.clone())?;

    let out = PyDict::new(py);
    out.set_item("name", &cfg.name)?;
    out.set_item("defense", cfg.defense.name())?;
    out.set_item("attackers", cfg.attack.malicious_ids.clone())?;
    out.set_item("final_accuracy", outcome.final_accuracy())?;
    out.set_item("final_test_error", outcome.final_test_error())?;
    out.set_item("rounds", rounds)?;
    out.set_item("detection", detection)?;
    out.set_item("final_model", PyParamVector(outcome.final_model))?;
    Ok(out)
}

#[pymodule]
fn pyantiflipper(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelArch>()?;
    m.add_class::<PyParamVector>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyTrustState>()?;
    m.add_function(wrap_pyfunction!(gen_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(is_attacking, m)?)?;
    m.add_function(wrap_pyfunction!(sq_deviation, m)?)?;
    m.add_function(wrap_pyfunction!(compute_overhead_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(krum_select, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
