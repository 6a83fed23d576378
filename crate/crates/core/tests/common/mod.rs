#![allow(dead_code)]

use antiflipper::config::{parse_config_str, parse_override};
use antiflipper::harness::ExperimentConfig;
use antiflipper::model::{ModelArch, ParamVector};

/// Small synthetic task with overrides on top of the defaults.
pub fn small_config(extra: &[&str]) -> ExperimentConfig {
    let mut all = vec![
        "data.num_classes=4",
        "data.input_dim=6",
        "data.samples_per_class=60",
        "data.test_samples_per_class=30",
        "num_clients=6",
        "total_rounds=8",
    ];
    all.extend_from_slice(extra);
    let overrides: Vec<_> = all.iter().map(|s| parse_override(s).unwrap()).collect();
    parse_config_str("", &overrides).expect("valid config")
}

/// Wraps an even-length (at least 4) vector as a 1-input softmax model.
pub fn vector(values: &[f64]) -> ParamVector {
    let arch = ModelArch::new(1, 0, values.len() / 2).unwrap();
    ParamVector::new(arch, values.to_vec()).unwrap()
}
