//! Exit criteria for the simulator. Runs as a plain binary and prints one
//! PASS/FAIL line per criterion; any failure makes the process exit non-zero.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use antiflipper::baselines::{coordinate_median, multi_krum, multi_krum_select, trimmed_mean};
use antiflipper::config::{parse_config_str, parse_override};
use antiflipper::data::{gen_synthetic, LabeledDataset};
use antiflipper::defense::{compute_overhead_estimate, init_trust, weighted_aggregate, DefenseConfig};
use antiflipper::harness::{run_configured, ExperimentConfig, ExperimentOutcome};
use antiflipper::model::{
    evaluate, forward_loss_grad, init_params, local_train, ModelArch, ParamVector, SgdConfig,
};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Reference task: 10-class blobs in 16 dimensions, 200 samples per class,
/// 10 clients, default AntiFLipper settings.
fn reference(extra: &[&str], seed: u64) -> ExperimentConfig {
    let mut overrides = vec![
        "data.num_classes=10",
        "data.input_dim=16",
        "data.samples_per_class=200",
        "num_clients=10",
        "total_rounds=50",
    ]
    .into_iter()
    .map(|s| parse_override(s).unwrap())
    .collect::<Vec<_>>();
    overrides.extend(extra.iter().map(|s| parse_override(s).unwrap()));
    overrides.push(parse_override(&format!("master_seed={seed}")).unwrap());
    parse_config_str("", &overrides).expect("reference config")
}

fn attacked(extra: &[&str], seed: u64) -> ExperimentConfig {
    let mut all = vec!["attack.num_malicious=4", "attack.flip=rotation"];
    all.extend_from_slice(extra);
    reference(&all, seed)
}

fn run(cfg: &ExperimentConfig) -> ExperimentOutcome {
    run_configured(cfg).expect("experiment runs")
}

fn c1_trust_conservation() -> Outcome {
    let start = Instant::now();
    let out = run(&attacked(&[], 0));
    let elapsed = start.elapsed();
    let worst = out
        .records
        .iter()
        .map(|r| {
            let sum: f64 = r
                .trust_snapshot
                .iter()
                .filter(|(c, _)| !r.beta_snapshot.contains(c))
                .map(|(_, t)| t)
                .sum();
            (sum - 1.0).abs()
        })
        .fold(0.0, f64::max);
    outcome(
        out.records.len() == 50 && worst <= 1e-9 && elapsed < Duration::from_secs(1),
        format!("max |sum - 1| = {worst:.2e} over 50 rounds, {:.3} s", elapsed.as_secs_f64()),
    )
}

fn c2_detection() -> Outcome {
    let start = Instant::now();
    let mut details = Vec::new();
    let mut pass = true;
    for seed in SEEDS {
        let cfg = attacked(&[], seed);
        let r = run(&cfg).report;
        let ok = r.false_negatives == 0
            && r.false_positives == 0
            && r.last_detection_round.is_some_and(|d| d <= 25);
        pass &= ok;
        details.push(format!(
            "seed {seed}: fn {} fp {} last {:?}",
            r.false_negatives, r.false_positives, r.last_detection_round
        ));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(30);
    outcome(pass, format!("{}; {:.2} s", details.join(", "), elapsed.as_secs_f64()))
}

fn c3_defense_benefit() -> Outcome {
    let mut pass = true;
    let mut details = Vec::new();
    for seed in SEEDS {
        let af = run(&attacked(&[], seed)).final_accuracy();
        let fedavg_attacked = run(&attacked(&["defense=fedavg"], seed)).final_accuracy();
        let fedavg_clean = run(&reference(&["defense=fedavg"], seed)).final_accuracy();
        let ok = af - fedavg_attacked >= 0.10 && (af - fedavg_clean).abs() <= 0.03;
        pass &= ok;
        details.push(format!(
            "seed {seed}: af {af:.3} fedavg-attack {fedavg_attacked:.3} fedavg-clean {fedavg_clean:.3}"
        ));
    }
    outcome(pass, details.join("; "))
}

fn c4_dynamic_scenarios() -> Outcome {
    let mut pass = true;
    let mut details = Vec::new();
    for seed in SEEDS {
        let constant = run(&attacked(&[], seed)).final_accuracy();
        // Delayed defaults to total_rounds / 2 = 25; spelled out here.
        let delayed = run(&attacked(&["attack.schedule=delayed", "attack.start_round=25"], seed));
        let periodic = run(&attacked(&["attack.schedule=periodic", "attack.period=15"], seed));
        for (name, o) in [("delayed", &delayed), ("periodic", &periodic)] {
            let ok = o.report.false_negatives == 0 && (o.final_accuracy() - constant).abs() <= 0.02;
            pass &= ok;
            details.push(format!(
                "seed {seed} {name}: fn {} acc {:.3} vs {constant:.3}",
                o.report.false_negatives,
                o.final_accuracy()
            ));
        }
    }
    outcome(pass, details.join("; "))
}

fn random_models(arch: ModelArch, count: usize, rng: &mut ChaCha8Rng) -> Vec<ParamVector> {
    (0..count)
        .map(|_| {
            let values = (0..arch.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
            ParamVector::new(arch, values).unwrap()
        })
        .collect()
}

fn mean_time<T>(calls: usize, mut f: impl FnMut() -> T) -> Duration {
    // One warm-up call outside the measurement.
    std::hint::black_box(f());
    let start = Instant::now();
    for _ in 0..calls {
        std::hint::black_box(f());
    }
    start.elapsed() / calls as u32
}

fn c5_aggregation_time_ordering() -> Outcome {
    let arch = ModelArch::new(1000, 0, 10).unwrap();
    let participants = 20;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let models = random_models(arch, participants, &mut rng);
    let refs: Vec<&ParamVector> = models.iter().collect();
    let by_id: BTreeMap<usize, ParamVector> = models.iter().cloned().enumerate().collect();
    let state = init_trust(participants).unwrap();
    let cfg = DefenseConfig::with_defaults(participants);
    let calls = 100;

    let weighted = mean_time(calls, || weighted_aggregate(&by_id, &state, &cfg).unwrap());
    let median = mean_time(calls, || coordinate_median(&refs).unwrap());
    let krum = mean_time(calls, || multi_krum(&refs, 8, 12).unwrap());
    outcome(
        arch.param_count() >= 10_000 && weighted < median && median < krum,
        format!(
            "dim {}, {participants} models, {calls} calls: weighted {:.3} ms < median {:.3} ms < multi-krum {:.3} ms",
            arch.param_count(),
            weighted.as_secs_f64() * 1e3,
            median.as_secs_f64() * 1e3,
            krum.as_secs_f64() * 1e3
        ),
    )
}

fn c6_overhead() -> Outcome {
    let exact = compute_overhead_estimate(3, 1.0).unwrap() == 1.0 / 9.0
        && compute_overhead_estimate(3, 0.1).unwrap() == 1.0 / 90.0;

    let arch = ModelArch::new(16, 32, 10).unwrap();
    let data = gen_synthetic(10, 200, 16, 1.0, 3).unwrap();
    let params = init_params(arch, 1).unwrap();
    let sgd = SgdConfig {
        learning_rate: 0.05,
        momentum: 0.9,
        batch_size: 32,
        local_epochs: 3,
    };
    let reps = 30;
    let train = mean_time(reps, || local_train(&params, &data, &sgd, 7).unwrap());
    let mut pass = exact;
    let mut details = vec![format!(
        "estimate(3,1.0) = {}, estimate(3,0.1) = {}",
        compute_overhead_estimate(3, 1.0).unwrap(),
        compute_overhead_estimate(3, 0.1).unwrap()
    )];
    for fraction in [1.0, 0.1] {
        let eval = mean_time(reps * 3, || evaluate(&params, &data, fraction, 11).unwrap());
        let measured = eval.as_secs_f64() / train.as_secs_f64();
        let predicted = compute_overhead_estimate(3, fraction).unwrap();
        let ratio = measured / predicted;
        pass &= (0.5..=2.0).contains(&ratio);
        details.push(format!(
            "fraction {fraction}: measured {measured:.4} vs formula {predicted:.4} (x{ratio:.2})"
        ));
    }
    outcome(pass, details.join("; "))
}

/// Exhaustive Krum score: minimum over every subset of `k` other models of
/// the summed squared distances.
fn exhaustive_score(models: &[Vec<f64>], i: usize, k: usize) -> f64 {
    let others: Vec<usize> = (0..models.len()).filter(|&j| j != i).collect();
    let dist = |j: usize| -> f64 {
        models[i].iter().zip(&models[j]).map(|(a, b)| (a - b).powi(2)).sum()
    };
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << others.len()) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let total: f64 = others
            .iter()
            .enumerate()
            .filter(|(bit, _)| mask & (1 << bit) != 0)
            .map(|(_, &j)| dist(j))
            .sum();
        best = best.min(total);
    }
    best
}

fn oracle_krum(models: &[Vec<f64>], f: usize, m: usize) -> (Vec<usize>, Vec<f64>) {
    let n = models.len();
    let scores: Vec<f64> = (0..n).map(|i| exhaustive_score(models, i, n - f - 2)).collect();
    let mut chosen = Vec::new();
    while chosen.len() < m {
        let next = (0..n)
            .filter(|i| !chosen.contains(i))
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if scores[b] <= scores[i] => Some(b),
                _ => Some(i),
            })
            .unwrap();
        chosen.push(next);
    }
    chosen.sort_unstable();
    let dim = models[0].len();
    let mean = (0..dim)
        .map(|d| chosen.iter().map(|&i| models[i][d]).sum::<f64>() / m as f64)
        .collect();
    (chosen, mean)
}

fn sorted_column(models: &[Vec<f64>], d: usize) -> Vec<f64> {
    let mut col: Vec<f64> = models.iter().map(|m| m[d]).collect();
    col.sort_by(|a, b| a.partial_cmp(b).unwrap());
    col
}

fn c7_oracle_equivalence() -> Outcome {
    // (1, 0, 2) is the smallest architecture: four parameters.
    let arch = ModelArch::new(1, 0, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut krum_ok, mut median_ok, mut trimmed_ok) = (0, 0, 0);
    let cases = 200;
    for _ in 0..cases {
        let n = rng.random_range(3..=6);
        let models = random_models(arch, n, &mut rng);
        let raw: Vec<Vec<f64>> = models.iter().map(|m| m.values().to_vec()).collect();
        let refs: Vec<&ParamVector> = models.iter().collect();

        if n >= 3 {
            let f = rng.random_range(0..=n - 3);
            let m = rng.random_range(1..=n - f);
            let (want_sel, want_mean) = oracle_krum(&raw, f, m);
            let got_sel = multi_krum_select(&refs, f, m).unwrap();
            let got = multi_krum(&refs, f, m).unwrap();
            let close = got.values().iter().zip(&want_mean).all(|(a, b)| (a - b).abs() <= 1e-12);
            if got_sel == want_sel && close {
                krum_ok += 1;
            }
        }

        let median = coordinate_median(&refs).unwrap();
        let want_median: Vec<f64> = (0..arch.param_count())
            .map(|d| {
                let col = sorted_column(&raw, d);
                if n % 2 == 1 {
                    col[n / 2]
                } else {
                    (col[n / 2 - 1] + col[n / 2]) / 2.0
                }
            })
            .collect();
        if median.values() == want_median.as_slice() {
            median_ok += 1;
        }

        let ratio = rng.random_range(0.0..0.5);
        let t = (ratio * n as f64).floor() as usize;
        let trimmed = trimmed_mean(&refs, ratio).unwrap();
        let want_trimmed: Vec<f64> = (0..arch.param_count())
            .map(|d| {
                let col = sorted_column(&raw, d);
                let kept = &col[t..n - t];
                kept.iter().sum::<f64>() / kept.len() as f64
            })
            .collect();
        if trimmed.values() == want_trimmed.as_slice() {
            trimmed_ok += 1;
        }
    }
    outcome(
        krum_ok == cases && median_ok == cases && trimmed_ok == cases,
        format!("multi-krum {krum_ok}/{cases}, median {median_ok}/{cases}, trimmed mean {trimmed_ok}/{cases}"),
    )
}

fn c8_gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let instances = 50;
    let mut passed_instances = 0;
    let mut worst_share: f64 = 1.0;
    for _ in 0..instances {
        let arch = ModelArch::new(
            rng.random_range(1..=6),
            rng.random_range(0..=6),
            rng.random_range(2..=5),
        )
        .unwrap();
        let values: Vec<f64> = (0..arch.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let params = ParamVector::new(arch, values).unwrap();
        let samples = rng.random_range(1..=8);
        let features = (0..samples * arch.input_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels = (0..samples).map(|_| rng.random_range(0..arch.num_classes)).collect();
        let batch = LabeledDataset::new(features, labels, arch.input_dim, arch.num_classes).unwrap();

        let (_, grad) = forward_loss_grad(&params, &batch).unwrap();
        let coords: Vec<usize> = (0..20.min(arch.param_count()))
            .map(|_| rng.random_range(0..arch.param_count()))
            .collect();
        let h = 1e-5;
        let good = coords
            .iter()
            .filter(|&&c| {
                let shifted = |delta: f64| {
                    let mut v = params.values().to_vec();
                    v[c] += delta;
                    forward_loss_grad(&ParamVector::new(arch, v).unwrap(), &batch).unwrap().0
                };
                let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                let analytic = grad.values()[c];
                (analytic - fd).abs() <= 1e-4 * analytic.abs().max(fd.abs()).max(1e-6)
            })
            .count();
        let share = good as f64 / coords.len() as f64;
        worst_share = worst_share.min(share);
        if share >= 0.95 {
            passed_instances += 1;
        }
    }
    outcome(
        passed_instances == instances,
        format!("{passed_instances}/{instances} instances; worst coordinate pass share {worst_share:.2}"),
    )
}

fn c9_no_false_exclusions() -> Outcome {
    let mut excluded = Vec::new();
    for seed in 0..10 {
        let out = run(&reference(&[], seed));
        if out.records.iter().any(|r| !r.beta_snapshot.is_empty()) {
            excluded.push(seed);
        }
    }
    outcome(excluded.is_empty(), format!("10 seeds, seeds with exclusions: {excluded:?}"))
}

/// Drops the named column from CSV text.
fn without_column(text: &str, column: &str) -> String {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers().unwrap().clone();
    let skip = headers.iter().position(|h| h == column);
    let keep = |rec: &csv::StringRecord| -> String {
        rec.iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != skip)
            .map(|(_, v)| v)
            .collect::<Vec<_>>()
            .join(",")
    };
    let mut out = keep(&headers);
    for rec in reader.records() {
        out.push('\n');
        out.push_str(&keep(&rec.unwrap()));
    }
    out
}

fn c10_cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("reference.toml");
    fs::write(
        &config,
        "defense = \"antiflipper\"\ntotal_rounds = 20\nmaster_seed = 3\n\n[attack]\nnum_malicious = 4\nflip = \"rotation\"\n",
    )
    .unwrap();
    let run_cli = |out: &Path| {
        Command::new(env!("CARGO_BIN_EXE_antiflipper"))
            .arg("run")
            .arg(&config)
            .arg("--out")
            .arg(out)
            .status()
            .map(|s| s.success())
            .unwrap_or(false)
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    if !(run_cli(&a) && run_cli(&b)) {
        return outcome(false, "cli run failed");
    }
    let read = |dir: &Path, name: &str| fs::read_to_string(dir.join(name)).unwrap();
    let rounds_equal = without_column(&read(&a, "rounds.csv"), "aggregation_time_ns")
        == without_column(&read(&b, "rounds.csv"), "aggregation_time_ns");
    let trust_equal = fs::read(a.join("trust.csv")).unwrap() == fs::read(b.join("trust.csv")).unwrap();
    let detection_equal =
        fs::read(a.join("detection.json")).unwrap() == fs::read(b.join("detection.json")).unwrap();
    outcome(
        rounds_equal && trust_equal && detection_equal,
        format!("rounds.csv {rounds_equal}, trust.csv {trust_equal}, detection.json {detection_equal}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 trust conservation", c1_trust_conservation),
        ("2 detection", c2_detection),
        ("3 defense benefit", c3_defense_benefit),
        ("4 dynamic scenarios", c4_dynamic_scenarios),
        ("5 aggregation-time ordering", c5_aggregation_time_ordering),
        ("6 overhead formula", c6_overhead),
        ("7 oracle equivalence", c7_oracle_equivalence),
        ("8 gradient correctness", c8_gradient_check),
        ("9 no false exclusions", c9_no_false_exclusions),
        ("10 cli determinism", c10_cli_determinism),
    ];
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failures = BTreeSet::new();
    for (name, check) in criteria {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let result = check();
        let tag = if result.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {name}: {}", result.detail);
        if !result.pass {
            failures.insert(name);
        }
    }
    if !failures.is_empty() {
        eprintln!("{} acceptance criteria failed: {failures:?}", failures.len());
        std::process::exit(1);
    }
}
