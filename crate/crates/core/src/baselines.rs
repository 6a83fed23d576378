//! Reference aggregators: FedAvg, coordinate-wise median, trimmed mean and
//! Multi-Krum.

use std::fmt;

use crate::error::{Error, Result};
use crate::model::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AggregatorSpec {
    FedAvg,
    Median,
    TrimmedMean { trim_ratio: f64 },
    MultiKrum { num_byzantine: usize, num_selected: usize },
}

impl AggregatorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AggregatorSpec::FedAvg => "fedavg",
            AggregatorSpec::Median => "median",
            AggregatorSpec::TrimmedMean { .. } => "trimmed_mean",
            AggregatorSpec::MultiKrum { .. } => "multi_krum",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let AggregatorSpec::TrimmedMean { trim_ratio } = *self {
            if !(0.0..0.5).contains(&trim_ratio) {
                return Err(Error::InvalidArgument(format!(
                    "trim_ratio must lie in [0, 0.5), got {trim_ratio}"
                )));
            }
        }
        if let AggregatorSpec::MultiKrum { num_selected: 0, .. } = *self {
            return Err(Error::InvalidArgument("num_selected must be at least 1".into()));
        }
        Ok(())
    }

    /// Aggregates `models`; `weights` are sample counts, used by FedAvg only.
    pub fn aggregate(&self, models: &[&ParamVector], weights: &[f64]) -> Result<ParamVector> {
        match *self {
            AggregatorSpec::FedAvg => fedavg(models, weights),
            AggregatorSpec::Median => coordinate_median(models),
            AggregatorSpec::TrimmedMean { trim_ratio } => trimmed_mean(models, trim_ratio),
            AggregatorSpec::MultiKrum {
                num_byzantine,
                num_selected,
            } => multi_krum(models, num_byzantine, num_selected),
        }
    }
}

impl fmt::Display for AggregatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn check_models(models: &[&ParamVector]) -> Result<usize> {
    let first = models.first().ok_or(Error::EmptyModels)?;
    for m in &models[1..] {
        if m.arch() != first.arch() {
            return Err(Error::ArchMismatch);
        }
    }
    Ok(first.len())
}

fn from_values(template: &ParamVector, values: Vec<f64>) -> Result<ParamVector> {
    ParamVector::new(template.arch(), values)
}

/// Sample-count weighted coordinate-wise mean.
pub fn fedavg(models: &[&ParamVector], weights: &[f64]) -> Result<ParamVector> {
    let dim = check_models(models)?;
    if weights.len() != models.len() {
        return Err(Error::DimensionMismatch {
            expected: models.len(),
            actual: weights.len(),
        });
    }
    if weights.iter().any(|&w| !(w >= 0.0)) {
        return Err(Error::InvalidArgument("fedavg weights must be non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("fedavg weights must have a positive sum".into()));
    }
    let mut out = vec![0.0; dim];
    for (m, &w) in models.iter().zip(weights) {
        let scale = w / total;
        for (o, v) in out.iter_mut().zip(m.values()) {
            *o += scale * v;
        }
    }
    from_values(models[0], out)
}

/// Coordinates sorted together per block.
const BLOCK: usize = 256;

/// Comparator pairs `(i, j)`, `i < j`, of Batcher's odd-even merge sort on
/// `n` inputs. Comparators touching indices past `n` are dropped, which is
/// equivalent to padding with +inf.
pub fn merge_network(n: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    let mut p = 1;
    while p < n {
        let mut k = p;
        while k >= 1 {
            let mut j = k % p;
            while j + k < n {
                for i in 0..k.min(n - j - k) {
                    if (i + j) / (2 * p) == (i + j + k) / (2 * p) {
                        pairs.push((i + j, i + j + k));
                    }
                }
                j += 2 * k;
            }
            k /= 2;
        }
        p *= 2;
    }
    pairs
}

/// Sorts every coordinate's column across `models` and hands each block of
/// sorted rows (row `k` holds the `k`-th smallest value per coordinate) to
/// `reduce` along with its output slice.
fn reduce_sorted_columns(
    models: &[&ParamVector],
    mut reduce: impl FnMut(&[&[f64]], &mut [f64]),
) -> Result<ParamVector> {
    let dim = check_models(models)?;
    let n = models.len();
    let network = merge_network(n);
    let mut scratch = vec![0.0; n * BLOCK];
    let mut out = vec![0.0; dim];
    for start in (0..dim).step_by(BLOCK) {
        let len = BLOCK.min(dim - start);
        for (k, m) in models.iter().enumerate() {
            scratch[k * BLOCK..k * BLOCK + len].copy_from_slice(&m.values()[start..start + len]);
        }
        // Values are finite, so a plain select is an exact compare-exchange
        // and lowers to packed min/max.
        for &(i, j) in &network {
            let (lo, hi) = scratch.split_at_mut(j * BLOCK);
            let a = &mut lo[i * BLOCK..i * BLOCK + len];
            for (x, y) in a.iter_mut().zip(&mut hi[..len]) {
                let (small, large) = if *y < *x { (*y, *x) } else { (*x, *y) };
                *x = small;
                *y = large;
            }
        }
        let rows: Vec<&[f64]> = (0..n).map(|k| &scratch[k * BLOCK..k * BLOCK + len]).collect();
        reduce(&rows, &mut out[start..start + len]);
    }
    from_values(models[0], out)
}

/// Per-coordinate median; even counts average the two central values.
pub fn coordinate_median(models: &[&ParamVector]) -> Result<ParamVector> {
    let n = models.len();
    reduce_sorted_columns(models, |rows, out| {
        if n % 2 == 1 {
            out.copy_from_slice(rows[n / 2]);
        } else {
            for ((o, lo), hi) in out.iter_mut().zip(rows[n / 2 - 1]).zip(rows[n / 2]) {
                *o = (lo + hi) / 2.0;
            }
        }
    })
}

/// Drops the `⌊trim_ratio · n⌋` smallest and largest values per coordinate
/// and averages the rest.
pub fn trimmed_mean(models: &[&ParamVector], trim_ratio: f64) -> Result<ParamVector> {
    check_models(models)?;
    if !(0.0..0.5).contains(&trim_ratio) {
        return Err(Error::InvalidArgument(format!(
            "trim_ratio must lie in [0, 0.5), got {trim_ratio}"
        )));
    }
    let n = models.len();
    let trim = (trim_ratio * n as f64).floor() as usize;
    if n < 2 * trim + 1 {
        return Err(Error::TooFewParticipants(format!(
            "trimming {trim} from each end of {n} values leaves nothing"
        )));
    }
    let kept = (n - 2 * trim) as f64;
    reduce_sorted_columns(models, |rows, out| {
        out.iter_mut().for_each(|o| *o = 0.0);
        for row in &rows[trim..n - trim] {
            for (o, v) in out.iter_mut().zip(*row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= kept);
    })
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Krum scores: sum of squared distances to the `n - f - 2` nearest others.
pub fn krum_scores(models: &[&ParamVector], num_byzantine: usize) -> Result<Vec<f64>> {
    check_models(models)?;
    let n = models.len();
    let neighbours = n
        .checked_sub(num_byzantine + 2)
        .filter(|&k| k >= 1)
        .ok_or_else(|| {
            Error::TooFewParticipants(format!(
                "multi-krum with f = {num_byzantine} needs at least {} participants, got {n}",
                num_byzantine + 3
            ))
        })?;
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = squared_distance(models[i].values(), models[j].values());
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut row = Vec::with_capacity(n - 1);
    Ok((0..n)
        .map(|i| {
            row.clear();
            row.extend((0..n).filter(|&j| j != i).map(|j| dist[i * n + j]));
            row.sort_unstable_by(f64::total_cmp);
            row[..neighbours].iter().sum()
        })
        .collect())
}

/// Indices of the `num_selected` lowest Krum scores, ties to the lower index.
pub fn multi_krum_select(
    models: &[&ParamVector],
    num_byzantine: usize,
    num_selected: usize,
) -> Result<Vec<usize>> {
    let scores = krum_scores(models, num_byzantine)?;
    let n = models.len();
    if num_selected < 1 || num_selected > n - num_byzantine {
        return Err(Error::TooFewParticipants(format!(
            "cannot select {num_selected} of {n} models with f = {num_byzantine}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    order.truncate(num_selected);
    order.sort_unstable();
    Ok(order)
}

/// Unweighted mean of the Multi-Krum selection.
pub fn multi_krum(
    models: &[&ParamVector],
    num_byzantine: usize,
    num_selected: usize,
) -> Result<ParamVector> {
    let selected = multi_krum_select(models, num_byzantine, num_selected)?;
    let chosen: Vec<&ParamVector> = selected.iter().map(|&i| models[i]).collect();
    let weights = vec![1.0; chosen.len()];
    fedavg(&chosen, &weights)
}
