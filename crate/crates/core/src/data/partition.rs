use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::seed::{rng_from, SimRng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartitionKind {
    Iid,
    /// Class-wise Dirichlet split across clients.
    Dirichlet { concentration: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionSpec {
    pub kind: PartitionKind,
    pub num_clients: usize,
}

impl PartitionSpec {
    pub fn iid(num_clients: usize) -> Self {
        Self {
            kind: PartitionKind::Iid,
            num_clients,
        }
    }

    pub fn dirichlet(num_clients: usize, concentration: f64) -> Self {
        Self {
            kind: PartitionKind::Dirichlet { concentration },
            num_clients,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clients < 2 {
            return Err(Error::InvalidArgument("num_clients must be at least 2".into()));
        }
        if let PartitionKind::Dirichlet { concentration } = self.kind {
            if !(concentration > 0.0 && concentration.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "dirichlet concentration must be positive, got {concentration}"
                )));
            }
        }
        Ok(())
    }
}

const MAX_DIRICHLET_DRAWS: usize = 1000;

/// Splits sample indices into one disjoint shard per client.
pub fn partition_indices(
    data: &LabeledDataset,
    spec: &PartitionSpec,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    spec.validate()?;
    if data.len() < spec.num_clients {
        return Err(Error::TooFewSamples {
            samples: data.len(),
            clients: spec.num_clients,
        });
    }
    let mut rng = rng_from(seed);
    match spec.kind {
        PartitionKind::Iid => Ok(iid_split(data.len(), spec.num_clients, &mut rng)),
        PartitionKind::Dirichlet { concentration } => {
            // Redraw until every client holds at least one sample.
            for _ in 0..MAX_DIRICHLET_DRAWS {
                let shards = dirichlet_split(data, spec.num_clients, concentration, &mut rng);
                if shards.iter().all(|s| !s.is_empty()) {
                    return Ok(shards);
                }
            }
            Err(Error::TooFewSamples {
                samples: data.len(),
                clients: spec.num_clients,
            })
        }
    }
}

pub fn partition(
    data: &LabeledDataset,
    spec: &PartitionSpec,
    seed: u64,
) -> Result<Vec<LabeledDataset>> {
    Ok(partition_indices(data, spec, seed)?
        .iter()
        .map(|idx| data.subset(idx))
        .collect())
}

fn iid_split(n: usize, clients: usize, rng: &mut SimRng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let base = n / clients;
    let extra = n % clients;
    let mut shards = Vec::with_capacity(clients);
    let mut start = 0;
    for c in 0..clients {
        let size = base + usize::from(c < extra);
        shards.push(order[start..start + size].to_vec());
        start += size;
    }
    shards
}

fn dirichlet_split(
    data: &LabeledDataset,
    clients: usize,
    concentration: f64,
    rng: &mut SimRng,
) -> Vec<Vec<usize>> {
    let gamma = Gamma::new(concentration, 1.0).expect("concentration validated");
    let mut by_class = vec![Vec::new(); data.num_classes()];
    for (i, &label) in data.labels().iter().enumerate() {
        by_class[label].push(i);
    }
    let mut shards = vec![Vec::new(); clients];
    for mut members in by_class {
        if members.is_empty() {
            continue;
        }
        members.shuffle(rng);
        let draws: Vec<f64> = (0..clients).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if !(total > 0.0) {
            // Every draw underflowed; hand the class to one client.
            let owner = rng.random_range(0..clients);
            shards[owner].extend(members);
            continue;
        }
        // Cumulative rounding keeps the counts summing to the class size.
        let n = members.len() as f64;
        let mut cumulative = 0.0;
        let mut start = 0;
        for (c, d) in draws.iter().enumerate() {
            cumulative += d / total;
            let end = if c + 1 == clients {
                members.len()
            } else {
                ((cumulative * n).round() as usize).clamp(start, members.len())
            };
            shards[c].extend_from_slice(&members[start..end]);
            start = end;
        }
    }
    shards
}
