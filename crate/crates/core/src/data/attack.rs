use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::LabeledDataset;
use crate::error::{Error, Result};

/// Source class to target class relabelling, applied simultaneously.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FlipMap {
    pairs: BTreeMap<usize, usize>,
}

impl FlipMap {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(pairs: impl IntoIterator<Item = (usize, usize)>, num_classes: usize) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (source, target) in pairs {
            if source >= num_classes || target >= num_classes {
                return Err(Error::LabelRange {
                    label: source.max(target),
                    num_classes,
                });
            }
            if source == target {
                return Err(Error::InvalidArgument(format!(
                    "flip {source}->{target} maps a class to itself"
                )));
            }
            if map.insert(source, target).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "class {source} appears twice as a flip source"
                )));
            }
        }
        Ok(Self { pairs: map })
    }

    /// Every class `s` relabelled as `(s + 1) mod num_classes`.
    pub fn rotation(num_classes: usize) -> Result<Self> {
        Self::new((0..num_classes).map(|s| (s, (s + 1) % num_classes)), num_classes)
    }

    /// Parses `rotation`, `none`, or a comma list such as `0:2,1:0`.
    pub fn parse(text: &str, num_classes: usize) -> Result<Self> {
        let text = text.trim();
        match text {
            "rotation" => return Self::rotation(num_classes),
            "" | "none" => return Ok(Self::empty()),
            _ => {}
        }
        let pairs = text
            .split(',')
            .map(|pair| {
                let (s, t) = pair.split_once(':').ok_or_else(|| {
                    Error::InvalidArgument(format!("flip pair `{pair}` is not of the form s:t"))
                })?;
                let parse = |v: &str| {
                    v.trim().parse::<usize>().map_err(|_| {
                        Error::InvalidArgument(format!("flip pair `{pair}` has a non-integer class"))
                    })
                };
                Ok((parse(s)?, parse(t)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(pairs, num_classes)
    }

    pub fn target(&self, label: usize) -> Option<usize> {
        self.pairs.get(&label).copied()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pairs.iter().map(|(&s, &t)| (s, t))
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn max_class(&self) -> Option<usize> {
        self.pairs.iter().map(|(&s, &t)| s.max(t)).max()
    }
}

impl fmt::Display for FlipMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.pairs.is_empty() {
            return f.write_str("none");
        }
        let parts: Vec<String> = self.pairs().map(|(s, t)| format!("{s}:{t}")).collect();
        f.write_str(&parts.join(","))
    }
}

/// Returns a relabelled copy; features are shared unchanged.
pub fn apply_flip(data: &LabeledDataset, flips: &FlipMap) -> Result<LabeledDataset> {
    if let Some(max) = flips.max_class() {
        if max >= data.num_classes() {
            return Err(Error::LabelRange {
                label: max,
                num_classes: data.num_classes(),
            });
        }
    }
    let labels = data
        .labels()
        .iter()
        .map(|&y| flips.target(y).unwrap_or(y))
        .collect();
    Ok(data.with_labels(labels))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackSchedule {
    Constant,
    /// Attacks from `start_round` onwards.
    Delayed { start_round: usize },
    /// Attacks on rounds that are multiples of `period`.
    Periodic { period: usize },
}

impl AttackSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AttackSchedule::Delayed { start_round: 0 } => {
                Err(Error::InvalidArgument("start_round must be at least 1".into()))
            }
            AttackSchedule::Periodic { period: 0 } => {
                Err(Error::InvalidArgument("period must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Rounds are numbered from 1.
pub fn is_attacking(schedule: AttackSchedule, round: usize) -> bool {
    match schedule {
        AttackSchedule::Constant => true,
        AttackSchedule::Delayed { start_round } => round >= start_round,
        AttackSchedule::Periodic { period } => round.is_multiple_of(period),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackPlan {
    pub malicious_ids: BTreeSet<usize>,
    pub flip_map: FlipMap,
    pub schedule: AttackSchedule,
}

impl AttackPlan {
    pub fn none() -> Self {
        Self {
            malicious_ids: BTreeSet::new(),
            flip_map: FlipMap::empty(),
            schedule: AttackSchedule::Constant,
        }
    }

    pub fn new(
        malicious_ids: BTreeSet<usize>,
        flip_map: FlipMap,
        schedule: AttackSchedule,
        num_clients: usize,
        max_fraction: f64,
    ) -> Result<Self> {
        schedule.validate()?;
        if let Some(&bad) = malicious_ids.iter().find(|&&id| id >= num_clients) {
            return Err(Error::InvalidArgument(format!(
                "malicious client {bad} does not exist among {num_clients} clients"
            )));
        }
        let fraction = malicious_ids.len() as f64 / num_clients as f64;
        if fraction > max_fraction {
            return Err(Error::InvalidArgument(format!(
                "malicious fraction {fraction} exceeds bound {max_fraction}"
            )));
        }
        Ok(Self {
            malicious_ids,
            flip_map,
            schedule,
        })
    }

    /// Whether `client` trains on poisoned labels in `round`.
    pub fn poisons(&self, client: usize, round: usize) -> bool {
        self.malicious_ids.contains(&client)
            && !self.flip_map.is_empty()
            && is_attacking(self.schedule, round)
    }
}
