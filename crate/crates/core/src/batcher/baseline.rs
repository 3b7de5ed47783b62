use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{fisher_yates, seeded_rng};
use crate::error::{Error, Result};
use crate::types::{Dataset, Group, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineStrategy {
    Random,
    Sorted,
    DeviceGroup,
}

impl FromStr for BaselineStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "sorted" => Ok(Self::Sorted),
            "device-group" => Ok(Self::DeviceGroup),
            _ => Err(Error::Unknown {
                kind: "batching strategy",
                name: s.to_owned(),
            }),
        }
    }
}

fn check(batch_size: usize, dp_ranks: usize) -> Result<()> {
    if batch_size == 0 || dp_ranks == 0 {
        return Err(Error::invalid("batch_size and dp_ranks must be at least 1"));
    }
    Ok(())
}

fn chunk(samples: Vec<Sample>, batch_size: usize) -> Vec<Group> {
    samples
        .chunks(batch_size)
        .map(|c| Group::new(c.to_vec()).expect("chunks are non-empty"))
        .collect()
}

fn sorted_samples(dataset: &Dataset) -> Vec<Sample> {
    let mut s = dataset.samples().to_vec();
    s.sort_by(|a, b| {
        (a.text_tokens, a.vision_units)
            .cmp(&(b.text_tokens, b.vision_units))
            .then(a.id.cmp(&b.id))
    });
    s
}

/// Seeded shuffle, then consecutive batches of `batch_size`.
pub fn baseline_random(
    dataset: &Dataset,
    batch_size: usize,
    dp_ranks: usize,
    seed: u64,
) -> Result<Vec<Group>> {
    check(batch_size, dp_ranks)?;
    let mut s = dataset.samples().to_vec();
    fisher_yates(&mut s, &mut seeded_rng(seed));
    Ok(chunk(s, batch_size))
}

/// Sort by (text, vision), chunk, then shuffle the batch order so a step
/// mixes batches from different parts of the length distribution.
pub fn baseline_sorted(
    dataset: &Dataset,
    batch_size: usize,
    dp_ranks: usize,
    seed: u64,
) -> Result<Vec<Group>> {
    check(batch_size, dp_ranks)?;
    let mut batches = chunk(sorted_samples(dataset), batch_size);
    fisher_yates(&mut batches, &mut seeded_rng(seed));
    Ok(batches)
}

/// Sort by (text, vision), chunk, and keep `dp_ranks` neighbouring chunks
/// together in one step; only the step order is shuffled.
pub fn baseline_device_group(
    dataset: &Dataset,
    batch_size: usize,
    dp_ranks: usize,
    seed: u64,
) -> Result<Vec<Group>> {
    check(batch_size, dp_ranks)?;
    let batches = chunk(sorted_samples(dataset), batch_size);
    let mut steps: Vec<Vec<Group>> = batches.chunks(dp_ranks).map(<[Group]>::to_vec).collect();
    fisher_yates(&mut steps, &mut seeded_rng(seed));
    Ok(steps.into_iter().flatten().collect())
}

pub fn baseline_batches(
    strategy: BaselineStrategy,
    dataset: &Dataset,
    batch_size: usize,
    dp_ranks: usize,
    seed: u64,
) -> Result<Vec<Group>> {
    match strategy {
        BaselineStrategy::Random => baseline_random(dataset, batch_size, dp_ranks, seed),
        BaselineStrategy::Sorted => baseline_sorted(dataset, batch_size, dp_ranks, seed),
        BaselineStrategy::DeviceGroup => baseline_device_group(dataset, batch_size, dp_ranks, seed),
    }
}
