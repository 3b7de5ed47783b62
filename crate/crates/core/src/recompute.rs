//! Per-layer re-computation choices under a per-device memory budget.

use serde::{Deserialize, Serialize};

use crate::costmodel::ModelSpec;
use crate::error::{Error, Result};
use crate::partition::Partition;
use crate::pipesim::{in_flight, simulate, stage_peak_memory, SimConfig, SimResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerMode {
    /// Only the layer input is kept; the layer is re-run before its backward.
    Recompute,
    /// All intermediate activations are kept.
    Store,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecomputePlan {
    /// Mode of layer `i` at position `i - 1`.
    pub per_layer: Vec<LayerMode>,
    /// Layers per stage whose re-computation is cancelled (stored).
    pub per_stage_cancelled: Vec<u32>,
}

impl RecomputePlan {
    fn build(partition: &Partition, per_layer: Vec<LayerMode>) -> Self {
        let per_stage_cancelled = partition
            .stage_ranges()
            .into_iter()
            .map(|r| {
                r.filter(|&i| per_layer[i as usize - 1] == LayerMode::Store)
                    .count() as u32
            })
            .collect();
        Self {
            per_layer,
            per_stage_cancelled,
        }
    }

    /// Every layer recomputed: the most memory-frugal plan.
    pub fn all_recompute(spec: &ModelSpec, partition: &Partition) -> Result<Self> {
        partition.check_against(spec)?;
        Ok(Self::build(
            partition,
            vec![LayerMode::Recompute; spec.layers.len()],
        ))
    }

    pub fn all_stored(spec: &ModelSpec, partition: &Partition) -> Result<Self> {
        partition.check_against(spec)?;
        Ok(Self::build(
            partition,
            vec![LayerMode::Store; spec.layers.len()],
        ))
    }

    /// Stores exactly the listed 1-based layers and recomputes the rest.
    pub fn from_stored(partition: &Partition, stored: &[u32]) -> Result<Self> {
        let l = partition.num_layers();
        let mut per_layer = vec![LayerMode::Recompute; l as usize];
        for &i in stored {
            if i == 0 || i > l {
                return Err(Error::invalid(format!("stored layer {i} outside 1..={l}")));
            }
            if per_layer[i as usize - 1] == LayerMode::Store {
                return Err(Error::invalid(format!("stored layer {i} listed twice")));
            }
            per_layer[i as usize - 1] = LayerMode::Store;
        }
        Ok(Self::build(partition, per_layer))
    }

    pub fn is_stored(&self, layer: u32) -> bool {
        self.per_layer[layer as usize - 1] == LayerMode::Store
    }

    pub fn stored_layers(&self) -> Vec<u32> {
        (1..=self.per_layer.len() as u32)
            .filter(|&i| self.is_stored(i))
            .collect()
    }

    pub fn check_against(&self, spec: &ModelSpec, partition: &Partition) -> Result<()> {
        if self.per_layer.len() != spec.layers.len() {
            return Err(Error::invalid(format!(
                "re-computation plan covers {} layers but the model has {}",
                self.per_layer.len(),
                spec.layers.len()
            )));
        }
        if *self != Self::build(partition, self.per_layer.clone()) {
            return Err(Error::invalid(
                "re-computation counts do not match the partition",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecomputeOutcome {
    pub plan: RecomputePlan,
    pub result: SimResult,
}

/// `(layer, extra resident bytes, forward time)` of one candidate.
type Item = (u32, u64, f64);

/// Walks `order` storing every item that still fits, starting with `seed`.
fn fill(order: &[Item], slack: u64, seed: Option<usize>) -> (Vec<u32>, f64) {
    let mut slack = slack;
    let mut stored = Vec::new();
    let mut saved = 0.0;
    let mut take = |&(i, extra, fwd): &Item, slack: &mut u64| {
        if extra <= *slack {
            *slack -= extra;
            stored.push(i);
            saved += fwd;
        }
    };
    if let Some(s) = seed {
        take(&order[s], &mut slack);
    }
    for (pos, item) in order.iter().enumerate() {
        if Some(pos) != seed {
            take(item, &mut slack);
        }
    }
    (stored, saved)
}

/// Chooses which layers to store. Per stage, starting from all-recompute,
/// layers are taken in descending order of forward time saved per extra
/// resident byte (`fwd / (in_flight * (full - ckpt))`, free layers first,
/// lower index on ties) and stored whenever the stage peak stays within
/// the budget. The same pass is repeated with each layer forced in first;
/// the stage keeps whichever set saves the most forward time (the plain
/// pass wins ties, then the lower forced index).
pub fn greedy_plan(
    spec: &ModelSpec,
    partition: &Partition,
    cfg: &SimConfig,
) -> Result<RecomputePlan> {
    let base = RecomputePlan::all_recompute(spec, partition)?;
    let peaks = stage_peak_memory(spec, partition, &base, cfg)?;
    if let Some(stage) = peaks.iter().position(|&p| p > cfg.device_memory) {
        return Err(Error::Infeasible {
            stage,
            peak: peaks[stage],
            budget: cfg.device_memory,
        });
    }
    let n = partition.n_stages();
    let mut per_layer = base.per_layer;
    for (k, range) in partition.stage_ranges().into_iter().enumerate() {
        let depth = in_flight(k, n, cfg.micro_batches as usize) as u64;
        let slack = cfg.device_memory - peaks[k];
        let mut order: Vec<Item> = range
            .map(|i| {
                let l = spec.layer(i);
                let extra = depth.saturating_mul(l.act_mem_full - l.act_mem_ckpt);
                (i, extra, l.fwd_time)
            })
            .collect();
        order.sort_by(|a, b| {
            // a.fwd / a.extra > b.fwd / b.extra, cross-multiplied so that
            // zero-extra layers compare as infinitely dense.
            let lhs = a.2 * b.1 as f64;
            let rhs = b.2 * a.1 as f64;
            rhs.total_cmp(&lhs).then(a.0.cmp(&b.0))
        });
        let mut best = fill(&order, slack, None);
        let mut seeds: Vec<usize> = (0..order.len()).filter(|&s| order[s].1 <= slack).collect();
        seeds.sort_by_key(|&s| order[s].0);
        for s in seeds {
            let cand = fill(&order, slack, Some(s));
            if cand.1 > best.1 {
                best = cand;
            }
        }
        for i in best.0 {
            per_layer[i as usize - 1] = LayerMode::Store;
        }
    }
    Ok(RecomputePlan::build(partition, per_layer))
}

/// Greedy plan plus its simulated iteration.
pub fn optimize(
    spec: &ModelSpec,
    partition: &Partition,
    cfg: &SimConfig,
) -> Result<RecomputeOutcome> {
    cfg.validate()?;
    let plan = greedy_plan(spec, partition, cfg)?;
    let result = simulate(spec, partition, &plan, cfg)?;
    Ok(RecomputeOutcome { plan, result })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMemory {
    pub stage: usize,
    pub peak_mem: u64,
    /// Budget minus peak; negative when the stage overflows.
    pub remaining_mem: i64,
}

pub fn memory_report(
    spec: &ModelSpec,
    partition: &Partition,
    plan: &RecomputePlan,
    cfg: &SimConfig,
) -> Result<Vec<StageMemory>> {
    if spec.layers.is_empty() {
        return Ok(Vec::new());
    }
    let peaks = stage_peak_memory(spec, partition, plan, cfg)?;
    Ok(peaks
        .into_iter()
        .enumerate()
        .map(|(stage, peak_mem)| StageMemory {
            stage,
            peak_mem,
            remaining_mem: (i128::from(cfg.device_memory) - i128::from(peak_mem))
                .clamp(i128::from(i64::MIN), i128::from(i64::MAX))
                as i64,
        })
        .collect())
}
