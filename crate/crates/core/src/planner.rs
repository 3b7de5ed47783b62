//! End-to-end planning: thresholds, packing, partition search,
//! re-computation, and the naive-to-full comparison ladder.

use serde::{Deserialize, Serialize};

use crate::batcher::{
    baseline_random, derive_thresholds, evaluate_plan, isf_run_with, BalanceReport, BatchLayout,
};
use crate::costmodel::{analytic_profile, ArchConfig, ModelSpec, TowerConfig};
use crate::error::{Error, Result};
use crate::ingest::PlanDoc;
use crate::partition::{
    baseline_partitions, partition_metrics, select_partition, Partition, PartitionMetrics,
    RecomputeMode, SearchConfig, DEFAULT_RADIUS, DEFAULT_TOP_K,
};
use crate::pipesim::{simulate, simulate_varied, SimConfig};
use crate::presets::{ArchPreset, TOKENS_PER_TILE};
use crate::recompute::{greedy_plan, memory_report, RecomputePlan, StageMemory};
use crate::types::{BalanceParams, Dataset, Group};

/// Token counts of one micro-batch as seen by the two towers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MicroBatchShape {
    pub vision_tiles: u64,
    pub text_tokens: u64,
    /// Effective attention length of the language sequence:
    /// `sum(len^2) / sum(len)` over the sequences it holds.
    pub text_span: u64,
}

impl MicroBatchShape {
    pub fn of(group: &Group, layout: BatchLayout) -> Self {
        match layout {
            BatchLayout::Packed => {
                let sq: u64 = group
                    .members()
                    .iter()
                    .map(|s| u64::from(s.text_tokens).pow(2))
                    .sum();
                let total = group.total_text();
                Self {
                    vision_tiles: group.total_vision(),
                    text_tokens: total,
                    text_span: sq.div_ceil(total),
                }
            }
            BatchLayout::Padded => {
                let n = group.len() as u64;
                Self {
                    vision_tiles: group.max_vision() * n,
                    text_tokens: group.max_text() * n,
                    text_span: group.max_text(),
                }
            }
        }
    }

    /// Componentwise maximum.
    pub fn max(self, o: Self) -> Self {
        Self {
            vision_tiles: self.vision_tiles.max(o.vision_tiles),
            text_tokens: self.text_tokens.max(o.text_tokens),
            text_span: self.text_span.max(o.text_span),
        }
    }

    /// Analytic cost profile of `arch` at this shape. Empty streams are
    /// clamped to one token.
    pub fn profile(&self, arch: &ArchConfig) -> Result<ModelSpec> {
        let vision = TowerConfig {
            seq_tokens: (self.vision_tiles * TOKENS_PER_TILE).max(1),
            ..arch.vision
        };
        let language = TowerConfig {
            seq_tokens: self.text_tokens.max(1),
            attention_span: Some(self.text_span.max(1)),
            ..arch.language
        };
        analytic_profile(&arch.with_shape(vision, language))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderConfig {
    pub preset: ArchPreset,
    pub q_text: u32,
    /// Samples per padded micro-batch in the naive step.
    pub baseline_batch_size: usize,
    pub max_iters: u32,
    pub radius: u32,
    pub top_k: usize,
    pub seed: u64,
}

impl LadderConfig {
    pub fn new(preset: ArchPreset) -> Self {
        Self {
            preset,
            q_text: 4096,
            baseline_batch_size: 4,
            max_iters: crate::types::DEFAULT_MAX_ITERS,
            radius: DEFAULT_RADIUS,
            top_k: DEFAULT_TOP_K,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// Seconds to run every micro-batch once: per iteration, the slowest
    /// data-parallel rank's pipeline time, summed over iterations.
    pub epoch_time: f64,
    pub iterations: usize,
    pub micro_batches: usize,
    /// Largest peak seen on each stage.
    pub per_stage_peak_mem: Vec<u64>,
}

/// Deals micro-batch `j` to rank `j % dp`, `dp * M` micro-batches per
/// iteration, and simulates every rank's pipeline.
pub fn epoch_time(
    specs: &[ModelSpec],
    partition: &Partition,
    plan: &RecomputePlan,
    sim: &SimConfig,
    dp: usize,
) -> Result<EpochStats> {
    if dp == 0 {
        return Err(Error::invalid("dp must be at least 1"));
    }
    let per_iter = dp * sim.micro_batches as usize;
    let mut total = 0.0;
    let mut iterations = 0;
    let mut peaks = vec![0u64; partition.n_stages()];
    for chunk in specs.chunks(per_iter) {
        let mut slowest: f64 = 0.0;
        for r in 0..dp.min(chunk.len()) {
            let mine: Vec<ModelSpec> = chunk.iter().skip(r).step_by(dp).cloned().collect();
            let res = simulate_varied(&mine, partition, plan, sim)?;
            slowest = slowest.max(res.iteration_time);
            for (p, q) in peaks.iter_mut().zip(&res.per_stage_peak_mem) {
                *p = (*p).max(*q);
            }
        }
        total += slowest;
        iterations += 1;
    }
    Ok(EpochStats {
        epoch_time: total,
        iterations,
        micro_batches: specs.len(),
        per_stage_peak_mem: peaks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub method: String,
    pub report: BalanceReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionRow {
    pub method: String,
    pub metrics: PartitionMetrics,
    /// Change in boundary traffic relative to the parameter-based split.
    pub delta_sum_comm_mib: f64,
    /// One iteration at the reference shape, all layers recomputed.
    pub sim_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRow {
    pub method: String,
    pub stages: Vec<StageMemory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderStep {
    pub name: String,
    pub epoch_time: f64,
    pub iterations: usize,
    pub micro_batches: usize,
    pub stages_layer_num: Vec<u32>,
    pub recompute_cancelled_per_stage: Vec<u32>,
    pub speedup_vs_naive: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub preset: String,
    pub samples: usize,
    pub params: BalanceParams,
    pub reference_shape: MicroBatchShape,
    pub balance: Vec<BalanceRow>,
    pub partitions: Vec<PartitionRow>,
    pub memory: Vec<MemoryRow>,
    pub ladder: Vec<LadderStep>,
    pub speedup: f64,
}

fn profiles(
    groups: &[Group],
    layout: BatchLayout,
    arch: &ArchConfig,
) -> Result<(Vec<ModelSpec>, MicroBatchShape)> {
    let shapes: Vec<MicroBatchShape> = groups
        .iter()
        .map(|g| MicroBatchShape::of(g, layout))
        .collect();
    let reference = shapes
        .iter()
        .copied()
        .reduce(MicroBatchShape::max)
        .ok_or_else(|| Error::invalid("no micro-batches to plan"))?;
    let specs = shapes
        .iter()
        .map(|s| s.profile(arch))
        .collect::<Result<_>>()?;
    Ok((specs, reference))
}

/// Runs the four configurations (naive, +data, +data+model,
/// +data+model+memory) over `dataset` and returns the comparison report and
/// the final plan, priced at the reference (componentwise maximum) shape.
pub fn plan_full(dataset: &Dataset, cfg: &LadderConfig) -> Result<(RunReport, PlanDoc)> {
    let preset = &cfg.preset;
    let arch = preset.arch;
    let sim = preset.sim_config();
    sim.validate()?;
    let (pp, dp) = (preset.pp, preset.dp);

    let params = match derive_thresholds(dataset, cfg.q_text) {
        Ok(p) => p,
        Err(Error::TextOnly) => BalanceParams::text_only(cfg.q_text),
        Err(e) => return Err(e),
    }
    .with_seed(cfg.seed)
    .with_max_iters(cfg.max_iters);

    let naive_groups = baseline_random(dataset, cfg.baseline_batch_size, dp, cfg.seed)?;
    let packed = isf_run_with(dataset, &params, dp)?;
    let isf_groups = packed.training_groups();

    let mut balance = Vec::new();
    if naive_groups.len() >= dp {
        balance.push(BalanceRow {
            method: "random".into(),
            report: evaluate_plan(&naive_groups, BatchLayout::Padded, dp, TOKENS_PER_TILE)?,
        });
    }
    if isf_groups.len() >= dp {
        balance.push(BalanceRow {
            method: "isf".into(),
            report: evaluate_plan(&isf_groups, BatchLayout::Packed, dp, TOKENS_PER_TILE)?,
        });
    }

    let (naive_specs, _) = profiles(&naive_groups, BatchLayout::Padded, &arch)?;
    let (isf_specs, reference_shape) = profiles(&isf_groups, BatchLayout::Packed, &arch)?;
    let reference = reference_shape.profile(&arch)?;

    let baselines = baseline_partitions(&reference, pp)?;
    let mut search = SearchConfig::new(sim.clone());
    search.radius = cfg.radius;
    search.top_k = cfg.top_k;
    search.recompute = RecomputeMode::Full;
    let bmp = select_partition(&reference, pp, &search)?.best;

    let recompute_all = |p: &Partition| RecomputePlan::all_recompute(&reference, p);
    let mut partitions = Vec::new();
    let mut param_comm = 0.0;
    for (method, p) in [
        ("parameter-based", &baselines.parameter_based),
        ("layer-based", &baselines.layer_based),
        ("profile-based", &baselines.profile_based),
        ("bmp", &bmp),
    ] {
        let metrics = partition_metrics(&reference, p)?;
        if method == "parameter-based" {
            param_comm = metrics.sum_comm_mib;
        }
        let sim_time = simulate(&reference, p, &recompute_all(p)?, &sim)?.iteration_time;
        partitions.push(PartitionRow {
            method: method.into(),
            delta_sum_comm_mib: metrics.sum_comm_mib - param_comm,
            metrics,
            sim_time,
        });
    }

    let layer_based = &baselines.layer_based;
    let adaptive = greedy_plan(&reference, &bmp, &sim)?;
    let steps: [(&str, &[ModelSpec], &Partition, RecomputePlan); 4] = [
        (
            "naive",
            &naive_specs,
            layer_based,
            recompute_all(layer_based)?,
        ),
        (
            "+data",
            &isf_specs,
            layer_based,
            recompute_all(layer_based)?,
        ),
        ("+data+model", &isf_specs, &bmp, recompute_all(&bmp)?),
        ("+data+model+memory", &isf_specs, &bmp, adaptive.clone()),
    ];
    let mut ladder: Vec<LadderStep> = Vec::new();
    for (name, specs, p, plan) in steps {
        let stats = epoch_time(specs, p, &plan, &sim, dp)?;
        let naive_time = ladder.first().map_or(stats.epoch_time, |s| s.epoch_time);
        ladder.push(LadderStep {
            name: name.into(),
            epoch_time: stats.epoch_time,
            iterations: stats.iterations,
            micro_batches: stats.micro_batches,
            stages_layer_num: p.stages_layer_num(),
            recompute_cancelled_per_stage: plan.per_stage_cancelled.clone(),
            speedup_vs_naive: naive_time / stats.epoch_time,
        });
    }

    let memory = vec![
        MemoryRow {
            method: "bmp, all recomputed".into(),
            stages: memory_report(&reference, &bmp, &recompute_all(&bmp)?, &sim)?,
        },
        MemoryRow {
            method: "bmp, adaptive".into(),
            stages: memory_report(&reference, &bmp, &adaptive, &sim)?,
        },
    ];

    let speedup = ladder[3].speedup_vs_naive;
    let report = RunReport {
        preset: preset.name.clone(),
        samples: dataset.len(),
        params,
        reference_shape,
        balance,
        partitions,
        memory,
        ladder,
        speedup,
    };
    let doc = PlanDoc::new(reference, bmp, &adaptive, sim)?;
    Ok((report, doc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Sample;

    fn group(items: &[(u32, u32)]) -> Group {
        Group::new(
            items
                .iter()
                .enumerate()
                .map(|(i, &(v, t))| Sample::new(format!("g{i}"), v, t).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn shapes() {
        let g = group(&[(2, 100), (1, 300)]);
        let packed = MicroBatchShape::of(&g, BatchLayout::Packed);
        assert_eq!(
            packed,
            MicroBatchShape {
                vision_tiles: 3,
                text_tokens: 400,
                text_span: 250
            }
        );
        let padded = MicroBatchShape::of(&g, BatchLayout::Padded);
        assert_eq!(
            padded,
            MicroBatchShape {
                vision_tiles: 4,
                text_tokens: 600,
                text_span: 300
            }
        );
    }

    #[test]
    fn epoch_sums_slowest_rank() {
        let spec = ModelSpec::uniform(4, 1e6, 0).unwrap();
        let mut slow = spec.clone();
        slow.layers.iter_mut().for_each(|l| l.fwd_time *= 2.0);
        let p = Partition::new(vec![3], 4).unwrap();
        let plan = RecomputePlan::all_stored(&spec, &p).unwrap();
        let sim = SimConfig::ideal(1);
        let one = simulate(&spec, &p, &plan, &sim).unwrap().iteration_time;
        let two = simulate(&slow, &p, &plan, &sim).unwrap().iteration_time;
        let stats = epoch_time(&[spec.clone(), slow, spec], &p, &plan, &sim, 2).unwrap();
        assert_eq!(stats.iterations, 2);
        assert!((stats.epoch_time - (two + one)).abs() < 1e-9);
    }
}
