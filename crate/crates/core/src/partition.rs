//! Pipeline stage partitioning: greedy anchor, jittered candidates,
//! variance/communication ranking and top-K selection by simulated time.

use std::cmp::Ordering;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costmodel::{stage_costs, ModelSpec};
use crate::error::{Error, Result};
use crate::pipesim::{simulate, SimConfig};
use crate::recompute::{self, RecomputePlan};

/// Stage boundaries over a stack of `num_layers` layers. Stage `i` owns the
/// 1-based layers `[cuts[i-1], cuts[i])`, with implicit bounds 1 and `L+1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "PartitionRepr", into = "PartitionRepr")]
pub struct Partition {
    cuts: Vec<u32>,
    num_layers: u32,
}

#[derive(Serialize, Deserialize)]
struct PartitionRepr {
    cuts: Vec<u32>,
    num_layers: u32,
}

impl TryFrom<PartitionRepr> for Partition {
    type Error = Error;

    fn try_from(r: PartitionRepr) -> Result<Self> {
        Partition::new(r.cuts, r.num_layers)
    }
}

impl From<Partition> for PartitionRepr {
    fn from(p: Partition) -> Self {
        PartitionRepr {
            cuts: p.cuts,
            num_layers: p.num_layers,
        }
    }
}

impl Partition {
    pub fn new(cuts: Vec<u32>, num_layers: u32) -> Result<Self> {
        if num_layers == 0 {
            return Err(Error::InvalidPartition("model has no layers".into()));
        }
        if !Self::cuts_valid(&cuts, num_layers) {
            return Err(Error::InvalidPartition(format!(
                "cuts {cuts:?} must be strictly increasing within 2..={num_layers}"
            )));
        }
        Ok(Self { cuts, num_layers })
    }

    fn cuts_valid(cuts: &[u32], num_layers: u32) -> bool {
        cuts.first().is_none_or(|&c| c > 1)
            && cuts.last().is_none_or(|&c| c <= num_layers)
            && cuts.windows(2).all(|w| w[0] < w[1])
    }

    /// Builds a partition from per-stage layer counts, e.g. `[22, 23, 24, 24]`.
    pub fn from_stage_sizes(sizes: &[u32]) -> Result<Self> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(Error::InvalidPartition(
                "every stage needs at least one layer".into(),
            ));
        }
        let mut cuts = Vec::with_capacity(sizes.len() - 1);
        let mut next = 1;
        for &s in &sizes[..sizes.len() - 1] {
            next += s;
            cuts.push(next);
        }
        Self::new(cuts, sizes.iter().sum())
    }

    pub fn cuts(&self) -> &[u32] {
        &self.cuts
    }

    pub fn num_layers(&self) -> u32 {
        self.num_layers
    }

    pub fn n_stages(&self) -> usize {
        self.cuts.len() + 1
    }

    /// Half-open 1-based layer range of every stage.
    pub fn stage_ranges(&self) -> Vec<Range<u32>> {
        let mut bounds = Vec::with_capacity(self.cuts.len() + 2);
        bounds.push(1);
        bounds.extend_from_slice(&self.cuts);
        bounds.push(self.num_layers + 1);
        bounds.windows(2).map(|w| w[0]..w[1]).collect()
    }

    pub fn stages_layer_num(&self) -> Vec<u32> {
        self.stage_ranges()
            .iter()
            .map(|r| r.end - r.start)
            .collect()
    }

    /// 0-based stage owning a 1-based layer.
    pub fn stage_of(&self, layer: u32) -> usize {
        self.cuts.partition_point(|&c| c <= layer)
    }

    pub fn check_against(&self, spec: &ModelSpec) -> Result<()> {
        if self.num_layers != spec.num_layers() {
            return Err(Error::InvalidPartition(format!(
                "partition covers {} layers but the model has {}",
                self.num_layers,
                spec.num_layers()
            )));
        }
        Ok(())
    }
}

/// Greedy sequential split of `weights` into `n_stages` contiguous stages.
/// Each stage targets an equal share of what remains and keeps taking layers
/// while that moves its total strictly closer to the target; enough layers
/// are always left for the stages still to come.
pub fn balanced_split(weights: &[f64], n_stages: usize) -> Result<Partition> {
    let l = weights.len();
    if n_stages == 0 || n_stages > l {
        return Err(Error::InvalidPartition(format!(
            "cannot split {l} layers into {n_stages} non-empty stages"
        )));
    }
    let mut cuts = Vec::with_capacity(n_stages - 1);
    let mut start = 0;
    let mut remaining: f64 = weights.iter().sum();
    for stage in 0..n_stages - 1 {
        let stages_left = n_stages - stage;
        let target = remaining / stages_left as f64;
        let last_allowed = l - (stages_left - 1);
        let mut end = start + 1;
        let mut acc = weights[start];
        while end < last_allowed && (acc + weights[end] - target).abs() < (acc - target).abs() {
            acc += weights[end];
            end += 1;
        }
        remaining -= acc;
        cuts.push(end as u32 + 1);
        start = end;
    }
    Partition::new(cuts, l as u32)
}

/// Greedy split balancing per-stage forward time.
pub fn anchor_partition(spec: &ModelSpec, n_stages: usize) -> Result<Partition> {
    balanced_split(&spec.fwd_times(), n_stages)
}

/// Candidates before validity filtering: `(2r + 1)^(N - 1)`.
pub fn jitter_raw_count(n_stages: usize, radius: u32) -> u128 {
    u128::from(2 * radius + 1).pow(n_stages.saturating_sub(1) as u32)
}

/// Every combination of per-cut offsets in `-r..=r`, keeping valid
/// partitions only. Odometer order, first cut varying slowest; the anchor is
/// always included.
pub fn jitter_candidates(
    anchor: &Partition,
    radius: u32,
    spec: &ModelSpec,
) -> Result<Vec<Partition>> {
    anchor.check_against(spec)?;
    let base = anchor.cuts();
    let r = i64::from(radius);
    let mut offsets = vec![-r; base.len()];
    let mut out = Vec::new();
    loop {
        let cuts: Option<Vec<u32>> = base
            .iter()
            .zip(&offsets)
            .map(|(&c, &o)| u32::try_from(i64::from(c) + o).ok())
            .collect();
        if let Some(cuts) = cuts {
            if Partition::cuts_valid(&cuts, anchor.num_layers) {
                out.push(Partition {
                    cuts,
                    num_layers: anchor.num_layers,
                });
            }
        }
        let Some(pos) = offsets.iter().rposition(|&o| o < r) else {
            break;
        };
        offsets[pos] += 1;
        for o in &mut offsets[pos + 1..] {
            *o = -r;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub w_var: f64,
    pub w_comm: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self {
            w_var: 1.0,
            w_comm: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub partition: Partition,
    /// Sum of squared deviations of stage forward times from their mean (us^2).
    pub var_fwd: f64,
    /// Bytes crossing all stage boundaries.
    pub sum_comm: u64,
    pub combined_score: f64,
}

/// Sum of squared deviations from the mean, accumulated in one pass.
pub fn sum_sq_dev(xs: &[f64]) -> f64 {
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    m2
}

/// `(x - min) / (max - min)`, or 0 when every value is the same.
fn min_max(x: f64, min: f64, max: f64) -> f64 {
    if max > min {
        (x - min) / (max - min)
    } else {
        0.0
    }
}

/// Scores candidates by forward-time variance plus communication volume,
/// each min-max normalized over the batch.
/// Sorted ascending; ties fall back to the cut list.
pub fn rank_candidates(
    cands: &[Partition],
    spec: &ModelSpec,
    weights: ScoreWeights,
) -> Result<Vec<RankedCandidate>> {
    if cands.is_empty() {
        return Err(Error::invalid("no candidates to rank"));
    }
    let mut ranked = cands
        .iter()
        .map(|p| {
            let costs = stage_costs(spec, p)?;
            let fwd: Vec<f64> = costs.stages.iter().map(|s| s.fwd_time).collect();
            Ok(RankedCandidate {
                partition: p.clone(),
                var_fwd: sum_sq_dev(&fwd),
                sum_comm: costs.boundary_activation.iter().sum(),
                combined_score: 0.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let bounds = |xs: &mut dyn Iterator<Item = f64>| {
        xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
            (lo.min(x), hi.max(x))
        })
    };
    let (var_lo, var_hi) = bounds(&mut ranked.iter().map(|c| c.var_fwd));
    let (comm_lo, comm_hi) = bounds(&mut ranked.iter().map(|c| c.sum_comm as f64));
    for c in &mut ranked {
        c.combined_score = weights.w_var * min_max(c.var_fwd, var_lo, var_hi)
            + weights.w_comm * min_max(c.sum_comm as f64, comm_lo, comm_hi);
    }
    ranked.sort_by(|a, b| {
        a.combined_score
            .total_cmp(&b.combined_score)
            .then_with(|| a.partition.cuts.cmp(&b.partition.cuts))
    });
    Ok(ranked)
}

/// Re-computation policy applied while timing candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecomputeMode {
    /// Every layer recomputed.
    #[default]
    Full,
    /// Per-candidate adaptive cancellation under the memory budget.
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub radius: u32,
    pub top_k: usize,
    pub weights: ScoreWeights,
    pub recompute: RecomputeMode,
    pub sim: SimConfig,
}

pub const DEFAULT_RADIUS: u32 = 1;
pub const DEFAULT_TOP_K: usize = 8;

impl SearchConfig {
    pub fn new(sim: SimConfig) -> Self {
        Self {
            radius: DEFAULT_RADIUS,
            top_k: DEFAULT_TOP_K,
            weights: ScoreWeights::default(),
            recompute: RecomputeMode::Full,
            sim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEvaluation {
    pub candidate: RankedCandidate,
    /// Simulated iteration time in seconds; `None` when no re-computation
    /// plan fits the memory budget.
    pub sim_time: Option<f64>,
    /// 0-based stage that overflowed, when infeasible.
    pub infeasible_stage: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSelection {
    pub best: Partition,
    pub best_time: f64,
    pub anchor: Partition,
    pub raw_candidates: u128,
    pub valid_candidates: usize,
    pub evaluations: Vec<CandidateEvaluation>,
}

/// Simulated iteration time of one partition under the given policy.
pub fn evaluate_partition(
    spec: &ModelSpec,
    partition: &Partition,
    mode: RecomputeMode,
    sim: &SimConfig,
) -> Result<(f64, RecomputePlan)> {
    match mode {
        RecomputeMode::Full => {
            let plan = RecomputePlan::all_recompute(spec, partition)?;
            let r = simulate(spec, partition, &plan, sim)?;
            Ok((r.iteration_time, plan))
        }
        RecomputeMode::Adaptive => {
            let out = recompute::optimize(spec, partition, sim)?;
            Ok((out.result.iteration_time, out.plan))
        }
    }
}

/// Anchor, jitter, rank, then simulate the `top_k` best-ranked candidates in
/// parallel and keep the fastest. Ties go to smaller communication volume,
/// then to the lexicographically smaller cut list.
pub fn select_partition(
    spec: &ModelSpec,
    n_stages: usize,
    cfg: &SearchConfig,
) -> Result<PartitionSelection> {
    if cfg.top_k == 0 {
        return Err(Error::invalid("top_k must be at least 1"));
    }
    cfg.sim.validate()?;
    let anchor = anchor_partition(spec, n_stages)?;
    let cands = jitter_candidates(&anchor, cfg.radius, spec)?;
    let ranked = rank_candidates(&cands, spec, cfg.weights)?;
    let evaluations: Vec<CandidateEvaluation> = ranked
        .into_iter()
        .take(cfg.top_k)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|candidate| {
            match evaluate_partition(spec, &candidate.partition, cfg.recompute, &cfg.sim) {
                Ok((t, _)) => Ok(CandidateEvaluation {
                    candidate,
                    sim_time: Some(t),
                    infeasible_stage: None,
                }),
                Err(Error::Infeasible { stage, .. }) => Ok(CandidateEvaluation {
                    candidate,
                    sim_time: None,
                    infeasible_stage: Some(stage),
                }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;

    let best = evaluations
        .iter()
        .filter_map(|e| e.sim_time.map(|t| (t, e)))
        .min_by(|(ta, a), (tb, b)| {
            ta.total_cmp(tb)
                .then(a.candidate.sum_comm.cmp(&b.candidate.sum_comm))
                .then_with(|| a.candidate.partition.cuts.cmp(&b.candidate.partition.cuts))
        })
        .map(|(t, e)| (t, e.candidate.partition.clone()));
    let Some((best_time, best)) = best else {
        return Err(Error::NoFeasibleCandidate(format!(
            "all {} simulated candidates exceed {} bytes per device",
            evaluations.len(),
            cfg.sim.device_memory
        )));
    };
    Ok(PartitionSelection {
        best,
        best_time,
        anchor,
        raw_candidates: jitter_raw_count(n_stages, cfg.radius),
        valid_candidates: cands.len(),
        evaluations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselinePartitions {
    pub parameter_based: Partition,
    pub layer_based: Partition,
    pub profile_based: Partition,
}

/// The three reference splits: balanced weights, balanced layer counts and
/// balanced forward time (ignoring communication).
pub fn baseline_partitions(spec: &ModelSpec, n_stages: usize) -> Result<BaselinePartitions> {
    let params: Vec<f64> = spec.layers.iter().map(|l| l.weight_mem as f64).collect();
    Ok(BaselinePartitions {
        parameter_based: balanced_split(&params, n_stages)?,
        layer_based: balanced_split(&vec![1.0; spec.layers.len()], n_stages)?,
        profile_based: anchor_partition(spec, n_stages)?,
    })
}

/// Per-partition balance figures in the shape of a model-balance table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionMetrics {
    pub stages_layer_num: Vec<u32>,
    /// Over per-stage weight bytes, in GiB^2.
    pub var_param: f64,
    pub var_num_layer: f64,
    /// Over per-stage forward time, in ms^2.
    pub var_fwd_time: f64,
    /// MiB crossing stage boundaries.
    pub sum_comm_mib: f64,
}

pub fn partition_metrics(spec: &ModelSpec, partition: &Partition) -> Result<PartitionMetrics> {
    let costs = stage_costs(spec, partition)?;
    let gib = |b: u64| b as f64 / f64::from(1u32 << 30);
    let params: Vec<f64> = costs.stages.iter().map(|s| gib(s.weight_mem)).collect();
    let layers: Vec<f64> = costs
        .stages
        .iter()
        .map(|s| f64::from(s.num_layers))
        .collect();
    let fwd_ms: Vec<f64> = costs.stages.iter().map(|s| s.fwd_time / 1e3).collect();
    Ok(PartitionMetrics {
        stages_layer_num: partition.stages_layer_num(),
        var_param: sum_sq_dev(&params),
        var_num_layer: sum_sq_dev(&layers),
        var_fwd_time: sum_sq_dev(&fwd_ms),
        sum_comm_mib: costs.boundary_activation.iter().sum::<u64>() as f64 / f64::from(1u32 << 20),
    })
}

/// Compares two ranked candidates the way `rank_candidates` orders them.
pub fn rank_order(a: &RankedCandidate, b: &RankedCandidate) -> Ordering {
    a.combined_score
        .total_cmp(&b.combined_score)
        .then_with(|| a.partition.cuts.cmp(&b.partition.cuts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_pass(xs: &[f64]) -> f64 {
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - mean).powi(2)).sum()
    }

    fn spec_from_times(times: &[f64]) -> ModelSpec {
        let mut spec = ModelSpec::uniform(times.len() as u32, 1.0, 10).unwrap();
        for (l, &t) in spec.layers.iter_mut().zip(times) {
            l.fwd_time = t;
            l.bwd_time = 2.0 * t;
        }
        spec
    }

    #[test]
    fn homogeneous_anchor_is_even() {
        let spec = ModelSpec::uniform(20, 1.0, 1).unwrap();
        assert_eq!(anchor_partition(&spec, 4).unwrap().cuts(), &[6, 11, 16]);
        assert!(anchor_partition(&spec, 1).unwrap().cuts().is_empty());
        assert!(anchor_partition(&spec, 21).is_err());
    }

    #[test]
    fn heavy_last_layer_stands_alone() {
        let spec = spec_from_times(&[1.0, 1.0, 1.0, 9.0]);
        assert_eq!(anchor_partition(&spec, 2).unwrap().cuts(), &[4]);
    }

    #[test]
    fn layer_based_on_93_layers() {
        let spec = ModelSpec::uniform(93, 1.0, 1).unwrap();
        let sizes = baseline_partitions(&spec, 4)
            .unwrap()
            .layer_based
            .stages_layer_num();
        assert_eq!(sizes.iter().sum::<u32>(), 93);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn jitter_counts() {
        let spec = ModelSpec::uniform(20, 1.0, 1).unwrap();
        let anchor = anchor_partition(&spec, 4).unwrap();
        assert_eq!(jitter_raw_count(4, 1), 27);
        assert_eq!(jitter_candidates(&anchor, 1, &spec).unwrap().len(), 27);
        assert_eq!(jitter_candidates(&anchor, 0, &spec).unwrap(), vec![anchor]);
    }

    #[test]
    fn jitter_filters_colliding_cuts() {
        let spec = ModelSpec::uniform(4, 1.0, 1).unwrap();
        let anchor = Partition::new(vec![2, 3], 4).unwrap();
        let got = jitter_candidates(&anchor, 1, &spec).unwrap();
        let mut brute = Vec::new();
        for a in 1..=3u32 {
            for b in 2..=4u32 {
                if let Ok(p) = Partition::new(vec![a, b], 4) {
                    brute.push(p);
                }
            }
        }
        assert_eq!(got, brute);
        assert_eq!(got.len(), 3);
    }

    #[test]
    fn single_candidate_scores_zero() {
        let spec = ModelSpec::uniform(4, 1.0, 1).unwrap();
        let p = Partition::new(vec![3], 4).unwrap();
        let r = rank_candidates(&[p], &spec, ScoreWeights::default()).unwrap();
        assert_eq!(r[0].combined_score, 0.0);
    }

    #[test]
    fn even_split_minimizes_variance() {
        let spec = ModelSpec::uniform(8, 1.0, 1).unwrap();
        let all: Vec<Partition> = (2..=8)
            .map(|c| Partition::new(vec![c], 8).unwrap())
            .collect();
        let r = rank_candidates(
            &all,
            &spec,
            ScoreWeights {
                w_var: 1.0,
                w_comm: 0.0,
            },
        )
        .unwrap();
        assert_eq!(r[0].partition.cuts(), &[5]);
        assert_eq!(r[0].var_fwd, 0.0);
    }

    #[test]
    fn stage_helpers() {
        let p = Partition::from_stage_sizes(&[22, 23, 24, 24]).unwrap();
        assert_eq!(p.cuts(), &[23, 46, 70]);
        assert_eq!(p.stages_layer_num(), vec![22, 23, 24, 24]);
        assert_eq!(p.stage_of(1), 0);
        assert_eq!(p.stage_of(22), 0);
        assert_eq!(p.stage_of(23), 1);
        assert_eq!(p.stage_of(93), 3);
        assert!(Partition::new(vec![1], 4).is_err());
        assert!(Partition::new(vec![3, 3], 4).is_err());
        assert!(Partition::new(vec![5], 4).is_err());
    }

    proptest! {
        #[test]
        fn one_pass_variance_matches_two_pass(xs in prop::collection::vec(0.0f64..1e6, 1..32)) {
            let a = sum_sq_dev(&xs);
            let b = two_pass(&xs);
            prop_assert!((a - b).abs() <= 1e-9 * b.max(1.0));
        }

        #[test]
        fn splits_are_valid(
            times in prop::collection::vec(0.01f64..100.0, 1..40),
            n in 1usize..8,
            r in 0u32..3,
        ) {
            prop_assume!(n <= times.len());
            let spec = spec_from_times(&times);
            let anchor = anchor_partition(&spec, n).unwrap();
            prop_assert_eq!(anchor.n_stages(), n);
            prop_assert_eq!(anchor.stages_layer_num().iter().sum::<u32>(), times.len() as u32);
            let cands = jitter_candidates(&anchor, r, &spec).unwrap();
            prop_assert!(cands.contains(&anchor));
            prop_assert!(cands.len() as u128 <= jitter_raw_count(n, r));
            for c in &cands {
                prop_assert!(Partition::new(c.cuts().to_vec(), c.num_layers()).is_ok());
            }
            let ranked = rank_candidates(&cands, &spec, ScoreWeights::default()).unwrap();
            prop_assert!(ranked.windows(2).all(|w| rank_order(&w[0], &w[1]) != Ordering::Greater));
            prop_assert!(ranked.iter().all(|c| c.combined_score.is_finite() && c.combined_score >= 0.0));
        }
    }
}
