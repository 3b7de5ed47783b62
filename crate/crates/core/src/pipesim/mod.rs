//! Discrete-event simulation of one 1F1B pipeline iteration with
//! point-to-point transfers and per-stage memory accounting.

mod export;

pub use export::{export_timeline, parse_timeline, TimelineFormat};

use serde::{Deserialize, Serialize};

use crate::costmodel::ModelSpec;
use crate::error::{Error, Result};
use crate::partition::Partition;
use crate::recompute::RecomputePlan;

pub const DEFAULT_WEIGHT_MULTIPLIER: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub micro_batches: u32,
    /// Bytes per second; `f64::INFINITY` makes transfers latency-only.
    #[serde(with = "crate::ingest::inf_as_null")]
    pub p2p_bandwidth: f64,
    /// Seconds per transfer.
    pub p2p_latency: f64,
    /// Bytes available on each device.
    pub device_memory: u64,
    /// When set, transfers do not occupy the sending stage.
    #[serde(default)]
    pub overlap_comm: bool,
    /// Resident bytes per weight byte (weights, gradients, optimizer state).
    #[serde(default = "default_weight_multiplier")]
    pub weight_multiplier: f64,
}

fn default_weight_multiplier() -> f64 {
    DEFAULT_WEIGHT_MULTIPLIER
}

impl SimConfig {
    pub fn new(
        micro_batches: u32,
        p2p_bandwidth: f64,
        p2p_latency: f64,
        device_memory: u64,
    ) -> Self {
        Self {
            micro_batches,
            p2p_bandwidth,
            p2p_latency,
            device_memory,
            overlap_comm: false,
            weight_multiplier: DEFAULT_WEIGHT_MULTIPLIER,
        }
    }

    /// Free transfers and unbounded memory.
    pub fn ideal(micro_batches: u32) -> Self {
        Self::new(micro_batches, f64::INFINITY, 0.0, u64::MAX)
    }

    pub fn with_overlap(mut self, overlap: bool) -> Self {
        self.overlap_comm = overlap;
        self
    }

    pub fn with_device_memory(mut self, bytes: u64) -> Self {
        self.device_memory = bytes;
        self
    }

    pub fn with_weight_multiplier(mut self, m: f64) -> Self {
        self.weight_multiplier = m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.micro_batches == 0 {
            return Err(Error::invalid("micro_batches must be at least 1"));
        }
        if self.p2p_bandwidth.is_nan() || self.p2p_bandwidth <= 0.0 {
            return Err(Error::invalid("p2p_bandwidth must be positive"));
        }
        if !(self.p2p_latency.is_finite() && self.p2p_latency >= 0.0) {
            return Err(Error::invalid("p2p_latency must be a non-negative number"));
        }
        if !(self.weight_multiplier.is_finite() && self.weight_multiplier >= 0.0) {
            return Err(Error::invalid(
                "weight_multiplier must be a non-negative number",
            ));
        }
        Ok(())
    }

    /// Seconds to move `bytes` between adjacent stages.
    pub fn comm_time(&self, bytes: u64) -> f64 {
        self.p2p_latency + bytes as f64 / self.p2p_bandwidth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Fwd,
    Bwd,
    Recompute,
    Send,
    Recv,
}

impl Phase {
    pub fn is_compute(self) -> bool {
        matches!(self, Phase::Fwd | Phase::Bwd | Phase::Recompute)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// 0-based pipeline stage.
    pub stage: usize,
    pub micro_batch: u32,
    pub phase: Phase,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    /// Seconds.
    pub iteration_time: f64,
    pub bubble_ratio: f64,
    /// Seconds of compute per stage.
    pub per_stage_busy: Vec<f64>,
    pub per_stage_peak_mem: Vec<u64>,
    pub timeline: Vec<Event>,
}

impl SimResult {
    pub fn n_stages(&self) -> usize {
        self.per_stage_busy.len()
    }
}

/// Work of one micro-batch on one stage, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageWork {
    pub fwd: f64,
    pub bwd: f64,
    /// Re-forward before the backward pass.
    pub recompute: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTimings {
    /// `stages[k][m]`.
    pub stages: Vec<Vec<StageWork>>,
    /// `comm[b][m]`: seconds to cross boundary `b` (between stages `b` and
    /// `b + 1`), used for activations forward and gradients backward.
    pub comm: Vec<Vec<f64>>,
}

impl PipelineTimings {
    fn micro_batches(&self) -> usize {
        self.stages.first().map_or(0, Vec::len)
    }

    fn validate(&self) -> Result<()> {
        let n = self.stages.len();
        let m = self.micro_batches();
        if n == 0 || m == 0 {
            return Err(Error::invalid(
                "timings need at least one stage and one micro-batch",
            ));
        }
        if self.stages.iter().any(|s| s.len() != m)
            || self.comm.len() != n - 1
            || self.comm.iter().any(|c| c.len() != m)
        {
            return Err(Error::invalid("timings are not rectangular"));
        }
        let finite = |x: f64| x.is_finite() && x >= 0.0;
        if !self
            .stages
            .iter()
            .flatten()
            .all(|w| finite(w.fwd) && finite(w.bwd) && finite(w.recompute))
            || !self.comm.iter().flatten().all(|&c| finite(c))
        {
            return Err(Error::invalid("durations must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Op {
    Fwd(usize),
    Bwd(usize),
}

/// 1F1B order on 0-based stage `k`: `min(N - k - 1, M)` warm-up forwards,
/// alternating forward/backward, then the remaining backwards.
fn one_f_one_b(k: usize, n: usize, m: usize) -> Vec<Op> {
    let warmup = (n - k - 1).min(m);
    let mut ops: Vec<Op> = (0..warmup).map(Op::Fwd).collect();
    for i in 0..m - warmup {
        ops.push(Op::Fwd(warmup + i));
        ops.push(Op::Bwd(i));
    }
    ops.extend((m - warmup..m).map(Op::Bwd));
    ops
}

/// Lays out every stage's 1F1B sequence in time. Each operation starts when
/// its stage is free and its input has arrived. Without overlap a transfer
/// holds the sending stage (a `Send` event) and the data arrives when it
/// ends; with overlap the data arrives `comm` after the compute ends.
pub fn schedule(timings: &PipelineTimings, overlap_comm: bool) -> Result<Vec<Event>> {
    timings.validate()?;
    let n = timings.stages.len();
    let m = timings.micro_batches();
    let orders: Vec<Vec<Op>> = (0..n).map(|k| one_f_one_b(k, n, m)).collect();
    let mut fwd_ready: Vec<Vec<Option<f64>>> = vec![vec![None; m]; n];
    let mut bwd_ready: Vec<Vec<Option<f64>>> = vec![vec![None; m]; n];
    fwd_ready[0].iter_mut().for_each(|r| *r = Some(0.0));
    let mut next = vec![0usize; n];
    let mut free = vec![0.0f64; n];
    let mut events = Vec::with_capacity(n * m * 4);

    let mut remaining = n * 2 * m;
    while remaining > 0 {
        let mut progressed = false;
        for k in 0..n {
            while let Some(&op) = orders[k].get(next[k]) {
                let ready = match op {
                    Op::Fwd(mb) => fwd_ready[k][mb],
                    Op::Bwd(mb) => bwd_ready[k][mb],
                };
                let Some(ready) = ready else { break };
                let start = free[k].max(ready);
                let (mb, end, target) = match op {
                    Op::Fwd(mb) => {
                        let end = start + timings.stages[k][mb].fwd;
                        events.push(Event {
                            stage: k,
                            micro_batch: mb as u32,
                            phase: Phase::Fwd,
                            start,
                            end,
                        });
                        if k + 1 == n {
                            bwd_ready[k][mb] = Some(end);
                        }
                        (mb, end, (k + 1 < n).then(|| (k, &mut fwd_ready[k + 1][mb])))
                    }
                    Op::Bwd(mb) => {
                        let w = timings.stages[k][mb];
                        let mut t = start;
                        if w.recompute > 0.0 {
                            events.push(Event {
                                stage: k,
                                micro_batch: mb as u32,
                                phase: Phase::Recompute,
                                start: t,
                                end: t + w.recompute,
                            });
                            t += w.recompute;
                        }
                        let end = t + w.bwd;
                        events.push(Event {
                            stage: k,
                            micro_batch: mb as u32,
                            phase: Phase::Bwd,
                            start: t,
                            end,
                        });
                        (mb, end, (k > 0).then(|| (k - 1, &mut bwd_ready[k - 1][mb])))
                    }
                };
                free[k] = end;
                if let Some((boundary, slot)) = target {
                    let c = timings.comm[boundary][mb];
                    if overlap_comm {
                        *slot = Some(end + c);
                    } else {
                        if c > 0.0 {
                            events.push(Event {
                                stage: k,
                                micro_batch: mb as u32,
                                phase: Phase::Send,
                                start: end,
                                end: end + c,
                            });
                        }
                        free[k] = end + c;
                        *slot = Some(end + c);
                    }
                }
                next[k] += 1;
                remaining -= 1;
                progressed = true;
            }
        }
        assert!(progressed, "1F1B order cannot deadlock");
    }
    events.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.stage.cmp(&b.stage)));
    Ok(events)
}

/// `1 - sum(busy) / (N * T)`.
pub fn bubble_ratio(result: &SimResult) -> f64 {
    bubble(&result.per_stage_busy, result.iteration_time)
}

fn bubble(busy: &[f64], iteration_time: f64) -> f64 {
    if busy.is_empty() || iteration_time <= 0.0 {
        return 0.0;
    }
    (1.0 - busy.iter().sum::<f64>() / (busy.len() as f64 * iteration_time)).max(0.0)
}

/// Builds a result from a timing table without memory accounting.
pub fn run_timings(timings: &PipelineTimings, overlap_comm: bool) -> Result<SimResult> {
    let timeline = schedule(timings, overlap_comm)?;
    let mut busy = vec![0.0; timings.stages.len()];
    let mut iteration_time: f64 = 0.0;
    for e in &timeline {
        if e.phase.is_compute() {
            busy[e.stage] += e.end - e.start;
        }
        iteration_time = iteration_time.max(e.end);
    }
    Ok(SimResult {
        iteration_time,
        bubble_ratio: bubble(&busy, iteration_time),
        per_stage_busy: busy,
        per_stage_peak_mem: vec![0; timings.stages.len()],
        timeline,
    })
}

/// Micro-batches resident on 0-based stage `k` under 1F1B.
pub fn in_flight(k: usize, n_stages: usize, micro_batches: usize) -> usize {
    (n_stages - k).min(micro_batches)
}

fn check_inputs(spec: &ModelSpec, partition: &Partition, plan: &RecomputePlan) -> Result<()> {
    partition.check_against(spec)?;
    plan.check_against(spec, partition)
}

fn stage_weights(spec: &ModelSpec, partition: &Partition, multiplier: f64) -> Vec<u64> {
    partition
        .stage_ranges()
        .into_iter()
        .map(|r| {
            let w: u64 = r.map(|i| spec.layer(i).weight_mem).sum();
            (w as f64 * multiplier).ceil() as u64
        })
        .collect()
}

/// Stored activation bytes per micro-batch on every stage.
pub fn stage_activation(spec: &ModelSpec, partition: &Partition, plan: &RecomputePlan) -> Vec<u64> {
    partition
        .stage_ranges()
        .into_iter()
        .map(|r| {
            r.map(|i| {
                let l = spec.layer(i);
                if plan.is_stored(i) {
                    l.act_mem_full
                } else {
                    l.act_mem_ckpt
                }
            })
            .sum()
        })
        .collect()
}

/// Peak bytes on every stage for a run whose micro-batch `m` has shape
/// `specs[m]`: scaled weights plus the largest sum of activations over any
/// `in_flight` consecutive micro-batches.
pub fn stage_peak_memory_varied(
    specs: &[ModelSpec],
    partition: &Partition,
    plan: &RecomputePlan,
    weight_multiplier: f64,
) -> Result<Vec<u64>> {
    let first = specs
        .first()
        .ok_or_else(|| Error::invalid("no micro-batches"))?;
    for s in specs {
        check_inputs(s, partition, plan)?;
    }
    let n = partition.n_stages();
    let m = specs.len();
    let acts: Vec<Vec<u64>> = specs
        .iter()
        .map(|s| stage_activation(s, partition, plan))
        .collect();
    let weights = stage_weights(first, partition, weight_multiplier);
    Ok((0..n)
        .map(|k| {
            let window = in_flight(k, n, m);
            let per_mb: Vec<u64> = acts.iter().map(|a| a[k]).collect();
            let peak_act = per_mb
                .windows(window)
                .map(|w| w.iter().sum::<u64>())
                .max()
                .unwrap_or(0);
            weights[k] + peak_act
        })
        .collect())
}

/// Peak bytes on every stage when all `micro_batches` share one shape.
pub fn stage_peak_memory(
    spec: &ModelSpec,
    partition: &Partition,
    plan: &RecomputePlan,
    cfg: &SimConfig,
) -> Result<Vec<u64>> {
    check_inputs(spec, partition, plan)?;
    let n = partition.n_stages();
    let m = cfg.micro_batches as usize;
    let acts = stage_activation(spec, partition, plan);
    let weights = stage_weights(spec, partition, cfg.weight_multiplier);
    Ok((0..n)
        .map(|k| weights[k] + in_flight(k, n, m) as u64 * acts[k])
        .collect())
}

fn check_budget(peaks: &[u64], budget: u64) -> Result<()> {
    match peaks.iter().position(|&p| p > budget) {
        Some(stage) => Err(Error::Infeasible {
            stage,
            peak: peaks[stage],
            budget,
        }),
        None => Ok(()),
    }
}

fn micro_batch_work(
    spec: &ModelSpec,
    partition: &Partition,
    plan: &RecomputePlan,
) -> Vec<StageWork> {
    partition
        .stage_ranges()
        .into_iter()
        .map(|r| {
            let mut w = StageWork {
                fwd: 0.0,
                bwd: 0.0,
                recompute: 0.0,
            };
            for i in r {
                let l = spec.layer(i);
                w.fwd += l.fwd_time;
                w.bwd += l.bwd_time;
                if !plan.is_stored(i) {
                    w.recompute += l.fwd_time;
                }
            }
            StageWork {
                fwd: w.fwd * 1e-6,
                bwd: w.bwd * 1e-6,
                recompute: w.recompute * 1e-6,
            }
        })
        .collect()
}

fn boundary_comm(spec: &ModelSpec, partition: &Partition, cfg: &SimConfig) -> Vec<f64> {
    partition
        .cuts()
        .iter()
        .map(|&c| cfg.comm_time(spec.layer(c - 1).output_activation))
        .collect()
}

/// Timing table for a run whose micro-batch `m` has shape `specs[m]`.
pub fn pipeline_timings(
    specs: &[ModelSpec],
    partition: &Partition,
    plan: &RecomputePlan,
    cfg: &SimConfig,
) -> PipelineTimings {
    let n = partition.n_stages();
    let mut stages = vec![Vec::with_capacity(specs.len()); n];
    let mut comm = vec![Vec::with_capacity(specs.len()); n - 1];
    for s in specs {
        for (k, w) in micro_batch_work(s, partition, plan).into_iter().enumerate() {
            stages[k].push(w);
        }
        for (b, c) in boundary_comm(s, partition, cfg).into_iter().enumerate() {
            comm[b].push(c);
        }
    }
    PipelineTimings { stages, comm }
}

/// Simulates `cfg.micro_batches` identical micro-batches.
pub fn simulate(
    spec: &ModelSpec,
    partition: &Partition,
    plan: &RecomputePlan,
    cfg: &SimConfig,
) -> Result<SimResult> {
    cfg.validate()?;
    let peaks = stage_peak_memory(spec, partition, plan, cfg)?;
    check_budget(&peaks, cfg.device_memory)?;
    let specs = vec![spec.clone(); cfg.micro_batches as usize];
    let mut result = run_timings(
        &pipeline_timings(&specs, partition, plan, cfg),
        cfg.overlap_comm,
    )?;
    result.per_stage_peak_mem = peaks;
    Ok(result)
}

/// Simulates one micro-batch per entry of `specs` (each a cost profile of
/// the same layer stack at that micro-batch's shape).
/// `cfg.micro_batches` is ignored.
pub fn simulate_varied(
    specs: &[ModelSpec],
    partition: &Partition,
    plan: &RecomputePlan,
    cfg: &SimConfig,
) -> Result<SimResult> {
    cfg.validate()?;
    let peaks = stage_peak_memory_varied(specs, partition, plan, cfg.weight_multiplier)?;
    check_budget(&peaks, cfg.device_memory)?;
    let mut result = run_timings(
        &pipeline_timings(specs, partition, plan, cfg),
        cfg.overlap_comm,
    )?;
    result.per_stage_peak_mem = peaks;
    Ok(result)
}
