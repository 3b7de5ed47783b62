#![allow(dead_code)]

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vlbal::costmodel::{LayerKind, LayerProfile, ModelSpec};
use vlbal::partition::Partition;
use vlbal::pipesim::{simulate, Event, Phase, PipelineTimings, SimConfig, StageWork};
use vlbal::recompute::RecomputePlan;
use vlbal::Error;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
enum Op {
    F(usize),
    B(usize),
}

/// 1F1B op order of stage `k`, written out from the textbook description.
fn order(k: usize, n: usize, m: usize) -> Vec<Op> {
    let mut ops = Vec::new();
    let warm = std::cmp::min(n - 1 - k, m);
    let mut f = 0;
    let mut b = 0;
    while f < warm {
        ops.push(Op::F(f));
        f += 1;
    }
    while f < m {
        ops.push(Op::F(f));
        f += 1;
        ops.push(Op::B(b));
        b += 1;
    }
    while b < m {
        ops.push(Op::B(b));
        b += 1;
    }
    ops
}

/// Start/end times by memoized recursion on the dependency graph: an op
/// starts when its stage finished the previous op (plus that op's outgoing
/// transfer when transfers block) and its input has arrived.
pub struct Oracle<'a> {
    t: &'a PipelineTimings,
    overlap: bool,
    n: usize,
    m: usize,
    orders: Vec<Vec<Op>>,
    memo: HashMap<(usize, Op), (f64, f64)>,
}

impl<'a> Oracle<'a> {
    pub fn new(t: &'a PipelineTimings, overlap: bool) -> Self {
        let n = t.stages.len();
        let m = t.stages[0].len();
        let orders = (0..n).map(|k| order(k, n, m)).collect();
        Self {
            t,
            overlap,
            n,
            m,
            orders,
            memo: HashMap::new(),
        }
    }

    fn sends(&self, k: usize, op: Op) -> Option<f64> {
        match op {
            Op::F(mb) if k + 1 < self.n => Some(self.t.comm[k][mb]),
            Op::B(mb) if k > 0 => Some(self.t.comm[k - 1][mb]),
            _ => None,
        }
    }

    fn span(&mut self, k: usize, op: Op) -> (f64, f64) {
        if let Some(&v) = self.memo.get(&(k, op)) {
            return v;
        }
        let pos = self.orders[k].iter().position(|&o| o == op).unwrap();
        let stage_free = if pos == 0 {
            0.0
        } else {
            let prev = self.orders[k][pos - 1];
            let (_, end) = self.span(k, prev);
            match (self.overlap, self.sends(k, prev)) {
                (false, Some(c)) => end + c,
                _ => end,
            }
        };
        let arrival = match op {
            Op::F(mb) if k == 0 => {
                let _ = mb;
                0.0
            }
            Op::F(mb) => self.span(k - 1, Op::F(mb)).1 + self.t.comm[k - 1][mb],
            Op::B(mb) if k + 1 == self.n => self.span(k, Op::F(mb)).1,
            Op::B(mb) => self.span(k + 1, Op::B(mb)).1 + self.t.comm[k][mb],
        };
        let start = stage_free.max(arrival);
        let w = match op {
            Op::F(mb) | Op::B(mb) => self.t.stages[k][mb],
        };
        let end = match op {
            Op::F(_) => start + w.fwd,
            Op::B(_) => start + w.recompute + w.bwd,
        };
        self.memo.insert((k, op), (start, end));
        (start, end)
    }

    /// Every event, in the simulator's order: by start time, then stage.
    pub fn events(mut self) -> Vec<Event> {
        let mut out = Vec::new();
        for k in 0..self.n {
            for op in self.orders[k].clone() {
                let (start, end) = self.span(k, op);
                let mb = match op {
                    Op::F(mb) | Op::B(mb) => mb,
                };
                let ev = |phase, start, end| Event {
                    stage: k,
                    micro_batch: mb as u32,
                    phase,
                    start,
                    end,
                };
                match op {
                    Op::F(_) => out.push(ev(Phase::Fwd, start, end)),
                    Op::B(_) => {
                        let r = self.t.stages[k][mb].recompute;
                        if r > 0.0 {
                            out.push(ev(Phase::Recompute, start, start + r));
                        }
                        out.push(ev(Phase::Bwd, start + r, end));
                    }
                }
                if let (false, Some(c)) = (self.overlap, self.sends(k, op)) {
                    if c > 0.0 {
                        out.push(ev(Phase::Send, end, end + c));
                    }
                }
            }
        }
        sort_events(&mut out);
        out
    }

    pub fn makespan(self) -> f64 {
        self.events().iter().map(|e| e.end).fold(0.0, f64::max)
    }

    pub fn micro_batches(&self) -> usize {
        self.m
    }
}

pub fn sort_events(events: &mut [Event]) {
    let phase = |p: Phase| p as u8;
    events.sort_by(|a, b| {
        a.start
            .total_cmp(&b.start)
            .then(a.stage.cmp(&b.stage))
            .then(phase(a.phase).cmp(&phase(b.phase)))
            .then(a.micro_batch.cmp(&b.micro_batch))
    });
}

/// Random integer-valued timings: `n` stages, `m` micro-batches.
pub fn random_timings(r: &mut ChaCha8Rng, n: usize, m: usize) -> PipelineTimings {
    let stages = (0..n)
        .map(|_| {
            (0..m)
                .map(|_| {
                    let fwd = f64::from(r.random_range(1..=9u32));
                    StageWork {
                        fwd,
                        bwd: f64::from(r.random_range(1..=18u32)),
                        recompute: if r.random_bool(0.5) { fwd } else { 0.0 },
                    }
                })
                .collect()
        })
        .collect();
    let comm = (0..n.saturating_sub(1))
        .map(|_| {
            (0..m)
                .map(|_| f64::from(r.random_range(0..=4u32)))
                .collect()
        })
        .collect();
    PipelineTimings { stages, comm }
}

/// A single-tower stack with random costs.
pub fn random_spec(r: &mut ChaCha8Rng, layers: u32) -> ModelSpec {
    let layers = (1..=layers)
        .map(|index| {
            let fwd = f64::from(r.random_range(10..=1000u32));
            let ckpt = r.random_range(1..=64u64) << 20;
            LayerProfile {
                index,
                kind: LayerKind::Language,
                fwd_time: fwd,
                bwd_time: 2.0 * fwd,
                output_activation: ckpt,
                weight_mem: r.random_range(1..=256u64) << 20,
                act_mem_full: ckpt + (r.random_range(0..=512u64) << 20),
                act_mem_ckpt: ckpt,
            }
        })
        .collect();
    ModelSpec::new(layers, 0, 0, 1, 1).unwrap()
}

/// Every partition of `l` layers into `n` non-empty contiguous stages.
pub fn all_partitions(l: u32, n: usize) -> Vec<Partition> {
    fn rec(next: u32, left: usize, l: u32, cuts: &mut Vec<u32>, out: &mut Vec<Partition>) {
        if left == 0 {
            out.push(Partition::new(cuts.clone(), l).unwrap());
            return;
        }
        for c in next..=l - left as u32 + 1 {
            cuts.push(c);
            rec(c + 1, left - 1, l, cuts, out);
            cuts.pop();
        }
    }
    let mut out = Vec::new();
    rec(2, n - 1, l, &mut Vec::new(), &mut out);
    out
}

/// Fastest feasible store/recompute subset by enumeration, as
/// `(time, stored layers)`; `None` when nothing fits.
pub fn best_subset(spec: &ModelSpec, p: &Partition, sim: &SimConfig) -> Option<(f64, Vec<u32>)> {
    let l = spec.num_layers();
    let mut best: Option<(f64, Vec<u32>)> = None;
    for mask in 0u32..(1 << l) {
        let stored: Vec<u32> = (1..=l).filter(|i| mask >> (i - 1) & 1 == 1).collect();
        let plan = RecomputePlan::from_stored(p, &stored).unwrap();
        match simulate(spec, p, &plan, sim) {
            Ok(r) => {
                if best.as_ref().is_none_or(|(t, _)| r.iteration_time < *t) {
                    best = Some((r.iteration_time, stored));
                }
            }
            Err(Error::Infeasible { .. }) => {}
            Err(e) => panic!("{e}"),
        }
    }
    best
}
