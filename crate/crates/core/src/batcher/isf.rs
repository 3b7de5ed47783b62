use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::evaluate::mean_step_spread;
use super::{fisher_yates, seeded_rng};
use crate::error::Result;
use crate::types::{BalanceParams, Dataset, Group, Sample};

/// Ranks used for the per-iteration dist-ratio trace of [`isf_run`].
pub const DEFAULT_METRIC_RANKS: usize = 4;

/// Output of one sampling pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub groups: Vec<Group>,
    /// Samples that exceed a cap on their own and can never join a group.
    pub oversize: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: u32,
    /// Groups accepted in this iteration.
    pub new_groups: usize,
    /// Groups accepted so far.
    pub accepted_groups: usize,
    /// Samples still unassigned after this iteration.
    pub remaining_samples: usize,
    /// Mean per-step dist ratio of all accepted groups, vision stream.
    /// `None` while there are fewer groups than ranks.
    pub vision_dist_ratio: Option<f64>,
    pub text_dist_ratio: Option<f64>,
    pub mean_group_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackedBatchPlan {
    pub params: BalanceParams,
    /// Groups satisfying the acceptance predicate, in acceptance order.
    pub accepted_groups: Vec<Group>,
    /// Samples never accepted within the iteration budget.
    pub leftovers: Vec<Sample>,
    /// First-fit packing of `leftovers`, every group flagged below threshold.
    pub fallback_groups: Vec<Group>,
    pub oversize: Vec<Sample>,
    pub iterations_run: u32,
    pub metrics: Vec<IterationMetrics>,
}

impl PackedBatchPlan {
    /// Every sample of the input exactly once: accepted groups, then the
    /// fallback packing, then one singleton per oversize sample.
    pub fn training_groups(&self) -> Vec<Group> {
        let mut out = self.accepted_groups.clone();
        out.extend(self.fallback_groups.iter().cloned());
        out.extend(self.oversize.iter().map(|s| {
            Group::new(vec![s.clone()])
                .expect("singleton group is non-empty")
                .flagged_below_threshold()
        }));
        out
    }

    pub fn accepted_sample_count(&self) -> usize {
        self.accepted_groups.iter().map(Group::len).sum()
    }
}

/// Splits pool indices into those that fit the caps alone and those that never can.
fn split_oversize(samples: &[Sample], params: &BalanceParams) -> (Vec<usize>, Vec<usize>) {
    (0..samples.len()).partition(|&i| {
        let s = &samples[i];
        !params.overflows(u64::from(s.vision_units), u64::from(s.text_tokens))
    })
}

/// Sampling stage over a pool of indices. The pool is permuted in place; the
/// trailing in-progress group is not emitted.
fn sample_stage<R: Rng + ?Sized>(
    samples: &[Sample],
    pool: &mut [usize],
    params: &BalanceParams,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    fisher_yates(pool, rng);
    let mut out = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let (mut vision, mut text) = (0u64, 0u64);
    for &i in pool.iter() {
        let s = &samples[i];
        let (v, t) = (u64::from(s.vision_units), u64::from(s.text_tokens));
        if params.overflows(vision + v, text + t) && !current.is_empty() {
            out.push(std::mem::replace(&mut current, vec![i]));
            (vision, text) = (v, t);
        } else {
            current.push(i);
            vision += v;
            text += t;
        }
    }
    out
}

fn totals(samples: &[Sample], idx: &[usize]) -> (u64, u64) {
    idx.iter().fold((0, 0), |(v, t), &i| {
        (
            v + u64::from(samples[i].vision_units),
            t + u64::from(samples[i].text_tokens),
        )
    })
}

fn to_group(samples: &[Sample], idx: &[usize]) -> Group {
    Group::new(idx.iter().map(|&i| samples[i].clone()).collect())
        .expect("sampling never emits empty groups")
}

/// One sampling pass over `dataset`.
pub fn isf_sample<R: Rng + ?Sized>(
    dataset: &Dataset,
    params: &BalanceParams,
    rng: &mut R,
) -> CandidateSet {
    let samples = dataset.samples();
    let (mut pool, oversize) = split_oversize(samples, params);
    let groups = sample_stage(samples, &mut pool, params, rng);
    CandidateSet {
        groups: groups.iter().map(|g| to_group(samples, g)).collect(),
        oversize: oversize.into_iter().map(|i| samples[i].clone()).collect(),
    }
}

/// Filtering pass: keeps candidates meeting either minimum and removes their
/// members from the dataset. Rejected members stay in the returned dataset.
pub fn isf_filter(
    candidates: &CandidateSet,
    dataset: &Dataset,
    params: &BalanceParams,
) -> (Vec<Group>, Dataset) {
    let accepted: Vec<Group> = candidates
        .groups
        .iter()
        .filter(|g| params.accepts(g.total_vision(), g.total_text()))
        .cloned()
        .collect();
    let taken: HashSet<&str> = accepted
        .iter()
        .flat_map(|g| g.members().iter().map(|s| s.id.as_str()))
        .collect();
    let remaining = dataset
        .samples()
        .iter()
        .filter(|s| !taken.contains(s.id.as_str()))
        .cloned()
        .collect();
    (accepted, Dataset::from_valid(remaining))
}

/// Runs sampling and filtering alternately, using [`DEFAULT_METRIC_RANKS`]
/// ranks for the convergence trace.
pub fn isf_run(dataset: &Dataset, params: &BalanceParams) -> Result<PackedBatchPlan> {
    isf_run_with(dataset, params, DEFAULT_METRIC_RANKS)
}

pub fn isf_run_with(
    dataset: &Dataset,
    params: &BalanceParams,
    metric_ranks: usize,
) -> Result<PackedBatchPlan> {
    params.validate()?;
    let metric_ranks = metric_ranks.max(1);
    let samples = dataset.samples();
    let mut rng = seeded_rng(params.seed);
    let (mut pool, oversize) = split_oversize(samples, params);

    let mut accepted: Vec<Vec<usize>> = Vec::new();
    let mut metrics = Vec::new();
    let mut iterations_run = 0;
    let mut vision_loads = Vec::new();
    let mut text_loads = Vec::new();

    while iterations_run < params.max_iters && !pool.is_empty() {
        iterations_run += 1;
        let candidates = sample_stage(samples, &mut pool, params, &mut rng);
        let mut taken = vec![false; samples.len()];
        let mut new_groups = 0;
        for g in candidates {
            let (v, t) = totals(samples, &g);
            if params.accepts(v, t) {
                for &i in &g {
                    taken[i] = true;
                }
                vision_loads.push(v);
                text_loads.push(t);
                accepted.push(g);
                new_groups += 1;
            }
        }
        pool.retain(|&i| !taken[i]);

        let members: usize = accepted.iter().map(Vec::len).sum();
        metrics.push(IterationMetrics {
            iteration: iterations_run,
            new_groups,
            accepted_groups: accepted.len(),
            remaining_samples: pool.len(),
            vision_dist_ratio: mean_step_spread(&vision_loads, metric_ranks),
            text_dist_ratio: mean_step_spread(&text_loads, metric_ranks),
            mean_group_size: if accepted.is_empty() {
                0.0
            } else {
                members as f64 / accepted.len() as f64
            },
        });
        if new_groups == 0 {
            break;
        }
    }

    // Leftovers keep dataset order so the fallback packing does not depend on
    // the last permutation.
    pool.sort_unstable();
    let fallback = first_fit_by_text(samples, &pool, params);

    Ok(PackedBatchPlan {
        params: *params,
        accepted_groups: accepted.iter().map(|g| to_group(samples, g)).collect(),
        leftovers: pool.iter().map(|&i| samples[i].clone()).collect(),
        fallback_groups: fallback
            .iter()
            .map(|g| to_group(samples, g).flagged_below_threshold())
            .collect(),
        oversize: oversize.into_iter().map(|i| samples[i].clone()).collect(),
        iterations_run,
        metrics,
    })
}

/// First-fit decreasing by text length, respecting both caps.
fn first_fit_by_text(
    samples: &[Sample],
    pool: &[usize],
    params: &BalanceParams,
) -> Vec<Vec<usize>> {
    let mut order = pool.to_vec();
    order.sort_by(|&a, &b| {
        let (sa, sb) = (&samples[a], &samples[b]);
        sb.text_tokens
            .cmp(&sa.text_tokens)
            .then(sb.vision_units.cmp(&sa.vision_units))
            .then(a.cmp(&b))
    });
    let mut bins: Vec<(Vec<usize>, u64, u64)> = Vec::new();
    for i in order {
        let (v, t) = (
            u64::from(samples[i].vision_units),
            u64::from(samples[i].text_tokens),
        );
        match bins
            .iter_mut()
            .find(|(_, bv, bt)| !params.overflows(bv + v, bt + t))
        {
            Some((members, bv, bt)) => {
                members.push(i);
                *bv += v;
                *bt += t;
            }
            None => bins.push((vec![i], v, t)),
        }
    }
    bins.into_iter().map(|(m, _, _)| m).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(text: &[u32], vision: &[u32]) -> Dataset {
        Dataset::new(
            text.iter()
                .zip(vision)
                .enumerate()
                .map(|(i, (&t, &v))| Sample::new(format!("s{i}"), v, t).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn text_only_params(q_text: u32, q_text_min: u32) -> BalanceParams {
        BalanceParams {
            q_text_min,
            ..BalanceParams::text_only(q_text)
        }
    }

    #[test]
    fn four_threes_emit_one_group() {
        // Any permutation of four equal samples behaves the same: the third
        // sample overflows, {3,3} is emitted, and {3,3} stays in progress.
        let d = ds(&[3, 3, 3, 3], &[0, 0, 0, 0]);
        let params = text_only_params(6, 6);
        let c = isf_sample(&d, &params, &mut seeded_rng(1));
        assert_eq!(c.groups.len(), 1);
        assert_eq!(c.groups[0].total_text(), 6);
        assert_eq!(c.groups[0].len(), 2);
    }

    #[test]
    fn single_sample_never_emits() {
        let d = ds(&[100], &[2]);
        let c = isf_sample(&d, &BalanceParams::default(), &mut seeded_rng(0));
        assert!(c.groups.is_empty());
        assert!(c.oversize.is_empty());
    }

    #[test]
    fn oversize_is_diverted() {
        let d = ds(&[5000, 100, 100], &[1, 20, 1]);
        let c = isf_sample(&d, &BalanceParams::default(), &mut seeded_rng(0));
        let ids: Vec<_> = c.oversize.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["s0", "s1"]);
    }

    #[test]
    fn filter_keeps_rejected_members() {
        let d = ds(&[3, 3, 1, 1, 3], &[0; 5]);
        let params = text_only_params(6, 6);
        let cands = CandidateSet {
            groups: vec![
                Group::new(vec![d.samples()[0].clone(), d.samples()[1].clone()]).unwrap(),
                Group::new(vec![d.samples()[2].clone(), d.samples()[3].clone()]).unwrap(),
            ],
            oversize: vec![],
        };
        let (acc, rest) = isf_filter(&cands, &d, &params);
        assert_eq!(acc.len(), 1);
        let ids: Vec<_> = rest.samples().iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["s2", "s3", "s4"]);
    }

    #[test]
    fn empty_pool_stops_early() {
        // Six samples of 2 tokens with cap 4: every emitted pair is accepted.
        let d = ds(&[2; 6], &[0; 6]);
        let params = text_only_params(4, 4).with_seed(3);
        let plan = isf_run(&d, &params).unwrap();
        // Iteration 1 emits two groups (the third pair stays in progress);
        // iteration 2 sees a pool of two samples that never overflows.
        assert_eq!(plan.accepted_groups.len(), 2);
        assert_eq!(plan.iterations_run, 2);
        assert_eq!(plan.metrics[1].new_groups, 0);
        assert_eq!(plan.leftovers.len(), 2);
        assert_eq!(plan.fallback_groups.len(), 1);
        assert!(plan.fallback_groups[0].below_threshold());
    }

    #[test]
    fn run_partitions_input() {
        let text: Vec<u32> = (0..200).map(|i| 50 + (i * 37 % 400)).collect();
        let vision: Vec<u32> = (0..200).map(|i| i % 5).collect();
        let d = ds(&text, &vision);
        let params = BalanceParams::new(12, 1024).with_seed(11);
        let plan = isf_run(&d, &params).unwrap();
        let mut ids: Vec<String> = plan
            .training_groups()
            .iter()
            .flat_map(|g| g.members().iter().map(|s| s.id.clone()))
            .collect();
        ids.sort();
        let mut expected: Vec<String> = d.samples().iter().map(|s| s.id.clone()).collect();
        expected.sort();
        assert_eq!(ids, expected);
        for g in &plan.accepted_groups {
            assert!(!params.overflows(g.total_vision(), g.total_text()));
            assert!(params.accepts(g.total_vision(), g.total_text()));
        }
    }

    #[test]
    fn fallback_respects_caps() {
        let samples = [900u32, 800, 300, 200, 100];
        let d = ds(&samples, &[0; 5]);
        let params = text_only_params(1000, 990);
        let groups = first_fit_by_text(d.samples(), &[0, 1, 2, 3, 4], &params);
        let sums: Vec<u64> = groups.iter().map(|g| totals(d.samples(), g).1).collect();
        assert_eq!(sums, vec![1000, 1000, 300]);
    }
}
