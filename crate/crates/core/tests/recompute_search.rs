mod common;

use rand::Rng;

use common::{all_partitions, best_subset, random_spec, rng};
use vlbal::partition::Partition;
use vlbal::pipesim::{stage_peak_memory, SimConfig};
use vlbal::recompute::{optimize, RecomputePlan};
use vlbal::Error;

fn budget_range(spec: &vlbal::costmodel::ModelSpec, p: &Partition, sim: &SimConfig) -> (u64, u64) {
    let lo = stage_peak_memory(
        spec,
        p,
        &RecomputePlan::all_recompute(spec, p).unwrap(),
        sim,
    )
    .unwrap();
    let hi = stage_peak_memory(spec, p, &RecomputePlan::all_stored(spec, p).unwrap(), sim).unwrap();
    (*lo.iter().max().unwrap(), *hi.iter().max().unwrap())
}

#[test]
fn greedy_against_enumeration() {
    let mut r = rng(11);
    let mut gaps = Vec::new();
    for case in 0..200 {
        let l = r.random_range(2..=12u32);
        let n = r.random_range(1..=3usize).min(l as usize);
        let spec = random_spec(&mut r, l);
        let parts = all_partitions(l, n);
        let p = parts[r.random_range(0..parts.len())].clone();
        let base = SimConfig::new(r.random_range(1..=6u32), 10e9, 5e-6, u64::MAX)
            .with_weight_multiplier(2.0);
        let (lo, hi) = budget_range(&spec, &p, &base);
        let budget = if case % 10 == 0 {
            lo - 1
        } else {
            r.random_range(lo..=hi)
        };
        let sim = base.with_device_memory(budget);
        let exact = best_subset(&spec, &p, &sim);
        match (optimize(&spec, &p, &sim), exact) {
            (Ok(g), Some((best, _))) => {
                let gap = g.result.iteration_time / best - 1.0;
                assert!(gap >= -1e-12);
                gaps.push(gap);
            }
            (Err(Error::Infeasible { .. }), None) => {}
            (g, e) => panic!(
                "case {case}: greedy {:?} vs enumeration {:?}",
                g.map(|o| o.plan),
                e
            ),
        }
    }
    let worst = gaps.iter().copied().fold(0.0, f64::max);
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    println!(
        "greedy gap over {} feasible cases: mean {:.4}%, worst {:.4}%",
        gaps.len(),
        mean * 100.0,
        worst * 100.0
    );
    assert!(worst <= 0.05, "worst gap {worst}");
}

#[test]
fn more_memory_never_slower() {
    let mut r = rng(12);
    for _ in 0..100 {
        let l = r.random_range(4..=24u32);
        let spec = random_spec(&mut r, l);
        let p = all_partitions(l, 3).swap_remove(0);
        let p = Partition::new(vec![l / 3 + 1, 2 * l / 3 + 1], l).unwrap_or(p);
        let base = SimConfig::new(r.random_range(1..=8u32), 10e9, 5e-6, u64::MAX);
        let (lo, hi) = budget_range(&spec, &p, &base);
        let mut last = f64::INFINITY;
        for i in 0..10u64 {
            let b = lo + (hi - lo) * i / 9;
            let t = optimize(&spec, &p, &base.clone().with_device_memory(b))
                .unwrap()
                .result
                .iteration_time;
            assert!(t <= last, "budget {b}: {t} > {last}");
            last = t;
        }
    }
}

#[test]
fn all_recompute_is_the_floor() {
    let mut r = rng(13);
    for _ in 0..100 {
        let l = r.random_range(2..=16u32);
        let spec = random_spec(&mut r, l);
        let p = Partition::new(vec![l / 2 + 1], l).unwrap();
        let sim = SimConfig::new(4, 10e9, 0.0, u64::MAX);
        let floor = stage_peak_memory(
            &spec,
            &p,
            &RecomputePlan::all_recompute(&spec, &p).unwrap(),
            &sim,
        )
        .unwrap();
        let mask: Vec<u32> = (1..=l).filter(|_| r.random_bool(0.5)).collect();
        let other = stage_peak_memory(
            &spec,
            &p,
            &RecomputePlan::from_stored(&p, &mask).unwrap(),
            &sim,
        )
        .unwrap();
        assert!(floor.iter().zip(&other).all(|(a, b)| a <= b));
    }
}
