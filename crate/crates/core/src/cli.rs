//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::batcher::{
    baseline_batches, derive_thresholds, evaluate_plan, isf_run_with, BalanceReport,
    BaselineStrategy, BatchLayout, IterationMetrics,
};
use crate::costmodel::{analytic_profile, ModelSpec};
use crate::error::{Error, Result};
use crate::ingest::{
    generate_dataset, load_dataset, load_model, save_dataset, to_versioned_string, PlanDoc,
    SynthDistribution,
};
use crate::partition::{
    jitter_raw_count, select_partition, RecomputeMode, SearchConfig, DEFAULT_RADIUS, DEFAULT_TOP_K,
};
use crate::pipesim::{export_timeline, simulate, stage_peak_memory, SimConfig, TimelineFormat};
use crate::planner::{plan_full, LadderConfig};
use crate::presets::{arch_preset, ArchPreset, TOKENS_PER_TILE};
use crate::recompute::{memory_report, optimize, RecomputePlan};
use crate::types::{BalanceParams, Dataset, Group, DEFAULT_MAX_ITERS};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_ARCH_PRESET: &str = "internvl-6b-20b";
const GIB: f64 = (1u64 << 30) as f64;

#[derive(Debug, Parser)]
#[command(
    name = "vlbal",
    version,
    about = "Balance data, pipeline stages and re-computation for vision-language training"
)]
pub struct Cli {
    /// TOML file supplying defaults for any flag (flags win).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pack samples into balanced groups (or run a baseline batcher) and report balance.
    DataBalance(DataBalanceArgs),
    /// Search pipeline partitions around the greedy anchor.
    PartitionSearch(PartitionSearchArgs),
    /// Choose per-layer re-computation for a plan under a memory budget.
    Recompute(RecomputeArgs),
    /// Thresholds, packing, partition search and re-computation end to end.
    PlanFull(PlanFullArgs),
    /// Simulate one 1F1B iteration of a plan.
    Simulate(SimulateArgs),
    /// Write a synthetic dataset as JSON lines.
    GenerateDataset(GenerateArgs),
    /// Write the analytic cost profile of an architecture preset.
    Profile(ProfileArgs),
}

#[derive(Debug, Args)]
pub struct DataSource {
    /// JSON-lines file of {id, vision_units, text_tokens} records.
    #[arg(long, conflicts_with = "synth")]
    pub dataset: Option<PathBuf>,
    /// Synthetic preset instead of a file: tiles-12, tiles-4, single-image.
    #[arg(long)]
    pub synth: Option<String>,
    /// Sample count for --synth.
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct HardwareArgs {
    #[arg(long)]
    pub micro_batches: Option<u32>,
    /// Point-to-point bandwidth in bytes per second.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Point-to-point latency in seconds.
    #[arg(long)]
    pub latency: Option<f64>,
    /// Per-device memory, e.g. 80G (K/M/G/T are powers of 1024).
    #[arg(long, value_parser = parse_bytes)]
    pub device_mem: Option<u64>,
    /// Overlap transfers with compute.
    #[arg(long)]
    pub overlap: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Isf,
    Random,
    Sorted,
    DeviceGroup,
}

#[derive(Debug, Args)]
pub struct DataBalanceArgs {
    #[command(flatten)]
    pub source: DataSource,
    #[arg(long, value_enum, default_value = "isf")]
    pub strategy: StrategyArg,
    #[arg(long)]
    pub q_text: Option<u32>,
    /// Fixed vision cap; 0 selects text-only mode.
    #[arg(long, conflicts_with = "derive")]
    pub q_vision: Option<u32>,
    /// Derive the vision cap from dataset statistics (the default).
    #[arg(long)]
    pub derive: bool,
    #[arg(long)]
    pub iters: Option<u32>,
    #[arg(long, env = "VLBAL_SEED")]
    pub seed: Option<u64>,
    /// Data-parallel ranks for the dist ratio.
    #[arg(long)]
    pub dp: Option<usize>,
    /// Samples per batch for the baseline strategies.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Groups (or batches) document.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Balance report document.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RecomputeArg {
    Full,
    Adaptive,
}

#[derive(Debug, Args)]
pub struct ModelSource {
    /// Model spec document; overrides --arch-preset.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    #[arg(long)]
    pub arch_preset: Option<String>,
    /// Tensor-parallel degree for preset profiles.
    #[arg(long)]
    pub tp: Option<u32>,
}

#[derive(Debug, Args)]
pub struct PartitionSearchArgs {
    #[command(flatten)]
    pub model: ModelSource,
    #[arg(long)]
    pub pp: Option<usize>,
    #[arg(long)]
    pub radius: Option<u32>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long, value_enum, default_value = "full")]
    pub recompute: RecomputeArg,
    #[command(flatten)]
    pub hw: HardwareArgs,
    /// Plan document for the best partition.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Evaluated candidates as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RecomputeArgs {
    #[arg(long)]
    pub plan: PathBuf,
    #[command(flatten)]
    pub hw: HardwareArgs,
    /// Also report simulated time at this many budgets between the
    /// all-recompute and all-stored peaks.
    #[arg(long)]
    pub sweep: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlanFullArgs {
    #[command(flatten)]
    pub source: DataSource,
    #[arg(long)]
    pub arch_preset: Option<String>,
    #[arg(long)]
    pub pp: Option<usize>,
    #[arg(long)]
    pub dp: Option<usize>,
    #[arg(long)]
    pub tp: Option<u32>,
    #[arg(long)]
    pub q_text: Option<u32>,
    #[arg(long)]
    pub iters: Option<u32>,
    #[arg(long, env = "VLBAL_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub radius: Option<u32>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[command(flatten)]
    pub hw: HardwareArgs,
    /// Directory for report.json, ladder.csv and plan.json.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub plan: PathBuf,
    #[command(flatten)]
    pub hw: HardwareArgs,
    /// Timeline JSON.
    #[arg(long)]
    pub timeline: Option<PathBuf>,
    /// Gantt chart SVG.
    #[arg(long)]
    pub gantt: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value = "tiles-12")]
    pub preset: String,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, env = "VLBAL_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub cap: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[arg(long)]
    pub arch_preset: Option<String>,
    #[arg(long)]
    pub tp: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Defaults read from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub arch_preset: Option<String>,
    pub synth: Option<String>,
    pub samples: Option<usize>,
    pub pp: Option<usize>,
    pub dp: Option<usize>,
    pub tp: Option<u32>,
    pub device_mem: Option<String>,
    pub micro_batches: Option<u32>,
    pub bandwidth: Option<f64>,
    pub latency: Option<f64>,
    pub overlap: Option<bool>,
    pub q_text: Option<u32>,
    pub iters: Option<u32>,
    pub radius: Option<u32>,
    pub top_k: Option<usize>,
    pub batch_size: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => toml::from_str(&fs::read_to_string(p)?)
                .map_err(|e| Error::invalid(format!("config {}: {e}", p.display()))),
        }
    }

    fn device_mem(&self) -> Result<Option<u64>> {
        self.device_mem
            .as_deref()
            .map(parse_bytes)
            .transpose()
            .map_err(Error::InvalidInput)
    }
}

/// Parses `80G`, `512MiB`, `1.5T` or a plain byte count.
pub fn parse_bytes(s: &str) -> std::result::Result<u64, String> {
    let t = s.trim();
    let t = t
        .strip_suffix("iB")
        .or_else(|| t.strip_suffix('B'))
        .unwrap_or(t);
    let (num, shift) = match t.char_indices().last() {
        Some((i, c)) if c.is_ascii_alphabetic() => {
            let shift = match c.to_ascii_uppercase() {
                'K' => 10,
                'M' => 20,
                'G' => 30,
                'T' => 40,
                _ => return Err(format!("unknown size suffix in `{s}`")),
            };
            (&t[..i], shift)
        }
        _ => (t, 0),
    };
    let v: f64 = num
        .trim()
        .parse()
        .map_err(|_| format!("invalid byte size `{s}`"))?;
    let bytes = v * (1u64 << shift) as f64;
    if !(bytes.is_finite() && bytes >= 0.0 && bytes < u64::MAX as f64) {
        return Err(format!("byte size `{s}` out of range"));
    }
    Ok(bytes.round() as u64)
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidInput(_)
        | Error::InvalidPartition(_)
        | Error::InvalidModel(_)
        | Error::TextOnly
        | Error::Unknown { .. } => 2,
        Error::Parse { .. }
        | Error::DuplicateId { .. }
        | Error::SchemaVersion { .. }
        | Error::Json(_)
        | Error::Io(_) => 3,
        Error::Infeasible { .. } | Error::NoFeasibleCandidate(_) => 4,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::DataBalance(a) => data_balance(a, &cfg),
        Command::PartitionSearch(a) => partition_search(a, &cfg),
        Command::Recompute(a) => recompute(a, &cfg),
        Command::PlanFull(a) => plan_full_cmd(a, &cfg),
        Command::Simulate(a) => simulate_cmd(a, &cfg),
        Command::GenerateDataset(a) => generate(a, &cfg),
        Command::Profile(a) => profile(a, &cfg),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

fn write_doc<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, &to_versioned_string(value)?)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::invalid(format!("csv: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::invalid(format!("csv: {e}")))?;
    write_file(path, &String::from_utf8_lossy(&bytes))
}

fn load_source(src: &DataSource, cfg: &FileConfig, seed: u64) -> Result<Dataset> {
    match (&src.dataset, src.synth.as_ref().or(cfg.synth.as_ref())) {
        (Some(path), _) => load_dataset(path),
        (None, Some(name)) => {
            let mut dist = SynthDistribution::preset(name)?.with_seed(seed);
            if let Some(n) = src.samples.or(cfg.samples) {
                dist = dist.with_count(n);
            }
            generate_dataset(&dist)
        }
        (None, None) => Err(Error::invalid("give --dataset PATH or --synth PRESET")),
    }
}

fn preset_named(flag: Option<&String>, cfg: &FileConfig) -> Result<ArchPreset> {
    let name = flag
        .or(cfg.arch_preset.as_ref())
        .map_or(DEFAULT_ARCH_PRESET, String::as_str);
    arch_preset(name)
}

fn apply_tp(preset: &mut ArchPreset, flag: Option<u32>, cfg: &FileConfig) {
    if let Some(tp) = flag.or(cfg.tp) {
        preset.arch.tp_degree = tp;
    }
}

/// Flags over config over `base`.
fn resolve_sim(base: SimConfig, hw: &HardwareArgs, cfg: &FileConfig) -> Result<SimConfig> {
    let mut sim = base;
    if let Some(m) = hw.micro_batches.or(cfg.micro_batches) {
        sim.micro_batches = m;
    }
    if let Some(b) = hw.bandwidth.or(cfg.bandwidth) {
        sim.p2p_bandwidth = b;
    }
    if let Some(l) = hw.latency.or(cfg.latency) {
        sim.p2p_latency = l;
    }
    if let Some(d) = hw
        .device_mem
        .map_or_else(|| cfg.device_mem(), |d| Ok(Some(d)))?
    {
        sim.device_memory = d;
    }
    if hw.overlap || cfg.overlap == Some(true) {
        sim.overlap_comm = true;
    }
    sim.validate()?;
    Ok(sim)
}

fn fmt_ratio(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_owned(), |v| format!("{v:.4}"))
}

fn balance_row(method: &str, r: &BalanceReport) -> String {
    format!(
        "{method:<13} {:>7.2} {:>9} {:>9} {:>8.4} {:>9.4} {:>9.4}",
        r.ave_bs,
        r.max_seq_len_vision,
        r.max_seq_len_text,
        r.pad_ratio,
        r.dist_ratio_vision,
        r.dist_ratio_text
    )
}

const BALANCE_HEADER: &str =
    "method         AVE-BS  MaxSeq-V  MaxSeq-T      Pad  Dist-ViT  Dist-LLM";

/// `data-balance --report` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataBalanceReport {
    pub strategy: String,
    pub samples: usize,
    pub params: Option<BalanceParams>,
    pub iterations_run: Option<u32>,
    pub accepted_samples: usize,
    pub leftovers: usize,
    pub fallback_groups: usize,
    pub oversize: usize,
    /// Accepted groups (ISF) or all batches (baselines).
    pub balance: BalanceReport,
    /// Every group used for training, fallback and oversize included.
    pub balance_all: BalanceReport,
    pub iterations: Vec<IterationMetrics>,
}

/// `data-balance --out` document for the baseline strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineDoc {
    pub strategy: String,
    pub batch_size: usize,
    pub batches: Vec<Group>,
}

fn data_balance(a: DataBalanceArgs, cfg: &FileConfig) -> Result<()> {
    let seed = a.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    let dataset = load_source(&a.source, cfg, seed)?;
    let dp = a.dp.or(cfg.dp).unwrap_or(4);
    let q_text = a.q_text.or(cfg.q_text).unwrap_or(4096);
    let report = match a.strategy {
        StrategyArg::Isf => {
            let params = match a.q_vision {
                Some(0) => BalanceParams::text_only(q_text),
                Some(q) => BalanceParams::new(q, q_text),
                None => derive_thresholds(&dataset, q_text)?,
            }
            .with_seed(seed)
            .with_max_iters(a.iters.or(cfg.iters).unwrap_or(DEFAULT_MAX_ITERS));
            let plan = isf_run_with(&dataset, &params, dp)?;
            let all = plan.training_groups();
            println!(
                "q_vision={} q_text={} q_vision_min={} q_text_min={} seed={seed}",
                params.q_vision, params.q_text, params.q_vision_min, params.q_text_min
            );
            println!("iter  accepted  remaining  dist-ViT  dist-LLM  group-size");
            for m in &plan.metrics {
                println!(
                    "{:>4}  {:>8}  {:>9}  {:>8}  {:>8}  {:>10.2}",
                    m.iteration,
                    m.accepted_groups,
                    m.remaining_samples,
                    fmt_ratio(m.vision_dist_ratio),
                    fmt_ratio(m.text_dist_ratio),
                    m.mean_group_size
                );
            }
            let balance = evaluate_plan(
                &plan.accepted_groups,
                BatchLayout::Packed,
                dp,
                TOKENS_PER_TILE,
            )?;
            let balance_all = evaluate_plan(&all, BatchLayout::Packed, dp, TOKENS_PER_TILE)?;
            if let Some(out) = &a.out {
                write_doc(out, &plan)?;
            }
            DataBalanceReport {
                strategy: "isf".into(),
                samples: dataset.len(),
                params: Some(params),
                iterations_run: Some(plan.iterations_run),
                accepted_samples: plan.accepted_sample_count(),
                leftovers: plan.leftovers.len(),
                fallback_groups: plan.fallback_groups.len(),
                oversize: plan.oversize.len(),
                balance,
                balance_all,
                iterations: plan.metrics,
            }
        }
        other => {
            let (strategy, name) = match other {
                StrategyArg::Random => (BaselineStrategy::Random, "random"),
                StrategyArg::Sorted => (BaselineStrategy::Sorted, "sorted"),
                _ => (BaselineStrategy::DeviceGroup, "device-group"),
            };
            let batch_size = a.batch_size.or(cfg.batch_size).unwrap_or(4);
            let batches = baseline_batches(strategy, &dataset, batch_size, dp, seed)?;
            let balance = evaluate_plan(&batches, BatchLayout::Padded, dp, TOKENS_PER_TILE)?;
            if let Some(out) = &a.out {
                write_doc(
                    out,
                    &BaselineDoc {
                        strategy: name.into(),
                        batch_size,
                        batches,
                    },
                )?;
            }
            DataBalanceReport {
                strategy: name.into(),
                samples: dataset.len(),
                params: None,
                iterations_run: None,
                accepted_samples: dataset.len(),
                leftovers: 0,
                fallback_groups: 0,
                oversize: 0,
                balance_all: balance.clone(),
                balance,
                iterations: Vec::new(),
            }
        }
    };
    println!("{BALANCE_HEADER}");
    println!("{}", balance_row(&report.strategy, &report.balance));
    if report.strategy == "isf" {
        println!("{}", balance_row("isf+fallback", &report.balance_all));
        println!(
            "accepted {} of {} samples; {} leftovers in {} fallback groups; {} oversize",
            report.accepted_samples,
            report.samples,
            report.leftovers,
            report.fallback_groups,
            report.oversize
        );
    }
    if let Some(path) = &a.report {
        write_doc(path, &report)?;
    }
    Ok(())
}

fn resolve_model(m: &ModelSource, cfg: &FileConfig) -> Result<(ModelSpec, ArchPreset)> {
    let mut preset = preset_named(m.arch_preset.as_ref(), cfg)?;
    apply_tp(&mut preset, m.tp, cfg);
    let spec = match &m.profile {
        Some(p) => load_model(p)?,
        None => analytic_profile(&preset.arch)?,
    };
    Ok((spec, preset))
}

#[derive(Debug, Serialize)]
struct CandidateRow {
    rank: usize,
    cuts: String,
    stages_layer_num: String,
    var_fwd: f64,
    sum_comm: u64,
    score: f64,
    sim_time: Option<f64>,
    infeasible_stage: Option<usize>,
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

fn partition_search(a: PartitionSearchArgs, cfg: &FileConfig) -> Result<()> {
    let (spec, preset) = resolve_model(&a.model, cfg)?;
    let pp = a.pp.or(cfg.pp).unwrap_or(preset.pp);
    let sim = resolve_sim(preset.sim_config(), &a.hw, cfg)?;
    let mut search = SearchConfig::new(sim.clone());
    search.radius = a.radius.or(cfg.radius).unwrap_or(DEFAULT_RADIUS);
    search.top_k = a.top_k.or(cfg.top_k).unwrap_or(DEFAULT_TOP_K);
    search.recompute = match a.recompute {
        RecomputeArg::Full => RecomputeMode::Full,
        RecomputeArg::Adaptive => RecomputeMode::Adaptive,
    };
    println!(
        "{} candidates from radius {} over {} cuts",
        jitter_raw_count(pp, search.radius),
        search.radius,
        pp.saturating_sub(1)
    );
    let sel = select_partition(&spec, pp, &search)?;
    println!(
        "{} valid, {} simulated; anchor cuts [{}]",
        sel.valid_candidates,
        sel.evaluations.len(),
        join(sel.anchor.cuts())
    );
    println!("rank  cuts                  layers                score   var_fwd(ms^2)  comm(MiB)   time(s)");
    let rows: Vec<CandidateRow> = sel
        .evaluations
        .iter()
        .enumerate()
        .map(|(i, e)| CandidateRow {
            rank: i + 1,
            cuts: join(e.candidate.partition.cuts()),
            stages_layer_num: join(&e.candidate.partition.stages_layer_num()),
            var_fwd: e.candidate.var_fwd,
            sum_comm: e.candidate.sum_comm,
            score: e.candidate.combined_score,
            sim_time: e.sim_time,
            infeasible_stage: e.infeasible_stage,
        })
        .collect();
    for r in &rows {
        let time = match (r.sim_time, r.infeasible_stage) {
            (Some(t), _) => format!("{t:.6}"),
            (None, Some(k)) => format!("infeasible@{k}"),
            (None, None) => "-".into(),
        };
        println!(
            "{:>4}  {:<20}  {:<20}  {:>6.4}  {:>13.3}  {:>9.2}  {:>9}",
            r.rank,
            r.cuts,
            r.stages_layer_num,
            r.score,
            r.var_fwd / 1e6,
            r.sum_comm as f64 / f64::from(1u32 << 20),
            time
        );
    }
    println!(
        "best cuts [{}] stages [{}] time {:.6} s",
        join(sel.best.cuts()),
        join(&sel.best.stages_layer_num()),
        sel.best_time
    );
    if let Some(path) = &a.csv {
        write_csv(path, &rows)?;
    }
    if let Some(out) = &a.out {
        let plan = match search.recompute {
            RecomputeMode::Full => RecomputePlan::all_recompute(&spec, &sel.best)?,
            RecomputeMode::Adaptive => optimize(&spec, &sel.best, &sim)?.plan,
        };
        write_doc(out, &PlanDoc::new(spec, sel.best, &plan, sim)?)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepRow {
    device_mem: u64,
    cancelled: String,
    sim_time: f64,
}

fn recompute(a: RecomputeArgs, cfg: &FileConfig) -> Result<()> {
    let doc = PlanDoc::load(&a.plan)?;
    let sim = resolve_sim(doc.sim.clone(), &a.hw, cfg)?;
    let (spec, partition) = (&doc.model, &doc.partition);
    let base_plan = RecomputePlan::all_recompute(spec, partition)?;
    let base = simulate(spec, partition, &base_plan, &sim)?;
    let out = optimize(spec, partition, &sim)?;
    let report = memory_report(spec, partition, &out.plan, &sim)?;
    println!("stage  layers  cancelled  peak(GiB)  remaining(GiB)");
    for (r, (n, c)) in report.iter().zip(
        partition
            .stages_layer_num()
            .iter()
            .zip(&out.plan.per_stage_cancelled),
    ) {
        println!(
            "{:>5}  {:>6}  {:>9}  {:>9.2}  {:>14.2}",
            r.stage,
            n,
            c,
            r.peak_mem as f64 / GIB,
            r.remaining_mem as f64 / GIB
        );
    }
    println!(
        "all-recompute {:.6} s -> adaptive {:.6} s ({:.3}x)",
        base.iteration_time,
        out.result.iteration_time,
        base.iteration_time / out.result.iteration_time
    );
    if let Some(steps) = a.sweep.filter(|&s| s > 0) {
        let lo = *stage_peak_memory(spec, partition, &base_plan, &sim)?
            .iter()
            .max()
            .unwrap_or(&0);
        let all = RecomputePlan::all_stored(spec, partition)?;
        let hi = *stage_peak_memory(spec, partition, &all, &sim)?
            .iter()
            .max()
            .unwrap_or(&0);
        println!("device_mem(GiB)  cancelled            time(s)");
        for i in 0..steps {
            let frac = if steps == 1 {
                1.0
            } else {
                i as f64 / (steps - 1) as f64
            };
            let budget = lo + ((hi - lo) as f64 * frac).round() as u64;
            let o = optimize(spec, partition, &sim.clone().with_device_memory(budget))?;
            let row = SweepRow {
                device_mem: budget,
                cancelled: join(&o.plan.per_stage_cancelled),
                sim_time: o.result.iteration_time,
            };
            println!(
                "{:>15.3}  {:<19}  {:.6}",
                budget as f64 / GIB,
                row.cancelled,
                row.sim_time
            );
        }
    }
    if let Some(path) = &a.out {
        write_doc(
            path,
            &PlanDoc::new(doc.model.clone(), doc.partition.clone(), &out.plan, sim)?,
        )?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct LadderCsvRow<'a> {
    step: &'a str,
    epoch_time: f64,
    iterations: usize,
    micro_batches: usize,
    stages_layer_num: String,
    recompute_cancelled_per_stage: String,
    speedup_vs_naive: f64,
}

fn plan_full_cmd(a: PlanFullArgs, cfg: &FileConfig) -> Result<()> {
    let seed = a.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    let dataset = load_source(&a.source, cfg, seed)?;
    let mut preset = preset_named(a.arch_preset.as_ref(), cfg)?;
    apply_tp(&mut preset, a.tp, cfg);
    if let Some(pp) = a.pp.or(cfg.pp) {
        preset.pp = pp;
    }
    if let Some(dp) = a.dp.or(cfg.dp) {
        preset.dp = dp;
    }
    let sim = resolve_sim(preset.sim_config(), &a.hw, cfg)?;
    preset.micro_batches = sim.micro_batches;
    preset.p2p_bandwidth = sim.p2p_bandwidth;
    preset.p2p_latency = sim.p2p_latency;
    preset.device_memory = sim.device_memory;
    let mut lc = LadderConfig::new(preset);
    lc.seed = seed;
    lc.q_text = a.q_text.or(cfg.q_text).unwrap_or(lc.q_text);
    lc.max_iters = a.iters.or(cfg.iters).unwrap_or(lc.max_iters);
    lc.radius = a.radius.or(cfg.radius).unwrap_or(lc.radius);
    lc.top_k = a.top_k.or(cfg.top_k).unwrap_or(lc.top_k);
    if let Some(b) = cfg.batch_size {
        lc.baseline_batch_size = b;
    }

    let (report, doc) = plan_full(&dataset, &lc)?;
    println!(
        "{} on {} samples: q_vision={} q_text={} pp={} dp={} tp={}",
        report.preset,
        report.samples,
        report.params.q_vision,
        report.params.q_text,
        lc.preset.pp,
        lc.preset.dp,
        lc.preset.arch.tp_degree
    );
    println!("{BALANCE_HEADER}");
    for b in &report.balance {
        println!("{}", balance_row(&b.method, &b.report));
    }
    println!("partition        stages               VAR(param)  VAR(layers)  VAR(fwd)  dSUM(comm)  iter(s)");
    for p in &report.partitions {
        println!(
            "{:<15}  {:<19}  {:>10.3}  {:>11.1}  {:>8.1}  {:>10.2}  {:>7.4}",
            p.method,
            join(&p.metrics.stages_layer_num),
            p.metrics.var_param,
            p.metrics.var_num_layer,
            p.metrics.var_fwd_time,
            p.delta_sum_comm_mib,
            p.sim_time
        );
    }
    for m in &report.memory {
        let rem: Vec<String> = m
            .stages
            .iter()
            .map(|s| format!("{:.1}", s.remaining_mem as f64 / GIB))
            .collect();
        println!("remaining GiB ({}): {}", m.method, rem.join(" / "));
    }
    println!("step                  epoch(s)  speedup  stages               cancelled");
    for s in &report.ladder {
        println!(
            "{:<20}  {:>8.1}  {:>6.2}x  {:<19}  {}",
            s.name,
            s.epoch_time,
            s.speedup_vs_naive,
            join(&s.stages_layer_num),
            join(&s.recompute_cancelled_per_stage)
        );
    }
    if let Some(dir) = &a.out_dir {
        write_doc(&dir.join("report.json"), &report)?;
        write_doc(&dir.join("plan.json"), &doc)?;
        let rows: Vec<LadderCsvRow> = report
            .ladder
            .iter()
            .map(|s| LadderCsvRow {
                step: &s.name,
                epoch_time: s.epoch_time,
                iterations: s.iterations,
                micro_batches: s.micro_batches,
                stages_layer_num: join(&s.stages_layer_num),
                recompute_cancelled_per_stage: join(&s.recompute_cancelled_per_stage),
                speedup_vs_naive: s.speedup_vs_naive,
            })
            .collect();
        write_csv(&dir.join("ladder.csv"), &rows)?;
    }
    Ok(())
}

fn simulate_cmd(a: SimulateArgs, cfg: &FileConfig) -> Result<()> {
    let doc = PlanDoc::load(&a.plan)?;
    let sim = resolve_sim(doc.sim.clone(), &a.hw, cfg)?;
    let plan = doc.recompute_plan()?;
    let r = simulate(&doc.model, &doc.partition, &plan, &sim)?;
    println!(
        "iteration {:.6} s, bubble ratio {:.4}, {} micro-batches over {} stages",
        r.iteration_time,
        r.bubble_ratio,
        sim.micro_batches,
        r.n_stages()
    );
    println!("stage  busy(s)    peak(GiB)");
    for (k, (b, m)) in r
        .per_stage_busy
        .iter()
        .zip(&r.per_stage_peak_mem)
        .enumerate()
    {
        println!("{k:>5}  {b:>9.6}  {:>9.2}", *m as f64 / GIB);
    }
    if let Some(path) = &a.timeline {
        write_file(path, &export_timeline(&r, TimelineFormat::Json)?)?;
    }
    if let Some(path) = &a.gantt {
        write_file(path, &export_timeline(&r, TimelineFormat::Svg)?)?;
    }
    Ok(())
}

fn generate(a: GenerateArgs, cfg: &FileConfig) -> Result<()> {
    let mut dist = SynthDistribution::preset(&a.preset)?
        .with_seed(a.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED));
    if let Some(n) = a.samples.or(cfg.samples) {
        dist = dist.with_count(n);
    }
    if let Some(mu) = a.mu {
        dist.text_mu = mu;
    }
    if let Some(sigma) = a.sigma {
        dist.text_sigma = sigma;
    }
    if let Some(cap) = a.cap {
        dist.text_cap = cap;
    }
    let d = generate_dataset(&dist)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_dataset(&d, &a.out)?;
    println!(
        "{} samples, {} text tokens, {} vision units -> {}",
        d.len(),
        d.total_text(),
        d.total_vision(),
        a.out.display()
    );
    Ok(())
}

fn profile(a: ProfileArgs, cfg: &FileConfig) -> Result<()> {
    let mut preset = preset_named(a.arch_preset.as_ref(), cfg)?;
    apply_tp(&mut preset, a.tp, cfg);
    let spec =
        analytic_profile(&preset.arch)?.with_notes(format!("analytic profile of {}", preset.name));
    write_doc(&a.out, &spec)?;
    println!(
        "{} layers (connector at {}), total forward {:.3} ms -> {}",
        spec.num_layers(),
        spec.connector_index().map_or("-".into(), |c| c.to_string()),
        spec.total_fwd() / 1e3,
        a.out.display()
    );
    Ok(())
}
