//! C ABI over the planner.
//!
//! Every fallible function returns a [`VlbalStatus`]; on failure the message
//! is available from [`vlbal_last_error_message`] on the same thread.
//! Objects are opaque handles released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use vlbal::batcher::{derive_thresholds, evaluate_plan, isf_run_with, BatchLayout};
use vlbal::costmodel::{analytic_profile, ModelSpec};
use vlbal::ingest::{
    generate_dataset, load_dataset, load_model, save_doc, to_versioned_string, PlanDoc,
    SynthDistribution,
};
use vlbal::partition::{select_partition, RecomputeMode, SearchConfig};
use vlbal::pipesim::{simulate, SimConfig};
use vlbal::presets::{arch_preset, TOKENS_PER_TILE};
use vlbal::recompute::{optimize, RecomputePlan};
use vlbal::{Dataset, DeviceLoads, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VlbalStatus {
    Ok = 0,
    InvalidInput = 1,
    InvalidPartition = 2,
    InvalidModel = 3,
    Infeasible = 4,
    NoFeasibleCandidate = 5,
    TextOnly = 6,
    Parse = 7,
    DuplicateId = 8,
    SchemaVersion = 9,
    UnknownName = 10,
    Io = 11,
    Json = 12,
    NullPointer = 13,
    InvalidUtf8 = 14,
    BufferTooSmall = 15,
    Panic = 99,
}

impl From<&Error> for VlbalStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidInput(_) => Self::InvalidInput,
            Error::InvalidPartition(_) => Self::InvalidPartition,
            Error::InvalidModel(_) => Self::InvalidModel,
            Error::Infeasible { .. } => Self::Infeasible,
            Error::NoFeasibleCandidate(_) => Self::NoFeasibleCandidate,
            Error::TextOnly => Self::TextOnly,
            Error::Parse { .. } => Self::Parse,
            Error::DuplicateId { .. } => Self::DuplicateId,
            Error::SchemaVersion { .. } => Self::SchemaVersion,
            Error::Unknown { .. } => Self::UnknownName,
            Error::Io(_) => Self::Io,
            Error::Json(_) => Self::Json,
        }
    }
}

/// Pipeline and device parameters, mirroring the simulator configuration.
/// A non-finite `p2p_bandwidth` means transfers cost latency only.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct VlbalSimConfig {
    pub micro_batches: u32,
    pub p2p_bandwidth: f64,
    pub p2p_latency: f64,
    pub device_memory: u64,
    pub overlap_comm: bool,
    pub weight_multiplier: f64,
}

impl From<&SimConfig> for VlbalSimConfig {
    fn from(s: &SimConfig) -> Self {
        Self {
            micro_batches: s.micro_batches,
            p2p_bandwidth: s.p2p_bandwidth,
            p2p_latency: s.p2p_latency,
            device_memory: s.device_memory,
            overlap_comm: s.overlap_comm,
            weight_multiplier: s.weight_multiplier,
        }
    }
}

impl From<&VlbalSimConfig> for SimConfig {
    fn from(c: &VlbalSimConfig) -> Self {
        let bw = if c.p2p_bandwidth.is_nan() {
            f64::INFINITY
        } else {
            c.p2p_bandwidth
        };
        SimConfig::new(c.micro_batches, bw, c.p2p_latency, c.device_memory)
            .with_overlap(c.overlap_comm)
            .with_weight_multiplier(c.weight_multiplier)
    }
}

/// Outcome of packing a dataset.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct VlbalBalanceSummary {
    pub q_vision: u32,
    pub q_text: u32,
    pub iterations: u32,
    pub accepted_groups: u64,
    pub leftover_samples: u64,
    pub ave_bs: f64,
    pub pad_ratio: f64,
    pub dist_ratio_vision: f64,
    pub dist_ratio_text: f64,
}

/// One simulated iteration.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct VlbalSimSummary {
    /// Seconds.
    pub iteration_time: f64,
    pub bubble_ratio: f64,
    pub n_stages: u32,
}

pub struct VlbalDataset(Dataset);
pub struct VlbalModel(ModelSpec);
pub struct VlbalPlan(PlanDoc);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: VlbalStatus, msg: &str) -> VlbalStatus {
    set_error(msg);
    status
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), VlbalStatus>) -> VlbalStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VlbalStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| (*s).to_owned())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(VlbalStatus::Panic, &msg)
        }
    }
}

trait OrStatus<T> {
    fn status(self) -> Result<T, VlbalStatus>;
}

impl<T> OrStatus<T> for vlbal::Result<T> {
    fn status(self) -> Result<T, VlbalStatus> {
        self.map_err(|e| fail(VlbalStatus::from(&e), &e.to_string()))
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, VlbalStatus> {
    if p.is_null() {
        return Err(fail(VlbalStatus::NullPointer, &format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        fail(
            VlbalStatus::InvalidUtf8,
            &format!("{what} is not valid UTF-8"),
        )
    })
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, VlbalStatus> {
    p.as_ref()
        .ok_or_else(|| fail(VlbalStatus::NullPointer, &format!("{what} is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, VlbalStatus> {
    p.as_mut()
        .ok_or_else(|| fail(VlbalStatus::NullPointer, &format!("{what} is null")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], VlbalStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(VlbalStatus::NullPointer, &format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message of the last failure on this thread; empty after a success. The
/// pointer stays valid until the next call into this library on the thread.
#[no_mangle]
pub extern "C" fn vlbal_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn vlbal_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Padding ratio of per-sample token counts.
///
/// # Safety
/// `tokens` must point to `len` readable values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vlbal_pad_ratio(
    tokens: *const u64,
    len: usize,
    out: *mut f64,
) -> VlbalStatus {
    guard(|| {
        let xs = slice_arg(tokens, len, "tokens")?;
        *out_arg(out, "out")? = vlbal::pad_ratio(xs).status()?;
        Ok(())
    })
}

/// Distribution ratio of per-device token counts.
///
/// # Safety
/// `loads` must point to `len` readable values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vlbal_dist_ratio(
    loads: *const u64,
    len: usize,
    out: *mut f64,
) -> VlbalStatus {
    guard(|| {
        let xs = slice_arg(loads, len, "loads")?;
        let loads = DeviceLoads::new(xs.to_vec()).status()?;
        *out_arg(out, "out")? = vlbal::dist_ratio(&loads).status()?;
        Ok(())
    })
}

/// Reads a JSON-lines dataset.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vlbal_dataset_load(
    path: *const c_char,
    out: *mut *mut VlbalDataset,
) -> VlbalStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(VlbalDataset(load_dataset(path).status()?)));
        Ok(())
    })
}

/// Generates a synthetic dataset from a named preset.
///
/// # Safety
/// `preset` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vlbal_dataset_generate(
    preset: *const c_char,
    samples: usize,
    seed: u64,
    out: *mut *mut VlbalDataset,
) -> VlbalStatus {
    guard(|| {
        let name = str_arg(preset, "preset")?;
        let out = out_arg(out, "out")?;
        let dist = SynthDistribution::preset(name)
            .status()?
            .with_count(samples)
            .with_seed(seed);
        *out = Box::into_raw(Box::new(VlbalDataset(generate_dataset(&dist).status()?)));
        Ok(())
    })
}

/// Number of samples; 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vlbal_dataset_len(dataset: *const VlbalDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.len())
}

/// # Safety
/// `dataset` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vlbal_dataset_free(dataset: *mut VlbalDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Packs the dataset with thresholds derived from `q_text` and reports
/// balance over `dp_ranks` ranks.
///
/// # Safety
/// `dataset` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vlbal_balance(
    dataset: *const VlbalDataset,
    q_text: u32,
    dp_ranks: usize,
    seed: u64,
    out: *mut VlbalBalanceSummary,
) -> VlbalStatus {
    guard(|| {
        let ds = &ref_arg(dataset, "dataset")?.0;
        let out = out_arg(out, "out")?;
        let params = derive_thresholds(ds, q_text).status()?.with_seed(seed);
        let plan = isf_run_with(ds, &params, dp_ranks).status()?;
        let report = evaluate_plan(
            &plan.accepted_groups,
            BatchLayout::Packed,
            dp_ranks,
            TOKENS_PER_TILE,
        )
        .status()?;
        *out = VlbalBalanceSummary {
            q_vision: params.q_vision,
            q_text: params.q_text,
            iterations: plan.iterations_run,
            accepted_groups: plan.accepted_groups.len() as u64,
            leftover_samples: plan.leftovers.len() as u64,
            ave_bs: report.ave_bs,
            pad_ratio: report.pad_ratio,
            dist_ratio_vision: report.dist_ratio_vision,
            dist_ratio_text: report.dist_ratio_text,
        };
        Ok(())
    })
}

/// Analytic profile of a named architecture preset.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vlbal_model_from_preset(
    name: *const c_char,
    out: *mut *mut VlbalModel,
) -> VlbalStatus {
    guard(|| {
        let name = str_arg(name, "name")?;
        let out = out_arg(out, "out")?;
        let preset = arch_preset(name).status()?;
        *out = Box::into_raw(Box::new(VlbalModel(
            analytic_profile(&preset.arch).status()?,
        )));
        Ok(())
    })
}

/// Reads a model spec document.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vlbal_model_load(
    path: *const c_char,
    out: *mut *mut VlbalModel,
) -> VlbalStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(VlbalModel(load_model(path).status()?)));
        Ok(())
    })
}

/// Layer count; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vlbal_model_num_layers(model: *const VlbalModel) -> u32 {
    model.as_ref().map_or(0, |m| m.0.num_layers())
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vlbal_model_free(model: *mut VlbalModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Cluster parameters of a named architecture preset.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vlbal_sim_config_for_preset(
    name: *const c_char,
    out: *mut VlbalSimConfig,
) -> VlbalStatus {
    guard(|| {
        let name = str_arg(name, "name")?;
        let out = out_arg(out, "out")?;
        *out = VlbalSimConfig::from(&arch_preset(name).status()?.sim_config());
        Ok(())
    })
}

/// Searches a partition into `n_stages` stages and, when `adaptive` is set,
/// chooses per-layer re-computation for it; otherwise every layer is
/// recomputed.
///
/// # Safety
/// `model` and `config` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vlbal_plan_search(
    model: *const VlbalModel,
    n_stages: usize,
    config: *const VlbalSimConfig,
    adaptive: bool,
    out: *mut *mut VlbalPlan,
) -> VlbalStatus {
    guard(|| {
        let spec = &ref_arg(model, "model")?.0;
        let sim = SimConfig::from(ref_arg(config, "config")?);
        let out = out_arg(out, "out")?;
        let mut cfg = SearchConfig::new(sim.clone());
        cfg.recompute = if adaptive {
            RecomputeMode::Adaptive
        } else {
            RecomputeMode::Full
        };
        let best = select_partition(spec, n_stages, &cfg).status()?.best;
        let plan = if adaptive {
            optimize(spec, &best, &sim).status()?.plan
        } else {
            RecomputePlan::all_recompute(spec, &best).status()?
        };
        let doc = PlanDoc::new(spec.clone(), best, &plan, sim).status()?;
        *out = Box::into_raw(Box::new(VlbalPlan(doc)));
        Ok(())
    })
}

/// Reads a plan document.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vlbal_plan_load(
    path: *const c_char,
    out: *mut *mut VlbalPlan,
) -> VlbalStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(VlbalPlan(PlanDoc::load(path).status()?)));
        Ok(())
    })
}

/// Writes a plan document.
///
/// # Safety
/// `plan` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vlbal_plan_save(
    plan: *const VlbalPlan,
    path: *const c_char,
) -> VlbalStatus {
    guard(|| {
        let doc = &ref_arg(plan, "plan")?.0;
        save_doc(doc, str_arg(path, "path")?).status()
    })
}

/// Plan as a JSON string, released with [`vlbal_string_free`].
///
/// # Safety
/// `plan` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vlbal_plan_to_json(
    plan: *const VlbalPlan,
    out: *mut *mut c_char,
) -> VlbalStatus {
    guard(|| {
        let doc = &ref_arg(plan, "plan")?.0;
        let out = out_arg(out, "out")?;
        let s = to_versioned_string(doc).status()?;
        *out = CString::new(s)
            .map_err(|_| fail(VlbalStatus::Json, "interior NUL"))?
            .into_raw();
        Ok(())
    })
}

/// Stage count; 0 for a null handle.
///
/// # Safety
/// `plan` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vlbal_plan_n_stages(plan: *const VlbalPlan) -> usize {
    plan.as_ref().map_or(0, |p| p.0.partition.n_stages())
}

unsafe fn copy_out(src: &[u32], buf: *mut u32, len: usize) -> Result<(), VlbalStatus> {
    if len < src.len() {
        return Err(fail(
            VlbalStatus::BufferTooSmall,
            &format!("buffer holds {len} values but {} are needed", src.len()),
        ));
    }
    if !src.is_empty() {
        if buf.is_null() {
            return Err(fail(VlbalStatus::NullPointer, "buf is null"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    }
    Ok(())
}

/// Layers per stage, into `buf` of capacity `len` (at least the stage count).
///
/// # Safety
/// `plan` must be a live handle; `buf` must hold `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn vlbal_plan_stage_layers(
    plan: *const VlbalPlan,
    buf: *mut u32,
    len: usize,
) -> VlbalStatus {
    guard(|| copy_out(&ref_arg(plan, "plan")?.0.stages_layer_num, buf, len))
}

/// Layers per stage whose re-computation is cancelled.
///
/// # Safety
/// `plan` must be a live handle; `buf` must hold `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn vlbal_plan_cancelled(
    plan: *const VlbalPlan,
    buf: *mut u32,
    len: usize,
) -> VlbalStatus {
    guard(|| {
        copy_out(
            &ref_arg(plan, "plan")?.0.recompute_cancelled_per_stage,
            buf,
            len,
        )
    })
}

/// Simulates the plan under its own configuration.
///
/// # Safety
/// `plan` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vlbal_plan_simulate(
    plan: *const VlbalPlan,
    out: *mut VlbalSimSummary,
) -> VlbalStatus {
    guard(|| {
        let doc = &ref_arg(plan, "plan")?.0;
        let out = out_arg(out, "out")?;
        let r = simulate(
            &doc.model,
            &doc.partition,
            &doc.recompute_plan().status()?,
            &doc.sim,
        )
        .status()?;
        *out = VlbalSimSummary {
            iteration_time: r.iteration_time,
            bubble_ratio: r.bubble_ratio,
            n_stages: r.n_stages() as u32,
        };
        Ok(())
    })
}

/// # Safety
/// `plan` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vlbal_plan_free(plan: *mut VlbalPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vlbal_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
