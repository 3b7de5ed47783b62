//! Named model/cluster scenarios with analytic profiles.

use serde::{Deserialize, Serialize};

use crate::costmodel::{ArchConfig, TowerConfig};
use crate::error::{Error, Result};
use crate::pipesim::SimConfig;

/// Vision tokens produced by one image tile.
pub const TOKENS_PER_TILE: u64 = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchPreset {
    pub name: String,
    pub arch: ArchConfig,
    pub pp: usize,
    pub dp: usize,
    pub micro_batches: u32,
    pub device_memory: u64,
    pub p2p_bandwidth: f64,
    pub p2p_latency: f64,
    pub weight_multiplier: f64,
}

impl ArchPreset {
    pub fn sim_config(&self) -> SimConfig {
        SimConfig::new(
            self.micro_batches,
            self.p2p_bandwidth,
            self.p2p_latency,
            self.device_memory,
        )
        .with_weight_multiplier(self.weight_multiplier)
    }
}

const GIB: u64 = 1 << 30;

/// Stored bytes of a layer without re-computation, relative to its output
/// (about `34 s h` bytes against `2 s h`).
const PRESET_ACT_FULL_MULTIPLIER: f64 = 17.0;
/// bf16 weights and gradients plus data-parallel-sharded fp32 optimizer state.
const PRESET_WEIGHT_MULTIPLIER: f64 = 6.0;

struct Row {
    name: &'static str,
    vision: (u32, u64),
    language: (u32, u64),
    tp: u32,
    pp: usize,
    dp: usize,
}

const VIT_6B: (u32, u64) = (45, 3200);
const INTERNLM2_20B: (u32, u64) = (48, 6144);

/// Tensor/pipeline/data-parallel degrees follow the published runs of each
/// pairing.
const ROWS: [Row; 8] = [
    Row {
        name: "internvl-6b-20b",
        vision: VIT_6B,
        language: INTERNLM2_20B,
        tp: 2,
        pp: 4,
        dp: 4,
    },
    Row {
        name: "internvl-6b-llama3-8b",
        vision: VIT_6B,
        language: (32, 4096),
        tp: 1,
        pp: 4,
        dp: 8,
    },
    Row {
        name: "internvl-6b-yi-34b",
        vision: VIT_6B,
        language: (60, 7168),
        tp: 4,
        pp: 4,
        dp: 2,
    },
    Row {
        name: "internvl-6b-llama3-70b",
        vision: VIT_6B,
        language: (80, 8192),
        tp: 4,
        pp: 8,
        dp: 2,
    },
    Row {
        name: "internvl-6b-qwen-110b",
        vision: VIT_6B,
        language: (80, 8192),
        tp: 8,
        pp: 8,
        dp: 1,
    },
    Row {
        name: "eva-1b-20b",
        vision: (40, 1408),
        language: INTERNLM2_20B,
        tp: 2,
        pp: 4,
        dp: 4,
    },
    Row {
        name: "eva-8b-20b",
        vision: (32, 4096),
        language: INTERNLM2_20B,
        tp: 2,
        pp: 4,
        dp: 4,
    },
    Row {
        name: "eva-18b-20b",
        vision: (48, 5120),
        language: INTERNLM2_20B,
        tp: 4,
        pp: 4,
        dp: 4,
    },
];

pub fn arch_preset_names() -> Vec<&'static str> {
    ROWS.iter().map(|r| r.name).collect()
}

/// 9 tiles of 1024 vision tokens and 4K text tokens per micro-batch, bf16,
/// 8 micro-batches per pipeline, 80 GiB devices on a 25 GB/s fabric.
pub fn arch_preset(name: &str) -> Result<ArchPreset> {
    let row = ROWS
        .iter()
        .find(|r| r.name == name)
        .ok_or_else(|| Error::Unknown {
            kind: "architecture preset",
            name: name.to_owned(),
        })?;
    let arch = ArchConfig {
        vision: TowerConfig::new(row.vision.0, row.vision.1, 9 * TOKENS_PER_TILE)
            .with_span(TOKENS_PER_TILE),
        language: TowerConfig::new(row.language.0, row.language.1, 4096),
        subsample_factor: 4,
        bytes_per_elem: 2,
        device_throughput: 156e12,
        tp_degree: row.tp,
        act_full_multiplier: PRESET_ACT_FULL_MULTIPLIER,
    };
    Ok(ArchPreset {
        name: row.name.to_owned(),
        arch,
        pp: row.pp,
        dp: row.dp,
        micro_batches: 8,
        device_memory: 80 * GIB,
        p2p_bandwidth: 25e9,
        p2p_latency: 10e-6,
        weight_multiplier: PRESET_WEIGHT_MULTIPLIER,
    })
}
