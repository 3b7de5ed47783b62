//! Heterogeneous layer stack and per-layer costs.
//!
//! A [`ModelSpec`] is a vision tower, one connector and a language tower.
//! Costs come either from a measured profile file or from
//! [`analytic_profile`], which estimates them from transformer FLOP counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::Partition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Vision,
    Connector,
    Language,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerProfile {
    /// 1-based position in the stack.
    pub index: u32,
    pub kind: LayerKind,
    /// Forward time in microseconds.
    pub fwd_time: f64,
    /// Backward time in microseconds, excluding any re-forward.
    pub bwd_time: f64,
    /// Bytes sent to the next stage when a cut follows this layer.
    pub output_activation: u64,
    pub weight_mem: u64,
    /// Stored activation bytes per micro-batch when the layer is not recomputed.
    pub act_mem_full: u64,
    /// Stored activation bytes per micro-batch when the layer is recomputed.
    pub act_mem_ckpt: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layers: Vec<LayerProfile>,
    pub vision_seq_tokens: u64,
    pub language_seq_tokens: u64,
    pub subsample_factor: u32,
    pub tp_degree: u32,
    #[serde(default)]
    pub notes: String,
}

impl ModelSpec {
    /// Validates and wraps a layer stack.
    pub fn new(
        layers: Vec<LayerProfile>,
        vision_seq_tokens: u64,
        language_seq_tokens: u64,
        subsample_factor: u32,
        tp_degree: u32,
    ) -> Result<Self> {
        let spec = Self {
            layers,
            vision_seq_tokens,
            language_seq_tokens,
            subsample_factor,
            tp_degree,
            notes: String::new(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A stack of identical language layers; handy for planner experiments.
    pub fn uniform(num_layers: u32, fwd_time: f64, output_activation: u64) -> Result<Self> {
        let layers = (1..=num_layers)
            .map(|index| LayerProfile {
                index,
                kind: LayerKind::Language,
                fwd_time,
                bwd_time: 2.0 * fwd_time,
                output_activation,
                weight_mem: 1 << 20,
                act_mem_full: 4 * output_activation,
                act_mem_ckpt: output_activation,
            })
            .collect();
        Self::new(layers, 0, 0, 1, 1)
    }

    pub fn with_notes(mut self, notes: impl Into<String>) -> Self {
        self.notes = notes.into();
        self
    }

    /// Checks indices, per-layer cost sanity and tower ordering. A stack that
    /// has both vision and language layers needs exactly one connector
    /// between them; single-tower stacks may omit it.
    pub fn validate(&self) -> Result<()> {
        if self.subsample_factor == 0 || self.tp_degree == 0 {
            return Err(Error::InvalidModel(
                "subsample_factor and tp_degree must be >= 1".into(),
            ));
        }
        for (pos, l) in self.layers.iter().enumerate() {
            if l.index as usize != pos + 1 {
                return Err(Error::InvalidModel(format!(
                    "layer at position {} has index {}; indices must run 1..=L",
                    pos + 1,
                    l.index
                )));
            }
            if !(l.fwd_time.is_finite() && l.fwd_time > 0.0) {
                return Err(Error::InvalidModel(format!(
                    "layer {} fwd_time must be > 0",
                    l.index
                )));
            }
            if !(l.bwd_time.is_finite() && l.bwd_time >= 0.0) {
                return Err(Error::InvalidModel(format!(
                    "layer {} bwd_time must be >= 0",
                    l.index
                )));
            }
            if l.act_mem_ckpt > l.act_mem_full {
                return Err(Error::InvalidModel(format!(
                    "layer {} act_mem_ckpt exceeds act_mem_full",
                    l.index
                )));
            }
        }
        let rank = |k: LayerKind| match k {
            LayerKind::Vision => 0,
            LayerKind::Connector => 1,
            LayerKind::Language => 2,
        };
        if self
            .layers
            .windows(2)
            .any(|w| rank(w[0].kind) > rank(w[1].kind))
        {
            return Err(Error::InvalidModel(
                "layers must be ordered vision, connector, language".into(),
            ));
        }
        let count = |k| self.layers.iter().filter(|l| l.kind == k).count();
        let connectors = count(LayerKind::Connector);
        if connectors > 1 {
            return Err(Error::InvalidModel(format!(
                "{connectors} connector layers; at most one"
            )));
        }
        if count(LayerKind::Vision) > 0 && count(LayerKind::Language) > 0 && connectors != 1 {
            return Err(Error::InvalidModel(
                "a vision tower must reach the language tower through one connector".into(),
            ));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> u32 {
        self.layers.len() as u32
    }

    /// Layer by 1-based index.
    pub fn layer(&self, index: u32) -> &LayerProfile {
        &self.layers[index as usize - 1]
    }

    pub fn total_fwd(&self) -> f64 {
        self.layers.iter().map(|l| l.fwd_time).sum()
    }

    pub fn fwd_times(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.fwd_time).collect()
    }

    /// Index of the connector layer, if any.
    pub fn connector_index(&self) -> Option<u32> {
        self.layers
            .iter()
            .find(|l| l.kind == LayerKind::Connector)
            .map(|l| l.index)
    }
}

/// Shape of one transformer tower.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TowerConfig {
    pub layers: u32,
    pub hidden: u64,
    /// Tokens processed per micro-batch.
    pub seq_tokens: u64,
    /// Tokens per independent attention sequence (one image tile, one padded
    /// sample). Defaults to `seq_tokens`.
    #[serde(default)]
    pub attention_span: Option<u64>,
}

impl TowerConfig {
    pub fn new(layers: u32, hidden: u64, seq_tokens: u64) -> Self {
        Self {
            layers,
            hidden,
            seq_tokens,
            attention_span: None,
        }
    }

    pub fn with_span(mut self, span: u64) -> Self {
        self.attention_span = Some(span);
        self
    }

    fn span(&self) -> u64 {
        self.attention_span
            .unwrap_or(self.seq_tokens)
            .min(self.seq_tokens)
    }

    /// Forward FLOPs of one layer: `24 s h^2 + 4 s span h` (span = s for full attention).
    pub fn layer_flops(&self) -> f64 {
        let (s, h, a) = (
            self.seq_tokens as f64,
            self.hidden as f64,
            self.span() as f64,
        );
        24.0 * s * h * h + 4.0 * s * a * h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub vision: TowerConfig,
    pub language: TowerConfig,
    /// Token reduction applied by the connector.
    pub subsample_factor: u32,
    pub bytes_per_elem: u32,
    /// Sustained FLOP/s of one device.
    pub device_throughput: f64,
    pub tp_degree: u32,
    /// Stored activation bytes per layer as a multiple of its output when
    /// re-computation is cancelled.
    pub act_full_multiplier: f64,
}

pub const DEFAULT_ACT_FULL_MULTIPLIER: f64 = 4.0;

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let towers_ok = [self.vision, self.language]
            .iter()
            .all(|t| t.layers > 0 && t.hidden > 0 && t.seq_tokens > 0 && t.span() > 0);
        if !towers_ok
            || self.subsample_factor == 0
            || self.bytes_per_elem == 0
            || self.tp_degree == 0
            || !(self.device_throughput.is_finite() && self.device_throughput > 0.0)
            || !(self.act_full_multiplier.is_finite() && self.act_full_multiplier >= 1.0)
        {
            return Err(Error::invalid(
                "architecture dimensions must be positive and act_full_multiplier >= 1",
            ));
        }
        Ok(())
    }

    /// Same architecture with different per-micro-batch token counts.
    pub fn with_shape(mut self, vision: TowerConfig, language: TowerConfig) -> Self {
        self.vision = vision;
        self.language = language;
        self
    }
}

/// Builds a [`ModelSpec`] from transformer dimensions.
///
/// Per layer: `fwd = flops / throughput / tp`, `bwd = 2 fwd`, output
/// activation `s h bytes / tp`, weights `12 h^2 bytes / tp`, full activation
/// `multiplier x output`, checkpointed activation = output. The connector is
/// a two-layer MLP over the sub-sampled vision tokens, projecting to the
/// language hidden size.
pub fn analytic_profile(arch: &ArchConfig) -> Result<ModelSpec> {
    arch.validate()?;
    let tp = f64::from(arch.tp_degree);
    let bytes = u64::from(arch.bytes_per_elem);
    let tp_u = u64::from(arch.tp_degree);
    let usec = |flops: f64| flops / arch.device_throughput / tp * 1e6;
    let full = |out: u64| (out as f64 * arch.act_full_multiplier).round() as u64;

    let mut layers = Vec::new();
    let mut push = |kind, flops: f64, out: u64, weights: u64| {
        let fwd = usec(flops);
        layers.push(LayerProfile {
            index: layers.len() as u32 + 1,
            kind,
            fwd_time: fwd,
            bwd_time: 2.0 * fwd,
            output_activation: out,
            weight_mem: weights,
            act_mem_full: full(out),
            act_mem_ckpt: out,
        });
    };

    let v = arch.vision;
    let v_out = v.seq_tokens * v.hidden * bytes / tp_u;
    let v_weights = 12 * v.hidden * v.hidden * bytes / tp_u;
    for _ in 0..v.layers {
        push(LayerKind::Vision, v.layer_flops(), v_out, v_weights);
    }

    let l = arch.language;
    let sub = u64::from(arch.subsample_factor);
    let conn_tokens = v.seq_tokens.div_ceil(sub);
    let conn_in = v.hidden * sub;
    let conn_flops = 2.0 * conn_tokens as f64 * (conn_in as f64 * l.hidden as f64)
        + 2.0 * conn_tokens as f64 * (l.hidden as f64).powi(2);
    let conn_out = conn_tokens * l.hidden * bytes / tp_u;
    let conn_weights = (conn_in * l.hidden + l.hidden * l.hidden) * bytes / tp_u;
    push(LayerKind::Connector, conn_flops, conn_out, conn_weights);

    let l_out = l.seq_tokens * l.hidden * bytes / tp_u;
    let l_weights = 12 * l.hidden * l.hidden * bytes / tp_u;
    for _ in 0..l.layers {
        push(LayerKind::Language, l.layer_flops(), l_out, l_weights);
    }

    ModelSpec::new(
        layers,
        v.seq_tokens,
        l.seq_tokens,
        arch.subsample_factor,
        arch.tp_degree,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCost {
    /// Microseconds.
    pub fwd_time: f64,
    pub bwd_time: f64,
    pub weight_mem: u64,
    pub num_layers: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCosts {
    pub stages: Vec<StageCost>,
    /// Output activation of the last layer of every stage but the final one.
    pub boundary_activation: Vec<u64>,
}

/// Aggregates per-layer costs over the stages of `partition`.
pub fn stage_costs(spec: &ModelSpec, partition: &Partition) -> Result<StageCosts> {
    partition.check_against(spec)?;
    let ranges = partition.stage_ranges();
    let stages = ranges
        .iter()
        .map(|r| {
            let layers = r.clone().map(|i| spec.layer(i));
            let mut c = StageCost {
                fwd_time: 0.0,
                bwd_time: 0.0,
                weight_mem: 0,
                num_layers: 0,
            };
            for l in layers {
                c.fwd_time += l.fwd_time;
                c.bwd_time += l.bwd_time;
                c.weight_mem += l.weight_mem;
                c.num_layers += 1;
            }
            c
        })
        .collect();
    let boundary_activation = partition
        .cuts()
        .iter()
        .map(|&cut| spec.layer(cut - 1).output_activation)
        .collect();
    Ok(StageCosts {
        stages,
        boundary_activation,
    })
}
