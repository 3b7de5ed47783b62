use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::spread_ratio_or_zero;
use crate::types::Group;

/// How a batch is laid out on the device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchLayout {
    /// Members concatenated into one sequence per stream; nothing is padded.
    Packed,
    /// Every member padded to the longest member, per stream.
    Padded,
}

/// Balance statistics in the shape of the usual batching comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub layout: BatchLayout,
    pub batches: usize,
    pub dp_ranks: usize,
    /// Complete steps (one batch per rank) used for the dist ratios.
    pub steps: usize,
    /// Mean samples per batch.
    pub ave_bs: f64,
    pub max_seq_len_vision: u64,
    pub max_seq_len_text: u64,
    /// Mean within-batch pad ratio of the text stream.
    pub pad_ratio: f64,
    pub pad_ratio_vision: f64,
    pub dist_ratio_vision: f64,
    pub dist_ratio_text: f64,
}

/// Device tokens of one batch as `(vision, text)`.
pub fn batch_loads(g: &Group, layout: BatchLayout, tokens_per_vision_unit: u64) -> (u64, u64) {
    match layout {
        BatchLayout::Packed => (g.total_vision() * tokens_per_vision_unit, g.total_text()),
        BatchLayout::Padded => {
            let n = g.len() as u64;
            (
                g.max_vision() * n * tokens_per_vision_unit,
                g.max_text() * n,
            )
        }
    }
}

fn batch_pad(g: &Group, layout: BatchLayout) -> (f64, f64) {
    match layout {
        BatchLayout::Packed => (0.0, 0.0),
        BatchLayout::Padded => {
            let vision: Vec<u64> = g
                .members()
                .iter()
                .map(|s| u64::from(s.vision_units))
                .collect();
            let text: Vec<u64> = g
                .members()
                .iter()
                .map(|s| u64::from(s.text_tokens))
                .collect();
            (spread_ratio_or_zero(&vision), spread_ratio_or_zero(&text))
        }
    }
}

/// Mean dist ratio over complete steps when batch `j` goes to rank `j % ranks`.
/// `None` if not even one step is complete.
pub(crate) fn mean_step_spread(loads: &[u64], ranks: usize) -> Option<f64> {
    let steps = loads.len() / ranks;
    if steps == 0 {
        return None;
    }
    let total: f64 = loads.chunks_exact(ranks).map(spread_ratio_or_zero).sum();
    Some(total / steps as f64)
}

/// Assigns batches round-robin to `dp_ranks` ranks step by step and reports
/// padding, cross-rank spread, mean batch size and maximum device lengths.
/// A trailing incomplete step counts toward padding and batch size only.
pub fn evaluate_plan(
    batches: &[Group],
    layout: BatchLayout,
    dp_ranks: usize,
    tokens_per_vision_unit: u64,
) -> Result<BalanceReport> {
    if dp_ranks == 0 {
        return Err(Error::invalid("dp_ranks must be at least 1"));
    }
    if batches.len() < dp_ranks {
        return Err(Error::invalid(format!(
            "{} batches cannot fill one step across {dp_ranks} ranks",
            batches.len()
        )));
    }
    let loads: Vec<(u64, u64)> = batches
        .iter()
        .map(|g| batch_loads(g, layout, tokens_per_vision_unit))
        .collect();
    let vision: Vec<u64> = loads.iter().map(|l| l.0).collect();
    let text: Vec<u64> = loads.iter().map(|l| l.1).collect();

    let (pad_v, pad_t) = batches
        .iter()
        .map(|g| batch_pad(g, layout))
        .fold((0.0, 0.0), |(av, at), (v, t)| (av + v, at + t));
    let n = batches.len() as f64;
    let members: usize = batches.iter().map(Group::len).sum();

    Ok(BalanceReport {
        layout,
        batches: batches.len(),
        dp_ranks,
        steps: batches.len() / dp_ranks,
        ave_bs: members as f64 / n,
        max_seq_len_vision: vision.iter().copied().max().unwrap_or(0),
        max_seq_len_text: text.iter().copied().max().unwrap_or(0),
        pad_ratio: pad_t / n,
        pad_ratio_vision: pad_v / n,
        dist_ratio_vision: mean_step_spread(&vision, dp_ranks).unwrap_or(0.0),
        dist_ratio_text: mean_step_spread(&text, dp_ranks).unwrap_or(0.0),
    })
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
                .map(|(i, &(v, t))| Sample::new(format!("m{i}"), v, t).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn packed_groups_have_no_padding() {
        let gs = vec![group(&[(1, 10), (2, 30)]), group(&[(3, 40)])];
        let r = evaluate_plan(&gs, BatchLayout::Packed, 2, 256).unwrap();
        assert_eq!(r.pad_ratio, 0.0);
        assert_eq!(r.pad_ratio_vision, 0.0);
        assert_eq!(r.dist_ratio_text, 0.0);
        assert_eq!(r.dist_ratio_vision, 0.0);
        assert_eq!(r.max_seq_len_vision, 3 * 256);
        assert_eq!(r.ave_bs, 1.5);
    }

    #[test]
    fn padded_batch_pays_for_the_longest_member() {
        let gs = vec![group(&[(1, 4), (1, 2), (1, 2)])];
        let r = evaluate_plan(&gs, BatchLayout::Padded, 1, 1).unwrap();
        assert!((r.pad_ratio - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.max_seq_len_text, 12);
    }

    #[test]
    fn too_few_batches() {
        let gs = vec![group(&[(1, 4)])];
        assert!(evaluate_plan(&gs, BatchLayout::Packed, 2, 1).is_err());
    }

    #[test]
    fn step_spread_ignores_partial_step() {
        assert_eq!(mean_step_spread(&[10, 5, 7], 2), Some(0.25));
        assert_eq!(mean_step_spread(&[10], 2), None);
    }
}
