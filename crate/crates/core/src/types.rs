//! Domain types shared by the batcher, the planner and the file formats.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One training example, reduced to the two counts the balancer needs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    /// Image tiles after dynamic-resolution tiling.
    pub vision_units: u32,
    /// Full text length in tokens, image placeholders included.
    pub text_tokens: u32,
}

impl Sample {
    pub fn new(id: impl Into<String>, vision_units: u32, text_tokens: u32) -> Result<Self> {
        let id = id.into();
        if text_tokens == 0 {
            return Err(Error::invalid(format!(
                "sample `{id}` has zero text tokens"
            )));
        }
        Ok(Self {
            id,
            vision_units,
            text_tokens,
        })
    }
}

/// An ordered collection of samples with pairwise distinct ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if s.text_tokens == 0 {
                return Err(Error::invalid(format!(
                    "sample `{}` has zero text tokens",
                    s.id
                )));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::DuplicateId {
                    id: s.id.clone(),
                    line: None,
                });
            }
        }
        Ok(Self { samples })
    }

    /// Caller guarantees the invariants (used when re-slicing a valid dataset).
    pub(crate) fn from_valid(samples: Vec<Sample>) -> Self {
        Self { samples }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn total_text(&self) -> u64 {
        self.samples.iter().map(|s| u64::from(s.text_tokens)).sum()
    }

    pub fn total_vision(&self) -> u64 {
        self.samples.iter().map(|s| u64::from(s.vision_units)).sum()
    }
}

/// A non-empty set of samples that travels as one micro-batch.
///
/// Totals are computed on construction and always equal the member sums.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GroupRepr", into = "GroupRepr")]
pub struct Group {
    members: Vec<Sample>,
    total_vision: u64,
    total_text: u64,
    below_threshold: bool,
}

impl Group {
    pub fn new(members: Vec<Sample>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::invalid("a group needs at least one member"));
        }
        let total_vision = members.iter().map(|s| u64::from(s.vision_units)).sum();
        let total_text = members.iter().map(|s| u64::from(s.text_tokens)).sum();
        Ok(Self {
            members,
            total_vision,
            total_text,
            below_threshold: false,
        })
    }

    /// Marks a best-effort group that did not meet the acceptance thresholds.
    pub fn flagged_below_threshold(mut self) -> Self {
        self.below_threshold = true;
        self
    }

    pub fn members(&self) -> &[Sample] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn total_vision(&self) -> u64 {
        self.total_vision
    }

    pub fn total_text(&self) -> u64 {
        self.total_text
    }

    pub fn below_threshold(&self) -> bool {
        self.below_threshold
    }

    pub fn max_text(&self) -> u64 {
        self.members
            .iter()
            .map(|s| u64::from(s.text_tokens))
            .max()
            .unwrap_or(0)
    }

    pub fn max_vision(&self) -> u64 {
        self.members
            .iter()
            .map(|s| u64::from(s.vision_units))
            .max()
            .unwrap_or(0)
    }
}

#[derive(Serialize, Deserialize)]
struct GroupRepr {
    members: Vec<Sample>,
    #[serde(default)]
    below_threshold: bool,
}

impl TryFrom<GroupRepr> for Group {
    type Error = Error;

    fn try_from(r: GroupRepr) -> Result<Self> {
        let g = Group::new(r.members)?;
        Ok(if r.below_threshold {
            g.flagged_below_threshold()
        } else {
            g
        })
    }
}

impl From<Group> for GroupRepr {
    fn from(g: Group) -> Self {
        GroupRepr {
            members: g.members,
            below_threshold: g.below_threshold,
        }
    }
}

/// Thresholds and iteration budget for iterative sampling and filtering.
///
/// `q_vision == 0` selects text-only mode: the vision cap and the vision
/// acceptance condition are both ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalanceParams {
    /// Upper bound on a group's vision units.
    pub q_vision: u32,
    /// Upper bound on a group's text tokens.
    pub q_text: u32,
    /// A group reaching this many vision units is accepted.
    pub q_vision_min: u32,
    /// A group reaching this many text tokens is accepted.
    pub q_text_min: u32,
    pub max_iters: u32,
    pub seed: u64,
}

/// Gap between the text cap and the text acceptance threshold.
pub const TEXT_THRESHOLD_MARGIN: u32 = 128;
pub const DEFAULT_MAX_ITERS: u32 = 10;

impl Default for BalanceParams {
    fn default() -> Self {
        Self::new(9, 4096)
    }
}

impl BalanceParams {
    /// Caps with the usual derived minimums: `q_vision_min = q_vision` and
    /// `q_text_min = q_text - 128` (saturating at 1).
    pub fn new(q_vision: u32, q_text: u32) -> Self {
        Self {
            q_vision,
            q_text,
            q_vision_min: q_vision,
            q_text_min: q_text.saturating_sub(TEXT_THRESHOLD_MARGIN).max(1),
            max_iters: DEFAULT_MAX_ITERS,
            seed: 0,
        }
    }

    pub fn text_only(q_text: u32) -> Self {
        Self {
            q_vision: 0,
            q_vision_min: 0,
            ..Self::new(0, q_text)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_iters(mut self, max_iters: u32) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn is_text_only(&self) -> bool {
        self.q_vision == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.q_text == 0 || self.q_text_min == 0 {
            return Err(Error::invalid("q_text and q_text_min must be positive"));
        }
        if self.q_text_min > self.q_text {
            return Err(Error::invalid(format!(
                "q_text_min {} exceeds q_text {}",
                self.q_text_min, self.q_text
            )));
        }
        if !self.is_text_only() && (self.q_vision_min == 0 || self.q_vision_min > self.q_vision) {
            return Err(Error::invalid(format!(
                "q_vision_min must lie in [1, q_vision={}], got {}",
                self.q_vision, self.q_vision_min
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        Ok(())
    }

    /// True when totals exceed either cap.
    pub fn overflows(&self, vision: u64, text: u64) -> bool {
        text > u64::from(self.q_text) || (!self.is_text_only() && vision > u64::from(self.q_vision))
    }

    /// The filtering predicate: reject iff both totals are under their minimums.
    pub fn accepts(&self, vision: u64, text: u64) -> bool {
        let vision_ok = !self.is_text_only() && vision >= u64::from(self.q_vision_min);
        vision_ok || text >= u64::from(self.q_text_min)
    }
}

/// Token load per data-parallel rank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceLoads(Vec<u64>);

impl DeviceLoads {
    pub fn new(per_device_tokens: Vec<u64>) -> Result<Self> {
        if per_device_tokens.is_empty() {
            return Err(Error::invalid("device loads need at least one rank"));
        }
        Ok(Self(per_device_tokens))
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }

    pub fn ranks(&self) -> usize {
        self.0.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_totals_match_members() {
        let g = Group::new(vec![
            Sample::new("a", 2, 100).unwrap(),
            Sample::new("b", 0, 30).unwrap(),
        ])
        .unwrap();
        assert_eq!(g.total_vision(), 2);
        assert_eq!(g.total_text(), 130);
        assert!(Group::new(vec![]).is_err());
    }

    #[test]
    fn dataset_rejects_duplicate_ids() {
        let s = Sample::new("x", 1, 1).unwrap();
        let err = Dataset::new(vec![s.clone(), s]).unwrap_err();
        assert!(matches!(err, Error::DuplicateId { .. }));
    }

    #[test]
    fn sample_needs_text() {
        assert!(Sample::new("x", 3, 0).is_err());
    }

    #[test]
    fn acceptance_predicate_is_an_or() {
        let p = BalanceParams {
            q_vision_min: 9,
            q_text_min: 3968,
            ..BalanceParams::default()
        };
        assert!(p.accepts(9, 2000));
        assert!(!p.accepts(3, 3000));
        assert!(p.accepts(8, 3968));
    }

    #[test]
    fn default_params_follow_margin() {
        let p = BalanceParams::default();
        assert_eq!(
            (p.q_vision, p.q_text, p.q_vision_min, p.q_text_min),
            (9, 4096, 9, 3968)
        );
        assert_eq!(p.max_iters, 10);
        p.validate().unwrap();
    }

    #[test]
    fn text_only_ignores_vision() {
        let p = BalanceParams::text_only(4096);
        assert!(!p.overflows(1_000, 10));
        assert!(!p.accepts(1_000, 10));
        p.validate().unwrap();
    }

    #[test]
    fn group_serde_recomputes_totals() {
        let json = r#"{"members":[{"id":"a","vision_units":1,"text_tokens":5}]}"#;
        let g: Group = serde_json::from_str(json).unwrap();
        assert_eq!(g.total_text(), 5);
        assert!(serde_json::from_str::<Group>(r#"{"members":[]}"#).is_err());
    }
}
