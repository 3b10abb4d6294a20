//! Selector trees: routing by selection probability, the root outcome, and
//! the two feedback regimes.
//!
//! In delta mode each non-root selector on the active path learns from the
//! sign of the change its parent just applied to its weight. In explicit
//! mode every active selector is handed the root outcome. Updates proceed
//! root-down along the active path, so a child always reads a delta its
//! parent has already applied.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mechanism::UpdateRate;
use crate::scalar::Scalar;

mod round;
pub mod spec;
mod tree;

pub use round::{
    observe_outcome, outcome_stream, read_trace, sample_child, selector_stream, write_trace_record,
    PathStep, RoundParams, RoundRecord, RunStreams, SingleSelector,
};
pub use spec::{NodeKind, NodeSpec, TreeSpec};
pub use tree::{build_tree, context_index, Node, NodeBody, NodeIdx, Tree};
pub(crate) use tree::mix64;

/// Identifies the input of one round; selectors hash it into their contexts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InputKey(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackMode {
    Delta,
    Explicit,
}

/// How the root turns the selected leaf's quality into an outcome bit.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OutcomeModel {
    /// `P(o = 1) = q`.
    #[default]
    Bernoulli,
    /// `o = 1[q + U(-h, h) > theta]`.
    Threshold { theta: f64, noise_halfwidth: f64 },
}

/// Adjustment rate per selector depth (root = 0), with a default.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaSchedule<T> {
    default: UpdateRate<T>,
    by_depth: BTreeMap<usize, UpdateRate<T>>,
}

impl<T: Scalar> EtaSchedule<T> {
    pub fn constant(eta: UpdateRate<T>) -> Self {
        Self { default: eta, by_depth: BTreeMap::new() }
    }

    pub fn from_f64(default: f64, by_depth: &BTreeMap<usize, f64>) -> Result<Self> {
        let mut schedule = Self::constant(UpdateRate::from_f64(default)?);
        for (&depth, &eta) in by_depth {
            schedule.by_depth.insert(depth, UpdateRate::from_f64(eta)?);
        }
        Ok(schedule)
    }

    pub fn with_depth(mut self, depth: usize, eta: UpdateRate<T>) -> Self {
        self.by_depth.insert(depth, eta);
        self
    }

    #[inline]
    pub fn rate_at(&self, depth: usize) -> &UpdateRate<T> {
        self.by_depth.get(&depth).unwrap_or(&self.default)
    }
}
