//! Post-hoc measurements over weight snapshots and round records.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{FeedbackMode, NodeBody, NodeIdx, RoundRecord, Tree};
use crate::mechanism::BinarySignal;

/// A selector's weights at the start of `round`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSnapshot {
    pub round: u64,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SettlingCriterion {
    pub epsilon: f64,
    pub window: u64,
}

impl Default for SettlingCriterion {
    fn default() -> Self {
        Self { epsilon: 0.05, window: 500 }
    }
}

impl SettlingCriterion {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) || self.window == 0 {
            return Err(Error::Config(format!("settling needs 0 < epsilon < 1 and window >= 1, got {self:?}")));
        }
        Ok(())
    }
}

/// Streaming settling test.
///
/// A window starting at snapshot round `t` covers the snapshots with round in
/// `[t, t + window)` and is decidable once a snapshot at or beyond
/// `t + window - 1` has arrived. It passes when every covered snapshot has the
/// best child as its argmax and the max weight at the last covered snapshot
/// differs from that at `t` by less than `epsilon`. The answer is the first
/// passing `t`.
#[derive(Debug, Clone)]
pub struct SettlingDetector {
    best: Option<usize>,
    criterion: SettlingCriterion,
    // run of consecutive good snapshots: (round, max weight)
    run: VecDeque<(u64, f64)>,
    settled: Option<u64>,
}

impl SettlingDetector {
    /// `best` is the child that must hold the argmax; `None` never settles.
    pub fn new(best: Option<usize>, criterion: SettlingCriterion) -> Self {
        Self { best, criterion, run: VecDeque::new(), settled: None }
    }

    pub fn settled(&self) -> Option<u64> {
        self.settled
    }

    pub fn push(&mut self, round: u64, weights: &[f64]) -> Option<u64> {
        if self.settled.is_some() {
            return self.settled;
        }
        let (arg, max) = argmax(weights);
        let good = self.best == Some(arg);
        let window = self.criterion.window;
        if good {
            self.run.push_back((round, max));
        }
        // windows starting at the front of the run that this snapshot decides
        while let Some(&(start, start_max)) = self.run.front() {
            if round < start + window - 1 {
                break;
            }
            let end = start + window; // exclusive
            let inside_is_last = round < end;
            let last = if inside_is_last {
                if !good {
                    // the window contains this bad snapshot
                    self.run.clear();
                    break;
                }
                self.run.back().map(|&(_, m)| m)
            } else {
                let n = self.run.len() - usize::from(good);
                self.run.range(..n).rev().find(|&&(r, _)| r < end).map(|&(_, m)| m)
            };
            let last = last.expect("the window's first snapshot is inside it");
            if (last - start_max).abs() < self.criterion.epsilon {
                self.settled = Some(start);
                self.run.clear();
                return self.settled;
            }
            self.run.pop_front();
        }
        if !good {
            self.run.clear();
        }
        None
    }
}

/// First round at which the trace is settled (see [`SettlingDetector`]).
/// `best` is the best-quality child, `None` when qualities tie.
pub fn measure_settling(
    trace: &[WeightSnapshot],
    best: Option<usize>,
    criterion: SettlingCriterion,
) -> Option<u64> {
    let mut detector = SettlingDetector::new(best, criterion);
    trace.iter().find_map(|s| detector.push(s.round, &s.weights))
}

pub(crate) fn argmax(weights: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &w) in weights.iter().enumerate() {
        if w > best.1 {
            best = (i, w);
        }
    }
    best
}

/// Mismatch tally of a fidelity audit, with a per-depth breakdown indexed by
/// the depth of the observing child (1 = children of the root).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub mismatches: u64,
    pub observations: u64,
    pub rounds: u64,
    pub by_depth: Vec<DepthTally>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepthTally {
    pub mismatches: u64,
    pub observations: u64,
}

impl AuditReport {
    /// Folds one round in. A path step counts as a mismatch when the signal
    /// its child read differs from the root outcome or from `1[delta > 0]`.
    pub fn observe(&mut self, record: &RoundRecord) -> Result<()> {
        if record.mode != FeedbackMode::Delta {
            return Err(Error::Mode(record.round));
        }
        if self.by_depth.len() < record.steps.len() {
            self.by_depth.resize(record.steps.len(), DepthTally::default());
        }
        for (level, step) in record.steps.iter().enumerate() {
            let read = BinarySignal::from_bit(step.delta > 0.0);
            let bad = u64::from(step.signal != record.outcome || step.signal != read);
            self.mismatches += bad;
            self.by_depth[level].mismatches += bad;
            self.by_depth[level].observations += 1;
        }
        self.observations += record.steps.len() as u64;
        self.rounds += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &AuditReport) {
        self.mismatches += other.mismatches;
        self.observations += other.observations;
        self.rounds += other.rounds;
        if self.by_depth.len() < other.by_depth.len() {
            self.by_depth.resize(other.by_depth.len(), DepthTally::default());
        }
        for (a, b) in self.by_depth.iter_mut().zip(&other.by_depth) {
            a.mismatches += b.mismatches;
            a.observations += b.observations;
        }
    }
}

pub fn fidelity_audit<'a>(records: impl IntoIterator<Item = &'a RoundRecord>) -> Result<AuditReport> {
    let mut report = AuditReport::default();
    for record in records {
        report.observe(record)?;
    }
    Ok(report)
}

/// Time-mean of `max_i w_i` over the trailing half of the snapshots.
pub fn equipoise_stat(tree: &Tree, node: NodeIdx, trace: &[WeightSnapshot]) -> Result<f64> {
    if node.index() >= tree.len() {
        return Err(Error::UnknownNode(format!("#{}", node.0)));
    }
    if let NodeBody::Leaf { .. } = tree.node(node).body {
        return Err(Error::NotASelector(tree.id(node).to_owned()));
    }
    let tail = &trace[trace.len() / 2..];
    if tail.is_empty() {
        return Err(Error::NoSamples);
    }
    Ok(tail.iter().map(|s| argmax(&s.weights).1).sum::<f64>() / tail.len() as f64)
}
