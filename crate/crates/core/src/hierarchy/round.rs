use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{context_index, NodeBody, NodeIdx, Tree};
use super::{EtaSchedule, FeedbackMode, InputKey, OutcomeModel};
use crate::error::{Error, Result};
use crate::mechanism::{derive_signal, BinarySignal, PriceVector, UpdateRate, WeightDelta};
use crate::scalar::{to_f64, Real};

const OUTCOME_STREAM: u64 = u64::MAX;

/// Selection stream of one selector: stream `node` of the run's seed.
pub fn selector_stream(seed: u64, node: NodeIdx) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(node.0));
    rng
}

pub fn outcome_stream(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(OUTCOME_STREAM);
    rng
}

/// Random streams of one run. A selector's stream advances only on rounds
/// where that selector is active.
#[derive(Debug, Clone)]
pub struct RunStreams {
    seed: u64,
    selectors: Vec<Option<ChaCha8Rng>>,
    outcome: ChaCha8Rng,
}

impl RunStreams {
    pub fn new(seed: u64, node_count: usize) -> Self {
        Self { seed, selectors: vec![None; node_count], outcome: outcome_stream(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn selector(&mut self, node: NodeIdx) -> &mut ChaCha8Rng {
        let seed = self.seed;
        self.selectors[node.index()].get_or_insert_with(|| selector_stream(seed, node))
    }

    #[inline]
    pub fn outcome(&mut self) -> &mut ChaCha8Rng {
        &mut self.outcome
    }
}

/// Picks a child for the uniform draw `u` in `[0, 1)` under the mixed
/// distribution `(1 - epsilon) w_i + epsilon / N`.
#[inline]
pub fn sample_child<T: Real>(weights: &[T], u: f64, epsilon: f64) -> usize {
    let n = weights.len();
    let (keep, floor) = if epsilon > 0.0 { (1.0 - epsilon, epsilon / n as f64) } else { (1.0, 0.0) };
    let mut cum = 0.0;
    let mut last_live = 0;
    for (i, w) in weights.iter().enumerate() {
        let p = keep * to_f64(w) + floor;
        if p > 0.0 {
            last_live = i;
        }
        cum += p;
        if u < cum {
            return i;
        }
    }
    last_live
}

pub fn observe_outcome<R: Rng + ?Sized>(quality: f64, rng: &mut R, model: &OutcomeModel) -> BinarySignal {
    let u: f64 = rng.random();
    match *model {
        OutcomeModel::Bernoulli => BinarySignal::from_bit(u < quality),
        OutcomeModel::Threshold { theta, noise_halfwidth } => {
            let noisy = quality + (2.0 * u - 1.0) * noise_halfwidth;
            BinarySignal::from_bit(noisy > theta)
        }
    }
}

/// One selector on the active path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathStep {
    pub node: NodeIdx,
    pub context: usize,
    pub child_index: usize,
    pub child: NodeIdx,
    /// Change of the selected child's weight applied by this selector.
    pub delta: f64,
    /// `1[delta > 0]`: the signal the selected child reads.
    pub signal: BinarySignal,
}

/// Trace of one round, root first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub input: InputKey,
    pub mode: FeedbackMode,
    pub leaf: NodeIdx,
    pub outcome: BinarySignal,
    pub steps: Vec<PathStep>,
}

impl RoundRecord {
    pub fn empty(mode: FeedbackMode) -> Self {
        Self {
            round: 0,
            input: InputKey(0),
            mode,
            leaf: NodeIdx(0),
            outcome: BinarySignal::Negative,
            steps: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RoundParams<'a, T> {
    pub eta: &'a EtaSchedule<T>,
    pub epsilon: f64,
    pub outcome: OutcomeModel,
    pub mode: FeedbackMode,
}

impl<T: Real> Tree<T> {
    /// Samples the active path for `input`; `path` receives one step per
    /// selector (deltas zeroed) and the reached leaf is returned.
    pub fn route(
        &self,
        input: InputKey,
        streams: &mut RunStreams,
        epsilon: f64,
        path: &mut Vec<PathStep>,
    ) -> NodeIdx {
        path.clear();
        let mut node = self.root();
        loop {
            match &self.node(node).body {
                NodeBody::Leaf { .. } => return node,
                NodeBody::Selector { children, contexts } => {
                    let context = context_index(node, input, contexts.len());
                    let u: f64 = streams.selector(node).random();
                    let child_index = sample_child(contexts[context].weights(), u, epsilon);
                    let child = children[child_index];
                    path.push(PathStep {
                        node,
                        context,
                        child_index,
                        child,
                        delta: 0.0,
                        signal: BinarySignal::Negative,
                    });
                    node = child;
                }
            }
        }
    }

    /// Runs one round into `record`, reusing its allocation.
    pub fn run_round_into(
        &mut self,
        round: u64,
        input: InputKey,
        streams: &mut RunStreams,
        params: &RoundParams<'_, T>,
        record: &mut RoundRecord,
    ) {
        let leaf = self.route(input, streams, params.epsilon, &mut record.steps);
        let quality = self.quality(leaf).expect("routing ends at a leaf");
        let outcome = observe_outcome(quality, streams.outcome(), &params.outcome);

        let mut signal = outcome;
        for step in record.steps.iter_mut() {
            let eta = params.eta.rate_at(self.node(step.node).depth);
            let NodeBody::Selector { contexts, .. } = self.body_mut(step.node) else {
                unreachable!("path steps are selectors")
            };
            let delta = contexts[step.context]
                .update(step.child_index, signal, eta)
                .expect("routed child index is in range");
            step.delta = to_f64(delta.value());
            step.signal = derive_signal(&delta);
            signal = match params.mode {
                FeedbackMode::Delta => step.signal,
                FeedbackMode::Explicit => outcome,
            };
        }

        record.round = round;
        record.input = input;
        record.mode = params.mode;
        record.leaf = leaf;
        record.outcome = outcome;
    }

    pub fn run_round(
        &mut self,
        round: u64,
        input: InputKey,
        streams: &mut RunStreams,
        params: &RoundParams<'_, T>,
    ) -> RoundRecord {
        let mut record = RoundRecord::empty(params.mode);
        self.run_round_into(round, input, streams, params, &mut record);
        record
    }

    /// Delta-mode round: non-root selectors act on `1[delta > 0]`.
    pub fn run_round_delta(
        &mut self,
        round: u64,
        input: InputKey,
        streams: &mut RunStreams,
        eta: &EtaSchedule<T>,
        epsilon: f64,
        outcome: OutcomeModel,
    ) -> RoundRecord {
        let params = RoundParams { eta, epsilon, outcome, mode: FeedbackMode::Delta };
        self.run_round(round, input, streams, &params)
    }

    /// Explicit-mode round: every active selector acts on the root outcome.
    pub fn run_round_explicit(
        &mut self,
        round: u64,
        input: InputKey,
        streams: &mut RunStreams,
        eta: &EtaSchedule<T>,
        epsilon: f64,
        outcome: OutcomeModel,
    ) -> RoundRecord {
        let params = RoundParams { eta, epsilon, outcome, mode: FeedbackMode::Explicit };
        self.run_round(round, input, streams, &params)
    }
}

/// A lone selector driven by an external signal sequence.
#[derive(Debug, Clone)]
pub struct SingleSelector<T> {
    weights: PriceVector<T>,
    rng: ChaCha8Rng,
}

impl<T: Real> SingleSelector<T> {
    pub fn new(weights: PriceVector<T>, rng: ChaCha8Rng) -> Self {
        Self { weights, rng }
    }

    pub fn select(&mut self, epsilon: f64) -> usize {
        let u: f64 = self.rng.random();
        sample_child(self.weights.weights(), u, epsilon)
    }

    pub fn update(&mut self, selected: usize, signal: BinarySignal, eta: &UpdateRate<T>) -> Result<WeightDelta<T>> {
        self.weights.update(selected, signal, eta)
    }

    pub fn weights(&self) -> &PriceVector<T> {
        &self.weights
    }
}

/// Appends `record` as one JSON line.
pub fn write_trace_record(out: &mut impl Write, record: &RoundRecord) -> Result<()> {
    serde_json::to_writer(&mut *out, record)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Streams records from a JSON-lines trace. Blank lines are skipped.
pub fn read_trace(input: impl BufRead) -> impl Iterator<Item = Result<RoundRecord>> {
    input.lines().enumerate().filter_map(|(i, line)| match line {
        Err(e) => Some(Err(Error::Io(e))),
        Ok(l) if l.trim().is_empty() => None,
        Ok(l) => Some(serde_json::from_str(&l).map_err(|e| Error::Trace {
            line: i + 1,
            message: e.to_string(),
        })),
    })
}
