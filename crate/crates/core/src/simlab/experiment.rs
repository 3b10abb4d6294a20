use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::analysis::{argmax, AuditReport, SettlingCriterion, SettlingDetector};
use super::generate::{gen_flat_tree, gen_heterogeneous_tree, gen_uniform_tree, QualitySampler};
use super::schedule::ScheduleSpec;
use crate::error::{Error, Result};
use crate::hierarchy::{
    mix64, EtaSchedule, FeedbackMode, NodeBody, NodeIdx, OutcomeModel, RoundParams, RoundRecord, RunStreams, Tree,
    TreeSpec,
};

const TREE_STREAM: u64 = u64::MAX - 2;
const EXPLICIT_SALT: u64 = 0x5EED_E4B1_1C17_0001;
/// Snapshots per run are bounded by this many.
pub const SNAPSHOT_BUDGET: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TreeSource {
    Uniform {
        branching: usize,
        depth: usize,
        #[serde(default)]
        sampler: QualitySampler,
        #[serde(default = "one")]
        contexts: usize,
    },
    Heterogeneous {
        arity_min: usize,
        arity_max: usize,
        depth: usize,
        leaves: usize,
        #[serde(default)]
        sampler: QualitySampler,
        #[serde(default = "one")]
        contexts: usize,
    },
    /// A single selector over leaves of the given qualities.
    Flat {
        qualities: Vec<f64>,
        #[serde(default = "one")]
        contexts: usize,
    },
    File {
        path: PathBuf,
        /// Overrides every selector's `context_count` when set.
        #[serde(default)]
        contexts: Option<usize>,
    },
}

fn one() -> usize {
    1
}

impl TreeSource {
    /// Structure for the run seeded with `seed`. Generated sources draw from
    /// their own stream of that seed, so every mode of a seed sees one tree.
    pub fn realize(&self, seed: u64) -> Result<TreeSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(TREE_STREAM);
        let (spec, contexts) = match self {
            Self::Uniform { branching, depth, sampler, contexts } => {
                (gen_uniform_tree(*branching, *depth, sampler, &mut rng)?, Some(*contexts))
            }
            Self::Heterogeneous { arity_min, arity_max, depth, leaves, sampler, contexts } => (
                gen_heterogeneous_tree((*arity_min, *arity_max), *depth, *leaves, sampler, &mut rng)?,
                Some(*contexts),
            ),
            Self::Flat { qualities, contexts } => (gen_flat_tree(qualities)?, Some(*contexts)),
            Self::File { path, contexts } => (TreeSpec::load(path)?, *contexts),
        };
        match contexts {
            Some(0) => Err(Error::Config("contexts must be at least 1".into())),
            Some(1) | None => Ok(spec),
            Some(c) => Ok(spec.with_selector_contexts(c)),
        }
    }

    /// Resolves a relative file path against `base`.
    pub fn rebase(&mut self, base: &Path) {
        if let Self::File { path, .. } = self {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSelection {
    #[default]
    Delta,
    Explicit,
    Both,
}

impl ModeSelection {
    pub fn runs(self, mode: FeedbackMode) -> bool {
        matches!(
            (self, mode),
            (Self::Both, _) | (Self::Delta, FeedbackMode::Delta) | (Self::Explicit, FeedbackMode::Explicit)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    Ratio,
    Fidelity,
    Settling,
    ActiveCounts,
    MaxWeight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtaConfig {
    #[serde(default = "default_eta")]
    pub default: f64,
    /// Per-depth overrides, keyed by selector depth (root = 0).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub by_depth: BTreeMap<usize, f64>,
}

fn default_eta() -> f64 {
    0.1
}

impl Default for EtaConfig {
    fn default() -> Self {
        Self { default: default_eta(), by_depth: BTreeMap::new() }
    }
}

impl EtaConfig {
    pub fn constant(eta: f64) -> Self {
        Self { default: eta, by_depth: BTreeMap::new() }
    }

    pub fn schedule(&self) -> Result<EtaSchedule<f64>> {
        EtaSchedule::from_f64(self.default, &self.by_depth)
    }
}

/// Declarative experiment. The JSON form mirrors the fields one to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub tree: TreeSource,
    #[serde(default)]
    pub mode: ModeSelection,
    /// Explicit mode reuses the delta-mode seed instead of a derived one.
    #[serde(default)]
    pub coupled: bool,
    pub rounds: u64,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub eta: EtaConfig,
    /// Exploration mixing in routing.
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub outcome: OutcomeModel,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    /// `None` selects every metric the configured modes support.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Vec<Metric>>,
    #[serde(default)]
    pub settling: SettlingCriterion,
    /// Keep downsampled context-0 weight trajectories of selectors at depth
    /// `<= trace_depth`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(tree: TreeSource, rounds: u64, seeds: Vec<u64>) -> Self {
        Self {
            tree,
            mode: ModeSelection::Delta,
            coupled: false,
            rounds,
            seeds,
            eta: EtaConfig::default(),
            epsilon: 0.0,
            outcome: OutcomeModel::Bernoulli,
            schedule: ScheduleSpec::default(),
            metrics: None,
            settling: SettlingCriterion::default(),
            trace_depth: None,
            output: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        self.eta.schedule()?;
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!("epsilon {} outside [0, 1)", self.epsilon)));
        }
        if let OutcomeModel::Threshold { theta, noise_halfwidth } = self.outcome {
            if !theta.is_finite() || noise_halfwidth < 0.0 || !noise_halfwidth.is_finite() {
                return Err(Error::Config("threshold model needs finite theta and halfwidth >= 0".into()));
            }
        }
        self.schedule.validate()?;
        self.settling.validate()?;
        match &self.tree {
            TreeSource::Uniform { sampler, .. } | TreeSource::Heterogeneous { sampler, .. } => sampler.validate()?,
            TreeSource::Flat { qualities, .. } if qualities.iter().any(|q| !(0.0..=1.0).contains(q)) => {
                return Err(Error::Config("flat qualities must lie in [0, 1]".into()))
            }
            _ => {}
        }
        for metric in self.metrics.iter().flatten() {
            let ok = match metric {
                Metric::Ratio => self.mode == ModeSelection::Both,
                Metric::Fidelity => self.mode.runs(FeedbackMode::Delta),
                _ => true,
            };
            if !ok {
                return Err(Error::Config(format!("metric {metric:?} needs a mode that is not run ({:?})", self.mode)));
            }
        }
        Ok(())
    }

    pub fn wants(&self, metric: Metric) -> bool {
        match &self.metrics {
            Some(list) => list.contains(&metric),
            None => match metric {
                Metric::Ratio => self.mode == ModeSelection::Both,
                Metric::Fidelity => self.mode.runs(FeedbackMode::Delta),
                _ => true,
            },
        }
    }

    /// Seed driving the selection, outcome and input streams of `mode`.
    pub fn mode_seed(&self, seed: u64, mode: FeedbackMode) -> u64 {
        match mode {
            FeedbackMode::Explicit if !self.coupled => mix64(seed ^ EXPLICIT_SALT),
            _ => seed,
        }
    }

    pub fn snapshot_stride(&self) -> u64 {
        (self.rounds / SNAPSHOT_BUDGET).max(1)
    }
}

/// Downsampled context-0 weights of one selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub node: String,
    pub weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSettling {
    pub node: String,
    /// `None` when the selector never settled.
    pub round: Option<u64>,
}

/// Measurements of one mode in one seeded run. Weight-based metrics read
/// context 0 of each selector at snapshot rounds (every `stride` rounds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeMetrics {
    pub mode: FeedbackMode,
    /// Fraction of the final 20% of rounds routed to a best-quality leaf.
    pub accuracy: Option<f64>,
    pub audit: Option<AuditReport>,
    pub settling: Option<Vec<NodeSettling>>,
    /// Active rounds per node, in node order.
    pub active_counts: Option<Vec<u64>>,
    /// Trailing-half time-mean of each selector's max weight, in selector order.
    pub mean_max_weight: Option<Vec<f64>>,
    /// Trailing-half time-mean of the root's weights.
    pub root_mean_weights: Vec<f64>,
    pub stride: u64,
    pub trajectories: Vec<Trajectory>,
}

impl ModeMetrics {
    pub fn root_settling(&self) -> Option<u64> {
        self.settling.as_ref().and_then(|s| s.first()).and_then(|s| s.round)
    }

    pub fn root_mean_max_weight(&self) -> Option<f64> {
        self.mean_max_weight.as_ref().and_then(|m| m.first().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub leaves: usize,
    pub depth: usize,
    pub delta: Option<ModeMetrics>,
    pub explicit: Option<ModeMetrics>,
}

impl SeedResult {
    /// Delta accuracy over explicit accuracy; `None` unless both ran and the
    /// explicit accuracy is positive.
    pub fn ratio(&self) -> Option<f64> {
        let d = self.delta.as_ref()?.accuracy?;
        let e = self.explicit.as_ref()?.accuracy?;
        (e > 0.0).then(|| d / e)
    }

    pub fn mode(&self, mode: FeedbackMode) -> Option<&ModeMetrics> {
        match mode {
            FeedbackMode::Delta => self.delta.as_ref(),
            FeedbackMode::Explicit => self.explicit.as_ref(),
        }
    }
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Stat> {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, sd, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub delta_accuracy: Option<Stat>,
    pub explicit_accuracy: Option<Stat>,
    /// Mean delta accuracy over mean explicit accuracy.
    pub ratio: Option<f64>,
    /// Spread of the per-seed ratios.
    pub seed_ratio: Option<Stat>,
    pub mismatches: u64,
    pub observations: u64,
    pub delta_root_settling: Option<Stat>,
    pub delta_not_settled: usize,
    pub root_mean_max_weight: Option<Stat>,
}

impl Aggregate {
    pub fn fold(runs: &[SeedResult]) -> Self {
        let acc = |mode| Stat::of(runs.iter().filter_map(|r| r.mode(mode)?.accuracy));
        let delta_accuracy = acc(FeedbackMode::Delta);
        let explicit_accuracy = acc(FeedbackMode::Explicit);
        let ratio = match (delta_accuracy, explicit_accuracy) {
            (Some(d), Some(e)) if e.mean > 0.0 => Some(d.mean / e.mean),
            _ => None,
        };
        let audits = runs.iter().filter_map(|r| r.delta.as_ref()?.audit.as_ref());
        let (mismatches, observations) = audits.fold((0, 0), |(m, o), a| (m + a.mismatches, o + a.observations));
        let settling: Vec<Option<u64>> =
            runs.iter().filter_map(|r| r.delta.as_ref()?.settling.as_ref().map(|_| r.delta.as_ref()?.root_settling())).collect();
        let first_mode = |r: &SeedResult| r.delta.as_ref().or(r.explicit.as_ref()).and_then(ModeMetrics::root_mean_max_weight);
        Aggregate {
            delta_accuracy,
            explicit_accuracy,
            ratio,
            seed_ratio: Stat::of(runs.iter().filter_map(SeedResult::ratio)),
            mismatches,
            observations,
            delta_root_settling: Stat::of(settling.iter().flatten().map(|&r| r as f64)),
            delta_not_settled: settling.iter().filter(|s| s.is_none()).count(),
            root_mean_max_weight: Stat::of(runs.iter().filter_map(first_mode)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub runs: Vec<SeedResult>,
    pub aggregate: Aggregate,
}

/// Runs every seed (in parallel, results in seed-list order).
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let runs = config.seeds.par_iter().map(|&seed| run_seed(config, seed)).collect::<Result<Vec<_>>>()?;
    let aggregate = Aggregate::fold(&runs);
    Ok(ExperimentResult { config: config.clone(), runs, aggregate })
}

pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedResult> {
    let spec = config.tree.realize(seed)?;
    let tree: Tree = Tree::from_spec(&spec)?;
    let run = |mode| -> Result<Option<ModeMetrics>> {
        if config.mode.runs(mode) {
            run_mode(config, tree.clone(), seed, mode, |_| {}).map(Some)
        } else {
            Ok(None)
        }
    };
    Ok(SeedResult {
        seed,
        leaves: tree.leaf_count(),
        depth: tree.depth(),
        delta: run(FeedbackMode::Delta)?,
        explicit: run(FeedbackMode::Explicit)?,
    })
}

/// Drives one mode of one seed on `tree`, handing every round record to
/// `observer` after it is applied.
pub fn run_mode(
    config: &ExperimentConfig,
    mut tree: Tree,
    seed: u64,
    mode: FeedbackMode,
    mut observer: impl FnMut(&RoundRecord),
) -> Result<ModeMetrics> {
    let mode_seed = config.mode_seed(seed, mode);
    let eta = config.eta.schedule()?;
    let params = RoundParams { eta: &eta, epsilon: config.epsilon, outcome: config.outcome, mode };
    let inputs = config.schedule.stream(mode_seed, config.rounds)?;
    let mut streams = RunStreams::new(mode_seed, tree.len());

    let rounds = config.rounds;
    let stride = config.snapshot_stride();
    let tail_start = rounds - rounds / 5;
    let half = rounds / 2;
    let top = tree.leaves().filter_map(|l| tree.quality(l)).fold(f64::NEG_INFINITY, f64::max);
    let is_best: Vec<bool> =
        (0..tree.len()).map(|i| tree.quality(NodeIdx(i as u32)).is_some_and(|q| q == top)).collect();
    let selectors: Vec<NodeIdx> = tree.selectors().collect();

    let want_fidelity = mode == FeedbackMode::Delta && config.wants(Metric::Fidelity);
    let want_active = config.wants(Metric::ActiveCounts);
    let want_max = config.wants(Metric::MaxWeight);
    let mut audit = want_fidelity.then(AuditReport::default);
    let mut active = want_active.then(|| vec![0u64; tree.len()]);
    let mut detectors: Option<Vec<SettlingDetector>> = config.wants(Metric::Settling).then(|| {
        selectors.iter().map(|&s| SettlingDetector::new(tree.best_child(s), config.settling)).collect()
    });
    let mut max_sums = vec![0.0; if want_max { selectors.len() } else { 0 }];
    let root_arity = tree.children(tree.root()).len();
    let mut root_sums = vec![0.0; root_arity];
    let mut tail_snapshots = 0u64;
    let traced: Vec<NodeIdx> = match config.trace_depth {
        Some(d) => selectors.iter().copied().filter(|&s| tree.node(s).depth <= d).collect(),
        None => Vec::new(),
    };
    let mut trajectories: Vec<Vec<Vec<f64>>> = vec![Vec::new(); traced.len()];

    let mut record = RoundRecord::empty(mode);
    let mut hits = 0u64;
    for (round, input) in inputs.enumerate() {
        let round = round as u64;
        if round.is_multiple_of(stride) {
            let tail = round >= half;
            if tail {
                tail_snapshots += 1;
                for (sum, w) in root_sums.iter_mut().zip(context0(&tree, tree.root())) {
                    *sum += w;
                }
            }
            if let Some(dets) = detectors.as_mut() {
                for (det, &s) in dets.iter_mut().zip(&selectors) {
                    det.push(round, context0(&tree, s));
                }
            }
            if want_max && tail {
                for (sum, &s) in max_sums.iter_mut().zip(&selectors) {
                    *sum += argmax(context0(&tree, s)).1;
                }
            }
            for (traj, &s) in trajectories.iter_mut().zip(&traced) {
                traj.push(context0(&tree, s).to_vec());
            }
        }

        tree.run_round_into(round, input, &mut streams, &params, &mut record);

        if round >= tail_start && is_best[record.leaf.index()] {
            hits += 1;
        }
        if let Some(a) = audit.as_mut() {
            a.observe(&record)?;
        }
        if let Some(counts) = active.as_mut() {
            for step in &record.steps {
                counts[step.node.index()] += 1;
            }
            counts[record.leaf.index()] += 1;
        }
        observer(&record);
    }

    let tail_len = rounds - tail_start;
    let n = tail_snapshots.max(1) as f64;
    Ok(ModeMetrics {
        mode,
        accuracy: config.wants(Metric::Accuracy).then(|| hits as f64 / tail_len.max(1) as f64),
        audit,
        settling: detectors.map(|dets| {
            dets.iter()
                .zip(&selectors)
                .map(|(d, &s)| NodeSettling { node: tree.id(s).to_owned(), round: d.settled() })
                .collect()
        }),
        active_counts: active,
        mean_max_weight: want_max.then(|| max_sums.iter().map(|s| s / n).collect()),
        root_mean_weights: root_sums.iter().map(|s| s / n).collect(),
        stride,
        trajectories: traced
            .iter()
            .zip(trajectories)
            .map(|(&s, weights)| Trajectory { node: tree.id(s).to_owned(), weights })
            .collect(),
    })
}

fn context0(tree: &Tree, node: NodeIdx) -> &[f64] {
    match &tree.node(node).body {
        NodeBody::Selector { contexts, .. } => contexts[0].weights(),
        NodeBody::Leaf { .. } => &[],
    }
}

/// One (branching, depth) cell of a mode comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub branching: usize,
    pub depth: usize,
    pub result: ExperimentResult,
}

impl ComparisonCell {
    /// `None` when the explicit accuracy is zero (ratio undefined).
    pub fn ratio(&self) -> Option<f64> {
        self.result.aggregate.ratio
    }
}

/// Runs both modes on uniform trees over the `(branching, depth)` grid.
/// Samplers and contexts come from `config.tree` when it is uniform.
pub fn compare_modes(config: &ExperimentConfig, grid: &[(usize, usize)]) -> Result<Vec<ComparisonCell>> {
    if grid.is_empty() {
        return Err(Error::Config("empty (branching, depth) grid".into()));
    }
    let (sampler, contexts) = uniform_defaults(&config.tree);
    grid.iter()
        .map(|&(branching, depth)| {
            let mut cell = config.clone();
            cell.tree = TreeSource::Uniform { branching, depth, sampler, contexts };
            cell.mode = ModeSelection::Both;
            if let Some(m) = cell.metrics.as_mut() {
                m.extend([Metric::Accuracy, Metric::Ratio]);
                m.sort();
                m.dedup();
            }
            Ok(ComparisonCell { branching, depth, result: run_experiment(&cell)? })
        })
        .collect()
}

fn uniform_defaults(tree: &TreeSource) -> (QualitySampler, usize) {
    match tree {
        TreeSource::Uniform { sampler, contexts, .. } => (*sampler, *contexts),
        _ => (QualitySampler::default(), 1),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rate: f64,
    pub depth: usize,
    pub result: ExperimentResult,
}

impl SweepRow {
    /// Mean accuracy of the mode that ran (delta preferred).
    pub fn accuracy(&self) -> Option<f64> {
        let a = &self.result.aggregate;
        a.delta_accuracy.or(a.explicit_accuracy).map(|s| s.mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Rate with the highest mean accuracy at `depth` (smallest on ties).
    pub fn best_rate(&self, depth: usize) -> Option<f64> {
        let mut best: Option<(f64, f64)> = None;
        for row in self.rows.iter().filter(|r| r.depth == depth) {
            let acc = row.accuracy()?;
            if best.is_none_or(|(_, b)| acc > b) {
                best = Some((row.rate, acc));
            }
        }
        best.map(|(r, _)| r)
    }
}

/// Accuracy for every `(rate, depth)` pair on uniform trees whose branching
/// comes from `config.tree` (binary when it is not uniform). The swept rate
/// replaces the whole schedule.
pub fn sweep_eta(config: &ExperimentConfig, rates: &[f64], depths: &[usize]) -> Result<SweepTable> {
    if rates.is_empty() || depths.is_empty() {
        return Err(Error::Config("sweep needs at least one rate and one depth".into()));
    }
    if let Some(r) = rates.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
        return Err(Error::InvalidRate(*r));
    }
    let branching = match config.tree {
        TreeSource::Uniform { branching, .. } => branching,
        _ => 2,
    };
    let (sampler, contexts) = uniform_defaults(&config.tree);
    let mut rows = Vec::with_capacity(rates.len() * depths.len());
    for &depth in depths {
        for &rate in rates {
            let mut cell = config.clone();
            cell.tree = TreeSource::Uniform { branching, depth, sampler, contexts };
            cell.eta = EtaConfig::constant(rate);
            rows.push(SweepRow { rate, depth, result: run_experiment(&cell)? });
        }
    }
    Ok(SweepTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(q: &[f64], rounds: u64) -> ExperimentConfig {
        ExperimentConfig::new(TreeSource::Flat { qualities: q.to_vec(), contexts: 1 }, rounds, vec![1, 2])
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = flat(&[0.9, 0.6], 0);
        assert!(matches!(run_experiment(&c), Err(Error::Config(_))));
        c.rounds = 10;
        c.seeds.clear();
        assert!(run_experiment(&c).is_err());
        let mut c = flat(&[0.9, 0.6], 10);
        c.metrics = Some(vec![Metric::Ratio]);
        assert!(run_experiment(&c).is_err());
        c.mode = ModeSelection::Explicit;
        c.metrics = Some(vec![Metric::Fidelity]);
        assert!(run_experiment(&c).is_err());
        let mut c = flat(&[0.9, 0.6], 10);
        c.schedule = ScheduleSpec::Block { block_size: 0, universe: None };
        assert!(run_experiment(&c).is_err());
        let mut c = flat(&[0.9, 0.6], 10);
        c.tree = TreeSource::File { path: "/nonexistent/tree.json".into(), contexts: None };
        assert!(matches!(run_experiment(&c), Err(Error::Io(_))));
    }

    #[test]
    fn config_json_round_trip() {
        let text = r#"{
            "tree": {"kind": "uniform", "branching": 2, "depth": 3},
            "mode": "both", "rounds": 100, "seeds": [1, 2],
            "eta": {"default": 0.2, "by_depth": {"1": 0.3}},
            "schedule": {"kind": "block", "block_size": 5, "universe": 16}
        }"#;
        let c = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(c.eta.by_depth[&1], 0.3);
        assert_eq!(ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap(), c);
        assert!(ExperimentConfig::from_json(r#"{"tree": {"kind": "flat", "qualities": [0.5, 0.4]}, "rounds": 1, "seeds": [1], "bogus": 1}"#).is_err());
    }

    #[test]
    fn coupled_modes_are_identical() {
        let mut c = ExperimentConfig::new(
            TreeSource::Uniform { branching: 3, depth: 2, sampler: QualitySampler::default(), contexts: 2 },
            3000,
            vec![5],
        );
        c.mode = ModeSelection::Both;
        c.coupled = true;
        c.trace_depth = Some(1);
        c.metrics = Some(vec![Metric::Accuracy, Metric::Settling, Metric::ActiveCounts, Metric::MaxWeight]);
        let r = run_experiment(&c).unwrap();
        let run = &r.runs[0];
        let (d, e) = (run.delta.clone().unwrap(), run.explicit.clone().unwrap());
        assert_eq!(ModeMetrics { mode: FeedbackMode::Explicit, ..d }, e);
        assert_eq!(run.ratio(), Some(1.0));
    }

    #[test]
    fn parallel_runs_are_deterministic() {
        let mut c = flat(&[0.9, 0.6, 0.5], 2000);
        c.seeds = (0..6).collect();
        let a = run_experiment(&c).unwrap();
        let b = run_experiment(&c).unwrap();
        assert_eq!(a, b);
        let single = run_seed(&c, 3).unwrap();
        assert_eq!(a.runs[3], single);
    }

    #[test]
    fn single_seed_aggregate_has_zero_spread() {
        let mut c = flat(&[0.9, 0.6], 500);
        c.seeds = vec![4];
        let r = run_experiment(&c).unwrap();
        let acc = r.aggregate.delta_accuracy.unwrap();
        assert_eq!((acc.n, acc.sd), (1, 0.0));
        assert_eq!(r.aggregate.mismatches, 0);
        assert_eq!(r.aggregate.observations, 500);
    }

    #[test]
    fn active_counts_follow_routes() {
        let mut c = ExperimentConfig::new(
            TreeSource::Uniform { branching: 2, depth: 3, sampler: QualitySampler::default(), contexts: 1 },
            1000,
            vec![9],
        );
        c.metrics = Some(vec![Metric::ActiveCounts]);
        let r = run_experiment(&c).unwrap();
        let counts = r.runs[0].delta.as_ref().unwrap().active_counts.clone().unwrap();
        assert_eq!(counts[0], 1000);
        assert_eq!(counts[1] + counts[2], 1000);
        assert_eq!(counts.iter().sum::<u64>(), 4000);
    }

    #[test]
    fn stat_uses_sample_deviation() {
        let s = Stat::of([1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert!((s.sd - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(Stat::of([]).is_none());
    }
}
