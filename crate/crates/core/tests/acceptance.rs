//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs sequentially with fixed seeds. A failing criterion is reported but
//! does not change the exit status unless `ACCEPTANCE_STRICT=1` is set.

use std::time::Instant;

use hierprice::equilibrium::{
    default_ode_step, equilibrium_general, expected_drift, jacobian, monte_carlo_drift, ode_flow, QualityVector,
};
use hierprice::hierarchy::{
    selector_stream, EtaSchedule, FeedbackMode, InputKey, NodeIdx, OutcomeModel, PathStep, RoundParams, RoundRecord,
    RunStreams, SingleSelector, Tree,
};
use hierprice::mechanism::{redistribute, BinarySignal, PriceVector, UpdateRate};
use hierprice::simlab::output::{comparison_rows, csv_string, experiment_rows, CsvRow};
use hierprice::simlab::{
    compare_modes, gen_uniform_tree, run_experiment, ExperimentConfig, Metric, ModeSelection, QualitySampler,
    ScheduleSpec, TreeSource,
};
use hierprice::{ExactPrices, ExactRate};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::One;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: std::ops::Range<u64> = 0..10;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

/// CSV outputs kept for the determinism rerun.
#[derive(Default)]
struct Recorded {
    runs: Vec<(String, Rerun, String)>,
}

#[derive(Clone)]
enum Rerun {
    Experiment(ExperimentConfig),
    Compare(ExperimentConfig, Vec<(usize, usize)>),
}

impl Rerun {
    fn csv(&self) -> String {
        let (config, rows): (&ExperimentConfig, Vec<CsvRow>) = match self {
            Rerun::Experiment(c) => (c, experiment_rows(&run_experiment(c).unwrap())),
            Rerun::Compare(c, grid) => (c, comparison_rows(&compare_modes(c, grid).unwrap())),
        };
        csv_string(config, &rows).unwrap()
    }
}

impl Recorded {
    fn keep(&mut self, label: &str, rerun: Rerun, csv: String) {
        self.runs.push((label.to_owned(), rerun, csv));
    }
}

fn main() {
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut recorded = Recorded::default();
    type Check = fn(&mut Recorded) -> Verdict;
    let checks: [(u32, &str, Check); 13] = [
        (1, "market integrity", market_integrity),
        (2, "signal fidelity", signal_fidelity),
        (3, "mode equivalence", mode_equivalence),
        (4, "two-child equilibrium", two_child_equilibrium),
        (5, "general equilibrium", general_equilibrium),
        (6, "drift oracle", drift_oracle),
        (7, "jacobian structure", jacobian_structure),
        (8, "composition", composition),
        (9, "thinned clock", thinned_clock),
        (10, "delta/explicit ratio", mode_ratio),
        (11, "block robustness", block_robustness),
        (12, "equipoise", equipoise),
        (13, "determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (id, name, check) in checks {
        let started = Instant::now();
        let v = check(&mut recorded);
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("{tag} [{id:>2}] {name}: {} ({:.1?})", v.detail, started.elapsed());
        if !v.pass {
            failed.push(id);
        }
    }
    println!("acceptance: {}/13 passed{}", 13 - failed.len(), if failed.is_empty() {
        String::new()
    } else {
        format!("; failed {failed:?}")
    });
    if strict && !failed.is_empty() {
        std::process::exit(1);
    }
}

fn uniform_tree(branching: usize, depth: usize, contexts: usize) -> TreeSource {
    TreeSource::Uniform { branching, depth, sampler: QualitySampler::default(), contexts }
}

fn dirichlet(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln() + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

/// Random sorted qualities satisfying the interiority condition.
fn interior_qualities(rng: &mut ChaCha8Rng, n: usize) -> QualityVector<f64> {
    loop {
        let base = rng.random_range(0.05..0.95);
        let spread = rng.random_range(0.0..0.5) / n as f64;
        let p: Vec<f64> = (0..n).map(|_| (base + spread * rng.random::<f64>()).min(0.999)).collect();
        let q = QualityVector::sorted(p).unwrap();
        if equilibrium_general(&q).unwrap().interior {
            return q;
        }
    }
}

fn market_integrity(_: &mut Recorded) -> Verdict {
    const STEPS: usize = 1_000_000;
    // A one-sided streak scales a weight by (1 - eta)^k, so for rates far
    // above the operating 0.1 a few chained streaks leave the f64 range.
    let rates: Vec<UpdateRate<f64>> = [0.01, 0.02, 0.05, 0.1].iter().map(|&e| UpdateRate::from_f64(e).unwrap()).collect();
    let mut worst_step = 0.0f64;
    let mut worst_total = 0.0f64;
    let mut min_weight = f64::INFINITY;
    for (k, n) in [2usize, 5, 10].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
        let mut w = PriceVector::<f64>::uniform(n).unwrap();
        let mut step = 0;
        while step < STEPS {
            // adversarial streak: one child, one signal, one rate
            let streak = if rng.random_bool(0.5) { rng.random_range(1..=256) } else { 1 };
            let child = rng.random_range(0..n);
            let signal = BinarySignal::from_bit(rng.random_bool(0.5));
            let eta = &rates[rng.random_range(0..rates.len())];
            for _ in 0..streak.min(STEPS - step) {
                let before = w.sum();
                w.update(child, signal, eta).unwrap();
                let after = w.sum();
                worst_step = worst_step.max((after - before).abs());
                worst_total = worst_total.max((after - 1.0).abs());
                min_weight = min_weight.min(w.min_weight());
                step += 1;
            }
        }
    }

    // With exact arithmetic the sum stays exactly 1, so nothing is ever
    // rescaled (operand sizes grow geometrically, so the run is short); off
    // the simplex the raw update keeps the given mass instead
    // of restoring 1, which a renormalising step would do.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut exact = ExactPrices::uniform(5).unwrap();
    let eta = ExactRate::new(BigRational::new(BigInt::from(1), BigInt::from(7))).unwrap();
    for _ in 0..16 {
        exact.update(rng.random_range(0..5), BinarySignal::from_bit(rng.random_bool(0.5)), &eta).unwrap();
    }
    let exact_one = exact.sum() == BigRational::one();
    let mut raw = vec![0.2, 0.3, 0.4];
    let rate = UpdateRate::from_f64(0.3).unwrap();
    for i in 0..300 {
        redistribute(&mut raw, i % 3, BinarySignal::from_bit(i % 7 < 3), &rate).unwrap();
    }
    let mass_kept = (raw.iter().sum::<f64>() - 0.9).abs() < 1e-12;

    let pass = worst_step <= 1e-12 && worst_total <= 1e-9 && min_weight > 0.0 && exact_one && mass_kept;
    verdict(
        pass,
        format!(
            "3x10^6 updates, max step |dsum| {worst_step:.1e}, max |sum-1| {worst_total:.1e}, min weight \
             {min_weight:.1e}, exact sum 1: {exact_one}, off-simplex mass kept: {mass_kept}"
        ),
    )
}

fn signal_fidelity(recorded: &mut Recorded) -> Verdict {
    let tree = TreeSource::Heterogeneous {
        arity_min: 2,
        arity_max: 10,
        depth: 4,
        leaves: 475,
        sampler: QualitySampler::default(),
        contexts: 1,
    };
    let mut config = ExperimentConfig::new(tree, 1_000_000, SEEDS.collect());
    config.metrics = Some(vec![Metric::Fidelity]);
    let result = run_experiment(&config).unwrap();
    let a = &result.aggregate;
    let shape = result.runs.iter().all(|r| r.leaves == 475 && r.depth == 4);
    recorded.keep("fidelity", Rerun::Experiment(config.clone()), csv_string(&config, &experiment_rows(&result)).unwrap());
    verdict(
        a.mismatches == 0 && a.observations >= 30_000_000 && shape,
        format!("{} mismatches / {} observations over 10 seeds x 10^6 rounds", a.mismatches, a.observations),
    )
}

fn snapshot(tree: &Tree) -> Vec<u64> {
    tree.selectors()
        .flat_map(|s| {
            (0..tree.context_count(s)).flat_map(move |c| tree.weights(s, c).unwrap().weights().iter().map(|w| w.to_bits()))
        })
        .collect()
}

fn mode_equivalence(_: &mut Recorded) -> Verdict {
    const ROUNDS: u64 = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let spec = gen_uniform_tree(3, 3, &QualitySampler::default(), &mut rng).unwrap();
    let base: Tree = Tree::from_spec(&spec).unwrap();
    let eta = EtaSchedule::constant(UpdateRate::from_f64(0.1).unwrap());
    let run = |mode| RoundParams { eta: &eta, epsilon: 0.0, outcome: OutcomeModel::Bernoulli, mode };
    let (pd, pe) = (run(FeedbackMode::Delta), run(FeedbackMode::Explicit));
    let (mut td, mut te) = (base.clone(), base);
    let (mut sd, mut se) = (RunStreams::new(7, td.len()), RunStreams::new(7, te.len()));
    let (mut rd, mut re) = (RoundRecord::empty(FeedbackMode::Delta), RoundRecord::empty(FeedbackMode::Explicit));
    let inputs = ScheduleSpec::Iid { universe: None }.stream(7, ROUNDS).unwrap();
    let mut diverged = None;
    for (round, input) in inputs.enumerate() {
        td.run_round_into(round as u64, input, &mut sd, &pd, &mut rd);
        te.run_round_into(round as u64, input, &mut se, &pe, &mut re);
        let same_steps = rd.steps.iter().zip(&re.steps).all(|(a, b)| same_step(a, b));
        if rd.leaf != re.leaf || rd.outcome != re.outcome || !same_steps || snapshot(&td) != snapshot(&te) {
            diverged = Some(round);
            break;
        }
    }
    verdict(
        diverged.is_none(),
        match diverged {
            None => format!("b=3 D=3, {ROUNDS} coupled rounds, all selector weights bit-identical every round"),
            Some(r) => format!("trajectories diverge at round {r}"),
        },
    )
}

fn same_step(a: &PathStep, b: &PathStep) -> bool {
    a.node == b.node && a.child_index == b.child_index && a.delta.to_bits() == b.delta.to_bits() && a.signal == b.signal
}

fn two_child_equilibrium(recorded: &mut Recorded) -> Verdict {
    let mut config = ExperimentConfig::new(TreeSource::Flat { qualities: vec![0.9, 0.6], contexts: 1 }, 100_000, SEEDS.collect());
    config.eta.default = 0.05;
    config.metrics = Some(vec![Metric::MaxWeight]);
    let result = run_experiment(&config).unwrap();
    let w1: Vec<f64> = result.runs.iter().map(|r| r.delta.as_ref().unwrap().root_mean_weights[0]).collect();
    let (lo, hi) = w1.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    let mean = w1.iter().sum::<f64>() / w1.len() as f64;
    recorded.keep("n2", Rerun::Experiment(config.clone()), csv_string(&config, &experiment_rows(&result)).unwrap());
    verdict(
        w1.iter().all(|w| (w - 0.8).abs() <= 0.02),
        format!("trailing-half mean w1 {mean:.4} (seeds {lo:.4}..{hi:.4}), target 0.8 +- 0.02"),
    )
}

fn general_equilibrium(_: &mut Recorded) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let eta = UpdateRate::from_f64(0.1).unwrap();
    let (mut drift, mut sum, mut ordered) = (0.0f64, 0.0f64, true);
    for _ in 0..50 {
        let n = rng.random_range(2..=20);
        let p = interior_qualities(&mut rng, n);
        let w = equilibrium_general(&p).unwrap().w_star.unwrap();
        drift = drift.max(expected_drift(&w, &p, &eta).unwrap().max_abs());
        sum = sum.max((w.sum() - 1.0).abs());
        let (pv, wv) = (p.values(), w.weights());
        for i in 0..n {
            for j in 0..n {
                if pv[i] > pv[j] && wv[i] <= wv[j] {
                    ordered = false;
                }
            }
        }
    }
    verdict(
        drift <= 1e-12 && sum <= 1e-12 && ordered,
        format!("50 vectors, N in 2..=20: max |drift| {drift:.1e}, max |sum-1| {sum:.1e}, order kept: {ordered}"),
    )
}

fn drift_oracle(_: &mut Recorded) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(2..=10);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.95)).collect();
        let p = QualityVector::sorted(p).unwrap();
        let w = PriceVector::from_weights(dirichlet(&mut rng, n)).unwrap();
        let eta = UpdateRate::from_f64(rng.random_range(0.05..0.5)).unwrap();
        let exact = expected_drift(&w, &p, &eta).unwrap();
        let mc = monte_carlo_drift(&w, &p, &eta, 1_000_000, &mut rng).unwrap();
        for ((e, m), se) in exact.values().iter().zip(&mc.mean).zip(&mc.std_err) {
            worst = worst.max((e - m).abs() / se);
        }
    }
    verdict(worst <= 4.0, format!("50 instances x 10^6 samples, max deviation {worst:.2} standard errors"))
}

fn jacobian_structure(_: &mut Recorded) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let eta = UpdateRate::from_f64(0.1).unwrap();
    let (mut colsum, mut fd) = (0.0f64, 0.0f64);
    let (mut flows, mut misses, mut worst_flow) = (0, 0, 0.0f64);
    let h = 1e-6;
    for n in 2..=20 {
        let p = interior_qualities(&mut rng, n);
        let sol = equilibrium_general(&p).unwrap();
        let j = jacobian(&p, &eta).unwrap();
        for s in j.column_sums() {
            colsum = colsum.max((s / 0.1 - sol.c).abs());
        }
        // central differences along the simplex directions e_a - e_b
        let w_star = sol.w_star.unwrap();
        for a in 0..n {
            let b = (a + 1) % n;
            let mut v = vec![0.0; n];
            v[a] = 1.0;
            v[b] = -1.0;
            let shifted = |sign: f64| {
                let w: Vec<f64> = w_star.weights().iter().zip(&v).map(|(x, d)| x + sign * h * d).collect();
                expected_drift(&PriceVector::from_weights(w).unwrap(), &p, &eta).unwrap()
            };
            let (up, down) = (shifted(1.0), shifted(-1.0));
            for ((u, d), jv) in up.values().iter().zip(down.values()).zip(j.apply(&v)) {
                fd = fd.max(((u - d) / (2.0 * h) - jv).abs());
            }
        }
        for _ in 0..100 {
            let w0 = PriceVector::from_weights(dirichlet(&mut rng, n)).unwrap();
            let flow = ode_flow(&w0, &p, &eta, default_ode_step(0.1), 2_000_000);
            flows += 1;
            match flow {
                Ok(f) if f.converged => {
                    let dist = f.final_state.iter().zip(&f.target).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
                    worst_flow = worst_flow.max(dist);
                }
                _ => misses += 1,
            }
        }
    }
    verdict(
        colsum <= 1e-12 && fd <= 1e-6 && misses == 0 && worst_flow <= 1e-6,
        format!(
            "N in 2..=20: max |colsum/eta - c| {colsum:.1e}, max finite-difference error {fd:.1e}, \
             {}/{flows} flows converged (max distance {worst_flow:.1e})",
            flows - misses
        ),
    )
}

fn composition(_: &mut Recorded) -> Verdict {
    const ROUTES: u64 = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let spec = gen_uniform_tree(3, 4, &QualitySampler::default(), &mut rng).unwrap();
    let mut tree: Tree = Tree::from_spec(&spec).unwrap();
    let selectors: Vec<NodeIdx> = tree.selectors().collect();
    // weights bounded away from 0 keep every expected leaf count large
    // enough for the normal 3 sigma band to be meaningful
    for s in selectors {
        let raw: Vec<f64> = (0..tree.children(s).len()).map(|_| rng.random_range(0.5..1.5)).collect();
        let total: f64 = raw.iter().sum();
        let w = raw.iter().map(|x| x / total).collect();
        tree.set_weights(s, 0, PriceVector::from_weights(w).unwrap()).unwrap();
    }
    let mut streams = RunStreams::new(8, tree.len());
    let mut path = Vec::new();
    let mut counts = vec![0u64; tree.len()];
    for r in 0..ROUTES {
        counts[tree.route(InputKey(r), &mut streams, 0.0, &mut path).index()] += 1;
    }
    let (mut outside, mut worst, mut min_expected, mut chi2) = (0, 0.0f64, f64::INFINITY, 0.0);
    let leaves: Vec<NodeIdx> = tree.leaves().collect();
    for &leaf in &leaves {
        let p = tree.leaf_selection_probability(leaf, |_| 0).unwrap();
        min_expected = min_expected.min(ROUTES as f64 * p);
        let sigma = (ROUTES as f64 * p * (1.0 - p)).sqrt();
        let miss = counts[leaf.index()] as f64 - ROUTES as f64 * p;
        chi2 += miss * miss / (ROUTES as f64 * p);
        let z = miss.abs() / sigma;
        worst = worst.max(z);
        outside += usize::from(z > 3.0);
    }
    verdict(
        outside == 0,
        format!(
            "{} leaves, 10^5 frozen routes, {outside} outside 3 sigma (max {worst:.2} sigma, min expected count \
             {min_expected:.0}; pooled chi-square {chi2:.1} on {} dof)",
            leaves.len(),
            leaves.len() - 1
        ),
    )
}

fn thinned_clock(_: &mut Recorded) -> Verdict {
    const ACTIVE: usize = 10_000;
    let seed = 9;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = gen_uniform_tree(2, 3, &QualitySampler::default(), &mut rng).unwrap();
    let mut tree: Tree = Tree::from_spec(&spec).unwrap();
    let target = tree.selectors().find(|&s| tree.node(s).depth == 2).unwrap();
    let rate = UpdateRate::from_f64(0.1).unwrap();
    let eta = EtaSchedule::constant(rate.clone());
    let epsilon = 0.05;
    let params = RoundParams { eta: &eta, epsilon, outcome: OutcomeModel::Bernoulli, mode: FeedbackMode::Delta };
    let mut lone = SingleSelector::new(tree.weights(target, 0).unwrap().clone(), selector_stream(seed, target));
    let mut streams = RunStreams::new(seed, tree.len());
    let mut record = RoundRecord::empty(FeedbackMode::Delta);
    let (mut active, mut round, mut broken) = (0, 0u64, None);
    while active < ACTIVE && broken.is_none() {
        tree.run_round_into(round, InputKey(round), &mut streams, &params, &mut record);
        if let Some(k) = record.steps.iter().position(|s| s.node == target) {
            let step = record.steps[k];
            let child = lone.select(epsilon);
            let delta = lone.update(child, record.steps[k - 1].signal, &rate).unwrap();
            let same_weights = lone.weights().weights().iter().map(|w| w.to_bits()).eq(tree
                .weights(target, 0)
                .unwrap()
                .weights()
                .iter()
                .map(|w| w.to_bits()));
            if child != step.child_index || delta.value().to_bits() != step.delta.to_bits() || !same_weights {
                broken = Some(active);
            }
            active += 1;
        }
        round += 1;
    }
    verdict(
        broken.is_none(),
        match broken {
            None => format!("{ACTIVE} active rounds (of {round} global) bit-identical to the standalone selector"),
            Some(a) => format!("diverged at active round {a}"),
        },
    )
}

fn mode_ratio(recorded: &mut Recorded) -> Verdict {
    let mut config = ExperimentConfig::new(uniform_tree(2, 3, 1), 1_000_000, SEEDS.collect());
    config.metrics = Some(vec![Metric::Accuracy, Metric::Ratio]);
    let grid = vec![(2, 3), (2, 6)];
    let cells = compare_modes(&config, &grid).unwrap();
    let (r3, r6) = (cells[0].ratio().unwrap(), cells[1].ratio().unwrap());
    recorded.keep("ratio", Rerun::Compare(config.clone(), grid), csv_string(&config, &comparison_rows(&cells)).unwrap());
    verdict(
        r3 >= 0.93 && r6 >= r3 - 0.02,
        format!("b=2, 10^6 rounds x 10 seeds: ratio D=3 {r3:.4} (>= 0.93), D=6 {r6:.4} (>= {:.4})", r3 - 0.02),
    )
}

fn block_robustness(recorded: &mut Recorded) -> Verdict {
    let mut ratios = Vec::new();
    for b in [1u64, 10, 100, 500] {
        let mut config = ExperimentConfig::new(uniform_tree(2, 3, 4), 1_000_000, SEEDS.collect());
        config.mode = ModeSelection::Both;
        config.metrics = Some(vec![Metric::Accuracy, Metric::Ratio]);
        config.schedule = ScheduleSpec::Block { block_size: b, universe: None };
        let result = run_experiment(&config).unwrap();
        ratios.push(result.aggregate.ratio.unwrap());
        let csv = csv_string(&config, &experiment_rows(&result)).unwrap();
        recorded.keep(&format!("block B={b}"), Rerun::Experiment(config), csv);
    }
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.4}")).collect();
    verdict(
        hi - lo <= 0.05,
        format!("B in {{1,10,100,500}}, 4 contexts: ratios [{}], variation {:.4} (<= 0.05)", shown.join(", "), hi - lo),
    )
}

fn equipoise(recorded: &mut Recorded) -> Verdict {
    let mut config = ExperimentConfig::new(TreeSource::Flat { qualities: vec![0.7; 4], contexts: 1 }, 100_000, SEEDS.collect());
    config.metrics = Some(vec![Metric::MaxWeight]);
    let result = run_experiment(&config).unwrap();
    let stat = result.aggregate.root_mean_max_weight.unwrap();
    recorded.keep("equipoise", Rerun::Experiment(config.clone()), csv_string(&config, &experiment_rows(&result)).unwrap());
    verdict(
        stat.mean <= 0.35,
        format!("N=4, p=0.7, eta=0.1: trailing mean max weight {:.4} (sd {:.4}), bound 0.35", stat.mean, stat.sd),
    )
}

fn determinism(recorded: &mut Recorded) -> Verdict {
    // rerun on a differently sized pool so scheduling cannot matter
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let mut differing = Vec::new();
    for (label, rerun, csv) in &recorded.runs {
        if pool.install(|| rerun.csv()) != *csv {
            differing.push(label.clone());
        }
    }
    verdict(
        differing.is_empty(),
        format!("{} recorded runs rerun, {} CSV(s) differ {differing:?}", recorded.runs.len(), differing.len()),
    )
}
