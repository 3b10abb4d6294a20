//! Synthetic tree generators. Node ids are dotted child paths (`r`, `r.0`,
//! `r.0.2`, ...) and nodes are emitted breadth-first, so child order and leaf
//! order are fixed by the generator alone.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{NodeSpec, TreeSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum QualitySampler {
    Uniform { low: f64, high: f64 },
    Constant { value: f64 },
    /// Deterministic, linearly decreasing from `high` (first leaf) to `low`
    /// (last leaf) in breadth-first order, so every left sibling's subtree
    /// dominates its right siblings'.
    Ladder { high: f64, low: f64 },
}

impl Default for QualitySampler {
    fn default() -> Self {
        Self::Uniform { low: 0.3, high: 0.95 }
    }
}

impl QualitySampler {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Uniform { low, high } => (0.0..=1.0).contains(&low) && (0.0..=1.0).contains(&high) && low <= high,
            Self::Constant { value } => (0.0..=1.0).contains(&value),
            Self::Ladder { high, low } => (0.0..=1.0).contains(&low) && (0.0..=1.0).contains(&high) && low <= high,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("quality sampler {self:?} leaves [0, 1]")))
        }
    }

    /// Quality of leaf `index` of `count` (breadth-first order).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, index: usize, count: usize) -> f64 {
        match *self {
            Self::Uniform { low, high } if high > low => rng.random_range(low..high),
            Self::Uniform { low, .. } => low,
            Self::Constant { value } => value,
            Self::Ladder { high, .. } if count <= 1 => high,
            Self::Ladder { high, low } => high - (high - low) * index as f64 / (count - 1) as f64,
        }
    }
}

/// Complete `branching`-ary tree with every leaf at depth `depth`.
pub fn gen_uniform_tree<R: Rng + ?Sized>(
    branching: usize,
    depth: usize,
    sampler: &QualitySampler,
    rng: &mut R,
) -> Result<TreeSpec> {
    if branching < 2 {
        return Err(Error::Config(format!("branching factor {branching} < 2")));
    }
    if depth < 1 {
        return Err(Error::Config("depth must be at least 1".into()));
    }
    sampler.validate()?;
    let leaves = (branching as u128).checked_pow(depth as u32).filter(|&n| n <= 1 << 26);
    if leaves.is_none() {
        return Err(Error::Config(format!("{branching}^{depth} leaves is too large")));
    }
    build_breadth_first(depth, branching.pow(depth as u32), sampler, rng, |_, _, _| branching)
}

/// Random tree with every leaf at depth `depth`, per-node arity drawn from
/// `arity` (inclusive) and exactly `leaves` leaves.
///
/// Each subtree is handed a leaf budget. A node with budget `T` and `r`
/// levels below it draws an arity `a` for which the budget can still be met
/// (`a lo^(r-1) <= T <= a hi^(r-1)`), preferring arities near `T^(1/r)`, and
/// splits `T` randomly among its children within their feasible ranges.
pub fn gen_heterogeneous_tree<R: Rng + ?Sized>(
    arity: (usize, usize),
    depth: usize,
    leaves: usize,
    sampler: &QualitySampler,
    rng: &mut R,
) -> Result<TreeSpec> {
    let (lo, hi) = arity;
    if lo < 2 || hi < lo {
        return Err(Error::Config(format!("arity range {lo}..={hi} must satisfy 2 <= lo <= hi")));
    }
    if depth < 1 {
        return Err(Error::Config("depth must be at least 1".into()));
    }
    sampler.validate()?;
    let min = capacity(lo, depth);
    let max = capacity(hi, depth);
    if (leaves as u128) < min || (leaves as u128) > max {
        return Err(Error::Config(format!(
            "{leaves} leaves is infeasible at depth {depth} with arity {lo}..={hi} (range {min}..={max})"
        )));
    }

    // budgets[i] is the leaf budget of the i-th node in breadth-first order
    let mut budgets: VecDeque<u128> = VecDeque::from([leaves as u128]);
    let mut failure = None;
    let spec = build_breadth_first(depth, leaves, sampler, rng, |rng, level, _| {
        let budget = budgets.pop_front().expect("one budget per selector");
        let below = depth - level - 1;
        match split_budget(budget, lo, hi, below, rng) {
            Some(parts) => {
                let a = parts.len();
                if below > 0 {
                    budgets.extend(parts);
                }
                a
            }
            None => {
                failure.get_or_insert(budget);
                lo
            }
        }
    })?;
    match failure {
        Some(budget) => Err(Error::Config(format!("could not split a budget of {budget} leaves"))),
        None => Ok(spec),
    }
}

/// Depth-1 tree: one selector over leaves with the given qualities.
pub fn gen_flat_tree(qualities: &[f64]) -> Result<TreeSpec> {
    if qualities.len() < 2 {
        return Err(Error::InvalidArity(qualities.len()));
    }
    let mut nodes = vec![NodeSpec::selector("r", None)];
    for (i, &q) in qualities.iter().enumerate() {
        nodes.push(NodeSpec::leaf(format!("r.{i}"), Some("r"), q));
    }
    Ok(TreeSpec::new(nodes))
}

fn capacity(arity: usize, levels: usize) -> u128 {
    (arity as u128).saturating_pow(levels as u32)
}

/// Emits nodes breadth-first; `arity(rng, level, id)` is asked once per
/// selector, in emission order.
fn build_breadth_first<R: Rng + ?Sized>(
    depth: usize,
    leaf_count: usize,
    sampler: &QualitySampler,
    rng: &mut R,
    mut arity: impl FnMut(&mut R, usize, &str) -> usize,
) -> Result<TreeSpec> {
    let mut nodes = vec![NodeSpec::selector("r", None)];
    let mut frontier = VecDeque::from([(0usize, 0usize)]);
    let mut leaf_index = 0;
    while let Some((index, level)) = frontier.pop_front() {
        let parent = nodes[index].id.clone();
        let a = arity(rng, level, &parent);
        for k in 0..a {
            let id = format!("{parent}.{k}");
            if level + 1 == depth {
                let q = sampler.sample(rng, leaf_index, leaf_count);
                leaf_index += 1;
                nodes.push(NodeSpec::leaf(id, Some(&parent), q));
            } else {
                frontier.push_back((nodes.len(), level + 1));
                nodes.push(NodeSpec::selector(id, Some(&parent)));
            }
        }
    }
    Ok(TreeSpec::new(nodes))
}

fn split_budget<R: Rng + ?Sized>(budget: u128, lo: usize, hi: usize, below: usize, rng: &mut R) -> Option<Vec<u128>> {
    let floor = capacity(lo, below);
    let ceil = capacity(hi, below);
    let a_min = (lo as u128).max(budget.div_ceil(ceil));
    let a_max = (hi as u128).min(budget / floor);
    if a_min > a_max {
        return None;
    }
    let target = (budget as f64).powf(1.0 / (below + 1) as f64);
    let pref_lo = a_min.max((target / 2.0).floor() as u128);
    let pref_hi = a_max.min((target * 2.0).ceil() as u128);
    let a = if pref_lo <= pref_hi {
        rng.random_range(pref_lo..=pref_hi)
    } else {
        rng.random_range(a_min..=a_max)
    } as usize;

    let mut parts = vec![floor; a];
    let mut rest = budget - floor * a as u128;
    let room = ceil - floor;
    // random proportional shares first, then unit top-ups
    let shares: Vec<f64> = (0..a).map(|_| rng.random::<f64>() + 1e-3).collect();
    let total: f64 = shares.iter().sum();
    let initial = rest;
    for (part, share) in parts.iter_mut().zip(&shares) {
        let add = ((initial as f64 * share / total).floor() as u128).min(room).min(rest);
        *part += add;
        rest -= add;
    }
    while rest > 0 {
        let open: Vec<usize> = (0..a).filter(|&i| parts[i] < ceil).collect();
        let i = open[rng.random_range(0..open.len())];
        let add = rest.min(ceil - parts[i]).min(1 + rest / open.len() as u128);
        parts[i] += add;
        rest -= add;
    }
    Some(parts)
}
