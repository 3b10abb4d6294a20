//! Context-free core: simplex weight vectors, the two proportional
//! redistribution updates and binary signals read from weight deltas.
//!
//! The update never renormalises. Whatever total mass the vector carries
//! before an update it carries after it, so a vector that starts on the
//! simplex stays there up to accumulated rounding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{resolvable_tolerance, to_f64, Scalar};

/// Tolerance on `|sum - 1|` accepted by [`PriceVector::from_weights`].
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Adjustment rate, strictly inside `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRate<T>(T);

impl<T: Scalar> UpdateRate<T> {
    pub fn new(eta: T) -> Result<Self> {
        if eta > T::zero() && eta < T::one() {
            Ok(Self(eta))
        } else {
            Err(Error::InvalidRate(to_f64(&eta)))
        }
    }

    pub fn from_f64(eta: f64) -> Result<Self> {
        match T::from_f64(eta) {
            Some(v) if eta.is_finite() => Self::new(v),
            _ => Err(Error::InvalidRate(eta)),
        }
    }

    pub fn value(&self) -> &T {
        &self.0
    }
}

/// One-bit evaluation: the root outcome or a signal read from a delta.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum BinarySignal {
    Negative,
    Positive,
}

impl BinarySignal {
    pub fn from_bit(bit: bool) -> Self {
        if bit {
            Self::Positive
        } else {
            Self::Negative
        }
    }

    pub fn bit(self) -> u8 {
        self as u8
    }

    pub fn is_positive(self) -> bool {
        self == Self::Positive
    }
}

impl From<BinarySignal> for u8 {
    fn from(s: BinarySignal) -> u8 {
        s.bit()
    }
}

impl TryFrom<u8> for BinarySignal {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Self::Negative),
            1 => Ok(Self::Positive),
            other => Err(format!("binary signal must be 0 or 1, got {other}")),
        }
    }
}

/// Signed change of the selected child's weight across one update.
///
/// This is the increment the rule adds to the selected weight,
/// `eta * (1 - w_sel)` or `-eta * w_sel`, with `1 - w_sel` taken as the
/// sibling mass. It stays exact when the stored weight is so close to 1 that
/// the rounded sum would swallow it.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightDelta<T>(T);

impl<T: Scalar> WeightDelta<T> {
    pub fn new(value: T) -> Self {
        Self(value)
    }

    pub fn value(&self) -> &T {
        &self.0
    }

    pub fn into_inner(self) -> T {
        self.0
    }
}

/// `1` iff the delta is strictly positive. A zero delta (off the active path)
/// reads as `0`.
pub fn derive_signal<T: Scalar>(delta: &WeightDelta<T>) -> BinarySignal {
    BinarySignal::from_bit(delta.0 > T::zero())
}

/// Applies one proportional-redistribution step to a raw weight slice.
///
/// Positive: the selected child gains `eta` times the sibling mass and every
/// sibling is scaled by `1 - eta`. Negative: the selected child keeps
/// `1 - eta` of its weight and the freed mass is shared among siblings in
/// proportion to their weights. The denominator `1 - w_sel` is evaluated as
/// the sibling mass, which equals it on the simplex and keeps the update
/// well conditioned near a vertex. When the siblings hold no mass at all the
/// freed mass is split evenly among them.
///
/// Total mass is conserved for any input, on or off the simplex.
pub fn redistribute<T: Scalar>(
    weights: &mut [T],
    selected: usize,
    signal: BinarySignal,
    eta: &UpdateRate<T>,
) -> Result<WeightDelta<T>> {
    let n = weights.len();
    if selected >= n {
        return Err(Error::InvalidChild { index: selected, len: n });
    }
    let eta = eta.value();
    let rest = weights
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != selected)
        .fold(T::zero(), |acc, (_, w)| acc + w.clone());

    let delta = match signal {
        BinarySignal::Positive => {
            let keep = T::one() - eta.clone();
            let gain = eta.clone() * rest;
            for (j, w) in weights.iter_mut().enumerate() {
                if j != selected {
                    *w = keep.clone() * w.clone();
                }
            }
            weights[selected] = weights[selected].clone() + gain.clone();
            gain
        }
        BinarySignal::Negative => {
            let w_sel = weights[selected].clone();
            let freed = eta.clone() * w_sel.clone();
            if rest > T::zero() {
                let factor = (rest.clone() + freed.clone()) / rest;
                for (j, w) in weights.iter_mut().enumerate() {
                    if j != selected {
                        *w = w.clone() * factor.clone();
                    }
                }
            } else {
                let share = freed.clone() / T::from_usize(n - 1).expect("child count fits scalar");
                for (j, w) in weights.iter_mut().enumerate() {
                    if j != selected {
                        *w = w.clone() + share.clone();
                    }
                }
            }
            weights[selected] = (T::one() - eta.clone()) * w_sel;
            -freed
        }
    };
    Ok(WeightDelta(delta))
}

/// A selector's allocation over its children: a point on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceVector<T> {
    weights: Vec<T>,
}

impl<T: Scalar> PriceVector<T> {
    /// Uniform allocation `1/n` over `n >= 2` children.
    pub fn uniform(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArity(n));
        }
        let share = T::one() / T::from_usize(n).expect("child count fits scalar");
        Ok(Self { weights: vec![share; n] })
    }

    /// Validates `weights` as a simplex point: at least two entries, all
    /// non-negative, summing to 1 within [`SIMPLEX_TOLERANCE`] (or 64 ulp
    /// for types too coarse to resolve it).
    pub fn from_weights(weights: Vec<T>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::InvalidArity(weights.len()));
        }
        if let Some((i, w)) = weights.iter().enumerate().find(|(_, w)| **w < T::zero()) {
            return Err(Error::NotOnSimplex(format!("weight {i} is negative ({w:?})")));
        }
        let sum = weights.iter().fold(T::zero(), |acc, w| acc + w.clone());
        if (sum.clone() - T::one()).abs() > resolvable_tolerance::<T>(SIMPLEX_TOLERANCE) {
            return Err(Error::NotOnSimplex(format!("weights sum to {sum:?}")));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&T> {
        self.weights.get(i)
    }

    pub fn sum(&self) -> T {
        self.weights.iter().fold(T::zero(), |acc, w| acc + w.clone())
    }

    pub fn min_weight(&self) -> T {
        self.fold_by(|a, b| b < a)
    }

    pub fn max_weight(&self) -> T {
        self.fold_by(|a, b| b > a)
    }

    /// Index of the largest weight; the first one on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, w) in self.weights.iter().enumerate().skip(1) {
            if *w > self.weights[best] {
                best = i;
            }
        }
        best
    }

    fn fold_by(&self, better: impl Fn(&T, &T) -> bool) -> T {
        let mut acc = self.weights[0].clone();
        for w in &self.weights[1..] {
            if better(&acc, w) {
                acc = w.clone();
            }
        }
        acc
    }

    pub fn apply_positive(&self, selected: usize, eta: &UpdateRate<T>) -> Result<Self> {
        self.apply_update(selected, BinarySignal::Positive, eta)
            .map(|(w, _)| w)
    }

    pub fn apply_negative(&self, selected: usize, eta: &UpdateRate<T>) -> Result<Self> {
        self.apply_update(selected, BinarySignal::Negative, eta)
            .map(|(w, _)| w)
    }

    /// Returns the updated vector and the selected child's weight delta.
    pub fn apply_update(
        &self,
        selected: usize,
        signal: BinarySignal,
        eta: &UpdateRate<T>,
    ) -> Result<(Self, WeightDelta<T>)> {
        let mut next = self.clone();
        let delta = next.update(selected, signal, eta)?;
        Ok((next, delta))
    }

    /// In-place form of [`apply_update`](Self::apply_update).
    pub fn update(
        &mut self,
        selected: usize,
        signal: BinarySignal,
        eta: &UpdateRate<T>,
    ) -> Result<WeightDelta<T>> {
        redistribute(&mut self.weights, selected, signal, eta)
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.weights.iter().map(to_f64).collect()
    }
}

impl<T> AsRef<[T]> for PriceVector<T> {
    fn as_ref(&self) -> &[T] {
        &self.weights
    }
}
