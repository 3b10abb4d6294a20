//! Expected dynamics of a single selector with stationary child qualities.
//!
//! For child `i` selected with probability `w_i` and succeeding with
//! probability `p_i`, the per-round expected weight change is available in
//! closed form. Two children have the exact equilibrium
//! `w1* = (1 - p2) / ((1 - p1) + (1 - p2))` with linear drift
//! `eta * alpha * (w1* - w1)`. For `N` children the interior zero, when the
//! interiority condition holds, is the affine point `w_i* = (p_i + c) / (1 + c)`
//! with `c = (1 - sum p) / (N - 1)`.
//!
//! Stability beyond `N = 2` is probed numerically by [`ode_flow`] and the
//! linearisation [`jacobian`]; nothing here asserts it analytically.
//!
//! These describe the mean flow only. For `N >= 3` a sampled selector does
//! not hover at `w*`: a small weight shrinks geometrically while other
//! children are drawn (log drift `eta * sum_{j != i} w_j ((1 - p_j) w_j /
//! (1 - w_j) - p_j)`, negative away from a vertex) and recovers only when
//! its own child is drawn, so weak children are driven out.

use rand::Rng;

use crate::error::{Error, Result};
use crate::hierarchy::sample_child;
use crate::mechanism::{redistribute, BinarySignal, PriceVector, UpdateRate};
use crate::scalar::{lit, to_f64, Real};

/// `‖w - w*‖∞` at which [`ode_flow`] reports convergence.
pub const ODE_CONVERGENCE: f64 = 1e-6;
/// Largest `|sum w - 1|` tolerated along an ODE trajectory.
pub const ODE_SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Child success probabilities, sorted non-increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityVector<T>(Vec<T>);

impl<T: Real> QualityVector<T> {
    pub fn new(p: Vec<T>) -> Result<Self> {
        if p.len() < 2 {
            return Err(Error::InvalidArity(p.len()));
        }
        if let Some(x) = p.iter().find(|x| !(**x >= T::zero() && **x <= T::one())) {
            return Err(Error::InvalidQualities(format!("{} outside [0, 1]", to_f64(x))));
        }
        if p.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidQualities("qualities must be sorted non-increasing".into()));
        }
        Ok(Self(p))
    }

    /// Sorts `p` non-increasing, then validates.
    pub fn sorted(mut p: Vec<T>) -> Result<Self> {
        p.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        Self::new(p)
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn sum(&self) -> T {
        self.0.iter().fold(T::zero(), |a, &b| a + b)
    }

    /// `c = (1 - sum p) / (N - 1)`.
    pub fn offset(&self) -> T {
        (T::one() - self.sum()) / lit::<T>((self.len() - 1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSolution<T> {
    /// Present when the zero lies in the closed simplex.
    pub w_star: Option<PriceVector<T>>,
    pub c: T,
    /// Every `w*_i` strictly inside `(0, 1)`.
    pub interior: bool,
    /// `(1 - p1) + (1 - p2)`; two children only.
    pub alpha: Option<T>,
    /// Expected per-round loss against always choosing the best child; two
    /// children only.
    pub eq_cost: Option<T>,
}

/// Exact two-child equilibrium.
pub fn equilibrium_n2<T: Real>(p1: T, p2: T) -> Result<EquilibriumSolution<T>> {
    let p = QualityVector::new(vec![p1, p2])?;
    let alpha = (T::one() - p1) + (T::one() - p2);
    if alpha == T::zero() {
        return Err(Error::Degenerate("p1 = p2 = 1 leaves no drift".into()));
    }
    let gap = p1 - p2;
    if gap <= T::zero() {
        return Err(Error::NoGap(to_f64(&p1)));
    }
    let one = T::one();
    let two = one + one;
    let w2 = (one - p1) / (gap + two * (one - p1));
    let w1 = one - w2;
    let cost = gap * w2;
    Ok(EquilibriumSolution {
        w_star: Some(PriceVector::from_weights(vec![w1, w2])?),
        c: p.offset(),
        interior: w1 > T::zero() && w1 < one,
        alpha: Some(alpha),
        eq_cost: Some(cost),
    })
}

/// `p_N > (sum p - 1) / (N - 1)`.
pub fn check_interiority<T: Real>(p: &QualityVector<T>) -> bool {
    let n = p.len();
    p.values()[n - 1] > -p.offset()
}

/// Affine interior equilibrium for any number of children.
pub fn equilibrium_general<T: Real>(p: &QualityVector<T>) -> Result<EquilibriumSolution<T>> {
    let c = p.offset();
    let one = T::one();
    if one + c == T::zero() {
        return Err(Error::Degenerate("all qualities equal 1 (1 + c = 0)".into()));
    }
    let (alpha, eq_cost) = if p.len() == 2 {
        let (p1, p2) = (p.values()[0], p.values()[1]);
        let alpha = (one - p1) + (one - p2);
        let w1 = (p1 + c) / (one + c);
        (Some(alpha), Some((p1 - p2) * (one - w1)))
    } else {
        (None, None)
    };
    if !check_interiority(p) {
        return Ok(EquilibriumSolution { w_star: None, c, interior: false, alpha, eq_cost });
    }
    let w: Vec<T> = p.values().iter().map(|&pi| (pi + c) / (one + c)).collect();
    Ok(EquilibriumSolution {
        w_star: Some(PriceVector::from_weights(w)?),
        c,
        interior: true,
        alpha,
        eq_cost,
    })
}

/// `(c_eq, c_eq / p*)` for two children.
pub fn equilibrium_cost<T: Real>(p1: T, p2: T) -> Result<(T, T)> {
    let sol = equilibrium_n2(p1, p2)?;
    let cost = sol.eq_cost.expect("two-child solution carries its cost");
    let fraction = if p1 > T::zero() { cost / p1 } else { T::zero() };
    Ok((cost, fraction))
}

/// Exact per-round expected weight change at a state.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftVector<T>(Vec<T>);

impl<T: Real> DriftVector<T> {
    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn sum(&self) -> T {
        self.0.iter().fold(T::zero(), |a, &b| a + b)
    }

    pub fn max_abs(&self) -> T {
        self.0.iter().fold(T::zero(), |a, &b| a.max(b.abs()))
    }
}

/// Expected drift summed over the `2N` (selected child, outcome) events:
///
/// `d_i = eta [ w_i p_i (1 - w_i) - w_i^2 (1 - p_i)
///             + w_i sum_{j != i} w_j ( (1 - p_j) w_j / (1 - w_j) - p_j ) ]`
///
/// Undefined where some `w_j = 1`.
pub fn expected_drift<T: Real>(
    w: &PriceVector<T>,
    p: &QualityVector<T>,
    eta: &UpdateRate<T>,
) -> Result<DriftVector<T>> {
    drift_slice(w.weights(), p.values(), *eta.value()).map(DriftVector)
}

fn drift_slice<T: Real>(w: &[T], p: &[T], eta: T) -> Result<Vec<T>> {
    if w.len() != p.len() {
        return Err(Error::InvalidQualities(format!(
            "{} qualities for {} weights",
            p.len(),
            w.len()
        )));
    }
    let one = T::one();
    let mut cross = Vec::with_capacity(w.len());
    for (j, (&wj, &pj)) in w.iter().zip(p).enumerate() {
        if wj >= one {
            return Err(Error::Boundary(j));
        }
        cross.push(wj * ((one - pj) * wj / (one - wj) - pj));
    }
    let total = cross.iter().fold(T::zero(), |a, &b| a + b);
    Ok(w.iter()
        .zip(p)
        .zip(&cross)
        .map(|((&wi, &pi), &own)| {
            eta * (wi * pi * (one - wi) - wi * wi * (one - pi) + wi * (total - own))
        })
        .collect())
}

/// Sample mean of the one-step weight change and its standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftEstimate {
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
    pub samples: u64,
}

/// Estimates the drift by simulating `samples` independent rounds from `w`.
pub fn monte_carlo_drift<T: Real, R: Rng + ?Sized>(
    w: &PriceVector<T>,
    p: &QualityVector<T>,
    eta: &UpdateRate<T>,
    samples: u64,
    rng: &mut R,
) -> Result<DriftEstimate> {
    if samples == 0 {
        return Err(Error::NoSamples);
    }
    let n = w.len();
    if p.len() != n {
        return Err(Error::InvalidQualities(format!("{} qualities for {n} weights", p.len())));
    }
    let base = w.weights();
    let quality: Vec<f64> = p.values().iter().map(to_f64).collect();
    let mut scratch = base.to_vec();
    let mut sum = vec![0.0f64; n];
    let mut sum_sq = vec![0.0f64; n];
    for _ in 0..samples {
        scratch.copy_from_slice(base);
        let selected = sample_child(base, rng.random(), 0.0);
        let outcome = BinarySignal::from_bit(rng.random::<f64>() < quality[selected]);
        redistribute(&mut scratch, selected, outcome, eta)?;
        for j in 0..n {
            let d = to_f64(&(scratch[j] - base[j]));
            sum[j] += d;
            sum_sq[j] += d * d;
        }
    }
    let m = samples as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let std_err = sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, mu)| {
            let var = if samples > 1 { ((sq - m * mu * mu) / (m - 1.0)).max(0.0) } else { 0.0 };
            (var / m).sqrt()
        })
        .collect();
    Ok(DriftEstimate { mean, std_err, samples })
}

/// Square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianMatrix<T> {
    n: usize,
    entries: Vec<T>,
}

impl<T: Real> JacobianMatrix<T> {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.entries[row * self.n + col]
    }

    pub fn column_sums(&self) -> Vec<T> {
        (0..self.n)
            .map(|j| (0..self.n).fold(T::zero(), |a, i| a + self.get(i, j)))
            .collect()
    }

    /// `J v`.
    pub fn apply(&self, v: &[T]) -> Vec<T> {
        (0..self.n)
            .map(|i| (0..self.n).fold(T::zero(), |a, j| a + self.get(i, j) * v[j]))
            .collect()
    }
}

/// Linearisation of the drift at the interior equilibrium:
/// `J_ii = -eta w*_i`, `J_ij = eta w*_i R_j` with
/// `R_j = (c^2 + 2c + p_j) / (1 - p_j)`.
pub fn jacobian<T: Real>(p: &QualityVector<T>, eta: &UpdateRate<T>) -> Result<JacobianMatrix<T>> {
    let sol = equilibrium_general(p)?;
    let w_star = match (&sol.w_star, sol.interior) {
        (Some(w), true) => w.weights().to_vec(),
        _ => return Err(Error::NotInterior),
    };
    let n = p.len();
    let (c, eta) = (sol.c, *eta.value());
    let one = T::one();
    let r: Vec<T> = p.values().iter().map(|&pj| (c * c + (one + one) * c + pj) / (one - pj)).collect();
    let mut entries = Vec::with_capacity(n * n);
    for (i, &wi) in w_star.iter().enumerate() {
        for (j, &rj) in r.iter().enumerate() {
            entries.push(if i == j { -eta * wi } else { eta * wi * rj });
        }
    }
    Ok(JacobianMatrix { n, entries })
}

/// Step size used when none is given: `0.1 / eta`.
pub fn default_ode_step(eta: f64) -> f64 {
    0.1 / eta
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeFlow<T> {
    /// Downsampled states, first and last included.
    pub trajectory: Vec<Vec<T>>,
    pub final_state: Vec<T>,
    pub target: Vec<T>,
    pub steps: usize,
    pub converged: bool,
}

/// Forward-Euler integration of `dw/dt = drift(w)` towards the interior
/// equilibrium. Stops once `‖w - w*‖∞ <= 1e-6` or after `max_steps`.
pub fn ode_flow<T: Real>(
    w0: &PriceVector<T>,
    p: &QualityVector<T>,
    eta: &UpdateRate<T>,
    step: T,
    max_steps: usize,
) -> Result<OdeFlow<T>> {
    let sol = equilibrium_general(p)?;
    let target = match (sol.w_star, sol.interior) {
        (Some(w), true) => w.weights().to_vec(),
        _ => return Err(Error::NotInterior),
    };
    if w0.len() != p.len() {
        return Err(Error::InvalidQualities(format!("{} qualities for {} weights", p.len(), w0.len())));
    }
    let tol = lit::<T>(ODE_CONVERGENCE);
    let simplex_tol = lit::<T>(ODE_SIMPLEX_TOLERANCE).max(T::epsilon() * lit(64.0));
    let stride = (max_steps / 1000).max(1);
    let distance = |w: &[T]| w.iter().zip(&target).fold(T::zero(), |a, (&x, &y)| a.max((x - y).abs()));

    let mut w = w0.weights().to_vec();
    let mut trajectory = vec![w.clone()];
    let mut steps = 0;
    let mut converged = distance(&w) <= tol;
    while !converged && steps < max_steps {
        let d = drift_slice(&w, p.values(), *eta.value())?;
        for (x, dx) in w.iter_mut().zip(&d) {
            *x = *x + step * *dx;
        }
        steps += 1;
        let sum = w.iter().fold(T::zero(), |a, &b| a + b);
        let off = (sum - T::one()).abs();
        if off > simplex_tol || w.iter().any(|&x| x <= T::zero() || x >= T::one()) {
            return Err(Error::Integration(to_f64(&off)));
        }
        converged = distance(&w) <= tol;
        if steps % stride == 0 {
            trajectory.push(w.clone());
        }
    }
    if trajectory.last() != Some(&w) {
        trajectory.push(w.clone());
    }
    Ok(OdeFlow { trajectory, final_state: w, target, steps, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn qv(p: &[f64]) -> QualityVector<f64> {
        QualityVector::new(p.to_vec()).unwrap()
    }

    fn rate(e: f64) -> UpdateRate<f64> {
        UpdateRate::from_f64(e).unwrap()
    }

    fn pv(w: &[f64]) -> PriceVector<f64> {
        PriceVector::from_weights(w.to_vec()).unwrap()
    }

    #[test]
    fn two_child_examples() {
        let s = equilibrium_n2(0.9f64, 0.6).unwrap();
        let w = s.w_star.unwrap();
        assert!((w.weights()[0] - 0.8).abs() < 1e-12);
        assert!((s.alpha.unwrap() - 0.5).abs() < 1e-12);
        assert!((s.eq_cost.unwrap() - 0.06).abs() < 1e-12);
        assert!(s.interior);

        let s = equilibrium_n2(1.0, 0.0).unwrap();
        assert_eq!(s.w_star.unwrap().weights()[0], 1.0);
        assert!(!s.interior);

        assert!(matches!(equilibrium_n2(0.8, 0.8), Err(Error::NoGap(_))));
        assert!(matches!(equilibrium_n2(1.0, 1.0), Err(Error::Degenerate(_))));
        assert!(equilibrium_n2(0.6, 0.9).is_err());
    }

    #[test]
    fn interiority_examples() {
        assert!(check_interiority(&qv(&[0.8, 0.7, 0.6])));
        assert!(!check_interiority(&qv(&[0.9, 0.6, 0.3])));
        for (a, b) in [(0.9, 0.6), (0.5, 0.0), (0.99, 0.01), (0.3, 0.2)] {
            assert!(check_interiority(&qv(&[a, b])));
        }
    }

    #[test]
    fn general_examples() {
        let s = equilibrium_general(&qv(&[0.8, 0.7, 0.6])).unwrap();
        assert!((s.c + 0.55).abs() < 1e-12);
        let w = s.w_star.unwrap();
        for (x, y) in w.weights().iter().zip([5.0 / 9.0, 1.0 / 3.0, 1.0 / 9.0]) {
            assert!((x - y).abs() < 1e-12);
        }
        let d = expected_drift(&w, &qv(&[0.8, 0.7, 0.6]), &rate(0.3)).unwrap();
        assert!(d.max_abs() < 1e-12);

        let s = equilibrium_general(&qv(&[0.9, 0.6])).unwrap();
        assert!((s.w_star.unwrap().weights()[0] - 0.8).abs() < 1e-12);

        let s = equilibrium_general(&qv(&[0.9, 0.6, 0.3])).unwrap();
        assert!(!s.interior && s.w_star.is_none());

        assert!(matches!(equilibrium_general(&qv(&[1.0, 1.0, 1.0])), Err(Error::Degenerate(_))));
    }

    #[test]
    fn quality_vector_validation() {
        assert!(QualityVector::new(vec![0.5]).is_err());
        assert!(QualityVector::new(vec![0.5, 0.7]).is_err());
        assert!(QualityVector::new(vec![1.2, 0.7]).is_err());
        assert!(QualityVector::new(vec![f64::NAN, 0.7]).is_err());
        assert_eq!(QualityVector::sorted(vec![0.5, 0.7]).unwrap().values(), &[0.7, 0.5]);
    }

    #[test]
    fn drift_examples() {
        let p = qv(&[0.9, 0.6]);
        let d = expected_drift(&pv(&[0.8, 0.2]), &p, &rate(0.1)).unwrap();
        assert!(d.values()[0].abs() < 1e-15);
        let d = expected_drift(&pv(&[0.5, 0.5]), &p, &rate(0.1)).unwrap();
        assert!((d.values()[0] - 0.015).abs() < 1e-15);
        assert!(d.sum().abs() < 1e-15);
        assert!(matches!(
            expected_drift(&pv(&[1.0, 0.0]), &p, &rate(0.1)),
            Err(Error::Boundary(0))
        ));
    }

    #[test]
    fn two_child_drift_is_affine() {
        let (p1, p2, eta) = (0.85, 0.35, 0.07);
        let p = qv(&[p1, p2]);
        let alpha = 2.0 - p1 - p2;
        let w_star = (1.0 - p2) / alpha;
        for k in 1..100 {
            let w1 = k as f64 / 100.0;
            let d = expected_drift(&pv(&[w1, 1.0 - w1]), &p, &rate(eta)).unwrap();
            assert!((d.values()[0] - eta * alpha * (w_star - w1)).abs() < 1e-14);
        }
    }

    #[test]
    fn monte_carlo_matches_hand_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let est = monte_carlo_drift(&pv(&[0.5, 0.5]), &qv(&[0.9, 0.6]), &rate(0.1), 200_000, &mut rng).unwrap();
        assert!((est.mean[0] - 0.015).abs() < 4.0 * est.std_err[0]);

        let est = monte_carlo_drift(&pv(&[0.5, 0.5]), &qv(&[0.5, 0.5]), &rate(0.1), 200_000, &mut rng).unwrap();
        assert!(est.mean[0].abs() < 4.0 * est.std_err[0]);

        assert!(matches!(
            monte_carlo_drift(&pv(&[0.5, 0.5]), &qv(&[0.5, 0.5]), &rate(0.1), 0, &mut rng),
            Err(Error::NoSamples)
        ));
    }

    #[test]
    fn jacobian_tangent_slope() {
        let j = jacobian(&qv(&[0.9, 0.6]), &rate(0.1)).unwrap();
        let v = j.apply(&[1.0, -1.0]);
        assert!((v[0] + 0.05).abs() < 1e-12, "{v:?}");
        assert!((v[0] + v[1]).abs() < 1e-12);
        assert!(matches!(jacobian(&qv(&[0.9, 0.6, 0.3]), &rate(0.1)), Err(Error::NotInterior)));
    }

    #[test]
    fn ode_examples() {
        let p = qv(&[0.9, 0.6]);
        let eta = rate(0.1);
        let flow = ode_flow(&pv(&[0.5, 0.5]), &p, &eta, default_ode_step(0.1), 100_000).unwrap();
        assert!(flow.converged);
        assert!((flow.final_state[0] - 0.8).abs() <= 1e-6);

        let flow = ode_flow(&pv(&[0.8, 0.2]), &p, &eta, 1.0, 10).unwrap();
        assert!(flow.converged);
        assert_eq!(flow.steps, 0);

        // a wildly oversized step throws the state off the simplex interior
        let err = ode_flow(&pv(&[0.5, 0.5]), &p, &eta, 1e4, 10).unwrap_err();
        assert!(matches!(err, Error::Integration(_) | Error::Boundary(_)));
    }

    #[test]
    fn equilibrium_cost_examples() {
        let (c, f) = equilibrium_cost(0.9f64, 0.6).unwrap();
        assert!((c - 0.06).abs() < 1e-12);
        assert!((f - 0.06 / 0.9).abs() < 1e-12);
        assert_eq!(equilibrium_cost(1.0, 0.4).unwrap().0, 0.0);
        let (c, f) = equilibrium_cost(0.95f64, 0.65).unwrap();
        assert!((c - 0.0375).abs() < 1e-12);
        assert!((f - 0.0375 / 0.95).abs() < 1e-12);
    }

    #[test]
    fn single_precision_instantiation() {
        let s = equilibrium_general(&QualityVector::new(vec![0.8f32, 0.7, 0.6]).unwrap()).unwrap();
        let w = s.w_star.unwrap();
        assert!((w.weights()[0] - 5.0 / 9.0).abs() < 1e-6);
    }
}
