//! Combination weights for the combine step.
//!
//! Two rules are provided:
//!
//! * the constant rule, `a_lk = D_l / sum_j D_j`, and
//! * the adaptive rule, which compares each neighbour's local gradient
//!   direction with a neighbourhood aggregate gradient, smooths the angle
//!   over rounds, and maps it through a Gompertz curve before normalising.
//!
//! All functions take the neighbour list explicitly, so the same code
//! serves diffusion (self-inclusive `N_k`) and consensus (self-exclusive)
//! neighbourhoods.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use thiserror::Error;

use crate::model::ParamVector;
use crate::AgentId;

/// Norm below which a vector is treated as zero when forming angles.
pub const ZERO_NORM: f64 = 1e-15;

#[derive(Debug, Error, PartialEq)]
pub enum RuleError {
    #[error("empty neighbourhood")]
    EmptyNeighborhood,
    #[error("agent {0} has a non-positive dataset size")]
    NonpositiveSize(AgentId),
    #[error("agent {0} has a non-positive step size")]
    NonpositiveStepSize(AgentId),
    #[error("no entry for agent {0}")]
    KeyMismatch(AgentId),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("Gompertz scale must be positive and finite, got {0}")]
    InvalidScale(f64),
}

/// Convex combination weights keyed by neighbour id, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    entries: Vec<(AgentId, f64)>,
}

impl WeightVector {
    fn normalized(ids: &[AgentId], raw: Vec<f64>) -> Self {
        let total: f64 = raw.iter().sum();
        let mut entries: Vec<(AgentId, f64)> =
            ids.iter().copied().zip(raw.into_iter().map(|r| r / total)).collect();
        entries.sort_by_key(|&(id, _)| id);
        Self { entries }
    }

    /// Builds a weight vector from explicit entries (sorted by id here).
    pub fn from_entries(mut entries: Vec<(AgentId, f64)>) -> Self {
        entries.sort_by_key(|&(id, _)| id);
        Self { entries }
    }

    pub fn entries(&self) -> &[(AgentId, f64)] {
        &self.entries
    }

    pub fn get(&self, id: AgentId) -> Option<f64> {
        self.entries
            .binary_search_by_key(&id, |&(k, _)| k)
            .ok()
            .map(|i| self.entries[i].1)
    }

    pub fn ids(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.entries.iter().map(|&(id, _)| id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().map(|&(_, a)| a).sum()
    }
}

fn size_of(shard_sizes: &[usize], id: AgentId) -> Result<f64, RuleError> {
    match shard_sizes.get(id) {
        None => Err(RuleError::KeyMismatch(id)),
        Some(0) => Err(RuleError::NonpositiveSize(id)),
        Some(&d) => Ok(d as f64),
    }
}

/// `a_lk = D_l / sum_{j in neighbors} D_j`. `shard_sizes` is indexed by
/// agent id.
pub fn constant_weights(neighbors: &[AgentId], shard_sizes: &[usize]) -> Result<WeightVector, RuleError> {
    if neighbors.is_empty() {
        return Err(RuleError::EmptyNeighborhood);
    }
    let raw = neighbors
        .iter()
        .map(|&l| size_of(shard_sizes, l))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(WeightVector::normalized(neighbors, raw))
}

/// Neighbourhood estimate of the global gradient:
/// `-sum_l a_lk * delta_l / mu_l`, summed in ascending id order.
pub fn neighborhood_gradient(
    deltas: &BTreeMap<AgentId, &ParamVector>,
    step_sizes: &BTreeMap<AgentId, f64>,
    base_weights: &WeightVector,
) -> Result<ParamVector, RuleError> {
    let mut out: Option<ParamVector> = None;
    for &(l, a) in base_weights.entries() {
        let delta = *deltas.get(&l).ok_or(RuleError::KeyMismatch(l))?;
        let mu = *step_sizes.get(&l).ok_or(RuleError::KeyMismatch(l))?;
        if mu.is_nan() || mu <= 0.0 {
            return Err(RuleError::NonpositiveStepSize(l));
        }
        let acc = out.get_or_insert_with(|| ParamVector::zeros(delta.len()));
        acc.axpy(-a / mu, delta).map_err(|_| RuleError::DimensionMismatch {
            expected: acc.len(),
            found: delta.len(),
        })?;
    }
    out.ok_or(RuleError::EmptyNeighborhood)
}

/// Angle in radians between the local gradient direction `-delta_l` and
/// `global_grad`. Returns `pi/2` when either vector is (numerically) zero.
pub fn gradient_angle(delta_l: &ParamVector, global_grad: &ParamVector) -> Result<f64, RuleError> {
    if delta_l.len() != global_grad.len() {
        return Err(RuleError::DimensionMismatch {
            expected: global_grad.len(),
            found: delta_l.len(),
        });
    }
    let (nd, ng) = (delta_l.norm(), global_grad.norm());
    if nd < ZERO_NORM || ng < ZERO_NORM {
        return Ok(FRAC_PI_2);
    }
    // arccos(u.v) for unit u = -delta/|delta|, v = g/|g|, evaluated as
    // 2 atan2(|u - v|, |u + v|): acos loses half the digits near 0 and pi
    let (mut diff, mut sum) = (0.0, 0.0);
    for (d, g) in delta_l.as_slice().iter().zip(global_grad.as_slice()) {
        let (u, v) = (-d / nd, g / ng);
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    Ok(2.0 * diff.sqrt().atan2(sum.sqrt()))
}

/// Running mean of each neighbour's raw angle.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AngleState {
    smoothed: BTreeMap<AgentId, f64>,
    round: u64,
}

impl AngleState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn smoothed(&self) -> &BTreeMap<AgentId, f64> {
        &self.smoothed
    }

    /// Advances the round counter `t` by one and folds in the raw angles:
    /// `s(t) = (t-1)/t * s(t-1) + theta(t)/t`. Every tracked neighbour must
    /// be present; a neighbour seen for the first time starts at its raw
    /// angle.
    pub fn update(&self, raw_angles: &BTreeMap<AgentId, f64>) -> Result<AngleState, RuleError> {
        if let Some(&missing) = self.smoothed.keys().find(|k| !raw_angles.contains_key(k)) {
            return Err(RuleError::KeyMismatch(missing));
        }
        let t = (self.round + 1) as f64;
        let smoothed = raw_angles
            .iter()
            .map(|(&l, &theta)| {
                let s = match self.smoothed.get(&l) {
                    Some(&prev) => (t - 1.0) / t * prev + theta / t,
                    None => theta,
                };
                (l, s)
            })
            .collect();
        Ok(AngleState {
            smoothed,
            round: self.round + 1,
        })
    }
}

/// `f(x) = a (1 - exp(-exp(-a (x - 1))))`: decreasing, with range `(0, a)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gompertz {
    a: f64,
}

impl Gompertz {
    pub fn new(a: f64) -> Result<Self, RuleError> {
        if a > 0.0 && a.is_finite() {
            Ok(Self { a })
        } else {
            Err(RuleError::InvalidScale(a))
        }
    }

    pub fn scale(&self) -> f64 {
        self.a
    }

    pub fn eval(&self, x: f64) -> f64 {
        let a = self.a;
        // exp_m1 keeps precision when exp(-a(x-1)) is tiny
        -a * (-(-a * (x - 1.0)).exp()).exp_m1()
    }
}

/// `a_lk = D_l e^{f(s_l)} / sum_j D_j e^{f(s_j)}` over the smoothed angles.
pub fn adaptive_weights(
    neighbors: &[AgentId],
    shard_sizes: &[usize],
    smoothed_angles: &BTreeMap<AgentId, f64>,
    gompertz: Gompertz,
) -> Result<WeightVector, RuleError> {
    if neighbors.is_empty() {
        return Err(RuleError::EmptyNeighborhood);
    }
    let exponents = neighbors
        .iter()
        .map(|l| {
            smoothed_angles
                .get(l)
                .map(|&s| gompertz.eval(s))
                .ok_or(RuleError::KeyMismatch(*l))
        })
        .collect::<Result<Vec<_>, _>>()?;
    // f is bounded by a, but shift anyway so large scales cannot overflow
    let shift = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw = neighbors
        .iter()
        .zip(&exponents)
        .map(|(&l, &e)| Ok(size_of(shard_sizes, l)? * (e - shift).exp()))
        .collect::<Result<Vec<_>, RuleError>>()?;
    Ok(WeightVector::normalized(neighbors, raw))
}

/// `sum_l a_lk psi_l`, accumulated in ascending neighbour order.
pub fn combine(models: &BTreeMap<AgentId, &ParamVector>, weights: &WeightVector) -> Result<ParamVector, RuleError> {
    if let Some(extra) = models.keys().find(|k| weights.get(**k).is_none()) {
        return Err(RuleError::KeyMismatch(*extra));
    }
    let mut out: Option<ParamVector> = None;
    for &(l, a) in weights.entries() {
        let psi = *models.get(&l).ok_or(RuleError::KeyMismatch(l))?;
        let acc = out.get_or_insert_with(|| ParamVector::zeros(psi.len()));
        acc.axpy(a, psi).map_err(|_| RuleError::DimensionMismatch {
            expected: acc.len(),
            found: psi.len(),
        })?;
    }
    out.ok_or(RuleError::EmptyNeighborhood)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::from_vec(v.to_vec())
    }

    #[test]
    fn constant_rule_examples() {
        let w = constant_weights(&[0, 1, 2], &[600, 600, 600]).unwrap();
        for &(_, a) in w.entries() {
            assert_relative_eq!(a, 1.0 / 3.0);
        }
        let w = constant_weights(&[0, 1], &[100, 300]).unwrap();
        assert_eq!(w.get(0), Some(0.25));
        assert_eq!(w.get(1), Some(0.75));
        assert_eq!(constant_weights(&[4], &[1, 1, 1, 1, 7]).unwrap().entries(), &[(4, 1.0)]);
        assert_eq!(constant_weights(&[], &[1]), Err(RuleError::EmptyNeighborhood));
        assert_eq!(constant_weights(&[0, 1], &[5, 0]), Err(RuleError::NonpositiveSize(1)));
        assert_eq!(constant_weights(&[0, 3], &[5, 1]), Err(RuleError::KeyMismatch(3)));
    }

    #[test]
    fn neighborhood_gradient_examples() {
        let d = pv(&[0.2, -0.4]);
        let deltas = BTreeMap::from([(0, &d)]);
        let mus = BTreeMap::from([(0, 0.01)]);
        let g = neighborhood_gradient(&deltas, &mus, &constant_weights(&[0], &[10]).unwrap()).unwrap();
        assert_relative_eq!(g.as_slice()[0], -20.0, epsilon = 1e-12);
        assert_relative_eq!(g.as_slice()[1], 40.0, epsilon = 1e-12);

        let zero = pv(&[0.0, 0.0]);
        let deltas = BTreeMap::from([(0, &zero), (1, &zero)]);
        let mus = BTreeMap::from([(0, 0.1), (1, 0.2)]);
        let base = constant_weights(&[0, 1], &[3, 4]).unwrap();
        assert_eq!(neighborhood_gradient(&deltas, &mus, &base).unwrap(), zero);

        let u = pv(&[1.0, 2.0]);
        let neg = u.scaled(-1.0);
        let deltas = BTreeMap::from([(0, &u), (1, &neg)]);
        let mus = BTreeMap::from([(0, 0.1), (1, 0.1)]);
        let base = constant_weights(&[0, 1], &[5, 5]).unwrap();
        assert_eq!(neighborhood_gradient(&deltas, &mus, &base).unwrap(), zero);

        let bad_mu = BTreeMap::from([(0, 0.1), (1, 0.0)]);
        assert_eq!(
            neighborhood_gradient(&deltas, &bad_mu, &base),
            Err(RuleError::NonpositiveStepSize(1))
        );
        let short = BTreeMap::from([(0, &u)]);
        assert_eq!(
            neighborhood_gradient(&short, &mus, &base),
            Err(RuleError::KeyMismatch(1))
        );
    }

    #[test]
    fn angle_examples() {
        let g = pv(&[1.0, -2.0, 0.5]);
        assert_relative_eq!(gradient_angle(&g.scaled(-1.0), &g).unwrap(), 0.0, epsilon = 1e-7);
        assert_relative_eq!(gradient_angle(&g, &g).unwrap(), PI, epsilon = 1e-7);
        let orth = pv(&[2.0, 1.0, 0.0]);
        assert_relative_eq!(gradient_angle(&orth, &g).unwrap(), FRAC_PI_2, epsilon = 1e-12);
        assert_eq!(gradient_angle(&ParamVector::zeros(3), &g).unwrap(), FRAC_PI_2);
        assert_eq!(gradient_angle(&g, &ParamVector::zeros(3)).unwrap(), FRAC_PI_2);
        assert!(matches!(
            gradient_angle(&pv(&[1.0]), &g),
            Err(RuleError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn smoothing_examples() {
        let s1 = AngleState::new().update(&BTreeMap::from([(0, 0.4)])).unwrap();
        assert_eq!(s1.round(), 1);
        assert_eq!(s1.smoothed()[&0], 0.4);
        let s2 = s1.update(&BTreeMap::from([(0, 0.8)])).unwrap();
        assert_relative_eq!(s2.smoothed()[&0], 0.6, epsilon = 1e-15);
        let mut s = AngleState::new();
        for _ in 0..50 {
            s = s.update(&BTreeMap::from([(3, 1.25)])).unwrap();
        }
        assert_relative_eq!(s.smoothed()[&3], 1.25, epsilon = 1e-14);
        assert_eq!(
            s.update(&BTreeMap::from([(4, 0.1)])),
            Err(RuleError::KeyMismatch(3))
        );
    }

    #[test]
    fn gompertz_values() {
        let f = Gompertz::new(5.0).unwrap();
        assert_relative_eq!(f.eval(1.0), 5.0 * (1.0 - (-1.0f64).exp()), epsilon = 1e-12);
        assert_relative_eq!(f.eval(1.0), 3.160602794, epsilon = 1e-9);
        assert!(f.eval(50.0) < 1e-30);
        assert_relative_eq!(f.eval(-50.0), 5.0, epsilon = 1e-12);
        assert!(f.eval(0.0) > f.eval(0.5));
        assert!(Gompertz::new(0.0).is_err());
        assert!(Gompertz::new(f64::NAN).is_err());
    }

    #[test]
    fn adaptive_examples() {
        let f = Gompertz::new(5.0).unwrap();
        let equal = BTreeMap::from([(0, 0.7), (1, 0.7), (2, 0.7)]);
        let w = adaptive_weights(&[0, 1, 2], &[600; 3], &equal, f).unwrap();
        for &(_, a) in w.entries() {
            assert_relative_eq!(a, 1.0 / 3.0, epsilon = 1e-15);
        }

        let angles = BTreeMap::from([(0, 0.0), (1, PI)]);
        let w = adaptive_weights(&[0, 1], &[600, 600], &angles, f).unwrap();
        let (e0, epi) = (f.eval(0.0).exp(), f.eval(PI).exp());
        assert_relative_eq!(w.get(0).unwrap(), e0 / (e0 + epi), epsilon = 1e-12);
        assert!(w.get(0).unwrap() > 0.5);

        let single = adaptive_weights(&[2], &[1, 1, 9], &BTreeMap::from([(2, 2.0)]), f).unwrap();
        assert_eq!(single.entries(), &[(2, 1.0)]);
        assert_eq!(
            adaptive_weights(&[0, 1], &[1, 1], &BTreeMap::from([(0, 1.0)]), f),
            Err(RuleError::KeyMismatch(1))
        );
    }

    #[test]
    fn combine_examples() {
        let u = pv(&[1.0, 2.0]);
        let v = pv(&[3.0, -2.0]);
        let only = WeightVector::from_entries(vec![(1, 1.0)]);
        assert_eq!(combine(&BTreeMap::from([(1, &u)]), &only).unwrap(), u);
        let w = WeightVector::from_entries(vec![(0, 0.3), (1, 0.7)]);
        let same = combine(&BTreeMap::from([(0, &u), (1, &u)]), &w).unwrap();
        for (a, b) in same.as_slice().iter().zip(u.as_slice()) {
            assert_relative_eq!(a, b, epsilon = 1e-15);
        }
        let half = WeightVector::from_entries(vec![(0, 0.5), (1, 0.5)]);
        assert_eq!(combine(&BTreeMap::from([(0, &u), (1, &v)]), &half).unwrap(), pv(&[2.0, 0.0]));
        assert_eq!(
            combine(&BTreeMap::from([(0, &u)]), &half),
            Err(RuleError::KeyMismatch(1))
        );
        assert_eq!(
            combine(&BTreeMap::from([(0, &u), (1, &v), (2, &v)]), &half),
            Err(RuleError::KeyMismatch(2))
        );
        let short = pv(&[1.0]);
        assert!(matches!(
            combine(&BTreeMap::from([(0, &u), (1, &short)]), &half),
            Err(RuleError::DimensionMismatch { .. })
        ));
    }
}
