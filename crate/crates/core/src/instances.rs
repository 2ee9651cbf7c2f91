//! Problem inputs: single-unit and knapsack CRS instances, rationing instances,
//! the two arrival orders, quantile coupling and instance transforms.
//!
//! Every constructor validates and rejects; nothing is renormalized. Element
//! indices are 0-based throughout the library.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{compensated_sum, KahanSum, PROB_TOL};

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("instance must contain at least one element")]
    Empty,
    #[error("element {index}: probability {value} outside [0, 1]")]
    ProbabilityOutOfRange { index: usize, value: f64 },
    #[error("non-finite value {value} at element {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("probability mass sums to {total}, expected 1")]
    MassNotOne { total: f64 },
    #[error("atom {atom} has non-positive probability {prob}")]
    NonPositiveAtom { atom: usize, prob: f64 },
    #[error("atom value {value} outside its domain")]
    AtomOutOfRange { value: f64 },
    #[error("atoms must be sorted by value and distinct")]
    AtomsNotSorted,
    #[error("element {index} has non-positive mean")]
    NonPositiveMean { index: usize },
    #[error("index {index} out of range for {n} elements")]
    InvalidIndex { index: usize, n: usize },
    #[error("hardness instance needs n >= 2 (atom size 1/2 + 1/n must be <= 1), got {n}")]
    HardnessTooSmall { n: usize },
    #[error("declared n = {declared} but {actual} entries were given")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("malformed instance JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// The two arrival orders of the forward-backward model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    Forward,
    Backward,
}

impl Order {
    pub const BOTH: [Order; 2] = [Order::Forward, Order::Backward];

    /// 0-based arrival position of element `i` among `n` elements.
    pub fn position(self, i: usize, n: usize) -> usize {
        match self {
            Order::Forward => i,
            Order::Backward => n - 1 - i,
        }
    }

    /// Element arriving at 0-based time `t`. The map is an involution.
    pub fn element_at(self, t: usize, n: usize) -> usize {
        self.position(t, n)
    }

    /// Whether `j` arrives strictly before `i`.
    pub fn precedes(self, j: usize, i: usize, n: usize) -> bool {
        self.position(j, n) < self.position(i, n)
    }

    /// Elements in arrival order.
    pub fn sequence(self, n: usize) -> impl DoubleEndedIterator<Item = usize> + ExactSizeIterator {
        (0..n).map(move |t| self.element_at(t, n))
    }

    /// The element that arrives first.
    pub fn first(self, n: usize) -> usize {
        self.element_at(0, n)
    }

    pub fn index(self) -> usize {
        match self {
            Order::Forward => 0,
            Order::Backward => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Order::Forward => "f",
            Order::Backward => "b",
        }
    }
}

fn check_prob(index: usize, value: f64) -> Result<(), InstanceError> {
    if !value.is_finite() {
        return Err(InstanceError::NonFinite { index, value });
    }
    if !(0.0..=1.0).contains(&value) {
        return Err(InstanceError::ProbabilityOutOfRange { index, value });
    }
    Ok(())
}

/// Single-unit input: element `i` is active (size 1) with probability `x[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleUnitInstance {
    x: Vec<f64>,
    rho: f64,
}

impl SingleUnitInstance {
    pub fn new(x: Vec<f64>) -> Result<Self, InstanceError> {
        if x.is_empty() {
            return Err(InstanceError::Empty);
        }
        for (i, &v) in x.iter().enumerate() {
            check_prob(i, v)?;
        }
        let rho = compensated_sum(x.iter().copied());
        Ok(Self { x, rho })
    }

    /// `n` elements of mass `rho / n` each.
    pub fn uniform(n: usize, rho: f64) -> Result<Self, InstanceError> {
        if n == 0 {
            return Err(InstanceError::Empty);
        }
        Self::new(vec![rho / n as f64; n])
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    /// Total activeness mass.
    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// The mirrored instance (element `i` becomes `n - 1 - i`).
    pub fn reversed(&self) -> Self {
        let mut x = self.x.clone();
        x.reverse();
        Self { x, rho: self.rho }
    }

    /// Mass arriving strictly before element `i` under `order`, for every `i`.
    pub fn prefix_masses(&self, order: Order) -> Vec<f64> {
        let n = self.n();
        let mut out = vec![0.0; n];
        let mut acc = KahanSum::new();
        for i in order.sequence(n) {
            out[i] = acc.value();
            acc.add(self.x[i]);
        }
        out
    }
}

/// Splits element `k` into two adjacent halves of mass `x[k] / 2`; every
/// other element keeps its mass and relative position.
pub fn split_element(inst: &SingleUnitInstance, k: usize) -> Result<SingleUnitInstance, InstanceError> {
    let n = inst.n();
    if k >= n {
        return Err(InstanceError::InvalidIndex { index: k, n });
    }
    let half = inst.x[k] / 2.0;
    let mut x = Vec::with_capacity(n + 1);
    x.extend_from_slice(&inst.x[..k]);
    x.push(half);
    x.push(half);
    x.extend_from_slice(&inst.x[k + 1..]);
    SingleUnitInstance::new(x)
}

/// Law of an element's size on `[0, 1]` plus the inactive symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeLaw {
    atoms: Vec<(f64, f64)>,
    inactive: f64,
    mean: f64,
}

impl SizeLaw {
    pub fn new(atoms: Vec<(f64, f64)>, inactive: f64) -> Result<Self, InstanceError> {
        check_prob(0, inactive)?;
        for (k, &(s, p)) in atoms.iter().enumerate() {
            if !s.is_finite() || !(0.0..=1.0).contains(&s) {
                return Err(InstanceError::AtomOutOfRange { value: s });
            }
            if !p.is_finite() || p <= 0.0 {
                return Err(InstanceError::NonPositiveAtom { atom: k, prob: p });
            }
        }
        if atoms.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(InstanceError::AtomsNotSorted);
        }
        let total = compensated_sum(atoms.iter().map(|a| a.1).chain(std::iter::once(inactive)));
        if (total - 1.0).abs() > PROB_TOL {
            return Err(InstanceError::MassNotOne { total });
        }
        let mean = compensated_sum(atoms.iter().map(|&(s, p)| s * p));
        Ok(Self { atoms, inactive, mean })
    }

    /// Deterministic size `size` when active, active with probability `prob`.
    pub fn point(size: f64, prob: f64) -> Result<Self, InstanceError> {
        if prob == 0.0 {
            return Self::new(Vec::new(), 1.0);
        }
        Self::new(vec![(size, prob)], 1.0 - prob)
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn inactive_mass(&self) -> f64 {
        self.inactive
    }

    pub fn active_mass(&self) -> f64 {
        compensated_sum(self.atoms.iter().map(|a| a.1))
    }

    /// `E[S * 1(S < inf)]`.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Draws a size; `None` is the inactive symbol.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for &(s, p) in &self.atoms {
            acc += p;
            if u < acc {
                return Some(s);
            }
        }
        None
    }

    /// Index of the drawn atom instead of its value.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<usize> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, &(_, p)) in self.atoms.iter().enumerate() {
            acc += p;
            if u < acc {
                return Some(k);
            }
        }
        None
    }
}

/// Knapsack input. `mu[i] = 0` is tolerated (see [`KnapsackInstance::has_zero_mean`]).
#[derive(Debug, Clone, PartialEq)]
pub struct KnapsackInstance {
    laws: Vec<SizeLaw>,
    mu: Vec<f64>,
}

impl KnapsackInstance {
    pub fn new(laws: Vec<SizeLaw>) -> Result<Self, InstanceError> {
        if laws.is_empty() {
            return Err(InstanceError::Empty);
        }
        let mu = laws.iter().map(SizeLaw::mean).collect();
        Ok(Self { laws, mu })
    }

    /// Like [`KnapsackInstance::new`] but enforces `mu[i] > 0` for every element.
    pub fn new_strict(laws: Vec<SizeLaw>) -> Result<Self, InstanceError> {
        let inst = Self::new(laws)?;
        if let Some(index) = inst.mu.iter().position(|&m| m <= 0.0) {
            return Err(InstanceError::NonPositiveMean { index });
        }
        Ok(inst)
    }

    /// `n` identical elements of deterministic size `size`, active w.p. `prob`.
    pub fn uniform_point(n: usize, size: f64, prob: f64) -> Result<Self, InstanceError> {
        let law = SizeLaw::point(size, prob)?;
        Self::new(vec![law; n])
    }

    pub fn n(&self) -> usize {
        self.laws.len()
    }

    pub fn laws(&self) -> &[SizeLaw] {
        &self.laws
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn total_mean(&self) -> f64 {
        compensated_sum(self.mu.iter().copied())
    }

    pub fn has_zero_mean(&self) -> bool {
        self.mu.iter().any(|&m| m <= 0.0)
    }

    pub fn prefix_means(&self, order: Order) -> Vec<f64> {
        let n = self.n();
        let mut out = vec![0.0; n];
        let mut acc = KahanSum::new();
        for i in order.sequence(n) {
            out[i] = acc.value();
            acc.add(self.mu[i]);
        }
        out
    }
}

/// The paired instances on which no knapsack FB-CRS beats `1/(2 + e^-1)`
/// asymptotically: `2n + 1` elements of size `1/2 + 1/n`, each active with
/// probability `rho / (2n + 1)` where `rho = 2n / (n + 2)`, and the
/// single-unit twin with the same activeness.
pub fn knapsack_hardness_instance(n: usize) -> Result<(KnapsackInstance, SingleUnitInstance), InstanceError> {
    if n < 2 {
        return Err(InstanceError::HardnessTooSmall { n });
    }
    let nf = n as f64;
    let rho = 2.0 * nf / (nf + 2.0);
    let count = 2 * n + 1;
    let x = rho / count as f64;
    let size = 0.5 + 1.0 / nf;
    let law = SizeLaw::point(size, x)?;
    Ok((KnapsackInstance::new(vec![law; count])?, SingleUnitInstance::new(vec![x; count])?))
}

/// Finite-support demand law, sampled through the quantile coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandLaw {
    atoms: Vec<(f64, f64)>,
    /// `cum[k]` = probability of the atoms `0..=k`.
    cum: Vec<f64>,
    mean: f64,
}

impl DemandLaw {
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self, InstanceError> {
        if atoms.is_empty() {
            return Err(InstanceError::Empty);
        }
        for (k, &(d, p)) in atoms.iter().enumerate() {
            if !d.is_finite() || d < 0.0 {
                return Err(InstanceError::AtomOutOfRange { value: d });
            }
            if !p.is_finite() || p <= 0.0 {
                return Err(InstanceError::NonPositiveAtom { atom: k, prob: p });
            }
        }
        if atoms.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(InstanceError::AtomsNotSorted);
        }
        let mut acc = KahanSum::new();
        let cum: Vec<f64> = atoms
            .iter()
            .map(|&(_, p)| {
                acc.add(p);
                acc.value()
            })
            .collect();
        let total = acc.value();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(InstanceError::MassNotOne { total });
        }
        let mean = compensated_sum(atoms.iter().map(|&(d, p)| d * p));
        if mean <= 0.0 {
            return Err(InstanceError::NonPositiveMean { index: 0 });
        }
        Ok(Self { atoms, cum, mean })
    }

    pub fn point(d: f64) -> Result<Self, InstanceError> {
        Self::new(vec![(d, 1.0)])
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Demand atoms at exactly zero are legal but worth flagging: Type-III
    /// service treats `0/0` as full service.
    pub fn has_zero_demand(&self) -> bool {
        self.atoms[0].0 == 0.0
    }

    /// `F(d) = Pr[D <= d]`.
    pub fn cdf(&self, d: f64) -> f64 {
        match self.atoms.iter().rposition(|&(a, _)| a <= d) {
            Some(k) => self.cum[k].min(1.0),
            None => 0.0,
        }
    }

    /// `F^-1(q) = inf { d : q <= F(d) }`; `q = 0` maps to the smallest atom.
    pub fn inverse_cdf(&self, q: f64) -> f64 {
        let last = self.atoms.len() - 1;
        let k = self.cum[..last].iter().position(|&c| q <= c).unwrap_or(last);
        self.atoms[k].0
    }

    /// The quantile interval `[lo, hi]` that maps onto each atom, with its demand.
    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let last = self.atoms.len() - 1;
        self.atoms.iter().enumerate().map(move |(k, &(d, _))| {
            let lo = if k == 0 { 0.0 } else { self.cum[k - 1] };
            let hi = if k == last { 1.0 } else { self.cum[k] };
            (lo, hi, d)
        })
    }

    /// Mass `Pr[Q <= q, D = d_k]` for each atom `k`.
    pub fn masses_below(&self, q: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.segments().map(move |(lo, hi, d)| (d, (q.min(hi) - lo).max(0.0)))
    }

    /// `int_0^q g(F^-1(u)) du`, exact for the step function `F^-1`.
    pub fn integrate<G: Fn(f64) -> f64>(&self, q: f64, g: G) -> f64 {
        compensated_sum(self.masses_below(q).filter(|&(_, w)| w > 0.0).map(|(d, w)| w * g(d)))
    }
}

/// Draws a quantile uniformly and maps it through the inverse CDF.
pub fn draw_quantile_demand<R: Rng + ?Sized>(law: &DemandLaw, rng: &mut R) -> (f64, f64) {
    let q: f64 = rng.random();
    (q, law.inverse_cdf(q))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ServiceType {
    TypeI,
    TypeII,
    TypeIII,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RationingInstance {
    demands: Vec<DemandLaw>,
    service: Vec<ServiceType>,
}

impl RationingInstance {
    pub fn new(demands: Vec<DemandLaw>, service: Vec<ServiceType>) -> Result<Self, InstanceError> {
        if demands.is_empty() {
            return Err(InstanceError::Empty);
        }
        if demands.len() != service.len() {
            return Err(InstanceError::LengthMismatch {
                declared: demands.len(),
                actual: service.len(),
            });
        }
        Ok(Self { demands, service })
    }

    pub fn n(&self) -> usize {
        self.demands.len()
    }

    pub fn demands(&self) -> &[DemandLaw] {
        &self.demands
    }

    pub fn service(&self) -> &[ServiceType] {
        &self.service
    }

    pub fn has_type_i(&self) -> bool {
        self.service.contains(&ServiceType::TypeI)
    }
}

/// A validated instance of any kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Instance {
    SingleUnit(SingleUnitInstance),
    Knapsack(KnapsackInstance),
    Rationing(RationingInstance),
}

#[derive(Debug, Serialize, Deserialize)]
struct LawJson {
    atoms: Vec<(f64, f64)>,
    #[serde(default)]
    inactive: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct DemandJson {
    atoms: Vec<(f64, f64)>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum InstanceJson {
    SingleUnit { n: usize, x: Vec<f64> },
    Knapsack { n: usize, laws: Vec<LawJson> },
    Rationing { n: usize, demands: Vec<DemandJson>, service: Vec<ServiceType> },
}

fn check_len(declared: usize, actual: usize) -> Result<(), InstanceError> {
    if declared != actual {
        return Err(InstanceError::LengthMismatch { declared, actual });
    }
    Ok(())
}

impl Instance {
    pub fn from_json(text: &str) -> Result<Self, InstanceError> {
        let raw: InstanceJson = serde_json::from_str(text)?;
        match raw {
            InstanceJson::SingleUnit { n, x } => {
                check_len(n, x.len())?;
                Ok(Instance::SingleUnit(SingleUnitInstance::new(x)?))
            }
            InstanceJson::Knapsack { n, laws } => {
                check_len(n, laws.len())?;
                let laws = laws
                    .into_iter()
                    .map(|l| SizeLaw::new(l.atoms, l.inactive))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Instance::Knapsack(KnapsackInstance::new(laws)?))
            }
            InstanceJson::Rationing { n, demands, service } => {
                check_len(n, demands.len())?;
                let demands = demands
                    .into_iter()
                    .map(|d| DemandLaw::new(d.atoms))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Instance::Rationing(RationingInstance::new(demands, service)?))
            }
        }
    }

    pub fn to_json(&self) -> String {
        let raw = match self {
            Instance::SingleUnit(s) => InstanceJson::SingleUnit { n: s.n(), x: s.x.clone() },
            Instance::Knapsack(k) => InstanceJson::Knapsack {
                n: k.n(),
                laws: k
                    .laws
                    .iter()
                    .map(|l| LawJson { atoms: l.atoms.clone(), inactive: l.inactive })
                    .collect(),
            },
            Instance::Rationing(r) => InstanceJson::Rationing {
                n: r.n(),
                demands: r.demands.iter().map(|d| DemandJson { atoms: d.atoms.clone() }).collect(),
                service: r.service.clone(),
            },
        };
        serde_json::to_string(&raw).expect("instance serialization is infallible")
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Instance::SingleUnit(_) => "single_unit",
            Instance::Knapsack(_) => "knapsack",
            Instance::Rationing(_) => "rationing",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::stream_rng;

    fn two_point() -> DemandLaw {
        DemandLaw::new(vec![(0.5, 0.5), (2.0, 0.5)]).unwrap()
    }

    #[test]
    fn orders_are_mirror_bijections() {
        let n = 7;
        for i in 0..n {
            assert_eq!(Order::Forward.position(i, n) + Order::Backward.position(i, n), n - 1);
            for o in Order::BOTH {
                assert_eq!(o.element_at(o.position(i, n), n), i);
            }
        }
        let back: Vec<_> = Order::Backward.sequence(4).collect();
        assert_eq!(back, vec![3, 2, 1, 0]);
        assert!(Order::Backward.precedes(3, 0, 4));
        assert!(!Order::Forward.precedes(3, 0, 4));
    }

    #[test]
    fn inverse_cdf_examples() {
        let law = two_point();
        assert_eq!(law.inverse_cdf(0.5), 0.5);
        assert_eq!(law.inverse_cdf(0.7), 2.0);
        assert_eq!(law.inverse_cdf(0.0), 0.5);
        assert_eq!(law.inverse_cdf(1.0), 2.0);
        let point = DemandLaw::point(1.0).unwrap();
        for q in [0.0, 0.3, 1.0] {
            assert_eq!(point.inverse_cdf(q), 1.0);
        }
    }

    #[test]
    fn inverse_cdf_is_monotone_and_right_continuous() {
        let law = DemandLaw::new(vec![(0.0, 0.2), (0.3, 0.3), (1.5, 0.5)]).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=1000 {
            let q = k as f64 / 1000.0;
            let d = law.inverse_cdf(q);
            assert!(d >= prev);
            prev = d;
        }
        // just above a breakpoint jumps to the next atom
        assert_eq!(law.inverse_cdf(0.2), 0.0);
        assert_eq!(law.inverse_cdf(0.2 + 1e-12), 0.3);
        assert!(law.has_zero_demand());
    }

    #[test]
    fn cdf_matches_atoms() {
        let law = two_point();
        assert_eq!(law.cdf(0.4), 0.0);
        assert_eq!(law.cdf(1.0), 0.5);
        assert_eq!(law.cdf(2.0), 1.0);
    }

    #[test]
    fn quantile_draws_are_deterministic() {
        let law = two_point();
        let a: Vec<_> = (0..5).map(|i| draw_quantile_demand(&law, &mut stream_rng(9, i))).collect();
        let b: Vec<_> = (0..5).map(|i| draw_quantile_demand(&law, &mut stream_rng(9, i))).collect();
        assert_eq!(a, b);
        let point = DemandLaw::point(1.0).unwrap();
        for i in 0..100 {
            let (q, d) = draw_quantile_demand(&point, &mut stream_rng(1, i));
            assert!((0.0..1.0).contains(&q));
            assert_eq!(d, 1.0);
        }
    }

    #[test]
    fn constructors_reject_bad_mass() {
        assert!(matches!(
            DemandLaw::new(vec![(1.0, 0.5), (2.0, 0.4)]),
            Err(InstanceError::MassNotOne { .. })
        ));
        assert!(matches!(
            DemandLaw::new(vec![(2.0, 0.5), (1.0, 0.5)]),
            Err(InstanceError::AtomsNotSorted)
        ));
        assert!(matches!(DemandLaw::point(0.0), Err(InstanceError::NonPositiveMean { .. })));
        assert!(matches!(
            SizeLaw::new(vec![(1.2, 0.5)], 0.5),
            Err(InstanceError::AtomOutOfRange { .. })
        ));
        assert!(matches!(
            SizeLaw::new(vec![(0.5, 0.5)], 0.4),
            Err(InstanceError::MassNotOne { .. })
        ));
        assert!(matches!(
            SingleUnitInstance::new(vec![0.5, 1.5]),
            Err(InstanceError::ProbabilityOutOfRange { index: 1, .. })
        ));
        assert!(matches!(SingleUnitInstance::new(vec![]), Err(InstanceError::Empty)));
        let zero = KnapsackInstance::new(vec![SizeLaw::point(0.0, 1.0).unwrap()]).unwrap();
        assert!(zero.has_zero_mean());
        assert!(KnapsackInstance::new_strict(zero.laws().to_vec()).is_err());
    }

    #[test]
    fn split_examples() {
        let one = SingleUnitInstance::new(vec![1.0]).unwrap();
        assert_eq!(split_element(&one, 0).unwrap().x(), &[0.5, 0.5]);
        let two = SingleUnitInstance::new(vec![0.3, 0.7]).unwrap();
        assert_eq!(split_element(&two, 1).unwrap().x(), &[0.3, 0.35, 0.35]);
        assert!(matches!(split_element(&two, 2), Err(InstanceError::InvalidIndex { .. })));
    }

    #[test]
    fn hardness_instance_examples() {
        assert!(matches!(knapsack_hardness_instance(1), Err(InstanceError::HardnessTooSmall { n: 1 })));
        let (k, s) = knapsack_hardness_instance(2).unwrap();
        assert_eq!(k.n(), 5);
        assert_eq!(k.laws()[0].atoms(), &[(1.0, 0.2)]);
        assert!((s.rho() - 1.0).abs() < 1e-15);
        assert!((k.total_mean() - 1.0).abs() < 1e-12);
        let (_, big) = knapsack_hardness_instance(100_000).unwrap();
        assert!((big.rho() - 2.0).abs() < 1e-4);
    }

    #[test]
    fn prefix_masses_by_order() {
        let inst = SingleUnitInstance::new(vec![0.1, 0.2, 0.3]).unwrap();
        let f = inst.prefix_masses(Order::Forward);
        let b = inst.prefix_masses(Order::Backward);
        assert_eq!(f[0], 0.0);
        assert!((f[2] - 0.3).abs() < 1e-15);
        assert_eq!(b[2], 0.0);
        assert!((b[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip_all_kinds() {
        let texts = [
            r#"{"kind":"single_unit","n":2,"x":[0.5,0.1]}"#,
            r#"{"kind":"knapsack","n":1,"laws":[{"atoms":[[0.4,0.5]],"inactive":0.5}]}"#,
            r#"{"kind":"rationing","n":2,"demands":[{"atoms":[[0.5,0.5],[2.0,0.5]]},{"atoms":[[1.0,1.0]]}],"service":["TypeII","TypeIII"]}"#,
        ];
        for t in texts {
            let inst = Instance::from_json(t).unwrap();
            let again = Instance::from_json(&inst.to_json()).unwrap();
            assert_eq!(inst, again);
        }
        assert!(matches!(
            Instance::from_json(r#"{"kind":"single_unit","n":3,"x":[0.5]}"#),
            Err(InstanceError::LengthMismatch { .. })
        ));
    }
}
