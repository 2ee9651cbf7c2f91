//! Knapsack selection: feasible acceptance probabilities, the linear
//! closed-form plan, and the online knapsack scheme with exact fill
//! propagation, invariant monitoring and a sampled-history Monte Carlo mode.

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::instances::{KnapsackInstance, Order};
use crate::numeric::{compensated_sum, merge_atoms, KahanSum, FEAS_TOL, PROB_TOL};
use crate::sim::{run_trials, stream_rng, RateCounts, RateEstimate};

#[derive(Debug, Error)]
pub enum KnapsackError {
    #[error("{z} lies outside [0, 1]")]
    Domain { z: f64 },
    #[error("total mean size {total} exceeds 1")]
    MassTooLarge { total: f64 },
    #[error("plan has {plan} entries but the instance has {instance} elements")]
    SizeMismatch { plan: usize, instance: usize },
    #[error(
        "element {element} ({order:?} order, size {size}): target {c} exceeds reachable mass \
         (nonzero fill {p_nonzero}, zero fill {p_zero})"
    )]
    InfeasibleStep { element: usize, order: Order, size: f64, c: f64, p_nonzero: f64, p_zero: f64 },
}

/// `4/9 - 2z/9` on `[0, 1]`.
pub fn phi_knapsack(z: f64) -> Result<f64, KnapsackError> {
    if !(-PROB_TOL..=1.0 + PROB_TOL).contains(&z) {
        return Err(KnapsackError::Domain { z });
    }
    Ok(phi_linear(z))
}

fn phi_linear(z: f64) -> f64 {
    4.0 / 9.0 - 2.0 * z / 9.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanSource {
    ClosedForm,
    User,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KnapsackPlan {
    pub c_f: Vec<f64>,
    pub c_b: Vec<f64>,
    pub source: PlanSource,
}

impl KnapsackPlan {
    pub fn new(c_f: Vec<f64>, c_b: Vec<f64>) -> Self {
        assert_eq!(c_f.len(), c_b.len(), "plan orders must have equal length");
        Self { c_f, c_b, source: PlanSource::User }
    }

    pub fn n(&self) -> usize {
        self.c_f.len()
    }

    pub fn get(&self, order: Order) -> &[f64] {
        match order {
            Order::Forward => &self.c_f,
            Order::Backward => &self.c_b,
        }
    }

    pub fn pair_means(&self) -> Vec<f64> {
        self.c_f.iter().zip(&self.c_b).map(|(f, b)| (f + b) / 2.0).collect()
    }

    pub fn min_pair_mean(&self) -> f64 {
        self.pair_means().into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(
            self.c_f.iter().map(|c| c * factor).collect(),
            self.c_b.iter().map(|c| c * factor).collect(),
        )
    }
}

/// `c_σ(i)` = average of `4/9 - 2z/9` over the mean-size interval of element
/// `i` in order `σ`. When the total mean is below 1 the masses keep their
/// positions on `[0, Σμ]` (no rescaling).
pub fn closed_form_knapsack_plan(inst: &KnapsackInstance) -> Result<KnapsackPlan, KnapsackError> {
    let total = inst.total_mean();
    if total > 1.0 + FEAS_TOL {
        return Err(KnapsackError::MassTooLarge { total });
    }
    let entries = |order| {
        inst.prefix_means(order)
            .iter()
            .zip(inst.mu())
            .map(|(&a, &m)| phi_linear(a + m / 2.0))
            .collect::<Vec<_>>()
    };
    Ok(KnapsackPlan { c_f: entries(Order::Forward), c_b: entries(Order::Backward), source: PlanSource::ClosedForm })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    /// Largest violation across both constraint families, both orders, and `[0, 1]` bounds.
    pub max_violation: f64,
    pub first_family: f64,
    pub second_family: f64,
    /// `(order, i)` where `c_σ(i+1)` breaks the required monotone direction.
    pub monotonicity: Vec<(Order, usize)>,
    /// Orders whose first element has `c = 0`; the exponential term is taken as 0.
    pub zero_first: Vec<Order>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.max_violation <= FEAS_TOL && self.monotonicity.is_empty()
    }
}

pub fn check_knapsack_feasible(plan: &KnapsackPlan, inst: &KnapsackInstance) -> Result<FeasibilityReport, KnapsackError> {
    let n = inst.n();
    if plan.n() != n {
        return Err(KnapsackError::SizeMismatch { plan: plan.n(), instance: n });
    }
    let mut first_family: f64 = 0.0;
    let mut second_family: f64 = 0.0;
    let mut bounds: f64 = 0.0;
    let mut monotonicity = Vec::new();
    let mut zero_first = Vec::new();
    for order in Order::BOTH {
        let c = plan.get(order);
        let c1 = c[order.first(n)];
        if c1 <= 0.0 {
            zero_first.push(order);
        }
        let mut used = KahanSum::new();
        for i in order.sequence(n) {
            let u = used.value();
            bounds = bounds.max(-c[i]).max(c[i] - 1.0);
            first_family = first_family.max(c[i] - (1.0 - c1 - u));
            let tail = if c1 > 0.0 {
                c1 * (-2.0 * u / c1).exp()
            } else {
                0.0
            };
            second_family = second_family.max(c[i] - (1.0 - 2.0 * u - tail));
            used.add(c[i] * inst.mu()[i]);
        }
    }
    for i in 0..n.saturating_sub(1) {
        if plan.c_f[i + 1] > plan.c_f[i] + FEAS_TOL {
            monotonicity.push((Order::Forward, i));
        }
        if plan.c_b[i] > plan.c_b[i + 1] + FEAS_TOL {
            monotonicity.push((Order::Backward, i));
        }
    }
    Ok(FeasibilityReport {
        max_violation: first_family.max(second_family).max(bounds),
        first_family,
        second_family,
        monotonicity,
        zero_first,
    })
}

/// Finite-atom law of the accumulated fill before some element.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FillDistribution {
    /// `(fill, probability)`, sorted by fill.
    pub atoms: Vec<(f64, f64)>,
}

impl Default for FillDistribution {
    fn default() -> Self {
        Self::empty()
    }
}

impl FillDistribution {
    /// All mass at fill 0.
    pub fn empty() -> Self {
        Self { atoms: vec![(0.0, 1.0)] }
    }

    pub fn mass(&self) -> f64 {
        compensated_sum(self.atoms.iter().map(|a| a.1))
    }

    pub fn mean(&self) -> f64 {
        compensated_sum(self.atoms.iter().map(|&(t, p)| t * p))
    }

    /// `Pr[T = 0]`.
    pub fn zero_mass(&self) -> f64 {
        compensated_sum(self.atoms.iter().filter(|a| a.0 <= PROB_TOL).map(|a| a.1))
    }

    /// `Pr[lo < T <= hi]` with fills within `PROB_TOL` of `hi` counted inside.
    pub fn mass_between(&self, lo: f64, hi: f64) -> f64 {
        compensated_sum(
            self.atoms
                .iter()
                .filter(|a| a.0 > lo + PROB_TOL && a.0 <= hi + PROB_TOL)
                .map(|a| a.1),
        )
    }
}

/// Acceptance rule for one size atom of the arriving element.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SizeRule {
    pub size: f64,
    /// `Pr[0 < T <= 1 - size]`.
    pub p_nonzero: f64,
    /// `Pr[T = 0]`.
    pub p_zero: f64,
    /// Acceptance probability when `0 < T <= 1 - size`.
    pub accept_nonzero: f64,
    /// Acceptance probability when `T = 0`.
    pub accept_zero: f64,
}

impl SizeRule {
    /// Bernoulli parameters for target `c` given the two fill masses.
    fn new(size: f64, c: f64, p_nonzero: f64, p_zero: f64) -> Result<Self, (f64, f64)> {
        let (accept_nonzero, accept_zero) = if c <= 0.0 {
            (0.0, 0.0)
        } else if c <= p_nonzero {
            (c / p_nonzero, 0.0)
        } else {
            let need = c - p_nonzero;
            if p_zero <= 0.0 {
                return Err((p_nonzero, p_zero));
            }
            let r = need / p_zero;
            if r > 1.0 + FEAS_TOL {
                return Err((p_nonzero, p_zero));
            }
            (1.0, r.min(1.0))
        };
        Ok(Self { size, p_nonzero, p_zero, accept_nonzero, accept_zero })
    }

    /// Probability of accepting at fill `t`.
    pub fn accept_at(&self, t: f64) -> f64 {
        if t <= PROB_TOL {
            self.accept_zero
        } else if t <= 1.0 - self.size + PROB_TOL {
            self.accept_nonzero
        } else {
            0.0
        }
    }

    /// Acceptance probability averaged over the fill law the rule was built on.
    pub fn realized_rate(&self) -> f64 {
        self.accept_nonzero * self.p_nonzero + self.accept_zero * self.p_zero
    }
}

fn rules_for(
    law: &crate::instances::SizeLaw,
    c: f64,
    p_nonzero: impl Fn(f64) -> f64,
    p_zero: f64,
    element: usize,
    order: Order,
) -> Result<Vec<SizeRule>, KnapsackError> {
    law.atoms()
        .iter()
        .map(|&(s, _)| {
            let p1 = p_nonzero(s);
            SizeRule::new(s, c, p1, p_zero).map_err(|(p_nonzero, p_zero)| KnapsackError::InfeasibleStep {
                element,
                order,
                size: s,
                c,
                p_nonzero,
                p_zero,
            })
        })
        .collect()
}

/// Pushes the fill law through one arriving element with target rate `c`.
/// `element` and `order` only label errors.
pub fn propagate_fill(
    dist: &FillDistribution,
    law: &crate::instances::SizeLaw,
    c: f64,
    element: usize,
    order: Order,
) -> Result<(FillDistribution, Vec<SizeRule>), KnapsackError> {
    let p0 = dist.zero_mass();
    let rules = rules_for(law, c, |s| dist.mass_between(0.0, 1.0 - s), p0, element, order)?;
    let mut next = Vec::with_capacity(dist.atoms.len() * (law.atoms().len() + 1));
    let inactive = law.inactive_mass();
    if inactive > 0.0 {
        next.extend(dist.atoms.iter().map(|&(t, w)| (t, w * inactive)));
    }
    for (rule, &(s, p)) in rules.iter().zip(law.atoms()) {
        for &(t, w) in &dist.atoms {
            let a = rule.accept_at(t);
            let mass = w * p;
            if a > 0.0 {
                next.push((t + s, mass * a));
            }
            if a < 1.0 {
                next.push((t, mass * (1.0 - a)));
            }
        }
    }
    Ok((FillDistribution { atoms: merge_atoms(next, PROB_TOL) }, rules))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InvariantKind {
    /// `Pr[0 < T <= b] / c_1 <= exp(-Pr[b < T <= 1 - b] / c_1)` failed.
    AntiConcentration,
    /// `Pr[T = 0] >= c_σ(i)` failed.
    ZeroMass,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantViolation {
    pub order: Order,
    pub element: usize,
    /// 0-based arrival step.
    pub step: usize,
    pub b: Option<f64>,
    pub kind: InvariantKind,
    pub lhs: f64,
    pub rhs: f64,
}

pub fn default_b_grid() -> Vec<f64> {
    (1..=10).map(|k| k as f64 * 0.05).collect()
}

/// Checks both induction inequalities for the fill law seen by one element.
/// The anti-concentration check is skipped when `c_first <= 0`.
pub fn monitor_invariants(
    dist: &FillDistribution,
    c_first: f64,
    c_current: f64,
    b_grid: &[f64],
    order: Order,
    element: usize,
    step: usize,
) -> Vec<InvariantViolation> {
    let mut out = Vec::new();
    if c_first > 0.0 {
        for &b in b_grid {
            let lhs = dist.mass_between(0.0, b) / c_first;
            let rhs = (-dist.mass_between(b, 1.0 - b) / c_first).exp();
            if lhs > rhs + FEAS_TOL {
                out.push(InvariantViolation {
                    order,
                    element,
                    step,
                    b: Some(b),
                    kind: InvariantKind::AntiConcentration,
                    lhs,
                    rhs,
                });
            }
        }
    }
    let zero = dist.zero_mass();
    if zero < c_current - FEAS_TOL {
        out.push(InvariantViolation { order, element, step, b: None, kind: InvariantKind::ZeroMass, lhs: zero, rhs: c_current });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KnapsackExactRun {
    /// `rules[order][i]`: one rule per size atom of element `i`.
    pub rules: [Vec<Vec<SizeRule>>; 2],
    /// Acceptance probability given activity, per order and element; the
    /// minimum over size atoms (the plan value when an element has no atoms).
    pub rates: [Vec<f64>; 2],
    /// `E[T]` seen by each element.
    pub mean_fill: [Vec<f64>; 2],
    /// Largest atom count reached by the fill law.
    pub max_atoms: usize,
    pub final_fill: [FillDistribution; 2],
    pub violations: Vec<InvariantViolation>,
}

impl KnapsackExactRun {
    pub fn pair_means(&self) -> Vec<f64> {
        self.rates[0].iter().zip(&self.rates[1]).map(|(f, b)| (f + b) / 2.0).collect()
    }

    pub fn min_pair_mean(&self) -> f64 {
        self.pair_means().into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Largest spread of the acceptance rate across size atoms of one element.
    pub fn size_dependence(&self) -> f64 {
        self.rules
            .iter()
            .flatten()
            .map(|rs| {
                let rates = rs.iter().map(SizeRule::realized_rate);
                let hi = rates.clone().fold(f64::NEG_INFINITY, f64::max);
                let lo = rates.fold(f64::INFINITY, f64::min);
                if rs.is_empty() {
                    0.0
                } else {
                    hi - lo
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Exact law of the fill and of every acceptance decision, for both orders.
/// With `monitor` set the induction inequalities are checked before every step.
pub fn run_knapsack_exact(
    inst: &KnapsackInstance,
    plan: &KnapsackPlan,
    monitor: Option<&[f64]>,
) -> Result<KnapsackExactRun, KnapsackError> {
    let n = inst.n();
    if plan.n() != n {
        return Err(KnapsackError::SizeMismatch { plan: plan.n(), instance: n });
    }
    let mut rules: [Vec<Vec<SizeRule>>; 2] = [vec![Vec::new(); n], vec![Vec::new(); n]];
    let mut rates = [vec![0.0; n], vec![0.0; n]];
    let mut mean_fill = [vec![0.0; n], vec![0.0; n]];
    let mut final_fill = [FillDistribution::empty(), FillDistribution::empty()];
    let mut violations = Vec::new();
    let mut max_atoms = 1;
    for order in Order::BOTH {
        let k = order.index();
        let c = plan.get(order);
        let c_first = c[order.first(n)];
        let mut dist = FillDistribution::empty();
        for (step, i) in order.sequence(n).enumerate() {
            if let Some(grid) = monitor {
                violations.extend(monitor_invariants(&dist, c_first, c[i], grid, order, i, step));
            }
            mean_fill[k][i] = dist.mean();
            let (next, rs) = propagate_fill(&dist, &inst.laws()[i], c[i], i, order)?;
            rates[k][i] = if rs.is_empty() {
                c[i]
            } else {
                rs.iter().map(SizeRule::realized_rate).fold(f64::INFINITY, f64::min)
            };
            rules[k][i] = rs;
            dist = next;
            max_atoms = max_atoms.max(dist.atoms.len());
        }
        final_fill[k] = dist;
    }
    Ok(KnapsackExactRun { rules, rates, mean_fill, max_atoms, final_fill, violations })
}

/// Where the Monte Carlo executor gets `Pr[T = 0]` and `Pr[0 < T <= 1 - s]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FillEstimates {
    /// Exact propagation (the oracle tables).
    Exact,
    /// Empirical frequencies over this many simulated histories.
    Replicas(usize),
}

pub const DEFAULT_REPLICAS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KnapsackMc {
    /// `Pr[accept i | i active, order]`, forward then backward.
    pub per_order: [Vec<RateEstimate>; 2],
    /// `Pr[accept i | i active]` with the order drawn uniformly.
    pub overall: Vec<RateEstimate>,
    /// Trials whose accepted sizes summed above 1 (must stay 0).
    pub overfull: u64,
    /// Rules whose zero-fill parameter had to be clamped because sampled
    /// masses made the target unreachable.
    pub clamped_rules: usize,
    pub trials: u64,
}

/// Estimates the acceptance tables from `replicas` independent histories.
fn replica_rules(
    inst: &KnapsackInstance,
    plan: &KnapsackPlan,
    replicas: usize,
    seed: u64,
) -> ([Vec<Vec<SizeRule>>; 2], usize) {
    let n = inst.n();
    let mut rules: [Vec<Vec<SizeRule>>; 2] = [vec![Vec::new(); n], vec![Vec::new(); n]];
    let mut clamped = 0;
    for order in Order::BOTH {
        // separate stream family from the trials (which use indices < trials)
        let mut rng = stream_rng(seed ^ 0x5eed_f111_u64, u64::MAX - order.index() as u64);
        let mut fills = vec![0.0f64; replicas];
        let c = plan.get(order);
        let r = replicas as f64;
        for i in order.sequence(n) {
            let law = &inst.laws()[i];
            let p_zero = fills.iter().filter(|&&t| t <= PROB_TOL).count() as f64 / r;
            let p_nonzero = |s: f64| {
                fills.iter().filter(|&&t| t > PROB_TOL && t <= 1.0 - s + PROB_TOL).count() as f64 / r
            };
            let rs: Vec<SizeRule> = law
                .atoms()
                .iter()
                .map(|&(s, _)| {
                    let p1 = p_nonzero(s);
                    SizeRule::new(s, c[i], p1, p_zero).unwrap_or_else(|_| {
                        clamped += 1;
                        SizeRule { size: s, p_nonzero: p1, p_zero, accept_nonzero: 1.0, accept_zero: 1.0 }
                    })
                })
                .collect();
            for t in fills.iter_mut() {
                if let Some(k) = law.sample_index(&mut rng) {
                    let rule = &rs[k];
                    if rng.random::<f64>() < rule.accept_at(*t) {
                        *t += rule.size;
                    }
                }
            }
            rules[order.index()][i] = rs;
        }
    }
    (rules, clamped)
}

/// Monte Carlo run of the online knapsack scheme.
pub fn run_knapsack_mc(
    inst: &KnapsackInstance,
    plan: &KnapsackPlan,
    trials: u64,
    seed: u64,
    workers: usize,
    estimates: FillEstimates,
    confidence: f64,
) -> Result<KnapsackMc, KnapsackError> {
    let n = inst.n();
    if plan.n() != n {
        return Err(KnapsackError::SizeMismatch { plan: plan.n(), instance: n });
    }
    let (rules, clamped_rules) = match estimates {
        FillEstimates::Exact => (run_knapsack_exact(inst, plan, None)?.rules, 0),
        FillEstimates::Replicas(r) => replica_rules(inst, plan, r.max(1), seed),
    };
    // slots: [forward 0..n | backward n..2n | overall 2n..3n | overfull 3n]
    let counts = run_trials(
        trials,
        seed,
        workers,
        || RateCounts::new(3 * n + 1),
        |acc, rng, _| {
            let order = if rng.random::<bool>() { Order::Forward } else { Order::Backward };
            let base = order.index() * n;
            let mut fill = 0.0;
            for i in order.sequence(n) {
                let Some(k) = inst.laws()[i].sample_index(rng) else { continue };
                let rule = &rules[order.index()][i][k];
                let hit = rng.random::<f64>() < rule.accept_at(fill);
                if hit {
                    fill += rule.size;
                }
                acc.record(base + i, hit);
                acc.record(2 * n + i, hit);
            }
            acc.record(3 * n, fill > 1.0 + PROB_TOL);
        },
        RateCounts::merge,
    );
    let est = counts.estimates(confidence);
    Ok(KnapsackMc {
        per_order: [est[..n].to_vec(), est[n..2 * n].to_vec()],
        overall: est[2 * n..3 * n].to_vec(),
        overfull: counts.successes[3 * n],
        clamped_rules,
        trials,
    })
}
