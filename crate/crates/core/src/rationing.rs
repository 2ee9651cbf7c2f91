//! Fair rationing through contention resolution: service functions, the
//! ex-ante feasible region, threshold calibration and the online rationing
//! algorithm with exact remaining-supply propagation.

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::instances::{
    DemandLaw, InstanceError, KnapsackInstance, Order, RationingInstance, ServiceType, SingleUnitInstance, SizeLaw,
};
use crate::knapsack::{closed_form_knapsack_plan, run_knapsack_exact, KnapsackError, KnapsackPlan, SizeRule};
use crate::lp_si::{solve_lp_si, LpError, SelectionPlan};
use crate::numeric::{compensated_sum, merge_atoms, KahanSum, FEAS_TOL, PROB_TOL};
use crate::sim::{run_trials, stream_rng, MeanAccumulator, MeanEstimate, DEFAULT_CONFIDENCE};
use crate::single_unit::closed_form_plan;

/// Tolerance on service and supply identities.
pub const SERVICE_TOL: f64 = 1e-10;

/// Remaining-supply laws with more atoms than this are replaced by a sampled
/// empirical law of [`FALLBACK_SAMPLES`] draws.
pub const MAX_REM_ATOMS: usize = 100_000;
pub const FALLBACK_SAMPLES: usize = 10_000;

#[derive(Debug, Error)]
pub enum RationingError {
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error("agent {agent}: target {beta} outside [0, 1]")]
    BetaOutOfRange { agent: usize, beta: f64 },
    #[error("{targets} targets given for {agents} agents")]
    LengthMismatch { targets: usize, agents: usize },
    #[error("agent {agent}: target {beta} exceeds the largest attainable service {max}")]
    AgentInfeasible { agent: usize, beta: f64, max: f64 },
    #[error("targets need {total} expected supply, more than the unit available")]
    SupplyExceeded { total: f64 },
    #[error("agent {agent} ({order:?} order): allocation target {target} above reachable {reachable}")]
    CalibrationFailed { agent: usize, order: Order, target: f64, reachable: f64 },
    #[error("instance has Type-I agents; use the knapsack reduction")]
    NeedsKnapsackPath,
    #[error("plan has {plan} entries but the instance has {agents} agents")]
    PlanSize { plan: usize, agents: usize },
    #[error("trial {trial} allocated more than the unit supply")]
    Overdraw { trial: u64 },
    #[error(transparent)]
    Knapsack(#[from] KnapsackError),
    #[error(transparent)]
    Lp(#[from] LpError),
}

impl RationingError {
    pub fn is_infeasible_input(&self) -> bool {
        matches!(
            self,
            RationingError::Instance(_)
                | RationingError::BetaOutOfRange { .. }
                | RationingError::LengthMismatch { .. }
                | RationingError::AgentInfeasible { .. }
                | RationingError::SupplyExceeded { .. }
        )
    }
}

/// Service of allocation `y` against demand `d`. Type-I compares with a
/// `1e-12` slack so that an allocation equal to the demand up to rounding counts.
pub fn service_value(kind: ServiceType, y: f64, d: f64, mu: f64) -> f64 {
    match kind {
        ServiceType::TypeI => {
            if y + PROB_TOL >= d {
                1.0
            } else {
                0.0
            }
        }
        ServiceType::TypeII => y.min(d) / mu,
        ServiceType::TypeIII => {
            if d == 0.0 {
                1.0
            } else {
                y.min(d) / d
            }
        }
    }
}

/// Rate of the service integral per unit quantile at demand `d` when the
/// agent gets `min(d, 1)`.
fn full_service_density(kind: ServiceType, d: f64, mu: f64) -> f64 {
    service_value(kind, d.min(1.0), d, mu)
}

/// `∫_0^q s(min(F^-1, 1), F^-1)`.
pub fn service_integral(law: &DemandLaw, kind: ServiceType, q: f64) -> f64 {
    law.integrate(q, |d| full_service_density(kind, d, law.mean()))
}

/// `∫_0^q min(F^-1, 1)`: expected supply used when the agent always gets its
/// capped demand below quantile `q`.
pub fn supply_integral(law: &DemandLaw, q: f64) -> f64 {
    law.integrate(q, |d| d.min(1.0))
}

/// Smallest `q` whose service integral equals `beta`, solved segment by segment.
pub fn solve_q_for_beta(law: &DemandLaw, kind: ServiceType, beta: f64) -> Result<f64, RationingError> {
    let max = service_integral(law, kind, 1.0);
    if beta > max + SERVICE_TOL {
        return Err(RationingError::AgentInfeasible { agent: 0, beta, max });
    }
    if beta <= 0.0 {
        return Ok(0.0);
    }
    let beta = beta.min(max);
    let mut acc = KahanSum::new();
    let mut last_end = 0.0;
    for (lo, hi, d) in law.segments() {
        let slope = full_service_density(kind, d, law.mean());
        if slope <= 0.0 || hi <= lo {
            continue;
        }
        let reached = acc.value() + slope * (hi - lo);
        if reached >= beta {
            return Ok(lo + ((beta - acc.value()) / slope).clamp(0.0, hi - lo));
        }
        acc.add(slope * (hi - lo));
        last_end = hi;
    }
    // beta within tolerance of the total, missed by rounding
    Ok(last_end)
}

/// A point of the ex-ante feasible region with its quantile witness.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ServiceTarget {
    pub beta: Vec<f64>,
    pub q: Vec<f64>,
    /// Activeness of each agent in the induced selection instance.
    pub x: Vec<f64>,
    /// `Σ x`, at most 1.
    pub supply: f64,
}

impl ServiceTarget {
    pub fn single_unit_instance(&self) -> Result<SingleUnitInstance, InstanceError> {
        SingleUnitInstance::new(self.x.iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }
}

pub fn exante_check(inst: &RationingInstance, beta: &[f64]) -> Result<ServiceTarget, RationingError> {
    let n = inst.n();
    if beta.len() != n {
        return Err(RationingError::LengthMismatch { targets: beta.len(), agents: n });
    }
    let mut q = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    for (agent, (&b, (law, &kind))) in beta.iter().zip(inst.demands().iter().zip(inst.service())).enumerate() {
        if !(0.0..=1.0).contains(&b) {
            return Err(RationingError::BetaOutOfRange { agent, beta: b });
        }
        let qi = solve_q_for_beta(law, kind, b).map_err(|e| match e {
            RationingError::AgentInfeasible { beta, max, .. } => RationingError::AgentInfeasible { agent, beta, max },
            other => other,
        })?;
        q.push(qi);
        x.push(supply_integral(law, qi));
    }
    let supply = compensated_sum(x.iter().copied());
    if supply > 1.0 + SERVICE_TOL {
        return Err(RationingError::SupplyExceeded { total: supply });
    }
    Ok(ServiceTarget { beta: beta.to_vec(), q, x, supply })
}

/// Largest common target `β` in the ex-ante feasible region, by bisection to
/// `1e-9`; the returned value is feasible.
pub fn max_uniform_beta(inst: &RationingInstance) -> f64 {
    let cap = inst
        .demands()
        .iter()
        .zip(inst.service())
        .map(|(law, &kind)| service_integral(law, kind, 1.0))
        .fold(1.0f64, f64::min)
        .max(0.0);
    let feasible = |b: f64| exante_check(inst, &vec![b; inst.n()]).is_ok();
    if feasible(cap) {
        return cap;
    }
    let (mut lo, mut hi) = (0.0, cap);
    while hi - lo > 1e-9 {
        let mid = (lo + hi) / 2.0;
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Finite-atom law of the remaining supply seen by an agent.
#[derive(Debug, Clone, PartialEq)]
pub struct RemDistribution {
    atoms: Vec<(f64, f64)>,
    /// `cum_mass[k]` = mass of atoms `< k`; `cum_moment[k]` = `Σ r w` over them.
    cum_mass: Vec<f64>,
    cum_moment: Vec<f64>,
}

impl RemDistribution {
    pub fn new(atoms: Vec<(f64, f64)>) -> Self {
        let atoms = merge_atoms(atoms, PROB_TOL);
        let mut cum_mass = Vec::with_capacity(atoms.len() + 1);
        let mut cum_moment = Vec::with_capacity(atoms.len() + 1);
        let (mut m, mut r) = (KahanSum::new(), KahanSum::new());
        cum_mass.push(0.0);
        cum_moment.push(0.0);
        for &(v, w) in &atoms {
            m.add(w);
            r.add(v * w);
            cum_mass.push(m.value());
            cum_moment.push(r.value());
        }
        Self { atoms, cum_mass, cum_moment }
    }

    /// The full unit of supply.
    pub fn full() -> Self {
        Self::new(vec![(1.0, 1.0)])
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn mass(&self) -> f64 {
        *self.cum_mass.last().unwrap_or(&0.0)
    }

    pub fn mean(&self) -> f64 {
        *self.cum_moment.last().unwrap_or(&0.0)
    }

    /// `E[min(Rem, a)]`.
    pub fn expect_min(&self, a: f64) -> f64 {
        let k = self.atoms.partition_point(|&(v, _)| v <= a);
        self.cum_moment[k] + a * (self.mass() - self.cum_mass[k])
    }
}

/// `(demand, Pr[Q <= q, D = demand])` for the atoms reached below `q`.
fn masses_below(law: &DemandLaw, q: f64) -> Vec<(f64, f64)> {
    law.masses_below(q).filter(|&(_, w)| w > 0.0).collect()
}

/// `E_Rem[∫_0^q min(F^-1, Rem, τ)]`.
fn expected_allocation(masses: &[(f64, f64)], rem: &RemDistribution, tau: f64) -> f64 {
    compensated_sum(masses.iter().map(|&(d, m)| m * rem.expect_min(d.min(tau))))
}

/// Smallest `τ ∈ [0, 1]` with `E_Rem[∫_0^q min(F^-1, Rem, τ)] = target`.
///
/// The left side is piecewise linear in `τ` with kinks at demand atoms and
/// remaining-supply atoms, so the root is found exactly on the bracketing
/// linear piece.
pub fn calibrate_tau(law: &DemandLaw, q: f64, rem: &RemDistribution, target: f64) -> Result<f64, RationingError> {
    calibrate_masses(&masses_below(law, q), rem, target).map_err(|reachable| RationingError::CalibrationFailed {
        agent: 0,
        order: Order::Forward,
        target,
        reachable,
    })
}

fn calibrate_masses(masses: &[(f64, f64)], rem: &RemDistribution, target: f64) -> Result<f64, f64> {
    if target <= 0.0 {
        return Ok(0.0);
    }
    let top = expected_allocation(masses, rem, 1.0);
    if target > top + SERVICE_TOL {
        return Err(top);
    }
    let mut kinks: Vec<f64> = masses
        .iter()
        .map(|m| m.0)
        .chain(rem.atoms().iter().map(|a| a.0))
        .filter(|&v| v > 0.0 && v < 1.0)
        .chain([0.0, 1.0])
        .collect();
    kinks.sort_by(f64::total_cmp);
    kinks.dedup();
    let f = |t: f64| expected_allocation(masses, rem, t);
    // first kink whose value reaches the target
    let (mut lo, mut hi) = (0usize, kinks.len() - 1);
    if f(kinks[hi]) < target {
        return Ok(1.0);
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if f(kinks[mid]) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (a, b) = (kinks[lo], kinks[hi]);
    let (fa, fb) = (f(a), f(b));
    if fa >= target {
        return Ok(a);
    }
    Ok((a + (target - fa) / (fb - fa) * (b - a)).clamp(a, b))
}

/// Law of the remaining supply after an agent with threshold `tau`.
fn propagate_rem(rem: &RemDistribution, masses: &[(f64, f64)], q: f64, tau: f64) -> Vec<(f64, f64)> {
    let skip = (1.0 - q).max(0.0);
    let mut next = Vec::with_capacity(rem.atoms().len() * (masses.len() + 1));
    for &(r, w) in rem.atoms() {
        if skip > 0.0 {
            next.push((r, w * skip));
        }
        for &(d, m) in masses {
            let y = d.min(r).min(tau);
            next.push(((r - y).max(0.0), w * m));
        }
    }
    next
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReductionPath {
    SingleUnit,
    Knapsack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanChoice {
    Lp,
    ClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Exact,
    MonteCarlo { trials: u64, seed: u64, workers: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentReport {
    pub beta: f64,
    pub q: f64,
    pub x: f64,
    pub c_f: f64,
    pub c_b: f64,
    /// Calibrated thresholds (forward, backward); `None` on the knapsack path.
    pub tau: Option<[f64; 2]>,
    /// Exact `E[Y_i | order]`, forward then backward.
    pub expected_allocation: [f64; 2],
    /// Exact `E[s_i | order]`, forward then backward.
    pub service_by_order: [f64; 2],
    /// Exact mean over the orders, or the Monte Carlo mean in MC mode.
    pub expected_service: f64,
    pub mc: Option<MeanEstimate>,
    /// `β_i · (c_f(i) + c_b(i)) / 2`.
    pub bound: f64,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentDraw {
    pub quantile: f64,
    pub demand: f64,
    pub allocation: f64,
    pub service: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationTrace {
    pub order: Order,
    /// Indexed by agent.
    pub agents: Vec<AgentDraw>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RationingReport {
    pub path: ReductionPath,
    pub agents: Vec<AgentReport>,
    /// Some remaining-supply law exceeded the atom cap and was sampled.
    pub sampled_fallback: bool,
    /// `(order, agent)` where `E[∫ min(F^-1, Rem)] >= (1 - Σ c x) x` failed.
    pub rem_bound_violations: Vec<(Order, usize)>,
    /// The first few Monte Carlo sample paths.
    pub traces: Vec<AllocationTrace>,
}

impl RationingReport {
    pub fn min_slack(&self) -> f64 {
        self.agents.iter().map(|a| a.slack).fold(f64::INFINITY, f64::min)
    }
}

const KEPT_TRACES: u64 = 8;

/// Exact thresholds and per-order expectations for the single-unit path.
struct Calibration {
    tau: [Vec<f64>; 2],
    allocation: [Vec<f64>; 2],
    service: [Vec<f64>; 2],
    sampled: bool,
    rem_violations: Vec<(Order, usize)>,
}

fn unserved_service(law: &DemandLaw, kind: ServiceType, q: f64) -> f64 {
    // agents above their threshold get nothing; s(0, d) is 1 only at d = 0
    compensated_sum(
        law.segments()
            .map(|(lo, hi, d)| ((hi - lo) - (q.min(hi) - lo).max(0.0)).max(0.0) * service_value(kind, 0.0, d, law.mean())),
    )
}

fn calibrate_all(inst: &RationingInstance, target: &ServiceTarget, plan: &SelectionPlan) -> Result<Calibration, RationingError> {
    let n = inst.n();
    let mut out = Calibration {
        tau: [vec![0.0; n], vec![0.0; n]],
        allocation: [vec![0.0; n], vec![0.0; n]],
        service: [vec![0.0; n], vec![0.0; n]],
        sampled: false,
        rem_violations: Vec::new(),
    };
    for order in Order::BOTH {
        let k = order.index();
        let c = plan.get(order);
        let mut rem = RemDistribution::full();
        let mut used = KahanSum::new();
        for i in order.sequence(n) {
            let law = &inst.demands()[i];
            let kind = inst.service()[i];
            let (q, x) = (target.q[i], target.x[i]);
            let masses = masses_below(law, q);
            let room = 1.0 - used.value();
            if expected_allocation(&masses, &rem, 1.0) < room * x - FEAS_TOL {
                out.rem_violations.push((order, i));
            }
            let goal = c[i] * x;
            let tau = calibrate_masses(&masses, &rem, goal).map_err(|reachable| RationingError::CalibrationFailed {
                agent: i,
                order,
                target: goal,
                reachable,
            })?;
            out.tau[k][i] = tau;
            out.allocation[k][i] = expected_allocation(&masses, &rem, tau);
            let served = compensated_sum(rem.atoms().iter().flat_map(|&(r, w)| {
                masses.iter().map(move |&(d, m)| w * m * service_value(kind, d.min(r).min(tau), d, law.mean()))
            }));
            out.service[k][i] = served + unserved_service(law, kind, q);
            used.add(c[i] * x);

            let next = propagate_rem(&rem, &masses, q, tau);
            rem = RemDistribution::new(next);
            if rem.atoms().len() > MAX_REM_ATOMS {
                rem = sample_rem(&rem, FALLBACK_SAMPLES, i as u64);
                out.sampled = true;
            }
        }
    }
    Ok(out)
}

/// Empirical law of `samples` draws from `rem`.
fn sample_rem(rem: &RemDistribution, samples: usize, tag: u64) -> RemDistribution {
    let mut rng = stream_rng(0x7e3a_11ce, tag);
    let w = 1.0 / samples as f64;
    let draws = (0..samples)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * rem.mass();
            let k = rem.cum_mass[1..].partition_point(|&c| c <= u).min(rem.atoms.len() - 1);
            (rem.atoms[k].0, w)
        })
        .collect();
    RemDistribution::new(draws)
}

#[allow(clippy::too_many_arguments)]
fn agent_report(
    target: &ServiceTarget,
    i: usize,
    c: [f64; 2],
    tau: Option<[f64; 2]>,
    allocation: [f64; 2],
    service: [f64; 2],
    mc: Option<MeanEstimate>,
) -> AgentReport {
    let beta = target.beta[i];
    let bound = beta * (c[0] + c[1]) / 2.0;
    let expected_service = mc.map_or((service[0] + service[1]) / 2.0, |m| m.mean);
    AgentReport {
        beta,
        q: target.q[i],
        x: target.x[i],
        c_f: c[0],
        c_b: c[1],
        tau,
        expected_allocation: allocation,
        service_by_order: service,
        expected_service,
        mc,
        bound,
        slack: expected_service - bound,
    }
}

/// Rationing through a single-unit plan on the induced instance (Type-II and
/// Type-III agents only).
pub fn run_rationing(
    inst: &RationingInstance,
    target: &ServiceTarget,
    plan: &SelectionPlan,
    mode: RunMode,
) -> Result<RationingReport, RationingError> {
    if inst.has_type_i() {
        return Err(RationingError::NeedsKnapsackPath);
    }
    let n = inst.n();
    if plan.n() != n {
        return Err(RationingError::PlanSize { plan: plan.n(), agents: n });
    }
    let cal = calibrate_all(inst, target, plan)?;
    let mut traces = Vec::new();
    let mc = match mode {
        RunMode::Exact => None,
        RunMode::MonteCarlo { trials, seed, workers } => {
            let (acc, overdraw) = run_trials(
                trials,
                seed,
                workers,
                || (vec![MeanAccumulator::default(); n], None::<u64>),
                |(acc, overdraw), rng, t| {
                    let order = if rng.random::<bool>() { Order::Forward } else { Order::Backward };
                    let mut rem = 1.0f64;
                    for i in order.sequence(n) {
                        let law = &inst.demands()[i];
                        let (quantile, demand) = crate::instances::draw_quantile_demand(law, rng);
                        let y = if quantile <= target.q[i] {
                            demand.min(rem).min(cal.tau[order.index()][i])
                        } else {
                            0.0
                        };
                        rem -= y;
                        if rem < -PROB_TOL && overdraw.is_none() {
                            *overdraw = Some(t);
                        }
                        acc[i].push(service_value(inst.service()[i], y, demand, law.mean()));
                    }
                },
                |(a, o), (b, p)| {
                    for (x, y) in a.iter_mut().zip(&b) {
                        x.merge(y);
                    }
                    *o = o.or(p);
                },
            );
            if let Some(trial) = overdraw {
                return Err(RationingError::Overdraw { trial });
            }
            for t in 0..trials.min(KEPT_TRACES) {
                traces.push(single_unit_trace(inst, target, &cal.tau, seed, t));
            }
            Some(acc.iter().map(|a| a.estimate(DEFAULT_CONFIDENCE)).collect::<Vec<_>>())
        }
    };
    let agents = (0..n)
        .map(|i| {
            agent_report(
                target,
                i,
                [plan.c_f[i], plan.c_b[i]],
                Some([cal.tau[0][i], cal.tau[1][i]]),
                [cal.allocation[0][i], cal.allocation[1][i]],
                [cal.service[0][i], cal.service[1][i]],
                mc.as_ref().map(|m| m[i]),
            )
        })
        .collect();
    Ok(RationingReport {
        path: ReductionPath::SingleUnit,
        agents,
        sampled_fallback: cal.sampled,
        rem_bound_violations: cal.rem_violations,
        traces,
    })
}

/// Replays trial `t` of the Monte Carlo run, keeping every draw.
fn single_unit_trace(inst: &RationingInstance, target: &ServiceTarget, tau: &[Vec<f64>; 2], seed: u64, t: u64) -> AllocationTrace {
    let mut rng = stream_rng(seed, t);
    let n = inst.n();
    let order = if rng.random::<bool>() { Order::Forward } else { Order::Backward };
    let mut agents = vec![AgentDraw { quantile: 0.0, demand: 0.0, allocation: 0.0, service: 0.0 }; n];
    let mut rem = 1.0f64;
    for i in order.sequence(n) {
        let law = &inst.demands()[i];
        let (quantile, demand) = crate::instances::draw_quantile_demand(law, &mut rng);
        let y = if quantile <= target.q[i] { demand.min(rem).min(tau[order.index()][i]) } else { 0.0 };
        rem -= y;
        agents[i] = AgentDraw { quantile, demand, allocation: y, service: service_value(inst.service()[i], y, demand, law.mean()) };
    }
    AllocationTrace { order, agents }
}

/// Element `i` is active with size `min(D_i, 1)` when `Q_i <= q_i`; accepted
/// elements receive `Y_i = S_i`.
pub fn knapsack_reduction(inst: &RationingInstance, target: &ServiceTarget) -> Result<KnapsackInstance, RationingError> {
    let laws = inst
        .demands()
        .iter()
        .zip(&target.q)
        .map(|(law, &q)| {
            let atoms = merge_atoms(law.masses_below(q).map(|(d, w)| (d.min(1.0), w)).collect(), PROB_TOL);
            let active = compensated_sum(atoms.iter().map(|a| a.1));
            SizeLaw::new(atoms, (1.0 - active).max(0.0))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(KnapsackInstance::new(laws)?)
}

fn rule_for(rules: &[SizeRule], size: f64) -> Option<&SizeRule> {
    rules.iter().find(|r| (r.size - size).abs() <= PROB_TOL)
}

/// Rationing through the knapsack reduction with the closed-form knapsack plan.
pub fn run_rationing_knapsack(
    inst: &RationingInstance,
    target: &ServiceTarget,
    mode: RunMode,
) -> Result<RationingReport, RationingError> {
    let n = inst.n();
    let kinst = knapsack_reduction(inst, target)?;
    let plan: KnapsackPlan = closed_form_knapsack_plan(&kinst)?;
    let run = run_knapsack_exact(&kinst, &plan, None)?;
    let mut allocation = [vec![0.0; n], vec![0.0; n]];
    let mut service = [vec![0.0; n], vec![0.0; n]];
    for order in Order::BOTH {
        let k = order.index();
        for i in 0..n {
            let law = &inst.demands()[i];
            let kind = inst.service()[i];
            let rules = &run.rules[k][i];
            let (mut alloc, mut serv) = (KahanSum::new(), KahanSum::new());
            for (d, m) in masses_below(law, target.q[i]) {
                let s = d.min(1.0);
                let a = rule_for(rules, s).map_or(0.0, SizeRule::realized_rate);
                alloc.add(m * a * s);
                serv.add(m * (a * service_value(kind, s, d, law.mean()) + (1.0 - a) * service_value(kind, 0.0, d, law.mean())));
            }
            allocation[k][i] = alloc.value();
            service[k][i] = serv.value() + unserved_service(law, kind, target.q[i]);
        }
    }
    let mc = match mode {
        RunMode::Exact => None,
        RunMode::MonteCarlo { trials, seed, workers } => {
            let (acc, overdraw) = run_trials(
                trials,
                seed,
                workers,
                || (vec![MeanAccumulator::default(); n], None::<u64>),
                |(acc, overdraw), rng, t| {
                    let order = if rng.random::<bool>() { Order::Forward } else { Order::Backward };
                    let mut fill = 0.0f64;
                    for i in order.sequence(n) {
                        let law = &inst.demands()[i];
                        let (quantile, demand) = crate::instances::draw_quantile_demand(law, rng);
                        let mut y = 0.0;
                        if quantile <= target.q[i] {
                            let s = demand.min(1.0);
                            let p = rule_for(&run.rules[order.index()][i], s).map_or(0.0, |r| r.accept_at(fill));
                            if rng.random::<f64>() < p {
                                y = s;
                                fill += s;
                            }
                        }
                        if fill > 1.0 + PROB_TOL && overdraw.is_none() {
                            *overdraw = Some(t);
                        }
                        acc[i].push(service_value(inst.service()[i], y, demand, law.mean()));
                    }
                },
                |(a, o), (b, p)| {
                    for (x, y) in a.iter_mut().zip(&b) {
                        x.merge(y);
                    }
                    *o = o.or(p);
                },
            );
            if let Some(trial) = overdraw {
                return Err(RationingError::Overdraw { trial });
            }
            Some(acc.iter().map(|a| a.estimate(DEFAULT_CONFIDENCE)).collect::<Vec<_>>())
        }
    };
    let agents = (0..n)
        .map(|i| {
            agent_report(
                target,
                i,
                [plan.c_f[i], plan.c_b[i]],
                None,
                [allocation[0][i], allocation[1][i]],
                [service[0][i], service[1][i]],
                mc.as_ref().map(|m| m[i]),
            )
        })
        .collect();
    Ok(RationingReport {
        path: ReductionPath::Knapsack,
        agents,
        sampled_fallback: false,
        rem_bound_violations: Vec::new(),
        traces: Vec::new(),
    })
}

/// Routes to the knapsack path when any agent is Type-I, otherwise builds
/// the requested single-unit plan on the induced instance.
pub fn ration(
    inst: &RationingInstance,
    target: &ServiceTarget,
    choice: PlanChoice,
    mode: RunMode,
) -> Result<RationingReport, RationingError> {
    if inst.has_type_i() {
        return run_rationing_knapsack(inst, target, mode);
    }
    let induced = target.single_unit_instance()?;
    let plan = match choice {
        PlanChoice::Lp => solve_lp_si(&induced)?,
        PlanChoice::ClosedForm => closed_form_plan(&induced),
    };
    run_rationing(inst, target, &plan, mode)
}
