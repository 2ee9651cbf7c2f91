//! Closed-form single-unit plans and the online single-unit scheme.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::instances::{Order, SingleUnitInstance};
use crate::lp_si::{alpha_0, SelectionPlan};
use crate::numeric::{KahanSum, FEAS_TOL, PROB_TOL};
use crate::sim::{run_trials, RateCounts, RateEstimate};

#[derive(Debug, Error)]
pub enum SingleUnitError {
    #[error("{z} lies outside [0, {rho}]")]
    Domain { z: f64, rho: f64 },
    #[error("plan is infeasible: element {element} under the {order:?} order needs acceptance probability {param}")]
    InfeasiblePlan { element: usize, order: Order, param: f64 },
    #[error("plan has {plan} entries but the instance has {instance} elements")]
    SizeMismatch { plan: usize, instance: usize },
}

/// The decreasing acceptance curve on `[0, rho]` whose averages give the
/// closed-form plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiCurve {
    rho: f64,
    alpha: f64,
}

impl PhiCurve {
    pub fn new(rho: f64) -> Self {
        Self { rho, alpha: alpha_0(rho) }
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Value at `z`, clamped into `[0, rho]`.
    // Both branches are divided through by e^{ρ/2} so large ρ cannot overflow.
    pub fn eval(&self, z: f64) -> f64 {
        let z = z.clamp(0.0, self.rho);
        let h = self.rho / 2.0;
        if z <= h {
            (2.0 - (z - h).exp()) * self.alpha
        } else {
            (h - z).exp() * self.alpha
        }
    }

    /// Exact integral over `[a, b]` (clamped into `[0, rho]`), split at `rho/2`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        let a = a.clamp(0.0, self.rho);
        let b = b.clamp(a, self.rho);
        let h = self.rho / 2.0;
        let mut total = 0.0;
        if a < h {
            let hi = b.min(h);
            total += (2.0 * (hi - a) - (a - h).exp() * (hi - a).exp_m1()) * self.alpha;
        }
        if b > h {
            let lo = a.max(h);
            total += (h - b).exp() * (b - lo).exp_m1() * self.alpha;
        }
        total
    }

    /// Average over `[a, a + len]`; the limit value `eval(a)` when `len = 0`.
    pub fn average(&self, a: f64, len: f64) -> f64 {
        if len <= 0.0 {
            return self.eval(a);
        }
        self.integral(a, a + len) / len
    }
}

pub fn phi(z: f64, rho: f64) -> Result<f64, SingleUnitError> {
    if !(z >= -PROB_TOL && z <= rho + PROB_TOL) {
        return Err(SingleUnitError::Domain { z, rho });
    }
    Ok(PhiCurve::new(rho).eval(z))
}

/// `c_σ(i)` = average of the curve over the mass interval element `i`
/// occupies in order `σ`.
pub fn closed_form_plan(inst: &SingleUnitInstance) -> SelectionPlan {
    let curve = PhiCurve::new(inst.rho());
    let entries = |order| {
        let prefix = inst.prefix_masses(order);
        prefix.iter().zip(inst.x()).map(|(&a, &x)| curve.average(a, x)).collect::<Vec<_>>()
    };
    SelectionPlan::new(entries(Order::Forward), entries(Order::Backward))
}

/// Bernoulli parameters `c_σ(i) / (1 - Σ_{j <_σ i} x_j c_σ(j))` of the online scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceptanceSchedule {
    x: Vec<f64>,
    params: [Vec<f64>; 2],
    /// `(element, order)` pairs whose denominator vanished; their parameter is 0.
    pub exhausted: Vec<(usize, Order)>,
}

impl AcceptanceSchedule {
    pub fn new(inst: &SingleUnitInstance, plan: &SelectionPlan) -> Result<Self, SingleUnitError> {
        let n = inst.n();
        if plan.n() != n {
            return Err(SingleUnitError::SizeMismatch { plan: plan.n(), instance: n });
        }
        let mut exhausted = Vec::new();
        let mut params = [vec![0.0; n], vec![0.0; n]];
        for order in Order::BOTH {
            let c = plan.get(order);
            let mut used = KahanSum::new();
            for i in order.sequence(n) {
                let room = 1.0 - used.value();
                // 0/0: nothing left and nothing asked for
                let param = if room <= PROB_TOL && c[i] <= FEAS_TOL {
                    exhausted.push((i, order));
                    0.0
                } else if room <= PROB_TOL {
                    f64::INFINITY
                } else {
                    c[i] / room
                };
                if !(-FEAS_TOL..=1.0 + FEAS_TOL).contains(&param) {
                    return Err(SingleUnitError::InfeasiblePlan { element: i, order, param });
                }
                params[order.index()][i] = param.clamp(0.0, 1.0);
                used.add(inst.x()[i] * c[i]);
            }
        }
        Ok(Self { x: inst.x().to_vec(), params, exhausted })
    }

    pub fn param(&self, order: Order, i: usize) -> f64 {
        self.params[order.index()][i]
    }

    /// One run with a fixed order.
    pub fn run_in_order<R: Rng + ?Sized>(&self, order: Order, rng: &mut R) -> CrsRunResult {
        let n = self.x.len();
        let mut active = vec![false; n];
        let mut accepted = None;
        for i in order.sequence(n) {
            active[i] = rng.random::<f64>() < self.x[i];
            if active[i] && accepted.is_none() && rng.random::<f64>() < self.param(order, i) {
                accepted = Some(i);
            }
        }
        CrsRunResult { accepted, order, active }
    }

    /// One run with the order drawn uniformly from the two.
    pub fn run<R: Rng + ?Sized>(&self, rng: &mut R) -> CrsRunResult {
        let order = if rng.random::<bool>() { Order::Forward } else { Order::Backward };
        self.run_in_order(order, rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrsRunResult {
    pub accepted: Option<usize>,
    pub order: Order,
    pub active: Vec<bool>,
}

pub fn run_single_unit(
    inst: &SingleUnitInstance,
    plan: &SelectionPlan,
    rng: &mut ChaCha8Rng,
) -> Result<CrsRunResult, SingleUnitError> {
    Ok(AcceptanceSchedule::new(inst, plan)?.run(rng))
}

/// Conditional acceptance rates of the online scheme, computed from the
/// survival product `Pr[nothing accepted before i] = Π_{j <_σ i} (1 - x_j p_j)`.
pub fn exact_selection_rates(inst: &SingleUnitInstance, plan: &SelectionPlan) -> Result<SelectionPlan, SingleUnitError> {
    let schedule = AcceptanceSchedule::new(inst, plan)?;
    let n = inst.n();
    let mut rates = [vec![0.0; n], vec![0.0; n]];
    for order in Order::BOTH {
        let mut survive = 1.0;
        for i in order.sequence(n) {
            let p = schedule.param(order, i);
            rates[order.index()][i] = survive * p;
            survive *= 1.0 - inst.x()[i] * p;
        }
    }
    let [f, b] = rates;
    Ok(SelectionPlan::new(f, b))
}

/// Empirical conditional acceptance rates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingleUnitMc {
    /// `Pr[accept i | i active, order]`, forward then backward.
    pub per_order: [Vec<RateEstimate>; 2],
    /// `Pr[accept i | i active]` with the order drawn uniformly.
    pub overall: Vec<RateEstimate>,
    pub trials: u64,
}

pub fn simulate_single_unit(
    inst: &SingleUnitInstance,
    plan: &SelectionPlan,
    trials: u64,
    seed: u64,
    workers: usize,
    confidence: f64,
) -> Result<SingleUnitMc, SingleUnitError> {
    let schedule = AcceptanceSchedule::new(inst, plan)?;
    let n = inst.n();
    // slots: [forward 0..n | backward n..2n | overall 2n..3n]
    let counts = run_trials(
        trials,
        seed,
        workers,
        || RateCounts::new(3 * n),
        |acc, rng, _| {
            let run = schedule.run(rng);
            let base = run.order.index() * n;
            for (i, &on) in run.active.iter().enumerate() {
                if on {
                    let hit = run.accepted == Some(i);
                    acc.record(base + i, hit);
                    acc.record(2 * n + i, hit);
                }
            }
        },
        RateCounts::merge,
    );
    let est = counts.estimates(confidence);
    Ok(SingleUnitMc {
        per_order: [est[..n].to_vec(), est[n..2 * n].to_vec()],
        overall: est[2 * n..].to_vec(),
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::stream_rng;
    use proptest::prelude::*;

    /// Walks the full outcome tree (activation, then coin) in arrival order.
    fn brute_rates(inst: &SingleUnitInstance, sched: &AcceptanceSchedule, order: Order) -> Vec<f64> {
        #[allow(clippy::too_many_arguments)]
        fn walk(seq: &[usize], t: usize, taken: bool, p: f64, inst: &SingleUnitInstance, sched: &AcceptanceSchedule, order: Order, out: &mut [f64]) {
            let Some(&i) = seq.get(t) else { return };
            let x = inst.x()[i];
            walk(seq, t + 1, taken, p * (1.0 - x), inst, sched, order, out);
            if taken {
                walk(seq, t + 1, true, p * x, inst, sched, order, out);
            } else {
                let q = sched.param(order, i);
                out[i] += p * x * q;
                walk(seq, t + 1, true, p * x * q, inst, sched, order, out);
                walk(seq, t + 1, false, p * x * (1.0 - q), inst, sched, order, out);
            }
        }
        let seq: Vec<usize> = order.sequence(inst.n()).collect();
        let mut out = vec![0.0; inst.n()];
        walk(&seq, 0, false, 1.0, inst, sched, order, &mut out);
        out.iter().zip(inst.x()).map(|(m, x)| if *x > 0.0 { m / x } else { 0.0 }).collect()
    }

    #[test]
    fn brute_force_tree_agrees_with_recursion() {
        let inst = SingleUnitInstance::new(vec![0.3, 0.8, 0.1, 0.55, 0.9, 0.25]).unwrap();
        for plan in [closed_form_plan(&inst), crate::lp_si::solve_lp_si(&inst).unwrap()] {
            let sched = AcceptanceSchedule::new(&inst, &plan).unwrap();
            let rates = exact_selection_rates(&inst, &plan).unwrap();
            for o in Order::BOTH {
                for (b, r) in brute_rates(&inst, &sched, o).iter().zip(rates.get(o)) {
                    assert!((b - r).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn phi_examples() {
        let a = alpha_0(1.0);
        let e = 0.5f64.exp();
        assert!((phi(0.0, 1.0).unwrap() - (2.0 * e - 1.0) / (1.0 + e)).abs() < 1e-15);
        assert!((phi(0.0, 1.0).unwrap() - 0.867378).abs() < 1e-6);
        assert!((phi(1.0, 1.0).unwrap() - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((phi(0.5, 1.0).unwrap() - a).abs() < 1e-15);
        assert!(phi(1.5, 1.0).is_err());
    }

    #[test]
    fn phi_is_continuous_decreasing_and_symmetric() {
        for rho in [0.25, 1.0, 2.0, 7.0] {
            let c = PhiCurve::new(rho);
            let h = rho / 2.0;
            assert!((c.eval(h) - c.eval(h + 1e-15)).abs() < 1e-12);
            let grid: Vec<f64> = (0..=400).map(|k| rho * k as f64 / 400.0).collect();
            for w in grid.windows(2) {
                assert!(c.eval(w[0]) > c.eval(w[1]));
            }
            for &z in &grid {
                assert!((c.eval(z) + c.eval(rho - z) - 2.0 * alpha_0(rho)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn integral_matches_quadrature() {
        for rho in [0.3, 1.0, 2.5] {
            let c = PhiCurve::new(rho);
            let (a, b) = (rho * 0.1, rho * 0.83);
            let k = 20_000;
            let h = (b - a) / k as f64;
            let mid: f64 = (0..k).map(|m| c.eval(a + (m as f64 + 0.5) * h)).sum::<f64>() * h;
            assert!((c.integral(a, b) - mid).abs() < 1e-8);
        }
    }

    #[test]
    fn single_and_pair_plans() {
        let one = closed_form_plan(&SingleUnitInstance::new(vec![1.0]).unwrap());
        let a = alpha_0(1.0);
        assert!((one.c_f[0] - a).abs() < 1e-12);
        assert!((one.pair_means()[0] - a).abs() < 1e-12);
        let two = closed_form_plan(&SingleUnitInstance::new(vec![0.5, 0.5]).unwrap());
        let c = PhiCurve::new(1.0);
        assert!((two.c_f[0] - 2.0 * c.integral(0.0, 0.5)).abs() < 1e-14);
        assert!((two.c_f[1] - 2.0 * c.integral(0.5, 1.0)).abs() < 1e-14);
        for m in two.pair_means() {
            assert!((m - a).abs() < 1e-12);
        }
        assert!(two.objective > 0.618034);
    }

    #[test]
    fn closed_form_identity_grid() {
        for rho in [0.25, 0.5, 1.0, 2.0] {
            for n in [1usize, 2, 10, 101] {
                if rho > n as f64 {
                    continue;
                }
                let inst = SingleUnitInstance::uniform(n, rho).unwrap();
                let plan = closed_form_plan(&inst);
                assert!((plan.objective - alpha_0(rho)).abs() < 1e-10);
                assert!(plan.is_feasible(&inst));
                for i in 0..n {
                    assert!((plan.c_f[i] - plan.c_b[n - 1 - i]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn two_element_lp_plan_rates() {
        let inst = SingleUnitInstance::new(vec![0.5, 0.5]).unwrap();
        let plan = SelectionPlan::new(vec![1.0, 0.5], vec![0.5, 1.0]);
        let rates = exact_selection_rates(&inst, &plan).unwrap();
        assert_eq!(rates.c_f, vec![1.0, 0.5]);
        assert_eq!(rates.c_b, vec![0.5, 1.0]);
        let sched = AcceptanceSchedule::new(&inst, &plan).unwrap();
        for o in Order::BOTH {
            for (r, c) in brute_rates(&inst, &sched, o).iter().zip(plan.get(o)) {
                assert!((r - c).abs() < 1e-15);
            }
        }
        let zero = exact_selection_rates(&inst, &SelectionPlan::zeros(2)).unwrap();
        assert_eq!(zero.c_f, vec![0.0, 0.0]);
    }

    #[test]
    fn single_element_always_accepted() {
        let inst = SingleUnitInstance::new(vec![1.0]).unwrap();
        let plan = SelectionPlan::new(vec![1.0], vec![1.0]);
        for t in 0..100 {
            let run = run_single_unit(&inst, &plan, &mut stream_rng(5, t)).unwrap();
            assert_eq!(run.accepted, Some(0));
        }
    }

    #[test]
    fn infeasible_plan_rejected_and_exhaustion_flagged() {
        let inst = SingleUnitInstance::new(vec![1.0, 0.5]).unwrap();
        let bad = SelectionPlan::new(vec![1.0, 0.5], vec![0.5, 1.0]);
        assert!(matches!(
            AcceptanceSchedule::new(&inst, &bad),
            Err(SingleUnitError::InfeasiblePlan { element: 1, order: Order::Forward, .. })
        ));
        let drained = SelectionPlan::new(vec![1.0, 0.0], vec![0.0, 0.0]);
        let sched = AcceptanceSchedule::new(&inst, &drained).unwrap();
        assert_eq!(sched.exhausted, vec![(1, Order::Forward)]);
        assert_eq!(sched.param(Order::Forward, 1), 0.0);
    }

    #[test]
    fn closed_form_rates_reproduce_plan() {
        let inst = SingleUnitInstance::uniform(5, 1.0).unwrap();
        let plan = closed_form_plan(&inst);
        let rates = exact_selection_rates(&inst, &plan).unwrap();
        for o in Order::BOTH {
            for (r, c) in rates.get(o).iter().zip(plan.get(o)) {
                assert!((r - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn runs_accept_at_most_one_active_element() {
        let inst = SingleUnitInstance::new(vec![0.4, 0.9, 0.2, 0.6]).unwrap();
        let sched = AcceptanceSchedule::new(&inst, &closed_form_plan(&inst)).unwrap();
        for t in 0..2000 {
            let run = sched.run(&mut stream_rng(2, t));
            if let Some(i) = run.accepted {
                assert!(run.active[i]);
            }
        }
    }

    #[test]
    fn mc_matches_two_element_plan() {
        let inst = SingleUnitInstance::new(vec![0.5, 0.5]).unwrap();
        let plan = SelectionPlan::new(vec![1.0, 0.5], vec![0.5, 1.0]);
        let mc = simulate_single_unit(&inst, &plan, 200_000, 1, 0, 0.999).unwrap();
        for o in Order::BOTH {
            for (est, &c) in mc.per_order[o.index()].iter().zip(plan.get(o)) {
                assert!(est.agrees_with(c, 3.0), "{est:?} vs {c}");
            }
        }
        for est in &mc.overall {
            assert!(est.agrees_with(0.75, 3.0));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn closed_form_is_feasible_with_alpha_pairs(x in prop::collection::vec(0.0f64..1.0, 1..30)) {
            let inst = SingleUnitInstance::new(x).unwrap();
            let plan = closed_form_plan(&inst);
            prop_assert!(plan.is_feasible(&inst));
            let a = alpha_0(inst.rho());
            for m in plan.pair_means() {
                prop_assert!((m - a).abs() < 1e-10);
            }
            let rates = exact_selection_rates(&inst, &plan).unwrap();
            for o in Order::BOTH {
                for (r, c) in rates.get(o).iter().zip(plan.get(o)) {
                    prop_assert!((r - c).abs() < 1e-12);
                }
            }
        }
    }
}
