//! The instance-optimal single-unit LP, its simplex solution, and the
//! explicit dual certificates for uniform instances.

use serde::Serialize;
use thiserror::Error;

use crate::instances::{InstanceError, Order, SingleUnitInstance};
use crate::numeric::{KahanSum, FEAS_TOL};
use crate::simplex::{self, SimplexError};

#[derive(Debug, Error)]
pub enum LpError {
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error("simplex failed: {0}")]
    Simplex(#[from] SimplexError),
    #[error("solver returned a plan violating feasibility by {violation:e}")]
    NumericalFailure { violation: f64 },
    #[error("dual certificate needs an odd element count, got {n}")]
    EvenSize { n: usize },
    #[error("{z} lies outside [{lo}, {hi}]")]
    Domain { z: f64, lo: f64, hi: f64 },
}

/// Selection guarantee `e^{rho/2} / (1 + e^{rho/2} rho)` of the forward-backward
/// scheme on total mass `rho`.
pub fn alpha_0(rho: f64) -> f64 {
    // same value, but no overflow for large rho
    1.0 / ((-rho / 2.0).exp() + rho)
}

/// Conditional acceptance probabilities under each order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionPlan {
    pub c_f: Vec<f64>,
    pub c_b: Vec<f64>,
    /// `min_i (c_f(i) + c_b(i)) / 2`.
    pub objective: f64,
}

impl SelectionPlan {
    pub fn new(c_f: Vec<f64>, c_b: Vec<f64>) -> Self {
        assert_eq!(c_f.len(), c_b.len(), "plan orders must have equal length");
        let objective = c_f
            .iter()
            .zip(&c_b)
            .map(|(f, b)| (f + b) / 2.0)
            .fold(f64::INFINITY, f64::min);
        Self { c_f, c_b, objective }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(vec![0.0; n], vec![0.0; n])
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

    /// Largest violation of `0 <= c <= 1` and of
    /// `c_σ(i) <= 1 - Σ_{j <_σ i} x_j c_σ(j)` over both orders.
    pub fn max_violation(&self, inst: &SingleUnitInstance) -> f64 {
        assert_eq!(self.n(), inst.n(), "plan and instance sizes differ");
        let n = inst.n();
        let mut worst: f64 = 0.0;
        for order in Order::BOTH {
            let c = self.get(order);
            let mut used = KahanSum::new();
            for i in order.sequence(n) {
                worst = worst.max(-c[i]).max(c[i] - 1.0).max(c[i] - (1.0 - used.value()));
                used.add(inst.x()[i] * c[i]);
            }
        }
        worst
    }

    pub fn is_feasible(&self, inst: &SingleUnitInstance) -> bool {
        self.max_violation(inst) <= FEAS_TOL
    }
}

/// Plan plus the row prices of the terminal simplex basis.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub plan: SelectionPlan,
    /// LP optimum as reported by the tableau.
    pub lpopt: f64,
    /// Prices of the `n` pair rows followed by the `2n` order rows
    /// (forward rows indexed by element, then backward).
    pub duals: Vec<f64>,
    pub dual_objective: f64,
    /// Largest violation of the dual constraints by `duals`.
    pub max_dual_violation: f64,
    pub pivots: usize,
}

/// Column layout: `beta`, then `c_f(0..n)`, then `c_b(0..n)`.
fn build_lp(inst: &SingleUnitInstance) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let n = inst.n();
    let cols = 2 * n + 1;
    let mut a = Vec::with_capacity(3 * n);
    let mut b = Vec::with_capacity(3 * n);
    for i in 0..n {
        let mut row = vec![0.0; cols];
        row[0] = 1.0;
        row[1 + i] = -0.5;
        row[1 + n + i] = -0.5;
        a.push(row);
        b.push(0.0);
    }
    for (k, order) in Order::BOTH.into_iter().enumerate() {
        let base = 1 + k * n;
        for i in 0..n {
            let mut row = vec![0.0; cols];
            row[base + i] = 1.0;
            for j in order.sequence(n).take_while(|&j| j != i) {
                row[base + j] = inst.x()[j];
            }
            a.push(row);
            b.push(1.0);
        }
    }
    let mut c = vec![0.0; cols];
    c[0] = 1.0;
    (a, b, c)
}

pub fn solve_lp_si_detailed(inst: &SingleUnitInstance) -> Result<LpSolution, LpError> {
    let n = inst.n();
    let (a, b, c) = build_lp(inst);
    let sol = simplex::maximize(&a, &b, &c, FEAS_TOL)?;
    let c_f: Vec<f64> = sol.primal[1..=n].iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let c_b: Vec<f64> = sol.primal[1 + n..].iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let plan = SelectionPlan::new(c_f, c_b);
    let violation = plan.max_violation(inst);
    if violation > FEAS_TOL || (plan.objective - sol.objective).abs() > FEAS_TOL {
        return Err(LpError::NumericalFailure { violation: violation.max((plan.objective - sol.objective).abs()) });
    }

    // Dual of max c^T v, A v <= b is min b^T u, A^T u >= c, u >= 0.
    let dual_objective = b.iter().zip(&sol.dual).map(|(bi, ui)| bi * ui).collect::<KahanSum>().value();
    let mut max_dual_violation: f64 = 0.0;
    for j in 0..c.len() {
        let lhs = a.iter().zip(&sol.dual).map(|(row, u)| row[j] * u).collect::<KahanSum>().value();
        max_dual_violation = max_dual_violation.max(c[j] - lhs);
    }
    Ok(LpSolution {
        lpopt: sol.objective,
        plan,
        duals: sol.dual,
        dual_objective,
        max_dual_violation,
        pivots: sol.pivots,
    })
}

/// Optimal plan of the instance-optimal LP; its objective is `LPOPT(n, x)`.
pub fn solve_lp_si(inst: &SingleUnitInstance) -> Result<SelectionPlan, LpError> {
    solve_lp_si_detailed(inst).map(|s| s.plan)
}

/// Feasible solution of the scaled dual of the LP on a uniform instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualCertificate {
    pub rho: f64,
    pub xi: Vec<f64>,
    pub y_f: Vec<f64>,
    pub y_b: Vec<f64>,
    /// `Σ_i (y_f(i) + y_b(i)) / N`, an upper bound on LPOPT when feasible.
    pub objective: f64,
}

impl DualCertificate {
    pub fn new(rho: f64, xi: Vec<f64>, y_f: Vec<f64>, y_b: Vec<f64>) -> Self {
        let big_n = xi.len() as f64;
        let objective = y_f.iter().chain(&y_b).copied().collect::<KahanSum>().value() / big_n;
        Self { rho, xi, y_f, y_b, objective }
    }

    pub fn y(&self, order: Order) -> &[f64] {
        match order {
            Order::Forward => &self.y_f,
            Order::Backward => &self.y_b,
        }
    }
}

/// `ρ e^{z - ρ/2} / (2 (1 + e^{ρ/2} ρ))` on `[ρ/2, ρ]`.
pub fn gamma(z: f64, rho: f64) -> Result<f64, LpError> {
    let (lo, hi) = (rho / 2.0, rho);
    if !(z >= lo - 1e-12 && z <= hi + 1e-12) {
        return Err(LpError::Domain { z, lo, hi });
    }
    Ok(gamma_unchecked(z, rho))
}

fn gamma_unchecked(z: f64, rho: f64) -> f64 {
    // e^{z - ρ/2} / (1 + e^{ρ/2} ρ) = e^{z - ρ} α₀
    rho * (z - rho).exp() * alpha_0(rho) / 2.0
}

/// The explicit certificate on `N = 2n + 1` elements of mass `ρ/N`.
pub fn dual_certificate_uniform(big_n: usize, rho: f64) -> Result<DualCertificate, LpError> {
    if big_n.is_multiple_of(2) {
        return Err(LpError::EvenSize { n: big_n });
    }
    let mid = big_n / 2;
    let nf = big_n as f64;
    let a0 = alpha_0(rho);
    let spike_xi = (1.0 - rho * a0 * (nf - 1.0) / nf) * nf;
    let xi: Vec<f64> = (0..big_n).map(|i| if i == mid { spike_xi } else { rho * a0 }).collect();
    let spike_y = spike_xi / 2.0 + 0.5;
    // 1-based position p = i + 1
    let y_f: Vec<f64> = (0..big_n)
        .map(|i| match i.cmp(&mid) {
            std::cmp::Ordering::Less => 0.0,
            std::cmp::Ordering::Equal => spike_y,
            std::cmp::Ordering::Greater => gamma_unchecked(rho * (i + 1) as f64 / nf, rho),
        })
        .collect();
    let y_b: Vec<f64> = (0..big_n).map(|i| y_f[big_n - 1 - i]).collect();
    Ok(DualCertificate::new(rho, xi, y_f, y_b))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualViolation {
    /// Largest `max(0, ξ(i)/2 - y_σ(i) - Σ_{j >_σ i} ρ y_σ(j)/N)`, also
    /// covering negativity of any entry.
    pub max_violation: f64,
    /// `Σ ξ(i)/N - 1`; negative means the mass row is violated.
    pub xi_slack: f64,
    /// Element and order of the worst row constraint, if any is violated.
    pub worst: Option<(usize, Order)>,
}

impl DualViolation {
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.max_violation <= tol && self.xi_slack >= -tol
    }
}

pub fn dual_feasibility(cert: &DualCertificate, rho: f64) -> DualViolation {
    let big_n = cert.xi.len();
    let nf = big_n as f64;
    let mut max_violation: f64 = 0.0;
    let mut worst = None;
    for order in Order::BOTH {
        let y = cert.y(order);
        // walk backwards through the arrival order to accumulate later entries
        let mut later = KahanSum::new();
        for i in order.sequence(big_n).rev() {
            let v = cert.xi[i] / 2.0 - y[i] - rho * later.value() / nf;
            if v > max_violation {
                max_violation = v;
                worst = Some((i, order));
            }
            later.add(y[i]);
        }
    }
    let negative = cert
        .xi
        .iter()
        .chain(&cert.y_f)
        .chain(&cert.y_b)
        .fold(0.0f64, |m, &v| if v < 0.0 { m.max(-v) } else { m });
    max_violation = max_violation.max(negative);
    let xi_slack = cert.xi.iter().copied().collect::<KahanSum>().value() / nf - 1.0;
    DualViolation { max_violation, xi_slack, worst }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn alpha_examples() {
        assert_eq!(alpha_0(0.0), 1.0);
        assert!((alpha_0(1.0) - 0.622459331201855).abs() < 1e-12);
        assert!((alpha_0(2.0) - 1.0 / (2.0 + (-1.0f64).exp())).abs() < 1e-15);
        for rho in [0.1, 0.5, 1.0, 2.0, 5.0, 40.0] {
            let a = alpha_0(rho);
            assert!((1.0 - a * rho - a * (-rho / 2.0).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_element_lp() {
        let inst = SingleUnitInstance::new(vec![1.0]).unwrap();
        let plan = solve_lp_si(&inst).unwrap();
        assert!((plan.objective - 1.0).abs() < 1e-12);
        assert_eq!(plan.c_f, vec![1.0]);
    }

    /// Grid search over all four plan entries, independent of the simplex.
    fn grid_lpopt_two(x: [f64; 2], steps: usize) -> f64 {
        let h = 1.0 / steps as f64;
        let mut best: f64 = 0.0;
        for a in 0..=steps {
            for b in 0..=steps {
                let (f0, b1) = (a as f64 * h, b as f64 * h);
                // given the first entries, the second entries are set to their maxima
                let f1 = 1.0 - x[0] * f0;
                let b0 = 1.0 - x[1] * b1;
                best = best.max(((f0 + b0) / 2.0).min((f1 + b1) / 2.0));
            }
        }
        best
    }

    #[test]
    fn two_element_lp_matches_grid() {
        let inst = SingleUnitInstance::new(vec![0.5, 0.5]).unwrap();
        let sol = solve_lp_si_detailed(&inst).unwrap();
        assert!((sol.lpopt - 0.75).abs() < 1e-12);
        assert!((sol.plan.c_f[0] - 1.0).abs() < 1e-12 && (sol.plan.c_f[1] - 0.5).abs() < 1e-12);
        assert!((sol.plan.c_b[0] - 0.5).abs() < 1e-12 && (sol.plan.c_b[1] - 1.0).abs() < 1e-12);
        assert!((grid_lpopt_two([0.5, 0.5], 200) - 0.75).abs() < 1e-12);
        for x in [[0.3, 0.9], [1.0, 1.0], [0.0, 0.7]] {
            let lp = solve_lp_si(&SingleUnitInstance::new(x.to_vec()).unwrap()).unwrap();
            let grid = grid_lpopt_two(x, 400);
            assert!(grid <= lp.objective + 1e-9);
            assert!(lp.objective - grid < 5e-3, "x={x:?} lp={} grid={grid}", lp.objective);
        }
    }

    #[test]
    fn simplex_duals_close_the_gap() {
        let inst = SingleUnitInstance::uniform(21, 1.0).unwrap();
        let sol = solve_lp_si_detailed(&inst).unwrap();
        assert!((sol.dual_objective - sol.lpopt).abs() < 1e-9);
        assert!(sol.max_dual_violation < 1e-9);
    }

    #[test]
    fn uniform_101_in_window() {
        let inst = SingleUnitInstance::uniform(101, 1.0).unwrap();
        let lp = solve_lp_si(&inst).unwrap();
        let a = alpha_0(1.0);
        assert!(lp.objective >= a - 1e-9 && lp.objective <= a + 3.0 / 101.0);
    }

    #[test]
    fn certificate_three_elements() {
        let cert = dual_certificate_uniform(3, 1.0).unwrap();
        let a = alpha_0(1.0);
        assert!((cert.xi[0] - a).abs() < 1e-12);
        assert!((cert.xi[1] - (3.0 - 2.0 * a)).abs() < 1e-12);
        assert!((cert.xi[1] - 1.75508).abs() < 1e-5);
        assert!((cert.objective - 1.12585).abs() < 1e-5);
        let report = dual_feasibility(&cert, 1.0);
        assert!(report.is_feasible(1e-9), "{report:?}");
        assert!(cert.objective <= a + 3.0 / 3.0);
        assert!(matches!(dual_certificate_uniform(4, 1.0), Err(LpError::EvenSize { n: 4 })));
    }

    #[test]
    fn zero_certificate_misses_mass_row() {
        let cert = DualCertificate::new(1.0, vec![0.0; 5], vec![0.0; 5], vec![0.0; 5]);
        let report = dual_feasibility(&cert, 1.0);
        assert_eq!(report.max_violation, 0.0);
        assert!((report.xi_slack + 1.0).abs() < 1e-15);
    }

    #[test]
    fn weak_duality_on_uniform_21() {
        let cert = dual_certificate_uniform(21, 1.0).unwrap();
        let lp = solve_lp_si(&SingleUnitInstance::uniform(21, 1.0).unwrap()).unwrap();
        assert!(dual_feasibility(&cert, 1.0).is_feasible(1e-9));
        assert!(lp.objective <= cert.objective + 1e-9);
    }

    #[test]
    fn large_certificate_bound() {
        let cert = dual_certificate_uniform(2001, 1.0).unwrap();
        assert!(dual_feasibility(&cert, 1.0).is_feasible(1e-9));
        assert!(cert.objective <= alpha_0(1.0) + 3.0 / 2001.0);
    }

    fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, k: usize) -> f64 {
        let h = (b - a) / (2 * k) as f64;
        let mut s = f(a) + f(b);
        for m in 1..2 * k {
            s += f(a + m as f64 * h) * if m % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn gamma_examples_and_identity() {
        let a = alpha_0(1.0);
        assert!((gamma(1.0, 1.0).unwrap() - a / 2.0).abs() < 1e-15);
        let e = 0.5f64.exp();
        assert!((gamma(0.5, 1.0).unwrap() - 1.0 / (2.0 * (1.0 + e))).abs() < 1e-15);
        assert!((gamma(0.5, 1.0).unwrap() - 0.18877).abs() < 1e-5);
        for rho in [0.25, 1.0, 2.0, 3.0] {
            let a = alpha_0(rho);
            let mid = gamma(rho / 2.0, rho).unwrap();
            assert!((mid - rho * a * (-rho / 2.0).exp() / 2.0).abs() < 1e-12);
            assert!((mid - rho * (1.0 - a * rho) / 2.0).abs() < 1e-12);
            for k in 0..=20 {
                let z = rho / 2.0 + rho / 2.0 * k as f64 / 20.0;
                let integral = simpson(|t| gamma(t, rho).unwrap(), z, rho, 200);
                assert!((gamma(z, rho).unwrap() + integral - rho * a / 2.0).abs() < 1e-10);
            }
        }
        assert!(matches!(gamma(0.2, 1.0), Err(LpError::Domain { .. })));
    }

    #[test]
    fn gamma_is_lipschitz_and_increasing() {
        for rho in [0.5, 1.0, 2.0] {
            let grid: Vec<f64> = (0..=200).map(|k| rho / 2.0 + rho / 2.0 * k as f64 / 200.0).collect();
            for w in grid.windows(2) {
                let (g0, g1) = (gamma(w[0], rho).unwrap(), gamma(w[1], rho).unwrap());
                assert!(g1 > g0);
                assert!(g1 - g0 <= w[1] - w[0]);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn lp_is_reversal_invariant_and_budgeted(x in prop::collection::vec(0.0f64..1.0, 1..9)) {
            let inst = SingleUnitInstance::new(x).unwrap();
            let sol = solve_lp_si_detailed(&inst).unwrap();
            let rev = solve_lp_si(&inst.reversed()).unwrap();
            prop_assert!((sol.plan.objective - rev.objective).abs() < 1e-9);
            prop_assert!(sol.plan.is_feasible(&inst));
            prop_assert!((sol.dual_objective - sol.lpopt).abs() < 1e-9);
            for order in Order::BOTH {
                let used: f64 = inst.x().iter().zip(sol.plan.get(order)).map(|(x, c)| x * c).sum();
                prop_assert!(used <= 1.0 + 1e-9);
            }
            // the closed-form guarantee is a floor for the optimum
            prop_assert!(sol.lpopt >= alpha_0(inst.rho()) - 1e-9);
        }
    }
}
