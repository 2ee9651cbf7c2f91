//! Small numeric helpers shared across modules.

/// Absolute tolerance for probability-mass comparisons.
pub const PROB_TOL: f64 = 1e-12;

/// Slack allowed on plan feasibility checks (absorbs LP round-off).
pub const FEAS_TOL: f64 = 1e-9;

/// Neumaier-compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = KahanSum::new();
        for v in iter {
            s.add(v);
        }
        s
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<KahanSum>().value()
}

/// Merge (value, mass) atoms whose values lie within `tol` of each other.
/// Input need not be sorted; output is sorted by value with positive masses.
pub fn merge_atoms(mut atoms: Vec<(f64, f64)>, tol: f64) -> Vec<(f64, f64)> {
    atoms.retain(|&(_, p)| p > 0.0);
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
    for (v, p) in atoms {
        match out.last_mut() {
            Some(last) if (v - last.0).abs() <= tol => last.1 += p,
            _ => out.push((v, p)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_beats_naive() {
        let xs = std::iter::once(1.0).chain(std::iter::repeat_n(1e-16, 10_000));
        let s = compensated_sum(xs);
        assert!((s - (1.0 + 1e-12)).abs() < 1e-15);
    }

    #[test]
    fn merge_collapses_close_values() {
        let merged = merge_atoms(vec![(0.3, 0.25), (0.1 + 0.2, 0.25), (0.0, 0.5)], 1e-12);
        assert_eq!(merged.len(), 2);
        assert_eq!(merged[0], (0.0, 0.5));
        assert!((merged[1].1 - 0.5).abs() < 1e-15);
    }
}
