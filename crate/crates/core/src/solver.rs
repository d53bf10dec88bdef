//! Coefficient synthesis from root conditions on the relative error.
//!
//! Every condition is linear in the coefficients: a vanishing Taylor
//! coefficient `aₙ` of `R(s)` at the origin, or the real or imaginary part
//! of `R(jω)`. Fixed slots move to the right-hand side, the remaining slots
//! are solved for.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectrum::{
    frequency_zero_residual, origin_multiplicity, DEFAULT_MULTIPLICITY_THRESHOLD,
    FREQUENCY_ZERO_TOL,
};
use crate::tableau::{check_admissible, ObreshkovTableau, Violation};

/// A condition row whose free part is below this (after scaling) is treated
/// as identically satisfied by the fixed slots.
pub const DROP_TOL: f64 = 1e-12;
/// Smallest admissible ratio of singular values before the system is SINGULAR.
pub const RANK_TOL: f64 = 1e-12;
/// Least-squares residual above which an overdetermined system is INCONSISTENT.
pub const INCONSISTENCY_TOL: f64 = 1e-9;
/// Fixed-slot agreement required by [`verify_synthesis`].
pub const FIXED_SLOT_TOL: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("invalid constraint set: {0}")]
    InvalidConstraint(String),
    #[error("frequency {omega} rad/s is inadmissible for step {h} s (omega*h must lie in (0, 2π))")]
    Inadmissible { omega: f64, h: f64 },
    #[error("SINGULAR: rank {rank} < {unknowns} unknowns; conditions [{}]", .conditions.join(", "))]
    Singular { rank: usize, unknowns: usize, conditions: Vec<String> },
    #[error("INCONSISTENT: residual {residual:e}; conditions [{}]", .conditions.join(", "))]
    Inconsistent { residual: f64, conditions: Vec<String> },
    #[error("synthesized tableau is invalid: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Degenerate(Vec<Violation>),
}

/// A coefficient slot pinned to a value. `(i, j)` addresses cⁱ₋ⱼ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedSlot {
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

/// Input to [`solve_coefficients`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub k: usize,
    pub m: usize,
    pub h: f64,
    #[serde(default)]
    pub fixed: Vec<FixedSlot>,
    /// Require `a₀ = … = a_{p-1} = 0`.
    pub origin_multiplicity: usize,
    /// Require `R(±jω) = 0` for each entry.
    #[serde(default)]
    pub frequencies: Vec<f64>,
    /// Accept non-square systems and return the least-squares (minimum-norm) solution.
    #[serde(default)]
    pub least_squares: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl ConstraintSet {
    fn single_step(h: f64, fixed: Vec<FixedSlot>, p: usize, freqs: Vec<f64>, label: &str) -> Self {
        Self {
            k: 2,
            m: 1,
            h,
            fixed,
            origin_multiplicity: p,
            frequencies: freqs,
            least_squares: false,
            label: Some(label.to_owned()),
        }
    }

    /// Zero lagging weights, single root at the origin and at `±jω`.
    pub fn integrator_b(h: f64, omega: f64) -> Self {
        let fixed = vec![
            FixedSlot { i: 0, j: 1, value: 1.0 },
            FixedSlot { i: 1, j: 1, value: 0.0 },
            FixedSlot { i: 2, j: 1, value: 0.0 },
        ];
        Self::single_step(h, fixed, 1, vec![omega], "B")
    }

    /// No lagging second-derivative weight, double root at the origin, single root at `±jω`.
    pub fn integrator_e(h: f64, omega: f64) -> Self {
        let fixed = vec![FixedSlot { i: 0, j: 1, value: 1.0 }, FixedSlot { i: 2, j: 1, value: 0.0 }];
        Self::single_step(h, fixed, 2, vec![omega], "E")
    }

    /// No lagging second-derivative weight, fourfold root at the origin.
    pub fn integrator_f(h: f64) -> Self {
        let fixed = vec![FixedSlot { i: 0, j: 1, value: 1.0 }, FixedSlot { i: 2, j: 1, value: 0.0 }];
        Self::single_step(h, fixed, 4, Vec::new(), "F")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    fn check(&self) -> Result<BTreeMap<(usize, usize), f64>, SolveError> {
        let bad = |msg: String| Err(SolveError::InvalidConstraint(msg));
        if self.k == 0 || self.m == 0 {
            return bad(format!("k and m must be positive (k={}, m={})", self.k, self.m));
        }
        if !(self.h.is_finite() && self.h > 0.0) {
            return bad(format!("step size must be positive and finite (h={})", self.h));
        }
        if self.origin_multiplicity == 0 {
            return bad("origin multiplicity must be at least 1".into());
        }
        let mut fixed = BTreeMap::new();
        for s in &self.fixed {
            if s.i > self.k || s.j > self.m {
                return bad(format!("fixed slot ({}, {}) out of range", s.i, s.j));
            }
            if (s.i, s.j) == (0, 0) {
                return bad("slot (0, 0) is the left-hand side and cannot be fixed".into());
            }
            if !s.value.is_finite() {
                return bad(format!("fixed slot ({}, {}) is not finite", s.i, s.j));
            }
            if fixed.insert((s.i, s.j), s.value).is_some() {
                return bad(format!("slot ({}, {}) fixed twice", s.i, s.j));
            }
        }
        let mut seen: Vec<f64> = Vec::new();
        for &w in &self.frequencies {
            if check_admissible(w, self.h).is_err() {
                return Err(SolveError::Inadmissible { omega: w, h: self.h });
            }
            if seen.contains(&w) {
                return bad(format!(
                    "frequency {w} listed twice; multiple roots at nonzero frequencies are unsupported"
                ));
            }
            seen.push(w);
        }
        Ok(fixed)
    }
}

/// Coefficient slots in storage order: c⁰₋₁ … c⁰₋ₘ, then cⁱ₀ … cⁱ₋ₘ per order.
fn all_slots(k: usize, m: usize) -> Vec<(usize, usize)> {
    let mut v: Vec<(usize, usize)> = (1..=m).map(|j| (0, j)).collect();
    for i in 1..=k {
        v.extend((0..=m).map(|j| (i, j)));
    }
    v
}

/// One root condition, `constant - Σ weight(slot)·slot = 0`, expressed in
/// step-scaled slot units (order-`i` slots divided by `hⁱ`).
#[derive(Debug, Clone)]
struct Condition {
    name: String,
    constant: f64,
    weights: Vec<f64>,
}

fn conditions(c: &ConstraintSet, slots: &[(usize, usize)]) -> Vec<Condition> {
    let h = c.h;
    let mut out = Vec::new();
    for n in 0..c.origin_multiplicity {
        // Taylor row n scaled by h^-n; slot (i, j) contributes (-j)^(n-i)/(n-i)!.
        let weights = slots
            .iter()
            .map(|&(i, j)| {
                if n < i {
                    return 0.0;
                }
                let l = n - i;
                let x = -(j as f64);
                (1..=l).fold(1.0, |acc, q| acc * x / q as f64)
            })
            .collect();
        out.push(Condition {
            name: format!("a{n}=0"),
            constant: if n == 0 { 1.0 } else { 0.0 },
            weights,
        });
    }
    for &w in &c.frequencies {
        let theta = w * h;
        let phi: Vec<Complex64> = slots
            .iter()
            .map(|&(i, j)| {
                Complex64::new(0.0, theta).powu(i as u32)
                    * Complex64::new(0.0, -(j as f64) * theta).exp()
            })
            .collect();
        out.push(Condition {
            name: format!("Re R(j{w})=0"),
            constant: 1.0,
            weights: phi.iter().map(|p| p.re).collect(),
        });
        out.push(Condition {
            name: format!("Im R(j{w})=0"),
            constant: 0.0,
            weights: phi.iter().map(|p| p.im).collect(),
        });
    }
    out
}

/// The assembled linear system over the free slots, in scaled units.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    /// Free slots `(i, j)`, one per column.
    pub free: Vec<(usize, usize)>,
    /// Retained condition names, one per row.
    pub conditions: Vec<String>,
    /// Row-normalized matrix on step-scaled unknowns `cⁱ₋ⱼ / hⁱ`.
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    fixed: BTreeMap<(usize, usize), f64>,
}

impl LinearSystem {
    /// `‖M y - r‖₂` for a scaled solution `y`.
    pub fn residual(&self, y: &DVector<f64>) -> f64 {
        (&self.matrix * y - &self.rhs).norm()
    }
}

/// Builds the system for `c`, dropping conditions already met by the fixed slots.
pub fn assemble(c: &ConstraintSet) -> Result<LinearSystem, SolveError> {
    let fixed = c.check()?;
    let slots = all_slots(c.k, c.m);
    let free: Vec<(usize, usize)> = slots.iter().copied().filter(|s| !fixed.contains_key(s)).collect();
    let scale = |i: usize| c.h.powi(i as i32);

    let mut rows: Vec<(String, Vec<f64>, f64)> = Vec::new();
    for cond in conditions(c, &slots) {
        let mut rhs = cond.constant;
        let mut row = Vec::with_capacity(free.len());
        for (&(i, j), w) in slots.iter().zip(&cond.weights) {
            match fixed.get(&(i, j)) {
                Some(v) => rhs -= w * v / scale(i),
                None => row.push(*w),
            }
        }
        let norm = row.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        if norm <= DROP_TOL {
            if rhs.abs() > DROP_TOL {
                return Err(SolveError::Inconsistent {
                    residual: rhs.abs(),
                    conditions: vec![cond.name],
                });
            }
            continue;
        }
        row.iter_mut().for_each(|x| *x /= norm);
        rows.push((cond.name, row, rhs / norm));
    }

    let n_rows = rows.len();
    let n_cols = free.len();
    let matrix = DMatrix::from_fn(n_rows, n_cols, |r, col| rows[r].1[col]);
    let rhs = DVector::from_iterator(n_rows, rows.iter().map(|r| r.2));
    Ok(LinearSystem {
        free,
        conditions: rows.into_iter().map(|r| r.0).collect(),
        matrix,
        rhs,
        fixed,
    })
}

/// Solves the root conditions of `c` for the free coefficients.
pub fn solve_coefficients(c: &ConstraintSet) -> Result<ObreshkovTableau, SolveError> {
    let sys = assemble(c)?;
    let (rows, cols) = sys.matrix.shape();
    if cols == 0 {
        return Err(SolveError::InvalidConstraint("no free coefficient slots".into()));
    }
    if rows < cols && !c.least_squares {
        return Err(SolveError::Singular { rank: rows, unknowns: cols, conditions: sys.conditions });
    }
    if rows == 0 {
        return Err(SolveError::Singular { rank: 0, unknowns: cols, conditions: sys.conditions });
    }

    let svd = sys.matrix.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = RANK_TOL * smax;
    let rank = svd.singular_values.iter().filter(|s| **s > cutoff).count();
    if rank < cols && !c.least_squares {
        return Err(SolveError::Singular { rank, unknowns: cols, conditions: sys.conditions });
    }
    let y = svd
        .solve(&sys.rhs, cutoff)
        .map_err(|e| SolveError::InvalidConstraint(e.to_owned()))?;
    let residual = sys.residual(&y);
    if residual > INCONSISTENCY_TOL && !c.least_squares {
        return Err(SolveError::Inconsistent { residual, conditions: sys.conditions });
    }

    let mut t = ObreshkovTableau {
        k: c.k,
        m: c.m,
        h: c.h,
        c0: vec![0.0; c.m],
        c: vec![vec![0.0; c.m + 1]; c.k],
        label: c.label.clone(),
        omega_select: (c.frequencies.len() == 1).then(|| c.frequencies[0]),
    };
    let mut put = |(i, j): (usize, usize), v: f64| match i {
        0 => t.c0[j - 1] = v,
        _ => t.c[i - 1][j] = v,
    };
    for (&slot, &v) in &sys.fixed {
        put(slot, v);
    }
    for (&slot, yv) in sys.free.iter().zip(y.iter()) {
        put(slot, yv * c.h.powi(slot.0 as i32));
    }
    let violations = t.validate();
    if !violations.is_empty() {
        return Err(SolveError::Degenerate(violations));
    }
    Ok(t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Result of [`verify_synthesis`].
#[derive(Debug, Clone, PartialEq)]
pub struct Certification {
    /// Detected origin multiplicity, `None` if every series term vanished.
    pub origin_multiplicity: Option<usize>,
    pub checks: Vec<CertCheck>,
}

impl Certification {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CertCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for Certification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let mark = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{mark} {}: {}", c.name, c.detail)?;
        }
        write!(f, "certification {}", if self.passed() { "passed" } else { "FAILED" })
    }
}

/// Re-checks a synthesized tableau against its constraints through the
/// spectrum routines.
pub fn verify_synthesis(t: &ObreshkovTableau, c: &ConstraintSet) -> Certification {
    let mut checks = Vec::new();
    let mult = origin_multiplicity(t, DEFAULT_MULTIPLICITY_THRESHOLD).ok();
    checks.push(CertCheck {
        name: "origin multiplicity".into(),
        passed: mult.is_none_or(|p| p >= c.origin_multiplicity),
        detail: match mult {
            Some(p) => format!("{p} (required >= {})", c.origin_multiplicity),
            None => "all series terms vanish".into(),
        },
    });
    for &w in &c.frequencies {
        let r = frequency_zero_residual(t, w);
        checks.push(CertCheck {
            name: format!("zero at omega={w}"),
            passed: r <= FREQUENCY_ZERO_TOL,
            detail: format!("|R(jω)| = {r:e} (limit {FREQUENCY_ZERO_TOL:e})"),
        });
    }
    for s in &c.fixed {
        let in_range = s.i <= t.k && s.j <= t.m && (s.i, s.j) != (0, 0);
        let got = if in_range { t.coeff(s.i, s.j) } else { f64::NAN };
        let passed = (got - s.value).abs() <= FIXED_SLOT_TOL * s.value.abs().max(1.0);
        checks.push(CertCheck {
            name: format!("fixed c^{}_-{}", s.i, s.j),
            passed,
            detail: format!("{got:e} (required {:e})", s.value),
        });
    }
    Certification { origin_multiplicity: mult, checks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::taylor_coefficients;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn recovers_b() {
        let (h, w) = (1e-3, 120.0 * std::f64::consts::PI);
        let t = solve_coefficients(&ConstraintSet::integrator_b(h, w)).unwrap();
        let th: f64 = w * h;
        assert!(rel(t.c[0][0], th.sin() / w) < 1e-12);
        assert!(rel(t.c[1][0], (th.cos() - 1.0) / (w * w)) < 1e-12);
        assert_eq!((t.c[0][1], t.c[1][1]), (0.0, 0.0));
    }

    #[test]
    fn recovers_f() {
        for h in [1.0, 1e-3, 0.37] {
            let t = solve_coefficients(&ConstraintSet::integrator_f(h)).unwrap();
            assert!(rel(t.c[0][0], 2.0 * h / 3.0) < 1e-12);
            assert!(rel(t.c[0][1], h / 3.0) < 1e-12);
            assert!(rel(t.c[1][0], -h * h / 6.0) < 1e-12);
        }
    }

    /// Independent route: eliminate by hand on the 3×3 system
    /// `c10 + c11 = h`, `Re R(jω) = 0`, `Im R(jω) = 0` (with c⁰₋₁ = 1, c²₋₁ = 0).
    fn e_by_elimination(w: f64, h: f64) -> (f64, f64, f64) {
        let th = w * h;
        // Im: sin θ - ω c10 - ω cos θ c11 = 0, with c10 = h - c11.
        let c11 = (th.sin() / w - h) / (th.cos() - 1.0);
        let c10 = h - c11;
        // Re: 1 - cos θ - ω sin θ c11 + ω² c20 = 0.
        let c20 = (w * th.sin() * c11 - 1.0 + th.cos()) / (w * w);
        (c10, c11, c20)
    }

    #[test]
    fn e_unit_parameters() {
        let t = solve_coefficients(&ConstraintSet::integrator_e(1.0, 1.0)).unwrap();
        assert!((t.c[0][0] - 0.655146).abs() < 2e-6);
        assert!((t.c[0][1] - 0.344855).abs() < 2e-6);
        assert!((t.c[1][0] + 0.169511).abs() < 2e-6);
        let (c10, c11, c20) = e_by_elimination(1.0, 1.0);
        assert!(rel(t.c[0][0], c10) < 1e-12);
        assert!(rel(t.c[0][1], c11) < 1e-12);
        assert!(rel(t.c[1][0], c20) < 1e-12);
        assert!(frequency_zero_residual(&t, 1.0) < 1e-12);
    }

    #[test]
    fn e_by_elimination_matches_over_range() {
        for &(w, h) in &[(376.99, 1e-3), (376.99, 4e-3), (10.0, 0.3), (2.0, 2.0)] {
            let t = solve_coefficients(&ConstraintSet::integrator_e(h, w)).unwrap();
            let (c10, c11, c20) = e_by_elimination(w, h);
            assert!(rel(t.c[0][0], c10) < 1e-10);
            assert!(rel(t.c[0][1], c11) < 1e-10);
            assert!(rel(t.c[1][0], c20) < 1e-10);
        }
    }

    #[test]
    fn recovers_tr() {
        let h = 0.25;
        let c = ConstraintSet {
            k: 1,
            m: 1,
            h,
            fixed: vec![FixedSlot { i: 0, j: 1, value: 1.0 }, FixedSlot { i: 1, j: 1, value: h / 2.0 }],
            origin_multiplicity: 3,
            frequencies: vec![],
            least_squares: false,
            label: None,
        };
        let sys = assemble(&c).unwrap();
        assert_eq!(sys.conditions, vec!["a1=0".to_string()]);
        let t = solve_coefficients(&c).unwrap();
        assert_eq!(t.c[0][0], h / 2.0);
        let a = taylor_coefficients(&t, 3);
        assert!(a[2].abs() < 1e-15);
    }

    #[test]
    fn overdetermined_is_inconsistent() {
        let mut c = ConstraintSet::integrator_e(1e-3, 376.99);
        c.origin_multiplicity = 4;
        match solve_coefficients(&c) {
            Err(SolveError::Inconsistent { residual, conditions }) => {
                assert!(residual > INCONSISTENCY_TOL);
                assert_eq!(conditions.len(), 5);
            }
            other => panic!("expected INCONSISTENT, got {other:?}"),
        }
        c.least_squares = true;
        let t = solve_coefficients(&c).unwrap();
        assert!(!verify_synthesis(&t, &c).passed());
    }

    #[test]
    fn underdetermined_is_singular() {
        let mut c = ConstraintSet::integrator_f(1e-3);
        c.origin_multiplicity = 3;
        assert!(matches!(
            solve_coefficients(&c),
            Err(SolveError::Singular { rank: 2, unknowns: 3, .. })
        ));
        c.least_squares = true;
        let t = solve_coefficients(&c).unwrap();
        assert!(verify_synthesis(&t, &c).passed());
    }

    #[test]
    fn fixed_slots_contradicting_a_condition() {
        // c⁰₋₁ = 0.5 makes a₀ = 0 unreachable once every c⁰ slot is fixed.
        let c = ConstraintSet {
            k: 1,
            m: 1,
            h: 0.1,
            fixed: vec![FixedSlot { i: 0, j: 1, value: 0.5 }],
            origin_multiplicity: 2,
            frequencies: vec![],
            least_squares: false,
            label: None,
        };
        assert!(matches!(
            solve_coefficients(&c),
            Err(SolveError::Inconsistent { conditions, .. }) if conditions == vec!["a0=0".to_string()]
        ));
    }

    #[test]
    fn constraint_validation() {
        let mut c = ConstraintSet::integrator_f(1e-3);
        c.fixed.push(FixedSlot { i: 0, j: 0, value: 1.0 });
        assert!(matches!(solve_coefficients(&c), Err(SolveError::InvalidConstraint(_))));

        let mut c = ConstraintSet::integrator_f(1e-3);
        c.fixed.push(FixedSlot { i: 3, j: 0, value: 1.0 });
        assert!(matches!(solve_coefficients(&c), Err(SolveError::InvalidConstraint(_))));

        let mut c = ConstraintSet::integrator_e(1e-3, 100.0);
        c.frequencies.push(100.0);
        assert!(matches!(solve_coefficients(&c), Err(SolveError::InvalidConstraint(_))));

        let c = ConstraintSet::integrator_e(1.0, 7.0);
        assert!(matches!(solve_coefficients(&c), Err(SolveError::Inadmissible { .. })));

        let mut c = ConstraintSet::integrator_f(1e-3);
        c.origin_multiplicity = 0;
        assert!(matches!(solve_coefficients(&c), Err(SolveError::InvalidConstraint(_))));
    }

    #[test]
    fn certification_reports() {
        let (h, w) = (1e-3, 376.99);
        let c = ConstraintSet::integrator_e(h, w);
        let t = solve_coefficients(&c).unwrap();
        let cert = verify_synthesis(&t, &c);
        assert!(cert.passed(), "{cert}");
        assert_eq!(cert.origin_multiplicity, Some(2));

        let mut bad = t.clone();
        bad.c[1][1] = 1e-9;
        let cert = verify_synthesis(&bad, &c);
        let failed: Vec<_> = cert.failures().map(|c| c.name.clone()).collect();
        assert!(failed.contains(&"fixed c^2_-1".to_string()));
        assert!(failed.iter().any(|n| n.starts_with("zero at omega")));

        let f = ConstraintSet::integrator_f(0.5);
        let tf = solve_coefficients(&f).unwrap();
        let cert = verify_synthesis(&tf, &f);
        assert!(cert.passed());
        assert_eq!(cert.origin_multiplicity, Some(4));
    }

    #[test]
    fn constraint_json() {
        let src = r#"{"k":2,"m":1,"h":1.0,"fixed":[{"i":0,"j":1,"value":1.0},{"i":2,"j":1,"value":0.0}],
                      "origin_multiplicity":2,"frequencies":[1.0]}"#;
        let c = ConstraintSet::from_json(src).unwrap();
        assert!(!c.least_squares);
        let mut e = ConstraintSet::integrator_e(1.0, 1.0);
        e.label = None;
        assert_eq!(c, e);
    }
}
