//! Coefficient tableaus of Obreshkov-like integrators.
//!
//! An integrator of highest derivative order `k` over `m` previous steps is
//!
//! ```text
//! u_t = Σ_{j=1..m} c⁰₋ⱼ u_{t-jh} + Σ_{i=1..k} Σ_{j=0..m} cⁱ₋ⱼ u⁽ⁱ⁾_{t-jh}
//! ```
//!
//! [`ObreshkovTableau`] stores those coefficients densely, [`make_catalog`]
//! builds the named members (BE, BDF2, TR and the second-derivative family
//! A..F), and [`ObreshkovTableau::differentiator_form`] rearranges a tableau
//! into the recursion that produces the highest derivative.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::solver::{solve_coefficients, ConstraintSet, SolveError};

/// Tolerance on `Σ c⁰₋ⱼ = 1`.
pub const CONSISTENCY_TOL: f64 = 1e-12;

/// Distance from `cos(ωh) = 1` below which the trigonometric
/// coefficient formulas are considered singular.
pub const ADMISSIBILITY_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TableauError {
    #[error("unknown integrator `{0}` (expected one of BE, BDF2, TR, A, B, C, D, E, F)")]
    UnknownIntegrator(String),
    #[error("integrator {0} requires omega_select")]
    MissingOmegaSelect(Integrator),
    #[error("integrator {0} does not take omega_select")]
    UnexpectedOmegaSelect(Integrator),
    #[error("step size must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("omega_select must be positive and finite, got {0}")]
    InvalidOmega(f64),
    #[error("omega_select*h = {0} is outside the admissible window (0, 2π)")]
    Inadmissible(f64),
    #[error("invalid tableau: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("coefficient synthesis failed: {0}")]
    Synthesis(#[from] SolveError),
    #[error("malformed tableau JSON: {0}")]
    Parse(#[from] serde_json::Error),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// A single broken invariant reported by [`ObreshkovTableau::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    ZeroOrder,
    ZeroSteps,
    BadStep(f64),
    BadOmegaSelect(f64),
    /// `c0` does not hold `m` entries.
    C0Length { expected: usize, found: usize },
    /// `c` does not hold `k` rows.
    RowCount { expected: usize, found: usize },
    /// Row for derivative order `order` does not hold `m + 1` entries.
    RowLength { order: usize, expected: usize, found: usize },
    NonFinite { order: usize, step: usize },
    LeadingZero,
    Inconsistent { sum: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ZeroOrder => write!(f, "derivative order k must be at least 1"),
            Self::ZeroSteps => write!(f, "step count m must be at least 1"),
            Self::BadStep(h) => write!(f, "step size h must be positive and finite (got {h})"),
            Self::BadOmegaSelect(w) => {
                write!(f, "omega_select must be positive and finite (got {w})")
            }
            Self::C0Length { expected, found } => {
                write!(f, "c0 has {found} entries, expected {expected}")
            }
            Self::RowCount { expected, found } => {
                write!(f, "c has {found} rows, expected {expected}")
            }
            Self::RowLength { order, expected, found } => write!(
                f,
                "coefficient row for order {order} has {found} entries, expected {expected}"
            ),
            Self::NonFinite { order, step } => {
                write!(f, "coefficient c^{order}_-{step} is not finite")
            }
            Self::LeadingZero => write!(f, "c_0^k is zero"),
            Self::Inconsistent { sum } => write!(f, "consistency sum ≠ 1 (sum of c0 is {sum})"),
        }
    }
}

/// Named integrators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Integrator {
    /// Backward Euler.
    Be,
    /// Two-step backward differentiation formula.
    Bdf2,
    /// Implicit trapezoidal rule.
    Tr,
    A,
    B,
    C,
    D,
    /// Frequency-optimized single-step member with zero feedback on u''.
    E,
    F,
}

impl Integrator {
    pub const ALL: [Integrator; 9] = [
        Self::Be,
        Self::Bdf2,
        Self::Tr,
        Self::A,
        Self::B,
        Self::C,
        Self::D,
        Self::E,
        Self::F,
    ];

    /// The single-step second-derivative family, in column order.
    pub const SECOND_ORDER: [Integrator; 6] = [Self::A, Self::B, Self::C, Self::D, Self::E, Self::F];

    pub fn name(self) -> &'static str {
        match self {
            Self::Be => "BE",
            Self::Bdf2 => "BDF2",
            Self::Tr => "TR",
            Self::A => "A",
            Self::B => "B",
            Self::C => "C",
            Self::D => "D",
            Self::E => "E",
            Self::F => "F",
        }
    }

    /// Whether the member is tuned to a selected angular frequency.
    pub fn is_frequency_optimized(self) -> bool {
        matches!(self, Self::A | Self::B | Self::E)
    }
}

impl fmt::Display for Integrator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Integrator {
    type Err = TableauError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Integrator::ALL
            .into_iter()
            .find(|i| i.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| TableauError::UnknownIntegrator(s.to_owned()))
    }
}

/// Coefficients of an Obreshkov-like integrator.
///
/// `c0[j-1]` is c⁰₋ⱼ for `j = 1..=m` and `c[i-1][j]` is cⁱ₋ⱼ for
/// `i = 1..=k`, `j = 0..=m`. Order-`i` coefficients carry units of sⁱ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObreshkovTableau {
    pub k: usize,
    pub m: usize,
    pub h: f64,
    pub c0: Vec<f64>,
    pub c: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_select: Option<f64>,
}

impl ObreshkovTableau {
    /// Coefficient cⁱ₋ⱼ. The slot `(0, 0)` is the left-hand side and reads as 0.
    pub fn coeff(&self, i: usize, j: usize) -> f64 {
        match (i, j) {
            (0, 0) => 0.0,
            (0, j) => self.c0[j - 1],
            (i, j) => self.c[i - 1][j],
        }
    }

    /// Row of highest-derivative coefficients cᵏ₀ … cᵏ₋ₘ.
    pub fn leading_row(&self) -> &[f64] {
        &self.c[self.k - 1]
    }

    pub fn label_or_default(&self) -> &str {
        self.label.as_deref().unwrap_or("unnamed")
    }

    /// Lists every violated structural invariant. An empty list means valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.k == 0 {
            out.push(Violation::ZeroOrder);
        }
        if self.m == 0 {
            out.push(Violation::ZeroSteps);
        }
        if !(self.h.is_finite() && self.h > 0.0) {
            out.push(Violation::BadStep(self.h));
        }
        if let Some(w) = self.omega_select {
            if !(w.is_finite() && w > 0.0) {
                out.push(Violation::BadOmegaSelect(w));
            }
        }
        let mut shape_ok = true;
        if self.c0.len() != self.m {
            shape_ok = false;
            out.push(Violation::C0Length { expected: self.m, found: self.c0.len() });
        }
        if self.c.len() != self.k {
            shape_ok = false;
            out.push(Violation::RowCount { expected: self.k, found: self.c.len() });
        }
        for (idx, row) in self.c.iter().enumerate() {
            if row.len() != self.m + 1 {
                shape_ok = false;
                out.push(Violation::RowLength {
                    order: idx + 1,
                    expected: self.m + 1,
                    found: row.len(),
                });
            }
        }
        for (j, v) in self.c0.iter().enumerate() {
            if !v.is_finite() {
                out.push(Violation::NonFinite { order: 0, step: j + 1 });
            }
        }
        for (idx, row) in self.c.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    out.push(Violation::NonFinite { order: idx + 1, step: j });
                }
            }
        }
        if !shape_ok || self.k == 0 || self.m == 0 {
            return out;
        }
        if self.leading_row()[0] == 0.0 {
            out.push(Violation::LeadingZero);
        }
        let sum: f64 = self.c0.iter().sum();
        if !((sum - 1.0).abs() <= CONSISTENCY_TOL) {
            out.push(Violation::Inconsistent { sum });
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<(), TableauError> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(TableauError::Invalid(v))
        }
    }

    /// Rearranges the integrator into a recursion for the highest derivative.
    pub fn differentiator_form(&self) -> Result<DifferentiatorRule, TableauError> {
        self.ensure_valid()?;
        let lead = self.leading_row();
        let ck0 = lead[0];
        let feedback = lead[1..].iter().map(|c| -c / ck0).collect();
        let lower_derivative_weights = self.c[..self.k - 1]
            .iter()
            .map(|row| row.iter().map(|c| -c / ck0).collect())
            .collect();
        Ok(DifferentiatorRule {
            base: self.clone(),
            feedback,
            input_weight: 1.0 / ck0,
            past_value_weights: self.c0.iter().map(|c| -c / ck0).collect(),
            lower_derivative_weights,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("tableau serialization cannot fail")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("tableau serialization cannot fail")
    }

    /// Parses the JSON tableau format. Structural validation is left to the caller.
    pub fn from_json(s: &str) -> Result<Self, TableauError> {
        Ok(serde_json::from_str(s)?)
    }
}

/// The highest-derivative recursion obtained from a tableau:
///
/// ```text
/// ū⁽ᵏ⁾_t = Σⱼ feedback[j-1]·ū⁽ᵏ⁾_{t-jh} + forcing_t
/// ```
///
/// where the forcing collects the exact input and its lower derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferentiatorRule {
    pub base: ObreshkovTableau,
    /// `-cᵏ₋ⱼ / cᵏ₀` for `j = 1..=m`.
    pub feedback: Vec<f64>,
    /// `1 / cᵏ₀`, applied to `u_t`.
    pub input_weight: f64,
    /// `-c⁰₋ⱼ / cᵏ₀` for `j = 1..=m`.
    pub past_value_weights: Vec<f64>,
    /// `-cⁱ₋ⱼ / cᵏ₀` for `i = 1..k-1` (outer) and `j = 0..=m` (inner).
    pub lower_derivative_weights: Vec<Vec<f64>>,
}

impl DifferentiatorRule {
    pub fn order(&self) -> usize {
        self.base.k
    }

    pub fn steps(&self) -> usize {
        self.base.m
    }

    /// The input-driven part of the recursion at time `t`.
    ///
    /// `deriv(i, τ)` must return the exact `i`-th derivative of the input at `τ`.
    pub fn forcing<F>(&self, deriv: F, t: f64) -> f64
    where
        F: Fn(usize, f64) -> f64,
    {
        let h = self.base.h;
        let mut acc = self.input_weight * deriv(0, t);
        for (j, w) in self.past_value_weights.iter().enumerate() {
            acc += w * deriv(0, t - (j + 1) as f64 * h);
        }
        for (i, row) in self.lower_derivative_weights.iter().enumerate() {
            for (j, w) in row.iter().enumerate() {
                if *w != 0.0 {
                    acc += w * deriv(i + 1, t - j as f64 * h);
                }
            }
        }
        acc
    }
}

/// Checks `0 < ωh < 2π` with `|1 - cos(ωh)|` bounded away from zero.
pub fn check_admissible(omega: f64, h: f64) -> Result<(), TableauError> {
    if !(h.is_finite() && h > 0.0) {
        return Err(TableauError::InvalidStep(h));
    }
    if !(omega.is_finite() && omega > 0.0) {
        return Err(TableauError::InvalidOmega(omega));
    }
    let theta = omega * h;
    if !(theta > 0.0 && theta < 2.0 * PI) || (1.0 - theta.cos()).abs() <= ADMISSIBILITY_TOL {
        return Err(TableauError::Inadmissible(theta));
    }
    Ok(())
}

fn single_step(name: Integrator, h: f64, omega: Option<f64>, c1: [f64; 2], c2: [f64; 2]) -> ObreshkovTableau {
    ObreshkovTableau {
        k: 2,
        m: 1,
        h,
        c0: vec![1.0],
        c: vec![c1.to_vec(), c2.to_vec()],
        label: Some(name.name().to_owned()),
        omega_select: omega,
    }
}

fn first_order(name: Integrator, h: f64, c0: Vec<f64>, c1: Vec<f64>) -> ObreshkovTableau {
    ObreshkovTableau {
        k: 1,
        m: c0.len(),
        h,
        c0,
        c: vec![c1],
        label: Some(name.name().to_owned()),
        omega_select: None,
    }
}

/// Builds a named integrator for step `h`.
///
/// A, B and E need `omega_select`; every other member rejects it.
pub fn make_catalog(
    name: Integrator,
    h: f64,
    omega_select: Option<f64>,
) -> Result<ObreshkovTableau, TableauError> {
    if !(h.is_finite() && h > 0.0) {
        return Err(TableauError::InvalidStep(h));
    }
    let omega = match (name.is_frequency_optimized(), omega_select) {
        (true, None) => return Err(TableauError::MissingOmegaSelect(name)),
        (false, Some(_)) => return Err(TableauError::UnexpectedOmegaSelect(name)),
        (true, Some(w)) => {
            check_admissible(w, h)?;
            w
        }
        (false, None) => 0.0,
    };
    let theta = omega * h;
    let h2 = h * h;
    let t = match name {
        Integrator::Be => first_order(name, h, vec![1.0], vec![h, 0.0]),
        Integrator::Bdf2 => first_order(
            name,
            h,
            vec![4.0 / 3.0, -1.0 / 3.0],
            vec![2.0 * h / 3.0, 0.0, 0.0],
        ),
        Integrator::Tr => first_order(name, h, vec![1.0], vec![h / 2.0, h / 2.0]),
        Integrator::A => {
            let c20 = -1.0 / (omega * omega) + h / (2.0 * omega) / (theta / 2.0).tan();
            single_step(name, h, omega_select, [h / 2.0, h / 2.0], [c20, -c20])
        }
        Integrator::B => single_step(
            name,
            h,
            omega_select,
            [theta.sin() / omega, 0.0],
            [(theta.cos() - 1.0) / (omega * omega), 0.0],
        ),
        Integrator::C => single_step(name, h, None, [h / 2.0, h / 2.0], [-h2 / 12.0, h2 / 12.0]),
        Integrator::D => single_step(name, h, None, [h, 0.0], [-h2 / 2.0, 0.0]),
        Integrator::E => {
            let mut t = solve_coefficients(&ConstraintSet::integrator_e(h, omega))?;
            t.label = Some(name.name().to_owned());
            t
        }
        Integrator::F => single_step(
            name,
            h,
            None,
            [2.0 * h / 3.0, h / 3.0],
            [-h2 / 6.0, 0.0],
        ),
    };
    t.ensure_valid()?;
    Ok(t)
}
