//! Laplace-domain relative error of a tableau.
//!
//! For a tableau the relative error expression is
//!
//! ```text
//! R(s) = 1 - Σⱼ c⁰₋ⱼ e^{-jsh} - Σᵢ Σⱼ cⁱ₋ⱼ sⁱ e^{-jsh}
//! ```
//!
//! Its zeros mark signals the integrator reproduces exactly: the number of
//! vanishing Taylor coefficients at `s = 0` is the polynomial degree handled
//! exactly, and a zero at `jω` makes the rule exact for sinusoids of
//! angular frequency `ω`.

use num_complex::Complex64;
use thiserror::Error;

use crate::tableau::ObreshkovTableau;

/// Threshold on h-normalized Taylor coefficients `|aₙ|/hⁿ`.
pub const DEFAULT_MULTIPLICITY_THRESHOLD: f64 = 1e-10;

/// Residual below which `|R(jω)|` certifies a frequency zero.
pub const FREQUENCY_ZERO_TOL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum SpectrumError {
    #[error("all Taylor coefficients vanish up to order {n_max}; multiplicity is at least {}", .n_max + 1)]
    AllVanish { n_max: usize },
    #[error("frequency grid is empty")]
    EmptyGrid,
    #[error("frequency grid must be positive and strictly increasing (offending index {0})")]
    BadGrid(usize),
}

/// Default series length, `k + m + 10`.
pub fn default_series_len(t: &ObreshkovTableau) -> usize {
    t.k + t.m + 10
}

/// Evaluates `R(s)`.
pub fn relative_error(t: &ObreshkovTableau, s: Complex64) -> Complex64 {
    let h = t.h;
    let shifts: Vec<Complex64> = (0..=t.m).map(|j| (-s * (j as f64 * h)).exp()).collect();
    let mut acc = Complex64::new(1.0, 0.0);
    for j in 1..=t.m {
        acc -= shifts[j] * t.c0[j - 1];
    }
    let mut s_pow = Complex64::new(1.0, 0.0);
    for row in &t.c {
        s_pow *= s;
        for (j, c) in row.iter().enumerate() {
            acc -= s_pow * shifts[j] * *c;
        }
    }
    acc
}

/// Taylor coefficients `a₀ … a_{n_max}` of `R(s)` about the origin,
/// from the factorial expansion of the shifts.
pub fn taylor_coefficients(t: &ObreshkovTableau, n_max: usize) -> Vec<f64> {
    // shift[j][l] = (-jh)^l / l!
    let shift: Vec<Vec<f64>> = (0..=t.m)
        .map(|j| {
            let x = -(j as f64) * t.h;
            let mut v = Vec::with_capacity(n_max + 1);
            let mut term = 1.0;
            v.push(term);
            for l in 1..=n_max {
                term *= x / l as f64;
                v.push(term);
            }
            v
        })
        .collect();
    (0..=n_max)
        .map(|n| {
            let mut a = if n == 0 { 1.0 } else { 0.0 };
            for j in 1..=t.m {
                a -= t.c0[j - 1] * shift[j][n];
            }
            for (idx, row) in t.c.iter().enumerate() {
                let i = idx + 1;
                if n < i {
                    continue;
                }
                for (j, c) in row.iter().enumerate() {
                    a -= c * shift[j][n - i];
                }
            }
            a
        })
        .collect()
}

/// Series coefficients together with the detected origin multiplicity.
#[derive(Debug, Clone)]
pub struct ErrorSpectrum {
    pub source: ObreshkovTableau,
    pub taylor: Vec<f64>,
    /// `None` when every coefficient up to `taylor.len() - 1` vanishes.
    pub origin_multiplicity: Option<usize>,
}

impl ErrorSpectrum {
    pub fn new(t: &ObreshkovTableau) -> Self {
        Self::with_len(t, default_series_len(t))
    }

    pub fn with_len(t: &ObreshkovTableau, n_max: usize) -> Self {
        let taylor = taylor_coefficients(t, n_max);
        let origin_multiplicity = first_nonvanishing(&taylor, t.h, DEFAULT_MULTIPLICITY_THRESHOLD);
        Self { source: t.clone(), taylor, origin_multiplicity }
    }

    /// Sums the truncated series at `s`.
    pub fn eval_series(&self, s: Complex64) -> Complex64 {
        self.taylor
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, a| acc * s + *a)
    }
}

fn first_nonvanishing(a: &[f64], h: f64, threshold: f64) -> Option<usize> {
    let mut scale = 1.0;
    for (n, an) in a.iter().enumerate() {
        if an.abs() / scale > threshold {
            return Some(n);
        }
        scale *= h;
    }
    None
}

/// Number of leading Taylor coefficients of `R` that vanish, i.e. the
/// multiplicity of the root at `s = 0`.
pub fn origin_multiplicity(t: &ObreshkovTableau, threshold: f64) -> Result<usize, SpectrumError> {
    let n_max = default_series_len(t);
    first_nonvanishing(&taylor_coefficients(t, n_max), t.h, threshold)
        .ok_or(SpectrumError::AllVanish { n_max })
}

/// `|R(jω)|`.
pub fn frequency_zero_residual(t: &ObreshkovTableau, omega: f64) -> f64 {
    relative_error(t, Complex64::new(0.0, omega)).norm()
}

/// `(ω, |R(jω)|)` over a positive, strictly increasing grid.
pub fn sweep(t: &ObreshkovTableau, grid: &[f64]) -> Result<Vec<(f64, f64)>, SpectrumError> {
    if grid.is_empty() {
        return Err(SpectrumError::EmptyGrid);
    }
    for (i, w) in grid.iter().enumerate() {
        if !(w.is_finite() && *w > 0.0) || (i > 0 && *w <= grid[i - 1]) {
            return Err(SpectrumError::BadGrid(i));
        }
    }
    Ok(grid.iter().map(|&w| (w, frequency_zero_residual(t, w))).collect())
}

/// `points` frequencies from `from` to `to`, linearly or logarithmically spaced.
pub fn frequency_grid(from: f64, to: f64, points: usize, log: bool) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![from],
        _ => (0..points)
            .map(|i| {
                let f = i as f64 / (points - 1) as f64;
                if log {
                    (from.ln() + f * (to.ln() - from.ln())).exp()
                } else {
                    from + f * (to - from)
                }
            })
            .collect(),
    }
}

pub fn sweep_csv(rows: &[(f64, f64)]) -> String {
    let mut out = String::from("omega_rad_s,abs_relative_error\n");
    for (w, r) in rows {
        out.push_str(&format!("{w:.16e},{r:.16e}\n"));
    }
    out
}
