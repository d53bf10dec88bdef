//! Whether a tableau is safe to use as a numerical differentiator.
//!
//! The recursion for the highest derivative carries previous outputs
//! forward through its feedback weights. The fate of an error in those
//! outputs (an improper initial value) is decided by the roots of the
//! monic characteristic polynomial
//!
//! ```text
//! λᵐ + (cᵏ₋₁/cᵏ₀) λᵐ⁻¹ + … + cᵏ₋ₘ/cᵏ₀
//! ```
//!
//! which are the eigenvalues of the recursion's state-transition matrix.

use std::fmt;

use nalgebra::linalg::Schur;
use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::tableau::{make_catalog, Integrator, ObreshkovTableau, TableauError};

/// Default tolerance for "root at 0 / ±1 / on the unit circle".
pub const DEFAULT_ROOT_TOL: f64 = 1e-9;

const SCHUR_MAX_ITER: usize = 10_000;

/// Monic polynomial `coeffs[0] λᵐ + coeffs[1] λᵐ⁻¹ + … + coeffs[m]` with `coeffs[0] = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacteristicPolynomial {
    pub coeffs: Vec<f64>,
}

impl CharacteristicPolynomial {
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        self.coeffs
            .iter()
            .fold(Complex64::new(0.0, 0.0), |acc, c| acc * z + *c)
    }
}

impl fmt::Display for CharacteristicPolynomial {
    /// Renders e.g. `λ^2 - 0.5λ + 0.25`, dropping zero terms.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let deg = self.degree();
        let mut first = true;
        for (idx, &c) in self.coeffs.iter().enumerate() {
            let p = deg - idx;
            if c == 0.0 && !(first && idx == deg) {
                continue;
            }
            let sign = if c < 0.0 { "-" } else { "+" };
            let mag = c.abs();
            if first {
                if c < 0.0 {
                    f.write_str("-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            first = false;
            let var = match p {
                0 => String::new(),
                1 => "λ".to_owned(),
                _ => format!("λ^{p}"),
            };
            if p == 0 {
                write!(f, "{mag}")?;
            } else if mag == 1.0 {
                f.write_str(&var)?;
            } else {
                write!(f, "{mag}{var}")?;
            }
        }
        Ok(())
    }
}

/// Polynomial of the highest-derivative weights of `t`.
pub fn characteristic_polynomial(t: &ObreshkovTableau) -> Result<CharacteristicPolynomial, TableauError> {
    t.ensure_valid()?;
    let lead = t.leading_row();
    let mut coeffs = Vec::with_capacity(t.m + 1);
    coeffs.push(1.0);
    coeffs.extend(lead[1..].iter().map(|c| c / lead[0]));
    Ok(CharacteristicPolynomial { coeffs })
}

/// State-transition matrix of the recursion on `(ū⁽ᵏ⁾, y₁, …, y_{m-1})`:
/// feedback weights across the first row, a shift below it.
pub fn state_transition_matrix(t: &ObreshkovTableau) -> Result<DMatrix<f64>, TableauError> {
    let rule = t.differentiator_form()?;
    let m = t.m;
    Ok(DMatrix::from_fn(m, m, |r, c| {
        if r == 0 {
            rule.feedback[c]
        } else if c + 1 == r {
            1.0
        } else {
            0.0
        }
    }))
}

fn sort_roots(roots: &mut [Complex64]) {
    roots.sort_by(|a, b| {
        a.re.partial_cmp(&b.re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.im.partial_cmp(&b.im).unwrap_or(std::cmp::Ordering::Equal))
    });
}

/// Eigenvalues of a square real matrix, sorted by real then imaginary part.
pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    let mut v = schur_eigenvalues(a.clone()).unwrap_or_else(|| {
        // The QR sweep can stall on nilpotent blocks; retry on a shifted copy.
        let shift = 1.0 + a.norm();
        let shifted = a + DMatrix::identity(a.nrows(), a.ncols()) * shift;
        schur_eigenvalues(shifted)
            .map(|e| e.into_iter().map(|z| z - shift).collect())
            .unwrap_or_else(|| vec![Complex64::new(f64::NAN, f64::NAN); a.nrows()])
    });
    sort_roots(&mut v);
    v
}

fn schur_eigenvalues(a: DMatrix<f64>) -> Option<Vec<Complex64>> {
    Schur::try_new(a, f64::EPSILON, SCHUR_MAX_ITER).map(|s| s.complex_eigenvalues().iter().copied().collect())
}

/// All roots with multiplicity, as eigenvalues of the column companion
/// matrix, sorted by real then imaginary part.
pub fn polynomial_roots(p: &CharacteristicPolynomial) -> Vec<Complex64> {
    // Zero trailing coefficients are exact roots at the origin.
    let zeros = p.coeffs.iter().rev().take_while(|c| **c == 0.0).count().min(p.degree());
    let m = p.degree() - zeros;
    let mut roots = vec![Complex64::new(0.0, 0.0); zeros];
    if m == 0 {
        return roots;
    }
    let companion = DMatrix::from_fn(m, m, |r, c| {
        if c == m - 1 {
            -p.coeffs[m - r] / p.coeffs[0]
        } else if r == c + 1 {
            1.0
        } else {
            0.0
        }
    });
    roots.extend(eigenvalues(&companion));
    sort_roots(&mut roots);
    roots
}

/// Fate of an injected initial-value error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Classification {
    /// All roots at the origin; the error disappears after at most m steps.
    Ideal,
    /// All roots strictly inside the unit circle.
    Asymptotic,
    /// Root at −1: undamped alternation.
    Oscillatory,
    /// Root at +1: permanent offset.
    Biased,
    /// Other unit-magnitude root: permanent bounded error.
    PersistentBounded,
    /// Root outside the unit circle.
    Divergent,
}

impl Classification {
    pub fn label(self) -> &'static str {
        match self {
            Self::Ideal => "IDEAL",
            Self::Asymptotic => "ASYMPTOTIC",
            Self::Oscillatory => "OSCILLATORY",
            Self::Biased => "BIASED",
            Self::PersistentBounded => "PERSISTENT_BOUNDED",
            Self::Divergent => "DIVERGENT",
        }
    }

    /// Injected errors vanish.
    pub fn is_suitable(self) -> bool {
        matches!(self, Self::Ideal | Self::Asymptotic)
    }

    pub fn hazard(self) -> &'static str {
        match self {
            Self::Ideal | Self::Asymptotic => "--",
            Self::Oscillatory => "Oscillation",
            Self::Biased => "Bias",
            Self::PersistentBounded => "Persistent error",
            Self::Divergent => "Divergence",
        }
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootEvidence {
    pub root: Complex64,
    pub magnitude: f64,
    pub dist_zero: f64,
    pub dist_plus_one: f64,
    pub dist_minus_one: f64,
}

impl RootEvidence {
    fn new(root: Complex64) -> Self {
        Self {
            root,
            magnitude: root.norm(),
            dist_zero: root.norm(),
            dist_plus_one: (root - 1.0).norm(),
            dist_minus_one: (root + 1.0).norm(),
        }
    }
}

/// Classifies a root set, most severe hazard first:
/// divergent, biased, oscillatory, persistent, ideal, asymptotic.
pub fn classify(roots: &[Complex64], eps: f64) -> (Classification, Vec<RootEvidence>) {
    let ev: Vec<RootEvidence> = roots.iter().copied().map(RootEvidence::new).collect();
    let any = |f: &dyn Fn(&RootEvidence) -> bool| ev.iter().any(f);
    let class = if any(&|e| e.magnitude > 1.0 + eps) {
        Classification::Divergent
    } else if any(&|e| e.dist_plus_one <= eps) {
        Classification::Biased
    } else if any(&|e| e.dist_minus_one <= eps) {
        Classification::Oscillatory
    } else if any(&|e| (e.magnitude - 1.0).abs() <= eps) {
        Classification::PersistentBounded
    } else if ev.iter().all(|e| e.magnitude <= eps) {
        Classification::Ideal
    } else {
        Classification::Asymptotic
    };
    (class, ev)
}

#[derive(Debug, Clone)]
pub struct SuitabilityReport {
    pub label: String,
    pub polynomial: CharacteristicPolynomial,
    pub roots: Vec<Complex64>,
    pub classification: Classification,
    pub evidence: Vec<RootEvidence>,
}

impl SuitabilityReport {
    pub fn suitable(&self) -> bool {
        self.classification.is_suitable()
    }
}

pub fn analyze(t: &ObreshkovTableau) -> Result<SuitabilityReport, TableauError> {
    analyze_with(t, DEFAULT_ROOT_TOL)
}

pub fn analyze_with(t: &ObreshkovTableau, eps: f64) -> Result<SuitabilityReport, TableauError> {
    let polynomial = characteristic_polynomial(t)?;
    let roots = polynomial_roots(&polynomial);
    let (classification, evidence) = classify(&roots, eps);
    Ok(SuitabilityReport {
        label: t.label_or_default().to_owned(),
        polynomial,
        roots,
        classification,
        evidence,
    })
}

/// Reports for the second-derivative family A–F.
pub fn table2_report(h: f64, omega_select: f64) -> Result<Vec<SuitabilityReport>, TableauError> {
    Integrator::SECOND_ORDER
        .iter()
        .map(|&name| {
            let w = name.is_frequency_optimized().then_some(omega_select);
            analyze(&make_catalog(name, h, w)?)
        })
        .collect()
}

/// `re+imi` or `re-imi` with the shortest round-tripping decimals.
pub fn format_complex(z: Complex64) -> String {
    // Signed zero imaginary parts print as +0.
    let im = if z.im == 0.0 { 0.0 } else { z.im };
    if im < 0.0 {
        format!("{}-{}i", z.re + 0.0, -im)
    } else {
        format!("{}+{}i", z.re + 0.0, im)
    }
}

fn join<T, F: Fn(&T) -> String>(items: &[T], f: F) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(";")
}

pub fn render_csv(reports: &[SuitabilityReport]) -> String {
    let mut out = String::from("label,polynomial_coeffs,roots,classification,suitable,hazard\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.label,
            join(&r.polynomial.coeffs, |c| format!("{}", c + 0.0)),
            join(&r.roots, |z| format_complex(*z)),
            r.classification,
            if r.suitable() { "Yes" } else { "No" },
            r.classification.hazard(),
        ));
    }
    out
}

pub fn render_text(reports: &[SuitabilityReport]) -> String {
    let header = ["integrator", "polynomial", "roots", "classification", "suitable", "hazard"];
    let rows: Vec<[String; 6]> = reports
        .iter()
        .map(|r| {
            [
                r.label.clone(),
                r.polynomial.to_string(),
                r.roots.iter().map(|z| format_root(*z)).collect::<Vec<_>>().join(", "),
                r.classification.to_string(),
                if r.suitable() { "Yes" } else { "No" }.to_owned(),
                r.classification.hazard().to_owned(),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect::<Vec<_>>()
            .join("  ");
        s.truncate(s.trim_end().len());
        s.push('\n');
        s
    };
    let mut out = line(header.to_vec());
    for row in &rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}

/// Compact root display: real roots print without an imaginary part.
pub fn format_root(z: Complex64) -> String {
    if z.im == 0.0 {
        format!("{}", z.re + 0.0)
    } else {
        format_complex(z)
    }
}
