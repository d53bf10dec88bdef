//! Time-domain runs of the differentiator recursion.
//!
//! The input and its derivatives below order `k` are sampled exactly from an
//! analytic [`Signal`]; only the highest derivative is produced by the
//! recursion, seeded with caller-supplied (possibly wrong) initial values.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::suitability::state_transition_matrix;
use crate::tableau::{DifferentiatorRule, ObreshkovTableau, TableauError};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Tableau(#[from] TableauError),
    #[error("expected {expected} initial values, got {found}")]
    InitLength { expected: usize, found: usize },
    #[error("t_end = {t_end} s is shorter than m*h = {min} s")]
    TooShort { t_end: f64, min: f64 },
    #[error("startup composition requires single-step stages; stage {stage} has m = {m}")]
    MultiStepStage { stage: usize, m: usize },
    #[error("stage {stage}: {reason}")]
    BadStage { stage: usize, reason: String },
    #[error("window [{from}, {to}] holds {samples} samples, need at least {needed}")]
    WindowTooShort { from: f64, to: f64, samples: usize, needed: usize },
    #[error("reference norm is zero over the metric window")]
    ZeroReference,
    #[error("trace holds {samples} computed samples, need more than {needed}")]
    TraceTooShort { samples: usize, needed: usize },
}

/// Analytic test inputs with exact derivatives.
#[derive(Debug, Clone, PartialEq)]
pub enum Signal {
    /// `amplitude · cos(ω t)`.
    Cosine { omega: f64, amplitude: f64 },
    /// `Σ coeffs[p] tᵖ`.
    Polynomial(Vec<f64>),
    Constant(f64),
    /// `level` for `t ≥ t_switch`, 0 before. All derivatives read as 0,
    /// including at the switch instant.
    Step { t_switch: f64, level: f64 },
}

impl Signal {
    /// The `n`-th derivative at `t`.
    pub fn deriv(&self, n: usize, t: f64) -> f64 {
        match self {
            Self::Cosine { omega, amplitude } => {
                let (s, c) = (omega * t).sin_cos();
                let base = match n % 4 {
                    0 => c,
                    1 => -s,
                    2 => -c,
                    _ => s,
                };
                amplitude * omega.powi(n as i32) * base
            }
            Self::Polynomial(coeffs) => {
                // Horner on the n-th derivative's coefficients.
                let mut acc = 0.0;
                for p in (n..coeffs.len()).rev() {
                    let falling: f64 = ((p - n + 1)..=p).map(|q| q as f64).product();
                    acc = acc * t + coeffs[p] * falling;
                }
                acc
            }
            Self::Constant(v) => {
                if n == 0 {
                    *v
                } else {
                    0.0
                }
            }
            Self::Step { t_switch, level } => {
                if n == 0 && t >= *t_switch {
                    *level
                } else {
                    0.0
                }
            }
        }
    }
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Cosine { omega, amplitude } => write!(f, "cosine(omega={omega}, amplitude={amplitude})"),
            Self::Polynomial(c) => write!(f, "polynomial({c:?})"),
            Self::Constant(v) => write!(f, "constant({v})"),
            Self::Step { t_switch, level } => write!(f, "step(t_switch={t_switch}, level={level})"),
        }
    }
}

/// How the recursion is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Scalar recurrence over a history of previous outputs.
    Direct,
    /// Matrix iteration on the auxiliary state vector.
    StateSpace,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Direct => "direct",
            Self::StateSpace => "state-space",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFlag {
    /// Externally injected starting value.
    Init,
    /// Produced by a startup stage of a composite run.
    Startup,
    Main,
}

impl SampleFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Init => "init",
            Self::Startup => "startup",
            Self::Main => "main",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunStatus {
    Completed,
    /// A non-finite value appeared at this time; the trace stops before it.
    Diverged { at: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceMeta {
    pub labels: Vec<String>,
    /// Main-stage step size.
    pub h: f64,
    pub init: String,
    pub mode: Mode,
    pub signal: String,
}

/// Output of a run, one entry per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub grid: Vec<f64>,
    pub computed: Vec<f64>,
    pub exact: Vec<f64>,
    pub error: Vec<f64>,
    pub flags: Vec<SampleFlag>,
    pub status: RunStatus,
    pub meta: TraceMeta,
}

impl SimulationTrace {
    fn new(meta: TraceMeta) -> Self {
        Self {
            grid: Vec::new(),
            computed: Vec::new(),
            exact: Vec::new(),
            error: Vec::new(),
            flags: Vec::new(),
            status: RunStatus::Completed,
            meta,
        }
    }

    fn push(&mut self, t: f64, computed: f64, exact: f64, flag: SampleFlag) {
        self.grid.push(t);
        self.computed.push(computed);
        self.exact.push(exact);
        self.error.push(computed - exact);
        self.flags.push(flag);
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Indices of recursion outputs (everything except injected values).
    pub fn computed_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.flags
            .iter()
            .enumerate()
            .filter(|(_, f)| **f != SampleFlag::Init)
            .map(|(i, _)| i)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,computed,exact,error,flag\n");
        for i in 0..self.len() {
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{}\n",
                self.grid[i],
                self.computed[i],
                self.exact[i],
                self.error[i],
                self.flags[i].as_str()
            ));
        }
        out
    }
}

/// Number of whole steps of size `h` in `[0, t_end]`, tolerant of
/// representation error in the ratio.
pub fn step_count(t_end: f64, h: f64) -> usize {
    let r = t_end / h;
    let n = r.round();
    if (r - n).abs() <= 1e-9 * n.max(1.0) {
        n as usize
    } else {
        r.floor() as usize
    }
}

/// Advances the recursion from a start time over `steps` steps.
struct Engine<'a> {
    rule: DifferentiatorRule,
    mode: Mode,
    sig: &'a Signal,
    /// Previous outputs, most recent first.
    history: Vec<f64>,
    transition: Option<DMatrix<f64>>,
}

impl<'a> Engine<'a> {
    fn new(t: &ObreshkovTableau, sig: &'a Signal, mode: Mode, history: Vec<f64>) -> Result<Self, SimulationError> {
        let rule = t.differentiator_form()?;
        let transition = match mode {
            Mode::Direct => None,
            Mode::StateSpace => Some(state_transition_matrix(t)?),
        };
        Ok(Self { rule, mode, sig, history, transition })
    }

    fn step(&mut self, t: f64) -> f64 {
        let forcing = self.rule.forcing(|n, tau| self.sig.deriv(n, tau), t);
        match self.mode {
            Mode::Direct => {
                let mut v = forcing;
                for (w, prev) in self.rule.feedback.iter().zip(&self.history) {
                    v += w * prev;
                }
                self.history.rotate_right(1);
                self.history[0] = v;
                v
            }
            Mode::StateSpace => {
                let a = self.transition.as_ref().expect("state-space engine has a matrix");
                let x = DVector::from_column_slice(&self.history);
                let mut next = a * x;
                next[0] += forcing;
                self.history.copy_from_slice(next.as_slice());
                next[0]
            }
        }
    }

    /// Runs `steps` steps at `t0 + n·h`, `n = 1..=steps`, appending to `trace`.
    /// Returns false if a non-finite value stopped the run.
    fn run_into(&mut self, trace: &mut SimulationTrace, t0: f64, steps: usize, flag: SampleFlag) -> bool {
        let h = self.rule.base.h;
        let k = self.rule.order();
        for n in 1..=steps {
            let t = t0 + n as f64 * h;
            let v = self.step(t);
            if !v.is_finite() {
                trace.status = RunStatus::Diverged { at: t };
                return false;
            }
            trace.push(t, v, self.sig.deriv(k, t), flag);
        }
        true
    }
}

/// Runs the recursion of `t` on `sig` from 0 to `t_end`.
///
/// `init[j]` seeds the highest derivative at `t = -j·h`, `j = 0..m`. Those
/// samples lead the trace, flagged [`SampleFlag::Init`], in time order.
pub fn run(
    t: &ObreshkovTableau,
    sig: &Signal,
    t_end: f64,
    init: &[f64],
    mode: Mode,
) -> Result<SimulationTrace, SimulationError> {
    t.ensure_valid()?;
    if init.len() != t.m {
        return Err(SimulationError::InitLength { expected: t.m, found: init.len() });
    }
    let min = t.m as f64 * t.h;
    if !(t_end >= min * (1.0 - 1e-12)) {
        return Err(SimulationError::TooShort { t_end, min });
    }
    let meta = TraceMeta {
        labels: vec![t.label_or_default().to_owned()],
        h: t.h,
        init: format!("{init:?}"),
        mode,
        signal: sig.to_string(),
    };
    let mut trace = SimulationTrace::new(meta);
    for j in (0..t.m).rev() {
        let tj = -(j as f64) * t.h;
        trace.push(tj, init[j], sig.deriv(t.k, tj), SampleFlag::Init);
    }
    let mut engine = Engine::new(t, sig, mode, init.to_vec())?;
    engine.run_into(&mut trace, 0.0, step_count(t_end, t.h), SampleFlag::Main);
    Ok(trace)
}

/// One segment of a composite run.
#[derive(Debug, Clone)]
pub struct Stage {
    pub tableau: ObreshkovTableau,
    pub h: f64,
    /// `None` runs the stage until `t_end`; only the last stage may do so.
    pub steps: Option<usize>,
}

/// Chains single-step tableaus: each stage starts from the last output of
/// the previous one on an abutting grid.
pub fn run_composite(
    stages: &[Stage],
    sig: &Signal,
    init: f64,
    t_end: f64,
    mode: Mode,
) -> Result<SimulationTrace, SimulationError> {
    let Some(last) = stages.last() else {
        return Err(SimulationError::BadStage { stage: 0, reason: "no stages".into() });
    };
    let k = stages[0].tableau.k;
    for (idx, s) in stages.iter().enumerate() {
        s.tableau.ensure_valid()?;
        if s.tableau.m != 1 {
            return Err(SimulationError::MultiStepStage { stage: idx, m: s.tableau.m });
        }
        if s.tableau.k != k {
            return Err(SimulationError::BadStage {
                stage: idx,
                reason: format!("derivative order {} differs from {k}", s.tableau.k),
            });
        }
        if (s.h - s.tableau.h).abs() > 1e-12 * s.h {
            return Err(SimulationError::BadStage {
                stage: idx,
                reason: format!("step {} does not match tableau step {}", s.h, s.tableau.h),
            });
        }
        if s.steps.is_none() && idx + 1 != stages.len() {
            return Err(SimulationError::BadStage {
                stage: idx,
                reason: "only the last stage may run to t_end".into(),
            });
        }
    }

    let meta = TraceMeta {
        labels: stages.iter().map(|s| s.tableau.label_or_default().to_owned()).collect(),
        h: last.h,
        init: format!("{init}"),
        mode,
        signal: sig.to_string(),
    };
    let mut trace = SimulationTrace::new(meta);
    trace.push(0.0, init, sig.deriv(k, 0.0), SampleFlag::Init);

    let mut t0 = 0.0;
    let mut carry = init;
    for (idx, s) in stages.iter().enumerate() {
        let steps = match s.steps {
            Some(n) => n,
            None => {
                let remaining = t_end - t0;
                if remaining < -1e-12 * t_end {
                    return Err(SimulationError::BadStage {
                        stage: idx,
                        reason: format!("starts at {t0} s, after t_end = {t_end} s"),
                    });
                }
                step_count(remaining.max(0.0), s.h)
            }
        };
        let flag = if idx + 1 == stages.len() { SampleFlag::Main } else { SampleFlag::Startup };
        let mut engine = Engine::new(&s.tableau, sig, mode, vec![carry])?;
        if !engine.run_into(&mut trace, t0, steps, flag) {
            return Ok(trace);
        }
        t0 += steps as f64 * s.h;
        carry = *trace.computed.last().expect("trace holds the init sample");
    }
    Ok(trace)
}

/// `100 · ‖computed − exact‖₂ / ‖exact‖₂` over the recursion outputs,
/// skipping the first `exclude_first` of them.
pub fn relative_error_metric(trace: &SimulationTrace, exclude_first: usize) -> Result<f64, SimulationError> {
    let idx: Vec<usize> = trace.computed_indices().collect();
    if idx.len() <= exclude_first {
        return Err(SimulationError::TraceTooShort { samples: idx.len(), needed: exclude_first });
    }
    let (mut num, mut den) = (0.0, 0.0);
    for &i in &idx[exclude_first..] {
        num += trace.error[i] * trace.error[i];
        den += trace.exact[i] * trace.exact[i];
    }
    if den == 0.0 {
        return Err(SimulationError::ZeroReference);
    }
    Ok(100.0 * (num / den).sqrt())
}

fn window_indices(trace: &SimulationTrace, from: f64, to: f64) -> Vec<usize> {
    let slack = 1e-9 * to.abs().max(1e-300);
    (0..trace.len())
        .filter(|&i| trace.grid[i] >= from - slack && trace.grid[i] <= to + slack)
        .collect()
}

/// Mean of `|e[n] − e[n−1]| / 2` over consecutive samples inside `[from, to]`:
/// the half peak-to-peak size of the alternating error component.
pub fn oscillation_amplitude(trace: &SimulationTrace, from: f64, to: f64) -> Result<f64, SimulationError> {
    let idx = window_indices(trace, from, to);
    if idx.len() < 4 {
        return Err(SimulationError::WindowTooShort { from, to, samples: idx.len(), needed: 4 });
    }
    let sum: f64 = idx.windows(2).map(|w| (trace.error[w[1]] - trace.error[w[0]]).abs() / 2.0).sum();
    Ok(sum / (idx.len() - 1) as f64)
}

/// Fraction of consecutive sample pairs in `[from, to]` whose errors have opposite signs.
pub fn sign_alternation(trace: &SimulationTrace, from: f64, to: f64) -> Result<f64, SimulationError> {
    let idx = window_indices(trace, from, to);
    if idx.len() < 2 {
        return Err(SimulationError::WindowTooShort { from, to, samples: idx.len(), needed: 2 });
    }
    let flips = idx
        .windows(2)
        .filter(|w| trace.error[w[0]] * trace.error[w[1]] < 0.0)
        .count();
    Ok(flips as f64 / (idx.len() - 1) as f64)
}
