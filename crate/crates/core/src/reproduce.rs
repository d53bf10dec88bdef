//! The time-domain experiments: trapezoidal oscillation, failed backward
//! Euler startup, bias versus rapid elimination in the second-derivative
//! family, and the step-size error table.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::simulator::{
    oscillation_amplitude, relative_error_metric, run, run_composite, sign_alternation, Mode,
    SimulationError, SimulationTrace, Signal, Stage,
};
use crate::tableau::{make_catalog, Integrator, TableauError};

/// Synchronous angular frequency of a 60 Hz system, rad/s.
pub const OMEGA_SYN: f64 = 120.0 * PI;

/// Step sizes of the error table, in microseconds.
pub const TABLE3_STEPS_US: [u32; 6] = [125, 250, 500, 1000, 2000, 4000];

/// Columns of the error table.
pub const TABLE3_INTEGRATORS: [Integrator; 4] = [Integrator::B, Integrator::D, Integrator::E, Integrator::F];

/// Published error values (percent) per column, in [`TABLE3_STEPS_US`] order.
pub const TABLE3_REFERENCE: [(Integrator, [f64; 6]); 4] = [
    (Integrator::B, [0.0000, 0.0000, 0.0000, 0.0000, 0.0000, 0.0000]),
    (Integrator::D, [1.5709, 3.1418, 6.2820, 12.5428, 24.8785, 48.0113]),
    (Integrator::E, [0.0000, 0.0000, 0.0000, 0.0000, 0.0000, 0.0000]),
    (Integrator::F, [0.0185, 0.0740, 0.2959, 1.1809, 4.6812, 18.0758]),
];

/// Relative tolerance on nonzero table entries.
pub const TABLE3_REL_TOL: f64 = 0.02;
/// Absolute bound for entries printed as zero.
pub const TABLE3_ZERO_TOL: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Tableau(#[from] TableauError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
}

fn cosine(omega: f64) -> Signal {
    Signal::Cosine { omega, amplitude: 1.0 }
}

fn catalog(name: Integrator, h: f64, omega_select: f64) -> Result<crate::ObreshkovTableau, TableauError> {
    make_catalog(name, h, name.is_frequency_optimized().then_some(omega_select))
}

/// Trapezoidal differentiation with an improper start.
#[derive(Debug, Clone)]
pub struct Fig1Config {
    pub h: f64,
    pub omega_syn: f64,
    pub init: f64,
    pub t_end: f64,
    pub window: (f64, f64),
}

impl Default for Fig1Config {
    fn default() -> Self {
        Self { h: 1e-3, omega_syn: OMEGA_SYN, init: 300.0, t_end: 0.02, window: (0.01, 0.02) }
    }
}

#[derive(Debug, Clone)]
pub struct Fig1Result {
    pub trace: SimulationTrace,
    pub amplitude: f64,
    pub alternation: f64,
}

pub fn fig1(cfg: &Fig1Config) -> Result<Fig1Result, ExperimentError> {
    let tr = make_catalog(Integrator::Tr, cfg.h, None)?;
    let trace = run(&tr, &cosine(cfg.omega_syn), cfg.t_end, &[cfg.init], Mode::Direct)?;
    let (a, b) = cfg.window;
    Ok(Fig1Result {
        amplitude: oscillation_amplitude(&trace, a, b)?,
        alternation: sign_alternation(&trace, a, b)?,
        trace,
    })
}

/// Trapezoidal differentiation after a few backward Euler half steps.
#[derive(Debug, Clone)]
pub struct Fig2Config {
    pub h: f64,
    pub omega_syn: f64,
    pub init: f64,
    pub t_end: f64,
    /// Number of half steps per scheme.
    pub half_steps: Vec<usize>,
}

impl Default for Fig2Config {
    fn default() -> Self {
        Self { h: 1e-3, omega_syn: OMEGA_SYN, init: 300.0, t_end: 0.02, half_steps: vec![2, 4] }
    }
}

#[derive(Debug, Clone)]
pub struct Fig2Scheme {
    pub half_steps: usize,
    pub trace: SimulationTrace,
    /// Amplitude over `[t_end/4, t_end/2]`.
    pub early: f64,
    /// Amplitude over `[3·t_end/4, t_end]`.
    pub late: f64,
    /// Amplitude over `[t_end/2, t_end]`.
    pub second_half: f64,
}

pub fn fig2(cfg: &Fig2Config) -> Result<Vec<Fig2Scheme>, ExperimentError> {
    let sig = cosine(cfg.omega_syn);
    let half = cfg.h / 2.0;
    let te = cfg.t_end;
    cfg.half_steps
        .iter()
        .map(|&n| {
            let stages = [
                Stage { tableau: make_catalog(Integrator::Be, half, None)?, h: half, steps: Some(n) },
                Stage { tableau: make_catalog(Integrator::Tr, cfg.h, None)?, h: cfg.h, steps: None },
            ];
            let trace = run_composite(&stages, &sig, cfg.init, te, Mode::Direct)?;
            Ok(Fig2Scheme {
                half_steps: n,
                early: oscillation_amplitude(&trace, te / 4.0, te / 2.0)?,
                late: oscillation_amplitude(&trace, 0.75 * te, te)?,
                second_half: oscillation_amplitude(&trace, te / 2.0, te)?,
                trace,
            })
        })
        .collect()
}

/// Second-derivative members started from a zero (improper) value.
#[derive(Debug, Clone)]
pub struct Fig3Config {
    pub h: f64,
    pub omega_syn: f64,
    pub omega_select: f64,
    pub init: f64,
    pub t_end: f64,
    pub integrators: Vec<Integrator>,
}

impl Default for Fig3Config {
    fn default() -> Self {
        Self {
            h: 2e-3,
            omega_syn: OMEGA_SYN,
            omega_select: OMEGA_SYN,
            init: 0.0,
            t_end: 0.12,
            integrators: vec![Integrator::A, Integrator::C, Integrator::E],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fig3Curve {
    pub integrator: Integrator,
    pub trace: SimulationTrace,
    /// Mean error over the final 10 samples.
    pub terminal_bias: f64,
    /// First step from which `|error| < 1e-6·ω_syn²` holds for the rest of
    /// the run, if any.
    pub settling_step: Option<usize>,
}

pub fn fig3(cfg: &Fig3Config) -> Result<Vec<Fig3Curve>, ExperimentError> {
    let sig = cosine(cfg.omega_syn);
    let bound = 1e-6 * cfg.omega_syn * cfg.omega_syn;
    cfg.integrators
        .iter()
        .map(|&name| {
            let t = catalog(name, cfg.h, cfg.omega_select)?;
            let trace = run(&t, &sig, cfg.t_end, &[cfg.init], Mode::Direct)?;
            let tail = &trace.error[trace.len().saturating_sub(10)..];
            let terminal_bias = tail.iter().sum::<f64>() / tail.len() as f64;
            // Index n of the trace is step n (the injected value sits at 0).
            let settling_step = match trace.error.iter().rposition(|e| !(e.abs() < bound)) {
                None => Some(0),
                Some(last_bad) if last_bad + 1 < trace.len() => Some(last_bad + 1),
                Some(_) => None,
            };
            Ok(Fig3Curve { integrator: name, trace, terminal_bias, settling_step })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Table3Config {
    pub omega_syn: f64,
    pub omega_select: f64,
    pub init: f64,
    pub t_end: f64,
    pub steps_us: Vec<u32>,
    pub integrators: Vec<Integrator>,
}

impl Default for Table3Config {
    fn default() -> Self {
        Self {
            omega_syn: OMEGA_SYN,
            omega_select: OMEGA_SYN,
            init: 0.0,
            t_end: 1.0,
            steps_us: TABLE3_STEPS_US.to_vec(),
            integrators: TABLE3_INTEGRATORS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table3Cell {
    pub integrator: Integrator,
    pub step_us: u32,
    /// Percent error with the first two steps excluded.
    pub error: f64,
    pub reference: Option<f64>,
}

impl Table3Cell {
    /// Zero entries must stay below [`TABLE3_ZERO_TOL`]; others within
    /// [`TABLE3_REL_TOL`] relative. Cells without a reference pass.
    pub fn passes(&self) -> bool {
        match self.reference {
            None => true,
            Some(0.0) => self.error.abs() < TABLE3_ZERO_TOL,
            Some(r) => ((self.error - r) / r).abs() <= TABLE3_REL_TOL,
        }
    }
}

pub fn table3_reference(name: Integrator, step_us: u32) -> Option<f64> {
    let col = TABLE3_STEPS_US.iter().position(|s| *s == step_us)?;
    TABLE3_REFERENCE.iter().find(|(n, _)| *n == name).map(|(_, v)| v[col])
}

/// Runs every (integrator, step) cell; cells are independent and run in parallel.
pub fn table3(cfg: &Table3Config) -> Result<Vec<Table3Cell>, ExperimentError> {
    let jobs: Vec<(Integrator, u32)> = cfg
        .integrators
        .iter()
        .flat_map(|&n| cfg.steps_us.iter().map(move |&s| (n, s)))
        .collect();
    let sig = cosine(cfg.omega_syn);
    jobs.par_iter()
        .map(|&(name, step_us)| {
            let h = step_us as f64 * 1e-6;
            let t = catalog(name, h, cfg.omega_select)?;
            let trace = run(&t, &sig, cfg.t_end, &[cfg.init], Mode::Direct)?;
            Ok(Table3Cell {
                integrator: name,
                step_us,
                error: relative_error_metric(&trace, 2)?,
                reference: table3_reference(name, step_us),
            })
        })
        .collect()
}

pub fn table3_csv(cells: &[Table3Cell]) -> String {
    let mut out = String::from("integrator,step_us,error_percent,reference_percent,pass\n");
    for c in cells {
        let reference = c.reference.map_or(String::new(), |r| format!("{r:.4}"));
        out.push_str(&format!(
            "{},{},{:.16e},{},{}\n",
            c.integrator,
            c.step_us,
            c.error,
            reference,
            if c.passes() { "pass" } else { "FAIL" }
        ));
    }
    out
}

/// Step-by-integrator grid, `computed (reference)` per cell.
pub fn table3_text(cells: &[Table3Cell]) -> String {
    let mut names: Vec<Integrator> = Vec::new();
    let mut steps: Vec<u32> = Vec::new();
    for c in cells {
        if !names.contains(&c.integrator) {
            names.push(c.integrator);
        }
        if !steps.contains(&c.step_us) {
            steps.push(c.step_us);
        }
    }
    let mut out = format!("{:>10}", "step (us)");
    for n in &names {
        out.push_str(&format!("  {:>22}", n.name()));
    }
    out.push('\n');
    for s in &steps {
        out.push_str(&format!("{s:>10}"));
        for n in &names {
            let cell = cells.iter().find(|c| c.integrator == *n && c.step_us == *s);
            let text = match cell {
                Some(c) => match c.reference {
                    Some(r) => format!("{:.4} ({r:.4}){}", c.error, if c.passes() { "" } else { "!" }),
                    None => format!("{:.4}", c.error),
                },
                None => "-".into(),
            };
            out.push_str(&format!("  {text:>22}"));
        }
        out.push('\n');
    }
    out
}
