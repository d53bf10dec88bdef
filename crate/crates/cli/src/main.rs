use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use obrediff::reproduce::{
    fig1, fig2, fig3, table3, table3_csv, table3_text, ExperimentError, Fig1Config, Fig2Config, Fig3Config,
    Table3Config, OMEGA_SYN, TABLE3_STEPS_US,
};
use obrediff::simulator::{relative_error_metric, run, Mode, SimulationError, SimulationTrace, Signal};
use obrediff::solver::{solve_coefficients, verify_synthesis, ConstraintSet, SolveError};
use obrediff::spectrum::{frequency_grid, origin_multiplicity, sweep, sweep_csv, DEFAULT_MULTIPLICITY_THRESHOLD};
use obrediff::suitability::{analyze, format_root, render_csv, render_text, table2_report};
use obrediff::{make_catalog, Integrator, ObreshkovTableau, TableauError};

const EXIT_INPUT: u8 = 1;
const EXIT_UNSUITABLE: u8 = 2;
const EXIT_SYNTHESIS: u8 = 3;

#[derive(Parser)]
#[command(name = "obrediff", version, about = "Suitability analysis of integrators used as numerical differentiators")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Step size in seconds.
    #[arg(long, global = true)]
    h: Option<f64>,
    /// Frequency the A, B and E members are tuned to, rad/s (defaults to --omega-syn).
    #[arg(long, global = true)]
    omega_select: Option<f64>,
    /// Test signal frequency, rad/s.
    #[arg(long, global = true, default_value_t = OMEGA_SYN)]
    omega_syn: f64,
    /// End of the simulated interval, seconds.
    #[arg(long, global = true)]
    t_end: Option<f64>,
    /// Injected starting value(s) of the differentiated quantity, comma separated.
    #[arg(long, global = true, value_delimiter = ',', allow_negative_numbers = true)]
    init: Option<Vec<f64>>,
    /// Directory for data files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Text,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Catalog member: BE, BDF2, TR, A, B, C, D, E, F.
    #[arg(long)]
    name: Option<String>,
    /// Tableau JSON file.
    #[arg(long)]
    file: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Classify one integrator; exits 2 if it is unsuitable.
    Analyze {
        #[command(flatten)]
        source: Source,
    },
    /// Synthesize coefficients from a constraint set JSON file.
    Solve {
        #[arg(long)]
        file: PathBuf,
    },
    /// Relative error magnitude |R(jω)| over a frequency grid.
    Sweep {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 1.0)]
        from: f64,
        #[arg(long, default_value_t = 1e4)]
        to: f64,
        #[arg(long, default_value_t = 200)]
        points: usize,
        /// Logarithmic spacing.
        #[arg(long)]
        log: bool,
    },
    /// Run the differentiator recursion on a test signal.
    Simulate {
        #[command(flatten)]
        source: Source,
        /// cos:OMEGA[:AMPLITUDE], poly:A0,A1,..., const:C or step:T_SWITCH:LEVEL.
        #[arg(long)]
        signal: Option<String>,
        #[arg(long, value_enum, default_value_t = EngineMode::Direct)]
        mode: EngineMode,
    },
    /// Trapezoidal oscillation after an improper start.
    Fig1,
    /// Backward Euler half-step startup schemes.
    Fig2,
    /// Bias of A and C against elimination by E.
    Fig3,
    /// Classification of the second-derivative family.
    Table2,
    /// Error grid for B, D, E, F against the reference values.
    Table3,
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineMode {
    Direct,
    StateSpace,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl ToString) -> Self {
        Self { code: EXIT_INPUT, message: message.to_string() }
    }
}

impl From<TableauError> for Failure {
    fn from(e: TableauError) -> Self {
        match e {
            TableauError::Synthesis(s) => s.into(),
            e => Self::input(e),
        }
    }
}

impl From<SolveError> for Failure {
    fn from(e: SolveError) -> Self {
        let code = match e {
            SolveError::InvalidConstraint(_) | SolveError::Inadmissible { .. } => EXIT_INPUT,
            SolveError::Singular { .. } | SolveError::Inconsistent { .. } | SolveError::Degenerate(_) => EXIT_SYNTHESIS,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<SimulationError> for Failure {
    fn from(e: SimulationError) -> Self {
        match e {
            SimulationError::Tableau(t) => t.into(),
            e => Self::input(e),
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        Self::input(e)
    }
}

type Outcome = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT } else { 0 });
        }
    };
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: &Cli) -> Outcome {
    let c = &cli.common;
    check_positive("--omega-syn", c.omega_syn)?;
    if let Some(h) = c.h {
        check_positive("--h", h)?;
    }
    if let Some(t) = c.t_end {
        check_positive("--t-end", t)?;
    }
    match &cli.command {
        Command::Analyze { source } => cmd_analyze(c, source),
        Command::Solve { file } => cmd_solve(c, file),
        Command::Sweep { source, from, to, points, log } => cmd_sweep(c, source, *from, *to, *points, *log),
        Command::Simulate { source, signal, mode } => cmd_simulate(c, source, signal.as_deref(), *mode),
        Command::Fig1 => cmd_fig1(c),
        Command::Fig2 => cmd_fig2(c),
        Command::Fig3 => cmd_fig3(c),
        Command::Table2 => cmd_table2(c),
        Command::Table3 => cmd_table3(c),
    }
}

fn check_positive(flag: &str, v: f64) -> Result<(), Failure> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Failure::input(format!("{flag} must be positive and finite, got {v}")))
    }
}

impl Common {
    fn omega_select(&self) -> f64 {
        self.omega_select.unwrap_or(self.omega_syn)
    }

    fn single_init(&self, default: f64) -> Result<f64, Failure> {
        match self.init.as_deref() {
            None => Ok(default),
            Some([v]) => Ok(*v),
            Some(v) => Err(Failure::input(format!("this command takes one --init value, got {}", v.len()))),
        }
    }
}

fn load_tableau(c: &Common, source: &Source) -> Result<ObreshkovTableau, Failure> {
    if let Some(path) = &source.file {
        let text = fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        let t = ObreshkovTableau::from_json(&text)?;
        t.ensure_valid()?;
        return Ok(t);
    }
    let name: Integrator = source.name.as_deref().unwrap_or_default().parse()?;
    let h = c.h.unwrap_or(1e-3);
    Ok(make_catalog(name, h, name.is_frequency_optimized().then(|| c.omega_select()))?)
}

/// Writes `contents` to `dir/name` through a temporary file and a rename.
fn write_atomic(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::input(format!("{}: {e}", dir.display())))?;
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, contents).map_err(|e| Failure::input(format!("{}: {e}", tmp.display())))?;
    fs::rename(&tmp, &target).map_err(|e| Failure::input(format!("{}: {e}", target.display())))?;
    Ok(target)
}

/// Prints `contents`, and also writes it under `--out` as `stem.csv` or
/// `stem.txt` depending on the format.
fn emit(c: &Common, stem: &str, contents: &str) -> Result<(), Failure> {
    print!("{contents}");
    if let Some(dir) = &c.out {
        let ext = match c.format {
            Format::Csv => "csv",
            Format::Text => "txt",
        };
        write_atomic(dir, &format!("{stem}.{ext}"), contents)?;
    }
    Ok(())
}

fn write_trace(c: &Common, name: &str, trace: &SimulationTrace) -> Result<(), Failure> {
    if let Some(dir) = &c.out {
        write_atomic(dir, name, &trace.to_csv())?;
    }
    Ok(())
}

fn cmd_analyze(c: &Common, source: &Source) -> Outcome {
    let t = load_tableau(c, source)?;
    let report = analyze(&t)?;
    let p = origin_multiplicity(&t, DEFAULT_MULTIPLICITY_THRESHOLD).ok();
    let body = match c.format {
        Format::Csv => render_csv(std::slice::from_ref(&report)),
        Format::Text => {
            let mut s = String::new();
            let roots: Vec<String> = report.roots.iter().map(|z| format_root(*z)).collect();
            writeln!(s, "integrator:          {}", report.label).unwrap();
            writeln!(s, "polynomial:          {}", report.polynomial).unwrap();
            writeln!(s, "roots:               {}", roots.join(", ")).unwrap();
            writeln!(s, "classification:      {}", report.classification).unwrap();
            writeln!(s, "suitable:            {}", if report.suitable() { "Yes" } else { "No" }).unwrap();
            writeln!(s, "hazard:              {}", report.classification.hazard()).unwrap();
            if let Some(p) = p {
                writeln!(s, "origin multiplicity: {p}").unwrap();
            }
            s
        }
    };
    emit(c, "analyze", &body)?;
    Ok(if report.suitable() { 0 } else { EXIT_UNSUITABLE })
}

fn cmd_solve(c: &Common, file: &Path) -> Outcome {
    let text = fs::read_to_string(file).map_err(|e| Failure::input(format!("{}: {e}", file.display())))?;
    let constraints = ConstraintSet::from_json(&text).map_err(|e| Failure::input(format!("malformed constraint set: {e}")))?;
    let t = solve_coefficients(&constraints)?;
    let cert = verify_synthesis(&t, &constraints);
    let json = format!("{}\n", t.to_json_pretty());
    let mut report = cert.to_string();
    if !report.ends_with('\n') {
        report.push('\n');
    }
    println!("{}", json.trim_end());
    print!("{report}");
    if let Some(dir) = &c.out {
        write_atomic(dir, "tableau.json", &json)?;
        write_atomic(dir, "certification.txt", &report)?;
    }
    if cert.passed() {
        Ok(0)
    } else {
        Err(Failure { code: EXIT_SYNTHESIS, message: "synthesized tableau failed certification".into() })
    }
}

fn cmd_sweep(c: &Common, source: &Source, from: f64, to: f64, points: usize, log: bool) -> Outcome {
    check_positive("--from", from)?;
    check_positive("--to", to)?;
    if to <= from || points < 2 {
        return Err(Failure::input("sweep needs --from < --to and at least 2 points"));
    }
    let t = load_tableau(c, source)?;
    let rows = sweep(&t, &frequency_grid(from, to, points, log)).map_err(Failure::input)?;
    let body = match c.format {
        Format::Csv => sweep_csv(&rows),
        Format::Text => {
            let mut s = format!("{:>24}  {:>24}\n", "omega (rad/s)", "|R(jω)|");
            for (w, r) in &rows {
                writeln!(s, "{w:>24.10e}  {r:>24.10e}").unwrap();
            }
            s
        }
    };
    emit(c, "sweep", &body)?;
    Ok(0)
}

fn parse_signal(spec: &str) -> Result<Signal, Failure> {
    let bad = || Failure::input(format!("cannot parse signal `{spec}`"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let (kind, rest) = spec.split_once(':').ok_or_else(bad)?;
    let parts: Vec<&str> = rest.split(':').collect();
    match (kind, parts.as_slice()) {
        ("cos", [w]) => Ok(Signal::Cosine { omega: num(w)?, amplitude: 1.0 }),
        ("cos", [w, a]) => Ok(Signal::Cosine { omega: num(w)?, amplitude: num(a)? }),
        ("poly", [coeffs]) => Ok(Signal::Polynomial(coeffs.split(',').map(num).collect::<Result<_, _>>()?)),
        ("const", [v]) => Ok(Signal::Constant(num(v)?)),
        ("step", [t, level]) => Ok(Signal::Step { t_switch: num(t)?, level: num(level)? }),
        _ => Err(bad()),
    }
}

fn cmd_simulate(c: &Common, source: &Source, signal: Option<&str>, mode: EngineMode) -> Outcome {
    let t = load_tableau(c, source)?;
    let sig = match signal {
        Some(s) => parse_signal(s)?,
        None => Signal::Cosine { omega: c.omega_syn, amplitude: 1.0 },
    };
    let init = match c.init.as_deref() {
        None => vec![0.0; t.m],
        Some([v]) => vec![*v; t.m],
        Some(v) => v.to_vec(),
    };
    let mode = match mode {
        EngineMode::Direct => Mode::Direct,
        EngineMode::StateSpace => Mode::StateSpace,
    };
    let trace = run(&t, &sig, c.t_end.unwrap_or(0.02), &init, mode)?;
    match c.format {
        Format::Csv => emit(c, "trace", &trace.to_csv())?,
        Format::Text => {
            write_trace(c, "trace.csv", &trace)?;
            let worst = trace.computed_indices().map(|i| trace.error[i].abs()).fold(0.0, f64::max);
            println!("integrator: {}", t.label_or_default());
            println!("signal:     {sig}");
            println!("mode:       {mode}");
            println!("samples:    {}", trace.len());
            println!("status:     {:?}", trace.status);
            println!("max |error| over computed samples: {worst:.6e}");
            if let Ok(metric) = relative_error_metric(&trace, 2) {
                println!("relative error (first 2 steps excluded): {metric:.6} %");
            }
        }
    }
    Ok(0)
}

fn cmd_fig1(c: &Common) -> Outcome {
    let d = Fig1Config::default();
    let cfg = Fig1Config {
        h: c.h.unwrap_or(d.h),
        omega_syn: c.omega_syn,
        init: c.single_init(d.init)?,
        t_end: c.t_end.unwrap_or(d.t_end),
        window: c.t_end.map_or(d.window, |t| (t / 2.0, t)),
    };
    let r = fig1(&cfg)?;
    write_trace(c, "fig1_tr.csv", &r.trace)?;
    let (a, b) = cfg.window;
    match c.format {
        Format::Csv => print!("quantity,value\namplitude,{:.16e}\nalternation,{:.16e}\n", r.amplitude, r.alternation),
        Format::Text => {
            println!("TR, h = {} s, init = {}", cfg.h, cfg.init);
            println!("oscillation amplitude over [{a}, {b}] s: {:.6}", r.amplitude);
            println!("sign-alternating error pairs: {:.2} %", 100.0 * r.alternation);
        }
    }
    Ok(0)
}

fn cmd_fig2(c: &Common) -> Outcome {
    let d = Fig2Config::default();
    let cfg = Fig2Config {
        h: c.h.unwrap_or(d.h),
        omega_syn: c.omega_syn,
        init: c.single_init(d.init)?,
        t_end: c.t_end.unwrap_or(d.t_end),
        half_steps: d.half_steps,
    };
    let schemes = fig2(&cfg)?;
    let mut out = match c.format {
        Format::Csv => String::from("half_steps,amplitude_second_half,amplitude_early,amplitude_late\n"),
        Format::Text => format!("BE half steps then TR, h = {} s, init = {}\n", cfg.h, cfg.init),
    };
    for s in &schemes {
        write_trace(c, &format!("fig2_be{}.csv", s.half_steps), &s.trace)?;
        match c.format {
            Format::Csv => writeln!(out, "{},{:.16e},{:.16e},{:.16e}", s.half_steps, s.second_half, s.early, s.late),
            Format::Text => writeln!(
                out,
                "{} half steps: amplitude {:.6} over the second half, early/late ratio {:.4}",
                s.half_steps,
                s.second_half,
                s.early / s.late
            ),
        }
        .unwrap();
    }
    print!("{out}");
    Ok(0)
}

fn cmd_fig3(c: &Common) -> Outcome {
    let d = Fig3Config::default();
    let cfg = Fig3Config {
        h: c.h.unwrap_or(d.h),
        omega_syn: c.omega_syn,
        omega_select: c.omega_select(),
        init: c.single_init(d.init)?,
        t_end: c.t_end.unwrap_or(d.t_end),
        integrators: d.integrators,
    };
    let curves = fig3(&cfg)?;
    let w2 = cfg.omega_syn * cfg.omega_syn;
    let mut out = match c.format {
        Format::Csv => String::from("integrator,terminal_bias,terminal_bias_over_omega_sq,settling_step\n"),
        Format::Text => format!("h = {} s, init = {}, bias = mean error over the final 10 samples\n", cfg.h, cfg.init),
    };
    for curve in &curves {
        write_trace(c, &format!("fig3_{}.csv", curve.integrator.name()), &curve.trace)?;
        let settle = curve.settling_step.map_or(String::new(), |n| n.to_string());
        match c.format {
            Format::Csv => writeln!(
                out,
                "{},{:.16e},{:.16e},{settle}",
                curve.integrator,
                curve.terminal_bias,
                curve.terminal_bias / w2
            ),
            Format::Text => writeln!(
                out,
                "{}: bias {:.6e} ({:.4} ω²), {}",
                curve.integrator,
                curve.terminal_bias,
                curve.terminal_bias / w2,
                curve.settling_step.map_or("stays above 1e-6 ω²".into(), |n| format!("below 1e-6 ω² from step {n}"))
            ),
        }
        .unwrap();
    }
    print!("{out}");
    Ok(0)
}

fn cmd_table2(c: &Common) -> Outcome {
    let reports = table2_report(c.h.unwrap_or(1e-3), c.omega_select())?;
    let body = match c.format {
        Format::Csv => render_csv(&reports),
        Format::Text => render_text(&reports),
    };
    emit(c, "table2", &body)?;
    Ok(0)
}

fn cmd_table3(c: &Common) -> Outcome {
    let d = Table3Config::default();
    let cfg = Table3Config {
        omega_syn: c.omega_syn,
        omega_select: c.omega_select(),
        init: c.single_init(d.init)?,
        t_end: c.t_end.unwrap_or(d.t_end),
        steps_us: TABLE3_STEPS_US.to_vec(),
        integrators: d.integrators,
    };
    let cells = table3(&cfg)?;
    let passed = cells.iter().filter(|c| c.passes()).count();
    let body = match c.format {
        Format::Csv => table3_csv(&cells),
        Format::Text => table3_text(&cells),
    };
    emit(c, "table3", &body)?;
    if c.format == Format::Text {
        println!("{passed}/{} cells within tolerance", cells.len());
    }
    Ok(0)
}
