use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hinf::build::{build_dual, build_primal};
use hinf::certificate::{analyze, Analysis};
use hinf::herm::CVector;
use hinf::lti::{gain, simulate_trajectory};
use hinf::oracle::verify_certificate;
use hinf::solver::{solve, solve_dual_lmi};
use hinf::{Error, FrequencyBand, Sinusoid, SolverSettings, StateSpace};
use serde_json::{json, Value};

const EXIT_USAGE: u8 = 2;
const EXIT_UNSTABLE: u8 = 3;
const EXIT_SOLVER: u8 = 4;
const EXIT_UNWRITABLE: u8 = 5;

#[derive(Parser)]
#[command(
    name = "hinf",
    version,
    about = "H-infinity norm and worst-case inputs of discrete-time LTI systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Norm over a band with a worst-case sinusoid.
    Norm {
        system: PathBuf,
        #[command(flatten)]
        band: BandArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Print the full result as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Simulates the worst-case sinusoid from rest and writes the trajectory.
    WorstInput {
        system: PathBuf,
        #[command(flatten)]
        band: BandArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, default_value_t = 1000, value_parser = count)]
        steps: usize,
        /// CSV destination; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solves the (generalized) KYP dual and compares it with the primal.
    KypDual {
        system: PathBuf,
        #[command(flatten)]
        band: BandArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        json: bool,
    },
    /// Largest singular value of the frequency response on a uniform grid over [-pi, pi].
    Bode {
        system: PathBuf,
        #[arg(long, default_value_t = 512, value_parser = count)]
        grid: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Frequency band, angles in radians. Defaults to the full spectrum.
#[derive(Args)]
#[group(multiple = false)]
struct BandArgs {
    /// |theta| <= THETA0
    #[arg(long, value_name = "THETA0", allow_negative_numbers = true)]
    low: Option<f64>,
    /// |theta| >= THETA0
    #[arg(long, value_name = "THETA0", allow_negative_numbers = true)]
    high: Option<f64>,
    /// THETA1 <= theta <= THETA2
    #[arg(long, num_args = 2, value_names = ["THETA1", "THETA2"], allow_negative_numbers = true)]
    band: Option<Vec<f64>>,
}

impl BandArgs {
    fn resolve(&self) -> hinf::Result<FrequencyBand> {
        match (self.low, self.high, self.band.as_deref()) {
            (Some(t), _, _) => FrequencyBand::low(t),
            (_, Some(t), _) => FrequencyBand::high(t),
            (_, _, Some(&[t1, t2])) => FrequencyBand::middle(t1, t2),
            _ => Ok(FrequencyBand::Full),
        }
    }
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, value_parser = positive)]
    tol_feas: Option<f64>,
    #[arg(long, value_parser = positive)]
    tol_gap: Option<f64>,
    #[arg(long, value_parser = count)]
    max_iters: Option<usize>,
}

impl SolverArgs {
    fn settings(&self) -> SolverSettings {
        let mut s = SolverSettings::default();
        if let Some(v) = self.tol_feas {
            s.tol_feas = v;
        }
        if let Some(v) = self.tol_gap {
            s.tol_gap = v;
        }
        if let Some(v) = self.max_iters {
            s.max_iters = v;
        }
        s
    }
}

fn count(text: &str) -> Result<usize, String> {
    match text.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(format!("expected a positive integer, got {text}")),
    }
}

fn positive(text: &str) -> Result<f64, String> {
    let v: f64 = text.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("expected a positive number, got {text}"))
    }
}

enum Failure {
    Core(Error),
    Usage(String),
    Unwritable(PathBuf, io::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Unwritable(..) => EXIT_UNWRITABLE,
            Failure::Core(e) => match e {
                Error::Parse(_) | Error::Input(_) | Error::Dimension(_) | Error::InvalidBand(_) => EXIT_USAGE,
                Error::Unstable { .. } => EXIT_UNSTABLE,
                _ => EXIT_SOLVER,
            },
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Usage(msg) => write!(f, "{msg}"),
            Failure::Unwritable(path, e) => write!(f, "cannot write {}: {e}", path.display()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = configure_threads() {
        eprintln!("hinf: {msg}");
        return ExitCode::from(EXIT_USAGE);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("hinf: {f}");
            ExitCode::from(f.code())
        }
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(value) = std::env::var("HINF_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("HINF_THREADS must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Norm {
            system,
            band,
            solver,
            json,
        } => cmd_norm(&system, &band, &solver, json),
        Command::WorstInput {
            system,
            band,
            solver,
            steps,
            out,
        } => cmd_worst_input(&system, &band, &solver, steps, out.as_deref()),
        Command::KypDual {
            system,
            band,
            solver,
            json,
        } => cmd_kyp_dual(&system, &band, &solver, json),
        Command::Bode { system, grid, out } => cmd_bode(&system, grid, out.as_deref()),
    }
}

fn load(path: &Path) -> Result<StateSpace, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    let sys = StateSpace::from_json_str(&text)?;
    sys.check_stable()?;
    Ok(sys)
}

/// Nine significant digits, trailing zeros kept so columns line up.
fn sig(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..9).contains(&exp) {
        format!("{:.*}", (8 - exp) as usize, x)
    } else {
        format!("{x:.8e}")
    }
}

fn complex_json(v: &CVector) -> Value {
    Value::Array(v.iter().map(|z| json!([z.re, z.im])).collect())
}

fn gain_mismatch(sys: &StateSpace, a: &Analysis) -> hinf::Result<f64> {
    let mu = a.certificate.mu_opt;
    Ok((gain(sys, a.certificate.theta_opt)?.powi(2) - mu).abs() / mu.max(1.0))
}

fn cmd_norm(path: &Path, band: &BandArgs, solver: &SolverArgs, as_json: bool) -> Result<(), Failure> {
    let sys = load(path)?;
    let band = band.resolve()?;
    let settings = solver.settings();
    let a = analyze(&sys, band, &settings)?;
    let dynamics = a.certificate.dynamics_residual(&sys);
    let mismatch = gain_mismatch(&sys, &a)?;
    let sol = &a.solution;

    if as_json {
        let report = json!({
            "band": band,
            "norm": a.norm,
            "objective": sol.objective,
            "theta_opt": a.certificate.theta_opt,
            "mu_opt": a.certificate.mu_opt,
            "every_frequency_optimal": a.certificate.every_frequency_optimal,
            "w_opt": complex_json(&a.certificate.w_opt),
            "x_opt": complex_json(&a.certificate.x_opt),
            "solver": {
                "status": sol.status,
                "iterations": sol.iterations,
                "objective": sol.objective,
                "dual_objective": sol.dual_objective,
                "residuals": sol.residuals,
                "settings": settings,
            },
            "certificate": {
                "dynamics_residual": dynamics,
                "gain_mismatch": mismatch,
                "pieces": a.pieces.len(),
            },
        });
        return emit(&(serde_json::to_string_pretty(&report).expect("report is valid JSON") + "\n"));
    }

    let mut r = String::new();
    writeln!(r, "band              {band}").ok();
    writeln!(r, "norm              {}", sig(a.norm)).ok();
    writeln!(r, "norm squared      {}", sig(sol.objective)).ok();
    let every = if a.certificate.every_frequency_optimal {
        " (every frequency attains the norm)"
    } else {
        ""
    };
    writeln!(r, "theta_opt         {}{every}", sig(a.certificate.theta_opt)).ok();
    writeln!(
        r,
        "status            {:?} after {} iterations",
        sol.status, sol.iterations
    )
    .ok();
    writeln!(r, "primal residual   {}", sig(sol.residuals.primal_eq)).ok();
    writeln!(r, "psd violation     {}", sig(sol.residuals.psd_violation)).ok();
    writeln!(r, "duality gap       {}", sig(sol.residuals.duality_gap)).ok();
    writeln!(r, "dynamics residual {}", sig(dynamics)).ok();
    writeln!(r, "gain mismatch     {}", sig(mismatch)).ok();
    emit(&r)
}

/// Writes to standard output; a closed pipe is not an error.
fn emit(text: &str) -> Result<(), Failure> {
    match io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(Failure::Unwritable(PathBuf::from("<stdout>"), e)),
        _ => Ok(()),
    }
}

fn open_output(out: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    match out {
        Some(p) => {
            let f = fs::File::create(p).map_err(|e| Failure::Unwritable(p.to_path_buf(), e))?;
            Ok(Box::new(io::BufWriter::new(f)))
        }
        None => Ok(Box::new(io::stdout().lock())),
    }
}

fn write_csv(out: Option<&Path>, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<(), Failure> {
    let fail = |e: csv::Error| {
        if let csv::ErrorKind::Io(io) = e.kind() {
            if io.kind() == io::ErrorKind::BrokenPipe && out.is_none() {
                return None;
            }
        }
        let path = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("<stdout>"));
        Some(Failure::Unwritable(path, io::Error::other(e)))
    };
    let mut w = csv::Writer::from_writer(open_output(out)?);
    let written = (|| -> Result<(), csv::Error> {
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        Ok(w.flush()?)
    })();
    match written.map_err(fail) {
        Err(Some(f)) => Err(f),
        _ => Ok(()),
    }
}

fn cmd_worst_input(
    path: &Path,
    band: &BandArgs,
    solver: &SolverArgs,
    steps: usize,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let sys = load(path)?;
    let band = band.resolve()?;
    let a = analyze(&sys, band, &solver.settings())?;
    let cert = &a.certificate;
    let input = Sinusoid::new(cert.w_opt.clone(), cert.theta_opt);
    let trajectory = simulate_trajectory(&sys, &input, steps)?;
    let check = verify_certificate(&sys, cert, steps)?;

    let mut header = vec!["k".to_string()];
    for i in 0..sys.m() {
        header.extend([format!("w{i}_re"), format!("w{i}_im")]);
    }
    for i in 0..sys.l() {
        header.extend([format!("z{i}_re"), format!("z{i}_im")]);
    }
    header.push("running_power".into());
    let rows = trajectory.iter().enumerate().map(|(k, s)| {
        let mut row = vec![k.to_string()];
        for z in s.input.iter().chain(s.output.iter()) {
            row.extend([z.re.to_string(), z.im.to_string()]);
        }
        row.push(s.running_power.to_string());
        row
    });
    write_csv(out, &header, rows)?;

    eprintln!("theta_opt      {}", sig(cert.theta_opt));
    eprintln!("mu_opt         {}", sig(cert.mu_opt));
    eprintln!("running power  {} after {steps} steps", sig(check.p_n));
    eprintln!("relative error {}", sig(check.relative_error));
    Ok(())
}

fn cmd_kyp_dual(path: &Path, band: &BandArgs, solver: &SolverArgs, as_json: bool) -> Result<(), Failure> {
    let sys = load(path)?;
    let band = band.resolve()?;
    let settings = solver.settings();
    let dual = solve_dual_lmi(&build_dual(&sys, band)?, &settings)?;
    if !dual.status.is_usable() && !dual.not_attained {
        return Err(Error::Solver {
            status: dual.status,
            message: format!("dual solve stopped after {} iterations", dual.iterations),
        }
        .into());
    }
    let primal = solve(&build_primal(&sys, band)?, &settings)?;
    let gap = (dual.lambda - primal.objective).abs();

    if as_json {
        let report = json!({
            "band": band,
            "lambda": dual.lambda,
            "p_norm": dual.p_norm,
            "not_attained": dual.not_attained,
            "lmi_max_eigenvalue": dual.lmi_max_eigenvalue,
            "status": dual.status,
            "iterations": dual.iterations,
            "primal_objective": primal.objective,
            "primal_status": primal.status,
            "gap": gap,
        });
        return emit(&(serde_json::to_string_pretty(&report).expect("report is valid JSON") + "\n"));
    }

    let mut r = String::new();
    writeln!(r, "band              {band}").ok();
    writeln!(r, "lambda            {}", sig(dual.lambda)).ok();
    writeln!(r, "||P||             {}", sig(dual.p_norm)).ok();
    writeln!(r, "lmi max eigval    {}", sig(dual.lmi_max_eigenvalue)).ok();
    writeln!(
        r,
        "status            {:?} after {} iterations",
        dual.status, dual.iterations
    )
    .ok();
    writeln!(r, "primal objective  {} ({:?})", sig(primal.objective), primal.status).ok();
    writeln!(r, "gap               {}", sig(gap)).ok();
    if dual.not_attained {
        writeln!(
            r,
            "NOT-ATTAINED      the multiplier norm diverges; the dual infimum is not attained"
        )
        .ok();
    }
    emit(&r)
}

fn cmd_bode(path: &Path, grid: usize, out: Option<&Path>) -> Result<(), Failure> {
    let sys = load(path)?;
    let thetas: Vec<f64> = (0..grid)
        .map(|i| {
            if grid == 1 {
                -std::f64::consts::PI
            } else {
                -std::f64::consts::PI + 2.0 * std::f64::consts::PI * i as f64 / (grid - 1) as f64
            }
        })
        .collect();
    let gains = thetas
        .iter()
        .map(|&t| gain(&sys, t))
        .collect::<hinf::Result<Vec<f64>>>()?;
    let header = ["theta".to_string(), "gain".to_string()];
    write_csv(
        out,
        &header,
        thetas
            .iter()
            .zip(&gains)
            .map(|(t, g)| vec![t.to_string(), g.to_string()]),
    )
}
