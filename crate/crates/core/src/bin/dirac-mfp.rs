//! Command-line driver.
//!
//! Exit codes: 0 success, 1 bad usage, config or input file, 2 solver or
//! pipeline failure (including missing run artifacts), 3 failed checks under
//! `--strict`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dirac_mfp::run::{self, RunConfig, RunOutput, SweepAxis, TargetKind};
use dirac_mfp::{Error, LinearSolver, TerminalDensity};

const EXIT_USAGE: u8 = 1;
const EXIT_FAILURE: u8 = 2;
const EXIT_STRICT: u8 = 3;

#[derive(Parser)]
#[command(name = "dirac-mfp", version, about = "Mean-field planning from a Dirac mass: solver and self-similar diagnostics")]
#[command(allow_negative_numbers = true)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve one configuration and write a run directory.
    Solve {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Independent runs over eps or theta values.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values of the swept parameter.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
        /// Times of the pairwise d1 table (eps sweeps).
        #[arg(long, value_delimiter = ',', default_values_t = run::CAUCHY_TIMES.to_vec())]
        cauchy_times: Vec<f64>,
    },
    /// Refit the rate laws of a run directory.
    Rates {
        dir: PathBuf,
        #[arg(long)]
        t_min: Option<f64>,
        #[arg(long)]
        t_max: Option<f64>,
    },
    /// Check a terminal density file against the compatibility condition.
    Validate {
        file: PathBuf,
        #[arg(long)]
        theta: f64,
        #[arg(long, default_value_t = dirac_mfp::target::DEFAULT_RATIO_BOUND)]
        ratio_bound: f64,
        #[arg(long)]
        strict: bool,
    },
    /// Write plot-ready tables into `<dir>/plots`.
    Export { dir: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Eps,
    Theta,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    PowerBump,
    SelfSimilar,
    File,
}

#[derive(Clone, Copy, ValueEnum)]
enum Linear {
    BandedDirect,
    ConjugateGradient,
}

/// Config file plus per-field overrides.
#[derive(Args)]
struct RunArgs {
    /// TOML config; flags override its fields.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    /// Final time.
    #[arg(long = "T", alias = "t-final")]
    t_final: Option<f64>,
    #[arg(long)]
    nt: Option<usize>,
    #[arg(long)]
    ny: Option<usize>,
    #[arg(long, value_enum)]
    target: Option<Kind>,
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    target_path: Option<PathBuf>,
    #[arg(long)]
    t_min: Option<f64>,
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long, value_enum)]
    linear_solver: Option<Linear>,
    #[arg(long)]
    newton_max_iter: Option<usize>,
    #[arg(long)]
    residual_tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Exit 3 unless every check and rate law passes.
    #[arg(long)]
    strict: bool,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p).map_err(|e| match e {
                Error::Io(io) => Error::Format(format!("{}: {io}", p.display())),
                Error::Format(m) => Error::Format(format!("{}: {m}", p.display())),
                other => other,
            })?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($src:ident => $($dst:ident).+),*) => {$(
                if let Some(v) = self.$src.clone() {
                    c.$($dst).+ = v;
                }
            )*};
        }
        set!(theta => theta, eps => eps, t_final => t_final, nt => nt, ny => ny, a => target.a, b => target.b,
             newton_max_iter => solver.newton_max_iter, residual_tol => solver.residual_tol, seed => seed, out => output);
        if let Some(k) = self.target {
            c.target.kind = match k {
                Kind::PowerBump => TargetKind::PowerBump,
                Kind::SelfSimilar => TargetKind::SelfSimilar,
                Kind::File => TargetKind::File,
            };
        }
        if let Some(p) = &self.target_path {
            c.target.path = Some(p.clone());
        }
        if self.t_min.is_some() {
            c.fit.t_min = self.t_min;
        }
        if self.t_max.is_some() {
            c.fit.t_max = self.t_max;
        }
        if let Some(l) = self.linear_solver {
            c.solver.linear_solver = match l {
                Linear::BandedDirect => LinearSolver::BandedDirect,
                Linear::ConjugateGradient => LinearSolver::ConjugateGradient,
            };
        }
        c.strict |= self.strict;
        c.validate()?;
        Ok(c)
    }
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

/// Config and target errors are usage errors; the target is built once up
/// front so that file problems are reported before solving.
fn prepare(args: &RunArgs) -> Result<RunConfig, ExitCode> {
    let cfg = args.resolve().map_err(|e| fail(EXIT_USAGE, e))?;
    let p = dirac_mfp::Profile::new(cfg.theta).map_err(|e| fail(EXIT_USAGE, e))?;
    cfg.build_target(&p).map_err(|e| fail(EXIT_USAGE, e))?;
    Ok(cfg)
}

fn print_summary(o: &RunOutput, dir: &Path) {
    println!(
        "run {}: theta={} eps={} T={} grid {}x{}",
        dir.display(),
        o.config.theta,
        o.config.eps,
        o.config.t_final,
        o.config.nt,
        o.config.ny
    );
    println!(
        "newton: {} iterations, scaled residual {:.3e}, energy {:.10e}",
        o.solve.iterations, o.solve.scaled_residual, o.solve.energy_final
    );
    for c in &o.checks {
        println!("  check {:<24} {:>12.4e}  bound {:>10.3e}  {}", c.name, c.value, c.bound, verdict(Some(c.pass)));
    }
    println!("  kappa = {}{}", o.rates.kappa, if o.rates.critical { " (critical)" } else { "" });
    for l in &o.rates.laws {
        let fitted = l.fitted_exponent.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "  law   {:<24} {:>12}  theory {:>8.4}  {}{}",
            l.law,
            fitted,
            l.theoretical_exponent,
            verdict(l.pass),
            l.note.as_deref().map(|n| format!("  ({n})")).unwrap_or_default()
        );
    }
}

fn verdict(p: Option<bool>) -> &'static str {
    match p {
        Some(true) => "pass",
        Some(false) => "FAIL",
        None => "skip",
    }
}

fn cmd_solve(args: &RunArgs) -> ExitCode {
    let cfg = match prepare(args) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let out = match run::execute(&cfg) {
        Ok(o) => o,
        Err(Error::InvalidTarget(m)) if cfg.strict => return fail(EXIT_STRICT, m),
        Err(e) => return fail(EXIT_FAILURE, e),
    };
    if let Err(e) = run::write_run(&out, &cfg.output) {
        return fail(EXIT_FAILURE, e);
    }
    print_summary(&out, &cfg.output);
    if cfg.strict && !out.strict_pass() {
        return fail(EXIT_STRICT, "strict mode: at least one check or rate law failed");
    }
    ExitCode::SUCCESS
}

fn cmd_sweep(args: &RunArgs, axis: Axis, values: &[f64], times: &[f64]) -> ExitCode {
    if values.is_empty() {
        return fail(EXIT_USAGE, "--values must list at least one value");
    }
    let cfg = match prepare(args) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let axis = match axis {
        Axis::Eps => SweepAxis::Eps,
        Axis::Theta => SweepAxis::Theta,
    };
    let res = match run::sweep(&cfg, axis, values, &cfg.output, times) {
        Ok(r) => r,
        Err(e) => return fail(EXIT_FAILURE, e),
    };
    let mut all_ok = true;
    for e in &res.entries {
        match &e.outcome {
            Ok(o) => {
                let sr = o.rates.law("support_radius").and_then(|l| l.fitted_exponent).unwrap_or(f64::NAN);
                println!(
                    "{} = {:<10} ok      support exponent {:.4}  checks {}  rates {}",
                    axis.name(),
                    e.value,
                    sr,
                    verdict(Some(o.checks_pass())),
                    verdict(Some(o.rates.all_pass()))
                );
                all_ok &= o.strict_pass();
            }
            Err(m) => {
                println!("{} = {:<10} failed  {m}", axis.name(), e.value);
                all_ok = false;
            }
        }
    }
    for c in &res.cauchy {
        println!("d1(t={}, eps {} vs {}) = {:.6e}", c.t, c.eps_a, c.eps_b, c.d1);
    }
    println!("summary written to {}", cfg.output.join("summary.csv").display());
    if cfg.strict && !all_ok {
        return fail(EXIT_STRICT, "strict mode: at least one run failed");
    }
    ExitCode::SUCCESS
}

fn cmd_rates(dir: &Path, t_min: Option<f64>, t_max: Option<f64>) -> ExitCode {
    let window = match (t_min, t_max) {
        (None, None) => None,
        _ => match run::read_config(dir) {
            Ok(c) => {
                let (lo, hi) = c.window();
                Some((t_min.unwrap_or(lo), t_max.unwrap_or(hi)))
            }
            Err(e) => return fail(EXIT_FAILURE, e),
        },
    };
    match run::refit_rates(dir, window) {
        Ok(r) => {
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&r).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e @ Error::InvalidParameter(_)) => fail(EXIT_USAGE, e),
        Err(e) => fail(EXIT_FAILURE, e),
    }
}

fn cmd_validate(file: &Path, theta: f64, bound: f64, strict: bool) -> ExitCode {
    let m = match TerminalDensity::load_csv(file, theta) {
        Ok(m) => m,
        Err(e) => return fail(EXIT_USAGE, format!("{}: {e}", file.display())),
    };
    let r = m.validate_compatibility(bound);
    println!("c_lower = {:.16e}", r.c_lower);
    println!("c_upper = {:.16e}", r.c_upper);
    println!("{}", if r.pass { "pass" } else { "fail" });
    if let Some(reason) = &r.reason {
        println!("reason: {reason}");
    }
    if strict && !r.pass {
        return ExitCode::from(EXIT_STRICT);
    }
    ExitCode::SUCCESS
}

fn cmd_export(dir: &Path) -> ExitCode {
    match run::export_plots(dir) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(EXIT_FAILURE, e),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = run::thread_cap() {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail(EXIT_FAILURE, e);
        }
    }
    match &cli.cmd {
        Cmd::Solve { run } => cmd_solve(run),
        Cmd::Sweep { run, axis, values, cauchy_times } => cmd_sweep(run, *axis, values, cauchy_times),
        Cmd::Rates { dir, t_min, t_max } => cmd_rates(dir, *t_min, *t_max),
        Cmd::Validate { file, theta, ratio_bound, strict } => cmd_validate(file, *theta, *ratio_bound, *strict),
        Cmd::Export { dir } => cmd_export(dir),
    }
}
