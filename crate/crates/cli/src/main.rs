//! `gapcal`: calibrate, verify and refine killed gap-diffusion chains from
//! JSON files.
//!
//! Exit status is 0 on success, 1 for invalid input, 2 when a solver or a
//! verification fails and 3 for I/O errors. Failures also print a JSON
//! object to standard error.

mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use gapcal_core::atomize::{atomize, hypothesis_check, refinement_sweep, ContinuousSpec, FReading, StringMeasureTable};
use gapcal_core::chain::simulate;
use gapcal_core::error::Error;
use gapcal_core::model::{Instance, LawKind};
use gapcal_core::solvers::{solve, verify_solution, FixedPointMethod, McCheck, Solution, SolverConfig};

use output::{fmt17, to_csv, to_json};

#[derive(Parser, Debug)]
#[command(name = "gapcal", version, about = "Calibrate killed birth-death chains to a target law at a random or fixed time")]
struct RunConfig {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    knobs: Knobs,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve an instance file and write the solution.
    Solve {
        instance: PathBuf,
        /// Also write the string measure as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Recompute the marginal of a solution and report its deviation.
    Verify { instance: PathBuf, solution: PathBuf },
    /// Monte Carlo marginal of a solution and its distance to the target.
    Simulate { instance: PathBuf, solution: PathBuf },
    /// Turn a continuous spec into an instance at refinement level N.
    Atomize {
        spec: PathBuf,
        #[arg(short = 'n', long = "level")]
        level: u32,
    },
    /// Solve a continuous spec at every level of a range.
    Sweep {
        spec: PathBuf,
        #[arg(long)]
        n_lo: u32,
        #[arg(long)]
        n_hi: u32,
        /// Per-level string measures as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Discrepancies between successive levels as CSV.
        #[arg(long)]
        convergence_csv: Option<PathBuf>,
    },
    /// Check the standing assumptions on a continuous spec.
    Hypcheck { spec: PathBuf },
}

#[derive(Args, Debug)]
struct Knobs {
    /// Horizon override.
    #[arg(long, global = true)]
    t: Option<f64>,
    /// Stage count override; turns an exponential law into a gamma law.
    #[arg(long, global = true)]
    r: Option<u32>,
    /// Step override; turns continuous staged laws into discrete ones.
    #[arg(long, global = true)]
    h: Option<f64>,
    /// Solver and verification tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[arg(long, global = true)]
    eps_floor: Option<f64>,
    #[arg(long, global = true)]
    r_max: Option<u32>,
    /// Use damped Picard iteration with this damping.
    #[arg(long, global = true)]
    damping: Option<f64>,
    /// Anderson acceleration for the Picard iteration.
    #[arg(long, global = true)]
    anderson: bool,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value_t = 100_000)]
    paths: usize,
    #[arg(long, global = true)]
    anchor_quantile: Option<f64>,
    #[arg(long, global = true, value_enum, default_value_t = Reading::Literal)]
    f_reading: Reading,
    /// Add a Monte Carlo cross-check to `verify`.
    #[arg(long, global = true)]
    mc_check: bool,
    /// Output file; standard output when absent.
    #[arg(short = 'o', long, global = true)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Reading {
    Literal,
    Atoms,
}

struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn new(code: u8, kind: &'static str, message: impl Into<String>) -> Self {
        Self { code, kind, message: message.into() }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new(3, "io", format!("{}: {e}", path.display()))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::Invalid(_) => "invalid_instance",
            Error::DriftBound { .. } => "drift_bound",
            Error::NegativeKilling { .. } => "negative_killing",
            Error::StepTooLarge { .. } => "step_too_large",
            Error::DegenerateAnchor => "degenerate_anchor",
            Error::NoBracket => "no_bracket",
            Error::Singular => "singular",
            Error::NonPositiveIntensity { .. } => "non_positive_intensity",
            Error::Residual { .. } => "residual",
            Error::NonConvergence { .. } => "non_convergence",
            Error::Law(_) => "law",
            Error::TooFewAtoms { .. } => "too_few_atoms",
            Error::Spec(_) => "spec",
            Error::Hypothesis(_) => "hypothesis",
        };
        Self::new(if e.is_validation() { 1 } else { 2 }, kind, e.to_string())
    }
}

type Outcome = Result<(), Failure>;

impl Knobs {
    fn validate(&self) -> Outcome {
        let positive = |name: &str, v: Option<f64>| match v {
            Some(x) if !(x > 0.0 && x.is_finite()) => Err(Failure::new(1, "config", format!("--{name} must be positive, got {x}"))),
            _ => Ok(()),
        };
        positive("t", self.t)?;
        positive("h", self.h)?;
        positive("tol", self.tol)?;
        positive("eps-floor", self.eps_floor)?;
        if matches!(self.r, Some(0)) || matches!(self.r_max, Some(0)) {
            return Err(Failure::new(1, "config", "stage counts must be at least 1"));
        }
        if let Some(d) = self.damping {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Failure::new(1, "config", format!("--damping must lie in (0, 1], got {d}")));
            }
        }
        if let Some(q) = self.anchor_quantile {
            if !(q > 0.0 && q < 1.0) {
                return Err(Failure::new(1, "config", format!("--anchor-quantile must lie in (0, 1), got {q}")));
            }
        }
        if self.paths == 0 {
            return Err(Failure::new(1, "config", "--paths must be positive"));
        }
        Ok(())
    }

    fn solver(&self) -> SolverConfig {
        let mut cfg = SolverConfig::default();
        if let Some(tol) = self.tol {
            cfg.exp_tol = tol;
            cfg.fixed_point_tol = tol;
            cfg.det_tol = tol;
        }
        if let Some(e) = self.eps_floor {
            cfg.eps_floor = e;
        }
        if let Some(r) = self.r_max {
            cfg.r_max = r;
        }
        if let Some(damping) = self.damping {
            cfg.method = FixedPointMethod::Picard { damping, anderson: self.anderson };
        }
        if let Some(q) = self.anchor_quantile {
            cfg.anchor_quantile = q;
        }
        cfg
    }

    fn reading(&self) -> FReading {
        match self.f_reading {
            Reading::Literal => FReading::Literal,
            Reading::Atoms => FReading::Atoms,
        }
    }

    fn apply_law(&self, law: &mut gapcal_core::model::TimeLaw) -> Outcome {
        if let Some(t) = self.t {
            law.t = t;
        }
        let bad = |what: &str| Err(Failure::new(1, "law", format!("{what} does not apply to a deterministic time")));
        if let Some(r) = self.r {
            law.kind = match law.kind {
                LawKind::Exponential | LawKind::Gamma { .. } => LawKind::Gamma { r },
                LawKind::Geometric { h } | LawKind::NegBinomial { h, .. } => LawKind::NegBinomial { r, h },
                LawKind::Deterministic => return bad("--r"),
            };
        }
        if let Some(h) = self.h {
            law.kind = match law.kind {
                LawKind::Exponential | LawKind::Geometric { .. } => LawKind::Geometric { h },
                LawKind::Gamma { r } | LawKind::NegBinomial { r, .. } => LawKind::NegBinomial { r, h },
                LawKind::Deterministic => return bad("--h"),
            };
        }
        Ok(())
    }

    /// Tolerance a solution of `inst` is held to.
    fn tolerance(&self, inst: &Instance) -> f64 {
        let cfg = self.solver();
        match inst.law.kind {
            LawKind::Exponential | LawKind::Geometric { .. } => cfg.exp_tol,
            LawKind::Gamma { .. } | LawKind::NegBinomial { .. } => cfg.fixed_point_tol,
            LawKind::Deterministic => cfg.det_tol,
        }
    }
}

fn read<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Failure::new(1, "parse", format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Outcome {
    fs::write(path, bytes).map_err(|e| Failure::io(path, e))
}

fn emit<T: Serialize>(knobs: &Knobs, value: &T) -> Outcome {
    let bytes = to_json(value);
    match &knobs.output {
        Some(path) => write_file(path, &bytes),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&bytes).map_err(|e| Failure::io(Path::new("<stdout>"), e))
        }
    }
}

fn string_rows(table: &StringMeasureTable, prefix: Option<u32>) -> Vec<Vec<String>> {
    table
        .entries
        .iter()
        .map(|e| {
            let mut row: Vec<String> = prefix.map(|n| n.to_string()).into_iter().collect();
            row.extend([fmt17(e.state), e.m.map_or("inf".into(), fmt17), fmt17(e.a), fmt17(e.lambda)]);
            row
        })
        .collect()
}

fn load_instance(knobs: &Knobs, path: &Path) -> Result<Instance, Failure> {
    let mut inst: Instance = read(path)?;
    knobs.apply_law(&mut inst.law)?;
    Ok(inst)
}

fn load_spec(knobs: &Knobs, path: &Path) -> Result<ContinuousSpec, Failure> {
    let mut spec: ContinuousSpec = read(path)?;
    knobs.apply_law(&mut spec.law)?;
    Ok(spec)
}

#[derive(Serialize)]
struct SimulationReport {
    paths: usize,
    seed: u64,
    marginal: Vec<f64>,
    target: Vec<f64>,
    tv_distance: f64,
}

fn run(cfg: &RunConfig) -> Outcome {
    let knobs = &cfg.knobs;
    knobs.validate()?;
    let solver = knobs.solver();
    match &cfg.command {
        Command::Solve { instance, csv } => {
            let inst = load_instance(knobs, instance)?;
            let sol = solve(&inst, &solver)?;
            emit(knobs, &sol)?;
            if let Some(path) = csv {
                write_file(path, &to_csv(&["state", "m", "a", "lambda"], string_rows(&sol.string_measure, None)))?;
            }
            if !sol.diagnostics.converged {
                return Err(Failure::new(2, "non_convergence", format!("residual {:e} above tolerance", sol.diagnostics.residual)));
            }
        }
        Command::Verify { instance, solution } => {
            let inst = load_instance(knobs, instance)?;
            let sol: Solution = read(solution)?;
            let mc = knobs.mc_check.then_some(McCheck { paths: knobs.paths, seed: knobs.seed });
            let rep = verify_solution(&inst, &sol, mc, knobs.tolerance(&inst))?;
            emit(knobs, &rep)?;
            if !rep.passed {
                return Err(Failure::new(2, "verification", format!("deviation {:e} exceeds tolerance {:e}", rep.deviation, rep.tol)));
            }
        }
        Command::Simulate { instance, solution } => {
            let inst = load_instance(knobs, instance)?;
            let sol: Solution = read(solution)?;
            if sol.lambda.len() != inst.m() || !(2..=inst.m()).contains(&sol.l) {
                return Err(Failure::new(1, "spec", "solution does not match the instance"));
            }
            let emp = simulate(&inst, &sol.lambda, &sol.start(), knobs.paths, knobs.seed)?;
            let mut target: Vec<f64> = inst.pmf.probs().iter().map(|p| sol.alpha * p).collect();
            target.push(1.0 - sol.alpha);
            let tv_distance = emp.tv_distance(&target);
            emit(knobs, &SimulationReport { paths: knobs.paths, seed: knobs.seed, marginal: emp.0, target, tv_distance })?;
        }
        Command::Atomize { spec, level } => {
            let spec = load_spec(knobs, spec)?;
            emit(knobs, &atomize(&spec, *level)?.instance)?;
        }
        Command::Sweep { spec, n_lo, n_hi, csv, convergence_csv } => {
            let spec = load_spec(knobs, spec)?;
            let rep = refinement_sweep(&spec, *n_lo, *n_hi, &solver, knobs.reading())?;
            emit(knobs, &rep)?;
            if let Some(path) = csv {
                let rows = rep.levels.iter().flat_map(|l| string_rows(&l.string_measure, Some(l.level)));
                write_file(path, &to_csv(&["level", "state", "m", "a", "lambda"], rows))?;
            }
            if let Some(path) = convergence_csv {
                let rows = rep.discrepancies.iter().map(|d| vec![d.coarse.to_string(), d.fine.to_string(), fmt17(d.sup)]);
                write_file(path, &to_csv(&["coarse", "fine", "sup"], rows))?;
            }
            if let Some(l) = rep.levels.iter().find(|l| !l.converged) {
                return Err(Failure::new(2, "non_convergence", format!("level {} did not converge", l.level)));
            }
        }
        Command::Hypcheck { spec } => {
            let spec = load_spec(knobs, spec)?;
            spec.validate()?;
            let rep = hypothesis_check(&spec, knobs.reading());
            emit(knobs, &rep)?;
            if !rep.passed {
                return Err(Failure::new(1, "hypothesis", rep.failures().join("; ")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cfg = match RunConfig::try_parse() {
        Ok(cfg) => cfg,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            report(&Failure::new(1, "usage", e.kind().to_string()));
            return ExitCode::from(1);
        }
    };
    match run(&cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            report(&f);
            ExitCode::from(f.code)
        }
    }
}

fn report(f: &Failure) {
    let detail = serde_json::json!({ "error": { "code": f.code, "kind": f.kind, "message": f.message } });
    eprintln!("{detail}");
}
