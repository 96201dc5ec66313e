//! Command-line interface: parameter resolution, subcommand dispatch, and
//! deterministic CSV emission for two-parameter sweeps.
//!
//! Exit codes: `1` for configuration problems (bad flags, files, or
//! parameters), `2` for solver failures (Riccati blow-up, admissibility
//! violations, or an empty agreement bracket), `3` when a Monte Carlo
//! acceptance band is violated. Identical invocations produce byte-identical
//! output files: sweep points may be evaluated in parallel, but rows are
//! assembled in row-major grid order and all floats are printed with a fixed
//! 17-significant-digit format.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::equilibrium::solve_equilibrium;
use crate::grid::csv_float;
use crate::model::{parse_config, ModelError, ModelParams, ValidatedParams, PARAM_KEYS};
use crate::montecarlo::{simulate_equilibrium, McEstimate, SimConfig};
use crate::pricing::{
    find_lambda_star, indifference_prices, risk_premium_report, AgreementResult, Bracket,
    PremiumRow, PricingError,
};
use crate::riccati::SolveError;

/// Top-level error of a CLI run, carrying the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, files, parameter values, or simulation configuration.
    Config(String),
    /// The solver rejected an otherwise valid configuration.
    Solver(String),
    /// A Monte Carlo acceptance band was violated.
    Acceptance(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Solver(_) => 2,
            CliError::Acceptance(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) | CliError::Solver(msg) | CliError::Acceptance(msg) => {
                f.write_str(msg)
            }
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        CliError::Solver(e.to_string())
    }
}

impl From<PricingError> for CliError {
    fn from(e: PricingError) -> Self {
        match e {
            PricingError::BadBracket { .. } => CliError::Config(e.to_string()),
            PricingError::Solve { .. } | PricingError::NoSignChange { .. } => {
                CliError::Solver(e.to_string())
            }
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "commodity-game",
    version,
    about = "Nash-equilibrium solver and forward-agreement pricer for a two-player commodity market"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the equilibrium at a fixed contract and print the value report.
    Solve(SolveArgs),
    /// Locate the agreement quantity and forward price, and report the risk
    /// premium.
    Price(PriceArgs),
    /// Validate the solved equilibrium by Monte Carlo simulation.
    McValidate(McValidateArgs),
    /// Evaluate the agreement point over a two-parameter grid and write CSV.
    Sweep(SweepArgs),
}

/// Parameter sources shared by every subcommand. Resolution order: baseline
/// values, then the config file, then `--set` overrides, then the dedicated
/// shortcut flags.
#[derive(Args, Debug, Default)]
struct ParamArgs {
    /// Parameter file with `key = value` lines.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override a single parameter, e.g. `--set eta_p=0.05` (repeatable).
    #[arg(long, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Contract quantity.
    #[arg(long)]
    lambda: Option<f64>,
    /// Producer risk-aversion weight.
    #[arg(long = "eta-p")]
    eta_p: Option<f64>,
    /// Consumer risk-aversion weight.
    #[arg(long = "eta-c")]
    eta_c: Option<f64>,
    /// Producer volatility-control cost weight.
    #[arg(long = "l-p")]
    l_p: Option<f64>,
    /// Consumer volatility-control cost weight.
    #[arg(long = "l-c")]
    l_c: Option<f64>,
}

impl ParamArgs {
    fn resolve(&self) -> Result<ModelParams, CliError> {
        let mut p = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| {
                    CliError::Config(format!("cannot read config {}: {e}", path.display()))
                })?;
                parse_config(&text)?
            }
            None => ModelParams::baseline(),
        };
        for pair in &self.set {
            let Some((key, value)) = pair.split_once('=') else {
                return Err(CliError::Config(format!(
                    "--set expects KEY=VALUE, got `{pair}`"
                )));
            };
            let value: f64 = value.trim().parse().map_err(|_| {
                CliError::Config(format!("--set {key}: `{}` is not a number", value.trim()))
            })?;
            p.set(key.trim(), value)?;
        }
        let shortcuts = [
            ("lambda", self.lambda),
            ("eta_p", self.eta_p),
            ("eta_c", self.eta_c),
            ("l_p", self.l_p),
            ("l_c", self.l_c),
        ];
        for (key, value) in shortcuts {
            if let Some(v) = value {
                p.set(key, v).expect("shortcut keys are parameter names");
            }
        }
        Ok(p)
    }
}

fn validated(args: &ParamArgs) -> Result<ValidatedParams, CliError> {
    Ok(args.resolve()?.validate()?)
}

/// The value quadrature uses Simpson's rule, so the solver grid must have an
/// even, positive number of steps.
fn check_steps(steps: usize) -> Result<usize, CliError> {
    if steps == 0 || steps % 2 != 0 {
        return Err(CliError::Config(format!(
            "--steps must be a positive even number, got {steps}"
        )));
    }
    Ok(steps)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    params: ParamArgs,
    /// Solver grid steps (positive and even).
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    /// Write the deterministic moment trajectory as CSV.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Write the solved feedback coefficients as CSV.
    #[arg(long, value_name = "PATH")]
    coeffs_out: Option<PathBuf>,
}

fn cmd_solve(args: SolveArgs) -> Result<(), CliError> {
    let p = validated(&args.params)?;
    let steps = check_steps(args.steps)?;
    let eq = solve_equilibrium(&p, steps)?;
    println!("{}", eq.report);
    if let Some(path) = &args.out {
        let mut buf = Vec::new();
        eq.moments.write_csv(&mut buf).expect("in-memory write cannot fail");
        write_file(path, &String::from_utf8(buf).expect("csv is utf-8"))?;
    }
    if let Some(path) = &args.coeffs_out {
        let mut buf = Vec::new();
        eq.riccati.write_csv(&mut buf).expect("in-memory write cannot fail");
        write_file(path, &String::from_utf8(buf).expect("csv is utf-8"))?;
    }
    Ok(())
}

#[derive(Args, Debug)]
struct PriceArgs {
    #[command(flatten)]
    params: ParamArgs,
    /// Solver grid steps (positive and even).
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    /// Search bracket for the agreement quantity, as `LO,HI`.
    #[arg(long, value_name = "LO,HI")]
    bracket: Option<String>,
    /// Append-free output: write the premium row as a one-line CSV.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

fn parse_bracket(text: &str) -> Result<Bracket, CliError> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let [lo, hi] = parts.as_slice() else {
        return Err(CliError::Config(format!(
            "--bracket expects two comma-separated numbers, got `{text}`"
        )));
    };
    let parse = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| CliError::Config(format!("--bracket: `{s}` is not a number")))
    };
    Ok(Bracket::new(parse(lo)?, parse(hi)?)?)
}

fn cmd_price(args: PriceArgs) -> Result<(), CliError> {
    let p = validated(&args.params)?;
    let steps = check_steps(args.steps)?;
    let bracket = match &args.bracket {
        Some(text) => parse_bracket(text)?,
        None => Bracket::default(),
    };
    let res = find_lambda_star(&p, bracket, steps)?;
    println!("{res}");
    if let Some(path) = &args.out {
        let row = risk_premium_report(&res, &p);
        let text = format!("{}\n{}\n", PremiumRow::csv_header(), row.to_csv_row());
        write_file(path, &text)?;
    }
    Ok(())
}

#[derive(Args, Debug)]
struct McValidateArgs {
    #[command(flatten)]
    params: ParamArgs,
    /// Solver grid steps (positive and even; must be a multiple of the
    /// simulation steps).
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    /// Simulated paths.
    #[arg(long, default_value_t = 100_000)]
    paths: usize,
    /// Euler time steps of the simulation grid.
    #[arg(long, default_value_t = 1000)]
    time_steps: usize,
    /// Seed of the path generators.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Write every term table into one CSV.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

struct McRun {
    label: String,
    estimate: McEstimate,
    failures: Vec<String>,
}

fn mc_run(
    label: String,
    p: &ValidatedParams,
    steps: usize,
    cfg: &SimConfig,
) -> Result<McRun, CliError> {
    let eq = solve_equilibrium(p, steps)?;
    let est = simulate_equilibrium(&eq.policy, &eq.moments, p, cfg)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut failures = Vec::new();
    println!("{label}");
    println!("{est}");
    for (who, hat, star, se) in [
        ("producer", est.producer.j_hat, eq.report.j_p, est.producer.se),
        ("consumer", est.consumer.j_hat, eq.report.j_c, est.consumer.se),
    ] {
        let gap = (hat - star).abs();
        let band = 3.0 * se;
        let ok = gap <= band;
        println!(
            "  {who}: |J_hat - J*| = {gap:.6e} {} 3*se = {band:.6e}  {}",
            if ok { "<=" } else { ">" },
            if ok { "PASS" } else { "FAIL" }
        );
        if !ok {
            failures.push(format!(
                "{label}: {who} estimate misses the three-standard-error band \
                 (|{hat} - {star}| = {gap:.6e} > {band:.6e})"
            ));
        }
    }
    if est.variance_identity_gap > 1e-10 {
        println!("  variance identity gap {:.3e} > 1e-10  FAIL", est.variance_identity_gap);
        failures.push(format!(
            "{label}: variance identity gap {:.3e} exceeds 1e-10",
            est.variance_identity_gap
        ));
    }
    if est.producer.se > 0.0 {
        let t = p.horizon;
        let checkpoints = [t / 4.0, t / 2.0, t];
        for band in est.moment_bands(&eq.moments, &checkpoints, 4.0) {
            if !band.within {
                println!(
                    "  moment band: {} at t={:.4} off by more than four standard errors  FAIL",
                    band.quantity, band.t
                );
                failures.push(format!(
                    "{label}: {} at t={:.4} drifted from the moment trajectory \
                     (estimate {}, target {}, se {})",
                    band.quantity, band.t, band.estimate, band.target, band.se
                ));
            }
        }
    }
    println!();
    Ok(McRun {
        label,
        estimate: est,
        failures,
    })
}

fn cmd_mc_validate(args: McValidateArgs) -> Result<(), CliError> {
    let base = validated(&args.params)?;
    let steps = check_steps(args.steps)?;
    let cfg = SimConfig::new(args.paths, args.time_steps, args.seed);
    let contract_lambda = args.params.lambda.unwrap_or(1.0);

    let mut runs = Vec::new();
    runs.push(mc_run(
        "no contract (lambda=0, F=0)".to_string(),
        &base.with_contract(0.0, 0.0),
        steps,
        &cfg,
    )?);
    if contract_lambda != 0.0 {
        let (f_p, _) = indifference_prices(&base, contract_lambda, steps)?;
        runs.push(mc_run(
            format!("producer indifference contract (lambda={contract_lambda}, F={f_p:.6})"),
            &base.with_contract(contract_lambda, f_p),
            steps,
            &cfg,
        )?);
    }

    if let Some(path) = &args.out {
        let mut text = String::from("run,term,producer,consumer\n");
        for run in &runs {
            let mut buf = Vec::new();
            run.estimate.write_csv(&mut buf).expect("in-memory write cannot fail");
            let table = String::from_utf8(buf).expect("csv is utf-8");
            for line in table.lines().skip(1) {
                text.push_str(&run.label.replace(',', ";"));
                text.push(',');
                text.push_str(line);
                text.push('\n');
            }
        }
        write_file(path, &text)?;
    }

    let failures: Vec<String> = runs.into_iter().flat_map(|r| r.failures).collect();
    if failures.is_empty() {
        println!("all Monte Carlo acceptance bands hold");
        Ok(())
    } else {
        Err(CliError::Acceptance(failures.join("\n")))
    }
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    params: ParamArgs,
    /// Sweep description file.
    #[arg(long, value_name = "PATH")]
    spec: PathBuf,
    /// Solver grid steps (positive and even).
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    /// Output CSV path; overrides the `out` entry of the spec file.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

/// A swept quantity of the agreement point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    FStar,
    LambdaStar,
    UnitPrice,
    Premium,
    JPAtAgreement,
}

impl Quantity {
    pub const ALL: [Quantity; 5] = [
        Quantity::FStar,
        Quantity::LambdaStar,
        Quantity::UnitPrice,
        Quantity::Premium,
        Quantity::JPAtAgreement,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Quantity::FStar => "F_star",
            Quantity::LambdaStar => "lambda_star",
            Quantity::UnitPrice => "unit_price",
            Quantity::Premium => "premium",
            Quantity::JPAtAgreement => "J_p_star_at_agreement",
        }
    }

    fn parse(token: &str) -> Option<Quantity> {
        Quantity::ALL.iter().copied().find(|q| q.name() == token)
    }

    fn extract(self, res: &AgreementResult) -> f64 {
        match self {
            Quantity::FStar => res.f_star,
            Quantity::LambdaStar => res.lambda_star,
            Quantity::UnitPrice => res.unit_price,
            Quantity::Premium => res.risk_premium,
            Quantity::JPAtAgreement => res.j_p_at_agreement,
        }
    }
}

/// One sweep axis: a parameter name and a deterministic grid over it.
#[derive(Debug, Clone)]
pub struct SweepAxis {
    pub param: String,
    pub lo: f64,
    pub hi: f64,
    pub n_points: usize,
    pub log_spaced: bool,
}

impl SweepAxis {
    /// Grid values with exact endpoints.
    pub fn values(&self) -> Vec<f64> {
        let n = self.n_points;
        let mut out: Vec<f64> = (0..n)
            .map(|i| {
                let s = i as f64 / (n - 1) as f64;
                if self.log_spaced {
                    self.lo * (self.hi / self.lo).powf(s)
                } else {
                    self.lo + (self.hi - self.lo) * s
                }
            })
            .collect();
        out[0] = self.lo;
        out[n - 1] = self.hi;
        out
    }
}

/// A two-parameter sweep request.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub axis1: SweepAxis,
    pub axis2: SweepAxis,
    /// Fixed parameter overrides applied before the axis values.
    pub fixed: Vec<(String, f64)>,
    /// Default output path; the `--out` flag wins when both are present.
    pub output: Option<PathBuf>,
    pub quantities: Vec<Quantity>,
}

fn parse_axis(key: &str, value: &str) -> Result<SweepAxis, CliError> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    let [param, lo, hi, n_points, spacing] = parts.as_slice() else {
        return Err(CliError::Config(format!(
            "{key} expects `param, lo, hi, n_points, linear|log`, got `{value}`"
        )));
    };
    if !PARAM_KEYS.contains(param) {
        return Err(CliError::Config(format!(
            "{key}: `{param}` is not a model parameter"
        )));
    }
    let num = |what: &str, s: &str| {
        s.parse::<f64>()
            .map_err(|_| CliError::Config(format!("{key}: {what} `{s}` is not a number")))
    };
    let lo = num("lo", lo)?;
    let hi = num("hi", hi)?;
    let n_points: usize = n_points
        .parse()
        .map_err(|_| CliError::Config(format!("{key}: n_points `{n_points}` is not an integer")))?;
    if n_points < 2 {
        return Err(CliError::Config(format!("{key}: n_points must be at least 2")));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(CliError::Config(format!(
            "{key}: need lo < hi, got {lo} and {hi}"
        )));
    }
    let log_spaced = match *spacing {
        "linear" => false,
        "log" => true,
        other => {
            return Err(CliError::Config(format!(
                "{key}: spacing must be `linear` or `log`, got `{other}`"
            )))
        }
    };
    if log_spaced && lo <= 0.0 {
        return Err(CliError::Config(format!(
            "{key}: log spacing needs positive endpoints"
        )));
    }
    Ok(SweepAxis {
        param: param.to_string(),
        lo,
        hi,
        n_points,
        log_spaced,
    })
}

/// Parses a sweep description: `axis1` and `axis2` lines, optional `out`,
/// optional `quantities`, and any number of fixed parameter overrides using
/// the plain `key = value` format of the parameter files.
pub fn parse_sweep_spec(text: &str) -> Result<SweepSpec, CliError> {
    let mut axis1 = None;
    let mut axis2 = None;
    let mut output = None;
    let mut quantities: Option<Vec<Quantity>> = None;
    let mut fixed: Vec<(String, f64)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Config(format!(
                "sweep spec line {}: expected `key = value`, got `{}`",
                idx + 1,
                raw.trim()
            )));
        };
        let key = key.trim();
        let value = value.trim();
        match key {
            "axis1" => axis1 = Some(parse_axis(key, value)?),
            "axis2" => axis2 = Some(parse_axis(key, value)?),
            "out" => output = Some(PathBuf::from(value)),
            "quantities" => {
                let mut list = Vec::new();
                for token in value.split(',').map(str::trim).filter(|t| !t.is_empty()) {
                    let q = Quantity::parse(token).ok_or_else(|| {
                        CliError::Config(format!(
                            "unknown quantity `{token}`; choose from {}",
                            Quantity::ALL.map(Quantity::name).join(", ")
                        ))
                    })?;
                    if list.contains(&q) {
                        return Err(CliError::Config(format!("duplicate quantity `{token}`")));
                    }
                    list.push(q);
                }
                if list.is_empty() {
                    return Err(CliError::Config("quantities list is empty".to_string()));
                }
                quantities = Some(list);
            }
            _ if PARAM_KEYS.contains(&key) => {
                if fixed.iter().any(|(k, _)| k == key) {
                    return Err(CliError::Config(format!("duplicate fixed override `{key}`")));
                }
                let v: f64 = value.parse().map_err(|_| {
                    CliError::Config(format!("fixed override {key}: `{value}` is not a number"))
                })?;
                fixed.push((key.to_string(), v));
            }
            _ => {
                return Err(CliError::Config(format!(
                    "sweep spec line {}: unknown key `{key}`",
                    idx + 1
                )))
            }
        }
    }
    let axis1 = axis1.ok_or_else(|| CliError::Config("sweep spec is missing axis1".into()))?;
    let axis2 = axis2.ok_or_else(|| CliError::Config("sweep spec is missing axis2".into()))?;
    if axis1.param == axis2.param {
        return Err(CliError::Config(format!(
            "axis1 and axis2 both sweep `{}`; pick two different parameters",
            axis1.param
        )));
    }
    Ok(SweepSpec {
        axis1,
        axis2,
        fixed,
        output,
        quantities: quantities.unwrap_or_else(|| Quantity::ALL.to_vec()),
    })
}

fn point_status(e: &PricingError) -> &'static str {
    match e {
        PricingError::Solve { source, .. } => match source {
            SolveError::BlowUp { .. } => "BlowUp",
            SolveError::A2Violation { .. } => "A2Violation",
            SolveError::GridParity { .. } => "GridParity",
        },
        PricingError::NoSignChange { .. } => "NoSignChange",
        PricingError::BadBracket { .. } => "BadBracket",
    }
}

/// Evaluates the agreement point over the grid and renders the CSV text.
///
/// Points are independent and may be computed in parallel; rows are emitted
/// in row-major order (axis1 outer, axis2 inner) with exact grid endpoints,
/// so the output is deterministic. A failing point keeps its row — the
/// quantity cells stay empty and the `status` column names the failure — and
/// never aborts the sweep.
pub fn run_sweep(spec: &SweepSpec, base: &ModelParams, n_steps: usize) -> String {
    let mut template = base.clone();
    for (key, value) in &spec.fixed {
        template
            .set(key, *value)
            .expect("fixed overrides were checked against the parameter names");
    }
    let xs = spec.axis1.values();
    let ys = spec.axis2.values();
    let points: Vec<(f64, f64)> = xs
        .iter()
        .flat_map(|&x| ys.iter().map(move |&y| (x, y)))
        .collect();

    let rows: Vec<String> = points
        .par_iter()
        .map(|&(x, y)| {
            let mut p = template.clone();
            p.set(&spec.axis1.param, x).expect("axis names were checked");
            p.set(&spec.axis2.param, y).expect("axis names were checked");
            let outcome = p
                .validate()
                .map_err(|_| "InvalidParams")
                .and_then(|vp| {
                    find_lambda_star(&vp, Bracket::default(), n_steps)
                        .map_err(|e| point_status(&e))
                });
            let mut row = format!("{},{}", csv_float(x), csv_float(y));
            match outcome {
                Ok(res) => {
                    for q in &spec.quantities {
                        row.push(',');
                        row.push_str(&csv_float(q.extract(&res)));
                    }
                    row.push_str(",ok");
                }
                Err(status) => {
                    for _ in &spec.quantities {
                        row.push(',');
                    }
                    row.push(',');
                    row.push_str(status);
                }
            }
            row
        })
        .collect();

    let mut text = String::new();
    text.push_str(&spec.axis1.param);
    text.push(',');
    text.push_str(&spec.axis2.param);
    for q in &spec.quantities {
        text.push(',');
        text.push_str(q.name());
    }
    text.push_str(",status\n");
    for row in rows {
        text.push_str(&row);
        text.push('\n');
    }
    text
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    let base = args.params.resolve()?;
    let steps = check_steps(args.steps)?;
    let text = fs::read_to_string(&args.spec).map_err(|e| {
        CliError::Config(format!("cannot read sweep spec {}: {e}", args.spec.display()))
    })?;
    let spec = parse_sweep_spec(&text)?;
    let out = args
        .out
        .clone()
        .or_else(|| spec.output.clone())
        .ok_or_else(|| {
            CliError::Config("no output path: give --out or an `out` entry in the spec".into())
        })?;
    let csv = run_sweep(&spec, &base, steps);
    write_file(&out, &csv)?;
    println!(
        "wrote {} rows to {}",
        spec.axis1.n_points * spec.axis2.n_points,
        out.display()
    );
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Price(args) => cmd_price(args),
        Command::McValidate(args) => cmd_mc_validate(args),
        Command::Sweep(args) => cmd_sweep(args),
    }
}

/// Parses the command line, runs the chosen subcommand, and returns the
/// process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version land here as non-error displays.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
