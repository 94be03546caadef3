use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use eflow::pareto::{run_front, FrontConfig, NormalizationMode};
use eflow::report::{front_plot_data, front_table, sweep_table, write_atomic, SolveOutput};
use eflow::scenario::{
    builtin_rajshahi, load_bundle, load_scenario_auto, parse_scenario_toml, validate, RequirementClamp,
};
use eflow::solver::{program_for, solve_problem, solve_smoothed_multistart, MultistartConfig, SolveStatus, SolverOptions};
use eflow::sweep::{run_sweep, sweep_to_csv, SweepParameter, SweepRow};
use eflow::{model::build_problem_shared, Error, ProblemKind, Scenario, YearType};

/// Exit statuses, a stable contract for scripts.
const EXIT_USAGE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_SOLVER: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "eflow", version, about = "Crop-area and environmental-flow allocation models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve Model 1 (max net benefit) or Model 2 (min EFD).
    Solve(SolveArgs),
    /// Trace the net benefit / EFD Pareto front.
    Pareto(ParetoArgs),
    /// Re-solve a model over values of one scenario parameter.
    Sweep(SweepArgs),
    /// Check a scenario file and print every finding.
    Validate(ScenarioArgs),
}

#[derive(Args, Debug)]
struct ScenarioArgs {
    /// Scenario file (TOML) or CSV bundle directory.
    #[arg(long, value_name = "PATH", conflicts_with = "builtin")]
    scenario: Option<PathBuf>,
    /// Bundled dataset; the default when no --scenario is given.
    #[arg(long, value_name = "NAME", value_parser = ["rajshahi"])]
    builtin: Option<String>,
    /// Override the scenario's crop-requirement clamp.
    #[arg(long, value_enum)]
    clamp: Option<Clamp>,
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// Hydrological years, comma separated (default: all three).
    #[arg(long, value_delimiter = ',', value_parser = parse_year)]
    year: Vec<YearType>,
    /// Output directory. Without it, results are printed to stdout.
    #[arg(long, value_name = "DIR", env = "EFLOW_OUT_DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "table")]
    format: Vec<Format>,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// 1 = max net benefit, 2 = min EFD.
    #[arg(long, default_value = "1")]
    model: String,
    /// Use the smoothed multi-start descent instead of the exact solver.
    #[arg(long)]
    smoothed: bool,
    #[arg(long, default_value_t = 20)]
    starts: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also write the lowered program as free MPS (needs --out).
    #[arg(long)]
    mps: bool,
    /// Print one solver trace line per iteration / node to stderr.
    #[arg(long)]
    trace: bool,
}

#[derive(Args, Debug)]
struct ParetoArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Number of weight pairs, at least 2.
    #[arg(long, default_value_t = 20)]
    weights: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Jitter interior weights with the seed.
    #[arg(long)]
    jitter: bool,
    #[arg(long, value_enum, default_value = "anchors")]
    normalization: Normalization,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// t_pump, canal_cap, tef_fraction_high or min_area_scale.
    #[arg(value_parser = parse_parameter)]
    parameter: SweepParameter,
    /// Parameter values, comma separated.
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    values: Vec<f64>,
    #[arg(long, default_value = "1")]
    model: String,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Clamp {
    None,
    Monthly,
    PerCrop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Table,
    Plot,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Normalization {
    Anchors,
    Fixed,
}

fn parse_year(s: &str) -> Result<YearType, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_parameter(s: &str) -> Result<SweepParameter, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Validation(String),
    Solver(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Validation(_) => EXIT_VALIDATION,
            Failure::Solver(_) => EXIT_SOLVER,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Validation(m) | Failure::Solver(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Solver(_) | Error::Precondition(_) => Failure::Solver(e.to_string()),
            Error::Weight(_) | Error::UnknownYear(_) => Failure::Usage(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Solve(a) => cmd_solve(&a),
        Command::Pareto(a) => cmd_pareto(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Validate(a) => cmd_validate(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("eflow: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn load(args: &ScenarioArgs) -> Result<Arc<Scenario>, Failure> {
    let s = match &args.scenario {
        Some(path) => load_scenario_auto(path)?,
        None => builtin_rajshahi(),
    };
    let s = match args.clamp {
        Some(Clamp::None) => s.with_clamp(RequirementClamp::None),
        Some(Clamp::Monthly) => s.with_clamp(RequirementClamp::Monthly),
        Some(Clamp::PerCrop) => s.with_clamp(RequirementClamp::PerCrop),
        None => s,
    };
    Ok(Arc::new(s))
}

fn years(s: &Scenario, out: &OutputArgs) -> Result<Vec<YearType>, Failure> {
    let ys = if out.year.is_empty() { s.years.keys().copied().collect() } else { out.year.clone() };
    for y in &ys {
        if !s.years.contains_key(y) {
            return Err(Failure::Usage(format!("scenario {} has no {y} year", s.name)));
        }
    }
    Ok(ys)
}

fn parse_model(m: &str) -> Result<ProblemKind, Failure> {
    match m {
        "1" | "model1" => Ok(ProblemKind::Model1),
        "2" | "model2" => Ok(ProblemKind::Model2),
        "3" | "model3" => Err(Failure::Usage(
            "model 3 is the multiobjective approach; run `eflow pareto` to trace its front".into(),
        )),
        other => Err(Failure::Usage(format!("--model must be 1 or 2, got {other:?}"))),
    }
}

/// Creates the directory if needed and proves it is writable before any
/// work is done, so a bad path never leaves partial results.
fn prepare_out_dir(dir: &Path) -> CmdResult {
    let unwritable = |e: std::io::Error| Failure::Usage(format!("output directory {} is not writable: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(unwritable)?;
    let probe = dir.join(format!(".eflow-probe-{}", std::process::id()));
    std::fs::write(&probe, b"").map_err(unwritable)?;
    let _ = std::fs::remove_file(probe);
    Ok(())
}

/// Rendered outputs for one result: (file suffix, contents).
struct Rendered(Vec<(&'static str, String)>);

/// Writes every rendered artifact under `dir/stem`, or prints them when no
/// directory was given. Everything is rendered before the first write.
fn emit(out: &OutputArgs, stem: &str, rendered: Rendered) -> CmdResult {
    match &out.out {
        Some(dir) => {
            for (suffix, text) in &rendered.0 {
                let path = dir.join(format!("{stem}{suffix}"));
                write_atomic(&path, text.as_bytes()).map_err(|e| Failure::Usage(e.to_string()))?;
                eprintln!("wrote {}", path.display());
            }
        }
        None => {
            for (_, text) in &rendered.0 {
                let nl = if text.ends_with('\n') { "" } else { "\n" };
                to_stdout(&format!("{text}{nl}"));
            }
        }
    }
    Ok(())
}

/// Prints to stdout; a closed pipe (`eflow ... | head`) ends the output
/// quietly instead of panicking.
fn to_stdout(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    if let Err(e) = out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            eprintln!("eflow: stdout: {e}");
        }
    }
}

fn suffix(f: Format) -> &'static str {
    match f {
        Format::Json => ".json",
        Format::Csv => ".csv",
        Format::Table => ".txt",
        Format::Plot => ".plot.dat",
    }
}

fn cmd_solve(a: &SolveArgs) -> CmdResult {
    let kind = parse_model(&a.model)?;
    if a.mps && a.output.out.is_none() {
        return Err(Failure::Usage("--mps needs an output directory (--out or EFLOW_OUT_DIR)".into()));
    }
    let s = load(&a.scenario)?;
    let ys = years(&s, &a.output)?;
    if let Some(dir) = &a.output.out {
        prepare_out_dir(dir)?;
    }
    let opts = SolverOptions { trace: a.trace, ..SolverOptions::default() };
    let mut failed = Vec::new();
    for year in ys {
        let p = build_problem_shared(s.clone(), year, kind, None)?;
        let report = if a.smoothed {
            let cfg = MultistartConfig { n_starts: a.starts, seed: a.seed, ..MultistartConfig::default() };
            solve_smoothed_multistart(&p, &cfg)?
        } else {
            solve_problem(&p, &opts)?
        };
        for line in &report.trace {
            eprintln!("{line}");
        }
        eprintln!("{kind} {year}: {} in {:.1} ms", report.status, report.wall_time.as_secs_f64() * 1e3);
        let result = SolveOutput::new(&s, year, kind, &report)?;
        let mut rendered = Vec::new();
        for &f in &a.output.format {
            let text = match f {
                Format::Json => result.to_json()?,
                Format::Csv => result.to_csv()?,
                Format::Table => result.to_table(),
                Format::Plot => result.to_plot_data(),
            };
            rendered.push((suffix(f), text));
        }
        if a.mps {
            rendered.push((".mps", program_for(&p)?.to_mps()));
        }
        emit(&a.output, &format!("solve_{kind}_{year}"), Rendered(rendered))?;
        if !matches!(report.status, SolveStatus::Optimal | SolveStatus::LocalOnly) {
            failed.push(format!("{year}: {}{}", report.status, report.message.map(|m| format!(" ({m})")).unwrap_or_default()));
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Solver(format!("{kind} did not reach a certified optimum: {}", failed.join(", "))))
    }
}

fn cmd_pareto(a: &ParetoArgs) -> CmdResult {
    if a.weights < 2 {
        return Err(Failure::Usage(format!("--weights must be at least 2, got {}", a.weights)));
    }
    let s = load(&a.scenario)?;
    let ys = years(&s, &a.output)?;
    if let Some(dir) = &a.output.out {
        prepare_out_dir(dir)?;
    }
    let cfg = FrontConfig {
        n_weights: a.weights,
        seed: a.seed,
        jitter: a.jitter,
        normalization: match a.normalization {
            Normalization::Anchors => NormalizationMode::Anchors,
            Normalization::Fixed => NormalizationMode::Fixed,
        },
        solver: SolverOptions::default(),
    };
    for year in ys {
        let front = run_front(&s, year, &cfg)?;
        eprintln!("pareto {year}: {} points, {} weights skipped", front.points.len(), front.diagnostics.len());
        let mut rendered = Vec::new();
        for &f in &a.output.format {
            let text = match f {
                Format::Json => front.to_json()?,
                Format::Csv => front.to_csv()?,
                Format::Table => front_table(&front),
                Format::Plot => front_plot_data(&front),
            };
            rendered.push((suffix(f), text));
        }
        emit(&a.output, &format!("front_{year}"), Rendered(rendered))?;
    }
    Ok(())
}

fn sweep_plot_data(rows: &[SweepRow]) -> String {
    let mut out = String::from("# value nb_tk efd_gl total_pumping_gl\n");
    let v = |x: Option<f64>| x.map(|x| x.to_string()).unwrap_or_else(|| "nan".into());
    for r in rows {
        out.push_str(&format!("{} {} {} {}\n", r.value, v(r.nb), v(r.efd), v(r.total_pumping)));
    }
    out
}

fn cmd_sweep(a: &SweepArgs) -> CmdResult {
    let kind = parse_model(&a.model)?;
    let s = load(&a.scenario)?;
    let ys = years(&s, &a.output)?;
    if let Some(dir) = &a.output.out {
        prepare_out_dir(dir)?;
    }
    for year in ys {
        let rows = run_sweep(&s, year, kind, a.parameter, &a.values, &SolverOptions::default())?;
        let mut rendered = Vec::new();
        for &f in &a.output.format {
            let text = match f {
                Format::Json => serde_json::to_string_pretty(&rows).map_err(|e| Failure::Usage(e.to_string()))?,
                Format::Csv => sweep_to_csv(&rows)?,
                Format::Table => format!("sweep {} on {kind}, {year} year\n{}", a.parameter, sweep_table(&rows)),
                Format::Plot => sweep_plot_data(&rows),
            };
            rendered.push((suffix(f), text));
        }
        emit(&a.output, &format!("sweep_{}_{kind}_{year}", a.parameter), Rendered(rendered))?;
        // An infeasible value is a finding about the scenario, not a failure.
        for r in rows.iter().filter(|r| r.status == SolveStatus::Infeasible) {
            eprintln!("{year}: {}={} is infeasible", r.parameter, r.value);
        }
        let bad: Vec<String> = rows
            .iter()
            .filter(|r| !matches!(r.status, SolveStatus::Optimal | SolveStatus::Infeasible))
            .map(|r| format!("{}={}: {}", r.parameter, r.value, r.status))
            .collect();
        if !bad.is_empty() {
            return Err(Failure::Solver(format!("sweep rows without an optimum: {}", bad.join(", "))));
        }
    }
    Ok(())
}

fn cmd_validate(a: &ScenarioArgs) -> CmdResult {
    let s = match &a.scenario {
        Some(path) if path.is_dir() => load_bundle(path)?,
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                if e.kind() == std::io::ErrorKind::NotFound {
                    Failure::Validation(format!("{}: not found", path.display()))
                } else {
                    Failure::Validation(format!("{}: {e}", path.display()))
                }
            })?;
            parse_scenario_toml(&text, &path.display().to_string())?
        }
        None => builtin_rajshahi(),
    };
    let report = validate(&s);
    to_stdout(&report.to_string());
    if report.ok {
        Ok(())
    } else {
        Err(Failure::Validation(format!("{} failed validation", s.name)))
    }
}
