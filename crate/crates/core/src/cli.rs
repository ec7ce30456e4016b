//! Scenario-driven command-line front end.
//!
//! Every run writes `summary.json` and one or more CSV files into the output
//! directory. Exit codes: 0 all suites pass, 1 a suite fails, 2 the command
//! line or scenario is invalid, 3 a runtime error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::attractor::{
    check_invariance, find_absorbing_time, ideal_basis, ideal_of_attractor_check,
    smallest_attractor, write_decay_csv, AttractorResult, SetFamily,
};
use crate::characterize::{
    check_derivation, check_kato, classify_operator, default_hsign_eps, kato_sides,
    OperatorUnderTest, Verdict,
};
use crate::error::{LabError, Result};
use crate::koopman::{
    check_resolvent_identity, generator_on_grid, kernel_fixed_check, resolvent_laplace,
};
use crate::report::{fmt_f64, to_json_string, write_csv, Check, DetailRow, ResidualReport};
use crate::scenario::{OperatorSpec, Scenario};
use crate::semiflow::{check_semiflow_laws, continuity_modulus, Semiflow};
use crate::state::StatePoint;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_SUITE_FAILURE: i32 = 1;
pub const EXIT_PARSE_ERROR: i32 = 2;
pub const EXIT_RUNTIME_ERROR: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "koopman-lab", version, about = "Koopman semigroup laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Global multiplier applied to every tolerance.
    #[arg(long, default_value_t = 1.0)]
    pub tol_scale: f64,
    /// Suppress the per-check listing on stdout.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Trajectories of the grid points.
    Simulate(RunArgs),
    /// Identity and semigroup laws of the flow.
    CheckLaws(RunArgs),
    /// Gridwise generator table.
    Generator(RunArgs),
    /// Resolvent table and resolvent identity.
    Resolvent(RunArgs),
    /// Characterization suites and classification verdict.
    Characterize(RunArgs),
    /// Absorbing times, attractor cloud and ideal-decay curves.
    Attractor(RunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::CheckLaws(_) => "check-laws",
            Command::Generator(_) => "generator",
            Command::Resolvent(_) => "resolvent",
            Command::Characterize(_) => "characterize",
            Command::Attractor(_) => "attractor",
        }
    }

    pub fn args(&self) -> &RunArgs {
        match self {
            Command::Simulate(a)
            | Command::CheckLaws(a)
            | Command::Generator(a)
            | Command::Resolvent(a)
            | Command::Characterize(a)
            | Command::Attractor(a) => a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteSummary {
    pub suite: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    pub assumptions: Vec<String>,
}

impl From<&ResidualReport> for SuiteSummary {
    fn from(r: &ResidualReport) -> Self {
        Self {
            suite: r.suite.clone(),
            passed: r.passed(),
            checks: r.checks.clone(),
            warnings: r.warnings.clone(),
            assumptions: r.assumptions.clone(),
        }
    }
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub subcommand: String,
    pub spec_version: u32,
    pub tol_scale: f64,
    pub passed: bool,
    pub suites: Vec<SuiteSummary>,
    pub results: Value,
}

/// Summary plus named artifacts, not yet written to disk.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub files: Vec<(String, Vec<u8>)>,
}

impl RunOutput {
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("summary.json"), to_json_string(&self.summary)?)?;
        for (name, bytes) in &self.files {
            std::fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }
}

struct Collected {
    reports: Vec<ResidualReport>,
    results: Value,
    files: Vec<(String, Vec<u8>)>,
    extra_pass: bool,
}

impl Collected {
    fn new(reports: Vec<ResidualReport>, results: Value) -> Self {
        Self {
            reports,
            results,
            files: Vec::new(),
            extra_pass: true,
        }
    }

    fn file(mut self, name: &str, bytes: Vec<u8>) -> Self {
        self.files.push((name.into(), bytes));
        self
    }
}

fn reports_csv(reports: &[ResidualReport]) -> Result<Vec<u8>> {
    let refs: Vec<&ResidualReport> = reports.iter().collect();
    let mut buf = Vec::new();
    write_csv(&refs, &mut buf)?;
    Ok(buf)
}

fn point_str(p: &StatePoint) -> String {
    p.coords()
        .iter()
        .map(|v| fmt_f64(*v))
        .collect::<Vec<_>>()
        .join(" ")
}

fn table<I>(header: &[&str], rows: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner()
        .map_err(|e| LabError::Io(std::io::Error::other(e.to_string())))
}

fn missing(sub: &str) -> LabError {
    LabError::Scenario(format!("scenario has no [{sub}] table"))
}

/// Runs one subcommand on a validated scenario. Tolerances are expected to be scaled already.
pub fn run_scenario(command: &str, scenario: &Scenario, tol_scale: f64) -> Result<RunOutput> {
    let flow = scenario.flow.build()?;
    let collected = match command {
        "simulate" => simulate(scenario, &flow)?,
        "check-laws" => laws(scenario, &flow)?,
        "generator" => generator(scenario, &flow)?,
        "resolvent" => resolvent(scenario, &flow)?,
        "characterize" => characterize(scenario, &flow)?,
        "attractor" => attractor(scenario, &flow)?,
        other => {
            return Err(LabError::InvalidArgument(format!(
                "unknown subcommand {other}"
            )))
        }
    };
    let passed = collected.extra_pass && collected.reports.iter().all(ResidualReport::passed);
    let mut files = vec![(format!("{command}.csv"), reports_csv(&collected.reports)?)];
    files.extend(collected.files);
    Ok(RunOutput {
        summary: RunSummary {
            scenario: scenario.name.clone(),
            subcommand: command.into(),
            spec_version: scenario.spec_version,
            tol_scale,
            passed,
            suites: collected.reports.iter().map(SuiteSummary::from).collect(),
            results: collected.results,
        },
        files,
    })
}

fn simulate(s: &Scenario, flow: &Semiflow) -> Result<Collected> {
    let suite = s.simulate.as_ref().ok_or_else(|| missing("simulate"))?;
    let grid = s.grid(&suite.grid)?;
    let times = suite.times.times();
    let dim = grid.dim();
    let mut header = vec!["index".to_string(), "t".to_string()];
    header.extend((0..dim).map(|i| format!("x{i}")));
    let mut rows = Vec::new();
    for (i, x) in grid.points().iter().enumerate() {
        for &t in &times {
            let y = flow.evaluate(t, x)?;
            let mut row = vec![i.to_string(), fmt_f64(t)];
            row.extend(y.coords().iter().map(|v| fmt_f64(*v)));
            rows.push(row);
        }
    }
    let n_rows = rows.len();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let bytes = table(&header_refs, rows)?;
    Ok(Collected::new(
        Vec::new(),
        json!({ "flow": flow.label(), "points": grid.len(), "times": times, "rows": n_rows }),
    )
    .file("trajectory.csv", bytes))
}

fn laws(s: &Scenario, flow: &Semiflow) -> Result<Collected> {
    let suite = s.check_laws.as_ref().ok_or_else(|| missing("check-laws"))?;
    let grid = s.grid(&suite.grid)?;
    let times = suite.times.times();
    let report = check_semiflow_laws(flow, &grid, &times, suite.tol)?;
    let continuity = match suite.continuity_probe {
        Some(p) => Some(continuity_modulus(flow, &grid, &times, p)?),
        None => None,
    };
    let results = json!({
        "flow": flow.label(),
        "accuracy": flow.accuracy(),
        "identity": report.residual("identity"),
        "semigroup": report.residual("semigroup"),
        "continuity": continuity,
    });
    Ok(Collected::new(vec![report], results))
}

fn generator(s: &Scenario, flow: &Semiflow) -> Result<Collected> {
    let suite = s.generator.as_ref().ok_or_else(|| missing("generator"))?;
    let grid = s.grid(&suite.grid)?;
    let mut report = ResidualReport::new("generator");
    let mut rows = Vec::new();
    let mut worst = serde_json::Map::new();
    for name in &suite.observables {
        let f = s.observable(name)?;
        let gen = generator_on_grid(flow, &f, &grid, suite.h)?;
        let check = format!("error-estimate:{name}");
        for ((x, v), e) in gen.points.iter().zip(&gen.values).zip(&gen.error_estimates) {
            report.detail(DetailRow {
                check: check.clone(),
                witness_f: name.clone(),
                witness_g: String::new(),
                point: x.coords().to_vec(),
                value: v.re,
                residual: *e,
            });
            rows.push(vec![
                name.clone(),
                point_str(x),
                fmt_f64(v.re),
                fmt_f64(v.im),
                fmt_f64(*e),
            ]);
        }
        report.check(check, gen.worst_error, suite.tol);
        worst.insert(name.clone(), json!(gen.worst_error));
    }
    report.assume("observables are assumed smooth along orbits");
    let bytes = table(&["observable", "point", "re", "im", "error_estimate"], rows)?;
    Ok(
        Collected::new(vec![report], json!({ "h": suite.h, "worst_error": worst }))
            .file("generator_table.csv", bytes),
    )
}

fn resolvent(s: &Scenario, flow: &Semiflow) -> Result<Collected> {
    let suite = s.resolvent.as_ref().ok_or_else(|| missing("resolvent"))?;
    let grid = s.grid(&suite.grid)?;
    let f = s.observable(&suite.observable)?;
    let res = resolvent_laplace(flow, &f, suite.nu, suite.t_max, suite.n_quad)?;
    let mut rows = Vec::new();
    let mut quad_worst: f64 = 0.0;
    for x in grid.points() {
        let v = res.observable.eval(x)?;
        let q = res.quad_error_at(x)?;
        quad_worst = quad_worst.max(q);
        rows.push(vec![point_str(x), fmt_f64(v.re), fmt_f64(v.im), fmt_f64(q)]);
    }
    let report = check_resolvent_identity(
        flow,
        &f,
        suite.nu,
        suite.t_max,
        suite.n_quad,
        &grid,
        suite.h,
        suite.tol,
    )?;
    let results = json!({
        "observable": suite.observable,
        "nu": suite.nu,
        "t_max": suite.t_max,
        "n_quad": suite.n_quad,
        "truncation_error": res.truncation_error,
        "quad_error": quad_worst,
        "identity_residual": report.residual("identity"),
    });
    let bytes = table(&["point", "re", "im", "quad_error"], rows)?;
    Ok(Collected::new(vec![report], results).file("resolvent_table.csv", bytes))
}

fn characterize(s: &Scenario, flow: &Semiflow) -> Result<Collected> {
    let suite = s
        .characterize
        .as_ref()
        .ok_or_else(|| missing("characterize"))?;
    let op = match suite.operator {
        OperatorSpec::Koopman => OperatorUnderTest::from_flow(flow),
        OperatorSpec::Identity => OperatorUnderTest::identity(),
        OperatorSpec::Averaging => OperatorUnderTest::averaging(flow),
        OperatorSpec::Scaled { c } => OperatorUnderTest::scaled(flow, c),
        OperatorSpec::Conjugating => OperatorUnderTest::conjugating(flow),
    };
    let dict = s.dictionary(&suite.dictionary, suite.closure_depth)?;
    let grid = s.grid(&suite.grid)?;
    let candidates = s.grid(&suite.candidates)?;
    let class = classify_operator(&op, suite.t, &dict, &grid, &candidates, suite.tol)?;
    let mut reports = class.reports.clone();
    let mut results = serde_json::Map::new();
    results.insert("operator".into(), json!(op.label()));
    results.insert("verdict".into(), json!(class.verdict.to_string()));

    let mut files = Vec::new();
    if let Some(map) = &class.point_map {
        let rows = map.iter().map(|m| {
            vec![
                point_str(&m.point),
                point_str(&m.image),
                fmt_f64(m.feature_residual),
            ]
        });
        files.push((
            "point_map.csv".to_string(),
            table(&["point", "image", "feature_residual"], rows)?,
        ));
        results.insert("point_map".into(), json!(map));
    }
    if let Some(d) = &suite.derivation {
        let f = s.observable(&d.f)?;
        let g = s.observable(&d.g)?;
        reports.push(check_derivation(
            flow,
            &f,
            &g,
            &s.grid(&d.grid)?,
            d.h,
            d.tol,
        )?);
    }
    let mut kato = Vec::new();
    for k in &suite.kato {
        let f = s.observable(&k.f)?;
        let mu = s.measure(&k.measure)?;
        let eps = k.eps.unwrap_or_else(|| default_hsign_eps(&f));
        let sides = kato_sides(flow, &f, &mu, k.h, eps)?;
        let mut r = check_kato(flow, &f, &mu, k.h, eps, k.tol)?;
        r.suite = format!("kato[{}|{}]", k.f, k.measure);
        kato.push(json!({ "f": k.f, "measure": k.measure, "sides": sides }));
        reports.push(r);
    }
    if !kato.is_empty() {
        results.insert("kato".into(), Value::Array(kato));
    }
    if let Some(k) = &suite.kernel {
        let grid = s.grid(&k.grid)?;
        let times = k.times.times();
        let mut verdicts = serde_json::Map::new();
        for name in &k.observables {
            let f = s.observable(name)?;
            let kr = kernel_fixed_check(flow, &f, &times, &grid, k.h, k.tol)?;
            verdicts.insert(name.clone(), json!(kr.verdict));
            let mut r = kr.report;
            r.suite = format!("kernel[{name}]");
            reports.push(r);
        }
        results.insert("kernel".into(), Value::Object(verdicts));
    }
    let mut c = Collected::new(reports, Value::Object(results));
    c.extra_pass = class.verdict == Verdict::KoopmanLike;
    c.files = files;
    Ok(c)
}

fn attractor(s: &Scenario, flow: &Semiflow) -> Result<Collected> {
    let suite = s.attractor.as_ref().ok_or_else(|| missing("attractor"))?;
    let a = s.grid(&suite.absorbing)?;
    let members = suite
        .family
        .iter()
        .map(|b| s.grid(b))
        .collect::<Result<Vec<_>>>()?;
    let family = SetFamily::new(suite.family.join(","), members)?;
    let mut absorb = ResidualReport::new("absorbing");
    let absorbed = match find_absorbing_time(
        flow,
        &family,
        &a,
        &suite.absorb_times.times(),
        suite.absorb_tol,
    ) {
        Ok(times) => {
            absorb.push_check("absorbed", 0.0, suite.absorb_tol, true);
            times
        }
        Err(LabError::NotAbsorbed(msg)) => {
            absorb.push_check("absorbed", f64::INFINITY, suite.absorb_tol, false);
            absorb.warn(msg);
            Vec::new()
        }
        Err(e) => return Err(e),
    };
    let result: AttractorResult =
        match smallest_attractor(flow, &a, suite.tau, suite.max_iter, suite.hausdorff_tol) {
            Ok(r) => r.with_absorbed_times(absorbed.clone()),
            Err(LabError::NonConvergence {
                iterations,
                residual,
                tol,
            }) => {
                absorb.push_check("attractor-converged", residual, tol, false);
                absorb.warn(format!("no convergence after {iterations} iterations"));
                let mut c = Collected::new(vec![absorb], json!({ "absorbed_times": absorbed }));
                c.extra_pass = false;
                return Ok(c);
            }
            Err(e) => return Err(e),
        };
    absorb.check(
        "attractor-converged",
        *result.hausdorff_history.last().unwrap_or(&0.0),
        suite.hausdorff_tol,
    );

    let invariance = check_invariance(flow, &result.m, &[suite.tau], suite.hausdorff_tol)?;
    let basis = ideal_basis(&result.m, flow.chart(), suite.basis_count, suite.sharpness)?;
    let probes = s.dictionary(&suite.probes, 0)?;
    let (mut ideal, curves) = ideal_of_attractor_check(
        flow,
        &result,
        &family,
        &basis,
        &probes,
        &suite.decay_times.times(),
        suite.decay_tol,
    )?;
    if basis.degenerate {
        ideal.warn("ideal basis is degenerate: M covers the sampled chart");
    }
    let mut decay = Vec::new();
    write_decay_csv(&curves, &mut decay)?;
    let cloud = result
        .m
        .points()
        .iter()
        .map(|p| p.coords().to_vec())
        .collect::<Vec<_>>();
    let results = json!({
        "absorbed_times": absorbed,
        "iterations": result.iterations,
        "diameter": result.m.diameter(),
        "cloud": cloud,
    });
    Ok(Collected::new(vec![absorb, invariance, ideal], results)
        .file("attractor.json", to_json_string(&result)?.into_bytes())
        .file("decay.csv", decay))
}

fn print_summary(summary: &RunSummary) {
    for suite in &summary.suites {
        for c in &suite.checks {
            println!(
                "{} {}/{} residual={} tol={}",
                if c.pass { "PASS" } else { "FAIL" },
                suite.suite,
                c.name,
                fmt_f64(c.residual),
                fmt_f64(c.tol)
            );
        }
        for w in &suite.warnings {
            println!("WARN {}: {w}", suite.suite);
        }
    }
    if let Some(v) = summary.results.get("verdict") {
        println!("verdict: {}", v.as_str().unwrap_or_default());
    }
    println!(
        "{}: {}",
        summary.subcommand,
        if summary.passed { "pass" } else { "fail" }
    );
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(command: &Command) -> i32 {
    let args = command.args();
    if !(args.tol_scale > 0.0 && args.tol_scale.is_finite()) {
        eprintln!("error: --tol-scale must be a positive number");
        return EXIT_PARSE_ERROR;
    }
    let mut scenario = match Scenario::load(&args.scenario) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_PARSE_ERROR;
        }
    };
    scenario.scale_tolerances(args.tol_scale);
    let output = match run_scenario(command.name(), &scenario, args.tol_scale)
        .and_then(|o| o.write_to(&args.out).map(|()| o))
    {
        Ok(o) => o,
        Err(LabError::Scenario(msg)) => {
            eprintln!("error: {msg}");
            return EXIT_PARSE_ERROR;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_RUNTIME_ERROR;
        }
    };
    if !args.quiet {
        print_summary(&output.summary);
    }
    if output.summary.passed {
        EXIT_PASS
    } else {
        EXIT_SUITE_FAILURE
    }
}

/// Entry point of the binary: parses `std::env::args` and runs.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(argv) {
        Ok(cli) => run(&cli.command),
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_PARSE_ERROR
            } else {
                EXIT_PASS
            };
            let _ = e.print();
            code
        }
    }
}
