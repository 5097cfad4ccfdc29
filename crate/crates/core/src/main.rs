use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use bsccs::bench::run_bench;
use bsccs::bootstrap::{format_report, report_ranked_intervals};
use bsccs::cv::log_uniform_grid;
use bsccs::eras::{ingest, parse_raw_files};
use bsccs::longformat::{self, DrugDictionary};
use bsccs::manifest::RunManifest;
use bsccs::sim::write_simulation;
use bsccs::{
    fit, grid_search_cv, run_bootstrap, scenarios, simulate, BootstrapConfig, ConvergenceMode,
    CvConfig, Dataset, Error, LaplaceParam, Precision, PriorKind, PriorSpec, SolverConfig,
};

const EXIT_INPUT: u8 = 1;
const EXIT_INTERNAL: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "bsccs",
    version,
    about = "MAP estimation for the Bayesian self-controlled case series model",
    args_override_self = true
)]
struct Cli {
    /// Worker threads (defaults to the available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Directory receiving output tables and the run manifest.
    #[arg(long, global = true, default_value = ".")]
    output_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the MAP estimate at one prior variance.
    Fit(FitArgs),
    /// Select the prior variance by k-fold cross-validation.
    Cv(CvArgs),
    /// Percentile intervals and nonzero proportions from a subject bootstrap.
    Bootstrap(BootstrapArgs),
    /// Draw a synthetic dataset from a shipped scenario.
    Simulate(SimulateArgs),
    /// Build eras from exposure, event and observation files.
    Ingest(IngestArgs),
    /// Time the dense, sparse and parallel update paths on one fit.
    Bench(BenchArgs),
    /// Repeat the run recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone)]
struct InputArgs {
    /// Long-format era file.
    #[arg(long)]
    input: PathBuf,
    /// Drug dictionary fixing the label set and column order.
    #[arg(long)]
    dictionary: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum LaplaceParamArg {
    Variance,
    Scale,
}

#[derive(Args, Debug, Clone)]
struct SolverArgs {
    #[arg(long, default_value = "normal", value_parser = parse_from_str::<PriorKind>)]
    prior: PriorKind,
    /// Prior variance (or the Laplace scale with `--laplace-param scale`).
    #[arg(long, default_value_t = 1.0)]
    variance: f64,
    #[arg(long, value_enum, default_value = "variance")]
    laplace_param: LaplaceParamArg,
    #[arg(long, default_value_t = 0.0005)]
    epsilon: f64,
    #[arg(long, default_value_t = 1000)]
    max_cycles: usize,
    #[arg(long, default_value = "raw", value_parser = parse_from_str::<ConvergenceMode>)]
    convergence: ConvergenceMode,
    #[arg(long, default_value = "double", value_parser = parse_from_str::<Precision>)]
    precision: Precision,
    /// Subject ranges for the parallel reduction; 1 is serial.
    #[arg(long, default_value_t = 1)]
    partitions: usize,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct CvArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Comma-separated ascending variances; defaults to 13 log-uniform points on [0.001, 10].
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Fit every grid point from zero instead of the previous solution.
    #[arg(long)]
    cold_start: bool,
}

#[derive(Args, Debug)]
struct BootstrapArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value_t = 200)]
    replicates: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Minimum nonzero proportion for a drug to be reported.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Scenario {
    /// One strong effect among 20 drugs, 600 subjects.
    Effects,
    /// 500 sparse drugs, 20,000 subjects.
    Bench,
}

impl Scenario {
    fn config(self) -> bsccs::SimConfig {
        match self {
            Scenario::Effects => scenarios::effects(),
            Scenario::Bench => scenarios::bench(),
        }
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "effects")]
    scenario: Scenario,
    /// Overrides the scenario's subject count.
    #[arg(long)]
    subjects: Option<usize>,
    /// Overrides the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// `subject_id  drug_id  start_day  end_day`, end exclusive.
    #[arg(long)]
    exposures: PathBuf,
    /// `subject_id  day`.
    #[arg(long)]
    events: PathBuf,
    /// `subject_id  start_day  end_day`, end exclusive.
    #[arg(long)]
    observation: PathBuf,
    #[arg(long)]
    dictionary: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Long-format era file; the shipped bench scenario when absent.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    dictionary: Option<PathBuf>,
    /// Rounds per sparse path; the fastest is reported.
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    /// Manifest written by an earlier run.
    #[arg(long)]
    manifest: PathBuf,
}

fn parse_from_str<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Failure of a command, carrying its exit status.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Internal(_) => EXIT_INTERNAL,
            Error::Overflow { .. } | Error::UndefinedStep(_) | Error::NoConvergedReplicates(_) => {
                EXIT_NOT_CONVERGED
            }
            _ => EXIT_INPUT,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type Outcome = Result<u8, Failure>;

impl SolverArgs {
    fn prior(&self) -> Result<PriorSpec, Failure> {
        let param = match self.laplace_param {
            LaplaceParamArg::Variance => LaplaceParam::Variance,
            LaplaceParamArg::Scale => LaplaceParam::Scale,
        };
        Ok(PriorSpec::new(self.prior, self.variance)?.with_laplace_param(param))
    }

    fn config(&self) -> SolverConfig {
        SolverConfig {
            epsilon: self.epsilon,
            max_cycles: self.max_cycles,
            convergence: self.convergence,
            precision: self.precision,
            partitions: self.partitions.max(1),
            ..Default::default()
        }
    }

    fn record(&self, m: &mut RunManifest) {
        m.set("prior", self.prior);
        m.set("variance", self.variance);
        m.set("laplace_param", format!("{:?}", self.laplace_param).to_lowercase());
        m.set("epsilon", self.epsilon);
        m.set("max_cycles", self.max_cycles);
        m.set("convergence", format!("{:?}", self.convergence));
        m.set("precision", self.precision);
        m.set("partitions", self.partitions);
    }
}

fn load(input: &Path, dictionary: Option<&Path>, m: &mut RunManifest) -> Result<Dataset, Failure> {
    let dict = dictionary.map(DrugDictionary::read).transpose()?;
    let ds = longformat::read_dataset(input, dict)?;
    m.digest_input("eras", input)?;
    if let Some(d) = dictionary {
        m.digest_input("dictionary", d)?;
    }
    m.set("subjects", ds.num_subjects());
    m.set("drugs", ds.num_drugs());
    m.set("rows", ds.num_rows());
    Ok(ds)
}

/// Creates `dir` and writes each `(file name, contents)` pair into it.
fn emit(dir: &Path, files: &[(&str, String)]) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    for (name, text) in files {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::Io { path, source: e })?;
    }
    Ok(())
}

fn finish(dir: &Path, m: &mut RunManifest, started: Instant) -> Result<(), Failure> {
    m.set("seconds.total", format!("{:.3}", started.elapsed().as_secs_f64()));
    m.write(dir)?;
    Ok(())
}

fn coefficients_tsv(ds: &Dataset, beta: &[f64]) -> String {
    let mut out = String::from("drug_id\tbeta_map\n");
    for (label, b) in ds.drug_ids().iter().zip(beta) {
        out.push_str(&format!("{label}\t{b}\n"));
    }
    out
}

fn cmd_fit(a: &FitArgs, dir: &Path, m: &mut RunManifest) -> Outcome {
    let started = Instant::now();
    a.solver.record(m);
    let ds = load(&a.input.input, a.input.dictionary.as_deref(), m)?;
    let r = fit(&ds, &a.solver.prior()?, &a.solver.config(), None)?;
    emit(dir, &[("coefficients.tsv", coefficients_tsv(&ds, &r.beta))])?;
    println!("log_posterior\t{}", r.log_posterior);
    println!("log_likelihood\t{}", r.log_likelihood);
    println!("cycles\t{}", r.cycles_run);
    println!("converged\t{}", r.converged);
    m.set("result.log_posterior", r.log_posterior);
    m.set("result.cycles", r.cycles_run);
    m.set("result.converged", r.converged);
    m.set("result.final_criterion", r.final_criterion);
    finish(dir, m, started)?;
    Ok(if r.converged { 0 } else { EXIT_NOT_CONVERGED })
}

fn cmd_cv(a: &CvArgs, dir: &Path, m: &mut RunManifest) -> Outcome {
    let started = Instant::now();
    a.solver.record(m);
    let ds = load(&a.input.input, a.input.dictionary.as_deref(), m)?;
    let prior = a.solver.prior()?;
    let cfg = CvConfig {
        k: a.k,
        grid: a.grid.clone().unwrap_or_else(|| log_uniform_grid(0.001, 10.0, 13)),
        seed: a.seed,
        solver: a.solver.config(),
        prior_kind: prior.kind,
        laplace_param: prior.laplace_param,
        warm_start: !a.cold_start,
    };
    m.set("k", cfg.k);
    m.set("seed", cfg.seed);
    m.set("warm_start", cfg.warm_start);
    m.set("grid", cfg.grid.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
    let r = grid_search_cv(&ds, &cfg)?;
    let mut tsv = String::from("variance\tmean_predictive_ll");
    for f in 1..=cfg.k {
        tsv.push_str(&format!("\tfold_{f}"));
    }
    tsv.push('\n');
    let cell = |v: Option<f64>| v.map_or_else(|| "NA".to_owned(), |x| x.to_string());
    for p in &r.points {
        tsv.push_str(&format!("{}\t{}", p.variance, cell(p.mean_predictive)));
        for v in &p.fold_values {
            tsv.push_str(&format!("\t{}", cell(*v)));
        }
        tsv.push('\n');
    }
    emit(dir, &[("cv.tsv", tsv)])?;
    let converged = r.points.iter().all(|p| p.converged.iter().all(|&c| c));
    println!("selected_variance\t{}", r.selected_variance);
    println!("total_cycles\t{}", r.total_cycles);
    m.set("result.selected_variance", r.selected_variance);
    m.set("result.total_cycles", r.total_cycles);
    m.set("result.all_converged", converged);
    finish(dir, m, started)?;
    Ok(if converged { 0 } else { EXIT_NOT_CONVERGED })
}

fn cmd_bootstrap(a: &BootstrapArgs, dir: &Path, m: &mut RunManifest) -> Outcome {
    let started = Instant::now();
    a.solver.record(m);
    let ds = load(&a.input.input, a.input.dictionary.as_deref(), m)?;
    let mut cfg = BootstrapConfig::new(a.solver.prior()?);
    cfg.replicates = a.replicates;
    cfg.level = a.level;
    cfg.seed = a.seed;
    cfg.solver = a.solver.config();
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(Error::Invalid(format!("threshold {} is outside [0, 1]", a.threshold)).into());
    }
    m.set("replicates", cfg.replicates);
    m.set("level", cfg.level);
    m.set("threshold", a.threshold);
    m.set("seed", cfg.seed);
    let r = run_bootstrap(&ds, &cfg)?;
    let rows = report_ranked_intervals(&r, a.threshold);
    emit(dir, &[("bootstrap.tsv", format_report(&rows))])?;
    println!("reported_drugs\t{}", rows.len());
    println!("non_converged_replicates\t{}", r.non_converged);
    m.set("result.reported_drugs", rows.len());
    m.set("result.non_converged_replicates", r.non_converged);
    finish(dir, m, started)?;
    Ok(if r.non_converged == 0 { 0 } else { EXIT_NOT_CONVERGED })
}

fn cmd_simulate(a: &SimulateArgs, dir: &Path, m: &mut RunManifest) -> Outcome {
    let started = Instant::now();
    let mut cfg = a.scenario.config();
    if let Some(n) = a.subjects {
        cfg.subjects = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    m.set("scenario", format!("{:?}", a.scenario).to_lowercase());
    m.set("subjects", cfg.subjects);
    m.set("seed", cfg.seed);
    let (ds, truth) = simulate(&cfg)?;
    emit(dir, &[])?;
    write_simulation(&ds, &truth, &dir.join("eras.tsv"), &dir.join("truth.tsv"))?;
    println!("kept\t{}", truth.kept);
    println!("rejected\t{}", truth.rejected);
    m.set("result.kept", truth.kept);
    m.set("result.rejected", truth.rejected);
    finish(dir, m, started)?;
    Ok(0)
}

fn cmd_ingest(a: &IngestArgs, dir: &Path, m: &mut RunManifest) -> Outcome {
    let started = Instant::now();
    let mut dict = match &a.dictionary {
        Some(p) => DrugDictionary::read(p)?,
        None => DrugDictionary::growing(),
    };
    let raw = parse_raw_files(&a.exposures, &a.events, &a.observation, &mut dict)?;
    let (records, summary) = ingest(&raw)?;
    m.digest_input("exposures", &a.exposures)?;
    m.digest_input("events", &a.events)?;
    m.digest_input("observation", &a.observation)?;
    if let Some(d) = &a.dictionary {
        m.digest_input("dictionary", d)?;
    }
    emit(dir, &[("eras.tsv", longformat::format_records(&records, &raw.drugs))])?;
    println!("subjects\t{}", summary.subjects);
    println!("eras\t{}", summary.eras);
    println!("dropped_intervals\t{}", summary.dropped_intervals);
    m.set("result.subjects", summary.subjects);
    m.set("result.eras", summary.eras);
    m.set("result.dropped_intervals", summary.dropped_intervals);
    finish(dir, m, started)?;
    Ok(0)
}

fn cmd_bench(a: &BenchArgs, dir: &Path, m: &mut RunManifest) -> Outcome {
    let started = Instant::now();
    a.solver.record(m);
    let ds = match &a.input {
        Some(p) => load(p, a.dictionary.as_deref(), m)?,
        None => {
            m.set("scenario", "bench");
            simulate(&scenarios::bench())?.0
        }
    };
    let mut base = a.solver.config();
    base.partitions = 1;
    m.set("repeats", a.repeats);
    let report = run_bench(&ds, &a.solver.prior()?, &base, a.solver.partitions.max(1), a.repeats)?;
    emit(dir, &[("bench.tsv", report.to_tsv())])?;
    print!("{}", report.to_tsv());
    m.set("result.max_disagreement", report.max_disagreement);
    for r in &report.rows {
        m.set(&format!("seconds.{}", r.name), format!("{:.6}", r.seconds));
    }
    finish(dir, m, started)?;
    if !report.agrees(1e-8) {
        return Err(Failure {
            code: EXIT_INTERNAL,
            message: format!(
                "update paths disagree: max coefficient difference {:e} exceeds 1e-8",
                report.max_disagreement
            ),
        });
    }
    let converged = report.rows.iter().all(|r| r.converged);
    Ok(if converged { 0 } else { EXIT_NOT_CONVERGED })
}

fn run(cli: Cli, argv: Vec<String>) -> Outcome {
    let dir = cli.output_dir.as_path();
    let name = match &cli.command {
        Command::Fit(_) => "fit",
        Command::Cv(_) => "cv",
        Command::Bootstrap(_) => "bootstrap",
        Command::Simulate(_) => "simulate",
        Command::Ingest(_) => "ingest",
        Command::Bench(_) => "bench",
        Command::Replay(_) => "replay",
    };
    let mut m = RunManifest::new(name, &argv);
    m.set("threads", rayon::current_num_threads());
    match &cli.command {
        Command::Fit(a) => cmd_fit(a, dir, &mut m),
        Command::Cv(a) => cmd_cv(a, dir, &mut m),
        Command::Bootstrap(a) => cmd_bootstrap(a, dir, &mut m),
        Command::Simulate(a) => cmd_simulate(a, dir, &mut m),
        Command::Ingest(a) => cmd_ingest(a, dir, &mut m),
        Command::Bench(a) => cmd_bench(a, dir, &mut m),
        Command::Replay(a) => replay(&a.manifest, dir),
    }
}

/// Reruns the recorded arguments, redirecting output to `output_dir`. The
/// recorded thread count is not reapplied; outputs do not depend on it.
fn replay(manifest: &Path, output_dir: &Path) -> Outcome {
    let recorded = RunManifest::read(manifest)?;
    let mut argv = recorded.argv();
    if argv.is_empty() || recorded.get("command") == Some("replay") {
        return Err(Error::Invalid(format!("{} records no replayable command", manifest.display())).into());
    }
    for (key, digest) in recorded.input_digests() {
        let path = recorded
            .get(&format!("input.{key}.path"))
            .ok_or_else(|| Error::Invalid(format!("manifest lacks the path of input `{key}`")))?;
        if bsccs::manifest::sha256_file(Path::new(path))? != digest {
            return Err(Error::Invalid(format!("{path} changed since the recorded run")).into());
        }
    }
    argv.push("--output-dir".into());
    argv.push(output_dir.display().to_string());
    let cli = Cli::try_parse_from(std::iter::once("bsccs".to_owned()).chain(argv.iter().cloned()))
        .map_err(|e| Error::Invalid(format!("recorded arguments no longer parse: {e}")))?;
    run(cli, argv)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(EXIT_INPUT);
        }
    }
    match run(cli, argv) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
