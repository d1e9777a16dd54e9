use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use npglm::simulation::{comparison_table, run_replication, simulation_schema, variants};
use npglm::{
    generate_dataset, generate_truth, run_chain, Covariate, FunctionalMode, InterceptMode,
    PosteriorDraws, Scenario,
};

use crate::draws_file::{read_draws, write_draws};
use crate::error::{CliError, CliResult};
use crate::io::{create, read_dataset, write_csv, write_dataset, write_table};
use crate::settings::{parse_covariates, parse_kappa, Settings};
use crate::tables::{self, Table};

pub const SEED_ENV: &str = "NPGLM_SEED";

#[derive(Debug, Parser)]
#[command(name = "npglm", version, about = "Nonparametric Bayesian logistic regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and its true parameters.
    Simulate(SimulateArgs),
    /// Run the Gibbs sampler on a dataset and write draws and summaries.
    Fit(FitArgs),
    /// Recompute a summary table from a draws file.
    Summarize(SummarizeArgs),
    /// Fit the competing variants on simulated replications and tabulate errors.
    Study(StudyArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=2))]
    pub scenario: u32,
    /// Defaults to $NPGLM_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InterceptArg {
    Dp,
    Gaussian,
    None,
}

impl From<InterceptArg> for InterceptMode {
    fn from(a: InterceptArg) -> Self {
        match a {
            InterceptArg::Dp => InterceptMode::Dirichlet,
            InterceptArg::Gaussian => InterceptMode::Gaussian,
            InterceptArg::None => InterceptMode::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FunctionalArg {
    Gp,
    Parabolic,
    None,
}

impl From<FunctionalArg> for FunctionalMode {
    fn from(a: FunctionalArg) -> Self {
        match a {
            FunctionalArg::Gp => FunctionalMode::Gp,
            FunctionalArg::Parabolic => FunctionalMode::Parabolic,
            FunctionalArg::None => FunctionalMode::None,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Observations: y, state, age, child and one column per covariate.
    pub data: PathBuf,
    /// Settings file of `key = value` lines; flags take precedence.
    #[arg(long)]
    pub settings: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub truncation: Option<usize>,
    /// One length-scale, or a comma-separated list with one per level.
    #[arg(long)]
    pub kappa: Option<String>,
    #[arg(long, value_enum)]
    pub intercepts: Option<InterceptArg>,
    #[arg(long, value_enum)]
    pub functional: Option<FunctionalArg>,
    /// e.g. `area:urb, relig:musl|chri, educ:med|high`
    #[arg(long)]
    pub covariates: Option<String>,
    /// Defaults to the settings file, then $NPGLM_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Target {
    Beta,
    F,
    Clusters,
    ClusterCounts,
    Intercepts,
    Trace,
    Diagnostics,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    pub draws: PathBuf,
    #[arg(long, value_enum)]
    pub target: Target,
    /// Interaction level for `--target f`.
    #[arg(long, default_value_t = 0)]
    pub level: usize,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=2))]
    pub scenario: u32,
    /// Comma-separated replication seeds.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 2000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 500)]
    pub burnin: usize,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parse arguments, run, report errors on stderr; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Summarize(a) => cmd_summarize(&a),
        Command::Study(a) => cmd_study(&a),
    }
}

fn env_seed() -> CliResult<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}='{v}' is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn with_threads<T: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> CliResult<T> + Send,
) -> CliResult<T> {
    match threads {
        None => f(),
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {n} worker threads: {e}")))?
            .install(f),
    }
}

fn ensure_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// SHA-256 of the file framed as a git blob (`blob <len>\0<bytes>`).
pub fn blob_digest(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()));
    h.update(bytes);
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn save(path: &Path, table: &Table) -> CliResult<()> {
    write_table(path, &table.header, &table.rows)
}

fn manifest(entries: &[(&str, String)]) -> String {
    entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

fn covariate_text(covs: &[Covariate]) -> String {
    covs.iter()
        .map(|c| match c {
            Covariate::Factor { name, labels } => format!("{name}:{}", labels.join("|")),
            Covariate::Numeric { name } => name.clone(),
        })
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let scenario = Scenario::try_from(args.scenario)?;
    let seed = match args.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    ensure_dir(&args.out)?;
    let truth = generate_truth(scenario, seed)?;
    let data = generate_dataset(&truth)?;
    write_dataset(&args.out.join("dataset.csv"), &data)?;

    let mut rows: Vec<Vec<String>> = Vec::new();
    for (name, b) in data.column_names().iter().zip(&truth.beta) {
        rows.push(vec![format!("beta.{name}"), b.to_string()]);
    }
    for (k, curve) in truth.curves.iter().enumerate() {
        for (a, v) in truth.grid.iter().zip(curve) {
            rows.push(vec![format!("f{k}.age{a}"), v.to_string()]);
        }
    }
    for (i, mu) in truth.intercepts.iter().enumerate() {
        rows.push(vec![format!("mu.{}", i + 1), mu.to_string()]);
    }
    write_table(&args.out.join("truth.csv"), &["parameter", "value"], rows)?;

    let schema = simulation_schema();
    write_text(
        &args.out.join("settings.txt"),
        &format!(
            "# settings for fitting dataset.csv\ncovariates = {}\nlevels = {}\ngroups = {}\n",
            covariate_text(&schema.covariates),
            schema.num_levels,
            data.num_groups()
        ),
    )?;
    write_text(
        &args.out.join("manifest.txt"),
        &manifest(&[
            ("command", "simulate".into()),
            ("version", env!("CARGO_PKG_VERSION").into()),
            ("scenario", scenario.to_string()),
            ("seed", seed.to_string()),
            ("n", data.len().to_string()),
            ("groups", data.num_groups().to_string()),
            ("distinct_intercepts", truth.distinct_intercepts().to_string()),
            ("dataset_sha256", data.digest()),
            ("reproduce", format!("npglm simulate --scenario {scenario} --seed {seed} --out <dir>")),
        ]),
    )?;
    log::info!("wrote {} observations to {}", data.len(), args.out.display());
    Ok(())
}

/// Settings from the file with flags layered on top.
fn fit_settings(args: &FitArgs) -> CliResult<Settings> {
    let file = match &args.settings {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    let flags = Settings {
        intercepts: args.intercepts.map(Into::into),
        functional: args.functional.map(Into::into),
        truncation: args.truncation,
        kappa: args.kappa.as_deref().map(parse_kappa).transpose()?,
        covariates: args.covariates.as_deref().map(parse_covariates).transpose()?,
        iterations: args.iterations,
        burnin: args.burnin,
        thin: args.thin,
        seed: args.seed,
        ..Settings::default()
    };
    Ok(file.overlay(&flags))
}

fn resolved_settings(settings: &Settings, draws: &PosteriorDraws, covs: &[Covariate]) -> String {
    let s = &draws.spec;
    let c = &draws.config;
    let kappa: Vec<String> = s.kappa.iter().map(f64::to_string).collect();
    let mut out = String::from("# resolved settings of this run\n");
    let mut line = |k: &str, v: String| {
        out.push_str(&format!("{k} = {v}\n"));
    };
    line("covariates", covariate_text(covs));
    line("levels", draws.layout.grids.len().to_string());
    if let Some(g) = settings.groups {
        line("groups", g.to_string());
    }
    line("intercepts", s.intercepts.to_string());
    line("functional", s.functional.to_string());
    line("truncation", s.truncation.to_string());
    line("kappa", kappa.join(", "));
    line("sigma_shape", s.sigma_shape.to_string());
    line("sigma_rate", s.sigma_rate.to_string());
    line("alpha_shape", s.alpha_shape.to_string());
    line("alpha_rate", s.alpha_rate.to_string());
    line("beta_prior", settings.beta_prior.clone().unwrap_or_else(|| "improper".into()));
    if let Some(m) = settings.beta_mean {
        line("beta_mean", m.to_string());
    }
    if let Some(v) = settings.beta_variance {
        line("beta_variance", v.to_string());
    }
    line("iterations", c.iterations.to_string());
    line("burnin", c.burn_in.to_string());
    line("thin", c.thin.to_string());
    line("seed", c.seed.to_string());
    out
}

pub fn cmd_fit(args: &FitArgs) -> CliResult<()> {
    let settings = fit_settings(args)?;
    let env = env_seed()?;
    let schema = settings.schema();
    let bytes = fs::read(&args.data).map_err(|e| CliError::io(&args.data, e))?;
    let data = read_dataset(&args.data, &schema)?;
    let spec = settings.model_spec(data.num_levels(), data.num_groups(), data.design_width())?;
    let config = settings.chain_config(env.unwrap_or(0));
    config.validate()?;
    spec.validate(&data)?;
    ensure_dir(&args.out)?;
    log::info!(
        "fitting {} observations in {} groups: {} iterations, seed {}",
        data.len(),
        data.num_groups(),
        config.iterations,
        config.seed
    );

    let draws = match with_threads(args.threads, || Ok(run_chain(&data, &spec, &config)?)) {
        Ok(d) => d,
        Err(CliError::Model(npglm::Error::ChainAborted { iteration, source, last_state })) => {
            let state_path = args.out.join("abort_state.csv");
            let snapshot = PosteriorDraws {
                spec: spec.clone(),
                config,
                layout: npglm::DrawLayout::of(&data),
                dataset_digest: data.digest(),
                elapsed: Default::default(),
                iterations: vec![iteration],
                states: vec![(*last_state).clone()],
            };
            write_draws(&state_path, &snapshot)?;
            write_text(
                &args.out.join("abort.txt"),
                &manifest(&[
                    ("iteration", iteration.to_string()),
                    ("error", source.to_string()),
                    ("last_state", "abort_state.csv".into()),
                    ("seed", config.seed.to_string()),
                ]),
            )?;
            return Err(CliError::Model(npglm::Error::ChainAborted { iteration, source, last_state }));
        }
        Err(e) => return Err(e),
    };

    let out = &args.out;
    let mut outputs = vec!["draws.csv", "trace.csv", "diagnostics.csv", "intercept_draws.csv"];
    write_draws(&out.join("draws.csv"), &draws)?;
    save(&out.join("trace.csv"), &tables::trace(&draws)?)?;
    save(&out.join("diagnostics.csv"), &tables::diagnostics(&draws)?)?;
    save(&out.join("intercept_draws.csv"), &tables::intercept_draws(&draws))?;
    if data.design_width() > 0 {
        save(&out.join("coefficients.csv"), &tables::coefficients(&draws)?)?;
        outputs.push("coefficients.csv");
    }
    let mut band_files = Vec::new();
    if spec.functional == FunctionalMode::Gp {
        for k in 0..data.num_levels() {
            let name = format!("functional_{k}.csv");
            save(&out.join(&name), &tables::functional_band(&draws, k)?)?;
            band_files.push(name);
        }
    }
    let mut modal = String::from("NA");
    if spec.intercepts == InterceptMode::Dirichlet {
        save(&out.join("coclustering.csv"), &tables::coclustering(&draws)?)?;
        save(&out.join("cluster_counts.csv"), &tables::cluster_counts(&draws)?)?;
        outputs.push("coclustering.csv");
        outputs.push("cluster_counts.csv");
        modal = npglm::cluster_summary(&draws)?.modal_cluster_count().to_string();
    }
    write_text(&out.join("settings.txt"), &resolved_settings(&settings, &draws, &schema.covariates))?;
    let mut all_outputs: Vec<String> = outputs.iter().map(|s| s.to_string()).collect();
    all_outputs.extend(band_files);
    all_outputs.push("settings.txt".into());

    let threads = args.threads.map_or_else(|| rayon::current_num_threads().to_string(), |n| n.to_string());
    write_text(
        &out.join("manifest.txt"),
        &manifest(&[
            ("command", "fit".into()),
            ("version", env!("CARGO_PKG_VERSION").into()),
            ("input", args.data.display().to_string()),
            ("input_blob_sha256", blob_digest(&bytes)),
            ("dataset_sha256", draws.dataset_digest.clone()),
            ("n", data.len().to_string()),
            ("groups", data.num_groups().to_string()),
            ("levels", data.num_levels().to_string()),
            ("columns", data.column_names().join(",")),
            ("intercepts", spec.intercepts.to_string()),
            ("functional", spec.functional.to_string()),
            ("iterations", config.iterations.to_string()),
            ("burnin", config.burn_in.to_string()),
            ("thin", config.thin.to_string()),
            ("seed", config.seed.to_string()),
            ("kept_draws", draws.len().to_string()),
            ("modal_clusters", modal),
            ("threads", threads),
            ("elapsed_seconds", format!("{:.3}", draws.elapsed.as_secs_f64())),
            ("outputs", all_outputs.join(",")),
            ("reproduce", format!("npglm fit {} --settings <dir>/settings.txt --out <dir>", args.data.display())),
        ]),
    )?;
    log::info!("kept {} draws in {:.1?}", draws.len(), draws.elapsed);
    Ok(())
}

pub fn summary_table(draws: &PosteriorDraws, target: Target, level: usize) -> CliResult<Table> {
    match target {
        Target::Beta => tables::coefficients(draws),
        Target::F => tables::functional_band(draws, level),
        Target::Clusters => tables::coclustering(draws),
        Target::ClusterCounts => tables::cluster_counts(draws),
        Target::Intercepts => Ok(tables::intercept_draws(draws)),
        Target::Trace => tables::trace(draws),
        Target::Diagnostics => tables::diagnostics(draws),
    }
}

pub fn cmd_summarize(args: &SummarizeArgs) -> CliResult<()> {
    let draws = read_draws(&args.draws)?;
    let table = summary_table(&draws, args.target, args.level)?;
    match &args.out {
        Some(p) => save(p, &table),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write_csv(&mut lock, &table.header, &table.rows)
                .map_err(|e| crate::error::csv_error(Path::new("<stdout>"), e))?;
            lock.flush().map_err(|e| CliError::io(Path::new("<stdout>"), e))
        }
    }
}

pub fn cmd_study(args: &StudyArgs) -> CliResult<()> {
    let scenario = Scenario::try_from(args.scenario)?;
    if args.seeds.is_empty() {
        return Err(CliError::Usage("at least one seed is required".into()));
    }
    ensure_dir(&args.out)?;
    let mut columns = Vec::new();
    for &seed in &args.seeds {
        log::info!("scenario {scenario}, seed {seed}");
        let metrics = with_threads(args.threads, || {
            Ok(run_replication(scenario, seed, args.iterations, args.burnin)?)
        })?;
        for (name, m) in metrics {
            let label = if args.seeds.len() == 1 { name } else { format!("{name}.seed{seed}") };
            columns.push((label, m));
        }
    }
    let table = comparison_table(&columns);
    let mut w = create(&args.out.join("table.csv"))?;
    write_csv(&mut w, &table[0], &table[1..]).map_err(|e| crate::error::csv_error(&args.out, e))?;
    w.flush().map_err(|e| CliError::io(&args.out, e))?;
    let names: Vec<&str> = variants(scenario).iter().map(|v| v.name).collect();
    write_text(
        &args.out.join("manifest.txt"),
        &manifest(&[
            ("command", "study".into()),
            ("version", env!("CARGO_PKG_VERSION").into()),
            ("scenario", scenario.to_string()),
            ("seeds", args.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")),
            ("variants", names.join(",")),
            ("iterations", args.iterations.to_string()),
            ("burnin", args.burnin.to_string()),
        ]),
    )
}
