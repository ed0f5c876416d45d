//! `bilevel`: run the attack/defense pipeline stage by stage or as a full grid.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bilevel_poison::bench::{emit_report, run_experiment, ExperimentSpec};
use bilevel_poison::dataset::{load_csv, normalize_split, Dataset, Split};
use bilevel_poison::fdi::{build_attack_vector, inject, FdiConfig, SelectionMode, SensorAccessSet};
use bilevel_poison::poison::{
    build_blackbox_surrogate, run_poisoning_attack, AttackerKnowledge, KnowledgeMode, ObservedDataset, PoisonConfig,
};
use bilevel_poison::regress::{fit, mse, predict, Learner, LinearModel};
use bilevel_poison::rpca::sanitize_frame;
use bilevel_poison::synth::uci_like_csv;
use bilevel_poison::trim::{trim_fit_with, TrimConfig};
use bilevel_poison::Error;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(
    name = "bilevel",
    version,
    about = "Bi-level poisoning attacks and defenses for energy regression"
)]
struct Cli {
    /// TOML experiment spec; its sections supply defaults for every subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load a sensor CSV, normalize it and write train/validation/test splits.
    Ingest(IngestArgs),
    /// Fit a regressor on a split CSV.
    Train(TrainArgs),
    /// Corrupt a split with sparse additive errors.
    AttackFdi(FdiArgs),
    /// Craft poisoning points against a learner.
    AttackPoison(PoisonArgs),
    /// Separate low-rank readings from sparse errors.
    DefendApg(ApgArgs),
    /// Fit a learner with trimmed regression.
    DefendTrim(TrimArgs),
    /// Run the full experiment grid and write the reports.
    Bench(BenchArgs),
    /// Write a synthetic CSV with the appliances-energy schema.
    GenSynthetic(GenArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    max_rows: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset CSV (features then target).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "ols")]
    model: Learner,
    #[arg(long)]
    lambda: Option<f64>,
    /// Report MSE on this dataset CSV as well.
    #[arg(long)]
    eval: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FdiArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    rate: Option<f64>,
    /// Corrupt whole rows instead of single cells.
    #[arg(long)]
    row_wise: bool,
    /// Reachable sensor columns; all features when omitted.
    #[arg(long, value_delimiter = ',')]
    sensors: Vec<String>,
}

#[derive(Args, Debug)]
struct PoisonArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    validation: PathBuf,
    #[arg(long, default_value = "ols")]
    model: Learner,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    rate: f64,
    /// Substitute data for a black-box attacker; the true training set is then never read.
    #[arg(long)]
    pool: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ApgArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Args, Debug)]
struct TrimArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "ols")]
    model: Learner,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    n_clean: Option<usize>,
    /// Poisoning rate used to derive the clean count when `--n-clean` is absent.
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    eval: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Comma-separated rates, overriding the spec.
    #[arg(long, value_delimiter = ',')]
    rates: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    models: Vec<Learner>,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, default_value_t = 2000)]
    rows: usize,
    /// File to write; defaults to `<out>/synthetic.csv`.
    #[arg(long)]
    file: Option<PathBuf>,
}

/// Error carrying the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidConfig(_) | Error::EmptyGrid | Error::Json(_) => 1,
            Error::Io(_)
            | Error::Csv(_)
            | Error::MissingFile(_)
            | Error::MissingTargetColumn(_)
            | Error::NoParseableRows { .. }
            | Error::ConstantTarget(_) => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

struct Ctx {
    spec: ExperimentSpec,
    out: PathBuf,
}

impl Ctx {
    fn out_file(&self, name: &str) -> CliResult<PathBuf> {
        fs::create_dir_all(&self.out).map_err(Error::from)?;
        Ok(self.out.join(name))
    }

    fn lambda(&self, model: Learner, over: Option<f64>) -> f64 {
        over.unwrap_or_else(|| self.spec.lambda.for_learner(model))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<PathBuf> {
        let path = self.out_file(name)?;
        let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
        text.push('\n');
        fs::write(&path, text).map_err(Error::from)?;
        Ok(path)
    }

    fn write_dataset(&self, name: &str, data: &Dataset) -> CliResult<PathBuf> {
        let path = self.out_file(name)?;
        data.save_csv(&path)?;
        Ok(path)
    }
}

fn load_spec(path: Option<&Path>) -> CliResult<ExperimentSpec> {
    let Some(path) = path else {
        return Ok(ExperimentSpec::default());
    };
    let text =
        fs::read_to_string(path).map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| config_error(format!("bad config {}: {e}", path.display())))
}

fn read_dataset(path: &Path) -> CliResult<Dataset> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()).into());
    }
    Ok(Dataset::load_csv(path)?)
}

fn eval_mse(model: &LinearModel, path: &Path) -> CliResult<f64> {
    let data = read_dataset(path)?;
    Ok(mse(&predict(model, &data.x)?, &data.y)?)
}

#[derive(Serialize)]
struct IngestSummary {
    dataset: PathBuf,
    target: String,
    rows: usize,
    rejected: usize,
    train: usize,
    validation: usize,
    test: usize,
    feature_columns: Vec<String>,
    constant_columns: Vec<String>,
    clipped_cells: usize,
    feature_params: Vec<bilevel_poison::MinMax>,
    target_params: bilevel_poison::MinMax,
}

fn ingest(ctx: &Ctx, args: IngestArgs) -> CliResult<()> {
    let dataset = args.dataset.unwrap_or_else(|| ctx.spec.dataset.clone());
    let target = args.target.unwrap_or_else(|| ctx.spec.target.clone());
    let mut frame = load_csv(&dataset, &target)?;
    if let Some(max) = args.max_rows.or(ctx.spec.max_rows) {
        frame.rows.truncate(max);
        frame.timestamps.truncate(max);
    }
    let norm = normalize_split(&frame, &ctx.spec.split)?;
    for (name, split) in [
        ("train.csv", Split::Train),
        ("validation.csv", Split::Validation),
        ("test.csv", Split::Test),
    ] {
        ctx.write_dataset(name, &norm.dataset(split))?;
    }
    let summary = IngestSummary {
        dataset,
        target,
        rows: frame.len(),
        rejected: frame.rejected,
        train: norm.rows(Split::Train).len(),
        validation: norm.rows(Split::Validation).len(),
        test: norm.rows(Split::Test).len(),
        constant_columns: norm
            .constant_columns
            .iter()
            .map(|&c| norm.feature_columns[c].clone())
            .collect(),
        feature_columns: norm.feature_columns.clone(),
        clipped_cells: norm.clipped_cells,
        feature_params: norm.feature_params.clone(),
        target_params: norm.target_params,
    };
    let path = ctx.write_json("ingest.json", &summary)?;
    println!(
        "{} rows ({} rejected): train {}, validation {}, test {} -> {}",
        summary.rows,
        summary.rejected,
        summary.train,
        summary.validation,
        summary.test,
        path.display()
    );
    Ok(())
}

fn train(ctx: &Ctx, args: TrainArgs) -> CliResult<()> {
    let data = read_dataset(&args.data)?;
    let mut tc = ctx.spec.lambda.train_config(args.model);
    tc.lambda = ctx.lambda(args.model, args.lambda);
    let model = fit(args.model, &data.x, &data.y, tc.lambda, &tc)?;
    let path = ctx.write_json("model.json", &model)?;
    let train_mse = mse(&predict(&model, &data.x)?, &data.y)?;
    println!("{} fitted, train mse {train_mse:.6} -> {}", args.model, path.display());
    if let Some(eval) = args.eval {
        println!("eval mse {:.6}", eval_mse(&model, &eval)?);
    }
    Ok(())
}

fn attack_fdi(ctx: &Ctx, args: FdiArgs) -> CliResult<()> {
    let data = read_dataset(&args.data)?;
    let fdi = &ctx.spec.fdi;
    let sensors = if args.sensors.is_empty() {
        fdi.sensors.clone()
    } else {
        args.sensors
    };
    let access = if sensors.is_empty() {
        SensorAccessSet::all(data.dim())?
    } else {
        SensorAccessSet::from_names(&data.columns, &sensors)?
    };
    let cfg = FdiConfig {
        rate: args.rate.or(fdi.rate).unwrap_or(FdiConfig::default().rate),
        magnitude: fdi.magnitude,
        seed: ctx.spec.seed,
        mode: if args.row_wise {
            SelectionMode::RowWise
        } else {
            fdi.mode
        },
    };
    let attack = build_attack_vector(&data, &access, &cfg)?;
    let attacked = inject(&data, &attack)?;
    ctx.write_dataset("attacked.csv", &attacked)?;
    let path = ctx.out_file("attack_vector.csv")?;
    attack.write_csv(fs::File::create(&path).map_err(Error::from)?, &data.columns)?;
    println!(
        "{} cells perturbed (density {:.4}) -> {}",
        attack.nnz(),
        attack.density(),
        path.display()
    );
    Ok(())
}

fn attack_poison(ctx: &Ctx, args: PoisonArgs) -> CliResult<()> {
    let train = ObservedDataset::new(read_dataset(&args.train)?);
    let validation = read_dataset(&args.validation)?;
    let mut tc = ctx.spec.lambda.train_config(args.model);
    tc.lambda = ctx.lambda(args.model, args.lambda);
    let p = &ctx.spec.poison;
    let (knowledge, mode) = match &args.pool {
        Some(pool) => {
            let pool = read_dataset(pool)?;
            (
                build_blackbox_surrogate(&pool, args.model, tc, ctx.spec.seed)?,
                KnowledgeMode::BlackBox,
            )
        }
        None => (
            AttackerKnowledge::white_box(&train, args.model, tc)?,
            KnowledgeMode::WhiteBox,
        ),
    };
    let cfg = PoisonConfig {
        rate: args.rate,
        tolerance: p.tolerance,
        max_outer_iter: p.max_outer_iter,
        line_search: p.line_search.clone(),
        mode,
        seed: ctx.spec.seed,
        optimize_response: p.optimize_response,
    };
    let set = run_poisoning_attack(&train, &validation, &knowledge, &cfg)?;
    let path = ctx.out_file("poison.csv")?;
    set.write_csv(fs::File::create(&path).map_err(Error::from)?)?;
    ctx.write_json("poison_trajectory.json", &set.loss_trajectory)?;
    if mode == KnowledgeMode::WhiteBox {
        ctx.write_dataset("poisoned_train.csv", &train.read().concat(&set.as_dataset())?)?;
    }
    let first = set.loss_trajectory.first().copied().unwrap_or(f64::NAN);
    let last = set.loss_trajectory.last().copied().unwrap_or(f64::NAN);
    println!(
        "{} points, clean-set loss {first:.6} -> {last:.6} over {} sweeps ({} numeric gradients) -> {}",
        set.len(),
        set.outer_iterations,
        set.fd_fallbacks,
        path.display()
    );
    Ok(())
}

fn defend_apg(ctx: &Ctx, args: ApgArgs) -> CliResult<()> {
    let data = read_dataset(&args.data)?;
    let mut cfg = ctx.spec.apg.clone();
    if args.lambda.is_some() {
        cfg.lambda = args.lambda;
    }
    let s = sanitize_frame(&data, &cfg)?;
    ctx.write_dataset("sanitized.csv", &s.clean)?;
    ctx.write_dataset("repaired.csv", &s.repaired(&data)?)?;
    let path = ctx.out_file("estimated_attack.csv")?;
    s.estimated_attack
        .write_csv(fs::File::create(&path).map_err(Error::from)?, &data.columns)?;
    ctx.write_json("rpca_trajectory.json", &s.rpca.objective_trajectory)?;
    println!(
        "rank {}, {} sparse cells, {} iterations (converged: {}) -> {}",
        s.rpca.rank,
        s.estimated_attack.nnz(),
        s.rpca.iterations,
        s.rpca.converged,
        path.display()
    );
    Ok(())
}

fn defend_trim(ctx: &Ctx, args: TrimArgs) -> CliResult<()> {
    let data = read_dataset(&args.data)?;
    let mut tc = ctx.spec.lambda.train_config(args.model);
    tc.lambda = ctx.lambda(args.model, args.lambda);
    let t = &ctx.spec.trim;
    if args.n_clean.is_none() && args.rate.is_none() {
        return Err(config_error("defend-trim needs --n-clean or --rate"));
    }
    let cfg = TrimConfig {
        n_clean: args.n_clean,
        rate: args.rate,
        max_iter: t.max_iter,
        restarts: args.restarts.unwrap_or(t.restarts),
        seed: ctx.spec.seed,
        loss_tol: t.loss_tol,
        include_penalty: t.include_penalty,
        init: t.init,
    };
    let result = trim_fit_with(&data, args.model, tc.lambda, &cfg, &tc)?;
    ctx.write_json("trim_model.json", &result.model)?;
    let path = ctx.write_json("trim_selected.json", &result.selected)?;
    ctx.write_json("trim_trajectory.json", &result.loss_trajectory)?;
    println!(
        "kept {} of {} rows, trimmed loss {:.6} after {} iterations -> {}",
        result.selected.len(),
        data.len(),
        result.final_loss(),
        result.iterations,
        path.display()
    );
    if let Some(eval) = args.eval {
        println!("eval mse {:.6}", eval_mse(&result.model, &eval)?);
    }
    Ok(())
}

fn bench(ctx: &Ctx, args: BenchArgs) -> CliResult<ExitCode> {
    let mut spec = ctx.spec.clone();
    if let Some(d) = args.dataset {
        spec.dataset = d;
    }
    if !args.rates.is_empty() {
        spec.rates = args.rates;
    }
    if !args.models.is_empty() {
        spec.models = args.models;
    }
    spec.out = ctx.out.clone();
    let report = run_experiment(&spec)?;
    emit_report(&report, &spec.out)?;
    let failures = report.failures();
    println!(
        "{} records, {} failed cells, config {} -> {}",
        report.records.len(),
        failures,
        &report.config_hash[..12],
        spec.out.display()
    );
    Ok(if failures > 0 {
        ExitCode::from(3)
    } else {
        ExitCode::SUCCESS
    })
}

fn gen_synthetic(ctx: &Ctx, args: GenArgs) -> CliResult<()> {
    let path = match args.file {
        Some(p) => p,
        None => ctx.out_file("synthetic.csv")?,
    };
    fs::write(&path, uci_like_csv(args.rows, ctx.spec.seed)).map_err(Error::from)?;
    println!("{} rows -> {}", args.rows, path.display());
    Ok(())
}

fn run(cli: Cli) -> CliResult<ExitCode> {
    let mut spec = load_spec(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    if let Some(out) = &cli.out {
        spec.out = out.clone();
    }
    let ctx = Ctx {
        out: spec.out.clone(),
        spec,
    };
    match cli.command {
        Command::Ingest(a) => ingest(&ctx, a)?,
        Command::Train(a) => train(&ctx, a)?,
        Command::AttackFdi(a) => attack_fdi(&ctx, a)?,
        Command::AttackPoison(a) => attack_poison(&ctx, a)?,
        Command::DefendApg(a) => defend_apg(&ctx, a)?,
        Command::DefendTrim(a) => defend_trim(&ctx, a)?,
        Command::Bench(a) => return bench(&ctx, a),
        Command::GenSynthetic(a) => gen_synthetic(&ctx, a)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
