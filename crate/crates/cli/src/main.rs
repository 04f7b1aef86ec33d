//! `mvstack`: fit, inspect and apply stacked multi-view models from CSV files.
//!
//! Exit status: 0 on success, 1 for usage or configuration errors, 2 for
//! data, parse and missing-value errors, 3 for numerical failures. Every
//! failure also writes one JSON object to stderr.

use std::io::{IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use mvstack::io::{load_csv, read_table_file, write_table_file, write_vector, OutcomeSource};
use mvstack::{
    model_file, mrm, mvs_coef, mvs_fit, mvs_importance, mvs_predict, simulate, CvConfig, Error,
    Family, FitOptions, ForestSpec, LambdaRule, LearnerKind, LevelPlan, MissingBlock, MrmQuery,
    MvsModel, NaAction, NaKind, PredType, Progress, SimSpec,
};

const THREADS_VAR: &str = "MVSTACK_THREADS";

#[derive(Parser)]
#[command(name = "mvstack", version, about = "Multi-view stacking for CSV data")]
struct Cli {
    /// Do not draw progress on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a stacked model and write it to a model file.
    Fit(FitArgs),
    /// Predict new observations with a fitted model.
    Predict(PredictArgs),
    /// Print the coefficients of the GLM sub-models.
    Coef(LevelArgs),
    /// Print the impurity importance of the random-forest sub-models.
    Importance(LevelArgs),
    /// Minority Report Measure of the inputs of one level.
    Mrm(MrmArgs),
    /// Write a simulated data set as CSV files.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Feature matrix, one row per observation.
    #[arg(long)]
    x: PathBuf,
    /// Outcome file with a single column.
    #[arg(
        long,
        conflicts_with = "y_column",
        required_unless_present = "y_column"
    )]
    y: Option<PathBuf>,
    /// Outcome column of the feature file, by header name or 1-based index.
    #[arg(long)]
    y_column: Option<String>,
    /// View assignment: one row per feature, one integer column per grouping level.
    #[arg(long)]
    views: PathBuf,
    #[arg(long, default_value = "binomial")]
    family: String,
    /// Number of levels; defaults to one more than the columns of the views file.
    #[arg(long)]
    levels: Option<usize>,
    /// Elastic-net mixing per level. Defaults to 0,1 for two levels.
    #[arg(long)]
    alphas: Option<String>,
    /// Nonnegativity per level (0/1). Defaults to 0,1 for two levels.
    #[arg(long)]
    nnc: Option<String>,
    /// Learner per level: glm (or StaPLR) and rf.
    #[arg(long = "type")]
    learners: Option<String>,
    /// Unpenalized refit on the selected support, per level (0/1).
    #[arg(long)]
    relax: Option<String>,
    /// Adaptive penalty weights, per level (0/1).
    #[arg(long)]
    adaptive: Option<String>,
    /// fail, pass, mean or matched-draw.
    #[arg(long, default_value = "fail")]
    na_action: String,
    /// Option of the missing-value action, as key=value. Repeatable.
    #[arg(long = "na-arg")]
    na_args: Vec<String>,
    /// Outer cross-validation folds.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Folds for lambda selection inside each GLM.
    #[arg(long, default_value_t = 10)]
    k_lambda: usize,
    /// min or 1se.
    #[arg(long, default_value = "min")]
    lambda_rule: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trees per random forest.
    #[arg(long, default_value_t = 500)]
    trees: usize,
    /// Fit the sub-models of a level concurrently.
    #[arg(long)]
    parallel: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Feature matrix with the columns used for fitting.
    #[arg(long)]
    data: PathBuf,
    /// response or class.
    #[arg(long, default_value = "response")]
    predtype: String,
    /// Write predictions here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LevelArgs {
    #[arg(long)]
    model: PathBuf,
    /// Only this level (1-based); all levels by default.
    #[arg(long)]
    level: Option<usize>,
}

#[derive(Args)]
struct MrmArgs {
    #[arg(long)]
    model: PathBuf,
    /// Level whose inputs are scored, from 2 to the number of levels.
    #[arg(long, default_value_t = 2)]
    level: usize,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    a: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    b: f64,
    /// Value of the other inputs; defaults to the training outcome mean.
    #[arg(long, allow_hyphen_values = true)]
    constant: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON simulation spec; overrides every other simulation flag.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Start from the two-level or three-level design.
    #[arg(long, default_value = "two-level")]
    preset: String,
    #[arg(long)]
    n: Option<usize>,
    /// Features per lowest-level view.
    #[arg(long)]
    views: Option<String>,
    /// Top-level view of each lowest-level view.
    #[arg(long)]
    parents: Option<String>,
    #[arg(long)]
    signal: Option<f64>,
    /// 1-based position of the first nonzero coefficient.
    #[arg(long)]
    signal_from: Option<usize>,
    #[arg(long)]
    signal_count: Option<usize>,
    /// Keep every coefficient positive.
    #[arg(long)]
    fixed_sign: bool,
    #[arg(long)]
    family: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Remove a view from a row range, as first:last:view (1-based).
    #[arg(long)]
    missing: Option<String>,
    /// Directory for x.csv, y.csv and views.csv.
    #[arg(long)]
    out_dir: PathBuf,
}

struct Failure {
    code: u8,
    kind: String,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.root() {
            Error::Config(_) | Error::Version(_) => 1,
            Error::Numeric(_) | Error::Convergence { .. } | Error::Degenerate(_) => 3,
            _ => 2,
        };
        Failure {
            code,
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        kind: "usage".into(),
        message: message.into(),
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn parse_list<T: FromStr>(s: &str, what: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| usage(format!("{what}: cannot parse '{}'", t.trim())))
        })
        .collect()
}

fn parse_flags(s: &str, what: &str) -> CliResult<Vec<bool>> {
    s.split(',')
        .map(|t| match t.trim().to_ascii_lowercase().as_str() {
            "1" | "true" | "t" | "yes" => Ok(true),
            "0" | "false" | "f" | "no" => Ok(false),
            other => Err(usage(format!("{what}: expected 0 or 1, got '{other}'"))),
        })
        .collect()
}

fn level_plan(args: &FitArgs, levels: usize) -> CliResult<LevelPlan> {
    let (alphas, nnc) = match (&args.alphas, &args.nnc) {
        (Some(a), Some(n)) => (parse_list(a, "--alphas")?, parse_flags(n, "--nnc")?),
        (a, n) if levels == 2 => (
            a.as_deref()
                .map_or(Ok(vec![0.0, 1.0]), |a| parse_list(a, "--alphas"))?,
            n.as_deref()
                .map_or(Ok(vec![false, true]), |n| parse_flags(n, "--nnc"))?,
        ),
        _ => {
            return Err(usage(format!(
                "a {levels}-level model needs explicit --alphas and --nnc"
            )))
        }
    };
    let learners = match &args.learners {
        Some(t) => t
            .split(',')
            .map(|s| LearnerKind::from_str(s.trim()))
            .collect::<mvstack::Result<Vec<_>>>()?,
        None => vec![LearnerKind::PenalizedGlm; levels],
    };
    let flags = |v: &Option<String>, what| match v {
        Some(s) => parse_flags(s, what),
        None => Ok(vec![false; levels]),
    };
    let relax = flags(&args.relax, "--relax")?;
    let adaptive = flags(&args.adaptive, "--adaptive")?;
    if alphas.len() != levels {
        return Err(usage(format!(
            "--alphas has {} entries for {levels} levels",
            alphas.len()
        )));
    }
    Ok(LevelPlan::from_vectors(
        &alphas, &nnc, &learners, &relax, &adaptive,
    )?)
}

fn na_action(args: &FitArgs) -> CliResult<NaAction> {
    let kind = NaKind::from_str(&args.na_action)?;
    let mut options = Vec::new();
    for a in &args.na_args {
        let (k, v) = a
            .split_once('=')
            .ok_or_else(|| usage(format!("--na-arg expects key=value, got '{a}'")))?;
        options.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(NaAction::with_options(kind, &options)?)
}

fn threads() -> CliResult<usize> {
    match std::env::var(THREADS_VAR) {
        Ok(v) => v.trim().parse().map_err(|_| {
            usage(format!(
                "{THREADS_VAR} must be a nonnegative integer, got '{v}'"
            ))
        }),
        Err(_) => Ok(0),
    }
}

fn progress_bar() -> mvstack::stacking::ProgressFn {
    Arc::new(|p: &Progress| {
        let mut err = std::io::stderr().lock();
        let _ = write!(
            err,
            "\rlevel {}/{}: {}/{} sub-models",
            p.level, p.levels, p.done, p.total
        );
        if p.done == p.total {
            let _ = writeln!(err);
        }
    })
}

fn one_based(v: &[usize]) -> String {
    v.iter()
        .map(|i| (i + 1).to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

fn print_fit_summary(model: &MvsModel, out: &Path) {
    println!(
        "family {}, {} features, {} levels",
        model.family,
        model.n_features,
        model.n_levels()
    );
    let coef = mvs_coef(model);
    for (fit, records) in model.levels.iter().zip(&coef) {
        let s = model.plan.level(fit.level);
        let learner = match s.learner {
            LearnerKind::PenalizedGlm => format!(
                "glm, alpha {}{}",
                s.alpha,
                if s.nonneg { ", nonnegative" } else { "" }
            ),
            LearnerKind::RandomForest => "random forest".to_string(),
        };
        println!(
            "level {}: {} sub-model{} ({learner})",
            fit.level,
            fit.n_models(),
            if fit.n_models() == 1 { "" } else { "s" }
        );
        if fit.level == 1 {
            continue;
        }
        for (g, r) in records.iter().enumerate() {
            if let Some(r) = r {
                let selected: Vec<usize> = r
                    .inputs
                    .iter()
                    .zip(&r.values)
                    .filter(|(_, b)| **b != 0.0)
                    .map(|(i, _)| *i)
                    .collect();
                println!(
                    "  model {}: selected inputs {} (of {})",
                    g + 1,
                    if selected.is_empty() {
                        "none".to_string()
                    } else {
                        one_based(&selected)
                    },
                    r.inputs.len()
                );
            }
        }
    }
    println!("model written to {}", out.display());
}

fn fit(args: FitArgs, quiet: bool) -> CliResult<()> {
    let family = Family::from_str(&args.family)?;
    let outcome = match (&args.y, &args.y_column) {
        (Some(p), _) => OutcomeSource::File(p.clone()),
        (None, Some(c)) => OutcomeSource::Column(c.clone()),
        (None, None) => return Err(usage("one of --y or --y-column is required")),
    };
    let na = na_action(&args)?;
    let cv = CvConfig {
        k_outer: args.k,
        k_lambda: args.k_lambda,
        seed: args.seed,
        lambda_rule: LambdaRule::from_str(&args.lambda_rule)?,
    };
    cv.validate()?;
    let loaded = load_csv(&args.x, &outcome, &args.views, family)?;
    let levels = loaded.hierarchy.levels();
    if let Some(l) = args.levels {
        if l != levels {
            return Err(usage(format!(
                "--levels {l} but the views file describes {levels} levels"
            )));
        }
    }
    let plan = level_plan(&args, levels)?;
    let opts = FitOptions {
        parallel: args.parallel,
        threads: threads()?,
        progress: (!quiet && std::io::stderr().is_terminal()).then(progress_bar),
        forest: Some(ForestSpec {
            n_trees: args.trees,
            ..ForestSpec::default()
        }),
    };
    let model = mvs_fit(&loaded.data, &loaded.hierarchy, &plan, &cv, &na, &opts)?;
    model_file::save(&model, &args.out)?;
    print_fit_summary(&model, &args.out);
    Ok(())
}

fn predict(args: PredictArgs) -> CliResult<()> {
    let model = model_file::load(&args.model)?;
    let predtype = PredType::from_str(&args.predtype)?;
    let table = read_table_file(&args.data)?;
    let pred = mvs_predict(&model, table.values.view(), predtype)?;
    match &args.out {
        Some(path) => write_vector(
            std::fs::File::create(path).map_err(Error::from)?,
            pred.view(),
        )?,
        None => write_vector(std::io::stdout().lock(), pred.view())?,
    }
    Ok(())
}

fn selected_levels(model: &MvsModel, level: Option<usize>) -> CliResult<Vec<usize>> {
    match level {
        None => Ok((1..=model.n_levels()).collect()),
        Some(l) if l >= 1 && l <= model.n_levels() => Ok(vec![l]),
        Some(l) => Err(usage(format!(
            "--level must lie in [1, {}], got {l}",
            model.n_levels()
        ))),
    }
}

fn coef(args: LevelArgs) -> CliResult<()> {
    let model = model_file::load(&args.model)?;
    let coef = mvs_coef(&model);
    println!("level,model,input,coefficient");
    for l in selected_levels(&model, args.level)? {
        for (g, r) in coef[l - 1].iter().enumerate() {
            match r {
                Some(r) => {
                    println!("{l},{},intercept,{}", g + 1, r.intercept);
                    for (i, b) in r.inputs.iter().zip(&r.values) {
                        println!("{l},{},{},{b}", g + 1, i + 1);
                    }
                }
                None => println!("{l},{},NA,NA", g + 1),
            }
        }
    }
    Ok(())
}

fn importance(args: LevelArgs) -> CliResult<()> {
    let model = model_file::load(&args.model)?;
    let imp = mvs_importance(&model);
    println!("level,model,input,importance");
    for l in selected_levels(&model, args.level)? {
        for (g, r) in imp[l - 1].iter().enumerate() {
            match r {
                Some(r) => {
                    for (i, v) in r.inputs.iter().zip(&r.values) {
                        println!("{l},{},{},{v}", g + 1, i + 1);
                    }
                }
                None => println!("{l},{},NA,NA", g + 1),
            }
        }
    }
    Ok(())
}

fn run_mrm(args: MrmArgs) -> CliResult<()> {
    let model = model_file::load(&args.model)?;
    let r = mrm(
        &model,
        &MrmQuery {
            level: args.level,
            a: args.a,
            b: args.b,
            constant: args.constant,
        },
    )?;
    println!("# a = {}, b = {}, constant = {}", r.a, r.b, r.constant);
    println!("input,mrm");
    for (i, v) in r.values.iter().enumerate() {
        println!("{},{v}", i + 1);
    }
    if model.n_levels() == 2 {
        if let Some((b0, beta)) = model.meta().coefficients() {
            println!("input,meta_coefficient");
            println!("intercept,{b0}");
            for (i, b) in beta.iter().enumerate() {
                println!("{},{b}", i + 1);
            }
        }
    }
    Ok(())
}

fn sim_spec(args: &SimulateArgs) -> CliResult<SimSpec> {
    if let Some(path) = &args.spec {
        let text = std::fs::read_to_string(path).map_err(Error::from)?;
        return Ok(serde_json::from_str(&text).map_err(Error::from)?);
    }
    let mut spec = match args.preset.as_str() {
        "two-level" => SimSpec::two_level(args.seed),
        "three-level" => SimSpec::three_level(args.seed),
        other => {
            return Err(usage(format!(
                "unknown preset '{other}' (expected two-level or three-level)"
            )))
        }
    };
    if let Some(n) = args.n {
        spec.n = n;
    }
    if let Some(v) = &args.views {
        spec.views = parse_list(v, "--views")?;
        if args.parents.is_none() {
            spec.parents = None;
        }
    }
    if let Some(p) = &args.parents {
        spec.parents = Some(parse_list(p, "--parents")?);
    }
    if let Some(s) = args.signal {
        spec.signal = s;
    }
    if let Some(s) = args.signal_from {
        if s == 0 {
            return Err(usage("--signal-from is 1-based"));
        }
        spec.signal_start = s - 1;
    }
    if let Some(c) = args.signal_count {
        spec.signal_count = c;
    }
    if args.fixed_sign {
        spec.random_sign = false;
    }
    if let Some(f) = &args.family {
        spec.family = Family::from_str(f)?;
    }
    if let Some(m) = &args.missing {
        let parts: Vec<usize> = parse_list(&m.replace(':', ","), "--missing")?;
        let [first, last, view] = parts[..] else {
            return Err(usage(format!(
                "--missing expects first:last:view, got '{m}'"
            )));
        };
        spec.missing = Some(MissingBlock { first, last, view });
    }
    Ok(spec)
}

fn run_simulate(args: SimulateArgs) -> CliResult<()> {
    let spec = sim_spec(&args)?;
    let sim = simulate(&spec)?;
    std::fs::create_dir_all(&args.out_dir).map_err(Error::from)?;
    let names: Vec<String> = (1..=sim.data.p()).map(|j| format!("X{j}")).collect();
    write_table_file(args.out_dir.join("x.csv"), Some(&names), sim.data.x())?;
    let y = sim.data.y().insert_axis(ndarray::Axis(1));
    write_table_file(args.out_dir.join("y.csv"), Some(&["y".to_string()]), y)?;
    let labels = sim.hierarchy.to_label_matrix().mapv(|v| v as f64);
    write_table_file(args.out_dir.join("views.csv"), None, labels.view())?;
    println!(
        "wrote {} observations of {} features to {}",
        sim.data.n(),
        sim.data.p(),
        args.out_dir.display()
    );
    Ok(())
}

fn report(f: &Failure) {
    eprintln!("error: {}", f.message);
    eprintln!(
        "{}",
        serde_json::json!({"error": f.kind, "message": f.message, "exit": f.code})
    );
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let msg = e.kind().to_string();
            eprintln!(
                "{}",
                serde_json::json!({"error": "usage", "message": msg, "exit": 1})
            );
            return ExitCode::from(1);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Fit(a) => fit(a, cli.quiet),
        Command::Predict(a) => predict(a),
        Command::Coef(a) => coef(a),
        Command::Importance(a) => importance(a),
        Command::Mrm(a) => run_mrm(a),
        Command::Simulate(a) => run_simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            report(&f);
            ExitCode::from(f.code)
        }
    }
}
