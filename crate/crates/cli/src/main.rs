//! `ficbl` — build datasets, train, predict and run the noise experiments.

#![allow(clippy::needless_range_loop)]

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ficbl::clustering::ClusterAlgorithm;
use ficbl::dataset::{
    annotated_dataset, compose_grid_dataset, load_idx, sample_digits, Dataset, DigitPool, GrayImage, PatchConfig,
};
use ficbl::evaluation::{evaluate, parse_grid, rule_hierarchy, sweep_beta};
use ficbl::inference::{assigned_values, parse_thresholds, DEFAULT_EPSILON};
use ficbl::pipeline::{predict_all, train, TrainConfig, TrainedModel};
use ficbl::rules::{parse_rule, parse_rules_file, RuleExpr};
use ficbl::{model_file, Error};

#[derive(Parser)]
#[command(name = "ficbl", version, about = "Frequentist concept-based learning with expert rules")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a dataset directory from MNIST IDX files.
    MakeDataset(MakeDataset),
    /// Fit embedder, clusters and counts; write a model file.
    Train(TrainArgs),
    /// Posterior concept probabilities for every image of a dataset.
    Predict(PredictArgs),
    /// Per-concept macro F1 of a model on a labeled dataset.
    Eval(EvalArgs),
    /// Target F1 with and without a rule over a grid of inversion fractions.
    SweepBeta(SweepArgs),
    /// Target-posterior histograms under increasingly detailed rules.
    RuleHierarchy(HierarchyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Grid4,
    Annotated,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Args)]
struct MakeDataset {
    /// Directory holding `{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]`.
    #[arg(long)]
    source: PathBuf,
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Which IDX pair to draw digits from.
    #[arg(long, value_enum, default_value = "train")]
    split: Split,
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once('x').ok_or_else(|| format!("expected <w>x<h>, got `{s}`"))?;
    let a = a.parse().map_err(|_| format!("bad width in `{s}`"))?;
    let b = b.parse().map_err(|_| format!("bad height in `{s}`"))?;
    Ok((a, b))
}

#[derive(Args, Clone)]
struct FeatureArgs {
    #[arg(long, value_parser = parse_pair, default_value = "28x28")]
    patch: (usize, usize),
    #[arg(long, value_parser = parse_pair, default_value = "28x28")]
    stride: (usize, usize),
    #[arg(long, default_value_t = 16)]
    embed_dim: usize,
    #[arg(long, default_value_t = 80)]
    clusters: usize,
    #[arg(long, default_value = "em")]
    cluster_alg: ClusterAlgorithm,
}

impl FeatureArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            patch: PatchConfig {
                patch_w: self.patch.0,
                patch_h: self.patch.1,
                stride_x: self.stride.0,
                stride_y: self.stride.1,
            },
            embed_dim: self.embed_dim,
            clusters: self.clusters,
            algorithm: self.cluster_alg,
            seed,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    features: FeatureArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Rules file; replaces the rules stored in the model.
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    /// `c0=0.5,contour=0.6,...`; concepts left out report the arg-max.
    #[arg(long)]
    thresholds: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Training dataset; labels are inverted in memory.
    #[arg(long)]
    data: PathBuf,
    /// Clean evaluation dataset; defaults to the clean training labels.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    rule: String,
    /// `start:stop:step`, inclusive and ascending.
    #[arg(long, default_value = "0:0.5:0.05")]
    betas: String,
    /// Number of seeds, counted up from `--seed`.
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    features: FeatureArgs,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HierarchyArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// `name=rule`, repeatable; defaults to the annotated-MNIST rules g1–g3.
    #[arg(long = "rule")]
    rules: Vec<String>,
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    /// Target value whose posterior is histogrammed.
    #[arg(long, default_value_t = 2)]
    value: u16,
    #[arg(long, default_value_t = 10)]
    bins: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    features: FeatureArgs,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long)]
    out: PathBuf,
}

/// Rules of increasing detail for the annotated MNIST concepts.
const HIERARCHY: [(&str, &str); 3] = [
    ("g1", "odd=2 & below_five=2 -> target=2"),
    ("g2", "(odd=1 & below_five=2 -> target=1) & (odd=2 & below_five=2 -> target=2)"),
    ("g3", "(odd=1 & below_five=1) | (odd=2 & below_five=2) <-> target=2"),
];

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Format { .. } | Error::Schema(_) => 3,
        Error::Numeric(_) | Error::InsufficientData(_) | Error::DimensionMismatch { .. } => 4,
        Error::RuleInconsistent(_) => 5,
        Error::Domain(_) | Error::RuleSyntax { .. } | Error::UnknownConcept(_) | Error::ValueOutOfRange { .. } => 2,
    }
}

fn idx_pair(dir: &Path, prefix: &str) -> Result<Vec<(GrayImage, u8)>, Error> {
    let find = |stem: &str| {
        let plain = dir.join(format!("{prefix}-{stem}-ubyte"));
        let gz = dir.join(format!("{prefix}-{stem}-ubyte.gz"));
        if gz.exists() {
            gz
        } else {
            plain
        }
    };
    load_idx(&find("images-idx3"), &find("labels-idx1"))
}

/// Shortest round-trip text; scientific below 1e-4 so tiny posteriors stay
/// readable.
fn real(x: f64) -> String {
    if x == 0.0 || x.abs() >= 1e-4 {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn images(ds: &Dataset) -> Vec<&GrayImage> {
    ds.records.iter().map(|r| &r.image).collect()
}

fn make_dataset(a: MakeDataset) -> Result<(), Error> {
    let prefix = match a.split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let digits = idx_pair(&a.source, prefix)?;
    let ds = match a.kind {
        Kind::Grid4 => compose_grid_dataset(&DigitPool::new(digits)?, a.n, a.seed)?,
        Kind::Annotated => annotated_dataset(sample_digits(&digits, a.n, a.seed))?,
    };
    ds.save(&a.out)?;
    eprintln!("wrote {} images to {}", ds.len(), a.out.display());
    Ok(())
}

fn load_rules(path: &Option<PathBuf>, model: &TrainedModel) -> Result<Vec<RuleExpr>, Error> {
    match path {
        Some(p) => parse_rules_file(&fs::read_to_string(p)?, &model.schema),
        None => Ok(model.rules.clone()),
    }
}

fn check_schema(model: &TrainedModel, ds: &Dataset) -> Result<(), Error> {
    if model.schema != ds.schema {
        return Err(Error::Schema("dataset schema differs from the model's".into()));
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<(), Error> {
    let ds = Dataset::load(&a.data)?;
    let model = train(&ds, &a.features.config(a.seed))?;
    model_file::save(&model, &a.out)?;
    eprintln!("wrote model {} ({})", a.out.display(), model_file::digest(&model));
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<(), Error> {
    let model = model_file::load(&a.model)?;
    let ds = Dataset::load(&a.data)?;
    check_schema(&model, &ds)?;
    let probs = model.probability_model_with(&load_rules(&a.rules, &model)?)?;
    let thresholds = match &a.thresholds {
        Some(t) => parse_thresholds(t, &model.schema)?,
        None => vec![None; model.schema.len()],
    };
    let preds = predict_all(&probs, &model.occupancies(&images(&ds))?, a.epsilon)?;
    let mut out = String::from("image_id,concept,row,value,posterior\n");
    for (i, p) in preds.iter().enumerate() {
        let assigned = assigned_values(p, &thresholds);
        for r in 0..model.schema.len() {
            let name = model.schema.name(r);
            for (vi, x) in p.posteriors[r].iter().enumerate() {
                out += &format!("{i},{name},posterior,{},{}\n", vi + 1, real(*x));
            }
            let vals: Vec<String> = assigned[r].iter().map(|v| v.to_string()).collect();
            out += &format!("{i},{name},assigned,{},\n", vals.join(";"));
        }
    }
    fs::write(&a.out, out)?;
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), Error> {
    let model = model_file::load(&a.model)?;
    let ds = Dataset::load(&a.data)?;
    let probs = model.probability_model_with(&load_rules(&a.rules, &model)?)?;
    let (_, report) = evaluate(&model, &probs, &ds, a.epsilon)?;
    for p in report.write(&a.out)? {
        eprintln!("wrote {}", p.display());
    }
    print!("{}", report.summary());
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<(), Error> {
    let betas = parse_grid(&a.betas)?;
    if a.seeds == 0 {
        return Err(Error::Domain("--seeds must be at least 1".into()));
    }
    let train_set = Dataset::load(&a.data)?;
    let test_set = match &a.test {
        Some(t) => Dataset::load(t)?,
        None => train_set.clone(),
    };
    let rule = parse_rule(&a.rule, &train_set.schema)?;
    let seeds: Vec<u64> = (a.seed..a.seed + a.seeds).collect();
    let sweep = sweep_beta(&train_set, &test_set, &rule, &betas, &a.features.config(a.seed), &seeds, a.epsilon)?;
    for p in sweep.report.write(&a.out)? {
        eprintln!("wrote {}", p.display());
    }
    print!("{}", sweep.report.summary());
    Ok(())
}

fn cmd_hierarchy(a: HierarchyArgs) -> Result<(), Error> {
    let train_set = Dataset::load(&a.data)?;
    let test_set = Dataset::load(&a.test)?;
    let texts: Vec<(String, String)> = if a.rules.is_empty() {
        HIERARCHY.iter().map(|(n, r)| (n.to_string(), r.to_string())).collect()
    } else {
        a.rules
            .iter()
            .map(|s| match s.split_once('=') {
                Some((n, r)) if !n.trim().is_empty() && !n.contains(|c: char| "&|!()<->".contains(c)) => {
                    Ok((n.trim().to_string(), r.to_string()))
                }
                _ => Err(Error::Domain(format!("--rule expects name=rule, got `{s}`"))),
            })
            .collect::<Result<_, _>>()?
    };
    let rules = texts
        .iter()
        .map(|(n, r)| Ok((n.clone(), parse_rule(r, &train_set.schema)?)))
        .collect::<Result<Vec<_>, Error>>()?;
    let h = rule_hierarchy(&train_set, &test_set, &rules, a.beta, a.value, &a.features.config(a.seed), a.bins, a.epsilon)?;
    for p in h.report.write(&a.out)? {
        eprintln!("wrote {}", p.display());
    }
    print!("{}", h.report.summary());
    Ok(())
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("FICBL_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("FICBL_THREADS must be a positive integer, got `{v}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("ficbl: {e}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::MakeDataset(a) => make_dataset(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Eval(a) => cmd_eval(a),
        Command::SweepBeta(a) => cmd_sweep(a),
        Command::RuleHierarchy(a) => cmd_hierarchy(a),
    };
    let _ = std::io::stdout().flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ficbl: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
