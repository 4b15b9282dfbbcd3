use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use citetrend::experiments::{
    ablate_edges, compare_models, evaluate, format_fixed, lambda_predictivity, predict_targets_cached, run_model,
    write_ablation_csv, write_eval_csv, Dataset, EvalRow, TrainConfig,
};
use citetrend::features::FeatureConfig;
use citetrend::graph::{CitationGraph, IngestMode, IngestOptions};
use citetrend::io::{generate_synthetic, load_bundle_with, save_bundle, SyntheticConfig};
use citetrend::models::{load_checkpoint, save_checkpoint, ModelRegistry};

type BoxError = Box<dyn std::error::Error>;

const DATA_DIR_ENV: &str = "CITETREND_DATA_DIR";

#[derive(Parser)]
#[command(name = "citetrend", version, about = "Citation trend prediction on citation graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic graph bundle.
    Generate(GenerateArgs),
    /// Train one model and print its evaluation row.
    Train(TrainArgs),
    /// Score a saved checkpoint on its bundle.
    Evaluate(EvaluateArgs),
    /// Edge-removal ablation curve.
    Ablate(AblateArgs),
    /// Print the predictivity value of a split.
    Lambda(LambdaArgs),
    /// Train several models on the same split.
    Compare(CompareArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Icml,
    Small,
}

#[derive(Args)]
struct GenerateArgs {
    /// JSON generator settings; missing fields take the preset's values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "icml")]
    preset: Preset,
    /// Overrides the seed from the config file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BundleArgs {
    /// Bundle directory; defaults to $CITETREND_DATA_DIR.
    #[arg(long)]
    bundle: Option<PathBuf>,
    /// Drop invalid edges instead of failing.
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct SplitArgs {
    /// Defaults to the latest year in the bundle.
    #[arg(long)]
    target_year: Option<i32>,
    #[arg(long, default_value_t = 10)]
    window: i32,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long, default_value_t = 0.9)]
    percentile: f64,
    #[arg(long, default_value_t = 150)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 5e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    #[arg(long, default_value_t = 1000)]
    max_text_features: usize,
    #[arg(long, default_value_t = 1000)]
    max_affiliations: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    bundle: BundleArgs,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value = "gnn")]
    model: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint destination.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    bundle: BundleArgs,
    #[arg(long)]
    ckpt: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    bundle: BundleArgs,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")]
    fractions: Vec<f64>,
    /// Number of training seeds, counted up from --seed.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed of the edge-removal draws.
    #[arg(long, default_value_t = 0)]
    removal_seed: u64,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LambdaArgs {
    #[command(flatten)]
    bundle: BundleArgs,
    #[command(flatten)]
    split: SplitArgs,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    bundle: BundleArgs,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_delimiter = ',', default_value = "gnn,mlp,logistic")]
    models: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(args: &BundleArgs) -> Result<CitationGraph, BoxError> {
    let dir = match &args.bundle {
        Some(d) => d.clone(),
        None => std::env::var_os(DATA_DIR_ENV)
            .map(PathBuf::from)
            .ok_or_else(|| format!("no --bundle given and ${DATA_DIR_ENV} is not set"))?,
    };
    let opts = IngestOptions {
        mode: if args.lenient { IngestMode::Lenient } else { IngestMode::Strict },
        ..IngestOptions::default()
    };
    let (graph, _, dropped) = load_bundle_with(&dir, opts)?;
    if dropped > 0 {
        eprintln!("dropped {dropped} invalid edges");
    }
    Ok(graph)
}

fn target_year(graph: &CitationGraph, split: &SplitArgs) -> Result<i32, BoxError> {
    match split.target_year {
        Some(y) => Ok(y),
        None => Ok(graph.year_range().ok_or("bundle has no documents")?.1),
    }
}

impl RunArgs {
    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            dropout: self.dropout,
            percentile: self.percentile,
            window_years: self.split.window,
            seed,
            ..TrainConfig::default()
        }
    }

    fn features(&self) -> FeatureConfig {
        FeatureConfig {
            max_text_features: self.max_text_features,
            max_affiliations: self.max_affiliations,
        }
    }

    fn dataset(&self, graph: &CitationGraph, cfg: &TrainConfig) -> Result<(Dataset, i32), BoxError> {
        let year = target_year(graph, &self.split)?;
        Ok((Dataset::prepare(graph, year, cfg, self.features())?, year))
    }
}

/// Writes to `path`, or stdout when there is none.
fn emit(path: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), BoxError> {
    match path {
        Some(p) => {
            let mut buf = Vec::new();
            write(&mut buf)?;
            fs::write(p, buf)?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn generate(args: GenerateArgs) -> Result<(), BoxError> {
    let mut cfg = match args.preset {
        Preset::Icml => SyntheticConfig::icml_scale(0),
        Preset::Small => SyntheticConfig::small(0),
    };
    if let Some(path) = &args.config {
        let mut base = serde_json::to_value(&cfg)?;
        let patch: serde_json::Value = serde_json::from_str(&fs::read_to_string(path)?)?;
        let patch = patch.as_object().ok_or("generator config must be a JSON object")?;
        for (k, v) in patch {
            base[k] = v.clone();
        }
        cfg = serde_json::from_value(base)?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let bundle = generate_synthetic(&cfg)?;
    save_bundle(&args.out, &bundle)?;
    eprintln!(
        "wrote {} documents and {} citations to {}",
        bundle.manifest.node_count,
        bundle.manifest.edge_count,
        args.out.display()
    );
    Ok(())
}

fn train(args: TrainArgs) -> Result<(), BoxError> {
    let registry = ModelRegistry::default();
    if !registry.contains(&args.model) {
        return Err(format!("unknown model {:?}", args.model).into());
    }
    let graph = load(&args.bundle)?;
    let cfg = args.run.train_config(args.seed);
    let (data, year) = args.run.dataset(&graph, &cfg)?;
    let (model, row) = run_model(&registry, &args.model, &data, &cfg)?;
    if let Some(path) = &args.out {
        let run = json!({
            "target_year": year,
            "window_years": cfg.window_years,
            "percentile": cfg.percentile,
            "max_text_features": args.run.max_text_features,
            "max_affiliations": args.run.max_affiliations,
            "epochs": cfg.epochs,
        });
        let file = fs::File::create(path)?;
        save_checkpoint(io::BufWriter::new(file), model.as_ref(), data.widths(), args.seed, run)?;
    }
    emit(None, |w| write_eval_csv(w, &[row]))
}

fn evaluate_checkpoint(args: EvaluateArgs) -> Result<(), BoxError> {
    let registry = ModelRegistry::default();
    let file = fs::File::open(&args.ckpt)?;
    let (ckpt, model) = load_checkpoint(io::BufReader::new(file), &registry)?;
    let graph = load(&args.bundle)?;
    let field = |k: &str| ckpt.run.get(k).ok_or_else(|| format!("checkpoint is missing run setting {k:?}"));
    let year = field("target_year")?.as_i64().ok_or("bad target year")? as i32;
    let cfg = TrainConfig {
        window_years: field("window_years")?.as_i64().ok_or("bad window")? as i32,
        percentile: field("percentile")?.as_f64().ok_or("bad percentile")?,
        seed: ckpt.seed,
        ..TrainConfig::default()
    };
    let features = FeatureConfig {
        max_text_features: field("max_text_features")?.as_u64().ok_or("bad feature cap")? as usize,
        max_affiliations: field("max_affiliations")?.as_u64().ok_or("bad affiliation cap")? as usize,
    };
    let data = Dataset::prepare(&graph, year, &cfg, features)?;
    if data.widths() != ckpt.widths {
        return Err(format!(
            "bundle features {:?} do not match the checkpoint's {:?}",
            data.widths(),
            ckpt.widths
        )
        .into());
    }
    let report = match model.as_trend_model() {
        Some(gnn) => {
            let logits = predict_targets_cached(gnn, &data)?;
            let rows: Vec<usize> = (0..logits.len()).collect();
            evaluate(&logits, &data.eval_labels, &rows)?
        }
        None => evaluate(&model.predict(&data.inputs)?, &data.eval_labels, &data.eval_rows)?,
    };
    let row = EvalRow {
        model: ckpt.model.clone(),
        seed: ckpt.seed,
        params: model.count_parameters(),
        report: citetrend::experiments::EvalReport {
            lambda: data.lambda(),
            ..report
        },
    };
    emit(None, |w| write_eval_csv(w, &[row]))
}

fn ablate(args: AblateArgs) -> Result<(), BoxError> {
    let graph = load(&args.bundle)?;
    let cfg = args.run.train_config(args.seed);
    let (data, _) = args.run.dataset(&graph, &cfg)?;
    let seeds: Vec<u64> = (args.seed..args.seed + args.seeds).collect();
    let curve = ablate_edges(&ModelRegistry::default(), &data, &args.fractions, &seeds, &cfg, args.removal_seed)?;
    emit(args.out.as_deref(), |w| write_ablation_csv(w, &curve))
}

fn lambda(args: LambdaArgs) -> Result<(), BoxError> {
    let graph = load(&args.bundle)?;
    let split = graph.split_by_year(target_year(&graph, &args.split)?, args.split.window)?;
    println!("{}", format_fixed(lambda_predictivity(&split)));
    Ok(())
}

fn compare(args: CompareArgs) -> Result<(), BoxError> {
    let registry = ModelRegistry::default();
    if let Some(bad) = args.models.iter().find(|m| !registry.contains(m)) {
        return Err(format!("unknown model {bad:?}").into());
    }
    let graph = load(&args.bundle)?;
    let cfg = args.run.train_config(args.seed);
    let (data, _) = args.run.dataset(&graph, &cfg)?;
    let names: Vec<&str> = args.models.iter().map(String::as_str).collect();
    let rows = compare_models(&registry, &names, &data, &cfg)?;
    emit(args.out.as_deref(), |w| write_eval_csv(w, &rows))
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate_checkpoint(a),
        Command::Ablate(a) => ablate(a),
        Command::Lambda(a) => lambda(a),
        Command::Compare(a) => compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
