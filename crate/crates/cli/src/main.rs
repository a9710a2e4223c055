//! `jvae`: synthetic parallel corpora, joint VAE / DA / acoustic-model
//! training, grid search, evaluation, enhancement, and loss-trace plots.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use jvae_cli::config::{parse_config_file, parse_weights};
use jvae_cli::plot::{load_metrics, write_plot};
use jvae_cli::{CliError, CliResult};
use jvae_core::data::{generate_corpus, CorpusManifest, SynthConfig};
use jvae_core::models::{load_checkpoint, Model};
use jvae_core::train::{
    evaluate, grid_run, load_corpus, train_run, LossWeights, Objective, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "jvae",
    version,
    about = "Far-field feature enhancement with a joint VAE trained alongside a frame classifier"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic parallel corpus (far-field / close-talk / labels).
    GenData(GenDataArgs),
    /// Train one objective on a corpus manifest.
    Train(TrainArgs),
    /// Train and evaluate a grid of loss weights.
    Grid(GridArgs),
    /// Frame error and enhancement gain of a trained checkpoint.
    Eval(EvalArgs),
    /// Write enhanced features for every utterance of a corpus.
    Enhance(EnhanceArgs),
    /// Plot loss traces from a metrics CSV.
    PlotTraces(PlotArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Output directory for feature files and the manifest.
    #[arg(long)]
    out: PathBuf,
    /// Number of utterances.
    #[arg(long)]
    utts: usize,
    /// Shortest utterance length in frames.
    #[arg(long)]
    tmin: usize,
    /// Longest utterance length in frames.
    #[arg(long)]
    tmax: usize,
    /// Feature dimension.
    #[arg(long, default_value_t = 8)]
    dim: usize,
    /// Number of hidden states (label alphabet).
    #[arg(long, default_value_t = 10)]
    states: usize,
    /// Channel impulse-response length in frames.
    #[arg(long, default_value_t = 6)]
    rir_len: usize,
    /// Per-lag decay of the channel impulse response.
    #[arg(long, default_value_t = 0.6, allow_negative_numbers = true)]
    rir_decay: f64,
    /// Additive channel noise (standard deviation).
    #[arg(long, default_value_t = 0.3, allow_negative_numbers = true)]
    noise_std: f64,
    /// Lower bound of the per-utterance channel gain.
    #[arg(long, default_value_t = 0.7, allow_negative_numbers = true)]
    gain_min: f64,
    /// Upper bound of the per-utterance channel gain.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    gain_max: f64,
    /// Probability of staying in the current state per frame.
    #[arg(long, default_value_t = 0.9, allow_negative_numbers = true)]
    stay_prob: f64,
    #[arg(long, env = "JVAE_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Override the configured loss weights: lambda1,lambda2,lambda3,lambda-da,beta.
    #[arg(long)]
    weights: Option<String>,
    /// Override the configured objective (vae, da, jvae-approx, matched, am).
    #[arg(long)]
    objective: Option<String>,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Grid file: one "lambda2,lambda3,lambda-da,beta" row per line.
    /// Without it (and without --weights) the standard nine-row grid runs.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Run a single grid point with these weights.
    #[arg(long, conflicts_with = "grid")]
    weights: Option<String>,
    /// Separate corpus for evaluation (defaults to the training corpus).
    #[arg(long)]
    eval_corpus: Option<PathBuf>,
    /// Grid points trained in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Classify raw far-field features instead of enhanced ones.
    #[arg(long)]
    no_enhance: bool,
}

#[derive(Args)]
struct EnhanceArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    metrics: PathBuf,
    /// Output file: `.svg` renders directly, anything else gets a columnar
    /// data file plus a gnuplot script.
    #[arg(long)]
    out: PathBuf,
    /// Second metrics CSV drawn into the same plot ("~2" series suffix).
    #[arg(long)]
    overlay: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => train(args),
        Command::Grid(args) => grid(args),
        Command::Eval(args) => eval(args),
        Command::Enhance(args) => enhance(args),
        Command::PlotTraces(args) => plot_traces(args),
    }
}

fn gen_data(args: GenDataArgs) -> CliResult<()> {
    let cfg = SynthConfig {
        num_states: args.states,
        state_stay_probability: args.stay_prob,
        feature_dim: args.dim,
        rir_kernel_length: args.rir_len,
        rir_decay: args.rir_decay,
        noise_std: args.noise_std,
        channel_gain_range: (args.gain_min, args.gain_max),
        seed: args.seed,
    };
    let manifest = generate_corpus(&cfg, args.utts, (args.tmin, args.tmax), &args.out)?;
    println!("{}", manifest.path.display());
    Ok(())
}

fn load_run_config(
    config: &PathBuf,
    weights: Option<&str>,
    objective: Option<&str>,
) -> CliResult<TrainConfig> {
    let mut cfg = parse_config_file(config)?;
    if let Some(w) = weights {
        cfg.weights = parse_weights(w)?;
    }
    if let Some(o) = objective {
        cfg.objective = Objective::parse(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(args: TrainArgs) -> CliResult<()> {
    let cfg = load_run_config(&args.config, args.weights.as_deref(), args.objective.as_deref())?;
    let manifest = CorpusManifest::load(&args.corpus)?;
    let outcome = train_run(&cfg, &manifest, &args.out)?;
    let last = outcome.rows.last().expect("at least one step ran");
    println!(
        "trained {} for {} steps; final total {:.6}",
        cfg.objective.name(),
        last.step,
        last.terms.total
    );
    println!("metrics: {}", outcome.metrics_path.display());
    println!("checkpoint: {}", outcome.checkpoint_path.display());
    Ok(())
}

fn parse_grid_file(path: &PathBuf) -> CliResult<Vec<LossWeights>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(CliError::Usage(format!(
                "{}:{}: expected lambda2,lambda3,lambda-da,beta",
                path.display(),
                i + 1
            )));
        }
        let mut vals = [0.0f64; 4];
        for (k, p) in parts.iter().enumerate() {
            vals[k] = p
                .parse()
                .map_err(|_| {
                    CliError::Usage(format!("{}:{}: bad weight {p:?}", path.display(), i + 1))
                })?;
        }
        rows.push(LossWeights {
            lambda1: 1.0,
            lambda2: vals[0],
            lambda3: vals[1],
            lambda_da: vals[2],
            beta: vals[3],
        });
    }
    if rows.is_empty() {
        return Err(CliError::Usage(format!(
            "{}: grid file has no rows",
            path.display()
        )));
    }
    Ok(rows)
}

fn grid(args: GridArgs) -> CliResult<()> {
    let cfg = load_run_config(&args.config, None, None)?;
    let manifest = CorpusManifest::load(&args.corpus)?;
    let eval_manifest = args
        .eval_corpus
        .as_ref()
        .map(|p| CorpusManifest::load(p))
        .transpose()?;
    let grid_rows = match (&args.grid, &args.weights) {
        (Some(path), _) => parse_grid_file(path)?,
        (None, Some(w)) => vec![parse_weights(w)?],
        (None, None) => LossWeights::default_grid(),
    };
    let summary = grid_run(
        &cfg,
        &grid_rows,
        &manifest,
        eval_manifest.as_ref(),
        &args.out,
        args.jobs,
    )?;
    print!("{}", summary.csv());
    println!("summary: {}", summary.path.display());
    Ok(())
}

fn eval(args: EvalArgs) -> CliResult<()> {
    let cfg = load_run_config(&args.config, None, None)?;
    let mut model = Model::new(&cfg.model, cfg.objective.model_kind(), cfg.seed)?;
    load_checkpoint(&args.checkpoint, &mut model)?;
    let manifest = CorpusManifest::load(&args.corpus)?;
    let utterances = load_corpus(&manifest, &cfg.model)?;
    let report = evaluate(&model, &utterances, args.no_enhance)?;
    println!("frame-error-pct: {:.4}", report.frame_error_pct);
    println!(
        "mean-enhancement-gain: {:.6}",
        report.mean_enhancement_gain
    );
    Ok(())
}

fn enhance(args: EnhanceArgs) -> CliResult<()> {
    let cfg = load_run_config(&args.config, None, None)?;
    let mut model = Model::new(&cfg.model, cfg.objective.model_kind(), cfg.seed)?;
    load_checkpoint(&args.checkpoint, &mut model)?;
    let manifest = CorpusManifest::load(&args.corpus)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.out.display())))?;
    let mut written = 0usize;
    for i in 0..manifest.len() {
        let utt = manifest.load_utterance(i)?;
        let enhanced = model.enhance(&utt.far_field)?;
        let path = args.out.join(format!("{}.enh.fbt", utt.id));
        jvae_core::data::write_features(&path, &enhanced)?;
        written += 1;
    }
    println!("wrote {written} enhanced feature files to {}", args.out.display());
    Ok(())
}

fn plot_traces(args: PlotArgs) -> CliResult<()> {
    let mut series = load_metrics(&args.metrics)?;
    if let Some(overlay) = &args.overlay {
        for mut s in load_metrics(overlay)? {
            s.name = format!("{}~2", s.name);
            series.push(s);
        }
    }
    let title = args
        .metrics
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("loss traces")
        .to_string();
    let written = write_plot(&series, &args.out, &title)?;
    for path in written {
        println!("{}", path.display());
    }
    Ok(())
}
