mod commands;
mod config;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use mindrec::retrieval::Metric;

use crate::config::{FileConfig, ScorerKind};
use crate::error::config_error;

/// News recommendation over MIND-format data: preprocessing, GloVe word
/// vectors, an attention news/user encoder, ranking metrics and retrieval.
///
/// Exit codes: 0 ok, 2 configuration, 3 input or parse error (including a
/// missing file), 4 numeric divergence, 5 degenerate data.
#[derive(Debug, Parser)]
#[command(name = "mindrec", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Seed for every seeded module; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads. Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON config with optional sections prepare, glove, model, evaluate,
    /// retrieval, analytics, fixture. Flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Where to write the run manifest. Defaults to `manifest.json` in the
    /// output directory, `<out>.manifest.json` next to an output file, or
    /// stderr.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// More logging; repeat for debug output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic MIND-format dataset with planted category preferences.
    GenFixture(GenFixtureArgs),
    /// Parse, clean and tokenize one split (news.tsv + behaviors.tsv).
    Prepare(PrepareArgs),
    /// Train GloVe word vectors on a prepared corpus.
    TrainGlove(TrainGloveArgs),
    /// Train the attention news/user model on a prepared split.
    TrainModel(TrainModelArgs),
    /// Score a prepared split, write prediction.txt and metrics.json.
    Evaluate(EvaluateArgs),
    /// Top-N news for one user of a prepared split.
    Recommend(RecommendArgs),
    /// Nearest news to an article or a free-text headline.
    Similar(SimilarArgs),
    /// Category, word-frequency and title-length tables.
    Analytics(AnalyticsArgs),
    /// Dataset counts of a raw split.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
struct GenFixtureArgs {
    /// Output directory; gets train/ and test/.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    news: Option<usize>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    impressions_per_user: Option<usize>,
}

#[derive(Debug, Args)]
struct PrepareArgs {
    /// Directory with news.tsv and behaviors.tsv.
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    recent_fraction: Option<f64>,
    /// Keep tokens unstemmed.
    #[arg(long)]
    no_stem: bool,
    /// Stopword lexicon, one word per line.
    #[arg(long, env = "MINDREC_STOPWORDS")]
    stopwords: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainGloveArgs {
    /// Output directory of `prepare`.
    #[arg(long)]
    prepared: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    min_count: Option<u64>,
    #[arg(long)]
    x_max: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainModelArgs {
    #[arg(long)]
    prepared: PathBuf,
    /// Output directory of `train-glove`.
    #[arg(long)]
    glove: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    d_head: Option<usize>,
    #[arg(long)]
    d_attn: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    prepared: PathBuf,
    /// Needed by the model scorer.
    #[arg(long)]
    glove: Option<PathBuf>,
    /// `model.bin` or the directory holding it; needed by the model scorer.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    scorer: Option<ScorerKind>,
}

#[derive(Debug, Args)]
struct ModelInputs {
    #[arg(long)]
    prepared: PathBuf,
    #[arg(long)]
    glove: PathBuf,
    #[arg(long)]
    model: PathBuf,
}

#[derive(Debug, Args)]
struct RecommendArgs {
    #[command(flatten)]
    inputs: ModelInputs,
    #[arg(long)]
    user: String,
    #[arg(long)]
    top_n: Option<usize>,
    /// JSON instead of the text listing.
    #[arg(long)]
    json: bool,
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("query").required(true).args(["news_id", "headline"])))]
struct SimilarArgs {
    #[command(flatten)]
    inputs: ModelInputs,
    #[arg(long)]
    news_id: Option<String>,
    #[arg(long)]
    headline: Option<String>,
    #[arg(long)]
    top_n: Option<usize>,
    #[arg(long)]
    metric: Option<Metric>,
    #[arg(long)]
    json: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stopword lexicon used to normalize a headline query.
    #[arg(long, env = "MINDREC_STOPWORDS")]
    stopwords: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyticsArgs {
    #[arg(long)]
    prepared: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    top_k: Option<usize>,
    /// Title-length histogram over raw title words.
    #[arg(long)]
    raw_titles: bool,
}

#[derive(Debug, Args)]
struct StatsArgs {
    /// Directory with news.tsv and behaviors.tsv.
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn set_opt<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Config file plus flag overrides, validated.
fn resolve_config(cli: &Cli) -> Result<FileConfig> {
    let mut c = FileConfig::load(cli.common.config.as_deref())?;
    if let Some(seed) = cli.common.seed {
        c.set_seed(seed);
    }
    match &cli.command {
        Command::GenFixture(a) => {
            set_opt(&mut c.fixture.news, a.news);
            set_opt(&mut c.fixture.users, a.users);
            set_opt(&mut c.fixture.impressions_per_user, a.impressions_per_user);
        }
        Command::Prepare(a) => {
            set_opt(&mut c.prepare.recent_fraction, a.recent_fraction);
            if a.no_stem {
                c.prepare.stem = false;
            }
            if a.stopwords.is_some() {
                c.prepare.stopwords = a.stopwords.clone();
            }
        }
        Command::TrainGlove(a) => {
            set_opt(&mut c.glove.dim, a.dim);
            set_opt(&mut c.glove.window, a.window);
            set_opt(&mut c.glove.epochs, a.epochs);
            set_opt(&mut c.glove.learning_rate, a.learning_rate);
            set_opt(&mut c.glove.min_count, a.min_count);
            set_opt(&mut c.glove.x_max, a.x_max);
        }
        Command::TrainModel(a) => {
            set_opt(&mut c.model.epochs, a.epochs);
            set_opt(&mut c.model.learning_rate, a.learning_rate);
            set_opt(&mut c.model.heads, a.heads);
            set_opt(&mut c.model.d_head, a.d_head);
            set_opt(&mut c.model.d_attn, a.d_attn);
            set_opt(&mut c.model.negatives, a.negatives);
            set_opt(&mut c.model.batch_size, a.batch_size);
        }
        Command::Evaluate(a) => set_opt(&mut c.evaluate.scorer, a.scorer),
        Command::Recommend(a) => set_opt(&mut c.retrieval.top_n, a.top_n),
        Command::Similar(a) => {
            set_opt(&mut c.retrieval.top_n, a.top_n);
            set_opt(&mut c.retrieval.metric, a.metric);
            if a.stopwords.is_some() {
                c.prepare.stopwords = a.stopwords.clone();
            }
        }
        Command::Analytics(a) => {
            set_opt(&mut c.analytics.top_k, a.top_k);
            if a.raw_titles {
                c.analytics.raw_titles = true;
            }
        }
        Command::Stats(_) => {}
    }
    c.validate()?;
    Ok(c)
}

fn run(cli: Cli) -> Result<()> {
    let config = resolve_config(&cli)?;
    let threads = match cli.common.threads {
        Some(0) => return Err(config_error("--threads must be >= 1")),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| config_error(format!("thread pool: {e}")))?;
    let ctx = commands::Ctx { config, seed: cli.common.seed, manifest: cli.common.manifest };
    match cli.command {
        Command::GenFixture(a) => commands::gen_fixture(ctx, &a.out),
        Command::Prepare(a) => commands::prepare(ctx, &a.data_dir, &a.out),
        Command::TrainGlove(a) => commands::train_glove(ctx, &a.prepared, &a.out),
        Command::TrainModel(a) => commands::train_model(ctx, &a.prepared, &a.glove, &a.out),
        Command::Evaluate(a) => commands::evaluate(ctx, &a.prepared, a.glove.as_deref(), a.model.as_deref(), &a.out),
        Command::Recommend(a) => {
            let i = a.inputs;
            commands::recommend(ctx, &i.prepared, &i.glove, &i.model, &a.user, a.json, a.out.as_deref())
        }
        Command::Similar(a) => {
            let i = a.inputs;
            let query = match (a.news_id, a.headline) {
                (Some(id), _) => commands::SimilarQuery::News(id),
                (None, Some(h)) => commands::SimilarQuery::Headline(h),
                (None, None) => unreachable!("clap requires one of them"),
            };
            commands::similar(ctx, &i.prepared, &i.glove, &i.model, query, a.json, a.out.as_deref())
        }
        Command::Analytics(a) => commands::analytics(ctx, &a.prepared, &a.out),
        Command::Stats(a) => commands::stats(ctx, &a.data_dir, a.out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(error::exit_code(&e) as u8)
        }
    }
}
