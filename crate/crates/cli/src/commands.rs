use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mindrec::analytics::{
    bundle_json, categories, category_distribution, title_length_histogram, word_frequencies, write_categories_csv,
    write_histogram_csv, write_wordfreq_csv,
};
use mindrec::attn_model::{read_model, train, write_loss_trace, write_model, ModelParams, Scorer, TrainConfig};
use mindrec::glove::{build_cooccurrence, build_vocab, glove_train, write_cost_trace, Vocabulary, WordVectors};
use mindrec::mind_io::{
    compute_stats, parse_behaviors_bytes, parse_news_bytes, ranks_from_scores, split_user_data, write_behaviors,
    write_news, write_predictions, ImpressionLog, Parsed, UserSplit,
};
use mindrec::ranking_eval::{evaluate as evaluate_metrics, ImpressionResult};
use mindrec::retrieval::{
    recommend as recommend_news, render_recommendations, render_similar, similar_news, NewsVectors, Query,
};
use mindrec::synth::generate;
use mindrec::textprep::{
    clean_corpus, tokenized_from_tsv_line, tokenized_to_tsv_line, Preprocessor, Stopwords, TokenizedNews,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::config::{FileConfig, PrepareConfig, ScorerKind};
use crate::error::{config_error, degenerate, input_error};
use crate::run::Run;

pub const NEWS_TOKENS: &str = "news_tokens.tsv";
pub const BEHAVIORS: &str = "behaviors.tsv";
pub const USER_SPLITS: &str = "user_splits.tsv";
pub const MODEL_FILE: &str = "model.bin";
pub const MANIFEST: &str = "manifest.json";

pub struct Ctx {
    pub config: FileConfig,
    pub seed: Option<u64>,
    pub manifest: Option<PathBuf>,
}

impl Ctx {
    fn manifest_in(&self, dir: &Path) -> Option<PathBuf> {
        Some(self.manifest.clone().unwrap_or_else(|| dir.join(MANIFEST)))
    }

    fn manifest_beside(&self, file: Option<&Path>) -> Option<PathBuf> {
        self.manifest.clone().or_else(|| {
            file.map(|f| {
                let mut name = f.file_name().unwrap_or_default().to_os_string();
                name.push(".manifest.json");
                f.with_file_name(name)
            })
        })
    }
}

fn to_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn json_bytes(value: &impl serde::Serialize) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn check_parsed<T>(parsed: &Parsed<T>, path: &Path, tolerated: usize) -> Result<()> {
    if parsed.errors.len() > tolerated {
        let first = &parsed.errors[0];
        return Err(input_error(format!(
            "{}: {} malformed lines, first at {first}",
            path.display(),
            parsed.errors.len()
        )));
    }
    for e in &parsed.errors {
        log::warn!("{}: skipped {e}", path.display());
    }
    Ok(())
}

fn preprocessor(run: &mut Run, config: &PrepareConfig) -> Result<Preprocessor> {
    let stopwords = match &config.stopwords {
        Some(p) => Stopwords::parse(&run.read_string(p)?),
        None => Stopwords::default(),
    };
    Ok(Preprocessor { stopwords, stem: config.stem, lemmatize: false })
}

fn read_prepared_news(run: &mut Run, dir: &Path) -> Result<Vec<TokenizedNews>> {
    let path = dir.join(NEWS_TOKENS);
    let text = run.read_string(&path)?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            tokenized_from_tsv_line(line)
                .ok_or_else(|| input_error(format!("{} line {}: malformed tokenized news", path.display(), i + 1)))
        })
        .collect()
}

fn read_prepared_logs(run: &mut Run, dir: &Path) -> Result<Vec<ImpressionLog>> {
    let path = dir.join(BEHAVIORS);
    let parsed = parse_behaviors_bytes(&run.read(&path)?, true);
    check_parsed(&parsed, &path, 0)?;
    Ok(parsed.records)
}

fn user_split_line(s: &UserSplit) -> String {
    format!("{}\t{}\t{}", s.user_id, s.history_news.join(" "), s.recent_news.join(" "))
}

fn read_user_splits(run: &mut Run, dir: &Path) -> Result<Vec<UserSplit>> {
    let path = dir.join(USER_SPLITS);
    let text = run.read_string(&path)?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let c: Vec<&str> = line.split('\t').collect();
            if c.len() != 3 || c[0].is_empty() {
                return Err(input_error(format!("{} line {}: expected 3 columns", path.display(), i + 1)));
            }
            let ids = |s: &str| s.split_whitespace().map(str::to_string).collect();
            Ok(UserSplit { user_id: c[0].to_string(), history_news: ids(c[1]), recent_news: ids(c[2]) })
        })
        .collect()
}

/// Word vectors as `train-model` and inference see them: f32 on disk.
fn read_embeddings(run: &mut Run, dir: &Path) -> Result<WordVectors> {
    let vocab_path = dir.join("vocab.tsv");
    let vocab = Vocabulary::read_tsv(run.read(&vocab_path)?.as_slice())
        .with_context(|| format!("reading {}", vocab_path.display()))?;
    let bin_path = dir.join("embeddings.bin");
    let bytes = run.read(&bin_path)?;
    WordVectors::read_binary(bytes.as_slice(), vocab.tokens().to_vec())
        .with_context(|| format!("reading {}", bin_path.display()))
}

fn read_checkpoint(run: &mut Run, path: &Path, emb: &WordVectors) -> Result<(ModelParams, TrainConfig)> {
    let path = if path.is_dir() { path.join(MODEL_FILE) } else { path.to_path_buf() };
    let bytes = run.read(&path)?;
    let (params, config) = read_model(bytes.as_slice()).with_context(|| format!("reading {}", path.display()))?;
    if params.embed_dim() != emb.dim() {
        return Err(input_error(format!(
            "model expects {}-dimensional word vectors, embeddings have {}",
            params.embed_dim(),
            emb.dim()
        )));
    }
    Ok((params, config))
}

fn scorer<'a>(params: &'a ModelParams, emb: &'a WordVectors, config: &TrainConfig) -> Scorer<'a> {
    Scorer { params, embeddings: emb, max_title_len: config.max_title_len, max_history: config.max_history }
}

pub fn gen_fixture(ctx: Ctx, out: &Path) -> Result<()> {
    let fx = ctx.config.fixture.clone();
    let mut run = Run::new("gen-fixture", fx.seed, ctx.config.clone());
    run.phase("generate");
    let fixture = generate(&fx);
    run.phase("write");
    for (split, logs) in [("train", &fixture.train), ("test", &fixture.test)] {
        let dir = out.join(split);
        run.write(&dir.join("news.tsv"), &to_bytes(|b| write_news(&fixture.news, b))?)?;
        run.write(&dir.join("behaviors.tsv"), &to_bytes(|b| write_behaviors(logs, b))?)?;
    }
    run.finish(ctx.manifest_in(out))?;
    Ok(())
}

pub fn prepare(ctx: Ctx, data_dir: &Path, out: &Path) -> Result<()> {
    let cfg = ctx.config.prepare.clone();
    let mut run = Run::new("prepare", ctx.seed.unwrap_or(0), ctx.config.clone());
    let news_path = data_dir.join("news.tsv");
    let behaviors_path = data_dir.join("behaviors.tsv");
    run.require(&news_path)?;
    run.require(&behaviors_path)?;

    run.phase("parse");
    let pre = preprocessor(&mut run, &cfg)?;
    let news = parse_news_bytes(&run.read(&news_path)?, true);
    check_parsed(&news, &news_path, cfg.max_parse_errors)?;
    let logs = parse_behaviors_bytes(&run.read(&behaviors_path)?, true);
    check_parsed(&logs, &behaviors_path, cfg.max_parse_errors)?;

    run.phase("clean");
    let (kept, report) = clean_corpus(news.records);
    let processed: Vec<_> = kept.par_iter().map(|a| pre.preprocess_article(a)).collect();
    let mut tokenized = Vec::with_capacity(processed.len());
    let mut emptied = 0usize;
    for p in processed {
        match p {
            Ok(t) => tokenized.push(t),
            Err(e) => {
                log::debug!("{e}");
                emptied += 1;
            }
        }
    }
    if tokenized.is_empty() {
        return Err(degenerate("no news article survives cleaning"));
    }

    run.phase("split");
    let splits = split_user_data(&logs.records, cfg.recent_fraction);
    let stats = compute_stats(&kept, &logs.records);

    run.phase("write");
    let mut lines = String::new();
    for n in &tokenized {
        let _ = writeln!(lines, "{}", tokenized_to_tsv_line(n));
    }
    run.write(&out.join(NEWS_TOKENS), lines.as_bytes())?;
    run.write(&out.join(BEHAVIORS), &to_bytes(|b| write_behaviors(&logs.records, b))?)?;
    let mut lines = String::new();
    for s in &splits {
        let _ = writeln!(lines, "{}", user_split_line(s));
    }
    run.write(&out.join(USER_SPLITS), lines.as_bytes())?;
    let clean = json!({
        "clean": report,
        "removed_all_tokens": emptied,
        "tokenized": tokenized.len(),
        "parse_errors": {"news": news.errors.len(), "behaviors": logs.errors.len()},
    });
    run.write(&out.join("clean_report.json"), &json_bytes(&clean)?)?;
    run.write(&out.join("stats.json"), &json_bytes(&stats)?)?;
    run.finish(ctx.manifest_in(out))?;
    Ok(())
}

pub fn train_glove(ctx: Ctx, prepared: &Path, out: &Path) -> Result<()> {
    let cfg = ctx.config.glove.clone();
    let mut run = Run::new("train-glove", cfg.seed, ctx.config.clone());
    run.phase("load");
    let news = read_prepared_news(&mut run, prepared)?;
    let docs: Vec<Vec<&str>> = news.iter().map(|n| n.document().collect()).collect();

    run.phase("cooccurrence");
    let vocab = build_vocab(&docs, cfg.min_count)?;
    let x = build_cooccurrence(&docs, &vocab, cfg.window, true);
    log::info!("vocabulary {} tokens, {} nonzero co-occurrences", vocab.len(), x.nnz());

    run.phase("train");
    let trained = glove_train(&x, &cfg)?;
    let vectors = WordVectors::from_table(&trained.table, &vocab);

    run.phase("write");
    run.write(&out.join("vocab.tsv"), &to_bytes(|b| vocab.write_tsv(b))?)?;
    run.write(&out.join("embeddings.bin"), &to_bytes(|b| vectors.write_binary(b))?)?;
    run.write(&out.join("embeddings.txt"), &to_bytes(|b| vectors.write_text(b))?)?;
    run.write(&out.join("glove_trace.csv"), &to_bytes(|b| write_cost_trace(&trained.cost_trace, b))?)?;
    run.write(&out.join("glove_config.json"), &json_bytes(&cfg)?)?;
    run.finish(ctx.manifest_in(out))?;
    Ok(())
}

pub fn train_model(ctx: Ctx, prepared: &Path, glove: &Path, out: &Path) -> Result<()> {
    let cfg = ctx.config.model.clone();
    let mut run = Run::new("train-model", cfg.seed, ctx.config.clone());
    run.phase("load");
    let news = read_prepared_news(&mut run, prepared)?;
    let logs = read_prepared_logs(&mut run, prepared)?;
    let emb = read_embeddings(&mut run, glove)?;

    run.phase("train");
    let trained = train(&news, &logs, &emb, &cfg)?;
    log::info!("{:?}; loss {:?}", trained.report, trained.loss_trace);

    run.phase("write");
    let mut model = Vec::new();
    write_model(&trained.params, &cfg, &mut model)?;
    run.write(&out.join(MODEL_FILE), &model)?;
    run.write(&out.join("loss_trace.csv"), &to_bytes(|b| write_loss_trace(&trained.loss_trace, b))?)?;
    run.write(&out.join("train_report.json"), &json_bytes(&trained.report)?)?;
    run.finish(ctx.manifest_in(out))?;
    Ok(())
}

pub fn evaluate(ctx: Ctx, prepared: &Path, glove: Option<&Path>, model: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = ctx.config.evaluate.clone();
    let (glove, model) = match (cfg.scorer, glove, model) {
        (ScorerKind::Model, Some(g), Some(m)) => (Some(g), Some(m)),
        (ScorerKind::Model, _, _) => return Err(config_error("the model scorer needs --glove and --model")),
        _ => (None, None),
    };
    let mut run = Run::new("evaluate", ctx.seed.unwrap_or(cfg.seed), ctx.config.clone());
    run.phase("load");
    let logs = read_prepared_logs(&mut run, prepared)?;

    run.phase("score");
    let mut unscored = 0usize;
    let scores: Vec<Vec<f64>> = match cfg.scorer {
        ScorerKind::Oracle => logs.iter().map(|l| l.labels().into_iter().map(f64::from).collect()).collect(),
        ScorerKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            logs.iter().map(|l| l.candidates.iter().map(|_| rng.gen::<f64>()).collect()).collect()
        }
        ScorerKind::Model => {
            let (glove, model) = (glove.expect("checked"), model.expect("checked"));
            let news = read_prepared_news(&mut run, prepared)?;
            let emb = read_embeddings(&mut run, glove)?;
            let (params, train_cfg) = read_checkpoint(&mut run, model, &emb)?;
            let scorer = scorer(&params, &emb, &train_cfg);
            let vectors = NewsVectors::encode(&news, &scorer);
            let scored: Vec<(Vec<f64>, usize)> = logs
                .par_iter()
                .map(|log| {
                    let user = vectors.user_vector(&log.history, &scorer)?;
                    let mut missing = 0;
                    let s = log
                        .candidates
                        .iter()
                        .map(|c| match vectors.get(&c.news_id) {
                            Some(v) => user.iter().zip(v).map(|(a, b)| a * b).sum(),
                            None => {
                                missing += 1;
                                f64::NEG_INFINITY
                            }
                        })
                        .collect();
                    Ok((s, missing))
                })
                .collect::<Result<_>>()?;
            scored
                .into_iter()
                .map(|(s, m)| {
                    unscored += m;
                    s
                })
                .collect()
        }
    };
    if unscored > 0 {
        log::warn!("{unscored} candidates could not be encoded and rank last");
    }

    run.phase("metrics");
    let results: Vec<ImpressionResult> = logs
        .iter()
        .zip(&scores)
        .map(|(l, s)| ImpressionResult {
            impression_id: l.impression_id.clone(),
            labels: l.labels(),
            scores: s.clone(),
        })
        .collect();
    let report = evaluate_metrics(&results)?;
    let ranked: Vec<(String, Vec<usize>)> =
        logs.iter().zip(&scores).map(|(l, s)| (l.impression_id.clone(), ranks_from_scores(s))).collect();

    run.phase("write");
    let mut predictions = Vec::new();
    write_predictions(&ranked, &mut predictions)?;
    run.write(&out.join("prediction.txt"), &predictions)?;
    let mut doc = report.to_json();
    doc["scorer"] = json!(cfg.scorer);
    doc["unscored_candidates"] = json!(unscored);
    run.write(&out.join("metrics.json"), &json_bytes(&doc)?)?;
    run.finish(ctx.manifest_in(out))?;
    println!(
        "auc {:.4} mrr {:.4} ndcg@5 {:.4} ndcg@10 {:.4} ({} impressions, {} skipped)",
        report.auc, report.mrr, report.ndcg5, report.ndcg10, report.n_impressions, report.n_skipped
    );
    Ok(())
}

fn emit(run: &mut Run, out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => run.write(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn recommend(
    ctx: Ctx,
    prepared: &Path,
    glove: &Path,
    model: &Path,
    user: &str,
    as_json: bool,
    out: Option<&Path>,
) -> Result<()> {
    let top_n = ctx.config.retrieval.top_n;
    let mut run = Run::new("recommend", ctx.seed.unwrap_or(0), ctx.config.clone());
    run.phase("load");
    let news = read_prepared_news(&mut run, prepared)?;
    let splits = read_user_splits(&mut run, prepared)?;
    let emb = read_embeddings(&mut run, glove)?;
    let (params, train_cfg) = read_checkpoint(&mut run, model, &emb)?;
    let split = splits.iter().find(|s| s.user_id == user).ok_or_else(|| input_error(format!("unknown user {user}")))?;

    run.phase("recommend");
    let scorer = scorer(&params, &emb, &train_cfg);
    let vectors = NewsVectors::encode(&news, &scorer);
    let pool: Vec<String> = news.iter().map(|n| n.news_id.clone()).collect();
    let list = recommend_news(user, &split.history_news, &pool, &vectors, &scorer, top_n)?;

    run.phase("write");
    let text = if as_json { String::from_utf8(json_bytes(&list)?)? } else { render_recommendations(&list, &news) };
    emit(&mut run, out, &text)?;
    run.finish(ctx.manifest_beside(out))?;
    Ok(())
}

pub enum SimilarQuery {
    News(String),
    Headline(String),
}

pub fn similar(
    ctx: Ctx,
    prepared: &Path,
    glove: &Path,
    model: &Path,
    query: SimilarQuery,
    as_json: bool,
    out: Option<&Path>,
) -> Result<()> {
    let rc = ctx.config.retrieval.clone();
    let mut run = Run::new("similar", ctx.seed.unwrap_or(0), ctx.config.clone());
    run.phase("load");
    let pre = preprocessor(&mut run, &ctx.config.prepare)?;
    let news = read_prepared_news(&mut run, prepared)?;
    let emb = read_embeddings(&mut run, glove)?;
    let (params, train_cfg) = read_checkpoint(&mut run, model, &emb)?;

    run.phase("search");
    let scorer = scorer(&params, &emb, &train_cfg);
    let vectors = NewsVectors::encode(&news, &scorer);
    let result = match &query {
        SimilarQuery::News(id) => similar_news(Query::News(id), &news, &vectors, &scorer, rc.top_n, rc.metric)?,
        SimilarQuery::Headline(text) => {
            let tokens = pre.normalize(text);
            similar_news(Query::Headline { text, tokens: &tokens }, &news, &vectors, &scorer, rc.top_n, rc.metric)?
        }
    };

    run.phase("write");
    let text = if as_json { String::from_utf8(json_bytes(&result)?)? } else { render_similar(&result) };
    emit(&mut run, out, &text)?;
    run.finish(ctx.manifest_beside(out))?;
    Ok(())
}

fn file_safe(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

pub fn analytics(ctx: Ctx, prepared: &Path, out: &Path) -> Result<()> {
    let cfg = ctx.config.analytics.clone();
    let mut run = Run::new("analytics", ctx.seed.unwrap_or(0), ctx.config.clone());
    run.phase("load");
    let news = read_prepared_news(&mut run, prepared)?;

    run.phase("tables");
    let dist = category_distribution(&news)?;
    let tables =
        categories(&news).iter().map(|c| word_frequencies(&news, c, cfg.top_k)).collect::<Result<Vec<_>, _>>()?;
    let hist = title_length_histogram(&news, cfg.raw_titles)?;

    run.phase("write");
    run.write(&out.join("categories.csv"), &to_bytes(|b| write_categories_csv(&dist, b))?)?;
    let mut used: HashMap<String, usize> = HashMap::new();
    for t in &tables {
        let mut name = file_safe(&t.category);
        let n = used.entry(name.clone()).or_default();
        *n += 1;
        if *n > 1 {
            name = format!("{name}_{n}");
        }
        run.write(&out.join(format!("wordfreq_{name}.csv")), &to_bytes(|b| write_wordfreq_csv(t, b))?)?;
    }
    run.write(&out.join("title_hist.csv"), &to_bytes(|b| write_histogram_csv(&hist, b))?)?;
    run.write(&out.join("analytics.json"), &json_bytes(&bundle_json(&dist, &tables, &hist, cfg.raw_titles))?)?;
    run.finish(ctx.manifest_in(out))?;
    Ok(())
}

pub fn stats(ctx: Ctx, data_dir: &Path, out: Option<&Path>) -> Result<()> {
    let mut run = Run::new("stats", ctx.seed.unwrap_or(0), ctx.config.clone());
    let news_path = data_dir.join("news.tsv");
    let behaviors_path = data_dir.join("behaviors.tsv");
    run.require(&news_path)?;
    run.require(&behaviors_path)?;

    run.phase("parse");
    let news = parse_news_bytes(&run.read(&news_path)?, true);
    let logs = parse_behaviors_bytes(&run.read(&behaviors_path)?, true);
    if news.records.is_empty() {
        return Err(degenerate(format!("{} has no parsable article", news_path.display())));
    }

    run.phase("count");
    let stats = compute_stats(&news.records, &logs.records);
    let title_words: usize = news.records.iter().map(|a| a.title.split_whitespace().count()).sum();
    let doc = json!({
        "stats": stats,
        "title_length_mean": title_words as f64 / news.records.len() as f64,
        "parse_errors": {"news": news.errors.len(), "behaviors": logs.errors.len()},
    });

    run.phase("write");
    emit(&mut run, out, &String::from_utf8(json_bytes(&doc)?)?)?;
    run.finish(ctx.manifest_beside(out))?;
    Ok(())
}
