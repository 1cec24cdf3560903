use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use drqr::eval::{delta_histogram, evaluate_run, mean, paired_t_test, CorrelationReport, Metric};
use drqr::index::{read_corpus_tsv, InvertedIndex};
use drqr::mining::{
    mine_pairs, read_pairs, read_queries, split_pairs, write_pairs, Qrels, QueryPair,
};
use drqr::qpp::{predict, PredictorKind};
use drqr::ranking::{
    bo1_expand, mix_queries, read_run, retrieve, write_run, RankedList, RankingModel, WeightedQuery,
};
use drqr::rl::{train_drqr, write_rl_history, Reward, RewardConfig};
use drqr::seq2seq::{
    greedy_decode, prepare_examples, train_ml, write_ml_history, Checkpoint, ModelDims,
    ModelParameters, Vocabulary, BOS_TOKEN, EOS_TOKEN, PAD_TOKEN, UNK_TOKEN,
};
use drqr::text::{tokenize, PipelineConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::manifest::{default_path, Recorder};

pub fn require(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("{}: file not found", path.display());
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn recorder(
    command: &str,
    cfg: &ExperimentConfig,
    manifest: Option<PathBuf>,
    primary: &Path,
) -> Recorder {
    Recorder::new(
        command,
        cfg,
        manifest.unwrap_or_else(|| default_path(primary)),
    )
}

pub fn index_build(
    cfg: &ExperimentConfig,
    manifest: Option<PathBuf>,
    corpus: &Path,
    out: &Path,
) -> Result<()> {
    require(corpus)?;
    let pipeline = cfg.pipeline.build()?;
    let (docs, skipped) = read_corpus_tsv(corpus)?;
    for s in &skipped {
        eprintln!(
            "warning: {}:{}: skipped malformed line",
            corpus.display(),
            s.line
        );
    }
    let index = InvertedIndex::build(docs, &pipeline)?;
    index.save(out)?;
    let mut rec = recorder("index build", cfg, manifest, out);
    rec.input(corpus)?;
    rec.output(out)?;
    rec.summary(json!({
        "documents": index.num_docs(),
        "terms": index.stats().num_terms(),
        "tokens": index.stats().total_terms(),
        "skipped_lines": skipped.len(),
    }));
    rec.finish()?;
    eprintln!(
        "indexed {} documents, {} terms",
        index.num_docs(),
        index.stats().num_terms()
    );
    Ok(())
}

pub fn mine(
    cfg: &ExperimentConfig,
    manifest: Option<PathBuf>,
    qrels: &Path,
    queries: &Path,
    out_dir: &Path,
) -> Result<()> {
    require(qrels)?;
    require(queries)?;
    let judged = Qrels::read(qrels)?;
    let texts: HashMap<String, String> = read_queries(queries)?.into_iter().collect();
    let mined = mine_pairs(&judged, &texts);
    if mined.pairs.len() < 2 {
        bail!(
            "only {} pairs mined; need at least 2 to split",
            mined.pairs.len()
        );
    }
    for qid in mined.missing_qids.iter().take(10) {
        eprintln!("warning: qid {qid} judged but has no query text");
    }
    let (train, valid) = split_pairs(&mined.pairs, 1.0 - cfg.valid_fraction, cfg.seed)?;
    let all_path = out_dir.join("pairs.tsv");
    let train_path = out_dir.join("train.tsv");
    let valid_path = out_dir.join("valid.tsv");
    for (path, pairs) in [
        (&all_path, &mined.pairs),
        (&train_path, &train),
        (&valid_path, &valid),
    ] {
        let mut w = create(path)?;
        write_pairs(&mut w, pairs)?;
        w.flush()?;
    }
    let mut rec = recorder("mine pairs", cfg, manifest, &all_path);
    rec.input(qrels)?;
    rec.input(queries)?;
    for p in [&all_path, &train_path, &valid_path] {
        rec.output(p)?;
    }
    rec.summary(json!({
        "ordered_pairs": mined.pairs.len(),
        "unordered_pairs": mined.unordered_count(),
        "train": train.len(),
        "valid": valid.len(),
        "missing_qids": mined.missing_qids.len(),
    }));
    rec.finish()?;
    eprintln!(
        "{} unordered pairs ({} ordered): {} train, {} valid",
        mined.unordered_count(),
        mined.pairs.len(),
        train.len(),
        valid.len()
    );
    Ok(())
}

fn load_pairs(path: &Path) -> Result<Vec<QueryPair>> {
    require(path)?;
    let pairs = read_pairs(path)?;
    if pairs.is_empty() {
        bail!("{}: no query pairs", path.display());
    }
    Ok(pairs)
}

pub fn train_ml_cmd(
    cfg: &ExperimentConfig,
    manifest: Option<PathBuf>,
    train: &Path,
    valid: &Path,
    out: &Path,
) -> Result<()> {
    let train_pairs = load_pairs(train)?;
    let valid_pairs = load_pairs(valid)?;
    let vocab = Vocabulary::build(&train_pairs, cfg.model.min_frequency)?;
    let train_ex = prepare_examples(&vocab, &train_pairs);
    let valid_ex = prepare_examples(&vocab, &valid_pairs);
    if train_ex.is_empty() || valid_ex.is_empty() {
        bail!("no usable training or validation pairs after tokenization");
    }
    let dims = ModelDims {
        vocab_size: vocab.len(),
        emb_dim: cfg.model.emb_dim.unwrap_or(cfg.model.hidden),
        hidden: cfg.model.hidden,
    };
    let init = ModelParameters::init_uniform(dims, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let outcome = train_ml(init, &train_ex, &valid_ex, &cfg.ml)?;

    let meta = json!({ "stage": "ml", "model": cfg.model, "ml": cfg.ml, "best_epoch": outcome.best_epoch });
    Checkpoint::new(vocab, outcome.params, meta)?.save(out)?;
    let history = sibling(out, ".history.tsv");
    let mut w = create(&history)?;
    write_ml_history(&mut w, &outcome.history)?;
    w.flush()?;

    let mut rec = recorder("train ml", cfg, manifest, out);
    rec.input(train)?;
    rec.input(valid)?;
    rec.output(out)?;
    rec.output(&history)?;
    let best = outcome
        .history
        .iter()
        .find(|e| e.epoch == outcome.best_epoch);
    rec.summary(json!({
        "epochs": outcome.history.len(),
        "best_epoch": outcome.best_epoch,
        "best_valid_loss": best.map(|e| e.valid_loss),
        "stopped_early": outcome.stopped_early,
    }));
    rec.finish()?;
    eprintln!(
        "trained {} epochs, best epoch {} (valid loss {:.4})",
        outcome.history.len(),
        outcome.best_epoch,
        best.map_or(f64::NAN, |e| e.valid_loss)
    );
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    require(path)?;
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn load_index(path: &Path) -> Result<InvertedIndex> {
    require(path)?;
    InvertedIndex::load(path).with_context(|| format!("loading index {}", path.display()))
}

struct RlRun {
    checkpoint: Checkpoint,
    best_epoch: usize,
    initial_valid_reward: f64,
    best_valid_reward: f64,
    history: Vec<drqr::rl::RlEpoch>,
}

fn run_rl(
    cfg: &ExperimentConfig,
    ml: &Checkpoint,
    index: &InvertedIndex,
    train_pairs: &[QueryPair],
    valid_pairs: &[QueryPair],
    lambda: f64,
    predictor: PredictorKind,
) -> Result<RlRun> {
    let vocab = &ml.vocab;
    let train_ex = prepare_examples(vocab, train_pairs);
    let valid_ex = prepare_examples(vocab, valid_pairs);
    if train_ex.is_empty() || valid_ex.is_empty() {
        bail!("no usable training or validation pairs after tokenization");
    }
    let stats = index.stats();
    let sources = train_pairs.iter().map(|p| p.source_text.as_str());
    let reward_cfg = RewardConfig::calibrate(stats, sources, predictor, lambda)?;
    let reward = Reward {
        stats,
        config: reward_cfg,
    };
    let mut rl = cfg.rl;
    rl.max_len = cfg.model.max_decode_len;
    let outcome = train_drqr(ml.params.clone(), &train_ex, &valid_ex, vocab, &reward, &rl)?;
    let meta = json!({
        "stage": "rl",
        "model": cfg.model,
        "rl": rl,
        "reward": reward_cfg,
        "best_epoch": outcome.best_epoch,
    });
    Ok(RlRun {
        best_epoch: outcome.best_epoch,
        initial_valid_reward: outcome.initial_valid_reward,
        best_valid_reward: outcome.best_valid_reward(),
        checkpoint: Checkpoint::new(vocab.clone(), outcome.params, meta)?,
        history: outcome.history,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn train_rl_cmd(
    cfg: &ExperimentConfig,
    manifest: Option<PathBuf>,
    checkpoint: &Path,
    index: &Path,
    train: &Path,
    valid: &Path,
    out: &Path,
) -> Result<()> {
    let ml = load_checkpoint(checkpoint)?;
    let idx = load_index(index)?;
    let train_pairs = load_pairs(train)?;
    let valid_pairs = load_pairs(valid)?;
    let run = run_rl(
        cfg,
        &ml,
        &idx,
        &train_pairs,
        &valid_pairs,
        cfg.lambda,
        cfg.predictor,
    )?;
    run.checkpoint.save(out)?;
    let history = sibling(out, ".history.tsv");
    let mut w = create(&history)?;
    write_rl_history(&mut w, &run.history)?;
    w.flush()?;

    let mut rec = recorder("train rl", cfg, manifest, out);
    for p in [checkpoint, index, train, valid] {
        rec.input(p)?;
    }
    rec.output(out)?;
    rec.output(&history)?;
    rec.summary(json!({
        "epochs": run.history.len(),
        "best_epoch": run.best_epoch,
        "initial_valid_reward": run.initial_valid_reward,
        "best_valid_reward": run.best_valid_reward,
    }));
    rec.finish()?;
    eprintln!(
        "validation reward {:.4} -> {:.4} (best epoch {})",
        run.initial_valid_reward, run.best_valid_reward, run.best_epoch
    );
    Ok(())
}

/// Greedy reformulation of every query; special tokens are dropped.
fn reformulate_all(
    ck: &Checkpoint,
    queries: &[(String, String)],
    max_len: usize,
) -> Result<Vec<(String, String)>> {
    queries
        .iter()
        .map(|(qid, text)| {
            let tokens = tokenize(text);
            if tokens.is_empty() {
                return Ok((qid.clone(), String::new()));
            }
            let src = ck.vocab.encode_source(&tokens);
            let ids = greedy_decode(&ck.params, &src, max_len)?;
            let words: Vec<String> = ck
                .vocab
                .decode(&ids, &src)
                .into_iter()
                .filter(|w| ![PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN].contains(&w.as_str()))
                .collect();
            Ok((qid.clone(), words.join(" ")))
        })
        .collect()
}

fn write_queries(path: &Path, rows: &[(String, String)]) -> Result<()> {
    let mut w = create(path)?;
    for (qid, text) in rows {
        writeln!(w, "{qid}\t{text}")?;
    }
    w.flush()?;
    Ok(())
}

fn load_queries(path: &Path) -> Result<Vec<(String, String)>> {
    require(path)?;
    Ok(read_queries(path)?)
}

pub fn reformulate(
    cfg: &ExperimentConfig,
    manifest: Option<PathBuf>,
    checkpoint: &Path,
    queries: &Path,
    out: &Path,
) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let qs = load_queries(queries)?;
    let rows = reformulate_all(&ck, &qs, cfg.model.max_decode_len)?;
    write_queries(out, &rows)?;
    let mut rec = recorder("reformulate", cfg, manifest, out);
    rec.input(checkpoint)?;
    rec.input(queries)?;
    rec.output(out)?;
    rec.summary(
        json!({ "queries": rows.len(), "empty": rows.iter().filter(|r| r.1.is_empty()).count() }),
    );
    rec.finish()?;
    Ok(())
}

pub struct RetrievalPlan<'a> {
    pub model: RankingModel,
    pub qe: bool,
    pub theta: f64,
    pub reformulations: Option<&'a HashMap<String, String>>,
    pub tag: &'a str,
}

fn run_queries(
    cfg: &ExperimentConfig,
    pipeline: &PipelineConfig,
    index: &InvertedIndex,
    queries: &[(String, String)],
    plan: &RetrievalPlan<'_>,
) -> Result<Vec<RankedList>> {
    let depth = cfg.retrieval.depth;
    queries
        .iter()
        .map(|(qid, text)| {
            let mut q = WeightedQuery::from_text(qid.clone(), text, pipeline);
            if let Some(r) = plan.reformulations {
                let qr = WeightedQuery::from_text(
                    qid.clone(),
                    r.get(qid).map_or("", String::as_str),
                    pipeline,
                );
                q = mix_queries(&q, &qr, plan.theta)?;
            }
            if plan.qe {
                let first = retrieve(plan.model, index, &q, depth, plan.tag);
                if !first.is_empty() {
                    q = bo1_expand(
                        index,
                        &q,
                        &first,
                        cfg.retrieval.fb_docs,
                        cfg.retrieval.fb_terms,
                    )?;
                }
            }
            Ok(retrieve(plan.model, index, &q, depth, plan.tag))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn retrieve_cmd(
    cfg: &ExperimentConfig,
    manifest: Option<PathBuf>,
    index: &Path,
    queries: &Path,
    reformulations: Option<&Path>,
    theta: Option<f64>,
    model: Option<&str>,
    qe: bool,
    tag: &str,
    out: &Path,
) -> Result<()> {
    if theta.is_some() && reformulations.is_none() {
        bail!("--theta requires --reformulations");
    }
    let theta = theta.unwrap_or(cfg.theta);
    if !(theta.is_finite() && theta >= 0.0) {
        bail!("--theta must be >= 0, got {theta}");
    }
    let model_name = model.unwrap_or(&cfg.retrieval.model);
    let ranking = cfg.retrieval.ranking_model(model_name)?;
    let idx = load_index(index)?;
    let qs = load_queries(queries)?;
    let reform: Option<HashMap<String, String>> = match reformulations {
        Some(p) => Some(load_queries(p)?.into_iter().collect()),
        None => None,
    };
    let pipeline = cfg.pipeline.build()?;
    let plan = RetrievalPlan {
        model: ranking,
        qe,
        theta,
        reformulations: reform.as_ref(),
        tag,
    };
    let lists = run_queries(cfg, &pipeline, &idx, &qs, &plan)?;
    let mut w = create(out)?;
    write_run(&mut w, &lists)?;
    w.flush()?;

    let mut rec = recorder("retrieve", cfg, manifest, out);
    rec.arg("model", model_name.to_ascii_lowercase());
    rec.arg("qe", qe);
    rec.arg("theta", reformulations.map(|_| theta));
    rec.arg("tag", tag);
    rec.input(index)?;
    rec.input(queries)?;
    if let Some(p) = reformulations {
        rec.input(p)?;
    }
    rec.output(out)?;
    rec.summary(json!({
        "queries": lists.len(),
        "empty_rankings": lists.iter().filter(|l| l.is_empty()).count(),
    }));
    rec.finish()?;
    Ok(())
}

pub fn parse_metrics(list: &str) -> Result<Vec<Metric>> {
    let metrics: Vec<Metric> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(Metric::parse)
        .collect::<drqr::Result<_>>()?;
    if metrics.is_empty() {
        bail!("no metrics given");
    }
    Ok(metrics)
}

/// Per-query values for judged queries only.
fn judged_values(
    run: &BTreeMap<String, RankedList>,
    qrels: &Qrels,
    metric: Metric,
) -> BTreeMap<String, f64> {
    evaluate_run(run, qrels, metric)
        .into_iter()
        .filter(|(qid, _)| qrels.for_query(qid).is_some())
        .map(|(qid, v)| (qid, v.value))
        .collect()
}

pub fn evaluate(
    cfg: &ExperimentConfig,
    manifest: Option<PathBuf>,
    run: &Path,
    qrels: &Path,
    metrics: &str,
    out: &Path,
) -> Result<()> {
    let metrics = parse_metrics(metrics)?;
    require(run)?;
    require(qrels)?;
    let lists = read_run(run)?;
    let judged = Qrels::read(qrels)?;
    let mut w = create(out)?;
    let mut summary = serde_json::Map::new();
    for m in &metrics {
        let values = judged_values(&lists, &judged, *m);
        for (qid, v) in &values {
            writeln!(w, "{}\t{qid}\t{v:.6}", m.name())?;
        }
        let avg = mean(values.values().copied());
        writeln!(w, "{}\tall\t{avg:.6}", m.name())?;
        summary.insert(
            m.name().into(),
            json!({ "mean": avg, "queries": values.len() }),
        );
        eprintln!("{}\t{avg:.4}\t({} queries)", m.name(), values.len());
    }
    w.flush()?;
    let mut rec = recorder("evaluate", cfg, manifest, out);
    rec.arg(
        "metrics",
        metrics.iter().map(|m| m.name()).collect::<Vec<_>>(),
    );
    rec.input(run)?;
    rec.input(qrels)?;
    rec.output(out)?;
    rec.summary(summary.into());
    rec.finish()?;
    Ok(())
}

/// Per-query values of `metric` from an `evaluate` output file.
pub fn read_eval(path: &Path, metric: Metric) -> Result<BTreeMap<String, f64>> {
    require(path)?;
    let text = fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let cols: Vec<&str> = line.split('\t').collect();
        let [name, qid, value] = cols[..] else {
            bail!(
                "{}:{}: expected `metric<TAB>qid<TAB>value`",
                path.display(),
                i + 1
            );
        };
        if Metric::parse(name)? != metric || qid == "all" {
            continue;
        }
        let v: f64 = value
            .parse()
            .with_context(|| format!("{}:{}: bad value `{value}`", path.display(), i + 1))?;
        out.insert(qid.to_owned(), v);
    }
    Ok(out)
}

pub fn parse_predictors(list: &str) -> Result<Vec<PredictorKind>> {
    if list.eq_ignore_ascii_case("all") {
        return Ok(PredictorKind::ALL.to_vec());
    }
    Ok(list
        .split(',')
        .map(|s| s.trim().parse::<PredictorKind>())
        .collect::<drqr::Result<_>>()?)
}

#[allow(clippy::too_many_arguments)]
pub fn qpp_correlate(
    cfg: &ExperimentConfig,
    manifest: Option<PathBuf>,
    index: &Path,
    queries: &Path,
    qrels: &Path,
    run: &Path,
    predictors: &str,
    out: &Path,
) -> Result<()> {
    let kinds = parse_predictors(predictors)?;
    let idx = load_index(index)?;
    let qs = load_queries(queries)?;
    require(qrels)?;
    require(run)?;
    let judged = Qrels::read(qrels)?;
    let lists = read_run(run)?;
    let pipeline = cfg.pipeline.build()?;

    let mut rows: Vec<(Vec<String>, &RankedList)> = Vec::new();
    for (qid, text) in &qs {
        let (Some(list), Some(_)) = (lists.get(qid), judged.for_query(qid)) else {
            continue;
        };
        let terms: Vec<String> = pipeline
            .process(text)
            .into_iter()
            .map(|t| t.into_string())
            .collect();
        if !terms.is_empty() {
            rows.push((terms, list));
        }
    }
    if rows.len() < 3 {
        bail!(
            "only {} queries have text, a ranking and judgments; need at least 3",
            rows.len()
        );
    }
    let mut reports = Vec::new();
    for metric in [Metric::Map, Metric::NdcgAt10] {
        let eff: Vec<f64> = rows
            .iter()
            .map(|(_, l)| metric.per_query(l, &judged).value)
            .collect();
        for &kind in &kinds {
            let pred: Vec<f64> = rows
                .iter()
                .map(|(q, _)| predict(idx.stats(), q, kind).map(|s| s.value))
                .collect::<drqr::Result<_>>()?;
            reports.push(CorrelationReport::compute(
                kind,
                metric.name(),
                &pred,
                &eff,
                cfg.permutations,
                cfg.seed,
            )?);
        }
    }
    let mut w = create(out)?;
    serde_json::to_writer_pretty(&mut w, &reports)?;
    writeln!(w)?;
    w.flush()?;
    eprintln!("predictor\tmetric\trho\ttau\tp(rho)\tp(tau)");
    for r in &reports {
        eprintln!(
            "{}\t{}\t{:.3}\t{:.3}\t{:.4}\t{:.4}",
            r.predictor,
            r.metric,
            r.spearman_rho,
            r.kendall_tau,
            r.p_value_spearman,
            r.p_value_kendall
        );
    }
    let mut rec = recorder("qpp correlate", cfg, manifest, out);
    rec.arg(
        "predictors",
        kinds.iter().map(|k| k.name()).collect::<Vec<_>>(),
    );
    for p in [index, queries, qrels, run] {
        rec.input(p)?;
    }
    rec.output(out)?;
    rec.summary(json!({ "queries": rows.len() }));
    rec.finish()?;
    Ok(())
}

pub fn parse_grid(list: &str) -> Result<Vec<f64>> {
    list.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .with_context(|| format!("bad grid value `{s}`"))
        })
        .collect()
}

pub struct SweepInputs<'a> {
    pub index: &'a Path,
    pub checkpoint: &'a Path,
    pub train: &'a Path,
    pub valid: &'a Path,
    pub queries: &'a Path,
    pub qrels: &'a Path,
    pub out: &'a Path,
}

pub fn sweep(
    cfg: &ExperimentConfig,
    manifest: Option<PathBuf>,
    inputs: SweepInputs<'_>,
) -> Result<()> {
    if cfg.lambda_grid.is_empty() || cfg.theta_grid.is_empty() {
        bail!("empty sweep grid");
    }
    let ml = load_checkpoint(inputs.checkpoint)?;
    let idx = load_index(inputs.index)?;
    let train_pairs = load_pairs(inputs.train)?;
    let valid_pairs = load_pairs(inputs.valid)?;
    let mut qs = load_queries(inputs.queries)?;
    qs.truncate(cfg.sweep_queries);
    require(inputs.qrels)?;
    let judged = Qrels::read(inputs.qrels)?;
    let pipeline = cfg.pipeline.build()?;
    let ranking = cfg.retrieval.ranking_model(&cfg.retrieval.model)?;

    let mut w = create(inputs.out)?;
    writeln!(w, "lambda\ttheta\tndcg@10")?;
    let mut cells = Vec::new();
    for &lambda in &cfg.lambda_grid {
        let rl = run_rl(
            cfg,
            &ml,
            &idx,
            &train_pairs,
            &valid_pairs,
            lambda,
            cfg.predictor,
        )?;
        let reform: HashMap<String, String> =
            reformulate_all(&rl.checkpoint, &qs, cfg.model.max_decode_len)?
                .into_iter()
                .collect();
        for &theta in &cfg.theta_grid {
            let plan = RetrievalPlan {
                model: ranking,
                qe: false,
                theta,
                reformulations: Some(&reform),
                tag: "sweep",
            };
            let lists: BTreeMap<String, RankedList> =
                run_queries(cfg, &pipeline, &idx, &qs, &plan)?
                    .into_iter()
                    .map(|l| (l.qid.clone(), l))
                    .collect();
            let ndcg = mean(judged_values(&lists, &judged, Metric::NdcgAt10).into_values());
            writeln!(w, "{lambda}\t{theta}\t{ndcg}")?;
            eprintln!("lambda {lambda}\ttheta {theta}\tndcg@10 {ndcg:.4}");
            cells.push((lambda, theta, ndcg));
        }
    }
    w.flush()?;
    // First cell wins ties, so the smallest lambda then theta is preferred.
    let best = cells
        .iter()
        .copied()
        .fold(None, |acc: Option<(f64, f64, f64)>, c| match acc {
            Some(a) if a.2 >= c.2 => Some(a),
            _ => Some(c),
        })
        .expect("non-empty grid");
    eprintln!(
        "best: lambda {} theta {} ndcg@10 {:.4}",
        best.0, best.1, best.2
    );

    let mut rec = recorder("sweep", cfg, manifest, inputs.out);
    for p in [
        inputs.index,
        inputs.checkpoint,
        inputs.train,
        inputs.valid,
        inputs.queries,
        inputs.qrels,
    ] {
        rec.input(p)?;
    }
    rec.output(inputs.out)?;
    rec.summary(json!({
        "cycles": cells.len(),
        "queries": qs.len(),
        "best": { "lambda": best.0, "theta": best.1, "ndcg@10": best.2 },
    }));
    rec.finish()?;
    Ok(())
}

pub fn histogram(
    cfg: &ExperimentConfig,
    manifest: Option<PathBuf>,
    baseline: &Path,
    treatment: &Path,
    metric: &str,
    epsilon: f64,
    out: &Path,
) -> Result<()> {
    let metric = Metric::parse(metric)?;
    let base = read_eval(baseline, metric)?;
    let treat = read_eval(treatment, metric)?;
    let hist = delta_histogram(&base, &treat, epsilon)?;
    let a: Vec<f64> = base.values().copied().collect();
    let b: Vec<f64> = base.keys().map(|q| treat[q]).collect();
    let t = paired_t_test(&b, &a).ok();
    let report = json!({
        "metric": metric.name(),
        "epsilon": epsilon,
        "improved": hist.improved,
        "degraded": hist.degraded,
        "unchanged": hist.unchanged,
        "t": t.as_ref().map(|t| t.t),
        "p_value": t.as_ref().map(|t| t.p_value),
    });
    let mut w = create(out)?;
    serde_json::to_writer_pretty(&mut w, &report)?;
    writeln!(w)?;
    w.flush()?;
    eprintln!(
        "improved {}\tdegraded {}\tunchanged {}",
        hist.improved, hist.degraded, hist.unchanged
    );
    let mut rec = recorder("report histogram", cfg, manifest, out);
    rec.arg("metric", metric.name());
    rec.arg("epsilon", epsilon);
    rec.input(baseline)?;
    rec.input(treatment)?;
    rec.output(out)?;
    rec.summary(report);
    rec.finish()?;
    Ok(())
}
