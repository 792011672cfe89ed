use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cof_core::encoder::{EncoderConfig, EncoderWeights, Factor, Model};
use cof_core::evaluation::{
    citation_probe_tasks, evaluate, mean_rank_probe, semantic_probe_tasks, topic_probe_tasks,
    z_test, EmbeddingProbeScorer, MetricReport, ProbeKind,
};
use cof_core::io::{
    load_corpus, load_judgments, load_reviewers, load_search_log, read_rankings, save_corpus,
    save_jsonl, write_loss_history, write_metric_report, write_probe_report, write_rankings,
    CorpusRecord, EmbeddingStore, RunConfig,
};
use cof_core::matching::{
    build_profiles, profile_union, rank_reviewers, rank_reviewers_tpms, FactorEmbeddings,
    MatchEmbeddings, RankedReviewer, TfIdf, Variant,
};
use cof_core::pretraining::{build_datasets, generate_synthetic_corpus, train, vocabulary_texts};
use cof_core::tokenizer::{build_vocab, Vocabulary};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Cli, Command, UsageError};

pub fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref(), &cli.set)?;
    match cli.command {
        Command::BuildCorpus { out } => build_corpus(&cfg, &out),
        Command::Train { history } => train_model(&cfg, history),
        Command::Embed { factor, input, out } => embed(&cfg, &factor, input, &out),
        Command::Match {
            variant,
            out,
            agnostic_checkpoint,
        } => {
            let variant = match variant {
                Some(v) => v.parse().map_err(|e| UsageError(format!("--variant: {e}")))?,
                None => cfg.chain.variant,
            };
            let groups = rank_all(&cfg, &[variant], agnostic_checkpoint.as_deref())?;
            ensure_parent(&out)?;
            write_rankings(&out, &groups)?;
            println!("{} rankings ({variant}) written to {}", groups.len(), out.display());
            Ok(())
        }
        Command::Ablate {
            out,
            agnostic_checkpoint,
        } => {
            let groups = rank_all(&cfg, &Variant::ABLATIONS, agnostic_checkpoint.as_deref())?;
            ensure_parent(&out)?;
            write_rankings(&out, &groups)?;
            let variants: BTreeSet<&str> = groups.iter().map(|g| g.1.as_str()).collect();
            println!(
                "{} rankings over {} variants written to {}",
                groups.len(),
                variants.len(),
                out.display()
            );
            Ok(())
        }
        Command::Eval {
            rankings,
            variant,
            out,
        } => eval(&cfg, &rankings, variant.as_deref(), out.as_deref()),
        Command::Probe { kind, out } => probe(&cfg, &kind, out.as_deref()),
    }
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path).map_err(|e| UsageError(e.to_string()))?;
    for s in overrides {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| UsageError(format!("--set expects KEY=VALUE, got {s:?}")))?;
        cfg.set(k.trim(), v.trim())
            .map_err(|e| UsageError(format!("--set {s}: {e}")))?;
    }
    Ok(cfg)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn build_corpus(cfg: &RunConfig, out: &Path) -> Result<()> {
    let corpus = generate_synthetic_corpus(&cfg.corpus)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    save_corpus(out.join("papers.jsonl"), &corpus.papers)?;
    save_corpus(out.join("submissions.jsonl"), &corpus.submissions)?;
    save_jsonl(out.join("reviewers.jsonl"), &corpus.reviewers)?;
    save_jsonl(out.join("judgments.jsonl"), &corpus.judgments)?;
    save_jsonl(out.join("search_log.jsonl"), &corpus.search_log)?;
    println!(
        "{} papers, {} submissions, {} reviewers, {} judgments, {} queries written to {}",
        corpus.papers.len(),
        corpus.submissions.len(),
        corpus.reviewers.len(),
        corpus.judgments.len(),
        corpus.search_log.len(),
        out.display()
    );
    Ok(())
}

fn field_names<'a>(records: impl IntoIterator<Item = &'a CorpusRecord>) -> Vec<String> {
    let names: BTreeSet<&str> = records
        .into_iter()
        .flat_map(|r| r.fields.iter().map(|f| f.name.as_str()))
        .collect();
    names.into_iter().map(str::to_string).collect()
}

fn train_model(cfg: &RunConfig, history: Option<PathBuf>) -> Result<()> {
    let papers = load_corpus(&cfg.paths.corpus)?;
    let log = load_search_log(&cfg.paths.search_log)?;
    let texts = vocabulary_texts(&papers, &log, &field_names(&papers));
    let vocab = build_vocab(texts.iter().map(String::as_str), cfg.vocab_min_freq, cfg.vocab_max_size)?;
    let encoder = EncoderConfig {
        vocab_size: vocab.len(),
        ..cfg.encoder.clone()
    };
    let model = Model::new(EncoderWeights::<f32>::init(encoder, cfg.seed)?, vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let datasets = build_datasets(
        &papers,
        &log,
        cfg.topic_positives_per_paper,
        cfg.train.hard_negatives,
        &mut rng,
    );
    for (f, samples) in &datasets {
        log::info!("{f}: {} samples", samples.len());
    }
    let outcome = train(&cfg.train, model, &datasets)?;
    ensure_parent(&cfg.paths.checkpoint)?;
    ensure_parent(&cfg.paths.vocab)?;
    outcome.model.weights.save(&cfg.paths.checkpoint)?;
    outcome.model.vocab.save(&cfg.paths.vocab)?;
    let history = history.unwrap_or_else(|| cfg.paths.checkpoint.with_file_name("loss.csv"));
    ensure_parent(&history)?;
    write_loss_history(&history, &outcome.history)?;
    println!("{} steps; final epoch:", outcome.steps);
    let last = outcome.history.last().map_or(0, |r| r.epoch);
    for r in outcome.history.iter().filter(|r| r.epoch == last) {
        println!("  {:<10} {:.4}", r.factor.as_str(), r.mean_loss);
    }
    println!(
        "weights {}, vocabulary {}, loss history {}",
        cfg.paths.checkpoint.display(),
        cfg.paths.vocab.display(),
        history.display()
    );
    Ok(())
}

fn load_model(cfg: &RunConfig, checkpoint: &Path) -> Result<Model<f32>> {
    let vocab = Vocabulary::load(&cfg.paths.vocab)?;
    let weights = EncoderWeights::<f32>::load(checkpoint)?;
    Model::new(weights, vocab).with_context(|| {
        format!(
            "{} does not match {}",
            checkpoint.display(),
            cfg.paths.vocab.display()
        )
    })
}

fn embed(cfg: &RunConfig, factor: &str, input: Option<PathBuf>, out: &Path) -> Result<()> {
    let factor: Option<Factor> = match factor {
        "none" => None,
        f => Some(
            f.parse()
                .ok()
                .filter(|f| Factor::MATCHING.contains(f))
                .ok_or_else(|| {
                    UsageError(format!(
                        "--factor: unknown factor {f:?} (semantic, topic, citation, none)"
                    ))
                })?,
        ),
    };
    let input = input.unwrap_or_else(|| cfg.paths.corpus.clone());
    let records = load_corpus(&input)?;
    let model = load_model(cfg, &cfg.paths.checkpoint)?;
    let mut embedder = match factor {
        Some(_) => model.embedder(),
        None => model.uninstructed_embedder(),
    };
    let mut store = EmbeddingStore::new(model.weights.config.hidden_dim);
    for r in &records {
        let v = embedder.embed(&r.text(), factor.unwrap_or(Factor::Semantic))?;
        store.push(r.id.clone(), v)?;
    }
    ensure_parent(out)?;
    store.save(out)?;
    println!("{} embeddings written to {}", store.len(), out.display());
    Ok(())
}

type Rankings = Vec<(String, String, Vec<RankedReviewer>)>;

/// Ranks reviewers for every submission under each variant, grouped by
/// submission then variant.
fn rank_all(cfg: &RunConfig, variants: &[Variant], agnostic_checkpoint: Option<&Path>) -> Result<Rankings> {
    let papers = load_corpus(&cfg.paths.corpus)?;
    let submissions = load_corpus(&cfg.paths.submissions)?;
    let reviewers = load_reviewers(&cfg.paths.reviewers)?;
    let index: HashMap<&str, &CorpusRecord> = papers.iter().map(|p| (p.id.as_str(), p)).collect();
    let profiles = build_profiles(&reviewers, &index, &cfg.filter, cfg.reference_year);
    let union = profile_union(&profiles);
    let texts: HashMap<&str, String> = union
        .iter()
        .filter_map(|id| index.get(id.as_str()).map(|p| (p.id.as_str(), p.text())))
        .chain(submissions.iter().map(|s| (s.id.as_str(), s.text())))
        .collect();

    let needs_model = variants.iter().any(|v| *v != Variant::Tpms);
    let model = needs_model
        .then(|| load_model(cfg, &cfg.paths.checkpoint))
        .transpose()?;
    let instructed = match &model {
        Some(m) => FactorEmbeddings::compute(&mut m.embedder(), texts.iter().map(|(k, v)| (*k, v.as_str())))?,
        None => FactorEmbeddings::new(),
    };
    let agnostic = if variants.contains(&Variant::NoInstruction) {
        let separate = agnostic_checkpoint.map(|p| load_model(cfg, p)).transpose()?;
        if separate.is_none() {
            log::info!("no_instruction uses the main checkpoint without instructions");
        }
        let m = separate.as_ref().or(model.as_ref()).expect("model loaded");
        Some(FactorEmbeddings::compute(
            &mut m.uninstructed_embedder(),
            texts.iter().map(|(k, v)| (*k, v.as_str())),
        )?)
    } else {
        None
    };
    let tfidf = variants
        .contains(&Variant::Tpms)
        .then(|| TfIdf::fit(texts.values().map(String::as_str)));

    let emb = MatchEmbeddings {
        instructed: &instructed,
        agnostic: agnostic.as_ref().map(|a| a as _),
    };
    let mut out = Vec::new();
    for s in &submissions {
        for &variant in variants {
            let rows = match &tfidf {
                Some(stats) if variant == Variant::Tpms => {
                    rank_reviewers_tpms(&texts[s.id.as_str()], &profiles, &texts, stats)?
                }
                _ => {
                    let chain = cof_core::matching::ChainConfig {
                        variant,
                        ..cfg.chain.clone()
                    };
                    rank_reviewers(&s.id, &profiles, emb, &chain)?
                }
            };
            out.push((s.id.clone(), variant.as_str().to_string(), rows));
        }
    }
    Ok(out)
}

fn eval(cfg: &RunConfig, files: &[PathBuf], only: Option<&str>, out: Option<&Path>) -> Result<()> {
    let only = only
        .map(|v| v.parse::<Variant>().map_err(|e| UsageError(format!("--variant: {e}"))))
        .transpose()?;
    let judgments = load_judgments(&cfg.paths.judgments)?;
    let mut runs = Vec::new();
    for f in files {
        let mut r = read_rankings(f)?;
        if let Some(v) = only {
            r.retain(|name, _| name == v.as_str());
            if r.is_empty() {
                bail!(cof_core::CofError::Input(format!(
                    "{}: no rankings for variant {v}",
                    f.display()
                )));
            }
        }
        runs.push(r);
    }
    let variants: BTreeSet<&String> = runs.iter().flat_map(|r| r.keys()).collect();
    let reports: BTreeMap<&str, Vec<MetricReport>> = variants
        .iter()
        .map(|v| {
            let per_run = runs
                .iter()
                .filter_map(|r| r.get(*v))
                .map(|rankings| evaluate(rankings, &judgments))
                .collect();
            (v.as_str(), per_run)
        })
        .collect();

    if let Some(path) = out {
        let [(_, only_run)] = reports.iter().collect::<Vec<_>>()[..] else {
            bail!(UsageError("--out needs exactly one variant (use --variant)".into()));
        };
        let [report] = &only_run[..] else {
            bail!(UsageError("--out needs exactly one rankings file".into()));
        };
        ensure_parent(path)?;
        write_metric_report(path, report)?;
    }

    if runs.len() == 1 {
        for (v, r) in &reports {
            println!("== {v} ==\n{}\n", r[0]);
        }
        return Ok(());
    }
    print!("{:<16}", "variant");
    for name in MetricReport::NAMES {
        print!(" {name:>9}");
    }
    println!(" {:>5}", "runs");
    let averages = |v: &str| -> Vec<f64> { reports[v].iter().map(|r| r.average).collect() };
    for (v, rs) in &reports {
        print!("{v:<16}");
        for i in 0..MetricReport::NAMES.len() {
            let mean = rs.iter().map(|r| r.values()[i]).sum::<f64>() / rs.len() as f64;
            print!(" {mean:>9.4}");
        }
        print!(" {:>5}", rs.len());
        if *v != "cof" && reports.contains_key("cof") {
            match z_test(&averages("cof"), &averages(v)) {
                Ok(t) => print!("  cof vs {v}: z={:.3} p={:.4}{}", t.z, t.p, t.marker()),
                Err(e) => log::warn!("z-test for {v}: {e}"),
            }
        }
        println!();
    }
    Ok(())
}

fn probe(cfg: &RunConfig, kinds: &[String], out: Option<&Path>) -> Result<()> {
    let kinds: BTreeSet<ProbeKind> = if kinds.is_empty() {
        ProbeKind::ALL.into_iter().collect()
    } else {
        kinds
            .iter()
            .map(|k| k.parse().map_err(|e| UsageError(format!("--kind: {e}"))))
            .collect::<std::result::Result<_, _>>()?
    };
    let papers = load_corpus(&cfg.paths.corpus)?;
    let submissions = load_corpus(&cfg.paths.submissions)?;
    let model = load_model(cfg, &cfg.paths.checkpoint)?;
    let index: HashMap<&str, &CorpusRecord> = papers.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tasks = Vec::new();
    if kinds.contains(&ProbeKind::Semantic) {
        tasks.extend(semantic_probe_tasks(&submissions, &papers, &mut rng)?);
    }
    if kinds.contains(&ProbeKind::Topic) {
        let names = field_names(papers.iter().chain(&submissions));
        tasks.extend(topic_probe_tasks(&submissions, &names, &mut rng)?);
    }
    if kinds.contains(&ProbeKind::Citation) {
        let reviewers = load_reviewers(&cfg.paths.reviewers)?;
        let pool: Vec<&CorpusRecord> = reviewers
            .iter()
            .flat_map(|r| r.paper_ids.iter())
            .filter_map(|id| index.get(id.as_str()).copied())
            .collect();
        tasks.extend(citation_probe_tasks(&submissions, &index, &pool, &mut rng)?);
    }
    let mut scorer = EmbeddingProbeScorer::new(model.embedder());
    let results = mean_rank_probe(&mut scorer, &tasks)?;
    println!("{:<10} {:>9} {:>7}", "probe", "mean_rank", "tasks");
    for r in &results {
        println!("{:<10} {:>9.2} {:>7}", r.probe_kind.as_str(), r.mean_rank, r.n_tasks);
    }
    if let Some(path) = out {
        ensure_parent(path)?;
        write_probe_report(path, &results)?;
    }
    Ok(())
}
