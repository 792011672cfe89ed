//! Acceptance suite: one PASS/FAIL line per criterion, written straight to
//! stderr so it shows without `--nocapture`.
//!
//! Criteria 6 and 7 train encoders on the default synthetic corpus and take
//! roughly ten minutes together on one core.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::panic;
use std::path::Path;
use std::time::Instant;

use cof_core::encoder::{
    encode_paper, encode_paper_uninstructed, mha, mha_asymmetric, EncoderConfig, EncoderWeights,
    Factor, LayerStates, Model,
};
use cof_core::evaluation::{
    citation_probe_tasks, evaluate, mean_rank_probe, precision_at_k, precision_at_k_anjum,
    precision_at_k_liu, semantic_probe_tasks, topic_probe_tasks, z_test, EmbeddingProbeScorer,
    PrecisionMode,
};
use cof_core::io::{
    save_corpus, save_jsonl, write_loss_history, write_rankings, CorpusRecord, EmbeddingStore,
    RunConfig,
};
use cof_core::matching::{
    build_profiles, profile_union, rank_reviewers, rank_reviewers_tpms, ChainConfig,
    FactorEmbeddings, Keep, MatchEmbeddings, ProfileFilter, ProfilePaper, RankedReviewer,
    ReviewerProfile, TfIdf, Variant,
};
use cof_core::pretraining::{
    build_datasets, contrastive_loss, generate_synthetic_corpus, train, vocabulary_texts,
    SyntheticCorpus, SyntheticCorpusSpec, TrainConfig, TrainingSample,
};
use cof_core::tensor::Tensor;
use cof_core::tokenizer::{build_vocab, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{encoder_gradient_check, random_matrix, random_weights, seq, toy_config};

type Criterion = fn() -> String;

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, Criterion); 10] = [
        ("gradient check", gradient_check),
        ("empty-instruction reduction", reduction_identity),
        ("loss identities", loss_identities),
        ("cascade vs brute force", cascade_oracle),
        ("precision fixtures", metric_oracles),
        ("training signal", training_signal),
        ("cof vs no_instruction", ablation_trend),
        ("keep=1.0 collapse", keep_one_collapse),
        ("persistence", persistence),
        ("z-test fixtures", z_test_fixtures),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(run);
        let secs = start.elapsed().as_secs_f64();
        let line = match outcome {
            Ok(detail) => format!("PASS {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(e) => {
                failed.push(i + 1);
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                format!("FAIL {:>2} {name}: {msg} [{secs:.1}s]", i + 1)
            }
        };
        let _ = writeln!(std::io::stderr(), "{line}");
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

// ---- 1 ----

fn gradient_check() -> String {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut coords = 0;
    for seed in 0..20 {
        let check = encoder_gradient_check(seed);
        assert!(check.checked > 0);
        worst = worst.max(check.max_rel_err);
        coords += check.checked;
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(worst < 1e-4, "max relative error {worst:e}");
    assert!(secs < 60.0, "took {secs:.1}s");
    format!("20 configurations, {coords} coordinates, max rel err {worst:.2e} < 1e-4")
}

// ---- 2 ----

fn reduction_identity() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for draw in 0..100 {
        let (d, heads) = [(4, 1), (4, 2), (8, 2), (8, 4)][draw % 4];
        let w = random_weights(toy_config(1, d, heads), 5000 + draw as u64);
        let b = rng.random_range(1..7);
        let hp = random_matrix(&mut rng, b, d);
        let empty = Tensor::zeros(&[0, d]);
        let asym = mha_asymmetric(&hp, &empty, &w.layers[0], None, None).unwrap();
        let plain = mha(&hp, &w.layers[0], None).unwrap();
        for (x, y) in asym.data().iter().zip(plain.data()) {
            worst = worst.max((x - y).abs());
        }
    }
    assert!(worst < 1e-9, "mha difference {worst:e}");

    for s in 0..20u64 {
        let layers = 1 + (s % 2) as usize;
        let w = random_weights(toy_config(layers, 8, 2), 6000 + s);
        let n = rng.random_range(1..10);
        let ids: Vec<u32> = (0..n).map(|_| rng.random_range(2..20)).collect();
        let paper = seq(&ids, 12);
        let a = encode_paper(&paper, &LayerStates::empty(layers, 8), &w).unwrap();
        let b = encode_paper_uninstructed(&paper, &w).unwrap();
        assert_eq!(a, b, "paper {ids:?}");
    }
    format!("100 mha draws, max diff {worst:.1e} < 1e-9; 20 papers encode identically")
}

// ---- 3 ----

fn loss_identities() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut v = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-2.0..2.0)).collect() };
    let anchor = v(6);
    let positive = v(6);
    let zero = contrastive_loss(&anchor, &positive, &[]).unwrap();
    assert!(zero == 0.0, "no negatives gave {zero}");
    let mut worst = 0.0f64;
    for t in [1usize, 5, 31] {
        let negatives = vec![positive.clone(); t];
        let loss = contrastive_loss(&anchor, &positive, &negatives).unwrap();
        let err = (loss - ((t + 1) as f64).ln()).abs();
        assert!(err < 1e-12, "T={t}: {loss} vs ln({})", t + 1);
        worst = worst.max(err);
    }
    format!("0 without negatives; ln(T+1) for T in 1,5,31, max err {worst:.1e}")
}

// ---- 4 ----

/// A stage keep expressed as an exact ratio for the oracle.
#[derive(Clone, Copy, Debug)]
enum Ratio {
    Frac { num: usize, den: usize, min: usize },
    Count(usize),
}

impl Ratio {
    fn keep(self) -> Keep {
        match self {
            Ratio::Frac { num, den, min } => Keep::Fraction {
                fraction: num as f64 / den as f64,
                min,
            },
            Ratio::Count(c) => Keep::Count(c),
        }
    }

    fn survivors(self, n: usize) -> usize {
        if n == 0 {
            return 0;
        }
        let k = match self {
            Ratio::Frac { num, den, min } => ((num * n).div_ceil(den)).max(min),
            Ratio::Count(c) => c,
        };
        k.max(1).min(n)
    }
}

struct Instance {
    profiles: Vec<ReviewerProfile>,
    /// Per paper: semantic, topic and citation vectors.
    factor_vecs: BTreeMap<String, [Vec<f64>; 3]>,
    agnostic_vecs: BTreeMap<String, Vec<f64>>,
    texts: HashMap<String, String>,
    keep1: Ratio,
    keep2: Ratio,
}

const WORDS: [&str; 12] = [
    "graph", "kernel", "neural", "bayes", "sparse", "query", "ranking", "vision", "speech",
    "robot", "privacy", "tensor",
];

fn instance(seed: u64, max_pool: usize, max_reviewers: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let quantized = seed % 2 == 0;
    let pool = rng.random_range(max_pool / 4..=max_pool);
    let reviewers = rng.random_range(max_reviewers / 3..=max_reviewers);
    let dim = 5;
    let vector = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..dim)
            .map(|_| {
                if quantized {
                    [-1.0, -0.5, 0.0, 0.5, 1.0][rng.random_range(0..5)]
                } else {
                    rng.random_range(-1.0..1.0)
                }
            })
            .collect()
    };
    let mut ids: Vec<String> = (0..pool).map(|i| format!("q{i:03}")).collect();
    ids.push("sub".into());
    let mut factor_vecs = BTreeMap::new();
    let mut agnostic_vecs = BTreeMap::new();
    let mut texts = HashMap::new();
    for id in &ids {
        factor_vecs.insert(id.clone(), [vector(&mut rng), vector(&mut rng), vector(&mut rng)]);
        agnostic_vecs.insert(id.clone(), vector(&mut rng));
        let n = rng.random_range(1..8);
        let words: Vec<&str> = (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
        texts.insert(id.clone(), words.join(" "));
    }
    let profiles = (0..reviewers)
        .map(|r| {
            // Reviewer 0 has no papers on even seeds.
            let n = if r == 0 && seed % 2 == 0 { 0 } else { rng.random_range(1..15) };
            let picks: BTreeSet<&String> = (0..n).map(|_| &ids[rng.random_range(0..pool)]).collect();
            ReviewerProfile {
                reviewer_id: format!("r{r:02}"),
                papers: picks
                    .into_iter()
                    .map(|id| ProfilePaper {
                        id: id.clone(),
                        year: None,
                        venue: None,
                        author_position: Some(0),
                        num_authors: 1,
                    })
                    .collect(),
            }
        })
        .collect();
    let fracs = [(1, 100), (1, 20), (1, 10), (1, 4), (1, 2), (3, 4), (1, 1)];
    let ratio = |rng: &mut ChaCha8Rng| {
        if rng.random_bool(0.3) {
            Ratio::Count(rng.random_range(1..40))
        } else {
            let (num, den) = fracs[rng.random_range(0..fracs.len())];
            Ratio::Frac {
                num,
                den,
                min: rng.random_range(0..12),
            }
        }
    };
    let keep1 = ratio(&mut rng);
    let keep2 = ratio(&mut rng);
    Instance {
        profiles,
        factor_vecs,
        agnostic_vecs,
        texts,
        keep1,
        keep2,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Descending by score, then ascending by id; `0.0` and `-0.0` compare equal.
fn sort_desc<T: Clone + Ord>(rows: &mut [(T, f64)]) {
    rows.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
}

/// Brute-force reviewer ranking: `(reviewer, [total, semantic, topic, citation])`.
fn oracle_rank(inst: &Instance, variant: Variant) -> Vec<(String, [f64; 4])> {
    let p = "sub";
    let score = |q: &str, f: usize| -> f64 {
        if variant == Variant::NoInstruction {
            dot(&inst.agnostic_vecs[p], &inst.agnostic_vecs[q])
        } else {
            dot(&inst.factor_vecs[p][f], &inst.factor_vecs[q][f])
        }
    };
    let union: BTreeSet<&str> = inst
        .profiles
        .iter()
        .flat_map(|r| r.papers.iter().map(|x| x.id.as_str()))
        .collect();

    let survivors: BTreeSet<&str> = {
        let mut s1: Vec<(&str, f64)> = union.iter().map(|&q| (q, score(q, 0))).collect();
        sort_desc(&mut s1);
        s1.truncate(inst.keep1.survivors(union.len()));
        let mut s2: Vec<(&str, f64)> = s1.iter().map(|&(q, _)| (q, score(q, 1))).collect();
        sort_desc(&mut s2);
        s2.truncate(inst.keep2.survivors(s1.len()));
        s2.into_iter().map(|(q, _)| q).collect()
    };

    let tfidf_stats = || {
        let docs: Vec<Vec<&str>> = inst.texts.values().map(|t| t.split(' ').collect()).collect();
        let n = docs.len() as f64;
        let idf = move |w: &str| {
            let df = docs.iter().filter(|d| d.contains(&w)).count().max(1);
            (n / df as f64).ln()
        };
        idf
    };

    let mut rows: Vec<(String, [f64; 4])> = Vec::new();
    for r in &inst.profiles {
        let papers: Vec<&str> = r.papers.iter().map(|x| x.id.as_str()).collect();
        let mut cols = [0.0f64; 4];
        let empty = [f64::NEG_INFINITY, 0.0, 0.0, 0.0];
        let row = match variant {
            Variant::Cof | Variant::NoInstruction | Variant::SThenTThenC => {
                let kept: Vec<&str> = papers.iter().copied().filter(|q| survivors.contains(q)).collect();
                if kept.is_empty() {
                    empty
                } else {
                    for q in kept {
                        let (s, t, c) = (score(q, 0), score(q, 1), score(q, 2));
                        cols[0] += if variant == Variant::SThenTThenC { c } else { s + t + c };
                        cols[1] += s;
                        cols[2] += t;
                        cols[3] += c;
                    }
                    cols
                }
            }
            Variant::S | Variant::T | Variant::C | Variant::SPlusTPlusC => {
                let used: &[usize] = match variant {
                    Variant::S => &[0],
                    Variant::T => &[1],
                    Variant::C => &[2],
                    _ => &[0, 1, 2],
                };
                if papers.is_empty() {
                    empty
                } else {
                    for q in &papers {
                        for &f in used {
                            let v = score(q, f);
                            cols[0] += v;
                            cols[f + 1] += v;
                        }
                    }
                    cols
                }
            }
            Variant::Top3 => {
                let mut s: Vec<f64> = papers.iter().map(|q| score(q, 0)).collect();
                if s.is_empty() {
                    empty
                } else {
                    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
                    let top = &s[..s.len().min(3)];
                    let mean = top.iter().sum::<f64>() / top.len() as f64;
                    [mean, mean, 0.0, 0.0]
                }
            }
            Variant::Tpms => {
                let idf = tfidf_stats();
                let mut paper_tf: BTreeMap<&str, f64> = BTreeMap::new();
                for w in inst.texts[p].split(' ') {
                    *paper_tf.entry(w).or_default() += 1.0;
                }
                let mut profile_tf: BTreeMap<&str, f64> = BTreeMap::new();
                for q in &papers {
                    for w in inst.texts[*q].split(' ') {
                        *profile_tf.entry(w).or_default() += 1.0;
                    }
                }
                let total: f64 = paper_tf
                    .iter()
                    .map(|(w, tf)| tf * idf(w) * profile_tf.get(w).copied().unwrap_or(0.0) * idf(w))
                    .sum();
                [total, total, 0.0, 0.0]
            }
        };
        rows.push((r.reviewer_id.clone(), row));
    }
    let mut order: Vec<(String, f64)> = rows.iter().map(|(id, c)| (id.clone(), c[0])).collect();
    sort_desc(&mut order);
    let by_id: HashMap<String, [f64; 4]> = rows.into_iter().collect();
    order.into_iter().map(|(id, _)| { let c = by_id[&id]; (id, c) }).collect()
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-9
}

fn engine_rank(inst: &Instance, variant: Variant) -> Vec<RankedReviewer> {
    if variant == Variant::Tpms {
        let texts: HashMap<&str, String> = inst.texts.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
        let stats = TfIdf::fit(inst.texts.values().map(String::as_str));
        return rank_reviewers_tpms(&inst.texts["sub"], &inst.profiles, &texts, &stats).unwrap();
    }
    let mut instructed = FactorEmbeddings::new();
    let mut agnostic = FactorEmbeddings::new();
    for (id, vs) in &inst.factor_vecs {
        for (f, v) in Factor::MATCHING.into_iter().zip(vs) {
            instructed.insert(f, id.clone(), v.clone());
            agnostic.insert(f, id.clone(), inst.agnostic_vecs[id].clone());
        }
    }
    let config = ChainConfig {
        stage1_keep: inst.keep1.keep(),
        stage2_keep: inst.keep2.keep(),
        variant,
        normalize_scores: false,
    };
    let emb = MatchEmbeddings {
        instructed: &instructed,
        agnostic: Some(&agnostic),
    };
    rank_reviewers("sub", &inst.profiles, emb, &config).unwrap()
}

fn cascade_oracle() -> String {
    let variants: Vec<Variant> = Variant::ABLATIONS
        .into_iter()
        .chain([Variant::Top3, Variant::Tpms])
        .collect();
    let mut rows = 0;
    let mut max_union = 0;
    for seed in 0..10 {
        let inst = instance(seed, 200, 30);
        let union = profile_union(&inst.profiles).len();
        assert!(union <= 200 && inst.profiles.len() <= 30);
        max_union = max_union.max(union);
        for &v in &variants {
            let got = engine_rank(&inst, v);
            let want = oracle_rank(&inst, v);
            let got_ids: Vec<&str> = got.iter().map(|r| r.reviewer_id.as_str()).collect();
            let want_ids: Vec<&str> = want.iter().map(|r| r.0.as_str()).collect();
            assert_eq!(got_ids, want_ids, "seed {seed} {v}: ordering");
            for (g, (_, w)) in got.iter().zip(&want) {
                let have = [g.f_total, g.f_semantic, g.f_topic, g.f_citation];
                for (a, b) in have.iter().zip(w) {
                    assert!(close(*a, *b), "seed {seed} {v} {}: {have:?} vs {w:?}", g.reviewer_id);
                }
            }
            rows += got.len();
        }
    }
    format!(
        "10 instances (up to {max_union} papers), {} variants, {rows} reviewer rows identical",
        variants.len()
    )
}

// ---- 5 ----

fn metric_oracles() -> String {
    let ranked: Vec<String> = ["r1", "r2", "r3", "r4", "r5"].iter().map(|s| s.to_string()).collect();
    let scores = [3u8, 2, 1, 0, 3];
    let judged: HashMap<&str, u8> = ranked.iter().map(String::as_str).zip(scores).collect();
    assert_eq!(precision_at_k(&ranked, &judged, 5, PrecisionMode::Soft), 0.6);
    assert_eq!(precision_at_k(&ranked, &judged, 5, PrecisionMode::Hard), 0.4);
    assert_eq!(precision_at_k_liu(&ranked, &judged, 5), 0.6);
    assert_eq!(precision_at_k_anjum(&ranked, &judged, 5), 0.6);
    assert_eq!(precision_at_k(&ranked, &judged, 10, PrecisionMode::Soft), 0.3);
    assert_eq!(precision_at_k_liu(&ranked, &judged, 10), 9.0 / 30.0);

    // Only three judged reviewers, one unjudged in between.
    let ranked: Vec<String> = ["a", "x", "b", "c"].iter().map(|s| s.to_string()).collect();
    let judged: HashMap<&str, u8> = [("a", 3), ("b", 0), ("c", 2)].into_iter().collect();
    assert_eq!(precision_at_k_anjum(&ranked, &judged, 5), 2.0 / 3.0);
    assert_eq!(precision_at_k(&ranked, &judged, 5, PrecisionMode::Soft), 0.4);
    assert_eq!(precision_at_k(&ranked, &judged, 5, PrecisionMode::Hard), 0.2);
    assert_eq!(precision_at_k_liu(&ranked, &judged, 5), 5.0 / 15.0);
    assert_eq!(precision_at_k_anjum(&ranked, &judged, 2), 0.5);
    "[3,2,1,0,3] gives soft 0.6, hard 0.4, liu 0.6; anjum with 3 judged at K=5 gives 2/3".into()
}

// ---- 6 and 7 ----

fn field_names(c: &SyntheticCorpus) -> Vec<String> {
    c.hierarchy.fields.iter().map(|f| f.name.clone()).collect()
}

fn corpus_vocab(c: &SyntheticCorpus) -> Vocabulary {
    let texts = vocabulary_texts(&c.papers, &c.search_log, &field_names(c));
    build_vocab(texts.iter().map(String::as_str), 1, 30_000).unwrap()
}

fn default_datasets(c: &SyntheticCorpus) -> BTreeMap<Factor, Vec<TrainingSample>> {
    build_datasets(&c.papers, &c.search_log, 10, 1, &mut ChaCha8Rng::seed_from_u64(1))
}

fn training_signal() -> String {
    let start = Instant::now();
    let c = generate_synthetic_corpus(&SyntheticCorpusSpec::default()).unwrap();
    assert!(c.papers.len() >= 2000);
    let vocab = corpus_vocab(&c);
    let datasets = default_datasets(&c);
    let config = EncoderConfig {
        hidden_dim: 64,
        ffn_dim: 256,
        num_heads: 4,
        vocab_size: vocab.len(),
        ..EncoderConfig::default()
    };
    let model = Model::new(EncoderWeights::<f32>::init(config, 7).unwrap(), vocab).unwrap();
    let train_config = TrainConfig {
        epochs: 20,
        max_samples_per_factor: Some(480),
        seed: 3,
        ..TrainConfig::default()
    };
    assert_eq!(train_config.peak_lr, 3e-4);
    assert_eq!(train_config.batch_size, 32);
    assert_eq!(train_config.hard_negatives, 1);
    assert!(train_config.in_batch_negatives);
    let out = train(&train_config, model, &datasets).unwrap();

    let mut parts = Vec::new();
    for f in Factor::MATCHING {
        let losses: Vec<f64> = out.history.iter().filter(|r| r.factor == f).map(|r| r.mean_loss).collect();
        let (first, last) = (losses[0], losses[losses.len() - 1]);
        let reduction = 1.0 - last / first;
        parts.push(format!("{f} loss {first:.3}->{last:.3} (-{:.0}%)", 100.0 * reduction));
        assert!(reduction >= 0.5, "{f}: loss {first} -> {last}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let index: HashMap<&str, &CorpusRecord> = c.papers.iter().map(|p| (p.id.as_str(), p)).collect();
    let pool: Vec<&CorpusRecord> = c
        .reviewers
        .iter()
        .flat_map(|r| &r.paper_ids)
        .filter_map(|id| index.get(id.as_str()).copied())
        .collect();
    let mut tasks = semantic_probe_tasks(&c.submissions, &c.papers, &mut rng).unwrap();
    tasks.extend(topic_probe_tasks(&c.submissions, &field_names(&c), &mut rng).unwrap());
    tasks.extend(citation_probe_tasks(&c.submissions, &index, &pool, &mut rng).unwrap());
    let mut scorer = EmbeddingProbeScorer::new(out.model.embedder());
    let results = mean_rank_probe(&mut scorer, &tasks).unwrap();
    assert_eq!(results.len(), 3);
    for r in &results {
        parts.push(format!("{} probe {:.2} ({} tasks)", r.probe_kind.as_str(), r.mean_rank, r.n_tasks));
    }
    for r in &results {
        assert!(r.n_tasks > 0 && r.mean_rank <= 25.0, "{} probe mean rank {}", r.probe_kind.as_str(), r.mean_rank);
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs <= 900.0, "took {secs:.0}s");
    parts.join("; ")
}

fn ablation_trend() -> String {
    let c = generate_synthetic_corpus(&SyntheticCorpusSpec::default()).unwrap();
    let vocab = corpus_vocab(&c);
    let datasets = default_datasets(&c);
    let index: HashMap<&str, &CorpusRecord> = c.papers.iter().map(|p| (p.id.as_str(), p)).collect();
    let profiles = build_profiles(&c.reviewers, &index, &ProfileFilter::default(), RunConfig::default().reference_year);
    let union = profile_union(&profiles);
    let items: Vec<(String, String)> = union
        .iter()
        .map(|id| (id.clone(), index[id.as_str()].text()))
        .chain(c.submissions.iter().map(|s| (s.id.clone(), s.text())))
        .collect();

    let mut cof = Vec::new();
    let mut plain = Vec::new();
    for seed in 0..3u64 {
        for instructed in [true, false] {
            let config = EncoderConfig {
                hidden_dim: 32,
                ffn_dim: 128,
                num_heads: 4,
                vocab_size: vocab.len(),
                ..EncoderConfig::default()
            };
            let model = Model::new(EncoderWeights::<f32>::init(config, 100 + seed).unwrap(), vocab.clone()).unwrap();
            let train_config = TrainConfig {
                epochs: 10,
                peak_lr: 1e-3,
                max_samples_per_factor: Some(320),
                seed: 200 + seed,
                use_instructions: instructed,
                ..TrainConfig::default()
            };
            let out = train(&train_config, model, &datasets).unwrap();
            let mut embedder = if instructed {
                out.model.embedder()
            } else {
                out.model.uninstructed_embedder()
            };
            let emb = FactorEmbeddings::compute(&mut embedder, items.iter().map(|(a, b)| (a.as_str(), b.as_str()))).unwrap();
            let variant = if instructed { Variant::Cof } else { Variant::NoInstruction };
            let chain = ChainConfig {
                variant,
                ..ChainConfig::default()
            };
            let tables = MatchEmbeddings {
                instructed: &emb,
                agnostic: Some(&emb),
            };
            let mut rankings = BTreeMap::new();
            for s in &c.submissions {
                let rows = rank_reviewers(&s.id, &profiles, tables, &chain).unwrap();
                rankings.insert(s.id.clone(), rows.into_iter().map(|r| r.reviewer_id).collect::<Vec<_>>());
            }
            let average = evaluate(&rankings, &c.judgments).average;
            if instructed { cof.push(average) } else { plain.push(average) }
        }
    }
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let test = z_test(&cof, &plain).unwrap();
    let seeds: Vec<String> = cof
        .iter()
        .zip(&plain)
        .enumerate()
        .map(|(s, (a, b))| format!("seed {s}: {a:.4}/{b:.4}"))
        .collect();
    let detail = format!(
        "cof/no_instruction average {}; mean {:.4} vs {:.4}, z={:.2} p={:.3}",
        seeds.join(", "),
        mean(&cof),
        mean(&plain),
        test.z,
        test.p
    );
    assert!(mean(&cof) >= mean(&plain), "{detail}");
    detail
}

// ---- 8 ----

fn keep_one_collapse() -> String {
    let mut compared = 0;
    for seed in 100..110 {
        let mut inst = instance(seed, 200, 30);
        let full = Ratio::Frac { num: 1, den: 1, min: 1 };
        inst.keep1 = full;
        inst.keep2 = full;
        let cof = engine_rank(&inst, Variant::Cof);
        let flat = engine_rank(&inst, Variant::SPlusTPlusC);
        assert_eq!(cof, flat, "seed {seed}");
        compared += cof.len();
    }
    format!("10 instances, {compared} reviewer rows identical to s+t+c")
}

// ---- 9 ----

fn file_bytes(dir: &Path, names: &[&str]) -> Vec<(String, Vec<u8>)> {
    names
        .iter()
        .map(|n| (n.to_string(), std::fs::read(dir.join(n)).unwrap()))
        .collect()
}

/// Corpus generation, training, embedding and ranking with fixed seeds; every
/// artifact is written to `dir`.
fn end_to_end(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let c = generate_synthetic_corpus(&SyntheticCorpusSpec {
        num_papers: 300,
        num_authors: 90,
        num_reviewers: 15,
        num_submissions: 6,
        num_queries: 60,
        seed: 4,
        ..SyntheticCorpusSpec::default()
    })
    .unwrap();
    save_corpus(dir.join("papers.jsonl"), &c.papers).unwrap();
    save_jsonl(dir.join("search_log.jsonl"), &c.search_log).unwrap();
    save_jsonl(dir.join("judgments.jsonl"), &c.judgments).unwrap();
    let vocab = corpus_vocab(&c);
    vocab.save(dir.join("vocab.txt")).unwrap();
    let config = EncoderConfig {
        num_layers: 1,
        hidden_dim: 16,
        num_heads: 2,
        ffn_dim: 32,
        max_paper_len: 48,
        vocab_size: vocab.len(),
        ..EncoderConfig::default()
    };
    let model = Model::new(EncoderWeights::<f32>::init(config, 4).unwrap(), vocab).unwrap();
    let datasets = build_datasets(&c.papers, &c.search_log, 10, 1, &mut ChaCha8Rng::seed_from_u64(4));
    let train_config = TrainConfig {
        epochs: 2,
        batch_size: 16,
        max_samples_per_factor: Some(48),
        seed: 4,
        ..TrainConfig::default()
    };
    let out = train(&train_config, model, &datasets).unwrap();
    out.model.weights.save(dir.join("weights.bin")).unwrap();
    write_loss_history(dir.join("loss.csv"), &out.history).unwrap();

    let mut embedder = out.model.embedder();
    let mut store = EmbeddingStore::new(16);
    for s in &c.submissions {
        store.push(s.id.clone(), embedder.embed(&s.text(), Factor::Citation).unwrap()).unwrap();
    }
    store.save(dir.join("emb.bin")).unwrap();

    let index: HashMap<&str, &CorpusRecord> = c.papers.iter().map(|p| (p.id.as_str(), p)).collect();
    let profiles = build_profiles(&c.reviewers, &index, &ProfileFilter::default(), 2020);
    let items: Vec<(&str, String)> = profile_union(&profiles)
        .into_iter()
        .map(|id| (index[id.as_str()].id.as_str(), index[id.as_str()].text()))
        .chain(c.submissions.iter().map(|s| (s.id.as_str(), s.text())))
        .collect();
    let pairs = || items.iter().map(|(a, b)| (*a, b.as_str()));
    let instructed = FactorEmbeddings::compute(&mut out.model.embedder(), pairs()).unwrap();
    let agnostic = FactorEmbeddings::compute(&mut out.model.uninstructed_embedder(), pairs()).unwrap();
    let tables = MatchEmbeddings {
        instructed: &instructed,
        agnostic: Some(&agnostic),
    };
    let mut groups = Vec::new();
    for s in &c.submissions {
        for variant in Variant::ABLATIONS {
            let chain = ChainConfig {
                variant,
                ..ChainConfig::default()
            };
            groups.push((s.id.clone(), variant.as_str().to_string(), rank_reviewers(&s.id, &profiles, tables, &chain).unwrap()));
        }
    }
    write_rankings(dir.join("rankings.csv"), &groups).unwrap();
    file_bytes(
        dir,
        &["papers.jsonl", "search_log.jsonl", "judgments.jsonl", "vocab.txt", "weights.bin", "loss.csv", "emb.bin", "rankings.csv"],
    )
}

fn persistence() -> String {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = EmbeddingStore::new(32);
    for i in 0..1000 {
        let v: Vec<f32> = (0..32).map(|_| f32::from_bits(rng.random::<u32>() & 0xbf7f_ffff)).collect();
        store.push(format!("p{i}"), v).unwrap();
    }
    let path = dir.path().join("store.bin");
    store.save(&path).unwrap();
    let back = EmbeddingStore::load(&path).unwrap();
    assert_eq!(back.len(), 1000);
    for ((a, va), (b, vb)) in store.iter().zip(back.iter()) {
        assert_eq!(a, b);
        assert!(va.iter().zip(vb).all(|(x, y)| x.to_bits() == y.to_bits()), "{a}");
    }

    let config = EncoderConfig {
        hidden_dim: 16,
        ffn_dim: 32,
        num_heads: 2,
        vocab_size: 50,
        ..EncoderConfig::default()
    };
    let w = EncoderWeights::<f32>::init(config, 9).unwrap();
    let wpath = dir.path().join("w.bin");
    w.save(&wpath).unwrap();
    let wback = EncoderWeights::<f32>::load(&wpath).unwrap();
    assert_eq!(wback.to_bytes(), w.to_bytes());

    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = end_to_end(a.path());
    let second = end_to_end(b.path());
    let mut bytes = 0;
    for ((name, x), (_, y)) in first.iter().zip(&second) {
        assert!(x == y, "{name} differs between runs");
        bytes += x.len();
    }
    format!(
        "1000 vectors and checkpoint bitwise; two seeded runs identical over {} files ({bytes} bytes)",
        first.len()
    )
}

// ---- 10 ----

/// Two-tailed normal p-value by Simpson integration of the density.
fn normal_two_tailed(z: f64) -> f64 {
    let z = z.abs();
    let n = 20_000;
    let h = z / n as f64;
    let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut sum = pdf(0.0) + pdf(z);
    for i in 1..n {
        sum += if i % 2 == 1 { 4.0 } else { 2.0 } * pdf(i as f64 * h);
    }
    let half_mass = sum * h / 3.0;
    2.0 * (0.5 - half_mass)
}

fn z_test_fixtures() -> String {
    let runs = [0.41, 0.38, 0.44, 0.40];
    let same = z_test(&runs, &runs).unwrap();
    assert_eq!(same.p, 1.0);

    // Means 2 and 1, sample variances 1 and 1: z = 1 / sqrt(2/3).
    let t = z_test(&[1.0, 2.0, 3.0], &[0.0, 1.0, 2.0]).unwrap();
    let z = 1.0 / (2.0f64 / 3.0).sqrt();
    let p = normal_two_tailed(z);
    assert!((t.z - z).abs() < 1e-12, "z {}", t.z);
    assert!((t.p - p).abs() < 1e-6, "p {} vs {p}", t.p);

    // Means 0.505 and 0.486667; sample variances 1.6667e-4 and 2.3333e-4.
    let a = [0.52, 0.50, 0.51, 0.49];
    let b = [0.50, 0.47, 0.49];
    let t2 = z_test(&a, &b).unwrap();
    let z2 = (0.505 - 1.46 / 3.0) / (5e-4 / 3.0 / 4.0 + 7e-4 / 3.0 / 3.0f64).sqrt();
    let p2 = normal_two_tailed(z2);
    assert!((t2.p - p2).abs() < 1e-6, "p {} vs {p2}", t2.p);
    format!("identical runs p=1; z={:.4} p={:.6} (ref {p:.6}); p={:.6} (ref {p2:.6})", t.z, t.p, t2.p)
}
