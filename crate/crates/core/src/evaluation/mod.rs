//! Precision metrics, mean-rank probes and significance testing.

mod metrics;
mod probe;
mod stats;

pub use metrics::{
    evaluate, precision_at_k, precision_at_k_anjum, precision_at_k_liu, MetricReport,
    PaperMetrics, PrecisionMode,
};
pub use probe::{
    citation_probe_tasks, mean_rank_probe, rank_of, semantic_probe_tasks, topic_probe_tasks,
    EmbeddingProbeScorer, ProbeKind, ProbeResult, ProbeScorer, ProbeTask, PROBE_CANDIDATES,
};
pub use stats::{
    aggregate_annotations, jaccard, jaccard_to_rating, z_test, ZTest, DEFAULT_JACCARD_THRESHOLDS,
};
