//! Corpus, judgment and search-log records, the embedding store, run
//! configuration and CSV reports.

mod config;
mod records;
mod report;
mod store;

pub use config::RunConfig;
pub use records::{
    load_corpus, load_judgments, load_jsonl, load_reviewers, load_search_log, parse_jsonl,
    save_corpus, save_jsonl, CorpusRecord, Fields, FieldTag, JsonRecord, Judgment,
    ReviewerRecord, SearchQuery, SearchResult, MAX_CLICK_SCORE,
};
pub use report::{
    read_rankings, write_loss_history, write_metric_report, write_probe_report, write_rankings,
};
pub use store::{EmbeddingStore, STORE_MAGIC, STORE_VERSION};
