//! JSONL record types: papers, reviewers, judgments and search logs.
//!
//! Readers parse each line into a JSON object and extract the known keys one
//! at a time, so errors name both the line and the offending key. Keys the
//! reader does not know are ignored with a warning.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CofError, Result};

/// A field (topic class) tag with its depth in the field hierarchy, 1 being
/// the coarsest layer.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FieldTag {
    pub name: String,
    pub layer: u8,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub year: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub venue: Option<String>,
    pub authors: Vec<String>,
    pub fields: Vec<FieldTag>,
    pub references: Vec<String>,
}

impl CorpusRecord {
    /// Title and abstract joined by a space, the text the encoder sees.
    pub fn text(&self) -> String {
        match (self.title.is_empty(), self.abstract_text.is_empty()) {
            (false, false) => format!("{} {}", self.title, self.abstract_text),
            (false, true) => self.title.clone(),
            _ => self.abstract_text.clone(),
        }
    }

    /// Names of fields at layer `min_layer` or deeper.
    pub fn fields_from_layer(&self, min_layer: u8) -> BTreeSet<&str> {
        self.fields
            .iter()
            .filter(|f| f.layer >= min_layer)
            .map(|f| f.name.as_str())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewerRecord {
    pub reviewer_id: String,
    pub paper_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub paper_id: String,
    pub reviewer_id: String,
    pub score: u8,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    pub doc_id: String,
    pub score: u32,
}

/// One logged query with the documents shown for it and their click scores.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchQuery {
    pub query: String,
    pub results: Vec<SearchResult>,
}

/// Largest click score in the search-log convention.
pub const MAX_CLICK_SCORE: u32 = 14;

/// Parsing of one JSON object into a record.
pub trait JsonRecord: Sized + Serialize {
    const KEYS: &'static [&'static str];
    fn from_object(obj: &Fields<'_>) -> std::result::Result<Self, String>;
}

/// Typed accessors over a JSON object that report the key at fault.
pub struct Fields<'a>(&'a Map<String, Value>);

impl Fields<'_> {
    fn get(&self, key: &str) -> Option<&Value> {
        self.0.get(key).filter(|v| !v.is_null())
    }

    pub fn string(&self, key: &str) -> std::result::Result<String, String> {
        match self.get(key) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(other) => Err(format!("key {key:?}: expected a string, got {other}")),
            None => Err(format!("missing required key {key:?}")),
        }
    }

    pub fn opt_string(&self, key: &str) -> std::result::Result<Option<String>, String> {
        self.get(key).map(|_| self.string(key)).transpose()
    }

    pub fn uint(&self, key: &str) -> std::result::Result<u64, String> {
        match self.get(key) {
            Some(v) => v
                .as_u64()
                .ok_or_else(|| format!("key {key:?}: expected a non-negative integer, got {v}")),
            None => Err(format!("missing required key {key:?}")),
        }
    }

    pub fn opt_uint(&self, key: &str) -> std::result::Result<Option<u64>, String> {
        self.get(key).map(|_| self.uint(key)).transpose()
    }

    pub fn strings(&self, key: &str) -> std::result::Result<Vec<String>, String> {
        match self.get(key) {
            None => Ok(Vec::new()),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    Value::String(s) => Ok(s.clone()),
                    other => Err(format!("key {key:?}: expected strings, got {other}")),
                })
                .collect(),
            Some(other) => Err(format!("key {key:?}: expected an array, got {other}")),
        }
    }

    pub fn objects(&self, key: &str) -> std::result::Result<Vec<Fields<'_>>, String> {
        match self.get(key) {
            None => Ok(Vec::new()),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    Value::Object(m) => Ok(Fields(m)),
                    other => Err(format!("key {key:?}: expected objects, got {other}")),
                })
                .collect(),
            Some(other) => Err(format!("key {key:?}: expected an array, got {other}")),
        }
    }
}

impl JsonRecord for CorpusRecord {
    const KEYS: &'static [&'static str] = &[
        "id",
        "title",
        "abstract",
        "year",
        "venue",
        "authors",
        "fields",
        "references",
    ];

    fn from_object(obj: &Fields<'_>) -> std::result::Result<Self, String> {
        let year = match obj.opt_uint("year")? {
            Some(y) if (1000..=9999).contains(&y) => Some(y as u32),
            Some(y) => return Err(format!("key \"year\": {y} is not a 4-digit year")),
            None => None,
        };
        let fields = obj
            .objects("fields")?
            .iter()
            .map(|f| {
                let layer = f.uint("layer").map_err(|e| format!("fields: {e}"))?;
                let layer = u8::try_from(layer)
                    .ok()
                    .filter(|&l| l >= 1)
                    .ok_or_else(|| format!("key \"fields\": layer {layer} out of range"))?;
                Ok(FieldTag {
                    name: f.string("name").map_err(|e| format!("fields: {e}"))?,
                    layer,
                })
            })
            .collect::<std::result::Result<_, String>>()?;
        Ok(Self {
            id: obj.string("id")?,
            title: obj.opt_string("title")?.unwrap_or_default(),
            abstract_text: obj.opt_string("abstract")?.unwrap_or_default(),
            year,
            venue: obj.opt_string("venue")?,
            authors: obj.strings("authors")?,
            fields,
            references: obj.strings("references")?,
        })
    }
}

impl JsonRecord for ReviewerRecord {
    const KEYS: &'static [&'static str] = &["reviewer_id", "paper_ids"];

    fn from_object(obj: &Fields<'_>) -> std::result::Result<Self, String> {
        Ok(Self {
            reviewer_id: obj.string("reviewer_id")?,
            paper_ids: obj.strings("paper_ids")?,
        })
    }
}

impl JsonRecord for Judgment {
    const KEYS: &'static [&'static str] = &["paper_id", "reviewer_id", "score"];

    fn from_object(obj: &Fields<'_>) -> std::result::Result<Self, String> {
        let score = obj.uint("score")?;
        if score > 3 {
            return Err(format!("key \"score\": {score} outside 0..=3"));
        }
        Ok(Self {
            paper_id: obj.string("paper_id")?,
            reviewer_id: obj.string("reviewer_id")?,
            score: score as u8,
        })
    }
}

impl JsonRecord for SearchQuery {
    const KEYS: &'static [&'static str] = &["query", "results"];

    fn from_object(obj: &Fields<'_>) -> std::result::Result<Self, String> {
        let results = obj
            .objects("results")?
            .iter()
            .map(|r| {
                let score = r.uint("score").map_err(|e| format!("results: {e}"))?;
                if score > MAX_CLICK_SCORE as u64 {
                    return Err(format!(
                        "results: key \"score\": {score} outside 0..={MAX_CLICK_SCORE}"
                    ));
                }
                Ok(SearchResult {
                    doc_id: r.string("doc_id").map_err(|e| format!("results: {e}"))?,
                    score: score as u32,
                })
            })
            .collect::<std::result::Result<_, String>>()?;
        Ok(Self {
            query: obj.string("query")?,
            results,
        })
    }
}

/// Parses JSONL text; `origin` names the source in errors and warnings.
pub fn parse_jsonl<R: JsonRecord>(text: &str, origin: &Path) -> Result<Vec<R>> {
    let mut out = Vec::new();
    let mut warned: BTreeSet<String> = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| CofError::Parse {
            path: origin.to_path_buf(),
            line: line_no,
            message,
        };
        let value: Value =
            serde_json::from_str(line).map_err(|e| parse_err(format!("malformed JSON: {e}")))?;
        let Value::Object(map) = value else {
            return Err(parse_err("expected a JSON object".into()));
        };
        for key in map.keys() {
            if !R::KEYS.contains(&key.as_str()) && warned.insert(key.clone()) {
                log::warn!(
                    "{}:{line_no}: ignoring unknown key {key:?}",
                    origin.display()
                );
            }
        }
        out.push(R::from_object(&Fields(&map)).map_err(parse_err)?);
    }
    Ok(out)
}

pub fn load_jsonl<R: JsonRecord>(path: impl AsRef<Path>) -> Result<Vec<R>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| CofError::io(path, e))?;
    parse_jsonl(&text, path)
}

pub fn save_jsonl<R: Serialize>(path: impl AsRef<Path>, records: &[R]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| CofError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize to JSON");
        writeln!(w, "{line}").map_err(|e| CofError::io(path, e))?;
    }
    w.flush().map_err(|e| CofError::io(path, e))
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusRecord>> {
    let records: Vec<CorpusRecord> = load_jsonl(&path)?;
    let mut seen = BTreeSet::new();
    for r in &records {
        if !seen.insert(r.id.as_str()) {
            return Err(CofError::Format {
                path: path.as_ref().to_path_buf(),
                message: format!("duplicate paper id {:?}", r.id),
            });
        }
    }
    Ok(records)
}

pub fn save_corpus(path: impl AsRef<Path>, records: &[CorpusRecord]) -> Result<()> {
    save_jsonl(path, records)
}

/// Loads judgments and rejects duplicate (paper, reviewer) pairs.
pub fn load_judgments(path: impl AsRef<Path>) -> Result<Vec<Judgment>> {
    let records: Vec<Judgment> = load_jsonl(&path)?;
    let mut seen = BTreeSet::new();
    for j in &records {
        if !seen.insert((j.paper_id.as_str(), j.reviewer_id.as_str())) {
            return Err(CofError::Format {
                path: path.as_ref().to_path_buf(),
                message: format!(
                    "duplicate judgment for paper {:?} and reviewer {:?}",
                    j.paper_id, j.reviewer_id
                ),
            });
        }
    }
    Ok(records)
}

pub fn load_reviewers(path: impl AsRef<Path>) -> Result<Vec<ReviewerRecord>> {
    load_jsonl(path)
}

pub fn load_search_log(path: impl AsRef<Path>) -> Result<Vec<SearchQuery>> {
    load_jsonl(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn origin() -> &'static Path {
        Path::new("test.jsonl")
    }

    #[test]
    fn empty_text_gives_empty_corpus() {
        let v: Vec<CorpusRecord> = parse_jsonl("", origin()).unwrap();
        assert!(v.is_empty());
    }

    #[test]
    fn missing_abstract_is_empty() {
        let v: Vec<CorpusRecord> = parse_jsonl(r#"{"id":"p1","title":"T"}"#, origin()).unwrap();
        assert_eq!(v[0].abstract_text, "");
        assert_eq!(v[0].text(), "T");
        assert!(v[0].authors.is_empty());
    }

    #[test]
    fn errors_name_line_and_key() {
        let text = "{\"id\":\"p1\"}\n{\"id\":\"p2\",\"year\":\"x\"}\n";
        let err = parse_jsonl::<CorpusRecord>(text, origin()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":2:"), "{msg}");
        assert!(msg.contains("\"year\""), "{msg}");

        let err = parse_jsonl::<CorpusRecord>("{\"id\":\"p\",\"year\":123}", origin()).unwrap_err();
        assert!(err.to_string().contains("4-digit"));

        let err = parse_jsonl::<CorpusRecord>("{not json", origin()).unwrap_err();
        assert!(matches!(err, CofError::Parse { line: 1, .. }));
    }

    #[test]
    fn unknown_keys_are_ignored() {
        let v: Vec<Judgment> = parse_jsonl(
            r#"{"paper_id":"p","reviewer_id":"r","score":2,"note":"x"}"#,
            origin(),
        )
        .unwrap();
        assert_eq!(v[0].score, 2);
    }

    #[test]
    fn judgment_scores_are_bounded() {
        let err =
            parse_jsonl::<Judgment>(r#"{"paper_id":"p","reviewer_id":"r","score":4}"#, origin())
                .unwrap_err();
        assert!(err.to_string().contains("score"));
    }

    #[test]
    fn search_log_parses_nested_results() {
        let v: Vec<SearchQuery> = parse_jsonl(
            r#"{"query":"q","results":[{"doc_id":"a","score":3},{"doc_id":"b","score":0}]}"#,
            origin(),
        )
        .unwrap();
        assert_eq!(v[0].results.len(), 2);
        let err = parse_jsonl::<SearchQuery>(
            r#"{"query":"q","results":[{"doc_id":"a","score":15}]}"#,
            origin(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("score"));
    }
}
