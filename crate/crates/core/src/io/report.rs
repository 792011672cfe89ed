//! CSV outputs: rankings, loss history, metric and probe reports.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{CofError, Result};
use crate::evaluation::{MetricReport, ProbeResult};
use crate::matching::RankedReviewer;
use crate::pretraining::LossRecord;

fn csv_err(path: &Path, e: csv::Error) -> CofError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CofError::io(path, io),
        other => CofError::Format {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    }
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

fn finish(path: &Path, mut w: csv::Writer<std::fs::File>) -> Result<()> {
    w.flush().map_err(|e| CofError::io(path, e))
}

pub const RANKING_HEADER: [&str; 8] = [
    "paper_id",
    "reviewer_id",
    "rank",
    "f_total",
    "f_semantic",
    "f_topic",
    "f_citation",
    "variant",
];

/// Writes `(paper id, variant, ranking)` groups as one CSV.
pub fn write_rankings(path: impl AsRef<Path>, groups: &[(String, String, Vec<RankedReviewer>)]) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    w.write_record(RANKING_HEADER).map_err(|e| csv_err(path, e))?;
    for (paper, variant, rows) in groups {
        for r in rows {
            w.write_record([
                paper.as_str(),
                r.reviewer_id.as_str(),
                &r.rank.to_string(),
                &r.f_total.to_string(),
                &r.f_semantic.to_string(),
                &r.f_topic.to_string(),
                &r.f_citation.to_string(),
                variant.as_str(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
    }
    finish(path, w)
}

/// Reads a rankings CSV into variant → paper → reviewer ids ordered by rank.
pub fn read_rankings(path: impl AsRef<Path>) -> Result<BTreeMap<String, BTreeMap<String, Vec<String>>>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| CofError::Format {
            path: path.to_path_buf(),
            message: format!("missing column {name:?}"),
        })
    };
    let (pc, rc, kc, vc) = (col("paper_id")?, col("reviewer_id")?, col("rank")?, col("variant")?);
    let mut acc: BTreeMap<String, BTreeMap<String, Vec<(usize, String)>>> = BTreeMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = i + 2;
        let field = |c: usize| {
            rec.get(c).ok_or_else(|| CofError::Parse {
                path: path.to_path_buf(),
                line,
                message: "short row".into(),
            })
        };
        let rank: usize = field(kc)?.parse().map_err(|_| CofError::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("column \"rank\": bad value {:?}", rec.get(kc).unwrap_or("")),
        })?;
        acc.entry(field(vc)?.to_string())
            .or_default()
            .entry(field(pc)?.to_string())
            .or_default()
            .push((rank, field(rc)?.to_string()));
    }
    Ok(acc
        .into_iter()
        .map(|(v, papers)| {
            let papers = papers
                .into_iter()
                .map(|(p, mut rows)| {
                    rows.sort();
                    (p, rows.into_iter().map(|(_, r)| r).collect())
                })
                .collect();
            (v, papers)
        })
        .collect())
}

pub fn write_loss_history(path: impl AsRef<Path>, history: &[LossRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    w.write_record(["epoch", "factor", "mean_loss"])
        .map_err(|e| csv_err(path, e))?;
    for h in history {
        w.write_record([h.epoch.to_string(), h.factor.to_string(), h.mean_loss.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

pub fn write_probe_report(path: impl AsRef<Path>, results: &[ProbeResult]) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    w.write_record(["probe_kind", "mean_rank", "n_tasks"])
        .map_err(|e| csv_err(path, e))?;
    for r in results {
        w.write_record([
            r.probe_kind.to_string(),
            r.mean_rank.to_string(),
            r.n_tasks.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

/// One row per paper followed by an `ALL` row with the averages.
pub fn write_metric_report(path: impl AsRef<Path>, report: &MetricReport) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    let mut header = vec!["paper_id"];
    header.extend(MetricReport::NAMES);
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for p in &report.per_paper {
        let vals = [
            p.soft_p5, p.soft_p10, p.hard_p5, p.hard_p10, p.liu_p5, p.liu_p10, p.anjum_p5,
            p.anjum_p10,
        ];
        let avg = (vals[0] + vals[1] + vals[2] + vals[3]) / 4.0;
        let mut row = vec![p.paper_id.clone()];
        row.extend(vals.iter().chain([&avg]).map(f64::to_string));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    let mut row = vec!["ALL".to_string()];
    row.extend(report.values().iter().map(f64::to_string));
    w.write_record(&row).map_err(|e| csv_err(path, e))?;
    finish(path, w)
}
