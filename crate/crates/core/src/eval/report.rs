use std::io::{Read, Write};
use std::path::Path;

use serde::Deserialize;

use super::{EvalError, Metric, RankedMethod, RatingRecord};

pub const CSV_HEADER: [&str; 5] = ["method", "image_id", "metric", "rater_id", "score"];

#[derive(Deserialize)]
struct RawRecord {
    method: String,
    image_id: String,
    metric: String,
    rater_id: String,
    score: String,
}

fn convert(record: usize, raw: RawRecord) -> Result<RatingRecord, EvalError> {
    let parse_err = |detail: String| EvalError::Parse { record, detail };
    let metric = raw.metric.parse::<Metric>().map_err(parse_err)?;
    let score = match raw.score.trim() {
        "0" => 0,
        "1" => 1,
        other => return Err(parse_err(format!("score must be 0 or 1, got {other:?}"))),
    };
    Ok(RatingRecord {
        method: raw.method,
        image_id: raw.image_id,
        metric,
        rater_id: raw.rater_id,
        score,
    })
}

/// Reads `method,image_id,metric,rater_id,score` CSV with a header row.
/// Record numbers in errors count data rows from 1.
pub fn read_records_csv<R: Read>(reader: R) -> Result<Vec<RatingRecord>, EvalError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| EvalError::Parse { record: 0, detail: e.to_string() })?
        .clone();
    for col in CSV_HEADER {
        if !headers.iter().any(|h| h == col) {
            return Err(EvalError::Parse {
                record: 0,
                detail: format!("header lacks column {col:?}"),
            });
        }
    }
    rdr.deserialize::<RawRecord>()
        .enumerate()
        .map(|(i, row)| {
            let raw = row.map_err(|e| EvalError::Parse { record: i + 1, detail: e.to_string() })?;
            convert(i + 1, raw)
        })
        .collect()
}

/// Reads one JSON object per line with the same fields as the CSV header.
/// `score` may be a number or a string.
pub fn read_records_jsonl(text: &str) -> Result<Vec<RatingRecord>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let parse_err = |detail: String| EvalError::Parse { record: i + 1, detail };
        let mut v: serde_json::Value = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        if let Some(n) = v.get("score").and_then(|s| s.as_u64()) {
            v["score"] = serde_json::Value::String(n.to_string());
        }
        let raw: RawRecord = serde_json::from_value(v).map_err(|e| parse_err(e.to_string()))?;
        out.push(convert(i + 1, raw)?);
    }
    Ok(out)
}

/// Picks the format from the extension (`.csv`, else JSON Lines when the
/// first non-blank character is `{`).
pub fn read_records(path: &Path) -> Result<Vec<RatingRecord>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::Parse {
        record: 0,
        detail: format!("cannot read {}: {e}", path.display()),
    })?;
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if !is_csv && text.trim_start().starts_with('{') {
        read_records_jsonl(&text)
    } else {
        read_records_csv(text.as_bytes())
    }
}

pub fn write_records_csv<W: Write>(writer: W, records: &[RatingRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.method.as_str(),
            r.image_id.as_str(),
            r.metric.as_str(),
            r.rater_id.as_str(),
            if r.score == 0 { "0" } else { "1" },
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn rows(ranked: &[RankedMethod]) -> Vec<Vec<String>> {
    ranked
        .iter()
        .map(|r| {
            let mut row = vec![r.score.method.clone(), r.rank.to_string()];
            row.extend(Metric::ALL.iter().map(|m| r.score.display_mean(*m)));
            row
        })
        .collect()
}

/// Plain-text comparison table: method, rank, then the three means.
pub fn render_text(ranked: &[RankedMethod]) -> String {
    let mut header = vec!["Method".to_string(), "Rank".to_string()];
    header.extend(Metric::ALL.iter().map(|m| m.title().to_string()));
    let body = rows(ranked);
    let widths: Vec<usize> = (0..header.len())
        .map(|c| body.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        padded.join("  ").trim_end().to_string()
    };
    let mut out = line(&header);
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for r in &body {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

pub fn render_csv(ranked: &[RankedMethod]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "method",
        "rank",
        "edit_faithfulness",
        "content_preservation",
        "overall_instruction_following",
        "images",
    ])
    .expect("in-memory write");
    for (r, row) in ranked.iter().zip(rows(ranked)) {
        let mut row = row;
        row.push(r.score.images.to_string());
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
}
