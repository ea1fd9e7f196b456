//! Reading and writing claim files (CSV with header, or JSON lines).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const CORE_COLUMNS: [&str; 5] = ["entity", "attribute", "source", "value", "timestamp"];

/// One line of a claim file: a source asserting a value for an entity's
/// attribute, plus any extra columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawClaimRow {
    pub entity: String,
    pub attribute: String,
    pub source: Option<String>,
    pub value: String,
    pub timestamp: Option<i64>,
    pub extra: BTreeMap<String, String>,
}

impl RawClaimRow {
    pub fn new(entity: &str, attribute: &str, source: Option<&str>, value: &str) -> Self {
        RawClaimRow {
            entity: entity.into(),
            attribute: attribute.into(),
            source: source.map(Into::into),
            value: value.into(),
            timestamp: None,
            extra: BTreeMap::new(),
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        for (name, v) in [
            ("entity", &self.entity),
            ("attribute", &self.attribute),
            ("value", &self.value),
        ] {
            if v.trim().is_empty() {
                return Err(format!("missing {name}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClaimFormat {
    Csv,
    Jsonl,
}

impl ClaimFormat {
    /// `.jsonl`/`.ndjson` are JSON lines, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => ClaimFormat::Jsonl,
            _ => ClaimFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    /// Line number in the file, 1-based (the CSV header is line 1).
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestReport {
    pub rows: Vec<RawClaimRow>,
    pub malformed: Vec<RowError>,
}

/// Reads a claim file. Any malformed row fails the whole file unless
/// `lenient`, in which case bad rows are logged and skipped.
pub fn ingest(path: &Path, format: ClaimFormat, lenient: bool) -> Result<Vec<RawClaimRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let report = match format {
        ClaimFormat::Csv => parse_csv(file)?,
        ClaimFormat::Jsonl => parse_jsonl(BufReader::new(file))?,
    };
    if report.rows.is_empty() && report.malformed.is_empty() {
        log::warn!("{}: no claims", path.display());
    }
    if let Some(first) = report.malformed.first() {
        if !lenient {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                count: report.malformed.len(),
                row: first.line,
                message: first.message.clone(),
            });
        }
        for e in &report.malformed {
            log::warn!("{}:{}: skipped: {}", path.display(), e.line, e.message);
        }
    }
    Ok(report.rows)
}

fn parse_timestamp(s: &str) -> std::result::Result<Option<i64>, String> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| format!("timestamp {s:?} is not an integer"))
}

fn non_empty(s: &str) -> Option<String> {
    let s = s.trim();
    (!s.is_empty()).then(|| s.to_string())
}

pub fn parse_csv<R: Read>(reader: R) -> Result<IngestReport> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut report = IngestReport::default();
    if headers.is_empty() {
        return Ok(report);
    }
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let [entity, attribute, source, value] =
        ["entity", "attribute", "source", "value"].map(|name| col(name).ok_or(name));
    let (entity, attribute, source, value) = match (entity, attribute, source, value) {
        (Ok(e), Ok(a), Ok(s), Ok(v)) => (e, a, s, v),
        (e, a, s, v) => {
            let missing: Vec<&str> = [e, a, s, v].into_iter().filter_map(|r| r.err()).collect();
            return Err(Error::InvalidDataset(format!(
                "claims header lacks column(s) {}",
                missing.join(", ")
            )));
        }
    };
    let timestamp = col("timestamp");
    let extras: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| !CORE_COLUMNS.contains(&h.trim()))
        .map(|(i, h)| (i, h.trim().to_string()))
        .collect();

    for record in rdr.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line() as usize);
                report.malformed.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != headers.len() {
            report.malformed.push(RowError {
                line,
                message: format!("{} fields, header has {}", record.len(), headers.len()),
            });
            continue;
        }
        let field = |i: usize| record.get(i).unwrap_or("");
        let ts = match timestamp.map(|i| parse_timestamp(field(i))).transpose() {
            Ok(ts) => ts.flatten(),
            Err(message) => {
                report.malformed.push(RowError { line, message });
                continue;
            }
        };
        let row = RawClaimRow {
            entity: field(entity).trim().to_string(),
            attribute: field(attribute).trim().to_string(),
            source: non_empty(field(source)),
            value: field(value).trim().to_string(),
            timestamp: ts,
            extra: extras
                .iter()
                .map(|(i, name)| (name.clone(), field(*i).trim().to_string()))
                .collect(),
        };
        match row.validate() {
            Ok(()) => report.rows.push(row),
            Err(message) => report.malformed.push(RowError { line, message }),
        }
    }
    Ok(report)
}

fn json_text(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::String(s) => Some(s.clone()),
        other => Some(other.to_string()),
    }
}

fn parse_json_row(v: Value) -> std::result::Result<RawClaimRow, String> {
    let Value::Object(mut obj) = v else {
        return Err("line is not a JSON object".into());
    };
    let mut take = |key: &str| obj.remove(key).as_ref().and_then(json_text);
    let entity = take("entity").unwrap_or_default();
    let attribute = take("attribute").unwrap_or_default();
    let source = take("source").and_then(|s| non_empty(&s));
    let value = take("value").unwrap_or_default();
    let timestamp = match obj.remove("timestamp") {
        None | Some(Value::Null) => None,
        Some(Value::Number(n)) => Some(n.as_i64().ok_or_else(|| format!("timestamp {n} is not an integer"))?),
        Some(Value::String(s)) => parse_timestamp(&s)?,
        Some(other) => return Err(format!("timestamp {other} is not an integer")),
    };
    let extra = obj
        .iter()
        .map(|(k, v)| (k.clone(), json_text(v).unwrap_or_default()))
        .collect();
    let row = RawClaimRow {
        entity,
        attribute,
        source,
        value,
        timestamp,
        extra,
    };
    row.validate()?;
    Ok(row)
}

pub fn parse_jsonl<R: BufRead>(reader: R) -> Result<IngestReport> {
    let mut report = IngestReport::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<jsonl>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<Value>(&line)
            .map_err(|e| e.to_string())
            .and_then(parse_json_row);
        match parsed {
            Ok(row) => report.rows.push(row),
            Err(message) => report.malformed.push(RowError { line: i + 1, message }),
        }
    }
    Ok(report)
}

fn extra_columns(rows: &[RawClaimRow]) -> Vec<String> {
    let mut cols: Vec<String> = rows.iter().flat_map(|r| r.extra.keys().cloned()).collect();
    cols.sort();
    cols.dedup();
    cols
}

/// Writes rows with header `entity,attribute,source,value,timestamp,<extras>`,
/// extras in sorted order.
pub fn write_csv<W: Write>(rows: &[RawClaimRow], writer: W) -> Result<()> {
    let extras = extra_columns(rows);
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = CORE_COLUMNS.to_vec();
    header.extend(extras.iter().map(String::as_str));
    w.write_record(&header)?;
    for r in rows {
        let ts = r.timestamp.map(|t| t.to_string()).unwrap_or_default();
        let mut rec: Vec<&str> = vec![
            &r.entity,
            &r.attribute,
            r.source.as_deref().unwrap_or(""),
            &r.value,
            &ts,
        ];
        rec.extend(extras.iter().map(|c| r.extra.get(c).map_or("", String::as_str)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_jsonl<W: Write>(rows: &[RawClaimRow], mut writer: W) -> Result<()> {
    for r in rows {
        let mut obj = serde_json::Map::new();
        obj.insert("entity".into(), r.entity.clone().into());
        obj.insert("attribute".into(), r.attribute.clone().into());
        obj.insert("source".into(), r.source.clone().map_or(Value::Null, Value::from));
        obj.insert("value".into(), r.value.clone().into());
        obj.insert("timestamp".into(), r.timestamp.map_or(Value::Null, Value::from));
        for (k, v) in &r.extra {
            obj.insert(k.clone(), v.clone().into());
        }
        serde_json::to_writer(&mut writer, &Value::Object(obj))?;
        writer.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
    }
    Ok(())
}
