use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::Deserialize;
use serde_json::{Map, Value};

use super::{compose_text, Corpus, CorpusError, DemoShares, Instance, ThemeRegistry};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    Csv,
}

impl CorpusFormat {
    /// Guesses the format from a file extension, defaulting to JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => CorpusFormat::Csv,
            _ => CorpusFormat::Jsonl,
        }
    }
}

impl FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(CorpusFormat::Jsonl),
            "csv" => Ok(CorpusFormat::Csv),
            other => Err(format!("unknown corpus format '{other}'")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub format: CorpusFormat,
    /// When absent the registry is the set of themes found in the file.
    pub registry: Option<ThemeRegistry>,
    /// Extend the given registry with unseen themes instead of failing.
    pub allow_new_themes: bool,
}

impl LoadOptions {
    pub fn new(format: CorpusFormat) -> Self {
        LoadOptions {
            format,
            registry: None,
            allow_new_themes: false,
        }
    }
}

pub const CSV_COLUMNS: [&str; 12] = [
    "id",
    "title",
    "description",
    "body",
    "theme",
    "aux_label",
    "funding_entity",
    "spend",
    "impressions",
    "demo_shares",
    "region_shares",
    "date",
];

pub fn load_corpus(path: &Path, options: &LoadOptions) -> Result<Corpus, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_corpus(BufReader::new(file), options)
}

pub fn read_corpus<R: Read>(reader: R, options: &LoadOptions) -> Result<Corpus, CorpusError> {
    let records = match options.format {
        CorpusFormat::Jsonl => jsonl_records(BufReader::new(reader))?,
        CorpusFormat::Csv => csv_records(reader)?,
    };

    let mut registry = options.registry.clone();
    let mut discovered = Vec::new();
    let mut seen = HashSet::with_capacity(records.len());
    let mut instances = Vec::with_capacity(records.len());
    for (line, object) in records {
        let inst = instance_from_object(line, object)?;
        if !seen.insert(inst.id.clone()) {
            return Err(CorpusError::DuplicateId { id: inst.id, line });
        }
        match registry.as_mut() {
            Some(reg) if !reg.contains(&inst.theme) => {
                if options.allow_new_themes {
                    reg.insert(inst.theme.clone());
                } else {
                    return Err(CorpusError::UnknownTheme {
                        theme: inst.theme,
                        line,
                    });
                }
            }
            Some(_) => {}
            None => discovered.push(inst.theme.clone()),
        }
        instances.push(inst);
    }
    let registry = match registry {
        Some(reg) => reg,
        None if discovered.is_empty() => {
            // an empty corpus still needs a non-empty registry
            ThemeRegistry::new(["unthemed"])?
        }
        None => ThemeRegistry::new(discovered)?,
    };
    Corpus::new(instances, registry)
}

/// Line number and raw fields of one input record.
type Record = (usize, Map<String, Value>);

fn jsonl_records<R: BufRead>(reader: R) -> Result<Vec<Record>, CorpusError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        match value {
            Value::Object(map) => out.push((line_no, map)),
            _ => {
                return Err(CorpusError::Parse {
                    line: line_no,
                    message: "record must be a JSON object".into(),
                })
            }
        }
    }
    Ok(out)
}

fn csv_records<R: Read>(reader: R) -> Result<Vec<Record>, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| CorpusError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| CorpusError::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let mut map = Map::new();
        for (name, cell) in headers.iter().zip(record.iter()) {
            if cell.trim().is_empty() {
                continue;
            }
            let value = match name {
                "demo_shares" | "region_shares" => serde_json::from_str(cell).map_err(|e| CorpusError::Schema {
                    line,
                    field: name.to_string(),
                    message: format!("invalid JSON cell: {e}"),
                })?,
                _ => Value::String(cell.to_string()),
            };
            map.insert(name.to_string(), value);
        }
        out.push((line, map));
    }
    Ok(out)
}

#[derive(Deserialize)]
struct TextFields {
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    body: Option<String>,
    #[serde(default)]
    aux_label: Option<String>,
    #[serde(default)]
    funding_entity: Option<String>,
}

fn schema(line: usize, field: &str, message: impl Into<String>) -> CorpusError {
    CorpusError::Schema {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn required_string(line: usize, map: &Map<String, Value>, field: &str) -> Result<String, CorpusError> {
    match map.get(field) {
        None | Some(Value::Null) => Err(schema(line, field, "missing required field")),
        Some(Value::String(s)) if s.trim().is_empty() => Err(schema(line, field, "must be non-empty")),
        Some(Value::String(s)) => Ok(s.trim().to_string()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        Some(_) => Err(schema(line, field, "must be a string")),
    }
}

fn instance_from_object(line: usize, mut map: Map<String, Value>) -> Result<Instance, CorpusError> {
    let id = required_string(line, &map, "id")?;
    let theme = required_string(line, &map, "theme")?;

    let spend = match map.remove("spend") {
        None | Some(Value::Null) => None,
        Some(v) => Some(amount(&v).map_err(|m| schema(line, "spend", m))?),
    };
    let impressions = match map.remove("impressions") {
        None | Some(Value::Null) => None,
        Some(v) => {
            let mid = amount(&v).map_err(|m| schema(line, "impressions", m))?;
            Some(mid.floor() as u64)
        }
    };
    let demo_shares: DemoShares = match map.remove("demo_shares") {
        None | Some(Value::Null) => DemoShares::new(),
        Some(v) => serde_json::from_value(v).map_err(|e| schema(line, "demo_shares", e.to_string()))?,
    };
    let region_shares: BTreeMap<String, f64> = match map.remove("region_shares") {
        None | Some(Value::Null) => BTreeMap::new(),
        Some(v) => serde_json::from_value(v).map_err(|e| schema(line, "region_shares", e.to_string()))?,
    };
    let date = match map.remove("date") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(parse_date(&s).map_err(|m| schema(line, "date", m))?),
        Some(_) => return Err(schema(line, "date", "must be an ISO-8601 date string")),
    };

    let fields: TextFields = serde_json::from_value(Value::Object(map)).map_err(|e| CorpusError::Parse {
        line,
        message: e.to_string(),
    })?;
    let text = compose_text(
        fields.title.as_deref(),
        fields.description.as_deref(),
        fields.body.as_deref(),
    )
    .map_err(|_| schema(line, "title/description/body", "at least one text field is required"))?;

    let inst = Instance {
        id,
        title: nonblank(fields.title),
        description: nonblank(fields.description),
        body: nonblank(fields.body),
        text,
        theme,
        aux_label: nonblank(fields.aux_label),
        funding_entity: nonblank(fields.funding_entity),
        spend,
        impressions,
        demo_shares,
        region_shares,
        date,
    };
    inst.validate_shares()
        .map_err(|(field, message)| schema(line, field, message))?;
    Ok(inst)
}

fn nonblank(s: Option<String>) -> Option<String> {
    s.filter(|s| !s.trim().is_empty())
}

fn parse_date(s: &str) -> Result<NaiveDate, String> {
    let s = s.trim();
    // accept full timestamps by keeping the calendar date
    let head = s.get(..10).unwrap_or(s);
    NaiveDate::parse_from_str(head, "%Y-%m-%d").map_err(|e| format!("'{s}': {e}"))
}

/// Reads a nonnegative amount. Ranges (`"lo-hi"` or
/// `{"lower_bound": lo, "upper_bound": hi}`) collapse to their midpoint.
fn amount(value: &Value) -> Result<f64, String> {
    let v = match value {
        Value::Number(n) => n.as_f64().ok_or("not a finite number")?,
        Value::String(s) => parse_amount_str(s)?,
        Value::Object(obj) => {
            let lo = obj
                .get("lower_bound")
                .or_else(|| obj.get("lower"))
                .ok_or("range object needs lower_bound")
                .and_then(|v| scalar(v).map_err(|_| "lower_bound must be numeric"))?;
            let hi = match obj.get("upper_bound").or_else(|| obj.get("upper")) {
                None | Some(Value::Null) => lo,
                Some(v) => scalar(v).map_err(|_| "upper_bound must be numeric")?,
            };
            if hi < lo {
                return Err(format!("range upper bound {hi} below lower bound {lo}"));
            }
            (lo + hi) / 2.0
        }
        _ => return Err("must be a number or range".into()),
    };
    if !v.is_finite() || v < 0.0 {
        return Err(format!("{v} is not a nonnegative amount"));
    }
    Ok(v)
}

fn scalar(value: &Value) -> Result<f64, ()> {
    match value {
        Value::Number(n) => n.as_f64().ok_or(()),
        Value::String(s) => s.trim().parse().map_err(|_| ()),
        _ => Err(()),
    }
}

fn parse_amount_str(s: &str) -> Result<f64, String> {
    let s = s.trim();
    if let Ok(v) = s.parse::<f64>() {
        return Ok(v);
    }
    if let Some((lo, hi)) = s.split_once('-') {
        let lo: f64 = lo.trim().parse().map_err(|_| format!("bad range '{s}'"))?;
        let hi: f64 = hi.trim().parse().map_err(|_| format!("bad range '{s}'"))?;
        if hi < lo {
            return Err(format!("range '{s}' is inverted"));
        }
        return Ok((lo + hi) / 2.0);
    }
    Err(format!("'{s}' is not a number"))
}

/// Writes the corpus in canonical field order.
pub fn write_corpus<W: Write>(corpus: &Corpus, format: CorpusFormat, mut out: W) -> std::io::Result<()> {
    match format {
        CorpusFormat::Jsonl => {
            for inst in corpus.instances() {
                serde_json::to_writer(&mut out, inst)?;
                out.write_all(b"\n")?;
            }
            Ok(())
        }
        CorpusFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(CSV_COLUMNS)?;
            for inst in corpus.instances() {
                let opt = |s: &Option<String>| s.clone().unwrap_or_default();
                let shares = |empty: bool, json: String| if empty { String::new() } else { json };
                w.write_record([
                    inst.id.clone(),
                    opt(&inst.title),
                    opt(&inst.description),
                    opt(&inst.body),
                    inst.theme.clone(),
                    opt(&inst.aux_label),
                    opt(&inst.funding_entity),
                    inst.spend.map(|v| v.to_string()).unwrap_or_default(),
                    inst.impressions.map(|v| v.to_string()).unwrap_or_default(),
                    shares(inst.demo_shares.is_empty(), serde_json::to_string(&inst.demo_shares)?),
                    shares(
                        inst.region_shares.is_empty(),
                        serde_json::to_string(&inst.region_shares)?,
                    ),
                    inst.date.map(|d| d.to_string()).unwrap_or_default(),
                ])?;
            }
            w.flush()
        }
    }
}
