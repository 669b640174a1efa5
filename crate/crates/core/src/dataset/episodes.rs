//! Episode files: wide CSV (one row per patient-step) and JSONL (one episode
//! per line). Both start with a format-version line.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RawAction, RawEpisode, RawStep, MAX_EPISODE_LEN};
use crate::{Error, Result};

pub const EPISODE_FORMAT_VERSION: u32 = 1;
const CSV_VERSION_LINE: &str = "#ventrl-episodes v1";
const CSV_VERSION_PREFIX: &str = "#ventrl-episodes";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpisodeFormat {
    Csv,
    Jsonl,
}

impl EpisodeFormat {
    /// Guess from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(EpisodeFormat::Csv),
            "jsonl" | "ndjson" => Some(EpisodeFormat::Jsonl),
            _ => None,
        }
    }
}

/// Read episodes in file order. `registry` fixes the feature column order of
/// the returned steps; columns absent from the file load as missing.
pub fn load_episodes(
    path: impl AsRef<Path>,
    format: EpisodeFormat,
    registry: &[String],
) -> Result<Vec<RawEpisode>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut episodes = match format {
        EpisodeFormat::Csv => parse_csv(&text, registry)?,
        EpisodeFormat::Jsonl => parse_jsonl(&text, registry)?,
    };
    for ep in &mut episodes {
        if ep.steps.len() > MAX_EPISODE_LEN {
            log::warn!(
                "patient {}: {} steps, truncating to the first {MAX_EPISODE_LEN}",
                ep.patient_id,
                ep.steps.len()
            );
            ep.steps.truncate(MAX_EPISODE_LEN);
        }
    }
    Ok(episodes)
}

pub fn save_episodes(
    episodes: &[RawEpisode],
    path: impl AsRef<Path>,
    format: EpisodeFormat,
    registry: &[String],
) -> Result<()> {
    let path = path.as_ref();
    let text = match format {
        EpisodeFormat::Csv => render_csv(episodes, registry)?,
        EpisodeFormat::Jsonl => render_jsonl(episodes, registry)?,
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_flag(raw: &str, line: u64) -> Result<bool> {
    match raw.trim() {
        "1" | "true" | "True" | "TRUE" => Ok(true),
        "0" | "false" | "False" | "FALSE" => Ok(false),
        other => Err(Error::Parse {
            line,
            message: format!("mortality_90d must be 0/1, got {other:?}"),
        }),
    }
}

fn parse_opt(raw: &str, column: &str, line: u64) -> Result<Option<f64>> {
    let raw = raw.trim();
    if raw.is_empty() || raw.eq_ignore_ascii_case("nan") || raw.eq_ignore_ascii_case("na") {
        return Ok(None);
    }
    let v: f64 = raw.parse().map_err(|_| Error::Parse {
        line,
        message: format!("column {column}: cannot parse {raw:?} as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("column {column}: non-finite value"),
        });
    }
    Ok(Some(v))
}

fn make_action(vals: [Option<f64>; 3], line: u64) -> Result<Option<RawAction>> {
    match vals {
        [Some(vt), Some(fio2), Some(peep)] => {
            if vt < 0.0 || fio2 < 0.0 || peep < 0.0 {
                return Err(Error::Parse {
                    line,
                    message: "ventilator settings must be non-negative".into(),
                });
            }
            Ok(Some(RawAction { vt, fio2, peep }))
        }
        _ => Ok(None),
    }
}

/// Accumulates rows per patient in order of first appearance.
struct Grouper {
    order: Vec<RawEpisode>,
    index: HashMap<String, (usize, i64)>,
}

impl Grouper {
    fn new() -> Self {
        Grouper {
            order: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn push(&mut self, id: &str, step: i64, survived: bool, s: RawStep, line: u64) -> Result<()> {
        match self.index.get_mut(id) {
            Some((pos, last)) => {
                if step <= *last {
                    return Err(Error::Ordering {
                        line,
                        patient_id: id.to_string(),
                    });
                }
                *last = step;
                let ep = &mut self.order[*pos];
                if ep.survived != survived {
                    return Err(Error::Parse {
                        line,
                        message: format!("patient {id}: inconsistent mortality_90d"),
                    });
                }
                ep.steps.push(s);
            }
            None => {
                self.index.insert(id.to_string(), (self.order.len(), step));
                self.order.push(RawEpisode {
                    patient_id: id.to_string(),
                    steps: vec![s],
                    survived,
                    metadata: BTreeMap::new(),
                });
            }
        }
        Ok(())
    }
}

fn parse_csv(text: &str, registry: &[String]) -> Result<Vec<RawEpisode>> {
    // The version line, when present, is consumed before handing off to csv.
    let (body, line_offset) = match text.lines().next() {
        Some(first) if first.starts_with(CSV_VERSION_PREFIX) => {
            if first.trim() != CSV_VERSION_LINE {
                return Err(Error::Version {
                    found: first.trim().to_string(),
                    expected: CSV_VERSION_LINE.to_string(),
                });
            }
            (text[first.len()..].trim_start_matches(['\r', '\n']), 1)
        }
        _ => (text, 0),
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mandatory = ["patient_id", "step", "mortality_90d"];
    let missing: Vec<_> = mandatory.iter().filter(|m| col(m).is_none()).collect();
    if !missing.is_empty() {
        return Err(Error::Schema(format!("missing mandatory columns {missing:?}")));
    }
    let known: Vec<&str> = mandatory
        .iter()
        .copied()
        .chain(["vt_raw", "fio2_raw", "peep_raw"])
        .chain(registry.iter().map(String::as_str))
        .collect();
    if let Some(unknown) = headers.iter().find(|h| !known.contains(h)) {
        return Err(Error::Schema(format!(
            "column {unknown:?} is not in the feature registry"
        )));
    }
    let (pid, step_col, mort) = (
        col("patient_id").unwrap(),
        col("step").unwrap(),
        col("mortality_90d").unwrap(),
    );
    let feature_cols: Vec<Option<usize>> = registry.iter().map(|n| col(n)).collect();
    let action_cols = [col("vt_raw"), col("fio2_raw"), col("peep_raw")];

    let mut groups = Grouper::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0) + line_offset;
        let field = |i: usize| record.get(i).unwrap_or("");
        let id = field(pid);
        if id.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty patient_id".into(),
            });
        }
        let step: i64 = field(step_col).parse().map_err(|_| Error::Parse {
            line,
            message: format!("step {:?} is not an integer", field(step_col)),
        })?;
        let survived = parse_flag(field(mort), line)?;
        let features = feature_cols
            .iter()
            .zip(registry)
            .map(|(c, name)| match c {
                Some(i) => parse_opt(field(*i), name, line),
                None => Ok(None),
            })
            .collect::<Result<Vec<_>>>()?;
        let mut raw = [None; 3];
        for (slot, (c, name)) in raw
            .iter_mut()
            .zip(action_cols.iter().zip(["vt_raw", "fio2_raw", "peep_raw"]))
        {
            if let Some(i) = c {
                *slot = parse_opt(field(*i), name, line)?;
            }
        }
        let action = make_action(raw, line)?;
        groups.push(id, step, survived, RawStep { features, action }, line)?;
    }
    Ok(groups.order)
}

fn render_csv(episodes: &[RawEpisode], registry: &[String]) -> Result<String> {
    let mut out = Vec::new();
    writeln!(out, "{CSV_VERSION_LINE}").expect("write to Vec");
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let mut header = vec!["patient_id".to_string(), "step".to_string()];
        header.extend(registry.iter().cloned());
        header.extend(["vt_raw", "fio2_raw", "peep_raw", "mortality_90d"].map(String::from));
        w.write_record(&header)?;
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for ep in episodes {
            for (t, step) in ep.steps.iter().enumerate() {
                if step.features.len() != registry.len() {
                    return Err(Error::Shape(format!(
                        "patient {}: {} feature values for a registry of {}",
                        ep.patient_id,
                        step.features.len(),
                        registry.len()
                    )));
                }
                let mut row = vec![ep.patient_id.clone(), t.to_string()];
                row.extend(step.features.iter().map(|&v| fmt(v)));
                let a = step.action;
                row.push(fmt(a.map(|a| a.vt)));
                row.push(fmt(a.map(|a| a.fio2)));
                row.push(fmt(a.map(|a| a.peep)));
                row.push(if ep.survived { "1" } else { "0" }.to_string());
                w.write_record(&row)?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv buffer>", e))?;
    }
    Ok(String::from_utf8(out).expect("csv output is utf-8"))
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonlHeader {
    format: String,
    version: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct StepRecord {
    features: BTreeMap<String, Option<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vt_raw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fio2_raw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    peep_raw: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EpisodeRecord {
    patient_id: String,
    mortality_90d: serde_json::Value,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
    steps: Vec<StepRecord>,
}

fn parse_jsonl(text: &str, registry: &[String]) -> Result<Vec<RawEpisode>> {
    let position: HashMap<&str, usize> = registry
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let mut episodes = Vec::new();
    let mut seen = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i as u64 + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(raw).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if value.get("format").is_some() {
            let header: JsonlHeader =
                serde_json::from_value(value).map_err(|e| Error::Parse {
                    line,
                    message: e.to_string(),
                })?;
            if header.format != "ventrl-episodes" || header.version != EPISODE_FORMAT_VERSION {
                return Err(Error::Version {
                    found: format!("{} v{}", header.format, header.version),
                    expected: format!("ventrl-episodes v{EPISODE_FORMAT_VERSION}"),
                });
            }
            continue;
        }
        for key in ["patient_id", "mortality_90d", "steps"] {
            if value.get(key).is_none() {
                return Err(Error::Schema(format!("line {line}: missing key {key:?}")));
            }
        }
        let rec: EpisodeRecord = serde_json::from_value(value).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let survived = match &rec.mortality_90d {
            serde_json::Value::Bool(b) => *b,
            serde_json::Value::Number(n) => parse_flag(&n.to_string(), line)?,
            other => parse_flag(&other.to_string(), line)?,
        };
        if seen.insert(rec.patient_id.clone(), line).is_some() {
            return Err(Error::Ordering {
                line,
                patient_id: rec.patient_id,
            });
        }
        let mut steps = Vec::with_capacity(rec.steps.len());
        for s in rec.steps {
            let mut features = vec![None; registry.len()];
            for (name, v) in s.features {
                let idx = *position.get(name.as_str()).ok_or_else(|| {
                    Error::Schema(format!("line {line}: feature {name:?} is not registered"))
                })?;
                if let Some(x) = v {
                    if !x.is_finite() {
                        return Err(Error::Parse {
                            line,
                            message: format!("feature {name}: non-finite value"),
                        });
                    }
                }
                features[idx] = v;
            }
            let action = make_action([s.vt_raw, s.fio2_raw, s.peep_raw], line)?;
            steps.push(RawStep { features, action });
        }
        episodes.push(RawEpisode {
            patient_id: rec.patient_id,
            steps,
            survived,
            metadata: rec.metadata,
        });
    }
    Ok(episodes)
}

fn render_jsonl(episodes: &[RawEpisode], registry: &[String]) -> Result<String> {
    let mut out = serde_json::to_string(&JsonlHeader {
        format: "ventrl-episodes".into(),
        version: EPISODE_FORMAT_VERSION,
    })?;
    out.push('\n');
    for ep in episodes {
        let steps = ep
            .steps
            .iter()
            .map(|s| {
                if s.features.len() != registry.len() {
                    return Err(Error::Shape(format!(
                        "patient {}: feature vector does not match registry",
                        ep.patient_id
                    )));
                }
                Ok(StepRecord {
                    features: registry.iter().cloned().zip(s.features.iter().copied()).collect(),
                    vt_raw: s.action.map(|a| a.vt),
                    fio2_raw: s.action.map(|a| a.fio2),
                    peep_raw: s.action.map(|a| a.peep),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let rec = EpisodeRecord {
            patient_id: ep.patient_id.clone(),
            mortality_90d: serde_json::Value::from(u8::from(ep.survived)),
            metadata: ep.metadata.clone(),
            steps,
        };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    Ok(out)
}
