use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::{Aggregates, RequestRow};
use super::scenario::{ClientMode, Scenario};
use crate::stub::{Action, RemoteTime, Winner};

pub const TRACE_FILE: &str = "trace.csv";
pub const AGGREGATES_FILE: &str = "aggregates.json";
pub const CSV_HEADER: [&str; 6] = [
    "index",
    "t_remote_ms",
    "t_local_ms",
    "winner",
    "q_after",
    "action",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    pub mode: ClientMode,
    pub t_max_ms: u32,
    pub realtime: bool,
    pub rows: Vec<RequestRow>,
    pub aggregates: Aggregates,
}

/// The JSON file written next to the CSV trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatesFile {
    pub scenario: String,
    pub seed: u64,
    pub mode: ClientMode,
    pub t_max_ms: u32,
    pub realtime: bool,
    #[serde(flatten)]
    pub aggregates: Aggregates,
}

impl MetricsReport {
    pub fn new(sc: &Scenario, rows: Vec<RequestRow>, realtime: bool) -> Self {
        let aggregates = Aggregates::compute(&rows, sc.service.t_max_ms as f64);
        MetricsReport {
            scenario: sc.name.clone(),
            seed: sc.seed,
            mode: sc.mode,
            t_max_ms: sc.service.t_max_ms,
            realtime,
            rows,
            aggregates,
        }
    }

    pub fn aggregates_file(&self) -> AggregatesFile {
        AggregatesFile {
            scenario: self.scenario.clone(),
            seed: self.seed,
            mode: self.mode,
            t_max_ms: self.t_max_ms,
            realtime: self.realtime,
            aggregates: self.aggregates.clone(),
        }
    }

    pub fn csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        for r in &self.rows {
            w.write_record(csv_fields(r)).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

fn ms(v: f64) -> String {
    format!("{v:.3}")
}

fn csv_fields(r: &RequestRow) -> [String; 6] {
    [
        r.index.to_string(),
        match r.t_remote {
            Some(RemoteTime::Completed(t)) => ms(t),
            Some(RemoteTime::TimedOut) => "timeout".into(),
            None => String::new(),
        },
        r.t_local_ms.map(ms).unwrap_or_default(),
        r.winner.map(|w| w.as_str()).unwrap_or("none").into(),
        r.q_after.map(|q| q.to_string()).unwrap_or_default(),
        r.action.as_str().into(),
    ]
}

/// One parsed CSV data row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub index: u64,
    pub t_remote: Option<RemoteTime>,
    pub t_local_ms: Option<f64>,
    pub winner: Option<Winner>,
    pub q_after: Option<f64>,
    pub action: Action,
}

pub fn parse_csv(raw: &[u8]) -> Result<Vec<CsvRow>, String> {
    let mut r = csv::Reader::from_reader(raw);
    let header: Vec<String> = r
        .headers()
        .map_err(|e| e.to_string())?
        .iter()
        .map(String::from)
        .collect();
    if header != CSV_HEADER {
        return Err(format!("unexpected header {header:?}"));
    }
    let num = |s: &str| -> Result<Option<f64>, String> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|e| format!("`{s}`: {e}"))
        }
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        rows.push(CsvRow {
            index: f(0).parse().map_err(|e| format!("index: {e}"))?,
            t_remote: match f(1) {
                "timeout" => Some(RemoteTime::TimedOut),
                s => num(s)?.map(RemoteTime::Completed),
            },
            t_local_ms: num(f(2))?,
            winner: match f(3) {
                "remote" => Some(Winner::Remote),
                "local" => Some(Winner::Local),
                "none" => None,
                s => return Err(format!("winner `{s}`")),
            },
            q_after: num(f(4))?,
            action: match f(5) {
                "" => Action::None,
                "start_local" => Action::StartLocal,
                "stop_local" => Action::StopLocal,
                s => return Err(format!("action `{s}`")),
            },
        });
    }
    Ok(rows)
}

/// Writes `trace.csv` and `aggregates.json` into `dir`.
pub fn emit_report(report: &MetricsReport, dir: &Path) -> io::Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(TRACE_FILE);
    let json_path = dir.join(AGGREGATES_FILE);
    fs::write(&csv_path, report.csv())?;
    let mut json =
        serde_json::to_vec_pretty(&report.aggregates_file()).map_err(io::Error::other)?;
    json.push(b'\n');
    fs::write(&json_path, json)?;
    Ok((csv_path, json_path))
}

/// Reads back a report directory.
pub fn load_report(dir: &Path) -> io::Result<(AggregatesFile, Vec<CsvRow>)> {
    let agg: AggregatesFile =
        serde_json::from_slice(&fs::read(dir.join(AGGREGATES_FILE))?).map_err(io::Error::other)?;
    let rows = parse_csv(&fs::read(dir.join(TRACE_FILE))?).map_err(io::Error::other)?;
    Ok((agg, rows))
}
