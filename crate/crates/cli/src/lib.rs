//! Commands behind the `tracknet` binary.
//!
//! `run` writes, into the output directory:
//!
//! | file | contents |
//! |------|----------|
//! | `summary.json` | [`RunReport`] |
//! | `voltage.csv` | time, node_id, battery_mv, charge_mj, running, max_page, camp |
//! | `task_starts.csv` | time, node_id, task_id, battery_mv |
//! | `sessions.csv` | one row per download session |
//! | `intercontact.csv` | node_id, from, to, days |
//! | `intercontact_cdf.csv` | days, count, cdf |
//! | `daily.csv` | day, node_id, pages_acquired, pages_downloaded, min_mv, max_mv |
//! | `propagation.csv` | node_id, version, edited_at, first_contact_after, applied_at |
//! | `gateways.csv` | per-gateway counters |
//! | `journal.jsonl` | cloud journal |
//! | `registry.toml` | metadata registry used by the nodes |
//! | `node_<id>.plog` | page log dump of each node |
//! | `events.log` | only with `--event-log` |
//!
//! `logdump` prints one tab-separated line per record:
//! `page_no  type  timestamp  fields`, where fields are `name=value` pairs.
//! A page holding an unregistered type id gets a `!unknown` line at the
//! failing offset and decoding resumes with the next page.
//!
//! `ledger` prints `next=<page> pending=[a..b,c..d]`, where `next` is the lowest
//! pending page, or the page after the newest known one when nothing is pending.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use tracknet::cloud::{CloudError, CloudService, CorruptJournal, Journal};
use tracknet::node::SECONDS_PER_DAY;
use tracknet::pagelog::{DumpError, PageLog};
use tracknet::sim::metrics::Summary;
use tracknet::sim::scenario::{bundled, ScenarioError};
use tracknet::sim::{self, RunOptions, Scenario, SimOutput};
use tracknet::tdf::{self, MetadataRegistry, TdfError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Scenario {
        path: PathBuf,
        #[source]
        source: ScenarioError,
    },
    #[error("{path}: {source}")]
    Journal {
        path: PathBuf,
        #[source]
        source: CorruptJournal,
    },
    #[error("{path}: {source}")]
    Replay {
        path: PathBuf,
        #[source]
        source: CloudError,
    },
    #[error("{path}: {source}")]
    Dump {
        path: PathBuf,
        #[source]
        source: DumpError,
    },
    #[error("{path}: {source}")]
    Registry {
        path: PathBuf,
        #[source]
        source: TdfError,
    },
    #[error("cannot write output: {0}")]
    Output(#[from] io::Error),
    #[error("cannot write csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// Data and I/O problems exit with 2; usage errors are reported by the
    /// argument parser with 1.
    pub fn exit_code(&self) -> i32 {
        2
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DelayPercentiles {
    pub count: u64,
    pub p50_s: Option<u64>,
    pub p90_s: Option<u64>,
    pub max_s: Option<u64>,
}

impl DelayPercentiles {
    fn from(mut delays: Vec<u64>) -> Self {
        delays.sort_unstable();
        let pick = |q: f64| (!delays.is_empty()).then(|| delays[((delays.len() - 1) as f64 * q).round() as usize]);
        Self {
            count: delays.len() as u64,
            p50_s: pick(0.5),
            p90_s: pick(0.9),
            max_s: delays.last().copied(),
        }
    }
}

/// Result of one `run`; serialized as summary.json.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub duration_days: u32,
    pub nodes: usize,
    pub gateways: usize,
    pub summary: Summary,
    pub config_propagation: DelayPercentiles,
    pub files: Vec<String>,
}

/// Reads a scenario file. A bare bundled scenario name is accepted when no
/// file of that name exists.
pub fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => match path.to_str().and_then(bundled::get) {
            Some(t) if e.kind() == io::ErrorKind::NotFound => t.to_string(),
            _ => return Err(io_err(path)(e)),
        },
    };
    Scenario::from_toml(&text).map_err(|source| CliError::Scenario {
        path: path.to_path_buf(),
        source,
    })
}

pub fn cmd_run(scenario_path: &Path, seed: u64, out_dir: &Path, event_log: bool) -> Result<RunReport, CliError> {
    let mut scenario = load_scenario(scenario_path)?;
    scenario.seed = seed;
    let out = sim::run(&scenario, &RunOptions { event_log }).map_err(|e| CliError::Scenario {
        path: scenario_path.to_path_buf(),
        source: e.into(),
    })?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let files = write_outputs(&out, out_dir, event_log)?;

    let delays = out
        .metrics
        .propagation
        .iter()
        .filter_map(|p| Some(p.applied_at? - p.edited_at))
        .collect();
    let report = RunReport {
        scenario: scenario.name.clone(),
        seed,
        duration_days: scenario.duration_days,
        nodes: out.nodes.len(),
        gateways: out.gateways.len(),
        summary: out.metrics.summary(),
        config_propagation: DelayPercentiles::from(delays),
        files,
    };
    let path = out_dir.join("summary.json");
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    fs::write(&path, json).map_err(io_err(&path))?;
    Ok(report)
}

fn write_csv<T: Serialize>(dir: &Path, name: &str, rows: impl IntoIterator<Item = T>, files: &mut Vec<String>) -> Result<(), CliError> {
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(&path))?;
    files.push(name.to_string());
    Ok(())
}

#[derive(Serialize)]
struct CdfRow {
    days: u64,
    count: u64,
    cdf: f64,
}

#[derive(Serialize)]
struct DailyRow {
    day: u64,
    node_id: u32,
    pages_acquired: u64,
    pages_downloaded: u64,
    min_mv: u16,
    max_mv: u16,
}

#[derive(Serialize)]
struct GatewayRow {
    gateway_id: u32,
    sessions: u64,
    pages_downloaded: u64,
    stored: u64,
    duplicates: u64,
    mismatches: u64,
    retries: u64,
    contacts_lost: u64,
    loss_reports: u64,
    configs_applied: u64,
    firmware_applied: u64,
}

fn write_outputs(out: &SimOutput, dir: &Path, event_log: bool) -> Result<Vec<String>, CliError> {
    let m = &out.metrics;
    let mut files = vec!["summary.json".to_string()];
    write_csv(dir, "voltage.csv", &m.trace, &mut files)?;
    write_csv(dir, "task_starts.csv", &m.task_starts, &mut files)?;
    write_csv(dir, "sessions.csv", &m.sessions, &mut files)?;
    write_csv(dir, "intercontact.csv", &m.intercontacts, &mut files)?;

    let mut hist: BTreeMap<u64, u64> = BTreeMap::new();
    for r in &m.intercontacts {
        *hist.entry(r.days).or_default() += 1;
    }
    let total = m.intercontacts.len().max(1) as f64;
    let mut acc = 0;
    let cdf: Vec<CdfRow> = hist
        .into_iter()
        .map(|(days, count)| {
            acc += count;
            CdfRow {
                days,
                count,
                cdf: acc as f64 / total,
            }
        })
        .collect();
    write_csv(dir, "intercontact_cdf.csv", cdf, &mut files)?;
    write_csv(dir, "daily.csv", daily_rows(out), &mut files)?;
    write_csv(dir, "propagation.csv", &m.propagation, &mut files)?;
    write_csv(
        dir,
        "gateways.csv",
        m.gateways.iter().map(|(&gateway_id, s)| GatewayRow {
            gateway_id,
            sessions: s.sessions,
            pages_downloaded: s.pages_downloaded,
            stored: s.stored,
            duplicates: s.duplicates,
            mismatches: s.mismatches,
            retries: s.retries,
            contacts_lost: s.contacts_lost,
            loss_reports: s.loss_reports,
            configs_applied: s.configs_applied,
            firmware_applied: s.firmware_applied,
        }),
        &mut files,
    )?;

    let path = dir.join("journal.jsonl");
    fs::write(&path, out.cloud.journal().as_str()).map_err(io_err(&path))?;
    files.push("journal.jsonl".into());
    let path = dir.join("registry.toml");
    fs::write(&path, out.cloud.registry.to_toml()).map_err(io_err(&path))?;
    files.push("registry.toml".into());
    for n in &out.nodes {
        let name = format!("node_{}.plog", n.node_id);
        let path = dir.join(&name);
        let f = fs::File::create(&path).map_err(io_err(&path))?;
        let mut w = io::BufWriter::new(f);
        n.log.dump(&mut w).and_then(|_| w.flush()).map_err(io_err(&path))?;
        files.push(name);
    }
    if event_log {
        let path = dir.join("events.log");
        let mut text = out.event_log.join("\n");
        text.push('\n');
        fs::write(&path, text).map_err(io_err(&path))?;
        files.push("events.log".into());
    }
    Ok(files)
}

/// Per node and day: pages finalized, pages downloaded and the voltage range.
fn daily_rows(out: &SimOutput) -> Vec<DailyRow> {
    let mut rows: BTreeMap<(u64, u32), DailyRow> = BTreeMap::new();
    let mut last_max: BTreeMap<u32, i64> = BTreeMap::new();
    for r in &out.metrics.trace {
        let day = r.time / SECONDS_PER_DAY;
        let row = rows.entry((day, r.node_id)).or_insert(DailyRow {
            day,
            node_id: r.node_id,
            pages_acquired: 0,
            pages_downloaded: 0,
            min_mv: u16::MAX,
            max_mv: 0,
        });
        row.min_mv = row.min_mv.min(r.battery_mv);
        row.max_mv = row.max_mv.max(r.battery_mv);
        let max = r.max_page.map_or(-1, |m| m as i64);
        let prev = last_max.insert(r.node_id, max).unwrap_or(-1);
        row.pages_acquired += (max - prev).max(0) as u64;
    }
    for s in &out.metrics.sessions {
        if let Some(row) = rows.get_mut(&(s.time / SECONDS_PER_DAY, s.node_id)) {
            row.pages_downloaded += s.pages;
        }
    }
    rows.into_values().collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LogDumpStats {
    pub pages: u64,
    pub records: u64,
    pub flagged_pages: u64,
}

pub const LOGDUMP_HEADER: &str = "page_no\ttype\ttimestamp\tfields";

pub fn cmd_logdump(log_path: &Path, registry_path: &Path, out: &mut impl Write) -> Result<LogDumpStats, CliError> {
    let text = fs::read_to_string(registry_path).map_err(io_err(registry_path))?;
    let registry = MetadataRegistry::from_toml(&text).map_err(|source| CliError::Registry {
        path: registry_path.to_path_buf(),
        source,
    })?;
    let bytes = fs::read(log_path).map_err(io_err(log_path))?;
    let log = if bytes.is_empty() {
        PageLog::default()
    } else {
        PageLog::load(bytes.as_slice()).map_err(|source| CliError::Dump {
            path: log_path.to_path_buf(),
            source,
        })?
    };
    writeln!(out, "{LOGDUMP_HEADER}")?;
    let mut stats = LogDumpStats::default();
    for page in log.retained() {
        stats.pages += 1;
        let (records, failure) = match tdf::decode_stream(&page.data, &registry) {
            Ok(r) => (r, None),
            Err(e) => {
                let offset = match e {
                    TdfError::UnknownTypeId { offset, .. } | TdfError::TruncatedRecord(offset) => offset,
                    _ => 0,
                };
                let before = tdf::decode_stream(&page.data[..offset], &registry).unwrap_or_default();
                (before, Some((offset, e)))
            }
        };
        for rec in &records {
            let desc = registry.get(rec.type_id).expect("decoded records are registered");
            let fields: Vec<String> = desc
                .decode_fields(&rec.payload)
                .into_iter()
                .map(|(f, v)| format!("{}={v}", f.name))
                .collect();
            writeln!(out, "{}\t{}\t{}\t{}", page.page_no, desc.name, rec.timestamp, fields.join(" "))?;
            stats.records += 1;
        }
        if let Some((offset, e)) = failure {
            stats.flagged_pages += 1;
            writeln!(out, "{}\t!unknown\t-\toffset={offset} error={e}", page.page_no)?;
        }
    }
    Ok(stats)
}

pub fn cmd_ledger(journal_path: &Path, node_id: u32, out: &mut impl Write) -> Result<(), CliError> {
    let bytes = fs::read(journal_path).map_err(io_err(journal_path))?;
    // Parse first so corruption is reported with its byte offset.
    Journal::parse_bytes(&bytes).map_err(|source| CliError::Journal {
        path: journal_path.to_path_buf(),
        source,
    })?;
    let text = String::from_utf8(bytes).expect("checked by parse_bytes");
    let cloud = CloudService::recover(tdf::types::standard_registry(), &text).map_err(|source| CliError::Replay {
        path: journal_path.to_path_buf(),
        source,
    })?;
    if cloud.ledger().node(node_id).is_none() {
        writeln!(out, "no data for node")?;
        return Ok(());
    }
    let view = cloud.view(node_id);
    let ranges: Vec<String> = view.next.pending.iter().map(|r| format!("{}..{}", r.first, r.last)).collect();
    // With nothing pending, the next page needed is the one after the newest known.
    let next = view.next.lowest.unwrap_or(view.known_max_page.map_or(0, |m| m + 1));
    writeln!(out, "next={next} pending=[{}]", ranges.join(","))?;
    Ok(())
}
