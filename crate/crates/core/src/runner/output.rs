//! Report and raw-ensemble writers.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use super::{ConfigError, OutputFormat, RawRecords, RunArtifacts, RunError};

/// Paths written by [`write_outputs`]; empty when the report went to stdout.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WrittenFiles {
    pub report: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub raw: Option<PathBuf>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn fmt_value(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// CSV rendering of a report: the counts table and a `key,value` summary.
pub fn report_csv(artifacts: &RunArtifacts) -> (String, String) {
    let r = &artifacts.report;
    let mut counts = String::new();
    if let Some(table) = r.counts_table() {
        counts.push_str("setting_a,setting_b,n_pp,n_pm,n_mp,n_mm,e\n");
        let (n_a, n_b) = table.shape();
        for a in 0..n_a {
            for b in 0..n_b {
                let c = table.cell(a, b);
                let e = r.e_values.as_ref().and_then(|e| e[a][b]);
                let _ = writeln!(counts, "{a},{b},{},{},{},{},{}", c[0], c[1], c[2], c[3], fmt_opt(e));
            }
        }
    } else {
        let names: Vec<String> = r.extras["nodes"]
            .as_array()
            .map(|a| a.iter().map(fmt_value).collect())
            .unwrap_or_default();
        let _ = writeln!(counts, "{},count", names.join(","));
        let mut prefix = Vec::new();
        flatten_counts(&r.counts, &mut prefix, &mut counts);
    }

    let mut summary = String::from("key,value\n");
    let _ = writeln!(summary, "scenario,{}", r.manifest.config.scenario.id());
    let _ = writeln!(summary, "seed,{}", r.manifest.config.seed);
    let _ = writeln!(summary, "version,{}", r.manifest.version);
    let _ = writeln!(summary, "timestamp,{}", r.manifest.timestamp.clone().unwrap_or_default());
    let _ = writeln!(summary, "keep_rate,{}", r.keep_rate);
    let _ = writeln!(summary, "chsh_s,{}", fmt_opt(r.chsh_s));
    let _ = writeln!(summary, "nosignal_delta,{}", fmt_opt(r.nosignal_delta));
    if let Value::Object(map) = &r.extras {
        for (k, v) in map {
            if v.is_object() || k == "nodes" {
                continue;
            }
            let cell = fmt_value(v);
            if cell.contains(',') {
                let _ = writeln!(summary, "{k},\"{}\"", cell.replace('"', "\"\""));
            } else {
                let _ = writeln!(summary, "{k},{cell}");
            }
        }
    }
    (counts, summary)
}

fn flatten_counts(v: &Value, prefix: &mut Vec<usize>, out: &mut String) {
    match v {
        Value::Array(items) => {
            for (i, item) in items.iter().enumerate() {
                prefix.push(i);
                flatten_counts(item, prefix, out);
                prefix.pop();
            }
        }
        leaf => {
            let idx: Vec<String> = prefix.iter().map(|i| i.to_string()).collect();
            let _ = writeln!(out, "{},{}", idx.join(","), leaf);
        }
    }
}

/// Raw per-trial CSV, discarded trials included.
pub fn raw_csv(raw: &RawRecords) -> String {
    let mut out = String::new();
    match raw {
        RawRecords::Rounds(records) => {
            out.push_str("round,setting_a,setting_b,outcome_a,outcome_b,kept\n");
            for (i, r) in records.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{i},{},{},{},{},{}",
                    r.setting_a, r.setting_b, r.outcome_a, r.outcome_b, u8::from(r.kept)
                );
            }
        }
        RawRecords::Assignments { names, rows } => {
            let _ = writeln!(out, "round,{},kept", names.join(","));
            for (i, (a, kept)) in rows.iter().enumerate() {
                let vals: Vec<String> = a.values().iter().map(|v| v.to_string()).collect();
                let _ = writeln!(out, "{i},{},{}", vals.join(","), u8::from(*kept));
            }
        }
    }
    out
}

fn summary_path(path: &Path) -> PathBuf {
    path.with_extension("summary.csv")
}

fn raw_path(path: &Path) -> PathBuf {
    path.with_extension("raw.csv")
}

/// Writes the report (to `output_path`, or stdout when unset) and the raw
/// ensemble when one was produced.
pub fn write_outputs(artifacts: &RunArtifacts) -> Result<WrittenFiles, RunError> {
    let config = &artifacts.report.manifest.config;
    let format = config.output_format;
    let path = config_output_path(artifacts);
    let mut written = WrittenFiles::default();
    match (&path, format) {
        (None, OutputFormat::Json) => print!("{}", artifacts.report.to_json()),
        (None, OutputFormat::Csv) => {
            let (counts, summary) = report_csv(artifacts);
            print!("{counts}\n{summary}");
        }
        (Some(p), OutputFormat::Json) => {
            create_parent(p)?;
            fs::write(p, artifacts.report.to_json())?;
            written.report = Some(p.clone());
        }
        (Some(p), OutputFormat::Csv) => {
            create_parent(p)?;
            let (counts, summary) = report_csv(artifacts);
            fs::write(p, counts)?;
            let s = summary_path(p);
            fs::write(&s, summary)?;
            written.report = Some(p.clone());
            written.summary = Some(s);
        }
    }
    if let Some(raw) = &artifacts.raw {
        let p = path.ok_or_else(|| ConfigError::new("emit_raw", "requires output_path (or --out)"))?;
        let r = raw_path(&p);
        fs::write(&r, raw_csv(raw))?;
        written.raw = Some(r);
    }
    Ok(written)
}

// The manifest echo omits the output location; the runner keeps it here.
fn config_output_path(artifacts: &RunArtifacts) -> Option<PathBuf> {
    artifacts.output_path.as_ref().map(PathBuf::from)
}

fn create_parent(p: &Path) -> std::io::Result<()> {
    match p.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir),
        _ => Ok(()),
    }
}
