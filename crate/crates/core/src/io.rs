//! Text formats: the counts table, per-region results, p/q tables and
//! external total-effect statistics.
//!
//! Counts table layout (tab separated, `#` lines are metadata):
//!
//! ```text
//! #X:         0   0   1   1
//! #libsize:   1.2e7   9.8e6   1.1e7   1.0e7
//! #bin_width: 20
//! region_id   bin   s1  s2  s3  s4
//! chr1:1000   0     3   0   5   2
//! chr1:1000   1     1   4   0   7
//! ```
//!
//! `#libsize` defaults to 1 for every sample and `#bin_width` to 1. Bins of
//! a region must be consecutive integers; they are rebinned if asked and
//! right-padded with zero bins to a power of two.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::glm::{ingest_external_total, TotalEffectEstimate};
use crate::pipeline::{RegionBatch, RegionOutcome};
use crate::simulate::ScoredDataset;
use crate::types::{CountsMatrix, Covariate};

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn parse_floats(rest: &str, line: usize, what: &str) -> Result<Vec<f64>> {
    rest.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| parse_err(line, format!("{what}: not a number: {t:?}")))
        })
        .collect()
}

pub fn read_counts_tsv(path: &Path, rebin: usize) -> Result<RegionBatch> {
    parse_counts_tsv(&read_text(path)?, rebin)
}

pub fn parse_counts_tsv(text: &str, rebin: usize) -> Result<RegionBatch> {
    let mut x: Option<Vec<f64>> = None;
    let mut lib: Option<Vec<f64>> = None;
    let mut bin_width: u32 = 1;
    let mut header_seen = false;
    let mut order: Vec<String> = Vec::new();
    let mut regions: HashMap<String, BTreeMap<i64, Vec<u64>>> = HashMap::new();

    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            let meta = meta.trim_start();
            if let Some(rest) = meta.strip_prefix("X:") {
                x = Some(parse_floats(rest, ln, "covariate")?);
            } else if let Some(rest) = meta.strip_prefix("libsize:") {
                lib = Some(parse_floats(rest, ln, "library size")?);
            } else if let Some(rest) = meta.strip_prefix("bin_width:") {
                bin_width = rest
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(ln, format!("bad bin width {:?}", rest.trim())))?;
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if !header_seen {
            if fields[0].trim() != "region_id" {
                return Err(parse_err(ln, "expected header line starting with region_id"));
            }
            header_seen = true;
            continue;
        }
        let n = x
            .as_ref()
            .ok_or_else(|| parse_err(ln, "missing #X: metadata before data"))?
            .len();
        if fields.len() != n + 2 {
            return Err(parse_err(
                ln,
                format!(
                    "expected {} fields (region, bin, {n} counts), found {}",
                    n + 2,
                    fields.len()
                ),
            ));
        }
        let region = fields[0].trim();
        if region.is_empty() {
            return Err(parse_err(ln, "empty region id"));
        }
        let bin: i64 = fields[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(ln, format!("bin index is not an integer: {:?}", fields[1])))?;
        let counts = fields[2..]
            .iter()
            .map(|t| {
                let t = t.trim();
                if t.starts_with('-') {
                    return Err(parse_err(ln, format!("negative count {t:?}")));
                }
                t.parse::<u64>()
                    .map_err(|_| parse_err(ln, format!("count is not a non-negative integer: {t:?}")))
            })
            .collect::<Result<Vec<u64>>>()?;
        let entry = regions.entry(region.to_string()).or_insert_with(|| {
            order.push(region.to_string());
            BTreeMap::new()
        });
        if entry.insert(bin, counts).is_some() {
            return Err(parse_err(ln, format!("duplicate bin {bin} for region {region}")));
        }
    }

    let x = x.ok_or_else(|| parse_err(0, "missing #X: metadata"))?;
    if !header_seen {
        return Err(parse_err(0, "missing header line"));
    }
    let n = x.len();
    let lib = lib.unwrap_or_else(|| vec![1.0; n]);
    let covariate = Covariate::new(x, lib)?;

    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let bins = &regions[&id];
        let first = *bins.keys().next().expect("region has a bin");
        if let Some((k, _)) = bins.keys().enumerate().find(|(k, b)| **b != first + *k as i64) {
            return Err(Error::InvalidInput(format!(
                "region {id}: bins are not consecutive (missing bin {})",
                first + k as i64
            )));
        }
        let rows: Vec<Vec<u64>> = (0..n).map(|s| bins.values().map(|c| c[s]).collect()).collect();
        let m = CountsMatrix::new(rows, bin_width, id)?.rebin(rebin)?;
        out.push(m.pad_to_power_of_two());
    }
    RegionBatch::new(out, covariate)
}

/// Writes a batch in the counts-table layout, original bins only.
pub fn format_counts_tsv(batch: &RegionBatch) -> String {
    let join = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join("\t");
    let mut out = String::new();
    let _ = writeln!(out, "#X:\t{}", join(&batch.covariate.values));
    let _ = writeln!(out, "#libsize:\t{}", join(&batch.covariate.library_sizes));
    if let Some(r) = batch.regions.first() {
        let _ = writeln!(out, "#bin_width:\t{}", r.bin_width);
    }
    out.push_str("region_id\tbin");
    for i in 0..batch.covariate.len() {
        let _ = write!(out, "\ts{}", i + 1);
    }
    out.push('\n');
    for r in &batch.regions {
        for b in 0..r.original_bins() {
            let _ = write!(out, "{}\t{b}", r.region_id);
            for s in 0..r.n_samples() {
                let _ = write!(out, "\t{}", r.get(s, b));
            }
            out.push('\n');
        }
    }
    out
}

/// One line of the analysis results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub region_id: String,
    pub log_lambda: f64,
    /// `ok`, or the failure message.
    pub status: String,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

fn clean(msg: &str) -> String {
    msg.replace(['\t', '\n'], " ")
}

pub fn result_rows(outcomes: &[RegionOutcome]) -> Vec<ResultRow> {
    outcomes
        .iter()
        .map(|o| match &o.result {
            Ok(r) => ResultRow {
                region_id: o.region_id.clone(),
                log_lambda: r.log_lambda,
                status: "ok".into(),
            },
            Err(e) => ResultRow {
                region_id: o.region_id.clone(),
                log_lambda: f64::NAN,
                status: format!("failed: {}", clean(e)),
            },
        })
        .collect()
}

pub fn format_results(rows: &[ResultRow]) -> String {
    let mut out = String::from("region_id\tlog_lambda\tstatus\n");
    for r in rows {
        let _ = writeln!(out, "{}\t{:.16e}\t{}", r.region_id, r.log_lambda, r.status);
    }
    out
}

pub fn parse_results(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.starts_with("region_id\tlog_lambda") => {}
        _ => return Err(parse_err(1, "expected results header region_id<TAB>log_lambda")),
    }
    lines
        .map(|(i, l)| {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() < 2 {
                return Err(parse_err(i + 1, "expected region_id and log_lambda"));
            }
            let log_lambda = f[1]
                .trim()
                .parse::<f64>()
                .map_err(|_| parse_err(i + 1, format!("log_lambda is not a number: {:?}", f[1])))?;
            let status = f.get(2).map_or("ok", |s| s.trim()).to_string();
            Ok(ResultRow {
                region_id: f[0].to_string(),
                log_lambda,
                status,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PValueRow {
    pub region_id: String,
    pub log_lambda: f64,
    pub p_value: f64,
    pub q_value: f64,
}

pub fn format_pvalues(rows: &[PValueRow]) -> String {
    let mut out = String::from("region_id\tlog_lambda\tp_value\tq_value\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{:.16e}\t{:.16e}\t{:.16e}",
            r.region_id, r.log_lambda, r.p_value, r.q_value
        );
    }
    out
}

/// `region_id, log_fc, se, loglik_ratio` per line, tab separated; a first
/// line starting with `region_id` is taken as a header.
pub fn parse_external_totals(text: &str) -> Result<BTreeMap<String, TotalEffectEstimate>> {
    let mut out = BTreeMap::new();
    for (i, l) in text.lines().enumerate() {
        let ln = i + 1;
        if l.trim().is_empty() || l.starts_with('#') || (out.is_empty() && l.starts_with("region_id")) {
            continue;
        }
        let f: Vec<&str> = l.split('\t').collect();
        if f.len() != 4 {
            return Err(parse_err(ln, format!("expected 4 fields, found {}", f.len())));
        }
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| parse_err(ln, format!("not a number: {t:?}")))
        };
        let est =
            ingest_external_total(num(f[1])?, num(f[2])?, num(f[3])?).map_err(|e| parse_err(ln, e.to_string()))?;
        if out.insert(f[0].to_string(), est).is_some() {
            return Err(parse_err(ln, format!("duplicate region {}", f[0])));
        }
    }
    Ok(out)
}

pub fn read_external_totals(path: &Path) -> Result<BTreeMap<String, TotalEffectEstimate>> {
    parse_external_totals(&read_text(path)?)
}

/// Scores from other methods for the simulation AUC table: `cell, method,
/// score, label` per line with label 1 for the non-null member of a pair.
/// A first line starting with `cell` is a header.
pub fn parse_external_scores(text: &str) -> Result<BTreeMap<(usize, String), Vec<ScoredDataset>>> {
    let mut out: BTreeMap<(usize, String), Vec<ScoredDataset>> = BTreeMap::new();
    for (i, l) in text.lines().enumerate() {
        let ln = i + 1;
        if l.trim().is_empty() || l.starts_with('#') || (i == 0 && l.starts_with("cell")) {
            continue;
        }
        let f: Vec<&str> = l.split('\t').map(str::trim).collect();
        if f.len() != 4 {
            return Err(parse_err(ln, format!("expected 4 fields, found {}", f.len())));
        }
        let cell: usize = f[0]
            .parse()
            .ok()
            .filter(|&c| c >= 1)
            .ok_or_else(|| parse_err(ln, format!("cell must be a positive integer: {:?}", f[0])))?;
        let score: f64 = f[2]
            .parse()
            .map_err(|_| parse_err(ln, format!("not a number: {:?}", f[2])))?;
        let label = match f[3] {
            "1" => true,
            "0" => false,
            t => return Err(parse_err(ln, format!("label must be 0 or 1: {t:?}"))),
        };
        out.entry((cell, f[1].to_string()))
            .or_default()
            .push(ScoredDataset { score, label });
    }
    Ok(out)
}

pub fn read_to_string(path: &Path) -> Result<String> {
    read_text(path)
}
