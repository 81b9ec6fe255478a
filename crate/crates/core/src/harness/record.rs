//! Run records, the content-addressed store and report emission.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::resolvent::{write_window_csv, ExpansionCheck, Window};
use crate::semigroup::{write_fit_table, SmoothingFit};

use super::spec::ExperimentSpec;
use super::studies::{ConcentrationOutcome, CoveringTrial, EquivalenceReport, ThresholdOutcome};

/// A named pass/fail decision of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingEntry {
    pub p: f64,
    pub fit: SmoothingFit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionEntry {
    /// Matrix label (`random_<i>` or the operator family).
    pub case: String,
    pub check: ExpansionCheck,
}

/// Per-kind payload of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
pub enum RunResult {
    WindowScan { lambda0: f64, gap: f64, windows: Vec<Window> },
    ThresholdStudy(Vec<ThresholdOutcome>),
    ConcentrationStudy(ConcentrationOutcome),
    EquivalenceSuite(EquivalenceReport),
    SmoothingStudy(Vec<SmoothingEntry>),
    CoveringSearch(Vec<CoveringTrial>),
    ExpansionCheck(Vec<ExpansionEntry>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub spec: ExperimentSpec,
    pub spec_hash: String,
    pub version: String,
    pub wall_clock_s: f64,
    pub verdicts: Vec<Verdict>,
    pub result: RunResult,
}

impl RunRecord {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    /// Verdicts and results, everything except timing; equal for reproduced runs.
    pub fn same_outcome(&self, other: &RunRecord) -> bool {
        self.spec_hash == other.spec_hash && self.verdicts == other.verdicts && self.result == other.result
    }
}

/// Run records under `<root>/runs/<spec hash>/record.json`.
#[derive(Clone, Debug)]
pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, hash: &str) -> PathBuf {
        self.root.join("runs").join(hash)
    }

    pub fn record_path(&self, hash: &str) -> PathBuf {
        self.run_dir(hash).join("record.json")
    }

    pub fn load(&self, hash: &str) -> Result<Option<RunRecord>> {
        let path = self.record_path(hash);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(load_record(&path)?))
    }

    /// Writes through a temporary file and a rename, so readers never see partial records.
    pub fn save(&self, record: &RunRecord) -> Result<PathBuf> {
        let dir = self.run_dir(&record.spec_hash);
        fs::create_dir_all(&dir)?;
        let path = dir.join("record.json");
        let tmp = dir.join(format!("record.json.tmp{}", std::process::id()));
        {
            let mut f = fs::File::create(&tmp)?;
            serde_json::to_writer_pretty(&mut f, record)?;
            f.write_all(b"\n")?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        Ok(path)
    }
}

pub fn load_record(path: &Path) -> Result<RunRecord> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| LabError::Parse(format!("{}: {e}", path.display())))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    RunRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub d: usize,
    pub p: f64,
    pub k: u32,
    pub verdict: String,
    pub growth_exponent: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRow {
    pub j: usize,
    pub distance: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceRow {
    pub index: usize,
    pub kind: String,
    pub side: usize,
    pub lambda0: f64,
    pub assumption: bool,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingRow {
    pub p: f64,
    pub q: f64,
    pub c: f64,
    pub n_implied: u32,
    pub fit_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoveringRow {
    pub trial: usize,
    pub planted: usize,
    pub found: Option<usize>,
    pub brute_force_agrees: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRow {
    pub case: String,
    pub m: usize,
    pub lambda: f64,
    pub residual: f64,
}

/// Writes rows with an explicit header, so empty tables still carry one.
pub fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?)
}

pub const THRESHOLD_HEADER: [&str; 5] = ["d", "p", "k", "verdict", "growth_exponent"];

pub fn threshold_rows(outcomes: &[ThresholdOutcome]) -> Vec<ThresholdRow> {
    outcomes
        .iter()
        .map(|o| ThresholdRow {
            d: o.d,
            p: o.p,
            k: o.k,
            verdict: o.verdict.as_str().into(),
            growth_exponent: o.growth_exponent,
        })
        .collect()
}

fn write_file(path: PathBuf, out: &mut Vec<PathBuf>, f: impl FnOnce(&mut fs::File) -> Result<()>) -> Result<()> {
    let mut file = fs::File::create(&path)?;
    f(&mut file)?;
    out.push(path);
    Ok(())
}

/// Writes the report files of a record into `dir` and returns their paths.
pub fn emit_report(record: &RunRecord, format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    if format == ReportFormat::RunRecord {
        let path = dir.join("record.json");
        write_file(path, &mut out, |f| {
            serde_json::to_writer_pretty(&mut *f, record)?;
            f.write_all(b"\n")?;
            Ok(())
        })?;
        return Ok(out);
    }
    match &record.result {
        RunResult::WindowScan { windows, .. } => {
            if windows.is_empty() {
                write_file(dir.join("window.csv"), &mut out, |f| {
                    writeln!(f, "offset,lambda,verdict,margin,c_value")?;
                    Ok(())
                })?;
            }
            for (i, w) in windows.iter().enumerate() {
                write_file(dir.join(format!("window_{i:03}.csv")), &mut out, |f| write_window_csv(w, f))?;
            }
        }
        RunResult::ThresholdStudy(cells) => {
            let path = dir.join("threshold.csv");
            write_rows(&path, &THRESHOLD_HEADER, &threshold_rows(cells))?;
            out.push(path);
            for (i, c) in cells.iter().enumerate() {
                if let Some(study) = &c.study {
                    for d in &study.diagnostics {
                        write_file(dir.join(format!("fit_{i:03}_n{}.csv", d.n)), &mut out, |f| write_fit_table("h", &d.table, f))?;
                    }
                }
            }
        }
        RunResult::ConcentrationStudy(c) => {
            let rows: Vec<ConcentrationRow> = c
                .levels
                .iter()
                .zip(&c.distances)
                .zip(&c.deltas)
                .map(|((&j, &distance), &delta)| ConcentrationRow { j, distance, delta })
                .collect();
            let path = dir.join("concentration.csv");
            write_rows(&path, &["j", "distance", "delta"], &rows)?;
            out.push(path);
        }
        RunResult::EquivalenceSuite(rep) => {
            let rows: Vec<EquivalenceRow> = rep
                .cases
                .iter()
                .map(|c| EquivalenceRow {
                    index: c.index,
                    kind: serde_json::to_value(c.kind)
                        .ok()
                        .and_then(|v| v.as_str().map(String::from))
                        .unwrap_or_default(),
                    side: c.side,
                    lambda0: c.lambda0,
                    assumption: c.assumption,
                    passed: c.passed,
                })
                .collect();
            let path = dir.join("equivalence.csv");
            write_rows(&path, &["index", "kind", "side", "lambda0", "assumption", "passed"], &rows)?;
            out.push(path);
        }
        RunResult::SmoothingStudy(entries) => {
            let rows: Vec<SmoothingRow> = entries
                .iter()
                .map(|e| SmoothingRow {
                    p: e.p,
                    q: e.fit.q,
                    c: e.fit.c,
                    n_implied: e.fit.n_implied,
                    fit_residual: e.fit.fit_residual,
                })
                .collect();
            let path = dir.join("smoothing.csv");
            write_rows(&path, &["p", "q", "c", "n_implied", "fit_residual"], &rows)?;
            out.push(path);
            for (i, e) in entries.iter().enumerate() {
                write_file(dir.join(format!("fit_{i:03}.csv")), &mut out, |f| write_fit_table("t", &e.fit.table, f))?;
            }
        }
        RunResult::CoveringSearch(trials) => {
            let rows: Vec<CoveringRow> = trials
                .iter()
                .map(|t| CoveringRow {
                    trial: t.trial,
                    planted: t.planted,
                    found: t.found,
                    brute_force_agrees: t.brute_force_agrees,
                })
                .collect();
            let path = dir.join("covering.csv");
            write_rows(&path, &["trial", "planted", "found", "brute_force_agrees"], &rows)?;
            out.push(path);
        }
        RunResult::ExpansionCheck(entries) => {
            let rows: Vec<ExpansionRow> = entries
                .iter()
                .map(|e| ExpansionRow {
                    case: e.case.clone(),
                    m: e.check.m,
                    lambda: e.check.lambda,
                    residual: e.check.residual,
                })
                .collect();
            let path = dir.join("expansion.csv");
            write_rows(&path, &["case", "m", "lambda", "residual"], &rows)?;
            out.push(path);
        }
    }
    Ok(out)
}
