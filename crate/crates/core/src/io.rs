//! Result files and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::costing::{CostReport, SurvivalPoint};
use crate::dynamics::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::experiments::ExperimentReport;

pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance of one run; `files` lists every file written, itself included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub tool_version: String,
    pub seeds: BTreeMap<String, u64>,
    /// Seconds since the Unix epoch.
    pub started_at: u64,
    pub finished_at: u64,
    /// Canonical SHA-256 of input files other than the config, by role.
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
    pub files: Vec<String>,
}

impl RunManifest {
    pub fn new(
        config_hash: impl Into<String>,
        seeds: BTreeMap<String, u64>,
        started_at: u64,
        finished_at: u64,
    ) -> Self {
        RunManifest {
            config_hash: config_hash.into(),
            tool_version: TOOL_VERSION.into(),
            seeds,
            started_at,
            finished_at,
            inputs: BTreeMap::new(),
            files: Vec::new(),
        }
    }
}

/// Fixed scientific notation with 17 significant digits.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:.16e}")
    }
}

/// Writes files into one directory and remembers their names.
#[derive(Debug)]
pub struct OutputWriter {
    dir: PathBuf,
    files: Vec<String>,
}

impl OutputWriter {
    pub fn create(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(OutputWriter {
            dir,
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_text(name, &text)
    }

    pub fn write_csv<I>(&mut self, name: &str, header: &[&str], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let mut text = header.join(",");
        text.push('\n');
        for row in rows {
            text.push_str(&row.join(","));
            text.push('\n');
        }
        self.write_text(name, &text)
    }

    /// Writes the manifest with the complete sorted inventory and returns it.
    pub fn finish(mut self, mut manifest: RunManifest) -> Result<Vec<String>> {
        if !self.files.iter().any(|f| f == MANIFEST_FILE) {
            self.files.push(MANIFEST_FILE.into());
        }
        self.files.sort();
        manifest.files = self.files.clone();
        self.write_json(MANIFEST_FILE, &manifest)?;
        Ok(self.files)
    }
}

pub fn survival_rows<'a>(
    label: &'a str,
    points: &'a [SurvivalPoint],
) -> impl Iterator<Item = Vec<String>> + 'a {
    points.iter().map(move |p| {
        vec![
            label.to_string(),
            fmt_num(p.t),
            fmt_num(p.survival),
            fmt_num(p.stderr),
        ]
    })
}

pub fn cost_rows(label: &str, cost: &CostReport) -> Vec<Vec<String>> {
    [
        ("running", cost.running_term, f64::NAN),
        ("terminal", cost.terminal_term, f64::NAN),
        ("total", cost.total, cost.stderr_total),
    ]
    .into_iter()
    .map(|(term, v, se)| vec![format!("{label}/{term}"), fmt_num(v), fmt_num(se)])
    .collect()
}

/// File name of the marginal samples at checkpoint `t`.
pub fn marginal_file_name(t: f64) -> String {
    format!("marginals_t{t}.csv")
}

/// Writes the report and its CSV artifacts, then the manifest.
///
/// Files: `report.json`, `survival.csv`, `w1.csv`, one `marginals_t{t}.csv`
/// per checkpoint, `costs.csv`, `truncation.csv` (each only when the report
/// has the corresponding data) and `manifest.json`.
pub fn emit_outputs(
    report: &ExperimentReport,
    manifest: RunManifest,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<String>> {
    let mut out = OutputWriter::create(out_dir)?;
    out.write_json("report.json", report)?;
    if !report.survival.is_empty() {
        let rows = report
            .survival
            .iter()
            .flat_map(|s| survival_rows(&s.label, &s.points));
        out.write_csv("survival.csv", &["source", "t", "survival", "stderr"], rows)?;
    }
    if !report.checkpoints.is_empty() {
        let rows = report.checkpoints.iter().map(|c| {
            vec![
                fmt_num(c.t),
                fmt_num(c.w1),
                fmt_num(c.self_w1),
                fmt_num(c.calibration_q95),
                fmt_num(c.w1_threshold),
                fmt_num(c.survival_gap),
                c.n_alive_open_loop.to_string(),
                c.n_alive_projected.to_string(),
            ]
        });
        out.write_csv(
            "w1.csv",
            &[
                "t",
                "w1",
                "self_w1",
                "calibration_q95",
                "threshold",
                "survival_gap",
                "n_alive_open_loop",
                "n_alive_projected",
            ],
            rows,
        )?;
    }
    for set in &report.marginals {
        let dim = set.series.first().map_or(1, |(_, m)| m.dimension());
        let mut header = vec!["source".to_string()];
        header.extend((0..dim).map(|i| format!("x{i}")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows = set.series.iter().flat_map(|(label, m)| {
            m.points().map(move |p| {
                let mut row = vec![label.clone()];
                row.extend(p.iter().map(|&x| fmt_num(x)));
                row
            })
        });
        out.write_csv(&marginal_file_name(set.t), &header, rows)?;
    }
    if !report.costs.is_empty() {
        let rows = report.costs.iter().flat_map(|c| {
            let mut rows = cost_rows(&format!("{}/open_loop", c.control), &c.open_loop);
            rows.extend(cost_rows(&format!("{}/projected", c.control), &c.projected));
            rows
        });
        out.write_csv("costs.csv", &["term", "value", "stderr"], rows)?;
    }
    if !report.truncation.is_empty() {
        let rows = report.truncation.iter().map(|p| {
            vec![
                fmt_num(p.n),
                fmt_num(p.cost.total),
                fmt_num(p.cost.stderr_total),
                fmt_num(p.gap),
                fmt_num(p.gap_stderr),
                fmt_num(p.mean_sup_sq_distance),
            ]
        });
        out.write_csv(
            "truncation.csv",
            &[
                "n",
                "cost",
                "stderr",
                "gap",
                "gap_stderr",
                "mean_sup_sq_distance",
            ],
            rows,
        )?;
    }
    out.finish(manifest)
}

/// Long-format path dump of the first `max_particles` particles: one row per
/// stored node, with the alive flag at that node.
pub fn paths_csv(
    ensemble: &ParticleEnsemble,
    max_particles: usize,
) -> (Vec<String>, Vec<Vec<String>>) {
    let dim = ensemble.dimension();
    let mut header = vec!["particle".to_string(), "k".into(), "t".into()];
    header.extend((0..dim).map(|i| format!("x{i}")));
    header.push("alive".into());
    let mut rows = Vec::new();
    for i in 0..ensemble.len().min(max_particles) {
        for k in 0..=ensemble.grid().steps() {
            let mut row = vec![
                i.to_string(),
                k.to_string(),
                fmt_num(ensemble.grid().time(k)),
            ];
            row.extend(ensemble.state(i, k).iter().map(|&x| fmt_num(x)));
            row.push(u8::from(ensemble.is_alive(i, k)).to_string());
            rows.push(row);
        }
    }
    (header, rows)
}

/// Reads a UTF-8 file with the path in the error.
pub fn read_text(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
