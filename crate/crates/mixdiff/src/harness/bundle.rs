use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub config_hash: String,
    pub code_version: String,
    /// Derived conventions in force for this run, e.g. score scaling or grid normalisation.
    pub conventions: BTreeMap<String, String>,
    pub config: ExperimentConfig,
}

/// One (x, y) series for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub name: String,
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<(f64, f64)>,
}

impl Curve {
    pub fn new(name: impl Into<String>, x_label: &str, y_label: &str, points: Vec<(f64, f64)>) -> Self {
        Curve { name: name.into(), x_label: x_label.into(), y_label: y_label.into(), points }
    }
}

/// Output directory of one run.
#[derive(Debug, Clone)]
pub struct ResultBundle {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub tables: Vec<PathBuf>,
    pub curves: Vec<Curve>,
    pub summary: serde_json::Value,
    pub failures: u64,
    /// False when an id range stopped the run before every trajectory was done.
    pub complete: bool,
}

/// Decimal text that round-trips exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

impl ResultBundle {
    /// Creates the directory and writes the manifest; an existing manifest must carry the same hash.
    pub fn create(dir: &Path, cfg: &ExperimentConfig, conventions: BTreeMap<String, String>) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let manifest = Manifest {
            experiment: cfg.experiment.name(),
            config_hash: cfg.result_hash(),
            code_version: CODE_VERSION.into(),
            conventions,
            config: cfg.clone(),
        };
        let path = dir.join("manifest.json");
        if path.exists() {
            let old: Manifest = serde_json::from_slice(&fs::read(&path)?)?;
            if old.config_hash != manifest.config_hash {
                return Err(Error::config("out_dir", "holds results for a different config"));
            }
        }
        fs::write(&path, serde_json::to_vec_pretty(&manifest)?)?;
        Ok(ResultBundle {
            dir: dir.to_path_buf(),
            manifest,
            tables: Vec::new(),
            curves: Vec::new(),
            summary: serde_json::Value::Null,
            failures: 0,
            complete: true,
        })
    }

    pub fn write_table(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        let path = self.dir.join(format!("{name}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        self.tables.push(path.clone());
        Ok(path)
    }

    pub fn finish(&mut self, summary: serde_json::Value) -> Result<()> {
        self.summary = summary;
        let out = serde_json::json!({
            "complete": self.complete,
            "failures": self.failures,
            "tables": self.tables.iter().map(|p| p.file_name().unwrap().to_string_lossy().to_string()).collect::<Vec<_>>(),
            "results": self.summary,
        });
        fs::write(self.dir.join("summary.json"), serde_json::to_vec_pretty(&out)?)?;
        Ok(())
    }
}

/// Writes one two-column CSV per curve under `plot/` and a gnuplot script.
/// An empty curve list writes nothing.
pub fn emit_plot_data(bundle: &ResultBundle) -> Result<Vec<PathBuf>> {
    if bundle.curves.is_empty() {
        eprintln!("warning: no curves to emit for {}", bundle.dir.display());
        return Ok(Vec::new());
    }
    let dir = bundle.dir.join("plot");
    fs::create_dir_all(&dir)?;
    let mut files = Vec::new();
    let mut script = String::from("set datafile separator ','\nset key autotitle columnhead\n");
    for c in &bundle.curves {
        let name = format!("{}.csv", c.name);
        let path = dir.join(&name);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record([&c.x_label, &c.y_label])?;
        for &(x, y) in &c.points {
            w.write_record([fmt_f64(x), fmt_f64(y)])?;
        }
        w.flush()?;
        script.push_str(&format!(
            "set terminal pngcairo\nset output '{}.png'\nset xlabel '{}'\nset ylabel '{}'\nplot '{}' using 1:2 with linespoints\n",
            c.name, c.x_label, c.y_label, name
        ));
        files.push(path);
    }
    let gp = dir.join("plot.gp");
    fs::File::create(&gp)?.write_all(script.as_bytes())?;
    files.push(gp);
    Ok(files)
}
