//! Report assembly and emission.
//!
//! Reports are deterministic: for a fixed configuration and seed the
//! emitted bytes are identical across runs, so wall-clock timings never
//! enter report files (the CLI logs them to stderr instead). Floats are
//! printed with 17 significant digits, enough to round-trip `f64`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::TaskKind;
use crate::federation::ConfidenceSet;
use crate::ConfidenceSet64;
use crate::Result;

/// One confidence set produced in an experiment: a single client's own
/// set, the federated set, or the centralized (pooled-data) reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityResult {
    pub name: String,
    pub set: ConfidenceSet64,
    pub width: f64,
    pub covers: bool,
}

impl EntityResult {
    pub fn new(name: impl Into<String>, set: ConfidenceSet64, covers: bool) -> Self {
        let width = set.width();
        Self {
            name: name.into(),
            set,
            width,
            covers,
        }
    }
}

/// Full result of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationReport {
    pub task_kind: TaskKind,
    pub true_theta: Vec<f64>,
    /// Coordinate of `true_theta` the sets target.
    pub target_coord: usize,
    pub alpha: f64,
    /// Configuration echo, sorted by key.
    pub config: Vec<(String, String)>,
    pub entities: Vec<EntityResult>,
}

fn f(x: f64) -> String {
    format!("{x:.16e}")
}

impl FederationReport {
    /// Bounds used in the tabular output: interval endpoints, or the
    /// retained span along the target axis for grid sets.
    fn bounds(&self, set: &ConfidenceSet64) -> Option<(f64, f64)> {
        match set {
            ConfidenceSet::Interval(iv) => Some((iv.lo, iv.hi)),
            ConfidenceSet::Grid(g) => {
                let axis = match g.points.first() {
                    Some(p) if self.target_coord < p.len() => self.target_coord,
                    _ => 0,
                };
                g.retained_span(axis).map(|iv| (iv.lo, iv.hi))
            }
        }
    }

    /// CSV: sorted `# key=value` metadata lines, a header, then one row
    /// per entity. An empty grid set leaves its bounds blank.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# task_kind={}\n", self.task_kind));
        out.push_str(&format!(
            "# true_theta={}\n",
            self.true_theta.iter().map(|&v| f(v)).collect::<Vec<_>>().join(";")
        ));
        out.push_str(&format!("# target_coord={}\n", self.target_coord));
        out.push_str(&format!("# alpha={}\n", f(self.alpha)));
        let mut config = self.config.clone();
        config.sort();
        for (k, v) in &config {
            out.push_str(&format!("# {k}={v}\n"));
        }
        out.push_str("entity,lo,hi,width,covers\n");
        for e in &self.entities {
            let (lo, hi) = match self.bounds(&e.set) {
                Some((lo, hi)) => (f(lo), f(hi)),
                None => (String::new(), String::new()),
            };
            out.push_str(&format!(
                "{},{lo},{hi},{},{}\n",
                e.name,
                f(e.width),
                e.covers
            ));
        }
        out
    }

    /// JSON Lines: one metadata object, then one object per entity.
    pub fn to_jsonl(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Meta<'a> {
            task_kind: TaskKind,
            true_theta: &'a [f64],
            target_coord: usize,
            alpha: f64,
            config: &'a [(String, String)],
        }
        let mut config = self.config.clone();
        config.sort();
        let mut out = serde_json::to_string(&Meta {
            task_kind: self.task_kind,
            true_theta: &self.true_theta,
            target_coord: self.target_coord,
            alpha: self.alpha,
            config: &config,
        })
        .map_err(|e| crate::Error::Validation(format!("report serialization: {e}")))?;
        out.push('\n');
        for e in &self.entities {
            out.push_str(
                &serde_json::to_string(e)
                    .map_err(|e| crate::Error::Validation(format!("report serialization: {e}")))?,
            );
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()?)?;
        Ok(())
    }
}
