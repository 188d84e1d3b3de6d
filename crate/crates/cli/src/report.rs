use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = "==")]
    Holds,
}

/// One invariant: `value relation limit`, or a boolean property when `relation` is `==`.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub relation: Relation,
    pub limit: f64,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self { name: name.into(), passed: value <= limit, value, relation: Relation::AtMost, limit }
    }

    pub fn at_least(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self { name: name.into(), passed: value >= limit, value, relation: Relation::AtLeast, limit }
    }

    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        Self { name: name.into(), passed: ok, value: if ok { 1.0 } else { 0.0 }, relation: Relation::Holds, limit: 1.0 }
    }

    pub fn quoted(&self) -> String {
        match self.relation {
            Relation::Holds => format!("{} does not hold", self.name),
            Relation::AtMost => format!("{}: {:.6e} > {:.6e}", self.name, self.value, self.limit),
            Relation::AtLeast => format!("{}: {:.6e} < {:.6e}", self.name, self.value, self.limit),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub series: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub experiment: String,
    pub property: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    /// Set when the experiment stopped on an error.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub data: Value,
    #[serde(skip)]
    pub series: Vec<Point>,
}

impl Verdict {
    pub fn new(experiment: &str, property: &str) -> Self {
        Self {
            experiment: experiment.into(),
            property: property.into(),
            passed: true,
            checks: Vec::new(),
            error: None,
            data: Value::Object(Default::default()),
            series: Vec::new(),
        }
    }

    pub fn failed(experiment: &str, property: &str, error: String) -> Self {
        Self { passed: false, error: Some(error), ..Self::new(experiment, property) }
    }

    pub fn check(&mut self, c: Check) {
        self.passed &= c.passed;
        self.checks.push(c);
    }

    pub fn data(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        if let Value::Object(m) = &mut self.data {
            m.insert(key.into(), v);
        }
    }

    pub fn point(&mut self, series: &str, x: f64, y: f64) {
        self.series.push(Point { x, y, series: series.into() });
    }

    pub fn failures(&self) -> Vec<String> {
        let mut out: Vec<String> = self.checks.iter().filter(|c| !c.passed).map(Check::quoted).collect();
        if let Some(e) = &self.error {
            out.push(e.clone());
        }
        out
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io { path: path.to_path_buf(), source }
}

/// Columnar `(x, y, series)` CSV; a header alone when there are no points.
pub fn write_series(path: &Path, points: &[Point]) -> Result<(), ReportError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    let csv_err = |source| ReportError::Csv { path: path.to_path_buf(), source };
    w.write_record(["x", "y", "series"]).map_err(csv_err)?;
    for p in points {
        w.serialize(p).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

/// `<root>/<experiment>/verdict.json` and `series.csv`.
pub fn write_verdict(root: &Path, v: &Verdict) -> Result<(), ReportError> {
    let dir = root.join(&v.experiment);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let path = dir.join("verdict.json");
    let mut text = serde_json::to_string_pretty(v).expect("verdict serializes");
    text.push('\n');
    fs::write(&path, text).map_err(io_err(&path))?;
    write_series(&dir.join("series.csv"), &v.series)
}

#[derive(Debug, Serialize)]
struct IndexEntry<'a> {
    experiment: &'a str,
    passed: bool,
    failures: Vec<String>,
}

#[derive(Debug, Serialize)]
struct Index<'a> {
    passed: bool,
    experiments: Vec<IndexEntry<'a>>,
}

pub fn write_index(root: &Path, verdicts: &[Verdict]) -> Result<(), ReportError> {
    fs::create_dir_all(root).map_err(io_err(root))?;
    let index = Index {
        passed: verdicts.iter().all(|v| v.passed),
        experiments: verdicts.iter().map(|v| IndexEntry { experiment: &v.experiment, passed: v.passed, failures: v.failures() }).collect(),
    };
    let path = root.join("index.json");
    let mut f = fs::File::create(&path).map_err(io_err(&path))?;
    serde_json::to_writer_pretty(&mut f, &index).expect("index serializes");
    f.write_all(b"\n").map_err(io_err(&path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_series_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_series(&path, &[]).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "x,y,series\n");
    }

    #[test]
    fn checks_gate_the_verdict() {
        let mut v = Verdict::new("e", "p");
        v.check(Check::at_most("a", 1.0, 2.0));
        assert!(v.passed);
        v.check(Check::at_least("b", 1.0, 2.0));
        assert!(!v.passed);
        assert_eq!(v.failures(), vec!["b: 1.000000e0 < 2.000000e0".to_string()]);
        v.point("s", 1.0, 2.0);
        let dir = tempfile::tempdir().unwrap();
        write_verdict(dir.path(), &v).unwrap();
        let csv = fs::read_to_string(dir.path().join("e/series.csv")).unwrap();
        assert_eq!(csv, "x,y,series\n1.0,2.0,s\n");
    }
}
