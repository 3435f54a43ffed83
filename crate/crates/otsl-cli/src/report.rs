//! Artifact output: overwrite-guarded CSV files and the JSON run report.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::CliError;

/// Full-precision decimal rendering used for every float column.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct Artifacts {
    dir: PathBuf,
    force: bool,
    written: Vec<String>,
    started: Instant,
}

impl Artifacts {
    pub fn new(dir: &Path, force: bool) -> Result<Self, CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            force,
            written: Vec::new(),
            started: Instant::now(),
        })
    }

    /// Fails early when any planned artifact already exists and --force is
    /// not set, so a run never clobbers or half-overwrites previous output.
    pub fn reserve(&self, names: &[&str]) -> Result<(), CliError> {
        if self.force {
            return Ok(());
        }
        for name in names {
            let p = self.dir.join(name);
            if p.exists() {
                return Err(CliError::Config(format!(
                    "{} already exists; pass --force to overwrite",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    pub fn write_csv(
        &mut self,
        name: &str,
        header: &[&str],
        rows: &[Vec<String>],
    ) -> Result<(), CliError> {
        let mut out = String::new();
        out.push_str(&header.join(","));
        out.push('\n');
        for row in rows {
            debug_assert_eq!(row.len(), header.len());
            out.push_str(&row.join(","));
            out.push('\n');
        }
        let path = self.dir.join(name);
        fs::write(&path, out)
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
        self.written.push(name.to_string());
        Ok(())
    }

    /// Writes report.json and prints the one-line verdict. Returns the pass
    /// flag so the caller can map it to the exit code.
    pub fn finish(
        mut self,
        subcommand: &str,
        check: &str,
        seed: u64,
        inputs: serde_json::Value,
        body: serde_json::Value,
        pass: bool,
        detail: &str,
    ) -> Result<bool, CliError> {
        self.written.push("report.json".to_string());
        let report = Report {
            subcommand,
            check,
            seed,
            pass,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            artifacts: &self.written,
            inputs,
            body,
        };
        let path = self.dir.join("report.json");
        let mut text = serde_json::to_string_pretty(&report)
            .map_err(|e| CliError::Numerical(format!("report serialization: {e}")))?;
        text.push('\n');
        fs::write(&path, text)
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("{subcommand}/{check}: {verdict} ({detail})");
        Ok(pass)
    }
}

#[derive(Serialize)]
struct Report<'a> {
    subcommand: &'a str,
    check: &'a str,
    seed: u64,
    pass: bool,
    wall_clock_seconds: f64,
    artifacts: &'a [String],
    inputs: serde_json::Value,
    body: serde_json::Value,
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn floats_render_with_seventeen_significant_digits() {
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
        let x = 0.1 + 0.2;
        assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        assert_eq!(fmt_f64(-3.5e-12), "-3.5000000000000000e-12");
    }

    #[test]
    fn reserve_guards_existing_artifacts() {
        let tmp = tempfile::tempdir().unwrap();
        let art = Artifacts::new(tmp.path(), false).unwrap();
        art.reserve(&["a.csv"]).unwrap();
        fs::write(tmp.path().join("a.csv"), "x\n").unwrap();
        let err = art.reserve(&["a.csv"]).unwrap_err();
        let CliError::Config(msg) = err else {
            panic!("expected a config error");
        };
        assert!(msg.contains("--force"));
        let forced = Artifacts::new(tmp.path(), true).unwrap();
        forced.reserve(&["a.csv"]).unwrap();
    }

    #[test]
    fn finish_writes_the_report_envelope() {
        let tmp = tempfile::tempdir().unwrap();
        let mut art = Artifacts::new(tmp.path(), false).unwrap();
        art.write_csv("t.csv", &["a", "b"], &[vec!["1".into(), "2".into()]])
            .unwrap();
        let pass = art
            .finish("demo", "demo_check", 3, json!({"k": 1}), json!({"v": 2}), true, "ok")
            .unwrap();
        assert!(pass);
        let text = fs::read_to_string(tmp.path().join("report.json")).unwrap();
        let rep: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(rep["subcommand"], "demo");
        assert_eq!(rep["seed"], 3);
        assert_eq!(rep["pass"], true);
        assert_eq!(rep["artifacts"], json!(["t.csv", "report.json"]));
        assert_eq!(rep["inputs"]["k"], 1);
        assert!(rep["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
        assert_eq!(
            fs::read_to_string(tmp.path().join("t.csv")).unwrap(),
            "a,b\n1,2\n"
        );
    }
}
