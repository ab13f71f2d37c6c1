//! Structured run output: the config echo, named CSV tables, per-check
//! pass/fail lines, and SVG artifacts. Tables and plots are deterministic
//! given the config (and seed); timing only appears in the human-readable
//! summary.

use std::path::Path;

use meanstop_core::error::Result;

#[derive(Debug, Clone)]
pub struct CheckLine {
    pub name: String,
    pub pass: bool,
    pub detail: String,
    pub skipped: bool,
}

#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub kind: String,
    pub config_echo: String,
    /// `(file stem, csv content)`.
    pub tables: Vec<(String, String)>,
    /// `(file stem, svg content)`.
    pub plots: Vec<(String, String)>,
    pub checks: Vec<CheckLine>,
    pub wall_seconds: f64,
}

impl RunReport {
    pub fn new(kind: &str, config_echo: &str) -> Self {
        RunReport {
            kind: kind.to_string(),
            config_echo: config_echo.to_string(),
            ..Default::default()
        }
    }

    pub fn table(&mut self, stem: &str, csv: String) {
        self.tables.push((stem.to_string(), csv));
    }

    pub fn plot(&mut self, stem: &str, svg: String) {
        self.plots.push((stem.to_string(), svg));
    }

    pub fn check(&mut self, name: &str, pass: bool, detail: String) {
        self.checks.push(CheckLine {
            name: name.to_string(),
            pass,
            detail,
            skipped: false,
        });
    }

    pub fn skip(&mut self, name: &str) {
        self.checks.push(CheckLine {
            name: name.to_string(),
            pass: false,
            detail: "skipped (earlier failure)".into(),
            skipped: true,
        });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass || c.skipped)
            && self.checks.iter().any(|c| !c.skipped)
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "meanstop {} :: {}\n",
            env!("CARGO_PKG_VERSION"),
            self.kind
        ));
        for c in &self.checks {
            let status = if c.skipped {
                "SKIP"
            } else if c.pass {
                "pass"
            } else {
                "FAIL"
            };
            out.push_str(&format!("[{status}] {}: {}\n", c.name, c.detail));
        }
        out.push_str(&format!(
            "result: {}\n",
            if self.passed() { "PASS" } else { "FAIL" }
        ));
        out.push_str(&format!("wall-clock: {:.2}s\n", self.wall_seconds));
        out.push_str("\n--- config echo ---\n");
        out.push_str(&self.config_echo);
        out
    }

    /// Write the report text, tables, and plots under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.txt"), self.render_text())?;
        for (stem, csv) in &self.tables {
            std::fs::write(dir.join(format!("{stem}.csv")), csv)?;
        }
        for (stem, svg) in &self.plots {
            std::fs::write(dir.join(format!("{}_{stem}.svg", self.kind)), svg)?;
        }
        Ok(())
    }
}
