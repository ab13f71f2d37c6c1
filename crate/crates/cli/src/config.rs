//! Flat key-value experiment configuration with section headers.
//!
//! Grammar (EBNF, also in `docs/config-grammar.ebnf`):
//!
//! ```text
//! config   = { line } ;
//! line     = ( section | binding | comment | blank ) , newline ;
//! section  = "[" , name , "]" ;
//! binding  = key , "=" , value ;
//! comment  = "#" , { any } ;
//! value    = scalar | list ;
//! list     = scalar , { "," , scalar } ;
//! scalar   = number | name ;
//! ```
//!
//! Sections in use: `[experiment]` (kind, seed, out), `[model]` (name,
//! horizon, free parameters), `[discretization]` (n_cells, n_steps, k_max,
//! big_n, n_paths, dt_sim, probes), `[regularization]` (theta, delta,
//! damping).

use std::collections::BTreeMap;

use meanstop_core::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    pub sections: BTreeMap<String, BTreeMap<String, String>>,
    /// Original text, echoed into reports.
    pub echo: String,
}

pub fn parse(text: &str) -> Result<RawConfig> {
    let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    let mut current = String::from("root");
    for (lineno, raw_line) in text.lines().enumerate() {
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            current = name.trim().to_string();
            sections.entry(current.clone()).or_default();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse(format!(
                "line {}: expected `key = value`, got `{raw_line}`",
                lineno + 1
            )));
        };
        sections
            .entry(current.clone())
            .or_default()
            .insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(RawConfig {
        sections,
        echo: text.to_string(),
    })
}

/// Typed view over the raw sections with defaults suited to desk scale.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub kind: String,
    pub seed: u64,
    pub out_dir: Option<String>,
    pub model_name: String,
    pub model_params: BTreeMap<String, f64>,
    pub horizon: f64,
    pub n_cells: usize,
    pub n_steps: usize,
    pub k_max: usize,
    pub big_n: Vec<usize>,
    pub n_paths: usize,
    pub dt_sim: f64,
    pub probes: usize,
    pub thetas: Vec<f64>,
    pub deltas: Vec<f64>,
    pub damping: f64,
    pub echo: String,
}

impl ExperimentConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        let get = |section: &str, key: &str| -> Option<&String> {
            raw.sections.get(section).and_then(|s| s.get(key))
        };
        let parse_f64 = |section: &str, key: &str, default: f64| -> Result<f64> {
            match get(section, key) {
                Some(v) => v
                    .parse()
                    .map_err(|e| Error::Parse(format!("{section}.{key}: {e}"))),
                None => Ok(default),
            }
        };
        let parse_usize = |section: &str, key: &str, default: usize| -> Result<usize> {
            match get(section, key) {
                Some(v) => v
                    .parse()
                    .map_err(|e| Error::Parse(format!("{section}.{key}: {e}"))),
                None => Ok(default),
            }
        };
        let parse_list_f64 = |section: &str, key: &str, default: &[f64]| -> Result<Vec<f64>> {
            match get(section, key) {
                Some(v) => v
                    .split(',')
                    .map(|p| {
                        p.trim()
                            .parse()
                            .map_err(|e| Error::Parse(format!("{section}.{key}: {e}")))
                    })
                    .collect(),
                None => Ok(default.to_vec()),
            }
        };
        let parse_list_usize =
            |section: &str, key: &str, default: &[usize]| -> Result<Vec<usize>> {
                match get(section, key) {
                    Some(v) => v
                        .split(',')
                        .map(|p| {
                            p.trim()
                                .parse()
                                .map_err(|e| Error::Parse(format!("{section}.{key}: {e}")))
                        })
                        .collect(),
                    None => Ok(default.to_vec()),
                }
            };

        let kind = get("experiment", "kind")
            .cloned()
            .ok_or_else(|| Error::Parse("missing experiment.kind".into()))?;
        let seed = parse_usize("experiment", "seed", 0)? as u64;
        let out_dir = get("experiment", "out").cloned();
        let model_name = get("model", "name").cloned().unwrap_or_else(|| "congestion".into());
        let horizon = parse_f64("model", "horizon", 0.25)?;
        let mut model_params = BTreeMap::new();
        if let Some(model_section) = raw.sections.get("model") {
            for (k, v) in model_section {
                if k == "name" || k == "horizon" {
                    continue;
                }
                model_params.insert(
                    k.clone(),
                    v.parse()
                        .map_err(|e| Error::Parse(format!("model.{k}: {e}")))?,
                );
            }
        }
        let cfg = ExperimentConfig {
            kind,
            seed,
            out_dir,
            model_name,
            model_params,
            horizon,
            n_cells: parse_usize("discretization", "n_cells", 32)?,
            n_steps: parse_usize("discretization", "n_steps", 0)?,
            k_max: parse_usize("discretization", "k_max", 2)?,
            big_n: parse_list_usize("discretization", "big_n", &[2, 4, 8])?,
            n_paths: parse_usize("discretization", "n_paths", 2000)?,
            dt_sim: parse_f64("discretization", "dt_sim", 1e-3)?,
            probes: parse_usize("discretization", "probes", 4)?,
            thetas: parse_list_f64("regularization", "theta", &[0.02, 0.01])?,
            deltas: parse_list_f64("regularization", "delta", &[0.2, 0.1, 0.05])?,
            damping: parse_f64("regularization", "damping", 0.8)?,
            echo: raw.echo.clone(),
        };
        if cfg.big_n.is_empty() || cfg.thetas.is_empty() || cfg.deltas.is_empty() {
            return Err(Error::Parse("lists must be nonempty".into()));
        }
        Ok(cfg)
    }

    pub fn model(&self) -> Result<meanstop_core::model::ModelSpec> {
        meanstop_core::model::model_by_name(&self.model_name, &self.model_params, self.horizon)
    }

    /// Default hierarchy step count honoring the parabolic guard.
    pub fn hierarchy_steps(&self, n_cells: usize) -> usize {
        if self.n_steps > 0 {
            return self.n_steps;
        }
        let h = 1.0 / n_cells as f64;
        (self.horizon / (h * h) * 1.05).ceil() as usize
    }
}
