//! Experiment configuration files and manifest replay.
//!
//! ```text
//! [run]
//! experiment = hydro
//! seed = 7
//! out_dir = results/hydro
//!
//! [params]
//! speed = fields/two_phase.speed
//! t = 1
//! xrange = -1.5, 3.5
//! ```
//!
//! `[params]` keys are the subcommand's flags without the dashes; `true`
//! and `false` switch boolean flags. A stored `manifest.json` is accepted in
//! place of a config file and replays the recorded run.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

/// Parsed configuration: `[run]` settings and subcommand parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    pub experiment: String,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out_dir: Option<String>,
    pub mem_cap_mb: Option<u64>,
    pub params: BTreeMap<String, String>,
}

/// Subcommand for an experiment name; both spellings are accepted.
pub fn subcommand(experiment: &str) -> Result<&'static str> {
    Ok(match experiment.replace('-', "_").as_str() {
        "lpp_lln" => "lpp-lln",
        "shape" | "shape_grid" => "shape-grid",
        "level_curve" => "level-curve",
        "tasep" | "tasep_sim" => "tasep-sim",
        "envelope_check" => "envelope-check",
        "hydro" => "hydro",
        "godunov" => "godunov",
        "pde_check" => "pde-check",
        "compare" => "compare",
        other => bail!("unknown experiment `{other}`"),
    })
}

/// Experiment name recorded in manifests.
pub fn experiment_name(subcommand: &str) -> &'static str {
    match subcommand {
        "lpp-lln" => "lpp_lln",
        "shape-grid" => "shape",
        "level-curve" => "level_curve",
        "tasep-sim" => "tasep",
        "envelope-check" => "envelope_check",
        "hydro" => "hydro",
        "godunov" => "godunov",
        "pde-check" => "pde_check",
        _ => "compare",
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| anyhow!("`{key}`: `{v}` is not a valid number"))
}

pub fn parse_text(text: &str) -> Result<Config> {
    let mut section = String::new();
    let mut cfg = Config::default();
    let mut seen = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            if !matches!(section.as_str(), "run" | "params") {
                bail!("line {}: unknown section [{section}]", k + 1);
            }
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected `key = value`", k + 1))?;
        let (key, value) = (key.trim(), value.trim());
        if seen.insert((section.clone(), key.to_string()), ()).is_some() {
            bail!("line {}: repeated key `{key}`", k + 1);
        }
        match (section.as_str(), key) {
            ("run", "experiment") => cfg.experiment = value.to_string(),
            ("run", "seed") => cfg.seed = Some(parse_num(key, value)?),
            ("run", "threads") => cfg.threads = Some(parse_num(key, value)?),
            ("run", "out_dir") => cfg.out_dir = Some(value.to_string()),
            ("run", "mem_cap_mb") => cfg.mem_cap_mb = Some(parse_num(key, value)?),
            ("run", other) => bail!("line {}: unknown [run] key `{other}`", k + 1),
            ("params", _) => {
                cfg.params.insert(key.to_string(), value.to_string());
            }
            _ => bail!("line {}: key `{key}` outside a section", k + 1),
        }
    }
    if cfg.experiment.is_empty() {
        bail!("[run] needs `experiment`");
    }
    subcommand(&cfg.experiment)?;
    Ok(cfg)
}

/// Reads the `config` object of a manifest.
pub fn parse_manifest(text: &str) -> Result<Config> {
    let v: serde_json::Value = serde_json::from_str(text).context("manifest is not valid JSON")?;
    let c = v.get("config").ok_or_else(|| anyhow!("manifest has no `config`"))?;
    let experiment = c["experiment"].as_str().ok_or_else(|| anyhow!("manifest config lacks `experiment`"))?.to_string();
    let mut params = BTreeMap::new();
    if let Some(obj) = c["params"].as_object() {
        for (k, val) in obj {
            let s = match val {
                serde_json::Value::Null => continue,
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Array(items) => {
                    items.iter().map(|i| i.as_str().map(str::to_string).unwrap_or_else(|| i.to_string())).collect::<Vec<_>>().join(",")
                }
                other => other.to_string(),
            };
            params.insert(k.clone(), s);
        }
    }
    Ok(Config {
        experiment,
        seed: c["seed"].as_u64(),
        threads: None,
        out_dir: None,
        mem_cap_mb: c["mem_cap_mb"].as_u64(),
        params,
    })
}

pub fn load(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let cfg = if path.extension().is_some_and(|e| e == "json") { parse_manifest(&text) } else { parse_text(&text) };
    cfg.with_context(|| format!("parsing config {}", path.display()))
}

impl Config {
    /// Applies `key=value` overrides to the parameters.
    pub fn set(&mut self, assignments: &[String]) -> Result<()> {
        for a in assignments {
            let (k, v) = a.split_once('=').ok_or_else(|| anyhow!("override `{a}` is not `key=value`"))?;
            self.params.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(())
    }

    /// Subcommand arguments, `--key=value` each, in key order.
    pub fn argv(&self) -> Result<Vec<String>> {
        let mut out = vec![subcommand(&self.experiment)?.to_string()];
        for (k, v) in &self.params {
            let flag = k.replace('_', "-");
            let v = v.split(',').map(str::trim).collect::<Vec<_>>().join(",");
            match v.as_str() {
                "true" => out.push(format!("--{flag}")),
                "false" => {}
                _ if flag == "in" => out.extend(v.split(',').map(|p| format!("--in={p}"))),
                _ => out.push(format!("--{flag}={v}")),
            }
        }
        Ok(out)
    }
}
