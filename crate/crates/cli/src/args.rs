//! Command-line definitions.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_MEM_CAP_MB: u64 = 1024;

#[derive(Debug, Parser)]
#[command(name = "ditasep", version, about = "TASEP and last-passage percolation in discontinuous media")]
pub struct Cli {
    /// Master seed [default: 1]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads [default: all cores]
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory [default: .]
    #[arg(long, global = true, env = "DITASEP_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
    /// Memory budget for grids, in MiB [default: 1024]
    #[arg(long, global = true)]
    pub mem_cap_mb: Option<u64>,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Passage times G(0, nx) / n over scales and replicas
    LppLln(LppLln),
    /// Microscopic TASEP heights from seeded clocks
    TasepSim(TasepSim),
    /// Exact envelope identity against the auxiliary wedge processes
    EnvelopeCheck(EnvelopeCheck),
    /// Grid solution of the variational shape function
    ShapeGrid(ShapeGrid),
    /// One level curve x ↦ g^q(x, t)
    LevelCurve(LevelCurve),
    /// Macroscopic height and density from the envelope formula
    Hydro(Hydro),
    /// Finite-volume solution of the conservation law
    Godunov(Godunov),
    /// Checks on stored profiles
    PdeCheck(PdeCheck),
    /// Microscopic against macroscopic, with envelope and PDE suites
    Compare(Compare),
    /// Runs a config file or replays a manifest
    Run(RunArgs),
}

impl Cmd {
    pub fn name(&self) -> &'static str {
        match self {
            Cmd::LppLln(_) => "lpp-lln",
            Cmd::TasepSim(_) => "tasep-sim",
            Cmd::EnvelopeCheck(_) => "envelope-check",
            Cmd::ShapeGrid(_) => "shape-grid",
            Cmd::LevelCurve(_) => "level-curve",
            Cmd::Hydro(_) => "hydro",
            Cmd::Godunov(_) => "godunov",
            Cmd::PdeCheck(_) => "pde-check",
            Cmd::Compare(_) => "compare",
            Cmd::Run(_) => "run",
        }
    }

    pub fn params(&self) -> serde_json::Value {
        let v = match self {
            Cmd::LppLln(a) => serde_json::to_value(a),
            Cmd::TasepSim(a) => serde_json::to_value(a),
            Cmd::EnvelopeCheck(a) => serde_json::to_value(a),
            Cmd::ShapeGrid(a) => serde_json::to_value(a),
            Cmd::LevelCurve(a) => serde_json::to_value(a),
            Cmd::Hydro(a) => serde_json::to_value(a),
            Cmd::Godunov(a) => serde_json::to_value(a),
            Cmd::PdeCheck(a) => serde_json::to_value(a),
            Cmd::Compare(a) => serde_json::to_value(a),
            Cmd::Run(_) => Ok(serde_json::Value::Null),
        };
        v.expect("arguments serialise")
    }
}

/// Two numbers written `a,b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(into = "String")]
pub struct Pair(pub f64, pub f64);

impl FromStr for Pair {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `a,b`, got `{s}`"))?;
        let p = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("`{}` is not a number", v.trim()));
        let (a, b) = (p(a)?, p(b)?);
        if !(a.is_finite() && b.is_finite()) {
            return Err("values must be finite".into());
        }
        Ok(Pair(a, b))
    }
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.0, self.1)
    }
}

impl From<Pair> for String {
    fn from(p: Pair) -> String {
        p.to_string()
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LppLln {
    #[arg(long)]
    pub speed: PathBuf,
    /// Target is (⌊nx⌋, ⌊ny⌋)
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub x: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub y: f64,
    /// Start point in macroscopic units
    #[arg(long, default_value = "0,0", allow_hyphen_values = true)]
    pub start: Pair,
    /// Scales, comma separated
    #[arg(long, value_delimiter = ',', required = true)]
    pub n: Vec<u64>,
    #[arg(long, default_value_t = 10)]
    pub replicas: u64,
    #[arg(long, default_value = "lpp_lln.csv")]
    pub out: String,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TasepSim {
    #[arg(long)]
    pub speed: PathBuf,
    /// step | flat:p | riemann:l,r | bernoulli:p[,r] | file:<path>
    #[arg(long, default_value = "step")]
    pub init: String,
    #[arg(long)]
    pub n: u64,
    /// Macroscopic final time; the simulation runs to n·t
    #[arg(long)]
    pub t: f64,
    /// Macroscopic window; sites ⌊na⌋ ..= ⌊nb⌋ are reported
    #[arg(long, allow_hyphen_values = true)]
    pub window: Pair,
    #[arg(long, default_value_t = 1)]
    pub replicas: u64,
    /// Equally spaced snapshot times after t = 0
    #[arg(long, default_value_t = 1)]
    pub snapshots: usize,
    /// Also write every drop inside the window
    #[arg(long)]
    pub trace: bool,
    #[arg(long, default_value = "tasep.csv")]
    pub out: String,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EnvelopeCheck {
    #[arg(long)]
    pub speed: PathBuf,
    #[arg(long, default_value = "step")]
    pub init: String,
    #[arg(long, default_value_t = 30)]
    pub n: u64,
    /// Microscopic site window
    #[arg(long, default_value = "-30,30", allow_hyphen_values = true)]
    pub sites: Pair,
    /// Microscopic time horizon
    #[arg(long, default_value_t = 5.0)]
    pub horizon: f64,
    /// Number of seeds checked
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Drive the wedge processes with independent clocks; the check then
    /// passes when violations are found
    #[arg(long)]
    pub decouple: bool,
    #[arg(long, default_value = "envelope.json")]
    pub out: String,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ShapeGrid {
    #[arg(long)]
    pub speed: PathBuf,
    #[arg(long, default_value = "0,0", allow_hyphen_values = true)]
    pub start: Pair,
    #[arg(long)]
    pub extent: Pair,
    #[arg(long)]
    pub h: f64,
    /// Largest short-move component [default: from h]
    #[arg(long)]
    pub max_component: Option<u32>,
    #[arg(long, default_value = "shape.csv")]
    pub out: String,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LevelCurve {
    #[arg(long)]
    pub speed: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub q: f64,
    #[arg(long)]
    pub t: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub xrange: Pair,
    #[arg(long, default_value_t = 101)]
    pub samples: usize,
    /// Initial data fixing the root (q − v₀(q), −v₀(q))
    #[arg(long, default_value = "step")]
    pub init: String,
    #[arg(long, default_value_t = 1.0 / 64.0)]
    pub h: f64,
    #[arg(long, default_value = "level_curve.csv")]
    pub out: String,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Hydro {
    #[arg(long)]
    pub speed: PathBuf,
    #[arg(long, default_value = "step")]
    pub init: String,
    #[arg(long)]
    pub t: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub xrange: Pair,
    #[arg(long, default_value_t = 201)]
    pub samples: usize,
    /// Equally spaced times in (0, t]
    #[arg(long, default_value_t = 1)]
    pub times: usize,
    /// Add the initial profile as a t = 0 slice
    #[arg(long)]
    pub include_t0: bool,
    #[arg(long, default_value_t = 1.0 / 64.0)]
    pub h: f64,
    #[arg(long, default_value = "hydro.csv")]
    pub out: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeArg {
    SupplyDemand,
    NonConservative,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Godunov {
    #[arg(long)]
    pub speed: PathBuf,
    #[arg(long, default_value = "step")]
    pub init: String,
    #[arg(long)]
    pub t: f64,
    #[arg(long, default_value_t = 1.0 / 400.0)]
    pub dx: f64,
    #[arg(long, default_value = "-2,4", allow_hyphen_values = true)]
    pub xrange: Pair,
    /// Equally spaced snapshot times after t = 0
    #[arg(long, default_value_t = 10)]
    pub snapshots: usize,
    #[arg(long, value_enum, default_value_t = SchemeArg::SupplyDemand)]
    pub scheme: SchemeArg,
    #[arg(long, default_value_t = 0.5)]
    pub cfl: f64,
    #[arg(long, default_value = "godunov.csv")]
    pub out: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Residual,
    Viscosity,
    Weak,
    Maxcurrent,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PdeCheck {
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Input CSV files; maxcurrent takes λ then ρ
    #[arg(long = "in", required = true)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub speed: PathBuf,
    #[arg(long, default_value_t = 0.02)]
    pub tol: f64,
    /// Difference step (residual) or touching radius (viscosity)
    #[arg(long)]
    pub delta: Option<f64>,
    /// Sample points `x,t;x,t;…` [default: from the input grid]
    #[arg(long, allow_hyphen_values = true)]
    pub points: Option<String>,
    /// Largest excluded fraction accepted by the residual check
    #[arg(long, default_value_t = 0.05)]
    pub max_excluded: f64,
    /// Test functions `x0,wx;…` for the weak check
    #[arg(long, allow_hyphen_values = true)]
    pub bumps: Option<String>,
    /// Probe positions for maxcurrent, comma separated
    #[arg(long, allow_hyphen_values = true)]
    pub xs: Option<String>,
    #[arg(long, default_value = "pde_check.json")]
    pub out: String,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Compare {
    #[arg(long)]
    pub speed: PathBuf,
    #[arg(long, default_value = "step")]
    pub init: String,
    #[arg(long, value_delimiter = ',', required = true)]
    pub n: Vec<u64>,
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    #[arg(long, default_value = "-1,1", allow_hyphen_values = true)]
    pub xrange: Pair,
    #[arg(long, default_value_t = 40)]
    pub bins: usize,
    #[arg(long, default_value_t = 20)]
    pub replicas: u64,
    #[arg(long, default_value_t = 1.0 / 64.0)]
    pub h: f64,
    /// L¹ bound on the density at the largest n and for the PDE suite
    #[arg(long, default_value_t = 0.05)]
    pub bound: f64,
    /// Only require the deviation to decrease in n
    #[arg(long)]
    pub trend_only: bool,
    #[arg(long)]
    pub skip_envelope: bool,
    #[arg(long)]
    pub skip_pde: bool,
    /// Prefix of the output files
    #[arg(long, default_value = "compare")]
    pub out: String,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Config file, or a manifest.json to replay
    #[arg(long)]
    pub config: PathBuf,
    /// Parameter overrides `key=value`
    #[arg(long = "set")]
    pub set: Vec<String>,
}
