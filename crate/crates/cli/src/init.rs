//! Initial data specifications.
//!
//! | spec              | density                       | particles          |
//! |-------------------|-------------------------------|--------------------|
//! | `step`            | 1 on `x ≤ 0`, 0 after         | deterministic      |
//! | `flat:p`          | `p`                           | deterministic      |
//! | `riemann:l,r`     | `l` on `x ≤ 0`, `r` after     | deterministic      |
//! | `bernoulli:p`     | `p`                           | independent sites  |
//! | `bernoulli:l,r`   | `l` on `x ≤ 0`, `r` after     | independent sites  |
//! | `file:<path>`     | piecewise constant from file  | deterministic      |
//!
//! A profile file holds `breaks = b1, b2, …` and `values = r0, r1, …` with
//! one more value than breaks.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use ditasep_core::tasep::{DensityProfile, InitRule};

use crate::speed::{key_values, parse_list};

#[derive(Debug, Clone, PartialEq)]
pub struct Init {
    pub profile: DensityProfile,
    pub random: bool,
}

impl Init {
    pub fn rule(&self, seed: u64) -> InitRule {
        if self.random {
            InitRule::Bernoulli { profile: self.profile.clone(), seed }
        } else {
            InitRule::Deterministic(self.profile.clone())
        }
    }

    pub fn v0(&self, x: f64) -> f64 {
        self.profile.v0(x)
    }

    pub fn rho0(&self, x: f64) -> f64 {
        self.profile.rho(x)
    }
}

fn pair(args: &str) -> Result<DensityProfile> {
    let v = parse_list(args)?;
    match v[..] {
        [p] => Ok(DensityProfile::Constant(p)),
        [left, right] => Ok(DensityProfile::Riemann { left, right }),
        _ => bail!("expected one or two densities"),
    }
}

pub fn parse(spec: &str) -> Result<Init> {
    let (kind, args) = spec.split_once(':').unwrap_or((spec, ""));
    let init = match kind {
        "step" if args.is_empty() => Init { profile: DensityProfile::Riemann { left: 1.0, right: 0.0 }, random: false },
        "flat" => Init { profile: DensityProfile::Constant(args.trim().parse().map_err(|_| anyhow!("bad density `{args}`"))?), random: false },
        "riemann" => match pair(args)? {
            p @ DensityProfile::Riemann { .. } => Init { profile: p, random: false },
            _ => bail!("riemann needs two densities"),
        },
        "bernoulli" => Init { profile: pair(args)?, random: true },
        "file" => {
            let path = Path::new(args);
            let text = std::fs::read_to_string(path).with_context(|| format!("reading profile {}", path.display()))?;
            let mut kv = key_values(&text)?;
            let breaks = kv.remove("breaks").map(|s| parse_list(&s)).transpose()?.unwrap_or_default();
            let values = parse_list(&kv.remove("values").ok_or_else(|| anyhow!("profile file needs `values`"))?)?;
            if let Some(k) = kv.keys().next() {
                bail!("unknown key `{k}` in profile file");
            }
            Init { profile: DensityProfile::Piecewise { breaks, values }, random: false }
        }
        _ => bail!("unknown initial data `{spec}` (step, flat:p, riemann:l,r, bernoulli:p[,r], file:path)"),
    };
    init.profile.validate().with_context(|| format!("initial data `{spec}`"))?;
    Ok(init)
}
