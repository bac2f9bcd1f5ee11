//! Speed-field description files.
//!
//! ```text
//! # two-phase field in particle coordinates
//! family = xstep
//! frame  = particle
//! left   = 1
//! right  = 3
//! at     = 0
//! ```
//!
//! `frame` is `lpp` (default, the file describes `c(u, w)`) or `particle`
//! (the file describes `c̃(x, y) = c(x + y, y)`). Lists are comma
//! separated. Unknown or repeated keys are errors.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use ditasep_core::SpeedField;

/// A field in both frames.
#[derive(Debug, Clone)]
pub struct Fields {
    /// LPP frame `c`.
    pub lpp: SpeedField,
    /// Particle frame `c̃`.
    pub particle: SpeedField,
}

impl Fields {
    pub fn from_lpp(c: SpeedField) -> Self {
        Self { particle: c.shear(), lpp: c }
    }

    pub fn from_particle(tilde: SpeedField) -> Self {
        Self { lpp: tilde.unshear(), particle: tilde }
    }
}

pub fn load(path: &Path) -> Result<Fields> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading speed file {}", path.display()))?;
    parse(&text).with_context(|| format!("parsing speed file {}", path.display()))
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected `key = value`", k + 1))?;
        let key = key.trim().to_string();
        if out.insert(key.clone(), value.trim().to_string()).is_some() {
            bail!("line {}: repeated key `{key}`", k + 1);
        }
    }
    Ok(out)
}

struct Keys(BTreeMap<String, String>);

impl Keys {
    fn take(&mut self, key: &str) -> Result<String> {
        self.0.remove(key).ok_or_else(|| anyhow!("missing key `{key}`"))
    }

    fn num(&mut self, key: &str) -> Result<f64> {
        let v = self.take(key)?;
        v.parse().map_err(|_| anyhow!("key `{key}`: `{v}` is not a number"))
    }

    fn num_or(&mut self, key: &str, default: f64) -> Result<f64> {
        if self.0.contains_key(key) {
            self.num(key)
        } else {
            Ok(default)
        }
    }

    fn opt_num(&mut self, key: &str) -> Result<Option<f64>> {
        if self.0.contains_key(key) {
            self.num(key).map(Some)
        } else {
            Ok(None)
        }
    }

    fn count(&mut self, key: &str) -> Result<usize> {
        let v = self.take(key)?;
        v.parse().map_err(|_| anyhow!("key `{key}`: `{v}` is not a count"))
    }

    fn list(&mut self, key: &str) -> Result<Vec<f64>> {
        let v = self.take(key)?;
        parse_list(&v).with_context(|| format!("key `{key}`"))
    }

    fn finish(self) -> Result<()> {
        if let Some(k) = self.0.keys().next() {
            bail!("unknown key `{k}`");
        }
        Ok(())
    }
}

pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',').map(|p| p.trim().parse::<f64>().map_err(|_| anyhow!("`{p}` is not a number"))).collect()
}

pub fn parse(text: &str) -> Result<Fields> {
    let mut k = Keys(key_values(text)?);
    let family = k.take("family")?;
    let frame = if k.0.contains_key("frame") { k.take("frame")? } else { "lpp".to_string() };
    let field = match family.as_str() {
        "constant" => SpeedField::constant(k.num("value")?),
        "xstep" => SpeedField::xstep(k.num("left")?, k.num("right")?, k.num_or("at", 0.0)?),
        "ystep" => SpeedField::ystep(k.num("below")?, k.num("above")?, k.num_or("at", 0.0)?),
        "oblique_step" => SpeedField::oblique_step(k.num("below")?, k.num("above")?, k.num("slope")?, k.num("intercept")?),
        "rect_checker" => {
            let origin = k.list("origin")?;
            if origin.len() != 2 {
                bail!("key `origin`: expected two numbers");
            }
            SpeedField::rect_checker(
                k.num("low")?,
                k.num("high")?,
                k.num("cell_w")?,
                k.num("cell_h")?,
                k.count("nx")?,
                k.count("ny")?,
                [origin[0], origin[1]],
            )
        }
        "bump" => SpeedField::bump(k.num("base")?, k.num("amp")?),
        "tabulated" => {
            let (us, ws) = (k.list("us")?, k.list("ws")?);
            let (d0, d1) = (k.opt_num("d_start")?, k.opt_num("d_end")?);
            SpeedField::tabulated(&us, &ws, d0, d1, k.num("below")?, k.num("above")?)
        }
        other => bail!("unknown family `{other}`"),
    }?;
    k.finish()?;
    match frame.as_str() {
        "lpp" => Ok(Fields::from_lpp(field)),
        "particle" => Ok(Fields::from_particle(field)),
        other => bail!("unknown frame `{other}` (expected lpp or particle)"),
    }
}
