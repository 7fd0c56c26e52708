//! Effective run configuration: `key=value` file merged with command-line
//! flags (flags win).

use std::path::{Path, PathBuf};
use std::str::FromStr;

use fragto::fragmap::{FragmentSpec, NormalizationFactors, ScaleSpec, DEFAULT_RATIO};
use fragto::grid::ProblemKind;
use fragto::io::Manifest;
use fragto::mapnet::{TrainConfig, DEFAULT_CHANNELS};
use fragto::topopt::{Method, OptimizerConfig};
use fragto::{Error, Result};

/// Every key a run configuration may set.
pub const KEYS: &[&str] = &[
    "problem",
    "size",
    "method",
    "iters",
    "ratio",
    "max_iters",
    "penal",
    "filter_radius",
    "move_limit",
    "evolution_rate",
    "convergence_tol",
    "crop_scale",
    "overlap",
    "lr",
    "steps",
    "batch_size",
    "seed",
    "channels",
    "engine",
    "model",
    "data",
    "norm_coarse",
    "norm_fine",
    "auto_norm",
    "out",
    "repeats",
    "test_first",
    "test_last",
    "tol",
    "sizes",
    "crops",
    "ns",
    "input",
    "kind",
];

/// Keys written by the tool itself. They are accepted in a replayed
/// manifest and ignored.
pub const RECORDED_KEYS: &[&str] = &["command", "version", "fine_w", "fine_h", "samples", "iterations"];

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    command: String,
    values: Manifest,
}

impl RunConfig {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            values: Manifest::new(),
        }
    }

    /// Loads a config file. A manifest from an earlier run may be replayed
    /// as long as it was written by the same command.
    pub fn from_file(command: &str, path: &Path) -> Result<Self> {
        let m = Manifest::load(path)?;
        let mut cfg = Self::new(command);
        for (k, v) in m.entries() {
            if RECORDED_KEYS.contains(&k) {
                if k == "command" && v != command {
                    return Err(Error::Config(format!(
                        "{} was written by `{v}`, not `{command}`",
                        path.display()
                    )));
                }
                continue;
            }
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown configuration key `{key}`")));
        }
        self.values.set(key, value);
        Ok(())
    }

    pub fn set_opt<T: ToString>(&mut self, key: &str, value: Option<T>) -> Result<()> {
        match value {
            Some(v) => self.set(key, v),
            None => Ok(()),
        }
    }

    /// Records a value only when none is present yet.
    pub fn set_default(&mut self, key: &str, value: impl ToString) -> Result<()> {
        if self.values.get(key).is_none() {
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key)
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("bad value `{raw}` for `{key}`"))),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.parse(key)?
            .ok_or_else(|| Error::Config(format!("missing required setting `{key}`")))
    }

    pub fn or<T: FromStr + ToString>(&mut self, key: &str, default: T) -> Result<T> {
        self.set_default(key, default.to_string())?;
        self.require(key)
    }

    pub fn flag(&mut self, key: &str) -> Result<bool> {
        self.or(key, false)
    }

    pub fn path(&self, key: &str) -> Result<PathBuf> {
        self.get(key)
            .map(PathBuf::from)
            .ok_or_else(|| Error::Config(format!("missing required setting `{key}`")))
    }

    pub fn list(&self, key: &str) -> Result<Vec<usize>> {
        let Some(raw) = self.get(key) else {
            return Err(Error::Config(format!("missing required setting `{key}`")));
        };
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::Config(format!("bad entry `{s}` in `{key}`")))
            })
            .collect()
    }

    pub fn problem(&self) -> Result<ProblemKind> {
        self.require::<String>("problem")?.parse()
    }

    pub fn size(&mut self) -> Result<(usize, usize)> {
        let raw: String = self.or("size", "128x128".to_string())?;
        parse_size(&raw)
    }

    pub fn method(&mut self) -> Result<Method> {
        self.or("method", Method::Beso.to_string())?.parse()
    }

    pub fn ratio(&mut self) -> Result<usize> {
        self.or("ratio", DEFAULT_RATIO)
    }

    pub fn scale(&mut self) -> Result<ScaleSpec> {
        let (w, h) = self.size()?;
        let ratio = self.ratio()?;
        ScaleSpec::new(w, h, ratio)
    }

    /// Optimizer settings for a design `width` elements wide; every field is
    /// written back so the manifest shows the effective values.
    pub fn optimizer(&mut self, width: usize) -> Result<OptimizerConfig> {
        let method = self.method()?;
        let d = OptimizerConfig::new(method, width);
        let cfg = OptimizerConfig {
            method,
            penal: self.or("penal", d.penal)?,
            filter_radius: self.or("filter_radius", d.filter_radius)?,
            move_limit: self.or("move_limit", d.move_limit)?,
            beso_evolution_rate: self.or("evolution_rate", d.beso_evolution_rate)?,
            max_iters: self.or("max_iters", d.max_iters)?,
            convergence_tol: self.or("convergence_tol", d.convergence_tol)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn training(&mut self) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            learning_rate: self.or("lr", d.learning_rate)?,
            steps: self.or("steps", d.steps)?,
            batch_size: self.or("batch_size", d.batch_size)?,
            seed: self.or("seed", d.seed)?,
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn channels(&mut self) -> Result<usize> {
        self.or("channels", DEFAULT_CHANNELS)
    }

    /// Fragment geometry; the default crop gives 2×2 coarse patches.
    pub fn fragments(&mut self, scale: &ScaleSpec) -> Result<FragmentSpec> {
        let crop = self.or("crop_scale", (scale.coarse_w / 2).max(1))?;
        let overlap = self.flag("overlap")?;
        FragmentSpec::new(scale, crop, overlap)
    }

    /// Both normalization overrides, if given. Giving only one is an error.
    pub fn norm_override(&self) -> Result<Option<NormalizationFactors>> {
        match (self.parse::<f64>("norm_coarse")?, self.parse::<f64>("norm_fine")?) {
            (Some(c), Some(f)) => Ok(Some(NormalizationFactors::new(c, f)?)),
            (None, None) => Ok(None),
            _ => Err(Error::Config(
                "--norm-coarse and --norm-fine must be given together".into(),
            )),
        }
    }

    /// Manifest of the effective configuration.
    pub fn manifest(&self) -> Manifest {
        let mut m = Manifest::new();
        m.set("command", &self.command);
        m.set("version", env!("CARGO_PKG_VERSION"));
        for key in KEYS {
            if let Some(v) = self.values.get(key) {
                m.set(*key, v);
            }
        }
        m
    }
}

pub fn parse_size(raw: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("size must look like 128x128, got `{raw}`"));
    let (w, h) = raw.split_once(['x', 'X']).ok_or_else(bad)?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((w, h))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let mut c = RunConfig::new("train");
        assert!(c.set("lr", 1e-3).is_ok());
        assert!(matches!(c.set("learning_rate", 1e-3), Err(Error::Config(_))));
    }

    #[test]
    fn defaults_are_recorded() {
        let mut c = RunConfig::new("train");
        let t = c.training().unwrap();
        assert_eq!(t.learning_rate, 1e-4);
        assert_eq!(t.steps, 1000);
        let m = c.manifest();
        assert_eq!(m.get("lr"), Some("0.0001"));
        assert_eq!(m.get("command"), Some("train"));
    }

    #[test]
    fn sizes_and_lists() {
        assert_eq!(parse_size("128x64").unwrap(), (128, 64));
        assert!(parse_size("128").is_err());
        assert!(parse_size("0x4").is_err());
        let mut c = RunConfig::new("ablate");
        c.set("ns", "20, 40,60").unwrap();
        assert_eq!(c.list("ns").unwrap(), vec![20, 40, 60]);
    }

    #[test]
    fn replay_checks_the_command() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.txt");
        std::fs::write(&p, "command=train\nversion=0.1.0\nlr=0.001\n").unwrap();
        let c = RunConfig::from_file("train", &p).unwrap();
        assert_eq!(c.get("lr"), Some("0.001"));
        assert!(RunConfig::from_file("optimize", &p).is_err());
        std::fs::write(&p, "bogus=1\n").unwrap();
        assert!(RunConfig::from_file("train", &p).is_err());
    }
}
