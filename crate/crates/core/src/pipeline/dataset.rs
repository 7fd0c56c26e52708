use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::fragmap::{NormalizationFactors, ScaleSpec};
use crate::grid::{DensityField, DomainSpec};
use crate::io::{load_grid, save_grid, Manifest};
use crate::topopt::Method;

/// Fields of one harvested optimization iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// 1-based iteration of the source run.
    pub iteration: usize,
    pub coarse_energy: ScalarField,
    pub density: DensityField,
    pub fine_energy: ScalarField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub problem: String,
    pub method: Method,
    pub scale: ScaleSpec,
    pub samples: Vec<Sample>,
    /// Factors fixed for this dataset, if any.
    pub norm: Option<NormalizationFactors>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub(crate) fn clone_header(&self) -> Dataset {
        Dataset {
            problem: self.problem.clone(),
            method: self.method,
            scale: self.scale,
            samples: Vec::new(),
            norm: self.norm,
        }
    }

    /// Samples of iterations `first..=last`.
    pub fn iterations(&self, first: usize, last: usize) -> Dataset {
        super::iteration_window(self, first..last + 1)
    }

    pub fn manifest(&self) -> Manifest {
        let mut m = Manifest::new();
        m.set("problem", &self.problem);
        m.set("method", self.method);
        m.set("fine_w", self.scale.fine_w);
        m.set("fine_h", self.scale.fine_h);
        m.set("ratio", self.scale.ratio);
        m.set("samples", self.len());
        if let Some(n) = self.norm {
            m.set("norm_coarse", format!("{:e}", n.coarse));
            m.set("norm_fine", format!("{:e}", n.fine));
        }
        m
    }

    /// Writes `manifest.txt`, the passive mask, and three grid files per
    /// sample into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut m = self.manifest();
        m.set(
            "iterations",
            self.samples
                .iter()
                .map(|s| s.iteration.to_string())
                .collect::<Vec<_>>()
                .join(" "),
        );
        m.save(&dir.join("manifest.txt"))?;
        if let Some(first) = self.samples.first() {
            let d = first.density.domain();
            let mask = ScalarField::from_fn(d.height(), d.width(), |r, c| d.is_passive(r, c) as u8 as f64);
            save_grid(&mask, &dir.join("passive.grid"))?;
        }
        for s in &self.samples {
            let stem = format!("sample_{:04}", s.iteration);
            save_grid(s.density.values(), &dir.join(format!("{stem}_density.grid")))?;
            save_grid(&s.coarse_energy, &dir.join(format!("{stem}_coarse.grid")))?;
            save_grid(&s.fine_energy, &dir.join(format!("{stem}_fine.grid")))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let m = Manifest::load(&dir.join("manifest.txt"))?;
        let scale = ScaleSpec::new(m.require("fine_w")?, m.require("fine_h")?, m.require("ratio")?)?;
        let count: usize = m.require("samples")?;
        let norm = match (m.get("norm_coarse"), m.get("norm_fine")) {
            (Some(_), Some(_)) => Some(NormalizationFactors::new(
                m.require("norm_coarse")?,
                m.require("norm_fine")?,
            )?),
            _ => None,
        };
        let iterations: Vec<usize> = m
            .get("iterations")
            .unwrap_or("")
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Config(format!("bad iteration `{t}`"))))
            .collect::<Result<_>>()?;
        if iterations.len() != count {
            return Err(Error::Corrupt(format!(
                "manifest lists {} iterations for {count} samples",
                iterations.len()
            )));
        }
        let mut samples = Vec::with_capacity(count);
        if count > 0 {
            let mask = load_grid(&dir.join("passive.grid"))?;
            let passive = mask.as_slice().iter().map(|&v| v != 0.0).collect();
            let domain = Arc::new(DomainSpec::with_passive(mask.cols(), mask.rows(), passive)?);
            for it in iterations {
                let stem = format!("sample_{it:04}");
                let values = load_grid(&dir.join(format!("{stem}_density.grid")))?;
                samples.push(Sample {
                    iteration: it,
                    density: DensityField::new(domain.clone(), values)?,
                    coarse_energy: load_grid(&dir.join(format!("{stem}_coarse.grid")))?,
                    fine_energy: load_grid(&dir.join(format!("{stem}_fine.grid")))?,
                });
            }
        }
        Ok(Dataset {
            problem: m.require("problem")?,
            method: m.require("method")?,
            scale,
            samples,
            norm,
        })
    }
}
