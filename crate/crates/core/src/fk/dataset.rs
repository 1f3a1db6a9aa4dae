use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bspline::{BSplineSurface, ControlDelta, ControlGrid, Fitter, DEFAULT_DEGREE, DEFAULT_GRID, DEFAULT_RIDGE};
use crate::oracle::{corner_actuations, halton_actuations, Actuation, VirtualMannequin};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub rows: usize,
    pub cols: usize,
    pub degree: usize,
    pub ridge: f64,
    /// Include the 2⁹ min/max corner actuations.
    pub corners: bool,
    pub halton_count: usize,
    pub halton_skip: usize,
    pub train_fraction: f64,
    pub split_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            rows: DEFAULT_GRID,
            cols: DEFAULT_GRID,
            degree: DEFAULT_DEGREE,
            ridge: DEFAULT_RIDGE,
            corners: true,
            halton_count: 488,
            halton_skip: 0,
            train_fraction: 0.7,
            split_seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn actuations(&self) -> Vec<Actuation> {
        let mut out = if self.corners { corner_actuations() } else { Vec::new() };
        out.extend(halton_actuations(self.halton_count, self.halton_skip));
        out
    }
}

/// Actuation/shape pairs with control grids stored as deltas about the
/// training-split mean grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FkDataset {
    pub actuations: Vec<Actuation>,
    pub deltas: Vec<ControlDelta>,
    pub mean_grid: ControlGrid,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub degree: usize,
    pub fit_rms: Vec<f64>,
    pub fit_max: Vec<f64>,
}

impl FkDataset {
    pub fn len(&self) -> usize {
        self.actuations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actuations.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.mean_grid.dims()
    }

    pub fn controls(&self, index: usize) -> Result<ControlGrid> {
        self.deltas[index].apply(&self.mean_grid)
    }

    pub fn surface(&self, index: usize) -> Result<BSplineSurface> {
        BSplineSurface::clamped(self.controls(index)?, self.degree)
    }

    /// Writes `manifest.json` plus one surface file per sample under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let surf_dir = dir.join("surfaces");
        fs::create_dir_all(&surf_dir)?;
        let mut files = Vec::with_capacity(self.len());
        for i in 0..self.len() {
            let name = format!("surfaces/{i:05}.json");
            write_atomic(&dir.join(&name), self.surface(i)?.to_json()?.as_bytes())?;
            files.push(name);
        }
        let (rows, cols) = self.dims();
        let manifest = Manifest {
            rows,
            cols,
            degree: self.degree,
            actuations: self.actuations.clone(),
            train: self.train.clone(),
            test: self.test.clone(),
            mean_grid: self.mean_grid.points().iter().map(|p| [p.x, p.y, p.z]).collect(),
            surfaces: files,
            fit_rms: self.fit_rms.clone(),
            fit_max: self.fit_max.clone(),
        };
        write_atomic(
            &dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?.as_bytes(),
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let mean_grid = ControlGrid::new(
            manifest.rows,
            manifest.cols,
            manifest.mean_grid.iter().map(|&p| p.into()).collect(),
        )?;
        if manifest.surfaces.len() != manifest.actuations.len() {
            return Err(Error::mismatch(
                "surface files",
                manifest.actuations.len(),
                manifest.surfaces.len(),
            ));
        }
        let deltas = manifest
            .surfaces
            .iter()
            .map(|name| {
                let s = BSplineSurface::from_json(&fs::read_to_string(dir.join(name))?)?;
                ControlDelta::between(s.control(), &mean_grid)
            })
            .collect::<Result<Vec<_>>>()?;
        let ds = Self {
            actuations: manifest.actuations,
            deltas,
            mean_grid,
            train: manifest.train,
            test: manifest.test,
            degree: manifest.degree,
            fit_rms: manifest.fit_rms,
            fit_max: manifest.fit_max,
        };
        check_split(&ds.train, &ds.test, ds.len())?;
        Ok(ds)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    rows: usize,
    cols: usize,
    degree: usize,
    actuations: Vec<Actuation>,
    train: Vec<usize>,
    test: Vec<usize>,
    mean_grid: Vec<[f64; 3]>,
    surfaces: Vec<String>,
    fit_rms: Vec<f64>,
    fit_max: Vec<f64>,
}

fn check_split(train: &[usize], test: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for &i in train.iter().chain(test) {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(Error::Invalid("train/test split is not a partition".into()));
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Invalid("train/test split is not a partition".into()));
    }
    Ok(())
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp~");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Seeded train/test partition; both index lists come back sorted.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64) * train_fraction).round() as usize;
    let mut train = order[..n_train.min(n)].to_vec();
    let mut test = order[n_train.min(n)..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

pub fn build_dataset_with(vm: &VirtualMannequin, cfg: &DatasetConfig) -> Result<FkDataset> {
    let actuations = cfg.actuations();
    if actuations.is_empty() {
        return Err(Error::Invalid("dataset has no actuations".into()));
    }
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction <= 1.0) {
        return Err(Error::Invalid("train_fraction must lie in (0, 1]".into()));
    }
    let fitter = Fitter::new(vm.sample_params(), cfg.rows, cfg.cols, cfg.degree, cfg.ridge)?;
    let fitted = actuations
        .par_iter()
        .enumerate()
        .map(|(index, a)| {
            vm.sim_surface(a)
                .and_then(|s| fitter.fit(&s))
                .map_err(|e| Error::SampleFit {
                    index,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let (train, test) = split_indices(actuations.len(), cfg.train_fraction, cfg.split_seed);
    let mean_grid = ControlGrid::mean(train.iter().map(|&i| fitted[i].surface.control()))?;
    let deltas = fitted
        .iter()
        .map(|f| ControlDelta::between(f.surface.control(), &mean_grid))
        .collect::<Result<Vec<_>>>()?;
    Ok(FkDataset {
        actuations,
        deltas,
        mean_grid,
        train,
        test,
        degree: cfg.degree,
        fit_rms: fitted.iter().map(|f| f.rms_residual).collect(),
        fit_max: fitted.iter().map(|f| f.max_residual).collect(),
    })
}

/// Default design: 512 corners plus 488 Halton points, 7:3 split.
pub fn build_dataset(vm: &VirtualMannequin, m: usize, n: usize) -> Result<FkDataset> {
    build_dataset_with(
        vm,
        &DatasetConfig {
            rows: m,
            cols: n,
            ..DatasetConfig::default()
        },
    )
}
