//! File layout under the output directory and atomic writes.

use std::fs;
use std::path::{Path, PathBuf};

use surfik::fk::{FkDataset, FkModel};
use surfik::geometry::TriangleMesh;
use surfik::nn::EpochLoss;
use surfik::oracle::{read_frames, MarkerFrame};
use surfik::sim2real::{MkBaselineModel, S2rModel};

use crate::error::CliError;

pub const DATASET_DIR: &str = "dataset";
pub const FRAMES: &str = "frames.jsonl";
pub const FK: &str = "fk.json";
pub const S2R: &str = "s2r.json";
pub const BASELINE: &str = "baseline.json";
pub const TARGET: &str = "target.obj";

pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: PathBuf) -> Result<Self, CliError> {
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn require(&self, name: &str) -> Result<PathBuf, CliError> {
        let p = self.path(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(CliError::Missing(format!("{} not found", p.display())))
        }
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let p = self.path(name);
        write_atomic(&p, bytes)?;
        Ok(p)
    }

    pub fn dataset(&self) -> Result<FkDataset, CliError> {
        let dir = self.require(DATASET_DIR)?;
        if !dir.join("manifest.json").exists() {
            return Err(CliError::Missing(format!("{} has no manifest", dir.display())));
        }
        Ok(FkDataset::load(&dir)?)
    }

    pub fn frames(&self) -> Result<Vec<MarkerFrame>, CliError> {
        let p = self.require(FRAMES)?;
        Ok(read_frames(std::io::BufReader::new(fs::File::open(p)?))?)
    }

    pub fn fk(&self) -> Result<FkModel, CliError> {
        Ok(FkModel::from_json(&fs::read_to_string(self.require(FK)?)?)?)
    }

    pub fn s2r(&self) -> Result<S2rModel, CliError> {
        Ok(S2rModel::from_json(&fs::read_to_string(self.require(S2R)?)?)?)
    }

    pub fn baseline(&self) -> Result<Option<MkBaselineModel>, CliError> {
        let p = self.path(BASELINE);
        if !p.exists() {
            return Ok(None);
        }
        Ok(Some(MkBaselineModel::from_json(&fs::read_to_string(p)?)?))
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_mesh(path: &Path) -> Result<TriangleMesh, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read mesh {}: {e}", path.display())))?;
    TriangleMesh::from_obj(&text).map_err(|e| CliError::Input(format!("bad mesh {}: {e}", path.display())))
}

pub fn loss_csv(history: &[EpochLoss]) -> String {
    let mut s = String::from("epoch,train,validation\n");
    for h in history {
        let val = h.validation.map(|v| v.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{},{}\n", h.epoch, h.train, val));
    }
    s
}
