//! On-disk store of semantic boundaries, one JSON file per boundary.
//!
//! A boundary file looks like
//!
//! ```text
//! {
//!   "name": "age",
//!   "space": "Z",
//!   "dim": 512,
//!   "normal": [ ... ],
//!   "intercept": -1.2000000000000000e-2,
//!   "meta": { "seed": 0, "train_count": 2800, "val_accuracy": 9.9916666666666671e-1 }
//! }
//! ```
//!
//! Numbers carry 17 significant digits, so a saved normal reads back bit
//! for bit. Saves write a temporary file next to the target and rename it
//! over the old one; readers never observe a partial file.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use hypersem_core::geometry::{self, DirectionMeta, SemanticDirection, Space, UNIT_NORM_TOLERANCE};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::json;

/// Environment variable that overrides [`default_home`].
pub const HOME_ENV: &str = "HYPERSEM_HOME";
const EXTENSION: &str = "json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("I/O failure on {}: {source}", path.display())]
    IoFailure {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{} is malformed at byte {offset}: {reason}", path.display())]
    MalformedFile { path: PathBuf, offset: usize, reason: String },
    #[error("{}: normal has norm {norm}, expected 1", path.display())]
    UnitNormViolation { path: PathBuf, norm: f64 },
    #[error("invalid boundary name {0:?} (use letters, digits, '-' and '_')")]
    InvalidName(String),
    #[error("no boundary named {0:?}")]
    NotFound(String),
}

pub type Result<T> = std::result::Result<T, StoreError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::IoFailure { path: path.to_path_buf(), source }
}

/// `$HYPERSEM_HOME`, or `~/.hypersem` when it is unset.
pub fn default_home() -> PathBuf {
    if let Some(dir) = std::env::var_os(HOME_ENV) {
        return PathBuf::from(dir);
    }
    std::env::var_os("HOME").map(PathBuf::from).unwrap_or_default().join(".hypersem")
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundaryFile {
    name: String,
    space: Space,
    dim: usize,
    normal: Vec<f64>,
    intercept: f64,
    meta: DirectionMeta,
}

/// Serializes a boundary in the store's file format.
pub fn encode(b: &SemanticDirection) -> String {
    json::to_string_pretty(&BoundaryFile {
        name: b.name().to_string(),
        space: b.space(),
        dim: b.dim(),
        normal: b.normal().to_vec(),
        intercept: b.intercept(),
        meta: b.meta().clone(),
    })
}

/// Parses a boundary file. `path` is only used in error messages.
pub fn decode(text: &str, path: &Path) -> Result<SemanticDirection> {
    let malformed = |offset, reason: String| StoreError::MalformedFile { path: path.to_path_buf(), offset, reason };
    let file: BoundaryFile = json::from_str(text).map_err(|(offset, reason)| malformed(offset, reason))?;
    if file.normal.len() != file.dim {
        return Err(malformed(0, format!("dim is {} but the normal has {} entries", file.dim, file.normal.len())));
    }
    check_name(&file.name).map_err(|_| malformed(0, format!("invalid name {:?}", file.name)))?;
    let norm = geometry::norm(&file.normal);
    if !((norm - 1.0).abs() <= UNIT_NORM_TOLERANCE) {
        return Err(StoreError::UnitNormViolation { path: path.to_path_buf(), norm });
    }
    SemanticDirection::new(file.name, file.normal, file.intercept, file.space, file.meta)
        .map_err(|e| malformed(0, e.to_string()))
}

fn check_name(name: &str) -> Result<()> {
    let ok = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidName(name.to_string()))
    }
}

/// Writes `text` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, text: &str) -> io::Result<()> {
    let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    fs::write(&tmp, text)?;
    fs::rename(&tmp, path)
}

/// A directory of boundary files plus the boundaries loaded from it.
#[derive(Debug, Clone)]
pub struct BoundaryStore {
    dir: PathBuf,
    loaded: BTreeMap<String, SemanticDirection>,
}

impl BoundaryStore {
    /// Opens (creating if needed) the store at `dir`. Nothing is loaded yet.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(Self { dir, loaded: BTreeMap::new() })
    }

    /// The `boundaries` directory under [`default_home`].
    pub fn open_default() -> Result<Self> {
        Self::open(default_home().join("boundaries"))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_of(&self, name: &str) -> Result<PathBuf> {
        check_name(name)?;
        Ok(self.dir.join(format!("{name}.{EXTENSION}")))
    }

    pub fn save(&mut self, b: &SemanticDirection) -> Result<PathBuf> {
        let path = self.path_of(b.name())?;
        write_atomic(&path, &encode(b)).map_err(io_err(&path))?;
        self.loaded.insert(b.name().to_string(), b.clone());
        Ok(path)
    }

    pub fn load(&mut self, name: &str) -> Result<SemanticDirection> {
        let path = self.path_of(name)?;
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::NotFound(name.to_string())),
            Err(e) => return Err(io_err(&path)(e)),
        };
        let b = decode(&text, &path)?;
        if b.name() != name {
            return Err(StoreError::MalformedFile {
                path,
                offset: 0,
                reason: format!("file holds boundary {:?}", b.name()),
            });
        }
        self.loaded.insert(name.to_string(), b.clone());
        Ok(b)
    }

    /// Loads every boundary file in the directory, in name order.
    pub fn load_all(&mut self) -> Result<Vec<String>> {
        let mut names = Vec::new();
        for entry in fs::read_dir(&self.dir).map_err(io_err(&self.dir))? {
            let path = entry.map_err(io_err(&self.dir))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some(EXTENSION) {
                continue;
            }
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                if check_name(stem).is_ok() {
                    names.push(stem.to_string());
                }
            }
        }
        names.sort();
        for name in &names {
            self.load(name)?;
        }
        Ok(names)
    }

    pub fn get(&self, name: &str) -> Option<&SemanticDirection> {
        self.loaded.get(name)
    }

    pub fn loaded(&self) -> &BTreeMap<String, SemanticDirection> {
        &self.loaded
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(name: &str) -> SemanticDirection {
        let raw: Vec<f64> = (0..16).map(|i| ((i * 7919) % 13) as f64 / 3.0 - 2.0).collect();
        let meta = DirectionMeta { seed: 3, train_count: 2800, val_accuracy: 0.9975 };
        SemanticDirection::from_unnormalized(name, &raw, 0.125, Space::W, meta).unwrap()
    }

    #[test]
    fn save_then_load_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = BoundaryStore::open(dir.path()).unwrap();
        let b = sample("age");
        store.save(&b).unwrap();
        let mut fresh = BoundaryStore::open(dir.path()).unwrap();
        assert_eq!(fresh.load("age").unwrap(), b);
        assert_eq!(fresh.load_all().unwrap(), vec!["age".to_string()]);
    }

    #[test]
    fn half_length_normal_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let b = sample("smile");
        let mut file: serde_json::Value = serde_json::from_str(&encode(&b)).unwrap();
        let halved: Vec<f64> = b.normal().iter().map(|x| x * 0.5).collect();
        file["normal"] = serde_json::json!(halved);
        fs::write(dir.path().join("smile.json"), file.to_string()).unwrap();
        let mut store = BoundaryStore::open(dir.path()).unwrap();
        match store.load("smile") {
            Err(StoreError::UnitNormViolation { norm, .. }) => assert!((norm - 0.5).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_file_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let text = encode(&sample("pose"));
        let cut = &text[..text.len() / 2];
        fs::write(dir.path().join("pose.json"), cut).unwrap();
        let mut store = BoundaryStore::open(dir.path()).unwrap();
        match store.load("pose") {
            Err(StoreError::MalformedFile { offset, .. }) => assert_eq!(offset, cut.len()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn names_cannot_escape_the_directory() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = BoundaryStore::open(dir.path()).unwrap();
        assert!(matches!(store.save(&sample("../x")), Err(StoreError::InvalidName(_))));
        assert!(matches!(store.load("missing"), Err(StoreError::NotFound(_))));
    }

    #[test]
    fn dim_must_match_normal() {
        let text = encode(&sample("age")).replacen("\"dim\": 16", "\"dim\": 15", 1);
        assert!(matches!(decode(&text, Path::new("x")), Err(StoreError::MalformedFile { .. })));
    }

    #[test]
    fn overwrite_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = BoundaryStore::open(dir.path()).unwrap();
        store.save(&sample("age")).unwrap();
        let other = sample("age").with_meta(DirectionMeta { seed: 9, train_count: 1, val_accuracy: 0.5 });
        store.save(&other).unwrap();
        let mut fresh = BoundaryStore::open(dir.path()).unwrap();
        assert_eq!(fresh.load("age").unwrap(), other);
        let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }
}
