//! On-disk dataset discovery.
//!
//! ```text
//! <root>/scenes/<scene_id>/masked.png
//! <root>/scenes/<scene_id>/query.txt
//! <root>/objects/<object_id>/image.png
//! ```
//!
//! Anything else inside those directories (textures, meshes, stray files) is
//! ignored.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

pub const SCENES_DIR: &str = "scenes";
pub const OBJECTS_DIR: &str = "objects";
pub const DEFAULT_SCENE_IMAGE: &str = "masked.png";
pub const DEFAULT_QUERY_FILE: &str = "query.txt";
pub const DEFAULT_OBJECT_IMAGE: &str = "image.png";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MalformedEntry {
    pub id: String,
    pub reason: String,
}

impl fmt::Display for MalformedEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.id, self.reason)
    }
}

fn join_entries(entries: &[MalformedEntry]) -> String {
    entries.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("missing directory {0}")]
    MissingRoot(PathBuf),
    #[error("dataset has {scenes} scenes and {objects} objects; both must be non-empty")]
    EmptyDataset { scenes: usize, objects: usize },
    #[error("malformed entries: {}", join_entries(.0))]
    MalformedEntries(Vec<MalformedEntry>),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode image {path}: {message}")]
    DecodeError { path: PathBuf, message: String },
    #[error("{0} is not valid UTF-8")]
    Utf8Error(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub scene_id: String,
    pub masked_image_path: PathBuf,
    pub query_path: PathBuf,
    pub query_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectEntry {
    pub object_id: String,
    pub rgb_image_path: PathBuf,
}

/// Scenes and objects, each sorted ascending by id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenes: Vec<SceneEntry>,
    pub objects: Vec<ObjectEntry>,
    /// Entries skipped in lenient mode.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<MalformedEntry>,
}

impl Manifest {
    pub fn scene_ids(&self) -> Vec<String> {
        self.scenes.iter().map(|s| s.scene_id.clone()).collect()
    }

    pub fn object_ids(&self) -> Vec<String> {
        self.objects.iter().map(|o| o.object_id.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanOptions {
    pub scene_image_name: String,
    pub query_file_name: String,
    pub object_image_name: String,
    /// Skip malformed entries instead of failing.
    pub lenient: bool,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            scene_image_name: DEFAULT_SCENE_IMAGE.into(),
            query_file_name: DEFAULT_QUERY_FILE.into(),
            object_image_name: DEFAULT_OBJECT_IMAGE.into(),
            lenient: false,
        }
    }
}

/// Subdirectories of `dir`, sorted by name.
fn subdirs(dir: &Path) -> Result<Vec<(String, PathBuf)>, DatasetError> {
    if !dir.is_dir() {
        return Err(DatasetError::MissingRoot(dir.to_owned()));
    }
    let io = |source| DatasetError::Io {
        path: dir.to_owned(),
        source,
    };
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let entry = entry.map_err(io)?;
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        out.push((name, path));
    }
    out.sort();
    Ok(out)
}

fn read_prompt(path: &Path) -> Result<String, DatasetError> {
    let bytes = fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut text = String::from_utf8(bytes).map_err(|_| DatasetError::Utf8Error(path.to_owned()))?;
    if text.ends_with('\n') {
        text.pop();
        if text.ends_with('\r') {
            text.pop();
        }
    }
    Ok(text)
}

fn check_image(path: &Path) -> Result<(), String> {
    if !path.is_file() {
        return Err(format!("missing {}", path.display()));
    }
    image::ImageReader::open(path)
        .and_then(|r| r.with_guessed_format())
        .map_err(|e| e.to_string())?
        .into_dimensions()
        .map_err(|e| format!("unreadable image {}: {e}", path.display()))
        .and_then(|(w, h)| {
            if w == 0 || h == 0 {
                Err(format!("empty image {}", path.display()))
            } else {
                Ok(())
            }
        })
}

pub fn scan_dataset(root: impl AsRef<Path>, opts: &ScanOptions) -> Result<Manifest, DatasetError> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(DatasetError::MissingRoot(root.to_owned()));
    }
    let scene_dirs = subdirs(&root.join(SCENES_DIR))?;
    let object_dirs = subdirs(&root.join(OBJECTS_DIR))?;

    let mut bad = Vec::new();
    let mut scenes = Vec::new();
    for (id, dir) in scene_dirs {
        let masked_image_path = dir.join(&opts.scene_image_name);
        let query_path = dir.join(&opts.query_file_name);
        let checked = check_image(&masked_image_path).and_then(|()| {
            if !query_path.is_file() {
                return Err(format!("missing {}", query_path.display()));
            }
            let text = read_prompt(&query_path).map_err(|e| e.to_string())?;
            if text.trim().is_empty() {
                return Err(format!("empty prompt in {}", query_path.display()));
            }
            Ok(text)
        });
        match checked {
            Ok(query_text) => scenes.push(SceneEntry {
                scene_id: id,
                masked_image_path,
                query_path,
                query_text,
            }),
            Err(reason) => bad.push(MalformedEntry { id, reason }),
        }
    }

    let mut objects = Vec::new();
    for (id, dir) in object_dirs {
        let rgb_image_path = dir.join(&opts.object_image_name);
        match check_image(&rgb_image_path) {
            Ok(()) => objects.push(ObjectEntry {
                object_id: id,
                rgb_image_path,
            }),
            Err(reason) => bad.push(MalformedEntry { id, reason }),
        }
    }

    if !bad.is_empty() {
        if !opts.lenient {
            return Err(DatasetError::MalformedEntries(bad));
        }
        for entry in &bad {
            tracing::warn!(id = %entry.id, reason = %entry.reason, "skipping malformed entry");
        }
    }
    if scenes.is_empty() || objects.is_empty() {
        return Err(DatasetError::EmptyDataset {
            scenes: scenes.len(),
            objects: objects.len(),
        });
    }
    Ok(Manifest {
        scenes,
        objects,
        skipped: bad,
    })
}

pub fn load_rgb(path: &Path) -> Result<RgbImage, DatasetError> {
    let img = image::ImageReader::open(path)
        .map_err(|source| DatasetError::Io {
            path: path.to_owned(),
            source,
        })?
        .with_guessed_format()
        .map_err(|source| DatasetError::Io {
            path: path.to_owned(),
            source,
        })?
        .decode()
        .map_err(|e| DatasetError::DecodeError {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
    Ok(img.to_rgb8())
}

/// Decodes the scene raster (alpha dropped) and reads its prompt.
pub fn load_scene(entry: &SceneEntry) -> Result<(RgbImage, String), DatasetError> {
    let raster = load_rgb(&entry.masked_image_path)?;
    if raster.width() == 0 || raster.height() == 0 {
        return Err(DatasetError::DecodeError {
            path: entry.masked_image_path.clone(),
            message: "image has no pixels".into(),
        });
    }
    let text = read_prompt(&entry.query_path)?;
    Ok((raster, text))
}
