//! Dataset manifests: JSON descriptions of images, image-level labels,
//! optional ground-truth masks, and split membership.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Image path, relative to the manifest file.
    pub image: String,
    /// Image-level class id.
    pub label: usize,
    /// Optional ground-truth mask path, relative to the manifest file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    pub split: Split,
    /// Grouping key (e.g. patient); a group may appear in only one split.
    pub group: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::data(format!("manifest serialization failed: {e}")))?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    /// Parses and validates a manifest; referenced files must exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::data(format!("bad manifest {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        manifest.validate(base)?;
        Ok(manifest)
    }

    /// Structural checks: labels in range, files present, unique image
    /// paths, and no group straddling two splits.
    pub fn validate(&self, base: &Path) -> Result<()> {
        let mut group_split: HashMap<&str, Split> = HashMap::new();
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            if e.label >= self.classes.len() {
                return Err(Error::data(format!(
                    "entry {} has label {} but only {} classes are declared",
                    e.image,
                    e.label,
                    self.classes.len()
                )));
            }
            if !seen.insert(e.image.as_str()) {
                return Err(Error::data(format!(
                    "image {} appears in more than one entry",
                    e.image
                )));
            }
            if !base.join(&e.image).is_file() {
                return Err(Error::data(format!(
                    "image file {} is missing",
                    base.join(&e.image).display()
                )));
            }
            if let Some(mask) = &e.mask {
                if !base.join(mask).is_file() {
                    return Err(Error::data(format!(
                        "mask file {} is missing",
                        base.join(mask).display()
                    )));
                }
            }
            match group_split.get(e.group.as_str()) {
                None => {
                    group_split.insert(&e.group, e.split);
                }
                Some(&s) if s == e.split => {}
                Some(&s) => {
                    return Err(Error::data(format!(
                        "group {} leaks across splits {s} and {}",
                        e.group, e.split
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(dir: &Path, name: &str) {
        fs::write(dir.join(name), b"x").unwrap();
    }

    fn entry(image: &str, split: Split, group: &str) -> ManifestEntry {
        ManifestEntry {
            image: image.to_string(),
            label: 0,
            mask: None,
            split,
            group: group.to_string(),
        }
    }

    #[test]
    fn group_leakage_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "a.png");
        touch(dir.path(), "b.png");
        let manifest = DatasetManifest {
            classes: vec!["normal".into()],
            seed: 0,
            entries: vec![
                entry("a.png", Split::Train, "g1"),
                entry("b.png", Split::Test, "g1"),
            ],
        };
        let err = manifest.validate(dir.path()).unwrap_err();
        assert!(err.to_string().contains("leaks"));
    }

    #[test]
    fn missing_files_and_bad_labels_are_data_errors() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = DatasetManifest {
            classes: vec!["normal".into()],
            seed: 0,
            entries: vec![entry("missing.png", Split::Train, "g")],
        };
        assert!(matches!(manifest.validate(dir.path()), Err(Error::Data(_))));

        touch(dir.path(), "a.png");
        let manifest = DatasetManifest {
            classes: vec!["normal".into()],
            seed: 0,
            entries: vec![ManifestEntry {
                label: 3,
                ..entry("a.png", Split::Train, "g")
            }],
        };
        assert!(matches!(manifest.validate(dir.path()), Err(Error::Data(_))));
    }

    #[test]
    fn unknown_split_tags_fail_to_parse() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        fs::write(
            &path,
            r#"{"classes":["a"],"seed":0,"entries":[{"image":"x.png","label":0,"split":"holdout","group":"g"}]}"#,
        )
        .unwrap();
        assert!(matches!(DatasetManifest::load(&path), Err(Error::Data(_))));
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "a.png");
        let manifest = DatasetManifest {
            classes: vec!["normal".into(), "lesion".into()],
            seed: 42,
            entries: vec![entry("a.png", Split::Val, "g0")],
        };
        let path = dir.path().join("manifest.json");
        manifest.save(&path).unwrap();
        let loaded = DatasetManifest::load(&path).unwrap();
        assert_eq!(loaded.seed, 42);
        assert_eq!(loaded.entries.len(), 1);
    }
}
