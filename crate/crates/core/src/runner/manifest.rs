//! JSONL dataset manifests.
//!
//! The first line is a header `{"num_classes": c}`. Every following line is
//! one entry with an `image_id`, a `labels` bitstring and either an `image`
//! path (relative paths resolve against the manifest directory) or an inline
//! single-channel `synthetic` image.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::labels::LabelBits;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InlineImage {
    pub n1: usize,
    pub n2: usize,
    pub pixels: Vec<f32>,
}

impl InlineImage {
    pub fn from_image(img: &Image) -> Self {
        let pixels = (0..img.n1)
            .flat_map(|y| (0..img.n2).map(move |x| (y, x)))
            .map(|(y, x)| img.raw(y, x, 0))
            .collect();
        InlineImage {
            n1: img.n1,
            n2: img.n2,
            pixels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<InlineImage>,
    pub labels: LabelBits,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub num_classes: usize,
    pub entries: Vec<ManifestEntry>,
    /// Directory that relative image paths resolve against.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Dataset(format!("opening {}: {e}", path.display())))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(BufReader::new(file), root)
    }

    pub fn parse(reader: impl BufRead, root: PathBuf) -> Result<Self> {
        let mut lines = reader
            .lines()
            .enumerate()
            .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()));
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Dataset("manifest is empty".into()))?;
        let header: ManifestHeader = serde_json::from_str(&header?)
            .map_err(|e| Error::Dataset(format!("line 1: invalid header: {e}")))?;
        if header.num_classes == 0 {
            return Err(Error::Dataset("header declares zero classes".into()));
        }
        let mut seen = HashSet::new();
        let mut entries = Vec::new();
        for (i, line) in lines {
            let lineno = i + 1;
            let entry: ManifestEntry = serde_json::from_str(&line?)
                .map_err(|e| Error::Dataset(format!("line {lineno}: {e}")))?;
            if entry.labels.len() != header.num_classes {
                return Err(Error::Dataset(format!(
                    "line {lineno}: '{}' has {} labels, header declares {}",
                    entry.image_id,
                    entry.labels.len(),
                    header.num_classes
                )));
            }
            if entry.image.is_some() == entry.synthetic.is_some() {
                return Err(Error::Dataset(format!(
                    "line {lineno}: '{}' needs exactly one of `image` and `synthetic`",
                    entry.image_id
                )));
            }
            if !seen.insert(entry.image_id.clone()) {
                return Err(Error::Dataset(format!(
                    "line {lineno}: duplicate image_id '{}'",
                    entry.image_id
                )));
            }
            entries.push(entry);
        }
        Ok(DatasetManifest {
            num_classes: header.num_classes,
            entries,
            root,
        })
    }

    pub fn write(&self, mut w: impl Write) -> Result<()> {
        serde_json::to_writer(
            &mut w,
            &ManifestHeader {
                num_classes: self.num_classes,
            },
        )?;
        writeln!(w)?;
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            writeln!(w)?;
        }
        Ok(())
    }

    /// Decode the image for one entry.
    pub fn load_image(&self, entry: &ManifestEntry) -> Result<Image> {
        match (&entry.synthetic, &entry.image) {
            (Some(s), _) => Image::new(s.n1, s.n2, 1, s.pixels.clone()),
            (None, Some(p)) => load_image_file(&self.root.join(p)),
            (None, None) => Err(Error::Dataset(format!("'{}' has no image", entry.image_id))),
        }
    }
}

#[cfg(feature = "onnx")]
fn load_image_file(path: &Path) -> Result<Image> {
    crate::backend::onnx::load_image(path)
}

#[cfg(not(feature = "onnx"))]
fn load_image_file(path: &Path) -> Result<Image> {
    Err(Error::Unsupported(format!(
        "decoding {} needs the `onnx` feature",
        path.display()
    )))
}
