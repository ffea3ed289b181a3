//! Condition-labelled image collections, pose tracks and correspondences.

pub mod image;
mod pose;
mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};

pub use self::image::ImageTensor;
pub use pose::{
    align_by_pose, load_correspondences, load_pose_file, parse_pose_csv, write_correspondences,
    write_pose_file, CorrespondenceSet, FrameId, PoseEntry, PoseTrack,
};
pub use synth::{make_synthetic_seasons, ConditionSpec, SynthConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const POSES_FILE: &str = "poses.csv";
pub const CORRESPONDENCES_FILE: &str = "correspondences.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    /// Subdomain `A_i`, 1-based.
    A(usize),
    B,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionLabel {
    pub name: String,
    pub domain: Domain,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub image: ImageTensor,
    pub condition: String,
    pub frame: FrameId,
}

#[derive(Clone, Debug, Default)]
pub struct MultiDomainDataset {
    pub root: PathBuf,
    pub images: Vec<LabeledImage>,
    /// Condition name → files ingested, relative to `root`.
    pub manifest: BTreeMap<String, Vec<String>>,
}

impl MultiDomainDataset {
    pub fn conditions(&self) -> Vec<String> {
        self.manifest.keys().cloned().collect()
    }

    /// Images of one condition ordered by frame id.
    pub fn condition_images(&self, condition: &str) -> Vec<&LabeledImage> {
        let mut v: Vec<_> = self
            .images
            .iter()
            .filter(|i| i.condition == condition)
            .collect();
        v.sort_by_key(|i| i.frame);
        v
    }

    pub fn image(&self, condition: &str, frame: FrameId) -> Option<&LabeledImage> {
        self.images
            .iter()
            .find(|i| i.condition == condition && i.frame == frame)
    }

    /// SHA-256 over condition names, frame ids and pixel values.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        let mut sorted: Vec<_> = self.images.iter().collect();
        sorted.sort_by(|a, b| (&a.condition, a.frame).cmp(&(&b.condition, b.frame)));
        for img in sorted {
            h.update(img.condition.as_bytes());
            h.update(img.frame.to_le_bytes());
            for v in &img.image.data {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn write_manifest(&self) -> Result<()> {
        let path = self.root.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| Error::Other(e.to_string()))?;
        fs::write(&path, json).at(&path)
    }

    /// Writes every image as `<root>/<condition>/<frame>.png` and the manifest.
    pub fn save(&mut self, root: &Path) -> Result<()> {
        self.root = root.to_path_buf();
        self.manifest.clear();
        let mut sorted: Vec<_> = self.images.iter().collect();
        sorted.sort_by(|a, b| (&a.condition, a.frame).cmp(&(&b.condition, b.frame)));
        for img in sorted {
            let dir = root.join(&img.condition);
            fs::create_dir_all(&dir).at(&dir)?;
            let rel = format!("{}/{:05}.png", img.condition, img.frame);
            image::write_png(&img.image, &root.join(&rel))?;
            self.manifest
                .entry(img.condition.clone())
                .or_default()
                .push(rel);
        }
        self.write_manifest()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Files `<condition>_<frame>.<ext>` in one directory.
    Flat,
    /// One subdirectory per condition.
    #[default]
    PerCondition,
}

fn is_image_file(p: &Path) -> bool {
    matches!(
        p.extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

fn trailing_number(stem: &str) -> Option<FrameId> {
    let digits: String = stem
        .chars()
        .rev()
        .take_while(|c| c.is_ascii_digit())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    digits.parse().ok()
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .at(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .at(dir)?;
    v.sort();
    Ok(v)
}

/// Loads every decodable image under `root`, resized to
/// `target_size × target_size` and mapped to [-1, 1]. Frame ids come from the
/// trailing digits of file names, falling back to the sorted position when
/// names carry no unique number.
pub fn load_image_dir(
    root: &Path,
    layout: Layout,
    target_size: usize,
) -> Result<MultiDomainDataset> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root does not exist"),
        ));
    }
    // condition -> files
    let mut groups: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    match layout {
        Layout::PerCondition => {
            for dir in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
                let name = dir.file_name().unwrap().to_string_lossy().into_owned();
                let files = sorted_entries(&dir)?
                    .into_iter()
                    .filter(|p| p.is_file() && is_image_file(p))
                    .collect();
                groups.insert(name, files);
            }
        }
        Layout::Flat => {
            for file in sorted_entries(root)?
                .into_iter()
                .filter(|p| p.is_file() && is_image_file(p))
            {
                let stem = file.file_stem().unwrap().to_string_lossy().into_owned();
                let cond = stem
                    .rsplit_once('_')
                    .map_or("default".to_string(), |(c, _)| c.to_string());
                groups.entry(cond).or_default().push(file);
            }
        }
    }
    let mut ds = MultiDomainDataset {
        root: root.to_path_buf(),
        ..Default::default()
    };
    for (cond, files) in groups {
        let mut loaded = Vec::new();
        for f in &files {
            match image::read_image(f, target_size) {
                Ok(img) => loaded.push((f.clone(), img)),
                Err(e) => warn!("skipping {}: {e}", f.display()),
            }
        }
        if loaded.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "condition `{cond}` has no decodable images"
            )));
        }
        let numbers: Vec<Option<FrameId>> = loaded
            .iter()
            .map(|(f, _)| trailing_number(&f.file_stem().unwrap().to_string_lossy()))
            .collect();
        let unique: BTreeSet<_> = numbers.iter().flatten().collect();
        let use_numbers = numbers.iter().all(Option::is_some) && unique.len() == numbers.len();
        if !use_numbers {
            warn!("condition `{cond}`: file names lack unique frame numbers; using sorted order");
        }
        let mut rel_files = Vec::new();
        for (i, ((path, image), num)) in loaded.into_iter().zip(numbers).enumerate() {
            let frame = if use_numbers {
                num.unwrap()
            } else {
                i as FrameId
            };
            rel_files.push(
                path.strip_prefix(root)
                    .unwrap_or(&path)
                    .to_string_lossy()
                    .replace('\\', "/"),
            );
            ds.images.push(LabeledImage {
                image,
                condition: cond.clone(),
                frame,
            });
        }
        ds.manifest.insert(cond, rel_files);
    }
    if ds.images.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no images found under {}",
            root.display()
        )));
    }
    Ok(ds)
}

/// Images of one (sub)domain.
#[derive(Clone, Debug)]
pub struct DomainStream<'a> {
    pub label: ConditionLabel,
    pub images: Vec<&'a LabeledImage>,
}

#[derive(Clone, Debug)]
pub struct DomainSplit<'a> {
    /// `A_1 … A_M`, in the order the conditions were given.
    pub domain_a: Vec<DomainStream<'a>>,
    pub domain_b: DomainStream<'a>,
}

impl<'a> DomainSplit<'a> {
    pub fn num_subdomains(&self) -> usize {
        self.domain_a.len()
    }

    /// All domain-A images pooled across subdomains.
    pub fn pooled_a(&self) -> Vec<&'a ImageTensor> {
        self.domain_a
            .iter()
            .flat_map(|s| s.images.iter().map(|i| &i.image))
            .collect()
    }

    pub fn images_b(&self) -> Vec<&'a ImageTensor> {
        self.domain_b.images.iter().map(|i| &i.image).collect()
    }
}

/// Assigns the listed conditions to subdomains `A_1..A_M` and `b_condition`
/// to domain B.
pub fn split_domains<'a>(
    ds: &'a MultiDomainDataset,
    a_conditions: &[String],
    b_condition: &str,
) -> Result<DomainSplit<'a>> {
    if a_conditions.is_empty() {
        return Err(Error::InvalidArgument(
            "domain A needs at least one condition".into(),
        ));
    }
    let mut seen = BTreeSet::new();
    for c in a_conditions {
        if c == b_condition || !seen.insert(c) {
            return Err(Error::InvalidArgument(format!(
                "condition `{c}` assigned twice"
            )));
        }
    }
    let stream = |name: &str, domain: Domain| -> Result<DomainStream<'a>> {
        let images = ds.condition_images(name);
        if images.is_empty() {
            return Err(Error::UnknownCondition(name.to_string()));
        }
        Ok(DomainStream {
            label: ConditionLabel {
                name: name.to_string(),
                domain,
            },
            images,
        })
    };
    let domain_a = a_conditions
        .iter()
        .enumerate()
        .map(|(i, c)| stream(c, Domain::A(i + 1)))
        .collect::<Result<Vec<_>>>()?;
    Ok(DomainSplit {
        domain_a,
        domain_b: stream(b_condition, Domain::B)?,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetMode {
    /// The first `count` frames.
    #[default]
    Contiguous,
    /// `count` frames evenly spread over the sequence.
    Strided,
}

/// Picks `count` of `frames` (all of them when `count` is 0 or too large).
pub fn select_subset(frames: &[FrameId], count: usize, mode: SubsetMode) -> Vec<FrameId> {
    if count == 0 || count >= frames.len() {
        return frames.to_vec();
    }
    match mode {
        SubsetMode::Contiguous => frames[..count].to_vec(),
        SubsetMode::Strided => (0..count)
            .map(|i| frames[i * frames.len() / count])
            .collect(),
    }
}

/// Writes a synthetic dataset as per-condition PNG directories plus the pose
/// and correspondence CSVs and the manifest.
pub fn save_dataset(
    ds: &mut MultiDomainDataset,
    track: &PoseTrack,
    corr: &CorrespondenceSet,
    root: &Path,
) -> Result<()> {
    fs::create_dir_all(root).at(root)?;
    ds.save(root)?;
    write_pose_file(track, &root.join(POSES_FILE))?;
    write_correspondences(corr, &root.join(CORRESPONDENCES_FILE))
}
