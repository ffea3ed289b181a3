//! Pose tracks and frame correspondences, with their CSV formats.

use std::fs;
use std::io::Write;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::geometry::{Pose, Quat};

pub type FrameId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseEntry {
    pub frame: FrameId,
    pub pose: Pose,
}

/// Poses ordered by strictly increasing frame id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PoseTrack {
    pub entries: Vec<PoseEntry>,
}

impl PoseTrack {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, frame: FrameId) -> Option<&Pose> {
        self.entries
            .binary_search_by_key(&frame, |e| e.frame)
            .ok()
            .map(|i| &self.entries[i].pose)
    }
}

#[derive(Deserialize)]
struct PoseRow {
    frame: FrameId,
    x: f64,
    y: f64,
    z: f64,
    qw: f64,
    qx: f64,
    qy: f64,
    qz: f64,
}

/// Parses `frame,x,y,z,qw,qx,qy,qz`. Quaternions are renormalized (with a
/// warning when they were off by more than 1e-3) and rows sorted by frame.
pub fn load_pose_file(path: &Path) -> Result<PoseTrack> {
    let text = fs::read_to_string(path).at(path)?;
    parse_pose_csv(&text, path)
}

pub fn parse_pose_csv(text: &str, path: &Path) -> Result<PoseTrack> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut entries = Vec::new();
    for (i, row) in reader.deserialize::<PoseRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: e.to_string(),
        })?;
        let raw = Quat::new(row.qw, row.qx, row.qy, row.qz);
        let q = raw.normalized().ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: "zero quaternion".into(),
        })?;
        if (raw.norm() - 1.0).abs() > 1e-3 {
            warn!(
                "{}:{line}: quaternion norm {:.4} renormalized",
                path.display(),
                raw.norm()
            );
        }
        entries.push(PoseEntry {
            frame: row.frame,
            pose: Pose::new([row.x, row.y, row.z], q),
        });
    }
    entries.sort_by_key(|e| e.frame);
    if let Some(w) = entries.windows(2).find(|w| w[0].frame == w[1].frame) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("duplicate frame {}", w[0].frame),
        });
    }
    Ok(PoseTrack { entries })
}

pub fn write_pose_file(track: &PoseTrack, path: &Path) -> Result<()> {
    let mut out = String::from("frame,x,y,z,qw,qx,qy,qz\n");
    for e in &track.entries {
        let p = e.pose.position;
        let q = e.pose.orientation;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            e.frame, p[0], p[1], p[2], q.w, q.x, q.y, q.z
        ));
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .at(path)
}

/// Ground-truth query/database frame pairs. A cell `(q, d)` of a score
/// matrix is a true match when some pair `(q, d')` exists with `d` within
/// `tolerance` positions of `d'` in the database ordering.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorrespondenceSet {
    pub pairs: Vec<(FrameId, FrameId)>,
    pub tolerance: usize,
}

impl CorrespondenceSet {
    pub fn identity(frames: impl IntoIterator<Item = FrameId>) -> Self {
        Self {
            pairs: frames.into_iter().map(|f| (f, f)).collect(),
            tolerance: 0,
        }
    }

    pub fn with_tolerance(mut self, tolerance: usize) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Boolean `n_q × n_db` mask of true-match cells, row-major.
    pub fn mask(&self, query_ids: &[FrameId], db_ids: &[FrameId]) -> Vec<bool> {
        let n_db = db_ids.len();
        let mut mask = vec![false; query_ids.len() * n_db];
        for &(q, d) in &self.pairs {
            let (Some(i), Some(j)) = (
                query_ids.iter().position(|&f| f == q),
                db_ids.iter().position(|&f| f == d),
            ) else {
                continue;
            };
            let lo = j.saturating_sub(self.tolerance);
            let hi = (j + self.tolerance).min(n_db - 1);
            for jj in lo..=hi {
                mask[i * n_db + jj] = true;
            }
        }
        mask
    }
}

pub fn write_correspondences(set: &CorrespondenceSet, path: &Path) -> Result<()> {
    let mut out = String::from("query_frame,db_frame\n");
    for (q, d) in &set.pairs {
        out.push_str(&format!("{q},{d}\n"));
    }
    fs::write(path, out).at(path)
}

pub fn load_correspondences(path: &Path, tolerance: usize) -> Result<CorrespondenceSet> {
    let text = fs::read_to_string(path).at(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut pairs = Vec::new();
    for (i, row) in reader.deserialize::<(FrameId, FrameId)>().enumerate() {
        pairs.push(row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            msg: e.to_string(),
        })?);
    }
    Ok(CorrespondenceSet { pairs, tolerance })
}

/// Pairs each frame of `track_a` with a frame of `track_b` by nearest
/// position: all pairs within `max_dist` are visited by ascending distance
/// and accepted when neither frame is taken yet.
pub fn align_by_pose(
    track_a: &PoseTrack,
    track_b: &PoseTrack,
    max_dist: f64,
) -> Result<CorrespondenceSet> {
    if track_a.is_empty() || track_b.is_empty() {
        return Err(Error::InvalidArgument(
            "alignment needs two non-empty tracks".into(),
        ));
    }
    let mut candidates = Vec::new();
    for (i, a) in track_a.entries.iter().enumerate() {
        for (j, b) in track_b.entries.iter().enumerate() {
            let d = a.pose.distance(&b.pose);
            if d <= max_dist {
                candidates.push((d, i, j));
            }
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_a = vec![false; track_a.len()];
    let mut used_b = vec![false; track_b.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            pairs.push((track_a.entries[i].frame, track_b.entries[j].frame));
        }
    }
    pairs.sort();
    if pairs.is_empty() {
        warn!("pose alignment found no pairs within {max_dist} m");
    }
    Ok(CorrespondenceSet {
        pairs,
        tolerance: 0,
    })
}
