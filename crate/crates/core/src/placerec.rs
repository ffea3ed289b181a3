//! Cross-condition place recognition: SSIM score matrices, global-threshold
//! precision/recall curves, F1 and top-k match reports.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::datasets::image::to_rgb;
use crate::datasets::{CorrespondenceSet, FrameId, ImageTensor};
use crate::error::{Error, IoContext, Result};
use crate::features::{read_plane, write_plane, FusionMap, SsimStats};

/// Cap on the number of thresholds the automatic sweep evaluates.
pub const MAX_AUTO_THRESHOLDS: usize = 2000;

/// Query × database similarity grid with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    /// Row-major `n_q × n_db`.
    pub scores: Vec<f32>,
    pub query_ids: Vec<FrameId>,
    pub db_ids: Vec<FrameId>,
    pub gt: CorrespondenceSet,
    mask: Vec<bool>,
}

impl ScoreMatrix {
    pub fn new(
        scores: Vec<f32>,
        query_ids: Vec<FrameId>,
        db_ids: Vec<FrameId>,
        gt: CorrespondenceSet,
    ) -> Result<Self> {
        if scores.len() != query_ids.len() * db_ids.len() {
            return Err(Error::Shape(format!(
                "{} scores for {} queries × {} database frames",
                scores.len(),
                query_ids.len(),
                db_ids.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(
                "score matrix has non-finite values".into(),
            ));
        }
        let mask = gt.mask(&query_ids, &db_ids);
        Ok(Self {
            scores,
            query_ids,
            db_ids,
            gt,
            mask,
        })
    }

    pub fn n_q(&self) -> usize {
        self.query_ids.len()
    }

    pub fn n_db(&self) -> usize {
        self.db_ids.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.scores[i * self.n_db() + j]
    }

    pub fn is_match(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.n_db() + j]
    }

    /// Number of true-match cells.
    pub fn num_true(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// `scores[i][j] = ssim(q_maps[i], db_maps[j])`.
pub fn score_matrix(
    q_maps: &[FusionMap],
    db_maps: &[FusionMap],
    query_ids: &[FrameId],
    db_ids: &[FrameId],
    gt: &CorrespondenceSet,
) -> Result<ScoreMatrix> {
    if q_maps.len() != query_ids.len() || db_maps.len() != db_ids.len() {
        return Err(Error::Shape(
            "map lists and id lists differ in length".into(),
        ));
    }
    let shape = q_maps.first().or(db_maps.first()).map(|m| m.shape());
    if let Some(bad) = q_maps
        .iter()
        .chain(db_maps)
        .find(|m| Some(m.shape()) != shape)
    {
        return Err(Error::Shape(format!(
            "score matrix over {:?} and {:?} maps",
            shape.unwrap_or_default(),
            bad.shape()
        )));
    }
    let q_stats: Vec<SsimStats> = q_maps.iter().map(SsimStats::new).collect();
    let db_stats: Vec<SsimStats> = db_maps.iter().map(SsimStats::new).collect();
    let mut scores = Vec::with_capacity(q_maps.len() * db_maps.len());
    for q in &q_stats {
        for d in &db_stats {
            scores.push(q.ssim(d)? as f32);
        }
    }
    ScoreMatrix::new(scores, query_ids.to_vec(), db_ids.to_vec(), gt.clone())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Thresholds {
    /// Every distinct score (quantile-sampled above [`MAX_AUTO_THRESHOLDS`]).
    #[default]
    Auto,
    List(Vec<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

impl PrPoint {
    pub fn f1(&self) -> f64 {
        let s = self.precision + self.recall;
        if s > 0.0 {
            2.0 * self.precision * self.recall / s
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// Strictly increasing thresholds.
    pub points: Vec<PrPoint>,
    pub best_f1: f64,
    /// Threshold of the first point reaching `best_f1`.
    pub best_threshold: f64,
}

fn auto_thresholds(sorted: &[f64]) -> Vec<f64> {
    let mut unique = sorted.to_vec();
    unique.dedup();
    if unique.len() <= MAX_AUTO_THRESHOLDS {
        return unique;
    }
    let last = unique.len() - 1;
    let mut picked: Vec<f64> = (0..MAX_AUTO_THRESHOLDS)
        .map(|i| unique[i * last / (MAX_AUTO_THRESHOLDS - 1)])
        .collect();
    picked.dedup();
    picked
}

/// Sweeps a single global threshold: a cell is predicted a match when its
/// score is at least the threshold. Precision is 1 when nothing is predicted.
pub fn pr_curve(m: &ScoreMatrix, thresholds: &Thresholds) -> Result<PrCurve> {
    let total_true = m.num_true();
    if total_true == 0 {
        return Err(Error::InvalidArgument(
            "ground truth marks no cell of the score matrix".into(),
        ));
    }
    let mut cells: Vec<(f64, bool)> = m
        .scores
        .iter()
        .zip(&m.mask)
        .map(|(&s, &t)| (s as f64, t))
        .collect();
    cells.sort_by(|a, b| a.0.total_cmp(&b.0));
    let sorted: Vec<f64> = cells.iter().map(|c| c.0).collect();
    // true cells strictly below each sorted position
    let mut true_below = Vec::with_capacity(cells.len() + 1);
    true_below.push(0usize);
    for c in &cells {
        true_below.push(true_below.last().unwrap() + c.1 as usize);
    }
    let ts = match thresholds {
        Thresholds::Auto => auto_thresholds(&sorted),
        Thresholds::List(list) => {
            let mut l: Vec<f64> = list.iter().copied().filter(|t| !t.is_nan()).collect();
            l.sort_by(f64::total_cmp);
            l.dedup();
            l
        }
    };
    if ts.is_empty() {
        return Err(Error::InvalidArgument("empty threshold list".into()));
    }
    let n = cells.len();
    let points: Vec<PrPoint> = ts
        .into_iter()
        .map(|t| {
            let idx = sorted.partition_point(|&s| s < t);
            let predicted = n - idx;
            let tp = total_true - true_below[idx];
            PrPoint {
                threshold: t,
                precision: if predicted == 0 {
                    1.0
                } else {
                    tp as f64 / predicted as f64
                },
                recall: tp as f64 / total_true as f64,
            }
        })
        .collect();
    let best = points
        .iter()
        .fold(None::<&PrPoint>, |b, p| match b {
            Some(b) if b.f1() >= p.f1() => Some(b),
            _ => Some(p),
        })
        .expect("non-empty");
    Ok(PrCurve {
        best_f1: best.f1(),
        best_threshold: best.threshold,
        points,
    })
}

/// Maximum harmonic mean of precision and recall over the curve.
pub fn f1_best(curve: &PrCurve) -> f64 {
    curve.points.iter().map(PrPoint::f1).fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedMatch {
    pub db_index: usize,
    pub db_frame: FrameId,
    pub score: f32,
    pub correct: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryMatches {
    pub query_index: usize,
    pub query_frame: FrameId,
    /// Best first; equal scores keep database order.
    pub ranked: Vec<RankedMatch>,
}

/// Top-`k` database frames per query by descending score.
pub fn match_report(m: &ScoreMatrix, k: usize) -> Result<Vec<QueryMatches>> {
    if k > m.n_db() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds {} database frames",
            m.n_db()
        )));
    }
    Ok((0..m.n_q())
        .map(|i| {
            let mut order: Vec<usize> = (0..m.n_db()).collect();
            order.sort_by(|&a, &b| m.get(i, b).total_cmp(&m.get(i, a)));
            QueryMatches {
                query_index: i,
                query_frame: m.query_ids[i],
                ranked: order
                    .into_iter()
                    .take(k)
                    .map(|j| RankedMatch {
                        db_index: j,
                        db_frame: m.db_ids[j],
                        score: m.get(i, j),
                        correct: m.is_match(i, j),
                    })
                    .collect(),
            }
        })
        .collect())
}

/// One row per query: the query image next to its top-1 match, framed green
/// when the match is correct and red otherwise.
pub fn render_match_grid(
    report: &[QueryMatches],
    query_images: &[&ImageTensor],
    db_images: &[&ImageTensor],
    path: &Path,
) -> Result<()> {
    const BORDER: u32 = 3;
    const GAP: u32 = 4;
    let first = query_images
        .first()
        .ok_or_else(|| Error::InvalidArgument("no query images".into()))?;
    let (h, w) = (first.height as u32, first.width as u32);
    let cell_w = w + 2 * BORDER;
    let cell_h = h + 2 * BORDER;
    let rows = report.len() as u32;
    let mut canvas = RgbImage::from_pixel(
        2 * cell_w + GAP,
        rows.max(1) * (cell_h + GAP),
        Rgb([255, 255, 255]),
    );
    for (r, q) in report.iter().enumerate() {
        let Some(top) = q.ranked.first() else {
            continue;
        };
        let y0 = r as u32 * (cell_h + GAP);
        let colour = if top.correct {
            Rgb([0, 170, 0])
        } else {
            Rgb([210, 0, 0])
        };
        for (col, img) in [
            (0u32, query_images[q.query_index]),
            (1, db_images[top.db_index]),
        ] {
            let x0 = col * (cell_w + GAP);
            if col == 1 {
                for y in 0..cell_h {
                    for x in 0..cell_w {
                        canvas.put_pixel(x0 + x, y0 + y, colour);
                    }
                }
            }
            let rgb = to_rgb(img);
            for (x, y, p) in rgb.enumerate_pixels() {
                if x < w && y < h {
                    canvas.put_pixel(x0 + BORDER + x, y0 + BORDER + y, *p);
                }
            }
        }
    }
    canvas.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids.csv");
    PathBuf::from(s)
}

/// Binary plane of scores plus `<path>.ids.csv` listing `axis,index,frame`.
pub fn write_score_matrix(m: &ScoreMatrix, path: &Path) -> Result<()> {
    write_plane(path, m.n_q(), m.n_db(), &m.scores)?;
    let mut ids = String::from("axis,index,frame\n");
    for (i, f) in m.query_ids.iter().enumerate() {
        ids.push_str(&format!("query,{i},{f}\n"));
    }
    for (i, f) in m.db_ids.iter().enumerate() {
        ids.push_str(&format!("db,{i},{f}\n"));
    }
    let side = sidecar(path);
    fs::write(&side, ids).at(&side)
}

/// Loads a matrix written by [`write_score_matrix`] (or produced externally
/// in the same format) and attaches `gt`.
pub fn read_score_matrix(path: &Path, gt: CorrespondenceSet) -> Result<ScoreMatrix> {
    let (n_q, n_db, scores) = read_plane(path)?;
    let side = sidecar(path);
    let text = fs::read_to_string(&side).at(&side)?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let (mut q, mut db) = (Vec::new(), Vec::new());
    for (line, row) in reader.deserialize::<(String, usize, FrameId)>().enumerate() {
        let (axis, _, frame) = row.map_err(|e| Error::Parse {
            path: side.clone(),
            line: line + 2,
            msg: e.to_string(),
        })?;
        match axis.as_str() {
            "query" => q.push(frame),
            "db" => db.push(frame),
            other => {
                return Err(Error::Parse {
                    path: side.clone(),
                    line: line + 2,
                    msg: format!("unknown axis {other:?}"),
                })
            }
        }
    }
    if q.len() != n_q || db.len() != n_db {
        return Err(Error::Corrupted {
            path: side,
            msg: format!(
                "ids list {}×{} for a {n_q}×{n_db} matrix",
                q.len(),
                db.len()
            ),
        });
    }
    ScoreMatrix::new(scores, q, db, gt)
}

pub fn write_pr_csv(curve: &PrCurve, path: &Path) -> Result<()> {
    let mut out = String::from("threshold,precision,recall\n");
    for p in &curve.points {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.precision, p.recall));
    }
    fs::write(path, out).at(path)
}
