//! Pipeline subcommands. Each reads the shared config, writes its reports
//! under the output directory and refuses to overwrite earlier results
//! unless `--force` is given.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::{LayerChoice, PipelineConfig};
use crate::cyclegan::{
    load_checkpoint, train_cyclegan, Checkpoint, LayerName, TrainOptions, CHECKPOINT_FILE,
};
use crate::datasets::{
    align_by_pose, load_correspondences, load_image_dir, load_pose_file, make_synthetic_seasons,
    save_dataset, select_subset, split_domains, CorrespondenceSet, FrameId, LabeledImage,
    MultiDomainDataset, PoseTrack, SubsetMode, CORRESPONDENCES_FILE, POSES_FILE,
};
use crate::error::{Error, IoContext, Result};
use crate::features::{
    layer_f1_analysis, write_layer_report, FeatureCache, FeatureExtractor, FrameImage, FusionMap,
    LayerAnalysis,
};
use crate::geometry::Pose;
use crate::placerec::{
    match_report, pr_curve, read_score_matrix, render_match_grid, score_matrix, write_pr_csv,
    write_score_matrix, ScoreMatrix, Thresholds,
};
use crate::plot::{bar_plot, line_plot};
use crate::posereg::{
    eval_pose, export_trajectory, load_pose_model, save_pose_model, train_pose, train_pose_rgb,
    PoseModel, PoseTrainConfig,
};

pub const LAYER_ANALYSIS_FILE: &str = "layer_analysis.json";
pub const FUSION_MODEL_FILE: &str = "fusion_model.bin";
pub const RGB_MODEL_FILE: &str = "rgb_model.bin";
pub const POOLED_RGB_MODEL_FILE: &str = "rgb_pooled_model.bin";

#[derive(Debug, Parser)]
#[command(
    name = "invloc",
    version,
    about = "Appearance-invariant long-term visual localization"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic multi-season dataset.
    Synth(CommonArgs),
    /// Train the translation networks that provide the features.
    TrainFeatures(CommonArgs),
    /// Per-layer F1 robustness analysis and layer selection.
    AnalyzeLayers(CommonArgs),
    /// Place-recognition reports for every condition pair.
    Placerec(CommonArgs),
    /// Train the pose regressor (and the RGB baselines).
    TrainPose(CommonArgs),
    /// Evaluate trained pose regressors on the evaluation conditions.
    EvalPose(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(short, long)]
    pub config: PathBuf,
    /// Replace existing outputs.
    #[arg(long)]
    pub force: bool,
    /// Continue training from the saved checkpoint (train-features only).
    #[arg(long)]
    pub resume: bool,
}

pub fn run(cli: Cli) -> Result<()> {
    let (Command::Synth(a)
    | Command::TrainFeatures(a)
    | Command::AnalyzeLayers(a)
    | Command::Placerec(a)
    | Command::TrainPose(a)
    | Command::EvalPose(a)) = &cli.command;
    let cfg = PipelineConfig::load(&a.config)?;
    if a.resume && !matches!(cli.command, Command::TrainFeatures(_)) {
        warn!("--resume only applies to train-features; ignored");
    }
    match cli.command {
        Command::Synth(_) => {
            let hash = cmd_synth(&cfg, a.force)?;
            println!("dataset hash {hash}");
        }
        Command::TrainFeatures(_) => {
            let ckpt = cmd_train_features(&cfg, a.force, a.resume)?;
            println!(
                "trained to iteration {}; feature hash {}",
                ckpt.iteration,
                ckpt.feature_hash()
            );
        }
        Command::AnalyzeLayers(_) => {
            let analysis = cmd_analyze_layers(&cfg, a.force)?;
            for s in &analysis.per_layer {
                println!("{:<7} F1 {:.4}", s.layer.to_string(), s.f1);
            }
            println!("selected layer {}", analysis.selected_layer);
        }
        Command::Placerec(_) => {
            for r in cmd_placerec(&cfg, a.force)? {
                println!("{} vs {}: F1 {:.4}", r.query, r.database, r.f1);
            }
        }
        Command::TrainPose(_) => {
            let s = cmd_train_pose(&cfg, a.force)?;
            println!(
                "pose models trained on {:?} with layer {}",
                s.train_conditions, s.layer
            );
        }
        Command::EvalPose(_) => {
            let r = cmd_eval_pose(&cfg, a.force)?;
            for m in &r.methods {
                println!(
                    "{:<12} {:.3} m  {:.3} deg",
                    m.method, m.mean_translation, m.mean_rotation_deg
                );
            }
        }
    }
    Ok(())
}

/// Creates `dir`, clearing it first when `force` is set; a non-empty `dir`
/// without `force` is an error.
fn prepare_output(dir: &Path, force: bool) -> Result<()> {
    let non_empty = dir.is_dir() && fs::read_dir(dir).at(dir)?.next().is_some();
    if non_empty {
        if !force {
            return Err(Error::InvalidArgument(format!(
                "{} already exists and is not empty; pass --force to replace it",
                dir.display()
            )));
        }
        fs::remove_dir_all(dir).at(dir)?;
    }
    fs::create_dir_all(dir).at(dir)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Other(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).at(path)
}

pub fn cmd_synth(cfg: &PipelineConfig, force: bool) -> Result<String> {
    let root = cfg.data_root();
    prepare_output(&root, force)?;
    let mut synth = cfg.dataset.synthetic.clone();
    synth.size = cfg.dataset.size;
    let (mut ds, track, corr) = make_synthetic_seasons(&synth)?;
    save_dataset(&mut ds, &track, &corr, &root)?;
    let hash = load_dataset(cfg)?.content_hash();
    info!(
        "wrote {} images over {} conditions to {}",
        ds.images.len(),
        ds.conditions().len(),
        root.display()
    );
    Ok(hash)
}

pub fn load_dataset(cfg: &PipelineConfig) -> Result<MultiDomainDataset> {
    load_image_dir(&cfg.data_root(), cfg.dataset.layout, cfg.dataset.size)
}

pub fn cmd_train_features(cfg: &PipelineConfig, force: bool, resume: bool) -> Result<Checkpoint> {
    // the GAN may train at a lower resolution than features are extracted at
    let ds = load_image_dir(
        &cfg.data_root(),
        cfg.dataset.layout,
        cfg.gan.train.image_size,
    )?;
    let split = split_domains(&ds, &cfg.gan.domain_a, &cfg.gan.domain_b)?;
    let dir = cfg.gan_dir();
    let opts = if resume {
        TrainOptions {
            resume: Some(load_checkpoint(&dir.join(CHECKPOINT_FILE))?),
        }
    } else {
        prepare_output(&dir, force)?;
        TrainOptions::default()
    };
    let ckpt = train_cyclegan(
        &cfg.gan.train,
        &split.pooled_a(),
        &split.images_b(),
        &dir,
        opts,
    )?;
    let series: Vec<(f64, f64)> = ckpt
        .loss_history
        .iter()
        .map(|r| (r.iter as f64, r.total))
        .collect();
    if series.len() > 1 {
        line_plot(&[series], &dir.join("loss.png"), false)?;
    }
    Ok(ckpt)
}

fn load_feature_checkpoint(cfg: &PipelineConfig) -> Result<Checkpoint> {
    load_checkpoint(&cfg.gan_dir().join(CHECKPOINT_FILE))
}

fn extractor<'a>(cfg: &PipelineConfig, ckpt: &'a Checkpoint) -> FeatureExtractor<'a> {
    let mut ex = FeatureExtractor::new(ckpt);
    ex.fusion = cfg.features.fusion;
    if cfg.features.cache {
        ex = ex.with_cache(FeatureCache::new(cfg.cache_dir()));
    }
    ex
}

/// Images of `condition` restricted to a frame subset, in frame order.
fn condition_subset<'a>(
    ds: &'a MultiDomainDataset,
    condition: &str,
    count: usize,
    mode: SubsetMode,
) -> Result<Vec<&'a LabeledImage>> {
    let all = ds.condition_images(condition);
    if all.is_empty() {
        return Err(Error::UnknownCondition(condition.to_string()));
    }
    let frames: Vec<FrameId> = all.iter().map(|i| i.frame).collect();
    let keep = select_subset(&frames, count, mode);
    Ok(all
        .into_iter()
        .filter(|i| keep.contains(&i.frame))
        .collect())
}

/// Pose track for `condition`: `<root>/<condition>/poses.csv` when present,
/// otherwise the shared `<root>/poses.csv`.
pub fn pose_track(cfg: &PipelineConfig, condition: &str) -> Result<PoseTrack> {
    let root = cfg.data_root();
    let own = root.join(condition).join(POSES_FILE);
    let path = if own.is_file() {
        own
    } else {
        root.join(POSES_FILE)
    };
    load_pose_file(&path)
}

fn correspondences(
    cfg: &PipelineConfig,
    query: &str,
    database: &str,
    q_frames: &[FrameId],
    db_frames: &[FrameId],
) -> Result<CorrespondenceSet> {
    let tol = cfg.placerec.tolerance;
    if let Some(d) = cfg.placerec.align_max_dist {
        return Ok(
            align_by_pose(&pose_track(cfg, query)?, &pose_track(cfg, database)?, d)?
                .with_tolerance(tol),
        );
    }
    let file = cfg.data_root().join(CORRESPONDENCES_FILE);
    if file.is_file() {
        return load_correspondences(&file, tol);
    }
    warn!("no {CORRESPONDENCES_FILE}; pairing equal frame ids");
    let common = q_frames.iter().copied().filter(|f| db_frames.contains(f));
    Ok(CorrespondenceSet::identity(common).with_tolerance(tol))
}

pub fn cmd_analyze_layers(cfg: &PipelineConfig, force: bool) -> Result<LayerAnalysis> {
    let ckpt = load_feature_checkpoint(cfg)?;
    let ds = load_dataset(cfg)?;
    let dir = cfg.layers_dir();
    prepare_output(&dir, force)?;
    let f = &cfg.features;
    let layers = if f.layers.is_empty() {
        ckpt.g_ab.spec.layer_names()
    } else {
        f.layers.clone()
    };
    let q = condition_subset(&ds, &f.query, f.subset, f.subset_mode)?;
    let db = condition_subset(&ds, &f.database, f.subset, f.subset_mode)?;
    let q_items: Vec<FrameImage> = q.iter().map(|&i| i.into()).collect();
    let db_items: Vec<FrameImage> = db.iter().map(|&i| i.into()).collect();
    let q_frames: Vec<FrameId> = q.iter().map(|i| i.frame).collect();
    let db_frames: Vec<FrameId> = db.iter().map(|i| i.frame).collect();
    let gt = correspondences(cfg, &f.query, &f.database, &q_frames, &db_frames)?;
    let analysis = layer_f1_analysis(&extractor(cfg, &ckpt), &q_items, &db_items, &gt, &layers)?;
    write_layer_report(&analysis, &dir.join("layer_f1.csv"))?;
    write_json(&analysis, &dir.join(LAYER_ANALYSIS_FILE))?;
    let f1s: Vec<f64> = analysis.per_layer.iter().map(|s| s.f1).collect();
    let sel = analysis
        .per_layer
        .iter()
        .position(|s| s.layer == analysis.selected_layer);
    bar_plot(&f1s, sel, &dir.join("layer_f1.png"))?;
    Ok(analysis)
}

/// The configured feature layer, or the one `analyze-layers` selected.
pub fn feature_layer(cfg: &PipelineConfig) -> Result<LayerName> {
    match cfg.features.layer {
        LayerChoice::Layer(l) => Ok(l),
        LayerChoice::Auto => {
            let path = cfg.layers_dir().join(LAYER_ANALYSIS_FILE);
            let text = fs::read_to_string(&path).map_err(|_| {
                Error::InvalidArgument(format!(
                    "features.layer is \"auto\" but {} is missing; run analyze-layers first",
                    path.display()
                ))
            })?;
            let a: LayerAnalysis = serde_json::from_str(&text).map_err(|e| Error::Corrupted {
                path: path.clone(),
                msg: e.to_string(),
            })?;
            Ok(a.selected_layer)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub query: String,
    pub database: String,
    pub f1: f64,
    pub threshold: f64,
}

fn extract_maps(
    ex: &FeatureExtractor<'_>,
    images: &[&LabeledImage],
    layer: LayerName,
) -> Result<Vec<FusionMap>> {
    images
        .iter()
        .map(|&i| ex.extract(&i.into(), layer))
        .collect()
}

pub fn cmd_placerec(cfg: &PipelineConfig, force: bool) -> Result<Vec<PairReport>> {
    let ds = load_dataset(cfg)?;
    let p = &cfg.placerec;
    let conditions = if p.conditions.is_empty() {
        ds.conditions()
    } else {
        p.conditions.clone()
    };
    if conditions.len() < 2 {
        return Err(Error::InvalidArgument(
            "place recognition needs at least two conditions".into(),
        ));
    }
    let ckpt = match &p.import_dir {
        Some(_) => None,
        None => Some(load_feature_checkpoint(cfg)?),
    };
    let layer = match &ckpt {
        Some(_) => Some(feature_layer(cfg)?),
        None => None,
    };
    let ex = ckpt.as_ref().map(|c| extractor(cfg, c));
    let dir = cfg.placerec_dir();
    prepare_output(&dir, force)?;
    let thresholds = p
        .thresholds
        .clone()
        .map_or(Thresholds::Auto, Thresholds::List);

    let mut maps: BTreeMap<String, Vec<FusionMap>> = BTreeMap::new();
    let mut reports = Vec::new();
    for (i, query) in conditions.iter().enumerate() {
        for database in &conditions[i + 1..] {
            let q = condition_subset(&ds, query, p.subset, p.subset_mode)?;
            let db = condition_subset(&ds, database, p.subset, p.subset_mode)?;
            let q_ids: Vec<FrameId> = q.iter().map(|i| i.frame).collect();
            let db_ids: Vec<FrameId> = db.iter().map(|i| i.frame).collect();
            let gt = correspondences(cfg, query, database, &q_ids, &db_ids)?;
            let m: ScoreMatrix = match (&p.import_dir, &ex, layer) {
                (Some(import), _, _) => {
                    let m =
                        read_score_matrix(&import.join(format!("{query}__{database}.bin")), gt)?;
                    if m.query_ids != q_ids || m.db_ids != db_ids {
                        return Err(Error::InvalidArgument(format!(
                            "imported {query}/{database} matrix does not cover the configured frames"
                        )));
                    }
                    m
                }
                (None, Some(ex), Some(layer)) => {
                    for (c, imgs) in [(query, &q), (database, &db)] {
                        if !maps.contains_key(c) {
                            maps.insert(c.clone(), extract_maps(ex, imgs, layer)?);
                        }
                    }
                    score_matrix(&maps[query], &maps[database], &q_ids, &db_ids, &gt)?
                }
                _ => unreachable!("extractor exists unless importing"),
            };
            let pair_dir = dir.join(format!("{query}__{database}"));
            fs::create_dir_all(&pair_dir).at(&pair_dir)?;
            write_score_matrix(&m, &pair_dir.join("scores.bin"))?;
            let curve = pr_curve(&m, &thresholds)?;
            write_pr_csv(&curve, &pair_dir.join("pr.csv"))?;
            let pts: Vec<(f64, f64)> = curve
                .points
                .iter()
                .map(|p| (p.recall, p.precision))
                .collect();
            line_plot(&[pts], &pair_dir.join("pr.png"), false)?;
            let top1 = match_report(&m, 1)?;
            let mut csv = String::from("query_frame,db_frame,score,correct\n");
            for r in &top1 {
                let t = &r.ranked[0];
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    r.query_frame, t.db_frame, t.score, t.correct
                ));
            }
            let path = pair_dir.join("top1.csv");
            fs::write(&path, csv).at(&path)?;
            let shown = select_subset(
                &(0..top1.len() as FrameId).collect::<Vec<_>>(),
                p.grid_queries,
                SubsetMode::Strided,
            );
            let grid: Vec<_> = shown.iter().map(|&k| top1[k as usize].clone()).collect();
            let q_imgs: Vec<_> = q.iter().map(|i| &i.image).collect();
            let db_imgs: Vec<_> = db.iter().map(|i| &i.image).collect();
            render_match_grid(&grid, &q_imgs, &db_imgs, &pair_dir.join("top1.png"))?;
            info!("{query} vs {database}: F1 {:.4}", curve.best_f1);
            reports.push(PairReport {
                query: query.clone(),
                database: database.clone(),
                f1: curve.best_f1,
                threshold: curve.best_threshold,
            });
        }
    }
    let mut csv = String::from("query,database,f1,threshold\n");
    for r in &reports {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.query, r.database, r.f1, r.threshold
        ));
    }
    let path = dir.join("f1_summary.csv");
    fs::write(&path, csv).at(&path)?;
    Ok(reports)
}

/// Frames of `conditions` that have a pose, with the pose.
fn posed_images<'a>(
    cfg: &PipelineConfig,
    ds: &'a MultiDomainDataset,
    conditions: &[String],
) -> Result<Vec<(&'a LabeledImage, Pose)>> {
    let mut out = Vec::new();
    for c in conditions {
        let track = pose_track(cfg, c)?;
        let imgs = ds.condition_images(c);
        if imgs.is_empty() {
            return Err(Error::UnknownCondition(c.clone()));
        }
        for img in imgs {
            match track.get(img.frame) {
                Some(p) => out.push((img, *p)),
                None => warn!("{c}/{}: no pose; skipped", img.frame),
            }
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no posed images in {conditions:?}"
        )));
    }
    Ok(out)
}

fn pooled_conditions(cfg: &PipelineConfig, ds: &MultiDomainDataset) -> Vec<String> {
    if !cfg.pose.pooled_conditions.is_empty() {
        return cfg.pose.pooled_conditions.clone();
    }
    ds.conditions()
        .into_iter()
        .filter(|c| !cfg.pose.eval_conditions.contains(c))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseTrainSummary {
    pub layer: LayerName,
    pub checkpoint_hash: String,
    pub train_conditions: Vec<String>,
    pub config: PoseTrainConfig,
    /// Method → final training loss.
    pub final_loss: BTreeMap<String, Option<f64>>,
}

pub fn cmd_train_pose(cfg: &PipelineConfig, force: bool) -> Result<PoseTrainSummary> {
    let ckpt = load_feature_checkpoint(cfg)?;
    let hash_before = ckpt.full_hash();
    let layer = feature_layer(cfg)?;
    let ds = load_dataset(cfg)?;
    let dir = cfg.pose_dir();
    prepare_output(&dir, force)?;
    let ex = extractor(cfg, &ckpt);
    let train = posed_images(cfg, &ds, &cfg.pose.train_conditions)?;
    let features = train
        .iter()
        .map(|&(img, pose)| Ok((ex.extract(&img.into(), layer)?, pose)))
        .collect::<Result<Vec<_>>>()?;
    let tcfg = &cfg.pose.train;
    let mut final_loss = BTreeMap::new();
    let fusion = train_pose(tcfg, &features, Some(&dir.join("fusion_loss.csv")))?;
    save_pose_model(&fusion, &dir.join(FUSION_MODEL_FILE))?;
    final_loss.insert("fusion".to_string(), fusion.final_loss);
    if cfg.pose.baselines {
        let rgb: Vec<_> = train.iter().map(|&(i, p)| (&i.image, p)).collect();
        let m = train_pose_rgb(tcfg, &rgb, Some(&dir.join("rgb_loss.csv")))?;
        save_pose_model(&m, &dir.join(RGB_MODEL_FILE))?;
        final_loss.insert("rgb".to_string(), m.final_loss);
        let pooled = posed_images(cfg, &ds, &pooled_conditions(cfg, &ds))?;
        let rgb: Vec<_> = pooled.iter().map(|&(i, p)| (&i.image, p)).collect();
        let m = train_pose_rgb(tcfg, &rgb, Some(&dir.join("rgb_pooled_loss.csv")))?;
        save_pose_model(&m, &dir.join(POOLED_RGB_MODEL_FILE))?;
        final_loss.insert("rgb_pooled".to_string(), m.final_loss);
    }
    let hash_after = load_feature_checkpoint(cfg)?.full_hash();
    if hash_after != hash_before {
        return Err(Error::Other(
            "feature checkpoint changed during pose training".into(),
        ));
    }
    let summary = PoseTrainSummary {
        layer,
        checkpoint_hash: ckpt.feature_hash(),
        train_conditions: cfg.pose.train_conditions.clone(),
        config: tcfg.clone(),
        final_loss,
    };
    write_json(&summary, &dir.join("train_summary.json"))?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub condition: String,
    pub frame: FrameId,
    pub translation: f64,
    pub rotation_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub mean_translation: f64,
    pub mean_rotation_deg: f64,
    pub per_frame: Vec<FrameReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseEvalReport {
    pub config: PoseTrainConfig,
    pub train_conditions: Vec<String>,
    pub eval_conditions: Vec<String>,
    pub methods: Vec<MethodReport>,
}

pub fn cmd_eval_pose(cfg: &PipelineConfig, force: bool) -> Result<PoseEvalReport> {
    let ckpt = load_feature_checkpoint(cfg)?;
    let ds = load_dataset(cfg)?;
    let model_dir = cfg.pose_dir();
    let dir = cfg.pose_eval_dir();
    let mut models: Vec<(&str, PoseModel)> = vec![(
        "fusion",
        load_pose_model(&model_dir.join(FUSION_MODEL_FILE))?,
    )];
    for (name, file) in [
        ("rgb", RGB_MODEL_FILE),
        ("rgb_pooled", POOLED_RGB_MODEL_FILE),
    ] {
        let path = model_dir.join(file);
        if path.is_file() {
            models.push((name, load_pose_model(&path)?));
        }
    }
    prepare_output(&dir, force)?;
    let ex = extractor(cfg, &ckpt);
    let eval = posed_images(cfg, &ds, &cfg.pose.eval_conditions)?;
    let gts: Vec<Pose> = eval.iter().map(|(_, p)| *p).collect();
    let mut methods = Vec::new();
    for (name, model) in &models {
        let preds = eval
            .iter()
            .map(|&(img, _)| match &model.input {
                crate::posereg::InputKind::Fusion {
                    layer: Some(layer),
                    checkpoint_hash,
                } => {
                    if checkpoint_hash
                        .as_deref()
                        .is_some_and(|h| h != ex.checkpoint_hash)
                    {
                        return Err(Error::InvalidArgument(format!(
                            "{name} model was trained on a different feature checkpoint"
                        )));
                    }
                    model.regress(&model.prepare(&ex.extract(&img.into(), *layer)?)?)
                }
                _ => crate::posereg::predict_pose(model, &img.image, Some(&ex)),
            })
            .collect::<Result<Vec<_>>>()?;
        let e = eval_pose(&preds, &gts)?;
        for c in &cfg.pose.eval_conditions {
            let idx: Vec<usize> = (0..eval.len())
                .filter(|&k| eval[k].0.condition == *c)
                .collect();
            let frames: Vec<FrameId> = idx.iter().map(|&k| eval[k].0.frame).collect();
            let p: Vec<Pose> = idx.iter().map(|&k| preds[k]).collect();
            let g: Vec<Pose> = idx.iter().map(|&k| gts[k]).collect();
            export_trajectory(
                &frames,
                &p,
                &g,
                &dir.join(format!("trajectory_{name}_{c}.csv")),
                Some(&dir.join(format!("trajectory_{name}_{c}.png"))),
            )?;
        }
        methods.push(MethodReport {
            method: name.to_string(),
            mean_translation: e.mean_translation,
            mean_rotation_deg: e.mean_rotation_deg,
            per_frame: eval
                .iter()
                .zip(&e.per_frame)
                .map(|((img, _), fe)| FrameReport {
                    condition: img.condition.clone(),
                    frame: img.frame,
                    translation: fe.translation,
                    rotation_deg: fe.rotation_deg,
                })
                .collect(),
        });
    }
    let mut csv = String::from("method,mean_translation,mean_rotation_deg\n");
    for m in &methods {
        csv.push_str(&format!(
            "{},{},{}\n",
            m.method, m.mean_translation, m.mean_rotation_deg
        ));
    }
    let path = dir.join("summary.csv");
    fs::write(&path, csv).at(&path)?;
    let report = PoseEvalReport {
        config: models[0].1.config.clone(),
        train_conditions: cfg.pose.train_conditions.clone(),
        eval_conditions: cfg.pose.eval_conditions.clone(),
        methods,
    };
    write_json(&report, &dir.join("report.json"))?;
    Ok(report)
}
