//! Batch inference flow over directories of per-image files matched by stem:
//! post-process segmentation predictions, take classes from the
//! classification predictions, evaluate against ground truth.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crystalmask_core::metrics::{EvalOptions, EvalReport, ImageEvaluation};
use crystalmask_core::morphology::{postprocess_set, PostprocessConfig};
use crystalmask_core::refine::{refine_classification, regions_mask, DEFAULT_AGGLOMERATION_THRESH};
use crystalmask_core::{BinaryMask, ClassLabel, InstanceSet};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{instance_set_to_json, load_instance_set, load_png, load_regions, LoadOptions};
use crate::report::{report_to_json, report_to_text};

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub seg_dir: PathBuf,
    pub cls_dir: PathBuf,
    pub image_dir: PathBuf,
    pub gt_dir: PathBuf,
    /// Per-image `<stem>.json` region files outlining agglomerates. Images
    /// without one use their agglomerated ground-truth instances instead.
    pub agg_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Worker threads; 0 picks the number of cores.
    pub jobs: usize,
    pub eval: EvalOptions,
    pub postprocess: PostprocessConfig,
    pub refine_thresh: f64,
    pub load: LoadOptions,
}

impl PipelineConfig {
    pub fn new(
        seg_dir: impl Into<PathBuf>,
        cls_dir: impl Into<PathBuf>,
        image_dir: impl Into<PathBuf>,
        gt_dir: impl Into<PathBuf>,
        out_dir: impl Into<PathBuf>,
    ) -> Self {
        Self {
            seg_dir: seg_dir.into(),
            cls_dir: cls_dir.into(),
            image_dir: image_dir.into(),
            gt_dir: gt_dir.into(),
            agg_dir: None,
            out_dir: out_dir.into(),
            jobs: 0,
            eval: EvalOptions::default(),
            postprocess: PostprocessConfig::default(),
            refine_thresh: DEFAULT_AGGLOMERATION_THRESH,
            load: LoadOptions::default(),
        }
    }
}

/// Stems of the files in `dir` carrying extension `ext`, sorted.
pub fn list_stems(dir: &Path, ext: &str) -> Result<BTreeSet<String>> {
    let mut stems = BTreeSet::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !path.is_file() || path.extension().and_then(|e| e.to_str()) != Some(ext) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            stems.insert(stem.to_owned());
        }
    }
    Ok(stems)
}

fn matched_stems(cfg: &PipelineConfig) -> Result<Vec<String>> {
    let dirs = [
        (&cfg.seg_dir, "json"),
        (&cfg.cls_dir, "json"),
        (&cfg.image_dir, "png"),
        (&cfg.gt_dir, "json"),
    ];
    let listed = dirs
        .iter()
        .map(|(d, ext)| list_stems(d, ext))
        .collect::<Result<Vec<_>>>()?;
    let all: BTreeSet<&String> = listed.iter().flatten().collect();
    for stem in &all {
        if let Some(k) = listed.iter().position(|s| !s.contains(*stem)) {
            return Err(Error::MissingPair {
                stem: (*stem).clone(),
                missing_from: dirs[k].0.clone(),
            });
        }
    }
    Ok(all.into_iter().cloned().collect())
}

/// Union of the agglomerated ground-truth instances.
pub fn agglomeration_from_gt(gt: &InstanceSet) -> BinaryMask {
    gt.union_mask(|i| i.class == ClassLabel::Agglomerated)
}

pub struct ImageResult {
    pub stem: String,
    pub refined: InstanceSet,
    pub evaluation: ImageEvaluation,
}

pub fn process_image(cfg: &PipelineConfig, stem: &str) -> Result<ImageResult> {
    let file = |dir: &Path, ext: &str| dir.join(format!("{stem}.{ext}"));
    let seg_path = file(&cfg.seg_dir, "json");
    let seg = load_instance_set(&seg_path, cfg.load)?;
    let cls = load_instance_set(&file(&cfg.cls_dir, "json"), cfg.load)?;
    let image_path = file(&cfg.image_dir, "png");
    let image = load_png(&image_path)?;
    let gt_path = file(&cfg.gt_dir, "json");
    let gt = load_instance_set(&gt_path, cfg.load)?;
    let data = |path: &Path| {
        let path = path.to_path_buf();
        move |source| Error::Data { path, source }
    };

    let post = postprocess_set(&seg, &image, &cfg.postprocess).map_err(data(&image_path))?;
    let refined = refine_classification(&post, &cls, cfg.refine_thresh).map_err(data(&seg_path))?;

    let agg = match cfg.agg_dir.as_ref().map(|d| file(d, "json")).filter(|p| p.is_file()) {
        Some(path) => regions_mask(&load_regions(&path, cfg.load)?, gt.width(), gt.height()),
        None => agglomeration_from_gt(&gt),
    };
    let agg = (!agg.is_empty()).then_some(agg);
    let evaluation = ImageEvaluation::collect(&refined, &gt, agg.as_ref(), &cfg.eval).map_err(data(&gt_path))?;
    log::debug!("{stem}: {} predictions, {} annotations", refined.len(), gt.len());
    Ok(ImageResult {
        stem: stem.to_owned(),
        refined,
        evaluation,
    })
}

/// Runs the whole flow and writes `report.json`, `report.txt` and one
/// `<stem>.pred.json` per image into the output directory. On failure no
/// output files are left behind.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<EvalReport> {
    cfg.eval.validate()?;
    cfg.postprocess.validate()?;
    let stems = matched_stems(cfg)?;
    log::info!("processing {} images", stems.len());

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .expect("thread pool construction");
    let results: Vec<ImageResult> = pool.install(|| {
        stems
            .par_iter()
            .map(|stem| process_image(cfg, stem))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut outputs: Vec<(PathBuf, String)> = results
        .iter()
        .map(|r| (cfg.out_dir.join(format!("{}.pred.json", r.stem)), instance_set_to_json(&r.refined)))
        .collect();
    let report = EvalReport::from_images(
        results.into_iter().map(|r| (r.stem, r.evaluation)).collect(),
        &cfg.eval,
    )?;
    outputs.push((cfg.out_dir.join("report.json"), report_to_json(&report)));
    outputs.push((cfg.out_dir.join("report.txt"), report_to_text(&report)));
    write_all_or_nothing(&outputs)?;
    Ok(report)
}

/// Writes every file, creating parent directories, or on the first failure
/// removes those already written.
pub fn write_all_or_nothing<T: AsRef<[u8]>>(files: &[(PathBuf, T)]) -> Result<()> {
    for (k, (path, bytes)) in files.iter().enumerate() {
        let written = match path.parent() {
            Some(dir) => fs::create_dir_all(dir),
            None => Ok(()),
        }
        .and_then(|()| fs::write(path, bytes));
        if let Err(e) = written {
            for (done, _) in &files[..k] {
                let _ = fs::remove_file(done);
            }
            return Err(Error::io(path, e));
        }
    }
    Ok(())
}
