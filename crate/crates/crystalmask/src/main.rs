use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use crystalmask::io::{
    encode_png, instance_set_to_json, load_instance_set, load_png, load_regions, regions_to_json, LoadOptions,
};
use crystalmask::pipeline::{agglomeration_from_gt, run_pipeline, write_all_or_nothing, PipelineConfig};
use crystalmask::report::{report_to_json, report_to_text};
use crystalmask::{Error, Result};
use crystalmask_core::metrics::{EvalOptions, EvalReport, ImageEvaluation};
use crystalmask_core::morphology::{box_blur_unlabeled, postprocess_set, PostprocessConfig};
use crystalmask_core::refine::{generate_pseudo_labels, refine_classification, regions_mask};
use crystalmask_core::synth::{degrade, generate_scene, DegradeParams, SceneParams};
use crystalmask_core::{Confidence, InstanceSet};

/// Post-processing, pseudo-labeling and evaluation of crystal instance masks.
#[derive(Parser)]
#[command(name = "crystalmask", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Worker threads for batch commands (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Overlap ratio a prediction needs to join a confidence group.
    #[arg(long, global = true, default_value_t = 0.5)]
    overlap_thresh: f64,
    /// IoU needed for a true positive.
    #[arg(long, global = true, default_value_t = 0.5)]
    iou_thresh: f64,
    /// Size histogram bins.
    #[arg(long, global = true, default_value_t = 10)]
    bins: usize,
    /// Image percentile from which pixels count as bright.
    #[arg(long, global = true, default_value_t = 0.85)]
    brightness_percentile: f64,
    /// Fixed bright intensity cut, overriding the percentile.
    #[arg(long, global = true)]
    brightness_cut: Option<u8>,
    /// Reject unknown fields in JSON inputs.
    #[arg(long, global = true, default_value_t = true, action = clap::ArgAction::Set)]
    strict_json: bool,
}

impl Global {
    fn load(&self) -> LoadOptions {
        LoadOptions {
            strict: self.strict_json,
        }
    }

    fn eval(&self) -> EvalOptions {
        EvalOptions {
            bins: self.bins,
            iou_thresh: self.iou_thresh,
            overlap_thresh: self.overlap_thresh,
            max_area: None,
        }
    }

    fn postprocess(&self) -> PostprocessConfig {
        PostprocessConfig {
            brightness_percentile: self.brightness_percentile,
            brightness_cut: self.brightness_cut,
            ..PostprocessConfig::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the five-step mask post-processing on every instance.
    Postprocess {
        #[arg(long)]
        instances: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Label instances agglomerated or single from circled regions.
    Pseudolabel {
        #[arg(long)]
        instances: PathBuf,
        #[arg(long)]
        regions: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Take classes for segmentation output from a classification model.
    Refine {
        #[arg(long)]
        seg: PathBuf,
        #[arg(long)]
        cls: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        thresh: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Evaluate predictions against annotations and print the metric table.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Region file outlining agglomerates; without it the agglomerated
        /// annotations are used.
        #[arg(long)]
        agg: Option<PathBuf>,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Generate synthetic scenes with annotations.
    Synth(SynthArgs),
    /// Blur image regions not covered by any labeled instance.
    Blur {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        instances: PathBuf,
        #[arg(long, default_value_t = 33)]
        window: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Post-process, refine and evaluate a directory of images.
    Pipeline {
        #[arg(long)]
        seg_dir: PathBuf,
        #[arg(long)]
        cls_dir: PathBuf,
        #[arg(long)]
        image_dir: PathBuf,
        #[arg(long)]
        gt_dir: PathBuf,
        #[arg(long)]
        agg_dir: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        thresh: f64,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    n_scenes: usize,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 256)]
    height: usize,
    #[arg(long, default_value_t = 20)]
    n_crystals: usize,
    #[arg(long, default_value_t = 80)]
    min_area: usize,
    #[arg(long, default_value_t = 400)]
    max_area: usize,
    #[arg(long, default_value_t = 0.3)]
    agglomeration_rate: f64,
    #[arg(long, default_value_t = 0.2)]
    low_conf_rate: f64,
    /// Also write degraded segmentation and classification predictions
    /// under `seg/` and `cls/`.
    #[arg(long)]
    predictions: bool,
    #[arg(long, default_value_t = 1)]
    erode_px: usize,
    #[arg(long, default_value_t = 0.5)]
    hole_rate: f64,
    #[arg(long, default_value_t = 0.5)]
    bite_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    drop_rate: f64,
    #[arg(long, default_value_t = 0.1)]
    score_noise: f64,
}

fn evaluate_files(
    g: &Global,
    pred: &Path,
    gt_path: &Path,
    agg: Option<&Path>,
) -> Result<EvalReport> {
    let preds = load_instance_set(pred, g.load())?;
    let gt = load_instance_set(gt_path, g.load())?;
    let agg_mask = match agg {
        Some(path) => regions_mask(&load_regions(path, g.load())?, gt.width(), gt.height()),
        None => agglomeration_from_gt(&gt),
    };
    let agg_mask = (!agg_mask.is_empty()).then_some(agg_mask);
    let data = |source| Error::Data {
        path: pred.to_path_buf(),
        source,
    };
    let eval = ImageEvaluation::collect(&preds, &gt, agg_mask.as_ref(), &g.eval()).map_err(data)?;
    let name = pred
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image")
        .to_owned();
    Ok(EvalReport::from_images(vec![(name, eval)], &g.eval())?)
}

fn synth(a: &SynthArgs) -> Result<()> {
    let mut files: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    for k in 0..a.n_scenes {
        let seed = a.seed.wrapping_add(k as u64);
        let params = SceneParams {
            width: a.width,
            height: a.height,
            n_crystals: a.n_crystals,
            area_range: (a.min_area, a.max_area),
            agglomeration_rate: a.agglomeration_rate,
            low_conf_rate: a.low_conf_rate,
            seed,
            ..SceneParams::default()
        };
        let scene = generate_scene(&params)?;
        let stem = format!("scene_{k:04}");
        let at = |sub: &str, ext: &str| a.out_dir.join(sub).join(format!("{stem}.{ext}"));
        files.push((at("images", "png"), encode_png(&scene.image)));
        files.push((at("gt", "json"), instance_set_to_json(&scene.ground_truth).into_bytes()));
        files.push((at("regions", "json"), regions_to_json(&scene.regions).into_bytes()));
        if a.predictions {
            let degraded = degrade(
                &scene.ground_truth,
                &DegradeParams {
                    erode_px: a.erode_px,
                    hole_rate: a.hole_rate,
                    bite_rate: a.bite_rate,
                    drop_rate: a.drop_rate,
                    score_noise: a.score_noise,
                    seed,
                    ..DegradeParams::default()
                },
            )?;
            let cls = scene
                .ground_truth
                .map_instances(|i| i.clone().with_confidence(Confidence::None))?;
            files.push((at("seg", "json"), instance_set_to_json(&degraded).into_bytes()));
            files.push((at("cls", "json"), instance_set_to_json(&cls).into_bytes()));
        }
        log::info!("{stem}: {} crystals", scene.ground_truth.len());
    }
    write_all_or_nothing(&files)
}

fn write_binary(path: &Path, bytes: &[u8]) -> Result<()> {
    write_all_or_nothing(&[(path.to_path_buf(), bytes)])
}
fn write_text(path: &Path, text: &str) -> Result<()> {
    write_binary(path, text.as_bytes())
}

fn save_set(set: &InstanceSet, path: &Path) -> Result<()> {
    write_text(path, &instance_set_to_json(set))
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    g.eval().validate()?;
    g.postprocess().validate()?;
    match &cli.command {
        Command::Postprocess {
            instances,
            image,
            output,
        } => {
            let set = load_instance_set(instances, g.load())?;
            let img = load_png(image)?;
            save_set(&postprocess_set(&set, &img, &g.postprocess())?, output)
        }
        Command::Pseudolabel {
            instances,
            regions,
            output,
        } => {
            let set = load_instance_set(instances, g.load())?;
            let regions = load_regions(regions, g.load())?;
            save_set(&generate_pseudo_labels(&set, &regions)?, output)
        }
        Command::Refine {
            seg,
            cls,
            thresh,
            output,
        } => {
            let seg = load_instance_set(seg, g.load())?;
            let cls = load_instance_set(cls, g.load())?;
            save_set(&refine_classification(&seg, &cls, *thresh)?, output)
        }
        Command::Evaluate { pred, gt, agg, json } => {
            let report = evaluate_files(g, pred, gt, agg.as_deref())?;
            if let Some(path) = json {
                write_text(path, &report_to_json(&report))?;
            }
            print!("{}", report_to_text(&report));
            Ok(())
        }
        Command::Synth(args) => synth(args),
        Command::Blur {
            image,
            instances,
            window,
            output,
        } => {
            let img = load_png(image)?;
            let set = load_instance_set(instances, g.load())?;
            write_binary(output, &encode_png(&box_blur_unlabeled(&img, &set, *window)?))
        }
        Command::Pipeline {
            seg_dir,
            cls_dir,
            image_dir,
            gt_dir,
            agg_dir,
            out_dir,
            thresh,
        } => {
            let mut cfg = PipelineConfig::new(seg_dir, cls_dir, image_dir, gt_dir, out_dir);
            cfg.agg_dir = agg_dir.clone();
            cfg.jobs = g.jobs;
            cfg.eval = g.eval();
            cfg.postprocess = g.postprocess();
            cfg.refine_thresh = *thresh;
            cfg.load = g.load();
            let report = run_pipeline(&cfg)?;
            print!("{}", report_to_text(&report));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CRYSTALMASK_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Core(crystalmask_core::Error::InvalidParameter(_)) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
