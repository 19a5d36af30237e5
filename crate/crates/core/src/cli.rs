//! The `anat9` command line: every pipeline stage as a subcommand reading
//! and writing files, configured by one JSON file plus a few flags.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{
    random_crop_z, random_erase_bottom_pair, rigid_augment, AugmentConfig, RigidDraw,
};
use crate::boxset::BoxSet;
use crate::error::{Error, Result};
use crate::geometry::{
    crop_resample, grid_aligned_crop, merge_back, normalize_target_clamped, parameterize_all,
    Interpolation, NormalizedTarget, Submask,
};
use crate::matching::{
    build_index_cost, cost_matrix, match_predictions, CostCoeffs, GroundTruth, Prediction,
};
use crate::metrics::{
    evaluate_segmentation, identify, write_rows_csv, DetectionReport, IdThresholds, SegReport,
};
use crate::rng::{self, Op};
use crate::synth::{gen_scene, perturb_poses, Layout, PoseNoise, SceneConfig};
use crate::toydetect::{
    ablate_lambda_m, steerable_infer, train_toy, write_log_csv, QueryBank, TrainConfig,
};
use crate::volume::{load_labels, save_volume, LabelVolume};

/// Crop settings for the `crop` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CropConfig {
    pub expansion_mm: f64,
    /// Resampling grid; `None` keeps the input voxel grid.
    pub out_dims: Option<[usize; 3]>,
}

impl Default for CropConfig {
    fn default() -> Self {
        Self {
            expansion_mm: 2.0,
            out_dims: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub lambda_m: Vec<f64>,
    /// Training seeds `seed..seed + seeds`.
    pub seeds: u64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            lambda_m: vec![0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0],
            seeds: 10,
        }
    }
}

/// Everything a run can be configured with. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub coeffs: CostCoeffs,
    pub thresholds: IdThresholds,
    pub augment: AugmentConfig,
    pub scene: SceneConfig,
    pub noise: PoseNoise,
    pub crop: CropConfig,
    pub train: TrainConfig,
    pub ablation: AblationConfig,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Makes the top-level seed the source of every seeded block.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.scene.seed = seed;
        self.augment.seed = seed;
        self.train.seed = seed;
        self.train.dataset.scene.seed = seed;
        self
    }
}

#[derive(Debug, Parser)]
#[command(name = "anat9", version, about = "9-DoF anatomy parsing toolkit")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random draw; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene: label volume and ground-truth boxes.
    Synth(SynthArgs),
    /// Fit a 9-DoF box to every instance of a label volume.
    Parameterize {
        #[arg(long)]
        input: PathBuf,
    },
    /// Apply rigid, crop and erase augmentations to a volume and its boxes.
    Augment(AugmentArgs),
    /// Add Gaussian noise to boxes and optionally drop some.
    Perturb(PerturbArgs),
    /// Match predicted boxes to ground-truth boxes.
    Match(MatchArgs),
    /// Identification rate and deviations of predicted boxes.
    EvaluateDet(PairArgs),
    /// DSC, HD95 and ASSD of predicted label volumes.
    EvaluateSeg(PairArgs),
    /// Crop instances out of a label volume along their boxes.
    Crop(CropArgs),
    /// Merge cropped instance masks back into one label volume.
    Merge(MergeArgs),
    /// Train the toy query detector.
    TrainToy,
    /// Decode boxes for a subset of labels from a trained query bank.
    InferToy(InferArgs),
    /// Sweep the index-cost weight and record the learned bindings.
    AblateLambdaM(AblateArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    count: Option<u16>,
    #[arg(long, value_enum)]
    layout: Option<LayoutArg>,
    /// Write the volume as gzipped NIfTI instead of raw+JSON.
    #[arg(long)]
    nifti: bool,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum LayoutArg {
    Ladder,
    Stack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum AugmentOp {
    Rigid,
    Crop,
    Erase,
}

#[derive(Debug, Args)]
struct AugmentArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    boxes: PathBuf,
    /// Operations, applied in the order given.
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "rigid,crop,erase"
    )]
    ops: Vec<AugmentOp>,
}

#[derive(Debug, Args)]
struct PerturbArgs {
    #[arg(long)]
    boxes: PathBuf,
    #[arg(long)]
    sigma_pos: Option<f64>,
    #[arg(long)]
    sigma_scale: Option<f64>,
    #[arg(long)]
    sigma_angle: Option<f64>,
    /// Labels to leave out.
    #[arg(long, value_delimiter = ',')]
    drop: Vec<u16>,
}

#[derive(Debug, Args)]
struct MatchArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long = "lambda-m")]
    lambda_m: Option<f64>,
    /// Also write the cost matrix as CSV.
    #[arg(long)]
    dump_cost: bool,
}

#[derive(Debug, Args)]
struct PairArgs {
    /// Ground-truth files, one per case.
    #[arg(long, required = true, num_args = 1..)]
    gt: Vec<PathBuf>,
    /// Prediction files, paired with `--gt` by position.
    #[arg(long, required = true, num_args = 1..)]
    pred: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct CropArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    boxes: PathBuf,
    /// Labels to crop; all boxes by default.
    #[arg(long, value_delimiter = ',')]
    labels: Vec<u16>,
    #[arg(long)]
    expansion: Option<f64>,
    /// Output grid `x,y,z`; without it the input voxel grid is kept.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    dims: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
struct MergeArgs {
    /// Instance masks written by `crop`.
    #[arg(long, required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Box-set JSON whose image block is the target grid.
    #[arg(long)]
    boxes: PathBuf,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    bank: PathBuf,
    /// Labels to decode; all by default.
    #[arg(long, value_delimiter = ',')]
    labels: Vec<u16>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long = "lambda-m", value_delimiter = ',')]
    lambda_m: Vec<f64>,
    #[arg(long)]
    seeds: Option<u64>,
}

fn init_logging() {
    let level = match std::env::var("ANAT9_LOG").as_deref() {
        Ok("quiet") => log::LevelFilter::Off,
        Ok("info") => log::LevelFilter::Info,
        Ok("debug") => log::LevelFilter::Debug,
        _ => log::LevelFilter::Warn,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed.unwrap_or(config.seed);
    config = config.with_seed(seed);
    fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;

    let ctx = Ctx {
        config,
        out: cli.out,
    };
    match cli.jobs {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(|| dispatch(&ctx, cli.command))
        }
        None => dispatch(&ctx, cli.command),
    }
}

struct Ctx {
    config: RunConfig,
    out: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_json<S: Serialize>(&self, name: &str, value: &S) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, serde_json::to_string_pretty(value)? + "\n")
            .map_err(|e| Error::io(&path, e))
    }
}

/// Report wrapper echoing the resolved configuration.
#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    config: &'a RunConfig,
    #[serde(flatten)]
    body: T,
}

fn dispatch(ctx: &Ctx, command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(ctx, a),
        Command::Parameterize { input } => {
            let vol = load_labels(&input)?;
            let set = BoxSet::new(&vol.meta, parameterize_all(&vol));
            set.save(ctx.path("boxes.json"))?;
            println!("parameterized {} instances", set.boxes.len());
            Ok(())
        }
        Command::Augment(a) => augment(ctx, a),
        Command::Perturb(a) => perturb(ctx, a),
        Command::Match(a) => match_cmd(ctx, a),
        Command::EvaluateDet(a) => evaluate_det(ctx, a),
        Command::EvaluateSeg(a) => evaluate_seg(ctx, a),
        Command::Crop(a) => crop(ctx, a),
        Command::Merge(a) => merge(ctx, a),
        Command::TrainToy => train(ctx),
        Command::InferToy(a) => infer(ctx, a),
        Command::AblateLambdaM(a) => ablate(ctx, a),
    }
}

fn synth(ctx: &Ctx, a: SynthArgs) -> Result<()> {
    let mut cfg = ctx.config.scene.clone();
    if let Some(c) = a.count {
        cfg.instance_count = c;
    }
    if let Some(l) = a.layout {
        cfg.layout = match l {
            LayoutArg::Ladder => Layout::Ladder,
            LayoutArg::Stack => Layout::Stack,
        };
    }
    let scene = gen_scene(&cfg)?;
    let volume_name = if a.nifti {
        "labels.nii.gz"
    } else {
        "labels.json"
    };
    save_volume(&scene.labels, ctx.path(volume_name))?;
    scene.box_set().save(ctx.path("boxes.json"))?;
    #[derive(Serialize)]
    struct Body<'a> {
        scene: &'a SceneConfig,
        volume: &'a str,
        instances: usize,
    }
    ctx.write_json(
        "synth_report.json",
        &Report {
            config: &ctx.config,
            body: Body {
                scene: &cfg,
                volume: volume_name,
                instances: scene.gt_poses.len(),
            },
        },
    )?;
    println!(
        "wrote {} instances to {}",
        scene.gt_poses.len(),
        ctx.out.display()
    );
    Ok(())
}

fn augment(ctx: &Ctx, a: AugmentArgs) -> Result<()> {
    let cfg = &ctx.config.augment;
    cfg.validate()?;
    let mut vol = load_labels(&a.input)?;
    let mut poses = BoxSet::load(&a.boxes)?.boxes;
    #[derive(Serialize)]
    struct Step {
        op: AugmentOp,
        #[serde(skip_serializing_if = "Option::is_none")]
        rigid: Option<RigidDraw>,
        #[serde(skip_serializing_if = "Option::is_none")]
        crop_z: Option<[usize; 2]>,
        #[serde(skip_serializing_if = "Option::is_none")]
        erased: Option<bool>,
    }
    let mut steps = Vec::new();
    for op in a.ops {
        let mut step = Step {
            op,
            rigid: None,
            crop_z: None,
            erased: None,
        };
        match op {
            AugmentOp::Rigid => {
                let mut r = rng::stream(cfg.seed, 0, Op::Rigid);
                let draw = RigidDraw::sample(cfg, &mut r)?;
                (vol, poses) = rigid_augment(&vol, &poses, &draw, Interpolation::Nearest)?;
                step.rigid = Some(draw);
            }
            AugmentOp::Crop => {
                let mut r = rng::stream(cfg.seed, 0, Op::Crop);
                let (v, p, range) = random_crop_z(&vol, &poses, cfg, &mut r)?;
                (vol, poses) = (v, p);
                step.crop_z = Some(range);
            }
            AugmentOp::Erase => {
                let mut r = rng::stream(cfg.seed, 0, Op::Erase);
                let (v, p, fired) =
                    random_erase_bottom_pair(&vol, &poses, cfg.erase_probability, &mut r)?;
                (vol, poses) = (v, p);
                step.erased = Some(fired);
            }
        }
        steps.push(step);
    }
    if poses.is_empty() {
        log::warn!("augmentation removed every instance");
    }
    save_volume(&vol, ctx.path("labels.json"))?;
    BoxSet::new(&vol.meta, poses).save(ctx.path("boxes.json"))?;
    #[derive(Serialize)]
    struct Body {
        steps: Vec<Step>,
    }
    ctx.write_json(
        "augment_report.json",
        &Report {
            config: &ctx.config,
            body: Body { steps },
        },
    )
}

fn perturb(ctx: &Ctx, a: PerturbArgs) -> Result<()> {
    let set = BoxSet::load(&a.boxes)?;
    let base = ctx.config.noise;
    let noise = PoseNoise {
        position_mm: a.sigma_pos.unwrap_or(base.position_mm),
        scale_mm: a.sigma_scale.unwrap_or(base.scale_mm),
        angle_deg: a.sigma_angle.unwrap_or(base.angle_deg),
    };
    let drop: BTreeSet<u16> = a.drop.into_iter().collect();
    let boxes = perturb_poses(&set.boxes, &noise, &drop, ctx.config.seed)?;
    BoxSet {
        image: set.image,
        boxes,
    }
    .save(ctx.path("pred.json"))
}

/// One query slot per class: slot `q` carries box `q` as a certain
/// prediction, or a certain background prediction when that box is absent.
fn as_predictions(set: &BoxSet, gt: &BoxSet, num_classes: usize) -> Result<Vec<Prediction>> {
    let meta = gt.meta()?;
    let mut slots: Vec<Option<Prediction>> = vec![None; num_classes];
    for b in &set.boxes {
        if b.label == 0 || b.label as usize > num_classes {
            return Err(Error::UnknownLabel(b.label));
        }
        slots[b.label as usize - 1] = Some(Prediction::one_hot(
            b.label,
            num_classes,
            normalize_target_clamped(b, &meta),
        ));
    }
    slots
        .into_iter()
        .enumerate()
        .map(|(i, slot)| match slot {
            Some(p) => Ok(p),
            None => {
                let mut probs = vec![0.0; num_classes + 1];
                probs[0] = 1.0;
                Prediction::new(i as u16 + 1, probs, NormalizedTarget([0.5; 9]))
            }
        })
        .collect()
}

fn match_cmd(ctx: &Ctx, a: MatchArgs) -> Result<()> {
    let gt = BoxSet::load(&a.gt)?;
    let pred = BoxSet::load(&a.pred)?;
    let coeffs = match a.lambda_m {
        Some(l) => ctx.config.coeffs.with_index(l),
        None => ctx.config.coeffs,
    };
    coeffs.validate()?;
    let meta = gt.meta()?;
    let num_classes = gt
        .boxes
        .iter()
        .chain(&pred.boxes)
        .map(|b| b.label as usize)
        .max()
        .unwrap_or(0);
    if num_classes == 0 {
        return Err(Error::EmptyGroundTruth);
    }
    let index_cost = build_index_cost(num_classes)?;
    let gts: Vec<GroundTruth> = gt
        .boxes
        .iter()
        .map(|b| {
            Ok(GroundTruth {
                label: b.label,
                target: crate::geometry::normalize_target(b, &meta)?,
            })
        })
        .collect::<Result<_>>()?;
    let preds = as_predictions(&pred, &gt, num_classes)?;
    let assignment = match_predictions(&preds, &gts, &coeffs, &index_cost)?;
    if a.dump_cost {
        cost_matrix(&preds, &gts, &coeffs, &index_cost).write_csv(ctx.path("cost.csv"))?;
    }
    #[derive(Serialize)]
    struct Pair {
        gt_label: u16,
        query: u16,
    }
    #[derive(Serialize)]
    struct Body {
        coeffs: CostCoeffs,
        pairs: Vec<Pair>,
        total_cost: f64,
    }
    let pairs = assignment
        .bindings(&preds, &gts)
        .into_iter()
        .map(|(query, gt_label)| Pair { gt_label, query })
        .collect();
    ctx.write_json(
        "match.json",
        &Report {
            config: &ctx.config,
            body: Body {
                coeffs,
                pairs,
                total_cost: assignment.total_cost,
            },
        },
    )?;
    println!(
        "matched {} ground truths, total cost {:.6}",
        gts.len(),
        assignment.total_cost
    );
    Ok(())
}

fn check_pairs(a: &PairArgs) -> Result<()> {
    if a.gt.len() != a.pred.len() {
        return Err(Error::Config(format!(
            "{} --gt files but {} --pred files",
            a.gt.len(),
            a.pred.len()
        )));
    }
    Ok(())
}

fn case_name(path: &Path) -> String {
    path.display().to_string()
}

fn evaluate_det(ctx: &Ctx, a: PairArgs) -> Result<()> {
    check_pairs(&a)?;
    let th = ctx.config.thresholds;
    let reports: Vec<(String, DetectionReport)> =
        a.gt.par_iter()
            .zip(&a.pred)
            .map(|(g, p)| {
                let gt = BoxSet::load(g)?;
                let pred = BoxSet::load(p)?;
                Ok((case_name(g), identify(&pred.boxes, &gt.boxes, &th)?))
            })
            .collect::<Result<_>>()?;
    let rows: Vec<_> = reports.iter().flat_map(|(c, r)| r.rows(c)).collect();
    write_rows_csv(&rows, ctx.path("det_instances.csv"))?;

    let num_gt: usize = reports.iter().map(|(_, r)| r.num_gt).sum();
    let identified: usize = reports.iter().map(|(_, r)| r.num_identified).sum();
    let pooled = |f: fn(&crate::metrics::GtOutcome) -> Option<f64>| {
        let v: Vec<f64> = reports
            .iter()
            .flat_map(|(_, r)| r.per_gt.iter().filter(|o| o.identified).filter_map(f))
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    #[derive(Serialize)]
    struct Case<'a> {
        case: &'a str,
        report: &'a DetectionReport,
    }
    #[derive(Serialize)]
    struct Body<'a> {
        id_rate: f64,
        p_mean: Option<f64>,
        s_mean: Option<f64>,
        a_mean: Option<f64>,
        cases: Vec<Case<'a>>,
    }
    let body = Body {
        id_rate: identified as f64 / num_gt as f64,
        p_mean: pooled(|o| o.position_dev),
        s_mean: pooled(|o| o.scale_dev),
        a_mean: pooled(|o| o.angle_dev),
        cases: reports
            .iter()
            .map(|(c, r)| Case { case: c, report: r })
            .collect(),
    };
    println!("Id.Rate {:.4} ({identified}/{num_gt})", body.id_rate);
    ctx.write_json(
        "det_report.json",
        &Report {
            config: &ctx.config,
            body,
        },
    )
}

fn evaluate_seg(ctx: &Ctx, a: PairArgs) -> Result<()> {
    check_pairs(&a)?;
    let reports: Vec<(String, SegReport)> =
        a.gt.par_iter()
            .zip(&a.pred)
            .map(|(g, p)| {
                Ok((
                    case_name(g),
                    evaluate_segmentation(&load_labels(g)?, &load_labels(p)?)?,
                ))
            })
            .collect::<Result<_>>()?;
    let rows: Vec<_> = reports.iter().flat_map(|(c, r)| r.rows(c)).collect();
    write_rows_csv(&rows, ctx.path("seg_instances.csv"))?;
    #[derive(Serialize)]
    struct Case<'a> {
        case: &'a str,
        report: &'a SegReport,
    }
    #[derive(Serialize)]
    struct Body<'a> {
        mean_dsc: f64,
        cases: Vec<Case<'a>>,
    }
    let mean_dsc = reports.iter().map(|(_, r)| r.mean_dsc).sum::<f64>() / reports.len() as f64;
    println!("mean DSC {mean_dsc:.4} over {} cases", reports.len());
    ctx.write_json(
        "seg_report.json",
        &Report {
            config: &ctx.config,
            body: Body {
                mean_dsc,
                cases: reports
                    .iter()
                    .map(|(c, r)| Case { case: c, report: r })
                    .collect(),
            },
        },
    )
}

fn crop(ctx: &Ctx, a: CropArgs) -> Result<()> {
    let vol = load_labels(&a.input)?;
    let set = BoxSet::load(&a.boxes)?;
    let expansion = a.expansion.unwrap_or(ctx.config.crop.expansion_mm);
    let dims: Option<[usize; 3]> = match a.dims {
        Some(d) => Some([d[0], d[1], d[2]]),
        None => ctx.config.crop.out_dims,
    };
    let wanted: BTreeSet<u16> = a.labels.into_iter().collect();
    let mut written = 0;
    for b in set
        .boxes
        .iter()
        .filter(|b| wanted.is_empty() || wanted.contains(&b.label))
    {
        let (pose, out_dims) = match dims {
            Some(d) => (*b, d),
            None => grid_aligned_crop(b, &vol.meta, expansion)?,
        };
        let expansion = if dims.is_some() { expansion } else { 0.0 };
        let mut sub = crop_resample(&vol, &pose, expansion, out_dims, Interpolation::Nearest)?;
        // Keep only this instance; its label value marks the foreground.
        for v in &mut sub.voxels {
            if *v != b.label {
                *v = 0;
            }
        }
        save_volume(&sub, ctx.path(&format!("crop_{}.json", b.label)))?;
        written += 1;
    }
    if written == 0 {
        return Err(Error::Config("no box matched the requested labels".into()));
    }
    println!("wrote {written} crops");
    Ok(())
}

fn merge(ctx: &Ctx, a: MergeArgs) -> Result<()> {
    let target = BoxSet::load(&a.boxes)?.meta()?;
    let submasks: Vec<Submask> = a
        .inputs
        .iter()
        .map(|p| {
            let mask: LabelVolume = load_labels(p)?;
            let label = mask.voxels.iter().copied().max().unwrap_or(0);
            if label == 0 {
                log::warn!("{} has no foreground", p.display());
            }
            Ok(Submask { label, mask })
        })
        .collect::<Result<_>>()?;
    let merged = merge_back(&submasks, &target)?;
    save_volume(&merged, ctx.path("merged.json"))?;
    println!("merged {} masks", submasks.len());
    Ok(())
}

fn train(ctx: &Ctx) -> Result<()> {
    let out = train_toy(&ctx.config.train)?;
    out.bank.save(ctx.path("bank.json"))?;
    write_log_csv(&out.log, ctx.path("train_log.csv"))?;
    let last = out.log.last().expect("at least one epoch");
    let binding = out.bank.binding.as_ref().expect("binding recorded");
    #[derive(Serialize)]
    struct Body<'a> {
        final_epoch: &'a crate::toydetect::LogRow,
        identity_binding: bool,
    }
    ctx.write_json(
        "train_report.json",
        &Report {
            config: &ctx.config,
            body: Body {
                final_epoch: last,
                identity_binding: binding.is_identity(),
            },
        },
    )?;
    println!(
        "final loss {:.6}, binding {}",
        last.total,
        if binding.is_identity() {
            "identity"
        } else {
            "not identity"
        }
    );
    Ok(())
}

fn infer(ctx: &Ctx, a: InferArgs) -> Result<()> {
    let bank = QueryBank::load(&a.bank)?;
    let meta = bank.image.to_meta()?;
    let labels: BTreeSet<u16> = if a.labels.is_empty() {
        (1..=bank.num_classes as u16).collect()
    } else {
        a.labels.into_iter().collect()
    };
    let inf = steerable_infer(&bank, &labels, &meta)?;
    BoxSet::new(&meta, inf.boxes).save(ctx.path("boxes.json"))?;
    println!("decoded {} queries, work {}", labels.len(), inf.work);
    Ok(())
}

fn write_csv<S: Serialize>(rows: &[S], path: PathBuf) -> Result<()> {
    let mut w = csv::Writer::from_path(&path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

fn ablate(ctx: &Ctx, a: AblateArgs) -> Result<()> {
    let cfg = &ctx.config.ablation;
    let lambdas = if a.lambda_m.is_empty() {
        cfg.lambda_m.clone()
    } else {
        a.lambda_m
    };
    let n = a.seeds.unwrap_or(cfg.seeds);
    let seeds: Vec<u64> = (0..n).map(|i| ctx.config.seed.wrapping_add(i)).collect();
    let (runs, points) = ablate_lambda_m(&ctx.config.train, &lambdas, &seeds)?;
    write_csv(&points, ctx.path("ablation.csv"))?;
    write_csv(&runs, ctx.path("ablation_runs.csv"))?;
    #[derive(Serialize)]
    struct Body<'a> {
        points: &'a [crate::toydetect::AblationPoint],
        runs: &'a [crate::toydetect::AblationRun],
    }
    for p in &points {
        println!(
            "lambda_m {:>6}: identity {:.2}, mean displacement {:.2}",
            p.lambda_m, p.identity_fraction, p.mean_displacement
        );
    }
    ctx.write_json(
        "ablation_report.json",
        &Report {
            config: &ctx.config,
            body: Body {
                points: &points,
                runs: &runs,
            },
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["anat9", "no-such-command"]), 1);
        assert_eq!(run(["anat9", "evaluate-det", "--gt", "a.json"]), 1);
        assert_eq!(run(["anat9", "--help"]), 0);
    }

    #[test]
    fn data_errors_exit_two() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(
            run([
                "anat9",
                "--out",
                out,
                "parameterize",
                "--input",
                "/nonexistent.json"
            ]),
            2
        );
    }

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"seed": 1, "bogus": 2}"#).is_err());
        let c: RunConfig = serde_json::from_str(
            r#"{"coeffs": {"lambda_c":1,"lambda_p":10,"lambda_s":10,"lambda_a":10,"lambda_m":2}}"#,
        )
        .unwrap();
        assert_eq!(c.coeffs.index, 2.0);
        assert_eq!(c.thresholds, IdThresholds::default());
    }
}
