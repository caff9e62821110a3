use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use voxdet::annotate::{ellipsoid_mask, read_boxes_csv, write_boxes_csv, BoxTable};
use voxdet::augment::{augment, draw_params, scheme_table, AugScheme, Sample, SchemeName};
use voxdet::detect::{ensemble_fuse, stitch, BlobDetector, DetectionSet, DEFAULT_ENSEMBLE_IOU, DEFAULT_STITCH_IOU};
use voxdet::froc::{curve_tsv, evaluate, pair_tables, split_folds, EVAL_IOUS, FP_RATES};
use voxdet::pipeline::{preprocess, run_pipeline, Manifest, ManifestEntry, PipelineConfig};
use voxdet::sampler::{extract_patch, sample_training_patch, tile_volume};
use voxdet::topo::{plan_summary, plan_with, TopologyConfig};
use voxdet::volgrid::{
    generate_phantom, load_volume, random_phantom_spec, save_volume, DEFAULT_SPACING_TOLERANCE, TARGET_SPACING,
};
use voxdet::{Exec, PatchSpec};

#[derive(Parser)]
#[command(name = "voxdet", version, about = "Volumetric lesion detection toolkit")]
struct Cli {
    /// Print a machine-readable JSON summary on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Run every kernel on a single thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic phantoms, a ground-truth CSV and a manifest.
    PhantomGen(PhantomGenArgs),
    /// Resample a volume (and optionally its boxes) to the target spacing.
    Preprocess(PreprocessArgs),
    /// Rasterise ellipsoid pseudo-masks from box annotations.
    Pseudomask(PseudomaskArgs),
    /// Draw training patches around annotated objects.
    SamplePatches(SamplePatchesArgs),
    /// Sliding-window tiles for a volume.
    Tile(TileArgs),
    /// Apply augmentation scheme A or B to a volume and its boxes.
    Augment(AugmentArgs),
    /// Plan the encoder / decoder topology for a patch size.
    PlanTopology(PlanTopologyArgs),
    /// Run the threshold detector on a volume.
    Detect(DetectArgs),
    /// Merge per-tile detections into volume coordinates.
    Stitch(StitchArgs),
    /// Fuse the detections of two models.
    Ensemble(EnsembleArgs),
    /// FROC evaluation of predictions against ground truth.
    EvalFroc(EvalFrocArgs),
    /// Seeded cross-validation folds.
    SplitFolds(SplitFoldsArgs),
    /// Full config-driven pipeline run.
    Run(RunArgs),
}

#[derive(Args)]
struct PhantomGenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    count: usize,
    #[arg(long, num_args = 3, default_values_t = [256, 192, 192])]
    shape: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    max_lesions: usize,
    #[arg(long, num_args = 2, default_values_t = [4, 12])]
    radius: Vec<u32>,
    #[arg(long, num_args = 2, default_values_t = [1.0, 2.0])]
    intensity: Vec<f64>,
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
    /// Voxel spacing written to the headers.
    #[arg(long, num_args = 3, default_values_t = TARGET_SPACING)]
    spacing: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, num_args = 3, default_values_t = TARGET_SPACING)]
    target_spacing: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_SPACING_TOLERANCE)]
    tolerance: f64,
    /// Box CSV to carry along; requires `--image-id` and `--boxes-out`.
    #[arg(long, requires_all = ["boxes_out", "image_id"])]
    boxes: Option<PathBuf>,
    #[arg(long)]
    image_id: Option<String>,
    #[arg(long)]
    boxes_out: Option<PathBuf>,
}

#[derive(Args)]
struct PseudomaskArgs {
    #[arg(long)]
    boxes: PathBuf,
    /// Reference volume giving the grid shape.
    #[arg(long)]
    like: PathBuf,
    #[arg(long)]
    image_id: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SamplePatchesArgs {
    #[arg(long)]
    boxes: PathBuf,
    #[arg(long)]
    volume: PathBuf,
    #[arg(long)]
    image_id: String,
    #[arg(long, num_args = 3, default_values_t = [192, 192, 192])]
    patch: Vec<usize>,
    /// Patches drawn per object.
    #[arg(long, default_value_t = 1)]
    per_object: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving the extracted patches.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TileArgs {
    #[arg(long)]
    volume: PathBuf,
    #[arg(long, num_args = 3, default_values_t = [192, 192, 192])]
    patch: Vec<usize>,
    #[arg(long, default_value_t = 0.5)]
    overlap: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    boxes: PathBuf,
    #[arg(long)]
    image_id: String,
    #[arg(long, default_value = "B")]
    scheme: String,
    /// Scheme JSON overriding the built-in table.
    #[arg(long)]
    scheme_config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for image, mask and boxes.
    #[arg(long)]
    out: PathBuf,
    /// Print the scheme table and exit.
    #[arg(long)]
    show_table: bool,
}

#[derive(Args)]
struct PlanTopologyArgs {
    /// TOML or JSON topology config; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, num_args = 3)]
    patch: Option<Vec<usize>>,
    #[arg(long)]
    base: Option<usize>,
    #[arg(long)]
    widen: Option<f64>,
    /// Channel cap; 0 disables it.
    #[arg(long)]
    max_channels: Option<usize>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    volume: PathBuf,
    #[arg(long)]
    image_id: String,
    #[arg(long, default_value_t = 0.5)]
    threshold: f32,
    #[arg(long, default_value_t = 8)]
    min_voxels: usize,
    /// Sliding-window inference with this patch size.
    #[arg(long, num_args = 3)]
    patch: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0.5)]
    overlap: f64,
    /// Keep blobs touching inner tile faces.
    #[arg(long)]
    keep_truncated: bool,
    #[arg(long, default_value_t = DEFAULT_STITCH_IOU)]
    stitch_iou: f64,
    /// Prediction CSV (stitched).
    #[arg(long)]
    out: PathBuf,
    /// Per-tile detections in tile coordinates, for `stitch`.
    #[arg(long)]
    tiles_out: Option<PathBuf>,
}

#[derive(Args)]
struct StitchArgs {
    /// JSON written by `detect --tiles-out`.
    #[arg(long)]
    tiles: PathBuf,
    #[arg(long, default_value_t = DEFAULT_STITCH_IOU)]
    iou: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EnsembleArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ENSEMBLE_IOU)]
    iou: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalFrocArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, num_args = 1.., default_values_t = EVAL_IOUS)]
    iou: Vec<f64>,
    #[arg(long, num_args = 1.., default_values_t = FP_RATES)]
    fp_points: Vec<f64>,
    /// Manifest listing images that may have neither boxes nor predictions.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Directory receiving per-IoU curve TSVs and the report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SplitFoldsArgs {
    /// Manifest or plain text file with one id per line.
    #[arg(long)]
    ids: PathBuf,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// TOML or JSON pipeline config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

/// What a subcommand reports: a JSON value and a human-readable line.
struct Outcome {
    json: Value,
    text: String,
}

fn arr3<T: Copy>(v: &[T], name: &str) -> Result<[T; 3]> {
    match v {
        [a, b, c] => Ok([*a, *b, *c]),
        _ => bail!("--{name} takes exactly 3 values"),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn boxes_for(path: &Path, image_id: &str) -> Result<Vec<voxdet::BoxF>> {
    let table = read_boxes_csv(path)?;
    Ok(table.get(image_id).cloned().unwrap_or_default())
}

fn phantom_gen(a: PhantomGenArgs) -> Result<Outcome> {
    let shape = arr3(&a.shape, "shape")?;
    let spacing = arr3(&a.spacing, "spacing")?;
    let radius = [a.radius[0], a.radius[1]];
    let intensity = [a.intensity[0], a.intensity[1]];
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let generated = (0..a.count as u64).map(|i| -> Result<(String, Vec<voxdet::BoxF>)> {
        let seed = a.seed.wrapping_mul(1_000_003).wrapping_add(i);
        let spec = random_phantom_spec(shape, a.max_lesions, radius, intensity, a.noise, seed)?;
        let (vol, boxes) = generate_phantom(&spec)?;
        let vol = vol.with_geometry(spacing, [0.0; 3])?;
        let id = format!("phantom_{i:03}");
        save_volume(&vol, a.out.join(&id))?;
        Ok((id, boxes))
    });
    let mut gt = BoxTable::new();
    let mut volumes = Vec::new();
    for g in generated {
        let (id, boxes) = g?;
        volumes.push(ManifestEntry {
            image_id: id.clone(),
            path: id.clone().into(),
        });
        gt.insert(id, boxes);
    }
    write_boxes_csv(a.out.join("gt.csv"), &gt, false)?;
    Manifest::new("gt.csv", volumes).save(a.out.join("manifest.json"))?;
    let n_lesions: usize = gt.values().map(Vec::len).sum();
    Ok(Outcome {
        text: format!("wrote {} phantoms with {} lesions to {}", a.count, n_lesions, a.out.display()),
        json: json!({
            "volumes": a.count,
            "lesions": n_lesions,
            "manifest": a.out.join("manifest.json"),
        }),
    })
}

fn preprocess_cmd(a: PreprocessArgs, exec: Exec) -> Result<Outcome> {
    let vol = load_volume(&a.input)?;
    let cfg = PipelineConfig {
        target_spacing: arr3(&a.target_spacing, "target-spacing")?,
        spacing_tolerance: a.tolerance,
        ..Default::default()
    };
    let boxes = match (&a.boxes, &a.image_id) {
        (Some(p), Some(id)) => boxes_for(p, id)?,
        _ => Vec::new(),
    };
    let (out_vol, out_boxes) = preprocess(&vol, &boxes, &cfg, exec)?;
    save_volume(&out_vol, &a.out)?;
    if let (Some(p), Some(id)) = (&a.boxes_out, &a.image_id) {
        write_boxes_csv(p, &BoxTable::from([(id.clone(), out_boxes)]), false)?;
    }
    Ok(Outcome {
        text: format!("{:?} -> {:?} at spacing {:?}", vol.shape(), out_vol.shape(), out_vol.spacing()),
        json: json!({
            "input_shape": vol.shape(),
            "output_shape": out_vol.shape(),
            "spacing": out_vol.spacing(),
            "resampled": out_vol.shape() != vol.shape() || out_vol.spacing() != vol.spacing(),
        }),
    })
}

fn pseudomask_cmd(a: PseudomaskArgs) -> Result<Outcome> {
    let like = load_volume(&a.like)?;
    let boxes = boxes_for(&a.boxes, &a.image_id)?;
    let mask = ellipsoid_mask(&boxes, like.shape())?.with_geometry(like.spacing(), like.origin())?;
    save_volume(&mask, &a.out)?;
    let fg = mask.data().iter().filter(|&&v| v != 0.0).count();
    Ok(Outcome {
        text: format!("{} instances, {} foreground voxels", boxes.len(), fg),
        json: json!({ "instances": boxes.len(), "foreground_voxels": fg, "shape": mask.shape() }),
    })
}

fn sample_patches_cmd(a: SamplePatchesArgs) -> Result<Outcome> {
    let vol = load_volume(&a.volume)?;
    let patch = arr3(&a.patch, "patch")?;
    let boxes = boxes_for(&a.boxes, &a.image_id)?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut patches = Vec::new();
    for (k, b) in boxes.iter().enumerate() {
        for j in 0..a.per_object {
            let seed = a.seed.wrapping_add((k * a.per_object + j) as u64);
            let spec = sample_training_patch(vol.shape(), b, patch, seed)?;
            if let Some(dir) = &a.out {
                save_volume(&extract_patch(&vol, &spec, 0.0), dir.join(format!("{}_obj{k}_{j}", a.image_id)))?;
            }
            patches.push(json!({ "object": k, "draw": j, "origin": spec.origin, "size": spec.size }));
        }
    }
    Ok(Outcome {
        text: format!("{} patches for {} objects", patches.len(), boxes.len()),
        json: json!({ "patches": patches }),
    })
}

fn tile_cmd(a: TileArgs) -> Result<Outcome> {
    let vol = load_volume(&a.volume)?;
    let tiles = tile_volume(vol.shape(), arr3(&a.patch, "patch")?, a.overlap)?;
    let value = json!({ "shape": vol.shape(), "tiles": tiles });
    if let Some(p) = &a.out {
        write_json(p, &value)?;
    }
    Ok(Outcome {
        text: format!("{} tiles over {:?}", tiles.len(), vol.shape()),
        json: value,
    })
}

fn augment_cmd(a: AugmentArgs, exec: Exec) -> Result<Outcome> {
    let scheme = match &a.scheme_config {
        Some(p) => AugScheme::from_json(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => scheme_table(a.scheme.parse::<SchemeName>()?),
    };
    if a.show_table {
        return Ok(Outcome {
            text: scheme.to_json(),
            json: serde_json::to_value(&scheme)?,
        });
    }
    let image = load_volume(&a.image)?;
    let boxes = boxes_for(&a.boxes, &a.image_id)?;
    let sample = Sample::from_boxes(image, &boxes)?;
    let params = draw_params(&scheme, a.seed);
    let out = augment(&sample, &params, exec)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    save_volume(out.image(), a.out.join(format!("{}_image", a.image_id)))?;
    save_volume(out.mask(), a.out.join(format!("{}_mask", a.image_id)))?;
    let table = BoxTable::from([(a.image_id.clone(), out.boxes().to_vec())]);
    write_boxes_csv(a.out.join(format!("{}_boxes.csv", a.image_id)), &table, false)?;
    write_json(&a.out.join(format!("{}_params.json", a.image_id)), &params)?;
    Ok(Outcome {
        text: format!(
            "scheme {}: {} -> {} boxes, shape {:?}",
            scheme.name,
            sample.boxes().len(),
            out.boxes().len(),
            out.image().shape()
        ),
        json: json!({ "params": params, "boxes": out.boxes(), "shape": out.image().shape() }),
    })
}

fn plan_topology_cmd(a: PlanTopologyArgs) -> Result<Outcome> {
    let mut cfg: TopologyConfig = match &a.config {
        Some(p) if p.extension().and_then(|e| e.to_str()) == Some("toml") => {
            toml::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?
        }
        Some(p) => read_json(p)?,
        None => TopologyConfig::default(),
    };
    if let Some(p) = &a.patch {
        cfg.patch_size = arr3(p, "patch")?;
    }
    if let Some(b) = a.base {
        cfg.base_channels = b;
    }
    if let Some(w) = a.widen {
        cfg.widen_factor = w;
    }
    if let Some(m) = a.max_channels {
        cfg.max_channels = (m > 0).then_some(m);
    }
    if let Some(l) = a.levels {
        cfg.n_levels = l;
    }
    let plan = plan_with(&cfg)?;
    let summary = plan_summary(&plan);
    if let Some(p) = &a.out {
        fs::write(p, &summary).with_context(|| format!("writing {}", p.display()))?;
    }
    let channels: Vec<usize> = plan.levels.iter().map(|l| l.channels).collect();
    Ok(Outcome {
        text: format!("channels {channels:?}"),
        json: serde_json::to_value(&plan)?,
    })
}

#[derive(Serialize, Deserialize)]
struct TileDetections {
    image_id: String,
    shape: [usize; 3],
    tiles: Vec<(PatchSpec, DetectionSet)>,
}

fn detect_cmd(a: DetectArgs, exec: Exec) -> Result<Outcome> {
    let vol = load_volume(&a.volume)?;
    let det = BlobDetector {
        intensity_threshold: a.threshold,
        min_voxels: a.min_voxels,
        discard_truncated: !a.keep_truncated,
    };
    let set = match &a.patch {
        None => DetectionSet::new(a.image_id.clone(), det.detect(&vol).boxes),
        Some(p) => {
            let tiles = tile_volume(vol.shape(), arr3(p, "patch")?, a.overlap)?;
            let per_tile = det.detect_tiles(&vol, &tiles, 0.0, exec);
            if let Some(out) = &a.tiles_out {
                let record = TileDetections {
                    image_id: a.image_id.clone(),
                    shape: vol.shape(),
                    tiles: per_tile.clone(),
                };
                write_json(out, &record)?;
            }
            stitch(&a.image_id, vol.shape(), &per_tile, a.stitch_iou)?
        }
    };
    write_boxes_csv(&a.out, &BoxTable::from([(a.image_id.clone(), set.boxes.clone())]), true)?;
    Ok(Outcome {
        text: format!("{} detections", set.boxes.len()),
        json: serde_json::to_value(&set)?,
    })
}

fn stitch_cmd(a: StitchArgs) -> Result<Outcome> {
    let rec: TileDetections = read_json(&a.tiles)?;
    let set = stitch(&rec.image_id, rec.shape, &rec.tiles, a.iou)?;
    write_boxes_csv(&a.out, &BoxTable::from([(set.image_id.clone(), set.boxes.clone())]), true)?;
    Ok(Outcome {
        text: format!("{} tiles -> {} detections", rec.tiles.len(), set.boxes.len()),
        json: serde_json::to_value(&set)?,
    })
}

fn ensemble_cmd(a: EnsembleArgs) -> Result<Outcome> {
    let ta = read_boxes_csv(&a.a)?;
    let tb = read_boxes_csv(&a.b)?;
    let ids: std::collections::BTreeSet<&String> = ta.keys().chain(tb.keys()).collect();
    let mut fused = BoxTable::new();
    for id in ids {
        let sa = DetectionSet::new(id.clone(), ta.get(id).cloned().unwrap_or_default());
        let sb = DetectionSet::new(id.clone(), tb.get(id).cloned().unwrap_or_default());
        fused.insert(id.clone(), ensemble_fuse(&sa, &sb, a.iou)?.boxes);
    }
    write_boxes_csv(&a.out, &fused, true)?;
    let n: usize = fused.values().map(Vec::len).sum();
    Ok(Outcome {
        text: format!("{} images, {} fused detections", fused.len(), n),
        json: json!({ "images": fused.len(), "detections": n }),
    })
}

fn eval_froc_cmd(a: EvalFrocArgs, exec: Exec) -> Result<Outcome> {
    let gt = read_boxes_csv(&a.gt)?;
    let pred = read_boxes_csv(&a.pred)?;
    let extra: Vec<String> = match &a.manifest {
        Some(p) => Manifest::load(p)?.volumes.into_iter().map(|v| v.image_id).collect(),
        None => Vec::new(),
    };
    let pairs = pair_tables(&gt, &pred, &extra);
    let mut reports = Vec::new();
    let mut text = Vec::new();
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    for &iou in &a.iou {
        let rep = evaluate(&pairs, iou, &a.fp_points, exec)?;
        if let Some(dir) = &a.out {
            fs::write(dir.join(format!("froc_iou{iou}.tsv")), curve_tsv(&rep.curve))?;
        }
        text.push(format!("IoU {iou}: FROC {:.4}", rep.curve.score));
        reports.push(rep);
    }
    if let Some(dir) = &a.out {
        write_json(&dir.join("report.json"), &reports)?;
    }
    Ok(Outcome {
        text: text.join("\n"),
        json: serde_json::to_value(&reports)?,
    })
}

fn split_folds_cmd(a: SplitFoldsArgs) -> Result<Outcome> {
    let ids: Vec<String> = if a.ids.extension().and_then(|e| e.to_str()) == Some("json") {
        Manifest::load(&a.ids)?.volumes.into_iter().map(|v| v.image_id).collect()
    } else {
        fs::read_to_string(&a.ids)
            .with_context(|| format!("reading {}", a.ids.display()))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect()
    };
    let folds = split_folds(&ids, a.folds, a.seed)?;
    if let Some(p) = &a.out {
        write_json(p, &folds)?;
    }
    let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
    Ok(Outcome {
        text: format!("{} ids into folds of sizes {:?}", ids.len(), sizes),
        json: json!({ "folds": folds }),
    })
}

fn run_cmd(a: RunArgs, exec: Exec) -> Result<Outcome> {
    let mut cfg = match &a.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let manifest = Manifest::load(&a.manifest)?;
    let report = run_pipeline(&cfg, &manifest, &a.out, exec)?;
    let scores: BTreeMap<String, f64> = report
        .evaluations
        .iter()
        .map(|r| (format!("{}", r.curve.iou_threshold), r.curve.score))
        .collect();
    let text = scores
        .iter()
        .map(|(iou, s)| format!("IoU {iou}: FROC {s:.4}"))
        .collect::<Vec<_>>()
        .join("\n");
    Ok(Outcome {
        text: format!("{} images, {} detections\n{text}", report.n_images, report.n_predictions),
        json: serde_json::to_value(&report)?,
    })
}

fn dispatch(cli: Cli) -> Result<Outcome> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    match cli.command {
        Command::PhantomGen(a) => phantom_gen(a),
        Command::Preprocess(a) => preprocess_cmd(a, exec),
        Command::Pseudomask(a) => pseudomask_cmd(a),
        Command::SamplePatches(a) => sample_patches_cmd(a),
        Command::Tile(a) => tile_cmd(a),
        Command::Augment(a) => augment_cmd(a, exec),
        Command::PlanTopology(a) => plan_topology_cmd(a),
        Command::Detect(a) => detect_cmd(a, exec),
        Command::Stitch(a) => stitch_cmd(a),
        Command::Ensemble(a) => ensemble_cmd(a),
        Command::EvalFroc(a) => eval_froc_cmd(a, exec),
        Command::SplitFolds(a) => split_folds_cmd(a),
        Command::Run(a) => run_cmd(a, exec),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let as_json = cli.json;
    match dispatch(cli) {
        Ok(out) => {
            let text = if as_json {
                serde_json::to_string_pretty(&out.json).expect("json value")
            } else {
                out.text
            };
            // a closed pipe (e.g. `| head`) is not an error for us
            let _ = writeln!(std::io::stdout(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            if as_json {
                println!("{}", json!({ "error": format!("{e:#}") }));
            }
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
