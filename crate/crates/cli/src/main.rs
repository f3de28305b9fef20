//! Command-line front end: tube tracking, full segmentation, metric
//! evaluation, synthetic scene generation, and similarity-term ablation.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use tubeseg::eval::{eval_fmeasure, eval_iou, label_maps_to_object_masks, tube_box_iou, MaskSequence};
use tubeseg::io;
use tubeseg::pipeline::{run_pipeline, run_tube_stage, PipelineConfig, SolverKind, StageReport};
use tubeseg::similarity::SimilarityConfig;
use tubeseg::synth::{presets, synthesize_scene, write_scene_dir, NoiseSpec, SceneSpec};

#[derive(Parser)]
#[command(
    name = "tubeseg",
    about = "Detection-tube extraction and multi-object video segmentation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Expansion,
    Icm,
    Brute,
}

impl From<SolverArg> for SolverKind {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Expansion => SolverKind::Expansion,
            SolverArg::Icm => SolverKind::Icm,
            SolverArg::Brute => SolverKind::Brute,
        }
    }
}

#[derive(Args)]
struct RunOptions {
    /// TOML configuration file; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured labeling solver.
    #[arg(long, value_enum)]
    solver: Option<SolverArg>,
    /// Run every stage on one thread (bit-exact debugging).
    #[arg(long)]
    single_thread: bool,
    /// Write the per-stage timing report to this JSON file.
    #[arg(long)]
    report: Option<PathBuf>,
}

impl RunOptions {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::from_toml(
                &fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?,
            )?,
            None => PipelineConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(solver) = self.solver {
            cfg.solver = solver.into();
        }
        if self.single_thread {
            cfg.single_thread = true;
        }
        Ok(cfg)
    }

    fn write_report(&self, report: &StageReport) -> Result<()> {
        if let Some(path) = &self.report {
            fs::write(path, serde_json::to_string_pretty(report)? + "\n")
                .with_context(|| format!("writing report {}", path.display()))?;
        }
        Ok(())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Extract, interpolate and suppress detection tubes; write tubes.json.
    Track {
        /// Video input directory (frames/, flow/, detections.txt).
        #[arg(long)]
        input: PathBuf,
        /// Output file (default <input>/tubes.json).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        run: RunOptions,
    },
    /// Run the full segmentation pipeline; write label maps and a manifest.
    Segment {
        /// Video input directory (frames/, flow/, superpixels/, detections.txt).
        #[arg(long)]
        input: PathBuf,
        /// Output directory for labels/ and manifest.json.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        run: RunOptions,
    },
    /// Compare a segmentation against ground-truth masks (IoU, P/R/F).
    Eval {
        /// Segmentation output directory (labels/, manifest.json).
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth directory (obj_XX/frame_*.pgm).
        #[arg(long)]
        gt: PathBuf,
        /// Also write the metrics as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Generate a synthetic scene as a video input directory with ground truth.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "single")]
        preset: Preset,
        #[arg(long, default_value_t = 24)]
        frames: usize,
        #[arg(long, default_value_t = 120)]
        width: usize,
        #[arg(long, default_value_t = 90)]
        height: usize,
        /// Superpixel grid cell size.
        #[arg(long, default_value_t = 2)]
        cell: usize,
        /// Detection box jitter in pixels.
        #[arg(long, default_value_t = 0)]
        jitter: i32,
        /// Detection dropout rate in [0,1].
        #[arg(long, default_value_t = 0.0)]
        dropout: f64,
        /// False-positive rate per frame in [0,1].
        #[arg(long, default_value_t = 0.0)]
        fp_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Toggle similarity terms on noisy synthetic scenes and print the
    /// tube-quality grid (drop-one and only-one rows).
    Ablate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        frames: usize,
        #[arg(long, default_value_t = 96)]
        width: usize,
        #[arg(long, default_value_t = 72)]
        height: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// One textured object on a linear trajectory.
    Single,
    /// Two same-category objects of different colors crossing paths.
    Crossing,
    /// Two separated objects of different categories.
    TwoObjects,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Track { input, out, run } => track(&input, out.as_deref(), &run),
        Command::Segment { input, out, run } => segment(&input, &out, &run),
        Command::Eval { pred, gt, json } => evaluate(&pred, &gt, json.as_deref()),
        Command::Synth {
            out,
            preset,
            frames,
            width,
            height,
            cell,
            jitter,
            dropout,
            fp_rate,
            seed,
        } => synth(
            &out, preset, frames, width, height, cell, jitter, dropout, fp_rate, seed,
        ),
        Command::Ablate {
            seed,
            frames,
            width,
            height,
        } => ablate(seed, frames, width, height),
    }
}

fn track(input: &Path, out: Option<&Path>, run: &RunOptions) -> Result<()> {
    let cfg = run.load()?;
    let inputs = io::load_video_dir(input)?;
    let (tubes, report) =
        run_tube_stage(&inputs.images, &inputs.flows, &inputs.detections, &cfg)?;
    let out_path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| input.join("tubes.json"));
    fs::write(&out_path, serde_json::to_string_pretty(&tubes)? + "\n")?;
    run.write_report(&report)?;
    println!(
        "{} tube(s) over {} frame(s) -> {}",
        tubes.len(),
        inputs.images.len(),
        out_path.display()
    );
    for (i, t) in tubes.iter().enumerate() {
        println!(
            "  tube {}: {} frames {}..{} score {:.3}",
            i + 1,
            t.category,
            t.start_frame,
            t.end_frame(),
            t.path_score
        );
    }
    Ok(())
}

fn segment(input: &Path, out: &Path, run: &RunOptions) -> Result<()> {
    let cfg = run.load()?;
    let inputs = io::load_video_dir(input)?;
    let output = run_pipeline(&inputs, &cfg)?;
    fs::create_dir_all(out)?;
    let manifest = io::Manifest::new(&output.tubes, output.label_maps.len());
    io::write_segmentation(out, &output.label_maps, &manifest)?;
    fs::write(
        out.join("tubes.json"),
        serde_json::to_string_pretty(&output.tubes)? + "\n",
    )?;
    run.write_report(&output.report)?;
    println!(
        "segmented {} frame(s) into {} object(s) in {:.2}s -> {}",
        output.label_maps.len(),
        output.tubes.len(),
        output.report.total_seconds,
        out.display()
    );
    Ok(())
}

fn evaluate(pred_dir: &Path, gt_dir: &Path, json: Option<&Path>) -> Result<()> {
    let manifest = io::read_manifest(&pred_dir.join("manifest.json"))?;
    let labels_dir = pred_dir.join("labels");
    let maps: Vec<tubeseg::seg::LabelMap> = manifest
        .files
        .iter()
        .map(|name| io::read_label_map8_file(&labels_dir.join(name)))
        .collect::<tubeseg::Result<_>>()?;
    let pred = label_maps_to_object_masks(&maps, manifest.labels.len());
    let gt_opt = io::load_gt_masks(gt_dir, manifest.frames)?;
    let gt: Vec<MaskSequence> = gt_opt;
    if gt.is_empty() {
        bail!("no ground-truth objects under {}", gt_dir.display());
    }

    let f_report = eval_fmeasure(&pred, &gt)?;
    // Align predictions to ground truth by the F-maximizing assignment, then
    // report IoU per ground-truth object.
    let frames = manifest.frames;
    let mut aligned: Vec<MaskSequence> = vec![vec![None; frames]; gt.len()];
    for pair in &f_report.pairs {
        aligned[pair.gt] = pred[pair.pred].clone();
    }
    let iou_report = eval_iou(&aligned, &gt)?;

    println!("objects: {} predicted, {} ground truth", pred.len(), gt.len());
    for (j, iou) in iou_report.per_object.iter().enumerate() {
        let pair = f_report.pairs.iter().find(|p| p.gt == j);
        match (iou, pair) {
            (Some(iou), Some(p)) => println!(
                "  gt {j}: IoU {:.4}  P {:.4}  R {:.4}  F {:.4}{}",
                iou,
                p.precision,
                p.recall,
                p.f_measure,
                if p.f_measure >= tubeseg::eval::F_MEASURE_SUCCESS {
                    "  [ok]"
                } else {
                    ""
                }
            ),
            _ => println!("  gt {j}: unmatched"),
        }
    }
    println!(
        "average IoU {}  P {:.4}  R {:.4}  F {:.4}  segmented {}/{}",
        iou_report
            .average
            .map_or("n/a".into(), |v| format!("{v:.4}")),
        f_report.avg_precision,
        f_report.avg_recall,
        f_report.avg_f,
        f_report.matched,
        f_report.gt_objects
    );
    if let Some(path) = json {
        let payload = serde_json::json!({
            "average_iou": iou_report.average,
            "per_object_iou": iou_report.per_object,
            "precision": f_report.avg_precision,
            "recall": f_report.avg_recall,
            "f_measure": f_report.avg_f,
            "segmented": f_report.matched,
            "gt_objects": f_report.gt_objects,
        });
        fs::write(path, serde_json::to_string_pretty(&payload)? + "\n")?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn synth(
    out: &Path,
    preset: Preset,
    frames: usize,
    width: usize,
    height: usize,
    cell: usize,
    jitter: i32,
    dropout: f64,
    fp_rate: f64,
    seed: u64,
) -> Result<()> {
    let noise = NoiseSpec {
        jitter_px: jitter,
        dropout_rate: dropout,
        false_positive_rate: fp_rate,
    };
    let spec: SceneSpec = match preset {
        Preset::Single => presets::single(width, height, frames, noise, seed),
        Preset::Crossing => presets::crossing(width, height, frames, noise, seed),
        Preset::TwoObjects => presets::two_objects(width, height, frames, noise, seed),
    };
    let scene = synthesize_scene(&spec);
    fs::create_dir_all(out)?;
    write_scene_dir(&scene, out, cell)?;
    if scene.overlap_flagged {
        eprintln!("note: identically colored objects overlap in this scene");
    }
    println!(
        "wrote {} frame(s), {} detection(s) -> {}",
        scene.images.len(),
        scene.detections.len(),
        out.display()
    );
    Ok(())
}

struct AblationColumn {
    name: &'static str,
    apply: fn(&mut SimilarityConfig, bool),
}

const ABLATION_COLUMNS: &[AblationColumn] = &[
    AblationColumn {
        name: "score",
        apply: |c, on| c.use_score = on,
    },
    AblationColumn {
        name: "side",
        apply: |c, on| c.use_side = on,
    },
    AblationColumn {
        name: "vol",
        apply: |c, on| c.use_vol = on,
    },
    AblationColumn {
        name: "vol+side",
        apply: |c, on| {
            c.use_vol = on;
            c.use_side = on;
        },
    },
    AblationColumn {
        name: "match",
        apply: |c, on| c.use_match = on,
    },
    AblationColumn {
        name: "center",
        apply: |c, on| c.use_center = on,
    },
    AblationColumn {
        name: "match+center",
        apply: |c, on| {
            c.use_match = on;
            c.use_center = on;
        },
    },
    AblationColumn {
        name: "app",
        apply: |c, on| c.use_app = on,
    },
];

fn ablate(seed: u64, frames: usize, width: usize, height: usize) -> Result<()> {
    let noise = NoiseSpec {
        jitter_px: 1,
        dropout_rate: 0.2,
        false_positive_rate: 0.1,
    };
    let scenes = vec![
        synthesize_scene(&presets::single(width, height, frames, noise.clone(), seed)),
        synthesize_scene(&presets::two_objects(width, height, frames, noise.clone(), seed + 1)),
        synthesize_scene(&presets::crossing(width, height, frames, noise, seed + 2)),
    ];

    let base_cfg = PipelineConfig {
        seed,
        lookahead: 10,
        similarity: SimilarityConfig {
            search_radius: 6,
            ..SimilarityConfig::default()
        },
        ..PipelineConfig::default()
    };

    let score_scenes = |sim: &SimilarityConfig| -> Result<f64> {
        let mut cfg = base_cfg.clone();
        cfg.similarity = sim.clone();
        let mut total = 0.0;
        for scene in &scenes {
            let (tubes, _) =
                run_tube_stage(&scene.images, &scene.flows, &scene.detections, &cfg)?;
            total += tube_box_iou(&tubes, &scene.gt_boxes, &scene.categories);
        }
        Ok(100.0 * total / scenes.len() as f64)
    };

    let all = score_scenes(&SimilarityConfig {
        search_radius: 6,
        ..SimilarityConfig::default()
    })?;

    let mut drop_row = Vec::new();
    let mut only_row = Vec::new();
    for col in ABLATION_COLUMNS {
        let mut dropped = SimilarityConfig {
            search_radius: 6,
            ..SimilarityConfig::default()
        };
        (col.apply)(&mut dropped, false);
        drop_row.push(score_scenes(&dropped)?);

        let mut only = SimilarityConfig {
            search_radius: 6,
            ..SimilarityConfig::none()
        };
        only.use_score = false;
        (col.apply)(&mut only, true);
        only_row.push(score_scenes(&only)?);
    }

    let header: Vec<&str> = ABLATION_COLUMNS.iter().map(|c| c.name).collect();
    print!("{:>6}", "");
    for name in &header {
        print!(" {name:>12}");
    }
    println!(" {:>12}", "all");
    print!("{:>6}", "-");
    for v in &drop_row {
        print!(" {v:>12.2}");
    }
    println!(" {all:>12.2}");
    print!("{:>6}", "+");
    for v in &only_row {
        print!(" {v:>12.2}");
    }
    println!(" {all:>12.2}");
    Ok(())
}
