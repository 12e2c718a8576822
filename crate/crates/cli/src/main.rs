//! `birdtrack` command-line driver.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use birdtrack::camera::{ErrorStats, REPROJECTION_THRESHOLD_PX};
use birdtrack::config::PipelineConfig;
use birdtrack::io;
use birdtrack::mask::build_mask;
use birdtrack::matcher::{DetectionLookup, RejectionAnchor};
use birdtrack::metrics::{count_keypoints, keypoint_stats};
use birdtrack::pipeline::{
    frame_span, load_cameras, load_detections, load_inputs, load_truth, observation_rows, observations_by_frame,
    process_frames, rejection_table, render_trajectories, run_pipeline, track_observations, tracking_table,
    MetricsReport, RunMode, SCHEMA_VERSION,
};
use birdtrack::reconstruct::{keypoint_reprojection_errors, reconstruct_frame, FusionMode, ReconstructionReport};
use birdtrack::synthworld::{generate, SceneConfig};
use birdtrack::tracker::AssignmentMode;
use birdtrack::{CameraId, FrameIndex};

#[derive(Parser, Debug)]
#[command(name = "birdtrack", version, about = "Multi-view 3D tracking of visually similar birds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with ground truth.
    Synth(SynthArgs),
    /// Build edge-fill masks and gate keypoints by them.
    Mask(StageArgs),
    /// Match keypoints across camera pairs, reject by landmark and cluster.
    Match(StageArgs),
    /// Triangulate correspondences into 3D observations.
    Reconstruct(ReconstructArgs),
    /// Track 3D observations over time.
    Track(TrackArgs),
    /// Score pipeline outputs against ground truth.
    Eval(EvalArgs),
    /// Run the full pipeline.
    Run(RunArgs),
    /// Write landmark Voronoi overlays.
    Overlay(StageArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StageSel {
    Full,
    VoronoiOverlay,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AnchorArg {
    Keypoint,
    DetectionCenter,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FusionArg {
    Pairwise,
    AllPairs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AssignmentArg {
    Greedy,
    Optimal,
}

/// Flags shared by every pipeline stage. Each overrides the config file.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// Pipeline configuration JSON; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory holding inputs under their standard names.
    #[arg(long, short = 'i')]
    input_dir: Option<PathBuf>,
    #[arg(long)]
    detections: Option<PathBuf>,
    #[arg(long)]
    keypoints: Option<PathBuf>,
    #[arg(long)]
    landmarks: Option<PathBuf>,
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// Directory with `cam{ID}_frame{N}.pgm` frames (mask stage).
    #[arg(long)]
    frames: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    match_truth: Option<PathBuf>,
    #[arg(long, short = 'o')]
    output_dir: Option<PathBuf>,
    /// Enable keypoint masking.
    #[arg(long, overrides_with = "no_mask")]
    mask: bool,
    #[arg(long)]
    no_mask: bool,
    /// Keep every match, skipping the landmark test.
    #[arg(long)]
    no_rejection: bool,
    #[arg(long, value_enum)]
    anchor: Option<AnchorArg>,
    #[arg(long, value_enum)]
    fusion: Option<FusionArg>,
    /// Lowe ratio threshold.
    #[arg(long, conflicts_with = "no_ratio")]
    ratio: Option<f64>,
    /// Disable the ratio test.
    #[arg(long)]
    no_ratio: bool,
    /// Neighbors per keypoint.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    min_support: Option<usize>,
    /// Restrict matching to these pairs, e.g. `--camera-pair 3,5`.
    #[arg(long = "camera-pair", value_parser = parse_pair)]
    camera_pairs: Vec<(CameraId, CameraId)>,
    #[arg(long)]
    canny_low: Option<f64>,
    #[arg(long)]
    canny_high: Option<f64>,
    /// Fusion radius for cross-pair estimates, m.
    #[arg(long)]
    fusion_radius: Option<f64>,
    #[arg(long)]
    fps: Option<f64>,
    /// Tracker association gate, m.
    #[arg(long)]
    gate: Option<f64>,
    #[arg(long)]
    sigma_jerk: Option<f64>,
    #[arg(long)]
    measurement_sigma: Option<f64>,
    #[arg(long)]
    confirm_hits: Option<u32>,
    #[arg(long)]
    max_misses: Option<u32>,
    #[arg(long, value_enum)]
    assignment: Option<AssignmentArg>,
    /// Unmatched frames tolerated within one persistence run.
    #[arg(long)]
    gap_tolerance: Option<u32>,
    /// Worker threads for per-frame stages; 0 uses all cores.
    #[arg(long)]
    threads: Option<usize>,
}

fn parse_pair(s: &str) -> std::result::Result<(CameraId, CameraId), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `a,b`, got {s:?}"))?;
    Ok((a.trim().parse().map_err(|e| format!("{e}"))?, b.trim().parse().map_err(|e| format!("{e}"))?))
}

impl Overrides {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::from_file(p)?,
            None => PipelineConfig::default(),
        };
        let paths = &mut c.paths;
        macro_rules! set_path {
            ($($f:ident),*) => { $( if let Some(v) = &self.$f { paths.$f = Some(v.clone()); } )* };
        }
        set_path!(input_dir, detections, keypoints, landmarks, calibration, frames, truth, match_truth, output_dir);
        if self.mask {
            c.stages.mask = true;
        }
        if self.no_mask {
            c.stages.mask = false;
        }
        if self.no_rejection {
            c.stages.rejection = false;
        }
        if let Some(a) = self.anchor {
            c.stages.anchor = match a {
                AnchorArg::Keypoint => RejectionAnchor::Keypoint,
                AnchorArg::DetectionCenter => RejectionAnchor::DetectionCenter,
            };
        }
        if let Some(f) = self.fusion {
            c.stages.fusion = match f {
                FusionArg::Pairwise => FusionMode::Pairwise,
                FusionArg::AllPairs => FusionMode::AllPairs,
            };
        }
        if let Some(r) = self.ratio {
            c.matching.ratio = Some(r);
        }
        if self.no_ratio {
            c.matching.ratio = None;
        }
        macro_rules! set {
            ($($dst:expr => $src:ident),*) => { $( if let Some(v) = self.$src { $dst = v; } )* };
        }
        set!(
            c.matching.k => k,
            c.matching.min_support => min_support,
            c.mask.canny_low => canny_low,
            c.mask.canny_high => canny_high,
            c.reconstruct.fusion_radius => fusion_radius,
            c.tracker.fps => fps,
            c.tracker.gate => gate,
            c.tracker.sigma_jerk => sigma_jerk,
            c.tracker.measurement_sigma => measurement_sigma,
            c.tracker.confirm_hits => confirm_hits,
            c.tracker.max_misses => max_misses,
            c.metrics.gap_tolerance_frames => gap_tolerance,
            c.threads => threads
        );
        if let Some(a) = self.assignment {
            c.tracker.assignment = match a {
                AssignmentArg::Greedy => AssignmentMode::Greedy,
                AssignmentArg::Optimal => AssignmentMode::Optimal,
            };
        }
        if !self.camera_pairs.is_empty() {
            c.matching.camera_pairs = self.camera_pairs.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args, Debug)]
struct StageArgs {
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Run everything, or only the Voronoi overlay stage.
    #[arg(long, value_enum, default_value = "full")]
    stage: StageSel,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Correspondence file; defaults to the output directory's.
    #[arg(long)]
    correspondences: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrackArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Observation file; defaults to the output directory's.
    #[arg(long)]
    observations: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Directory with the run outputs to score; defaults to the output directory.
    #[arg(long)]
    results: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Destination directory.
    #[arg(long, short = 'o')]
    output_dir: PathBuf,
    /// Scene configuration JSON; flags take precedence over it.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Length in seconds.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    fps: Option<f64>,
    #[arg(long)]
    birds: Option<usize>,
    /// Probability that a bird reuses another bird's descriptors.
    #[arg(long)]
    ambiguity: Option<f64>,
    #[arg(long)]
    pixel_sigma: Option<f64>,
    #[arg(long)]
    descriptor_sigma: Option<f64>,
    /// Confine each bird to a cube of this half extent around its landmark.
    #[arg(long)]
    territories: Option<f64>,
    #[arg(long)]
    jerk_burst_rate: Option<f64>,
    #[arg(long)]
    jerk_burst_sigma: Option<f64>,
    /// Also render grayscale PGM frames.
    #[arg(long)]
    render_frames: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Mask(a) => mask(&a.overrides.resolve()?),
        Command::Match(a) => match_stage(&a.overrides.resolve()?),
        Command::Reconstruct(a) => reconstruct(&a.overrides.resolve()?, a.correspondences),
        Command::Track(a) => track(&a.overrides.resolve()?, a.observations),
        Command::Eval(a) => eval(&a.overrides.resolve()?, a.results),
        Command::Run(a) => {
            let mode = match a.stage {
                StageSel::Full => RunMode::Full,
                StageSel::VoronoiOverlay => RunMode::VoronoiOverlay,
            };
            let summary = run_pipeline(&a.overrides.resolve()?, mode)?;
            if mode == RunMode::Full {
                println!(
                    "{} frames, {} matches ({} kept), {} correspondences, {} observations, {} tracks",
                    summary.frames,
                    summary.matches,
                    summary.kept_matches,
                    summary.correspondences,
                    summary.observations,
                    summary.tracks
                );
            }
            for p in summary.outputs {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::Overlay(a) => {
            let s = run_pipeline(&a.overrides.resolve()?, RunMode::VoronoiOverlay)?;
            for p in s.outputs {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut scene = match &a.scene {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SceneConfig::default(),
    };
    macro_rules! set {
        ($($f:ident => $src:ident),*) => { $( if let Some(v) = a.$src { scene.$f = v; } )* };
    }
    set!(
        seed => seed,
        duration_s => duration,
        fps => fps,
        birds => birds,
        ambiguity => ambiguity,
        pixel_sigma => pixel_sigma,
        descriptor_sigma => descriptor_sigma,
        jerk_burst_rate => jerk_burst_rate,
        jerk_burst_sigma => jerk_burst_sigma
    );
    if let Some(h) = a.territories {
        scene = scene.with_territories(h);
    }
    let dataset = generate(&scene)?;
    let written = dataset.write_to(&a.output_dir, a.render_frames)?;
    println!(
        "{} frames, {} cameras, {} detections, {} keypoints, {} files in {}",
        dataset.frame_count(),
        dataset.cameras.len(),
        dataset.detections.len(),
        dataset.keypoints.len(),
        written.len(),
        a.output_dir.display()
    );
    Ok(())
}

fn out_dir(config: &PipelineConfig) -> Result<PathBuf> {
    let dir = config.paths.output_dir();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn mask(config: &PipelineConfig) -> Result<()> {
    let inputs = load_inputs(config)?;
    let dir = out_dir(config)?.join("masks");
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut boxes: BTreeMap<(CameraId, FrameIndex), Vec<_>> = BTreeMap::new();
    for d in &inputs.detections {
        boxes.entry((d.camera, d.frame)).or_default().push(d.bbox);
    }
    let frames_dir = config.paths.frames();
    let mut gated = Vec::new();
    for (&(cam, frame), b) in &boxes {
        let path = frames_dir.join(io::frame_file_name(cam, frame));
        let image = io::read_pgm(&path)?;
        let m = build_mask(&image, b, config.mask.canny_low, config.mask.canny_high)
            .with_context(|| format!("masking {}", path.display()))?;
        io::write_mask_pgm(&dir.join(format!("mask_cam{cam}_frame{frame}.pgm")), &m)?;
        let kps: Vec<_> = inputs.keypoints.iter().filter(|k| k.camera == cam && k.frame == frame).cloned().collect();
        gated.extend(birdtrack::mask::gate_keypoints(&m, &kps));
    }
    let len = inputs.keypoints.first().map_or(1, |k| k.descriptor.len());
    let kp_path = dir.join("keypoints_masked.csv");
    io::write_keypoints(&kp_path, &gated, len)?;
    println!("{} of {} keypoints on mask; wrote {}", gated.len(), inputs.keypoints.len(), dir.display());
    Ok(())
}

fn match_stage(config: &PipelineConfig) -> Result<()> {
    let inputs = load_inputs(config)?;
    let frames: Vec<FrameIndex> = frame_span(&inputs).map(|(lo, hi)| (lo..=hi).collect()).unwrap_or_default();
    let results = process_frames(&inputs, config, &frames)?;
    let matches: Vec<_> = results.iter().flat_map(|r| r.matches.iter().cloned()).collect();
    let corr: Vec<_> = results.iter().flat_map(|r| r.correspondences.iter().cloned()).collect();
    let dir = out_dir(config)?;
    io::write_matches(&dir.join("matches.csv"), &matches)?;
    io::write_correspondences(&dir.join("correspondences.csv"), &corr)?;
    let kept = matches.iter().filter(|m| m.is_kept()).count();
    println!("{} matches, {} kept, {} correspondences", matches.len(), kept, corr.len());
    Ok(())
}

fn reconstruct(config: &PipelineConfig, correspondences: Option<PathBuf>) -> Result<()> {
    let cameras = load_cameras(config)?;
    let detections = load_detections(config, &cameras)?;
    let dir = out_dir(config)?;
    let path = correspondences.unwrap_or_else(|| dir.join("correspondences.csv"));
    let corr = io::read_correspondences(&path)?;
    let lookup = DetectionLookup::new(&detections);
    let mut by_frame: BTreeMap<FrameIndex, Vec<_>> = BTreeMap::new();
    for c in corr {
        by_frame.entry(c.frame).or_default().push(c);
    }
    let mut rows = Vec::new();
    let mut skipped = 0;
    for (frame, cs) in &by_frame {
        let rec = reconstruct_frame(*frame, cs, &lookup, &cameras, &config.reconstruct_config());
        skipped += rec.skipped.len();
        rows.extend(observation_rows(&rec));
    }
    io::write_observations(&dir.join("observations.csv"), &rows)?;
    println!("{} observations, {} correspondences skipped", rows.len(), skipped);
    Ok(())
}

fn track(config: &PipelineConfig, observations: Option<PathBuf>) -> Result<()> {
    let dir = out_dir(config)?;
    let path = observations.unwrap_or_else(|| dir.join("observations.csv"));
    let rows = io::read_observations(&path)?;
    let out = track_observations(&observations_by_frame(&rows, None), &config.tracker)?;
    io::write_tracks(&dir.join("tracks.csv"), &out.records)?;
    io::write_text(&dir.join("trajectories.svg"), &render_trajectories(&out.records))?;
    println!("{} track rows, {} tracks", out.records.len(), out.tracks_created);
    Ok(())
}

fn eval(config: &PipelineConfig, results: Option<PathBuf>) -> Result<()> {
    let results = results.unwrap_or_else(|| config.paths.output_dir());
    let Some(truth) = load_truth(config)? else {
        bail!("no truth files found at {} or {}", config.paths.truth().display(), config.paths.match_truth().display());
    };
    let cameras = load_cameras(config)?;
    let keypoints = io::read_keypoints(&config.paths.keypoints())?;
    let matches = read_if_exists(&results.join("matches.csv"), io::read_matches)?.unwrap_or_default();
    let tracks = read_if_exists(&results.join("tracks.csv"), io::read_tracks)?;
    let observations = read_if_exists(&results.join("observations.csv"), io::read_observations)?;

    let ids: Vec<CameraId> = cameras.keys().copied().collect();
    let span = keypoints.iter().map(|k| k.frame).fold(None, |acc: Option<(u32, u32)>, f| {
        Some(acc.map_or((f, f), |(lo, hi)| (lo.min(f), hi.max(f))))
    });
    let table2 = match span {
        Some((lo, hi)) => keypoint_stats(&count_keypoints(&keypoints, &ids, lo..hi + 1))?,
        None => Vec::new(),
    };
    let table3 = rejection_table(&matches, Some(&truth).filter(|t| !t.keypoint_identity.is_empty()))?;
    let errors = keypoint_reprojection_errors(&matches, &cameras);
    let table4 = ErrorStats::from_errors(&errors, REPROJECTION_THRESHOLD_PX).ok().map(|s| ReconstructionReport {
        total_keypoints: s.count,
        mean_error_px: s.mean,
        std_error_px: s.std,
        min_error_px: s.min,
        max_error_px: s.max,
        percent_below_25px: s.percent_below_threshold,
        mean_error_per_camera_px: BTreeMap::new(),
        observations: observations.as_ref().map_or(0, Vec::len),
    });
    let table5 = tracks.filter(|_| !truth.positions.is_empty()).map(|t| tracking_table(&t, &truth, config, None));
    let report = MetricsReport { schema_version: SCHEMA_VERSION, table2, table3, table4, table5 };
    std::fs::create_dir_all(&results).with_context(|| format!("creating {}", results.display()))?;
    let path = results.join("metrics.json");
    io::write_json(&path, &report)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn read_if_exists<T>(path: &Path, read: impl Fn(&Path) -> io::Result<T>) -> Result<Option<T>> {
    if path.exists() {
        Ok(Some(read(path)?))
    } else {
        Ok(None)
    }
}
