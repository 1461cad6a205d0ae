//! `omniloc`: pipelines for omnidirectional visual localization.
//!
//! Every subcommand is a pure function of its inputs and `--seed`:
//! repeated runs write byte-identical artifacts, whatever `--threads`
//! says. Reports come in CSV + JSON twins.

mod ops;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

fn default_threads() -> usize {
    std::env::var("OMNILOC_THREADS")
        .ok()
        .and_then(|s| s.parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

#[derive(Parser)]
#[command(name = "omniloc", version, about = "Omnidirectional visual localization pipelines")]
struct Cli {
    /// RNG seed for anything randomized (RANSAC, crop rotations, simulators).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; defaults to $OMNILOC_THREADS or 1. Output bytes do
    /// not depend on this.
    #[arg(long, global = true, default_value_t = default_threads())]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reproject a perspective/fisheye image onto an equirectangular
    /// canvas, writing the image and a `<name>.mask.png` coverage mask.
    Remap {
        /// Source image (PNG/JPEG).
        #[arg(long)]
        image: PathBuf,
        /// Source camera: preset name or preset file.
        #[arg(long)]
        camera: String,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        yaw_deg: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        pitch_deg: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        roll_deg: f64,
        /// Canvas width (canvas height is width/2).
        #[arg(long, default_value_t = 1024)]
        width: u32,
        /// Output image path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract a virtual pinhole/fisheye view from an equirectangular
    /// panorama.
    Rectify {
        /// Source panorama (2:1 equirectangular).
        #[arg(long)]
        pano: PathBuf,
        /// Target camera: preset name or preset file.
        #[arg(long)]
        camera: String,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        yaw_deg: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        pitch_deg: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        roll_deg: f64,
        /// Draw the view direction from the default random-rotation ranges
        /// instead of the explicit angles.
        #[arg(long)]
        random_rotation: bool,
        /// Output image path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the cube-map faces of a panorama into a directory.
    Cubemap {
        #[arg(long)]
        pano: PathBuf,
        /// Face edge length in pixels; defaults to pano height / 2.
        #[arg(long)]
        face_px: Option<u32>,
        /// Also render the downward face (skipped by default: tripods).
        #[arg(long)]
        include_bottom: bool,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank database descriptors against query descriptors and write
    /// `<out>.csv` / `<out>.json` rankings.
    Retrieve {
        /// Query descriptors (OLDC binary).
        #[arg(long)]
        queries: PathBuf,
        /// Database descriptors (OLDC binary).
        #[arg(long)]
        db: PathBuf,
        /// direct, vc1, or vc2. vc2 groups database records by their
        /// source reference and scores each group by its best member.
        #[arg(long, default_value = "direct")]
        mode: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Output prefix.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score rankings against manifest ground truth: Recall@k /
    /// Precision@k per query set, written as `<out>.csv` / `<out>.json`.
    EvalIr {
        #[arg(long)]
        manifest: PathBuf,
        /// Rankings CSV produced by `retrieve`.
        #[arg(long)]
        rankings: PathBuf,
        /// Mode label copied into the report rows.
        #[arg(long, default_value = "direct")]
        mode: String,
        /// Comma-separated list of k values.
        #[arg(long, default_value = "1,5")]
        ks: String,
        /// Output prefix.
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate camera-to-world poses from pixel-match files via
    /// depth-lifted P3P RANSAC; writes a pose file sorted by query id.
    Localize {
        #[arg(long)]
        manifest: PathBuf,
        /// A match file, or a directory of `*.txt` match files.
        #[arg(long)]
        matches: PathBuf,
        /// RANSAC inlier threshold, degrees of bearing angle.
        #[arg(long, default_value_t = 0.5)]
        threshold_deg: f64,
        /// Output pose file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare estimated poses to ground truth: accuracy buckets and
    /// median errors, written as `<out>.csv` / `<out>.json`.
    EvalPose {
        /// Estimated pose file.
        #[arg(long)]
        est: PathBuf,
        /// Ground-truth pose file (must cover every estimated id).
        #[arg(long)]
        gt: PathBuf,
        /// Query-type label copied into the report row.
        #[arg(long, default_value = "360")]
        query_type: String,
        /// Mode label copied into the report row.
        #[arg(long, default_value = "direct")]
        mode: String,
        /// Output prefix.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the pose-regressor training crops for every manifest
    /// reference and write a labels file.
    Augment {
        #[arg(long)]
        manifest: PathBuf,
        /// Skip the five cube faces.
        #[arg(long)]
        no_cube: bool,
        /// Also render the downward cube face.
        #[arg(long)]
        include_bottom: bool,
        /// Comma-separated fisheye presets; empty string for none.
        #[arg(long, default_value = "fisheye-120,fisheye-150,fisheye-195")]
        fisheye: String,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a mapping run and refine noisy poses with the eigenvalue
    /// BA; writes `<out>-trace.csv`, `<out>-poses.txt`, `<out>-gt.txt`,
    /// `<out>-summary.json`.
    BaSim {
        /// Scenario file (key-value); defaults to 5 planes / 10 poses /
        /// 1 degree / 5 cm noise with the global seed.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = 60)]
        max_iters: usize,
        /// Output prefix.
        #[arg(long)]
        out: PathBuf,
    },
    /// Align a source point cloud to a target with point-to-point ICP;
    /// writes `<out>-pose.txt`, `<out>-trace.csv`, `<out>-summary.json`.
    Icp {
        /// Source cloud (.xyz or .olpc).
        #[arg(long)]
        source: PathBuf,
        /// Target cloud (.xyz or .olpc).
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = 50)]
        max_iters: usize,
        /// Correspondence distance gate, meters.
        #[arg(long, default_value_t = 0.5)]
        max_dist: f64,
        /// Output prefix.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: threads: {e}");
            return ExitCode::FAILURE;
        }
    };
    let seed = cli.seed;
    let result = pool.install(|| match cli.command {
        Command::Remap { image, camera, yaw_deg, pitch_deg, roll_deg, width, out } => {
            ops::remap(&image, &camera, (yaw_deg, pitch_deg, roll_deg), width, &out)
        }
        Command::Rectify { pano, camera, yaw_deg, pitch_deg, roll_deg, random_rotation, out } => {
            ops::rectify(&pano, &camera, (yaw_deg, pitch_deg, roll_deg), random_rotation, seed, &out)
        }
        Command::Cubemap { pano, face_px, include_bottom, out } => {
            ops::cubemap(&pano, face_px, include_bottom, &out)
        }
        Command::Retrieve { queries, db, mode, k, out } => ops::retrieve(&queries, &db, &mode, k, &out),
        Command::EvalIr { manifest, rankings, mode, ks, out } => {
            ops::eval_ir(&manifest, &rankings, &mode, &ks, &out)
        }
        Command::Localize { manifest, matches, threshold_deg, out } => {
            ops::localize(&manifest, &matches, threshold_deg, seed, &out)
        }
        Command::EvalPose { est, gt, query_type, mode, out } => {
            ops::eval_pose(&est, &gt, &query_type, &mode, &out)
        }
        Command::Augment { manifest, no_cube, include_bottom, fisheye, out } => {
            ops::augment(&manifest, no_cube, include_bottom, &fisheye, &out)
        }
        Command::BaSim { scenario, max_iters, out } => ops::ba_sim(scenario.as_deref(), max_iters, seed, &out),
        Command::Icp { source, target, max_iters, max_dist, out } => {
            ops::icp(&source, &target, max_iters, max_dist, &out)
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
