//! Subcommand implementations. Everything here is deterministic: parallel
//! sections use order-preserving collects, per-item RNG seeds are derived
//! from stable hashes, and floats are printed with Rust's shortest
//! round-trip formatting.

use nalgebra::Vector3;
use omniloc_core::geom::{RigidTransform, Rotation};
use omniloc_core::io::{self, IoError, IrReportRow, PoseReportRow};
use omniloc_core::lidar::{self, IcpOptions, OptimizeOptions, VoxelizeParams};
use omniloc_core::pose::{self, RansacOptions};
use omniloc_core::raster::SampleMode;
use omniloc_core::retrieval::{
    DescriptorDb, FeatureGroup, GlobalDescriptor, RetrievalMode, RetrievalResult, Vc2Config,
};
use omniloc_core::synth::BaScenario;
use omniloc_core::{synth, vcam};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// One-line, machine-parsable: `error: <area>: <detail>`.
pub struct CliError {
    area: &'static str,
    detail: String,
}

impl CliError {
    fn new(area: &'static str, detail: impl Into<String>) -> Self {
        CliError { area, detail: detail.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let flat = self.detail.replace('\n', " ");
        write!(f, "error: {}: {}", self.area, flat)
    }
}

macro_rules! from_core {
    ($ty:ty, $area:literal) => {
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::new($area, e.to_string())
            }
        }
    };
}

from_core!(IoError, "io");
from_core!(omniloc_core::camera::CameraError, "camera");
from_core!(omniloc_core::vcam::VcamError, "vcam");
from_core!(omniloc_core::pose::PoseError, "pose");
from_core!(omniloc_core::lidar::LidarError, "lidar");
from_core!(omniloc_core::retrieval::RetrievalError, "retrieval");

type Result<T> = std::result::Result<T, CliError>;

fn fnv1a64(s: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn euler(yaw_deg: f64, pitch_deg: f64, roll_deg: f64) -> Rotation {
    Rotation::yaw(yaw_deg.to_radians())
        .compose(&Rotation::pitch(pitch_deg.to_radians()))
        .compose(&Rotation::roll(roll_deg.to_radians()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

// ---------------------------------------------------------------------------

pub fn remap(image: &Path, camera: &str, ypr: (f64, f64, f64), width: u32, out: &Path) -> Result<()> {
    let img = io::load_image(image)?;
    let cam = io::resolve_camera(camera)?;
    let rot = euler(ypr.0, ypr.1, ypr.2);
    let canvas = (width, width / 2);
    let remapped = vcam::remap_to_equirect(&img, &cam, &rot, canvas, SampleMode::Bilinear)?;
    io::save_image(out, &remapped.image)?;
    io::save_mask_png(&io::mask_path(out), remapped.mask(), canvas.0, canvas.1)?;
    Ok(())
}

pub fn rectify(
    pano: &Path,
    camera: &str,
    ypr: (f64, f64, f64),
    random_rotation: bool,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let img = io::load_image(pano)?;
    let cam = io::resolve_camera(camera)?;
    let rot = if random_rotation {
        let (y, p, r) = vcam::default_rotation_ranges();
        vcam::sample_rotation(seed, y, p, r)?
    } else {
        euler(ypr.0, ypr.1, ypr.2)
    };
    let view = vcam::extract_virtual(&img, &cam, &rot, SampleMode::Bilinear)?;
    io::save_image(out, &view)?;
    Ok(())
}

pub fn cubemap(pano: &Path, face_px: Option<u32>, include_bottom: bool, out: &Path) -> Result<()> {
    let img = io::load_image(pano)?;
    let face_px = face_px.unwrap_or_else(|| (img.height / 2).max(1));
    std::fs::create_dir_all(out).map_err(|e| CliError::new("io", format!("{}: {e}", out.display())))?;
    let stem = pano.file_stem().and_then(|s| s.to_str()).unwrap_or("pano").to_owned();
    for (face, _, view) in vcam::cubemap_faces(&img, face_px, include_bottom)? {
        io::save_image(&out.join(format!("{stem}_cube-{}.png", face.as_str())), &view)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// retrieval

#[derive(Serialize)]
struct RankRow {
    query_id: String,
    rank: usize,
    ref_id: String,
    score: f64,
}

fn write_rankings(prefix: &Path, results: &[RetrievalResult]) -> Result<()> {
    let rows: Vec<RankRow> = results
        .iter()
        .flat_map(|r| {
            r.ranked.iter().enumerate().map(|(i, (ref_id, score))| RankRow {
                query_id: r.query_id.clone(),
                rank: i + 1,
                ref_id: ref_id.clone(),
                score: *score,
            })
        })
        .collect();
    let mut csv = String::from("query_id,rank,ref_id,score\n");
    for r in &rows {
        writeln!(csv, "{},{},{},{}", r.query_id, r.rank, r.ref_id, r.score).expect("string write");
    }
    write_text(&with_suffix(prefix, ".csv"), &csv)?;
    io::write_json_report(&with_suffix(prefix, ".json"), &rows)?;
    Ok(())
}

fn read_rankings(path: &Path) -> Result<Vec<RetrievalResult>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?;
    let mut order: Vec<String> = Vec::new();
    let mut per_query: HashMap<String, Vec<(usize, String, f64)>> = HashMap::new();
    for (ln, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let bad = || CliError::new("io", format!("{}:{}: bad ranking row", path.display(), ln + 1));
        if fields.len() != 4 {
            return Err(bad());
        }
        let rank: usize = fields[1].parse().map_err(|_| bad())?;
        let score: f64 = fields[3].parse().map_err(|_| bad())?;
        if !per_query.contains_key(fields[0]) {
            order.push(fields[0].to_owned());
        }
        per_query.entry(fields[0].to_owned()).or_default().push((rank, fields[2].to_owned(), score));
    }
    Ok(order
        .into_iter()
        .map(|q| {
            let mut rows = per_query.remove(&q).expect("collected above");
            rows.sort_by_key(|r| r.0);
            let k_max = rows.iter().map(|r| r.0).max().unwrap_or(0);
            RetrievalResult { query_id: q, ranked: rows.into_iter().map(|(_, r, s)| (r, s)).collect(), k_max }
        })
        .collect())
}

pub fn retrieve(queries: &Path, db: &Path, mode: &str, k: usize, out: &Path) -> Result<()> {
    let mode: RetrievalMode = mode.parse().map_err(CliError::from)?;
    let query_descs = io::read_descriptors(queries)?;
    let records = io::read_descriptors(db)?;
    let db = match mode {
        RetrievalMode::Direct | RetrievalMode::Vc1 => DescriptorDb::Flat(records),
        RetrievalMode::Vc2 => {
            let mut groups: BTreeMap<String, Vec<GlobalDescriptor>> = BTreeMap::new();
            for d in records {
                let Some(parent) = d.source_ref.clone() else {
                    return Err(CliError::new(
                        "retrieval",
                        format!("vc2 database record '{}' has no source reference", d.id),
                    ));
                };
                groups.entry(parent).or_default().push(d);
            }
            DescriptorDb::Grouped(
                groups
                    .into_iter()
                    .map(|(ref_id, members)| FeatureGroup::new(ref_id, members))
                    .collect::<std::result::Result<_, _>>()?,
            )
        }
    };
    let results: Vec<RetrievalResult> = query_descs
        .par_iter()
        .map(|q| omniloc_core::retrieval::retrieve_topk(q, &db, k))
        .collect::<std::result::Result<_, _>>()?;
    write_rankings(out, &results)
}

pub fn eval_ir(manifest: &Path, rankings: &Path, mode: &str, ks: &str, out: &Path) -> Result<()> {
    let m = io::load_manifest(manifest)?;
    let results = read_rankings(rankings)?;
    let ks: Vec<usize> = ks
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| CliError::new("io", format!("bad k value '{s}'"))))
        .collect::<Result<_>>()?;
    let ref_positions: HashMap<String, Vector3<f64>> =
        m.references.iter().map(|e| (e.id.clone(), e.pose.translation)).collect();

    let mut claimed: HashMap<&str, &str> = HashMap::new();
    for set in &m.queries {
        for e in &set.entries {
            claimed.insert(&e.id, &set.camera);
        }
    }
    if let Some(stray) = results.iter().find(|r| !claimed.contains_key(r.query_id.as_str())) {
        return Err(CliError::new(
            "retrieval",
            format!("ranked query '{}' is not in the manifest", stray.query_id),
        ));
    }

    let mut rows = Vec::new();
    for set in &m.queries {
        let ids: std::collections::HashSet<&str> = set.entries.iter().map(|e| e.id.as_str()).collect();
        let subset: Vec<RetrievalResult> =
            results.iter().filter(|r| ids.contains(r.query_id.as_str())).cloned().collect();
        if subset.is_empty() {
            continue;
        }
        let query_positions: HashMap<String, Vector3<f64>> =
            set.entries.iter().map(|e| (e.id.clone(), e.pose.translation)).collect();
        let metrics = omniloc_core::retrieval::eval_retrieval(
            &subset,
            &query_positions,
            &ref_positions,
            m.d_threshold,
            &ks,
        )?;
        for met in metrics {
            rows.push(IrReportRow {
                query_type: format!("{}:{}", set.camera, set.tag),
                mode: mode.to_owned(),
                k: met.k,
                recall: met.recall,
                precision: met.precision,
            });
        }
    }
    io::write_ir_csv(&with_suffix(out, ".csv"), &rows)?;
    io::write_json_report(&with_suffix(out, ".json"), &rows)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// localization

pub fn localize(manifest: &Path, matches: &Path, threshold_deg: f64, seed: u64, out: &Path) -> Result<()> {
    let m = io::load_manifest(manifest)?;
    let refs: HashMap<&str, &io::ManifestEntry> =
        m.references.iter().map(|e| (e.id.as_str(), e)).collect();

    let mut files: Vec<PathBuf> = if matches.is_dir() {
        std::fs::read_dir(matches)
            .map_err(|e| CliError::new("io", format!("{}: {e}", matches.display())))?
            .filter_map(|entry| entry.ok().map(|d| d.path()))
            .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("txt"))
            .collect()
    } else {
        vec![matches.to_owned()]
    };
    files.sort();
    if files.is_empty() {
        return Err(CliError::new("io", format!("no match files under {}", matches.display())));
    }

    let mut entries: Vec<(String, RigidTransform)> = files
        .par_iter()
        .map(|file| -> Result<(String, RigidTransform)> {
            let mf = io::read_match_file(file)?;
            let entry = refs.get(mf.reference.as_str()).ok_or_else(|| {
                CliError::new("pose", format!("reference '{}' is not in the manifest", mf.reference))
            })?;
            let depth_path = entry.depth.as_ref().ok_or_else(|| {
                CliError::new("pose", format!("reference '{}' has no depth map", mf.reference))
            })?;
            let depth = io::read_pfm(depth_path)?;
            let cam = io::resolve_camera(&mf.model)?;
            let (corrs, _dropped) = pose::build_correspondences(&mf.pairs, &cam, &depth, &entry.pose);
            let opts = RansacOptions {
                angular_threshold: threshold_deg.to_radians(),
                seed: seed ^ fnv1a64(&mf.query),
                ..Default::default()
            };
            let res = pose::ransac_pnp(&corrs, &opts)?;
            Ok((mf.query, res.pose))
        })
        .collect::<Result<_>>()?;

    entries.sort_by(|a, b| a.0.cmp(&b.0));
    if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(CliError::new("pose", format!("duplicate query id '{}' across match files", w[0].0)));
    }
    io::write_pose_file(out, &entries)?;
    Ok(())
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub fn eval_pose(est: &Path, gt: &Path, query_type: &str, mode: &str, out: &Path) -> Result<()> {
    let est = io::read_pose_file(est)?;
    let gt: HashMap<String, RigidTransform> = io::read_pose_file(gt)?.into_iter().collect();
    if est.is_empty() {
        return Err(CliError::new("pose", "estimated pose file is empty"));
    }
    let mut trans = Vec::with_capacity(est.len());
    let mut rot = Vec::with_capacity(est.len());
    let (mut high, mut medium, mut low) = (0usize, 0usize, 0usize);
    for (id, p) in &est {
        let truth = gt
            .get(id)
            .ok_or_else(|| CliError::new("pose", format!("no ground truth for '{id}'")))?;
        let (te, re) = pose::pose_errors(p, truth);
        let b = pose::bucketize(te, re);
        high += usize::from(b.high);
        medium += usize::from(b.medium);
        low += usize::from(b.low);
        trans.push(te);
        rot.push(re);
    }
    trans.sort_by(f64::total_cmp);
    rot.sort_by(f64::total_cmp);
    let n = est.len() as f64;
    let rows = vec![PoseReportRow {
        query_type: query_type.to_owned(),
        mode: mode.to_owned(),
        count: est.len(),
        high_pct: 100.0 * high as f64 / n,
        medium_pct: 100.0 * medium as f64 / n,
        low_pct: 100.0 * low as f64 / n,
        median_trans_m: median(&trans),
        median_rot_deg: median(&rot),
    }];
    io::write_pose_csv(&with_suffix(out, ".csv"), &rows)?;
    io::write_json_report(&with_suffix(out, ".json"), &rows)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// augmentation

pub fn augment(manifest: &Path, no_cube: bool, include_bottom: bool, fisheye: &str, out: &Path) -> Result<()> {
    let m = io::load_manifest(manifest)?;
    let fisheye_presets: Vec<String> = fisheye
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect();
    let cfg = Vc2Config { include_cube: !no_cube, include_bottom, fisheye_presets };
    io::emit_augmented_set(&m, &cfg, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// lidar pipelines

#[derive(Serialize)]
struct BaSummary {
    features: usize,
    initial_cost: f64,
    final_cost: f64,
    iterations: usize,
    converged: bool,
    rmse_translation_initial_m: f64,
    rmse_translation_final_m: f64,
}

fn translation_rmse(a: &[RigidTransform], b: &[RigidTransform]) -> f64 {
    let n = a.len().min(b.len());
    (a.iter()
        .zip(b)
        .map(|(x, y)| (x.translation - y.translation).norm_squared())
        .sum::<f64>()
        / n as f64)
        .sqrt()
}

fn frame_ids(poses: &[RigidTransform]) -> Vec<(String, RigidTransform)> {
    poses.iter().enumerate().map(|(i, p)| (format!("f{i:03}"), *p)).collect()
}

pub fn ba_sim(scenario: Option<&Path>, max_iters: usize, seed: u64, out: &Path) -> Result<()> {
    let sc = match scenario {
        Some(p) => io::load_scenario(p)?,
        None => BaScenario { seed, ..Default::default() },
    };
    let scene = synth::ba_scene(&sc);
    // features are extracted from the simulated ground-truth map, so the
    // refinement starts from corruption-free geometry
    let params = VoxelizeParams {
        root_voxel_m: 2.0,
        plane_ratio: 1e-6,
        edge_ratio: 1e-9,
        ..Default::default()
    };
    let features = lidar::adaptive_voxelize(&scene.frames, &scene.gt_poses, &params)?;
    let opts = OptimizeOptions { max_iters, ..Default::default() };
    let (refined, report) = lidar::optimize_poses(&scene.init_poses, &features, &scene.frames, &opts)?;

    let mut trace = String::from("iteration,cost\n");
    for (i, c) in report.cost_trace.iter().enumerate() {
        writeln!(trace, "{i},{c}").expect("string write");
    }
    write_text(&with_suffix(out, "-trace.csv"), &trace)?;
    io::write_pose_file(&with_suffix(out, "-poses.txt"), &frame_ids(&refined))?;
    io::write_pose_file(&with_suffix(out, "-gt.txt"), &frame_ids(&scene.gt_poses))?;
    let summary = BaSummary {
        features: features.len(),
        initial_cost: report.cost_trace[0],
        final_cost: *report.cost_trace.last().expect("trace is never empty"),
        iterations: report.iterations,
        converged: report.converged,
        rmse_translation_initial_m: translation_rmse(&scene.init_poses, &scene.gt_poses),
        rmse_translation_final_m: translation_rmse(&refined, &scene.gt_poses),
    };
    io::write_json_report(&with_suffix(out, "-summary.json"), &[summary])?;
    Ok(())
}

fn load_cloud(path: &Path) -> Result<Vec<Vector3<f64>>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("xyz") => Ok(io::read_xyz(path)?),
        Some("olpc") => Ok(io::read_olpc(path)?),
        _ => Err(CliError::new("io", format!("{}: expected a .xyz or .olpc cloud", path.display()))),
    }
}

#[derive(Serialize)]
struct IcpSummary {
    iterations: usize,
    matched: usize,
    final_rms_m: f64,
}

pub fn icp(source: &Path, target: &Path, max_iters: usize, max_dist: f64, out: &Path) -> Result<()> {
    let src = load_cloud(source)?;
    let dst = load_cloud(target)?;
    let opts = IcpOptions { max_iters, max_corr_dist_m: max_dist };
    let (aligned, report) = lidar::icp_align(&src, &dst, &RigidTransform::identity(), &opts)?;

    io::write_pose_file(&with_suffix(out, "-pose.txt"), &[("icp".to_owned(), aligned)])?;
    let mut trace = String::from("iteration,rms\n");
    for (i, r) in report.rms_trace.iter().enumerate() {
        writeln!(trace, "{i},{r}").expect("string write");
    }
    write_text(&with_suffix(out, "-trace.csv"), &trace)?;
    let summary = IcpSummary {
        iterations: report.iterations,
        matched: report.matched,
        final_rms_m: *report.rms_trace.last().unwrap_or(&f64::NAN),
    };
    io::write_json_report(&with_suffix(out, "-summary.json"), &[summary])?;
    Ok(())
}
