//! Depth-lifted 2D-3D correspondences, bearing-vector P3P + RANSAC with
//! nonlinear refinement, and pose-error metrics.
//!
//! Pixel observations from any query camera become unit bearings; reference
//! pixels with depth become world points. Pose estimation then runs purely
//! on (bearing, point) pairs, so panoramic and fisheye queries need no
//! special casing.

mod p3p;

pub use p3p::{solve_p3p_bearings, P3pObservation};

use crate::camera::{Bearing, CameraError, CameraModel, EquirectModel};
use crate::geom::RigidTransform;
use crate::raster::DepthMap;
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PoseError {
    #[error("need at least {need} correspondences, got {got}")]
    TooFewCorrespondences { got: usize, need: usize },
    #[error("no valid depth at reference pixel ({u}, {v})")]
    InvalidDepth { u: f64, v: f64 },
    #[error("localization failed: no model with enough inliers")]
    LocalizationFailed,
    #[error(transparent)]
    Camera(#[from] CameraError),
}

/// One query-to-reference match, lifted and bearing-resolved.
#[derive(Debug, Clone, Copy)]
pub struct Correspondence {
    pub query_px: (f64, f64),
    pub ref_px: (f64, f64),
    /// World point from the reference depth map.
    pub point: Vector3<f64>,
    /// Unit direction in the query camera frame.
    pub bearing: Bearing,
}

impl Correspondence {
    pub fn new(query_px: (f64, f64), ref_px: (f64, f64), point: Vector3<f64>, bearing: Bearing) -> Self {
        Correspondence { query_px, ref_px, point, bearing }
    }
}

/// Lifts a reference pixel to a world point:
/// `X = R_ref * (depth * unproject(pixel)) + t_ref`.
/// The depth lookup is nearest-pixel; invalid depth is an error the caller
/// usually treats as "drop this match".
pub fn lift_reference(
    pixel: (f64, f64),
    depth: &DepthMap,
    ref_pose: &RigidTransform,
    model: &EquirectModel,
) -> Result<Vector3<f64>, PoseError> {
    let bearing = model.unproject(pixel.0, pixel.1)?;
    let d = depth.at(pixel.0, pixel.1).ok_or(PoseError::InvalidDepth { u: pixel.0, v: pixel.1 })? as f64;
    Ok(ref_pose.apply(&(bearing.vector() * d)))
}

/// Turns raw pixel matches into correspondences, dropping those with
/// invalid depth or out-of-domain query pixels. Returns the kept set and
/// the dropped count.
pub fn build_correspondences(
    matches: &[((f64, f64), (f64, f64))],
    query_model: &CameraModel,
    depth: &DepthMap,
    ref_pose: &RigidTransform,
) -> (Vec<Correspondence>, usize) {
    let ref_model = match EquirectModel::new(depth.width, depth.height) {
        Ok(m) => m,
        Err(_) => return (Vec::new(), matches.len()),
    };
    let mut kept = Vec::with_capacity(matches.len());
    let mut dropped = 0;
    for &(q, r) in matches {
        let point = match lift_reference(r, depth, ref_pose, &ref_model) {
            Ok(p) => p,
            Err(_) => {
                dropped += 1;
                continue;
            }
        };
        let bearing = match query_model.unproject(q.0, q.1) {
            Ok(b) => b,
            Err(_) => {
                dropped += 1;
                continue;
            }
        };
        kept.push(Correspondence::new(q, r, point, bearing));
    }
    (kept, dropped)
}

/// Angular reprojection residual of one correspondence under a
/// camera-to-world pose, in radians.
pub fn angular_residual(pose: &RigidTransform, c: &Correspondence) -> f64 {
    let y = pose.apply_inverse(&c.point);
    let n = y.norm();
    if n < 1e-12 {
        return std::f64::consts::PI;
    }
    c.bearing.vector().dot(&(y / n)).clamp(-1.0, 1.0).acos()
}

#[derive(Debug, Clone, Copy)]
pub struct RansacOptions {
    /// Inlier gate on the bearing angle, radians.
    pub angular_threshold: f64,
    pub max_iters: usize,
    /// Early-exit confidence for the adaptive iteration bound.
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacOptions {
    fn default() -> Self {
        RansacOptions {
            angular_threshold: 0.5f64.to_radians(),
            max_iters: 10_000,
            confidence: 0.999,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RansacResult {
    /// Camera-to-world estimate, refined on the inlier set.
    pub pose: RigidTransform,
    pub inliers: Vec<usize>,
    pub iterations: usize,
    pub refinement: RefineReport,
}

/// Robust absolute pose from bearing-point correspondences.
/// Deterministic under a fixed seed.
pub fn ransac_pnp(corrs: &[Correspondence], opts: &RansacOptions) -> Result<RansacResult, PoseError> {
    let n = corrs.len();
    if n < 4 {
        return Err(PoseError::TooFewCorrespondences { got: n, need: 4 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(usize, f64, RigidTransform)> = None; // (count, inlier residual sum, pose)
    let mut needed = opts.max_iters;
    let mut it = 0;
    while it < needed.min(opts.max_iters) {
        it += 1;
        let pick = rand::seq::index::sample(&mut rng, n, 3);
        let obs = [
            P3pObservation { bearing: corrs[pick.index(0)].bearing, point: corrs[pick.index(0)].point },
            P3pObservation { bearing: corrs[pick.index(1)].bearing, point: corrs[pick.index(1)].point },
            P3pObservation { bearing: corrs[pick.index(2)].bearing, point: corrs[pick.index(2)].point },
        ];
        for cand in solve_p3p_bearings(&obs) {
            let mut count = 0;
            let mut residual_sum = 0.0;
            for c in corrs {
                let r = angular_residual(&cand, c);
                if r < opts.angular_threshold {
                    count += 1;
                    residual_sum += r;
                }
            }
            let better = match &best {
                None => count >= 4,
                Some((bc, br, _)) => count > *bc || (count == *bc && residual_sum < *br),
            };
            if better {
                best = Some((count, residual_sum, cand));
                // adaptive early exit once the inlier ratio is known
                let w = count as f64 / n as f64;
                let denom = (1.0 - w.powi(3)).max(1e-12).ln();
                if denom < 0.0 {
                    let bound = ((1.0 - opts.confidence).ln() / denom).ceil();
                    needed = if bound.is_finite() { (bound as usize).max(1) } else { opts.max_iters };
                }
            }
        }
    }
    let (count, _, pose) = best.ok_or(PoseError::LocalizationFailed)?;
    if count < 4 {
        return Err(PoseError::LocalizationFailed);
    }
    let inliers: Vec<usize> =
        (0..n).filter(|&i| angular_residual(&pose, &corrs[i]) < opts.angular_threshold).collect();
    let inlier_corrs: Vec<Correspondence> = inliers.iter().map(|&i| corrs[i]).collect();
    let (refined, report) = refine_pose(&pose, &inlier_corrs)?;
    let inliers: Vec<usize> =
        (0..n).filter(|&i| angular_residual(&refined, &corrs[i]) < opts.angular_threshold).collect();
    Ok(RansacResult { pose: refined, inliers, iterations: it, refinement: report })
}

#[derive(Debug, Clone, Copy)]
pub struct RefineReport {
    pub converged: bool,
    /// The normal equations were numerically rank deficient at the start
    /// (degenerate geometry, e.g. repeated points).
    pub rank_deficient: bool,
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
}

/// Objective minimized by `refine_pose`: sum of squared bearing angles.
pub fn refine_cost(pose: &RigidTransform, corrs: &[Correspondence]) -> f64 {
    corrs.iter().map(|c| angular_residual(pose, c).powi(2)).sum()
}

/// Analytic gradient of `refine_cost` on the (rotation, translation)
/// tangent, with the rotation perturbed on the right:
/// `R <- R * exp(w)`, `t <- t + dt`.
pub fn refine_cost_gradient(pose: &RigidTransform, corrs: &[Correspondence]) -> [f64; 6] {
    let mut g = [0.0; 6];
    for c in corrs {
        let y = pose.apply_inverse(&c.point);
        let norm = y.norm();
        if norm < 1e-12 {
            continue;
        }
        let yhat = y / norm;
        let b = c.bearing.vector();
        let cosang = b.dot(&yhat).clamp(-1.0, 1.0);
        let s = b.cross(&yhat).norm();
        if s < 1e-12 {
            continue; // theta ~ 0 contributes nothing; theta ~ pi is non-smooth
        }
        let theta = s.atan2(cosang);
        // d theta / d y
        let gy = (yhat * cosang - b) / (s * norm);
        let gw = gy.cross(&y); // = skew(y)^T gy
        let gt = -pose.rotation.apply(&gy);
        for k in 0..3 {
            g[k] += 2.0 * theta * gw[k];
            g[3 + k] += 2.0 * theta * gt[k];
        }
    }
    g
}

/// Polishes a pose by minimizing the sum of squared angles between each
/// bearing and its camera-frame point, via damped Gauss-Newton steps on the
/// 6-dof tangent. The cost never increases across accepted steps; if the
/// iteration budget runs out or the problem is rank deficient, the best
/// iterate comes back with the corresponding report flags.
pub fn refine_pose(
    init: &RigidTransform,
    corrs: &[Correspondence],
) -> Result<(RigidTransform, RefineReport), PoseError> {
    if corrs.len() < 4 {
        return Err(PoseError::TooFewCorrespondences { got: corrs.len(), need: 4 });
    }
    let max_iters = 100;
    let grad_tol = 1e-12;
    let rel_tol = 1e-14;

    let mut pose = *init;
    let mut cost = refine_cost(&pose, corrs);
    let initial_cost = cost;
    let mut mu = 1e-6;
    let mut converged = false;
    let mut rank_deficient = false;
    let mut iterations = 0;

    for outer in 0..max_iters {
        iterations = outer + 1;
        let h = normal_equations(&pose, corrs);
        let g = DVector::from_row_slice(&refine_cost_gradient(&pose, corrs));
        if outer == 0 {
            rank_deficient = is_rank_deficient(&h);
        }
        let gnorm = g.amax();
        if gnorm < grad_tol {
            converged = !rank_deficient;
            break;
        }
        // damped steps: retry with stronger damping until the true cost drops
        let mut accepted = false;
        for _ in 0..25 {
            let mut damped = h.clone();
            for i in 0..6 {
                damped[(i, i)] += mu;
            }
            let Some(step) = damped.clone().lu().solve(&(-&g)) else {
                mu *= 10.0;
                continue;
            };
            let dw = Vector3::new(step[0], step[1], step[2]);
            let dt = Vector3::new(step[3], step[4], step[5]);
            let candidate = RigidTransform::new(
                pose.rotation.compose(&crate::geom::Rotation::exp(dw)),
                pose.translation + dt,
            );
            let c_new = refine_cost(&candidate, corrs);
            if c_new < cost {
                let rel_drop = (cost - c_new) / cost.max(1e-300);
                pose = candidate;
                cost = c_new;
                mu = (mu * 0.3).max(1e-12);
                accepted = true;
                if rel_drop < rel_tol {
                    converged = !rank_deficient;
                }
                break;
            }
            mu *= 10.0;
        }
        if !accepted {
            // no descent direction left; treat a tiny gradient as success
            converged = !rank_deficient && gnorm < 1e-8 * (1.0 + cost);
            break;
        }
        if converged {
            break;
        }
    }
    Ok((
        pose,
        RefineReport { converged, rank_deficient, iterations, initial_cost, final_cost: cost },
    ))
}

/// Gauss-Newton normal equations matrix for the refinement objective,
/// built from two-dimensional tangent residuals per correspondence. The
/// residual scale `k = theta/sin(theta)` goes to 1 at the optimum, so the
/// matrix stays informative (and the rank test meaningful) even on a
/// perfectly fit solution.
fn normal_equations(pose: &RigidTransform, corrs: &[Correspondence]) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(6, 6);
    let r_mat = pose.rotation.matrix();
    for c in corrs {
        let y = pose.apply_inverse(&c.point);
        let norm = y.norm();
        if norm < 1e-12 {
            continue;
        }
        let yhat = y / norm;
        let b = c.bearing.vector();
        let cosang = b.dot(&yhat).clamp(-1.0, 1.0);
        if cosang < -0.999_999 {
            continue; // antipodal, objective non-smooth here
        }
        let s = b.cross(&yhat).norm();
        let theta = s.atan2(cosang);
        let k = if s < 1e-9 { 1.0 } else { theta / s };

        // J ~ k (I - yhat yhat^T) / ||y|| * [skew(y), -R^T]
        // The tangent projector at the bearing is omitted: it changes
        // J^T J only at second order in the residual angle, the same
        // order Gauss-Newton already truncates at.
        let proj = (Matrix3::identity() - yhat * yhat.transpose()) * (k / norm);
        let sy = skew(&y);
        let jw = proj * sy;
        let jt = -(proj * r_mat.transpose());
        let mut jcols = [[0.0; 3]; 6];
        for a in 0..3 {
            for row in 0..3 {
                jcols[a][row] = jw[(row, a)];
                jcols[3 + a][row] = jt[(row, a)];
            }
        }
        for a in 0..6 {
            for bcol in 0..6 {
                let dot: f64 = (0..3).map(|r3| jcols[a][r3] * jcols[bcol][r3]).sum();
                h[(a, bcol)] += dot;
            }
        }
    }
    h *= 2.0;
    h
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn is_rank_deficient(h: &DMatrix<f64>) -> bool {
    let svd = h.clone().svd(false, false);
    let sv = &svd.singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return true;
    }
    sv.iter().any(|&s| s / max < 1e-10)
}

/// Translation distance in meters and rotation angle in degrees
/// (`arccos((trace(R_est^T R_gt) - 1) / 2)`, clamped to [0, 180]).
pub fn pose_errors(est: &RigidTransform, gt: &RigidTransform) -> (f64, f64) {
    let trans = (est.translation - gt.translation).norm();
    let rot = est.rotation.angle_to(&gt.rotation).to_degrees().clamp(0.0, 180.0);
    (trans, rot)
}

/// Accuracy buckets in the benchmark's reporting convention. Buckets are
/// nested: high implies medium implies low.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccuracyBuckets {
    pub high: bool,
    pub medium: bool,
    pub low: bool,
}

/// (translation m, rotation deg) thresholds for high / medium / low.
pub const BUCKET_THRESHOLDS: [(f64, f64); 3] = [(0.25, 2.0), (0.5, 5.0), (5.0, 10.0)];

pub fn bucketize(trans_err_m: f64, rot_err_deg: f64) -> AccuracyBuckets {
    let hit = |i: usize| trans_err_m <= BUCKET_THRESHOLDS[i].0 && rot_err_deg <= BUCKET_THRESHOLDS[i].1;
    AccuracyBuckets { high: hit(0), medium: hit(1), low: hit(2) }
}
