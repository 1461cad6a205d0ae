//! Lidar mapping machinery: adaptive voxel features, eigenvalue-based
//! bundle adjustment over scan poses, a ground-plane pose constraint, and
//! point-to-point ICP for registering runs against each other.
//!
//! The BA objective is feature-closed-form: for a plane feature the cost is
//! the smallest eigenvalue of the scatter matrix of its member points in
//! world frame, which equals the best achievable sum of squared
//! point-to-plane distances over all plane placements. Poses are the only
//! free variables.

use crate::geom::{RigidTransform, Rotation};
use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LidarError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("point cloud contains non-finite coordinates")]
    NonFinitePoint,
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { got: usize, need: usize },
    #[error("feature references frame {frame} but only {frames} frames / {poses} poses given")]
    FrameOutOfRange { frame: usize, frames: usize, poses: usize },
    #[error("need at least 2 poses, got {0}")]
    TooFewPoses(usize),
    #[error("objective became non-finite at iteration {iteration}")]
    NonFiniteCost { iteration: usize },
    #[error("no point pairs within correspondence distance")]
    NoCorrespondences,
    #[error("plane normal must be a nonzero finite vector")]
    BadPlane,
}

/// One lidar scan: the frame index it came from and its points in the
/// sensor frame, meters.
#[derive(Debug, Clone)]
pub struct FramedCloud {
    pub frame: usize,
    pub points: Vec<Vector3<f64>>,
}

impl FramedCloud {
    pub fn new(frame: usize, points: Vec<Vector3<f64>>) -> Result<Self, LidarError> {
        if points.is_empty() {
            return Err(LidarError::EmptyCloud);
        }
        if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite())) {
            return Err(LidarError::NonFinitePoint);
        }
        Ok(FramedCloud { frame, points })
    }
}

/// Maps sensor-frame points into the world: `P = R p + t`.
pub fn transform_points(cloud: &FramedCloud, pose: &RigidTransform) -> Vec<Vector3<f64>> {
    cloud.points.iter().map(|p| pose.apply(p)).collect()
}

/// Scatter statistics of a point set: `A = (1/U) sum (P - mean)(P - mean)^T`
/// with eigenvalues sorted descending and matching eigenvectors.
#[derive(Debug, Clone)]
pub struct FeatureStats {
    pub a: Matrix3<f64>,
    /// Descending: `eigenvalues[0] >= eigenvalues[1] >= eigenvalues[2]`.
    pub eigenvalues: [f64; 3],
    pub eigenvectors: [Vector3<f64>; 3],
    pub centroid: Vector3<f64>,
}

pub fn feature_covariance(points: &[Vector3<f64>]) -> Result<FeatureStats, LidarError> {
    if points.len() < 3 {
        return Err(LidarError::TooFewPoints { got: points.len(), need: 3 });
    }
    let n = points.len() as f64;
    let centroid = points.iter().sum::<Vector3<f64>>() / n;
    let mut a = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        a += d * d.transpose();
    }
    a /= n;
    let eig = a.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let eigenvalues = [
        eig.eigenvalues[order[0]],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]],
    ];
    let eigenvectors = [
        eig.eigenvectors.column(order[0]).into_owned(),
        eig.eigenvectors.column(order[1]).into_owned(),
        eig.eigenvectors.column(order[2]).into_owned(),
    ];
    Ok(FeatureStats { a, eigenvalues, eigenvectors, centroid })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Plane,
    Edge,
}

/// A geometric feature extracted from one voxel: which points belong to it
/// and its fitted direction (plane normal or edge direction).
#[derive(Debug, Clone)]
pub struct VoxelFeature {
    pub kind: FeatureKind,
    /// (frame, point index) into the originating clouds.
    pub members: Vec<(usize, usize)>,
    pub centroid: Vector3<f64>,
    /// Plane: unit normal (min-eigenvalue direction). Edge: unit line
    /// direction (max-eigenvalue direction).
    pub direction: Vector3<f64>,
    pub eigenvalues: [f64; 3],
}

#[derive(Debug, Clone, Copy)]
pub struct VoxelizeParams {
    pub root_voxel_m: f64,
    pub max_depth: usize,
    /// Plane test: `lambda3 < plane_ratio * lambda2`.
    pub plane_ratio: f64,
    /// Edge test: `lambda2 < edge_ratio * lambda1`.
    pub edge_ratio: f64,
    pub min_points: usize,
}

impl Default for VoxelizeParams {
    fn default() -> Self {
        VoxelizeParams { root_voxel_m: 1.0, max_depth: 3, plane_ratio: 0.01, edge_ratio: 0.1, min_points: 10 }
    }
}

/// Bins all world points into a root grid and recursively splits cells that
/// do not look like a single plane or edge, up to `max_depth`. Cells that
/// never pass the classifier are dropped, so the output only contains
/// features whose member points actually fit the claimed shape.
pub fn adaptive_voxelize(
    frames: &[FramedCloud],
    poses: &[RigidTransform],
    params: &VoxelizeParams,
) -> Result<Vec<VoxelFeature>, LidarError> {
    if !(params.root_voxel_m > 0.0) {
        return Err(LidarError::BadPlane);
    }
    check_frames(frames, poses)?;
    let size = params.root_voxel_m;
    let mut cells: HashMap<(i64, i64, i64), Vec<(usize, usize, Vector3<f64>)>> = HashMap::new();
    for cloud in frames {
        let pose = &poses[cloud.frame];
        for (i, p) in cloud.points.iter().enumerate() {
            let w = pose.apply(p);
            let key = ((w.x / size).floor() as i64, (w.y / size).floor() as i64, (w.z / size).floor() as i64);
            cells.entry(key).or_default().push((cloud.frame, i, w));
        }
    }
    let mut keys: Vec<_> = cells.keys().copied().collect();
    keys.sort_unstable();
    let mut out = Vec::new();
    for key in keys {
        let members = &cells[&key];
        let corner = Vector3::new(key.0 as f64 * size, key.1 as f64 * size, key.2 as f64 * size);
        subdivide(members, corner, size, 0, params, &mut out);
    }
    Ok(out)
}

fn subdivide(
    members: &[(usize, usize, Vector3<f64>)],
    corner: Vector3<f64>,
    size: f64,
    depth: usize,
    params: &VoxelizeParams,
    out: &mut Vec<VoxelFeature>,
) {
    if members.len() < params.min_points.max(3) {
        return;
    }
    let points: Vec<Vector3<f64>> = members.iter().map(|m| m.2).collect();
    let stats = feature_covariance(&points).expect("guarded above");
    let [l1, l2, l3] = stats.eigenvalues;
    if l3 < params.plane_ratio * l2 {
        out.push(VoxelFeature {
            kind: FeatureKind::Plane,
            members: members.iter().map(|m| (m.0, m.1)).collect(),
            centroid: stats.centroid,
            direction: stats.eigenvectors[2],
            eigenvalues: stats.eigenvalues,
        });
        return;
    }
    if l2 < params.edge_ratio * l1 {
        out.push(VoxelFeature {
            kind: FeatureKind::Edge,
            members: members.iter().map(|m| (m.0, m.1)).collect(),
            centroid: stats.centroid,
            direction: stats.eigenvectors[0],
            eigenvalues: stats.eigenvalues,
        });
        return;
    }
    if depth >= params.max_depth {
        return;
    }
    let half = size / 2.0;
    let mid = corner + Vector3::repeat(half);
    let mut children: [Vec<(usize, usize, Vector3<f64>)>; 8] = Default::default();
    for m in members {
        let oct = (usize::from(m.2.x >= mid.x)) | (usize::from(m.2.y >= mid.y) << 1) | (usize::from(m.2.z >= mid.z) << 2);
        children[oct].push(*m);
    }
    for (oct, child) in children.iter().enumerate() {
        let offset = Vector3::new(
            if oct & 1 != 0 { half } else { 0.0 },
            if oct & 2 != 0 { half } else { 0.0 },
            if oct & 4 != 0 { half } else { 0.0 },
        );
        subdivide(child, corner + offset, half, depth + 1, params, out);
    }
}

fn check_frames(frames: &[FramedCloud], poses: &[RigidTransform]) -> Result<(), LidarError> {
    for cloud in frames {
        if cloud.frame >= poses.len() {
            return Err(LidarError::FrameOutOfRange {
                frame: cloud.frame,
                frames: frames.len(),
                poses: poses.len(),
            });
        }
    }
    Ok(())
}

/// The world positions of a feature's member points under the given poses.
pub fn feature_points(
    feature: &VoxelFeature,
    poses: &[RigidTransform],
    frames: &[FramedCloud],
) -> Result<Vec<Vector3<f64>>, LidarError> {
    let by_frame = index_frames(frames, poses.len())?;
    Ok(feature_points_indexed(feature, poses, frames, &by_frame))
}

/// Equals lambda_3 (plane) or lambda_2 + lambda_3 (edge) of the scatter,
/// but is summed from the point residuals: the eigensolver's absolute
/// error floor sits near eps * ||A||, which would swamp a near-zero
/// energy, while the residuals stay exact however small they get.
fn feature_cost(points: &[Vector3<f64>], stats: &FeatureStats, kind: FeatureKind) -> f64 {
    let inv_u = 1.0 / points.len() as f64;
    match kind {
        FeatureKind::Plane => {
            let n = stats.eigenvectors[2];
            points.iter().map(|p| n.dot(&(p - stats.centroid)).powi(2)).sum::<f64>() * inv_u
        }
        FeatureKind::Edge => {
            let v = stats.eigenvectors[0];
            points
                .iter()
                .map(|p| {
                    let d = p - stats.centroid;
                    (d - v * v.dot(&d)).norm_squared()
                })
                .sum::<f64>()
                * inv_u
        }
    }
}

/// The eigenvalue BA cost at the given poses: sum over plane features of
/// the smallest scatter eigenvalue, plus sum over edge features of the two
/// smallest. Scatter is recomputed from the member points, so the value
/// tracks the poses exactly.
pub fn ba_objective(
    poses: &[RigidTransform],
    features: &[VoxelFeature],
    frames: &[FramedCloud],
) -> Result<f64, LidarError> {
    check_frames(frames, poses)?;
    let by_frame = index_frames(frames, poses.len())?;
    let mut cost = 0.0;
    for f in features {
        let points: Vec<Vector3<f64>> = f
            .members
            .iter()
            .map(|&(frame, idx)| poses[frame].apply(&frames[by_frame[frame]].points[idx]))
            .collect();
        let stats = feature_covariance(&points)?;
        cost += feature_cost(&points, &stats, f.kind);
    }
    Ok(cost)
}

fn index_frames(frames: &[FramedCloud], n_poses: usize) -> Result<Vec<usize>, LidarError> {
    let mut map = vec![usize::MAX; n_poses];
    for (slot, cloud) in frames.iter().enumerate() {
        if cloud.frame >= n_poses {
            return Err(LidarError::FrameOutOfRange { frame: cloud.frame, frames: frames.len(), poses: n_poses });
        }
        map[cloud.frame] = slot;
    }
    Ok(map)
}

#[derive(Debug, Clone, Copy)]
pub struct OptimizeOptions {
    pub max_iters: usize,
    /// Stop once an accepted step improves the cost by less than this
    /// relative amount.
    pub rel_tol: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions { max_iters: 60, rel_tol: 1e-10 }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeReport {
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Refines all poses but the first (the gauge anchor) by minimizing
/// `ba_objective`. Each outer iteration freezes every feature's fitted
/// direction and centroid, takes a damped Gauss-Newton step on the pose
/// tangents, and accepts it only if the true eigenvalue cost drops, so the
/// reported trace is monotone non-increasing.
pub fn optimize_poses(
    poses: &[RigidTransform],
    features: &[VoxelFeature],
    frames: &[FramedCloud],
    opts: &OptimizeOptions,
) -> Result<(Vec<RigidTransform>, OptimizeReport), LidarError> {
    if poses.len() < 2 {
        return Err(LidarError::TooFewPoses(poses.len()));
    }
    let by_frame = index_frames(frames, poses.len())?;
    let mut current: Vec<RigidTransform> = poses.to_vec();
    let mut cost = ba_objective(&current, features, frames)?;
    if !cost.is_finite() {
        return Err(LidarError::NonFiniteCost { iteration: 0 });
    }
    let mut trace = vec![cost];
    let mut mu = 1e-4;
    let mut converged = false;
    let mut iterations = 0;

    for outer in 0..opts.max_iters {
        iterations = outer + 1;
        // freeze (direction set, centroid) per feature at the current poses
        let mut h = vec![Matrix6::<f64>::zeros(); current.len()];
        let mut g = vec![Vector6::<f64>::zeros(); current.len()];
        for f in features {
            let points = feature_points_indexed(f, &current, frames, &by_frame);
            let stats = match feature_covariance(&points) {
                Ok(s) => s,
                Err(_) => continue,
            };
            let dirs: &[Vector3<f64>] = match f.kind {
                FeatureKind::Plane => &stats.eigenvectors[2..3],
                FeatureKind::Edge => &stats.eigenvectors[1..3],
            };
            let inv_u = 1.0 / f.members.len() as f64;
            for (&(frame, idx), world) in f.members.iter().zip(&points) {
                let p = &frames[by_frame[frame]].points[idx];
                let pose = &current[frame];
                for v in dirs {
                    let r = v.dot(&(world - stats.centroid));
                    let w = pose.rotation.apply_inverse(v);
                    let jw = p.cross(&w); // d r / d omega, rotation perturbed on the right
                    let jt = *v; // d r / d t
                    let mut row = Vector6::zeros();
                    row.fixed_rows_mut::<3>(0).copy_from(&jw);
                    row.fixed_rows_mut::<3>(3).copy_from(&jt);
                    h[frame] += (row * row.transpose()) * inv_u;
                    g[frame] += row * (r * inv_u);
                }
            }
        }
        let gmax = g.iter().skip(1).map(|v| v.amax()).fold(0.0, f64::max);
        if gmax < 1e-14 * (1.0 + cost) {
            converged = true;
            break;
        }
        let mut accepted = false;
        for _ in 0..20 {
            let mut candidate = current.clone();
            for u in 1..current.len() {
                let mut damped = h[u];
                for k in 0..6 {
                    damped[(k, k)] += mu * (1.0 + h[u][(k, k)]);
                }
                let Some(step) = damped.lu().solve(&(-g[u])) else { continue };
                let dw = Vector3::new(step[0], step[1], step[2]);
                let dt = Vector3::new(step[3], step[4], step[5]);
                candidate[u] = RigidTransform::new(
                    current[u].rotation.compose(&Rotation::exp(dw)),
                    current[u].translation + dt,
                );
            }
            let c_new = ba_objective(&candidate, features, frames)?;
            if !c_new.is_finite() {
                return Err(LidarError::NonFiniteCost { iteration: outer + 1 });
            }
            if c_new < cost {
                let rel = (cost - c_new) / cost.max(1e-300);
                current = candidate;
                cost = c_new;
                trace.push(cost);
                mu = (mu * 0.3).max(1e-9);
                accepted = true;
                if rel < opts.rel_tol {
                    converged = true;
                }
                break;
            }
            mu *= 10.0;
        }
        if !accepted {
            converged = true; // damping exhausted: local minimum to working precision
            break;
        }
        if converged {
            break;
        }
    }
    Ok((current, OptimizeReport { cost_trace: trace, iterations, converged }))
}

fn feature_points_indexed(
    feature: &VoxelFeature,
    poses: &[RigidTransform],
    frames: &[FramedCloud],
    by_frame: &[usize],
) -> Vec<Vector3<f64>> {
    feature
        .members
        .iter()
        .map(|&(frame, idx)| poses[frame].apply(&frames[by_frame[frame]].points[idx]))
        .collect()
}

/// A plane `n . x + delta = 0` with unit normal.
#[derive(Debug, Clone, Copy)]
pub struct PlaneCoeffs {
    pub normal: Vector3<f64>,
    pub delta: f64,
}

impl PlaneCoeffs {
    pub fn new(normal: Vector3<f64>, delta: f64) -> Result<Self, LidarError> {
        let n = normal.norm();
        if !n.is_finite() || n < 1e-12 || !delta.is_finite() {
            return Err(LidarError::BadPlane);
        }
        Ok(PlaneCoeffs { normal: normal / n, delta })
    }

    /// The canonical ground plane: horizontal through the origin.
    pub fn canonical_ground() -> Self {
        PlaneCoeffs { normal: Vector3::z(), delta: 0.0 }
    }
}

/// Ground-plane consistency residual for one pose. The canonical plane is
/// pushed through the pose (`n' = R n`, `delta' = delta - t . n'`) and
/// compared with the plane detected in that scan, in the
/// (azimuth, elevation, intercept) parameterization. Angle slots are
/// wrapped to (-pi, pi].
pub fn ground_plane_residual(
    pose: &RigidTransform,
    detected: &PlaneCoeffs,
    canonical: &PlaneCoeffs,
) -> Vector3<f64> {
    let n_moved = pose.rotation.apply(&canonical.normal);
    let delta_moved = canonical.delta - pose.translation.dot(&n_moved);
    let a = plane_params(&n_moved, delta_moved);
    let b = plane_params(&detected.normal, detected.delta);
    Vector3::new(wrap_angle(a.x - b.x), wrap_angle(a.y - b.y), a.z - b.z)
}

fn plane_params(n: &Vector3<f64>, delta: f64) -> Vector3<f64> {
    Vector3::new(n.y.atan2(n.x), n.z.atan2(n.x.hypot(n.y)), delta)
}

fn wrap_angle(a: f64) -> f64 {
    let mut x = a % std::f64::consts::TAU;
    if x <= -std::f64::consts::PI {
        x += std::f64::consts::TAU;
    } else if x > std::f64::consts::PI {
        x -= std::f64::consts::TAU;
    }
    x
}

#[derive(Debug, Clone, Copy)]
pub struct IcpOptions {
    pub max_iters: usize,
    pub max_corr_dist_m: f64,
}

impl Default for IcpOptions {
    fn default() -> Self {
        IcpOptions { max_iters: 50, max_corr_dist_m: 0.5 }
    }
}

#[derive(Debug, Clone)]
pub struct IcpReport {
    /// RMS point-pair distance after each iteration.
    pub rms_trace: Vec<f64>,
    pub iterations: usize,
    /// Pair count in the final iteration.
    pub matched: usize,
}

/// Point-to-point ICP: nearest-neighbor pairing through a uniform grid,
/// rigid re-fit by SVD each iteration. Returns the transform mapping
/// source points onto the target.
pub fn icp_align(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
    init: &RigidTransform,
    opts: &IcpOptions,
) -> Result<(RigidTransform, IcpReport), LidarError> {
    if source.len() < 3 || target.len() < 3 {
        return Err(LidarError::TooFewPoints { got: source.len().min(target.len()), need: 3 });
    }
    let cell = opts.max_corr_dist_m.max(1e-9);
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    let key_of = |p: &Vector3<f64>| {
        ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64)
    };
    for (i, p) in target.iter().enumerate() {
        grid.entry(key_of(p)).or_default().push(i);
    }
    let nearest = |p: &Vector3<f64>| -> Option<usize> {
        let (kx, ky, kz) = key_of(p);
        let mut best: Option<(f64, usize)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = grid.get(&(kx + dx, ky + dy, kz + dz)) {
                        for &i in ids {
                            let d2 = (target[i] - p).norm_squared();
                            if best.map_or(true, |(b, _)| d2 < b) {
                                best = Some((d2, i));
                            }
                        }
                    }
                }
            }
        }
        best.and_then(|(d2, i)| (d2.sqrt() <= opts.max_corr_dist_m).then_some(i))
    };

    let mut pose = *init;
    let mut trace = Vec::new();
    let mut matched = 0;
    for _ in 0..opts.max_iters {
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for (i, s) in source.iter().enumerate() {
            let moved = pose.apply(s);
            if let Some(j) = nearest(&moved) {
                pairs.push((i, j));
            }
        }
        if pairs.len() < 3 {
            return Err(LidarError::NoCorrespondences);
        }
        matched = pairs.len();
        let inv_n = 1.0 / pairs.len() as f64;
        let s_mean = pairs.iter().map(|&(i, _)| source[i]).sum::<Vector3<f64>>() * inv_n;
        let d_mean = pairs.iter().map(|&(_, j)| target[j]).sum::<Vector3<f64>>() * inv_n;
        let mut cross = Matrix3::zeros();
        for &(i, j) in &pairs {
            cross += (source[i] - s_mean) * (target[j] - d_mean).transpose();
        }
        let svd = cross.svd(true, true);
        let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else { break };
        let mut r = v_t.transpose() * u.transpose();
        if r.determinant() < 0.0 {
            let mut v = v_t.transpose();
            for k in 0..3 {
                v[(k, 2)] = -v[(k, 2)];
            }
            r = v * u.transpose();
        }
        let rot = Rotation::from_matrix(r).unwrap_or_else(|_| pose.rotation);
        let t = d_mean - rot.apply(&s_mean);
        let new_pose = RigidTransform::new(rot, t);
        let rms = (pairs
            .iter()
            .map(|&(i, j)| (new_pose.apply(&source[i]) - target[j]).norm_squared())
            .sum::<f64>()
            * inv_n)
            .sqrt();
        let done = (pose.translation - new_pose.translation).norm() < 1e-12
            && pose.rotation.angle_to(&new_pose.rotation) < 1e-12;
        pose = new_pose;
        trace.push(rms);
        if done || rms < 1e-12 {
            break;
        }
    }
    let iterations = trace.len();
    Ok((pose, IcpReport { rms_trace: trace, iterations, matched }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use approx::assert_relative_eq;
    use nalgebra::Matrix4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gaussianish(rng: &mut ChaCha8Rng) -> f64 {
        // sum of uniforms, close enough to normal for scatter tests
        (0..12).map(|_| rng.random::<f64>()).sum::<f64>() - 6.0
    }

    #[test]
    fn transform_identity_and_translation() {
        let cloud = FramedCloud::new(0, vec![Vector3::new(1.0, 2.0, 3.0), Vector3::zeros(), Vector3::x()]).unwrap();
        let same = transform_points(&cloud, &RigidTransform::identity());
        assert_eq!(same, cloud.points);
        let t = Vector3::new(-1.0, 0.5, 2.0);
        let shifted = transform_points(&cloud, &RigidTransform::new(Rotation::identity(), t));
        for (a, b) in shifted.iter().zip(&cloud.points) {
            assert_eq!(*a, b + t);
        }
    }

    #[test]
    fn transform_matches_homogeneous_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let pose = synth::random_pose(&mut rng, 3.0);
            let mut m = Matrix4::identity();
            m.fixed_view_mut::<3, 3>(0, 0).copy_from(&pose.rotation.matrix());
            m.fixed_view_mut::<3, 1>(0, 3).copy_from(&pose.translation);
            let p = Vector3::new(rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0);
            let cloud = FramedCloud::new(0, vec![p]).unwrap();
            let got = transform_points(&cloud, &pose)[0];
            let want = (m * p.push(1.0)).xyz();
            assert_relative_eq!(got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn cloud_validation() {
        assert!(matches!(FramedCloud::new(0, vec![]), Err(LidarError::EmptyCloud)));
        assert!(matches!(
            FramedCloud::new(0, vec![Vector3::new(f64::NAN, 0.0, 0.0)]),
            Err(LidarError::NonFinitePoint)
        ));
    }

    #[test]
    fn covariance_of_plane_and_line() {
        let mut plane = Vec::new();
        let mut line = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                plane.push(Vector3::new(i as f64 * 0.1, j as f64 * 0.1, 0.0));
            }
            line.push(Vector3::new(0.3 * i as f64, 0.4 * i as f64, 0.5 * i as f64));
        }
        let ps = feature_covariance(&plane).unwrap();
        assert!(ps.eigenvalues[2].abs() < 1e-12);
        assert!(ps.eigenvectors[2].z.abs() > 1.0 - 1e-9);
        let ls = feature_covariance(&line).unwrap();
        assert!(ls.eigenvalues[1].abs() < 1e-12 && ls.eigenvalues[2].abs() < 1e-12);
        assert!(matches!(feature_covariance(&plane[..2]), Err(LidarError::TooFewPoints { .. })));
    }

    /// Closed-form eigenvalues of a symmetric 3x3 matrix via the
    /// trigonometric solution of the characteristic cubic; written
    /// independently of the linear-algebra crate so the two can
    /// cross-check each other.
    fn analytic_symmetric_eigenvalues(a: &Matrix3<f64>) -> [f64; 3] {
        let p1 = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
        let q = a.trace() / 3.0;
        let p2 = (a[(0, 0)] - q).powi(2) + (a[(1, 1)] - q).powi(2) + (a[(2, 2)] - q).powi(2) + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        if p < 1e-300 {
            return [q, q, q];
        }
        let b = (a - Matrix3::identity() * q) / p;
        let r = (b.determinant() / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        // phi lies in [0, pi/3], so cos(phi) is the largest of the three
        // and cos(phi + 2pi/3) the smallest
        let e1 = q + 2.0 * p * phi.cos();
        let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::FRAC_PI_3).cos();
        let e2 = 3.0 * q - e1 - e3;
        [e1, e2, e3]
    }

    #[test]
    fn eigenvalues_match_analytic_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let points: Vec<Vector3<f64>> = (0..100)
            .map(|_| Vector3::new(gaussianish(&mut rng), 0.5 * gaussianish(&mut rng), 0.1 * gaussianish(&mut rng)))
            .collect();
        let stats = feature_covariance(&points).unwrap();
        let oracle = analytic_symmetric_eigenvalues(&stats.a);
        for k in 0..3 {
            assert!((stats.eigenvalues[k] - oracle[k]).abs() < 1e-9, "{:?} vs {:?}", stats.eigenvalues, oracle);
        }
        // eigenvectors actually diagonalize A
        for k in 0..3 {
            let v = stats.eigenvectors[k];
            assert_relative_eq!(stats.a * v, v * stats.eigenvalues[k], epsilon = 1e-9);
        }
    }

    fn grid_plane(axis: usize, offset: f64, lo: f64, hi: f64, n: usize) -> Vec<Vector3<f64>> {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let a = lo + (hi - lo) * (i as f64 + 0.5) / n as f64;
                let b = lo + (hi - lo) * (j as f64 + 0.5) / n as f64;
                let mut p = Vector3::zeros();
                p[axis] = offset;
                p[(axis + 1) % 3] = a;
                p[(axis + 2) % 3] = b;
                pts.push(p);
            }
        }
        pts
    }

    #[test]
    fn single_plane_is_one_root_feature() {
        let pts = grid_plane(2, 0.5, 0.01, 0.99, 12);
        let frames = [FramedCloud::new(0, pts).unwrap()];
        let poses = [RigidTransform::identity(), RigidTransform::identity()];
        let feats = adaptive_voxelize(&frames, &poses, &VoxelizeParams::default()).unwrap();
        assert_eq!(feats.len(), 1);
        assert_eq!(feats[0].kind, FeatureKind::Plane);
        assert_eq!(feats[0].members.len(), 144);
        assert!(feats[0].direction.z.abs() > 1.0 - 1e-9);
    }

    #[test]
    fn perpendicular_planes_get_separated() {
        let mut pts = grid_plane(2, 0.02, 0.01, 0.99, 14);
        pts.extend(grid_plane(0, 0.02, 0.01, 0.99, 14));
        let frames = [FramedCloud::new(0, pts).unwrap()];
        let poses = [RigidTransform::identity()];
        let feats = adaptive_voxelize(&frames, &poses, &VoxelizeParams::default()).unwrap();
        let planes: Vec<_> = feats.iter().filter(|f| f.kind == FeatureKind::Plane).collect();
        assert!(planes.len() >= 2, "got {} plane features", planes.len());
        let mut saw_z = false;
        let mut saw_x = false;
        for f in planes {
            // every feature must genuinely be a plane, not an L-shaped crease set
            assert!(f.eigenvalues[2] < 0.01 * f.eigenvalues[1]);
            if f.direction.z.abs() > 0.99 {
                saw_z = true;
            }
            if f.direction.x.abs() > 0.99 {
                saw_x = true;
            }
        }
        assert!(saw_z && saw_x);
    }

    #[test]
    fn noise_cloud_yields_nothing() {
        let pts = synth::random_cloud(4, 500, 0.49)
            .into_iter()
            .map(|p| p + Vector3::repeat(0.5))
            .collect::<Vec<_>>();
        let frames = [FramedCloud::new(0, pts).unwrap()];
        let poses = [RigidTransform::identity()];
        let feats = adaptive_voxelize(&frames, &poses, &VoxelizeParams::default()).unwrap();
        assert!(feats.is_empty(), "noise produced {} features", feats.len());
    }

    fn scene_features(scene: &synth::BaScene, at_init: bool) -> Vec<VoxelFeature> {
        let poses = if at_init { &scene.init_poses } else { &scene.gt_poses };
        // At the exact poses a razor-thin plane gate keeps voxels straddling
        // two walls out (their ratio is ~0.04, a clean plane sits at ~1e-16).
        // At noisy poses cross-frame scatter inflates every ratio, so the
        // gate has to be wide enough to admit true planes at the root level.
        // Edges are pointless on an all-plane scene either way.
        let params = VoxelizeParams {
            root_voxel_m: 2.0,
            plane_ratio: if at_init { 0.05 } else { 1e-6 },
            edge_ratio: 1e-9,
            ..Default::default()
        };
        adaptive_voxelize(&scene.frames, poses, &params).unwrap()
    }

    #[test]
    fn objective_vanishes_at_exact_poses() {
        let scene = synth::ba_scene(&synth::BaScenario { noise_rot_deg: 0.0, noise_t_m: 0.0, seed: 5, ..Default::default() });
        let feats = scene_features(&scene, false);
        assert!(!feats.is_empty());
        let cost = ba_objective(&scene.gt_poses, &feats, &scene.frames).unwrap();
        assert!(cost.abs() < 1e-18, "cost {cost}");
    }

    #[test]
    fn perturbing_a_pose_increases_the_objective() {
        let scene = synth::ba_scene(&synth::BaScenario { noise_rot_deg: 0.0, noise_t_m: 0.0, seed: 6, ..Default::default() });
        let feats = scene_features(&scene, false);
        let base = ba_objective(&scene.gt_poses, &feats, &scene.frames).unwrap();
        let mut poses = scene.gt_poses.clone();
        poses[3] = RigidTransform::new(
            poses[3].rotation.compose(&Rotation::exp(Vector3::new(0.01, 0.0, 0.005))),
            poses[3].translation + Vector3::new(0.02, -0.01, 0.03),
        );
        let bumped = ba_objective(&poses, &feats, &scene.frames).unwrap();
        assert!(bumped > base + 1e-9, "base {base}, bumped {bumped}");
    }

    #[test]
    fn plane_cost_equals_direct_point_to_plane_energy() {
        let scene = synth::ba_scene(&synth::BaScenario { noise_rot_deg: 0.5, noise_t_m: 0.03, seed: 7, ..Default::default() });
        let feats = scene_features(&scene, true);
        let mut checked = 0;
        for f in feats.iter().filter(|f| f.kind == FeatureKind::Plane).take(10) {
            let pts = feature_points(f, &scene.init_poses, &scene.frames).unwrap();
            let stats = feature_covariance(&pts).unwrap();
            let (n, q) = (stats.eigenvectors[2], stats.centroid);
            let direct: f64 = pts.iter().map(|p| n.dot(&(p - q)).powi(2)).sum::<f64>() / pts.len() as f64;
            assert!((direct - stats.eigenvalues[2]).abs() < 1e-10, "direct {direct} vs eig {}", stats.eigenvalues[2]);
            // the centroid is the optimal anchor: nudging q can only raise the energy
            let mut rng = ChaCha8Rng::seed_from_u64(checked);
            for _ in 0..5 {
                let dq = Vector3::new(gaussianish(&mut rng), gaussianish(&mut rng), gaussianish(&mut rng)) * 0.01;
                let moved: f64 = pts.iter().map(|p| n.dot(&(p - (q + dq))).powi(2)).sum::<f64>() / pts.len() as f64;
                assert!(moved + 1e-15 >= direct);
            }
            checked += 1;
        }
        assert!(checked > 0);
    }

    #[test]
    fn objective_is_gauge_invariant() {
        let scene = synth::ba_scene(&synth::BaScenario { noise_rot_deg: 1.0, noise_t_m: 0.05, seed: 8, ..Default::default() });
        let feats = scene_features(&scene, true);
        let base = ba_objective(&scene.init_poses, &feats, &scene.frames).unwrap();
        let g = RigidTransform::new(
            Rotation::yaw(0.7).compose(&Rotation::pitch(-0.3)),
            Vector3::new(10.0, -4.0, 2.0),
        );
        let moved: Vec<RigidTransform> = scene.init_poses.iter().map(|p| g.compose(p)).collect();
        let shifted = ba_objective(&moved, &feats, &scene.frames).unwrap();
        assert!((base - shifted).abs() < 1e-10 * (1.0 + base), "{base} vs {shifted}");
    }

    #[test]
    fn optimal_input_stays_put() {
        let scene = synth::ba_scene(&synth::BaScenario { noise_rot_deg: 0.0, noise_t_m: 0.0, seed: 9, ..Default::default() });
        let feats = scene_features(&scene, false);
        let (poses, report) = optimize_poses(&scene.gt_poses, &feats, &scene.frames, &OptimizeOptions::default()).unwrap();
        assert!(report.converged);
        for (a, b) in poses.iter().zip(&scene.gt_poses) {
            assert!((a.translation - b.translation).norm() < 1e-10);
            assert!(a.rotation.angle_to(&b.rotation) < 1e-10);
        }
    }

    #[test]
    fn optimize_pulls_noisy_poses_back() {
        // features keyed off the true poses: member lists are pose-free
        // (frame, index) pairs, so only the optimizer is on trial here
        let scene = synth::ba_scene(&synth::BaScenario { planes: 5, poses: 10, noise_rot_deg: 1.0, noise_t_m: 0.05, seed: 10 });
        let feats = scene_features(&scene, false);
        let (poses, report) = optimize_poses(&scene.init_poses, &feats, &scene.frames, &OptimizeOptions::default()).unwrap();
        let initial = report.cost_trace[0];
        let final_cost = *report.cost_trace.last().unwrap();
        assert!(final_cost <= 0.1 * initial, "cost {initial} -> {final_cost}");
        for w in report.cost_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-18, "trace not monotone: {w:?}");
        }
        let rmse = |ps: &[RigidTransform]| {
            (ps.iter()
                .zip(&scene.gt_poses)
                .map(|(a, b)| (a.translation - b.translation).norm_squared())
                .sum::<f64>()
                / ps.len() as f64)
                .sqrt()
        };
        assert!(rmse(&poses) < rmse(&scene.init_poses), "rmse did not improve");
    }

    #[test]
    fn single_free_pose_projects_onto_the_plane() {
        // frame 0 anchors the floor plane; frame 1 starts lifted and tilted
        let anchor = grid_plane(2, 0.0, -2.0, 2.0, 15);
        let gt1 = RigidTransform::new(Rotation::yaw(0.4), Vector3::new(0.3, -0.2, 0.0));
        let sensor1: Vec<Vector3<f64>> = grid_plane(2, 0.0, -2.0, 2.0, 15)
            .iter()
            .map(|w| gt1.apply_inverse(w))
            .collect();
        let frames = [FramedCloud::new(0, anchor).unwrap(), FramedCloud::new(1, sensor1).unwrap()];
        let init = [
            RigidTransform::identity(),
            RigidTransform::new(
                gt1.rotation.compose(&Rotation::exp(Vector3::new(0.03, -0.02, 0.0))),
                gt1.translation + Vector3::new(0.0, 0.0, 0.15),
            ),
        ];
        let members: Vec<(usize, usize)> = (0..frames[0].points.len())
            .map(|i| (0, i))
            .chain((0..frames[1].points.len()).map(|i| (1, i)))
            .collect();
        let world = feature_points(
            &VoxelFeature {
                kind: FeatureKind::Plane,
                members: members.clone(),
                centroid: Vector3::zeros(),
                direction: Vector3::z(),
                eigenvalues: [0.0; 3],
            },
            &init,
            &frames,
        )
        .unwrap();
        let stats = feature_covariance(&world).unwrap();
        let feature = VoxelFeature {
            kind: FeatureKind::Plane,
            members,
            centroid: stats.centroid,
            direction: stats.eigenvectors[2],
            eigenvalues: stats.eigenvalues,
        };
        let (poses, report) = optimize_poses(&init, &[feature], &frames, &OptimizeOptions::default()).unwrap();
        assert!(report.converged);
        // optimum: frame 1 points land exactly on the anchored plane z = 0
        for p in &frames[1].points {
            let w = poses[1].apply(p);
            assert!(w.z.abs() < 1e-6, "residual height {}", w.z);
        }
    }

    #[test]
    fn ground_plane_residual_cases() {
        let canonical = PlaneCoeffs::canonical_ground();
        let zero = ground_plane_residual(&RigidTransform::identity(), &canonical, &canonical);
        assert_relative_eq!(zero, Vector3::zeros(), epsilon = 1e-12);

        let h = 1.7;
        let lifted = RigidTransform::new(Rotation::identity(), Vector3::new(0.0, 0.0, h));
        let eps = ground_plane_residual(&lifted, &canonical, &canonical);
        assert_relative_eq!(eps, Vector3::new(0.0, 0.0, -h), epsilon = 1e-12);

        // rotation about the canonical normal plus in-plane translation
        let spun = RigidTransform::new(Rotation::roll(1.2), Vector3::new(3.0, -1.0, 0.0));
        let eps = ground_plane_residual(&spun, &canonical, &canonical);
        assert!(eps.norm() < 1e-12, "in-plane motion should be invisible: {eps:?}");
    }

    #[test]
    fn ground_plane_residual_wraps_angles() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let canonical = PlaneCoeffs::canonical_ground();
        for _ in 0..200 {
            let pose = synth::random_pose(&mut rng, 2.0);
            let det = PlaneCoeffs::new(
                Vector3::new(gaussianish(&mut rng), gaussianish(&mut rng), gaussianish(&mut rng) + 3.0),
                gaussianish(&mut rng),
            );
            let Ok(det) = det else { continue };
            let eps = ground_plane_residual(&pose, &det, &canonical);
            assert!(eps.x > -std::f64::consts::PI - 1e-12 && eps.x <= std::f64::consts::PI + 1e-12);
            assert!(eps.y > -std::f64::consts::PI - 1e-12 && eps.y <= std::f64::consts::PI + 1e-12);
            assert!(eps.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn ground_plane_detects_height_mismatch() {
        // a detected plane sitting h below the sensor, pose claiming height 0
        let canonical = PlaneCoeffs::canonical_ground();
        let detected = PlaneCoeffs::new(Vector3::z(), 1.4).unwrap();
        let eps = ground_plane_residual(&RigidTransform::identity(), &detected, &canonical);
        assert_relative_eq!(eps, Vector3::new(0.0, 0.0, -1.4), epsilon = 1e-12);
    }

    fn lattice(n: usize, spacing: f64) -> Vec<Vector3<f64>> {
        let mut pts = Vec::new();
        let c = (n as f64 - 1.0) / 2.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    pts.push(Vector3::new(
                        (i as f64 - c) * spacing,
                        (j as f64 - c) * spacing,
                        (k as f64 - c) * spacing,
                    ));
                }
            }
        }
        pts
    }

    #[test]
    fn icp_recovers_a_small_motion() {
        let source = lattice(7, 0.25);
        let g = RigidTransform::new(
            Rotation::exp(Vector3::new(0.01, -0.02, 0.015)),
            Vector3::new(0.04, -0.03, 0.02),
        );
        let target: Vec<Vector3<f64>> = source.iter().map(|p| g.apply(p)).collect();
        let (est, report) = icp_align(&source, &target, &RigidTransform::identity(), &IcpOptions::default()).unwrap();
        assert!((est.translation - g.translation).norm() < 1e-6);
        assert!(est.rotation.angle_to(&g.rotation) < 1e-6);
        for w in report.rms_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "rms trace not monotone: {w:?}");
        }
    }

    #[test]
    fn icp_identity_fixed_point() {
        let cloud = lattice(5, 0.3);
        let (est, report) = icp_align(&cloud, &cloud, &RigidTransform::identity(), &IcpOptions::default()).unwrap();
        assert!(est.translation.norm() < 1e-12);
        assert!(est.rotation.angle_to(&Rotation::identity()) < 1e-12);
        assert_eq!(report.matched, cloud.len());
    }

    #[test]
    fn icp_fails_on_disjoint_clouds() {
        let a = lattice(4, 0.2);
        let b: Vec<Vector3<f64>> = a.iter().map(|p| p + Vector3::new(100.0, 0.0, 0.0)).collect();
        assert!(matches!(
            icp_align(&a, &b, &RigidTransform::identity(), &IcpOptions::default()),
            Err(LidarError::NoCorrespondences)
        ));
    }
}
