//! Synthetic fixtures: smooth test panoramas, analytic room depth,
//! randomized PnP instances, and simulated multi-pose plane scenes.
//! Everything is deterministic under a caller-supplied seed.

use crate::camera::{Bearing, EquirectModel};
use crate::geom::{RigidTransform, Rotation};
use crate::lidar::FramedCloud;
use crate::pose::Correspondence;
use crate::raster::{DepthMap, RasterImage};
use nalgebra::Vector3;
use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// RGB panorama whose channels are linear in the view direction:
/// smooth everywhere on the sphere, including across the seam.
pub fn gradient_pano(width: u32, height: u32) -> RasterImage {
    let model = EquirectModel::new(width, height).expect("2:1 panorama");
    let mut img = RasterImage::new(width, height, 3).unwrap();
    for y in 0..height {
        for x in 0..width {
            let d = model.unproject(x as f64 + 0.5, y as f64 + 0.5).unwrap();
            let v = d.vector();
            img.set_pixel(
                x,
                y,
                &[
                    ((v.x + 1.0) * 127.5).round() as u8,
                    ((v.y + 1.0) * 127.5).round() as u8,
                    ((v.z + 1.0) * 127.5).round() as u8,
                ],
            );
        }
    }
    img
}

/// Panorama with a latitude/longitude checker over a direction gradient;
/// busier than `gradient_pano`, useful for eyeballing resampling output.
pub fn checker_pano(width: u32, height: u32, cells: u32) -> RasterImage {
    let model = EquirectModel::new(width, height).expect("2:1 panorama");
    let mut img = RasterImage::new(width, height, 3).unwrap();
    for y in 0..height {
        for x in 0..width {
            let d = model.unproject(x as f64 + 0.5, y as f64 + 0.5).unwrap();
            let v = d.vector();
            let cu = (x * cells / width) % 2;
            let cv = (y * cells.max(2) / (2 * height)) % 2;
            let base = if cu == cv { 200.0 } else { 60.0 };
            img.set_pixel(
                x,
                y,
                &[
                    (base * 0.5 + (v.x + 1.0) * 60.0) as u8,
                    (base * 0.5 + (v.y + 1.0) * 60.0) as u8,
                    (base * 0.5 + (v.z + 1.0) * 60.0) as u8,
                ],
            );
        }
    }
    img
}

pub fn constant_pano(width: u32, height: u32, rgb: [u8; 3]) -> RasterImage {
    constant_image(width, height, rgb)
}

pub fn constant_image(width: u32, height: u32, rgb: [u8; 3]) -> RasterImage {
    let mut img = RasterImage::new(width, height, 3).unwrap();
    for y in 0..height {
        for x in 0..width {
            img.set_pixel(x, y, &rgb);
        }
    }
    img
}

/// Depth of an axis-aligned box room `[-hx,hx] x [-hy,hy] x [-hz,hz]`
/// (world frame) seen by an equirect camera at `pose`. The camera must sit
/// strictly inside the room.
pub fn room_depth(model: &EquirectModel, pose: &RigidTransform, half: (f64, f64, f64)) -> DepthMap {
    let mut out = DepthMap::new(model.width, model.height).unwrap();
    let o = pose.translation;
    assert!(
        o.x.abs() < half.0 && o.y.abs() < half.1 && o.z.abs() < half.2,
        "camera must be inside the room"
    );
    for y in 0..model.height {
        for x in 0..model.width {
            let b = model.unproject(x as f64 + 0.5, y as f64 + 0.5).unwrap();
            let d = pose.rotation.apply(b.vector());
            let t = ray_box_exit(&o, &d, half);
            out.set(x, y, t as f32);
        }
    }
    out
}

/// Distance along `d` (unit) from `o` (inside the box) to the box surface.
pub fn ray_box_exit(o: &Vector3<f64>, d: &Vector3<f64>, half: (f64, f64, f64)) -> f64 {
    let h = [half.0, half.1, half.2];
    let mut t = f64::INFINITY;
    for i in 0..3 {
        if d[i].abs() > 1e-15 {
            let wall = if d[i] > 0.0 { h[i] } else { -h[i] };
            let ti = (wall - o[i]) / d[i];
            if ti > 0.0 {
                t = t.min(ti);
            }
        }
    }
    t
}

/// A randomized spherical-PnP problem: world points, ground-truth pose,
/// and bearing observations with optional noise and outlier contamination.
pub struct PnpInstance {
    pub correspondences: Vec<Correspondence>,
    pub gt: RigidTransform,
    pub scene_diameter: f64,
}

/// Builds an instance with `n` points in a box of the given half-extent
/// around the origin, a camera within half that box, bearings perturbed by
/// a Gaussian angle of standard deviation `noise_rad`, and the first
/// `floor(outlier_frac * n)` observations replaced by random directions.
pub fn pnp_instance(seed: u64, n: usize, outlier_frac: f64, noise_rad: f64) -> PnpInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ext = 5.0;
    let gt = random_pose(&mut rng, ext / 2.0);
    let pixel_model = EquirectModel::new(1228, 614).unwrap();

    let mut correspondences = Vec::with_capacity(n);
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    let n_outliers = (outlier_frac * n as f64).floor() as usize;
    let mut made = 0;
    while made < n {
        let x = Vector3::new(
            rng.random_range(-ext..ext),
            rng.random_range(-ext..ext),
            rng.random_range(-ext..ext),
        );
        let cam = gt.apply_inverse(&x);
        if cam.norm() < 0.5 {
            continue; // too close to the camera center for a stable bearing
        }
        let mut bearing = Bearing::new(cam).unwrap();
        if made < n_outliers {
            bearing = random_bearing(&mut rng);
        } else if noise_rad > 0.0 {
            bearing = perturb_bearing(&mut rng, &bearing, noise_rad);
        }
        lo = lo.inf(&x);
        hi = hi.sup(&x);
        let q_px = pixel_model.project(&bearing);
        correspondences.push(Correspondence::new(q_px, (0.0, 0.0), x, bearing));
        made += 1;
    }
    PnpInstance { correspondences, gt, scene_diameter: (hi - lo).norm() }
}

pub fn random_pose(rng: &mut impl Rng, t_extent: f64) -> RigidTransform {
    let axis = random_unit(rng);
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    let t = Vector3::new(
        rng.random_range(-t_extent..t_extent),
        rng.random_range(-t_extent..t_extent),
        rng.random_range(-t_extent..t_extent),
    );
    RigidTransform::new(Rotation::exp(axis * angle), t)
}

pub fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n < 1.0 {
            return v / n;
        }
    }
}

pub fn random_bearing(rng: &mut impl Rng) -> Bearing {
    Bearing::new(random_unit(rng)).unwrap()
}

/// Rotates a bearing by a random axis (orthogonal to it) and a Gaussian
/// angle with standard deviation `sigma_rad`.
pub fn perturb_bearing(rng: &mut impl Rng, b: &Bearing, sigma_rad: f64) -> Bearing {
    let angle = gaussian(rng) * sigma_rad;
    let helper = random_unit(rng);
    let axis = b.vector().cross(&helper);
    if axis.norm() < 1e-9 {
        return *b;
    }
    let rot = Rotation::exp(axis.normalize() * angle);
    Bearing::new(rot.apply(b.vector())).unwrap()
}

/// Standard normal via Box-Muller.
pub fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Simulation settings for multi-pose plane scenes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaScenario {
    pub planes: usize,
    pub poses: usize,
    pub noise_rot_deg: f64,
    pub noise_t_m: f64,
    pub seed: u64,
}

impl Default for BaScenario {
    fn default() -> Self {
        BaScenario { planes: 5, poses: 10, noise_rot_deg: 1.0, noise_t_m: 0.05, seed: 0 }
    }
}

/// A simulated mapping run: per-frame sensor clouds sampled from up to six
/// room planes (floor, four walls, ceiling), the ground-truth trajectory,
/// and a noise-perturbed initialization (first pose left exact, it anchors
/// the gauge).
pub struct BaScene {
    pub frames: Vec<FramedCloud>,
    pub gt_poses: Vec<RigidTransform>,
    pub init_poses: Vec<RigidTransform>,
}

pub fn ba_scene(sc: &BaScenario) -> BaScene {
    assert!(sc.poses >= 2, "need at least two poses");
    assert!((1..=6).contains(&sc.planes), "plane count must be in 1..=6");
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let half = 5.0;
    // plane list: (normal axis, offset, fixed coordinate)
    let planes: Vec<(usize, f64)> = [(2, 0.0), (0, -half), (0, half), (1, -half), (1, half), (2, 2.0 * half)]
        [..sc.planes]
        .to_vec();

    let points_per_plane = 120;
    let side = Uniform::new(-half, half).unwrap();

    let mut gt_poses = Vec::with_capacity(sc.poses);
    for k in 0..sc.poses {
        let s = k as f64 / sc.poses as f64;
        let angle = s * std::f64::consts::TAU;
        let t = Vector3::new(2.0 * angle.cos(), 2.0 * angle.sin(), 1.0 + 0.2 * s);
        let rot = Rotation::exp(Vector3::new(0.0, 0.0, angle * 0.3))
            .compose(&Rotation::exp(Vector3::new(0.05 * angle.sin(), 0.05 * angle.cos(), 0.0)));
        gt_poses.push(RigidTransform::new(rot, t));
    }

    let mut frames = Vec::with_capacity(sc.poses);
    for (k, pose) in gt_poses.iter().enumerate() {
        let mut pts = Vec::with_capacity(planes.len() * points_per_plane);
        for &(axis, offset) in &planes {
            for _ in 0..points_per_plane {
                let mut p = Vector3::new(side.sample(&mut rng), side.sample(&mut rng), side.sample(&mut rng));
                p[axis] = offset;
                if axis != 2 {
                    p.z = (p.z + half) * 0.8; // keep wall points between floor and ceiling
                }
                pts.push(pose.apply_inverse(&p));
            }
        }
        frames.push(FramedCloud::new(k, pts).unwrap());
    }

    let rot_sigma = sc.noise_rot_deg.to_radians();
    let mut init_poses = gt_poses.clone();
    for pose in init_poses.iter_mut().skip(1) {
        let dr = Rotation::exp(random_unit(&mut rng) * gaussian(&mut rng).abs() * rot_sigma);
        let dt = random_unit(&mut rng) * gaussian(&mut rng).abs() * sc.noise_t_m;
        *pose = RigidTransform::new(dr.compose(&pose.rotation), pose.translation + dt);
    }
    BaScene { frames, gt_poses, init_poses }
}

/// Uniform random cloud in a box, for registration tests.
pub fn random_cloud(seed: u64, n: usize, half_extent: f64) -> Vec<Vector3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            Vector3::new(
                rng.random_range(-half_extent..half_extent),
                rng.random_range(-half_extent..half_extent),
                rng.random_range(-half_extent..half_extent),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_pano_is_smooth_across_the_seam() {
        // the wrap step may not exceed the largest interior column step
        let img = gradient_pano(128, 64);
        for y in 0..64 {
            let mut interior = 0i16;
            for x in 0..126 {
                let a = img.pixel(x, y);
                let b = img.pixel(x + 1, y);
                for c in 0..3 {
                    interior = interior.max((a[c] as i16 - b[c] as i16).abs());
                }
            }
            let a = img.pixel(0, y);
            let b = img.pixel(127, y);
            for c in 0..3 {
                assert!((a[c] as i16 - b[c] as i16).abs() <= interior + 1, "seam jump at row {y}");
            }
        }
    }

    #[test]
    fn room_depth_matches_analytic_walls() {
        let model = EquirectModel::new(64, 32).unwrap();
        let pose = RigidTransform::identity();
        let depth = room_depth(&model, &pose, (2.0, 3.0, 4.0));
        // forward ray exits through z = +4
        let d = depth.get(32, 16);
        assert!((d - 4.0).abs() < 0.05);
        // straight up (-y) exits through y = -3
        let d = depth.get(32, 0);
        assert!((d - 3.0).abs() < 0.05);
    }

    #[test]
    fn pnp_instance_bearings_match_geometry() {
        let inst = pnp_instance(3, 40, 0.0, 0.0);
        for c in &inst.correspondences {
            let cam = inst.gt.apply_inverse(&c.point);
            assert!(c.bearing.angle_to(&Bearing::new(cam).unwrap()) < 1e-12);
        }
        assert!(inst.scene_diameter > 5.0);
    }

    #[test]
    fn ba_scene_points_lie_on_planes() {
        let scene = ba_scene(&BaScenario { planes: 5, poses: 3, noise_rot_deg: 0.0, noise_t_m: 0.0, seed: 1 });
        for (frame, pose) in scene.frames.iter().zip(&scene.gt_poses) {
            for p in &frame.points {
                let w = pose.apply(p);
                let on_floor = w.z.abs() < 1e-9;
                let on_wall = (w.x.abs() - 5.0).abs() < 1e-9 || (w.y.abs() - 5.0).abs() < 1e-9;
                assert!(on_floor || on_wall);
            }
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let a = pnp_instance(9, 10, 0.3, 0.01);
        let b = pnp_instance(9, 10, 0.3, 0.01);
        assert_eq!(a.gt.translation, b.gt.translation);
        for (x, y) in a.correspondences.iter().zip(&b.correspondences) {
            assert_eq!(x.point, y.point);
            assert_eq!(x.bearing.vector(), y.bearing.vector());
        }
    }
}
