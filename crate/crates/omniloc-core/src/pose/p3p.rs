//! Minimal three-point absolute pose on bearing vectors.
//!
//! Solves for poses satisfying `lambda_i * b_i = R * x_i + t` with
//! `lambda_i > 0`, given three world points `x_i` and three unit bearings
//! `b_i`. Works on the full sphere: bearings may point anywhere, which is
//! what panoramic and >180-degree fisheye queries need. The reduction
//! follows the lambda-twist formulation: eliminate the pose, intersect two
//! depth quadrics through a pencil parameter found as a cubic root, and
//! recover each depth triple from a quadratic.

use crate::camera::Bearing;
use crate::geom::{RigidTransform, Rotation};
use nalgebra::{Matrix3, Vector3};

/// One 2D-3D observation for the minimal solver.
#[derive(Debug, Clone, Copy)]
pub struct P3pObservation {
    pub bearing: Bearing,
    pub point: Vector3<f64>,
}

/// Returns up to four camera-to-world pose candidates mapping the three
/// world points onto the three bearings. Degenerate inputs (collinear
/// points, repeated bearings) give an empty set.
pub fn solve_p3p_bearings(obs: &[P3pObservation; 3]) -> Vec<RigidTransform> {
    let x1 = obs[0].point;
    let x2 = obs[1].point;
    let x3 = obs[2].point;
    let y1 = *obs[0].bearing.vector();
    let y2 = *obs[1].bearing.vector();
    let y3 = *obs[2].bearing.vector();

    let d12 = x1 - x2;
    let d13 = x1 - x3;
    let d23 = x2 - x3;
    let d12xd13 = d12.cross(&d13);

    let a12 = d12.norm_squared();
    let a13 = d13.norm_squared();
    let a23 = d23.norm_squared();

    // world-point side degenerate: collinear or repeated points
    let scale = a12.max(a13).max(a23);
    if scale <= 0.0 || d12xd13.norm_squared() < 1e-20 * scale * scale {
        return Vec::new();
    }

    let c12 = y1.dot(&y2);
    let c23 = y2.dot(&y3);
    let c31 = y3.dot(&y1);
    let blob = c12 * c23 * c31 - 1.0;

    let s12_sqr = 1.0 - c12 * c12;
    let s23_sqr = 1.0 - c23 * c23;
    let s31_sqr = 1.0 - c31 * c31;

    let b12 = -2.0 * c12;
    let b13 = -2.0 * c31;
    let b23 = -2.0 * c23;

    // cubic for the pencil parameter g
    let p3 = a13 * (a23 * s31_sqr - a13 * s23_sqr);
    let p2 = 2.0 * blob * a23 * a13 + a13 * (2.0 * a12 + a13) * s23_sqr + a23 * (a23 - a12) * s31_sqr;
    let p1 =
        a23 * (a13 - a23) * s12_sqr - a12 * a12 * s23_sqr - 2.0 * a12 * (blob * a23 + a13 * s23_sqr);
    let p0 = a12 * (a12 * s23_sqr - a23 * s12_sqr);

    if p3.abs() < 1e-14 * scale * scale * scale {
        return Vec::new(); // bearing geometry too flat for the pencil reduction
    }
    let g = stable_cubic_root(p2 / p3, p1 / p3, p0 / p3);
    if !g.is_finite() {
        return Vec::new();
    }

    // singular member of the quadric pencil
    let d0_01 = -a23 * c12;
    let d0_02 = a23 * c31 * g;
    let d0_12 = -c23 * (a13 * g - a12);
    let d0 = Matrix3::new(
        a23 * (1.0 - g),
        d0_01,
        d0_02,
        d0_01,
        a23 - a12 + a13 * g,
        d0_12,
        d0_02,
        d0_12,
        g * (a13 - a23) - a12,
    );

    let Some((sigma1, sigma2, e)) = eigen_rank2_symmetric(&d0) else {
        return Vec::new();
    };
    let ratio = (-sigma2 / sigma1).max(0.0).sqrt();

    let mut lambdas: Vec<Vector3<f64>> = Vec::with_capacity(4);
    for s in [ratio, -ratio] {
        // depth-plane parametrization lambda1 = w0*lambda2 + w1*lambda3
        let den = s * e[(0, 1)] - e[(0, 0)];
        if den.abs() < 1e-14 {
            continue;
        }
        let w2 = 1.0 / den;
        let w0 = w2 * (e[(1, 0)] - s * e[(1, 1)]);
        let w1 = w2 * (e[(2, 0)] - s * e[(2, 1)]);

        let den = (a13 - a12) * w1 * w1 - a12 * b13 * w1 - a12;
        if den.abs() < 1e-20 * scale {
            continue;
        }
        let qb = ((a13 * b12 * w1 - a12 * b13 * w0 - 2.0 * w0 * w1 * (a12 - a13))) / den;
        let qc = ((a13 - a12) * w0 * w0 + a13 * b12 * w0 + a13) / den;
        let disc = qb * qb - 4.0 * qc;
        if disc < 0.0 {
            continue;
        }
        for tau in quadratic_roots(qb, qc, disc) {
            if tau <= 0.0 {
                continue;
            }
            let d = a23 / (tau * (b23 + tau) + 1.0);
            if d <= 0.0 {
                continue;
            }
            let l2 = d.sqrt();
            let l3 = tau * l2;
            let l1 = w0 * l2 + w1 * l3;
            if l1 >= 0.0 {
                lambdas.push(Vector3::new(l1, l2, l3));
            }
        }
    }

    let xm = Matrix3::from_columns(&[d12, d13, d12xd13]);
    let Some(xm_inv) = xm.try_inverse() else {
        return Vec::new();
    };

    let mut poses = Vec::with_capacity(lambdas.len());
    for l in lambdas {
        let l = refine_lambdas(l, a12, a13, a23, b12, b13, b23);
        let z1 = l.x * y1;
        let z2 = l.y * y2;
        let z3 = l.z * y3;
        let e12 = z1 - z2;
        let e13 = z1 - z3;
        let ym = Matrix3::from_columns(&[e12, e13, e12.cross(&e13)]);
        let r = ym * xm_inv; // world-to-camera
        let t = z1 - r * x1;
        // exact inputs give an exactly orthonormal product; renormalize to
        // wash out conditioning of the matrix inversion
        let rot = nearest_rotation(&r);
        let w2c = RigidTransform::new(rot, t);
        poses.push(w2c.inverse());
    }
    poses
}

/// Newton iteration on the depth constraint system, as in the original
/// solver; two or three steps land at machine precision.
fn refine_lambdas(l: Vector3<f64>, a12: f64, a13: f64, a23: f64, b12: f64, b13: f64, b23: f64) -> Vector3<f64> {
    let residual = |l: &Vector3<f64>| {
        Vector3::new(
            l.x * l.x + l.y * l.y + b12 * l.x * l.y - a12,
            l.x * l.x + l.z * l.z + b13 * l.x * l.z - a13,
            l.y * l.y + l.z * l.z + b23 * l.y * l.z - a23,
        )
    };
    let mut cur = l;
    let mut res = residual(&cur);
    for _ in 0..6 {
        if res.abs().sum() < 1e-13 * (a12 + a13 + a23) {
            break;
        }
        let j = Matrix3::new(
            2.0 * cur.x + b12 * cur.y,
            2.0 * cur.y + b12 * cur.x,
            0.0,
            2.0 * cur.x + b13 * cur.z,
            0.0,
            2.0 * cur.z + b13 * cur.x,
            0.0,
            2.0 * cur.y + b23 * cur.z,
            2.0 * cur.z + b23 * cur.y,
        );
        let Some(j_inv) = j.try_inverse() else { break };
        let next = cur - j_inv * res;
        let next_res = residual(&next);
        if next_res.abs().sum() >= res.abs().sum() {
            break;
        }
        cur = next;
        res = next_res;
    }
    cur
}

/// One real root of `x^3 + b x^2 + c x + d`, started where the derivative
/// is largest so Newton converges fast and lands on a well-separated root.
fn stable_cubic_root(b: f64, c: f64, d: f64) -> f64 {
    let mut r;
    if b * b >= 3.0 * c {
        // two stationary points: expand around the one whose lobe crosses zero
        let v = (b * b - 3.0 * c).sqrt();
        let t1 = (-b - v) / 3.0;
        let k1 = ((t1 + b) * t1 + c) * t1 + d;
        if k1 > 0.0 {
            r = t1 - (-k1 / (3.0 * t1 + b)).max(0.0).sqrt();
        } else {
            let t2 = (-b + v) / 3.0;
            let k2 = ((t2 + b) * t2 + c) * t2 + d;
            r = t2 + (-k2 / (3.0 * t2 + b)).max(0.0).sqrt();
        }
    } else {
        // strictly monotone
        r = -b / 3.0;
        if ((3.0 * r + 2.0 * b) * r + c).abs() < 1e-6 {
            r += 1.0;
        }
    }
    for _ in 0..60 {
        let fx = ((r + b) * r + c) * r + d;
        let fpx = (3.0 * r + 2.0 * b) * r + c;
        if fpx == 0.0 {
            break;
        }
        let step = fx / fpx;
        r -= step;
        if step.abs() < 1e-16 * (1.0 + r.abs()) {
            break;
        }
    }
    r
}

/// Roots of `x^2 + b x + c` with `disc = b^2 - 4c >= 0`, computed the
/// cancellation-safe way.
fn quadratic_roots(b: f64, c: f64, disc: f64) -> [f64; 2] {
    let y = disc.sqrt();
    if b < 0.0 {
        [0.5 * (-b + y), 2.0 * c / (-b + y)]
    } else if y > 0.0 {
        [2.0 * c / (-b - y), 0.5 * (-b - y)]
    } else {
        [0.5 * -b, 0.5 * -b]
    }
}

/// Eigen pairs of a symmetric matrix known to be singular: returns the two
/// nonzero eigenvalues (|sigma1| >= |sigma2|) and a basis matrix whose
/// columns are their eigenvectors followed by the null vector.
fn eigen_rank2_symmetric(m: &Matrix3<f64>) -> Option<(f64, f64, Matrix3<f64>)> {
    let null = robust_null_vector(m)?;
    // remaining eigenvalues solve r^2 - tr r + (sum of principal 2x2 minors) = 0
    let tr = m.trace();
    let minors = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)] + m[(0, 0)] * m[(2, 2)]
        - m[(0, 2)] * m[(2, 0)]
        + m[(1, 1)] * m[(2, 2)]
        - m[(1, 2)] * m[(2, 1)];
    let disc = tr * tr - 4.0 * minors;
    if disc < 0.0 {
        return None;
    }
    let [r1, r2] = quadratic_roots(-tr, minors, disc);
    let (mut e1, mut e2) = (r1, r2);
    if e1.abs() < e2.abs() {
        std::mem::swap(&mut e1, &mut e2);
    }
    let v1 = symmetric_eigenvector(m, e1, &null)?;
    let v2 = null.cross(&v1); // symmetric => eigenvectors orthogonal
    Some((e1, e2, Matrix3::from_columns(&[v1, v2, null])))
}

/// Unit null vector of a rank-2 symmetric matrix via the largest column
/// cross product.
fn robust_null_vector(m: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let c0 = m.column(0).into_owned();
    let c1 = m.column(1).into_owned();
    let c2 = m.column(2).into_owned();
    let candidates = [c0.cross(&c1), c0.cross(&c2), c1.cross(&c2)];
    let best = candidates
        .iter()
        .max_by(|a, b| a.norm_squared().total_cmp(&b.norm_squared()))?;
    let n = best.norm();
    if n < 1e-18 {
        return None; // rank < 2: bearings degenerate
    }
    Some(best / n)
}

/// Unit eigenvector for eigenvalue `e`, as the most stable cross product of
/// rows of `m - e I`; falls back to completing an orthonormal basis when
/// the shifted matrix collapses.
fn symmetric_eigenvector(m: &Matrix3<f64>, e: f64, null: &Vector3<f64>) -> Option<Vector3<f64>> {
    let shifted = m - Matrix3::identity() * e;
    let r0 = shifted.row(0).transpose();
    let r1 = shifted.row(1).transpose();
    let r2 = shifted.row(2).transpose();
    let candidates = [r0.cross(&r1), r0.cross(&r2), r1.cross(&r2)];
    let best = candidates
        .iter()
        .max_by(|a, b| a.norm_squared().total_cmp(&b.norm_squared()))?;
    let n = best.norm();
    if n > 1e-12 {
        return Some(best / n);
    }
    // e is (numerically) a repeated eigenvalue: any direction orthogonal to
    // the null vector works
    let helper = if null.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    Some(null.cross(&helper).normalize())
}

/// Orthonormal projection of a near-rotation matrix.
pub(crate) fn nearest_rotation(m: &Matrix3<f64>) -> Rotation {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd of 3x3");
    let vt = svd.v_t.expect("svd of 3x3");
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * vt;
    }
    Rotation::from_matrix_unchecked(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn forward_instance(seed: u64) -> ([P3pObservation; 3], RigidTransform) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = synth::random_pose(&mut rng, 2.0);
        loop {
            let mut obs = Vec::new();
            while obs.len() < 3 {
                let x = Vector3::new(
                    4.0 * (synth::gaussian(&mut rng)),
                    4.0 * (synth::gaussian(&mut rng)),
                    4.0 * (synth::gaussian(&mut rng)),
                );
                let cam = gt.apply_inverse(&x);
                if cam.norm() < 0.5 {
                    continue;
                }
                obs.push(P3pObservation { bearing: Bearing::new(cam).unwrap(), point: x });
            }
            // keep the triangle and the bearing triple well separated
            let d12 = obs[0].point - obs[1].point;
            let d13 = obs[0].point - obs[2].point;
            let flat = d12.cross(&d13).norm() < 1.0;
            let close_bearings = obs
                .iter()
                .enumerate()
                .any(|(i, a)| obs[i + 1..].iter().any(|b| a.bearing.angle_to(&b.bearing) < 0.1));
            if !flat && !close_bearings {
                return (obs.try_into().unwrap(), gt);
            }
        }
    }

    fn best_candidate_error(cands: &[RigidTransform], gt: &RigidTransform) -> (f64, f64) {
        cands
            .iter()
            .map(|c| (c.rotation.angle_to(&gt.rotation), (c.translation - gt.translation).norm()))
            .min_by(|a, b| (a.0 + a.1).total_cmp(&(b.0 + b.1)))
            .expect("at least one candidate")
    }

    #[test]
    fn recovers_synthesized_poses() {
        for seed in 0..200 {
            let (obs, gt) = forward_instance(seed);
            let cands = solve_p3p_bearings(&obs);
            assert!(!cands.is_empty(), "no candidates at seed {seed}");
            let (rot_err, t_err) = best_candidate_error(&cands, &gt);
            assert!(
                rot_err < 1e-8 && t_err < 1e-8,
                "seed {seed}: rot {rot_err:.2e}, trans {t_err:.2e}"
            );
        }
    }

    #[test]
    fn candidates_satisfy_angular_residual() {
        for seed in 0..50 {
            let (obs, _) = forward_instance(seed);
            for cand in solve_p3p_bearings(&obs) {
                for o in &obs {
                    let in_cam = cand.apply_inverse(&o.point);
                    let res = o.bearing.angle_to(&Bearing::new(in_cam).unwrap());
                    assert!(res < 1e-9, "seed {seed}: residual {res:.2e}");
                }
            }
        }
    }

    #[test]
    fn works_with_bearings_behind_the_camera() {
        // points all around the camera, as a panoramic query sees them
        let gt = RigidTransform::new(Rotation::yaw(0.8), Vector3::new(0.5, -0.2, 1.0));
        let pts = [
            Vector3::new(3.0, 0.2, 0.1),
            Vector3::new(-2.5, -0.4, 0.6),
            Vector3::new(0.3, 0.1, -3.0),
        ];
        let obs: Vec<P3pObservation> = pts
            .iter()
            .map(|x| P3pObservation { bearing: Bearing::new(gt.apply_inverse(x)).unwrap(), point: *x })
            .collect();
        let cands = solve_p3p_bearings(&obs.try_into().unwrap());
        let (rot_err, t_err) = best_candidate_error(&cands, &gt);
        assert!(rot_err < 1e-8 && t_err < 1e-8);
    }

    #[test]
    fn collinear_points_yield_nothing() {
        let b = Bearing::new(Vector3::z()).unwrap();
        let obs = [
            P3pObservation { bearing: b, point: Vector3::new(0.0, 0.0, 1.0) },
            P3pObservation { bearing: b, point: Vector3::new(0.0, 0.0, 2.0) },
            P3pObservation { bearing: b, point: Vector3::new(0.0, 0.0, 3.0) },
        ];
        assert!(solve_p3p_bearings(&obs).is_empty());
    }

    #[test]
    fn cyclic_permutation_gives_the_same_solution_set() {
        let (obs, _) = forward_instance(31);
        let a = solve_p3p_bearings(&obs);
        let rotated = [obs[1], obs[2], obs[0]];
        let b = solve_p3p_bearings(&rotated);
        assert_eq!(a.len(), b.len());
        for cand in &a {
            let found = b.iter().any(|other| {
                cand.rotation.angle_to(&other.rotation) < 1e-5
                    && (cand.translation - other.translation).norm() < 1e-5
            });
            assert!(found, "candidate missing after permutation");
        }
    }

    #[test]
    fn cubic_root_is_a_root() {
        for (b, c, d) in [(0.3, -2.0, 1.0), (-5.0, 1.0, 14.0), (2.0, 2.0, 2.0), (0.0, -1.0, 0.0)] {
            let r = stable_cubic_root(b, c, d);
            let fx = ((r + b) * r + c) * r + d;
            assert!(fx.abs() < 1e-9, "residual {fx:.2e} at ({b},{c},{d})");
        }
    }
}
