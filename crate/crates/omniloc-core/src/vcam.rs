//! Virtual-camera resampling between 2:1 equirectangular panoramas and
//! perspective / fisheye views.
//!
//! `extract_virtual` renders a lower-FoV view out of a panorama (the
//! rectification direction); `remap_to_equirect` pastes a lower-FoV image
//! back onto a panoramic canvas, leaving unseen pixels black and masked
//! out. The rotation argument maps panorama-frame directions into the
//! virtual camera frame: extraction samples the panorama at `R^T * d_cam`,
//! remapping samples the source image at `R * d_pano`.

use crate::camera::{CameraError, CameraModel, EquirectModel};
use crate::geom::Rotation;
use crate::raster::{DepthMap, RasterError, RasterImage, SampleMode};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VcamError {
    #[error("expected a 2:1 equirectangular raster, got {width}x{height}")]
    NotEquirect { width: u32, height: u32 },
    #[error("empty sampling range [{0}, {1}]")]
    EmptyRange(f64, f64),
    #[error("face size must be positive")]
    ZeroFace,
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// Equirect canvas plus a per-pixel coverage mask (true = filled from the
/// source image; false pixels are exactly the black-border pixels).
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedEquirect {
    pub image: RasterImage,
    mask: Vec<bool>,
}

impl MaskedEquirect {
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn covered(&self, x: u32, y: u32) -> bool {
        self.mask[y as usize * self.image.width as usize + x as usize]
    }

    /// Fraction of canvas pixels covered by the source.
    pub fn coverage_fraction(&self) -> f64 {
        let n = self.mask.iter().filter(|&&m| m).count();
        n as f64 / self.mask.len() as f64
    }
}

fn equirect_of(img_w: u32, img_h: u32) -> Result<EquirectModel, VcamError> {
    EquirectModel::new(img_w, img_h).map_err(|_| VcamError::NotEquirect { width: img_w, height: img_h })
}

/// Renders the view of `target` oriented by `rot` out of a panorama.
/// Every target pixel is defined; target pixels outside the model's own
/// unprojection domain (possible for wide double-sphere setups) stay black.
pub fn extract_virtual(
    pano: &RasterImage,
    target: &CameraModel,
    rot: &Rotation,
    mode: SampleMode,
) -> Result<RasterImage, VcamError> {
    let pano_model = equirect_of(pano.width, pano.height)?;
    let mut out = RasterImage::new(target.width(), target.height(), pano.channels)?;
    let mut px = [0u8; 3];
    for y in 0..target.height() {
        for x in 0..target.width() {
            let Ok(d_cam) = target.unproject(x as f64 + 0.5, y as f64 + 0.5) else {
                continue;
            };
            let d_pano = rot.apply_inverse(d_cam.vector());
            let (u, v) = pano_model.project(&crate::camera::Bearing::new(d_pano).expect("rotated unit vector"));
            let s = pano.sample_wrapped(u, v, mode);
            for c in 0..pano.channels as usize {
                px[c] = s[c].round().clamp(0.0, 255.0) as u8;
            }
            out.set_pixel(x, y, &px[..pano.channels as usize]);
        }
    }
    Ok(out)
}

/// Pastes a view taken by `source` (oriented by `rot`) onto an equirect
/// canvas. Canvas pixels whose bearing is invisible to the source camera
/// stay black with `mask = false`.
pub fn remap_to_equirect(
    img: &RasterImage,
    source: &CameraModel,
    rot: &Rotation,
    canvas: (u32, u32),
    mode: SampleMode,
) -> Result<MaskedEquirect, VcamError> {
    let canvas_model = equirect_of(canvas.0, canvas.1)?;
    let source_is_equirect = matches!(source, CameraModel::Equirect(_));
    let mut out = RasterImage::new(canvas.0, canvas.1, img.channels)?;
    let mut mask = vec![false; canvas.0 as usize * canvas.1 as usize];
    let mut px = [0u8; 3];
    for y in 0..canvas.1 {
        for x in 0..canvas.0 {
            let d_pano = canvas_model
                .unproject(x as f64 + 0.5, y as f64 + 0.5)
                .expect("canvas pixel centers are inside the rectangle");
            let d_cam = rot.apply(d_pano.vector());
            let Some((u, v)) = source.project(&crate::camera::Bearing::new(d_cam).expect("rotated unit vector"))
            else {
                continue;
            };
            let s = if source_is_equirect {
                img.sample_wrapped(u, v, mode)
            } else {
                img.sample(u, v, mode)
            };
            for c in 0..img.channels as usize {
                px[c] = s[c].round().clamp(0.0, 255.0) as u8;
            }
            out.set_pixel(x, y, &px[..img.channels as usize]);
            mask[y as usize * canvas.0 as usize + x as usize] = true;
        }
    }
    Ok(MaskedEquirect { image: out, mask })
}

/// Cube-map face identifiers, in extraction order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CubeFace {
    Front,
    Left,
    Right,
    Back,
    Up,
    Down,
}

impl CubeFace {
    pub fn as_str(&self) -> &'static str {
        match self {
            CubeFace::Front => "front",
            CubeFace::Left => "left",
            CubeFace::Right => "right",
            CubeFace::Back => "back",
            CubeFace::Up => "up",
            CubeFace::Down => "down",
        }
    }

    /// Rotation handed to `extract_virtual` for this face.
    pub fn rotation(&self) -> Rotation {
        use std::f64::consts::FRAC_PI_2;
        use std::f64::consts::PI;
        match self {
            CubeFace::Front => Rotation::identity(),
            CubeFace::Left => Rotation::yaw(FRAC_PI_2),
            CubeFace::Right => Rotation::yaw(-FRAC_PI_2),
            CubeFace::Back => Rotation::yaw(PI),
            CubeFace::Up => Rotation::pitch(-FRAC_PI_2),
            CubeFace::Down => Rotation::pitch(FRAC_PI_2),
        }
    }
}

/// 90-degree pinhole faces of the cube map. The bottom face is skipped
/// unless `include_bottom` is set; tripod gear dominates it in practice.
pub fn cubemap_faces(
    pano: &RasterImage,
    face_px: u32,
    include_bottom: bool,
) -> Result<Vec<(CubeFace, Rotation, RasterImage)>, VcamError> {
    if face_px == 0 {
        return Err(VcamError::ZeroFace);
    }
    let cam = CameraModel::Pinhole(crate::camera::pinhole_from_fov(
        face_px,
        face_px,
        std::f64::consts::FRAC_PI_2,
    )?);
    let mut faces = vec![CubeFace::Front, CubeFace::Left, CubeFace::Right, CubeFace::Back, CubeFace::Up];
    if include_bottom {
        faces.push(CubeFace::Down);
    }
    faces
        .into_iter()
        .map(|f| {
            let rot = f.rotation();
            let img = extract_virtual(pano, &cam, &rot, SampleMode::Bilinear)?;
            Ok((f, rot, img))
        })
        .collect()
}

/// Deterministic random view rotation: yaw about y, then pitch about x,
/// then roll about z, each uniform on its (closed-from-below) range.
pub fn sample_rotation(
    seed: u64,
    yaw_range: (f64, f64),
    pitch_range: (f64, f64),
    roll_range: (f64, f64),
) -> Result<Rotation, VcamError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |lo: f64, hi: f64| -> Result<f64, VcamError> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(VcamError::EmptyRange(lo, hi));
        }
        if lo == hi {
            return Ok(lo);
        }
        let u = Uniform::new(lo, hi).map_err(|_| VcamError::EmptyRange(lo, hi))?;
        Ok(u.sample(&mut rng))
    };
    let yaw = draw(yaw_range.0, yaw_range.1)?;
    let pitch = draw(pitch_range.0, pitch_range.1)?;
    let roll = draw(roll_range.0, roll_range.1)?;
    Ok(Rotation::yaw(yaw).compose(&Rotation::pitch(pitch)).compose(&Rotation::roll(roll)))
}

/// Default view-sampling ranges for augmentation crops: full yaw circle,
/// a little handheld pitch, no roll.
pub fn default_rotation_ranges() -> ((f64, f64), (f64, f64), (f64, f64)) {
    (
        (0.0, std::f64::consts::TAU),
        (-15f64.to_radians(), 15f64.to_radians()),
        (0.0, 0.0),
    )
}

/// Same resampling geometry as `extract_virtual` with nearest sampling.
/// Depth stays meters-along-the-ray, which a pure rotation preserves;
/// target pixels with no valid source depth come back as 0 (invalid).
pub fn warp_depth(depth: &DepthMap, target: &CameraModel, rot: &Rotation) -> Result<DepthMap, VcamError> {
    let pano_model = equirect_of(depth.width, depth.height)?;
    let mut out = DepthMap::new(target.width(), target.height())?;
    for y in 0..target.height() {
        for x in 0..target.width() {
            let Ok(d_cam) = target.unproject(x as f64 + 0.5, y as f64 + 0.5) else {
                continue;
            };
            let d_pano = rot.apply_inverse(d_cam.vector());
            let (u, v) = pano_model.project(&crate::camera::Bearing::new(d_pano).expect("rotated unit vector"));
            if let Some(d) = depth.at(u, v) {
                out.set(x, y, d);
            }
        }
    }
    Ok(out)
}
