//! On-disk formats: images, PFM depth maps, descriptor and point-cloud
//! binaries, pose / match / preset / scenario text files, scene manifests,
//! and the CSV+JSON report twins.
//!
//! Text floats are written with Rust's shortest-round-trip formatting, so
//! repeated runs produce byte-identical files and readers recover exact
//! values.

use crate::camera::{
    double_sphere_from_fov, pinhole_from_fov, CameraError, CameraModel, DoubleSphereModel,
    EquirectModel, PinholeModel,
};
use crate::geom::{GeomError, RigidTransform, Rotation};
use crate::raster::{DepthMap, RasterError, RasterImage};
use crate::retrieval::{GlobalDescriptor, RetrievalError, Vc2Config};
use crate::synth::BaScenario;
use crate::vcam::{cubemap_faces, extract_virtual, VcamError};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}:{line}: {what}")]
    Parse { path: PathBuf, line: usize, what: String },
    #[error("{path}: {what}")]
    Format { path: PathBuf, what: String },
    #[error("{path}: duplicate frame id '{id}'")]
    DuplicateId { path: PathBuf, id: String },
    #[error("manifest references missing file {path}")]
    MissingFile { path: PathBuf },
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Vcam(#[from] VcamError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn ioe(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_owned(), source }
}

fn parse_err(path: &Path, line: usize, what: impl Into<String>) -> IoError {
    IoError::Parse { path: path.to_owned(), line, what: what.into() }
}

fn format_err(path: &Path, what: impl Into<String>) -> IoError {
    IoError::Format { path: path.to_owned(), what: what.into() }
}

// ---------------------------------------------------------------------------
// images

/// Loads a PNG or JPEG. Grayscale files come back single-channel,
/// everything else as RGB.
pub fn load_image(path: &Path) -> Result<RasterImage, IoError> {
    let img = image::open(path).map_err(|source| IoError::Image { path: path.to_owned(), source })?;
    let out = match img {
        image::DynamicImage::ImageLuma8(g) => {
            RasterImage::from_data(g.width(), g.height(), 1, g.into_raw())?
        }
        other => {
            let rgb = other.to_rgb8();
            RasterImage::from_data(rgb.width(), rgb.height(), 3, rgb.into_raw())?
        }
    };
    Ok(out)
}

pub fn save_image(path: &Path, img: &RasterImage) -> Result<(), IoError> {
    let res = match img.channels {
        1 => image::GrayImage::from_raw(img.width, img.height, img.data().to_vec())
            .expect("raster length is validated")
            .save(path),
        _ => image::RgbImage::from_raw(img.width, img.height, img.data().to_vec())
            .expect("raster length is validated")
            .save(path),
    };
    res.map_err(|source| IoError::Image { path: path.to_owned(), source })
}

/// Writes a coverage mask as a 0/255 grayscale PNG.
pub fn save_mask_png(path: &Path, mask: &[bool], width: u32, height: u32) -> Result<(), IoError> {
    let data: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    let img = RasterImage::from_data(width, height, 1, data)?;
    save_image(path, &img)
}

/// The conventional mask filename next to a VC1 output: `x/y.png` becomes
/// `x/y.mask.png`.
pub fn mask_path(image_path: &Path) -> PathBuf {
    let stem = image_path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    image_path.with_file_name(format!("{stem}.mask.png"))
}

// ---------------------------------------------------------------------------
// PFM depth maps

/// Writes a single-channel PFM (`Pf`), negative scale (little-endian),
/// rows bottom-up.
pub fn write_pfm(path: &Path, depth: &DepthMap) -> Result<(), IoError> {
    let mut buf = Vec::with_capacity(32 + depth.data().len() * 4);
    buf.extend_from_slice(format!("Pf\n{} {}\n-1.0\n", depth.width, depth.height).as_bytes());
    for y in (0..depth.height).rev() {
        for x in 0..depth.width {
            buf.extend_from_slice(&depth.get(x, y).to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(ioe(path))
}

pub fn read_pfm(path: &Path) -> Result<DepthMap, IoError> {
    let bytes = fs::read(path).map_err(ioe(path))?;
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String, IoError> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(path, "truncated header"));
        }
        let t = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| format_err(path, "non-UTF8 header"))?
            .to_owned();
        pos += 1; // single whitespace after each token
        Ok(t)
    };
    if token(&bytes)? != "Pf" {
        return Err(format_err(path, "not a grayscale PFM (magic must be 'Pf')"));
    }
    let width: u32 = token(&bytes)?.parse().map_err(|_| format_err(path, "bad width"))?;
    let height: u32 = token(&bytes)?.parse().map_err(|_| format_err(path, "bad height"))?;
    let scale: f64 = token(&bytes)?.parse().map_err(|_| format_err(path, "bad scale"))?;
    let little_endian = scale < 0.0;
    let n = width as usize * height as usize;
    if bytes.len() < pos + 4 * n {
        return Err(format_err(path, format!("expected {n} samples, file too short")));
    }
    let mut data = vec![0f32; n];
    for row in 0..height as usize {
        let y = height as usize - 1 - row; // file rows run bottom-up
        for x in 0..width as usize {
            let o = pos + 4 * (row * width as usize + x);
            let raw: [u8; 4] = bytes[o..o + 4].try_into().expect("bounds checked");
            data[y * width as usize + x] =
                if little_endian { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        }
    }
    Ok(DepthMap::from_data(width, height, data)?)
}

// ---------------------------------------------------------------------------
// descriptor binary (OLDC)

const OLDC_MAGIC: &[u8; 4] = b"OLDC";

pub fn write_descriptors(path: &Path, descriptors: &[GlobalDescriptor]) -> Result<(), IoError> {
    let dim = descriptors.first().map_or(0, |d| d.dim());
    if let Some(bad) = descriptors.iter().find(|d| d.dim() != dim) {
        return Err(format_err(path, format!("descriptor '{}' has dim {}, expected {dim}", bad.id, bad.dim())));
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(OLDC_MAGIC);
    buf.extend_from_slice(&1u32.to_le_bytes());
    buf.extend_from_slice(&(descriptors.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    for d in descriptors {
        let name = d.id.as_bytes();
        let src = d.source_ref.as_deref().unwrap_or("").as_bytes();
        if name.len() > u16::MAX as usize || src.len() > u16::MAX as usize {
            return Err(format_err(path, format!("name too long for record '{}'", d.id)));
        }
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        buf.extend_from_slice(&(src.len() as u16).to_le_bytes());
        buf.extend_from_slice(src);
        for &x in d.vector() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(ioe(path))
}

pub fn read_descriptors(path: &Path) -> Result<Vec<GlobalDescriptor>, IoError> {
    let bytes = fs::read(path).map_err(ioe(path))?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], IoError> {
        if *pos + n > bytes.len() {
            return Err(format_err(path, "unexpected end of file"));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 4)? != OLDC_MAGIC {
        return Err(format_err(path, "bad magic, expected OLDC"));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != 1 {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(&mut pos, name_len)?)
            .map_err(|_| format_err(path, "record name is not UTF-8"))?
            .to_owned();
        let src_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let src = std::str::from_utf8(take(&mut pos, src_len)?)
            .map_err(|_| format_err(path, "source ref is not UTF-8"))?
            .to_owned();
        let mut vector = Vec::with_capacity(dim);
        for _ in 0..dim {
            vector.push(f32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()));
        }
        let source_ref = (!src.is_empty()).then_some(src);
        out.push(GlobalDescriptor::new(name, source_ref, vector)?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// pose files

/// One `frame_id tx ty tz qw qx qy qz` per line, camera-to-world, Hamilton
/// quaternion. Blank lines and `#` comments are skipped on read.
pub fn write_pose_file(path: &Path, entries: &[(String, RigidTransform)]) -> Result<(), IoError> {
    let mut s = String::new();
    for (id, pose) in entries {
        let t = pose.translation;
        let [w, x, y, z] = pose.rotation.to_quaternion();
        writeln!(s, "{id} {} {} {} {} {} {} {}", t.x, t.y, t.z, w, x, y, z).expect("string write");
    }
    fs::write(path, s).map_err(ioe(path))
}

pub fn read_pose_file(path: &Path) -> Result<Vec<(String, RigidTransform)>, IoError> {
    let text = fs::read_to_string(path).map_err(ioe(path))?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(parse_err(path, ln + 1, format!("expected 8 fields, got {}", fields.len())));
        }
        let mut nums = [0f64; 7];
        for (slot, f) in nums.iter_mut().zip(&fields[1..]) {
            *slot = f.parse().map_err(|_| parse_err(path, ln + 1, format!("bad number '{f}'")))?;
        }
        let rotation = Rotation::from_quaternion([nums[3], nums[4], nums[5], nums[6]])
            .map_err(|e| parse_err(path, ln + 1, e.to_string()))?;
        out.push((
            fields[0].to_owned(),
            RigidTransform::new(rotation, Vector3::new(nums[0], nums[1], nums[2])),
        ));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// match files

/// Pixel matches between one query image and one panoramic reference.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchFile {
    pub query: String,
    pub reference: String,
    /// Camera preset the query pixels live in.
    pub model: String,
    pub pairs: Vec<((f64, f64), (f64, f64))>,
}

pub fn write_match_file(path: &Path, m: &MatchFile) -> Result<(), IoError> {
    let mut s = format!("# query={} ref={} model={}\n", m.query, m.reference, m.model);
    for &((qu, qv), (ru, rv)) in &m.pairs {
        writeln!(s, "{qu} {qv} {ru} {rv}").expect("string write");
    }
    fs::write(path, s).map_err(ioe(path))
}

pub fn read_match_file(path: &Path) -> Result<MatchFile, IoError> {
    let text = fs::read_to_string(path).map_err(ioe(path))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| format_err(path, "empty match file"))?;
    let header = header.trim();
    if !header.starts_with('#') {
        return Err(parse_err(path, 1, "missing '# query=... ref=... model=...' header"));
    }
    let mut query = None;
    let mut reference = None;
    let mut model = None;
    for tok in header.trim_start_matches('#').split_whitespace() {
        if let Some(v) = tok.strip_prefix("query=") {
            query = Some(v.to_owned());
        } else if let Some(v) = tok.strip_prefix("ref=") {
            reference = Some(v.to_owned());
        } else if let Some(v) = tok.strip_prefix("model=") {
            model = Some(v.to_owned());
        }
    }
    let (Some(query), Some(reference), Some(model)) = (query, reference, model) else {
        return Err(parse_err(path, 1, "header must carry query=, ref= and model="));
    };
    let mut pairs = Vec::new();
    for (ln, line) in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let nums: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
        let nums = nums.map_err(|_| parse_err(path, ln + 1, "bad number"))?;
        if nums.len() != 4 {
            return Err(parse_err(path, ln + 1, format!("expected 4 fields, got {}", nums.len())));
        }
        pairs.push(((nums[0], nums[1]), (nums[2], nums[3])));
    }
    Ok(MatchFile { query, reference, model, pairs })
}

// ---------------------------------------------------------------------------
// point clouds

pub fn write_xyz(path: &Path, points: &[Vector3<f64>]) -> Result<(), IoError> {
    let mut s = String::new();
    for p in points {
        writeln!(s, "{} {} {}", p.x, p.y, p.z).expect("string write");
    }
    fs::write(path, s).map_err(ioe(path))
}

pub fn read_xyz(path: &Path) -> Result<Vec<Vector3<f64>>, IoError> {
    let text = fs::read_to_string(path).map_err(ioe(path))?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let nums: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
        let nums = nums.map_err(|_| parse_err(path, ln + 1, "bad number"))?;
        if nums.len() != 3 {
            return Err(parse_err(path, ln + 1, format!("expected 3 fields, got {}", nums.len())));
        }
        out.push(Vector3::new(nums[0], nums[1], nums[2]));
    }
    Ok(out)
}

const OLPC_MAGIC: &[u8; 4] = b"OLPC";

pub fn write_olpc(path: &Path, points: &[Vector3<f64>]) -> Result<(), IoError> {
    let mut buf = Vec::with_capacity(8 + points.len() * 12);
    buf.extend_from_slice(OLPC_MAGIC);
    buf.extend_from_slice(&(points.len() as u32).to_le_bytes());
    for p in points {
        for c in [p.x, p.y, p.z] {
            buf.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(ioe(path))
}

pub fn read_olpc(path: &Path) -> Result<Vec<Vector3<f64>>, IoError> {
    let bytes = fs::read(path).map_err(ioe(path))?;
    if bytes.len() < 8 || &bytes[..4] != OLPC_MAGIC {
        return Err(format_err(path, "bad magic, expected OLPC"));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + count * 12 {
        return Err(format_err(path, format!("expected {count} points, file too short")));
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let o = 8 + i * 12;
        let f = |k: usize| f32::from_le_bytes(bytes[o + 4 * k..o + 4 * k + 4].try_into().unwrap()) as f64;
        out.push(Vector3::new(f(0), f(1), f(2)));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// camera preset files

/// Loads a camera from a `key = value` text file. `type` is `equirect`,
/// `pinhole` or `double-sphere`; geometry comes from `width`, `height` and
/// either `fov_deg` or explicit `fx fy cx cy` (plus `xi alpha` for the
/// double sphere).
pub fn load_preset_file(path: &Path) -> Result<CameraModel, IoError> {
    let text = fs::read_to_string(path).map_err(ioe(path))?;
    let mut kv = std::collections::HashMap::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(parse_err(path, ln + 1, "expected 'key = value'"));
        };
        kv.insert(k.trim().to_lowercase(), (v.trim().to_owned(), ln + 1));
    }
    let need = |key: &str| -> Result<(String, usize), IoError> {
        kv.get(key).cloned().ok_or_else(|| format_err(path, format!("missing key '{key}'")))
    };
    let parse_f = |key: &str| -> Result<Option<f64>, IoError> {
        match kv.get(key) {
            None => Ok(None),
            Some((v, ln)) => v
                .parse()
                .map(Some)
                .map_err(|_| parse_err(path, *ln, format!("bad number for '{key}'"))),
        }
    };
    let (ty, _) = need("type")?;
    let (w, wl) = need("width")?;
    let width: u32 = w.parse().map_err(|_| parse_err(path, wl, "bad width"))?;
    let (h, hl) = need("height")?;
    let height: u32 = h.parse().map_err(|_| parse_err(path, hl, "bad height"))?;
    let fov = parse_f("fov_deg")?.map(f64::to_radians);
    let fx = parse_f("fx")?;
    let fy = parse_f("fy")?;
    let cx = parse_f("cx")?;
    let cy = parse_f("cy")?;
    let need_fov = || fov.ok_or_else(|| format_err(path, "missing 'fov_deg' (or explicit fx/fy/cx/cy)"));
    match ty.as_str() {
        "equirect" => Ok(CameraModel::Equirect(EquirectModel::new(width, height)?)),
        "pinhole" => {
            let base = match (fx, fy, cx, cy) {
                (Some(fx), Some(fy), Some(cx), Some(cy)) => PinholeModel::new(width, height, fx, fy, cx, cy)?,
                _ => {
                    let b = pinhole_from_fov(width, height, need_fov()?)?;
                    PinholeModel::new(
                        width,
                        height,
                        fx.unwrap_or(b.fx),
                        fy.unwrap_or(b.fy),
                        cx.unwrap_or(b.cx),
                        cy.unwrap_or(b.cy),
                    )?
                }
            };
            Ok(CameraModel::Pinhole(base))
        }
        "double-sphere" | "fisheye" => {
            let xi = parse_f("xi")?.unwrap_or(0.0);
            let alpha = parse_f("alpha")?.unwrap_or(0.5);
            let base = match (fx, fy, cx, cy) {
                (Some(fx), Some(fy), Some(cx), Some(cy)) => {
                    DoubleSphereModel::new(width, height, fx, fy, cx, cy, xi, alpha)?
                }
                _ => {
                    let b = double_sphere_from_fov(width, height, need_fov()?, xi, alpha)?;
                    DoubleSphereModel::new(
                        width,
                        height,
                        fx.unwrap_or(b.fx),
                        fy.unwrap_or(b.fy),
                        cx.unwrap_or(b.cx),
                        cy.unwrap_or(b.cy),
                        xi,
                        alpha,
                    )?
                }
            };
            Ok(CameraModel::DoubleSphere(base))
        }
        other => Err(format_err(path, format!("unknown camera type '{other}'"))),
    }
}

/// Writes a camera with fully explicit intrinsics, so loading it back
/// reproduces the model exactly.
pub fn save_preset_file(path: &Path, model: &CameraModel) -> Result<(), IoError> {
    let mut s = String::new();
    match model {
        CameraModel::Equirect(m) => {
            writeln!(s, "type = equirect\nwidth = {}\nheight = {}", m.width, m.height).expect("string write");
        }
        CameraModel::Pinhole(m) => {
            writeln!(
                s,
                "type = pinhole\nwidth = {}\nheight = {}\nfx = {}\nfy = {}\ncx = {}\ncy = {}",
                m.width, m.height, m.fx, m.fy, m.cx, m.cy
            )
            .expect("string write");
        }
        CameraModel::DoubleSphere(m) => {
            writeln!(
                s,
                "type = double-sphere\nwidth = {}\nheight = {}\nfx = {}\nfy = {}\ncx = {}\ncy = {}\nxi = {}\nalpha = {}",
                m.width, m.height, m.fx, m.fy, m.cx, m.cy, m.xi, m.alpha
            )
            .expect("string write");
        }
    }
    fs::write(path, s).map_err(ioe(path))
}

/// A camera by preset name or preset-file path: names are tried first.
pub fn resolve_camera(spec: &str) -> Result<CameraModel, IoError> {
    match crate::camera::preset(spec) {
        Ok(m) => Ok(m),
        Err(CameraError::UnknownPreset(_)) if Path::new(spec).exists() => load_preset_file(Path::new(spec)),
        Err(e) => Err(e.into()),
    }
}

// ---------------------------------------------------------------------------
// BA scenario files

pub fn load_scenario(path: &Path) -> Result<BaScenario, IoError> {
    let text = fs::read_to_string(path).map_err(ioe(path))?;
    let mut sc = BaScenario::default();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(parse_err(path, ln + 1, "expected 'key = value'"));
        };
        let (k, v) = (k.trim(), v.trim());
        let bad = || parse_err(path, ln + 1, format!("bad value for '{k}'"));
        match k {
            "planes" => sc.planes = v.parse().map_err(|_| bad())?,
            "poses" => sc.poses = v.parse().map_err(|_| bad())?,
            "noise_rot_deg" => sc.noise_rot_deg = v.parse().map_err(|_| bad())?,
            "noise_t_m" => sc.noise_t_m = v.parse().map_err(|_| bad())?,
            "seed" => sc.seed = v.parse().map_err(|_| bad())?,
            other => return Err(parse_err(path, ln + 1, format!("unknown key '{other}'"))),
        }
    }
    Ok(sc)
}

pub fn save_scenario(path: &Path, sc: &BaScenario) -> Result<(), IoError> {
    let s = format!(
        "planes = {}\nposes = {}\nnoise_rot_deg = {}\nnoise_t_m = {}\nseed = {}\n",
        sc.planes, sc.poses, sc.noise_rot_deg, sc.noise_t_m, sc.seed
    );
    fs::write(path, s).map_err(ioe(path))
}

// ---------------------------------------------------------------------------
// scene manifests

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub image: PathBuf,
    pub depth: Option<PathBuf>,
    pub pose: RigidTransform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    /// Camera preset name the queries were shot with.
    pub camera: String,
    /// Free-form condition tag, e.g. `day` or `night`.
    pub tag: String,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneManifest {
    pub scene: String,
    /// Retrieval correctness gate, meters.
    pub d_threshold: f64,
    pub references: Vec<ManifestEntry>,
    pub queries: Vec<QuerySet>,
}

fn parse_entry(path: &Path, ln: usize, line: &str, base: &Path) -> Result<ManifestEntry, IoError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 10 {
        return Err(parse_err(path, ln, format!("expected 'id image depth tx ty tz qw qx qy qz', got {} fields", fields.len())));
    }
    let mut nums = [0f64; 7];
    for (slot, f) in nums.iter_mut().zip(&fields[3..]) {
        *slot = f.parse().map_err(|_| parse_err(path, ln, format!("bad number '{f}'")))?;
    }
    let rotation = Rotation::from_quaternion([nums[3], nums[4], nums[5], nums[6]])
        .map_err(|e| parse_err(path, ln, e.to_string()))?;
    let resolve = |p: &str| {
        let pb = PathBuf::from(p);
        if pb.is_absolute() {
            pb
        } else {
            base.join(pb)
        }
    };
    Ok(ManifestEntry {
        id: fields[0].to_owned(),
        image: resolve(fields[1]),
        depth: (fields[2] != "-").then(|| resolve(fields[2])),
        pose: RigidTransform::new(rotation, Vector3::new(nums[0], nums[1], nums[2])),
    })
}

/// Loads and validates a scene manifest: sections `[references]` and
/// `[queries <camera> <tag>]`, entry lines
/// `id image depth|- tx ty tz qw qx qy qz`. Relative paths are resolved
/// against the manifest's directory; every referenced file must exist and
/// ids must be unique within their list.
pub fn load_manifest(path: &Path) -> Result<SceneManifest, IoError> {
    let text = fs::read_to_string(path).map_err(ioe(path))?;
    let base = path.parent().unwrap_or(Path::new(".")).to_owned();
    let mut scene = String::new();
    let mut d_threshold = 5.0;
    let mut references: Vec<ManifestEntry> = Vec::new();
    let mut queries: Vec<QuerySet> = Vec::new();

    enum Section {
        None,
        References,
        Queries(usize),
    }
    let mut section = Section::None;

    for (ln0, line) in text.lines().enumerate() {
        let ln = ln0 + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(head) = line.strip_prefix('[') {
            let head = head
                .strip_suffix(']')
                .ok_or_else(|| parse_err(path, ln, "unterminated section header"))?;
            let words: Vec<&str> = head.split_whitespace().collect();
            section = match words.as_slice() {
                ["references"] => Section::References,
                ["queries", camera, tag] => {
                    queries.push(QuerySet { camera: (*camera).to_owned(), tag: (*tag).to_owned(), entries: Vec::new() });
                    Section::Queries(queries.len() - 1)
                }
                _ => return Err(parse_err(path, ln, format!("unknown section '[{head}]'"))),
            };
            continue;
        }
        match section {
            Section::None => {
                let Some((k, v)) = line.split_once('=') else {
                    return Err(parse_err(path, ln, "expected 'key = value' before any section"));
                };
                match k.trim() {
                    "scene" => scene = v.trim().to_owned(),
                    "d" => {
                        d_threshold = v.trim().parse().map_err(|_| parse_err(path, ln, "bad distance threshold"))?
                    }
                    other => return Err(parse_err(path, ln, format!("unknown key '{other}'"))),
                }
            }
            Section::References => references.push(parse_entry(path, ln, line, &base)?),
            Section::Queries(i) => queries[i].entries.push(parse_entry(path, ln, line, &base)?),
        }
    }

    let check_list = |entries: &[ManifestEntry]| -> Result<(), IoError> {
        let mut seen = HashSet::new();
        for e in entries {
            if !seen.insert(e.id.clone()) {
                return Err(IoError::DuplicateId { path: path.to_owned(), id: e.id.clone() });
            }
            if !e.image.exists() {
                return Err(IoError::MissingFile { path: e.image.clone() });
            }
            if let Some(d) = &e.depth {
                if !d.exists() {
                    return Err(IoError::MissingFile { path: d.clone() });
                }
            }
        }
        Ok(())
    };
    check_list(&references)?;
    for q in &queries {
        check_list(&q.entries)?;
    }
    Ok(SceneManifest { scene, d_threshold, references, queries })
}

pub fn save_manifest(path: &Path, m: &SceneManifest) -> Result<(), IoError> {
    let mut s = format!("scene = {}\nd = {}\n", m.scene, m.d_threshold);
    let entry_line = |e: &ManifestEntry| {
        let t = e.pose.translation;
        let [w, x, y, z] = e.pose.rotation.to_quaternion();
        format!(
            "{} {} {} {} {} {} {} {} {} {}\n",
            e.id,
            e.image.display(),
            e.depth.as_ref().map_or("-".to_owned(), |d| d.display().to_string()),
            t.x,
            t.y,
            t.z,
            w,
            x,
            y,
            z
        )
    };
    s.push_str("\n[references]\n");
    for e in &m.references {
        s.push_str(&entry_line(e));
    }
    for q in &m.queries {
        s.push_str(&format!("\n[queries {} {}]\n", q.camera, q.tag));
        for e in &q.entries {
            s.push_str(&entry_line(e));
        }
    }
    fs::write(path, s).map_err(ioe(path))
}

// ---------------------------------------------------------------------------
// APR augmentation set

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentRow {
    pub name: String,
    pub preset: String,
    pub pose: RigidTransform,
}

#[derive(Debug, Clone)]
pub struct AugmentInventory {
    /// Labels-file rows: originals first, then crops, in manifest order.
    pub rows: Vec<AugmentRow>,
    /// Image files written (crops only; originals stay where they are).
    pub files: Vec<PathBuf>,
    pub labels_path: PathBuf,
}

/// Renders the pose-regressor training crops for every reference panorama
/// and writes a labels file (`name camera_preset tx ty tz qw qx qy qz`).
/// A crop's pose keeps the reference position; its rotation is the
/// reference rotation composed with the inverse crop rotation, so the
/// identity-rotation front face inherits the reference pose unchanged.
pub fn emit_augmented_set(
    manifest: &SceneManifest,
    cfg: &Vc2Config,
    out_dir: &Path,
) -> Result<AugmentInventory, IoError> {
    fs::create_dir_all(out_dir).map_err(ioe(out_dir))?;
    let mut rows = Vec::new();
    let mut files = Vec::new();
    for r in &manifest.references {
        rows.push(AugmentRow { name: r.id.clone(), preset: "equirect".to_owned(), pose: r.pose });
    }
    for r in &manifest.references {
        let pano = load_image(&r.image)?;
        let crop_pose = |rot: &Rotation| RigidTransform::new(r.pose.rotation.compose(&rot.inverse()), r.pose.translation);
        if cfg.include_cube {
            let face_px = (pano.height / 2).max(1);
            for (face, rot, img) in cubemap_faces(&pano, face_px, cfg.include_bottom)? {
                let name = format!("{}_cube-{}", r.id, face.as_str());
                let file = out_dir.join(format!("{name}.png"));
                save_image(&file, &img)?;
                rows.push(AugmentRow { name, preset: "pinhole-90".to_owned(), pose: crop_pose(&rot) });
                files.push(file);
            }
        }
        for preset_name in &cfg.fisheye_presets {
            let cam = crate::camera::preset(preset_name)?;
            let rot = Rotation::identity();
            let img = extract_virtual(&pano, &cam, &rot, crate::raster::SampleMode::Bilinear)?;
            let name = format!("{}_{preset_name}", r.id);
            let file = out_dir.join(format!("{name}.png"));
            save_image(&file, &img)?;
            rows.push(AugmentRow { name, preset: preset_name.clone(), pose: crop_pose(&rot) });
            files.push(file);
        }
    }
    let labels_path = out_dir.join("labels.txt");
    let entries: Vec<(String, RigidTransform)> = rows
        .iter()
        .map(|row| (format!("{} {}", row.name, row.preset), row.pose))
        .collect();
    // reuse the pose-file layout with the preset wedged in as column 2
    let mut s = String::new();
    for (head, pose) in &entries {
        let t = pose.translation;
        let [w, x, y, z] = pose.rotation.to_quaternion();
        writeln!(s, "{head} {} {} {} {} {} {} {}", t.x, t.y, t.z, w, x, y, z).expect("string write");
    }
    fs::write(&labels_path, s).map_err(ioe(&labels_path))?;
    Ok(AugmentInventory { rows, files, labels_path })
}

// ---------------------------------------------------------------------------
// reports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrReportRow {
    pub query_type: String,
    pub mode: String,
    pub k: usize,
    pub recall: f64,
    pub precision: f64,
}

pub fn write_ir_csv(path: &Path, rows: &[IrReportRow]) -> Result<(), IoError> {
    let mut s = String::from("query_type,mode,k,recall,precision\n");
    for r in rows {
        writeln!(s, "{},{},{},{},{}", r.query_type, r.mode, r.k, r.recall, r.precision).expect("string write");
    }
    fs::write(path, s).map_err(ioe(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseReportRow {
    pub query_type: String,
    pub mode: String,
    pub count: usize,
    /// Percent of queries within each accuracy bucket, 0-100, nested.
    pub high_pct: f64,
    pub medium_pct: f64,
    pub low_pct: f64,
    pub median_trans_m: f64,
    pub median_rot_deg: f64,
}

pub fn write_pose_csv(path: &Path, rows: &[PoseReportRow]) -> Result<(), IoError> {
    let mut s = String::from("query_type,mode,count,high_pct,medium_pct,low_pct,median_trans_m,median_rot_deg\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.query_type, r.mode, r.count, r.high_pct, r.medium_pct, r.low_pct, r.median_trans_m, r.median_rot_deg
        )
        .expect("string write");
    }
    fs::write(path, s).map_err(ioe(path))
}

/// JSON twin of a report: same rows, machine-friendly.
pub fn write_json_report<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), IoError> {
    let mut bytes = serde_json::to_vec_pretty(rows)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(ioe(path))
}
