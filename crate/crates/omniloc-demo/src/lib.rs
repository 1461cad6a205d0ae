//! Browser bindings for three interactive resampling views: rectify a
//! panorama into a preset camera, paste the view back to expose its black
//! borders, and unroll a cube-map strip. `wasm-pack build --target web`
//! turns this into the `pkg/` bundle that `www/index.html` loads; the same
//! functions compile natively, which is how the unit tests run.

use omniloc_core::camera::{preset, CameraModel, DoubleSphereModel, EquirectModel, PinholeModel};
use omniloc_core::geom::Rotation;
use omniloc_core::raster::{RasterImage, SampleMode};
use omniloc_core::vcam::{cubemap_faces, extract_virtual, remap_to_equirect};
use wasm_bindgen::prelude::wasm_bindgen;

/// Pixel payload handed back to JavaScript: tightly packed RGBA plus the
/// covered canvas fraction where the operation has one (1.0 otherwise).
#[wasm_bindgen]
pub struct ViewResult {
    pixels: Vec<u8>,
    width: u32,
    height: u32,
    coverage: f64,
}

#[wasm_bindgen]
impl ViewResult {
    #[wasm_bindgen(getter)]
    pub fn pixels(&self) -> Vec<u8> {
        self.pixels.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[wasm_bindgen(getter)]
    pub fn coverage(&self) -> f64 {
        self.coverage
    }
}

fn rgba_to_raster(rgba: &[u8], width: u32, height: u32) -> Result<RasterImage, String> {
    let expected = width as usize * height as usize * 4;
    if rgba.len() != expected {
        return Err(format!(
            "pixel buffer holds {} bytes, {width}x{height} RGBA needs {expected}",
            rgba.len()
        ));
    }
    let mut img = RasterImage::new(width, height, 3).map_err(|e| e.to_string())?;
    for y in 0..height {
        for x in 0..width {
            let o = 4 * (y as usize * width as usize + x as usize);
            img.set_pixel(x, y, &rgba[o..o + 3]);
        }
    }
    Ok(img)
}

fn raster_to_rgba(img: &RasterImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(img.width as usize * img.height as usize * 4);
    for y in 0..img.height {
        for x in 0..img.width {
            let px = img.pixel(x, y);
            if img.channels == 1 {
                out.extend_from_slice(&[px[0], px[0], px[0], 255]);
            } else {
                out.extend_from_slice(&[px[0], px[1], px[2], 255]);
            }
        }
    }
    out
}

fn orientation(yaw_deg: f64, pitch_deg: f64, roll_deg: f64) -> Rotation {
    Rotation::yaw(yaw_deg.to_radians())
        .compose(&Rotation::pitch(pitch_deg.to_radians()))
        .compose(&Rotation::roll(roll_deg.to_radians()))
}

/// A preset camera rescaled to `out_width`, keeping its field of view. The
/// native preset resolutions are far bigger than a demo canvas wants.
fn scaled_preset(name: &str, out_width: u32) -> Result<CameraModel, String> {
    if out_width < 2 {
        return Err("output width must be at least 2".into());
    }
    let cam = preset(name).map_err(|e| e.to_string())?;
    let s = f64::from(out_width) / f64::from(cam.width());
    let out_height = (f64::from(cam.height()) * s).round().max(1.0) as u32;
    let scaled = match cam {
        CameraModel::Equirect(_) => {
            let w = out_width & !1;
            CameraModel::Equirect(EquirectModel::new(w, w / 2).map_err(|e| e.to_string())?)
        }
        CameraModel::Pinhole(m) => CameraModel::Pinhole(
            PinholeModel::new(out_width, out_height, m.fx * s, m.fy * s, m.cx * s, m.cy * s)
                .map_err(|e| e.to_string())?,
        ),
        CameraModel::DoubleSphere(m) => CameraModel::DoubleSphere(
            DoubleSphereModel::new(
                out_width,
                out_height,
                m.fx * s,
                m.fy * s,
                m.cx * s,
                m.cy * s,
                m.xi,
                m.alpha,
            )
            .map_err(|e| e.to_string())?,
        ),
    };
    Ok(scaled)
}

/// The panorama seen through a preset camera oriented by the given angles,
/// rescaled to `out_width` pixels wide.
pub fn rectify(
    pano_rgba: &[u8],
    pano_width: u32,
    pano_height: u32,
    preset_name: &str,
    yaw_deg: f64,
    pitch_deg: f64,
    roll_deg: f64,
    out_width: u32,
) -> Result<ViewResult, String> {
    let pano = rgba_to_raster(pano_rgba, pano_width, pano_height)?;
    let cam = scaled_preset(preset_name, out_width)?;
    let rot = orientation(yaw_deg, pitch_deg, roll_deg);
    let view = extract_virtual(&pano, &cam, &rot, SampleMode::Bilinear).map_err(|e| e.to_string())?;
    Ok(ViewResult {
        pixels: raster_to_rgba(&view),
        width: view.width,
        height: view.height,
        coverage: 1.0,
    })
}

/// Extracts the preset view and pastes it straight back onto an equirect
/// canvas. Whatever the narrower camera cannot see stays black, so the
/// result is the panorama with that camera's border burned in; `coverage`
/// reports the filled fraction.
pub fn border_canvas(
    pano_rgba: &[u8],
    pano_width: u32,
    pano_height: u32,
    preset_name: &str,
    yaw_deg: f64,
    pitch_deg: f64,
    roll_deg: f64,
    canvas_width: u32,
) -> Result<ViewResult, String> {
    let pano = rgba_to_raster(pano_rgba, pano_width, pano_height)?;
    let w = canvas_width.max(4) & !1;
    let cam = scaled_preset(preset_name, w / 2)?;
    let rot = orientation(yaw_deg, pitch_deg, roll_deg);
    let view = extract_virtual(&pano, &cam, &rot, SampleMode::Bilinear).map_err(|e| e.to_string())?;
    let back = remap_to_equirect(&view, &cam, &rot, (w, w / 2), SampleMode::Bilinear)
        .map_err(|e| e.to_string())?;
    Ok(ViewResult {
        pixels: raster_to_rgba(&back.image),
        width: back.image.width,
        height: back.image.height,
        coverage: back.coverage_fraction(),
    })
}

/// Horizontal strip of cube-map faces (front, left, right, back, up; the
/// downward face is skipped, as tripods tend to own it).
pub fn cube_strip(
    pano_rgba: &[u8],
    pano_width: u32,
    pano_height: u32,
    face_px: u32,
) -> Result<ViewResult, String> {
    let pano = rgba_to_raster(pano_rgba, pano_width, pano_height)?;
    let faces = cubemap_faces(&pano, face_px, false).map_err(|e| e.to_string())?;
    let n = faces.len() as u32;
    let strip_w = n * face_px;
    let mut pixels = vec![0u8; strip_w as usize * face_px as usize * 4];
    for (i, (_, _, img)) in faces.iter().enumerate() {
        for y in 0..face_px {
            for x in 0..face_px {
                let px = img.pixel(x, y);
                let o = 4 * (y as usize * strip_w as usize + i * face_px as usize + x as usize);
                pixels[o..o + 3].copy_from_slice(&px[..3]);
                pixels[o + 3] = 255;
            }
        }
    }
    Ok(ViewResult { pixels, width: strip_w, height: face_px, coverage: 1.0 })
}

/// The JavaScript surface. Errors become thrown exceptions; everything
/// else is a plain call through to the functions above.
#[cfg(target_arch = "wasm32")]
mod exports {
    use super::ViewResult;
    use wasm_bindgen::prelude::*;

    #[wasm_bindgen(js_name = rectify)]
    #[allow(clippy::too_many_arguments)]
    pub fn rectify(
        pano_rgba: &[u8],
        pano_width: u32,
        pano_height: u32,
        preset_name: &str,
        yaw_deg: f64,
        pitch_deg: f64,
        roll_deg: f64,
        out_width: u32,
    ) -> Result<ViewResult, JsError> {
        super::rectify(pano_rgba, pano_width, pano_height, preset_name, yaw_deg, pitch_deg, roll_deg, out_width)
            .map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = borderCanvas)]
    #[allow(clippy::too_many_arguments)]
    pub fn border_canvas(
        pano_rgba: &[u8],
        pano_width: u32,
        pano_height: u32,
        preset_name: &str,
        yaw_deg: f64,
        pitch_deg: f64,
        roll_deg: f64,
        canvas_width: u32,
    ) -> Result<ViewResult, JsError> {
        super::border_canvas(
            pano_rgba,
            pano_width,
            pano_height,
            preset_name,
            yaw_deg,
            pitch_deg,
            roll_deg,
            canvas_width,
        )
        .map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = cubeStrip)]
    pub fn cube_strip(
        pano_rgba: &[u8],
        pano_width: u32,
        pano_height: u32,
        face_px: u32,
    ) -> Result<ViewResult, JsError> {
        super::cube_strip(pano_rgba, pano_width, pano_height, face_px).map_err(|e| JsError::new(&e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use omniloc_core::synth;

    fn pano_rgba(width: u32, height: u32) -> Vec<u8> {
        raster_to_rgba(&synth::gradient_pano(width, height))
    }

    #[test]
    fn rectify_is_shaped_and_deterministic() {
        let pano = pano_rgba(256, 128);
        let a = rectify(&pano, 256, 128, "pinhole-85", 15.0, -5.0, 0.0, 320).unwrap();
        let b = rectify(&pano, 256, 128, "pinhole-85", 15.0, -5.0, 0.0, 320).unwrap();
        assert_eq!((a.width, a.height), (320, 200));
        assert_eq!(a.pixels.len(), 320 * 200 * 4);
        assert_eq!(a.pixels, b.pixels);
        assert_eq!(a.coverage, 1.0);
    }

    #[test]
    fn border_coverage_grows_with_fov() {
        let pano = pano_rgba(256, 128);
        let narrow = border_canvas(&pano, 256, 128, "fisheye-120", 0.0, 0.0, 0.0, 256).unwrap();
        let wide = border_canvas(&pano, 256, 128, "fisheye-195", 0.0, 0.0, 0.0, 256).unwrap();
        assert_eq!((narrow.width, narrow.height), (256, 128));
        assert!(narrow.coverage > 0.0 && narrow.coverage < 1.0);
        assert!(wide.coverage > narrow.coverage, "{} vs {}", wide.coverage, narrow.coverage);
    }

    #[test]
    fn cube_strip_holds_five_faces() {
        let pano = pano_rgba(128, 64);
        let strip = cube_strip(&pano, 128, 64, 48).unwrap();
        assert_eq!((strip.width, strip.height), (240, 48));
        assert_eq!(strip.pixels.len(), 240 * 48 * 4);
    }

    #[test]
    fn bad_inputs_are_errors() {
        let pano = pano_rgba(128, 64);
        assert!(rectify(&pano, 128, 64, "no-such-preset", 0.0, 0.0, 0.0, 320).is_err());
        assert!(rectify(&pano[..100], 128, 64, "pinhole-85", 0.0, 0.0, 0.0, 320).is_err());
        assert!(cube_strip(&pano, 128, 64, 0).is_err());
    }
}
