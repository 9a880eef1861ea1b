//! Image loading and saving.
//!
//! Reads PNG (via the `image` crate) and binary PPM (P6, parsed here);
//! writes PNG. Decoded images become [1,3,H,W] tensors with values in
//! [0,1]; grayscale sources are channel-tripled. Sizes that are not
//! multiples of four are center-cropped down with a warning, since the
//! action grid lives at quarter resolution.

use std::path::Path;

use image::{imageops, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::nets::ACTION_DOWNSCALE;
use crate::tensor::Tensor;

/// Raw 8-bit RGB frame, rows top to bottom.
#[derive(Debug)]
pub struct Rgb8 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Rgb8 {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height * 3);
        Rgb8 {
            width,
            height,
            data,
        }
    }
}

fn parse_ppm(bytes: &[u8], path: &Path) -> Result<Rgb8> {
    let bad = |detail: &str| Error::Image(format!("{}: {detail}", path.display()));
    let mut pos = 0usize;
    let token = |pos: &mut usize| -> Result<Vec<u8>> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(bad("truncated header"));
        }
        Ok(bytes[start..*pos].to_vec())
    };

    if token(&mut pos)? != b"P6" {
        return Err(bad("not a binary PPM (missing P6 magic)"));
    }
    let number = |pos: &mut usize| -> Result<usize> {
        let tok = token(pos)?;
        std::str::from_utf8(&tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("malformed header number"))
    };
    let width = number(&mut pos)?;
    let height = number(&mut pos)?;
    let maxval = number(&mut pos)?;
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    pos += 1; // single whitespace after maxval
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err(bad("pixel payload shorter than header promises"));
    }
    Ok(Rgb8::new(width, height, bytes[pos..pos + need].to_vec()))
}

/// Decodes a PNG or binary PPM file into RGB bytes.
pub fn load_rgb8(path: &Path) -> Result<Rgb8> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(b"P6") {
        return parse_ppm(&bytes, path);
    }
    let decoded = image::load_from_memory(&bytes)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let rgb = decoded.to_rgb8();
    Ok(Rgb8::new(
        rgb.width() as usize,
        rgb.height() as usize,
        rgb.into_raw(),
    ))
}

/// Converts RGB bytes to a [1,3,H,W] tensor in [0,1].
pub fn to_tensor(frame: &Rgb8) -> Tensor {
    let (w, h) = (frame.width, frame.height);
    let mut data = vec![0.0f32; 3 * w * h];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                data[c * h * w + y * w + x] = frame.data[(y * w + x) * 3 + c] as f32 / 255.0;
            }
        }
    }
    Tensor::from_vec(&[1, 3, h, w], data).expect("sized buffer")
}

/// Quantizes a [1,3,H,W] tensor to RGB bytes: round(v·255) clamped.
pub fn from_tensor(image: &Tensor) -> Result<Rgb8> {
    let s = image.shape();
    if s.len() != 4 || s[0] != 1 || s[1] != 3 {
        return Err(Error::bad_shape("from_tensor", s, "expected [1,3,H,W]"));
    }
    let (h, w) = (s[2], s[3]);
    let data = image.data();
    let mut bytes = vec![0u8; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = (data[c * h * w + y * w + x] * 255.0).round();
                bytes[(y * w + x) * 3 + c] = v.clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok(Rgb8::new(w, h, bytes))
}

/// Writes a [1,3,H,W] tensor as an 8-bit RGB PNG.
pub fn save_png(path: &Path, image: &Tensor) -> Result<()> {
    let frame = from_tensor(image)?;
    image::save_buffer_with_format(
        path,
        &frame.data,
        frame.width as u32,
        frame.height as u32,
        image::ColorType::Rgb8,
        ImageFormat::Png,
    )
    .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

fn center_crop(frame: &Rgb8, cw: usize, ch: usize) -> Rgb8 {
    let left = (frame.width - cw) / 2;
    let top = (frame.height - ch) / 2;
    let mut data = Vec::with_capacity(cw * ch * 3);
    for y in 0..ch {
        let row = ((top + y) * frame.width + left) * 3;
        data.extend_from_slice(&frame.data[row..row + cw * 3]);
    }
    Rgb8::new(cw, ch, data)
}

fn crop_to_grid(frame: Rgb8, path: &Path) -> Result<Rgb8> {
    let cw = frame.width - frame.width % ACTION_DOWNSCALE;
    let ch = frame.height - frame.height % ACTION_DOWNSCALE;
    if cw == 0 || ch == 0 {
        return Err(Error::Image(format!(
            "{}: {}x{} is too small for the {}-pixel action grid",
            path.display(),
            frame.width,
            frame.height,
            ACTION_DOWNSCALE
        )));
    }
    if (cw, ch) != (frame.width, frame.height) {
        log::warn!(
            "{}: cropping {}x{} to {}x{} (sides must be multiples of {})",
            path.display(),
            frame.width,
            frame.height,
            cw,
            ch,
            ACTION_DOWNSCALE
        );
        return Ok(center_crop(&frame, cw, ch));
    }
    Ok(frame)
}

/// Loads an image for inference: decode, center-crop to the action grid.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let frame = crop_to_grid(load_rgb8(path)?, path)?;
    Ok(to_tensor(&frame))
}

/// Image files (by extension) in a directory, sorted by file name.
pub fn list_image_files(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::Data(format!(
            "'{}' is not a readable directory",
            dir.display()
        )));
    }
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "ppm"))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    Ok(paths)
}

/// Loads an image for training: decode, scale the shorter side to `size`,
/// then center-crop a `size`×`size` square.
pub fn load_training_image(path: &Path, size: usize) -> Result<Tensor> {
    if size % ACTION_DOWNSCALE != 0 || size == 0 {
        return Err(Error::Config(format!(
            "image_size {size} must be a positive multiple of {ACTION_DOWNSCALE}"
        )));
    }
    let frame = load_rgb8(path)?;
    let shorter = frame.width.min(frame.height);
    if shorter == 0 {
        return Err(Error::Image(format!("{}: empty image", path.display())));
    }
    let frame = if shorter == size && frame.width == frame.height {
        frame
    } else {
        let scale = size as f64 / shorter as f64;
        let nw = ((frame.width as f64 * scale).round() as usize).max(size);
        let nh = ((frame.height as f64 * scale).round() as usize).max(size);
        let buf = RgbImage::from_raw(frame.width as u32, frame.height as u32, frame.data)
            .expect("sized buffer");
        let resized = imageops::resize(&buf, nw as u32, nh as u32, imageops::FilterType::Triangle);
        let resized = Rgb8::new(nw, nh, resized.into_raw());
        center_crop(&resized, size, size)
    };
    Ok(to_tensor(&frame))
}
