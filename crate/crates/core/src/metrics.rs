//! Evaluation measurements: structural similarity, per-pair loss reports
//! over image directories, parameter and storage figures.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::backbone::FeatureBackbone;
use crate::error::{Error, Result};
use crate::imageio;
use crate::nets::{count_params, AgentParams};
use crate::objectives;
use crate::tensor::Tensor;
use crate::trainer::generate_sequence;

pub const SSIM_WINDOW: usize = 8;
pub const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
pub const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// Luma plane on the 0-255 scale, in reading order.
fn grayscale_255(image: &Tensor) -> Result<Vec<f64>> {
    let shape = image.shape();
    if shape.len() != 4 || shape[0] != 1 || shape[1] != 3 {
        return Err(Error::bad_shape(
            "ssim",
            shape,
            "expected a single [1,3,H,W] image",
        ));
    }
    let (h, w) = (shape[2], shape[3]);
    let data = image.to_vec();
    let plane = h * w;
    Ok((0..plane)
        .map(|i| {
            let r = f64::from(data[i]);
            let g = f64::from(data[plane + i]);
            let b = f64::from(data[2 * plane + i]);
            (0.299 * r + 0.587 * g + 0.114 * b) * 255.0
        })
        .collect())
}

/// Mean structural similarity over non-overlapping 8x8 windows of the luma
/// planes; partial border windows are ignored. Identical inputs score 1.0
/// exactly.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("ssim", a.shape(), b.shape()));
    }
    let (h, w) = (a.shape()[2], a.shape()[3]);
    let rows = h / SSIM_WINDOW;
    let cols = w / SSIM_WINDOW;
    if rows == 0 || cols == 0 {
        return Err(Error::bad_shape(
            "ssim",
            a.shape(),
            format!("needs at least one {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let ga = grayscale_255(a)?;
    let gb = grayscale_255(b)?;

    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    for wy in 0..rows {
        for wx in 0..cols {
            let (mut sa, mut sb) = (0.0, 0.0);
            let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
            for y in wy * SSIM_WINDOW..(wy + 1) * SSIM_WINDOW {
                for x in wx * SSIM_WINDOW..(wx + 1) * SSIM_WINDOW {
                    let va = ga[y * w + x];
                    let vb = gb[y * w + x];
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                }
            }
            let ma = sa / n;
            let mb = sb / n;
            let var_a = saa / n - ma * ma;
            let var_b = sbb / n - mb * mb;
            let cov = sab / n - ma * mb;
            total += (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)
                / ((ma * ma + mb * mb + SSIM_C1) * (var_a + var_b + SSIM_C2));
        }
    }
    Ok(total / (rows * cols) as f64)
}

/// One measured (content, style, sequence index) combination.
#[derive(Debug, Clone)]
pub struct PairMetrics {
    pub content_name: String,
    pub style_name: String,
    pub sequence_index: usize,
    pub content_loss: f64,
    pub style_loss: f64,
    pub ssim_to_content: f64,
    /// Wall seconds to generate this pair's full sequence (inference only).
    pub sequence_seconds: f64,
}

#[derive(Debug)]
pub struct EvalReport {
    pub rows: Vec<PairMetrics>,
    pub steps: usize,
    pub param_count: usize,
    pub storage_bytes: usize,
}

pub const EVAL_DISCLAIMER: &str = "losses use this build's own feature extractor; \
absolute values are not comparable to published tables";

impl EvalReport {
    pub fn mean_content_loss(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.content_loss))
    }

    pub fn mean_style_loss(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.style_loss))
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.ssim_to_content))
    }

    /// Mean wall seconds per generated image.
    pub fn mean_seconds_per_image(&self) -> f64 {
        let per_pair: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.sequence_index == self.rows[0].sequence_index)
            .map(|r| r.sequence_seconds)
            .collect();
        mean(per_pair.into_iter()) / self.steps as f64
    }

    pub fn params_millions(&self) -> f64 {
        self.param_count as f64 / 1e6
    }

    pub fn storage_mb(&self) -> f64 {
        self.storage_bytes as f64 / (1024.0 * 1024.0)
    }

    /// Per-row values with the disclaimer in the header comment.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# note: {EVAL_DISCLAIMER}\n");
        out.push_str("content,style,sequence_index,content_loss,style_loss,ssim,sequence_seconds\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.content_name,
                r.style_name,
                r.sequence_index,
                r.content_loss,
                r.style_loss,
                r.ssim_to_content,
                r.sequence_seconds
            );
        }
        out
    }

    /// Human-readable aggregate block.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "note: {EVAL_DISCLAIMER}");
        let _ = writeln!(out, "pairs x indices measured: {}", self.rows.len());
        let _ = writeln!(out, "mean content loss: {:.6}", self.mean_content_loss());
        let _ = writeln!(out, "mean style loss:   {:.6}", self.mean_style_loss());
        let _ = writeln!(out, "mean ssim:         {:.6}", self.mean_ssim());
        let _ = writeln!(
            out,
            "mean inference:    {:.4} s/image",
            self.mean_seconds_per_image()
        );
        let _ = writeln!(
            out,
            "model size:        {:.4} M params, {:.3} MB",
            self.params_millions(),
            self.storage_mb()
        );
        out
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for v in values {
        sum += v;
        count += 1;
    }
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

/// Loads every readable image in the directory at its native (grid-cropped)
/// size, skipping undecodable files with a warning.
fn load_eval_dir(dir: &Path) -> Result<Vec<(String, Tensor)>> {
    let paths = imageio::list_image_files(dir)?;
    let mut images = Vec::new();
    for path in &paths {
        match imageio::load_image(path) {
            Ok(img) => images.push((display_name(path), img)),
            Err(e) => log::warn!("skipping '{}': {e}", path.display()),
        }
    }
    if images.is_empty() {
        return Err(Error::Data(format!(
            "no usable images in '{}' ({} files present)",
            dir.display(),
            paths.len()
        )));
    }
    Ok(images)
}

fn display_name(path: &PathBuf) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Evaluates every (content, style) pair in the two directories: generates
/// a `steps`-long sequence per pair and measures content loss, style loss
/// and SSIM against the content image at each requested 1-based sequence
/// index. Only sequence generation is timed.
pub fn evaluate(
    params: &AgentParams,
    backbone: &FeatureBackbone,
    content_dir: &Path,
    style_dir: &Path,
    steps: usize,
    indices: &[usize],
) -> Result<EvalReport> {
    if steps == 0 {
        return Err(Error::Config("steps must be >= 1".into()));
    }
    let mut indices: Vec<usize> = indices.to_vec();
    indices.sort_unstable();
    indices.dedup();
    if indices.is_empty() {
        return Err(Error::Config("no sequence indices requested".into()));
    }
    if indices[0] < 1 || *indices.last().unwrap() > steps {
        return Err(Error::Config(format!(
            "sequence indices {indices:?} must lie in 1..={steps}"
        )));
    }

    let contents = load_eval_dir(content_dir)?;
    let styles = load_eval_dir(style_dir)?;

    let mut rows = Vec::with_capacity(contents.len() * styles.len() * indices.len());
    for (content_name, content) in &contents {
        for (style_name, style) in &styles {
            let start = Instant::now();
            let sequence = generate_sequence(params, content, style, steps)?;
            let seconds = start.elapsed().as_secs_f64();
            for &index in &indices {
                let output = &sequence[index - 1];
                rows.push(PairMetrics {
                    content_name: content_name.clone(),
                    style_name: style_name.clone(),
                    sequence_index: index,
                    content_loss: f64::from(
                        objectives::content_loss(backbone, output, content)?.item(),
                    ),
                    style_loss: f64::from(
                        objectives::style_loss(backbone, output, style)?.item(),
                    ),
                    ssim_to_content: ssim(content, output)?,
                    sequence_seconds: seconds,
                });
            }
        }
    }

    let deploy_params = [params.actor.params(), params.builder.params()].concat();
    let (param_count, storage_bytes) = count_params(&deploy_params);
    Ok(EvalReport {
        rows,
        steps,
        param_count,
        storage_bytes,
    })
}
