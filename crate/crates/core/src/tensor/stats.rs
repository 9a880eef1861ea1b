//! Per-channel spatial statistics used for style signals and style losses.

use crate::error::{Error, Result};

use super::{Element, TensorBase};

/// Epsilon added to the spatial variance before the square root, keeping the
/// standard deviation differentiable on constant channels.
pub const STD_EPS: f64 = 1e-5;

impl<E: Element> TensorBase<E> {
    /// Per-sample per-channel mean and standard deviation over spatial
    /// positions of a [N,C,H,W] tensor; both outputs are [N,C] and carry
    /// gradients. Variance is the population form.
    pub fn channel_stats(&self) -> Result<(Self, Self)> {
        if self.shape().len() != 4 {
            return Err(Error::bad_shape(
                "channel_stats",
                self.shape(),
                "input must be [N,C,H,W]",
            ));
        }
        let (n, c) = (self.shape()[0], self.shape()[1]);
        let mean_keep = self.reduce_mean(&[2, 3], true)?;
        let centered = self.sub(&mean_keep)?;
        let var = centered.square().reduce_mean(&[2, 3], true)?;
        let std = var.add_scalar(E::from_f64(STD_EPS)).sqrt()?;
        Ok((mean_keep.reshape(&[n, c])?, std.reshape(&[n, c])?))
    }
}
