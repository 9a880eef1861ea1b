//! Fixed multi-scale feature backbone used by the losses and the reward.
//!
//! Four conv+relu blocks with channels 16/32/64/128 and stride-2 halving
//! between taps. Weights are orthogonally initialised from a seed (or loaded
//! from a container), biases are zero, and nothing here ever trains:
//! gradients flow through `extract` to the input images only.

use crate::container::Container;
use crate::error::{Error, Result};
use crate::rng::SeedTree;
use crate::tensor::{Element, TensorBase};

pub const TAP_CHANNELS: [usize; 4] = [16, 32, 64, 128];
/// Tap feeding the content loss (0-based index into the tap list).
pub const CONTENT_TAP: usize = 2;
/// Minimum input side so the deepest tap is non-empty.
pub const MIN_SIDE: usize = 8;

pub struct FeatureBackbone<E: Element = f32> {
    weights: Vec<TensorBase<E>>,
}

impl<E: Element> FeatureBackbone<E> {
    /// Builds the four frozen conv blocks from a deterministic seed.
    pub fn seeded(seed: u64) -> Self {
        let mut rng = SeedTree::new(seed).stream("backbone");
        let mut weights = Vec::with_capacity(4);
        let mut in_ch = 3;
        for &out_ch in &TAP_CHANNELS {
            weights.push(orthogonal_conv(&mut rng, out_ch, in_ch, 3));
            in_ch = out_ch;
        }
        FeatureBackbone { weights }
    }

    /// Activations at all four taps. Input images are [N,3,H,W] in [0,1];
    /// outputs keep gradient flow to the images but never to the weights.
    pub fn extract(&self, images: &TensorBase<E>) -> Result<Vec<TensorBase<E>>> {
        let shape = images.shape();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::bad_shape("extract", shape, "expected [N,3,H,W]"));
        }
        if shape[2] < MIN_SIDE || shape[3] < MIN_SIDE {
            return Err(Error::bad_shape(
                "extract",
                shape,
                format!("spatial sides must be at least {MIN_SIDE}"),
            ));
        }
        let mut taps = Vec::with_capacity(4);
        let mut x = images.clone();
        for (j, w) in self.weights.iter().enumerate() {
            let stride = if j == 0 { 1 } else { 2 };
            x = x.conv2d(w, None, stride, 1)?.relu();
            taps.push(x.clone());
        }
        Ok(taps)
    }

    pub fn save(&self, container: &mut Container) {
        for (j, w) in self.weights.iter().enumerate() {
            container.insert(&format!("backbone.conv{}.weight", j + 1), w);
        }
    }

    pub fn from_container(container: &Container) -> Result<Self> {
        let mut weights = Vec::with_capacity(4);
        let mut in_ch = 3;
        for (j, &out_ch) in TAP_CHANNELS.iter().enumerate() {
            let key = format!("backbone.conv{}.weight", j + 1);
            let w: TensorBase<E> = container.tensor(&key)?;
            if w.shape() != [out_ch, in_ch, 3, 3] {
                return Err(Error::Checkpoint(format!(
                    "{key}: expected shape [{out_ch},{in_ch},3,3], found {:?}",
                    w.shape()
                )));
            }
            weights.push(w);
            in_ch = out_ch;
        }
        Ok(FeatureBackbone { weights })
    }
}

/// Orthogonal conv weight: rows of the flattened [F, C·k·k] matrix are made
/// orthonormal by modified Gram-Schmidt and scaled by sqrt(2) for relu.
fn orthogonal_conv<E: Element>(
    rng: &mut impl rand::Rng,
    out_ch: usize,
    in_ch: usize,
    k: usize,
) -> TensorBase<E> {
    let cols = in_ch * k * k;
    assert!(out_ch <= cols, "more filters than flattened inputs");
    let mut rows: Vec<Vec<f64>> = (0..out_ch)
        .map(|_| {
            (0..cols)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect()
        })
        .collect();
    for i in 0..out_ch {
        for j in 0..i {
            let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            for c in 0..cols {
                rows[i][c] -= dot * rows[j][c];
            }
        }
        let norm: f64 = rows[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in rows[i].iter_mut() {
            *v /= norm;
        }
    }
    let gain = 2.0f64.sqrt();
    let data: Vec<E> = rows
        .into_iter()
        .flatten()
        .map(|v| E::from_f64(v * gain))
        .collect();
    TensorBase::from_vec(&[out_ch, in_ch, k, k], data).expect("shape matches construction")
}

pub(crate) fn gradcheck_cases() -> Vec<crate::gradcheck::NamedComposite> {
    use crate::gradcheck::check_gradients;
    vec![crate::gradcheck::NamedComposite {
        name: "backbone_extract",
        build: Box::new(|seed| {
            use rand::{Rng, SeedableRng};
            let backbone = FeatureBackbone::<f64>::seeded(seed);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data = (0..3 * 8 * 8).map(|_| rng.gen_range(0.0..1.0)).collect();
            let img = TensorBase::<f64>::leaf_grad(&[1, 3, 8, 8], data);
            check_gradients(
                &[img],
                &move |xs| {
                    let taps = backbone.extract(&xs[0])?;
                    let mut total = taps[0].sum_all();
                    for t in &taps[1..] {
                        total = total.add(&t.sum_all())?;
                    }
                    Ok(total)
                },
                48,
            )
        }),
    }]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn same_seed_same_parameters() {
        let a = FeatureBackbone::<f32>::seeded(42);
        let b = FeatureBackbone::<f32>::seeded(42);
        for (wa, wb) in a.weights.iter().zip(&b.weights) {
            assert_eq!(wa.to_vec(), wb.to_vec());
        }
        let c = FeatureBackbone::<f32>::seeded(43);
        assert_ne!(a.weights[0].to_vec(), c.weights[0].to_vec());
    }

    #[test]
    fn filters_are_orthonormal() {
        let b = FeatureBackbone::<f64>::seeded(7);
        let w = &b.weights[0];
        let cols = 27;
        let d = w.to_vec();
        for i in 0..16 {
            for j in 0..=i {
                let dot: f64 = (0..cols).map(|c| d[i * cols + c] * d[j * cols + c]).sum();
                let want = if i == j { 2.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-9, "rows {i},{j}: {dot}");
            }
        }
    }

    #[test]
    fn tap_shapes_and_determinism() {
        let b = FeatureBackbone::<f32>::seeded(42);
        let img = Tensor::full(&[1, 3, 8, 8], 1.0);
        let taps = b.extract(&img).unwrap();
        let shapes: Vec<_> = taps.iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(
            shapes,
            vec![
                vec![1, 16, 8, 8],
                vec![1, 32, 4, 4],
                vec![1, 64, 2, 2],
                vec![1, 128, 1, 1]
            ]
        );
        let again = b.extract(&img).unwrap();
        for (a, b) in taps.iter().zip(&again) {
            assert_eq!(a.to_vec(), b.to_vec());
        }
    }

    #[test]
    fn zero_image_zero_activations() {
        let b = FeatureBackbone::<f32>::seeded(1);
        let taps = b.extract(&Tensor::zeros(&[1, 3, 8, 8])).unwrap();
        for t in taps {
            assert!(t.to_vec().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn too_small_image_rejected() {
        let b = FeatureBackbone::<f32>::seeded(1);
        assert!(b.extract(&Tensor::zeros(&[1, 3, 4, 4])).is_err());
        assert!(b.extract(&Tensor::zeros(&[1, 1, 8, 8])).is_err());
    }

    #[test]
    fn weights_never_collect_gradients() {
        let b = FeatureBackbone::<f32>::seeded(1);
        let img = Tensor::leaf_grad(&[1, 3, 8, 8], vec![0.5; 192]);
        let taps = b.extract(&img).unwrap();
        taps[3].sum_all().backward().unwrap();
        assert!(img.grad().is_some());
        for w in &b.weights {
            assert!(w.grad().is_none());
            assert!(!w.requires_grad());
        }
    }

    #[test]
    fn container_roundtrip_preserves_extraction() {
        let b = FeatureBackbone::<f32>::seeded(9);
        let mut c = Container::new();
        b.save(&mut c);
        let restored = FeatureBackbone::<f32>::from_container(&c).unwrap();
        let img = Tensor::full(&[1, 3, 8, 8], 0.3);
        assert_eq!(
            b.extract(&img).unwrap()[2].to_vec(),
            restored.extract(&img).unwrap()[2].to_vec()
        );
    }

    #[test]
    fn missing_layer_names_the_key() {
        let b = FeatureBackbone::<f32>::seeded(9);
        let mut c = Container::new();
        b.save(&mut c);
        c.remove("backbone.conv3.weight");
        match FeatureBackbone::<f32>::from_container(&c) {
            Err(e) => assert!(e.to_string().contains("backbone.conv3.weight")),
            Ok(_) => panic!("expected missing-key error"),
        }
    }
}
