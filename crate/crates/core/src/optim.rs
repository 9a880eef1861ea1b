//! Adaptive-moment gradient descent over a fixed parameter group.
//!
//! Every parameter group in the trainer (critic, actor, generative, entropy
//! temperature) owns its own instance so moment estimates never mix across
//! objectives, even where the underlying tensors overlap.

use crate::container::Container;
use crate::error::{Error, Result};
use crate::tensor::{Element, TensorBase};

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

pub struct Adam<E: Element = f32> {
    params: Vec<TensorBase<E>>,
    lr: E,
    beta1: E,
    beta2: E,
    eps: E,
    m: Vec<Vec<E>>,
    v: Vec<Vec<E>>,
    t: u64,
}

impl<E: Element> Adam<E> {
    pub fn new(params: Vec<TensorBase<E>>, lr: f64) -> Self {
        let m = params.iter().map(|p| vec![E::zero(); p.len()]).collect();
        let v = params.iter().map(|p| vec![E::zero(); p.len()]).collect();
        Adam {
            params,
            lr: E::from_f64(lr),
            beta1: E::from_f64(DEFAULT_BETA1),
            beta2: E::from_f64(DEFAULT_BETA2),
            eps: E::from_f64(DEFAULT_EPS),
            m,
            v,
            t: 0,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = E::from_f64(lr);
    }

    /// Number of steps applied so far.
    pub fn updates(&self) -> u64 {
        self.t
    }

    /// Applies one update from the gradients currently stored on the
    /// parameters. Parameters without a gradient are left untouched.
    pub fn step(&mut self) {
        self.t += 1;
        let bc1 = E::one() - self.beta1.powi(self.t as i32);
        let bc2 = E::one() - self.beta2.powi(self.t as i32);
        let one = E::one();
        for (i, p) in self.params.iter().enumerate() {
            let Some(grad) = p.grad() else { continue };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let lr = self.lr;
            let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
            p.update_data(|data| {
                for (j, g) in grad.iter().enumerate() {
                    m[j] = b1 * m[j] + (one - b1) * *g;
                    v[j] = b2 * v[j] + (one - b2) * *g * *g;
                    let m_hat = m[j] / bc1;
                    let v_hat = v[j] / bc2;
                    data[j] = data[j] - lr * m_hat / (v_hat.sqrt() + eps);
                }
            });
        }
    }

    /// Clears gradients on every managed parameter.
    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }

    /// Serializes moment estimates and the step counter under `prefix`.
    pub fn save(&self, container: &mut Container, prefix: &str) {
        container.insert_raw(
            &format!("{prefix}.t"),
            vec![1],
            vec![self.t as f32],
        );
        for (i, (m, v)) in self.m.iter().zip(&self.v).enumerate() {
            let cast = |xs: &Vec<E>| xs.iter().map(|x| x.into_f64() as f32).collect();
            container.insert_raw(&format!("{prefix}.{i}.m"), vec![m.len()], cast(m));
            container.insert_raw(&format!("{prefix}.{i}.v"), vec![v.len()], cast(v));
        }
    }

    /// Restores state written by [`Adam::save`] for an identically shaped
    /// parameter group.
    pub fn load(&mut self, container: &Container, prefix: &str) -> Result<()> {
        let (_, t) = container.raw(&format!("{prefix}.t"))?;
        self.t = t[0] as u64;
        for i in 0..self.params.len() {
            for (slot, suffix) in [(&mut self.m, "m"), (&mut self.v, "v")] {
                let name = format!("{prefix}.{i}.{suffix}");
                let (dims, data) = container.raw(&name)?;
                if dims != [self.params[i].len()] {
                    return Err(Error::Checkpoint(format!(
                        "optimizer array {name} has length {:?}, parameter wants {}",
                        dims,
                        self.params[i].len()
                    )));
                }
                slot[i] = data.iter().map(|&x| E::from_f64(x as f64)).collect();
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        // With zero moment history the bias-corrected update is
        // lr·g/(|g|+eps), essentially lr·sign(g).
        for g0 in [0.001f32, 1.0, 250.0] {
            let p = Tensor::leaf_grad(&[1], vec![0.0]);
            let mut opt = Adam::new(vec![p.clone()], 0.01);
            p.mul_scalar(g0).sum_all().backward().unwrap();
            opt.step();
            assert!((p.data()[0].abs() - 0.01).abs() < 1e-5, "g0={g0}");
            assert!(p.data()[0] < 0.0);
        }
    }

    #[test]
    fn minimizes_a_quadratic() {
        let p = Tensor::leaf_grad(&[1], vec![-4.0]);
        let mut opt = Adam::new(vec![p.clone()], 0.1);
        for _ in 0..400 {
            let loss = p.add_scalar(-3.0).square().sum_all();
            loss.backward().unwrap();
            opt.step();
            opt.zero_grad();
        }
        assert!((p.data()[0] - 3.0).abs() < 1e-2);
    }

    #[test]
    fn skips_parameters_without_gradients() {
        let active = Tensor::leaf_grad(&[2], vec![1.0, 2.0]);
        let idle = Tensor::leaf_grad(&[2], vec![5.0, 6.0]);
        let mut opt = Adam::new(vec![active.clone(), idle.clone()], 0.05);
        active.sum_all().backward().unwrap();
        opt.step();
        assert_ne!(active.to_vec(), vec![1.0, 2.0]);
        assert_eq!(idle.to_vec(), vec![5.0, 6.0]);
        assert_eq!(opt.updates(), 1);
    }

    #[test]
    fn deterministic_across_runs() {
        let run = || {
            let p = Tensor::leaf_grad(&[3], vec![0.3, -0.7, 1.1]);
            let mut opt = Adam::new(vec![p.clone()], 0.02);
            for _ in 0..25 {
                p.square().sum_all().backward().unwrap();
                opt.step();
                opt.zero_grad();
            }
            p.to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn state_roundtrip_resumes_identically() {
        let train = |resume_at: Option<usize>| {
            let p = Tensor::leaf_grad(&[2], vec![1.0, -2.0]);
            let mut opt = Adam::new(vec![p.clone()], 0.05);
            let mut saved: Option<(Container, Vec<f32>)> = None;
            for step in 0..30 {
                if resume_at == Some(step) {
                    let (container, data) = saved.take().unwrap();
                    p.update_data(|d| d.copy_from_slice(&data));
                    opt = Adam::new(vec![p.clone()], 0.05);
                    opt.load(&container, "opt").unwrap();
                }
                if resume_at.is_none() && step == 15 {
                    let mut c = Container::default();
                    opt.save(&mut c, "opt");
                    saved = Some((c, p.to_vec()));
                }
                p.square().sum_all().backward().unwrap();
                opt.step();
                opt.zero_grad();
            }
            (p.to_vec(), saved)
        };
        let (unbroken, saved) = train(None);

        // Replay: run to step 15 fresh, then restore and continue.
        let p = Tensor::leaf_grad(&[2], vec![1.0, -2.0]);
        let mut opt = Adam::new(vec![p.clone()], 0.05);
        let (container, data) = saved.unwrap();
        p.update_data(|d| d.copy_from_slice(&data));
        opt.load(&container, "opt").unwrap();
        for _ in 15..30 {
            p.square().sum_all().backward().unwrap();
            opt.step();
            opt.zero_grad();
        }
        assert_eq!(p.to_vec(), unbroken);
    }

    #[test]
    fn load_rejects_wrong_shape() {
        let p = Tensor::leaf_grad(&[3], vec![0.0; 3]);
        let opt = Adam::new(vec![p.clone()], 0.01);
        let mut c = Container::default();
        opt.save(&mut c, "opt");

        let q = Tensor::leaf_grad(&[4], vec![0.0; 4]);
        let mut other = Adam::new(vec![q], 0.01);
        let err = other.load(&c, "opt").unwrap_err();
        assert!(err.to_string().contains("opt.0.m"));
    }
}
