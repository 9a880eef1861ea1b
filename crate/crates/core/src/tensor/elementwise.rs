//! Pointwise operations with right-aligned broadcasting.

use crate::error::{Error, Result};

use super::{Element, TensorBase};

/// Broadcast result shape of two operand shapes, right-aligned, or `None`
/// when some dimension pair differs with neither side equal to one.
pub(crate) fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for d in 0..nd {
        let da = if d < nd - a.len() { 1 } else { a[d - (nd - a.len())] };
        let db = if d < nd - b.len() { 1 } else { b[d - (nd - b.len())] };
        out[d] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Row-major strides of `shape` padded/zeroed to address positions of the
/// broadcast `out` shape: a zero stride pins a broadcast dimension.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let nd = out.len();
    let offset = nd - shape.len();
    let mut contiguous = vec![0usize; shape.len()];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        contiguous[d] = acc;
        acc *= shape[d];
    }
    let mut strides = vec![0usize; nd];
    for d in 0..nd {
        if d >= offset && shape[d - offset] != 1 {
            strides[d] = contiguous[d - offset];
        }
    }
    strides
}

/// Visits every position of the broadcast output, handing the callback flat
/// offsets into the output and both operands.
fn for_each_pair(
    out_shape: &[usize],
    a_shape: &[usize],
    b_shape: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let total: usize = out_shape.iter().product();
    if total == 0 {
        return;
    }
    let astr = broadcast_strides(a_shape, out_shape);
    let bstr = broadcast_strides(b_shape, out_shape);
    let nd = out_shape.len();
    let mut idx = vec![0usize; nd];
    let (mut ai, mut bi) = (0usize, 0usize);
    for oi in 0..total {
        f(oi, ai, bi);
        for d in (0..nd).rev() {
            idx[d] += 1;
            ai += astr[d];
            bi += bstr[d];
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
            ai -= astr[d] * out_shape[d];
            bi -= bstr[d] * out_shape[d];
        }
    }
}

impl<E: Element> TensorBase<E> {
    fn binary(
        &self,
        other: &Self,
        op: &'static str,
        fwd: fn(E, E) -> E,
        dfa: fn(E, E) -> E,
        dfb: fn(E, E) -> E,
    ) -> Result<Self> {
        let out_shape = broadcast_shapes(self.shape(), other.shape())
            .ok_or_else(|| Error::shape(op, self.shape(), other.shape()))?;
        let total: usize = out_shape.iter().product();
        let mut data = vec![E::zero(); total];
        {
            let av = self.data();
            let bv = other.data();
            if self.shape() == other.shape() {
                for ((o, x), y) in data.iter_mut().zip(av.iter()).zip(bv.iter()) {
                    *o = fwd(*x, *y);
                }
            } else {
                for_each_pair(&out_shape, self.shape(), other.shape(), |oi, ai, bi| {
                    data[oi] = fwd(av[ai], bv[bi]);
                });
            }
        }
        let shape_for_back = out_shape.clone();
        Ok(Self::from_op(
            out_shape,
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |grad, _out, parents| {
                let a = &parents[0];
                let b = &parents[1];
                let av = a.data();
                let bv = b.data();
                let mut ga = vec![E::zero(); av.len()];
                let mut gb = vec![E::zero(); bv.len()];
                if a.shape() == b.shape() {
                    for i in 0..grad.len() {
                        ga[i] = grad[i] * dfa(av[i], bv[i]);
                        gb[i] = grad[i] * dfb(av[i], bv[i]);
                    }
                } else {
                    for_each_pair(&shape_for_back, a.shape(), b.shape(), |oi, ai, bi| {
                        ga[ai] += grad[oi] * dfa(av[ai], bv[bi]);
                        gb[bi] += grad[oi] * dfb(av[ai], bv[bi]);
                    });
                }
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.binary(other, "add", |a, b| a + b, |_, _| E::one(), |_, _| E::one())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.binary(
            other,
            "sub",
            |a, b| a - b,
            |_, _| E::one(),
            |_, _| -E::one(),
        )
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.binary(other, "mul", |a, b| a * b, |_, b| b, |a, _| a)
    }

    pub fn div(&self, other: &Self) -> Result<Self> {
        self.binary(
            other,
            "div",
            |a, b| a / b,
            |_, b| E::one() / b,
            |a, b| -a / (b * b),
        )
    }

    /// Shared scaffolding for pointwise maps: `dfn(x, y)` is the local
    /// derivative given input x and output y.
    fn unary(&self, fwd: fn(E) -> E, dfn: fn(E, E) -> E) -> Self {
        let data: Vec<E> = self.data().iter().map(|&x| fwd(x)).collect();
        Self::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |grad, out, parents| {
                let xv = parents[0].data();
                let g = grad
                    .iter()
                    .zip(xv.iter())
                    .zip(out.iter())
                    .map(|((&g, &x), &y)| g * dfn(x, y))
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    pub fn relu(&self) -> Self {
        self.unary(
            |x| if x > E::zero() { x } else { E::zero() },
            |x, _| if x > E::zero() { E::one() } else { E::zero() },
        )
    }

    pub fn tanh(&self) -> Self {
        self.unary(|x| x.tanh(), |_, y| E::one() - y * y)
    }

    pub fn sigmoid(&self) -> Self {
        self.unary(
            |x| E::one() / (E::one() + (-x).exp()),
            |_, y| y * (E::one() - y),
        )
    }

    pub fn exp(&self) -> Self {
        self.unary(|x| x.exp(), |_, y| y)
    }

    /// ln(1 + eˣ), evaluated in the overflow-safe split form.
    pub fn softplus(&self) -> Self {
        self.unary(
            |x| {
                let m = if x > E::zero() { x } else { E::zero() };
                m + ((-x.abs()).exp() + E::one()).ln()
            },
            |x, _| E::one() / (E::one() + (-x).exp()),
        )
    }

    pub fn square(&self) -> Self {
        self.unary(|x| x * x, |x, _| E::from_f64(2.0) * x)
    }

    pub fn neg(&self) -> Self {
        self.unary(|x| -x, |_, _| -E::one())
    }

    pub fn log(&self) -> Result<Self> {
        if self.data().iter().any(|x| *x < E::zero()) {
            return Err(Error::Domain {
                op: "log",
                detail: "negative input".into(),
            });
        }
        Ok(self.unary(|x| x.ln(), |x, _| E::one() / x))
    }

    pub fn sqrt(&self) -> Result<Self> {
        if self.data().iter().any(|x| *x < E::zero()) {
            return Err(Error::Domain {
                op: "sqrt",
                detail: "negative input".into(),
            });
        }
        Ok(self.unary(
            |x| x.sqrt(),
            |_, y| E::from_f64(0.5) / y,
        ))
    }

    /// Clamps to [lo, hi]; gradient passes only through the interior.
    pub fn clamp(&self, lo: E, hi: E) -> Self {
        let data: Vec<E> = self
            .data()
            .iter()
            .map(|&x| if x < lo { lo } else if x > hi { hi } else { x })
            .collect();
        Self::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |grad, _out, parents| {
                let xv = parents[0].data();
                let g = grad
                    .iter()
                    .zip(xv.iter())
                    .map(|(&g, &x)| if x > lo && x < hi { g } else { E::zero() })
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    pub fn add_scalar(&self, c: E) -> Self {
        let data: Vec<E> = self.data().iter().map(|&x| x + c).collect();
        Self::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|grad, _, _| vec![Some(grad.to_vec())]),
        )
    }

    pub fn mul_scalar(&self, c: E) -> Self {
        let data: Vec<E> = self.data().iter().map(|&x| x * c).collect();
        Self::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |grad, _, _| {
                vec![Some(grad.iter().map(|&g| g * c).collect())]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use proptest::prelude::*;

    #[test]
    fn add_basic() {
        let a = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.add(&b).unwrap().to_vec(), vec![4.0, 6.0]);
    }

    #[test]
    fn relu_basic() {
        let a = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(a.relu().to_vec(), vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn incompatible_shapes_rejected() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 4]);
        match a.add(&b) {
            Err(Error::ShapeMismatch { op, .. }) => assert_eq!(op, "add"),
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn broadcasting_row_against_matrix() {
        let a = Tensor::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::from_vec(&[3], vec![10., 20., 30.]).unwrap();
        let c = a.add(&b).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.to_vec(), vec![11., 22., 33., 14., 25., 36.]);
    }

    #[test]
    fn broadcast_backward_reduces_to_operand_shape() {
        let a = Tensor::leaf_grad(&[2, 2], vec![1., 2., 3., 4.]);
        let b = Tensor::leaf_grad(&[1, 2], vec![10., 20.]);
        let y = a.mul(&b).unwrap().sum_all();
        y.backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![10., 20., 10., 20.]);
        // b receives the column sums of a.
        assert_eq!(b.grad().unwrap(), vec![4., 6.]);
    }

    #[test]
    fn division_gradients() {
        let a = Tensor::leaf_grad(&[1], vec![6.0]);
        let b = Tensor::leaf_grad(&[1], vec![2.0]);
        let y = a.div(&b).unwrap();
        y.backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![0.5]);
        assert_eq!(b.grad().unwrap(), vec![-1.5]);
    }

    #[test]
    fn log_of_negative_is_domain_error() {
        let a = Tensor::from_vec(&[1], vec![-1.0]).unwrap();
        assert!(matches!(a.log(), Err(Error::Domain { op: "log", .. })));
        assert!(matches!(a.sqrt(), Err(Error::Domain { op: "sqrt", .. })));
    }

    #[test]
    fn log_accepts_zero() {
        let a = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        assert_eq!(a.log().unwrap().item(), f32::NEG_INFINITY);
    }

    #[test]
    fn softplus_is_overflow_safe() {
        let a = Tensor::from_vec(&[2], vec![100.0, -100.0]).unwrap();
        let y = a.softplus().to_vec();
        assert!((y[0] - 100.0).abs() < 1e-5);
        assert!(y[1].abs() < 1e-5);
    }

    #[test]
    fn clamp_blocks_gradient_outside_interval() {
        let x = Tensor::leaf_grad(&[3], vec![-5.0, 0.5, 5.0]);
        let y = x.clamp(-1.0, 1.0).sum_all();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 0.0]);
        assert_eq!(x.clamp(-1.0, 1.0).to_vec(), vec![-1.0, 0.5, 1.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        /// Total gradient mass through a broadcast equals the mass the
        /// unbroadcast equivalent would receive.
        #[test]
        fn broadcast_backward_conserves_mass(
            rows in 1usize..4,
            cols in 1usize..4,
            vals in proptest::collection::vec(-2.0f32..2.0, 1..4),
        ) {
            let cols = vals.len().min(cols).max(1);
            let b_vals = &vals[..cols];
            let a = Tensor::leaf_grad(&[rows, cols], vec![1.0; rows * cols]);
            let b = Tensor::leaf_grad(&[cols], b_vals.to_vec());
            a.add(&b).unwrap().sum_all().backward().unwrap();
            let mass_b: f32 = b.grad().unwrap().iter().sum();
            // Upstream grad is all ones over rows*cols positions, and add
            // passes it through unscaled, so b must absorb all of it.
            prop_assert!((mass_b - (rows * cols) as f32).abs() < 1e-5);
        }

        #[test]
        fn mul_matches_manual_product(
            a_vals in proptest::collection::vec(-3.0f32..3.0, 4),
            b_vals in proptest::collection::vec(-3.0f32..3.0, 4),
        ) {
            let a = Tensor::from_vec(&[4], a_vals.clone()).unwrap();
            let b = Tensor::from_vec(&[4], b_vals.clone()).unwrap();
            let y = a.mul(&b).unwrap().to_vec();
            for i in 0..4 {
                prop_assert_eq!(y[i], a_vals[i] * b_vals[i]);
            }
        }
    }
}
