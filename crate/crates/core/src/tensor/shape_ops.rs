//! Shape-changing operations: reductions, reshape, concatenation, gathers.

use crate::error::{Error, Result};

use super::{Element, TensorBase};

/// Flat-offset walk pairing every input position with its slot in the
/// reduced (keep-dims) output.
fn for_each_reduced(shape: &[usize], reduced: &[bool], mut f: impl FnMut(usize, usize)) {
    let nd = shape.len();
    let mut out_strides = vec![0usize; nd];
    let mut acc = 1;
    for d in (0..nd).rev() {
        if !reduced[d] {
            out_strides[d] = acc;
            acc *= shape[d];
        }
    }
    let total: usize = shape.iter().product();
    let mut idx = vec![0usize; nd];
    let mut oi = 0usize;
    for ii in 0..total {
        f(ii, oi);
        for d in (0..nd).rev() {
            idx[d] += 1;
            oi += out_strides[d];
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
            oi -= out_strides[d] * shape[d];
        }
    }
}

fn check_axes(op: &'static str, shape: &[usize], axes: &[usize]) -> Result<Vec<bool>> {
    let mut reduced = vec![false; shape.len()];
    for &ax in axes {
        if ax >= shape.len() {
            return Err(Error::bad_shape(op, shape, format!("axis {ax} out of range")));
        }
        reduced[ax] = true;
    }
    Ok(reduced)
}

impl<E: Element> TensorBase<E> {
    fn reduce_impl(&self, axes: &[usize], keepdims: bool, mean: bool) -> Result<Self> {
        let op = if mean { "reduce_mean" } else { "reduce_sum" };
        let reduced = check_axes(op, self.shape(), axes)?;
        let keep_shape: Vec<usize> = self
            .shape()
            .iter()
            .zip(&reduced)
            .map(|(&d, &r)| if r { 1 } else { d })
            .collect();
        let out_len: usize = keep_shape.iter().product();
        let count = (self.len() / out_len.max(1)).max(1);
        let scale = if mean {
            E::one() / E::from_f64(count as f64)
        } else {
            E::one()
        };

        let mut data = vec![E::zero(); out_len];
        {
            let src = self.data();
            for_each_reduced(self.shape(), &reduced, |ii, oi| data[oi] += src[ii]);
        }
        if mean {
            for v in data.iter_mut() {
                *v *= scale;
            }
        }

        let in_shape = self.shape().to_vec();
        let reduced_back = reduced.clone();
        let node = Self::from_op(
            keep_shape.clone(),
            data,
            vec![self.clone()],
            Box::new(move |grad, _out, parents| {
                let mut g = vec![E::zero(); parents[0].len()];
                for_each_reduced(&in_shape, &reduced_back, |ii, oi| {
                    g[ii] = grad[oi] * scale;
                });
                vec![Some(g)]
            }),
        );
        if keepdims {
            Ok(node)
        } else {
            let final_shape: Vec<usize> = keep_shape
                .iter()
                .zip(&reduced)
                .filter(|(_, &r)| !r)
                .map(|(&d, _)| d)
                .collect();
            let final_shape = if final_shape.is_empty() { vec![1] } else { final_shape };
            node.reshape(&final_shape)
        }
    }

    pub fn reduce_sum(&self, axes: &[usize], keepdims: bool) -> Result<Self> {
        self.reduce_impl(axes, keepdims, false)
    }

    pub fn reduce_mean(&self, axes: &[usize], keepdims: bool) -> Result<Self> {
        self.reduce_impl(axes, keepdims, true)
    }

    /// Sum of every element, as a shape-[1] scalar.
    pub fn sum_all(&self) -> Self {
        let axes: Vec<usize> = (0..self.shape().len()).collect();
        self.reduce_sum(&axes, false).expect("axes are in range")
    }

    /// Mean of every element, as a shape-[1] scalar.
    pub fn mean_all(&self) -> Self {
        let axes: Vec<usize> = (0..self.shape().len()).collect();
        self.reduce_mean(&axes, false).expect("axes are in range")
    }

    pub fn reshape(&self, new_shape: &[usize]) -> Result<Self> {
        if new_shape.iter().product::<usize>() != self.len() {
            return Err(Error::bad_shape(
                "reshape",
                self.shape(),
                format!("cannot view as {new_shape:?}"),
            ));
        }
        Ok(Self::from_op(
            new_shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|grad, _, _| vec![Some(grad.to_vec())]),
        ))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(axis: usize, parts: &[Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::bad_shape("concat", &[], "no operands"))?;
        let nd = first.shape().len();
        if axis >= nd {
            return Err(Error::bad_shape("concat", first.shape(), format!("axis {axis}")));
        }
        let mut axis_total = 0;
        for p in parts {
            if p.shape().len() != nd
                || p.shape()[..axis] != first.shape()[..axis]
                || p.shape()[axis + 1..] != first.shape()[axis + 1..]
            {
                return Err(Error::shape("concat", first.shape(), p.shape()));
            }
            axis_total += p.shape()[axis];
        }
        let mut out_shape = first.shape().to_vec();
        out_shape[axis] = axis_total;

        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let mut data = vec![E::zero(); out_shape.iter().product()];
        let mut offset = 0;
        for p in parts {
            let pa = p.shape()[axis];
            let src = p.data();
            for o in 0..outer {
                let dst_start = (o * axis_total + offset) * inner;
                let src_start = o * pa * inner;
                data[dst_start..dst_start + pa * inner]
                    .copy_from_slice(&src[src_start..src_start + pa * inner]);
            }
            offset += pa;
        }

        let part_sizes: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        Ok(Self::from_op(
            out_shape,
            data,
            parts.to_vec(),
            Box::new(move |grad, _out, parents| {
                let mut outs = Vec::with_capacity(parents.len());
                let mut offset = 0;
                for (p, &pa) in parents.iter().zip(&part_sizes) {
                    let mut g = vec![E::zero(); p.len()];
                    for o in 0..outer {
                        let src_start = (o * axis_total + offset) * inner;
                        let dst_start = o * pa * inner;
                        g[dst_start..dst_start + pa * inner]
                            .copy_from_slice(&grad[src_start..src_start + pa * inner]);
                    }
                    outs.push(Some(g));
                    offset += pa;
                }
                outs
            }),
        ))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack0(parts: &[Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::bad_shape("stack0", &[], "no operands"))?;
        let mut reshaped = Vec::with_capacity(parts.len());
        for p in parts {
            if p.shape() != first.shape() {
                return Err(Error::shape("stack0", first.shape(), p.shape()));
            }
            let mut s = vec![1];
            s.extend_from_slice(p.shape());
            reshaped.push(p.reshape(&s)?);
        }
        Self::concat(0, &reshaped)
    }

    /// Gathers rows along axis 0; backward scatter-adds into the source.
    pub fn index_select0(&self, indices: &[usize]) -> Result<Self> {
        let dim0 = *self.shape().first().ok_or_else(|| {
            Error::bad_shape("index_select0", self.shape(), "needs at least one axis")
        })?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= dim0) {
            return Err(Error::bad_shape(
                "index_select0",
                self.shape(),
                format!("index {bad} out of range"),
            ));
        }
        let row: usize = self.shape()[1..].iter().product();
        let mut out_shape = self.shape().to_vec();
        out_shape[0] = indices.len();
        let mut data = vec![E::zero(); indices.len() * row];
        {
            let src = self.data();
            for (i, &ix) in indices.iter().enumerate() {
                data[i * row..(i + 1) * row].copy_from_slice(&src[ix * row..(ix + 1) * row]);
            }
        }
        let idx = indices.to_vec();
        Ok(Self::from_op(
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |grad, _out, parents| {
                let mut g = vec![E::zero(); parents[0].len()];
                for (i, &ix) in idx.iter().enumerate() {
                    for (dst, src) in g[ix * row..(ix + 1) * row]
                        .iter_mut()
                        .zip(&grad[i * row..(i + 1) * row])
                    {
                        *dst += *src;
                    }
                }
                vec![Some(g)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use crate::tensor::Tensor;

    #[test]
    fn mean_of_two() {
        let t = Tensor::from_vec(&[2], vec![2.0, 4.0]).unwrap();
        assert_eq!(t.mean_all().item(), 3.0);
    }

    #[test]
    fn sum_of_ones() {
        let t = Tensor::from_vec(&[2, 2], vec![1.0; 4]).unwrap();
        assert_eq!(t.sum_all().item(), 4.0);
    }

    #[test]
    fn mean_gradient_distributes() {
        let t = Tensor::leaf_grad(&[4], vec![1.0, 2.0, 3.0, 4.0]);
        t.mean_all().backward().unwrap();
        assert_eq!(t.grad().unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn axis_reduction_shapes() {
        let t = Tensor::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let rows = t.reduce_sum(&[1], false).unwrap();
        assert_eq!(rows.shape(), &[2]);
        assert_eq!(rows.to_vec(), vec![6.0, 15.0]);
        let keep = t.reduce_mean(&[0], true).unwrap();
        assert_eq!(keep.shape(), &[1, 3]);
        assert_eq!(keep.to_vec(), vec![2.5, 3.5, 4.5]);
    }

    #[test]
    fn invalid_axis_rejected() {
        let t = Tensor::zeros(&[2, 2]);
        assert!(t.reduce_sum(&[2], false).is_err());
    }

    #[test]
    fn reshape_roundtrip_gradient() {
        let t = Tensor::leaf_grad(&[2, 3], vec![1.0; 6]);
        let y = t.reshape(&[3, 2]).unwrap().sum_all();
        y.backward().unwrap();
        assert_eq!(t.grad().unwrap(), vec![1.0; 6]);
        assert!(t.reshape(&[7]).is_err());
    }

    #[test]
    fn concat_axis1_and_gradient_split() {
        let a = Tensor::leaf_grad(&[2, 1], vec![1.0, 2.0]);
        let b = Tensor::leaf_grad(&[2, 2], vec![3.0, 4.0, 5.0, 6.0]);
        let c = Tensor::concat(1, &[a.clone(), b.clone()]).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.to_vec(), vec![1., 3., 4., 2., 5., 6.]);
        let w = Tensor::from_vec(&[3], vec![1.0, 10.0, 100.0]).unwrap();
        c.mul(&w).unwrap().sum_all().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0, 1.0]);
        assert_eq!(b.grad().unwrap(), vec![10.0, 100.0, 10.0, 100.0]);
    }

    #[test]
    fn stack_makes_batch_axis() {
        let a = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap();
        let s = Tensor::stack0(&[a, b]).unwrap();
        assert_eq!(s.shape(), &[2, 2]);
        assert_eq!(s.to_vec(), vec![1., 2., 3., 4.]);
    }

    #[test]
    fn index_select_gathers_and_scatters() {
        let t = Tensor::leaf_grad(&[3, 2], vec![1., 2., 3., 4., 5., 6.]);
        let picked = t.index_select0(&[2, 0, 2]).unwrap();
        assert_eq!(picked.shape(), &[3, 2]);
        assert_eq!(picked.to_vec(), vec![5., 6., 1., 2., 5., 6.]);
        picked.sum_all().backward().unwrap();
        assert_eq!(t.grad().unwrap(), vec![1., 1., 0., 0., 2., 2.]);
        assert!(t.index_select0(&[3]).is_err());
    }
}
