//! Central finite-difference verification of analytic gradients.
//!
//! Checks run in double precision with the step fixed at 1e-4. Functions
//! under test are rebuilt per evaluation, so any deterministic composition
//! of tensor ops can be checked, including whole networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::TensorBase;

pub const FD_STEP: f64 = 1e-4;
pub const OP_TOLERANCE: f64 = 1e-4;
pub const COMPOSITE_TOLERANCE: f64 = 1e-3;

/// Outcome of checking one named function.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    pub tolerance: f64,
    pub max_rel_err: f64,
    pub coords_checked: usize,
    pub seeds: u32,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// Relative disagreement, with a floor so that near-zero pairs where finite
/// differences only see roundoff do not produce spurious ratios.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-7 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Compares analytic gradients of `f` against central differences at up to
/// `max_coords` coordinates per input. Inputs must be `leaf_grad` tensors in
/// double precision and `f` must be a deterministic function of them.
pub fn check_gradients(
    inputs: &[TensorBase<f64>],
    f: &dyn Fn(&[TensorBase<f64>]) -> Result<TensorBase<f64>>,
    max_coords: usize,
) -> Result<f64> {
    for t in inputs {
        t.zero_grad();
    }
    f(inputs)?.backward()?;
    let analytic: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();

    let mut worst = 0.0f64;
    for (ti, t) in inputs.iter().enumerate() {
        let len = t.len();
        let stride = (len / max_coords).max(1);
        for j in (0..len).step_by(stride) {
            let orig = t.data()[j];
            t.update_data(|d| d[j] = orig + FD_STEP);
            let plus = f(inputs)?.item();
            t.update_data(|d| d[j] = orig - FD_STEP);
            let minus = f(inputs)?.item();
            t.update_data(|d| d[j] = orig);
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[ti][j], numeric));
        }
    }
    Ok(worst)
}

fn rand_leaf(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> TensorBase<f64> {
    let data = (0..shape.iter().product())
        .map(|_| rng.gen_range(lo..hi))
        .collect();
    TensorBase::leaf_grad(shape, data)
}

/// Fixed projection so the scalar under test weights every output element
/// differently; a plain sum can hide transposition mistakes.
fn project(t: &TensorBase<f64>, rng: &mut ChaCha8Rng) -> Result<TensorBase<f64>> {
    let w: Vec<f64> = (0..t.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w = TensorBase::from_vec(t.shape(), w)?;
    Ok(t.mul(&w)?.sum_all())
}

struct Case {
    name: &'static str,
    tolerance: f64,
    build: Box<dyn Fn(u64) -> Result<f64>>,
}

fn op_case(
    name: &'static str,
    shapes: Vec<Vec<usize>>,
    range: (f64, f64),
    apply: impl Fn(&[TensorBase<f64>]) -> Result<TensorBase<f64>> + 'static + Copy,
) -> Case {
    Case {
        name,
        tolerance: OP_TOLERANCE,
        build: Box::new(move |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inputs: Vec<_> = shapes
                .iter()
                .map(|s| rand_leaf(s, &mut rng, range.0, range.1))
                .collect();
            let proj_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
            check_gradients(
                &inputs,
                &move |xs| {
                    let out = apply(xs)?;
                    let mut r = proj_rng.clone();
                    project(&out, &mut r)
                },
                64,
            )
        }),
    }
}

fn composite_cases() -> Vec<Case> {
    crate::backbone::gradcheck_cases()
        .into_iter()
        .chain(crate::nets::gradcheck_cases())
        .chain(crate::objectives::gradcheck_cases())
        .map(Case::from)
        .collect()
}

pub(crate) struct NamedComposite {
    pub name: &'static str,
    pub build: Box<dyn Fn(u64) -> Result<f64>>,
}

impl From<NamedComposite> for Case {
    fn from(c: NamedComposite) -> Case {
        Case {
            name: c.name,
            tolerance: COMPOSITE_TOLERANCE,
            build: c.build,
        }
    }
}

fn op_cases() -> Vec<Case> {
    vec![
        op_case("add", vec![vec![2, 3], vec![2, 3]], (-2.0, 2.0), |xs| {
            xs[0].add(&xs[1])
        }),
        op_case("add_broadcast", vec![vec![2, 3, 4, 4], vec![3, 1, 1]], (-2.0, 2.0), |xs| {
            xs[0].add(&xs[1])
        }),
        op_case("sub", vec![vec![2, 3], vec![2, 3]], (-2.0, 2.0), |xs| {
            xs[0].sub(&xs[1])
        }),
        op_case("mul", vec![vec![2, 3], vec![2, 3]], (-2.0, 2.0), |xs| {
            xs[0].mul(&xs[1])
        }),
        op_case("mul_broadcast", vec![vec![2, 3, 4, 4], vec![2, 3, 1, 1]], (-2.0, 2.0), |xs| {
            xs[0].mul(&xs[1])
        }),
        op_case("div", vec![vec![2, 3], vec![2, 3]], (1.0, 3.0), |xs| {
            xs[0].div(&xs[1])
        }),
        op_case("relu", vec![vec![3, 4]], (0.1, 2.0), |xs| Ok(xs[0].relu())),
        op_case("relu_negative", vec![vec![3, 4]], (-2.0, -0.1), |xs| Ok(xs[0].relu())),
        op_case("tanh", vec![vec![3, 4]], (-2.0, 2.0), |xs| Ok(xs[0].tanh())),
        op_case("sigmoid", vec![vec![3, 4]], (-3.0, 3.0), |xs| Ok(xs[0].sigmoid())),
        op_case("exp", vec![vec![3, 4]], (-2.0, 2.0), |xs| Ok(xs[0].exp())),
        op_case("log", vec![vec![3, 4]], (0.2, 3.0), |xs| xs[0].log()),
        op_case("softplus", vec![vec![3, 4]], (-3.0, 3.0), |xs| Ok(xs[0].softplus())),
        op_case("square", vec![vec![3, 4]], (-2.0, 2.0), |xs| Ok(xs[0].square())),
        op_case("sqrt", vec![vec![3, 4]], (0.2, 3.0), |xs| xs[0].sqrt()),
        op_case("neg", vec![vec![3, 4]], (-2.0, 2.0), |xs| Ok(xs[0].neg())),
        op_case("clamp", vec![vec![3, 4]], (-0.8, 0.8), |xs| Ok(xs[0].clamp(-1.0, 1.0))),
        op_case("add_scalar", vec![vec![3, 4]], (-2.0, 2.0), |xs| {
            Ok(xs[0].add_scalar(0.7))
        }),
        op_case("mul_scalar", vec![vec![3, 4]], (-2.0, 2.0), |xs| {
            Ok(xs[0].mul_scalar(-1.3))
        }),
        op_case("reduce_sum", vec![vec![2, 3, 4]], (-2.0, 2.0), |xs| {
            xs[0].reduce_sum(&[1], false)
        }),
        op_case("reduce_mean", vec![vec![2, 3, 4]], (-2.0, 2.0), |xs| {
            xs[0].reduce_mean(&[0, 2], true)
        }),
        op_case("reshape", vec![vec![2, 6]], (-2.0, 2.0), |xs| xs[0].reshape(&[3, 4])),
        op_case("concat", vec![vec![2, 2], vec![2, 3]], (-2.0, 2.0), |xs| {
            TensorBase::concat(1, xs)
        }),
        op_case("index_select0", vec![vec![4, 3]], (-2.0, 2.0), |xs| {
            xs[0].index_select0(&[3, 1, 1, 0])
        }),
        op_case("conv2d", vec![vec![1, 2, 5, 5], vec![3, 2, 3, 3], vec![3]], (-1.0, 1.0), |xs| {
            xs[0].conv2d(&xs[1], Some(&xs[2]), 1, 1)
        }),
        op_case("conv2d_strided", vec![vec![2, 2, 6, 6], vec![3, 2, 3, 3]], (-1.0, 1.0), |xs| {
            xs[0].conv2d(&xs[1], None, 2, 1)
        }),
        op_case("upsample_nearest", vec![vec![1, 2, 3, 3]], (-2.0, 2.0), |xs| {
            xs[0].upsample_nearest(2)
        }),
        op_case("avg_pool", vec![vec![1, 2, 4, 4]], (-2.0, 2.0), |xs| xs[0].avg_pool(2)),
        op_case("channel_stats", vec![vec![2, 3, 4, 4]], (-2.0, 2.0), |xs| {
            let (mean, std) = xs[0].channel_stats()?;
            TensorBase::concat(1, &[mean, std])
        }),
        op_case("conv_relu_mean", vec![vec![1, 2, 5, 5], vec![2, 2, 3, 3]], (-1.0, 1.0), |xs| {
            Ok(xs[0].conv2d(&xs[1], None, 1, 1)?.relu().mean_all())
        }),
    ]
}

/// Runs the whole gradient suite: every differentiable operation plus the
/// composite network and loss paths, `seeds` random restarts each derived
/// from `base_seed`.
///
/// `inject_fault` deliberately corrupts the named entry's measured error so
/// callers can exercise their failure paths end to end.
pub fn run_standard_suite(
    seeds: u32,
    base_seed: u64,
    inject_fault: Option<&str>,
) -> Result<Vec<GradCheckReport>> {
    let mut cases = op_cases();
    cases.extend(composite_cases().into_iter());

    let mut reports = Vec::with_capacity(cases.len());
    for case in &cases {
        let mut worst = 0.0f64;
        for seed in 0..seeds as u64 {
            worst = worst.max((case.build)(base_seed.wrapping_add(seed * 7919 + 1))?);
        }
        if inject_fault == Some(case.name) {
            worst += 100.0 * case.tolerance;
        }
        reports.push(GradCheckReport {
            name: case.name.to_string(),
            tolerance: case.tolerance,
            max_rel_err: worst,
            coords_checked: 64,
            seeds,
        });
    }
    Ok(reports)
}
