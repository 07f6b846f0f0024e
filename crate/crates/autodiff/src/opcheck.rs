//! Finite-difference checks of every differentiable operation in `f64`.

use crate::error::Result;
use crate::gradcheck::grad_check;
use crate::rng::SeededRng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Worst relative error of one operation over all evaluated points.
#[derive(Debug, Clone, PartialEq)]
pub struct OpCheck {
    pub name: &'static str,
    pub points: u64,
    pub max_error: f64,
}

/// Contracts an arbitrary output with fixed random weights so every output
/// element contributes an O(1) gradient.
fn weighted_sum<'t>(tape: &'t Tape<f64>, y: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    let w = Tensor::randn(&y.shape(), 1.0, &mut SeededRng::new(seed ^ 0xabcd));
    y.mul(tape.constant(w)).map(|p| p.sum())
}

fn normal(rng: &mut SeededRng) -> f64 {
    rng.normal()
}

/// Normal draws pushed away from zero so kinks are never straddled.
fn away_from_zero(rng: &mut SeededRng) -> f64 {
    let v = rng.normal();
    v.signum() * (v.abs() + 0.05)
}

fn rand_const(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, &mut SeededRng::new(seed))
}

type Draw = fn(&mut SeededRng) -> f64;
type Body = for<'t> fn(&'t Tape<f64>, Var<'t, f64>, u64) -> Result<Var<'t, f64>>;

struct Case {
    name: &'static str,
    shape: &'static [usize],
    draw: Draw,
    body: Body,
}

fn cases() -> Vec<Case> {
    fn case(name: &'static str, shape: &'static [usize], draw: Draw, body: Body) -> Case {
        Case { name, shape, draw, body }
    }
    vec![
        case("add", &[3, 4], normal, |t, x, p| weighted_sum(t, x.add(t.constant(rand_const(&[3, 4], p + 77)))?, p)),
        case("sub", &[3, 4], normal, |t, x, p| weighted_sum(t, t.constant(rand_const(&[3, 4], p + 77)).sub(x)?, p)),
        case("mul", &[3, 4], normal, |t, x, p| {
            weighted_sum(t, x.mul(t.constant(rand_const(&[3, 4], p + 77)))?.mul(x)?, p)
        }),
        case("scalar broadcast", &[1], normal, |t, s, p| {
            let x = t.constant(rand_const(&[2, 3], p));
            weighted_sum(t, x.mul(s)?.add(s)?, p)
        }),
        case("scale", &[2, 3], normal, |t, x, p| weighted_sum(t, x.scale(-1.7), p)),
        case("matmul lhs", &[3, 4], normal, |t, a, p| weighted_sum(t, a.matmul(t.constant(rand_const(&[4, 2], p)))?, p)),
        case("matmul rhs", &[4, 2], normal, |t, b, p| weighted_sum(t, t.constant(rand_const(&[3, 4], p)).matmul(b)?, p)),
        case("transpose", &[3, 4], normal, |t, x, p| weighted_sum(t, x.transpose()?, p)),
        case("reshape", &[3, 4], normal, |t, x, p| weighted_sum(t, x.reshape(&[2, 6])?, p)),
        case("swap_leading", &[2, 3, 2], normal, |t, x, p| weighted_sum(t, x.swap_leading()?, p)),
        case("concat_cols lhs", &[3, 2], normal, |t, a, p| {
            weighted_sum(t, a.concat_cols(t.constant(rand_const(&[3, 4], p)))?, p)
        }),
        case("concat_cols rhs", &[3, 4], normal, |t, b, p| {
            weighted_sum(t, t.constant(rand_const(&[3, 2], p)).concat_cols(b)?, p)
        }),
        case("gather_rows", &[4, 3], normal, |t, x, p| weighted_sum(t, x.gather_rows(&[2, 0, 2, 3, 1])?, p)),
        case("sym_from_upper", &[6], normal, |t, v, p| weighted_sum(t, v.sym_from_upper(4)?, p)),
        case("remap", &[2, 3, 3], normal, |t, x, p| {
            let index: Vec<usize> = (0..12).map(|i| (i * 7 + 3) % 18).collect();
            let offset: Vec<f64> = (0..12).map(|i| 0.01 * i as f64).collect();
            weighted_sum(t, x.remap(&[3, 4], index, offset, (-100.0, 100.0))?, p)
        }),
        case("leaky_relu", &[4, 5], away_from_zero, |t, x, p| weighted_sum(t, x.leaky_relu(0.2), p)),
        case("relu", &[4, 5], away_from_zero, |t, x, p| weighted_sum(t, x.relu(), p)),
        case("tanh", &[4, 5], normal, |t, x, p| weighted_sum(t, x.tanh(), p)),
        case("sigmoid", &[4, 5], normal, |t, x, p| weighted_sum(t, x.sigmoid(), p)),
        case("sum", &[3, 4], normal, |t, x, p| weighted_sum(t, x.sum(), p)),
        case("mean", &[3, 4], normal, |t, x, p| weighted_sum(t, x.mean(), p)),
        case("row_sums", &[3, 4], normal, |t, x, p| weighted_sum(t, x.row_sums()?, p)),
        case("l1_norm", &[3, 4], away_from_zero, |t, x, p| weighted_sum(t, x.l1_norm(), p)),
        case("softplus", &[3, 4], |r| 3.0 * r.normal(), |t, x, p| weighted_sum(t, x.softplus(), p)),
        case("softmax_cross_entropy", &[5, 4], |r| 2.0 * r.normal(), |t, x, p| {
            let labels: Vec<usize> = (0..5).map(|i| (i + p as usize) % 4).collect();
            weighted_sum(t, x.softmax_cross_entropy(&labels)?, p)
        }),
        case("add_bias input", &[2, 3, 2, 2], normal, |t, x, p| {
            weighted_sum(t, x.add_bias(t.constant(rand_const(&[3], p)))?, p)
        }),
        case("add_bias bias", &[3], normal, |t, b, p| {
            weighted_sum(t, t.constant(rand_const(&[2, 3, 2, 2], p)).add_bias(b)?, p)
        }),
        case("gcn_normalize", &[5, 5], |r| r.uniform_in(0.05, 1.0), |t, a, p| weighted_sum(t, a.gcn_normalize()?, p)),
        case("conv2d input", &[2, 2, 5, 5], normal, |t, x, p| {
            weighted_sum(t, x.conv2d(t.constant(rand_const(&[3, 2, 3, 3], p)), 2, 1)?, p)
        }),
        case("conv2d weight", &[3, 2, 3, 3], normal, |t, w, p| {
            weighted_sum(t, t.constant(rand_const(&[2, 2, 5, 5], p)).conv2d(w, 1, 1)?, p)
        }),
        case("conv_transpose2d input", &[2, 3, 3, 3], normal, |t, x, p| {
            weighted_sum(t, x.conv_transpose2d(t.constant(rand_const(&[3, 2, 4, 4], p)), 2, 1)?, p)
        }),
        case("conv_transpose2d weight", &[3, 2, 4, 4], normal, |t, w, p| {
            weighted_sum(t, t.constant(rand_const(&[2, 3, 3, 3], p)).conv_transpose2d(w, 2, 1)?, p)
        }),
    ]
}

/// Central-difference check (ε = 1e−5) of every operation at `points`
/// random inputs each.
pub fn check_all_ops(points: u64) -> Result<Vec<OpCheck>> {
    cases()
        .into_iter()
        .map(|c| {
            let mut worst: f64 = 0.0;
            for point in 0..points {
                let mut rng = SeededRng::new(1000 + point);
                let x = Tensor::from_fn(c.shape, |_| (c.draw)(&mut rng));
                worst = worst.max(grad_check(|tape, x| (c.body)(tape, x, point), &x, 1e-5)?);
            }
            Ok(OpCheck {
                name: c.name,
                points,
                max_error: worst,
            })
        })
        .collect()
}
