//! Finite-difference checks of every analytic gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::harness::{Params64, StudentModel, StudentShape};
use crate::losses::dense;
use crate::math::{finite_diff_grad, relative_error, Mat64, MathError};
use crate::tuples::{enumerate_pairs, enumerate_triplets, TripletMode, TuplePolicy};

pub const STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;
pub const POINTS: usize = 100;
/// Residuals stay at least this far from any kink of the loss.
const KINK_MARGIN: f64 = 0.02;
const ERROR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    CeDistill,
    InstanceLoss,
    SoftInstanceLoss,
    PairLoss,
    TripletLoss,
    StudentBackprop,
}

impl Op {
    pub const ALL: [Op; 6] = [
        Op::CeDistill,
        Op::InstanceLoss,
        Op::SoftInstanceLoss,
        Op::PairLoss,
        Op::TripletLoss,
        Op::StudentBackprop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Op::CeDistill => "ce_distill",
            Op::InstanceLoss => "instance_loss",
            Op::SoftInstanceLoss => "soft_instance_loss",
            Op::PairLoss => "pair_loss",
            Op::TripletLoss => "triplet_loss",
            Op::StudentBackprop => "student_backprop",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub op: Op,
    pub points: usize,
    pub failures: usize,
    pub worst_error: f64,
    pub worst_point: usize,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Relative error between `analytic` and a central difference of `f` at `x`.
pub fn check_gradient<F>(f: F, analytic: &[f64], x: &[f64]) -> Result<f64, MathError>
where
    F: Fn(&[f64]) -> f64,
{
    if analytic.len() != x.len() {
        return Err(MathError::DimMismatch(analytic.len(), x.len()));
    }
    let numeric = finite_diff_grad(f, x, STEP)?;
    Ok(relative_error(analytic, &numeric, ERROR_FLOOR))
}

fn normal(rng: &mut ChaCha8Rng, n: usize, sigma: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sigma * z
        })
        .collect()
}

fn mat(rows: usize, cols: usize, data: &[f64]) -> Mat64 {
    Mat64 {
        rows,
        cols,
        data: data.to_vec(),
    }
}

/// Residual away from zero: magnitude in `[margin, 1]`, random sign.
fn offset(rng: &mut ChaCha8Rng) -> f64 {
    let m = rng.random_range(5.0 * KINK_MARGIN..1.0);
    if rng.random_bool(0.5) {
        m
    } else {
        -m
    }
}

type Objective = Box<dyn Fn(&[f64]) -> f64>;

/// Value function and analytic gradient at one seeded point.
struct Point {
    x: Vec<f64>,
    f: Objective,
    grad: Vec<f64>,
}

fn ce_point(rng: &mut ChaCha8Rng) -> Point {
    let (n, c) = (rng.random_range(1..6), rng.random_range(2..8));
    let temp = rng.random_range(0.5..3.0);
    let t = mat(n, c, &normal(rng, n * c, 2.0));
    let x = normal(rng, n * c, 2.0);
    let grad = dense::ce_distill(&t, &mat(n, c, &x), temp, true)
        .unwrap()
        .grad
        .unwrap()
        .data;
    let f = move |s: &[f64]| {
        dense::ce_distill(&t, &mat(n, c, s), temp, false)
            .unwrap()
            .value
    };
    Point {
        x,
        f: Box::new(f),
        grad,
    }
}

fn instance_point(rng: &mut ChaCha8Rng) -> Point {
    let (n, d) = (rng.random_range(1..6), rng.random_range(1..6));
    let t = normal(rng, n * d, 1.0);
    let x: Vec<f64> = t.iter().map(|v| v + offset(rng)).collect();
    let t = mat(n, d, &t);
    let grad = dense::instance_loss(&t, &mat(n, d, &x), true)
        .unwrap()
        .grad
        .unwrap()
        .data;
    let f = move |s: &[f64]| {
        dense::instance_loss(&t, &mat(n, d, s), false)
            .unwrap()
            .value
    };
    Point {
        x,
        f: Box::new(f),
        grad,
    }
}

fn soft_point(rng: &mut ChaCha8Rng) -> Point {
    let (n, d) = (rng.random_range(1..6), rng.random_range(1..6));
    let t = normal(rng, n * d, 1.0);
    let x: Vec<f64> = t.iter().map(|v| v + offset(rng)).collect();
    let c = mat(n, d, &normal(rng, n * d, 1.0));
    let t = mat(n, d, &t);
    let grad = dense::soft_instance_loss(&t, &mat(n, d, &x), &c, true)
        .unwrap()
        .grad
        .unwrap()
        .data;
    let f = move |s: &[f64]| {
        dense::soft_instance_loss(&t, &mat(n, d, s), &c, false)
            .unwrap()
            .value
    };
    Point {
        x,
        f: Box::new(f),
        grad,
    }
}

fn clear_of_kink(residual: f64, delta: f64) -> bool {
    (residual.abs() - delta).abs() > KINK_MARGIN
}

fn pair_point(rng: &mut ChaCha8Rng) -> Point {
    loop {
        let (n, d) = (rng.random_range(3..7), rng.random_range(2..5));
        let delta = rng.random_range(0.05..1.5);
        let t = mat(n, d, &normal(rng, n * d, 1.0));
        let x = normal(rng, n * d, 1.0);
        let pairs = enumerate_pairs(n, &TuplePolicy::all()).unwrap();
        let (pt, _) = dense::pair_potential(&t, &pairs).unwrap();
        let (ps, _) = dense::pair_potential(&mat(n, d, &x), &pairs).unwrap();
        if !pt.iter().zip(&ps).all(|(a, b)| clear_of_kink(b - a, delta)) {
            continue;
        }
        let grad = dense::pair_loss(&t, &mat(n, d, &x), delta, &pairs, true)
            .unwrap()
            .grad
            .unwrap()
            .data;
        let f = move |s: &[f64]| {
            dense::pair_loss(&t, &mat(n, d, s), delta, &pairs, false)
                .unwrap()
                .value
        };
        return Point {
            x,
            f: Box::new(f),
            grad,
        };
    }
}

fn triplet_point(rng: &mut ChaCha8Rng) -> Point {
    loop {
        let (n, d) = (rng.random_range(3..6), rng.random_range(2..5));
        let delta = rng.random_range(0.05..1.0);
        let mode = if rng.random_bool(0.5) {
            TripletMode::VertexMiddle
        } else {
            TripletMode::AllVertices
        };
        let policy = TuplePolicy {
            triplet_mode: mode,
            ..TuplePolicy::all()
        };
        let t = mat(n, d, &normal(rng, n * d, 1.0));
        let x = normal(rng, n * d, 1.0);
        let s = mat(n, d, &x);
        let triplets = enumerate_triplets(n, &policy).unwrap();
        let min_edge = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| crate::math::dist64(s.row(i), s.row(j)))
            .fold(f64::INFINITY, f64::min);
        if min_edge < 0.1 {
            continue;
        }
        let clear = triplets.iter().all(|&(i, j, k)| {
            let ct = dense::triplet_potential(t.row(i), t.row(j), t.row(k));
            let cs = dense::triplet_potential(s.row(i), s.row(j), s.row(k));
            matches!((ct, cs), (Some(a), Some(b)) if clear_of_kink(b - a, delta))
        });
        if !clear {
            continue;
        }
        let grad = dense::triplet_loss(&t, &s, delta, &triplets, true)
            .unwrap()
            .grad
            .unwrap()
            .data;
        let f = move |v: &[f64]| {
            dense::triplet_loss(&t, &mat(n, d, v), delta, &triplets, false)
                .unwrap()
                .value
        };
        return Point {
            x,
            f: Box::new(f),
            grad,
        };
    }
}

fn backprop_point(rng: &mut ChaCha8Rng) -> Point {
    let shape = StudentShape {
        input: rng.random_range(2..7),
        hidden: rng.random_range(2..6),
        embed: rng.random_range(2..5),
        classes: rng.random_range(2..5),
    };
    let batch = rng.random_range(1..5);
    let model = StudentModel::init(shape, rng.random()).unwrap();
    let params: Params64 = model.to_f64();
    let inputs = mat(batch, shape.input, &normal(rng, batch * shape.input, 1.0));
    let ge = mat(batch, shape.embed, &normal(rng, batch * shape.embed, 1.0));
    let gz = mat(
        batch,
        shape.classes,
        &normal(rng, batch * shape.classes, 1.0),
    );
    let fwd = params.forward(&inputs);
    let grad = params.backprop(&inputs, &fwd, &ge, &gz).flatten();
    let x = params.flatten();
    let f = move |flat: &[f64]| {
        let out = params.unflatten(flat).forward(&inputs);
        crate::math::dot64(&out.embed.data, &ge.data)
            + crate::math::dot64(&out.logits.data, &gz.data)
    };
    Point {
        x,
        f: Box::new(f),
        grad,
    }
}

fn point(op: Op, seed: u64) -> Point {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match op {
        Op::CeDistill => ce_point(&mut rng),
        Op::InstanceLoss => instance_point(&mut rng),
        Op::SoftInstanceLoss => soft_point(&mut rng),
        Op::PairLoss => pair_point(&mut rng),
        Op::TripletLoss => triplet_point(&mut rng),
        Op::StudentBackprop => backprop_point(&mut rng),
    }
}

/// Checks `op` at `points` seeded points. `perturb` scales the analytic
/// gradient by `1 + perturb`, for exercising the checker itself.
pub fn check_op(op: Op, points: usize, seed: u64, perturb: f64) -> Result<CheckRow, MathError> {
    let mut row = CheckRow {
        op,
        points,
        failures: 0,
        worst_error: 0.0,
        worst_point: 0,
    };
    for p in 0..points {
        let pt = point(op, seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (p as u64));
        let analytic: Vec<f64> = pt.grad.iter().map(|g| g * (1.0 + perturb)).collect();
        let err = check_gradient(&pt.f, &analytic, &pt.x)?;
        if !(err < TOLERANCE) {
            row.failures += 1;
        }
        if !(err <= row.worst_error) {
            row.worst_error = err;
            row.worst_point = p;
        }
    }
    Ok(row)
}

pub fn run_battery(points: usize, seed: u64) -> Result<Vec<CheckRow>, MathError> {
    Op::ALL
        .iter()
        .map(|&op| check_op(op, points, seed, 0.0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn battery_passes_on_a_few_points() {
        for row in run_battery(10, 5).unwrap() {
            assert!(row.passed(), "{:?}", row);
        }
    }

    #[test]
    fn perturbed_gradient_is_caught() {
        for op in Op::ALL {
            let row = check_op(op, 5, 1, 1e-2).unwrap();
            assert_eq!(row.failures, 5, "{}", op.name());
        }
    }

    #[test]
    fn one_row_per_op() {
        let rows = run_battery(1, 0).unwrap();
        let names: Vec<_> = rows.iter().map(|r| r.op.name()).collect();
        assert_eq!(
            names,
            [
                "ce_distill",
                "instance_loss",
                "soft_instance_loss",
                "pair_loss",
                "triplet_loss",
                "student_backprop"
            ]
        );
    }
}
