#![allow(dead_code)]

use nalgebra::DMatrix;
use proptest::prelude::*;

pub fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(lo..hi, rows * cols)
        .prop_map(move |v| DMatrix::from_row_slice(rows, cols, &v))
}

/// `(n, m_u)` with `n <= 3`, `m_u <= 2`.
pub fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=3, 1usize..=2)
}

/// Pair `(A, B)` with entries in `[-1, 1]`.
pub fn plant_pair() -> impl Strategy<Value = (DMatrix<f64>, DMatrix<f64>)> {
    dims().prop_flat_map(|(n, m)| (matrix(n, n, -1.0, 1.0), matrix(n, m, -1.0, 1.0)))
}

/// Plain Riccati value iteration for `x+ = Ax + Bu`, written without any
/// library code.
pub fn standard_riccati(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let mut p = q.clone();
    for _ in 0..200_000 {
        let btp = b.transpose() * &p;
        let gain = (r + &btp * b).try_inverse()? * &btp * a;
        let next = a.transpose() * &p * a + q - a.transpose() * &p * b * gain;
        let next = (&next + next.transpose()) * 0.5;
        let step = (&next - &p).norm();
        if !next.iter().all(|v| v.is_finite()) || next.norm() > 1e12 {
            return None;
        }
        p = next;
        if step <= 1e-13 * (1.0 + p.norm()) {
            return Some(p);
        }
    }
    None
}

/// Structure-preserving doubling for the same Riccati equation.
pub fn doubling_riccati(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut ak = a.clone();
    let mut g = b * r.clone().try_inverse()? * b.transpose();
    let mut h = q.clone();
    for _ in 0..200 {
        let w = (&eye + &g * &h).try_inverse()?;
        let a_next = &ak * &w * &ak;
        let g_next = &g + &ak * &w * &g * ak.transpose();
        let h_next = &h + ak.transpose() * &h * &w * &ak;
        let step = (&h_next - &h).norm();
        ak = a_next;
        g = g_next;
        h = h_next;
        if !h.iter().all(|v| v.is_finite()) {
            return None;
        }
        if step <= 1e-14 * (1.0 + h.norm()) {
            return Some((&h + h.transpose()) * 0.5);
        }
    }
    None
}

use rand::Rng;
use sdnctl_core::{dare_solve, pmax_bisection, DareOptions, DareWeights, DiscretePlant};

/// Stabilizable scenario drawn from `rng`: plant, deadline, dropout rate
/// `frac · p_max` and the Riccati gain at that rate.
pub struct Scenario {
    pub plant: DiscretePlant,
    pub d: u32,
    pub p: f64,
    pub p_max: f64,
    pub gain: DMatrix<f64>,
}

pub fn random_scenario<R: Rng>(rng: &mut R, frac: f64) -> Scenario {
    loop {
        let n = rng.random_range(1..=3);
        let m = rng.random_range(1..=2);
        let d = rng.random_range(1..=3);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.2..1.2));
        let b = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        let plant = DiscretePlant::new(a, b, 1.0).unwrap();
        let w = DareWeights::identity(n, m);
        let Ok(margin) = pmax_bisection(&plant, d, &w, 1e-4) else {
            continue;
        };
        if !(0.02..0.9).contains(&margin.p_max) {
            continue;
        }
        let p = frac * margin.p_max;
        let Ok(outcome) = dare_solve(&plant, d, p, &w, &DareOptions::default()) else {
            continue;
        };
        let Some(sol) = outcome.into_solution() else {
            continue;
        };
        return Scenario {
            plant,
            d,
            p,
            p_max: margin.p_max,
            gain: sol.k,
        };
    }
}
