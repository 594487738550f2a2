#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rscmjp::layout::{pack, unpack_values, ParamLayout};
use rscmjp::likelihood::observed_loglik;
use rscmjp::{ModelParams, PathStats};

fn step(v: f64, h: f64) -> f64 {
    h * v.abs().max(1.0)
}

/// Central-difference gradient of `observed_loglik / n`.
pub fn fd_score(sample: &[PathStats], theta: &ModelParams, h: f64) -> DVector<f64> {
    let layout = ParamLayout::for_model(theta);
    let base = pack(theta).into_values();
    let n = sample.len() as f64;
    let f = |v: &[f64]| {
        let t = unpack_values(layout, v, theta.alpha()).unwrap();
        observed_loglik(sample, &t).unwrap() / n
    };
    DVector::from_iterator(
        base.len(),
        (0..base.len()).map(|i| {
            let hi = step(base[i], h);
            let mut up = base.clone();
            let mut dn = base.clone();
            up[i] += hi;
            dn[i] -= hi;
            (f(&up) - f(&dn)) / (2.0 * hi)
        }),
    )
}

/// Second-difference Hessian of `observed_loglik` (not normalized).
pub fn fd_loglik_hessian(sample: &[PathStats], theta: &ModelParams, h: f64) -> DMatrix<f64> {
    let layout = ParamLayout::for_model(theta);
    let base = pack(theta).into_values();
    let d = base.len();
    let f = |v: &[f64]| {
        let t = unpack_values(layout, v, theta.alpha()).unwrap();
        observed_loglik(sample, &t).unwrap()
    };
    let f0 = f(&base);
    let mut hess = DMatrix::zeros(d, d);
    for i in 0..d {
        let hi = step(base[i], h);
        let mut up = base.clone();
        let mut dn = base.clone();
        up[i] += hi;
        dn[i] -= hi;
        hess[(i, i)] = (f(&up) - 2.0 * f0 + f(&dn)) / (hi * hi);
        for j in 0..i {
            let hj = step(base[j], h);
            let at = |si: f64, sj: f64| {
                let mut v = base.clone();
                v[i] += si * hi;
                v[j] += sj * hj;
                f(&v)
            };
            let val = (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * hi * hj);
            hess[(i, j)] = val;
            hess[(j, i)] = val;
        }
    }
    hess
}

pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

pub fn rel_l2(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

pub fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Matrix infinity norm (max absolute row sum).
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}
