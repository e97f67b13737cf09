#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srcf_score::model::{Dimensions, FnModel, ModelAtTheta, ModelSpec};

pub type Matrix = DMatrix<f64>;

fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Matrix {
    Matrix::from_fn(r, c, |_, _| scale * rng.random_range(-1.0..1.0))
}

fn spd(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let a = uniform(rng, n, n, 1.0);
    a.transpose() * a + Matrix::identity(n, n)
}

fn symmetric(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Matrix {
    let a = uniform(rng, n, n, scale);
    (&a + a.transpose()) * 0.5
}

/// A random well-conditioned model affine in θ, with every system matrix
/// (and the prior) depending on every parameter, together with a point θ
/// at which all covariances stay comfortably positive definite.
#[allow(clippy::manual_memcpy)]
pub fn random_model(seed: u64) -> (Box<dyn ModelSpec>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=4);
    let m = rng.random_range(1..=4);
    let q = rng.random_range(1..=4);
    let p = rng.random_range(1..=3);

    let f0 = uniform(&mut rng, n, n, 0.5 / n as f64);
    let g0 = uniform(&mut rng, n, q, 1.0);
    let h0 = uniform(&mut rng, m, n, 1.0);
    let q0 = spd(&mut rng, q);
    let r0 = spd(&mut rng, m);
    let pi0 = spd(&mut rng, n);
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));

    let df: Vec<_> = (0..p)
        .map(|_| uniform(&mut rng, n, n, 0.1 / n as f64))
        .collect();
    let dg: Vec<_> = (0..p).map(|_| uniform(&mut rng, n, q, 0.2)).collect();
    let dh: Vec<_> = (0..p).map(|_| uniform(&mut rng, m, n, 0.2)).collect();
    let dq: Vec<_> = (0..p).map(|_| symmetric(&mut rng, q, 0.2)).collect();
    let dr: Vec<_> = (0..p).map(|_| symmetric(&mut rng, m, 0.2)).collect();
    let dpi: Vec<_> = (0..p).map(|_| symmetric(&mut rng, n, 0.2)).collect();
    let dx: Vec<_> = (0..p)
        .map(|_| DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5)))
        .collect();
    let theta: Vec<f64> = (0..p).map(|_| rng.random_range(-0.5..0.5)).collect();

    let dims = Dimensions { n, m, q, p };
    let spec = FnModel::new(format!("random-{seed}"), dims, move |t: &[f64], _k| {
        let mut model = ModelAtTheta::constant(
            f0.clone(),
            g0.clone(),
            h0.clone(),
            q0.clone(),
            r0.clone(),
            pi0.clone(),
            x0.clone(),
            p,
        );
        for i in 0..p {
            model.f += &df[i] * t[i];
            model.g += &dg[i] * t[i];
            model.h += &dh[i] * t[i];
            model.q_cov += &dq[i] * t[i];
            model.r_cov += &dr[i] * t[i];
            model.pi0 += &dpi[i] * t[i];
            model.x0 += &dx[i] * t[i];
            model.df[i] = df[i].clone();
            model.dg[i] = dg[i].clone();
            model.dh[i] = dh[i].clone();
            model.dq_cov[i] = dq[i].clone();
            model.dr_cov[i] = dr[i].clone();
            model.dpi0[i] = dpi[i].clone();
            model.dx0[i] = dx[i].clone();
        }
        Ok(model)
    });
    (Box::new(spec), theta)
}

/// Relative error with a floor on the scale so exact zeros compare sanely.
pub fn rel(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / b.abs().max(f64::MIN_POSITIVE)
    }
}

pub fn rel_matrix(a: &Matrix, b: &Matrix) -> f64 {
    let scale = b.amax();
    let d = (a - b).amax();
    if d == 0.0 {
        0.0
    } else {
        d / scale.max(f64::MIN_POSITIVE)
    }
}
