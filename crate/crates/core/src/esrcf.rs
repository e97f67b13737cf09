//! Extended square-root covariance filter in condensed form.
//!
//! Each step rotates the pre-array
//!
//! ```text
//! [ R^{1/2}      0          −R^{−T/2} z ]
//! [ S Hᵀ         S Fᵀ        b          ]
//! [ 0            Q^{1/2}Gᵀ   0          ]
//! ```
//!
//! into the post-array
//!
//! ```text
//! [ Re^{1/2}   K̄ᵀ       −ē     ]
//! [ 0          S_next    b_next ]
//! [ 0          0         γ      ]
//! ```
//!
//! where `S = P^{1/2}` (upper Cholesky factor of the predicted covariance)
//! and `b = P^{−T/2} x̂`.

use crate::error::{Error, Result};
use crate::likelihood::{loglik_constant, ScoreResult, StepDiagnostics};
use crate::linalg::{
    cholesky_upper, householder_block_triangularize, solve_upper_vec, Matrix, Side,
    UpperTriangular, Vector,
};
use crate::model::{evaluate, Dimensions, ModelAtTheta, ModelSpec, Trajectory};

/// Carried pair `(P^{1/2}, P^{−T/2} x̂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SqrtFilterState {
    pub s: UpperTriangular,
    pub b: Vector,
}

impl SqrtFilterState {
    /// Predicted covariance `SᵀS`.
    pub fn covariance(&self) -> Matrix {
        self.s.gram()
    }

    /// Predicted state `Sᵀb`.
    pub fn state(&self) -> Vector {
        self.s.as_matrix().transpose() * &self.b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EsrcfStepOutput {
    pub re_sqrt: UpperTriangular,
    pub kbar_t: Matrix,
    /// normalized innovation `Re^{−T/2} e`
    pub ebar: Vector,
    pub gamma: Vector,
    pub next: SqrtFilterState,
}

/// Upper Cholesky factors of the noise covariances for one model evaluation.
#[derive(Debug, Clone)]
pub struct NoiseFactors {
    pub r_sqrt: UpperTriangular,
    pub q_sqrt: UpperTriangular,
}

impl NoiseFactors {
    pub fn new(model: &ModelAtTheta) -> Result<Self> {
        Ok(Self {
            r_sqrt: cholesky_upper(&model.r_cov)?,
            q_sqrt: cholesky_upper(&model.q_cov)?,
        })
    }
}

pub fn esrcf_init(model: &ModelAtTheta) -> Result<SqrtFilterState> {
    let s = cholesky_upper(&model.pi0)?;
    let b = solve_upper_vec(&s, &model.x0, Side::TransposedLeft)?;
    Ok(SqrtFilterState { s, b })
}

/// Assemble the `(m+n+q) × (m+n+1)` pre-array.
pub fn build_prearray(
    state: &SqrtFilterState,
    model: &ModelAtTheta,
    noise: &NoiseFactors,
    z: &Vector,
) -> Result<Matrix> {
    let Dimensions { n, m, q, .. } = model.dims();
    let mut pre = Matrix::zeros(m + n + q, m + n + 1);
    let s = state.s.as_matrix();
    let r_inv_t_z = solve_upper_vec(&noise.r_sqrt, z, Side::TransposedLeft)?;

    pre.view_mut((0, 0), (m, m))
        .copy_from(noise.r_sqrt.as_matrix());
    pre.view_mut((0, m + n), (m, 1)).copy_from(&(-r_inv_t_z));
    pre.view_mut((m, 0), (n, m))
        .copy_from(&(s * model.h.transpose()));
    pre.view_mut((m, m), (n, n))
        .copy_from(&(s * model.f.transpose()));
    pre.view_mut((m, m + n), (n, 1)).copy_from(&state.b);
    pre.view_mut((m + n, m), (q, n))
        .copy_from(&(noise.q_sqrt.as_matrix() * model.g.transpose()));
    Ok(pre)
}

/// Smallest acceptable diagonal of `Re^{1/2}` for a given pre-array:
/// machine epsilon times its largest leading column norm.
pub(crate) fn innovation_threshold(pre: &Matrix, lead_cols: usize) -> f64 {
    let largest = (0..lead_cols)
        .map(|c| pre.column(c).norm())
        .fold(0.0, f64::max);
    f64::EPSILON * largest
}

/// Read the filter blocks out of a rotated array (leading `m+n+1` columns).
pub(crate) fn read_post_array(
    post: &Matrix,
    dims: Dimensions,
    threshold: f64,
) -> Result<EsrcfStepOutput> {
    let Dimensions { n, m, q, .. } = dims;
    let re = post.view((0, 0), (m, m)).into_owned();
    if re
        .diagonal()
        .iter()
        .any(|&d| !(d > threshold) || !d.is_finite())
    {
        return Err(Error::SingularInnovation { step: 0 });
    }
    let s_next = post.view((m, m), (n, n)).into_owned();
    Ok(EsrcfStepOutput {
        re_sqrt: UpperTriangular::from_upper_part(&re),
        kbar_t: post.view((0, m), (m, n)).into_owned(),
        ebar: -post.view((0, m + n), (m, 1)).column(0).into_owned(),
        gamma: post.view((m + n, m + n), (q, 1)).column(0).into_owned(),
        next: SqrtFilterState {
            s: UpperTriangular::from_upper_part(&s_next),
            b: post.view((m, m + n), (n, 1)).column(0).into_owned(),
        },
    })
}

/// One eSRCF recursion with freshly factored noise covariances.
pub fn esrcf_step(
    state: &SqrtFilterState,
    model: &ModelAtTheta,
    z: &Vector,
) -> Result<EsrcfStepOutput> {
    esrcf_step_with(state, model, &NoiseFactors::new(model)?, z)
}

pub fn esrcf_step_with(
    state: &SqrtFilterState,
    model: &ModelAtTheta,
    noise: &NoiseFactors,
    z: &Vector,
) -> Result<EsrcfStepOutput> {
    let dims = model.dims();
    if z.len() != dims.m {
        return Err(Error::InvalidArgument(format!(
            "measurement has length {}, expected {}",
            z.len(),
            dims.m
        )));
    }
    let pre = build_prearray(state, model, noise, z)?;
    let lead = dims.m + dims.n;
    let post = householder_block_triangularize(&pre, lead)?;
    read_post_array(&post, dims, innovation_threshold(&pre, lead))
}

/// `½[(m/2)ln 2π + 2Σ ln r_jj + ēᵀē]` for one step.
pub fn esrcf_step_loglik(out: &EsrcfStepOutput) -> f64 {
    let m = out.ebar.len();
    0.5 * (loglik_constant(m) + 2.0 * out.re_sqrt.log_det() + out.ebar.dot(&out.ebar))
}

#[derive(Debug, Clone)]
pub struct EsrcfRun {
    /// Log-likelihood and diagnostics; the gradient entries are NaN.
    pub result: ScoreResult,
    /// Carried state after each processed step (only when traced).
    pub trace: Vec<SqrtFilterState>,
}

/// Filter `data`, accumulating the square-root form of the negative
/// log-likelihood. Breakdowns are recorded in the result.
pub fn esrcf_run(
    spec: &dyn ModelSpec,
    theta: &[f64],
    data: &Trajectory,
    trace: bool,
) -> Result<EsrcfRun> {
    let first = evaluate(spec, theta, 1)?;
    let dims = first.dims();
    let mut result = ScoreResult::new(dims.p);
    result.gradient.iter_mut().for_each(|g| *g = f64::NAN);
    let mut states = Vec::new();
    let mut state = esrcf_init(&first)?;
    let first_noise = NoiseFactors::new(&first)?;

    for (idx, z) in data.z.iter().enumerate() {
        let k = idx + 1;
        let (owned_model, owned_noise);
        let (model, noise) = if k == 1 || spec.time_invariant() {
            (&first, &first_noise)
        } else {
            owned_model = evaluate(spec, theta, k)?;
            owned_noise = NoiseFactors::new(&owned_model)?;
            (&owned_model, &owned_noise)
        };
        match esrcf_step_with(&state, model, noise, z) {
            Ok(out) => {
                let cond_re = crate::linalg::symmetric_condition(&out.re_sqrt.gram());
                result.steps.push(StepDiagnostics { cond_re });
                result.loglik += esrcf_step_loglik(&out);
                state = out.next;
                if trace {
                    states.push(state.clone());
                }
            }
            Err(e @ Error::SingularInnovation { .. }) => {
                result.fail(k, &e.at_step(k));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(EsrcfRun {
        result,
        trace: states,
    })
}

/// Negative log-likelihood computed from eSRCF quantities.
pub fn esrcf_loglik(spec: &dyn ModelSpec, theta: &[f64], data: &Trajectory) -> Result<f64> {
    Ok(esrcf_run(spec, theta, data, false)?
        .result
        .into_result()?
        .loglik)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conventional::{kf_loglik, kf_step, KfState};
    use crate::linalg::test_util::*;
    use crate::model::{example1_spec, example3_spec, simulate};
    use nalgebra::dmatrix;

    fn identity_model() -> ModelAtTheta {
        ModelAtTheta::constant(
            Matrix::identity(2, 2),
            Matrix::zeros(2, 1),
            Matrix::identity(2, 2),
            Matrix::identity(1, 1),
            Matrix::identity(2, 2),
            Matrix::identity(2, 2),
            Vector::zeros(2),
            1,
        )
    }

    #[test]
    fn init_cases() {
        let m = identity_model();
        let st = esrcf_init(&m).unwrap();
        assert_eq!(st.s, UpperTriangular::identity(2));
        assert_eq!(st.b, Vector::zeros(2));

        let mut m = identity_model();
        m.pi0 = Matrix::identity(2, 2) * 4.0;
        m.x0 = Vector::from_vec(vec![2.0, 0.0]);
        let st = esrcf_init(&m).unwrap();
        assert_eq!(st.s.as_matrix(), &(Matrix::identity(2, 2) * 2.0));
        assert_eq!(st.b, Vector::from_vec(vec![1.0, 0.0]));

        let mut r = rng(4);
        let mut m = ModelAtTheta::constant(
            Matrix::identity(4, 4),
            Matrix::zeros(4, 1),
            Matrix::identity(1, 4),
            Matrix::identity(1, 1),
            Matrix::identity(1, 1),
            random_spd(&mut r, 4),
            Vector::zeros(4),
            0,
        );
        m.x0 = random_matrix(&mut r, 4, 1).column(0).into_owned();
        let st = esrcf_init(&m).unwrap();
        assert!((st.state() - &m.x0).norm() <= 1e-12 * m.x0.norm());
    }

    #[test]
    fn identity_step() {
        let m = identity_model();
        let out = esrcf_step(&esrcf_init(&m).unwrap(), &m, &Vector::zeros(2)).unwrap();
        let r2 = std::f64::consts::SQRT_2;
        assert!((out.re_sqrt.as_matrix() - Matrix::identity(2, 2) * r2).amax() < 1e-15);
        assert!((out.next.s.as_matrix() - Matrix::identity(2, 2) / r2).amax() < 1e-15);
        assert_eq!(out.ebar, Vector::zeros(2));
    }

    #[test]
    fn scalar_loglik() {
        let out = EsrcfStepOutput {
            re_sqrt: UpperTriangular::identity(1),
            kbar_t: dmatrix![0.0],
            ebar: Vector::zeros(1),
            gamma: Vector::zeros(1),
            next: SqrtFilterState {
                s: UpperTriangular::identity(1),
                b: Vector::zeros(1),
            },
        };
        assert!((esrcf_step_loglik(&out) - 0.45947).abs() < 1e-5);
    }

    #[test]
    fn example3_conditioning() {
        let spec = example3_spec(1e-2).unwrap();
        let m = spec.evaluate(&[2.0], 1).unwrap();
        let out = esrcf_step(
            &esrcf_init(&m).unwrap(),
            &m,
            &Vector::from_vec(vec![1.0, 1.0]),
        )
        .unwrap();
        let c = crate::linalg::symmetric_condition(&out.re_sqrt.gram());
        assert!(c > 4.0e4 && c < 5.0e4, "cond {c}");
    }

    fn random_model(seed: u64, n: usize, m: usize, q: usize) -> ModelAtTheta {
        let mut r = rng(seed);
        let f = random_matrix(&mut r, n, n) * 0.5;
        ModelAtTheta::constant(
            f,
            random_matrix(&mut r, n, q),
            random_matrix(&mut r, m, n),
            random_spd(&mut r, q),
            random_spd(&mut r, m),
            random_spd(&mut r, n),
            random_matrix(&mut r, n, 1).column(0).into_owned(),
            0,
        )
    }

    #[test]
    fn matches_conventional_over_twenty_steps() {
        for seed in 0..5 {
            let model = random_model(seed, 3, 2, 2);
            let mut r = rng(100 + seed);
            let mut kf = KfState::from_prior(&model);
            let mut sq = esrcf_init(&model).unwrap();
            for _ in 0..20 {
                let z = random_matrix(&mut r, 2, 1).column(0).into_owned();
                let a = kf_step(&kf, &model, &z).unwrap();
                let b = esrcf_step(&sq, &model, &z).unwrap();
                assert!(a.cond_re <= 1e6);
                let re = b.re_sqrt.gram();
                assert!((&re - &a.re).norm() <= 1e-11 * a.re.norm());
                let w = a.re_chol.gram();
                let quad = a.e.dot(&(w.clone().try_inverse().unwrap() * &a.e));
                assert!((b.ebar.dot(&b.ebar) - quad).abs() <= 1e-11 * quad.abs().max(1.0));
                kf = a.next;
                sq = b.next;
                assert!((sq.covariance() - &kf.p).norm() <= 1e-10 * kf.p.norm());
                assert!((sq.state() - &kf.xhat).norm() <= 1e-10 * kf.xhat.norm().max(1.0));
                assert!(sq.s.as_matrix().diagonal().iter().all(|&d| d > 0.0));
            }
        }
    }

    #[test]
    fn loglik_matches_conventional_on_example1() {
        let spec = example1_spec(0.1).unwrap();
        let data = simulate(&spec, &[5.0], 100, 11).unwrap();
        for tau in [2.0, 3.5, 5.0, 8.0, 10.0] {
            let a = esrcf_loglik(&spec, &[tau], &data).unwrap();
            let b = kf_loglik(&spec, &[tau], &data).unwrap();
            assert!((a - b).abs() <= 1e-10 * b.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn tiny_delta_still_finite() {
        let spec = example3_spec(1e-10).unwrap();
        let data = Trajectory::new(vec![Vector::from_vec(vec![1.0, 1.0])]).unwrap();
        assert!(esrcf_loglik(&spec, &[2.0], &data).unwrap().is_finite());
    }
}
