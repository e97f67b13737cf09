//! Conventional covariance Kalman filter in predicted ("condensed") form, with
//! the filter and Riccati-type sensitivity recursions for the score.
//!
//! This is the baseline the square-root method is compared against, so it is
//! written the usual way: the covariance is propagated directly and only
//! symmetrized after each update. The innovation covariance is still inverted
//! through its Cholesky factor, never explicitly.

use crate::error::{Error, Result};
use crate::likelihood::{loglik_constant, ScoreResult, StepDiagnostics};
use crate::linalg::{
    cholesky_upper, solve_upper, symmetric_condition, symmetrize, Matrix, Side, UpperTriangular,
    Vector,
};
use crate::model::{evaluate, ModelAtTheta, ModelSpec, Trajectory};

/// One-step predicted state and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct KfState {
    pub xhat: Vector,
    pub p: Matrix,
}

impl KfState {
    pub fn from_prior(model: &ModelAtTheta) -> Self {
        Self {
            xhat: model.x0.clone(),
            p: model.pi0.clone(),
        }
    }
}

/// Per-parameter derivatives of [`KfState`].
#[derive(Debug, Clone, PartialEq)]
pub struct KfSensitivity {
    pub dxhat: Vec<Vector>,
    pub dp: Vec<Matrix>,
}

impl KfSensitivity {
    pub fn from_prior(model: &ModelAtTheta) -> Self {
        Self {
            dxhat: model.dx0.clone(),
            dp: model.dpi0.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct KfStep {
    pub next: KfState,
    /// innovation `z − H·x̂`
    pub e: Vector,
    /// innovation covariance `H·P·Hᵀ + R`
    pub re: Matrix,
    pub cond_re: f64,
    /// upper Cholesky factor of `re`
    pub re_chol: UpperTriangular,
    /// predicted gain `F·P·Hᵀ·Re⁻¹`
    pub kp: Matrix,
}

/// `Re⁻¹·X` through the Cholesky factor of `Re`.
fn spd_solve(u: &UpperTriangular, x: &Matrix) -> Result<Matrix> {
    let y = solve_upper(u, x, Side::TransposedLeft)?;
    solve_upper(u, &y, Side::Left)
}

fn spd_solve_vec(u: &UpperTriangular, x: &Vector) -> Result<Vector> {
    let m = spd_solve(u, &Matrix::from_column_slice(x.len(), 1, x.as_slice()))?;
    Ok(Vector::from_column_slice(m.as_slice()))
}

fn innovation_failure(e: Error) -> Error {
    match e {
        Error::NotPositiveDefinite { .. } | Error::SingularFactor { .. } => {
            Error::SingularInnovation { step: 0 }
        }
        other => other,
    }
}

/// One predicted-form Kalman recursion.
pub fn kf_step(state: &KfState, model: &ModelAtTheta, z: &Vector) -> Result<KfStep> {
    let (f, h) = (&model.f, &model.h);
    let e = z - h * &state.xhat;
    let ph_t = &state.p * h.transpose();
    let re = symmetrize(&(h * &ph_t + &model.r_cov));
    if re.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularInnovation { step: 0 });
    }
    let cond_re = symmetric_condition(&re);
    let re_chol = cholesky_upper(&re).map_err(innovation_failure)?;
    // Kpᵀ = Re⁻¹·H·P·Fᵀ
    let kp = spd_solve(&re_chol, &(ph_t.transpose() * f.transpose()))
        .map_err(innovation_failure)?
        .transpose();
    let xhat = f * &state.xhat + &kp * &e;
    let gqg = &model.g * &model.q_cov * model.g.transpose();
    let p = symmetrize(&(f * &state.p * f.transpose() + gqg - &kp * &re * kp.transpose()));
    Ok(KfStep {
        next: KfState { xhat, p },
        e,
        re,
        cond_re,
        re_chol,
        kp,
    })
}

/// Contribution of one step to the negative log-likelihood.
pub fn kf_step_loglik(step: &KfStep) -> Result<f64> {
    let m = step.e.len();
    let w = spd_solve_vec(&step.re_chol, &step.e).map_err(innovation_failure)?;
    Ok(0.5 * (loglik_constant(m) + 2.0 * step.re_chol.log_det() + step.e.dot(&w)))
}

/// Differentiate one [`kf_step`] with respect to every parameter.
///
/// Returns the propagated sensitivities and this step's gradient increment
/// `½tr(Re⁻¹dRe) + eᵀRe⁻¹de − ½eᵀRe⁻¹dRe·Re⁻¹e` per parameter.
pub fn kf_sensitivity_step(
    state: &KfState,
    sens: &KfSensitivity,
    model: &ModelAtTheta,
    step: &KfStep,
) -> Result<(KfSensitivity, Vec<f64>)> {
    let p_count = model.df.len();
    let (f, h, p) = (&model.f, &model.h, &state.p);
    let kp = &step.kp;
    let e = &step.e;
    let re_inv_e = spd_solve_vec(&step.re_chol, e).map_err(innovation_failure)?;

    let mut next = KfSensitivity {
        dxhat: Vec::with_capacity(p_count),
        dp: Vec::with_capacity(p_count),
    };
    let mut grad = Vec::with_capacity(p_count);
    for i in 0..p_count {
        let (df, dh, dp, dx) = (&model.df[i], &model.dh[i], &sens.dp[i], &sens.dxhat[i]);
        let de = -(dh * &state.xhat) - h * dx;
        let dre = symmetrize(
            &(dh * p * h.transpose()
                + h * dp * h.transpose()
                + h * p * dh.transpose()
                + &model.dr_cov[i]),
        );
        // dKp = (dF·P·Hᵀ + F·dP·Hᵀ + F·P·dHᵀ)·Re⁻¹ − Kp·dRe·Re⁻¹
        let num =
            df * p * h.transpose() + f * dp * h.transpose() + f * p * dh.transpose() - kp * &dre;
        let dkp = spd_solve(&step.re_chol, &num.transpose())
            .map_err(innovation_failure)?
            .transpose();

        let dxhat = df * &state.xhat + f * dx + &dkp * e + kp * &de;
        let dgqg = &model.dg[i] * &model.q_cov * model.g.transpose()
            + &model.g * &model.dq_cov[i] * model.g.transpose()
            + &model.g * &model.q_cov * model.dg[i].transpose();
        let kre = kp * &step.re;
        let dp_next =
            df * p * f.transpose() + f * dp * f.transpose() + f * p * df.transpose() + dgqg
                - &dkp * kre.transpose()
                - kp * &dre * kp.transpose()
                - &kre * dkp.transpose();

        let trace_term = spd_solve(&step.re_chol, &dre)
            .map_err(innovation_failure)?
            .trace();
        let g = 0.5 * trace_term + re_inv_e.dot(&de) - 0.5 * re_inv_e.dot(&(&dre * &re_inv_e));
        grad.push(g);
        next.dxhat.push(dxhat);
        next.dp.push(symmetrize(&dp_next));
    }
    Ok((next, grad))
}

/// Per-step snapshot of the propagated covariance and its derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct KfSnapshot {
    pub p: Matrix,
    pub dp: Vec<Matrix>,
    pub xhat: Vector,
}

/// Full output of a conventional run.
#[derive(Debug, Clone)]
pub struct KfRun {
    pub score: ScoreResult,
    /// Predicted quantities after each processed step (only when traced).
    pub trace: Vec<KfSnapshot>,
}

/// Run the filter (and, if `with_score`, the sensitivity recursions) over
/// `data`. Numerical breakdowns are recorded in the result, not returned as
/// errors; only invalid inputs produce `Err`.
pub fn kf_run(
    spec: &dyn ModelSpec,
    theta: &[f64],
    data: &Trajectory,
    with_score: bool,
    trace: bool,
) -> Result<KfRun> {
    let first = evaluate(spec, theta, 1)?;
    let dims = first.dims();
    let mut result = ScoreResult::new(dims.p);
    let mut snapshots = Vec::new();
    let mut state = KfState::from_prior(&first);
    let mut sens = KfSensitivity::from_prior(&first);

    for (idx, z) in data.z.iter().enumerate() {
        let k = idx + 1;
        if z.len() != dims.m {
            return Err(Error::InvalidArgument(format!(
                "measurement {k} has length {}, expected {}",
                z.len(),
                dims.m
            )));
        }
        let owned;
        let model = if k == 1 || spec.time_invariant() {
            &first
        } else {
            owned = evaluate(spec, theta, k)?;
            &owned
        };
        let outcome = kf_step(&state, model, z).and_then(|step| {
            let ll = kf_step_loglik(&step)?;
            let grads = if with_score {
                Some(kf_sensitivity_step(&state, &sens, model, &step)?)
            } else {
                None
            };
            Ok((step, ll, grads))
        });
        match outcome {
            Ok((step, ll, grads)) => {
                result.steps.push(StepDiagnostics {
                    cond_re: step.cond_re,
                });
                result.loglik += ll;
                if let Some((next_sens, g)) = grads {
                    for (acc, gi) in result.gradient.iter_mut().zip(g) {
                        *acc += gi;
                    }
                    sens = next_sens;
                }
                state = step.next;
                let finite = state.p.iter().all(|v| v.is_finite()) && result.loglik.is_finite();
                if !finite {
                    result.fail(k, &Error::SingularInnovation { step: k });
                    break;
                }
                if trace {
                    snapshots.push(KfSnapshot {
                        p: state.p.clone(),
                        dp: sens.dp.clone(),
                        xhat: state.xhat.clone(),
                    });
                }
            }
            Err(
                e @ (Error::SingularInnovation { .. }
                | Error::SingularFactor { .. }
                | Error::NotPositiveDefinite { .. }),
            ) => {
                result.fail(k, &e.at_step(k));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    if !with_score && !result.failed() {
        result.gradient.iter_mut().for_each(|g| *g = f64::NAN);
    }
    Ok(KfRun {
        score: result,
        trace: snapshots,
    })
}

/// Negative log-likelihood from the conventional filter.
pub fn kf_loglik(spec: &dyn ModelSpec, theta: &[f64], data: &Trajectory) -> Result<f64> {
    Ok(kf_run(spec, theta, data, false, false)?
        .score
        .into_result()?
        .loglik)
}

/// Negative log-likelihood and score via the sensitivity equations. A
/// numerical breakdown yields a failed [`ScoreResult`].
pub fn kf_score(spec: &dyn ModelSpec, theta: &[f64], data: &Trajectory) -> Result<ScoreResult> {
    Ok(kf_run(spec, theta, data, true, false)?.score)
}
