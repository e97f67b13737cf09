//! Log-likelihood gradient evaluated entirely in square-root covariance
//! variables.
//!
//! The eSRCF pre-array is widened with one block of derivative columns per
//! parameter and the whole array is rotated by the same orthogonal
//! transformation. Writing `T = [[Re^{1/2}, K̄ᵀ], [0, S_next]]` for the
//! leading triangular block of the post-array and `[X Y; N V]` for the rotated
//! derivative columns of parameter `i`, the product `[X Y; N V]·T⁻¹` is split
//! into strictly-lower `L`, diagonal `D` and strictly-upper `U` parts. Then
//!
//! ```text
//! [dRe^{1/2}  dK̄ᵀ; 0  dS_next] = (Lᵀ + D + U)·T
//! [−dē; db_next] = (Lᵀ − L)·[−ē; b_next] + T^{−T}·[B K]ᵀ·γ + [M; W]
//! ```
//!
//! and the gradient accumulates `Σ_j dRe_jj / Re_jj + ēᵀdē` per step.

use crate::error::{Error, Result};
use crate::esrcf::{
    esrcf_init, innovation_threshold, read_post_array, NoiseFactors, SqrtFilterState,
};
use crate::likelihood::{ScoreResult, StepDiagnostics};
use crate::linalg::{
    cholesky_upper_with_derivative, householder_block_triangularize, solve_upper, solve_upper_vec,
    strict_ldu_split, symmetric_condition, LduSplit, Matrix, Side, UpperTriangular, Vector,
};
use crate::model::{evaluate, Dimensions, ModelAtTheta, ModelSpec, Trajectory};

/// Relative tolerance on the structurally-zero lower-left block of the
/// factor-derivative product.
pub const ZERO_BLOCK_TOLERANCE: f64 = 1e-10;

/// Per-parameter derivatives of the carried filter pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeState {
    pub ds: Vec<UpperTriangular>,
    pub db: Vec<Vector>,
}

impl DerivativeState {
    /// Derivatives of the predicted covariance, `dSᵀS + SᵀdS`, per parameter.
    pub fn covariance_derivatives(&self, state: &SqrtFilterState) -> Vec<Matrix> {
        let s = state.s.as_matrix();
        self.ds
            .iter()
            .map(|ds| {
                let c = ds.as_matrix().transpose() * s;
                &c + c.transpose()
            })
            .collect()
    }
}

/// Rotated derivative columns for one parameter, named by their position in
/// the post-array (rows: innovation / state / noise; columns: innovation /
/// state / data).
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeBlocks {
    /// m×m
    pub top_left: Matrix,
    /// m×n
    pub top_mid: Matrix,
    /// m
    pub top_last: Vector,
    /// n×m
    pub mid_left: Matrix,
    /// n×n
    pub mid_mid: Matrix,
    /// n
    pub mid_last: Vector,
    /// q×m
    pub bottom_left: Matrix,
    /// q×n
    pub bottom_mid: Matrix,
    /// q; the derivative of γ, unused by the score
    pub bottom_last: Vector,
}

/// One step's rotated augmented array, partitioned.
#[derive(Debug, Clone, PartialEq)]
pub struct PostArrayBlocks {
    pub re_sqrt: UpperTriangular,
    pub kbar_t: Matrix,
    pub ebar: Vector,
    pub gamma: Vector,
    pub next: SqrtFilterState,
    /// `[[Re^{1/2}, K̄ᵀ], [0, S_next]]`
    pub lead: UpperTriangular,
    pub derivatives: Vec<DerivativeBlocks>,
}

impl PostArrayBlocks {
    fn dims(&self) -> (usize, usize, usize) {
        (self.re_sqrt.dim(), self.next.s.dim(), self.gamma.len())
    }
}

/// Noise factors plus their per-parameter tangents.
#[derive(Debug, Clone)]
pub struct NoiseTangents {
    pub factors: NoiseFactors,
    pub dr_sqrt: Vec<Matrix>,
    pub dq_sqrt: Vec<Matrix>,
}

impl NoiseTangents {
    pub fn new(model: &ModelAtTheta) -> Result<Self> {
        let p = model.df.len();
        let mut dr_sqrt = Vec::with_capacity(p);
        let mut dq_sqrt = Vec::with_capacity(p);
        let mut r_sqrt = None;
        let mut q_sqrt = None;
        for i in 0..p {
            let (r, dr) = cholesky_upper_with_derivative(&model.r_cov, &model.dr_cov[i])?;
            let (q, dq) = cholesky_upper_with_derivative(&model.q_cov, &model.dq_cov[i])?;
            dr_sqrt.push(dr.into_inner());
            dq_sqrt.push(dq.into_inner());
            r_sqrt = Some(r);
            q_sqrt = Some(q);
        }
        let factors = match (r_sqrt, q_sqrt) {
            (Some(r_sqrt), Some(q_sqrt)) => NoiseFactors { r_sqrt, q_sqrt },
            _ => NoiseFactors::new(model)?,
        };
        Ok(Self {
            factors,
            dr_sqrt,
            dq_sqrt,
        })
    }
}

/// Derivatives of `(Π₀^{1/2}, Π₀^{−T/2}x̄₀)`.
///
/// `dS` comes from the Cholesky tangent of `dΠ₀` unless the model supplies
/// factor derivatives directly; `db` solves `Sᵀ·db = dx̄₀ − dSᵀ·b`.
pub fn init_derivatives(model: &ModelAtTheta, state: &SqrtFilterState) -> Result<DerivativeState> {
    let p = model.df.len();
    let mut ds = Vec::with_capacity(p);
    let mut db = Vec::with_capacity(p);
    for i in 0..p {
        let dsi = match &model.dpi0_sqrt {
            Some(direct) => UpperTriangular::new(direct[i].clone())?,
            None => cholesky_upper_with_derivative(&model.pi0, &model.dpi0[i])?.1,
        };
        let rhs = &model.dx0[i] - dsi.as_matrix().transpose() * &state.b;
        db.push(solve_upper_vec(&state.s, &rhs, Side::TransposedLeft)?);
        ds.push(dsi);
    }
    Ok(DerivativeState { ds, db })
}

/// Column offset of parameter `i`'s derivative block.
fn block_offset(dims: Dimensions, i: usize) -> usize {
    (dims.m + dims.n + 1) * (1 + i)
}

/// Assemble the `(m+n+q) × (m+n+1)(1+p)` augmented pre-array.
pub fn build_augmented_prearray(
    state: &SqrtFilterState,
    deriv: &DerivativeState,
    model: &ModelAtTheta,
    noise: &NoiseTangents,
    z: &Vector,
) -> Result<Matrix> {
    let dims = model.dims();
    let Dimensions { n, m, q, p } = dims;
    if z.len() != m {
        return Err(Error::InvalidArgument(format!(
            "measurement has length {}, expected {m}",
            z.len()
        )));
    }
    let base = crate::esrcf::build_prearray(state, model, &noise.factors, z)?;
    let mut pre = Matrix::zeros(m + n + q, (m + n + 1) * (1 + p));
    pre.view_mut((0, 0), base.shape()).copy_from(&base);

    let r_sqrt = &noise.factors.r_sqrt;
    let r_inv_t_z = solve_upper_vec(r_sqrt, z, Side::TransposedLeft)?;
    let s = state.s.as_matrix();
    let q_sqrt = noise.factors.q_sqrt.as_matrix();
    for i in 0..p {
        let o = block_offset(dims, i);
        let dr = &noise.dr_sqrt[i];
        let ds = deriv.ds[i].as_matrix();
        // ∂(−R^{−T/2}z) = R^{−T/2}·dR^{T/2}·R^{−T/2}z
        let d_last = solve_upper_vec(r_sqrt, &(dr.transpose() * &r_inv_t_z), Side::TransposedLeft)?;

        pre.view_mut((0, o), (m, m)).copy_from(dr);
        pre.view_mut((0, o + m + n), (m, 1)).copy_from(&d_last);
        pre.view_mut((m, o), (n, m))
            .copy_from(&(ds * model.h.transpose() + s * model.dh[i].transpose()));
        pre.view_mut((m, o + m), (n, n))
            .copy_from(&(ds * model.f.transpose() + s * model.df[i].transpose()));
        pre.view_mut((m, o + m + n), (n, 1)).copy_from(&deriv.db[i]);
        pre.view_mut((m + n, o + m), (q, n)).copy_from(
            &(&noise.dq_sqrt[i] * model.g.transpose() + q_sqrt * model.dg[i].transpose()),
        );
    }
    Ok(pre)
}

/// Rotate the augmented array and partition the result.
pub fn triangularize_augmented(prearray: &Matrix, dims: Dimensions) -> Result<PostArrayBlocks> {
    let Dimensions { n, m, q, p } = dims;
    if prearray.shape() != (m + n + q, (m + n + 1) * (1 + p)) {
        return Err(Error::InvalidArgument(format!(
            "augmented pre-array is {}x{}, expected {}x{}",
            prearray.nrows(),
            prearray.ncols(),
            m + n + q,
            (m + n + 1) * (1 + p)
        )));
    }
    let lead_cols = m + n;
    let post = householder_block_triangularize(prearray, lead_cols)?;
    let filt = read_post_array(&post, dims, innovation_threshold(prearray, lead_cols))?;
    let lead =
        UpperTriangular::from_upper_part(&post.view((0, 0), (lead_cols, lead_cols)).into_owned());

    let derivatives = (0..p)
        .map(|i| {
            let o = block_offset(dims, i);
            let blk =
                |r: usize, c: usize, h: usize, w: usize| post.view((r, o + c), (h, w)).into_owned();
            let col = |r: usize, h: usize| post.view((r, o + m + n), (h, 1)).column(0).into_owned();
            DerivativeBlocks {
                top_left: blk(0, 0, m, m),
                top_mid: blk(0, m, m, n),
                top_last: col(0, m),
                mid_left: blk(m, 0, n, m),
                mid_mid: blk(m, m, n, n),
                mid_last: col(m, n),
                bottom_left: blk(m + n, 0, q, m),
                bottom_mid: blk(m + n, m, q, n),
                bottom_last: col(m + n, q),
            }
        })
        .collect();

    Ok(PostArrayBlocks {
        re_sqrt: filt.re_sqrt,
        kbar_t: filt.kbar_t,
        ebar: filt.ebar,
        gamma: filt.gamma,
        next: filt.next,
        lead,
        derivatives,
    })
}

fn stack_rows(top: &Matrix, bottom: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.view_mut((0, 0), top.shape()).copy_from(top);
    out.view_mut((top.nrows(), 0), bottom.shape())
        .copy_from(bottom);
    out
}

fn join_cols(left: &Matrix, right: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(left.nrows(), left.ncols() + right.ncols());
    out.view_mut((0, 0), left.shape()).copy_from(left);
    out.view_mut((0, left.ncols()), right.shape())
        .copy_from(right);
    out
}

/// Split of `[X Y; N V]·T⁻¹` for parameter `i`, the inverse applied by
/// right-substitution against the triangular block `T`.
pub fn ldu_of_product(blocks: &PostArrayBlocks, i: usize) -> Result<LduSplit> {
    let d = blocks
        .derivatives
        .get(i)
        .ok_or_else(|| Error::InvalidArgument(format!("no derivative block for parameter {i}")))?;
    let rotated = stack_rows(
        &join_cols(&d.top_left, &d.top_mid),
        &join_cols(&d.mid_left, &d.mid_mid),
    );
    let product = solve_upper(&blocks.lead, &rotated, Side::Right)?;
    strict_ldu_split(&product)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorDerivatives {
    pub dre_sqrt: UpperTriangular,
    pub dkbar_t: Matrix,
    pub ds_next: UpperTriangular,
    /// Largest entry of the lower-left block before it was zeroed, relative
    /// to the largest entry of the whole product.
    pub zero_block_residual: f64,
}

/// `[dRe^{1/2} dK̄ᵀ; 0 dS_next] = (Lᵀ + D + U)·T`.
pub fn update_factor_derivatives(
    blocks: &PostArrayBlocks,
    split: &LduSplit,
    _i: usize,
) -> Result<FactorDerivatives> {
    let (m, n, _) = blocks.dims();
    let coeff = split.strict_lower.transpose() + &split.diagonal + &split.strict_upper;
    let full = coeff * blocks.lead.as_matrix();
    let scale = full.amax();
    let lower_left = full.view((m, 0), (n, m)).amax();
    let residual = if scale > 0.0 {
        lower_left / scale
    } else {
        lower_left
    };
    if !(residual <= ZERO_BLOCK_TOLERANCE) {
        return Err(Error::StepFailure {
            step: 0,
            message: format!(
                "factor-derivative lower block not negligible (relative {residual:e})"
            ),
        });
    }
    let dre = full.view((0, 0), (m, m)).into_owned();
    let ds_next = full.view((m, m), (n, n)).into_owned();
    Ok(FactorDerivatives {
        dre_sqrt: UpperTriangular::from_upper_part(&dre),
        dkbar_t: full.view((0, m), (m, n)).into_owned(),
        ds_next: UpperTriangular::from_upper_part(&ds_next),
        zero_block_residual: residual,
    })
}

/// `(dē, db_next)` for parameter `i`.
pub fn update_state_derivatives(
    blocks: &PostArrayBlocks,
    split: &LduSplit,
    i: usize,
) -> Result<(Vector, Vector)> {
    let (m, n, _) = blocks.dims();
    let d = blocks
        .derivatives
        .get(i)
        .ok_or_else(|| Error::InvalidArgument(format!("no derivative block for parameter {i}")))?;

    let mut carried = Vector::zeros(m + n);
    carried.rows_mut(0, m).copy_from(&(-&blocks.ebar));
    carried.rows_mut(m, n).copy_from(&blocks.next.b);
    let skew = split.strict_lower.transpose() - &split.strict_lower;

    // T^{−T}·[B K]ᵀ·γ
    let noise_rows = join_cols(&d.bottom_left, &d.bottom_mid);
    let coupled = noise_rows.transpose() * &blocks.gamma;
    let noise_term = solve_upper_vec(&blocks.lead, &coupled, Side::TransposedLeft)?;

    let mut rotated = Vector::zeros(m + n);
    rotated.rows_mut(0, m).copy_from(&d.top_last);
    rotated.rows_mut(m, n).copy_from(&d.mid_last);

    let out = skew * carried + noise_term + rotated;
    let debar = -out.rows(0, m).into_owned();
    let db_next = out.rows(m, n).into_owned();
    Ok((debar, db_next))
}

/// One step's gradient increment `Σ_j dRe_jj / Re_jj + ēᵀdē`.
pub fn score_increment(
    re_sqrt: &UpperTriangular,
    dre_sqrt: &UpperTriangular,
    ebar: &Vector,
    debar: &Vector,
) -> f64 {
    let r = re_sqrt.as_matrix();
    let dr = dre_sqrt.as_matrix();
    let trace: f64 = (0..r.nrows()).map(|j| dr[(j, j)] / r[(j, j)]).sum();
    trace + ebar.dot(debar)
}

/// Add parameter `i`'s step increment into `acc.gradient[i]`.
pub fn score_step_accumulate(
    blocks: &PostArrayBlocks,
    dre_sqrt: &UpperTriangular,
    debar: &Vector,
    i: usize,
    acc: &mut ScoreResult,
) {
    acc.gradient[i] += score_increment(&blocks.re_sqrt, dre_sqrt, &blocks.ebar, debar);
}

/// Everything computed for one parameter in one step.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStep {
    pub factors: FactorDerivatives,
    pub debar: Vector,
    pub db_next: Vector,
}

/// Output of a single extended step.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreStep {
    pub blocks: PostArrayBlocks,
    pub per_parameter: Vec<ParameterStep>,
}

impl ScoreStep {
    pub fn next_derivatives(&self) -> DerivativeState {
        DerivativeState {
            ds: self
                .per_parameter
                .iter()
                .map(|s| s.factors.ds_next.clone())
                .collect(),
            db: self
                .per_parameter
                .iter()
                .map(|s| s.db_next.clone())
                .collect(),
        }
    }
}

/// One step of the extended filter: rotate the augmented array, then update
/// the factor derivatives before the state derivatives for every parameter.
pub fn score_step(
    state: &SqrtFilterState,
    deriv: &DerivativeState,
    model: &ModelAtTheta,
    noise: &NoiseTangents,
    z: &Vector,
) -> Result<ScoreStep> {
    let pre = build_augmented_prearray(state, deriv, model, noise, z)?;
    let blocks = triangularize_augmented(&pre, model.dims())?;
    let per_parameter = (0..blocks.derivatives.len())
        .map(|i| {
            let split = ldu_of_product(&blocks, i)?;
            let factors = update_factor_derivatives(&blocks, &split, i)?;
            let (debar, db_next) = update_state_derivatives(&blocks, &split, i)?;
            Ok(ParameterStep {
                factors,
                debar,
                db_next,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreStep {
        blocks,
        per_parameter,
    })
}

/// Carried quantities after one processed step.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSnapshot {
    pub state: SqrtFilterState,
    pub deriv: DerivativeState,
    pub ebar: Vector,
    pub debar: Vec<Vector>,
    pub re_sqrt: UpperTriangular,
    pub dre_sqrt: Vec<UpperTriangular>,
    pub zero_block_residual: f64,
}

#[derive(Debug, Clone)]
pub struct ScoreRun {
    pub result: ScoreResult,
    pub trace: Vec<ScoreSnapshot>,
}

/// Single pass over `data` computing the negative log-likelihood and its
/// gradient together. Numerical breakdowns are recorded in the result.
pub fn run_traced(
    spec: &dyn ModelSpec,
    theta: &[f64],
    data: &Trajectory,
    trace: bool,
) -> Result<ScoreRun> {
    let first = evaluate(spec, theta, 1)?;
    let dims = first.dims();
    let mut result = ScoreResult::new(dims.p);
    let mut snapshots = Vec::new();

    let mut state = esrcf_init(&first)?;
    let mut deriv = init_derivatives(&first, &state)?;
    let first_noise = NoiseTangents::new(&first)?;

    for (idx, z) in data.z.iter().enumerate() {
        let k = idx + 1;
        let (owned_model, owned_noise);
        let (model, noise) = if k == 1 || spec.time_invariant() {
            (&first, &first_noise)
        } else {
            owned_model = evaluate(spec, theta, k)?;
            owned_noise = NoiseTangents::new(&owned_model)?;
            (&owned_model, &owned_noise)
        };
        let step = match score_step(&state, &deriv, model, noise, z) {
            Ok(step) => step,
            Err(
                e @ (Error::SingularInnovation { .. }
                | Error::SingularFactor { .. }
                | Error::StepFailure { .. }),
            ) => {
                let e = match e {
                    Error::StepFailure { message, .. } => Error::StepFailure { step: k, message },
                    other => other.at_step(k),
                };
                result.fail(k, &e);
                break;
            }
            Err(e) => return Err(e),
        };

        let blocks = &step.blocks;
        result.steps.push(StepDiagnostics {
            cond_re: symmetric_condition(&blocks.re_sqrt.gram()),
        });
        result.loglik += crate::esrcf::esrcf_step_loglik(&crate::esrcf::EsrcfStepOutput {
            re_sqrt: blocks.re_sqrt.clone(),
            kbar_t: blocks.kbar_t.clone(),
            ebar: blocks.ebar.clone(),
            gamma: blocks.gamma.clone(),
            next: blocks.next.clone(),
        });
        for (i, ps) in step.per_parameter.iter().enumerate() {
            score_step_accumulate(blocks, &ps.factors.dre_sqrt, &ps.debar, i, &mut result);
        }

        deriv = step.next_derivatives();
        state = blocks.next.clone();
        if trace {
            snapshots.push(ScoreSnapshot {
                state: state.clone(),
                deriv: deriv.clone(),
                ebar: blocks.ebar.clone(),
                debar: step.per_parameter.iter().map(|s| s.debar.clone()).collect(),
                re_sqrt: blocks.re_sqrt.clone(),
                dre_sqrt: step
                    .per_parameter
                    .iter()
                    .map(|s| s.factors.dre_sqrt.clone())
                    .collect(),
                zero_block_residual: step
                    .per_parameter
                    .iter()
                    .map(|s| s.factors.zero_block_residual)
                    .fold(0.0, f64::max),
            });
        }
    }
    Ok(ScoreRun {
        result,
        trace: snapshots,
    })
}

/// Negative log-likelihood and gradient by the square-root method.
pub fn run(spec: &dyn ModelSpec, theta: &[f64], data: &Trajectory) -> Result<ScoreResult> {
    Ok(run_traced(spec, theta, data, false)?.result)
}
