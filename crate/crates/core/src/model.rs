//! Parameterized linear Gaussian state-space models.
//!
//! A model maps a parameter vector θ and a 1-based step index k to the
//! system matrices
//!
//! ```text
//! x_{k+1} = F x_k + G w_k,   w_k ~ N(0, Q)
//! z_k     = H x_k + v_k,     v_k ~ N(0, R)
//! ```
//!
//! together with their analytic θ-derivatives. The prior `N(x̄₀, Π₀)` is the
//! predicted distribution of the state at the first measurement.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_upper, Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimensions {
    /// state
    pub n: usize,
    /// measurement
    pub m: usize,
    /// process noise
    pub q: usize,
    /// parameters
    pub p: usize,
}

/// System matrices and their per-parameter derivatives at one θ and step.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelAtTheta {
    pub f: Matrix,
    pub g: Matrix,
    pub h: Matrix,
    pub q_cov: Matrix,
    pub r_cov: Matrix,
    pub pi0: Matrix,
    pub x0: Vector,
    pub df: Vec<Matrix>,
    pub dg: Vec<Matrix>,
    pub dh: Vec<Matrix>,
    pub dq_cov: Vec<Matrix>,
    pub dr_cov: Vec<Matrix>,
    pub dpi0: Vec<Matrix>,
    pub dx0: Vec<Vector>,
    /// Optional direct derivatives of the upper Cholesky factor of Π₀. When
    /// present they replace the factor derivative computed from `dpi0`.
    pub dpi0_sqrt: Option<Vec<Matrix>>,
}

impl ModelAtTheta {
    /// Matrices with all derivative stacks set to zero for `p` parameters.
    #[allow(clippy::too_many_arguments)]
    pub fn constant(
        f: Matrix,
        g: Matrix,
        h: Matrix,
        q_cov: Matrix,
        r_cov: Matrix,
        pi0: Matrix,
        x0: Vector,
        p: usize,
    ) -> Self {
        let z = |m: &Matrix| vec![Matrix::zeros(m.nrows(), m.ncols()); p];
        Self {
            df: z(&f),
            dg: z(&g),
            dh: z(&h),
            dq_cov: z(&q_cov),
            dr_cov: z(&r_cov),
            dpi0: z(&pi0),
            dx0: vec![Vector::zeros(x0.len()); p],
            dpi0_sqrt: None,
            f,
            g,
            h,
            q_cov,
            r_cov,
            pi0,
            x0,
        }
    }

    pub fn dims(&self) -> Dimensions {
        Dimensions {
            n: self.f.nrows(),
            m: self.h.nrows(),
            q: self.g.ncols(),
            p: self.df.len(),
        }
    }

    /// Check shapes and symmetry of every matrix and derivative.
    pub fn validate(&self) -> Result<()> {
        let Dimensions { n, m, q, p } = self.dims();
        let bad = |what: &str| {
            Err(Error::InvalidArgument(format!(
                "{what} has the wrong shape"
            )))
        };
        if n == 0 || m == 0 || q == 0 {
            return Err(Error::InvalidArgument(
                "model dimensions must be positive".into(),
            ));
        }
        if self.f.shape() != (n, n) {
            return bad("F");
        }
        if self.g.shape() != (n, q) {
            return bad("G");
        }
        if self.h.shape() != (m, n) {
            return bad("H");
        }
        if self.q_cov.shape() != (q, q) {
            return bad("Q");
        }
        if self.r_cov.shape() != (m, m) {
            return bad("R");
        }
        if self.pi0.shape() != (n, n) {
            return bad("Pi0");
        }
        if self.x0.len() != n {
            return bad("x0");
        }
        let stacks: [(&str, &Vec<Matrix>, (usize, usize), bool); 6] = [
            ("dF", &self.df, (n, n), false),
            ("dG", &self.dg, (n, q), false),
            ("dH", &self.dh, (m, n), false),
            ("dQ", &self.dq_cov, (q, q), true),
            ("dR", &self.dr_cov, (m, m), true),
            ("dPi0", &self.dpi0, (n, n), true),
        ];
        for (what, stack, shape, sym) in stacks {
            if stack.len() != p {
                return Err(Error::InvalidArgument(format!(
                    "{what} holds {} matrices, expected {p}",
                    stack.len()
                )));
            }
            for d in stack {
                if d.shape() != shape {
                    return bad(what);
                }
                if sym && d != &d.transpose() {
                    return Err(Error::InvalidArgument(format!("{what} is not symmetric")));
                }
            }
        }
        if self.dx0.len() != p || self.dx0.iter().any(|v| v.len() != n) {
            return bad("dx0");
        }
        if let Some(ds) = &self.dpi0_sqrt {
            if ds.len() != p || ds.iter().any(|d| d.shape() != (n, n)) {
                return bad("dPi0_sqrt");
            }
        }
        for (what, s) in [("Q", &self.q_cov), ("R", &self.r_cov), ("Pi0", &self.pi0)] {
            if s != &s.transpose() {
                return Err(Error::InvalidArgument(format!("{what} is not symmetric")));
            }
        }
        let all_finite = [
            &self.f,
            &self.g,
            &self.h,
            &self.q_cov,
            &self.r_cov,
            &self.pi0,
        ]
        .iter()
        .all(|m| m.iter().all(|v| v.is_finite()));
        if !all_finite || self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "model entries must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// A parameterized model: θ and step index ↦ [`ModelAtTheta`].
pub trait ModelSpec: Send + Sync {
    fn name(&self) -> &str;
    fn dims(&self) -> Dimensions;
    /// Evaluate at `theta` for the 1-based step `k`.
    fn evaluate(&self, theta: &[f64], k: usize) -> Result<ModelAtTheta>;
    /// Whether `evaluate` ignores `k`, letting filters evaluate once per run.
    fn time_invariant(&self) -> bool {
        true
    }
}

impl<T: ModelSpec + ?Sized> ModelSpec for Arc<T> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn dims(&self) -> Dimensions {
        (**self).dims()
    }
    fn evaluate(&self, theta: &[f64], k: usize) -> Result<ModelAtTheta> {
        (**self).evaluate(theta, k)
    }
    fn time_invariant(&self) -> bool {
        (**self).time_invariant()
    }
}

impl<T: ModelSpec + ?Sized> ModelSpec for Box<T> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn dims(&self) -> Dimensions {
        (**self).dims()
    }
    fn evaluate(&self, theta: &[f64], k: usize) -> Result<ModelAtTheta> {
        (**self).evaluate(theta, k)
    }
    fn time_invariant(&self) -> bool {
        (**self).time_invariant()
    }
}

fn check_theta(theta: &[f64], p: usize) -> Result<()> {
    if theta.len() != p {
        return Err(Error::InvalidArgument(format!(
            "expected {p} parameters, got {}",
            theta.len()
        )));
    }
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::Domain("parameters must be finite".into()));
    }
    Ok(())
}

/// Two-state tracking model with an exponentially correlated input:
/// `F = [[1, Δt], [0, e^{−Δt/τ}]]`, `G = [0; 1]`, `H = [1, 0]`, unit noises,
/// `θ = (τ)`.
#[derive(Debug, Clone)]
pub struct Example1 {
    pub delta_t: f64,
    name: String,
}

pub fn example1_spec(delta_t: f64) -> Result<Example1> {
    if !(delta_t > 0.0 && delta_t.is_finite()) {
        return Err(Error::Domain(format!(
            "delta_t must be positive, got {delta_t}"
        )));
    }
    Ok(Example1 {
        delta_t,
        name: "example1".into(),
    })
}

impl ModelSpec for Example1 {
    fn name(&self) -> &str {
        &self.name
    }

    fn dims(&self) -> Dimensions {
        Dimensions {
            n: 2,
            m: 1,
            q: 1,
            p: 1,
        }
    }

    fn evaluate(&self, theta: &[f64], _k: usize) -> Result<ModelAtTheta> {
        check_theta(theta, 1)?;
        let tau = theta[0];
        if tau <= 0.0 {
            return Err(Error::Domain(format!("tau must be positive, got {tau}")));
        }
        let dt = self.delta_t;
        let decay = (-dt / tau).exp();
        let f = Matrix::from_row_slice(2, 2, &[1.0, dt, 0.0, decay]);
        let mut model = ModelAtTheta::constant(
            f,
            Matrix::from_row_slice(2, 1, &[0.0, 1.0]),
            Matrix::from_row_slice(1, 2, &[1.0, 0.0]),
            Matrix::identity(1, 1),
            Matrix::identity(1, 1),
            Matrix::identity(2, 2),
            Vector::zeros(2),
            1,
        );
        model.df[0][(1, 1)] = dt / (tau * tau) * decay;
        Ok(model)
    }
}

/// Ill-conditioned three-state benchmark:
/// `H = [[1,1,1],[1,1,1+δ]]`, `F = I₃`, `G = 0`, `Q = I₁`, `R = δ²θI₂`,
/// `Π₀ = θI₃`, `x̄₀ = 0`.
///
/// `G = 0` is stored as a 3×1 zero column so the noise block keeps a valid
/// shape.
#[derive(Debug, Clone)]
pub struct Example3 {
    pub delta: f64,
    name: String,
}

pub fn example3_spec(delta: f64) -> Result<Example3> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Domain(format!(
            "delta must be positive, got {delta}"
        )));
    }
    Ok(Example3 {
        delta,
        name: "example3".into(),
    })
}

impl Example3 {
    pub fn h(&self) -> Matrix {
        Matrix::from_row_slice(2, 3, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0 + self.delta])
    }
}

impl ModelSpec for Example3 {
    fn name(&self) -> &str {
        &self.name
    }

    fn dims(&self) -> Dimensions {
        Dimensions {
            n: 3,
            m: 2,
            q: 1,
            p: 1,
        }
    }

    fn evaluate(&self, theta: &[f64], _k: usize) -> Result<ModelAtTheta> {
        check_theta(theta, 1)?;
        let th = theta[0];
        if th <= 0.0 {
            return Err(Error::Domain(format!("theta must be positive, got {th}")));
        }
        let d2 = self.delta * self.delta;
        let mut model = ModelAtTheta::constant(
            Matrix::identity(3, 3),
            Matrix::zeros(3, 1),
            self.h(),
            Matrix::identity(1, 1),
            Matrix::identity(2, 2) * (d2 * th),
            Matrix::identity(3, 3) * th,
            Vector::zeros(3),
            1,
        );
        model.dr_cov[0] = Matrix::identity(2, 2) * d2;
        model.dpi0[0] = Matrix::identity(3, 3);
        Ok(model)
    }
}

/// Wraps a model and pins it at a fixed θ: every evaluation returns the
/// matrices at the pinned point with exactly-zero derivative stacks.
#[derive(Debug, Clone)]
pub struct Frozen<M> {
    inner: M,
    pinned: Vec<f64>,
    name: String,
}

impl<M: ModelSpec> Frozen<M> {
    pub fn new(inner: M, pinned: Vec<f64>) -> Result<Self> {
        check_theta(&pinned, inner.dims().p)?;
        inner.evaluate(&pinned, 1)?;
        let name = format!("{}-frozen", inner.name());
        Ok(Self {
            inner,
            pinned,
            name,
        })
    }
}

impl<M: ModelSpec> ModelSpec for Frozen<M> {
    fn name(&self) -> &str {
        &self.name
    }
    fn dims(&self) -> Dimensions {
        self.inner.dims()
    }
    fn evaluate(&self, theta: &[f64], k: usize) -> Result<ModelAtTheta> {
        check_theta(theta, self.dims().p)?;
        let m = self.inner.evaluate(&self.pinned, k)?;
        let p = m.dims().p;
        Ok(ModelAtTheta::constant(
            m.f, m.g, m.h, m.q_cov, m.r_cov, m.pi0, m.x0, p,
        ))
    }
    fn time_invariant(&self) -> bool {
        self.inner.time_invariant()
    }
}

/// Model defined by a closure; handy for tests and ad-hoc parameterizations.
pub struct FnModel<F> {
    name: String,
    dims: Dimensions,
    eval: F,
}

impl<F> FnModel<F>
where
    F: Fn(&[f64], usize) -> Result<ModelAtTheta> + Send + Sync,
{
    pub fn new(name: impl Into<String>, dims: Dimensions, eval: F) -> Self {
        Self {
            name: name.into(),
            dims,
            eval,
        }
    }
}

impl<F> ModelSpec for FnModel<F>
where
    F: Fn(&[f64], usize) -> Result<ModelAtTheta> + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }
    fn dims(&self) -> Dimensions {
        self.dims
    }
    fn evaluate(&self, theta: &[f64], k: usize) -> Result<ModelAtTheta> {
        check_theta(theta, self.dims.p)?;
        (self.eval)(theta, k)
    }
}

/// Literal matrices for one point (or one derivative direction) of a custom
/// model, in row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSet {
    pub f: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub pi0: Vec<Vec<f64>>,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
}

fn to_matrix(rows: &[Vec<f64>], what: &str) -> Result<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!(
            "matrix {what} must be a nonempty rectangular array"
        )));
    }
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

/// Custom model affine in θ: `M(θ) = M_base + Σ θᵢ·M_i`, so the literal
/// direction matrices `M_i` are the exact derivatives.
#[derive(Debug, Clone)]
pub struct AffineModel {
    name: String,
    base: ModelAtTheta,
    directions: Vec<ModelAtTheta>,
}

impl AffineModel {
    pub fn from_sets(
        name: impl Into<String>,
        base: &MatrixSet,
        derivatives: &[MatrixSet],
    ) -> Result<Self> {
        let convert = |s: &MatrixSet| -> Result<ModelAtTheta> {
            let f = to_matrix(&s.f, "f")?;
            let n = f.nrows();
            let x0 = match &s.x0 {
                Some(v) => Vector::from_vec(v.clone()),
                None => Vector::zeros(n),
            };
            Ok(ModelAtTheta::constant(
                f,
                to_matrix(&s.g, "g")?,
                to_matrix(&s.h, "h")?,
                to_matrix(&s.q, "q")?,
                to_matrix(&s.r, "r")?,
                to_matrix(&s.pi0, "pi0")?,
                x0,
                0,
            ))
        };
        let base = convert(base)?;
        base.validate()?;
        let directions = derivatives
            .iter()
            .map(convert)
            .collect::<Result<Vec<_>>>()?;
        for d in &directions {
            if d.dims() != base.dims() {
                return Err(Error::Config(
                    "derivative matrices must match the base shapes".into(),
                ));
            }
            d.validate()?;
        }
        Ok(Self {
            name: name.into(),
            base,
            directions,
        })
    }
}

impl ModelSpec for AffineModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn dims(&self) -> Dimensions {
        Dimensions {
            p: self.directions.len(),
            ..self.base.dims()
        }
    }

    fn evaluate(&self, theta: &[f64], _k: usize) -> Result<ModelAtTheta> {
        let p = self.directions.len();
        check_theta(theta, p)?;
        let mut m = ModelAtTheta::constant(
            self.base.f.clone(),
            self.base.g.clone(),
            self.base.h.clone(),
            self.base.q_cov.clone(),
            self.base.r_cov.clone(),
            self.base.pi0.clone(),
            self.base.x0.clone(),
            p,
        );
        for (i, (d, &t)) in self.directions.iter().zip(theta).enumerate() {
            m.f += &d.f * t;
            m.g += &d.g * t;
            m.h += &d.h * t;
            m.q_cov += &d.q_cov * t;
            m.r_cov += &d.r_cov * t;
            m.pi0 += &d.pi0 * t;
            m.x0 += &d.x0 * t;
            m.df[i] = d.f.clone();
            m.dg[i] = d.g.clone();
            m.dh[i] = d.h.clone();
            m.dq_cov[i] = d.q_cov.clone();
            m.dr_cov[i] = d.r_cov.clone();
            m.dpi0[i] = d.pi0.clone();
            m.dx0[i] = d.x0.clone();
        }
        Ok(m)
    }
}

/// Model selection as it appears in a JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelConfig {
    Example1 {
        #[serde(default = "default_delta_t")]
        delta_t: f64,
    },
    Example3 {
        #[serde(default = "default_delta")]
        delta: f64,
    },
    Custom {
        #[serde(default = "default_custom_name")]
        name: String,
        base: MatrixSet,
        derivatives: Vec<MatrixSet>,
    },
}

fn default_delta_t() -> f64 {
    0.1
}

fn default_delta() -> f64 {
    1e-2
}

fn default_custom_name() -> String {
    "custom".into()
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Example1 {
            delta_t: default_delta_t(),
        }
    }
}

impl ModelConfig {
    pub fn build(&self) -> Result<Box<dyn ModelSpec>> {
        Ok(match self {
            ModelConfig::Example1 { delta_t } => Box::new(example1_spec(*delta_t)?),
            ModelConfig::Example3 { delta } => Box::new(example3_spec(*delta)?),
            ModelConfig::Custom {
                name,
                base,
                derivatives,
            } => Box::new(AffineModel::from_sets(name.clone(), base, derivatives)?),
        })
    }
}

/// Evaluate a model, checking the result is well formed.
pub fn evaluate(spec: &dyn ModelSpec, theta: &[f64], k: usize) -> Result<ModelAtTheta> {
    let m = spec.evaluate(theta, k)?;
    m.validate()?;
    Ok(m)
}

/// Simulated measurement record, `z[k-1]` holding the measurement of step k.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub z: Vec<Vector>,
    pub x: Option<Vec<Vector>>,
}

impl Trajectory {
    pub fn new(z: Vec<Vector>) -> Result<Self> {
        if z.is_empty() {
            return Err(Error::InvalidArgument(
                "trajectory needs at least one measurement".into(),
            ));
        }
        if z.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::InvalidArgument("measurements must be finite".into()));
        }
        Ok(Self { z, x: None })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimulateOptions {
    /// Skip every random draw: `x₁ = x̄₀`, no process or measurement noise.
    pub zero_noise: bool,
}

/// Draw a trajectory of `n_steps` measurements with a seeded ChaCha8 stream.
pub fn simulate(
    spec: &dyn ModelSpec,
    theta: &[f64],
    n_steps: usize,
    seed: u64,
) -> Result<Trajectory> {
    simulate_with(spec, theta, n_steps, seed, SimulateOptions::default())
}

pub fn simulate_with(
    spec: &dyn ModelSpec,
    theta: &[f64],
    n_steps: usize,
    seed: u64,
    options: SimulateOptions,
) -> Result<Trajectory> {
    if n_steps == 0 {
        return Err(Error::InvalidArgument("n_steps must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |cov: &Matrix, rng: &mut ChaCha8Rng| -> Result<Vector> {
        let u = cholesky_upper(cov)?;
        let xi = Vector::from_fn(cov.nrows(), |_, _| StandardNormal.sample(rng));
        Ok(u.as_matrix().transpose() * xi)
    };

    let first = evaluate(spec, theta, 1)?;
    let mut x = first.x0.clone();
    if !options.zero_noise {
        x += draw(&first.pi0, &mut rng)?;
    }
    let mut zs = Vec::with_capacity(n_steps);
    let mut xs = Vec::with_capacity(n_steps);
    for k in 1..=n_steps {
        let owned;
        let model = if k == 1 || spec.time_invariant() {
            &first
        } else {
            owned = evaluate(spec, theta, k)?;
            &owned
        };
        let mut z = &model.h * &x;
        if !options.zero_noise {
            z += draw(&model.r_cov, &mut rng)?;
        }
        zs.push(z);
        xs.push(x.clone());
        let mut next = &model.f * &x;
        if !options.zero_noise {
            next += &model.g * draw(&model.q_cov, &mut rng)?;
        }
        x = next;
    }
    Ok(Trajectory { z: zs, x: Some(xs) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::test_util::*;
    use nalgebra::dmatrix;
    use rand::Rng;

    #[test]
    fn example1_values() {
        let spec = example1_spec(0.1).unwrap();
        let m = evaluate(&spec, &[1.0], 1).unwrap();
        assert_eq!(m.f, dmatrix![1.0, 0.1; 0.0, (-0.1f64).exp()]);
        assert_eq!(m.df[0], dmatrix![0.0, 0.0; 0.0, 0.1 * (-0.1f64).exp()]);
        assert_eq!(m.dq_cov[0], Matrix::zeros(1, 1));
        assert_eq!(m.dr_cov[0], Matrix::zeros(1, 1));
        let far = evaluate(&spec, &[1e12], 1).unwrap();
        assert!((far.f[(1, 1)] - 1.0).abs() < 1e-12);
        assert!(matches!(spec.evaluate(&[0.0], 1), Err(Error::Domain(_))));
        assert!(matches!(spec.evaluate(&[-1.0], 1), Err(Error::Domain(_))));
    }

    #[test]
    fn example3_values() {
        let spec = example3_spec(1e-2).unwrap();
        let m = evaluate(&spec, &[2.0], 1).unwrap();
        let r = Matrix::identity(2, 2) * (1e-4 * 2.0);
        assert!((m.r_cov.clone() - r).amax() < 1e-20);
        assert!((m.dr_cov[0].clone() - Matrix::identity(2, 2) * 1e-4).amax() < 1e-20);
        assert_eq!(m.pi0, Matrix::identity(3, 3) * 2.0);
        assert_eq!(m.dh[0], Matrix::zeros(2, 3));
        assert_eq!(m.g, Matrix::zeros(3, 1));
        assert_eq!(m.h, dmatrix![1.0, 1.0, 1.0; 1.0, 1.0, 1.01]);
    }

    fn fd_check(spec: &dyn ModelSpec, theta: &[f64]) {
        let m = evaluate(spec, theta, 1).unwrap();
        let eps = 1e-6;
        for i in 0..theta.len() {
            let mut tp = theta.to_vec();
            let mut tm = theta.to_vec();
            tp[i] += eps;
            tm[i] -= eps;
            let a = evaluate(spec, &tp, 1).unwrap();
            let b = evaluate(spec, &tm, 1).unwrap();
            let pairs = [
                (&a.f, &b.f, &m.df[i]),
                (&a.g, &b.g, &m.dg[i]),
                (&a.h, &b.h, &m.dh[i]),
                (&a.q_cov, &b.q_cov, &m.dq_cov[i]),
                (&a.r_cov, &b.r_cov, &m.dr_cov[i]),
                (&a.pi0, &b.pi0, &m.dpi0[i]),
            ];
            for (p, q, d) in pairs {
                let fd = (p - q) / (2.0 * eps);
                assert!((fd - d).amax() < 1e-6);
            }
        }
    }

    #[test]
    fn analytic_derivatives_match_differences() {
        let mut r = rng(21);
        let e1 = example1_spec(0.1).unwrap();
        let e3 = example3_spec(1e-2).unwrap();
        for _ in 0..10 {
            fd_check(&e1, &[r.random_range(0.5..20.0)]);
            fd_check(&e3, &[r.random_range(0.5..5.0)]);
        }
    }

    #[test]
    fn frozen_model_has_zero_derivatives() {
        let spec = Frozen::new(example1_spec(0.1).unwrap(), vec![5.0]).unwrap();
        let a = evaluate(&spec, &[2.0], 1).unwrap();
        let b = evaluate(&spec, &[7.0], 1).unwrap();
        assert_eq!(a, b);
        assert!(a.df[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn affine_model_from_json() {
        let json = r#"{"kind":"custom","name":"scalar","base":{"f":[[0.9]],"g":[[1.0]],"h":[[1.0]],"q":[[0.5]],"r":[[1.0]],"pi0":[[1.0]]},
            "derivatives":[{"f":[[0.0]],"g":[[0.0]],"h":[[0.0]],"q":[[0.0]],"r":[[1.0]],"pi0":[[0.0]]}]}"#;
        let cfg: ModelConfig = serde_json::from_str(json).unwrap();
        let spec = cfg.build().unwrap();
        assert_eq!(
            spec.dims(),
            Dimensions {
                n: 1,
                m: 1,
                q: 1,
                p: 1
            }
        );
        let m = evaluate(spec.as_ref(), &[0.5], 1).unwrap();
        assert_eq!(m.r_cov, dmatrix![1.5]);
        assert_eq!(m.dr_cov[0], dmatrix![1.0]);
        fd_check(spec.as_ref(), &[0.5]);
    }

    #[test]
    fn simulate_is_deterministic() {
        let spec = example1_spec(0.1).unwrap();
        let a = simulate(&spec, &[5.0], 50, 42).unwrap();
        let b = simulate(&spec, &[5.0], 50, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate(&spec, &[5.0], 50, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noise_free_propagation() {
        let f = dmatrix![0.9, 0.2; -0.1, 1.05];
        let x0 = Vector::from_vec(vec![1.0, -2.0]);
        let (f2, x02) = (f.clone(), x0.clone());
        let spec = FnModel::new(
            "det",
            Dimensions {
                n: 2,
                m: 2,
                q: 1,
                p: 1,
            },
            move |_t, _k| {
                Ok(ModelAtTheta::constant(
                    f2.clone(),
                    Matrix::zeros(2, 1),
                    Matrix::identity(2, 2),
                    Matrix::identity(1, 1),
                    Matrix::identity(2, 2),
                    Matrix::identity(2, 2),
                    x02.clone(),
                    1,
                ))
            },
        );
        let traj =
            simulate_with(&spec, &[1.0], 6, 0, SimulateOptions { zero_noise: true }).unwrap();
        let mut expect = x0;
        for z in &traj.z {
            assert_eq!(z, &expect);
            expect = &f * expect;
        }
    }

    #[test]
    fn measurement_noise_variance() {
        let spec = example1_spec(0.1).unwrap();
        let traj = simulate(&spec, &[5.0], 1000, 7).unwrap();
        let xs = traj.x.as_ref().unwrap();
        let v: Vec<f64> = traj.z.iter().zip(xs).map(|(z, x)| z[0] - x[0]).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        assert!((var - 1.0).abs() < 0.1, "variance {var}");
    }

    #[test]
    fn simulate_rejects_zero_steps() {
        let spec = example1_spec(0.1).unwrap();
        assert!(simulate(&spec, &[5.0], 0, 1).is_err());
    }
}
