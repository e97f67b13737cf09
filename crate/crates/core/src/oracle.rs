//! Extended-precision reference values and the error metrics built on them.
//!
//! The reference is the conventional filter with sensitivity recursions run
//! in binary floating point carrying hundreds of bits, on the exact binary64
//! model inputs. It shares no code with the working-precision filters: the
//! small dense-matrix type and its elimination solver below are its own.

use dashu_float::round::mode::HalfEven;
use dashu_float::FBig;

use crate::error::{Error, Result};
use crate::likelihood::Method;
use crate::linalg::{Matrix, Vector};
use crate::model::{evaluate, ModelAtTheta, ModelSpec, Trajectory};

pub type HighPrec = FBig<HalfEven, 2>;

/// Default reference precision in bits (about 77 decimal digits).
pub const BASE_PRECISION_BITS: usize = 256;

fn hp(x: f64, bits: usize) -> Result<HighPrec> {
    let v =
        HighPrec::try_from(x).map_err(|_| Error::OracleFailure(format!("non-finite input {x}")))?;
    Ok(v.with_precision(bits).value())
}

fn hp_zero(bits: usize) -> HighPrec {
    HighPrec::ZERO.with_precision(bits).value()
}

fn hp_abs(x: &HighPrec) -> HighPrec {
    if x.sign() == dashu_base::Sign::Negative {
        -x
    } else {
        x.clone()
    }
}

/// Dense row-major matrix of [`HighPrec`] entries.
#[derive(Debug, Clone, PartialEq)]
pub struct HpMatrix {
    rows: usize,
    cols: usize,
    data: Vec<HighPrec>,
}

impl HpMatrix {
    pub fn zeros(rows: usize, cols: usize, bits: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![hp_zero(bits); rows * cols],
        }
    }

    pub fn from_matrix(m: &Matrix, bits: usize) -> Result<Self> {
        let mut out = Self::zeros(m.nrows(), m.ncols(), bits);
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.data[i * m.ncols() + j] = hp(m[(i, j)], bits)?;
            }
        }
        Ok(out)
    }

    pub fn from_vector(v: &Vector, bits: usize) -> Result<Self> {
        Self::from_matrix(&Matrix::from_column_slice(v.len(), 1, v.as_slice()), bits)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> &HighPrec {
        &self.data[i * self.cols + j]
    }

    fn set(&mut self, i: usize, j: usize, v: HighPrec) {
        self.data[i * self.cols + j] = v;
    }

    pub fn entries(&self) -> impl Iterator<Item = &HighPrec> {
        self.data.iter()
    }

    /// Round every entry to binary64.
    pub fn to_f64(&self) -> Matrix {
        Matrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).to_f64().value())
    }

    pub fn transpose(&self) -> Self {
        let mut out = self.clone();
        out.rows = self.cols;
        out.cols = self.rows;
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.get(i, j).clone();
            }
        }
        out
    }

    pub fn mul(&self, rhs: &Self) -> Self {
        assert_eq!(
            self.cols, rhs.rows,
            "dimension mismatch in high-precision product"
        );
        let bits = self
            .data
            .first()
            .map_or(BASE_PRECISION_BITS, |v| v.precision());
        let mut out = Self::zeros(self.rows, rhs.cols, bits);
        for i in 0..self.rows {
            for j in 0..rhs.cols {
                let mut acc = hp_zero(bits);
                for k in 0..self.cols {
                    acc += self.get(i, k) * rhs.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    fn zip(&self, rhs: &Self, f: impl Fn(&HighPrec, &HighPrec) -> HighPrec) -> Self {
        assert_eq!(
            self.shape(),
            rhs.shape(),
            "dimension mismatch in high-precision sum"
        );
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, rhs: &Self) -> Self {
        self.zip(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        self.zip(rhs, |a, b| a - b)
    }

    pub fn neg(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| -a).collect(),
        }
    }

    pub fn trace(&self) -> HighPrec {
        let bits = self
            .data
            .first()
            .map_or(BASE_PRECISION_BITS, |v| v.precision());
        (0..self.rows.min(self.cols)).fold(hp_zero(bits), |acc, i| acc + self.get(i, i))
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> HighPrec {
        let bits = self
            .data
            .first()
            .map_or(BASE_PRECISION_BITS, |v| v.precision());
        self.data
            .iter()
            .map(hp_abs)
            .fold(hp_zero(bits), |a, b| if b > a { b } else { a })
    }
}

/// LU factorization with partial pivoting of a square matrix.
struct HpLu {
    lu: HpMatrix,
    perm: Vec<usize>,
    negative_det: bool,
}

impl HpLu {
    fn new(a: &HpMatrix) -> Result<Self> {
        let n = a.rows;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut negative_det = false;
        for k in 0..n {
            let pivot = (k..n)
                .max_by(|&x, &y| {
                    hp_abs(lu.get(x, k))
                        .partial_cmp(&hp_abs(lu.get(y, k)))
                        .unwrap()
                })
                .unwrap();
            if lu.get(pivot, k).repr().is_zero() {
                return Err(Error::OracleFailure(format!(
                    "singular matrix at elimination column {k}"
                )));
            }
            if pivot != k {
                for j in 0..n {
                    lu.data.swap(k * n + j, pivot * n + j);
                }
                perm.swap(k, pivot);
                negative_det = !negative_det;
            }
            let d = lu.get(k, k).clone();
            for i in k + 1..n {
                let factor = lu.get(i, k) / &d;
                for j in k + 1..n {
                    let v = lu.get(i, j) - &factor * lu.get(k, j);
                    lu.set(i, j, v);
                }
                lu.set(i, k, factor);
            }
        }
        for k in 0..n {
            if lu.get(k, k).sign() == dashu_base::Sign::Negative {
                negative_det = !negative_det;
            }
        }
        Ok(Self {
            lu,
            perm,
            negative_det,
        })
    }

    fn solve(&self, b: &HpMatrix) -> HpMatrix {
        let n = self.lu.rows;
        let mut x = HpMatrix {
            rows: n,
            cols: b.cols,
            data: Vec::with_capacity(n * b.cols),
        };
        for &p in &self.perm {
            x.data.extend((0..b.cols).map(|j| b.get(p, j).clone()));
        }
        for c in 0..b.cols {
            for i in 0..n {
                let mut v = x.get(i, c).clone();
                for k in 0..i {
                    v -= self.lu.get(i, k) * x.get(k, c);
                }
                x.set(i, c, v);
            }
            for i in (0..n).rev() {
                let mut v = x.get(i, c).clone();
                for k in i + 1..n {
                    v -= self.lu.get(i, k) * x.get(k, c);
                }
                x.set(i, c, v / self.lu.get(i, i));
            }
        }
        x
    }

    /// `ln det` of a matrix known to have positive determinant.
    fn ln_det(&self) -> Result<HighPrec> {
        if self.negative_det {
            return Err(Error::OracleFailure(
                "innovation covariance has negative determinant".into(),
            ));
        }
        let n = self.lu.rows;
        let bits = self.lu.get(0, 0).precision();
        Ok((0..n).fold(hp_zero(bits), |acc, i| acc + hp_abs(self.lu.get(i, i)).ln()))
    }
}

/// Reference values for one `(spec, θ, data)` problem.
#[derive(Debug, Clone)]
pub struct OracleReference {
    pub precision_bits: usize,
    /// Predicted covariance after the first step.
    pub p1: HpMatrix,
    /// Its derivative per parameter.
    pub dp1: Vec<HpMatrix>,
    /// Negative log-likelihood over the full record.
    pub loglik: HighPrec,
    pub gradient: Vec<HighPrec>,
}

/// [`OracleReference`] rounded to binary64.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleValues {
    pub p1: Matrix,
    pub dp1: Vec<Matrix>,
    pub loglik: f64,
    pub gradient: Vec<f64>,
}

impl OracleReference {
    pub fn to_values(&self) -> OracleValues {
        OracleValues {
            p1: self.p1.to_f64(),
            dp1: self.dp1.iter().map(HpMatrix::to_f64).collect(),
            loglik: self.loglik.to_f64().value(),
            gradient: self.gradient.iter().map(|g| g.to_f64().value()).collect(),
        }
    }
}

struct HpModel {
    f: HpMatrix,
    g: HpMatrix,
    h: HpMatrix,
    q: HpMatrix,
    r: HpMatrix,
    df: Vec<HpMatrix>,
    dg: Vec<HpMatrix>,
    dh: Vec<HpMatrix>,
    dq: Vec<HpMatrix>,
    dr: Vec<HpMatrix>,
}

impl HpModel {
    fn new(m: &ModelAtTheta, bits: usize) -> Result<Self> {
        let one = |x: &Matrix| HpMatrix::from_matrix(x, bits);
        let many = |xs: &[Matrix]| {
            xs.iter()
                .map(|x| HpMatrix::from_matrix(x, bits))
                .collect::<Result<Vec<_>>>()
        };
        Ok(Self {
            f: one(&m.f)?,
            g: one(&m.g)?,
            h: one(&m.h)?,
            q: one(&m.q_cov)?,
            r: one(&m.r_cov)?,
            df: many(&m.df)?,
            dg: many(&m.dg)?,
            dh: many(&m.dh)?,
            dq: many(&m.dq_cov)?,
            dr: many(&m.dr_cov)?,
        })
    }
}

/// Conventional filter plus sensitivity recursions at the default precision.
pub fn oracle_filter_and_score(
    spec: &dyn ModelSpec,
    theta: &[f64],
    data: &Trajectory,
) -> Result<OracleReference> {
    oracle_filter_and_score_at(spec, theta, data, BASE_PRECISION_BITS)
}

/// As [`oracle_filter_and_score`], carrying `bits` bits of precision.
pub fn oracle_filter_and_score_at(
    spec: &dyn ModelSpec,
    theta: &[f64],
    data: &Trajectory,
    bits: usize,
) -> Result<OracleReference> {
    if bits < 64 {
        return Err(Error::InvalidArgument(format!(
            "oracle precision {bits} bits is below binary64"
        )));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument(
            "oracle needs at least one measurement".into(),
        ));
    }
    let first = evaluate(spec, theta, 1)?;
    let dims = first.dims();
    let mut xhat = HpMatrix::from_vector(&first.x0, bits)?;
    let mut p = HpMatrix::from_matrix(&first.pi0, bits)?;
    let mut dx = first
        .dx0
        .iter()
        .map(|v| HpMatrix::from_vector(v, bits))
        .collect::<Result<Vec<_>>>()?;
    let mut dp = first
        .dpi0
        .iter()
        .map(|m| HpMatrix::from_matrix(m, bits))
        .collect::<Result<Vec<_>>>()?;

    let two = hp(2.0, bits)?;
    let half = hp(0.5, bits)?;
    let constant = &half * hp(dims.m as f64, bits)? * (&two * HighPrec::pi(bits)).ln();
    let mut loglik = hp_zero(bits);
    let mut gradient = vec![hp_zero(bits); dims.p];
    let mut p1 = None;

    let first_hp = HpModel::new(&first, bits)?;
    for (idx, z) in data.z.iter().enumerate() {
        let k = idx + 1;
        let owned;
        let md = if k == 1 || spec.time_invariant() {
            &first_hp
        } else {
            owned = HpModel::new(&evaluate(spec, theta, k)?, bits)?;
            &owned
        };
        let z = HpMatrix::from_vector(z, bits)?;
        let (f_t, h_t, g_t) = (md.f.transpose(), md.h.transpose(), md.g.transpose());

        let e = z.sub(&md.h.mul(&xhat));
        let ph_t = p.mul(&h_t);
        let re = md.h.mul(&ph_t).add(&md.r);
        let lu = HpLu::new(&re).map_err(|e| Error::OracleFailure(format!("step {k}: {e}")))?;
        let re_inv_e = lu.solve(&e);
        // Kp = F·P·Hᵀ·Re⁻¹ = (Re⁻¹·H·P·Fᵀ)ᵀ
        let kp = lu.solve(&ph_t.transpose().mul(&f_t)).transpose();

        loglik += &half * (&constant + lu.ln_det()? + e.transpose().mul(&re_inv_e).get(0, 0));

        let kre = kp.mul(&re);
        let mut next_dx = Vec::with_capacity(dims.p);
        let mut next_dp = Vec::with_capacity(dims.p);
        for i in 0..dims.p {
            let (df, dh) = (&md.df[i], &md.dh[i]);
            let de = dh.mul(&xhat).add(&md.h.mul(&dx[i])).neg();
            let dre = dh
                .mul(&ph_t)
                .add(&md.h.mul(&dp[i]).mul(&h_t))
                .add(&ph_t.transpose().mul(&dh.transpose()))
                .add(&md.dr[i]);
            let num = df
                .mul(&ph_t)
                .add(&md.f.mul(&dp[i]).mul(&h_t))
                .add(&md.f.mul(&p).mul(&dh.transpose()))
                .sub(&kp.mul(&dre));
            let dkp = lu.solve(&num.transpose()).transpose();

            let tr = lu.solve(&dre).trace();
            let quad = re_inv_e.transpose().mul(&dre).mul(&re_inv_e);
            let lin = re_inv_e.transpose().mul(&de);
            gradient[i] += &half * tr + lin.get(0, 0) - &half * quad.get(0, 0);

            next_dx.push(
                df.mul(&xhat)
                    .add(&md.f.mul(&dx[i]))
                    .add(&dkp.mul(&e))
                    .add(&kp.mul(&de)),
            );
            let dgqg = md.dg[i]
                .mul(&md.q)
                .mul(&g_t)
                .add(&md.g.mul(&md.dq[i]).mul(&g_t))
                .add(&md.g.mul(&md.q).mul(&md.dg[i].transpose()));
            next_dp.push(
                df.mul(&p)
                    .mul(&f_t)
                    .add(&md.f.mul(&dp[i]).mul(&f_t))
                    .add(&md.f.mul(&p).mul(&df.transpose()))
                    .add(&dgqg)
                    .sub(&dkp.mul(&kre.transpose()))
                    .sub(&kp.mul(&dre).mul(&kp.transpose()))
                    .sub(&kre.mul(&dkp.transpose())),
            );
        }
        xhat = md.f.mul(&xhat).add(&kp.mul(&e));
        p =
            md.f.mul(&p)
                .mul(&f_t)
                .add(&md.g.mul(&md.q).mul(&g_t))
                .sub(&kre.mul(&kp.transpose()));
        dx = next_dx;
        dp = next_dp;
        if k == 1 {
            p1 = Some((p.clone(), dp.clone()));
        }
    }
    let (p1, dp1) = p1.expect("at least one step was processed");
    Ok(OracleReference {
        precision_bits: bits,
        p1,
        dp1,
        loglik,
        gradient,
    })
}

fn relative_change(a: &[HighPrec], b: &[HighPrec]) -> f64 {
    let bits = b.first().map_or(BASE_PRECISION_BITS, |v| v.precision());
    let mut diff = hp_zero(bits);
    let mut scale = hp_zero(bits);
    for (x, y) in a.iter().zip(b) {
        let d = hp_abs(&(x - y));
        if d > diff {
            diff = d;
        }
        let s = hp_abs(y);
        if s > scale {
            scale = s;
        }
    }
    if diff.repr().is_zero() {
        0.0
    } else if scale.repr().is_zero() {
        f64::INFINITY
    } else {
        (diff / scale).to_f64().value()
    }
}

/// Largest relative change, quantity by quantity, between two references
/// computed at different precisions.
pub fn reference_change(a: &OracleReference, b: &OracleReference) -> f64 {
    let mut worst = relative_change(&a.p1.data, &b.p1.data);
    for (x, y) in a.dp1.iter().zip(&b.dp1) {
        worst = worst.max(relative_change(&x.data, &y.data));
    }
    worst = worst.max(relative_change(
        std::slice::from_ref(&a.loglik),
        std::slice::from_ref(&b.loglik),
    ));
    for (x, y) in a.gradient.iter().zip(&b.gradient) {
        worst = worst.max(relative_change(
            std::slice::from_ref(x),
            std::slice::from_ref(y),
        ));
    }
    worst
}

/// Re-run the reference at twice the default precision and report how much
/// the values moved.
pub fn precision_escalation_check(
    spec: &dyn ModelSpec,
    theta: &[f64],
    data: &Trajectory,
) -> Result<f64> {
    let base = oracle_filter_and_score_at(spec, theta, data, BASE_PRECISION_BITS)?;
    let doubled = oracle_filter_and_score_at(spec, theta, data, 2 * BASE_PRECISION_BITS)?;
    Ok(reference_change(&base, &doubled))
}

/// Central-difference gradient with step `rel_step·max(|θᵢ|, 1)` per
/// coordinate.
pub fn finite_difference_gradient(
    f: impl Fn(&[f64]) -> Result<f64>,
    theta: &[f64],
    rel_step: f64,
) -> Result<Vec<f64>> {
    if !(rel_step > 0.0 && rel_step.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {rel_step} must be positive"
        )));
    }
    let mut point = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let eps = rel_step * theta[i].abs().max(1.0);
            let mut at = |x: f64| {
                point[i] = x;
                let v = f(&point);
                point[i] = theta[i];
                match v {
                    Ok(v) if v.is_finite() => Ok(v),
                    Ok(_) => Err(Error::NonFinite { coordinate: i }),
                    Err(e) if e.class() == "numerical" => Err(Error::NonFinite { coordinate: i }),
                    Err(e) => Err(e),
                }
            };
            let hi = at(theta[i] + eps)?;
            let lo = at(theta[i] - eps)?;
            Ok((hi - lo) / (2.0 * eps))
        })
        .collect()
}

/// Max-absolute errors of one method against the reference. Quantities the
/// method could not produce are NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    pub dp1: f64,
    pub dp1_prime: f64,
    pub dloglf: f64,
    pub dloglg: f64,
    pub failed: bool,
}

/// What a working-precision method produced for one problem.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutputs {
    /// First-step covariance and its derivatives, if the first step completed.
    pub p1: Option<(Matrix, Vec<Matrix>)>,
    pub loglik: f64,
    pub gradient: Vec<f64>,
    pub failed: bool,
}

impl MethodOutputs {
    /// The reference rounded to binary64, treated as a method.
    pub fn from_reference(values: &OracleValues) -> Self {
        Self {
            p1: Some((values.p1.clone(), values.dp1.clone())),
            loglik: values.loglik,
            gradient: values.gradient.clone(),
            failed: false,
        }
    }
}

/// Run `method` over `data`, keeping the first-step covariance quantities.
/// The square-root method's are reconstructed from its factors.
pub fn method_outputs(
    method: Method,
    spec: &dyn ModelSpec,
    theta: &[f64],
    data: &Trajectory,
) -> Result<MethodOutputs> {
    match method {
        Method::Conventional => {
            let run = crate::conventional::kf_run(spec, theta, data, true, true)?;
            Ok(MethodOutputs {
                p1: run.trace.first().map(|s| (s.p.clone(), s.dp.clone())),
                loglik: run.score.loglik,
                gradient: run.score.gradient.clone(),
                failed: run.score.failed(),
            })
        }
        Method::SquareRoot => {
            let run = crate::score::run_traced(spec, theta, data, true)?;
            Ok(MethodOutputs {
                p1: run.trace.first().map(|s| {
                    (
                        s.state.covariance(),
                        s.deriv.covariance_derivatives(&s.state),
                    )
                }),
                loglik: run.result.loglik,
                gradient: run.result.gradient.clone(),
                failed: run.result.failed(),
            })
        }
    }
}

/// Max |a − b| over entries, evaluated exactly; NaN if any entry of `a` is
/// not finite.
fn max_abs_error(a: &[f64], b: &[HighPrec]) -> f64 {
    let bits = b.first().map_or(BASE_PRECISION_BITS, |v| v.precision());
    let mut worst = hp_zero(bits);
    for (x, y) in a.iter().zip(b) {
        let Ok(x) = hp(*x, bits) else {
            return f64::NAN;
        };
        let d = hp_abs(&(x - y));
        if d > worst {
            worst = d;
        }
    }
    worst.to_f64().value()
}

fn matrix_entries(m: &Matrix) -> Vec<f64> {
    // HpMatrix is row-major
    (0..m.nrows())
        .flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)]))
        .collect()
}

/// Compare a method's outputs with the reference.
pub fn compare(out: &MethodOutputs, reference: &OracleReference) -> ErrorReport {
    let (dp1, dp1_prime) = match &out.p1 {
        Some((p, dps)) => {
            let dp1 = max_abs_error(&matrix_entries(p), &reference.p1.data);
            let dp1_prime = dps
                .iter()
                .zip(&reference.dp1)
                .map(|(a, b)| max_abs_error(&matrix_entries(a), &b.data))
                .fold(0.0, |acc: f64, e| {
                    if e.is_nan() || acc.is_nan() {
                        f64::NAN
                    } else {
                        acc.max(e)
                    }
                });
            (dp1, dp1_prime)
        }
        None => (f64::NAN, f64::NAN),
    };
    ErrorReport {
        dp1,
        dp1_prime,
        dloglf: max_abs_error(&[out.loglik], std::slice::from_ref(&reference.loglik)),
        dloglg: max_abs_error(&out.gradient, &reference.gradient),
        failed: out.failed,
    }
}

/// Error report per method. An oracle failure is an error; method failures
/// are recorded in the reports.
pub fn error_report(
    spec: &dyn ModelSpec,
    theta: &[f64],
    data: &Trajectory,
    methods: &[Method],
) -> Result<Vec<ErrorReport>> {
    let reference = oracle_filter_and_score(spec, theta, data)?;
    methods
        .iter()
        .map(|&m| Ok(compare(&method_outputs(m, spec, theta, data)?, &reference)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conventional::kf_loglik;
    use crate::esrcf::esrcf_loglik;
    use crate::model::{example1_spec, example3_spec, simulate, Frozen};

    fn one_step(z: &[f64]) -> Trajectory {
        Trajectory::new(vec![Vector::from_vec(z.to_vec())]).unwrap()
    }

    #[test]
    fn elimination_solves_and_log_det() {
        let a = nalgebra::dmatrix![4.0, 1.0, 0.0; 1.0, 3.0, 1.0; 0.0, 1.0, 2.0];
        let b = nalgebra::dmatrix![1.0; 2.0; 3.0];
        let lu = HpLu::new(&HpMatrix::from_matrix(&a, 128).unwrap()).unwrap();
        let x = lu.solve(&HpMatrix::from_matrix(&b, 128).unwrap()).to_f64();
        assert!((&a * &x - &b).amax() < 1e-15);
        let det: f64 = a.determinant();
        assert!((lu.ln_det().unwrap().to_f64().value() - det.ln()).abs() < 1e-15);
    }

    #[test]
    fn singular_matrix_fails() {
        let a = nalgebra::dmatrix![1.0, 2.0; 2.0, 4.0];
        assert!(matches!(
            HpLu::new(&HpMatrix::from_matrix(&a, 128).unwrap()),
            Err(Error::OracleFailure(_))
        ));
    }

    #[test]
    fn theta_independent_model_has_exact_zero_gradient() {
        let spec = Frozen::new(example1_spec(0.1).unwrap(), vec![5.0]).unwrap();
        let data = simulate(&spec, &[5.0], 10, 3).unwrap();
        let r = oracle_filter_and_score(&spec, &[5.0], &data).unwrap();
        assert!(r.gradient[0].repr().is_zero());
    }

    #[test]
    fn agrees_with_working_precision_on_example1() {
        let spec = example1_spec(0.1).unwrap();
        let data = simulate(&spec, &[5.0], 20, 11).unwrap();
        let r = oracle_filter_and_score(&spec, &[4.0], &data)
            .unwrap()
            .to_values();
        let ll = kf_loglik(&spec, &[4.0], &data).unwrap();
        assert!((r.loglik - ll).abs() <= 1e-12 * ll.abs());
    }

    #[test]
    fn square_root_p1_is_accurate_on_example3() {
        let spec = example3_spec(1e-2).unwrap();
        let data = one_step(&[1.0, 1.0]);
        let reports = error_report(&spec, &[2.0], &data, &[Method::SquareRoot]).unwrap();
        assert!(reports[0].dp1 < 1e-13, "{:?}", reports[0]);
        assert!(!reports[0].failed);
    }

    #[test]
    fn self_comparison_is_rounding_only() {
        let spec = example3_spec(1e-2).unwrap();
        let data = one_step(&[1.0, 1.0]);
        let r = oracle_filter_and_score(&spec, &[2.0], &data).unwrap();
        let e = compare(&MethodOutputs::from_reference(&r.to_values()), &r);
        for v in [e.dp1, e.dp1_prime, e.dloglf, e.dloglg] {
            assert!(v <= 1e-14, "{e:?}");
        }
    }

    #[test]
    fn conventional_fails_at_tiny_delta() {
        let spec = example3_spec(1e-10).unwrap();
        let data = one_step(&[1.0, 1.0]);
        let reports = error_report(&spec, &[2.0], &data, &Method::ALL).unwrap();
        assert!(reports[0].failed && reports[0].dp1.is_nan() && reports[0].dloglg.is_nan());
        assert!(
            !reports[1].failed && reports[1].dp1 <= 1e-5,
            "{:?}",
            reports[1]
        );
    }

    #[test]
    fn finite_difference_cases() {
        let g = finite_difference_gradient(|_| Ok(7.0), &[1.0, -2.0], 1e-5).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
        let g =
            finite_difference_gradient(|t| Ok(0.5 * (t[0] - 3.0).powi(2)), &[5.0], 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-9);
        let err = finite_difference_gradient(
            |t| Ok(if t[1] > 0.0 { f64::NAN } else { 0.0 }),
            &[0.0, 0.0],
            1e-5,
        );
        assert!(matches!(err, Err(Error::NonFinite { coordinate: 1 })));
    }

    #[test]
    fn finite_differences_match_square_root_score() {
        let spec = example1_spec(0.1).unwrap();
        let data = simulate(&spec, &[5.0], 100, 2).unwrap();
        let fd =
            finite_difference_gradient(|t| esrcf_loglik(&spec, t, &data), &[5.0], 1e-5).unwrap();
        let s = crate::score::run(&spec, &[5.0], &data).unwrap();
        assert!((fd[0] - s.gradient[0]).abs() <= 1e-5 * fd[0].abs());
    }

    #[test]
    fn escalation_is_negligible_on_example3() {
        let spec = example3_spec(1e-6).unwrap();
        let change = precision_escalation_check(&spec, &[2.0], &one_step(&[1.0, 1.0])).unwrap();
        assert!(change < 1e-20, "{change:e}");
    }
}
