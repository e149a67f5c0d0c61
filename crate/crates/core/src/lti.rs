//! Discrete-time LTI systems `x+ = Ax + Bw`, `z = Cx + Dw` with complex data.

use std::f64::consts::PI;

use nalgebra::linalg::Schur;
use num_complex::Complex64;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::herm::{spectral_norm, CMatrix, CVector};

/// Systems with spectral radius at or above `1 - STABILITY_MARGIN` are rejected.
pub const STABILITY_MARGIN: f64 = 1e-9;

/// Resolvent condition numbers above this are reported as numerical failures.
pub const MAX_RESOLVENT_COND: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    a: CMatrix,
    b: CMatrix,
    c: CMatrix,
    d: CMatrix,
}

impl StateSpace {
    pub fn new(a: CMatrix, b: CMatrix, c: CMatrix, d: CMatrix) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::Dimension(format!(
                "A must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let m = b.ncols();
        let l = c.nrows();
        if m == 0 || l == 0 {
            return Err(Error::Dimension("input and output dimensions must be positive".into()));
        }
        if b.nrows() != n {
            return Err(Error::Dimension(format!("B has {} rows, expected {n}", b.nrows())));
        }
        if c.ncols() != n {
            return Err(Error::Dimension(format!("C has {} columns, expected {n}", c.ncols())));
        }
        if d.shape() != (l, m) {
            return Err(Error::Dimension(format!(
                "D is {}x{}, expected {l}x{m}",
                d.nrows(),
                d.ncols()
            )));
        }
        let all_finite = [&a, &b, &c, &d]
            .iter()
            .all(|mat| mat.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
        if !all_finite {
            return Err(Error::Input("system matrices contain non-finite entries".into()));
        }
        Ok(Self { a, b, c, d })
    }

    /// Builds a system from real row-major data.
    pub fn from_real(n: usize, m: usize, l: usize, a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Result<Self> {
        let mk = |r: usize, k: usize, data: &[f64], name: &str| -> Result<CMatrix> {
            if data.len() != r * k {
                return Err(Error::Dimension(format!(
                    "{name} needs {} entries, got {}",
                    r * k,
                    data.len()
                )));
            }
            Ok(CMatrix::from_row_iterator(
                r,
                k,
                data.iter().map(|&v| Complex64::new(v, 0.0)),
            ))
        };
        Self::new(
            mk(n, n, a, "A")?,
            mk(n, m, b, "B")?,
            mk(l, n, c, "C")?,
            mk(l, m, d, "D")?,
        )
    }

    pub fn a(&self) -> &CMatrix {
        &self.a
    }

    pub fn b(&self) -> &CMatrix {
        &self.b
    }

    pub fn c(&self) -> &CMatrix {
        &self.c
    }

    pub fn d(&self) -> &CMatrix {
        &self.d
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// Output dimension.
    pub fn l(&self) -> usize {
        self.c.nrows()
    }

    /// `[A B]`, n x (n+m).
    pub fn ab(&self) -> CMatrix {
        hcat(&self.a, &self.b)
    }

    /// `[C D]`, l x (n+m).
    pub fn cd(&self) -> CMatrix {
        hcat(&self.c, &self.d)
    }

    /// `[I 0]`, n x (n+m).
    pub fn state_selector(&self) -> CMatrix {
        let (n, m) = (self.n(), self.m());
        let mut e = CMatrix::zeros(n, n + m);
        e.view_mut((0, 0), (n, n)).fill_with_identity();
        e
    }

    /// `[0 I]`, m x (n+m).
    pub fn input_selector(&self) -> CMatrix {
        let (n, m) = (self.n(), self.m());
        let mut e = CMatrix::zeros(m, n + m);
        e.view_mut((0, n), (m, m)).fill_with_identity();
        e
    }

    /// `(-A, -B, C, D)`: the frequency response of the result at `theta` equals
    /// the original response at `theta + pi`.
    pub fn negate_dynamics(&self) -> Self {
        Self {
            a: -self.a.clone(),
            b: -self.b.clone(),
            c: self.c.clone(),
            d: self.d.clone(),
        }
    }

    pub fn spectral_radius(&self) -> Result<f64> {
        spectral_radius(&self.a)
    }

    /// Fails with [`Error::Unstable`] unless `rho(A) < 1 - STABILITY_MARGIN`.
    pub fn check_stable(&self) -> Result<f64> {
        let radius = self.spectral_radius()?;
        if radius >= 1.0 - STABILITY_MARGIN {
            return Err(Error::Unstable { radius });
        }
        Ok(radius)
    }

    /// Parses the JSON system format: keys `A`, `B`, `C`, `D`, each a nested
    /// array whose entries are a number or a `[re, im]` pair.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Parse("system file must be a JSON object".into()))?;
        let get = |key: &str| -> Result<CMatrix> {
            let v = obj
                .get(key)
                .ok_or_else(|| Error::Parse(format!("missing key \"{key}\"")))?;
            parse_matrix(v).map_err(|e| Error::Parse(format!("{key}: {e}")))
        };
        let (a, b, c, d) = (get("A")?, get("B")?, get("C")?, get("D")?);
        Self::new(a, b, c, d).map_err(|e| match e {
            Error::Dimension(msg) | Error::Input(msg) => Error::Parse(msg),
            other => other,
        })
    }

    /// Inverse of [`StateSpace::from_json_str`]; real entries are written bare.
    pub fn to_json(&self) -> Value {
        let mat = |m: &CMatrix| -> Value {
            Value::Array(
                (0..m.nrows())
                    .map(|i| Value::Array((0..m.ncols()).map(|j| complex_to_json(m[(i, j)])).collect()))
                    .collect(),
            )
        };
        serde_json::json!({
            "A": mat(&self.a),
            "B": mat(&self.b),
            "C": mat(&self.c),
            "D": mat(&self.d),
        })
    }
}

fn hcat(left: &CMatrix, right: &CMatrix) -> CMatrix {
    let mut out = CMatrix::zeros(left.nrows(), left.ncols() + right.ncols());
    out.view_mut((0, 0), left.shape()).copy_from(left);
    out.view_mut((0, left.ncols()), right.shape()).copy_from(right);
    out
}

pub(crate) fn complex_to_json(z: Complex64) -> Value {
    if z.im == 0.0 {
        serde_json::json!(z.re)
    } else {
        serde_json::json!([z.re, z.im])
    }
}

fn parse_entry(v: &Value) -> std::result::Result<Complex64, String> {
    match v {
        Value::Number(x) => x
            .as_f64()
            .map(|re| Complex64::new(re, 0.0))
            .ok_or_else(|| "bad number".into()),
        Value::Array(pair) if pair.len() == 2 => match (pair[0].as_f64(), pair[1].as_f64()) {
            (Some(re), Some(im)) => Ok(Complex64::new(re, im)),
            _ => Err("complex entry must be [re, im] numbers".into()),
        },
        other => Err(format!("unsupported entry {other}")),
    }
}

fn parse_matrix(v: &Value) -> std::result::Result<CMatrix, String> {
    let rows = v.as_array().ok_or("matrix must be an array of rows")?;
    if rows.is_empty() {
        return Err("matrix has no rows".into());
    }
    let mut data = Vec::new();
    let mut width = None;
    for row in rows {
        let row = row.as_array().ok_or("each row must be an array")?;
        if row.is_empty() {
            return Err("matrix has an empty row".into());
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => return Err("ragged rows".into()),
            _ => {}
        }
        for entry in row {
            data.push(parse_entry(entry)?);
        }
    }
    Ok(CMatrix::from_row_iterator(rows.len(), width.unwrap_or(0), data))
}

/// `max |lambda_i(A)|` from the complex Schur form.
pub fn spectral_radius(a: &CMatrix) -> Result<f64> {
    if !a.is_square() {
        return Err(Error::Dimension("spectral radius needs a square matrix".into()));
    }
    if a.nrows() == 0 {
        return Ok(0.0);
    }
    Ok(schur_diagonal(a)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

fn schur_diagonal(a: &CMatrix) -> Result<Vec<Complex64>> {
    // The strictest deflation threshold occasionally stalls; relax it before giving up.
    for eps in [f64::EPSILON, 64.0 * f64::EPSILON, 1e-12] {
        if let Some(schur) = Schur::try_new(a.clone(), eps, 10_000) {
            let (_, t) = schur.unpack();
            return Ok(t.diagonal().iter().copied().collect());
        }
    }
    Err(Error::Numerical("eigenvalue iteration did not converge".into()))
}

/// Eigenvalues of a complex square matrix (diagonal of its Schur form).
pub fn eigenvalues(a: &CMatrix) -> Result<Vec<Complex64>> {
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    schur_diagonal(a)
}

/// `H(e^{j theta}) = C (e^{j theta} I - A)^{-1} B + D`.
pub fn freq_response(sys: &StateSpace, theta: f64) -> Result<CMatrix> {
    let n = sys.n();
    let z = Complex64::from_polar(1.0, theta);
    let resolvent = CMatrix::identity(n, n) * z - sys.a();
    let inv = resolvent
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical(format!("resolvent singular at theta = {theta}")))?;
    let cond = norm1(&resolvent) * norm1(&inv);
    if !cond.is_finite() || cond > MAX_RESOLVENT_COND {
        return Err(Error::Numerical(format!(
            "resolvent ill-conditioned at theta = {theta} (cond {cond:e})"
        )));
    }
    Ok(sys.c() * inv * sys.b() + sys.d())
}

fn norm1(m: &CMatrix) -> f64 {
    m.column_iter()
        .map(|col| col.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Largest singular value of the frequency response.
pub fn gain(sys: &StateSpace, theta: f64) -> Result<f64> {
    Ok(spectral_norm(&freq_response(sys, theta)?))
}

/// Frequency-shifted system for a band `[theta1, theta2]`.
///
/// Returns `(shifted, theta0, theta_c)` with `theta_c` the band center and
/// `theta0` the half width. The shifted system has `A~ = e^{-j theta_c} A`,
/// `B~ = e^{-j theta_c} B` and unchanged `C`, `D`, so that
/// `H~(e^{j theta}) = H(e^{j (theta + theta_c)})`: the band maps onto
/// `[-theta0, theta0]`. States of the two systems are related by
/// `x~_k = e^{-j theta_c k} x_k`.
pub fn shift_middle(sys: &StateSpace, theta1: f64, theta2: f64) -> Result<(StateSpace, f64, f64)> {
    if theta1.is_nan() || theta2.is_nan() || theta1 >= theta2 {
        return Err(Error::InvalidBand(format!(
            "middle band needs theta1 < theta2, got [{theta1}, {theta2}]"
        )));
    }
    let theta_c = 0.5 * (theta1 + theta2);
    let theta0 = 0.5 * (theta2 - theta1);
    let rot = Complex64::from_polar(1.0, -theta_c);
    let shifted = StateSpace {
        a: sys.a() * rot,
        b: sys.b() * rot,
        c: sys.c().clone(),
        d: sys.d().clone(),
    };
    Ok((shifted, theta0, theta_c))
}

/// A sinusoidal input `w_k = e^{j theta k} w_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinusoid {
    pub direction: CVector,
    pub theta: f64,
}

impl Sinusoid {
    pub fn new(direction: CVector, theta: f64) -> Self {
        Self { direction, theta }
    }

    pub fn at(&self, k: usize) -> CVector {
        &self.direction * Complex64::from_polar(1.0, self.theta * k as f64)
    }
}

/// One step of a simulated trajectory.
#[derive(Debug, Clone)]
pub struct SimStep {
    pub input: CVector,
    pub output: CVector,
    /// `(1/(k+1)) sum_{i<=k} |z_i|^2`
    pub running_power: f64,
}

/// Simulates from `x_0 = 0` for `steps` samples and returns every step.
pub fn simulate_trajectory(sys: &StateSpace, input: &Sinusoid, steps: usize) -> Result<Vec<SimStep>> {
    if input.direction.len() != sys.m() {
        return Err(Error::Dimension(format!(
            "input direction has length {}, expected {}",
            input.direction.len(),
            sys.m()
        )));
    }
    let mut x = CVector::zeros(sys.n());
    let mut energy = 0.0;
    let mut out = Vec::with_capacity(steps);
    let step = Complex64::from_polar(1.0, input.theta);
    let mut w = input.direction.clone();
    for k in 0..steps {
        let z = sys.c() * &x + sys.d() * &w;
        energy += z.norm_squared();
        x = sys.a() * &x + sys.b() * &w;
        out.push(SimStep {
            input: w.clone(),
            output: z,
            running_power: energy / (k + 1) as f64,
        });
        // recompute the phase directly every so often to avoid drift
        if (k + 1) % 256 == 0 {
            w = input.at(k + 1);
        } else {
            w *= step;
        }
    }
    Ok(out)
}

/// Running power averages `P_N = (1/N) sum_{k<N} |z_k|^2` for `N = 1..=steps`.
pub fn simulate(sys: &StateSpace, input: &Sinusoid, steps: usize) -> Result<Vec<f64>> {
    Ok(simulate_trajectory(sys, input, steps)?
        .into_iter()
        .map(|s| s.running_power)
        .collect())
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    t
}
