//! Conic problem builders.
//!
//! The primal problem lifts the state/input trajectory into the time-averaged
//! covariance `V` of `[x; w]`:
//!
//! ```text
//! maximize   <[C D]*[C D], V>
//! subject to [I 0] V [I 0]* = [A B] V [A B]*
//!            <diag(0, I_m), V> <= 1
//!            V psd
//! ```
//!
//! Band-restricted variants add a matrix inequality on
//! `[A B] V [I 0]* + [I 0] V [A B]* - 2 cos(theta0) [I 0] V [I 0]*`.
//! The dual problems are the KYP and generalized KYP LMIs in `(P, Q, lambda)`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;

use crate::band::FrequencyBand;
use crate::error::{Error, Result};
use crate::herm::{CMatrix, HermitianMatrix};
use crate::lti::{shift_middle, StateSpace};

/// One scalar of the upper-triangle scalarization of a Hermitian matrix:
/// real diagonal entries, then real and imaginary parts of entries above it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Diag(usize),
    Re(usize, usize),
    Im(usize, usize),
}

impl Slot {
    pub fn value(&self, m: &CMatrix) -> f64 {
        match *self {
            Slot::Diag(i) => m[(i, i)].re,
            Slot::Re(i, j) => m[(i, j)].re,
            Slot::Im(i, j) => m[(i, j)].im,
        }
    }

    /// Coefficient `E` with `<E, M> = self.value(M)` for Hermitian `M`.
    pub fn coefficient(&self, size: usize) -> HermitianMatrix {
        let mut e = CMatrix::zeros(size, size);
        match *self {
            Slot::Diag(i) => e[(i, i)] = Complex64::new(1.0, 0.0),
            Slot::Re(i, j) => {
                e[(i, j)] = Complex64::new(0.5, 0.0);
                e[(j, i)] = Complex64::new(0.5, 0.0);
            }
            Slot::Im(i, j) => {
                // tr(E M) = E_ij M_ji + E_ji M_ij = Im M_ij
                e[(i, j)] = Complex64::new(0.0, 0.5);
                e[(j, i)] = Complex64::new(0.0, -0.5);
            }
        }
        HermitianMatrix::new(e).expect("square")
    }

    /// Weight of this slot in the squared Frobenius norm.
    pub fn frobenius_weight(&self) -> f64 {
        match self {
            Slot::Diag(_) => 1.0,
            _ => 2.0,
        }
    }
}

/// All `size^2` slots of a `size x size` Hermitian matrix in canonical order.
pub fn hermitian_slots(size: usize) -> Vec<Slot> {
    let mut out: Vec<Slot> = (0..size).map(Slot::Diag).collect();
    for i in 0..size {
        for j in (i + 1)..size {
            out.push(Slot::Re(i, j));
            out.push(Slot::Im(i, j));
        }
    }
    out
}

/// Orthonormal basis of the Hermitian `k x k` matrices under `Re tr(XY)`.
pub fn hermitian_basis(k: usize) -> Vec<HermitianMatrix> {
    let mut out = Vec::with_capacity(k * k);
    for i in 0..k {
        let mut e = CMatrix::zeros(k, k);
        e[(i, i)] = Complex64::new(1.0, 0.0);
        out.push(HermitianMatrix::new(e).expect("square"));
    }
    for i in 0..k {
        for j in (i + 1)..k {
            let mut e = CMatrix::zeros(k, k);
            e[(i, j)] = Complex64::new(FRAC_1_SQRT_2, 0.0);
            e[(j, i)] = Complex64::new(FRAC_1_SQRT_2, 0.0);
            out.push(HermitianMatrix::new(e).expect("square"));
            let mut e = CMatrix::zeros(k, k);
            e[(i, j)] = Complex64::new(0.0, FRAC_1_SQRT_2);
            e[(j, i)] = Complex64::new(0.0, -FRAC_1_SQRT_2);
            out.push(HermitianMatrix::new(e).expect("square"));
        }
    }
    out
}

/// Coefficients of a real-linear map from `k x k` Hermitian matrices to
/// `out x out` Hermitian matrices, one per output slot.
pub fn scalarize_map(k: usize, out: usize, map: impl Fn(&CMatrix) -> CMatrix) -> Vec<HermitianMatrix> {
    let basis = hermitian_basis(k);
    let images: Vec<CMatrix> = basis.iter().map(|b| map(b.as_matrix())).collect();
    hermitian_slots(out)
        .iter()
        .map(|slot| {
            let mut acc = CMatrix::zeros(k, k);
            for (b, img) in basis.iter().zip(&images) {
                let v = slot.value(img);
                if v != 0.0 {
                    acc += b.as_matrix() * Complex64::new(v, 0.0);
                }
            }
            HermitianMatrix::new(acc).expect("square")
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct LinearConstraint {
    pub coeff: HermitianMatrix,
    pub rhs: f64,
}

/// Linear map of `V` required to be psd:
/// the Hermitian `size x size` matrix whose slot `t` equals
/// `<components[t], V>` must be positive semidefinite.
#[derive(Debug, Clone)]
pub struct PsdSide {
    pub size: usize,
    pub components: Vec<HermitianMatrix>,
}

impl PsdSide {
    pub fn evaluate(&self, v: &HermitianMatrix) -> HermitianMatrix {
        let mut m = CMatrix::zeros(self.size, self.size);
        for (slot, coeff) in hermitian_slots(self.size).iter().zip(&self.components) {
            let val = coeff.inner(v);
            match *slot {
                Slot::Diag(i) => m[(i, i)] = Complex64::new(val, 0.0),
                Slot::Re(i, j) => {
                    m[(i, j)].re = val;
                    m[(j, i)].re = val;
                }
                Slot::Im(i, j) => {
                    m[(i, j)].im = val;
                    m[(j, i)].im = -val;
                }
            }
        }
        HermitianMatrix::new(m).expect("square")
    }
}

/// Band inequality encoded in a primal problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandConstraint {
    None,
    /// `L(V) - 2cos(theta0) X(V)` psd
    Low(f64),
    /// `L(V) - 2cos(theta0) X(V)` nsd
    High(f64),
}

/// Provenance of a primal problem built from a system.
#[derive(Debug, Clone)]
pub struct PrimalStructure {
    /// The system whose dynamics are encoded (shifted for middle bands).
    pub sys: StateSpace,
    pub band: FrequencyBand,
    pub constraint: BandConstraint,
    /// Frequencies of the encoded system are offset by this from the original.
    pub frequency_offset: f64,
}

/// Standard-form conic problem over one Hermitian psd variable `V`:
/// maximize `<cost, V>` subject to linear equalities and inequalities and
/// optional psd side constraints.
#[derive(Debug, Clone)]
pub struct ConicProblem {
    pub dim: usize,
    pub cost: HermitianMatrix,
    pub equalities: Vec<LinearConstraint>,
    pub inequalities: Vec<LinearConstraint>,
    pub psd_sides: Vec<PsdSide>,
    /// The first `state_equalities` equalities scalarize the state covariance
    /// equation.
    pub state_equalities: usize,
    pub structure: Option<PrimalStructure>,
}

impl ConicProblem {
    /// A bare problem with no constraints.
    pub fn new(cost: HermitianMatrix) -> Self {
        Self {
            dim: cost.size(),
            cost,
            equalities: Vec::new(),
            inequalities: Vec::new(),
            psd_sides: Vec::new(),
            state_equalities: 0,
            structure: None,
        }
    }

    /// Checks that every coefficient is `dim x dim`.
    pub fn validate(&self) -> Result<()> {
        let ok = |h: &HermitianMatrix| h.size() == self.dim;
        let all = ok(&self.cost)
            && self.equalities.iter().all(|c| ok(&c.coeff))
            && self.inequalities.iter().all(|c| ok(&c.coeff))
            && self
                .psd_sides
                .iter()
                .all(|s| s.components.len() == s.size * s.size && s.components.iter().all(ok));
        if all {
            Ok(())
        } else {
            Err(Error::Dimension(
                "conic problem coefficients do not match the variable size".into(),
            ))
        }
    }

    pub fn objective(&self, v: &HermitianMatrix) -> f64 {
        self.cost.inner(v)
    }

    /// `<E_i, V> - b_i` for every equality.
    pub fn equality_residuals(&self, v: &HermitianMatrix) -> Vec<f64> {
        self.equalities.iter().map(|c| c.coeff.inner(v) - c.rhs).collect()
    }

    /// Largest violation over equalities, inequalities, side constraints and
    /// the psd constraint on `V` itself.
    pub fn max_violation(&self, v: &HermitianMatrix) -> f64 {
        let eq = self.equality_residuals(v).iter().fold(0.0_f64, |a, r| a.max(r.abs()));
        let ineq = self
            .inequalities
            .iter()
            .fold(0.0_f64, |a, c| a.max(c.coeff.inner(v) - c.rhs));
        let side = self
            .psd_sides
            .iter()
            .fold(0.0_f64, |a, s| a.max(-s.evaluate(v).min_eigenvalue()));
        eq.max(ineq).max(side).max(-v.min_eigenvalue())
    }
}

/// `V -> [A B] V [I 0]* + [I 0] V [A B]* - 2 cos(theta0) [I 0] V [I 0]*`
pub fn band_map(sys: &StateSpace, cos_theta0: f64, v: &CMatrix) -> CMatrix {
    let g = sys.ab();
    let f = sys.state_selector();
    let gvf = &g * v * f.adjoint();
    let fvf = &f * v * f.adjoint();
    &gvf + gvf.adjoint() - fvf * Complex64::new(2.0 * cos_theta0, 0.0)
}

/// `V -> [I 0] V [I 0]* - [A B] V [A B]*`
pub fn state_map(sys: &StateSpace, v: &CMatrix) -> CMatrix {
    let g = sys.ab();
    let f = sys.state_selector();
    &f * v * f.adjoint() - &g * v * g.adjoint()
}

/// Resolves a band into the system actually encoded and its band constraint.
fn encoded_band(sys: &StateSpace, band: FrequencyBand) -> Result<(StateSpace, BandConstraint, f64)> {
    Ok(match band {
        FrequencyBand::Full => (sys.clone(), BandConstraint::None, 0.0),
        FrequencyBand::Low { theta0 } => (sys.clone(), BandConstraint::Low(theta0), 0.0),
        FrequencyBand::High { theta0 } => (sys.clone(), BandConstraint::High(theta0), 0.0),
        FrequencyBand::Middle { theta1, theta2 } => {
            let (shifted, theta0, theta_c) = shift_middle(sys, theta1, theta2)?;
            (shifted, BandConstraint::Low(theta0), theta_c)
        }
    })
}

/// Builds the lifted primal SDP for `sys` restricted to `band`.
pub fn build_primal(sys: &StateSpace, band: FrequencyBand) -> Result<ConicProblem> {
    sys.check_stable()?;
    let band = band.validated()?;
    let (enc, constraint, offset) = encoded_band(sys, band)?;
    let (n, m) = (enc.n(), enc.m());
    let k = n + m;

    let cd = enc.cd();
    let cost = HermitianMatrix::new(cd.adjoint() * &cd)?;
    let mut problem = ConicProblem::new(cost);

    for coeff in scalarize_map(k, n, |v| state_map(&enc, v)) {
        problem.equalities.push(LinearConstraint { coeff, rhs: 0.0 });
    }
    problem.state_equalities = problem.equalities.len();

    let sel = enc.input_selector();
    problem.inequalities.push(LinearConstraint {
        coeff: HermitianMatrix::new(sel.adjoint() * &sel)?,
        rhs: 1.0,
    });

    match constraint {
        BandConstraint::None => {}
        BandConstraint::Low(theta0) => {
            let c = theta0.cos();
            problem.psd_sides.push(PsdSide {
                size: n,
                components: scalarize_map(k, n, |v| band_map(&enc, c, v)),
            });
        }
        BandConstraint::High(theta0) => {
            let c = theta0.cos();
            problem.psd_sides.push(PsdSide {
                size: n,
                components: scalarize_map(k, n, |v| -band_map(&enc, c, v)),
            });
        }
    }

    problem.structure = Some(PrimalStructure {
        sys: enc,
        band,
        constraint,
        frequency_offset: offset,
    });
    Ok(problem)
}

/// The KYP / generalized KYP dual LMI: minimize `lambda` subject to
/// `lmi(P, Q, lambda)` nsd, `lambda >= 0`, `P` Hermitian and, for band
/// problems, `Q` psd.
#[derive(Debug, Clone)]
pub struct DualProblem {
    sys: StateSpace,
    /// `cos(theta0)` of the low-band multiplier; `None` for the plain KYP LMI.
    band_cos: Option<f64>,
}

impl DualProblem {
    pub fn sys(&self) -> &StateSpace {
        &self.sys
    }

    pub fn has_q(&self) -> bool {
        self.band_cos.is_some()
    }

    pub fn band_cos(&self) -> Option<f64> {
        self.band_cos
    }

    /// Order of the LMI, `n + m`.
    pub fn lmi_size(&self) -> usize {
        self.sys.n() + self.sys.m()
    }

    /// Evaluates the LMI expression, which must be negative semidefinite.
    ///
    /// KYP: `[A*PA - P, A*PB; B*PA, B*PB] + [C D]*[C D] - lambda diag(0, I)`.
    /// Generalized KYP: `[A B; I 0]* [P, Q; Q, -P - 2cos(theta0) Q] [A B; I 0]
    /// + [C D]*[C D] - lambda diag(0, I)`.
    pub fn lmi(&self, p: &HermitianMatrix, q: Option<&HermitianMatrix>, lambda: f64) -> HermitianMatrix {
        let sys = &self.sys;
        let (n, m) = (sys.n(), sys.m());
        let g = sys.ab();
        let f = sys.state_selector();
        let cd = sys.cd();
        let pm = p.as_matrix();
        let mut out = g.adjoint() * pm * &g - f.adjoint() * pm * &f + cd.adjoint() * &cd;
        if let (Some(c), Some(q)) = (self.band_cos, q) {
            let qm = q.as_matrix();
            out += g.adjoint() * qm * &f + f.adjoint() * qm * &g - f.adjoint() * qm * &f * Complex64::new(2.0 * c, 0.0);
        }
        for i in n..n + m {
            out[(i, i)] -= Complex64::new(lambda, 0.0);
        }
        HermitianMatrix::new(out).expect("square")
    }
}

/// The KYP dual of the full-band primal.
pub fn build_dual_kyp(sys: &StateSpace) -> DualProblem {
    DualProblem {
        sys: sys.clone(),
        band_cos: None,
    }
}

/// The generalized KYP dual of a band-restricted primal. High bands become
/// low bands of `(-A, -B, C, D)` with `theta0 -> pi - theta0`; middle bands
/// become low bands of the frequency-shifted system.
pub fn build_dual_gkyp(sys: &StateSpace, band: FrequencyBand) -> Result<DualProblem> {
    let band = band.validated()?;
    let (enc, theta0) = match band {
        FrequencyBand::Full => {
            return Err(Error::InvalidBand(
                "full band has no generalized KYP form; use build_dual_kyp".into(),
            ))
        }
        FrequencyBand::Low { theta0 } => (sys.clone(), theta0),
        FrequencyBand::High { theta0 } => (sys.negate_dynamics(), PI - theta0),
        FrequencyBand::Middle { theta1, theta2 } => {
            let (shifted, theta0, _) = shift_middle(sys, theta1, theta2)?;
            (shifted, theta0)
        }
    };
    Ok(DualProblem {
        sys: enc,
        band_cos: Some(theta0.cos()),
    })
}

/// Dual problem for any band: KYP for the full band, generalized KYP otherwise.
pub fn build_dual(sys: &StateSpace, band: FrequencyBand) -> Result<DualProblem> {
    match band.validated()? {
        FrequencyBand::Full => Ok(build_dual_kyp(sys)),
        other => build_dual_gkyp(sys, other),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::herm::{symmetrize, CVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(a: f64, b: f64, c: f64, d: f64) -> StateSpace {
        StateSpace::from_real(1, 1, 1, &[a], &[b], &[c], &[d]).unwrap()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, k: usize) -> CMatrix {
        CMatrix::from_fn(r, k, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    fn random_system(rng: &mut ChaCha8Rng, n: usize, m: usize, l: usize) -> StateSpace {
        let a = random_matrix(rng, n, n);
        let rho = crate::lti::spectral_radius(&a).unwrap();
        StateSpace::new(
            a * Complex64::new(0.8 / rho, 0.0),
            random_matrix(rng, n, m),
            random_matrix(rng, l, n),
            random_matrix(rng, l, m),
        )
        .unwrap()
    }

    #[test]
    fn slot_coefficients_read_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = symmetrize(&random_matrix(&mut rng, 3, 3));
        for slot in hermitian_slots(3) {
            let c = slot.coefficient(3);
            assert!((c.inner(&h) - slot.value(h.as_matrix())).abs() < 1e-15);
        }
        assert_eq!(hermitian_slots(3).len(), 9);
        let basis = hermitian_basis(3);
        for (i, a) in basis.iter().enumerate() {
            for (j, b) in basis.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((a.inner(b) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn scalarized_equalities_match_matrix_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let sys = random_system(&mut rng, 3, 2, 2);
            let problem = build_primal(&sys, FrequencyBand::Full).unwrap();
            assert_eq!(problem.state_equalities, 9);
            let v = symmetrize(&random_matrix(&mut rng, 5, 5));
            let residual = state_map(&sys, v.as_matrix());
            let slots = hermitian_slots(3);
            let scalars = problem.equality_residuals(&v);
            for (slot, r) in slots.iter().zip(&scalars) {
                assert!((slot.value(&residual) - r).abs() < 1e-13);
            }
            let weighted: f64 = slots
                .iter()
                .zip(&scalars)
                .map(|(s, r)| s.frobenius_weight() * r * r)
                .sum();
            assert!((weighted.sqrt() - residual.norm()).abs() < 1e-12 * (1.0 + residual.norm()));
        }
    }

    #[test]
    fn sinusoid_covariance_is_feasible() {
        // V = v v* with e^{j theta} x = A x + B w satisfies every constraint
        // of the matching band problem.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sys = random_system(&mut rng, 3, 2, 2);
        for &theta in &[0.2, 2.5] {
            let w = random_matrix(&mut rng, 2, 1).column(0).into_owned();
            let w = &w / Complex64::new(w.norm(), 0.0);
            let res = CMatrix::identity(3, 3) * Complex64::from_polar(1.0, theta) - sys.a();
            let x = res.try_inverse().unwrap() * sys.b() * &w;
            let v = HermitianMatrix::outer(&CVector::from_iterator(5, x.iter().chain(w.iter()).copied()));
            let full = build_primal(&sys, FrequencyBand::Full).unwrap();
            assert!(full.max_violation(&v) < 1e-12);
            let low = build_primal(&sys, FrequencyBand::low(1.0).unwrap()).unwrap();
            let high = build_primal(&sys, FrequencyBand::high(1.0).unwrap()).unwrap();
            if theta < 1.0 {
                assert!(low.max_violation(&v) < 1e-12);
                assert!(high.max_violation(&v) > 1e-6);
            } else {
                assert!(high.max_violation(&v) < 1e-12);
                assert!(low.max_violation(&v) > 1e-6);
            }
        }
    }

    #[test]
    fn example_system_forces_zero_state_block() {
        let problem = build_primal(&scalar(0.0, 0.0, 1.0, 1.0), FrequencyBand::Full).unwrap();
        assert_eq!(problem.equalities.len(), 1);
        let e = problem.equalities[0].coeff.as_matrix();
        assert_eq!(e[(0, 0)], Complex64::new(1.0, 0.0));
        assert_eq!(e[(1, 1)], Complex64::new(0.0, 0.0));
        assert!(problem.psd_sides.is_empty());
        assert_eq!(
            problem.objective(&HermitianMatrix::outer(&CVector::from_vec(vec![
                Complex64::new(0.0, 0.0),
                Complex64::new(1.0, 0.0)
            ]))),
            1.0
        );
    }

    #[test]
    fn unstable_rejected() {
        assert!(matches!(
            build_primal(&scalar(1.2, 1.0, 1.0, 0.0), FrequencyBand::Full),
            Err(Error::Unstable { .. })
        ));
        assert!(build_primal(&scalar(0.5, 1.0, 1.0, 0.0), FrequencyBand::Low { theta0: 0.0 }).is_err());
        assert!(build_dual_gkyp(&scalar(0.5, 1.0, 1.0, 0.0), FrequencyBand::Full).is_err());
    }

    #[test]
    fn dual_lmi_reduces_to_kyp_without_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sys = random_system(&mut rng, 2, 1, 1);
        let p = symmetrize(&random_matrix(&mut rng, 2, 2));
        let kyp = build_dual_kyp(&sys).lmi(&p, None, 0.7);
        let g = build_dual_gkyp(&sys, FrequencyBand::low(1.0).unwrap()).unwrap();
        let gk = g.lmi(&p, Some(&HermitianMatrix::zeros(2)), 0.7);
        assert!(kyp.sub(&gk).frobenius() < 1e-14);
    }

    #[test]
    fn weak_duality_on_feasible_pairs() {
        // <cost, V> <= lambda whenever V is primal feasible and the LMI holds:
        // <LMI, V> <= 0 expands to <cost, V> - lambda tr_w(V) + (terms vanishing on feasible V).
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let sys = random_system(&mut rng, 2, 1, 1);
        let problem = build_primal(&sys, FrequencyBand::Full).unwrap();
        let dual = build_dual_kyp(&sys);
        let theta = 0.4;
        let res = CMatrix::identity(2, 2) * Complex64::from_polar(1.0, theta) - sys.a();
        let w = CVector::from_element(1, Complex64::new(1.0, 0.0));
        let x = res.try_inverse().unwrap() * sys.b() * &w;
        let v = HermitianMatrix::outer(&CVector::from_iterator(3, x.iter().chain(w.iter()).copied()));
        let p = symmetrize(&random_matrix(&mut rng, 2, 2));
        // pick lambda large enough for feasibility along this P
        let mut lambda = 0.0;
        while dual.lmi(&p, None, lambda).max_eigenvalue() > 0.0 && lambda < 1e8 {
            lambda = lambda * 2.0 + 1.0;
        }
        if dual.lmi(&p, None, lambda).max_eigenvalue() <= 0.0 {
            assert!(problem.objective(&v) <= lambda + 1e-9);
        }
        // identity behind it
        let l = dual.lmi(&p, None, lambda);
        let tr_w = v.as_matrix()[(2, 2)].re;
        assert!((l.inner(&v) - (problem.objective(&v) - lambda * tr_w)).abs() < 1e-9 * (1.0 + lambda));
    }
}
