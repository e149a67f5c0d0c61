//! Rank-one certificates from an optimal lifted matrix.
//!
//! A feasible `V` is factored as `V = S S*`; the state equality says
//! `F F* = G G*` for `F = [I 0] S` and `G = [A B] S`, so some unitary `U`
//! satisfies `F = G U`. Each eigenvector `u` of `U` gives a rank-one feasible
//! piece `S u (S u)*`, and the piece with the best output/input energy ratio,
//! rescaled to unit input energy, is a worst-case sinusoid.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::band::FrequencyBand;
use crate::build::{build_primal, ConicProblem};
use crate::error::{Error, Result};
use crate::herm::{full_svd, numerical_rank, pinv, psd_sqrt, symmetrize, CMatrix, CVector, HermitianMatrix};
use crate::lti::{shift_middle, wrap_angle, StateSpace};
use crate::solver::{solve, SolverSettings, SolverSolution};

/// Tolerance for every certificate invariant.
pub const TOL_CERT: f64 = 1e-6;
/// Tolerance for dilation preconditions.
pub const TOL_PRE: f64 = 1e-6;
/// Minimum input energy for a piece to be selectable.
pub const EPS_P: f64 = 1e-10;
/// Allowed shortfall of the selected piece's value below the solver objective.
pub const SELECTION_SLACK: f64 = 1e-6;
/// Allowed distance of the extracted frequency from the band.
pub const ANGLE_TOL: f64 = 1e-4;

/// Extra solves with tolerances scaled by [`REFINE_FACTOR`] each time.
const REFINE_ROUNDS: usize = 2;
const REFINE_FACTOR: f64 = 1e-2;
/// Relative singular value cutoff for rank decisions inside the dilation.
const DILATION_RANK_TOL: f64 = 1e-9;
/// Eigenvalues of `V` below this fraction of its norm are dropped from the square root.
const SPLIT_ZERO_REL: f64 = 1e-12;
/// Pieces whose relative dynamics residual exceeds this are solver noise.
const PIECE_FEAS_TOL: f64 = 1e-5;
/// Relative cutoff for treating a lifted matrix as rank one.
const RANK_ONE_TOL: f64 = 1e-6;
/// Below this state norm (with unit input) the optimum is pure feedthrough.
const FEEDTHROUGH_TOL: f64 = 1e-7;

/// Worst-case sinusoid `w_k = w_opt e^{j theta_opt k}` with steady state
/// `x_opt e^{j theta_opt k}`.
#[derive(Debug, Clone)]
pub struct RankOneCertificate {
    pub x_opt: CVector,
    pub w_opt: CVector,
    pub theta_opt: f64,
    /// `||C x_opt + D w_opt||^2`
    pub mu_opt: f64,
    /// The state vanishes and every frequency is optimal; `theta_opt` is a convention.
    pub every_frequency_optimal: bool,
}

impl RankOneCertificate {
    /// `||e^{j theta} x - (A x + B w)||`
    pub fn dynamics_residual(&self, sys: &StateSpace) -> f64 {
        let next = sys.a() * &self.x_opt + sys.b() * &self.w_opt;
        (&self.x_opt * Complex64::from_polar(1.0, self.theta_opt) - next).norm()
    }

    /// Checks the certificate invariants at [`TOL_CERT`].
    pub fn check(&self, sys: &StateSpace) -> Result<()> {
        let wn = self.w_opt.norm();
        if (wn - 1.0).abs() > TOL_CERT {
            return Err(Error::Extraction(format!("input direction has norm {wn}")));
        }
        let res = self.dynamics_residual(sys);
        if res > TOL_CERT * (self.x_opt.norm() + wn) {
            return Err(Error::Extraction(format!("dynamics residual {res:.3e}")));
        }
        let out = (sys.c() * &self.x_opt + sys.d() * &self.w_opt).norm_squared();
        if (out - self.mu_opt).abs() > TOL_CERT * self.mu_opt.max(1.0) {
            return Err(Error::Extraction(format!(
                "output energy {out} does not match {}",
                self.mu_opt
            )));
        }
        Ok(())
    }
}

/// One rank-one term of a split.
#[derive(Debug, Clone)]
pub struct RankOnePiece {
    pub v: HermitianMatrix,
    /// Input energy, the trace of the input block.
    pub p: f64,
    /// Output energy `<[C D]*[C D], v>`.
    pub mu: f64,
    /// Frequency of the sinusoid this piece describes.
    pub theta: f64,
    /// `||e^{j theta} x - (A x + B w)|| / (||x|| + ||w||)` for the piece's factor.
    pub residual: f64,
}

/// Cayley-form dilation `U = s (I + j c H)(I - j c H)^{-1}` with `H` Hermitian
/// and `s = -1` when `flip` is set.
struct Dilation {
    h: HermitianMatrix,
    scale: f64,
    flip: bool,
}

impl Dilation {
    fn unitary(&self) -> Result<CMatrix> {
        let k = self.h.size();
        let jh = self.h.as_matrix() * Complex64::new(0.0, self.scale);
        let id = CMatrix::identity(k, k);
        let inv = (&id - &jh)
            .try_inverse()
            .ok_or_else(|| Error::DegenerateDilation("I - Delta is singular".into()))?;
        let u = (&id + &jh) * inv;
        if !u.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::DegenerateDilation("non-finite unitary".into()));
        }
        Ok(if self.flip { -u } else { u })
    }

    /// Eigenphases in `(-pi, pi]` with orthonormal eigenvectors.
    fn eigen(&self) -> (Vec<f64>, CMatrix) {
        let (values, vectors) = self.h.eigh();
        let phases = values
            .iter()
            .map(|&l| {
                let base = 2.0 * (self.scale * l).atan();
                if self.flip {
                    wrap_angle(base + PI)
                } else {
                    wrap_angle(base)
                }
            })
            .collect();
        (phases, vectors)
    }
}

fn check_gram(f: &CMatrix, g: &CMatrix) -> Result<()> {
    if f.shape() != g.shape() {
        return Err(Error::Dimension(format!(
            "F is {:?} but G is {:?}",
            f.shape(),
            g.shape()
        )));
    }
    let ff = f * f.adjoint();
    let gap = (&ff - g * g.adjoint()).norm();
    if gap > TOL_PRE * ff.norm().max(1.0) {
        return Err(Error::Input(format!("F F* and G G* differ by {gap:.3e}")));
    }
    Ok(())
}

/// Skew-Hermitian generator `Delta` of the Cayley transform, returned as `-j Delta`.
fn generator(p: &CMatrix, q: &CMatrix, band: bool) -> Result<HermitianMatrix> {
    let c = p.ncols();
    let (_, s, vp) = full_svd(p)?;
    let smax = s.iter().copied().fold(0.0, f64::max);
    let r = if smax == 0.0 {
        0
    } else {
        s.iter().filter(|&&x| x > DILATION_RANK_TOL * smax).count()
    };
    let top = vp.adjoint() * pinv(p, DILATION_RANK_TOL)? * q * &vp;
    let rr = top.view((0, 0), (r, r)).into_owned();
    let ss = top.view((0, r), (r, c - r)).into_owned();
    let mut core = CMatrix::zeros(c, c);
    core.view_mut((0, 0), (r, r)).copy_from(&rr);
    core.view_mut((0, r), (r, c - r)).copy_from(&ss);
    core.view_mut((r, 0), (c - r, r)).copy_from(&(-ss.adjoint()));
    if band && r > 0 && r < c {
        let id = CMatrix::identity(r, r);
        let m = pinv(&(&id + &rr * &rr), DILATION_RANK_TOL)?;
        core.view_mut((r, r), (c - r, c - r))
            .copy_from(&(-(ss.adjoint() * &rr * m * &ss)));
    }
    let delta = &vp * core * vp.adjoint();
    if !delta.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        return Err(Error::DegenerateDilation("non-finite generator".into()));
    }
    // Delta is skew-Hermitian in exact arithmetic; -j Delta is Hermitian.
    Ok(symmetrize(&(delta * Complex64::new(0.0, -1.0))))
}

fn full_dilation(f: &CMatrix, g: &CMatrix) -> Result<Dilation> {
    check_gram(f, g)?;
    let h = generator(&(f + g), &(f - g), false)?;
    Ok(Dilation {
        h,
        scale: 1.0,
        flip: false,
    })
}

fn band_dilation(f: &CMatrix, g: &CMatrix, theta0: f64) -> Result<Dilation> {
    if !(theta0.is_finite() && theta0 > 0.0 && theta0 < PI) {
        return Err(Error::InvalidBand(format!("theta0 must lie in (0, pi), got {theta0}")));
    }
    check_gram(f, g)?;
    let cos = theta0.cos();
    let ff = f * f.adjoint();
    let side = HermitianMatrix::new(f * g.adjoint() + g * f.adjoint() - &ff * Complex64::new(2.0 * cos, 0.0))?;
    let lmin = if side.size() == 0 { 0.0 } else { side.min_eigenvalue() };
    if lmin < -TOL_PRE * ff.norm().max(1.0) {
        return Err(Error::Input(format!(
            "band precondition violated, min eigenvalue {lmin:.3e}"
        )));
    }
    let mu = (1.0 - cos) / (1.0 + cos);
    let rt = mu.sqrt();
    let h = generator(&((f + g) * Complex64::new(rt, 0.0)), &(f - g), true)?;
    Ok(Dilation {
        h,
        scale: rt,
        flip: false,
    })
}

/// Unitary `U` with `F = G U`, given `F F* = G G*`.
pub fn unitary_dilation(f: &CMatrix, g: &CMatrix) -> Result<CMatrix> {
    full_dilation(f, g)?.unitary()
}

/// Unitary `U` with `F = G U` and `U + U* >= 2 cos(theta0) I`, given
/// `F F* = G G*` and `F G* + G F* >= 2 cos(theta0) F F*`.
pub fn unitary_dilation_band(f: &CMatrix, g: &CMatrix, theta0: f64) -> Result<CMatrix> {
    band_dilation(f, g, theta0)?.unitary()
}

fn dilation_for(f: &CMatrix, g: &CMatrix, band: FrequencyBand) -> Result<Dilation> {
    match band {
        FrequencyBand::Full => full_dilation(f, g),
        FrequencyBand::Low { theta0 } => band_dilation(f, g, theta0),
        // F = (-G)(-U) with -U confined to the low band of width pi - theta0.
        FrequencyBand::High { theta0 } => {
            let mut d = band_dilation(f, &(-g), PI - theta0)?;
            d.flip = true;
            Ok(d)
        }
        FrequencyBand::Middle { .. } => unreachable!("middle bands are shifted first"),
    }
}

fn piece_from(sys: &StateSpace, s: CVector, theta: f64) -> RankOnePiece {
    let n = sys.n();
    let p = s.rows(n, sys.m()).norm_squared();
    let mu = (sys.cd() * &s).norm_squared();
    let x = s.rows(0, n);
    let scale = x.norm() + p.sqrt();
    let residual = if scale > 0.0 {
        (x * Complex64::from_polar(1.0, theta) - sys.ab() * &s).norm() / scale
    } else {
        0.0
    };
    RankOnePiece {
        v: HermitianMatrix::outer(&s),
        p,
        mu,
        theta,
        residual,
    }
}

/// Splits a feasible `V` into rank-one feasible pieces summing to `V`.
pub fn rank_one_split(v: &HermitianMatrix, sys: &StateSpace, band: FrequencyBand) -> Result<Vec<RankOnePiece>> {
    let k = sys.n() + sys.m();
    if v.size() != k {
        return Err(Error::Dimension(format!("V is {0}x{0}, expected {k}x{k}", v.size())));
    }
    let band = band.validated()?;
    let vn = v.norm2();
    if vn == 0.0 {
        return Ok(Vec::new());
    }
    let (values, vectors) = v.eigh();
    if numerical_rank(v.as_matrix(), RANK_ONE_TOL * 1e-3) == 1 {
        let top: CVector = vectors.column(k - 1) * Complex64::new(values[k - 1].max(0.0).sqrt(), 0.0);
        let next = sys.ab() * &top;
        let theta = top.rows(0, sys.n()).dotc(&next).arg();
        let mut piece = piece_from(sys, top, theta);
        piece.v = v.clone();
        return Ok(vec![piece]);
    }

    let (dyn_sys, dyn_band, offset) = match band {
        FrequencyBand::Middle { theta1, theta2 } => {
            let (shifted, theta0, center) = shift_middle(sys, theta1, theta2)?;
            (shifted, FrequencyBand::Low { theta0 }, center)
        }
        other => (sys.clone(), other, 0.0),
    };
    let s = psd_sqrt(&v.clip_psd(), SPLIT_ZERO_REL * vn)?;
    let f = dyn_sys.state_selector() * &s;
    let g = dyn_sys.ab() * &s;
    let dilation = dilation_for(&f, &g, dyn_band)?;
    let (phases, u) = dilation.eigen();
    // x = e^{j phi} (A x + B w) on an eigenvector, so the piece oscillates at -phi.
    Ok(phases
        .into_iter()
        .enumerate()
        .map(|(i, phase)| piece_from(sys, &s * u.column(i), wrap_angle(offset - phase)))
        .collect())
}

/// `V_J / p_J` for the piece maximizing `mu / p` among pieces with `p > EPS_P`.
///
/// Pieces that fail the dynamics to [`PIECE_FEAS_TOL`] come from solver noise
/// and can carry arbitrary ratios; they are skipped whenever a feasible piece exists.
pub fn select_best(pieces: &[RankOnePiece]) -> Result<HermitianMatrix> {
    let energetic: Vec<&RankOnePiece> = pieces.iter().filter(|pc| pc.p > EPS_P).collect();
    let feasible: Vec<&RankOnePiece> = energetic
        .iter()
        .copied()
        .filter(|pc| pc.residual <= PIECE_FEAS_TOL)
        .collect();
    let pool = if feasible.is_empty() { energetic } else { feasible };
    let best = pool
        .into_iter()
        .max_by(|a, b| (a.mu / a.p).total_cmp(&(b.mu / b.p)))
        .ok_or_else(|| Error::DegenerateCertificate("no piece carries input energy".into()))?;
    Ok(best.v.scale(1.0 / best.p))
}

/// Reads the sinusoid off a rank-one feasible `V_hat = v v*`.
pub fn extract_input(v_hat: &HermitianMatrix, sys: &StateSpace) -> Result<RankOneCertificate> {
    let n = sys.n();
    let m = sys.m();
    if v_hat.size() != n + m {
        return Err(Error::Dimension(format!(
            "V is {0}x{0}, expected {1}x{1}",
            v_hat.size(),
            n + m
        )));
    }
    let rank = numerical_rank(v_hat.as_matrix(), RANK_ONE_TOL);
    if rank != 1 {
        return Err(Error::Input(format!(
            "expected a rank-one matrix, numerical rank is {rank}"
        )));
    }
    let (values, vectors) = v_hat.eigh();
    let top = vectors.column(n + m - 1) * Complex64::new(values[n + m - 1].sqrt(), 0.0);
    let w = top.rows(n, m).into_owned();
    let wn = w.norm();
    if wn <= EPS_P.sqrt() {
        return Err(Error::DegenerateCertificate("input part of the factor vanishes".into()));
    }
    // Unit input with its largest entry real and positive.
    let pivot = w
        .iter()
        .copied()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .expect("m > 0");
    let phase = Complex64::from_polar(1.0 / wn, -pivot.arg());
    let x_opt: CVector = top.rows(0, n) * phase;
    let w_opt: CVector = w * phase;

    let next = sys.a() * &x_opt + sys.b() * &w_opt;
    let every_frequency_optimal = x_opt.norm() <= FEEDTHROUGH_TOL && next.norm() <= FEEDTHROUGH_TOL;
    let theta_opt = if every_frequency_optimal {
        0.0
    } else {
        x_opt.dotc(&next).arg()
    };
    let mu_opt = (sys.c() * &x_opt + sys.d() * &w_opt).norm_squared();
    let cert = RankOneCertificate {
        x_opt,
        w_opt,
        theta_opt,
        mu_opt,
        every_frequency_optimal,
    };
    cert.check(sys)?;
    Ok(cert)
}

/// Result of the full pipeline.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub norm: f64,
    pub certificate: RankOneCertificate,
    pub solution: SolverSolution,
    pub pieces: Vec<RankOnePiece>,
}

/// Solves the lifted program for `band` and extracts a worst-case sinusoid.
///
/// Interior-point solutions carry small noise directions that can pull the
/// best rank-one piece below the objective. When the selected piece falls
/// short by more than [`SELECTION_SLACK`] or extraction fails, the program is
/// re-solved with tighter tolerances.
pub fn analyze(sys: &StateSpace, band: FrequencyBand, settings: &SolverSettings) -> Result<Analysis> {
    let band = band.validated()?;
    let problem = build_primal(sys, band)?;
    let mut attempt = *settings;
    let mut fallback: Option<Analysis> = None;
    for round in 0..=REFINE_ROUNDS {
        let last = round == REFINE_ROUNDS;
        match attempt_analysis(&problem, sys, band, &attempt) {
            Ok((analysis, short)) => {
                if !short || last {
                    return Ok(analysis);
                }
                fallback = Some(analysis);
            }
            Err(e) if last || fallback.is_some() => return fallback.ok_or(e),
            Err(_) => {}
        }
        attempt.tol_feas *= REFINE_FACTOR;
        attempt.tol_gap *= REFINE_FACTOR;
    }
    unreachable!("the last round always returns")
}

/// One solve and extraction; the flag reports a selection shortfall.
fn attempt_analysis(
    problem: &ConicProblem,
    sys: &StateSpace,
    band: FrequencyBand,
    settings: &SolverSettings,
) -> Result<(Analysis, bool)> {
    let solution = solve(problem, settings)?;
    if !solution.status.is_usable() {
        return Err(Error::Solver {
            status: solution.status,
            message: format!("solver stopped after {} iterations", solution.iterations),
        });
    }
    let pieces = rank_one_split(&solution.v, sys, band)?;
    let v_hat = select_best(&pieces)?;
    let short = problem.objective(&v_hat) < solution.objective - SELECTION_SLACK;
    let certificate = certify(&v_hat, sys, band)?;
    let analysis = Analysis {
        norm: solution.objective.max(0.0).sqrt(),
        certificate,
        solution,
        pieces,
    };
    Ok((analysis, short))
}

fn certify(v_hat: &HermitianMatrix, sys: &StateSpace, band: FrequencyBand) -> Result<RankOneCertificate> {
    let mut certificate = extract_input(v_hat, sys)?;
    if certificate.every_frequency_optimal {
        certificate.theta_opt = band.representative();
    }
    if !band.contains(certificate.theta_opt, ANGLE_TOL) {
        return Err(Error::Extraction(format!(
            "frequency {} lies outside the band {band}",
            certificate.theta_opt
        )));
    }
    Ok(certificate)
}

/// Eigenphases of a unitary matrix, sorted ascending in `(-pi, pi]`.
pub fn eigenphases(u: &CMatrix) -> Result<Vec<f64>> {
    let mut phases: Vec<f64> = crate::lti::eigenvalues(u)?.into_iter().map(|z| z.arg()).collect();
    phases.sort_by(f64::total_cmp);
    Ok(phases)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, PI};

    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::lti::{freq_response, gain};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn scalar(a: f64, b: f64, cc: f64, d: f64) -> StateSpace {
        StateSpace::from_real(1, 1, 1, &[a], &[b], &[cc], &[d]).unwrap()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, k: usize) -> CMatrix {
        CMatrix::from_fn(r, k, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    fn random_unitary_with_phases(rng: &mut ChaCha8Rng, phases: &[f64]) -> CMatrix {
        let k = phases.len();
        let q = random_matrix(rng, k, k).qr().q();
        let d = CMatrix::from_diagonal(&CVector::from_iterator(
            k,
            phases.iter().map(|&p| Complex64::from_polar(1.0, p)),
        ));
        &q * d * q.adjoint()
    }

    fn unitary_error(u: &CMatrix) -> f64 {
        (u.adjoint() * u - CMatrix::identity(u.nrows(), u.ncols())).norm()
    }

    /// `[x; w]` for the steady state of `w e^{j theta k}`.
    fn steady_state(sys: &StateSpace, w: &CVector, theta: f64) -> CVector {
        let n = sys.n();
        let lhs = CMatrix::identity(n, n) * Complex64::from_polar(1.0, theta) - sys.a();
        let x = lhs.lu().solve(&(sys.b() * w)).unwrap();
        let mut v = CVector::zeros(n + sys.m());
        v.rows_mut(0, n).copy_from(&x);
        v.rows_mut(n, sys.m()).copy_from(w);
        v
    }

    #[test]
    fn dilation_examples() {
        let id = CMatrix::identity(2, 2);
        assert!((unitary_dilation(&id, &id).unwrap() - &id).norm() < 1e-15);

        let u = unitary_dilation(
            &CMatrix::from_element(1, 1, c(0.0, 1.0)),
            &CMatrix::from_element(1, 1, c(1.0, 0.0)),
        )
        .unwrap();
        assert!((u[(0, 0)] - c(0.0, 1.0)).norm() < 1e-15);

        let g = CMatrix::from_row_slice(1, 2, &[c(1.0, 0.0), c(0.0, 1.0)]);
        assert!((unitary_dilation_band(&g, &g, 0.3).unwrap() - &id).norm() < 1e-15);

        for phi in [0.2, -0.7, 1.0] {
            let f = CMatrix::from_element(1, 1, Complex64::from_polar(1.0, phi));
            let u = unitary_dilation_band(&f, &CMatrix::from_element(1, 1, c(1.0, 0.0)), 1.0).unwrap();
            assert!((u[(0, 0)] - Complex64::from_polar(1.0, phi)).norm() < 1e-13);
        }
    }

    #[test]
    fn dilation_preconditions() {
        let f = CMatrix::from_element(1, 1, c(2.0, 0.0));
        let g = CMatrix::from_element(1, 1, c(1.0, 0.0));
        assert!(matches!(unitary_dilation(&f, &g), Err(Error::Input(_))));
        let f = CMatrix::from_element(1, 1, Complex64::from_polar(1.0, 2.0));
        assert!(matches!(unitary_dilation_band(&f, &g, 1.0), Err(Error::Input(_))));
        assert!(matches!(
            unitary_dilation(&f, &CMatrix::zeros(1, 2)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn dilation_from_a_sinusoid_covariance() {
        let sys = StateSpace::from_real(2, 1, 1, &[0.5, 0.2, -0.1, 0.3], &[1.0, 0.5], &[1.0, 0.0], &[0.0]).unwrap();
        let v1 = steady_state(&sys, &CVector::from_element(1, c(1.0, 0.0)), 0.4);
        let v2 = steady_state(&sys, &CVector::from_element(1, c(0.0, 0.5)), -1.3);
        let v = HermitianMatrix::outer(&v1).add(&HermitianMatrix::outer(&v2));
        let s = psd_sqrt(&v, 0.0).unwrap();
        let f = sys.state_selector() * &s;
        let g = sys.ab() * &s;
        let u = unitary_dilation(&f, &g).unwrap();
        assert!((&f - &g * &u).norm() < 1e-8 * g.norm());
        assert!(unitary_error(&u) < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn dilation_recovers_a_unitary(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let phases: Vec<f64> = (0..cols).map(|_| rng.random_range(-PI..PI)).collect();
            let u0 = random_unitary_with_phases(&mut rng, &phases);
            let g = random_matrix(&mut rng, rows, cols);
            let f = &g * &u0;
            let u = unitary_dilation(&f, &g).unwrap();
            prop_assert!((&f - &g * &u).norm() <= 1e-8 * g.norm());
            prop_assert!(unitary_error(&u) <= 1e-8);
        }

        #[test]
        fn band_dilation_confines_the_spectrum(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..6, theta0 in 0.1f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let phases: Vec<f64> = (0..cols).map(|_| rng.random_range(-theta0..theta0)).collect();
            let u0 = random_unitary_with_phases(&mut rng, &phases);
            let g = random_matrix(&mut rng, rows, cols);
            let f = &g * &u0;
            let u = unitary_dilation_band(&f, &g, theta0).unwrap();
            prop_assert!((&f - &g * &u).norm() <= 1e-8 * g.norm());
            prop_assert!(unitary_error(&u) <= 1e-8);
            let side = symmetrize(&(&u + u.adjoint() - CMatrix::identity(cols, cols) * c(2.0 * theta0.cos(), 0.0)));
            prop_assert!(side.min_eigenvalue() >= -1e-8);
            for p in eigenphases(&u).unwrap() {
                prop_assert!(p.abs() <= theta0 + 1e-6);
            }
        }

        #[test]
        fn scalar_dilation_is_the_phase_ratio(phi in -3.1f64..3.1, psi in -3.1f64..3.1, r in 0.1f64..10.0) {
            let f = CMatrix::from_element(1, 1, Complex64::from_polar(r, phi));
            let g = CMatrix::from_element(1, 1, Complex64::from_polar(r, psi));
            let u = unitary_dilation(&f, &g).unwrap();
            prop_assert!((u[(0, 0)] - Complex64::from_polar(1.0, phi - psi)).norm() < 1e-9);
        }
    }

    #[test]
    fn split_examples() {
        let sys = StateSpace::from_real(2, 1, 1, &[0.5, 0.2, -0.1, 0.3], &[1.0, 0.5], &[1.0, 0.0], &[0.2]).unwrap();
        assert!(rank_one_split(&HermitianMatrix::zeros(3), &sys, FrequencyBand::Full)
            .unwrap()
            .is_empty());

        let v1 = steady_state(&sys, &CVector::from_element(1, c(1.0, 0.0)), 0.4);
        let single = HermitianMatrix::outer(&v1);
        let pieces = rank_one_split(&single, &sys, FrequencyBand::Full).unwrap();
        assert_eq!(pieces.len(), 1);
        assert_eq!(pieces[0].v.as_matrix(), single.as_matrix());
        assert_abs_diff_eq!(pieces[0].theta, 0.4, epsilon = 1e-10);

        let v2 = steady_state(&sys, &CVector::from_element(1, c(0.0, 0.5)), -1.3);
        let v = single.add(&HermitianMatrix::outer(&v2));
        let pieces = rank_one_split(&v, &sys, FrequencyBand::Full).unwrap();
        let total = pieces.iter().fold(HermitianMatrix::zeros(3), |acc, pc| acc.add(&pc.v));
        assert!(total.sub(&v).frobenius() < 1e-12 * v.frobenius());
        let mut found: Vec<f64> = pieces.iter().filter(|pc| pc.p > 1e-8).map(|pc| pc.theta).collect();
        found.sort_by(f64::total_cmp);
        assert_eq!(found.len(), 2);
        assert_abs_diff_eq!(found[0], -1.3, epsilon = 1e-8);
        assert_abs_diff_eq!(found[1], 0.4, epsilon = 1e-8);

        // The same covariance is feasible for any band containing both frequencies.
        for band in [
            FrequencyBand::low(1.5).unwrap(),
            FrequencyBand::middle(-1.5, 0.5).unwrap(),
            FrequencyBand::high(0.3).unwrap(),
        ] {
            let pieces = rank_one_split(&v, &sys, band).unwrap();
            let mut found: Vec<f64> = pieces.iter().filter(|pc| pc.p > 1e-8).map(|pc| pc.theta).collect();
            found.sort_by(f64::total_cmp);
            assert_eq!(found.len(), 2, "{band}");
            assert_abs_diff_eq!(found[0], -1.3, epsilon = 1e-8);
            assert_abs_diff_eq!(found[1], 0.4, epsilon = 1e-8);
        }
    }

    #[test]
    fn selection_examples() {
        let piece = |p: f64, mu: f64| RankOnePiece {
            v: HermitianMatrix::identity(1).scale(p),
            p,
            mu,
            theta: 0.0,
            residual: 0.0,
        };
        let best = select_best(&[piece(0.5, 2.0)]).unwrap();
        assert_abs_diff_eq!(best.as_matrix()[(0, 0)].re, 1.0);
        let best = select_best(&[piece(0.5, 2.0), piece(0.25, 0.25)]).unwrap();
        assert_abs_diff_eq!(best.as_matrix()[(0, 0)].re, 1.0);
        let pieces = [piece(0.5, 1.0), piece(0.5, 2.0)];
        let best = select_best(&pieces).unwrap();
        assert_abs_diff_eq!(best.as_matrix()[(0, 0)].re, 1.0);
        assert!(matches!(
            select_best(&[piece(0.0, 1.0)]),
            Err(Error::DegenerateCertificate(_))
        ));
        let mut noisy = piece(1e-9, 1e-8);
        noisy.residual = 0.2;
        let best = select_best(&[piece(0.5, 1.0), noisy]).unwrap();
        assert_abs_diff_eq!(best.as_matrix()[(0, 0)].re, 1.0);
        assert!(select_best(&[]).is_err());
    }

    #[test]
    fn extraction_examples() {
        let s = scalar(0.5, 1.0, 1.0, 0.0);
        let v = CVector::from_vec(vec![c(0.0, 2.0), c(0.0, 1.0)]);
        let cert = extract_input(&HermitianMatrix::outer(&v), &s).unwrap();
        assert_abs_diff_eq!(cert.theta_opt, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cert.mu_opt, 4.0, epsilon = 1e-12);
        assert!((cert.x_opt[0] - c(2.0, 0.0)).norm() < 1e-12);
        assert!((cert.w_opt[0] - c(1.0, 0.0)).norm() < 1e-12);

        let ex1 = scalar(0.0, 0.0, 1.0, 1.0);
        let v = CVector::from_vec(vec![c(0.0, 0.0), c(1.0, 0.0)]);
        let cert = extract_input(&HermitianMatrix::outer(&v), &ex1).unwrap();
        assert!(cert.every_frequency_optimal);
        assert_eq!(cert.theta_opt, 0.0);
        assert_abs_diff_eq!(cert.mu_opt, 1.0, epsilon = 1e-14);

        assert!(matches!(
            extract_input(&HermitianMatrix::identity(2), &s),
            Err(Error::Input(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn extraction_recovers_a_constructed_sinusoid(seed in any::<u64>(), theta in -3.1f64..3.1) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..5);
            let m = rng.random_range(1..3);
            let mut a = random_matrix(&mut rng, n, n);
            let rho = crate::lti::spectral_radius(&a).unwrap();
            a *= c(0.8 / rho.max(1e-3), 0.0);
            let sys = StateSpace::new(a, random_matrix(&mut rng, n, m), random_matrix(&mut rng, 2, n), random_matrix(&mut rng, 2, m)).unwrap();
            let w = random_matrix(&mut rng, m, 1).column(0).into_owned();
            let v = steady_state(&sys, &w, theta);
            let cert = extract_input(&HermitianMatrix::outer(&v).scale(1.0 / w.norm_squared()), &sys).unwrap();
            prop_assert!((cert.theta_opt - theta).abs() < 1e-8);
            let h = freq_response(&sys, theta).unwrap();
            prop_assert!(((&h * &cert.w_opt).norm_squared() - cert.mu_opt).abs() < 1e-8 * (1.0 + cert.mu_opt));
        }
    }

    #[test]
    fn analyze_examples() {
        let settings = SolverSettings::default();
        let r = analyze(&scalar(0.0, 0.0, 1.0, 1.0), FrequencyBand::Full, &settings).unwrap();
        assert_abs_diff_eq!(r.norm, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(r.certificate.mu_opt, 1.0, epsilon = 1e-6);

        let s = scalar(0.5, 1.0, 1.0, 0.0);
        let r = analyze(&s, FrequencyBand::Full, &settings).unwrap();
        assert_abs_diff_eq!(r.norm, 2.0, epsilon = 1e-5);
        assert!(r.certificate.theta_opt.abs() < 1e-4);
        assert_abs_diff_eq!(r.certificate.mu_opt, 4.0, epsilon = 1e-5);

        let r = analyze(&s, FrequencyBand::high(FRAC_PI_2).unwrap(), &settings).unwrap();
        assert_abs_diff_eq!(r.norm, 0.8f64.sqrt(), epsilon = 1e-6);
        assert_abs_diff_eq!(r.certificate.theta_opt.abs(), FRAC_PI_2, epsilon = 1e-4);
        let g = gain(&s, r.certificate.theta_opt).unwrap();
        assert!((g * g - r.certificate.mu_opt).abs() <= 1e-5 * (1.0 + r.certificate.mu_opt));

        let r = analyze(&s, FrequencyBand::middle(FRAC_PI_2, PI).unwrap(), &settings).unwrap();
        assert_abs_diff_eq!(r.norm, 0.8f64.sqrt(), epsilon = 1e-6);
        assert_abs_diff_eq!(r.certificate.theta_opt, FRAC_PI_2, epsilon = 1e-4);
    }
}
