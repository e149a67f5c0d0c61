//! Dense primal-dual interior-point method for real block-diagonal SDPs.
//!
//! ```text
//! primal:  min <C, X>   s.t. <A_i, X> = b_i,  X psd
//! dual:    max b'y      s.t. sum_i y_i A_i + Z = C,  Z psd
//! ```
//!
//! Infeasible-start path following with the HKM search direction and a
//! Mehrotra predictor-corrector step. Constraints and the cost are rescaled
//! internally; all returned quantities are in the original scaling.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::{SolveStatus, SolverSettings};

/// Fraction-to-boundary factor for step lengths.
const STEP_FRACTION: f64 = 0.98;

/// Ray ratio below which an infeasibility certificate is accepted.
const INFEAS_TOL: f64 = 1e-8;

/// Loosened acceptance (relative to the requested tolerances) for `NearOptimal`.
const NEAR_FACTOR: f64 = 1e3;
/// Refinement passes applied to each search direction.
const REFINE_STEPS: usize = 6;
/// Consecutive iterations with a merit this far above the best seen before
/// the solve is treated as diverging.
const DIVERGED_FACTOR: f64 = 1e2;
const DIVERGED_ITERS: usize = 5;

struct Iterate {
    merit: f64,
    x: Blocks,
    y: DVector<f64>,
    z: Blocks,
    rel_p: f64,
    rel_d: f64,
    gap: f64,
    gap_scale: f64,
}

/// One constraint: the nonzero blocks of `A_i` and its right-hand side.
#[derive(Debug, Clone)]
pub(crate) struct BlockConstraint {
    pub blocks: Vec<(usize, DMatrix<f64>)>,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct BlockSdp {
    pub sizes: Vec<usize>,
    pub cost: Vec<DMatrix<f64>>,
    pub constraints: Vec<BlockConstraint>,
}

#[derive(Debug, Clone)]
pub(crate) struct IpmOutput {
    pub x: Vec<DMatrix<f64>>,
    pub y: DVector<f64>,
    pub status: SolveStatus,
    pub iterations: usize,
    #[cfg_attr(not(test), allow(dead_code))]
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub initial_gap: f64,
    pub final_gap: f64,
}

/// Decision returned by an iteration monitor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Monitor {
    Continue,
    Stop,
}

type Blocks = Vec<DMatrix<f64>>;

fn blocks_inner(a: &Blocks, b: &Blocks) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn blocks_norm(a: &Blocks) -> f64 {
    blocks_inner(a, a).sqrt()
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

impl BlockSdp {
    fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    fn rhs(&self) -> DVector<f64> {
        DVector::from_iterator(self.constraints.len(), self.constraints.iter().map(|c| c.rhs))
    }

    fn zeros(&self) -> Blocks {
        self.sizes.iter().map(|&s| DMatrix::zeros(s, s)).collect()
    }

    /// `A(X)_i = <A_i, X>`
    fn apply(&self, x: &Blocks) -> DVector<f64> {
        DVector::from_iterator(
            self.constraints.len(),
            self.constraints
                .iter()
                .map(|c| c.blocks.iter().map(|(b, a)| a.dot(&x[*b])).sum::<f64>()),
        )
    }

    /// `A^T(y) = sum_i y_i A_i`
    fn adjoint(&self, y: &DVector<f64>) -> Blocks {
        let mut out = self.zeros();
        for (c, &yi) in self.constraints.iter().zip(y.iter()) {
            if yi == 0.0 {
                continue;
            }
            for (b, a) in &c.blocks {
                out[*b] += a * yi;
            }
        }
        out
    }
}

/// Largest `alpha` with `x + alpha * dx` psd (infinite if unbounded).
fn max_step(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> f64 {
    let n = x.nrows();
    if n == 0 {
        return f64::INFINITY;
    }
    let chol = match Cholesky::new(x.clone()) {
        Some(c) => c,
        None => return 0.0,
    };
    let l = chol.l();
    let linv = match l.solve_lower_triangular(&DMatrix::identity(n, n)) {
        Some(m) => m,
        None => return 0.0,
    };
    let w = sym(&(&linv * dx * linv.transpose()));
    let lmin = w.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
    if !lmin.is_finite() {
        0.0
    } else if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

fn blocks_max_step(x: &Blocks, dx: &Blocks) -> f64 {
    x.iter()
        .zip(dx)
        .map(|(a, b)| max_step(a, b))
        .fold(f64::INFINITY, f64::min)
}

fn inverse_spd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    Cholesky::new(m.clone()).map(|c| sym(&c.inverse()))
}

struct Scaling {
    /// per-constraint divisor applied to (A_i, b_i)
    rows: Vec<f64>,
    /// divisor applied to C
    cost: f64,
}

fn rescale(problem: &BlockSdp) -> (BlockSdp, Scaling) {
    let rows: Vec<f64> = problem
        .constraints
        .iter()
        .map(|c| {
            let n = c.blocks.iter().map(|(_, a)| a.norm_squared()).sum::<f64>().sqrt();
            if n > 0.0 {
                n
            } else {
                1.0
            }
        })
        .collect();
    let cnorm = blocks_norm(&problem.cost);
    let cost = if cnorm > 0.0 { cnorm } else { 1.0 };
    let scaled = BlockSdp {
        sizes: problem.sizes.clone(),
        cost: problem.cost.iter().map(|c| c / cost).collect(),
        constraints: problem
            .constraints
            .iter()
            .zip(&rows)
            .map(|(c, &r)| BlockConstraint {
                blocks: c.blocks.iter().map(|(b, a)| (*b, a / r)).collect(),
                rhs: c.rhs / r,
            })
            .collect(),
    };
    (scaled, Scaling { rows, cost })
}

/// Runs the interior-point method. `monitor` sees the unscaled dual iterate
/// `y` after every iteration and may stop the solve early.
pub(crate) fn solve_block_sdp(
    original: &BlockSdp,
    settings: &SolverSettings,
    monitor: &mut dyn FnMut(&DVector<f64>) -> Monitor,
) -> IpmOutput {
    let (problem, scaling) = rescale(original);
    let p = &problem;
    let m = p.num_constraints();
    let b = p.rhs();
    let norm_b = 1.0 + b.norm();
    let norm_c = 1.0 + blocks_norm(&p.cost);

    // Infeasible starting point, block-wise multiples of the identity.
    let mut x: Blocks = Vec::with_capacity(p.sizes.len());
    let mut z: Blocks = Vec::with_capacity(p.sizes.len());
    for (blk, &s) in p.sizes.iter().enumerate() {
        let sf = s as f64;
        let mut xi = 10.0_f64.max(sf.sqrt());
        let mut eta = 10.0_f64.max(sf.sqrt()).max(p.cost[blk].norm());
        for c in &p.constraints {
            for (bi, a) in &c.blocks {
                if *bi == blk {
                    let an = a.norm();
                    xi = xi.max(sf * (1.0 + c.rhs.abs()) / (1.0 + an));
                    eta = eta.max(an);
                }
            }
        }
        x.push(DMatrix::identity(s, s) * xi);
        z.push(DMatrix::identity(s, s) * eta);
    }
    let mut y = DVector::<f64>::zeros(m);
    let order: f64 = p.sizes.iter().sum::<usize>() as f64;

    let unscale_y = |y: &DVector<f64>| -> DVector<f64> {
        DVector::from_iterator(m, y.iter().zip(&scaling.rows).map(|(v, r)| v * scaling.cost / r))
    };

    let initial_gap = blocks_inner(&x, &z) * scaling.cost;
    let mut status;
    let mut iterations = 0;
    let mut stalled = 0;
    let mut best: Option<Iterate> = None;
    let mut diverging = 0;

    loop {
        let rp = &b - p.apply(&x);
        let aty = p.adjoint(&y);
        let rd: Blocks = p.cost.iter().zip(&aty).zip(&z).map(|((c, a), zz)| c - a - zz).collect();
        let pobj = blocks_inner(&p.cost, &x);
        let dobj = b.dot(&y);
        let xz = blocks_inner(&x, &z);
        let rel_p = rp.norm() / norm_b;
        let rel_d = blocks_norm(&rd) / norm_c;
        // gap measured in the caller's objective units
        let gap_scale = 1.0 + pobj.abs() * scaling.cost;
        let gap = (pobj - dobj).abs().max(xz) * scaling.cost;

        if rel_p <= settings.tol_feas && rel_d <= settings.tol_feas && gap <= settings.tol_gap * gap_scale {
            status = SolveStatus::Optimal;
            break;
        }
        let merit = (rel_p / settings.tol_feas)
            .max(rel_d / settings.tol_feas)
            .max(gap / (settings.tol_gap * gap_scale));
        if merit.is_finite() && best.as_ref().is_none_or(|b| merit < b.merit) {
            best = Some(Iterate {
                merit,
                x: x.clone(),
                y: y.clone(),
                z: z.clone(),
                rel_p,
                rel_d,
                gap,
                gap_scale,
            });
            diverging = 0;
        } else if best
            .as_ref()
            .is_none_or(|b| merit.is_nan() || merit > DIVERGED_FACTOR * b.merit)
        {
            diverging += 1;
            if diverging >= DIVERGED_ITERS {
                status = SolveStatus::MaxIters;
                break;
            }
        } else {
            diverging = 0;
        }

        // Primal infeasibility: (y, Z) approaches a ray with A^T y + Z = 0, b'y > 0.
        if dobj > 0.0 {
            let ray: Blocks = aty.iter().zip(&z).map(|(a, zz)| a + zz).collect();
            if blocks_norm(&ray) <= INFEAS_TOL * dobj && y.norm() > 1e3 {
                status = SolveStatus::Infeasible;
                break;
            }
        }
        // Dual infeasibility: X approaches a ray with A(X) = 0, <C, X> < 0.
        if pobj < 0.0 {
            let ax = p.apply(&x);
            if ax.norm() <= INFEAS_TOL * (-pobj) && blocks_norm(&x) > 1e3 {
                status = SolveStatus::Unbounded;
                break;
            }
        }

        if iterations >= settings.max_iters {
            status = near_or(rel_p, rel_d, gap, gap_scale, settings, SolveStatus::MaxIters);
            break;
        }
        if monitor(&unscale_y(&y)) == Monitor::Stop {
            // the caller wants this iterate, not the best one
            best = None;
            status = near_or(rel_p, rel_d, gap, gap_scale, settings, SolveStatus::MaxIters);
            break;
        }
        let finite =
            x.iter().chain(z.iter()).all(|blk| blk.iter().all(|v| v.is_finite())) && y.iter().all(|v| v.is_finite());
        if !finite {
            status = SolveStatus::MaxIters;
            break;
        }

        let zinv: Option<Blocks> = z.iter().map(inverse_spd).collect();
        let zinv = match zinv {
            Some(v) => v,
            None => {
                status = near_or(rel_p, rel_d, gap, gap_scale, settings, SolveStatus::MaxIters);
                break;
            }
        };

        let factor = schur_factor(p, &x, &zinv);

        let x_rd_zinv: Blocks = x.iter().zip(&rd).zip(&zinv).map(|((xx, r), zi)| xx * r * zi).collect();
        let a_x_rd_zinv = p.apply(&x_rd_zinv);

        let direction = |k: &Blocks| -> Option<(Blocks, DVector<f64>, Blocks)> {
            let rhs = &rp - p.apply(k) + &a_x_rd_zinv;
            let mut dy = factor.solve(&rhs)?;
            let assemble = |dy: &DVector<f64>| -> (Blocks, Blocks) {
                let atdy = p.adjoint(dy);
                let dz: Blocks = rd.iter().zip(&atdy).map(|(r, a)| r - a).collect();
                let dx: Blocks = k
                    .iter()
                    .zip(&x)
                    .zip(&dz)
                    .zip(&zinv)
                    .map(|(((kk, xx), dzz), zi)| kk - sym(&(xx * dzz * zi)))
                    .collect();
                (dx, dz)
            };
            let (mut dx, mut dz) = assemble(&dy);
            // Iterative refinement on A(dX) = rp, kept only while it helps.
            let mut res = &rp - p.apply(&dx);
            for _ in 0..REFINE_STEPS {
                if res.norm() <= 1e-14 * (1.0 + rp.norm()) {
                    break;
                }
                let Some(corr) = factor.solve(&res) else { break };
                let cand_dy = &dy + corr;
                let (cand_dx, cand_dz) = assemble(&cand_dy);
                let cand_res = &rp - p.apply(&cand_dx);
                if cand_res.norm() >= res.norm() {
                    break;
                }
                (dy, dx, dz, res) = (cand_dy, cand_dx, cand_dz, cand_res);
            }
            Some((dx, dy, dz))
        };

        // Predictor.
        let k_aff: Blocks = x.iter().map(|xx| -xx).collect();
        let Some((dx_a, _, dz_a)) = direction(&k_aff) else {
            status = near_or(rel_p, rel_d, gap, gap_scale, settings, SolveStatus::MaxIters);
            break;
        };
        let ap = (STEP_FRACTION * blocks_max_step(&x, &dx_a)).min(1.0);
        let ad = (STEP_FRACTION * blocks_max_step(&z, &dz_a)).min(1.0);
        let mu = xz / order;
        let trial: f64 = x
            .iter()
            .zip(&dx_a)
            .zip(z.iter().zip(&dz_a))
            .map(|((xx, dxx), (zz, dzz))| (xx + dxx * ap).dot(&(zz + dzz * ad)))
            .sum();
        let ratio = (trial / xz).clamp(0.0, 1.0);
        let expon = if ap.min(ad) > 0.3 { 3.0 } else { 2.0 };
        let sigma = ratio.powf(expon).max(if ap.min(ad) < 0.1 { 0.1 } else { 0.0 });

        // Corrector.
        let k_cor: Blocks = x
            .iter()
            .zip(&zinv)
            .zip(dx_a.iter().zip(&dz_a))
            .map(|((xx, zi), (dxx, dzz))| zi * (sigma * mu) - xx - sym(&(dxx * dzz * zi)))
            .collect();
        let Some((dx, dy, dz)) = direction(&k_cor) else {
            status = near_or(rel_p, rel_d, gap, gap_scale, settings, SolveStatus::MaxIters);
            break;
        };
        let ap = (STEP_FRACTION * blocks_max_step(&x, &dx)).min(1.0);
        let ad = (STEP_FRACTION * blocks_max_step(&z, &dz)).min(1.0);
        if ap.max(ad) < 1e-10 {
            stalled += 1;
            if stalled >= 3 {
                status = near_or(rel_p, rel_d, gap, gap_scale, settings, SolveStatus::MaxIters);
                break;
            }
        } else {
            stalled = 0;
        }
        for (xx, dxx) in x.iter_mut().zip(&dx) {
            *xx += dxx * ap;
            *xx = sym(xx);
        }
        y.axpy(ad, &dy, 1.0);
        for (zz, dzz) in z.iter_mut().zip(&dz) {
            *zz += dzz * ad;
            *zz = sym(zz);
        }
        iterations += 1;
    }

    // Ill-conditioning can push late iterates away from the best one seen.
    if matches!(status, SolveStatus::MaxIters | SolveStatus::NearOptimal) {
        if let Some(b) = best {
            status = near_or(b.rel_p, b.rel_d, b.gap, b.gap_scale, settings, SolveStatus::MaxIters);
            (x, y, z) = (b.x, b.y, b.z);
        }
    }

    IpmOutput {
        primal_objective: blocks_inner(&p.cost, &x) * scaling.cost,
        dual_objective: b.dot(&y) * scaling.cost,
        initial_gap,
        final_gap: blocks_inner(&x, &z) * scaling.cost,
        y: unscale_y(&y),
        x,
        status,
        iterations,
    }
}

fn near_or(
    rel_p: f64,
    rel_d: f64,
    gap: f64,
    gap_scale: f64,
    s: &SolverSettings,
    otherwise: SolveStatus,
) -> SolveStatus {
    if rel_p <= NEAR_FACTOR * s.tol_feas
        && rel_d <= NEAR_FACTOR * s.tol_feas
        && gap <= NEAR_FACTOR * s.tol_gap * gap_scale
    {
        SolveStatus::NearOptimal
    } else {
        otherwise
    }
}

/// Schur complement `M_ij = <A_i, X A_j Z^-1>`, factored.
fn schur_factor(p: &BlockSdp, x: &Blocks, zinv: &Blocks) -> SchurFactor {
    let m = p.num_constraints();
    let xaz: Vec<Vec<(usize, DMatrix<f64>)>> = p
        .constraints
        .iter()
        .map(|c| c.blocks.iter().map(|(bi, a)| (*bi, &x[*bi] * a * &zinv[*bi])).collect())
        .collect();
    let mut schur = DMatrix::<f64>::zeros(m, m);
    for j in 0..m {
        for i in 0..=j {
            let mut acc = 0.0;
            for (bi, a) in &p.constraints[i].blocks {
                for (bj, w) in &xaz[j] {
                    if bi == bj {
                        acc += a.dot(w);
                    }
                }
            }
            schur[(i, j)] = acc;
            schur[(j, i)] = acc;
        }
    }
    SchurFactor::new(schur)
}

/// Cholesky with a regularized and then LU fallback for the nearly singular
/// systems seen close to the optimum.
enum SchurFactor {
    Chol(Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl SchurFactor {
    fn new(m: DMatrix<f64>) -> Self {
        match Cholesky::new(m.clone()) {
            Some(c) => SchurFactor::Chol(c),
            None => {
                let scale = m.diagonal().iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1e-300);
                let mut reg = m;
                for i in 0..reg.nrows() {
                    reg[(i, i)] += 1e-14 * scale;
                }
                match Cholesky::new(reg.clone()) {
                    Some(c) => SchurFactor::Chol(c),
                    None => SchurFactor::Lu(reg.lu()),
                }
            }
        }
    }

    fn solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        let sol = match self {
            SchurFactor::Chol(c) => c.solve(rhs),
            SchurFactor::Lu(lu) => lu.solve(rhs)?,
        };
        sol.iter().all(|v| v.is_finite()).then_some(sol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings() -> SolverSettings {
        SolverSettings::default()
    }

    fn continue_always(_: &DVector<f64>) -> Monitor {
        Monitor::Continue
    }

    /// min tr(C X) s.t. tr(X) = 1 over 2x2: minimum eigenvalue of C.
    #[test]
    fn min_eigenvalue_problem() {
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let problem = BlockSdp {
            sizes: vec![2],
            cost: vec![c.clone()],
            constraints: vec![BlockConstraint {
                blocks: vec![(0, DMatrix::identity(2, 2))],
                rhs: 1.0,
            }],
        };
        let out = solve_block_sdp(&problem, &settings(), &mut continue_always);
        assert_eq!(out.status, SolveStatus::Optimal);
        let lmin = c.symmetric_eigenvalues().min();
        assert!((out.primal_objective - lmin).abs() < 1e-7);
        assert!((out.dual_objective - lmin).abs() < 1e-7);
        assert!(out.final_gap <= out.initial_gap);
    }

    /// Two blocks with an LP-like scalar block: min x1 + 2 x2, x1 + x2 = 1.
    #[test]
    fn scalar_blocks() {
        let problem = BlockSdp {
            sizes: vec![1, 1],
            cost: vec![DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 2.0)],
            constraints: vec![BlockConstraint {
                blocks: vec![
                    (0, DMatrix::from_element(1, 1, 1.0)),
                    (1, DMatrix::from_element(1, 1, 1.0)),
                ],
                rhs: 1.0,
            }],
        };
        let out = solve_block_sdp(&problem, &settings(), &mut continue_always);
        assert_eq!(out.status, SolveStatus::Optimal);
        assert!((out.primal_objective - 1.0).abs() < 1e-7);
        assert!((out.x[0][(0, 0)] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn infeasible_trace() {
        // tr(X) + s = -1 with X, s psd.
        let problem = BlockSdp {
            sizes: vec![2, 1],
            cost: vec![DMatrix::zeros(2, 2), DMatrix::zeros(1, 1)],
            constraints: vec![BlockConstraint {
                blocks: vec![(0, DMatrix::identity(2, 2)), (1, DMatrix::from_element(1, 1, 1.0))],
                rhs: -1.0,
            }],
        };
        let out = solve_block_sdp(&problem, &settings(), &mut continue_always);
        assert_eq!(out.status, SolveStatus::Infeasible);
    }

    #[test]
    fn unbounded_detected() {
        // min -x11 s.t. x22 = 1 over 2x2 psd: x11 unbounded.
        let mut e22 = DMatrix::zeros(2, 2);
        e22[(1, 1)] = 1.0;
        let mut c = DMatrix::zeros(2, 2);
        c[(0, 0)] = -1.0;
        let problem = BlockSdp {
            sizes: vec![2],
            cost: vec![c],
            constraints: vec![BlockConstraint {
                blocks: vec![(0, e22)],
                rhs: 1.0,
            }],
        };
        let out = solve_block_sdp(&problem, &settings(), &mut continue_always);
        assert_eq!(out.status, SolveStatus::Unbounded);
    }

    #[test]
    fn deterministic() {
        let c = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, -0.4, 0.2, 2.0, 0.1, -0.4, 0.1, 0.5]);
        let problem = BlockSdp {
            sizes: vec![3],
            cost: vec![c],
            constraints: vec![BlockConstraint {
                blocks: vec![(0, DMatrix::identity(3, 3))],
                rhs: 2.0,
            }],
        };
        let a = solve_block_sdp(&problem, &settings(), &mut continue_always);
        let b = solve_block_sdp(&problem, &settings(), &mut continue_always);
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn max_step_matches_eigenvalue_formula() {
        let x = DMatrix::identity(2, 2);
        let dx = DMatrix::from_row_slice(2, 2, &[-2.0, 0.0, 0.0, 1.0]);
        assert!((max_step(&x, &dx) - 0.5).abs() < 1e-14);
        assert!(max_step(&x, &DMatrix::identity(2, 2)).is_infinite());
    }
}
