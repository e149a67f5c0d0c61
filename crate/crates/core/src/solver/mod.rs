//! Small dense SDP solver for the conic problems produced by [`crate::build`].
//!
//! Hermitian data is mapped through the real symmetric embedding and solved
//! by the interior-point method in [`ipm`]; the primal matrix is mapped back,
//! symmetrized and clipped to the psd cone before it is returned.

mod ipm;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::build::{hermitian_basis, hermitian_slots, ConicProblem, DualProblem};
use crate::error::{Error, Result};
use crate::herm::{embed_real, spectral_norm, unembed_real, HermitianMatrix};

use ipm::{solve_block_sdp, BlockConstraint, BlockSdp, Monitor};

/// `||P||` beyond which a dual solution is reported as not attained.
pub const P_NORM_CAP: f64 = 1e8;
/// Multiplier norm above which the dual is re-solved to test for divergence.
const P_NORM_PROBE: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    NearOptimal,
    MaxIters,
    Infeasible,
    Unbounded,
}

impl SolveStatus {
    /// Optimal or near optimal.
    pub fn is_usable(&self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::NearOptimal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub tol_feas: f64,
    pub tol_gap: f64,
    pub max_iters: usize,
    /// Largest accepted variable order.
    pub max_size: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol_feas: 1e-8,
            tol_gap: 1e-8,
            max_iters: 200,
            max_size: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// Largest normalized violation of the linear equalities and inequalities.
    pub primal_eq: f64,
    /// Largest normalized negative eigenvalue of the psd side constraints.
    pub psd_violation: f64,
    /// `|objective - dual_objective|`
    pub duality_gap: f64,
}

#[derive(Debug, Clone)]
pub struct SolverSolution {
    pub v: HermitianMatrix,
    /// `<cost, V>` of the returned (clipped) matrix.
    pub objective: f64,
    pub dual_objective: f64,
    pub status: SolveStatus,
    pub residuals: Residuals,
    pub iterations: usize,
    /// Multipliers of the equalities, then inequalities, then side-constraint
    /// slots, in the problem's order and sign convention (minimization form).
    pub multipliers: Vec<f64>,
    /// `<X, Z>` at the starting point and at the returned iterate.
    pub initial_gap: f64,
    pub final_gap: f64,
}

fn check_size(k: usize, settings: &SolverSettings) -> Result<()> {
    if k > settings.max_size {
        return Err(Error::Input(format!(
            "variable order {k} exceeds the size cap {}",
            settings.max_size
        )));
    }
    Ok(())
}

/// Real block form of a primal conic problem (minimization of `-<cost, V>`).
fn primal_blocks(problem: &ConicProblem) -> BlockSdp {
    let k = problem.dim;
    let mut sizes = vec![2 * k];
    let side_offset = sizes.len();
    for side in &problem.psd_sides {
        sizes.push(2 * side.size);
    }
    let slack_offset = sizes.len();
    sizes.extend(std::iter::repeat_n(1, problem.inequalities.len()));

    let half = |h: &HermitianMatrix| embed_real(h) * 0.5;
    let mut cost: Vec<DMatrix<f64>> = sizes.iter().map(|&s| DMatrix::zeros(s, s)).collect();
    cost[0] = -half(&problem.cost);

    let mut constraints = Vec::new();
    for eq in &problem.equalities {
        constraints.push(BlockConstraint {
            blocks: vec![(0, half(&eq.coeff))],
            rhs: eq.rhs,
        });
    }
    for (i, ineq) in problem.inequalities.iter().enumerate() {
        constraints.push(BlockConstraint {
            blocks: vec![
                (0, half(&ineq.coeff)),
                (slack_offset + i, DMatrix::from_element(1, 1, 1.0)),
            ],
            rhs: ineq.rhs,
        });
    }
    for (s, side) in problem.psd_sides.iter().enumerate() {
        for (slot, comp) in hermitian_slots(side.size).iter().zip(&side.components) {
            constraints.push(BlockConstraint {
                blocks: vec![(0, -half(comp)), (side_offset + s, half(&slot.coefficient(side.size)))],
                rhs: 0.0,
            });
        }
    }
    BlockSdp {
        sizes,
        cost,
        constraints,
    }
}

/// Residual measures of `v` against `problem`, normalized per constraint.
pub fn primal_residuals(problem: &ConicProblem, v: &HermitianMatrix) -> (f64, f64) {
    let vn = v.frobenius();
    let mut eq = 0.0_f64;
    for c in &problem.equalities {
        let r = (c.coeff.inner(v) - c.rhs).abs();
        eq = eq.max(r / (1.0 + c.rhs.abs() + c.coeff.frobenius() * vn));
    }
    for c in &problem.inequalities {
        let r = (c.coeff.inner(v) - c.rhs).max(0.0);
        eq = eq.max(r / (1.0 + c.rhs.abs() + c.coeff.frobenius() * vn));
    }
    let mut psd = 0.0_f64;
    for side in &problem.psd_sides {
        let scale: f64 = side.components.iter().map(|c| c.frobenius()).fold(0.0, f64::max);
        let lmin = side.evaluate(v).min_eigenvalue();
        psd = psd.max((-lmin).max(0.0) / (1.0 + scale * vn));
    }
    (eq, psd)
}

/// Solves a primal conic problem (maximization).
pub fn solve(problem: &ConicProblem, settings: &SolverSettings) -> Result<SolverSolution> {
    problem.validate()?;
    check_size(problem.dim, settings)?;
    let blocks = primal_blocks(problem);
    let out = solve_block_sdp(&blocks, settings, &mut |_| Monitor::Continue);

    let v = unembed_real(&out.x[0])?.clip_psd();
    let objective = problem.objective(&v);
    let dual_objective = -out.dual_objective;
    let (primal_eq, psd_violation) = primal_residuals(problem, &v);
    let residuals = Residuals {
        primal_eq,
        psd_violation,
        duality_gap: (objective - dual_objective).abs(),
    };
    let mut status = out.status;
    if status == SolveStatus::Optimal
        && (primal_eq > settings.tol_feas
            || psd_violation > settings.tol_feas
            || residuals.duality_gap > settings.tol_gap * (1.0 + objective.abs()))
    {
        status = SolveStatus::NearOptimal;
    }
    Ok(SolverSolution {
        v,
        objective,
        dual_objective,
        status,
        residuals,
        iterations: out.iterations,
        multipliers: out.y.iter().copied().collect(),
        initial_gap: out.initial_gap,
        final_gap: out.final_gap,
    })
}

#[derive(Debug, Clone)]
pub struct DualSolution {
    pub lambda: f64,
    pub p: HermitianMatrix,
    pub q: Option<HermitianMatrix>,
    pub status: SolveStatus,
    /// Spectral norm of `P`.
    pub p_norm: f64,
    /// `||P||` exceeded [`P_NORM_CAP`]: the infimum is approached only by an
    /// escaping sequence of multipliers.
    pub not_attained: bool,
    /// Largest eigenvalue of the LMI at the returned point (feasible if <= 0).
    pub lmi_max_eigenvalue: f64,
    pub iterations: usize,
}

/// Minimizes `lambda` over the (generalized) KYP LMI.
///
/// Variables are the coordinates of `P` (and `Q`) in an orthonormal Hermitian
/// basis plus `lambda`; the LMI, `Q` psd and `lambda >= 0` are the dual cone
/// blocks of a real block SDP. The iteration stops early once `||P||` exceeds
/// [`P_NORM_CAP`].
pub fn solve_dual_lmi(problem: &DualProblem, settings: &SolverSettings) -> Result<DualSolution> {
    let first = solve_dual_once(problem, settings)?;
    if first.not_attained || first.p_norm <= P_NORM_PROBE || !first.status.is_usable() {
        return Ok(first);
    }
    // A large multiplier may be a divergent sequence: tighten and let the monitor decide.
    let tight = SolverSettings {
        tol_feas: settings.tol_feas * 1e-4,
        tol_gap: settings.tol_gap * 1e-4,
        ..*settings
    };
    let second = solve_dual_once(problem, &tight)?;
    Ok(if second.not_attained { second } else { first })
}

fn solve_dual_once(problem: &DualProblem, settings: &SolverSettings) -> Result<DualSolution> {
    let n = problem.sys().n();
    let size = problem.lmi_size();
    check_size(size, settings)?;
    let basis = hermitian_basis(n);
    let nb = basis.len();
    let has_q = problem.has_q();
    let zero = HermitianMatrix::zeros(n);

    let l0 = problem.lmi(&zero, has_q.then_some(&zero), 0.0);
    let linear = |p: &HermitianMatrix, q: &HermitianMatrix, lambda: f64| -> HermitianMatrix {
        problem.lmi(p, has_q.then_some(q), lambda).sub(&l0)
    };

    let mut sizes = vec![2 * size];
    let q_block = if has_q {
        sizes.push(2 * n);
        Some(sizes.len() - 1)
    } else {
        None
    };
    sizes.push(1);
    let lambda_block = sizes.len() - 1;

    let mut cost: Vec<DMatrix<f64>> = sizes.iter().map(|&s| DMatrix::zeros(s, s)).collect();
    cost[0] = -embed_real(&l0);

    let mut constraints = Vec::new();
    for b in &basis {
        constraints.push(BlockConstraint {
            blocks: vec![(0, embed_real(&linear(b, &zero, 0.0)))],
            rhs: 0.0,
        });
    }
    if let Some(qb) = q_block {
        for b in &basis {
            constraints.push(BlockConstraint {
                blocks: vec![(0, embed_real(&linear(&zero, b, 0.0))), (qb, -embed_real(b))],
                rhs: 0.0,
            });
        }
    }
    constraints.push(BlockConstraint {
        blocks: vec![
            (0, embed_real(&linear(&zero, &zero, 1.0))),
            (lambda_block, DMatrix::from_element(1, 1, -1.0)),
        ],
        rhs: -1.0,
    });
    let blocks = BlockSdp {
        sizes,
        cost,
        constraints,
    };

    let assemble = |coords: &[f64]| -> HermitianMatrix {
        let mut acc = HermitianMatrix::zeros(n);
        for (c, b) in coords.iter().zip(&basis) {
            acc = acc.add(&b.scale(*c));
        }
        acc
    };
    let mut monitor = |y: &DVector<f64>| {
        let p = assemble(&y.as_slice()[..nb]);
        if spectral_norm(p.as_matrix()) > P_NORM_CAP {
            Monitor::Stop
        } else {
            Monitor::Continue
        }
    };
    let out = solve_block_sdp(&blocks, settings, &mut monitor);

    let y = out.y.as_slice();
    let p = assemble(&y[..nb]);
    let q = has_q.then(|| assemble(&y[nb..2 * nb]));
    let lambda = y[y.len() - 1];
    let p_norm = spectral_norm(p.as_matrix());
    let not_attained = p_norm > P_NORM_CAP;
    let lmi_max_eigenvalue = problem.lmi(&p, q.as_ref(), lambda).max_eigenvalue();
    let status = if not_attained && out.status != SolveStatus::Infeasible {
        SolveStatus::NearOptimal
    } else {
        out.status
    };
    Ok(DualSolution {
        lambda,
        p,
        q,
        status,
        p_norm,
        not_attained,
        lmi_max_eigenvalue,
        iterations: out.iterations,
    })
}
