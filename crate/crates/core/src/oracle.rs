//! Reference computations that do not go through the semidefinite program:
//! a Bode-magnitude search and a time-domain check of a certificate.

use rayon::prelude::*;
use serde::Serialize;

use crate::band::FrequencyBand;
use crate::certificate::RankOneCertificate;
use crate::error::{Error, Result};
use crate::lti::{gain, simulate, Sinusoid, StateSpace};

pub const DEFAULT_GRID_POINTS: usize = 4096;
pub const DEFAULT_REFINE_TOL: f64 = 1e-8;
pub const MIN_GRID_POINTS: usize = 64;

/// Number of best local grid maxima that get refined.
const REFINED_CANDIDATES: usize = 8;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GridPeak {
    pub theta_star: f64,
    pub gain_star: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Verification {
    pub p_n: f64,
    pub relative_error: f64,
}

/// Largest gain over the band from a uniform grid followed by golden-section
/// refinement around the best local maxima.
pub fn grid_norm(sys: &StateSpace, band: FrequencyBand, grid_points: usize, refine_tol: f64) -> Result<GridPeak> {
    if grid_points < MIN_GRID_POINTS {
        return Err(Error::Input(format!(
            "grid needs at least {MIN_GRID_POINTS} points, got {grid_points}"
        )));
    }
    if refine_tol.is_nan() || refine_tol <= 0.0 {
        return Err(Error::Input(format!(
            "refinement tolerance must be positive, got {refine_tol}"
        )));
    }
    sys.check_stable()?;
    let band = band.validated()?;
    let segments = band.segments();
    let total: f64 = segments.iter().map(|(a, b)| b - a).sum();

    let mut best = GridPeak {
        theta_star: f64::NAN,
        gain_star: f64::NEG_INFINITY,
    };
    for &(lo, hi) in &segments {
        let count = ((grid_points as f64 * (hi - lo) / total).round() as usize).max(2);
        let thetas: Vec<f64> = (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect();
        let gains = thetas.par_iter().map(|&t| gain(sys, t)).collect::<Result<Vec<f64>>>()?;

        let mut peaks: Vec<usize> = (0..count)
            .filter(|&i| (i == 0 || gains[i] >= gains[i - 1]) && (i + 1 == count || gains[i] >= gains[i + 1]))
            .collect();
        peaks.sort_by(|&i, &j| gains[j].total_cmp(&gains[i]).then(i.cmp(&j)));
        peaks.truncate(REFINED_CANDIDATES);

        let step = (hi - lo) / (count - 1) as f64;
        for i in peaks {
            let mut cand = GridPeak {
                theta_star: thetas[i],
                gain_star: gains[i],
            };
            let a = (thetas[i] - step).max(lo);
            let b = (thetas[i] + step).min(hi);
            let refined = golden_max(|t| gain(sys, t), a, b, refine_tol)?;
            if refined.gain_star > cand.gain_star {
                cand = refined;
            }
            if cand.gain_star > best.gain_star {
                best = cand;
            }
        }
    }
    Ok(best)
}

fn golden_max(f: impl Fn(f64) -> Result<f64>, mut a: f64, mut b: f64, tol: f64) -> Result<GridPeak> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc >= fd {
        GridPeak {
            theta_star: c,
            gain_star: fc,
        }
    } else {
        GridPeak {
            theta_star: d,
            gain_star: fd,
        }
    })
}

/// Average output power over `steps` samples of the certificate's sinusoid,
/// started from rest, compared with the claimed `mu_opt`.
pub fn verify_certificate(sys: &StateSpace, cert: &RankOneCertificate, steps: usize) -> Result<Verification> {
    let input = Sinusoid::new(cert.w_opt.clone(), cert.theta_opt);
    let p_n = simulate(sys, &input, steps)?.last().copied().unwrap_or(0.0);
    Ok(Verification {
        p_n,
        relative_error: (p_n - cert.mu_opt).abs() / cert.mu_opt.max(1.0),
    })
}
