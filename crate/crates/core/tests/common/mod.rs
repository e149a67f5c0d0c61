#![allow(dead_code)]

use std::f64::consts::PI;

use hinf::herm::{numerical_rank, CMatrix};
use hinf::lti::{eigenvalues, spectral_radius};
use hinf::{FrequencyBand, StateSpace};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn scalar(a: f64, b: f64, c: f64, d: f64) -> StateSpace {
    StateSpace::from_real(1, 1, 1, &[a], &[b], &[c], &[d]).unwrap()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, complex: bool) -> CMatrix {
    CMatrix::from_fn(r, c, |_, _| {
        let re = rng.random_range(-1.0..1.0);
        let im = if complex { rng.random_range(-1.0..1.0) } else { 0.0 };
        Complex64::new(re, im)
    })
}

/// Random system with the given shape and spectral radius.
pub fn random_system(rng: &mut ChaCha8Rng, n: usize, m: usize, l: usize, radius: f64, complex: bool) -> StateSpace {
    let a = loop {
        let a = random_matrix(rng, n, n, complex);
        let rho = spectral_radius(&a).unwrap();
        if rho > 1e-3 {
            break a * Complex64::new(radius / rho, 0.0);
        }
    };
    StateSpace::new(
        a,
        random_matrix(rng, n, m, complex),
        random_matrix(rng, l, n, complex),
        random_matrix(rng, l, m, complex),
    )
    .unwrap()
}

/// Desk-scale random system: n <= 8, m, l <= 4, spectral radius <= 0.95.
pub fn desk_system(rng: &mut ChaCha8Rng, complex: bool) -> StateSpace {
    let n = rng.random_range(1..=8);
    let m = rng.random_range(1..=4);
    let l = rng.random_range(1..=4);
    let radius = rng.random_range(0.1..=0.95);
    random_system(rng, n, m, l, radius, complex)
}

pub fn random_band(rng: &mut ChaCha8Rng) -> FrequencyBand {
    match rng.random_range(0..3) {
        0 => FrequencyBand::low(rng.random_range(0.2..PI - 0.2)).unwrap(),
        1 => FrequencyBand::high(rng.random_range(0.2..PI - 0.2)).unwrap(),
        _ => {
            let t1 = rng.random_range(-PI..PI - 0.4);
            let t2 = rng.random_range(t1 + 0.3..=PI);
            FrequencyBand::middle(t1, t2).unwrap()
        }
    }
}

fn pbh_full_rank(sys: &StateSpace, z: Complex64) -> bool {
    let n = sys.n();
    let mut m = CMatrix::zeros(n, n + sys.m());
    m.view_mut((0, 0), (n, n))
        .copy_from(&(CMatrix::identity(n, n) * z - sys.a()));
    m.view_mut((0, n), (n, sys.m())).copy_from(sys.b());
    numerical_rank(&m, 1e-8) == n
}

/// PBH rank test at the eigenvalues of `A` and at random points.
pub fn controllable(sys: &StateSpace, rng: &mut ChaCha8Rng) -> bool {
    let eig = eigenvalues(sys.a()).unwrap();
    eig.into_iter().all(|z| pbh_full_rank(sys, z))
        && (0..8).all(|_| {
            pbh_full_rank(
                sys,
                Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
            )
        })
}
