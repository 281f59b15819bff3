//! Independent correctness references.
//!
//! Two routes that never touch the sector pipeline: the analytic five-spin
//! solution, and a dense propagator working in the full product basis with
//! collective ladder operators assembled spin by spin. Agreement between all
//! three routes is the core correctness argument of the crate.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::coherence::CoherenceSpectrum;
use crate::error::{Error, Result};
use crate::system::SpinSystem;

/// Hard cap for dense 2^N x 2^N constructions.
pub const DENSE_MAX_SPINS: u32 = 12;

/// Full density matrix in the product basis plus each basis state's total
/// projection (doubled, so half-integers stay exact).
#[derive(Debug, Clone)]
pub struct DenseState {
    pub matrix: DMatrix<Complex64>,
    pub twice_magnetization: Vec<i32>,
    pub time: f64,
}

fn check_dense_cap(n: u32) -> Result<usize> {
    if !(1..=DENSE_MAX_SPINS).contains(&n) {
        return Err(Error::Unsupported(format!(
            "dense reference works for 1 <= N <= {DENSE_MAX_SPINS}, got {n}"
        )));
    }
    Ok(1usize << n)
}

/// Collective `I_z` in the product basis (diagonal).
fn collective_iz(n: u32) -> DMatrix<f64> {
    let dim = 1usize << n;
    let mut iz = DMatrix::<f64>::zeros(dim, dim);
    for b in 0..dim {
        iz[(b, b)] = b.count_ones() as f64 - f64::from(n) / 2.0;
    }
    iz
}

/// Collective raising operator `I+ = sum_j I_j^+` in the product basis.
fn collective_iplus(n: u32) -> DMatrix<f64> {
    let dim = 1usize << n;
    let mut ip = DMatrix::<f64>::zeros(dim, dim);
    for b in 0..dim {
        for j in 0..n {
            if b & (1 << j) == 0 {
                ip[(b | (1 << j), b)] += 1.0;
            }
        }
    }
    ip
}

/// The averaged double-quantum Hamiltonian as a dense matrix.
fn dense_hamiltonian(system: &SpinSystem) -> DMatrix<f64> {
    let ip = collective_iplus(system.n_spins());
    let p = &ip * &ip;
    let q = p.transpose();
    (p + q) * (-system.coupling() / 4.0)
}

/// Dense symmetric eigendecomposition by the cyclic Jacobi method.
///
/// Chosen over QR-type routines for the reference path: the spectrum here is
/// full of exact degeneracies across sectors, Jacobi handles those without
/// accuracy loss, and it shares no code with the tridiagonal QL used by the
/// production pipeline.
fn jacobi_eigen(matrix: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = matrix.nrows();
    let mut a = matrix.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let frobenius = matrix.iter().map(|x| x * x).sum::<f64>().sqrt();
    let target = 1e-15 * frobenius.max(f64::MIN_POSITIVE);
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() <= target {
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() <= 1e-3 * target / n as f64 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                a[(p, p)] = app - t * apq;
                a[(q, q)] = aqq + t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for r in 0..n {
                    if r != p && r != q {
                        let arp = a[(r, p)];
                        let arq = a[(r, q)];
                        a[(r, p)] = arp - s * (arq + tau * arp);
                        a[(p, r)] = a[(r, p)];
                        a[(r, q)] = arq + s * (arp - tau * arq);
                        a[(q, r)] = a[(r, q)];
                    }
                    let vrp = v[(r, p)];
                    let vrq = v[(r, q)];
                    v[(r, p)] = vrp - s * (vrq + tau * vrp);
                    v[(r, q)] = vrq + s * (vrp - tau * vrq);
                }
            }
        }
    }
    // Sort ascending and permute columns to match.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].partial_cmp(&a[(j, j)]).expect("non-finite eigenvalue"));
    let values = DVector::from_iterator(n, order.iter().map(|&i| a[(i, i)]));
    let mut vectors = DMatrix::<f64>::zeros(n, n);
    for (new_col, &old_col) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, new_col)] = v[(r, old_col)];
        }
    }
    (values, vectors)
}

/// Exact evolution of `rho(0) = I_z` to dimensionless time `t` in the product
/// basis, via one dense symmetric eigendecomposition.
pub fn dense_evolved(system: &SpinSystem, t: f64) -> Result<DenseState> {
    let dim = check_dense_cap(system.n_spins())?;
    let n = system.n_spins();
    let h = dense_hamiltonian(system);
    let (lambda, u) = jacobi_eigen(&h);
    let u = &u;
    let lambda = &lambda;

    let iz = collective_iz(n);
    let w = u.transpose() * &iz * u;

    let tau = t / system.coupling();
    let phases: Vec<Complex64> = lambda
        .iter()
        .map(|&l| Complex64::from_polar(1.0, -l * tau))
        .collect();
    let mut v = DMatrix::<Complex64>::zeros(dim, dim);
    for a in 0..dim {
        for b in 0..dim {
            v[(a, b)] = phases[a] * phases[b].conj() * w[(a, b)];
        }
    }
    let uc = u.map(|x| Complex64::new(x, 0.0));
    let rho = &uc * v * uc.transpose();

    let twice_magnetization = (0..dim)
        .map(|b| 2 * b.count_ones() as i32 - n as i32)
        .collect();
    Ok(DenseState {
        matrix: rho,
        twice_magnetization,
        time: t,
    })
}

/// Brute-force coherence spectrum: evolve densely, partition matrix elements
/// by magnetization difference, normalize by `Tr(I_z^2)`.
pub fn dense_brute_force(system: &SpinSystem, t: f64) -> Result<CoherenceSpectrum> {
    let state = dense_evolved(system, t)?;
    let dim = state.matrix.nrows();
    let n = system.n_spins();
    let max_m = n as usize / 2 + 1;
    let mut values = vec![0.0f64; max_m];
    let mut odd_mass = 0.0f64;
    for b in 0..dim {
        for bp in 0..dim {
            let k = (state.twice_magnetization[b] - state.twice_magnetization[bp]) / 2;
            if k < 0 {
                continue; // negative orders mirror the positive ones
            }
            let w = state.matrix[(b, bp)].norm_sqr();
            if k % 2 == 1 {
                odd_mass += w;
            } else {
                values[(k / 2) as usize] += w;
            }
        }
    }
    debug_assert!(odd_mass < 1e-18, "odd orders must never be generated");
    let norm = f64::from(n) * (dim as f64) / 4.0;
    for v in &mut values {
        *v /= norm;
    }
    Ok(CoherenceSpectrum::from_nonnegative_orders(t, &values))
}

/// Max-norm deviation between the cubic short-time series for `rho(t)` and
/// the exact dense evolution.
pub(crate) fn short_time_deviation(system: &SpinSystem, t: f64) -> Result<f64> {
    let n = system.n_spins();
    check_dense_cap(n)?;
    let iz = collective_iz(n);
    let ip = collective_iplus(n);
    let im = ip.transpose();
    let p = &ip * &ip;
    let q = p.transpose();

    let a = (&p - &q) * 0.5;
    let iz2 = &iz * &iz;
    // Second commutator of the scaled Hamiltonian with I_z in normal-ordered
    // form; the sign of the ladder term follows from [(I-)^2, (I+)^2]
    // = -8 I_z I- I+ - 8 I_z^2 + 4 I_z.
    let b_op = &iz2 * 2.0 - &iz + &iz * (&im * &ip) * 2.0;
    let ip3 = &p * &ip;
    let im3 = ip3.transpose();
    let c_op = (&p * 9.0 + &q * 3.0 - &iz * &p * 14.0 - &iz * &q * 2.0 + &iz2 * &p * 4.0
        - &iz2 * &q * 4.0
        + &im3 * &ip * 2.0
        - &im * &ip3 * 2.0)
        * (-0.5);

    let series_re = &iz - &b_op * (t * t / 2.0);
    let series_im = &a * (-t) + &c_op * (t * t * t / 6.0);

    let exact = dense_evolved(system, t)?;
    let dim = exact.matrix.nrows();
    let mut dev = 0.0f64;
    for i in 0..dim {
        for j in 0..dim {
            let s = Complex64::new(series_re[(i, j)], series_im[(i, j)]);
            dev = dev.max((s - exact.matrix[(i, j)]).norm());
        }
    }
    Ok(dev)
}

const SQRT7: f64 = 2.6457513110645905905; // sqrt(7)

/// Analytic five-spin intensities (unit coupling):
/// only orders 0, +/-2, +/-4 ever appear.
pub fn five_spin_closed_form(t: f64) -> CoherenceSpectrum {
    let c1 = (SQRT7 * t).cos();
    let c2 = (2.0 * SQRT7 * t).cos();
    let c3 = (3.0 * SQRT7 * t).cos();
    let c4 = (4.0 * SQRT7 * t).cos();
    let c3t = (2.0 * 3.0f64.sqrt() * t).cos();
    let j0 = (27825.0 + 9604.0 * c3t + 2520.0 * c1 + 7560.0 * c2 + 360.0 * c3 + 151.0 * c4)
        / 48020.0;
    let j2 = (95.0 - 49.0 * c3t - 45.0 * c2 - c4) / 490.0;
    let j4 = 144.0 / 2401.0 * (SQRT7 * t / 2.0).sin().powi(8);
    CoherenceSpectrum::from_nonnegative_orders(t, &[j0, j2, j4])
}

/// Two-spin intensities, derived by hand as an anti-circularity anchor.
///
/// Only the triplet's parity pair `M = {1, -1}` is dynamical: its block is
/// `[[0, -D/2], [-D/2, 0]]` with initial state `diag(1, -1)`, a spin flipping
/// about x, so `rho(t) = cos(t) sigma_z + sin(t) sigma_y` in dimensionless
/// time. The `M = 0` levels carry zero weight in `I_z`. Hence
/// `J_0 = cos^2 t` and `J_{+/-2} = sin^2(t) / 2` after dividing by
/// `Tr(I_z^2) = 2`.
pub fn two_spin_closed_form(t: f64) -> CoherenceSpectrum {
    let j0 = t.cos().powi(2);
    let j2 = 0.5 * t.sin().powi(2);
    CoherenceSpectrum::from_nonnegative_orders(t, &[j0, j2])
}

/// Analytic spectral data of the five-spin sectors: eigenvalues of the three
/// distinct blocks and the evolved top-block density matrix, entry by entry.
#[derive(Debug, Clone, Copy)]
pub struct FiveSpinSectorData;

/// Reference constants for element-level propagation tests at `N = 5`.
pub fn five_spin_sector_data() -> FiveSpinSectorData {
    FiveSpinSectorData
}

impl FiveSpinSectorData {
    /// Eigenvalues of the `S = 5/2` parity block, ascending.
    pub fn top_eigenvalues(&self) -> [f64; 3] {
        [-SQRT7, 0.0, SQRT7]
    }

    /// Eigenvalues of the `S = 3/2` parity block, ascending.
    pub fn mid_eigenvalues(&self) -> [f64; 2] {
        [-3.0f64.sqrt() / 2.0, 3.0f64.sqrt() / 2.0]
    }

    /// The `S = 1/2` blocks are scalars with eigenvalue zero.
    pub fn scalar_eigenvalue(&self) -> f64 {
        0.0
    }

    pub fn a11(&self, t: f64) -> f64 {
        5.0 / 98.0 * (36.0 * (SQRT7 * t).cos() - 2.0 * (2.0 * SQRT7 * t).cos() + 15.0)
    }

    pub fn a12(&self, t: f64) -> f64 {
        (10.0f64 / 7.0).sqrt() / 7.0 * (2.0 * (SQRT7 * t).cos() - 9.0) * (SQRT7 * t).sin()
    }

    pub fn a13(&self, t: f64) -> f64 {
        -24.0 / 49.0 * 5.0f64.sqrt() * (SQRT7 * t / 2.0).sin().powi(4)
    }

    pub fn a22(&self, t: f64) -> f64 {
        (4.0 * (2.0 * SQRT7 * t).cos() + 3.0) / 14.0
    }

    pub fn a23(&self, t: f64) -> f64 {
        -3.0 / 7.0 * (2.0f64 / 7.0).sqrt() * (2.0 * (SQRT7 * t).cos() + 5.0) * (SQRT7 * t).sin()
    }

    pub fn a33(&self, t: f64) -> f64 {
        -3.0 / 98.0 * (60.0 * (SQRT7 * t).cos() + 6.0 * (2.0 * SQRT7 * t).cos() - 17.0)
    }

    /// Evolved `S = 5/2` block on the basis `M = {5/2, 1/2, -3/2}`.
    pub fn top_block(&self, t: f64) -> [[Complex64; 3]; 3] {
        let (a11, a12, a13) = (self.a11(t), self.a12(t), self.a13(t));
        let (a22, a23, a33) = (self.a22(t), self.a23(t), self.a33(t));
        let re = Complex64::new;
        let im = |x: f64| Complex64::new(0.0, x);
        [
            [re(a11, 0.0), im(a12), re(a13, 0.0)],
            [im(-a12), re(a22, 0.0), im(a23)],
            [re(a13, 0.0), im(-a23), re(a33, 0.0)],
        ]
    }

    /// Evolved `S = 3/2` block on the basis `M = {3/2, -1/2}`.
    pub fn mid_block(&self, t: f64) -> [[Complex64; 2]; 2] {
        let c = (3.0f64.sqrt() * t).cos();
        let s = (3.0f64.sqrt() * t).sin();
        [
            [Complex64::new(c + 0.5, 0.0), Complex64::new(0.0, -s)],
            [Complex64::new(0.0, s), Complex64::new(0.5 - c, 0.0)],
        ]
    }

    /// The `S = 1/2` blocks never move: identically `1/2`.
    pub fn scalar_block(&self) -> Complex64 {
        Complex64::new(0.5, 0.0)
    }
}
