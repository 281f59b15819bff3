//! Total-spin sectors and their tridiagonal Hamiltonian blocks.
//!
//! The double-quantum Hamiltonian `H = -(D/4) [(I+)^2 + (I-)^2]` built from
//! collective ladder operators commutes with the squared total spin and with
//! the rotation by pi about z. The 2^N-dimensional problem therefore splits
//! into independent real symmetric tridiagonal blocks labelled by the total
//! spin `S` and a parity bit, each block occurring with a combinatorial
//! multiplicity.
//!
//! Spin projections are stored doubled (`2S`, `2M`) so half-integer quantum
//! numbers stay exact integers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::SpinSystem;

/// Eigenspace of the rotation `exp(i pi I_z)` inside one spin-S block.
///
/// `Plus` is the subblock containing the largest projection `M = S`; `Minus`
/// contains `M = S - 1`. The Hamiltonian only couples `M` to `M +/- 2`, so the
/// two never mix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Parity {
    Plus,
    Minus,
}

/// Identifies one `(S, parity)` subblock of an `N`-spin system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SectorLabel {
    /// Doubled total spin `2S`; same parity as `N`.
    pub twice_spin: u32,
    pub parity: Parity,
}

impl SectorLabel {
    pub fn spin(&self) -> f64 {
        f64::from(self.twice_spin) / 2.0
    }
}

impl std::fmt::Display for SectorLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let sign = match self.parity {
            Parity::Plus => '+',
            Parity::Minus => '-',
        };
        if self.twice_spin % 2 == 0 {
            write!(f, "S={}{}", self.twice_spin / 2, sign)
        } else {
            write!(f, "S={}/2{}", self.twice_spin, sign)
        }
    }
}

/// One `(S, parity)` subspace: its projection basis, the tridiagonal
/// Hamiltonian couplings and the log multiplicity weight.
///
/// `twice_m_values` lists `2M` descending in steps of 4 (i.e. `M` descending
/// in steps of 2) from the largest `M` in the parity class; all consumers
/// rely on this ordering. `off_diagonal[i]` couples `m[i]` to `m[i+1]`, the
/// diagonal is identically zero, so the spectrum is symmetric about zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sector {
    pub label: SectorLabel,
    pub twice_m_values: Vec<i32>,
    pub off_diagonal: Vec<f64>,
    /// `ln n_N(S)`, kept in log form because the multiplicities overflow any
    /// fixed-width integer long before `N = 601`.
    pub weight_log: f64,
    /// Coupling constant the off-diagonal entries were built with.
    pub coupling: f64,
}

impl Sector {
    pub fn dim(&self) -> usize {
        self.twice_m_values.len()
    }

    /// Projection values `M` as floats (exact: half-integers are dyadic).
    pub fn m_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.twice_m_values.iter().map(|&tm| f64::from(tm) / 2.0)
    }
}

/// `ln n!` by direct summation; exact enough (~1e-13 relative) for the
/// factorial arguments that appear here (up to a few thousand).
fn ln_factorial(n: u64) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Exact binomial coefficient; valid while the result fits `u128`.
fn binomial_u128(n: u32, k: u32) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 1..=u128::from(k) {
        // Multiply before dividing: every prefix is itself a binomial, so the
        // division is exact.
        acc = acc * (u128::from(n) - k as u128 + i) / i;
    }
    acc
}

fn check_spin_pair(n_spins: u32, twice_spin: u32) -> Result<()> {
    if twice_spin > n_spins {
        return Err(Error::Domain(format!(
            "total spin 2S={twice_spin} exceeds N={n_spins}"
        )));
    }
    if (n_spins - twice_spin) % 2 != 0 {
        return Err(Error::Domain(format!(
            "2S={twice_spin} must have the same parity as N={n_spins}"
        )));
    }
    Ok(())
}

/// Number of independent spin-S blocks in an N-spin system, exactly.
///
/// Computed as the difference of adjacent binomials
/// `C(N, j) - C(N, j-1)` with `j = N/2 - S`, which is algebraically equal to
/// `N!(2S+1) / ((N/2+S+1)! (N/2-S)!)`.
pub fn multiplicity_exact(n_spins: u32, twice_spin: u32) -> Result<u128> {
    check_spin_pair(n_spins, twice_spin)?;
    let j = (n_spins - twice_spin) / 2;
    let a = binomial_u128(n_spins, j);
    let b = if j == 0 {
        0
    } else {
        binomial_u128(n_spins, j - 1)
    };
    Ok(a - b)
}

/// `ln n_N(S)` via log-factorials, overflow-safe up to at least `N = 1000`.
pub fn multiplicity_log(n_spins: u32, twice_spin: u32) -> Result<f64> {
    check_spin_pair(n_spins, twice_spin)?;
    let up = u64::from((n_spins + twice_spin) / 2) + 1; // N/2 + S + 1
    let down = u64::from((n_spins - twice_spin) / 2); // N/2 - S
    Ok(ln_factorial(u64::from(n_spins)) + f64::from(twice_spin + 1).ln()
        - ln_factorial(up)
        - ln_factorial(down))
}

/// Matrix element `<M|(I+)^2|M-2>` within a spin-S multiplet:
/// `sqrt((S+M)(S+M-1)(S-M+1)(S-M+2))`, zero outside `-S+2 <= M <= S`.
pub fn raising_squared_element(twice_spin: u32, twice_m: i32) -> f64 {
    let ts = i64::from(twice_spin);
    let tm = i64::from(twice_m);
    if tm > ts || tm < -ts + 4 {
        return 0.0;
    }
    // All four factors are nonnegative integers once doubled values share a
    // parity; products stay well inside f64's exact-integer range.
    let p1 = (ts + tm) / 2;
    let p2 = p1 - 1;
    let p3 = (ts - tm) / 2 + 1;
    let p4 = p3 + 1;
    ((p1 * p2 * p3 * p4) as f64).sqrt()
}

/// Every `(S, parity)` pair of the system, `S` descending, `Plus` before
/// `Minus`. The `Minus` subblock of `S = 0` is empty and omitted.
pub fn enumerate_sectors(system: &SpinSystem) -> Vec<SectorLabel> {
    let n = system.n_spins();
    let mut labels = Vec::new();
    let mut ts = n; // 2S runs N, N-2, ..., down to 0 or 1
    loop {
        labels.push(SectorLabel {
            twice_spin: ts,
            parity: Parity::Plus,
        });
        if ts > 0 {
            labels.push(SectorLabel {
                twice_spin: ts,
                parity: Parity::Minus,
            });
        }
        if ts < 2 {
            break;
        }
        ts -= 2;
    }
    labels
}

/// Build the tridiagonal Hamiltonian block for one sector:
/// `off_diagonal[i] = -(D/4) <M_i|(I+)^2|M_i - 2>` on the basis of descending
/// projections in the parity class.
pub fn build_sector(system: &SpinSystem, label: SectorLabel) -> Result<Sector> {
    check_spin_pair(system.n_spins(), label.twice_spin)?;
    let ts = i64::from(label.twice_spin);
    let top = match label.parity {
        Parity::Plus => ts,
        Parity::Minus => ts - 2,
    };
    if top < -ts {
        return Err(Error::Domain(format!(
            "sector {label} is empty for this spin"
        )));
    }
    let mut twice_m_values = Vec::new();
    let mut tm = top;
    while tm >= -ts {
        twice_m_values.push(tm as i32);
        tm -= 4;
    }
    let scale = -system.coupling() / 4.0;
    let off_diagonal = twice_m_values
        .iter()
        .take(twice_m_values.len() - 1)
        .map(|&m| scale * raising_squared_element(label.twice_spin, m))
        .collect();
    Ok(Sector {
        label,
        twice_m_values,
        off_diagonal,
        weight_log: multiplicity_log(system.n_spins(), label.twice_spin)?,
        coupling: system.coupling(),
    })
}

/// Check `sum_S n_N(S) (2S+1) = 2^N`: exact integer arithmetic for
/// `N <= 64`, log-space summation (relative tolerance 1e-12) above.
pub fn verify_dimension_identity(n_spins: u32) -> bool {
    if n_spins == 0 {
        return false;
    }
    if n_spins <= 64 {
        let mut total: u128 = 0;
        let mut ts = n_spins;
        loop {
            let n = match multiplicity_exact(n_spins, ts) {
                Ok(v) => v,
                Err(_) => return false,
            };
            total += n * u128::from(ts + 1);
            if ts < 2 {
                break;
            }
            ts -= 2;
        }
        return total == 1u128 << n_spins;
    }
    // Log-sum-exp against N ln 2.
    let mut terms = Vec::new();
    let mut ts = n_spins;
    loop {
        let ln_n = match multiplicity_log(n_spins, ts) {
            Ok(v) => v,
            Err(_) => return false,
        };
        terms.push(ln_n + f64::from(ts + 1).ln());
        if ts < 2 {
            break;
        }
        ts -= 2;
    }
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|&t| (t - max).exp()).sum();
    let log_total = max + sum.ln();
    let expected = f64::from(n_spins) * std::f64::consts::LN_2;
    ((log_total - expected) / expected).abs() < 1e-12
}
