//! Linear (`g = 0`) reference results: the closed-form rectangular-well
//! transmission and a transfer-matrix solver for arbitrary potentials sampled
//! as piecewise-constant segments.
//!
//! Amplitudes are referenced to `e^{±ikx}` at the true position `x`, so free
//! propagation is the identity and matrices for adjacent segments compose by
//! plain multiplication.

use std::f64::consts::PI;
use std::ops::RangeInclusive;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{Potential, SUPPORT_EPS};

/// 2×2 matrix `[[α, β], [β*, α*]]` mapping left amplitudes `(A, B)` to right
/// amplitudes `(C, D)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferMatrix {
    pub alpha: Complex64,
    pub beta: Complex64,
}

impl TransferMatrix {
    pub const IDENTITY: TransferMatrix = TransferMatrix {
        alpha: Complex64::new(1.0, 0.0),
        beta: Complex64::new(0.0, 0.0),
    };

    /// `|α|² − |β|²`; equals one for every physical matrix.
    pub fn det(&self) -> f64 {
        self.alpha.norm_sqr() - self.beta.norm_sqr()
    }

    /// `|T|² = 1/|α|²`.
    pub fn transmission(&self) -> f64 {
        1.0 / self.alpha.norm_sqr()
    }

    /// `|R|² = |β/α|²`.
    pub fn reflection(&self) -> f64 {
        (self.beta / self.alpha).norm_sqr()
    }

    pub fn apply(&self, a: Complex64, b: Complex64) -> (Complex64, Complex64) {
        (
            self.alpha * a + self.beta * b,
            self.beta.conj() * a + self.alpha.conj() * b,
        )
    }
}

/// `M = M_R · M_L` for `M_L` acting first (left segment) and `M_R` after it.
pub fn compose(right: &TransferMatrix, left: &TransferMatrix) -> TransferMatrix {
    TransferMatrix {
        alpha: right.alpha * left.alpha + right.beta * left.beta.conj(),
        beta: right.alpha * left.beta + right.beta * left.alpha.conj(),
    }
}

/// Transfer matrix of a constant level `level` on `[x_left, x_right]` at
/// energy `energy`, with free space on both sides.
pub fn step_matrix(
    energy: f64,
    level: f64,
    x_left: f64,
    x_right: f64,
    mass: f64,
    hbar: f64,
) -> Result<TransferMatrix> {
    if !(energy > 0.0) {
        return Err(Error::Domain(format!("energy must be positive, got {energy}")));
    }
    if !(x_right > x_left) {
        return Err(Error::Domain(format!(
            "segment must have positive length, got [{x_left}, {x_right}]"
        )));
    }
    let scale = 2.0 * mass / (hbar * hbar);
    let k = (scale * energy).sqrt();
    let len = x_right - x_left;
    let q2 = scale * (energy - level);

    // Real propagator of (ψ, ψ') across the segment.
    let (p11, p12, p21, p22) = if q2 > 0.0 {
        let q = q2.sqrt();
        let (s, c) = (q * len).sin_cos();
        (c, s / q, -q * s, c)
    } else if q2 < 0.0 {
        let kappa = (-q2).sqrt();
        let (s, c) = ((kappa * len).sinh(), (kappa * len).cosh());
        (c, s / kappa, kappa * s, c)
    } else {
        (1.0, len, 0.0, 1.0)
    };

    // (ψ, ψ') at x_left from (A, B): columns e^{ikx}, e^{-ikx} and derivatives.
    let el = Complex64::from_polar(1.0, k * x_left);
    let ik = Complex64::new(0.0, k);
    let w = [[el, el.conj()], [ik * el, -ik * el.conj()]];
    let pw = [
        [p11 * w[0][0] + p12 * w[1][0], p11 * w[0][1] + p12 * w[1][1]],
        [p21 * w[0][0] + p22 * w[1][0], p21 * w[0][1] + p22 * w[1][1]],
    ];
    // Project back onto amplitudes at x_right.
    let er = Complex64::from_polar(1.0, -k * x_right);
    let inv_2ik = 1.0 / (2.0 * ik);
    let alpha = er * (0.5 * pw[0][0] + inv_2ik * pw[1][0]);
    let beta = er * (0.5 * pw[0][1] + inv_2ik * pw[1][1]);
    Ok(TransferMatrix { alpha, beta })
}

/// Closed-form transmission of the rectangular well
/// `{1 + V0²/(4E(E+V0))·sin²(2a√(2m(E+V0))/ħ)}⁻¹`.
pub fn rect_well_transmission(energy: f64, depth: f64, half_width: f64, mass: f64, hbar: f64) -> Result<f64> {
    if !(energy > 0.0) {
        return Err(Error::Domain(format!("energy must be positive, got {energy}")));
    }
    if !(depth >= 0.0) || !(half_width > 0.0) {
        return Err(Error::Domain(format!(
            "well needs depth >= 0 and half-width > 0, got {depth}, {half_width}"
        )));
    }
    let phase = 2.0 * half_width * (2.0 * mass * (energy + depth)).sqrt() / hbar;
    let s = phase.sin();
    Ok(1.0 / (1.0 + depth * depth / (4.0 * energy * (energy + depth)) * s * s))
}

/// Positive unit-transmission energies `E_n = −V0 + ħ²π²n²/(8ma²)` for `n` in
/// `indices`, ascending.
pub fn rect_resonance_energies(
    depth: f64,
    half_width: f64,
    mass: f64,
    hbar: f64,
    indices: RangeInclusive<u32>,
) -> Result<Vec<(u32, f64)>> {
    let unit = hbar * hbar * PI * PI / (8.0 * mass * half_width * half_width);
    let energies: Vec<(u32, f64)> = indices
        .map(|n| (n, -depth + unit * f64::from(n) * f64::from(n)))
        .filter(|&(_, e)| e > 0.0)
        .collect();
    if energies.is_empty() {
        return Err(Error::EmptyRange);
    }
    Ok(energies)
}

/// Smallest index with a positive resonance energy.
pub fn rect_first_resonance_index(depth: f64, half_width: f64, mass: f64, hbar: f64) -> u32 {
    let unit = hbar * hbar * PI * PI / (8.0 * mass * half_width * half_width);
    let mut n = (depth / unit).sqrt().floor().max(0.0) as u32;
    while -depth + unit * f64::from(n) * f64::from(n) <= 0.0 {
        n += 1;
    }
    n
}

/// Piecewise-constant transfer matrix of `pot` over its support.
///
/// The support is first cut at the potential's discontinuities; roughly
/// `segments` equal cells are then distributed over the pieces in proportion
/// to their lengths and `V` is sampled at each cell midpoint.
pub fn potential_matrix(pot: &Potential, energy: f64, mass: f64, hbar: f64, segments: usize) -> Result<TransferMatrix> {
    let (lo, hi) = pot.support(SUPPORT_EPS);
    if hi <= lo {
        return Ok(TransferMatrix::IDENTITY);
    }
    let mut edges = vec![lo];
    edges.extend(pot.discontinuities().into_iter().filter(|&x| x > lo && x < hi));
    edges.push(hi);
    let total = hi - lo;
    let mut m = TransferMatrix::IDENTITY;
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        let cells = ((segments as f64) * (b - a) / total).ceil().max(1.0) as usize;
        let h = (b - a) / cells as f64;
        for i in 0..cells {
            let xl = a + h * i as f64;
            let xr = if i + 1 == cells { b } else { a + h * (i + 1) as f64 };
            let level = pot.eval(0.5 * (xl + xr));
            if level == 0.0 {
                continue;
            }
            m = compose(&step_matrix(energy, level, xl, xr, mass, hbar)?, &m);
        }
    }
    Ok(m)
}

/// `1/|α|²` of [`potential_matrix`].
pub fn linear_transmission(pot: &Potential, energy: f64, mass: f64, hbar: f64, segments: usize) -> Result<f64> {
    Ok(potential_matrix(pot, energy, mass, hbar, segments)?.transmission())
}

/// Outcome of [`linear_split_reflection_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitReflection {
    pub transmission_full: f64,
    pub reflection_left: f64,
    pub reflection_right: f64,
    /// `|β_R/α_R + β_L*/α_L|`, zero when the theorem holds.
    pub ratio_residual: f64,
    pub difference: f64,
}

/// Cuts `pot` at `cut` and compares the reflection probabilities of the two
/// halves at a unit-transmission energy.
pub fn linear_split_reflection_check(
    pot: &Potential,
    energy: f64,
    cut: f64,
    mass: f64,
    hbar: f64,
    segments: usize,
    tol: f64,
) -> Result<SplitReflection> {
    let full = potential_matrix(pot, energy, mass, hbar, segments)?;
    let deficit = 1.0 - full.transmission();
    if deficit > tol {
        return Err(Error::NotResonant { deficit });
    }
    let (left, right) = pot.split(cut);
    let ml = potential_matrix(&left, energy, mass, hbar, segments)?;
    let mr = potential_matrix(&right, energy, mass, hbar, segments)?;
    let reflection_left = ml.reflection();
    let reflection_right = mr.reflection();
    Ok(SplitReflection {
        transmission_full: full.transmission(),
        reflection_left,
        reflection_right,
        ratio_residual: (mr.beta / mr.alpha + ml.beta.conj() / ml.alpha).norm(),
        difference: (reflection_left - reflection_right).abs(),
    })
}
