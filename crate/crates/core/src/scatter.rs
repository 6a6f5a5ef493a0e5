//! Fixed-output scattering: a purely outgoing plane wave of amplitude `C` is
//! imposed downstream, the stationary NLSE is integrated back through the
//! potential, and the effective incoming amplitude `A` is read off upstream
//! from `2ik_A·A = ψ′ + ik′ψ`. The transmission coefficient is
//! `|T|² = (k/k_A)·|C/A|²`.
//!
//! Right-to-left scattering is solved by mirroring the potential (`x → −x`)
//! and running the left-to-right pipeline.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::integrator::{integrate, integrate_sampled, IntegratorConfig, WaveState};
use crate::model::{wavenumber, PhysicalParams, Potential, SUPPORT_EPS};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Distance between the potential support and the boundary/extraction points.
pub const DEFAULT_MARGIN: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    LeftToRight,
    RightToLeft,
}

impl Direction {
    pub fn reversed(self) -> Self {
        match self {
            Direction::LeftToRight => Direction::RightToLeft,
            Direction::RightToLeft => Direction::LeftToRight,
        }
    }

    fn sign(self) -> f64 {
        match self {
            Direction::LeftToRight => 1.0,
            Direction::RightToLeft => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterProblem {
    pub potential: Potential,
    pub params: PhysicalParams,
    /// Outgoing amplitude `C`.
    pub amplitude: Complex64,
    pub direction: Direction,
    /// Where the outgoing plane wave is imposed.
    pub x_out: f64,
    /// Where the incoming amplitude is extracted.
    pub x_in: f64,
}

impl ScatterProblem {
    /// Boundary points one [`DEFAULT_MARGIN`] outside the potential support.
    pub fn new(potential: Potential, params: PhysicalParams, amplitude: Complex64, direction: Direction) -> Result<Self> {
        let (lo, hi) = potential.support(SUPPORT_EPS);
        let (x_out, x_in) = match direction {
            Direction::LeftToRight => (hi + DEFAULT_MARGIN, lo - DEFAULT_MARGIN),
            Direction::RightToLeft => (lo - DEFAULT_MARGIN, hi + DEFAULT_MARGIN),
        };
        Self::with_positions(potential, params, amplitude, direction, x_out, x_in)
    }

    pub fn with_positions(
        potential: Potential,
        params: PhysicalParams,
        amplitude: Complex64,
        direction: Direction,
        x_out: f64,
        x_in: f64,
    ) -> Result<Self> {
        let problem = Self {
            potential,
            params,
            amplitude,
            direction,
            x_out,
            x_in,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let (lo, hi) = self.potential.support(SUPPORT_EPS);
        let ok = match self.direction {
            Direction::LeftToRight => self.x_out >= hi && self.x_in <= lo && self.x_in < self.x_out,
            Direction::RightToLeft => self.x_out <= lo && self.x_in >= hi && self.x_in > self.x_out,
        };
        if !ok {
            return Err(Error::Invalid(format!(
                "boundary points x_out = {}, x_in = {} must lie outside the support [{lo}, {hi}] on the {:?} sides",
                self.x_out, self.x_in, self.direction
            )));
        }
        if !(self.amplitude.norm() > 0.0) || !self.amplitude.norm().is_finite() {
            return Err(Error::Invalid("outgoing amplitude must be finite and non-zero".into()));
        }
        let k = wavenumber(&self.params, self.amplitude.norm_sqr())?;
        if !(k > 0.0) {
            return Err(Error::NegativeRadicand {
                mu: self.params.mu,
                g: self.params.g,
                density: self.amplitude.norm_sqr(),
                radicand: 0.0,
            });
        }
        Ok(())
    }

    /// The same problem at another chemical potential.
    pub fn at_mu(&self, mu: f64) -> Self {
        Self {
            params: self.params.with_mu(mu),
            ..self.clone()
        }
    }

    fn mirrored(&self) -> Self {
        Self {
            potential: self.potential.mirrored(),
            params: self.params,
            amplitude: self.amplitude,
            direction: self.direction.reversed(),
            x_out: -self.x_out,
            x_in: -self.x_in,
        }
    }
}

/// Effective incoming wave extracted at a potential-free point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncomingAmplitude {
    /// Amplitude of the incoming plane wave referenced to `x = 0`
    /// (`ψ ≈ A·e^{±ik_A x}`).
    pub amplitude: Complex64,
    pub k_in: f64,
    /// Local wavenumber `k′` from the density at the extraction point.
    pub k_local: f64,
    /// `|ψ′ ∓ ik′ψ| / |ψ′ ± ik′ψ|`: the reflected-to-incoming ratio. Equals
    /// `|r|` in the linear case and vanishes exactly when the upstream wave
    /// is a single nonlinear plane wave.
    pub reflection: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterResult {
    pub direction: Direction,
    /// Incoming amplitude `A`.
    pub amplitude_in: Complex64,
    /// `k_A`.
    pub k_in: f64,
    /// `k` of the outgoing wave.
    pub k_out: f64,
    /// `k′` at the extraction point.
    pub k_local: f64,
    /// `|T|² = (k/k_A)·|C/A|²`.
    pub transmission: f64,
    /// Upstream reflection indicator, see [`IncomingAmplitude::reflection`].
    pub reflection: f64,
    /// Probability current at the extraction point (negative for right-to-left).
    pub current: f64,
    /// Largest relative deviation of the current from `±ħk|C|²/m` over every
    /// recorded state.
    pub current_drift: f64,
    /// Upstream phase `φ = arg(A/C)`.
    pub phase: f64,
    /// State at the extraction point.
    pub upstream: WaveState,
    /// Sampled wavefunction ordered by increasing `x`, if requested.
    pub wavefunction: Option<Vec<WaveState>>,
}

/// Purely outgoing plane wave at `x_out`: `C·e^{ikx}` for left-to-right,
/// `C·e^{−ikx}` for right-to-left.
pub fn outgoing_state(amplitude: Complex64, params: &PhysicalParams, x_out: f64, direction: Direction) -> Result<WaveState> {
    let k = direction.sign() * wavenumber(params, amplitude.norm_sqr())?;
    let psi = amplitude * (I * k * x_out).exp();
    Ok(WaveState::new(x_out, psi, I * k * psi))
}

/// Density `u = |A|²` solving `g·u² − μ·u + ħ²|ζ|²/(8m) = 0` on the branch that
/// reduces to `ħ²|ζ|²/(8mμ)` as `g → 0`.
pub fn incoming_density(zeta_sq: f64, params: &PhysicalParams) -> Result<f64> {
    let c = params.hbar * params.hbar * zeta_sq / (8.0 * params.mass);
    let mu = params.mu;
    let discriminant = mu * mu - 4.0 * params.g * c;
    if discriminant < 0.0 {
        return Err(Error::ClosedIncomingChannel { discriminant });
    }
    // Rationalised root (μ − √D)/(2g) = 2c/(μ + √D); exact at g = 0 and free
    // of cancellation for small g.
    let denom = mu + discriminant.sqrt();
    if !(denom > 0.0) {
        return Err(Error::ClosedIncomingChannel { discriminant });
    }
    Ok(2.0 * c / denom)
}

/// Solves `2ik_A·A = ψ′ ± ik′ψ` (upper sign left-to-right) at `state`.
pub fn extract_incoming_amplitude(state: &WaveState, params: &PhysicalParams, direction: Direction) -> Result<IncomingAmplitude> {
    let density = state.density();
    let k_local = wavenumber(params, density).map_err(|_| Error::EvanescentLocal { x: state.x, density })?;
    let s = direction.sign();
    let zeta = state.dpsi + s * I * k_local * state.psi;
    let zeta_sq = zeta.norm_sqr();
    if zeta_sq == 0.0 {
        return Err(Error::DegenerateAmplitude);
    }
    let u = incoming_density(zeta_sq, params)?;
    let k_in = wavenumber(params, u)?;
    if !(k_in > 0.0) {
        return Err(Error::DegenerateAmplitude);
    }
    let reflection = (state.dpsi - s * I * k_local * state.psi).norm() / zeta_sq.sqrt();
    let local = zeta / (2.0 * I * k_in);
    // Strip the plane-wave phase at the extraction point.
    let amplitude = s * local * (-s * I * k_in * state.x).exp();
    Ok(IncomingAmplitude {
        amplitude,
        k_in,
        k_local,
        reflection,
    })
}

/// Source strength `f0 = i(ħ²/m)·k_A·A` emitting incoming amplitude `A`.
pub fn source_strength(amplitude: Complex64, params: &PhysicalParams) -> Result<Complex64> {
    let k = wavenumber(params, amplitude.norm_sqr())?;
    Ok(I * (params.hbar * params.hbar / params.mass) * k * amplitude)
}

/// `|A|²` emitted by a point source of strength `f0` (inverse of
/// [`source_strength`] in modulus).
pub fn source_density(f0: Complex64, params: &PhysicalParams) -> Result<f64> {
    let zeta = 2.0 * params.mass * f0.norm() / (params.hbar * params.hbar);
    incoming_density(zeta * zeta, params)
}

pub fn solve_scattering(problem: &ScatterProblem, cfg: &IntegratorConfig) -> Result<ScatterResult> {
    solve_impl(problem, cfg, None)
}

/// As [`solve_scattering`], also returning the wavefunction at `n_samples`
/// evenly spaced points between the boundary positions.
pub fn solve_scattering_sampled(problem: &ScatterProblem, cfg: &IntegratorConfig, n_samples: usize) -> Result<ScatterResult> {
    solve_impl(problem, cfg, Some(n_samples))
}

fn solve_impl(problem: &ScatterProblem, cfg: &IntegratorConfig, n_samples: Option<usize>) -> Result<ScatterResult> {
    let context = || {
        format!(
            "{:?} scattering at mu = {}, g = {}",
            problem.direction, problem.params.mu, problem.params.g
        )
    };
    problem.validate().map_err(|e| e.context(context()))?;
    match problem.direction {
        Direction::LeftToRight => solve_left_to_right(problem, cfg, n_samples).map_err(|e| e.context(context())),
        Direction::RightToLeft => {
            let mirrored = problem.mirrored();
            let mut res = solve_left_to_right(&mirrored, cfg, n_samples).map_err(|e| e.context(context()))?;
            let flip = |s: &WaveState| WaveState::new(-s.x, s.psi, -s.dpsi);
            res.direction = Direction::RightToLeft;
            res.current = -res.current;
            res.upstream = flip(&res.upstream);
            if let Some(wf) = res.wavefunction.as_mut() {
                for s in wf.iter_mut() {
                    *s = flip(s);
                }
                wf.reverse();
            }
            Ok(res)
        }
    }
}

fn solve_left_to_right(problem: &ScatterProblem, cfg: &IntegratorConfig, n_samples: Option<usize>) -> Result<ScatterResult> {
    let params = &problem.params;
    let c = problem.amplitude;
    let k_out = wavenumber(params, c.norm_sqr())?;
    let start = outgoing_state(c, params, problem.x_out, Direction::LeftToRight)?;
    let j_expected = params.hbar * k_out * c.norm_sqr() / params.mass;
    let drift = |s: &WaveState| (s.current(params) - j_expected).abs() / j_expected.abs();

    let (upstream, wavefunction, current_drift) = match n_samples {
        None => {
            let end = integrate(&start, problem.x_in, params, &problem.potential, cfg)?;
            (end, None, drift(&end))
        }
        Some(n) => {
            let mut states = integrate_sampled(&start, problem.x_in, params, &problem.potential, cfg, n)?;
            let end = *states.last().expect("at least two samples");
            let worst = states.iter().map(drift).fold(0.0, f64::max);
            states.reverse();
            (end, Some(states), worst)
        }
    };

    let inc = extract_incoming_amplitude(&upstream, params, Direction::LeftToRight)?;
    let transmission = (k_out / inc.k_in) * c.norm_sqr() / inc.amplitude.norm_sqr();
    if !transmission.is_finite() || transmission <= 0.0 {
        return Err(Error::NonFiniteState { x: upstream.x });
    }
    Ok(ScatterResult {
        direction: Direction::LeftToRight,
        amplitude_in: inc.amplitude,
        k_in: inc.k_in,
        k_out,
        k_local: inc.k_local,
        transmission,
        reflection: inc.reflection,
        current: upstream.current(params),
        current_drift,
        phase: (inc.amplitude / c).arg(),
        upstream,
        wavefunction,
    })
}

/// Comparison of a scattering solution `ψ` with the solution `χ` of the
/// reversed problem started from the conjugated upstream state.
#[derive(Debug, Clone, PartialEq)]
pub struct ConjugationCheck {
    pub forward: ScatterResult,
    /// `χ` at the same positions as `forward.wavefunction`.
    pub reverse: Vec<WaveState>,
    /// `max |χ(x) − ψ*(x)|`.
    pub max_deviation: f64,
    pub max_psi: f64,
    /// `max_deviation / max_psi`.
    pub relative: f64,
    /// Same comparison when `χ` starts from the ideal outgoing plane wave
    /// `A*·e^{∓ikx}` instead; only small when the forward solve is exactly
    /// transparent, since any residual reflection is missing from it.
    pub plane_wave_relative: Option<f64>,
}

/// Solves `problem` on `n_samples` points, then integrates the reversed
/// problem from `χ = ψ*`, `χ′ = ψ′*` at the extraction point back to the
/// outgoing side and compares `χ` with `ψ*` pointwise.
pub fn conjugation_check(problem: &ScatterProblem, cfg: &IntegratorConfig, n_samples: usize) -> Result<ConjugationCheck> {
    let forward = solve_scattering_sampled(problem, cfg, n_samples)?;
    let psi = forward.wavefunction.as_ref().expect("sampled solve");
    let params = &problem.params;
    let compare = |chi: &[WaveState]| -> f64 {
        // `chi` runs from x_in to x_out; `psi` is sorted by increasing x.
        let mut chi_sorted: Vec<WaveState> = chi.to_vec();
        chi_sorted.sort_by(|a, b| a.x.total_cmp(&b.x));
        psi.iter()
            .zip(&chi_sorted)
            .map(|(p, c)| (c.psi - p.psi.conj()).norm())
            .fold(0.0, f64::max)
    };
    let max_psi = psi.iter().map(|s| s.psi.norm()).fold(0.0, f64::max);

    let reverse = integrate_sampled(&forward.upstream.conj(), problem.x_out, params, &problem.potential, cfg, n_samples)?;
    let max_deviation = compare(&reverse);

    let plane_wave_relative = outgoing_state(
        forward.amplitude_in.conj(),
        params,
        problem.x_in,
        problem.direction.reversed(),
    )
    .and_then(|start| integrate_sampled(&start, problem.x_out, params, &problem.potential, cfg, n_samples))
    .ok()
    .map(|chi| compare(&chi) / max_psi);

    let mut reverse_sorted = reverse;
    reverse_sorted.sort_by(|a, b| a.x.total_cmp(&b.x));
    Ok(ConjugationCheck {
        forward,
        reverse: reverse_sorted,
        max_deviation,
        max_psi,
        relative: max_deviation / max_psi,
        plane_wave_relative,
    })
}
