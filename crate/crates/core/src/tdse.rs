//! Time-dependent NLSE driven by a monochromatic point source,
//!
//! `iħψ̇ = −(ħ²/2m)ψ″ + Vψ + g|ψ|²ψ + f0·e^{−iμt/ħ}·δ(x − x0)`,
//!
//! on a finite grid with complex absorbing layers at both edges.
//!
//! The field is propagated in the frame rotating with the drive,
//! `ψ = ψ̃·e^{−iμt/ħ}`, where a steady state is a fixed point. Each step is a
//! symmetric split: half kinetic step in Fourier space, half local step
//! (potential, nonlinearity, absorber), the source kick at the step midpoint,
//! the second local half step and the second kinetic half step. Consecutive
//! kinetic half steps are fused.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::model::{wavenumber, PhysicalParams, Potential, SUPPORT_EPS};
use crate::integrator::{integrate_sampled, IntegratorConfig, WaveState};
use crate::scatter::{extract_incoming_amplitude, outgoing_state, solve_scattering, source_density, source_strength, Direction, ScatterProblem, ScatterResult, DEFAULT_MARGIN};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Largest accepted `dx·k_max`.
pub const MAX_DX_K: f64 = 0.5;
/// Largest accepted local phase rotation per step.
pub const MAX_STEP_PHASE: f64 = 0.5;
/// Spectral width of the source as a fraction of the Nyquist wavenumber.
const SOURCE_BAND: f64 = 0.5;
/// Onset of the high-wavenumber filter, same units.
const FILTER_CUT: f64 = 4.0;
/// Damping exponent per step at the Nyquist wavenumber.
const FILTER_RATE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub x_lo: f64,
    pub x_hi: f64,
    pub n: usize,
    pub dt: f64,
}

impl Grid {
    pub fn new(x_lo: f64, x_hi: f64, n: usize, dt: f64) -> Result<Self> {
        let g = Self { x_lo, x_hi, n, dt };
        g.validate()?;
        Ok(g)
    }

    /// Grid of `n` points with spacing `dx` starting at `x_lo`.
    pub fn with_spacing(x_lo: f64, dx: f64, n: usize, dt: f64) -> Result<Self> {
        Self::new(x_lo, x_lo + dx * (n as f64 - 1.0), n, dt)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 16 {
            return Err(Error::Invalid(format!("grid needs at least 16 points, got {}", self.n)));
        }
        if !(self.x_lo < self.x_hi) || !self.x_lo.is_finite() || !self.x_hi.is_finite() {
            return Err(Error::Invalid(format!("grid bounds [{}, {}] are not increasing", self.x_lo, self.x_hi)));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Invalid(format!("time step must be positive, got {}", self.dt)));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_hi - self.x_lo) / (self.n - 1) as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        self.x_lo + self.dx() * j as f64
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.x(j)).collect()
    }

    /// Index of the grid point nearest to `x`, if `x` is on the grid.
    pub fn nearest(&self, x: f64) -> Option<usize> {
        if !(x >= self.x_lo && x <= self.x_hi) {
            return None;
        }
        Some((((x - self.x_lo) / self.dx()).round() as usize).min(self.n - 1))
    }

    /// Angular wavenumbers in FFT order for the periodic extension of
    /// length `n·dx`.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let dk = 2.0 * PI / (self.n as f64 * self.dx());
        (0..self.n)
            .map(|j| {
                let m = if j <= self.n / 2 { j as f64 } else { j as f64 - self.n as f64 };
                m * dk
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceSpec {
    pub f0: Complex64,
    pub x0: f64,
    /// Drive chemical potential.
    pub mu: f64,
    /// Turn-on time: the amplitude rises as `sin²` from zero over this time.
    pub ramp: f64,
}

impl SourceSpec {
    /// Source with a turn-on over five drive periods.
    pub fn new(f0: Complex64, x0: f64, mu: f64, hbar: f64) -> Self {
        let period = if mu > 0.0 { 2.0 * PI * hbar / mu } else { 1.0 };
        Self { f0, x0, mu, ramp: 5.0 * period }
    }

    fn envelope(&self, t: f64) -> f64 {
        if self.ramp <= 0.0 || t >= self.ramp {
            1.0
        } else if t <= 0.0 {
            0.0
        } else {
            (0.5 * PI * t / self.ramp).sin().powi(2)
        }
    }
}

/// Negative imaginary potential `−i·strength·(d/width)²` at depth `d` into
/// either edge layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Absorber {
    pub width: f64,
    pub strength: f64,
}

impl Absorber {
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if !(self.width > 0.0 && self.width < (grid.x_hi - grid.x_lo) / 4.0) {
            return Err(Error::Invalid(format!(
                "absorber width {} must be positive and below a quarter of the domain",
                self.width
            )));
        }
        if !(self.strength > 0.0) || !self.strength.is_finite() {
            return Err(Error::Invalid(format!("absorber strength must be positive, got {}", self.strength)));
        }
        Ok(())
    }

    pub fn profile(&self, grid: &Grid) -> Vec<f64> {
        let (a, b) = (grid.x_lo + self.width, grid.x_hi - self.width);
        grid.positions()
            .into_iter()
            .map(|x| {
                let d = if x < a {
                    a - x
                } else if x > b {
                    x - b
                } else {
                    0.0
                };
                self.strength * (d / self.width).powi(2)
            })
            .collect()
    }
}

/// Mean of `V` over each cell `[x_j − dx/2, x_j + dx/2]`, with cells split at
/// the potential's discontinuities.
pub fn cell_averaged_potential(pot: &Potential, grid: &Grid) -> Vec<f64> {
    // Four-point Gauss-Legendre on [-1, 1].
    const NODES: [f64; 4] = [-0.861_136_311_594_052_6, -0.339_981_043_584_856_3, 0.339_981_043_584_856_3, 0.861_136_311_594_052_6];
    const WEIGHTS: [f64; 4] = [0.347_854_845_137_453_9, 0.652_145_154_862_546_1, 0.652_145_154_862_546_1, 0.347_854_845_137_453_9];
    let dx = grid.dx();
    let jumps = pot.discontinuities();
    let quad = |a: f64, b: f64| -> f64 {
        let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
        NODES.iter().zip(WEIGHTS).map(|(&t, w)| w * pot.eval(c + h * t)).sum::<f64>() * h
    };
    (0..grid.n)
        .map(|j| {
            let (a, b) = (grid.x(j) - 0.5 * dx, grid.x(j) + 0.5 * dx);
            let mut edges = vec![a];
            edges.extend(jumps.iter().copied().filter(|&d| d > a && d < b));
            edges.push(b);
            edges.windows(2).map(|w| quad(w[0], w[1])).sum::<f64>() / dx
        })
        .collect()
}

/// Point source smoothed by the spectral weight `exp(−(k/k_s)²)`, scaled by
/// `1/weight(k_emit)` so the emitted plane wave keeps the strength of the
/// unsmoothed source. Its non-propagating near field decays like a Gaussian
/// of width `2/k_s`.
fn source_profile(grid: &Grid, j0: usize, k_s: f64, k_emit: f64) -> Vec<(usize, f64)> {
    let n = grid.n;
    let mut spec: Vec<Complex64> = grid
        .wavenumbers()
        .into_iter()
        .map(|k| Complex64::new((-(k / k_s).powi(2)).exp(), 0.0))
        .collect();
    FftPlanner::new().plan_fft_inverse(n).process(&mut spec);
    let scale = (k_emit / k_s).powi(2).exp() / (n as f64 * grid.dx());
    let peak = spec[0].re.abs() * scale;
    (0..n)
        .filter_map(|m| {
            let w = spec[m].re * scale;
            // Offset m wraps around the periodic grid.
            let j = (j0 + m) % n;
            (w.abs() > 1e-13 * peak).then_some((j, w))
        })
        .collect()
}

/// Smoothing kernels for the value and the derivative: the spectra
/// `exp(−(k/k_f)²)` and `ik·exp(−(k/k_f)²)` as `(offset, value, derivative)`.
fn smoothing_kernel(grid: &Grid, k_f: f64) -> Vec<(isize, f64, f64)> {
    let n = grid.n;
    let ks = grid.wavenumbers();
    let mut val: Vec<Complex64> = ks.iter().map(|k| Complex64::new((-(k / k_f).powi(2)).exp(), 0.0)).collect();
    let mut der: Vec<Complex64> = ks.iter().zip(&val).map(|(k, w)| I * *k * w).collect();
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    ifft.process(&mut val);
    ifft.process(&mut der);
    let scale = 1.0 / n as f64;
    let peak = val[0].re.abs() * scale;
    (0..n)
        .map(|m| {
            let off = if m <= n / 2 { m as isize } else { m as isize - n as isize };
            (off, val[m].re * scale, der[m].re * scale)
        })
        .filter(|&(_, v, d)| v.abs() > 1e-14 * peak || d.abs() * grid.dx() > 1e-14 * peak)
        .collect()
}

/// Split-step propagator holding the rotating-frame field.
pub struct Propagator {
    grid: Grid,
    params: PhysicalParams,
    source: SourceSpec,
    /// Band-limited source profile as `(grid index, weight)`.
    src: Vec<(usize, f64)>,
    /// See [`Propagator::smoothed_state`].
    kernel: Vec<(isize, f64, f64)>,
    k_smooth: f64,
    /// `V − μ` on the grid.
    shifted: Vec<f64>,
    /// `exp(−W·dt/(2ħ))`.
    damping: Vec<f64>,
    kin_half: Vec<Complex64>,
    kin_full: Vec<Complex64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    psi: Vec<Complex64>,
    t: f64,
    source_on: bool,
    norm_bound: f64,
}

impl Propagator {
    pub fn new(pot: &Potential, params: &PhysicalParams, source: SourceSpec, grid: Grid, absorber: Absorber) -> Result<Self> {
        params.validate()?;
        grid.validate()?;
        absorber.validate(&grid)?;
        let src = grid
            .nearest(source.x0)
            .ok_or_else(|| Error::Invalid(format!("source position {} is off the grid", source.x0)))?;
        let p = params.with_mu(source.mu);
        let m_over_hbar2 = p.mass / (p.hbar * p.hbar);
        // Densities up to the emitted one are expected; attractive g raises
        // the local wavenumber.
        let n_est = source_density(source.f0, &p).unwrap_or(0.0).max(source.f0.norm() * m_over_hbar2).max(1e-300);
        let v = cell_averaged_potential(pot, &grid);
        let v_min = v.iter().copied().fold(0.0, f64::min);
        let v_max = v.iter().copied().fold(0.0, f64::max);
        let k_max = (2.0 * p.mass * (p.mu - v_min - p.g.min(0.0) * n_est)).max(0.0).sqrt() / p.hbar;
        let dx = grid.dx();
        if dx * k_max >= MAX_DX_K {
            return Err(Error::GridTooCoarse(format!(
                "dx * k_max = {:.3} exceeds {MAX_DX_K} (dx = {dx}, k_max = {k_max})",
                dx * k_max
            )));
        }
        let e_scale = (p.mu - v_min).abs().max((v_max - p.mu).abs()) + p.g.abs() * n_est;
        let phase = grid.dt * e_scale / p.hbar;
        if phase >= MAX_STEP_PHASE {
            return Err(Error::GridTooCoarse(format!(
                "local phase per step {phase:.3} exceeds {MAX_STEP_PHASE} (dt = {})",
                grid.dt
            )));
        }

        // Wavenumbers far above any physical one are never driven and are
        // damped, so time-step aliasing cannot pump them.
        let k_cut = FILTER_CUT * k_max;
        let k_nyq = PI / dx;
        let kin = |scale: f64| -> Vec<Complex64> {
            grid.wavenumbers()
                .into_iter()
                .map(|k| {
                    let over = ((k.abs() - k_cut) / (k_nyq - k_cut)).max(0.0);
                    Complex64::from_polar((-scale * FILTER_RATE * over * over).exp(), -scale * p.hbar * k * k * grid.dt / (2.0 * p.mass))
                })
                .collect()
        };
        let k_emit = wavenumber(&p, source_density(source.f0, &p).unwrap_or(0.0)).unwrap_or(0.0);
        let src = source_profile(&grid, src, SOURCE_BAND * k_nyq, k_emit);
        let kernel = smoothing_kernel(&grid, k_cut);
        let damping = absorber
            .profile(&grid)
            .into_iter()
            .map(|w| (-w * grid.dt / (2.0 * p.hbar)).exp())
            .collect();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(grid.n);
        let ifft = planner.plan_fft_inverse(grid.n);
        let scratch_len = fft.get_inplace_scratch_len().max(ifft.get_inplace_scratch_len());
        let length = grid.x_hi - grid.x_lo;
        Ok(Self {
            grid,
            params: p,
            source,
            src,
            kernel,
            k_smooth: k_cut,
            shifted: v.iter().map(|v| v - p.mu).collect(),
            damping,
            kin_half: kin(0.5),
            kin_full: kin(1.0),
            fft,
            ifft,
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
            psi: vec![Complex64::new(0.0, 0.0); grid.n],
            t: 0.0,
            source_on: true,
            norm_bound: 1e6 * (n_est + 1.0) * length,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    /// Field in the rotating frame.
    pub fn field(&self) -> &[Complex64] {
        &self.psi
    }

    /// Field in the laboratory frame, `ψ̃·e^{−iμt/ħ}`.
    pub fn lab_field(&self) -> Vec<Complex64> {
        let rot = (-I * self.source.mu * self.t / self.params.hbar).exp();
        self.psi.iter().map(|z| z * rot).collect()
    }

    pub fn norm(&self) -> f64 {
        self.psi.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.dx()
    }

    /// Replaces the field by a laboratory-frame field at the current time.
    pub fn set_field(&mut self, lab: &[Complex64]) -> Result<()> {
        if lab.len() != self.grid.n {
            return Err(Error::Invalid(format!("field has {} points, grid has {}", lab.len(), self.grid.n)));
        }
        let rot = (I * self.source.mu * self.t / self.params.hbar).exp();
        self.psi = lab.iter().map(|z| z * rot).collect();
        Ok(())
    }

    pub fn set_source(&mut self, on: bool) {
        self.source_on = on;
    }

    /// Laboratory-frame state at grid point `j` with wavenumbers far above
    /// the physical ones filtered out. Both the value and the derivative are
    /// divided by the filter weight at the local wavenumber, so plane waves
    /// of that wavenumber come out unchanged.
    pub fn smoothed_state(&self, j: usize) -> WaveState {
        let n = self.grid.n as isize;
        let (mut v, mut d) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
        for &(off, kv, kd) in &self.kernel {
            let z = self.psi[(j as isize - off).rem_euclid(n) as usize];
            v += kv * z;
            d += kd * z;
        }
        let k_local = wavenumber(&self.params, v.norm_sqr()).unwrap_or(0.0);
        let comp = (k_local / self.k_smooth).powi(2).exp();
        let rot = (-I * self.source.mu * self.t / self.params.hbar).exp();
        WaveState::new(self.grid.x(j), v * rot * comp, d * rot * comp)
    }

    /// Least-squares fit `ψ ≈ F·e^{ikx} + G·e^{−ikx}` of the laboratory-frame
    /// field over grid points with `a ≤ x ≤ b`. Returns `(F, G)`, or `None`
    /// when the interval holds fewer than two points or the fit is singular.
    pub fn fit_waves(&self, a: f64, b: f64, k: f64) -> Option<(Complex64, Complex64)> {
        let rot = (-I * self.source.mu * self.t / self.params.hbar).exp();
        let zero = Complex64::new(0.0, 0.0);
        let (mut s11, mut s12, mut s22, mut r1, mut r2) = (0.0, zero, 0.0, zero, zero);
        for j in (0..self.grid.n).filter(|&j| (a..=b).contains(&self.grid.x(j))) {
            let e = (I * k * self.grid.x(j)).exp();
            let psi = self.psi[j] * rot;
            s11 += 1.0;
            s12 += e.conj() * e.conj();
            s22 += 1.0;
            r1 += e.conj() * psi;
            r2 += e * psi;
        }
        let det = s11 * s22 - s12.norm_sqr();
        if s11 < 2.0 || !(det > 1e-12 * s11 * s22) {
            return None;
        }
        let f = (r1 * s22 - s12 * r2) / det;
        let g = (r2 * s11 - s12.conj() * r1) / det;
        Some((f, g))
    }

    /// Mean density over grid points with `a ≤ x ≤ b`.
    pub fn mean_density(&self, a: f64, b: f64) -> Option<f64> {
        let (sum, count) = (0..self.grid.n)
            .filter(|&j| (a..=b).contains(&self.grid.x(j)))
            .fold((0.0, 0usize), |(s, c), j| (s + self.psi[j].norm_sqr(), c + 1));
        (count > 0).then(|| sum / count as f64)
    }

    fn kinetic(&mut self, full: bool) {
        let n = self.grid.n as f64;
        self.fft.process_with_scratch(&mut self.psi, &mut self.scratch);
        let phases = if full { &self.kin_full } else { &self.kin_half };
        for (z, p) in self.psi.iter_mut().zip(phases) {
            *z *= p / n;
        }
        self.ifft.process_with_scratch(&mut self.psi, &mut self.scratch);
    }

    fn local_half(&mut self) {
        let h = 0.5 * self.grid.dt / self.params.hbar;
        let g = self.params.g;
        for ((z, v), d) in self.psi.iter_mut().zip(&self.shifted).zip(&self.damping) {
            let phase = (v + g * z.norm_sqr()) * h;
            *z *= Complex64::from_polar(*d, -phase);
        }
    }

    fn kick(&mut self) {
        if !self.source_on {
            return;
        }
        let t_mid = self.t + 0.5 * self.grid.dt;
        let amp = -I * self.source.f0 * self.source.envelope(t_mid) * self.grid.dt / self.params.hbar;
        for &(j, w) in &self.src {
            self.psi[j] += amp * w;
        }
    }

    /// Advances by `steps` time steps.
    pub fn advance(&mut self, steps: usize) -> Result<()> {
        if steps == 0 {
            return Ok(());
        }
        self.kinetic(false);
        for i in 0..steps {
            self.local_half();
            self.kick();
            self.local_half();
            self.t += self.grid.dt;
            self.kinetic(i + 1 < steps);
        }
        let norm = self.norm();
        if !norm.is_finite() || norm > self.norm_bound {
            return Err(Error::UnstableStep { t: self.t, norm });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    /// Laboratory-frame field on the grid.
    pub psi: Vec<Complex64>,
}

/// Evolves from `ψ = 0` to `t_final`, recording the field every
/// `snapshot_every` time units (rounded to whole steps) and at the end.
pub fn propagate(
    pot: &Potential,
    params: &PhysicalParams,
    source: SourceSpec,
    grid: Grid,
    absorber: Absorber,
    t_final: f64,
    snapshot_every: f64,
) -> Result<Vec<Snapshot>> {
    if !(t_final >= 0.0) || !(snapshot_every > 0.0) {
        return Err(Error::Invalid("t_final must be non-negative and snapshot_every positive".into()));
    }
    let mut prop = Propagator::new(pot, params, source, grid, absorber)?;
    let total = (t_final / grid.dt).round() as usize;
    let every = ((snapshot_every / grid.dt).round() as usize).max(1);
    let mut snaps = vec![Snapshot {
        t: 0.0,
        psi: prop.lab_field(),
    }];
    let mut done = 0;
    while done < total {
        let steps = every.min(total - done);
        prop.advance(steps)?;
        done += steps;
        snaps.push(Snapshot {
            t: prop.time(),
            psi: prop.lab_field(),
        });
    }
    Ok(snaps)
}

/// Grid geometry around a potential: left absorber, free gap, source,
/// gap, potential support, downstream probe region, right absorber.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayoutOptions {
    /// Target `dx·k_max`.
    pub dx_k: f64,
    /// Time step; by default `step_phase` divided by the largest local
    /// energy scale.
    pub dt: Option<f64>,
    /// Target phase rotation per step for the automatic time step.
    pub step_phase: f64,
    /// Free space between the left absorber and the source.
    pub left_gap: f64,
    /// Distance from the source to the potential support; by default one
    /// free-space wavelength, at least [`DEFAULT_MARGIN`].
    pub source_gap: Option<f64>,
    /// Length of the downstream probe region.
    pub probe_len: f64,
    /// Absorber width; by default four free-space wavelengths, at least 16.
    pub absorber_width: Option<f64>,
    /// Peak absorbing potential; by default 1.5 times the free-space kinetic
    /// energy of the drive.
    pub absorber_strength: Option<f64>,
}

impl Default for LayoutOptions {
    fn default() -> Self {
        Self {
            dx_k: 0.15,
            dt: None,
            step_phase: 0.065,
            left_gap: 2.0,
            source_gap: None,
            probe_len: 4.0,
            absorber_width: None,
            absorber_strength: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdSetup {
    pub grid: Grid,
    pub absorber: Absorber,
    pub x0: f64,
    /// Grid point between source and potential where the incoming amplitude
    /// is extracted.
    pub x_meas: f64,
    /// Downstream interval where the transmitted amplitude is fitted.
    pub probe: (f64, f64),
}

fn smooth_size(n: usize) -> usize {
    // Smallest 2^a·3^b ≥ n.
    let mut best = n.next_power_of_two();
    let mut p3 = 1;
    while p3 < best {
        let mut m = p3;
        while m < n {
            m *= 2;
        }
        best = best.min(m);
        p3 *= 3;
    }
    best
}

impl TdSetup {
    /// Lays out a grid for driving `pot` at `params.mu` with emitted density
    /// `n_in`. When the potential has at least two discontinuities, the
    /// spacing is chosen so that the outermost ones fall midway between grid
    /// points.
    pub fn auto(pot: &Potential, params: &PhysicalParams, n_in: f64, opts: &LayoutOptions) -> Result<Self> {
        let (lo, hi) = pot.support(SUPPORT_EPS);
        let v_min = pot.min_value().min(0.0);
        let k_max = (2.0 * params.mass * (params.mu - v_min - params.g.min(0.0) * n_in)).max(0.0).sqrt() / params.hbar;
        if !(k_max > 0.0) || !(opts.dx_k > 0.0 && opts.dx_k < MAX_DX_K) {
            return Err(Error::Invalid("layout needs a propagating drive and 0 < dx_k < 0.5".into()));
        }
        let k_free = wavenumber(params, n_in).unwrap_or((2.0 * params.mass * params.mu).max(0.0).sqrt() / params.hbar);
        let width = opts.absorber_width.unwrap_or((8.0 * PI / k_free).max(16.0));
        let source_gap = opts.source_gap.unwrap_or((2.0 * PI / k_free).max(DEFAULT_MARGIN));
        if !(source_gap > 0.0) {
            return Err(Error::Invalid(format!("source gap must be positive, got {source_gap}")));
        }
        let strength = opts
            .absorber_strength
            .unwrap_or(1.5 * (params.hbar * k_free).powi(2) / (2.0 * params.mass));
        let e_scale = (params.mu - v_min).abs().max((pot.max_value().max(0.0) - params.mu).abs()) + params.g.abs() * n_in;
        let dt = match opts.dt {
            Some(dt) => dt,
            None if opts.step_phase > 0.0 && opts.step_phase < MAX_STEP_PHASE => opts.step_phase * params.hbar / e_scale,
            None => return Err(Error::Invalid(format!("step_phase must lie in (0, {MAX_STEP_PHASE})"))),
        };
        let mut dx = opts.dx_k / k_max;
        let jumps = pot.discontinuities();
        if let (Some(&first), Some(&last)) = (jumps.first(), jumps.last()) {
            if last > first {
                let cells = ((last - first) / dx).ceil();
                dx = (last - first) / cells;
            }
        }
        let left = lo - source_gap - opts.left_gap - width;
        // Absorbers must stay below a quarter of the domain each.
        let right = (hi + opts.probe_len + width).max(left + 4.5 * width);
        let n = smooth_size(((right - left) / dx).ceil() as usize + 1).max(16);
        // Align on the first discontinuity (or the support edge) and share
        // the surplus length between the two absorbers.
        let anchor = jumps.first().copied().unwrap_or(lo);
        let surplus = (n - 1) as f64 * dx - (right - left);
        let mut x_lo = left - 0.5 * surplus;
        let shift = ((anchor - x_lo) / dx - 0.5).fract();
        x_lo += shift * dx;
        let grid = Grid::with_spacing(x_lo, dx, n, dt)?;
        let extra = 0.5 * surplus;
        let absorber = Absorber {
            width: (width + extra).min(0.24 * (grid.x_hi - grid.x_lo)),
            strength,
        };
        // The source sits on a grid point so a stationary solution extracted
        // there matches it exactly.
        let x0 = grid
            .nearest(lo - source_gap)
            .map(|j| grid.x(j))
            .ok_or_else(|| Error::Invalid("source position outside the grid".into()))?;
        let x_meas = grid
            .nearest(0.5 * (x0 + lo))
            .map(|j| grid.x(j))
            .filter(|&x| x > x0 && x < lo)
            .ok_or_else(|| Error::GridTooCoarse("no grid point between source and potential".into()))?;
        let probe = (hi + 0.5, grid.x_hi - absorber.width);
        Ok(Self { grid, absorber, x0, x_meas, probe })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Convergence {
    /// Averaging window length.
    pub window: f64,
    /// Samples per window.
    pub samples: usize,
    /// Accepted relative change of the window mean between windows.
    pub tol: f64,
    /// Consecutive windows that must meet `tol`.
    pub stable_windows: usize,
    pub t_max: f64,
}

impl Default for Convergence {
    fn default() -> Self {
        Self {
            window: 10.0,
            samples: 10,
            tol: 1e-4,
            stable_windows: 3,
            t_max: 2000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub transmission: f64,
    /// Window-averaged downstream density.
    pub density_out: f64,
    /// Window-averaged measured `|A|²`.
    pub density_in: f64,
    pub t: f64,
    /// `(t, window mean of T2)` for every completed window.
    pub history: Vec<(f64, f64)>,
}

/// Runs a source of strength `f0` at `setup.x0` from an empty domain until
/// the transmission settles. Each sample extracts `A` at `setup.x_meas` as
/// the stationary solver does, fits the transmitted wave over `setup.probe`
/// and forms `(k|C|²)/(k_A|A|²)`.
pub fn steady_state_transmission(
    pot: &Potential,
    params: &PhysicalParams,
    f0: Complex64,
    setup: &TdSetup,
    conv: &Convergence,
) -> Result<SteadyState> {
    steady_state_observed(pot, params, f0, setup, conv, None, &mut |_| {})
}

/// As [`steady_state_transmission`], optionally starting from `initial`
/// (laboratory frame, source switched on at full strength) and calling
/// `observer` after every sample.
pub fn steady_state_observed(
    pot: &Potential,
    params: &PhysicalParams,
    f0: Complex64,
    setup: &TdSetup,
    conv: &Convergence,
    initial: Option<&[Complex64]>,
    observer: &mut dyn FnMut(&Propagator),
) -> Result<SteadyState> {
    if !(conv.window > 0.0 && conv.tol > 0.0 && conv.samples > 0 && conv.stable_windows > 0) {
        return Err(Error::Invalid("convergence settings must be positive".into()));
    }
    let mut source = SourceSpec::new(f0, setup.x0, params.mu, params.hbar);
    if initial.is_some() {
        source.ramp = 0.0;
    }
    let mut prop = Propagator::new(pot, params, source, setup.grid, setup.absorber)?;
    let dt = setup.grid.dt;
    let sub = ((conv.window / (conv.samples as f64 * dt)).round() as usize).max(1);
    match initial {
        Some(field) => prop.set_field(field)?,
        None => prop.advance((source.ramp / dt).ceil() as usize)?,
    }
    observer(&prop);

    let j_meas = setup
        .grid
        .nearest(setup.x_meas)
        .ok_or_else(|| Error::Invalid("measurement point outside the grid".into()))?;
    let mut history = Vec::new();
    let mut prev: Option<f64> = None;
    let mut stable = 0;
    let mut change = f64::INFINITY;
    loop {
        let (mut t2, mut n_out, mut n_in) = (0.0, 0.0, 0.0);
        for _ in 0..conv.samples {
            prop.advance(sub)?;
            observer(&prop);
            let inc = extract_incoming_amplitude(&prop.smoothed_state(j_meas), params, Direction::LeftToRight)?;
            let (k_in, u_in) = (inc.k_in, inc.amplitude.norm_sqr());
            let (k_out, u_out) = fitted_wave(&prop, params, setup.probe)?;
            t2 += (k_out * u_out) / (k_in * u_in);
            n_in += u_in;
            n_out += u_out;
        }
        let scale = 1.0 / conv.samples as f64;
        let mean = t2 * scale;
        history.push((prop.time(), mean));
        if let Some(p) = prev {
            change = (mean - p).abs() / mean.abs().max(f64::MIN_POSITIVE);
            stable = if change < conv.tol { stable + 1 } else { 0 };
        }
        prev = Some(mean);
        if stable >= conv.stable_windows {
            return Ok(SteadyState {
                transmission: mean,
                density_out: n_out * scale,
                density_in: n_in * scale,
                t: prop.time(),
                history,
            });
        }
        if prop.time() >= conv.t_max {
            return Err(Error::NoSteadyState { t: prop.time(), change });
        }
    }
}

/// Wavenumber and density of the right-moving wave fitted over `range`, with
/// the nonlinear wavenumber iterated to consistency.
fn fitted_wave(prop: &Propagator, params: &PhysicalParams, range: (f64, f64)) -> Result<(f64, f64)> {
    let mut density = prop.mean_density(range.0, range.1).unwrap_or(0.0);
    let mut k = wavenumber(params, density)?;
    for _ in 0..4 {
        let (f, _) = prop
            .fit_waves(range.0, range.1, k)
            .ok_or_else(|| Error::Invalid(format!("cannot fit waves on [{}, {}]", range.0, range.1)))?;
        density = f.norm_sqr();
        k = wavenumber(params, density)?;
    }
    Ok((k, density))
}

/// Stationary left-to-right solution laid out on a TD grid.
#[derive(Debug, Clone)]
pub struct Seed {
    /// Stationary solve with the extraction point at `setup.x_meas`, where the
    /// time-dependent run measures.
    pub stationary: ScatterResult,
    /// Source strength reproducing the incoming wave, phase included.
    pub f0: Complex64,
    /// Field on every grid point.
    pub field: Vec<Complex64>,
}

/// Solves the stationary problem for outgoing amplitude `c` and samples it
/// on the grid. The source strength comes from the incoming wave at the
/// source position. Downstream the
/// field is `C·e^{ikx}`; upstream of the source it continues as the reflected
/// plane wave.
pub fn stationary_seed(
    pot: &Potential,
    params: &PhysicalParams,
    c: Complex64,
    setup: &TdSetup,
    cfg: &IntegratorConfig,
) -> Result<Seed> {
    let grid = setup.grid;
    let j_in = grid
        .nearest(setup.x0)
        .ok_or_else(|| Error::Invalid("source position outside the grid".into()))?;
    let (_, hi) = pot.support(SUPPORT_EPS);
    let j_out = ((hi + DEFAULT_MARGIN - grid.x_lo) / grid.dx()).ceil() as usize;
    if j_out >= grid.n || j_out <= j_in {
        return Err(Error::Invalid("grid does not cover the potential support".into()));
    }
    let (x_in, x_out) = (grid.x(j_in), grid.x(j_out));
    let at = |x: f64| -> Result<ScatterResult> {
        let problem = ScatterProblem::with_positions(pot.clone(), *params, c, Direction::LeftToRight, x_out, x)?;
        solve_scattering(&problem, cfg)
    };
    let at_source = at(x_in)?;
    let stationary = at(setup.x_meas)?;
    let start = outgoing_state(c, params, x_out, Direction::LeftToRight)?;
    let inside = integrate_sampled(&start, x_in, params, pot, cfg, j_out - j_in + 1)?;

    let k_out = at_source.k_out;
    let mut field: Vec<Complex64> = (0..grid.n).map(|j| c * (I * k_out * grid.x(j)).exp()).collect();
    for (i, s) in inside.iter().enumerate() {
        field[j_out - i] = s.psi;
    }
    let psi0 = inside.last().map(|s| s.psi).unwrap_or_default();
    let k_left = wavenumber(params, psi0.norm_sqr())?;
    for (j, z) in field.iter_mut().enumerate().take(j_in) {
        *z = psi0 * (-I * k_left * (grid.x(j) - x_in)).exp();
    }
    let a = at_source.amplitude_in * (I * at_source.k_in * x_in).exp();
    let f0 = source_strength(a, params)?;
    Ok(Seed { stationary, f0, field })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linref::rect_well_transmission;
    use crate::scatter::source_strength;

    const ONE: Complex64 = Complex64::new(1.0, 0.0);

    #[test]
    fn grid_basics() {
        let g = Grid::new(-1.0, 1.0, 21, 0.01).unwrap();
        assert!((g.dx() - 0.1).abs() < 1e-15);
        assert_eq!(g.nearest(0.04), Some(10));
        assert_eq!(g.nearest(2.0), None);
        let k = g.wavenumbers();
        assert_eq!(k[0], 0.0);
        assert!(k[11] < 0.0);
        assert!(Grid::new(0.0, 1.0, 8, 0.1).is_err());
        assert!(Grid::new(0.0, 1.0, 32, 0.0).is_err());
    }

    #[test]
    fn smooth_sizes() {
        assert_eq!(smooth_size(1000), 1024);
        assert_eq!(smooth_size(1100), 1152);
        assert_eq!(smooth_size(17), 18);
    }

    #[test]
    fn cell_average_of_step() {
        let pot = Potential::rectangular_well(2.0, 1.0).unwrap();
        // Edge at x = 1 in the middle of the cell around x = 1.
        let g = Grid::new(-2.0, 2.0, 41, 0.01).unwrap();
        let v = cell_averaged_potential(&pot, &g);
        assert!((v[30] + 1.0).abs() < 1e-12);
        assert!((v[20] + 2.0).abs() < 1e-12);
        let total: f64 = v.iter().sum::<f64>() * g.dx();
        assert!((total + 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_source_stays_zero() {
        let g = Grid::new(-20.0, 20.0, 256, 0.01).unwrap();
        let src = SourceSpec::new(Complex64::new(0.0, 0.0), -5.0, 1.0, 1.0);
        let snaps = propagate(&Potential::Zero, &PhysicalParams::natural(-1.0, 1.0), src, g, Absorber { width: 5.0, strength: 2.0 }, 5.0, 1.0).unwrap();
        assert_eq!(snaps.len(), 6);
        assert!(snaps.iter().all(|s| s.psi.iter().all(|z| z.norm() == 0.0)));
    }

    #[test]
    fn coarse_grid_rejected() {
        let pot = Potential::rectangular_well(50.0, 20.0).unwrap();
        let g = Grid::new(-60.0, 60.0, 512, 0.005).unwrap();
        let src = SourceSpec::new(ONE, -22.0, 2.0, 1.0);
        let e = Propagator::new(&pot, &PhysicalParams::natural(0.0, 2.0), src, g, Absorber { width: 10.0, strength: 2.0 }).err().unwrap();
        assert!(matches!(e, Error::GridTooCoarse(_)));
    }

    fn free_setup() -> (Potential, PhysicalParams, TdSetup) {
        let p = PhysicalParams::natural(0.0, 1.0);
        let setup = TdSetup::auto(&Potential::Zero, &p, 1.0, &LayoutOptions::default()).unwrap();
        (Potential::Zero, p, setup)
    }

    #[test]
    fn free_emission_is_transparent() {
        let (pot, p, setup) = free_setup();
        let f0 = source_strength(ONE, &p).unwrap();
        let ss = steady_state_transmission(&pot, &p, f0, &setup, &Convergence::default()).unwrap();
        assert!((ss.transmission - 1.0).abs() < 0.01, "{ss:?}");
        assert!((ss.density_out - 1.0).abs() < 0.01);
    }

    #[test]
    fn norm_decays_after_source_off() {
        let (pot, p, setup) = free_setup();
        let f0 = source_strength(ONE, &p).unwrap();
        let src = SourceSpec::new(f0, setup.x0, p.mu, p.hbar);
        let mut prop = Propagator::new(&pot, &p, src, setup.grid, setup.absorber).unwrap();
        prop.advance(8000).unwrap();
        prop.set_source(false);
        let start = prop.norm();
        let mut last = start;
        for _ in 0..50 {
            prop.advance(100).unwrap();
            let n = prop.norm();
            assert!(n <= last * (1.0 + 1e-12), "{n} > {last}");
            last = n;
        }
        assert!(last < 0.5 * start);
    }

    #[test]
    fn fit_recovers_two_waves() {
        let (pot, p, setup) = free_setup();
        let src = SourceSpec::new(ONE, setup.x0, p.mu, p.hbar);
        let mut prop = Propagator::new(&pot, &p, src, setup.grid, setup.absorber).unwrap();
        let (f, g, k) = (Complex64::new(0.3, -1.2), Complex64::new(-0.4, 0.1), 1.3);
        let field: Vec<Complex64> = (0..setup.grid.n)
            .map(|j| {
                let x = setup.grid.x(j);
                f * (I * k * x).exp() + g * (-I * k * x).exp()
            })
            .collect();
        prop.set_field(&field).unwrap();
        let (ff, gg) = prop.fit_waves(-3.0, -1.0, k).unwrap();
        assert!((ff - f).norm() < 1e-10 && (gg - g).norm() < 1e-10);
        assert!(prop.fit_waves(0.0, 1e-9, k).is_none());
    }

    fn seeded(pot: &Potential, p: &PhysicalParams, opts: &LayoutOptions) -> (f64, f64) {
        let setup = TdSetup::auto(pot, p, 1.0, opts).unwrap();
        let seed = stationary_seed(pot, p, ONE, &setup, &IntegratorConfig::default()).unwrap();
        let conv = Convergence { t_max: 5000.0, ..Convergence::default() };
        let ss = steady_state_observed(pot, p, seed.f0, &setup, &conv, Some(&seed.field), &mut |_| {}).unwrap();
        (seed.stationary.transmission, ss.transmission)
    }

    #[test]
    fn seed_matches_stationary_solution() {
        let pot = Potential::double_gaussian(1.0, 7.35, 1.47).unwrap();
        let p = PhysicalParams::natural(0.005, 0.76);
        let setup = TdSetup::auto(&pot, &p, 1.0, &LayoutOptions::default()).unwrap();
        let seed = stationary_seed(&pot, &p, ONE, &setup, &IntegratorConfig::default()).unwrap();
        let src = SourceSpec { ramp: 0.0, ..SourceSpec::new(seed.f0, setup.x0, p.mu, p.hbar) };
        let mut prop = Propagator::new(&pot, &p, src, setup.grid, setup.absorber).unwrap();
        prop.set_field(&seed.field).unwrap();
        let j = setup.grid.nearest(setup.x_meas).unwrap();
        let a = extract_incoming_amplitude(&prop.smoothed_state(j), &p, Direction::LeftToRight).unwrap().amplitude;
        assert!((a.norm() / seed.stationary.amplitude_in.norm() - 1.0).abs() < 2e-3, "{a} vs {}", seed.stationary.amplitude_in);
        let (c, _) = prop.fit_waves(setup.probe.0, setup.probe.1, seed.stationary.k_out).unwrap();
        assert!((c - ONE).norm() < 1e-9);
    }

    #[test]
    fn linear_limit_double_gaussian() {
        let pot = Potential::double_gaussian(1.0, 7.35, 1.47).unwrap();
        for mu in [0.7, 0.9, 1.6] {
            let (stat, td) = seeded(&pot, &PhysicalParams::natural(0.0, mu), &LayoutOptions::default());
            let exact = crate::linref::potential_matrix(&pot, mu, 1.0, 1.0, 4096).unwrap().transmission();
            assert!((stat - exact).abs() < 1e-5, "{stat} vs {exact}");
            assert!((td / exact - 1.0).abs() < 0.02, "mu {mu}: {td} vs {exact}");
        }
    }

    #[test]
    fn linear_limit_rectangular_well() {
        let pot = Potential::rectangular_well(50.0, 20.0).unwrap();
        for mu in [1.0, 2.0, 3.0] {
            let (_, td) = seeded(&pot, &PhysicalParams::natural(0.0, mu), &LayoutOptions::default());
            let exact = rect_well_transmission(mu, 50.0, 20.0, 1.0, 1.0).unwrap();
            assert!((td / exact - 1.0).abs() < 0.02, "mu {mu}: {td} vs {exact}");
        }
    }

    #[test]
    fn empty_start_reaches_same_state() {
        let pot = Potential::rectangular_well(50.0, 20.0).unwrap();
        let p = PhysicalParams::natural(0.0, 1.0);
        let setup = TdSetup::auto(&pot, &p, 1.0, &LayoutOptions::default()).unwrap();
        let f0 = source_strength(ONE, &p).unwrap();
        let ss = steady_state_transmission(&pot, &p, f0, &setup, &Convergence::default()).unwrap();
        let exact = rect_well_transmission(1.0, 50.0, 20.0, 1.0, 1.0).unwrap();
        assert!((ss.transmission / exact - 1.0).abs() < 0.02, "{} vs {exact}", ss.transmission);
        assert!((ss.density_in - 1.0).abs() < 0.02);
    }

    #[test]
    fn grid_refinement_changes_little() {
        let pot = Potential::double_gaussian(1.0, 7.35, 1.47).unwrap();
        let p = PhysicalParams::natural(0.005, 0.7585);
        let coarse = LayoutOptions::default();
        let fine = LayoutOptions {
            dx_k: 0.5 * coarse.dx_k,
            step_phase: 0.5 * coarse.step_phase,
            ..coarse
        };
        let (_, a) = seeded(&pot, &p, &coarse);
        let (_, b) = seeded(&pot, &p, &fine);
        assert!((a / b - 1.0).abs() < 0.01, "{a} vs {b}");
    }
}
