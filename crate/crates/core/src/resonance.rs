//! Transmission sweeps over the chemical potential, resonance location and the
//! split-potential transmission check.
//!
//! A resonance is a chemical potential at which the upstream wave is a single
//! plane wave, i.e. the reflection indicator of [`ScatterResult::reflection`]
//! vanishes. In the linear case this is the maximiser of `|T|²`; in the
//! nonlinear fixed-output formulation `|T|²` may exceed one near (but not at)
//! the resonance, so the indicator is minimised instead and `|T|² = 1` is
//! checked afterwards.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, ErrorCode, Result};
use crate::integrator::IntegratorConfig;
use crate::model::{PhysicalParams, Potential, SUPPORT_EPS};
use crate::scatter::{solve_scattering, Direction, ScatterProblem, ScatterResult, DEFAULT_MARGIN};

/// Outcome of one solve inside a sweep or report.
pub type Outcome = std::result::Result<f64, ErrorCode>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub mu: f64,
    /// `|T|²`, or the code of the error that stopped the solve.
    pub transmission: Outcome,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransmissionCurve {
    /// Ordered by strictly increasing `mu`.
    pub points: Vec<CurvePoint>,
}

impl TransmissionCurve {
    pub fn ok_count(&self) -> usize {
        self.points.iter().filter(|p| p.transmission.is_ok()).count()
    }

    pub fn ok_fraction(&self) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        self.ok_count() as f64 / self.points.len() as f64
    }

    /// Point with the largest successful transmission.
    pub fn maximum(&self) -> Option<(f64, f64)> {
        self.points
            .iter()
            .filter_map(|p| p.transmission.ok().map(|t| (p.mu, t)))
            .fold(None, |best, (mu, t)| match best {
                Some((_, bt)) if bt >= t => best,
                _ => Some((mu, t)),
            })
    }
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn mu_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Invalid(format!("sweep range needs lo < hi, got [{lo}, {hi}]")));
    }
    if n < 2 {
        return Err(Error::Invalid("sweep needs at least two points".into()));
    }
    let step = (hi - lo) / (n - 1) as f64;
    Ok((0..n).map(|i| if i + 1 == n { hi } else { lo + step * i as f64 }).collect())
}

fn run_curve<F>(mus: &[f64], solve: F) -> TransmissionCurve
where
    F: Fn(f64) -> Outcome + Sync,
{
    let points = mus
        .par_iter()
        .map(|&mu| CurvePoint {
            mu,
            transmission: solve(mu),
        })
        .collect();
    TransmissionCurve { points }
}

fn solve_full(
    pot: &Potential,
    params: &PhysicalParams,
    mu: f64,
    amplitude: Complex64,
    direction: Direction,
    cfg: &IntegratorConfig,
) -> Result<ScatterResult> {
    let problem = ScatterProblem::new(pot.clone(), params.with_mu(mu), amplitude, direction)?;
    solve_scattering(&problem, cfg)
}

/// `|T|²` on a uniform `mu` grid. Failed points are recorded, never fatal.
pub fn sweep(
    pot: &Potential,
    params: &PhysicalParams,
    mu_lo: f64,
    mu_hi: f64,
    n_points: usize,
    amplitude: Complex64,
    direction: Direction,
    cfg: &IntegratorConfig,
) -> Result<TransmissionCurve> {
    let mus = mu_grid(mu_lo, mu_hi, n_points)?;
    Ok(run_curve(&mus, |mu| {
        solve_full(pot, params, mu, amplitude, direction, cfg)
            .map(|r| r.transmission)
            .map_err(|e| e.code())
    }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResonanceOptions {
    /// Points in the initial scan of the bracket.
    pub coarse_points: usize,
    /// Final bracket width.
    pub tol_mu: f64,
    /// Largest accepted `|1 − |T|²|` at the located resonance.
    pub tol_t: f64,
}

impl Default for ResonanceOptions {
    fn default() -> Self {
        Self {
            coarse_points: 200,
            tol_mu: 1e-8,
            tol_t: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resonance {
    pub mu: f64,
    pub transmission: f64,
    /// Reflection indicator at `mu`.
    pub reflection: f64,
    /// Number of scattering solves used.
    pub evaluations: usize,
}

/// Locates the resonance in `bracket`: a coarse scan of the reflection
/// indicator followed by golden-section minimisation between the neighbours
/// of the best scan point.
pub fn find_resonance(
    pot: &Potential,
    params: &PhysicalParams,
    bracket: (f64, f64),
    amplitude: Complex64,
    opts: &ResonanceOptions,
    cfg: &IntegratorConfig,
) -> Result<Resonance> {
    if !(opts.tol_mu > 0.0 && opts.tol_t > 0.0) {
        return Err(Error::Invalid("resonance tolerances must be positive".into()));
    }
    let mus = mu_grid(bracket.0, bracket.1, opts.coarse_points.max(3))?;
    let eval = |mu: f64| solve_full(pot, params, mu, amplitude, Direction::LeftToRight, cfg);
    let scan: Vec<Option<ScatterResult>> = mus.par_iter().map(|&mu| eval(mu).ok()).collect();
    let mut evaluations = scan.len();

    let best = scan
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.as_ref().map(|r| (i, r.reflection)))
        .fold(None, |acc: Option<(usize, f64)>, (i, rho)| match acc {
            Some((_, b)) if b <= rho => acc,
            _ => Some((i, rho)),
        });
    let Some((i_best, _)) = best else {
        return Err(Error::NoResonanceInBracket {
            mu: f64::NAN,
            transmission: f64::NAN,
        });
    };
    let interior = i_best > 0 && i_best + 1 < mus.len() && scan[i_best - 1].is_some() && scan[i_best + 1].is_some();
    if !interior {
        let t = scan[i_best].as_ref().map_or(f64::NAN, |r| r.transmission);
        return Err(Error::NoResonanceInBracket {
            mu: mus[i_best],
            transmission: t,
        });
    }

    // Golden-section search; each probe is a full solve so errors propagate.
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (mus[i_best - 1], mus[i_best + 1]);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = eval(c)?.reflection;
    let mut fd = eval(d)?.reflection;
    evaluations += 2;
    while b - a > opts.tol_mu {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = eval(c)?.reflection;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = eval(d)?.reflection;
        }
        evaluations += 1;
    }
    let mu = if fc <= fd { c } else { d };
    let res = eval(mu)?;
    evaluations += 1;
    if !((1.0 - res.transmission).abs() < opts.tol_t) {
        return Err(Error::NoResonanceInBracket {
            mu,
            transmission: res.transmission,
        });
    }
    Ok(Resonance {
        mu,
        transmission: res.transmission,
        reflection: res.reflection,
        evaluations,
    })
}

/// One half of a split potential in one direction. The extraction or output
/// point on the cut side sits exactly on the cut; the far side uses the
/// default margin.
pub fn half_problem(
    half: Potential,
    params: PhysicalParams,
    amplitude: Complex64,
    direction: Direction,
    cut: f64,
    cut_side_is_left: bool,
) -> Result<ScatterProblem> {
    let (lo, hi) = half.support(SUPPORT_EPS);
    let (left, right) = if cut_side_is_left {
        (cut.min(lo), hi.max(cut) + DEFAULT_MARGIN)
    } else {
        (lo.min(cut) - DEFAULT_MARGIN, cut.max(hi))
    };
    let (x_out, x_in) = match direction {
        Direction::LeftToRight => (right, left),
        Direction::RightToLeft => (left, right),
    };
    ScatterProblem::with_positions(half, params, amplitude, direction, x_out, x_in)
}

/// Transmissions of a potential and of its two halves `V_L` (left of the cut)
/// and `V_R` in both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitReport {
    pub cut: f64,
    pub mu: f64,
    pub full_lr: Outcome,
    pub full_rl: Outcome,
    pub left_lr: Outcome,
    pub left_rl: Outcome,
    pub right_lr: Outcome,
    pub right_rl: Outcome,
    /// `|T_R(→) − T_L(←)|`.
    pub r1: Option<f64>,
    /// `|T_L(→) − T_R(←)|`.
    pub r2: Option<f64>,
}

fn residual(a: Outcome, b: Outcome) -> Option<f64> {
    Some((a.ok()? - b.ok()?).abs())
}

fn half_transmission(
    pot: &Potential,
    params: &PhysicalParams,
    amplitude: Complex64,
    cut: f64,
    left_half: bool,
    direction: Direction,
    cfg: &IntegratorConfig,
) -> Outcome {
    let (l, r) = pot.split(cut);
    let half = if left_half { l } else { r };
    half_problem(half, *params, amplitude, direction, cut, !left_half)
        .and_then(|p| solve_scattering(&p, cfg))
        .map(|r| r.transmission)
        .map_err(|e| e.code())
}

/// Solves the six problems for one cut at `params.mu`.
pub fn split_check(
    pot: &Potential,
    params: &PhysicalParams,
    cut: f64,
    amplitude: Complex64,
    cfg: &IntegratorConfig,
) -> SplitReport {
    let full = |dir| {
        solve_full(pot, params, params.mu, amplitude, dir, cfg)
            .map(|r| r.transmission)
            .map_err(|e| e.code())
    };
    let half = |left, dir| half_transmission(pot, params, amplitude, cut, left, dir, cfg);
    let (full_lr, full_rl) = (full(Direction::LeftToRight), full(Direction::RightToLeft));
    let (left_lr, left_rl) = (half(true, Direction::LeftToRight), half(true, Direction::RightToLeft));
    let (right_lr, right_rl) = (half(false, Direction::LeftToRight), half(false, Direction::RightToLeft));
    SplitReport {
        cut,
        mu: params.mu,
        full_lr,
        full_rl,
        left_lr,
        left_rl,
        right_lr,
        right_rl,
        r1: residual(right_lr, left_rl),
        r2: residual(left_lr, right_rl),
    }
}

/// Directions used for the half-potential curves of [`split_sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pairing {
    /// `V_L` right-to-left and `V_R` left-to-right.
    #[default]
    Crossed,
    /// Both halves left-to-right.
    SameDirection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitCurves {
    pub full: TransmissionCurve,
    pub left: TransmissionCurve,
    pub right: TransmissionCurve,
}

/// Full-potential curve (left-to-right) and the two half-potential curves.
pub fn split_sweep(
    pot: &Potential,
    params: &PhysicalParams,
    mu_lo: f64,
    mu_hi: f64,
    n_points: usize,
    cut: f64,
    amplitude: Complex64,
    pairing: Pairing,
    cfg: &IntegratorConfig,
) -> Result<SplitCurves> {
    let mus = mu_grid(mu_lo, mu_hi, n_points)?;
    let left_dir = match pairing {
        Pairing::Crossed => Direction::RightToLeft,
        Pairing::SameDirection => Direction::LeftToRight,
    };
    let full = sweep(pot, params, mu_lo, mu_hi, n_points, amplitude, Direction::LeftToRight, cfg)?;
    let half_curve = |left: bool, dir: Direction| {
        run_curve(&mus, |mu| half_transmission(pot, &params.with_mu(mu), amplitude, cut, left, dir, cfg))
    };
    Ok(SplitCurves {
        full,
        left: half_curve(true, left_dir),
        right: half_curve(false, Direction::LeftToRight),
    })
}
