//! Physical parameters, barrier/well potentials and the wavenumber relation
//! shared by every solver in the crate.

use std::path::Path;

use crate::error::{Error, Result};

/// Mass, reduced Planck constant, nonlinearity and chemical potential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalParams {
    pub mass: f64,
    pub hbar: f64,
    /// Strength of the cubic term; negative is attractive.
    pub g: f64,
    /// Chemical potential (plays the role of the energy).
    pub mu: f64,
}

impl PhysicalParams {
    pub fn new(mass: f64, hbar: f64, g: f64, mu: f64) -> Result<Self> {
        let params = Self { mass, hbar, g, mu };
        params.validate()?;
        Ok(params)
    }

    /// `m = ħ = 1`.
    pub fn natural(g: f64, mu: f64) -> Self {
        Self {
            mass: 1.0,
            hbar: 1.0,
            g,
            mu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(Error::Invalid(format!("mass must be positive, got {}", self.mass)));
        }
        if !(self.hbar > 0.0 && self.hbar.is_finite()) {
            return Err(Error::Invalid(format!("hbar must be positive, got {}", self.hbar)));
        }
        if !self.g.is_finite() || !self.mu.is_finite() {
            return Err(Error::Invalid("g and mu must be finite".into()));
        }
        Ok(())
    }

    pub fn with_mu(self, mu: f64) -> Self {
        Self { mu, ..self }
    }

    pub fn with_g(self, g: f64) -> Self {
        Self { g, ..self }
    }

    /// `2m/ħ²`, the factor converting energies into squared wavenumbers.
    pub fn kinetic_scale(&self) -> f64 {
        2.0 * self.mass / (self.hbar * self.hbar)
    }

    /// See [`wavenumber`].
    pub fn wavenumber(&self, density: f64) -> Result<f64> {
        wavenumber(self, density)
    }
}

/// `k = √(2m(μ − g·n))/ħ` for a plane wave of density `n`.
///
/// A negative radicand is reported, never clamped: it means the asymptotic
/// channel at this density is closed.
pub fn wavenumber(params: &PhysicalParams, density: f64) -> Result<f64> {
    let radicand = params.mu - params.g * density;
    if radicand < 0.0 || radicand.is_nan() {
        return Err(Error::NegativeRadicand {
            mu: params.mu,
            g: params.g,
            density,
            radicand,
        });
    }
    Ok((params.kinetic_scale() * radicand).sqrt())
}

/// Piecewise-linear potential given by samples, zero outside the sample range.
#[derive(Debug, Clone, PartialEq)]
pub struct Tabulated {
    xs: Vec<f64>,
    vs: Vec<f64>,
}

impl Tabulated {
    pub fn new(xs: Vec<f64>, vs: Vec<f64>) -> Result<Self> {
        if xs.len() != vs.len() {
            return Err(Error::Invalid("tabulated x and V lengths differ".into()));
        }
        if xs.len() < 2 {
            return Err(Error::Invalid("tabulated potential needs at least two samples".into()));
        }
        if let Some(bad) = xs.iter().chain(&vs).find(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite tabulated value {bad}")));
        }
        if let Some(w) = xs.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Invalid(format!(
                "tabulated x must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Self { xs, vs })
    }

    /// Parses the two-column `x V` text format; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut xs = Vec::new();
        let mut vs = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 2 {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected 2 columns, found {}", fields.len()),
                });
            }
            let parse = |s: &str| -> Result<f64> {
                let v: f64 = s.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("not a number: {s:?}"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("non-finite value {s:?}"),
                    });
                }
                Ok(v)
            };
            let x = parse(fields[0])?;
            let v = parse(fields[1])?;
            if let Some(&prev) = xs.last() {
                if x <= prev {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("x = {x} does not increase (previous {prev})"),
                    });
                }
            }
            xs.push(x);
            vs.push(v);
        }
        Self::new(xs, vs)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::from(e).context(format!("reading {}", path.display())))?;
        Self::parse(&text)
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn vs(&self) -> &[f64] {
        &self.vs
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if !(x >= self.xs[0] && x <= self.xs[n - 1]) {
            return 0.0;
        }
        let i = self.xs.partition_point(|&xi| xi <= x);
        if i == n {
            return self.vs[n - 1];
        }
        let (x0, x1) = (self.xs[i - 1], self.xs[i]);
        let (v0, v1) = (self.vs[i - 1], self.vs[i]);
        v0 + (v1 - v0) * (x - x0) / (x1 - x0)
    }
}

/// Barrier or well shapes, including the left/right halves produced by
/// cutting another potential.
#[derive(Debug, Clone, PartialEq)]
pub enum Potential {
    Zero,
    /// `−depth` on `|x| ≤ half_width`, zero outside.
    RectangularWell { depth: f64, half_width: f64 },
    /// `height·[exp(−(x+offset)²/width²) + exp(−(x−offset)²/width²)]`.
    DoubleGaussian { height: f64, offset: f64, width: f64 },
    Tabulated(Tabulated),
    /// `inner(x)` for `x ≤ cut`, zero for `x > cut`.
    LeftPart { inner: Box<Potential>, cut: f64 },
    /// Zero for `x < cut`, `inner(x)` for `x ≥ cut`.
    RightPart { inner: Box<Potential>, cut: f64 },
    /// `inner(−x)`; used to run right-to-left scattering through the
    /// left-to-right pipeline.
    Mirrored(Box<Potential>),
}

/// Default relative cutoff for [`Potential::support`].
pub const SUPPORT_EPS: f64 = 1e-12;

impl Potential {
    pub fn rectangular_well(depth: f64, half_width: f64) -> Result<Self> {
        if !(depth > 0.0 && depth.is_finite()) {
            return Err(Error::Invalid(format!("well depth must be positive, got {depth}")));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::Invalid(format!(
                "well half-width must be positive, got {half_width}"
            )));
        }
        Ok(Potential::RectangularWell { depth, half_width })
    }

    pub fn double_gaussian(height: f64, offset: f64, width: f64) -> Result<Self> {
        if !height.is_finite() || !offset.is_finite() {
            return Err(Error::Invalid("double-Gaussian height/offset must be finite".into()));
        }
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::Invalid(format!("Gaussian width must be positive, got {width}")));
        }
        Ok(Potential::DoubleGaussian {
            height,
            offset,
            width,
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Potential::Zero => 0.0,
            Potential::RectangularWell { depth, half_width } => {
                if x.abs() <= *half_width {
                    -depth
                } else {
                    0.0
                }
            }
            Potential::DoubleGaussian {
                height,
                offset,
                width,
            } => {
                let w2 = width * width;
                height * ((-(x + offset).powi(2) / w2).exp() + (-(x - offset).powi(2) / w2).exp())
            }
            Potential::Tabulated(t) => t.eval(x),
            Potential::LeftPart { inner, cut } => {
                if x <= *cut {
                    inner.eval(x)
                } else {
                    0.0
                }
            }
            Potential::RightPart { inner, cut } => {
                if x >= *cut {
                    inner.eval(x)
                } else {
                    0.0
                }
            }
            Potential::Mirrored(inner) => inner.eval(-x),
        }
    }

    /// Interval outside of which `|V| < eps·max|V|`.
    ///
    /// Compact variants return their exact support. Cut halves are measured
    /// against the uncut potential. A potential that vanishes identically
    /// returns a degenerate interval (`[0, 0]` for `Zero`, `[cut, cut]` for an
    /// empty half).
    pub fn support(&self, eps: f64) -> (f64, f64) {
        match self {
            Potential::Zero => (0.0, 0.0),
            Potential::RectangularWell { half_width, .. } => (-half_width, *half_width),
            Potential::DoubleGaussian {
                height,
                offset,
                width,
            } => {
                if *height == 0.0 {
                    return (0.0, 0.0);
                }
                // 2·exp(−d²/α²) = eps bounds both tails beyond the outer centre.
                let reach = offset.abs() + width * (2.0 / eps).ln().max(0.0).sqrt();
                (-reach, reach)
            }
            Potential::Tabulated(t) => (t.xs[0], t.xs[t.xs.len() - 1]),
            Potential::LeftPart { inner, cut } => {
                let (lo, hi) = inner.support(eps);
                if *cut < lo {
                    (*cut, *cut)
                } else {
                    (lo, hi.min(*cut))
                }
            }
            Potential::RightPart { inner, cut } => {
                let (lo, hi) = inner.support(eps);
                if *cut > hi {
                    (*cut, *cut)
                } else {
                    (lo.max(*cut), hi)
                }
            }
            Potential::Mirrored(inner) => {
                let (lo, hi) = inner.support(eps);
                (-hi, -lo)
            }
        }
    }

    /// `(LeftPart, RightPart)` of this potential cut at `cut`. Both halves
    /// contain the cut point itself.
    pub fn split(&self, cut: f64) -> (Potential, Potential) {
        (
            Potential::LeftPart {
                inner: Box::new(self.clone()),
                cut,
            },
            Potential::RightPart {
                inner: Box::new(self.clone()),
                cut,
            },
        )
    }

    pub fn mirrored(&self) -> Potential {
        match self {
            Potential::Mirrored(inner) => (**inner).clone(),
            Potential::Zero => Potential::Zero,
            other => Potential::Mirrored(Box::new(other.clone())),
        }
    }

    /// Positions where `V` or its derivative jumps, sorted ascending.
    /// Integration is segmented at these points.
    pub fn discontinuities(&self) -> Vec<f64> {
        let mut points = match self {
            Potential::Zero | Potential::DoubleGaussian { .. } => Vec::new(),
            Potential::RectangularWell { half_width, .. } => vec![-half_width, *half_width],
            Potential::Tabulated(t) => t.xs.clone(),
            Potential::LeftPart { inner, cut } => {
                let mut v: Vec<f64> = inner.discontinuities().into_iter().filter(|x| x < cut).collect();
                v.push(*cut);
                v
            }
            Potential::RightPart { inner, cut } => {
                let mut v: Vec<f64> = inner.discontinuities().into_iter().filter(|x| x > cut).collect();
                v.push(*cut);
                v
            }
            Potential::Mirrored(inner) => inner.discontinuities().into_iter().map(|x| -x).collect(),
        };
        points.sort_by(f64::total_cmp);
        points.dedup();
        points
    }

    /// Lower bound of `V` over its support, used for resolution checks.
    pub fn min_value(&self) -> f64 {
        match self {
            Potential::Zero => 0.0,
            Potential::RectangularWell { depth, .. } => -depth,
            Potential::DoubleGaussian { height, .. } => (2.0 * height).min(0.0),
            Potential::Tabulated(t) => t.vs.iter().copied().fold(0.0, f64::min),
            Potential::LeftPart { inner, .. }
            | Potential::RightPart { inner, .. }
            | Potential::Mirrored(inner) => inner.min_value(),
        }
    }

    /// Upper bound of `V` over its support.
    pub fn max_value(&self) -> f64 {
        match self {
            Potential::Zero => 0.0,
            Potential::RectangularWell { .. } => 0.0,
            Potential::DoubleGaussian { height, .. } => (2.0 * height).max(0.0),
            Potential::Tabulated(t) => t.vs.iter().copied().fold(0.0, f64::max),
            Potential::LeftPart { inner, .. }
            | Potential::RightPart { inner, .. }
            | Potential::Mirrored(inner) => inner.max_value(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fig1_well() -> Potential {
        Potential::rectangular_well(50.0, 20.0).unwrap()
    }

    fn fig2_barrier() -> Potential {
        Potential::double_gaussian(1.0, 7.35, 7.35 / 5.0).unwrap()
    }

    #[test]
    fn rectangular_well_values() {
        let w = fig1_well();
        assert_eq!(w.eval(0.0), -50.0);
        assert_eq!(w.eval(25.0), 0.0);
        assert_eq!(w.eval(20.0), -50.0);
        assert_eq!(w.eval(-20.0), -50.0);
        assert_eq!(w.eval(20.0 + 1e-12), 0.0);
    }

    #[test]
    fn double_gaussian_at_centre() {
        let v = fig2_barrier().eval(7.35);
        let expected = 1.0 + (-(14.7f64 / 1.47).powi(2)).exp();
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn supports() {
        assert_eq!(fig1_well().support(1e-12), (-20.0, 20.0));
        assert_eq!(Potential::Zero.support(0.1), (0.0, 0.0));
        let (lo, hi) = fig2_barrier().support(1e-12);
        let reach = 7.35 + 1.47 * (2.0f64 / 1e-12).ln().sqrt();
        assert!((hi - reach).abs() < 1e-12 && (lo + reach).abs() < 1e-12);
        assert!((hi - 15.1).abs() < 0.1, "hi = {hi}");
        let pot = fig2_barrier();
        let vmax = pot.eval(7.35);
        for x in [hi + 1e-9, hi + 0.5, hi + 3.0, lo - 1e-9, lo - 2.0] {
            assert!(pot.eval(x).abs() < 1e-12 * vmax);
        }
    }

    #[test]
    fn split_rectangular_well() {
        let (left, right) = fig1_well().split(-10.0);
        assert_eq!(left.support(1e-12), (-20.0, -10.0));
        assert_eq!(right.support(1e-12), (-10.0, 20.0));
        assert_eq!(left.eval(-10.0), -50.0);
        assert_eq!(right.eval(-10.0), -50.0);
        assert_eq!(left.eval(-9.0), 0.0);
        assert_eq!(right.eval(-11.0), 0.0);
        assert_eq!(left.discontinuities(), vec![-20.0, -10.0]);
        assert_eq!(right.discontinuities(), vec![-10.0, 20.0]);
    }

    #[test]
    fn split_left_of_support() {
        let pot = fig1_well();
        let (left, right) = pot.split(-21.0);
        for i in 0..=400 {
            let x = -30.0 + 0.15 * i as f64;
            assert_eq!(left.eval(x), 0.0);
            assert_eq!(right.eval(x), pot.eval(x));
        }
        assert_eq!(left.support(1e-12), (-21.0, -21.0));
    }

    #[test]
    fn split_double_gaussian_keeps_tail() {
        let pot = fig2_barrier();
        let (left, right) = pot.split(-8.0);
        assert!(left.eval(-8.0) > 0.0);
        assert_eq!(left.eval(-7.35), 0.0);
        assert_eq!(right.eval(-7.35), pot.eval(-7.35));
        let (lo, hi) = left.support(1e-12);
        assert_eq!(hi, -8.0);
        assert!(lo < -15.0);
    }

    #[test]
    fn wavenumber_examples() {
        let p = PhysicalParams::natural(0.0, 0.5);
        assert_eq!(wavenumber(&p, 123.0).unwrap(), 1.0);
        let p = PhysicalParams::natural(-1.0, 2.135);
        assert!((wavenumber(&p, 1.0).unwrap() - 6.27f64.sqrt()).abs() < 1e-14);
        assert!((wavenumber(&p, 1.0).unwrap() - 2.5040).abs() < 1e-4);
        let p = PhysicalParams::natural(1.0, 0.5);
        assert!(matches!(wavenumber(&p, 1.0), Err(Error::NegativeRadicand { .. })));
    }

    #[test]
    fn wavenumber_keeps_units() {
        let p = PhysicalParams::new(2.0, 0.5, 0.0, 1.0).unwrap();
        assert!((wavenumber(&p, 0.0).unwrap() - (2.0f64 * 2.0).sqrt() / 0.5).abs() < 1e-14);
        assert!(PhysicalParams::new(0.0, 1.0, 0.0, 1.0).is_err());
        assert!(PhysicalParams::new(1.0, -1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn tabulated_parse_and_eval() {
        let t = Tabulated::parse("# header\n0 0\n1 2\n\n3 0\n").unwrap();
        assert_eq!(t.eval(-0.5), 0.0);
        assert_eq!(t.eval(0.5), 1.0);
        assert_eq!(t.eval(1.0), 2.0);
        assert_eq!(t.eval(2.0), 1.0);
        assert_eq!(t.eval(3.0), 0.0);
        assert_eq!(t.eval(3.5), 0.0);
        let pot = Potential::Tabulated(t);
        assert_eq!(pot.support(1e-12), (0.0, 3.0));
        assert_eq!(pot.discontinuities(), vec![0.0, 1.0, 3.0]);
    }

    #[test]
    fn tabulated_rejects_bad_input() {
        assert!(matches!(Tabulated::parse("0 0\n0 1\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(Tabulated::parse("0 0\n-1 1\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(Tabulated::parse("0 NaN\n1 1\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(Tabulated::parse("0 0 0\n"), Err(Error::Parse { line: 1, .. })));
        assert!(Tabulated::parse("0 1\n").is_err());
        assert!(Tabulated::new(vec![0.0, 1.0], vec![0.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn mirror_round_trip() {
        let pot = fig1_well().split(-10.0).0;
        let m = pot.mirrored();
        assert_eq!(m.support(1e-12), (10.0, 20.0));
        assert_eq!(m.discontinuities(), vec![10.0, 20.0]);
        assert_eq!(m.mirrored(), pot);
        assert_eq!(m.eval(15.0), pot.eval(-15.0));
    }

    fn any_potential() -> impl Strategy<Value = Potential> {
        prop_oneof![
            (0.1f64..100.0, 0.1f64..30.0).prop_map(|(d, a)| Potential::rectangular_well(d, a).unwrap()),
            (-2.0f64..2.0, 0.0f64..10.0, 0.1f64..3.0)
                .prop_map(|(h, b, w)| Potential::double_gaussian(h, b, w).unwrap()),
            proptest::collection::vec((0.01f64..2.0, -5.0f64..5.0), 2..20).prop_map(|steps| {
                let mut x = -10.0;
                let (xs, vs) = steps
                    .into_iter()
                    .map(|(dx, v)| {
                        x += dx;
                        (x, v)
                    })
                    .unzip();
                Potential::Tabulated(Tabulated::new(xs, vs).unwrap())
            }),
        ]
    }

    proptest! {
        #[test]
        fn split_halves_sum_to_whole(
            pot in any_potential(),
            cut in -30.0f64..30.0,
            xs in proptest::collection::vec(-40.0f64..40.0, 1000),
        ) {
            let (left, right) = pot.split(cut);
            for x in xs {
                if x == cut { continue; }
                prop_assert_eq!(left.eval(x) + right.eval(x), pot.eval(x));
            }
        }

        #[test]
        fn cut_left_of_support_keeps_right_part(
            pot in any_potential(),
            gap in 0.0f64..5.0,
            xs in proptest::collection::vec(-40.0f64..40.0, 1000),
        ) {
            let (lo, _) = pot.support(SUPPORT_EPS);
            let cut = lo - gap - 1e-9;
            let (_, right) = pot.split(cut);
            let scale = pot.max_value().abs().max(pot.min_value().abs());
            for x in xs {
                if x >= cut {
                    prop_assert_eq!(right.eval(x), pot.eval(x));
                } else {
                    // Only sub-threshold tails are dropped.
                    prop_assert_eq!(right.eval(x), 0.0);
                    prop_assert!(pot.eval(x).abs() <= SUPPORT_EPS * scale);
                }
            }
        }

        #[test]
        fn linear_wavenumber_ignores_density(mu in 0.0f64..100.0, n in 0.0f64..1e3, m in 0.1f64..10.0, hbar in 0.1f64..10.0) {
            let p = PhysicalParams::new(m, hbar, 0.0, mu).unwrap();
            prop_assert_eq!(wavenumber(&p, 0.0).unwrap(), wavenumber(&p, n).unwrap());
        }
    }
}
