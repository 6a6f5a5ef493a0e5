//! Command-line front end: TOML run configuration, flag overrides, the six
//! commands and their CSV output.
//!
//! Every CSV starts with a `# config-hash: <sha256>` line computed over the
//! effective configuration (after overrides), followed by a header row.
//! Floats are written with 17 significant digits so identical configurations
//! give byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::integrator::IntegratorConfig;
use crate::linref::{potential_matrix, rect_well_transmission};
use crate::model::{PhysicalParams, Potential, Tabulated, SUPPORT_EPS};
use crate::resonance::{find_resonance, split_check, Outcome, Pairing, ResonanceOptions, SplitReport};
use crate::scatter::{conjugation_check, solve_scattering, solve_scattering_sampled, source_strength, Direction, ScatterProblem};
use crate::tdse::{stationary_seed, steady_state_observed, Convergence, LayoutOptions, Propagator, TdSetup};

fn segmented_transmission(pot: &Potential, e: f64, p: PhysicalParams, o: &OracleSpec) -> Result<f64> {
    let fine = potential_matrix(pot, e, p.mass, p.hbar, o.segments)?.transmission();
    if !o.extrapolate || o.segments < 4 {
        return Ok(fine);
    }
    let coarse = potential_matrix(pot, e, p.mass, p.hbar, o.segments / 2)?.transmission();
    Ok((4.0 * fine - coarse) / 3.0)
}

/// Exit status for configuration and usage errors.
pub const EXIT_CONFIG: u8 = 2;
/// Exit status for computational failures.
pub const EXIT_COMPUTE: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PotentialSpec {
    Zero,
    RectangularWell { depth: f64, half_width: f64 },
    DoubleGaussian { height: f64, offset: f64, width: f64 },
    /// Two-column `x V` file, relative paths resolved against the config.
    Tabulated { path: PathBuf },
}

impl PotentialSpec {
    /// Builds the potential. A well of depth zero is the zero potential.
    pub fn build(&self, base: &Path) -> Result<Potential> {
        match self {
            PotentialSpec::Zero => Ok(Potential::Zero),
            PotentialSpec::RectangularWell { depth, half_width } if *depth == 0.0 && *half_width > 0.0 => Ok(Potential::Zero),
            PotentialSpec::RectangularWell { depth, half_width } => Potential::rectangular_well(*depth, *half_width),
            PotentialSpec::DoubleGaussian { height, offset, width } => Potential::double_gaussian(*height, *offset, *width),
            PotentialSpec::Tabulated { path } => {
                let full = if path.is_absolute() { path.clone() } else { base.join(path) };
                Ok(Potential::Tabulated(Tabulated::from_path(full)?))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionSpec {
    LeftToRight,
    RightToLeft,
}

impl From<DirectionSpec> for Direction {
    fn from(d: DirectionSpec) -> Self {
        match d {
            DirectionSpec::LeftToRight => Direction::LeftToRight,
            DirectionSpec::RightToLeft => Direction::RightToLeft,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PairingSpec {
    Crossed,
    SameDirection,
}

impl From<PairingSpec> for Pairing {
    fn from(p: PairingSpec) -> Self {
        match p {
            PairingSpec::Crossed => Pairing::Crossed,
            PairingSpec::SameDirection => Pairing::SameDirection,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamsSpec {
    pub mass: f64,
    pub hbar: f64,
    pub g: f64,
    /// Single chemical potential for resonance-free commands.
    pub mu: Option<f64>,
    /// `[lo, hi]` for sweeps.
    pub mu_range: Option<[f64; 2]>,
    /// Outgoing amplitude `C` as `[re, im]`.
    pub amplitude: [f64; 2],
    pub direction: DirectionSpec,
}

impl Default for ParamsSpec {
    fn default() -> Self {
        Self {
            mass: 1.0,
            hbar: 1.0,
            g: 0.0,
            mu: None,
            mu_range: None,
            amplitude: [1.0, 0.0],
            direction: DirectionSpec::LeftToRight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorSpec {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub min_step: f64,
    pub max_steps: usize,
}

impl Default for IntegratorSpec {
    fn default() -> Self {
        let c = IntegratorConfig::default();
        Self {
            rel_tol: c.rel_tol,
            abs_tol: c.abs_tol,
            max_step: c.max_step,
            min_step: c.min_step,
            max_steps: c.max_steps,
        }
    }
}

impl From<&IntegratorSpec> for IntegratorConfig {
    fn from(s: &IntegratorSpec) -> Self {
        IntegratorConfig {
            rel_tol: s.rel_tol,
            abs_tol: s.abs_tol,
            max_step: s.max_step,
            min_step: s.min_step,
            max_steps: s.max_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub points: usize,
    /// Smallest fraction of successful points for exit status 0.
    pub min_ok_fraction: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            points: 500,
            min_ok_fraction: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResonanceSpec {
    /// Search interval; defaults to `params.mu_range`.
    pub bracket: Option<[f64; 2]>,
    pub coarse_points: usize,
    pub tol_mu: f64,
    pub tol_t: f64,
}

impl Default for ResonanceSpec {
    fn default() -> Self {
        let o = ResonanceOptions::default();
        Self {
            bracket: None,
            coarse_points: o.coarse_points,
            tol_mu: o.tol_mu,
            tol_t: o.tol_t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub cuts: Vec<f64>,
    /// Additional cuts drawn uniformly inside the support using `--seed`.
    pub random_cuts: usize,
    pub pairing: PairingSpec,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            cuts: Vec::new(),
            random_cuts: 0,
            pairing: PairingSpec::Crossed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WavefunctionSpec {
    pub samples: usize,
    /// Also integrate the reversed problem from the conjugated upstream
    /// state and write it next to `ψ`.
    pub conjugate: bool,
}

impl Default for WavefunctionSpec {
    fn default() -> Self {
        Self {
            samples: 1000,
            conjugate: false,
        }
    }
}

/// Initial field of a time-dependent run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartSpec {
    /// Stationary solution for the configured `C`; the source drives the
    /// matching incoming wave from the first step.
    Stationary,
    /// Empty domain with the source ramped up.
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropagateSpec {
    pub start: StartSpec,
    /// Incoming amplitude `|A|` for an empty start. Without it the
    /// stationary solve for `C` supplies `A`.
    pub source_amplitude: Option<f64>,
    pub dx_k: f64,
    /// Time step; chosen from the local energy scale when absent.
    pub dt: Option<f64>,
    /// Phase per step for the automatic time step.
    pub step_phase: f64,
    /// Distance from source to potential; one wavelength when absent.
    pub source_gap: Option<f64>,
    pub probe_len: f64,
    pub absorber_width: Option<f64>,
    pub absorber_strength: Option<f64>,
    pub window: f64,
    pub tol: f64,
    pub t_max: f64,
    /// Time between snapshot files; none when absent.
    pub snapshot_every: Option<f64>,
}

impl Default for PropagateSpec {
    fn default() -> Self {
        let l = LayoutOptions::default();
        let c = Convergence::default();
        Self {
            start: StartSpec::Stationary,
            source_amplitude: None,
            dx_k: l.dx_k,
            dt: l.dt,
            step_phase: l.step_phase,
            source_gap: l.source_gap,
            probe_len: l.probe_len,
            absorber_width: None,
            absorber_strength: None,
            window: c.window,
            tol: c.tol,
            t_max: c.t_max,
            snapshot_every: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSpec {
    pub energies: usize,
    /// Energies are `e_max·i/energies` for `i = 1..=energies`.
    pub e_max: f64,
    /// Piecewise-constant segments for potentials without a closed form.
    pub segments: usize,
    /// Combine `segments` and `segments/2` to cancel the leading h² error.
    pub extrapolate: bool,
}

impl Default for OracleSpec {
    fn default() -> Self {
        Self {
            energies: 100,
            e_max: 10.0,
            segments: 4096,
            extrapolate: true,
        }
    }
}

/// Complete description of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub potential: PotentialSpec,
    #[serde(default)]
    pub params: ParamsSpec,
    #[serde(default)]
    pub integrator: IntegratorSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub resonance: ResonanceSpec,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub wavefunction: WavefunctionSpec,
    #[serde(default)]
    pub propagate: PropagateSpec,
    #[serde(default)]
    pub linear_oracle: OracleSpec,
    /// Output path; stdout when absent.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Invalid(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable as TOML")
    }

    /// SHA-256 of the canonical TOML form, in hex.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .fold(String::new(), |mut s, b| {
                let _ = write!(s, "{b:02x}");
                s
            })
    }

    /// Checks everything that does not depend on the command.
    pub fn validate(&self, base: &Path) -> Result<()> {
        self.potential.build(base)?;
        self.physical(0.0).validate()?;
        IntegratorConfig::from(&self.integrator).validate()?;
        if let Some([lo, hi]) = self.params.mu_range {
            if !(lo < hi) {
                return Err(Error::Invalid(format!("mu_range [{lo}, {hi}] must be increasing")));
            }
        }
        if let Some([lo, hi]) = self.resonance.bracket {
            if !(lo < hi) {
                return Err(Error::Invalid(format!("resonance bracket [{lo}, {hi}] must be increasing")));
            }
        }
        if self.params.amplitude.iter().any(|v| !v.is_finite()) || self.amplitude().norm() == 0.0 {
            return Err(Error::Invalid("amplitude must be finite and non-zero".into()));
        }
        if self.sweep.points < 2 {
            return Err(Error::Invalid("sweep.points must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.sweep.min_ok_fraction) {
            return Err(Error::Invalid("sweep.min_ok_fraction must lie in [0, 1]".into()));
        }
        if self.propagate.source_amplitude.is_some() && self.propagate.start != StartSpec::Empty {
            return Err(Error::Invalid("propagate.source_amplitude needs start = \"empty\"".into()));
        }
        if self.wavefunction.samples < 2 {
            return Err(Error::Invalid("wavefunction.samples must be at least 2".into()));
        }
        if self.linear_oracle.energies == 0 || !(self.linear_oracle.e_max > 0.0) || self.linear_oracle.segments == 0 {
            return Err(Error::Invalid("linear_oracle needs energies > 0, e_max > 0 and segments > 0".into()));
        }
        Ok(())
    }

    pub fn amplitude(&self) -> Complex64 {
        Complex64::new(self.params.amplitude[0], self.params.amplitude[1])
    }

    fn physical(&self, mu: f64) -> PhysicalParams {
        PhysicalParams {
            mass: self.params.mass,
            hbar: self.params.hbar,
            g: self.params.g,
            mu,
        }
    }

    fn mu(&self) -> Result<f64> {
        self.params
            .mu
            .ok_or_else(|| Error::Invalid("this command needs params.mu (or --mu)".into()))
    }

    fn mu_range(&self) -> Result<[f64; 2]> {
        self.params
            .mu_range
            .ok_or_else(|| Error::Invalid("this command needs params.mu_range (or --mu-range)".into()))
    }
}

#[derive(Debug, Parser)]
#[command(name = "nlsescat", version, about = "Fixed-output transmission through barriers for the 1D nonlinear Schrödinger equation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Subcommand, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Transmission over a uniform mu grid (CSV: mu,T2,status).
    Sweep,
    /// Locate a unit-transmission resonance (prints mu_res=<value>).
    Resonance,
    /// Transmissions of the split potential halves at one mu.
    SplitCheck,
    /// Sampled stationary wavefunction.
    Wavefunction,
    /// Time-dependent run with a point source; prints T2_td=<value>.
    Propagate,
    /// Integrator against transfer-matrix transmissions at g = 0.
    LinearOracle,
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file (default: config `output`, else stdout).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for sweeps.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for randomized cut positions.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub g: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub mu: Option<f64>,
    /// Sweep interval as LO,HI.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub mu_range: Option<Vec<f64>>,
    /// Resonance bracket as LO,HI.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub bracket: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub points: Option<usize>,
    /// Cut positions (replaces the configured list).
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    pub cut: Option<Vec<f64>>,
    #[arg(long, global = true, value_enum)]
    pub direction: Option<DirectionSpec>,
}

impl CommonArgs {
    /// Applies flag overrides; flags win over the file.
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        for (name, v) in [("--mu-range", &self.mu_range), ("--bracket", &self.bracket)] {
            if v.as_ref().is_some_and(|v| v.len() != 2) {
                return Err(Error::Invalid(format!("{name} takes exactly two values LO,HI")));
            }
        }
        if let Some(g) = self.g {
            cfg.params.g = g;
        }
        if let Some(mu) = self.mu {
            cfg.params.mu = Some(mu);
        }
        if let Some(r) = &self.mu_range {
            cfg.params.mu_range = Some([r[0], r[1]]);
        }
        if let Some(b) = &self.bracket {
            cfg.resonance.bracket = Some([b[0], b[1]]);
        }
        if let Some(n) = self.points {
            cfg.sweep.points = n;
        }
        if let Some(c) = &self.cut {
            cfg.split.cuts = c.clone();
        }
        if let Some(d) = self.direction {
            cfg.params.direction = d;
        }
        if let Some(o) = &self.out {
            cfg.output = Some(o.clone());
        }
        Ok(())
    }
}

/// Failure of a command, carrying its exit status.
#[derive(Debug)]
pub struct Failure {
    pub status: u8,
    pub message: String,
}

impl Failure {
    fn config(e: impl std::fmt::Display) -> Self {
        Self {
            status: EXIT_CONFIG,
            message: e.to_string(),
        }
    }

    fn compute(e: impl std::fmt::Display) -> Self {
        Self {
            status: EXIT_COMPUTE,
            message: e.to_string(),
        }
    }
}

fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_outcome(o: Outcome) -> String {
    match o {
        Ok(v) => fmt_f(v),
        Err(_) => String::new(),
    }
}

fn status_of(o: Outcome) -> &'static str {
    match o {
        Ok(_) => "ok",
        Err(c) => c.as_str(),
    }
}

/// Loaded configuration plus the directory relative paths refer to.
pub struct Loaded {
    pub config: RunConfig,
    pub base: PathBuf,
    pub seed: u64,
}

/// Reads the config file (or the default), applies overrides and validates.
pub fn load(common: &CommonArgs) -> std::result::Result<Loaded, Failure> {
    let (mut config, base) = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
            let cfg = RunConfig::parse(&text).map_err(Failure::config)?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (cfg, base)
        }
        None => (
            RunConfig {
                potential: PotentialSpec::Zero,
                params: ParamsSpec::default(),
                integrator: IntegratorSpec::default(),
                sweep: SweepSpec::default(),
                resonance: ResonanceSpec::default(),
                split: SplitSpec::default(),
                wavefunction: WavefunctionSpec::default(),
                propagate: PropagateSpec::default(),
                linear_oracle: OracleSpec::default(),
                output: None,
            },
            PathBuf::new(),
        ),
    };
    common.apply(&mut config).map_err(Failure::config)?;
    config.validate(&base).map_err(Failure::config)?;
    Ok(Loaded {
        config,
        base,
        seed: common.seed,
    })
}

/// Text produced by a command and whether it counts as success.
pub struct Report {
    pub body: String,
    /// Extra files written besides the main output.
    pub files: Vec<PathBuf>,
    pub ok: bool,
    /// Short reason when `ok` is false.
    pub reason: Option<String>,
}

impl Report {
    fn ok(body: String) -> Self {
        Self {
            body,
            files: Vec::new(),
            ok: true,
            reason: None,
        }
    }
}

fn header(cfg: &RunConfig, columns: &str) -> String {
    format!("# config-hash: {}\n{columns}\n", cfg.hash())
}

/// Runs `command` on a loaded configuration, returning its output text.
pub fn execute(command: Command, loaded: &Loaded) -> std::result::Result<Report, Failure> {
    let cfg = &loaded.config;
    let pot = cfg.potential.build(&loaded.base).map_err(Failure::config)?;
    let icfg = IntegratorConfig::from(&cfg.integrator);
    let c = cfg.amplitude();
    let dir: Direction = cfg.params.direction.into();
    match command {
        Command::Sweep => {
            let [lo, hi] = cfg.mu_range().map_err(Failure::config)?;
            let curve = crate::resonance::sweep(&pot, &cfg.physical(lo), lo, hi, cfg.sweep.points, c, dir, &icfg).map_err(Failure::config)?;
            let mut body = header(cfg, "mu,T2,status");
            for p in &curve.points {
                let _ = writeln!(body, "{},{},{}", fmt_f(p.mu), fmt_outcome(p.transmission), status_of(p.transmission));
            }
            let frac = curve.ok_fraction();
            let ok = frac >= cfg.sweep.min_ok_fraction;
            Ok(Report {
                body,
                files: Vec::new(),
                ok,
                reason: (!ok).then(|| format!("only {:.1}% of sweep points succeeded", 100.0 * frac)),
            })
        }
        Command::Resonance => {
            let res = locate(cfg, &pot, &icfg).map_err(Failure::compute)?;
            let mut body = String::new();
            let _ = writeln!(body, "# config-hash: {}", cfg.hash());
            let _ = writeln!(body, "# resonance: T2 = {}, reflection = {:e}, solves = {}", fmt_f(res.transmission), res.reflection, res.evaluations);
            let _ = writeln!(body, "mu_res={}", fmt_f(res.mu));
            Ok(Report::ok(body))
        }
        Command::SplitCheck => {
            let mu = match cfg.params.mu {
                Some(mu) => mu,
                None => locate(cfg, &pot, &icfg).map_err(Failure::compute)?.mu,
            };
            let mut cuts = cfg.split.cuts.clone();
            if cfg.split.random_cuts > 0 {
                let (lo, hi) = pot.support(SUPPORT_EPS);
                if !(hi > lo) {
                    return Err(Failure::config("random cuts need a potential with non-empty support"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(loaded.seed);
                cuts.extend((0..cfg.split.random_cuts).map(|_| rng.random_range(lo..hi)));
            }
            if cuts.is_empty() {
                return Err(Failure::config("split-check needs at least one cut (split.cuts or --cut)"));
            }
            let params = cfg.physical(mu);
            let reports: Vec<SplitReport> = cuts.iter().map(|&x| split_check(&pot, &params, x, c, &icfg)).collect();
            let mut body = header(cfg, "cut,mu,T2_full_LR,T2_full_RL,T2_L_LR,T2_L_RL,T2_R_LR,T2_R_RL,r1,r2,status");
            let mut failed = 0;
            for r in &reports {
                let fields = [r.full_lr, r.full_rl, r.left_lr, r.left_rl, r.right_lr, r.right_rl];
                let bad = fields.iter().filter_map(|f| f.err()).next();
                failed += usize::from(bad.is_some());
                // Residuals are recomputed from the written columns.
                let check = |a: Outcome, b: Outcome, v: Option<f64>| match (a, b, v) {
                    (Ok(a), Ok(b), Some(v)) => ((a - b).abs() - v).abs() == 0.0,
                    (_, _, None) => true,
                    _ => false,
                };
                assert!(check(r.right_lr, r.left_rl, r.r1) && check(r.left_lr, r.right_rl, r.r2));
                let opt = |v: Option<f64>| v.map(fmt_f).unwrap_or_default();
                let _ = writeln!(
                    body,
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    fmt_f(r.cut),
                    fmt_f(r.mu),
                    fmt_outcome(r.full_lr),
                    fmt_outcome(r.full_rl),
                    fmt_outcome(r.left_lr),
                    fmt_outcome(r.left_rl),
                    fmt_outcome(r.right_lr),
                    fmt_outcome(r.right_rl),
                    opt(r.r1),
                    opt(r.r2),
                    bad.map_or("ok", |c| c.as_str()),
                );
            }
            Ok(Report {
                body,
                files: Vec::new(),
                ok: failed == 0,
                reason: (failed > 0).then(|| format!("{failed} cut(s) had failed solves")),
            })
        }
        Command::Wavefunction => {
            let mu = cfg.mu().map_err(Failure::config)?;
            let problem = ScatterProblem::new(pot.clone(), cfg.physical(mu), c, dir).map_err(Failure::compute)?;
            let n = cfg.wavefunction.samples;
            let params = cfg.physical(mu);
            let mut body;
            if cfg.wavefunction.conjugate {
                let chk = conjugation_check(&problem, &icfg, n).map_err(Failure::compute)?;
                body = header(cfg, "x,re_psi,im_psi,density,current,re_chi,im_chi");
                let wf = chk.forward.wavefunction.as_deref().unwrap_or_default();
                for (s, x) in wf.iter().zip(&chk.reverse) {
                    let _ = writeln!(
                        body,
                        "{},{},{},{},{},{},{}",
                        fmt_f(s.x),
                        fmt_f(s.psi.re),
                        fmt_f(s.psi.im),
                        fmt_f(s.density()),
                        fmt_f(s.current(&params)),
                        fmt_f(x.psi.re),
                        fmt_f(x.psi.im)
                    );
                }
            } else {
                let res = solve_scattering_sampled(&problem, &icfg, n).map_err(Failure::compute)?;
                body = header(cfg, "x,re_psi,im_psi,density,current");
                for s in res.wavefunction.as_deref().unwrap_or_default() {
                    let _ = writeln!(
                        body,
                        "{},{},{},{},{}",
                        fmt_f(s.x),
                        fmt_f(s.psi.re),
                        fmt_f(s.psi.im),
                        fmt_f(s.density()),
                        fmt_f(s.current(&params))
                    );
                }
            }
            Ok(Report::ok(body))
        }
        Command::Propagate => run_propagate(cfg, &pot, &icfg),
        Command::LinearOracle => {
            let o = &cfg.linear_oracle;
            let params = cfg.physical(0.0).with_g(0.0);
            let mut body = header(cfg, "E,T2_ode,T2_transfer,abs_diff,status");
            let mut failed = 0;
            for i in 1..=o.energies {
                let e = o.e_max * i as f64 / o.energies as f64;
                let p = params.with_mu(e);
                let ode = ScatterProblem::new(pot.clone(), p, c, Direction::LeftToRight).and_then(|pr| solve_scattering(&pr, &icfg));
                let tm = match &pot {
                    Potential::RectangularWell { depth, half_width } => rect_well_transmission(e, *depth, *half_width, p.mass, p.hbar),
                    _ => segmented_transmission(&pot, e, p, o),
                };
                match (ode, tm) {
                    (Ok(r), Ok(t)) => {
                        let _ = writeln!(body, "{},{},{},{},ok", fmt_f(e), fmt_f(r.transmission), fmt_f(t), fmt_f((r.transmission - t).abs()));
                    }
                    (a, b) => {
                        failed += 1;
                        let code = a.err().or(b.err()).map(|e| e.code().as_str()).unwrap_or("error");
                        let _ = writeln!(body, "{},,,,{code}", fmt_f(e));
                    }
                }
            }
            Ok(Report {
                body,
                files: Vec::new(),
                ok: failed == 0,
                reason: (failed > 0).then(|| format!("{failed} energies failed")),
            })
        }
    }
}

fn locate(cfg: &RunConfig, pot: &Potential, icfg: &IntegratorConfig) -> Result<crate::resonance::Resonance> {
    let [lo, hi] = cfg.resonance.bracket.or(cfg.params.mu_range).ok_or_else(|| {
        Error::Invalid("resonance search needs resonance.bracket, params.mu_range or --bracket".into())
    })?;
    let opts = ResonanceOptions {
        coarse_points: cfg.resonance.coarse_points,
        tol_mu: cfg.resonance.tol_mu,
        tol_t: cfg.resonance.tol_t,
    };
    find_resonance(pot, &cfg.physical(lo), (lo, hi), cfg.amplitude(), &opts, icfg)
}

fn snapshot_path(out: Option<&Path>, index: usize) -> PathBuf {
    let stem = out.map(|p| p.with_extension("")).unwrap_or_else(|| PathBuf::from("propagate"));
    let name = format!("{}_snap_{index:04}.csv", stem.file_name().map(|s| s.to_string_lossy()).unwrap_or_default());
    stem.with_file_name(name)
}

fn run_propagate(cfg: &RunConfig, pot: &Potential, icfg: &IntegratorConfig) -> std::result::Result<Report, Failure> {
    let mu = cfg.mu().map_err(Failure::config)?;
    let params = cfg.physical(mu);
    let ps = &cfg.propagate;
    let c = cfg.amplitude();
    let layout = LayoutOptions {
        dx_k: ps.dx_k,
        dt: ps.dt,
        step_phase: ps.step_phase,
        source_gap: ps.source_gap,
        probe_len: ps.probe_len,
        absorber_width: ps.absorber_width,
        absorber_strength: ps.absorber_strength,
        ..LayoutOptions::default()
    };
    let n_in = match ps.source_amplitude {
        Some(a) if a.is_finite() && a >= 0.0 => a * a,
        Some(a) => return Err(Failure::config(format!("propagate.source_amplitude must be non-negative, got {a}"))),
        None => c.norm_sqr(),
    };
    let setup = TdSetup::auto(pot, &params, n_in.max(c.norm_sqr()), &layout).map_err(Failure::config)?;
    let (f0, initial, stationary) = match (ps.start, ps.source_amplitude) {
        (StartSpec::Empty, Some(a)) => {
            let k = crate::model::wavenumber(&params, a * a).map_err(Failure::compute)?;
            let amp = Complex64::from_polar(a, k * setup.x0);
            (source_strength(amp, &params).map_err(Failure::compute)?, None, None)
        }
        (start, _) => {
            let seed = stationary_seed(pot, &params, c, &setup, icfg).map_err(Failure::compute)?;
            let t = seed.stationary.transmission;
            let field = (start == StartSpec::Stationary).then_some(seed.field);
            (seed.f0, field, Some(t))
        }
    };
    let conv = Convergence {
        window: ps.window,
        tol: ps.tol,
        t_max: ps.t_max,
        ..Convergence::default()
    };
    let mut files = Vec::new();
    let mut write_err = None;
    let mut next_snap = 0.0;
    let out = cfg.output.clone();
    let mut observer = |prop: &Propagator| {
        let Some(every) = ps.snapshot_every else { return };
        if prop.time() + 1e-9 < next_snap || write_err.is_some() {
            return;
        }
        while next_snap <= prop.time() + 1e-9 {
            next_snap += every;
        }
        let path = snapshot_path(out.as_deref(), files.len());
        let g = prop.grid();
        let mut text = header(cfg, "x,re_psi,im_psi,density");
        let _ = writeln!(text, "# t = {}", fmt_f(prop.time()));
        for (j, z) in prop.lab_field().iter().enumerate() {
            let _ = writeln!(text, "{},{},{},{}", fmt_f(g.x(j)), fmt_f(z.re), fmt_f(z.im), fmt_f(z.norm_sqr()));
        }
        match fs::write(&path, text) {
            Ok(()) => files.push(path),
            Err(e) => write_err = Some(format!("{}: {e}", path.display())),
        }
    };
    let result = if f0.norm() == 0.0 {
        None
    } else {
        Some(steady_state_observed(pot, &params, f0, &setup, &conv, initial.as_deref(), &mut observer))
    };
    if let Some(e) = write_err {
        return Err(Failure::compute(e));
    }
    let mut body = String::new();
    let _ = writeln!(body, "# config-hash: {}", cfg.hash());
    let _ = writeln!(
        body,
        "# grid: n = {}, dx = {:e}, dt = {:e}, source at x = {}",
        setup.grid.n,
        setup.grid.dx(),
        setup.grid.dt,
        setup.x0
    );
    if let Some(t) = stationary {
        let _ = writeln!(body, "T2_stationary={}", fmt_f(t));
    }
    match result {
        None => {
            let _ = writeln!(body, "# zero source: the field stays zero");
            let _ = writeln!(body, "T2_td=0");
            Ok(Report { body, files, ok: true, reason: None })
        }
        Some(Ok(ss)) => {
            let _ = writeln!(body, "# steady state at t = {}", fmt_f(ss.t));
            let _ = writeln!(body, "T2_td={}", fmt_f(ss.transmission));
            Ok(Report { body, files, ok: true, reason: None })
        }
        Some(Err(e)) => {
            let _ = writeln!(body, "# {e}");
            Ok(Report {
                body,
                files,
                ok: false,
                reason: Some(e.to_string()),
            })
        }
    }
}

fn emit(cfg: &RunConfig, body: &str) -> std::io::Result<()> {
    match &cfg.output {
        Some(path) => fs::write(path, body),
        None => match std::io::stdout().lock().write_all(body.as_bytes()) {
            // A closed reader (`| head`) is not a failure of the run.
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
            r => r,
        },
    }
}

/// Parses `args`, runs the command and maps the outcome to an exit code.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    if let Some(n) = cli.common.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(EXIT_CONFIG);
        }
        // Fails only if a pool already exists, which is harmless here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let outcome = load(&cli.common).and_then(|loaded| {
        let report = execute(cli.command, &loaded)?;
        emit(&loaded.config, &report.body).map_err(Failure::compute)?;
        match report.reason {
            Some(reason) if !report.ok => Err(Failure::compute(reason)),
            _ => Ok(()),
        }
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.status)
        }
    }
}
