//! The acceptance suite behind `holotele verify`.
//!
//! Each check runs a fixed setup. Only the seed, the trial count and the
//! spectral grid and band come from the configuration.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use holotele_core::analysis::{GaussianityAccumulator, GaussianityReport, SpectrumReport, WickLags, IN_BAND_FRACTION};
use holotele_core::kernel::{
    analytic_out_spectrum, green_kernel, noise_commutator_check, verify_classical_noise, KernelModel, KernelPair,
    KernelParams, KernelTable, COMMUTATOR_TOLERANCE,
};
use holotele_core::lattice::SpaceTimeGrid;
use holotele_core::oracle::propagate_exact;
use holotele_core::protocol::{ProtocolParams, TeleportConfig, Teleporter};
use holotele_core::stochastic::{CoherentInputSpec, RngSpec};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::commands::{cmd_alice, cmd_bob, cmd_run, CliError, MemorySink, NullSink, RunOutcome};
use crate::config::{ModelName, RunConfig};
use crate::formats::{FormatError, Location, FRAME_HEADER_LEN};
use crate::runner::fold_trials;

pub const HEISENBERG_TOLERANCE: f64 = 1e-10;
pub const ORACLE_TOLERANCE: f64 = 1e-10;
pub const GREEN_RMS_TOLERANCE: f64 = 0.05;
pub const ZERO_LAG_TOLERANCE: f64 = 0.05;
pub const COARSE_DIAGONAL_TOLERANCE: f64 = 0.2;
pub const WICK_TOLERANCE: f64 = 0.1;
pub const INJECTED_RESIDUAL_MIN: f64 = 1e-3;
pub const ORACLE_Z_FRACTION: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: String,
    pub pass: bool,
    pub detail: String,
    /// Requirements that were not met.
    pub failed: Vec<String>,
    pub metrics: BTreeMap<String, f64>,
    pub error: Option<String>,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        let detail = match &self.error {
            Some(e) => format!("error: {e}"),
            None => self.detail.clone(),
        };
        format!("{verdict} [{:>2}] {}: {detail}", self.id, self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub trials: u64,
    pub criteria: Vec<CriterionResult>,
    pub pass: bool,
}

/// Result being built by one check.
struct Check {
    metrics: BTreeMap<String, f64>,
    parts: Vec<(String, bool)>,
}

impl Check {
    fn new() -> Self {
        Self {
            metrics: BTreeMap::new(),
            parts: Vec::new(),
        }
    }

    fn metric(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.insert(name.into(), value);
    }

    fn require(&mut self, what: impl Into<String>, ok: bool) {
        self.parts.push((what.into(), ok));
    }

    fn finish(self, id: u8, name: &str) -> CriterionResult {
        let pass = !self.parts.is_empty() && self.parts.iter().all(|p| p.1);
        let detail = self
            .parts
            .iter()
            .map(|(w, ok)| format!("{}{w}", if *ok { "" } else { "NOT " }))
            .collect::<Vec<_>>()
            .join("; ");
        let failed = self.parts.iter().filter(|p| !p.1).map(|p| p.0.clone()).collect();
        CriterionResult {
            id,
            name: name.to_string(),
            pass,
            detail,
            failed,
            metrics: self.metrics,
            error: None,
        }
    }
}

fn outcome(id: u8, name: &str, r: Result<Check, CliError>) -> CriterionResult {
    match r {
        Ok(c) => c.finish(id, name),
        Err(e) => CriterionResult {
            id,
            name: name.to_string(),
            pass: false,
            detail: String::new(),
            failed: Vec::new(),
            metrics: BTreeMap::new(),
            error: Some(e.to_string()),
        },
    }
}

/// Inputs shared by all checks.
#[derive(Debug, Clone)]
pub struct VerifySetup {
    pub base: RunConfig,
}

impl VerifySetup {
    pub fn new(cfg: &RunConfig) -> Self {
        Self { base: cfg.clone() }
    }

    fn seed(&self) -> u64 {
        self.base.seed
    }

    fn trials(&self) -> u64 {
        self.base.trials
    }

    /// Base configuration with a flat-band kernel, vacuum input and no
    /// coarse graining.
    fn flat(&self, r0: f64, psi0: f64) -> RunConfig {
        let mut c = self.base.clone();
        c.kernel.model = ModelName::FlatBand;
        c.kernel.table = None;
        c.kernel.r0 = r0;
        c.kernel.psi0 = psi0;
        c.protocol.gain = None;
        c.input.amplitude = [0.0, 0.0];
        c.analysis.green = true;
        c.analysis.coarse_blocks = Some(Vec::new());
        c.analysis.dump_fields = false;
        c
    }

    fn unit_grid(c: &mut RunConfig, [nx, ny, nt]: [usize; 3]) {
        c.grid.nx = nx;
        c.grid.ny = ny;
        c.grid.nt = nt;
        c.grid.dx = 1.0;
        c.grid.dy = 1.0;
        c.grid.dt = 1.0;
    }
}

/// Campaigns reused by several checks.
#[derive(Default)]
pub struct Campaigns {
    classical: Option<Result<RunOutcome, String>>,
    squeezed_1: Option<Result<RunOutcome, String>>,
}

fn run_campaign(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    cmd_run(cfg, &NullSink)
}

fn cached<'a>(slot: &'a mut Option<Result<RunOutcome, String>>, cfg: &RunConfig) -> Result<&'a RunOutcome, CliError> {
    slot.get_or_insert_with(|| run_campaign(cfg).map_err(|e| e.to_string()))
        .as_ref()
        .map_err(|e| CliError::Verification(e.clone()))
}

pub fn heisenberg_identity(setup: &VerifySetup) -> CriterionResult {
    outcome(1, "Heisenberg identity", check_heisenberg(setup))
}

fn check_heisenberg(setup: &VerifySetup) -> Result<Check, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed());
    let mut worst: f64 = 0.0;
    let cases = 100;
    for _ in 0..cases {
        let grid = SpaceTimeGrid::new(
            rng.random_range(1..=6),
            rng.random_range(1..=6),
            rng.random_range(2..=12),
            rng.random_range(0.3..2.0),
            rng.random_range(0.3..2.0),
            rng.random_range(0.3..2.0),
        )?;
        let pixel = grid.dx.max(grid.dy);
        let (r0, q_c, omega_c, psi0) = (
            rng.random_range(0.0..3.0),
            rng.random_range(0.2..1.0) * PI / pixel,
            rng.random_range(0.5..6.0),
            rng.random_range(-PI..PI),
        );
        let kernel = if rng.random_bool(0.5) {
            KernelParams::flat_band(r0, q_c, omega_c, psi0)
        } else {
            KernelParams::gaussian_band(r0, q_c, omega_c, psi0)
        };
        let config = TeleportConfig {
            grid,
            kernel,
            protocol: ProtocolParams::new(rng.random_range(0.3..3.0), rng.random_range(0.5..2.0))?,
            input: CoherentInputSpec {
                amplitude: Complex64::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)),
            },
        };
        let trial = rng.random_range(0..1u64 << 40);
        let rec = Teleporter::new(config)?.run(&RngSpec::new(rng.random(), trial))?;
        let scale = rec.a_out.values.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let residual = rec
            .a_out
            .values
            .iter()
            .zip(&rec.a_in.values)
            .zip(&rec.noise.values)
            .map(|((o, i), f)| (o - i - f).norm())
            .fold(0.0, f64::max);
        worst = worst.max(residual / scale);
    }
    let mut c = Check::new();
    c.metric("cases", cases as f64);
    c.metric("max_relative_residual", worst);
    c.require(
        format!("max |A_out - A_in - F| / max |A_out| = {worst:.2e} < {HEISENBERG_TOLERANCE:e} over {cases} configs"),
        worst < HEISENBERG_TOLERANCE,
    );
    Ok(c)
}

/// Median standard error of the per-bin ratio `out / in`, treating the
/// two spectra as independent.
fn median_ratio_se(input: &SpectrumReport, output: &SpectrumReport) -> f64 {
    let mut se: Vec<f64> = (0..input.estimated.len())
        .map(|i| {
            let (a, b) = (input.estimated[i], output.estimated[i]);
            let (sa, sb) = (input.standard_error[i], output.standard_error[i]);
            (b / a) * ((sa / a).powi(2) + (sb / b).powi(2)).sqrt()
        })
        .collect();
    se.sort_by(f64::total_cmp);
    se[se.len() / 2]
}

pub fn classical_limit(setup: &VerifySetup, campaigns: &mut Campaigns) -> CriterionResult {
    outcome(2, "classical limit", check_classical(setup, campaigns))
}

fn check_classical(setup: &VerifySetup, campaigns: &mut Campaigns) -> Result<Check, CliError> {
    let run = cached(&mut campaigns.classical, &setup.flat(0.0, 0.0))?;
    let s = &run.summary.spectrum;
    let mut c = Check::new();
    let bins = run.spectrum_in.estimated.len();
    let ratio_se = median_ratio_se(&run.spectrum_in, &run.spectrum_out);
    c.metric("bins", bins as f64);
    c.metric("bins_outside_tolerance", s.bins_outside_tolerance as f64);
    c.metric("per_bin_tolerance", s.per_bin_tolerance);
    c.metric("worst_deviation", s.worst_deviation);
    c.metric("median_ratio_se_independent", ratio_se);
    if let Some(a) = &s.in_band {
        c.metric("in_band_ratio", a.ratio);
    }
    if let Some(a) = &s.out_of_band {
        c.metric("out_of_band_ratio", a.ratio);
    }
    c.require(
        format!(
            "every bin within 3 +- {:.3} ({} of {bins} outside, worst |dev| {:.3})",
            s.per_bin_tolerance, s.bins_outside_tolerance, s.worst_deviation
        ),
        s.bins_outside_tolerance == 0,
    );
    Ok(c)
}

pub fn quantum_regime(setup: &VerifySetup) -> CriterionResult {
    outcome(3, "quantum regime", check_quantum(setup))
}

fn check_quantum(setup: &VerifySetup) -> Result<Check, CliError> {
    let run = run_campaign(&setup.flat(2.0, 0.0))?;
    let s = &run.summary.spectrum;
    let mut c = Check::new();
    for (label, agg) in [("in-band", &s.in_band), ("out-of-band", &s.out_of_band)] {
        match agg {
            Some(a) => {
                c.metric(format!("{label} ratio"), a.ratio);
                c.metric(format!("{label} analytic"), a.analytic);
                c.require(
                    format!(
                        "{label} ratio {:.4} within {:.4} +- {:.3}",
                        a.ratio, a.analytic, a.tolerance
                    ),
                    a.pass,
                );
            }
            None => c.require(format!("{label} bins present"), false),
        }
    }
    Ok(c)
}

pub fn green_function(setup: &VerifySetup, campaigns: &mut Campaigns) -> CriterionResult {
    outcome(4, "Green function", check_green(setup, campaigns))
}

fn check_green(setup: &VerifySetup, campaigns: &mut Campaigns) -> Result<Check, CliError> {
    let mut c = Check::new();
    let cfg = setup.flat(1.0, 0.0);
    let band = cfg.kernel_params()?.band();
    let run = cached(&mut campaigns.squeezed_1, &cfg)?;
    let green = run.green.as_ref().expect("campaign estimates G");
    let rms = green.in_band_rms_relative_error(&band, IN_BAND_FRACTION);
    c.metric("in_band_rms_relative_error", rms);
    c.require(
        format!(
            "r0=1 in-band RMS error {:.2}% < {}%",
            100.0 * rms,
            100.0 * GREEN_RMS_TOLERANCE
        ),
        rms < GREEN_RMS_TOLERANCE,
    );

    let run = cached(&mut campaigns.classical, &setup.flat(0.0, 0.0))?;
    let green = run.green.as_ref().expect("campaign estimates G");
    let expected = 1.0 / green.grid.cell_volume();
    let zero = green.zero_lag().re;
    let dev = (zero / expected - 1.0).abs();
    c.metric("r0_zero_lag", zero);
    c.metric("r0_zero_lag_expected", expected);
    c.require(
        format!("r0=0 zero lag {zero:.4} within 5% of {expected:.4}"),
        dev <= ZERO_LAG_TOLERANCE,
    );
    let tally = green.nonzero_lag_tally();
    c.metric("r0_lag_tests", tally.tests as f64);
    c.metric("r0_lag_exceedances", tally.exceed as f64);
    c.require(
        format!(
            "r0=0 other lags consistent with 0 ({} of {} beyond 3 sigma, allowed {})",
            tally.exceed,
            tally.tests,
            tally.allowance()
        ),
        tally.consistent_with_zero(),
    );
    Ok(c)
}

pub fn anticorrelation(setup: &VerifySetup, campaigns: &mut Campaigns) -> CriterionResult {
    outcome(5, "anticorrelation", check_anticorrelation(setup, campaigns))
}

fn check_anticorrelation(setup: &VerifySetup, campaigns: &mut Campaigns) -> Result<Check, CliError> {
    let cfg = setup.flat(1.0, 0.0);
    let params = cfg.kernel_params()?;
    let run = cached(&mut campaigns.squeezed_1, &cfg)?;
    let green = run.green.as_ref().expect("campaign estimates G");
    let g = green.grid;
    let l_c = params.coherence_area().sqrt();
    let radius = [
        (l_c / g.dx).ceil() as i64,
        (l_c / g.dy).ceil() as i64,
        (params.coherence_time() / g.dt).ceil() as i64,
    ];
    let negative = green.significant_negative_lags(radius);
    let min_z = green
        .lags_within(radius)
        .into_iter()
        .map(|l| green.z_scores(l).0)
        .fold(f64::INFINITY, f64::min);
    let mut c = Check::new();
    c.metric("significant_negative_lags", negative.len() as f64);
    c.metric("most_negative_z", min_z);
    c.require(
        format!(
            "{} lags within {radius:?} cells below -3 sigma (most negative z {min_z:.1})",
            negative.len()
        ),
        !negative.is_empty(),
    );
    Ok(c)
}

pub const COARSE_GRID: [usize; 3] = [24, 24, 24];
pub const COARSE_BLOCKS: [usize; 3] = [6, 8, 12];
pub const COARSE_R0: f64 = 1.5;

pub fn coarse_grained_limit(setup: &VerifySetup) -> CriterionResult {
    outcome(6, "coarse-grained limit", check_coarse(setup))
}

fn check_coarse(setup: &VerifySetup) -> Result<Check, CliError> {
    let mut cfg = setup.flat(COARSE_R0, 0.0);
    VerifySetup::unit_grid(&mut cfg, COARSE_GRID);
    cfg.kernel.q_c = PI;
    cfg.kernel.omega_c = PI;
    cfg.analysis.green = false;
    cfg.analysis.coarse_blocks = Some(COARSE_BLOCKS.iter().map(|&b| [b, b, b]).collect());
    let run = run_campaign(&cfg)?;
    let mut c = Check::new();
    let mut previous: Option<(usize, f64, f64, f64)> = None;
    for (report, summary) in run.coarse.iter().zip(&run.summary.coarse) {
        let b = report.block.bx;
        let predicted = summary.predicted_diagonal;
        let worst = report
            .diagonal()
            .iter()
            .map(|d| (d / predicted - 1.0).abs())
            .fold(0.0, f64::max);
        c.metric(format!("block{b}_mean_diagonal"), summary.mean_diagonal);
        c.metric(format!("block{b}_mean_diagonal_se"), summary.mean_diagonal_se);
        c.metric(format!("block{b}_predicted"), predicted);
        c.metric(
            format!("block{b}_off_diagonal_exceedances"),
            summary.off_diagonal_exceedances as f64,
        );
        c.metric(
            format!("block{b}_off_diagonal_allowance"),
            summary.off_diagonal_allowance as f64,
        );
        c.require(
            format!(
                "block {b}: diagonal {:.4} within 20% of windowed {predicted:.4} (worst {:.1}%)",
                summary.mean_diagonal,
                100.0 * worst
            ),
            worst <= COARSE_DIAGONAL_TOLERANCE,
        );
        let tally = report.off_diagonal_tally();
        c.require(
            format!(
                "block {b}: off-diagonals consistent with 0 ({} of {} beyond 3 sigma, allowed {})",
                tally.exceed,
                tally.tests,
                tally.allowance()
            ),
            tally.consistent_with_zero(),
        );
        if let Some((pb, pd, pse, ppred)) = previous {
            let slack = 3.0 * (pse * pse + summary.mean_diagonal_se.powi(2)).sqrt();
            c.require(
                format!("diagonal non-increasing from block {pb} to {b} at 3 sigma"),
                summary.mean_diagonal <= pd + slack,
            );
            c.require(
                format!("windowed prediction decreases from block {pb} to {b}"),
                predicted < ppred,
            );
        }
        previous = Some((b, summary.mean_diagonal, summary.mean_diagonal_se, predicted));
    }
    if let (Some((b, _, _, pred)), Some(s)) = (previous, run.summary.coarse.first()) {
        c.metric("asymptote", s.asymptote);
        c.require(
            format!(
                "block {b} prediction {pred:.4} approaches {:.4} from above",
                s.asymptote
            ),
            pred > s.asymptote,
        );
    }
    Ok(c)
}

/// Kernel whose squeezing depends on the sign of the frequency, so the
/// noise field no longer commutes with itself.
pub fn symmetry_broken_kernel(grid: &SpaceTimeGrid) -> Result<KernelParams, holotele_core::Error> {
    let (u, v) = grid
        .indices()
        .map(|k| {
            let r = 0.8 + 0.3 * grid.frequency(k)[2].tanh();
            (Complex64::new(r.cosh(), 0.0), Complex64::new(r.sinh(), 0.0))
        })
        .unzip();
    let params = KernelParams {
        model: KernelModel::Tabulated(KernelTable {
            dims: grid.dims(),
            spacing: grid.frequency_spacing(),
            u,
            v,
        }),
        r0: 0.0,
        q_c: PI,
        omega_c: PI,
        psi0: 0.0,
    };
    params.validate()?;
    Ok(params)
}

pub fn classical_noise(setup: &VerifySetup) -> CriterionResult {
    outcome(7, "classical-noise commutator", check_commutator(setup))
}

fn check_commutator(setup: &VerifySetup) -> Result<Check, CliError> {
    let grid = setup.base.grid()?;
    let (q_c, omega_c) = (setup.base.kernel.q_c, setup.base.kernel.omega_c);
    let mut shipped = Vec::new();
    for (r0, psi0) in [(1.0, 0.0), (2.0, 0.4), (0.5, -1.1)] {
        shipped.push(KernelParams::flat_band(r0, q_c, omega_c, psi0));
        shipped.push(KernelParams::gaussian_band(r0, q_c, omega_c, psi0));
    }
    if setup.base.kernel.model == ModelName::Tabulated {
        shipped.push(setup.base.kernel_params()?);
    }
    let mut worst: f64 = 0.0;
    let mut all_verified = true;
    for p in &shipped {
        let pair = KernelPair::build(p, &grid)?;
        worst = worst.max(noise_commutator_check(&pair));
        all_verified &= verify_classical_noise(&pair).is_ok();
    }
    let broken = KernelPair::build(&symmetry_broken_kernel(&grid)?, &grid)?;
    let injected = noise_commutator_check(&broken);
    let rejected = verify_classical_noise(&broken).is_err();
    let mut c = Check::new();
    c.metric("shipped_max_residual", worst);
    c.metric("injected_residual", injected);
    c.require(
        format!(
            "{} shipped kernels: residual {worst:.1e} < {COMMUTATOR_TOLERANCE:e}",
            shipped.len()
        ),
        worst < COMMUTATOR_TOLERANCE && all_verified,
    );
    c.require(
        format!("injected kernel: residual {injected:.3} > {INJECTED_RESIDUAL_MIN:e}"),
        injected > INJECTED_RESIDUAL_MIN,
    );
    c.require("injected kernel rejected", rejected);
    Ok(c)
}

pub const GAUSSIANITY_GRID: [usize; 3] = [8, 8, 16];
pub const GAUSSIANITY_TRIAL_FACTOR: u64 = 5;

pub fn gaussianity(setup: &VerifySetup) -> CriterionResult {
    outcome(8, "Gaussianity", check_gaussianity(setup))
}

pub fn gaussianity_campaign(seed: u64, trials: u64) -> Result<GaussianityReport, CliError> {
    let [nx, ny, nt] = GAUSSIANITY_GRID;
    let tele = Teleporter::new(TeleportConfig {
        grid: SpaceTimeGrid::unit(nx, ny, nt)?,
        kernel: KernelParams::flat_band(1.0, PI, PI, PI / 2.0),
        protocol: ProtocolParams::default(),
        input: CoherentInputSpec::vacuum(),
    })?;
    let grid = *tele.grid();
    let checks = [WickLags::intensity([1, 0, 0]), WickLags::squared([1, 0, 0])];
    let acc = fold_trials(
        trials,
        || GaussianityAccumulator::new(grid, &checks),
        |acc, i| -> Result<(), CliError> {
            let (e1, e2) = tele.epr(&RngSpec::new(seed, i))?;
            acc.push(&holotele_core::protocol::noise_field(&e1, &e2)?)?;
            Ok(())
        },
        |a, b| a.merge(&b).expect("accumulators share one grid"),
    )?;
    Ok(acc.finish()?)
}

fn check_gaussianity(setup: &VerifySetup) -> Result<Check, CliError> {
    let trials = GAUSSIANITY_TRIAL_FACTOR * setup.trials();
    let report = gaussianity_campaign(setup.seed(), trials)?;
    let mut c = Check::new();
    c.metric("trials", trials as f64);
    c.metric("zero_lag_ratio", report.zero_lag_ratio);
    c.metric("zero_lag_se", report.zero_lag_se);
    c.metric("circularity_z", report.circularity_z());
    c.require(
        format!("<|F|^4>/(2<|F|^2>^2) = {:.4}", report.zero_lag_ratio),
        (report.zero_lag_ratio - 1.0).abs() <= WICK_TOLERANCE,
    );
    for (w, name) in report.mixed.iter().zip(["intensity", "squared"]) {
        c.metric(format!("{name}_ratio_re"), w.ratio.re);
        c.metric(format!("{name}_ratio_im"), w.ratio.im);
        c.require(
            format!(
                "{name} lags a={:?} b={:?} c={:?}: moment / Wick = {:.4}",
                w.lags.a, w.lags.b, w.lags.c, w.ratio
            ),
            (w.ratio - 1.0).norm() <= WICK_TOLERANCE,
        );
    }
    Ok(c)
}

pub const ORACLE_GRID: [usize; 3] = [4, 4, 8];

pub fn oracle_equivalence(setup: &VerifySetup) -> CriterionResult {
    outcome(9, "oracle equivalence", check_oracle(setup))
}

fn max_relative(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

fn z_fraction(estimate: &[f64], se: &[f64], exact: &[f64]) -> f64 {
    let good = estimate
        .iter()
        .zip(se)
        .zip(exact)
        .filter(|((e, s), x)| ((*e - *x) / *s).abs() < 3.0)
        .count();
    good as f64 / estimate.len() as f64
}

fn check_oracle(setup: &VerifySetup) -> Result<Check, CliError> {
    let [nx, ny, nt] = ORACLE_GRID;
    let grid = SpaceTimeGrid::unit(nx, ny, nt)?;
    let phi = setup.base.analysis.phi;
    let protocol = ProtocolParams::default();
    let input = CoherentInputSpec::vacuum();
    let mut worst: f64 = 0.0;
    for p in [
        KernelParams::flat_band(0.0, PI, PI, 0.0),
        KernelParams::flat_band(0.7, PI, PI, 0.0),
        KernelParams::flat_band(0.7, PI, PI, PI / 3.0),
        KernelParams::flat_band(2.0, 2.0 * PI, PI, 1.2),
        KernelParams::gaussian_band(1.2, PI, 2.0, -0.5),
    ] {
        let pair = KernelPair::build(&p, &grid)?;
        let exact = propagate_exact(&pair, &protocol, &input, phi, None)?;
        let closed = analytic_out_spectrum(&pair, phi, &exact.in_spectrum, protocol.a0)?;
        worst = worst.max(max_relative(&exact.out_spectrum, &closed));
        worst = worst.max(max_relative(&exact.green, &green_kernel(&pair)?.values));
    }
    let mut c = Check::new();
    c.metric("closed_form_max_relative", worst);
    c.require(
        format!("oracle vs closed form {worst:.1e} < {ORACLE_TOLERANCE:e}"),
        worst < ORACLE_TOLERANCE,
    );

    let mut cfg = setup.flat(0.7, PI / 3.0);
    VerifySetup::unit_grid(&mut cfg, ORACLE_GRID);
    cfg.kernel.q_c = PI;
    cfg.kernel.omega_c = PI;
    let pair = KernelPair::build(&cfg.kernel_params()?, &grid)?;
    let exact = propagate_exact(&pair, &protocol, &input, phi, None)?;
    let run = run_campaign(&cfg)?;
    let green = run.green.as_ref().expect("campaign estimates G");
    for (name, est, se, x) in [
        (
            "in",
            &run.spectrum_in.estimated,
            &run.spectrum_in.standard_error,
            &exact.in_spectrum,
        ),
        (
            "out",
            &run.spectrum_out.estimated,
            &run.spectrum_out.standard_error,
            &exact.out_spectrum,
        ),
        ("green", &green.spectrum, &green.spectrum_se, &exact.green),
    ] {
        let f = z_fraction(est, se, x);
        c.metric(format!("{name}_fraction_within_3se"), f);
        c.require(
            format!("MC {name} spectrum within 3 SE of oracle in {:.1}% of bins", 100.0 * f),
            f >= ORACLE_Z_FRACTION,
        );
    }
    Ok(c)
}

pub const PIPELINE_TRIALS: u64 = 24;

pub fn pipeline_equivalence(setup: &VerifySetup) -> CriterionResult {
    outcome(10, "pipeline equivalence", check_pipeline(setup))
}

fn check_pipeline(setup: &VerifySetup) -> Result<Check, CliError> {
    let mut cfg = setup.flat(1.0, 0.0);
    VerifySetup::unit_grid(&mut cfg, ORACLE_GRID);
    cfg.kernel.q_c = PI;
    cfg.kernel.omega_c = PI;
    cfg.trials = PIPELINE_TRIALS;
    cfg.analysis.dump_fields = true;
    let run_sink = MemorySink::new();
    cmd_run(&cfg, &run_sink)?;
    let run_files = run_sink.into_files();

    let mut stream = Vec::new();
    cmd_alice(&cfg, &mut stream)?;
    let bob_sink = MemorySink::new();
    cmd_bob(&cfg, stream.as_slice(), &bob_sink)?;
    let bob_files = bob_sink.into_files();

    let mut c = Check::new();
    let identical = bob_files.iter().filter(|(k, v)| run_files.get(*k) == Some(*v)).count();
    c.metric("bob_files", bob_files.len() as f64);
    c.metric("identical_files", identical as f64);
    c.require(
        format!(
            "{identical} of {} files from alice | bob identical to run",
            bob_files.len()
        ),
        identical == bob_files.len() && bob_files.len() as u64 > PIPELINE_TRIALS,
    );

    let frame_len = (FRAME_HEADER_LEN + 8 * cfg.grid()?.len()) as u64;
    let mut bad = stream.clone();
    bad[frame_len as usize..frame_len as usize + 4].copy_from_slice(b"XXXX");
    let err = cmd_bob(&cfg, bad.as_slice(), &NullSink).err();
    c.require(
        format!("corrupted magic of frame 1 rejected at byte {frame_len}"),
        matches!(
            &err,
            Some(CliError::Format(FormatError::BadMagic { at, .. }))
                if *at == Location { frame: Some(1), offset: frame_len }
        ),
    );

    let cut = &stream[..stream.len() - 10];
    let err = cmd_bob(&cfg, cut, &NullSink).err();
    c.require(
        "truncated stream reported as EOF in the last frame",
        matches!(
            &err,
            Some(CliError::Format(FormatError::UnexpectedEof { at, missing: 10, .. }))
                if at.frame == Some(PIPELINE_TRIALS - 1)
        ),
    );

    let short = &stream[..stream.len() - frame_len as usize];
    let err = cmd_bob(&cfg, short, &NullSink).err();
    c.require(
        "missing frame reported as a count mismatch",
        matches!(
            &err,
            Some(CliError::Format(FormatError::FrameCount { expected, found }))
                if *expected == PIPELINE_TRIALS && *found == PIPELINE_TRIALS - 1
        ),
    );
    Ok(c)
}

/// Runs every check in order.
pub fn cmd_verify(cfg: &RunConfig) -> VerifyReport {
    cmd_verify_with(cfg, |r| log::info!("{}", r.line()))
}

/// As [`cmd_verify`], calling `progress` after each check.
pub fn cmd_verify_with(cfg: &RunConfig, mut progress: impl FnMut(&CriterionResult)) -> VerifyReport {
    let setup = VerifySetup::new(cfg);
    let mut campaigns = Campaigns::default();
    let mut criteria = Vec::new();
    let mut record = |r: CriterionResult| {
        progress(&r);
        criteria.push(r);
    };
    record(heisenberg_identity(&setup));
    record(classical_limit(&setup, &mut campaigns));
    record(quantum_regime(&setup));
    record(green_function(&setup, &mut campaigns));
    record(anticorrelation(&setup, &mut campaigns));
    record(coarse_grained_limit(&setup));
    record(classical_noise(&setup));
    record(gaussianity(&setup));
    record(oracle_equivalence(&setup));
    record(pipeline_equivalence(&setup));
    let pass = criteria.iter().all(|c| c.pass);
    VerifyReport {
        seed: cfg.seed,
        trials: cfg.trials,
        criteria,
        pass,
    }
}
