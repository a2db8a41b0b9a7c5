//! The teleportation chain: EPR beams, Alice's homodyne detection, the
//! classical channel and Bob's reconstruction.

use alloc::vec::Vec;
use core::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::kernel::{KernelPair, KernelParams, Opa};
use crate::lattice::{Domain, FieldState, LatticeFft, Role, SpaceTimeGrid};
use crate::stochastic::{
    apply_squeezing, sample_coherent_input, sample_vacuum, CoherentInputSpec, RngSpec, StreamLabel,
};

/// Local-oscillator amplitudes and Bob's modulation gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolParams {
    /// Alice's local oscillator.
    pub b0: f64,
    /// Coupling of the photocurrents into Bob's modulator.
    pub g: f64,
    /// Victor's local oscillator.
    pub a0: f64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            b0: 1.0,
            g: FRAC_1_SQRT_2,
            a0: 1.0,
        }
    }
}

impl ProtocolParams {
    /// Parameters satisfying the unit-gain condition `g B0 sqrt(2) = 1`.
    pub fn new(b0: f64, a0: f64) -> Result<Self> {
        let p = Self {
            b0,
            g: FRAC_1_SQRT_2 / b0,
            a0,
        };
        p.validate()?;
        Ok(p)
    }

    /// Replaces the gain, e.g. for gain-mismatch runs.
    pub fn with_gain(mut self, g: f64) -> Result<Self> {
        self.g = g;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.b0) || !ok(self.a0) {
            return Err(Error::InvalidParameter(alloc::format!(
                "oscillator amplitudes must be positive and finite, got B0 = {}, A0 = {}",
                self.b0,
                self.a0
            )));
        }
        if !self.g.is_finite() {
            return Err(Error::InvalidParameter(alloc::format!(
                "gain must be finite, got {}",
                self.g
            )));
        }
        Ok(())
    }

    /// `g B0 sqrt(2)`; one at unit gain.
    pub fn gain(&self) -> f64 {
        self.g * self.b0 * core::f64::consts::SQRT_2
    }
}

/// The symmetric beam splitter `(1/sqrt 2) [[1, 1], [-1, 1]]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BeamSplitter;

impl BeamSplitter {
    pub const MATRIX: [[f64; 2]; 2] = [[FRAC_1_SQRT_2, FRAC_1_SQRT_2], [-FRAC_1_SQRT_2, FRAC_1_SQRT_2]];

    pub fn mix(&self, a: Complex64, b: Complex64) -> (Complex64, Complex64) {
        let m = Self::MATRIX;
        (a * m[0][0] + b * m[0][1], a * m[1][0] + b * m[1][1])
    }

    pub fn determinant(&self) -> f64 {
        let m = Self::MATRIX;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    /// Largest entry of `M M^T - I`.
    pub fn unitarity_residual(&self) -> f64 {
        let m = Self::MATRIX;
        let mut worst = 0.0f64;
        for i in 0..2 {
            for j in 0..2 {
                let dot = m[i][0] * m[j][0] + m[i][1] * m[j][1];
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - want).abs());
            }
        }
        worst
    }

    fn mix_fields(&self, a: &FieldState, b: &FieldState, roles: (Role, Role)) -> Result<(FieldState, FieldState)> {
        a.grid.ensure_same(&b.grid, "beam splitter inputs")?;
        if a.domain != b.domain {
            return Err(Error::WrongDomain {
                expected: a.domain,
                found: b.domain,
            });
        }
        let (c, d): (Vec<_>, Vec<_>) = a.values.iter().zip(&b.values).map(|(&x, &y)| self.mix(x, y)).unzip();
        Ok((
            FieldState::new(a.grid, a.domain, roles.0, c)?,
            FieldState::new(a.grid, a.domain, roles.1, d)?,
        ))
    }
}

/// Per-pixel photocurrents of one trial, as sent from Alice to Bob.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotocurrentFrame {
    pub grid: SpaceTimeGrid,
    pub trial_index: u64,
    /// Local-oscillator amplitude the currents were measured with.
    pub b0: f64,
    pub i_x: Vec<f64>,
    pub i_p: Vec<f64>,
}

impl PhotocurrentFrame {
    pub fn new(grid: SpaceTimeGrid, trial_index: u64, b0: f64, i_x: Vec<f64>, i_p: Vec<f64>) -> Result<Self> {
        for arr in [&i_x, &i_p] {
            if arr.len() != grid.len() {
                return Err(Error::ShapeMismatch {
                    expected: grid.len(),
                    found: arr.len(),
                });
            }
            if let Some(pos) = arr.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(alloc::format!(
                    "photocurrent at {} is not finite",
                    grid.unflat(pos)
                )));
            }
        }
        Ok(Self {
            grid,
            trial_index,
            b0,
            i_x,
            i_p,
        })
    }

    /// The frame as it looks after a round trip through 32-bit floats.
    pub fn quantized(&self) -> Self {
        let q = |v: &Vec<f64>| v.iter().map(|&x| x as f32 as f64).collect();
        Self {
            i_x: q(&self.i_x),
            i_p: q(&self.i_p),
            ..self.clone()
        }
    }
}

/// `E1 = (S1 + S2)/sqrt 2`, `E2 = (-S1 + S2)/sqrt 2`.
pub fn make_epr(s1: &FieldState, s2: &FieldState) -> Result<(FieldState, FieldState)> {
    BeamSplitter.mix_fields(s1, s2, (Role::Epr1, Role::Epr2))
}

/// Fields at Alice's two homodyne detectors.
pub fn alice_fields(a_in: &FieldState, e1: &FieldState) -> Result<(FieldState, FieldState)> {
    a_in.expect_domain(Domain::Position)?;
    e1.expect_domain(Domain::Position)?;
    BeamSplitter.mix_fields(a_in, e1, (Role::Bx, Role::Bp))
}

/// Mixes the input with `E1` and records `i_x = 2 B0 Re B_x`,
/// `i_p = 2 B0 Im B_p` at every pixel.
pub fn alice_stage(
    a_in: &FieldState,
    e1: &FieldState,
    p: &ProtocolParams,
    trial_index: u64,
) -> Result<PhotocurrentFrame> {
    let (bx, bp) = alice_fields(a_in, e1)?;
    let i_x = bx.values.iter().map(|b| 2.0 * p.b0 * b.re).collect();
    let i_p = bp.values.iter().map(|b| 2.0 * p.b0 * b.im).collect();
    PhotocurrentFrame::new(a_in.grid, trial_index, p.b0, i_x, i_p)
}

/// `A_out = E2 + g (i_x - i i_p)`.
pub fn bob_stage(frame: &PhotocurrentFrame, e2: &FieldState, p: &ProtocolParams) -> Result<FieldState> {
    e2.expect_domain(Domain::Position)?;
    e2.grid.ensure_same(&frame.grid, "photocurrent frame and EPR beam")?;
    let values = e2
        .values
        .iter()
        .zip(frame.i_x.iter().zip(&frame.i_p))
        .map(|(&e, (&x, &y))| e + Complex64::new(x, -y) * p.g)
        .collect();
    FieldState::new(e2.grid, Domain::Position, Role::AOut, values)
}

/// `F = E2 + E1*`.
pub fn noise_field(e1: &FieldState, e2: &FieldState) -> Result<FieldState> {
    e1.grid.ensure_same(&e2.grid, "EPR beams")?;
    e1.expect_domain(Domain::Position)?;
    e2.expect_domain(Domain::Position)?;
    let values = e1.values.iter().zip(&e2.values).map(|(a, b)| b + a.conj()).collect();
    FieldState::new(e1.grid, Domain::Position, Role::Noise, values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeleportConfig {
    pub grid: SpaceTimeGrid,
    pub kernel: KernelParams,
    pub protocol: ProtocolParams,
    pub input: CoherentInputSpec,
}

/// Every field of one trial, in the position domain.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial_index: u64,
    pub a_in: FieldState,
    pub a_out: FieldState,
    pub frame: PhotocurrentFrame,
    pub noise: FieldState,
    pub e1: FieldState,
    pub e2: FieldState,
}

/// A configured chain with kernels and transform plans built once.
#[derive(Debug, Clone)]
pub struct Teleporter {
    config: TeleportConfig,
    pair: KernelPair,
    fft: LatticeFft,
}

impl Teleporter {
    pub fn new(config: TeleportConfig) -> Result<Self> {
        config.protocol.validate()?;
        config.input.validate()?;
        let pair = KernelPair::build(&config.kernel, &config.grid)?;
        let cells = config.kernel.coherence_area() / (config.grid.dx * config.grid.dy);
        if cells < 4.0 {
            log::warn!("coherence area spans only {cells:.2} pixels; pixels should be much smaller");
        }
        Ok(Self {
            fft: LatticeFft::new(config.grid),
            config,
            pair,
        })
    }

    pub fn config(&self) -> &TeleportConfig {
        &self.config
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.config.grid
    }

    pub fn kernels(&self) -> &KernelPair {
        &self.pair
    }

    pub fn fft(&self) -> &LatticeFft {
        &self.fft
    }

    fn squeezed(&self, rng: &RngSpec, opa: Opa) -> Result<FieldState> {
        let kernel = match opa {
            Opa::First => &self.pair.first,
            Opa::Second => &self.pair.second,
        };
        let vac = sample_vacuum(&self.config.grid, rng, StreamLabel::for_opa(opa));
        self.fft.inverse(&apply_squeezing(&vac, kernel)?)
    }

    /// Both EPR beams of a trial.
    pub fn epr(&self, rng: &RngSpec) -> Result<(FieldState, FieldState)> {
        make_epr(&self.squeezed(rng, Opa::First)?, &self.squeezed(rng, Opa::Second)?)
    }

    /// Input field of a trial.
    pub fn input(&self, rng: &RngSpec) -> Result<FieldState> {
        self.fft
            .inverse(&sample_coherent_input(&self.config.grid, &self.config.input, rng))
    }

    /// Alice's side of a trial.
    pub fn alice(&self, rng: &RngSpec) -> Result<PhotocurrentFrame> {
        let (e1, _) = self.epr(rng)?;
        alice_stage(&self.input(rng)?, &e1, &self.config.protocol, rng.trial_index)
    }

    /// Bob's side: regenerates `E2` for the frame's trial and reconstructs
    /// the output.
    pub fn bob(&self, frame: &PhotocurrentFrame, master_seed: u64) -> Result<FieldState> {
        let (_, e2) = self.epr(&RngSpec::new(master_seed, frame.trial_index))?;
        bob_stage(frame, &e2, &self.config.protocol)
    }

    pub fn run(&self, rng: &RngSpec) -> Result<TrialRecord> {
        let (e1, e2) = self.epr(rng)?;
        let a_in = self.input(rng)?;
        let frame = alice_stage(&a_in, &e1, &self.config.protocol, rng.trial_index)?;
        let a_out = bob_stage(&frame, &e2, &self.config.protocol)?;
        let noise = noise_field(&e1, &e2)?;
        Ok(TrialRecord {
            trial_index: rng.trial_index,
            a_in,
            a_out,
            frame,
            noise,
            e1,
            e2,
        })
    }
}

/// One full trial from scratch.
pub fn run_teleport(config: &TeleportConfig, rng: &RngSpec) -> Result<TrialRecord> {
    Teleporter::new(config.clone())?.run(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use core::f64::consts::PI;

    fn field(grid: SpaceTimeGrid, role: Role, f: impl Fn(usize) -> Complex64) -> FieldState {
        FieldState::new(grid, Domain::Position, role, (0..grid.len()).map(f).collect()).unwrap()
    }

    fn config(r0: f64, psi0: f64, amp: Complex64) -> TeleportConfig {
        let grid = SpaceTimeGrid::unit(4, 4, 8).unwrap();
        TeleportConfig {
            grid,
            kernel: KernelParams::flat_band(r0, PI, PI, psi0),
            protocol: ProtocolParams::default(),
            input: CoherentInputSpec { amplitude: amp },
        }
    }

    fn max_rel_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
        let scale = b.iter().fold(1.0f64, |m, v| m.max(v.norm()));
        a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).norm())) / scale
    }

    #[test]
    fn gain_condition_is_enforced_unless_overridden() {
        let p = ProtocolParams::new(2.0, 1.0).unwrap();
        assert!((p.gain() - 1.0).abs() < 1e-15);
        assert!((ProtocolParams::default().gain() - 1.0).abs() < 1e-15);
        let q = p.with_gain(2.0 * p.g).unwrap();
        assert!((q.gain() - 2.0).abs() < 1e-15);
        assert!(ProtocolParams::new(0.0, 1.0).is_err());
        assert!(ProtocolParams::new(1.0, -1.0).is_err());
        assert!(p.with_gain(f64::NAN).is_err());
    }

    #[test]
    fn beam_splitter_is_unitary_with_unit_determinant() {
        assert!(BeamSplitter.unitarity_residual() < 1e-15);
        assert!((BeamSplitter.determinant() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn epr_mixing_examples() {
        let g = SpaceTimeGrid::unit(2, 2, 2).unwrap();
        let f = field(g, Role::Squeezed1, |i| Complex64::new(i as f64, 1.0 - i as f64));
        let (e1, e2) = make_epr(&f, &f.clone().with_role(Role::Squeezed2)).unwrap();
        for i in 0..g.len() {
            assert!((e1.values[i] - f.values[i] * 2f64.sqrt()).norm() < 1e-14);
            assert_eq!(e2.values[i], Complex64::new(0.0, 0.0));
        }
        let zero = FieldState::zeros(g, Domain::Position, Role::Squeezed2);
        let (e1, e2) = make_epr(&f, &zero).unwrap();
        for i in 0..g.len() {
            assert!((e1.values[i] - f.values[i] * FRAC_1_SQRT_2).norm() < 1e-15);
            assert!((e2.values[i] + f.values[i] * FRAC_1_SQRT_2).norm() < 1e-15);
        }
        assert_eq!((e1.role, e2.role), (Role::Epr1, Role::Epr2));
    }

    #[test]
    fn epr_mixing_conserves_power() {
        let g = SpaceTimeGrid::unit(3, 2, 5).unwrap();
        let s1 = field(g, Role::Squeezed1, |i| {
            Complex64::new((i as f64).sin(), (i as f64 * 0.3).cos())
        });
        let s2 = field(g, Role::Squeezed2, |i| {
            Complex64::new((i as f64 * 1.7).cos(), -(i as f64))
        });
        let (e1, e2) = make_epr(&s1, &s2).unwrap();
        let p = |f: &FieldState| f.values.iter().map(|v| v.norm_sqr()).sum::<f64>();
        let before = p(&s1) + p(&s2);
        assert!(((p(&e1) + p(&e2)) - before).abs() < 1e-12 * before);
    }

    #[test]
    fn mixing_rejects_mismatched_inputs() {
        let g = SpaceTimeGrid::unit(2, 2, 2).unwrap();
        let h = SpaceTimeGrid::unit(2, 2, 4).unwrap();
        let a = FieldState::zeros(g, Domain::Position, Role::Squeezed1);
        let b = FieldState::zeros(h, Domain::Position, Role::Squeezed2);
        assert!(matches!(make_epr(&a, &b), Err(Error::GridMismatch(_))));
        let c = FieldState::zeros(g, Domain::Fourier, Role::Squeezed2);
        assert!(matches!(make_epr(&a, &c), Err(Error::WrongDomain { .. })));
        let frame = PhotocurrentFrame::new(g, 0, 1.0, vec![0.0; 8], vec![0.0; 8]).unwrap();
        let e2 = FieldState::zeros(h, Domain::Position, Role::Epr2);
        assert!(bob_stage(&frame, &e2, &ProtocolParams::default()).is_err());
        assert!(noise_field(&a, &b).is_err());
    }

    #[test]
    fn alice_stage_examples() {
        let g = SpaceTimeGrid::unit(2, 1, 3).unwrap();
        let p = ProtocolParams::new(1.5, 1.0).unwrap();
        let zero = FieldState::zeros(g, Domain::Position, Role::AIn);
        let frame = alice_stage(&zero, &zero, &p, 4).unwrap();
        assert!(frame.i_x.iter().chain(&frame.i_p).all(|&v| v == 0.0));
        assert_eq!(frame.trial_index, 4);

        let c = Complex64::new(0.8, -0.3);
        let a = field(g, Role::AIn, |_| c);
        let frame = alice_stage(&a, &zero, &p, 0).unwrap();
        for (&x, &y) in frame.i_x.iter().zip(&frame.i_p) {
            assert!((x - 2f64.sqrt() * p.b0 * c.re).abs() < 1e-14);
            assert!((y + 2f64.sqrt() * p.b0 * c.im).abs() < 1e-14);
        }
    }

    #[test]
    fn bob_stage_examples() {
        let g = SpaceTimeGrid::unit(2, 2, 2).unwrap();
        let e2 = field(g, Role::Epr2, |i| Complex64::new(i as f64, 2.0));
        let frame = PhotocurrentFrame::new(g, 0, 1.0, vec![0.0; 8], vec![0.0; 8]).unwrap();
        let out = bob_stage(&frame, &e2, &ProtocolParams::default()).unwrap();
        assert_eq!(out.values, e2.values);
        assert_eq!(out.role, Role::AOut);
    }

    #[test]
    fn chain_reproduces_input_plus_noise_per_sample() {
        let cfg = config(1.2, 0.4, Complex64::new(3.0, -1.0));
        let tp = Teleporter::new(cfg).unwrap();
        for t in 0..5 {
            let rec = tp.run(&RngSpec::new(11, t)).unwrap();
            let want: Vec<_> = (0..rec.a_in.values.len())
                .map(|i| rec.a_in.values[i] + rec.e2.values[i] + rec.e1.values[i].conj())
                .collect();
            assert!(max_rel_diff(&rec.a_out.values, &want) < 1e-10);
            let diff: Vec<_> = rec
                .a_out
                .values
                .iter()
                .zip(&rec.a_in.values)
                .map(|(o, i)| o - i)
                .collect();
            assert!(max_rel_diff(&diff, &rec.noise.values) < 1e-10);
        }
    }

    #[test]
    fn doubled_gain_doubles_the_classical_part() {
        let mut cfg = config(0.7, 0.0, Complex64::new(1.0, 0.5));
        cfg.protocol = cfg.protocol.with_gain(2.0 * cfg.protocol.g).unwrap();
        let rec = run_teleport(&cfg, &RngSpec::new(2, 0)).unwrap();
        let want: Vec<_> = (0..rec.a_in.values.len())
            .map(|i| rec.e2.values[i] + (rec.a_in.values[i] + rec.e1.values[i].conj()) * 2.0)
            .collect();
        assert!(max_rel_diff(&rec.a_out.values, &want) < 1e-10);
    }

    #[test]
    fn chain_is_linear_in_the_samples() {
        let g = SpaceTimeGrid::unit(2, 2, 4).unwrap();
        let p = ProtocolParams::default();
        let a = field(g, Role::AIn, |i| Complex64::new(1.0 + i as f64, 0.5));
        let e1 = field(g, Role::Epr1, |i| Complex64::new(-(i as f64), 0.25 * i as f64));
        let e2 = field(g, Role::Epr2, |i| Complex64::new(0.1, (i as f64).sin()));
        let out = |s: f64| {
            let sc = |f: &FieldState| field(g, f.role, |i| f.values[i] * s);
            bob_stage(&alice_stage(&sc(&a), &sc(&e1), &p, 0).unwrap(), &sc(&e2), &p).unwrap()
        };
        let (one, three) = (out(1.0), out(3.0));
        let scaled: Vec<_> = one.values.iter().map(|v| v * 3.0).collect();
        assert!(max_rel_diff(&three.values, &scaled) < 1e-14);
    }

    #[test]
    fn split_stages_match_the_full_run() {
        let tp = Teleporter::new(config(0.9, 0.2, Complex64::new(0.5, 0.0))).unwrap();
        let rng = RngSpec::new(8, 6);
        let rec = tp.run(&rng).unwrap();
        let frame = tp.alice(&rng).unwrap();
        assert_eq!(frame, rec.frame);
        assert_eq!(tp.bob(&frame, 8).unwrap(), rec.a_out);
        assert_eq!(run_teleport(tp.config(), &rng).unwrap(), rec);
    }

    #[test]
    fn quantized_frame_is_f32_exact() {
        let g = SpaceTimeGrid::unit(1, 1, 2).unwrap();
        let f = PhotocurrentFrame::new(g, 0, 1.0, vec![0.1, 1.0 / 3.0], vec![-2.5, 1e-9]).unwrap();
        let q = f.quantized();
        assert_eq!(q.i_x[0], 0.1f32 as f64);
        assert_eq!(q.i_p[0], -2.5);
        assert_eq!(q.quantized(), q);
        assert!(PhotocurrentFrame::new(g, 0, 1.0, vec![0.0], vec![0.0, 0.0]).is_err());
        assert!(PhotocurrentFrame::new(g, 0, 1.0, vec![f64::NAN, 0.0], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn vacuum_noise_per_pixel_is_delta_normalized() {
        // r = 0: E2 + E1* has <|F|^2> = 1/dV and i_x has variance B0^2/dV.
        let grid = SpaceTimeGrid::new(4, 4, 8, 0.5, 1.0, 0.5).unwrap();
        let cfg = TeleportConfig {
            grid,
            kernel: KernelParams::flat_band(0.0, PI, PI, 0.0),
            protocol: ProtocolParams::default(),
            input: CoherentInputSpec::vacuum(),
        };
        let tp = Teleporter::new(cfg).unwrap();
        let trials = 400;
        let (mut f2, mut ix2) = (0.0, 0.0);
        for t in 0..trials {
            let rec = tp.run(&RngSpec::new(13, t)).unwrap();
            f2 += rec.noise.values.iter().map(|v| v.norm_sqr()).sum::<f64>();
            ix2 += rec.frame.i_x.iter().map(|v| v * v).sum::<f64>();
        }
        let n = (trials as usize * grid.len()) as f64;
        let dv = grid.cell_volume();
        assert!((f2 / n * dv - 1.0).abs() < 0.03);
        assert!((ix2 / n * dv - 1.0).abs() < 0.03);
    }

    #[test]
    fn strong_squeezing_cancels_in_band_noise() {
        let cfg = config(6.0, 0.0, Complex64::new(0.0, 0.0));
        let tp = Teleporter::new(cfg).unwrap();
        let mask = tp.kernels().band().mask(tp.grid(), 1.0);
        let rec = tp.run(&RngSpec::new(1, 0)).unwrap();
        let f = tp.fft().forward(&rec.noise).unwrap();
        let vol = tp.grid().total_volume();
        let inband: f64 = f
            .values
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| v.norm_sqr() / vol)
            .sum();
        let count = mask.iter().filter(|&&m| m).count() as f64;
        // in-band G = e^{-12}
        assert!(inband / count < 1e-3);
    }
}
