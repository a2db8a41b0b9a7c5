//! Fourier-domain squeezing kernels of the two amplifiers and the closed-form
//! quantities derived from them.
//!
//! A kernel maps vacuum modes to squeezed ones,
//! `s(q, W) = U(q, W) a(q, W) + V(q, W) a*(-q, -W)`. The parametric models
//! use `U = cosh r`, `V = +-exp(2 i psi0) sinh r`; the sign of `V` is `+` for
//! the first amplifier and `-` for the second, which puts the two squeezing
//! ellipses at right angles.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lattice::{LatticeIndex, SpaceTimeGrid};

/// Allowed `||U|^2 - |V|^2 - 1|` for tabulated input, relative to `|U|^2 + |V|^2`.
pub const TABLE_CANONICAL_TOLERANCE: f64 = 1e-6;

/// Allowed deviation from `U1 = U2, V1 = -V2`, relative to `1 + |U| + |V|`.
pub const PAIR_SYMMETRY_TOLERANCE: f64 = 1e-9;

/// U and V arrays over the frequency lattice, in lattice index order.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    pub dims: [usize; 3],
    /// `(dq_x, dq_y, dOmega)`
    pub spacing: [f64; 3],
    pub u: Vec<Complex64>,
    pub v: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelModel {
    /// `r = r0` inside `|q| <= q_c/2, |W| <= W_c/2`, zero outside.
    FlatBand,
    /// `r = r0 exp(-(2q/q_c)^2 - (2W/W_c)^2)`.
    GaussianBand,
    /// Kernel of the first amplifier read from a table.
    Tabulated(KernelTable),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams {
    pub model: KernelModel,
    pub r0: f64,
    /// Spatial cutoff, radians per length.
    pub q_c: f64,
    /// Temporal cutoff, radians per time.
    pub omega_c: f64,
    pub psi0: f64,
}

impl KernelParams {
    pub fn flat_band(r0: f64, q_c: f64, omega_c: f64, psi0: f64) -> Self {
        Self {
            model: KernelModel::FlatBand,
            r0,
            q_c,
            omega_c,
            psi0,
        }
    }

    pub fn gaussian_band(r0: f64, q_c: f64, omega_c: f64, psi0: f64) -> Self {
        Self {
            model: KernelModel::GaussianBand,
            ..Self::flat_band(r0, q_c, omega_c, psi0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r0.is_finite() && self.r0 >= 0.0) {
            return Err(Error::InvalidParameter(format!("r0 must be >= 0, got {}", self.r0)));
        }
        if !(self.q_c.is_finite() && self.q_c > 0.0) {
            return Err(Error::InvalidParameter(format!("q_c must be > 0, got {}", self.q_c)));
        }
        if !(self.omega_c.is_finite() && self.omega_c > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "omega_c must be > 0, got {}",
                self.omega_c
            )));
        }
        if !self.psi0.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "psi0 must be finite, got {}",
                self.psi0
            )));
        }
        Ok(())
    }

    pub fn band(&self) -> Band {
        Band {
            q_c: self.q_c,
            omega_c: self.omega_c,
        }
    }

    /// `S_c = (2 pi / q_c)^2`
    pub fn coherence_area(&self) -> f64 {
        self.band().coherence_area()
    }

    /// `T_c = 2 pi / W_c`
    pub fn coherence_time(&self) -> f64 {
        self.band().coherence_time()
    }

    /// Squeezing degree of the parametric models at transverse wavenumber
    /// `|q|` and frequency `omega`. Zero for tabulated kernels.
    pub fn profile(&self, q_norm: f64, omega: f64) -> f64 {
        match self.model {
            KernelModel::FlatBand => {
                if self.band().contains(q_norm, omega, 1.0) {
                    self.r0
                } else {
                    0.0
                }
            }
            KernelModel::GaussianBand => {
                let a = 2.0 * q_norm / self.q_c;
                let b = 2.0 * omega / self.omega_c;
                self.r0 * (-(a * a) - b * b).exp()
            }
            KernelModel::Tabulated(_) => 0.0,
        }
    }
}

/// Spatio-temporal band of effective squeezing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub q_c: f64,
    pub omega_c: f64,
}

impl Band {
    pub fn coherence_area(&self) -> f64 {
        let l = 2.0 * PI / self.q_c;
        l * l
    }

    pub fn coherence_time(&self) -> f64 {
        2.0 * PI / self.omega_c
    }

    /// `|q| <= f q_c / 2` and `|W| <= f W_c / 2`, `|q|` being the Euclidean
    /// norm of the transverse wavevector.
    pub fn contains(&self, q_norm: f64, omega: f64, fraction: f64) -> bool {
        q_norm <= fraction * self.q_c / 2.0 && omega.abs() <= fraction * self.omega_c / 2.0
    }

    /// Band membership of every Fourier bin of `grid`.
    pub fn mask(&self, grid: &SpaceTimeGrid, fraction: f64) -> Vec<bool> {
        grid.indices()
            .map(|k| {
                let [qx, qy, w] = grid.frequency(k);
                self.contains(qx.hypot(qy), w, fraction)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Opa {
    First,
    Second,
}

impl Opa {
    /// Sign multiplying `V` for this amplifier.
    pub fn v_sign(self) -> f64 {
        match self {
            Opa::First => 1.0,
            Opa::Second => -1.0,
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Opa::First => 1,
            Opa::Second => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SqueezingKernel {
    pub grid: SpaceTimeGrid,
    pub opa: Opa,
    pub band: Band,
    pub u: Vec<Complex64>,
    pub v: Vec<Complex64>,
}

pub fn build_kernel(params: &KernelParams, grid: &SpaceTimeGrid, opa: Opa) -> Result<SqueezingKernel> {
    params.validate()?;
    let sign = opa.v_sign();
    let (u, v) = match &params.model {
        KernelModel::FlatBand | KernelModel::GaussianBand => {
            let orient = Complex64::from_polar(1.0, 2.0 * params.psi0);
            grid.indices()
                .map(|k| {
                    let [qx, qy, w] = grid.frequency(k);
                    let r = params.profile(qx.hypot(qy), w);
                    (Complex64::new(r.cosh(), 0.0), orient * (sign * r.sinh()))
                })
                .unzip()
        }
        KernelModel::Tabulated(table) => {
            check_table_layout(table, grid)?;
            let v = table.v.iter().map(|v| v * sign).collect();
            (table.u.clone(), v)
        }
    };
    let kernel = SqueezingKernel {
        grid: *grid,
        opa,
        band: params.band(),
        u,
        v,
    };
    if let KernelModel::Tabulated(_) = params.model {
        kernel.check_canonical(TABLE_CANONICAL_TOLERANCE)?;
    }
    Ok(kernel)
}

fn check_table_layout(table: &KernelTable, grid: &SpaceTimeGrid) -> Result<()> {
    if table.dims != grid.dims() {
        return Err(Error::GridMismatch("kernel table dimensions differ from the grid"));
    }
    if table.u.len() != grid.len() || table.v.len() != grid.len() {
        return Err(Error::ShapeMismatch {
            expected: grid.len(),
            found: table.u.len().min(table.v.len()),
        });
    }
    for (got, want) in table.spacing.iter().zip(grid.frequency_spacing()) {
        if (got - want).abs() > 1e-9 * want {
            return Err(Error::GridMismatch(
                "kernel table spacing differs from the grid's frequency lattice",
            ));
        }
    }
    Ok(())
}

impl SqueezingKernel {
    /// Kernel from explicit arrays. Only the canonical identity is checked.
    pub fn from_arrays(
        grid: SpaceTimeGrid,
        opa: Opa,
        band: Band,
        u: Vec<Complex64>,
        v: Vec<Complex64>,
    ) -> Result<Self> {
        if u.len() != grid.len() || v.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: grid.len(),
                found: u.len().min(v.len()),
            });
        }
        let kernel = Self { grid, opa, band, u, v };
        kernel.check_canonical(TABLE_CANONICAL_TOLERANCE)?;
        Ok(kernel)
    }

    /// Largest `||U|^2 - |V|^2 - 1|` and where it occurs.
    pub fn canonical_residual(&self) -> (f64, LatticeIndex) {
        let (flat, res) = self
            .u
            .iter()
            .zip(&self.v)
            .map(|(u, v)| (u.norm_sqr() - v.norm_sqr() - 1.0).abs())
            .enumerate()
            .fold((0, 0.0), |best, (i, r)| if r > best.1 { (i, r) } else { best });
        (res, self.grid.unflat(flat))
    }

    fn check_canonical(&self, tolerance: f64) -> Result<()> {
        let mut worst: Option<(usize, f64, f64)> = None;
        for (i, (u, v)) in self.u.iter().zip(&self.v).enumerate() {
            let scale = (u.norm_sqr() + v.norm_sqr()).max(1.0);
            let residual = (u.norm_sqr() - v.norm_sqr() - 1.0).abs();
            let excess = residual / scale;
            if (excess.is_nan() || excess > tolerance) && worst.is_none_or(|w| excess > w.2) {
                worst = Some((i, residual, excess));
            }
        }
        match worst {
            None => Ok(()),
            Some((i, residual, _)) => Err(Error::CanonicalIdentity {
                index: self.grid.unflat(i),
                residual,
            }),
        }
    }

    /// `r = ln(|U| + |V|)`
    pub fn squeezing_degree(&self, idx: LatticeIndex) -> f64 {
        let i = self.grid.flat(idx);
        (self.u[i].norm() + self.v[i].norm()).ln()
    }

    /// `psi = arg{U(q, W) V(-q, -W)} / 2`, in `(-pi/2, pi/2]`.
    pub fn orientation_angle(&self, idx: LatticeIndex) -> Result<f64> {
        let i = self.grid.flat(idx);
        let j = self.grid.flat(self.grid.conjugate_mode_index(idx));
        if self.v[j].norm() == 0.0 {
            return Err(Error::UndefinedOrientation { index: idx });
        }
        Ok(half_arg(self.u[i] * self.v[j]))
    }
}

fn half_arg(z: Complex64) -> f64 {
    let psi = 0.5 * z.arg();
    if psi <= -FRAC_PI_2 {
        psi + PI
    } else {
        psi
    }
}

/// Kernels of the two amplifiers on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelPair {
    pub first: SqueezingKernel,
    pub second: SqueezingKernel,
}

impl KernelPair {
    pub fn build(params: &KernelParams, grid: &SpaceTimeGrid) -> Result<Self> {
        Ok(Self {
            first: build_kernel(params, grid, Opa::First)?,
            second: build_kernel(params, grid, Opa::Second)?,
        })
    }

    /// Pair from two arbitrary kernels; type-II symmetry is not enforced.
    pub fn new(first: SqueezingKernel, second: SqueezingKernel) -> Result<Self> {
        first.grid.ensure_same(&second.grid, "kernels of a pair")?;
        Ok(Self { first, second })
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.first.grid
    }

    pub fn band(&self) -> Band {
        self.first.band
    }

    /// Largest deviation from `U1 = U2, V1 = -V2` relative to the kernel scale.
    pub fn symmetry_residual(&self) -> (f64, LatticeIndex) {
        let mut worst = (0.0, 0usize);
        for i in 0..self.first.u.len() {
            let (u1, v1) = (self.first.u[i], self.first.v[i]);
            let (u2, v2) = (self.second.u[i], self.second.v[i]);
            let r = ((u1 - u2).norm() + (v1 + v2).norm()) / (1.0 + u1.norm() + v1.norm());
            if r > worst.0 || r.is_nan() {
                worst = (r, i);
            }
        }
        (worst.0, self.first.grid.unflat(worst.1))
    }

    pub fn check_symmetry(&self) -> Result<()> {
        let (residual, index) = self.symmetry_residual();
        if residual <= PAIR_SYMMETRY_TOLERANCE {
            Ok(())
        } else {
            Err(Error::SymmetryViolation { index, residual })
        }
    }

    /// `e^{-2r} cos^2 psi + e^{2r} sin^2 psi` with `r`, `psi` of the first
    /// kernel. Where `V(-q, -W)` vanishes the angle is taken as zero.
    pub fn closed_form_green(&self) -> Vec<f64> {
        let k = &self.first;
        let g = k.grid;
        g.indices()
            .map(|idx| {
                let r = k.squeezing_degree(idx);
                let psi = k.orientation_angle(idx).unwrap_or(0.0);
                let (s, c) = psi.sin_cos();
                (-2.0 * r).exp() * c * c + (2.0 * r).exp() * s * s
            })
            .collect()
    }
}

/// Fourier image of the noise correlation, sampled on the frequency lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct GreenKernel {
    pub grid: SpaceTimeGrid,
    pub values: Vec<f64>,
}

/// `G(q, W) = |U(q, W) - V*(-q, -W)|^2` for a type-II symmetric pair.
pub fn green_kernel(pair: &KernelPair) -> Result<GreenKernel> {
    pair.check_symmetry()?;
    let k = &pair.first;
    let conj = k.grid.conjugate_table();
    let values = (0..k.u.len())
        .map(|i| (k.u[i] - k.v[conj[i]].conj()).norm_sqr())
        .collect();
    Ok(GreenKernel { grid: k.grid, values })
}

/// Largest residual of the commutators `[F, F^dagger]` and `[F, F]` of the
/// noise field `F = E2 + E1^dagger`, evaluated mode by mode from the kernels
/// as given (in units of the vacuum delta commutator).
///
/// Writing `f(k) sqrt 2 = sum_m alpha_m(k) a_m(k) + beta_m(k) a_m^dagger(-k)`
/// with `alpha_m = s_m U_m(k) + V_m*(-k)`, `beta_m = s_m V_m(k) + U_m*(-k)`,
/// `s_1 = -1`, `s_2 = +1`, the commutators are
/// `sum_m |alpha_m(k)|^2 - |beta_m(k)|^2` and
/// `sum_m alpha_m(k) beta_m(-k) - beta_m(k) alpha_m(-k)`, both halved.
pub fn noise_commutator_check(pair: &KernelPair) -> f64 {
    let grid = pair.grid();
    let conj = grid.conjugate_table();
    let coeffs = |k: &SqueezingKernel, sign: f64, i: usize| {
        let j = conj[i];
        (k.u[i] * sign + k.v[j].conj(), k.v[i] * sign + k.u[j].conj())
    };
    let mut worst: f64 = 0.0;
    for i in 0..grid.len() {
        let j = conj[i];
        let mut normal = 0.0;
        let mut anomalous = Complex64::new(0.0, 0.0);
        for (kernel, sign) in [(&pair.first, -1.0), (&pair.second, 1.0)] {
            let (a_k, b_k) = coeffs(kernel, sign, i);
            let (a_m, b_m) = coeffs(kernel, sign, j);
            normal += a_k.norm_sqr() - b_k.norm_sqr();
            anomalous += a_k * b_m - b_k * a_m;
        }
        worst = worst.max(0.5 * normal.abs()).max(0.5 * anomalous.norm());
    }
    worst
}

/// Largest commutator residual tolerated for shipped kernels.
pub const COMMUTATOR_TOLERANCE: f64 = 1e-12;

/// Fails unless the noise field built from `pair` commutes with itself
/// everywhere, i.e. can be sampled as classical noise.
pub fn verify_classical_noise(pair: &KernelPair) -> Result<f64> {
    let residual = noise_commutator_check(pair);
    if residual < COMMUTATOR_TOLERANCE {
        Ok(residual)
    } else {
        Err(Error::NonClassicalNoise {
            residual,
            tolerance: COMMUTATOR_TOLERANCE,
        })
    }
}

/// Output photocurrent spectrum predicted from the input spectrum:
/// `in + 2 A0^2 (e^{-2r} cos^2 psi + e^{2r} sin^2 psi)`. Independent of the
/// homodyne angle `phi`, which is accepted only to mirror the measurement.
pub fn analytic_out_spectrum(pair: &KernelPair, _phi: f64, in_spectrum: &[f64], a0: f64) -> Result<Vec<f64>> {
    let grid = pair.grid();
    if in_spectrum.len() != grid.len() {
        return Err(Error::ShapeMismatch {
            expected: grid.len(),
            found: in_spectrum.len(),
        });
    }
    Ok(pair
        .closed_form_green()
        .iter()
        .zip(in_spectrum)
        .map(|(g, s)| s + 2.0 * a0 * a0 * g)
        .collect())
}
