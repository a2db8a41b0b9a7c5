//! Exact second moments on tiny grids.
//!
//! Every field of the chain is written as an affine function of the real
//! and imaginary parts of the three vacuum inputs (OPA1, OPA2, input
//! field), each with variance 1/4 in mode units. Transforms use explicit
//! DFT matrices, so nothing here goes through the FFT, the samplers or the
//! estimators.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::analysis::BlockShape;
use crate::error::{Error, Result};
use crate::kernel::{GreenKernel, KernelPair, SqueezingKernel};
use crate::lattice::SpaceTimeGrid;
use crate::protocol::ProtocolParams;
use crate::stochastic::CoherentInputSpec;

/// Largest number of vacuum modes (three per lattice bin) handled densely.
pub const ORACLE_MODE_LIMIT: usize = 1152;

const SOURCES: usize = 3;
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Dense complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl Matrix {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    fn row(&self, r: usize) -> &[Complex64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip(&self, other: &Self, f: impl Fn(Complex64, Complex64) -> Complex64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// `self * rhs`.
    fn mul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows);
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let dst = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == ZERO {
                    continue;
                }
                for (d, &b) in dst.iter_mut().zip(rhs.row(k)) {
                    *d += a * b;
                }
            }
        }
        out
    }
}

/// A field as `mean + sum_s M_s xi_s`, one coefficient block per vacuum
/// source. `xi_s` stacks `Re a_s(k)` then `Im a_s(k)` over all bins.
#[derive(Debug, Clone, PartialEq)]
struct FieldMap {
    mean: Vec<Complex64>,
    blocks: [Option<Matrix>; SOURCES],
}

impl FieldMap {
    fn combine(&self, other: &Self, f: impl Fn(Complex64, Complex64) -> Complex64 + Copy) -> Self {
        let blocks = core::array::from_fn(|s| match (&self.blocks[s], &other.blocks[s]) {
            (Some(a), Some(b)) => Some(a.zip(b, f)),
            (Some(a), None) => Some(a.map(|v| f(v, ZERO))),
            (None, Some(b)) => Some(b.map(|v| f(ZERO, v))),
            (None, None) => None,
        });
        Self {
            mean: self.mean.iter().zip(&other.mean).map(|(&a, &b)| f(a, b)).collect(),
            blocks,
        }
    }

    fn apply(&self, f: impl Fn(Complex64) -> Complex64 + Copy) -> Self {
        Self {
            mean: self.mean.iter().map(|&v| f(v)).collect(),
            blocks: core::array::from_fn(|s| self.blocks[s].as_ref().map(|m| m.map(f))),
        }
    }

    fn transform(&self, m: &Matrix) -> Self {
        let mean = (0..m.rows)
            .map(|r| m.row(r).iter().zip(&self.mean).map(|(a, b)| a * b).sum())
            .collect();
        Self {
            mean,
            blocks: core::array::from_fn(|s| self.blocks[s].as_ref().map(|b| m.mul(b))),
        }
    }

    fn rows(&self) -> usize {
        self.mean.len()
    }

    /// `<delta z_i delta z_j*>` and `<delta z_i delta z_j>`.
    fn moments(&self, other: &Self, i: usize, j: usize) -> (Complex64, Complex64) {
        let (mut normal, mut anomalous) = (ZERO, ZERO);
        for s in 0..SOURCES {
            if let (Some(a), Some(b)) = (&self.blocks[s], &other.blocks[s]) {
                for (x, y) in a.row(i).iter().zip(b.row(j)) {
                    normal += x * y.conj();
                    anomalous += x * y;
                }
            }
        }
        (normal * 0.25, anomalous * 0.25)
    }

    fn variance(&self, i: usize) -> f64 {
        self.moments(self, i, i).0.re
    }
}

/// Position -> Fourier and Fourier -> position matrices built from the
/// lattice coordinates, `exp[i(W t - q.rho)] dV` and its inverse.
fn dft_matrices(grid: &SpaceTimeGrid) -> (Matrix, Matrix) {
    let n = grid.len();
    let mut fwd = Matrix::zeros(n, n);
    let mut inv = Matrix::zeros(n, n);
    let dv = grid.cell_volume();
    let vol = grid.total_volume();
    for k in grid.indices() {
        let [qx, qy, w] = grid.frequency(k);
        let kf = grid.flat(k);
        for p in grid.indices() {
            let pf = grid.flat(p);
            let phase = w * p.t as f64 * grid.dt - qx * p.x as f64 * grid.dx - qy * p.y as f64 * grid.dy;
            let e = Complex64::from_polar(1.0, phase);
            fwd.data[kf * n + pf] = e * dv;
            inv.data[pf * n + kf] = e.conj() / vol;
        }
    }
    (fwd, inv)
}

fn vacuum_map(grid: &SpaceTimeGrid, source: usize) -> FieldMap {
    let n = grid.len();
    let amp = grid.total_volume().sqrt();
    let mut m = Matrix::zeros(n, 2 * n);
    for k in 0..n {
        m.data[k * 2 * n + k] = Complex64::new(amp, 0.0);
        m.data[k * 2 * n + n + k] = Complex64::new(0.0, amp);
    }
    let mut blocks = [None, None, None];
    blocks[source] = Some(m);
    FieldMap {
        mean: vec![ZERO; n],
        blocks,
    }
}

/// `U(k) a(k) + V(k) a*(-k)` on a Fourier-domain map.
fn squeeze(vac: &FieldMap, kernel: &SqueezingKernel) -> FieldMap {
    let grid = kernel.grid;
    let mut out = vac.clone();
    for s in 0..SOURCES {
        if let (Some(src), Some(dst)) = (&vac.blocks[s], &mut out.blocks[s]) {
            for idx in grid.indices() {
                let k = grid.flat(idx);
                let c = grid.flat(grid.conjugate_mode_index(idx));
                for col in 0..src.cols {
                    dst.data[k * src.cols + col] =
                        kernel.u[k] * src.data[k * src.cols + col] + kernel.v[k] * src.data[c * src.cols + col].conj();
                }
            }
        }
    }
    out
}

/// Second moments of the Fourier modes of one field, in mode units
/// (`alpha = f / sqrt V`).
#[derive(Debug, Clone, PartialEq)]
pub struct ModeCovariance {
    pub grid: SpaceTimeGrid,
    /// `<alpha_k alpha_l*>`, row-major.
    pub normal: Vec<Complex64>,
    /// `<alpha_k alpha_l>`, row-major.
    pub anomalous: Vec<Complex64>,
}

impl ModeCovariance {
    fn from_map(grid: SpaceTimeGrid, map: &FieldMap) -> Self {
        let n = grid.len();
        let vol = grid.total_volume();
        let mut normal = vec![ZERO; n * n];
        let mut anomalous = vec![ZERO; n * n];
        for i in 0..n {
            for j in 0..n {
                let (a, b) = map.moments(map, i, j);
                normal[i * n + j] = a / vol;
                anomalous[i * n + j] = b / vol;
            }
        }
        Self {
            grid,
            normal,
            anomalous,
        }
    }

    /// Largest `|N - N^dagger|` entry.
    pub fn hermiticity_residual(&self) -> f64 {
        let n = self.grid.len();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.normal[i * n + j] - self.normal[j * n + i].conj()).norm());
            }
        }
        worst
    }

    /// Smallest pivot of an `LDL^dagger` factorization of the normal block,
    /// relative to its largest diagonal entry. Non-negative (up to rounding)
    /// for a positive semidefinite matrix.
    pub fn min_relative_pivot(&self) -> f64 {
        let n = self.grid.len();
        let mut a = self.normal.clone();
        let scale = (0..n)
            .fold(0.0f64, |m, i| m.max(a[i * n + i].re.abs()))
            .max(f64::MIN_POSITIVE);
        let tiny = 1e-14 * scale;
        let mut min_pivot = f64::INFINITY;
        for k in 0..n {
            let d = a[k * n + k].re;
            min_pivot = min_pivot.min(d / scale);
            if d <= tiny {
                continue;
            }
            for i in k + 1..n {
                let f = a[i * n + k] / d;
                for j in k + 1..n {
                    let akj = a[k * n + j];
                    a[i * n + j] -= f * akj;
                }
            }
        }
        min_pivot
    }

    pub fn is_positive_semidefinite(&self) -> bool {
        self.min_relative_pivot() > -1e-10
    }

    /// Smallest `<|alpha_k|^2>` over the modes; at least 1/2 for any
    /// physical state.
    pub fn min_symmetric_variance(&self) -> f64 {
        let n = self.grid.len();
        (0..n).map(|i| self.normal[i * n + i].re).fold(f64::INFINITY, f64::min)
    }

    pub fn respects_uncertainty(&self) -> bool {
        self.min_symmetric_variance() >= 0.5 - 1e-12
    }
}

/// Exact results of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub grid: SpaceTimeGrid,
    pub phi: f64,
    pub a0: f64,
    /// Input photocurrent spectrum `<|i(k)|^2> / V`.
    pub in_spectrum: Vec<f64>,
    pub out_spectrum: Vec<f64>,
    /// `<|f(k)|^2> / V` of the noise field.
    pub green: Vec<f64>,
    /// `C(l) = <F(l) F*(0)>`.
    pub green_correlation: Vec<Complex64>,
    /// Largest `|<f(k) f(l)>| / V`.
    pub noise_anomalous_max: f64,
    /// Ensemble mean of the output field at every pixel.
    pub out_mean: Vec<Complex64>,
    /// Per-pixel variances of Alice's photocurrents.
    pub i_x_variance: Vec<f64>,
    pub i_p_variance: Vec<f64>,
    pub squeezed_modes: [ModeCovariance; 2],
    /// Row-major block covariance when a block shape was requested.
    pub coarse: Option<(BlockShape, Vec<Complex64>)>,
}

/// Propagates the vacuum covariance through the whole chain.
pub fn propagate_exact(
    pair: &KernelPair,
    protocol: &ProtocolParams,
    input: &CoherentInputSpec,
    phi: f64,
    block: Option<BlockShape>,
) -> Result<OracleReport> {
    let grid = *pair.grid();
    let n = grid.len();
    let modes = SOURCES * n;
    if modes > ORACLE_MODE_LIMIT {
        return Err(Error::OracleTooLarge {
            modes,
            limit: ORACLE_MODE_LIMIT,
        });
    }
    protocol.validate()?;
    input.validate()?;
    if let Some(b) = block {
        b.counts(&grid)?;
    }
    let (fwd, inv) = dft_matrices(&grid);
    let vol = grid.total_volume();
    let r2 = core::f64::consts::FRAC_1_SQRT_2;

    let s1f = squeeze(&vacuum_map(&grid, 0), &pair.first);
    let s2f = squeeze(&vacuum_map(&grid, 1), &pair.second);
    let mut a_f = vacuum_map(&grid, 2);
    a_f.mean[0] += input.amplitude * vol;
    let squeezed_modes = [
        ModeCovariance::from_map(grid, &s1f),
        ModeCovariance::from_map(grid, &s2f),
    ];

    let s1 = s1f.transform(&inv);
    let s2 = s2f.transform(&inv);
    let a_in = a_f.transform(&inv);
    let e1 = s1.combine(&s2, |a, b| (a + b) * r2);
    let e2 = s1.combine(&s2, |a, b| (b - a) * r2);
    let bx = a_in.combine(&e1, |a, b| (a + b) * r2);
    let bp = a_in.combine(&e1, |a, b| (b - a) * r2);
    let b0 = protocol.b0;
    let i_x = bx.apply(|v| Complex64::new(2.0 * b0 * v.re, 0.0));
    let i_p = bp.apply(|v| Complex64::new(2.0 * b0 * v.im, 0.0));
    let g = protocol.g;
    let modulation = i_x.combine(&i_p, |x, p| (x - Complex64::i() * p) * g);
    let a_out = e2.combine(&modulation, |a, b| a + b);
    let noise = e2.combine(&e1, |a, b| a + b.conj());

    let lo = Complex64::from_polar(1.0, -phi);
    let a0 = protocol.a0;
    let victor = |f: &FieldMap| {
        let cur = f.apply(|v| Complex64::new(2.0 * a0 * (v * lo).re, 0.0)).transform(&fwd);
        (0..n).map(|k| cur.variance(k) / vol).collect::<Vec<f64>>()
    };
    let in_spectrum = victor(&a_in);
    let out_spectrum = victor(&a_out);

    let noise_f = noise.transform(&fwd);
    let green = (0..n).map(|k| noise_f.variance(k) / vol).collect();
    let mut noise_anomalous_max = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            noise_anomalous_max = noise_anomalous_max.max(noise_f.moments(&noise_f, i, j).1.norm() / vol);
        }
    }
    let green_correlation = (0..n).map(|l| noise.moments(&noise, l, 0).0).collect();

    let coarse = block.map(|b| {
        let counts = b.counts(&grid).expect("checked above");
        let nb: usize = counts.iter().product();
        let scale = grid.cell_volume() / (b.area(&grid) * b.duration(&grid)).sqrt();
        let mut avg = Matrix::zeros(nb, n);
        for idx in grid.indices() {
            let row = (idx.x / b.bx * counts[1] + idx.y / b.by) * counts[2] + idx.t / b.bt;
            avg.data[row * n + grid.flat(idx)] = Complex64::new(scale, 0.0);
        }
        let blocks = noise.transform(&avg);
        let mut cov = vec![ZERO; nb * nb];
        for j in 0..nb {
            for k in 0..nb {
                cov[j * nb + k] = blocks.moments(&blocks, j, k).0;
            }
        }
        (b, cov)
    });

    Ok(OracleReport {
        grid,
        phi,
        a0,
        in_spectrum,
        out_spectrum,
        green,
        green_correlation,
        noise_anomalous_max,
        out_mean: a_out.mean.clone(),
        i_x_variance: (0..i_x.rows()).map(|i| i_x.variance(i)).collect(),
        i_p_variance: (0..i_p.rows()).map(|i| i_p.variance(i)).collect(),
        squeezed_modes,
        coarse,
    })
}

/// `sum_{j=j0}^{j0+b-1} e^{i theta j}` in closed form.
fn dirichlet(theta: f64, j0: usize, b: usize) -> Complex64 {
    let half = 0.5 * theta;
    let s = half.sin();
    let centre = Complex64::from_polar(1.0, theta * (j0 as f64 + 0.5 * (b as f64 - 1.0)));
    if s.abs() < 1e-12 {
        // theta on a multiple of 2 pi: every term is the same phase
        return Complex64::from_polar(b as f64, theta * j0 as f64);
    }
    centre * ((b as f64 * half).sin() / s)
}

/// `<F_a F_b*>` for block averages of a stationary noise with spectrum `G`:
/// `(S T V)^{-1} sum_k G(k) W_a(k) W_b(k)*`, `W` being each block's window
/// transform. Works for grids of any size.
pub fn windowed_block_covariance(green: &GreenKernel, block: BlockShape) -> Result<Vec<Complex64>> {
    let grid = green.grid;
    let counts = block.counts(&grid)?;
    let nb: usize = counts.iter().product();
    let st = block.area(&grid) * block.duration(&grid);
    let norm = 1.0 / (st * grid.total_volume());
    let dv = grid.cell_volume();
    let sizes = [block.bx, block.by, block.bt];
    let mut cov = vec![ZERO; nb * nb];
    let mut windows = vec![ZERO; nb];
    for k in grid.indices() {
        let gk = green.values[grid.flat(k)];
        if gk == 0.0 {
            continue;
        }
        let [qx, qy, w] = grid.frequency(k);
        // inverse-transform phase e^{-i(W t - q.rho)} per axis
        let theta = [qx * grid.dx, qy * grid.dy, -w * grid.dt];
        let axis: [Vec<Complex64>; 3] = core::array::from_fn(|a| {
            (0..counts[a])
                .map(|c| dirichlet(theta[a], c * sizes[a], sizes[a]))
                .collect()
        });
        for bx in 0..counts[0] {
            for by in 0..counts[1] {
                for bt in 0..counts[2] {
                    windows[(bx * counts[1] + by) * counts[2] + bt] = axis[0][bx] * axis[1][by] * axis[2][bt] * dv;
                }
            }
        }
        for a in 0..nb {
            let wa = windows[a] * gk * norm;
            for b in 0..nb {
                cov[a * nb + b] += wa * windows[b].conj();
            }
        }
    }
    Ok(cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{analytic_out_spectrum, green_kernel, KernelParams, Opa};
    use crate::lattice::LatticeIndex;
    use core::f64::consts::{FRAC_PI_2, PI};

    fn pair(grid: &SpaceTimeGrid, r0: f64, psi0: f64) -> KernelPair {
        KernelPair::build(&KernelParams::flat_band(r0, PI, PI, psi0), grid).unwrap()
    }

    fn vacuum() -> CoherentInputSpec {
        CoherentInputSpec::vacuum()
    }

    #[test]
    fn classical_limit_triples_the_spectrum_exactly() {
        let g = SpaceTimeGrid::new(4, 2, 4, 0.5, 1.0, 0.25).unwrap();
        let p = ProtocolParams::new(1.0, 1.7).unwrap();
        let rep = propagate_exact(&pair(&g, 0.0, 0.0), &p, &vacuum(), 0.4, None).unwrap();
        let a2 = 1.7 * 1.7;
        for k in 0..g.len() {
            assert!((rep.in_spectrum[k] - a2).abs() < 1e-12 * a2);
            assert!((rep.out_spectrum[k] - 3.0 * a2).abs() < 1e-12 * a2);
            assert!((rep.green[k] - 1.0).abs() < 1e-12);
        }
        assert!((rep.green_correlation[0].re * g.cell_volume() - 1.0).abs() < 1e-12);
        assert!(rep.green_correlation[1..]
            .iter()
            .all(|c| c.norm() < 1e-12 / g.cell_volume()));
        // alice currents: B0^2 / dV per pixel
        assert!(rep
            .i_x_variance
            .iter()
            .all(|v| (v * g.cell_volume() - 1.0).abs() < 1e-12));
        assert!(rep
            .i_p_variance
            .iter()
            .all(|v| (v * g.cell_volume() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn flat_band_spectra_match_closed_form() {
        let g = SpaceTimeGrid::unit(4, 4, 8).unwrap();
        for (r0, psi0, phi) in [(1.0, 0.0, 0.0), (2.0, 0.3, 1.2), (0.7, FRAC_PI_2, -0.5)] {
            let pr = pair(&g, r0, psi0);
            let rep = propagate_exact(&pr, &ProtocolParams::default(), &vacuum(), phi, None).unwrap();
            let want = analytic_out_spectrum(&pr, phi, &rep.in_spectrum, 1.0).unwrap();
            let closed = pr.closed_form_green();
            for k in 0..g.len() {
                assert!((rep.out_spectrum[k] - want[k]).abs() < 1e-10 * want[k]);
                assert!((rep.green[k] - closed[k]).abs() < 1e-10 * closed[k]);
            }
            assert!(rep.noise_anomalous_max < 1e-10);
        }
    }

    #[test]
    fn mean_output_follows_the_gain() {
        let g = SpaceTimeGrid::unit(2, 2, 4).unwrap();
        let c = Complex64::new(0.6, -1.1);
        let input = CoherentInputSpec { amplitude: c };
        let pr = pair(&g, 1.0, 0.0);
        let p = ProtocolParams::default();
        let rep = propagate_exact(&pr, &p, &input, 0.0, None).unwrap();
        assert!(rep.out_mean.iter().all(|m| (m - c).norm() < 1e-12));
        let doubled = propagate_exact(&pr, &p.with_gain(2.0 * p.g).unwrap(), &input, 0.0, None).unwrap();
        assert!(doubled.out_mean.iter().all(|m| (m - c * 2.0).norm() < 1e-12));
    }

    #[test]
    fn squeezed_mode_covariance_is_physical() {
        let g = SpaceTimeGrid::unit(4, 2, 4).unwrap();
        let rep = propagate_exact(&pair(&g, 1.5, 0.4), &ProtocolParams::default(), &vacuum(), 0.0, None).unwrap();
        for m in &rep.squeezed_modes {
            assert!(m.hermiticity_residual() < 1e-12);
            assert!(m.is_positive_semidefinite());
            assert!(m.respects_uncertainty());
        }
        let cov = &rep.squeezed_modes[0];
        let k = g.flat(LatticeIndex::new(1, 0, 1));
        let r = 1.5f64;
        let want = 0.5 * (r.cosh().powi(2) + r.sinh().powi(2));
        assert!((cov.normal[k * g.len() + k].re - want).abs() < 1e-12);
    }

    #[test]
    fn sub_vacuum_covariance_is_flagged() {
        let g = SpaceTimeGrid::unit(1, 1, 2).unwrap();
        let c = ModeCovariance {
            grid: g,
            normal: vec![Complex64::new(0.4, 0.0), ZERO, ZERO, Complex64::new(0.6, 0.0)],
            anomalous: vec![ZERO; 4],
        };
        assert!(!c.respects_uncertainty());
        assert!(c.is_positive_semidefinite());
        let bad = ModeCovariance {
            normal: vec![
                Complex64::new(1.0, 0.0),
                Complex64::new(2.0, 0.0),
                Complex64::new(2.0, 0.0),
                Complex64::new(1.0, 0.0),
            ],
            ..c
        };
        assert!(!bad.is_positive_semidefinite());
    }

    #[test]
    fn coarse_covariance_matches_windowed_quadrature() {
        let g = SpaceTimeGrid::new(4, 4, 4, 0.5, 0.5, 1.0).unwrap();
        let pr = KernelPair::build(&KernelParams::gaussian_band(1.2, 2.0 * PI, PI, 0.2), &g).unwrap();
        let gk = green_kernel(&pr).unwrap();
        for block in [
            BlockShape::new(2, 2, 2),
            BlockShape::new(4, 4, 4),
            BlockShape::new(1, 2, 4),
        ] {
            let rep = propagate_exact(&pr, &ProtocolParams::default(), &vacuum(), 0.0, Some(block)).unwrap();
            let (_, exact) = rep.coarse.unwrap();
            let quad = windowed_block_covariance(&gk, block).unwrap();
            let scale = exact.iter().fold(0.0f64, |m, v| m.max(v.norm()));
            for (a, b) in exact.iter().zip(&quad) {
                assert!((a - b).norm() < 1e-10 * scale, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn whole_grid_window_of_white_noise_is_one() {
        let g = SpaceTimeGrid::new(6, 4, 10, 0.3, 0.7, 1.1).unwrap();
        let white = GreenKernel {
            grid: g,
            values: vec![1.0; g.len()],
        };
        let cov = windowed_block_covariance(&white, BlockShape::new(6, 4, 10)).unwrap();
        assert!((cov[0] - 1.0).norm() < 1e-12);
        let cov = windowed_block_covariance(&white, BlockShape::new(3, 2, 5)).unwrap();
        let nb = 8;
        for a in 0..nb {
            for b in 0..nb {
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((cov[a * nb + b] - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn dirichlet_matches_direct_sum() {
        for theta in [0.0, 0.3, -1.7, 2.0 * PI, PI] {
            for (j0, b) in [(0, 1), (3, 4), (5, 7)] {
                let direct: Complex64 = (j0..j0 + b).map(|j| Complex64::from_polar(1.0, theta * j as f64)).sum();
                assert!((dirichlet(theta, j0, b) - direct).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn refuses_large_grids_and_bad_blocks() {
        let g = SpaceTimeGrid::unit(8, 8, 8).unwrap();
        let pr = KernelPair::new(
            crate::kernel::build_kernel(&KernelParams::flat_band(0.0, PI, PI, 0.0), &g, Opa::First).unwrap(),
            crate::kernel::build_kernel(&KernelParams::flat_band(0.0, PI, PI, 0.0), &g, Opa::Second).unwrap(),
        )
        .unwrap();
        assert_eq!(
            propagate_exact(&pr, &ProtocolParams::default(), &vacuum(), 0.0, None),
            Err(Error::OracleTooLarge {
                modes: 1536,
                limit: ORACLE_MODE_LIMIT
            })
        );
        let small = SpaceTimeGrid::unit(2, 2, 2).unwrap();
        assert!(matches!(
            propagate_exact(
                &pair(&small, 0.0, 0.0),
                &ProtocolParams::default(),
                &vacuum(),
                0.0,
                Some(BlockShape::new(3, 1, 1))
            ),
            Err(Error::BlockShape { .. })
        ));
    }
}
