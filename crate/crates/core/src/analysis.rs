//! Victor's side: homodyne projection and the estimators that compare the
//! teleported field with the closed-form predictions.
//!
//! Every estimator is an accumulator that can be fed trials one at a time
//! and merged with partial results from other workers.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::kernel::{analytic_out_spectrum, Band, GreenKernel, KernelPair};
use crate::lattice::{Domain, FieldState, LatticeFft, LatticeIndex, SpaceTimeGrid};

/// Band fraction used for in-band aggregates; keeps away from the band
/// edge where the flat-band model jumps.
pub const IN_BAND_FRACTION: f64 = 0.8;

/// Two-sided tail probability of a standard normal beyond 3.
pub const THREE_SIGMA_TAIL: f64 = 0.002_699_796_063_260_186_6;

/// Running sums of a complex observable, enough for its mean and the
/// standard errors of the real and imaginary parts.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ComplexMoments {
    pub count: u64,
    pub sum: Complex64,
    pub sum_re2: f64,
    pub sum_im2: f64,
}

impl ComplexMoments {
    pub fn push(&mut self, z: Complex64) {
        self.count += 1;
        self.sum += z;
        self.sum_re2 += z.re * z.re;
        self.sum_im2 += z.im * z.im;
    }

    pub fn merge(&mut self, other: &Self) {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_re2 += other.sum_re2;
        self.sum_im2 += other.sum_im2;
    }

    pub fn mean(&self) -> Complex64 {
        self.sum / self.count as f64
    }

    /// Standard errors of the real and imaginary parts of the mean.
    pub fn standard_error(&self) -> (f64, f64) {
        let n = self.count as f64;
        let m = self.mean();
        let var = |s2: f64, mu: f64| ((s2 - n * mu * mu) / (n - 1.0)).max(0.0);
        (
            (var(self.sum_re2, m.re) / n).sqrt(),
            (var(self.sum_im2, m.im) / n).sqrt(),
        )
    }
}

/// Tally of independent-ish `|z| > 3` tests. A family is consistent with
/// zero when the number of exceedances stays within three binomial
/// standard deviations of what chance alone gives.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ZTally {
    pub tests: usize,
    pub exceed: usize,
}

impl ZTally {
    /// Records `value / se`. An exact zero with zero error carries no
    /// information and is skipped.
    pub fn push_ratio(&mut self, value: f64, se: f64) {
        if value == 0.0 && se == 0.0 {
            return;
        }
        self.push(value / se);
    }

    pub fn push(&mut self, z: f64) {
        self.tests += 1;
        if z.is_nan() || z.abs() > 3.0 {
            self.exceed += 1;
        }
    }

    pub fn expected(&self) -> f64 {
        self.tests as f64 * THREE_SIGMA_TAIL
    }

    pub fn allowance(&self) -> usize {
        let e = self.expected();
        (e + 3.0 * (e * (1.0 - THREE_SIGMA_TAIL)).sqrt()).floor() as usize
    }

    pub fn consistent_with_zero(&self) -> bool {
        self.exceed <= self.allowance()
    }
}

fn too_few(required: u64, got: u64) -> Result<()> {
    if got < required {
        Err(Error::TooFewTrials { required, got })
    } else {
        Ok(())
    }
}

/// `i(rho, t) = 2 A0 Re(a e^{-i phi})` at every pixel.
pub fn homodyne_project(a: &FieldState, phi: f64, a0: f64) -> Result<Vec<f64>> {
    a.expect_domain(Domain::Position)?;
    let lo = Complex64::from_polar(1.0, -phi);
    Ok(a.values.iter().map(|v| 2.0 * a0 * (v * lo).re).collect())
}

/// Per-bin periodogram sums. Besides `sum x` and `sum |x|^2` it keeps the
/// third and fourth moments needed for the exact standard error of the
/// mean-subtracted periodogram.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumAccumulator {
    grid: SpaceTimeGrid,
    trials: u64,
    sum: Vec<Complex64>,
    sum_abs2: Vec<f64>,
    sum_sq: Vec<Complex64>,
    sum_abs2_x: Vec<Complex64>,
    sum_abs4: Vec<f64>,
}

/// Mean-subtracted spectrum estimate with per-bin standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumEstimate {
    pub grid: SpaceTimeGrid,
    pub trials: u64,
    pub values: Vec<f64>,
    pub standard_error: Vec<f64>,
}

impl SpectrumAccumulator {
    pub fn new(grid: SpaceTimeGrid) -> Self {
        let n = grid.len();
        let zero = Complex64::new(0.0, 0.0);
        Self {
            grid,
            trials: 0,
            sum: vec![zero; n],
            sum_abs2: vec![0.0; n],
            sum_sq: vec![zero; n],
            sum_abs2_x: vec![zero; n],
            sum_abs4: vec![0.0; n],
        }
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn trials(&self) -> u64 {
        self.trials
    }

    /// Adds the Fourier transform of one trial's photocurrent.
    pub fn push(&mut self, fourier: &[Complex64]) -> Result<()> {
        if fourier.len() != self.grid.len() {
            return Err(Error::ShapeMismatch {
                expected: self.grid.len(),
                found: fourier.len(),
            });
        }
        for (i, &x) in fourier.iter().enumerate() {
            let a2 = x.norm_sqr();
            self.sum[i] += x;
            self.sum_abs2[i] += a2;
            self.sum_sq[i] += x * x;
            self.sum_abs2_x[i] += x * a2;
            self.sum_abs4[i] += a2 * a2;
        }
        self.trials += 1;
        Ok(())
    }

    /// Transforms a position-domain photocurrent and adds it.
    pub fn push_currents(&mut self, fft: &LatticeFft, currents: &[f64]) -> Result<()> {
        self.grid
            .ensure_same(fft.grid(), "transform plan and spectrum accumulator")?;
        if currents.len() != self.grid.len() {
            return Err(Error::ShapeMismatch {
                expected: self.grid.len(),
                found: currents.len(),
            });
        }
        self.push(&fft.forward_real(currents))
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        self.grid.ensure_same(&other.grid, "spectrum accumulators")?;
        self.trials += other.trials;
        for i in 0..self.sum.len() {
            self.sum[i] += other.sum[i];
            self.sum_abs2[i] += other.sum_abs2[i];
            self.sum_sq[i] += other.sum_sq[i];
            self.sum_abs2_x[i] += other.sum_abs2_x[i];
            self.sum_abs4[i] += other.sum_abs4[i];
        }
        Ok(())
    }

    /// `<|x - <x>|^2> / V` with the `M/(M-1)` correction.
    pub fn finish(&self) -> Result<SpectrumEstimate> {
        too_few(2, self.trials)?;
        let m = self.trials as f64;
        let bessel = m / (m - 1.0);
        let vol = self.grid.total_volume();
        let mut values = Vec::with_capacity(self.sum.len());
        let mut standard_error = Vec::with_capacity(self.sum.len());
        for i in 0..self.sum.len() {
            let mu = self.sum[i] / m;
            let mu2 = mu.norm_sqr();
            let s2 = self.sum_abs2[i] / m;
            let y1 = (s2 - mu2).max(0.0);
            // mean of |x - mu|^4 expanded in raw moments
            let y2 = self.sum_abs4[i] / m + 4.0 * s2 * mu2 + 2.0 * (self.sum_sq[i] / m * mu.conj() * mu.conj()).re
                - 4.0 * (self.sum_abs2_x[i] / m * mu.conj()).re
                - 3.0 * mu2 * mu2;
            let var = (y2 - y1 * y1).max(0.0);
            values.push(bessel * y1 / vol);
            standard_error.push(bessel * (var / m).sqrt() / vol);
        }
        Ok(SpectrumEstimate {
            grid: self.grid,
            trials: self.trials,
            values,
            standard_error,
        })
    }
}

/// Spectrum estimate of a batch of photocurrents.
pub fn spectrum_estimate(currents: &[Vec<f64>], grid: &SpaceTimeGrid) -> Result<SpectrumEstimate> {
    let fft = LatticeFft::new(*grid);
    let mut acc = SpectrumAccumulator::new(*grid);
    for c in currents {
        acc.push_currents(&fft, c)?;
    }
    acc.finish()
}

/// Estimated spectrum next to its prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    pub grid: SpaceTimeGrid,
    pub phi: f64,
    pub trials: u64,
    pub estimated: Vec<f64>,
    pub standard_error: Vec<f64>,
    pub analytic: Vec<f64>,
}

impl SpectrumReport {
    pub fn new(estimate: SpectrumEstimate, phi: f64, analytic: Vec<f64>) -> Result<Self> {
        if analytic.len() != estimate.values.len() {
            return Err(Error::ShapeMismatch {
                expected: estimate.values.len(),
                found: analytic.len(),
            });
        }
        Ok(Self {
            grid: estimate.grid,
            phi,
            trials: estimate.trials,
            estimated: estimate.values,
            standard_error: estimate.standard_error,
            analytic,
        })
    }

    /// Input-side report: shot noise `A0^2` in every bin.
    pub fn input(estimate: SpectrumEstimate, phi: f64, a0: f64) -> Self {
        let analytic = vec![a0 * a0; estimate.values.len()];
        Self::new(estimate, phi, analytic).expect("length matches by construction")
    }

    /// Output-side report predicted from the kernels.
    pub fn output(estimate: SpectrumEstimate, phi: f64, a0: f64, pair: &KernelPair) -> Result<Self> {
        let shot = vec![a0 * a0; estimate.values.len()];
        let analytic = analytic_out_spectrum(pair, phi, &shot, a0)?;
        Self::new(estimate, phi, analytic)
    }

    /// Root-mean-square of `estimated / analytic - 1` over all bins.
    pub fn rms_relative_error(&self) -> f64 {
        let n = self.estimated.len() as f64;
        let s: f64 = self
            .estimated
            .iter()
            .zip(&self.analytic)
            .map(|(e, a)| (e / a - 1.0).powi(2))
            .sum();
        (s / n).sqrt()
    }
}

/// Acceptance windows for `compare_spectra`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumTolerance {
    pub in_band: f64,
    pub out_of_band: f64,
    pub per_bin: f64,
}

impl SpectrumTolerance {
    /// `0.05` in band and `0.15` elsewhere at 2000 trials, scaled as
    /// `1/sqrt(trials)`.
    pub fn for_trials(trials: u64) -> Self {
        let s = (2000.0 / trials.max(1) as f64).sqrt();
        Self {
            in_band: 0.05 * s,
            out_of_band: 0.15 * s,
            per_bin: 0.15 * s,
        }
    }
}

/// Aggregate over a set of bins: ratio of summed spectra and its
/// prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandAggregate {
    pub bins: usize,
    pub ratio: f64,
    pub analytic: f64,
    pub pass: bool,
}

/// Verdict table of an out/in comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumComparison {
    pub grid: SpaceTimeGrid,
    pub tolerance: SpectrumTolerance,
    pub ratio: Vec<f64>,
    pub analytic_ratio: Vec<f64>,
    pub in_band: Vec<bool>,
    pub out_of_band: Vec<bool>,
    /// `None` when the region has no bins.
    pub in_band_aggregate: Option<BandAggregate>,
    pub out_of_band_aggregate: Option<BandAggregate>,
    pub worst_bin: LatticeIndex,
    pub worst_deviation: f64,
    pub bins_outside_tolerance: usize,
}

impl SpectrumComparison {
    pub fn aggregates_pass(&self) -> bool {
        self.in_band_aggregate.is_none_or(|a| a.pass) && self.out_of_band_aggregate.is_none_or(|a| a.pass)
    }

    pub fn every_bin_passes(&self) -> bool {
        self.bins_outside_tolerance == 0
    }
}

/// Per-bin ratios `out / in` against `1 + 2 G`, plus in-band and
/// out-of-band aggregates. Aggregates divide summed spectra, which keeps
/// the estimator free of the small ratio-of-means bias. Bins between the
/// in-band core and the band edge belong to neither aggregate.
pub fn compare_spectra(
    report_in: &SpectrumReport,
    report_out: &SpectrumReport,
    pair: &KernelPair,
    tolerance: SpectrumTolerance,
) -> Result<SpectrumComparison> {
    report_in
        .grid
        .ensure_same(&report_out.grid, "input and output spectra")?;
    report_in.grid.ensure_same(pair.grid(), "spectra and kernels")?;
    if report_in.phi != report_out.phi {
        return Err(Error::InvalidParameter(alloc::format!(
            "spectra taken at different homodyne angles {} and {}",
            report_in.phi,
            report_out.phi
        )));
    }
    let grid = report_in.grid;
    let green = pair.closed_form_green();
    let analytic_ratio: Vec<f64> = green.iter().map(|g| 1.0 + 2.0 * g).collect();
    let ratio: Vec<f64> = report_out
        .estimated
        .iter()
        .zip(&report_in.estimated)
        .map(|(o, i)| o / i)
        .collect();
    let in_band = pair.band().mask(&grid, IN_BAND_FRACTION);
    let out_of_band: Vec<bool> = pair.band().mask(&grid, 1.0).iter().map(|m| !m).collect();

    let aggregate = |mask: &[bool], tol: f64| {
        let (mut so, mut si, mut sa, mut n) = (0.0, 0.0, 0.0, 0usize);
        for i in 0..ratio.len() {
            if mask[i] {
                so += report_out.estimated[i];
                si += report_in.estimated[i];
                sa += analytic_ratio[i];
                n += 1;
            }
        }
        (n > 0).then(|| {
            let r = so / si;
            let a = sa / n as f64;
            BandAggregate {
                bins: n,
                ratio: r,
                analytic: a,
                pass: (r - a).abs() <= tol,
            }
        })
    };
    let in_band_aggregate = aggregate(&in_band, tolerance.in_band);
    let out_of_band_aggregate = aggregate(&out_of_band, tolerance.out_of_band);

    let mut worst = (0usize, 0.0f64);
    let mut outside = 0;
    for i in 0..ratio.len() {
        let d = (ratio[i] - analytic_ratio[i]).abs();
        if d.is_nan() || d > tolerance.per_bin {
            outside += 1;
        }
        if d.is_nan() || d > worst.1 {
            worst = (i, d);
        }
    }
    Ok(SpectrumComparison {
        grid,
        tolerance,
        ratio,
        analytic_ratio,
        in_band,
        out_of_band,
        in_band_aggregate,
        out_of_band_aggregate,
        worst_bin: grid.unflat(worst.0),
        worst_deviation: worst.1,
        bins_outside_tolerance: outside,
    })
}

/// Ensemble sums for the noise correlation, both as a spectrum and as a
/// lag-domain function.
#[derive(Debug, Clone, PartialEq)]
pub struct GreenAccumulator {
    grid: SpaceTimeGrid,
    spectrum: Vec<ComplexMoments>,
    correlation: Vec<ComplexMoments>,
}

impl GreenAccumulator {
    pub fn new(grid: SpaceTimeGrid) -> Self {
        Self {
            grid,
            spectrum: vec![ComplexMoments::default(); grid.len()],
            correlation: vec![ComplexMoments::default(); grid.len()],
        }
    }

    pub fn trials(&self) -> u64 {
        self.spectrum.first().map_or(0, |m| m.count)
    }

    /// Adds one noise realization. Within a trial the correlation is
    /// averaged over all positions, `C(l) = <F(n + l) F*(n)>_n`, computed as
    /// the inverse transform of `|f|^2 / V`.
    pub fn push(&mut self, fft: &LatticeFft, noise: &FieldState) -> Result<()> {
        self.grid
            .ensure_same(&noise.grid, "noise field and Green accumulator")?;
        let f = fft.forward(noise)?;
        let vol = self.grid.total_volume();
        let mut buf: Vec<Complex64> = f
            .values
            .iter()
            .map(|v| Complex64::new(v.norm_sqr() / vol, 0.0))
            .collect();
        for (m, p) in self.spectrum.iter_mut().zip(&buf) {
            m.push(*p);
        }
        fft.inverse_in_place(&mut buf);
        for (m, c) in self.correlation.iter_mut().zip(&buf) {
            m.push(*c);
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        self.grid.ensure_same(&other.grid, "Green accumulators")?;
        for (a, b) in self.spectrum.iter_mut().zip(&other.spectrum) {
            a.merge(b);
        }
        for (a, b) in self.correlation.iter_mut().zip(&other.correlation) {
            a.merge(b);
        }
        Ok(())
    }

    pub fn finish(&self, analytic: &GreenKernel) -> Result<GreenReport> {
        too_few(2, self.trials())?;
        self.grid.ensure_same(&analytic.grid, "noise fields and Green kernel")?;
        let fft = LatticeFft::new(self.grid);
        let mut analytic_correlation: Vec<Complex64> =
            analytic.values.iter().map(|&g| Complex64::new(g, 0.0)).collect();
        fft.inverse_in_place(&mut analytic_correlation);
        let (correlation_se_re, correlation_se_im) = self.correlation.iter().map(|m| m.standard_error()).unzip();
        Ok(GreenReport {
            grid: self.grid,
            trials: self.trials(),
            correlation: self.correlation.iter().map(|m| m.mean()).collect(),
            correlation_se_re,
            correlation_se_im,
            spectrum: self.spectrum.iter().map(|m| m.mean().re).collect(),
            spectrum_se: self.spectrum.iter().map(|m| m.standard_error().0).collect(),
            analytic_kernel: analytic.clone(),
            analytic_correlation,
        })
    }
}

/// Estimated noise correlation next to the closed form.
#[derive(Debug, Clone, PartialEq)]
pub struct GreenReport {
    pub grid: SpaceTimeGrid,
    pub trials: u64,
    /// `C(l) = <F(n + l) F*(n)>` indexed by lag.
    pub correlation: Vec<Complex64>,
    pub correlation_se_re: Vec<f64>,
    pub correlation_se_im: Vec<f64>,
    /// `<|f(k)|^2> / V`, the transform of `correlation`.
    pub spectrum: Vec<f64>,
    pub spectrum_se: Vec<f64>,
    pub analytic_kernel: GreenKernel,
    pub analytic_correlation: Vec<Complex64>,
}

impl GreenReport {
    pub fn zero_lag(&self) -> Complex64 {
        self.correlation[0]
    }

    /// RMS of `estimate / G - 1` over bins inside `fraction` of the band.
    pub fn in_band_rms_relative_error(&self, band: &Band, fraction: f64) -> f64 {
        let mask = band.mask(&self.grid, fraction);
        let (mut s, mut n) = (0.0, 0usize);
        for i in 0..mask.len() {
            if mask[i] {
                s += (self.spectrum[i] / self.analytic_kernel.values[i] - 1.0).powi(2);
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            (s / n as f64).sqrt()
        }
    }

    /// `(real, imaginary)` z-scores of the estimated correlation at a lag.
    pub fn z_scores(&self, lag: LatticeIndex) -> (f64, f64) {
        let i = self.grid.flat(lag);
        let c = self.correlation[i];
        (c.re / self.correlation_se_re[i], c.im / self.correlation_se_im[i])
    }

    /// Lags whose signed distance is within `radius` cells on every axis,
    /// excluding zero.
    pub fn lags_within(&self, radius: [i64; 3]) -> Vec<LatticeIndex> {
        self.grid
            .indices()
            .filter(|&l| {
                let s = self.grid.signed_index(l);
                s != [0, 0, 0] && (0..3).all(|a| s[a].abs() <= radius[a])
            })
            .collect()
    }

    /// Lags with a real part below zero by more than three standard errors.
    pub fn significant_negative_lags(&self, radius: [i64; 3]) -> Vec<LatticeIndex> {
        self.lags_within(radius)
            .into_iter()
            .filter(|&l| self.z_scores(l).0 < -3.0)
            .collect()
    }

    /// Three-sigma tally of every non-zero lag against zero. `C(-l)` is the
    /// conjugate of `C(l)` within each trial, so only one of each pair is
    /// counted.
    pub fn nonzero_lag_tally(&self) -> ZTally {
        let conj = self.grid.conjugate_table();
        let mut t = ZTally::default();
        for i in 1..self.correlation.len() {
            if conj[i] < i {
                continue;
            }
            let c = self.correlation[i];
            t.push_ratio(c.re, self.correlation_se_re[i]);
            t.push_ratio(c.im, self.correlation_se_im[i]);
        }
        t
    }
}

/// Green-function estimate from a batch of noise fields.
pub fn green_estimate(noise_fields: &[FieldState], analytic: &GreenKernel) -> Result<GreenReport> {
    let fft = LatticeFft::new(analytic.grid);
    let mut acc = GreenAccumulator::new(analytic.grid);
    for f in noise_fields {
        acc.push(&fft, f)?;
    }
    acc.finish(analytic)
}

/// Coarse-graining block in grid cells along `(x, y, t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockShape {
    pub bx: usize,
    pub by: usize,
    pub bt: usize,
}

impl BlockShape {
    pub const fn new(bx: usize, by: usize, bt: usize) -> Self {
        Self { bx, by, bt }
    }

    /// Number of blocks along each axis.
    pub fn counts(&self, grid: &SpaceTimeGrid) -> Result<[usize; 3]> {
        let b = [self.bx, self.by, self.bt];
        let g = grid.dims();
        if (0..3).any(|a| b[a] == 0 || !g[a].is_multiple_of(b[a])) {
            return Err(Error::BlockShape { block: b, grid: g });
        }
        Ok([g[0] / b[0], g[1] / b[1], g[2] / b[2]])
    }

    /// Block area `S` in physical units.
    pub fn area(&self, grid: &SpaceTimeGrid) -> f64 {
        self.bx as f64 * grid.dx * self.by as f64 * grid.dy
    }

    /// Block duration `T` in physical units.
    pub fn duration(&self, grid: &SpaceTimeGrid) -> f64 {
        self.bt as f64 * grid.dt
    }
}

/// Block averages `F(j, i) = (S T)^{-1/2} sum_block F dV`, ordered like the
/// lattice with block coordinates in place of cells.
pub fn block_averages(noise: &FieldState, block: BlockShape) -> Result<Vec<Complex64>> {
    noise.expect_domain(Domain::Position)?;
    let grid = noise.grid;
    let [cx, cy, ct] = block.counts(&grid)?;
    let scale = grid.cell_volume() / (block.area(&grid) * block.duration(&grid)).sqrt();
    let mut out = vec![Complex64::new(0.0, 0.0); cx * cy * ct];
    for idx in grid.indices() {
        let b = (idx.x / block.bx * cy + idx.y / block.by) * ct + idx.t / block.bt;
        out[b] += noise.values[grid.flat(idx)];
    }
    out.iter_mut().for_each(|v| *v *= scale);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseGrainAccumulator {
    grid: SpaceTimeGrid,
    block: BlockShape,
    counts: [usize; 3],
    mean: Vec<ComplexMoments>,
    cross: Vec<ComplexMoments>,
}

impl CoarseGrainAccumulator {
    pub fn new(grid: SpaceTimeGrid, block: BlockShape) -> Result<Self> {
        let counts = block.counts(&grid)?;
        let nb = counts.iter().product::<usize>();
        Ok(Self {
            grid,
            block,
            counts,
            mean: vec![ComplexMoments::default(); nb],
            cross: vec![ComplexMoments::default(); nb * nb],
        })
    }

    pub fn trials(&self) -> u64 {
        self.mean.first().map_or(0, |m| m.count)
    }

    pub fn push(&mut self, noise: &FieldState) -> Result<()> {
        self.grid
            .ensure_same(&noise.grid, "noise field and coarse-grain accumulator")?;
        let b = block_averages(noise, self.block)?;
        let nb = b.len();
        for j in 0..nb {
            self.mean[j].push(b[j]);
            for k in 0..nb {
                self.cross[j * nb + k].push(b[j] * b[k].conj());
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        self.grid.ensure_same(&other.grid, "coarse-grain accumulators")?;
        if self.block != other.block {
            return Err(Error::InvalidParameter(
                "coarse-grain accumulators use different blocks".into(),
            ));
        }
        for (a, b) in self.mean.iter_mut().zip(&other.mean) {
            a.merge(b);
        }
        for (a, b) in self.cross.iter_mut().zip(&other.cross) {
            a.merge(b);
        }
        Ok(())
    }

    /// Sample covariance `<F_a F_b*> - <F_a><F_b>*` with the `M/(M-1)`
    /// correction. Standard errors are those of the raw product means.
    pub fn finish(&self, analytic: &GreenKernel) -> Result<CoarseGrainReport> {
        too_few(2, self.trials())?;
        let m = self.trials() as f64;
        let nb = self.mean.len();
        let mut covariance = Vec::with_capacity(nb * nb);
        let mut se_re = Vec::with_capacity(nb * nb);
        let mut se_im = Vec::with_capacity(nb * nb);
        for j in 0..nb {
            for k in 0..nb {
                let c = &self.cross[j * nb + k];
                let mj = self.mean[j].mean();
                let mk = self.mean[k].mean();
                covariance.push((c.mean() - mj * mk.conj()) * (m / (m - 1.0)));
                let (sr, si) = c.standard_error();
                se_re.push(sr);
                se_im.push(si);
            }
        }
        Ok(CoarseGrainReport {
            grid: self.grid,
            block: self.block,
            counts: self.counts,
            block_area: self.block.area(&self.grid),
            block_duration: self.block.duration(&self.grid),
            trials: self.trials(),
            covariance,
            se_re,
            se_im,
            predicted_diagonal: analytic.values[0],
        })
    }
}

/// Covariance of block-averaged noise.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseGrainReport {
    pub grid: SpaceTimeGrid,
    pub block: BlockShape,
    pub counts: [usize; 3],
    pub block_area: f64,
    pub block_duration: f64,
    pub trials: u64,
    /// Row-major `blocks x blocks` matrix.
    pub covariance: Vec<Complex64>,
    pub se_re: Vec<f64>,
    pub se_im: Vec<f64>,
    /// Large-block limit `G(0, 0)`.
    pub predicted_diagonal: f64,
}

impl CoarseGrainReport {
    pub fn blocks(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let n = self.blocks();
        (0..n).map(|j| self.covariance[j * n + j].re).collect()
    }

    pub fn mean_diagonal(&self) -> f64 {
        let d = self.diagonal();
        d.iter().sum::<f64>() / d.len() as f64
    }

    /// Standard error of `mean_diagonal`, treating blocks as independent.
    pub fn mean_diagonal_se(&self) -> f64 {
        let n = self.blocks();
        let s: f64 = (0..n).map(|j| self.se_re[j * n + j].powi(2)).sum();
        s.sqrt() / n as f64
    }

    /// Largest `|C - C^dagger|` entry.
    pub fn hermiticity_residual(&self) -> f64 {
        let n = self.blocks();
        let mut worst = 0.0f64;
        for j in 0..n {
            for k in 0..n {
                worst = worst.max((self.covariance[j * n + k] - self.covariance[k * n + j].conj()).norm());
            }
        }
        worst
    }

    /// Three-sigma tally of the upper off-diagonal entries against zero.
    pub fn off_diagonal_tally(&self) -> ZTally {
        let n = self.blocks();
        let mut t = ZTally::default();
        for j in 0..n {
            for k in j + 1..n {
                let i = j * n + k;
                t.push_ratio(self.covariance[i].re, self.se_re[i]);
                t.push_ratio(self.covariance[i].im, self.se_im[i]);
            }
        }
        t
    }
}

/// Coarse-grained covariance of a batch of noise fields.
pub fn coarse_grain(
    noise_fields: &[FieldState],
    block: BlockShape,
    analytic: &GreenKernel,
) -> Result<CoarseGrainReport> {
    let mut acc = CoarseGrainAccumulator::new(analytic.grid, block)?;
    for f in noise_fields {
        acc.push(f)?;
    }
    acc.finish(analytic)
}

/// Fourth-moment probe `<F(n) F*(n + a) F(n + b) F*(n + c)>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WickLags {
    pub a: [i64; 3],
    pub b: [i64; 3],
    pub c: [i64; 3],
}

impl WickLags {
    /// `<|F(n)|^2 |F(n + l)|^2>`.
    pub fn intensity(l: [i64; 3]) -> Self {
        Self { a: [0; 3], b: l, c: l }
    }

    /// `<F(n)^2 F*(n + l)^2>`.
    pub fn squared(l: [i64; 3]) -> Self {
        Self { a: l, b: [0; 3], c: l }
    }

    /// Correlation lags entering the Wick sum
    /// `C(-a) C(b - c) + C(-c) C(b - a)`.
    fn pairings(&self) -> [[i64; 3]; 4] {
        let sub = |p: [i64; 3], q: [i64; 3]| [p[0] - q[0], p[1] - q[1], p[2] - q[2]];
        [
            sub([0; 3], self.a),
            sub(self.b, self.c),
            sub([0; 3], self.c),
            sub(self.b, self.a),
        ]
    }
}

/// Moment sums for the Gaussianity checks. Within a trial every moment is
/// averaged over all positions.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianityAccumulator {
    grid: SpaceTimeGrid,
    checks: Vec<WickLags>,
    lags: Vec<[i64; 3]>,
    second: ComplexMoments,
    fourth: ComplexMoments,
    circular: ComplexMoments,
    mixed: Vec<ComplexMoments>,
    correlation: Vec<ComplexMoments>,
}

impl GaussianityAccumulator {
    pub fn new(grid: SpaceTimeGrid, checks: &[WickLags]) -> Self {
        let mut lags: Vec<[i64; 3]> = Vec::new();
        for c in checks {
            for l in c.pairings() {
                if !lags.contains(&l) {
                    lags.push(l);
                }
            }
        }
        Self {
            grid,
            checks: checks.to_vec(),
            correlation: vec![ComplexMoments::default(); lags.len()],
            lags,
            second: ComplexMoments::default(),
            fourth: ComplexMoments::default(),
            circular: ComplexMoments::default(),
            mixed: vec![ComplexMoments::default(); checks.len()],
        }
    }

    pub fn trials(&self) -> u64 {
        self.second.count
    }

    pub fn push(&mut self, noise: &FieldState) -> Result<()> {
        self.grid
            .ensure_same(&noise.grid, "noise field and Gaussianity accumulator")?;
        noise.expect_domain(Domain::Position)?;
        let g = self.grid;
        let f = &noise.values;
        let n = f.len() as f64;
        let at = |idx: LatticeIndex, off: [i64; 3]| f[g.flat(g.shifted(idx, off))];
        let zero = Complex64::new(0.0, 0.0);
        let (mut s2, mut s4, mut sc) = (0.0, 0.0, zero);
        let mut mixed = vec![zero; self.checks.len()];
        let mut corr = vec![zero; self.lags.len()];
        for idx in g.indices() {
            let v = f[g.flat(idx)];
            let a2 = v.norm_sqr();
            s2 += a2;
            s4 += a2 * a2;
            sc += v * v;
            for (m, w) in mixed.iter_mut().zip(&self.checks) {
                *m += v * at(idx, w.a).conj() * at(idx, w.b) * at(idx, w.c).conj();
            }
            for (c, &l) in corr.iter_mut().zip(&self.lags) {
                *c += at(idx, l) * v.conj();
            }
        }
        self.second.push(Complex64::new(s2 / n, 0.0));
        self.fourth.push(Complex64::new(s4 / n, 0.0));
        self.circular.push(sc / n);
        for (acc, m) in self.mixed.iter_mut().zip(mixed) {
            acc.push(m / n);
        }
        for (acc, c) in self.correlation.iter_mut().zip(corr) {
            acc.push(c / n);
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        self.grid.ensure_same(&other.grid, "Gaussianity accumulators")?;
        if self.checks != other.checks {
            return Err(Error::InvalidParameter(
                "Gaussianity accumulators probe different lags".into(),
            ));
        }
        self.second.merge(&other.second);
        self.fourth.merge(&other.fourth);
        self.circular.merge(&other.circular);
        for (a, b) in self.mixed.iter_mut().zip(&other.mixed) {
            a.merge(b);
        }
        for (a, b) in self.correlation.iter_mut().zip(&other.correlation) {
            a.merge(b);
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<GaussianityReport> {
        too_few(GAUSSIANITY_MIN_TRIALS, self.trials())?;
        let m2 = self.second.mean().re;
        let m4 = self.fourth.mean().re;
        let ratio = m4 / (2.0 * m2 * m2);
        let se4 = self.fourth.standard_error().0;
        let se2 = self.second.standard_error().0;
        let zero_lag_se = ratio * ((se4 / m4).powi(2) + (2.0 * se2 / m2).powi(2)).sqrt();
        let c = |l: [i64; 3]| {
            let i = self
                .lags
                .iter()
                .position(|&x| x == l)
                .expect("lag registered at construction");
            self.correlation[i].mean()
        };
        let mixed = self
            .checks
            .iter()
            .zip(&self.mixed)
            .map(|(w, acc)| {
                let [p, q, r, s] = w.pairings();
                let wick = c(p) * c(q) + c(r) * c(s);
                let moment = acc.mean();
                WickCheck {
                    lags: *w,
                    moment,
                    wick,
                    ratio: moment / wick,
                }
            })
            .collect();
        let (cre, cim) = self.circular.standard_error();
        Ok(GaussianityReport {
            trials: self.trials(),
            second_moment: m2,
            fourth_moment: m4,
            zero_lag_ratio: ratio,
            zero_lag_se,
            circular: self.circular.mean(),
            circular_se: (cre, cim),
            mixed,
        })
    }
}

/// Smallest ensemble the Gaussianity check accepts.
pub const GAUSSIANITY_MIN_TRIALS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WickCheck {
    pub lags: WickLags,
    pub moment: Complex64,
    pub wick: Complex64,
    /// `moment / wick`.
    pub ratio: Complex64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianityReport {
    pub trials: u64,
    pub second_moment: f64,
    pub fourth_moment: f64,
    /// `<|F|^4> / (2 <|F|^2>^2)`.
    pub zero_lag_ratio: f64,
    pub zero_lag_se: f64,
    /// `<F F>`.
    pub circular: Complex64,
    pub circular_se: (f64, f64),
    pub mixed: Vec<WickCheck>,
}

impl GaussianityReport {
    /// Largest `|z|` of the real and imaginary parts of `<F F>`.
    pub fn circularity_z(&self) -> f64 {
        (self.circular.re / self.circular_se.0)
            .abs()
            .max((self.circular.im / self.circular_se.1).abs())
    }
}

/// Moment table for a batch of noise fields.
pub fn gaussianity_check(noise_fields: &[FieldState], checks: &[WickLags]) -> Result<GaussianityReport> {
    let grid = noise_fields.first().map(|f| f.grid).ok_or(Error::TooFewTrials {
        required: GAUSSIANITY_MIN_TRIALS,
        got: 0,
    })?;
    let mut acc = GaussianityAccumulator::new(grid, checks);
    for f in noise_fields {
        acc.push(f)?;
    }
    acc.finish()
}
