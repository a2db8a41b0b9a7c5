//! Phase-space (symmetric-ordering) samples of vacuum, squeezed and
//! coherent-plus-vacuum fields.
//!
//! A vacuum Fourier mode is a circular complex Gaussian `alpha` with
//! `<|alpha|^2> = 1/2`; the stored Fourier amplitude is `sqrt(V) alpha` with
//! `V` the space-time volume of the window. In position space this gives
//! `<|A|^2> = 1 / (2 dx dy dt)`, the discrete form of a delta commutator.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kernel::{Opa, SqueezingKernel};
use crate::lattice::{Domain, FieldState, Role, SpaceTimeGrid};

/// Independent noise sources of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamLabel {
    Opa1Vacuum,
    Opa2Vacuum,
    InputVacuum,
}

impl StreamLabel {
    fn code(self) -> u64 {
        match self {
            StreamLabel::Opa1Vacuum => 1,
            StreamLabel::Opa2Vacuum => 2,
            StreamLabel::InputVacuum => 3,
        }
    }

    pub fn for_opa(opa: Opa) -> Self {
        match opa {
            Opa::First => StreamLabel::Opa1Vacuum,
            Opa::Second => StreamLabel::Opa2Vacuum,
        }
    }
}

/// Seed material of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngSpec {
    pub master_seed: u64,
    pub trial_index: u64,
}

impl RngSpec {
    pub const fn new(master_seed: u64, trial_index: u64) -> Self {
        Self {
            master_seed,
            trial_index,
        }
    }

    /// Generator for one stream of this trial. The ChaCha key comes from the
    /// master seed and the stream id packs `(trial_index, label)`, so the
    /// result depends on nothing else.
    pub fn stream(&self, label: StreamLabel) -> ChaCha12Rng {
        assert!(self.trial_index < 1 << 62, "trial index out of range");
        let mut rng = ChaCha12Rng::seed_from_u64(self.master_seed);
        rng.set_stream((self.trial_index << 2) | label.code());
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoherentInputSpec {
    /// Plane-wave amplitude carried by the `q = 0, W = 0` mode.
    pub amplitude: Complex64,
}

impl CoherentInputSpec {
    pub fn vacuum() -> Self {
        Self {
            amplitude: Complex64::new(0.0, 0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.amplitude.re.is_finite() && self.amplitude.im.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(alloc::format!(
                "input amplitude must be finite, got {}",
                self.amplitude
            )))
        }
    }
}

fn fill_vacuum(grid: &SpaceTimeGrid, label: StreamLabel, rng: &RngSpec, role: Role) -> FieldState {
    let mut gen = rng.stream(label);
    let scale = 0.5 * grid.total_volume().sqrt();
    let mut field = FieldState::zeros(*grid, Domain::Fourier, role);
    for v in field.values.iter_mut() {
        let re: f64 = StandardNormal.sample(&mut gen);
        let im: f64 = StandardNormal.sample(&mut gen);
        *v = Complex64::new(re, im) * scale;
    }
    field
}

/// Vacuum sample in the Fourier domain.
pub fn sample_vacuum(grid: &SpaceTimeGrid, rng: &RngSpec, label: StreamLabel) -> FieldState {
    fill_vacuum(grid, label, rng, Role::Vacuum)
}

/// `s(k) = U(k) a(k) + V(k) a*(-k)`, reading only the input array.
pub fn apply_squeezing(vac: &FieldState, kernel: &SqueezingKernel) -> Result<FieldState> {
    vac.expect_domain(Domain::Fourier)?;
    kernel
        .grid
        .ensure_same(&vac.grid, "vacuum field and squeezing kernel")?;
    let conj = vac.grid.conjugate_table();
    let values = (0..vac.values.len())
        .map(|i| kernel.u[i] * vac.values[i] + kernel.v[i] * vac.values[conj[i]].conj())
        .collect();
    let role = match kernel.opa {
        Opa::First => Role::Squeezed1,
        Opa::Second => Role::Squeezed2,
    };
    FieldState::new(vac.grid, Domain::Fourier, role, values)
}

/// Vacuum plus a deterministic plane wave of the given amplitude. The
/// amplitude sits in the zero-frequency bin, scaled so that the position
/// field has that mean at every pixel.
pub fn sample_coherent_input(grid: &SpaceTimeGrid, spec: &CoherentInputSpec, rng: &RngSpec) -> FieldState {
    let mut field = fill_vacuum(grid, StreamLabel::InputVacuum, rng, Role::AIn);
    field.values[0] += spec.amplitude * grid.total_volume();
    field
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{build_kernel, KernelParams};
    use crate::lattice::{inverse_transform, LatticeIndex};
    use alloc::vec;
    use alloc::vec::Vec;
    use core::f64::consts::PI;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn mode_units(f: &FieldState) -> Vec<Complex64> {
        let s = f.grid.total_volume().sqrt();
        f.values.iter().map(|v| v / s).collect()
    }

    #[test]
    fn identical_seeds_give_identical_samples() {
        let g = SpaceTimeGrid::unit(4, 4, 4).unwrap();
        let a = sample_vacuum(&g, &RngSpec::new(7, 3), StreamLabel::Opa1Vacuum);
        let b = sample_vacuum(&g, &RngSpec::new(7, 3), StreamLabel::Opa1Vacuum);
        assert_eq!(a, b);
        let c = sample_vacuum(&g, &RngSpec::new(7, 4), StreamLabel::Opa1Vacuum);
        let d = sample_vacuum(&g, &RngSpec::new(7, 3), StreamLabel::Opa2Vacuum);
        let e = sample_vacuum(&g, &RngSpec::new(8, 3), StreamLabel::Opa1Vacuum);
        assert_ne!(a.values, c.values);
        assert_ne!(a.values, d.values);
        assert_ne!(a.values, e.values);
    }

    #[test]
    fn vacuum_has_zero_mean_and_half_quantum() {
        let g = SpaceTimeGrid::new(2, 2, 2, 0.5, 1.5, 2.0).unwrap();
        let trials = 100_000;
        let mut sum = vec![Complex64::new(0.0, 0.0); g.len()];
        let mut sq = vec![0.0; g.len()];
        for t in 0..trials {
            let a = mode_units(&sample_vacuum(&g, &RngSpec::new(1, t), StreamLabel::InputVacuum));
            for (i, v) in a.iter().enumerate() {
                sum[i] += v;
                sq[i] += v.norm_sqr();
            }
        }
        for i in 0..g.len() {
            let mean = sum[i] / trials as f64;
            // each quadrature has variance 1/4
            let se = (0.25 / trials as f64).sqrt();
            assert!(mean.re.abs() < 5.0 * se && mean.im.abs() < 5.0 * se);
            let var = sq[i] / trials as f64;
            assert!((var - 0.5).abs() < 0.03 * 0.5, "mode {i}: {var}");
        }
    }

    #[test]
    fn vacuum_variance_is_uniform_across_modes() {
        // Homogeneity chi-square test at 1% significance.
        let g = SpaceTimeGrid::unit(4, 4, 4).unwrap();
        let trials = 10_000u64;
        let mut sq = vec![0.0; g.len()];
        for t in 0..trials {
            let a = mode_units(&sample_vacuum(&g, &RngSpec::new(99, t), StreamLabel::Opa2Vacuum));
            for (i, v) in a.iter().enumerate() {
                sq[i] += 4.0 * v.norm_sqr();
            }
        }
        // 4|alpha|^2 ~ chi^2_2, so each mode's sum ~ chi^2 with 2M dof,
        // variance 4M; compare the spread of the sums to that.
        let m = trials as f64;
        let mean = sq.iter().sum::<f64>() / sq.len() as f64;
        let stat: f64 = sq.iter().map(|s| (s - mean).powi(2) / (4.0 * m)).sum();
        let dof = (g.len() - 1) as f64;
        let crit = ChiSquared::new(dof).unwrap().inverse_cdf(0.99);
        assert!(stat < crit, "chi2 {stat} vs {crit}");
        assert!((mean / (2.0 * m) - 1.0).abs() < 0.01);
    }

    #[test]
    fn identity_kernel_leaves_field_unchanged() {
        let g = SpaceTimeGrid::unit(4, 2, 4).unwrap();
        let k = build_kernel(&KernelParams::flat_band(0.0, PI, PI, 0.0), &g, Opa::First).unwrap();
        let vac = sample_vacuum(&g, &RngSpec::new(3, 0), StreamLabel::Opa1Vacuum);
        let s = apply_squeezing(&vac, &k).unwrap();
        assert_eq!(s.values, vac.values);
        assert_eq!(s.role, Role::Squeezed1);
    }

    #[test]
    fn squeezing_checks_domain_and_grid() {
        let g = SpaceTimeGrid::unit(4, 2, 4).unwrap();
        let k = build_kernel(&KernelParams::flat_band(1.0, PI, PI, 0.0), &g, Opa::First).unwrap();
        let pos = FieldState::zeros(g, Domain::Position, Role::Vacuum);
        assert!(matches!(apply_squeezing(&pos, &k), Err(Error::WrongDomain { .. })));
        let other = SpaceTimeGrid::unit(2, 2, 4).unwrap();
        let vac = sample_vacuum(&other, &RngSpec::new(3, 0), StreamLabel::Opa1Vacuum);
        assert!(matches!(apply_squeezing(&vac, &k), Err(Error::GridMismatch(_))));
    }

    /// Covariance of `(Re a(k), Im a(k), Re a(-k), Im a(-k))` after the
    /// Bogoliubov map, propagated by hand from the vacuum value `I/4`.
    fn pair_covariance_oracle(u: [Complex64; 2], v: [Complex64; 2]) -> [[f64; 4]; 4] {
        // s(k)  = u0 a(k)  + v0 a*(-k)
        // s(-k) = u1 a(-k) + v1 a*(k)
        // rows: Re s(k), Im s(k), Re s(-k), Im s(-k); columns: Re a(k), Im a(k), Re a(-k), Im a(-k)
        let row = |c_same: Complex64, c_conj: Complex64, same_first: bool| -> [[f64; 4]; 2] {
            // z = c_same (x + i y) + c_conj (x' - i y')
            let re_same = [c_same.re, -c_same.im];
            let im_same = [c_same.im, c_same.re];
            let re_conj = [c_conj.re, c_conj.im];
            let im_conj = [c_conj.im, -c_conj.re];
            if same_first {
                [
                    [re_same[0], re_same[1], re_conj[0], re_conj[1]],
                    [im_same[0], im_same[1], im_conj[0], im_conj[1]],
                ]
            } else {
                [
                    [re_conj[0], re_conj[1], re_same[0], re_same[1]],
                    [im_conj[0], im_conj[1], im_same[0], im_same[1]],
                ]
            }
        };
        let top = row(u[0], v[0], true);
        let bottom = row(u[1], v[1], false);
        let m = [top[0], top[1], bottom[0], bottom[1]];
        let mut cov = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                cov[i][j] = 0.25 * (0..4).map(|l| m[i][l] * m[j][l]).sum::<f64>();
            }
        }
        cov
    }

    fn sampled_pair_covariance(
        g: &SpaceTimeGrid,
        k: &SqueezingKernel,
        idx: LatticeIndex,
        trials: u64,
    ) -> [[f64; 4]; 4] {
        let i = g.flat(idx);
        let j = g.flat(g.conjugate_mode_index(idx));
        let mut acc = [[0.0; 4]; 4];
        for t in 0..trials {
            let vac = sample_vacuum(g, &RngSpec::new(5, t), StreamLabel::Opa1Vacuum);
            let s = mode_units(&apply_squeezing(&vac, k).unwrap());
            let x = [s[i].re, s[i].im, s[j].re, s[j].im];
            for a in 0..4 {
                for b in 0..4 {
                    acc[a][b] += x[a] * x[b];
                }
            }
        }
        acc.map(|r| r.map(|v| v / trials as f64))
    }

    #[test]
    fn squeezed_pair_covariance_matches_bogoliubov_oracle() {
        let g = SpaceTimeGrid::unit(4, 4, 8).unwrap();
        let k = build_kernel(&KernelParams::flat_band(1.0, PI, PI, 0.35), &g, Opa::First).unwrap();
        let idx = LatticeIndex::new(1, 0, 1);
        let i = g.flat(idx);
        let j = g.flat(g.conjugate_mode_index(idx));
        let want = pair_covariance_oracle([k.u[i], k.u[j]], [k.v[i], k.v[j]]);
        let got = sampled_pair_covariance(&g, &k, idx, 10_000);
        let scale = want.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        for a in 0..4 {
            for b in 0..4 {
                assert!(
                    (got[a][b] - want[a][b]).abs() < 0.05 * scale,
                    "entry ({a},{b}): {} vs {}",
                    got[a][b],
                    want[a][b]
                );
            }
        }
    }

    #[test]
    fn squeezed_quadrature_drops_to_e_minus_2r() {
        // psi = 0: s(k) - s*(-k) = e^{-r} (a(k) - a*(-k)), whose vacuum
        // variance is 1 in mode units.
        let g = SpaceTimeGrid::unit(4, 4, 8).unwrap();
        let k = build_kernel(&KernelParams::flat_band(1.0, PI, PI, 0.0), &g, Opa::First).unwrap();
        let idx = LatticeIndex::new(1, 0, 1);
        let i = g.flat(idx);
        let j = g.flat(g.conjugate_mode_index(idx));
        let trials = 10_000;
        let (mut sq, mut anti, mut energy) = (0.0, 0.0, 0.0);
        for t in 0..trials {
            let vac = sample_vacuum(&g, &RngSpec::new(6, t), StreamLabel::Opa1Vacuum);
            let s = mode_units(&apply_squeezing(&vac, &k).unwrap());
            sq += (s[i] - s[j].conj()).norm_sqr();
            anti += (s[i] + s[j].conj()).norm_sqr();
            energy += s[i].norm_sqr();
        }
        let n = trials as f64;
        let e2 = (-2.0f64).exp();
        assert!((sq / n - e2).abs() < 0.05 * e2);
        assert!((anti / n - 1.0 / e2).abs() < 0.05 / e2);
        let want = 0.5 * (k.u[i].norm_sqr() + k.v[i].norm_sqr());
        assert!((energy / n - want).abs() < 0.05 * want);
    }

    #[test]
    fn coherent_input_mean_is_the_amplitude() {
        let g = SpaceTimeGrid::new(2, 2, 4, 0.5, 0.5, 1.0).unwrap();
        let c = Complex64::new(1.25, -0.75);
        let spec = CoherentInputSpec { amplitude: c };
        let trials = 4000;
        let mut sum = vec![Complex64::new(0.0, 0.0); g.len()];
        for t in 0..trials {
            let f = inverse_transform(&sample_coherent_input(&g, &spec, &RngSpec::new(2, t))).unwrap();
            for (s, v) in sum.iter_mut().zip(&f.values) {
                *s += v;
            }
        }
        // per-pixel quadrature variance 1/(4 dV), dV = 0.25
        let se = (1.0 / (4.0 * 0.25) / trials as f64).sqrt();
        for s in sum {
            let m = s / trials as f64;
            assert!((m - c).re.abs() < 5.0 * se && (m - c).im.abs() < 5.0 * se);
        }
    }

    #[test]
    fn zero_amplitude_input_is_plain_vacuum() {
        let g = SpaceTimeGrid::unit(2, 2, 2).unwrap();
        let rng = RngSpec::new(4, 9);
        let input = sample_coherent_input(&g, &CoherentInputSpec::vacuum(), &rng);
        let mut vac = sample_vacuum(&g, &rng, StreamLabel::InputVacuum);
        vac.role = Role::AIn;
        assert_eq!(input, vac);
    }
}
