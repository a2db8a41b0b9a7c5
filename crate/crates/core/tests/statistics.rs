use std::f64::consts::PI;

use holotele_core::analysis::{
    compare_spectra, homodyne_project, BlockShape, CoarseGrainAccumulator, GaussianityAccumulator, GreenAccumulator,
    SpectrumAccumulator, SpectrumReport, SpectrumTolerance, WickLags,
};
use holotele_core::kernel::{green_kernel, KernelParams};
use holotele_core::lattice::SpaceTimeGrid;
use holotele_core::oracle::propagate_exact;
use holotele_core::protocol::{ProtocolParams, TeleportConfig, Teleporter};
use holotele_core::stochastic::{CoherentInputSpec, RngSpec};

fn teleporter(grid: SpaceTimeGrid, kernel: KernelParams) -> Teleporter {
    Teleporter::new(TeleportConfig {
        grid,
        kernel,
        protocol: ProtocolParams::default(),
        input: CoherentInputSpec::vacuum(),
    })
    .unwrap()
}

struct Spectra {
    input: SpectrumReport,
    output: SpectrumReport,
    green: holotele_core::analysis::GreenReport,
}

fn spectra(tele: &Teleporter, seed: u64, trials: u64, phi: f64) -> Spectra {
    let grid = *tele.grid();
    let a0 = tele.config().protocol.a0;
    let mut sin = SpectrumAccumulator::new(grid);
    let mut sout = SpectrumAccumulator::new(grid);
    let mut green = GreenAccumulator::new(grid);
    for i in 0..trials {
        let rec = tele.run(&RngSpec::new(seed, i)).unwrap();
        sin.push_currents(tele.fft(), &homodyne_project(&rec.a_in, phi, a0).unwrap())
            .unwrap();
        sout.push_currents(tele.fft(), &homodyne_project(&rec.a_out, phi, a0).unwrap())
            .unwrap();
        green.push(tele.fft(), &rec.noise).unwrap();
    }
    let pair = tele.kernels();
    Spectra {
        input: SpectrumReport::input(sin.finish().unwrap(), phi, a0),
        output: SpectrumReport::output(sout.finish().unwrap(), phi, a0, pair).unwrap(),
        green: green.finish(&green_kernel(pair).unwrap()).unwrap(),
    }
}

fn fraction_within_3se(estimate: &[f64], se: &[f64], exact: &[f64]) -> f64 {
    let ok = (0..estimate.len())
        .filter(|&i| ((estimate[i] - exact[i]) / se[i]).abs() < 3.0)
        .count();
    ok as f64 / estimate.len() as f64
}

#[test]
fn spectrum_estimator_is_unbiased_on_the_oracle() {
    let grid = SpaceTimeGrid::new(6, 6, 8, 1.0, 0.8, 1.2).unwrap();
    let kernel = KernelParams::gaussian_band(1.1, 3.0, 2.5, 0.6);
    let tele = teleporter(grid, kernel);
    let phi = 0.4;
    let s = spectra(&tele, 21, 600, phi);
    let exact = propagate_exact(tele.kernels(), &tele.config().protocol, &tele.config().input, phi, None).unwrap();
    for (est, se, x) in [
        (&s.input.estimated, &s.input.standard_error, &exact.in_spectrum),
        (&s.output.estimated, &s.output.standard_error, &exact.out_spectrum),
        (&s.green.spectrum, &s.green.spectrum_se, &exact.green),
    ] {
        let f = fraction_within_3se(est, se, x);
        assert!(f >= 0.95, "{f}");
        // pooled over all bins the bias must vanish too
        let z: f64 = (0..est.len()).map(|i| (est[i] - x[i]) / se[i]).sum::<f64>() / (est.len() as f64).sqrt();
        assert!(z.abs() < 4.0, "pooled z {z}");
    }
}

#[test]
fn verdict_does_not_depend_on_the_homodyne_angle() {
    let grid = SpaceTimeGrid::unit(8, 8, 32).unwrap();
    let tele = teleporter(grid, KernelParams::flat_band(1.0, PI, PI, 0.0));
    let trials = 500;
    let tol = SpectrumTolerance::for_trials(trials);
    let mut ratios = Vec::new();
    for (seed, phi) in [(1, 0.0), (2, PI / 2.0)] {
        let s = spectra(&tele, seed, trials, phi);
        let cmp = compare_spectra(&s.input, &s.output, tele.kernels(), tol).unwrap();
        assert!(cmp.aggregates_pass(), "phi {phi}");
        ratios.push(cmp.in_band_aggregate.unwrap().ratio);
    }
    assert!((ratios[0] - ratios[1]).abs() < tol.in_band, "{ratios:?}");
}

#[test]
fn green_estimate_matches_added_spectral_noise() {
    let grid = SpaceTimeGrid::unit(6, 6, 16).unwrap();
    let tele = teleporter(grid, KernelParams::flat_band(0.8, PI, PI, 0.3));
    let s = spectra(&tele, 5, 800, 0.0);
    let a0 = tele.config().protocol.a0;
    let mut within = 0;
    for i in 0..grid.len() {
        let added = (s.output.estimated[i] - s.input.estimated[i]) / (2.0 * a0 * a0);
        let se_added =
            (s.output.standard_error[i].powi(2) + s.input.standard_error[i].powi(2)).sqrt() / (2.0 * a0 * a0);
        let se = (se_added.powi(2) + s.green.spectrum_se[i].powi(2)).sqrt();
        if ((added - s.green.spectrum[i]) / se).abs() < 3.0 {
            within += 1;
        }
    }
    assert!(within as f64 >= 0.95 * grid.len() as f64, "{within} of {}", grid.len());
}

#[test]
fn coarse_diagonal_does_not_grow_with_block_size() {
    let grid = SpaceTimeGrid::unit(12, 12, 12).unwrap();
    let tele = teleporter(grid, KernelParams::flat_band(1.0, PI, PI, 0.0));
    let green = green_kernel(tele.kernels()).unwrap();
    let blocks = [2, 3, 6].map(|b| BlockShape::new(b, b, b));
    let mut accs: Vec<_> = blocks
        .iter()
        .map(|&b| CoarseGrainAccumulator::new(grid, b).unwrap())
        .collect();
    for i in 0..400 {
        let (e1, e2) = tele.epr(&RngSpec::new(8, i)).unwrap();
        let f = holotele_core::protocol::noise_field(&e1, &e2).unwrap();
        for a in &mut accs {
            a.push(&f).unwrap();
        }
    }
    let reports: Vec<_> = accs.iter().map(|a| a.finish(&green).unwrap()).collect();
    for w in reports.windows(2) {
        let slack = 3.0 * (w[0].mean_diagonal_se().powi(2) + w[1].mean_diagonal_se().powi(2)).sqrt();
        assert!(
            w[1].mean_diagonal() <= w[0].mean_diagonal() + slack,
            "{} then {}",
            w[0].mean_diagonal(),
            w[1].mean_diagonal()
        );
    }
}

#[test]
fn noise_is_circular() {
    let grid = SpaceTimeGrid::unit(4, 4, 8).unwrap();
    let kernel = KernelParams::flat_band(1.2, PI, PI, 0.7);
    let tele = teleporter(grid, kernel);
    let exact = propagate_exact(tele.kernels(), &tele.config().protocol, &tele.config().input, 0.0, None).unwrap();
    assert!(exact.noise_anomalous_max < 1e-12);
    let mut acc = GaussianityAccumulator::new(grid, &[WickLags::intensity([0, 0, 1])]);
    for i in 0..1500 {
        let (e1, e2) = tele.epr(&RngSpec::new(3, i)).unwrap();
        acc.push(&holotele_core::protocol::noise_field(&e1, &e2).unwrap())
            .unwrap();
    }
    let report = acc.finish().unwrap();
    assert!(report.circularity_z() < 3.5, "{}", report.circularity_z());
    assert!((report.zero_lag_ratio - 1.0).abs() < 0.1);
}
