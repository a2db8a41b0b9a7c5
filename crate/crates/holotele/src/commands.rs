//! The `run`, `alice` and `bob` commands.
//!
//! Commands write their files through an [`ArtifactSink`], so tests can
//! keep everything in memory and compare bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use holotele_core::analysis::SpectrumEstimate;
use holotele_core::analysis::{
    compare_spectra, homodyne_project, CoarseGrainAccumulator, CoarseGrainReport, GreenAccumulator, GreenReport,
    SpectrumAccumulator, SpectrumReport, SpectrumTolerance, IN_BAND_FRACTION,
};
use holotele_core::kernel::{green_kernel, KernelPair};
use holotele_core::lattice::{Domain, FieldState, LatticeFft, Role};
use holotele_core::oracle::{propagate_exact, windowed_block_covariance, OracleReport};
use holotele_core::protocol::{bob_stage, PhotocurrentFrame, Teleporter};
use holotele_core::stochastic::RngSpec;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::config::{ConfigError, RunConfig};
use crate::formats::{encode_field, encode_frame, FormatError, FrameReader, Location, FRAME_B0_OFFSET};
use crate::reports::{
    coarse_csv, green_correlation_csv, green_spectrum_csv, spectrum_csv, CoarseSummary, GreenSummary, RunSummary,
    Source, SpectrumSummary,
};
use crate::runner::{fold_into, fold_trials, CHUNK};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("protocol error: {0}")]
    Format(#[from] FormatError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Core(#[from] holotele_core::Error),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn io(context: impl Into<String>, source: io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(ConfigError::Io { .. }) => EXIT_IO,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Format(_) | CliError::Io { .. } => EXIT_IO,
            CliError::Core(_) | CliError::Verification(_) => EXIT_VERIFY,
        }
    }
}

/// Destination for named output files.
pub trait ArtifactSink: Sync {
    fn put(&self, name: &str, bytes: &[u8]) -> Result<(), CliError>;
}

/// Writes artifacts below a directory, creating subdirectories.
#[derive(Debug, Clone)]
pub struct DirSink {
    root: PathBuf,
}

impl DirSink {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self, CliError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| CliError::io(format!("creating {}", root.display()), e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

impl ArtifactSink for DirSink {
    fn put(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
    }
}

/// Keeps artifacts in memory, keyed by name.
#[derive(Debug, Default)]
pub struct MemorySink {
    files: Mutex<BTreeMap<String, Vec<u8>>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_files(self) -> BTreeMap<String, Vec<u8>> {
        self.files.into_inner().expect("sink lock poisoned")
    }
}

impl ArtifactSink for MemorySink {
    fn put(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        self.files
            .lock()
            .expect("sink lock poisoned")
            .insert(name.to_string(), bytes.to_vec());
        Ok(())
    }
}

/// Discards everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl ArtifactSink for NullSink {
    fn put(&self, _name: &str, _bytes: &[u8]) -> Result<(), CliError> {
        Ok(())
    }
}

pub fn field_dump_name(trial: u64) -> String {
    format!("fields/a_out_{trial:06}.hfld")
}

/// Real array stored in the field container with zero imaginary parts.
fn real_container(
    report_grid: holotele_core::lattice::SpaceTimeGrid,
    domain: Domain,
    role: Role,
    values: &[f64],
) -> Vec<u8> {
    let values = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    encode_field(&FieldState::new(report_grid, domain, role, values).expect("report arrays match their grid"))
}

fn put_spectrum(sink: &dyn ArtifactSink, report: &SpectrumReport, kind: &str, role: Role) -> Result<(), CliError> {
    sink.put(&format!("{kind}.csv"), &spectrum_csv(report, Source::Mc, kind))?;
    sink.put(
        &format!("{kind}.hfld"),
        &real_container(report.grid, Domain::Fourier, role, &report.estimated),
    )
}

struct RunAcc {
    spec_in: SpectrumAccumulator,
    spec_out: SpectrumAccumulator,
    green: Option<GreenAccumulator>,
    coarse: Vec<CoarseGrainAccumulator>,
}

impl RunAcc {
    fn merge(&mut self, other: RunAcc) {
        const SAME: &str = "accumulators share one grid";
        self.spec_in.merge(&other.spec_in).expect(SAME);
        self.spec_out.merge(&other.spec_out).expect(SAME);
        if let (Some(a), Some(b)) = (&mut self.green, &other.green) {
            a.merge(b).expect(SAME);
        }
        for (a, b) in self.coarse.iter_mut().zip(&other.coarse) {
            a.merge(b).expect(SAME);
        }
    }
}

/// Summary plus the in-memory reports behind the files.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub spectrum_in: SpectrumReport,
    pub spectrum_out: SpectrumReport,
    pub green: Option<GreenReport>,
    pub coarse: Vec<CoarseGrainReport>,
}

/// Runs every trial in process and writes reports.
///
/// Bob reconstructs from 32-bit photocurrents here too, so the output
/// field matches what `alice | bob` produces.
pub fn cmd_run(cfg: &RunConfig, sink: &dyn ArtifactSink) -> Result<RunOutcome, CliError> {
    let tc = cfg.validate()?;
    let blocks = cfg.blocks()?;
    let tele = Teleporter::new(tc)?;
    let grid = *tele.grid();
    let protocol = tele.config().protocol;
    let (phi, a0, seed) = (cfg.analysis.phi, protocol.a0, cfg.seed);
    let want_green = cfg.analysis.green;
    let init = || RunAcc {
        spec_in: SpectrumAccumulator::new(grid),
        spec_out: SpectrumAccumulator::new(grid),
        green: want_green.then(|| GreenAccumulator::new(grid)),
        coarse: blocks
            .iter()
            .map(|&b| CoarseGrainAccumulator::new(grid, b).expect("block shapes validated"))
            .collect(),
    };
    let step = |acc: &mut RunAcc, i: u64| -> Result<(), CliError> {
        let rec = tele.run(&RngSpec::new(seed, i))?;
        let a_out = bob_stage(&rec.frame.quantized(), &rec.e2, &protocol)?;
        acc.spec_in
            .push_currents(tele.fft(), &homodyne_project(&rec.a_in, phi, a0)?)?;
        acc.spec_out
            .push_currents(tele.fft(), &homodyne_project(&a_out, phi, a0)?)?;
        if let Some(g) = &mut acc.green {
            g.push(tele.fft(), &rec.noise)?;
        }
        for c in &mut acc.coarse {
            c.push(&rec.noise)?;
        }
        if cfg.analysis.dump_fields {
            sink.put(&field_dump_name(i), &encode_field(&a_out))?;
        }
        Ok(())
    };
    let acc = fold_trials(cfg.trials, init, step, |a, b| a.merge(b))?;

    let pair = tele.kernels();
    let analytic = green_kernel(pair)?;
    let spectrum_in = SpectrumReport::input(acc.spec_in.finish()?, phi, a0);
    let spectrum_out = SpectrumReport::output(acc.spec_out.finish()?, phi, a0, pair)?;
    let cmp = compare_spectra(
        &spectrum_in,
        &spectrum_out,
        pair,
        SpectrumTolerance::for_trials(cfg.trials),
    )?;
    put_spectrum(sink, &spectrum_in, "spectrum_in", Role::AIn)?;
    put_spectrum(sink, &spectrum_out, "spectrum_out", Role::AOut)?;

    let green = match &acc.green {
        Some(g) => {
            let report = g.finish(&analytic)?;
            sink.put("green_correlation.csv", &green_correlation_csv(&report, Source::Mc))?;
            sink.put("green_spectrum.csv", &green_spectrum_csv(&report, Source::Mc))?;
            let corr: Vec<Complex64> = report.correlation.clone();
            sink.put(
                "green_correlation.hfld",
                &encode_field(&FieldState::new(grid, Domain::Position, Role::Noise, corr)?),
            )?;
            sink.put(
                "green_spectrum.hfld",
                &real_container(grid, Domain::Fourier, Role::Noise, &report.spectrum),
            )?;
            Some(report)
        }
        None => None,
    };

    let mut coarse = Vec::new();
    let mut coarse_reports = Vec::new();
    for c in &acc.coarse {
        let report = c.finish(&analytic)?;
        let predicted = windowed_block_covariance(&analytic, report.block)?;
        let b = report.block;
        sink.put(
            &format!("coarse_{}x{}x{}.csv", b.bx, b.by, b.bt),
            &coarse_csv(&report, &predicted, Source::Mc),
        )?;
        let tally = report.off_diagonal_tally();
        coarse.push(CoarseSummary {
            block: [b.bx, b.by, b.bt],
            mean_diagonal: report.mean_diagonal(),
            mean_diagonal_se: report.mean_diagonal_se(),
            predicted_diagonal: predicted[0].re,
            asymptote: report.predicted_diagonal,
            off_diagonal_exceedances: tally.exceed,
            off_diagonal_allowance: tally.allowance(),
        });
        coarse_reports.push(report);
    }

    let summary = RunSummary {
        seed,
        trials: cfg.trials,
        grid: grid.dims(),
        phi,
        spectrum: SpectrumSummary::new(&cmp, &spectrum_in, &spectrum_out),
        green: green.as_ref().map(|g| GreenSummary {
            zero_lag: [g.zero_lag().re, g.zero_lag().im],
            zero_lag_analytic: g.analytic_correlation[0].re,
            in_band_rms_relative_error: g.in_band_rms_relative_error(&pair.band(), IN_BAND_FRACTION),
        }),
        coarse,
        pass: cmp.aggregates_pass(),
    };
    let mut json = serde_json::to_vec_pretty(&summary).expect("summary serializes");
    json.push(b'\n');
    sink.put("summary.json", &json)?;
    Ok(RunOutcome {
        summary,
        spectrum_in,
        spectrum_out,
        green,
        coarse: coarse_reports,
    })
}

const STREAM_BATCH: u64 = CHUNK * 64;

/// Alice's process: measures every trial and writes the frame stream.
/// Returns the number of frames written.
pub fn cmd_alice<W: Write>(cfg: &RunConfig, out: W) -> Result<u64, CliError> {
    let tele = Teleporter::new(cfg.validate()?)?;
    let mut out = io::BufWriter::new(out);
    let mut start = 0;
    while start < cfg.trials {
        let end = (start + STREAM_BATCH).min(cfg.trials);
        let frames: Vec<Vec<u8>> = (start..end)
            .into_par_iter()
            .map(|i| Ok(encode_frame(&tele.alice(&RngSpec::new(cfg.seed, i))?)))
            .collect::<Result<_, CliError>>()?;
        for f in frames {
            out.write_all(&f).map_err(|e| CliError::io("writing frame stream", e))?;
        }
        start = end;
    }
    out.flush().map_err(|e| CliError::io("writing frame stream", e))?;
    Ok(cfg.trials)
}

#[derive(Debug, Clone)]
pub struct BobOutcome {
    pub frames: u64,
    pub spectrum_out: SpectrumReport,
}

/// Bob's process: reads the frame stream, reconstructs and dumps every
/// output field and writes the output spectrum.
pub fn cmd_bob<R: Read>(cfg: &RunConfig, input: R, sink: &dyn ArtifactSink) -> Result<BobOutcome, CliError> {
    let tele = Teleporter::new(cfg.validate()?)?;
    let grid = *tele.grid();
    let protocol = tele.config().protocol;
    let (phi, a0) = (cfg.analysis.phi, protocol.a0);
    let mut reader = FrameReader::new(io::BufReader::new(input), grid);
    let init = || SpectrumAccumulator::new(grid);
    let merge = |a: &mut SpectrumAccumulator, b: SpectrumAccumulator| a.merge(&b).expect("accumulators share one grid");
    let mut total = init();
    let mut start = 0u64;
    loop {
        let mut batch: Vec<PhotocurrentFrame> = Vec::new();
        while (batch.len() as u64) < STREAM_BATCH {
            let n = reader.frames();
            let frame_start = reader.offset();
            let Some(frame) = reader.next_frame()? else {
                break;
            };
            if n >= cfg.trials {
                return Err(FormatError::FrameCount {
                    expected: cfg.trials,
                    found: n + 1,
                }
                .into());
            }
            if frame.trial_index != n {
                return Err(FormatError::TrialOrder {
                    frame: n,
                    expected: n,
                    found: frame.trial_index,
                }
                .into());
            }
            if frame.b0 != protocol.b0 {
                return Err(FormatError::InvalidHeader {
                    at: Location {
                        frame: Some(n),
                        offset: frame_start + FRAME_B0_OFFSET as u64,
                    },
                    what: "B0",
                    detail: format!("{} differs from configured {}", frame.b0, protocol.b0),
                }
                .into());
            }
            batch.push(frame);
        }
        if batch.is_empty() {
            break;
        }
        let end = start + batch.len() as u64;
        let step = |acc: &mut SpectrumAccumulator, i: u64| -> Result<(), CliError> {
            let a_out = tele.bob(&batch[(i - start) as usize], cfg.seed)?;
            acc.push_currents(tele.fft(), &homodyne_project(&a_out, phi, a0)?)?;
            sink.put(&field_dump_name(i), &encode_field(&a_out))?;
            Ok(())
        };
        fold_into(&mut total, start..end, &init, &step, &merge)?;
        start = end;
    }
    if start != cfg.trials {
        return Err(FormatError::FrameCount {
            expected: cfg.trials,
            found: start,
        }
        .into());
    }
    let spectrum_out = SpectrumReport::output(total.finish()?, phi, a0, tele.kernels())?;
    put_spectrum(sink, &spectrum_out, "spectrum_out", Role::AOut)?;
    Ok(BobOutcome {
        frames: start,
        spectrum_out,
    })
}

/// Exact second moments on a tiny grid, written in the same formats as
/// `run` with `source=oracle`. Coarse graining uses the first configured
/// block shape.
pub fn cmd_oracle(cfg: &RunConfig, sink: &dyn ArtifactSink) -> Result<OracleReport, CliError> {
    let tc = cfg.teleport_config()?;
    let blocks = cfg.blocks()?;
    let (grid, phi, a0) = (tc.grid, cfg.analysis.phi, tc.protocol.a0);
    let pair = KernelPair::build(&tc.kernel, &grid)?;
    let exact = propagate_exact(&pair, &tc.protocol, &tc.input, phi, blocks.first().copied()).map_err(|e| match e {
        holotele_core::Error::OracleTooLarge { .. } => CliError::Config(ConfigError::Invalid(e.to_string())),
        e => e.into(),
    })?;
    let zeros = vec![0.0; grid.len()];
    let estimate = |values: &[f64]| SpectrumEstimate {
        grid,
        trials: 0,
        values: values.to_vec(),
        standard_error: zeros.clone(),
    };
    let spectrum_in = SpectrumReport::input(estimate(&exact.in_spectrum), phi, a0);
    let spectrum_out = SpectrumReport::output(estimate(&exact.out_spectrum), phi, a0, &pair)?;
    sink.put(
        "spectrum_in.csv",
        &spectrum_csv(&spectrum_in, Source::Oracle, "spectrum_in"),
    )?;
    sink.put(
        "spectrum_out.csv",
        &spectrum_csv(&spectrum_out, Source::Oracle, "spectrum_out"),
    )?;

    let analytic = green_kernel(&pair)?;
    let mut analytic_correlation: Vec<Complex64> = analytic.values.iter().map(|&g| Complex64::new(g, 0.0)).collect();
    LatticeFft::new(grid).inverse_in_place(&mut analytic_correlation);
    let green = GreenReport {
        grid,
        trials: 0,
        correlation: exact.green_correlation.clone(),
        correlation_se_re: zeros.clone(),
        correlation_se_im: zeros.clone(),
        spectrum: exact.green.clone(),
        spectrum_se: zeros.clone(),
        analytic_kernel: analytic.clone(),
        analytic_correlation,
    };
    sink.put("green_correlation.csv", &green_correlation_csv(&green, Source::Oracle))?;
    sink.put("green_spectrum.csv", &green_spectrum_csv(&green, Source::Oracle))?;

    if let Some((block, covariance)) = &exact.coarse {
        let cells = covariance.len();
        let report = CoarseGrainReport {
            grid,
            block: *block,
            counts: block.counts(&grid)?,
            block_area: block.area(&grid),
            block_duration: block.duration(&grid),
            trials: 0,
            covariance: covariance.clone(),
            se_re: vec![0.0; cells],
            se_im: vec![0.0; cells],
            predicted_diagonal: analytic.values[0],
        };
        let predicted = windowed_block_covariance(&analytic, *block)?;
        sink.put(
            &format!("coarse_{}x{}x{}.csv", block.bx, block.by, block.bt),
            &coarse_csv(&report, &predicted, Source::Oracle),
        )?;
    }
    Ok(exact)
}
