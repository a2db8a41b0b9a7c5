//! CSV and JSON report files.
//!
//! Every CSV starts with one `#` comment line of `key=value` pairs, the
//! first being `source=mc` or `source=oracle`. Floats are written in the
//! shortest form that parses back to the same bits.

use std::collections::BTreeMap;

use holotele_core::analysis::{CoarseGrainReport, GreenReport, SpectrumComparison, SpectrumReport};
use holotele_core::lattice::SpaceTimeGrid;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Mc,
    Oracle,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Mc => "mc",
            Source::Oracle => "oracle",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("report has no `#` metadata line")]
    MissingMetadata,
    #[error("row {row}, column {column}: cannot parse {value:?}")]
    Number { row: usize, column: String, value: String },
}

/// A parsed CSV report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub meta: BTreeMap<String, String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl ReportTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

fn grid_meta(grid: &SpaceTimeGrid) -> Vec<(&'static str, String)> {
    vec![
        ("grid", format!("{}x{}x{}", grid.nx, grid.ny, grid.nt)),
        ("spacing", format!("{},{},{}", grid.dx, grid.dy, grid.dt)),
    ]
}

fn write_table(
    source: Source,
    meta: &[(&str, String)],
    header: &[&str],
    rows: impl Iterator<Item = Vec<f64>>,
) -> Vec<u8> {
    let mut out = format!("# source={}", source.as_str()).into_bytes();
    for (k, v) in meta {
        out.extend_from_slice(format!(" {k}={v}").as_bytes());
    }
    out.push(b'\n');
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).expect("writing to memory");
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))
            .expect("writing to memory");
    }
    w.into_inner().expect("writing to memory")
}

pub fn read_table(bytes: &[u8]) -> Result<ReportTable, ReportError> {
    let first = bytes.split(|&b| b == b'\n').next().unwrap_or_default();
    let line = std::str::from_utf8(first)
        .ok()
        .and_then(|l| l.strip_prefix('#'))
        .ok_or(ReportError::MissingMetadata)?;
    let meta = line
        .split_whitespace()
        .filter_map(|kv| kv.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(bytes);
    let columns: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let values = rec
            .iter()
            .zip(&columns)
            .map(|(v, c)| {
                v.parse::<f64>().map_err(|_| ReportError::Number {
                    row,
                    column: c.clone(),
                    value: v.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(values);
    }
    Ok(ReportTable { meta, columns, rows })
}

pub const SPECTRUM_COLUMNS: [&str; 9] = [
    "ix",
    "iy",
    "it",
    "qx",
    "qy",
    "omega",
    "estimate",
    "analytic",
    "standard_error",
];

/// One row per `(qx, qy, Omega)` bin.
pub fn spectrum_csv(report: &SpectrumReport, source: Source, kind: &str) -> Vec<u8> {
    let g = report.grid;
    let mut meta = vec![("kind", kind.to_string())];
    meta.extend(grid_meta(&g));
    meta.push(("phi", report.phi.to_string()));
    meta.push(("trials", report.trials.to_string()));
    let rows = g.indices().enumerate().map(|(n, idx)| {
        let [sx, sy, st] = g.signed_index(idx);
        let [qx, qy, w] = g.frequency(idx);
        vec![
            sx as f64,
            sy as f64,
            st as f64,
            qx,
            qy,
            w,
            report.estimated[n],
            report.analytic[n],
            report.standard_error[n],
        ]
    });
    write_table(source, &meta, &SPECTRUM_COLUMNS, rows)
}

pub const CORRELATION_COLUMNS: [&str; 12] = [
    "ix",
    "iy",
    "it",
    "lag_x",
    "lag_y",
    "lag_t",
    "estimate_re",
    "estimate_im",
    "analytic_re",
    "analytic_im",
    "se_re",
    "se_im",
];

/// One row per lag of the noise correlation.
pub fn green_correlation_csv(report: &GreenReport, source: Source) -> Vec<u8> {
    let g = report.grid;
    let mut meta = vec![("kind", "green_correlation".to_string())];
    meta.extend(grid_meta(&g));
    meta.push(("trials", report.trials.to_string()));
    let rows = g.indices().enumerate().map(|(n, idx)| {
        let [sx, sy, st] = g.signed_index(idx);
        let [lx, ly, lt] = g.lag(idx);
        let (e, a) = (report.correlation[n], report.analytic_correlation[n]);
        vec![
            sx as f64,
            sy as f64,
            st as f64,
            lx,
            ly,
            lt,
            e.re,
            e.im,
            a.re,
            a.im,
            report.correlation_se_re[n],
            report.correlation_se_im[n],
        ]
    });
    write_table(source, &meta, &CORRELATION_COLUMNS, rows)
}

/// One row per bin of the noise spectrum `G`.
pub fn green_spectrum_csv(report: &GreenReport, source: Source) -> Vec<u8> {
    let g = report.grid;
    let mut meta = vec![("kind", "green_spectrum".to_string())];
    meta.extend(grid_meta(&g));
    meta.push(("trials", report.trials.to_string()));
    let rows = g.indices().enumerate().map(|(n, idx)| {
        let [sx, sy, st] = g.signed_index(idx);
        let [qx, qy, w] = g.frequency(idx);
        vec![
            sx as f64,
            sy as f64,
            st as f64,
            qx,
            qy,
            w,
            report.spectrum[n],
            report.analytic_kernel.values[n],
            report.spectrum_se[n],
        ]
    });
    write_table(source, &meta, &SPECTRUM_COLUMNS, rows)
}

pub const COARSE_COLUMNS: [&str; 12] = [
    "jx",
    "jy",
    "it",
    "jx2",
    "jy2",
    "it2",
    "covariance_re",
    "covariance_im",
    "predicted_re",
    "predicted_im",
    "se_re",
    "se_im",
];

/// One row per block pair. `predicted` is the windowed covariance of the
/// analytic kernel.
pub fn coarse_csv(report: &CoarseGrainReport, predicted: &[Complex64], source: Source) -> Vec<u8> {
    let [cx, cy, ct] = report.counts;
    let nb = report.blocks();
    let b = report.block;
    let mut meta = vec![("kind", "coarse".to_string())];
    meta.extend(grid_meta(&report.grid));
    meta.push(("block", format!("{}x{}x{}", b.bx, b.by, b.bt)));
    meta.push(("trials", report.trials.to_string()));
    meta.push(("asymptote", report.predicted_diagonal.to_string()));
    let coords = move |k: usize| [(k / (cy * ct)) as f64, ((k / ct) % cy) as f64, (k % ct) as f64];
    debug_assert_eq!(cx * cy * ct, nb);
    let rows = (0..nb * nb).map(move |n| {
        let (a, c) = (n / nb, n % nb);
        let mut row = Vec::with_capacity(12);
        row.extend(coords(a));
        row.extend(coords(c));
        row.extend([
            report.covariance[n].re,
            report.covariance[n].im,
            predicted[n].re,
            predicted[n].im,
            report.se_re[n],
            report.se_im[n],
        ]);
        row
    });
    write_table(source, &meta, &COARSE_COLUMNS, rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateSummary {
    pub bins: usize,
    pub ratio: f64,
    pub analytic: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub in_band: Option<AggregateSummary>,
    pub out_of_band: Option<AggregateSummary>,
    pub per_bin_tolerance: f64,
    pub bins_outside_tolerance: usize,
    pub worst_bin: [i64; 3],
    pub worst_deviation: f64,
    pub input_rms_relative_error: f64,
    pub output_rms_relative_error: f64,
}

impl SpectrumSummary {
    pub fn new(cmp: &SpectrumComparison, input: &SpectrumReport, output: &SpectrumReport) -> Self {
        let agg = |a: &Option<holotele_core::analysis::BandAggregate>, tol: f64| {
            a.as_ref().map(|a| AggregateSummary {
                bins: a.bins,
                ratio: a.ratio,
                analytic: a.analytic,
                tolerance: tol,
                pass: a.pass,
            })
        };
        Self {
            in_band: agg(&cmp.in_band_aggregate, cmp.tolerance.in_band),
            out_of_band: agg(&cmp.out_of_band_aggregate, cmp.tolerance.out_of_band),
            per_bin_tolerance: cmp.tolerance.per_bin,
            bins_outside_tolerance: cmp.bins_outside_tolerance,
            worst_bin: cmp.grid.signed_index(cmp.worst_bin),
            worst_deviation: cmp.worst_deviation,
            input_rms_relative_error: input.rms_relative_error(),
            output_rms_relative_error: output.rms_relative_error(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreenSummary {
    pub zero_lag: [f64; 2],
    pub zero_lag_analytic: f64,
    pub in_band_rms_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseSummary {
    pub block: [usize; 3],
    pub mean_diagonal: f64,
    pub mean_diagonal_se: f64,
    pub predicted_diagonal: f64,
    pub asymptote: f64,
    pub off_diagonal_exceedances: usize,
    pub off_diagonal_allowance: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub trials: u64,
    pub grid: [usize; 3],
    pub phi: f64,
    pub spectrum: SpectrumSummary,
    pub green: Option<GreenSummary>,
    pub coarse: Vec<CoarseSummary>,
    pub pass: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use holotele_core::analysis::SpectrumEstimate;

    fn report() -> SpectrumReport {
        let grid = SpaceTimeGrid::new(2, 2, 4, 0.5, 1.0, 0.25).unwrap();
        let n = grid.len();
        let est = SpectrumEstimate {
            grid,
            trials: 7,
            values: (0..n).map(|i| 1.0 / (i as f64 + 3.0)).collect(),
            standard_error: (0..n).map(|i| (i as f64).sqrt() * 1e-3).collect(),
        };
        SpectrumReport::input(est, 0.1, 1.0)
    }

    #[test]
    fn spectrum_csv_round_trips() {
        let r = report();
        let bytes = spectrum_csv(&r, Source::Mc, "spectrum_in");
        let t = read_table(&bytes).unwrap();
        assert_eq!(t.meta["source"], "mc");
        assert_eq!(t.meta["kind"], "spectrum_in");
        assert_eq!(t.meta["grid"], "2x2x4");
        assert_eq!(t.meta["trials"], "7");
        assert_eq!(t.columns, SPECTRUM_COLUMNS);
        assert_eq!(t.column("estimate").unwrap(), r.estimated);
        assert_eq!(t.column("analytic").unwrap(), r.analytic);
        assert_eq!(t.column("standard_error").unwrap(), r.standard_error);
        assert_eq!(t.column("it").unwrap()[2], -2.0);
        assert_eq!(t.column("it").unwrap()[3], -1.0);
    }

    #[test]
    fn oracle_flag_is_written() {
        let t = read_table(&spectrum_csv(&report(), Source::Oracle, "spectrum_out")).unwrap();
        assert_eq!(t.meta["source"], "oracle");
    }

    #[test]
    fn reader_rejects_bad_input() {
        assert!(matches!(read_table(b"a,b\n1,2\n"), Err(ReportError::MissingMetadata)));
        assert!(matches!(
            read_table(b"# source=mc\na,b\n1,x\n"),
            Err(ReportError::Number { row: 0, .. })
        ));
    }
}
