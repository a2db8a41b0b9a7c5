//! Little-endian binary containers: kernel tables (`HKRN`), field dumps
//! (`HFLD`) and the Alice-to-Bob photocurrent frame stream (`HTPF`).

use std::fmt;
use std::io::{self, Read, Write};

use holotele_core::kernel::KernelTable;
use holotele_core::lattice::{Domain, FieldState, Role, SpaceTimeGrid};
use holotele_core::protocol::PhotocurrentFrame;
use num_complex::Complex64;

pub const KERNEL_MAGIC: [u8; 4] = *b"HKRN";
pub const FIELD_MAGIC: [u8; 4] = *b"HFLD";
pub const FRAME_MAGIC: [u8; 4] = *b"HTPF";
pub const FORMAT_VERSION: u32 = 1;

/// Frame header: magic, version, trial index, three dimensions, `B0`.
pub const FRAME_HEADER_LEN: usize = 4 + 4 + 8 + 3 * 4 + 8;
/// Offset of `B0` within a frame.
pub const FRAME_B0_OFFSET: usize = 28;

/// Where in a stream a problem was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Location {
    /// Frame number for frame streams.
    pub frame: Option<u64>,
    /// Byte offset from the start of the stream.
    pub offset: u64,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.frame {
            Some(n) => write!(f, "frame {n}, byte offset {}", self.offset),
            None => write!(f, "byte offset {}", self.offset),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic at {at}: expected {expected:?}, found {found:?}")]
    BadMagic {
        at: Location,
        expected: String,
        found: String,
    },
    #[error("unsupported version {version} at {at}")]
    UnsupportedVersion { at: Location, version: u32 },
    #[error("stream ended at {at} while reading {what} ({missing} more bytes needed)")]
    UnexpectedEof {
        at: Location,
        what: &'static str,
        missing: usize,
    },
    #[error("invalid {what} at {at}: {detail}")]
    InvalidHeader {
        at: Location,
        what: &'static str,
        detail: String,
    },
    #[error("frame {frame} carries trial {found}, expected trial {expected}")]
    TrialOrder { frame: u64, expected: u64, found: u64 },
    #[error("stream held {found} frames, configuration expects {expected}")]
    FrameCount { expected: u64, found: u64 },
    #[error(transparent)]
    Core(#[from] holotele_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Reader that tracks the byte offset and turns short reads into
/// located EOF errors.
struct Cursor<R> {
    inner: R,
    offset: u64,
    frame: Option<u64>,
}

impl<R: Read> Cursor<R> {
    fn new(inner: R) -> Self {
        Self {
            inner,
            offset: 0,
            frame: None,
        }
    }

    fn at(&self) -> Location {
        Location {
            frame: self.frame,
            offset: self.offset,
        }
    }

    /// Fills `buf`, returning the number of bytes read before EOF.
    fn fill(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let mut got = 0;
        while got < buf.len() {
            match self.inner.read(&mut buf[got..]) {
                Ok(0) => break,
                Ok(n) => got += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e),
            }
        }
        self.offset += got as u64;
        Ok(got)
    }

    fn exact(&mut self, buf: &mut [u8], what: &'static str) -> Result<(), FormatError> {
        let start = self.at();
        let got = self.fill(buf)?;
        if got < buf.len() {
            return Err(FormatError::UnexpectedEof {
                at: Location {
                    offset: start.offset + got as u64,
                    ..start
                },
                what,
                missing: buf.len() - got,
            });
        }
        Ok(())
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, FormatError> {
        let mut b = [0; 4];
        self.exact(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, FormatError> {
        let mut b = [0; 8];
        self.exact(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64, FormatError> {
        let mut b = [0; 8];
        self.exact(&mut b, what)?;
        Ok(f64::from_le_bytes(b))
    }

    fn magic_and_version(&mut self, expected: [u8; 4], first: [u8; 4]) -> Result<(), FormatError> {
        if first != expected {
            return Err(FormatError::BadMagic {
                at: Location {
                    offset: self.offset - 4,
                    ..self.at()
                },
                expected: String::from_utf8_lossy(&expected).into_owned(),
                found: String::from_utf8_lossy(&first).escape_debug().to_string(),
            });
        }
        let at = self.at();
        let version = self.u32("format version")?;
        if version != FORMAT_VERSION {
            return Err(FormatError::UnsupportedVersion { at, version });
        }
        Ok(())
    }

    fn header_start(&mut self, expected: [u8; 4]) -> Result<(), FormatError> {
        let mut m = [0; 4];
        self.exact(&mut m, "magic")?;
        self.magic_and_version(expected, m)
    }

    fn dims(&mut self) -> Result<[usize; 3], FormatError> {
        let at = self.at();
        let d = [
            self.u32("dimensions")?,
            self.u32("dimensions")?,
            self.u32("dimensions")?,
        ];
        if d.contains(&0) {
            return Err(FormatError::InvalidHeader {
                at,
                what: "dimensions",
                detail: format!("{d:?} has a zero axis"),
            });
        }
        Ok(d.map(|v| v as usize))
    }

    fn complex_array(&mut self, n: usize, what: &'static str) -> Result<Vec<Complex64>, FormatError> {
        let mut buf = vec![0u8; 16 * n];
        self.exact(&mut buf, what)?;
        Ok(buf
            .chunks_exact(16)
            .map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..].try_into().unwrap()),
                )
            })
            .collect())
    }
}

fn put_complex(out: &mut Vec<u8>, values: &[Complex64]) {
    for v in values {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
}

fn put_dims(out: &mut Vec<u8>, dims: [usize; 3]) {
    for d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
}

pub fn encode_kernel_table(table: &KernelTable) -> Vec<u8> {
    let mut out = Vec::with_capacity(44 + 32 * table.u.len());
    out.extend_from_slice(&KERNEL_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_dims(&mut out, table.dims);
    for s in table.spacing {
        out.extend_from_slice(&s.to_le_bytes());
    }
    put_complex(&mut out, &table.u);
    put_complex(&mut out, &table.v);
    out
}

pub fn read_kernel_table<R: Read>(r: R) -> Result<KernelTable, FormatError> {
    let mut c = Cursor::new(r);
    c.header_start(KERNEL_MAGIC)?;
    let dims = c.dims()?;
    let spacing = [c.f64("spacing")?, c.f64("spacing")?, c.f64("spacing")?];
    let n = dims.iter().product();
    let u = c.complex_array(n, "U table")?;
    let v = c.complex_array(n, "V table")?;
    Ok(KernelTable { dims, spacing, u, v })
}

pub fn encode_field(field: &FieldState) -> Vec<u8> {
    let g = &field.grid;
    let mut out = Vec::with_capacity(56 + 16 * field.values.len());
    out.extend_from_slice(&FIELD_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_dims(&mut out, g.dims());
    for s in [g.dx, g.dy, g.dt] {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out.extend_from_slice(&field.domain.code().to_le_bytes());
    out.extend_from_slice(&field.role.code().to_le_bytes());
    put_complex(&mut out, &field.values);
    out
}

pub fn read_field<R: Read>(r: R) -> Result<FieldState, FormatError> {
    let mut c = Cursor::new(r);
    c.header_start(FIELD_MAGIC)?;
    let [nx, ny, nt] = c.dims()?;
    let at = c.at();
    let (dx, dy, dt) = (c.f64("spacing")?, c.f64("spacing")?, c.f64("spacing")?);
    let grid = SpaceTimeGrid::new(nx, ny, nt, dx, dy, dt).map_err(|e| FormatError::InvalidHeader {
        at,
        what: "grid",
        detail: e.to_string(),
    })?;
    let at = c.at();
    let domain = c.u32("domain tag")?;
    let domain = Domain::from_code(domain).ok_or_else(|| FormatError::InvalidHeader {
        at,
        what: "domain tag",
        detail: format!("unknown value {domain}"),
    })?;
    let at = c.at();
    let role = c.u32("role tag")?;
    let role = Role::from_code(role).ok_or_else(|| FormatError::InvalidHeader {
        at,
        what: "role tag",
        detail: format!("unknown value {role}"),
    })?;
    let values = c.complex_array(grid.len(), "field values")?;
    Ok(FieldState::new(grid, domain, role, values)?)
}

/// Encodes one frame. Currents are narrowed to 32-bit floats.
pub fn encode_frame(frame: &PhotocurrentFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + 8 * frame.i_x.len());
    out.extend_from_slice(&FRAME_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&frame.trial_index.to_le_bytes());
    put_dims(&mut out, frame.grid.dims());
    out.extend_from_slice(&frame.b0.to_le_bytes());
    for v in frame.i_x.iter().chain(&frame.i_p) {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub struct FrameWriter<W> {
    inner: W,
    frames: u64,
}

impl<W: Write> FrameWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner, frames: 0 }
    }

    pub fn write(&mut self, frame: &PhotocurrentFrame) -> io::Result<()> {
        self.inner.write_all(&encode_frame(frame))?;
        self.frames += 1;
        Ok(())
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Reads frames for a known grid. Spacings are not on the wire, so the
/// reader takes them from the grid it was built with.
pub struct FrameReader<R> {
    cursor: Cursor<R>,
    grid: SpaceTimeGrid,
    frames: u64,
}

impl<R: Read> FrameReader<R> {
    pub fn new(inner: R, grid: SpaceTimeGrid) -> Self {
        Self {
            cursor: Cursor::new(inner),
            grid,
            frames: 0,
        }
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    /// Bytes consumed so far.
    pub fn offset(&self) -> u64 {
        self.cursor.offset
    }

    /// Next frame, or `None` at a clean end of stream.
    pub fn next_frame(&mut self) -> Result<Option<PhotocurrentFrame>, FormatError> {
        let c = &mut self.cursor;
        c.frame = Some(self.frames);
        let mut magic = [0; 4];
        let start = c.at();
        let got = c.fill(&mut magic)?;
        if got == 0 {
            return Ok(None);
        }
        if got < 4 {
            return Err(FormatError::UnexpectedEof {
                at: Location {
                    offset: start.offset + got as u64,
                    ..start
                },
                what: "frame magic",
                missing: 4 - got,
            });
        }
        c.magic_and_version(FRAME_MAGIC, magic)?;
        let trial = c.u64("trial index")?;
        let at = c.at();
        let dims = c.dims()?;
        if dims != self.grid.dims() {
            return Err(FormatError::InvalidHeader {
                at,
                what: "frame dimensions",
                detail: format!("{dims:?} differ from configured grid {:?}", self.grid.dims()),
            });
        }
        let at = c.at();
        let b0 = c.f64("B0")?;
        if !(b0.is_finite() && b0 > 0.0) {
            return Err(FormatError::InvalidHeader {
                at,
                what: "B0",
                detail: format!("{b0} is not a positive amplitude"),
            });
        }
        let n = self.grid.len();
        let mut buf = vec![0u8; 8 * n];
        let payload_at = c.at();
        c.exact(&mut buf, "frame payload")?;
        let vals: Vec<f64> = buf
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        let (i_x, i_p) = vals.split_at(n);
        let frame = PhotocurrentFrame::new(self.grid, trial, b0, i_x.to_vec(), i_p.to_vec()).map_err(|e| {
            FormatError::InvalidHeader {
                at: payload_at,
                what: "frame payload",
                detail: e.to_string(),
            }
        })?;
        self.frames += 1;
        Ok(Some(frame))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> SpaceTimeGrid {
        SpaceTimeGrid::new(2, 3, 4, 0.5, 1.0, 0.25).unwrap()
    }

    fn frame(trial: u64) -> PhotocurrentFrame {
        let g = grid();
        let i_x = (0..g.len()).map(|i| i as f64 * 0.25 - 1.0).collect();
        let i_p = (0..g.len()).map(|i| (i as f64).sqrt()).collect();
        PhotocurrentFrame::new(g, trial, 1.5, i_x, i_p).unwrap()
    }

    #[test]
    fn frame_header_is_36_bytes() {
        assert_eq!(FRAME_HEADER_LEN, 36);
        assert_eq!(encode_frame(&frame(0)).len(), 36 + 8 * grid().len());
    }

    #[test]
    fn frames_round_trip_through_f32() {
        let mut w = FrameWriter::new(Vec::new());
        for t in 0..3 {
            w.write(&frame(t)).unwrap();
        }
        assert_eq!(w.frames(), 3);
        let bytes = w.finish().unwrap();
        let mut r = FrameReader::new(bytes.as_slice(), grid());
        for t in 0..3 {
            assert_eq!(r.next_frame().unwrap().unwrap(), frame(t).quantized());
        }
        assert!(r.next_frame().unwrap().is_none());
        assert_eq!(r.frames(), 3);
    }

    #[test]
    fn corrupted_magic_names_frame_and_offset() {
        let mut bytes = encode_frame(&frame(0));
        let second = bytes.len();
        bytes.extend(encode_frame(&frame(1)));
        bytes[second + 1] = b'X';
        let mut r = FrameReader::new(bytes.as_slice(), grid());
        r.next_frame().unwrap();
        match r.next_frame() {
            Err(FormatError::BadMagic { at, .. }) => {
                assert_eq!(
                    at,
                    Location {
                        frame: Some(1),
                        offset: second as u64
                    }
                )
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_frame_is_an_eof_error() {
        let bytes = encode_frame(&frame(0));
        for cut in [2, 20, bytes.len() - 1] {
            let mut r = FrameReader::new(&bytes[..cut], grid());
            match r.next_frame() {
                Err(FormatError::UnexpectedEof { at, missing, .. }) => {
                    assert_eq!(at.offset, cut as u64);
                    assert_eq!(at.frame, Some(0));
                    assert!(missing > 0);
                }
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn frame_header_checks() {
        let mut bytes = encode_frame(&frame(0));
        bytes[4] = 9;
        assert!(matches!(
            FrameReader::new(bytes.as_slice(), grid()).next_frame(),
            Err(FormatError::UnsupportedVersion { version: 9, .. })
        ));
        let other = SpaceTimeGrid::unit(2, 3, 2).unwrap();
        let bytes = encode_frame(&frame(0));
        assert!(matches!(
            FrameReader::new(bytes.as_slice(), other).next_frame(),
            Err(FormatError::InvalidHeader {
                what: "frame dimensions",
                ..
            })
        ));
        let mut bytes = encode_frame(&frame(0));
        bytes[28..36].copy_from_slice(&(-1.0f64).to_le_bytes());
        assert!(matches!(
            FrameReader::new(bytes.as_slice(), grid()).next_frame(),
            Err(FormatError::InvalidHeader { what: "B0", .. })
        ));
        let mut bytes = encode_frame(&frame(0));
        bytes[36..40].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            FrameReader::new(bytes.as_slice(), grid()).next_frame(),
            Err(FormatError::InvalidHeader {
                what: "frame payload",
                ..
            })
        ));
    }

    #[test]
    fn field_round_trip() {
        let g = grid();
        let values = (0..g.len())
            .map(|i| Complex64::new(i as f64 / 3.0, -(i as f64).exp()))
            .collect();
        let f = FieldState::new(g, Domain::Fourier, Role::Noise, values).unwrap();
        let bytes = encode_field(&f);
        assert_eq!(&bytes[..4], b"HFLD");
        assert_eq!(read_field(bytes.as_slice()).unwrap(), f);
        let mut bad = bytes.clone();
        bad[44..48].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            read_field(bad.as_slice()),
            Err(FormatError::InvalidHeader { what: "domain tag", .. })
        ));
        assert!(matches!(
            read_field(&bytes[..bytes.len() - 3]),
            Err(FormatError::UnexpectedEof {
                what: "field values",
                ..
            })
        ));
    }

    #[test]
    fn kernel_table_round_trip() {
        let t = KernelTable {
            dims: [2, 1, 3],
            spacing: [0.1, 0.2, 0.3],
            u: (0..6).map(|i| Complex64::new(1.0 + i as f64, 0.5)).collect(),
            v: (0..6).map(|i| Complex64::new(-(i as f64), 2.0)).collect(),
        };
        let bytes = encode_kernel_table(&t);
        assert_eq!(read_kernel_table(bytes.as_slice()).unwrap(), t);
        let mut bad = bytes;
        bad[0] = b'h';
        assert!(matches!(
            read_kernel_table(bad.as_slice()),
            Err(FormatError::BadMagic { .. })
        ));
    }
}
