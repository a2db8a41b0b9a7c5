//! Discretized space-time grid, fields living on it, and the transforms
//! between position and Fourier domain.
//!
//! The forward transform is the Riemann sum
//!
//! ```text
//! s(q, Omega) = sum_{rho, t} exp[i (Omega t - q . rho)] S(rho, t) dx dy dt
//! ```
//!
//! so the spatial axes carry a negative exponent and the time axis a
//! positive one. Boundary conditions are periodic on every axis.

pub mod fft;

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};
use fft::{Direction, Fft};

/// Position on the lattice, in either domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LatticeIndex {
    pub x: usize,
    pub y: usize,
    pub t: usize,
}

impl LatticeIndex {
    pub const fn new(x: usize, y: usize, t: usize) -> Self {
        Self { x, y, t }
    }
}

impl fmt::Display for LatticeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceTimeGrid {
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    pub dx: f64,
    pub dy: f64,
    pub dt: f64,
}

impl SpaceTimeGrid {
    pub fn new(nx: usize, ny: usize, nt: usize, dx: f64, dy: f64, dt: f64) -> Result<Self> {
        if nx == 0 || ny == 0 || nt == 0 {
            return Err(Error::InvalidParameter(alloc::format!(
                "grid dimensions must be positive, got {nx}x{ny}x{nt}"
            )));
        }
        for (name, d) in [("dx", dx), ("dy", dy), ("dt", dt)] {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::InvalidParameter(alloc::format!(
                    "{name} must be positive and finite, got {d}"
                )));
            }
        }
        Ok(Self { nx, ny, nt, dx, dy, dt })
    }

    /// Grid with unit spacing on every axis.
    pub fn unit(nx: usize, ny: usize, nt: usize) -> Result<Self> {
        Self::new(nx, ny, nt, 1.0, 1.0, 1.0)
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nt]
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nt
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `dx * dy * dt`
    pub fn cell_volume(&self) -> f64 {
        self.dx * self.dy * self.dt
    }

    /// Space-time volume of the whole window.
    pub fn total_volume(&self) -> f64 {
        self.len() as f64 * self.cell_volume()
    }

    /// Volume of one cell of the frequency lattice, `(2 pi)^3 / V`.
    pub fn frequency_cell(&self) -> f64 {
        (2.0 * PI).powi(3) / self.total_volume()
    }

    /// Row-major `(x, y, t)` offset; `t` varies fastest.
    #[inline]
    pub fn flat(&self, idx: LatticeIndex) -> usize {
        (idx.x * self.ny + idx.y) * self.nt + idx.t
    }

    #[inline]
    pub fn unflat(&self, flat: usize) -> LatticeIndex {
        let t = flat % self.nt;
        let rest = flat / self.nt;
        LatticeIndex::new(rest / self.ny, rest % self.ny, t)
    }

    pub fn indices(&self) -> impl Iterator<Item = LatticeIndex> + '_ {
        (0..self.len()).map(|i| self.unflat(i))
    }

    /// Integer frequency (or lag) of lattice index `k`, symmetric around
    /// zero. The Nyquist index of an even axis maps to `-n/2`.
    #[inline]
    pub fn signed(k: usize, n: usize) -> i64 {
        if 2 * k < n {
            k as i64
        } else {
            k as i64 - n as i64
        }
    }

    /// Signed integer coordinates of a lattice index.
    pub fn signed_index(&self, idx: LatticeIndex) -> [i64; 3] {
        [
            Self::signed(idx.x, self.nx),
            Self::signed(idx.y, self.ny),
            Self::signed(idx.t, self.nt),
        ]
    }

    /// Spacing of the frequency lattice: `(dq_x, dq_y, dOmega)`.
    pub fn frequency_spacing(&self) -> [f64; 3] {
        [
            2.0 * PI / (self.nx as f64 * self.dx),
            2.0 * PI / (self.ny as f64 * self.dy),
            2.0 * PI / (self.nt as f64 * self.dt),
        ]
    }

    /// `(q_x, q_y, Omega)` of a Fourier-domain index.
    pub fn frequency(&self, idx: LatticeIndex) -> [f64; 3] {
        let [sx, sy, st] = self.signed_index(idx);
        let [dqx, dqy, dw] = self.frequency_spacing();
        [sx as f64 * dqx, sy as f64 * dqy, st as f64 * dw]
    }

    /// Physical `(x, y, t)` lag represented by a position-domain index.
    pub fn lag(&self, idx: LatticeIndex) -> [f64; 3] {
        let [sx, sy, st] = self.signed_index(idx);
        [sx as f64 * self.dx, sy as f64 * self.dy, st as f64 * self.dt]
    }

    /// Index of `idx + offset` with periodic wrap-around.
    pub fn shifted(&self, idx: LatticeIndex, offset: [i64; 3]) -> LatticeIndex {
        let wrap = |i: usize, o: i64, n: usize| (i as i64 + o).rem_euclid(n as i64) as usize;
        LatticeIndex::new(
            wrap(idx.x, offset[0], self.nx),
            wrap(idx.y, offset[1], self.ny),
            wrap(idx.t, offset[2], self.nt),
        )
    }

    /// Index holding `(-q, -Omega)`.
    pub fn conjugate_mode_index(&self, idx: LatticeIndex) -> LatticeIndex {
        let neg = |k: usize, n: usize| (n - k) % n;
        LatticeIndex::new(neg(idx.x, self.nx), neg(idx.y, self.ny), neg(idx.t, self.nt))
    }

    /// `conjugate_mode_index` for every flat offset.
    pub fn conjugate_table(&self) -> Vec<usize> {
        self.indices()
            .map(|i| self.flat(self.conjugate_mode_index(i)))
            .collect()
    }

    pub(crate) fn ensure_same(&self, other: &SpaceTimeGrid, what: &'static str) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(what))
        }
    }
}

/// Free function form of [`SpaceTimeGrid::conjugate_mode_index`].
pub fn conjugate_mode_index(grid: &SpaceTimeGrid, idx: LatticeIndex) -> LatticeIndex {
    grid.conjugate_mode_index(idx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Position,
    Fourier,
}

/// Which field of the protocol an array holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    AIn,
    Squeezed1,
    Squeezed2,
    Epr1,
    Epr2,
    Bx,
    Bp,
    AOut,
    Noise,
    /// Unsqueezed vacuum entering an amplifier.
    Vacuum,
}

impl Domain {
    pub fn code(self) -> u32 {
        match self {
            Domain::Position => 0,
            Domain::Fourier => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Domain::Position),
            1 => Some(Domain::Fourier),
            _ => None,
        }
    }
}

impl Role {
    pub const ALL: [Role; 10] = [
        Role::AIn,
        Role::Squeezed1,
        Role::Squeezed2,
        Role::Epr1,
        Role::Epr2,
        Role::Bx,
        Role::Bp,
        Role::AOut,
        Role::Noise,
        Role::Vacuum,
    ];

    pub fn code(self) -> u32 {
        Self::ALL.iter().position(|r| *r == self).unwrap() as u32
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

/// A complex field envelope sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub grid: SpaceTimeGrid,
    pub domain: Domain,
    pub role: Role,
    pub values: Vec<Complex64>,
}

impl FieldState {
    pub fn new(grid: SpaceTimeGrid, domain: Domain, role: Role, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: grid.len(),
                found: values.len(),
            });
        }
        Ok(Self {
            grid,
            domain,
            role,
            values,
        })
    }

    pub fn zeros(grid: SpaceTimeGrid, domain: Domain, role: Role) -> Self {
        Self {
            grid,
            domain,
            role,
            values: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn at(&self, idx: LatticeIndex) -> Complex64 {
        self.values[self.grid.flat(idx)]
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub(crate) fn expect_domain(&self, expected: Domain) -> Result<()> {
        if self.domain == expected {
            Ok(())
        } else {
            Err(Error::WrongDomain {
                expected,
                found: self.domain,
            })
        }
    }

    /// Sum of `|value|^2` times the measure of one cell of the current domain.
    pub fn energy(&self) -> f64 {
        let measure = match self.domain {
            Domain::Position => self.grid.cell_volume(),
            Domain::Fourier => self.grid.frequency_cell() / (2.0 * PI).powi(3),
        };
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * measure
    }
}

/// Reusable 3-D transform plan for one grid.
#[derive(Debug, Clone)]
pub struct LatticeFft {
    grid: SpaceTimeGrid,
    fx: Fft,
    fy: Fft,
    ft: Fft,
}

impl LatticeFft {
    pub fn new(grid: SpaceTimeGrid) -> Self {
        Self {
            grid,
            fx: Fft::new(grid.nx),
            fy: Fft::new(grid.ny),
            ft: Fft::new(grid.nt),
        }
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    /// In-place position -> Fourier transform of raw values.
    pub fn forward_in_place(&self, values: &mut [Complex64]) {
        self.run(values, Direction::Negative, Direction::Positive);
        let scale = self.grid.cell_volume();
        values.iter_mut().for_each(|v| *v *= scale);
    }

    /// In-place Fourier -> position transform of raw values.
    pub fn inverse_in_place(&self, values: &mut [Complex64]) {
        self.run(values, Direction::Positive, Direction::Negative);
        let scale = 1.0 / self.grid.total_volume();
        values.iter_mut().for_each(|v| *v *= scale);
    }

    /// Transform of a real array, as used for photocurrents.
    pub fn forward_real(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward_in_place(&mut buf);
        buf
    }

    pub fn forward(&self, f: &FieldState) -> Result<FieldState> {
        self.grid.ensure_same(&f.grid, "transform plan and field")?;
        f.expect_domain(Domain::Position)?;
        let mut values = f.values.clone();
        self.forward_in_place(&mut values);
        Ok(FieldState {
            grid: f.grid,
            domain: Domain::Fourier,
            role: f.role,
            values,
        })
    }

    pub fn inverse(&self, f: &FieldState) -> Result<FieldState> {
        self.grid.ensure_same(&f.grid, "transform plan and field")?;
        f.expect_domain(Domain::Fourier)?;
        let mut values = f.values.clone();
        self.inverse_in_place(&mut values);
        Ok(FieldState {
            grid: f.grid,
            domain: Domain::Position,
            role: f.role,
            values,
        })
    }

    fn run(&self, values: &mut [Complex64], spatial: Direction, temporal: Direction) {
        let SpaceTimeGrid { nx, ny, nt, .. } = self.grid;
        assert_eq!(values.len(), nx * ny * nt);
        if nt > 1 {
            for line in values.chunks_exact_mut(nt) {
                self.ft.process(line, temporal);
            }
        }
        let mut line = vec![Complex64::new(0.0, 0.0); nx.max(ny)];
        if ny > 1 {
            for x in 0..nx {
                for t in 0..nt {
                    let base = x * ny * nt + t;
                    for y in 0..ny {
                        line[y] = values[base + y * nt];
                    }
                    self.fy.process(&mut line[..ny], spatial);
                    for y in 0..ny {
                        values[base + y * nt] = line[y];
                    }
                }
            }
        }
        if nx > 1 {
            let stride = ny * nt;
            for base in 0..stride {
                for x in 0..nx {
                    line[x] = values[base + x * stride];
                }
                self.fx.process(&mut line[..nx], spatial);
                for x in 0..nx {
                    values[base + x * stride] = line[x];
                }
            }
        }
    }
}

pub fn forward_transform(f: &FieldState) -> Result<FieldState> {
    f.expect_domain(Domain::Position)?;
    LatticeFft::new(f.grid).forward(f)
}

pub fn inverse_transform(f: &FieldState) -> Result<FieldState> {
    f.expect_domain(Domain::Fourier)?;
    LatticeFft::new(f.grid).inverse(f)
}
