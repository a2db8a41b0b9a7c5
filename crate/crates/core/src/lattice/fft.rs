//! One-dimensional complex FFT plans.
//!
//! Power-of-two lengths use an iterative radix-2 transform; every other
//! length goes through Bluestein's chirp-z algorithm on top of a radix-2
//! transform of the padded length. Transforms are unnormalized.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `X_k = sum_n x_n exp(-2 pi i k n / N)`
    Negative,
    /// `X_k = sum_n x_n exp(+2 pi i k n / N)`
    Positive,
}

#[derive(Debug, Clone)]
pub struct Fft {
    len: usize,
    algo: Algorithm,
}

#[derive(Debug, Clone)]
enum Algorithm {
    Identity,
    Radix2(Radix2),
    Bluestein(Bluestein),
}

impl Fft {
    pub fn new(len: usize) -> Self {
        assert!(len > 0, "FFT length must be positive");
        let algo = if len == 1 {
            Algorithm::Identity
        } else if len.is_power_of_two() {
            Algorithm::Radix2(Radix2::new(len))
        } else {
            Algorithm::Bluestein(Bluestein::new(len))
        };
        Self { len, algo }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn process(&self, buf: &mut [Complex64], dir: Direction) {
        debug_assert_eq!(buf.len(), self.len);
        match &self.algo {
            Algorithm::Identity => {}
            Algorithm::Radix2(r) => r.process(buf, dir),
            Algorithm::Bluestein(b) => match dir {
                Direction::Negative => b.process(buf),
                Direction::Positive => {
                    // conj(F(conj(x))) flips the exponent sign
                    buf.iter_mut().for_each(|z| *z = z.conj());
                    b.process(buf);
                    buf.iter_mut().for_each(|z| *z = z.conj());
                }
            },
        }
    }
}

#[derive(Debug, Clone)]
struct Radix2 {
    len: usize,
    // exp(-2 pi i k / len) for k < len / 2
    twiddles: Vec<Complex64>,
}

impl Radix2 {
    fn new(len: usize) -> Self {
        let twiddles = (0..len / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / len as f64))
            .collect();
        Self { len, twiddles }
    }

    fn process(&self, buf: &mut [Complex64], dir: Direction) {
        let n = self.len;
        let bits = n.trailing_zeros();
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if j > i {
                buf.swap(i, j);
            }
        }
        let mut half = 1;
        while half < n {
            let step = n / (2 * half);
            for start in (0..n).step_by(2 * half) {
                for k in 0..half {
                    let w = self.twiddles[k * step];
                    let w = match dir {
                        Direction::Negative => w,
                        Direction::Positive => w.conj(),
                    };
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            half *= 2;
        }
    }
}

#[derive(Debug, Clone)]
struct Bluestein {
    len: usize,
    inner: Radix2,
    // exp(-i pi k^2 / len)
    chirp: Vec<Complex64>,
    // forward transform of the conjugate chirp, scaled by 1/padded_len
    filter: Vec<Complex64>,
}

impl Bluestein {
    fn new(len: usize) -> Self {
        let padded = (2 * len - 1).next_power_of_two();
        let inner = Radix2::new(padded);
        let two_n = 2 * len as u128;
        let chirp: Vec<Complex64> = (0..len)
            .map(|k| {
                // reduce k^2 modulo 2N before scaling to keep the phase exact
                let k2 = ((k as u128 * k as u128) % two_n) as f64;
                Complex64::from_polar(1.0, -PI * k2 / len as f64)
            })
            .collect();
        let mut filter = vec![Complex64::new(0.0, 0.0); padded];
        filter[0] = chirp[0].conj();
        for k in 1..len {
            filter[k] = chirp[k].conj();
            filter[padded - k] = chirp[k].conj();
        }
        inner.process(&mut filter, Direction::Negative);
        let scale = 1.0 / padded as f64;
        filter.iter_mut().for_each(|z| *z *= scale);
        Self {
            len,
            inner,
            chirp,
            filter,
        }
    }

    fn process(&self, buf: &mut [Complex64]) {
        let padded = self.inner.len;
        let mut work = vec![Complex64::new(0.0, 0.0); padded];
        for k in 0..self.len {
            work[k] = buf[k] * self.chirp[k];
        }
        self.inner.process(&mut work, Direction::Negative);
        for (w, f) in work.iter_mut().zip(&self.filter) {
            *w *= *f;
        }
        self.inner.process(&mut work, Direction::Positive);
        for k in 0..self.len {
            buf[k] = work[k] * self.chirp[k];
        }
    }
}
