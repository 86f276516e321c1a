//! Complex FFTs of arbitrary length and rank.
//!
//! Power-of-two lengths use an iterative radix-2 transform; every other
//! length goes through Bluestein's chirp-z algorithm on top of it. Plans are
//! immutable after construction, so one plan can be shared between threads;
//! scratch space is allocated per call.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

#[derive(Debug, Clone)]
struct Radix2 {
    n: usize,
    twiddles: Vec<Complex64>,
    bitrev: Vec<usize>,
}

impl Radix2 {
    fn new(n: usize) -> Self {
        debug_assert!(n.is_power_of_two());
        let twiddles = (0..n / 2).map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64)).collect();
        let bits = n.trailing_zeros();
        let bitrev = (0..n).map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) }).collect();
        Self { n, twiddles, bitrev }
    }

    /// Unnormalized forward transform (e^{-2πi jk/n}).
    fn forward(&self, buf: &mut [Complex64]) {
        let n = self.n;
        for i in 0..n {
            let j = self.bitrev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let t = self.twiddles[k * stride] * buf[start + k + half];
                    let u = buf[start + k];
                    buf[start + k] = u + t;
                    buf[start + k + half] = u - t;
                }
            }
            len <<= 1;
        }
    }
}

#[derive(Debug, Clone)]
struct Bluestein {
    n: usize,
    inner: Radix2,
    chirp: Vec<Complex64>,
    filter_hat: Vec<Complex64>,
}

impl Bluestein {
    fn new(n: usize) -> Self {
        let m = (2 * n - 1).next_power_of_two();
        let inner = Radix2::new(m);
        // j^2 is reduced mod 2n before forming the angle to keep it small
        let chirp: Vec<Complex64> = (0..n)
            .map(|j| {
                let jj = ((j as u128 * j as u128) % (2 * n as u128)) as f64;
                Complex64::from_polar(1.0, -PI * jj / n as f64)
            })
            .collect();
        let mut filter = vec![Complex64::new(0.0, 0.0); m];
        filter[0] = chirp[0].conj();
        for j in 1..n {
            filter[j] = chirp[j].conj();
            filter[m - j] = chirp[j].conj();
        }
        inner.forward(&mut filter);
        Self { n, inner, chirp, filter_hat: filter }
    }

    fn forward(&self, buf: &mut [Complex64]) {
        let m = self.inner.n;
        let mut work = vec![Complex64::new(0.0, 0.0); m];
        for j in 0..self.n {
            work[j] = buf[j] * self.chirp[j];
        }
        self.inner.forward(&mut work);
        for (w, h) in work.iter_mut().zip(&self.filter_hat) {
            *w *= h;
        }
        // inverse through conjugation
        for w in work.iter_mut() {
            *w = w.conj();
        }
        self.inner.forward(&mut work);
        let scale = 1.0 / m as f64;
        for k in 0..self.n {
            buf[k] = work[k].conj() * scale * self.chirp[k];
        }
    }
}

#[derive(Debug, Clone)]
enum Algorithm {
    Radix2(Radix2),
    Bluestein(Bluestein),
}

/// One-dimensional transform plan.
#[derive(Debug, Clone)]
pub struct Fft1d {
    n: usize,
    algorithm: Algorithm,
}

impl Fft1d {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "FFT length must be positive");
        let algorithm = if n.is_power_of_two() {
            Algorithm::Radix2(Radix2::new(n))
        } else {
            Algorithm::Bluestein(Bluestein::new(n))
        };
        Self { n, algorithm }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Unnormalized forward transform in place.
    pub fn forward(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.n);
        match &self.algorithm {
            Algorithm::Radix2(p) => p.forward(buf),
            Algorithm::Bluestein(p) => p.forward(buf),
        }
    }

    /// Unnormalized inverse transform in place (e^{+2πi jk/n}).
    pub fn inverse(&self, buf: &mut [Complex64]) {
        for v in buf.iter_mut() {
            *v = v.conj();
        }
        self.forward(buf);
        for v in buf.iter_mut() {
            *v = v.conj();
        }
    }
}

/// Row-major N-dimensional transform (last axis contiguous).
#[derive(Debug, Clone)]
pub struct FftNd {
    dims: Vec<usize>,
    plans: Vec<Fft1d>,
}

impl FftNd {
    pub fn new(dims: &[usize]) -> Self {
        Self { dims: dims.to_vec(), plans: dims.iter().map(|&n| Fft1d::new(n)).collect() }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Unnormalized forward transform.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, false);
    }

    /// Normalized inverse, so that `inverse(forward(x)) == x`.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, true);
        let scale = 1.0 / self.len() as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        assert_eq!(data.len(), self.len());
        let total = self.len();
        let mut line = Vec::new();
        for (axis, plan) in self.plans.iter().enumerate() {
            let n = self.dims[axis];
            if n == 1 {
                continue;
            }
            let stride: usize = self.dims[axis + 1..].iter().product();
            line.resize(n, Complex64::new(0.0, 0.0));
            let block = n * stride;
            for outer in (0..total).step_by(block) {
                for inner in 0..stride {
                    let base = outer + inner;
                    for (i, v) in line.iter_mut().enumerate() {
                        *v = data[base + i * stride];
                    }
                    if inverse {
                        plan.inverse(&mut line);
                    } else {
                        plan.forward(&mut line);
                    }
                    for (i, v) in line.iter().enumerate() {
                        data[base + i * stride] = *v;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(j, v)| v * Complex64::from_polar(1.0, -2.0 * PI * ((j * k) % n) as f64 / n as f64))
                    .sum()
            })
            .collect()
    }

    fn signal(n: usize) -> Vec<Complex64> {
        (0..n).map(|j| Complex64::new(libm::sin(0.37 * j as f64 + 0.1), libm::cos(1.3 * j as f64) * 0.5)).collect()
    }

    #[test]
    fn matches_naive_dft_for_many_lengths() {
        for n in [1usize, 2, 3, 5, 6, 7, 8, 12, 16, 17, 30, 64, 96] {
            let x = signal(n);
            let expected = naive_dft(&x);
            let mut got = x.clone();
            Fft1d::new(n).forward(&mut got);
            for (a, b) in got.iter().zip(&expected) {
                assert!((a - b).norm() < 1e-10 * (1.0 + b.norm()), "n={n}");
            }
        }
    }

    #[test]
    fn nd_roundtrip() {
        let dims = [6, 5, 8];
        let plan = FftNd::new(&dims);
        let x = signal(240);
        let mut y = x.clone();
        plan.forward(&mut y);
        plan.inverse(&mut y);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn nd_is_separable() {
        // 2-D transform equals transforming rows then columns by hand
        let (r, c) = (3, 4);
        let x = signal(r * c);
        let mut y = x.clone();
        FftNd::new(&[r, c]).forward(&mut y);
        let rows: Vec<Vec<Complex64>> = (0..r).map(|i| naive_dft(&x[i * c..(i + 1) * c])).collect();
        for j in 0..c {
            let col: Vec<Complex64> = (0..r).map(|i| rows[i][j]).collect();
            let ft = naive_dft(&col);
            for i in 0..r {
                assert!((ft[i] - y[i * c + j]).norm() < 1e-11);
            }
        }
    }
}
