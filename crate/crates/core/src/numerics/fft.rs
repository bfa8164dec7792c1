//! Radix-2 FFTs over square power-of-two grids, with the centered-DC
//! convention used throughout the crate: index `N/2` along each axis is
//! zero frequency, both in the uv plane and in the image plane.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

fn check_pow2(n: usize) -> Result<()> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::shape(alloc::format!(
            "FFT length {n} is not a power of two"
        )));
    }
    Ok(())
}

/// In-place unnormalized 1-D FFT (`sign = -1` forward, `+1` inverse).
fn fft_1d(buf: &mut [Complex64], twiddles: &[Complex64]) {
    let n = buf.len();
    let bits = n.trailing_zeros();
    if n <= 1 {
        return;
    }
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let stride = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..len / 2 {
                let w = twiddles[k * stride];
                let a = buf[start + k];
                let b = buf[start + k + len / 2] * w;
                buf[start + k] = a + b;
                buf[start + k + len / 2] = a - b;
            }
        }
        len <<= 1;
    }
}

fn twiddles(n: usize, sign: f64) -> Vec<Complex64> {
    (0..n / 2)
        .map(|k| {
            let ang = sign * 2.0 * PI * k as f64 / n as f64;
            Complex64::new(libm::cos(ang), libm::sin(ang))
        })
        .collect()
}

/// Unnormalized 2-D FFT of a row-major `n×n` grid, origin at index 0.
fn fft2_raw(grid: &mut [Complex64], n: usize, sign: f64) {
    let tw = twiddles(n, sign);
    for row in grid.chunks_mut(n) {
        fft_1d(row, &tw);
    }
    let mut col = alloc::vec![Complex64::new(0.0, 0.0); n];
    for c in 0..n {
        for r in 0..n {
            col[r] = grid[r * n + c];
        }
        fft_1d(&mut col, &tw);
        for r in 0..n {
            grid[r * n + c] = col[r];
        }
    }
}

/// Rolls both axes by `n/2`. For even `n` this is its own inverse, so it
/// serves as both `fftshift` and `ifftshift`.
fn half_shift(grid: &mut [Complex64], n: usize) {
    let h = n / 2;
    for r in 0..h {
        for c in 0..n {
            let c2 = (c + h) % n;
            grid.swap(r * n + c, (r + h) * n + c2);
        }
    }
}

/// Centered forward transform: `X = shift(FFT2(shift(x)))`, unnormalized.
pub fn fft2_centered(grid: &mut [Complex64], n: usize) -> Result<()> {
    check_pow2(n)?;
    if grid.len() != n * n {
        return Err(Error::shape("fft2 grid is not n×n"));
    }
    half_shift(grid, n);
    fft2_raw(grid, n, -1.0);
    half_shift(grid, n);
    Ok(())
}

/// Centered inverse transform with the `1/N²` normalization.
pub fn ifft2_centered(grid: &mut [Complex64], n: usize) -> Result<()> {
    check_pow2(n)?;
    if grid.len() != n * n {
        return Err(Error::shape("ifft2 grid is not n×n"));
    }
    half_shift(grid, n);
    fft2_raw(grid, n, 1.0);
    half_shift(grid, n);
    let scale = 1.0 / (n * n) as f64;
    grid.iter_mut().for_each(|v| *v *= scale);
    Ok(())
}

/// Index of the Hermitian partner of row or column `i` on a centered grid.
pub fn conjugate_index(i: usize, n: usize) -> usize {
    (n - i) % n
}
