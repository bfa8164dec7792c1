use crate::error::{Error, Result};

use super::Map;

/// PSNR reported when the error is negligible (`MSE < peak² · 1e-10`).
pub const PSNR_CAP_DB: f64 = 100.0;

/// Side length of the square SSIM window.
pub const SSIM_WINDOW: usize = 8;

fn check_pair(a: &Map, b: &Map) -> Result<()> {
    if a.n != b.n || a.data.len() != b.data.len() {
        return Err(Error::shape(alloc::format!(
            "maps of size {} and {} cannot be compared",
            a.n,
            b.n
        )));
    }
    Ok(())
}

pub fn mse(a: &Map, b: &Map) -> Result<f64> {
    check_pair(a, b)?;
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64)
}

/// Peak signal-to-noise ratio in dB, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Map, b: &Map, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::usage("psnr peak must be positive"));
    }
    let e = mse(a, b)?;
    if e < peak * peak * 1e-10 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * libm::log10(peak * peak / e))
}

/// Mean SSIM over all `8×8` windows (stride 1), with
/// `C1 = (0.01·peak)²` and `C2 = (0.03·peak)²`. Maps smaller than the
/// window are scored as a single window.
pub fn ssim(a: &Map, b: &Map, peak: f64) -> Result<f64> {
    check_pair(a, b)?;
    if !(peak > 0.0) {
        return Err(Error::usage("ssim peak must be positive"));
    }
    let n = a.n;
    let w = SSIM_WINDOW.min(n);
    let c1 = (0.01 * peak) * (0.01 * peak);
    let c2 = (0.03 * peak) * (0.03 * peak);
    let count = (w * w) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    for y0 in 0..=n - w {
        for x0 in 0..=n - w {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for y in y0..y0 + w {
                for x in x0..x0 + w {
                    let (p, q) = (a.data[y * n + x], b.data[y * n + x]);
                    sa += p;
                    sb += q;
                    saa += p * p;
                    sbb += q * q;
                    sab += p * q;
                }
            }
            let (ma, mb) = (sa / count, sb / count);
            let va = (saa / count - ma * ma).max(0.0);
            let vb = (sbb / count - mb * mb).max(0.0);
            let cov = sab / count - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn ramp(n: usize) -> Map {
        Map::new(n, (0..n * n).map(|i| (i % 7) as f64 / 7.0).collect()).unwrap()
    }

    #[test]
    fn identical_maps() {
        let m = ramp(16);
        assert_eq!(psnr(&m, &m, 1.0).unwrap(), PSNR_CAP_DB);
        assert!((ssim(&m, &m, 1.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_error_gives_20db() {
        let m = ramp(16);
        let shifted = Map::new(16, m.data.iter().map(|v| v + 0.1).collect()).unwrap();
        assert!((psnr(&m, &shifted, 1.0).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch() {
        assert!(matches!(psnr(&ramp(8), &ramp(16), 1.0), Err(Error::Shape(_))));
        assert!(matches!(ssim(&ramp(8), &ramp(16), 1.0), Err(Error::Shape(_))));
    }

    #[test]
    fn ssim_bounded() {
        let a = ramp(16);
        let b = Map::new(16, a.data.iter().rev().copied().collect::<Vec<_>>()).unwrap();
        let s = ssim(&a, &b, 1.0).unwrap();
        assert!((-1.0..=1.0).contains(&s));
        assert!(s < 1.0);
    }
}
