//! Small signal-processing helpers shared by the modules.

use num_complex::Complex64;
use rustfft::FftPlanner;

pub fn fft_real(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new()
        .plan_fft_forward(buf.len())
        .process(&mut buf);
    buf
}

/// Unnormalized forward FFT in place.
pub fn fft_in_place(buf: &mut [Complex64]) {
    FftPlanner::new().plan_fft_forward(buf.len()).process(buf);
}

/// Inverse FFT in place, normalized by `1/n`.
pub fn ifft_in_place(buf: &mut [Complex64]) {
    let n = buf.len();
    FftPlanner::new().plan_fft_inverse(n).process(buf);
    let s = 1.0 / n as f64;
    for v in buf.iter_mut() {
        *v *= s;
    }
}

/// Angular frequency (rad/sample) of DFT bin `m` for length `n`, in `(-π, π]`.
pub fn bin_omega(m: usize, n: usize) -> f64 {
    let k = if 2 * m > n {
        m as f64 - n as f64
    } else {
        m as f64
    };
    2.0 * std::f64::consts::PI * k / n as f64
}

/// Band-limited (periodic) interpolation by an integer factor.
///
/// Samples at multiples of `factor` reproduce the input.
pub fn upsample_fft(x: &[f64], factor: usize) -> Vec<f64> {
    let n = x.len();
    if factor <= 1 || n == 0 {
        return x.to_vec();
    }
    let spec = fft_real(x);
    let m = n * factor;
    let mut up = vec![Complex64::new(0.0, 0.0); m];
    let half = n / 2;
    for k in 0..n {
        if n % 2 == 0 && k == half {
            // split the Nyquist bin between ±fs/2 to keep the result real
            up[half] += spec[k] * 0.5;
            up[m - half] += spec[k] * 0.5;
        } else if k < half || (n % 2 == 1 && k == half) {
            up[k] = spec[k];
        } else {
            up[m - (n - k)] = spec[k];
        }
    }
    ifft_in_place(&mut up);
    up.into_iter().map(|c| c.re * factor as f64).collect()
}

/// Catmull-Rom cubic interpolation at fractional index `t`.
///
/// Neighbours beyond the ends are clamped; `t` must lie in `[0, len-1]`.
pub fn catmull_rom(x: &[f64], t: f64) -> f64 {
    let n = x.len();
    debug_assert!(n > 0);
    let i = t.floor();
    let u = t - i;
    let i = i as isize;
    let at = |k: isize| x[k.clamp(0, n as isize - 1) as usize];
    let (xm, x0, x1, x2) = (at(i - 1), at(i), at(i + 1), at(i + 2));
    x0 + 0.5
        * u
        * (x1 - xm + u * (2.0 * xm - 5.0 * x0 + 4.0 * x1 - x2 + u * (3.0 * (x0 - x1) + x2 - xm)))
}

/// Cumulative trapezoid of `y` with step `dx`, starting at 0.
pub fn cumtrapz(y: &[f64], dx: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(y.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in y.windows(2) {
        acc += 0.5 * (w[0] + w[1]) * dx;
        out.push(acc);
    }
    out
}

/// Linear interpolation of `(xs, ys)` at `x`, with constant extrapolation.
/// `xs` must be ascending.
pub fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let j = xs.partition_point(|&v| v <= x);
    let (x0, x1) = (xs[j - 1], xs[j]);
    let w = (x - x0) / (x1 - x0);
    ys[j - 1] * (1.0 - w) + ys[j] * w
}

/// Periodic Hann window of length `n` (the form used for Welch segments).
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let s = (std::f64::consts::PI * i as f64 / n as f64).sin();
            s * s
        })
        .collect()
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().sum::<f64>() / x.len() as f64
    }
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }
}

/// `10·log10(ratio)` clamped to `[-cap, cap]`.
pub fn db_capped(ratio: f64, cap: f64) -> f64 {
    if ratio.is_nan() {
        return -cap;
    }
    if ratio <= 0.0 {
        return -cap;
    }
    (10.0 * ratio.log10()).clamp(-cap, cap)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catmull_rom_hits_knots_and_lines() {
        let x = [1.0, 3.0, -2.0, 0.5, 4.0];
        for (i, v) in x.iter().enumerate() {
            assert_eq!(catmull_rom(&x, i as f64), *v);
        }
        let line: Vec<f64> = (0..10).map(|i| 2.0 * i as f64 - 1.0).collect();
        assert!((catmull_rom(&line, 4.3) - (2.0 * 4.3 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn upsample_keeps_original_samples() {
        let x: Vec<f64> = (0..64).map(|i| ((i * 7) % 13) as f64 - 6.0).collect();
        let up = upsample_fft(&x, 4);
        assert_eq!(up.len(), 256);
        for (i, v) in x.iter().enumerate() {
            assert!((up[4 * i] - v).abs() < 1e-10);
        }
    }

    #[test]
    fn upsample_is_exact_for_bandlimited_tone() {
        let n = 128;
        let f = 5.0 / n as f64;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * f * i as f64).cos())
            .collect();
        let up = upsample_fft(&x, 3);
        for (j, v) in up.iter().enumerate() {
            let t = j as f64 / 3.0;
            assert!((v - (2.0 * std::f64::consts::PI * f * t).cos()).abs() < 1e-10);
        }
    }

    #[test]
    fn cumtrapz_of_constant() {
        let c = cumtrapz(&[2.0; 5], 0.5);
        assert_eq!(c, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn interp_linear_clamps() {
        let xs = [0.0, 1.0, 2.0];
        let ys = [0.0, 10.0, 0.0];
        assert_eq!(interp_linear(&xs, &ys, -1.0), 0.0);
        assert_eq!(interp_linear(&xs, &ys, 0.5), 5.0);
        assert_eq!(interp_linear(&xs, &ys, 3.0), 0.0);
    }
}
