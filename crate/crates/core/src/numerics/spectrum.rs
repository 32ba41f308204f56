use rustfft::{num_complex::Complex, FftPlanner};

/// Frequency of the strongest non-DC Fourier component of a uniformly
/// sampled trace, refined by parabolic interpolation on a zero-padded
/// spectrum. `dt` is the sample spacing; the result is in units of `1/dt`.
pub fn dominant_frequency(samples: &[f64], dt: f64) -> Option<f64> {
    let n = samples.len();
    if n < 4 || dt <= 0.0 {
        return None;
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let padded = (n * 16).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = samples
        .iter()
        .map(|s| Complex::new(s - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(padded)
        .collect();
    FftPlanner::new().plan_fft_forward(padded).process(&mut buf);
    let mags: Vec<f64> = buf[..padded / 2].iter().map(|c| c.norm()).collect();
    let (k, peak) = mags.iter().enumerate().skip(1).max_by(|a, b| a.1.total_cmp(b.1))?;
    if *peak <= 1e-12 * n as f64 {
        return None;
    }
    let shift = if k + 1 < mags.len() {
        let (a, b, c) = (mags[k - 1], mags[k], mags[k + 1]);
        let den = a - 2.0 * b + c;
        if den.abs() > 0.0 {
            0.5 * (a - c) / den
        } else {
            0.0
        }
    } else {
        0.0
    };
    Some((k as f64 + shift) / (padded as f64 * dt))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_sine_frequency() {
        let dt = 1e-3;
        let xs: Vec<f64> = (0..500).map(|i| (2.0 * std::f64::consts::PI * 37.0 * i as f64 * dt).sin()).collect();
        let f = dominant_frequency(&xs, dt).unwrap();
        assert!((f - 37.0).abs() < 0.2, "{f}");
    }

    #[test]
    fn flat_trace_has_no_peak() {
        assert!(dominant_frequency(&[0.5; 64], 1.0).is_none());
    }
}
