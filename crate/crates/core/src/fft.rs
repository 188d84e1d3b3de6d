//! Unnormalized n-dimensional FFTs over row-major cubic arrays.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::{Arc, Mutex, OnceLock};

fn planner() -> &'static Mutex<FftPlanner<f64>> {
    static PLANNER: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();
    PLANNER.get_or_init(|| Mutex::new(FftPlanner::new()))
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut p = planner().lock().expect("fft planner poisoned");
    if inverse {
        p.plan_fft_inverse(len)
    } else {
        p.plan_fft_forward(len)
    }
}

/// Forward transform, kernel `exp(-2 pi i j m / N)` along every axis, no scaling.
pub fn forward(data: &mut [Complex64], n: usize, dim: usize) {
    transform(data, n, dim, false);
}

/// Inverse transform, kernel `exp(+2 pi i j m / N)` along every axis, no scaling.
pub fn inverse(data: &mut [Complex64], n: usize, dim: usize) {
    transform(data, n, dim, true);
}

fn transform(data: &mut [Complex64], n: usize, dim: usize, inverse: bool) {
    debug_assert_eq!(data.len(), n.pow(dim as u32));
    if n == 1 {
        return;
    }
    let fft = plan(n, inverse);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    // last axis is contiguous
    for line in data.chunks_exact_mut(n) {
        fft.process_with_scratch(line, &mut scratch);
    }
    let mut buf = vec![Complex64::default(); n];
    for axis in 0..dim.saturating_sub(1) {
        let stride = n.pow((dim - 1 - axis) as u32);
        let block = stride * n;
        for start in (0..data.len()).step_by(block) {
            for inner in 0..stride {
                let base = start + inner;
                for (i, b) in buf.iter_mut().enumerate() {
                    *b = data[base + i * stride];
                }
                fft.process_with_scratch(&mut buf, &mut scratch);
                for (i, b) in buf.iter().enumerate() {
                    data[base + i * stride] = *b;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(data: &[Complex64], n: usize, dim: usize, sign: f64) -> Vec<Complex64> {
        let len = data.len();
        let idx = |mut f: usize| {
            let mut v = vec![0usize; dim];
            for a in (0..dim).rev() {
                v[a] = f % n;
                f /= n;
            }
            v
        };
        (0..len)
            .map(|m| {
                let mm = idx(m);
                let mut acc = Complex64::default();
                for (j, x) in data.iter().enumerate() {
                    let jj = idx(j);
                    let phase: f64 = jj.iter().zip(&mm).map(|(a, b)| (a * b) as f64).sum();
                    acc += x * Complex64::from_polar(1.0, sign * 2.0 * std::f64::consts::PI * phase / n as f64);
                }
                acc
            })
            .collect()
    }

    #[test]
    fn matches_direct_sum_in_three_dimensions() {
        let n = 4;
        let dim = 3;
        let data: Vec<Complex64> = (0..64).map(|i| Complex64::new((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let mut a = data.clone();
        forward(&mut a, n, dim);
        let b = naive(&data, n, dim, -1.0);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() < 1e-10);
        }
        inverse(&mut a, n, dim);
        for (x, y) in a.iter().zip(&data) {
            assert!((x / 64.0 - y).norm() < 1e-12);
        }
    }
}
