//! Discrete Fourier transforms of arbitrary length.
//!
//! Power-of-two lengths use an iterative radix-2 Cooley–Tukey transform;
//! every other length goes through Bluestein's chirp-z reformulation on a
//! padded power-of-two convolution. Scaling convention: the forward
//! transform is unnormalised and the inverse divides by the total number of
//! elements, so `ifft(fft(x)) == x`.

use alloc::{vec, vec::Vec};
use core::f64::consts::PI;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::Real;

pub type Complex = num_complex::Complex<Real>;

fn radix2(data: &mut [Complex], inverse: bool) {
    let n = data.len();
    debug_assert!(n.is_power_of_two());
    let bits = n.trailing_zeros();
    if n <= 1 {
        return;
    }
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            data.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * PI / len as f64;
        let half = len / 2;
        let twiddles: Vec<Complex> = (0..half)
            .map(|k| {
                let a = ang * k as f64;
                Complex::new(a.cos() as Real, a.sin() as Real)
            })
            .collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let u = data[start + k];
                let v = data[start + k + half] * twiddles[k];
                data[start + k] = u + v;
                data[start + k + half] = u - v;
            }
        }
        len <<= 1;
    }
}

fn bluestein(data: &mut [Complex], inverse: bool) {
    let n = data.len();
    let m = (2 * n - 1).next_power_of_two();
    let sign = if inverse { 1.0 } else { -1.0 };
    // exp(sign * i * pi * k^2 / n), with k^2 reduced mod 2n to keep the angle small.
    let chirp: Vec<Complex> = (0..n)
        .map(|k| {
            let k2 = ((k as u128 * k as u128) % (2 * n as u128)) as f64;
            let a = sign * PI * k2 / n as f64;
            Complex::new(a.cos() as Real, a.sin() as Real)
        })
        .collect();
    let mut a = vec![Complex::new(0.0, 0.0); m];
    let mut b = vec![Complex::new(0.0, 0.0); m];
    for k in 0..n {
        a[k] = data[k] * chirp[k];
    }
    b[0] = chirp[0].conj();
    for k in 1..n {
        b[k] = chirp[k].conj();
        b[m - k] = chirp[k].conj();
    }
    radix2(&mut a, false);
    radix2(&mut b, false);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    radix2(&mut a, true);
    let scale = 1.0 / m as Real;
    for k in 0..n {
        data[k] = a[k] * scale * chirp[k];
    }
}

/// Unnormalised in-place DFT of one line (sign +1 in the exponent when
/// `inverse`).
pub fn dft_line(data: &mut [Complex], inverse: bool) {
    match data.len() {
        0 | 1 => {}
        n if n.is_power_of_two() => radix2(data, inverse),
        _ => bluestein(data, inverse),
    }
}

/// In-place n-dimensional transform of a row-major grid. The inverse is
/// scaled by `1 / prod(shape)`.
pub fn fft_nd(grid: &mut [Complex], shape: &[usize], inverse: bool) {
    let total: usize = shape.iter().product();
    assert_eq!(total, grid.len(), "grid length does not match shape");
    let mut line = Vec::new();
    for axis in 0..shape.len() {
        let n = shape[axis];
        if n <= 1 {
            continue;
        }
        let inner: usize = shape[axis + 1..].iter().product();
        let outer = total / (n * inner);
        line.resize(n, Complex::new(0.0, 0.0));
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                for k in 0..n {
                    line[k] = grid[base + k * inner];
                }
                dft_line(&mut line, inverse);
                for k in 0..n {
                    grid[base + k * inner] = line[k];
                }
            }
        }
    }
    if inverse {
        let s = 1.0 / total as Real;
        grid.iter_mut().for_each(|v| *v *= s);
    }
}

/// Forward transform of a real grid.
pub fn fft_real(values: &[Real], shape: &[usize]) -> Vec<Complex> {
    let mut grid: Vec<Complex> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft_nd(&mut grid, shape, false);
    grid
}

/// Inverse transform keeping only the real part.
pub fn ifft_real(mut spectrum: Vec<Complex>, shape: &[usize]) -> Vec<Real> {
    fft_nd(&mut spectrum, shape, true);
    spectrum.into_iter().map(|c| c.re).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_has_flat_spectrum() {
        for n in [1usize, 5, 8, 12] {
            let mut x = vec![Complex::new(0.0, 0.0); n];
            x[0] = Complex::new(1.0, 0.0);
            fft_nd(&mut x, &[n], false);
            for v in &x {
                assert!((v.re - 1.0).abs() < 1e-12 && v.im.abs() < 1e-12);
            }
        }
    }
}
