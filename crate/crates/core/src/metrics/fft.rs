use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Square grid of complex values, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGrid {
    pub n: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexGrid {
    pub fn magnitudes(&self) -> Vec<f64> {
        self.re.iter().zip(&self.im).map(|(r, i)| r.hypot(*i)).collect()
    }
}

/// Unnormalized forward 2-D DFT of a real `n×n` grid; `n` must be a power of two.
pub fn fft2(grid: &[f64], n: usize) -> Result<ComplexGrid> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::domain("fft2", format!("extent {n} is not a power of two")));
    }
    if grid.len() != n * n {
        return Err(Error::shape("fft2", format!("{} values for a {n}×{n} grid", grid.len())));
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut buf: Vec<Complex<f64>> = grid.iter().map(|&v| Complex::new(v, 0.0)).collect();
    for row in buf.chunks_exact_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); n];
    for c in 0..n {
        for (r, v) in col.iter_mut().enumerate() {
            *v = buf[r * n + c];
        }
        fft.process(&mut col);
        for (r, v) in col.iter().enumerate() {
            buf[r * n + c] = *v;
        }
    }
    Ok(ComplexGrid {
        n,
        re: buf.iter().map(|c| c.re).collect(),
        im: buf.iter().map(|c| c.im).collect(),
    })
}

/// Moves the zero-frequency entry to `(n/2, n/2)` by swapping quadrants.
pub fn fftshift(g: &ComplexGrid) -> ComplexGrid {
    let n = g.n;
    let h = n / 2;
    let mut re = vec![0.0; n * n];
    let mut im = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let dst = ((r + h) % n) * n + (c + h) % n;
            re[dst] = g.re[r * n + c];
            im[dst] = g.im[r * n + c];
        }
    }
    ComplexGrid { n, re, im }
}
