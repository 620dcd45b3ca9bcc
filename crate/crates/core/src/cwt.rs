//! Quadrature reference for continuous wavelet coefficients, scalograms, the numerical
//! admissibility check and the Ricker baseline wavelet.

use std::io::Write;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SampleGrid;
use crate::rgw::{EtaVector, Mother, Wavelet};

/// Mother-coordinate radius beyond which a wavelet is treated as zero.
pub const SUPPORT_RADIUS: f64 = 8.0;

/// Normalized Ricker wavelet, positive peak at the origin.
pub fn ricker(t: f64) -> f64 {
    Wavelet::ricker().value(t)
}

/// Riemann-sum approximation `h * sum_j f(t_j) psi_{lambda_k, tau_k}(t_j)` of the wavelet
/// coefficient for column `k` of `eta`.
pub fn quadrature_coefficient(
    f_samples: &[f64],
    eta: &EtaVector,
    wavelet: &Wavelet,
    k: usize,
    grid: &SampleGrid,
) -> Result<f64> {
    grid.check_len(f_samples.len())?;
    Ok(coefficient_at(f_samples, wavelet, eta.scale(k), eta.translation(k), grid))
}

#[inline]
fn coefficient_at(f: &[f64], wavelet: &Wavelet, lambda: f64, tau: f64, grid: &SampleGrid) -> f64 {
    grid.points()
        .zip(f)
        .map(|(t, &v)| v * wavelet.dilated(lambda, tau, t))
        .sum::<f64>()
        * grid.step()
}

/// How scalogram scales are spaced between the first and last scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScaleSpacing {
    #[default]
    Linear,
    /// Geometric spacing (constant ratio), as in dyadic `lambda_n = alpha^{-n}` grids.
    Octave,
}

/// `count` scales from `first` to `last`.
pub fn scale_axis(first: f64, last: f64, count: usize, spacing: ScaleSpacing) -> Vec<f64> {
    if count == 1 {
        return vec![first];
    }
    let steps = (count - 1) as f64;
    (0..count)
        .map(|i| {
            let x = i as f64 / steps;
            match spacing {
                ScaleSpacing::Linear => first + (last - first) * x,
                ScaleSpacing::Octave => first * (last / first).powf(x),
            }
        })
        .collect()
}

/// Default scalogram axis: 25 linearly spaced scales on `[0.1, 1.5]`.
pub fn default_scales() -> Vec<f64> {
    scale_axis(0.1, 1.5, 25, ScaleSpacing::Linear)
}

/// `|W f(lambda_r, tau_k)|` over a scale x translation grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scalogram {
    pub scales: Vec<f64>,
    pub translations: Vec<f64>,
    /// Row-major, `scales.len()` rows by `translations.len()` columns.
    pub magnitudes: Vec<Vec<f64>>,
}

impl Scalogram {
    pub fn get(&self, r: usize, k: usize) -> f64 {
        self.magnitudes[r][k]
    }

    /// `(row, col)` of the largest magnitude.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = (0, 0);
        let mut value = f64::NEG_INFINITY;
        for (r, row) in self.magnitudes.iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                if v > value {
                    value = v;
                    best = (r, k);
                }
            }
        }
        best
    }

    /// CSV matrix. The first row holds the translations (after a `scale\tau` corner cell);
    /// every following row starts with its scale.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "scale\\tau")?;
        for t in &self.translations {
            write!(out, ",{t}")?;
        }
        writeln!(out)?;
        for (s, row) in self.scales.iter().zip(&self.magnitudes) {
            write!(out, "{s}")?;
            for v in row {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Quadrature coefficients of `f` for every `(scale, translation)` pair.
pub fn scalogram(
    f_samples: &[f64],
    wavelet: &Wavelet,
    scales: &[f64],
    translations: &[f64],
    grid: &SampleGrid,
) -> Result<Scalogram> {
    grid.check_len(f_samples.len())?;
    if let Some(s) = scales.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::InvalidParameter(format!("scale must be positive, got {s}")));
    }
    let magnitudes = scales
        .iter()
        .map(|&lambda| {
            translations
                .iter()
                .map(|&tau| coefficient_at(f_samples, wavelet, lambda, tau, grid).abs())
                .collect()
        })
        .collect();
    Ok(Scalogram {
        scales: scales.to_vec(),
        translations: translations.to_vec(),
        magnitudes,
    })
}

/// Fixed-scale coefficients computed two ways: quadrature at `tau = t_i` for every grid node,
/// and a discrete cross-correlation of `f` with the kernel `psi_{lambda, 0}` sampled at
/// multiples of `h`. Returns the largest deviation over nodes whose kernel support
/// (`|u| <= SUPPORT_RADIUS`) lies inside the grid.
pub fn convolution_consistency(f_samples: &[f64], wavelet: &Wavelet, lambda: f64, grid: &SampleGrid) -> Result<f64> {
    grid.check_len(f_samples.len())?;
    let h = grid.step();
    let n = grid.len();
    let half = (SUPPORT_RADIUS * lambda / h).ceil() as usize;
    let kernel: Vec<f64> = (0..=2 * half)
        .map(|d| wavelet.dilated(lambda, 0.0, (d as f64 - half as f64) * h))
        .collect();
    let mut worst = 0.0f64;
    for i in half..n.saturating_sub(half) {
        let quad = coefficient_at(f_samples, wavelet, lambda, grid.at(i), grid);
        let conv: f64 = kernel
            .iter()
            .enumerate()
            .map(|(d, &w)| f_samples[i + d - half] * w)
            .sum::<f64>()
            * h;
        worst = worst.max((quad - conv).abs());
    }
    Ok(worst)
}

/// Sampling used by [`admissibility_check`]: `points` samples on `[-half_width, half_width]`,
/// zero-padded to `padding` times the length before the DFT.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumGrid {
    pub half_width: f64,
    pub points: usize,
    pub padding: usize,
}

impl Default for SpectrumGrid {
    fn default() -> Self {
        Self {
            half_width: 8.0,
            points: 4096,
            padding: 4,
        }
    }
}

impl SpectrumGrid {
    /// Halves the time step and the frequency step.
    pub fn refined(&self) -> Self {
        Self {
            half_width: self.half_width,
            points: 2 * self.points,
            padding: 2 * self.padding,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    /// `|psi_hat(0)|`
    pub psi_hat_at_zero: f64,
    pub psi_hat_max: f64,
    /// Riemann sum of `|psi_hat(xi)|^2 / |xi|` over the nonzero frequency bins.
    pub admissibility_integral: f64,
    pub l2_norm: f64,
}

/// Discrete Fourier transform `psi_hat(xi) = int psi(t) exp(-i xi t) dt` of the sampled wavelet
/// and the discretised admissibility integral.
pub fn admissibility_check(wavelet: &Wavelet, spectrum: &SpectrumGrid) -> Result<AdmissibilityReport> {
    let grid = SampleGrid::symmetric(spectrum.half_width, spectrum.points)?;
    let h = grid.step();
    let samples: Vec<f64> = grid.points().map(|t| wavelet.value(t)).collect();
    let len = spectrum.points * spectrum.padding.max(1);
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(len, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);

    let d_xi = 2.0 * std::f64::consts::PI / (len as f64 * h);
    // zero frequency summed in mirrored pairs so odd wavelets cancel exactly
    let zero = {
        let n = samples.len();
        let mut s = 0.0;
        for j in 0..n / 2 {
            s += samples[j] + samples[n - 1 - j];
        }
        if n % 2 == 1 {
            s += samples[n / 2];
        }
        (s * h).abs()
    };
    let mut max = zero;
    let mut integral = 0.0;
    for (i, c) in buf.iter().enumerate().skip(1) {
        let bin = if i <= len / 2 { i as f64 } else { i as f64 - len as f64 };
        let mag = c.norm() * h;
        max = max.max(mag);
        integral += mag * mag / (bin.abs() * d_xi) * d_xi;
    }
    let l2 = (samples.iter().map(|v| v * v).sum::<f64>() * h).sqrt();
    Ok(AdmissibilityReport {
        psi_hat_at_zero: zero,
        psi_hat_max: max,
        admissibility_integral: integral,
        l2_norm: l2,
    })
}

/// Normalized wavelet for a mother, as used by the reference routines.
pub fn wavelet_for(mother: &Mother) -> Result<Wavelet> {
    Wavelet::new(mother.clone())
}
