//! Equidistant sample grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Right end of the signal domain. `N` input samples are mapped onto `[0, SIGNAL_DOMAIN_END]`.
pub const SIGNAL_DOMAIN_END: f64 = 2.0;

/// Half-width of the grid used to normalize mother wavelets, in mother coordinates.
pub const NORMALIZATION_HALF_WIDTH: f64 = 8.0;

/// Point count of the normalization grid.
pub const NORMALIZATION_POINTS: usize = 4096;

/// `t_j = start + j * step` for `j = 0 .. len`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleGrid {
    start: f64,
    step: f64,
    len: usize,
}

impl SampleGrid {
    /// `len` equidistant points covering `[start, end]`, both endpoints included.
    pub fn new(start: f64, end: f64, len: usize) -> Result<Self> {
        if len < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 points, got {len}")));
        }
        if !start.is_finite() || !end.is_finite() || end <= start {
            return Err(Error::InvalidGrid(format!("empty interval [{start}, {end}]")));
        }
        Ok(Self {
            start,
            step: (end - start) / (len - 1) as f64,
            len,
        })
    }

    pub fn from_step(start: f64, step: f64, len: usize) -> Result<Self> {
        if len < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 points, got {len}")));
        }
        if !(step > 0.0) || !step.is_finite() || !start.is_finite() {
            return Err(Error::InvalidGrid(format!("step must be positive, got {step}")));
        }
        Ok(Self { start, step, len })
    }

    /// The grid `N` raw signal samples live on: `[0, 2]`.
    pub fn signal_domain(len: usize) -> Result<Self> {
        Self::new(0.0, SIGNAL_DOMAIN_END, len)
    }

    /// The fine symmetric grid on which `C(eta)` is computed.
    pub fn normalization() -> Self {
        Self::new(
            -NORMALIZATION_HALF_WIDTH,
            NORMALIZATION_HALF_WIDTH,
            NORMALIZATION_POINTS,
        )
        .expect("constant grid is valid")
    }

    /// Symmetric grid `[-half_width, half_width]`.
    pub fn symmetric(half_width: f64, len: usize) -> Result<Self> {
        Self::new(-half_width, half_width, len)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn step(&self) -> f64 {
        self.step
    }

    #[inline]
    pub fn start(&self) -> f64 {
        self.start
    }

    #[inline]
    pub fn end(&self) -> f64 {
        self.at(self.len - 1)
    }

    #[inline]
    pub fn at(&self, j: usize) -> f64 {
        self.start + j as f64 * self.step
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        (0..self.len).map(move |j| self.at(j))
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.points().collect()
    }

    /// Same interval, `factor` times the number of intervals.
    pub fn refined(&self, factor: usize) -> Self {
        let intervals = (self.len - 1) * factor.max(1);
        Self {
            start: self.start,
            step: self.step / factor.max(1) as f64,
            len: intervals + 1,
        }
    }

    pub fn check_len(&self, len: usize) -> Result<()> {
        if len == self.len {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.len,
                actual: len,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signal_domain_spacing() {
        let g = SampleGrid::signal_domain(300).unwrap();
        assert_eq!(g.len(), 300);
        assert!((g.step() - 2.0 / 299.0).abs() < 1e-15);
        assert!((g.end() - 2.0).abs() < 1e-12);
        for j in 1..g.len() {
            let d = g.at(j) - g.at(j - 1);
            assert!(((d - g.step()) / g.step()).abs() < 1e-12);
        }
    }

    #[test]
    fn normalization_grid_is_symmetric() {
        let g = SampleGrid::normalization();
        for j in 0..g.len() {
            assert!((g.at(j) + g.at(g.len() - 1 - j)).abs() < 1e-12);
        }
        // Gaussian factor at the ends is negligible
        assert!((-g.start() * g.start() / 2.0).exp() < 1e-13);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(SampleGrid::new(0.0, 1.0, 1).is_err());
        assert!(SampleGrid::new(1.0, 1.0, 10).is_err());
        assert!(SampleGrid::from_step(0.0, -1.0, 10).is_err());
    }

    #[test]
    fn refinement_keeps_interval() {
        let g = SampleGrid::new(-1.0, 3.0, 11).unwrap().refined(2);
        assert_eq!(g.len(), 21);
        assert!((g.end() - 3.0).abs() < 1e-12);
    }
}
