//! Variable projection: least-squares wavelet coefficients `c = Psi^+ f`, the projection
//! residual and its energy `E2`, Golub-Pereyra derivatives of `c` and `E2` with respect to the
//! nonlinear parameters, and the a-priori error bound for VP-approximated wavelet coefficients.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use rand::Rng;

use crate::calculus::JacobianBlock;
use crate::error::{Error, Result};
use crate::grid::SampleGrid;
use crate::rgw::{build_wavelet_matrix, EtaVector};

/// Relative singular-value cutoff of the pseudoinverse.
pub const SINGULAR_CUTOFF: f64 = 1e-10;
/// Gram condition number above which VP gradients are flagged as unreliable.
pub const CONDITION_LIMIT: f64 = 1e12;
/// Endpoint magnitude, relative to the peak, above which a signal is not compactly supported.
pub const SUPPORT_TOLERANCE: f64 = 1e-6;

/// SVD-based factorisation of a wavelet matrix.
#[derive(Debug, Clone)]
pub struct VpOperator {
    psi: DMatrix<f64>,
    pinv: DMatrix<f64>,
    gram_inverse: DMatrix<f64>,
    singular_values: DVector<f64>,
    rank: usize,
}

impl VpOperator {
    pub fn new(psi: &DMatrix<f64>) -> Result<Self> {
        let (n_rows, m) = psi.shape();
        if n_rows < m {
            return Err(Error::InvalidParameter(format!(
                "need at least as many samples as coefficients ({n_rows} < {m})"
            )));
        }
        if psi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteActivation { stage: "wavelet matrix" });
        }
        let svd = psi.clone().svd(true, true);
        let u = svd.u.as_ref().expect("requested U");
        let v_t = svd.v_t.as_ref().expect("requested V^T");
        let sigma = &svd.singular_values;
        let sigma_max = sigma.max();
        let cutoff = SINGULAR_CUTOFF * sigma_max;

        let mut pinv = DMatrix::zeros(m, n_rows);
        let mut gram_inverse = DMatrix::zeros(m, m);
        let mut rank = 0;
        for (i, &s) in sigma.iter().enumerate() {
            if !(s > cutoff) {
                continue;
            }
            rank += 1;
            let v_i = v_t.row(i).transpose();
            pinv += (&v_i / s) * u.column(i).transpose();
            gram_inverse += (&v_i / (s * s)) * v_i.transpose();
        }
        if rank < m {
            log::debug!("pseudoinverse truncated to rank {rank} of {m}");
        }
        Ok(Self {
            psi: psi.clone(),
            pinv,
            gram_inverse,
            singular_values: sigma.clone(),
            rank,
        })
    }

    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    /// `Psi^+`, m x N.
    pub fn pinv(&self) -> &DMatrix<f64> {
        &self.pinv
    }

    /// `(Psi^T Psi)^{-1}` restricted to the retained singular subspace.
    pub fn gram_inverse(&self) -> &DMatrix<f64> {
        &self.gram_inverse
    }

    pub fn gram(&self) -> DMatrix<f64> {
        self.psi.tr_mul(&self.psi)
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.singular_values
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_truncated(&self) -> bool {
        self.rank < self.psi.ncols()
    }

    /// Infinity-norm condition number of the Gram matrix.
    pub fn gram_condition(&self) -> f64 {
        if self.is_truncated() {
            return f64::INFINITY;
        }
        inf_norm(&self.gram()) * inf_norm(&self.gram_inverse)
    }

    pub fn coefficients(&self, f: &DVector<f64>) -> DVector<f64> {
        &self.pinv * f
    }

    pub fn decompose(&self, f: &[f64]) -> Result<VpDecomposition> {
        if f.len() != self.psi.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.psi.nrows(),
                actual: f.len(),
            });
        }
        let f = DVector::from_column_slice(f);
        let coefficients = self.coefficients(&f);
        let projection = &self.psi * &coefficients;
        let residual = &f - &projection;
        let residual_energy = residual.norm_squared();
        Ok(VpDecomposition {
            coefficients,
            projection,
            residual,
            residual_energy,
        })
    }
}

/// Result of projecting one signal onto the span of the wavelet columns.
#[derive(Debug, Clone)]
pub struct VpDecomposition {
    /// `c = Psi^+ f`
    pub coefficients: DVector<f64>,
    /// `Psi c`
    pub projection: DVector<f64>,
    /// `f - Psi c`
    pub residual: DVector<f64>,
    /// `E2 = ||f - Psi c||^2`
    pub residual_energy: f64,
}

/// Moore-Penrose pseudoinverse via SVD with cutoff `SINGULAR_CUTOFF * sigma_max`.
pub fn pseudoinverse(psi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(VpOperator::new(psi)?.pinv)
}

pub fn decompose(psi: &DMatrix<f64>, f: &[f64]) -> Result<VpDecomposition> {
    VpOperator::new(psi)?.decompose(f)
}

/// `d c / d eta` and `d E2 / d eta` for one signal.
#[derive(Debug, Clone)]
pub struct VpJacobian {
    /// m x Q
    pub coefficients: DMatrix<f64>,
    /// length Q
    pub residual_energy: DVector<f64>,
    pub condition: f64,
}

impl VpJacobian {
    pub fn ensure_well_conditioned(&self) -> Result<()> {
        if self.condition > CONDITION_LIMIT {
            Err(Error::IllConditioned {
                condition: self.condition,
            })
        } else {
            Ok(())
        }
    }
}

/// Golub-Pereyra derivatives with `r = f - Psi c`:
///
/// ```text
/// dc/d eta_q  = -Psi^+ (dPsi_q) c + G^{-1} (dPsi_q)^T r
/// dE2/d eta_q = -2 r^T (dPsi_q) c
/// ```
pub fn vp_jacobian(op: &VpOperator, jac: &JacobianBlock, f: &[f64]) -> Result<VpJacobian> {
    let dec = op.decompose(f)?;
    let q_dim = jac.len();
    let m = op.psi.ncols();
    let mut dc = DMatrix::zeros(m, q_dim);
    let mut de2 = DVector::zeros(q_dim);
    for q in 0..q_dim {
        let d = jac.block(q);
        let d_c = d * &dec.coefficients;
        let col = -(&op.pinv * &d_c) + &op.gram_inverse * d.tr_mul(&dec.residual);
        dc.set_column(q, &col);
        de2[q] = -2.0 * dec.residual.dot(&d_c);
    }
    let condition = op.gram_condition();
    if condition > CONDITION_LIMIT {
        log::debug!("Gram condition number {condition:e} exceeds {CONDITION_LIMIT:e}");
    }
    Ok(VpJacobian {
        coefficients: dc,
        residual_energy: de2,
        condition,
    })
}

/// Derivative of the coefficients with respect to the input signal: `Psi^+` itself.
pub fn input_jacobian(op: &VpOperator) -> &DMatrix<f64> {
    op.pinv()
}

/// Maximum absolute row sum.
pub fn inf_norm(a: &DMatrix<f64>) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `||G||_inf * ||G^{-1}||_inf`; `+inf` when `G` is numerically singular.
pub fn condition_number_inf(g: &DMatrix<f64>) -> f64 {
    let inverse = match g.clone().cholesky() {
        Some(ch) => Some(ch.inverse()),
        None => g.clone().try_inverse(),
    };
    match inverse {
        Some(inv) if inv.iter().all(|v| v.is_finite()) => inf_norm(g) * inf_norm(&inv),
        _ => f64::INFINITY,
    }
}

/// Second-order central differences (one-sided at the ends).
pub fn central_difference(f: &[f64], step: f64) -> Vec<f64> {
    let n = f.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|j| {
            if j == 0 {
                (f[1] - f[0]) / step
            } else if j == n - 1 {
                (f[n - 1] - f[n - 2]) / step
            } else {
                (f[j + 1] - f[j - 1]) / (2.0 * step)
            }
        })
        .collect()
}

/// Observed VP coefficient error against the a-priori bound
///
/// ```text
/// |W f(lambda_k, tau_k) - h (Psi^+ f)_k| < h M1 (b - a) / 2
///                                         + h ||f||_inf ||Psi^*||_inf (kappa(G) / ||G||_inf + 1)
/// ```
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    /// `|W_k - h (Psi^+ f)_k|` per coefficient.
    pub observed: Vec<f64>,
    /// Reference coefficients `W_k` the observed error was measured against.
    pub reference: Vec<f64>,
    /// `h (Psi^+ f)_k`.
    pub vp_coefficients: Vec<f64>,
    pub rhs: f64,
    pub quadrature_term: f64,
    pub projection_term: f64,
    pub m1: f64,
    pub condition: f64,
    pub gram_norm: f64,
    pub adjoint_norm: f64,
    pub signal_norm: f64,
    pub step: f64,
}

impl BoundReport {
    pub fn holds(&self) -> bool {
        self.observed.iter().all(|&e| e <= self.rhs)
    }

    /// Re-measures the observed error against externally computed (e.g. high-accuracy)
    /// wavelet coefficients.
    pub fn with_reference(&self, reference: &[f64]) -> Result<BoundReport> {
        if reference.len() != self.vp_coefficients.len() {
            return Err(Error::DimensionMismatch {
                expected: self.vp_coefficients.len(),
                actual: reference.len(),
            });
        }
        let mut out = self.clone();
        out.reference = reference.to_vec();
        out.observed = reference
            .iter()
            .zip(&self.vp_coefficients)
            .map(|(w, v)| (w - v).abs())
            .collect();
        Ok(out)
    }
}

/// Evaluates the error bound for the coefficients of `f` on `grid`. The reference wavelet
/// coefficients are the Riemann-sum quadrature `h (Psi^T f)_k` on the same grid; use
/// [`BoundReport::with_reference`] to compare against a more accurate reference.
pub fn error_bound(
    psi: &DMatrix<f64>,
    f: &[f64],
    grid: &SampleGrid,
    f_derivative_estimate: &[f64],
) -> Result<BoundReport> {
    grid.check_len(f.len())?;
    grid.check_len(f_derivative_estimate.len())?;
    grid.check_len(psi.nrows())?;
    let peak = f.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let limit = SUPPORT_TOLERANCE * peak;
    let endpoint = f[0].abs().max(f[f.len() - 1].abs());
    if endpoint > limit {
        return Err(Error::SupportViolation { endpoint, limit });
    }

    let op = VpOperator::new(psi)?;
    let h = grid.step();
    let fv = DVector::from_column_slice(f);
    let reference: Vec<f64> = (psi.tr_mul(&fv) * h).iter().copied().collect();
    let vp_coefficients: Vec<f64> = (op.coefficients(&fv) * h).iter().copied().collect();
    let observed = reference
        .iter()
        .zip(&vp_coefficients)
        .map(|(w, v)| (w - v).abs())
        .collect();

    let m1 = psi
        .column_iter()
        .flat_map(|col| {
            col.iter()
                .zip(f_derivative_estimate)
                .map(|(p, d)| (p * d).abs())
                .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max);
    let adjoint_norm = inf_norm(&psi.transpose());
    let gram = op.gram();
    let gram_norm = inf_norm(&gram);
    let condition = condition_number_inf(&gram);
    let width = grid.end() - grid.start();
    let quadrature_term = h * m1 * width / 2.0;
    let projection_term = h * peak * adjoint_norm * (condition / gram_norm + 1.0);

    Ok(BoundReport {
        observed,
        reference,
        vp_coefficients,
        rhs: quadrature_term + projection_term,
        quadrature_term,
        projection_term,
        m1,
        condition,
        gram_norm,
        adjoint_norm,
        signal_norm: peak,
        step: h,
    })
}

/// Compactly supported smooth test signal
/// `A exp(-1 / (1 - x^2)) cos(omega (t - c))` with `x = (t - c) / w`, zero for `|x| >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmoothBump {
    pub center: f64,
    pub width: f64,
    pub amplitude: f64,
    pub frequency: f64,
}

impl SmoothBump {
    /// Support inside `[0.1, 1.9]`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            center: rng.random_range(0.8..1.2),
            width: rng.random_range(0.4..0.7),
            amplitude: rng.random_range(0.5..2.0),
            frequency: rng.random_range(0.0..10.0),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let x = (t - self.center) / self.width;
        if x.abs() >= 1.0 {
            return 0.0;
        }
        self.amplitude * (-1.0 / (1.0 - x * x)).exp() * (self.frequency * (t - self.center)).cos()
    }

    pub fn sample(&self, grid: &SampleGrid) -> Vec<f64> {
        grid.points().map(|t| self.eval(t)).collect()
    }
}

/// Bound evaluation at one grid size.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergencePoint {
    pub len: usize,
    pub step: f64,
    /// `max_k |W_k - h (Psi^+ f)_k|`, `W` from same-grid quadrature.
    pub max_observed: f64,
    pub rhs: f64,
    /// `max_k |W_k - h (Psi^T f)_k|` against a fine-grid reference `W`.
    pub max_quadrature_error: f64,
    pub holds: bool,
}

/// Evaluates [`error_bound`] for `f` at each signal-domain grid size in `lens`. The quadrature
/// error is measured against the same quadrature on a grid `refine` times finer than the
/// finest one.
pub fn bound_convergence<F: Fn(f64) -> f64>(
    eta: &EtaVector,
    f: F,
    lens: &[usize],
    refine: usize,
) -> Result<Vec<ConvergencePoint>> {
    let finest = lens.iter().copied().max().ok_or(Error::EmptyDataset)?;
    let fine = SampleGrid::signal_domain(finest)?.refined(refine.max(1));
    let fine_psi = build_wavelet_matrix(eta, &fine)?;
    let fine_f = DVector::from_iterator(fine.len(), fine.points().map(&f));
    let reference = fine_psi.matrix().tr_mul(&fine_f) * fine.step();

    lens.iter()
        .map(|&len| {
            let grid = SampleGrid::signal_domain(len)?;
            let samples: Vec<f64> = grid.points().map(&f).collect();
            let derivative = central_difference(&samples, grid.step());
            let psi = build_wavelet_matrix(eta, &grid)?;
            let report = error_bound(psi.matrix(), &samples, &grid, &derivative)?;
            let max_quadrature_error = report
                .reference
                .iter()
                .zip(reference.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            Ok(ConvergencePoint {
                len,
                step: grid.step(),
                max_observed: report.observed.iter().copied().fold(0.0, f64::max),
                rhs: report.rhs,
                max_quadrature_error,
                holds: report.holds(),
            })
        })
        .collect()
}

/// Least-squares slope of `log y` against `log x`. Pairs with a non-positive entry are skipped.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
