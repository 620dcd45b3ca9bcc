//! Single-signal reconstruction: minimizes the relative projection residual
//! `E2(eta) / ||f||^2` over the wavelet parameters, either with Adam on the gradient or with
//! Levenberg-Marquardt on the projected residual.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::calculus::build_jacobian;
use crate::error::{Error, Result};
use crate::grid::SampleGrid;
use crate::optim::Adam;
use crate::rgw::{build_wavelet_matrix_with, EtaVector, LAMBDA_MIN};
use crate::vp::VpOperator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    #[default]
    Adam,
    /// Damped Gauss-Newton on `r(eta) = f - Psi Psi^+ f`. Every trial step counts toward the
    /// step budget, accepted or not.
    #[serde(alias = "lm")]
    LevenbergMarquardt,
}

impl std::str::FromStr for FitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(FitMethod::Adam),
            "lm" | "levenberg_marquardt" => Ok(FitMethod::LevenbergMarquardt),
            other => Err(Error::InvalidParameter(format!("unknown fit method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub method: FitMethod,
    pub steps: usize,
    pub learning_rate: f64,
    pub lambda_min: f64,
    /// Stop as soon as the relative residual energy falls below this.
    pub tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            method: FitMethod::Adam,
            steps: 2000,
            learning_rate: 1e-3,
            lambda_min: LAMBDA_MIN,
            tolerance: 1e-20,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    /// Best parameters seen.
    pub eta: EtaVector,
    pub coefficients: Vec<f64>,
    pub reconstruction: Vec<f64>,
    /// `||f - f_hat|| / ||f||` at `eta`.
    pub relative_error: f64,
    pub initial_relative_error: f64,
    pub steps_taken: usize,
    /// Relative error before each step, then the final value.
    pub history: Vec<f64>,
}

#[derive(Clone, Copy, PartialEq)]
enum Derivatives {
    None,
    Gradient,
    ResidualJacobian,
}

struct Evaluation {
    relative_energy: f64,
    coefficients: Vec<f64>,
    reconstruction: Vec<f64>,
    residual: DVector<f64>,
    /// `d(E2 / ||f||^2) / d eta`
    gradient: Vec<f64>,
    /// `dr / d eta`, N x Q
    residual_jacobian: Option<DMatrix<f64>>,
}

// The normalization constant only rescales columns, which leaves the span, r and E2 unchanged,
// so holding it fixed gives exact derivatives here.
fn evaluate(eta: &EtaVector, f: &[f64], energy: f64, grid: &SampleGrid, want: Derivatives) -> Result<Evaluation> {
    let wavelet = eta.wavelet()?;
    let psi = build_wavelet_matrix_with(eta, &wavelet, grid);
    let op = VpOperator::new(psi.matrix())?;
    let dec = op.decompose(f)?;
    let relative_energy = dec.residual_energy / energy;
    let mut gradient = Vec::new();
    let mut residual_jacobian = None;
    match want {
        Derivatives::None => {}
        Derivatives::Gradient => {
            // dE2/d eta_q = <dPsi_q, -2 r c^T>
            let weights: DMatrix<f64> = &dec.residual * dec.coefficients.transpose() * (-2.0 / energy);
            gradient = build_jacobian(eta, &wavelet, grid).contract(&weights);
        }
        Derivatives::ResidualJacobian => {
            // dr_q = -(I - Psi Psi^+) dPsi_q c - (Psi^+)^T dPsi_q^T r
            let jac = build_jacobian(eta, &wavelet, grid);
            let mut j = DMatrix::zeros(f.len(), jac.len());
            for q in 0..jac.len() {
                let d = jac.block(q);
                let dc = d * &dec.coefficients;
                let perp = &dc - op.psi() * (op.pinv() * &dc);
                let col = -perp - op.pinv().tr_mul(&d.tr_mul(&dec.residual));
                j.set_column(q, &col);
            }
            gradient = (j.tr_mul(&dec.residual) * (2.0 / energy)).iter().copied().collect();
            residual_jacobian = Some(j);
        }
    }
    Ok(Evaluation {
        relative_energy,
        coefficients: dec.coefficients.iter().copied().collect(),
        reconstruction: dec.projection.iter().copied().collect(),
        residual: dec.residual,
        gradient,
        residual_jacobian,
    })
}

/// Fits `eta` (dimensions and mother family fixed by `init`) to the samples `f` on `grid`.
pub fn reconstruct(f: &[f64], init: &EtaVector, grid: &SampleGrid, config: &FitConfig) -> Result<FitResult> {
    grid.check_len(f.len())?;
    if init.m() == 0 {
        return Err(Error::InvalidParameter("need at least one coefficient".into()));
    }
    if !(config.learning_rate >= 0.0) {
        return Err(Error::InvalidParameter(format!("learning rate must be >= 0, got {}", config.learning_rate)));
    }
    let energy: f64 = f.iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return Err(Error::DegenerateSignal { index: 0 });
    }

    let mut eta = init.clone();
    eta.project(config.lambda_min);
    let want = match config.method {
        FitMethod::Adam => Derivatives::Gradient,
        FitMethod::LevenbergMarquardt => Derivatives::ResidualJacobian,
    };
    let mut current = evaluate(&eta, f, energy, grid, want)?;
    let initial = current.relative_energy.max(0.0).sqrt();
    let mut best = (current.relative_energy, eta.clone(), current.coefficients.clone(), current.reconstruction.clone());
    let mut history = Vec::with_capacity(config.steps + 1);
    let mut steps_taken = 0;

    let mut params = eta.to_flat();
    let mut adam = Adam::new(params.len(), config.learning_rate);
    let mut damping = 1e-3;
    for step in 0..config.steps {
        history.push(current.relative_energy.max(0.0).sqrt());
        if current.relative_energy <= config.tolerance {
            break;
        }
        steps_taken = step + 1;
        match config.method {
            FitMethod::Adam => {
                adam.step(&mut params, &current.gradient);
                eta = eta.with_flat_projected(&params, config.lambda_min)?;
                params = eta.to_flat();
                current = evaluate(&eta, f, energy, grid, want)?;
                if !current.relative_energy.is_finite() {
                    return Err(Error::Divergence { epoch: steps_taken });
                }
            }
            FitMethod::LevenbergMarquardt => {
                let j = current.residual_jacobian.as_ref().expect("requested residual Jacobian");
                let jtj = j.tr_mul(j);
                let rhs = -j.tr_mul(&current.residual);
                let mut lhs = jtj.clone();
                for q in 0..lhs.nrows() {
                    lhs[(q, q)] += damping * (jtj[(q, q)] + 1e-12);
                }
                let delta = lhs.cholesky().map(|c| c.solve(&rhs));
                let trial = delta.and_then(|d| {
                    let x: Vec<f64> = params.iter().zip(d.iter()).map(|(p, d)| p + d).collect();
                    let cand = eta.with_flat_projected(&x, config.lambda_min).ok()?;
                    let ev = evaluate(&cand, f, energy, grid, want).ok()?;
                    ev.relative_energy.is_finite().then_some((cand, ev))
                });
                match trial {
                    Some((cand, ev)) if ev.relative_energy < current.relative_energy => {
                        eta = cand;
                        params = eta.to_flat();
                        current = ev;
                        damping = (damping / 3.0).max(1e-12);
                    }
                    _ => damping = (damping * 2.0).min(1e12),
                }
            }
        }
        if current.relative_energy < best.0 {
            best = (current.relative_energy, eta.clone(), current.coefficients.clone(), current.reconstruction.clone());
        }
    }
    history.push(current.relative_energy.max(0.0).sqrt());
    log::debug!("reconstruction: {steps_taken} steps, relative error {:.4e}", best.0.max(0.0).sqrt());

    Ok(FitResult {
        eta: best.1,
        coefficients: best.2,
        reconstruction: best.3,
        relative_error: best.0.max(0.0).sqrt(),
        initial_relative_error: initial,
        steps_taken,
        history,
    })
}

/// Relative L2 error of the best projection of `f` onto the columns for `eta`, without fitting.
pub fn relative_error(f: &[f64], eta: &EtaVector, grid: &SampleGrid) -> Result<f64> {
    grid.check_len(f.len())?;
    let energy: f64 = f.iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return Err(Error::DegenerateSignal { index: 0 });
    }
    Ok(evaluate(eta, f, energy, grid, Derivatives::None)?.relative_energy.max(0.0).sqrt())
}
