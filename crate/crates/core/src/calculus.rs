//! Analytic derivatives of sampled rational Gaussian wavelets with respect to every entry of
//! the parameter vector, and a central-difference oracle for checking them.
//!
//! The normalization constant `C(eta)` is treated as a constant: shape derivatives are those
//! of `C * P v exp(-t^2/2)` with `C` frozen at its current value.

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::grid::SampleGrid;
use crate::rgw::{
    build_wavelet_matrix_with, eval_base_poly, eval_rational_term, EtaVector, Mother, MotherShape,
    ParamKind, PolePair, Wavelet,
};

/// `(dr/da, dr/db_raw)` of the elementary polynomial. The `b` derivative is taken with respect
/// to `b_hat` and chained through `b_hat = b_raw^2 + eps`.
#[inline]
pub fn d_base_poly(pole: PolePair, t: f64) -> (f64, f64) {
    let a = pole.a;
    let b = pole.b_hat();
    let t2 = t * t;
    let d_da = -4.0 * (a * t2 - a * a * a - a * b * b);
    let d_db_hat = 4.0 * (b * t2 + b * b * b + a * a * b);
    (d_da, d_db_hat * 2.0 * pole.b_raw)
}

/// `(dv/da_k, dv/db_k)` for pole `which`: `-r_k^{-2} dr_k * prod_{j != k} r_j^{-1}`.
pub fn d_rational_term(poles: &[PolePair], which: usize, t: f64) -> (f64, f64) {
    let rk = eval_base_poly(poles[which], t);
    let (dra, drb) = d_base_poly(poles[which], t);
    let others: f64 = poles
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != which)
        .fold(1.0, |acc, (_, &z)| acc / eval_base_poly(z, t));
    let scale = -others / (rk * rk);
    (scale * dra, scale * drb)
}

/// `d psi_unnorm / d t_k = -t * prod_{j != k}(t^2 - t_j^2) * 2 t_k * v(t) * exp(-t^2/2)`.
pub fn d_mother_d_zero(shape: &MotherShape, which: usize, t: f64) -> f64 {
    let t2 = t * t;
    let others: f64 = shape
        .zeros
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != which)
        .map(|(_, z)| t2 - z.value() * z.value())
        .product();
    let tk = shape.zeros[which].value();
    -t * others * 2.0 * tk * eval_rational_term(&shape.poles, t) * (-0.5 * t2).exp()
}

/// `(d psi_unnorm / d a_k, d psi_unnorm / d b_k) = P(t) dv exp(-t^2/2)`.
pub fn d_mother_d_pole(shape: &MotherShape, which: usize, t: f64) -> (f64, f64) {
    let (dva, dvb) = d_rational_term(&shape.poles, which, t);
    let pg = crate::rgw::eval_odd_poly(&shape.zeros, t) * (-0.5 * t * t).exp();
    (pg * dva, pg * dvb)
}

/// Derivatives of `lambda^{-1/2} psi((t - tau)/lambda)` with respect to `lambda_k` and `tau_k`.
pub fn d_dilated_d_scale_translation(eta: &EtaVector, wavelet: &Wavelet, k: usize, t: f64) -> (f64, f64) {
    let lambda = eta.scale(k);
    let shift = t - eta.translation(k);
    let u = shift / lambda;
    let inv_sqrt = 1.0 / lambda.sqrt();
    let psi = wavelet.value(u);
    let dpsi = wavelet.derivative(u);
    let d_dlambda = -0.5 * inv_sqrt / lambda * psi - inv_sqrt * dpsi * shift / (lambda * lambda);
    let d_dtau = -inv_sqrt * dpsi / lambda;
    (d_dlambda, d_dtau)
}

/// Per-parameter derivative matrices `dPsi/d eta_q`, in flat parameter order.
#[derive(Debug, Clone)]
pub struct JacobianBlock {
    blocks: Vec<DMatrix<f64>>,
    kinds: Vec<ParamKind>,
}

impl JacobianBlock {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn block(&self, q: usize) -> &DMatrix<f64> {
        &self.blocks[q]
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn kind(&self, q: usize) -> ParamKind {
        self.kinds[q]
    }

    /// `<dPsi/d eta_q, weights>` (Frobenius) for every `q`. Scale/translation blocks only touch
    /// their own column.
    pub fn contract(&self, weights: &DMatrix<f64>) -> Vec<f64> {
        self.blocks
            .iter()
            .zip(&self.kinds)
            .map(|(b, kind)| match *kind {
                ParamKind::Scale(k) | ParamKind::Translation(k) => b.column(k).dot(&weights.column(k)),
                _ => b.dot(weights),
            })
            .collect()
    }
}

/// Assembles every `dPsi/d eta_q` on `grid`, holding the normalization of `wavelet` fixed.
pub fn build_jacobian(eta: &EtaVector, wavelet: &Wavelet, grid: &SampleGrid) -> JacobianBlock {
    let n_rows = grid.len();
    let m = eta.m();
    let ts = grid.to_vec();
    let dim = eta.dim();
    let kinds: Vec<ParamKind> = (0..dim).map(|q| eta.param_kind(q)).collect();
    let mut blocks: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n_rows, m); dim];

    for k in 0..m {
        for (j, &t) in ts.iter().enumerate() {
            let (dl, dt) = d_dilated_d_scale_translation(eta, wavelet, k, t);
            blocks[2 * k][(j, k)] = dl;
            blocks[2 * k + 1][(j, k)] = dt;
        }
    }

    if let Mother::Rational(shape) = wavelet.mother() {
        let p = shape.p();
        let c = wavelet.norm();
        for k in 0..m {
            let lambda = eta.scale(k);
            let tau = eta.translation(k);
            let factor = c / lambda.sqrt();
            for (j, &t) in ts.iter().enumerate() {
                let u = (t - tau) / lambda;
                for z in 0..p {
                    blocks[2 * m + z][(j, k)] = factor * d_mother_d_zero(shape, z, u);
                }
                for i in 0..shape.n() {
                    let (da, db) = d_mother_d_pole(shape, i, u);
                    blocks[2 * m + p + 2 * i][(j, k)] = factor * da;
                    blocks[2 * m + p + 2 * i + 1][(j, k)] = factor * db;
                }
            }
        }
    }

    JacobianBlock { blocks, kinds }
}

/// Central differences `(f(x + h e_q) - f(x - h e_q)) / 2h` for every coordinate `q`.
pub fn finite_difference_oracle<F>(f: F, x: &[f64], step: f64) -> Result<Vec<DMatrix<f64>>>
where
    F: Fn(&[f64]) -> Result<DMatrix<f64>>,
{
    let mut out = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for q in 0..x.len() {
        probe[q] = x[q] + step;
        let plus = f(&probe)?;
        probe[q] = x[q] - step;
        let minus = f(&probe)?;
        probe[q] = x[q];
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

/// `max|a - b| / max(max|a|, max|b|)`, zero when both are identically zero.
pub fn max_relative_error(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    let diff = (analytic - numeric).amax();
    let scale = analytic.amax().max(numeric.amax());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Worst relative error per parameter block.
#[derive(Debug, Clone, Default, Serialize, PartialEq)]
pub struct GradCheckReport {
    pub scale: f64,
    pub translation: f64,
    pub zero: f64,
    pub pole_real: f64,
    pub pole_imag: f64,
}

impl GradCheckReport {
    pub fn max(&self) -> f64 {
        [self.scale, self.translation, self.zero, self.pole_real, self.pole_imag]
            .into_iter()
            .fold(0.0, f64::max)
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        self.scale = self.scale.max(other.scale);
        self.translation = self.translation.max(other.translation);
        self.zero = self.zero.max(other.zero);
        self.pole_real = self.pole_real.max(other.pole_real);
        self.pole_imag = self.pole_imag.max(other.pole_imag);
    }

    pub fn entries(&self) -> [(&'static str, f64); 5] {
        [
            ("scale", self.scale),
            ("translation", self.translation),
            ("zero", self.zero),
            ("pole_real", self.pole_real),
            ("pole_imag", self.pole_imag),
        ]
    }

    pub fn record(&mut self, kind: ParamKind, err: f64) {
        let slot = match kind {
            ParamKind::Scale(_) => &mut self.scale,
            ParamKind::Translation(_) => &mut self.translation,
            ParamKind::Zero(_) => &mut self.zero,
            ParamKind::PoleReal(_) => &mut self.pole_real,
            ParamKind::PoleImag(_) => &mut self.pole_imag,
        };
        *slot = slot.max(err);
    }
}

/// Parameter draw for derivative checks: `lambda` in [0.1, 1.5], `tau` in [0, 2], zeros in
/// [0.1, 3], `a` and `b_raw` in [-2, 2].
pub fn random_check_eta<R: Rng + ?Sized>(rng: &mut R, m: usize, p: usize, n: usize) -> Result<EtaVector> {
    let scales = (0..m).map(|_| rng.random_range(0.1..=1.5)).collect();
    let translations = (0..m).map(|_| rng.random_range(0.0..=2.0)).collect();
    let zeros: Vec<f64> = (0..p).map(|_| rng.random_range(0.1..=3.0)).collect();
    let poles: Vec<PolePair> = (0..n)
        .map(|_| PolePair::new(rng.random_range(-2.0..=2.0), rng.random_range(-2.0..=2.0)))
        .collect();
    EtaVector::new(scales, translations, Mother::Rational(MotherShape::new(&zeros, &poles)))
}

/// Compares [`build_jacobian`] against central differences of the sampled matrix with `C`
/// frozen at its value for `eta`.
pub fn check_wavelet_jacobian(eta: &EtaVector, grid: &SampleGrid, step: f64) -> Result<GradCheckReport> {
    check_against(eta, grid, |f, x| finite_difference_oracle(f, x, step))
}

/// As [`check_wavelet_jacobian`] with the Richardson-extrapolated oracle
/// `(4 D(h/2) - D(h)) / 3`, whose truncation error is fourth order in `h`.
pub fn check_wavelet_jacobian_extrapolated(eta: &EtaVector, grid: &SampleGrid, step: f64) -> Result<GradCheckReport> {
    check_against(eta, grid, |f, x| {
        let coarse = finite_difference_oracle(&f, x, step)?;
        let fine = finite_difference_oracle(&f, x, step / 2.0)?;
        Ok(fine.into_iter().zip(coarse).map(|(a, b)| (a * 4.0 - b) / 3.0).collect())
    })
}

type Sampled<'a> = Box<dyn Fn(&[f64]) -> Result<DMatrix<f64>> + 'a>;

fn check_against<O>(eta: &EtaVector, grid: &SampleGrid, oracle: O) -> Result<GradCheckReport>
where
    O: Fn(Sampled<'_>, &[f64]) -> Result<Vec<DMatrix<f64>>>,
{
    let wavelet = eta.wavelet()?;
    let norm = wavelet.norm();
    let analytic = build_jacobian(eta, &wavelet, grid);
    let sampled: Sampled<'_> = Box::new(|x| {
        let probe = eta.with_flat(x)?;
        let frozen = Wavelet::with_norm(probe.mother().clone(), norm);
        Ok(build_wavelet_matrix_with(&probe, &frozen, grid).into_matrix())
    });
    let numeric = oracle(sampled, &eta.to_flat())?;
    let mut report = GradCheckReport::default();
    for (q, fd) in numeric.iter().enumerate() {
        report.record(analytic.kind(q), max_relative_error(analytic.block(q), fd));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rgw::{eval_mother_unnormalized, MotherKind, RealZero};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const H: f64 = 1e-6;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn base_poly_derivative_examples() {
        let (da, _) = d_base_poly(PolePair::from_b_hat(0.0, 1.0), 1.0);
        assert_eq!(da, 0.0);
        let (da, _) = d_base_poly(PolePair::from_b_hat(1.0, 1.0), 0.0);
        assert!((da - 8.0).abs() < 1e-12);
    }

    #[test]
    fn base_poly_derivative_matches_fd() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let z = PolePair::new(r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
            let t = r.random_range(-3.0..3.0);
            let (da, db) = d_base_poly(z, t);
            let fa = (eval_base_poly(PolePair::new(z.a + H, z.b_raw), t)
                - eval_base_poly(PolePair::new(z.a - H, z.b_raw), t))
                / (2.0 * H);
            let fb = (eval_base_poly(PolePair::new(z.a, z.b_raw + H), t)
                - eval_base_poly(PolePair::new(z.a, z.b_raw - H), t))
                / (2.0 * H);
            // absolute floor: derivative of a quantity of size r
            let scale = eval_base_poly(z, t);
            assert!((da - fa).abs() < 1e-7 * da.abs().max(scale), "{da} {fa}");
            assert!((db - fb).abs() < 1e-7 * db.abs().max(scale), "{db} {fb}");
        }
    }

    #[test]
    fn rational_term_derivative() {
        let z = PolePair::new(0.4, 0.8);
        let t = 0.6;
        let (da, _) = d_rational_term(&[z], 0, t);
        let r = eval_base_poly(z, t);
        assert_eq!(da, -d_base_poly(z, t).0 / (r * r));

        let poles = [PolePair::new(0.3, 0.9), PolePair::new(-1.1, 0.6), PolePair::new(0.8, -1.2)];
        for t in [0.2, 1.1] {
            let (a1, b1) = d_rational_term(&poles, 1, t);
            let (a2, b2) = d_rational_term(&poles, 1, -t);
            assert_eq!(a1, a2);
            assert_eq!(b1, b2);
        }
        for which in 0..3 {
            for t in [-1.4, 0.0, 0.5, 2.0] {
                let (da, db) = d_rational_term(&poles, which, t);
                let shift = |da: f64, db: f64| {
                    let mut p = poles;
                    p[which].a += da;
                    p[which].b_raw += db;
                    eval_rational_term(&p, t)
                };
                let fa = (shift(H, 0.0) - shift(-H, 0.0)) / (2.0 * H);
                let fb = (shift(0.0, H) - shift(0.0, -H)) / (2.0 * H);
                assert!(rel(da, fa) < 1e-6, "{da} {fa}");
                assert!(rel(db, fb) < 1e-6, "{db} {fb}");
            }
        }
    }

    #[test]
    fn zero_derivative() {
        let shape = MotherShape::new(&[0.7, 1.6], &[PolePair::new(0.2, 1.0)]);
        assert_eq!(d_mother_d_zero(&shape, 0, 0.0), 0.0);

        let single = MotherShape::new(&[1.3], &[PolePair::new(0.5, 0.7)]);
        let t1 = 1.3;
        let want = -t1 * 2.0 * t1 * eval_rational_term(&single.poles, t1) * (-t1 * t1 / 2.0f64).exp();
        assert!((d_mother_d_zero(&single, 0, t1) - want).abs() < 1e-15);

        for t in [0.3, 1.7] {
            assert_eq!(d_mother_d_zero(&shape, 1, t), -d_mother_d_zero(&shape, 1, -t));
        }

        let mut r = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let shape = MotherShape::random(&mut r, 3, 2);
            let t = r.random_range(-3.0..3.0);
            for k in 0..3 {
                let bump = |d: f64| {
                    let mut s = shape.clone();
                    s.zeros[k] = RealZero::new(s.zeros[k].value() + d);
                    eval_mother_unnormalized(&s, t)
                };
                let fd = (bump(H) - bump(-H)) / (2.0 * H);
                let an = d_mother_d_zero(&shape, k, t);
                assert!(rel(an, fd) < 1e-6, "{an} {fd}");
            }
        }
    }

    #[test]
    fn scale_translation_derivative_at_center() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let mut eta = EtaVector::random(&mut r, 2, MotherKind::Rational, 2, 2);
        let w = eta.wavelet().unwrap();
        let t = eta.translation(1);
        let (_, dtau) = d_dilated_d_scale_translation(&eta, &w, 1, t);
        let shape = w.mother().shape().unwrap();
        // P'(0) = prod(-t_k^2)
        let dp0: f64 = shape.zeros.iter().map(|z| -z.value() * z.value()).product();
        let dpsi0 = w.norm() * dp0 * eval_rational_term(&shape.poles, 0.0);
        let want = -eta.scale(1).powf(-1.5) * dpsi0;
        assert!(rel(dtau, want) < 1e-12);

        // lambda = 1, tau = 0: d/dlambda = -psi/2 - t psi' is odd in t
        let mut flat = eta.to_flat();
        flat[0] = 1.0;
        flat[1] = 0.0;
        eta = eta.with_flat(&flat).unwrap();
        for t in [0.3, 1.1, 2.4] {
            let (a, _) = d_dilated_d_scale_translation(&eta, &w, 0, t);
            let (b, _) = d_dilated_d_scale_translation(&eta, &w, 0, -t);
            assert!((a + b).abs() < 1e-12 * a.abs().max(1e-12));
        }
    }

    #[test]
    fn jacobian_dimensions_and_locality() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let grid = SampleGrid::signal_domain(80).unwrap();
        let eta = EtaVector::random(&mut r, 1, MotherKind::Rational, 0, 2);
        let w = eta.wavelet().unwrap();
        assert_eq!(build_jacobian(&eta, &w, &grid).len(), 2 + 0 + 4);

        let eta = EtaVector::random(&mut r, 3, MotherKind::Rational, 2, 2);
        let w = eta.wavelet().unwrap();
        let jac = build_jacobian(&eta, &w, &grid);
        let scale2 = jac.block(2);
        for k in [0, 2] {
            assert!(scale2.column(k).iter().all(|&v| v == 0.0));
        }
        assert!(scale2.column(1).amax() > 0.0);
        for q in 6..jac.len() {
            for k in 0..3 {
                assert!(jac.block(q).column(k).amax() > 0.0);
            }
        }
    }

    #[test]
    fn finite_difference_oracle_on_polynomials() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let lin = |x: &[f64]| Ok(&a * x[0] + DMatrix::from_element(2, 2, x[1]));
        let d = finite_difference_oracle(lin, &[0.3, -1.0], 1e-3).unwrap();
        assert!((&d[0] - &a).amax() < 1e-12);
        assert!((&d[1] - DMatrix::from_element(2, 2, 1.0)).amax() < 1e-12);

        // cubic: central difference error is h^2 f'''/6
        let cubic = |x: &[f64]| Ok(DMatrix::from_element(1, 1, x[0].powi(3)));
        for h in [1e-2, 1e-3] {
            let d = finite_difference_oracle(cubic, &[1.0], h).unwrap();
            assert!((d[0][(0, 0)] - 3.0 - h * h).abs() < 1e-9);
        }
    }

    #[test]
    fn jacobian_matches_oracle() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let grid = SampleGrid::signal_domain(150).unwrap();
        for _ in 0..10 {
            let eta = EtaVector::random(&mut r, 3, MotherKind::Rational, 3, 2);
            let report = check_wavelet_jacobian(&eta, &grid, 1e-6).unwrap();
            assert!(report.max() < 1e-5, "{report:?}");
        }
        let eta = EtaVector::random(&mut r, 4, MotherKind::Ricker, 0, 0);
        let report = check_wavelet_jacobian(&eta, &grid, 1e-6).unwrap();
        assert!(report.max() < 1e-5, "{report:?}");
    }
}
