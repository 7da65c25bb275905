//! Control Lyapunov functions for the output block and the composite
//! certificate covering the zero coordinates.
//!
//! The output CLF is `V_η(η) = ηᵀ P_η η` with `P_η` solving
//! `A_clᵀ P_η + P_η A_cl = −Q_η` for `A_cl = A − B K`. Under the
//! feedback-linearizing input and any `h ≤ h*_η`, its Euler-model decrease
//! is at least `h c λ_min(Q_η) ‖η‖²`.

use log::warn;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{solve_continuous_lyapunov, sym_eig_extremes, Matrix, Vector};
use crate::system::{NormalFormSystem, NormalState};

/// Safety margin applied to the lower bound on `σ`.
pub const SIGMA_MARGIN: f64 = 1.01;
/// Interior samples of `[0, h₂*]` checked for positive-definiteness of `Ω_σ(h)`.
pub const OMEGA_INTERIOR_SAMPLES: usize = 10;

#[derive(Clone, Debug)]
pub struct ClfDesign {
    pub k: Matrix,
    pub a_cl: Matrix,
    pub p_eta: Matrix,
    pub q_eta: Matrix,
    pub c: f64,
    pub h_star_eta: f64,
    pub lambda_min_q: f64,
}

/// Output-block CLF for gain `K`, weight `Q_η` and decrease fraction `c`.
pub fn design_output_clf(
    sys: &NormalFormSystem,
    k: &Matrix,
    q_eta: &Matrix,
    c: f64,
) -> Result<ClfDesign> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::BadParameter(format!("c = {c} must lie in (0, 1)")));
    }
    let gamma = sys.gamma();
    if k.rows() != sys.k() || k.cols() != gamma {
        return Err(Error::DimensionMismatch(format!(
            "K is {}x{}, expected {}x{gamma}",
            k.rows(),
            k.cols(),
            sys.k()
        )));
    }
    if q_eta.rows() != gamma || q_eta.cols() != gamma {
        return Err(Error::DimensionMismatch(format!(
            "Q_eta must be {gamma}x{gamma}"
        )));
    }
    let (lambda_min_q, _) = sym_eig_extremes(q_eta)?;
    if lambda_min_q <= 0.0 {
        return Err(Error::NotPositiveDefinite);
    }
    let q_eta = q_eta.symmetrize();
    let a_cl = sys.a().sub(&sys.b().matmul(k));
    let p_eta = solve_continuous_lyapunov(&a_cl, &q_eta).map_err(|e| match e {
        Error::SingularMatrix | Error::NotPositiveDefinite => Error::NotHurwitz,
        other => other,
    })?;
    let (_, curvature) =
        sym_eig_extremes(&a_cl.transpose().matmul(&p_eta).matmul(&a_cl).symmetrize())?;
    let h_star_eta = (1.0 - c) * lambda_min_q / curvature;
    Ok(ClfDesign {
        k: k.clone(),
        a_cl,
        p_eta,
        q_eta,
        c,
        h_star_eta,
        lambda_min_q,
    })
}

impl ClfDesign {
    /// `ηᵀ P_η η`
    pub fn v_eta(&self, eta: &[f64]) -> f64 {
        self.p_eta.quad_form(eta)
    }

    /// `2 P_η η`
    pub fn grad_v_eta(&self, eta: &[f64]) -> Vector {
        self.p_eta.matvec(eta).scale(2.0)
    }

    /// Coefficients `(Λ_h, λ_h, l_h)` of the sampled-data decrease constraint
    /// `uᵀΛu + 2λᵀu + l ≤ 0`, which is the Euler-model condition
    /// `V_η(F^a(ξ, u)) − V_η(η) ≤ −h c λ_min(Q_η) ‖η‖²` divided by `h`.
    pub fn qcqp_coefficients(
        &self,
        sys: &NormalFormSystem,
        xi: &NormalState,
        h: f64,
    ) -> Result<QcqpCoefficients> {
        if h.is_nan() || h <= 0.0 {
            return Err(Error::BadParameter(format!(
                "sample period {h} must be positive"
            )));
        }
        if h > self.h_star_eta {
            warn!(
                "sample period {h} exceeds h*_eta = {}; the feedback-linearizing input is no longer guaranteed feasible",
                self.h_star_eta
            );
        }
        let eta = xi.eta();
        let f = sys.f_eta(xi.xi())?;
        let g = sys.g_eta(xi.xi())?;
        let gt_p = g.transpose().matmul(&self.p_eta);
        let lambda = gt_p.matmul(&g).scale(h).symmetrize();
        let eta_fwd: Vec<f64> = eta.iter().zip(f.iter()).map(|(e, fi)| e + h * fi).collect();
        let lambda_vec = gt_p.matvec(&eta_fwd);
        let two_eta_fwd: Vec<f64> = eta
            .iter()
            .zip(f.iter())
            .map(|(e, fi)| 2.0 * e + h * fi)
            .collect();
        let eta_sq: f64 = eta.iter().map(|x| x * x).sum();
        let l = f.dot(&self.p_eta.matvec(&two_eta_fwd)) + self.c * self.lambda_min_q * eta_sq;
        Ok(QcqpCoefficients {
            lambda,
            lambda_vec,
            l,
        })
    }
}

/// `uᵀ Λ u + 2 λᵀ u + l ≤ 0`
#[derive(Clone, Debug, PartialEq)]
pub struct QcqpCoefficients {
    pub lambda: Matrix,
    pub lambda_vec: Vector,
    pub l: f64,
}

impl QcqpCoefficients {
    pub fn scalar(lambda: f64, lambda_vec: f64, l: f64) -> Self {
        Self {
            lambda: Matrix::diag(&[lambda]),
            lambda_vec: Vector::from([lambda_vec]),
            l,
        }
    }

    pub fn dim(&self) -> usize {
        self.lambda_vec.dim()
    }

    /// Constraint value at `u`; feasible iff non-positive.
    pub fn evaluate(&self, u: &[f64]) -> f64 {
        self.lambda.quad_form(u) + 2.0 * self.lambda_vec.dot(&Vector::from(u)) + self.l
    }
}

/// Quadratic Lyapunov function for the zero dynamics linearized at the origin.
#[derive(Clone, Debug)]
pub struct ZeroClf {
    pub p_z: Matrix,
    pub q_z: Matrix,
    pub d: f64,
    pub decay: f64,
}

pub fn design_zero_clf(sys: &NormalFormSystem, q_z: &Matrix, d: f64) -> Result<ZeroClf> {
    if !(d > 0.0 && d < 1.0) {
        return Err(Error::BadParameter(format!("d = {d} must lie in (0, 1)")));
    }
    let nz = sys.n() - sys.gamma();
    if q_z.rows() != nz || q_z.cols() != nz {
        return Err(Error::DimensionMismatch(format!("Q_z must be {nz}x{nz}")));
    }
    let (lambda_min_qz, _) = sym_eig_extremes(q_z)?;
    if lambda_min_qz <= 0.0 {
        return Err(Error::NotPositiveDefinite);
    }
    let q_z = q_z.symmetrize();
    let jac = sys.jacobian_zero_dynamics(&vec![0.0; nz])?;
    let p_z = solve_continuous_lyapunov(&jac, &q_z).map_err(|e| match e {
        Error::SingularMatrix | Error::NotPositiveDefinite => Error::NotHurwitz,
        other => other,
    })?;
    Ok(ZeroClf {
        p_z,
        q_z,
        d,
        decay: d * lambda_min_qz,
    })
}

/// `V(ξ) = σ V_η(η) + zᵀ P_z z` with the data certifying its decrease.
#[derive(Clone, Debug)]
pub struct CompositeLyapunov {
    pub p_z: Matrix,
    pub q_z: Matrix,
    pub d: f64,
    pub l_q: f64,
    pub sigma: f64,
    pub sigma_lower_bound: f64,
    pub h2_star: f64,
    c: f64,
    lambda_min_q_eta: f64,
    lambda_max_p_z: f64,
    lambda_min_q_z: f64,
}

/// Weights the output CLF against the zero-dynamics CLF so that
/// `Ω_σ(h)` stays positive definite on `[0, h₂*]`.
pub fn compose_lyapunov(
    design: &ClfDesign,
    zero: &ZeroClf,
    l_q: f64,
    h2_star: f64,
) -> Result<CompositeLyapunov> {
    if !(l_q > 0.0 && l_q.is_finite()) {
        return Err(Error::BadParameter(format!("L_q = {l_q} must be positive")));
    }
    let (_, lambda_max_p_z) = sym_eig_extremes(&zero.p_z)?;
    let (lambda_min_q_z, _) = sym_eig_extremes(&zero.q_z)?;
    let omega_cross = lambda_max_p_z * l_q;
    let h2_bound = zero.d * lambda_min_q_z / omega_cross;
    if !(h2_star > 0.0 && h2_star < h2_bound) {
        return Err(Error::BadParameter(format!(
            "h2* = {h2_star} must lie in (0, {h2_bound})"
        )));
    }
    let omega_z = zero.d * lambda_min_q_z - h2_star * omega_cross;
    let sigma_lower_bound = (omega_cross * omega_cross / omega_z + h2_star * omega_cross)
        / (design.c * design.lambda_min_q);
    let comp = CompositeLyapunov {
        p_z: zero.p_z.clone(),
        q_z: zero.q_z.clone(),
        d: zero.d,
        l_q,
        sigma: SIGMA_MARGIN * sigma_lower_bound,
        sigma_lower_bound,
        h2_star,
        c: design.c,
        lambda_min_q_eta: design.lambda_min_q,
        lambda_max_p_z,
        lambda_min_q_z,
    };
    let steps = OMEGA_INTERIOR_SAMPLES + 1;
    for i in 0..=steps {
        let h = h2_star * i as f64 / steps as f64;
        let (lo, _) = sym_eig_extremes(&comp.omega(h))?;
        if lo <= 0.0 {
            return Err(Error::CertificateFailed(format!(
                "Omega_sigma({h}) has eigenvalue {lo}"
            )));
        }
    }
    Ok(comp)
}

impl CompositeLyapunov {
    pub fn omega_cross(&self) -> f64 {
        self.lambda_max_p_z * self.l_q
    }

    /// `[[ω_η(σ,h), −ω_×], [−ω_×, ω_z(h)]]`
    pub fn omega(&self, h: f64) -> Matrix {
        let cross = self.omega_cross();
        let omega_eta = self.sigma * self.c * self.lambda_min_q_eta - h * cross;
        let omega_z = self.d * self.lambda_min_q_z - h * cross;
        Matrix::from_rows(&[&[omega_eta, -cross], &[-cross, omega_z]]).expect("2x2 literal")
    }

    pub fn lambda_min_omega(&self, h: f64) -> f64 {
        sym_eig_extremes(&self.omega(h))
            .expect("Omega is symmetric")
            .0
    }

    pub fn v(&self, design: &ClfDesign, xi: &NormalState) -> f64 {
        self.sigma * design.v_eta(xi.eta()) + self.p_z.quad_form(xi.z())
    }
}

/// Machine-readable design report.
#[derive(Clone, Debug, Serialize)]
pub struct DesignSummary {
    #[serde(rename = "K")]
    pub k: Vec<Vec<f64>>,
    #[serde(rename = "P_eta")]
    pub p_eta: Vec<Vec<f64>>,
    #[serde(rename = "Q_eta")]
    pub q_eta: Vec<Vec<f64>>,
    pub c: f64,
    pub h_star_eta: f64,
    pub sigma: Option<f64>,
    #[serde(rename = "P_z")]
    pub p_z: Option<Vec<Vec<f64>>>,
    #[serde(rename = "L_q")]
    pub l_q: Option<f64>,
}

impl DesignSummary {
    pub fn new(design: &ClfDesign, composite: Option<&CompositeLyapunov>) -> Self {
        Self {
            k: design.k.to_rows(),
            p_eta: design.p_eta.to_rows(),
            q_eta: design.q_eta.to_rows(),
            c: design.c,
            h_star_eta: design.h_star_eta,
            sigma: composite.map(|c| c.sigma),
            p_z: composite.map(|c| c.p_z.to_rows()),
            l_q: composite.map(|c| c.l_q),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::make_benchmark;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const S3: f64 = 1.732_050_807_568_877_2;

    fn benchmark_gain() -> Matrix {
        Matrix::from_rows(&[&[0.5, S3 / 2.0]]).unwrap()
    }

    fn benchmark_design(c: f64) -> ClfDesign {
        design_output_clf(&make_benchmark(), &benchmark_gain(), &Matrix::identity(2), c).unwrap()
    }

    fn benchmark_composite(design: &ClfDesign) -> CompositeLyapunov {
        let zero = design_zero_clf(&make_benchmark(), &Matrix::identity(1), 0.5).unwrap();
        compose_lyapunov(design, &zero, 4.0, 0.2).unwrap()
    }

    #[test]
    fn output_design_fixture() {
        let d = benchmark_design(0.5);
        let expected = Matrix::from_rows(&[&[S3, 1.0], &[1.0, S3]]).unwrap();
        assert!(d.p_eta.sub(&expected).max_abs() < 1e-12);
        assert_abs_diff_eq!(d.h_star_eta, (S3 - 1.0) / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.h_star_eta, 0.366_025, epsilon = 1e-6);
        assert_eq!(d.lambda_min_q, 1.0);
    }

    #[test]
    fn output_design_errors() {
        let sys = make_benchmark();
        let err = design_output_clf(&sys, &Matrix::zeros(1, 2), &Matrix::identity(2), 0.5);
        assert!(matches!(err, Err(Error::NotHurwitz)));
        for c in [0.0, 1.0, -0.2, f64::NAN] {
            let err = design_output_clf(&sys, &benchmark_gain(), &Matrix::identity(2), c);
            assert!(matches!(err, Err(Error::BadParameter(_))));
        }
        let err = design_output_clf(&sys, &benchmark_gain(), &Matrix::diag(&[1.0, -1.0]), 0.5);
        assert!(matches!(err, Err(Error::NotPositiveDefinite)));
    }

    #[test]
    fn h_star_decreases_with_c() {
        let hs: Vec<f64> = [0.1, 0.3, 0.5, 0.7, 0.9]
            .iter()
            .map(|&c| benchmark_design(c).h_star_eta)
            .collect();
        assert!(hs.windows(2).all(|w| w[1] < w[0]), "{hs:?}");
    }

    #[test]
    fn v_eta_fixtures() {
        let d = benchmark_design(0.5);
        assert_eq!(d.v_eta(&[0.0, 0.0]), 0.0);
        assert_eq!(d.grad_v_eta(&[0.0, 0.0]).as_slice(), &[0.0, 0.0]);
        assert_abs_diff_eq!(d.v_eta(&[1.0, 0.0]), S3, epsilon = 1e-12);
        let g = d.grad_v_eta(&[1.0, 0.0]);
        assert_abs_diff_eq!(g[0], 2.0 * S3, epsilon = 1e-12);
        assert_abs_diff_eq!(g[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn qcqp_coefficient_fixture() {
        let sys = make_benchmark();
        let d = benchmark_design(0.5);
        let co = d
            .qcqp_coefficients(&sys, &sys.state([1.0, 0.0, 1.0]), 0.2)
            .unwrap();
        // independent recomputation: f = (0, 10 sin 1), g = (0, 1)ᵀ
        let f2 = 10.0 * 1.0_f64.sin();
        let big = 0.2 * S3;
        let small = 1.0 + S3 * 0.2 * f2;
        // fᵀP(2η + h f) with η = (1, 0)
        let l = f2 * (1.0 * 2.0 + S3 * 0.2 * f2) + 0.5;
        assert_abs_diff_eq!(co.lambda[(0, 0)], big, epsilon = 1e-12);
        assert_abs_diff_eq!(co.lambda_vec[0], small, epsilon = 1e-12);
        assert_abs_diff_eq!(co.l, l, epsilon = 1e-12);
        assert_abs_diff_eq!(co.lambda[(0, 0)], 0.346_410, epsilon = 1e-6);
        assert_abs_diff_eq!(co.lambda_vec[0], 3.914_942, epsilon = 2e-6);
        assert_abs_diff_eq!(co.l, 41.857_820, epsilon = 5e-5);
    }

    #[test]
    fn qcqp_coefficients_at_origin_and_scaling() {
        let sys = make_benchmark();
        let d = benchmark_design(0.5);
        for h in [0.05, 0.2] {
            let co = d.qcqp_coefficients(&sys, &sys.origin(), h).unwrap();
            assert_abs_diff_eq!(co.lambda[(0, 0)], h * S3, epsilon = 1e-14);
            assert_eq!(co.lambda_vec[0], 0.0);
            assert_eq!(co.l, 0.0);
        }
        let xi = sys.state([0.4, -0.3, 0.9]);
        let c1 = d.qcqp_coefficients(&sys, &xi, 0.1).unwrap();
        let c2 = d.qcqp_coefficients(&sys, &xi, 0.2).unwrap();
        let c4 = d.qcqp_coefficients(&sys, &xi, 0.4).unwrap();
        assert_eq!(c2.lambda[(0, 0)], 2.0 * c1.lambda[(0, 0)]);
        // affine in h: equal increments over equal steps
        let dl = |a: &QcqpCoefficients, b: &QcqpCoefficients| b.lambda_vec[0] - a.lambda_vec[0];
        assert_abs_diff_eq!(dl(&c2, &c4), 2.0 * dl(&c1, &c2), epsilon = 1e-12);
        assert_abs_diff_eq!(c4.l - c2.l, 2.0 * (c2.l - c1.l), epsilon = 1e-12);
    }

    #[test]
    fn zero_clf_fixtures() {
        let sys = make_benchmark();
        let z = design_zero_clf(&sys, &Matrix::identity(1), 0.5).unwrap();
        assert_abs_diff_eq!(z.p_z[(0, 0)], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(z.decay, 0.5, epsilon = 1e-15);
        let z = design_zero_clf(&sys, &Matrix::diag(&[2.0]), 0.5).unwrap();
        assert_abs_diff_eq!(z.p_z[(0, 0)], 1.0, epsilon = 1e-9);

        let unstable = NormalFormSystem::new(
            2,
            1,
            1,
            Matrix::zeros(1, 1),
            Matrix::identity(1),
            |_| Vector::zeros(1),
            |_| Matrix::identity(1),
            |xi| Vector::from([xi[1]]),
        )
        .unwrap();
        assert!(matches!(
            design_zero_clf(&unstable, &Matrix::identity(1), 0.5),
            Err(Error::NotHurwitz)
        ));
    }

    #[test]
    fn composite_fixture() {
        let d = benchmark_design(0.5);
        let comp = benchmark_composite(&d);
        assert_abs_diff_eq!(comp.omega_cross(), 2.0, epsilon = 1e-8);
        // (4 / 0.1 + 0.2 * 0.5 * 4) / 0.5 = 80.8; P_z carries finite-difference error
        assert_abs_diff_eq!(comp.sigma_lower_bound, 80.8, epsilon = 1e-6);
        assert_abs_diff_eq!(comp.sigma, 1.01 * comp.sigma_lower_bound, epsilon = 1e-12);
        assert_abs_diff_eq!(comp.sigma, 81.608, epsilon = 1e-6);
        for i in 0..=20 {
            assert!(comp.lambda_min_omega(0.2 * i as f64 / 20.0) > 0.0);
        }
        let v = comp.v(&d, &make_benchmark().state([1.0, 0.0, 1.0]));
        assert_abs_diff_eq!(v, 81.608 * S3 + 0.5, epsilon = 1e-5);
        assert_abs_diff_eq!(v, 141.849, epsilon = 1e-3);
        assert_eq!(comp.v(&d, &make_benchmark().origin()), 0.0);
    }

    #[test]
    fn composite_rejects_large_h2() {
        let d = benchmark_design(0.5);
        let zero = design_zero_clf(&make_benchmark(), &Matrix::identity(1), 0.5).unwrap();
        assert!(matches!(
            compose_lyapunov(&d, &zero, 4.0, 0.3),
            Err(Error::BadParameter(_))
        ));
        assert!(matches!(
            compose_lyapunov(&d, &zero, 0.0, 0.1),
            Err(Error::BadParameter(_))
        ));
    }

    #[test]
    fn sigma_vanishes_with_coupling() {
        let d = benchmark_design(0.5);
        let zero = design_zero_clf(&make_benchmark(), &Matrix::identity(1), 0.5).unwrap();
        let bounds: Vec<f64> = [1e-1, 1e-3, 1e-6]
            .iter()
            .map(|&l| {
                compose_lyapunov(&d, &zero, l, 0.2)
                    .unwrap()
                    .sigma_lower_bound
            })
            .collect();
        assert!(bounds.windows(2).all(|w| w[1] < w[0]));
        assert!(bounds[2] < 1e-5);
    }

    #[test]
    fn summary_json_keys() {
        let d = benchmark_design(0.5);
        let comp = benchmark_composite(&d);
        let json = serde_json::to_value(DesignSummary::new(&d, Some(&comp))).unwrap();
        for key in [
            "K",
            "P_eta",
            "Q_eta",
            "c",
            "h_star_eta",
            "sigma",
            "P_z",
            "L_q",
        ] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
    }

    proptest! {
        #[test]
        fn v_eta_eigen_bounds(eta in prop::collection::vec(-10.0..10.0f64, 2)) {
            let d = benchmark_design(0.5);
            let (lo, hi) = sym_eig_extremes(&d.p_eta).unwrap();
            let n2: f64 = eta.iter().map(|x| x * x).sum();
            let v = d.v_eta(&eta);
            prop_assert!(lo * n2 - 1e-9 <= v && v <= hi * n2 + 1e-9);
        }

        #[test]
        fn composite_eigen_bounds(xi in prop::collection::vec(-3.0..3.0f64, 3)) {
            let d = benchmark_design(0.5);
            let comp = benchmark_composite(&d);
            let (plo, phi) = sym_eig_extremes(&d.p_eta).unwrap();
            let (zlo, zhi) = sym_eig_extremes(&comp.p_z).unwrap();
            let n2: f64 = xi.iter().map(|x| x * x).sum();
            let v = comp.v(&d, &make_benchmark().state(xi));
            let lower = (comp.sigma * plo).min(zlo) * n2;
            let upper = (comp.sigma * phi).max(zhi) * n2;
            prop_assert!(lower - 1e-9 <= v && v <= upper * (1.0 + 1e-12) + 1e-9);
        }

        #[test]
        fn constraint_matches_direct_expansion(
            xi in prop::collection::vec(-2.0..2.0f64, 3),
            u in -20.0..20.0f64,
            h in 0.01..0.4f64,
        ) {
            let sys = make_benchmark();
            let d = benchmark_design(0.5);
            let s = sys.state(xi);
            let next = crate::discretization::euler_step(&sys, &s, &[u], h).unwrap();
            let eta_sq: f64 = s.eta().iter().map(|x| x * x).sum();
            let direct = d.v_eta(next.eta()) - d.v_eta(s.eta()) + h * d.c * d.lambda_min_q * eta_sq;
            let co = d.qcqp_coefficients(&sys, &s, h).unwrap();
            let via = h * co.evaluate(&[u]);
            let scale = direct.abs().max(via.abs()).max(d.v_eta(next.eta())).max(1.0);
            prop_assert!((direct - via).abs() <= 1e-9 * scale, "{} vs {}", direct, via);
        }
    }
}
