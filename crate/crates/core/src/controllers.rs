//! Feedback-linearizing, CLF-QP and sampled-data CLF-QCQP controllers.

use serde::Serialize;

use crate::clf::{ClfDesign, QcqpCoefficients};
use crate::error::{Error, Result};
use crate::linalg::{solve_linear, sym_eigen, Vector};
use crate::system::{NormalFormSystem, NormalState};

/// Quadratic coefficient below which the constraint is treated as affine.
const SINGULAR_QUADRATIC: f64 = 1e-14;
const QP_DEGENERATE_GRADIENT: f64 = 1e-12;
const BISECTION_RTOL: f64 = 1e-12;
const BISECTION_MAX_ITER: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverStatus {
    /// The unconstrained minimizer `u = 0` is feasible.
    Interior,
    /// The constraint holds with equality at the returned input.
    Active,
    Infeasible,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlResult {
    pub u: Vector,
    /// Value of the controller's constraint at `u` (non-positive when satisfied).
    pub constraint_residual: f64,
    pub solver_status: SolverStatus,
}

impl ControlResult {
    pub fn unconstrained(u: Vector) -> Self {
        Self {
            u,
            constraint_residual: 0.0,
            solver_status: SolverStatus::Interior,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
pub enum ControllerKind {
    #[serde(rename = "fbl")]
    Fbl,
    #[serde(rename = "clf-qp")]
    ClfQp,
    #[serde(rename = "clf-qcqp")]
    ClfQcqp,
}

impl ControllerKind {
    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Fbl => "fbl",
            ControllerKind::ClfQp => "clf-qp",
            ControllerKind::ClfQcqp => "clf-qcqp",
        }
    }

    /// Evaluates the controller at `xi` for sample period `h`. Only the
    /// QCQP controller depends on `h`.
    pub fn evaluate(
        self,
        design: &ClfDesign,
        sys: &NormalFormSystem,
        xi: &NormalState,
        h: f64,
    ) -> Result<ControlResult> {
        match self {
            ControllerKind::Fbl => {
                fbl_controller(design, sys, xi).map(ControlResult::unconstrained)
            }
            ControllerKind::ClfQp => clf_qp_controller(design, sys, xi),
            ControllerKind::ClfQcqp => clf_qcqp_controller(design, sys, xi, h),
        }
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fbl" => Ok(ControllerKind::Fbl),
            "clf-qp" => Ok(ControllerKind::ClfQp),
            "clf-qcqp" => Ok(ControllerKind::ClfQcqp),
            other => Err(Error::BadParameter(format!("unknown controller '{other}'"))),
        }
    }
}

/// Input rendering the output dynamics `η̇ = A_cl η`.
///
/// Solves `g_η(ξ) u = A η − B K η − f_η(ξ)` in the minimum-norm sense when
/// `g_η` is wide and in the least-squares sense when it is tall, then checks
/// that the match is exact.
pub fn fbl_controller(
    design: &ClfDesign,
    sys: &NormalFormSystem,
    xi: &NormalState,
) -> Result<Vector> {
    let eta = xi.eta();
    let f = sys.f_eta(xi.xi())?;
    let g = sys.g_eta(xi.xi())?;
    let rhs = design.a_cl.matvec(eta).sub(&f);
    let (rows, m) = (g.rows(), g.cols());
    let gt = g.transpose();
    let u = if rows == m {
        solve_linear(&g, &rhs)
    } else if m > rows {
        let w = solve_linear(&g.matmul(&gt), &rhs)?;
        Ok(gt.matvec(&w))
    } else {
        solve_linear(&gt.matmul(&g), &gt.matvec(&rhs))
    };
    let u = u.map_err(|e| match e {
        Error::SingularMatrix => Error::InconsistentLinearization(f64::INFINITY),
        other => other,
    })?;
    let residual = g.matvec(&u).sub(&rhs).norm2();
    if residual > 1e-8 * (1.0 + rhs.norm2()) {
        return Err(Error::InconsistentLinearization(residual));
    }
    Ok(u)
}

/// Min-norm input under the continuous-time CLF condition
/// `∇V_ηᵀ(f_η + g_η u) ≤ −λ_min(Q_η) ‖η‖²`.
pub fn clf_qp_controller(
    design: &ClfDesign,
    sys: &NormalFormSystem,
    xi: &NormalState,
) -> Result<ControlResult> {
    let eta = xi.eta();
    let f = sys.f_eta(xi.xi())?;
    let g = sys.g_eta(xi.xi())?;
    let grad = design.grad_v_eta(eta);
    let a = g.transpose().matvec(&grad);
    let eta_sq: f64 = eta.iter().map(|x| x * x).sum();
    let b = -design.lambda_min_q * eta_sq - grad.dot(&f);
    solve_min_norm_halfspace(&a, b)
}

/// `argmin ‖u‖² s.t. aᵀu ≤ b`
pub fn solve_min_norm_halfspace(a: &Vector, b: f64) -> Result<ControlResult> {
    if b >= 0.0 {
        return Ok(ControlResult {
            u: Vector::zeros(a.dim()),
            constraint_residual: -b,
            solver_status: SolverStatus::Interior,
        });
    }
    let a_sq = a.dot(a);
    if a_sq.sqrt() <= QP_DEGENERATE_GRADIENT {
        return Err(Error::Infeasible);
    }
    let u = a.scale(b / a_sq);
    Ok(ControlResult {
        constraint_residual: a.dot(&u) - b,
        u,
        solver_status: SolverStatus::Active,
    })
}

/// Unique minimizer of `‖u‖²` subject to `uᵀΛu + 2λᵀu + l ≤ 0`.
pub fn solve_min_norm_qcqp(coeffs: &QcqpCoefficients) -> Result<ControlResult> {
    let m = coeffs.dim();
    if coeffs.l <= 0.0 {
        return Ok(ControlResult {
            u: Vector::zeros(m),
            constraint_residual: coeffs.l,
            solver_status: SolverStatus::Interior,
        });
    }
    let u = if m == 1 {
        scalar_root(coeffs.lambda[(0, 0)], coeffs.lambda_vec[0], coeffs.l)?
    } else {
        secular_solve(coeffs)?
    };
    Ok(ControlResult {
        constraint_residual: coeffs.evaluate(&u),
        u,
        solver_status: SolverStatus::Active,
    })
}

/// Boundary point of `Λu² + 2λu + l ≤ 0` closest to zero, given `l > 0`.
fn scalar_root(quad: f64, lin: f64, l: f64) -> Result<Vector> {
    if quad <= SINGULAR_QUADRATIC {
        if lin == 0.0 {
            return Err(Error::Infeasible);
        }
        return Ok(Vector::from([-l / (2.0 * lin)]));
    }
    let disc = lin * lin - quad * l;
    if disc < 0.0 {
        return Err(Error::Infeasible);
    }
    let sq = disc.sqrt();
    // Both roots share the sign of −λ; the one nearer zero is l / (−λ ∓ √disc),
    // computed without cancellation.
    let denom = -lin - lin.signum() * sq;
    let near = l / denom;
    let far = denom / quad;
    let u = if (near.abs() - far.abs()).abs() <= 1e-14 * near.abs().max(far.abs()) {
        near.min(far)
    } else if near.abs() < far.abs() {
        near
    } else {
        far
    };
    Ok(Vector::from([u]))
}

/// KKT solve for `m > 1`: `u(μ) = −μ (I + μΛ)⁻¹ λ` with `μ > 0` chosen so the
/// constraint is active. In the eigenbasis of `Λ = V diag(d) Vᵀ` the
/// constraint along this curve reads
/// `φ(μ) = l − Σ λ̃ᵢ² μ (2 + μ dᵢ) / (1 + μ dᵢ)²`,
/// which is strictly decreasing in `μ`.
fn secular_solve(coeffs: &QcqpCoefficients) -> Result<Vector> {
    let (d, v) = sym_eigen(&coeffs.lambda)?;
    let lt = v.transpose().matvec(&coeffs.lambda_vec);
    let l = coeffs.l;
    let d: Vec<f64> = d
        .into_iter()
        .map(|x| if x <= SINGULAR_QUADRATIC { 0.0 } else { x })
        .collect();

    // Infimum of the constraint over all u: l − Σ_{dᵢ>0} λ̃ᵢ²/dᵢ, or −∞ if
    // some flat direction carries a linear term.
    let unbounded = d
        .iter()
        .zip(lt.iter())
        .any(|(&di, &li)| di == 0.0 && li.abs() > SINGULAR_QUADRATIC * (1.0 + l.abs()));
    let limit = l - d
        .iter()
        .zip(lt.iter())
        .filter(|(&di, _)| di > 0.0)
        .map(|(&di, &li)| li * li / di)
        .sum::<f64>();
    let in_basis = |mu: f64| -> Vec<f64> {
        d.iter()
            .zip(lt.iter())
            .map(|(&di, &li)| -mu * li / (1.0 + mu * di))
            .collect()
    };
    let to_u = |ut: Vec<f64>| v.matvec(&ut);
    if !unbounded {
        if limit > 0.0 {
            return Err(Error::Infeasible);
        }
        if limit == 0.0 {
            // only the pseudo-inverse point touches the boundary
            let ut = d
                .iter()
                .zip(lt.iter())
                .map(|(&di, &li)| if di > 0.0 { -li / di } else { 0.0 })
                .collect();
            return Ok(to_u(ut));
        }
    }
    let phi = |mu: f64| -> f64 {
        l - d
            .iter()
            .zip(lt.iter())
            .map(|(&di, &li)| li * li * mu * (2.0 + mu * di) / ((1.0 + mu * di) * (1.0 + mu * di)))
            .sum::<f64>()
    };
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut iter = 0;
    while phi(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
        iter += 1;
        if iter > BISECTION_MAX_ITER || !hi.is_finite() {
            return Err(Error::IterationLimit(BISECTION_MAX_ITER));
        }
    }
    for _ in 0..BISECTION_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if phi(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= BISECTION_RTOL * hi {
            // hi keeps φ ≤ 0, i.e. the returned point is feasible
            return Ok(to_u(in_basis(hi)));
        }
    }
    Err(Error::IterationLimit(BISECTION_MAX_ITER))
}

/// Min-norm input under the Euler-model decrease constraint
/// `V_η(F^a_h(ξ, u)) − V_η(η) ≤ −h c λ_min(Q_η) ‖η‖²`.
pub fn clf_qcqp_controller(
    design: &ClfDesign,
    sys: &NormalFormSystem,
    xi: &NormalState,
    h: f64,
) -> Result<ControlResult> {
    let coeffs = design.qcqp_coefficients(sys, xi, h)?;
    solve_min_norm_qcqp(&coeffs)
}
