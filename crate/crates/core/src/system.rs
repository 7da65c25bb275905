//! Control-affine systems supplied in normal form.
//!
//! A [`NormalFormSystem`] is described by three callbacks on the normal
//! state `ξ = (η, z)`:
//!
//! ```text
//! η̇ = f_η(ξ) + g_η(ξ) u
//! ż = q(ξ)
//! ```
//!
//! together with the linear model `(A, B)` the output block is meant to be
//! linearized onto. The admissible region is approximated by a Euclidean
//! ball of radius `domain_radius`; leaving it is reported as
//! [`Error::DomainViolation`].

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

pub type VectorField = Arc<dyn Fn(&[f64]) -> Vector + Send + Sync>;
pub type MatrixField = Arc<dyn Fn(&[f64]) -> Matrix + Send + Sync>;

pub const DEFAULT_DOMAIN_RADIUS: f64 = 100.0;
const CONTROLLABILITY_RANK_TOL: f64 = 1e-9;

/// Normal-form coordinates `ξ = (η, z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalState {
    xi: Vector,
    gamma: usize,
}

impl NormalState {
    pub fn new(xi: impl Into<Vector>, gamma: usize) -> Self {
        let xi = xi.into();
        assert!(gamma <= xi.dim(), "output block larger than the state");
        Self { xi, gamma }
    }

    pub fn from_parts(eta: &[f64], z: &[f64]) -> Self {
        let mut xi = eta.to_vec();
        xi.extend_from_slice(z);
        Self {
            xi: xi.into(),
            gamma: eta.len(),
        }
    }

    pub fn xi(&self) -> &Vector {
        &self.xi
    }

    pub fn eta(&self) -> &[f64] {
        &self.xi[..self.gamma]
    }

    pub fn z(&self) -> &[f64] {
        &self.xi[self.gamma..]
    }

    pub fn gamma(&self) -> usize {
        self.gamma
    }

    pub fn dim(&self) -> usize {
        self.xi.dim()
    }

    pub fn norm(&self) -> f64 {
        self.xi.norm2()
    }

    pub fn with_xi(&self, xi: Vector) -> Self {
        debug_assert_eq!(xi.dim(), self.xi.dim());
        Self {
            xi,
            gamma: self.gamma,
        }
    }
}

#[derive(Clone)]
pub struct NormalFormSystem {
    n: usize,
    gamma: usize,
    m: usize,
    f_eta: VectorField,
    g_eta: MatrixField,
    q: VectorField,
    a: Matrix,
    b: Matrix,
    domain_radius: f64,
}

impl fmt::Debug for NormalFormSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NormalFormSystem")
            .field("n", &self.n)
            .field("gamma", &self.gamma)
            .field("m", &self.m)
            .field("k", &self.k())
            .field("domain_radius", &self.domain_radius)
            .finish_non_exhaustive()
    }
}

impl NormalFormSystem {
    /// Builds a system and checks that `(A, B)` is controllable.
    ///
    /// `A` must be `γ×γ` and `B` `γ×k` with `1 ≤ k ≤ m`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n: usize,
        gamma: usize,
        m: usize,
        a: Matrix,
        b: Matrix,
        f_eta: impl Fn(&[f64]) -> Vector + Send + Sync + 'static,
        g_eta: impl Fn(&[f64]) -> Matrix + Send + Sync + 'static,
        q: impl Fn(&[f64]) -> Vector + Send + Sync + 'static,
    ) -> Result<Self> {
        if gamma == 0 || gamma > n {
            return Err(Error::BadParameter(format!(
                "output dimension {gamma} must lie in [1, {n}]"
            )));
        }
        if a.rows() != gamma || a.cols() != gamma {
            return Err(Error::DimensionMismatch(format!(
                "A is {}x{}, expected {gamma}x{gamma}",
                a.rows(),
                a.cols()
            )));
        }
        let k = b.cols();
        if b.rows() != gamma || k == 0 || k > m {
            return Err(Error::DimensionMismatch(format!(
                "B is {}x{}, expected {gamma}xk with 1 <= k <= {m}",
                b.rows(),
                k
            )));
        }
        let rank = controllability_matrix(&a, &b).rank(CONTROLLABILITY_RANK_TOL);
        if rank < gamma {
            return Err(Error::NotControllable { rank, dim: gamma });
        }
        Ok(Self {
            n,
            gamma,
            m,
            f_eta: Arc::new(f_eta),
            g_eta: Arc::new(g_eta),
            q: Arc::new(q),
            a,
            b,
            domain_radius: DEFAULT_DOMAIN_RADIUS,
        })
    }

    pub fn with_domain_radius(mut self, radius: f64) -> Self {
        self.domain_radius = radius;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn gamma(&self) -> usize {
        self.gamma
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.b.cols()
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn domain_radius(&self) -> f64 {
        self.domain_radius
    }

    pub fn state(&self, xi: impl Into<Vector>) -> NormalState {
        let xi = xi.into();
        assert_eq!(xi.dim(), self.n, "state dimension mismatch");
        NormalState::new(xi, self.gamma)
    }

    pub fn origin(&self) -> NormalState {
        self.state(Vector::zeros(self.n))
    }

    pub fn guard(&self, xi: &[f64]) -> Result<()> {
        let norm = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
        // NaN also fails the guard
        if norm <= self.domain_radius {
            Ok(())
        } else {
            Err(Error::DomainViolation {
                norm,
                radius: self.domain_radius,
            })
        }
    }

    pub fn f_eta(&self, xi: &[f64]) -> Result<Vector> {
        self.guard(xi)?;
        Ok((self.f_eta)(xi))
    }

    pub fn g_eta(&self, xi: &[f64]) -> Result<Matrix> {
        self.guard(xi)?;
        Ok((self.g_eta)(xi))
    }

    pub fn q(&self, xi: &[f64]) -> Result<Vector> {
        self.guard(xi)?;
        Ok((self.q)(xi))
    }

    /// Stacked vector field `[f_η + g_η u ; q]`.
    pub fn eval_dynamics(&self, xi: &[f64], u: &[f64]) -> Result<Vector> {
        self.guard(xi)?;
        if xi.len() != self.n || u.len() != self.m {
            return Err(Error::DimensionMismatch(format!(
                "state {} / input {} for a system with n = {}, m = {}",
                xi.len(),
                u.len(),
                self.n,
                self.m
            )));
        }
        let eta_dot = (self.f_eta)(xi).add(&(self.g_eta)(xi).matvec(u));
        Ok(eta_dot.concat(&(self.q)(xi)))
    }

    /// `q(0_γ, z)`
    pub fn eval_zero_dynamics(&self, z: &[f64]) -> Result<Vector> {
        let mut xi = vec![0.0; self.gamma];
        xi.extend_from_slice(z);
        self.q(&xi)
    }

    /// Central-difference Jacobian of `z ↦ q(0_γ, z)` at `z0`.
    pub fn jacobian_zero_dynamics(&self, z0: &[f64]) -> Result<Matrix> {
        let nz = self.n - self.gamma;
        if z0.len() != nz {
            return Err(Error::DimensionMismatch(format!(
                "zero coordinate of length {}, expected {nz}",
                z0.len()
            )));
        }
        let scale = z0.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
        let eps = 1e-6 * scale;
        let mut jac = Matrix::zeros(nz, nz);
        let mut zp = z0.to_vec();
        for j in 0..nz {
            zp[j] = z0[j] + eps;
            let fp = self.eval_zero_dynamics(&zp)?;
            zp[j] = z0[j] - eps;
            let fm = self.eval_zero_dynamics(&zp)?;
            zp[j] = z0[j];
            for i in 0..nz {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * eps);
            }
        }
        Ok(jac)
    }
}

/// `[B, AB, …, A^{γ−1}B]`
fn controllability_matrix(a: &Matrix, b: &Matrix) -> Matrix {
    let gamma = a.rows();
    let k = b.cols();
    let mut c = Matrix::zeros(gamma, gamma * k);
    let mut block = b.clone();
    for p in 0..gamma {
        for i in 0..gamma {
            for j in 0..k {
                c[(i, p * k + j)] = block[(i, j)];
            }
        }
        block = a.matmul(&block);
    }
    c
}

/// Estimates a Lipschitz bound of `q` with respect to `η` by sampling
/// `‖q(η, z) − q(0, z)‖ / ‖η‖` on a uniform grid over the box
/// `[-radius, radius]^n` and inflating the maximum by 1.5.
pub fn estimate_lipschitz_q(
    sys: &NormalFormSystem,
    radius: f64,
    points_per_axis: usize,
) -> Result<f64> {
    if points_per_axis < 2 || radius <= 0.0 {
        return Err(Error::BadParameter(
            "Lipschitz grid needs a positive radius and at least 2 points per axis".into(),
        ));
    }
    let n = sys.n();
    let gamma = sys.gamma();
    let axis: Vec<f64> = (0..points_per_axis)
        .map(|i| -radius + 2.0 * radius * i as f64 / (points_per_axis - 1) as f64)
        .collect();
    let mut best = 0.0_f64;
    let mut idx = vec![0usize; n];
    loop {
        let xi: Vec<f64> = idx.iter().map(|&i| axis[i]).collect();
        let eta_norm = xi[..gamma].iter().map(|x| x * x).sum::<f64>().sqrt();
        if eta_norm > 1e-12 {
            let mut pinned = xi.clone();
            pinned[..gamma].iter_mut().for_each(|x| *x = 0.0);
            let dq = sys.q(&xi)?.sub(&sys.q(&pinned)?).norm2();
            best = best.max(dq / eta_norm);
        }
        // odometer increment
        let mut d = 0;
        loop {
            if d == n {
                return Ok(1.5 * best);
            }
            idx[d] += 1;
            if idx[d] < points_per_axis {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// The three-state benchmark
///
/// ```text
/// η̇₁ = η₂,  η̇₂ = 10 sin(η₁) + u,  ż = η₁² − z
/// ```
///
/// with the output block linearized onto a double integrator.
pub fn make_benchmark() -> NormalFormSystem {
    let a = Matrix::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]).expect("static matrix");
    let b = Matrix::from_rows(&[&[0.0], &[1.0]]).expect("static matrix");
    NormalFormSystem::new(
        3,
        2,
        1,
        a,
        b,
        |xi| Vector::from([xi[1], 10.0 * xi[0].sin()]),
        |_| Matrix::from_rows(&[&[0.0], &[1.0]]).expect("static matrix"),
        |xi| Vector::from([xi[0] * xi[0] - xi[2]]),
    )
    .expect("benchmark pair is controllable")
}
