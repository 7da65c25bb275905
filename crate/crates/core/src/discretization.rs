//! Discrete-time maps of the zero-order-hold closed loop.
//!
//! [`euler_step`] is the approximate map used for controller synthesis,
//! [`exact_step`] stands in for the true sampled flow by integrating the
//! held-input dynamics with fixed-substep RK4.

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::par::Execution;
use crate::system::{NormalFormSystem, NormalState};

pub const DEFAULT_SUBSTEPS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepConfig {
    pub h: f64,
    pub substeps: usize,
}

impl StepConfig {
    pub fn new(h: f64) -> Result<Self> {
        Self::with_substeps(h, DEFAULT_SUBSTEPS)
    }

    pub fn with_substeps(h: f64, substeps: usize) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::BadParameter(format!(
                "sample period {h} must be positive"
            )));
        }
        if substeps == 0 {
            return Err(Error::BadParameter("substeps must be at least 1".into()));
        }
        Ok(Self { h, substeps })
    }
}

/// `ξ + h (f_ξ(ξ) + g_ξ(ξ) u)`
pub fn euler_step(
    sys: &NormalFormSystem,
    xi: &NormalState,
    u: &[f64],
    h: f64,
) -> Result<NormalState> {
    let d = sys.eval_dynamics(xi.xi(), u)?;
    Ok(xi.with_xi(xi.xi().axpy(h, &d)))
}

/// Flow of `ξ̇ = f_ξ(ξ) + g_ξ(ξ) u` over one sample period with `u` held
/// constant. Every RK4 stage is checked against the domain guard.
pub fn exact_step(
    sys: &NormalFormSystem,
    xi: &NormalState,
    u: &[f64],
    cfg: &StepConfig,
) -> Result<NormalState> {
    let dt = cfg.h / cfg.substeps as f64;
    let mut x = xi.xi().clone();
    for _ in 0..cfg.substeps {
        let k1 = sys.eval_dynamics(&x, u)?;
        let k2 = sys.eval_dynamics(&x.axpy(0.5 * dt, &k1), u)?;
        let k3 = sys.eval_dynamics(&x.axpy(0.5 * dt, &k2), u)?;
        let k4 = sys.eval_dynamics(&x.axpy(dt, &k3), u)?;
        let incr: Vector = (0..x.dim())
            .map(|i| k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            .collect::<Vec<_>>()
            .into();
        x = x.axpy(dt / 6.0, &incr);
        sys.guard(&x)?;
    }
    Ok(xi.with_xi(x))
}

/// `‖F^e_h(ξ, k(ξ)) − F^a_h(ξ, k(ξ))‖₂`
pub fn one_step_error<C>(
    sys: &NormalFormSystem,
    controller: C,
    xi: &NormalState,
    cfg: &StepConfig,
) -> Result<f64>
where
    C: Fn(&NormalState) -> Result<Vector>,
{
    let u = controller(xi)?;
    let exact = exact_step(sys, xi, &u, cfg)?;
    let approx = euler_step(sys, xi, &u, cfg.h)?;
    Ok(exact.xi().sub(approx.xi()).norm2())
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct ConsistencyReport {
    pub slope: f64,
    pub hs: Vec<f64>,
    pub errors_per_level: Vec<f64>,
}

/// Empirical order of the Euler one-step error.
///
/// Takes the worst one-step error over `states` at `h0, h0/2, …,
/// h0/2^{levels−1}` and fits `log(error)` against `log(h)` by least squares.
pub fn estimate_consistency_order<C>(
    sys: &NormalFormSystem,
    controller: C,
    states: &[NormalState],
    h0: f64,
    levels: usize,
    substeps: usize,
) -> Result<ConsistencyReport>
where
    C: Fn(&NormalState) -> Result<Vector> + Sync + Send,
{
    estimate_consistency_order_with(
        Execution::default(),
        sys,
        controller,
        states,
        h0,
        levels,
        substeps,
    )
}

pub fn estimate_consistency_order_with<C>(
    exec: Execution,
    sys: &NormalFormSystem,
    controller: C,
    states: &[NormalState],
    h0: f64,
    levels: usize,
    substeps: usize,
) -> Result<ConsistencyReport>
where
    C: Fn(&NormalState) -> Result<Vector> + Sync + Send,
{
    if levels < 2 {
        return Err(Error::BadParameter(format!(
            "order estimation needs at least 2 levels, got {levels}"
        )));
    }
    if states.is_empty() {
        return Err(Error::BadParameter("no states to evaluate".into()));
    }
    let mut hs = Vec::with_capacity(levels);
    let mut errors = Vec::with_capacity(levels);
    for level in 0..levels {
        let cfg = StepConfig::with_substeps(h0 / f64::from(1u32 << level), substeps)?;
        let per_state = exec.map(states, |xi| one_step_error(sys, &controller, xi, &cfg));
        let mut worst = 0.0_f64;
        for e in per_state {
            worst = worst.max(e?);
        }
        hs.push(cfg.h);
        errors.push(worst);
    }
    if errors.iter().all(|&e| e < 1e-14) {
        return Err(Error::DegenerateData(
            "all one-step errors vanish; slope is undefined".into(),
        ));
    }
    if errors.iter().any(|&e| e <= 0.0) {
        return Err(Error::DegenerateData("zero error at some level".into()));
    }
    let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    Ok(ConsistencyReport {
        slope: least_squares_slope(&xs, &ys),
        hs,
        errors_per_level: errors,
    })
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Uniform lattice with `points_per_axis` nodes per coordinate over
/// `[lo, hi]^n`, in odometer order (first coordinate fastest).
pub fn state_lattice(
    sys: &NormalFormSystem,
    lo: f64,
    hi: f64,
    points_per_axis: usize,
) -> Vec<NormalState> {
    let n = sys.n();
    let axis: Vec<f64> = if points_per_axis == 1 {
        vec![0.5 * (lo + hi)]
    } else {
        (0..points_per_axis)
            .map(|i| lo + (hi - lo) * i as f64 / (points_per_axis - 1) as f64)
            .collect()
    };
    let total = points_per_axis.pow(n as u32);
    (0..total)
        .map(|mut flat| {
            let xi: Vec<f64> = (0..n)
                .map(|_| {
                    let v = axis[flat % points_per_axis];
                    flat /= points_per_axis;
                    v
                })
                .collect();
            sys.state(xi)
        })
        .collect()
}
