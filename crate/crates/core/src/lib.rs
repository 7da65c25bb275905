//! Sampled-data control Lyapunov function controllers for control-affine
//! systems in normal form.
//!
//! The crate builds an output-block CLF from a stabilizing gain, derives
//! three controllers from it (feedback-linearizing, continuous-time CLF-QP
//! and the sampled-data CLF-QCQP), and simulates them under zero-order hold
//! against a high-accuracy integrator of the true dynamics.
//!
//! ```
//! use sdclf::prelude::*;
//!
//! let sys = make_benchmark();
//! let k = Matrix::from_rows(&[&[0.5, 3f64.sqrt() / 2.0]]).unwrap();
//! let design = design_output_clf(&sys, &k, &Matrix::identity(2), 0.5).unwrap();
//! let xi = sys.state([1.0, 0.0, 1.0]);
//! let r = clf_qcqp_controller(&design, &sys, &xi, 0.2).unwrap();
//! assert!((r.u[0] + 8.676).abs() < 1e-3);
//! ```

pub mod clf;
pub mod controllers;
pub mod discretization;
pub mod error;
pub mod linalg;
pub mod par;
pub mod simulate;
pub mod system;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::clf::{
        compose_lyapunov, design_output_clf, design_zero_clf, ClfDesign, CompositeLyapunov,
        DesignSummary, QcqpCoefficients, ZeroClf,
    };
    pub use crate::controllers::{
        clf_qcqp_controller, clf_qp_controller, fbl_controller, solve_min_norm_qcqp, ControlResult,
        ControllerKind, SolverStatus,
    };
    pub use crate::discretization::{
        estimate_consistency_order, euler_step, exact_step, one_step_error, state_lattice,
        ConsistencyReport, StepConfig,
    };
    pub use crate::linalg::{Matrix, Vector};
    pub use crate::par::Execution;
    pub use crate::simulate::{
        export_trajectory, practical_stability_sweep, run_closed_loop, SweepSummary, Trajectory,
    };
    pub use crate::system::{make_benchmark, NormalFormSystem, NormalState};
    pub use crate::{Error, Result};
}
