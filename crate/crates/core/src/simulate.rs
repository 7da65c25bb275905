//! Zero-order-hold closed-loop simulation and sample-period sweeps.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::clf::{ClfDesign, CompositeLyapunov};
use crate::controllers::{ControlResult, SolverStatus};
use crate::discretization::{exact_step, StepConfig};
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::par::Execution;
use crate::system::{NormalFormSystem, NormalState};

/// A run counts as settled when it stays inside `R_target` from this
/// fraction of the horizon onwards.
pub const SETTLE_FRACTION: f64 = 0.75;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Termination {
    pub step: usize,
    pub reason: String,
}

/// Sampled closed-loop record. `states[k + 1]` is the exact-map image of
/// `states[k]` under the held input `inputs[k]`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub h: f64,
    pub times: Vec<f64>,
    pub states: Vec<NormalState>,
    pub inputs: Vec<Vector>,
    pub v_eta: Vec<f64>,
    pub v_composite: Option<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub statuses: Vec<SolverStatus>,
    pub terminated_early: Option<Termination>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn norms(&self) -> impl Iterator<Item = f64> + '_ {
        self.states.iter().map(NormalState::norm)
    }

    pub fn terminal_norm(&self) -> f64 {
        self.states.last().map_or(f64::NAN, NormalState::norm)
    }

    pub fn peak_norm(&self) -> f64 {
        self.norms().fold(0.0, f64::max)
    }

    /// Earliest sample instant after which every recorded state lies within
    /// `radius`. `None` if the run terminated early or ends outside.
    pub fn settled_time(&self, radius: f64) -> Option<f64> {
        if self.terminated_early.is_some() {
            return None;
        }
        let mut first = None;
        for (k, norm) in self
            .norms()
            .enumerate()
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
        {
            if norm <= radius {
                first = Some(k);
            } else {
                break;
            }
        }
        first.map(|k| self.times[k])
    }

    /// Stays within `radius` for all sample instants `t ≥ from`.
    pub fn settles_by(&self, radius: f64, from: f64) -> bool {
        self.settled_time(radius)
            .is_some_and(|t| t <= from + 1e-9 * from.abs().max(1.0))
    }
}

/// Runs the sampled loop `ξ_{k+1} = F^e_h(ξ_k, k_h(ξ_k))` for `round(T / h)`
/// steps. Domain violations and controller failures end the run early and
/// are recorded in [`Trajectory::terminated_early`].
pub fn run_closed_loop<C>(
    sys: &NormalFormSystem,
    design: &ClfDesign,
    composite: Option<&CompositeLyapunov>,
    controller: C,
    xi0: &NormalState,
    t_final: f64,
    cfg: &StepConfig,
) -> Result<Trajectory>
where
    C: Fn(&NormalState) -> Result<ControlResult>,
{
    let h = cfg.h;
    if t_final.is_nan() || t_final < h {
        return Err(Error::BadParameter(format!(
            "horizon {t_final} shorter than the sample period {h}"
        )));
    }
    sys.guard(xi0.xi())?;
    let steps = (t_final / h).round() as usize;
    let mut traj = Trajectory {
        h,
        times: vec![0.0],
        states: vec![xi0.clone()],
        inputs: Vec::with_capacity(steps),
        v_eta: vec![design.v_eta(xi0.eta())],
        v_composite: composite.map(|c| vec![c.v(design, xi0)]),
        residuals: Vec::with_capacity(steps),
        statuses: Vec::with_capacity(steps),
        terminated_early: None,
    };
    let mut xi = xi0.clone();
    for k in 0..steps {
        let control = match controller(&xi) {
            Ok(r) if r.solver_status == SolverStatus::Infeasible => Err(Error::Infeasible),
            other => other,
        };
        let control = match control {
            Ok(c) => c,
            Err(e) => {
                traj.terminated_early = Some(Termination {
                    step: k,
                    reason: e.to_string(),
                });
                break;
            }
        };
        let next = match exact_step(sys, &xi, &control.u, cfg) {
            Ok(next) => next,
            Err(e) => {
                traj.terminated_early = Some(Termination {
                    step: k,
                    reason: e.to_string(),
                });
                break;
            }
        };
        traj.inputs.push(control.u);
        traj.residuals.push(control.constraint_residual);
        traj.statuses.push(control.solver_status);
        traj.times.push((k + 1) as f64 * h);
        traj.v_eta.push(design.v_eta(next.eta()));
        if let (Some(vs), Some(c)) = (traj.v_composite.as_mut(), composite) {
            vs.push(c.v(design, &next));
        }
        traj.states.push(next.clone());
        xi = next;
    }
    Ok(traj)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRecord {
    pub h: f64,
    pub terminal_norm: f64,
    pub peak_norm: f64,
    pub settled_time: Option<f64>,
    #[serde(rename = "R_target")]
    pub r_target: f64,
    pub settled: bool,
    pub terminated_early: Option<Termination>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepSummary {
    #[serde(rename = "T")]
    pub t_final: f64,
    #[serde(rename = "R_target")]
    pub r_target: f64,
    pub records: Vec<SweepRecord>,
}

impl SweepSummary {
    /// Each terminal norm is at most `slack` times the one at the next
    /// larger sample period.
    pub fn trend_holds(&self, slack: f64) -> bool {
        self.records
            .windows(2)
            .all(|w| w[1].terminal_norm <= slack * w[0].terminal_norm)
    }

    pub fn all_settled(&self) -> bool {
        self.records.iter().all(|r| r.settled)
    }
}

pub struct SweepOutcome {
    pub summary: SweepSummary,
    /// Same order as `summary.records`.
    pub trajectories: Vec<Trajectory>,
}

/// Runs one closed loop per sample period, records sorted by `h` descending.
#[allow(clippy::too_many_arguments)]
pub fn practical_stability_sweep<C>(
    sys: &NormalFormSystem,
    design: &ClfDesign,
    composite: Option<&CompositeLyapunov>,
    family: C,
    xi0: &NormalState,
    hs: &[f64],
    t_final: f64,
    r_target: f64,
    substeps: usize,
) -> Result<SweepOutcome>
where
    C: Fn(f64, &NormalState) -> Result<ControlResult> + Sync + Send,
{
    practical_stability_sweep_with(
        Execution::default(),
        sys,
        design,
        composite,
        family,
        xi0,
        hs,
        t_final,
        r_target,
        substeps,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn practical_stability_sweep_with<C>(
    exec: Execution,
    sys: &NormalFormSystem,
    design: &ClfDesign,
    composite: Option<&CompositeLyapunov>,
    family: C,
    xi0: &NormalState,
    hs: &[f64],
    t_final: f64,
    r_target: f64,
    substeps: usize,
) -> Result<SweepOutcome>
where
    C: Fn(f64, &NormalState) -> Result<ControlResult> + Sync + Send,
{
    if hs.is_empty() {
        return Err(Error::BadParameter("no sample periods to sweep".into()));
    }
    let mut hs = hs.to_vec();
    hs.sort_by(|a, b| b.total_cmp(a));
    let cfgs = hs
        .iter()
        .map(|&h| StepConfig::with_substeps(h, substeps))
        .collect::<Result<Vec<_>>>()?;
    let runs = exec.map(&cfgs, |cfg| {
        run_closed_loop(
            sys,
            design,
            composite,
            |xi: &NormalState| family(cfg.h, xi),
            xi0,
            t_final,
            cfg,
        )
    });
    let trajectories = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let records = trajectories
        .iter()
        .map(|t| {
            let settled_time = t.settled_time(r_target);
            SweepRecord {
                h: t.h,
                terminal_norm: t.terminal_norm(),
                peak_norm: t.peak_norm(),
                settled_time,
                r_target,
                settled: t.settles_by(r_target, SETTLE_FRACTION * t_final),
                terminated_early: t.terminated_early.clone(),
            }
        })
        .collect();
    Ok(SweepOutcome {
        summary: SweepSummary {
            t_final,
            r_target,
            records,
        },
        trajectories,
    })
}

/// CSV with header `t,xi_1..xi_n,u_1..u_m,V_eta,residual`; one row per
/// sample instant, input and residual left blank on the final row.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let n = traj.states.first().map_or(0, NormalState::dim);
    let m = traj.inputs.first().map_or(0, Vector::dim);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("xi_{i}")));
    header.extend((1..=m).map(|i| format!("u_{i}")));
    header.push("V_eta".into());
    header.push("residual".into());
    w.write_record(&header)?;
    for (k, xi) in traj.states.iter().enumerate() {
        let mut row = vec![fmt17(traj.times[k])];
        row.extend(xi.xi().iter().map(|&x| fmt17(x)));
        match traj.inputs.get(k) {
            Some(u) => row.extend(u.iter().map(|&x| fmt17(x))),
            None => row.extend(std::iter::repeat_n(String::new(), m)),
        }
        row.push(fmt17(traj.v_eta[k]));
        row.push(
            traj.residuals
                .get(k)
                .map_or_else(String::new, |&r| fmt17(r)),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the trajectory CSV atomically (temporary file plus rename).
pub fn export_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    write_atomic(path, |f| write_trajectory_csv(traj, f))
}

pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut fs::File) -> Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    fill(tmp.as_file_mut())?;
    tmp.as_file_mut().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// 17 significant digits, enough to round-trip any `f64`.
fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clf::design_output_clf;
    use crate::controllers::{clf_qcqp_controller, ControllerKind};
    use crate::discretization::euler_step;
    use crate::linalg::Matrix;
    use crate::system::make_benchmark;

    const S3: f64 = 1.732_050_807_568_877_2;

    fn design() -> ClfDesign {
        let k = Matrix::from_rows(&[&[0.5, S3 / 2.0]]).unwrap();
        design_output_clf(&make_benchmark(), &k, &Matrix::identity(2), 0.5).unwrap()
    }

    fn zero_controller(_: &NormalState) -> Result<ControlResult> {
        Ok(ControlResult::unconstrained(Vector::zeros(1)))
    }

    #[test]
    fn equilibrium_stays_put() {
        let sys = make_benchmark();
        let cfg = StepConfig::new(0.2).unwrap();
        let t = run_closed_loop(
            &sys,
            &design(),
            None,
            zero_controller,
            &sys.origin(),
            2.0,
            &cfg,
        )
        .unwrap();
        assert_eq!(t.states.len(), 11);
        assert!(t.states.iter().all(|s| s == &sys.origin()));
        assert_eq!(t.settled_time(0.25), Some(0.0));
    }

    #[test]
    fn benchmark_qcqp_run_shape() {
        let sys = make_benchmark();
        let d = design();
        let cfg = StepConfig::new(0.2).unwrap();
        let t = run_closed_loop(
            &sys,
            &d,
            None,
            |xi: &NormalState| clf_qcqp_controller(&d, &sys, xi, 0.2),
            &sys.state([1.0, 0.0, 1.0]),
            20.0,
            &cfg,
        )
        .unwrap();
        assert_eq!(t.states.len(), 101);
        assert_eq!(t.inputs.len(), 100);
        assert!(t.terminated_early.is_none());
        assert!(t
            .times
            .windows(2)
            .all(|w| (w[1] - w[0] - 0.2).abs() < 1e-12));
        // recorded states follow the exact map under the recorded input
        for k in [0, 17, 99] {
            let next = exact_step(&sys, &t.states[k], &t.inputs[k], &cfg).unwrap();
            assert_eq!(next, t.states[k + 1]);
        }
        // Euler-model decrease holds at every recorded step
        for k in 0..t.steps() {
            let xi = &t.states[k];
            let eu = euler_step(&sys, xi, &t.inputs[k], 0.2).unwrap();
            let eta_sq: f64 = xi.eta().iter().map(|x| x * x).sum();
            let lhs = d.v_eta(eu.eta()) - d.v_eta(xi.eta());
            assert!(
                lhs <= -0.2 * d.c * d.lambda_min_q * eta_sq + 1e-8,
                "step {k}"
            );
        }
    }

    #[test]
    fn blow_up_is_recorded_not_raised() {
        let sys = make_benchmark().with_domain_radius(5.0);
        let d = design();
        let cfg = StepConfig::new(0.2).unwrap();
        let push = |_: &NormalState| Ok(ControlResult::unconstrained(Vector::from([50.0])));
        let t = run_closed_loop(
            &sys,
            &d,
            None,
            push,
            &sys.state([1.0, 0.0, 1.0]),
            20.0,
            &cfg,
        )
        .unwrap();
        let term = t.terminated_early.as_ref().unwrap();
        assert!(term.reason.contains("admissible"));
        assert_eq!(t.states.len(), term.step + 1);
        assert_eq!(t.settled_time(0.25), None);
    }

    #[test]
    fn infeasible_controller_ends_run() {
        let sys = make_benchmark();
        let cfg = StepConfig::new(0.2).unwrap();
        let fail = |_: &NormalState| -> Result<ControlResult> { Err(Error::Infeasible) };
        let t = run_closed_loop(
            &sys,
            &design(),
            None,
            fail,
            &sys.state([1.0, 0.0, 1.0]),
            1.0,
            &cfg,
        )
        .unwrap();
        assert_eq!(t.states.len(), 1);
        assert_eq!(t.terminated_early.unwrap().step, 0);
    }

    #[test]
    fn bad_horizon_rejected() {
        let sys = make_benchmark();
        let cfg = StepConfig::new(0.2).unwrap();
        assert!(run_closed_loop(
            &sys,
            &design(),
            None,
            zero_controller,
            &sys.origin(),
            0.1,
            &cfg
        )
        .is_err());
    }

    #[test]
    fn singleton_sweep_matches_single_run() {
        let sys = make_benchmark();
        let d = design();
        let xi0 = sys.state([1.0, 0.0, 1.0]);
        let family = |h: f64, xi: &NormalState| ControllerKind::ClfQcqp.evaluate(&d, &sys, xi, h);
        let out = practical_stability_sweep(&sys, &d, None, family, &xi0, &[0.2], 20.0, 0.25, 64)
            .unwrap();
        assert_eq!(out.summary.records.len(), 1);
        let single = run_closed_loop(
            &sys,
            &d,
            None,
            |xi: &NormalState| family(0.2, xi),
            &xi0,
            20.0,
            &StepConfig::new(0.2).unwrap(),
        )
        .unwrap();
        assert_eq!(out.trajectories[0].states, single.states);
        assert_eq!(out.summary.records[0].terminal_norm, single.terminal_norm());
    }

    #[test]
    fn sweep_sorted_descending_and_validated() {
        let sys = make_benchmark();
        let d = design();
        let xi0 = sys.state([0.2, 0.0, 0.1]);
        let family = |h: f64, xi: &NormalState| ControllerKind::Fbl.evaluate(&d, &sys, xi, h);
        let out = practical_stability_sweep(
            &sys,
            &d,
            None,
            family,
            &xi0,
            &[0.05, 0.2, 0.1],
            4.0,
            0.25,
            16,
        )
        .unwrap();
        let hs: Vec<f64> = out.summary.records.iter().map(|r| r.h).collect();
        assert_eq!(hs, vec![0.2, 0.1, 0.05]);
        assert!(
            practical_stability_sweep(&sys, &d, None, family, &xi0, &[], 4.0, 0.25, 16).is_err()
        );
    }

    #[test]
    fn sweep_execution_modes_agree() {
        let sys = make_benchmark();
        let d = design();
        let xi0 = sys.state([1.0, 0.0, 1.0]);
        let family = |h: f64, xi: &NormalState| ControllerKind::ClfQcqp.evaluate(&d, &sys, xi, h);
        let hs = [0.2, 0.1, 0.05];
        let a = practical_stability_sweep_with(
            Execution::Sequential,
            &sys,
            &d,
            None,
            family,
            &xi0,
            &hs,
            5.0,
            0.25,
            16,
        )
        .unwrap();
        let b = practical_stability_sweep_with(
            Execution::Parallel,
            &sys,
            &d,
            None,
            family,
            &xi0,
            &hs,
            5.0,
            0.25,
            16,
        )
        .unwrap();
        assert_eq!(a.summary, b.summary);
    }

    #[test]
    fn csv_layout_and_round_trip() {
        let sys = make_benchmark();
        let d = design();
        let cfg = StepConfig::new(0.2).unwrap();
        let t = run_closed_loop(
            &sys,
            &d,
            None,
            |xi: &NormalState| clf_qcqp_controller(&d, &sys, xi, 0.2),
            &sys.state([1.0, 0.0, 1.0]),
            20.0,
            &cfg,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        export_trajectory(&t, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 102);
        assert_eq!(lines[0], "t,xi_1,xi_2,xi_3,u_1,V_eta,residual");
        let last: Vec<&str> = lines[101].split(',').collect();
        assert_eq!(last.len(), 7);
        assert_eq!(last[4], "");
        assert_eq!(last[6], "");

        let mut rdr = csv::Reader::from_path(&path).unwrap();
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec.unwrap();
            for i in 0..3 {
                let parsed: f64 = rec[1 + i].parse().unwrap();
                assert_eq!(parsed.to_bits(), t.states[k].xi()[i].to_bits());
            }
        }
    }

    #[test]
    fn csv_equilibrium_all_zero() {
        let sys = make_benchmark();
        let cfg = StepConfig::new(0.5).unwrap();
        let t = run_closed_loop(
            &sys,
            &design(),
            None,
            zero_controller,
            &sys.origin(),
            2.0,
            &cfg,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&t, &mut buf).unwrap();
        let mut rdr = csv::Reader::from_reader(buf.as_slice());
        for rec in rdr.records() {
            let rec = rec.unwrap();
            for i in 1..=3 {
                assert_eq!(rec[i].parse::<f64>().unwrap(), 0.0);
            }
        }
    }
}
