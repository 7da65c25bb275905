use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use sdclf::prelude::*;
use sdclf::simulate::{write_atomic, SETTLE_FRACTION};

use crate::config::RunConfig;
use crate::Failure;

/// Sweep trend slack: each terminal norm may exceed the one at the next
/// larger sample period by this factor.
const TREND_SLACK: f64 = 1.5;
const LATTICE_POINTS: usize = 21;
const ORDER_RANGE: (f64, f64) = (1.9, 2.1);

struct Setup {
    sys: NormalFormSystem,
    design: ClfDesign,
    xi0: NormalState,
}

fn setup(cfg: &RunConfig) -> Result<Setup, Failure> {
    let sys = match cfg.system.as_str() {
        "benchmark" => make_benchmark(),
        other => return Err(Failure::config(format!("unknown system '{other}'"))),
    };
    if cfg.x0.len() != sys.n() {
        return Err(Failure::config(format!(
            "x0 has {} entries, system '{}' has {} states",
            cfg.x0.len(),
            cfg.system,
            sys.n()
        )));
    }
    let design = design_output_clf(&sys, &cfg.k, &cfg.q_eta, cfg.c)?;
    if cfg.h > design.h_star_eta {
        log::warn!(
            "h = {} exceeds the sample-period bound {:.6}",
            cfg.h,
            design.h_star_eta
        );
    }
    let xi0 = sys.state(cfg.x0.clone());
    Ok(Setup { sys, design, xi0 })
}

fn composite(cfg: &RunConfig, s: &Setup, h2_star: f64) -> Result<CompositeLyapunov, sdclf::Error> {
    let zero = design_zero_clf(&s.sys, &cfg.q_z, cfg.d)?;
    compose_lyapunov(&s.design, &zero, cfg.l_q, h2_star)
}

/// Composite certificate when requested; a failed certificate only drops the
/// composite diagnostics from simulation outputs.
fn optional_composite(cfg: &RunConfig, s: &Setup, h2_star: f64) -> Option<CompositeLyapunov> {
    if !cfg.composite {
        return None;
    }
    composite(cfg, s, h2_star)
        .map_err(|e| log::warn!("composite certificate unavailable: {e}"))
        .ok()
}

fn prepare_dir(cfg: &RunConfig) -> Result<&Path, Failure> {
    let dir = cfg.output_path.as_path();
    fs::create_dir_all(dir).map_err(|e| Failure::io(format!("creating {}: {e}", dir.display())))?;
    write_json(&dir.join("config.json"), cfg)?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    write_atomic(path, |f| {
        serde_json::to_writer_pretty(&mut *f, value).map_err(std::io::Error::from)?;
        f.write_all(b"\n")?;
        Ok(())
    })
    .map_err(|e| Failure::io(format!("writing {}: {e}", path.display())))
}

fn write_csv(path: &Path, traj: &Trajectory) -> Result<(), Failure> {
    export_trajectory(traj, path)
        .map_err(|e| Failure::io(format!("writing {}: {e}", path.display())))
}

pub fn design(cfg: &RunConfig) -> Result<(), Failure> {
    let s = setup(cfg)?;
    let comp = if cfg.composite {
        Some(
            composite(cfg, &s, cfg.h)
                .map_err(|e| Failure::check(format!("composite certificate: {e}")))?,
        )
    } else {
        None
    };
    let dir = prepare_dir(cfg)?;
    write_json(
        &dir.join("design.json"),
        &DesignSummary::new(&s.design, comp.as_ref()),
    )?;
    println!("h_star_eta = {:.6}", s.design.h_star_eta);
    if let Some(c) = &comp {
        println!(
            "sigma = {:.6} (lower bound {:.6})",
            c.sigma, c.sigma_lower_bound
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct SimulateSummary<'a> {
    controller: ControllerKind,
    h: f64,
    #[serde(rename = "T")]
    t_final: f64,
    #[serde(rename = "R_target")]
    r_target: f64,
    settled: bool,
    settled_time: Option<f64>,
    terminal_norm: f64,
    peak_norm: f64,
    h_star_eta: f64,
    steps: usize,
    terminated_early: Option<&'a sdclf::simulate::Termination>,
}

pub fn simulate(cfg: &RunConfig) -> Result<(), Failure> {
    let s = setup(cfg)?;
    let comp = optional_composite(cfg, &s, cfg.h);
    let step = StepConfig::with_substeps(cfg.h, cfg.substeps)?;
    let kind = cfg.controller;
    let traj = run_closed_loop(
        &s.sys,
        &s.design,
        comp.as_ref(),
        |xi: &NormalState| kind.evaluate(&s.design, &s.sys, xi, cfg.h),
        &s.xi0,
        cfg.t_final,
        &step,
    )?;
    let summary = SimulateSummary {
        controller: kind,
        h: cfg.h,
        t_final: cfg.t_final,
        r_target: cfg.r_target,
        settled: traj.settles_by(cfg.r_target, SETTLE_FRACTION * cfg.t_final),
        settled_time: traj.settled_time(cfg.r_target),
        terminal_norm: traj.terminal_norm(),
        peak_norm: traj.peak_norm(),
        h_star_eta: s.design.h_star_eta,
        steps: traj.steps(),
        terminated_early: traj.terminated_early.as_ref(),
    };
    let dir = prepare_dir(cfg)?;
    write_csv(&dir.join("trajectory.csv"), &traj)?;
    write_json(&dir.join("summary.json"), &summary)?;
    println!(
        "{}: settled = {}, terminal |xi| = {:.3e}, peak |xi| = {:.3}",
        kind.name(),
        summary.settled,
        summary.terminal_norm,
        summary.peak_norm
    );
    Ok(())
}

#[derive(Serialize)]
struct SweepReport<'a> {
    controller: ControllerKind,
    all_settled: bool,
    trend_holds: bool,
    #[serde(flatten)]
    summary: &'a SweepSummary,
}

/// File name for the trajectory at sample period `h`.
fn sweep_csv_name(h: f64) -> String {
    format!("trajectory_h{h}.csv")
}

pub fn sweep(cfg: &RunConfig) -> Result<(), Failure> {
    if cfg.hs.is_empty() {
        return Err(Failure::config(
            "sweep needs at least one sample period (--hs)",
        ));
    }
    let s = setup(cfg)?;
    let h_max = cfg.hs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let comp = optional_composite(cfg, &s, h_max);
    let kind = cfg.controller;
    let out = practical_stability_sweep(
        &s.sys,
        &s.design,
        comp.as_ref(),
        |h: f64, xi: &NormalState| kind.evaluate(&s.design, &s.sys, xi, h),
        &s.xi0,
        &cfg.hs,
        cfg.t_final,
        cfg.r_target,
        cfg.substeps,
    )?;
    let report = SweepReport {
        controller: kind,
        all_settled: out.summary.all_settled(),
        trend_holds: out.summary.trend_holds(TREND_SLACK),
        summary: &out.summary,
    };
    let dir = prepare_dir(cfg)?;
    for traj in &out.trajectories {
        write_csv(&dir.join(sweep_csv_name(traj.h)), traj)?;
    }
    write_json(&dir.join("sweep.json"), &report)?;
    for r in &out.summary.records {
        println!(
            "h = {:<8} settled = {:<5} terminal |xi| = {:.3e}",
            r.h, r.settled, r.terminal_norm
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct ConsistencyOutput<'a> {
    controller: ControllerKind,
    lattice_points: usize,
    passed: bool,
    #[serde(flatten)]
    report: &'a ConsistencyReport,
}

pub fn consistency(cfg: &RunConfig) -> Result<(), Failure> {
    if cfg.levels < 2 {
        return Err(Failure::config(format!(
            "consistency needs at least 2 levels, got {}",
            cfg.levels
        )));
    }
    let s = setup(cfg)?;
    let lattice = state_lattice(&s.sys, -1.0, 1.0, LATTICE_POINTS);
    let kind = cfg.controller;
    let h0 = cfg.h0;
    let report = estimate_consistency_order(
        &s.sys,
        |xi: &NormalState| Ok(kind.evaluate(&s.design, &s.sys, xi, h0)?.u),
        &lattice,
        h0,
        cfg.levels,
        cfg.substeps,
    )
    .map_err(|e| match e {
        sdclf::Error::DegenerateData(m) => Failure::check(m),
        other => other.into(),
    })?;
    let passed = (ORDER_RANGE.0..=ORDER_RANGE.1).contains(&report.slope);
    let dir = prepare_dir(cfg)?;
    write_json(
        &dir.join("consistency.json"),
        &ConsistencyOutput {
            controller: kind,
            lattice_points: lattice.len(),
            passed,
            report: &report,
        },
    )?;
    println!(
        "consistency slope = {:.4} over {} states",
        report.slope,
        lattice.len()
    );
    if passed {
        Ok(())
    } else {
        Err(Failure::check(format!(
            "slope {:.4} outside [{}, {}]",
            report.slope, ORDER_RANGE.0, ORDER_RANGE.1
        )))
    }
}
