//! Run configuration: a flat JSON file overlaid by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sdclf::prelude::{ControllerKind, Matrix};

use crate::Failure;

/// Matrix given either as nested rows or in the `a,b;c,d` shorthand.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
    Text(String),
}

impl MatrixSpec {
    pub fn to_matrix(&self, field: &str) -> Result<Matrix, Failure> {
        let rows = match self {
            MatrixSpec::Scalar(x) => vec![vec![*x]],
            MatrixSpec::Rows(r) => r.clone(),
            MatrixSpec::Text(s) => {
                parse_matrix(s).map_err(|e| Failure::config(format!("{field}: {e}")))?
            }
        };
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        Matrix::from_rows(&refs).map_err(|e| Failure::config(format!("{field}: {e}")))
    }
}

/// Parses `1,2;3,4` into rows.
pub fn parse_matrix(s: &str) -> Result<Vec<Vec<f64>>, String> {
    let rows = s
        .split(';')
        .map(parse_list)
        .collect::<Result<Vec<_>, _>>()?;
    if rows.iter().any(Vec::is_empty) {
        return Err(format!("empty row in matrix '{s}'"));
    }
    Ok(rows)
}

/// Parses a comma-separated list of reals; the empty string is the empty list.
pub fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| format!("not a number: '{}'", t.trim()))
        })
        .collect()
}

/// Every field optional; used for both the config file and the flag layer.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    pub system: Option<String>,
    pub controller: Option<ControllerKind>,
    pub h: Option<f64>,
    #[serde(rename = "T")]
    pub t_final: Option<f64>,
    pub x0: Option<Vec<f64>>,
    #[serde(rename = "K")]
    pub k: Option<MatrixSpec>,
    #[serde(rename = "Q_eta")]
    pub q_eta: Option<MatrixSpec>,
    pub c: Option<f64>,
    pub d: Option<f64>,
    #[serde(rename = "Q_z")]
    pub q_z: Option<MatrixSpec>,
    #[serde(rename = "L_q")]
    pub l_q: Option<f64>,
    pub substeps: Option<usize>,
    #[serde(rename = "R_target")]
    pub r_target: Option<f64>,
    pub output_path: Option<PathBuf>,
    pub hs: Option<Vec<f64>>,
    pub h0: Option<f64>,
    pub levels: Option<usize>,
    pub composite: Option<bool>,
}

impl PartialConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::io(format!("reading {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
    }

    /// Field-wise overlay: values present in `top` win.
    pub fn overlay(self, top: PartialConfig) -> PartialConfig {
        PartialConfig {
            system: top.system.or(self.system),
            controller: top.controller.or(self.controller),
            h: top.h.or(self.h),
            t_final: top.t_final.or(self.t_final),
            x0: top.x0.or(self.x0),
            k: top.k.or(self.k),
            q_eta: top.q_eta.or(self.q_eta),
            c: top.c.or(self.c),
            d: top.d.or(self.d),
            q_z: top.q_z.or(self.q_z),
            l_q: top.l_q.or(self.l_q),
            substeps: top.substeps.or(self.substeps),
            r_target: top.r_target.or(self.r_target),
            output_path: top.output_path.or(self.output_path),
            hs: top.hs.or(self.hs),
            h0: top.h0.or(self.h0),
            levels: top.levels.or(self.levels),
            composite: top.composite.or(self.composite),
        }
    }

    pub fn resolve(self) -> Result<RunConfig, Failure> {
        let s3 = 3f64.sqrt();
        let cfg = RunConfig {
            system: self.system.unwrap_or_else(|| "benchmark".into()),
            controller: self.controller.unwrap_or(ControllerKind::ClfQcqp),
            h: self.h.unwrap_or(0.2),
            t_final: self.t_final.unwrap_or(20.0),
            x0: self.x0.unwrap_or_else(|| vec![1.0, 0.0, 1.0]),
            k: match self.k {
                Some(k) => k.to_matrix("K")?,
                None => Matrix::from_rows(&[&[0.5, s3 / 2.0]]).expect("finite"),
            },
            q_eta: match self.q_eta {
                Some(q) => q.to_matrix("Q_eta")?,
                None => Matrix::identity(2),
            },
            c: self.c.unwrap_or(0.5),
            d: self.d.unwrap_or(0.5),
            q_z: match self.q_z {
                Some(q) => q.to_matrix("Q_z")?,
                None => Matrix::identity(1),
            },
            l_q: self.l_q.unwrap_or(4.0),
            substeps: self
                .substeps
                .unwrap_or(sdclf::discretization::DEFAULT_SUBSTEPS),
            r_target: self.r_target.unwrap_or(0.25),
            output_path: self
                .output_path
                .unwrap_or_else(|| PathBuf::from("sdclf-out")),
            hs: self.hs.unwrap_or_else(|| vec![0.2, 0.1, 0.05, 0.025]),
            h0: self.h0.unwrap_or(0.2),
            levels: self.levels.unwrap_or(4),
            composite: self.composite.unwrap_or(true),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Fully resolved configuration, echoed to `config.json` in every run.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub system: String,
    pub controller: ControllerKind,
    pub h: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub x0: Vec<f64>,
    #[serde(rename = "K")]
    pub k: Matrix,
    #[serde(rename = "Q_eta")]
    pub q_eta: Matrix,
    pub c: f64,
    pub d: f64,
    #[serde(rename = "Q_z")]
    pub q_z: Matrix,
    #[serde(rename = "L_q")]
    pub l_q: f64,
    pub substeps: usize,
    #[serde(rename = "R_target")]
    pub r_target: f64,
    pub output_path: PathBuf,
    pub hs: Vec<f64>,
    pub h0: f64,
    pub levels: usize,
    pub composite: bool,
}

impl RunConfig {
    fn validate(&self) -> Result<(), Failure> {
        let finite = [
            ("h", self.h),
            ("T", self.t_final),
            ("c", self.c),
            ("d", self.d),
            ("L_q", self.l_q),
            ("R_target", self.r_target),
            ("h0", self.h0),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Failure::config(format!("{name} must be finite, got {v}")));
            }
        }
        let positive = [
            ("h", self.h),
            ("T", self.t_final),
            ("R_target", self.r_target),
            ("h0", self.h0),
        ];
        for (name, v) in positive {
            if v <= 0.0 {
                return Err(Failure::config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.t_final < self.h {
            return Err(Failure::config(format!(
                "T = {} is shorter than h = {}",
                self.t_final, self.h
            )));
        }
        for (name, v) in [("c", self.c), ("d", self.d)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Failure::config(format!(
                    "{name} must lie in (0, 1), got {v}"
                )));
            }
        }
        if self.l_q <= 0.0 {
            return Err(Failure::config(format!(
                "L_q must be positive, got {}",
                self.l_q
            )));
        }
        if self.substeps == 0 {
            return Err(Failure::config("substeps must be at least 1"));
        }
        if self.x0.iter().any(|x| !x.is_finite()) {
            return Err(Failure::config("x0 entries must be finite"));
        }
        if let Some(bad) = self.hs.iter().find(|h| !(h.is_finite() && **h > 0.0)) {
            return Err(Failure::config(format!(
                "sample periods must be positive, got {bad}"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_matrix_shorthand() {
        assert_eq!(
            parse_matrix("1,2;3,4").unwrap(),
            vec![vec![1.0, 2.0], vec![3.0, 4.0]]
        );
        assert_eq!(parse_matrix("0.5").unwrap(), vec![vec![0.5]]);
        assert!(parse_matrix("1,;2").is_err());
        assert!(parse_matrix("1;").is_err());
    }

    #[test]
    fn empty_list_is_empty() {
        assert!(parse_list("").unwrap().is_empty());
        assert!(parse_list("  ").unwrap().is_empty());
        assert_eq!(parse_list("0.2, 0.1").unwrap(), vec![0.2, 0.1]);
    }

    #[test]
    fn overlay_prefers_top() {
        let file = PartialConfig {
            h: Some(0.1),
            c: Some(0.3),
            ..Default::default()
        };
        let flags = PartialConfig {
            h: Some(0.05),
            ..Default::default()
        };
        let cfg = file.overlay(flags).resolve().unwrap();
        assert_eq!(cfg.h, 0.05);
        assert_eq!(cfg.c, 0.3);
        assert_eq!(cfg.t_final, 20.0);
    }

    #[test]
    fn matrix_forms_agree() {
        let json = r#"{"K": [[0.5, 0.8]], "Q_eta": "1,0;0,2", "Q_z": 3}"#;
        let cfg: PartialConfig = serde_json::from_str(json).unwrap();
        let cfg = cfg.resolve().unwrap();
        assert_eq!(cfg.k.to_rows(), vec![vec![0.5, 0.8]]);
        assert_eq!(cfg.q_eta.to_rows(), vec![vec![1.0, 0.0], vec![0.0, 2.0]]);
        assert_eq!(cfg.q_z.to_rows(), vec![vec![3.0]]);
    }

    #[test]
    fn rejects_bad_values() {
        for bad in [
            PartialConfig {
                h: Some(-1.0),
                ..Default::default()
            },
            PartialConfig {
                c: Some(1.0),
                ..Default::default()
            },
            PartialConfig {
                d: Some(0.0),
                ..Default::default()
            },
            PartialConfig {
                t_final: Some(0.1),
                ..Default::default()
            },
            PartialConfig {
                substeps: Some(0),
                ..Default::default()
            },
            PartialConfig {
                hs: Some(vec![0.1, -0.2]),
                ..Default::default()
            },
        ] {
            assert!(matches!(bad.resolve(), Err(Failure::Config(_))));
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<PartialConfig>(r#"{"hh": 0.1}"#).is_err());
    }
}
