use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::corrector::CorrectorConfig;
use crate::error::{Error, Result};
use crate::geometry::{LayerSpec, PointProcessParams, ProcessKind};
use crate::scattering::PlaneWave;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    C1Study,
    Sweep,
    Validate,
    CorrectorProfile,
    SampleOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryParams {
    pub h: f64,
    pub delta: f64,
    /// Normalized width of the corrector cell.
    pub width: f64,
    #[serde(default = "default_true")]
    pub periodic: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessParams {
    pub rho: f64,
    #[serde(default = "default_kind")]
    pub kind: ProcessKind,
}

fn default_kind() -> ProcessKind {
    ProcessKind::Matern2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveParams {
    pub k: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexParam {
    pub re: f64,
    pub im: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridParams {
    /// Normalized spacing; reference solves use `epsilon * target_dx`.
    pub target_dx: f64,
    pub dtn_eta: f64,
}

/// One JSON document describing a study. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub geometry: GeometryParams,
    pub process: ProcessParams,
    pub wave: WaveParams,
    pub gamma: ComplexParam,
    #[serde(default)]
    pub epsilon_list: Vec<f64>,
    pub n_samples: usize,
    pub master_seed: u64,
    pub grid: GridParams,
    pub output_dir: PathBuf,
    /// Lateral period `T` of the reference problem.
    #[serde(default = "default_period")]
    pub period: f64,
    /// Realizations behind the cached `c1`.
    #[serde(default = "default_c1_samples")]
    pub c1_samples: usize,
    /// Extra corrector widths for the width-convergence table.
    #[serde(default)]
    pub cell_widths: Vec<f64>,
    /// Normalized gap between the jump line and the reference closure line.
    #[serde(default = "default_top_margin")]
    pub top_margin: f64,
}

fn default_period() -> f64 {
    100.0
}

fn default_c1_samples() -> usize {
    100
}

fn default_top_margin() -> f64 {
    3.0
}

impl ExperimentConfig {
    /// Desk-scale study: `T = 100`, `rho = 0.4`, 10 samples,
    /// `k2 epsilon` in {0.2, 0.1, 0.05, 0.025} with `k2 = 0.1` at 45 degrees.
    pub fn desk_default(scenario: Scenario) -> Self {
        let layer = LayerSpec::default();
        let theta = std::f64::consts::FRAC_PI_4;
        Self {
            scenario,
            geometry: GeometryParams {
                h: layer.h,
                delta: layer.delta,
                width: layer.width,
                periodic: true,
            },
            process: ProcessParams {
                rho: 0.4,
                kind: ProcessKind::Matern2,
            },
            wave: WaveParams {
                k: 0.1 / theta.cos(),
                theta,
            },
            gamma: ComplexParam { re: 1.0, im: 1.0 },
            epsilon_list: vec![2.0, 1.0, 0.5, 0.25],
            n_samples: 10,
            master_seed: 20240601,
            grid: GridParams {
                target_dx: 0.2,
                dtn_eta: 1e-6,
            },
            output_dir: PathBuf::from("surfhom-out"),
            period: default_period(),
            c1_samples: default_c1_samples(),
            cell_widths: Vec::new(),
            top_margin: default_top_margin(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_samples < 1 {
            return bad("n_samples must be >= 1".into());
        }
        self.layer().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.process().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.wave().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.grid.target_dx > 0.0 && self.grid.dtn_eta > 0.0 && self.grid.dtn_eta <= 1.0) {
            return bad(format!("invalid grid parameters {:?}", self.grid));
        }
        if !(self.gamma.re > 0.0) {
            return bad(format!("Re gamma = {} must be positive", self.gamma.re));
        }
        if self.scenario == Scenario::Sweep {
            if self.epsilon_list.is_empty() {
                return bad("sweep needs a non-empty epsilon_list".into());
            }
            if self.epsilon_list.iter().any(|e| !(*e > 0.0)) || self.epsilon_list.windows(2).any(|w| w[1] >= w[0]) {
                return bad("epsilon_list must be positive and strictly decreasing".into());
            }
            if !(self.period > 0.0) {
                return bad(format!("period = {} must be positive", self.period));
            }
        }
        if self.c1_samples < 2 && matches!(self.scenario, Scenario::Sweep | Scenario::C1Study) {
            return bad("c1_samples must be >= 2".into());
        }
        if !(self.top_margin > 0.0) || self.cell_widths.iter().any(|w| !(*w > 0.0)) {
            return bad("top_margin and cell_widths must be positive".into());
        }
        Ok(())
    }

    pub fn layer(&self) -> LayerSpec {
        self.layer_with_width(self.geometry.width)
    }

    pub fn layer_with_width(&self, width: f64) -> LayerSpec {
        LayerSpec {
            h: self.geometry.h,
            delta: self.geometry.delta,
            width,
            periodic: self.geometry.periodic,
        }
    }

    pub fn process(&self) -> PointProcessParams {
        PointProcessParams {
            kind: self.process.kind,
            rho: self.process.rho,
        }
    }

    pub fn wave(&self) -> Result<PlaneWave> {
        PlaneWave::new(self.wave.k, self.wave.theta)
    }

    pub fn gamma(&self) -> Complex64 {
        Complex64::new(self.gamma.re, self.gamma.im)
    }

    /// Corrector cell for a given normalized width, on this config's grid.
    pub fn corrector(&self, width: f64) -> CorrectorConfig {
        let dx = self.grid.target_dx;
        let mut cfg = CorrectorConfig::new(self.layer_with_width(width), self.process());
        let snap = |v: f64| (v / dx).round() * dx;
        cfg.target_dx = dx;
        cfg.h_interface = snap(self.geometry.h + 2.0);
        cfg.l_cell = snap(cfg.h_interface + width / 4.0);
        cfg.dtn_eta = self.grid.dtn_eta;
        cfg.gamma = self.gamma();
        cfg.k = self.wave.k;
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = r#"{
        "scenario": "sweep",
        "geometry": {"h": 5.0, "delta": 0.05, "width": 50.0},
        "process": {"rho": 0.4},
        "wave": {"k": 0.1414213562373095, "theta": 0.7853981633974483},
        "gamma": {"re": 1.0, "im": 1.0},
        "epsilon_list": [2.0, 1.0, 0.5, 0.25],
        "n_samples": 10,
        "master_seed": 7,
        "grid": {"target_dx": 0.2, "dtn_eta": 1e-6},
        "output_dir": "out"
    }"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = ExperimentConfig::from_json(SAMPLE).unwrap();
        assert_eq!(cfg.scenario, Scenario::Sweep);
        assert_eq!(cfg.period, 100.0);
        assert_eq!(cfg.process.kind, ProcessKind::Matern2);
        assert!(cfg.geometry.periodic);
        let again = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn desk_default_is_valid() {
        for scenario in [Scenario::Sweep, Scenario::C1Study, Scenario::Validate] {
            let cfg = ExperimentConfig::desk_default(scenario);
            cfg.validate().unwrap();
            assert!((cfg.wave().unwrap().k2() - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = SAMPLE.replace("\"n_samples\"", "\"colour\": 1, \"n_samples\"");
        assert!(matches!(ExperimentConfig::from_json(&text), Err(Error::Config(_))));
        let nested = SAMPLE.replace("\"rho\": 0.4", "\"rho\": 0.4, \"sigma\": 2");
        assert!(matches!(ExperimentConfig::from_json(&nested), Err(Error::Config(_))));
    }

    #[test]
    fn sweep_needs_decreasing_epsilons() {
        let text = SAMPLE.replace("[2.0, 1.0, 0.5, 0.25]", "[1.0, 2.0]");
        assert!(matches!(ExperimentConfig::from_json(&text), Err(Error::Config(_))));
        let text = SAMPLE.replace("\"n_samples\": 10", "\"n_samples\": 0");
        assert!(matches!(ExperimentConfig::from_json(&text), Err(Error::Config(_))));
    }

    #[test]
    fn corrector_cell_lands_on_grid_lines() {
        let cfg = ExperimentConfig::from_json(SAMPLE).unwrap();
        let c = cfg.corrector(50.0);
        let (g, h) = c.grid().unwrap();
        assert!(g.line_of(h).is_some());
        assert!((c.l_cell - 19.4).abs() < 1e-9 || (c.l_cell - 19.6).abs() < 1e-9);
    }
}
