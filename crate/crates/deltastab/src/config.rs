//! Run configuration: one TOML file describing a complete synthesis
//! problem — plant, boxes, architectures, hyperparameters, and tool
//! settings — shared by every subcommand so artifacts stay consistent
//! across pipeline stages.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::domain::BoxDomain;
use crate::error::{Error, Result};
use crate::lipcert::weibull::SlopeSampling;
use crate::net::{Activation, SaturationBox};
use crate::plant::subprocess::SubprocessPlant;
use crate::plant::{JetEngine, OneLinkManipulator, Plant, RigidSpacecraft, ScalarNonAffine};
use crate::synth::certify::DEFAULT_MAX_TUPLES;
use crate::synth::hyper::HyperParams;

/// Complete run description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Output location.
    #[serde(default)]
    pub run: RunSection,
    /// Which dynamics to control.
    pub plant: PlantSection,
    /// State, external-input, and control boxes.
    pub domains: DomainsSection,
    /// Cover radii and budget.
    pub covers: CoversSection,
    /// Network architectures.
    pub networks: NetworksSection,
    /// Templates, loss weights, and optimizer settings.
    pub hyper: HyperParams,
    /// Scenario-specific constants.
    pub scenario: ScenarioSection,
    /// Known or estimated plant regularity constants.
    #[serde(default)]
    pub lipschitz: LipschitzSection,
    /// Slope-sampling sizes for the black-box estimator.
    #[serde(default)]
    pub weibull: WeibullSection,
    /// Closed-loop simulation settings.
    #[serde(default)]
    pub simulate: SimulateSection,
}

/// Output settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Directory all artifacts are written to.
    pub out_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Plant selector.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    /// Builtin name (`scalar-nonaffine`, `manipulator`, `jet-engine`,
    /// `spacecraft`) or `subprocess`.
    pub kind: String,
    /// Simulator invocation for `subprocess`: program followed by
    /// arguments.
    #[serde(default)]
    pub command: Vec<String>,
    /// State dimension, required for `subprocess`.
    #[serde(default)]
    pub dim_x: Option<usize>,
    /// Control dimension, required for `subprocess`.
    #[serde(default)]
    pub dim_u: Option<usize>,
}

impl PlantSection {
    /// Instantiates the plant this section names.
    pub fn build(&self) -> Result<Box<dyn Plant>> {
        match self.kind.as_str() {
            "scalar-nonaffine" => Ok(Box::new(ScalarNonAffine::default())),
            "manipulator" => Ok(Box::new(OneLinkManipulator::default())),
            "jet-engine" => Ok(Box::new(JetEngine)),
            "spacecraft" => Ok(Box::new(RigidSpacecraft::default())),
            "subprocess" => {
                let program = self.command.first().ok_or_else(|| Error::Config {
                    path: "plant.command".into(),
                    detail: "subprocess plants need a command".into(),
                })?;
                let (dim_x, dim_u) = match (self.dim_x, self.dim_u) {
                    (Some(x), Some(u)) => (x, u),
                    _ => {
                        return Err(Error::Config {
                            path: "plant".into(),
                            detail: "subprocess plants need dim_x and dim_u".into(),
                        })
                    }
                };
                Ok(Box::new(SubprocessPlant::spawn(
                    program,
                    &self.command[1..],
                    dim_x,
                    dim_u,
                )?))
            }
            other => Err(Error::Config {
                path: "plant.kind".into(),
                detail: format!(
                    "unknown plant `{other}` (expected scalar-nonaffine, manipulator, \
                     jet-engine, spacecraft, or subprocess)"
                ),
            }),
        }
    }
}

/// The three boxes of the problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainsSection {
    /// State box lower corner.
    pub x_lo: Vec<f64>,
    /// State box upper corner.
    pub x_hi: Vec<f64>,
    /// External-input box lower corner.
    pub w_lo: Vec<f64>,
    /// External-input box upper corner.
    pub w_hi: Vec<f64>,
    /// Control saturation lower corner.
    pub u_lo: Vec<f64>,
    /// Control saturation upper corner.
    pub u_hi: Vec<f64>,
}

impl DomainsSection {
    /// State box.
    pub fn state(&self) -> Result<BoxDomain> {
        BoxDomain::from_slices(&self.x_lo, &self.x_hi)
    }

    /// External-input box.
    pub fn external(&self) -> Result<BoxDomain> {
        BoxDomain::from_slices(&self.w_lo, &self.w_hi)
    }

    /// Control box, as the domain the estimator samples.
    pub fn control(&self) -> Result<BoxDomain> {
        BoxDomain::from_slices(&self.u_lo, &self.u_hi)
    }

    /// Control box, as the saturation applied to the controller.
    pub fn saturation(&self) -> Result<SaturationBox> {
        SaturationBox::new(
            DVector::from_column_slice(&self.u_lo),
            DVector::from_column_slice(&self.u_hi),
        )
    }
}

fn default_cover_budget() -> usize {
    10_000_000
}

/// Cover construction settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoversSection {
    /// State cover radius.
    pub epsilon_x: f64,
    /// External-input cover radius.
    pub epsilon_u: f64,
    /// Largest cover the tool will materialize.
    #[serde(default = "default_cover_budget")]
    pub budget: usize,
}

/// Network architectures.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworksSection {
    /// Certificate hidden widths.
    pub clf_hidden: Vec<usize>,
    /// Certificate activation.
    pub clf_activation: Activation,
    /// Controller hidden widths.
    pub controller_hidden: Vec<usize>,
    /// Controller activation.
    pub controller_activation: Activation,
}

fn default_max_tuples() -> u64 {
    DEFAULT_MAX_TUPLES
}

/// Scenario constants not already in [`HyperParams`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    /// Pair-separation threshold below which sandwich and decrease
    /// residuals are not imposed.
    pub d_min: f64,
    /// Tuple ceiling for exhaustive scans.
    #[serde(default = "default_max_tuples")]
    pub max_tuples: u64,
}

/// Plant regularity constants. Values given here take precedence over the
/// estimator artifact.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LipschitzSection {
    /// State Lipschitz constant of the dynamics.
    #[serde(default)]
    pub l_x: Option<f64>,
    /// Control Lipschitz constant of the dynamics.
    #[serde(default)]
    pub l_u: Option<f64>,
    /// Magnitude bound on the dynamics.
    #[serde(default)]
    pub m_f: Option<f64>,
}

fn default_batches() -> usize {
    SlopeSampling::default().batches
}

fn default_pairs_per_batch() -> usize {
    SlopeSampling::default().pairs_per_batch
}

/// Slope-sampling sizes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeibullSection {
    /// Independent batches (tail-fit sample size).
    #[serde(default = "default_batches")]
    pub batches: usize,
    /// Slope draws per batch.
    #[serde(default = "default_pairs_per_batch")]
    pub pairs_per_batch: usize,
}

impl Default for WeibullSection {
    fn default() -> Self {
        WeibullSection {
            batches: default_batches(),
            pairs_per_batch: default_pairs_per_batch(),
        }
    }
}

impl WeibullSection {
    /// The sampling plan this section describes.
    #[must_use]
    pub fn sampling(&self) -> SlopeSampling {
        SlopeSampling {
            batches: self.batches,
            pairs_per_batch: self.pairs_per_batch,
        }
    }
}

/// One simulated trajectory pair: two initial states driven by the same
/// constant external input.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimPair {
    /// First initial state.
    pub x0: Vec<f64>,
    /// Second initial state.
    pub x0_hat: Vec<f64>,
    /// Shared external input, held constant.
    pub w: Vec<f64>,
}

fn default_t_final() -> f64 {
    10.0
}

fn default_dt() -> f64 {
    0.01
}

/// Simulation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    /// Horizon in seconds.
    #[serde(default = "default_t_final")]
    pub t_final: f64,
    /// Fixed integrator step.
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Extra random pairs drawn uniformly from the boxes.
    #[serde(default)]
    pub random_pairs: usize,
    /// Explicit trajectory pairs.
    #[serde(default)]
    pub pairs: Vec<SimPair>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            t_final: default_t_final(),
            dt: default_dt(),
            random_pairs: 0,
            pairs: Vec::new(),
        }
    }
}

impl RunConfig {
    /// Reads and validates a configuration file.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: RunConfig = toml::from_str(&text).map_err(|e| Error::Config {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        config.validate().map_err(|e| match e {
            Error::Config { detail, .. } => Error::Config {
                path: path.display().to_string(),
                detail,
            },
            other => other,
        })?;
        Ok(config)
    }

    /// Checks every cross-field invariant that does not need the plant.
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        let x = self.domains.state()?;
        let w = self.domains.external()?;
        self.domains.control()?;
        self.domains.saturation()?;

        for (name, value) in [
            ("covers.epsilon_x", self.covers.epsilon_x),
            ("covers.epsilon_u", self.covers.epsilon_u),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::Config {
                    path: name.into(),
                    detail: format!("cover radius {value} must be finite and positive"),
                });
            }
        }
        if !(self.scenario.d_min >= 0.0 && self.scenario.d_min.is_finite()) {
            return Err(Error::Config {
                path: "scenario.d_min".into(),
                detail: format!("{} must be finite and nonnegative", self.scenario.d_min),
            });
        }
        if self.scenario.d_min >= 2.0 * x.half_diagonal() {
            return Err(Error::Config {
                path: "scenario.d_min".into(),
                detail: format!(
                    "{} separates no state pair in a box of diameter {}",
                    self.scenario.d_min,
                    2.0 * x.half_diagonal()
                ),
            });
        }
        for (name, radius, box_ref) in [
            ("covers.epsilon_x", self.covers.epsilon_x, &x),
            ("covers.epsilon_u", self.covers.epsilon_u, &w),
        ] {
            let _ = box_ref;
            if radius > self.hyper.epsilon {
                return Err(Error::Config {
                    path: name.into(),
                    detail: format!(
                        "cover radius {radius} exceeds the validity radius {} — the \
                         scenario argument needs every box covered at least that finely",
                        self.hyper.epsilon
                    ),
                });
            }
        }
        if self.networks.clf_hidden.is_empty() || self.networks.controller_hidden.is_empty() {
            return Err(Error::Config {
                path: "networks".into(),
                detail: "both networks need at least one hidden layer".into(),
            });
        }
        if matches!(
            self.networks.clf_activation,
            Activation::Relu | Activation::HardTanh
        ) {
            return Err(Error::Config {
                path: "networks.clf_activation".into(),
                detail: "the certificate network must use a smooth activation".into(),
            });
        }
        let dim_u = self.domains.u_lo.len();
        if self.plant.kind == "subprocess" {
            if self.plant.dim_x != Some(self.domains.x_lo.len())
                || self.plant.dim_u != Some(dim_u)
            {
                return Err(Error::Config {
                    path: "plant".into(),
                    detail: "subprocess dim_x/dim_u must match the domain boxes".into(),
                });
            }
        }
        if !(self.simulate.dt > 0.0 && self.simulate.dt.is_finite())
            || !(self.simulate.t_final > 0.0 && self.simulate.t_final.is_finite())
        {
            return Err(Error::Config {
                path: "simulate".into(),
                detail: "dt and t_final must be finite and positive".into(),
            });
        }
        for (i, pair) in self.simulate.pairs.iter().enumerate() {
            if pair.x0.len() != self.domains.x_lo.len()
                || pair.x0_hat.len() != self.domains.x_lo.len()
                || pair.w.len() != self.domains.w_lo.len()
            {
                return Err(Error::Config {
                    path: format!("simulate.pairs[{i}]"),
                    detail: "pair dimensions must match the domain boxes".into(),
                });
            }
        }
        Ok(())
    }
}
