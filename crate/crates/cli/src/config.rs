//! Experiment configuration files.
//!
//! A file is a partial JSON object laid over the defaults for its
//! experiment. Keys absent from the defaults are rejected with their path.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use oplas_core::mixing::{
    ClassSpec, DotsConfig, Leveling, MixingConfig, MixingWeights, ToyEncoder,
};
use oplas_core::stargate::{
    FifthsConfig, RelabelConfig, RingLayout, StargateConfig, SuccessorKind, TransformKind,
};

use crate::error::{CliError, CliResult};

pub const MAX_STEPS: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Mixing,
    Stargate,
    Co5,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Mixing => "mixing",
            Experiment::Stargate => "stargate",
            Experiment::Co5 => "co5",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSection {
    pub name: String,
    pub center: [f64; 2],
    pub spread: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSection {
    pub mix_consistency: f64,
    pub reconstruction: f64,
    pub variance: f64,
    pub covariance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelingName {
    Tanh,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixingSection {
    pub classes: Vec<ClassSection>,
    pub points_per_class: usize,
    pub bound: f64,
    pub twist: f64,
    pub leveling: LevelingName,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub weights: WeightsSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutName {
    HorizontalLine,
    DiagonalOnes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuccessorName {
    Next,
    Fifths,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformName {
    Filmr,
    FreeMatrix,
    OrthogonalizedMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StargateSection {
    pub n_points: usize,
    pub input_dim: usize,
    pub layout: LayoutName,
    pub successor: SuccessorName,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub transform: TransformName,
    pub scalar_affine: bool,
    pub plane_spread: Option<f64>,
    pub var_weight: f64,
    pub frame_interval: u64,
}

/// Second stage of the circle-of-fifths run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelabelSection {
    pub steps: u64,
    pub lr: f64,
    pub scalar_affine: bool,
    pub plane_spread: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub steps: u64,
    pub lr: f64,
    pub output_dir: Option<String>,
    pub mixing: Option<MixingSection>,
    pub stargate: Option<StargateSection>,
    pub relabel: Option<RelabelSection>,
}

fn mixing_section(c: &MixingConfig) -> MixingSection {
    MixingSection {
        classes: c
            .dots
            .classes
            .iter()
            .map(|k| ClassSection {
                name: k.name.clone(),
                center: k.center,
                spread: k.spread,
                weight: k.weight,
            })
            .collect(),
        points_per_class: c.dots.points_per_class,
        bound: c.dots.bound,
        twist: c.encoder.twist,
        leveling: match c.encoder.leveling {
            Leveling::Tanh => LevelingName::Tanh,
            Leveling::Identity => LevelingName::Identity,
        },
        hidden: c.hidden.clone(),
        latent_dim: c.latent_dim,
        weights: WeightsSection {
            mix_consistency: c.weights.mix_consistency,
            reconstruction: c.weights.reconstruction,
            variance: c.weights.variance,
            covariance: c.weights.covariance,
        },
    }
}

fn stargate_section(c: &StargateConfig) -> StargateSection {
    StargateSection {
        n_points: c.n_points,
        input_dim: c.input_dim,
        layout: match c.layout {
            RingLayout::HorizontalLine => LayoutName::HorizontalLine,
            RingLayout::DiagonalOnes => LayoutName::DiagonalOnes,
        },
        successor: match c.successor {
            SuccessorKind::Next => SuccessorName::Next,
            SuccessorKind::Fifths => SuccessorName::Fifths,
        },
        hidden: c.hidden.clone(),
        latent_dim: c.latent_dim,
        transform: match c.transform {
            TransformKind::Filmr => TransformName::Filmr,
            TransformKind::FreeMatrix => TransformName::FreeMatrix,
            TransformKind::OrthogonalizedMatrix => TransformName::OrthogonalizedMatrix,
        },
        scalar_affine: c.scalar_affine,
        plane_spread: c.plane_spread,
        var_weight: c.var_weight,
        frame_interval: c.frame_interval,
    }
}

impl ExperimentConfig {
    pub fn defaults(experiment: Experiment) -> Self {
        match experiment {
            Experiment::Mixing => {
                let c = MixingConfig::default();
                Self {
                    experiment,
                    seed: c.seed,
                    steps: c.steps,
                    lr: c.lr,
                    output_dir: None,
                    mixing: Some(mixing_section(&c)),
                    stargate: None,
                    relabel: None,
                }
            }
            Experiment::Stargate => {
                let c = StargateConfig::default();
                Self {
                    experiment,
                    seed: c.seed,
                    steps: c.steps,
                    lr: c.lr,
                    output_dir: None,
                    mixing: None,
                    stargate: Some(stargate_section(&c)),
                    relabel: None,
                }
            }
            Experiment::Co5 => {
                let c = FifthsConfig::default();
                Self {
                    experiment,
                    seed: c.ring.seed,
                    steps: c.ring.steps,
                    lr: c.ring.lr,
                    output_dir: None,
                    mixing: None,
                    stargate: Some(stargate_section(&c.ring)),
                    relabel: Some(RelabelSection {
                        steps: c.relabel.steps,
                        lr: c.relabel.lr,
                        scalar_affine: c.relabel.scalar_affine,
                        plane_spread: c.relabel.plane_spread,
                    }),
                }
            }
        }
    }

    /// Parses `text` as overrides on the defaults for `experiment`.
    pub fn from_json(text: &str, experiment: Experiment) -> CliResult<Self> {
        let overrides: Value = serde_json::from_str(text)
            .map_err(|e| CliError::Config(format!("invalid JSON: {e}")))?;
        let Value::Object(ref map) = overrides else {
            return Err(CliError::Config("config must be a JSON object".into()));
        };
        if let Some(named) = map.get("experiment") {
            if named.as_str() != Some(experiment.name()) {
                return Err(CliError::Config(format!(
                    "experiment: file is for {named}, subcommand is {experiment}"
                )));
            }
        }
        let mut merged =
            serde_json::to_value(Self::defaults(experiment)).expect("defaults serialize");
        merge(&mut merged, &overrides, "")?;
        let config: Self = serde_path_to_error::deserialize(merged)
            .map_err(|e| CliError::Config(format!("{}: {}", e.path(), e.inner())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, experiment: Experiment) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text, experiment)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |field: &str, why: &str| Err(CliError::Config(format!("{field}: {why}")));
        if self.steps > MAX_STEPS {
            return bad("steps", &format!("must be between 0 and {MAX_STEPS}"));
        }
        if !(self.lr > 0.0 && self.lr <= 10.0) {
            return bad("lr", "must be in (0, 10]");
        }
        let want = match self.experiment {
            Experiment::Mixing => (true, false, false),
            Experiment::Stargate => (false, true, false),
            Experiment::Co5 => (false, true, true),
        };
        let have = (
            self.mixing.is_some(),
            self.stargate.is_some(),
            self.relabel.is_some(),
        );
        if want != have {
            return bad("experiment", "sections do not match the experiment");
        }
        if let Some(m) = &self.mixing {
            if m.classes.is_empty() {
                return bad("mixing.classes", "at least one class is required");
            }
            for (i, c) in m.classes.iter().enumerate() {
                if !(c.spread >= 0.0) || !c.spread.is_finite() {
                    return bad(
                        &format!("mixing.classes[{i}].spread"),
                        "must be finite and >= 0",
                    );
                }
                if !(c.weight >= 0.0) || !c.weight.is_finite() {
                    return bad(
                        &format!("mixing.classes[{i}].weight"),
                        "must be finite and >= 0",
                    );
                }
            }
            if m.points_per_class == 0 {
                return bad("mixing.points_per_class", "must be >= 1");
            }
            if !(m.bound > 0.0) || !m.bound.is_finite() {
                return bad("mixing.bound", "must be finite and > 0");
            }
            if m.latent_dim == 0 || m.hidden.contains(&0) {
                return bad("mixing.hidden", "layer sizes must be >= 1");
            }
            let w = m.weights;
            for (name, v) in [
                ("mix_consistency", w.mix_consistency),
                ("reconstruction", w.reconstruction),
                ("variance", w.variance),
                ("covariance", w.covariance),
            ] {
                if !(v >= 0.0) || !v.is_finite() {
                    return bad(&format!("mixing.weights.{name}"), "must be finite and >= 0");
                }
            }
        }
        if let Some(s) = &self.stargate {
            if s.n_points == 0 {
                return bad("stargate.n_points", "must be >= 1");
            }
            if s.input_dim < 2 {
                return bad("stargate.input_dim", "must be >= 2");
            }
            if s.latent_dim < 2 || s.hidden.contains(&0) {
                return bad("stargate.latent_dim", "must be >= 2 with hidden sizes >= 1");
            }
            if s.successor == SuccessorName::Fifths && s.n_points != 12 {
                return bad("stargate.successor", "fifths needs n_points = 12");
            }
            if s.frame_interval == 0 {
                return bad("stargate.frame_interval", "must be >= 1");
            }
            if !(s.var_weight >= 0.0) || !s.var_weight.is_finite() {
                return bad("stargate.var_weight", "must be finite and >= 0");
            }
            if s.plane_spread.is_some_and(|p| !(p > 0.0) || !p.is_finite()) {
                return bad("stargate.plane_spread", "must be finite and > 0");
            }
        }
        if self.experiment == Experiment::Co5
            && self.stargate.as_ref().is_some_and(|s| s.n_points != 12)
        {
            return bad("stargate.n_points", "the circle of fifths uses 12 points");
        }
        if let Some(r) = &self.relabel {
            if r.steps > MAX_STEPS {
                return bad(
                    "relabel.steps",
                    &format!("must be between 0 and {MAX_STEPS}"),
                );
            }
            if !(r.lr > 0.0 && r.lr <= 10.0) {
                return bad("relabel.lr", "must be in (0, 10]");
            }
            if r.plane_spread.is_some_and(|p| !(p > 0.0) || !p.is_finite()) {
                return bad("relabel.plane_spread", "must be finite and > 0");
            }
        }
        Ok(())
    }

    pub fn mixing_config(&self) -> MixingConfig {
        let m = self.mixing.as_ref().expect("mixing section");
        MixingConfig {
            dots: DotsConfig {
                classes: m
                    .classes
                    .iter()
                    .map(|c| ClassSpec {
                        name: c.name.clone(),
                        center: c.center,
                        spread: c.spread,
                        weight: c.weight,
                    })
                    .collect(),
                points_per_class: m.points_per_class,
                bound: m.bound,
            },
            encoder: ToyEncoder {
                twist: m.twist,
                leveling: match m.leveling {
                    LevelingName::Tanh => Leveling::Tanh,
                    LevelingName::Identity => Leveling::Identity,
                },
            },
            hidden: m.hidden.clone(),
            latent_dim: m.latent_dim,
            weights: MixingWeights {
                mix_consistency: m.weights.mix_consistency,
                reconstruction: m.weights.reconstruction,
                variance: m.weights.variance,
                covariance: m.weights.covariance,
            },
            steps: self.steps,
            lr: self.lr,
            seed: self.seed,
        }
    }

    pub fn stargate_config(&self) -> StargateConfig {
        let s = self.stargate.as_ref().expect("stargate section");
        StargateConfig {
            n_points: s.n_points,
            input_dim: s.input_dim,
            layout: match s.layout {
                LayoutName::HorizontalLine => RingLayout::HorizontalLine,
                LayoutName::DiagonalOnes => RingLayout::DiagonalOnes,
            },
            successor: match s.successor {
                SuccessorName::Next => SuccessorKind::Next,
                SuccessorName::Fifths => SuccessorKind::Fifths,
            },
            hidden: s.hidden.clone(),
            latent_dim: s.latent_dim,
            transform: match s.transform {
                TransformName::Filmr => TransformKind::Filmr,
                TransformName::FreeMatrix => TransformKind::FreeMatrix,
                TransformName::OrthogonalizedMatrix => TransformKind::OrthogonalizedMatrix,
            },
            scalar_affine: s.scalar_affine,
            plane_spread: s.plane_spread,
            steps: self.steps,
            frame_interval: s.frame_interval,
            lr: self.lr,
            var_weight: s.var_weight,
            seed: self.seed,
        }
    }

    pub fn fifths_config(&self) -> FifthsConfig {
        let r = self.relabel.as_ref().expect("relabel section");
        FifthsConfig {
            ring: self.stargate_config(),
            relabel: RelabelConfig {
                successor: SuccessorKind::Fifths,
                scalar_affine: r.scalar_affine,
                plane_spread: r.plane_spread,
                steps: r.steps,
                lr: r.lr,
                seed: self.seed,
            },
        }
    }
}

/// Lays `patch` over `base`. Objects merge key by key; anything else replaces.
fn merge(base: &mut Value, patch: &Value, path: &str) -> CliResult<()> {
    let Value::Object(patch_map) = patch else {
        *base = patch.clone();
        return Ok(());
    };
    let Value::Object(base_map) = base else {
        let what = if base.is_null() {
            "does not apply to this experiment"
        } else {
            "is not an object"
        };
        return Err(CliError::Config(format!("{}: {what}", display_path(path))));
    };
    for (key, value) in patch_map {
        let child = if path.is_empty() {
            key.clone()
        } else {
            format!("{path}.{key}")
        };
        match base_map.get_mut(key) {
            Some(slot) => merge(slot, value, &child)?,
            None => return Err(CliError::Config(format!("{child}: unknown key"))),
        }
    }
    Ok(())
}

fn display_path(path: &str) -> &str {
    if path.is_empty() {
        "config"
    } else {
        path
    }
}
