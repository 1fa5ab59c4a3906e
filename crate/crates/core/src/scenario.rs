//! Scenario files: a TOML description of orbit, bodies, initial state,
//! bounds, weights and discretization, with units spelled out in the keys.

use std::hash::{Hash, Hasher};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::constraints_cost::{ControlBounds, CostWeights, DockingGeometry, ThrustBoundMode};
use crate::dynamics::{
    mean_motion, AngularVelocity, BodyParams, InertiaTensor, Quaternion, StateVector20,
    TranslationalState, DEG_TO_RAD,
};
use crate::error::{config, DockingError, Result};

pub const DEFAULT_TF_MIN: f64 = 10.0;
pub const DEFAULT_TF_MAX: f64 = 2000.0;
pub const DEFAULT_TF_GUESS: f64 = 400.0;

/// On-disk layout of a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub orbit: OrbitSection,
    pub servicer: BodySection,
    pub target: BodySection,
    pub relative: RelativeSection,
    pub bounds: BoundsSection,
    pub weights: CostWeights,
    pub discretization: DiscretizationSection,
    #[serde(default)]
    pub options: OptionsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitSection {
    pub gm_m3_per_s2: f64,
    pub radius_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodySection {
    /// Required for the servicer, ignored for the target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass_kg: Option<f64>,
    pub inertia_kg_m2: [f64; 3],
    pub docking_point_m: [f64; 3],
    pub safety_radius_m: f64,
    /// Scalar-last `(q1, q2, q3, q4)`; normalized on load.
    pub quaternion: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_deg_per_s: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_rad_per_s: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelativeSection {
    pub position_m: [f64; 3],
    pub velocity_m_per_s: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    /// Right-hand side parameter of the thrust bound (see `thrust_bound_mode`).
    pub thrust_max: f64,
    pub torque_max_n_m: f64,
    #[serde(default = "default_tf_min")]
    pub tf_min_s: f64,
    #[serde(default = "default_tf_max")]
    pub tf_max_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationSection {
    pub steps: usize,
    #[serde(default = "default_tf_guess")]
    pub tf_guess_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionsSection {
    #[serde(default = "yes")]
    pub collision_constraint: bool,
    #[serde(default)]
    pub thrust_bound_mode: ThrustBoundMode,
    #[serde(default)]
    pub safety_margin_m: f64,
}

impl Default for OptionsSection {
    fn default() -> Self {
        Self {
            collision_constraint: true,
            thrust_bound_mode: ThrustBoundMode::Literal,
            safety_margin_m: 0.0,
        }
    }
}

impl ScenarioFile {
    /// Parses scenario text without validating it; `origin` names the source
    /// in errors.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| DockingError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }
}

fn default_tf_min() -> f64 {
    DEFAULT_TF_MIN
}
fn default_tf_max() -> f64 {
    DEFAULT_TF_MAX
}
fn default_tf_guess() -> f64 {
    DEFAULT_TF_GUESS
}
fn yes() -> bool {
    true
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub gm: f64,
    pub orbit_radius: f64,
    pub params: BodyParams,
    pub geometry: DockingGeometry,
    pub bounds: ControlBounds,
    pub weights: CostWeights,
    pub initial: StateVector20,
    pub tf_min: f64,
    pub tf_max: f64,
    pub steps: usize,
    pub tf_guess: f64,
    pub collision_constraint: bool,
    /// Added to `rS + rT` at every node except the docking node.
    pub safety_margin: f64,
    /// Fingerprint of the validated contents.
    pub hash: u64,
}

impl ScenarioConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text, &path.display().to_string())
    }

    /// Parses and validates scenario text; `origin` names the source in errors.
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        Self::from_file(&ScenarioFile::parse(text, origin)?)
    }

    pub fn from_file(f: &ScenarioFile) -> Result<Self> {
        let n = mean_motion(f.orbit.gm_m3_per_s2, f.orbit.radius_m).map_err(as_config)?;
        let mass = f
            .servicer
            .mass_kg
            .ok_or_else(|| DockingError::Config("servicer.mass_kg is required".into()))?;
        let inertia = |b: &BodySection, who: &str| {
            let [a, b, c] = b.inertia_kg_m2;
            InertiaTensor::new(a, b, c)
                .map_err(|e| DockingError::Config(format!("{who}.inertia_kg_m2: {}", inner(e))))
        };
        let params = BodyParams::new(
            mass,
            inertia(&f.servicer, "servicer")?,
            inertia(&f.target, "target")?,
            n,
        )
        .map_err(as_config)?;
        let geometry = DockingGeometry::new(
            Vector3::from(f.servicer.docking_point_m),
            Vector3::from(f.target.docking_point_m),
            f.servicer.safety_radius_m,
            f.target.safety_radius_m,
        )?;
        let bounds = ControlBounds::new(
            f.bounds.thrust_max,
            f.bounds.torque_max_n_m,
            f.options.thrust_bound_mode,
        )?;
        let weights = CostWeights::new(f.weights.l_tf, f.weights.l_u, f.weights.l_m)?;

        let (tf_min, tf_max) = (f.bounds.tf_min_s, f.bounds.tf_max_s);
        if !(tf_min > 0.0 && tf_min < tf_max && tf_max.is_finite()) {
            return config(format!(
                "need 0 < tf_min_s < tf_max_s < inf, got [{tf_min}, {tf_max}]"
            ));
        }
        let steps = f.discretization.steps;
        if steps < 2 {
            return config(format!(
                "discretization.steps must be at least 2, got {steps}"
            ));
        }
        let tf_guess = f.discretization.tf_guess_s;
        if !(tf_guess >= tf_min && tf_guess <= tf_max) {
            return config(format!(
                "tf_guess_s = {tf_guess} lies outside [{tf_min}, {tf_max}]"
            ));
        }
        let margin = f.options.safety_margin_m;
        if !(margin >= 0.0 && margin.is_finite()) {
            return config(format!("safety_margin_m must be nonnegative, got {margin}"));
        }

        let p = f.relative.position_m;
        let v = f.relative.velocity_m_per_s;
        let initial = StateVector20 {
            trans: TranslationalState::new(p[0], p[1], p[2], v[0], v[1], v[2]),
            w_s: omega(&f.servicer, "servicer")?,
            w_t: omega(&f.target, "target")?,
            q_s: quaternion(&f.servicer, "servicer")?,
            q_t: quaternion(&f.target, "target")?,
        };
        if initial.to_array().iter().any(|x| !x.is_finite()) {
            return config("initial state must be finite");
        }

        let mut hasher = std::collections::hash_map::DefaultHasher::new();
        toml::to_string(f).unwrap_or_default().hash(&mut hasher);

        Ok(Self {
            gm: f.orbit.gm_m3_per_s2,
            orbit_radius: f.orbit.radius_m,
            params,
            geometry,
            bounds,
            weights,
            initial,
            tf_min,
            tf_max,
            steps,
            tf_guess,
            collision_constraint: f.options.collision_constraint,
            safety_margin: margin,
            hash: hasher.finish(),
        })
    }

    pub fn mean_motion(&self) -> f64 {
        self.params.mean_motion
    }
}

fn inner(e: DockingError) -> String {
    match e {
        DockingError::Domain(m) | DockingError::Config(m) => m,
        other => other.to_string(),
    }
}

fn as_config(e: DockingError) -> DockingError {
    DockingError::Config(inner(e))
}

fn quaternion(b: &BodySection, who: &str) -> Result<Quaternion> {
    let [a, c, d, e] = b.quaternion;
    Quaternion::new(a, c, d, e)
        .normalized()
        .map_err(|err| DockingError::Config(format!("{who}.quaternion: {}", inner(err))))
}

fn omega(b: &BodySection, who: &str) -> Result<AngularVelocity> {
    match (b.omega_deg_per_s, b.omega_rad_per_s) {
        (Some(_), Some(_)) => config(format!(
            "{who}: give either omega_deg_per_s or omega_rad_per_s, not both"
        )),
        (Some(w), None) => Ok(AngularVelocity::new(
            w[0] * DEG_TO_RAD,
            w[1] * DEG_TO_RAD,
            w[2] * DEG_TO_RAD,
        )),
        (None, Some(w)) => Ok(AngularVelocity::new(w[0], w[1], w[2])),
        (None, None) => config(format!("{who}: missing omega_deg_per_s")),
    }
}
