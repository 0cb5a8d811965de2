//! Flat `key = value` configuration with preset expansion and layered overrides.
//!
//! Layers, lowest first: built-in defaults, the config file, command-line overrides.
//! A `cost.preset` set in some layer replaces `cost.k_d`/`cost.k_nu` from lower
//! layers; explicit gains at the same or a higher layer win over the preset, and a
//! preset whose gains were changed resolves to `custom`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Matrix3, SMatrix, Vector3};
use thiserror::Error;

use crate::cost::{CostGains, Preset};
use crate::dynamics::{ControlInput, InputVec, UavModel, UavState};
use crate::nmpc::{Matrix8, NmpcWeights, SolverSettings};
use crate::pipeline::PlannerInputs;
use crate::rrt::RrtParams;
use crate::sensor::SensorModel;
use crate::sim::{MissionConfig, WorldSpec};
use crate::world::Point;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown key `{key}`{}", at(*.line))]
    UnknownKey { key: String, line: Option<usize> },
    #[error("`{key} = {value}`: {reason}")]
    Range { key: String, value: String, reason: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn at(line: Option<usize>) -> String {
    line.map(|l| format!(" at line {l}")).unwrap_or_else(|| " in overrides".into())
}

/// Every recognised key, in the order the resolved file lists them.
pub const KEYS: &[&str] = &[
    "sensor.range_m",
    "sensor.fov_deg",
    "sensor.array_m",
    "planner.n_goal",
    "planner.goal_attempt_factor",
    "planner.iterations",
    "planner.interp_m",
    "planner.goal_radius_m",
    "planner.step_max_factor",
    "nmpc.horizon",
    "nmpc.q_x",
    "nmpc.q_u",
    "nmpc.q_du",
    "nmpc.tolerance",
    "nmpc.max_iters",
    "model.ts_s",
    "model.drag",
    "model.tau_phi_s",
    "model.tau_theta_s",
    "model.gain_phi",
    "model.gain_theta",
    "model.thrust_min",
    "model.thrust_max",
    "model.angle_max_rad",
    "cost.preset",
    "cost.k_d",
    "cost.k_nu",
    "world.dims",
    "world.resolution_m",
    "mission.speed_mps",
    "mission.noise_sigma_m",
    "mission.sample_dt_s",
    "mission.discovery_margin_m",
    "mission.stall_replans",
    "mission.max_replans",
    "output.timings",
    "output.svg",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub sensor_range_m: f64,
    pub sensor_fov_deg: f64,
    pub sensor_array_m: f64,
    pub n_goal: usize,
    pub goal_attempt_factor: usize,
    pub iterations: usize,
    pub interp_m: f64,
    /// `None` until resolved; then the grid resolution unless set.
    pub goal_radius_m: Option<f64>,
    pub step_max_factor: f64,
    pub horizon: usize,
    pub q_x: [f64; 8],
    pub q_u: [f64; 3],
    pub q_du: [f64; 3],
    pub tolerance: f64,
    pub max_iters: usize,
    pub ts_s: f64,
    pub drag: [f64; 3],
    pub tau_phi_s: f64,
    pub tau_theta_s: f64,
    pub gain_phi: f64,
    pub gain_theta: f64,
    pub thrust_min: f64,
    pub thrust_max: f64,
    pub angle_max_rad: f64,
    pub preset: Preset,
    pub k_d: f64,
    pub k_nu: f64,
    pub world_dims: [usize; 3],
    pub world_resolution_m: f64,
    pub speed_mps: f64,
    pub noise_sigma_m: f64,
    pub sample_dt_s: f64,
    pub discovery_margin_m: f64,
    pub stall_replans: usize,
    pub max_replans: usize,
    /// Include wall-clock planning time in `metrics.csv`; off keeps reruns identical.
    pub timings: bool,
    pub svg: bool,
}

impl Default for Config {
    fn default() -> Self {
        let sensor = SensorModel::default();
        let model = UavModel::default();
        let weights = NmpcWeights::default();
        let solver = SolverSettings::default();
        let mission = MissionConfig::default();
        let gains = CostGains::GREEDY;
        Self {
            sensor_range_m: sensor.range,
            sensor_fov_deg: sensor.fov.to_degrees(),
            sensor_array_m: sensor.array,
            n_goal: 40,
            goal_attempt_factor: 200,
            iterations: 1500,
            interp_m: 0.75,
            goal_radius_m: None,
            step_max_factor: 2.0,
            horizon: weights.horizon,
            q_x: diag(&weights.q_x),
            q_u: diag(&weights.q_u),
            q_du: diag(&weights.q_du),
            tolerance: solver.tolerance,
            max_iters: solver.max_iters,
            ts_s: model.ts,
            drag: model.drag.into(),
            tau_phi_s: model.tau_phi,
            tau_theta_s: model.tau_theta,
            gain_phi: model.gain_phi,
            gain_theta: model.gain_theta,
            thrust_min: model.u_min.thrust,
            thrust_max: model.u_max.thrust,
            angle_max_rad: model.u_max.theta_ref,
            preset: Preset::Greedy,
            k_d: gains.k_d,
            k_nu: gains.k_nu,
            world_dims: mission.world.dims,
            world_resolution_m: mission.world.resolution,
            speed_mps: mission.speed,
            noise_sigma_m: mission.noise_sigma,
            sample_dt_s: mission.sample_dt,
            discovery_margin_m: mission.discovery_margin,
            stall_replans: mission.stall_replans,
            max_replans: mission.max_replans,
            timings: false,
            svg: false,
        }
    }
}

fn diag<const N: usize>(m: &SMatrix<f64, N, N>) -> [f64; N] {
    std::array::from_fn(|i| m[(i, i)])
}

/// Where an entry came from: its layer and, for file entries, its line.
#[derive(Clone, Debug)]
struct Entry {
    value: String,
    layer: u8,
    line: Option<usize>,
}

/// Parse `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_lines(text: &str) -> Result<Vec<(String, String, usize)>, ConfigError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Parse { line: n + 1, message: format!("expected `key = value`, got `{line}`") });
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(ConfigError::Parse { line: n + 1, message: "empty key or value".into() });
        }
        out.push((k.to_string(), v.to_string(), n + 1));
    }
    Ok(out)
}

/// Split a `key=value` command-line override.
pub fn parse_override(s: &str) -> Result<(String, String), ConfigError> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() && !v.trim().is_empty() => Ok((k.trim().into(), v.trim().into())),
        _ => Err(ConfigError::Parse { line: 0, message: format!("override `{s}` is not `key=value`") }),
    }
}

/// Read the file at `path` (if any), then apply `overrides` on top.
pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Config, ConfigError> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| ConfigError::Io { path: p.display().to_string(), source: e })?,
        None => String::new(),
    };
    parse_config(&text, overrides)
}

/// Resolve a config from file text plus overrides.
pub fn parse_config(text: &str, overrides: &[(String, String)]) -> Result<Config, ConfigError> {
    let mut merged: BTreeMap<String, Entry> = BTreeMap::new();
    for (k, v, line) in parse_lines(text)? {
        if !KEYS.contains(&k.as_str()) {
            return Err(ConfigError::UnknownKey { key: k, line: Some(line) });
        }
        merged.insert(k, Entry { value: v, layer: 0, line: Some(line) });
    }
    for (k, v) in overrides {
        if !KEYS.contains(&k.as_str()) {
            return Err(ConfigError::UnknownKey { key: k.clone(), line: None });
        }
        merged.insert(k.clone(), Entry { value: v.clone(), layer: 1, line: None });
    }

    let mut cfg = Config::default();
    let preset_layer = match merged.get("cost.preset") {
        Some(e) => {
            cfg.set("cost.preset", &e.value)?;
            if let Some(g) = cfg.preset.gains() {
                cfg.k_d = g.k_d;
                cfg.k_nu = g.k_nu;
            }
            Some(e.layer)
        }
        None => None,
    };
    for (k, e) in &merged {
        if k == "cost.preset" {
            continue;
        }
        let gain = k == "cost.k_d" || k == "cost.k_nu";
        if gain && preset_layer.is_some_and(|p| e.layer < p) {
            continue;
        }
        cfg.set(k, &e.value).map_err(|err| match (err, e.line) {
            (ConfigError::Parse { message, .. }, Some(line)) => ConfigError::Parse { line, message },
            (other, _) => other,
        })?;
    }
    if let Some(g) = cfg.preset.gains() {
        if g != (CostGains { k_d: cfg.k_d, k_nu: cfg.k_nu }) {
            cfg.preset = Preset::Custom;
        }
    }
    cfg.goal_radius_m.get_or_insert(cfg.world_resolution_m);
    cfg.validate()?;
    Ok(cfg)
}

fn range(key: &str, value: impl ToString, reason: &str) -> ConfigError {
    ConfigError::Range { key: key.into(), value: value.to_string(), reason: reason.into() }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| ConfigError::Parse { line: 0, message: format!("`{key}`: cannot parse `{v}`") })
}

fn list<T: std::str::FromStr + Copy + Default, const N: usize>(key: &str, v: &str) -> Result<[T; N], ConfigError> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(ConfigError::Parse { line: 0, message: format!("`{key}`: expected {N} comma-separated values") });
    }
    let mut out = [T::default(); N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = num(key, p)?;
    }
    Ok(out)
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

impl Config {
    /// Set one key from its text form. Values are range-checked by [`Config::validate`].
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        match key {
            "sensor.range_m" => self.sensor_range_m = num(key, v)?,
            "sensor.fov_deg" => self.sensor_fov_deg = num(key, v)?,
            "sensor.array_m" => self.sensor_array_m = num(key, v)?,
            "planner.n_goal" => self.n_goal = num(key, v)?,
            "planner.goal_attempt_factor" => self.goal_attempt_factor = num(key, v)?,
            "planner.iterations" => self.iterations = num(key, v)?,
            "planner.interp_m" => self.interp_m = num(key, v)?,
            "planner.goal_radius_m" => self.goal_radius_m = Some(num(key, v)?),
            "planner.step_max_factor" => self.step_max_factor = num(key, v)?,
            "nmpc.horizon" => self.horizon = num(key, v)?,
            "nmpc.q_x" => self.q_x = list(key, v)?,
            "nmpc.q_u" => self.q_u = list(key, v)?,
            "nmpc.q_du" => self.q_du = list(key, v)?,
            "nmpc.tolerance" => self.tolerance = num(key, v)?,
            "nmpc.max_iters" => self.max_iters = num(key, v)?,
            "model.ts_s" => self.ts_s = num(key, v)?,
            "model.drag" => self.drag = list(key, v)?,
            "model.tau_phi_s" => self.tau_phi_s = num(key, v)?,
            "model.tau_theta_s" => self.tau_theta_s = num(key, v)?,
            "model.gain_phi" => self.gain_phi = num(key, v)?,
            "model.gain_theta" => self.gain_theta = num(key, v)?,
            "model.thrust_min" => self.thrust_min = num(key, v)?,
            "model.thrust_max" => self.thrust_max = num(key, v)?,
            "model.angle_max_rad" => self.angle_max_rad = num(key, v)?,
            "cost.preset" => self.preset = v.parse().map_err(|_| range(key, v, "expected greedy, conservative or custom"))?,
            "cost.k_d" => self.k_d = num(key, v)?,
            "cost.k_nu" => self.k_nu = num(key, v)?,
            "world.dims" => self.world_dims = list(key, v)?,
            "world.resolution_m" => self.world_resolution_m = num(key, v)?,
            "mission.speed_mps" => self.speed_mps = num(key, v)?,
            "mission.noise_sigma_m" => self.noise_sigma_m = num(key, v)?,
            "mission.sample_dt_s" => self.sample_dt_s = num(key, v)?,
            "mission.discovery_margin_m" => self.discovery_margin_m = num(key, v)?,
            "mission.stall_replans" => self.stall_replans = num(key, v)?,
            "mission.max_replans" => self.max_replans = num(key, v)?,
            "output.timings" => self.timings = num(key, v)?,
            "output.svg" => self.svg = num(key, v)?,
            _ => return Err(ConfigError::UnknownKey { key: key.into(), line: None }),
        }
        Ok(())
    }

    /// Text form of one key. Floats print in shortest round-trip form.
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "sensor.range_m" => self.sensor_range_m.to_string(),
            "sensor.fov_deg" => self.sensor_fov_deg.to_string(),
            "sensor.array_m" => self.sensor_array_m.to_string(),
            "planner.n_goal" => self.n_goal.to_string(),
            "planner.goal_attempt_factor" => self.goal_attempt_factor.to_string(),
            "planner.iterations" => self.iterations.to_string(),
            "planner.interp_m" => self.interp_m.to_string(),
            "planner.goal_radius_m" => self.goal_radius_m.unwrap_or(self.world_resolution_m).to_string(),
            "planner.step_max_factor" => self.step_max_factor.to_string(),
            "nmpc.horizon" => self.horizon.to_string(),
            "nmpc.q_x" => join(&self.q_x),
            "nmpc.q_u" => join(&self.q_u),
            "nmpc.q_du" => join(&self.q_du),
            "nmpc.tolerance" => self.tolerance.to_string(),
            "nmpc.max_iters" => self.max_iters.to_string(),
            "model.ts_s" => self.ts_s.to_string(),
            "model.drag" => join(&self.drag),
            "model.tau_phi_s" => self.tau_phi_s.to_string(),
            "model.tau_theta_s" => self.tau_theta_s.to_string(),
            "model.gain_phi" => self.gain_phi.to_string(),
            "model.gain_theta" => self.gain_theta.to_string(),
            "model.thrust_min" => self.thrust_min.to_string(),
            "model.thrust_max" => self.thrust_max.to_string(),
            "model.angle_max_rad" => self.angle_max_rad.to_string(),
            "cost.preset" => self.preset.name().to_string(),
            "cost.k_d" => self.k_d.to_string(),
            "cost.k_nu" => self.k_nu.to_string(),
            "world.dims" => join(&self.world_dims),
            "world.resolution_m" => self.world_resolution_m.to_string(),
            "mission.speed_mps" => self.speed_mps.to_string(),
            "mission.noise_sigma_m" => self.noise_sigma_m.to_string(),
            "mission.sample_dt_s" => self.sample_dt_s.to_string(),
            "mission.discovery_margin_m" => self.discovery_margin_m.to_string(),
            "mission.stall_replans" => self.stall_replans.to_string(),
            "mission.max_replans" => self.max_replans.to_string(),
            "output.timings" => self.timings.to_string(),
            "output.svg" => self.svg.to_string(),
            _ => return None,
        })
    }

    /// Every key with its effective value, one `key = value` per line.
    pub fn to_text(&self) -> String {
        KEYS.iter().map(|k| format!("{k} = {}\n", self.get(k).expect("listed key"))).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let pos = |key: &str, v: f64| if v > 0.0 && v.is_finite() { Ok(()) } else { Err(range(key, v, "must be positive")) };
        let nonneg = |key: &str, v: f64| if v >= 0.0 && v.is_finite() { Ok(()) } else { Err(range(key, v, "must be non-negative")) };
        let atleast = |key: &str, v: usize, m: usize| if v >= m { Ok(()) } else { Err(range(key, v, &format!("must be at least {m}"))) };
        pos("sensor.range_m", self.sensor_range_m)?;
        if !(self.sensor_fov_deg > 0.0 && self.sensor_fov_deg < 180.0) {
            return Err(range("sensor.fov_deg", self.sensor_fov_deg, "must be in (0, 180)"));
        }
        nonneg("sensor.array_m", self.sensor_array_m)?;
        atleast("planner.n_goal", self.n_goal, 1)?;
        atleast("planner.goal_attempt_factor", self.goal_attempt_factor, 1)?;
        atleast("planner.iterations", self.iterations, 1)?;
        pos("planner.interp_m", self.interp_m)?;
        pos("planner.goal_radius_m", self.goal_radius_m.unwrap_or(self.world_resolution_m))?;
        pos("planner.step_max_factor", self.step_max_factor)?;
        atleast("nmpc.horizon", self.horizon, 1)?;
        for (key, w) in [("nmpc.q_x", &self.q_x[..]), ("nmpc.q_u", &self.q_u[..]), ("nmpc.q_du", &self.q_du[..])] {
            if !w.iter().all(|v| *v >= 0.0 && v.is_finite()) {
                return Err(range(key, join(w), "weights must be non-negative"));
            }
        }
        pos("nmpc.tolerance", self.tolerance)?;
        atleast("nmpc.max_iters", self.max_iters, 1)?;
        pos("model.ts_s", self.ts_s)?;
        if !self.drag.iter().all(|v| *v >= 0.0 && v.is_finite()) {
            return Err(range("model.drag", join(&self.drag), "must be non-negative"));
        }
        pos("model.tau_phi_s", self.tau_phi_s)?;
        pos("model.tau_theta_s", self.tau_theta_s)?;
        pos("model.gain_phi", self.gain_phi)?;
        pos("model.gain_theta", self.gain_theta)?;
        pos("model.thrust_min", self.thrust_min)?;
        if !(self.thrust_max > self.thrust_min && self.thrust_max.is_finite()) {
            return Err(range("model.thrust_max", self.thrust_max, "must exceed model.thrust_min"));
        }
        if !(self.angle_max_rad > 0.0 && self.angle_max_rad < std::f64::consts::FRAC_PI_2) {
            return Err(range("model.angle_max_rad", self.angle_max_rad, "must be in (0, pi/2)"));
        }
        let hover = ControlInput::REFERENCE.thrust;
        if !(self.thrust_min <= hover && hover <= self.thrust_max) {
            return Err(range("model.thrust_min", self.thrust_min, "thrust bounds must contain the hover thrust"));
        }
        nonneg("cost.k_d", self.k_d)?;
        nonneg("cost.k_nu", self.k_nu)?;
        if self.world_dims.contains(&0) {
            return Err(range("world.dims", join(&self.world_dims), "must be positive"));
        }
        pos("world.resolution_m", self.world_resolution_m)?;
        pos("mission.speed_mps", self.speed_mps)?;
        nonneg("mission.noise_sigma_m", self.noise_sigma_m)?;
        pos("mission.sample_dt_s", self.sample_dt_s)?;
        nonneg("mission.discovery_margin_m", self.discovery_margin_m)?;
        atleast("mission.stall_replans", self.stall_replans, 1)?;
        atleast("mission.max_replans", self.max_replans, 1)?;
        Ok(())
    }

    pub fn sensor(&self) -> SensorModel {
        SensorModel { range: self.sensor_range_m, fov: self.sensor_fov_deg.to_radians(), array: self.sensor_array_m }
    }

    pub fn gains(&self) -> CostGains {
        CostGains { k_d: self.k_d, k_nu: self.k_nu }
    }

    pub fn model(&self) -> UavModel {
        let a = self.angle_max_rad;
        UavModel {
            drag: Vector3::from(self.drag),
            tau_phi: self.tau_phi_s,
            tau_theta: self.tau_theta_s,
            gain_phi: self.gain_phi,
            gain_theta: self.gain_theta,
            ts: self.ts_s,
            u_min: ControlInput { thrust: self.thrust_min, theta_ref: -a, phi_ref: -a },
            u_max: ControlInput { thrust: self.thrust_max, theta_ref: a, phi_ref: a },
        }
    }

    pub fn weights(&self) -> NmpcWeights {
        NmpcWeights {
            q_x: Matrix8::from_diagonal(&SMatrix::<f64, 8, 1>::from_column_slice(&self.q_x)),
            q_u: Matrix3::from_diagonal(&InputVec::from(self.q_u)),
            q_du: Matrix3::from_diagonal(&InputVec::from(self.q_du)),
            u_ref: ControlInput::REFERENCE,
            horizon: self.horizon,
        }
    }

    pub fn rrt(&self) -> RrtParams {
        let res = self.world_resolution_m;
        let mut p = RrtParams::for_resolution(res, self.iterations);
        p.goal_radius = self.goal_radius_m.unwrap_or(res);
        p.step_max = self.step_max_factor * res;
        p
    }

    pub fn planner_inputs(&self, state: UavState, seed: u64) -> PlannerInputs {
        PlannerInputs {
            state,
            n_goal: self.n_goal,
            goal_attempts: self.goal_attempt_factor * self.n_goal,
            sensor: self.sensor(),
            gains: self.gains(),
            weights: self.weights(),
            model: self.model(),
            solver: SolverSettings { tolerance: self.tolerance, max_iters: self.max_iters },
            rrt: self.rrt(),
            interp_spacing: self.interp_m,
            seed,
        }
    }

    pub fn mission(&self, seed: u64) -> MissionConfig {
        MissionConfig {
            world: WorldSpec { dims: self.world_dims, resolution: self.world_resolution_m },
            planner: self.planner_inputs(UavState::hover_at(Point::zeros()), 0),
            preset: self.preset,
            seed,
            speed: self.speed_mps,
            noise_sigma: self.noise_sigma_m,
            sample_dt: self.sample_dt_s,
            discovery_margin: self.discovery_margin_m,
            stall_replans: self.stall_replans,
            max_replans: self.max_replans,
        }
    }
}
