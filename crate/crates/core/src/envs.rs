//! Pendulum and point-mass environments with perturbable physics.
//!
//! Both are integrated with semi-implicit Euler over [`SUBSTEPS`] internal
//! substeps per control step. Episodes end at [`HORIZON`] steps; reaching
//! the horizon is a time limit, not a terminal state.
//!
//! Pendulum conventions: `theta = 0` is upright and `theta = pi` hangs
//! straight down. Angles are wrapped to `[-pi, pi)`. The reward is
//! `-(theta^2 + 0.1 theta_dot^2 + 0.001 a^2)`, so resting at the bottom
//! costs about `pi^2` per step and the reward lies in
//! [`PENDULUM_REWARD_MIN`, 0].
//!
//! Point-mass conventions: a unit block on a slope of fixed incline pushed
//! by the action and the wind; the reward is forward velocity minus
//! `0.1 a^2`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HORIZON: u32 = 200;
pub const SUBSTEPS: u32 = 8;
pub const PENDULUM_MAX_SPEED: f64 = 8.0;
pub const POINT_MASS_MAX_SPEED: f64 = 10.0;
/// Sine of the point-mass slope; gravity pulls backwards along it.
pub const POINT_MASS_INCLINE: f64 = 0.1;
pub const PENDULUM_REWARD_MIN: f64 =
    -(PI * PI + 0.1 * PENDULUM_MAX_SPEED * PENDULUM_MAX_SPEED + 0.001);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Pendulum,
    PointMass,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Pendulum => "pendulum",
            EnvKind::PointMass => "point_mass",
        }
    }

    pub fn obs_dim(self) -> usize {
        match self {
            EnvKind::Pendulum => 3,
            EnvKind::PointMass => 1,
        }
    }

    pub fn action_dim(self) -> usize {
        1
    }

    pub fn default_params(self) -> EnvParams {
        match self {
            EnvKind::Pendulum => EnvParams {
                gravity: 9.81,
                pole_length: 1.0,
                mass: 1.0,
                wind: 0.0,
                damping: 0.0,
                max_force: 8.0,
                init_noise: 0.1,
                dt: 0.02,
            },
            EnvKind::PointMass => EnvParams {
                gravity: 9.81,
                pole_length: 1.0,
                mass: 1.0,
                wind: 1.0,
                damping: 0.5,
                max_force: 5.0,
                init_noise: 0.1,
                dt: 0.02,
            },
        }
    }

    /// Inclusive per-step reward bounds.
    pub fn reward_bounds(self) -> (f64, f64) {
        match self {
            EnvKind::Pendulum => (PENDULUM_REWARD_MIN, 0.0),
            EnvKind::PointMass => (-POINT_MASS_MAX_SPEED - 0.1, POINT_MASS_MAX_SPEED),
        }
    }
}

/// Physical parameters. `pole_length` is unused by the point mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvParams {
    pub gravity: f64,
    pub pole_length: f64,
    pub mass: f64,
    /// Horizontal force on the bob / along the slope.
    pub wind: f64,
    pub damping: f64,
    /// Torque (pendulum) or force (point mass) at action magnitude 1.
    pub max_force: f64,
    /// Half-width of the uniform noise on the initial state.
    pub init_noise: f64,
    pub dt: f64,
}

impl EnvParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.gravity,
            self.pole_length,
            self.mass,
            self.wind,
            self.damping,
            self.max_force,
            self.init_noise,
            self.dt,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config(
                "environment parameters must be finite".into(),
            ));
        }
        if self.dt <= 0.0 || self.mass <= 0.0 || self.pole_length <= 0.0 {
            return Err(Error::Config(
                "dt, mass and pole_length must be positive".into(),
            ));
        }
        if self.damping < 0.0 || self.init_noise < 0.0 || self.max_force < 0.0 {
            return Err(Error::Config(
                "damping, init_noise and max_force must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Copy with named fields replaced, e.g. by a schedule draw.
    pub fn with_values(&self, values: &BTreeMap<String, f64>) -> Result<Self> {
        let mut p = *self;
        for (name, &v) in values {
            let slot = match name.as_str() {
                "gravity" => &mut p.gravity,
                "pole_length" => &mut p.pole_length,
                "mass" => &mut p.mass,
                "wind" => &mut p.wind,
                "damping" => &mut p.damping,
                "max_force" => &mut p.max_force,
                other => {
                    return Err(Error::Config(format!(
                        "schedule parameter '{other}' is not an environment parameter"
                    )))
                }
            };
            *slot = v;
        }
        p.validate()?;
        Ok(p)
    }
}

/// Generalized coordinate `q` (angle or position), its velocity and the
/// step count within the episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub q: f64,
    pub qd: f64,
    pub t: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: EnvState,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: EnvState,
    /// Episode over (time limit).
    pub done: bool,
    /// True environment termination; never set by these tasks, so
    /// bootstrapping continues through time-limit boundaries.
    pub terminal: bool,
}

fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

/// Initial state: pendulum near the bottom, point mass near the origin,
/// each coordinate perturbed by `U(-init_noise, init_noise)`.
pub fn reset(kind: EnvKind, params: &EnvParams, rng: &mut impl Rng) -> Result<EnvState> {
    params.validate()?;
    let mut noise = || {
        if params.init_noise > 0.0 {
            rng.random_range(-params.init_noise..params.init_noise)
        } else {
            0.0
        }
    };
    Ok(match kind {
        EnvKind::Pendulum => EnvState {
            q: wrap_angle(PI + noise()),
            qd: noise(),
            t: 0,
        },
        EnvKind::PointMass => EnvState {
            q: noise(),
            qd: noise(),
            t: 0,
        },
    })
}

pub fn observe(kind: EnvKind, state: &EnvState) -> Vec<f64> {
    match kind {
        EnvKind::Pendulum => vec![state.q.cos(), state.q.sin(), state.qd],
        EnvKind::PointMass => vec![state.qd],
    }
}

/// Acceleration of the generalized coordinate.
pub fn acceleration(kind: EnvKind, params: &EnvParams, q: f64, qd: f64, u: f64) -> f64 {
    match kind {
        EnvKind::Pendulum => {
            let l = params.pole_length;
            let inertia = params.mass * l * l;
            params.gravity / l * q.sin()
                + (params.max_force * u - params.damping * qd + params.wind * l * q.cos()) / inertia
        }
        EnvKind::PointMass => {
            (params.max_force * u + params.wind - params.damping * qd) / params.mass
                - params.gravity * POINT_MASS_INCLINE
        }
    }
}

pub fn step(
    kind: EnvKind,
    state: &EnvState,
    action: &[f64],
    params: &EnvParams,
) -> Result<Transition> {
    if action.len() != kind.action_dim() {
        return Err(Error::Dimension(format!(
            "{} expects {} action dims",
            kind.name(),
            kind.action_dim()
        )));
    }
    if !action[0].is_finite() {
        return Err(Error::Numerical("non-finite action".into()));
    }
    let u = action[0].clamp(-1.0, 1.0);
    let h = params.dt / SUBSTEPS as f64;
    let vmax = match kind {
        EnvKind::Pendulum => PENDULUM_MAX_SPEED,
        EnvKind::PointMass => POINT_MASS_MAX_SPEED,
    };
    let (mut q, mut qd) = (state.q, state.qd);
    for _ in 0..SUBSTEPS {
        qd = (qd + h * acceleration(kind, params, q, qd, u)).clamp(-vmax, vmax);
        q += h * qd;
    }
    if kind == EnvKind::Pendulum {
        q = wrap_angle(q);
    }
    if !q.is_finite() || !qd.is_finite() {
        return Err(Error::Numerical(format!("{} state blew up", kind.name())));
    }
    let reward = match kind {
        EnvKind::Pendulum => {
            let th = wrap_angle(state.q);
            -(th * th + 0.1 * state.qd * state.qd + 0.001 * u * u)
        }
        EnvKind::PointMass => qd - 0.1 * u * u,
    };
    let next_state = EnvState {
        q,
        qd,
        t: state.t + 1,
    };
    Ok(Transition {
        state: *state,
        action: vec![u],
        reward,
        next_state,
        done: next_state.t >= HORIZON,
        terminal: false,
    })
}

/// Pendulum mechanical energy with the bottom as zero potential.
pub fn pendulum_energy(params: &EnvParams, state: &EnvState) -> f64 {
    let l = params.pole_length;
    0.5 * params.mass * l * l * state.qd * state.qd
        + params.mass * params.gravity * l * (1.0 + state.q.cos())
}
