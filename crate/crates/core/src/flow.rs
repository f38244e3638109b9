//! Integrating the learned ODE: guided velocities, the Euler flow map, and
//! flow-inversion editing.

use serde::{Deserialize, Serialize};

use crate::model::{Condition, Site, VelocityField};
use crate::numerics::check_dim;
use crate::{Error, Result};

/// Euler step count and guidance scales for one integration leg.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveSpec {
    pub steps: usize,
    /// Guidance scale `w` used by [`flow_map`].
    pub guidance_scale: f64,
    /// Guidance scale used by [`invert`]; 1.0 is the plain conditional field.
    pub inversion_guidance: f64,
}

impl Default for SolveSpec {
    fn default() -> Self {
        Self {
            steps: 30,
            guidance_scale: 1.0,
            inversion_guidance: 1.0,
        }
    }
}

impl SolveSpec {
    pub fn with_steps(steps: usize) -> Self {
        Self {
            steps,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("solver steps must be >= 1".into()));
        }
        for (name, w) in [
            ("guidance_scale", self.guidance_scale),
            ("inversion_guidance", self.inversion_guidance),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {w}")));
            }
        }
        Ok(())
    }
}

/// Source and target conditions plus the edit strength `lambda`; the
/// inversion depth is `tau = 1 - lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct EditSpec {
    pub source: Vec<f64>,
    pub target: Vec<f64>,
    pub strength: f64,
    /// Forward leg `tau -> 1` under the target condition.
    pub forward: SolveSpec,
    /// Backward leg `1 -> tau` under the source condition.
    pub inversion: SolveSpec,
}

impl EditSpec {
    pub fn new(source: Vec<f64>, target: Vec<f64>, strength: f64) -> Self {
        Self {
            source,
            target,
            strength,
            forward: SolveSpec::default(),
            inversion: SolveSpec::default(),
        }
    }

    pub fn with_preset(mut self, preset: &Preset) -> Self {
        self.strength = 1.0 - preset.tau;
        self.forward.steps = preset.steps;
        self.forward.guidance_scale = preset.guidance;
        self.inversion.steps = preset.inversion_steps;
        self
    }

    pub fn tau(&self) -> f64 {
        1.0 - self.strength
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.strength) {
            return Err(Error::Config(format!(
                "edit strength must be in [0, 1], got {}",
                self.strength
            )));
        }
        self.forward.validate()?;
        self.inversion.validate()
    }
}

/// Solver settings for one task family. `steps` is the forward step count,
/// `inversion_steps` the backward count, and the guidance sweep runs over
/// `guidance_grid`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub steps: usize,
    pub inversion_steps: usize,
    pub tau: f64,
    /// Default guidance scale: the low end of the sweep.
    pub guidance: f64,
    pub guidance_grid: (f64, f64, f64),
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "persona",
        steps: 30,
        inversion_steps: 15,
        tau: 0.5,
        guidance: 8.0,
        guidance_grid: (8.0, 30.0, 3.0),
    },
    Preset {
        name: "truthfulness",
        steps: 20,
        inversion_steps: 10,
        tau: 0.5,
        guidance: 5.0,
        guidance_grid: (5.0, 25.0, 5.0),
    },
    Preset {
        name: "concept",
        steps: 50,
        inversion_steps: 30,
        tau: 0.4,
        guidance: 50.0,
        guidance_grid: (50.0, 70.0, 5.0),
    },
    Preset {
        name: "constraint",
        steps: 10,
        inversion_steps: 1,
        tau: 0.9,
        guidance: 5.0,
        guidance_grid: (5.0, 30.0, 5.0),
    },
];

pub fn preset(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

/// Inclusive arithmetic grid `start, start + step, ...` up to `end`.
pub fn guidance_grid(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite()) || !start.is_finite() || !end.is_finite() || end < start {
        return Err(Error::Config(format!("bad grid [{start}, {end}] step {step}")));
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| start + k as f64 * step).collect())
}

/// `v_null + w (v_cond - v_null)`. The endpoints `w = 1` and `w = 0` return the
/// conditional and null velocities themselves.
pub fn guided_velocity<F: VelocityField + ?Sized>(
    field: &F,
    a: &[f64],
    t: f64,
    cond: &[f64],
    site: Site,
    w: f64,
) -> Result<Vec<f64>> {
    if w == 1.0 {
        return field.velocity(a, t, Condition::Embedding(cond), site);
    }
    let v_null = field.velocity(a, t, Condition::Null, site)?;
    if w == 0.0 {
        return Ok(v_null);
    }
    let v_cond = field.velocity(a, t, Condition::Embedding(cond), site)?;
    Ok(v_null.iter().zip(&v_cond).map(|(n, c)| n + w * (c - n)).collect())
}

fn integrate<F: VelocityField + ?Sized>(
    field: &F,
    a: &[f64],
    from: f64,
    to: f64,
    cond: Condition<'_>,
    site: Site,
    steps: usize,
    w: f64,
) -> Result<Vec<f64>> {
    check_dim("flow state", field.activation_dim(), a)?;
    if steps == 0 {
        return Err(Error::Config("solver steps must be >= 1".into()));
    }
    for (name, v) in [("start", from), ("end", to)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Argument(format!("flow {name} time {v} outside [0, 1]")));
        }
    }
    let mut state = a.to_vec();
    if from == to {
        return Ok(state);
    }
    let h = (to - from) / steps as f64;
    for k in 0..steps {
        // Grid points are computed directly rather than accumulated.
        let t = from + (to - from) * (k as f64 / steps as f64);
        let v = match cond {
            Condition::Embedding(e) => guided_velocity(field, &state, t, e, site, w)?,
            Condition::Null => field.velocity(&state, t, Condition::Null, site)?,
        };
        for (x, vi) in state.iter_mut().zip(&v) {
            *x += h * vi;
        }
        if state.iter().any(|x| !x.is_finite()) {
            return Err(Error::numeric("non-finite state during Euler integration", k));
        }
    }
    Ok(state)
}

/// Transports `a_s` from time `s` to time `t` with `spec.steps` uniform Euler
/// steps of signed size `(t - s) / steps`, using the guided velocity with
/// scale `spec.guidance_scale`. `t < s` integrates backward.
pub fn flow_map<F: VelocityField + ?Sized>(
    field: &F,
    a_s: &[f64],
    s: f64,
    t: f64,
    cond: Condition<'_>,
    site: Site,
    spec: &SolveSpec,
) -> Result<Vec<f64>> {
    spec.validate()?;
    integrate(field, a_s, s, t, cond, site, spec.steps, spec.guidance_scale)
}

/// Integrates `a` backward from `t = 1` to `tau` under `cond`, with guidance
/// scale `spec.inversion_guidance`.
pub fn invert<F: VelocityField + ?Sized>(
    field: &F,
    a: &[f64],
    cond: Condition<'_>,
    site: Site,
    tau: f64,
    spec: &SolveSpec,
) -> Result<Vec<f64>> {
    spec.validate()?;
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Argument(format!("tau {tau} outside [0, 1]")));
    }
    integrate(field, a, 1.0, tau, cond, site, spec.steps, spec.inversion_guidance)
}

/// Flow-inversion edit: invert `a_src` to `tau` under the source condition,
/// then regenerate to `t = 1` under the target condition. Strength 0 returns
/// the input untouched.
pub fn edit<F: VelocityField + ?Sized>(field: &F, a_src: &[f64], spec: &EditSpec, site: Site) -> Result<Vec<f64>> {
    spec.validate()?;
    check_dim("edit source", field.activation_dim(), a_src)?;
    if spec.strength == 0.0 {
        return Ok(a_src.to_vec());
    }
    let tau = spec.tau();
    let latent = invert(field, a_src, Condition::Embedding(&spec.source), site, tau, &spec.inversion)?;
    flow_map(field, &latent, tau, 1.0, Condition::Embedding(&spec.target), site, &spec.forward)
}
