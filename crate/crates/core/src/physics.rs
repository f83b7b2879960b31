//! Fixed-timestep cart-pole dynamics.
//!
//! The integrator is the classic Gym cart-pole update (explicit Euler, position
//! advanced with the pre-step velocity). Environmental disturbances are layered
//! on top of it:
//!
//! - slope: a constant along-track gravity component `-(M + m) g sin(angle)`
//!   entering the equations of motion as an extra force,
//! - wind: Poisson-arriving gusts, each spreading `gust_impulse` of added pole
//!   angular velocity over `gust_duration`; the first gust's direction is drawn
//!   from the stream and later gusts alternate,
//! - bumps: a sinusoidal road `h(x) = A sin(2 pi x / wavelength)`; each step tilts
//!   the pole by `-h'(x) * x_dot * dt / pole_half_length`.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartpoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
    pub step_index: u64,
    pub elapsed: f64,
}

impl CartpoleState {
    pub fn new(x: f64, x_dot: f64, theta: f64, theta_dot: f64) -> Self {
        Self {
            x,
            x_dot,
            theta,
            theta_dot,
            step_index: 0,
            elapsed: 0.0,
        }
    }

    pub fn upright() -> Self {
        Self::new(0.0, 0.0, 0.0, 0.0)
    }

    /// Gym-style reset: each component uniform in `[-0.05, 0.05)`.
    pub fn jittered<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::new(
            rng.gen_range(-0.05..0.05),
            rng.gen_range(-0.05..0.05),
            rng.gen_range(-0.05..0.05),
            rng.gen_range(-0.05..0.05),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite()
            && self.x_dot.is_finite()
            && self.theta.is_finite()
            && self.theta_dot.is_finite()
            && self.elapsed.is_finite()
    }

    /// The state reflected through `x = 0`.
    pub fn mirrored(&self) -> Self {
        Self {
            x: -self.x,
            x_dot: -self.x_dot,
            theta: -self.theta,
            theta_dot: -self.theta_dot,
            ..*self
        }
    }

    /// Mechanical energy of the cart-pole (pole modelled as a uniform rod,
    /// potential measured from the pivot).
    pub fn energy(&self, params: &PhysicsParams) -> f64 {
        let l = params.pole_half_length;
        let m = params.mass_pole;
        let cart = 0.5 * params.mass_cart * self.x_dot * self.x_dot;
        // Centre-of-mass velocity of the rod plus rotation about its centre.
        let vx = self.x_dot + l * self.theta_dot * self.theta.cos();
        let vy = -l * self.theta_dot * self.theta.sin();
        let inertia = m * (2.0 * l) * (2.0 * l) / 12.0;
        let pole = 0.5 * m * (vx * vx + vy * vy) + 0.5 * inertia * self.theta_dot * self.theta_dot;
        let potential = m * params.gravity * l * self.theta.cos();
        cart + pole + potential
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsParams {
    pub gravity: f64,
    pub mass_cart: f64,
    pub mass_pole: f64,
    pub pole_half_length: f64,
    pub force_mag: f64,
    pub dt: f64,
    pub x_limit: f64,
    /// Fall threshold in radians.
    pub theta_limit: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            mass_cart: 1.0,
            mass_pole: 0.1,
            pole_half_length: 0.5,
            force_mag: 10.0,
            dt: 0.02,
            x_limit: 2.4,
            theta_limit: 80.0_f64.to_radians(),
        }
    }
}

impl PhysicsParams {
    pub fn total_mass(&self) -> f64 {
        self.mass_cart + self.mass_pole
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("physics.gravity", self.gravity),
            ("physics.mass_cart", self.mass_cart),
            ("physics.mass_pole", self.mass_pole),
            ("physics.pole_half_length", self.pole_half_length),
            ("physics.force_mag", self.force_mag),
            ("physics.dt", self.dt),
            ("physics.x_limit", self.x_limit),
            ("physics.theta_limit", self.theta_limit),
        ];
        for (field, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(
                    field,
                    format!("must be positive and finite, got {value}"),
                ));
            }
        }
        if self.dt > 0.05 {
            return Err(Error::config(
                "physics.dt",
                format!("must be at most 0.05 s, got {}", self.dt),
            ));
        }
        let gym_limit = 12.0_f64.to_radians();
        if self.theta_limit <= gym_limit || self.theta_limit > PI / 2.0 {
            return Err(Error::config(
                "physics.theta_limit",
                format!("must lie in (12 deg, 90 deg], got {} rad", self.theta_limit),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slope {
    /// Road inclination in radians; positive rises to the right.
    pub angle: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wind {
    /// Mean gust arrivals per second.
    pub gust_rate: f64,
    /// Total pole angular velocity (rad/s) delivered by one gust.
    pub gust_impulse: f64,
    /// Seconds over which a gust is delivered.
    pub gust_duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bumps {
    pub amplitude: f64,
    pub wavelength: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSet {
    pub slope: Option<Slope>,
    pub wind: Option<Wind>,
    pub bumps: Option<Bumps>,
}

impl DisturbanceSet {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.slope.is_none() && self.wind.is_none() && self.bumps.is_none()
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        let check = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::config(
                    format!("{field}.{name}"),
                    format!("must be finite and >= 0, got {v}"),
                ))
            }
        };
        if let Some(s) = self.slope {
            check("slope.angle", s.angle.abs())?;
        }
        if let Some(w) = self.wind {
            check("wind.gust_rate", w.gust_rate)?;
            check("wind.gust_impulse", w.gust_impulse)?;
            check("wind.gust_duration", w.gust_duration)?;
        }
        if let Some(b) = self.bumps {
            check("bumps.amplitude", b.amplitude)?;
            check("bumps.wavelength", b.wavelength)?;
            if b.wavelength == 0.0 {
                return Err(Error::config(
                    format!("{field}.bumps.wavelength"),
                    "must be positive",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Running,
    Fall,
    ExitLeft,
    ExitRight,
    Won,
}

impl Outcome {
    pub fn is_terminal(self) -> bool {
        !matches!(self, Outcome::Running)
    }

    pub fn is_exit(self) -> bool {
        matches!(self, Outcome::ExitLeft | Outcome::ExitRight)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ActiveGust {
    sign: f64,
    per_step: f64,
    remaining: u32,
}

/// The random stream feeding environmental disturbances, plus the in-flight gust.
///
/// Kept apart from the arbitration stream so enabling or disabling disturbances
/// never shifts the action noise.
#[derive(Debug, Clone)]
pub struct DisturbanceStream {
    rng: ChaCha8Rng,
    gust: Option<ActiveGust>,
    last_sign: Option<f64>,
}

impl DisturbanceStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            gust: None,
            last_sign: None,
        }
    }

    fn wind_kick(&mut self, wind: &Wind, dt: f64) -> f64 {
        if self.gust.is_none() {
            let arrival = 1.0 - (-wind.gust_rate * dt).exp();
            let draw: f64 = self.rng.gen();
            if draw < arrival {
                let sign = match self.last_sign {
                    Some(previous) => -previous,
                    None if self.rng.gen::<bool>() => 1.0,
                    None => -1.0,
                };
                self.last_sign = Some(sign);
                let steps = ((wind.gust_duration / dt).ceil() as u32).max(1);
                self.gust = Some(ActiveGust {
                    sign,
                    per_step: wind.gust_impulse / steps as f64,
                    remaining: steps,
                });
            }
        }
        match self.gust.as_mut() {
            Some(g) => {
                let kick = g.sign * g.per_step;
                g.remaining -= 1;
                if g.remaining == 0 {
                    self.gust = None;
                }
                kick
            }
            None => 0.0,
        }
    }
}

/// Advances `state` by one `dt` under `applied_force` (newtons, positive pushes right).
pub fn step(
    state: &CartpoleState,
    applied_force: f64,
    params: &PhysicsParams,
    disturbances: &DisturbanceSet,
    stream: &mut DisturbanceStream,
) -> Result<CartpoleState> {
    if !state.is_finite() || !applied_force.is_finite() {
        return Err(Error::NonFiniteState(format!(
            "{state:?}, force {applied_force}"
        )));
    }

    let total_mass = params.total_mass();
    let pole_mass_length = params.mass_pole * params.pole_half_length;
    let mut force = applied_force;
    if let Some(slope) = disturbances.slope {
        force -= total_mass * params.gravity * slope.angle.sin();
    }

    let (sin_t, cos_t) = state.theta.sin_cos();
    let temp = (force + pole_mass_length * state.theta_dot * state.theta_dot * sin_t) / total_mass;
    let theta_acc = (params.gravity * sin_t - cos_t * temp)
        / (params.pole_half_length * (4.0 / 3.0 - params.mass_pole * cos_t * cos_t / total_mass));
    let x_acc = temp - pole_mass_length * theta_acc * cos_t / total_mass;

    let dt = params.dt;
    let x = state.x + dt * state.x_dot;
    let x_dot = state.x_dot + dt * x_acc;
    let mut theta = state.theta + dt * state.theta_dot;
    let mut theta_dot = state.theta_dot + dt * theta_acc;

    if let Some(wind) = disturbances.wind {
        theta_dot += stream.wind_kick(&wind, dt);
    }
    if let Some(bumps) = disturbances.bumps {
        let k = 2.0 * PI / bumps.wavelength;
        let road_gradient = bumps.amplitude * k * (k * state.x).cos();
        theta -= road_gradient * state.x_dot * dt / params.pole_half_length;
    }

    let step_index = state.step_index + 1;
    let next = CartpoleState {
        x,
        x_dot,
        theta: wrap_angle(theta),
        theta_dot,
        step_index,
        elapsed: step_index as f64 * dt,
    };
    if !next.is_finite() {
        return Err(Error::NonFiniteState(format!(
            "integration diverged to {next:?}"
        )));
    }
    Ok(next)
}

fn wrap_angle(theta: f64) -> f64 {
    if theta.abs() <= PI {
        theta
    } else {
        let wrapped = (theta + PI).rem_euclid(2.0 * PI) - PI;
        if wrapped == -PI {
            PI
        } else {
            wrapped
        }
    }
}

/// Classifies `state`. An exit takes precedence over a fall on the same tick.
pub fn check_termination(state: &CartpoleState, params: &PhysicsParams) -> Outcome {
    if state.x < -params.x_limit {
        Outcome::ExitLeft
    } else if state.x > params.x_limit {
        Outcome::ExitRight
    } else if state.theta.abs() > params.theta_limit {
        Outcome::Fall
    } else {
        Outcome::Running
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> DisturbanceStream {
        DisturbanceStream::new(0)
    }

    #[test]
    fn upright_rest_is_a_fixed_point() {
        let p = PhysicsParams::default();
        let mut s = CartpoleState::upright();
        for _ in 0..1000 {
            s = step(&s, 0.0, &p, &DisturbanceSet::none(), &mut quiet()).unwrap();
            assert_eq!((s.x, s.x_dot, s.theta, s.theta_dot), (0.0, 0.0, 0.0, 0.0));
        }
        assert_eq!(s.step_index, 1000);
        assert_eq!(s.elapsed, 1000.0 * p.dt);
    }

    #[test]
    fn slope_rolls_cart_downhill() {
        let p = PhysicsParams::default();
        let d = DisturbanceSet {
            slope: Some(Slope { angle: 0.05 }),
            ..Default::default()
        };
        let s = step(&CartpoleState::upright(), 0.0, &p, &d, &mut quiet()).unwrap();
        assert!(s.x_dot < 0.0);
    }

    #[test]
    fn non_finite_state_is_rejected() {
        let p = PhysicsParams::default();
        let s = CartpoleState::new(f64::NAN, 0.0, 0.0, 0.0);
        assert!(matches!(
            step(&s, 0.0, &p, &DisturbanceSet::none(), &mut quiet()),
            Err(Error::NonFiniteState(_))
        ));
    }

    #[test]
    fn termination_cases() {
        let p = PhysicsParams::default();
        let fall = CartpoleState::new(0.0, 0.0, 81.0_f64.to_radians(), 0.0);
        assert_eq!(check_termination(&fall, &p), Outcome::Fall);
        let right = CartpoleState::new(p.x_limit + 0.01, 0.0, 0.0, 0.0);
        assert_eq!(check_termination(&right, &p), Outcome::ExitRight);
        let left = CartpoleState::new(-p.x_limit - 0.01, 0.0, 0.0, 0.0);
        assert_eq!(check_termination(&left, &p), Outcome::ExitLeft);
        assert_eq!(
            check_termination(&CartpoleState::upright(), &p),
            Outcome::Running
        );
        // 79 degrees is still inside the 80 degree band.
        let lean = CartpoleState::new(0.0, 0.0, 79.0_f64.to_radians(), 0.0);
        assert_eq!(check_termination(&lean, &p), Outcome::Running);
    }

    #[test]
    fn exit_wins_over_fall() {
        let p = PhysicsParams::default();
        let both = CartpoleState::new(p.x_limit + 0.5, 0.0, 1.5, 0.0);
        assert_eq!(check_termination(&both, &p), Outcome::ExitRight);
    }

    #[test]
    fn wind_gusts_are_seed_deterministic() {
        let p = PhysicsParams::default();
        let d = DisturbanceSet {
            wind: Some(Wind {
                gust_rate: 2.0,
                gust_impulse: 0.4,
                gust_duration: 0.2,
            }),
            ..Default::default()
        };
        let run = |seed| {
            let mut stream = DisturbanceStream::new(seed);
            let mut s = CartpoleState::upright();
            for _ in 0..200 {
                s = step(&s, 0.0, &p, &d, &mut stream).unwrap();
            }
            s
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
        assert_ne!(run(3).theta_dot, 0.0);
    }

    #[test]
    fn gust_directions_alternate() {
        let p = PhysicsParams::default();
        let wind = Wind {
            gust_rate: 5.0,
            gust_impulse: 0.4,
            gust_duration: 0.04,
        };
        let mut stream = DisturbanceStream::new(11);
        let mut kicks: Vec<f64> = (0..2000)
            .map(|_| stream.wind_kick(&wind, p.dt))
            .filter(|k| *k != 0.0)
            .collect();
        kicks.dedup();
        assert!(kicks.len() > 10);
        for pair in kicks.windows(2) {
            assert_eq!(pair[0], -pair[1]);
        }
    }

    #[test]
    fn bumps_need_motion() {
        let p = PhysicsParams::default();
        let d = DisturbanceSet {
            bumps: Some(Bumps {
                amplitude: 0.05,
                wavelength: 1.0,
            }),
            ..Default::default()
        };
        let resting = step(&CartpoleState::upright(), 0.0, &p, &d, &mut quiet()).unwrap();
        assert_eq!(resting.theta, 0.0);
        let moving = step(
            &CartpoleState::new(0.0, 1.0, 0.0, 0.0),
            0.0,
            &p,
            &d,
            &mut quiet(),
        )
        .unwrap();
        assert!(moving.theta < 0.0);
    }

    #[test]
    fn param_validation() {
        assert!(PhysicsParams::default().validate().is_ok());
        let gym = PhysicsParams {
            theta_limit: 12.0_f64.to_radians(),
            ..Default::default()
        };
        assert!(gym.validate().is_err());
        let coarse = PhysicsParams {
            dt: 0.1,
            ..Default::default()
        };
        assert!(coarse.validate().is_err());
        let negative = PhysicsParams {
            mass_pole: -0.1,
            ..Default::default()
        };
        assert!(negative.validate().is_err());
    }

    #[test]
    fn wrap_keeps_theta_in_range() {
        assert_eq!(wrap_angle(0.3), 0.3);
        let w = wrap_angle(3.0 * PI / 2.0);
        assert!((w + PI / 2.0).abs() < 1e-12);
        assert!(wrap_angle(-3.5).abs() <= PI);
    }
}
