//! Classic-control environments.

use elephant_core::RngState;

use crate::config::EnvKind;
use crate::error::{ExpError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: f64,
    /// The task itself ended; no bootstrapping past this step.
    pub terminated: bool,
    /// The episode cap was hit.
    pub truncated: bool,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

pub trait Env {
    fn obs_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn max_steps(&self) -> usize;
    fn reset(&mut self, rng: &mut RngState) -> Vec<f64>;
    /// Fails with a usage error once the episode is over.
    fn step(&mut self, action: usize) -> Result<StepOutcome>;
}

pub fn make_env(kind: EnvKind) -> Box<dyn Env + Send> {
    match kind {
        EnvKind::MountainCar => Box::new(MountainCar::new()),
        EnvKind::Acrobot => Box::new(Acrobot::new()),
    }
}

fn check_step(over: bool, action: usize, n: usize) -> Result<()> {
    if over {
        return Err(ExpError::Usage("step called on a finished episode; reset first".into()));
    }
    if action >= n {
        return Err(ExpError::Usage(format!("action {action} outside 0..{n}")));
    }
    Ok(())
}

pub mod mountain_car {
    pub const MIN_POSITION: f64 = -1.2;
    pub const MAX_POSITION: f64 = 0.6;
    pub const MAX_SPEED: f64 = 0.07;
    pub const GOAL_POSITION: f64 = 0.5;
    pub const FORCE: f64 = 0.001;
    pub const GRAVITY: f64 = 0.0025;
    pub const MAX_STEPS: usize = 200;

    /// One step of the car; actions are push left, no push, push right.
    pub fn dynamics(position: f64, velocity: f64, action: usize) -> (f64, f64) {
        let mut v = velocity + (action as f64 - 1.0) * FORCE - (3.0 * position).cos() * GRAVITY;
        v = v.clamp(-MAX_SPEED, MAX_SPEED);
        let mut p = position + v;
        p = p.clamp(MIN_POSITION, MAX_POSITION);
        if p == MIN_POSITION && v < 0.0 {
            v = 0.0;
        }
        (p, v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MountainCar {
    pub position: f64,
    pub velocity: f64,
    pub steps: usize,
    over: bool,
}

impl MountainCar {
    pub fn new() -> Self {
        MountainCar {
            position: -0.5,
            velocity: 0.0,
            steps: 0,
            over: true,
        }
    }

    /// Starts an episode from an explicit state.
    pub fn set_state(&mut self, position: f64, velocity: f64) {
        self.position = position;
        self.velocity = velocity;
        self.steps = 0;
        self.over = false;
    }
}

impl Default for MountainCar {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for MountainCar {
    fn obs_dim(&self) -> usize {
        2
    }

    fn n_actions(&self) -> usize {
        3
    }

    fn max_steps(&self) -> usize {
        mountain_car::MAX_STEPS
    }

    fn reset(&mut self, rng: &mut RngState) -> Vec<f64> {
        self.set_state(rng.uniform(-0.6, -0.4), 0.0);
        vec![self.position, self.velocity]
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        check_step(self.over, action, 3)?;
        let (p, v) = mountain_car::dynamics(self.position, self.velocity, action);
        self.position = p;
        self.velocity = v;
        self.steps += 1;
        let terminated = p >= mountain_car::GOAL_POSITION && v >= 0.0;
        let truncated = !terminated && self.steps >= mountain_car::MAX_STEPS;
        self.over = terminated || truncated;
        Ok(StepOutcome {
            obs: vec![p, v],
            reward: -1.0,
            terminated,
            truncated,
        })
    }
}

pub mod acrobot {
    use std::f64::consts::PI;

    pub const DT: f64 = 0.2;
    pub const LINK_LENGTH_1: f64 = 1.0;
    pub const LINK_MASS_1: f64 = 1.0;
    pub const LINK_MASS_2: f64 = 1.0;
    pub const LINK_COM_POS_1: f64 = 0.5;
    pub const LINK_COM_POS_2: f64 = 0.5;
    pub const LINK_MOI: f64 = 1.0;
    pub const MAX_VEL_1: f64 = 4.0 * PI;
    pub const MAX_VEL_2: f64 = 9.0 * PI;
    pub const TORQUES: [f64; 3] = [-1.0, 0.0, 1.0];
    pub const GRAVITY: f64 = 9.8;
    pub const MAX_STEPS: usize = 500;

    fn derivs(s: [f64; 4], torque: f64) -> [f64; 4] {
        let (m1, m2) = (LINK_MASS_1, LINK_MASS_2);
        let (l1, lc1, lc2) = (LINK_LENGTH_1, LINK_COM_POS_1, LINK_COM_POS_2);
        let (i1, i2) = (LINK_MOI, LINK_MOI);
        let g = GRAVITY;
        let [theta1, theta2, dtheta1, dtheta2] = s;
        let d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * theta2.cos()) + i1 + i2;
        let d2 = m2 * (lc2 * lc2 + l1 * lc2 * theta2.cos()) + i2;
        let phi2 = m2 * lc2 * g * (theta1 + theta2 - PI / 2.0).cos();
        let phi1 = -m2 * l1 * lc2 * dtheta2 * dtheta2 * theta2.sin()
            - 2.0 * m2 * l1 * lc2 * dtheta2 * dtheta1 * theta2.sin()
            + (m1 * lc1 + m2 * l1) * g * (theta1 - PI / 2.0).cos()
            + phi2;
        let ddtheta2 = (torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1 * dtheta1 * theta2.sin() - phi2)
            / (m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
        let ddtheta1 = -(d2 * ddtheta2 + phi1) / d1;
        [dtheta1, dtheta2, ddtheta1, ddtheta2]
    }

    fn axpy(s: [f64; 4], k: [f64; 4], h: f64) -> [f64; 4] {
        [s[0] + h * k[0], s[1] + h * k[1], s[2] + h * k[2], s[3] + h * k[3]]
    }

    pub fn wrap(mut x: f64, lo: f64, hi: f64) -> f64 {
        let span = hi - lo;
        while x > hi {
            x -= span;
        }
        while x < lo {
            x += span;
        }
        x
    }

    /// One classical Runge-Kutta step of length [`DT`] under a fixed torque,
    /// followed by angle wrapping and velocity clipping.
    pub fn dynamics(s: [f64; 4], torque: f64) -> [f64; 4] {
        let k1 = derivs(s, torque);
        let k2 = derivs(axpy(s, k1, DT / 2.0), torque);
        let k3 = derivs(axpy(s, k2, DT / 2.0), torque);
        let k4 = derivs(axpy(s, k3, DT), torque);
        let mut n = [0.0; 4];
        for i in 0..4 {
            n[i] = s[i] + DT / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        n[0] = wrap(n[0], -PI, PI);
        n[1] = wrap(n[1], -PI, PI);
        n[2] = n[2].clamp(-MAX_VEL_1, MAX_VEL_1);
        n[3] = n[3].clamp(-MAX_VEL_2, MAX_VEL_2);
        n
    }

    /// Whether the tip is more than one link length above the pivot.
    pub fn tip_above_line(s: [f64; 4]) -> bool {
        -s[0].cos() - (s[1] + s[0]).cos() > 1.0
    }

    pub fn observe(s: [f64; 4]) -> Vec<f64> {
        vec![s[0].cos(), s[0].sin(), s[1].cos(), s[1].sin(), s[2], s[3]]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Acrobot {
    /// θ1, θ2, θ̇1, θ̇2
    pub state: [f64; 4],
    pub steps: usize,
    over: bool,
}

impl Acrobot {
    pub fn new() -> Self {
        Acrobot {
            state: [0.0; 4],
            steps: 0,
            over: true,
        }
    }

    pub fn set_state(&mut self, state: [f64; 4]) {
        self.state = state;
        self.steps = 0;
        self.over = false;
    }
}

impl Default for Acrobot {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for Acrobot {
    fn obs_dim(&self) -> usize {
        6
    }

    fn n_actions(&self) -> usize {
        3
    }

    fn max_steps(&self) -> usize {
        acrobot::MAX_STEPS
    }

    fn reset(&mut self, rng: &mut RngState) -> Vec<f64> {
        let s = [0; 4].map(|_| rng.uniform(-0.1, 0.1));
        self.set_state(s);
        acrobot::observe(s)
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        check_step(self.over, action, 3)?;
        self.state = acrobot::dynamics(self.state, acrobot::TORQUES[action]);
        self.steps += 1;
        let terminated = acrobot::tip_above_line(self.state);
        let truncated = !terminated && self.steps >= acrobot::MAX_STEPS;
        self.over = terminated || truncated;
        Ok(StepOutcome {
            obs: acrobot::observe(self.state),
            reward: if terminated { 0.0 } else { -1.0 },
            terminated,
            truncated,
        })
    }
}
