//! A small planar simulator for the soccer domain: a point robot with capped
//! acceleration chases a ball that rolls with linear friction.
//!
//! Kicks are terminal. A kick succeeds when the ball is within reach and the
//! impact speed is below a cap, and the kicked ball (leaving at
//! `kick_gain` times the impact speed) rolls at least `shot_length` before
//! friction stops it. Controllers plan with `model_friction`, which
//! perturbations leave untouched.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use thiserror::Error;

use crate::dimensions::TypeEnv;
use crate::dsl::{Policy, Value};
use crate::interp::{eval_policy, WorldState};
use crate::synth::Demonstration;

type V2 = [f64; 2];

fn add(a: V2, b: V2) -> V2 {
    [a[0] + b[0], a[1] + b[1]]
}

fn sub(a: V2, b: V2) -> V2 {
    [a[0] - b[0], a[1] - b[1]]
}

fn scale(a: V2, k: f64) -> V2 {
    [a[0] * k, a[1] * k]
}

fn len(a: V2) -> f64 {
    a[0].hypot(a[1])
}

fn clamp_len(a: V2, max: f64) -> V2 {
    let l = len(a);
    if l > max {
        scale(a, max / l)
    } else {
        a
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    /// Seconds per step.
    pub timestep: f64,
    pub episode_steps: usize,
    pub robot_accel: f64,
    pub robot_speed: f64,
    /// Ball deceleration per unit speed, 1/s.
    pub friction: f64,
    /// Friction the controllers assume when predicting the ball.
    pub model_friction: f64,
    /// Approach speed per metre of distance to the standoff point, 1/s.
    pub approach_gain: f64,
    pub standoff: f64,
    /// Ball speed at which an interception is planned.
    pub catch_speed: f64,
    pub kick_reach: f64,
    pub kick_max_impact: f64,
    pub kick_gain: f64,
    pub shot_length: f64,
    pub robot_start: V2,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            timestep: 0.05,
            episode_steps: 300,
            robot_accel: 2.0,
            robot_speed: 1.0,
            friction: 0.5,
            model_friction: 0.5,
            approach_gain: 2.0,
            standoff: 0.05,
            catch_speed: 0.12,
            kick_reach: 0.15,
            kick_max_impact: 0.3,
            kick_gain: 8.0,
            shot_length: 1.3,
            robot_start: [0.0, 1.5],
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum SimError {
    #[error("perturbation factor `{name}` must be positive, got {value}")]
    BadFactor { name: String, value: f64 },
    #[error("unknown perturbation `{0}`; expected friction or accel")]
    UnknownFactor(String),
    #[error("invalid simulator config: {0}")]
    Config(String),
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("timestep", self.timestep),
            ("robot_accel", self.robot_accel),
            ("robot_speed", self.robot_speed),
            ("kick_reach", self.kick_reach),
            ("kick_max_impact", self.kick_max_impact),
            ("kick_gain", self.kick_gain),
            ("shot_length", self.shot_length),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::Config(format!("{name} must be positive")));
            }
        }
        if self.friction < 0.0 || self.friction * self.timestep >= 1.0 {
            return Err(SimError::Config(
                "friction must lie in [0, 1/timestep)".into(),
            ));
        }
        Ok(())
    }

    /// Smallest impact speed whose shot still covers `shot_length`.
    pub fn min_impact(&self) -> f64 {
        self.shot_length * self.friction / self.kick_gain
    }
}

/// Multiplicative changes to the physics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Perturbation {
    pub friction: f64,
    pub accel: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Perturbation {
            friction: 1.0,
            accel: 1.0,
        }
    }
}

impl Perturbation {
    /// Parses `friction=1.5` / `accel=0.8` pairs.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = &'a str>) -> Result<Self, SimError> {
        let mut p = Perturbation::default();
        for pair in pairs {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| SimError::UnknownFactor(pair.to_string()))?;
            let value: f64 = v.trim().parse().map_err(|_| SimError::BadFactor {
                name: k.to_string(),
                value: f64::NAN,
            })?;
            match k.trim() {
                "friction" => p.friction = value,
                "accel" => p.accel = value,
                other => return Err(SimError::UnknownFactor(other.to_string())),
            }
        }
        Ok(p)
    }
}

/// Scales the true friction and the robot's acceleration cap.
pub fn perturb(cfg: &SimConfig, factors: Perturbation) -> Result<SimConfig, SimError> {
    for (name, value) in [("friction", factors.friction), ("accel", factors.accel)] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(SimError::BadFactor {
                name: name.into(),
                value,
            });
        }
    }
    let out = SimConfig {
        friction: cfg.friction * factors.friction,
        robot_accel: cfg.robot_accel * factors.accel,
        ..cfg.clone()
    };
    out.validate()?;
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Kin {
    p_r: V2,
    v_r: V2,
    p_b: V2,
    v_b: V2,
}

impl Kin {
    fn from_world(w: &WorldState) -> Kin {
        let get = |n: &str| match w.bindings.get(n) {
            Some(Value::Vector(v)) => *v,
            _ => [0.0, 0.0],
        };
        Kin {
            p_r: get("p_r"),
            v_r: get("v_r"),
            p_b: get("p_b"),
            v_b: get("v_b"),
        }
    }

    fn world(&self, start_action: &str) -> WorldState {
        WorldState::new(start_action)
            .with("p_r", Value::Vector(self.p_r))
            .with("v_r", Value::Vector(self.v_r))
            .with("p_b", Value::Vector(self.p_b))
            .with("v_b", Value::Vector(self.v_b))
    }

    fn distance(&self) -> f64 {
        len(sub(self.p_b, self.p_r))
    }

    fn impact(&self) -> f64 {
        len(sub(self.v_r, self.v_b))
    }
}

/// Where a kick attempted in `k` would succeed.
fn kick_succeeds(cfg: &SimConfig, k: &Kin) -> bool {
    let impact = k.impact();
    k.distance() < cfg.kick_reach && impact < cfg.kick_max_impact && impact >= cfg.min_impact()
}

/// Point on the ball's path where it is predicted to slow to `catch_speed`.
fn intercept_point(cfg: &SimConfig, k: &Kin) -> V2 {
    let speed = len(k.v_b);
    if speed <= cfg.catch_speed {
        return k.p_b;
    }
    let r = 1.0 - cfg.model_friction * cfg.timestep;
    if r >= 1.0 {
        return add(k.p_b, scale(k.v_b, 2.0));
    }
    let steps = (cfg.catch_speed / speed).ln() / r.ln();
    add(
        k.p_b,
        scale(k.v_b, cfg.timestep * (1.0 - r.powf(steps)) / (1.0 - r)),
    )
}

fn desired_velocity(cfg: &SimConfig, action: &str, k: &Kin) -> V2 {
    match action {
        "Inter" => {
            let e = sub(intercept_point(cfg, k), k.p_r);
            let d = len(e);
            if d < 1e-9 {
                return [0.0, 0.0];
            }
            scale(e, cfg.robot_speed.min((cfg.robot_accel * d).sqrt()) / d)
        }
        _ => {
            let e = sub(k.p_b, k.p_r);
            let d = len(e);
            if d < 1e-9 {
                return k.v_b;
            }
            let approach = cfg
                .robot_speed
                .min(cfg.approach_gain * (d - cfg.standoff).max(0.0));
            add(k.v_b, scale(e, approach / d))
        }
    }
}

fn advance(cfg: &SimConfig, k: &mut Kin, action: &str) {
    let u = desired_velocity(cfg, action, k);
    let dv = clamp_len(sub(u, k.v_r), cfg.robot_accel * cfg.timestep);
    k.v_r = clamp_len(add(k.v_r, dv), cfg.robot_speed);
    k.p_r = add(k.p_r, scale(k.v_r, cfg.timestep));
    k.p_b = add(k.p_b, scale(k.v_b, cfg.timestep));
    k.v_b = scale(k.v_b, (1.0 - cfg.friction * cfg.timestep).max(0.0));
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Failure,
    Timeout,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::Failure => "failure",
            Outcome::Timeout => "timeout",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    /// Observation, with the previous action as its start action.
    pub world: WorldState,
    pub action: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub initial: WorldState,
    pub steps: Vec<Step>,
    pub outcome: Outcome,
}

impl Episode {
    /// One JSON line per step followed by the outcome.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            let w: serde_json::Map<String, serde_json::Value> = s
                .world
                .bindings
                .iter()
                .map(|(k, v)| (k.clone(), value_json(v)))
                .collect();
            out.push_str(
                &json!({"start": s.world.start_action, "action": s.action, "world": w}).to_string(),
            );
            out.push('\n');
        }
        out.push_str(&json!({ "outcome": self.outcome.name() }).to_string());
        out.push('\n');
        out
    }
}

fn value_json(v: &Value) -> serde_json::Value {
    match v {
        Value::Scalar(x) => json!(x),
        Value::Vector([x, y]) => json!([x, y]),
    }
}

/// Runs `p` in closed loop from `init`. A policy that fails to evaluate ends
/// the episode as a failure.
pub fn run_episode(p: &Policy, env: &TypeEnv, cfg: &SimConfig, init: &WorldState) -> Episode {
    let mut k = Kin::from_world(init);
    let mut prev = init.start_action.clone();
    let mut steps = Vec::new();
    for _ in 0..cfg.episode_steps {
        let world = k.world(&prev);
        let action = match eval_policy(p, &world, env) {
            Ok(a) => a.to_string(),
            Err(_) => {
                return Episode {
                    initial: init.clone(),
                    steps,
                    outcome: Outcome::Failure,
                }
            }
        };
        steps.push(Step {
            world,
            action: action.clone(),
        });
        if action == "Kick" {
            let outcome = if kick_succeeds(cfg, &k) {
                Outcome::Success
            } else {
                Outcome::Failure
            };
            return Episode {
                initial: init.clone(),
                steps,
                outcome,
            };
        }
        advance(cfg, &mut k, &action);
        prev = action;
    }
    Episode {
        initial: init.clone(),
        steps,
        outcome: Outcome::Timeout,
    }
}

/// Ball start cells: positions on a regular grid, velocities drawn from a
/// seeded generator.
#[derive(Clone, Debug, PartialEq)]
pub struct StartGrid {
    pub nx: usize,
    pub ny: usize,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub max_ball_speed: f64,
}

impl Default for StartGrid {
    fn default() -> Self {
        StartGrid {
            nx: 20,
            ny: 15,
            x_range: (0.5, 3.5),
            y_range: (0.0, 3.0),
            max_ball_speed: 1.0,
        }
    }
}

fn lerp((lo, hi): (f64, f64), i: usize, n: usize) -> f64 {
    if n <= 1 {
        lo
    } else {
        lo + (hi - lo) * i as f64 / (n - 1) as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub i: usize,
    pub j: usize,
    pub start: WorldState,
}

impl StartGrid {
    /// Cells in row-major order over x, then y.
    pub fn cells(&self, cfg: &SimConfig) -> Vec<Cell> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut out = Vec::with_capacity(self.nx * self.ny);
        for i in 0..self.nx {
            for j in 0..self.ny {
                let speed = rng.gen_range(0.0..self.max_ball_speed);
                let angle = rng.gen_range(0.0..std::f64::consts::TAU);
                let k = Kin {
                    p_r: cfg.robot_start,
                    v_r: [0.0, 0.0],
                    p_b: [
                        lerp(self.x_range, i, self.nx),
                        lerp(self.y_range, j, self.ny),
                    ],
                    v_b: [speed * angle.cos(), speed * angle.sin()],
                };
                out.push(Cell {
                    i,
                    j,
                    start: k.world("Goto"),
                });
            }
        }
        out
    }
}

#[cfg(feature = "parallel")]
fn run_all(p: &Policy, env: &TypeEnv, cfg: &SimConfig, starts: &[WorldState]) -> Vec<Episode> {
    use rayon::prelude::*;
    starts
        .par_iter()
        .map(|s| run_episode(p, env, cfg, s))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn run_all(p: &Policy, env: &TypeEnv, cfg: &SimConfig, starts: &[WorldState]) -> Vec<Episode> {
    starts.iter().map(|s| run_episode(p, env, cfg, s)).collect()
}

/// One demonstration per `stride` steps of every episode.
pub fn record_demos(
    p: &Policy,
    env: &TypeEnv,
    cfg: &SimConfig,
    starts: &[WorldState],
    stride: usize,
) -> Vec<Demonstration> {
    let stride = stride.max(1);
    run_all(p, env, cfg, starts)
        .into_iter()
        .flat_map(|e| {
            e.steps.into_iter().step_by(stride).map(|s| Demonstration {
                world: s.world,
                next_action: s.action,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub i: usize,
    pub j: usize,
    pub ball: V2,
    pub ball_speed: f64,
    pub outcome: Outcome,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreReport {
    pub rate: f64,
    pub cells: Vec<CellResult>,
}

impl ScoreReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,j,ball_x,ball_y,ball_speed,outcome,steps,success\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                c.i,
                c.j,
                c.ball[0],
                c.ball[1],
                c.ball_speed,
                c.outcome,
                c.steps,
                u8::from(c.outcome == Outcome::Success)
            ));
        }
        out
    }
}

/// Fraction of grid cells whose episode ends in a successful kick.
pub fn score(p: &Policy, env: &TypeEnv, cfg: &SimConfig, grid: &StartGrid) -> ScoreReport {
    let cells = grid.cells(cfg);
    let starts: Vec<WorldState> = cells.iter().map(|c| c.start.clone()).collect();
    let episodes = run_all(p, env, cfg, &starts);
    let results: Vec<CellResult> = cells
        .iter()
        .zip(&episodes)
        .map(|(c, e)| {
            let k = Kin::from_world(&c.start);
            CellResult {
                i: c.i,
                j: c.j,
                ball: k.p_b,
                ball_speed: len(k.v_b),
                outcome: e.outcome,
                steps: e.steps.len(),
            }
        })
        .collect();
    let wins = results
        .iter()
        .filter(|c| c.outcome == Outcome::Success)
        .count();
    let rate = if results.is_empty() {
        0.0
    } else {
        wins as f64 / results.len() as f64
    };
    ScoreReport {
        rate,
        cells: results,
    }
}

/// Corrections a spectator would give after watching failed chases: the
/// first moment a kick would have worked, labeled Kick, and the observation
/// just before it where kicking would have been too hard, labeled with the
/// action the robot kept running. At most `max` demonstrations, in grid order.
pub fn suggest_corrections(
    p: &Policy,
    env: &TypeEnv,
    cfg: &SimConfig,
    grid: &StartGrid,
    max: usize,
) -> Vec<Demonstration> {
    let starts: Vec<WorldState> = grid.cells(cfg).into_iter().map(|c| c.start).collect();
    let mut out = Vec::new();
    for e in run_all(p, env, cfg, &starts) {
        if out.len() + 2 > max {
            break;
        }
        if e.outcome != Outcome::Failure {
            continue;
        }
        let kin: Vec<Kin> = e.steps.iter().map(|s| Kin::from_world(&s.world)).collect();
        let Some(good) = e.steps.iter().zip(&kin).position(|(s, k)| {
            s.world.start_action != "Kick" && s.action != "Kick" && kick_succeeds(cfg, k)
        }) else {
            continue;
        };
        let mode = &e.steps[good].world.start_action;
        let too_hard = (0..good).rev().find(|&i| {
            let k = &kin[i];
            e.steps[i].world.start_action == *mode
                && e.steps[i].action == *mode
                && k.distance() < cfg.kick_reach
                && k.impact() >= cfg.kick_max_impact
        });
        let Some(too_hard) = too_hard else { continue };
        out.push(Demonstration {
            world: e.steps[good].world.clone(),
            next_action: "Kick".into(),
        });
        out.push(Demonstration {
            world: e.steps[too_hard].world.clone(),
            next_action: mode.clone(),
        });
    }
    out
}
