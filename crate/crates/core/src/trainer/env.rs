use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{goal_reward, GoalConfig};
use crate::motion::{disc_window, observe, Frame, GoalState, ReferenceClip, DISC_FRAMES};
use crate::physics::{
    generate_terrain, heightfield_window, BodyState, Ground, Morphology, PhysicsError, Pose, SolverConfig, Terrain,
    TerrainParams, Vec2, World, PHYSICS_HZ, SUBSTEPS,
};

/// Random pushes on the torso.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbConfig {
    /// Force magnitude, N.
    pub force: f64,
    /// Push duration, s.
    pub duration: f64,
    /// Range of waiting times between pushes, s.
    pub interval: (f64, f64),
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            force: 150.0,
            duration: 0.2,
            interval: (1.0, 3.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    pub morphology: Morphology,
    pub friction: f64,
    pub terrain: Option<TerrainParams>,
    pub perturb: Option<PerturbConfig>,
    pub goal: GoalConfig,
    /// Probability of starting an episode from a random clip frame.
    pub reference_init: f64,
    /// Episode time limit, s.
    pub max_time: f64,
    pub solver: SolverConfig,
    /// Supply the heightfield window to the policy.
    pub heightmap: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            morphology: Morphology::biped(),
            friction: 1.0,
            terrain: None,
            perturb: None,
            goal: GoalConfig::default(),
            reference_init: 0.0,
            max_time: 10.0,
            solver: SolverConfig::default(),
            heightmap: false,
        }
    }
}

/// Policy inputs at one control tick.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub obs: Vec<f64>,
    pub goal: Vec<f64>,
    pub terrain: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepInfo {
    pub goal_reward: f64,
    /// Episode ended by a fall (terminal).
    pub fell: bool,
    /// Episode ended by the time limit (not terminal).
    pub timeout: bool,
    /// Physics blew up; the episode was reset.
    pub error: Option<String>,
    /// Link poses after the step.
    pub poses: Vec<Pose>,
    /// Root x before and after the step.
    pub root_x: (f64, f64),
}

impl StepInfo {
    pub fn done(&self) -> bool {
        self.fell || self.timeout || self.error.is_some()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Goal {
    heading: f64,
    target_x: f64,
    speed: f64,
    timer: f64,
}

/// One simulated character with the steering task.
#[derive(Clone, Debug)]
pub struct Env {
    pub config: EnvConfig,
    pub world: World,
    clip: Option<ReferenceClip>,
    rng: ChaCha8Rng,
    history: VecDeque<Frame>,
    goal: Goal,
    pub time: f64,
    nominal_height: f64,
    terrain: Option<Terrain>,
    next_push: f64,
    goal_override: Option<(f64, f64)>,
}

pub const CONTROL_DT: f64 = SUBSTEPS as f64 / PHYSICS_HZ;
/// Torso tilt beyond which the character counts as fallen, rad.
pub const FALL_TILT: f64 = std::f64::consts::FRAC_PI_3;

impl Env {
    /// `clip` seeds reference-state starts when `reference_init > 0`.
    pub fn new(config: EnvConfig, clip: Option<ReferenceClip>, seed: u64) -> Self {
        let nominal_height = config.morphology.nominal_root_height();
        let world = World::new(Ground::flat(config.friction), config.solver);
        let mut env = Self {
            config,
            world,
            clip,
            rng: ChaCha8Rng::seed_from_u64(seed),
            history: VecDeque::new(),
            goal: Goal {
                heading: 1.0,
                target_x: 0.0,
                speed: 1.0,
                timer: 0.0,
            },
            time: 0.0,
            nominal_height,
            terrain: None,
            next_push: f64::INFINITY,
            goal_override: None,
        };
        env.reset();
        env
    }

    pub fn morphology(&self) -> &Morphology {
        &self.config.morphology
    }

    pub fn ground_height(&self, x: f64) -> f64 {
        self.terrain.as_ref().map_or(0.0, |t| t.height_at(x))
    }

    pub fn terrain(&self) -> Option<&Terrain> {
        self.terrain.as_ref()
    }

    /// Pin the goal to a heading and speed (used for interactive steering and
    /// straight-line evaluation). `None` restores random goals.
    pub fn set_goal_override(&mut self, goal: Option<(f64, f64)>) {
        self.goal_override = goal;
        self.resample_goal();
    }

    pub fn reset(&mut self) {
        let cfg = &self.config;
        self.terrain = cfg.terrain.as_ref().map(|p| {
            let seed: u64 = self.rng.random();
            generate_terrain(seed, p)
        });
        let ground = Ground {
            friction: cfg.friction,
            terrain: self.terrain.clone(),
        };
        let base = self.terrain.as_ref().map_or(0.0, |t| t.height_at(0.0));
        let morph = cfg.morphology.clone();
        let use_clip = self.clip.is_some() && self.rng.random::<f64>() < cfg.reference_init;
        let mut world;
        if use_clip {
            let clip = self.clip.as_ref().unwrap();
            let k = self.rng.random_range(0..clip.len()) as i64;
            let states = clip.states_at(k);
            let x0 = states[0].x;
            let poses: Vec<Pose> = states
                .iter()
                .map(|s| Pose {
                    x: s.x - x0,
                    y: s.y + base + 0.005,
                    angle: s.angle,
                })
                .collect();
            world = World::from_morphology(&morph, &poses, ground, cfg.solver);
            for (b, s) in world.bodies.iter_mut().zip(&states) {
                b.vel = Vec2::new(s.vx, s.vy);
                b.omega = s.omega;
            }
        } else {
            let root = Pose {
                x: 0.0,
                y: self.nominal_height + base + 0.005,
                angle: 0.0,
            };
            let poses = morph.forward_kinematics(root, &vec![0.0; morph.joints.len()]);
            world = World::from_morphology(&morph, &poses, ground, cfg.solver);
        }
        self.world = world;
        self.time = 0.0;
        self.history.clear();
        let f = self.frame();
        self.history.push_back(f);
        self.resample_goal();
        self.schedule_push();
    }

    fn schedule_push(&mut self) {
        self.next_push = match &self.config.perturb {
            Some(p) => self.time + self.rng.random_range(p.interval.0..=p.interval.1),
            None => f64::INFINITY,
        };
    }

    fn resample_goal(&mut self) {
        let g = self.config.goal.clone();
        let x = self.world.bodies[0].pos.x;
        let (heading, speed) = match self.goal_override {
            Some(o) => o,
            None => {
                let heading = if self.rng.random::<f64>() < g.backward_prob {
                    -1.0
                } else {
                    1.0
                };
                (heading, self.rng.random_range(g.speed.0..=g.speed.1))
            }
        };
        let timer = self.rng.random_range(g.timer.0..=g.timer.1);
        self.goal = Goal {
            heading,
            target_x: x + heading * speed * timer,
            speed,
            timer,
        };
    }

    fn frame(&self) -> Frame {
        let s = self.world.state();
        let ground = self.ground_height(s.bodies[0].x);
        Frame {
            bodies: s.bodies,
            ground,
        }
    }

    pub fn goal_state(&self) -> GoalState {
        let x = self.world.bodies[0].pos.x;
        let d = self.goal.target_x - x;
        GoalState {
            heading: if d < 0.0 { -1.0 } else { 1.0 },
            distance: d.abs(),
            speed: self.goal.speed,
        }
    }

    pub fn observation(&self) -> Observation {
        let hist: Vec<Frame> = self.history.iter().cloned().collect();
        let terrain = if self.config.heightmap {
            let x = self.world.bodies[0].pos.x;
            let flat;
            let t = match &self.terrain {
                Some(t) => t,
                None => {
                    flat = Terrain::flat(x - 2.0, 6.0, 0.05);
                    &flat
                }
            };
            Some(heightfield_window(t, x, 1.0))
        } else {
            None
        };
        Observation {
            obs: observe(&hist),
            goal: self.goal_state().to_vec(),
            terrain,
        }
    }

    /// Discriminator window over the most recent frames.
    pub fn disc_window(&self) -> Vec<f64> {
        let hist: Vec<Frame> = self.history.iter().cloned().collect();
        disc_window(&hist)
    }

    pub fn body_states(&self) -> Vec<BodyState> {
        self.world.state().bodies
    }

    pub fn poses(&self) -> Vec<Pose> {
        self.world
            .bodies
            .iter()
            .map(|b| Pose {
                x: b.pos.x,
                y: b.pos.y,
                angle: b.angle,
            })
            .collect()
    }

    pub fn fallen(&self) -> bool {
        let r = &self.world.bodies[0];
        let h = r.pos.y - self.ground_height(r.pos.x);
        h < 0.5 * self.nominal_height || r.angle.abs() > FALL_TILT
    }

    /// Push the torso now with a force along ±x.
    pub fn push(&mut self, force: f64, duration: f64) {
        let dt = 1.0 / PHYSICS_HZ;
        self.world
            .apply_perturbation(0, Vec2::new(force, 0.0), duration, dt);
    }

    /// Advance one control tick with PD targets (actuated order). Does not reset.
    pub fn step(&mut self, action: &[f64]) -> StepInfo {
        let x0 = self.world.bodies[0].pos.x;
        if self.time >= self.next_push {
            if let Some(p) = self.config.perturb.clone() {
                let dir = if self.rng.random::<bool>() { 1.0 } else { -1.0 };
                self.push(dir * p.force, p.duration);
            }
            self.schedule_push();
        }
        let dt = 1.0 / PHYSICS_HZ;
        let mut error = None;
        for _ in 0..SUBSTEPS {
            if let Err(e) = self.world.step_pd(action, dt) {
                error = Some(match e {
                    PhysicsError::NonFinite { body, time } => format!("non-finite state in {body} at t={time:.3}"),
                    other => other.to_string(),
                });
                break;
            }
        }
        self.time += CONTROL_DT;
        let x1 = self.world.bodies[0].pos.x;
        let poses = self.poses();
        if error.is_some() {
            return StepInfo {
                goal_reward: 0.0,
                fell: true,
                timeout: false,
                error,
                poses,
                root_x: (x0, x1),
            };
        }
        let f = self.frame();
        self.history.push_back(f);
        while self.history.len() > DISC_FRAMES {
            self.history.pop_front();
        }
        let dist = (self.goal.target_x - x1).abs();
        let r = goal_reward(
            x1 - x0,
            self.goal.heading * self.goal.speed,
            dist,
            self.config.goal.radius,
            CONTROL_DT,
        );
        self.goal.timer -= CONTROL_DT;
        if dist <= self.config.goal.radius || self.goal.timer <= 0.0 {
            self.resample_goal();
        }
        StepInfo {
            goal_reward: r,
            fell: self.fallen(),
            timeout: self.time >= self.config.max_time - 1e-9,
            error: None,
            poses,
            root_x: (x0, x1),
        }
    }
}
