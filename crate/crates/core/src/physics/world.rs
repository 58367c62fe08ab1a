use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{Morphology, PdGains, PhysicsError, Pose, Terrain, Vec2};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub gravity: f64,
    pub velocity_iterations: usize,
    /// Fraction of positional error fed back per step.
    pub baumgarte: f64,
    /// Allowed contact penetration before correction, m.
    pub slop: f64,
    /// Joint-anchor projection passes after integration.
    pub position_iterations: usize,
    pub warm_start: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            gravity: -9.81,
            velocity_iterations: 8,
            baumgarte: 0.2,
            slop: 5e-4,
            position_iterations: 2,
            warm_start: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Body {
    pub name: String,
    pub inv_mass: f64,
    pub inv_inertia: f64,
    pub pos: Vec2,
    pub angle: f64,
    pub vel: Vec2,
    pub omega: f64,
    /// Contact points in body coordinates, m.
    pub contact_points: Vec<Vec2>,
    force: Vec2,
    torque: f64,
    contact_cache: Vec<(f64, f64)>,
}

impl Body {
    pub fn new(name: impl Into<String>, mass: f64, inertia: f64, pos: Vec2, angle: f64) -> Self {
        Self {
            name: name.into(),
            inv_mass: 1.0 / mass,
            inv_inertia: 1.0 / inertia,
            pos,
            angle,
            vel: Vec2::ZERO,
            omega: 0.0,
            contact_points: vec![],
            force: Vec2::ZERO,
            torque: 0.0,
            contact_cache: vec![],
        }
    }

    pub fn with_contacts(mut self, points: Vec<Vec2>) -> Self {
        self.contact_cache = vec![(0.0, 0.0); points.len()];
        self.contact_points = points;
        self
    }

    pub fn mass(&self) -> f64 {
        1.0 / self.inv_mass
    }

    pub fn world_point(&self, local: Vec2) -> Vec2 {
        self.pos + local.rotate(self.angle)
    }

    pub fn momentum(&self) -> Vec2 {
        self.vel * self.mass()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Motor {
    Off,
    /// Implicit PD servo toward `target` (relative angle).
    Pd { target: f64, gains: PdGains },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    pub name: String,
    pub a: usize,
    pub b: usize,
    pub anchor_a: Vec2,
    pub anchor_b: Vec2,
    pub limits: Option<(f64, f64)>,
    /// Relative angle held rigidly, if welded.
    pub weld: Option<f64>,
    pub motor: Motor,
    impulse: Vec2,
    limit_impulse: f64,
    angular_impulse: f64,
}

impl Joint {
    pub fn revolute(name: impl Into<String>, a: usize, b: usize, anchor_a: Vec2, anchor_b: Vec2) -> Self {
        Self {
            name: name.into(),
            a,
            b,
            anchor_a,
            anchor_b,
            limits: None,
            weld: None,
            motor: Motor::Off,
            impulse: Vec2::ZERO,
            limit_impulse: 0.0,
            angular_impulse: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ground {
    pub friction: f64,
    pub terrain: Option<Terrain>,
}

impl Ground {
    pub fn flat(friction: f64) -> Self {
        Self {
            friction,
            terrain: None,
        }
    }

    pub fn height(&self, x: f64) -> f64 {
        self.terrain.as_ref().map_or(0.0, |t| t.height_at(x))
    }

    /// Upward unit normal at `x`.
    pub fn normal(&self, x: f64) -> Vec2 {
        let s = self.terrain.as_ref().map_or(0.0, |t| t.slope_at(x));
        let n = Vec2::new(-s, 1.0);
        n * (1.0 / n.length())
    }
}

/// Final accumulated impulses of one contact point in one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactReport {
    pub body: usize,
    pub point: usize,
    pub normal_impulse: f64,
    pub tangent_impulse: f64,
    pub friction: f64,
    pub penetration: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyState {
    pub x: f64,
    pub y: f64,
    pub angle: f64,
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

/// Snapshot of all bodies at one instant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub time: f64,
    pub bodies: Vec<BodyState>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Perturbation {
    body: usize,
    force: Vec2,
    steps_left: usize,
}

struct Contact {
    body: usize,
    point: usize,
    r: Vec2,
    normal: Vec2,
    tangent: Vec2,
    sep: f64,
    normal_mass: f64,
    tangent_mass: f64,
    jn: f64,
    jt: f64,
}

#[derive(Clone, Debug)]
pub struct World {
    pub bodies: Vec<Body>,
    pub joints: Vec<Joint>,
    pub ground: Ground,
    pub config: SolverConfig,
    pub time: f64,
    /// Joints driven by `step` torques or `step_pd` targets, in order.
    pub actuated: Vec<usize>,
    perturbation: Option<Perturbation>,
    last_perturbed: bool,
    contacts: Vec<ContactReport>,
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = a % two_pi;
    if r > std::f64::consts::PI {
        r -= two_pi;
    } else if r <= -std::f64::consts::PI {
        r += two_pi;
    }
    r
}

/// Explicit PD torque `kp(q* − q) − kd·q̇`, clamped to each joint's limit.
pub fn pd_torque(q: &[f64], qdot: &[f64], target: &[f64], gains: &[PdGains]) -> Vec<f64> {
    q.iter()
        .zip(qdot)
        .zip(target)
        .zip(gains)
        .map(|(((&q, &qd), &t), g)| {
            (g.kp * (t - q) - g.kd * qd).clamp(-g.torque_limit, g.torque_limit)
        })
        .collect()
}

impl World {
    pub fn new(ground: Ground, config: SolverConfig) -> Self {
        Self {
            bodies: vec![],
            joints: vec![],
            ground,
            config,
            time: 0.0,
            actuated: vec![],
            perturbation: None,
            last_perturbed: false,
            contacts: vec![],
        }
    }

    pub fn add_body(&mut self, body: Body) -> usize {
        self.bodies.push(body);
        self.bodies.len() - 1
    }

    pub fn add_joint(&mut self, joint: Joint) -> usize {
        self.joints.push(joint);
        self.joints.len() - 1
    }

    /// Build an articulated character from link poses (one per link).
    pub fn from_morphology(morph: &Morphology, poses: &[Pose], ground: Ground, config: SolverConfig) -> Self {
        let mut w = World::new(ground, config);
        for (link, pose) in morph.links.iter().zip(poses) {
            let pts = link.contacts.iter().map(|c| *c * link.length).collect();
            w.add_body(
                Body::new(&link.name, link.mass, link.inertia(), pose.position(), pose.angle)
                    .with_contacts(pts),
            );
        }
        for j in 0..morph.joints.len() {
            let js = &morph.joints[j];
            let (pa, ca) = morph.anchors(j);
            let mut joint = Joint::revolute(&js.name, js.parent, js.child, pa, ca);
            if js.locked {
                joint.weld = Some(0.0);
            } else {
                joint.limits = Some(js.limits);
                joint.motor = Motor::Pd {
                    target: 0.0,
                    gains: js.gains,
                };
            }
            w.add_joint(joint);
        }
        w.actuated = morph.actuated();
        w
    }

    /// Relative angle `angle(b) − angle(a)` of every joint, wrapped to (−π, π].
    pub fn joint_angles(&self) -> Vec<f64> {
        self.joints
            .iter()
            .map(|j| wrap_angle(self.bodies[j.b].angle - self.bodies[j.a].angle))
            .collect()
    }

    pub fn joint_velocities(&self) -> Vec<f64> {
        self.joints
            .iter()
            .map(|j| self.bodies[j.b].omega - self.bodies[j.a].omega)
            .collect()
    }

    /// Largest distance between the two world-space anchors of any joint.
    pub fn max_joint_error(&self) -> f64 {
        self.joints
            .iter()
            .map(|j| {
                let pa = self.bodies[j.a].world_point(j.anchor_a);
                let pb = self.bodies[j.b].world_point(j.anchor_b);
                (pb - pa).length()
            })
            .fold(0.0, f64::max)
    }

    pub fn linear_momentum(&self) -> Vec2 {
        self.bodies
            .iter()
            .fold(Vec2::ZERO, |acc, b| acc + b.momentum())
    }

    pub fn state(&self) -> WorldState {
        WorldState {
            time: self.time,
            bodies: self
                .bodies
                .iter()
                .map(|b| BodyState {
                    x: b.pos.x,
                    y: b.pos.y,
                    angle: b.angle,
                    vx: b.vel.x,
                    vy: b.vel.y,
                    omega: b.omega,
                })
                .collect(),
        }
    }

    /// Contact impulses resolved during the most recent step.
    pub fn contacts(&self) -> &[ContactReport] {
        &self.contacts
    }

    /// Apply a constant force to `body` for the next `round(duration / dt)` steps.
    pub fn apply_perturbation(&mut self, body: usize, force: Vec2, duration: f64, dt: f64) {
        let steps = (duration / dt).round().max(0.0) as usize;
        self.perturbation = Some(Perturbation {
            body,
            force,
            steps_left: steps,
        });
    }

    pub fn perturbation_steps_left(&self) -> usize {
        self.perturbation.map_or(0, |p| p.steps_left)
    }

    /// Whether the last step included a perturbation force.
    pub fn last_step_perturbed(&self) -> bool {
        self.last_perturbed
    }

    /// Set PD targets of the actuated joints (action order).
    pub fn set_pd_targets(&mut self, targets: &[f64]) -> Result<(), PhysicsError> {
        if targets.len() != self.actuated.len() {
            return Err(PhysicsError::DimMismatch {
                expected: self.actuated.len(),
                got: targets.len(),
            });
        }
        for (&j, &t) in self.actuated.iter().zip(targets) {
            if let Motor::Pd { target, .. } = &mut self.joints[j].motor {
                *target = t;
            }
        }
        Ok(())
    }

    /// Advance with PD servos tracking `targets` (actuated order).
    pub fn step_pd(&mut self, targets: &[f64], dt: f64) -> Result<(), PhysicsError> {
        self.set_pd_targets(targets)?;
        self.advance(None, true, dt)
    }

    /// Advance one step with explicit joint torques (actuated order). Servos are off.
    pub fn step(&mut self, torques: &[f64], dt: f64) -> Result<(), PhysicsError> {
        if torques.len() != self.actuated.len() {
            return Err(PhysicsError::DimMismatch {
                expected: self.actuated.len(),
                got: torques.len(),
            });
        }
        self.advance(Some(torques), false, dt)
    }

    fn advance(&mut self, torques: Option<&[f64]>, motors: bool, dt: f64) -> Result<(), PhysicsError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(PhysicsError::BadTimestep(dt));
        }
        if let Some(tau) = torques {
            for (&j, &t) in self.actuated.iter().zip(tau) {
                let (a, b) = (self.joints[j].a, self.joints[j].b);
                self.bodies[b].torque += t;
                self.bodies[a].torque -= t;
            }
        }
        self.last_perturbed = false;
        if let Some(p) = &mut self.perturbation {
            if p.steps_left > 0 {
                self.bodies[p.body].force += p.force;
                p.steps_left -= 1;
                self.last_perturbed = true;
            }
            if p.steps_left == 0 {
                self.perturbation = None;
            }
        }

        let g = self.config.gravity;
        for b in &mut self.bodies {
            b.vel += (Vec2::new(0.0, g) + b.force * b.inv_mass) * dt;
            b.omega += b.torque * b.inv_inertia * dt;
            b.force = Vec2::ZERO;
            b.torque = 0.0;
        }

        let mut contacts = self.collect_contacts();
        self.warm_start(&mut contacts, motors);
        for _ in 0..self.config.velocity_iterations {
            for j in 0..self.joints.len() {
                self.solve_angular(j, motors, dt);
                self.solve_point(j, dt);
            }
            for c in &mut contacts {
                Self::solve_contact(&mut self.bodies, &self.ground, &self.config, c, dt);
            }
        }

        for b in &mut self.bodies {
            b.pos += b.vel * dt;
            b.angle += b.omega * dt;
        }
        for _ in 0..self.config.position_iterations {
            for j in 0..self.joints.len() {
                self.project_point(j);
            }
        }
        self.time += dt;

        for b in &mut self.bodies {
            for slot in &mut b.contact_cache {
                *slot = (0.0, 0.0);
            }
        }
        self.contacts.clear();
        let mu = self.ground.friction;
        for c in &contacts {
            self.bodies[c.body].contact_cache[c.point] = (c.jn, c.jt);
            self.contacts.push(ContactReport {
                body: c.body,
                point: c.point,
                normal_impulse: c.jn,
                tangent_impulse: c.jt,
                friction: mu,
                penetration: (-c.sep).max(0.0),
            });
        }
        if !self.config.warm_start {
            for j in &mut self.joints {
                j.impulse = Vec2::ZERO;
                j.limit_impulse = 0.0;
                j.angular_impulse = 0.0;
            }
        }
        for b in &self.bodies {
            if !(b.pos.is_finite() && b.vel.is_finite() && b.angle.is_finite() && b.omega.is_finite()) {
                return Err(PhysicsError::NonFinite {
                    body: b.name.clone(),
                    time: self.time,
                });
            }
        }
        Ok(())
    }

    fn collect_contacts(&self) -> Vec<Contact> {
        let mut out = vec![];
        for (bi, b) in self.bodies.iter().enumerate() {
            for (pi, local) in b.contact_points.iter().enumerate() {
                let r = local.rotate(b.angle);
                let p = b.pos + r;
                let n = self.ground.normal(p.x);
                let sep = (p.y - self.ground.height(p.x)) * n.y;
                // speculative margin so fast feet do not tunnel
                if sep > 0.02 {
                    continue;
                }
                let t = Vec2::new(n.y, -n.x);
                let rn = r.cross(n);
                let rt = r.cross(t);
                let (jn, jt) = if self.config.warm_start {
                    b.contact_cache[pi]
                } else {
                    (0.0, 0.0)
                };
                out.push(Contact {
                    body: bi,
                    point: pi,
                    r,
                    normal: n,
                    tangent: t,
                    sep,
                    normal_mass: 1.0 / (b.inv_mass + b.inv_inertia * rn * rn),
                    tangent_mass: 1.0 / (b.inv_mass + b.inv_inertia * rt * rt),
                    jn,
                    jt,
                });
            }
        }
        out
    }

    fn apply_impulse(b: &mut Body, r: Vec2, p: Vec2) {
        b.vel += p * b.inv_mass;
        b.omega += b.inv_inertia * r.cross(p);
    }

    fn warm_start(&mut self, contacts: &mut [Contact], motors: bool) {
        if !self.config.warm_start {
            return;
        }
        let mu = self.ground.friction;
        for c in contacts.iter_mut() {
            c.jt = c.jt.clamp(-mu * c.jn, mu * c.jn);
            let p = c.normal * c.jn + c.tangent * c.jt;
            Self::apply_impulse(&mut self.bodies[c.body], c.r, p);
        }
        for j in 0..self.joints.len() {
            let jt = &mut self.joints[j];
            if !motors && jt.weld.is_none() {
                jt.angular_impulse = 0.0;
            }
            if jt.limits.is_none() {
                jt.limit_impulse = 0.0;
            }
            let (a, b) = (jt.a, jt.b);
            let ang = jt.angular_impulse + jt.limit_impulse;
            let imp = jt.impulse;
            let ra = jt.anchor_a.rotate(self.bodies[a].angle);
            let rb = jt.anchor_b.rotate(self.bodies[b].angle);
            Self::apply_impulse(&mut self.bodies[a], ra, -imp);
            Self::apply_impulse(&mut self.bodies[b], rb, imp);
            self.bodies[a].omega -= self.bodies[a].inv_inertia * ang;
            self.bodies[b].omega += self.bodies[b].inv_inertia * ang;
        }
    }

    fn apply_angular(&mut self, a: usize, b: usize, l: f64) {
        self.bodies[a].omega -= self.bodies[a].inv_inertia * l;
        self.bodies[b].omega += self.bodies[b].inv_inertia * l;
    }

    fn solve_angular(&mut self, j: usize, motors: bool, dt: f64) {
        let (a, b) = (self.joints[j].a, self.joints[j].b);
        let k = self.bodies[a].inv_inertia + self.bodies[b].inv_inertia;
        if k == 0.0 {
            return;
        }
        let q = wrap_angle(self.bodies[b].angle - self.bodies[a].angle);
        let beta = self.config.baumgarte;
        let jt = self.joints[j].clone();

        if let Some(lock) = jt.weld {
            let qd = self.bodies[b].omega - self.bodies[a].omega;
            let l = -(qd + beta / dt * (q - lock)) / k;
            self.joints[j].angular_impulse += l;
            self.apply_angular(a, b, l);
            return;
        }
        if let (true, Motor::Pd { target, gains }) = (motors, jt.motor) {
            // soft constraint equivalent to an implicit spring-damper
            let qd = self.bodies[b].omega - self.bodies[a].omega;
            let denom = gains.kd + dt * gains.kp;
            if denom > 0.0 {
                let gamma = 1.0 / (dt * denom);
                let bias = gains.kp / denom * (q - target);
                let l = -(qd + bias + gamma * jt.angular_impulse) / (k + gamma);
                let max = gains.torque_limit * dt;
                let old = jt.angular_impulse;
                let acc = (old + l).clamp(-max, max);
                self.joints[j].angular_impulse = acc;
                self.apply_angular(a, b, acc - old);
            }
        }
        if let Some((lo, hi)) = jt.limits {
            let qd = self.bodies[b].omega - self.bodies[a].omega;
            let old = self.joints[j].limit_impulse;
            let acc = if q <= lo {
                let l = -(qd - beta / dt * (lo - q)) / k;
                (old + l).max(0.0)
            } else if q >= hi {
                let l = -(qd - beta / dt * (hi - q)) / k;
                (old + l).min(0.0)
            } else {
                0.0
            };
            self.joints[j].limit_impulse = acc;
            self.apply_angular(a, b, acc - old);
        }
    }

    fn point_mass(ba: &Body, bb: &Body, ra: Vec2, rb: Vec2) -> [f64; 4] {
        let (ma, mb, ia, ib) = (ba.inv_mass, bb.inv_mass, ba.inv_inertia, bb.inv_inertia);
        let k11 = ma + mb + ia * ra.y * ra.y + ib * rb.y * rb.y;
        let k12 = -ia * ra.x * ra.y - ib * rb.x * rb.y;
        let k22 = ma + mb + ia * ra.x * ra.x + ib * rb.x * rb.x;
        [k11, k12, k12, k22]
    }

    fn solve2(k: [f64; 4], r: Vec2) -> Vec2 {
        let det = k[0] * k[3] - k[1] * k[2];
        if det == 0.0 {
            return Vec2::ZERO;
        }
        let inv = 1.0 / det;
        Vec2::new(inv * (k[3] * r.x - k[1] * r.y), inv * (k[0] * r.y - k[2] * r.x))
    }

    fn solve_point(&mut self, j: usize, dt: f64) {
        let (a, b) = (self.joints[j].a, self.joints[j].b);
        let (ba, bb) = (&self.bodies[a], &self.bodies[b]);
        let ra = self.joints[j].anchor_a.rotate(ba.angle);
        let rb = self.joints[j].anchor_b.rotate(bb.angle);
        let err = (bb.pos + rb) - (ba.pos + ra);
        let dv = bb.vel + Vec2::cross_scalar(bb.omega, rb) - ba.vel - Vec2::cross_scalar(ba.omega, ra);
        let k = Self::point_mass(ba, bb, ra, rb);
        let rhs = -(dv + err * (self.config.baumgarte / dt));
        let l = Self::solve2(k, rhs);
        self.joints[j].impulse += l;
        Self::apply_impulse(&mut self.bodies[a], ra, -l);
        Self::apply_impulse(&mut self.bodies[b], rb, l);
    }

    fn project_point(&mut self, j: usize) {
        let (a, b) = (self.joints[j].a, self.joints[j].b);
        let (ba, bb) = (&self.bodies[a], &self.bodies[b]);
        let ra = self.joints[j].anchor_a.rotate(ba.angle);
        let rb = self.joints[j].anchor_b.rotate(bb.angle);
        let err = (bb.pos + rb) - (ba.pos + ra);
        let k = Self::point_mass(ba, bb, ra, rb);
        let l = Self::solve2(k, -err);
        let (ma, ia, mb, ib) = (ba.inv_mass, ba.inv_inertia, bb.inv_mass, bb.inv_inertia);
        let ba = &mut self.bodies[a];
        ba.pos -= l * ma;
        ba.angle -= ia * ra.cross(l);
        let bb = &mut self.bodies[b];
        bb.pos += l * mb;
        bb.angle += ib * rb.cross(l);
    }

    fn solve_contact(bodies: &mut [Body], ground: &Ground, cfg: &SolverConfig, c: &mut Contact, dt: f64) {
        let mu = ground.friction;
        let b = &mut bodies[c.body];
        let v = b.vel + Vec2::cross_scalar(b.omega, c.r);
        let vn = v.dot(c.normal);
        let target = if c.sep > 0.0 {
            -c.sep / dt
        } else {
            cfg.baumgarte / dt * (-(c.sep + cfg.slop)).max(0.0)
        };
        let l = c.normal_mass * (target - vn);
        let old = c.jn;
        c.jn = (old + l).max(0.0);
        Self::apply_impulse(b, c.r, c.normal * (c.jn - old));

        let v = b.vel + Vec2::cross_scalar(b.omega, c.r);
        let vt = v.dot(c.tangent);
        let l = -c.tangent_mass * vt;
        let old = c.jt;
        let max = mu * c.jn;
        c.jt = (old + l).clamp(-max, max);
        Self::apply_impulse(b, c.r, c.tangent * (c.jt - old));
    }
}

/// Write states as CSV: `t,body,x,y,angle,vx,vy,omega`, one row per body per state.
pub fn write_trajectory_csv<W: Write>(
    out: &mut W,
    names: &[String],
    states: &[WorldState],
) -> std::io::Result<()> {
    writeln!(out, "t,body,x,y,angle,vx,vy,omega")?;
    for s in states {
        for (name, b) in names.iter().zip(&s.bodies) {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                s.time, name, b.x, b.y, b.angle, b.vx, b.vy, b.omega
            )?;
        }
    }
    Ok(())
}
