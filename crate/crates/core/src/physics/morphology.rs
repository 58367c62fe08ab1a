use serde::{Deserialize, Serialize};

use super::{PhysicsError, Vec2};

/// Planar pose of one link.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub angle: f64,
}

impl Pose {
    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdGains {
    pub kp: f64,
    pub kd: f64,
    pub torque_limit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub name: String,
    /// Length along the link's long axis, m.
    pub length: f64,
    pub mass: f64,
    /// Thickness as a fraction of `length`; used for the inertia.
    pub thickness: f64,
    /// Foot contact points in link-local coordinates, in units of `length`.
    pub contacts: Vec<Vec2>,
}

impl LinkSpec {
    /// Moment of inertia about the centre of mass (uniform box).
    pub fn inertia(&self) -> f64 {
        let w = self.thickness * self.length;
        self.mass * (self.length * self.length + w * w) / 12.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub name: String,
    pub parent: usize,
    pub child: usize,
    /// Anchor in the parent frame, in units of the parent length.
    pub parent_anchor: Vec2,
    /// Anchor in the child frame, in units of the child length.
    pub child_anchor: Vec2,
    /// Limits on `angle(child) − angle(parent)`, rad.
    pub limits: (f64, f64),
    pub locked: bool,
    pub gains: PdGains,
}

/// Tree-structured planar character. Link 0 is the root; joints are listed
/// parent-before-child.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Morphology {
    pub links: Vec<LinkSpec>,
    pub joints: Vec<JointSpec>,
}

/// One change to a morphology.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MorphEdit {
    /// Multiply a link's length (and, at uniform density, its mass).
    Scale { link: String, factor: f64 },
    /// Fuse the two links at a joint and drop it from the actuated set.
    Lock { joint: String },
}

const HIP: PdGains = PdGains {
    kp: 500.0,
    kd: 50.0,
    torque_limit: 200.0,
};
const KNEE: PdGains = PdGains {
    kp: 500.0,
    kd: 50.0,
    torque_limit: 200.0,
};
const ANKLE: PdGains = PdGains {
    kp: 300.0,
    kd: 30.0,
    torque_limit: 120.0,
};

fn rod(name: &str, length: f64, mass: f64, thickness: f64) -> LinkSpec {
    LinkSpec {
        name: name.into(),
        length,
        mass,
        thickness,
        contacts: vec![],
    }
}

impl Morphology {
    /// Seven-link biped (torso, thighs, shins, feet) with six actuated joints
    /// ordered hips, knees, ankles (left before right). About 30 kg.
    pub fn biped() -> Self {
        let foot_h = 0.06 / 0.22;
        let foot = |name: &str| LinkSpec {
            name: name.into(),
            length: 0.22,
            mass: 1.0,
            thickness: foot_h,
            contacts: vec![
                Vec2::new(-0.5, -0.5 * foot_h),
                Vec2::new(0.5, -0.5 * foot_h),
            ],
        };
        let links = vec![
            rod("torso", 0.6, 14.0, 0.4),
            rod("thigh_l", 0.45, 4.5, 0.25),
            rod("thigh_r", 0.45, 4.5, 0.25),
            rod("shin_l", 0.45, 2.5, 0.2),
            rod("shin_r", 0.45, 2.5, 0.2),
            foot("foot_l"),
            foot("foot_r"),
        ];
        let top = Vec2::new(0.0, 0.5);
        let bottom = Vec2::new(0.0, -0.5);
        let ankle_site = Vec2::new(-0.25, 0.5 * foot_h);
        let j = |name: &str, p: usize, c: usize, pa: Vec2, ca: Vec2, lim: (f64, f64), gains| {
            JointSpec {
                name: name.into(),
                parent: p,
                child: c,
                parent_anchor: pa,
                child_anchor: ca,
                limits: lim,
                locked: false,
                gains,
            }
        };
        let joints = vec![
            j("hip_l", 0, 1, bottom, top, (-1.2, 2.0), HIP),
            j("hip_r", 0, 2, bottom, top, (-1.2, 2.0), HIP),
            j("knee_l", 1, 3, bottom, top, (-2.4, 0.1), KNEE),
            j("knee_r", 2, 4, bottom, top, (-2.4, 0.1), KNEE),
            j("ankle_l", 3, 5, bottom, ankle_site, (-0.9, 0.9), ANKLE),
            j("ankle_r", 4, 6, bottom, ankle_site, (-0.9, 0.9), ANKLE),
        ];
        Self { links, joints }
    }

    pub fn link_index(&self, name: &str) -> Result<usize, PhysicsError> {
        self.links
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| PhysicsError::UnknownName(name.to_string()))
    }

    pub fn joint_index(&self, name: &str) -> Result<usize, PhysicsError> {
        self.joints
            .iter()
            .position(|j| j.name == name)
            .ok_or_else(|| PhysicsError::UnknownName(name.to_string()))
    }

    /// Joint indices that receive actions, in action order.
    pub fn actuated(&self) -> Vec<usize> {
        (0..self.joints.len())
            .filter(|&i| !self.joints[i].locked)
            .collect()
    }

    pub fn num_actuated(&self) -> usize {
        self.joints.iter().filter(|j| !j.locked).count()
    }

    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum()
    }

    /// Anchor positions of joint `j` in the parent and child frames, in metres.
    pub fn anchors(&self, j: usize) -> (Vec2, Vec2) {
        let js = &self.joints[j];
        (
            js.parent_anchor * self.links[js.parent].length,
            js.child_anchor * self.links[js.child].length,
        )
    }

    /// Link poses from the root pose and one relative angle per joint.
    pub fn forward_kinematics(&self, root: Pose, angles: &[f64]) -> Vec<Pose> {
        let mut poses = vec![Pose::default(); self.links.len()];
        poses[0] = root;
        for (j, js) in self.joints.iter().enumerate() {
            let p = poses[js.parent];
            let angle = p.angle + angles[j];
            let (pa, ca) = self.anchors(j);
            let anchor = p.position() + pa.rotate(p.angle);
            let pos = anchor - ca.rotate(angle);
            poses[js.child] = Pose {
                x: pos.x,
                y: pos.y,
                angle,
            };
        }
        poses
    }

    /// Lowest foot-contact height for a set of link poses.
    pub fn lowest_contact(&self, poses: &[Pose]) -> f64 {
        let mut low = f64::INFINITY;
        for (l, link) in self.links.iter().enumerate() {
            for c in &link.contacts {
                let p = poses[l].position() + (*c * link.length).rotate(poses[l].angle);
                low = low.min(p.y);
            }
        }
        low
    }

    /// Root height when standing straight with the feet on the ground at y = 0.
    pub fn nominal_root_height(&self) -> f64 {
        let zeros = vec![0.0; self.joints.len()];
        let poses = self.forward_kinematics(Pose::default(), &zeros);
        -self.lowest_contact(&poses)
    }

    /// Full joint-angle vector from actuated-order values (locked joints at 0).
    pub fn expand_actuated(&self, values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.joints.len()];
        for (k, &j) in self.actuated().iter().enumerate() {
            out[j] = values[k];
        }
        out
    }
}

/// Apply edits to a copy of `base`.
pub fn apply_morphology(base: &Morphology, edits: &[MorphEdit]) -> Result<Morphology, PhysicsError> {
    let mut m = base.clone();
    for e in edits {
        match e {
            MorphEdit::Scale { link, factor } => {
                if !(*factor > 0.0 && factor.is_finite()) {
                    return Err(PhysicsError::InvalidEdit(format!(
                        "scale factor {factor} for {link}"
                    )));
                }
                let i = m.link_index(link)?;
                m.links[i].length *= factor;
                m.links[i].mass *= factor;
            }
            MorphEdit::Lock { joint } => {
                let i = m.joint_index(joint)?;
                m.joints[i].locked = true;
            }
        }
    }
    Ok(m)
}

/// Named edit sets.
pub fn morphology_preset(name: &str) -> Option<Vec<MorphEdit>> {
    let scale = |links: &[&str], f: f64| -> Vec<MorphEdit> {
        links
            .iter()
            .map(|l| MorphEdit::Scale {
                link: l.to_string(),
                factor: f,
            })
            .collect()
    };
    let lock = |joints: &[&str]| -> Vec<MorphEdit> {
        joints
            .iter()
            .map(|j| MorphEdit::Lock {
                joint: j.to_string(),
            })
            .collect()
    };
    Some(match name {
        "long_shins" => scale(&["shin_l", "shin_r"], 1.5),
        "long_thighs" => scale(&["thigh_l", "thigh_r"], 1.5),
        "super_long_legs" => scale(&["thigh_l", "thigh_r", "shin_l", "shin_r"], 1.5),
        "long_body" => scale(&["torso"], 1.5),
        "big_feet" => scale(&["foot_l", "foot_r"], 1.5),
        "locked_knees" => lock(&["knee_l", "knee_r"]),
        "locked_ankles" => lock(&["ankle_l", "ankle_r"]),
        "locked_right_knee" => lock(&["knee_r"]),
        _ => return None,
    })
}
