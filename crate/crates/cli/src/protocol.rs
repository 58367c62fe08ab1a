//! JSON messages exchanged with a live-session client.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyView {
    pub x: f64,
    pub y: f64,
    pub angle: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalView {
    pub dir: f64,
    pub speed: f64,
    pub dist: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rewards {
    pub goal: f64,
}

/// Server to client, once per control tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub tick: u64,
    /// Simulated time since the last reset, s.
    pub t: f64,
    pub bodies: Vec<BodyView>,
    pub goal: GoalView,
    pub alpha: f64,
    pub active_adapters: Vec<String>,
    pub blend_alpha: f64,
    pub rewards: Rewards,
    pub paused: bool,
    /// `(x, height)` samples around the character on uneven ground.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground: Option<Vec<[f64; 2]>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Frame(Frame),
    Hello { adapters: Vec<String>, control_hz: f64 },
    Error { code: String, message: String },
}

/// Client to server.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    SetTarget { dir: f64, speed: f64 },
    SetAlpha { value: f64 },
    SelectAdapters {
        names: Vec<String>,
        #[serde(default = "half")]
        blend_alpha: f64,
    },
    Perturb { force: f64, duration: f64 },
    Pause,
    Resume,
    Reset,
}

fn half() -> f64 {
    0.5
}

impl Command {
    /// Commands sharing a slot replace each other while waiting for a tick.
    pub fn slot(&self) -> &'static str {
        match self {
            Command::SetTarget { .. } => "target",
            Command::SetAlpha { .. } => "alpha",
            Command::SelectAdapters { .. } => "adapters",
            Command::Perturb { .. } => "perturb",
            Command::Pause | Command::Resume => "run",
            Command::Reset => "reset",
        }
    }

    /// Range checks that do not depend on session state.
    pub fn check(&self) -> Result<(), String> {
        match self {
            Command::SetTarget { dir, speed } => {
                if *dir != 1.0 && *dir != -1.0 {
                    return Err(format!("dir must be 1 or -1, got {dir}"));
                }
                if !(speed.is_finite() && *speed >= 0.0) {
                    return Err(format!("speed must be non-negative, got {speed}"));
                }
            }
            Command::SetAlpha { value } => {
                if !(0.0..=1.0).contains(value) {
                    return Err(format!("alpha must lie in [0, 1], got {value}"));
                }
            }
            Command::SelectAdapters { blend_alpha, .. } => {
                if !(0.0..=1.0).contains(blend_alpha) {
                    return Err(format!("blend_alpha must lie in [0, 1], got {blend_alpha}"));
                }
            }
            Command::Perturb { force, duration } => {
                if !force.is_finite() || !(duration.is_finite() && *duration > 0.0) {
                    return Err("perturb needs a finite force and a positive duration".into());
                }
            }
            Command::Pause | Command::Resume | Command::Reset => {}
        }
        Ok(())
    }
}

/// Outcome of decoding one inbound text message.
#[derive(Debug, PartialEq)]
pub enum Inbound {
    Command(Command),
    /// Valid JSON that is not a usable command; answered with an error frame.
    Rejected { code: &'static str, message: String },
    /// Not JSON at all; the connection is closed.
    Malformed(String),
}

pub fn decode(text: &str) -> Inbound {
    let v: serde_json::Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => return Inbound::Malformed(e.to_string()),
    };
    let Some(kind) = v.get("type").and_then(|t| t.as_str()) else {
        return Inbound::Rejected {
            code: "missing_type",
            message: "message has no string `type` field".into(),
        };
    };
    const KNOWN: [&str; 7] = ["set_target", "set_alpha", "select_adapters", "perturb", "pause", "resume", "reset"];
    if !KNOWN.contains(&kind) {
        return Inbound::Rejected {
            code: "unknown_type",
            message: format!("unknown message type `{kind}`"),
        };
    }
    match serde_json::from_value::<Command>(v) {
        Ok(c) => match c.check() {
            Ok(()) => Inbound::Command(c),
            Err(m) => Inbound::Rejected {
                code: "bad_value",
                message: m,
            },
        },
        Err(e) => Inbound::Rejected {
            code: "bad_fields",
            message: e.to_string(),
        },
    }
}

pub fn encode(msg: &ServerMessage) -> String {
    serde_json::to_string(msg).expect("server messages serialize")
}
