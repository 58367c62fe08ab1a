//! Live session: a simulation loop at the control rate plus WebSocket clients.
//!
//! The simulation thread owns every piece of mutable state. Clients talk to it
//! through two latest-wins cells: a [`Mailbox`] with one slot per command kind,
//! and an [`Outbox`] holding only the newest frame. A slow client therefore
//! misses frames but never delays a tick.

use std::collections::BTreeMap;
use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use adaptnet::adapt::{AdaptedPolicy, Blend};
use adaptnet::neural::{PolicyNet, Tensor};
use adaptnet::trainer::{Actor, Env, EnvConfig, CONTROL_DT};
use tungstenite::protocol::frame::coding::CloseCode;
use tungstenite::protocol::CloseFrame;
use tungstenite::{Message, WebSocket};

use crate::protocol::{decode, encode, BodyView, Command, Frame, GoalView, Inbound, Rewards, ServerMessage};

/// Heading and speed used until a client steers.
const DEFAULT_TARGET: (f64, f64) = (1.0, 1.25);

pub struct Session {
    env: Env,
    base: PolicyNet,
    adapters: Vec<(String, AdaptedPolicy)>,
    blend: Option<Blend>,
    active: Vec<String>,
    alpha: f64,
    blend_alpha: f64,
    paused: bool,
    tick: u64,
    last_goal_reward: f64,
    /// Commands applied so far, by mailbox slot.
    pub applied: BTreeMap<&'static str, u64>,
}

impl Session {
    /// The first adapter, if any, starts active at weight `alpha`.
    pub fn new(
        base: PolicyNet,
        adapters: Vec<(String, AdaptedPolicy)>,
        env: &EnvConfig,
        alpha: f64,
        seed: u64,
    ) -> Result<Self, String> {
        let mut cfg = env.clone();
        cfg.heightmap = adapters.iter().any(|(_, a)| a.uses_terrain());
        let mut e = Env::new(cfg, None, seed);
        e.set_goal_override(Some(DEFAULT_TARGET));
        let mut s = Self {
            env: e,
            base,
            adapters,
            blend: None,
            active: vec![],
            alpha,
            blend_alpha: 0.5,
            paused: false,
            tick: 0,
            last_goal_reward: 0.0,
            applied: BTreeMap::new(),
        };
        if let Some(first) = s.adapters.first().map(|a| a.0.clone()) {
            s.select(vec![first], 0.5)?;
        }
        Ok(s)
    }

    pub fn adapter_names(&self) -> Vec<String> {
        self.adapters.iter().map(|a| a.0.clone()).collect()
    }

    fn weights(&self) -> Vec<f64> {
        match self.active.len() {
            0 => vec![],
            1 => vec![self.alpha],
            2 => vec![self.alpha * self.blend_alpha, self.alpha * (1.0 - self.blend_alpha)],
            n => vec![self.alpha / n as f64; n],
        }
    }

    fn select(&mut self, names: Vec<String>, blend_alpha: f64) -> Result<(), String> {
        let mut sets = vec![];
        for n in &names {
            let a = self
                .adapters
                .iter()
                .find(|a| &a.0 == n)
                .ok_or_else(|| format!("no adapter named `{n}`"))?;
            sets.push(&a.1);
        }
        self.active = names;
        self.blend_alpha = blend_alpha;
        let w = self.weights();
        self.blend = if sets.is_empty() {
            None
        } else {
            let pairs: Vec<(&AdaptedPolicy, f64)> = sets.into_iter().zip(w).collect();
            Some(Blend::new(&pairs).map_err(|e| e.to_string())?)
        };
        Ok(())
    }

    /// Apply one command now. Errors leave the session unchanged.
    pub fn apply(&mut self, c: Command) -> Result<(), String> {
        c.check()?;
        let slot = c.slot();
        match c {
            Command::SetTarget { dir, speed } => self.env.set_goal_override(Some((dir, speed))),
            Command::SetAlpha { value } => {
                self.alpha = value;
                let w = self.weights();
                if let Some(b) = &mut self.blend {
                    b.set_weights(&w).map_err(|e| e.to_string())?;
                }
            }
            Command::SelectAdapters { names, blend_alpha } => self.select(names, blend_alpha)?,
            Command::Perturb { force, duration } => self.env.push(force, duration),
            Command::Pause => self.paused = true,
            Command::Resume => self.paused = false,
            Command::Reset => {
                self.env.reset();
                self.last_goal_reward = 0.0;
            }
        }
        *self.applied.entry(slot).or_default() += 1;
        Ok(())
    }

    fn action(&self) -> Result<Vec<f64>, String> {
        let o = self.env.observation();
        let obs = Tensor::row(o.obs);
        let goal = Tensor::row(o.goal);
        let terrain = o.terrain.map(Tensor::row);
        let r = match &self.blend {
            Some(b) => b.infer(&obs, &goal, terrain.as_ref()),
            None => self.base.infer(&obs, &goal, None),
        };
        r.map(|(mean, _, _)| mean.row_slice(0).to_vec()).map_err(|e| e.to_string())
    }

    /// Advance one control tick (unless paused) and describe the result.
    pub fn step(&mut self) -> Result<Frame, String> {
        if !self.paused {
            let a = self.action()?;
            let info = self.env.step(&a);
            self.last_goal_reward = info.goal_reward;
            if info.done() {
                self.env.reset();
            }
        }
        self.tick += 1;
        Ok(self.frame())
    }

    pub fn frame(&self) -> Frame {
        let g = self.env.goal_state();
        let ground = self.env.terrain().map(|_| {
            let x0 = self.env.world.bodies[0].pos.x;
            (0..33)
                .map(|i| {
                    let x = x0 - 2.0 + 0.125 * i as f64;
                    [x, self.env.ground_height(x)]
                })
                .collect()
        });
        Frame {
            tick: self.tick,
            t: self.env.time,
            bodies: self
                .env
                .poses()
                .iter()
                .map(|p| BodyView {
                    x: p.x,
                    y: p.y,
                    angle: p.angle,
                })
                .collect(),
            goal: GoalView {
                dir: g.heading,
                speed: g.speed,
                dist: g.distance,
            },
            alpha: self.alpha,
            active_adapters: self.active.clone(),
            blend_alpha: self.blend_alpha,
            rewards: Rewards {
                goal: self.last_goal_reward,
            },
            paused: self.paused,
            ground,
        }
    }
}

/// Latest-wins command slots.
#[derive(Default)]
pub struct Mailbox {
    slots: Mutex<BTreeMap<&'static str, Command>>,
}

impl Mailbox {
    pub fn post(&self, c: Command) {
        self.slots.lock().unwrap().insert(c.slot(), c);
    }

    /// Everything pending, resets first.
    pub fn take(&self) -> Vec<Command> {
        let mut m = std::mem::take(&mut *self.slots.lock().unwrap());
        let mut out: Vec<Command> = m.remove("reset").into_iter().collect();
        out.extend(m.into_values());
        out
    }
}

/// Newest encoded frame and its sequence number.
#[derive(Default)]
pub struct Outbox {
    cell: Mutex<(u64, Arc<String>)>,
}

impl Outbox {
    pub fn publish(&self, text: String) {
        let mut c = self.cell.lock().unwrap();
        c.0 += 1;
        c.1 = Arc::new(text);
    }

    pub fn latest(&self) -> (u64, Arc<String>) {
        let c = self.cell.lock().unwrap();
        (c.0, c.1.clone())
    }
}

pub struct ServerHandle {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    ticks: Arc<AtomicU64>,
    sim: JoinHandle<Result<Session, String>>,
    listener: JoinHandle<()>,
}

impl ServerHandle {
    pub fn ticks(&self) -> u64 {
        self.ticks.load(Ordering::SeqCst)
    }

    pub fn is_finished(&self) -> bool {
        self.sim.is_finished()
    }

    /// Stop both loops and hand back the final session.
    pub fn shutdown(self) -> Result<Session, String> {
        self.stop.store(true, Ordering::SeqCst);
        let s = self.sim.join().map_err(|_| "simulation thread panicked".to_string())?;
        let _ = self.listener.join();
        s
    }

    /// Wait for the simulation to end on its own (`max_ticks`).
    pub fn wait(self) -> Result<Session, String> {
        let s = self.sim.join().map_err(|_| "simulation thread panicked".to_string())?;
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.listener.join();
        s
    }
}

pub struct ServeOptions {
    pub bind: String,
    pub max_ticks: Option<u64>,
    pub realtime: bool,
}

/// Start the simulation and listener threads.
pub fn spawn(mut session: Session, opts: ServeOptions) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(&opts.bind)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let ticks = Arc::new(AtomicU64::new(0));
    let mailbox = Arc::new(Mailbox::default());
    let outbox = Arc::new(Outbox::default());
    outbox.publish(encode(&ServerMessage::Frame(session.frame())));
    let names = session.adapter_names();

    let sim = {
        let (stop, ticks, mailbox, outbox) = (stop.clone(), ticks.clone(), mailbox.clone(), outbox.clone());
        thread::spawn(move || {
            let period = Duration::from_secs_f64(CONTROL_DT);
            let mut next = Instant::now();
            while !stop.load(Ordering::SeqCst) && opts.max_ticks.is_none_or(|m| ticks.load(Ordering::SeqCst) < m) {
                for c in mailbox.take() {
                    if let Err(e) = session.apply(c) {
                        log::warn!("command rejected: {e}");
                    }
                }
                let frame = session.step()?;
                outbox.publish(encode(&ServerMessage::Frame(frame)));
                ticks.fetch_add(1, Ordering::SeqCst);
                if opts.realtime {
                    next += period;
                    let now = Instant::now();
                    if next > now {
                        thread::sleep(next - now);
                    } else {
                        next = now;
                    }
                }
            }
            Ok(session)
        })
    };

    let listener = {
        let stop = stop.clone();
        thread::spawn(move || {
            let mut clients = vec![];
            while !stop.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, peer)) => {
                        let (stop, mailbox, outbox, names) = (stop.clone(), mailbox.clone(), outbox.clone(), names.clone());
                        clients.push(thread::spawn(move || {
                            if let Err(e) = client(stream, &stop, &mailbox, &outbox, &names) {
                                log::info!("client {peer}: {e}");
                            }
                        }));
                    }
                    Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
                    Err(e) => log::warn!("accept: {e}"),
                }
            }
            for c in clients {
                let _ = c.join();
            }
        })
    };

    Ok(ServerHandle {
        addr,
        stop,
        ticks,
        sim,
        listener,
    })
}

fn send(ws: &mut WebSocket<TcpStream>, msg: &ServerMessage) -> tungstenite::Result<()> {
    ws.send(Message::text(encode(msg)))
}

fn close(ws: &mut WebSocket<TcpStream>, code: CloseCode, reason: String) {
    let _ = ws.close(Some(CloseFrame {
        code,
        reason: reason.into(),
    }));
}

fn would_block(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut))
}

fn client(
    stream: TcpStream,
    stop: &AtomicBool,
    mailbox: &Mailbox,
    outbox: &Outbox,
    names: &[String],
) -> Result<(), String> {
    stream.set_nonblocking(false).map_err(|e| e.to_string())?;
    let mut ws = tungstenite::accept(stream).map_err(|e| e.to_string())?;
    ws.get_ref()
        .set_read_timeout(Some(Duration::from_millis(5)))
        .map_err(|e| e.to_string())?;
    send(
        &mut ws,
        &ServerMessage::Hello {
            adapters: names.to_vec(),
            control_hz: 1.0 / CONTROL_DT,
        },
    )
    .map_err(|e| e.to_string())?;
    let mut seen = 0;
    let mut closing = false;
    let mut closed_at = None;
    loop {
        if stop.load(Ordering::SeqCst) && !closing {
            close(&mut ws, CloseCode::Away, "server shutting down".into());
            closing = true;
        }
        // give the peer a moment to answer the close handshake
        if closing {
            let t = *closed_at.get_or_insert_with(Instant::now);
            if t.elapsed() > Duration::from_secs(1) {
                return Ok(());
            }
        }
        match ws.read() {
            Ok(Message::Text(t)) if !closing => match decode(t.as_str()) {
                Inbound::Command(c) => {
                    if let Command::SelectAdapters { names: want, .. } = &c {
                        if let Some(bad) = want.iter().find(|n| !names.contains(n)) {
                            let msg = ServerMessage::Error {
                                code: "unknown_adapter".into(),
                                message: format!("no adapter named `{bad}`"),
                            };
                            send(&mut ws, &msg).map_err(|e| e.to_string())?;
                            continue;
                        }
                    }
                    mailbox.post(c);
                }
                Inbound::Rejected { code, message } => {
                    let msg = ServerMessage::Error {
                        code: code.into(),
                        message,
                    };
                    send(&mut ws, &msg).map_err(|e| e.to_string())?;
                }
                Inbound::Malformed(m) => {
                    close(&mut ws, CloseCode::Invalid, format!("malformed JSON: {m}"));
                    closing = true;
                }
            },
            Ok(Message::Binary(_)) if !closing => {
                close(&mut ws, CloseCode::Unsupported, "binary messages are not part of the protocol".into());
                closing = true;
            }
            Ok(_) => {}
            Err(e) if would_block(&e) => {}
            Err(tungstenite::Error::ConnectionClosed) | Err(tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(e.to_string()),
        }
        if closing {
            continue;
        }
        let (seq, text) = outbox.latest();
        if seq != seen {
            seen = seq;
            match ws.send(Message::text(text.as_str())) {
                Ok(()) => {}
                Err(e) if would_block(&e) => {}
                Err(e) => return Err(e.to_string()),
            }
        }
    }
}
