//! Reinforcement-learning environment served over a line-delimited JSON
//! channel.
//!
//! Requests, one JSON object per line:
//!
//! ```text
//! {"cmd":"reset","seed":7}
//! {"cmd":"step","action":[0.05]}
//! {"cmd":"close"}
//! ```
//!
//! Replies, one per request:
//!
//! ```text
//! {"obs":[11 floats],"info":{...}}
//! {"obs":[...],"reward":r,"done":b,"truncated":b,"info":{"t":..,"fhom_integral":..,"qfi":..,"step":..}}
//! {"closed":true}
//! {"error":{"code":"...","msg":"..."}}
//! ```
//!
//! The vectorized server carries one entry per environment in every field
//! (`obs` becomes a list of observations, `reward` a list, and so on) and
//! resets finished environments automatically; the last observation of the
//! finished episode is returned as `info[i].terminal_obs`.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{reset, InitSampler, InitialCondition, TrajectoryState};
use crate::error::{Error, Result};
use crate::gaussian::SystemParams;
use crate::linalg::Vec2;
use crate::policy::OBS_LAYOUT_VERSION;
use crate::rng::StreamKey;

pub const PROTOCOL_VERSION: u32 = 1;

/// Episode length used for training: 10⁵ steps.
pub const DEFAULT_EPISODE_STEPS: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeConfig {
    pub params: SystemParams,
    pub horizon_steps: u64,
    /// Draw `r ~ U[−3,3]²`, `n_th ~ U[0,5]` at every reset.
    pub randomize_init: bool,
    pub fixed_init: InitialCondition,
    pub obs_layout_version: u32,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            params: SystemParams::default(),
            horizon_steps: DEFAULT_EPISODE_STEPS,
            randomize_init: true,
            fixed_init: InitialCondition::default(),
            obs_layout_version: OBS_LAYOUT_VERSION,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EpisodeFile {
    params: Option<SystemParams>,
    horizon_steps: Option<u64>,
    randomize_init: Option<bool>,
    r0: Option<[f64; 2]>,
    n_th: Option<f64>,
    obs_layout_version: Option<u32>,
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.horizon_steps < 1 {
            return Err(Error::Config("horizon_steps must be >= 1".into()));
        }
        if self.obs_layout_version != OBS_LAYOUT_VERSION {
            return Err(Error::Config(format!(
                "observation layout version {} is not supported (this build provides {})",
                self.obs_layout_version, OBS_LAYOUT_VERSION
            )));
        }
        if !(self.fixed_init.n_th >= 0.0) || !self.fixed_init.r0.is_finite() {
            return Err(Error::Config(format!("invalid fixed initial condition {:?}", self.fixed_init)));
        }
        Ok(())
    }

    /// Parses the TOML form:
    ///
    /// ```toml
    /// horizon_steps = 2000
    /// randomize_init = false
    /// r0 = [0.0, 0.0]
    /// n_th = 5.0
    ///
    /// [params]
    /// omega = 0.1
    /// chi = 0.49
    /// eta = 0.9
    /// dt = 0.01
    /// ```
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: EpisodeFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut config = EpisodeConfig::default();
        if let Some(p) = file.params {
            config.params = p;
        }
        if let Some(h) = file.horizon_steps {
            config.horizon_steps = h;
        }
        if let Some(r) = file.randomize_init {
            config.randomize_init = r;
        }
        if let Some([q, p]) = file.r0 {
            config.fixed_init.r0 = Vec2::new(q, p);
        }
        if let Some(n) = file.n_th {
            config.fixed_init.n_th = n;
        }
        if let Some(v) = file.obs_layout_version {
            config.obs_layout_version = v;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn initial_condition(&self, key: StreamKey) -> InitialCondition {
        if self.randomize_init {
            InitSampler::training().sample(key)
        } else {
            self.fixed_init
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "cmd", rename_all = "lowercase", deny_unknown_fields)]
pub enum Request {
    Reset { seed: u64 },
    Step { action: Vec<f64> },
    Close,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub msg: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReply {
    pub error: ErrorBody,
}

fn protocol_error(code: &str, msg: impl Into<String>) -> ErrorReply {
    ErrorReply { error: ErrorBody { code: code.into(), msg: msg.into() } }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub t: f64,
    pub fhom_integral: f64,
    pub qfi: f64,
    pub step: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_obs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResetInfo {
    pub protocol_version: u32,
    pub obs_layout_version: u32,
    pub r0: [f64; 2],
    pub n_th: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResetReply {
    pub obs: Vec<f64>,
    pub info: ResetInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReply {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub truncated: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VecResetReply {
    pub obs: Vec<Vec<f64>>,
    pub info: Vec<ResetInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VecStepReply {
    pub obs: Vec<Vec<f64>>,
    pub reward: Vec<f64>,
    pub done: Vec<bool>,
    pub truncated: Vec<bool>,
    pub info: Vec<StepInfo>,
}

/// A single environment: one trajectory at a time, single-threaded.
#[derive(Debug, Clone)]
pub struct Env {
    config: EpisodeConfig,
    traj: Option<TrajectoryState>,
}

impl Env {
    pub fn new(config: EpisodeConfig) -> Result<Self> {
        config.validate()?;
        Ok(Env { config, traj: None })
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn trajectory(&self) -> Option<&TrajectoryState> {
        self.traj.as_ref()
    }

    pub fn reset(&mut self, seed: u64) -> std::result::Result<ResetReply, ErrorReply> {
        let key = StreamKey::single(seed);
        let init = self.config.initial_condition(key);
        let traj = reset(&self.config.params, &init, key).map_err(|e| protocol_error("invalid_config", e.to_string()))?;
        let obs = traj.observation().0.to_vec();
        self.traj = Some(traj);
        Ok(ResetReply {
            obs,
            info: ResetInfo {
                protocol_version: PROTOCOL_VERSION,
                obs_layout_version: self.config.obs_layout_version,
                r0: [init.r0.q, init.r0.p],
                n_th: init.n_th,
            },
        })
    }

    pub fn step(&mut self, action: f64) -> std::result::Result<StepReply, ErrorReply> {
        if !action.is_finite() {
            return Err(protocol_error("invalid_action", format!("action must be finite, got {action}")));
        }
        let traj = self.traj.as_mut().ok_or_else(|| protocol_error("not_reset", "step before reset"))?;
        if traj.step_index >= self.config.horizon_steps {
            return Err(protocol_error("episode_done", "episode finished; send reset"));
        }
        let result = match traj.step(&self.config.params, action) {
            Ok(r) => r,
            Err(e) => {
                self.traj = None;
                return Err(protocol_error("unphysical_state", e.to_string()));
            }
        };
        let done = traj.step_index >= self.config.horizon_steps;
        Ok(StepReply {
            obs: traj.observation().0.to_vec(),
            reward: result.reward_increment,
            done,
            truncated: done,
            info: StepInfo {
                t: traj.t,
                fhom_integral: traj.fhom_integral,
                qfi: traj.qfi,
                step: traj.step_index,
                terminal_obs: None,
            },
        })
    }
}

/// `n_envs` environments stepped in lockstep with automatic reset.
///
/// Environment `i` starts from `seed + i`; its `j`-th automatic reset uses
/// `seed + i + j·n_envs`, so the seeds of all episodes are distinct. An
/// error reply to a batched step leaves the batch partially advanced; the
/// trainer has to send `reset`.
#[derive(Debug, Clone)]
pub struct VecEnv {
    envs: Vec<Env>,
    base_seed: Option<u64>,
    episodes: Vec<u64>,
}

impl VecEnv {
    pub fn new(config: EpisodeConfig, n_envs: usize) -> Result<Self> {
        if n_envs < 1 {
            return Err(Error::Config("n_envs must be >= 1".into()));
        }
        let env = Env::new(config)?;
        Ok(VecEnv { envs: vec![env; n_envs], base_seed: None, episodes: vec![0; n_envs] })
    }

    pub fn n_envs(&self) -> usize {
        self.envs.len()
    }

    fn episode_seed(&self, base: u64, i: usize) -> u64 {
        let n = self.envs.len() as u64;
        base.wrapping_add(i as u64).wrapping_add(self.episodes[i].wrapping_mul(n))
    }

    pub fn reset(&mut self, seed: u64) -> std::result::Result<VecResetReply, ErrorReply> {
        self.base_seed = Some(seed);
        self.episodes.iter_mut().for_each(|e| *e = 0);
        let mut reply = VecResetReply { obs: Vec::new(), info: Vec::new() };
        for i in 0..self.envs.len() {
            let r = self.envs[i].reset(seed.wrapping_add(i as u64))?;
            reply.obs.push(r.obs);
            reply.info.push(r.info);
        }
        Ok(reply)
    }

    pub fn step(&mut self, actions: &[f64]) -> std::result::Result<VecStepReply, ErrorReply> {
        let base = self.base_seed.ok_or_else(|| protocol_error("not_reset", "step before reset"))?;
        if actions.len() != self.envs.len() {
            return Err(protocol_error(
                "batch_size",
                format!("expected {} actions, got {}", self.envs.len(), actions.len()),
            ));
        }
        if let Some(a) = actions.iter().find(|a| !a.is_finite()) {
            return Err(protocol_error("invalid_action", format!("action must be finite, got {a}")));
        }
        let mut reply = VecStepReply {
            obs: Vec::with_capacity(actions.len()),
            reward: Vec::with_capacity(actions.len()),
            done: Vec::with_capacity(actions.len()),
            truncated: Vec::with_capacity(actions.len()),
            info: Vec::with_capacity(actions.len()),
        };
        for (i, &action) in actions.iter().enumerate() {
            let mut r = self.envs[i]
                .step(action)
                .map_err(|e| protocol_error(&e.error.code, format!("env {i}: {}", e.error.msg)))?;
            if r.done {
                self.episodes[i] += 1;
                let seed = self.episode_seed(base, i);
                let next = self.envs[i].reset(seed)?;
                r.info.terminal_obs = Some(std::mem::replace(&mut r.obs, next.obs));
            }
            reply.obs.push(r.obs);
            reply.reward.push(r.reward);
            reply.done.push(r.done);
            reply.truncated.push(r.truncated);
            reply.info.push(r.info);
        }
        Ok(reply)
    }
}

/// Something that answers protocol requests.
pub trait Session {
    /// Returns the reply line (without newline) and whether to stop.
    fn handle_line(&mut self, line: &str) -> (String, bool);
}

fn parse_request(line: &str) -> std::result::Result<Request, ErrorReply> {
    serde_json::from_str(line).map_err(|e| protocol_error("bad_request", e.to_string()))
}

fn encode<T: Serialize>(reply: std::result::Result<T, ErrorReply>) -> String {
    let encoded = match &reply {
        Ok(r) => serde_json::to_string(r),
        Err(e) => serde_json::to_string(e),
    };
    encoded.unwrap_or_else(|e| format!(r#"{{"error":{{"code":"internal","msg":"{e}"}}}}"#))
}

const CLOSED: &str = r#"{"closed":true}"#;

impl Session for Env {
    fn handle_line(&mut self, line: &str) -> (String, bool) {
        match parse_request(line) {
            Err(e) => (encode::<()>(Err(e)), false),
            Ok(Request::Close) => (CLOSED.into(), true),
            Ok(Request::Reset { seed }) => (encode(self.reset(seed)), false),
            Ok(Request::Step { action }) => {
                if action.len() != 1 {
                    let e = protocol_error("batch_size", format!("expected 1 action, got {}", action.len()));
                    return (encode::<()>(Err(e)), false);
                }
                (encode(self.step(action[0])), false)
            }
        }
    }
}

impl Session for VecEnv {
    fn handle_line(&mut self, line: &str) -> (String, bool) {
        match parse_request(line) {
            Err(e) => (encode::<()>(Err(e)), false),
            Ok(Request::Close) => (CLOSED.into(), true),
            Ok(Request::Reset { seed }) => (encode(self.reset(seed)), false),
            Ok(Request::Step { action }) => (encode(self.step(&action)), false),
        }
    }
}

/// Runs a session until `close` or end of input. Blank lines are ignored.
pub fn run_session<S: Session, R: BufRead, W: Write>(session: &mut S, reader: R, mut writer: W) -> Result<()> {
    let io_err = |e| Error::io(Path::new("<channel>"), e);
    for line in reader.lines() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let (reply, stop) = session.handle_line(&line);
        writeln!(writer, "{reply}").map_err(io_err)?;
        writer.flush().map_err(io_err)?;
        if stop {
            break;
        }
    }
    Ok(())
}

pub fn serve<R: BufRead, W: Write>(reader: R, writer: W, config: EpisodeConfig) -> Result<()> {
    run_session(&mut Env::new(config)?, reader, writer)
}

pub fn serve_vectorized<R: BufRead, W: Write>(reader: R, writer: W, config: EpisodeConfig, n_envs: usize) -> Result<()> {
    run_session(&mut VecEnv::new(config, n_envs)?, reader, writer)
}

/// Serves one scalar (`n_envs == None`) or vectorized session per TCP
/// connection, each on its own thread. Runs until the listener fails.
pub fn serve_socket(listener: TcpListener, config: EpisodeConfig, n_envs: Option<usize>) -> Result<()> {
    config.validate()?;
    for stream in listener.incoming() {
        let stream = stream.map_err(|e| Error::io(Path::new("<socket>"), e))?;
        std::thread::spawn(move || {
            if let Err(e) = serve_connection(stream, config, n_envs) {
                eprintln!("session ended with error: {e}");
            }
        });
    }
    Ok(())
}

fn serve_connection(stream: TcpStream, config: EpisodeConfig, n_envs: Option<usize>) -> Result<()> {
    let reader = BufReader::new(stream.try_clone().map_err(|e| Error::io(Path::new("<socket>"), e))?);
    match n_envs {
        None => serve(reader, stream, config),
        Some(n) => serve_vectorized(reader, stream, config, n),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short_config() -> EpisodeConfig {
        EpisodeConfig { horizon_steps: 5, randomize_init: false, ..EpisodeConfig::default() }
    }

    #[test]
    fn step_before_reset_is_a_protocol_error() {
        let mut env = Env::new(short_config()).unwrap();
        let (reply, stop) = env.handle_line(r#"{"cmd":"step","action":[0.0]}"#);
        assert!(!stop);
        assert!(reply.contains(r#""code":"not_reset""#), "{reply}");
    }

    #[test]
    fn malformed_lines_do_not_end_the_session() {
        let mut env = Env::new(short_config()).unwrap();
        for bad in ["{", r#"{"cmd":"jump"}"#, r#"{"cmd":"reset"}"#, r#"{"cmd":"reset","seed":-1}"#] {
            let (reply, stop) = env.handle_line(bad);
            assert!(!stop);
            assert!(reply.contains(r#""code":"bad_request""#), "{reply}");
        }
        let (reply, _) = env.handle_line(r#"{"cmd":"reset","seed":1}"#);
        assert!(reply.starts_with(r#"{"obs":["#), "{reply}");
        assert_eq!(env.handle_line(r#"{"cmd":"close"}"#), (CLOSED.to_string(), true));
    }

    #[test]
    fn done_at_horizon_then_reset_required() {
        let mut env = Env::new(short_config()).unwrap();
        env.reset(3).unwrap();
        for k in 1..=5 {
            let r = env.step(0.0).unwrap();
            assert_eq!(r.info.step, k);
            assert_eq!(r.done, k == 5);
            assert_eq!(r.truncated, k == 5);
        }
        assert_eq!(env.step(0.0).unwrap_err().error.code, "episode_done");
    }

    #[test]
    fn config_file_round_trip() {
        let text = "horizon_steps = 2000\nrandomize_init = false\nr0 = [1.0, -2.0]\nn_th = 0.5\n\n[params]\nomega = 0.2\nchi = 0.3\neta = 0.5\ndt = 0.01\n";
        let c = EpisodeConfig::from_toml(text).unwrap();
        assert_eq!(c.horizon_steps, 2000);
        assert!(!c.randomize_init);
        assert_eq!(c.fixed_init.r0, Vec2::new(1.0, -2.0));
        assert_eq!(c.params.kappa, 1.0);
        assert_eq!(c.params.dt, 0.01);
        assert!(EpisodeConfig::from_toml("horizon_steps = 0").is_err());
        assert!(EpisodeConfig::from_toml("obs_layout_version = 2").is_err());
        assert!(EpisodeConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn vectorized_batch_mismatch_rejected() {
        let mut v = VecEnv::new(short_config(), 3).unwrap();
        v.reset(0).unwrap();
        assert_eq!(v.step(&[0.0, 0.0]).unwrap_err().error.code, "batch_size");
    }
}
