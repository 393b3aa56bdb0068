//! Feedback policies: no control, open-loop rotation cancelling, and a
//! feed-forward neural actor loaded from a weight file.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::TrajectoryState;
use crate::error::{Error, Result};
use crate::gaussian::SystemParams;
use crate::rng::{standard_normal, Stream};

/// Version of the 11-entry observation layout.
pub const OBS_LAYOUT_VERSION: u32 = 1;
pub const OBS_DIM: usize = 11;

/// Everything the controller sees before choosing `ω_fb`:
/// `(r_q, r_p, σ_qq, σ_qp, σ_pp, ∂r_q, ∂r_p, ∂σ_qq, ∂σ_qp, ∂σ_pp, dy)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn from_trajectory(traj: &TrajectoryState) -> Self {
        let (s, g) = (&traj.state, &traj.tangent);
        Observation([
            s.r.q,
            s.r.p,
            s.sigma.qq,
            s.sigma.qp,
            s.sigma.pp,
            g.dr.q,
            g.dr.p,
            g.dsigma.qq,
            g.dsigma.qp,
            g.dsigma.pp,
            traj.last_dy,
        ])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub trait Policy: Send + Sync {
    /// Chooses the feedback frequency for the next step. `rng` is the
    /// per-trajectory action stream; deterministic policies ignore it.
    fn act(&self, obs: &Observation, params: &SystemParams, rng: &mut Stream) -> Result<f64>;

    fn label(&self) -> String;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoControl;

impl Policy for NoControl {
    fn act(&self, _obs: &Observation, _params: &SystemParams, _rng: &mut Stream) -> Result<f64> {
        Ok(0.0)
    }

    fn label(&self) -> String {
        "none".into()
    }
}

/// Cancels the free rotation with `ω_fb = −ω`, independent of the record.
#[derive(Debug, Clone, Copy, Default)]
pub struct OpenLoop;

impl Policy for OpenLoop {
    fn act(&self, _obs: &Observation, params: &SystemParams, _rng: &mut Stream) -> Result<f64> {
        Ok(-params.omega)
    }

    fn label(&self) -> String {
        "open_loop".into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// One affine layer; `weight` is row-major with shape `(outputs, inputs)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Affine observation normalisation applied before the first layer:
/// `x ↦ (x − offset) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsNormalization {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

pub const WEIGHTS_FORMAT: &str = "feedback-metrology-actor";
pub const WEIGHTS_VERSION: u32 = 1;

/// Actor mean network. Hidden layers use `activation`, the output layer is
/// linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralWeights {
    pub format: String,
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub layers: Vec<Layer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obs_norm: Option<ObsNormalization>,
}

impl NeuralWeights {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation, layers: Vec<Layer>) -> Result<Self> {
        let weights = NeuralWeights {
            format: WEIGHTS_FORMAT.into(),
            version: WEIGHTS_VERSION,
            layer_sizes,
            activation,
            layers,
            log_std: None,
            obs_norm: None,
        };
        weights.validate()?;
        Ok(weights)
    }

    /// All-zero network with the standard `[11, 64, 64, 1]` shape.
    pub fn zeros() -> Self {
        let sizes = vec![OBS_DIM, 64, 64, 1];
        let layers = sizes
            .windows(2)
            .map(|w| Layer { weight: vec![0.0; w[0] * w[1]], bias: vec![0.0; w[1]] })
            .collect();
        NeuralWeights::new(sizes, Activation::Tanh, layers).expect("consistent shapes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |location: String, msg: String| Err(Error::WeightFormat { location, msg });
        if self.format != WEIGHTS_FORMAT {
            return fail("format".into(), format!("expected {WEIGHTS_FORMAT:?}, got {:?}", self.format));
        }
        if self.version != WEIGHTS_VERSION {
            return fail("version".into(), format!("unsupported version {}", self.version));
        }
        let sizes = &self.layer_sizes;
        if sizes.len() < 2 {
            return fail("layer_sizes".into(), "need at least input and output sizes".into());
        }
        if sizes[0] != OBS_DIM {
            return fail("layer_sizes[0]".into(), format!("input size {} != {OBS_DIM}", sizes[0]));
        }
        if *sizes.last().unwrap() != 1 {
            return fail("layer_sizes".into(), "output size must be 1".into());
        }
        if self.layers.len() != sizes.len() - 1 {
            let missing = self.layers.len();
            return fail(
                format!("layers[{missing}]"),
                format!("expected {} layers, found {}", sizes.len() - 1, self.layers.len()),
            );
        }
        for (i, (layer, w)) in self.layers.iter().zip(sizes.windows(2)).enumerate() {
            if layer.weight.len() != w[0] * w[1] {
                return fail(
                    format!("layers[{i}].weight"),
                    format!("expected {}x{} = {} entries, found {}", w[1], w[0], w[0] * w[1], layer.weight.len()),
                );
            }
            if layer.bias.len() != w[1] {
                return fail(
                    format!("layers[{i}].bias"),
                    format!("expected {} entries, found {}", w[1], layer.bias.len()),
                );
            }
            if let Some(j) = layer.weight.iter().position(|x| !x.is_finite()) {
                return fail(format!("layers[{i}].weight[{j}]"), "non-finite entry".into());
            }
            if let Some(j) = layer.bias.iter().position(|x| !x.is_finite()) {
                return fail(format!("layers[{i}].bias[{j}]"), "non-finite entry".into());
            }
        }
        if let Some(ls) = self.log_std {
            if !ls.is_finite() {
                return fail("log_std".into(), "non-finite entry".into());
            }
        }
        if let Some(norm) = &self.obs_norm {
            if norm.offset.len() != OBS_DIM || norm.scale.len() != OBS_DIM {
                return fail("obs_norm".into(), format!("offset and scale need {OBS_DIM} entries"));
            }
            if norm.offset.iter().chain(&norm.scale).any(|x| !x.is_finite())
                || norm.scale.contains(&0.0)
            {
                return fail("obs_norm".into(), "entries must be finite with non-zero scale".into());
            }
        }
        Ok(())
    }

    /// Mean action of the Gaussian policy.
    pub fn forward(&self, obs: &Observation) -> Result<f64> {
        let mut x: Vec<f64> = obs.0.to_vec();
        if let Some(norm) = &self.obs_norm {
            for (v, (o, s)) in x.iter_mut().zip(norm.offset.iter().zip(&norm.scale)) {
                *v = (*v - o) / s;
            }
        }
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let n_in = x.len();
            let mut y = layer.bias.clone();
            for (out, row) in y.iter_mut().zip(layer.weight.chunks_exact(n_in)) {
                *out += row.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>();
            }
            if i != last {
                y.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            x = y;
        }
        let mean = x[0];
        if !mean.is_finite() {
            return Err(Error::Policy(format!("network output is not finite: {mean}")));
        }
        Ok(mean)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("weights serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let weights: NeuralWeights = serde_json::from_str(text).map_err(|e| Error::WeightFormat {
            location: format!("line {} column {}", e.line(), e.column()),
            msg: e.to_string(),
        })?;
        weights.validate()?;
        Ok(weights)
    }

    /// Plain-text manifest: a header of `key value...` lines followed by one
    /// `tensor <name> <rows> <cols>` line per tensor and its values, one per
    /// line, in row-major order. Values use the shortest representation that
    /// round-trips exactly.
    pub fn to_manifest(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.format, self.version);
        let sizes: Vec<String> = self.layer_sizes.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(out, "layer_sizes {}", sizes.join(" "));
        let _ = writeln!(out, "activation {}", self.activation.name());
        if let Some(ls) = self.log_std {
            let _ = writeln!(out, "log_std {ls:?}");
        }
        let mut tensor = |name: String, rows: usize, cols: usize, values: &[f64]| {
            let _ = writeln!(out, "tensor {name} {rows} {cols}");
            for v in values {
                let _ = writeln!(out, "{v:?}");
            }
        };
        if let Some(norm) = &self.obs_norm {
            tensor("obs_norm.offset".into(), 1, OBS_DIM, &norm.offset);
            tensor("obs_norm.scale".into(), 1, OBS_DIM, &norm.scale);
        }
        for (i, (layer, w)) in self.layers.iter().zip(self.layer_sizes.windows(2)).enumerate() {
            tensor(format!("layers.{i}.weight"), w[1], w[0], &layer.weight);
            tensor(format!("layers.{i}.bias"), 1, w[1], &layer.bias);
        }
        out.push_str("end\n");
        out
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        ManifestParser::new(text).parse()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = match path.extension().and_then(|e| e.to_str()) {
            Some("txt") | Some("manifest") => self.to_manifest(),
            _ => self.to_json(),
        };
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Reads a weight file, detecting JSON or the plain-text manifest from its
/// first non-blank character.
pub fn load_weights(path: &Path) -> Result<NeuralWeights> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let with_path = |err: Error| match err {
        Error::WeightFormat { location, msg } => Error::WeightFormat {
            location: format!("{}: {location}", path.display()),
            msg,
        },
        other => other,
    };
    if text.trim_start().starts_with('{') {
        NeuralWeights::from_json(&text).map_err(with_path)
    } else {
        NeuralWeights::from_manifest(&text).map_err(with_path)
    }
}

struct ManifestParser<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> ManifestParser<'a> {
    fn new(text: &'a str) -> Self {
        ManifestParser { lines: text.lines().enumerate().peekable() }
    }

    fn err<T>(location: impl Into<String>, msg: impl Into<String>) -> Result<T> {
        Err(Error::WeightFormat { location: location.into(), msg: msg.into() })
    }

    fn next_line(&mut self) -> Option<(usize, &'a str)> {
        for (i, line) in self.lines.by_ref() {
            let line = line.trim();
            if !line.is_empty() && !line.starts_with('#') {
                return Some((i + 1, line));
            }
        }
        None
    }

    fn tensor(&mut self, name: &str, rows: usize, cols: usize) -> Result<Vec<f64>> {
        let (lineno, header) = match self.next_line() {
            Some(l) => l,
            None => return Self::err(name, "missing tensor (unexpected end of file)"),
        };
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.first() != Some(&"tensor") || fields.get(1) != Some(&name) {
            return Self::err(format!("line {lineno}"), format!("expected tensor {name}, found {header:?}"));
        }
        let shape: Vec<usize> = fields[2..].iter().filter_map(|s| s.parse().ok()).collect();
        if shape != [rows, cols] {
            return Self::err(format!("line {lineno}"), format!("tensor {name} has shape {shape:?}, expected [{rows}, {cols}]"));
        }
        let mut values = Vec::with_capacity(rows * cols);
        for k in 0..rows * cols {
            let (lineno, line) = match self.next_line() {
                Some(l) => l,
                None => return Self::err(name, format!("truncated after {k} of {} values", rows * cols)),
            };
            let v: f64 = line
                .parse()
                .or_else(|_| Self::err(format!("line {lineno}"), format!("bad number {line:?} in {name}")))?;
            if !v.is_finite() {
                return Self::err(format!("line {lineno}"), format!("non-finite value in {name}"));
            }
            values.push(v);
        }
        Ok(values)
    }

    fn parse(mut self) -> Result<NeuralWeights> {
        let (_, magic) = self.next_line().ok_or(Error::WeightFormat {
            location: "line 1".into(),
            msg: "empty file".into(),
        })?;
        let mut head = magic.split_whitespace();
        let format = head.next().unwrap_or_default().to_string();
        let version: u32 = head
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or(Error::WeightFormat { location: "line 1".into(), msg: "missing version".into() })?;
        if format != WEIGHTS_FORMAT {
            return Self::err("line 1", format!("unknown format {format:?}"));
        }
        let mut layer_sizes = None;
        let mut activation = Activation::Tanh;
        let mut log_std = None;
        while let Some((_, line)) = self.lines.peek().copied() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                self.lines.next();
                continue;
            }
            if line.starts_with("tensor") {
                break;
            }
            let (lineno, line) = self.next_line().expect("peeked");
            let mut fields = line.split_whitespace();
            match fields.next() {
                Some("layer_sizes") => {
                    let sizes: std::result::Result<Vec<usize>, _> = fields.map(str::parse).collect();
                    layer_sizes = Some(sizes.or_else(|_| Self::err(format!("line {lineno}"), "bad layer_sizes"))?);
                }
                Some("activation") => {
                    let name = fields.next().unwrap_or_default();
                    activation = Activation::parse(name)
                        .ok_or(Error::WeightFormat { location: format!("line {lineno}"), msg: format!("unknown activation {name:?}") })?;
                }
                Some("log_std") => {
                    log_std = fields.next().and_then(|v| v.parse().ok());
                    if log_std.is_none() {
                        return Self::err(format!("line {lineno}"), "bad log_std");
                    }
                }
                _ => return Self::err(format!("line {lineno}"), format!("unexpected line {line:?}")),
            }
        }
        let layer_sizes: Vec<usize> = match layer_sizes {
            Some(s) if s.len() >= 2 => s,
            _ => return Self::err("header", "missing layer_sizes"),
        };
        let has_norm = matches!(self.lines.peek(), Some((_, l)) if l.contains("obs_norm.offset"));
        let obs_norm = if has_norm {
            Some(ObsNormalization {
                offset: self.tensor("obs_norm.offset", 1, OBS_DIM)?,
                scale: self.tensor("obs_norm.scale", 1, OBS_DIM)?,
            })
        } else {
            None
        };
        let mut layers = Vec::new();
        for (i, w) in layer_sizes.windows(2).enumerate() {
            let weight = self.tensor(&format!("layers.{i}.weight"), w[1], w[0])?;
            let bias = self.tensor(&format!("layers.{i}.bias"), 1, w[1])?;
            layers.push(Layer { weight, bias });
        }
        match self.next_line() {
            Some((_, "end")) => {}
            Some((lineno, line)) => return Self::err(format!("line {lineno}"), format!("expected end, found {line:?}")),
            None => return Self::err("end", "missing end marker (truncated file)"),
        }
        let weights = NeuralWeights {
            format,
            version,
            layer_sizes,
            activation,
            layers,
            log_std,
            obs_norm,
        };
        weights.validate()?;
        Ok(weights)
    }
}

/// Actor network used as a feedback policy.
#[derive(Debug, Clone)]
pub struct NeuralPolicy {
    pub weights: NeuralWeights,
    /// Return the Gaussian mean instead of sampling.
    pub deterministic: bool,
    /// Optional symmetric clip on `ω_fb`.
    pub action_bound: Option<f64>,
    label: String,
}

impl NeuralPolicy {
    pub fn new(weights: NeuralWeights) -> Self {
        NeuralPolicy { weights, deterministic: true, action_bound: None, label: "neural".into() }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut policy = NeuralPolicy::new(load_weights(path)?);
        policy.label = format!("neural:{}", path.display());
        Ok(policy)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

/// Forward pass plus optional exploration noise `exp(log_std)·N(0, 1)`.
pub fn neural_act(weights: &NeuralWeights, obs: &Observation, deterministic: bool, rng: &mut Stream) -> Result<f64> {
    let mean = weights.forward(obs)?;
    if deterministic {
        return Ok(mean);
    }
    let std = weights.log_std.unwrap_or(0.0).exp();
    let action = mean + std * standard_normal(rng);
    if !action.is_finite() {
        return Err(Error::Policy(format!("sampled action is not finite: {action}")));
    }
    Ok(action)
}

impl Policy for NeuralPolicy {
    fn act(&self, obs: &Observation, _params: &SystemParams, rng: &mut Stream) -> Result<f64> {
        let action = neural_act(&self.weights, obs, self.deterministic, rng)?;
        Ok(match self.action_bound {
            Some(b) => action.clamp(-b, b),
            None => action,
        })
    }

    fn label(&self) -> String {
        self.label.clone()
    }
}

/// Policy selector used by the CLI and the bindings.
#[derive(Debug, Clone)]
pub enum Strategy {
    NoControl,
    OpenLoop,
    Neural(std::sync::Arc<NeuralPolicy>),
}

impl Strategy {
    /// Parses `none`, `open_loop` (alias `ol`) or `neural:<path>`.
    pub fn parse(spec: &str) -> Result<Self> {
        match spec.trim() {
            "none" | "no_control" | "nc" => Ok(Strategy::NoControl),
            "open_loop" | "ol" => Ok(Strategy::OpenLoop),
            other => match other.strip_prefix("neural:") {
                Some(path) => Ok(Strategy::Neural(std::sync::Arc::new(NeuralPolicy::from_file(Path::new(path))?))),
                None => Err(Error::Config(format!("unknown strategy {other:?}"))),
            },
        }
    }

    /// Short name for file names.
    pub fn slug(&self) -> &'static str {
        match self {
            Strategy::NoControl => "none",
            Strategy::OpenLoop => "open_loop",
            Strategy::Neural(_) => "neural",
        }
    }
}

impl Policy for Strategy {
    fn act(&self, obs: &Observation, params: &SystemParams, rng: &mut Stream) -> Result<f64> {
        match self {
            Strategy::NoControl => NoControl.act(obs, params, rng),
            Strategy::OpenLoop => OpenLoop.act(obs, params, rng),
            Strategy::Neural(p) => p.act(obs, params, rng),
        }
    }

    fn label(&self) -> String {
        match self {
            Strategy::NoControl => NoControl.label(),
            Strategy::OpenLoop => OpenLoop.label(),
            Strategy::Neural(p) => p.label(),
        }
    }
}
