//! Batch analyses over trajectory ensembles, written as CSV files.
//!
//! All analyses requested for one strategy share a single ensemble pass.
//! Trajectories reach the reducers in index order, so every file is
//! byte-identical across runs with the same configuration and seed,
//! whatever the number of worker threads.
//!
//! Configuration is TOML:
//!
//! ```toml
//! strategy = "open_loop"          # none | open_loop | neural:<weights file>
//! strategies = ["none", "open_loop"]
//! n_traj = 500
//! horizon_steps = 20000
//! stride = 100
//! seed = 1
//! n_th = 5.0
//! r0 = [0.0, 0.0]
//! randomize_init = false
//! jobs = 0
//! output_dir = "out"
//! outputs = ["trace", "fisher"]
//! sample_times = [1.0, 5.0, 20.0]
//! scatter_time = 20.0
//! n_traces = 5
//! deterministic = true
//! action_bound = 1.0
//!
//! [params]
//! omega = 0.1
//! chi = 0.49
//! eta = 0.9
//! dt = 0.001
//!
//! [sweep]
//! chi = [0.0, 0.35, 0.45, 0.49]
//! eta = [0.9, 0.5, 0.1]
//! ```
//!
//! Relative weight paths are resolved against the directory of the config
//! file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::Deserialize;

use crate::csv::{fmt_e12, push_row};
use crate::engine::{
    map_trajectories, riccati_steady_state, trace_csv, EnsembleSpec, InitSampler, InitialCondition, RunOptions, Sample,
    TrajectoryRun,
};
use crate::error::{Error, Result};
use crate::gaussian::{perpendicular_squeezing_db, squeezing_db, SystemParams};
use crate::linalg::{Sym2, Vec2};
use crate::metrology::{
    final_homodyne_fi, gaussian_qfi, optimize_final_homodyne, FisherAccumulator, FisherReport, StrongMeasurementSpec,
};
use crate::policy::{NeuralPolicy, Strategy};
use crate::stats::MeanAccumulator;

pub const HIST_MIN_DB: f64 = -10.0;
pub const HIST_MAX_DB: f64 = 10.0;
pub const HIST_BIN_DB: f64 = 0.25;
pub const HIST_BINS: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Analysis {
    Trace,
    Fisher,
    HistPerp,
    MeanAbsR,
    OmegaFb,
    Scatter,
    FinalHomodyne,
}

impl Analysis {
    pub const ALL: [Analysis; 7] = [
        Analysis::Trace,
        Analysis::Fisher,
        Analysis::HistPerp,
        Analysis::MeanAbsR,
        Analysis::OmegaFb,
        Analysis::Scatter,
        Analysis::FinalHomodyne,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Analysis::Trace => "trace",
            Analysis::Fisher => "fisher",
            Analysis::HistPerp => "hist-perp",
            Analysis::MeanAbsR => "mean-abs-r",
            Analysis::OmegaFb => "omega-fb",
            Analysis::Scatter => "scatter",
            Analysis::FinalHomodyne => "final-homodyne",
        }
    }
}

impl FromStr for Analysis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let normalized = s.trim().replace('_', "-");
        Analysis::ALL
            .into_iter()
            .find(|a| a.name() == normalized)
            .ok_or_else(|| Error::Config(format!("unknown analysis {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub params: SystemParams,
    /// Strategy for single-strategy commands.
    pub strategy: String,
    /// Strategies compared by `compare` and `sweep`.
    pub strategies: Vec<String>,
    pub deterministic: bool,
    pub action_bound: Option<f64>,
    pub n_traj: usize,
    pub horizon_steps: u64,
    pub stride: u64,
    pub seed: u64,
    pub init: InitialCondition,
    pub randomize_init: bool,
    pub jobs: usize,
    pub output_dir: PathBuf,
    pub outputs: Vec<Analysis>,
    /// Histogram times; defaults to quarters of the horizon.
    pub sample_times: Option<Vec<f64>>,
    /// Scatter snapshot time; defaults to the horizon.
    pub scatter_time: Option<f64>,
    pub n_traces: usize,
    pub sweep_chi: Vec<f64>,
    pub sweep_eta: Vec<f64>,
    /// Directory against which relative weight paths are resolved.
    pub base_dir: PathBuf,
}

impl Default for ExperimentConfig {
    /// ω = 0.1κ, χ = 0.49κ, η = 0.9, dt = 0.001/κ, 5000 trajectories from a
    /// thermal state with n_th = 5 at the origin, up to κt = 180.
    fn default() -> Self {
        ExperimentConfig {
            params: SystemParams::default(),
            strategy: "none".into(),
            strategies: vec!["none".into(), "open_loop".into()],
            deterministic: true,
            action_bound: None,
            n_traj: 5000,
            horizon_steps: 180_000,
            stride: crate::engine::DEFAULT_STRIDE,
            seed: 0,
            init: InitialCondition::default(),
            randomize_init: false,
            jobs: 0,
            output_dir: PathBuf::from("out"),
            outputs: vec![Analysis::Trace, Analysis::Fisher],
            sample_times: None,
            scatter_time: None,
            n_traces: 5,
            sweep_chi: vec![0.0, 0.35, 0.45, 0.49],
            sweep_eta: vec![0.9, 0.5, 0.1],
            base_dir: PathBuf::from("."),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    chi: Option<Vec<f64>>,
    eta: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    params: Option<SystemParams>,
    strategy: Option<String>,
    strategies: Option<Vec<String>>,
    deterministic: Option<bool>,
    action_bound: Option<f64>,
    n_traj: Option<usize>,
    horizon_steps: Option<u64>,
    stride: Option<u64>,
    seed: Option<u64>,
    n_th: Option<f64>,
    r0: Option<[f64; 2]>,
    randomize_init: Option<bool>,
    jobs: Option<usize>,
    output_dir: Option<PathBuf>,
    outputs: Option<Vec<String>>,
    sample_times: Option<Vec<f64>>,
    scatter_time: Option<f64>,
    n_traces: Option<usize>,
    sweep: Option<SweepFile>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let f: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut c = ExperimentConfig { base_dir: base_dir.to_path_buf(), ..Default::default() };
        if let Some(p) = f.params {
            c.params = p;
        }
        if let Some(s) = f.strategy {
            c.strategy = s;
        }
        if let Some(s) = f.strategies {
            c.strategies = s;
        }
        if let Some(d) = f.deterministic {
            c.deterministic = d;
        }
        c.action_bound = f.action_bound.or(c.action_bound);
        if let Some(n) = f.n_traj {
            c.n_traj = n;
        }
        if let Some(h) = f.horizon_steps {
            c.horizon_steps = h;
        }
        if let Some(s) = f.stride {
            c.stride = s;
        }
        if let Some(s) = f.seed {
            c.seed = s;
        }
        if let Some(n) = f.n_th {
            c.init.n_th = n;
        }
        if let Some([q, p]) = f.r0 {
            c.init.r0 = Vec2::new(q, p);
        }
        if let Some(r) = f.randomize_init {
            c.randomize_init = r;
        }
        if let Some(j) = f.jobs {
            c.jobs = j;
        }
        if let Some(o) = f.output_dir {
            c.output_dir = o;
        }
        if let Some(outputs) = f.outputs {
            c.outputs = outputs.iter().map(|s| s.parse()).collect::<Result<_>>()?;
        }
        c.sample_times = f.sample_times.or(c.sample_times);
        c.scatter_time = f.scatter_time.or(c.scatter_time);
        if let Some(n) = f.n_traces {
            c.n_traces = n;
        }
        if let Some(sweep) = f.sweep {
            if let Some(chi) = sweep.chi {
                c.sweep_chi = chi;
            }
            if let Some(eta) = sweep.eta {
                c.sweep_eta = eta;
            }
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Checks parameters, run sizes and that every referenced weight file
    /// loads.
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.n_traj < 1 {
            return Err(Error::Config("n_traj must be >= 1".into()));
        }
        if self.stride < 1 {
            return Err(Error::Config("stride must be >= 1".into()));
        }
        if !(self.init.n_th >= 0.0) || !self.init.r0.is_finite() {
            return Err(Error::Config(format!("invalid initial condition {:?}", self.init)));
        }
        if let Some(b) = self.action_bound {
            if !(b > 0.0) {
                return Err(Error::Config(format!("action_bound must be > 0, got {b}")));
            }
        }
        self.load_strategy(&self.strategy)?;
        for s in &self.strategies {
            self.load_strategy(s)?;
        }
        Ok(())
    }

    /// Builds a strategy, resolving neural weight paths and applying the
    /// evaluation options.
    pub fn load_strategy(&self, spec: &str) -> Result<Strategy> {
        match spec.trim().strip_prefix("neural:") {
            Some(path) => {
                let path = Path::new(path);
                let resolved = if path.is_absolute() { path.to_path_buf() } else { self.base_dir.join(path) };
                let mut policy = NeuralPolicy::from_file(&resolved)?;
                policy.deterministic = self.deterministic;
                policy.action_bound = self.action_bound;
                Ok(Strategy::Neural(Arc::new(policy)))
            }
            None => Strategy::parse(spec),
        }
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions::new(self.horizon_steps).with_stride(Some(self.stride))
    }

    pub fn ensemble_spec(&self, params: SystemParams) -> EnsembleSpec {
        EnsembleSpec {
            params,
            init: if self.randomize_init { InitSampler::training() } else { InitSampler::Fixed(self.init) },
            n_traj: self.n_traj,
            opts: self.run_options(),
            base_seed: self.seed,
            jobs: self.jobs,
        }
    }

    fn grid_times(&self) -> Vec<f64> {
        self.run_options().grid_times(self.params.dt)
    }

    fn histogram_times(&self) -> Vec<f64> {
        let horizon = self.horizon_steps as f64 * self.params.dt;
        self.sample_times.clone().unwrap_or_else(|| (1..=4).map(|k| horizon * k as f64 / 4.0).collect())
    }
}

/// Index of the grid point closest to `t`; `t` must lie within the grid.
fn grid_index(times: &[f64], t: f64) -> Result<usize> {
    let last = *times.last().ok_or_else(|| Error::Config("empty time grid".into()))?;
    let half_step = if times.len() > 1 { 0.5 * (times[1] - times[0]) } else { 0.0 };
    if !(t >= 0.0) || t > last + half_step {
        return Err(Error::Config(format!("sample time {t} lies outside the simulated interval [0, {last}]")));
    }
    let mut best = 0;
    for (i, &x) in times.iter().enumerate() {
        if (x - t).abs() < (times[best] - t).abs() {
            best = i;
        }
    }
    Ok(best)
}

/// A named CSV produced by an analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputFile {
    pub name: String,
    pub contents: String,
}

impl OutputFile {
    pub fn write_to(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(&self.name);
        std::fs::write(&path, &self.contents).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[derive(Debug, Clone, Default)]
pub struct AnalysisResults {
    pub files: Vec<OutputFile>,
    pub fisher: Option<FisherReport>,
}

/// File-name tag for a strategy spec: `none`, `open_loop`, `neural_<stem>`.
pub fn strategy_slug(spec: &str) -> String {
    let spec = spec.trim();
    match spec.strip_prefix("neural:") {
        Some(path) => {
            let stem = Path::new(path).file_stem().and_then(|s| s.to_str()).unwrap_or("weights");
            let clean: String = stem.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
            format!("neural_{clean}")
        }
        None => match spec {
            "ol" | "open_loop" => "open_loop".into(),
            _ => "none".into(),
        },
    }
}

/// Steady-state squeezing without control, ξ⁽⁰⁾, and under open-loop
/// control, ξ⁽ᴼᴸ⁾, from numerical Riccati integration.
pub fn reference_squeezing(params: &SystemParams) -> Result<(f64, f64)> {
    let relax = |omega_fb: f64| -> Result<f64> {
        let sigma = riccati_steady_state(params, omega_fb, Sym2::IDENTITY, 1e-12, 1e5)?;
        squeezing_db(&sigma)
    };
    Ok((relax(0.0)?, relax(-params.omega)?))
}

/// Per-trajectory quantities computed on the worker threads.
struct TrajectorySummary {
    samples: Vec<Sample>,
    qfi: Vec<f64>,
    /// `(optimized FI, FI at θ = 0)` per grid point, if requested.
    homodyne: Option<Vec<(f64, f64)>>,
}

fn summarize(run: TrajectoryRun, homodyne: bool) -> Result<TrajectorySummary> {
    let qfi = run.samples.iter().map(|s| s.qfi()).collect::<Result<Vec<_>>>()?;
    let homodyne = homodyne.then(|| {
        run.samples
            .iter()
            .map(|s| {
                let (_, best) = optimize_final_homodyne(&s.state, &s.tangent);
                (best, final_homodyne_fi(&s.state, &s.tangent, &StrongMeasurementSpec::homodyne(0.0)))
            })
            .collect()
    });
    Ok(TrajectorySummary { samples: run.samples, qfi, homodyne })
}

struct Histogram {
    counts: [u64; HIST_BINS],
    undefined: u64,
    below: u64,
    above: u64,
}

impl Histogram {
    fn new() -> Self {
        Histogram { counts: [0; HIST_BINS], undefined: 0, below: 0, above: 0 }
    }

    fn add(&mut self, value: Option<f64>) {
        let Some(x) = value.filter(|x| x.is_finite()) else {
            self.undefined += 1;
            return;
        };
        let pos = ((x - HIST_MIN_DB) / HIST_BIN_DB).floor();
        let bin = if pos < 0.0 {
            self.below += 1;
            0
        } else if pos >= HIST_BINS as f64 {
            if x > HIST_MAX_DB {
                self.above += 1;
            }
            HIST_BINS - 1
        } else {
            pos as usize
        };
        self.counts[bin] += 1;
    }

    fn defined(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Serial reducers fed in trajectory order.
struct Reducers<'a> {
    cfg: &'a ExperimentConfig,
    times: Vec<f64>,
    trace: Option<Vec<Sample>>,
    fisher: Option<FisherAccumulator>,
    hist: Option<(Vec<usize>, Vec<Histogram>)>,
    abs_r: Option<Vec<MeanAccumulator>>,
    omega_fb: Option<(Vec<MeanAccumulator>, Vec<Vec<f64>>)>,
    scatter: Option<(usize, String)>,
    homodyne: Option<[Vec<MeanAccumulator>; 4]>,
}

impl<'a> Reducers<'a> {
    fn new(cfg: &'a ExperimentConfig, analyses: &[Analysis]) -> Result<Self> {
        let times = cfg.grid_times();
        let n = times.len();
        let wants = |a: Analysis| analyses.contains(&a);
        let hist = if wants(Analysis::HistPerp) {
            let idx = cfg.histogram_times().iter().map(|&t| grid_index(&times, t)).collect::<Result<Vec<_>>>()?;
            let h = idx.iter().map(|_| Histogram::new()).collect();
            Some((idx, h))
        } else {
            None
        };
        let scatter = if wants(Analysis::Scatter) {
            let t = cfg.scatter_time.unwrap_or(*times.last().unwrap_or(&0.0));
            Some((grid_index(&times, t)?, String::from("index,t,perp_squeezing_db,abs_r,fhom_traj,ln_fhom_traj,qfi\n")))
        } else {
            None
        };
        let accs = || vec![MeanAccumulator::default(); n];
        Ok(Reducers {
            cfg,
            trace: wants(Analysis::Trace).then(Vec::new),
            fisher: wants(Analysis::Fisher).then(|| FisherAccumulator::new(times.clone())),
            hist,
            abs_r: wants(Analysis::MeanAbsR).then(accs),
            omega_fb: wants(Analysis::OmegaFb).then(|| (accs(), Vec::new())),
            scatter,
            homodyne: wants(Analysis::FinalHomodyne).then(|| [accs(), accs(), accs(), accs()]),
            times,
        })
    }

    fn add(&mut self, index: usize, s: TrajectorySummary) -> Result<()> {
        if let Some(trace) = self.trace.as_mut() {
            if index == 0 {
                *trace = s.samples.clone();
            }
        }
        if let Some(f) = self.fisher.as_mut() {
            f.add_trajectory(&s.samples)?;
        }
        if let Some((idx, hists)) = self.hist.as_mut() {
            for (&i, h) in idx.iter().zip(hists.iter_mut()) {
                h.add(perpendicular_squeezing_db(&s.samples[i].state));
            }
        }
        if let Some(acc) = self.abs_r.as_mut() {
            for (a, sample) in acc.iter_mut().zip(&s.samples) {
                a.push(sample.state.r.norm());
            }
        }
        if let Some((acc, traces)) = self.omega_fb.as_mut() {
            for (a, sample) in acc.iter_mut().zip(&s.samples) {
                a.push(sample.omega_fb);
            }
            if traces.len() < self.cfg.n_traces {
                traces.push(s.samples.iter().map(|x| x.omega_fb).collect());
            }
        }
        if let Some((i, out)) = self.scatter.as_mut() {
            let sample = &s.samples[*i];
            let perp = perpendicular_squeezing_db(&sample.state).unwrap_or(f64::NAN);
            let f = sample.fhom_integral;
            let _ = write!(out, "{index}");
            for v in [sample.t, perp, sample.state.r.norm(), f, f.ln(), s.qfi[*i]] {
                out.push(',');
                out.push_str(&fmt_e12(v));
            }
            out.push('\n');
        }
        if let (Some(acc), Some(hd)) = (self.homodyne.as_mut(), s.homodyne.as_ref()) {
            for (k, sample) in s.samples.iter().enumerate() {
                acc[0][k].push(hd[k].0);
                acc[1][k].push(hd[k].1);
                acc[2][k].push(s.qfi[k]);
                acc[3][k].push(sample.fhom_integral);
            }
        }
        Ok(())
    }

    fn finish(self, slug: &str) -> Result<AnalysisResults> {
        let mut res = AnalysisResults::default();
        let times = &self.times;
        if let Some(trace) = &self.trace {
            res.files.push(OutputFile { name: format!("trace_{slug}.csv"), contents: trace_csv(trace) });
        }
        if let Some(f) = &self.fisher {
            let report = f.report()?;
            res.files.push(OutputFile { name: format!("fisher_{slug}.csv"), contents: report.to_csv() });
            res.fisher = Some(report);
        }
        if let Some((idx, hists)) = &self.hist {
            let (xi0, xi_ol) = reference_squeezing(&self.cfg.params)?;
            let mut out = String::new();
            let _ = writeln!(out, "# xi0_db={}", fmt_e12(xi0));
            let _ = writeln!(out, "# xi_ol_db={}", fmt_e12(xi_ol));
            let _ = writeln!(out, "# bin_width_db={}", fmt_e12(HIST_BIN_DB));
            out.push_str("t,bin_lo,bin_hi,count,density\n");
            let mut summary = String::from("t,n_traj,n_defined,n_undefined,n_below,n_above\n");
            for (&i, h) in idx.iter().zip(hists) {
                let defined = h.defined();
                for (b, &count) in h.counts.iter().enumerate() {
                    let lo = HIST_MIN_DB + b as f64 * HIST_BIN_DB;
                    let density = if defined > 0 { count as f64 / (defined as f64 * HIST_BIN_DB) } else { 0.0 };
                    push_row(&mut out, &[times[i], lo, lo + HIST_BIN_DB], &[]);
                    out.pop();
                    let _ = writeln!(out, ",{count},{}", fmt_e12(density));
                }
                push_row(&mut summary, &[times[i]], &[defined + h.undefined, defined, h.undefined, h.below, h.above]);
            }
            res.files.push(OutputFile { name: format!("hist_perp_{slug}.csv"), contents: out });
            res.files.push(OutputFile { name: format!("hist_perp_summary_{slug}.csv"), contents: summary });
        }
        if let Some(acc) = &self.abs_r {
            let mut out = String::from("t,mean_abs_r,stderr,n_traj\n");
            for (t, a) in times.iter().zip(acc) {
                push_row(&mut out, &[*t, a.mean(), a.std_err()], &[a.count() as u64]);
            }
            res.files.push(OutputFile { name: format!("mean_abs_r_{slug}.csv"), contents: out });
        }
        if let Some((acc, traces)) = &self.omega_fb {
            let mut out = String::from("t,mean,std");
            for k in 0..traces.len() {
                let _ = write!(out, ",trace_{k}");
            }
            out.push('\n');
            for (i, (t, a)) in times.iter().zip(acc).enumerate() {
                let mut row = vec![*t, a.mean(), a.std_dev()];
                row.extend(traces.iter().map(|tr| tr[i]));
                push_row(&mut out, &row, &[]);
            }
            res.files.push(OutputFile { name: format!("omega_fb_{slug}.csv"), contents: out });
        }
        if let Some((_, out)) = self.scatter {
            res.files.push(OutputFile { name: format!("scatter_{slug}.csv"), contents: out });
        }
        if let Some(acc) = &self.homodyne {
            let mut out = String::from(
                "t,fbar_hd,fbar_hd_theta0,qbar_c,fhom,ratio_hd,ratio_hd_theta0,ratio_eff,ratio_eff_theta0\n",
            );
            let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { f64::NAN };
            for (i, t) in times.iter().enumerate() {
                let (f_opt, f_0, q, fh) = (acc[0][i].mean(), acc[1][i].mean(), acc[2][i].mean(), acc[3][i].mean());
                push_row(
                    &mut out,
                    &[*t, f_opt, f_0, q, fh, ratio(f_opt, q), ratio(f_0, q), ratio(fh + f_opt, fh + q), ratio(fh + f_0, fh + q)],
                    &[],
                );
            }
            res.files.push(OutputFile { name: format!("final_homodyne_{slug}.csv"), contents: out });
        }
        Ok(res)
    }
}

/// Runs one ensemble of `strategy_spec` under `params` and reduces it into
/// every requested analysis. Aborts listing the failed trajectories if any
/// trajectory fails.
pub fn run_analyses(
    cfg: &ExperimentConfig,
    params: SystemParams,
    strategy_spec: &str,
    analyses: &[Analysis],
) -> Result<AnalysisResults> {
    let strategy = cfg.load_strategy(strategy_spec)?;
    let mut cfg_here = cfg.clone();
    cfg_here.params = params;
    let spec = cfg_here.ensemble_spec(params);
    let mut reducers = Reducers::new(&cfg_here, analyses)?;
    let homodyne = analyses.contains(&Analysis::FinalHomodyne);
    let mut failures = Vec::new();
    map_trajectories(&spec, &strategy, |_, run| summarize(run, homodyne), |k, result| {
        match result {
            Ok(summary) => reducers.add(k, summary)?,
            Err(e) => failures.push(format!("#{k}: {e}")),
        }
        Ok(())
    })?;
    if !failures.is_empty() {
        return Err(Error::EnsembleFailed { failed: failures.len(), total: cfg.n_traj, details: failures.join("; ") });
    }
    reducers.finish(&strategy_slug(strategy_spec))
}

/// Distinct slugs for a list of strategies (suffixing repeats).
fn unique_slugs(specs: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in specs {
        let base = strategy_slug(s);
        let mut slug = base.clone();
        let mut k = 2;
        while out.contains(&slug) {
            slug = format!("{base}_{k}");
            k += 1;
        }
        out.push(slug);
    }
    out
}

/// One Fisher report per strategy plus the merged `compare.csv`.
pub fn cmd_compare(cfg: &ExperimentConfig) -> Result<Vec<OutputFile>> {
    cfg.validate()?;
    let slugs = unique_slugs(&cfg.strategies);
    let mut files = Vec::new();
    let mut reports = Vec::new();
    for (spec, slug) in cfg.strategies.iter().zip(&slugs) {
        let res = run_analyses(cfg, cfg.params, spec, &[Analysis::Fisher])?;
        let report = res.fisher.expect("fisher analysis requested");
        files.push(OutputFile { name: format!("fisher_{slug}.csv"), contents: report.to_csv() });
        reports.push(report);
    }
    let mut merged = String::from("t");
    for slug in &slugs {
        let _ = write!(merged, ",fhom_over_t_{slug},qbar_c_{slug},qeff_over_t_{slug},stderr_qeff_{slug}");
    }
    merged.push('\n');
    if let Some(first) = reports.first() {
        for i in 0..first.len() {
            let mut row = vec![first.times[i]];
            for r in &reports {
                row.extend([r.fhom_over_t[i], r.qbar_c[i], r.qeff_over_t[i], r.std_err[i]]);
            }
            push_row(&mut merged, &row, &[]);
        }
    }
    files.push(OutputFile { name: "compare.csv".into(), contents: merged });
    Ok(files)
}

/// Runs `analyses` for the configured single strategy.
pub fn cmd_single(cfg: &ExperimentConfig, analyses: &[Analysis]) -> Result<Vec<OutputFile>> {
    cfg.validate()?;
    Ok(run_analyses(cfg, cfg.params, &cfg.strategy, analyses)?.files)
}

/// Which parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Chi,
    Eta,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Chi => "chi",
            SweepAxis::Eta => "eta",
        }
    }
}

/// Fisher reports for every strategy at every value of the swept
/// parameter, the other parameters held at the config values.
pub fn cmd_sweep(cfg: &ExperimentConfig, axes: &[SweepAxis]) -> Result<Vec<OutputFile>> {
    cfg.validate()?;
    let slugs = unique_slugs(&cfg.strategies);
    let mut files = Vec::new();
    for &axis in axes {
        let values = match axis {
            SweepAxis::Chi => &cfg.sweep_chi,
            SweepAxis::Eta => &cfg.sweep_eta,
        };
        let mut points = Vec::with_capacity(values.len());
        for &v in values {
            let mut p = cfg.params;
            match axis {
                SweepAxis::Chi => p.chi = v,
                SweepAxis::Eta => p.eta = v,
            }
            p.validate().map_err(|e| Error::Config(format!("sweep {} = {v}: {e}", axis.name())))?;
            points.push((v, p));
        }
        let mut out = format!("{},strategy,t,fhom_over_t,qbar_c,qeff_over_t,stderr_qeff,n_traj\n", axis.name());
        for (v, p) in points {
            for (spec, slug) in cfg.strategies.iter().zip(&slugs) {
                let report = run_analyses(cfg, p, spec, &[Analysis::Fisher])?.fisher.expect("fisher analysis requested");
                for i in 0..report.len() {
                    let _ = write!(out, "{},{slug},", fmt_e12(v));
                    push_row(
                        &mut out,
                        &[report.times[i], report.fhom_over_t[i], report.qbar_c[i], report.qeff_over_t[i], report.std_err[i]],
                        &[report.n_traj as u64],
                    );
                }
            }
        }
        files.push(OutputFile { name: format!("sweep_{}.csv", axis.name()), contents: out });
    }
    Ok(files)
}

/// Writes all files into the configured output directory.
pub fn write_outputs(cfg: &ExperimentConfig, files: &[OutputFile]) -> Result<Vec<PathBuf>> {
    files.iter().map(|f| f.write_to(&cfg.output_dir)).collect()
}

/// `gaussian_qfi` of every trajectory at one time, in trajectory order.
pub fn qfi_snapshot(cfg: &ExperimentConfig, strategy_spec: &str, t: f64) -> Result<Vec<f64>> {
    let strategy = cfg.load_strategy(strategy_spec)?;
    let spec = cfg.ensemble_spec(cfg.params);
    let i = grid_index(&cfg.grid_times(), t)?;
    let mut out = Vec::with_capacity(cfg.n_traj);
    map_trajectories(&spec, &strategy, |_, run| gaussian_qfi(&run.samples[i].state, &run.samples[i].tangent), |_, q| {
        out.push(q?);
        Ok(())
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            n_traj: 3,
            horizon_steps: 200,
            stride: 50,
            params: SystemParams { dt: 1e-2, ..SystemParams::default() },
            jobs: 2,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn analysis_names_round_trip() {
        for a in Analysis::ALL {
            assert_eq!(a.name().parse::<Analysis>().unwrap(), a);
        }
        assert_eq!("final_homodyne".parse::<Analysis>().unwrap(), Analysis::FinalHomodyne);
        assert!("histogram".parse::<Analysis>().is_err());
    }

    #[test]
    fn config_parsing() {
        let text = "strategy = \"ol\"\nn_traj = 7\noutputs = [\"scatter\", \"fisher\"]\nr0 = [1.0, 2.0]\n[params]\nomega = 0.2\nchi = 0.3\neta = 0.5\ndt = 0.01\n[sweep]\neta = [0.2]\n";
        let c = ExperimentConfig::from_toml(text, Path::new("/tmp")).unwrap();
        assert_eq!(c.strategy, "ol");
        assert_eq!(c.n_traj, 7);
        assert_eq!(c.outputs, vec![Analysis::Scatter, Analysis::Fisher]);
        assert_eq!(c.init.r0, Vec2::new(1.0, 2.0));
        assert_eq!(c.params.omega, 0.2);
        assert_eq!(c.sweep_eta, vec![0.2]);
        assert_eq!(c.sweep_chi, ExperimentConfig::default().sweep_chi);
        assert!(ExperimentConfig::from_toml("nonsense = 1", Path::new(".")).is_err());
    }

    #[test]
    fn missing_weights_fail_validation() {
        let c = ExperimentConfig { strategy: "neural:does/not/exist.json".into(), ..tiny() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn slugs() {
        assert_eq!(strategy_slug("ol"), "open_loop");
        assert_eq!(strategy_slug("none"), "none");
        assert_eq!(strategy_slug("neural:a/b/agent-1.json"), "neural_agent_1");
        let s = unique_slugs(&["none".into(), "none".into(), "ol".into()]);
        assert_eq!(s, vec!["none", "none_2", "open_loop"]);
    }

    #[test]
    fn grid_lookup() {
        let times = [0.0, 0.5, 1.0, 1.5, 2.0];
        assert_eq!(grid_index(&times, 0.0).unwrap(), 0);
        assert_eq!(grid_index(&times, 1.2).unwrap(), 2);
        assert_eq!(grid_index(&times, 2.1).unwrap(), 4);
        assert!(grid_index(&times, 3.0).is_err());
        assert!(grid_index(&times, -1.0).is_err());
    }

    #[test]
    fn histogram_clamps_to_edge_bins() {
        let mut h = Histogram::new();
        for x in [-30.0, -10.0, 0.0, 9.99, 10.0, 25.0] {
            h.add(Some(x));
        }
        h.add(None);
        h.add(Some(f64::NAN));
        assert_eq!(h.counts[0], 2);
        assert_eq!(h.counts[40], 1);
        assert_eq!(h.counts[HIST_BINS - 1], 3);
        assert_eq!((h.below, h.above, h.undefined), (1, 1, 2));
    }

    #[test]
    fn compare_smoke_two_rows() {
        let c = ExperimentConfig { n_traj: 2, horizon_steps: 10, stride: 10, ..tiny() };
        let files = cmd_compare(&c).unwrap();
        let merged = files.iter().find(|f| f.name == "compare.csv").unwrap();
        assert_eq!(merged.contents.lines().count(), 3);
        let fisher = files.iter().find(|f| f.name == "fisher_none.csv").unwrap();
        assert_eq!(fisher.contents.lines().count(), 3);
    }

    #[test]
    fn all_single_analyses_run() {
        let c = ExperimentConfig { sample_times: Some(vec![0.0, 2.0]), n_traces: 2, ..tiny() };
        let files = cmd_single(&c, &Analysis::ALL).unwrap();
        let names: Vec<&str> = files.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "trace_none.csv",
                "fisher_none.csv",
                "hist_perp_none.csv",
                "hist_perp_summary_none.csv",
                "mean_abs_r_none.csv",
                "omega_fb_none.csv",
                "scatter_none.csv",
                "final_homodyne_none.csv"
            ]
        );
        let scatter = &files[6].contents;
        assert_eq!(scatter.lines().count(), 4);
        assert!(scatter.lines().nth(1).unwrap().starts_with("0,2.000000000000e+00,"));
    }
}
