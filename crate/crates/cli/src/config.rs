//! Experiment configuration: one TOML file per run.
//!
//! Top-level keys are `kind`, `seed`, `output_dir` and one table per concern
//! (`dynamics`, `solver`, `pretrain`, `control`, `mpc`, `sweep`,
//! `generalization`, `evaluate`, `full`). Unknown keys are rejected. Paths to
//! checkpoints and matrix files are resolved against the config file's directory.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hypersolve::control::{CostSpec, Feedback, Saturation};
use hypersolve::dynamics::{
    beam_initial_state, timoshenko_standin, BeamParams, CartPoleParams, Dynamics, LinearSystem,
    PendulumParams, QuadcopterParams, SpringMassParams,
};
use hypersolve::neural::{Activation, Init};
use hypersolve::pretrain::{
    LossKind, LrStage, PretrainConfig, SampleDistribution, SampleMode, Strategy,
};
use hypersolve::solvers::{Hold, Reference, Scheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Pretrain,
    ControlDirect,
    ControlMpc,
    ResidualSweep,
    GeneralizationSweep,
    Evaluate,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Pretrain => "pretrain",
            Kind::ControlDirect => "control_direct",
            Kind::ControlMpc => "control_mpc",
            Kind::ResidualSweep => "residual_sweep",
            Kind::GeneralizationSweep => "generalization_sweep",
            Kind::Evaluate => "evaluate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dynamics: DynamicsConfig,
    pub solver: Option<SolverConfig>,
    pub pretrain: Option<PretrainSection>,
    pub control: Option<ControlSection>,
    pub mpc: Option<MpcSection>,
    pub sweep: Option<SweepSection>,
    pub generalization: Option<GeneralizationSection>,
    pub evaluate: Option<EvaluateSection>,
    /// Long budgets selected by `--full`.
    pub full: Option<FullScale>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum System {
    SpringMass,
    Pendulum,
    Cartpole,
    Quadcopter,
    Beam,
    Linear,
}

/// What the solver's model knows about the plant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKnowledge {
    #[default]
    Full,
    /// Friction dropped (cart-pole only).
    Partial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    pub system: System,
    #[serde(default)]
    pub model: ModelKnowledge,
    pub spring_mass: Option<SpringMassParams>,
    pub pendulum: Option<PendulumParams>,
    pub cartpole: Option<CartPoleParams>,
    pub quadcopter: Option<QuadcopterParams>,
    pub beam: Option<BeamConfig>,
    /// Text file with the `A` and `B` matrices of a linear system.
    pub matrices: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamConfig {
    pub elements: usize,
    pub length: f64,
    pub rho_a: f64,
    pub i_rho: f64,
    pub c_b: f64,
    pub c_s: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        let p = BeamParams::default();
        Self {
            elements: p.elements,
            length: p.length,
            rho_a: p.rho_a,
            i_rho: p.i_rho,
            c_b: p.c_b,
            c_s: p.c_s,
        }
    }
}

impl BeamConfig {
    pub fn params(&self) -> BeamParams {
        BeamParams {
            elements: self.elements,
            length: self.length,
            rho_a: self.rho_a,
            i_rho: self.i_rho,
            c_b: self.c_b,
            c_s: self.c_s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    #[default]
    Base,
    Hyper,
    Multistage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub base: Scheme,
    #[serde(default)]
    pub kind: SolverKind,
    pub eps: f64,
    #[serde(default)]
    pub include_t: bool,
    /// Outer correction network.
    pub net: Option<NetConfig>,
    /// Inner (field) correction network of a multi-stage solver.
    pub inner: Option<NetConfig>,
    /// Trained networks to load instead of fresh ones.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitName {
    Kaiming,
    Siren,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    /// One name per hidden layer: tanh, relu, softplus, sine, snake.
    pub activations: Vec<String>,
    /// Frequency of sine and snake activations.
    #[serde(default = "one")]
    pub freq: f64,
    /// Defaults to `siren` for sine activations and `kaiming` otherwise.
    pub init: Option<InitName>,
}

fn one() -> f64 {
    1.0
}

impl NetConfig {
    pub fn activations(&self) -> Result<Vec<Activation>, String> {
        self.activations
            .iter()
            .map(|a| {
                Activation::from_name(a, self.freq)
                    .ok_or_else(|| format!("unknown activation `{a}`"))
            })
            .collect()
    }

    pub fn init(&self) -> Init {
        match self.init {
            Some(InitName::Siren) => Init::SirenUniform,
            Some(InitName::Kaiming) => Init::UniformKaiming,
            None if self
                .activations
                .iter()
                .any(|a| a.starts_with("sin") || a == "siren") =>
            {
                Init::SirenUniform
            }
            None => Init::UniformKaiming,
        }
    }

    fn check(&self) -> Result<(), String> {
        if self.hidden.len() != self.activations.len() {
            return Err(format!(
                "{} hidden layers need {} activations, got {}",
                self.hidden.len(),
                self.hidden.len(),
                self.activations.len()
            ));
        }
        if self.hidden.contains(&0) {
            return Err("hidden layer widths must be positive".into());
        }
        for a in self.activations()? {
            a.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    /// Constant learning rate; use `schedule` for stages.
    pub lr: Option<f64>,
    pub schedule: Option<Vec<LrStage>>,
    #[serde(default = "residual")]
    pub loss: LossKind,
    #[serde(default = "stochastic")]
    pub strategy: Strategy,
    pub top_n: Option<usize>,
    pub held_out: Option<usize>,
    pub max_pairs: Option<usize>,
    #[serde(default)]
    pub reference: Reference,
    pub checkpoint_every: Option<usize>,
    pub distribution: SampleDistribution,
}

fn residual() -> LossKind {
    LossKind::Residual
}

fn stochastic() -> Strategy {
    Strategy::Stochastic
}

impl PretrainSection {
    pub fn to_config(&self, eps: f64, seed: u64) -> PretrainConfig {
        let base = PretrainConfig::new(self.epochs, self.batch_size, self.lr.unwrap_or(1e-3), eps);
        PretrainConfig {
            schedule: self.schedule.clone().unwrap_or(base.schedule.clone()),
            loss: self.loss,
            strategy: self.strategy,
            top_n: self.top_n,
            seed,
            held_out: self.held_out.unwrap_or(base.held_out),
            max_pairs: self.max_pairs.unwrap_or(base.max_pairs),
            reference: self.reference,
            checkpoint_every: self.checkpoint_every,
            ..base
        }
    }
}

/// A scalar multiple of the identity, diagonal entries or a full matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Weights {
    /// Expanded to `Diagonal` when the config is loaded.
    Scalar(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl Weights {
    fn matrix(&self) -> Vec<Vec<f64>> {
        match self {
            Weights::Full(m) => m.clone(),
            Weights::Scalar(w) => vec![vec![*w]],
            Weights::Diagonal(d) => (0..d.len())
                .map(|i| {
                    (0..d.len())
                        .map(|j| if i == j { d[i] } else { 0.0 })
                        .collect()
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub p: Weights,
    pub q: Weights,
    pub r_u: Weights,
    pub x_star: Vec<f64>,
}

impl CostConfig {
    pub fn spec(&self) -> CostSpec {
        CostSpec {
            p: self.p.matrix(),
            q: self.q.matrix(),
            r_u: self.r_u.matrix(),
            x_star: self.x_star.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activations: Vec<String>,
    #[serde(default = "one")]
    pub freq: f64,
    #[serde(default)]
    pub feedback: Feedback,
    pub bounds: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub saturation: Saturation,
}

impl ControllerConfig {
    pub fn net(&self) -> NetConfig {
        NetConfig {
            hidden: self.hidden.clone(),
            activations: self.activations.clone(),
            freq: self.freq,
            init: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    #[serde(default)]
    pub t0: f64,
    pub t_end: f64,
    pub epochs: usize,
    pub lr: f64,
    #[serde(default)]
    pub hold: Hold,
    /// Training initial states, drawn uniformly from `x0_box`.
    pub batch: usize,
    pub x0_box: Vec<[f64; 2]>,
    /// Held-out initial states for the closed-loop evaluation.
    #[serde(default = "sixty_four")]
    pub test_batch: usize,
    pub cost: CostConfig,
    pub controller: ControllerConfig,
    #[serde(default)]
    pub reference: Reference,
}

fn sixty_four() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcSection {
    #[serde(default)]
    pub t0: f64,
    pub t_end: f64,
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub sampling: f64,
    pub iterations: usize,
    pub lr: f64,
    #[serde(default = "yes")]
    pub warm_start: bool,
    #[serde(default)]
    pub hold: Hold,
    pub cost: CostConfig,
    pub controller: ControllerConfig,
    /// Integrates the plant between re-optimizations.
    #[serde(default)]
    pub reference: Reference,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub eps: Vec<f64>,
    #[serde(default = "all_schemes")]
    pub schemes: Vec<Scheme>,
    /// States drawn per control value.
    pub samples: usize,
    pub state_box: Vec<[f64; 2]>,
    /// Control values of the first input; the others stay at zero.
    pub controls: Vec<f64>,
    /// When present, a HyperEuler model is trained at every step size with `solver.net`.
    pub hyper: Option<HyperTraining>,
    pub control_box: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub reference: Reference,
}

fn all_schemes() -> Vec<Scheme> {
    Scheme::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl GridAxis {
    pub fn points(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![0.5 * (self.lo + self.hi)];
        }
        (0..self.n)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / (self.n - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneralizationSection {
    /// One variant per entry: tanh, relu, sine (SIREN), snake.
    #[serde(default = "four_activations")]
    pub activations: Vec<String>,
    #[serde(default = "hidden_32")]
    pub hidden: Vec<usize>,
    /// Hidden widths of the sine variant.
    #[serde(default = "hidden_64")]
    pub sine_hidden: Vec<usize>,
    #[serde(default = "one")]
    pub freq: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub distribution: SampleDistribution,
    /// Grid over the first two state components.
    pub grid_x0: GridAxis,
    pub grid_x1: GridAxis,
    /// Control held while the grid residuals are measured.
    #[serde(default)]
    pub control: f64,
    #[serde(default)]
    pub reference: Reference,
}

fn four_activations() -> Vec<String> {
    ["tanh", "relu", "sine", "snake"].map(String::from).to_vec()
}

fn hidden_32() -> Vec<usize> {
    vec![32, 32]
}

fn hidden_64() -> Vec<usize> {
    vec![64, 64]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlSignal {
    Zero,
    /// One constant control per trajectory, uniform in `control_box`.
    UniformConstant,
    /// Constant controls at the box corners, alternating between trajectories.
    BangBang,
    /// Fresh uniform control at every step.
    UniformSteps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    #[serde(default)]
    pub t0: f64,
    pub t_end: f64,
    /// Step size of the base schemes; checkpoints use the same grid.
    pub eps: f64,
    #[serde(default)]
    pub schemes: Vec<Scheme>,
    #[serde(default)]
    pub checkpoints: Vec<PathBuf>,
    pub trajectories: usize,
    pub x0_box: Vec<[f64; 2]>,
    pub signal: ControlSignal,
    pub control_box: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub reference: Reference,
    /// Trajectory CSVs written per solver.
    #[serde(default = "two")]
    pub save_trajectories: usize,
}

fn two() -> usize {
    2
}

/// Budgets that replace the desk-scale ones under `--full`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FullScale {
    pub pretrain_epochs: Option<usize>,
    pub pretrain_lr: Option<f64>,
    pub control_epochs: Option<usize>,
    pub mpc_iterations: Option<usize>,
    pub sweep_epochs: Option<usize>,
    pub generalization_epochs: Option<usize>,
}

/// A configuration problem, anchored to a line of the source when one can be found.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub file: String,
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.file)?;
        if let Some(l) = self.line {
            write!(f, ":{l}")?;
        }
        if let Some(k) = &self.key {
            write!(f, ": `{k}`")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

/// 1-based line of `key` (dotted path), falling back to its closest enclosing table.
pub fn locate(text: &str, key: &str) -> Option<usize> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut table: Vec<String> = Vec::new();
    let mut best: Option<(usize, usize)> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if let Some(inner) = line.strip_prefix('[') {
            let name = inner.trim_start_matches('[').trim_end_matches(']').trim();
            table = name.split('.').map(|s| s.trim().to_string()).collect();
            let depth = matched_prefix(&parts, &table);
            if depth == table.len() && best.is_none_or(|(d, _)| depth > d) {
                best = Some((depth, i + 1));
            }
            continue;
        }
        let Some((k, _)) = line.split_once('=') else {
            continue;
        };
        let mut full = table.clone();
        full.extend(
            k.trim()
                .split('.')
                .map(|s| s.trim().trim_matches('"').to_string()),
        );
        let depth = matched_prefix(&parts, &full);
        if depth == full.len() && best.is_none_or(|(d, _)| depth > d) {
            best = Some((depth, i + 1));
        }
    }
    best.map(|(_, l)| l)
}

fn matched_prefix(parts: &[&str], path: &[String]) -> usize {
    parts.iter().zip(path).take_while(|(a, b)| *a == b).count()
}

pub struct Loaded {
    pub config: ExperimentConfig,
}

fn err(file: &Path, text: &str, key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        file: file.display().to_string(),
        line: locate(text, key),
        key: Some(key.to_string()),
        message: message.into(),
    }
}

/// Reads a TOML config, or the config echo inside a run's `summary.json`.
pub fn load(path: &Path, full: bool) -> Result<Loaded, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        file: path.display().to_string(),
        line: None,
        key: None,
        message: format!("cannot read config: {e}"),
    })?;
    let mut config: ExperimentConfig = if path.extension().is_some_and(|e| e == "json") {
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| ConfigError {
            file: path.display().to_string(),
            line: Some(e.line()),
            key: None,
            message: e.to_string(),
        })?;
        serde_json::from_value(v.get("config").cloned().unwrap_or(v)).map_err(|e| ConfigError {
            file: path.display().to_string(),
            line: None,
            key: Some("config".into()),
            message: e.to_string(),
        })?
    } else {
        toml::from_str(&text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            ConfigError {
                file: path.display().to_string(),
                line,
                key: None,
                message: e.message().to_string(),
            }
        })?
    };
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    resolve_paths(&mut config, &base_dir);
    expand_shorthands(&mut config);
    if full {
        apply_full(&mut config);
    }
    validate(&config).map_err(|(key, msg)| err(path, &text, &key, msg))?;
    Ok(Loaded { config })
}

fn absolute(base: &Path, p: &Path) -> PathBuf {
    let joined = if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    };
    std::path::absolute(&joined).unwrap_or(joined)
}

fn resolve_paths(c: &mut ExperimentConfig, base: &Path) {
    if let Some(m) = &mut c.dynamics.matrices {
        *m = absolute(base, m);
    }
    if let Some(s) = &mut c.solver {
        if let Some(p) = &mut s.checkpoint {
            *p = absolute(base, p);
        }
    }
    if let Some(e) = &mut c.evaluate {
        for p in &mut e.checkpoints {
            *p = absolute(base, p);
        }
    }
}

/// Initial state used when a config leaves it out: the beam's modal profile, zeros elsewhere.
fn default_state(d: &DynamicsConfig, n_x: usize) -> Vec<f64> {
    match d.system {
        System::Beam => beam_initial_state(&d.beam.unwrap_or_default().params()),
        _ => vec![0.0; n_x],
    }
}

/// Shorthands for high-dimensional systems: a single box interval or a scalar
/// weight is broadcast to every dimension, an empty target is the origin, and an
/// empty initial state or walk seed is the system's default state.
fn expand_shorthands(c: &mut ExperimentConfig) {
    let Ok((n_x, n_u)) = c.dynamics.dims() else {
        return;
    };
    let broadcast = |b: &mut Vec<[f64; 2]>, n: usize| {
        if b.len() == 1 && n > 1 {
            *b = vec![b[0]; n];
        }
    };
    let x_default = default_state(&c.dynamics, n_x);
    let fixed = |x: &[f64]| x.iter().map(|&v| [v, v]).collect::<Vec<_>>();
    let cost = |k: &mut CostConfig| {
        for (w, n) in [(&mut k.p, n_x), (&mut k.q, n_x), (&mut k.r_u, n_u)] {
            if let Weights::Scalar(v) = *w {
                *w = Weights::Diagonal(vec![v; n]);
            }
        }
        if k.x_star.is_empty() {
            k.x_star = vec![0.0; n_x];
        }
    };
    let distribution = |d: &mut SampleDistribution| {
        broadcast(&mut d.state_box, n_x);
        broadcast(&mut d.control_box, n_u);
        if let SampleMode::RandomWalk(w) = &mut d.mode {
            if w.seed_state.is_empty() {
                w.seed_state = x_default.clone();
            }
        }
    };
    if let Some(p) = &mut c.pretrain {
        distribution(&mut p.distribution);
    }
    if let Some(g) = &mut c.generalization {
        distribution(&mut g.distribution);
    }
    if let Some(ctl) = &mut c.control {
        if ctl.x0_box.is_empty() {
            ctl.x0_box = fixed(&x_default);
        }
        broadcast(&mut ctl.x0_box, n_x);
        cost(&mut ctl.cost);
        if let Some(b) = &mut ctl.controller.bounds {
            broadcast(b, n_u);
        }
    }
    if let Some(m) = &mut c.mpc {
        if m.x0.is_empty() {
            m.x0 = x_default.clone();
        }
        cost(&mut m.cost);
        if let Some(b) = &mut m.controller.bounds {
            broadcast(b, n_u);
        }
    }
    if let Some(s) = &mut c.sweep {
        broadcast(&mut s.state_box, n_x);
        if let Some(b) = &mut s.control_box {
            broadcast(b, n_u);
        }
    }
    if let Some(e) = &mut c.evaluate {
        if e.x0_box.is_empty() {
            e.x0_box = fixed(&x_default);
        }
        broadcast(&mut e.x0_box, n_x);
        if let Some(b) = &mut e.control_box {
            broadcast(b, n_u);
        }
    }
}

/// Scales a stage schedule to a new epoch total, keeping the proportions.
fn rescale(schedule: &[LrStage], old: usize, new: usize) -> Vec<LrStage> {
    if old == 0 || schedule.is_empty() {
        return schedule.to_vec();
    }
    let mut out: Vec<LrStage> = schedule
        .iter()
        .map(|s| LrStage {
            epochs: s.epochs * new / old,
            lr: s.lr,
        })
        .collect();
    let assigned: usize = out.iter().map(|s| s.epochs).sum();
    if let Some(last) = out.last_mut() {
        last.epochs += new - assigned.min(new);
    }
    out
}

fn apply_full(c: &mut ExperimentConfig) {
    let Some(full) = c.full.clone() else { return };
    if let (Some(n), Some(p)) = (full.pretrain_epochs, &mut c.pretrain) {
        if let Some(s) = &p.schedule {
            p.schedule = Some(rescale(s, p.epochs, n));
        }
        p.epochs = n;
    }
    if let (Some(lr), Some(p)) = (full.pretrain_lr, &mut c.pretrain) {
        p.lr = Some(lr);
    }
    if let (Some(n), Some(ctl)) = (full.control_epochs, &mut c.control) {
        ctl.epochs = n;
    }
    if let (Some(n), Some(m)) = (full.mpc_iterations, &mut c.mpc) {
        m.iterations = n;
    }
    if let (Some(n), Some(h)) = (
        full.sweep_epochs,
        c.sweep.as_mut().and_then(|s| s.hyper.as_mut()),
    ) {
        h.epochs = n;
    }
    if let (Some(n), Some(g)) = (full.generalization_epochs, &mut c.generalization) {
        g.epochs = n;
    }
}

type Invalid = (String, String);

fn need<'a, T>(v: &'a Option<T>, key: &str, kind: Kind) -> Result<&'a T, Invalid> {
    v.as_ref().ok_or_else(|| {
        (
            key.to_string(),
            format!("a `{}` experiment needs a [{key}] table", kind.name()),
        )
    })
}

fn positive(key: &str, v: f64) -> Result<(), Invalid> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err((key.into(), format!("must be positive and finite, got {v}")))
    }
}

fn nonzero(key: &str, v: usize) -> Result<(), Invalid> {
    if v > 0 {
        Ok(())
    } else {
        Err((key.into(), "must be at least 1".into()))
    }
}

fn boxes(key: &str, b: &[[f64; 2]], dim: usize) -> Result<(), Invalid> {
    if b.len() != dim {
        return Err((
            key.into(),
            format!("needs {dim} intervals, got {}", b.len()),
        ));
    }
    if let Some([lo, hi]) = b
        .iter()
        .find(|[lo, hi]| !(lo.is_finite() && hi.is_finite() && lo <= hi))
    {
        return Err((key.into(), format!("invalid interval [{lo}, {hi}]")));
    }
    Ok(())
}

fn existing(key: &str, p: &Path) -> Result<(), Invalid> {
    if p.is_file() {
        Ok(())
    } else {
        Err((key.into(), format!("file {} does not exist", p.display())))
    }
}

impl DynamicsConfig {
    /// The true system.
    pub fn plant(&self) -> hypersolve::Result<Dynamics> {
        let d = match self.system {
            System::SpringMass => Dynamics::SpringMass(self.spring_mass.unwrap_or_default()),
            System::Pendulum => Dynamics::Pendulum(self.pendulum.unwrap_or_default()),
            System::Cartpole => Dynamics::CartPoleFull(self.cartpole.unwrap_or_default()),
            System::Quadcopter => Dynamics::Quadcopter(self.quadcopter.unwrap_or_default()),
            System::Beam => Dynamics::Linear(std::sync::Arc::new(timoshenko_standin(
                &self.beam.unwrap_or_default().params(),
            )?)),
            System::Linear => {
                let path = self.matrices.as_ref().ok_or_else(|| {
                    hypersolve::Error::InvalidInput(
                        "linear system needs `dynamics.matrices`".into(),
                    )
                })?;
                Dynamics::Linear(std::sync::Arc::new(LinearSystem::load(path)?))
            }
        };
        d.validate()?;
        Ok(d)
    }

    /// The system the solver integrates.
    pub fn model(&self) -> hypersolve::Result<Dynamics> {
        let plant = self.plant()?;
        Ok(match self.model {
            ModelKnowledge::Full => plant,
            ModelKnowledge::Partial => plant.partial(),
        })
    }

    fn dims(&self) -> Result<(usize, usize), Invalid> {
        let d = self
            .plant()
            .map_err(|e| ("dynamics".to_string(), e.to_string()))?;
        Ok(d.dims())
    }
}

fn check_cost(key: &str, c: &CostConfig, n_x: usize, n_u: usize) -> Result<(), Invalid> {
    if c.x_star.len() != n_x {
        return Err((
            format!("{key}.x_star"),
            format!("needs {n_x} entries, got {}", c.x_star.len()),
        ));
    }
    let spec = c.spec();
    if spec.r_u.len() != n_u {
        return Err((
            format!("{key}.r_u"),
            format!("needs dimension {n_u}, got {}", spec.r_u.len()),
        ));
    }
    spec.validate()
        .map_err(|e| (key.to_string(), e.to_string()))
}

fn check_controller(key: &str, c: &ControllerConfig, n_u: usize) -> Result<(), Invalid> {
    if c.feedback != Feedback::ConstantSequence {
        c.net().check().map_err(|m| (key.to_string(), m))?;
    }
    if let Some(b) = &c.bounds {
        if b.len() != n_u {
            return Err((
                format!("{key}.bounds"),
                format!("needs {n_u} intervals, got {}", b.len()),
            ));
        }
        if let Some([lo, hi]) = b.iter().find(|[lo, hi]| !(lo < hi)) {
            return Err((
                format!("{key}.bounds"),
                format!("empty interval [{lo}, {hi}]"),
            ));
        }
    }
    Ok(())
}

fn check_solver(s: &SolverConfig, kind: Kind) -> Result<(), Invalid> {
    positive("solver.eps", s.eps)?;
    if let Some(n) = &s.net {
        n.check().map_err(|m| ("solver.net".to_string(), m))?;
    }
    if let Some(n) = &s.inner {
        n.check().map_err(|m| ("solver.inner".to_string(), m))?;
    }
    if let Some(p) = &s.checkpoint {
        existing("solver.checkpoint", p)?;
    }
    match s.kind {
        SolverKind::Base => Ok(()),
        SolverKind::Hyper | SolverKind::Multistage
            if matches!(kind, Kind::ControlDirect | Kind::ControlMpc) && s.checkpoint.is_none() =>
        {
            Err((
                "solver.checkpoint".into(),
                "control experiments need a trained checkpoint for a neural solver".into(),
            ))
        }
        SolverKind::Hyper if s.net.is_none() && s.checkpoint.is_none() => Err((
            "solver.net".into(),
            "a hypersolver needs `net` or `checkpoint`".into(),
        )),
        SolverKind::Multistage
            if s.net.is_none() && s.inner.is_none() && s.checkpoint.is_none() =>
        {
            Err((
                "solver".into(),
                "a multi-stage solver needs `net`, `inner` or `checkpoint`".into(),
            ))
        }
        _ => Ok(()),
    }
}

fn check_reference(key: &str, r: &Reference) -> Result<(), Invalid> {
    r.validate().map_err(|e| (key.to_string(), e.to_string()))
}

pub fn validate(c: &ExperimentConfig) -> Result<(), Invalid> {
    if c.output_dir.as_os_str().is_empty() {
        return Err(("output_dir".into(), "must not be empty".into()));
    }
    if c.dynamics.model == ModelKnowledge::Partial && c.dynamics.system != System::Cartpole {
        return Err((
            "dynamics.model".into(),
            "partial models exist only for the cart-pole".into(),
        ));
    }
    if let Some(p) = &c.dynamics.matrices {
        existing("dynamics.matrices", p)?;
    }
    let (n_x, n_u) = c.dynamics.dims()?;
    if let Some(s) = &c.solver {
        check_solver(s, c.kind)?;
    }
    match c.kind {
        Kind::Pretrain => {
            let s = need(&c.solver, "solver", c.kind)?;
            if s.kind == SolverKind::Base {
                return Err((
                    "solver.kind".into(),
                    "pre-training needs a `hyper` or `multistage` solver".into(),
                ));
            }
            let p = need(&c.pretrain, "pretrain", c.kind)?;
            nonzero("pretrain.batch_size", p.batch_size)?;
            if let Some(lr) = p.lr {
                positive("pretrain.lr", lr)?;
            }
            boxes(
                "pretrain.distribution.state_box",
                &p.distribution.state_box,
                n_x,
            )?;
            boxes(
                "pretrain.distribution.control_box",
                &p.distribution.control_box,
                n_u,
            )?;
            check_reference("pretrain.reference", &p.reference)?;
            p.to_config(s.eps, c.seed)
                .validate()
                .map_err(|e| ("pretrain".to_string(), e.to_string()))?;
        }
        Kind::ControlDirect => {
            let s = need(&c.solver, "solver", c.kind)?;
            let ctl = need(&c.control, "control", c.kind)?;
            if !(ctl.t_end > ctl.t0) {
                return Err((
                    "control.t_end".into(),
                    format!("must exceed t0 = {}", ctl.t0),
                ));
            }
            positive("control.lr", ctl.lr)?;
            nonzero("control.batch", ctl.batch)?;
            nonzero("control.test_batch", ctl.test_batch)?;
            boxes("control.x0_box", &ctl.x0_box, n_x)?;
            check_cost("control.cost", &ctl.cost, n_x, n_u)?;
            check_controller("control.controller", &ctl.controller, n_u)?;
            check_reference("control.reference", &ctl.reference)?;
            let steps = ((ctl.t_end - ctl.t0) / s.eps).round();
            if steps < 1.0 {
                return Err((
                    "control.t_end".into(),
                    "time span shorter than one step".into(),
                ));
            }
        }
        Kind::ControlMpc => {
            let s = need(&c.solver, "solver", c.kind)?;
            let m = need(&c.mpc, "mpc", c.kind)?;
            if m.x0.len() != n_x {
                return Err((
                    "mpc.x0".into(),
                    format!("needs {n_x} entries, got {}", m.x0.len()),
                ));
            }
            positive("mpc.lr", m.lr)?;
            positive("mpc.horizon", m.horizon)?;
            positive("mpc.sampling", m.sampling)?;
            check_cost("mpc.cost", &m.cost, n_x, n_u)?;
            check_controller("mpc.controller", &m.controller, n_u)?;
            check_reference("mpc.reference", &m.reference)?;
            let grid = hypersolve::solvers::TimeGrid::new(m.t0, m.t_end, s.eps)
                .map_err(|e| ("mpc.t_end".to_string(), e.to_string()))?;
            mpc_config(m)
                .layout(&grid)
                .map_err(|e| ("mpc.horizon".to_string(), e.to_string()))?;
        }
        Kind::ResidualSweep => {
            let sw = need(&c.sweep, "sweep", c.kind)?;
            if sw.eps.is_empty() {
                return Err(("sweep.eps".into(), "needs at least one step size".into()));
            }
            for &e in &sw.eps {
                positive("sweep.eps", e)?;
            }
            nonzero("sweep.samples", sw.samples)?;
            boxes("sweep.state_box", &sw.state_box, n_x)?;
            if sw.controls.is_empty() {
                return Err((
                    "sweep.controls".into(),
                    "needs at least one control value".into(),
                ));
            }
            if let Some(h) = &sw.hyper {
                let s = need(&c.solver, "solver", c.kind)?;
                if s.net.is_none() {
                    return Err((
                        "solver.net".into(),
                        "training hypersolvers in a sweep needs `solver.net`".into(),
                    ));
                }
                nonzero("sweep.hyper.batch_size", h.batch_size)?;
                positive("sweep.hyper.lr", h.lr)?;
                let cb = sw.control_box.as_ref().ok_or_else(|| {
                    (
                        "sweep.control_box".to_string(),
                        "needed to train hypersolvers".to_string(),
                    )
                })?;
                boxes("sweep.control_box", cb, n_u)?;
            }
            check_reference("sweep.reference", &sw.reference)?;
        }
        Kind::GeneralizationSweep => {
            let g = need(&c.generalization, "generalization", c.kind)?;
            if n_x < 2 {
                return Err((
                    "dynamics.system".into(),
                    "the state grid needs at least two state components".into(),
                ));
            }
            if g.activations.is_empty() {
                return Err((
                    "generalization.activations".into(),
                    "needs at least one activation".into(),
                ));
            }
            for a in &g.activations {
                if Activation::from_name(a, g.freq).is_none() {
                    return Err((
                        "generalization.activations".into(),
                        format!("unknown activation `{a}`"),
                    ));
                }
            }
            need(&c.solver, "solver", c.kind)?;
            nonzero("generalization.batch_size", g.batch_size)?;
            positive("generalization.lr", g.lr)?;
            boxes(
                "generalization.distribution.state_box",
                &g.distribution.state_box,
                n_x,
            )?;
            boxes(
                "generalization.distribution.control_box",
                &g.distribution.control_box,
                n_u,
            )?;
            for (k, a) in [
                ("generalization.grid_x0", &g.grid_x0),
                ("generalization.grid_x1", &g.grid_x1),
            ] {
                nonzero(&format!("{k}.n"), a.n)?;
                if !(a.lo <= a.hi) {
                    return Err((k.into(), format!("invalid range [{}, {}]", a.lo, a.hi)));
                }
            }
            check_reference("generalization.reference", &g.reference)?;
        }
        Kind::Evaluate => {
            let e = need(&c.evaluate, "evaluate", c.kind)?;
            positive("evaluate.eps", e.eps)?;
            if !(e.t_end > e.t0) {
                return Err((
                    "evaluate.t_end".into(),
                    format!("must exceed t0 = {}", e.t0),
                ));
            }
            if e.schemes.is_empty() && e.checkpoints.is_empty() {
                return Err((
                    "evaluate".into(),
                    "list at least one scheme or checkpoint".into(),
                ));
            }
            for p in &e.checkpoints {
                existing("evaluate.checkpoints", p)?;
            }
            nonzero("evaluate.trajectories", e.trajectories)?;
            boxes("evaluate.x0_box", &e.x0_box, n_x)?;
            if e.signal != ControlSignal::Zero {
                let cb = e.control_box.as_ref().ok_or_else(|| {
                    (
                        "evaluate.control_box".to_string(),
                        "needed for non-zero control signals".to_string(),
                    )
                })?;
                boxes("evaluate.control_box", cb, n_u)?;
            }
            check_reference("evaluate.reference", &e.reference)?;
        }
    }
    Ok(())
}

pub fn mpc_config(m: &MpcSection) -> hypersolve::control::MpcConfig {
    hypersolve::control::MpcConfig {
        horizon: m.horizon,
        sampling: m.sampling,
        iterations: m.iterations,
        lr: m.lr,
        warm_start: m.warm_start,
        hold: m.hold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn locate_finds_keys_and_tables() {
        let text = "kind = \"pretrain\"\n\n[solver]\nbase = \"euler\"\neps = 0.1\n\n[solver.net]\nhidden = [4]\n";
        assert_eq!(locate(text, "kind"), Some(1));
        assert_eq!(locate(text, "solver.eps"), Some(5));
        assert_eq!(locate(text, "solver.net.hidden"), Some(8));
        assert_eq!(locate(text, "solver.net.activations"), Some(7));
        assert_eq!(locate(text, "solver.checkpoint"), Some(3));
    }

    #[test]
    fn rescale_keeps_total() {
        let s = [
            LrStage { epochs: 6, lr: 1.0 },
            LrStage { epochs: 4, lr: 0.1 },
        ];
        let r = rescale(&s, 10, 25);
        assert_eq!(r.iter().map(|s| s.epochs).sum::<usize>(), 25);
        assert_eq!(r[0].epochs, 15);
    }

    #[test]
    fn diagonal_weights_expand() {
        assert_eq!(
            Weights::Diagonal(vec![1.0, 2.0]).matrix(),
            vec![vec![1.0, 0.0], vec![0.0, 2.0]]
        );
    }

    #[test]
    fn shipped_configs_parse_and_expand() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let mut n = 0;
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.extension().is_none_or(|e| e != "toml") {
                continue;
            }
            let text = std::fs::read_to_string(&p).unwrap();
            let mut c: ExperimentConfig =
                toml::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            expand_shorthands(&mut c);
            apply_full(&mut c);
            assert!(
                c.full.is_some() || matches!(c.kind, Kind::Evaluate | Kind::ControlMpc),
                "{}",
                p.display()
            );
            n += 1;
        }
        assert!(n >= 20, "found {n} configs");
    }

    #[test]
    fn shorthands_broadcast_to_the_system_size() {
        let text = r#"
kind = "control_direct"
output_dir = "x"
[dynamics]
system = "beam"
[solver]
base = "rk4"
eps = 0.005
[control]
t_end = 0.1
epochs = 1
lr = 1e-3
batch = 1
x0_box = []
[control.cost]
p = 2.0
q = 1.0
r_u = 0.5
x_star = []
[control.controller]
hidden = [4]
activations = ["tanh"]
bounds = [[-1.0, 1.0]]
"#;
        let mut c: ExperimentConfig = toml::from_str(text).unwrap();
        expand_shorthands(&mut c);
        let ctl = c.control.as_ref().unwrap();
        assert_eq!(ctl.x0_box.len(), 160);
        assert!(ctl.x0_box.iter().all(|[lo, hi]| lo == hi));
        assert_eq!(ctl.cost.p, Weights::Diagonal(vec![2.0; 160]));
        assert_eq!(ctl.cost.r_u, Weights::Diagonal(vec![0.5; 2]));
        assert_eq!(ctl.controller.bounds.as_ref().unwrap().len(), 2);
        validate(&c).unwrap();
    }
}
