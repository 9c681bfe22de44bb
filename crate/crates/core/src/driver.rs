//! End-to-end runs: configuration, presets, the Adam then L-BFGS schedule,
//! Rayleigh–Ritz post-processing, error tables and report files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble, Assembly};
use crate::checkpoint::Checkpoint;
use crate::densela::sym_generalized_eig;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::forms::{self, FormTerm, ProblemForms, SeparableBilinearForm};
use crate::loss::{self, factor_mass, JitterEvent};
use crate::metrics::{eigenvalue_errors, projection_errors, GridFunction, LowRank};
use crate::optim::{lbfgs_minimize, AdamState, LbfgsOptions, LbfgsStatus};
use crate::reference::{self, group_levels, OscillatorReference};
use crate::subnet::Activation;
use crate::tnn::{Architecture, DimGrid, DimensionKind, DimensionSpec, TnnModel};

pub const CONFIG_VERSION: u32 = 1;
pub const RESULTS_SCHEMA: &str = "tnn-eig/results/v1";
pub const PRESETS: [&str; 5] = ["ho2d", "ho2d-coupled", "ho5d-coupled", "hydrogen", "box-laplace"];

/// The eigenvalue problem to solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Problem {
    /// `-½Δu + ½xᵀAx u = λu` on the whole space.
    Oscillator { matrix: Vec<Vec<f64>> },
    /// `-½Δu - u/r = λu` in spherical coordinates `(r, θ, φ)`.
    Hydrogen,
    /// `-Δu = λu` with zero boundary values on a box of Dirichlet dimensions.
    BoxLaplace,
    /// Arbitrary separable forms; no reference values.
    Custom { a: Vec<FormTerm>, b: Vec<FormTerm> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub adam_lr: f64,
    pub adam_steps: u64,
    #[serde(default)]
    pub lbfgs_steps: u64,
    #[serde(default = "default_history")]
    pub lbfgs_history: usize,
}

fn default_history() -> usize {
    20
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
    /// Adam steps between checkpoints; 0 writes only the final checkpoint.
    #[serde(default)]
    pub checkpoint_interval: u64,
    /// Spacing of recorded loss values.
    #[serde(default = "default_loss_every")]
    pub loss_every: u64,
}

fn default_out() -> PathBuf {
    PathBuf::from("tnn-eig-out")
}

fn default_loss_every() -> u64 {
    100
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_out(),
            checkpoint_interval: 0,
            loss_every: default_loss_every(),
        }
    }
}

fn config_version() -> u32 {
    CONFIG_VERSION
}

fn default_name() -> String {
    "custom".into()
}

/// A complete run description. Serialized as TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "config_version")]
    pub version: u32,
    #[serde(default = "default_name")]
    pub name: String,
    pub seed: u64,
    /// Number of TNNs, i.e. eigenpairs sought.
    pub k: usize,
    pub problem: Problem,
    /// Architecture shared by all TNNs unless `architectures` is given.
    pub architecture: Architecture,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub architectures: Option<Vec<Architecture>>,
    pub dimensions: Vec<DimensionSpec>,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Disables worker threads.
    #[serde(default)]
    pub sequential: bool,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn exec(&self) -> Exec {
        if self.sequential {
            Exec::Sequential
        } else {
            Exec::Parallel
        }
    }

    pub fn architectures(&self) -> Vec<Architecture> {
        self.architectures.clone().unwrap_or_else(|| vec![self.architecture; self.k])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("config version {} unsupported (expected {CONFIG_VERSION})", self.version));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        let archs = self.architectures();
        if archs.len() != self.k {
            return bad(format!("{} architectures given for k = {}", archs.len(), self.k));
        }
        for a in &archs {
            if a.p == 0 {
                return bad("rank p must be at least 1".into());
            }
            if a.depth > 0 && a.width == 0 {
                return bad("width must be at least 1".into());
            }
        }
        if self.dimensions.is_empty() {
            return bad("at least one dimension is required".into());
        }
        for (i, d) in self.dimensions.iter().enumerate() {
            d.validate().map_err(|e| Error::Config(format!("dimension {i}: {e}")))?;
        }
        let o = &self.optimizer;
        if o.adam_steps > 0 && !(o.adam_lr > 0.0 && o.adam_lr.is_finite()) {
            return bad(format!("adam_lr must be positive, got {}", o.adam_lr));
        }
        if o.lbfgs_history == 0 {
            return bad("lbfgs_history must be at least 1".into());
        }
        if self.output.loss_every == 0 {
            return bad("loss_every must be at least 1".into());
        }
        let d = self.dimensions.len();
        match &self.problem {
            Problem::Oscillator { matrix } => {
                if matrix.len() != d || matrix.iter().any(|r| r.len() != d) {
                    return bad(format!("oscillator matrix must be {d}x{d}"));
                }
                if self.dimensions.iter().any(|s| s.kind != DimensionKind::WholeLine) {
                    return bad("oscillator dimensions must be whole_line".into());
                }
            }
            Problem::Hydrogen => {
                let ok = d == 3
                    && self.dimensions[0].kind == DimensionKind::HalfLine
                    && matches!(self.dimensions[1].kind, DimensionKind::BoundedNatural { a, b } if a == 0.0 && (b - std::f64::consts::PI).abs() < 1e-12)
                    && matches!(self.dimensions[2].kind, DimensionKind::PeriodicAngle { period } if (period - 2.0 * std::f64::consts::PI).abs() < 1e-12);
                if !ok {
                    return bad("hydrogen needs dimensions (half_line, bounded_natural (0, π), periodic_angle 2π)".into());
                }
            }
            Problem::BoxLaplace => {
                if self.dimensions.iter().any(|s| !matches!(s.kind, DimensionKind::BoundedDirichlet { .. })) {
                    return bad("box_laplace dimensions must be bounded_dirichlet".into());
                }
            }
            Problem::Custom { a, b } => {
                if a.iter().chain(b).any(|t| t.kernels.len() != d) {
                    return bad(format!("custom form terms need {d} kernels each"));
                }
            }
        }
        Ok(())
    }
}

fn whole_line(points: usize) -> DimensionSpec {
    DimensionSpec::new(DimensionKind::WholeLine, 1, points)
}

fn matrix_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Desk-scale configurations for the shipped benchmarks.
pub fn preset(name: &str) -> Result<RunConfig> {
    let arch = |p, width| Architecture { p, depth: 3, width, activation: Activation::Sin };
    let optimizer = |adam_lr, adam_steps, lbfgs_steps| OptimizerConfig {
        adam_lr,
        adam_steps,
        lbfgs_steps,
        lbfgs_history: default_history(),
    };
    let base = |name: &str, k, problem, architecture, dimensions, optimizer| RunConfig {
        version: CONFIG_VERSION,
        name: name.into(),
        seed: 1,
        k,
        problem,
        architecture,
        architectures: None,
        dimensions,
        optimizer,
        output: OutputConfig::default(),
        sequential: false,
    };
    let cfg = match name {
        "ho2d" => base(
            name,
            16,
            Problem::Oscillator { matrix: matrix_rows(&Array2::eye(2)) },
            arch(10, 20),
            vec![whole_line(40); 2],
            optimizer(1e-3, 20000, 500),
        ),
        "ho2d-coupled" => base(
            name,
            16,
            Problem::Oscillator { matrix: matrix_rows(&reference::coupled_2d_matrix()) },
            arch(10, 20),
            vec![whole_line(40); 2],
            optimizer(1e-3, 20000, 500),
        ),
        "ho5d-coupled" => base(
            name,
            4,
            Problem::Oscillator { matrix: matrix_rows(&reference::five_dim_matrix()) },
            arch(20, 40),
            vec![whole_line(40); 5],
            optimizer(1e-3, 10000, 0),
        ),
        "hydrogen" => base(
            name,
            1,
            Problem::Hydrogen,
            arch(10, 20),
            vec![
                DimensionSpec::new(DimensionKind::HalfLine, 1, 99),
                DimensionSpec::new(DimensionKind::BoundedNatural { a: 0.0, b: std::f64::consts::PI }, 64, 16),
                DimensionSpec::new(DimensionKind::PeriodicAngle { period: 2.0 * std::f64::consts::PI }, 128, 16),
            ],
            optimizer(3e-4, 20000, 0),
        ),
        "box-laplace" => base(
            name,
            4,
            Problem::BoxLaplace,
            Architecture { p: 5, depth: 2, width: 16, activation: Activation::Sin },
            vec![DimensionSpec::new(DimensionKind::BoundedDirichlet { a: 0.0, b: 1.0 }, 4, 10); 2],
            optimizer(3e-3, 3000, 100),
        ),
        other => {
            return Err(Error::Config(format!("unknown preset {other:?}; available: {}", PRESETS.join(", "))));
        }
    };
    Ok(cfg)
}

/// Exact spectrum and eigenfunctions, where known.
#[derive(Clone, Debug)]
pub enum Reference {
    Oscillator(OscillatorReference),
    Hydrogen(Vec<f64>),
    Box { lengths: Vec<f64>, origins: Vec<f64>, states: Vec<(Vec<usize>, f64)> },
    None,
}

impl Reference {
    fn energies(&self) -> Option<Vec<f64>> {
        match self {
            Reference::Oscillator(r) => Some(r.energies()),
            Reference::Hydrogen(e) => Some(e.clone()),
            Reference::Box { states, .. } => Some(states.iter().map(|s| s.1).collect()),
            Reference::None => None,
        }
    }

    fn label(&self, n: usize) -> Option<String> {
        match self {
            Reference::Oscillator(r) => Some(r.states[n].label()),
            Reference::Box { states, .. } => {
                let parts: Vec<String> = states[n].0.iter().map(|m| m.to_string()).collect();
                Some(format!("({})", parts.join(",")))
            }
            Reference::Hydrogen(e) => Some(format!("n={}", (-0.5 / e[n]).sqrt().round() as usize)),
            Reference::None => None,
        }
    }
}

/// Forms, dimension specs (with normalization measures) and reference of a configuration.
pub struct ProblemSetup {
    pub dims: Vec<DimensionSpec>,
    pub forms: ProblemForms,
    /// Reference over the first `k + 1` states; the extra one detects split levels.
    pub reference: Reference,
}

pub fn build_problem(cfg: &RunConfig) -> Result<ProblemSetup> {
    cfg.validate()?;
    let k = cfg.k;
    let mut dims = cfg.dimensions.clone();
    let (forms, reference) = match &cfg.problem {
        Problem::Oscillator { matrix } => {
            let d = matrix.len();
            let a = Array2::from_shape_fn((d, d), |(i, j)| matrix[i][j]);
            let pot = forms::quadratic_potential(a.view(), 0.5).map_err(|e| Error::Config(e.to_string()))?;
            let forms = forms::laplace_plus_potential(&dims, 0.5, &pot)?;
            let r = reference::oscillator_states(a.view(), k + 1).map_err(|e| Error::Config(format!("oscillator matrix: {e}")))?;
            (forms, Reference::Oscillator(r))
        }
        Problem::Hydrogen => (forms::hydrogen_spherical(), Reference::Hydrogen(reference::hydrogen_spectrum(k + 1))),
        Problem::BoxLaplace => {
            let (origins, lengths): (Vec<f64>, Vec<f64>) = dims
                .iter()
                .map(|s| match s.kind {
                    DimensionKind::BoundedDirichlet { a, b } => (a, b - a),
                    _ => unreachable!("validated"),
                })
                .unzip();
            let forms = forms::laplace_plus_potential(&dims, 1.0, &[])?;
            let states = reference::box_laplace_states(&lengths, k + 1);
            (forms, Reference::Box { lengths, origins, states })
        }
        Problem::Custom { a, b } => {
            let d = dims.len();
            let a = SeparableBilinearForm::new(d, a.clone()).map_err(|e| Error::Config(format!("a-form: {e}")))?;
            let b = SeparableBilinearForm::new(d, b.clone()).map_err(|e| Error::Config(format!("b-form: {e}")))?;
            (ProblemForms::new(a, b).map_err(|e| Error::Config(e.to_string()))?, Reference::None)
        }
    };
    // Components are normalized in the measure of the b-form.
    for (spec, kn) in dims.iter_mut().zip(&forms.b.terms()[0].kernels) {
        spec.measure = kn.weight;
    }
    Ok(ProblemSetup { dims, forms, reference })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Adam,
    Lbfgs,
}

impl Phase {
    fn name(self) -> &'static str {
        match self {
            Phase::Adam => "adam",
            Phase::Lbfgs => "lbfgs",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub phase: Phase,
    pub step: u64,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JitterRecord {
    pub phase: Phase,
    pub step: u64,
    pub delta: f64,
    pub shift: f64,
}

/// One line of the error table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub n: usize,
    pub state: Option<String>,
    pub exact: Option<f64>,
    pub approx: f64,
    pub err_e: Option<f64>,
    pub err_l2: Option<f64>,
    pub err_h1: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub adam_seconds: f64,
    pub lbfgs_seconds: f64,
    pub post_seconds: f64,
}

/// Everything a run produces. Wall-clock timing is kept out of the
/// serialized report so that result files are reproducible.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub schema: String,
    pub config: RunConfig,
    pub adam_steps: u64,
    pub lbfgs_steps: u64,
    pub lbfgs_status: Option<LbfgsStatus>,
    pub final_loss: f64,
    pub loss_history: Vec<LossPoint>,
    pub jitter_events: Vec<JitterRecord>,
    pub betas: Vec<Option<f64>>,
    pub ritz_values: Vec<f64>,
    /// Columns `y_j` of the Rayleigh–Ritz eigenvectors, stored row-major as `k × k`.
    pub ritz_vectors: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub rows: Vec<ErrorRow>,
    #[serde(skip)]
    pub timing: Timing,
}

/// Options that are not part of the reproducible configuration.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Continue from this checkpoint.
    pub resume: Option<PathBuf>,
    /// Write checkpoints and report files into `config.output.dir`.
    pub write_files: bool,
}

struct Objective<'a> {
    model: TnnModel,
    forms: &'a ProblemForms,
    exec: Exec,
}

struct Evaluation {
    value: f64,
    grad: Vec<f64>,
    jitter: Option<JitterEvent>,
}

impl Objective<'_> {
    fn eval(&self) -> Result<Evaluation> {
        let asm = assemble(&self.model, self.forms, self.exec)?;
        let le = loss::evaluate(asm.pair())?;
        let grad = asm.gradient(le.g_a.view(), le.g_b.view(), self.exec)?;
        Ok(Evaluation { value: le.value, grad, jitter: le.jitter })
    }

    fn eval_at(&mut self, x: &[f64]) -> Result<Evaluation> {
        self.model.unflatten(x)?;
        self.eval()
    }
}

fn wrap(phase: Phase, step: u64) -> impl Fn(Error) -> Error {
    move |e| Error::Training { phase: phase.name(), step, source: Box::new(e) }
}

/// Runs the configured schedule and the Rayleigh–Ritz post-processing.
pub fn run(cfg: &RunConfig, opts: &RunOptions) -> Result<TrainReport> {
    let t_start = Instant::now();
    let setup = build_problem(cfg)?;
    let archs = cfg.architectures();
    let exec = cfg.exec();
    let (model, mut adam, adam_done, lbfgs_done) = match &opts.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            ck.check_compatible(&setup.dims, &archs)?;
            let model = ck.model()?;
            let mut adam = ck.adam.clone().unwrap_or_else(|| AdamState::new(model.num_params(), cfg.optimizer.adam_lr));
            adam.lr = cfg.optimizer.adam_lr;
            (model, adam, ck.header.adam_steps, ck.header.lbfgs_steps)
        }
        None => {
            let model = TnnModel::random(setup.dims.clone(), &archs, cfg.seed).map_err(|e| Error::Config(e.to_string()))?;
            let adam = AdamState::new(model.num_params(), cfg.optimizer.adam_lr);
            (model, adam, 0, 0)
        }
    };
    let out_dir = &cfg.output.dir;
    if opts.write_files {
        fs::create_dir_all(out_dir)?;
    }
    let ckpt_path = out_dir.join("checkpoint.bin");
    let mut obj = Objective { model, forms: &setup.forms, exec };
    let mut history = Vec::new();
    let mut jitter_events = Vec::new();
    let mut adam_steps = adam_done;

    let save = |model: &TnnModel, adam: Option<&AdamState>, a: u64, l: u64| -> Result<()> {
        if opts.write_files {
            Checkpoint::new(model, cfg.seed, a, l, adam).save(&ckpt_path)?;
        }
        Ok(())
    };

    let t_adam = Instant::now();
    let mut params = obj.model.flatten();
    while adam_steps < cfg.optimizer.adam_steps {
        let step = adam_steps;
        let ev = match obj.eval() {
            Ok(ev) => ev,
            Err(e) => {
                save(&obj.model, Some(&adam), adam_steps, lbfgs_done)?;
                return Err(wrap(Phase::Adam, step)(e));
            }
        };
        if let Some(j) = ev.jitter {
            jitter_events.push(JitterRecord { phase: Phase::Adam, step, delta: j.delta, shift: j.shift });
        }
        if step % cfg.output.loss_every == 0 {
            history.push(LossPoint { phase: Phase::Adam, step, value: ev.value });
            log::info!("adam step {step}: loss {:.12}", ev.value);
        }
        if let Err(e) = adam.step(&mut params, &ev.grad) {
            save(&obj.model, Some(&adam), adam_steps, lbfgs_done)?;
            return Err(wrap(Phase::Adam, step)(e));
        }
        obj.model.unflatten(&params)?;
        adam_steps += 1;
        let interval = cfg.output.checkpoint_interval;
        if interval > 0 && adam_steps % interval == 0 {
            save(&obj.model, Some(&adam), adam_steps, lbfgs_done)?;
        }
    }
    let adam_seconds = t_adam.elapsed().as_secs_f64();

    let t_lbfgs = Instant::now();
    let mut lbfgs_steps = lbfgs_done;
    let mut lbfgs_status = None;
    let remaining = cfg.optimizer.lbfgs_steps.saturating_sub(lbfgs_done);
    if remaining > 0 {
        let lopts = LbfgsOptions {
            max_iters: remaining as usize,
            history: cfg.optimizer.lbfgs_history,
            ..LbfgsOptions::default()
        };
        let x0 = obj.model.flatten();
        let start_model = obj.model.clone();
        let outcome = {
            let mut f = |x: &[f64]| obj.eval_at(x).map(|e| (e.value, e.grad));
            lbfgs_minimize(&mut f, x0, &lopts)
        };
        let outcome = match outcome {
            Ok(o) => o,
            Err(e) => {
                save(&start_model, Some(&adam), adam_steps, lbfgs_done)?;
                return Err(wrap(Phase::Lbfgs, lbfgs_done)(e));
            }
        };
        for (i, s) in outcome.steps.iter().enumerate() {
            let step = lbfgs_done + i as u64 + 1;
            if step % cfg.output.loss_every == 0 || i + 1 == outcome.steps.len() {
                history.push(LossPoint { phase: Phase::Lbfgs, step, value: s.f1 });
            }
        }
        log::info!(
            "lbfgs: {} iterations, {} evaluations, status {:?}, loss {:.12}",
            outcome.iterations,
            outcome.evaluations,
            outcome.status,
            outcome.value
        );
        obj.model.unflatten(&outcome.x)?;
        lbfgs_steps = lbfgs_done + outcome.iterations as u64;
        lbfgs_status = Some(outcome.status);
    }
    let lbfgs_seconds = t_lbfgs.elapsed().as_secs_f64();

    let t_post = Instant::now();
    let model = obj.model;
    save(&model, Some(&adam), adam_steps, lbfgs_steps)?;
    let asm = assemble(&model, &setup.forms, exec).map_err(wrap(Phase::Lbfgs, lbfgs_steps))?;
    let le = loss::evaluate(asm.pair()).map_err(wrap(Phase::Lbfgs, lbfgs_steps))?;
    if let Some(j) = le.jitter {
        jitter_events.push(JitterRecord { phase: Phase::Lbfgs, step: lbfgs_steps, delta: j.delta, shift: j.shift });
    }
    let (lambda, y) = rayleigh_ritz(&asm)?;
    let rows = error_rows(cfg.k, &model, &asm, &setup.reference, &lambda, &y)?;
    let pair = asm.pair();
    let report = TrainReport {
        schema: RESULTS_SCHEMA.into(),
        config: cfg.clone(),
        adam_steps,
        lbfgs_steps,
        lbfgs_status,
        final_loss: le.value,
        loss_history: history,
        jitter_events,
        betas: (0..model.d()).map(|i| model.beta(i)).collect(),
        ritz_values: lambda.to_vec(),
        ritz_vectors: matrix_rows(&y),
        a: matrix_rows(&pair.a),
        b: matrix_rows(&pair.b),
        rows,
        timing: Timing {
            total_seconds: 0.0,
            adam_seconds,
            lbfgs_seconds,
            post_seconds: t_post.elapsed().as_secs_f64(),
        },
    };
    let mut report = report;
    report.timing.total_seconds = t_start.elapsed().as_secs_f64();
    if opts.write_files {
        report_emit(&report, out_dir)?;
    }
    Ok(report)
}

/// Ritz values (ascending) and B-orthonormal coefficient vectors.
pub fn rayleigh_ritz(asm: &Assembly<'_>) -> Result<(Array1<f64>, Array2<f64>)> {
    let pair = asm.pair();
    match sym_generalized_eig(pair.a.view(), pair.b.view()) {
        Err(Error::NotPositiveDefinite { .. }) => {
            let (_, jitter) = factor_mass(pair.b.view())?;
            let shift = jitter.map_or(0.0, |j| j.shift);
            let mut b = pair.b.clone();
            b.diag_mut().mapv_inplace(|v| v + shift);
            sym_generalized_eig(pair.a.view(), b.view())
        }
        other => other,
    }
}

/// `û = Σ_ℓ y_ℓ Ψ_ℓ` as a low-rank grid function.
pub fn ritz_function(model: &TnnModel, asm: &Assembly<'_>, y: ArrayView1<f64>) -> GridFunction {
    let d = model.d();
    let mut coeffs = Vec::new();
    let mut factors: Vec<(Vec<Array1<f64>>, Vec<Array1<f64>>)> = vec![(Vec::new(), Vec::new()); d];
    for (l, tnn) in model.tnns().iter().enumerate() {
        for j in 0..tnn.rank() {
            coeffs.push(y[l] * tnn.coeffs[j]);
            for (i, f) in factors.iter_mut().enumerate() {
                let t = asm.table(l, i);
                f.0.push(t.values.row(j).to_owned());
                f.1.push(t.derivs.row(j).to_owned());
            }
        }
    }
    let stack = |rows: &[Array1<f64>]| {
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        ndarray::stack(ndarray::Axis(0), &views).expect("equal lengths")
    };
    GridFunction::LowRank(LowRank {
        coeffs,
        factors: factors.iter().map(|(v, dv)| (stack(v), stack(dv))).collect(),
    })
}

fn box_state(lengths: &[f64], origins: &[f64], idx: &[usize], grids: &[DimGrid]) -> GridFunction {
    let factors = grids
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let w = std::f64::consts::PI * idx[i] as f64 / lengths[i];
            let amp = (2.0 / lengths[i]).sqrt();
            let v = Array1::from_iter(g.phys.iter().map(|&x| amp * (w * (x - origins[i])).sin()));
            let dv = Array1::from_iter(g.phys.iter().map(|&x| amp * w * (w * (x - origins[i])).cos()));
            (v, dv)
        })
        .collect();
    GridFunction::separable(1.0, factors)
}

fn error_rows(
    k: usize,
    model: &TnnModel,
    asm: &Assembly<'_>,
    reference: &Reference,
    lambda: &Array1<f64>,
    y: &Array2<f64>,
) -> Result<Vec<ErrorRow>> {
    let Some(all) = reference.energies() else {
        return Ok((0..k)
            .map(|n| ErrorRow { n, state: None, exact: None, approx: lambda[n], err_e: None, err_l2: None, err_h1: None })
            .collect());
    };
    let exact = &all[..k];
    let err_e = eigenvalue_errors(lambda.as_slice().expect("contiguous"), exact)?;
    let mut l2 = vec![None; k];
    let mut h1 = vec![None; k];
    let grids = asm.grids();
    let exact_fn = |n: usize| -> Option<Result<GridFunction>> {
        match reference {
            Reference::Oscillator(r) if r.is_axis_aligned() || model.d() <= 2 => {
                Some(GridFunction::oscillator_state(r, n, grids))
            }
            Reference::Box { lengths, origins, states } => Some(Ok(box_state(lengths, origins, &states[n].0, grids))),
            _ => None,
        }
    };
    let levels = group_levels(&all);
    for level in levels {
        // A level cut by the k boundary has no determined eigenspace.
        if level.iter().any(|&n| n >= k) {
            continue;
        }
        let space: Vec<GridFunction> = level.iter().map(|&n| ritz_function(model, asm, y.column(n))).collect();
        for &n in &level {
            let Some(u) = exact_fn(n) else { continue };
            match projection_errors(&u?, &space, grids) {
                Ok((a, b)) => {
                    l2[n] = Some(a);
                    h1[n] = Some(b);
                }
                Err(Error::SingularGram(msg)) => log::warn!("state {n}: {msg}"),
                Err(e) => return Err(e),
            }
        }
    }
    Ok((0..k)
        .map(|n| ErrorRow {
            n,
            state: reference.label(n),
            exact: Some(exact[n]),
            approx: lambda[n],
            err_e: Some(err_e[n]),
            err_l2: l2[n],
            err_h1: h1[n],
        })
        .collect())
}

fn cell(v: Option<f64>, sci: bool) -> String {
    match v {
        Some(x) if sci => format!("{x:.3e}"),
        Some(x) => format!("{x:.15}"),
        None => "—".into(),
    }
}

/// Human-readable error table.
pub fn format_table(report: &TrainReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# {} (k = {}, seed = {})", report.config.name, report.config.k, report.config.seed);
    let _ = writeln!(
        s,
        "{:>3}  {:<14}  {:>19}  {:>19}  {:>10}  {:>10}  {:>10}",
        "n", "state", "exact E", "approx E", "err_E", "err_L2", "err_H1"
    );
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{:>3}  {:<14}  {:>19}  {:>19}  {:>10}  {:>10}  {:>10}",
            r.n,
            r.state.clone().unwrap_or_else(|| "—".into()),
            cell(r.exact, false),
            cell(Some(r.approx), false),
            cell(r.err_e, true),
            cell(r.err_l2, true),
            cell(r.err_h1, true)
        );
    }
    s
}

/// Writes `results.json`, `results.txt` and `timing.json` into `dir`.
pub fn report_emit(report: &TrainReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    fs::write(dir.join("results.json"), json)?;
    fs::write(dir.join("results.txt"), format_table(report))?;
    let mut timing = serde_json::to_string_pretty(&report.timing)?;
    timing.push('\n');
    fs::write(dir.join("timing.json"), timing)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(name: &str) -> RunConfig {
        let mut cfg = preset(name).unwrap();
        cfg.optimizer.adam_steps = 0;
        cfg.optimizer.lbfgs_steps = 0;
        cfg
    }

    #[test]
    fn presets_validate_and_round_trip_toml() {
        for name in PRESETS {
            let cfg = preset(name).unwrap();
            cfg.validate().unwrap();
            let text = cfg.to_toml().unwrap();
            assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg, "{name}");
        }
        assert!(matches!(preset("nope"), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = preset("ho2d").unwrap();
        cfg.k = 0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = preset("ho2d").unwrap();
        cfg.dimensions.pop();
        assert!(cfg.validate().is_err());
        let mut cfg = preset("hydrogen").unwrap();
        cfg.dimensions.swap(1, 2);
        assert!(cfg.validate().is_err());
        let mut cfg = preset("ho2d").unwrap();
        cfg.version = 7;
        assert!(cfg.validate().is_err());
        assert!(matches!(RunConfig::from_toml("k = 3"), Err(Error::Config(_))));
    }

    #[test]
    fn coupled_table_reproduces_exact_column() {
        let cfg = tiny("ho2d-coupled");
        let report = run(&cfg, &RunOptions::default()).unwrap();
        for (n, e) in [(0, 1.014291981649766), (2, 2.130622073635773), (15, 5.575561338217387)] {
            let exact = report.rows[n].exact.unwrap();
            assert!((exact - e).abs() < 1e-14 * e, "state {n}: {exact} vs {e}");
        }
        assert_eq!(report.rows.len(), 16);
        // The degenerate-free coupled spectrum has every level complete.
        assert!(report.rows.iter().all(|r| r.err_l2.is_some()));
    }

    #[test]
    fn untrained_run_is_pure_rayleigh_ritz() {
        let cfg = tiny("box-laplace");
        let report = run(&cfg, &RunOptions::default()).unwrap();
        assert_eq!(report.ritz_values.len(), 4);
        assert!(report.ritz_values.windows(2).all(|w| w[0] <= w[1]));
        let sum: f64 = report.ritz_values.iter().sum();
        assert!((sum - report.final_loss).abs() < 1e-10 * sum.abs());
        // Ritz values bound the exact ones from above.
        for r in &report.rows {
            assert!(r.approx >= r.exact.unwrap() * (1.0 - 1e-12));
        }
    }

    #[test]
    fn hydrogen_setup_normalizes_with_spherical_measure() {
        let setup = build_problem(&preset("hydrogen").unwrap()).unwrap();
        use crate::forms::Weight;
        assert_eq!(setup.dims[0].measure, Weight::Power(2));
        assert_eq!(setup.dims[1].measure, Weight::Sin);
        assert_eq!(setup.dims[2].measure, Weight::One);
    }

    #[test]
    fn split_level_has_no_projection_error() {
        let cfg = tiny("ho2d");
        let report = run(&cfg, &RunOptions::default()).unwrap();
        // Level 6 has six states; only one fits into k = 16.
        assert!(report.rows[15].err_l2.is_none());
        assert!(report.rows[0].err_l2.is_some());
        assert!(format_table(&report).contains('—'));
    }
}
