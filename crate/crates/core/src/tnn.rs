//! Tensor neural networks `Ψ_ℓ(x) = Σ_j c_{j,ℓ} Π_i φ̂_{i,j,ℓ}(x_i)`.
//!
//! Each dimension owns a quadrature grid. Component arrays are stored in
//! *reduced* form: physical value (or physical x-derivative) divided by the
//! dimension's envelope (`e^{-z²/2}` on the line, `e^{-z/2}` on the half
//! line, 1 otherwise). Grid weights absorb the squared envelope, so
//! `∫ f g dx = Σ_q ω_q f̃_q g̃_q` for any two reduced arrays.
//!
//! Unbounded dimensions carry one trainable scale β per dimension, shared
//! by all k networks, so every pair of networks integrates on the same
//! rule `x_q = z_q / β`.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forms::Weight;
use crate::quadrature::{self, RuleKind};
use crate::subnet::{self, Activation, BatchEval, SubnetParams, Tape};


/// Components with quadrature norm below this are rejected.
pub const MIN_COMPONENT_NORM: f64 = 1e-30;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DimensionKind {
    /// `(a, b)` with zero boundary values enforced by `(x-a)(b-x)`.
    BoundedDirichlet { a: f64, b: f64 },
    /// `(a, b)` without boundary conditions.
    BoundedNatural { a: f64, b: f64 },
    /// `(-∞, ∞)` with envelope `e^{-β²x²/2}` and Gauss–Hermite nodes.
    WholeLine,
    /// `(0, ∞)` with envelope `e^{-βx/2}` and Gauss–Laguerre nodes.
    HalfLine,
    /// `(0, period)`, components `φ(x) sin(πx/period) + γ_j`.
    PeriodicAngle { period: f64 },
}

impl DimensionKind {
    pub fn is_unbounded(self) -> bool {
        matches!(self, DimensionKind::WholeLine | DimensionKind::HalfLine)
    }
}

/// One coordinate direction: domain, quadrature resolution and the weight
/// of the mass measure used to normalize components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionSpec {
    pub kind: DimensionKind,
    /// Number of equal subintervals (bounded kinds only).
    #[serde(default = "one")]
    pub subintervals: usize,
    /// Gauss points per subinterval, or total points for Hermite/Laguerre.
    pub points: usize,
    #[serde(default)]
    pub measure: Weight,
}

fn one() -> usize {
    1
}

impl DimensionSpec {
    pub fn new(kind: DimensionKind, subintervals: usize, points: usize) -> Self {
        Self {
            kind,
            subintervals,
            points,
            measure: Weight::One,
        }
    }

    pub fn with_measure(mut self, measure: Weight) -> Self {
        self.measure = measure;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            DimensionKind::BoundedDirichlet { a, b } | DimensionKind::BoundedNatural { a, b } => {
                if !(a < b) || !a.is_finite() || !b.is_finite() {
                    return Err(Error::InvalidArgument(format!("bounded dimension needs a < b, got ({a}, {b})")));
                }
            }
            DimensionKind::PeriodicAngle { period } => {
                if !(period > 0.0) || !period.is_finite() {
                    return Err(Error::InvalidArgument(format!("period must be positive, got {period}")));
                }
            }
            DimensionKind::WholeLine | DimensionKind::HalfLine => {}
        }
        if self.points == 0 || self.subintervals == 0 {
            return Err(Error::InvalidArgument("quadrature needs at least one point and one subinterval".into()));
        }
        Ok(())
    }

    pub fn rule_kind(&self) -> RuleKind {
        match self.kind {
            DimensionKind::BoundedDirichlet { a, b } | DimensionKind::BoundedNatural { a, b } => {
                RuleKind::LegendreComposite {
                    a,
                    b,
                    subintervals: self.subintervals,
                    points: self.points,
                }
            }
            DimensionKind::PeriodicAngle { period } => RuleKind::LegendreComposite {
                a: 0.0,
                b: period,
                subintervals: self.subintervals,
                points: self.points,
            },
            DimensionKind::WholeLine => RuleKind::Hermite { points: self.points },
            DimensionKind::HalfLine => RuleKind::Laguerre { points: self.points },
        }
    }
}

/// Shape of one network's subnetworks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Rank: number of product terms.
    pub p: usize,
    /// Number of hidden layers.
    pub depth: usize,
    pub width: usize,
    #[serde(default)]
    pub activation: Activation,
}

/// Parameters of a single TNN.
#[derive(Clone, Debug, PartialEq)]
pub struct Tnn {
    pub coeffs: Array1<f64>,
    pub subnets: Vec<SubnetParams>,
    /// Additive constants per component for periodic dimensions.
    pub gammas: Vec<Option<Array1<f64>>>,
}

impl Tnn {
    pub fn rank(&self) -> usize {
        self.coeffs.len()
    }

    pub fn architecture(&self) -> Architecture {
        let s = &self.subnets[0];
        Architecture {
            p: self.rank(),
            depth: s.depth(),
            width: s.width(),
            activation: s.activation(),
        }
    }
}

/// `k` TNNs sharing dimension specs and quadrature.
#[derive(Clone, Debug, PartialEq)]
pub struct TnnModel {
    dims: Vec<DimensionSpec>,
    tnns: Vec<Tnn>,
    log_beta: Vec<Option<f64>>,
}

/// Offsets of every parameter block inside the flat vector.
#[derive(Clone, Debug)]
pub struct ParamLayout {
    pub tnns: Vec<TnnOffsets>,
    pub log_beta: Vec<Option<usize>>,
    pub total: usize,
}

#[derive(Clone, Debug)]
pub struct TnnOffsets {
    pub coeffs: usize,
    pub subnets: Vec<usize>,
    pub gammas: Vec<Option<usize>>,
}

impl TnnModel {
    /// Random initialization from a seed; deterministic across platforms.
    pub fn random(dims: Vec<DimensionSpec>, archs: &[Architecture], seed: u64) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one dimension".into()));
        }
        if archs.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one TNN".into()));
        }
        for d in &dims {
            d.validate()?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tnns = Vec::with_capacity(archs.len());
        for arch in archs {
            if arch.p == 0 || arch.width == 0 && arch.depth > 0 {
                return Err(Error::InvalidArgument(format!("invalid architecture {arch:?}")));
            }
            let coeffs = Array1::from_shape_simple_fn(arch.p, || rng.gen_range(-1.0..1.0));
            let subnets = dims
                .iter()
                .map(|_| SubnetParams::random(arch.depth, arch.width, arch.p, arch.activation, &mut rng))
                .collect();
            let gammas = dims
                .iter()
                .map(|d| matches!(d.kind, DimensionKind::PeriodicAngle { .. }).then(|| Array1::ones(arch.p)))
                .collect();
            tnns.push(Tnn { coeffs, subnets, gammas });
        }
        let log_beta = dims.iter().map(|d| d.kind.is_unbounded().then_some(0.0)).collect();
        Ok(Self { dims, tnns, log_beta })
    }

    /// Builds a model from explicit parts, validating shapes.
    pub fn from_parts(dims: Vec<DimensionSpec>, tnns: Vec<Tnn>, log_beta: Vec<Option<f64>>) -> Result<Self> {
        for d in &dims {
            d.validate()?;
        }
        if log_beta.len() != dims.len() {
            return Err(Error::Shape("one log-beta slot per dimension".into()));
        }
        for (i, d) in dims.iter().enumerate() {
            if d.kind.is_unbounded() != log_beta[i].is_some() {
                return Err(Error::Shape(format!("dimension {i}: beta present iff unbounded")));
            }
        }
        for (l, t) in tnns.iter().enumerate() {
            if t.subnets.len() != dims.len() || t.gammas.len() != dims.len() {
                return Err(Error::Shape(format!("tnn {l}: one subnetwork per dimension")));
            }
            for (i, s) in t.subnets.iter().enumerate() {
                if s.output_dim() != t.rank() {
                    return Err(Error::Shape(format!("tnn {l} dim {i}: output {} vs rank {}", s.output_dim(), t.rank())));
                }
                let periodic = matches!(dims[i].kind, DimensionKind::PeriodicAngle { .. });
                match &t.gammas[i] {
                    Some(g) if periodic && g.len() == t.rank() => {}
                    None if !periodic => {}
                    _ => return Err(Error::Shape(format!("tnn {l} dim {i}: gamma mismatch"))),
                }
            }
        }
        Ok(Self { dims, tnns, log_beta })
    }

    pub fn k(&self) -> usize {
        self.tnns.len()
    }

    pub fn d(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[DimensionSpec] {
        &self.dims
    }

    pub fn tnns(&self) -> &[Tnn] {
        &self.tnns
    }

    pub fn tnn_mut(&mut self, l: usize) -> &mut Tnn {
        &mut self.tnns[l]
    }

    pub fn architectures(&self) -> Vec<Architecture> {
        self.tnns.iter().map(Tnn::architecture).collect()
    }

    pub fn beta(&self, i: usize) -> Option<f64> {
        self.log_beta[i].map(f64::exp)
    }

    pub fn set_beta(&mut self, i: usize, beta: f64) -> Result<()> {
        if !(beta > 0.0) || self.log_beta[i].is_none() {
            return Err(Error::InvalidArgument(format!("cannot set beta {beta} on dimension {i}")));
        }
        self.log_beta[i] = Some(beta.ln());
        Ok(())
    }

    pub fn layout(&self) -> ParamLayout {
        let mut at = 0;
        let mut tnns = Vec::with_capacity(self.k());
        for t in &self.tnns {
            let coeffs = at;
            at += t.rank();
            let mut subnets = Vec::with_capacity(self.d());
            let mut gammas = Vec::with_capacity(self.d());
            for (s, g) in t.subnets.iter().zip(&t.gammas) {
                subnets.push(at);
                at += s.num_params();
                gammas.push(g.as_ref().map(|g| {
                    let off = at;
                    at += g.len();
                    off
                }));
            }
            tnns.push(TnnOffsets { coeffs, subnets, gammas });
        }
        let log_beta = self
            .log_beta
            .iter()
            .map(|b| {
                b.map(|_| {
                    let off = at;
                    at += 1;
                    off
                })
            })
            .collect();
        ParamLayout { tnns, log_beta, total: at }
    }

    pub fn num_params(&self) -> usize {
        self.layout().total
    }

    /// All parameters: per TNN `c`, then per dimension the subnetwork and
    /// (periodic only) γ; finally log β of each unbounded dimension.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for t in &self.tnns {
            out.extend(t.coeffs.iter().copied());
            for (s, g) in t.subnets.iter().zip(&t.gammas) {
                s.flatten_into(&mut out);
                if let Some(g) = g {
                    out.extend(g.iter().copied());
                }
            }
        }
        out.extend(self.log_beta.iter().flatten().copied());
        out
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        let need = self.num_params();
        if flat.len() != need {
            return Err(Error::Shape(format!("flat vector has {} entries, model needs {need}", flat.len())));
        }
        let mut at = 0;
        for t in &mut self.tnns {
            for c in t.coeffs.iter_mut() {
                *c = flat[at];
                at += 1;
            }
            for (s, g) in t.subnets.iter_mut().zip(t.gammas.iter_mut()) {
                at += s.unflatten_from(&flat[at..])?;
                if let Some(g) = g {
                    for v in g.iter_mut() {
                        *v = flat[at];
                        at += 1;
                    }
                }
            }
        }
        for b in self.log_beta.iter_mut().flatten() {
            *b = flat[at];
            at += 1;
        }
        Ok(())
    }

    /// Quadrature grids at the current β.
    pub fn grids(&self) -> Result<Vec<DimGrid>> {
        (0..self.d()).map(|i| DimGrid::new(&self.dims[i], self.beta(i))).collect()
    }

    /// Normalized reduced component arrays of TNN `l` in dimension `i`.
    pub fn component_values(&self, l: usize, i: usize, grid: &DimGrid) -> Result<ComponentTable> {
        let tnn = &self.tnns[l];
        let (raw, tape) = subnet::forward_with_tape(&tnn.subnets[i], &grid.net_inputs)?;
        let p = tnn.rank();
        let q = grid.len();
        let mut v = Array2::zeros((p, q));
        let mut dv = Array2::zeros((p, q));
        let gamma = tnn.gammas[i].as_ref();
        for j in 0..p {
            for n in 0..q {
                let phi = raw.values[[j, n]];
                let dphi = raw.input_derivs[[j, n]];
                let (val, der) = grid.envelope.apply(phi, dphi, grid, n);
                v[[j, n]] = val + gamma.map_or(0.0, |g| g[j]);
                dv[[j, n]] = der;
            }
        }
        let mut norms = Array1::zeros(p);
        let mut values = v.clone();
        let mut derivs = dv.clone();
        for j in 0..p {
            let s: f64 = (0..q).map(|n| grid.measure[n] * v[[j, n]] * v[[j, n]]).sum();
            let norm = s.sqrt();
            if !(norm >= MIN_COMPONENT_NORM) {
                return Err(Error::DegenerateComponent { tnn: l, dim: i, component: j, norm });
            }
            norms[j] = norm;
            values.row_mut(j).mapv_inplace(|x| x / norm);
            derivs.row_mut(j).mapv_inplace(|x| x / norm);
        }
        Ok(ComponentTable { values, derivs, norms, raw, tape, pre_values: v })
    }

    /// Reverse pass of [`Self::component_values`]: given adjoints of the
    /// normalized arrays, returns the gradient of this (TNN, dimension) block.
    pub fn component_backward(
        &self,
        l: usize,
        i: usize,
        grid: &DimGrid,
        table: &ComponentTable,
        bar_values: ArrayView2<f64>,
        bar_derivs: ArrayView2<f64>,
    ) -> Result<BlockGrad> {
        let tnn = &self.tnns[l];
        let p = tnn.rank();
        let q = grid.len();
        let mut bar_phi = Array2::zeros((p, q));
        let mut bar_dphi = Array2::zeros((p, q));
        let mut bar_beta = 0.0;
        let mut gamma = tnn.gammas[i].as_ref().map(|_| vec![0.0; p]);
        for j in 0..p {
            let norm = table.norms[j];
            let mut dot = 0.0;
            for n in 0..q {
                dot += bar_values[[j, n]] * table.values[[j, n]] + bar_derivs[[j, n]] * table.derivs[[j, n]];
            }
            let bar_norm = -dot / norm;
            let bar_s = bar_norm / (2.0 * norm);
            let mut bar_gamma = 0.0;
            for n in 0..q {
                let v = table.pre_values[[j, n]];
                let bar_v = bar_values[[j, n]] / norm + 2.0 * grid.measure[n] * v * bar_s;
                let bar_d = bar_derivs[[j, n]] / norm;
                bar_beta += v * v * bar_s * grid.dmeasure_dbeta[n];
                bar_gamma += bar_v;
                let phi = table.raw.values[[j, n]];
                let dphi = table.raw.input_derivs[[j, n]];
                let (bp, bdp, bb) = grid.envelope.backward(phi, dphi, bar_v, bar_d, grid, n);
                bar_phi[[j, n]] = bp;
                bar_dphi[[j, n]] = bdp;
                bar_beta += bb;
            }
            if let Some(g) = gamma.as_mut() {
                g[j] = bar_gamma;
            }
        }
        let mut subnet = vec![0.0; tnn.subnets[i].num_params()];
        subnet::backprop_tape(&tnn.subnets[i], &table.tape, bar_phi.view(), bar_dphi.view(), &mut subnet)?;
        Ok(BlockGrad { subnet, gamma, beta: bar_beta })
    }

    /// Point evaluator with cached normalization constants.
    pub fn point_evaluator(&self) -> Result<PointEvaluator<'_>> {
        let grids = self.grids()?;
        let mut norms = Vec::with_capacity(self.k());
        for l in 0..self.k() {
            let mut per_dim = Vec::with_capacity(self.d());
            for (i, g) in grids.iter().enumerate() {
                per_dim.push(self.component_values(l, i, g)?.norms);
            }
            norms.push(per_dim);
        }
        Ok(PointEvaluator { model: self, norms })
    }

    /// `Ψ_ℓ(x)` at a single physical point. Inspection only.
    pub fn evaluate_point(&self, l: usize, x: &[f64]) -> Result<f64> {
        self.point_evaluator()?.value(l, x)
    }
}

/// Gradient of one (TNN, dimension) block.
#[derive(Clone, Debug)]
pub struct BlockGrad {
    pub subnet: Vec<f64>,
    pub gamma: Option<Vec<f64>>,
    /// Derivative with respect to β (not log β); zero for bounded dimensions.
    pub beta: f64,
}

/// Normalized reduced component arrays (`p × Q`) plus what the reverse pass needs.
pub struct ComponentTable {
    pub values: Array2<f64>,
    pub derivs: Array2<f64>,
    pub norms: Array1<f64>,
    raw: BatchEval,
    tape: Tape,
    pre_values: Array2<f64>,
}

/// How raw subnetwork output maps to reduced component values.
#[derive(Clone, Copy, Debug)]
enum Envelope {
    /// `g(x) φ(x)` with `g = (x-a)(b-x)/((b-a)/2)²`.
    Dirichlet { a: f64, b: f64 },
    Natural,
    Periodic { period: f64 },
    Gaussian { beta: f64 },
    Exponential { beta: f64 },
}

impl Envelope {
    #[inline]
    fn apply(self, phi: f64, dphi: f64, grid: &DimGrid, n: usize) -> (f64, f64) {
        match self {
            Envelope::Dirichlet { a, b } => {
                let x = grid.phys[n];
                let (g, dg) = dirichlet_factor(a, b, x);
                (g * phi, dg * phi + g * dphi)
            }
            Envelope::Natural => (phi, dphi),
            Envelope::Periodic { period } => {
                let (s, ds) = periodic_factor(period, grid.phys[n]);
                (phi * s, dphi * s + phi * ds)
            }
            Envelope::Gaussian { beta } => (phi, beta * (dphi - grid.net_inputs[n] * phi)),
            Envelope::Exponential { beta } => (phi, beta * (dphi - 0.5 * phi)),
        }
    }

    /// Returns `(φ̄, φ̄', β̄)` given the adjoints of the reduced value and derivative.
    #[inline]
    fn backward(self, phi: f64, dphi: f64, bar_v: f64, bar_d: f64, grid: &DimGrid, n: usize) -> (f64, f64, f64) {
        match self {
            Envelope::Dirichlet { a, b } => {
                let (g, dg) = dirichlet_factor(a, b, grid.phys[n]);
                (bar_v * g + bar_d * dg, bar_d * g, 0.0)
            }
            Envelope::Natural => (bar_v, bar_d, 0.0),
            Envelope::Periodic { period } => {
                let (s, ds) = periodic_factor(period, grid.phys[n]);
                (bar_v * s + bar_d * ds, bar_d * s, 0.0)
            }
            Envelope::Gaussian { beta } => {
                let z = grid.net_inputs[n];
                (bar_v - beta * z * bar_d, beta * bar_d, bar_d * (dphi - z * phi))
            }
            Envelope::Exponential { beta } => {
                (bar_v - 0.5 * beta * bar_d, beta * bar_d, bar_d * (dphi - 0.5 * phi))
            }
        }
    }

    /// Physical value and derivative at an arbitrary point.
    fn physical(self, phi: f64, dphi: f64, x: f64) -> (f64, f64) {
        match self {
            Envelope::Dirichlet { a, b } => {
                let (g, dg) = dirichlet_factor(a, b, x);
                (g * phi, dg * phi + g * dphi)
            }
            Envelope::Natural => (phi, dphi),
            Envelope::Periodic { period } => {
                let (s, ds) = periodic_factor(period, x);
                (phi * s, dphi * s + phi * ds)
            }
            Envelope::Gaussian { beta } => {
                let z = beta * x;
                let e = (-0.5 * z * z).exp();
                (e * phi, beta * e * (dphi - z * phi))
            }
            Envelope::Exponential { beta } => {
                let z = beta * x;
                let e = (-0.5 * z).exp();
                (e * phi, beta * e * (dphi - 0.5 * phi))
            }
        }
    }
}

#[inline]
fn dirichlet_factor(a: f64, b: f64, x: f64) -> (f64, f64) {
    let half = 0.5 * (b - a);
    let s = 1.0 / (half * half);
    ((x - a) * (b - x) * s, ((b - x) - (x - a)) * s)
}

#[inline]
fn periodic_factor(period: f64, x: f64) -> (f64, f64) {
    let w = PI / period;
    let (s, c) = (w * x).sin_cos();
    (s, w * c)
}

/// Quadrature grid of one dimension in physical and network coordinates.
#[derive(Clone, Debug)]
pub struct DimGrid {
    /// Inputs fed to the subnetwork (`z = βx` for unbounded dimensions).
    pub net_inputs: Vec<f64>,
    /// Physical nodes `x_q`, where kernel weights are evaluated.
    pub phys: Vec<f64>,
    /// Reduced quadrature weights `ω_q`.
    pub weights: Vec<f64>,
    /// `∂ω_q/∂β` (zero for bounded dimensions).
    pub dweights_dbeta: Vec<f64>,
    /// `ln` of the envelope at each node.
    pub ln_env: Vec<f64>,
    /// `ω_q · measure(x_q)`, the normalization measure.
    pub measure: Vec<f64>,
    pub dmeasure_dbeta: Vec<f64>,
    pub beta: Option<f64>,
    envelope: Envelope,
}

impl DimGrid {
    pub fn new(spec: &DimensionSpec, beta: Option<f64>) -> Result<Self> {
        spec.validate()?;
        let rule = quadrature::rule(spec.rule_kind())?;
        let z = rule.nodes().to_vec();
        let w = rule.weights();
        let (envelope, phys, weights, dweights, ln_env) = match spec.kind {
            DimensionKind::BoundedDirichlet { a, b } => {
                (Envelope::Dirichlet { a, b }, z.clone(), w.to_vec(), vec![0.0; z.len()], vec![0.0; z.len()])
            }
            DimensionKind::BoundedNatural { .. } => {
                (Envelope::Natural, z.clone(), w.to_vec(), vec![0.0; z.len()], vec![0.0; z.len()])
            }
            DimensionKind::PeriodicAngle { period } => {
                (Envelope::Periodic { period }, z.clone(), w.to_vec(), vec![0.0; z.len()], vec![0.0; z.len()])
            }
            DimensionKind::WholeLine | DimensionKind::HalfLine => {
                let beta = beta.ok_or_else(|| Error::InvalidArgument("unbounded dimension needs beta".into()))?;
                if !(beta > 0.0) || !beta.is_finite() {
                    return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
                }
                let phys: Vec<f64> = z.iter().map(|&t| t / beta).collect();
                let weights: Vec<f64> = w.iter().map(|&t| t / beta).collect();
                let dweights = weights.iter().map(|&t| -t / beta).collect();
                let (env, ln_env) = if spec.kind == DimensionKind::WholeLine {
                    (Envelope::Gaussian { beta }, z.iter().map(|&t| -0.5 * t * t).collect())
                } else {
                    (Envelope::Exponential { beta }, z.iter().map(|&t| -0.5 * t).collect())
                };
                (env, phys, weights, dweights, ln_env)
            }
        };
        let mut grid = DimGrid {
            net_inputs: z,
            phys,
            weights,
            dweights_dbeta: dweights,
            ln_env,
            measure: Vec::new(),
            dmeasure_dbeta: Vec::new(),
            beta: if spec.kind.is_unbounded() { beta } else { None },
            envelope,
        };
        let (m, dm) = grid.kernel_weights(spec.measure);
        grid.measure = m;
        grid.dmeasure_dbeta = dm;
        Ok(grid)
    }

    pub fn len(&self) -> usize {
        self.phys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phys.is_empty()
    }

    /// `ω_q W(x_q)` and its β-derivative.
    pub fn kernel_weights(&self, weight: Weight) -> (Vec<f64>, Vec<f64>) {
        let vals: Vec<f64> = self
            .phys
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * weight.value(x))
            .collect();
        let dvals = match self.beta {
            // x = z/β, ω = w/β  ⇒  ∂(ωW)/∂β = -(ω/β)(W + x W')
            Some(beta) => self
                .phys
                .iter()
                .zip(&self.weights)
                .map(|(&x, &w)| -(w / beta) * (weight.value(x) + x * weight.deriv(x)))
                .collect(),
            None => vec![0.0; self.len()],
        };
        (vals, dvals)
    }
}

/// Evaluates TNNs at arbitrary physical points.
pub struct PointEvaluator<'a> {
    model: &'a TnnModel,
    norms: Vec<Vec<Array1<f64>>>,
}

impl PointEvaluator<'_> {
    /// Normalized physical component values and derivatives of TNN `l` at `x` in dimension `i`.
    pub fn component(&self, l: usize, i: usize, x: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let m = self.model;
        let tnn = &m.tnns[l];
        let spec = &m.dims[i];
        let (input, envelope) = match spec.kind {
            DimensionKind::BoundedDirichlet { a, b } => (x, Envelope::Dirichlet { a, b }),
            DimensionKind::BoundedNatural { .. } => (x, Envelope::Natural),
            DimensionKind::PeriodicAngle { period } => (x, Envelope::Periodic { period }),
            DimensionKind::WholeLine => {
                let beta = m.beta(i).expect("unbounded");
                (beta * x, Envelope::Gaussian { beta })
            }
            DimensionKind::HalfLine => {
                let beta = m.beta(i).expect("unbounded");
                (beta * x, Envelope::Exponential { beta })
            }
        };
        let raw = subnet::forward_batch(&tnn.subnets[i], &[input])?;
        let p = tnn.rank();
        let mut vals = Vec::with_capacity(p);
        let mut ders = Vec::with_capacity(p);
        for j in 0..p {
            let (mut v, d) = envelope.physical(raw.values[[j, 0]], raw.input_derivs[[j, 0]], x);
            if let Some(g) = &tnn.gammas[i] {
                v += g[j];
            }
            let n = self.norms[l][i][j];
            vals.push(v / n);
            ders.push(d / n);
        }
        Ok((vals, ders))
    }

    pub fn value(&self, l: usize, x: &[f64]) -> Result<f64> {
        Ok(self.value_and_gradient(l, x)?.0)
    }

    /// `Ψ_ℓ(x)` and `∇Ψ_ℓ(x)`.
    pub fn value_and_gradient(&self, l: usize, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let m = self.model;
        if x.len() != m.d() {
            return Err(Error::Shape(format!("point has {} coordinates, model has {}", x.len(), m.d())));
        }
        let comps: Vec<(Vec<f64>, Vec<f64>)> = (0..m.d()).map(|i| self.component(l, i, x[i])).collect::<Result<_>>()?;
        let c = &m.tnns[l].coeffs;
        let mut value = 0.0;
        let mut grad = vec![0.0; m.d()];
        for j in 0..c.len() {
            let prod: f64 = comps.iter().map(|(v, _)| v[j]).product();
            value += c[j] * prod;
            for s in 0..m.d() {
                let others: f64 = comps
                    .iter()
                    .enumerate()
                    .map(|(i, (v, d))| if i == s { d[j] } else { v[j] })
                    .product();
                grad[s] += c[j] * others;
            }
        }
        Ok((value, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subnet::Dense;
    use ndarray::array;

    fn constant_net(p: usize, value: f64) -> SubnetParams {
        SubnetParams::new(
            vec![Dense {
                weight: Array2::zeros((p, 1)),
                bias: Array1::from_elem(p, value),
            }],
            Activation::Sin,
        )
        .unwrap()
    }

    fn linear_net(slope: f64) -> SubnetParams {
        SubnetParams::new(
            vec![Dense {
                weight: array![[slope]],
                bias: array![0.0],
            }],
            Activation::Sin,
        )
        .unwrap()
    }

    fn single(dims: Vec<DimensionSpec>, subnets: Vec<SubnetParams>, c: f64) -> TnnModel {
        let d = dims.len();
        let log_beta = dims.iter().map(|s| s.kind.is_unbounded().then_some(0.0)).collect();
        let gammas = dims
            .iter()
            .map(|s| matches!(s.kind, DimensionKind::PeriodicAngle { .. }).then(|| Array1::zeros(1)))
            .collect();
        assert_eq!(subnets.len(), d);
        TnnModel::from_parts(dims, vec![Tnn { coeffs: array![c], subnets, gammas }], log_beta).unwrap()
    }

    fn unit_natural() -> DimensionSpec {
        DimensionSpec::new(DimensionKind::BoundedNatural { a: 0.0, b: 1.0 }, 4, 8)
    }

    #[test]
    fn constant_component_is_already_normalized() {
        let m = single(vec![unit_natural()], vec![constant_net(1, 1.0)], 1.0);
        let grid = &m.grids().unwrap()[0];
        let t = m.component_values(0, 0, grid).unwrap();
        assert!(t.values.iter().all(|&v| (v - 1.0).abs() < 1e-14));
        assert!(t.derivs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_component_normalizes_to_sqrt3_x() {
        let m = single(vec![unit_natural()], vec![linear_net(2.0)], 1.0);
        let grid = &m.grids().unwrap()[0];
        let t = m.component_values(0, 0, grid).unwrap();
        for (q, &x) in grid.phys.iter().enumerate() {
            assert!((t.values[[0, q]] - 3f64.sqrt() * x).abs() < 1e-13);
            assert!((t.derivs[[0, q]] - 3f64.sqrt()).abs() < 1e-13);
        }
    }

    #[test]
    fn gaussian_norm_matches_closed_form() {
        let spec = DimensionSpec::new(DimensionKind::WholeLine, 1, 30);
        let m = single(vec![spec], vec![constant_net(1, 1.0)], 1.0);
        let grid = &m.grids().unwrap()[0];
        let t = m.component_values(0, 0, grid).unwrap();
        assert!((t.norms[0] - PI.powf(0.25)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_component_rejected() {
        let m = single(vec![unit_natural()], vec![constant_net(1, 0.0)], 1.0);
        let grid = &m.grids().unwrap()[0];
        assert!(matches!(
            m.component_values(0, 0, grid),
            Err(Error::DegenerateComponent { tnn: 0, dim: 0, component: 0, .. })
        ));
    }

    #[test]
    fn point_values() {
        let m = single(vec![unit_natural(), unit_natural()], vec![constant_net(1, 3.0), constant_net(1, 0.5)], 5.0);
        assert!((m.evaluate_point(0, &[0.3, 0.9]).unwrap() - 5.0).abs() < 1e-13);
        let m = single(vec![unit_natural(), unit_natural()], vec![linear_net(1.0), linear_net(4.0)], 1.0);
        assert!((m.evaluate_point(0, &[0.5, 0.2]).unwrap() - 3.0 * 0.5 * 0.2).abs() < 1e-13);
    }

    fn mixed_model(seed: u64) -> TnnModel {
        let dims = vec![
            DimensionSpec::new(DimensionKind::BoundedDirichlet { a: -1.0, b: 2.0 }, 2, 6),
            DimensionSpec::new(DimensionKind::WholeLine, 1, 20),
            DimensionSpec::new(DimensionKind::PeriodicAngle { period: 2.0 * PI }, 4, 5),
        ];
        let arch = Architecture { p: 3, depth: 2, width: 5, activation: Activation::Sin };
        TnnModel::random(dims, &[arch, arch], seed).unwrap()
    }

    #[test]
    fn normalized_components_have_unit_norm() {
        let m = mixed_model(3);
        let grids = m.grids().unwrap();
        for l in 0..m.k() {
            for (i, g) in grids.iter().enumerate() {
                let t = m.component_values(l, i, g).unwrap();
                for j in 0..3 {
                    let s: f64 = (0..g.len()).map(|q| g.measure[q] * t.values[[j, q]].powi(2)).sum();
                    assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn periodic_component_matches_at_endpoints() {
        let m = mixed_model(5);
        let ev = m.point_evaluator().unwrap();
        let (v0, _) = ev.component(0, 2, 0.0).unwrap();
        let (v1, _) = ev.component(0, 2, 2.0 * PI).unwrap();
        for (a, b) in v0.iter().zip(&v1) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn scaling_coefficients_scales_value() {
        let mut m = mixed_model(6);
        let x = [0.1, 0.4, 1.0];
        let v = m.evaluate_point(1, &x).unwrap();
        m.tnn_mut(1).coeffs.mapv_inplace(|c| 2.5 * c);
        let v2 = m.evaluate_point(1, &x).unwrap();
        assert!((v2 - 2.5 * v).abs() <= 1e-14 * v.abs().max(1.0));
    }

    #[test]
    fn point_evaluation_matches_component_tables() {
        let m = mixed_model(8);
        let grids = m.grids().unwrap();
        let ev = m.point_evaluator().unwrap();
        for l in 0..m.k() {
            let tables: Vec<_> = (0..3).map(|i| m.component_values(l, i, &grids[i]).unwrap()).collect();
            for &(q0, q1, q2) in &[(0, 0, 0), (3, 7, 11), (11, 19, 19), (5, 10, 2)] {
                let x = [grids[0].phys[q0], grids[1].phys[q1], grids[2].phys[q2]];
                let env = grids[1].ln_env[q1].exp();
                let c = &m.tnns()[l].coeffs;
                let recon: f64 = (0..3)
                    .map(|j| c[j] * tables[0].values[[j, q0]] * tables[1].values[[j, q1]] * env * tables[2].values[[j, q2]])
                    .sum();
                let direct = ev.value(l, &x).unwrap();
                assert!((recon - direct).abs() <= 1e-13 * direct.abs().max(1e-3), "{recon} vs {direct}");
            }
        }
    }

    #[test]
    fn flatten_round_trip_is_bit_exact() {
        let m = mixed_model(9);
        let flat = m.flatten();
        assert_eq!(flat.len(), m.num_params());
        let mut other = mixed_model(10);
        other.unflatten(&flat).unwrap();
        assert_eq!(other, m);
        let back = other.flatten();
        assert!(flat.iter().zip(&back).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn zeros_round_trip() {
        let mut m = mixed_model(11);
        let zeros = vec![0.0; m.num_params()];
        m.unflatten(&zeros).unwrap();
        assert!(m.flatten().iter().all(|&v| v == 0.0));
        assert!(m.unflatten(&zeros[1..]).is_err());
    }

    #[test]
    fn each_flat_entry_touches_one_parameter() {
        let base = mixed_model(12);
        let flat = base.flatten();
        for t in 0..flat.len() {
            let mut perturbed = flat.clone();
            perturbed[t] += 1.0;
            let mut m = base.clone();
            m.unflatten(&perturbed).unwrap();
            let after = m.flatten();
            let changed = after.iter().zip(&flat).filter(|(a, b)| a != b).count();
            assert_eq!(changed, 1);
            assert_ne!(m, base);
        }
    }
}
