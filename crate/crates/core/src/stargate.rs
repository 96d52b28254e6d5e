//! The ring-successor ("stargate") task: learn a projector `h` and a
//! transformation `T` so that `T(h(y_i)) = h(y_σ(i))` around a closed ring.

use crate::array::Array;
use crate::autodiff::{backward, Tape, Var};
use crate::error::{Error, Result};
use crate::losses::variance_hinge;
use crate::nn::{
    load_named, Activation, AdamConfig, AdamState, Binding, FilmrInit, FilmrParams, FilmrVars,
    MlpParams, MlpVars, NamedArrays, Parameters,
};
use crate::rng::{Rng, RngState};
use crate::trace::TrainingTrace;
use crate::viz::pca_fit;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RingLayout {
    /// `y_i = (-1 + 2i/(N-1), 0, ..., 0)`.
    HorizontalLine,
    /// `y_i = (i/(N-1)) (1, ..., 1)`.
    DiagonalOnes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuccessorKind {
    /// `σ(i) = (i + 1) mod N`.
    Next,
    /// `σ(i) = (i + 7) mod 12`.
    Fifths,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RingTask {
    pub source_points: Array,
    pub successor: Vec<usize>,
    pub layout: RingLayout,
}

impl RingTask {
    pub fn len(&self) -> usize {
        self.successor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.successor.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.source_points.cols()
    }
}

pub fn successor_map(n_points: usize, kind: SuccessorKind) -> Result<Vec<usize>> {
    match kind {
        SuccessorKind::Next => Ok((0..n_points).map(|i| (i + 1) % n_points).collect()),
        SuccessorKind::Fifths if n_points == 12 => Ok((0..12).map(|i| (i + 7) % 12).collect()),
        SuccessorKind::Fifths => Err(Error::Config(format!(
            "the fifths successor needs 12 points, got {n_points}"
        ))),
    }
}

/// True when following `successor` from 0 visits every index once before returning.
pub fn is_single_cycle(successor: &[usize]) -> bool {
    let n = successor.len();
    if n == 0 || successor.iter().any(|&s| s >= n) {
        return false;
    }
    let mut i = 0;
    for step in 1..=n {
        i = successor[i];
        if i == 0 {
            return step == n;
        }
    }
    false
}

pub fn make_ring_task(
    n_points: usize,
    dim: usize,
    layout: RingLayout,
    kind: SuccessorKind,
) -> Result<RingTask> {
    if n_points == 0 {
        return Err(Error::Config("a ring needs at least one point".into()));
    }
    if dim < 2 {
        return Err(Error::Config("ring ambient dimension must be >= 2".into()));
    }
    let successor = successor_map(n_points, kind)?;
    let denom = n_points.saturating_sub(1).max(1) as f64;
    let mut y = Array::zeros(n_points, dim);
    for i in 0..n_points {
        let t = i as f64 / denom;
        match layout {
            RingLayout::HorizontalLine => y.set(i, 0, -1.0 + 2.0 * t),
            RingLayout::DiagonalOnes => {
                for k in 0..dim {
                    y.set(i, k, t);
                }
            }
        }
    }
    Ok(RingTask {
        source_points: y,
        successor,
        layout,
    })
}

/// `P` with `(P z)_i = z_σ(i)`.
pub fn successor_matrix(successor: &[usize]) -> Array {
    let n = successor.len();
    let mut p = Array::zeros(n, n);
    for (i, &s) in successor.iter().enumerate() {
        p.set(i, s, 1.0);
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    Filmr,
    FreeMatrix,
    /// A square matrix projected back onto the orthogonal group after every update.
    OrthogonalizedMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Transform {
    Filmr(FilmrParams),
    /// Row-vector map `z -> z W`.
    FreeMatrix(Array),
    OrthogonalizedMatrix(Array),
}

impl Transform {
    pub fn init(
        kind: TransformKind,
        dim: usize,
        scalar_affine: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(match kind {
            TransformKind::Filmr => Transform::Filmr(FilmrParams::init(
                dim,
                FilmrInit::default(),
                scalar_affine,
                rng,
            )?),
            TransformKind::FreeMatrix => {
                Transform::FreeMatrix(rng.normal_array(dim, dim, (1.0 / dim as f64).sqrt()))
            }
            TransformKind::OrthogonalizedMatrix => {
                let w = rng.normal_array(dim, dim, (1.0 / dim as f64).sqrt());
                Transform::OrthogonalizedMatrix(orthogonalize(&w))
            }
        })
    }

    pub fn kind(&self) -> TransformKind {
        match self {
            Transform::Filmr(_) => TransformKind::Filmr,
            Transform::FreeMatrix(_) => TransformKind::FreeMatrix,
            Transform::OrthogonalizedMatrix(_) => TransformKind::OrthogonalizedMatrix,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Transform::Filmr(p) => p.dim(),
            Transform::FreeMatrix(w) | Transform::OrthogonalizedMatrix(w) => w.rows(),
        }
    }

    pub fn bind<'t>(&self, binding: &mut Binding<'t>, prefix: &str) -> TransformVars<'t> {
        match self {
            Transform::Filmr(p) => TransformVars::Filmr(p.bind(binding, prefix)),
            Transform::FreeMatrix(w) | Transform::OrthogonalizedMatrix(w) => {
                TransformVars::Matrix(binding.param(format!("{prefix}.matrix"), w))
            }
        }
    }

    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> TransformVars<'t> {
        match self {
            Transform::Filmr(p) => TransformVars::Filmr(FilmrVars {
                gamma: tape.constant(p.gamma.clone()),
                beta: tape.constant(p.beta.clone()),
                u: tape.constant(p.u.clone()),
                v: tape.constant(p.v.clone()),
            }),
            Transform::FreeMatrix(w) | Transform::OrthogonalizedMatrix(w) => {
                TransformVars::Matrix(tape.constant(w.clone()))
            }
        }
    }

    pub fn apply(&self, z: &Array) -> Result<Array> {
        match self {
            Transform::Filmr(p) => p.forward(z),
            Transform::FreeMatrix(w) | Transform::OrthogonalizedMatrix(w) => z.matmul(w),
        }
    }

    /// Called after every optimizer update.
    fn project(&mut self) {
        if let Transform::OrthogonalizedMatrix(w) = self {
            *w = orthogonalize(w);
        }
    }
}

impl Parameters for Transform {
    fn named(&self, prefix: &str) -> Vec<(String, &Array)> {
        match self {
            Transform::Filmr(p) => p.named(prefix),
            Transform::FreeMatrix(w) | Transform::OrthogonalizedMatrix(w) => {
                vec![(format!("{prefix}.matrix"), w)]
            }
        }
    }

    fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Array)> {
        match self {
            Transform::Filmr(p) => p.named_mut(prefix),
            Transform::FreeMatrix(w) | Transform::OrthogonalizedMatrix(w) => {
                vec![(format!("{prefix}.matrix"), w)]
            }
        }
    }
}

pub enum TransformVars<'t> {
    Filmr(FilmrVars<'t>),
    Matrix(Var<'t>),
}

impl<'t> TransformVars<'t> {
    pub fn forward(&self, z: Var<'t>) -> Result<Var<'t>> {
        match self {
            TransformVars::Filmr(p) => p.forward(z),
            TransformVars::Matrix(w) => z.matmul(*w),
        }
    }
}

/// Nearest orthogonal matrix (polar factor) by Newton–Schulz iteration.
pub fn orthogonalize(w: &Array) -> Array {
    let n = w.rows();
    let eye = Array::identity(n);
    let fro = w.norm();
    let mut x = if fro >= 1.7 {
        w.scale(1.0 / fro)
    } else {
        w.clone()
    };
    for _ in 0..100 {
        let xtx = x.transpose().matmul(&x).expect("square");
        if xtx.sub(&eye).expect("square").norm() < 1e-12 {
            break;
        }
        x = x
            .scale(1.5)
            .sub(&x.matmul(&xtx).expect("square").scale(0.5))
            .expect("square");
    }
    x
}

#[derive(Debug, Clone, PartialEq)]
pub struct StargateModel {
    pub h: MlpParams,
    pub transform: Transform,
}

impl StargateModel {
    pub fn init(
        input_dim: usize,
        hidden: &[usize],
        latent_dim: usize,
        kind: TransformKind,
        scalar_affine: bool,
        plane_spread: Option<f64>,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(latent_dim);
        let h = MlpParams::stack(&sizes, Activation::Tanh, rng)?;
        let mut transform = Transform::init(kind, latent_dim, scalar_affine, rng)?;
        if let (Some(spread), Transform::Filmr(p)) = (plane_spread, &mut transform) {
            p.narrow_plane(spread, rng);
        }
        Ok(Self { h, transform })
    }

    pub fn latents(&self, task: &RingTask) -> Result<Array> {
        self.h.forward(&task.source_points)
    }

    fn check(&self, task: &RingTask) -> Result<()> {
        if self.h.input_dim() != task.dim() || self.h.output_dim() != self.transform.dim() {
            return Err(Error::Shape(format!(
                "model maps {} -> {} with a {}-D transform; task points are {}-D",
                self.h.input_dim(),
                self.h.output_dim(),
                self.transform.dim(),
                task.dim()
            )));
        }
        Ok(())
    }
}

impl Parameters for StargateModel {
    fn named(&self, prefix: &str) -> Vec<(String, &Array)> {
        let p = |s: &str| {
            if prefix.is_empty() {
                s.to_string()
            } else {
                format!("{prefix}.{s}")
            }
        };
        let mut out = self.h.named(&p("h"));
        out.extend(self.transform.named(&p("T")));
        out
    }

    fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Array)> {
        let p = |s: &str| {
            if prefix.is_empty() {
                s.to_string()
            } else {
                format!("{prefix}.{s}")
            }
        };
        let mut out = self.h.named_mut(&p("h"));
        out.extend(self.transform.named_mut(&p("T")));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StargateLossReport {
    pub successor_loss: f64,
    pub variance_penalty: f64,
    pub total: f64,
}

pub struct StargateLossVars<'t> {
    pub successor_loss: Var<'t>,
    pub variance_penalty: Var<'t>,
    pub total: Var<'t>,
}

impl StargateLossVars<'_> {
    pub fn report(&self) -> StargateLossReport {
        StargateLossReport {
            successor_loss: self.successor_loss.item(),
            variance_penalty: self.variance_penalty.item(),
            total: self.total.item(),
        }
    }
}

/// `(1/N) Σ_i |T(z_i) - z_σ(i)|²` for latents `z`.
pub fn successor_error<'t>(
    z: Var<'t>,
    transform: &TransformVars<'t>,
    successor: &[usize],
) -> Result<Var<'t>> {
    let n = successor.len();
    if z.shape().0 != n || n == 0 {
        return Err(Error::Shape(format!(
            "{} latents for a ring of {n}",
            z.shape().0
        )));
    }
    let target = z.tape().constant(successor_matrix(successor)).matmul(z)?;
    Ok(transform
        .forward(z)?
        .sub(target)?
        .square()
        .sum()
        .scale(1.0 / n as f64))
}

pub fn stargate_loss_vars<'t>(
    h: &MlpVars<'t>,
    transform: &TransformVars<'t>,
    task: &RingTask,
    var_weight: f64,
) -> Result<StargateLossVars<'t>> {
    let z = h.forward(h.tape().constant(task.source_points.clone()))?;
    let successor_loss = successor_error(z, transform, &task.successor)?;
    let variance_penalty = variance_hinge(z)?.sum();
    let total = successor_loss.add(variance_penalty.scale(var_weight))?;
    Ok(StargateLossVars {
        successor_loss,
        variance_penalty,
        total,
    })
}

pub fn stargate_loss(
    model: &StargateModel,
    task: &RingTask,
    var_weight: f64,
) -> Result<StargateLossReport> {
    model.check(task)?;
    let tape = Tape::new();
    let h = model.h.bind_frozen(&tape);
    let t = model.transform.bind_frozen(&tape);
    Ok(stargate_loss_vars(&h, &t, task, var_weight)?.report())
}

/// Geometry of a learned ring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingQuality {
    /// Mean `|T(z_i) - z_σ(i)|`, relative to the ring radius.
    pub closure_error: f64,
    /// Population std of the signed angular steps `i -> σ(i)` in the top-2
    /// principal plane, in degrees.
    pub angular_gap_std: f64,
    /// `1 - λ₂/λ₁` of the latent covariance.
    pub collinearity: f64,
    /// Mean distance of the latents from their centroid.
    pub ring_radius: f64,
}

impl RingQuality {
    pub fn fields(&self) -> [(&'static str, f64); 4] {
        [
            ("closure_error", self.closure_error),
            ("angular_gap_std", self.angular_gap_std),
            ("collinearity", self.collinearity),
            ("ring_radius", self.ring_radius),
        ]
    }
}

fn wrap_degrees(mut d: f64) -> f64 {
    while d <= -180.0 {
        d += 360.0;
    }
    while d > 180.0 {
        d -= 360.0;
    }
    d
}

/// Quality of latents `z` with images `tz = T(z)` under successor map `σ`.
pub fn ring_quality(z: &Array, tz: &Array, successor: &[usize]) -> Result<RingQuality> {
    let (n, d) = z.shape();
    if tz.shape() != z.shape() || successor.len() != n || n == 0 {
        return Err(Error::Shape(format!(
            "ring quality needs matching latents {:?}, images {:?} and {} successors",
            z.shape(),
            tz.shape(),
            successor.len()
        )));
    }
    let centroid = z.mean_rows();
    let centered = z.sub_row(&centroid)?;
    let ring_radius = (0..n)
        .map(|i| Array::row(centered.row_slice(i)).norm())
        .sum::<f64>()
        / n as f64;
    let closure = (0..n)
        .map(|i| {
            Array::row(tz.row_slice(i))
                .sub(&Array::row(z.row_slice(successor[i])))
                .expect("same width")
                .norm()
        })
        .sum::<f64>()
        / n as f64;
    let closure_error = closure / ring_radius.max(1e-8);

    let (collinearity, angular_gap_std) = if n < 2 || d < 2 {
        (1.0, 0.0)
    } else {
        let pca = pca_fit(z, 2)?;
        let (l1, l2) = (pca.eigenvalues[0], pca.eigenvalues[1]);
        let collinearity = if l1 <= 1e-300 {
            1.0
        } else {
            (1.0 - l2 / l1).clamp(0.0, 1.0)
        };
        let gap_std = if n < 3 {
            0.0
        } else {
            let p = pca.project(z)?;
            let angle = |i: usize| p.get(i, 1).atan2(p.get(i, 0)).to_degrees();
            let gaps: Vec<f64> = (0..n)
                .map(|i| wrap_degrees(angle(successor[i]) - angle(i)))
                .collect();
            let mean = gaps.iter().sum::<f64>() / n as f64;
            (gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / n as f64).sqrt()
        };
        (collinearity, gap_std)
    };
    Ok(RingQuality {
        closure_error,
        angular_gap_std,
        collinearity,
        ring_radius,
    })
}

pub fn model_quality(model: &StargateModel, task: &RingTask) -> Result<RingQuality> {
    let z = model.latents(task)?;
    let tz = model.transform.apply(&z)?;
    ring_quality(&z, &tz, &task.successor)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StargateConfig {
    pub n_points: usize,
    pub input_dim: usize,
    pub layout: RingLayout,
    pub successor: SuccessorKind,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub transform: TransformKind,
    /// FiLMR `γ, β` as shared scalars instead of per-dimension rows.
    pub scalar_affine: bool,
    /// When set, FiLMR starts with `v = u + plane_spread·ξ`.
    pub plane_spread: Option<f64>,
    pub steps: u64,
    pub frame_interval: u64,
    pub lr: f64,
    pub var_weight: f64,
    pub seed: u64,
}

impl Default for StargateConfig {
    fn default() -> Self {
        Self {
            n_points: 12,
            input_dim: 2,
            layout: RingLayout::HorizontalLine,
            successor: SuccessorKind::Next,
            hidden: vec![32, 32],
            latent_dim: 2,
            transform: TransformKind::Filmr,
            scalar_affine: false,
            plane_spread: None,
            steps: 5000,
            frame_interval: 100,
            lr: 3e-3,
            var_weight: 0.1,
            seed: 0,
        }
    }
}

impl StargateConfig {
    pub fn task(&self) -> Result<RingTask> {
        make_ring_task(self.n_points, self.input_dim, self.layout, self.successor)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_interval == 0 {
            return Err(Error::Config("frame_interval must be positive".into()));
        }
        if !(self.lr >= 0.0)
            || !self.lr.is_finite()
            || !(self.var_weight >= 0.0)
            || !self.var_weight.is_finite()
        {
            return Err(Error::Config(
                "lr and var_weight must be finite and nonnegative".into(),
            ));
        }
        if self.latent_dim < 2 || self.hidden.contains(&0) {
            return Err(Error::Config(
                "latent_dim must be >= 2 and hidden sizes positive".into(),
            ));
        }
        self.task().map(|_| ())
    }
}

/// Resumable training loop recording frames every `frame_interval` steps.
pub struct StargateTrainer {
    pub config: StargateConfig,
    pub task: RingTask,
    pub model: StargateModel,
    pub adam: AdamState,
    pub step: u64,
    /// Generator state after initialization; the loop itself draws nothing.
    pub rng: RngState,
    pub trace: TrainingTrace,
}

impl StargateTrainer {
    pub fn new(config: StargateConfig) -> Result<Self> {
        config.validate()?;
        let task = config.task()?;
        let mut rng = Rng::seeded(config.seed);
        let model = StargateModel::init(
            task.dim(),
            &config.hidden,
            config.latent_dim,
            config.transform,
            config.scalar_affine,
            config.plane_spread,
            &mut rng,
        )?;
        let adam = AdamState::new(AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        });
        let mut t = Self {
            config,
            task,
            model,
            adam,
            step: 0,
            rng: rng.state(),
            trace: TrainingTrace::default(),
        };
        t.capture()?;
        Ok(t)
    }

    /// Rebuilds a trainer from saved state. The trace restarts empty.
    pub fn restore(
        config: StargateConfig,
        params: &NamedArrays,
        adam: AdamState,
        step: u64,
        rng: RngState,
    ) -> Result<Self> {
        let mut t = Self::new(config)?;
        load_named(&mut t.model, "", params)?;
        t.adam = adam;
        t.step = step;
        t.rng = rng;
        t.trace = TrainingTrace::default();
        Ok(t)
    }

    fn capture(&mut self) -> Result<()> {
        let z = self.model.latents(&self.task)?;
        let tz = self.model.transform.apply(&z)?;
        let q = ring_quality(&z, &tz, &self.task.successor)?;
        let loss = stargate_loss(&self.model, &self.task, self.config.var_weight)?;
        let mut values: Vec<(&'static str, f64)> = q.fields().to_vec();
        values.extend([
            ("successor_loss", loss.successor_loss),
            ("variance_penalty", loss.variance_penalty),
            ("total", loss.total),
        ]);
        self.trace.push_record(self.step, values);
        self.trace.push_frame(self.step, z);
        Ok(())
    }

    pub fn step_once(&mut self) -> Result<StargateLossReport> {
        let tape = Tape::new();
        let mut binding = Binding::new(&tape);
        let h = self.model.h.bind(&mut binding, "h");
        let t = self.model.transform.bind(&mut binding, "T");
        let loss = stargate_loss_vars(&h, &t, &self.task, self.config.var_weight)?;
        let report = loss.report();
        if !report.total.is_finite() {
            return Err(Error::Numeric(format!(
                "ring loss diverged at step {}: {report:?}",
                self.step + 1
            )));
        }
        let grads = binding.gradients(&backward(loss.total)?);
        self.adam.step(self.model.named_mut(""), &grads)?;
        self.model.transform.project();
        self.step += 1;
        if self.step.is_multiple_of(self.config.frame_interval) || self.step == self.config.steps {
            self.capture()?;
        }
        Ok(report)
    }

    pub fn run_until(&mut self, steps: u64) -> Result<()> {
        while self.step < steps {
            self.step_once()?;
        }
        Ok(())
    }

    pub fn params(&self) -> NamedArrays {
        self.model
            .named("")
            .into_iter()
            .map(|(k, v)| (k, v.clone()))
            .collect()
    }

    pub fn quality(&self) -> Result<RingQuality> {
        model_quality(&self.model, &self.task)
    }
}

pub struct StargateRun {
    pub model: StargateModel,
    pub trace: TrainingTrace,
    pub quality: RingQuality,
}

pub fn train_stargate(config: &StargateConfig) -> Result<StargateRun> {
    let mut trainer = StargateTrainer::new(config.clone())?;
    trainer.run_until(config.steps)?;
    let quality = trainer.quality()?;
    Ok(StargateRun {
        model: trainer.model,
        trace: trainer.trace,
        quality,
    })
}

/// The same protocol with a square-matrix transform.
pub fn square_matrix_baseline(config: &StargateConfig) -> Result<StargateRun> {
    if config.transform == TransformKind::Filmr {
        return Err(Error::Config(
            "the square-matrix baseline needs a matrix transform".into(),
        ));
    }
    train_stargate(config)
}

/// Second stage: fit a fresh FiLMR transform on frozen latents.
#[derive(Debug, Clone, PartialEq)]
pub struct RelabelConfig {
    pub successor: SuccessorKind,
    pub scalar_affine: bool,
    pub plane_spread: Option<f64>,
    pub steps: u64,
    pub lr: f64,
    pub seed: u64,
}

pub struct RelabelRun {
    pub transform: FilmrParams,
    pub trace: TrainingTrace,
    pub successor_loss: f64,
}

pub fn train_relabel(z: &Array, config: &RelabelConfig) -> Result<RelabelRun> {
    let successor = successor_map(z.rows(), config.successor)?;
    let mut rng = Rng::seeded(config.seed).fork(5);
    let mut params = FilmrParams::init(
        z.cols(),
        FilmrInit::default(),
        config.scalar_affine,
        &mut rng,
    )?;
    if let Some(spread) = config.plane_spread {
        params.narrow_plane(spread, &mut rng);
    }
    let mut adam = AdamState::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });
    let mut trace = TrainingTrace::default();
    let eval = |p: &FilmrParams| -> Result<f64> {
        let tape = Tape::new();
        let t = Transform::Filmr(p.clone()).bind_frozen(&tape);
        Ok(successor_error(tape.constant(z.clone()), &t, &successor)?.item())
    };
    trace.push_record(0, [("successor_loss", eval(&params)?)]);
    for step in 1..=config.steps {
        let tape = Tape::new();
        let mut binding = Binding::new(&tape);
        let t = TransformVars::Filmr(params.bind(&mut binding, "T5"));
        let loss = successor_error(tape.constant(z.clone()), &t, &successor)?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "relabel loss diverged at step {step}"
            )));
        }
        let grads = binding.gradients(&backward(loss)?);
        adam.step(params.named_mut("T5"), &grads)?;
        trace.push_record(step, [("successor_loss", eval(&params)?)]);
    }
    let successor_loss = eval(&params)?;
    Ok(RelabelRun {
        transform: params,
        trace,
        successor_loss,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FifthsConfig {
    pub ring: StargateConfig,
    pub relabel: RelabelConfig,
}

impl Default for FifthsConfig {
    fn default() -> Self {
        Self {
            ring: StargateConfig {
                input_dim: 64,
                layout: RingLayout::DiagonalOnes,
                latent_dim: 64,
                scalar_affine: true,
                plane_spread: Some(0.3),
                ..StargateConfig::default()
            },
            relabel: RelabelConfig {
                successor: SuccessorKind::Fifths,
                scalar_affine: true,
                plane_spread: None,
                steps: 3000,
                lr: 3e-3,
                seed: 0,
            },
        }
    }
}

pub struct FifthsRun {
    pub ring: StargateRun,
    pub latents: Array,
    pub relabel: RelabelRun,
}

impl FifthsRun {
    /// Largest per-point error of one application of the second transform.
    pub fn max_step_error(&self) -> Result<f64> {
        let tz = self.relabel.transform.forward(&self.latents)?;
        let succ = successor_map(self.latents.rows(), SuccessorKind::Fifths)?;
        Ok((0..tz.rows())
            .map(|i| {
                Array::row(tz.row_slice(i))
                    .sub(&Array::row(self.latents.row_slice(succ[i])))
                    .expect("same width")
                    .norm()
            })
            .fold(0.0, f64::max))
    }

    /// Per-point distance after applying the second transform `k` times.
    pub fn return_errors(&self, k: usize) -> Result<Vec<f64>> {
        let mut x = self.latents.clone();
        for _ in 0..k {
            x = self.relabel.transform.forward(&x)?;
        }
        Ok((0..x.rows())
            .map(|i| {
                Array::row(x.row_slice(i))
                    .sub(&Array::row(self.latents.row_slice(i)))
                    .expect("same width")
                    .norm()
            })
            .collect())
    }
}

pub fn circle_of_fifths_experiment(config: &FifthsConfig) -> Result<FifthsRun> {
    if config.ring.n_points != 12 {
        return Err(Error::Config("the circle of fifths uses 12 points".into()));
    }
    let ring = train_stargate(&config.ring)?;
    let latents = ring.model.latents(&config.ring.task()?)?;
    let relabel = train_relabel(&latents, &config.relabel)?;
    Ok(FifthsRun {
        ring,
        latents,
        relabel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use std::f64::consts::PI;

    fn unit_ring(n: usize) -> Array {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / n as f64;
                vec![a.cos(), a.sin()]
            })
            .collect();
        Array::from_rows(&rows).unwrap()
    }

    fn rotation_transform(n: usize) -> FilmrParams {
        // The rotation angle is twice the angle between u and v.
        let half = PI / n as f64;
        FilmrParams::new(
            Array::ones(1, 2),
            Array::zeros(1, 2),
            Array::row(&[1.0, 0.0]),
            Array::row(&[half.cos(), half.sin()]),
        )
        .unwrap()
    }

    fn frozen_error(z: &Array, t: &Transform, succ: &[usize]) -> f64 {
        let tape = Tape::new();
        let tv = t.bind_frozen(&tape);
        successor_error(tape.constant(z.clone()), &tv, succ)
            .unwrap()
            .item()
    }

    #[test]
    fn successor_maps() {
        assert_eq!(
            successor_map(12, SuccessorKind::Next).unwrap(),
            vec![1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 0]
        );
        let f = successor_map(12, SuccessorKind::Fifths).unwrap();
        assert_eq!((f[0], f[7]), (7, 2));
        assert!(is_single_cycle(&f));
        assert_eq!(successor_map(1, SuccessorKind::Next).unwrap(), vec![0]);
        assert!(matches!(
            successor_map(10, SuccessorKind::Fifths),
            Err(Error::Config(_))
        ));
        assert!(!is_single_cycle(&[1, 0, 2]));
    }

    #[test]
    fn layouts() {
        let t = make_ring_task(5, 3, RingLayout::HorizontalLine, SuccessorKind::Next).unwrap();
        assert_eq!(t.source_points.row_slice(0), &[-1.0, 0.0, 0.0]);
        assert_eq!(t.source_points.row_slice(2), &[0.0, 0.0, 0.0]);
        assert_eq!(t.source_points.row_slice(4), &[1.0, 0.0, 0.0]);
        let d = make_ring_task(5, 4, RingLayout::DiagonalOnes, SuccessorKind::Next).unwrap();
        assert_eq!(d.source_points.row_slice(1), &[0.25; 4]);
        assert!(is_single_cycle(&d.successor));
    }

    #[test]
    fn analytic_optimum_has_zero_loss() {
        for n in [3, 4, 12] {
            let z = unit_ring(n);
            let t = Transform::Filmr(rotation_transform(n));
            let succ = successor_map(n, SuccessorKind::Next).unwrap();
            assert!(frozen_error(&z, &t, &succ) < 1e-12);
        }
    }

    #[test]
    fn collapse_is_a_zero_of_the_raw_objective() {
        let z = Array::filled(12, 3, 0.25);
        let t = Transform::FreeMatrix(Array::identity(3));
        let succ = successor_map(12, SuccessorKind::Next).unwrap();
        assert_eq!(frozen_error(&z, &t, &succ), 0.0);
        let tape = Tape::new();
        let hinge = variance_hinge(tape.constant(z)).unwrap().sum().item();
        assert_eq!(hinge, 3.0);
    }

    #[test]
    fn exact_matrix_rotation_is_stationary() {
        let z = unit_ring(12);
        let a = 2.0 * PI / 12.0;
        let w = Array::from_rows(&[[a.cos(), a.sin()], [-a.sin(), a.cos()]]).unwrap();
        let succ = successor_map(12, SuccessorKind::Next).unwrap();
        let successor_loss_at =
            |w: &Array| frozen_error(&z, &Transform::FreeMatrix(w.clone()), &succ);
        assert!(successor_loss_at(&w) < 1e-28);
        // Plain gradient descent: Adam would renormalize round-off gradients
        // into full-size steps.
        let mut w_trained = w.clone();
        for _ in 0..50 {
            let tape = Tape::new();
            let mut b = Binding::new(&tape);
            let tv = Transform::FreeMatrix(w_trained.clone()).bind(&mut b, "T");
            let loss = successor_error(tape.constant(z.clone()), &tv, &succ).unwrap();
            let g = b.gradients(&backward(loss).unwrap());
            let gw = &g["T.matrix"];
            assert!(gw.max_abs() < 1e-14);
            w_trained = w_trained.sub(&gw.scale(0.1)).unwrap();
        }
        assert!(successor_loss_at(&w_trained) < 1e-28);
    }

    #[test]
    fn quality_of_perfect_ring() {
        let z = unit_ring(4);
        let t = rotation_transform(4);
        let q = ring_quality(&z, &t.forward(&z).unwrap(), &[1, 2, 3, 0]).unwrap();
        assert!(q.closure_error < 1e-12);
        assert!(q.angular_gap_std < 1e-9);
        assert!(q.collinearity < 1e-12);
        assert!((q.ring_radius - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quality_of_collinear_and_identical_points() {
        let line = Array::from_rows(&[[0.0, 0.0], [1.0, 2.0], [2.0, 4.0], [-1.0, -2.0]]).unwrap();
        let q = ring_quality(&line, &line, &[1, 2, 3, 0]).unwrap();
        assert!((q.collinearity - 1.0).abs() < 1e-12);
        let same = Array::filled(4, 2, 3.0);
        let q = ring_quality(&same, &same, &[1, 2, 3, 0]).unwrap();
        assert_eq!(q.collinearity, 1.0);
        assert_eq!(q.closure_error, 0.0);
    }

    #[test]
    fn quality_of_perturbed_ring_matches_direct_formula() {
        let mut z = unit_ring(4);
        z.set(0, 0, 1.1);
        let succ = [1, 2, 3, 0];
        let t = rotation_transform(4);
        let tz = t.forward(&z).unwrap();
        let q = ring_quality(&z, &tz, &succ).unwrap();

        // Independent evaluation. Centroid is (0.025, 0).
        let pts: [(f64, f64); 4] = [(1.1, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)];
        let c: (f64, f64) = (0.025, 0.0);
        let radius: f64 = pts
            .iter()
            .map(|p| ((p.0 - c.0).powi(2) + p.1.powi(2)).sqrt())
            .sum::<f64>()
            / 4.0;
        // A quarter turn sends (x, y) to (-y, x).
        let image = |p: (f64, f64)| (-p.1, p.0);
        let closure: f64 = (0..4)
            .map(|i| {
                let a = image(pts[i]);
                let b = pts[succ[i]];
                ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
            })
            .sum::<f64>()
            / 4.0;
        assert!((q.closure_error - closure / radius).abs() < 1e-12);
        // Covariance is diagonal, so the principal axes are x and y; gaps are
        // measured around the centroid.
        let ang: Vec<f64> = pts
            .iter()
            .map(|p| (p.1 - c.1).atan2(p.0 - c.0).to_degrees())
            .collect();
        let gaps: Vec<f64> = (0..4)
            .map(|i| wrap_degrees(ang[succ[i]] - ang[i]))
            .collect();
        let mean = gaps.iter().sum::<f64>() / 4.0;
        let std = (gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert!(std > 0.1);
        assert!(
            (q.angular_gap_std - std).abs() < 1e-9,
            "{} vs {std}",
            q.angular_gap_std
        );
    }

    #[test]
    fn orthogonalize_gives_orthogonal_polar_factor() {
        let mut rng = Rng::seeded(3);
        let w = rng.normal_array(5, 5, 1.0);
        let q = orthogonalize(&w);
        let qtq = q.transpose().matmul(&q).unwrap();
        assert!(qtq.sub(&Array::identity(5)).unwrap().max_abs() < 1e-10);
        // Polar factor: Qᵀ W is symmetric.
        let s = q.transpose().matmul(&w).unwrap();
        assert!(s.sub(&s.transpose()).unwrap().max_abs() < 1e-10);
        let r = Array::from_rows(&[[0.0, 1.0], [-1.0, 0.0]]).unwrap();
        assert_eq!(orthogonalize(&r), r);
    }

    #[test]
    fn loss_is_finite_at_init_and_gradients_check() {
        let cfg = StargateConfig::default();
        let task = cfg.task().unwrap();
        let mut rng = Rng::seeded(0);
        let model =
            StargateModel::init(2, &[8], 2, TransformKind::Filmr, false, None, &mut rng).unwrap();
        let r = stargate_loss(&model, &task, 0.1).unwrap();
        assert!(r.total.is_finite() && r.total > 0.0);
        assert!((r.total - (r.successor_loss + 0.1 * r.variance_penalty)).abs() < 1e-15);

        let w0 = model.h.layers[0].weight.clone();
        let err = grad_check(
            |w| {
                let tape = w.tape();
                let mut h = model.h.bind_frozen(tape);
                h.replace_weight(0, w);
                let t = model.transform.bind_frozen(tape);
                Ok(stargate_loss_vars(&h, &t, &task, 0.1)?.total)
            },
            &w0,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let task = make_ring_task(12, 3, RingLayout::HorizontalLine, SuccessorKind::Next).unwrap();
        let mut rng = Rng::seeded(0);
        let model =
            StargateModel::init(2, &[4], 2, TransformKind::FreeMatrix, false, None, &mut rng)
                .unwrap();
        assert!(matches!(
            stargate_loss(&model, &task, 0.1),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_steps_gives_initial_frame_only() {
        let cfg = StargateConfig {
            steps: 0,
            ..StargateConfig::default()
        };
        let run = train_stargate(&cfg).unwrap();
        assert_eq!(run.trace.frames.len(), 1);
        assert_eq!(run.trace.frames[0].step, 0);
    }

    #[test]
    fn frames_follow_the_interval_and_are_deterministic() {
        let cfg = StargateConfig {
            steps: 250,
            frame_interval: 100,
            ..StargateConfig::default()
        };
        let a = train_stargate(&cfg).unwrap();
        let steps: Vec<u64> = a.trace.frames.iter().map(|f| f.step).collect();
        assert_eq!(steps, vec![0, 100, 200, 250]);
        let b = train_stargate(&cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn orthogonalized_baseline_stays_orthogonal() {
        let cfg = StargateConfig {
            steps: 30,
            transform: TransformKind::OrthogonalizedMatrix,
            ..StargateConfig::default()
        };
        let run = square_matrix_baseline(&cfg).unwrap();
        let Transform::OrthogonalizedMatrix(w) = &run.model.transform else {
            panic!("wrong transform kind");
        };
        let wtw = w.transpose().matmul(w).unwrap();
        assert!(wtw.sub(&Array::identity(2)).unwrap().max_abs() < 1e-10);
        assert!(matches!(
            square_matrix_baseline(&StargateConfig::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn relabel_on_a_perfect_ring_learns_seven_steps() {
        let z = unit_ring(12);
        let cfg = RelabelConfig {
            successor: SuccessorKind::Fifths,
            scalar_affine: false,
            plane_spread: None,
            steps: 1500,
            lr: 1e-2,
            seed: 0,
        };
        let run = train_relabel(&z, &cfg).unwrap();
        assert!(run.successor_loss < 1e-3, "{}", run.successor_loss);
        // The exact optimum: rotation by 7/12 of a turn.
        let optimum = Transform::Filmr(rotation_transform_by(7.0 * PI / 12.0));
        let succ = successor_map(12, SuccessorKind::Fifths).unwrap();
        assert!(frozen_error(&z, &optimum, &succ) < 1e-12);
    }

    fn rotation_transform_by(half: f64) -> FilmrParams {
        FilmrParams::new(
            Array::ones(1, 2),
            Array::zeros(1, 2),
            Array::row(&[1.0, 0.0]),
            Array::row(&[half.cos(), half.sin()]),
        )
        .unwrap()
    }
}
