//! Latent mixing: learn a projector `h` (and approximate inverse) under which
//! the sum of projected stem embeddings equals the projected mix embedding.
//!
//! Stems are 2-D Gaussian blobs, one per class. A mix is the weighted sum of
//! one point from each class. A fixed nonlinear [`ToyEncoder`] stands in for
//! a pretrained audio encoder `f`, so `f(mix) != Σ f(stem)` and the projector
//! has to undo the nonlinearity.

use std::collections::BTreeMap;

use crate::array::Array;
use crate::autodiff::{backward, Tape, Var};
use crate::error::{Error, Result};
use crate::losses::{covariance_penalty, mean_sq_row_distance, variance_hinge};
use crate::nn::{
    load_named, Activation, AdamConfig, AdamState, Binding, MlpParams, MlpVars, NamedArrays,
    Parameters,
};
use crate::rng::{Rng, RngState};
use crate::trace::TrainingTrace;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassSpec {
    pub name: String,
    pub center: [f64; 2],
    pub spread: f64,
    /// Mixing weight of this class.
    pub weight: f64,
}

impl ClassSpec {
    pub fn new(name: &str, center: [f64; 2], spread: f64) -> Self {
        Self {
            name: name.to_string(),
            center,
            spread,
            weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DotsConfig {
    pub classes: Vec<ClassSpec>,
    pub points_per_class: usize,
    /// Samples are redrawn until both coordinates lie in `[-bound, bound]`.
    pub bound: f64,
}

impl DotsConfig {
    pub fn two_class() -> Self {
        Self {
            classes: vec![
                ClassSpec::new("vocal", [-0.7, 0.5], 0.2),
                ClassSpec::new("bass", [0.6, 0.4], 0.2),
            ],
            points_per_class: 200,
            bound: 3.0,
        }
    }

    pub fn three_class() -> Self {
        let mut c = Self::two_class();
        c.classes.push(ClassSpec::new("drums", [0.1, -0.7], 0.2));
        c
    }
}

/// Per-class stems plus the mixes built from them.
#[derive(Debug, Clone, PartialEq)]
pub struct StemSet {
    pub class_names: Vec<String>,
    pub weights: Vec<f64>,
    /// One `count x 2` array per class.
    pub stems: Vec<Array>,
    /// `count x 2`.
    pub mixes: Array,
    /// `pairing[c][j]` is the row of `stems[c]` used in mix `j`.
    pub pairing: Vec<Vec<usize>>,
}

impl StemSet {
    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }

    /// Stem rows of class `c`, reordered so row `j` belongs to mix `j`.
    pub fn aligned_stems(&self, c: usize) -> Array {
        self.stems[c].select_rows(&self.pairing[c])
    }

    pub fn mix_count(&self) -> usize {
        self.mixes.rows()
    }
}

pub fn gen_dots(config: &DotsConfig, seed: u64) -> Result<StemSet> {
    if config.classes.is_empty() {
        return Err(Error::Config("at least one stem class is required".into()));
    }
    if config.points_per_class == 0 {
        return Err(Error::Config("points_per_class must be positive".into()));
    }
    if !(config.bound > 0.0) {
        return Err(Error::Config("bound must be positive".into()));
    }
    let n = config.points_per_class;
    let mut rng = Rng::seeded(seed);
    let mut stems = Vec::with_capacity(config.classes.len());
    for class in &config.classes {
        if !(class.spread >= 0.0) || class.center.iter().any(|c| c.abs() > config.bound) {
            return Err(Error::Config(format!(
                "class {} must have spread >= 0 and a center inside the bounds",
                class.name
            )));
        }
        let mut data = Vec::with_capacity(2 * n);
        for _ in 0..n {
            loop {
                let x = class.center[0] + class.spread * rng.normal();
                let y = class.center[1] + class.spread * rng.normal();
                if x.abs() <= config.bound && y.abs() <= config.bound {
                    data.extend([x, y]);
                    break;
                }
            }
        }
        stems.push(Array::new(n, 2, data)?);
    }
    let pairing: Vec<Vec<usize>> = config.classes.iter().map(|_| rng.permutation(n)).collect();
    let mut mixes = Array::zeros(n, 2);
    for (c, class) in config.classes.iter().enumerate() {
        for (j, &src) in pairing[c].iter().enumerate() {
            for (k, &x) in stems[c].row_slice(src).iter().enumerate() {
                mixes.set(j, k, mixes.get(j, k) + class.weight * x);
            }
        }
    }
    Ok(StemSet {
        class_names: config.classes.iter().map(|c| c.name.clone()).collect(),
        weights: config.classes.iter().map(|c| c.weight).collect(),
        stems,
        mixes,
        pairing,
    })
}

/// A fixed map from source points to embeddings.
pub trait Encoder {
    fn encode(&self, x: &Array) -> Array;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Leveling {
    /// `(y1, y2) -> (y1, tanh y2)`.
    Tanh,
    Identity,
}

/// Swirl by angle `twist·|x|`, then level the second coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyEncoder {
    pub twist: f64,
    pub leveling: Leveling,
}

impl Default for ToyEncoder {
    fn default() -> Self {
        Self {
            twist: 1.5,
            leveling: Leveling::Tanh,
        }
    }
}

impl ToyEncoder {
    pub fn identity() -> Self {
        Self {
            twist: 0.0,
            leveling: Leveling::Identity,
        }
    }
}

impl Encoder for ToyEncoder {
    fn encode(&self, x: &Array) -> Array {
        assert_eq!(x.cols(), 2, "toy encoder takes 2-D points");
        toy_encoder(x, self)
    }
}

pub fn toy_encoder(x: &Array, config: &ToyEncoder) -> Array {
    let mut out = Vec::with_capacity(x.len());
    for r in 0..x.rows() {
        let p = x.row_slice(r);
        let (a, b) = (p[0], p[1]);
        let angle = config.twist * (a * a + b * b).sqrt();
        let (s, c) = angle.sin_cos();
        let y1 = a * c - b * s;
        let y2 = a * s + b * c;
        let y2 = match config.leveling {
            Leveling::Tanh => y2.tanh(),
            Leveling::Identity => y2,
        };
        out.extend([y1, y2]);
    }
    Array::from_parts(x.rows(), 2, out)
}

/// `f(x) = x A`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEncoder(pub Array);

impl Encoder for LinearEncoder {
    fn encode(&self, x: &Array) -> Array {
        x.matmul(&self.0).expect("encoder input width")
    }
}

fn weighted_stem_sum(stems: &[Array], weights: &[f64]) -> Array {
    let mut acc = Array::zeros(stems[0].rows(), stems[0].cols());
    for (s, &w) in stems.iter().zip(weights) {
        acc = acc.add(&s.scale(w)).expect("aligned stems");
    }
    acc
}

/// Mean over mixes of `|Σ f(stem) - f(mix)| / (|f(mix)| + 1e-8)`.
pub fn nonlinearity_gap(encoder: &dyn Encoder, stems: &StemSet) -> f64 {
    let encoded: Vec<Array> = (0..stems.stems.len())
        .map(|c| encoder.encode(&stems.aligned_stems(c)))
        .collect();
    let summed = weighted_stem_sum(&encoded, &stems.weights);
    let mix = encoder.encode(&stems.mixes);
    let m = stems.mix_count();
    (0..m)
        .map(|j| {
            let d = Array::row(summed.row_slice(j))
                .sub(&Array::row(mix.row_slice(j)))
                .unwrap()
                .norm();
            d / (Array::row(mix.row_slice(j)).norm() + 1e-8)
        })
        .sum::<f64>()
        / m as f64
}

/// Encoded stems aligned with encoded mixes.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingBatch {
    pub stems: Vec<Array>,
    pub weights: Vec<f64>,
    pub mixes: Array,
}

impl MixingBatch {
    pub fn encode(stems: &StemSet, encoder: &dyn Encoder) -> Self {
        Self {
            stems: (0..stems.stems.len())
                .map(|c| encoder.encode(&stems.aligned_stems(c)))
                .collect(),
            weights: stems.weights.clone(),
            mixes: encoder.encode(&stems.mixes),
        }
    }

    fn all_embeddings(&self) -> Array {
        let mut blocks: Vec<&Array> = self.stems.iter().collect();
        blocks.push(&self.mixes);
        Array::vstack(&blocks).expect("same embedding width")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingWeights {
    pub mix_consistency: f64,
    pub reconstruction: f64,
    pub variance: f64,
    pub covariance: f64,
}

impl Default for MixingWeights {
    fn default() -> Self {
        Self {
            mix_consistency: 1.0,
            reconstruction: 1.0,
            variance: 1.0,
            covariance: 0.04,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingLossReport {
    pub mix_consistency: f64,
    pub reconstruction: f64,
    pub variance_penalty: f64,
    pub covariance_penalty: f64,
    pub total: f64,
}

impl MixingLossReport {
    pub fn fields(&self) -> [(&'static str, f64); 5] {
        [
            ("mix_consistency", self.mix_consistency),
            ("reconstruction", self.reconstruction),
            ("variance_penalty", self.variance_penalty),
            ("covariance_penalty", self.covariance_penalty),
            ("total", self.total),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixingModel {
    pub h: MlpParams,
    pub h_inv: MlpParams,
    pub encoder: ToyEncoder,
}

impl MixingModel {
    pub fn init(
        encoder: ToyEncoder,
        hidden: &[usize],
        latent_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut fwd = vec![2];
        fwd.extend_from_slice(hidden);
        fwd.push(latent_dim);
        let mut inv = vec![latent_dim];
        inv.extend_from_slice(hidden);
        inv.push(2);
        Ok(Self {
            h: MlpParams::stack(&fwd, Activation::Tanh, rng)?,
            h_inv: MlpParams::stack(&inv, Activation::Tanh, rng)?,
            encoder,
        })
    }

    /// `h(f(x))` for source-domain points.
    pub fn project(&self, x: &Array) -> Result<Array> {
        self.h.forward(&self.encoder.encode(x))
    }

    fn check(&self) -> Result<()> {
        if self.h.input_dim() != 2
            || self.h_inv.output_dim() != 2
            || self.h_inv.input_dim() != self.h.output_dim()
        {
            return Err(Error::Shape(
                "projector and inverse must map 2 -> latent -> 2".into(),
            ));
        }
        Ok(())
    }
}

impl Parameters for MixingModel {
    fn named(&self, prefix: &str) -> Vec<(String, &Array)> {
        let p = |s: &str| {
            if prefix.is_empty() {
                s.to_string()
            } else {
                format!("{prefix}.{s}")
            }
        };
        let mut out = self.h.named(&p("h"));
        out.extend(self.h_inv.named(&p("h_inv")));
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
        out.extend(self.h_inv.named_mut(&p("h_inv")));
        out
    }
}

pub struct MixingLossVars<'t> {
    pub mix_consistency: Var<'t>,
    pub reconstruction: Var<'t>,
    pub variance_penalty: Var<'t>,
    pub covariance_penalty: Var<'t>,
    pub total: Var<'t>,
}

impl MixingLossVars<'_> {
    pub fn report(&self) -> MixingLossReport {
        MixingLossReport {
            mix_consistency: self.mix_consistency.item(),
            reconstruction: self.reconstruction.item(),
            variance_penalty: self.variance_penalty.item(),
            covariance_penalty: self.covariance_penalty.item(),
            total: self.total.item(),
        }
    }
}

pub fn mixing_loss_vars<'t>(
    h: &MlpVars<'t>,
    h_inv: &MlpVars<'t>,
    batch: &MixingBatch,
    weights: &MixingWeights,
) -> Result<MixingLossVars<'t>> {
    let m = batch.mixes.rows();
    if m == 0 || batch.stems.is_empty() {
        return Err(Error::Contract(
            "mixing loss needs a non-empty batch".into(),
        ));
    }
    if batch.stems.iter().any(|s| s.rows() != m) {
        return Err(Error::Shape("stem blocks must align with mixes".into()));
    }
    for w in [
        weights.mix_consistency,
        weights.reconstruction,
        weights.variance,
        weights.covariance,
    ] {
        if !(w >= 0.0) {
            return Err(Error::Contract("loss weights must be nonnegative".into()));
        }
    }
    let tape = h.tape();
    let y_all = tape.constant(batch.all_embeddings());
    let z_all = h.forward(y_all)?;
    let blocks = batch.stems.len();
    let mut summed: Option<Var<'t>> = None;
    for (c, &w) in batch.weights.iter().enumerate() {
        let zc = z_all.slice_rows(c * m, m)?.scale(w);
        summed = Some(match summed {
            None => zc,
            Some(acc) => acc.add(zc)?,
        });
    }
    let z_mix = z_all.slice_rows(blocks * m, m)?;
    let mix_consistency = mean_sq_row_distance(summed.expect("non-empty"), z_mix)?;
    let reconstruction = mean_sq_row_distance(h_inv.forward(z_all)?, y_all)?;
    let variance_penalty = variance_hinge(z_all)?.mean()?;
    let cov = covariance_penalty(z_all)?;
    let total = mix_consistency
        .scale(weights.mix_consistency)
        .add(reconstruction.scale(weights.reconstruction))?
        .add(variance_penalty.scale(weights.variance))?
        .add(cov.scale(weights.covariance))?;
    Ok(MixingLossVars {
        mix_consistency,
        reconstruction,
        variance_penalty,
        covariance_penalty: cov,
        total,
    })
}

pub fn mixing_loss(
    model: &MixingModel,
    batch: &MixingBatch,
    weights: &MixingWeights,
) -> Result<MixingLossReport> {
    model.check()?;
    let tape = Tape::new();
    let h = model.h.bind_frozen(&tape);
    let h_inv = model.h_inv.bind_frozen(&tape);
    Ok(mixing_loss_vars(&h, &h_inv, batch, weights)?.report())
}

/// Relative errors of a model on a stem set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingEval {
    /// mix_consistency / mean |h(f(mix))|².
    pub mix_relative: f64,
    /// reconstruction / mean |y|² over all embeddings.
    pub reconstruction_relative: f64,
    pub report: MixingLossReport,
}

pub fn evaluate_mixing(model: &MixingModel, stems: &StemSet) -> Result<MixingEval> {
    let batch = MixingBatch::encode(stems, &model.encoder);
    let report = mixing_loss(model, &batch, &MixingWeights::default())?;
    let z_mix = model.h.forward(&batch.mixes)?;
    let mix_scale = z_mix.data().iter().map(|x| x * x).sum::<f64>() / z_mix.rows() as f64;
    let y = batch.all_embeddings();
    let y_scale = y.data().iter().map(|x| x * x).sum::<f64>() / y.rows() as f64;
    Ok(MixingEval {
        mix_relative: report.mix_consistency / mix_scale.max(1e-12),
        reconstruction_relative: report.reconstruction / y_scale.max(1e-12),
        report,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubtractionEval {
    pub cosine: f64,
    pub rel_distance: f64,
}

/// Compares `h(f(mix)) - h(f(drums))` with `h(f(vocal + bass))`.
pub fn latent_subtract_eval(model: &MixingModel, stems: &StemSet) -> Result<SubtractionEval> {
    let idx = |name: &str| {
        stems
            .class_index(name)
            .ok_or_else(|| Error::Contract(format!("stem set has no {name} class")))
    };
    let (vocal, bass, drums) = (idx("vocal")?, idx("bass")?, idx("drums")?);
    let w = &stems.weights;
    let mix_minus = model
        .project(&stems.mixes)?
        .sub(&model.project(&stems.aligned_stems(drums).scale(w[drums]))?)?;
    let partial = stems
        .aligned_stems(vocal)
        .scale(w[vocal])
        .add(&stems.aligned_stems(bass).scale(w[bass]))?;
    let reference = model.project(&partial)?;
    let m = stems.mix_count();
    let (mut cos_sum, mut dist_sum) = (0.0, 0.0);
    for j in 0..m {
        let a = Array::row(mix_minus.row_slice(j));
        let b = Array::row(reference.row_slice(j));
        let (na, nb) = (a.norm(), b.norm());
        cos_sum += if na == 0.0 && nb == 0.0 {
            1.0
        } else {
            a.dot(&b)? / (na * nb).max(1e-300)
        };
        dist_sum += a.sub(&b)?.norm() / nb.max(1e-12);
    }
    Ok(SubtractionEval {
        cosine: cos_sum / m as f64,
        rel_distance: dist_sum / m as f64,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixingConfig {
    pub dots: DotsConfig,
    pub encoder: ToyEncoder,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub weights: MixingWeights,
    pub steps: u64,
    pub lr: f64,
    pub seed: u64,
}

impl Default for MixingConfig {
    fn default() -> Self {
        Self {
            dots: DotsConfig::two_class(),
            encoder: ToyEncoder::default(),
            hidden: vec![32, 32],
            latent_dim: 2,
            weights: MixingWeights::default(),
            steps: 3000,
            lr: 3e-3,
            seed: 0,
        }
    }
}

impl MixingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(
                "lr must be a finite nonnegative number".into(),
            ));
        }
        Ok(())
    }

    /// Training stems.
    pub fn train_set(&self) -> Result<StemSet> {
        gen_dots(&self.dots, Rng::seeded(self.seed).fork(1).state().seed)
    }

    /// Held-out stems from an independent stream.
    pub fn holdout_set(&self) -> Result<StemSet> {
        gen_dots(&self.dots, Rng::seeded(self.seed).fork(3).state().seed)
    }
}

/// Resumable full-batch training loop.
pub struct MixingTrainer {
    pub config: MixingConfig,
    pub data: StemSet,
    batch: MixingBatch,
    pub model: MixingModel,
    pub adam: AdamState,
    pub step: u64,
    /// Generator state after initialization; the loop itself draws nothing.
    pub rng: RngState,
    pub trace: TrainingTrace,
}

impl MixingTrainer {
    pub fn new(config: MixingConfig) -> Result<Self> {
        config.validate()?;
        let data = config.train_set()?;
        let mut init_rng = Rng::seeded(config.seed).fork(2);
        let model = MixingModel::init(
            config.encoder,
            &config.hidden,
            config.latent_dim,
            &mut init_rng,
        )?;
        let batch = MixingBatch::encode(&data, &model.encoder);
        let adam = AdamState::new(AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        });
        Ok(Self {
            config,
            data,
            batch,
            model,
            adam,
            step: 0,
            rng: init_rng.state(),
            trace: TrainingTrace::default(),
        })
    }

    /// Rebuilds a trainer at `step` from saved parameters and optimizer moments.
    pub fn restore(
        config: MixingConfig,
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
        Ok(t)
    }

    /// One Adam update; returns the loss at the pre-update parameters.
    pub fn step_once(&mut self) -> Result<MixingLossReport> {
        let tape = Tape::new();
        let mut binding = Binding::new(&tape);
        let h = self.model.h.bind(&mut binding, "h");
        let h_inv = self.model.h_inv.bind(&mut binding, "h_inv");
        let loss = mixing_loss_vars(&h, &h_inv, &self.batch, &self.config.weights)?;
        let report = loss.report();
        if !report.total.is_finite() {
            return Err(Error::Numeric(format!(
                "mixing loss diverged at step {}: {report:?}",
                self.step + 1
            )));
        }
        let grads = binding.gradients(&backward(loss.total)?);
        self.adam.step(self.model.named_mut(""), &grads)?;
        self.step += 1;
        self.trace.push_record(self.step, report.fields());
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
}

pub fn train_mixing(config: &MixingConfig) -> Result<(MixingModel, TrainingTrace)> {
    let mut trainer = MixingTrainer::new(config.clone())?;
    trainer.run_until(config.steps)?;
    Ok((trainer.model, trainer.trace))
}

/// Named views used for plotting: stems, mixes and their images.
pub fn mixing_point_clouds(
    model: &MixingModel,
    stems: &StemSet,
) -> Result<BTreeMap<String, Array>> {
    let mut out = BTreeMap::new();
    let batch = MixingBatch::encode(stems, &model.encoder);
    let mut z_sum: Option<Array> = None;
    for (c, name) in stems.class_names.iter().enumerate() {
        let x = stems.aligned_stems(c);
        let z = model.h.forward(&batch.stems[c])?;
        let zw = z.scale(stems.weights[c]);
        z_sum = Some(match z_sum {
            None => zw,
            Some(acc) => acc.add(&zw)?,
        });
        out.insert(format!("x/{name}"), x);
        out.insert(format!("y/{name}"), batch.stems[c].clone());
        out.insert(format!("z/{name}"), z);
    }
    let z_mix = model.h.forward(&batch.mixes)?;
    out.insert("y_recon/mix".into(), model.h_inv.forward(&z_mix)?);
    out.insert("x/mix".into(), stems.mixes.clone());
    out.insert("y/mix".into(), batch.mixes.clone());
    out.insert("z/mix".into(), z_mix);
    out.insert("z/stem_sum".into(), z_sum.expect("at least one class"));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Dense;
    use std::f64::consts::PI;

    fn identity_mlp() -> MlpParams {
        MlpParams {
            layers: vec![Dense {
                weight: Array::identity(2),
                bias: Array::zeros(1, 2),
                activation: Activation::Linear,
            }],
        }
    }

    fn identity_model() -> MixingModel {
        MixingModel {
            h: identity_mlp(),
            h_inv: identity_mlp(),
            encoder: ToyEncoder::identity(),
        }
    }

    #[test]
    fn exact_centers_mix_to_their_sum() {
        let cfg = DotsConfig {
            classes: vec![
                ClassSpec::new("a", [1.0, -0.5], 0.0),
                ClassSpec::new("b", [0.25, 2.0], 0.0),
            ],
            points_per_class: 1,
            bound: 3.0,
        };
        let s = gen_dots(&cfg, 0).unwrap();
        assert_eq!(s.mixes.data(), &[1.25, 1.5]);
    }

    #[test]
    fn gen_dots_is_deterministic_and_additive() {
        let cfg = DotsConfig::three_class();
        let a = gen_dots(&cfg, 5).unwrap();
        assert_eq!(a, gen_dots(&cfg, 5).unwrap());
        for j in 0..a.mix_count() {
            let mut sum = [0.0; 2];
            for c in 0..3 {
                let r = a.stems[c].row_slice(a.pairing[c][j]);
                sum[0] += r[0];
                sum[1] += r[1];
            }
            assert_eq!(a.mixes.row_slice(j), &sum);
        }
        for s in &a.stems {
            assert!(s.data().iter().all(|x| x.abs() <= cfg.bound));
        }
    }

    #[test]
    fn gen_dots_class_means_near_centers() {
        let cfg = DotsConfig::three_class();
        let s = gen_dots(&cfg, 7).unwrap();
        for (c, class) in cfg.classes.iter().enumerate() {
            let mean = s.stems[c].mean_rows();
            let tol = 3.0 * class.spread / (200f64).sqrt();
            for k in 0..2 {
                assert!((mean.data()[k] - class.center[k]).abs() < tol);
            }
        }
    }

    #[test]
    fn gen_dots_rejects_empty_configs() {
        let mut cfg = DotsConfig::two_class();
        cfg.points_per_class = 0;
        assert!(matches!(gen_dots(&cfg, 0), Err(Error::Config(_))));
        cfg.points_per_class = 3;
        cfg.classes.clear();
        assert!(matches!(gen_dots(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn toy_encoder_examples() {
        let enc = ToyEncoder::default();
        assert_eq!(
            toy_encoder(&Array::row(&[0.0, 0.0]), &enc).data(),
            &[0.0, 0.0]
        );
        let flat = ToyEncoder { twist: 0.0, ..enc };
        let y = toy_encoder(&Array::row(&[0.7, -1.3]), &flat);
        assert_eq!(y.data(), &[0.7, (-1.3f64).tanh()]);
        // Swirl by π sends (1, 0) to (-1, 0).
        let half = ToyEncoder { twist: PI, ..enc };
        let y = toy_encoder(&Array::row(&[1.0, 0.0]), &half);
        assert!((y.data()[0] + 1.0).abs() < 1e-15 && y.data()[1].abs() < 1e-15);
    }

    #[test]
    fn toy_encoder_is_injective_on_samples() {
        let mut rng = Rng::seeded(99);
        let enc = ToyEncoder::default();
        let mut min_out = f64::INFINITY;
        for _ in 0..10_000 {
            let a = rng.normal_array(1, 2, 1.0);
            let b = rng.normal_array(1, 2, 1.0);
            if a.sub(&b).unwrap().norm() <= 1e-6 {
                continue;
            }
            let d = toy_encoder(&a, &enc)
                .sub(&toy_encoder(&b, &enc))
                .unwrap()
                .norm();
            min_out = min_out.min(d);
        }
        assert!(min_out > 0.0);
    }

    #[test]
    fn nonlinearity_gap_cases() {
        let s = gen_dots(&DotsConfig::two_class(), 0).unwrap();
        let lin = LinearEncoder(Array::from_rows(&[[2.0, -1.0], [0.5, 3.0]]).unwrap());
        assert!(nonlinearity_gap(&lin, &s) < 1e-14);

        let mut zero = s.clone();
        for st in &mut zero.stems {
            *st = Array::zeros(st.rows(), 2);
        }
        zero.mixes = Array::zeros(zero.mix_count(), 2);
        assert_eq!(nonlinearity_gap(&ToyEncoder::default(), &zero), 0.0);

        assert!(nonlinearity_gap(&ToyEncoder::default(), &s) > 0.1);
    }

    #[test]
    fn identity_chain_is_exactly_consistent() {
        let s = gen_dots(&DotsConfig::two_class(), 1).unwrap();
        let model = identity_model();
        let batch = MixingBatch::encode(&s, &model.encoder);
        let r = mixing_loss(&model, &batch, &MixingWeights::default()).unwrap();
        assert!(r.mix_consistency < 1e-28);
        assert_eq!(r.reconstruction, 0.0);
    }

    #[test]
    fn zero_projector_is_consistent_but_penalized() {
        let cfg = DotsConfig {
            points_per_class: 1,
            ..DotsConfig::two_class()
        };
        let s = gen_dots(&cfg, 0).unwrap();
        let mut model = identity_model();
        model.h.layers[0].weight = Array::zeros(2, 2);
        let batch = MixingBatch::encode(&s, &model.encoder);
        let r = mixing_loss(&model, &batch, &MixingWeights::default()).unwrap();
        assert_eq!(r.mix_consistency, 0.0);
        assert_eq!(r.variance_penalty, 1.0);

        let no_var = MixingWeights {
            variance: 0.0,
            ..MixingWeights::default()
        };
        let r = mixing_loss(&model, &batch, &no_var).unwrap();
        assert_eq!(r.mix_consistency, 0.0);
    }

    #[test]
    fn empty_batch_and_negative_weights_rejected() {
        let model = identity_model();
        let empty = MixingBatch {
            stems: vec![Array::zeros(0, 2)],
            weights: vec![1.0],
            mixes: Array::zeros(0, 2),
        };
        assert!(matches!(
            mixing_loss(&model, &empty, &MixingWeights::default()),
            Err(Error::Contract(_))
        ));
        let s = gen_dots(&DotsConfig::two_class(), 0).unwrap();
        let batch = MixingBatch::encode(&s, &model.encoder);
        let bad = MixingWeights {
            covariance: -1.0,
            ..MixingWeights::default()
        };
        assert!(matches!(
            mixing_loss(&model, &batch, &bad),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn total_is_weighted_sum() {
        let cfg = MixingConfig::default();
        let t = MixingTrainer::new(cfg.clone()).unwrap();
        let w = MixingWeights {
            mix_consistency: 0.5,
            reconstruction: 2.0,
            variance: 3.0,
            covariance: 0.25,
        };
        let r = mixing_loss(&t.model, &t.batch, &w).unwrap();
        let expect = 0.5 * r.mix_consistency
            + 2.0 * r.reconstruction
            + 3.0 * r.variance_penalty
            + 0.25 * r.covariance_penalty;
        assert!((r.total - expect).abs() < 1e-12);
        assert!(r.total.is_finite() && r.total > 0.0);
    }

    #[test]
    fn loss_gradients_for_each_term() {
        use crate::autodiff::grad_check;
        let cfg = DotsConfig {
            points_per_class: 6,
            ..DotsConfig::two_class()
        };
        let s = gen_dots(&cfg, 2).unwrap();
        let mut rng = Rng::seeded(4);
        let model = MixingModel::init(ToyEncoder::default(), &[5], 2, &mut rng).unwrap();
        let batch = MixingBatch::encode(&s, &model.encoder);
        let w0 = model.h.layers[0].weight.clone();
        for term in 0..4 {
            let err = grad_check(
                |w| {
                    let t = w.tape();
                    let mut h = model.h.clone();
                    h.layers[0].weight = Array::zeros(2, 5);
                    let mut hv = h.bind_frozen(t);
                    hv.replace_weight(0, w);
                    let hi = model.h_inv.bind_frozen(t);
                    let l = mixing_loss_vars(&hv, &hi, &batch, &MixingWeights::default())?;
                    Ok([
                        l.mix_consistency,
                        l.reconstruction,
                        l.variance_penalty,
                        l.covariance_penalty,
                    ][term])
                },
                &w0,
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-5, "term {term}: {err}");
        }
    }

    #[test]
    fn subtraction_with_consistent_model_is_exact() {
        let s = gen_dots(&DotsConfig::three_class(), 3).unwrap();
        let e = latent_subtract_eval(&identity_model(), &s).unwrap();
        assert!((e.cosine - 1.0).abs() < 1e-12);
        assert!(e.rel_distance < 1e-12);
        let two = gen_dots(&DotsConfig::two_class(), 3).unwrap();
        assert!(matches!(
            latent_subtract_eval(&identity_model(), &two),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn zero_drums_subtraction() {
        let mut cfg = DotsConfig::three_class();
        cfg.classes[2].center = [0.0, 0.0];
        cfg.classes[2].spread = 0.0;
        let s = gen_dots(&cfg, 0).unwrap();
        let mut rng = Rng::seeded(0);
        let mut model = MixingModel::init(ToyEncoder::default(), &[8], 2, &mut rng).unwrap();
        // Make h(0) = 0: zero biases already; tanh(0) = 0.
        for l in &mut model.h.layers {
            l.bias = Array::zeros(1, l.bias.cols());
        }
        let e = latent_subtract_eval(&model, &s).unwrap();
        assert!((e.cosine - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_steps_returns_initial_model() {
        let cfg = MixingConfig {
            steps: 0,
            ..MixingConfig::default()
        };
        let (model, trace) = train_mixing(&cfg).unwrap();
        assert!(trace.records.is_empty());
        assert_eq!(model, MixingTrainer::new(cfg).unwrap().model);
    }

    #[test]
    fn short_training_is_deterministic() {
        let cfg = MixingConfig {
            steps: 20,
            ..MixingConfig::default()
        };
        let (m1, t1) = train_mixing(&cfg).unwrap();
        let (m2, t2) = train_mixing(&cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(t1, t2);
        assert_eq!(t1.records.len(), 20);
    }
}
