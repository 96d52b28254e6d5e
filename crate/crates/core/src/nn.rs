//! Trainable layers shared by the experiments: tanh/relu MLPs, FiLM and
//! FiLMR layers, and the Adam optimizer.
//!
//! Parameters are plain [`Array`] values. For each step they are bound onto a
//! fresh tape through a [`Binding`], which remembers the path-like name of
//! every trainable leaf so gradients come back keyed by name.

use std::collections::BTreeMap;

use crate::array::Array;
use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::rotation::{self, RotationMatrix};

pub type NamedArrays = BTreeMap<String, Array>;

/// Trainable leaves registered on one tape.
pub struct Binding<'t> {
    tape: &'t Tape,
    vars: Vec<(String, Var<'t>)>,
}

impl<'t> Binding<'t> {
    pub fn new(tape: &'t Tape) -> Self {
        Self {
            tape,
            vars: Vec::new(),
        }
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn param(&mut self, name: impl Into<String>, value: &Array) -> Var<'t> {
        let var = self.tape.leaf(value.clone());
        self.vars.push((name.into(), var));
        var
    }

    pub fn gradients(&self, grads: &Gradients) -> NamedArrays {
        self.vars
            .iter()
            .map(|(name, var)| (name.clone(), grads.wrt(*var)))
            .collect()
    }
}

/// Anything holding named trainable arrays.
pub trait Parameters {
    fn named(&self, prefix: &str) -> Vec<(String, &Array)>;
    fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Array)>;

    fn parameter_count(&self) -> usize {
        self.named("").iter().map(|(_, a)| a.len()).sum()
    }
}

/// Copies `source` entries named `prefix.*` into `target`, checking shapes.
pub fn load_named<P: Parameters + ?Sized>(
    target: &mut P,
    prefix: &str,
    source: &NamedArrays,
) -> Result<()> {
    for (name, slot) in target.named_mut(prefix) {
        let value = source
            .get(&name)
            .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))?;
        if value.shape() != slot.shape() {
            return Err(Error::Shape(format!(
                "parameter {name}: expected {:?}, found {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value.clone();
    }
    Ok(())
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Linear,
}

impl Activation {
    fn apply<'t>(self, x: Var<'t>) -> Var<'t> {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.relu(),
            Activation::Linear => x,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array,
    pub bias: Array,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
}

/// `mlp_init` with a generator built from `seed`.
pub fn mlp_init(layer_sizes: &[usize], activations: &[Activation], seed: u64) -> Result<MlpParams> {
    MlpParams::init(layer_sizes, activations, &mut Rng::seeded(seed))
}

impl MlpParams {
    /// Weights ~ N(0, 1/fan_in), zero biases.
    pub fn init(layer_sizes: &[usize], activations: &[Activation], rng: &mut Rng) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Config(format!(
                "an MLP needs at least two layer sizes, got {layer_sizes:?}"
            )));
        }
        if activations.len() != layer_sizes.len() - 1 {
            return Err(Error::Config(format!(
                "{} layers need {} activations, got {}",
                layer_sizes.len() - 1,
                layer_sizes.len() - 1,
                activations.len()
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        if activations.last() != Some(&Activation::Linear) {
            return Err(Error::Config("the output layer must be linear".into()));
        }
        let layers = layer_sizes
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| Dense {
                weight: rng.normal_array(w[0], w[1], (1.0 / w[0] as f64).sqrt()),
                bias: Array::zeros(1, w[1]),
                activation,
            })
            .collect();
        Ok(Self { layers })
    }

    /// Hidden layers use `hidden` activation, the output layer is linear.
    pub fn stack(layer_sizes: &[usize], hidden: Activation, rng: &mut Rng) -> Result<Self> {
        let n = layer_sizes.len().saturating_sub(1);
        let mut acts = vec![hidden; n];
        if let Some(last) = acts.last_mut() {
            *last = Activation::Linear;
        }
        Self::init(layer_sizes, &acts, rng)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weight.cols()
    }

    pub fn bind<'t>(&self, binding: &mut Binding<'t>, prefix: &str) -> MlpVars<'t> {
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let w = binding.param(join(prefix, &format!("{i}.weight")), &l.weight);
                let b = binding.param(join(prefix, &format!("{i}.bias")), &l.bias);
                (w, b, l.activation)
            })
            .collect();
        MlpVars { layers }
    }

    /// Binds the parameters as constants (no gradients collected).
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> MlpVars<'t> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                (
                    tape.constant(l.weight.clone()),
                    tape.constant(l.bias.clone()),
                    l.activation,
                )
            })
            .collect();
        MlpVars { layers }
    }

    pub fn forward(&self, x: &Array) -> Result<Array> {
        let tape = Tape::new();
        let vars = self.bind_frozen(&tape);
        Ok(vars.forward(tape.constant(x.clone()))?.value())
    }
}

impl Parameters for MlpParams {
    fn named(&self, prefix: &str) -> Vec<(String, &Array)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (join(prefix, &format!("{i}.weight")), &l.weight),
                    (join(prefix, &format!("{i}.bias")), &l.bias),
                ]
            })
            .collect()
    }

    fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Array)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (join(prefix, &format!("{i}.weight")), &mut l.weight),
                    (join(prefix, &format!("{i}.bias")), &mut l.bias),
                ]
            })
            .collect()
    }
}

#[derive(Clone)]
pub struct MlpVars<'t> {
    layers: Vec<(Var<'t>, Var<'t>, Activation)>,
}

impl<'t> MlpVars<'t> {
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        for &(w, b, act) in &self.layers {
            h = act.apply(h.matmul(w)?.add_row(b)?);
        }
        Ok(h)
    }

    pub fn tape(&self) -> &'t Tape {
        self.layers[0].0.tape()
    }

    /// Swaps in a different weight node for layer `layer`.
    pub fn replace_weight(&mut self, layer: usize, w: Var<'t>) {
        self.layers[layer].0 = w;
    }
}

pub fn mlp_forward(params: &MlpParams, x: &Array) -> Result<Array> {
    params.forward(x)
}

/// `γ ⊙ x + β` broadcast over rows. `γ` and `β` are either `1 x n` rows or
/// `1 x 1` scalars.
pub fn film_var<'t>(gamma: Var<'t>, beta: Var<'t>, x: Var<'t>) -> Result<Var<'t>> {
    let (m, n) = x.shape();
    let scaled = match gamma.shape() {
        (1, 1) => x.mul_scalar(gamma)?,
        (1, k) if k == n => x.mul_row(gamma)?,
        s => {
            return Err(Error::Shape(format!(
                "FiLM scale {s:?} does not fit {n} features"
            )))
        }
    };
    match beta.shape() {
        (1, 1) => scaled.add(x.tape().constant(Array::ones(m, n)).mul_scalar(beta)?),
        (1, k) if k == n => scaled.add_row(beta),
        s => Err(Error::Shape(format!(
            "FiLM shift {s:?} does not fit {n} features"
        ))),
    }
}

pub fn film_forward(gamma: &Array, beta: &Array, x: &Array) -> Result<Array> {
    let tape = Tape::new();
    let y = film_var(
        tape.constant(gamma.clone()),
        tape.constant(beta.clone()),
        tape.constant(x.clone()),
    )?;
    Ok(y.value())
}

/// How FiLMR parameters are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilmrInit {
    /// γ = 1 + σ·N(0,1), β = σ·N(0,1); starts close to a pure rotation.
    NearIdentity { sigma: f64 },
    /// γ, β ~ N(0, 1).
    RawNormal,
}

impl Default for FilmrInit {
    fn default() -> Self {
        FilmrInit::NearIdentity { sigma: 0.01 }
    }
}

/// Scale, shift, then rotate: `(γ ⊙ x + β) M(u, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilmrParams {
    pub gamma: Array,
    pub beta: Array,
    pub u: Array,
    pub v: Array,
}

impl FilmrParams {
    /// `u, v ~ N(0, I_n)`; `γ, β` per `init`, as `1 x 1` scalars when
    /// `scalar_affine` is set.
    pub fn init(n: usize, init: FilmrInit, scalar_affine: bool, rng: &mut Rng) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config("FiLMR needs dimension >= 2".into()));
        }
        let width = if scalar_affine { 1 } else { n };
        let (gamma, beta) = match init {
            FilmrInit::NearIdentity { sigma } => (
                rng.normal_array(1, width, sigma).map(|x| x + 1.0),
                rng.normal_array(1, width, sigma),
            ),
            FilmrInit::RawNormal => (
                rng.normal_array(1, width, 1.0),
                rng.normal_array(1, width, 1.0),
            ),
        };
        let u = rng.normal_array(1, n, 1.0);
        let v = rng.normal_array(1, n, 1.0);
        Self::new(gamma, beta, u, v)
    }

    pub fn new(gamma: Array, beta: Array, u: Array, v: Array) -> Result<Self> {
        let n = u.cols();
        let fits = |a: &Array| a.rows() == 1 && (a.cols() == n || a.cols() == 1);
        if u.shape() != (1, n) || v.shape() != (1, n) || !fits(&gamma) || !fits(&beta) {
            return Err(Error::Shape(format!(
                "FiLMR parameters disagree: γ {:?}, β {:?}, u {:?}, v {:?}",
                gamma.shape(),
                beta.shape(),
                u.shape(),
                v.shape()
            )));
        }
        for a in [&gamma, &beta, &u, &v] {
            if !a.all_finite() {
                return Err(Error::Numeric("non-finite FiLMR parameter".into()));
            }
        }
        Ok(Self { gamma, beta, u, v })
    }

    pub fn dim(&self) -> usize {
        self.u.cols()
    }

    /// Redraws `v = u + spread·ξ` so the initial rotation angle is small.
    pub fn narrow_plane(&mut self, spread: f64, rng: &mut Rng) {
        let noise = rng.normal_array(1, self.dim(), spread);
        self.v = self.u.add(&noise).expect("same width");
    }

    pub fn bind<'t>(&self, binding: &mut Binding<'t>, prefix: &str) -> FilmrVars<'t> {
        FilmrVars {
            gamma: binding.param(join(prefix, "gamma"), &self.gamma),
            beta: binding.param(join(prefix, "beta"), &self.beta),
            u: binding.param(join(prefix, "u"), &self.u),
            v: binding.param(join(prefix, "v"), &self.v),
        }
    }

    pub fn rotation(&self) -> Result<RotationMatrix> {
        rotation::rotation_matrix(&rotation::PlanePair::new(self.u.clone(), self.v.clone())?)
    }

    pub fn forward(&self, x: &Array) -> Result<Array> {
        let tape = Tape::new();
        let vars = FilmrVars {
            gamma: tape.constant(self.gamma.clone()),
            beta: tape.constant(self.beta.clone()),
            u: tape.constant(self.u.clone()),
            v: tape.constant(self.v.clone()),
        };
        Ok(vars.forward(tape.constant(x.clone()))?.value())
    }
}

impl Parameters for FilmrParams {
    fn named(&self, prefix: &str) -> Vec<(String, &Array)> {
        vec![
            (join(prefix, "gamma"), &self.gamma),
            (join(prefix, "beta"), &self.beta),
            (join(prefix, "u"), &self.u),
            (join(prefix, "v"), &self.v),
        ]
    }

    fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Array)> {
        vec![
            (join(prefix, "gamma"), &mut self.gamma),
            (join(prefix, "beta"), &mut self.beta),
            (join(prefix, "u"), &mut self.u),
            (join(prefix, "v"), &mut self.v),
        ]
    }
}

#[derive(Clone, Copy)]
pub struct FilmrVars<'t> {
    pub gamma: Var<'t>,
    pub beta: Var<'t>,
    pub u: Var<'t>,
    pub v: Var<'t>,
}

impl<'t> FilmrVars<'t> {
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        if x.shape().1 != self.u.shape().1 {
            return Err(Error::Shape(format!(
                "FiLMR of dimension {} applied to {:?}",
                self.u.shape().1,
                x.shape()
            )));
        }
        let m = rotation::rotation_matrix_var(self.u, self.v)?;
        film_var(self.gamma, self.beta, x)?.matmul(m)
    }
}

pub fn filmr_forward(params: &FilmrParams, x: &Array) -> Result<Array> {
    params.forward(x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are created on a parameter's first
/// update.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first: NamedArrays,
    pub second: NamedArrays,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, params: Vec<(String, &mut Array)>, grads: &NamedArrays) -> Result<()> {
        for (name, p) in &params {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::Contract(format!("no gradient for parameter {name}")))?;
            if g.shape() != p.shape() {
                return Err(Error::Shape(format!(
                    "gradient for {name} is {:?}, parameter is {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if !g.all_finite() {
                return Err(Error::Numeric(format!("non-finite gradient for {name}")));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (name, p) in params {
            let g = &grads[&name];
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| Array::zeros(p.rows(), p.cols()));
            let v = self
                .second
                .entry(name)
                .or_insert_with(|| Array::zeros(p.rows(), p.cols()));
            for i in 0..p.len() {
                let gi = g.data()[i];
                let mi = beta1 * m.data()[i] + (1.0 - beta1) * gi;
                let vi = beta2 * v.data()[i] + (1.0 - beta2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / c1;
                let v_hat = vi / c2;
                p.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{backward, grad_check};

    #[test]
    fn init_is_deterministic_and_validated() {
        let acts = [Activation::Tanh, Activation::Tanh, Activation::Linear];
        let a = mlp_init(&[2, 32, 32, 2], &acts, 0).unwrap();
        let b = mlp_init(&[2, 32, 32, 2], &acts, 0).unwrap();
        assert_eq!(a, b);
        assert!(matches!(mlp_init(&[2], &[], 0), Err(Error::Config(_))));
        assert!(matches!(
            mlp_init(&[2, 3], &[Activation::Linear, Activation::Linear], 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            mlp_init(&[2, 3], &[Activation::Tanh], 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn init_weight_variance_is_inverse_fan_in() {
        let p = mlp_init(&[32, 400, 1], &[Activation::Tanh, Activation::Linear], 9).unwrap();
        let w = p.layers[0].weight.data();
        assert!(w.len() >= 10_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64;
        assert!((var - 1.0 / 32.0).abs() < 0.2 / 32.0, "variance {var}");
    }

    #[test]
    fn zero_weights_give_bias_rows() {
        let mut p = mlp_init(&[3, 4, 2], &[Activation::Tanh, Activation::Linear], 1).unwrap();
        for l in &mut p.layers {
            l.weight = Array::zeros(l.weight.rows(), l.weight.cols());
        }
        p.layers[1].bias = Array::row(&[0.5, -2.0]);
        let y = p.forward(&Array::ones(5, 3)).unwrap();
        for r in 0..5 {
            assert_eq!(y.row_slice(r), &[0.5, -2.0]);
        }
    }

    #[test]
    fn single_identity_layer_is_identity() {
        let p = MlpParams {
            layers: vec![Dense {
                weight: Array::identity(3),
                bias: Array::zeros(1, 3),
                activation: Activation::Linear,
            }],
        };
        let x = Array::from_rows(&[[1.0, -2.0, 3.5], [0.0, 4.0, -1.0]]).unwrap();
        assert_eq!(p.forward(&x).unwrap(), x);
        assert!(matches!(
            p.forward(&Array::ones(1, 2)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn hand_set_tanh_network() {
        // hidden = tanh(x W1 + b1), out = hidden W2 + b2
        let p = MlpParams {
            layers: vec![
                Dense {
                    weight: Array::from_rows(&[[0.5, -1.0], [0.25, 2.0]]).unwrap(),
                    bias: Array::row(&[0.1, 0.0]),
                    activation: Activation::Tanh,
                },
                Dense {
                    weight: Array::from_rows(&[[1.5], [-0.5]]).unwrap(),
                    bias: Array::row(&[0.2]),
                    activation: Activation::Linear,
                },
            ],
        };
        let y = p.forward(&Array::row(&[1.0, 2.0])).unwrap().item();
        // x W1 + b1 = (0.5 + 0.5 + 0.1, -1 + 4) = (1.1, 3.0)
        let expected = 1.5 * 1.1f64.tanh() - 0.5 * 3.0f64.tanh() + 0.2;
        assert!((y - expected).abs() < 1e-15);
    }

    #[test]
    fn film_examples() {
        let x = Array::from_rows(&[[1.0, 1.0], [4.0, -2.0]]).unwrap();
        assert_eq!(
            film_forward(&Array::ones(1, 2), &Array::zeros(1, 2), &x).unwrap(),
            x
        );
        let b = Array::row(&[3.0, -7.0]);
        let c = film_forward(&Array::zeros(1, 2), &b, &x).unwrap();
        assert_eq!(c.row_slice(0), b.data());
        assert_eq!(c.row_slice(1), b.data());
        let y = film_forward(
            &Array::row(&[2.0, 3.0]),
            &Array::row(&[1.0, -1.0]),
            &Array::row(&[1.0, 1.0]),
        )
        .unwrap();
        assert_eq!(y.data(), &[3.0, 2.0]);
        assert!(film_forward(&Array::ones(1, 3), &Array::zeros(1, 2), &x).is_err());
    }

    #[test]
    fn film_composition_is_film() {
        let g1 = Array::row(&[2.0, -0.5, 3.0]);
        let b1 = Array::row(&[1.0, 0.25, -2.0]);
        let g2 = Array::row(&[0.5, 4.0, -1.0]);
        let b2 = Array::row(&[-3.0, 2.0, 0.5]);
        let x = Array::from_rows(&[[1.0, 2.0, 3.0], [-0.5, 0.0, 8.0]]).unwrap();
        let twice = film_forward(&g2, &b2, &film_forward(&g1, &b1, &x).unwrap()).unwrap();
        let g = g2.zip_map(&g1, |a, b| a * b).unwrap();
        let b = g2.zip_map(&b1, |a, b| a * b).unwrap().add(&b2).unwrap();
        assert_eq!(twice, film_forward(&g, &b, &x).unwrap());
    }

    #[test]
    fn filmr_examples() {
        let x = Array::from_rows(&[[1.0, 2.0], [-3.0, 0.5]]).unwrap();
        let parallel = FilmrParams::new(
            Array::ones(1, 2),
            Array::zeros(1, 2),
            Array::row(&[1.0, 1.0]),
            Array::row(&[3.0, 3.0]),
        )
        .unwrap();
        assert!(parallel.forward(&x).unwrap().sub(&x).unwrap().max_abs() < 1e-15);

        let flip = FilmrParams::new(
            Array::ones(1, 2),
            Array::zeros(1, 2),
            Array::row(&[1.0, 0.0]),
            Array::row(&[0.0, 1.0]),
        )
        .unwrap();
        let y = flip.forward(&Array::row(&[1.0, 2.0])).unwrap();
        assert!(y.sub(&Array::row(&[-1.0, -2.0])).unwrap().max_abs() < 1e-15);

        let b = Array::row(&[0.5, -1.5]);
        let constant = FilmrParams::new(
            Array::zeros(1, 2),
            b.clone(),
            Array::row(&[1.0, 0.2]),
            Array::row(&[0.3, 1.0]),
        )
        .unwrap();
        let expected = constant.rotation().unwrap().rotate(&b).unwrap();
        let y = constant.forward(&x).unwrap();
        for r in 0..2 {
            let d = Array::row(y.row_slice(r)).sub(&expected).unwrap().max_abs();
            assert!(d < 1e-15);
        }
    }

    #[test]
    fn filmr_with_unit_scale_is_an_isometry() {
        let mut rng = Rng::seeded(21);
        let mut p = FilmrParams::init(6, FilmrInit::RawNormal, false, &mut rng).unwrap();
        p.gamma = Array::ones(1, 6);
        let x = rng.normal_array(8, 6, 1.5);
        let y = p.forward(&x).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let dx = Array::row(x.row_slice(i))
                    .sub(&Array::row(x.row_slice(j)))
                    .unwrap()
                    .norm();
                let dy = Array::row(y.row_slice(i))
                    .sub(&Array::row(y.row_slice(j)))
                    .unwrap()
                    .norm();
                assert!((dx - dy).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn filmr_parameter_count_is_four_n() {
        let mut rng = Rng::seeded(0);
        for n in [2, 3, 64] {
            let p = FilmrParams::init(n, FilmrInit::default(), false, &mut rng).unwrap();
            assert_eq!(p.parameter_count(), 4 * n);
        }
        let s = FilmrParams::init(5, FilmrInit::default(), true, &mut rng).unwrap();
        assert_eq!(s.parameter_count(), 2 * 5 + 2);
    }

    #[test]
    fn scalar_affine_matches_broadcast_vector() {
        let mut rng = Rng::seeded(4);
        let s = FilmrParams::init(3, FilmrInit::RawNormal, true, &mut rng).unwrap();
        let v = FilmrParams::new(
            Array::filled(1, 3, s.gamma.item()),
            Array::filled(1, 3, s.beta.item()),
            s.u.clone(),
            s.v.clone(),
        )
        .unwrap();
        let x = rng.normal_array(4, 3, 1.0);
        assert!(
            s.forward(&x)
                .unwrap()
                .sub(&v.forward(&x).unwrap())
                .unwrap()
                .max_abs()
                < 1e-14
        );
    }

    #[test]
    fn filmr_gradients_for_every_group() {
        let mut rng = Rng::seeded(8);
        let base = FilmrParams::init(4, FilmrInit::RawNormal, false, &mut rng).unwrap();
        let x = rng.normal_array(3, 4, 1.0);
        let target = rng.normal_array(3, 4, 1.0);
        for group in 0..4 {
            let at = [&base.gamma, &base.beta, &base.u, &base.v][group];
            let err = grad_check(
                |p| {
                    let t = p.tape();
                    let c = |a: &Array| t.constant(a.clone());
                    let mut vars = FilmrVars {
                        gamma: c(&base.gamma),
                        beta: c(&base.beta),
                        u: c(&base.u),
                        v: c(&base.v),
                    };
                    match group {
                        0 => vars.gamma = p,
                        1 => vars.beta = p,
                        2 => vars.u = p,
                        _ => vars.v = p,
                    }
                    Ok(vars.forward(c(&x))?.sub(c(&target))?.square().sum())
                },
                at,
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-5, "group {group}: {err}");
        }
    }

    #[test]
    fn binding_collects_named_gradients() {
        let mut rng = Rng::seeded(2);
        let p = MlpParams::stack(&[2, 3, 1], Activation::Tanh, &mut rng).unwrap();
        let tape = Tape::new();
        let mut binding = Binding::new(&tape);
        let vars = p.bind(&mut binding, "h");
        let y = vars
            .forward(tape.constant(Array::ones(4, 2)))
            .unwrap()
            .sum();
        let grads = binding.gradients(&backward(y).unwrap());
        let names: Vec<&str> = grads.keys().map(String::as_str).collect();
        assert_eq!(names, ["h.0.bias", "h.0.weight", "h.1.bias", "h.1.weight"]);
        assert_eq!(grads["h.1.bias"].data(), &[4.0]);
    }

    #[test]
    fn adam_zero_grad_and_zero_lr_leave_params() {
        let mut p = Array::row(&[1.0, -2.0]);
        let mut adam = AdamState::new(AdamConfig::default());
        let grads = BTreeMap::from([("p".to_string(), Array::zeros(1, 2))]);
        adam.step(vec![("p".into(), &mut p)], &grads).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);

        let mut adam = AdamState::new(AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        });
        let grads = BTreeMap::from([("p".to_string(), Array::row(&[3.0, 1.0]))]);
        adam.step(vec![("p".into(), &mut p)], &grads).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // m̂ = g, v̂ = g², so the first update is lr·g/(|g| + ε).
        let mut p = Array::row(&[1.0]);
        let mut adam = AdamState::new(AdamConfig::default());
        let grads = BTreeMap::from([("p".to_string(), Array::row(&[1.0]))]);
        adam.step(vec![("p".into(), &mut p)], &grads).unwrap();
        let expected = 1.0 - 1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((p.item() - expected).abs() < 1e-15);
        assert!((p.item() - 0.999).abs() < 1e-10);
    }

    #[test]
    fn adam_missing_gradient_is_contract_error() {
        let mut p = Array::row(&[1.0]);
        let mut adam = AdamState::new(AdamConfig::default());
        let res = adam.step(vec![("p".into(), &mut p)], &BTreeMap::new());
        assert!(matches!(res, Err(Error::Contract(_))));
        assert_eq!(adam.step, 0);
    }
}
