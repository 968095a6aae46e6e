//! Shift predictor `ẑ = z + Δ(z, spec)`: a residual MLP over the latent code
//! and a ternary direction spec, trained against the attribute classifier
//! with a cross-entropy term on conditioned attributes plus `γ·L_f`, where
//! `L_f` is `‖ẑ − z‖₂²` by default or `‖ẑ − z‖₂` (see [`Faithfulness`]).

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::numerics::{
    dot, mlp_backward, mlp_forward, norm, optimizer_step, sigmoid, Activation, MlpGradients, MlpParams,
    OptimizerState, Vector,
};
use crate::world::SyntheticWorld;

pub const SHIFT_FORMAT: &str = "cfshap-shift/1";
/// Faithfulness factor used for the face-attribute experiments.
pub const DEFAULT_GAMMA: f64 = 0.09;
pub const PROBABILITY_CLAMP: f64 = 1e-7;

/// Per-attribute command: `+1` increase, `-1` decrease, `0` leave alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DirectionSpec(Vec<f64>);

impl DirectionSpec {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Shape("direction spec must be non-empty".into()));
        }
        if let Some(bad) = entries.iter().find(|v| !matches!(**v, -1.0 | 0.0 | 1.0)) {
            return Err(Error::Domain(format!(
                "direction spec entries must be -1, 0 or +1, got {bad}"
            )));
        }
        // Normalise -0.0 so equal specs serialise identically.
        Ok(Self(entries.into_iter().map(|v| v + 0.0).collect()))
    }

    pub fn zeros(num_attrs: usize) -> Self {
        Self(vec![0.0; num_attrs])
    }

    pub fn single(num_attrs: usize, attribute: usize, up: bool) -> Self {
        let mut v = vec![0.0; num_attrs];
        v[attribute] = if up { 1.0 } else { -1.0 };
        Self(v)
    }

    pub fn entries(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    /// `(attribute, target bit)` for every conditioned attribute.
    pub fn conditioned(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, &v)| (i, if v > 0.0 { 1.0 } else { 0.0 }))
    }
}

impl TryFrom<Vec<f64>> for DirectionSpec {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DirectionSpec> for Vec<f64> {
    fn from(s: DirectionSpec) -> Self {
        s.0
    }
}

/// Form of the faithfulness term `L_f` on `Δ = ẑ − z`.
///
/// The squared norm separates across orthogonal attribute directions, so
/// conditioning one attribute does not change the optimal move along
/// another; the plain norm couples them through `‖Δ‖`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Faithfulness {
    #[default]
    SquaredNorm,
    Norm,
}

impl Faithfulness {
    /// `(L_f, c)` with `∂L_f/∂Δ = c·Δ`; the norm's subgradient at zero is 0.
    pub fn evaluate(self, delta: &[f64]) -> (f64, f64) {
        match self {
            Self::SquaredNorm => (dot(delta, delta), 2.0),
            Self::Norm => {
                let n = norm(delta);
                (n, if n > 0.0 { 1.0 / n } else { 0.0 })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub gamma: f64,
    pub faithfulness: Faithfulness,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Cosine decay floor, as a fraction of `learning_rate`; `1.0` disables decay.
    pub final_lr_fraction: f64,
    /// Probability that each attribute is conditioned in a training spec.
    pub p_cond: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            faithfulness: Faithfulness::SquaredNorm,
            epochs: 150,
            steps_per_epoch: 100,
            batch_size: 64,
            learning_rate: 3e-3,
            final_lr_fraction: 0.01,
            p_cond: 0.5,
            seed: 17,
            hidden: vec![64, 64],
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Domain(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.p_cond > 0.0 && self.p_cond <= 1.0) {
            return Err(Error::Domain(format!("p_cond must be in (0, 1], got {}", self.p_cond)));
        }
        if self.batch_size == 0 || self.steps_per_epoch == 0 {
            return Err(Error::Domain("batch size and steps per epoch must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Domain("learning rate must be positive".into()));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(Error::Domain("final_lr_fraction must be in (0, 1]".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Domain("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub gamma: f64,
    pub faithfulness: Faithfulness,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub final_lr_fraction: f64,
    pub p_cond: f64,
    pub seed: u64,
    pub final_attribute_loss: Option<f64>,
    pub final_faithfulness_loss: Option<f64>,
}

impl TrainingMetadata {
    fn untrained(config: &TrainingConfig) -> Self {
        Self {
            gamma: config.gamma,
            faithfulness: config.faithfulness,
            epochs: 0,
            steps_per_epoch: config.steps_per_epoch,
            batch_size: config.batch_size,
            learning_rate: config.learning_rate,
            final_lr_fraction: config.final_lr_fraction,
            p_cond: config.p_cond,
            seed: config.seed,
            final_attribute_loss: None,
            final_faithfulness_loss: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftPredictor {
    latent_dim: usize,
    num_attrs: usize,
    network: MlpParams,
    training: TrainingMetadata,
}

impl ShiftPredictor {
    pub fn new(
        latent_dim: usize,
        num_attrs: usize,
        network: MlpParams,
        training: TrainingMetadata,
    ) -> Result<Self> {
        ensure_len("shift network input", network.input_dim(), latent_dim + num_attrs)?;
        ensure_len("shift network output", network.output_dim(), latent_dim)?;
        if !(training.gamma >= 0.0) {
            return Err(Error::Domain("gamma must be >= 0".into()));
        }
        Ok(Self {
            latent_dim,
            num_attrs,
            network,
            training,
        })
    }

    /// Freshly initialised predictor; the output layer starts at zero, so it
    /// is the identity on `z` until trained.
    pub fn initialize<R: Rng + ?Sized>(
        latent_dim: usize,
        num_attrs: usize,
        config: &TrainingConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let mut dims = vec![latent_dim + num_attrs];
        dims.extend(&config.hidden);
        dims.push(latent_dim);
        let mut acts = vec![Activation::Tanh; config.hidden.len()];
        acts.push(Activation::Identity);
        let network = MlpParams::init(&dims, &acts, true, rng)?;
        Self::new(latent_dim, num_attrs, network, TrainingMetadata::untrained(config))
    }

    /// All-zero network: `ẑ = z` for every spec.
    pub fn identity(latent_dim: usize, num_attrs: usize) -> Result<Self> {
        let config = TrainingConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = Self::initialize(latent_dim, num_attrs, &config, &mut rng)?;
        Self::new(latent_dim, num_attrs, p.network.zeros_like(), p.training)
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn num_attrs(&self) -> usize {
        self.num_attrs
    }

    pub fn network(&self) -> &MlpParams {
        &self.network
    }

    pub fn network_mut(&mut self) -> &mut MlpParams {
        &mut self.network
    }

    pub fn training(&self) -> &TrainingMetadata {
        &self.training
    }

    fn network_input(&self, z: &[f64], spec: &DirectionSpec) -> Result<Vec<f64>> {
        ensure_len("latent", z.len(), self.latent_dim)?;
        ensure_len("direction spec", spec.len(), self.num_attrs)?;
        let mut input = Vec::with_capacity(self.latent_dim + self.num_attrs);
        input.extend_from_slice(z);
        input.extend_from_slice(spec.entries());
        Ok(input)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ShiftFile {
            format: SHIFT_FORMAT.to_string(),
            latent_dim: self.latent_dim,
            num_attrs: self.num_attrs,
            residual: true,
            layers: self
                .network
                .layers()
                .iter()
                .map(|l| LayerFile {
                    input_dim: l.input_dim(),
                    output_dim: l.output_dim(),
                    activation: l.activation,
                    weights: l.weights.data().to_vec(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
            training: self.training.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ShiftFile = serde_json::from_str(text)?;
        if file.format != SHIFT_FORMAT {
            return Err(Error::Format(format!(
                "unsupported shift-predictor format {:?}, expected {SHIFT_FORMAT:?}",
                file.format
            )));
        }
        if !file.residual {
            return Err(Error::Format("only residual shift predictors are supported".into()));
        }
        let layers = file
            .layers
            .into_iter()
            .map(|l| {
                crate::numerics::Layer::new(
                    crate::numerics::Matrix::new(l.output_dim, l.input_dim, l.weights)?,
                    Vector::new(l.bias)?,
                    l.activation,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(file.latent_dim, file.num_attrs, MlpParams::new(layers)?, file.training)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShiftFile {
    format: String,
    latent_dim: usize,
    num_attrs: usize,
    residual: bool,
    layers: Vec<LayerFile>,
    training: TrainingMetadata,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    input_dim: usize,
    output_dim: usize,
    activation: Activation,
    /// Row-major, `output_dim × input_dim`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// `ẑ = z + Δ(z, spec)`.
pub fn shift_infer(params: &ShiftPredictor, z: &[f64], spec: &DirectionSpec) -> Result<Vector> {
    let input = params.network_input(z, spec)?;
    let (delta, _) = mlp_forward(&params.network, &input)?;
    Vector::new(z.iter().zip(delta.iter()).map(|(a, b)| a + b).collect())
}

#[derive(Debug, Clone)]
pub struct LossEvaluation {
    pub loss: f64,
    pub attribute_loss: f64,
    pub faithfulness_loss: f64,
    pub gradients: MlpGradients,
}

/// Cross-entropy of a clamped probability against a {0, 1} target, and its
/// derivative with respect to the logit (zero where the clamp is active).
fn clamped_bce(logit: f64, target: f64) -> (f64, f64) {
    let y = sigmoid(logit);
    let yc = y.clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP);
    let loss = -(target * yc.ln() + (1.0 - target) * (1.0 - yc).ln());
    let dlogit = if y == yc { y - target } else { 0.0 };
    (loss, dlogit)
}

/// Summed cross-entropy over the conditioned attributes only, with the
/// gradient with respect to every attribute logit.
pub fn attribute_loss(logits: &[f64], spec: &DirectionSpec) -> Result<(f64, Vec<f64>)> {
    ensure_len("attribute logits", logits.len(), spec.len())?;
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for (i, target) in spec.conditioned() {
        let (l, dl) = clamped_bce(logits[i], target);
        loss += l;
        grad[i] = dl;
    }
    Ok((loss, grad))
}

/// `L_a + γ·L_f` for one `(z, spec)` with gradients through classifier,
/// generator and shift network.
pub fn shift_loss(
    world: &SyntheticWorld,
    params: &ShiftPredictor,
    z: &[f64],
    spec: &DirectionSpec,
    gamma: f64,
    faithfulness: Faithfulness,
) -> Result<LossEvaluation> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::Domain(format!("gamma must be >= 0, got {gamma}")));
    }
    ensure_len("world latent dim", world.latent_dim(), params.latent_dim)?;
    ensure_len("world attribute count", world.num_attrs(), params.num_attrs)?;
    let input = params.network_input(z, spec)?;
    let (delta, tape) = mlp_forward(&params.network, &input)?;
    let z_hat: Vec<f64> = z.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
    let x = world.generate(&z_hat)?;
    let logits = world.attribute_logits(&x)?;

    let (attribute_loss, dlogits) = attribute_loss(&logits, spec)?;
    let mut image_grad = vec![0.0; world.image_dim()];
    for (i, dl) in dlogits.iter().enumerate().filter(|(_, dl)| **dl != 0.0) {
        image_grad
            .iter_mut()
            .zip(world.attribute_directions().row(i))
            .for_each(|(g, a)| *g += dl * a);
    }
    let mut delta_grad = world.pullback(&image_grad)?;

    let (faithfulness_loss, coefficient) = faithfulness.evaluate(&delta);
    if coefficient > 0.0 && gamma > 0.0 {
        let s = gamma * coefficient;
        delta_grad
            .iter_mut()
            .zip(delta.iter())
            .for_each(|(g, d)| *g += s * d);
    }
    let (gradients, _) = mlp_backward(&params.network, &tape, &delta_grad)?;
    Ok(LossEvaluation {
        loss: attribute_loss + gamma * faithfulness_loss,
        attribute_loss,
        faithfulness_loss,
        gradients,
    })
}

/// Each attribute conditioned with probability `p_cond`, sign uniform;
/// all-zero draws are rejected.
pub fn sample_training_spec<R: Rng + ?Sized>(num_attrs: usize, p_cond: f64, rng: &mut R) -> DirectionSpec {
    loop {
        let v: Vec<f64> = (0..num_attrs)
            .map(|_| {
                if rng.random_bool(p_cond) {
                    if rng.random_bool(0.5) {
                        1.0
                    } else {
                        -1.0
                    }
                } else {
                    0.0
                }
            })
            .collect();
        if v.iter().any(|&e| e != 0.0) {
            return DirectionSpec(v);
        }
    }
}

pub fn sample_latent<R: Rng + ?Sized>(latent_dim: usize, rng: &mut R) -> Vector {
    Vector::new((0..latent_dim).map(|_| rng.sample(StandardNormal)).collect())
        .expect("gaussian draws are finite")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_attribute_loss: f64,
    pub mean_faithfulness_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

/// Trains a fresh shift predictor against `world`'s classifier. A pure
/// function of `(world, config)`.
pub fn shift_train(world: &SyntheticWorld, config: &TrainingConfig) -> Result<(ShiftPredictor, TrainingLog)> {
    shift_train_with(world, config, |_| {})
}

/// [`shift_train`] with a per-epoch progress callback.
pub fn shift_train_with(
    world: &SyntheticWorld,
    config: &TrainingConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(ShiftPredictor, TrainingLog)> {
    config.validate()?;
    let (d, m) = (world.latent_dim(), world.num_attrs());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut predictor = ShiftPredictor::initialize(d, m, config, &mut rng)?;
    let mut optimizer = OptimizerState::new(&predictor.network, config.learning_rate)?;
    let mut log = TrainingLog::default();
    let scale = 1.0 / config.batch_size as f64;
    let total_steps = (config.epochs * config.steps_per_epoch) as f64;

    for epoch in 0..config.epochs {
        let (mut sum_a, mut sum_f) = (0.0, 0.0);
        for step in 0..config.steps_per_epoch {
            let global_step = epoch * config.steps_per_epoch + step;
            let mut grads = MlpGradients::zeros(&predictor.network);
            for _ in 0..config.batch_size {
                let z = sample_latent(d, &mut rng);
                let spec = sample_training_spec(m, config.p_cond, &mut rng);
                let eval = shift_loss(world, &predictor, &z, &spec, config.gamma, config.faithfulness).map_err(|e| {
                    Error::Training {
                        step: global_step,
                        reason: e.to_string(),
                    }
                })?;
                if !eval.loss.is_finite() {
                    return Err(Error::Training {
                        step: global_step,
                        reason: format!("loss is {}", eval.loss),
                    });
                }
                sum_a += eval.attribute_loss;
                sum_f += eval.faithfulness_loss;
                grads.add_assign(&eval.gradients);
            }
            grads.scale(scale);
            let progress = global_step as f64 / total_steps;
            let floor = config.final_lr_fraction;
            let lr = config.learning_rate
                * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
            optimizer.set_learning_rate(lr)?;
            optimizer_step(&mut optimizer, &mut predictor.network, &grads).map_err(|e| {
                Error::Training {
                    step: global_step,
                    reason: e.to_string(),
                }
            })?;
        }
        let n = (config.steps_per_epoch * config.batch_size) as f64;
        let entry = EpochLog {
            epoch,
            mean_attribute_loss: sum_a / n,
            mean_faithfulness_loss: sum_f / n,
        };
        on_epoch(&entry);
        log.epochs.push(entry);
    }

    predictor.training.epochs = config.epochs;
    if let Some(last) = log.epochs.last() {
        predictor.training.final_attribute_loss = Some(last.mean_attribute_loss);
        predictor.training.final_faithfulness_loss = Some(last.mean_faithfulness_loss);
    }
    Ok((predictor, log))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeFlipMetrics {
    pub attribute: usize,
    pub samples: usize,
    pub agreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftMetrics {
    pub samples: usize,
    /// Fraction of single-attribute commands whose counterfactual classifier
    /// output lands on the commanded side of 0.5.
    pub flip_agreement: f64,
    /// Mean `‖ẑ − z‖₂` over the single-attribute commands.
    pub mean_shift_norm: f64,
    /// Mean `‖ẑ − z‖₂` for the all-zero spec.
    pub mean_empty_drift: f64,
    pub max_empty_drift: f64,
    pub per_attribute: Vec<AttributeFlipMetrics>,
}

/// Held-out evaluation on `num_samples` latents, each paired with one random
/// attribute and a random sign.
pub fn eval_shift_predictor(
    world: &SyntheticWorld,
    params: &ShiftPredictor,
    num_samples: usize,
    seed: u64,
) -> Result<ShiftMetrics> {
    if num_samples == 0 {
        return Err(Error::Domain("need at least one evaluation sample".into()));
    }
    let (d, m) = (world.latent_dim(), world.num_attrs());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = vec![0usize; m];
    let mut counts = vec![0usize; m];
    let (mut shift_sum, mut drift_sum, mut drift_max) = (0.0, 0.0, 0.0f64);
    let zero = DirectionSpec::zeros(m);
    for _ in 0..num_samples {
        let z = sample_latent(d, &mut rng);
        let attr = rng.random_range(0..m);
        let up = rng.random_bool(0.5);
        let z_hat = shift_infer(params, &z, &DirectionSpec::single(m, attr, up))?;
        let y = world.predict_attrs(&world.generate(&z_hat)?)?[attr];
        counts[attr] += 1;
        if (up && y > 0.5) || (!up && y < 0.5) {
            hits[attr] += 1;
        }
        shift_sum += distance(&z_hat, &z);
        let drift = distance(&shift_infer(params, &z, &zero)?, &z);
        drift_sum += drift;
        drift_max = drift_max.max(drift);
    }
    let n = num_samples as f64;
    Ok(ShiftMetrics {
        samples: num_samples,
        flip_agreement: hits.iter().sum::<usize>() as f64 / n,
        mean_shift_norm: shift_sum / n,
        mean_empty_drift: drift_sum / n,
        max_empty_drift: drift_max,
        per_attribute: (0..m)
            .map(|i| AttributeFlipMetrics {
                attribute: i,
                samples: counts[i],
                agreement: if counts[i] == 0 {
                    0.0
                } else {
                    hits[i] as f64 / counts[i] as f64
                },
            })
            .collect(),
    })
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
