//! Variational Bayesian last layer.
//!
//! Every weight and bias carries an independent Gaussian posterior
//! `N(mu, exp(logvar))`. Training minimises the per-example negative ELBO
//!
//! ```text
//! loss = E_eps[ CE(softmax((mu_W + s_W * eps_W) x + mu_b + s_b * eps_b), y) ]
//!        + beta * KL(q || N(0, I)) / n_train
//! ```
//!
//! with the expectation estimated by reparameterized Monte-Carlo draws and
//! `s = exp(logvar / 2)`. Gradients are computed analytically. Callers that
//! need the loss and the gradient to see the same draws pass the same
//! [`NoiseDraw`] slice (or clones of the same RNG) to both.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::AnnealMode;

pub const N_CLASSES: usize = 2;
pub const LOGVAR_MIN: f64 = -30.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// Posterior means and log-variances of a `C x H` linear layer.
#[derive(Debug, Clone, PartialEq)]
pub struct VbllParams {
    pub w_mu: Array2<f64>,
    pub w_logvar: Array2<f64>,
    pub b_mu: Array1<f64>,
    pub b_logvar: Array1<f64>,
}

/// Gradient of the loss, shaped like [`VbllParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w_mu: Array2<f64>,
    pub w_logvar: Array2<f64>,
    pub b_mu: Array1<f64>,
    pub b_logvar: Array1<f64>,
}

impl VbllParams {
    pub fn n_classes(&self) -> usize {
        self.w_mu.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.w_mu.ncols()
    }

    pub fn clamp_logvars(&mut self) {
        self.w_logvar
            .mapv_inplace(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX));
        self.b_logvar
            .mapv_inplace(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX));
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Flat views in the fixed order `w_mu, w_logvar, b_mu, b_logvar`.
    pub fn tensors(&self) -> [&[f64]; 4] {
        [
            self.w_mu.as_slice().expect("standard layout"),
            self.w_logvar.as_slice().expect("standard layout"),
            self.b_mu.as_slice().expect("standard layout"),
            self.b_logvar.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w_mu.as_slice_mut().expect("standard layout"),
            self.w_logvar.as_slice_mut().expect("standard layout"),
            self.b_mu.as_slice_mut().expect("standard layout"),
            self.b_logvar.as_slice_mut().expect("standard layout"),
        ]
    }
}

impl Gradients {
    pub fn zeros(n_classes: usize, in_dim: usize) -> Self {
        Gradients {
            w_mu: Array2::zeros((n_classes, in_dim)),
            w_logvar: Array2::zeros((n_classes, in_dim)),
            b_mu: Array1::zeros(n_classes),
            b_logvar: Array1::zeros(n_classes),
        }
    }

    pub fn tensors(&self) -> [&[f64]; 4] {
        [
            self.w_mu.as_slice().expect("standard layout"),
            self.w_logvar.as_slice().expect("standard layout"),
            self.b_mu.as_slice().expect("standard layout"),
            self.b_logvar.as_slice().expect("standard layout"),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn add_assign(&mut self, other: &Gradients) {
        self.w_mu += &other.w_mu;
        self.w_logvar += &other.w_logvar;
        self.b_mu += &other.b_mu;
        self.b_logvar += &other.b_logvar;
    }
}

/// Whether training draws weights from the posterior or uses its mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    Reparameterized,
    /// `eps = 0`: the head collapses to plain softmax regression on the means.
    MeanOnly,
}

impl fmt::Display for Sampling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sampling::Reparameterized => "reparameterized",
            Sampling::MeanOnly => "mean_only",
        })
    }
}

impl FromStr for Sampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reparameterized" => Ok(Sampling::Reparameterized),
            "mean_only" => Ok(Sampling::MeanOnly),
            other => Err(Error::InvalidArgument(format!(
                "unknown sampling mode `{other}`"
            ))),
        }
    }
}

pub const MAP_BASELINE_EPOCHS: usize = 500;
pub const MAP_BASELINE_LR: f64 = 1e-2;

pub const INIT_LOGVAR_RANGE: (f64, f64) = (-5.0, -1.5);
pub const WEIGHT_MU_COEF_RANGE: (f64, f64) = (1e-4, 0.1);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub init_logvar: f64,
    pub weight_mu_coef: f64,
    pub epochs: usize,
    pub kl_mode: AnnealMode,
    pub lr: f64,
    pub seed: u64,
    pub train_samples: usize,
    pub eval_samples: usize,
    pub sampling: Sampling,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            init_logvar: -2.0,
            weight_mu_coef: 0.01,
            epochs: 50,
            kl_mode: AnnealMode::Cosine,
            lr: 1e-3,
            seed: 42,
            train_samples: 4,
            eval_samples: 100,
            sampling: Sampling::Reparameterized,
        }
    }
}

impl TrainConfig {
    /// Deterministic softmax-regression head: no KL term, no weight noise,
    /// trained long enough to converge on standardized tabular features.
    pub fn map_baseline(seed: u64) -> Self {
        TrainConfig {
            epochs: MAP_BASELINE_EPOCHS,
            lr: MAP_BASELINE_LR,
            kl_mode: AnnealMode::Off,
            sampling: Sampling::MeanOnly,
            train_samples: 1,
            eval_samples: 1,
            seed,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !self.init_logvar.is_finite() || !self.weight_mu_coef.is_finite() {
            return bad("init_logvar and weight_mu_coef must be finite".into());
        }
        if self.weight_mu_coef < 0.0 {
            return bad(format!(
                "weight_mu_coef {} is negative",
                self.weight_mu_coef
            ));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if self.train_samples == 0 || self.eval_samples == 0 {
            return bad("sample counts must be at least 1".into());
        }
        Ok(())
    }

    /// True when the two tuned hyperparameters sit inside the search space.
    pub fn within_search_space(&self) -> bool {
        let (lo, hi) = INIT_LOGVAR_RANGE;
        let (clo, chi) = WEIGHT_MU_COEF_RANGE;
        (lo..=hi).contains(&self.init_logvar) && (clo..=chi).contains(&self.weight_mu_coef)
    }

    pub fn to_key_values(&self) -> String {
        format!(
            "init_logvar={}\nweight_mu_coef={}\nepochs={}\nkl_mode={}\nlr={}\nseed={}\ntrain_samples={}\neval_samples={}\nsampling={}\n",
            self.init_logvar,
            self.weight_mu_coef,
            self.epochs,
            self.kl_mode,
            self.lr,
            self.seed,
            self.train_samples,
            self.eval_samples,
            self.sampling
        )
    }

    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("config line `{line}` has no `=`")))?;
            let bad = || Error::Format(format!("bad value for `{key}`: `{value}`"));
            match key {
                "init_logvar" => cfg.init_logvar = value.parse().map_err(|_| bad())?,
                "weight_mu_coef" => cfg.weight_mu_coef = value.parse().map_err(|_| bad())?,
                "epochs" => cfg.epochs = value.parse().map_err(|_| bad())?,
                "kl_mode" => cfg.kl_mode = value.parse()?,
                "lr" => cfg.lr = value.parse().map_err(|_| bad())?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad())?,
                "train_samples" => cfg.train_samples = value.parse().map_err(|_| bad())?,
                "eval_samples" => cfg.eval_samples = value.parse().map_err(|_| bad())?,
                "sampling" => cfg.sampling = value.parse()?,
                other => return Err(Error::Format(format!("unknown config key `{other}`"))),
            }
        }
        Ok(cfg)
    }
}

/// The five compiled-in hyperparameter rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConfigPreset {
    C1,
    C2,
    C3,
    C4,
    C5,
}

impl ConfigPreset {
    pub const ALL: [ConfigPreset; 5] = [
        ConfigPreset::C1,
        ConfigPreset::C2,
        ConfigPreset::C3,
        ConfigPreset::C4,
        ConfigPreset::C5,
    ];

    /// `(kl_mode, epochs, init_logvar, weight_mu_coef)`
    pub fn values(&self) -> (AnnealMode, usize, f64, f64) {
        match self {
            ConfigPreset::C1 => (AnnealMode::Cosine, 50, -5.0, 0.001),
            ConfigPreset::C2 => (AnnealMode::Cosine, 50, -3.0, 0.001),
            ConfigPreset::C3 => (AnnealMode::Cosine, 50, -2.0, 0.001),
            ConfigPreset::C4 => (AnnealMode::Cosine, 50, -2.0, 0.01),
            ConfigPreset::C5 => (AnnealMode::Linear, 50, -2.0, 0.01),
        }
    }

    pub fn config(&self, seed: u64) -> TrainConfig {
        let (kl_mode, epochs, init_logvar, weight_mu_coef) = self.values();
        TrainConfig {
            init_logvar,
            weight_mu_coef,
            epochs,
            kl_mode,
            seed,
            ..TrainConfig::default()
        }
    }
}

impl fmt::Display for ConfigPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for ConfigPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "C1" => Ok(ConfigPreset::C1),
            "C2" => Ok(ConfigPreset::C2),
            "C3" => Ok(ConfigPreset::C3),
            "C4" => Ok(ConfigPreset::C4),
            "C5" => Ok(ConfigPreset::C5),
            other => Err(Error::InvalidArgument(format!("unknown preset `{other}`"))),
        }
    }
}

/// One concrete draw of weights and biases.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSample {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Standard-normal noise for one reparameterized draw.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl NoiseDraw {
    pub fn zeros(n_classes: usize, in_dim: usize) -> Self {
        NoiseDraw {
            w: Array2::zeros((n_classes, in_dim)),
            b: Array1::zeros(n_classes),
        }
    }

    pub fn sample<R: Rng + ?Sized>(n_classes: usize, in_dim: usize, rng: &mut R) -> Self {
        let w = Array2::from_shape_simple_fn((n_classes, in_dim), || StandardNormal.sample(rng));
        let b = Array1::from_shape_simple_fn(n_classes, || StandardNormal.sample(rng));
        NoiseDraw { w, b }
    }

    pub fn sample_many<R: Rng + ?Sized>(p: &VbllParams, count: usize, rng: &mut R) -> Vec<Self> {
        (0..count)
            .map(|_| NoiseDraw::sample(p.n_classes(), p.in_dim(), rng))
            .collect()
    }
}

/// Means drawn as `weight_mu_coef * N(0, 1)` from a seeded stream (weights
/// first, then biases); every log-variance set to `init_logvar`.
pub fn init_params(
    in_dim: usize,
    n_classes: usize,
    init_logvar: f64,
    weight_mu_coef: f64,
    seed: u64,
) -> Result<VbllParams> {
    if in_dim == 0 {
        return Err(Error::InvalidArgument(
            "input dimension must be at least 1".into(),
        ));
    }
    if n_classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 classes, got {n_classes}"
        )));
    }
    if !init_logvar.is_finite() || !weight_mu_coef.is_finite() {
        return Err(Error::NonFinite("initialization hyperparameters".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> f64 {
        let z: f64 = StandardNormal.sample(&mut rng);
        weight_mu_coef * z
    };
    let w_mu = Array2::from_shape_simple_fn((n_classes, in_dim), &mut draw);
    let b_mu = Array1::from_shape_simple_fn(n_classes, &mut draw);
    let logvar = init_logvar.clamp(LOGVAR_MIN, LOGVAR_MAX);
    Ok(VbllParams {
        w_mu,
        w_logvar: Array2::from_elem((n_classes, in_dim), logvar),
        b_mu,
        b_logvar: Array1::from_elem(n_classes, logvar),
    })
}

/// `w = mu + exp(logvar / 2) * eps`
pub fn reparameterize(p: &VbllParams, noise: &NoiseDraw) -> WeightSample {
    let mut w = p.w_mu.clone();
    Zip::from(&mut w)
        .and(&p.w_logvar)
        .and(&noise.w)
        .for_each(|w, &lv, &e| *w += (0.5 * lv).exp() * e);
    let mut b = p.b_mu.clone();
    Zip::from(&mut b)
        .and(&p.b_logvar)
        .and(&noise.b)
        .for_each(|b, &lv, &e| *b += (0.5 * lv).exp() * e);
    WeightSample { w, b }
}

pub fn sample_weights<R: Rng + ?Sized>(p: &VbllParams, rng: &mut R) -> WeightSample {
    reparameterize(p, &NoiseDraw::sample(p.n_classes(), p.in_dim(), rng))
}

/// `W x + b`
pub fn forward_logits(s: &WeightSample, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if x.len() != s.w.ncols() {
        return Err(Error::DimensionMismatch {
            expected: s.w.ncols(),
            got: x.len(),
        });
    }
    Ok(s.w.dot(&x) + &s.b)
}

fn batch_logits(w: &Array2<f64>, b: &Array1<f64>, e: ArrayView2<'_, f64>) -> Array2<f64> {
    e.dot(&w.t()) + b
}

/// In-place row-wise softmax.
fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

fn log_softmax_at(row: ArrayView1<'_, f64>, class: usize) -> f64 {
    let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row[class] - lse
}

/// Closed-form `KL(q || N(0, I))` summed over every weight and bias:
/// `0.5 * (mu^2 + exp(logvar) - logvar - 1)` per coordinate.
pub fn kl_to_standard_normal(p: &VbllParams) -> f64 {
    let term = |mu: f64, lv: f64| 0.5 * (mu * mu + lv.exp() - lv - 1.0);
    let w: f64 = p
        .w_mu
        .iter()
        .zip(p.w_logvar.iter())
        .map(|(&m, &lv)| term(m, lv))
        .sum();
    let b: f64 = p
        .b_mu
        .iter()
        .zip(p.b_logvar.iter())
        .map(|(&m, &lv)| term(m, lv))
        .sum();
    w + b
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub loss: f64,
    pub ce: f64,
    pub kl: f64,
}

/// Negative ELBO with the KL term scaled by `beta / n_train`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboObjective {
    pub beta: f64,
    pub n_train: usize,
}

impl ElboObjective {
    pub fn new(beta: f64, n_train: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidArgument(format!(
                "beta {beta} outside [0, 1]"
            )));
        }
        if n_train == 0 {
            return Err(Error::InvalidArgument("n_train must be at least 1".into()));
        }
        Ok(ElboObjective { beta, n_train })
    }

    fn check(
        &self,
        p: &VbllParams,
        e: ArrayView2<'_, f64>,
        y: &[u8],
        noise: &[NoiseDraw],
    ) -> Result<()> {
        if e.nrows() == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if e.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: e.nrows(),
                got: y.len(),
            });
        }
        if e.ncols() != p.in_dim() {
            return Err(Error::DimensionMismatch {
                expected: p.in_dim(),
                got: e.ncols(),
            });
        }
        if let Some(&bad) = y.iter().find(|&&l| l as usize >= p.n_classes()) {
            return Err(Error::InvalidArgument(format!("label {bad} out of range")));
        }
        if noise.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one noise draw is required".into(),
            ));
        }
        Ok(())
    }

    /// KL contribution `kl / n_train`.
    pub fn kl_term(&self, p: &VbllParams) -> f64 {
        kl_to_standard_normal(p) / self.n_train as f64
    }

    pub fn loss(
        &self,
        p: &VbllParams,
        e: ArrayView2<'_, f64>,
        y: &[u8],
        noise: &[NoiseDraw],
    ) -> Result<LossTerms> {
        self.check(p, e, y, noise)?;
        let mut ce = 0.0;
        for draw in noise {
            let s = reparameterize(p, draw);
            let z = batch_logits(&s.w, &s.b, e);
            let nll: f64 = z
                .rows()
                .into_iter()
                .zip(y)
                .map(|(row, &label)| -log_softmax_at(row, label as usize))
                .sum();
            ce += nll / y.len() as f64;
        }
        ce /= noise.len() as f64;
        let kl = self.kl_term(p);
        Ok(LossTerms {
            loss: ce + self.beta * kl,
            ce,
            kl,
        })
    }

    /// Gradient of `beta * kl / n_train` alone.
    pub fn kl_gradients(&self, p: &VbllParams) -> Gradients {
        let scale = self.beta / self.n_train as f64;
        let dlv = |lv: f64| scale * 0.5 * (lv.exp() - 1.0);
        Gradients {
            w_mu: &p.w_mu * scale,
            w_logvar: p.w_logvar.mapv(dlv),
            b_mu: &p.b_mu * scale,
            b_logvar: p.b_logvar.mapv(dlv),
        }
    }

    /// Loss and its analytic gradient for the given draws.
    ///
    /// Per draw, `dCE/dlogits = (softmax - onehot) / (N * S)`; that flows to
    /// the sampled weights as `G^T E` and to each parameter through
    /// `dw/dmu = 1`, `dw/dlogvar = 0.5 * sigma * eps`.
    pub fn loss_and_gradients(
        &self,
        p: &VbllParams,
        e: ArrayView2<'_, f64>,
        y: &[u8],
        noise: &[NoiseDraw],
    ) -> Result<(LossTerms, Gradients)> {
        self.check(p, e, y, noise)?;
        let n = y.len();
        let scale = 1.0 / (n * noise.len()) as f64;
        let w_sigma = p.w_logvar.mapv(|lv| (0.5 * lv).exp());
        let b_sigma = p.b_logvar.mapv(|lv| (0.5 * lv).exp());
        let mut grads = Gradients::zeros(p.n_classes(), p.in_dim());
        let mut ce = 0.0;
        for draw in noise {
            let s = reparameterize(p, draw);
            let mut probs = batch_logits(&s.w, &s.b, e);
            for (row, &label) in probs.rows().into_iter().zip(y) {
                ce -= log_softmax_at(row, label as usize);
            }
            softmax_rows(&mut probs);
            for (mut row, &label) in probs.rows_mut().into_iter().zip(y) {
                row[label as usize] -= 1.0;
            }
            probs *= scale;
            let dw = probs.t().dot(&e);
            let db = probs.sum_axis(Axis(0));

            grads.w_mu += &dw;
            grads.b_mu += &db;
            Zip::from(&mut grads.w_logvar)
                .and(&dw)
                .and(&w_sigma)
                .and(&draw.w)
                .for_each(|g, &d, &s, &eps| *g += d * 0.5 * s * eps);
            Zip::from(&mut grads.b_logvar)
                .and(&db)
                .and(&b_sigma)
                .and(&draw.b)
                .for_each(|g, &d, &s, &eps| *g += d * 0.5 * s * eps);
        }
        ce *= scale;
        grads.add_assign(&self.kl_gradients(p));
        let kl = self.kl_term(p);
        Ok((
            LossTerms {
                loss: ce + self.beta * kl,
                ce,
                kl,
            },
            grads,
        ))
    }
}

/// Negative ELBO over `samples` fresh draws, with `n_train` taken as the
/// batch size (full-batch training).
pub fn elbo_loss<R: Rng + ?Sized>(
    p: &VbllParams,
    e: ArrayView2<'_, f64>,
    y: &[u8],
    beta: f64,
    samples: usize,
    rng: &mut R,
) -> Result<LossTerms> {
    let objective = ElboObjective::new(beta, e.nrows().max(1))?;
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be at least 1".into()));
    }
    let noise = NoiseDraw::sample_many(p, samples, rng);
    objective.loss(p, e, y, &noise)
}

/// Analytic gradient of [`elbo_loss`]. Passing an RNG in the same state as
/// the one given to `elbo_loss` yields the gradient for the same draws.
pub fn loss_gradients<R: Rng + ?Sized>(
    p: &VbllParams,
    e: ArrayView2<'_, f64>,
    y: &[u8],
    beta: f64,
    samples: usize,
    rng: &mut R,
) -> Result<Gradients> {
    let objective = ElboObjective::new(beta, e.nrows().max(1))?;
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be at least 1".into()));
    }
    let noise = NoiseDraw::sample_many(p, samples, rng);
    objective
        .loss_and_gradients(p, e, y, &noise)
        .map(|(_, g)| g)
}

fn check_inputs(p: &VbllParams, e: ArrayView2<'_, f64>) -> Result<()> {
    if e.ncols() != p.in_dim() {
        return Err(Error::DimensionMismatch {
            expected: p.in_dim(),
            got: e.ncols(),
        });
    }
    Ok(())
}

/// Monte-Carlo posterior predictive: the mean over `samples` weight draws of
/// `softmax(W x + b)`.
pub fn predictive_probs<R: Rng + ?Sized>(
    p: &VbllParams,
    e: ArrayView2<'_, f64>,
    samples: usize,
    rng: &mut R,
) -> Result<Array2<f64>> {
    check_inputs(p, e)?;
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be at least 1".into()));
    }
    let mut acc = Array2::zeros((e.nrows(), p.n_classes()));
    for _ in 0..samples {
        let s = sample_weights(p, rng);
        let mut probs = batch_logits(&s.w, &s.b, e);
        softmax_rows(&mut probs);
        acc += &probs;
    }
    acc /= samples as f64;
    Ok(acc)
}

/// Deterministic prediction from the posterior means.
pub fn map_predictive(p: &VbllParams, e: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_inputs(p, e)?;
    let mut probs = batch_logits(&p.w_mu, &p.b_mu, e);
    softmax_rows(&mut probs);
    Ok(probs)
}

pub const MODEL_MAGIC: [u8; 4] = *b"VBLM";
pub const MODEL_VERSION: u32 = 1;

/// Serialize as `"VBLM" | u32 version | u32 C | u32 H | f64 w_mu, w_logvar,
/// b_mu, b_logvar | key=value config trailer`, little-endian.
pub fn encode_model(p: &VbllParams, cfg: &TrainConfig) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(p.n_classes() as u32).to_le_bytes());
    out.extend_from_slice(&(p.in_dim() as u32).to_le_bytes());
    for t in p.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(cfg.to_key_values().as_bytes());
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<(VbllParams, TrainConfig)> {
    if bytes.len() < 16 || bytes[..4] != MODEL_MAGIC {
        return Err(Error::Format("not a VBLM model file".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    if u32_at(4) != MODEL_VERSION as usize {
        return Err(Error::Format(format!(
            "unsupported model version {}",
            u32_at(4)
        )));
    }
    let (c, h) = (u32_at(8), u32_at(12));
    let count = 2 * c * h + 2 * c;
    let end = 16 + 8 * count;
    if bytes.len() < end {
        return Err(Error::Format("truncated model payload".into()));
    }
    let values: Vec<f64> = bytes[16..end]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let (w_mu, rest) = values.split_at(c * h);
    let (w_logvar, rest) = rest.split_at(c * h);
    let (b_mu, b_logvar) = rest.split_at(c);
    let p = VbllParams {
        w_mu: Array2::from_shape_vec((c, h), w_mu.to_vec()).expect("sized"),
        w_logvar: Array2::from_shape_vec((c, h), w_logvar.to_vec()).expect("sized"),
        b_mu: Array1::from(b_mu.to_vec()),
        b_logvar: Array1::from(b_logvar.to_vec()),
    };
    if !p.is_finite() {
        return Err(Error::NonFinite("model parameters".into()));
    }
    let trailer = std::str::from_utf8(&bytes[end..])
        .map_err(|_| Error::Format("model config trailer is not UTF-8".into()))?;
    Ok((p, TrainConfig::from_key_values(trailer)?))
}

pub fn save_model(p: &VbllParams, cfg: &TrainConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_model(p, cfg)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(VbllParams, TrainConfig)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn scalar_params(mu: f64, logvar: f64) -> VbllParams {
        VbllParams {
            w_mu: array![[mu]],
            w_logvar: array![[logvar]],
            b_mu: array![0.0],
            b_logvar: array![0.0],
        }
    }

    #[test]
    fn init_sets_logvar_and_respects_scale() {
        let p = init_params(7, 2, -5.0, 0.001, 3).unwrap();
        assert!(p.w_logvar.iter().all(|&v| v == -5.0));
        assert!(p.b_logvar.iter().all(|&v| v == -5.0));
        let zero = init_params(7, 2, -2.0, 0.0, 3).unwrap();
        assert!(zero.w_mu.iter().all(|&v| v == 0.0));
        assert_eq!(p, init_params(7, 2, -5.0, 0.001, 3).unwrap());
        assert!(init_params(7, 2, f64::NAN, 0.1, 3).is_err());
        assert!(init_params(0, 2, -2.0, 0.1, 3).is_err());
    }

    #[test]
    fn zero_noise_returns_mean() {
        let p = init_params(3, 2, -2.0, 0.5, 1).unwrap();
        let s = reparameterize(&p, &NoiseDraw::zeros(2, 3));
        assert_eq!(s.w, p.w_mu);
        assert_eq!(s.b, p.b_mu);
    }

    #[test]
    fn vanishing_variance_sample_equals_mean() {
        let mut p = init_params(4, 2, LOGVAR_MIN, 1.0, 1).unwrap();
        p.clamp_logvars();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_weights(&p, &mut rng);
        for (a, b) in s.w.iter().zip(p.w_mu.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn sample_mean_converges() {
        let (mu, lv) = (0.7, -1.0);
        let p = scalar_params(mu, lv);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| sample_weights(&p, &mut rng).w[[0, 0]])
            .sum::<f64>()
            / n as f64;
        let sigma = (0.5f64 * lv).exp();
        assert!((mean - mu).abs() < 3.0 * sigma / (n as f64).sqrt());
    }

    #[test]
    fn logits_hand_cases() {
        let id = WeightSample {
            w: array![[1.0, 0.0], [0.0, 1.0]],
            b: array![0.0, 0.0],
        };
        assert_eq!(
            forward_logits(&id, array![1.0, 2.0].view()).unwrap(),
            array![1.0, 2.0]
        );
        let bias = WeightSample {
            w: Array2::zeros((2, 2)),
            b: array![3.0, -1.0],
        };
        assert_eq!(
            forward_logits(&bias, array![5.0, 6.0].view()).unwrap(),
            array![3.0, -1.0]
        );
        let toy = WeightSample {
            w: array![[1.0, -2.0, 0.5], [0.0, 3.0, -1.0]],
            b: array![0.25, -0.5],
        };
        let x = array![2.0, 1.0, 4.0];
        let hand = array![2.0 - 2.0 + 2.0 + 0.25, 3.0 - 4.0 - 0.5];
        assert_eq!(forward_logits(&toy, x.view()).unwrap(), hand);
        assert!(forward_logits(&toy, array![1.0].view()).is_err());
    }

    #[test]
    fn kl_hand_cases() {
        assert_eq!(kl_to_standard_normal(&scalar_params(0.0, 0.0)), 0.0);
        assert!((kl_to_standard_normal(&scalar_params(1.0, 0.0)) - 0.5).abs() < 1e-15);
        let expected = 0.5 * ((-5.0f64).exp() + 5.0 - 1.0);
        assert!((kl_to_standard_normal(&scalar_params(0.0, -5.0)) - expected).abs() < 1e-15);
        assert!((expected - 2.00337).abs() < 1e-5);
    }

    #[test]
    fn uniform_logits_give_ln2() {
        let mut p = init_params(3, 2, LOGVAR_MIN, 0.0, 0).unwrap();
        p.clamp_logvars();
        let e = array![[1.0, 2.0, 3.0], [-1.0, 0.5, 2.0]];
        let obj = ElboObjective::new(0.0, 2).unwrap();
        let t = obj
            .loss(&p, e.view(), &[0, 1], &[NoiseDraw::zeros(2, 3)])
            .unwrap();
        assert!((t.ce - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(t.loss, t.ce);
    }

    #[test]
    fn loss_decomposes() {
        let p = init_params(3, 2, -1.0, 0.3, 5).unwrap();
        let e = array![[1.0, 2.0, 3.0], [-1.0, 0.5, 2.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = elbo_loss(&p, e.view(), &[1, 0], 0.37, 3, &mut rng).unwrap();
        assert!((t.loss - t.ce - 0.37 * t.kl).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t0 = elbo_loss(&p, e.view(), &[1, 0], 0.0, 3, &mut rng).unwrap();
        assert_eq!(t0.loss, t0.ce);
        let empty = Array2::<f64>::zeros((0, 3));
        assert!(elbo_loss(&p, empty.view(), &[], 0.5, 1, &mut rng).is_err());
        assert!(elbo_loss(&p, e.view(), &[1, 0], 1.5, 1, &mut rng).is_err());
    }

    #[test]
    fn kl_only_gradients() {
        let p = init_params(4, 2, -1.0, 0.5, 8).unwrap();
        let obj = ElboObjective::new(1.0, 10).unwrap();
        let g = obj.kl_gradients(&p);
        for (a, b) in g.w_mu.iter().zip(p.w_mu.iter()) {
            assert!((a - b / 10.0).abs() < 1e-15);
        }
        let prior = scalar_params(0.0, 0.0);
        let g = ElboObjective::new(1.0, 1).unwrap().kl_gradients(&prior);
        assert_eq!(g.w_logvar[[0, 0]], 0.0);
    }

    #[test]
    fn same_rng_state_gives_matching_loss_and_gradient_draws() {
        let p = init_params(3, 2, -1.0, 0.3, 5).unwrap();
        let e = array![[1.0, 2.0, 3.0], [-1.0, 0.5, 2.0]];
        let y = [1u8, 0];
        let rng = ChaCha8Rng::seed_from_u64(99);
        let g1 = loss_gradients(&p, e.view(), &y, 0.5, 2, &mut rng.clone()).unwrap();
        let noise = NoiseDraw::sample_many(&p, 2, &mut rng.clone());
        let obj = ElboObjective::new(0.5, 2).unwrap();
        let (t, g2) = obj.loss_and_gradients(&p, e.view(), &y, &noise).unwrap();
        assert_eq!(g1, g2);
        let t2 = elbo_loss(&p, e.view(), &y, 0.5, 2, &mut rng.clone()).unwrap();
        assert!((t.loss - t2.loss).abs() < 1e-15);
    }

    #[test]
    fn map_predictive_hand_cases() {
        let mut p = init_params(2, 2, -2.0, 0.0, 0).unwrap();
        let e = array![[1.0, -1.0], [3.0, 2.0]];
        let probs = map_predictive(&p, e.view()).unwrap();
        assert!(probs.iter().all(|&v| v == 0.5));
        p.b_mu = array![3.0f64.ln(), 0.0];
        let probs = map_predictive(&p, e.view()).unwrap();
        assert!((probs[[0, 0]] - 0.75).abs() < 1e-15);
        assert!((probs[[0, 1]] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn predictive_with_collapsed_posterior_matches_map() {
        let mut p = init_params(3, 2, LOGVAR_MIN, 0.8, 2).unwrap();
        p.clamp_logvars();
        let e = array![[1.0, 2.0, 3.0], [-1.0, 0.5, 2.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mc = predictive_probs(&p, e.view(), 20, &mut rng).unwrap();
        let map = map_predictive(&p, e.view()).unwrap();
        for (a, b) in mc.iter().zip(map.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn model_file_round_trip() {
        let p = init_params(5, 2, -3.0, 0.05, 13).unwrap();
        let cfg = ConfigPreset::C3.config(17);
        let bytes = encode_model(&p, &cfg);
        let (p2, cfg2) = decode_model(&bytes).unwrap();
        assert_eq!(p, p2);
        assert_eq!(cfg, cfg2);
        assert!(decode_model(&bytes[..20]).is_err());
    }

    #[test]
    fn presets_match_table() {
        let c4 = ConfigPreset::C4.config(0);
        assert_eq!(c4.kl_mode, AnnealMode::Cosine);
        assert_eq!(
            (c4.epochs, c4.init_logvar, c4.weight_mu_coef),
            (50, -2.0, 0.01)
        );
        assert_eq!(ConfigPreset::C5.values().0, AnnealMode::Linear);
        assert_eq!(ConfigPreset::C1.values().2, -5.0);
        assert!(ConfigPreset::ALL
            .iter()
            .all(|p| p.config(0).within_search_space()));
        assert_eq!("c2".parse::<ConfigPreset>().unwrap(), ConfigPreset::C2);
    }
}
