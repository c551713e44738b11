//! Adam, KL annealing, and the full-batch training loop.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use log::debug;
use ndarray::ArrayView2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::{
    init_params, ElboObjective, Gradients, NoiseDraw, Sampling, TrainConfig, VbllParams, N_CLASSES,
};

/// Shape of the KL weight ramp. `Off` pins beta at 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnealMode {
    Linear,
    Cosine,
    Off,
}

impl fmt::Display for AnnealMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnnealMode::Linear => "linear",
            AnnealMode::Cosine => "cosine",
            AnnealMode::Off => "off",
        })
    }
}

impl FromStr for AnnealMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" => Ok(AnnealMode::Linear),
            "cosine" => Ok(AnnealMode::Cosine),
            "off" | "none" => Ok(AnnealMode::Off),
            other => Err(Error::InvalidArgument(format!(
                "unknown KL annealing mode `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealSchedule {
    pub mode: AnnealMode,
    pub total_epochs: usize,
}

impl AnnealSchedule {
    pub fn new(mode: AnnealMode, total_epochs: usize) -> Self {
        AnnealSchedule { mode, total_epochs }
    }

    pub fn beta(&self, epoch: usize) -> Result<f64> {
        anneal_beta(self, epoch)
    }
}

/// KL weight at `epoch`: `t / T` (linear) or `(1 - cos(pi t / T)) / 2`
/// (cosine). Both ramp from 0 at `t = 0` to 1 at `t = T`.
pub fn anneal_beta(s: &AnnealSchedule, epoch: usize) -> Result<f64> {
    if epoch > s.total_epochs {
        return Err(Error::InvalidArgument(format!(
            "epoch {epoch} beyond schedule length {}",
            s.total_epochs
        )));
    }
    if s.total_epochs == 0 {
        return Ok(if s.mode == AnnealMode::Off { 0.0 } else { 1.0 });
    }
    let frac = epoch as f64 / s.total_epochs as f64;
    Ok(match s.mode {
        AnnealMode::Linear => frac,
        AnnealMode::Cosine => 0.5 * (1.0 - (PI * frac).cos()),
        AnnealMode::Off => 0.0,
    })
}

/// Adam with bias correction over a fixed list of flat tensors.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr,
        }
    }

    /// One update of every tensor. Moment buffers are created on the first
    /// call and shapes are fixed from then on.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::DimensionMismatch {
                expected: params.len(),
                got: grads.len(),
            });
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.m.len(),
                got: params.len(),
            });
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.m[k].len() {
                return Err(Error::DimensionMismatch {
                    expected: self.m[k].len(),
                    got: g.len(),
                });
            }
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient tensor {k}, element {i} at Adam step {}",
                    self.t + 1
                )));
            }
        }

        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

pub fn adam_step(state: &mut AdamState, params: &mut VbllParams, grads: &Gradients) -> Result<()> {
    state.step(&mut params.tensors_mut(), &grads.tensors())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub ce: f64,
    pub kl: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn betas(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.beta).collect()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,loss,ce,kl,beta")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{:.6},{:.6},{:.6},{:.6}",
                r.epoch, r.loss, r.ce, r.kl, r.beta
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to a Vec cannot fail");
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

/// Full-batch training: one Adam step per epoch, beta taken from the
/// schedule at the start of each epoch, log-variances clamped after each
/// step. The recorded loss is the one the step's gradient was taken from.
pub fn train(
    config: &TrainConfig,
    e_train: ArrayView2<'_, f64>,
    y_train: &[u8],
) -> Result<(VbllParams, TrainHistory)> {
    train_observed(config, e_train, y_train, |_, _| {})
}

/// [`train`], calling `observe(epoch, params)` after each epoch's update.
pub fn train_observed<F: FnMut(usize, &VbllParams)>(
    config: &TrainConfig,
    e_train: ArrayView2<'_, f64>,
    y_train: &[u8],
    mut observe: F,
) -> Result<(VbllParams, TrainHistory)> {
    config.validate()?;
    if e_train.nrows() != y_train.len() {
        return Err(Error::DimensionMismatch {
            expected: e_train.nrows(),
            got: y_train.len(),
        });
    }
    let mut params = init_params(
        e_train.ncols(),
        N_CLASSES,
        config.init_logvar,
        config.weight_mu_coef,
        config.seed,
    )?;
    let schedule = AnnealSchedule::new(config.kl_mode, config.epochs);
    let mut adam = AdamState::new(config.lr);
    // second ChaCha stream so the noise sequence is independent of init
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let mut history = TrainHistory::default();
    for epoch in 0..config.epochs {
        let beta = schedule.beta(epoch)?;
        let objective = ElboObjective::new(beta, y_train.len().max(1))?;
        let noise = match config.sampling {
            Sampling::Reparameterized => {
                NoiseDraw::sample_many(&params, config.train_samples, &mut rng)
            }
            Sampling::MeanOnly => vec![NoiseDraw::zeros(params.n_classes(), params.in_dim())],
        };
        let (terms, grads) = objective.loss_and_gradients(&params, e_train, y_train, &noise)?;
        history.records.push(EpochRecord {
            epoch,
            loss: terms.loss,
            ce: terms.ce,
            kl: terms.kl,
            beta,
        });
        adam_step(&mut adam, &mut params, &grads)?;
        params.clamp_logvars();
        observe(epoch, &params);
        debug!(
            "epoch {epoch}: loss {:.5} ce {:.5} kl {:.5} beta {beta:.4}",
            terms.loss, terms.ce, terms.kl
        );
    }
    Ok((params, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn schedule_endpoints_and_midpoint() {
        let lin = AnnealSchedule::new(AnnealMode::Linear, 50);
        assert_eq!(lin.beta(0).unwrap(), 0.0);
        assert_eq!(lin.beta(50).unwrap(), 1.0);
        let cos = AnnealSchedule::new(AnnealMode::Cosine, 50);
        assert!((cos.beta(25).unwrap() - 0.5).abs() < 1e-12);
        let quarter = 0.5 * (1.0 - (PI / 4.0).cos());
        assert!((cos.beta(12).unwrap() - 0.5 * (1.0 - (PI * 12.0 / 50.0).cos())).abs() < 1e-15);
        let cos4 = AnnealSchedule::new(AnnealMode::Cosine, 4);
        assert!((cos4.beta(1).unwrap() - quarter).abs() < 1e-15);
        assert!((quarter - 0.14645).abs() < 1e-5);
        assert!(cos.beta(51).is_err());
        assert_eq!(
            AnnealSchedule::new(AnnealMode::Off, 10).beta(7).unwrap(),
            0.0
        );
    }

    #[test]
    fn adam_first_step() {
        let mut adam = AdamState::new(1e-3);
        let mut p = [0.0f64];
        adam.step(&mut [&mut p[..]], &[&[0.1][..]]).unwrap();
        assert!((p[0] + 9.99999e-4).abs() < 1e-9, "{}", p[0]);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut adam = AdamState::new(1e-3);
        let mut a = [1.25f64, -3.5];
        let before = a;
        adam.step(&mut [&mut a[..]], &[&[0.0, 0.0][..]]).unwrap();
        assert_eq!(a.map(f64::to_bits), before.map(f64::to_bits));
    }

    #[test]
    fn adam_tensors_are_independent() {
        let mut joint = AdamState::new(1e-2);
        let (mut a, mut b) = ([1.0f64, 2.0], [3.0f64]);
        joint
            .step(
                &mut [&mut a[..], &mut b[..]],
                &[&[0.5, -0.2][..], &[0.0][..]],
            )
            .unwrap();
        let mut solo = AdamState::new(1e-2);
        let mut a2 = [1.0f64, 2.0];
        solo.step(&mut [&mut a2[..]], &[&[0.5, -0.2][..]]).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, [3.0]);
    }

    #[test]
    fn adam_rejects_non_finite_and_shape_errors() {
        let mut adam = AdamState::new(1e-3);
        let mut p = [0.0f64; 2];
        assert!(matches!(
            adam.step(&mut [&mut p[..]], &[&[f64::NAN, 0.0][..]]),
            Err(Error::NonFinite(_))
        ));
        assert!(adam.step(&mut [&mut p[..]], &[&[0.0][..]]).is_err());
    }

    #[test]
    fn linear_schedule_betas_recorded_per_epoch() {
        let e = Array2::from_shape_fn((6, 2), |(i, j)| (i as f64 - 2.5) * (j as f64 + 1.0));
        let y = [0u8, 0, 0, 1, 1, 1];
        let cfg = crate::head::ConfigPreset::C5.config(3);
        let (_, hist) = train(&cfg, e.view(), &y).unwrap();
        assert_eq!(hist.len(), 50);
        for (t, beta) in hist.betas().into_iter().enumerate() {
            assert_eq!(beta, t as f64 / 50.0);
        }
    }

    #[test]
    fn history_csv_layout() {
        let hist = TrainHistory {
            records: vec![EpochRecord {
                epoch: 0,
                loss: 0.5,
                ce: 0.25,
                kl: 1.0,
                beta: 0.25,
            }],
        };
        let mut buf = Vec::new();
        hist.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,loss,ce,kl,beta\n0,0.500000,0.250000,1.000000,0.250000\n"
        );
    }
}
