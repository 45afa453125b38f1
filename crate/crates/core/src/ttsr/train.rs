//! Staged training: reconstruction only, then the composite loss with
//! alternating critic and generator updates.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semsr_tensorad::{
    adam_step, AdamConfig, CyclicLr, DType, Graph, OptimState, ParamSet, Tensor, Var, WeightsFile,
};
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::data::TrainingSet;
use super::infer::Model;
use super::loss::{
    interpolate, loss_adv_critic, loss_adv_generator, loss_per, loss_rec, loss_total_var,
    LossParts, Stage,
};
use super::model::{critic_forward, init_critic, init_generator, init_perceptual, ttsr_forward};
use crate::error::{param, Error, Result};

/// One row of the loss curve. `L_per` and `L_adv` are not evaluated in the
/// first stage and read 0 there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub lr: f64,
    #[serde(rename = "L_rec")]
    pub rec: f64,
    #[serde(rename = "L_per")]
    pub per: f64,
    #[serde(rename = "L_adv")]
    pub adv: f64,
    #[serde(rename = "L_total")]
    pub total: f64,
}

/// Validation reconstruction loss at a given step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationPoint {
    pub step: u64,
    pub rec: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub curve: Vec<LossRecord>,
    /// At initialization, at the stage switch and at the end.
    pub validation: Vec<ValidationPoint>,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    generator: ParamSet,
    critic: ParamSet,
    perceptual: ParamSet,
    opt_g: OptimState,
    opt_d: OptimState,
    schedule: CyclicLr,
    step: u64,
}

const STEP_KEY: &str = "train.step";

impl Trainer {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let generator = init_generator(&config.model);
        let critic = init_critic(&config.model);
        Ok(Self {
            opt_g: OptimState::new(&generator, AdamConfig::default()),
            opt_d: OptimState::new(&critic, AdamConfig::default()),
            perceptual: init_perceptual(&config.model),
            schedule: CyclicLr::new(config.lr.base, config.lr.max, config.lr.cycle)?,
            config: config.clone(),
            generator,
            critic,
            step: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> Model {
        let mut params = self.generator.clone();
        params.extend_from(&self.critic);
        Model {
            config: self.config.model.clone(),
            params,
        }
    }

    pub fn stage(&self) -> Stage {
        if self.step < self.config.switch_step() {
            Stage::Reconstruction
        } else {
            Stage::Full
        }
    }

    /// One optimization step on a batch drawn from `(seed, step)`.
    pub fn step(&mut self, data: &TrainingSet) -> Result<LossRecord> {
        if data.is_empty() {
            return Err(param("empty training split"));
        }
        let bs = self.config.batch_size;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.step);
        let indices: Vec<usize> = (0..bs).map(|_| rng.random_range(0..data.len())).collect();
        let eps: Vec<f64> = (0..bs).map(|_| rng.random()).collect();
        let batch = data.batch(&indices)?;
        let lr = self.schedule.lr(self.step);
        let stage = self.stage();
        let w = self.config.loss;
        let blocks = self.config.model.res_blocks;

        let mut g = Graph::<f64>::new();
        let gp = self.generator.bind(&mut g, true);
        let [lr_v, up, hr, rh, rd] = [
            &batch.lr,
            &batch.lr_up,
            &batch.hr,
            &batch.ref_hr,
            &batch.ref_degraded,
        ]
        .map(|t| g.constant(t.clone()));
        let fwd = ttsr_forward(&mut g, &gp, lr_v, up, rh, rd, blocks)?;
        let rec = loss_rec(&mut g, fwd.sr, hr)?;

        let mut parts = LossParts {
            rec: g.value(rec).item(),
            ..Default::default()
        };
        let total = match stage {
            Stage::Reconstruction => loss_total_var(&mut g, rec, None, None, &w, stage)?,
            Stage::Full => {
                let fake = g.value(fwd.sr).clone();
                self.critic_update(&batch.hr, &fake, &eps, lr)?;
                let cb = self.critic.bind(&mut g, false);
                let pb = self.perceptual.bind(&mut g, false);
                let t: Vec<Var> = fwd.tex.t.iter().map(|&t| g.detach(t)).collect();
                let per = loss_per(&mut g, &gp, &pb, fwd.sr, hr, &t)?;
                let adv = loss_adv_generator(&mut g, |g, x| critic_forward(g, &cb, x), fwd.sr)?;
                parts.per = g.value(per).item();
                parts.adv = g.value(adv).item();
                loss_total_var(&mut g, rec, Some(per), Some(adv), &w, stage)?
            }
        };
        let record = LossRecord {
            step: self.step,
            lr,
            rec: parts.rec,
            per: parts.per,
            adv: parts.adv,
            total: g.value(total).item(),
        };
        if ![record.rec, record.per, record.adv, record.total]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::Diverged {
                step: self.step,
                detail: format!("{record:?}"),
            });
        }
        let grads = gp.gradients(&mut g, total)?;
        adam_step(&mut self.generator, &grads, &mut self.opt_g, lr)?;
        self.step += 1;
        Ok(record)
    }

    fn critic_update(
        &mut self,
        real: &Tensor<f64>,
        fake: &Tensor<f64>,
        eps: &[f64],
        lr: f64,
    ) -> Result<()> {
        let xhat = interpolate(real, fake, eps)?;
        let mut g = Graph::<f64>::new();
        let cb = self.critic.bind(&mut g, true);
        let [r, f, x] = [real, fake, &xhat].map(|t| g.constant(t.clone()));
        let loss = loss_adv_critic(
            &mut g,
            |g, x| critic_forward(g, &cb, x),
            f,
            r,
            x,
            self.config.loss.gp,
        )?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Diverged {
                step: self.step,
                detail: format!("critic loss {value}"),
            });
        }
        let grads = cb.gradients(&mut g, loss)?;
        adam_step(&mut self.critic, &grads, &mut self.opt_d, lr)?;
        Ok(())
    }

    /// Mean reconstruction loss of the current model over `data`.
    pub fn validation_rec(&self, data: &TrainingSet) -> Result<f64> {
        validation_rec(&self.model(), data)
    }

    /// Parameters, optimizer moments and the step counter.
    pub fn checkpoint(&self) -> WeightsFile {
        let mut p = ParamSet::new();
        for set in [&self.generator, &self.critic, &self.perceptual] {
            p.extend_from(set);
        }
        for (tag, st) in [("g", &self.opt_g), ("d", &self.opt_d)] {
            for (name, t) in st.first.iter() {
                p.insert(format!("adam.{tag}.m.{name}"), t.clone());
            }
            for (name, t) in st.second.iter() {
                p.insert(format!("adam.{tag}.v.{name}"), t.clone());
            }
            p.insert(format!("adam.{tag}.step"), Tensor::scalar(st.step as f64));
        }
        p.insert(STEP_KEY, Tensor::scalar(self.step as f64));
        WeightsFile::from_params(&p, DType::F64)
    }

    /// Restores a [`Trainer::checkpoint`] written under the same config.
    pub fn resume(config: &TrainConfig, ckpt: &WeightsFile) -> Result<Self> {
        let mut t = Self::new(config)?;
        let stored = ckpt.to_params();
        let take = |name: &str, like: &Tensor<f64>| -> Result<Tensor<f64>> {
            match stored.get(name) {
                Some(v) if v.shape() == like.shape() => Ok(v.clone()),
                _ => Err(Error::Config(format!(
                    "checkpoint lacks a matching `{name}`"
                ))),
            }
        };
        for set in [&mut t.generator, &mut t.critic, &mut t.perceptual] {
            let names: Vec<String> = set.names().map(str::to_string).collect();
            for n in names {
                let v = take(&n, set.get(&n).expect("listed"))?;
                set.insert(n, v);
            }
        }
        for (tag, st) in [("g", &mut t.opt_g), ("d", &mut t.opt_d)] {
            let names: Vec<String> = st.first.names().map(str::to_string).collect();
            for n in names {
                let m = take(
                    &format!("adam.{tag}.m.{n}"),
                    st.first.get(&n).expect("listed"),
                )?;
                let v = take(
                    &format!("adam.{tag}.v.{n}"),
                    st.second.get(&n).expect("listed"),
                )?;
                st.first.insert(n.clone(), m);
                st.second.insert(n, v);
            }
            st.step = take(&format!("adam.{tag}.step"), &Tensor::scalar(0.0))?.item() as u64;
        }
        t.step = take(STEP_KEY, &Tensor::scalar(0.0))?.item() as u64;
        Ok(t)
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.checkpoint().to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(config: &TrainConfig, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::resume(config, &WeightsFile::from_bytes(&bytes)?)
    }

    /// Trains until the configured step count, recording validation loss at
    /// the start, at the stage switch and at the end. Checkpoints go to
    /// `checkpoint_dir` when `checkpoint_every` is positive.
    pub fn run(
        &mut self,
        train: &TrainingSet,
        val: &TrainingSet,
        checkpoint_dir: Option<&Path>,
        mut on_step: impl FnMut(&LossRecord),
    ) -> Result<TrainOutcome> {
        let switch = self.config.switch_step();
        let mut curve = Vec::new();
        let mut validation = Vec::new();
        let validate = |t: &Self, validation: &mut Vec<ValidationPoint>| -> Result<()> {
            if !val.is_empty() {
                validation.push(ValidationPoint {
                    step: t.step,
                    rec: t.validation_rec(val)?,
                });
            }
            Ok(())
        };
        if self.step == 0 {
            validate(self, &mut validation)?;
        }
        while self.step < self.config.steps {
            if self.step == switch && switch > 0 {
                validate(self, &mut validation)?;
            }
            let r = self.step(train)?;
            on_step(&r);
            curve.push(r);
            let every = self.config.checkpoint_every;
            if let (Some(dir), true) = (checkpoint_dir, every > 0 && self.step % every.max(1) == 0)
            {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                self.save_checkpoint(dir.join(format!("ckpt-{:06}.semsr", self.step)))?;
            }
        }
        validate(self, &mut validation)?;
        Ok(TrainOutcome {
            model: self.model(),
            curve,
            validation,
        })
    }
}

/// Mean L1 between model output and HR over every sample, in `f64`.
pub fn validation_rec(model: &Model, data: &TrainingSet) -> Result<f64> {
    use rayon::prelude::*;
    if data.is_empty() {
        return Err(param("empty validation split"));
    }
    let per: Vec<f64> = data
        .samples
        .par_iter()
        .map(|s| {
            let sr = model.super_resolve::<f64>(&s.lr, &data.references[s.reference])?;
            let sum: f64 = sr
                .data()
                .iter()
                .zip(s.hr.data())
                .map(|(a, b)| (a - b).abs())
                .sum();
            Ok(sum / sr.numel() as f64)
        })
        .collect::<Result<_>>()?;
    Ok(semsr_tensorad::kernels::pairwise_sum(&per) / per.len() as f64)
}

pub const CURVE_HEADER: [&str; 6] = ["step", "lr", "L_rec", "L_per", "L_adv", "L_total"];

/// Writes the loss curve as CSV with a header row.
pub fn write_curve<W: Write>(w: W, curve: &[LossRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in curve {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| Error::io("<loss curve>", e))?;
    Ok(())
}

pub fn read_curve<R: std::io::Read>(r: R) -> Result<Vec<LossRecord>> {
    let mut rd = csv::Reader::from_reader(r);
    Ok(rd.deserialize().collect::<std::result::Result<_, _>>()?)
}
