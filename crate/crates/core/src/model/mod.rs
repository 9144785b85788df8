//! Encoder plus two independent bounded regression heads.

pub mod checkpoint;
pub mod encoder;
pub mod head;
pub mod tokenizer;
pub mod transformer;

use ndarray::{Array1, Ix1};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::data::AspectInstance;
use crate::error::{Error, Result};
use crate::nn::{apply_mask, dropout_mask, ParamMut, ParamRef};
use crate::va::VaPair;

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint};
pub use encoder::{build_input, Encoder, EncoderAdapter, EncoderConfig, PretrainedConfig, StandInConfig};
pub use head::{scale_to_va, scale_to_va_grad, RegressionHead};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Dropout on the first-token vector before both heads.
    pub input_dropout: f64,
    /// Dropout between the two layers of each head.
    pub head_dropout: f64,
    pub head_internal_dropout: bool,
    pub head_init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dropout: 0.1,
            head_dropout: 0.1,
            head_internal_dropout: true,
            head_init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("input_dropout", self.input_dropout), ("head_dropout", self.head_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} {p} must lie in [0, 1)")));
            }
        }
        if !(self.head_init_std.is_finite() && self.head_init_std > 0.0) {
            return Err(Error::Config("head_init_std must be positive".into()));
        }
        Ok(())
    }

    fn effective_head_dropout(&self) -> f64 {
        if self.head_internal_dropout {
            self.head_dropout
        } else {
            0.0
        }
    }
}

pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

/// Parameter values captured by [`DimAsrModel::snapshot`].
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot(Vec<Vec<f64>>);

struct TrainTrace<T> {
    encoder: T,
    mask: Option<Array1<f64>>,
    v: head::HeadTrace,
    a: head::HeadTrace,
}

#[derive(Debug, Clone)]
pub struct DimAsrModel<E: Encoder = EncoderAdapter> {
    encoder: E,
    config: ModelConfig,
    head_v: RegressionHead,
    head_a: RegressionHead,
    seed: u64,
}

impl<E: Encoder> DimAsrModel<E> {
    pub fn new<R: Rng + ?Sized>(encoder: E, config: ModelConfig, seed: u64, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = encoder.hidden_dim();
        let p = config.effective_head_dropout();
        let head_v = RegressionHead::new(d, p, config.head_init_std, rng)?;
        let head_a = RegressionHead::new(d, p, config.head_init_std, rng)?;
        Ok(Self::from_parts(encoder, config, head_v, head_a, seed))
    }

    pub(crate) fn from_parts(
        encoder: E,
        config: ModelConfig,
        head_v: RegressionHead,
        head_a: RegressionHead,
        seed: u64,
    ) -> Self {
        Self {
            encoder,
            config,
            head_v,
            head_a,
            seed,
        }
    }

    pub fn encoder(&self) -> &E {
        &self.encoder
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn hidden_dim(&self) -> usize {
        self.encoder.hidden_dim()
    }

    pub fn head_v(&self) -> &RegressionHead {
        &self.head_v
    }

    pub fn head_a(&self) -> &RegressionHead {
        &self.head_a
    }

    pub fn head_v_mut(&mut self) -> &mut RegressionHead {
        &mut self.head_v
    }

    pub fn head_a_mut(&mut self) -> &mut RegressionHead {
        &mut self.head_a
    }

    /// Zeroes both output layers so every prediction is exactly (5, 5).
    pub fn zero_heads(&mut self) {
        self.head_v.zero_output();
        self.head_a.zero_output();
    }

    fn tokens(&self, inst: &AspectInstance) -> Result<Vec<u32>> {
        build_input(&inst.text, &inst.aspect, &self.encoder).map_err(|e| context(inst, e))
    }

    fn predict_one(&self, inst: &AspectInstance) -> Result<VaPair> {
        let ids = self.tokens(inst)?;
        let h = self.encoder.encode(&ids).map_err(|e| context(inst, e))?;
        to_pair(inst, self.head_v.raw(h.view()), self.head_a.raw(h.view()))
    }

    /// One prediction per instance, in input order. Eval mode is
    /// deterministic and spreads large batches over threads.
    pub fn forward(&self, batch: &[AspectInstance], mode: Mode<'_>) -> Result<Vec<VaPair>> {
        match mode {
            Mode::Eval => self.predict(batch),
            Mode::Train(rng) => batch
                .iter()
                .map(|inst| {
                    let t = self.train_forward(inst, rng)?;
                    to_pair(inst, t.v.raw(), t.a.raw())
                })
                .collect(),
        }
    }

    pub fn predict(&self, batch: &[AspectInstance]) -> Result<Vec<VaPair>> {
        let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
        if workers < 2 || batch.len() < 2 * workers {
            return batch.iter().map(|inst| self.predict_one(inst)).collect();
        }
        let chunk = batch.len().div_ceil(workers);
        std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .chunks(chunk)
                .map(|part| scope.spawn(move || part.iter().map(|i| self.predict_one(i)).collect::<Result<Vec<_>>>()))
                .collect();
            let mut out = Vec::with_capacity(batch.len());
            for h in handles {
                out.extend(h.join().expect("prediction worker panicked")?);
            }
            Ok(out)
        })
    }

    fn train_forward(&self, inst: &AspectInstance, rng: &mut dyn RngCore) -> Result<TrainTrace<E::Trace>> {
        let ids = self.tokens(inst)?;
        let (h, trace) = self.encoder.encode_train(&ids, rng).map_err(|e| context(inst, e))?;
        let mask = dropout_mask(Ix1(h.len()), self.config.input_dropout, Some(&mut *rng));
        let h = apply_mask(h, mask.as_ref());
        let tv = self.head_v.forward(h.view(), Some(&mut *rng));
        let ta = self.head_a.forward(h.view(), Some(&mut *rng));
        Ok(TrainTrace {
            encoder: trace,
            mask,
            v: tv,
            a: ta,
        })
    }

    /// Training-mode forward and backward over `batch`, accumulating the
    /// gradient of the summed per-dimension MSE into every parameter. Returns
    /// the predictions paired with their gold labels.
    pub fn accumulate_gradients(
        &mut self,
        batch: &[&AspectInstance],
        rng: &mut dyn RngCore,
    ) -> Result<Vec<(VaPair, VaPair)>> {
        if batch.is_empty() {
            return Err(Error::Training("empty batch".into()));
        }
        let scale = 2.0 / batch.len() as f64;
        let mut out = Vec::with_capacity(batch.len());
        for inst in batch {
            let gold = inst.require_gold()?;
            let TrainTrace {
                encoder: enc_trace,
                mask,
                v: tv,
                a: ta,
            } = self.train_forward(inst, rng)?;
            let pred = to_pair(inst, tv.raw(), ta.raw())?;
            let dv = scale * (scale_to_va(tv.raw()) - gold.valence()) * scale_to_va_grad(tv.raw());
            let da = scale * (scale_to_va(ta.raw()) - gold.arousal()) * scale_to_va_grad(ta.raw());
            let gh = self.head_v.backward(&tv, dv) + self.head_a.backward(&ta, da);
            let gh = apply_mask(gh, mask.as_ref());
            self.encoder.backward(&enc_trace, gh.view());
            out.push((pred, gold));
        }
        Ok(out)
    }

    pub fn params(&self) -> Vec<ParamRef<'_>> {
        let mut v = self.encoder.params();
        v.extend(self.head_v.params("head_v"));
        v.extend(self.head_a.params("head_a"));
        v
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut v = self.encoder.params_mut();
        v.extend(self.head_v.params_mut("head_v"));
        v.extend(self.head_a.params_mut("head_a"));
        v
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot(self.params().iter().map(|p| p.value.to_vec()).collect())
    }

    pub fn restore(&mut self, snapshot: &Snapshot) {
        for (p, saved) in self.params_mut().into_iter().zip(&snapshot.0) {
            p.value.copy_from_slice(saved);
        }
    }
}

impl DimAsrModel<EncoderAdapter> {
    /// Builds encoder and heads from config, drawing initial weights from
    /// the `init` stream of `seed`.
    pub fn from_config(encoder: &EncoderConfig, max_len: usize, config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = crate::seed::stream_rng(seed, crate::seed::INIT);
        let encoder = EncoderAdapter::from_config(encoder, max_len, &mut rng)?;
        Self::new(encoder, config, seed, &mut rng)
    }
}

fn context(inst: &AspectInstance, e: Error) -> Error {
    match e {
        Error::Model(m) => Error::Model(format!("instance {}: {m}", inst.key())),
        Error::Data(m) => Error::Data(format!("instance {}: {m}", inst.key())),
        other => other,
    }
}

fn to_pair(inst: &AspectInstance, raw_v: f64, raw_a: f64) -> Result<VaPair> {
    if !(raw_v.is_finite() && raw_a.is_finite()) {
        return Err(Error::Model(format!(
            "instance {}: non-finite head output ({raw_v}, {raw_a})",
            inst.key()
        )));
    }
    VaPair::new(scale_to_va(raw_v), scale_to_va(raw_a))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn instance(id: &str, idx: usize, text: &str, aspect: &str, gold: Option<(f64, f64)>) -> AspectInstance {
        AspectInstance {
            sentence_id: id.into(),
            aspect_index: idx,
            text: text.into(),
            aspect: aspect.into(),
            gold: gold.map(|(v, a)| VaPair::new(v, a).unwrap()),
        }
    }

    pub(crate) fn tiny_model(seed: u64) -> DimAsrModel {
        let enc = EncoderConfig::StandIn(StandInConfig {
            hidden_dim: 8,
            num_heads: 2,
            intermediate_size: 16,
            vocab_size: 300,
            ..Default::default()
        });
        DimAsrModel::from_config(&enc, 32, ModelConfig::default(), seed).unwrap()
    }

    fn batch() -> Vec<AspectInstance> {
        vec![
            instance("s1", 0, "the food was absolutely amazing!", "food", Some((8.5, 8.25))),
            instance("s1", 1, "the food was absolutely amazing!", "service", Some((5.0, 5.0))),
            instance("s2", 0, "battery died in an hour", "battery", Some((2.0, 7.0))),
        ]
    }

    #[test]
    fn eval_forward_is_deterministic_and_aligned() {
        let model = tiny_model(1);
        let b = batch();
        let p1 = model.forward(&b, Mode::Eval).unwrap();
        let p2 = model.forward(&b, Mode::Eval).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(p1.len(), 3);
        let big: Vec<_> = b.iter().cycle().take(64).cloned().collect();
        let pb = model.predict(&big).unwrap();
        assert_eq!(pb[63], p1[0]);
    }

    #[test]
    fn zero_heads_predict_midpoint() {
        let mut model = tiny_model(2);
        model.zero_heads();
        for p in model.forward(&batch(), Mode::Eval).unwrap() {
            assert_eq!((p.valence(), p.arousal()), (5.0, 5.0));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for p in model.forward(&batch(), Mode::Train(&mut rng)).unwrap() {
            assert_eq!((p.valence(), p.arousal()), (5.0, 5.0));
        }
    }

    #[test]
    fn heads_are_independent() {
        let mut model = tiny_model(3);
        let b = batch();
        let before = model.predict(&b).unwrap();
        for p in model.head_a_mut().params_mut("a") {
            p.value.iter_mut().for_each(|x| *x += 0.5);
        }
        let after = model.predict(&b).unwrap();
        for (x, y) in before.iter().zip(&after) {
            assert_eq!(x.valence().to_bits(), y.valence().to_bits());
            assert_ne!(x.arousal(), y.arousal());
        }
    }

    #[test]
    fn encoder_errors_carry_instance_key() {
        let model = tiny_model(4);
        let bad = instance("s9", 2, "text", "", None);
        let err = model.forward(&[bad], Mode::Eval).unwrap_err().to_string();
        assert!(err.contains("s9#2"), "{err}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut config = ModelConfig::default();
        config.head_init_std = 0.5;
        let enc = EncoderConfig::StandIn(StandInConfig {
            hidden_dim: 8,
            num_heads: 2,
            intermediate_size: 16,
            vocab_size: 300,
            init_std: 0.3,
            dropout: 0.1,
            ..Default::default()
        });
        let mut model = DimAsrModel::from_config(&enc, 32, config, 5).unwrap();
        let b = batch();
        let refs: Vec<&AspectInstance> = b.iter().collect();
        let loss = |m: &mut DimAsrModel| {
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            let pairs = m.accumulate_gradients(&refs, &mut rng).unwrap();
            let (p, g): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            crate::trainer::compute_loss(&p, &g).unwrap()
        };
        loss(&mut model);
        let grads: Vec<Vec<f64>> = model.params_mut().iter().map(|p| p.grad.to_vec()).collect();
        let step = 1e-6;
        let mut checked = 0;
        for (pi, g) in grads.iter().enumerate() {
            for j in (0..g.len()).step_by(7) {
                let mut plus = DimAsrModel::from_parts(
                    model.encoder.clone(),
                    model.config.clone(),
                    model.head_v.clone(),
                    model.head_a.clone(),
                    0,
                );
                plus.params_mut()[pi].value[j] += step;
                let mut minus = DimAsrModel::from_parts(
                    model.encoder.clone(),
                    model.config.clone(),
                    model.head_v.clone(),
                    model.head_a.clone(),
                    0,
                );
                minus.params_mut()[pi].value[j] -= step;
                let num = (loss(&mut plus) - loss(&mut minus)) / (2.0 * step);
                let err = (num - g[j]).abs() / (1e-6 + num.abs().max(g[j].abs()));
                assert!(err < 1e-4 || (num - g[j]).abs() < 1e-8, "param {pi}[{j}]: {} vs {num}", g[j]);
                checked += 1;
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn snapshot_restore_round_trip() {
        let mut model = tiny_model(6);
        let snap = model.snapshot();
        let before = model.predict(&batch()).unwrap();
        for p in model.params_mut() {
            p.value.iter_mut().for_each(|x| *x *= 1.1);
        }
        assert_ne!(model.predict(&batch()).unwrap(), before);
        model.restore(&snap);
        assert_eq!(model.predict(&batch()).unwrap(), before);
    }
}
