//! Post-LayerNorm transformer encoder in the RoBERTa / XLM-R layout.
//!
//! Parameter names follow the Hugging Face checkpoint naming so pretrained
//! weights load without a mapping table. Sequences are processed one at a
//! time, so no padding or attention mask is needed.

use ndarray::{s, Array1, Array2, ArrayView1, Axis, Ix2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    apply_mask, dropout_mask, gelu, gelu_grad, softmax_rows, LayerNorm, LayerNormTrace, Linear,
    Param, ParamMut, ParamRef,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub intermediate_size: usize,
    /// Size of the position table, including the padding offset.
    pub max_positions: usize,
    pub type_vocab_size: usize,
    pub layer_norm_eps: f64,
    pub hidden_dropout: f64,
    pub attention_dropout: f64,
    pub pad_token_id: u32,
    pub init_std: f64,
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.hidden_size == 0 || self.num_heads == 0 || self.hidden_size % self.num_heads != 0 {
            return fail(format!(
                "hidden_size {} must be a positive multiple of num_heads {}",
                self.hidden_size, self.num_heads
            ));
        }
        if self.vocab_size == 0 || self.intermediate_size == 0 || self.type_vocab_size == 0 {
            return fail("vocab, intermediate and type vocab sizes must be positive".into());
        }
        if self.max_positions <= self.pad_token_id as usize + 1 {
            return fail("position table too small for the padding offset".into());
        }
        for (name, p) in [("hidden", self.hidden_dropout), ("attention", self.attention_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return fail(format!("{name} dropout {p} must lie in [0, 1)"));
            }
        }
        Ok(())
    }

    /// Longest token sequence the position table can address.
    pub fn max_sequence(&self) -> usize {
        self.max_positions - self.pad_token_id as usize - 1
    }
}

#[derive(Debug, Clone)]
struct Layer {
    query: Linear,
    key: Linear,
    value: Linear,
    attn_out: Linear,
    attn_norm: LayerNorm,
    intermediate: Linear,
    output: Linear,
    out_norm: LayerNorm,
}

impl Layer {
    fn new<R: Rng + ?Sized>(c: &TransformerConfig, rng: &mut R) -> Self {
        let d = c.hidden_size;
        Self {
            query: Linear::new(d, d, c.init_std, rng),
            key: Linear::new(d, d, c.init_std, rng),
            value: Linear::new(d, d, c.init_std, rng),
            attn_out: Linear::new(d, d, c.init_std, rng),
            attn_norm: LayerNorm::new(d, c.layer_norm_eps),
            intermediate: Linear::new(d, c.intermediate_size, c.init_std, rng),
            output: Linear::new(c.intermediate_size, d, c.init_std, rng),
            out_norm: LayerNorm::new(d, c.layer_norm_eps),
        }
    }

    fn params(&self, p: &str) -> Vec<ParamRef<'_>> {
        let mut v = self.query.params(&format!("{p}.attention.self.query"));
        v.extend(self.key.params(&format!("{p}.attention.self.key")));
        v.extend(self.value.params(&format!("{p}.attention.self.value")));
        v.extend(self.attn_out.params(&format!("{p}.attention.output.dense")));
        v.extend(self.attn_norm.params(&format!("{p}.attention.output.LayerNorm")));
        v.extend(self.intermediate.params(&format!("{p}.intermediate.dense")));
        v.extend(self.output.params(&format!("{p}.output.dense")));
        v.extend(self.out_norm.params(&format!("{p}.output.LayerNorm")));
        v
    }

    fn params_mut(&mut self, p: &str) -> Vec<ParamMut<'_>> {
        let mut v = self.query.params_mut(&format!("{p}.attention.self.query"));
        v.extend(self.key.params_mut(&format!("{p}.attention.self.key")));
        v.extend(self.value.params_mut(&format!("{p}.attention.self.value")));
        v.extend(self.attn_out.params_mut(&format!("{p}.attention.output.dense")));
        v.extend(self.attn_norm.params_mut(&format!("{p}.attention.output.LayerNorm")));
        v.extend(self.intermediate.params_mut(&format!("{p}.intermediate.dense")));
        v.extend(self.output.params_mut(&format!("{p}.output.dense")));
        v.extend(self.out_norm.params_mut(&format!("{p}.output.LayerNorm")));
        v
    }
}

struct LayerTrace {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    prob_masks: Vec<Option<Array2<f64>>>,
    context: Array2<f64>,
    attn_mask: Option<Array2<f64>>,
    attn_norm: LayerNormTrace,
    mid: Array2<f64>,
    pre_act: Array2<f64>,
    act: Array2<f64>,
    out_mask: Option<Array2<f64>>,
    out_norm: LayerNormTrace,
}

/// Activations kept from a forward pass for the backward pass.
pub struct EncoderTrace {
    ids: Vec<u32>,
    positions: Vec<usize>,
    emb_norm: LayerNormTrace,
    emb_mask: Option<Array2<f64>>,
    layers: Vec<LayerTrace>,
}

#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    config: TransformerConfig,
    word: Param<Ix2>,
    position: Param<Ix2>,
    token_type: Param<Ix2>,
    emb_norm: LayerNorm,
    layers: Vec<Layer>,
}

impl TransformerEncoder {
    pub fn new<R: Rng + ?Sized>(config: TransformerConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let d = c.hidden_size;
        let word = Param::normal((c.vocab_size, d), c.init_std, true, rng);
        let position = Param::normal((c.max_positions, d), c.init_std, true, rng);
        let token_type = Param::normal((c.type_vocab_size, d), c.init_std, true, rng);
        let layers = (0..c.num_layers).map(|_| Layer::new(c, rng)).collect();
        Ok(Self {
            emb_norm: LayerNorm::new(d, c.layer_norm_eps),
            word,
            position,
            token_type,
            layers,
            config,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn params(&self) -> Vec<ParamRef<'_>> {
        let mut v = vec![
            self.word.named("embeddings.word_embeddings.weight"),
            self.position.named("embeddings.position_embeddings.weight"),
            self.token_type.named("embeddings.token_type_embeddings.weight"),
        ];
        v.extend(self.emb_norm.params("embeddings.LayerNorm"));
        for (i, layer) in self.layers.iter().enumerate() {
            v.extend(layer.params(&format!("encoder.layer.{i}")));
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut v = vec![
            self.word.view("embeddings.word_embeddings.weight"),
            self.position.view("embeddings.position_embeddings.weight"),
            self.token_type.view("embeddings.token_type_embeddings.weight"),
        ];
        v.extend(self.emb_norm.params_mut("embeddings.LayerNorm"));
        for (i, layer) in self.layers.iter_mut().enumerate() {
            v.extend(layer.params_mut(&format!("encoder.layer.{i}")));
        }
        v
    }

    /// Runs the encoder and returns the final hidden state of the first
    /// token. Dropout is active only when `rng` is given.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        ids: &[u32],
        mut rng: Option<&mut R>,
    ) -> Result<(Array1<f64>, EncoderTrace)> {
        let c = &self.config;
        if ids.is_empty() {
            return Err(Error::Model("empty token sequence".into()));
        }
        if ids.len() > c.max_sequence() {
            return Err(Error::Model(format!(
                "sequence of {} tokens exceeds the position table ({})",
                ids.len(),
                c.max_sequence()
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= c.vocab_size) {
            return Err(Error::Model(format!("token id {bad} outside vocab of {}", c.vocab_size)));
        }
        let len = ids.len();
        let d = c.hidden_size;
        let positions: Vec<usize> = (0..len).map(|i| c.pad_token_id as usize + 1 + i).collect();
        let mut x0 = Array2::zeros((len, d));
        for (t, (&id, &pos)) in ids.iter().zip(&positions).enumerate() {
            let mut row = x0.row_mut(t);
            row += &self.word.value.row(id as usize);
            row += &self.position.value.row(pos);
            row += &self.token_type.value.row(0);
        }
        let (e, emb_norm) = self.emb_norm.forward(x0.view());
        let emb_mask = dropout_mask(e.raw_dim(), c.hidden_dropout, rng.as_deref_mut());
        let mut x = apply_mask(e, emb_mask.as_ref());

        let heads = c.num_heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut traces = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let q = layer.query.forward(x.view());
            let k = layer.key.forward(x.view());
            let v = layer.value.forward(x.view());
            let mut context = Array2::zeros((len, d));
            let mut probs = Vec::with_capacity(heads);
            let mut prob_masks = Vec::with_capacity(heads);
            for h in 0..heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
                let p = softmax_rows(scores);
                let mask = dropout_mask(p.raw_dim(), c.attention_dropout, rng.as_deref_mut());
                let p_used = apply_mask(p.clone(), mask.as_ref());
                context.slice_mut(cols).assign(&p_used.dot(&v.slice(cols)));
                probs.push(p);
                prob_masks.push(mask);
            }
            let a = layer.attn_out.forward(context.view());
            let attn_mask = dropout_mask(a.raw_dim(), c.hidden_dropout, rng.as_deref_mut());
            let a = apply_mask(a, attn_mask.as_ref());
            let (mid, attn_norm) = layer.attn_norm.forward((&x + &a).view());
            let pre_act = layer.intermediate.forward(mid.view());
            let act = pre_act.mapv(gelu);
            let o = layer.output.forward(act.view());
            let out_mask = dropout_mask(o.raw_dim(), c.hidden_dropout, rng.as_deref_mut());
            let o = apply_mask(o, out_mask.as_ref());
            let (y, out_norm) = layer.out_norm.forward((&mid + &o).view());
            traces.push(LayerTrace {
                input: x,
                q,
                k,
                v,
                probs,
                prob_masks,
                context,
                attn_mask,
                attn_norm,
                mid,
                pre_act,
                act,
                out_mask,
                out_norm,
            });
            x = y;
        }
        let first = x.row(0).to_owned();
        Ok((
            first,
            EncoderTrace {
                ids: ids.to_vec(),
                positions,
                emb_norm,
                emb_mask,
                layers: traces,
            },
        ))
    }

    /// Back-propagates a gradient on the first-token output, accumulating
    /// into every parameter's `grad`.
    pub fn backward(&mut self, trace: &EncoderTrace, grad_first: ArrayView1<f64>) {
        let len = trace.ids.len();
        let d = self.config.hidden_size;
        let heads = self.config.num_heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let mut dx = Array2::zeros((len, d));
        dx.row_mut(0).assign(&grad_first);
        for (layer, t) in self.layers.iter_mut().zip(&trace.layers).rev() {
            // out_norm(mid + dropout(output(gelu(intermediate(mid)))))
            let dz2 = layer.out_norm.backward(&t.out_norm, dx.view());
            let d_o = apply_mask(dz2.clone(), t.out_mask.as_ref());
            let d_act = layer.output.backward(t.act.view(), d_o.view());
            let d_pre = d_act * &t.pre_act.mapv(gelu_grad);
            let mut d_mid = dz2 + &layer.intermediate.backward(t.mid.view(), d_pre.view());

            // attn_norm(input + dropout(attn_out(context)))
            let dz1 = layer.attn_norm.backward(&t.attn_norm, d_mid.view());
            d_mid = dz1;
            let d_a = apply_mask(d_mid.clone(), t.attn_mask.as_ref());
            let d_context = layer.attn_out.backward(t.context.view(), d_a.view());

            let mut dq = Array2::zeros((len, d));
            let mut dk = Array2::zeros((len, d));
            let mut dv = Array2::zeros((len, d));
            for h in 0..heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let p = &t.probs[h];
                let p_used = apply_mask(p.clone(), t.prob_masks[h].as_ref());
                let dc = d_context.slice(cols);
                dv.slice_mut(cols).assign(&p_used.t().dot(&dc));
                let dp_used = dc.dot(&t.v.slice(cols).t());
                let dp = apply_mask(dp_used, t.prob_masks[h].as_ref());
                let row_dot = (&dp * p).sum_axis(Axis(1));
                let ds = (dp - &row_dot.insert_axis(Axis(1))) * p * scale;
                dq.slice_mut(cols).assign(&ds.dot(&t.k.slice(cols)));
                dk.slice_mut(cols).assign(&ds.t().dot(&t.q.slice(cols)));
            }
            let mut d_input = d_mid;
            d_input += &layer.query.backward(t.input.view(), dq.view());
            d_input += &layer.key.backward(t.input.view(), dk.view());
            d_input += &layer.value.backward(t.input.view(), dv.view());
            dx = d_input;
        }
        let de = apply_mask(dx, trace.emb_mask.as_ref());
        let dx0 = self.emb_norm.backward(&trace.emb_norm, de.view());
        for (t, (&id, &pos)) in trace.ids.iter().zip(&trace.positions).enumerate() {
            let row = dx0.row(t);
            let mut w = self.word.grad.row_mut(id as usize);
            w += &row;
            let mut p = self.position.grad.row_mut(pos);
            p += &row;
        }
        let mut tt = self.token_type.grad.row_mut(0);
        tt += &dx0.sum_axis(Axis(0));
    }

    /// Overwrites parameters by name from `lookup`, checking shapes.
    /// Returns the names that were not found.
    pub fn load_params<F>(&mut self, mut lookup: F) -> Result<Vec<String>>
    where
        F: FnMut(&str) -> Result<Option<(Vec<usize>, Vec<f64>)>>,
    {
        let mut missing = Vec::new();
        for p in self.params_mut() {
            match lookup(&p.name)? {
                Some((shape, data)) => {
                    if shape != p.shape {
                        return Err(Error::Model(format!(
                            "{}: expected shape {:?}, found {:?}",
                            p.name, p.shape, shape
                        )));
                    }
                    p.value.copy_from_slice(&data);
                }
                None => missing.push(p.name.clone()),
            }
        }
        Ok(missing)
    }
}
