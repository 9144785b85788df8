use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{Array1, ArrayView1};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::tokenizer::{HashedTokenizer, SpecialTokens, Tokenizer, UnigramTokenizer};
use super::transformer::{EncoderTrace, TransformerConfig, TransformerEncoder};
use crate::error::{Error, Result};
use crate::nn::{ParamMut, ParamRef};
use crate::tensor_io::TensorFile;

/// A text encoder that turns a token sequence into one vector of length
/// `hidden_dim`, with a backward pass for fine-tuning.
pub trait Encoder: Send + Sync {
    type Trace;

    fn name(&self) -> &str;
    fn hidden_dim(&self) -> usize;
    fn max_len(&self) -> usize;
    fn special_tokens(&self) -> SpecialTokens;
    fn tokenize(&self, text: &str) -> Vec<u32>;

    /// Deterministic encoding with dropout off.
    fn encode(&self, ids: &[u32]) -> Result<Array1<f64>>;

    /// Encoding with dropout on, keeping what `backward` needs.
    fn encode_train(&self, ids: &[u32], rng: &mut dyn RngCore) -> Result<(Array1<f64>, Self::Trace)>;

    fn backward(&mut self, trace: &Self::Trace, grad: ArrayView1<f64>);
    fn params(&self) -> Vec<ParamRef<'_>>;
    fn params_mut(&mut self) -> Vec<ParamMut<'_>>;
}

/// `<s> text </s> aspect </s>`, truncating only the text when over `max_len`.
pub fn build_input<E: Encoder + ?Sized>(text: &str, aspect: &str, encoder: &E) -> Result<Vec<u32>> {
    if aspect.is_empty() {
        return Err(Error::Data("aspect must be non-empty".into()));
    }
    let sp = encoder.special_tokens();
    let aspect_ids = encoder.tokenize(aspect);
    let max_len = encoder.max_len();
    let budget = max_len
        .checked_sub(aspect_ids.len() + 3)
        .ok_or_else(|| {
            Error::Data(format!(
                "aspect of {} tokens does not fit max_len {max_len}",
                aspect_ids.len()
            ))
        })?;
    let mut text_ids = encoder.tokenize(text);
    text_ids.truncate(budget);
    let mut ids = Vec::with_capacity(text_ids.len() + aspect_ids.len() + 3);
    ids.push(sp.cls);
    ids.extend(text_ids);
    ids.push(sp.sep);
    ids.extend(aspect_ids);
    ids.push(sp.sep);
    Ok(ids)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StandInConfig {
    pub name: String,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub intermediate_size: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    pub init_std: f64,
}

impl Default for StandInConfig {
    fn default() -> Self {
        Self {
            name: "stand-in".into(),
            hidden_dim: 32,
            num_layers: 1,
            num_heads: 4,
            intermediate_size: 64,
            vocab_size: 8192,
            dropout: 0.0,
            init_std: 0.02,
        }
    }
}

impl StandInConfig {
    pub fn transformer_config(&self, max_len: usize) -> TransformerConfig {
        let pad = SpecialTokens::default().pad;
        TransformerConfig {
            vocab_size: self.vocab_size,
            hidden_size: self.hidden_dim,
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            intermediate_size: self.intermediate_size,
            max_positions: max_len + pad as usize + 1,
            type_vocab_size: 1,
            layer_norm_eps: 1e-5,
            hidden_dropout: self.dropout,
            attention_dropout: self.dropout,
            pad_token_id: pad,
            init_std: self.init_std,
        }
    }
}

/// A Hugging Face style model directory holding `config.json`,
/// `tokenizer.json` and `model.safetensors`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainedConfig {
    #[serde(default = "default_pretrained_name")]
    pub name: String,
    pub model_dir: PathBuf,
    #[serde(default)]
    pub hidden_dropout: Option<f64>,
    #[serde(default)]
    pub attention_dropout: Option<f64>,
}

fn default_pretrained_name() -> String {
    "xlm-roberta-base".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderConfig {
    StandIn(StandInConfig),
    Pretrained(PretrainedConfig),
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig::StandIn(StandInConfig::default())
    }
}

/// How to rebuild the tokenizer of a saved encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TokenizerSpec {
    Hashed(HashedTokenizer),
    Unigram { file: String },
}

/// The concrete encoder: a RoBERTa-layout transformer behind either the
/// hashed word tokenizer (randomly initialised stand-in) or a SentencePiece
/// unigram tokenizer (pretrained weights).
#[derive(Debug, Clone)]
pub struct EncoderAdapter {
    name: String,
    max_len: usize,
    tokenizer: Tokenizer,
    tokenizer_json: Option<Arc<String>>,
    transformer: TransformerEncoder,
}

impl EncoderAdapter {
    pub fn stand_in<R: Rng + ?Sized>(config: &StandInConfig, max_len: usize, rng: &mut R) -> Result<Self> {
        let tokenizer = Tokenizer::Hashed(HashedTokenizer::new(config.vocab_size)?);
        let transformer = TransformerEncoder::new(config.transformer_config(max_len), rng)?;
        Self::from_parts(config.name.clone(), max_len, tokenizer, None, transformer)
    }

    pub fn from_pretrained(config: &PretrainedConfig, max_len: usize) -> Result<Self> {
        let dir = &config.model_dir;
        let mut tconfig = read_hf_config(&dir.join("config.json"))?;
        if let Some(p) = config.hidden_dropout {
            tconfig.hidden_dropout = p;
        }
        if let Some(p) = config.attention_dropout {
            tconfig.attention_dropout = p;
        }
        let tok_path = dir.join("tokenizer.json");
        let tok_text = std::fs::read_to_string(&tok_path)
            .map_err(|e| Error::io(format!("reading {}", tok_path.display()), e))?;
        let tok_json: Value = serde_json::from_str(&tok_text)
            .map_err(|e| Error::json(format!("parsing {}", tok_path.display()), e))?;
        let tokenizer = UnigramTokenizer::from_json(&tok_json)
            .map_err(|e| Error::Model(format!("{}: {e}", tok_path.display())))?;
        let mut transformer = TransformerEncoder::new(tconfig, &mut ChaCha8Rng::seed_from_u64(0))?;
        let weights = TensorFile::open(&dir.join("model.safetensors"))?;
        let missing = transformer.load_params(|name| {
            for candidate in hf_name_candidates(name) {
                if weights.contains(&candidate) {
                    return weights.get(&candidate).map(Some);
                }
            }
            Ok(None)
        })?;
        if !missing.is_empty() {
            return Err(Error::Model(format!(
                "{}: missing tensors {}",
                dir.display(),
                missing.join(", ")
            )));
        }
        Self::from_parts(
            config.name.clone(),
            max_len,
            Tokenizer::Unigram(tokenizer),
            Some(Arc::new(tok_text)),
            transformer,
        )
    }

    pub fn from_parts(
        name: String,
        max_len: usize,
        tokenizer: Tokenizer,
        tokenizer_json: Option<Arc<String>>,
        transformer: TransformerEncoder,
    ) -> Result<Self> {
        let tc = transformer.config();
        if max_len < 4 || max_len > tc.max_sequence() {
            return Err(Error::Config(format!(
                "max_len {max_len} must lie in [4, {}]",
                tc.max_sequence()
            )));
        }
        let vocab = match &tokenizer {
            Tokenizer::Hashed(t) => t.vocab_size,
            Tokenizer::Unigram(t) => t.vocab_size(),
        };
        if vocab > tc.vocab_size {
            return Err(Error::Config(format!(
                "tokenizer vocabulary {vocab} exceeds embedding table {}",
                tc.vocab_size
            )));
        }
        if matches!(tokenizer, Tokenizer::Unigram(_)) && tokenizer_json.is_none() {
            return Err(Error::Config("unigram tokenizer needs its source json".into()));
        }
        Ok(Self {
            name,
            max_len,
            tokenizer,
            tokenizer_json,
            transformer,
        })
    }

    pub fn from_config<R: Rng + ?Sized>(config: &EncoderConfig, max_len: usize, rng: &mut R) -> Result<Self> {
        match config {
            EncoderConfig::StandIn(c) => Self::stand_in(c, max_len, rng),
            EncoderConfig::Pretrained(c) => Self::from_pretrained(c, max_len),
        }
    }

    pub fn transformer(&self) -> &TransformerEncoder {
        &self.transformer
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn tokenizer_json(&self) -> Option<&str> {
        self.tokenizer_json.as_deref().map(String::as_str)
    }

    pub fn tokenizer_spec(&self) -> TokenizerSpec {
        match &self.tokenizer {
            Tokenizer::Hashed(t) => TokenizerSpec::Hashed(t.clone()),
            Tokenizer::Unigram(_) => TokenizerSpec::Unigram {
                file: "tokenizer.json".into(),
            },
        }
    }
}

impl Encoder for EncoderAdapter {
    type Trace = EncoderTrace;

    fn name(&self) -> &str {
        &self.name
    }

    fn hidden_dim(&self) -> usize {
        self.transformer.config().hidden_size
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn special_tokens(&self) -> SpecialTokens {
        self.tokenizer.specials()
    }

    fn tokenize(&self, text: &str) -> Vec<u32> {
        self.tokenizer.encode(text)
    }

    fn encode(&self, ids: &[u32]) -> Result<Array1<f64>> {
        Ok(self.transformer.forward::<dyn RngCore>(ids, None)?.0)
    }

    fn encode_train(&self, ids: &[u32], rng: &mut dyn RngCore) -> Result<(Array1<f64>, EncoderTrace)> {
        self.transformer.forward(ids, Some(rng))
    }

    fn backward(&mut self, trace: &EncoderTrace, grad: ArrayView1<f64>) {
        self.transformer.backward(trace, grad);
    }

    fn params(&self) -> Vec<ParamRef<'_>> {
        self.transformer.params()
    }

    fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        self.transformer.params_mut()
    }
}

fn read_hf_config(path: &Path) -> Result<TransformerConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let json: Value =
        serde_json::from_str(&text).map_err(|e| Error::json(format!("parsing {}", path.display()), e))?;
    let bad = |m: String| Error::Model(format!("{}: {m}", path.display()));
    let int = |key: &str| {
        json.get(key)
            .and_then(Value::as_u64)
            .map(|v| v as usize)
            .ok_or_else(|| bad(format!("missing integer field {key}")))
    };
    let real = |key: &str, default: f64| json.get(key).and_then(Value::as_f64).unwrap_or(default);
    match json.get("hidden_act").and_then(Value::as_str) {
        None | Some("gelu") => {}
        Some(other) => return Err(bad(format!("unsupported activation {other}"))),
    }
    let config = TransformerConfig {
        vocab_size: int("vocab_size")?,
        hidden_size: int("hidden_size")?,
        num_layers: int("num_hidden_layers")?,
        num_heads: int("num_attention_heads")?,
        intermediate_size: int("intermediate_size")?,
        max_positions: int("max_position_embeddings")?,
        type_vocab_size: int("type_vocab_size").unwrap_or(1),
        layer_norm_eps: real("layer_norm_eps", 1e-5),
        hidden_dropout: real("hidden_dropout_prob", 0.1),
        attention_dropout: real("attention_probs_dropout_prob", 0.1),
        pad_token_id: int("pad_token_id").unwrap_or(1) as u32,
        init_std: real("initializer_range", 0.02),
    };
    config.validate()?;
    Ok(config)
}

fn hf_name_candidates(name: &str) -> Vec<String> {
    let mut out = vec![name.to_string(), format!("roberta.{name}")];
    if name.contains("LayerNorm") {
        let legacy = name.replace("LayerNorm.weight", "LayerNorm.gamma").replace("LayerNorm.bias", "LayerNorm.beta");
        out.push(format!("roberta.{legacy}"));
        out.push(legacy);
    }
    out
}
