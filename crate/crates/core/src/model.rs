//! The three decoder variants over one shared decode loop.
//!
//! Step order for the improved and interactive variants:
//!
//! ```text
//! s̃ = GRU_pre(s_{t−1}, e_{y_{t−1}})
//! w = softmax(align(s̃, H^(t−1)))
//! c = Σ_j w(j) h_j^(t−1)
//! s_t = GRU_post(s̃, c)
//! H^(t) = write(H^(t−1), w, s_t)        interactive only
//! logits = readout(c, e_{y_{t−1}}, s_t)
//! ```
//!
//! The conventional variant queries with `s_{t−1}` and updates the state with
//! a single GRU over `[e_{y_{t−1}} ; c]`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};

use crate::attention::{self, declare_attention, AttentionVars};
use crate::data::{BOS, EOS};
use crate::encoder::{encode, EncoderVars, SourceAnnotations};
use crate::error::{Error, Result};
use crate::gradcheck::{finite_diff_check, GradCheck};
use crate::memory::{self, declare_write, SourceMemory, WriteVars};
use crate::nn::{declare_gru, declare_readout, embed, gru_step, readout_logits, Dropout, GruVars, ReadoutVars};
use crate::params::{Bound, ParamKind, ParamStore};
use crate::tensor::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Conventional,
    Improved,
    Interactive,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Conventional, Variant::Improved, Variant::Interactive];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Conventional => "conventional",
            Variant::Improved => "improved",
            Variant::Interactive => "interactive",
        }
    }

    pub fn writes(self) -> bool {
        self == Variant::Interactive
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conventional" => Ok(Variant::Conventional),
            "improved" => Ok(Variant::Improved),
            "interactive" => Ok(Variant::Interactive),
            other => Err(Error::Config(format!(
                "unknown variant {other:?} (expected conventional, improved or interactive)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub d_emb: usize,
    /// Width of each encoder direction; memory cells are `2 · d_enc` wide.
    pub d_enc: usize,
    pub d_s: usize,
    pub d_a: usize,
    pub d_readout: usize,
}

impl ModelConfig {
    /// Uniform widths: every dimension set to `dim`.
    pub fn uniform(variant: Variant, src_vocab: usize, tgt_vocab: usize, dim: usize) -> Self {
        Self {
            variant,
            src_vocab,
            tgt_vocab,
            d_emb: dim,
            d_enc: dim,
            d_s: dim,
            d_a: dim,
            d_readout: dim,
        }
    }

    pub fn cell_width(&self) -> usize {
        2 * self.d_enc
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("src_vocab", self.src_vocab),
            ("tgt_vocab", self.tgt_vocab),
            ("d_emb", self.d_emb),
            ("d_enc", self.d_enc),
            ("d_s", self.d_s),
            ("d_a", self.d_a),
            ("d_readout", self.d_readout),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.tgt_vocab <= EOS {
            return Err(Error::Config("target vocabulary must contain the reserved ids".into()));
        }
        Ok(())
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }
}

pub const SRC_EMB: &str = "src_emb";
pub const TGT_EMB: &str = "tgt_emb";
pub const INIT_W: &str = "init.W_init";

/// Every learned tensor of one model, by name.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub store: ParamStore,
}

impl ModelParams {
    /// All tensors declared and zero-filled.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let m = c.cell_width();
        let mut store = ParamStore::new();
        store.declare(SRC_EMB, ParamKind::Weight, vec![c.src_vocab, c.d_emb])?;
        store.declare(TGT_EMB, ParamKind::Weight, vec![c.tgt_vocab, c.d_emb])?;
        declare_gru(&mut store, "enc_fwd", c.d_emb, c.d_enc)?;
        declare_gru(&mut store, "enc_bwd", c.d_emb, c.d_enc)?;
        store.declare(INIT_W, ParamKind::Weight, vec![c.d_s, c.d_enc])?;
        match c.variant {
            Variant::Conventional => declare_gru(&mut store, "dec", c.d_emb + m, c.d_s)?,
            Variant::Improved | Variant::Interactive => {
                declare_gru(&mut store, "dec_pre", c.d_emb, c.d_s)?;
                declare_gru(&mut store, "dec_post", m, c.d_s)?;
            }
        }
        declare_attention(&mut store, "att", c.d_s, m, c.d_a)?;
        if c.variant.writes() {
            declare_write(&mut store, m, c.d_s)?;
        }
        declare_readout(&mut store, "readout", m, c.d_emb, c.d_s, c.d_readout, c.tgt_vocab)?;
        Ok(Self { config, store })
    }

    /// Overwrites every value with `U(-scale, scale)` draws; used for test
    /// instances where the training initialization is too small to be useful.
    pub fn fill_uniform<R: Rng + ?Sized>(&mut self, rng: &mut R, scale: f64) {
        for p in self.store.iter_mut() {
            for v in p.tensor.data_mut() {
                *v = rng.random_range(-scale..scale);
            }
        }
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, requires_grad: bool) -> Result<Model> {
        let bound = self.store.bind(tape, requires_grad);
        Model::from_bound(&self.config, &bound)
    }

    /// Summed NLL of one pair, without dropout.
    pub fn sentence_loss_value(&self, src: &[usize], tgt: &[usize]) -> Result<f64> {
        let mut tape = Tape::new();
        let model = self.bind(&mut tape, false)?;
        let loss = model.sentence_loss(&mut tape, src, tgt, &mut StepOptions::inference())?;
        Ok(tape.scalar(loss))
    }

    /// Loss and per-tensor gradients (store order) of one pair.
    pub fn loss_and_gradients(&self, src: &[usize], tgt: &[usize], dropout: Option<Dropout<'_>>) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape, true);
        let model = Model::from_bound(&self.config, &bound)?;
        let mut opts = StepOptions {
            write_enabled: true,
            dropout,
        };
        let loss = model.sentence_loss(&mut tape, src, tgt, &mut opts)?;
        let value = tape.scalar(loss);
        let mut grads = tape.backward(loss)?;
        let out = bound
            .vars()
            .iter()
            .zip(self.store.tensors())
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| vec![0.0; t.len()]))
            .collect();
        Ok((value, out))
    }

    /// Finite-difference check of the sentence loss over every parameter.
    pub fn loss_gradcheck(&self, src: &[usize], tgt: &[usize], step: f64) -> Result<GradCheck> {
        let inputs: Vec<_> = self.store.tensors().cloned().collect();
        finite_diff_check(
            |tape, vars| {
                let bound = Bound::from_vars(&self.store, vars.to_vec())?;
                let model = Model::from_bound(&self.config, &bound)?;
                model.sentence_loss(tape, src, tgt, &mut StepOptions::inference())
            },
            &inputs,
            step,
        )
    }
}

#[derive(Clone, Copy, Debug)]
enum DecoderVars {
    Single(GruVars),
    TwoStage { pre: GruVars, post: GruVars },
}

/// Decoder recurrent state and the memory it reads from.
#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub s: Var,
    pub memory: SourceMemory,
    keys: Option<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    pub logits: Var,
    /// Shared read/write weights of this step.
    pub weights: Var,
    pub context: Var,
    pub state: DecoderState,
}

/// Per-pass switches for [`Model::decode_step`].
pub struct StepOptions<'r> {
    /// When false the interactive variant skips its write and behaves exactly
    /// like the improved variant.
    pub write_enabled: bool,
    pub dropout: Option<Dropout<'r>>,
}

impl StepOptions<'_> {
    pub fn inference() -> Self {
        Self {
            write_enabled: true,
            dropout: None,
        }
    }

    pub fn without_write() -> Self {
        Self {
            write_enabled: false,
            dropout: None,
        }
    }
}

impl<'r> StepOptions<'r> {
    pub fn training(rate: f64, rng: &'r mut dyn RngCore) -> Self {
        Self {
            write_enabled: true,
            dropout: Some(Dropout { rate, rng }),
        }
    }
}

/// A model bound onto one tape.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    src_emb: Var,
    tgt_emb: Var,
    encoder: EncoderVars,
    decoder: DecoderVars,
    attention: AttentionVars,
    write: Option<WriteVars>,
    readout: ReadoutVars,
    init: Var,
}

impl Model {
    pub fn from_bound(config: &ModelConfig, bound: &Bound<'_>) -> Result<Self> {
        let decoder = match config.variant {
            Variant::Conventional => DecoderVars::Single(GruVars::bind(bound, "dec")?),
            Variant::Improved | Variant::Interactive => DecoderVars::TwoStage {
                pre: GruVars::bind(bound, "dec_pre")?,
                post: GruVars::bind(bound, "dec_post")?,
            },
        };
        let write = if config.variant.writes() {
            Some(WriteVars::bind(bound)?)
        } else {
            None
        };
        Ok(Self {
            config: config.clone(),
            src_emb: bound.get(SRC_EMB)?,
            tgt_emb: bound.get(TGT_EMB)?,
            encoder: EncoderVars {
                forward: GruVars::bind(bound, "enc_fwd")?,
                backward: GruVars::bind(bound, "enc_bwd")?,
            },
            decoder,
            attention: AttentionVars::bind(bound, "att")?,
            write,
            readout: ReadoutVars::bind(bound, "readout")?,
            init: bound.get(INIT_W)?,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn encode(&self, tape: &mut Tape<'_>, src: &[usize]) -> Result<SourceAnnotations> {
        if src.is_empty() {
            return Err(Error::EmptyInput("source sentence".into()));
        }
        let embs = src
            .iter()
            .map(|&id| embed(tape, self.src_emb, id))
            .collect::<Result<Vec<_>>>()?;
        encode(tape, &self.encoder, &embs)
    }

    /// `s_0 = tanh(W_init · ←h_1)`; the memory starts as the annotations.
    pub fn init_state(&self, tape: &mut Tape<'_>, annotations: &SourceAnnotations) -> Result<DecoderState> {
        let first = tape.row(annotations.matrix, 0)?;
        let half = annotations.half_width();
        let backward = tape.slice(first, half, 2 * half)?;
        let pre = tape.matvec(self.init, backward)?;
        let s = tape.tanh(pre);
        Ok(DecoderState {
            s,
            memory: SourceMemory::new(tape, annotations.matrix)?,
            keys: None,
        })
    }

    pub fn start(&self, tape: &mut Tape<'_>, src: &[usize]) -> Result<DecoderState> {
        let ann = self.encode(tape, src)?;
        self.init_state(tape, &ann)
    }

    pub fn decode_step(
        &self,
        tape: &mut Tape<'_>,
        state: &DecoderState,
        y_prev: usize,
        opts: &mut StepOptions<'_>,
    ) -> Result<StepOutput> {
        let prev = embed(tape, self.tgt_emb, y_prev)?;
        let keys = match state.keys {
            Some(k) => k,
            None => attention::keys(tape, &self.attention, state.memory.cells)?,
        };
        let (weights, context, s, next_memory, next_keys) = match self.decoder {
            DecoderVars::Single(gru) => {
                let (w, c) = self.attend(tape, state.s, keys, &state.memory)?;
                let input = tape.concat(&[prev, c])?;
                let s = gru_step(tape, &gru, state.s, input)?;
                (w, c, s, state.memory.advance(), Some(keys))
            }
            DecoderVars::TwoStage { pre, post } => {
                let intermediate = gru_step(tape, &pre, state.s, prev)?;
                let (w, c) = self.attend(tape, intermediate, keys, &state.memory)?;
                let s = gru_step(tape, &post, intermediate, c)?;
                match self.write.filter(|_| opts.write_enabled) {
                    Some(wp) => {
                        let mem = memory::write(tape, &state.memory, w, s, &wp)?;
                        (w, c, s, mem, None)
                    }
                    None => (w, c, s, state.memory.advance(), Some(keys)),
                }
            }
        };
        let logits = readout_logits(tape, &self.readout, context, prev, s, opts.dropout.as_mut())?;
        Ok(StepOutput {
            logits,
            weights,
            context,
            state: DecoderState {
                s,
                memory: next_memory,
                keys: next_keys,
            },
        })
    }

    fn attend(&self, tape: &mut Tape<'_>, query: Var, keys: Var, mem: &SourceMemory) -> Result<(Var, Var)> {
        let scores = attention::align_scores_with_keys(tape, &self.attention, query, keys)?;
        let w = attention::normalize(tape, scores)?;
        let c = memory::read(tape, mem, w)?;
        Ok((w, c))
    }

    /// Teacher-forced `−Σ_t log p(y_t | y_<t, x)` up to and including the
    /// first EOS of `tgt`; anything after it is ignored.
    pub fn sentence_loss(&self, tape: &mut Tape<'_>, src: &[usize], tgt: &[usize], opts: &mut StepOptions<'_>) -> Result<Var> {
        let end = tgt
            .iter()
            .position(|&t| t == EOS)
            .ok_or_else(|| Error::Data("target sentence does not contain EOS".into()))?;
        let tgt = &tgt[..=end];
        if let Some(&bad) = tgt.iter().find(|&&t| t >= self.config.tgt_vocab) {
            return Err(Error::InvalidToken {
                id: bad,
                size: self.config.tgt_vocab,
            });
        }
        let mut state = self.start(tape, src)?;
        let mut y_prev = BOS;
        let mut terms = Vec::with_capacity(tgt.len());
        for &y in tgt {
            let out = self.decode_step(tape, &state, y_prev, opts)?;
            let lp = tape.log_softmax(out.logits)?;
            terms.push(tape.pick(lp, y)?);
            state = out.state;
            y_prev = y;
        }
        let total = tape.add_all(&terms)?;
        Ok(tape.scale(total, -1.0))
    }
}
