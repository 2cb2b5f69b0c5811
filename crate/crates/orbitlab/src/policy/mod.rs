//! Tiny mode-conditioned autoregressive policy.
//!
//! Two interchangeable architectures sit behind one parameter-vector
//! interface: a causal transformer (default) and a fixed-window MLP used to
//! keep CI fast. Mode conditioning is a single reserved control token
//! prepended to the query; the human-readable prompt text of each mode is
//! carried as metadata only.

mod checkpoint;
mod forward;
mod graph;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use forward::{next_token_dist, sample_trajectory, score_trajectory, SeqScorer};
pub use graph::{sequence_logprob_graph, LeafBinding, SeqGraph};

use crate::tasks::tok;
use serde::{Deserialize, Serialize};
use std::ops::Range;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("context overflow: need {need} positions, context length is {have}")]
    ContextOverflow { need: usize, have: usize },
    #[error("unknown token id {0} (vocab size {1})")]
    UnknownToken(u32, usize),
    #[error("temperature must be > 0, got {0}")]
    BadTemperature(f64),
    #[error("max-len must be >= 1")]
    BadMaxLen,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Numeric(#[from] crate::numeric::NumericError),
}

pub type Result<T> = std::result::Result<T, PolicyError>;

/// Discrete reasoning effort level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeId {
    Low,
    Mid,
    High,
    Xhigh,
}

impl ModeId {
    pub const ALL: [ModeId; 4] = [ModeId::Low, ModeId::Mid, ModeId::High, ModeId::Xhigh];

    pub fn control_token(self) -> u32 {
        match self {
            ModeId::Low => tok::MODE_LOW,
            ModeId::Mid => tok::MODE_MID,
            ModeId::High => tok::MODE_HIGH,
            ModeId::Xhigh => tok::MODE_XHIGH,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModeId::Low => "low",
            ModeId::Mid => "mid",
            ModeId::High => "high",
            ModeId::Xhigh => "xhigh",
        }
    }

    pub fn index(self) -> usize {
        match self {
            ModeId::Low => 0,
            ModeId::Mid => 1,
            ModeId::High => 2,
            ModeId::Xhigh => 3,
        }
    }
}

/// A reasoning mode: reserved control token, token budget, prompt text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeTag {
    pub id: ModeId,
    pub control_token: u32,
    pub budget: usize,
    pub prompt_text: String,
}

/// The four standard modes for a given budget ladder. Budgets must be
/// strictly increasing low < mid < high < xhigh.
pub fn standard_modes(budgets: [usize; 4]) -> Result<Vec<ModeTag>> {
    if !(budgets[0] < budgets[1] && budgets[1] < budgets[2] && budgets[2] < budgets[3]) {
        return Err(PolicyError::BadConfig(format!(
            "mode budgets must be strictly increasing, got {budgets:?}"
        )));
    }
    let texts = [
        "Answer immediately with minimal working.",
        "Work the chain once, then answer.",
        "Work the chain and verify it before answering.",
        "Work the chain and double-verify every step before answering.",
    ];
    Ok(ModeId::ALL
        .iter()
        .zip(budgets)
        .zip(texts)
        .map(|((&id, budget), text)| ModeTag {
            id,
            control_token: id.control_token(),
            budget,
            prompt_text: text.to_string(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Variant {
    Transformer,
    MlpWindow { window: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub context_length: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: tok::VOCAB_SIZE,
            context_length: 288,
            d_model: 48,
            n_layers: 2,
            n_heads: 4,
            variant: Variant::Transformer,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.context_length < 8 {
            return Err(PolicyError::BadConfig(format!(
                "context length {} < 8",
                self.context_length
            )));
        }
        if self.vocab_size == 0 || self.d_model == 0 || self.n_layers == 0 {
            return Err(PolicyError::BadConfig("zero-sized dimension".into()));
        }
        match self.variant {
            Variant::Transformer => {
                if self.d_model % self.n_heads != 0 {
                    return Err(PolicyError::BadConfig(format!(
                        "d_model {} not divisible by n_heads {}",
                        self.d_model, self.n_heads
                    )));
                }
            }
            Variant::MlpWindow { window } => {
                if window == 0 || window > self.context_length {
                    return Err(PolicyError::BadConfig(format!(
                        "mlp window {window} must be in 1..=context_length"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        Layout::new(self).total
    }

    pub fn hidden(&self) -> usize {
        4 * self.d_model
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerLayout {
    pub ln1: Range<usize>,
    pub wq: Vec<Range<usize>>,
    pub wk: Vec<Range<usize>>,
    pub wv: Vec<Range<usize>>,
    pub wo: Vec<Range<usize>>,
    pub ln2: Range<usize>,
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
}

#[derive(Debug, Clone)]
pub(crate) enum LayoutKind {
    Transformer {
        wpe: Range<usize>,
        layers: Vec<LayerLayout>,
        lnf: Range<usize>,
    },
    MlpWindow {
        wpos: Range<usize>,
        w_in: Range<usize>,
        b_in: Range<usize>,
        hidden_layers: Vec<(Range<usize>, Range<usize>)>,
    },
}

/// Offsets of every named tensor inside the flat parameter vector.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub wte: Range<usize>,
    pub kind: LayoutKind,
    pub unembed: Range<usize>,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut off = 0usize;
        let mut take = |n: usize| {
            let r = off..off + n;
            off += n;
            r
        };
        let (v, c, d) = (cfg.vocab_size, cfg.context_length, cfg.d_model);
        let wte = take(v * d);
        let kind = match cfg.variant {
            Variant::Transformer => {
                let hd = d / cfg.n_heads;
                let wpe = take(c * d);
                let mut layers = Vec::with_capacity(cfg.n_layers);
                for _ in 0..cfg.n_layers {
                    let ln1 = take(d);
                    let wq = (0..cfg.n_heads).map(|_| take(d * hd)).collect();
                    let wk = (0..cfg.n_heads).map(|_| take(d * hd)).collect();
                    let wv = (0..cfg.n_heads).map(|_| take(d * hd)).collect();
                    let wo = (0..cfg.n_heads).map(|_| take(hd * d)).collect();
                    let ln2 = take(d);
                    let w1 = take(d * cfg.hidden());
                    let b1 = take(cfg.hidden());
                    let w2 = take(cfg.hidden() * d);
                    let b2 = take(d);
                    layers.push(LayerLayout {
                        ln1,
                        wq,
                        wk,
                        wv,
                        wo,
                        ln2,
                        w1,
                        b1,
                        w2,
                        b2,
                    });
                }
                let lnf = take(d);
                LayoutKind::Transformer { wpe, layers, lnf }
            }
            Variant::MlpWindow { window } => {
                let h = cfg.hidden();
                let wpos = take(window * d);
                let w_in = take(window * d * h);
                let b_in = take(h);
                let hidden_layers = (1..cfg.n_layers)
                    .map(|_| (take(h * h), take(h)))
                    .collect();
                LayoutKind::MlpWindow {
                    wpos,
                    w_in,
                    b_in,
                    hidden_layers,
                }
            }
        };
        let unembed_in = match cfg.variant {
            Variant::Transformer => d,
            Variant::MlpWindow { .. } => cfg.hidden(),
        };
        let unembed = take(unembed_in * v);
        Layout {
            wte,
            kind,
            unembed,
            total: off,
        }
    }
}

/// Checkpoint-side metadata carried with every parameter snapshot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ParamMeta {
    pub stage_label: String,
    pub mode_binding: Option<ModeId>,
    pub seed: u64,
    pub step: u64,
}

/// Flat parameter vector plus its architecture descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub config: ModelConfig,
    pub flat: Vec<f64>,
    pub meta: ParamMeta,
}

impl PolicyParams {
    pub(crate) fn layout(&self) -> Layout {
        Layout::new(&self.config)
    }

    pub fn assert_finite(&self) -> Result<()> {
        if self.flat.iter().any(|v| !v.is_finite()) {
            return Err(PolicyError::BadConfig("non-finite parameter".into()));
        }
        Ok(())
    }
}

/// Deterministic initialization: N(0, 0.02) weights, unit norm gains, zero
/// biases, and a zero-initialized final logit layer (first-step next-token
/// distribution is exactly uniform).
pub fn init_policy(config: &ModelConfig, seed: u64) -> Result<PolicyParams> {
    config.validate()?;
    let layout = Layout::new(config);
    let mut flat = vec![0.0f64; layout.total];
    let mut rng = crate::seeding::rng_from(seed, "init-policy", 0);
    let mut gauss = |std: f64| -> f64 {
        use rand::Rng;
        // Box-Muller on explicit uniforms keeps the draw order stable.
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen();
        std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let mut fill_gauss = |flat: &mut [f64], r: &Range<usize>| {
        for v in &mut flat[r.clone()] {
            *v = gauss(0.02);
        }
    };
    let ones = |flat: &mut [f64], r: &Range<usize>| {
        for v in &mut flat[r.clone()] {
            *v = 1.0;
        }
    };

    fill_gauss(&mut flat, &layout.wte);
    match &layout.kind {
        LayoutKind::Transformer { wpe, layers, lnf } => {
            fill_gauss(&mut flat, wpe);
            for l in layers {
                ones(&mut flat, &l.ln1);
                for r in l.wq.iter().chain(&l.wk).chain(&l.wv).chain(&l.wo) {
                    fill_gauss(&mut flat, r);
                }
                ones(&mut flat, &l.ln2);
                fill_gauss(&mut flat, &l.w1);
                fill_gauss(&mut flat, &l.w2);
                // b1, b2 stay zero
            }
            ones(&mut flat, lnf);
        }
        LayoutKind::MlpWindow {
            wpos,
            w_in,
            hidden_layers,
            ..
        } => {
            fill_gauss(&mut flat, wpos);
            fill_gauss(&mut flat, w_in);
            for (w, _b) in hidden_layers {
                fill_gauss(&mut flat, w);
            }
        }
    }
    // unembed stays zero

    Ok(PolicyParams {
        config: config.clone(),
        flat,
        meta: ParamMeta {
            stage_label: "init".into(),
            mode_binding: None,
            seed,
            step: 0,
        },
    })
}

/// One sampled response with bookkeeping for policy-gradient training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub query: Vec<u32>,
    pub mode: ModeTag,
    pub output: Vec<u32>,
    pub logprobs: Vec<f64>,
    pub truncated: bool,
    pub reward: f64,
    pub seed: u64,
}

impl Trajectory {
    pub fn check_invariants(&self) {
        assert_eq!(self.output.len(), self.logprobs.len());
        assert!(self.reward == 0.0 || self.reward == 1.0);
        if self.truncated {
            assert_eq!(self.reward, 0.0, "truncated trajectory must have reward 0");
            assert_ne!(self.output.last(), Some(&tok::EOS));
        } else {
            assert_eq!(self.output.last(), Some(&tok::EOS));
        }
    }
}
