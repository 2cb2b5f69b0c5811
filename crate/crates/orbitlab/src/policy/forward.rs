//! Tape-free inference: incremental forward with a KV cache for sampling and
//! scoring. Must agree numerically with the training graph in `graph.rs`.

use super::{Layout, LayoutKind, ModeTag, ModelConfig, PolicyError, PolicyParams, Result, Trajectory, Variant};
use crate::numeric::gelu;
use crate::seeding::rng_from;
use crate::tasks::tok;
use rand::Rng;

pub(crate) const RMS_EPS: f64 = 1e-5;

/// Incremental scorer over one sequence. `push` consumes a token and returns
/// the log-softmax distribution over the next token.
pub struct SeqScorer<'a> {
    params: &'a PolicyParams,
    layout: Layout,
    pos: usize,
    // transformer: per layer, per head, flat (pos * head_dim) key/value caches
    kv: Vec<Vec<(Vec<f64>, Vec<f64>)>>,
    // mlp-window: token history
    history: Vec<u32>,
}

impl<'a> SeqScorer<'a> {
    pub fn new(params: &'a PolicyParams) -> Self {
        let layout = params.layout();
        let kv = match params.config.variant {
            Variant::Transformer => (0..params.config.n_layers)
                .map(|_| (0..params.config.n_heads).map(|_| (vec![], vec![])).collect())
                .collect(),
            Variant::MlpWindow { .. } => vec![],
        };
        Self {
            params,
            layout,
            pos: 0,
            kv,
            history: vec![],
        }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    /// Consume one token; return log-probabilities of the next token.
    pub fn push(&mut self, token: u32) -> Result<Vec<f64>> {
        let cfg = &self.params.config;
        if (token as usize) >= cfg.vocab_size {
            return Err(PolicyError::UnknownToken(token, cfg.vocab_size));
        }
        if self.pos >= cfg.context_length {
            return Err(PolicyError::ContextOverflow {
                need: self.pos + 1,
                have: cfg.context_length,
            });
        }
        let logits = match cfg.variant {
            Variant::Transformer => self.step_transformer(token),
            Variant::MlpWindow { window } => self.step_mlp(token, window),
        };
        self.pos += 1;
        Ok(log_softmax_row(&logits))
    }

    fn step_transformer(&mut self, token: u32) -> Vec<f64> {
        let cfg = &self.params.config;
        let flat = &self.params.flat;
        let d = cfg.d_model;
        let hd = d / cfg.n_heads;
        let inv_sqrt_hd = 1.0 / (hd as f64).sqrt();

        let wte = &flat[self.layout.wte.clone()];
        let (wpe, layers, lnf) = match &self.layout.kind {
            LayoutKind::Transformer { wpe, layers, lnf } => {
                (&flat[wpe.clone()], layers, &flat[lnf.clone()])
            }
            LayoutKind::MlpWindow { .. } => unreachable!(),
        };

        let t0 = token as usize * d;
        let p0 = self.pos * d;
        let mut x: Vec<f64> = (0..d).map(|j| wte[t0 + j] + wpe[p0 + j]).collect();

        for (l, lay) in layers.iter().enumerate() {
            let xn = rms_scale(&x, &flat[lay.ln1.clone()]);
            let mut attn_out = vec![0.0; d];
            for h in 0..cfg.n_heads {
                let q = mat_vec_in(&xn, &flat[lay.wq[h].clone()], hd);
                let k = mat_vec_in(&xn, &flat[lay.wk[h].clone()], hd);
                let v = mat_vec_in(&xn, &flat[lay.wv[h].clone()], hd);
                let (keys, vals) = &mut self.kv[l][h];
                keys.extend_from_slice(&k);
                vals.extend_from_slice(&v);
                let t_len = self.pos + 1;
                let mut scores = vec![0.0; t_len];
                for (t, s) in scores.iter_mut().enumerate() {
                    let krow = &keys[t * hd..(t + 1) * hd];
                    *s = q.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>() * inv_sqrt_hd;
                }
                softmax_inplace(&mut scores);
                let mut ctx = vec![0.0; hd];
                for (t, &aw) in scores.iter().enumerate() {
                    let vrow = &vals[t * hd..(t + 1) * hd];
                    for (c, vv) in ctx.iter_mut().zip(vrow) {
                        *c += aw * vv;
                    }
                }
                let wo = &flat[lay.wo[h].clone()];
                for (i, &cv) in ctx.iter().enumerate() {
                    if cv == 0.0 {
                        continue;
                    }
                    let row = &wo[i * d..(i + 1) * d];
                    for (o, wv) in attn_out.iter_mut().zip(row) {
                        *o += cv * wv;
                    }
                }
            }
            for (xi, a) in x.iter_mut().zip(&attn_out) {
                *xi += a;
            }

            let xn2 = rms_scale(&x, &flat[lay.ln2.clone()]);
            let hdim = cfg.hidden();
            let mut h1 = flat[lay.b1.clone()].to_vec();
            let w1 = &flat[lay.w1.clone()];
            for (i, &xv) in xn2.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let row = &w1[i * hdim..(i + 1) * hdim];
                for (hv, wv) in h1.iter_mut().zip(row) {
                    *hv += xv * wv;
                }
            }
            for hv in &mut h1 {
                *hv = gelu(*hv);
            }
            let mut mlp = flat[lay.b2.clone()].to_vec();
            let w2 = &flat[lay.w2.clone()];
            for (i, &hv) in h1.iter().enumerate() {
                if hv == 0.0 {
                    continue;
                }
                let row = &w2[i * d..(i + 1) * d];
                for (m, wv) in mlp.iter_mut().zip(row) {
                    *m += hv * wv;
                }
            }
            for (xi, m) in x.iter_mut().zip(&mlp) {
                *xi += m;
            }
        }

        let xf = rms_scale(&x, lnf);
        let v = cfg.vocab_size;
        let unemb = &flat[self.layout.unembed.clone()];
        let mut logits = vec![0.0; v];
        for (i, &xv) in xf.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let row = &unemb[i * v..(i + 1) * v];
            for (lg, wv) in logits.iter_mut().zip(row) {
                *lg += xv * wv;
            }
        }
        logits
    }

    fn step_mlp(&mut self, token: u32, window: usize) -> Vec<f64> {
        let cfg = &self.params.config;
        let flat = &self.params.flat;
        let d = cfg.d_model;
        let hdim = cfg.hidden();
        self.history.push(token);

        let wte = &flat[self.layout.wte.clone()];
        let (wpos, w_in, b_in, hidden_layers) = match &self.layout.kind {
            LayoutKind::MlpWindow {
                wpos,
                w_in,
                b_in,
                hidden_layers,
            } => (
                &flat[wpos.clone()],
                &flat[w_in.clone()],
                &flat[b_in.clone()],
                hidden_layers,
            ),
            LayoutKind::Transformer { .. } => unreachable!(),
        };

        // Window slots, left-padded with BOS.
        let mut x = vec![0.0; window * d];
        for w in 0..window {
            let idx = self.history.len() as i64 - window as i64 + w as i64;
            let t = if idx >= 0 {
                self.history[idx as usize] as usize
            } else {
                tok::BOS as usize
            };
            for j in 0..d {
                x[w * d + j] = wte[t * d + j] + wpos[w * d + j];
            }
        }

        let mut h = b_in.to_vec();
        for (i, &xv) in x.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let row = &w_in[i * hdim..(i + 1) * hdim];
            for (hv, wv) in h.iter_mut().zip(row) {
                *hv += xv * wv;
            }
        }
        for hv in &mut h {
            *hv = gelu(*hv);
        }
        for (wr, br) in hidden_layers {
            let w = &flat[wr.clone()];
            let mut nh = flat[br.clone()].to_vec();
            for (i, &hv) in h.iter().enumerate() {
                if hv == 0.0 {
                    continue;
                }
                let row = &w[i * hdim..(i + 1) * hdim];
                for (nv, wv) in nh.iter_mut().zip(row) {
                    *nv += hv * wv;
                }
            }
            for nv in &mut nh {
                *nv = gelu(*nv);
            }
            h = nh;
        }

        let v = cfg.vocab_size;
        let unemb = &flat[self.layout.unembed.clone()];
        let mut logits = vec![0.0; v];
        for (i, &hv) in h.iter().enumerate() {
            if hv == 0.0 {
                continue;
            }
            let row = &unemb[i * v..(i + 1) * v];
            for (lg, wv) in logits.iter_mut().zip(row) {
                *lg += hv * wv;
            }
        }
        logits
    }
}

fn rms_scale(x: &[f64], gain: &[f64]) -> Vec<f64> {
    let d = x.len() as f64;
    let ms = x.iter().map(|v| v * v).sum::<f64>() / d;
    let r = 1.0 / (ms + RMS_EPS).sqrt();
    x.iter().zip(gain).map(|(v, g)| v * r * g).collect()
}

fn mat_vec_in(x: &[f64], w: &[f64], out_dim: usize) -> Vec<f64> {
    // w is [in, out] row-major; y = x @ w
    let mut y = vec![0.0; out_dim];
    for (i, &xv) in x.iter().enumerate() {
        if xv == 0.0 {
            continue;
        }
        let row = &w[i * out_dim..(i + 1) * out_dim];
        for (o, wv) in y.iter_mut().zip(row) {
            *o += xv * wv;
        }
    }
    y
}

fn softmax_inplace(v: &mut [f64]) {
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - mx).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

fn log_softmax_row(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|v| (v - mx).exp()).sum::<f64>().ln() + mx;
    logits.iter().map(|v| v - lse).collect()
}

/// Probability vector over the vocabulary for the next token after `context`.
pub fn next_token_dist(params: &PolicyParams, context: &[u32]) -> Result<Vec<f64>> {
    if context.is_empty() {
        return Err(PolicyError::BadConfig("empty context".into()));
    }
    if context.len() > params.config.context_length {
        return Err(PolicyError::ContextOverflow {
            need: context.len(),
            have: params.config.context_length,
        });
    }
    let mut scorer = SeqScorer::new(params);
    let mut row = vec![];
    for &t in context {
        row = scorer.push(t)?;
    }
    Ok(row.iter().map(|lp| lp.exp()).collect())
}

pub(crate) fn build_context(mode: &ModeTag, query: &[u32]) -> Vec<u32> {
    let mut ctx = Vec::with_capacity(2 + query.len());
    ctx.push(tok::BOS);
    ctx.push(mode.control_token);
    ctx.extend_from_slice(query);
    ctx
}

/// Autoregressive sampling under a mode prompt. Stops at EOS or after
/// `max_len` output tokens (then `truncated = true`). Per-token log-probs are
/// recorded under the sampling distribution (after temperature).
pub fn sample_trajectory(
    params: &PolicyParams,
    query: &[u32],
    mode: &ModeTag,
    max_len: usize,
    temperature: f64,
    seed: u64,
) -> Result<Trajectory> {
    if max_len < 1 {
        return Err(PolicyError::BadMaxLen);
    }
    if temperature <= 0.0 {
        return Err(PolicyError::BadTemperature(temperature));
    }
    let context = build_context(mode, query);
    let need = context.len() + max_len;
    if need > params.config.context_length {
        return Err(PolicyError::ContextOverflow {
            need,
            have: params.config.context_length,
        });
    }

    let mut scorer = SeqScorer::new(params);
    let mut row = vec![];
    for &t in &context {
        row = scorer.push(t)?;
    }

    let mut rng = rng_from(seed, "sample", 0);
    let mut output = Vec::new();
    let mut logprobs = Vec::new();
    let mut truncated = true;
    loop {
        let lp = apply_temperature(&row, temperature);
        let u: f64 = rng.gen();
        let tok_id = sample_from_logprobs(&lp, u);
        output.push(tok_id as u32);
        logprobs.push(lp[tok_id]);
        if tok_id as u32 == tok::EOS {
            truncated = false;
            break;
        }
        if output.len() >= max_len {
            break;
        }
        row = scorer.push(tok_id as u32)?;
    }

    Ok(Trajectory {
        query: query.to_vec(),
        mode: mode.clone(),
        output,
        logprobs,
        truncated,
        reward: 0.0,
        seed,
    })
}

fn apply_temperature(logprob_row: &[f64], temperature: f64) -> Vec<f64> {
    if (temperature - 1.0).abs() < 1e-15 {
        return logprob_row.to_vec();
    }
    let scaled: Vec<f64> = logprob_row.iter().map(|v| v / temperature).collect();
    log_softmax_row(&scaled)
}

fn sample_from_logprobs(lp: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &l) in lp.iter().enumerate() {
        acc += l.exp();
        if u < acc {
            return i;
        }
    }
    lp.len() - 1
}

/// Per-token log-probs of a trajectory's output under `params`, conditioned
/// on the trajectory's mode token (or an override).
pub fn score_trajectory(
    params: &PolicyParams,
    traj: &Trajectory,
    mode_override: Option<&ModeTag>,
) -> Result<Vec<f64>> {
    Ok(score_with_rows(params, traj, mode_override)?.0)
}

/// As `score_trajectory`, but also returns the full next-token log-prob row
/// at every output position (the visited states), for distillation and
/// argmax-agreement diagnostics.
pub fn score_with_rows(
    params: &PolicyParams,
    traj: &Trajectory,
    mode_override: Option<&ModeTag>,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mode = mode_override.unwrap_or(&traj.mode);
    let context = build_context(mode, &traj.query);
    let total = context.len() + traj.output.len();
    if total > params.config.context_length {
        return Err(PolicyError::ContextOverflow {
            need: total,
            have: params.config.context_length,
        });
    }
    let mut scorer = SeqScorer::new(params);
    let mut row = vec![];
    for &t in &context {
        row = scorer.push(t)?;
    }
    let mut lps = Vec::with_capacity(traj.output.len());
    let mut rows = Vec::with_capacity(traj.output.len());
    for (i, &t) in traj.output.iter().enumerate() {
        if (t as usize) >= params.config.vocab_size {
            return Err(PolicyError::UnknownToken(t, params.config.vocab_size));
        }
        lps.push(row[t as usize]);
        rows.push(row.clone());
        if i + 1 < traj.output.len() {
            row = scorer.push(t)?;
        }
    }
    Ok((lps, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{init_policy, standard_modes, ModelConfig, Variant};
    use crate::tasks::gen_instance;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            context_length: 96,
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn zero_init_model_is_uniform() {
        let params = init_policy(&tiny_config(), 3).unwrap();
        let dist = next_token_dist(&params, &[tok::BOS, tok::MODE_LOW]).unwrap();
        let v = params.config.vocab_size as f64;
        for p in &dist {
            assert!((p - 1.0 / v).abs() < 1e-12);
        }
    }

    #[test]
    fn next_token_dist_is_simplex() {
        let params = init_policy(&tiny_config(), 5).unwrap();
        for seed in 0..5u64 {
            let inst = gen_instance(3, 7, seed).unwrap();
            let mut ctx = vec![tok::BOS, tok::MODE_HIGH];
            ctx.extend_from_slice(&inst.query);
            let dist = next_token_dist(&params, &ctx).unwrap();
            assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            assert!(dist.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn unknown_token_rejected() {
        let params = init_policy(&tiny_config(), 5).unwrap();
        assert!(next_token_dist(&params, &[9999]).is_err());
    }

    #[test]
    fn same_seed_same_trajectory() {
        let params = init_policy(&tiny_config(), 1).unwrap();
        let modes = standard_modes([8, 16, 24, 48]).unwrap();
        let inst = gen_instance(2, 7, 4).unwrap();
        let a = sample_trajectory(&params, &inst.query, &modes[1], 16, 1.0, 99).unwrap();
        let b = sample_trajectory(&params, &inst.query, &modes[1], 16, 1.0, 99).unwrap();
        assert_eq!(a, b);
        let c = sample_trajectory(&params, &inst.query, &modes[1], 16, 1.0, 100).unwrap();
        assert!(a.output != c.output || a.logprobs != c.logprobs);
    }

    #[test]
    fn truncation_flag_and_eos_are_exclusive() {
        let params = init_policy(&tiny_config(), 1).unwrap();
        let modes = standard_modes([4, 8, 16, 32]).unwrap();
        let inst = gen_instance(2, 7, 4).unwrap();
        for seed in 0..30 {
            let t = sample_trajectory(&params, &inst.query, &modes[0], 4, 1.0, seed).unwrap();
            t.check_invariants();
            assert!(t.output.len() <= 4);
        }
    }

    #[test]
    fn context_overflow_rejected_before_sampling() {
        let params = init_policy(&tiny_config(), 1).unwrap();
        let modes = standard_modes([8, 16, 24, 200]).unwrap();
        let inst = gen_instance(2, 7, 4).unwrap();
        let err = sample_trajectory(&params, &inst.query, &modes[3], 200, 1.0, 7);
        assert!(matches!(err, Err(PolicyError::ContextOverflow { .. })));
    }

    #[test]
    fn score_matches_recorded_logprobs() {
        // Self-consistency oracle: stepwise scorer must reproduce what
        // sampling recorded, for both variants.
        for variant in [Variant::Transformer, Variant::MlpWindow { window: 8 }] {
            let cfg = ModelConfig {
                variant,
                ..tiny_config()
            };
            let mut params = init_policy(&cfg, 2).unwrap();
            // Perturb so the distribution is far from uniform.
            let mut rng = crate::seeding::rng_from(11, "perturb", 0);
            for v in &mut params.flat {
                *v += 0.05 * rng.gen::<f64>();
            }
            let modes = standard_modes([8, 16, 24, 48]).unwrap();
            let inst = gen_instance(3, 7, 8).unwrap();
            for seed in 0..10 {
                let t =
                    sample_trajectory(&params, &inst.query, &modes[2], 24, 1.0, seed).unwrap();
                let scored = score_trajectory(&params, &t, None).unwrap();
                assert_eq!(scored.len(), t.logprobs.len());
                for (s, r) in scored.iter().zip(&t.logprobs) {
                    assert!((s - r).abs() < 1e-10, "{s} vs {r}");
                }
                assert!(scored.iter().all(|&lp| lp <= 0.0));
            }
        }
    }

    #[test]
    fn exp_of_scores_matches_next_token_dist() {
        let params = init_policy(&tiny_config(), 9).unwrap();
        let modes = standard_modes([8, 16, 24, 48]).unwrap();
        let inst = gen_instance(2, 7, 3).unwrap();
        let t = sample_trajectory(&params, &inst.query, &modes[1], 12, 1.0, 5).unwrap();
        let (lps, _) = score_with_rows(&params, &t, None).unwrap();
        let mut ctx = build_context(&modes[1], &inst.query);
        for (i, &otok) in t.output.iter().enumerate() {
            let dist = next_token_dist(&params, &ctx).unwrap();
            assert!((lps[i].exp() - dist[otok as usize]).abs() < 1e-10);
            ctx.push(otok);
        }
    }

    #[test]
    fn temperature_one_is_identity() {
        let row = vec![-1.2, -0.3, -2.0];
        assert_eq!(apply_temperature(&row, 1.0), row);
        // Dividing by temperature 1 leaves the distribution unchanged even
        // through the renormalization path.
        let renorm = {
            let scaled: Vec<f64> = row.iter().map(|v| v / 1.0).collect();
            log_softmax_row(&scaled)
        };
        for (a, b) in renorm.iter().zip(&row) {
            // row itself is not normalized; compare distributions instead.
            let _ = (a, b);
        }
        let p1: Vec<f64> = apply_temperature(&row, 1.0).iter().map(|v| v.exp()).collect();
        let p2: Vec<f64> = renorm.iter().map(|v| v.exp()).collect();
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        for (a, b) in p1.iter().zip(&p2) {
            assert!((a / z - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mode_override_changes_conditioning() {
        let cfg = tiny_config();
        let mut params = init_policy(&cfg, 2).unwrap();
        let mut rng = crate::seeding::rng_from(13, "perturb", 0);
        for v in &mut params.flat {
            *v += 0.1 * rng.gen::<f64>();
        }
        let modes = standard_modes([8, 16, 24, 48]).unwrap();
        let inst = gen_instance(2, 7, 3).unwrap();
        let t = sample_trajectory(&params, &inst.query, &modes[0], 8, 1.0, 5).unwrap();
        let base = score_trajectory(&params, &t, None).unwrap();
        let over = score_trajectory(&params, &t, Some(&modes[3])).unwrap();
        assert!(base.iter().zip(&over).any(|(a, b)| (a - b).abs() > 1e-12));
    }
}
