//! Chain-arithmetic environment: verifiable modular arithmetic chains with a
//! binary outcome reward.
//!
//! A query is `a1 op1 a2 ... op_{n-1} an (mod p)`; the answer is its
//! left-to-right evaluation mod p. The canonical scratchpad works the chain
//! once (one compute step per operation), then re-derives it in two
//! verification passes before committing the answer, so its length grows by a
//! fixed 33 tokens per operation. Occasionally one of the three passes carries
//! a propagated slip while the other two stay clean and the final answer sides
//! with the majority — the warm-started policy therefore learns that extra
//! verification passes are what make the committed answer trustworthy.
//! Only the answer is rewarded: everything before the delimiter is ignored.

use crate::seeding::{derive_seed, rng_from};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

pub mod tok {
    //! Fixed vocabulary. Values 0..=13 live at `VAL_BASE + v` so every prime
    //! modulus up to 13 keeps single-token numerals.
    pub const BOS: u32 = 0;
    pub const EOS: u32 = 1;
    pub const ANS: u32 = 2;
    pub const MODE_LOW: u32 = 3;
    pub const MODE_MID: u32 = 4;
    pub const MODE_HIGH: u32 = 5;
    pub const MODE_XHIGH: u32 = 6;
    pub const PLUS: u32 = 7;
    pub const MINUS: u32 = 8;
    pub const TIMES: u32 = 9;
    pub const MOD: u32 = 10;
    pub const STEP: u32 = 11;
    pub const COLON: u32 = 12;
    pub const CHECK: u32 = 13;
    pub const OF: u32 = 14;
    pub const OK: u32 = 15;
    pub const SEP: u32 = 16;
    pub const EQ: u32 = 17;
    pub const VAL_BASE: u32 = 18;
    pub const MAX_VALUE: u32 = 13;
    pub const VOCAB_SIZE: usize = (VAL_BASE + MAX_VALUE + 1) as usize;

    pub fn val(v: u8) -> u32 {
        debug_assert!(u32::from(v) <= MAX_VALUE);
        VAL_BASE + u32::from(v)
    }

    pub fn as_val(t: u32) -> Option<u8> {
        if (VAL_BASE..=VAL_BASE + MAX_VALUE).contains(&t) {
            Some((t - VAL_BASE) as u8)
        } else {
            None
        }
    }
}

/// Tokens added per operation by the canonical trace (compute step + two
/// verification steps) and the flat tail (`ANS v EOS`). Trace length is
/// `TRACE_ALPHA * n + TRACE_BETA`.
pub const TRACE_ALPHA: i64 = 33;
pub const TRACE_BETA: i64 = -30;
const SLIP_RATE: f64 = 0.25;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("modulus {0} is not a prime in 2..=13")]
    InvalidModulus(u8),
    #[error("chain length must be >= 1, got {0}")]
    InvalidChainLength(usize),
    #[error("split specification invalid: {0}")]
    BadSplitSpec(String),
    #[error("could not draw {requested} unique queries for split {split} (space exhausted after {attempts} attempts)")]
    SpaceExhausted {
        split: &'static str,
        requested: usize,
        attempts: usize,
    },
    #[error("jsonl: {0}")]
    Io(#[from] std::io::Error),
    #[error("jsonl parse: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpSym {
    Plus,
    Minus,
    Times,
}

impl OpSym {
    pub fn token(self) -> u32 {
        match self {
            OpSym::Plus => tok::PLUS,
            OpSym::Minus => tok::MINUS,
            OpSym::Times => tok::TIMES,
        }
    }

    pub fn apply(self, a: u8, b: u8, p: u8) -> u8 {
        let (a, b, p) = (i64::from(a), i64::from(b), i64::from(p));
        let r = match self {
            OpSym::Plus => (a + b).rem_euclid(p),
            OpSym::Minus => (a - b).rem_euclid(p),
            OpSym::Times => (a * b).rem_euclid(p),
        };
        r as u8
    }
}

/// One chain-arithmetic problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub query: Vec<u32>,
    pub n: usize,
    pub p: u8,
    pub answer: u8,
    pub operands: Vec<u8>,
    pub ops: Vec<OpSym>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    HeldOutEasy,
    HeldOutHard,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskDataset {
    pub train: Vec<Instance>,
    pub held_out_easy: Vec<Instance>,
    pub held_out_hard: Vec<Instance>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub modulus: u8,
    pub n_min: usize,
    pub n_max: usize,
    pub hard_min_n: usize,
    pub train_size: usize,
    pub easy_size: usize,
    pub hard_size: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            modulus: 7,
            n_min: 1,
            n_max: 8,
            hard_min_n: 6,
            train_size: 512,
            easy_size: 100,
            hard_size: 60,
        }
    }
}

fn is_valid_modulus(p: u8) -> bool {
    matches!(p, 2 | 3 | 5 | 7 | 11 | 13)
}

/// Uniform random instance: operands in [0, p), operators from {+, -, x}.
pub fn gen_instance(n: usize, p: u8, seed: u64) -> Result<Instance, TaskError> {
    if !is_valid_modulus(p) {
        return Err(TaskError::InvalidModulus(p));
    }
    if n < 1 {
        return Err(TaskError::InvalidChainLength(n));
    }
    let mut rng = rng_from(seed, "instance", 0);
    let operands: Vec<u8> = (0..n).map(|_| rng.gen_range(0..p)).collect();
    let ops: Vec<OpSym> = (0..n.saturating_sub(1))
        .map(|_| match rng.gen_range(0..3u8) {
            0 => OpSym::Plus,
            1 => OpSym::Minus,
            _ => OpSym::Times,
        })
        .collect();
    Ok(Instance::from_parts(operands, ops, p))
}

impl Instance {
    pub fn from_parts(operands: Vec<u8>, ops: Vec<OpSym>, p: u8) -> Self {
        assert_eq!(ops.len() + 1, operands.len());
        let answer = eval_chain(&operands, &ops, p);
        let mut query = Vec::with_capacity(2 * operands.len() + 1);
        query.push(tok::val(operands[0]));
        for (op, a) in ops.iter().zip(&operands[1..]) {
            query.push(op.token());
            query.push(tok::val(*a));
        }
        query.push(tok::MOD);
        query.push(tok::val(p));
        Self {
            n: operands.len(),
            p,
            answer,
            query,
            operands,
            ops,
        }
    }

    /// Stable identity used for split disjointness.
    pub fn query_key(&self) -> Vec<u32> {
        self.query.clone()
    }
}

fn eval_chain(operands: &[u8], ops: &[OpSym], p: u8) -> u8 {
    let mut acc = operands[0] % p;
    for (op, a) in ops.iter().zip(&operands[1..]) {
        acc = op.apply(acc, *a, p);
    }
    acc
}

/// Binary outcome reward. 1 iff the output contains exactly one answer
/// delimiter, followed by exactly the true numeral and then EOS with nothing
/// after it, and no EOS appears earlier. Never panics on malformed input.
pub fn verify(instance: &Instance, output: &[u32]) -> u8 {
    let delims: Vec<usize> = output
        .iter()
        .enumerate()
        .filter(|(_, &t)| t == tok::ANS)
        .map(|(i, _)| i)
        .collect();
    if delims.len() != 1 {
        return 0;
    }
    let d = delims[0];
    if output[..d].iter().any(|&t| t == tok::EOS) {
        return 0;
    }
    let tail = &output[d + 1..];
    if tail.len() != 2 {
        return 0;
    }
    match (tok::as_val(tail[0]), tail[1]) {
        (Some(v), tok::EOS) if v == instance.answer => 1,
        _ => 0,
    }
}

#[derive(Clone, Copy)]
enum Pass {
    Compute,
    Verify(u8),
}

/// Canonical scratchpad: one compute step per operation, two verification
/// passes, then `ANS answer EOS`. Deterministic per instance; in a fixed
/// fraction of instances one pass carries a propagated slip (the other two
/// agree with the committed answer). Always satisfies `verify == 1`.
pub fn reference_trace(instance: &Instance) -> Vec<u32> {
    let m = instance.n - 1;
    let mut out = Vec::with_capacity((TRACE_ALPHA * instance.n as i64 + TRACE_BETA) as usize);
    if m > 0 {
        // Slip placement is a pure function of the query.
        let h = derive_seed(0x5EED_7ACE, "trace-slip", query_hash(&instance.query));
        let slip_roll = (h % 10_000) as f64 / 10_000.0;
        let slipped_pass = ((h >> 16) % 3) as u8;
        let slip_step = ((h >> 32) as usize) % m;
        let slip_offset = 1 + ((h >> 48) % (u64::from(instance.p) - 1)) as u8;
        let slip = if slip_roll < SLIP_RATE {
            Some((slipped_pass, slip_step, slip_offset))
        } else {
            None
        };

        for (pass_no, pass) in [Pass::Compute, Pass::Verify(1), Pass::Verify(2)]
            .into_iter()
            .enumerate()
        {
            let mut acc = instance.operands[0] % instance.p;
            for j in 0..m {
                let a = instance.operands[j + 1];
                let op = instance.ops[j];
                let mut res = op.apply(acc, a, instance.p);
                if let Some((sp, ss, off)) = slip {
                    if usize::from(sp) == pass_no && ss == j {
                        res = (res + off) % instance.p;
                    }
                }
                let jv = (j + 1) as u8;
                match pass {
                    Pass::Compute => {
                        out.extend_from_slice(&[
                            tok::STEP,
                            tok::val(jv),
                            tok::COLON,
                            tok::val(acc),
                            op.token(),
                            tok::val(a),
                            tok::EQ,
                            tok::val(res),
                            tok::SEP,
                        ]);
                    }
                    Pass::Verify(_) => {
                        out.extend_from_slice(&[
                            tok::CHECK,
                            tok::val(jv),
                            tok::OF,
                            tok::val(m as u8),
                            tok::COLON,
                            tok::val(acc),
                            op.token(),
                            tok::val(a),
                            tok::EQ,
                            tok::val(res),
                            tok::OK,
                            tok::SEP,
                        ]);
                    }
                }
                acc = res;
            }
        }
    }
    out.extend_from_slice(&[tok::ANS, tok::val(instance.answer), tok::EOS]);
    out
}

fn query_hash(query: &[u32]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &t in query {
        h ^= u64::from(t);
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

/// Deterministic dataset with query-disjoint splits. Held-out splits are
/// drawn first so they keep their difficulty mixture; the train split absorbs
/// any small-n exhaustion (n=1 has only p distinct queries).
pub fn make_dataset(cfg: &TaskConfig, seed: u64) -> Result<TaskDataset, TaskError> {
    if !is_valid_modulus(cfg.modulus) {
        return Err(TaskError::InvalidModulus(cfg.modulus));
    }
    if cfg.n_min < 1 || cfg.n_min > cfg.n_max {
        return Err(TaskError::BadSplitSpec(format!(
            "n range [{}, {}] is empty or invalid",
            cfg.n_min, cfg.n_max
        )));
    }
    if cfg.hard_min_n <= cfg.n_min || cfg.hard_min_n > cfg.n_max {
        return Err(TaskError::BadSplitSpec(format!(
            "hard_min_n {} must lie in ({}, {}]",
            cfg.hard_min_n, cfg.n_min, cfg.n_max
        )));
    }
    let mut seen: HashSet<Vec<u32>> = HashSet::new();
    let mut draw = |split: &'static str,
                    count: usize,
                    n_lo: usize,
                    n_hi: usize,
                    seen: &mut HashSet<Vec<u32>>|
     -> Result<Vec<Instance>, TaskError> {
        let mut rng = rng_from(seed, split, 0);
        let mut out = Vec::with_capacity(count);
        let mut attempts = 0usize;
        let max_attempts = count * 200 + 1000;
        while out.len() < count {
            attempts += 1;
            if attempts > max_attempts {
                return Err(TaskError::SpaceExhausted {
                    split,
                    requested: count,
                    attempts,
                });
            }
            let n = rng.gen_range(n_lo..=n_hi);
            let inst_seed: u64 = rng.gen();
            let inst = gen_instance(n, cfg.modulus, inst_seed)?;
            if seen.insert(inst.query_key()) {
                out.push(inst);
            }
        }
        Ok(out)
    };

    let held_out_easy = draw(
        "split:held-out-easy",
        cfg.easy_size,
        cfg.n_min,
        cfg.hard_min_n - 1,
        &mut seen,
    )?;
    let held_out_hard = draw(
        "split:held-out-hard",
        cfg.hard_size,
        cfg.hard_min_n,
        cfg.n_max,
        &mut seen,
    )?;
    let train = draw("split:train", cfg.train_size, cfg.n_min, cfg.n_max, &mut seen)?;
    Ok(TaskDataset {
        train,
        held_out_easy,
        held_out_hard,
        seed,
    })
}

#[derive(Serialize, Deserialize)]
struct JsonlRow {
    query: Vec<u32>,
    n: usize,
    p: u8,
    answer: u8,
    split: Split,
}

impl TaskDataset {
    pub fn split(&self, s: Split) -> &[Instance] {
        match s {
            Split::Train => &self.train,
            Split::HeldOutEasy => &self.held_out_easy,
            Split::HeldOutHard => &self.held_out_hard,
        }
    }

    pub fn export_jsonl(&self, path: &Path) -> Result<(), TaskError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (split, insts) in [
            (Split::Train, &self.train),
            (Split::HeldOutEasy, &self.held_out_easy),
            (Split::HeldOutHard, &self.held_out_hard),
        ] {
            for inst in insts {
                let row = JsonlRow {
                    query: inst.query.clone(),
                    n: inst.n,
                    p: inst.p,
                    answer: inst.answer,
                    split,
                };
                serde_json::to_writer(&mut f, &row)?;
                f.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    pub fn import_jsonl(path: &Path, seed: u64) -> Result<Self, TaskError> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut ds = TaskDataset {
            train: vec![],
            held_out_easy: vec![],
            held_out_hard: vec![],
            seed,
        };
        for line in f.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: JsonlRow = serde_json::from_str(&line)?;
            let inst = parse_query(&row.query, row.p).ok_or_else(|| {
                TaskError::BadSplitSpec(format!("unparseable query tokens {:?}", row.query))
            })?;
            match row.split {
                Split::Train => ds.train.push(inst),
                Split::HeldOutEasy => ds.held_out_easy.push(inst),
                Split::HeldOutHard => ds.held_out_hard.push(inst),
            }
        }
        Ok(ds)
    }
}

fn parse_query(query: &[u32], p: u8) -> Option<Instance> {
    if query.len() < 3 || query.len() % 2 != 1 {
        return None;
    }
    let body = &query[..query.len() - 2];
    let mut operands = vec![tok::as_val(body[0])?];
    let mut ops = Vec::new();
    let mut i = 1;
    while i < body.len() {
        let op = match body[i] {
            tok::PLUS => OpSym::Plus,
            tok::MINUS => OpSym::Minus,
            tok::TIMES => OpSym::Times,
            _ => return None,
        };
        ops.push(op);
        operands.push(tok::as_val(*body.get(i + 1)?)?);
        i += 2;
    }
    Some(Instance::from_parts(operands, ops, p))
}

/// Human-readable rendering for logs and reports.
pub fn render_tokens(tokens: &[u32]) -> String {
    let mut parts = Vec::with_capacity(tokens.len());
    for &t in tokens {
        let s = match t {
            tok::BOS => "<bos>".to_string(),
            tok::EOS => "<eos>".to_string(),
            tok::ANS => "=>".to_string(),
            tok::MODE_LOW => "<low>".to_string(),
            tok::MODE_MID => "<mid>".to_string(),
            tok::MODE_HIGH => "<high>".to_string(),
            tok::MODE_XHIGH => "<xhigh>".to_string(),
            tok::PLUS => "+".to_string(),
            tok::MINUS => "-".to_string(),
            tok::TIMES => "x".to_string(),
            tok::MOD => "mod".to_string(),
            tok::STEP => "step".to_string(),
            tok::COLON => ":".to_string(),
            tok::CHECK => "check".to_string(),
            tok::OF => "of".to_string(),
            tok::OK => "ok".to_string(),
            tok::SEP => ";".to_string(),
            tok::EQ => "=".to_string(),
            other => match tok::as_val(other) {
                Some(v) => v.to_string(),
                None => format!("<?{other}>"),
            },
        };
        parts.push(s);
    }
    parts.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(inst: &Instance) -> u8 {
        // Independent left-to-right oracle.
        let p = i64::from(inst.p);
        let mut acc = i64::from(inst.operands[0]).rem_euclid(p);
        for (op, &a) in inst.ops.iter().zip(&inst.operands[1..]) {
            let b = i64::from(a);
            acc = match op {
                OpSym::Plus => (acc + b).rem_euclid(p),
                OpSym::Minus => (acc - b).rem_euclid(p),
                OpSym::Times => (acc * b).rem_euclid(p),
            };
        }
        acc as u8
    }

    #[test]
    fn single_operand_instance() {
        let inst = gen_instance(1, 7, 42).unwrap();
        assert_eq!(inst.query.len(), 3);
        assert_eq!(inst.answer, inst.operands[0] % 7);
    }

    #[test]
    fn ground_truth_matches_brute_force() {
        for seed in 0..200 {
            let n = 1 + (seed as usize % 8);
            let inst = gen_instance(n, 11, seed).unwrap();
            assert_eq!(inst.answer, brute_force(&inst), "seed {seed}");
        }
    }

    #[test]
    fn fixed_seed_n3_p11_hand_checked() {
        let inst = gen_instance(3, 11, 7).unwrap();
        assert_eq!(inst.answer, brute_force(&inst));
        // Determinism of the draw itself.
        let again = gen_instance(3, 11, 7).unwrap();
        assert_eq!(inst, again);
    }

    #[test]
    fn invalid_modulus_rejected() {
        assert!(gen_instance(3, 9, 1).is_err());
        assert!(gen_instance(3, 14, 1).is_err());
        assert!(gen_instance(0, 7, 1).is_err());
    }

    #[test]
    fn verify_accepts_reference_trace() {
        for seed in 0..300 {
            let n = 1 + (seed as usize % 8);
            let inst = gen_instance(n, 7, seed).unwrap();
            let trace = reference_trace(&inst);
            assert_eq!(verify(&inst, &trace), 1, "seed {seed} n {n}");
        }
    }

    #[test]
    fn verify_rejects_missing_delimiter() {
        let inst = gen_instance(2, 7, 3).unwrap();
        let out = vec![tok::val(inst.answer), tok::EOS];
        assert_eq!(verify(&inst, &out), 0);
    }

    #[test]
    fn verify_rejects_trailing_junk_after_answer() {
        let inst = gen_instance(2, 7, 3).unwrap();
        let out = vec![
            tok::ANS,
            tok::val(inst.answer),
            tok::val(0),
            tok::EOS,
        ];
        assert_eq!(verify(&inst, &out), 0);
    }

    #[test]
    fn verify_rejects_double_delimiter_and_wrong_value() {
        let inst = gen_instance(2, 7, 9).unwrap();
        let wrong = (inst.answer + 1) % inst.p;
        assert_eq!(verify(&inst, &[tok::ANS, tok::val(wrong), tok::EOS]), 0);
        assert_eq!(
            verify(
                &inst,
                &[tok::ANS, tok::ANS, tok::val(inst.answer), tok::EOS]
            ),
            0
        );
        // Arbitrary garbage tokens must not panic.
        assert_eq!(verify(&inst, &[9999, 12345]), 0);
        assert_eq!(verify(&inst, &[]), 0);
    }

    #[test]
    fn trace_length_is_affine_in_n() {
        for n in 1..=8usize {
            for seed in 0..20 {
                let inst = gen_instance(n, 7, seed * 31 + n as u64).unwrap();
                let trace = reference_trace(&inst);
                let expected = TRACE_ALPHA * n as i64 + TRACE_BETA;
                assert_eq!(trace.len() as i64, expected, "n {n} seed {seed}");
            }
        }
        // n=1: delimiter + answer + EOS only.
        let inst = gen_instance(1, 7, 5).unwrap();
        assert_eq!(reference_trace(&inst).len(), 3);
        assert_eq!(reference_trace(&inst)[0], tok::ANS);
    }

    #[test]
    fn some_traces_carry_a_disagreeing_pass() {
        // The slip machinery must actually fire, and slipped traces still verify.
        let mut slipped = 0;
        let mut total = 0;
        for seed in 0..200 {
            let inst = gen_instance(5, 7, seed).unwrap();
            let trace = reference_trace(&inst);
            assert_eq!(verify(&inst, &trace), 1);
            // Collect the three pass finals: values before the SEP that closes
            // each pass's last step.
            let finals: Vec<u8> = collect_pass_finals(&trace, inst.n - 1);
            assert_eq!(finals.len(), 3);
            let agree_all = finals[0] == finals[1] && finals[1] == finals[2];
            if !agree_all {
                slipped += 1;
                // Majority must equal the committed answer.
                let maj = majority(&finals);
                assert_eq!(maj, inst.answer, "seed {seed}");
            }
            total += 1;
        }
        let rate = f64::from(slipped) / f64::from(total);
        assert!(
            (0.1..0.45).contains(&rate),
            "slip rate {rate} out of expected band"
        );
    }

    fn collect_pass_finals(trace: &[u32], m: usize) -> Vec<u8> {
        // compute pass: steps of 9 tokens; verify passes: steps of 12.
        let core_end = 9 * m;
        let v1_end = core_end + 12 * m;
        let v2_end = v1_end + 12 * m;
        let f0 = tok::as_val(trace[core_end - 2]).unwrap();
        let f1 = tok::as_val(trace[v1_end - 3]).unwrap();
        let f2 = tok::as_val(trace[v2_end - 3]).unwrap();
        vec![f0, f1, f2]
    }

    fn majority(v: &[u8]) -> u8 {
        if v[0] == v[1] || v[0] == v[2] {
            v[0]
        } else {
            v[1]
        }
    }

    #[test]
    fn dataset_counts_and_disjointness() {
        let cfg = TaskConfig {
            train_size: 100,
            easy_size: 50,
            hard_size: 30,
            ..TaskConfig::default()
        };
        let ds = make_dataset(&cfg, 11).unwrap();
        assert_eq!(ds.train.len(), 100);
        assert_eq!(ds.held_out_easy.len(), 50);
        assert_eq!(ds.held_out_hard.len(), 30);
        let mut all: HashSet<Vec<u32>> = HashSet::new();
        for inst in ds
            .train
            .iter()
            .chain(&ds.held_out_easy)
            .chain(&ds.held_out_hard)
        {
            assert!(all.insert(inst.query_key()), "duplicate query across splits");
        }
        assert!(ds.held_out_hard.iter().all(|i| i.n >= cfg.hard_min_n));
        assert!(ds.held_out_easy.iter().all(|i| i.n < cfg.hard_min_n));
        // Determinism.
        let ds2 = make_dataset(&cfg, 11).unwrap();
        assert_eq!(ds.train, ds2.train);
    }

    #[test]
    fn bad_split_spec_rejected() {
        let cfg = TaskConfig {
            hard_min_n: 1,
            ..TaskConfig::default()
        };
        assert!(make_dataset(&cfg, 1).is_err());
        let cfg = TaskConfig {
            hard_min_n: 9,
            ..TaskConfig::default()
        };
        assert!(make_dataset(&cfg, 1).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let cfg = TaskConfig {
            train_size: 20,
            easy_size: 10,
            hard_size: 5,
            ..TaskConfig::default()
        };
        let ds = make_dataset(&cfg, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.jsonl");
        ds.export_jsonl(&path).unwrap();
        let loaded = TaskDataset::import_jsonl(&path, 3).unwrap();
        assert_eq!(ds.train, loaded.train);
        assert_eq!(ds.held_out_easy, loaded.held_out_easy);
        assert_eq!(ds.held_out_hard, loaded.held_out_hard);
    }
}
