//! Shared-trunk two-head network over a flat parameter vector.
//!
//! ```text
//! h      = tanh(W1 x + b1)
//! macro  = Wmac h + bmac      (sub-goal logits)
//! micro  = Wmic h + bmic      (action logits)
//! ```
//!
//! Forward passes return a [`TokenForward`] holding everything backward
//! needs, so gradients are computed without re-running the network.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub input: usize,
    pub hidden: usize,
    pub n_macro: usize,
    pub n_micro: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Macro,
    Micro,
}

/// Named parameter blocks, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    TrunkWeight,
    TrunkBias,
    MacroWeight,
    MacroBias,
    MicroWeight,
    MicroBias,
}

impl Block {
    pub const ALL: [Block; 6] = [
        Block::TrunkWeight,
        Block::TrunkBias,
        Block::MacroWeight,
        Block::MacroBias,
        Block::MicroWeight,
        Block::MicroBias,
    ];
}

impl Shape {
    fn block_len(&self, block: Block) -> usize {
        match block {
            Block::TrunkWeight => self.hidden * self.input,
            Block::TrunkBias => self.hidden,
            Block::MacroWeight => self.n_macro * self.hidden,
            Block::MacroBias => self.n_macro,
            Block::MicroWeight => self.n_micro * self.hidden,
            Block::MicroBias => self.n_micro,
        }
    }

    pub fn range(&self, block: Block) -> std::ops::Range<usize> {
        let start: usize = Block::ALL
            .iter()
            .take_while(|&&b| b != block)
            .map(|&b| self.block_len(b))
            .sum();
        start..start + self.block_len(block)
    }

    pub fn num_params(&self) -> usize {
        Block::ALL.iter().map(|&b| self.block_len(b)).sum()
    }

    pub fn head_size(&self, head: Head) -> usize {
        match head {
            Head::Macro => self.n_macro,
            Head::Micro => self.n_micro,
        }
    }

    fn head_blocks(head: Head) -> (Block, Block) {
        match head {
            Head::Macro => (Block::MacroWeight, Block::MacroBias),
            Head::Micro => (Block::MicroWeight, Block::MicroBias),
        }
    }
}

/// Bit set of admissible output tokens for one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Allowed(pub u32);

impl Allowed {
    pub fn all(n: usize) -> Self {
        assert!(n <= 32, "vocabulary too large for Allowed");
        Allowed(if n == 32 { u32::MAX } else { (1u32 << n) - 1 })
    }

    pub fn only(i: usize) -> Self {
        Allowed(1 << i)
    }

    pub fn without(self, i: usize) -> Self {
        Allowed(self.0 & !(1 << i))
    }

    pub fn and(self, other: Allowed) -> Self {
        Allowed(self.0 & other.0)
    }

    pub fn contains(self, i: usize) -> bool {
        self.0 >> i & 1 == 1
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

/// Recorded forward computation for a single emitted token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenForward {
    pub head: Head,
    pub input: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
    pub allowed: Allowed,
    /// Log-softmax over the admissible tokens; `-inf` elsewhere.
    pub log_probs: Vec<f64>,
    pub chosen: usize,
}

impl TokenForward {
    pub fn logp(&self) -> f64 {
        self.log_probs[self.chosen]
    }

    /// Argmax over admissible tokens, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax_allowed(&self.logits, self.allowed)
    }
}

pub fn argmax_allowed(logits: &[f64], allowed: Allowed) -> usize {
    let mut best = usize::MAX;
    for (i, &z) in logits.iter().enumerate() {
        if allowed.contains(i) && (best == usize::MAX || z > logits[best]) {
            best = i;
        }
    }
    assert!(best != usize::MAX, "empty admissible set");
    best
}

/// Numerically stable log-softmax restricted to `allowed`.
pub fn log_softmax(logits: &[f64], allowed: Allowed) -> Vec<f64> {
    let max = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| allowed.contains(i))
        .map(|(_, &z)| z)
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| allowed.contains(i))
        .map(|(_, &z)| (z - max).exp())
        .sum();
    let lse = max + sum.ln();
    logits
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            if allowed.contains(i) {
                z - lse
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect()
}

/// Run trunk and one head. `chosen` is filled in by the caller.
pub fn forward(shape: &Shape, theta: &[f64], head: Head, input: &[f64], allowed: Allowed) -> TokenForward {
    assert_eq!(input.len(), shape.input, "input width");
    assert!(!allowed.is_empty(), "empty admissible set");
    let w1 = &theta[shape.range(Block::TrunkWeight)];
    let b1 = &theta[shape.range(Block::TrunkBias)];
    let hidden: Vec<f64> = (0..shape.hidden)
        .map(|j| {
            let row = &w1[j * shape.input..(j + 1) * shape.input];
            let a = b1[j] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
            a.tanh()
        })
        .collect();
    let (wb, bb) = Shape::head_blocks(head);
    let w = &theta[shape.range(wb)];
    let b = &theta[shape.range(bb)];
    let logits: Vec<f64> = (0..shape.head_size(head))
        .map(|k| {
            let row = &w[k * shape.hidden..(k + 1) * shape.hidden];
            b[k] + row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>()
        })
        .collect();
    let log_probs = log_softmax(&logits, allowed);
    TokenForward {
        head,
        input: input.to_vec(),
        hidden,
        logits,
        allowed,
        log_probs,
        chosen: 0,
    }
}

/// Accumulate `weight * d logp(chosen) / d theta` into `grad`.
pub fn accumulate_grad(shape: &Shape, theta: &[f64], rec: &TokenForward, weight: f64, grad: &mut [f64]) {
    if weight == 0.0 {
        return;
    }
    let n_out = shape.head_size(rec.head);
    // d logp / d logit_k = 1[k = chosen] - p_k over admissible tokens
    let g_logits: Vec<f64> = (0..n_out)
        .map(|k| {
            if !rec.allowed.contains(k) {
                return 0.0;
            }
            let indicator = if k == rec.chosen { 1.0 } else { 0.0 };
            weight * (indicator - rec.log_probs[k].exp())
        })
        .collect();

    let (wb, bb) = Shape::head_blocks(rec.head);
    let w_range = shape.range(wb);
    let b_range = shape.range(bb);
    let mut g_hidden = vec![0.0; shape.hidden];
    for (k, &gk) in g_logits.iter().enumerate() {
        if gk == 0.0 {
            continue;
        }
        let row = w_range.start + k * shape.hidden;
        for j in 0..shape.hidden {
            grad[row + j] += gk * rec.hidden[j];
            g_hidden[j] += gk * theta[row + j];
        }
        grad[b_range.start + k] += gk;
    }

    let w1 = shape.range(Block::TrunkWeight).start;
    let b1 = shape.range(Block::TrunkBias).start;
    for j in 0..shape.hidden {
        let g_pre = g_hidden[j] * (1.0 - rec.hidden[j] * rec.hidden[j]);
        if g_pre == 0.0 {
            continue;
        }
        let row = w1 + j * shape.input;
        for (i, &x) in rec.input.iter().enumerate() {
            grad[row + i] += g_pre * x;
        }
        grad[b1 + j] += g_pre;
    }
}
