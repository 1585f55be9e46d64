//! Slot-wise multi-encoder: a private bidirectional LSTM per slot and one
//! shared across slots, mixed by a per-slot gate, followed by private and
//! shared self-attention.

use rand::Rng;

use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct LstmIds {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
}

impl LstmIds {
    pub fn register(store: &mut ParamStore, name: &str, d_in: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        LstmIds {
            wx: store.add_xavier(format!("{name}.wx"), d_in, 4 * hidden, rng),
            wh: store.add_xavier(format!("{name}.wh"), hidden, 4 * hidden, rng),
            b: store.add_zeros(format!("{name}.b"), 1, 4 * hidden),
        }
    }
}

/// Forward and backward halves of `d_rnn / 2` each, concatenated and
/// projected back to `d_rnn`.
#[derive(Debug, Clone, Copy)]
pub struct BiLstmIds {
    pub fwd: LstmIds,
    pub bwd: LstmIds,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
}

impl BiLstmIds {
    pub fn register(store: &mut ParamStore, name: &str, d_in: usize, d_rnn: usize, rng: &mut impl Rng) -> Self {
        let half = d_rnn / 2;
        BiLstmIds {
            fwd: LstmIds::register(store, &format!("{name}.fwd"), d_in, half, rng),
            bwd: LstmIds::register(store, &format!("{name}.bwd"), d_in, half, rng),
            proj_w: store.add_xavier(format!("{name}.proj.w"), d_rnn, d_rnn, rng),
            proj_b: store.add_zeros(format!("{name}.proj.b"), 1, d_rnn),
        }
    }
}

/// Attention scorer `z_i = H_i · w + b`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionIds {
    pub w: ParamId,
    pub b: ParamId,
}

impl AttentionIds {
    fn register(store: &mut ParamStore, name: &str, d_rnn: usize, rng: &mut impl Rng) -> Self {
        AttentionIds {
            w: store.add_xavier(format!("{name}.w"), d_rnn, 1, rng),
            b: store.add_zeros(format!("{name}.b"), 1, 1),
        }
    }
}

/// One multi-encoder: per-slot private parts, one shared part, per-slot gates.
#[derive(Debug, Clone)]
pub struct EncoderIds {
    pub private: Vec<BiLstmIds>,
    pub private_att: Vec<AttentionIds>,
    pub shared: BiLstmIds,
    pub shared_att: AttentionIds,
    /// Raw gate per slot; `β = logistic(raw)`.
    pub gate: Vec<ParamId>,
}

impl EncoderIds {
    pub fn register(store: &mut ParamStore, prefix: &str, slots: &[String], d_emb: usize, d_rnn: usize, rng: &mut impl Rng) -> Self {
        let mut private = Vec::new();
        let mut private_att = Vec::new();
        let mut gate = Vec::new();
        for s in slots {
            private.push(BiLstmIds::register(store, &format!("{prefix}.private.{s}"), d_emb, d_rnn, rng));
            private_att.push(AttentionIds::register(store, &format!("{prefix}.private.{s}.att"), d_rnn, rng));
            gate.push(store.add_zeros(format!("{prefix}.gate.{s}"), 1, 1));
        }
        EncoderIds {
            private,
            private_att,
            shared: BiLstmIds::register(store, &format!("{prefix}.shared"), d_emb, d_rnn, rng),
            shared_att: AttentionIds::register(store, &format!("{prefix}.shared.att"), d_rnn, rng),
            gate,
        }
    }
}

/// Which encoder paths are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderPaths {
    pub private: bool,
    pub shared: bool,
    pub self_attention: bool,
}

impl Default for EncoderPaths {
    fn default() -> Self {
        EncoderPaths {
            private: true,
            shared: true,
            self_attention: true,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    /// `n × d_rnn`
    pub h: Var,
    /// `1 × d_rnn`
    pub c: Var,
}

pub fn bilstm(g: &mut Graph, store: &ParamStore, ids: &BiLstmIds, x: Var) -> Var {
    let run = |g: &mut Graph, l: &LstmIds, reverse: bool| {
        let (wx, wh, b) = (g.param(store, l.wx), g.param(store, l.wh), g.param(store, l.b));
        g.lstm(x, wx, wh, b, reverse)
    };
    let f = run(g, &ids.fwd, false);
    let r = run(g, &ids.bwd, true);
    let cat = g.concat_cols(&[f, r]);
    let w = g.param(store, ids.proj_w);
    let b = g.param(store, ids.proj_b);
    let proj = g.matmul(cat, w);
    g.add(proj, b)
}

pub fn gate(g: &mut Graph, store: &ParamStore, raw: ParamId) -> Var {
    let r = g.param(store, raw);
    g.sigmoid(r)
}

/// `p = softmax(H w + b)`, `c = Σ p_i H_i`.
pub fn self_attend(g: &mut Graph, store: &ParamStore, ids: &AttentionIds, h: Var) -> Var {
    let w = g.param(store, ids.w);
    let b = g.param(store, ids.b);
    let z = g.matmul(h, w);
    let z = g.add(z, b);
    let p = g.softmax(z);
    let pt = g.transpose(p);
    g.matmul(pt, h)
}

/// `β a + (1 − β) b`
pub fn mix(g: &mut Graph, beta: Var, a: Var, b: Var) -> Var {
    let one_minus = g.one_minus(beta);
    let x = g.scale_by(beta, a);
    let y = g.scale_by(one_minus, b);
    g.add(x, y)
}

/// Slot-independent shared states, computed once and reused across slots.
pub fn shared_states(g: &mut Graph, store: &ParamStore, ids: &EncoderIds, x: Var) -> Var {
    bilstm(g, store, &ids.shared, x)
}

/// Encodes embedded tokens `x` for `slot`. `shared_h` may carry the output of
/// [`shared_states`] for the same `x`.
pub fn encode_sequence(
    g: &mut Graph,
    store: &ParamStore,
    ids: &EncoderIds,
    paths: EncoderPaths,
    slot: usize,
    x: Var,
    shared_h: Option<Var>,
) -> EncoderOutput {
    assert!(g.shape(x).0 > 0, "cannot encode an empty sequence");
    assert!(paths.private || paths.shared, "no encoder path enabled");
    let hs = paths.private.then(|| bilstm(g, store, &ids.private[slot], x));
    let hg = paths.shared.then(|| shared_h.unwrap_or_else(|| shared_states(g, store, ids, x)));
    let (h, beta) = match (hs, hg) {
        (Some(hs), Some(hg)) => {
            let beta = gate(g, store, ids.gate[slot]);
            (mix(g, beta, hs, hg), Some(beta))
        }
        (Some(h), None) | (None, Some(h)) => (h, None),
        (None, None) => unreachable!(),
    };
    let c = if !paths.self_attention {
        let n = g.shape(h).0;
        g.row(h, n - 1)
    } else {
        match beta {
            Some(beta) => {
                let cs = self_attend(g, store, &ids.private_att[slot], h);
                let cg = self_attend(g, store, &ids.shared_att, h);
                mix(g, beta, cs, cg)
            }
            None if paths.private => self_attend(g, store, &ids.private_att[slot], h),
            None => self_attend(g, store, &ids.shared_att, h),
        }
    };
    EncoderOutput { h, c }
}

/// `p^a = softmax(c_a c_uᵀ)`, `c_n = Σ p^a_i c_a[i]`; zero without actions.
pub fn interact_actions(g: &mut Graph, c_a: Option<Var>, c_u: Var) -> Var {
    match c_a {
        None => {
            let d = g.shape(c_u).1;
            g.constant(Tensor::zeros(1, d))
        }
        Some(c_a) => {
            let cu_t = g.transpose(c_u);
            let scores = g.matmul(c_a, cu_t);
            let p = g.softmax(scores);
            let pt = g.transpose(p);
            g.matmul(pt, c_a)
        }
    }
}
