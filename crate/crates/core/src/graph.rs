//! Tape-based reverse-mode differentiation over small dense matrices.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters enter
//! as leaves tied to a [`ParamId`]; [`Graph::backward`] returns their
//! gradients. Recurrent layers are fused ops with hand-written
//! backpropagation through time.

use crate::params::{ParamId, ParamStore};
use crate::tensor::{axpy, dot, sigmoid, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

struct LstmCache {
    /// Post-activation gates `[i | f | g | o]`, one row per position.
    gates: Vec<f64>,
    cells: Vec<f64>,
    tanh_cells: Vec<f64>,
}

enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    /// Same shape, or a `1×c` right operand broadcast over rows.
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `1×1` scalar var times a tensor.
    ScaleBy(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Rows(Var, Vec<usize>),
    Softmax(Var),
    Pick(Var, usize),
    Log(Var, f64),
    Sum(Var),
    AddN(Vec<Var>),
    BceWithLogits(Var, Tensor),
    Lstm {
        x: Var,
        wx: Var,
        wh: Var,
        b: Var,
        reverse: bool,
        cache: LstmCache,
    },
    LstmCell {
        x: Var,
        h: Var,
        c: Var,
        wx: Var,
        wh: Var,
        b: Var,
        cache: LstmCache,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Graph {
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

/// Gradients of every parameter touched by a graph, indexed by `ParamId`.
pub struct ParamGrads {
    pub grads: Vec<Option<Tensor>>,
}

impl ParamGrads {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn accumulate(&mut self, other: ParamGrads) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (mine, theirs) in self.grads.iter_mut().zip(other.grads) {
            match (mine.as_mut(), theirs) {
                (Some(m), Some(t)) => m.add_assign(&t),
                (None, Some(t)) => *mine = Some(t),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            for x in &mut g.data {
                *x *= s;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(Tensor::all_finite)
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::with_capacity(256),
            param_vars: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Leaf bound to a parameter; repeated calls return the same var.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if self.param_vars.len() <= id.0 {
            self.param_vars.resize(id.0 + 1, None);
        }
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = va.clone();
        if va.shape() == vb.shape() {
            axpy(1.0, &vb.data, &mut out.data);
        } else {
            assert!(vb.rows == 1 && vb.cols == va.cols, "add {:?} + {:?}", va.shape(), vb.shape());
            for r in 0..out.rows {
                axpy(1.0, &vb.data, out.row_mut(r));
            }
        }
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "sub shape mismatch");
        let mut out = va.clone();
        axpy(-1.0, &vb.data, &mut out.data);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mul shape mismatch");
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(va.rows, va.cols, data);
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale_by(&mut self, s: Var, a: Var) -> Var {
        let k = self.value(s).item();
        let out = self.value(a).map(|x| k * x);
        self.push(out, Op::ScaleBy(s, a))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| k * x);
        self.push(out, Op::Scale(a, k))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| 1.0 - x);
        self.push(out, Op::OneMinus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let v = self.value(p);
                assert_eq!(v.rows, rows, "concat_cols row mismatch");
                out.data[r * cols + off..r * cols + off + v.cols].copy_from_slice(v.row(r));
                off += v.cols;
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols, cols, "concat_rows column mismatch");
            data.extend_from_slice(&v.data);
            rows += v.rows;
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a);
        assert!(start + len <= v.cols);
        let mut out = Tensor::zeros(v.rows, len);
        for r in 0..v.rows {
            out.row_mut(r).copy_from_slice(&v.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let v = self.value(a);
        let mut data = Vec::with_capacity(idx.len() * v.cols);
        for &i in idx {
            data.extend_from_slice(v.row(i));
        }
        let out = Tensor::from_vec(idx.len(), v.cols, data);
        self.push(out, Op::Rows(a, idx.to_vec()))
    }

    pub fn row(&mut self, a: Var, i: usize) -> Var {
        self.rows(a, &[i])
    }

    /// Softmax over every element, keeping the shape.
    pub fn softmax(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Tensor::from_vec(v.rows, v.cols, crate::tensor::softmax(&v.data));
        self.push(out, Op::Softmax(a))
    }

    /// Flat element `i` as a `1×1` var.
    pub fn pick(&mut self, a: Var, i: usize) -> Var {
        let out = Tensor::scalar(self.value(a).data[i]);
        self.push(out, Op::Pick(a, i))
    }

    /// `ln(max(x, floor))` elementwise.
    pub fn log(&mut self, a: Var, floor: f64) -> Var {
        let out = self.value(a).map(|x| x.max(floor).ln());
        self.push(out, Op::Log(a, floor))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).data.iter().sum());
        self.push(out, Op::Sum(a))
    }

    pub fn add_n(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "add_n of nothing");
        let mut out = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            out.add_assign(self.value(p));
        }
        self.push(out, Op::AddN(parts.to_vec()))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against 0/1 targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Tensor) -> Var {
        let z = self.value(logits);
        assert_eq!(z.shape(), targets.shape(), "bce shape mismatch");
        let n = z.len().max(1) as f64;
        let total: f64 = z
            .data
            .iter()
            .zip(&targets.data)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        self.push(Tensor::scalar(total / n), Op::BceWithLogits(logits, targets))
    }

    /// Runs an LSTM over the rows of `x` (`n×d`) from zero state. Gate layout
    /// in `wx` (`d×4h`), `wh` (`h×4h`) and `b` (`1×4h`) is `[i | f | g | o]`.
    /// Output row `t` is the hidden state after reading position `t`, also
    /// when `reverse` processes the sequence back to front.
    pub fn lstm(&mut self, x: Var, wx: Var, wh: Var, b: Var, reverse: bool) -> Var {
        let (xv, wxv, whv, bv) = (self.value(x), self.value(wx), self.value(wh), self.value(b));
        let (n, d) = xv.shape();
        let h = whv.rows;
        assert_eq!(wxv.shape(), (d, 4 * h), "lstm wx shape");
        assert_eq!(whv.shape(), (h, 4 * h), "lstm wh shape");
        assert_eq!(bv.shape(), (1, 4 * h), "lstm bias shape");
        let mut out = Tensor::zeros(n, h);
        let mut cache = LstmCache {
            gates: vec![0.0; n * 4 * h],
            cells: vec![0.0; n * h],
            tanh_cells: vec![0.0; n * h],
        };
        let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
        let mut prev: Option<usize> = None;
        let mut z = vec![0.0; 4 * h];
        for &t in &order {
            z.copy_from_slice(&bv.data);
            for (k, &xi) in xv.row(t).iter().enumerate() {
                if xi != 0.0 {
                    axpy(xi, wxv.row(k), &mut z);
                }
            }
            if let Some(p) = prev {
                for k in 0..h {
                    let hk = out.data[p * h + k];
                    if hk != 0.0 {
                        axpy(hk, whv.row(k), &mut z);
                    }
                }
            }
            let g = &mut cache.gates[t * 4 * h..(t + 1) * 4 * h];
            for k in 0..h {
                g[k] = sigmoid(z[k]);
                g[h + k] = sigmoid(z[h + k]);
                g[2 * h + k] = z[2 * h + k].tanh();
                g[3 * h + k] = sigmoid(z[3 * h + k]);
            }
            for k in 0..h {
                let c_prev = prev.map_or(0.0, |p| cache.cells[p * h + k]);
                let c = g[h + k] * c_prev + g[k] * g[2 * h + k];
                let tc = c.tanh();
                cache.cells[t * h + k] = c;
                cache.tanh_cells[t * h + k] = tc;
                out.data[t * h + k] = g[3 * h + k] * tc;
            }
            prev = Some(t);
        }
        self.push(
            out,
            Op::Lstm {
                x,
                wx,
                wh,
                b,
                reverse,
                cache,
            },
        )
    }

    /// One LSTM step from an explicit state. Returns `1×2h` holding
    /// `[h' | c']`.
    pub fn lstm_cell(&mut self, x: Var, h: Var, c: Var, wx: Var, wh: Var, b: Var) -> Var {
        let (xv, hv, cv) = (self.value(x), self.value(h), self.value(c));
        let (wxv, whv, bv) = (self.value(wx), self.value(wh), self.value(b));
        let hd = whv.rows;
        assert_eq!(xv.rows, 1, "lstm_cell input must be a row");
        assert_eq!(wxv.shape(), (xv.cols, 4 * hd), "lstm_cell wx shape");
        assert_eq!(hv.shape(), (1, hd));
        assert_eq!(cv.shape(), (1, hd));
        let mut z = bv.data.clone();
        for (k, &xi) in xv.data.iter().enumerate() {
            axpy(xi, wxv.row(k), &mut z);
        }
        for (k, &hk) in hv.data.iter().enumerate() {
            axpy(hk, whv.row(k), &mut z);
        }
        let mut gates = vec![0.0; 4 * hd];
        for k in 0..hd {
            gates[k] = sigmoid(z[k]);
            gates[hd + k] = sigmoid(z[hd + k]);
            gates[2 * hd + k] = z[2 * hd + k].tanh();
            gates[3 * hd + k] = sigmoid(z[3 * hd + k]);
        }
        let mut out = vec![0.0; 2 * hd];
        let mut cells = vec![0.0; hd];
        let mut tanh_cells = vec![0.0; hd];
        for k in 0..hd {
            let cn = gates[hd + k] * cv.data[k] + gates[k] * gates[2 * hd + k];
            cells[k] = cn;
            tanh_cells[k] = cn.tanh();
            out[k] = gates[3 * hd + k] * tanh_cells[k];
            out[hd + k] = cn;
        }
        self.push(
            Tensor::row_vector(out),
            Op::LstmCell {
                x,
                h,
                c,
                wx,
                wh,
                b,
                cache: LstmCache {
                    gates,
                    cells,
                    tanh_cells,
                },
            },
        )
    }

    /// Backpropagates from the scalar `loss` and returns parameter gradients.
    pub fn backward(&self, loss: Var) -> ParamGrads {
        let grads = self.backward_all(loss);
        let mut out = vec![None; self.param_vars.len()];
        for (pid, var) in self.param_vars.iter().enumerate() {
            if let Some(v) = var {
                out[pid] = grads[v.0].clone();
            }
        }
        ParamGrads { grads: out }
    }

    /// Gradient of `loss` with respect to every node (None where unreached).
    pub fn backward_all(&self, loss: Var) -> Vec<Option<Tensor>> {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        grads
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let mut acc = |v: Var, delta: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, g.matmul(&vb.transpose()));
                acc(*b, va.transpose().matmul(g));
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                let vb = self.value(*b);
                if vb.shape() == g.shape() {
                    acc(*b, g.clone());
                } else {
                    let mut col = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        axpy(1.0, g.row(r), &mut col.data);
                    }
                    acc(*b, col);
                }
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, zip_map(g, vb, |x, y| x * y));
                acc(*b, zip_map(g, va, |x, y| x * y));
            }
            Op::ScaleBy(s, a) => {
                let k = self.value(*s).item();
                acc(*s, Tensor::scalar(dot(&g.data, &self.value(*a).data)));
                acc(*a, g.map(|x| k * x));
            }
            Op::Scale(a, k) => acc(*a, g.map(|x| k * x)),
            Op::OneMinus(a) => acc(*a, g.map(|x| -x)),
            Op::Sigmoid(a) => acc(*a, zip_map(g, out, |g, y| g * y * (1.0 - y))),
            Op::Tanh(a) => acc(*a, zip_map(g, out, |g, y| g * (1.0 - y * y))),
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let cols = self.value(p).cols;
                    let mut d = Tensor::zeros(g.rows, cols);
                    for r in 0..g.rows {
                        d.row_mut(r).copy_from_slice(&g.row(r)[off..off + cols]);
                    }
                    acc(p, d);
                    off += cols;
                }
            }
            Op::ConcatRows(parts) => {
                let mut row = 0;
                for &p in parts {
                    let rows = self.value(p).rows;
                    let d = Tensor::from_vec(rows, g.cols, g.data[row * g.cols..(row + rows) * g.cols].to_vec());
                    acc(p, d);
                    row += rows;
                }
            }
            Op::SliceCols(a, start) => {
                let va = self.value(*a);
                let mut d = Tensor::zeros(va.rows, va.cols);
                for r in 0..va.rows {
                    d.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                }
                acc(*a, d);
            }
            Op::Rows(a, idx) => {
                let va = self.value(*a);
                let mut d = Tensor::zeros(va.rows, va.cols);
                for (k, &i) in idx.iter().enumerate() {
                    axpy(1.0, g.row(k), d.row_mut(i));
                }
                acc(*a, d);
            }
            Op::Softmax(a) => {
                let s = dot(&g.data, &out.data);
                acc(*a, zip_map(g, out, |g, y| y * (g - s)));
            }
            Op::Pick(a, i) => {
                let va = self.value(*a);
                let mut d = Tensor::zeros(va.rows, va.cols);
                d.data[*i] = g.item();
                acc(*a, d);
            }
            Op::Log(a, floor) => {
                let va = self.value(*a);
                acc(*a, zip_map(g, va, |g, x| if x > *floor { g / x } else { 0.0 }));
            }
            Op::Sum(a) => {
                let va = self.value(*a);
                acc(*a, Tensor::from_vec(va.rows, va.cols, vec![g.item(); va.len()]));
            }
            Op::AddN(parts) => {
                for &p in parts {
                    acc(p, g.clone());
                }
            }
            Op::BceWithLogits(logits, targets) => {
                let z = self.value(*logits);
                let n = z.len().max(1) as f64;
                let k = g.item() / n;
                acc(*logits, zip_map(z, targets, |z, y| k * (sigmoid(z) - y)));
            }
            Op::Lstm {
                x,
                wx,
                wh,
                b,
                reverse,
                cache,
            } => {
                let (xv, wxv, whv) = (self.value(*x), self.value(*wx), self.value(*wh));
                let (n, d) = xv.shape();
                let h = whv.rows;
                let mut dx = Tensor::zeros(n, d);
                let mut dwx = Tensor::zeros(d, 4 * h);
                let mut dwh = Tensor::zeros(h, 4 * h);
                let mut db = Tensor::zeros(1, 4 * h);
                let order: Vec<usize> = if *reverse { (0..n).rev().collect() } else { (0..n).collect() };
                let mut dh_next = vec![0.0; h];
                let mut dc_next = vec![0.0; h];
                let mut dz = vec![0.0; 4 * h];
                for step in (0..order.len()).rev() {
                    let t = order[step];
                    let prev = if step > 0 { Some(order[step - 1]) } else { None };
                    let gt = &cache.gates[t * 4 * h..(t + 1) * 4 * h];
                    for k in 0..h {
                        let dh = g.data[t * h + k] + dh_next[k];
                        let (i, f, gg, o) = (gt[k], gt[h + k], gt[2 * h + k], gt[3 * h + k]);
                        let tc = cache.tanh_cells[t * h + k];
                        let c_prev = prev.map_or(0.0, |p| cache.cells[p * h + k]);
                        let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
                        dz[k] = dc * gg * i * (1.0 - i);
                        dz[h + k] = dc * c_prev * f * (1.0 - f);
                        dz[2 * h + k] = dc * i * (1.0 - gg * gg);
                        dz[3 * h + k] = dh * tc * o * (1.0 - o);
                        dc_next[k] = dc * f;
                    }
                    axpy(1.0, &dz, &mut db.data);
                    for (kk, &xi) in xv.row(t).iter().enumerate() {
                        if xi != 0.0 {
                            axpy(xi, &dz, dwx.row_mut(kk));
                        }
                    }
                    let dxt = dx.row_mut(t);
                    for (kk, dxv) in dxt.iter_mut().enumerate() {
                        *dxv = dot(wxv.row(kk), &dz);
                    }
                    match prev {
                        Some(p) => {
                            for kk in 0..h {
                                let hp = out.data[p * h + kk];
                                if hp != 0.0 {
                                    axpy(hp, &dz, dwh.row_mut(kk));
                                }
                                dh_next[kk] = dot(whv.row(kk), &dz);
                            }
                        }
                        None => dh_next.iter_mut().for_each(|v| *v = 0.0),
                    }
                }
                acc(*x, dx);
                acc(*wx, dwx);
                acc(*wh, dwh);
                acc(*b, db);
            }
            Op::LstmCell {
                x,
                h,
                c,
                wx,
                wh,
                b,
                cache,
            } => {
                let (xv, hv, cv) = (self.value(*x), self.value(*h), self.value(*c));
                let (wxv, whv) = (self.value(*wx), self.value(*wh));
                let hd = whv.rows;
                let gt = &cache.gates;
                let mut dz = vec![0.0; 4 * hd];
                let mut dc_prev = vec![0.0; hd];
                for k in 0..hd {
                    let dh = g.data[k];
                    let (i, f, gg, o) = (gt[k], gt[hd + k], gt[2 * hd + k], gt[3 * hd + k]);
                    let tc = cache.tanh_cells[k];
                    let dc = g.data[hd + k] + dh * o * (1.0 - tc * tc);
                    dz[k] = dc * gg * i * (1.0 - i);
                    dz[hd + k] = dc * cv.data[k] * f * (1.0 - f);
                    dz[2 * hd + k] = dc * i * (1.0 - gg * gg);
                    dz[3 * hd + k] = dh * tc * o * (1.0 - o);
                    dc_prev[k] = dc * f;
                }
                let _ = &cache.cells;
                let mut dwx = Tensor::zeros(wxv.rows, 4 * hd);
                for (kk, &xi) in xv.data.iter().enumerate() {
                    axpy(xi, &dz, dwx.row_mut(kk));
                }
                let mut dwh = Tensor::zeros(hd, 4 * hd);
                for (kk, &hk) in hv.data.iter().enumerate() {
                    axpy(hk, &dz, dwh.row_mut(kk));
                }
                let dx: Vec<f64> = (0..wxv.rows).map(|kk| dot(wxv.row(kk), &dz)).collect();
                let dh: Vec<f64> = (0..hd).map(|kk| dot(whv.row(kk), &dz)).collect();
                acc(*x, Tensor::row_vector(dx));
                acc(*h, Tensor::row_vector(dh));
                acc(*c, Tensor::row_vector(dc_prev));
                acc(*wx, dwx);
                acc(*wh, dwh);
                acc(*b, Tensor::row_vector(dz));
            }
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    assert_eq!(a.shape(), b.shape());
    Tensor::from_vec(a.rows, a.cols, a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Central differences of `f` with respect to every entry of every input,
    /// compared against the tape gradient.
    fn check(inputs: Vec<Tensor>, f: impl Fn(&mut Graph, &[Var]) -> Var) {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let loss = f(&mut g, &vars);
        let grads = g.backward_all(loss);
        let eps = 1e-6;
        for (k, t) in inputs.iter().enumerate() {
            let analytic = grads[vars[k].0].clone().unwrap_or_else(|| Tensor::zeros(t.rows, t.cols));
            let mut numeric = Tensor::zeros(t.rows, t.cols);
            for i in 0..t.len() {
                let eval = |delta: f64| {
                    let mut g = Graph::new();
                    let vars: Vec<Var> = inputs
                        .iter()
                        .enumerate()
                        .map(|(j, u)| {
                            let mut u = u.clone();
                            if j == k {
                                u.data[i] += delta;
                            }
                            g.constant(u)
                        })
                        .collect();
                    let l = f(&mut g, &vars);
                    g.value(l).item()
                };
                numeric.data[i] = (eval(eps) - eval(-eps)) / (2.0 * eps);
            }
            let err = analytic.max_abs_diff(&numeric) / (analytic.norm().max(numeric.norm()).max(1e-8));
            assert!(err < 1e-6, "input {k}: rel err {err}\n{analytic:?}\n{numeric:?}");
        }
    }

    fn weights(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn grad_matmul_add_mul_sub() {
        let mut r = weights(1);
        check(vec![random(&mut r, 3, 4), random(&mut r, 4, 2), random(&mut r, 1, 2), random(&mut r, 3, 2)], |g, v| {
            let m = g.matmul(v[0], v[1]);
            let a = g.add(m, v[2]);
            let p = g.mul(a, v[3]);
            let s = g.sub(p, v[3]);
            let t = g.transpose(s);
            let q = g.mul(t, t);
            g.sum(q)
        });
    }

    #[test]
    fn grad_activations_and_scaling() {
        let mut r = weights(2);
        check(vec![random(&mut r, 2, 3), random(&mut r, 1, 1)], |g, v| {
            let s = g.sigmoid(v[1]);
            let om = g.one_minus(s);
            let a = g.tanh(v[0]);
            let b = g.sigmoid(v[0]);
            let x = g.scale_by(s, a);
            let y = g.scale_by(om, b);
            let z = g.add_n(&[x, y]);
            let z = g.scale(z, 1.7);
            let sq = g.mul(z, z);
            g.sum(sq)
        });
    }

    #[test]
    fn grad_softmax_pick_log() {
        let mut r = weights(3);
        check(vec![random(&mut r, 5, 1)], |g, v| {
            let p = g.softmax(v[0]);
            let a = g.pick(p, 1);
            let b = g.pick(p, 3);
            let s = g.add_n(&[a, b]);
            let l = g.log(s, 1e-12);
            g.scale(l, -1.0)
        });
    }

    #[test]
    fn grad_concat_slice_rows() {
        let mut r = weights(4);
        check(vec![random(&mut r, 2, 3), random(&mut r, 2, 2), random(&mut r, 1, 5)], |g, v| {
            let c = g.concat_cols(&[v[0], v[1]]);
            let rr = g.concat_rows(&[c, v[2]]);
            let picked = g.rows(rr, &[2, 0, 2]);
            let sl = g.slice_cols(picked, 1, 3);
            let sq = g.mul(sl, sl);
            g.sum(sq)
        });
    }

    #[test]
    fn grad_bce() {
        let mut r = weights(5);
        let targets = Tensor::column(vec![1.0, 0.0, 1.0, 0.0]);
        check(vec![random(&mut r, 4, 1)], move |g, v| {
            let z = g.scale(v[0], 3.0);
            g.bce_with_logits(z, targets.clone())
        });
    }

    #[test]
    fn bce_value_matches_definition() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::column(vec![0.3, -1.2]));
        let l = g.bce_with_logits(z, Tensor::column(vec![1.0, 0.0]));
        let expect = (-(sigmoid(0.3)).ln() - (1.0 - sigmoid(-1.2)).ln()) / 2.0;
        assert!((g.value(l).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn grad_lstm_both_directions() {
        for reverse in [false, true] {
            let mut r = weights(6 + reverse as u64);
            check(
                vec![random(&mut r, 4, 3), random(&mut r, 3, 8), random(&mut r, 2, 8), random(&mut r, 1, 8), random(&mut r, 4, 2)],
                move |g, v| {
                    let h = g.lstm(v[0], v[1], v[2], v[3], reverse);
                    let w = g.mul(h, v[4]);
                    g.sum(w)
                },
            );
        }
    }

    #[test]
    fn grad_lstm_cell_chain() {
        let mut r = weights(8);
        check(
            vec![
                random(&mut r, 1, 3),
                random(&mut r, 1, 2),
                random(&mut r, 1, 2),
                random(&mut r, 3, 8),
                random(&mut r, 2, 8),
                random(&mut r, 1, 8),
                random(&mut r, 1, 4),
            ],
            |g, v| {
                let s1 = g.lstm_cell(v[0], v[1], v[2], v[3], v[4], v[5]);
                let h1 = g.slice_cols(s1, 0, 2);
                let c1 = g.slice_cols(s1, 2, 2);
                let s2 = g.lstm_cell(v[0], h1, c1, v[3], v[4], v[5]);
                let w = g.mul(s2, v[6]);
                g.sum(w)
            },
        );
    }

    #[test]
    fn lstm_cell_matches_sequence_op() {
        let mut r = weights(9);
        let (x, wx, wh, b) = (random(&mut r, 3, 2), random(&mut r, 2, 12), random(&mut r, 3, 12), random(&mut r, 1, 12));
        let mut g = Graph::new();
        let (xv, wxv, whv, bv) = (g.constant(x), g.constant(wx), g.constant(wh), g.constant(b));
        let seq = g.lstm(xv, wxv, whv, bv, false);
        let mut h = g.constant(Tensor::zeros(1, 3));
        let mut c = g.constant(Tensor::zeros(1, 3));
        for t in 0..3 {
            let xt = g.row(xv, t);
            let s = g.lstm_cell(xt, h, c, wxv, whv, bv);
            h = g.slice_cols(s, 0, 3);
            c = g.slice_cols(s, 3, 3);
            let diff = g.value(h).max_abs_diff(&Tensor::row_vector(g.value(seq).row(t).to_vec()));
            assert!(diff < 1e-14);
        }
    }
}
