//! Trainable network instances bound to an architecture and width configuration.
//!
//! An [`ArchSpec`] + [`WidthConfig`] pair compiles to a flat tape of nodes
//! over SSA-style activation buffers; forward and backward walk the tape.
//! Per-channel gates sit after each prunable layer's normalization (or after
//! its affine output when normalization is absent); pruning a channel zeroes
//! its gate, freezes the rows that produce it, and keeps the tensor shapes
//! fixed, so the physical network never needs restructuring mid-run.
//!
//! All heavy loops hand disjoint output slices to [`crate::exec`], which keeps
//! results bit-identical between the parallel and sequential paths.

use crate::arch::{ArchSpec, Family, LayerKind, ShortcutKind, WidthConfig, WidthRule};
use crate::dataset::Split;
use crate::error::{Error, Result};
use crate::exec;
use crate::rng::Rng;

const NORM_EPS: f64 = 1e-5;
const NORM_MOMENTUM: f64 = 0.1;

/// Batch activation buffer, laid out `[n][c][h][w]` (dense data uses h = w = 1).
#[derive(Debug, Clone, Default)]
pub struct Tensor4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor4 {
    fn resize(&mut self, n: usize, c: usize, h: usize, w: usize) {
        self.n = n;
        self.c = c;
        self.h = h;
        self.w = w;
        self.data.clear();
        self.data.resize(n * c * h * w, 0.0);
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }
}

/// A weight tensor with its gradient and momentum state. Rows follow the
/// output-channel axis so a pruned channel can be frozen row-wise.
#[derive(Debug, Clone)]
pub struct ParamTensor {
    pub data: Vec<f64>,
    pub grad: Vec<f64>,
    pub vel: Vec<f64>,
    pub rows: usize,
    pub row_len: usize,
    pub frozen: Vec<bool>,
}

impl ParamTensor {
    fn new(rows: usize, row_len: usize) -> Self {
        let len = rows * row_len;
        ParamTensor {
            data: vec![0.0; len],
            grad: vec![0.0; len],
            vel: vec![0.0; len],
            rows,
            row_len,
            frozen: vec![false; rows],
        }
    }
}

/// Per-channel multiplicative gate vector of one prunable layer.
#[derive(Debug, Clone)]
pub struct GateVector {
    pub z: Vec<f64>,
    pub alive: Vec<bool>,
}

impl GateVector {
    fn ones(n: usize) -> Self {
        GateVector { z: vec![1.0; n], alive: vec![true; n] }
    }

    pub fn alive_count(&self) -> usize {
        self.alive.iter().filter(|a| **a).count()
    }
}

/// Running normalization statistics (evaluation-mode input standardization).
#[derive(Debug, Clone)]
struct NormStats {
    mean: Vec<f64>,
    var: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Dense { w: usize, b: usize },
    Conv { w: usize, stride: usize, kh: usize, kw: usize, depthwise: bool },
    Norm { gamma: usize, beta: usize, stats: usize },
    Gate { gate: usize },
    Relu,
    MaxPool,
    GlobalAvgPool,
    Add { rhs: usize },
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    src: usize,
    dst: usize,
}

#[derive(Debug, Clone, Default)]
struct Plan {
    nodes: Vec<Node>,
    buf_count: usize,
    norm_count: usize,
    /// Param tensors whose rows are owned by each gate (weight, bias, affine
    /// pairs, shared shortcut projections).
    gate_owners: Vec<Vec<usize>>,
}

/// Saved per-node state needed by the backward pass.
#[derive(Debug, Clone, Default)]
struct NormSaved {
    xhat: Vec<f64>,
    invstd: Vec<f64>,
    train_mode: bool,
}

/// Scratch buffers for one forward/backward pass. Reusable across batches.
#[derive(Debug, Default)]
pub struct Workspace {
    bufs: Vec<Tensor4>,
    grads: Vec<Tensor4>,
    norm_saved: Vec<NormSaved>,
    pool_saved: Vec<Vec<usize>>,
}

impl Workspace {
    /// Read an activation buffer (typically the logits index from `forward`).
    pub fn logits(&self, buf: usize) -> &Tensor4 {
        &self.bufs[buf]
    }
}

/// Trainable instance: weights, gates, optimizer state, bound to its spec.
#[derive(Debug, Clone)]
pub struct Network {
    pub arch: ArchSpec,
    pub widths: WidthConfig,
    pub seed: u64,
    params: Vec<ParamTensor>,
    gates: Vec<GateVector>,
    norms: Vec<NormStats>,
    plan: Plan,
}

struct Compiler {
    nodes: Vec<Node>,
    next_buf: usize,
    params: Vec<ParamTensor>,
    param_meta: Vec<(usize, usize)>, // (fan_in_total, rows) for init
    gates: Vec<GateVector>,
    gate_owners: Vec<Vec<usize>>,
    norms: Vec<NormStats>,
}

impl Compiler {
    fn new() -> Self {
        Compiler {
            nodes: Vec::new(),
            next_buf: 1, // buffer 0 is the network input
            params: Vec::new(),
            param_meta: Vec::new(),
            gates: Vec::new(),
            gate_owners: Vec::new(),
            norms: Vec::new(),
        }
    }

    fn fresh_buf(&mut self) -> usize {
        let b = self.next_buf;
        self.next_buf += 1;
        b
    }

    fn push(&mut self, op: Op, src: usize) -> usize {
        let dst = self.fresh_buf();
        self.nodes.push(Node { op, src, dst });
        dst
    }

    fn add_param(&mut self, rows: usize, row_len: usize, fan_in: usize) -> usize {
        self.params.push(ParamTensor::new(rows, row_len));
        self.param_meta.push((fan_in, rows));
        self.params.len() - 1
    }

    fn add_gate(&mut self, width: usize) -> usize {
        self.gates.push(GateVector::ones(width));
        self.gate_owners.push(Vec::new());
        self.gates.len() - 1
    }

    fn add_norm(&mut self, width: usize) -> (usize, usize, usize) {
        let gamma = self.add_param(width, 1, 0);
        let beta = self.add_param(width, 1, 0);
        self.norms.push(NormStats { mean: vec![0.0; width], var: vec![1.0; width] });
        (gamma, beta, self.norms.len() - 1)
    }

    /// conv/pointwise + optional norm, returning the output buffer.
    fn conv_unit(
        &mut self,
        src: usize,
        in_w: usize,
        out_w: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        depthwise: bool,
        normed: bool,
        gate: Option<usize>,
    ) -> usize {
        let w = if depthwise {
            self.add_param(out_w, kh * kw, kh * kw)
        } else {
            self.add_param(out_w, in_w * kh * kw, in_w * kh * kw)
        };
        let mut cur = self.push(Op::Conv { w, stride, kh, kw, depthwise }, src);
        let mut owned = vec![w];
        if normed {
            let (gamma, beta, stats) = self.add_norm(out_w);
            cur = self.push(Op::Norm { gamma, beta, stats }, cur);
            owned.push(gamma);
            owned.push(beta);
        }
        if let Some(g) = gate {
            cur = self.push(Op::Gate { gate: g }, cur);
            self.gate_owners[g].extend(owned);
        }
        cur
    }
}

fn physical_widths(arch: &ArchSpec, widths: &WidthConfig) -> Vec<usize> {
    let mut out = Vec::with_capacity(arch.layers.len());
    let mut prev = arch.input_shape.fan_in();
    let mut vi = 0;
    for l in &arch.layers {
        let w = match l.width {
            WidthRule::Prunable { .. } => {
                let w = widths.widths[vi];
                vi += 1;
                w
            }
            WidthRule::Expansion { factor } => prev * factor,
            WidthRule::MatchInput => prev,
        };
        out.push(w);
        prev = w;
    }
    out
}

fn compile(arch: &ArchSpec, widths: &WidthConfig) -> Result<Compiled> {
    let report = crate::arch::validate_widths(arch, widths);
    if !report.is_valid() {
        return Err(Error::InvalidArgument(format!(
            "invalid widths: {}",
            report
                .violations
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("; ")
        )));
    }
    arch.validate()?;
    let phys = physical_widths(arch, widths);
    let blocks = arch.blocks();
    let shortcuts: Vec<ShortcutKind> = if arch.family.has_blocks() {
        crate::arch::resolve_shortcuts(arch, widths)?
    } else {
        Vec::new()
    };

    let mut c = Compiler::new();
    let mut cur = 0usize; // input buffer
    let mut cur_w = arch.input_shape.fan_in();
    let mut li = 0usize;
    let mut vi = 0usize; // prunable ordinal

    while li < arch.layers.len() {
        let layer = &arch.layers[li];
        match layer.block_id {
            None => {
                let out_w = phys[li];
                let prunable = matches!(layer.width, WidthRule::Prunable { .. });
                let gate = if prunable { Some(c.add_gate(out_w)) } else { None };
                match layer.kind {
                    LayerKind::Dense => {
                        let w = c.add_param(out_w, cur_w, cur_w);
                        let b = c.add_param(out_w, 1, cur_w);
                        cur = c.push(Op::Dense { w, b }, cur);
                        let mut owned = vec![w, b];
                        if layer.has_norm_gate {
                            let (gamma, beta, stats) = c.add_norm(out_w);
                            cur = c.push(Op::Norm { gamma, beta, stats }, cur);
                            owned.push(gamma);
                            owned.push(beta);
                        }
                        if let Some(g) = gate {
                            cur = c.push(Op::Gate { gate: g }, cur);
                            c.gate_owners[g].extend(owned);
                        }
                        cur = c.push(Op::Relu, cur);
                    }
                    LayerKind::Conv { kernel } | LayerKind::DepthwiseConv { kernel } => {
                        let depthwise = matches!(layer.kind, LayerKind::DepthwiseConv { .. });
                        cur = c.conv_unit(
                            cur,
                            cur_w,
                            out_w,
                            kernel.0,
                            kernel.1,
                            layer.stride,
                            depthwise,
                            layer.has_norm_gate,
                            gate,
                        );
                        cur = c.push(Op::Relu, cur);
                    }
                    LayerKind::PointwiseConv => {
                        cur = c.conv_unit(
                            cur,
                            cur_w,
                            out_w,
                            1,
                            1,
                            layer.stride,
                            false,
                            layer.has_norm_gate,
                            gate,
                        );
                        cur = c.push(Op::Relu, cur);
                    }
                }
                if layer.pool_after {
                    cur = c.push(Op::MaxPool, cur);
                }
                if prunable {
                    vi += 1;
                }
                cur_w = out_w;
                li += 1;
            }
            Some(_) => {
                // Compile the whole block at once.
                let block = blocks
                    .iter()
                    .find(|b| b.first == li)
                    .expect("block starts at its first layer");
                let block_idx = blocks.iter().position(|b| b.first == li).unwrap();
                let block_in_buf = cur;
                let block_in_w = cur_w;
                let mut path = cur;
                let mut path_w = cur_w;
                let mut out_gate = None;
                for bi in block.first..=block.last {
                    let bl = &arch.layers[bi];
                    let out_w = phys[bi];
                    let prunable = matches!(bl.width, WidthRule::Prunable { .. });
                    let is_last = bi == block.last;
                    let gate = if prunable { Some(c.add_gate(out_w)) } else { None };
                    if prunable {
                        vi += 1;
                    }
                    let (kh, kw, depthwise) = match bl.kind {
                        LayerKind::Conv { kernel } => (kernel.0, kernel.1, false),
                        LayerKind::DepthwiseConv { kernel } => (kernel.0, kernel.1, true),
                        LayerKind::PointwiseConv => (1, 1, false),
                        LayerKind::Dense => {
                            return Err(Error::InvalidArch(
                                "dense layers cannot appear inside blocks".into(),
                            ))
                        }
                    };
                    path = c.conv_unit(
                        path,
                        path_w,
                        out_w,
                        kh,
                        kw,
                        bl.stride,
                        depthwise,
                        bl.has_norm_gate,
                        gate,
                    );
                    if is_last {
                        out_gate = gate;
                    } else {
                        // Hidden block layers activate; the block output stays
                        // linear until the residual join.
                        path = c.push(Op::Relu, path);
                    }
                    path_w = out_w;
                }
                let block_out_w = path_w;
                let normed = arch.layers[block.last].has_norm_gate;
                match shortcuts[block_idx] {
                    ShortcutKind::Identity => {
                        debug_assert_eq!(block_in_w, block_out_w);
                        path = c.push(Op::Add { rhs: block_in_buf }, path);
                    }
                    ShortcutKind::Conv1x1 => {
                        let sc = c.conv_unit(
                            block_in_buf,
                            block_in_w,
                            block_out_w,
                            1,
                            1,
                            block.stride,
                            false,
                            normed,
                            out_gate,
                        );
                        path = c.push(Op::Add { rhs: sc }, path);
                    }
                }
                if arch.family == Family::Residual {
                    path = c.push(Op::Relu, path);
                }
                cur = path;
                cur_w = block_out_w;
                li = block.last + 1;
            }
        }
    }

    // Classifier head: conv families pool to a feature vector first.
    if arch.family != Family::Dense {
        cur = c.push(Op::GlobalAvgPool, cur);
    }
    let w = c.add_param(arch.num_classes, cur_w, cur_w);
    let b = c.add_param(arch.num_classes, 1, cur_w);
    let _logits = c.push(Op::Dense { w, b }, cur);
    debug_assert_eq!(vi, widths.len());

    Ok(Compiled {
        plan: Plan {
            nodes: c.nodes,
            buf_count: c.next_buf,
            norm_count: c.norms.len(),
            gate_owners: c.gate_owners,
        },
        params: c.params,
        param_meta: c.param_meta,
        gates: c.gates,
        norms: c.norms,
    })
}

struct Compiled {
    plan: Plan,
    params: Vec<ParamTensor>,
    param_meta: Vec<(usize, usize)>,
    gates: Vec<GateVector>,
    norms: Vec<NormStats>,
}

/// Gather dataset samples into a batch tensor.
pub fn gather_batch(split: &Split, idxs: &[usize]) -> (Tensor4, Vec<u32>) {
    let len = split.sample_len();
    let mut t = Tensor4::default();
    t.resize(idxs.len(), split.c, split.h, split.w);
    for (bi, &i) in idxs.iter().enumerate() {
        t.data[bi * len..(bi + 1) * len].copy_from_slice(split.feature(i));
    }
    let labels = idxs.iter().map(|&i| split.labels[i]).collect();
    (t, labels)
}

impl Network {
    /// Deterministic function of (arch, widths, seed): all gates start at 1,
    /// weights are fan-in-scaled uniform, normalization pairs are (1, 0).
    pub fn init(arch: &ArchSpec, widths: &WidthConfig, seed: u64) -> Result<Network> {
        let compiled = compile(arch, widths)?;
        let mut net = Network {
            arch: arch.clone(),
            widths: widths.clone(),
            seed,
            params: compiled.params,
            gates: compiled.gates,
            norms: compiled.norms,
            plan: compiled.plan,
        };
        // Weights and dense biases draw fan-in-scaled uniform values; norm
        // affine pairs start at (1, 0) and are fixed up below.
        for (idx, (fan_in, _rows)) in compiled.param_meta.iter().enumerate() {
            let p = &mut net.params[idx];
            if *fan_in == 0 {
                for v in p.data.iter_mut() {
                    *v = 0.0;
                }
                continue;
            }
            let bound = 1.0 / (*fan_in as f64).sqrt();
            let mut rng = Rng::derive(seed, 0x5EED_0000 + idx as u64);
            for v in p.data.iter_mut() {
                *v = rng.uniform_in(-bound, bound);
            }
        }
        // Gammas initialize to 1.
        for node in &net.plan.nodes {
            if let Op::Norm { gamma, .. } = node.op {
                for v in net.params[gamma].data.iter_mut() {
                    *v = 1.0;
                }
            }
        }
        Ok(net)
    }

    pub fn gate_layers(&self) -> usize {
        self.gates.len()
    }

    pub fn gate(&self, layer: usize) -> &GateVector {
        &self.gates[layer]
    }

    pub fn total_gates(&self) -> usize {
        self.gates.iter().map(|g| g.z.len()).sum()
    }

    pub fn alive_gates(&self) -> usize {
        self.gates.iter().map(|g| g.alive_count()).sum()
    }

    /// Current alive channel count per prunable layer.
    pub fn alive_widths(&self) -> WidthConfig {
        WidthConfig::new(self.gates.iter().map(|g| g.alive_count()).collect())
    }

    /// Zero the gate of (layer, channel) and freeze the rows producing it.
    pub fn prune_gate(&mut self, layer: usize, channel: usize) {
        let g = &mut self.gates[layer];
        g.z[channel] = 0.0;
        g.alive[channel] = false;
        for &p in &self.plan.gate_owners[layer] {
            let t = &mut self.params[p];
            t.frozen[channel] = true;
            let s = channel * t.row_len;
            for v in &mut t.vel[s..s + t.row_len] {
                *v = 0.0;
            }
        }
    }

    pub fn params_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.params
    }

    pub fn params(&self) -> &[ParamTensor] {
        &self.params
    }

    /// Total number of stored weights (physical, ignoring masks). Gates and
    /// running statistics are bookkeeping, not parameters.
    pub fn physical_param_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn make_workspace(&self) -> Workspace {
        Workspace {
            bufs: (0..self.plan.buf_count).map(|_| Tensor4::default()).collect(),
            grads: (0..self.plan.buf_count).map(|_| Tensor4::default()).collect(),
            norm_saved: vec![NormSaved::default(); self.plan.norm_count],
            pool_saved: vec![Vec::new(); self.plan.nodes.len()],
        }
    }

    /// Run the tape forward. Returns the index of the logits buffer.
    pub fn forward(&mut self, ws: &mut Workspace, input: &Tensor4, mode: Mode) -> usize {
        ws.bufs[0] = input.clone();
        let node_count = self.plan.nodes.len();
        for ni in 0..node_count {
            let node = self.plan.nodes[ni];
            self.forward_node(ws, ni, node, mode);
        }
        self.plan.nodes[node_count - 1].dst
    }

    fn forward_node(&mut self, ws: &mut Workspace, ni: usize, node: Node, mode: Mode) {
        let (n, ci, h, w) = {
            let s = &ws.bufs[node.src];
            (s.n, s.c, s.h, s.w)
        };
        match node.op {
            Op::Dense { w: wi, b: bi } => {
                let co = self.params[wi].rows;
                let in_len = ci * h * w;
                debug_assert_eq!(self.params[wi].row_len, in_len);
                let (dst, src) = buf_pair(&mut ws.bufs, node.dst, node.src);
                dst.resize(n, co, 1, 1);
                let wt = &self.params[wi].data;
                let bt = &self.params[bi].data;
                exec::for_each_chunk_mut(&mut dst.data, co, |s, out| {
                    let x = &src.data[s * in_len..(s + 1) * in_len];
                    for (o, y) in out.iter_mut().enumerate() {
                        let row = &wt[o * in_len..(o + 1) * in_len];
                        let mut acc = bt[o];
                        for (wv, xv) in row.iter().zip(x) {
                            acc += wv * xv;
                        }
                        *y = acc;
                    }
                });
            }
            Op::Conv { w: wi, stride, kh, kw, depthwise } => {
                let co = self.params[wi].rows;
                let ph = (kh - 1) / 2;
                let pw = (kw - 1) / 2;
                let oh = (h + 2 * ph - kh) / stride + 1;
                let ow = (w + 2 * pw - kw) / stride + 1;
                let (dst, src) = buf_pair(&mut ws.bufs, node.dst, node.src);
                dst.resize(n, co, oh, ow);
                let wt = &self.params[wi].data;
                let sample_out = co * oh * ow;
                let sample_in = ci * h * w;
                exec::for_each_chunk_mut(&mut dst.data, sample_out, |s, out| {
                    let x = &src.data[s * sample_in..(s + 1) * sample_in];
                    for c in 0..co {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut acc = 0.0;
                                let (ci_lo, ci_hi) = if depthwise { (c, c + 1) } else { (0, ci) };
                                for cin in ci_lo..ci_hi {
                                    let wrow = if depthwise {
                                        &wt[c * kh * kw..(c + 1) * kh * kw]
                                    } else {
                                        let rl = ci * kh * kw;
                                        &wt[c * rl + cin * kh * kw..c * rl + (cin + 1) * kh * kw]
                                    };
                                    for ky in 0..kh {
                                        let iy = oy * stride + ky;
                                        if iy < ph || iy - ph >= h {
                                            continue;
                                        }
                                        let iy = iy - ph;
                                        for kx in 0..kw {
                                            let ix = ox * stride + kx;
                                            if ix < pw || ix - pw >= w {
                                                continue;
                                            }
                                            let ix = ix - pw;
                                            acc += wrow[ky * kw + kx]
                                                * x[cin * h * w + iy * w + ix];
                                        }
                                    }
                                }
                                out[c * oh * ow + oy * ow + ox] = acc;
                            }
                        }
                    }
                });
            }
            Op::Norm { gamma, beta, stats } => {
                let m = (n * h * w) as f64;
                let (dst, src) = buf_pair(&mut ws.bufs, node.dst, node.src);
                dst.resize(n, ci, h, w);
                let plane = h * w;
                let sample = ci * plane;
                let (means, vars): (Vec<f64>, Vec<f64>) = match mode {
                    Mode::Train => {
                        let stats_vec = exec::map_indexed(ci, |c| {
                            let mut sum = 0.0;
                            let mut sumsq = 0.0;
                            for s in 0..n {
                                let base = s * sample + c * plane;
                                for v in &src.data[base..base + plane] {
                                    sum += v;
                                    sumsq += v * v;
                                }
                            }
                            let mean = sum / m;
                            (mean, (sumsq / m - mean * mean).max(0.0))
                        });
                        stats_vec.into_iter().unzip()
                    }
                    Mode::Eval => (
                        self.norms[stats].mean.clone(),
                        self.norms[stats].var.clone(),
                    ),
                };
                let invstd: Vec<f64> =
                    vars.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
                if mode == Mode::Train {
                    let st = &mut self.norms[stats];
                    for c in 0..ci {
                        st.mean[c] = (1.0 - NORM_MOMENTUM) * st.mean[c] + NORM_MOMENTUM * means[c];
                        st.var[c] = (1.0 - NORM_MOMENTUM) * st.var[c] + NORM_MOMENTUM * vars[c];
                    }
                }
                let saved = &mut ws.norm_saved[stats];
                saved.train_mode = mode == Mode::Train;
                saved.invstd = invstd.clone();
                saved.xhat.clear();
                saved.xhat.resize(src.data.len(), 0.0);
                let g = &self.params[gamma].data;
                let b = &self.params[beta].data;
                let xhat = &mut saved.xhat;
                // Fill xhat and output sample-by-sample.
                exec::for_each_chunk_mut(xhat, sample, |s, xh| {
                    let x = &src.data[s * sample..(s + 1) * sample];
                    for c in 0..ci {
                        let mu = means[c];
                        let is = invstd[c];
                        for i in 0..plane {
                            xh[c * plane + i] = (x[c * plane + i] - mu) * is;
                        }
                    }
                });
                exec::for_each_chunk_mut(&mut dst.data, sample, |s, out| {
                    let xh = &saved.xhat[s * sample..(s + 1) * sample];
                    for c in 0..ci {
                        for i in 0..plane {
                            out[c * plane + i] = g[c] * xh[c * plane + i] + b[c];
                        }
                    }
                });
            }
            Op::Gate { gate } => {
                let (dst, src) = buf_pair(&mut ws.bufs, node.dst, node.src);
                dst.resize(n, ci, h, w);
                let z = &self.gates[gate].z;
                let plane = h * w;
                let sample = ci * plane;
                exec::for_each_chunk_mut(&mut dst.data, sample, |s, out| {
                    let x = &src.data[s * sample..(s + 1) * sample];
                    for c in 0..ci {
                        for i in 0..plane {
                            out[c * plane + i] = z[c] * x[c * plane + i];
                        }
                    }
                });
            }
            Op::Relu => {
                let (dst, src) = buf_pair(&mut ws.bufs, node.dst, node.src);
                dst.resize(n, ci, h, w);
                let sample = ci * h * w;
                exec::for_each_chunk_mut(&mut dst.data, sample, |s, out| {
                    let x = &src.data[s * sample..(s + 1) * sample];
                    for (o, v) in out.iter_mut().zip(x) {
                        *o = v.max(0.0);
                    }
                });
            }
            Op::MaxPool => {
                let oh = h.div_ceil(2).max(1);
                let ow = w.div_ceil(2).max(1);
                let sample_out = ci * oh * ow;
                let sample_in = ci * h * w;
                {
                    let src = &ws.bufs[node.src];
                    let saved = &mut ws.pool_saved[ni];
                    saved.clear();
                    saved.resize(n * sample_out, 0);
                    exec::for_each_chunk_mut(saved, sample_out, |s, idxs| {
                        let x = &src.data[s * sample_in..(s + 1) * sample_in];
                        for c in 0..ci {
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let mut best = f64::NEG_INFINITY;
                                    let mut best_i = 0;
                                    for dy in 0..2 {
                                        let iy = oy * 2 + dy;
                                        if iy >= h {
                                            continue;
                                        }
                                        for dx in 0..2 {
                                            let ix = ox * 2 + dx;
                                            if ix >= w {
                                                continue;
                                            }
                                            let idx = c * h * w + iy * w + ix;
                                            if x[idx] > best {
                                                best = x[idx];
                                                best_i = idx;
                                            }
                                        }
                                    }
                                    idxs[c * oh * ow + oy * ow + ox] = best_i;
                                }
                            }
                        }
                    });
                }
                let saved: &[usize] = &ws.pool_saved[ni];
                let (dst, src) = buf_pair(&mut ws.bufs, node.dst, node.src);
                dst.resize(n, ci, oh, ow);
                exec::for_each_chunk_mut(&mut dst.data, sample_out, |s, out| {
                    let x = &src.data[s * sample_in..(s + 1) * sample_in];
                    let idxs = &saved[s * sample_out..(s + 1) * sample_out];
                    for (o, &i) in out.iter_mut().zip(idxs) {
                        *o = x[i];
                    }
                });
            }
            Op::GlobalAvgPool => {
                let (dst, src) = buf_pair(&mut ws.bufs, node.dst, node.src);
                dst.resize(n, ci, 1, 1);
                let plane = h * w;
                let sample = ci * plane;
                exec::for_each_chunk_mut(&mut dst.data, ci, |s, out| {
                    let x = &src.data[s * sample..(s + 1) * sample];
                    for (c, o) in out.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for v in &x[c * plane..(c + 1) * plane] {
                            acc += v;
                        }
                        *o = acc / plane as f64;
                    }
                });
            }
            Op::Add { rhs } => {
                let (dst, a, b) = buf_triple(&mut ws.bufs, node.dst, node.src, rhs);
                debug_assert_eq!(a.data.len(), b.data.len());
                dst.resize(n, ci, h, w);
                let sample = ci * h * w;
                exec::for_each_chunk_mut(&mut dst.data, sample, |s, out| {
                    let xa = &a.data[s * sample..(s + 1) * sample];
                    let xb = &b.data[s * sample..(s + 1) * sample];
                    for i in 0..out.len() {
                        out[i] = xa[i] + xb[i];
                    }
                });
            }
        }
    }

    /// Backward pass from the logits gradient. Parameter gradients accumulate
    /// into each tensor's `grad`; returns the per-gate gradient dE/dz.
    pub fn backward(&mut self, ws: &mut Workspace, dlogits: &Tensor4) -> Vec<Vec<f64>> {
        for (i, g) in ws.grads.iter_mut().enumerate() {
            let b = &ws.bufs[i];
            g.resize(b.n, b.c, b.h, b.w);
        }
        let last = self.plan.nodes.last().unwrap().dst;
        ws.grads[last].data.copy_from_slice(&dlogits.data);
        let mut gate_grads: Vec<Vec<f64>> =
            self.gates.iter().map(|g| vec![0.0; g.z.len()]).collect();
        for ni in (0..self.plan.nodes.len()).rev() {
            let node = self.plan.nodes[ni];
            self.backward_node(ws, ni, node, &mut gate_grads);
        }
        gate_grads
    }

    fn backward_node(
        &mut self,
        ws: &mut Workspace,
        ni: usize,
        node: Node,
        gate_grads: &mut [Vec<f64>],
    ) {
        let (n, ci, h, w) = {
            let s = &ws.bufs[node.src];
            (s.n, s.c, s.h, s.w)
        };
        match node.op {
            Op::Dense { w: wi, b: bi } => {
                let co = self.params[wi].rows;
                let in_len = ci * h * w;
                // dW, db
                {
                    let delta = &ws.grads[node.dst];
                    let x = &ws.bufs[node.src];
                    let wt = &mut self.params[wi];
                    exec::for_each_chunk_mut(&mut wt.grad, in_len, |o, gw| {
                        for s in 0..n {
                            let d = delta.data[s * co + o];
                            if d == 0.0 {
                                continue;
                            }
                            let xs = &x.data[s * in_len..(s + 1) * in_len];
                            for (g, xv) in gw.iter_mut().zip(xs) {
                                *g += d * xv;
                            }
                        }
                    });
                    let bt = &mut self.params[bi];
                    exec::for_each_chunk_mut(&mut bt.grad, 1, |o, gb| {
                        let mut acc = 0.0;
                        for s in 0..n {
                            acc += delta.data[s * co + o];
                        }
                        gb[0] += acc;
                    });
                }
                // dx
                let wt = &self.params[wi].data;
                let (dsrc, ddst) = buf_pair(&mut ws.grads, node.src, node.dst);
                exec::for_each_chunk_mut(&mut dsrc.data, in_len, |s, dx| {
                    let d = &ddst.data[s * co..(s + 1) * co];
                    for o in 0..co {
                        let dv = d[o];
                        if dv == 0.0 {
                            continue;
                        }
                        let row = &wt[o * in_len..(o + 1) * in_len];
                        for (g, wv) in dx.iter_mut().zip(row) {
                            *g += dv * wv;
                        }
                    }
                });
            }
            Op::Conv { w: wi, stride, kh, kw, depthwise } => {
                let co = self.params[wi].rows;
                let ph = (kh - 1) / 2;
                let pw = (kw - 1) / 2;
                let (oh, ow) = {
                    let d = &ws.bufs[node.dst];
                    (d.h, d.w)
                };
                let sample_in = ci * h * w;
                let sample_out = co * oh * ow;
                // dW
                {
                    let delta = &ws.grads[node.dst];
                    let x = &ws.bufs[node.src];
                    let wt = &mut self.params[wi];
                    let row_len = wt.row_len;
                    exec::for_each_chunk_mut(&mut wt.grad, row_len, |c, gw| {
                        for s in 0..n {
                            let xs = &x.data[s * sample_in..(s + 1) * sample_in];
                            let ds = &delta.data[s * sample_out..(s + 1) * sample_out];
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let d = ds[c * oh * ow + oy * ow + ox];
                                    if d == 0.0 {
                                        continue;
                                    }
                                    let (ci_lo, ci_hi) =
                                        if depthwise { (c, c + 1) } else { (0, ci) };
                                    for cin in ci_lo..ci_hi {
                                        let woff = if depthwise { 0 } else { cin * kh * kw };
                                        for ky in 0..kh {
                                            let iy = oy * stride + ky;
                                            if iy < ph || iy - ph >= h {
                                                continue;
                                            }
                                            let iy = iy - ph;
                                            for kx in 0..kw {
                                                let ix = ox * stride + kx;
                                                if ix < pw || ix - pw >= w {
                                                    continue;
                                                }
                                                let ix = ix - pw;
                                                gw[woff + ky * kw + kx] +=
                                                    d * xs[cin * h * w + iy * w + ix];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    });
                }
                // dx
                let wt = &self.params[wi].data;
                let (dsrc, ddst) = buf_pair(&mut ws.grads, node.src, node.dst);
                exec::for_each_chunk_mut(&mut dsrc.data, sample_in, |s, dx| {
                    let ds = &ddst.data[s * sample_out..(s + 1) * sample_out];
                    for c in 0..co {
                        let (ci_lo, ci_hi) = if depthwise { (c, c + 1) } else { (0, ci) };
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let d = ds[c * oh * ow + oy * ow + ox];
                                if d == 0.0 {
                                    continue;
                                }
                                for cin in ci_lo..ci_hi {
                                    let wrow = if depthwise {
                                        &wt[c * kh * kw..(c + 1) * kh * kw]
                                    } else {
                                        let rl = ci * kh * kw;
                                        &wt[c * rl + cin * kh * kw..c * rl + (cin + 1) * kh * kw]
                                    };
                                    for ky in 0..kh {
                                        let iy = oy * stride + ky;
                                        if iy < ph || iy - ph >= h {
                                            continue;
                                        }
                                        let iy = iy - ph;
                                        for kx in 0..kw {
                                            let ix = ox * stride + kx;
                                            if ix < pw || ix - pw >= w {
                                                continue;
                                            }
                                            let ix = ix - pw;
                                            dx[cin * h * w + iy * w + ix] +=
                                                d * wrow[ky * kw + kx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::Norm { gamma, beta, stats } => {
                let plane = h * w;
                let sample = ci * plane;
                let m = (n * plane) as f64;
                let saved = &ws.norm_saved[stats];
                debug_assert!(saved.train_mode, "backward requires a train-mode forward");
                // Channel reductions: dgamma, dbeta, and the two coupling sums.
                let delta = &ws.grads[node.dst];
                let sums = exec::map_indexed(ci, |c| {
                    let mut sd = 0.0;
                    let mut sdx = 0.0;
                    for s in 0..n {
                        let base = s * sample + c * plane;
                        for i in 0..plane {
                            let d = delta.data[base + i];
                            sd += d;
                            sdx += d * saved.xhat[base + i];
                        }
                    }
                    (sd, sdx)
                });
                {
                    let gt = &mut self.params[gamma];
                    for c in 0..ci {
                        gt.grad[c] += sums[c].1;
                    }
                }
                {
                    let bt = &mut self.params[beta];
                    for c in 0..ci {
                        bt.grad[c] += sums[c].0;
                    }
                }
                let g = &self.params[gamma].data;
                let saved = &ws.norm_saved[stats];
                let (dsrc, ddst) = buf_pair(&mut ws.grads, node.src, node.dst);
                exec::for_each_chunk_mut(&mut dsrc.data, sample, |s, dx| {
                    let d = &ddst.data[s * sample..(s + 1) * sample];
                    let xh = &saved.xhat[s * sample..(s + 1) * sample];
                    for c in 0..ci {
                        let (sd, sdx) = sums[c];
                        let k = g[c] * saved.invstd[c];
                        for i in 0..plane {
                            let idx = c * plane + i;
                            dx[idx] += k * (d[idx] - sd / m - xh[idx] * sdx / m);
                        }
                    }
                });
            }
            Op::Gate { gate } => {
                let plane = h * w;
                let sample = ci * plane;
                let delta = &ws.grads[node.dst];
                let x = &ws.bufs[node.src];
                let dz = exec::map_indexed(ci, |c| {
                    let mut acc = 0.0;
                    for s in 0..n {
                        let base = s * sample + c * plane;
                        for i in 0..plane {
                            acc += delta.data[base + i] * x.data[base + i];
                        }
                    }
                    acc
                });
                for (gsum, d) in gate_grads[gate].iter_mut().zip(&dz) {
                    *gsum += d;
                }
                let z = &self.gates[gate].z;
                let (dsrc, ddst) = buf_pair(&mut ws.grads, node.src, node.dst);
                exec::for_each_chunk_mut(&mut dsrc.data, sample, |s, dx| {
                    let d = &ddst.data[s * sample..(s + 1) * sample];
                    for c in 0..ci {
                        for i in 0..plane {
                            dx[c * plane + i] += z[c] * d[c * plane + i];
                        }
                    }
                });
            }
            Op::Relu => {
                let sample = ci * h * w;
                let y = &ws.bufs[node.dst];
                let (dsrc, ddst) = buf_pair(&mut ws.grads, node.src, node.dst);
                let ydata = &y.data;
                exec::for_each_chunk_mut(&mut dsrc.data, sample, |s, dx| {
                    let d = &ddst.data[s * sample..(s + 1) * sample];
                    let ys = &ydata[s * sample..(s + 1) * sample];
                    for i in 0..dx.len() {
                        if ys[i] > 0.0 {
                            dx[i] += d[i];
                        }
                    }
                });
            }
            Op::MaxPool => {
                let (oh, ow) = {
                    let d = &ws.bufs[node.dst];
                    (d.h, d.w)
                };
                let sample_in = ci * h * w;
                let sample_out = ci * oh * ow;
                let saved = &ws.pool_saved[ni];
                let (dsrc, ddst) = buf_pair(&mut ws.grads, node.src, node.dst);
                exec::for_each_chunk_mut(&mut dsrc.data, sample_in, |s, dx| {
                    let d = &ddst.data[s * sample_out..(s + 1) * sample_out];
                    let idxs = &saved[s * sample_out..(s + 1) * sample_out];
                    for (dv, &i) in d.iter().zip(idxs) {
                        dx[i] += dv;
                    }
                });
            }
            Op::GlobalAvgPool => {
                let plane = h * w;
                let sample = ci * plane;
                let (dsrc, ddst) = buf_pair(&mut ws.grads, node.src, node.dst);
                exec::for_each_chunk_mut(&mut dsrc.data, sample, |s, dx| {
                    let d = &ddst.data[s * ci..(s + 1) * ci];
                    for c in 0..ci {
                        let dv = d[c] / plane as f64;
                        for i in 0..plane {
                            dx[c * plane + i] += dv;
                        }
                    }
                });
            }
            Op::Add { rhs } => {
                let sample = ci * h * w;
                {
                    let (dsrc, ddst) = buf_pair(&mut ws.grads, node.src, node.dst);
                    exec::for_each_chunk_mut(&mut dsrc.data, sample, |s, dx| {
                        let d = &ddst.data[s * sample..(s + 1) * sample];
                        for i in 0..dx.len() {
                            dx[i] += d[i];
                        }
                    });
                }
                let (drhs, ddst) = buf_pair(&mut ws.grads, rhs, node.dst);
                exec::for_each_chunk_mut(&mut drhs.data, sample, |s, dx| {
                    let d = &ddst.data[s * sample..(s + 1) * sample];
                    for i in 0..dx.len() {
                        dx[i] += d[i];
                    }
                });
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            for g in p.grad.iter_mut() {
                *g = 0.0;
            }
        }
    }

    /// Set an alive gate to an arbitrary value (finite-difference probes).
    pub fn set_gate_value(&mut self, layer: usize, channel: usize, value: f64) {
        self.gates[layer].z[channel] = value;
    }
}

/// Mutable borrow of `bufs[m]` together with a shared borrow of `bufs[r]`.
fn buf_pair(bufs: &mut [Tensor4], m: usize, r: usize) -> (&mut Tensor4, &Tensor4) {
    debug_assert_ne!(m, r);
    if m < r {
        let (lo, hi) = bufs.split_at_mut(r);
        (&mut lo[m], &hi[0])
    } else {
        let (lo, hi) = bufs.split_at_mut(m);
        (&mut hi[0], &lo[r])
    }
}

fn buf_triple(
    bufs: &mut [Tensor4],
    m: usize,
    r1: usize,
    r2: usize,
) -> (&mut Tensor4, &Tensor4, &Tensor4) {
    debug_assert!(m > r1 && m > r2 && r1 != r2);
    let (lo, hi) = bufs.split_at_mut(m);
    (&mut hi[0], &lo[r1], &lo[r2])
}

/// Softmax cross-entropy: mean loss over the batch and the logits gradient.
pub fn softmax_cross_entropy(logits: &Tensor4, labels: &[u32]) -> (f64, Tensor4) {
    let n = logits.n;
    let k = logits.c;
    let mut grad = Tensor4::default();
    grad.resize(n, k, 1, 1);
    let ldata = &logits.data;
    exec::for_each_chunk_mut(&mut grad.data, k, |s, g| {
        let row = &ldata[s * k..(s + 1) * k];
        let lse = log_sum_exp(row);
        let y = labels[s] as usize;
        for (j, gv) in g.iter_mut().enumerate() {
            let p = (row[j] - lse).exp();
            *gv = (p - if j == y { 1.0 } else { 0.0 }) / n as f64;
        }
    });
    // Loss summed sequentially so the reduction order is fixed.
    let mut total = 0.0;
    for s in 0..n {
        let row = &logits.data[s * k..(s + 1) * k];
        total += log_sum_exp(row) - row[labels[s] as usize];
    }
    (total / n as f64, grad)
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let maxv = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row {
        sum += (v - maxv).exp();
    }
    maxv + sum.ln()
}
