//! The windowed raceline network: two dilated residual TCN encoders, convolutional and
//! attention fusion, and a two-layer MLP head.
//!
//! All parameters live in one flat vector whose layout is fixed by the [`Descriptor`];
//! batch-norm running statistics live in a second flat vector ("buffers").

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{
    attention_backward, attention_forward, bn_backward, bn_infer, bn_train, conv_backward,
    conv_forward, gemm, relu, relu_backward, AttnCache, BnCache, ConvShape, Dims,
};
use super::windows::{FeatureStats, WindowSample, WindowShape};
use crate::error::{Error, Result};

pub const HISTORY_FEATURES: usize = 4;
pub const FUTURE_FEATURES: usize = 3;

/// Architecture. Fully determines every tensor shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Descriptor {
    pub history_len: usize,
    pub future_len: usize,
    pub target_len: usize,
    pub channels: usize,
    pub kernel: usize,
    /// Dilations of the four convolutions (two per residual block).
    pub dilations: Vec<usize>,
    pub heads: usize,
    pub hidden: usize,
}

impl Default for Descriptor {
    fn default() -> Self {
        Self {
            history_len: 50,
            future_len: 100,
            target_len: 25,
            channels: 64,
            kernel: 3,
            dilations: vec![1, 2, 4, 8],
            heads: 4,
            hidden: 256,
        }
    }
}

impl Descriptor {
    pub fn window(&self) -> WindowShape {
        WindowShape {
            history: self.history_len,
            future: self.future_len,
            target: self.target_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.window().validate()?;
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.channels == 0 || self.hidden == 0 || self.heads == 0 {
            return bad("channels, hidden and heads must be >= 1".into());
        }
        if self.channels % self.heads != 0 {
            return bad(format!("{} channels do not split into {} heads", self.channels, self.heads));
        }
        if self.kernel % 2 == 0 {
            return bad(format!("kernel must be odd, got {}", self.kernel));
        }
        if self.dilations.len() != 4 || self.dilations.contains(&0) {
            return bad(format!("need four dilations >= 1, got {:?}", self.dilations));
        }
        Ok(())
    }

    fn mlp_inputs(&self) -> usize {
        (2 * self.channels + FUTURE_FEATURES) * self.target_len
    }
}

/// Name and shape of one stored tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Default)]
struct Builder {
    infos: Vec<TensorInfo>,
    len: usize,
}

impl Builder {
    fn push(&mut self, name: String, shape: &[usize]) -> Range<usize> {
        let size: usize = shape.iter().product();
        let r = self.len..self.len + size;
        self.len += size;
        self.infos.push(TensorInfo {
            name,
            shape: shape.to_vec(),
        });
        r
    }
}

#[derive(Debug, Clone)]
struct EncoderLayout {
    proj_w: Range<usize>,
    proj_b: Range<usize>,
    conv: [Range<usize>; 4],
    gamma: [Range<usize>; 4],
    beta: [Range<usize>; 4],
    run_mean: [Range<usize>; 4],
    run_var: [Range<usize>; 4],
}

impl EncoderLayout {
    fn new(prefix: &str, cin: usize, d: &Descriptor, p: &mut Builder, b: &mut Builder) -> Self {
        let c = d.channels;
        let proj_w = p.push(format!("{prefix}.proj.weight"), &[c, cin, 1]);
        let proj_b = p.push(format!("{prefix}.proj.bias"), &[c]);
        let mut conv = Vec::new();
        let mut gamma = Vec::new();
        let mut beta = Vec::new();
        let mut run_mean = Vec::new();
        let mut run_var = Vec::new();
        for i in 0..4 {
            let tag = format!("{prefix}.block{}.conv{}", i / 2, i % 2);
            conv.push(p.push(format!("{tag}.weight"), &[c, c, d.kernel]));
            gamma.push(p.push(format!("{tag}.bn.gamma"), &[c]));
            beta.push(p.push(format!("{tag}.bn.beta"), &[c]));
            run_mean.push(b.push(format!("{tag}.bn.running_mean"), &[c]));
            run_var.push(b.push(format!("{tag}.bn.running_var"), &[c]));
        }
        let arr = |v: Vec<Range<usize>>| -> [Range<usize>; 4] { v.try_into().expect("four layers") };
        Self {
            proj_w,
            proj_b,
            conv: arr(conv),
            gamma: arr(gamma),
            beta: arr(beta),
            run_mean: arr(run_mean),
            run_var: arr(run_var),
        }
    }
}

/// Offsets of every tensor in the flat parameter and buffer vectors.
#[derive(Debug, Clone)]
pub struct Layout {
    hist: EncoderLayout,
    fut: EncoderLayout,
    fuse_w: Range<usize>,
    fuse_b: Range<usize>,
    attn_w: [Range<usize>; 4],
    attn_b: [Range<usize>; 4],
    mlp1_w: Range<usize>,
    mlp1_b: Range<usize>,
    mlp2_w: Range<usize>,
    mlp2_b: Range<usize>,
    pub params: Vec<TensorInfo>,
    pub buffers: Vec<TensorInfo>,
    pub param_len: usize,
    pub buffer_len: usize,
}

impl Layout {
    pub fn new(d: &Descriptor) -> Self {
        let mut p = Builder::default();
        let mut b = Builder::default();
        let c = d.channels;
        let hist = EncoderLayout::new("history", HISTORY_FEATURES, d, &mut p, &mut b);
        let fut = EncoderLayout::new("future", FUTURE_FEATURES, d, &mut p, &mut b);
        let fuse_w = p.push("fusion.conv.weight".into(), &[c, c, d.kernel]);
        let fuse_b = p.push("fusion.conv.bias".into(), &[c]);
        let mut attn_w = Vec::new();
        let mut attn_b = Vec::new();
        for name in ["query", "key", "value", "output"] {
            attn_w.push(p.push(format!("attention.{name}.weight"), &[c, c, 1]));
            attn_b.push(p.push(format!("attention.{name}.bias"), &[c]));
        }
        let mlp1_w = p.push("head.fc1.weight".into(), &[d.hidden, d.mlp_inputs()]);
        let mlp1_b = p.push("head.fc1.bias".into(), &[d.hidden]);
        let mlp2_w = p.push("head.fc2.weight".into(), &[d.target_len, d.hidden]);
        let mlp2_b = p.push("head.fc2.bias".into(), &[d.target_len]);
        Self {
            hist,
            fut,
            fuse_w,
            fuse_b,
            attn_w: attn_w.try_into().expect("four projections"),
            attn_b: attn_b.try_into().expect("four projections"),
            mlp1_w,
            mlp1_b,
            mlp2_w,
            mlp2_b,
            param_len: p.len,
            buffer_len: b.len,
            params: p.infos,
            buffers: b.infos,
        }
    }
}

/// Provenance of a trained model.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub split_id: String,
    pub epoch: usize,
    /// Ids of the circuits the model was fitted on, so evaluation can refuse them.
    #[serde(default)]
    pub train_tracks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetWeights {
    pub descriptor: Descriptor,
    pub stats: FeatureStats,
    pub meta: TrainMeta,
    pub params: Vec<f64>,
    pub buffers: Vec<f64>,
}

impl NetWeights {
    /// He-uniform initialization for layers followed by ReLU, Glorot-uniform for the
    /// linear output layers; biases and BN shifts zero, BN scales one.
    pub fn init(descriptor: &Descriptor, stats: FeatureStats, seed: u64) -> Result<Self> {
        descriptor.validate()?;
        let layout = Layout::new(descriptor);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.param_len];
        let mut fill = |r: &Range<usize>, fan_in: usize, fan_out: Option<usize>, rng: &mut ChaCha8Rng| {
            let bound = match fan_out {
                None => (6.0 / fan_in as f64).sqrt(),
                Some(o) => (6.0 / (fan_in + o) as f64).sqrt(),
            };
            for v in &mut params[r.clone()] {
                *v = rng.random_range(-bound..bound);
            }
        };
        let (c, k) = (descriptor.channels, descriptor.kernel);
        for (enc, cin) in [(&layout.hist, HISTORY_FEATURES), (&layout.fut, FUTURE_FEATURES)] {
            fill(&enc.proj_w, cin, None, &mut rng);
            for conv in &enc.conv {
                fill(conv, c * k, None, &mut rng);
            }
        }
        fill(&layout.fuse_w, c * k, None, &mut rng);
        for w in &layout.attn_w {
            fill(w, c, Some(c), &mut rng);
        }
        fill(&layout.mlp1_w, descriptor.mlp_inputs(), None, &mut rng);
        fill(&layout.mlp2_w, descriptor.hidden, Some(descriptor.target_len), &mut rng);
        for enc in [&layout.hist, &layout.fut] {
            for g in &enc.gamma {
                params[g.clone()].iter_mut().for_each(|v| *v = 1.0);
            }
        }
        let mut buffers = vec![0.0; layout.buffer_len];
        for enc in [&layout.hist, &layout.fut] {
            for r in &enc.run_var {
                buffers[r.clone()].iter_mut().for_each(|v| *v = 1.0);
            }
        }
        Ok(Self {
            descriptor: descriptor.clone(),
            stats,
            meta: TrainMeta {
                seed,
                ..TrainMeta::default()
            },
            params,
            buffers,
        })
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.descriptor)
    }

    /// Rounds every stored value to `f32`, the precision of the weight file, so a saved
    /// and reloaded model computes exactly what this one computes.
    pub fn round_to_storage(&mut self) {
        for v in self.params.iter_mut().chain(self.buffers.iter_mut()) {
            *v = *v as f32 as f64;
        }
    }

    /// Zeroes the output layer (weights and bias).
    pub fn zero_output_layer(&mut self) {
        let layout = self.layout();
        for r in [layout.mlp2_w, layout.mlp2_b] {
            self.params[r].iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Normalized inputs of a batch in the channel-major batched layout.
pub struct BatchInput {
    pub batch: usize,
    /// `4 x batch*H`.
    pub hist: Vec<f64>,
    /// `3 x batch*F`.
    pub fut: Vec<f64>,
}

impl BatchInput {
    pub fn from_samples(d: &Descriptor, samples: &[&WindowSample]) -> Result<Self> {
        let (h, f, b) = (d.history_len, d.future_len, samples.len());
        let mut hist = vec![0.0; HISTORY_FEATURES * b * h];
        let mut fut = vec![0.0; FUTURE_FEATURES * b * f];
        for (s, w) in samples.iter().enumerate() {
            if w.history.len() != h || w.future.len() != f {
                return Err(Error::ShapeMismatch(format!(
                    "window has history {} / future {}, model expects {h} / {f}",
                    w.history.len(),
                    w.future.len()
                )));
            }
            for (t, row) in w.history.iter().enumerate() {
                for (c, v) in row.iter().enumerate() {
                    hist[c * b * h + s * h + t] = *v;
                }
            }
            for (t, row) in w.future.iter().enumerate() {
                for (c, v) in row.iter().enumerate() {
                    fut[c * b * f + s * f + t] = *v;
                }
            }
        }
        Ok(Self { batch: b, hist, fut })
    }
}

/// Batch statistics (training) or stored running statistics (inference).
pub enum Mode<'a> {
    Train { running: Option<&'a mut [f64]> },
    Infer,
}

struct EncoderCache {
    x: Vec<f64>,
    /// Block inputs and the encoder output: `a[0]`, `a[1]`, `a[2]`.
    a: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    bn: Vec<BnCache>,
}

fn encoder_forward(
    x: Vec<f64>,
    cin: usize,
    enc: &EncoderLayout,
    d: &Descriptor,
    p: &[f64],
    buffers: Option<&[f64]>,
    mut running: Option<&mut [f64]>,
    len: usize,
    batch: usize,
    caching: bool,
) -> (Vec<f64>, Option<EncoderCache>) {
    let c = d.channels;
    let dims = Dims::new(c, batch, len);
    let proj = ConvShape { cin, cout: c, kernel: 1, dilation: 1 };
    let mut a = conv_forward(&p[enc.proj_w.clone()], Some(&p[enc.proj_b.clone()]), &x, &proj, Dims::new(cin, batch, len));
    let mut cache = EncoderCache {
        x: Vec::new(),
        a: Vec::new(),
        r: Vec::new(),
        bn: Vec::new(),
    };
    let mut norm = |i: usize, z: Vec<f64>, cache: &mut EncoderCache| -> Vec<f64> {
        let (g, b) = (&p[enc.gamma[i].clone()], &p[enc.beta[i].clone()]);
        match buffers {
            Some(buf) => bn_infer(&z, g, b, &buf[enc.run_mean[i].clone()], &buf[enc.run_var[i].clone()], dims),
            None => {
                let run = running.as_deref_mut().map(|r| {
                    let (lo, hi) = (enc.run_mean[i].start, enc.run_var[i].end);
                    let slice = &mut r[lo..hi];
                    slice.split_at_mut(enc.run_mean[i].len())
                });
                let (y, bc) = bn_train(&z, g, b, dims, run);
                if caching {
                    cache.bn.push(bc);
                }
                y
            }
        }
    };
    for block in 0..2 {
        let i0 = 2 * block;
        let s0 = ConvShape { cin: c, cout: c, kernel: d.kernel, dilation: d.dilations[i0] };
        let s1 = ConvShape { cin: c, cout: c, kernel: d.kernel, dilation: d.dilations[i0 + 1] };
        let z1 = conv_forward(&p[enc.conv[i0].clone()], None, &a, &s0, dims);
        let mut r1 = norm(i0, z1, &mut cache);
        relu(&mut r1);
        let z2 = conv_forward(&p[enc.conv[i0 + 1].clone()], None, &r1, &s1, dims);
        let n2 = norm(i0 + 1, z2, &mut cache);
        let mut next: Vec<f64> = a.iter().zip(&n2).map(|(u, v)| u + v).collect();
        relu(&mut next);
        if caching {
            cache.a.push(std::mem::take(&mut a));
            cache.r.push(r1);
        }
        a = next;
    }
    if caching {
        cache.a.push(a.clone());
        cache.x = x;
        (a, Some(cache))
    } else {
        (a, None)
    }
}

#[allow(clippy::too_many_arguments)]
fn encoder_backward(
    mut da: Vec<f64>,
    cin: usize,
    enc: &EncoderLayout,
    d: &Descriptor,
    p: &[f64],
    g: &mut [f64],
    cache: &EncoderCache,
    len: usize,
    batch: usize,
) -> Vec<f64> {
    let c = d.channels;
    let dims = Dims::new(c, batch, len);
    for block in (0..2).rev() {
        let i0 = 2 * block;
        let s0 = ConvShape { cin: c, cout: c, kernel: d.kernel, dilation: d.dilations[i0] };
        let s1 = ConvShape { cin: c, cout: c, kernel: d.kernel, dilation: d.dilations[i0 + 1] };
        relu_backward(&mut da, &cache.a[block + 1]);
        let dn2 = &da;
        let (dg, db) = split_two(g, &enc.gamma[i0 + 1], &enc.beta[i0 + 1]);
        let dz2 = bn_backward(dn2, &p[enc.gamma[i0 + 1].clone()], &cache.bn[i0 + 1], dims, dg, db);
        let r1 = &cache.r[block];
        let mut dr1 = conv_backward(&p[enc.conv[i0 + 1].clone()], r1, &dz2, &s1, dims, &mut g[enc.conv[i0 + 1].clone()], None);
        relu_backward(&mut dr1, r1);
        let (dg, db) = split_two(g, &enc.gamma[i0], &enc.beta[i0]);
        let dz1 = bn_backward(&dr1, &p[enc.gamma[i0].clone()], &cache.bn[i0], dims, dg, db);
        let dprev = conv_backward(&p[enc.conv[i0].clone()], &cache.a[block], &dz1, &s0, dims, &mut g[enc.conv[i0].clone()], None);
        da.iter_mut().zip(&dprev).for_each(|(u, v)| *u += v);
    }
    let proj = ConvShape { cin, cout: c, kernel: 1, dilation: 1 };
    let (dw, dbias) = split_two(g, &enc.proj_w, &enc.proj_b);
    conv_backward(&p[enc.proj_w.clone()], &cache.x, &da, &proj, Dims::new(cin, batch, len), dw, Some(dbias))
}

/// Two disjoint mutable sub-slices of the gradient vector.
fn split_two<'a>(g: &'a mut [f64], a: &Range<usize>, b: &Range<usize>) -> (&'a mut [f64], &'a mut [f64]) {
    assert!(a.end <= b.start || b.end <= a.start, "overlapping ranges");
    if a.end <= b.start {
        let (lo, hi) = g.split_at_mut(b.start);
        (&mut lo[a.clone()], &mut hi[..b.len()])
    } else {
        let (lo, hi) = g.split_at_mut(a.start);
        (&mut hi[..a.len()], &mut lo[b.clone()])
    }
}

/// Columns `[from, from + take)` of every segment of length `len`.
fn gather(x: &[f64], channels: usize, batch: usize, len: usize, from: usize, take: usize) -> Vec<f64> {
    let mut out = vec![0.0; channels * batch * take];
    for c in 0..channels {
        for b in 0..batch {
            let src = c * batch * len + b * len + from;
            let dst = c * batch * take + b * take;
            out[dst..dst + take].copy_from_slice(&x[src..src + take]);
        }
    }
    out
}

fn scatter_add(dx: &mut [f64], g: &[f64], channels: usize, batch: usize, len: usize, from: usize, take: usize) {
    for c in 0..channels {
        for b in 0..batch {
            let src = c * batch * take + b * take;
            let dst = c * batch * len + b * len + from;
            dx[dst..dst + take].iter_mut().zip(&g[src..src + take]).for_each(|(u, v)| *u += v);
        }
    }
}

/// Forward intermediates kept for the backward pass.
pub struct Tape {
    batch: usize,
    hist: EncoderCache,
    fut: EncoderCache,
    cat: Vec<f64>,
    fused_full: Vec<f64>,
    q_in: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    attn: AttnCache,
    o: Vec<f64>,
    m: Vec<f64>,
    h: Vec<f64>,
}

/// Predicted offsets in meters, `batch x T` row-major, plus the tape when training.
pub fn forward(weights: &NetWeights, input: &BatchInput, mode: Mode<'_>) -> (Vec<f64>, Option<Tape>) {
    let d = &weights.descriptor;
    let layout = weights.layout();
    let p = &weights.params;
    let (c, hl, fl, tl, b) = (d.channels, d.history_len, d.future_len, d.target_len, input.batch);
    let (buffers, mut running, caching) = match mode {
        Mode::Infer => (Some(weights.buffers.as_slice()), None, false),
        Mode::Train { running } => (None, running, true),
    };
    let (eh, hist_cache) = encoder_forward(
        input.hist.clone(), HISTORY_FEATURES, &layout.hist, d, p, buffers, running.as_deref_mut(), hl, b, caching,
    );
    let (ef, fut_cache) = encoder_forward(
        input.fut.clone(), FUTURE_FEATURES, &layout.fut, d, p, buffers, running.as_deref_mut(), fl, b, caching,
    );

    // convolutional fusion over the time-concatenated encodings
    let cl = hl + fl;
    let mut cat = vec![0.0; c * b * cl];
    for ch in 0..c {
        for s in 0..b {
            let dst = ch * b * cl + s * cl;
            cat[dst..dst + hl].copy_from_slice(&eh[ch * b * hl + s * hl..ch * b * hl + (s + 1) * hl]);
            cat[dst + hl..dst + cl].copy_from_slice(&ef[ch * b * fl + s * fl..ch * b * fl + (s + 1) * fl]);
        }
    }
    let fuse = ConvShape { cin: c, cout: c, kernel: d.kernel, dilation: 1 };
    let mut fused_full = conv_forward(&p[layout.fuse_w.clone()], Some(&p[layout.fuse_b.clone()]), &cat, &fuse, Dims::new(c, b, cl));
    relu(&mut fused_full);
    let fc = gather(&fused_full, c, b, cl, hl, tl);

    // attention: future encoding as queries, history encoding as keys and values
    let lin = ConvShape { cin: c, cout: c, kernel: 1, dilation: 1 };
    let q_in = gather(&ef, c, b, fl, 0, tl);
    let proj = |i: usize, x: &[f64], len: usize| {
        conv_forward(&p[layout.attn_w[i].clone()], Some(&p[layout.attn_b[i].clone()]), x, &lin, Dims::new(c, b, len))
    };
    let q = proj(0, &q_in, tl);
    let k = proj(1, &eh, hl);
    let v = proj(2, &eh, hl);
    let (o, attn) = attention_forward(&q, &k, &v, c, d.heads, b, tl, hl);
    let fa = proj(3, &o, tl);

    // flatten: [conv fusion | attention | raw target geometry] per sample
    let dm = d.mlp_inputs();
    let mut m = vec![0.0; b * dm];
    for s in 0..b {
        let row = &mut m[s * dm..(s + 1) * dm];
        for ch in 0..c {
            row[ch * tl..(ch + 1) * tl].copy_from_slice(&fc[ch * b * tl + s * tl..ch * b * tl + (s + 1) * tl]);
            let off = (c + ch) * tl;
            row[off..off + tl].copy_from_slice(&fa[ch * b * tl + s * tl..ch * b * tl + (s + 1) * tl]);
        }
        for f in 0..FUTURE_FEATURES {
            let off = (2 * c + f) * tl;
            row[off..off + tl].copy_from_slice(&input.fut[f * b * fl + s * fl..f * b * fl + s * fl + tl]);
        }
    }
    let mut h = vec![0.0; b * d.hidden];
    gemm(b, dm, d.hidden, &m, false, &p[layout.mlp1_w.clone()], true, 0.0, &mut h);
    let b1 = &p[layout.mlp1_b.clone()];
    h.chunks_mut(d.hidden).for_each(|row| row.iter_mut().zip(b1).for_each(|(u, v)| *u += v));
    relu(&mut h);
    let mut y = vec![0.0; b * tl];
    gemm(b, d.hidden, tl, &h, false, &p[layout.mlp2_w.clone()], true, 0.0, &mut y);
    let b2 = &p[layout.mlp2_b.clone()];
    let scale = weights.stats.offset_scale;
    y.chunks_mut(tl).for_each(|row| row.iter_mut().zip(b2).for_each(|(u, v)| *u = (*u + v) * scale));

    let tape = match (hist_cache, fut_cache) {
        (Some(hist), Some(fut)) => Some(Tape {
            batch: b,
            hist,
            fut,
            cat,
            fused_full,
            q_in,
            q,
            k,
            v,
            attn,
            o,
            m,
            h,
        }),
        _ => None,
    };
    (y, tape)
}

/// Input gradients of a backward pass (normalized input space).
pub struct InputGrads {
    pub hist: Vec<f64>,
    pub fut: Vec<f64>,
}

/// Accumulates `d loss / d params` into `grad` given `dy = d loss / d output` (meters).
pub fn backward(weights: &NetWeights, tape: &Tape, dy: &[f64], grad: &mut [f64]) -> InputGrads {
    let d = &weights.descriptor;
    let layout = weights.layout();
    let p = &weights.params;
    let (c, hl, fl, tl, b) = (d.channels, d.history_len, d.future_len, d.target_len, tape.batch);
    let dm = d.mlp_inputs();
    let scale = weights.stats.offset_scale;
    let dy: Vec<f64> = dy.iter().map(|v| v * scale).collect();

    // head
    for row in dy.chunks(tl) {
        grad[layout.mlp2_b.clone()].iter_mut().zip(row).for_each(|(u, v)| *u += v);
    }
    gemm(tl, b, d.hidden, &dy, true, &tape.h, false, 1.0, &mut grad[layout.mlp2_w.clone()]);
    let mut dh = vec![0.0; b * d.hidden];
    gemm(b, tl, d.hidden, &dy, false, &p[layout.mlp2_w.clone()], false, 0.0, &mut dh);
    relu_backward(&mut dh, &tape.h);
    for row in dh.chunks(d.hidden) {
        grad[layout.mlp1_b.clone()].iter_mut().zip(row).for_each(|(u, v)| *u += v);
    }
    gemm(d.hidden, b, dm, &dh, true, &tape.m, false, 1.0, &mut grad[layout.mlp1_w.clone()]);
    let mut dmv = vec![0.0; b * dm];
    gemm(b, d.hidden, dm, &dh, false, &p[layout.mlp1_w.clone()], false, 0.0, &mut dmv);

    // unflatten
    let mut dfc = vec![0.0; c * b * tl];
    let mut dfa = vec![0.0; c * b * tl];
    let mut dfut = vec![0.0; FUTURE_FEATURES * b * fl];
    for s in 0..b {
        let row = &dmv[s * dm..(s + 1) * dm];
        for ch in 0..c {
            dfc[ch * b * tl + s * tl..ch * b * tl + (s + 1) * tl].copy_from_slice(&row[ch * tl..(ch + 1) * tl]);
            let off = (c + ch) * tl;
            dfa[ch * b * tl + s * tl..ch * b * tl + (s + 1) * tl].copy_from_slice(&row[off..off + tl]);
        }
        for f in 0..FUTURE_FEATURES {
            let off = (2 * c + f) * tl;
            dfut[f * b * fl + s * fl..f * b * fl + s * fl + tl].copy_from_slice(&row[off..off + tl]);
        }
    }

    // attention branch
    let lin = ConvShape { cin: c, cout: c, kernel: 1, dilation: 1 };
    let proj_back = |i: usize, x: &[f64], dout: &[f64], len: usize, grad: &mut [f64]| {
        let (dw, db) = split_two(grad, &layout.attn_w[i], &layout.attn_b[i]);
        conv_backward(&p[layout.attn_w[i].clone()], x, dout, &lin, Dims::new(c, b, len), dw, Some(db))
    };
    let do_ = proj_back(3, &tape.o, &dfa, tl, grad);
    let (dq, dk, dv) = attention_backward(&do_, &tape.q, &tape.k, &tape.v, &tape.attn, c, d.heads, b, tl, hl);
    let dq_in = proj_back(0, &tape.q_in, &dq, tl, grad);
    let mut deh = proj_back(1, &tape.hist.a[2], &dk, hl, grad);
    let dv_in = proj_back(2, &tape.hist.a[2], &dv, hl, grad);
    deh.iter_mut().zip(&dv_in).for_each(|(u, v)| *u += v);
    let mut def = vec![0.0; c * b * fl];
    scatter_add(&mut def, &dq_in, c, b, fl, 0, tl);

    // convolutional fusion branch
    let cl = hl + fl;
    let mut dfull = vec![0.0; c * b * cl];
    scatter_add(&mut dfull, &dfc, c, b, cl, hl, tl);
    relu_backward(&mut dfull, &tape.fused_full);
    let fuse = ConvShape { cin: c, cout: c, kernel: d.kernel, dilation: 1 };
    let (dw, db) = split_two(grad, &layout.fuse_w, &layout.fuse_b);
    let dcat = conv_backward(&p[layout.fuse_w.clone()], &tape.cat, &dfull, &fuse, Dims::new(c, b, cl), dw, Some(db));
    for ch in 0..c {
        for s in 0..b {
            let src = ch * b * cl + s * cl;
            deh[ch * b * hl + s * hl..ch * b * hl + (s + 1) * hl]
                .iter_mut()
                .zip(&dcat[src..src + hl])
                .for_each(|(u, v)| *u += v);
            def[ch * b * fl + s * fl..ch * b * fl + (s + 1) * fl]
                .iter_mut()
                .zip(&dcat[src + hl..src + cl])
                .for_each(|(u, v)| *u += v);
        }
    }

    let dhist = encoder_backward(deh, HISTORY_FEATURES, &layout.hist, d, p, grad, &tape.hist, hl, b);
    let dfut_enc = encoder_backward(def, FUTURE_FEATURES, &layout.fut, d, p, grad, &tape.fut, fl, b);
    dfut.iter_mut().zip(&dfut_enc).for_each(|(u, v)| *u += v);
    InputGrads { hist: dhist, fut: dfut }
}

/// Inference on a set of windows, `T` offsets (m) per window.
pub fn predict_windows(weights: &NetWeights, samples: &[&WindowSample]) -> Result<Vec<Vec<f64>>> {
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let input = BatchInput::from_samples(&weights.descriptor, samples)?;
    let (y, _) = forward(weights, &input, Mode::Infer);
    Ok(y.chunks(weights.descriptor.target_len).map(|r| r.to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::loss::{hybrid_loss, hybrid_loss_grad};

    pub(crate) fn tiny() -> Descriptor {
        Descriptor {
            history_len: 8,
            future_len: 8,
            target_len: 4,
            channels: 4,
            kernel: 3,
            dilations: vec![1, 2, 1, 2],
            heads: 2,
            hidden: 6,
        }
    }

    fn random_samples(d: &Descriptor, n: usize, seed: u64) -> Vec<WindowSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| WindowSample {
                start: i,
                history: (0..d.history_len).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect(),
                future: (0..d.future_len).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect(),
                target: (0..d.target_len).map(|_| rng.random_range(-2.0..2.0)).collect(),
            })
            .collect()
    }

    fn batch_loss(w: &NetWeights, input: &BatchInput, samples: &[WindowSample]) -> f64 {
        let (y, _) = forward(w, input, Mode::Train { running: None });
        let t = w.descriptor.target_len;
        samples
            .iter()
            .enumerate()
            .map(|(i, s)| hybrid_loss(&y[i * t..(i + 1) * t], &s.target))
            .sum::<f64>()
            / samples.len() as f64
    }

    fn analytic(w: &NetWeights, input: &BatchInput, samples: &[WindowSample]) -> (Vec<f64>, InputGrads) {
        let (y, tape) = forward(w, input, Mode::Train { running: None });
        let t = w.descriptor.target_len;
        let mut dy = vec![0.0; y.len()];
        for (i, s) in samples.iter().enumerate() {
            let g = hybrid_loss_grad(&y[i * t..(i + 1) * t], &s.target);
            for (j, v) in g.iter().enumerate() {
                dy[i * t + j] = v / samples.len() as f64;
            }
        }
        let mut grad = vec![0.0; w.params.len()];
        let inputs = backward(w, &tape.unwrap(), &dy, &mut grad);
        (grad, inputs)
    }

    fn close(fd: f64, an: f64) -> bool {
        (fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()) || (fd - an).abs() < 1e-9
    }

    #[test]
    fn every_tensor_gradient_matches_differences() {
        let d = tiny();
        let stats = FeatureStats { offset_scale: 1.7, ..FeatureStats::identity() };
        let w0 = NetWeights::init(&d, stats, 3).unwrap();
        let samples = random_samples(&d, 3, 4);
        let refs: Vec<&WindowSample> = samples.iter().collect();
        let input = BatchInput::from_samples(&d, &refs).unwrap();
        let (grad, _) = analytic(&w0, &input, &samples);
        let layout = w0.layout();
        let mut offset = 0;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for info in &layout.params {
            let size: usize = info.shape.iter().product();
            // a handful of entries per tensor
            for _ in 0..4 {
                let i = offset + rng.random_range(0..size);
                let h = 1e-6;
                let mut w = w0.clone();
                w.params[i] += h;
                let up = batch_loss(&w, &input, &samples);
                w.params[i] -= 2.0 * h;
                let down = batch_loss(&w, &input, &samples);
                let fd = (up - down) / (2.0 * h);
                assert!(close(fd, grad[i]), "{} [{}]: fd {fd} vs {}", info.name, i - offset, grad[i]);
            }
            offset += size;
        }
    }

    #[test]
    fn input_gradients_match_differences() {
        let d = tiny();
        let w = NetWeights::init(&d, FeatureStats::identity(), 5).unwrap();
        let samples = random_samples(&d, 2, 6);
        let refs: Vec<&WindowSample> = samples.iter().collect();
        let input = BatchInput::from_samples(&d, &refs).unwrap();
        let (_, grads) = analytic(&w, &input, &samples);
        let h = 1e-6;
        for (field, an) in [(0, &grads.hist), (1, &grads.fut)] {
            for i in (0..an.len()).step_by(5) {
                let mut inp = BatchInput { batch: input.batch, hist: input.hist.clone(), fut: input.fut.clone() };
                let target = if field == 0 { &mut inp.hist } else { &mut inp.fut };
                target[i] += h;
                let up = batch_loss(&w, &inp, &samples);
                let target = if field == 0 { &mut inp.hist } else { &mut inp.fut };
                target[i] -= 2.0 * h;
                let down = batch_loss(&w, &inp, &samples);
                let fd = (up - down) / (2.0 * h);
                assert!(close(fd, an[i]), "input {field}[{i}]: fd {fd} vs {}", an[i]);
            }
        }
    }

    #[test]
    fn zero_head_predicts_centerline() {
        let d = tiny();
        let mut w = NetWeights::init(&d, FeatureStats { offset_scale: 3.0, ..FeatureStats::identity() }, 1).unwrap();
        w.zero_output_layer();
        let samples = random_samples(&d, 3, 2);
        let refs: Vec<&WindowSample> = samples.iter().collect();
        let out = predict_windows(&w, &refs).unwrap();
        assert!(out.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn inference_is_independent_of_batch_grouping() {
        let d = tiny();
        let mut w = NetWeights::init(&d, FeatureStats::identity(), 7).unwrap();
        w.buffers.iter_mut().enumerate().for_each(|(i, v)| *v += 0.01 * (i % 5) as f64);
        let samples = random_samples(&d, 5, 8);
        let refs: Vec<&WindowSample> = samples.iter().collect();
        let all = predict_windows(&w, &refs).unwrap();
        for (i, s) in samples.iter().enumerate() {
            let one = predict_windows(&w, &[s]).unwrap();
            assert_eq!(one[0], all[i]);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let d = tiny();
        let w = NetWeights::init(&d, FeatureStats::identity(), 7).unwrap();
        let mut s = random_samples(&d, 1, 8).remove(0);
        s.future.pop();
        assert!(matches!(predict_windows(&w, &[&s]), Err(Error::ShapeMismatch(_))));
    }
}
