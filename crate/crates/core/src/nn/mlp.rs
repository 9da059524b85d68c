use rand::Rng;
use serde::{Deserialize, Serialize};

use super::embed::{embed_with_frequencies, embedding_frequency};
use super::gemm::{gemm, View};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    /// `x * sigmoid(x)`
    #[default]
    Silu,
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    /// Number of (space, time) input slots; equals the HRF depth.
    pub depth: usize,
    pub space_dim: usize,
    /// Width of each sinusoidal time embedding (and of the time path output).
    pub embed_dim: usize,
    /// Output width of each space path.
    pub space_width: usize,
    pub hidden_dims: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    /// Start the last trunk layer at zero so the initial field is identically 0.
    #[serde(default)]
    pub zero_init_output: bool,
}

impl MlpConfig {
    /// Default architecture: 64-wide embeddings and space paths, trunk [128, 128, 128].
    pub fn hrf_default(depth: usize, space_dim: usize) -> Self {
        MlpConfig {
            depth,
            space_dim,
            embed_dim: 64,
            space_width: 64,
            hidden_dims: vec![128, 128, 128],
            activation: Activation::Silu,
            zero_init_output: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.depth == 0 {
            return bad("network depth must be >= 1".into());
        }
        if self.space_dim == 0 {
            return bad("space_dim must be >= 1".into());
        }
        if self.embed_dim < 2 || !self.embed_dim.is_multiple_of(2) {
            return bad(format!("embed_dim must be even and >= 2, got {}", self.embed_dim));
        }
        if self.space_width == 0 || self.hidden_dims.contains(&0) {
            return bad("layer widths must be >= 1".into());
        }
        Ok(())
    }

    fn slot_width(&self) -> usize {
        self.space_width + self.embed_dim
    }

    fn concat_dim(&self) -> usize {
        self.depth * self.slot_width()
    }

    pub fn param_count(&self) -> usize {
        Layout::new(self).total
    }
}

#[derive(Clone, Copy, Debug)]
struct Linear {
    offset: usize,
    fan_in: usize,
    fan_out: usize,
}

impl Linear {
    fn len(&self) -> usize {
        self.fan_out * (self.fan_in + 1)
    }

    fn weights<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.offset..self.offset + self.fan_out * self.fan_in]
    }

    fn bias_start(&self) -> usize {
        self.offset + self.fan_out * self.fan_in
    }

    /// `y[r, ..fan_out] = x[r, ..fan_in] * W^T + b` for `n` rows.
    fn forward(&self, params: &[f64], x: &[f64], ldx: usize, n: usize, y: &mut [f64], ldy: usize) {
        let w = View::row_major(self.weights(params), self.fan_out, self.fan_in, self.fan_in);
        gemm(1.0, View::row_major(x, n, self.fan_in, ldx), w.t(), 0.0, y, ldy);
        let b = &params[self.bias_start()..self.bias_start() + self.fan_out];
        for r in 0..n {
            for (yv, bv) in y[r * ldy..r * ldy + self.fan_out].iter_mut().zip(b) {
                *yv += bv;
            }
        }
    }

    /// Writes dW = dy^T x and db = colsum(dy) into `grads`.
    #[allow(clippy::too_many_arguments)]
    fn param_grads(&self, x: &[f64], ldx: usize, dy: &[f64], ldy: usize, n: usize, grads: &mut [f64]) {
        let (w_range, b_start) = (self.offset..self.bias_start(), self.bias_start());
        gemm(
            1.0,
            View::row_major(dy, n, self.fan_out, ldy).t(),
            View::row_major(x, n, self.fan_in, ldx),
            0.0,
            &mut grads[w_range],
            self.fan_in,
        );
        let db = &mut grads[b_start..b_start + self.fan_out];
        db.fill(0.0);
        for r in 0..n {
            for (g, d) in db.iter_mut().zip(&dy[r * ldy..r * ldy + self.fan_out]) {
                *g += d;
            }
        }
    }

    /// dx = dy W, written row-major with stride `fan_in`.
    fn input_grads(&self, params: &[f64], dy: &[f64], ldy: usize, n: usize, dx: &mut [f64]) {
        let w = View::row_major(self.weights(params), self.fan_out, self.fan_in, self.fan_in);
        gemm(1.0, View::row_major(dy, n, self.fan_out, ldy), w, 0.0, dx, self.fan_in);
    }
}

#[derive(Clone, Debug)]
struct Layout {
    space: Vec<Linear>,
    time: Vec<Linear>,
    trunk: Vec<Linear>,
    total: usize,
}

impl Layout {
    fn new(cfg: &MlpConfig) -> Self {
        let mut offset = 0;
        let mut push = |fan_in: usize, fan_out: usize| {
            let l = Linear {
                offset,
                fan_in,
                fan_out,
            };
            offset += l.len();
            l
        };
        let mut space = Vec::with_capacity(cfg.depth);
        let mut time = Vec::with_capacity(cfg.depth);
        for _ in 0..cfg.depth {
            space.push(push(cfg.space_dim, cfg.space_width));
            time.push(push(cfg.embed_dim, cfg.embed_dim));
        }
        let mut trunk = Vec::with_capacity(cfg.hidden_dims.len() + 1);
        let mut width = cfg.concat_dim();
        for &h in &cfg.hidden_dims {
            trunk.push(push(width, h));
            width = h;
        }
        trunk.push(push(width, cfg.space_dim));
        Layout {
            space,
            time,
            trunk,
            total: offset,
        }
    }
}

/// One batch of network inputs: `spaces[d]` is `n x space_dim` row-major and
/// `times[d]` has `n` entries, for every slot `d`.
#[derive(Clone, Debug)]
pub struct Batch<'a> {
    pub n: usize,
    pub spaces: Vec<&'a [f64]>,
    pub times: Vec<&'a [f64]>,
}

/// Activation caches and scratch buffers reused across calls.
#[derive(Clone, Debug, Default)]
pub struct Workspace {
    n: usize,
    embeds: Vec<Vec<f64>>,
    concat_pre: Vec<f64>,
    concat_act: Vec<f64>,
    concat_aux: Vec<f64>,
    hidden_pre: Vec<Vec<f64>>,
    hidden_act: Vec<Vec<f64>>,
    hidden_aux: Vec<Vec<f64>>,
    out: Vec<f64>,
    grad_a: Vec<f64>,
    grad_b: Vec<f64>,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }

    fn prepare(&mut self, cfg: &MlpConfig, n: usize) {
        self.n = n;
        let cd = cfg.concat_dim();
        self.embeds.resize_with(cfg.depth, Vec::new);
        for e in &mut self.embeds {
            e.resize(n * cfg.embed_dim, 0.0);
        }
        self.concat_pre.resize(n * cd, 0.0);
        self.concat_act.resize(n * cd, 0.0);
        self.concat_aux.resize(n * cd, 0.0);
        let layers = cfg.hidden_dims.len();
        for buf in [&mut self.hidden_pre, &mut self.hidden_act, &mut self.hidden_aux] {
            buf.resize_with(layers, Vec::new);
            for (b, &h) in buf.iter_mut().zip(&cfg.hidden_dims) {
                b.resize(n * h, 0.0);
            }
        }
        self.out.resize(n * cfg.space_dim, 0.0);
        let widest = cfg.hidden_dims.iter().copied().chain([cd]).max().unwrap_or(cd);
        self.grad_a.resize(n * widest, 0.0);
        self.grad_b.resize(n * widest, 0.0);
    }
}

/// `exp` without branches or calls, so loops over it vectorize. Arguments
/// are clamped to [-708, 708]; inside that range the relative error stays
/// within a few ulp of `f64::exp`.
#[inline(always)]
fn exp_clamped(x: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    // 1.5 * 2^52: adding it rounds to an integer held in the low mantissa bits.
    const SHIFT: f64 = 6_755_399_441_055_744.0;
    let x = x.clamp(-708.0, 708.0);
    let shifted = x * std::f64::consts::LOG2_E + SHIFT;
    let k = shifted - SHIFT;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    // Taylor series of exp on |r| <= ln2 / 2, truncated after r^13.
    let mut p = 1.0 / 6_227_020_800.0;
    for c in [
        1.0 / 479_001_600.0,
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    let k_bits = shifted.to_bits().wrapping_sub(SHIFT.to_bits());
    p * f64::from_bits(k_bits.wrapping_add(1023) << 52)
}

#[inline(always)]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + exp_clamped(-x))
}

fn activate(kind: Activation, pre: &[f64], act: &mut [f64], aux: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: AVX2 support was checked just above.
        unsafe { activate_avx2(kind, pre, act, aux) };
        return;
    }
    activate_portable(kind, pre, act, aux);
}

/// The same loop compiled with 256-bit vectors. No fused multiply-adds are
/// enabled, so results match the portable path bit for bit.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn activate_avx2(kind: Activation, pre: &[f64], act: &mut [f64], aux: &mut [f64]) {
    activate_portable(kind, pre, act, aux);
}

#[inline(always)]
fn activate_portable(kind: Activation, pre: &[f64], act: &mut [f64], aux: &mut [f64]) {
    match kind {
        Activation::Silu => {
            for ((z, h), s) in pre.iter().zip(act.iter_mut()).zip(aux.iter_mut()) {
                *s = sigmoid(*z);
                *h = z * *s;
            }
        }
        Activation::Tanh => {
            for (z, h) in pre.iter().zip(act.iter_mut()) {
                *h = z.tanh();
            }
        }
    }
}

/// Multiplies `grad` in place by the activation derivative.
fn activation_backward(kind: Activation, pre: &[f64], act: &[f64], aux: &[f64], grad: &mut [f64]) {
    match kind {
        Activation::Silu => {
            for ((g, z), s) in grad.iter_mut().zip(pre).zip(aux) {
                *g *= s * (1.0 + z * (1.0 - s));
            }
        }
        Activation::Tanh => {
            for (g, h) in grad.iter_mut().zip(act) {
                *g *= 1.0 - h * h;
            }
        }
    }
}

/// A direction-field network with its parameters stored in one flat vector.
#[derive(Clone, Debug)]
pub struct Mlp {
    config: MlpConfig,
    layout: Layout,
    params: Vec<f64>,
}

impl Mlp {
    /// Fan-in uniform initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new<R: Rng + ?Sized>(config: MlpConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.total];
        let layers: Vec<Linear> = layout
            .space
            .iter()
            .zip(&layout.time)
            .flat_map(|(s, t)| [*s, *t])
            .chain(layout.trunk.iter().copied())
            .collect();
        for l in &layers {
            let bound = 1.0 / (l.fan_in as f64).sqrt();
            for p in &mut params[l.offset..l.offset + l.len()] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        if config.zero_init_output {
            let last = layout.trunk.last().expect("trunk has an output layer");
            params[last.offset..last.offset + last.len()].fill(0.0);
        }
        Ok(Mlp { config, layout, params })
    }

    pub fn from_params(config: MlpConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::shape(layout.total, params.len(), "parameter vector"));
        }
        Ok(Mlp { config, layout, params })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    fn check_batch(&self, batch: &Batch<'_>) -> Result<()> {
        let cfg = &self.config;
        if batch.spaces.len() != cfg.depth {
            return Err(Error::shape(cfg.depth, batch.spaces.len(), "space slots"));
        }
        if batch.times.len() != cfg.depth {
            return Err(Error::shape(cfg.depth, batch.times.len(), "time slots"));
        }
        for (s, t) in batch.spaces.iter().zip(&batch.times) {
            if s.len() != batch.n * cfg.space_dim {
                return Err(Error::shape(batch.n * cfg.space_dim, s.len(), "space input"));
            }
            if t.len() != batch.n {
                return Err(Error::shape(batch.n, t.len(), "time input"));
            }
        }
        Ok(())
    }

    /// Evaluates the network on a batch; the result is `n x space_dim` row-major.
    /// Activations are cached in `ws` for a following backward pass.
    pub fn forward_batch<'w>(&self, batch: &Batch<'_>, ws: &'w mut Workspace) -> Result<&'w [f64]> {
        self.check_batch(batch)?;
        let cfg = &self.config;
        let n = batch.n;
        let cd = cfg.concat_dim();
        ws.prepare(cfg, n);
        let pairs = cfg.embed_dim / 2;
        let freqs: Vec<f64> = (0..pairs).map(|i| embedding_frequency(i, pairs)).collect();
        for d in 0..cfg.depth {
            let col = d * cfg.slot_width();
            self.layout.space[d].forward(
                &self.params,
                batch.spaces[d],
                cfg.space_dim,
                n,
                &mut ws.concat_pre[col..],
                cd,
            );
            let emb = &mut ws.embeds[d];
            for (r, &t) in batch.times[d].iter().enumerate() {
                embed_with_frequencies(t, &freqs, &mut emb[r * cfg.embed_dim..(r + 1) * cfg.embed_dim]);
            }
            self.layout.time[d].forward(
                &self.params,
                emb,
                cfg.embed_dim,
                n,
                &mut ws.concat_pre[col + cfg.space_width..],
                cd,
            );
        }
        activate(cfg.activation, &ws.concat_pre, &mut ws.concat_act, &mut ws.concat_aux);

        for (i, layer) in self.layout.trunk.iter().enumerate() {
            let last = i == self.layout.trunk.len() - 1;
            let mut dest = if last {
                std::mem::take(&mut ws.out)
            } else {
                std::mem::take(&mut ws.hidden_pre[i])
            };
            {
                let input = if i == 0 { &ws.concat_act } else { &ws.hidden_act[i - 1] };
                layer.forward(&self.params, input, layer.fan_in, n, &mut dest, layer.fan_out);
            }
            if last {
                ws.out = dest;
            } else {
                activate(cfg.activation, &dest, &mut ws.hidden_act[i], &mut ws.hidden_aux[i]);
                ws.hidden_pre[i] = dest;
            }
        }
        Ok(&ws.out)
    }

    /// Propagates `grad_out` back to the concatenated slot pre-activations.
    /// Parameter gradients are written into `grads` when given.
    /// The result is left in `ws.grad_a` with row stride `concat_dim`.
    fn backprop_trunk(&self, ws: &mut Workspace, grad_out: &[f64], mut grads: Option<&mut [f64]>) {
        let cfg = &self.config;
        let n = ws.n;
        let trunk = &self.layout.trunk;
        let mut dy = std::mem::take(&mut ws.grad_a);
        let mut dx = std::mem::take(&mut ws.grad_b);
        dy[..grad_out.len()].copy_from_slice(grad_out);
        for i in (0..trunk.len()).rev() {
            let layer = trunk[i];
            let input = if i == 0 { &ws.concat_act } else { &ws.hidden_act[i - 1] };
            if let Some(g) = grads.as_deref_mut() {
                layer.param_grads(input, layer.fan_in, &dy, layer.fan_out, n, g);
            }
            layer.input_grads(&self.params, &dy, layer.fan_out, n, &mut dx);
            let len = n * layer.fan_in;
            if i == 0 {
                activation_backward(
                    cfg.activation,
                    &ws.concat_pre,
                    &ws.concat_act,
                    &ws.concat_aux,
                    &mut dx[..len],
                );
            } else {
                activation_backward(
                    cfg.activation,
                    &ws.hidden_pre[i - 1],
                    &ws.hidden_act[i - 1],
                    &ws.hidden_aux[i - 1],
                    &mut dx[..len],
                );
            }
            std::mem::swap(&mut dy, &mut dx);
        }
        ws.grad_a = dy;
        ws.grad_b = dx;
    }

    /// Exact gradients of `sum_r grad_out[r] . f(x_r)` with respect to every
    /// parameter, written into `grads` (overwritten). Must follow a
    /// [`Mlp::forward_batch`] on the same batch and workspace.
    pub fn backward_batch(
        &self,
        batch: &Batch<'_>,
        ws: &mut Workspace,
        grad_out: &[f64],
        grads: &mut [f64],
    ) -> Result<()> {
        self.check_batch(batch)?;
        let cfg = &self.config;
        let n = batch.n;
        if ws.n != n {
            return Err(Error::shape(n, ws.n, "workspace batch (run forward first)"));
        }
        if grad_out.len() != n * cfg.space_dim {
            return Err(Error::shape(n * cfg.space_dim, grad_out.len(), "output gradient"));
        }
        if grads.len() != self.layout.total {
            return Err(Error::shape(self.layout.total, grads.len(), "gradient buffer"));
        }
        self.backprop_trunk(ws, grad_out, Some(grads));
        let cd = cfg.concat_dim();
        let dc = &ws.grad_a;
        for d in 0..cfg.depth {
            let col = d * cfg.slot_width();
            self.layout.space[d].param_grads(batch.spaces[d], cfg.space_dim, &dc[col..], cd, n, grads);
            self.layout.time[d].param_grads(&ws.embeds[d], cfg.embed_dim, &dc[col + cfg.space_width..], cd, n, grads);
        }
        Ok(())
    }

    /// Vector-Jacobian product with respect to the space input of `slot`:
    /// row `r` of the result is `grad_out[r]^T * d f(x_r) / d space_slot`.
    /// Must follow a [`Mlp::forward_batch`] on the same batch and workspace.
    pub fn input_vjp(&self, ws: &mut Workspace, grad_out: &[f64], slot: usize) -> Result<Vec<f64>> {
        let cfg = &self.config;
        let n = ws.n;
        if slot >= cfg.depth {
            return Err(Error::Argument(format!(
                "slot {slot} out of range for depth {}",
                cfg.depth
            )));
        }
        if grad_out.len() != n * cfg.space_dim {
            return Err(Error::shape(n * cfg.space_dim, grad_out.len(), "output gradient"));
        }
        self.backprop_trunk(ws, grad_out, None);
        let cd = cfg.concat_dim();
        let mut dx = vec![0.0; n * cfg.space_dim];
        self.layout.space[slot].input_grads(&self.params, &ws.grad_a[slot * cfg.slot_width()..], cd, n, &mut dx);
        Ok(dx)
    }

    /// Single-point evaluation: one space point and one time per slot.
    pub fn forward(&self, spaces: &[&[f64]], times: &[f64]) -> Result<Vec<f64>> {
        let time_refs: Vec<&[f64]> = times.chunks(1).collect();
        let batch = Batch {
            n: 1,
            spaces: spaces.to_vec(),
            times: time_refs,
        };
        let mut ws = Workspace::new();
        Ok(self.forward_batch(&batch, &mut ws)?.to_vec())
    }

    /// Gradient of `grad_output . f(spaces, times)` with respect to the parameters.
    pub fn backward(&self, spaces: &[&[f64]], times: &[f64], grad_output: &[f64]) -> Result<Vec<f64>> {
        let time_refs: Vec<&[f64]> = times.chunks(1).collect();
        let batch = Batch {
            n: 1,
            spaces: spaces.to_vec(),
            times: time_refs,
        };
        let mut ws = Workspace::new();
        self.forward_batch(&batch, &mut ws)?;
        let mut grads = vec![0.0; self.layout.total];
        self.backward_batch(&batch, &mut ws, grad_output, &mut grads)?;
        Ok(grads)
    }

    /// Central-difference gradient of `grad_output . f(spaces, times)`.
    pub fn finite_diff_grad(
        &self,
        spaces: &[&[f64]],
        times: &[f64],
        grad_output: &[f64],
        eps: f64,
    ) -> Result<Vec<f64>> {
        // Validate shapes once so the closure below cannot fail.
        self.forward(spaces, times)?;
        let mut probe = self.clone();
        Ok(finite_diff_grad(&self.params, eps, |p| {
            probe.params.copy_from_slice(p);
            let out = probe.forward(spaces, times).expect("shapes validated");
            out.iter().zip(grad_output).map(|(o, g)| o * g).sum()
        }))
    }
}

/// Central differences `(f(p + eps e_i) - f(p - eps e_i)) / (2 eps)` for every coordinate.
pub fn finite_diff_grad<F: FnMut(&[f64]) -> f64>(params: &[f64], eps: f64, mut f: F) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + eps;
            let up = f(&p);
            p[i] = orig - eps;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}
