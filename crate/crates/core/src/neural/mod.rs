//! Convolutional policy/value network with hand-written forward and
//! backward passes.
//!
//! Layout: three 3x3 same-padded convolutions with ReLU, one 2x2 max-pool,
//! a ReLU hidden layer, then a policy head with one logit per cell and a
//! scalar value head. All parameters live in one flat vector.

mod adam;
mod checkpoint;
mod ops;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use ops::{col2im, gemm, im2col, maxpool, Mat};

pub use adam::{clip_grad_norm, Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, sidecar_path, CHECKPOINT_MAGIC};

pub const INPUT_CHANNELS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Multiplier on the He-uniform bound.
    pub init_scale: f64,
    /// Filters of the three convolutions.
    pub conv: [usize; 3],
    pub hidden: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            channels: INPUT_CHANNELS,
            height: 50,
            width: 50,
            seed: 42,
            init_scale: 1.0,
            conv: [32, 64, 128],
            hidden: 256,
        }
    }
}

impl NetConfig {
    pub fn for_grid(height: usize, width: usize, seed: u64) -> Self {
        Self {
            height,
            width,
            seed,
            ..Self::default()
        }
    }

    pub fn validated(self) -> Result<Self> {
        if self.channels != INPUT_CHANNELS {
            return Err(Error::InvalidParameter(format!(
                "network input must have {INPUT_CHANNELS} channels, got {}",
                self.channels
            )));
        }
        if self.height < 8 || self.width < 8 {
            return Err(Error::InvalidParameter(format!(
                "network grid must be at least 8x8, got {}x{}",
                self.height, self.width
            )));
        }
        if self.conv.contains(&0) || self.hidden == 0 {
            return Err(Error::InvalidParameter("layer widths must be positive".into()));
        }
        if !(self.init_scale.is_finite() && self.init_scale > 0.0) {
            return Err(Error::InvalidParameter("init_scale must be finite and > 0".into()));
        }
        Ok(self)
    }

    pub fn actions(&self) -> usize {
        self.height * self.width
    }

    fn pooled(&self) -> usize {
        self.conv[2] * (self.height / 2) * (self.width / 2)
    }

    /// Name, shape and fan-in of every parameter tensor, in storage order.
    pub fn layout(&self) -> Vec<(&'static str, Vec<usize>, usize)> {
        let [c1, c2, c3] = self.conv;
        let (f, h, a) = (self.pooled(), self.hidden, self.actions());
        vec![
            ("conv1.weight", vec![c1, self.channels, 3, 3], self.channels * 9),
            ("conv1.bias", vec![c1], 0),
            ("conv2.weight", vec![c2, c1, 3, 3], c1 * 9),
            ("conv2.bias", vec![c2], 0),
            ("conv3.weight", vec![c3, c2, 3, 3], c2 * 9),
            ("conv3.bias", vec![c3], 0),
            ("fc.weight", vec![h, f], f),
            ("fc.bias", vec![h], 0),
            ("policy.weight", vec![a, h], h),
            ("policy.bias", vec![a], 0),
            ("value.weight", vec![1, h], h),
            ("value.bias", vec![1], 0),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(|(_, s, _)| s.iter().product::<usize>()).sum()
    }
}

/// A named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSlot {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// Dense values with a shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::Shape(format!("shape {shape:?} does not hold {} values", values.len())));
        }
        Ok(Self { shape, values })
    }
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    cols: [Vec<f64>; 3],
    conv: [Vec<f64>; 3],
    pool_arg: Vec<usize>,
    flat: Vec<f64>,
    hidden: Vec<f64>,
    pub logits: Vec<f64>,
    /// Masked softmax over `logits`; masked cells are exactly 0.
    pub probs: Vec<f64>,
    pub mask: Vec<bool>,
    pub value: f64,
}

impl Activations {
    /// True when both passes used the same ReLU on/off pattern and the same
    /// max-pool winners, so the network is one smooth map between them.
    pub fn same_linear_region(&self, other: &Activations) -> bool {
        let on = |v: &[f64], u: &[f64]| v.len() == u.len() && v.iter().zip(u).all(|(a, b)| (*a > 0.0) == (*b > 0.0));
        self.pool_arg == other.pool_arg
            && on(&self.hidden, &other.hidden)
            && self.conv.iter().zip(&other.conv).all(|(a, b)| on(a, b))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyValueNet {
    cfg: NetConfig,
    slots: Vec<ParamSlot>,
    params: Vec<f64>,
}

const POLICY_INIT_GAIN: f64 = 0.01;

impl PolicyValueNet {
    /// He-uniform weights drawn from `cfg.seed`, zero biases. The policy
    /// head starts 100x smaller so the initial policy is close to uniform.
    pub fn new(cfg: NetConfig) -> Result<Self> {
        let cfg = cfg.validated()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let slots = Self::slots_for(&cfg);
        let mut params = Vec::with_capacity(cfg.param_count());
        for ((name, _, fan_in), slot) in cfg.layout().into_iter().zip(&slots) {
            if fan_in == 0 {
                params.extend(std::iter::repeat(0.0).take(slot.len));
                continue;
            }
            let gain = if name == "policy.weight" { POLICY_INIT_GAIN } else { 1.0 };
            let limit = cfg.init_scale * gain * (6.0 / fan_in as f64).sqrt();
            params.extend((0..slot.len).map(|_| rng.gen_range(-limit..limit)));
        }
        Ok(Self { cfg, slots, params })
    }

    fn slots_for(cfg: &NetConfig) -> Vec<ParamSlot> {
        let mut offset = 0;
        cfg.layout()
            .into_iter()
            .map(|(name, shape, _)| {
                let len = shape.iter().product();
                let slot = ParamSlot {
                    name: name.to_string(),
                    shape,
                    offset,
                    len,
                };
                offset += len;
                slot
            })
            .collect()
    }

    pub(crate) fn from_parts(cfg: NetConfig, params: Vec<f64>) -> Result<Self> {
        let cfg = cfg.validated()?;
        if params.len() != cfg.param_count() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                cfg.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(Self {
            slots: Self::slots_for(&cfg),
            cfg,
            params,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn zero_grads(&self) -> Vec<f64> {
        vec![0.0; self.params.len()]
    }

    pub fn tensor(&self, name: &str) -> Option<Tensor> {
        self.slots.iter().find(|s| s.name == name).map(|s| Tensor {
            shape: s.shape.clone(),
            values: self.params[s.offset..s.offset + s.len].to_vec(),
        })
    }

    /// Name of the tensor holding flat parameter `index`.
    pub fn param_name(&self, index: usize) -> &str {
        self.slots
            .iter()
            .find(|s| (s.offset..s.offset + s.len).contains(&index))
            .map(|s| s.name.as_str())
            .unwrap_or("?")
    }

    fn slice(&self, i: usize) -> &[f64] {
        let s = &self.slots[i];
        &self.params[s.offset..s.offset + s.len]
    }

    /// Runs the network on a channel-major observation. `mask[i] == true`
    /// keeps action `i`; `None` keeps every action.
    pub fn forward(&self, obs: &[f64], mask: Option<&[bool]>) -> Result<Activations> {
        let (h, w) = (self.cfg.height, self.cfg.width);
        let hw = h * w;
        if obs.len() != self.cfg.channels * hw {
            return Err(Error::Shape(format!(
                "observation has {} values, network expects {}x{}x{}",
                obs.len(),
                self.cfg.channels,
                h,
                w
            )));
        }
        let mask = match mask {
            Some(m) if m.len() != hw => {
                return Err(Error::Shape(format!("mask has {} entries, expected {hw}", m.len())));
            }
            Some(m) => m.to_vec(),
            None => vec![true; hw],
        };
        if !mask.iter().any(|&m| m) {
            return Err(Error::DegenerateDistribution);
        }

        let mut cols: [Vec<f64>; 3] = Default::default();
        let mut conv: [Vec<f64>; 3] = Default::default();
        let mut in_c = self.cfg.channels;
        for layer in 0..3 {
            let out_c = self.cfg.conv[layer];
            let input: &[f64] = if layer == 0 { obs } else { &conv[layer - 1] };
            let mut patches = Vec::new();
            im2col(input, in_c, h, w, &mut patches);
            let weight = self.slice(2 * layer);
            let bias = self.slice(2 * layer + 1);
            let mut out = vec![0.0; out_c * hw];
            for (o, row) in out.chunks_mut(hw).enumerate() {
                row.iter_mut().for_each(|v| *v = bias[o]);
            }
            gemm(out_c, in_c * 9, hw, Mat::new(weight, in_c * 9), Mat::new(&patches, hw), 1.0, &mut out);
            out.iter_mut().for_each(|v| *v = v.max(0.0));
            cols[layer] = patches;
            conv[layer] = out;
            in_c = out_c;
        }

        let (flat, pool_arg) = maxpool(&conv[2], in_c, h, w);
        let hidden_w = self.slice(6);
        let mut hidden = self.slice(7).to_vec();
        matvec_add(hidden_w, &flat, &mut hidden);
        hidden.iter_mut().for_each(|v| *v = v.max(0.0));

        let mut logits = self.slice(9).to_vec();
        matvec_add(self.slice(8), &hidden, &mut logits);
        let value = self.slice(11)[0] + dot(self.slice(10), &hidden);
        let probs = masked_softmax(&logits, &mask)?;
        if !value.is_finite() {
            return Err(Error::NonFinite("value head output".into()));
        }
        Ok(Activations {
            cols,
            conv,
            pool_arg,
            flat,
            hidden,
            logits,
            probs,
            mask,
            value,
        })
    }

    /// Adds the parameter gradient of a loss to `grads`, given the loss
    /// gradient with respect to the logits and the value output.
    pub fn accumulate_gradients(&self, act: &Activations, dlogits: &[f64], dvalue: f64, grads: &mut [f64]) {
        assert_eq!(dlogits.len(), self.cfg.actions());
        assert_eq!(grads.len(), self.params.len());
        let (h, w) = (self.cfg.height, self.cfg.width);
        let hw = h * w;
        let hid = self.cfg.hidden;
        let off = |i: usize| self.slots[i].offset..self.slots[i].offset + self.slots[i].len;

        // heads
        let mut dhidden = vec![0.0; hid];
        {
            let pw = self.slice(8);
            let g = &mut grads[off(8)];
            for (a, &d) in dlogits.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &pw[a * hid..(a + 1) * hid];
                let grow = &mut g[a * hid..(a + 1) * hid];
                for j in 0..hid {
                    grow[j] += d * act.hidden[j];
                    dhidden[j] += d * row[j];
                }
            }
        }
        for (g, d) in grads[off(9)].iter_mut().zip(dlogits) {
            *g += d;
        }
        if dvalue != 0.0 {
            let vw = self.slice(10);
            for (j, g) in grads[off(10)].iter_mut().enumerate() {
                *g += dvalue * act.hidden[j];
                dhidden[j] += dvalue * vw[j];
            }
            grads[off(11)][0] += dvalue;
        }

        // hidden layer
        for (d, &a) in dhidden.iter_mut().zip(&act.hidden) {
            if a <= 0.0 {
                *d = 0.0;
            }
        }
        let f = act.flat.len();
        let mut dflat = vec![0.0; f];
        {
            let fw = self.slice(6);
            let g = &mut grads[off(6)];
            for (j, &d) in dhidden.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &fw[j * f..(j + 1) * f];
                let grow = &mut g[j * f..(j + 1) * f];
                for i in 0..f {
                    grow[i] += d * act.flat[i];
                    dflat[i] += d * row[i];
                }
            }
        }
        for (g, d) in grads[off(7)].iter_mut().zip(&dhidden) {
            *g += d;
        }

        // unpool
        let mut dout = vec![0.0; self.cfg.conv[2] * hw];
        for (d, &i) in dflat.iter().zip(&act.pool_arg) {
            dout[i] += d;
        }

        // convolutions, last to first
        for layer in (0..3).rev() {
            let out_c = self.cfg.conv[layer];
            let in_c = if layer == 0 { self.cfg.channels } else { self.cfg.conv[layer - 1] };
            let k = in_c * 9;
            for (d, &a) in dout.iter_mut().zip(&act.conv[layer]) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            let patches = &act.cols[layer];
            gemm(
                out_c,
                hw,
                k,
                Mat::new(&dout, hw),
                Mat::t(patches, hw),
                1.0,
                &mut grads[off(2 * layer)],
            );
            for (g, row) in grads[off(2 * layer + 1)].iter_mut().zip(dout.chunks(hw)) {
                *g += row.iter().sum::<f64>();
            }
            if layer == 0 {
                break;
            }
            let mut dcols = vec![0.0; k * hw];
            gemm(k, out_c, hw, Mat::t(self.slice(2 * layer), k), Mat::new(&dout, hw), 0.0, &mut dcols);
            let mut dinput = vec![0.0; in_c * hw];
            col2im(&dcols, in_c, h, w, &mut dinput);
            dout = dinput;
        }
    }

    /// Parameter gradient of a loss with the given output gradients.
    pub fn backward(&self, act: &Activations, dlogits: &[f64], dvalue: f64) -> Vec<f64> {
        let mut grads = self.zero_grads();
        self.accumulate_gradients(act, dlogits, dvalue, &mut grads);
        grads
    }

    /// One Adam step with global-norm clipping. Returns the pre-clip norm.
    pub fn apply_gradients(&mut self, adam: &mut Adam, grads: &mut [f64]) -> Result<f64> {
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {}[{}]", self.param_name(i), i - self.slot_of(i))));
        }
        adam.step(&mut self.params, grads)
    }

    fn slot_of(&self, index: usize) -> usize {
        self.slots
            .iter()
            .find(|s| (s.offset..s.offset + s.len).contains(&index))
            .map(|s| s.offset)
            .unwrap_or(0)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out += m * v` for a row-major `m` with `v.len()` columns.
fn matvec_add(m: &[f64], v: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(m.chunks(v.len())) {
        *o += dot(row, v);
    }
}

/// Softmax over the unmasked entries; masked entries get probability 0.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != mask.len() {
        return Err(Error::Shape(format!(
            "{} logits but {} mask entries",
            logits.len(),
            mask.len()
        )));
    }
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateDistribution);
    }
    if !max.is_finite() {
        return Err(Error::NonFinite("policy logits".into()));
    }
    let mut probs: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { (l - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(probs)
}

/// Index of the largest probability; ties go to the smallest index.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}
