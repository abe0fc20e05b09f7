use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{gemm, Real, Tensor};
use crate::dataset::ClassWeights;
use crate::error::{Error, Result};
use crate::features::{CHANNELS, FLOOR_DB, N_MELS};

/// Probabilities are clamped to this before the logarithm.
pub const PROB_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub out_channels: usize,
    pub stride: usize,
}

/// Conv(3x3, pad 1, stride) -> ReLU -> MaxPool(2x2) blocks, then global
/// average pooling and a dense layer to `num_classes` softmax outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallCnnConfig {
    /// `[mel bins, frames, channels]`.
    pub input_shape: [usize; 3],
    pub blocks: Vec<BlockConfig>,
    pub num_classes: usize,
    /// Inputs are mapped `x -> (x + input_offset) * input_scale` before the
    /// first convolution.
    pub input_offset: f64,
    pub input_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    stride: usize,
    ho: usize,
    wo: usize,
    hp: usize,
    wp: usize,
}

impl Geometry {
    fn k(&self) -> usize {
        self.cin * 9
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    /// Output columns `lo..hi` whose tap `kx` lands inside the input row.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let lo = usize::from(kx == 0);
        let hi = ((self.w + self.stride - kx) / self.stride).min(self.wo);
        (lo, hi)
    }
}

impl SmallCnnConfig {
    /// Four blocks of 16/32/64/128 channels. The first two convolutions
    /// stride by 2 to keep single-core training time in minutes.
    pub fn standard(frames: usize, num_classes: usize) -> Self {
        Self {
            input_shape: [N_MELS, frames, CHANNELS],
            blocks: [(16, 2), (32, 2), (64, 1), (128, 1)]
                .iter()
                .map(|&(out_channels, stride)| BlockConfig {
                    out_channels,
                    stride,
                })
                .collect(),
            num_classes,
            input_offset: -f64::from(FLOOR_DB) / 2.0,
            input_scale: -2.0 / f64::from(FLOOR_DB),
        }
    }

    /// Same topology with every block's channel count multiplied by `factor`.
    pub fn widened(&self, factor: usize) -> Self {
        let mut c = self.clone();
        for b in &mut c.blocks {
            b.out_channels *= factor;
        }
        c
    }

    fn geometry(&self) -> Result<Vec<Geometry>> {
        let [h0, w0, c0] = self.input_shape;
        if h0 == 0 || w0 == 0 || c0 == 0 {
            return Err(Error::Config(format!("input shape {:?} has a zero dimension", self.input_shape)));
        }
        let (mut cin, mut h, mut w) = (c0, h0, w0);
        let mut out = Vec::with_capacity(self.blocks.len());
        for (i, b) in self.blocks.iter().enumerate() {
            if b.out_channels == 0 || b.stride == 0 {
                return Err(Error::Config(format!("block {i} needs positive channels and stride")));
            }
            let ho = (h - 1) / b.stride + 1;
            let wo = (w - 1) / b.stride + 1;
            let (hp, wp) = (ho / 2, wo / 2);
            if hp == 0 || wp == 0 {
                return Err(Error::Config(format!(
                    "block {i} reduces the {h}x{w} map to nothing"
                )));
            }
            out.push(Geometry {
                cin,
                h,
                w,
                cout: b.out_channels,
                stride: b.stride,
                ho,
                wo,
                hp,
                wp,
            });
            (cin, h, w) = (b.out_channels, hp, wp);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::Config("at least one block required".into()));
        }
        if !matches!(self.num_classes, 2 | 4) {
            return Err(Error::Config(format!(
                "num_classes must be 2 or 4, got {}",
                self.num_classes
            )));
        }
        if !(self.input_scale.is_finite() && self.input_scale != 0.0 && self.input_offset.is_finite()) {
            return Err(Error::Config("input normalization must be finite and non-zero".into()));
        }
        self.geometry().map(|_| ())
    }

    /// Parameter inventory in storage order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        let mut cin = self.input_shape[2];
        for (i, b) in self.blocks.iter().enumerate() {
            specs.push(ParamSpec {
                name: format!("block{i}.conv.weight"),
                shape: vec![b.out_channels, cin, 3, 3],
            });
            specs.push(ParamSpec {
                name: format!("block{i}.conv.bias"),
                shape: vec![b.out_channels],
            });
            cin = b.out_channels;
        }
        specs.push(ParamSpec {
            name: "head.weight".into(),
            shape: vec![self.num_classes, cin],
        });
        specs.push(ParamSpec {
            name: "head.bias".into(),
            shape: vec![self.num_classes],
        });
        specs
    }

    pub fn param_count(&self) -> usize {
        self.param_specs().iter().map(ParamSpec::len).sum()
    }

    /// Short content hash of the configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

struct LayerTrace<T> {
    cols: Vec<T>,
    z: Vec<T>,
    argmax: Vec<u32>,
    out: Vec<T>,
}

struct Trace<T> {
    layers: Vec<LayerTrace<T>>,
    feat: Vec<T>,
    probs: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmallCnn<T: Real = f32> {
    cfg: SmallCnnConfig,
    geo: Vec<Geometry>,
    params: Vec<Vec<T>>,
}

/// Patch matrix `[cin * 9, ho * wo]`: row `(ci, ky, kx)` holds that kernel
/// tap's input at every output position, zero where it overhangs the border.
fn im2col<T: Real>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let p = g.p();
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(ci * 9 + ky * 3 + kx) * p..][..p];
                let (lo, hi) = g.valid_cols(kx);
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - 1;
                    let dst = &mut row[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy as usize >= g.h {
                        dst.fill(T::ZERO);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    dst[..lo].fill(T::ZERO);
                    dst[hi..].fill(T::ZERO);
                    let first = lo * g.stride + kx - 1;
                    if g.stride == 1 {
                        dst[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                    } else {
                        for (d, &v) in dst[lo..hi].iter_mut().zip(src[first..].iter().step_by(g.stride)) {
                            *d = v;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: sums patch gradients back onto the input grid.
fn col2im<T: Real>(cols: &[T], g: &Geometry, dx: &mut [T]) {
    let p = g.p();
    dx.fill(T::ZERO);
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(ci * 9 + ky * 3 + kx) * p..][..p];
                let (lo, hi) = g.valid_cols(kx);
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - 1;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let src = &row[oy * g.wo + lo..oy * g.wo + hi];
                    let first = lo * g.stride + kx - 1;
                    for (d, &v) in dst[first..].iter_mut().step_by(g.stride).zip(src) {
                        *d += v;
                    }
                }
            }
        }
    }
}

/// `sum d * row[q]` over `(q, d)` pairs, four interleaved accumulators.
fn gather_dot<T: Real>(pairs: &[(usize, T)], row: &[T]) -> T {
    let mut acc = [T::ZERO; 4];
    let chunks = pairs.chunks_exact(4);
    let tail: T = chunks.remainder().iter().map(|&(q, d)| d * row[q]).sum();
    for ch in chunks {
        for l in 0..4 {
            acc[l] += ch[l].1 * row[ch[l].0];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits
        .iter()
        .copied()
        .fold(logits[0], |a, b| if b > a { b } else { a });
    let e: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl<T: Real> SmallCnn<T> {
    /// He-uniform convolutions, Glorot-uniform head, zero biases.
    pub fn new(cfg: SmallCnnConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = cfg
            .param_specs()
            .iter()
            .map(|spec| {
                let n = spec.len();
                let limit = match spec.shape.as_slice() {
                    [_, cin, 3, 3] => (6.0 / (cin * 9) as f64).sqrt(),
                    [out, cin] => (6.0 / (out + cin) as f64).sqrt(),
                    _ => return vec![T::ZERO; n],
                };
                (0..n)
                    .map(|_| T::from_f64(rng.gen_range(-limit..limit)))
                    .collect()
            })
            .collect();
        Self::from_params(cfg, params)
    }

    pub fn from_params(cfg: SmallCnnConfig, params: Vec<Vec<T>>) -> Result<Self> {
        cfg.validate()?;
        let specs = cfg.param_specs();
        if specs.len() != params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                specs.len(),
                params.len()
            )));
        }
        for (s, p) in specs.iter().zip(&params) {
            if s.len() != p.len() {
                return Err(Error::Shape(format!(
                    "{} needs {} values, got {}",
                    s.name,
                    s.len(),
                    p.len()
                )));
            }
        }
        Ok(Self {
            geo: cfg.geometry()?,
            cfg,
            params,
        })
    }

    pub fn config(&self) -> &SmallCnnConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[Vec<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.params
    }

    pub fn zero_grads(&self) -> Vec<Vec<T>> {
        self.params.iter().map(|p| vec![T::ZERO; p.len()]).collect()
    }

    /// Zeroes the dense head, making every output uniform.
    pub fn zero_head(&mut self) {
        let n = self.params.len();
        for p in &mut self.params[n - 2..] {
            p.fill(T::ZERO);
        }
    }

    pub fn input_len(&self) -> usize {
        self.cfg.input_shape.iter().product()
    }

    /// Normalizes one `[mels, frames, channels]` map into channel-major order.
    pub fn prepare_input(&self, hwc: &[f32]) -> Result<Vec<T>> {
        let [h, w, c] = self.cfg.input_shape;
        if hwc.len() != h * w * c {
            return Err(Error::Shape(format!(
                "input has {} values, model expects {:?}",
                hwc.len(),
                self.cfg.input_shape
            )));
        }
        let (off, scale) = (self.cfg.input_offset, self.cfg.input_scale);
        let mut chw = vec![T::ZERO; hwc.len()];
        for (i, &v) in hwc.iter().enumerate() {
            let ch = i % c;
            let pix = i / c;
            chw[ch * h * w + pix] = T::from_f64((f64::from(v) + off) * scale);
        }
        Ok(chw)
    }

    fn trace(&self, x: &[T]) -> Result<Trace<T>> {
        let mut layers: Vec<LayerTrace<T>> = Vec::with_capacity(self.geo.len());
        for (i, g) in self.geo.iter().enumerate() {
            let input: &[T] = if i == 0 { x } else { &layers[i - 1].out };
            let (k, p) = (g.k(), g.p());
            let mut cols = vec![T::ZERO; k * p];
            im2col(input, g, &mut cols);
            let (w, b) = (&self.params[2 * i], &self.params[2 * i + 1]);
            let mut z = vec![T::ZERO; g.cout * p];
            for (c, row) in z.chunks_exact_mut(p).enumerate() {
                row.fill(b[c]);
            }
            gemm(false, false, g.cout, p, k, T::ONE, w, &cols, T::ONE, &mut z);

            let mut argmax = vec![0u32; g.cout * g.hp * g.wp];
            let mut out = vec![T::ZERO; g.cout * g.hp * g.wp];
            for c in 0..g.cout {
                for py in 0..g.hp {
                    let top = c * p + 2 * py * g.wo;
                    let (r0, r1) = (&z[top..top + g.wo], &z[top + g.wo..top + 2 * g.wo]);
                    let j0 = (c * g.hp + py) * g.wp;
                    let dst = argmax[j0..j0 + g.wp].iter_mut().zip(&mut out[j0..j0 + g.wp]);
                    for (px, (am, o)) in dst.enumerate() {
                        let x = 2 * px;
                        // first maximum in reading order wins ties
                        let (mut best, mut v) = (x, r0[x]);
                        if r0[x + 1] > v {
                            (best, v) = (x + 1, r0[x + 1]);
                        }
                        if r1[x] > v {
                            (best, v) = (g.wo + x, r1[x]);
                        }
                        if r1[x + 1] > v {
                            (best, v) = (g.wo + x + 1, r1[x + 1]);
                        }
                        *am = (top + best) as u32;
                        *o = if v > T::ZERO { v } else { T::ZERO };
                    }
                }
            }
            layers.push(LayerTrace { cols, z, argmax, out });
        }

        let g = self.geo.last().expect("at least one block");
        let area = T::from_f64((g.hp * g.wp) as f64);
        let last = &layers.last().expect("at least one block").out;
        let feat: Vec<T> = last
            .chunks_exact(g.hp * g.wp)
            .map(|ch| ch.iter().copied().sum::<T>() / area)
            .collect();
        let n = self.params.len();
        let (hw, hb) = (&self.params[n - 2], &self.params[n - 1]);
        let mut logits = hb.clone();
        gemm(false, false, self.cfg.num_classes, 1, g.cout, T::ONE, hw, &feat, T::ONE, &mut logits);
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::Numeric("non-finite logits".into()));
        }
        Ok(Trace {
            probs: softmax(&logits),
            layers,
            feat,
        })
    }

    /// Class probabilities for one prepared input.
    pub fn predict(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input_len() {
            return Err(Error::Shape(format!(
                "input has {} values, model expects {}",
                x.len(),
                self.input_len()
            )));
        }
        Ok(self.trace(x)?.probs)
    }

    /// Probabilities `[N, num_classes]` for a raw dB batch `[N, mels, frames, channels]`.
    pub fn forward(&self, batch: &Tensor<f32>) -> Result<Tensor<T>> {
        let n = self.check_batch(batch)?;
        let k = self.cfg.num_classes;
        let mut out = Vec::with_capacity(n * k);
        for x in batch.data().chunks_exact(self.input_len()) {
            out.extend(self.predict(&self.prepare_input(x)?)?);
        }
        Tensor::new(vec![n, k], out)
    }

    fn check_batch(&self, batch: &Tensor<f32>) -> Result<usize> {
        let s = batch.shape();
        if s.len() != 4 || s[1..] != self.cfg.input_shape {
            return Err(Error::Shape(format!(
                "batch shape {s:?} does not match [N, {:?}]",
                self.cfg.input_shape
            )));
        }
        Ok(s[0])
    }

    /// Forward and backward for one prepared sample. Adds
    /// `scale * d(weight * -ln p_target)/dθ` into `grads` and returns the
    /// sample's unscaled loss term `weight * -ln max(p_target, eps)`.
    pub fn accumulate(
        &self,
        x: &[T],
        target: usize,
        weight: T,
        scale: T,
        grads: &mut [Vec<T>],
    ) -> Result<f64> {
        let k = self.cfg.num_classes;
        if target >= k {
            return Err(Error::Shape(format!("target {target} outside {k} classes")));
        }
        if x.len() != self.input_len() {
            return Err(Error::Shape(format!(
                "input has {} values, model expects {}",
                x.len(),
                self.input_len()
            )));
        }
        let tr = self.trace(x)?;
        let p_t = tr.probs[target].to_f64();
        let loss = weight.to_f64() * -p_t.max(PROB_EPSILON).ln();
        if p_t < PROB_EPSILON || weight == T::ZERO {
            // clamped region: the loss is locally constant
            return Ok(loss);
        }

        let n = self.params.len();
        let coef = scale * weight;
        let dlogits: Vec<T> = tr
            .probs
            .iter()
            .enumerate()
            .map(|(c, &p)| coef * (if c == target { p - T::ONE } else { p }))
            .collect();
        let g_last = *self.geo.last().expect("at least one block");
        gemm(false, false, k, g_last.cout, 1, T::ONE, &dlogits, &tr.feat, T::ONE, &mut grads[n - 2]);
        for (b, d) in grads[n - 1].iter_mut().zip(&dlogits) {
            *b += *d;
        }
        let mut dfeat = vec![T::ZERO; g_last.cout];
        gemm(true, false, g_last.cout, 1, k, T::ONE, &self.params[n - 2], &dlogits, T::ZERO, &mut dfeat);

        let area = T::from_f64((g_last.hp * g_last.wp) as f64);
        let mut dout: Vec<T> = dfeat
            .iter()
            .flat_map(|&d| std::iter::repeat(d / area).take(g_last.hp * g_last.wp))
            .collect();

        for i in (0..self.geo.len()).rev() {
            let g = &self.geo[i];
            let lt = &tr.layers[i];
            let (kk, p) = (g.k(), g.p());
            // Only pooling winners with positive pre-activation pass gradient.
            let mut dz = vec![T::ZERO; g.cout * p];
            for (j, &pos) in lt.argmax.iter().enumerate() {
                let pos = pos as usize;
                if lt.z[pos] > T::ZERO {
                    dz[pos] += dout[j];
                }
            }
            for (b, row) in grads[2 * i + 1].iter_mut().zip(dz.chunks_exact(p)) {
                *b += row.iter().copied().sum::<T>();
            }
            // dz is nonzero only at active pooling winners, at most a quarter
            // of its entries. On large maps gathering those columns beats
            // matrixmultiply, which is slow for a long shared dimension.
            if p >= 1024 {
                let gw = &mut grads[2 * i];
                let per_channel = g.hp * g.wp;
                let mut live: Vec<(usize, T)> = Vec::with_capacity(per_channel);
                for c in 0..g.cout {
                    live.clear();
                    let js = c * per_channel..(c + 1) * per_channel;
                    for (&pos, &d) in lt.argmax[js.clone()].iter().zip(&dout[js]) {
                        if lt.z[pos as usize] > T::ZERO {
                            live.push((pos as usize - c * p, d));
                        }
                    }
                    if live.is_empty() {
                        continue;
                    }
                    for (r, v) in gw[c * kk..(c + 1) * kk].iter_mut().enumerate() {
                        *v += gather_dot(&live, &lt.cols[r * p..(r + 1) * p]);
                    }
                }
            } else {
                gemm(false, true, g.cout, kk, p, T::ONE, &dz, &lt.cols, T::ONE, &mut grads[2 * i]);
            }
            if i > 0 {
                let mut dcols = vec![T::ZERO; kk * p];
                gemm(true, false, kk, p, g.cout, T::ONE, &self.params[2 * i], &dz, T::ZERO, &mut dcols);
                let mut dx = vec![T::ZERO; g.cin * g.h * g.w];
                col2im(&dcols, g, &mut dx);
                dout = dx;
            }
        }
        Ok(loss)
    }

    /// Mean weighted loss and its gradient over a raw dB batch.
    pub fn backward(
        &self,
        batch: &Tensor<f32>,
        targets: &[usize],
        weights: &ClassWeights,
    ) -> Result<(f64, Vec<Vec<T>>)> {
        let n = self.check_batch(batch)?;
        if targets.len() != n || n == 0 {
            return Err(Error::Shape(format!("{} targets for batch of {n}", targets.len())));
        }
        self.check_weights(weights)?;
        let scale = T::from_f64(1.0 / n as f64);
        let mut grads = self.zero_grads();
        let mut total = 0.0;
        for (x, &t) in batch.data().chunks_exact(self.input_len()).zip(targets) {
            let x = self.prepare_input(x)?;
            total += self.accumulate(&x, t, T::from_f64(weights.get(t)), scale, &mut grads)?;
        }
        Ok((total / n as f64, grads))
    }

    fn check_weights(&self, weights: &ClassWeights) -> Result<()> {
        if weights.len() != self.cfg.num_classes {
            return Err(Error::Shape(format!(
                "{} class weights for {} classes",
                weights.len(),
                self.cfg.num_classes
            )));
        }
        Ok(())
    }

    /// Mean weighted loss of prepared inputs.
    pub fn mean_loss(&self, inputs: &[Vec<T>], targets: &[usize], weights: &ClassWeights) -> Result<f64> {
        self.check_weights(weights)?;
        let mut total = 0.0;
        for (x, &t) in inputs.iter().zip(targets) {
            let p = self.predict(x)?;
            total += weights.get(t) * -p[t].to_f64().max(PROB_EPSILON).ln();
        }
        Ok(total / inputs.len() as f64)
    }

    /// ReLU on/off pattern and pooling winners for one input. Finite
    /// differences are only meaningful between points sharing a signature.
    pub fn activation_signature(&self, x: &[T]) -> Result<Vec<u32>> {
        let tr = self.trace(x)?;
        let mut sig = Vec::new();
        for lt in &tr.layers {
            sig.extend(lt.z.iter().map(|&v| u32::from(v > T::ZERO)));
            sig.extend_from_slice(&lt.argmax);
        }
        Ok(sig)
    }

    pub fn cast<U: Real>(&self) -> SmallCnn<U> {
        SmallCnn {
            cfg: self.cfg.clone(),
            geo: self.geo.clone(),
            params: self
                .params
                .iter()
                .map(|p| p.iter().map(|v| U::from_f64(v.to_f64())).collect())
                .collect(),
        }
    }
}

/// Mean over rows of `w_y * -ln max(p_y, eps)` for one-hot `targets`.
pub fn loss<T: Real>(probabilities: &Tensor<T>, targets: &Tensor<T>, weights: &ClassWeights) -> Result<f64> {
    let s = probabilities.shape();
    if s.len() != 2 || targets.shape() != s {
        return Err(Error::Shape(format!(
            "probabilities {s:?} and targets {:?} must be equal 2-D shapes",
            targets.shape()
        )));
    }
    let (n, k) = (s[0], s[1]);
    if weights.len() != k {
        return Err(Error::Shape(format!("{} class weights for {k} classes", weights.len())));
    }
    if n == 0 {
        return Err(Error::DegenerateInput("empty batch".into()));
    }
    let mut total = 0.0;
    for i in 0..n {
        let t = targets.row(i);
        let ones: Vec<usize> = (0..k).filter(|&c| t[c] == T::ONE).collect();
        if ones.len() != 1 || t.iter().any(|&v| v != T::ZERO && v != T::ONE) {
            return Err(Error::Validation(format!("target row {i} is not one-hot")));
        }
        let y = ones[0];
        total += weights.get(y) * -probabilities.row(i)[y].to_f64().max(PROB_EPSILON).ln();
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn tiny(num_classes: usize, strides: [usize; 2]) -> SmallCnnConfig {
        SmallCnnConfig {
            input_shape: [8, 8, 3],
            blocks: vec![
                BlockConfig {
                    out_channels: 4,
                    stride: strides[0],
                },
                BlockConfig {
                    out_channels: 5,
                    stride: strides[1],
                },
            ],
            num_classes,
            input_offset: 0.0,
            input_scale: 1.0,
        }
    }

    fn random_batch(n: usize, shape: [usize; 3], seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = n * shape.iter().product::<usize>();
        let data = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
        Tensor::new(vec![n, shape[0], shape[1], shape[2]], data).unwrap()
    }

    #[test]
    fn standard_config_size() {
        let c = SmallCnnConfig::standard(128, 4);
        c.validate().unwrap();
        let n = c.param_count();
        assert!((90_000..110_000).contains(&n), "{n}");
        assert_eq!(c.param_specs()[0].name, "block0.conv.weight");
        assert_eq!(c.param_specs().last().unwrap().shape, vec![4]);
        // floor and ceiling of the dB range map to -1 and 1
        assert_eq!((-80.0 + c.input_offset) * c.input_scale, -1.0);
        assert_eq!(c.input_offset * c.input_scale, 1.0);
    }

    #[test]
    fn invalid_configs() {
        assert!(tiny(3, [1, 1]).validate().is_err());
        let mut c = tiny(2, [1, 1]);
        c.input_shape = [2, 2, 3];
        assert!(c.validate().is_err());
        c.input_shape = [8, 8, 3];
        c.blocks.clear();
        assert!(c.validate().is_err());
    }

    #[test]
    fn conv_matches_direct_convolution() {
        // one block, stride 2, pool disabled by reading z directly
        let cfg = tiny(2, [2, 1]);
        let m = SmallCnn::<f64>::new(cfg.clone(), 3).unwrap();
        let x: Vec<f64> = (0..192).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        let tr = m.trace(&x).unwrap();
        let g = m.geo[0];
        let w = &m.params[0];
        for co in 0..g.cout {
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    let mut acc = 0.0;
                    for ci in 0..3 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * 2 + ky) as isize - 1;
                                let ix = (ox * 2 + kx) as isize - 1;
                                if (0..8).contains(&iy) && (0..8).contains(&ix) {
                                    acc += w[((co * 3 + ci) * 3 + ky) * 3 + kx]
                                        * x[ci * 64 + iy as usize * 8 + ix as usize];
                                }
                            }
                        }
                    }
                    let got = tr.layers[0].z[co * g.p() + oy * g.wo + ox];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rows_sum_to_one_and_identical_inputs_agree() {
        let m = SmallCnn::<f32>::new(tiny(4, [1, 1]), 1).unwrap();
        let single = random_batch(1, [8, 8, 3], 5);
        let mut data = Vec::new();
        for _ in 0..3 {
            data.extend_from_slice(single.data());
        }
        let batch = Tensor::new(vec![3, 8, 8, 3], data).unwrap();
        let p = m.forward(&batch).unwrap();
        for i in 0..3 {
            let s: f32 = p.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert_eq!(p.row(i), p.row(0));
        }
        assert!(m.forward(&random_batch(1, [8, 7, 3], 1)).is_err());
    }

    #[test]
    fn zero_head_is_uniform() {
        for k in [2, 4] {
            let mut m = SmallCnn::<f32>::new(tiny(k, [1, 1]), 2).unwrap();
            m.zero_head();
            let p = m.forward(&random_batch(2, [8, 8, 3], 9)).unwrap();
            assert!(p.data().iter().all(|&v| v == 1.0 / k as f32));
        }
    }

    #[test]
    fn loss_reference_values() {
        let w = ClassWeights::uniform(4);
        let uniform = Tensor::new(vec![1, 4], vec![0.25f64; 4]).unwrap();
        let t = Tensor::new(vec![1, 4], vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!((loss(&uniform, &t, &w).unwrap() - 4f64.ln()).abs() < 1e-12);
        let perfect = Tensor::new(vec![1, 4], vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(loss(&perfect, &t, &w).unwrap().abs() < 1e-6);
        let zero = Tensor::new(vec![1, 4], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((loss(&zero, &t, &w).unwrap() - -(1e-7f64).ln()).abs() < 1e-9);
        let doubled = loss(&uniform, &t, &w.scaled(2.0)).unwrap();
        assert!((doubled - 2.0 * 4f64.ln()).abs() < 1e-12);
        let bad = Tensor::new(vec![1, 4], vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        assert!(loss(&uniform, &bad, &w).is_err());
    }

    #[test]
    fn head_bias_gradient_is_p_minus_y() {
        let m = SmallCnn::<f64>::new(tiny(4, [1, 1]), 4).unwrap();
        let batch = random_batch(1, [8, 8, 3], 6);
        let (_, grads) = m.backward(&batch, &[2], &ClassWeights::uniform(4)).unwrap();
        let p = m.forward(&batch).unwrap();
        for c in 0..4 {
            let want = p.data()[c] - if c == 2 { 1.0 } else { 0.0 };
            assert!((grads.last().unwrap()[c] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weight_class_has_no_gradient() {
        let m = SmallCnn::<f64>::new(tiny(2, [1, 1]), 4).unwrap();
        let batch = random_batch(2, [8, 8, 3], 7);
        let w = ClassWeights {
            weights: vec![0.0, 1.0],
        };
        let (_, g) = m.backward(&batch, &[0, 0], &w).unwrap();
        assert!(g.iter().flatten().all(|&v| v == 0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn probabilities_are_distributions(seed in 0u64..1000, k in prop::sample::select(vec![2usize, 4])) {
            let m = SmallCnn::<f32>::new(tiny(k, [1, 2]), seed).unwrap();
            let p = m.forward(&random_batch(2, [8, 8, 3], seed + 1)).unwrap();
            for i in 0..2 {
                let s: f32 = p.row(i).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
                prop_assert!(p.row(i).iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }
}
