use ndarray::{concatenate, s, Array3, ArrayView3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm1d, Conv1d, ConvTranspose1d, MaxPool1d, ParamRef, Relu};
use crate::error::{Error, Result};

/// Architecture hyperparameters. The defaults reproduce the published
/// model: four encoder levels starting at 64 channels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub ch_in: usize,
    pub ch_out: usize,
    pub base_width: usize,
    pub depth: usize,
    pub kernel_size: usize,
    pub padding: usize,
    pub stride: usize,
    pub pool_size: usize,
    pub up_kernel: usize,
    pub up_stride: usize,
}

impl UNetConfig {
    pub fn new(ch_in: usize, ch_out: usize) -> Self {
        Self {
            ch_in,
            ch_out,
            base_width: 64,
            depth: 4,
            kernel_size: 3,
            padding: 1,
            stride: 1,
            pool_size: 2,
            up_kernel: 2,
            up_stride: 2,
        }
    }

    pub fn with_width(mut self, base_width: usize, depth: usize) -> Self {
        self.base_width = base_width;
        self.depth = depth;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.ch_in == 0 || self.ch_out == 0 {
            return bad("channel counts must be positive");
        }
        if self.base_width == 0 || self.depth == 0 {
            return bad("base width and depth must be positive");
        }
        if self.stride != 1 {
            return bad("conv-block stride must be 1");
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) || self.padding * 2 + 1 != self.kernel_size {
            return bad("conv-block kernel must be odd with 'same' padding");
        }
        if self.pool_size < 2 {
            return bad("pool size must be at least 2");
        }
        if self.up_kernel != self.pool_size || self.up_stride != self.pool_size {
            return bad("upsampling kernel and stride must equal the pool size");
        }
        if self.base_width.checked_shl(self.depth as u32).is_none() || self.depth > 16 {
            return bad("depth too large");
        }
        Ok(())
    }

    /// Channel width at encoder level `k`; level `depth` is the bottleneck.
    pub fn width(&self, level: usize) -> usize {
        self.base_width << level
    }

    pub fn encoder_widths(&self) -> Vec<usize> {
        (0..self.depth).map(|k| self.width(k)).collect()
    }

    pub fn bottleneck_width(&self) -> usize {
        self.width(self.depth)
    }

    /// Input lengths must be multiples of this.
    pub fn length_multiple(&self) -> usize {
        self.pool_size.pow(self.depth as u32)
    }
}

/// Two (convolution → batch norm → ReLU) stages. The first convolution sets
/// the output width, the second preserves it.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub conv1: Conv1d,
    pub bn1: BatchNorm1d,
    relu1: Relu,
    pub conv2: Conv1d,
    pub bn2: BatchNorm1d,
    relu2: Relu,
}

impl ConvBlock {
    fn new(cfg: &UNetConfig, in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv1: Conv1d::new(in_ch, out_ch, cfg.kernel_size, cfg.padding, rng),
            bn1: BatchNorm1d::new(out_ch),
            relu1: Relu::default(),
            conv2: Conv1d::new(out_ch, out_ch, cfg.kernel_size, cfg.padding, rng),
            bn2: BatchNorm1d::new(out_ch),
            relu2: Relu::default(),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.conv2.out_channels
    }

    fn forward(&self, x: ArrayView3<'_, f64>) -> Array3<f64> {
        let h = Relu::forward(self.bn1.forward(self.conv1.forward(x).view()));
        Relu::forward(self.bn2.forward(self.conv2.forward(h.view()).view()))
    }

    fn forward_train(&mut self, x: Array3<f64>) -> Array3<f64> {
        let h = self.conv1.forward_train(x);
        let h = self.bn1.forward_train(h);
        let h = self.relu1.forward_train(h);
        let h = self.conv2.forward_train(h);
        let h = self.bn2.forward_train(h);
        self.relu2.forward_train(h)
    }

    fn backward(&mut self, dy: &Array3<f64>) -> Array3<f64> {
        let d = self.relu2.backward(dy);
        let d = self.bn2.backward(&d);
        let d = self.conv2.backward(&d);
        let d = self.relu1.backward(&d);
        let d = self.bn1.backward(&d);
        self.conv1.backward(&d)
    }

    fn num_params(&self) -> usize {
        self.conv1.num_params() + self.bn1.num_params() + self.conv2.num_params() + self.bn2.num_params()
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<ParamRef<'a>>) {
        self.conv1.params_mut(out);
        self.bn1.params_mut(out);
        self.conv2.params_mut(out);
        self.bn2.params_mut(out);
    }

    fn params<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        self.conv1.params(out);
        self.bn1.params(out);
        self.conv2.params(out);
        self.bn2.params(out);
    }

    fn buffers_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        self.bn1.buffers_mut(out);
        self.bn2.buffers_mut(out);
    }

    fn buffers<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        self.bn1.buffers(out);
        self.bn2.buffers(out);
    }
}

/// Shape of one intermediate tensor, recorded by [`UNet::forward_traced`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageShape {
    pub stage: String,
    pub shape: (usize, usize, usize),
}

/// 1D U-net: `depth` encoder blocks each followed by max-pooling, a
/// bottleneck block, `depth` decoder levels of (transposed-convolution
/// upsample → concatenate skip → block), and a pointwise projection head
/// with no activation.
#[derive(Debug, Clone)]
pub struct UNet {
    config: UNetConfig,
    pub encoders: Vec<ConvBlock>,
    pools: Vec<MaxPool1d>,
    pub bottleneck: ConvBlock,
    pub upsamplers: Vec<ConvTranspose1d>,
    pub decoders: Vec<ConvBlock>,
    pub head: Conv1d,
}

impl UNet {
    /// Builds a model with weights drawn from a ChaCha8 stream seeded by `seed`.
    pub fn new(config: UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut encoders = Vec::with_capacity(config.depth);
        let mut ch = config.ch_in;
        for k in 0..config.depth {
            encoders.push(ConvBlock::new(&config, ch, config.width(k), &mut rng));
            ch = config.width(k);
        }
        let bottleneck = ConvBlock::new(&config, ch, config.bottleneck_width(), &mut rng);
        // decoders[k] and upsamplers[k] serve encoder level k
        let mut upsamplers = Vec::with_capacity(config.depth);
        let mut decoders = Vec::with_capacity(config.depth);
        for k in 0..config.depth {
            let w = config.width(k);
            upsamplers.push(ConvTranspose1d::new(2 * w, w, config.up_kernel, &mut rng));
            decoders.push(ConvBlock::new(&config, 2 * w, w, &mut rng));
        }
        let head = Conv1d::new(config.base_width, config.ch_out, 1, 0, &mut rng);
        Ok(Self {
            pools: (0..config.depth).map(|_| MaxPool1d::new(config.pool_size)).collect(),
            config,
            encoders,
            bottleneck,
            upsamplers,
            decoders,
            head,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn check_input(&self, dim: (usize, usize, usize)) -> Result<()> {
        let (batch, ch, len) = dim;
        if batch == 0 {
            return Err(Error::Shape("batch must be non-empty".into()));
        }
        if ch != self.config.ch_in {
            return Err(Error::Shape(format!(
                "model expects {} input channels, got {ch}",
                self.config.ch_in
            )));
        }
        let m = self.config.length_multiple();
        if len == 0 || len % m != 0 {
            return Err(Error::Shape(format!("input length {len} is not a positive multiple of {m}")));
        }
        Ok(())
    }

    fn run(&self, x: ArrayView3<'_, f64>, mut trace: Option<&mut Vec<StageShape>>) -> Array3<f64> {
        let mut record = |name: String, a: &Array3<f64>| {
            if let Some(t) = trace.as_deref_mut() {
                t.push(StageShape { stage: name, shape: a.dim() });
            }
        };
        let mut skips = Vec::with_capacity(self.config.depth);
        let mut h = x.to_owned();
        for (k, (enc, pool)) in self.encoders.iter().zip(&self.pools).enumerate() {
            let s = enc.forward(h.view());
            record(format!("enc{k}"), &s);
            h = pool.forward(s.view());
            record(format!("pool{k}"), &h);
            skips.push(s);
        }
        h = self.bottleneck.forward(h.view());
        record("bottleneck".into(), &h);
        for k in (0..self.config.depth).rev() {
            let up = self.upsamplers[k].forward(h.view());
            record(format!("up{k}"), &up);
            let cat = concatenate(Axis(1), &[skips[k].view(), up.view()]).unwrap();
            record(format!("cat{k}"), &cat);
            h = self.decoders[k].forward(cat.view());
            record(format!("dec{k}"), &h);
        }
        let y = self.head.forward(h.view());
        record("head".into(), &y);
        y
    }

    /// Inference-mode forward pass (running batch-norm statistics, no caching).
    pub fn forward(&self, x: ArrayView3<'_, f64>) -> Result<Array3<f64>> {
        self.check_input(x.dim())?;
        Ok(self.run(x, None))
    }

    /// Like [`forward`](Self::forward) but also reports every intermediate shape.
    pub fn forward_traced(&self, x: ArrayView3<'_, f64>) -> Result<(Array3<f64>, Vec<StageShape>)> {
        self.check_input(x.dim())?;
        let mut trace = Vec::new();
        let y = self.run(x, Some(&mut trace));
        Ok((y, trace))
    }

    /// Training-mode forward pass: batch statistics, running-stat updates,
    /// and caches for [`backward`](Self::backward).
    pub fn forward_train(&mut self, x: Array3<f64>) -> Result<Array3<f64>> {
        self.check_input(x.dim())?;
        let mut skips = Vec::with_capacity(self.config.depth);
        let mut h = x;
        for (enc, pool) in self.encoders.iter_mut().zip(self.pools.iter_mut()) {
            let s = enc.forward_train(h);
            h = pool.forward_train(&s);
            skips.push(s);
        }
        h = self.bottleneck.forward_train(h);
        for k in (0..self.config.depth).rev() {
            let up = self.upsamplers[k].forward_train(h);
            let cat = concatenate(Axis(1), &[skips[k].view(), up.view()]).unwrap();
            h = self.decoders[k].forward_train(cat);
        }
        Ok(self.head.forward_train(h))
    }

    /// Back-propagates `dy` (gradient of the loss w.r.t. the last training
    /// output), accumulating parameter gradients. Returns the input gradient.
    pub fn backward(&mut self, dy: &Array3<f64>) -> Array3<f64> {
        let depth = self.config.depth;
        let mut d = self.head.backward(dy);
        let mut skip_grads: Vec<Option<Array3<f64>>> = vec![None; depth];
        for k in 0..depth {
            let dcat = self.decoders[k].backward(&d);
            let w = self.config.width(k);
            skip_grads[k] = Some(dcat.slice(s![.., ..w, ..]).to_owned());
            d = self.upsamplers[k].backward(&dcat.slice(s![.., w.., ..]).to_owned());
        }
        d = self.bottleneck.backward(&d);
        for k in (0..depth).rev() {
            let mut ds = self.pools[k].backward(&d);
            ds += skip_grads[k].as_ref().unwrap();
            d = self.encoders[k].backward(&ds);
        }
        d
    }

    pub fn num_params(&self) -> usize {
        self.encoders.iter().map(ConvBlock::num_params).sum::<usize>()
            + self.bottleneck.num_params()
            + self.upsamplers.iter().map(ConvTranspose1d::num_params).sum::<usize>()
            + self.decoders.iter().map(ConvBlock::num_params).sum::<usize>()
            + self.head.num_params()
    }

    /// Trainable tensors with their gradients, in a fixed order.
    pub fn params_mut(&mut self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        for e in &mut self.encoders {
            e.params_mut(&mut out);
        }
        self.bottleneck.params_mut(&mut out);
        for (u, d) in self.upsamplers.iter_mut().zip(self.decoders.iter_mut()) {
            u.params_mut(&mut out);
            d.params_mut(&mut out);
        }
        self.head.params_mut(&mut out);
        out
    }

    /// Trainable tensors in the same order as [`params_mut`](Self::params_mut).
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for e in &self.encoders {
            e.params(&mut out);
        }
        self.bottleneck.params(&mut out);
        for (u, d) in self.upsamplers.iter().zip(&self.decoders) {
            u.params(&mut out);
            d.params(&mut out);
        }
        self.head.params(&mut out);
        out
    }

    /// Batch-norm running statistics, in a fixed order.
    pub fn buffers(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for e in &self.encoders {
            e.buffers(&mut out);
        }
        self.bottleneck.buffers(&mut out);
        for d in &self.decoders {
            d.buffers(&mut out);
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for e in &mut self.encoders {
            e.buffers_mut(&mut out);
        }
        self.bottleneck.buffers_mut(&mut out);
        for d in &mut self.decoders {
            d.buffers_mut(&mut out);
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(0.0);
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params().into_iter().flatten().copied().collect()
    }

    pub fn flat_grads(&mut self) -> Vec<f64> {
        self.params_mut().into_iter().flat_map(|p| p.grad.to_vec()).collect()
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        let mut params = self.params_mut();
        let total: usize = params.iter().map(|p| p.value.len()).sum();
        if total != values.len() {
            return Err(Error::Shape(format!("expected {total} parameters, got {}", values.len())));
        }
        let mut offset = 0;
        for p in params.iter_mut() {
            let n = p.value.len();
            p.value.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(UNetConfig::new(2, 6).validate().is_ok());
        assert!(UNetConfig::new(0, 6).validate().is_err());
        let mut c = UNetConfig::new(2, 6);
        c.kernel_size = 4;
        assert!(c.validate().is_err());
        let mut c = UNetConfig::new(2, 6);
        c.up_stride = 3;
        assert!(c.validate().is_err());
        assert!(UNet::new(UNetConfig::new(2, 6).with_width(4, 0), 1).is_err());
    }

    #[test]
    fn widths_follow_doubling_law() {
        let c = UNetConfig::new(3, 5);
        assert_eq!(c.encoder_widths(), vec![64, 128, 256, 512]);
        assert_eq!(c.bottleneck_width(), 1024);
        assert_eq!(c.length_multiple(), 16);
        let small = UNetConfig::new(3, 5).with_width(8, 4);
        assert_eq!(small.encoder_widths(), vec![8, 16, 32, 64]);
        assert_eq!(small.bottleneck_width(), 128);
    }

    #[test]
    fn same_seed_same_weights() {
        let a = UNet::new(UNetConfig::new(2, 3).with_width(4, 2), 5).unwrap();
        let b = UNet::new(UNetConfig::new(2, 3).with_width(4, 2), 5).unwrap();
        let c = UNet::new(UNetConfig::new(2, 3).with_width(4, 2), 6).unwrap();
        assert_eq!(a.flat_params(), b.flat_params());
        assert_ne!(a.flat_params(), c.flat_params());
    }

    #[test]
    fn rejects_bad_inputs_before_computing() {
        let m = UNet::new(UNetConfig::new(2, 6).with_width(4, 4), 0).unwrap();
        assert!(matches!(m.forward(Array3::zeros((1, 2, 1000)).view()), Err(Error::Shape(_))));
        assert!(matches!(m.forward(Array3::zeros((1, 3, 1024)).view()), Err(Error::Shape(_))));
        assert!(matches!(m.forward(Array3::zeros((0, 2, 1024)).view()), Err(Error::Shape(_))));
    }
}
