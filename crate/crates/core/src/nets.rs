//! Trainable image networks: a U-Net and the dilated-convolution Lagrange
//! multiplier initialiser. Both act on `[C, H, W]` real tensors, so complex
//! images enter as their two real planes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, ConvSpec, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::init::kaiming_uniform;
use crate::tensor::{Real, Tensor};

/// Convolution layer whose weights live in a [`ParamStore`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub spec: ConvSpec,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
}

impl Conv {
    pub fn new<R: Real>(
        store: &mut ParamStore<R>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        spec: ConvSpec,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), kaiming_uniform(&[out_ch, in_ch, kernel, kernel], rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([out_ch]));
        Self {
            weight,
            bias,
            spec,
            in_ch,
            out_ch,
            kernel,
        }
    }

    pub fn forward<R: Real>(&self, p: &Bound<R>, x: &Var<R>) -> Result<Var<R>> {
        let w = p.param(self.weight);
        let b = p.param(self.bias);
        p.tape.conv2d(x, &w, Some(&b), self.spec)
    }

    pub fn num_params(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel * self.kernel + self.out_ch
    }

    fn scale_weight<R: Real>(&self, store: &mut ParamStore<R>, s: f64) {
        let w = &mut store.get_mut(self.weight).value;
        *w = w.scale(R::of(s));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub in_ch: usize,
    pub out_ch: usize,
    /// Number of resolution levels; `1` is a plain conv stack.
    pub scales: usize,
    /// Channels at the finest level, doubled at each coarser level.
    pub filters: usize,
    /// Add the first `out_ch` input channels to the output.
    pub residual: bool,
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_ch == 0 || self.out_ch == 0 || self.scales == 0 || self.filters == 0 {
            return Err(Error::InvalidArgument(format!("degenerate U-Net config {self:?}")));
        }
        if self.residual && self.in_ch < self.out_ch {
            return Err(Error::InvalidArgument("residual U-Net needs in_ch >= out_ch".into()));
        }
        Ok(())
    }

    fn width(&self, level: usize) -> usize {
        self.filters << level
    }

    /// Analytic weight count.
    pub fn num_params(&self) -> usize {
        let conv = |ci: usize, co: usize, k: usize| co * ci * k * k + co;
        let mut n = 0;
        for l in 0..self.scales {
            let ci = if l == 0 { self.in_ch } else { self.width(l - 1) };
            n += conv(ci, self.width(l), 3) + conv(self.width(l), self.width(l), 3);
        }
        for l in 0..self.scales - 1 {
            n += conv(self.width(l) + self.width(l + 1), self.width(l), 3) + conv(self.width(l), self.width(l), 3);
        }
        n + conv(self.filters, self.out_ch, 1)
    }
}

/// U-Net with two 3×3 conv + ReLU layers per level, average-pool
/// downsampling, bilinear upsampling and concatenated skips.
///
/// Inputs whose sides are not multiples of `2^(scales-1)` are
/// replication-padded at the bottom/right and cropped back afterwards.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UNet {
    pub config: UNetConfig,
    down: Vec<[Conv; 2]>,
    up: Vec<[Conv; 2]>,
    head: Conv,
}

impl UNet {
    pub fn new<R: Real>(store: &mut ParamStore<R>, name: &str, config: UNetConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let same = ConvSpec::same(3, 1);
        let mut down = Vec::new();
        for l in 0..config.scales {
            let ci = if l == 0 { config.in_ch } else { config.width(l - 1) };
            let co = config.width(l);
            down.push([
                Conv::new(store, &format!("{name}.down{l}.0"), ci, co, 3, same, rng),
                Conv::new(store, &format!("{name}.down{l}.1"), co, co, 3, same, rng),
            ]);
        }
        let mut up = Vec::new();
        for l in 0..config.scales - 1 {
            let co = config.width(l);
            up.push([
                Conv::new(store, &format!("{name}.up{l}.0"), co + config.width(l + 1), co, 3, same, rng),
                Conv::new(store, &format!("{name}.up{l}.1"), co, co, 3, same, rng),
            ]);
        }
        let head = Conv::new(store, &format!("{name}.head"), config.filters, config.out_ch, 1, ConvSpec::default(), rng);
        if config.residual {
            // start close to the identity map
            head.scale_weight(store, 0.1);
        }
        Ok(Self { config, down, up, head })
    }

    pub fn num_params(&self) -> usize {
        self.down.iter().chain(&self.up).flatten().map(Conv::num_params).sum::<usize>() + self.head.num_params()
    }

    /// Every parameter id owned by this network.
    pub fn param_ids(&self) -> Vec<ParamId> {
        self.down
            .iter()
            .chain(&self.up)
            .flatten()
            .chain(std::iter::once(&self.head))
            .flat_map(|c| [c.weight, c.bias])
            .collect()
    }

    pub fn head(&self) -> &Conv {
        &self.head
    }

    pub fn forward<R: Real>(&self, p: &Bound<R>, x: &Var<R>) -> Result<Var<R>> {
        let tape = p.tape;
        let &[c, h, w] = x.shape() else {
            return Err(Error::shape("unet", "[C, H, W]", x.shape()));
        };
        if c != self.config.in_ch {
            return Err(Error::shape("unet channels", self.config.in_ch, c));
        }
        let m = 1usize << (self.config.scales - 1);
        let (hp, wp) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
        let padded = if (hp, wp) != (h, w) {
            tape.replication_pad(x, 0, hp - h, 0, wp - w)?
        } else {
            x.clone()
        };

        let mut skips = Vec::new();
        let mut cur = padded;
        for (l, [a, b]) in self.down.iter().enumerate() {
            cur = tape.relu(&a.forward(p, &cur)?);
            cur = tape.relu(&b.forward(p, &cur)?);
            if l + 1 < self.config.scales {
                skips.push(cur.clone());
                cur = tape.avgpool2(&cur)?;
            }
        }
        for (l, [a, b]) in self.up.iter().enumerate().rev() {
            let upsampled = tape.upsample2(&cur)?;
            cur = tape.concat(&[&skips[l], &upsampled])?;
            cur = tape.relu(&a.forward(p, &cur)?);
            cur = tape.relu(&b.forward(p, &cur)?);
        }
        let mut out = self.head.forward(p, &cur)?;
        if (hp, wp) != (h, w) {
            out = tape.crop(&out, 0, 0, h, w)?;
        }
        if self.config.residual {
            let base = if c == self.config.out_ch {
                x.clone()
            } else {
                tape.crop_channels(x, 0, self.config.out_ch)?
            };
            out = tape.add(&base, &out)?;
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagrangeInitConfig {
    /// Complex image channels in and out.
    pub channels: usize,
    /// Output channels of the dilated blocks.
    pub filters: Vec<usize>,
    /// Dilation of each block; the replication padding equals the dilation.
    pub dilations: Vec<usize>,
    /// Width of the hidden 1×1 layer.
    pub hidden: usize,
}

impl Default for LagrangeInitConfig {
    fn default() -> Self {
        Self {
            channels: 2,
            filters: vec![8, 8, 16, 16],
            dilations: vec![1, 1, 2, 4],
            hidden: 16,
        }
    }
}

impl LagrangeInitConfig {
    pub fn num_params(&self) -> usize {
        let mut n = 0;
        let mut ci = self.channels;
        for &co in &self.filters {
            n += co * ci * 9 + co;
            ci = co;
        }
        n + self.hidden * ci + self.hidden + self.channels * self.hidden + self.channels
    }
}

/// `u⁰ = 𝒢ψ(x⁰)`: blocks of replication padding, a dilated 3×3 conv and ReLU,
/// then a 1×1 conv with ReLU and a linear 1×1 projection back to the input
/// channels. The output has the input's shape.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LagrangeInit {
    pub config: LagrangeInitConfig,
    blocks: Vec<Conv>,
    mix: Conv,
    proj: Conv,
}

impl LagrangeInit {
    pub fn new<R: Real>(store: &mut ParamStore<R>, name: &str, config: LagrangeInitConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.filters.len() != config.dilations.len() || config.filters.is_empty() {
            return Err(Error::InvalidArgument("LagrangeInit needs one dilation per block".into()));
        }
        if config.dilations.contains(&0) {
            return Err(Error::InvalidArgument("dilation must be >= 1".into()));
        }
        let mut ci = config.channels;
        let mut blocks = Vec::new();
        for (i, (&co, &d)) in config.filters.iter().zip(&config.dilations).enumerate() {
            let spec = ConvSpec {
                dilation: d,
                ..ConvSpec::default()
            };
            blocks.push(Conv::new(store, &format!("{name}.block{i}"), ci, co, 3, spec, rng));
            ci = co;
        }
        let mix = Conv::new(store, &format!("{name}.mix"), ci, config.hidden, 1, ConvSpec::default(), rng);
        let proj = Conv::new(store, &format!("{name}.proj"), config.hidden, config.channels, 1, ConvSpec::default(), rng);
        proj.scale_weight(store, 0.1);
        Ok(Self {
            config,
            blocks,
            mix,
            proj,
        })
    }

    /// The final projection layer; zeroing it makes `u⁰ = 0`.
    pub fn projection(&self) -> &Conv {
        &self.proj
    }

    pub fn num_params(&self) -> usize {
        self.blocks.iter().map(Conv::num_params).sum::<usize>() + self.mix.num_params() + self.proj.num_params()
    }

    pub fn forward<R: Real>(&self, p: &Bound<R>, x: &Var<R>) -> Result<Var<R>> {
        let tape = p.tape;
        let &[c, _, _] = x.shape() else {
            return Err(Error::shape("lagrange_init", "[C, H, W]", x.shape()));
        };
        if c != self.config.channels {
            return Err(Error::shape("lagrange_init channels", self.config.channels, c));
        }
        let mut cur = x.clone();
        for conv in &self.blocks {
            let d = conv.spec.dilation;
            cur = tape.replication_pad(&cur, d, d, d, d)?;
            cur = tape.relu(&conv.forward(p, &cur)?);
        }
        cur = tape.relu(&self.mix.forward(p, &cur)?);
        self.proj.forward(p, &cur)
    }
}
