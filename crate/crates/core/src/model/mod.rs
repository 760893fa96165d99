//! Micro-scale vision model built from TTT blocks:
//! patch embedding, `depth` blocks of
//! `[CPE → LN → TTT → LN → MLP]` with residuals, mean pooling and a linear
//! classifier.

mod flops;
mod optim;

pub use flops::{attention_flops, flops_estimate, ttt_layer_flops, FlopsReport, LayerFlops, MixerFlops};
pub use optim::{adamw_step, decays, AdamW, CosineSchedule, OptState};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::attention::{ttt_attention, TttConfig, TttParams};
use crate::tensor::Tensor;
use crate::{Error, Grid, Groups, Ops, Real, Result};
use num_traits::Float;

/// Shape of one input sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum InputSpec {
    /// `[size×size×channels]` images cut into `patch×patch` patches.
    Image { size: usize, patch: usize, channels: usize },
    /// Pre-tokenized `[len×dim]` sequences laid out on a near-square grid.
    Tokens { len: usize, dim: usize },
}

impl InputSpec {
    pub fn tokens(self) -> usize {
        match self {
            InputSpec::Image { size, patch, .. } => (size / patch) * (size / patch),
            InputSpec::Tokens { len, .. } => len,
        }
    }

    /// Width of one raw token before embedding.
    pub fn token_dim(self) -> usize {
        match self {
            InputSpec::Image { patch, channels, .. } => patch * patch * channels,
            InputSpec::Tokens { dim, .. } => dim,
        }
    }

    pub fn sample_shape(self) -> Vec<usize> {
        match self {
            InputSpec::Image { size, channels, .. } => alloc::vec![size, size, channels],
            InputSpec::Tokens { len, dim } => alloc::vec![len, dim],
        }
    }

    pub fn grid(self) -> Result<Grid> {
        match self {
            InputSpec::Image { size, patch, .. } => Ok(Grid::square((size / patch).pow(2)).expect("square")),
            InputSpec::Tokens { len, .. } => {
                Grid::for_tokens(len).ok_or_else(|| Error::Config(format!("no token grid for {len} tokens")))
            }
        }
    }
}

/// How the token sequence is reduced to one feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Readout {
    /// Global average pooling.
    #[default]
    Mean,
    /// The final token.
    Last,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    pub input: InputSpec,
    pub embed_dim: usize,
    pub heads: usize,
    pub depth: usize,
    #[cfg_attr(feature = "serde", serde(default = "default_mlp_ratio"))]
    pub mlp_ratio: usize,
    pub num_classes: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub ttt: TttConfig,
    #[cfg_attr(feature = "serde", serde(default))]
    pub readout: Readout,
}

#[cfg(feature = "serde")]
fn default_mlp_ratio() -> usize {
    4
}

/// Layer-norm epsilon used throughout the model.
pub const LN_EPS: f64 = 1e-5;

impl ModelConfig {
    /// The 32×32 CIFAR-scale model: dim 64, 4 heads, 4 blocks, patch 4.
    pub fn vit3_micro() -> Self {
        Self {
            input: InputSpec::Image { size: 32, patch: 4, channels: 3 },
            embed_dim: 64,
            heads: 4,
            depth: 4,
            mlp_ratio: 4,
            num_classes: 10,
            ttt: TttConfig::default(),
            readout: Readout::Mean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "embed_dim {} must be a multiple of heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.num_classes == 0 || self.mlp_ratio == 0 {
            return Err(Error::Config("num_classes and mlp_ratio must be positive".into()));
        }
        if let InputSpec::Image { size, patch, channels } = self.input {
            if patch == 0 || size % patch != 0 || channels == 0 {
                return Err(Error::Config(format!("patch {patch} does not tile a {size}x{size} image")));
            }
        }
        self.input.grid()?;
        self.ttt.inner.validate()?;
        for kind in self.ttt.layout.kinds(self.heads) {
            kind.validate()?;
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<V> {
    /// `[3,3,C]` depthwise positional-encoding kernel.
    pub cpe_w: V,
    pub cpe_b: V,
    pub ln1_g: V,
    pub ln1_b: V,
    pub ttt: TttParams<V>,
    pub ln2_g: V,
    pub ln2_b: V,
    pub mlp_w1: V,
    pub mlp_b1: V,
    pub mlp_w2: V,
    pub mlp_b2: V,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<V> {
    pub embed_w: V,
    pub embed_b: V,
    pub blocks: Vec<BlockParams<V>>,
    pub head_w: V,
    pub head_b: V,
}

impl<V> ModelParams<V> {
    /// Maps every tensor in a fixed order, passing its checkpoint name.
    pub fn map_named<'a, U>(&'a self, mut f: impl FnMut(&str, &'a V) -> U) -> ModelParams<U> {
        let embed_w = f("embed.w", &self.embed_w);
        let embed_b = f("embed.b", &self.embed_b);
        let blocks = self
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let mut g = |s: &str, v: &'a V| f(&format!("blocks.{i}.{s}"), v);
                BlockParams {
                    cpe_w: g("cpe.w", &b.cpe_w),
                    cpe_b: g("cpe.b", &b.cpe_b),
                    ln1_g: g("ln1.g", &b.ln1_g),
                    ln1_b: g("ln1.b", &b.ln1_b),
                    ttt: b.ttt.map_named(&format!("blocks.{i}.ttt"), &mut f),
                    ln2_g: f(&format!("blocks.{i}.ln2.g"), &b.ln2_g),
                    ln2_b: f(&format!("blocks.{i}.ln2.b"), &b.ln2_b),
                    mlp_w1: f(&format!("blocks.{i}.mlp.w1"), &b.mlp_w1),
                    mlp_b1: f(&format!("blocks.{i}.mlp.b1"), &b.mlp_b1),
                    mlp_w2: f(&format!("blocks.{i}.mlp.w2"), &b.mlp_w2),
                    mlp_b2: f(&format!("blocks.{i}.mlp.b2"), &b.mlp_b2),
                }
            })
            .collect();
        ModelParams { embed_w, embed_b, blocks, head_w: f("head.w", &self.head_w), head_b: f("head.b", &self.head_b) }
    }

    pub fn map<U>(&self, mut f: impl FnMut(&V) -> U) -> ModelParams<U> {
        self.map_named(|_, v| f(v))
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.map_named(|n, _| out.push(String::from(n)));
        out
    }

    pub fn flatten(&self) -> Vec<&V> {
        let mut out = Vec::new();
        self.map_named(|_, v| out.push(v));
        out
    }
}

impl<V: Clone> ModelParams<V> {
    /// Rebuilds the structure of `self` from tensors in `flatten` order.
    pub fn with_values<U: Clone>(&self, values: &[U]) -> Result<ModelParams<U>> {
        let count = self.flatten().len();
        if values.len() != count {
            return Err(Error::Config(format!("expected {count} parameter tensors, got {}", values.len())));
        }
        let mut it = values.iter();
        Ok(self.map(|_| it.next().expect("length checked").clone()))
    }
}

impl<T: Real> ModelParams<Tensor<T>> {
    pub fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.embed_dim;
        let h = cfg.mlp_ratio * c;
        let t = cfg.input.token_dim();
        let uniform = |shape: &[usize], fan_in: usize, rng: &mut dyn rand::RngCore| {
            let bound = 1.0 / Float::sqrt(fan_in as f64);
            Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..bound)))
        };
        let zeros = |n: usize| Tensor::zeros(&[1, n]);
        let ones = |n: usize| Tensor::full(&[1, n], T::one());
        let embed_w = uniform(&[t, c], t, rng);
        let blocks = (0..cfg.depth)
            .map(|_| {
                Ok(BlockParams {
                    cpe_w: uniform(&Groups::Depthwise.kernel_shape(c, c), 9, rng),
                    cpe_b: zeros(c),
                    ln1_g: ones(c),
                    ln1_b: zeros(c),
                    ttt: TttParams::init(c, cfg.heads, &cfg.ttt, rng)?,
                    ln2_g: ones(c),
                    ln2_b: zeros(c),
                    mlp_w1: uniform(&[c, h], c, rng),
                    mlp_b1: zeros(h),
                    mlp_w2: uniform(&[h, c], h, rng),
                    mlp_b2: zeros(c),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            embed_w,
            embed_b: zeros(c),
            blocks,
            head_w: uniform(&[c, cfg.num_classes], c, rng),
            head_b: zeros(cfg.num_classes),
        })
    }

    pub fn param_count(&self) -> usize {
        self.flatten().iter().map(|t| t.numel()).sum()
    }
}

/// Cuts an `[size×size×ch]` image into `[N × patch·patch·ch]` rows, patches
/// in raster order and each row ordered `(dy, dx, ch)`.
pub fn unfold_patches<T: Real>(image: &Tensor<T>, patch: usize) -> Result<Tensor<T>> {
    let s = image.shape();
    if s.len() != 3 || patch == 0 || !s[0].is_multiple_of(patch) || !s[1].is_multiple_of(patch) {
        return Err(Error::Config(format!("patch {patch} does not tile image of shape {s:?}")));
    }
    let (h, w, ch) = (s[0], s[1], s[2]);
    let (gh, gw) = (h / patch, w / patch);
    let row = patch * patch * ch;
    let data = image.data();
    let mut out = Vec::with_capacity(h * w * ch);
    for py in 0..gh {
        for px in 0..gw {
            for dy in 0..patch {
                let start = ((py * patch + dy) * w + px * patch) * ch;
                out.extend_from_slice(&data[start..start + patch * ch]);
            }
        }
    }
    Tensor::new(alloc::vec![gh * gw, row], out)
}

/// Inverse of [`unfold_patches`] for a square image.
pub fn fold_patches<T: Real>(tokens: &Tensor<T>, size: usize, patch: usize, channels: usize) -> Result<Tensor<T>> {
    let g = size / patch;
    let row = patch * patch * channels;
    if tokens.shape() != [g * g, row].as_slice() {
        return Err(crate::tensor::shape_err("fold_patches", tokens.shape(), &[g * g, row]));
    }
    let mut out = alloc::vec![T::zero(); size * size * channels];
    for (p, chunk) in tokens.data().chunks(row).enumerate() {
        let (py, px) = (p / g, p % g);
        for dy in 0..patch {
            let start = ((py * patch + dy) * size + px * patch) * channels;
            out[start..start + patch * channels]
                .copy_from_slice(&chunk[dy * patch * channels..(dy + 1) * patch * channels]);
        }
    }
    Tensor::new(alloc::vec![size, size, channels], out)
}

/// Non-overlapping patches of `image` projected to `[N×C]`.
pub fn patch_embed<T: Real, O: Ops<T>>(
    ops: &mut O,
    image: &Tensor<T>,
    patch: usize,
    w: &O::V,
    b: &O::V,
) -> Result<O::V> {
    let rows = ops.constant(unfold_patches(image, patch)?);
    ops.linear(&rows, w, Some(b))
}

fn layer_norm<T: Real, O: Ops<T>>(ops: &mut O, x: &O::V, g: &O::V, b: &O::V) -> Result<O::V> {
    let n = ops.layer_norm(x, LN_EPS)?;
    let s = ops.mul_row(&n, g)?;
    ops.add_row(&s, b)
}

/// One block: positional conv residual, then pre-norm TTT and MLP residuals.
pub fn vit3_block<T: Real, O: Ops<T>>(
    ops: &mut O,
    x: &O::V,
    p: &BlockParams<O::V>,
    ttt: &TttConfig,
    grid: Grid,
) -> Result<O::V> {
    let pos = ops.conv3x3(x, &p.cpe_w, grid, Groups::Depthwise)?;
    let pos = ops.add_row(&pos, &p.cpe_b)?;
    let x = ops.add(x, &pos)?;

    let h = layer_norm(ops, &x, &p.ln1_g, &p.ln1_b)?;
    let mixed = ttt_attention(ops, &h, &p.ttt, ttt, Some(grid))?;
    let x = ops.add(&x, &mixed)?;

    let h = layer_norm(ops, &x, &p.ln2_g, &p.ln2_b)?;
    let h = ops.linear(&h, &p.mlp_w1, Some(&p.mlp_b1))?;
    let h = ops.silu(&h)?;
    let h = ops.linear(&h, &p.mlp_w2, Some(&p.mlp_b2))?;
    ops.add(&x, &h)
}

/// Embedded tokens `[N×C]` of one sample.
pub fn embed<T: Real, O: Ops<T>>(
    ops: &mut O,
    p: &ModelParams<O::V>,
    cfg: &ModelConfig,
    sample: &Tensor<T>,
) -> Result<O::V> {
    let want = cfg.input.sample_shape();
    if sample.shape() != want.as_slice() {
        return Err(crate::tensor::shape_err("embed", sample.shape(), &want));
    }
    match cfg.input {
        InputSpec::Image { patch, .. } => patch_embed(ops, sample, patch, &p.embed_w, &p.embed_b),
        InputSpec::Tokens { .. } => {
            let x = ops.constant(sample.clone());
            ops.linear(&x, &p.embed_w, Some(&p.embed_b))
        }
    }
}

/// Pooled `[1×C]` features of one sample.
pub fn forward_features<T: Real, O: Ops<T>>(
    ops: &mut O,
    p: &ModelParams<O::V>,
    cfg: &ModelConfig,
    sample: &Tensor<T>,
) -> Result<O::V> {
    let grid = cfg.input.grid()?;
    let mut x = embed(ops, p, cfg, sample)?;
    for block in &p.blocks {
        x = vit3_block(ops, &x, block, &cfg.ttt, grid)?;
    }
    match cfg.readout {
        Readout::Mean => {
            let s = ops.col_sums(&x)?;
            ops.scale(&s, 1.0 / grid.tokens() as f64)
        }
        Readout::Last => ops.slice_rows(&x, grid.tokens() - 1, grid.tokens()),
    }
}

/// `[1×classes]` logits of one sample.
pub fn forward_logits<T: Real, O: Ops<T>>(
    ops: &mut O,
    p: &ModelParams<O::V>,
    cfg: &ModelConfig,
    sample: &Tensor<T>,
) -> Result<O::V> {
    let f = forward_features(ops, p, cfg, sample)?;
    ops.linear(&f, &p.head_w, Some(&p.head_b))
}

/// Splits a `[b × sample…]` batch into its samples.
pub fn samples<T: Real>(batch: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
    let s = batch.shape();
    if s.len() < 2 {
        return Err(Error::InvalidShape { shape: s.to_vec(), reason: "batch needs a leading sample axis" });
    }
    let per: usize = s[1..].iter().product();
    batch.data().chunks(per).map(|c| Tensor::new(s[1..].to_vec(), c.to_vec())).collect()
}

/// `[b×classes]` logits for a batch of samples.
pub fn forward_classifier<T: Real, O: Ops<T>>(
    ops: &mut O,
    p: &ModelParams<O::V>,
    cfg: &ModelConfig,
    batch: &Tensor<T>,
) -> Result<O::V> {
    let feats = samples(batch)?.iter().map(|s| forward_features(ops, p, cfg, s)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&O::V> = feats.iter().collect();
    let f = if refs.len() == 1 { feats[0].clone() } else { ops.concat_rows(&refs)? };
    ops.linear(&f, &p.head_w, Some(&p.head_b))
}
