//! The conditional velocity network and its exact gradients.
//!
//! Architecture (residual MLP with adaptive-norm conditioning):
//!
//! ```text
//! cond  = W_c e + b_c                  (or the learned null embedding)
//! s     = cond + W_t phi(t) + b_t + layer_emb[layer] + pos_emb[bucket(position)]
//! c     = silu(s)
//! h     = W_in a + b_in
//! per block:
//!     [gamma, beta, alpha] = W_mod c + b_mod
//!     x = layernorm(h) * (1 + gamma) + beta
//!     h = h + alpha * (W_2 silu(W_1 x + b_1) + b_2)
//! v     = W_out h + b_out
//! ```
//!
//! `phi(t)` is `[sin(w_j t), cos(w_j t)]` with frequencies spaced
//! geometrically from 1 to [`MAX_TIME_FREQUENCY`]. The layer norm has no
//! affine parameters of its own; scale and shift come from the conditioning.
//!
//! All parameters live in one flat `Vec<f64>` whose ordering is fixed by
//! [`Layout`]. That ordering is the on-disk order of `UAFM1` checkpoints.

use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::ByteReader;
use crate::numerics::{check_dim, Rng};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"UAFM1";
pub const MAX_TIME_FREQUENCY: f64 = 200.0;
const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub activation_dim: usize,
    pub condition_dim: usize,
    pub hidden_dim: usize,
    pub num_blocks: usize,
    /// Number of sinusoidal time features; must be even.
    pub time_embed_dim: usize,
    pub max_layers: usize,
    pub position_buckets: usize,
    /// Positions `[k * width, (k + 1) * width)` share bucket `k`; the last
    /// bucket absorbs everything beyond.
    pub position_bucket_width: usize,
    /// When false the null condition is a fixed zero vector.
    pub learned_null: bool,
}

impl ModelConfig {
    /// Desk-scale defaults for the given activation and condition widths.
    pub fn new(activation_dim: usize, condition_dim: usize) -> Self {
        Self {
            activation_dim,
            condition_dim,
            hidden_dim: 64,
            num_blocks: 2,
            time_embed_dim: 16,
            max_layers: 4,
            position_buckets: 8,
            position_bucket_width: 4,
            learned_null: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("activation_dim", self.activation_dim),
            ("condition_dim", self.condition_dim),
            ("hidden_dim", self.hidden_dim),
            ("num_blocks", self.num_blocks),
            ("time_embed_dim", self.time_embed_dim),
            ("max_layers", self.max_layers),
            ("position_buckets", self.position_buckets),
            ("position_bucket_width", self.position_bucket_width),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
            if u32::try_from(v).is_err() {
                return Err(Error::Config(format!("{name} {v} does not fit in u32")));
            }
        }
        if !self.time_embed_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "time_embed_dim must be even, got {}",
                self.time_embed_dim
            )));
        }
        Ok(())
    }

    pub fn position_bucket(&self, position: u32) -> usize {
        (position as usize / self.position_bucket_width).min(self.position_buckets - 1)
    }
}

/// Where an activation was read: transformer layer and token position.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Site {
    pub layer: u32,
    pub position: u32,
}

impl Site {
    pub fn new(layer: u32, position: u32) -> Self {
        Self { layer, position }
    }
}

/// A condition as seen by the network: an encoded text or the null condition
/// used for classifier-free guidance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Condition<'a> {
    Null,
    Embedding(&'a [f64]),
}

/// Anything that can serve as `v(a, t, c, layer, position)`: the trained
/// network, or a closed-form field in tests.
pub trait VelocityField: Sync {
    fn activation_dim(&self) -> usize;
    fn velocity(&self, a: &[f64], t: f64, cond: Condition<'_>, site: Site) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct BlockLayout {
    mod_w: Range<usize>,
    mod_b: Range<usize>,
    fc1_w: Range<usize>,
    fc1_b: Range<usize>,
    fc2_w: Range<usize>,
    fc2_b: Range<usize>,
}

/// Offsets of every tensor in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    cond_w: Range<usize>,
    cond_b: Range<usize>,
    null: Range<usize>,
    time_w: Range<usize>,
    time_b: Range<usize>,
    layer_emb: Range<usize>,
    pos_emb: Range<usize>,
    in_w: Range<usize>,
    in_b: Range<usize>,
    blocks: Vec<BlockLayout>,
    out_w: Range<usize>,
    out_b: Range<usize>,
    total: usize,
}

impl Layout {
    pub fn new(config: &ModelConfig) -> Self {
        let (d, e, h, td) = (
            config.activation_dim,
            config.condition_dim,
            config.hidden_dim,
            config.time_embed_dim,
        );
        let mut next = 0usize;
        let mut take = |n: usize| {
            let r = next..next + n;
            next += n;
            r
        };
        let cond_w = take(h * e);
        let cond_b = take(h);
        let null = take(h);
        let time_w = take(h * td);
        let time_b = take(h);
        let layer_emb = take(config.max_layers * h);
        let pos_emb = take(config.position_buckets * h);
        let in_w = take(h * d);
        let in_b = take(h);
        let blocks = (0..config.num_blocks)
            .map(|_| BlockLayout {
                mod_w: take(3 * h * h),
                mod_b: take(3 * h),
                fc1_w: take(h * h),
                fc1_b: take(h),
                fc2_w: take(h * h),
                fc2_b: take(h),
            })
            .collect();
        let out_w = take(d * h);
        let out_b = take(d);
        Self {
            cond_w,
            cond_b,
            null,
            time_w,
            time_b,
            layer_emb,
            pos_emb,
            in_w,
            in_b,
            blocks,
            out_w,
            out_b,
            total: next,
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Every tensor with a readable name, in storage order.
    pub fn tensors(&self) -> Vec<(String, Range<usize>)> {
        let mut v = vec![
            ("cond_proj.weight".to_string(), self.cond_w.clone()),
            ("cond_proj.bias".to_string(), self.cond_b.clone()),
            ("null_embedding".to_string(), self.null.clone()),
            ("time_proj.weight".to_string(), self.time_w.clone()),
            ("time_proj.bias".to_string(), self.time_b.clone()),
            ("layer_embedding".to_string(), self.layer_emb.clone()),
            ("position_embedding".to_string(), self.pos_emb.clone()),
            ("input.weight".to_string(), self.in_w.clone()),
            ("input.bias".to_string(), self.in_b.clone()),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            v.push((format!("block{i}.modulation.weight"), b.mod_w.clone()));
            v.push((format!("block{i}.modulation.bias"), b.mod_b.clone()));
            v.push((format!("block{i}.fc1.weight"), b.fc1_w.clone()));
            v.push((format!("block{i}.fc1.bias"), b.fc1_b.clone()));
            v.push((format!("block{i}.fc2.weight"), b.fc2_w.clone()));
            v.push((format!("block{i}.fc2.bias"), b.fc2_b.clone()));
        }
        v.push(("output.weight".to_string(), self.out_w.clone()));
        v.push(("output.bias".to_string(), self.out_b.clone()));
        v
    }

    pub fn null_embedding(&self) -> Range<usize> {
        self.null.clone()
    }

    pub fn output(&self) -> Range<usize> {
        self.out_w.start..self.out_b.end
    }

    pub fn output_bias(&self) -> Range<usize> {
        self.out_b.clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    layout: Layout,
    values: Vec<f64>,
}

/// Gradient of the loss, laid out exactly like [`ModelParams::values`].
pub type Gradient = Vec<f64>;

/// One training pair for the flow-matching regression.
#[derive(Debug, Clone)]
pub struct TrainSample<'a> {
    pub a_t: Vec<f64>,
    pub t: f64,
    pub cond: Condition<'a>,
    pub site: Site,
    pub target: Vec<f64>,
}

impl ModelParams {
    /// Scaled-Gaussian initialization. The output projection and the
    /// condition projection start at zero, so a fresh model has `v == 0`
    /// everywhere and a condition only influences the field once training
    /// has moved `W_c`.
    pub fn init(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut values = vec![0.0; layout.total];
        let h = config.hidden_dim;
        let mut fill = |r: &Range<usize>, std: f64, values: &mut Vec<f64>| {
            for v in &mut values[r.clone()] {
                *v = std * rng.gaussian();
            }
        };
        if config.learned_null {
            fill(&layout.null, 1.0, &mut values);
        }
        fill(&layout.time_w, (1.0 / config.time_embed_dim as f64).sqrt(), &mut values);
        fill(&layout.layer_emb, 0.1, &mut values);
        fill(&layout.pos_emb, 0.1, &mut values);
        fill(&layout.in_w, (1.0 / config.activation_dim as f64).sqrt(), &mut values);
        let inv_h = (1.0 / h as f64).sqrt();
        for b in &layout.blocks {
            fill(&b.mod_w, inv_h, &mut values);
            fill(&b.fc1_w, inv_h, &mut values);
            fill(&b.fc2_w, inv_h, &mut values);
        }
        Ok(Self {
            config,
            layout,
            values,
        })
    }

    pub fn from_values(config: ModelConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if values.len() != layout.total {
            return Err(Error::shape("parameter vector", layout.total, values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite parameter", i));
        }
        Ok(Self {
            config,
            layout,
            values,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check_inputs(&self, a: &[f64], t: f64, cond: Condition<'_>, site: Site) -> Result<()> {
        check_dim("activation", self.config.activation_dim, a)?;
        if let Condition::Embedding(e) = cond {
            check_dim("condition embedding", self.config.condition_dim, e)?;
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Argument(format!("time {t} outside [0, 1]")));
        }
        if site.layer as usize >= self.config.max_layers {
            return Err(Error::Argument(format!(
                "layer {} out of range (max_layers = {})",
                site.layer, self.config.max_layers
            )));
        }
        Ok(())
    }

    fn forward(&self, a: &[f64], t: f64, cond: Condition<'_>, site: Site) -> Forward {
        let cfg = &self.config;
        let l = &self.layout;
        let p = &self.values;
        let h = cfg.hidden_dim;

        let mut s = match cond {
            Condition::Null if cfg.learned_null => p[l.null.clone()].to_vec(),
            // Whatever sits in the slot is ignored, so it can never drift.
            Condition::Null => vec![0.0; h],
            Condition::Embedding(e) => affine(&p[l.cond_w.clone()], &p[l.cond_b.clone()], e),
        };
        let phi = time_features(t, cfg.time_embed_dim);
        let te = affine(&p[l.time_w.clone()], &p[l.time_b.clone()], &phi);
        let layer_row = &p[l.layer_emb.start + site.layer as usize * h..][..h];
        let bucket = cfg.position_bucket(site.position);
        let pos_row = &p[l.pos_emb.start + bucket * h..][..h];
        for k in 0..h {
            s[k] += te[k] + layer_row[k] + pos_row[k];
        }
        let c: Vec<f64> = s.iter().map(|&x| silu(x)).collect();

        let mut hidden = affine(&p[l.in_w.clone()], &p[l.in_b.clone()], a);
        let mut blocks = Vec::with_capacity(l.blocks.len());
        for b in &l.blocks {
            let modulation = affine(&p[b.mod_w.clone()], &p[b.mod_b.clone()], &c);
            let (gamma, rest) = modulation.split_at(h);
            let (beta, alpha) = rest.split_at(h);
            let (normed, rstd) = layer_norm(&hidden);
            let x: Vec<f64> = (0..h).map(|k| normed[k] * (1.0 + gamma[k]) + beta[k]).collect();
            let z = affine(&p[b.fc1_w.clone()], &p[b.fc1_b.clone()], &x);
            let r: Vec<f64> = z.iter().map(|&v| silu(v)).collect();
            let y = affine(&p[b.fc2_w.clone()], &p[b.fc2_b.clone()], &r);
            let mut next = hidden.clone();
            for k in 0..h {
                next[k] += alpha[k] * y[k];
            }
            blocks.push(BlockCache {
                modulation,
                normed,
                rstd,
                x,
                z,
                r,
                y,
            });
            hidden = next;
        }
        let v = affine(&p[l.out_w.clone()], &p[l.out_b.clone()], &hidden);
        Forward {
            s,
            c,
            phi,
            bucket,
            blocks,
            last_hidden: hidden,
            v,
        }
    }

    /// Accumulates `d loss / d params` into `grad` given `dv = d loss / d v`.
    fn backward(&self, fwd: &Forward, a: &[f64], cond: Condition<'_>, site: Site, dv: &[f64], grad: &mut [f64]) {
        let cfg = &self.config;
        let l = &self.layout;
        let p = &self.values;
        let h = cfg.hidden_dim;
        let d = cfg.activation_dim;

        outer_acc(&mut grad[l.out_w.clone()], dv, &fwd.last_hidden);
        add_to(&mut grad[l.out_b.clone()], dv);
        let mut dh = matvec_t(&p[l.out_w.clone()], dv, d, h);

        let mut dc = vec![0.0; h];
        for (b, cache) in l.blocks.iter().zip(&fwd.blocks).rev() {
            let (gamma, rest) = cache.modulation.split_at(h);
            let alpha = &rest[h..];
            // h_out = h_in + alpha * y
            let dalpha: Vec<f64> = (0..h).map(|k| dh[k] * cache.y[k]).collect();
            let dy: Vec<f64> = (0..h).map(|k| dh[k] * alpha[k]).collect();
            outer_acc(&mut grad[b.fc2_w.clone()], &dy, &cache.r);
            add_to(&mut grad[b.fc2_b.clone()], &dy);
            let dr = matvec_t(&p[b.fc2_w.clone()], &dy, h, h);
            let dz: Vec<f64> = (0..h).map(|k| dr[k] * silu_grad(cache.z[k])).collect();
            outer_acc(&mut grad[b.fc1_w.clone()], &dz, &cache.x);
            add_to(&mut grad[b.fc1_b.clone()], &dz);
            let dx = matvec_t(&p[b.fc1_w.clone()], &dz, h, h);

            let mut dmod = vec![0.0; 3 * h];
            let mut dn = vec![0.0; h];
            for k in 0..h {
                dmod[k] = dx[k] * cache.normed[k];
                dmod[h + k] = dx[k];
                dmod[2 * h + k] = dalpha[k];
                dn[k] = dx[k] * (1.0 + gamma[k]);
            }
            // Layer-norm backward: rstd * (dn - mean(dn) - n * mean(dn * n)).
            let hf = h as f64;
            let mean_dn = dn.iter().sum::<f64>() / hf;
            let mean_dn_n = dn.iter().zip(&cache.normed).map(|(a, b)| a * b).sum::<f64>() / hf;
            for k in 0..h {
                dh[k] += cache.rstd * (dn[k] - mean_dn - cache.normed[k] * mean_dn_n);
            }
            outer_acc(&mut grad[b.mod_w.clone()], &dmod, &fwd.c);
            add_to(&mut grad[b.mod_b.clone()], &dmod);
            let dc_block = matvec_t(&p[b.mod_w.clone()], &dmod, 3 * h, h);
            add_to(&mut dc, &dc_block);
        }
        outer_acc(&mut grad[l.in_w.clone()], &dh, a);
        add_to(&mut grad[l.in_b.clone()], &dh);

        let ds: Vec<f64> = (0..h).map(|k| dc[k] * silu_grad(fwd.s[k])).collect();
        match cond {
            Condition::Null => {
                if cfg.learned_null {
                    add_to(&mut grad[l.null.clone()], &ds);
                }
            }
            Condition::Embedding(e) => {
                outer_acc(&mut grad[l.cond_w.clone()], &ds, e);
                add_to(&mut grad[l.cond_b.clone()], &ds);
            }
        }
        outer_acc(&mut grad[l.time_w.clone()], &ds, &fwd.phi);
        add_to(&mut grad[l.time_b.clone()], &ds);
        let lo = l.layer_emb.start + site.layer as usize * h;
        add_to(&mut grad[lo..lo + h], &ds);
        let po = l.pos_emb.start + fwd.bucket * h;
        add_to(&mut grad[po..po + h], &ds);
    }

    /// Mean over the batch of `||v(a_t, t, c, layer, position) - target||^2`
    /// and its exact gradient.
    pub fn loss_and_grad(&self, batch: &[TrainSample<'_>]) -> Result<(f64, Gradient)> {
        if batch.is_empty() {
            return Err(Error::Argument("loss_and_grad needs a nonempty batch".into()));
        }
        let n = batch.len() as f64;
        let mut grad = vec![0.0; self.values.len()];
        let mut total = 0.0;
        for (i, sample) in batch.iter().enumerate() {
            self.check_inputs(&sample.a_t, sample.t, sample.cond, sample.site)?;
            check_dim("target velocity", self.config.activation_dim, &sample.target)?;
            let fwd = self.forward(&sample.a_t, sample.t, sample.cond, sample.site);
            let resid: Vec<f64> = fwd.v.iter().zip(&sample.target).map(|(v, u)| v - u).collect();
            let sq: f64 = resid.iter().map(|r| r * r).sum();
            if !sq.is_finite() {
                return Err(Error::numeric("non-finite loss", i));
            }
            total += sq;
            let dv: Vec<f64> = resid.iter().map(|r| 2.0 * r / n).collect();
            self.backward(&fwd, &sample.a_t, sample.cond, sample.site, &dv, &mut grad);
        }
        Ok((total / n, grad))
    }

    /// Loss only; used by the finite-difference oracle in tests.
    pub fn loss(&self, batch: &[TrainSample<'_>]) -> Result<f64> {
        let mut total = 0.0;
        for s in batch {
            self.check_inputs(&s.a_t, s.t, s.cond, s.site)?;
            let v = self.forward(&s.a_t, s.t, s.cond, s.site).v;
            total += v.iter().zip(&s.target).map(|(v, u)| (v - u) * (v - u)).sum::<f64>();
        }
        Ok(total / batch.len() as f64)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::with_capacity(64 + 8 * self.values.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for v in [
            c.activation_dim,
            c.condition_dim,
            c.hidden_dim,
            c.num_blocks,
            c.time_embed_dim,
            c.max_layers,
            c.position_buckets,
            c.position_bucket_width,
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.push(u8::from(c.learned_null));
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(5, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: "bad magic, expected \"UAFM1\"".into(),
            });
        }
        let mut dims = [0usize; 8];
        for d in &mut dims {
            *d = r.u32("model config")? as usize;
        }
        let at = r.pos;
        let learned_null = match r.u8("learned_null flag")? {
            0 => false,
            1 => true,
            other => {
                return Err(Error::Format {
                    offset: at as u64,
                    message: format!("learned_null flag must be 0 or 1, got {other}"),
                })
            }
        };
        let config = ModelConfig {
            activation_dim: dims[0],
            condition_dim: dims[1],
            hidden_dim: dims[2],
            num_blocks: dims[3],
            time_embed_dim: dims[4],
            max_layers: dims[5],
            position_buckets: dims[6],
            position_bucket_width: dims[7],
            learned_null,
        };
        config.validate().map_err(|e| Error::Format {
            offset: 5,
            message: e.to_string(),
        })?;
        let at = r.pos;
        let count = r.u64("parameter count")? as usize;
        let expected = Layout::new(&config).total;
        if count != expected {
            return Err(Error::Format {
                offset: at as u64,
                message: format!("parameter count {count} does not match config ({expected})"),
            });
        }
        let values = r.f64s(count, "parameters")?;
        if r.remaining() != 0 {
            return Err(Error::Format {
                offset: r.pos as u64,
                message: "trailing bytes after parameters".into(),
            });
        }
        Self::from_values(config, values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

impl VelocityField for ModelParams {
    fn activation_dim(&self) -> usize {
        self.config.activation_dim
    }

    fn velocity(&self, a: &[f64], t: f64, cond: Condition<'_>, site: Site) -> Result<Vec<f64>> {
        self.check_inputs(a, t, cond, site)?;
        Ok(self.forward(a, t, cond, site).v)
    }
}

struct BlockCache {
    modulation: Vec<f64>,
    normed: Vec<f64>,
    rstd: f64,
    x: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    y: Vec<f64>,
}

struct Forward {
    s: Vec<f64>,
    c: Vec<f64>,
    phi: Vec<f64>,
    bucket: usize,
    blocks: Vec<BlockCache>,
    last_hidden: Vec<f64>,
    v: Vec<f64>,
}

/// Sinusoidal features `[sin(w_0 t) .. sin(w_{n-1} t), cos(w_0 t) .. ]`.
pub fn time_features(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for j in 0..half {
        let frac = if half > 1 { j as f64 / (half - 1) as f64 } else { 0.0 };
        let w = MAX_TIME_FREQUENCY.powf(frac);
        out[j] = (w * t).sin();
        out[half + j] = (w * t).cos();
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

fn layer_norm(h: &[f64]) -> (Vec<f64>, f64) {
    let n = h.len() as f64;
    let mean = h.iter().sum::<f64>() / n;
    let var = h.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    (h.iter().map(|x| (x - mean) * rstd).collect(), rstd)
}

/// `W x + b` with `W` row-major of shape `b.len() x x.len()`.
fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    debug_assert_eq!(w.len(), b.len() * cols);
    w.chunks_exact(cols)
        .zip(b)
        .map(|(row, bi)| bi + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>())
        .collect()
}

/// `W^T dy` for `W` of shape `rows x cols`.
fn matvec_t(w: &[f64], dy: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    debug_assert_eq!(w.len(), rows * cols);
    let mut dx = vec![0.0; cols];
    for (row, g) in w.chunks_exact(cols).zip(dy) {
        if *g == 0.0 {
            continue;
        }
        for (d, w) in dx.iter_mut().zip(row) {
            *d += g * w;
        }
    }
    dx
}

/// `G += dy x^T`
fn outer_acc(g: &mut [f64], dy: &[f64], x: &[f64]) {
    let cols = x.len();
    debug_assert_eq!(g.len(), dy.len() * cols);
    for (row, gy) in g.chunks_exact_mut(cols).zip(dy) {
        if *gy == 0.0 {
            continue;
        }
        for (gi, xi) in row.iter_mut().zip(x) {
            *gi += gy * xi;
        }
    }
}

fn add_to(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
