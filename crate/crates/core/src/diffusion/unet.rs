use rand::Rng;

use crate::conditioning::{conv, insert_conv, inject_level, ControlSignal};
use crate::numerics::{NodeId, ParamStore, Scalar, Tape, Tensor};

use super::DiffusionError;

const GROUPS: usize = 8;

/// Group count for `channels`: at most 8, and at least two channels per
/// group so a per-channel shift (the timestep embedding) survives the norm.
fn groups(channels: usize) -> usize {
    GROUPS.min(channels / 2).max(1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct UNetConfig {
    pub side: usize,
    pub channels: usize,
    pub base: usize,
    pub mults: Vec<usize>,
    pub res_blocks: usize,
    /// Width of the sinusoidal timestep features and of the time embedding.
    pub time_dim: usize,
    pub caption_dim: usize,
    pub num_captions: usize,
}

impl UNetConfig {
    pub fn levels(&self) -> usize {
        self.mults.len()
    }

    pub fn level_channels(&self, level: usize) -> usize {
        self.base * self.mults[level]
    }

    pub fn validate(&self) -> Result<(), DiffusionError> {
        let bad = |msg: String| Err(DiffusionError::Config(msg));
        if self.mults.is_empty() || self.res_blocks == 0 || self.channels == 0 {
            return bad("UNet needs at least one level, one residual block and one channel".into());
        }
        let div = 1 << (self.levels() - 1);
        if self.side == 0 || !self.side.is_multiple_of(div) {
            return bad(format!("side {} is not divisible by {div}", self.side));
        }
        if (0..self.levels()).any(|l| !self.level_channels(l).is_multiple_of(GROUPS)) {
            return bad(format!("level widths must be multiples of {GROUPS}"));
        }
        if self.time_dim < 2 || !self.time_dim.is_multiple_of(2) || self.caption_dim == 0 || self.num_captions == 0 {
            return bad("time width must be even; caption width and count positive".into());
        }
        Ok(())
    }
}

fn insert_norm<S: Scalar>(params: &mut ParamStore<S>, prefix: &str, ch: usize) {
    params.insert(format!("{prefix}.gamma"), Tensor::full(vec![ch], S::one()));
    params.insert(format!("{prefix}.beta"), Tensor::zeros(vec![ch]));
}

fn insert_linear<S: Scalar>(params: &mut ParamStore<S>, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    params.insert(format!("{prefix}.weight"), Tensor::uniform(vec![fan_out, fan_in], bound, rng));
    params.insert(format!("{prefix}.bias"), Tensor::zeros(vec![fan_out]));
}

fn insert_res<S: Scalar>(
    params: &mut ParamStore<S>,
    cfg: &UNetConfig,
    prefix: &str,
    cin: usize,
    cout: usize,
    rng: &mut impl Rng,
) {
    insert_norm(params, &format!("{prefix}.norm1"), cin);
    insert_conv(params, &format!("{prefix}.conv1"), cin, cout, 3, rng);
    insert_linear(params, &format!("{prefix}.time"), cfg.time_dim, cout, rng);
    insert_norm(params, &format!("{prefix}.norm2"), cout);
    insert_conv(params, &format!("{prefix}.conv2"), cout, cout, 3, rng);
    if cin != cout {
        insert_conv(params, &format!("{prefix}.skip"), cin, cout, 1, rng);
    }
}

/// Registers every denoiser tensor (`unet.*` and the caption table `embed.caption`).
pub fn init_unet<S: Scalar>(cfg: &UNetConfig, params: &mut ParamStore<S>, rng: &mut impl Rng) -> Result<(), DiffusionError> {
    cfg.validate()?;
    let td = cfg.time_dim;
    insert_linear(params, "unet.time.fc1", td, td, rng);
    insert_linear(params, "unet.time.fc2", td, td, rng);
    params.insert("embed.caption", Tensor::randn(vec![cfg.num_captions, cfg.caption_dim], rng));
    insert_linear(params, "unet.caption.proj", cfg.caption_dim, td, rng);
    insert_conv(params, "unet.conv_in", 2 * cfg.channels, cfg.level_channels(0), 3, rng);

    let mut cur = cfg.level_channels(0);
    for l in 0..cfg.levels() {
        let ch = cfg.level_channels(l);
        for r in 0..cfg.res_blocks {
            insert_res(params, cfg, &format!("unet.down.{l}.res.{r}"), cur, ch, rng);
            cur = ch;
        }
        if l + 1 < cfg.levels() {
            insert_conv(params, &format!("unet.down.{l}.downsample"), ch, ch, 3, rng);
        }
    }
    insert_res(params, cfg, "unet.mid.res", cur, cur, rng);
    for l in (0..cfg.levels()).rev() {
        let ch = cfg.level_channels(l);
        let mut cin = cur + ch;
        for r in 0..cfg.res_blocks {
            insert_res(params, cfg, &format!("unet.up.{l}.res.{r}"), cin, ch, rng);
            cin = ch;
        }
        cur = ch;
        if l > 0 {
            insert_conv(params, &format!("unet.up.{l}.upsample"), ch, ch, 3, rng);
        }
    }
    insert_norm(params, "unet.out.norm", cur);
    insert_conv(params, "unet.out.conv", cur, cfg.channels, 3, rng);
    Ok(())
}

/// Sinusoidal features `[sin(t·f_i)…, cos(t·f_i)…]` with
/// `f_i = 10000^(−i / (width/2))`.
pub fn timestep_features<S: Scalar>(timesteps: &[usize], width: usize) -> Tensor<S> {
    let half = width / 2;
    let mut data = Vec::with_capacity(timesteps.len() * width);
    for &t in timesteps {
        let freqs = (0..half).map(|i| (-(10000f64.ln()) * i as f64 / half as f64).exp());
        let (sin, cos): (Vec<f64>, Vec<f64>) = freqs.map(|f| ((t as f64 * f).sin(), (t as f64 * f).cos())).unzip();
        data.extend(sin.into_iter().chain(cos).map(S::of));
    }
    Tensor::new(vec![timesteps.len(), width], data).expect("non-empty batch")
}

fn norm<S: Scalar>(tape: &mut Tape<S>, params: &ParamStore<S>, prefix: &str, x: NodeId) -> Result<NodeId, DiffusionError> {
    let g = params.leaf(tape, &format!("{prefix}.gamma"))?;
    let b = params.leaf(tape, &format!("{prefix}.beta"))?;
    let channels = tape.shape(x)[1];
    Ok(tape.group_norm(x, g, b, groups(channels))?)
}

fn linear<S: Scalar>(tape: &mut Tape<S>, params: &ParamStore<S>, prefix: &str, x: NodeId) -> Result<NodeId, DiffusionError> {
    let w = params.leaf(tape, &format!("{prefix}.weight"))?;
    let b = params.leaf(tape, &format!("{prefix}.bias"))?;
    Ok(tape.linear(x, w, b)?)
}

fn res_block<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ParamStore<S>,
    prefix: &str,
    x: NodeId,
    temb: NodeId,
) -> Result<NodeId, DiffusionError> {
    let mut h = norm(tape, params, &format!("{prefix}.norm1"), x)?;
    h = tape.silu(h)?;
    h = conv(tape, params, &format!("{prefix}.conv1"), h, 1)?;
    let tproj = linear(tape, params, &format!("{prefix}.time"), temb)?;
    h = tape.add_broadcast(h, tproj)?;
    h = norm(tape, params, &format!("{prefix}.norm2"), h)?;
    h = tape.silu(h)?;
    h = conv(tape, params, &format!("{prefix}.conv2"), h, 1)?;
    let skip_name = format!("{prefix}.skip");
    let skip = if params.contains(&format!("{skip_name}.weight")) {
        conv(tape, params, &skip_name, x, 1)?
    } else {
        x
    };
    Ok(tape.add(h, skip)?)
}

/// Conditional noise prediction for a batch.
///
/// `x_t` and `x_clean` are `[n, channels, side, side]`; `timesteps` and
/// `captions` have one entry per batch element. The clean image enters as
/// extra input channels, the caption embedding is added to the time
/// embedding, and `cond` (when present) is injected at every encoder level.
#[allow(clippy::too_many_arguments)]
pub fn predict_noise<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ParamStore<S>,
    cfg: &UNetConfig,
    x_t: NodeId,
    timesteps: &[usize],
    captions: &[usize],
    x_clean: NodeId,
    cond: Option<&ControlSignal>,
) -> Result<NodeId, DiffusionError> {
    let xs = tape.shape(x_t).to_vec();
    let n = xs[0];
    let expected = vec![n, cfg.channels, cfg.side, cfg.side];
    for (what, got) in [("noisy input", xs.clone()), ("clean conditioning image", tape.shape(x_clean).to_vec())] {
        if got != expected {
            return Err(DiffusionError::Shape { what, expected, got });
        }
    }
    if timesteps.len() != n || captions.len() != n {
        return Err(DiffusionError::Config(format!(
            "batch of {n} with {} timesteps and {} captions",
            timesteps.len(),
            captions.len()
        )));
    }
    if let Some(&c) = captions.iter().find(|&&c| c >= cfg.num_captions) {
        return Err(DiffusionError::Config(format!("caption id {c} out of range")));
    }

    let feats = tape.constant(timestep_features(timesteps, cfg.time_dim));
    let mut temb = linear(tape, params, "unet.time.fc1", feats)?;
    temb = tape.silu(temb)?;
    temb = linear(tape, params, "unet.time.fc2", temb)?;
    let mut onehot = Tensor::<S>::zeros(vec![n, cfg.num_captions]);
    for (i, &c) in captions.iter().enumerate() {
        onehot.data_mut()[i * cfg.num_captions + c] = S::one();
    }
    let onehot = tape.constant(onehot);
    let table = params.leaf(tape, "embed.caption")?;
    let cap = tape.matmul(onehot, table)?;
    let cap = linear(tape, params, "unet.caption.proj", cap)?;
    temb = tape.add(temb, cap)?;
    let temb = tape.silu(temb)?;

    let input = tape.concat(&[x_t, x_clean])?;
    let mut h = conv(tape, params, "unet.conv_in", input, 1)?;
    let mut skips = Vec::with_capacity(cfg.levels());
    for l in 0..cfg.levels() {
        for r in 0..cfg.res_blocks {
            h = res_block(tape, params, &format!("unet.down.{l}.res.{r}"), h, temb)?;
        }
        if let Some(signal) = cond {
            h = inject_level(tape, params, h, l, signal)?;
        }
        skips.push(h);
        if l + 1 < cfg.levels() {
            h = conv(tape, params, &format!("unet.down.{l}.downsample"), h, 2)?;
        }
    }
    h = res_block(tape, params, "unet.mid.res", h, temb)?;
    for l in (0..cfg.levels()).rev() {
        h = tape.concat(&[h, skips[l]])?;
        for r in 0..cfg.res_blocks {
            h = res_block(tape, params, &format!("unet.up.{l}.res.{r}"), h, temb)?;
        }
        if l > 0 {
            h = tape.upsample2x(h)?;
            h = conv(tape, params, &format!("unet.up.{l}.upsample"), h, 1)?;
        }
    }
    h = norm(tape, params, "unet.out.norm", h)?;
    h = tape.silu(h)?;
    Ok(conv(tape, params, "unet.out.conv", h, 1)?)
}
