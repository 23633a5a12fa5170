use rand::Rng;

use crate::numerics::{NodeId, ParamStore, Scalar, Tape, Tensor};
use crate::raster::Image;

use super::assessment::{Assessment, VOCABULARY};
use super::contour::{ContourExtractor, Sobel};
use super::hsv::rgb_to_hsv_map;
use super::ConditioningError;

/// Shape of the conditioning encoders.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterConfig {
    pub side: usize,
    /// Encoder width at multiplier 1.
    pub base: usize,
    /// One multiplier per UNet level.
    pub mults: Vec<usize>,
    /// Width of the attribute embedding table.
    pub text_dim: usize,
    /// UNet encoder channels per level; the projections map onto these.
    pub target_channels: Vec<usize>,
}

impl AdapterConfig {
    pub fn levels(&self) -> usize {
        self.mults.len()
    }

    pub fn level_channels(&self, level: usize) -> usize {
        self.base * self.mults[level]
    }

    pub fn level_side(&self, level: usize) -> usize {
        self.side >> level
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Color,
    Structure,
}

impl Branch {
    fn key(self) -> &'static str {
        match self {
            Branch::Color => "col",
            Branch::Structure => "str",
        }
    }

    fn in_channels(self) -> usize {
        match self {
            Branch::Color => 3,
            Branch::Structure => 1,
        }
    }
}

const BRANCHES: [Branch; 2] = [Branch::Color, Branch::Structure];

/// Registers every adapter tensor plus the attribute embedding table. The
/// injection projections start at exactly zero.
pub fn init_adapter<S: Scalar>(cfg: &AdapterConfig, params: &mut ParamStore<S>, rng: &mut impl Rng) {
    for branch in BRANCHES {
        let k = branch.key();
        let c0 = cfg.level_channels(0);
        insert_conv(params, &format!("adapter.{k}.stem"), branch.in_channels(), c0, 3, rng);
        for level in 0..cfg.levels() {
            let cin = if level == 0 { c0 } else { cfg.level_channels(level - 1) };
            insert_conv(params, &format!("adapter.{k}.{level}"), cin, cfg.level_channels(level), 3, rng);
            let fan = cfg.level_channels(level) + cfg.text_dim;
            let out = cfg.target_channels[level];
            params.insert(format!("adapter.proj.{k}.{level}.weight"), Tensor::zeros(vec![out, fan, 1, 1]));
            params.insert(format!("adapter.proj.{k}.{level}.bias"), Tensor::zeros(vec![out]));
        }
    }
    params.insert("embed.attr", Tensor::randn(vec![VOCABULARY.len(), cfg.text_dim], rng));
}

pub(crate) fn insert_conv<S: Scalar>(
    params: &mut ParamStore<S>,
    prefix: &str,
    cin: usize,
    cout: usize,
    k: usize,
    rng: &mut impl Rng,
) {
    let bound = 1.0 / ((cin * k * k) as f64).sqrt();
    params.insert(format!("{prefix}.weight"), Tensor::uniform(vec![cout, cin, k, k], bound, rng));
    params.insert(format!("{prefix}.bias"), Tensor::zeros(vec![cout]));
}

/// One feature map per UNet level, finest first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VisualFeatures(pub Vec<NodeId>);

/// A visual feature pyramid with its attribute vector (`[n, text_dim]`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CondPair {
    pub visual: VisualFeatures,
    pub text: NodeId,
}

/// `cond_h` carries colour (HSV map + colour tokens), `cond_c` carries
/// structure (contour map + structure tokens).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ControlSignal {
    pub cond_h: CondPair,
    pub cond_c: CondPair,
}

/// Which modalities reach the denoiser.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MapMode {
    #[default]
    Full,
    /// Visual feature maps replaced by zeros (text-only conditioning).
    NoVisual,
    /// Attribute vectors replaced by zeros (visual-only conditioning).
    NoText,
}

impl MapMode {
    pub fn name(self) -> &'static str {
        match self {
            MapMode::Full => "full",
            MapMode::NoVisual => "wo_v",
            MapMode::NoText => "wo_t",
        }
    }

    pub fn parse(s: &str) -> Option<MapMode> {
        [MapMode::Full, MapMode::NoVisual, MapMode::NoText]
            .into_iter()
            .find(|m| m.name() == s)
    }

    /// Replace the disabled modality with constant zeros of the same shape.
    pub fn apply<S: Scalar>(self, tape: &mut Tape<S>, signal: ControlSignal) -> ControlSignal {
        let zero = |tape: &mut Tape<S>, id: NodeId| {
            let shape = tape.shape(id).to_vec();
            tape.constant(Tensor::zeros(shape))
        };
        let mut mask = |pair: CondPair| match self {
            MapMode::Full => pair,
            MapMode::NoVisual => CondPair {
                visual: VisualFeatures(pair.visual.0.iter().map(|&id| zero(tape, id)).collect()),
                text: pair.text,
            },
            MapMode::NoText => CondPair {
                text: zero(tape, pair.text),
                visual: pair.visual,
            },
        };
        ControlSignal {
            cond_h: mask(signal.cond_h),
            cond_c: mask(signal.cond_c),
        }
    }
}

fn encode_branch<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ParamStore<S>,
    cfg: &AdapterConfig,
    branch: Branch,
    map: NodeId,
) -> Result<VisualFeatures, ConditioningError> {
    let shape = tape.shape(map).to_vec();
    let expected = [shape.first().copied().unwrap_or(0), branch.in_channels(), cfg.side, cfg.side];
    if shape != expected {
        return Err(ConditioningError::Size {
            what: "control map",
            expected: expected.to_vec(),
            got: shape,
        });
    }
    let k = branch.key();
    let mut h = conv(tape, params, &format!("adapter.{k}.stem"), map, 1)?;
    h = tape.silu(h)?;
    let mut out = Vec::with_capacity(cfg.levels());
    for level in 0..cfg.levels() {
        let stride = if level == 0 { 1 } else { 2 };
        h = conv(tape, params, &format!("adapter.{k}.{level}"), h, stride)?;
        h = tape.silu(h)?;
        out.push(h);
    }
    Ok(VisualFeatures(out))
}

pub(crate) fn conv<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ParamStore<S>,
    prefix: &str,
    x: NodeId,
    stride: usize,
) -> Result<NodeId, crate::numerics::NumericsError> {
    let w = params.leaf(tape, &format!("{prefix}.weight"))?;
    let b = params.leaf(tape, &format!("{prefix}.bias"))?;
    tape.conv2d(x, w, Some(b), stride)
}

/// Runs the colour encoder on `hsv: [n, 3, side, side]` and the structure
/// encoder on `contour: [n, 1, side, side]`.
pub fn encode_visual<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ParamStore<S>,
    cfg: &AdapterConfig,
    hsv: NodeId,
    contour: NodeId,
) -> Result<(VisualFeatures, VisualFeatures), ConditioningError> {
    let col = encode_branch(tape, params, cfg, Branch::Color, hsv)?;
    let st = encode_branch(tape, params, cfg, Branch::Structure, contour)?;
    Ok((col, st))
}

/// Mean attribute embeddings for a batch of token bags (see
/// [`Assessment::bag_weights`]); returns `[n, text_dim]`.
pub fn encode_text<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ParamStore<S>,
    bags: &[[f64; VOCABULARY.len()]],
) -> Result<NodeId, ConditioningError> {
    if bags.is_empty() {
        return Err(crate::numerics::NumericsError::Empty("encode_text").into());
    }
    let data = bags.iter().flatten().map(|&w| S::of(w)).collect();
    let weights = tape.constant(Tensor::new(vec![bags.len(), VOCABULARY.len()], data)?);
    let table = params.leaf(tape, "embed.attr")?;
    Ok(tape.matmul(weights, table)?)
}

pub fn assemble_control(
    color_visual: Option<VisualFeatures>,
    color_text: Option<NodeId>,
    structure_visual: Option<VisualFeatures>,
    structure_text: Option<NodeId>,
) -> Result<ControlSignal, ConditioningError> {
    let missing = ConditioningError::MissingComponent;
    Ok(ControlSignal {
        cond_h: CondPair {
            visual: color_visual.ok_or(missing("colour visual features"))?,
            text: color_text.ok_or(missing("colour text features"))?,
        },
        cond_c: CondPair {
            visual: structure_visual.ok_or(missing("structure visual features"))?,
            text: structure_text.ok_or(missing("structure text features"))?,
        },
    })
}

/// Control maps for a batch of input images, stacked as
/// `([n, 3, h, w] HSV, [n, 1, h, w] contour)`.
pub fn control_maps<S: Scalar>(images: &[&Image]) -> Result<(Tensor<S>, Tensor<S>), ConditioningError> {
    let mut hsv = Vec::with_capacity(images.len());
    let mut contour = Vec::with_capacity(images.len());
    for img in images {
        hsv.push(rgb_to_hsv_map(img)?.image().to_tensor());
        contour.push(Sobel.extract(img)?.image().to_tensor());
    }
    Ok((Tensor::stack(&hsv)?, Tensor::stack(&contour)?))
}

/// Full conditioning path for a batch: control maps, both encoders, the
/// attribute vectors and the modality mask.
pub fn build_control<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ParamStore<S>,
    cfg: &AdapterConfig,
    maps: &(Tensor<S>, Tensor<S>),
    assessments: &[&Assessment],
    mode: MapMode,
) -> Result<ControlSignal, ConditioningError> {
    let hsv = tape.constant(maps.0.clone());
    let contour = tape.constant(maps.1.clone());
    let (col, st) = encode_visual(tape, params, cfg, hsv, contour)?;
    let color_bags: Vec<_> = assessments.iter().map(|a| Assessment::bag_weights(a.color())).collect();
    let structure_bags: Vec<_> = assessments.iter().map(|a| Assessment::bag_weights(a.structure())).collect();
    let t_col = encode_text(tape, params, &color_bags)?;
    let t_str = encode_text(tape, params, &structure_bags)?;
    let signal = assemble_control(Some(col), Some(t_col), Some(st), Some(t_str))?;
    Ok(mode.apply(tape, signal))
}

fn inject_pair<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ParamStore<S>,
    h: NodeId,
    level: usize,
    branch: Branch,
    pair: &CondPair,
) -> Result<NodeId, ConditioningError> {
    let hs = tape.shape(h).to_vec();
    let feat = *pair
        .visual
        .0
        .get(level)
        .ok_or(ConditioningError::MissingComponent("a feature map for this level"))?;
    let fs = tape.shape(feat).to_vec();
    if fs.len() != 4 || fs[0] != hs[0] || fs[2..] != hs[2..] {
        return Err(ConditioningError::Size {
            what: "feature map vs activation",
            expected: hs,
            got: fs,
        });
    }
    let prefix = format!("adapter.proj.{}.{level}", branch.key());
    let weight_name = format!("{prefix}.weight");
    if !params.contains(&weight_name) {
        return Err(ConditioningError::Uninitialized(weight_name));
    }
    let text = tape.broadcast_spatial(pair.text, hs[2], hs[3])?;
    let fused = tape.concat(&[feat, text])?;
    let delta = conv(tape, params, &prefix, fused, 1)?;
    Ok(tape.add(h, delta)?)
}

/// Adds both projected control pairs to the UNet activation of one level.
pub fn inject_level<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ParamStore<S>,
    h: NodeId,
    level: usize,
    signal: &ControlSignal,
) -> Result<NodeId, ConditioningError> {
    let h = inject_pair(tape, params, h, level, Branch::Color, &signal.cond_h)?;
    inject_pair(tape, params, h, level, Branch::Structure, &signal.cond_c)
}

/// [`inject_level`] over every level of an activation pyramid.
pub fn inject<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ParamStore<S>,
    activations: &[NodeId],
    signal: &ControlSignal,
) -> Result<Vec<NodeId>, ConditioningError> {
    activations
        .iter()
        .enumerate()
        .map(|(level, &h)| inject_level(tape, params, h, level, signal))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> AdapterConfig {
        AdapterConfig {
            side: 8,
            base: 4,
            mults: vec![1, 2],
            text_dim: 5,
            target_channels: vec![8, 16],
        }
    }

    fn setup() -> (ParamStore<f64>, Tape<f64>, ControlSignal, Vec<NodeId>) {
        let cfg = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = ParamStore::new();
        init_adapter(&cfg, &mut params, &mut rng);
        let mut tape = Tape::new();
        let maps = (
            Tensor::uniform(vec![2, 3, 8, 8], 1.0, &mut rng),
            Tensor::uniform(vec![2, 1, 8, 8], 1.0, &mut rng),
        );
        let a = Assessment::from_texts(&["warm tone"], &["close-up", "framing"]).unwrap();
        let b = Assessment::from_texts(&["oversaturated", "bright light"], &[]).unwrap();
        let signal = build_control(&mut tape, &params, &cfg, &maps, &[&a, &b], MapMode::Full).unwrap();
        let acts = vec![
            tape.constant(Tensor::randn(vec![2, 8, 8, 8], &mut rng)),
            tape.constant(Tensor::randn(vec![2, 16, 4, 4], &mut rng)),
        ];
        (params, tape, signal, acts)
    }

    #[test]
    fn feature_pyramid_matches_levels() {
        let (_, tape, signal, _) = setup();
        for (pair, ch) in [(&signal.cond_h, 4), (&signal.cond_c, 4)] {
            assert_eq!(pair.visual.0.len(), 2);
            assert_eq!(tape.shape(pair.visual.0[0]), [2, ch, 8, 8]);
            assert_eq!(tape.shape(pair.visual.0[1]), [2, ch * 2, 4, 4]);
            assert_eq!(tape.shape(pair.text), [2, 5]);
        }
    }

    #[test]
    fn zero_initialized_injection_is_identity() {
        let (params, mut tape, signal, acts) = setup();
        let out = inject(&mut tape, &params, &acts, &signal).unwrap();
        for (a, o) in acts.iter().zip(&out) {
            assert_eq!(tape.value(*a), tape.value(*o));
        }
    }

    #[test]
    fn injection_is_additive() {
        let (mut params, _, _, _) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let names: Vec<String> = params.names().filter(|n| n.starts_with("adapter.proj")).cloned().collect();
        for n in &names {
            let shape = params.get(n).unwrap().shape().to_vec();
            params.insert(n.clone(), Tensor::randn(shape, &mut rng));
        }
        let mut half = params.clone();
        for n in &names {
            let t = half.get(n).unwrap().map(|v| v * 0.5);
            half.insert(n.clone(), t);
        }
        // a tape binds each parameter name once, so each store gets its own
        let (_, mut tape, signal, acts) = setup();
        let full = inject(&mut tape, &params, &acts, &signal).unwrap();
        let (_, mut tape2, signal2, acts2) = setup();
        let once = inject(&mut tape2, &half, &acts2, &signal2).unwrap();
        let twice = inject(&mut tape2, &half, &once, &signal2).unwrap();
        for (f, t) in full.iter().zip(&twice) {
            assert!(tape.value(*f).max_abs_diff(tape2.value(*t)) < 1e-12);
        }
        assert!(tape.value(full[0]).max_abs_diff(tape.value(acts[0])) > 1e-3);
    }

    #[test]
    fn encoders_do_not_share_weights() {
        let cfg = cfg();
        let (mut params, _, _, _) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let maps = (
            Tensor::<f64>::uniform(vec![1, 3, 8, 8], 1.0, &mut rng),
            Tensor::<f64>::uniform(vec![1, 1, 8, 8], 1.0, &mut rng),
        );
        let run = |params: &ParamStore<f64>| {
            let mut tape = Tape::new();
            let h = tape.constant(maps.0.clone());
            let c = tape.constant(maps.1.clone());
            let (col, st) = encode_visual(&mut tape, params, &cfg, h, c).unwrap();
            let v = |f: &VisualFeatures| f.0.iter().map(|&id| tape.value(id).clone()).collect::<Vec<_>>();
            (v(&col), v(&st))
        };
        let before = run(&params);
        assert_eq!(before, run(&params));
        params.get_mut("adapter.col.0.weight").unwrap().data_mut()[0] += 0.5;
        let after = run(&params);
        assert_eq!(before.1, after.1);
        assert_ne!(before.0, after.0);
    }

    #[test]
    fn assembly_and_modes() {
        let (_, mut tape, signal, _) = setup();
        let ControlSignal { cond_h, cond_c } = signal.clone();
        let swapped = assemble_control(
            Some(cond_c.visual.clone()),
            Some(cond_c.text),
            Some(cond_h.visual.clone()),
            Some(cond_h.text),
        )
        .unwrap();
        assert_eq!(swapped.cond_h, signal.cond_c);
        assert_eq!(swapped.cond_c, signal.cond_h);
        assert!(assemble_control(None, Some(cond_h.text), Some(cond_c.visual.clone()), Some(cond_c.text)).is_err());

        let no_text = MapMode::NoText.apply(&mut tape, signal.clone());
        for pair in [&no_text.cond_h, &no_text.cond_c] {
            assert!(tape.value(pair.text).data().iter().all(|&v| v == 0.0));
        }
        assert_eq!(no_text.cond_h.visual, signal.cond_h.visual);
        let no_vis = MapMode::NoVisual.apply(&mut tape, signal.clone());
        for pair in [&no_vis.cond_h, &no_vis.cond_c] {
            for &id in &pair.visual.0 {
                assert!(tape.value(id).data().iter().all(|&v| v == 0.0));
            }
        }
        assert_eq!(no_vis.cond_c.text, signal.cond_c.text);
    }

    #[test]
    fn missing_projection_is_reported() {
        let (mut params, mut tape, signal, acts) = setup();
        let mut pruned = ParamStore::new();
        for (n, t) in params.iter_mut() {
            if !n.starts_with("adapter.proj") {
                pruned.insert(n.clone(), t.clone());
            }
        }
        let err = inject(&mut tape, &pruned, &acts, &signal).unwrap_err();
        assert!(matches!(err, ConditioningError::Uninitialized(_)));
    }
}
