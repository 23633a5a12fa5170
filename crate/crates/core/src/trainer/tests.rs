use super::*;
use crate::model::ModelConfig;
use crate::numerics::{finite_diff_at, relative_error, Coord, ParamStore, Tensor};
use crate::pairing::{assemble_triplets, form_pairs, generate_corpus, CorpusImage, Triplet};

fn shrink(c: &CorpusImage) -> CorpusImage {
    CorpusImage {
        entry: c.entry,
        image: c.image.downsample(4).unwrap(),
        mask: c.mask.downsample(4).unwrap(),
    }
}

/// Triplets rendered at 32 and reduced to the 8-pixel tiny model side.
fn tiny_triplets(n: usize) -> Vec<Triplet> {
    let corpus = generate_corpus(120, 0, 32, 5).unwrap();
    let entries: Vec<_> = corpus.images.iter().map(|c| c.entry).collect();
    let pairs = form_pairs(&entries, 4.0, 7.0).unwrap();
    let triplets = assemble_triplets(&corpus, &pairs).unwrap();
    assert!(triplets.len() >= n, "only {} triplets", triplets.len());
    triplets
        .into_iter()
        .take(n)
        .map(|t| Triplet {
            input: shrink(&t.input),
            reference: shrink(&t.reference),
            ..t
        })
        .collect()
}

fn prepared(n: usize) -> Vec<PreparedTriplet> {
    tiny_triplets(n)
        .iter()
        .map(|t| PreparedTriplet::new(t, MapMode::Full).unwrap())
        .collect()
}

fn tiny_cfg() -> TrainConfig {
    TrainConfig {
        steps: 100,
        threshold: 90,
        batch_size: 2,
        total_steps: 4,
        log_every: 1,
        checkpoint_every: 2,
        side: 8,
        lr: 1e-3,
        ..TrainConfig::default()
    }
}

/// A model whose projections are no longer zero, so every path carries signal.
fn warm_model(seed: u64) -> Model {
    let mut model = Model::init(ModelConfig::tiny(), seed).unwrap();
    let mut rng = step_rng(seed, 999);
    let names: Vec<String> = model.params.names().filter(|n| n.starts_with("adapter.proj")).cloned().collect();
    for name in names {
        let shape = model.params.get(&name).unwrap().shape().to_vec();
        model.params.insert(name, Tensor::uniform(shape, 0.2, &mut rng));
    }
    model
}

fn draw_at(t: usize, seed: u64) -> Draw {
    let mut rng = step_rng(seed, 0);
    let mut d = Draw::sample(&mut rng, 100, &[1, 3, 8, 8]);
    d.t = t;
    d
}

#[test]
fn zero_lambda_reduces_to_reference_loss() {
    let data = prepared(1);
    let model = warm_model(1);
    let schedule = tiny_cfg().schedule().unwrap();
    let cfg = LossConfig {
        lambda: 0.0,
        ..tiny_cfg().loss()
    };
    let (parts, _) = dual_loss(&model, &data[0], &draw_at(95, 2), &cfg, &schedule, false).unwrap();
    assert!(parts.l_inp > 0.0);
    assert_eq!(parts.total, parts.l_ref);
}

#[test]
fn identical_branches_double_up() {
    let mut item = prepared(1).remove(0);
    item.x_inp = item.x_ref.clone();
    let model = warm_model(3);
    let schedule = tiny_cfg().schedule().unwrap();
    let mut draw = draw_at(40, 4);
    draw.noise_inp = draw.noise_ref.clone();
    for lambda in [0.5, 1.0, 2.0] {
        let cfg = LossConfig { lambda, ..tiny_cfg().loss() };
        let (parts, _) = dual_loss(&model, &item, &draw, &cfg, &schedule, false).unwrap();
        assert_eq!(parts.l_inp, parts.l_ref);
        assert!((parts.total - (1.0 + lambda) * parts.l_ref).abs() <= 1e-6 * parts.total);
    }
}

#[test]
fn gated_branch_is_skipped_above_threshold() {
    let data = prepared(1);
    let model = warm_model(5);
    let schedule = tiny_cfg().schedule().unwrap();
    let gated = LossConfig {
        fold: FoldPolicy::Gated,
        ..tiny_cfg().loss()
    };
    let (above, _) = dual_loss(&model, &data[0], &draw_at(95, 6), &gated, &schedule, false).unwrap();
    assert_eq!(above.l_inp, 0.0);
    assert_eq!(above.total, above.l_ref);
    let (below, _) = dual_loss(&model, &data[0], &draw_at(60, 6), &gated, &schedule, false).unwrap();
    assert!(below.l_inp > 0.0);
}

#[test]
fn threshold_must_fit_schedule() {
    let data = prepared(1);
    let model = warm_model(5);
    let schedule = tiny_cfg().schedule().unwrap();
    let cfg = LossConfig {
        threshold: 101,
        ..tiny_cfg().loss()
    };
    assert!(dual_loss(&model, &data[0], &draw_at(5, 1), &cfg, &schedule, false).is_err());
}

#[test]
fn input_branch_reaches_adapter() {
    let data = prepared(2);
    let batch: Vec<_> = data.iter().collect();
    let model = Model::init(ModelConfig::tiny(), 7).unwrap();
    let schedule = tiny_cfg().schedule().unwrap();
    // above the threshold, so the folded input branch runs at a different timestep
    let draws = vec![draw_at(95, 8), draw_at(97, 9)];
    let dual = tiny_cfg().loss();
    let reference = LossConfig {
        objective: Objective::ReferenceOnly,
        ..dual
    };
    let (_, g_dual) = batch_loss(&model, &batch, &draws, &dual, &schedule, true).unwrap();
    let (_, g_ref) = batch_loss(&model, &batch, &draws, &reference, &schedule, true).unwrap();
    for name in ["adapter.proj.col.0.weight", "adapter.proj.str.1.weight"] {
        let (a, b) = (g_dual.get(name).unwrap(), g_ref.get(name).unwrap());
        assert!(b.norm() > 0.0, "{name}");
        assert!(a.max_abs_diff(b) > 0.0, "{name}");
    }
}

#[test]
fn ordered_and_unordered_reductions_agree() {
    let data = prepared(3);
    let batch: Vec<_> = data.iter().collect();
    let model = warm_model(11);
    let schedule = tiny_cfg().schedule().unwrap();
    let draws = vec![draw_at(10, 1), draw_at(50, 2), draw_at(99, 3)];
    let (pa, ga) = batch_loss(&model, &batch, &draws, &tiny_cfg().loss(), &schedule, true).unwrap();
    let (pb, gb) = batch_loss(&model, &batch, &draws, &tiny_cfg().loss(), &schedule, false).unwrap();
    assert!((pa.total - pb.total).abs() < 1e-9);
    for (name, g) in ga.iter() {
        assert!(g.max_abs_diff(gb.get(name).unwrap()) < 1e-5, "{name}");
    }
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let data = prepared(4);
    let cfg = TrainConfig {
        lr: 0.0,
        ..tiny_cfg()
    };
    let schedule = cfg.schedule().unwrap();
    let mut state = TrainState::new(warm_model(12));
    let before = state.model.params.clone();
    let (idx, draws) = draw_batch(&cfg, 0, data.len(), &[1, 3, 8, 8]);
    let batch: Vec<_> = idx.iter().map(|&i| &data[i]).collect();
    let (l0, _) = batch_loss(&state.model, &batch, &draws, &cfg.loss(), &schedule, true).unwrap();
    let row = train_step(&mut state, &data, &cfg, &schedule).unwrap();
    assert_eq!(row.loss, l0.total);
    assert_eq!(state.model.params, before);
    let (l1, _) = batch_loss(&state.model, &batch, &draws, &cfg.loss(), &schedule, true).unwrap();
    assert_eq!(l1, l0);
}

fn bits(p: &ParamStore) -> Vec<(String, Vec<u32>)> {
    p.iter()
        .map(|(n, t)| (n.clone(), t.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

#[test]
fn zero_lambda_matches_reference_only_trainer() {
    let data = prepared(4);
    let dual = TrainConfig {
        lambda: 0.0,
        total_steps: 3,
        ..tiny_cfg()
    };
    let reference = TrainConfig {
        objective: Objective::ReferenceOnly,
        ..dual.clone()
    };
    let mut a = TrainState::new(warm_model(13));
    let mut b = a.clone();
    train_loop(&dual, &mut a, &data, None).unwrap();
    train_loop(&reference, &mut b, &data, None).unwrap();
    assert_eq!(bits(&a.model.params), bits(&b.model.params));
}

#[test]
fn metrics_rows_and_component_identity() {
    let data = prepared(4);
    let cfg = TrainConfig {
        total_steps: 4,
        log_every: 2,
        lambda: 0.7,
        ..tiny_cfg()
    };
    let dir = tempfile::tempdir().unwrap();
    let out = TrainOutput {
        dir: dir.path().to_path_buf(),
        config_text: "steps = 4\n".into(),
    };
    let mut state = TrainState::new(Model::init(ModelConfig::tiny(), 14).unwrap());
    let rows = train_loop(&cfg, &mut state, &data, Some(&out)).unwrap();
    assert_eq!(rows.len(), 2);
    let text = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 3);
    for line in &lines[1..] {
        let v: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        assert!(v[1] >= 0.0 && v[2] >= 0.0 && v[3] >= 0.0);
        assert!((v[1] - (v[2] + 0.7 * v[3])).abs() < 1e-6);
    }
    assert!(checkpoint_path(dir.path(), 2).exists());
    assert!(checkpoint_path(dir.path(), 4).exists());
    assert_eq!(Checkpoint::load(&dir.path().join(FINAL_CHECKPOINT)).unwrap().step(), 4);
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let data = prepared(4);
    let cfg = tiny_cfg();
    let init = TrainState::new(warm_model(15));

    let full_dir = tempfile::tempdir().unwrap();
    let full_out = TrainOutput {
        dir: full_dir.path().to_path_buf(),
        config_text: String::new(),
    };
    let mut full = init.clone();
    train_loop(&cfg, &mut full, &data, Some(&full_out)).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let out = TrainOutput {
        dir: dir.path().to_path_buf(),
        config_text: String::new(),
    };
    let mut first = init.clone();
    train_loop(&TrainConfig { total_steps: 2, ..cfg.clone() }, &mut first, &data, Some(&out)).unwrap();
    let ck = Checkpoint::load(&checkpoint_path(dir.path(), 2)).unwrap();
    let mut resumed = TrainState {
        model: Model {
            config: init.model.config.clone(),
            params: ck.params,
        },
        optimizer: ck.optimizer,
    };
    train_loop(&cfg, &mut resumed, &data, Some(&out)).unwrap();

    assert_eq!(bits(&resumed.model.params), bits(&full.model.params));
    assert_eq!(resumed.optimizer, full.optimizer);
    let read = |d: &Path| std::fs::read_to_string(d.join(METRICS_FILE)).unwrap();
    assert_eq!(read(dir.path()), read(full_dir.path()));
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    assert_eq!(TrainConfig::default_threshold(1000), 900);
    assert_eq!(TrainConfig::default_threshold(100), 90);
    for bad in [
        TrainConfig { threshold: 0, ..TrainConfig::default() },
        TrainConfig { threshold: 2000, ..TrainConfig::default() },
        TrainConfig { lambda: -1.0, ..TrainConfig::default() },
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
    ] {
        assert!(bad.validate().is_err());
    }
}

#[test]
fn gradient_matches_finite_differences_on_sampled_coordinates() {
    let data: Vec<PreparedTriplet<f64>> = prepared(2).iter().map(|p| p.cast()).collect();
    let batch: Vec<_> = data.iter().collect();
    let model: Model<f64> = warm_model(16).cast();
    let schedule = tiny_cfg().schedule().unwrap();
    let draws: Vec<Draw<f64>> = vec![draw_at(95, 17).cast(), draw_at(30, 18).cast()];
    let cfg = tiny_cfg().loss();
    let (_, grads) = batch_loss(&model, &batch, &draws, &cfg, &schedule, true).unwrap();
    let f = |p: &ParamStore<f64>| {
        let m = Model {
            config: model.config.clone(),
            params: p.clone(),
        };
        batch_loss(&m, &batch, &draws, &cfg, &schedule, true)
            .map(|(l, _)| l.total)
            .map_err(|e| crate::numerics::NumericsError::Unsupported(e.to_string()))
    };
    let coords: Vec<Coord> = model
        .params
        .iter()
        .map(|(name, t)| Coord {
            name: name.clone(),
            index: t.len() / 2,
        })
        .collect();
    let numeric = finite_diff_at(&f, &model.params, &coords, 1e-5).unwrap();
    for (c, n) in coords.iter().zip(numeric) {
        let a = grads.get(&c.name).unwrap().data()[c.index];
        assert!(relative_error(a, n, 1e-6) < 1e-4, "{} {a} vs {n}", c.name);
    }
}
