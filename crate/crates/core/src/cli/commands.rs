use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::eval::{
    ablation_map, ablation_ts, generate, grid_csv, map_pattern, nondecreasing_with_slack, run_eval, ts_scs_trend,
    variant_means, AblationSetup, GridRow,
};
use crate::model::Model;
use crate::pairing::{
    assemble_triplets, form_pairs, load_corpus, load_pairs, render_corpus, sample_entries_until, save_corpus,
    save_pairs, split_pairs, triplets_path, CorpusEntry, Triplet, TEST_FILE, TRAIN_FILE,
};
use crate::selftest::{gradient_check, schedule_checks, zero_init_identity, GRAD_TOLERANCE};
use crate::trainer::{train_loop, PreparedTriplet, TrainOutput, TrainState};

use super::{AblateAction, Command, SelftestAction};

/// Resolved configs are written as `<command>.config` in the output directory.
pub const CONFIG_SUFFIX: &str = ".config";

/// Corpus generation stops with an error after this many blocks.
const MAX_GEN_BLOCKS: usize = 1000;

/// Allowed adjacent inversion of the threshold-sweep consistency trend.
const TREND_SLACK: f64 = 0.01;

pub(super) fn dispatch(command: &Command, cfg: &RunConfig) -> anyhow::Result<bool> {
    match command {
        Command::Dataset { .. } => dataset_gen(cfg),
        Command::Pairs { .. } => pairs_form(cfg),
        Command::Train { resume } => train(cfg, resume.as_deref()),
        Command::Sample => sample(cfg),
        Command::Eval => eval(cfg),
        Command::Ablate { action } => ablate(cfg, action),
        Command::Selftest {
            action: SelftestAction::Grad,
        } => selftest_grad(cfg),
        Command::Selftest {
            action: SelftestAction::Diffusion,
        } => selftest_diffusion(cfg),
    }
}

fn out_dir(cfg: &RunConfig, default: &str) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn write_config(dir: &Path, command: &str, cfg: &RunConfig) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(format!("{command}{CONFIG_SUFFIX}"));
    fs::write(&path, cfg.to_text()).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn dataset_gen(cfg: &RunConfig) -> anyhow::Result<bool> {
    let dir = cfg.out.clone().unwrap_or_else(|| cfg.data.clone());
    let needed = cfg.train_triplets + cfg.test_triplets;
    let entries = sample_entries_until(
        needed,
        cfg.low_max,
        cfg.high_min,
        cfg.gen_block,
        cfg.train.seed,
        MAX_GEN_BLOCKS,
    )?;
    log::info!("rendering {} scenes at {} px", entries.len(), cfg.train.side);
    let corpus = render_corpus(&entries, cfg.train.side)?;
    save_corpus(&dir, &corpus)?;
    write_config(&dir, "dataset", cfg)?;
    println!("{} images written to {}", corpus.images.len(), dir.display());
    Ok(true)
}

fn pairs_form(cfg: &RunConfig) -> anyhow::Result<bool> {
    let dir = &cfg.data;
    if let Some(out) = &cfg.out {
        if out != dir {
            bail!("pair indexes live next to the corpus; --out must equal --data");
        }
    }
    let corpus = load_corpus(dir)?;
    let entries: Vec<CorpusEntry> = corpus.images.iter().map(|c| c.entry).collect();
    let pairs = form_pairs(&entries, cfg.low_max, cfg.high_min)?;
    let (train, test) = split_pairs(&pairs, cfg.train_triplets, cfg.test_triplets, cfg.train.seed)?;
    save_pairs(&triplets_path(dir), &pairs)?;
    save_pairs(&dir.join(TRAIN_FILE), &train)?;
    save_pairs(&dir.join(TEST_FILE), &test)?;
    write_config(dir, "pairs", cfg)?;
    println!(
        "{} pairs from {} images; {} train, {} test",
        pairs.len(),
        entries.len(),
        train.len(),
        test.len()
    );
    Ok(true)
}

/// Train and test triplets of the corpus at `cfg.data`, the test set cut to
/// `eval_limit` when that is set.
fn load_sets(cfg: &RunConfig) -> anyhow::Result<(Vec<Triplet>, Vec<Triplet>)> {
    let corpus = load_corpus(&cfg.data).with_context(|| format!("loading corpus {}", cfg.data.display()))?;
    if corpus.side != cfg.train.side {
        bail!("corpus side {} does not match side = {}", corpus.side, cfg.train.side);
    }
    let train = assemble_triplets(&corpus, &load_pairs(&cfg.data.join(TRAIN_FILE))?)?;
    let mut test = assemble_triplets(&corpus, &load_pairs(&cfg.data.join(TEST_FILE))?)?;
    if cfg.eval_limit > 0 {
        test.truncate(cfg.eval_limit);
    }
    Ok((train, test))
}

/// Checks that a checkpoint's tensors and diffusion length fit `cfg`.
pub fn check_compatible(cfg: &RunConfig, ckpt: &Checkpoint) -> anyhow::Result<()> {
    let expected = Model::<f32>::init(cfg.model_config(), 0)?.params;
    for (name, t) in expected.iter() {
        match ckpt.params.get(name) {
            None => bail!("checkpoint/config mismatch: tensor {name} missing"),
            Some(c) if c.shape() != t.shape() => bail!(
                "checkpoint/config mismatch: {name} has shape {:?}, config expects {:?}",
                c.shape(),
                t.shape()
            ),
            Some(_) => {}
        }
    }
    if let Some(extra) = ckpt.params.names().find(|n| !expected.contains(n)) {
        bail!("checkpoint/config mismatch: unexpected tensor {extra}");
    }
    if !ckpt.config_text.trim().is_empty() {
        let saved = RunConfig::from_text(&ckpt.config_text, &[])?;
        if saved.train.steps != cfg.train.steps {
            bail!(
                "checkpoint/config mismatch: trained with steps = {}, config has {}",
                saved.train.steps,
                cfg.train.steps
            );
        }
    }
    Ok(())
}

/// Loads a checkpoint and builds the model `cfg` describes from it.
pub fn load_model(cfg: &RunConfig, path: &Path) -> anyhow::Result<(Checkpoint, Model)> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    check_compatible(cfg, &ckpt)?;
    let model = Model {
        config: cfg.model_config(),
        params: ckpt.params.clone(),
    };
    Ok((ckpt, model))
}

fn train(cfg: &RunConfig, resume: Option<&Path>) -> anyhow::Result<bool> {
    let dir = out_dir(cfg, "runs/train");
    let mut state = match resume {
        Some(path) => {
            let (ckpt, model) = load_model(cfg, path)?;
            log::info!("resuming from step {}", ckpt.step());
            TrainState {
                model,
                optimizer: ckpt.optimizer,
            }
        }
        None => TrainState::new(Model::init(cfg.model_config(), cfg.train.seed)?),
    };
    let (train, _) = load_sets(cfg)?;
    let prepared = train
        .iter()
        .map(|t| PreparedTriplet::new(t, cfg.train.map_mode))
        .collect::<Result<Vec<_>, _>>()?;
    write_config(&dir, "train", cfg)?;
    let output = TrainOutput {
        dir: dir.clone(),
        config_text: cfg.to_text(),
    };
    let rows = train_loop(&cfg.train, &mut state, &prepared, Some(&output))?;
    if let Some(last) = rows.last() {
        println!("step {} loss {:.6}", last.step, last.loss);
    }
    println!("checkpoints and metrics in {}", dir.display());
    Ok(true)
}

fn checkpoint_arg(cfg: &RunConfig) -> anyhow::Result<&Path> {
    cfg.checkpoint
        .as_deref()
        .context("a checkpoint is required (--checkpoint PATH)")
}

fn sample(cfg: &RunConfig) -> anyhow::Result<bool> {
    let dir = out_dir(cfg, "runs/sample");
    let (_, model) = load_model(cfg, checkpoint_arg(cfg)?)?;
    let (_, test) = load_sets(cfg)?;
    let inputs: Vec<&Triplet> = test.iter().collect();
    let schedule = cfg.train.schedule()?;
    let opts = cfg.eval_options();
    write_config(&dir, "sample", cfg)?;
    let mut manifest = String::from("id,seed,path\n");
    for &seed in &opts.seeds {
        let sub = format!("samples/seed_{seed}");
        fs::create_dir_all(dir.join(&sub))?;
        let images = generate(&model, &schedule, &inputs, seed, &opts)?;
        for (t, img) in inputs.iter().zip(&images) {
            let rel = format!("{sub}/{:06}.png", t.input.entry.id);
            img.save_png(&dir.join(&rel))?;
            writeln!(manifest, "{},{seed},{rel}", t.input.entry.id)?;
        }
    }
    fs::write(dir.join("samples.csv"), manifest)?;
    println!(
        "{} images per seed written to {}",
        inputs.len(),
        dir.join("samples").display()
    );
    Ok(true)
}

fn eval(cfg: &RunConfig) -> anyhow::Result<bool> {
    let dir = out_dir(cfg, "runs/eval");
    let (_, model) = load_model(cfg, checkpoint_arg(cfg)?)?;
    let (_, test) = load_sets(cfg)?;
    let report = run_eval(&model, &cfg.train.schedule()?, &test, &cfg.eval_options(), &cfg.to_text())?;
    write_config(&dir, "eval", cfg)?;
    fs::write(dir.join("eval.csv"), report.csv())?;
    fs::write(dir.join("summary.json"), report.summary_json())?;
    let s = &report.summary;
    println!(
        "mean PAS {:.4} -> {:.4} (delta {:+.4}), mean SCS {:.4}, null SCS {:.4}",
        s.mean_pas_in, s.mean_pas_out, s.delta_pas, s.mean_scs, s.null_scs
    );
    Ok(true)
}

fn means_csv(rows: &[GridRow]) -> String {
    let mut s = String::from("variant,count,mean_pas_in,mean_pas_out,delta_pas,mean_scs\n");
    for (v, a) in variant_means(rows) {
        s.push_str(&format!(
            "{v},{},{},{},{},{}\n",
            a.count, a.mean_pas_in, a.mean_pas_out, a.delta_pas, a.mean_scs
        ));
    }
    s
}

fn ablate(cfg: &RunConfig, action: &AblateAction) -> anyhow::Result<bool> {
    let (name, default) = match action {
        AblateAction::Ts => ("ablate_ts", "runs/ablate_ts"),
        AblateAction::Map => ("ablate_map", "runs/ablate_map"),
    };
    let dir = out_dir(cfg, default);
    let (train, test) = load_sets(cfg)?;
    let warm = match &cfg.warm_start {
        Some(path) => {
            let (ckpt, model) = load_model(cfg, path)?;
            Some(TrainState {
                model,
                optimizer: ckpt.optimizer,
            })
        }
        None => None,
    };
    let setup = AblationSetup {
        model: cfg.model_config(),
        train: cfg.train.clone(),
        train_set: &train,
        test_set: &test,
        eval: cfg.eval_options(),
        seeds: cfg.ablation_seeds.clone(),
        step_cap: cfg.step_cap,
        warm_start: warm.as_ref(),
    };
    write_config(&dir, name, cfg)?;
    let rows = match action {
        AblateAction::Ts => ablation_ts(&setup, &cfg.ts_values)?,
        AblateAction::Map => ablation_map(&setup)?,
    };
    fs::write(dir.join(format!("{name}.csv")), grid_csv(&rows))?;
    fs::write(dir.join(format!("{name}_means.csv")), means_csv(&rows))?;
    let means = variant_means(&rows);
    let verdict = match action {
        AblateAction::Ts => {
            let trend = ts_scs_trend(&means);
            let scs: Vec<f64> = trend.iter().map(|&(_, s)| s).collect();
            let ok = nondecreasing_with_slack(&scs, TREND_SLACK);
            format!("scs_nondecreasing_in_t_s = {ok}\nslack = {TREND_SLACK}\ntrend = {trend:?}\n")
        }
        AblateAction::Map => match map_pattern(&means) {
            Some(p) => format!(
                "full_pas_ge_wo_t = {}\nfull_pas_ge_wo_v = {}\nwo_t_scs_ge_wo_v = {}\npattern_holds = {}\n",
                p.full_pas_beats_visual_only,
                p.full_pas_beats_text_only,
                p.visual_only_scs_beats_text_only,
                p.holds()
            ),
            None => "pattern_holds = unknown\n".to_owned(),
        },
    };
    fs::write(dir.join("verdict.txt"), &verdict)?;
    print!("{}", means_csv(&rows));
    print!("{verdict}");
    Ok(true)
}

fn selftest_grad(cfg: &RunConfig) -> anyhow::Result<bool> {
    let report = gradient_check(2, cfg.train.seed, 1e-5)?;
    let ok = report.max_rel_error < GRAD_TOLERANCE;
    println!(
        "{} tensors, {} coordinates: max relative error {:.3e} (tolerance {GRAD_TOLERANCE:e}), {} over tolerance",
        report.tensors, report.coords, report.max_rel_error, report.over_tolerance
    );
    println!("worst: {}", report.worst);
    println!("same backward pass in 64-bit: max relative error {:.3e}", report.max_rel_error_f64);
    println!("{}", if ok { "PASS" } else { "FAIL" });
    Ok(ok)
}

fn selftest_diffusion(cfg: &RunConfig) -> anyhow::Result<bool> {
    let mut checks = schedule_checks()?;
    checks.push(zero_init_identity(crate::model::ModelConfig::tiny(), cfg.train.seed)?);
    checks.push(zero_init_identity(cfg.model_config(), cfg.train.seed)?);
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(checks.iter().all(|c| c.passed))
}
