//! Acceptance suite: one PASS/FAIL/SKIP line per criterion.
//!
//! The run always exits 0 so that `cargo test` reports the suite as a log;
//! set `AESTHETE_ACCEPTANCE_STRICT=1` to exit 1 when any criterion fails.
//! Criteria 8 to 10 train the standard model for hours on a CPU and run only
//! with `AESTHETE_ACCEPTANCE_FULL=1`. `AESTHETE_ACCEPTANCE_ONLY=1,5,11`
//! restricts the run to the listed criteria.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use aesthete::checkpoint::Checkpoint;
use aesthete::conditioning::{contour_map, hsv_map_to_rgb, rgb_to_hsv_map, MapMode};
use aesthete::eval::{
    ablation_map, ablation_ts, map_pattern, nondecreasing_with_slack, run_eval, ts_scs_trend, variant_means,
    AblationSetup, EvalOptions,
};
use aesthete::model::{Model, ModelConfig};
use aesthete::pairing::{
    form_pairs, generate_corpus, parametric_mos, render_corpus, sample_entries_until, split_pairs, assemble_triplets,
    CorpusEntry, Triplet, DEFAULT_HIGH_MIN, DEFAULT_LOW_MAX,
};
use aesthete::raster::Image;
use aesthete::selftest::{gradient_check, schedule_checks, small_triplets, zero_init_identity, GRAD_TOLERANCE};
use aesthete::trainer::{
    fold_timestep, train_loop, train_step, FoldPolicy, Objective, PreparedTriplet, TrainConfig, TrainState,
};

/// Wall-clock budget of the gradient check.
const GRAD_BUDGET: Duration = Duration::from_secs(300);
const HSV_TOLERANCE: f32 = 1e-5;
const SOBEL_TOLERANCE: f64 = 1e-6;
const LAMBDA_ZERO_STEPS: u64 = 200;
const PAIRING_CORPUS: usize = 10_000;
const TREND_SLACK: f64 = 0.01;

struct Outcome {
    passed: Option<bool>,
    detail: String,
}

fn pass(ok: bool, detail: impl Into<String>) -> anyhow::Result<Outcome> {
    Ok(Outcome {
        passed: Some(ok),
        detail: detail.into(),
    })
}

fn skip(detail: impl Into<String>) -> anyhow::Result<Outcome> {
    Ok(Outcome {
        passed: None,
        detail: detail.into(),
    })
}

fn full_run() -> bool {
    std::env::var("AESTHETE_ACCEPTANCE_FULL").is_ok_and(|v| v == "1")
}

fn gradient_fidelity() -> anyhow::Result<Outcome> {
    let start = Instant::now();
    let r = gradient_check(2, 0, 1e-5)?;
    let elapsed = start.elapsed();
    pass(
        r.max_rel_error < GRAD_TOLERANCE && elapsed < GRAD_BUDGET,
        format!(
            "{} tensors, {} coords, max rel error {:.3e} (< {GRAD_TOLERANCE:e}), {} coords over; worst {}; \
             64-bit backward max rel error {:.3e}; {:.0}s (< {}s)",
            r.tensors,
            r.coords,
            r.max_rel_error,
            r.over_tolerance,
            r.worst,
            r.max_rel_error_f64,
            elapsed.as_secs_f64(),
            GRAD_BUDGET.as_secs()
        ),
    )
}

fn schedule_and_forward() -> anyhow::Result<Outcome> {
    let checks = schedule_checks()?;
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{} ({})", c.name, c.detail))
        .collect();
    let moments: Vec<&str> = checks
        .iter()
        .filter(|c| c.name == "forward moments")
        .map(|c| c.detail.as_str())
        .collect();
    pass(
        failed.is_empty(),
        format!("{} checks; failed: {failed:?}; {}", checks.len(), moments.join("; ")),
    )
}

fn zero_init() -> anyhow::Result<Outcome> {
    let tiny = zero_init_identity(ModelConfig::tiny(), 0)?;
    let standard = zero_init_identity(ModelConfig::standard(32), 0)?;
    pass(
        tiny.passed && standard.passed,
        format!("tiny: {}; standard(32): {}", tiny.detail, standard.detail),
    )
}

fn fold_semantics() -> anyhow::Result<Outcome> {
    let ts = 900;
    let mut mismatches = 0;
    for t in 1..=1000usize {
        let expected = if t <= ts { t } else { t - ts };
        if fold_timestep(t, ts, FoldPolicy::Folded) != Some(expected) {
            mismatches += 1;
        }
    }
    let example = fold_timestep(950, ts, FoldPolicy::Folded);
    let skipped: Vec<usize> = (1..=1000)
        .filter(|&t| fold_timestep(t, ts, FoldPolicy::Gated).is_none())
        .collect();
    let gated_identity = (1..=ts).all(|t| fold_timestep(t, ts, FoldPolicy::Gated) == Some(t));
    let gated_ok = skipped.len() == 100 && skipped.iter().all(|&t| t > ts) && gated_identity;
    pass(
        mismatches == 0 && example == Some(50) && gated_ok,
        format!(
            "folded mismatches {mismatches}/1000, 950 -> {example:?}, gated skips {} (all above {ts}: {gated_ok})",
            skipped.len()
        ),
    )
}

fn lambda_zero_equivalence() -> anyhow::Result<Outcome> {
    let triplets = small_triplets(6, 8, 3)?;
    let prepared: Vec<PreparedTriplet> = triplets
        .iter()
        .map(|t| PreparedTriplet::new(t, MapMode::Full))
        .collect::<Result<_, _>>()?;
    let base = TrainConfig {
        steps: 100,
        threshold: 90,
        lr: 1e-3,
        batch_size: 4,
        seed: 11,
        ..TrainConfig::default()
    };
    let dual = TrainConfig {
        lambda: 0.0,
        objective: Objective::Dual,
        ..base.clone()
    };
    let reference_only = TrainConfig {
        objective: Objective::ReferenceOnly,
        ..base
    };
    let model = Model::init(ModelConfig::tiny(), 5)?;
    let (mut a, mut b) = (TrainState::new(model.clone()), TrainState::new(model));
    let schedule = dual.schedule()?;
    let mut l_inp_seen = false;
    for step in 1..=LAMBDA_ZERO_STEPS {
        let ra = train_step(&mut a, &prepared, &dual, &schedule)?;
        train_step(&mut b, &prepared, &reference_only, &schedule)?;
        l_inp_seen |= ra.l_inp > 0.0;
        let same = a.model.params.iter().all(|(name, t)| {
            let u = b.model.params.get(name).expect("same names");
            t.data().iter().zip(u.data()).all(|(x, y)| x.to_bits() == y.to_bits())
        });
        if !same {
            return pass(false, format!("parameters diverge at step {step}"));
        }
    }
    pass(
        l_inp_seen,
        format!("{LAMBDA_ZERO_STEPS} steps bit-identical; input branch evaluated under lambda = 0: {l_inp_seen}"),
    )
}

fn pairing_rules() -> anyhow::Result<Outcome> {
    let corpus = generate_corpus(PAIRING_CORPUS, 0, 32, 2024)?;
    let entries: Vec<CorpusEntry> = corpus.images.iter().map(|c| c.entry).collect();
    let pairs = form_pairs(&entries, DEFAULT_LOW_MAX, DEFAULT_HIGH_MIN)?;
    let triplets = assemble_triplets(&corpus, &pairs)?;
    let mut violations = 0;
    for t in &triplets {
        let (i, r) = (&t.input.entry, &t.reference.entry);
        let mos_i = parametric_mos(&i.params)?;
        let mos_r = parametric_mos(&r.params)?;
        let banded = mos_i <= DEFAULT_LOW_MAX && mos_r >= DEFAULT_HIGH_MIN;
        let same_key = i.spec.class == r.spec.class && t.caption == r.caption();
        if !(banded && same_key) {
            violations += 1;
        }
    }
    // every low image whose class has a high image is paired
    let highs: BTreeSet<_> = entries
        .iter()
        .filter(|e| e.mos >= DEFAULT_HIGH_MIN)
        .map(|e| e.spec.class)
        .collect();
    let expected = entries
        .iter()
        .filter(|e| e.mos <= DEFAULT_LOW_MAX && highs.contains(&e.spec.class))
        .count();
    let mut shuffled = entries.clone();
    let mut order_invariant = true;
    for seed in 0..3 {
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        order_invariant &= form_pairs(&shuffled, DEFAULT_LOW_MAX, DEFAULT_HIGH_MIN)? == pairs;
    }
    pass(
        violations == 0 && triplets.len() == expected && order_invariant,
        format!(
            "{} images, {} triplets ({expected} expected), {violations} violations, order invariant under 3 shuffles: {order_invariant}",
            entries.len(),
            triplets.len()
        ),
    )
}

/// Sobel magnitude on a single-channel image with replicated borders,
/// normalized by 4√2 and capped at 1.
fn sobel_oracle(img: &Image) -> Vec<f64> {
    let (h, w) = (img.height() as isize, img.width() as isize);
    let at = |y: isize, x: isize| img.get(0, y.clamp(0, h - 1) as usize, x.clamp(0, w - 1) as usize) as f64;
    let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let (mut gx, mut gy) = (0.0, 0.0);
            for dy in 0..3 {
                for dx in 0..3 {
                    let v = at(y + dy as isize - 1, x + dx as isize - 1);
                    gx += kx[dy][dx] * v;
                    gy += kx[dx][dy] * v;
                }
            }
            out.push(((gx * gx + gy * gy).sqrt() / (4.0 * 2f64.sqrt())).min(1.0));
        }
    }
    out
}

fn color_and_contour_maps() -> anyhow::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut hsv_err = 0f32;
    for _ in 0..200 {
        let data: Vec<f32> = (0..3 * 16 * 16).map(|_| rng.random::<f32>()).collect();
        let img = Image::new(3, 16, 16, data)?;
        let back = hsv_map_to_rgb(&rgb_to_hsv_map(&img)?);
        hsv_err = hsv_err.max(back.max_abs_diff(&img));
    }
    // every 8-bit grey level and primary mixture
    let lattice: Vec<f32> = (0..3)
        .flat_map(|c| (0..256 * 6).map(move |i| ((i / 6) as f32 / 255.0) * [1.0, (i % 3) as f32 / 2.0, (i % 2) as f32][c]))
        .collect();
    let img = Image::new(3, 6, 256, lattice)?;
    hsv_err = hsv_err.max(hsv_map_to_rgb(&rgb_to_hsv_map(&img)?).max_abs_diff(&img));

    let mut constant_zero = true;
    for (v, h, w) in [(0.0, 8, 8), (0.37, 5, 11), (1.0, 32, 32)] {
        for ch in [1, 3] {
            let img = Image::filled(ch, h, w, v);
            constant_zero &= contour_map(&img)?.values().iter().all(|&m| m == 0.0);
        }
    }

    let mut sobel_err = 0f64;
    for _ in 0..20 {
        let data: Vec<f32> = (0..7 * 9).map(|_| rng.random::<f32>()).collect();
        let img = Image::new(1, 7, 9, data)?;
        let got = contour_map(&img)?;
        for (a, b) in got.values().iter().zip(sobel_oracle(&img)) {
            sobel_err = sobel_err.max((*a as f64 - b).abs());
        }
    }
    pass(
        hsv_err < HSV_TOLERANCE && constant_zero && sobel_err < SOBEL_TOLERANCE,
        format!(
            "HSV round trip max abs error {hsv_err:.2e} (< {HSV_TOLERANCE:e}); constant images zero: {constant_zero}; \
             Sobel vs oracle max abs error {sobel_err:.2e} (< {SOBEL_TOLERANCE:e})"
        ),
    )
}

/// The default 2,000 / 200 split of a freshly generated 32-pixel corpus.
fn default_split() -> anyhow::Result<(Vec<Triplet>, Vec<Triplet>)> {
    let entries = sample_entries_until(2200, DEFAULT_LOW_MAX, DEFAULT_HIGH_MIN, 1000, 0, 1000)?;
    let corpus = render_corpus(&entries, 32)?;
    let pairs = form_pairs(&entries, DEFAULT_LOW_MAX, DEFAULT_HIGH_MIN)?;
    let (train, test) = split_pairs(&pairs, 2000, 200, 0)?;
    Ok((assemble_triplets(&corpus, &train)?, assemble_triplets(&corpus, &test)?))
}

fn artifacts_dir() -> Option<PathBuf> {
    std::env::var_os("AESTHETE_ACCEPTANCE_DIR").map(PathBuf::from)
}

fn end_to_end() -> anyhow::Result<Outcome> {
    if !full_run() {
        return skip("needs AESTHETE_ACCEPTANCE_FULL=1 (3 x 5,000 standard-model updates)");
    }
    let (train, test) = default_split()?;
    let prepared: Vec<PreparedTriplet> = train
        .iter()
        .map(|t| PreparedTriplet::new(t, MapMode::Full))
        .collect::<Result<_, _>>()?;
    let mut all = true;
    let mut details = Vec::new();
    for seed in [0u64, 1, 2] {
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let mut state = TrainState::new(Model::init(ModelConfig::standard(32), seed)?);
        let output = artifacts_dir().map(|d| aesthete::trainer::TrainOutput {
            dir: d.join(format!("e2e_seed{seed}")),
            config_text: String::new(),
        });
        train_loop(&cfg, &mut state, &prepared, output.as_ref())?;
        let opts = EvalOptions {
            seeds: vec![seed],
            ..EvalOptions::default()
        };
        let report = run_eval(&state.model, &cfg.schedule()?, &test, &opts, "")?;
        let s = &report.summary;
        if let Some(d) = artifacts_dir() {
            fs::write(d.join(format!("e2e_seed{seed}/summary.json")), report.summary_json())?;
        }
        let ok = s.delta_pas > 0.0 && s.mean_scs > s.null_scs;
        all &= ok;
        details.push(format!(
            "seed {seed}: dPAS {:+.4}, SCS {:.4} vs null {:.4}",
            s.delta_pas, s.mean_scs, s.null_scs
        ));
    }
    pass(all, details.join("; "))
}

fn ablation_setup<'a>(train: &'a [Triplet], test: &'a [Triplet]) -> AblationSetup<'a> {
    AblationSetup {
        model: ModelConfig::standard(32),
        train: TrainConfig::default(),
        train_set: train,
        test_set: test,
        eval: EvalOptions::default(),
        seeds: vec![0, 1, 2],
        step_cap: 5000,
        warm_start: None,
    }
}

fn threshold_sweep() -> anyhow::Result<Outcome> {
    if !full_run() {
        return skip("needs AESTHETE_ACCEPTANCE_FULL=1 (9 x 5,000 standard-model updates)");
    }
    let (train, test) = default_split()?;
    let rows = ablation_ts(&ablation_setup(&train, &test), &[300, 600, 900])?;
    let trend = ts_scs_trend(&variant_means(&rows));
    let scs: Vec<f64> = trend.iter().map(|&(_, s)| s).collect();
    pass(
        nondecreasing_with_slack(&scs, TREND_SLACK),
        format!("seed-averaged SCS by t_s: {trend:?} (one inversion within {TREND_SLACK} allowed)"),
    )
}

fn map_ablation() -> anyhow::Result<Outcome> {
    if !full_run() {
        return skip("needs AESTHETE_ACCEPTANCE_FULL=1 (9 x 5,000 standard-model updates)");
    }
    let (train, test) = default_split()?;
    let means = variant_means(&ablation_map(&ablation_setup(&train, &test))?);
    let pattern = map_pattern(&means).ok_or_else(|| anyhow::anyhow!("missing variants"))?;
    let summary: Vec<String> = means
        .iter()
        .map(|(v, a)| format!("{v}: PAS {:.4}, SCS {:.4}", a.mean_pas_out, a.mean_scs))
        .collect();
    pass(pattern.holds(), format!("{}; {pattern:?}", summary.join("; ")))
}

fn tree(dir: &Path) -> anyhow::Result<Vec<(PathBuf, Vec<u8>)>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_owned()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir)?.to_owned(), fs::read(&p)?));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn reproducibility() -> anyhow::Result<Outcome> {
    let tmp = tempfile::tempdir()?;
    let root = tmp.path();
    let config = root.join("tiny.config");
    fs::write(
        &config,
        "model = tiny\nsteps = 100\ntrain_steps = 8\nbatch_size = 3\ntrain_triplets = 16\ntest_triplets = 4\n\
         gen_block = 100\nnum_sample_steps = 5\neval_seeds = 0,3\ndeterministic = true\n",
    )?;
    let run = |args: &[&str]| -> i32 {
        let mut argv = vec!["aesthete".to_string()];
        argv.extend(args.iter().map(|s| s.to_string()));
        argv.extend([
            "--config".into(),
            config.display().to_string(),
            "--data".into(),
            root.join("data").display().to_string(),
        ]);
        aesthete::cli::run(argv)
    };
    let train_dir = root.join("train");
    for args in [
        vec!["dataset", "gen"],
        vec!["pairs", "form"],
        vec!["train", "--out", train_dir.to_str().unwrap()],
    ] {
        anyhow::ensure!(run(&args) == 0, "`{}` failed", args.join(" "));
    }
    let ckpt = train_dir.join("final.diae");
    let mut identical = Vec::new();
    for cmd in ["eval", "sample"] {
        let out = root.join(cmd);
        let first = root.join(format!("{cmd}_first"));
        let args = [cmd, "--checkpoint", ckpt.to_str().unwrap(), "--out", out.to_str().unwrap()];
        anyhow::ensure!(run(&args) == 0, "{cmd} failed");
        fs::rename(&out, &first)?;
        anyhow::ensure!(run(&args) == 0, "{cmd} failed");
        let (a, b) = (tree(&first)?, tree(&out)?);
        identical.push((cmd, a.len(), a == b));
    }
    let bytes = fs::read(&ckpt)?;
    let resaved = Checkpoint::from_bytes(&bytes)?.to_bytes()?;
    let path2 = root.join("resaved.diae");
    Checkpoint::load(&ckpt)?.save(&path2)?;
    let ckpt_same = resaved == bytes && fs::read(&path2)? == bytes;
    let files_same = identical.iter().all(|&(_, n, same)| same && n > 2);
    pass(
        files_same && ckpt_same,
        format!("repeated runs (command, files, identical): {identical:?}; checkpoint save/load/save identical: {ckpt_same}"),
    )
}

type Criterion = (u32, &'static str, fn() -> anyhow::Result<Outcome>);

fn main() {
    let criteria: [Criterion; 11] = [
        (1, "gradient fidelity", gradient_fidelity),
        (2, "schedule and forward process", schedule_and_forward),
        (3, "zero-init identity", zero_init),
        (4, "fold semantics", fold_semantics),
        (5, "lambda = 0 equivalence", lambda_zero_equivalence),
        (6, "pairing rules", pairing_rules),
        (7, "HSV, contour and Sobel maps", color_and_contour_maps),
        (8, "end-to-end improvement", end_to_end),
        (9, "t_s sweep consistency trend", threshold_sweep),
        (10, "conditioning ablation pattern", map_ablation),
        (11, "reproducibility", reproducibility),
    ];
    let only: Option<BTreeSet<u32>> = std::env::var("AESTHETE_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let (mut passed, mut failed, mut skipped) = (0, 0, 0);
    for (id, name, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = check().unwrap_or_else(|e| Outcome {
            passed: Some(false),
            detail: format!("error: {e:#}"),
        });
        let tag = match outcome.passed {
            Some(true) => {
                passed += 1;
                "PASS"
            }
            Some(false) => {
                failed += 1;
                "FAIL"
            }
            None => {
                skipped += 1;
                "SKIP"
            }
        };
        println!(
            "[{tag}] {id:>2} {name}: {} ({:.1}s)",
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {passed} passed, {failed} failed, {skipped} skipped");
    let strict = std::env::var("AESTHETE_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
