use std::fs;
use std::path::{Path, PathBuf};

use aesthete::checkpoint::Checkpoint;
use aesthete::cli::run;

const TINY: &str = "\
model = tiny
steps = 100
train_steps = 12
batch_size = 3
train_triplets = 24
test_triplets = 4
gen_block = 120
checkpoint_every = 6
log_every = 3
num_sample_steps = 4
eval_seeds = 0,7
";

struct Fixture {
    _tmp: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_owned();
        fs::write(root.join("tiny.config"), TINY).unwrap();
        let f = Self { _tmp: tmp, root };
        assert_eq!(f.run(&["dataset", "gen"]), 0);
        assert_eq!(f.run(&["pairs", "form"]), 0);
        f
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn run(&self, args: &[&str]) -> i32 {
        let config = self.path("tiny.config");
        let data = self.path("data");
        let mut argv: Vec<String> = vec!["aesthete".into()];
        argv.extend(args.iter().map(|s| s.to_string()));
        argv.extend([
            "--config".into(),
            config.display().to_string(),
            "--data".into(),
            data.display().to_string(),
        ]);
        run(argv)
    }
}

fn dir_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_owned()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_owned(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn pipeline_train_eval_sample_resume() {
    let f = Fixture::new();
    for name in ["dataset.config", "pairs.config", "train.jsonl", "test.jsonl", "triplets.jsonl"] {
        assert!(f.path("data").join(name).exists(), "{name}");
    }

    let run_dir = f.path("run");
    assert_eq!(f.run(&["train", "--out", &s(&run_dir)]), 0);
    for name in ["train.config", "metrics.csv", "step_000006.diae", "step_000012.diae", "final.diae"] {
        assert!(run_dir.join(name).exists(), "{name}");
    }
    let metrics = fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), "step,loss,l_ref,l_inp,lr");
    assert_eq!(metrics.lines().count(), 5);

    // the same eval or sample invocation twice: byte-identical outputs
    let ckpt = s(&run_dir.join("final.diae"));
    for cmd in ["eval", "sample"] {
        let (a, first) = (f.path(&format!("{cmd}_a")), f.path(&format!("{cmd}_first")));
        assert_eq!(f.run(&[cmd, "--checkpoint", &ckpt, "--out", &s(&a)]), 0);
        fs::rename(&a, &first).unwrap();
        assert_eq!(f.run(&[cmd, "--checkpoint", &ckpt, "--out", &s(&a)]), 0);
        let (da, db) = (dir_bytes(&first), dir_bytes(&a));
        assert!(da.len() > 2);
        assert!(da == db, "{cmd} outputs differ between runs");
    }
    let summary = fs::read_to_string(f.path("eval_a/summary.json")).unwrap();
    assert!(summary.contains("\"delta_pas\"") && summary.contains("\"bands\""));
    let csv = fs::read_to_string(f.path("eval_a/eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 4);
    assert_eq!(fs::read_dir(f.path("sample_a/samples/seed_7")).unwrap().count(), 4);

    // 6 steps, resume to 12: same parameters, optimizer state and metrics
    let part = f.path("part");
    assert_eq!(f.run(&["train", "--out", &s(&part), "--train-steps", "6"]), 0);
    let resume = s(&part.join("final.diae"));
    assert_eq!(f.run(&["train", "--resume", &resume, "--out", &s(&part), "--train-steps", "12"]), 0);
    let full = Checkpoint::load(&run_dir.join("final.diae")).unwrap();
    let resumed = Checkpoint::load(&part.join("final.diae")).unwrap();
    assert_eq!(full.params, resumed.params);
    assert_eq!(full.optimizer, resumed.optimizer);
    assert_eq!(metrics, fs::read_to_string(part.join("metrics.csv")).unwrap());

    // a checkpoint never loads into a differently shaped model
    assert_eq!(
        f.run(&["eval", "--checkpoint", &ckpt, "--out", &s(&f.path("bad")), "--set", "model=standard"]),
        1
    );
    assert_eq!(
        f.run(&["eval", "--checkpoint", &ckpt, "--out", &s(&f.path("bad")), "--steps", "200"]),
        1
    );
}

#[test]
fn usage_and_config_errors() {
    assert_eq!(run(["aesthete", "bogus"]), 2);
    assert_eq!(run(["aesthete"]), 2);
    assert_eq!(run(["aesthete", "ablate", "nothing"]), 2);
    assert_eq!(run(["aesthete", "train", "--t-s", "2000", "--data", "/nonexistent"]), 1);
    assert_eq!(run(["aesthete", "train", "--set", "colour=red"]), 1);
    assert_eq!(run(["aesthete", "eval", "--data", "/nonexistent"]), 1);
}

#[test]
fn pairs_must_live_next_to_the_corpus() {
    let f = Fixture::new();
    assert_eq!(f.run(&["pairs", "form", "--out", &s(&f.path("elsewhere"))]), 1);
    assert_eq!(f.run(&["pairs", "form", "--set", "train_triplets=100000"]), 1);
}

#[test]
fn ablation_commands_write_grids() {
    let f = Fixture::new();
    let ablate = |kind: &str, out: &Path, extra: &[&str]| {
        let out = s(out);
        let mut args = vec!["ablate", kind, "--out", &out, "--train-steps", "2"];
        args.extend(["--set", "ablation_seeds=0,1", "--set", "eval_limit=2", "--set", "eval_seeds=0"]);
        args.extend(extra);
        f.run(&args)
    };

    let out = f.path("ts");
    assert_eq!(ablate("ts", &out, &[]), 0);
    let grid = fs::read_to_string(out.join("ablate_ts.csv")).unwrap();
    let variants: Vec<&str> = grid.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(variants, ["t_s=30", "t_s=30", "t_s=60", "t_s=60", "t_s=90", "t_s=90"]);
    assert!(out.join("verdict.txt").exists() && out.join("ablate_ts.config").exists());

    let out = f.path("map");
    assert_eq!(ablate("map", &out, &[]), 0);
    let grid = fs::read_to_string(out.join("ablate_map.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 3 * 2);

    assert_eq!(ablate("map", &f.path("capped"), &["--set", "step_cap=1"]), 1);
}
