//! End-to-end tests of the `hrf` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_hrf");

const TINY_TRAIN: &str = r#"
[train]
depth = 2
iterations = 30
batch_size = 64
log_every = 10
dataset_size = 0
net = { depth = 2, space_dim = 1, embed_dim = 8, space_width = 8, hidden_dims = [16] }
"#;

struct Run {
    dir: tempfile::TempDir,
}

impl Run {
    fn new() -> Self {
        Run {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn config(&self, name: &str, body: &str) -> PathBuf {
        let path = self.dir.path().join(name);
        fs::write(&path, format!("schema_version = 1\nname = \"test\"\n{body}")).unwrap();
        path
    }

    fn hrf(&self, command: &str, config: &Path, extra: &[&str]) -> Output {
        Command::new(BIN)
            .arg(command)
            .arg("--config")
            .arg(config)
            .arg("--out")
            .arg(self.out())
            .args(extra)
            .output()
            .unwrap()
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect()
}

fn assert_manifest_complete(dir: &Path) {
    let listed: Vec<String> = manifest(dir)["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "manifest.json" {
                files.push(p.strip_prefix(dir).unwrap().to_string_lossy().replace('\\', "/"));
            }
        }
    }
    files.sort();
    assert_eq!(listed, files);
}

#[test]
fn train_sample_eval_pipeline() {
    let run = Run::new();
    let cfg = run.config(
        "c.toml",
        &format!("{TINY_TRAIN}\n[data]\nfixture = \"1n-2n\"\n[sample]\nn = 1000\nschedule = [5, 20]\nrecord_trajectories = true\nmax_trajectories = 7\n[eval]\nn_target = 2000\n"),
    );
    let o = run.hrf("train", &cfg, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(run.out().join("model.ckpt").exists());
    assert_eq!(csv_rows(&run.out().join("loss.csv")).len(), 3);
    assert_manifest_complete(&run.out());

    let o = run.hrf("sample", &cfg, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(csv_rows(&run.out().join("samples.csv")).len(), 1000);
    let m = manifest(&run.out());
    assert_eq!(m["summary"]["nfe_per_sample"], 100);
    assert_eq!(m["command"], "sample");
    let traj = csv_rows(&run.out().join("trajectories.csv"));
    assert_eq!(traj.len(), 7 * 6);
    assert!(traj.iter().filter(|r| r[0] == "0").count() == 6);
    assert_manifest_complete(&run.out());

    let o = run.hrf("eval", &cfg, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = csv_rows(&run.out().join("metrics.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "w1");
    assert!(rows[0][1].parse::<f64>().unwrap().is_finite());
    assert_manifest_complete(&run.out());
}

#[test]
fn training_is_reproducible_byte_for_byte() {
    let run = Run::new();
    let cfg = run.config("c.toml", &format!("{TINY_TRAIN}\n[data]\nfixture = \"1n-2n\"\n"));
    assert_eq!(code(&run.hrf("train", &cfg, &["--seed", "5"])), 0);
    let first = fs::read(run.out().join("model.ckpt")).unwrap();
    let first_loss = fs::read(run.out().join("loss.csv")).unwrap();
    assert_eq!(code(&run.hrf("train", &cfg, &["--seed", "5"])), 0);
    assert_eq!(first, fs::read(run.out().join("model.ckpt")).unwrap());
    assert_eq!(first_loss, fs::read(run.out().join("loss.csv")).unwrap());
    assert_eq!(code(&run.hrf("train", &cfg, &["--seed", "6"])), 0);
    assert_ne!(first, fs::read(run.out().join("model.ckpt")).unwrap());
}

#[test]
fn eval_is_deterministic_and_self_distance_is_small() {
    let run = Run::new();
    let samples = run.dir.path().join("target.csv");
    {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let pts = hrf::fixtures::two_modes().sample(100_000, &mut rng);
        hrf::cli::output::write_points(&samples, &pts, 1).unwrap();
    }
    let cfg = run.config(
        "c.toml",
        &format!(
            "[data]\nfixture = \"1n-2n\"\n[eval]\nsamples = \"{}\"\n",
            samples.display()
        ),
    );
    assert_eq!(code(&run.hrf("eval", &cfg, &[])), 0);
    let first = fs::read(run.out().join("metrics.csv")).unwrap();
    assert_eq!(code(&run.hrf("eval", &cfg, &[])), 0);
    assert_eq!(first, fs::read(run.out().join("metrics.csv")).unwrap());
    let w1: f64 = csv_rows(&run.out().join("metrics.csv"))[0][1].parse().unwrap();
    assert!(w1 <= 0.01, "self-distance {w1}");
}

#[test]
fn configuration_errors_exit_with_two() {
    let run = Run::new();
    let no_target = run.config("a.toml", TINY_TRAIN);
    let o = run.hrf("train", &no_target, &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("missing target"), "{}", stderr(&o));

    let unknown = run.config("b.toml", "[data]\nfixture = \"1n-2n\"\nsurprise = 1\n");
    assert_eq!(code(&run.hrf("train", &unknown, &[])), 2);

    let bad_version = run.dir.path().join("v.toml");
    fs::write(&bad_version, "schema_version = 99\n").unwrap();
    assert_eq!(code(&run.hrf("train", &bad_version, &[])), 2);

    let missing = run.dir.path().join("nope.toml");
    assert_eq!(code(&run.hrf("train", &missing, &[])), 2);

    let o = Command::new(BIN).args(["train"]).output().unwrap();
    assert_eq!(code(&o), 2);
    let o = Command::new(BIN)
        .args(["frobnicate", "--config", "x"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn input_mismatches_exit_with_two() {
    let run = Run::new();
    let base = format!("{TINY_TRAIN}\n[data]\nfixture = \"1n-2n\"\n");
    let cfg = run.config("c.toml", &base);
    assert_eq!(code(&run.hrf("train", &cfg, &[])), 0);

    let wrong_depth = run.config("d.toml", &format!("{base}\n[sample]\nschedule = [100]\n"));
    assert_eq!(code(&run.hrf("sample", &wrong_depth, &[])), 2);

    let empty = run.dir.path().join("empty.csv");
    fs::write(&empty, "dim0\n").unwrap();
    let cfg_empty = run.config(
        "e.toml",
        &format!("{base}\n[eval]\nsamples = \"{}\"\n", empty.display()),
    );
    assert_eq!(code(&run.hrf("eval", &cfg_empty, &[])), 2);

    let two_d = run.dir.path().join("two_d.csv");
    fs::write(&two_d, "dim0,dim1\n0.1,0.2\n").unwrap();
    let cfg_dim = run.config(
        "f.toml",
        &format!("{base}\n[eval]\nsamples = \"{}\"\n", two_d.display()),
    );
    assert_eq!(code(&run.hrf("eval", &cfg_dim, &[])), 2);

    let t_one = run.config("g.toml", &format!("{base}\n[density]\nestimator = \"alg4\"\nn_points = 2\nalg4 = {{ t = {{ mode = \"fixed\", value = 1.0 }} }}\n"));
    assert_eq!(code(&run.hrf("density", &t_one, &[])), 2);

    let bad_grid = run.config(
        "h.toml",
        &format!("{base}\n[ablate]\nschedules = [[5, 20], [10, 5]]\nn_models = 1\n"),
    );
    let o = run.hrf("ablate", &bad_grid, &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("budget"), "{}", stderr(&o));
}

#[test]
fn density_requires_depth_two_and_warns_near_one() {
    let run = Run::new();
    let depth_one = run.config(
        "one.toml",
        "[data]\nfixture = \"1n-2n\"\n[train]\ndepth = 1\niterations = 5\nbatch_size = 32\nnet = { depth = 1, space_dim = 1, embed_dim = 8, space_width = 8, hidden_dims = [8] }\n",
    );
    assert_eq!(code(&run.hrf("train", &depth_one, &[])), 0);
    assert_eq!(code(&run.hrf("density", &depth_one, &[])), 2);

    let cfg = run.config(
        "two.toml",
        &format!("{TINY_TRAIN}\n[data]\nfixture = \"1n-2n\"\n[density]\nestimator = \"alg4\"\nn_points = 2\nalg4 = {{ n_rho = 20, t = {{ mode = \"fixed\", value = 0.99 }} }}\n"),
    );
    assert_eq!(code(&run.hrf("train", &cfg, &[])), 0);
    let o = run.hrf("density", &cfg, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("warning"));
    let rows = csv_rows(&run.out().join("density.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][4], "alg4-t");
    assert!(manifest(&run.out())["summary"]["mean_bpd"]
        .as_f64()
        .unwrap()
        .is_finite());

    let alg3 = run.config(
        "three.toml",
        &format!("{TINY_TRAIN}\n[data]\nfixture = \"1n-2n\"\n[density]\nn_points = 3\nalg3 = {{ pin_z0 = true }}\n"),
    );
    let o = run.hrf("density", &alg3, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(csv_rows(&run.out().join("density.csv")).len(), 3);
    assert_manifest_complete(&run.out());
}

#[test]
fn diverging_training_exits_with_three() {
    let run = Run::new();
    let cfg = run.config(
        "c.toml",
        "[data]\nfixture = \"1n-2n\"\n[train]\niterations = 200\nbatch_size = 32\nlr = 1e200\nnet = { depth = 2, space_dim = 1, embed_dim = 8, space_width = 8, hidden_dims = [8] }\n",
    );
    let o = run.hrf("train", &cfg, &[]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("iteration"));
}

#[test]
fn velocity_check_reports_every_point() {
    let run = Run::new();
    let cfg = run.config(
        "c.toml",
        "[data]\nfixture = \"1n-2n\"\n[velocity_check]\nn_accept = 2000\nwindow = 0.05\nbins = 20\npoints = [[-1.0, 0.0], [0.0, 0.4], [0.5, 0.6], [1.0, 1.0], [40.0, 1.0]]\n",
    );
    let o = run.hrf("velocity-check", &cfg, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let l1 = csv_rows(&run.out().join("velocity_l1.csv"));
    assert_eq!(l1.len(), 5);
    assert_eq!(l1[4][2], "undefined");
    assert!(l1[..4].iter().all(|r| r[2] == "ok"));
    let pdf = csv_rows(&run.out().join("velocity_pdf.csv"));
    assert_eq!(pdf.len(), 4 * 20);
    let mut blocks: Vec<(String, String)> = pdf.iter().map(|r| (r[0].clone(), r[1].clone())).collect();
    blocks.dedup();
    assert_eq!(blocks.len(), 4);
}

#[test]
fn ablate_writes_a_table_with_one_row_per_schedule() {
    let run = Run::new();
    let cfg = run.config(
        "c.toml",
        &format!(
            "{TINY_TRAIN}\n[data]\nfixture = \"2n-2n\"\n[ablate]\nschedules = [[1, 100], [2, 50], [5, 20], [10, 10], [20, 5], [50, 2], [100, 1]]\nn_models = 1\nn_eval_repeats = 1\nn_eval = 50\n"
        ),
    );
    let o = run.hrf("ablate", &cfg, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = csv::Reader::from_path(run.out().join("table1.csv"))
        .unwrap()
        .headers()
        .unwrap()
        .clone();
    assert_eq!(
        table.iter().collect::<Vec<_>>(),
        ["schedule", "nfe", "metric", "mean", "std", "n_models", "n_eval_repeats"]
    );
    let rows = csv_rows(&run.out().join("table1.csv"));
    assert_eq!(rows.len(), 7);
    assert!(rows.iter().all(|r| r[1] == "100" && r[4].is_empty()));
    assert_eq!(rows[2][0], "(5,20)");
    assert_eq!(csv_rows(&run.out().join("ablate_runs.csv")).len(), 7);
    assert_manifest_complete(&run.out());
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut count = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg =
                hrf::cli::config::ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.data.resolve().unwrap();
            cfg.train_config().unwrap();
            count += 1;
        }
    }
    assert!(count >= 4);
}
