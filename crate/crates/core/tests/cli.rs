use std::path::{Path, PathBuf};
use std::process::Command;

use paraisite::cli::{cmd_matrix, cmd_synth, cmd_train, ExperimentConfig};
use paraisite::data::{load_manifest, make_splits, GraphDataset};
use paraisite::eval::cross_eval;
use paraisite::model::load;

const SMALL: &str = "graph.n_centers = 12\n\
                     model.embed_dim = 4\n\
                     model.n_blocks = 1\n\
                     model.block_hidden = 6\n\
                     model.head_layers = 8\n\
                     train.epochs = 2\n";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_paraisite"))
}

fn code(cmd: &mut Command) -> i32 {
    cmd.env("RUST_LOG", "error").output().unwrap().status.code().unwrap()
}

/// Synthetic corpus under `dir` plus a small-model config; returns the config path.
fn setup(dir: &Path, n: usize, extra: &str) -> PathBuf {
    cmd_synth(n, n, n, 7, dir).unwrap();
    let conf = dir.join("small.conf");
    std::fs::write(
        &conf,
        format!("dataset1 = dataset1.csv\ndataset2 = dataset2.csv\nlowfid = lowfid.csv\nout = out\n{SMALL}{extra}"),
    )
    .unwrap();
    conf
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn synth_outputs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cmd_synth(200, 20, 30, 5, a.path()).unwrap();
    cmd_synth(200, 20, 30, 5, b.path()).unwrap();
    assert_eq!(files(a.path()), files(b.path()));
    let m = load_manifest(&a.path().join("dataset1.csv")).unwrap();
    assert_eq!(m.len(), 200);
    assert!(m.rows.iter().all(|r| r.ltc > 0.0));
    // narrow dataset spans less than a decade
    let (lo, hi) = load_manifest(&a.path().join("dataset2.csv")).unwrap().ltc_range().unwrap();
    assert!(hi / lo < 10.0, "{lo}..{hi}");
    assert!(a.path().join("experiment.conf").is_file());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let conf = setup(dir.path(), 20, "");
    assert_eq!(code(bin().arg("--help")), 0);
    assert_eq!(code(bin().arg("--version")), 0);
    assert_eq!(code(&mut bin()), 1);
    assert_eq!(code(bin().args(["train", "--step", "4", "--dataset", "dataset1"])), 1);
    assert_eq!(code(bin().arg("ingest")), 1);
    assert_eq!(code(bin().arg("--config").arg(&conf).arg("ingest")), 0);
    assert_eq!(code(bin().arg("--config").arg(&conf).args(["train", "--step", "1", "--dataset", "nope"])), 1);
    assert_eq!(code(bin().arg("--config").arg(&conf).args(["train", "--step", "2", "--dataset", "dataset1"])), 1);
    assert_eq!(code(bin().arg("--config").arg(&conf).args(["train", "--step", "3", "--dataset", "lowfid"])), 1);
    assert_eq!(code(bin().arg("--config").arg(&conf).args(["matrix", "--step", "1"])), 1);

    let unknown = dir.path().join("unknown.conf");
    std::fs::write(&unknown, "dataset1 = dataset1.csv\ncolour = blue\n").unwrap();
    assert_eq!(code(bin().arg("--config").arg(&unknown).arg("ingest")), 1);
    let missing = dir.path().join("missing.conf");
    std::fs::write(&missing, "dataset1 = nowhere.csv\n").unwrap();
    assert_eq!(code(bin().arg("--config").arg(&missing).arg("ingest")), 1);

    // step 3 without a lowfid manifest
    let no_low = dir.path().join("nolow.conf");
    std::fs::write(&no_low, format!("dataset1 = dataset1.csv\n{SMALL}")).unwrap();
    assert_eq!(code(bin().arg("--config").arg(&no_low).args(["train", "--step", "3", "--dataset", "dataset1"])), 1);

    // a structure file that fails to parse is a data error
    let rows = std::fs::read_to_string(dir.path().join("dataset1.csv")).unwrap();
    let first = rows.lines().nth(1).unwrap().split(',').nth(1).unwrap().to_string();
    std::fs::write(dir.path().join(&first), "garbage\n").unwrap();
    assert_eq!(code(bin().arg("--config").arg(&conf).arg("ingest")), 2);
}

#[test]
fn train_writes_runs_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let conf = setup(dir.path(), 100, "");
    let c = ExperimentConfig::load(&conf).unwrap();
    let run = cmd_train(&c, 1, "dataset1").unwrap();
    for i in 0..9 {
        load(&run.join(format!("split_{i}.pai"))).unwrap();
    }
    let curves = std::fs::read(run.join("curves.csv")).unwrap();
    let again = cmd_train(&c, 1, "dataset1").unwrap();
    assert_eq!(run, again);
    assert_eq!(curves, std::fs::read(again.join("curves.csv")).unwrap());
    // a different seed lands in a different directory
    let other = ExperimentConfig::load(&conf).map(|mut c| {
        c.train.seed = 7;
        c
    });
    assert_ne!(cmd_train(&other.unwrap(), 1, "dataset1").unwrap(), run);
}

fn cells(csv: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(csv)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn matrix_shapes_and_values() {
    let dir = tempfile::tempdir().unwrap();
    let conf = setup(dir.path(), 30, "");
    let run = |args: &[&str]| assert_eq!(code(bin().arg("--config").arg(&conf).args(args)), 0, "{args:?}");
    for d in ["dataset1", "dataset2", "mix", "lowfid"] {
        run(&["train", "--step", "1", "--dataset", d]);
    }
    run(&["matrix", "--step", "1"]);
    let out = dir.path().join("out");
    let m1 = cells(&out.join("matrix_step1.csv"));
    for scale in ["transformed", "raw"] {
        assert_eq!(m1.iter().filter(|r| r[3] == scale).count(), 16);
    }

    // one cell against a direct cross_eval over validation split i
    let c = ExperimentConfig::load(&conf).unwrap();
    let runs = std::fs::read_dir(out.join("runs")).unwrap();
    let d2_run = runs
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_string_lossy().starts_with("step1_dataset2_"))
        .unwrap();
    let models: Vec<_> = (0..9).map(|i| load(&d2_run.join(format!("split_{i}.pai"))).unwrap()).collect();
    let m = load_manifest(c.dataset1.as_ref().unwrap()).unwrap().with_name("dataset1");
    let test = GraphDataset::from_manifest(&m, &c.graph).unwrap();
    let rows: Vec<Vec<usize>> = make_splits(test.len(), c.train.seed)
        .unwrap()
        .splits
        .into_iter()
        .map(|s| s.validation)
        .collect();
    let direct = cross_eval("step1", &models, &test, Some(&rows)).unwrap();
    let cell = m1
        .iter()
        .find(|r| r[1] == "dataset2" && r[2] == "dataset1" && r[3] == "raw")
        .unwrap();
    assert_eq!(cell[4].parse::<f64>().unwrap(), direct.mape_raw.mean);
    assert_eq!(cell[5].parse::<f64>().unwrap(), direct.mape_raw.std);

    run(&["pretrain-proxy"]);
    for d in ["dataset1", "dataset2", "mix"] {
        run(&["train", "--step", "3", "--dataset", d]);
    }
    let path = cmd_matrix(&c, 3).unwrap();
    let m3 = cells(&path);
    for scale in ["transformed", "raw"] {
        assert_eq!(m3.iter().filter(|r| r[3] == scale).count(), 12);
    }
    assert!(m3.iter().all(|r| r[1] != "lowfid"));
    run(&["report"]);
    assert!(out.join("report.txt").is_file());
}
