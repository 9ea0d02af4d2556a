//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Runs without the libtest harness so the lines are always shown.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use common::{
    corpus, graph_of, neighbors_match_oracle, pair_distances, permuted, random_structure, same_pairs,
    sheared_basis, skewed_structure, small_model_config, translated,
};
use paraisite::cli::{cmd_matrix, cmd_pretrain, cmd_synth, cmd_train, ExperimentConfig, SYNTH_SEED};
use paraisite::data::{load_manifest, make_splits, TargetTransform};
use paraisite::eval::{evaluate_predictions, Stat};
use paraisite::graph::MaterialGraph;
use paraisite::model::{init_random, ModelConfig, ModelState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = small_model_config();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for k in 0..24 {
        // jitter every parameter so no ReLU pre-activation sits exactly on its
        // kink (zero biases plus a dead layer put them at exactly 0)
        let mut model = init_random(&cfg, k).unwrap();
        for t in model.params.tensors.iter_mut() {
            t.value.mapv_inplace(|x| x + rng.gen_range(-0.1..0.1));
        }
        let mut g = graph_of(&random_structure(&mut rng, 1 + (k as usize) % 10, "g"), &cfg);
        g.state = vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        if g.n_nodes() > 10 {
            return Err(format!("graph with {} nodes", g.n_nodes()));
        }
        let t = rng.gen_range(0.5..3.0) * if rng.gen() { 1.0 } else { -1.0 };
        let batch: [(&MaterialGraph, f64); 1] = [(&g, t)];
        let (_, grads) = model.loss_and_gradients(&batch).unwrap();
        let loss_at = |m: &ModelState| m.loss_and_gradients(&batch).unwrap().0;
        let mut probe = model.clone();
        for (ti, tensor) in model.params.tensors.iter().enumerate() {
            for idx in 0..tensor.value.len() {
                let x = tensor.value.as_slice().unwrap()[idx];
                probe.params.tensors[ti].value.as_slice_mut().unwrap()[idx] = x + h;
                let plus = loss_at(&probe);
                probe.params.tensors[ti].value.as_slice_mut().unwrap()[idx] = x - h;
                let minus = loss_at(&probe);
                probe.params.tensors[ti].value.as_slice_mut().unwrap()[idx] = x;
                let fd = (plus - minus) / (2.0 * h);
                let an = grads.tensors[ti].value.as_slice().unwrap()[idx];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                worst = worst.max(rel);
                checked += 1;
            }
        }
    }
    let el = start.elapsed();
    check(
        worst < 1e-4 && el < Duration::from_secs(60),
        format!("24 graphs, {checked} parameter checks, max rel err {worst:.2e}, {}", secs(el)),
    )
}

fn invariance() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let cfg = ModelConfig::default();
    let model = init_random(&cfg, 42).unwrap();
    let structures = corpus(&mut rng);
    let (mut perm, mut sup) = (0.0f64, 0.0f64);
    let mut neighbors_ok = true;
    for s in &structures {
        let g = graph_of(s, &cfg);
        let y = model.forward(&g).unwrap();
        perm = perm.max((y - model.forward(&permuted(&g, &mut rng)).unwrap()).abs());
        let big = s.supercell([2, 1, 1]).unwrap();
        sup = sup.max((y - model.forward(&graph_of(&big, &cfg)).unwrap()).abs());
        let base = pair_distances(s, 6.0);
        let shifts: Vec<[f64; 3]> = (0..s.len())
            .map(|_| [rng.gen_range(-2..=2) as f64, rng.gen_range(-2..=2) as f64, rng.gen_range(-2..=2) as f64])
            .collect();
        let rigid = vec![[rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()]; s.len()];
        neighbors_ok &= same_pairs(&base, &pair_distances(&translated(s, &shifts), 6.0), 1e-9)
            && same_pairs(&base, &pair_distances(&translated(s, &rigid), 6.0), 1e-9)
            && same_pairs(&base, &pair_distances(&sheared_basis(s), 6.0), 1e-9);
    }
    let has_nacl = structures.iter().any(|s| s.source_id() == "NaCl");
    check(
        perm <= 1e-10 && sup <= 1e-6 && neighbors_ok && has_nacl && structures.len() == 10,
        format!(
            "10 structures: permutation {perm:.1e}, supercell 2x1x1 {sup:.1e}, neighbor translation {}, {}",
            if neighbors_ok { "ok" } else { "MISMATCH" },
            secs(start.elapsed())
        ),
    )
}

fn neighbor_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut pairs = 0;
    for k in 0..50 {
        let n = rng.gen_range(1..=8);
        let s = skewed_structure(&mut rng, n, &format!("cell{k}"));
        let cutoff = rng.gen_range(2.0..=8.0);
        neighbors_match_oracle(&s, cutoff)?;
        pairs += pair_distances(&s, cutoff).len();
    }
    Ok(format!("50 cells, {pairs} directed pairs identical, distances within 1e-9"))
}

fn transform_and_splits() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let values: Vec<f64> = (0..10_000).map(|_| 10f64.powf(rng.gen_range(-2.0..3.0))).collect();
    let t = TargetTransform::fit(values.iter().copied(), "r").unwrap();
    let round = values
        .iter()
        .map(|&k| (t.invert(t.apply(k)) - k).abs() / k)
        .fold(0.0f64, f64::max);
    let t3 = TargetTransform::fit([1.0, 10.0, 100.0], "c").unwrap();
    // ln values 0, L, 2L with L = ln 10: mean L, population std L·sqrt(2/3)
    let z = 1.5f64.sqrt();
    let got = [1.0, 10.0, 100.0].map(|k| t3.apply(k));
    let case = (got[0] + z).abs() < 1e-6 && got[1].abs() < 1e-12 && (got[2] - z).abs() < 1e-6;
    let plan = make_splits(96, 42).unwrap();
    let splits_ok = plan.splits.len() == 9
        && plan.splits.iter().all(|s| {
            let mut all: Vec<usize> = s.train.iter().chain(&s.validation).copied().collect();
            all.sort_unstable();
            s.train.len() == 76 && s.validation.len() == 20 && all == (0..96).collect::<Vec<_>>()
        });
    check(
        round <= 1e-10 && case && splits_ok,
        format!(
            "round-trip max rel {round:.1e}; {{1,10,100}} -> [{:.6}, {:.6}, {:.6}]; 9 splits of 96 {}",
            got[0],
            got[1],
            got[2],
            if splits_ok { "are 76/20 partitions" } else { "WRONG" }
        ),
    )
}

fn tree_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(tree_bytes(&p));
        } else {
            out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
        }
    }
    out.sort();
    out
}

fn determinism(root: &Path) -> Outcome {
    let data = root.join("det");
    cmd_synth(60, 20, 20, SYNTH_SEED, &data).map_err(|e| e.to_string())?;
    let conf = data.join("det.conf");
    std::fs::write(&conf, "dataset1 = dataset1.csv\nmodel.n_blocks = 2\ntrain.epochs = 5\n").unwrap();
    let mut outputs: Vec<Vec<(PathBuf, Vec<u8>)>> = Vec::new();
    for run in ["a", "b"] {
        let out = root.join(format!("det_{run}"));
        let status = Command::new(env!("CARGO_BIN_EXE_paraisite"))
            .env("RUST_LOG", "error")
            .arg("--config")
            .arg(&conf)
            .arg("--out")
            .arg(&out)
            .args(["--seed", "42", "train", "--step", "1", "--dataset", "dataset1"])
            .stdout(std::process::Stdio::null())
            .status()
            .map_err(|e| e.to_string())?;
        if !status.success() {
            return Err(format!("train exited with {status}"));
        }
        outputs.push(tree_bytes(&out.join("runs")));
    }
    // checkpoints and curve CSVs; the text manifests record the differing paths
    for o in outputs.iter_mut() {
        o.retain(|(p, _)| p.extension().is_some_and(|e| e == "pai" || e == "csv"));
    }
    let n_ckpt = outputs[0].iter().filter(|(p, _)| p.extension().is_some_and(|e| e == "pai")).count();
    let n_csv = outputs[0].iter().filter(|(p, _)| p.extension().is_some_and(|e| e == "csv")).count();
    check(
        outputs[0] == outputs[1] && n_ckpt == 9,
        format!("two runs: {n_ckpt} checkpoints and {n_csv} curve CSVs bit-identical = {}", outputs[0] == outputs[1]),
    )
}

/// Best validation MAPE and best epoch of each split of a run directory.
fn read_run(dir: &Path) -> Vec<(f64, usize)> {
    (0..9)
        .map(|i| {
            let text = std::fs::read_to_string(dir.join(format!("split_{i}.txt"))).unwrap();
            let get = |key: &str| text.lines().find_map(|l| l.strip_prefix(key)).unwrap().to_string();
            (get("best_val_mape=").parse().unwrap(), get("best_epoch=").parse().unwrap())
        })
        .collect()
}

/// Mean validation MAPE over the splits, per epoch.
fn mean_curve(dir: &Path) -> Vec<f64> {
    let text = std::fs::read_to_string(dir.join("curves.csv")).unwrap();
    text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect()
}

/// First (1-based) epoch at which `curve` is at most `level`.
fn epochs_to(curve: &[f64], level: f64) -> Option<usize> {
    curve.iter().position(|&v| v <= level).map(|e| e + 1)
}

struct Protocol {
    step1: Vec<(f64, usize)>,
    step2: Vec<(f64, usize)>,
    step3: Vec<(f64, usize)>,
    narrow1: Vec<(f64, usize)>,
    narrow3: Vec<(f64, usize)>,
    narrow_span: f64,
    converge: (Option<usize>, Option<usize>),
    elapsed: Duration,
}

fn stat(runs: &[(f64, usize)]) -> Stat {
    Stat::of(&runs.iter().map(|r| r.0).collect::<Vec<_>>())
}

/// The synthetic two-fidelity experiment exactly as `synth` configures it:
/// dataset1 n=150, narrow dataset2 n=150, lowfid n=2000, 100 epochs, 2 blocks.
fn run_protocol(root: &Path) -> Result<Protocol, String> {
    let start = Instant::now();
    let dir = root.join("protocol");
    let e = |x: paraisite::cli::CliError| x.to_string();
    cmd_synth(150, 150, 2000, SYNTH_SEED, &dir).map_err(e)?;
    let c = ExperimentConfig::load(&dir.join("experiment.conf")).map_err(e)?;
    c.validate().map_err(e)?;
    let s1 = cmd_train(&c, 1, "dataset1").map_err(e)?;
    cmd_pretrain(&c).map_err(e)?;
    let s2 = cmd_train(&c, 2, "dataset1").map_err(e)?;
    let s3 = cmd_train(&c, 3, "dataset1").map_err(e)?;
    let n1 = cmd_train(&c, 1, "dataset2").map_err(e)?;
    let n3 = cmd_train(&c, 3, "dataset2").map_err(e)?;
    let (lo, hi) = load_manifest(c.dataset2.as_ref().unwrap()).map_err(|x| x.to_string())?.ltc_range().unwrap();
    let step1 = read_run(&s1);
    let (c1, c2) = (mean_curve(&s1), mean_curve(&s2));
    let level = 1.05 * c1.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(Protocol {
        step1,
        step2: read_run(&s2),
        step3: read_run(&s3),
        narrow1: read_run(&n1),
        narrow3: read_run(&n3),
        narrow_span: hi / lo,
        converge: (epochs_to(&c1, level), epochs_to(&c2, level)),
        elapsed: start.elapsed(),
    })
}

fn protocol(p: &Protocol) -> Outcome {
    let (a, b, c) = (stat(&p.step1), stat(&p.step2), stat(&p.step3));
    let gain = (a.mean - c.mean) / a.mean;
    // noise: two standard errors of the difference of two 9-run means
    let noise = 2.0 * ((a.std * a.std + b.std * b.std) / 9.0).sqrt();
    let ok = gain >= 0.20 && b.mean <= a.mean + noise && p.elapsed < Duration::from_secs(15 * 60);
    let fmt = |e: Option<usize>| e.map_or("never".to_string(), |e| e.to_string());
    check(
        ok,
        format!(
            "mean best val MAPE step1 {a}, step2 {b}, step3 {c}; step3 gain {:.1}% (need >= 20%); \
             step2 - step1 = {:+.4} (noise 2se = {noise:.4}); epochs for the mean curve to reach 1.05x step1's minimum: \
             step1 {}, step2 {}; {}",
            100.0 * gain,
            b.mean - a.mean,
            fmt(p.converge.0),
            fmt(p.converge.1),
            secs(p.elapsed)
        ),
    )
}

fn narrow(p: &Protocol) -> Outcome {
    let early = p.narrow3.iter().filter(|r| r.1 < 50).count();
    let epochs: Vec<usize> = p.narrow3.iter().map(|r| r.1).collect();
    check(
        early >= 5 && p.narrow_span < 10.0,
        format!(
            "targets span {:.2}x; step3 best epochs {epochs:?}: {early}/9 before epoch 50 (need >= 5); \
             step1 {} vs step3 {}",
            p.narrow_span,
            stat(&p.narrow1),
            stat(&p.narrow3)
        ),
    )
}

fn matrix(root: &Path) -> Outcome {
    // hand-built oracle: identity-on-ln transform, two models, two targets
    let tr = TargetTransform::new(0.0, 1.0, "A").unwrap();
    let e = std::f64::consts::E;
    let raw = vec![vec![e, e * e]; 2];
    let preds = vec![vec![1.0, 1.0], vec![2.0, 2.0]];
    let (t, r) = evaluate_predictions(&preds, &[tr.clone(), tr], &raw, 1e-2).map_err(|x| x.to_string())?;
    let (t0, t1) = (0.25, 0.5);
    let (r0, r1) = ((1.0 - 1.0 / e) / 2.0, (e - 1.0) / 2.0);
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * y.abs().max(1.0);
    let oracle = close(t.mean, (t0 + t1) / 2.0)
        && close(t.std, (t1 - t0) / 2.0)
        && close(r.mean, (r0 + r1) / 2.0)
        && close(r.std, (r1 - r0) / 2.0);

    let dir = root.join("matrix");
    let e = |x: paraisite::cli::CliError| x.to_string();
    cmd_synth(30, 30, 30, SYNTH_SEED, &dir).map_err(e)?;
    let conf = dir.join("tiny.conf");
    std::fs::write(
        &conf,
        "dataset1 = dataset1.csv\ndataset2 = dataset2.csv\nlowfid = lowfid.csv\n\
         graph.n_centers = 12\nmodel.embed_dim = 4\nmodel.n_blocks = 1\nmodel.block_hidden = 6\n\
         model.head_layers = 8\ntrain.epochs = 2\n",
    )
    .unwrap();
    let c = ExperimentConfig::load(&conf).map_err(e)?;
    cmd_pretrain(&c).map_err(e)?;
    let mut shapes = Vec::new();
    for step in 1..=3u8 {
        for d in ["dataset1", "dataset2", "mix", "lowfid"] {
            if !(step == 3 && d == "lowfid") {
                cmd_train(&c, step, d).map_err(e)?;
            }
        }
        let csv = std::fs::read_to_string(cmd_matrix(&c, step).map_err(e)?).unwrap();
        let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
        let distinct = |k: usize| {
            let mut v: Vec<&str> = rows.iter().map(|r| r[k]).collect();
            v.sort_unstable();
            v.dedup();
            v.len()
        };
        let per_scale = rows.iter().filter(|r| r[3] == "raw").count();
        shapes.push((distinct(1), distinct(2), per_scale));
    }
    let ok = oracle && shapes == [(4, 4, 16), (4, 4, 16), (3, 4, 12)];
    check(
        ok,
        format!(
            "2x2 oracle {}; matrix shapes (train x test, cells per scale) step1 {:?}, step2 {:?}, step3 {:?}",
            if oracle { "matches" } else { "MISMATCH" },
            shapes[0],
            shapes[1],
            shapes[2]
        ),
    )
}

fn main() {
    let root = tempfile::tempdir().expect("temp dir");
    let mut results: Vec<(&str, Outcome)> = vec![
        ("gradient correctness", gradients()),
        ("invariance suite", invariance()),
        ("neighbor oracle", neighbor_oracle()),
        ("transform and split contracts", transform_and_splits()),
        ("determinism", determinism(root.path())),
    ];
    match run_protocol(root.path()) {
        Ok(p) => {
            results.push(("two-fidelity protocol", protocol(&p)));
            results.push(("narrow-dataset early overfitting", narrow(&p)));
        }
        Err(e) => {
            results.push(("two-fidelity protocol", Err(e.clone())));
            results.push(("narrow-dataset early overfitting", Err(e)));
        }
    }
    results.push(("matrix machinery", matrix(root.path())));

    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(d) => println!("PASS {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL {name}: {d}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
