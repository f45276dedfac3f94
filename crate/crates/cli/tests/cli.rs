use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mosaic_core::dataio::{load_model, read_pair_file};
use mosaic_core::indep::DindepKind;
use mosaic_core::infer::infer_rule1;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_causal-mosaic"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &str = "[synth]\nn_per_pair = 200\n[mlp]\ndepth = 2\nhidden_width = 8\n[train]\nmax_steps = 150\nstandardization = \"pooled\"\n";

#[test]
fn gen_writes_identical_files_on_rerun() {
    let d = tempfile::tempdir().unwrap();
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    for dir in [&a, &b] {
        let o = run(&["gen", "--seed", "7", "--pairs", "10", "--out", p(dir)]);
        assert_eq!(o.status.code(), Some(0));
    }
    let names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 12);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap());
    }
}

#[test]
fn train_then_infer_matches_the_library() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("c.toml");
    fs::write(&cfg, SMALL).unwrap();
    let data = d.path().join("pairs");
    let model = d.path().join("m.bin");
    assert!(run(&["gen", "--seed", "3", "--pairs", "6", "--config", p(&cfg), "--out", p(&data)]).status.success());
    let o = run(&["train", p(&data), "--config", p(&cfg), "--out", p(&model)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let file = data.join("pair0002.txt");
    let o = run(&["infer", p(&file), "--model", p(&model)]);
    assert_eq!(o.status.code(), Some(0));
    let pair = read_pair_file(&file).unwrap();
    let m = load_model(&model).unwrap();
    let lib = infer_rule1(&m.hica_both(&pair.points).unwrap(), DindepKind::DcorComplement).unwrap();
    assert_eq!(stdout(&o).trim_end(), lib.results_line("pair0002"));
}

#[test]
fn thresholded_undecided_exits_two() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("c.toml");
    fs::write(&cfg, SMALL).unwrap();
    let data = d.path().join("pairs");
    let model = d.path().join("m.bin");
    run(&["gen", "--seed", "4", "--pairs", "5", "--config", p(&cfg), "--out", p(&data)]);
    run(&["train", p(&data), "--config", p(&cfg), "--out", p(&model)]);
    let o = run(&["infer", p(&data.join("pair0001.txt")), "--model", p(&model), "--rule", "thresholded"]);
    let line = stdout(&o);
    let verdict = line.split('\t').nth(2).unwrap();
    let expect = if verdict == "?" { 2 } else { 0 };
    assert_eq!(o.status.code(), Some(expect));
}

#[test]
fn errors_exit_one() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run(&["infer", "missing.txt", "--model", "missing.bin"]).status.code(), Some(1));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    let o = run(&["experiment-tcep"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("pairmeta.txt"));
    let o = run(&["experiment-tcep", p(&d.path().join("absent"))]);
    assert_eq!(o.status.code(), Some(1));
    let bad = d.path().join("bad.toml");
    fs::write(&bad, "[train]\nlearning_rat = 1\n").unwrap();
    assert_eq!(run(&["experiment-artificial", "--config", p(&bad)]).status.code(), Some(1));
    let garbled = d.path().join("g.txt");
    fs::write(&garbled, "1 2\n3 x\n").unwrap();
    assert_eq!(run(&["infer", p(&garbled), "--model", "m.bin"]).status.code(), Some(1));
}

#[test]
fn artificial_report_and_plot_data() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("c.toml");
    fs::write(
        &cfg,
        format!("{SMALL}[experiment]\nsettings = [\"multi_pair\"]\nrules = [\"rule1\"]\ntopologies = [\"structural\"]\nwidths = [40]\npair_counts = [10]\nmixings = 1\n"),
    )
    .unwrap();
    let out = d.path().join("r");
    let o = run(&["experiment-artificial", "--config", p(&cfg), "--seed", "1", "--out", p(&out)]);
    assert!(o.status.success());
    let report = fs::read_to_string(out.join("report.tsv")).unwrap();
    let rows: Vec<&str> = report.lines().filter(|l| l.starts_with("multi_pair")).collect();
    assert_eq!(rows.len(), 1);
    let acc: f64 = rows[0].split('\t').nth(6).unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    let plot = fs::read_to_string(out.join("plot.tsv")).unwrap();
    assert_eq!(plot.lines().count(), 2);
}

#[test]
fn ensemble_pool_serves_new_pairs() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("c.toml");
    fs::write(
        &cfg,
        format!("{SMALL}[ensemble]\nN = 4\nM = 1\nset_size = [2, 3]\nThreT = 0.0\nThreV = 0.0\n[ensemble.search]\ndepth = [2, 2]\nwidth = [8, 8]\nmax_steps = [100, 100]\n"),
    )
    .unwrap();
    let out = d.path().join("e");
    let o = run(&["ensemble", "--pseudo", "6", "--config", p(&cfg), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 7);
    let manifest = fs::read_to_string(out.join("manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 5);
    let data = d.path().join("pairs");
    run(&["gen", "--seed", "9", "--pairs", "3", "--config", p(&cfg), "--out", p(&data)]);
    let o = run(&["infer", p(&data.join("pair0001.txt")), "--pool", p(&out.join("pool.bin")), "--config", p(&cfg)]);
    assert!(matches!(o.status.code(), Some(0) | Some(2)));
    assert!(stdout(&o).contains("\tmosaic\t"));
}
