use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use simignore::manifest::RunManifest;
use simignore::tensor_file::{read_tensor, write_tensor, Tensor};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_simignore"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth_dir(side: usize, extra: &[&str]) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let side = side.to_string();
    let mut args = vec![
        "synth",
        "--out-dir",
        dir.path().to_str().unwrap(),
        "--side",
        &side,
        "--seed",
        "3",
    ];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = dir.path().join("manifest.json");
    (dir, manifest)
}

fn small() -> (tempfile::TempDir, PathBuf) {
    synth_dir(
        6,
        &[
            "--n-sys", "3", "--n-usr", "5", "--dim", "8", "--ignore", "10",
        ],
    )
}

fn out(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn csv_rows(path: &str) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    assert!(!text.contains('\r'));
    text.lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn select_lists_every_token_by_descending_score() {
    let (dir, m) = small();
    let path = out(dir.path(), "sel.csv");
    let o = run(&["select", "--manifest", m.to_str().unwrap(), "--out", &path]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&path);
    assert_eq!(rows[0], ["image_index", "score", "kept"]);
    assert_eq!(rows.len(), 37);
    let scores: Vec<f64> = rows[1..].iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    let kept = rows[1..].iter().filter(|r| r[2] == "1").count();
    assert_eq!(kept, 26);
    // the kept tokens are the top of the list
    assert!(rows[1..27].iter().all(|r| r[2] == "1"));

    let o = run(&[
        "select",
        "--manifest",
        m.to_str().unwrap(),
        "--out",
        &path,
        "--keep",
        "36",
    ]);
    assert!(o.status.success());
    assert!(csv_rows(&path)[1..].iter().all(|r| r[2] == "1"));
}

#[test]
fn mask_with_nothing_ignored_is_all_ones() {
    let (dir, m) = small();
    let path = out(dir.path(), "mask.sigt");
    let o = run(&[
        "mask",
        "--manifest",
        m.to_str().unwrap(),
        "--out",
        &path,
        "--ignore",
        "0",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let t = read_tensor(&path).unwrap();
    assert_eq!(t.dims, vec![44]);
    assert!(t.data.iter().all(|&v| v == 1.0));

    let o = run(&["mask", "--manifest", m.to_str().unwrap(), "--out", &path]);
    assert!(o.status.success());
    let t = read_tensor(&path).unwrap();
    assert_eq!(t.data.iter().filter(|&&v| v == 1.0).count(), 44 - 10);
    assert!(t.data[..3].iter().chain(&t.data[39..]).all(|&v| v == 1.0));
}

#[test]
fn heatmap_writes_pgm_and_csv() {
    let (dir, m) = small();
    let pgm = out(dir.path(), "grid.pgm");
    let csv = out(dir.path(), "grid.csv");
    let both = format!("{pgm},{csv}");
    let o = run(&[
        "heatmap",
        "--manifest",
        m.to_str().unwrap(),
        "--out",
        &both,
        "--head-agg",
        "max",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&pgm).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("P2"));
    assert_eq!(lines.next(), Some("6 6"));
    assert_eq!(lines.next(), Some("255"));
    let levels: Vec<u32> = lines
        .flat_map(|l| l.split(' ').map(|v| v.parse::<u32>().unwrap()))
        .collect();
    assert_eq!(levels.len(), 36);
    assert_eq!(levels.iter().max(), Some(&255));
    let rows = csv_rows(&csv);
    assert_eq!(rows[0], ["row", "col", "value"]);
    assert_eq!(rows.len(), 37);

    for (q, h) in [("0", "mean"), ("43", "1")] {
        let o = run(&[
            "heatmap",
            "--manifest",
            m.to_str().unwrap(),
            "--out",
            &pgm,
            "--query",
            q,
            "--head-agg",
            h,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let o = run(&[
        "heatmap",
        "--manifest",
        m.to_str().unwrap(),
        "--out",
        &pgm,
        "--query",
        "44",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("ERR:IndexOutOfRange:"));
}

#[test]
fn cluster_csv_has_overlay_flags() {
    let (dir, m) = small();
    let path = out(dir.path(), "clusters.csv");
    let o = run(&[
        "cluster",
        "--manifest",
        m.to_str().unwrap(),
        "--out",
        &path,
        "--k",
        "3",
        "--seed",
        "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&path);
    assert_eq!(rows[0], ["index", "x", "y", "label", "ignored"]);
    assert_eq!(rows.len(), 37);
    assert_eq!(rows[1..].iter().filter(|r| r[4] == "1").count(), 10);
    assert!(rows[1..].iter().all(|r| r[3].parse::<usize>().unwrap() < 3));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 3);

    let o = run(&[
        "cluster",
        "--manifest",
        m.to_str().unwrap(),
        "--out",
        &path,
        "--space",
        "full",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn ablate_bands() {
    let (dir, m) = small();
    let imp = out(dir.path(), "imp.csv");
    let unimp = out(dir.path(), "unimp.csv");
    for (band, path) in [("important", &imp), ("unimportant", &unimp)] {
        let o = run(&[
            "ablate",
            "--manifest",
            m.to_str().unwrap(),
            "--band",
            band,
            "--ignore",
            "4",
            "--out",
            path,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let imp = csv_rows(&imp);
    let unimp = csv_rows(&unimp);
    assert!(imp[1..5].iter().all(|r| r[2] == "0"));
    assert!(imp[5..].iter().all(|r| r[2] == "1"));
    assert!(unimp[33..].iter().all(|r| r[2] == "0"));
    assert!(unimp[1..33].iter().all(|r| r[2] == "1"));

    let r = out(dir.path(), "r.csv");
    let o = run(&[
        "ablate",
        "--manifest",
        m.to_str().unwrap(),
        "--band",
        "random",
        "--ignore",
        "5",
        "--out",
        &r,
    ]);
    assert!(o.status.success());
    assert_eq!(csv_rows(&r)[1..].iter().filter(|x| x[2] == "0").count(), 5);
}

#[test]
fn sweep_over_the_default_list() {
    let (dir, m) = synth_dir(24, &["--n-usr", "5", "--dim", "16"]);
    let path = out(dir.path(), "sweep.csv");
    let o = run(&["sweep", "--manifest", m.to_str().unwrap(), "--out", &path]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&path);
    assert_eq!(
        rows[0],
        [
            "ignored",
            "kept",
            "mask_popcount",
            "active_keys",
            "mac_count",
            "degenerate_rows",
            "kept_indices"
        ]
    );
    assert_eq!(rows.len(), 10);
    let macs: Vec<u64> = rows[1..].iter().map(|r| r[4].parse().unwrap()).collect();
    assert!(macs.windows(2).all(|w| w[1] < w[0]));
    assert_eq!(rows[2][0], "124");
    assert_eq!(rows[2][3], "492");
    assert_eq!(rows[9][1], "0");
    assert_eq!(rows[9][6], "");
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let (dir, m) = small();
    let m = m.to_str().unwrap();
    let cases: Vec<Vec<String>> = vec![
        vec!["select".into()],
        vec!["mask".into()],
        vec!["heatmap".into()],
        vec!["cluster".into(), "--seed".into(), "4".into()],
        vec![
            "ablate".into(),
            "--band".into(),
            "random".into(),
            "--ignore".into(),
            "7".into(),
        ],
        vec!["sweep".into(), "--ignore-list".into(), "0,5,36".into()],
    ];
    for (n, case) in cases.iter().enumerate() {
        let ext = match case[0].as_str() {
            "mask" => "sigt",
            "heatmap" => "pgm",
            _ => "csv",
        };
        let mut outputs = vec![];
        for rep in 0..2 {
            let path = out(dir.path(), &format!("{n}_{rep}.{ext}"));
            let mut args: Vec<&str> = case.iter().map(String::as_str).collect();
            args.extend(["--manifest", m, "--out", &path]);
            let o = run(&args);
            assert!(o.status.success(), "{case:?}: {}", stderr(&o));
            outputs.push(fs::read(&path).unwrap());
        }
        assert_eq!(outputs[0], outputs[1], "{case:?}");
    }
}

#[test]
fn thread_cap_does_not_change_results() {
    let (dir, m) = small();
    let a = out(dir.path(), "a.csv");
    let b = out(dir.path(), "b.csv");
    let o = bin()
        .env("SIMIGNORE_THREADS", "1")
        .args(["select", "--manifest", m.to_str().unwrap(), "--out", &a])
        .output()
        .unwrap();
    assert!(o.status.success());
    let o = bin()
        .env("SIMIGNORE_THREADS", "4")
        .args(["select", "--manifest", m.to_str().unwrap(), "--out", &b])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let o = bin()
        .env("SIMIGNORE_THREADS", "0")
        .args(["select", "--manifest", m.to_str().unwrap(), "--out", &b])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    for args in [
        vec!["frobnicate"],
        vec!["select", "--out", "x.csv"],
        vec![
            "ablate",
            "--manifest",
            "m.json",
            "--out",
            "x",
            "--band",
            "middling",
            "--ignore",
            "1",
        ],
        vec!["heatmap", "--manifest", "m.json", "--out", "x.png"],
        vec![
            "select",
            "--manifest",
            "m.json",
            "--out",
            "x",
            "--keep",
            "1",
            "--ignore",
            "2",
        ],
    ] {
        let o = run(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        let err = stderr(&o);
        assert!(err.starts_with("ERR:Usage:"), "{err}");
        assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    }
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn validation_errors_exit_two() {
    let (dir, m) = small();
    let text = fs::read_to_string(&m).unwrap();
    let manifest = RunManifest::from_json(&text).unwrap();
    let write = |name: &str, m: &RunManifest| {
        let p = dir.path().join(name);
        fs::write(&p, m.to_json()).unwrap();
        p.to_str().unwrap().to_string()
    };
    let sink = out(dir.path(), "o.csv");

    let mut wrong_count = manifest.clone();
    wrong_count.n_img = 35;
    let mut both = manifest.clone();
    both.keep = Some(3);
    let mut big = manifest.clone();
    big.ignore = Some(37);
    let mut missing = manifest.clone();
    missing.text_embeddings = "nope.sigt".into();
    let mut bad_metric = manifest.clone();
    bad_metric.metric = "cosh".into();

    for (name, m, code) in [
        ("count.json", &wrong_count, "ERR:Manifest:"),
        ("both.json", &both, "ERR:Manifest:"),
        ("big.json", &big, "ERR:BudgetOutOfRange:"),
        ("missing.json", &missing, "ERR:Io:"),
        ("metric.json", &bad_metric, "ERR:Manifest:"),
    ] {
        let p = write(name, m);
        let o = run(&["select", "--manifest", &p, "--out", &sink]);
        assert_eq!(o.status.code(), Some(2), "{name}");
        assert!(stderr(&o).starts_with(code), "{name}: {}", stderr(&o));
        assert_eq!(stderr(&o).trim_end().lines().count(), 1);
    }

    // corrupt tensor
    fs::write(dir.path().join("text.sigt"), b"XXXXjunk").unwrap();
    let o = run(&["select", "--manifest", m.to_str().unwrap(), "--out", &sink]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("ERR:BadMagic:"));
}

#[test]
fn feature_map_route_through_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    // 4 channels over a 2x2 grid, pooled to 2 tokens x 2 dims, aligned to 3 dims
    let fm = Tensor::new(vec![4, 2, 2], (0..16).map(|v| v as f32).collect()).unwrap();
    let al = Tensor::new(vec![2, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
    let txt = Tensor::new(vec![1, 3], vec![0.0, 1.0, 0.0]).unwrap();
    write_tensor(&fm, dir.path().join("fm.sigt")).unwrap();
    write_tensor(&al, dir.path().join("al.sigt")).unwrap();
    write_tensor(&txt, dir.path().join("txt.sigt")).unwrap();
    let manifest = r#"{"n_sys": 1, "n_img": 2, "n_usr": 1, "keep": 1,
        "feature_map": "fm.sigt", "alignment": "al.sigt", "text_embeddings": "txt.sigt"}"#;
    let m = dir.path().join("m.json");
    fs::write(&m, manifest).unwrap();
    let path = out(dir.path(), "sel.csv");
    let o = run(&["select", "--manifest", m.to_str().unwrap(), "--out", &path]);
    assert!(o.status.success(), "{}", stderr(&o));
    // token 0 pools channels {0,1} / {2,3} over positions {0,1}: (2.5, 10.5)
    // token 1 over positions {2,3}: (4.5, 12.5); token 0 leans further towards y
    let rows = csv_rows(&path);
    assert_eq!(rows[1][0], "0");
    assert_eq!(rows[1][2], "1");
    assert_eq!(rows[2][2], "0");
}
