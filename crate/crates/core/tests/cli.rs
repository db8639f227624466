use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn odtte(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odtte"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn gen_data_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    ok(&odtte(a.path(), &["gen-data", "--n", "1000", "--seed", "7"]));
    ok(&odtte(b.path(), &["gen-data", "--n", "1000", "--seed", "7"]));
    let da = fs::read(a.path().join("data.csv")).unwrap();
    assert_eq!(da, fs::read(b.path().join("data.csv")).unwrap());
    assert_eq!(fs::read_to_string(a.path().join("data.csv")).unwrap().lines().count(), 1002);
    let cfg = fs::read_to_string(a.path().join("config.txt")).unwrap();
    assert!(cfg.contains("seed=7\n") && cfg.contains("n_samples=1000\n"));

    ok(&odtte(b.path(), &["gen-data", "--n", "1000", "--seed", "8"]));
    assert_ne!(da, fs::read(b.path().join("data.csv")).unwrap());
}

#[test]
fn perfect_predictions_give_zero_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let preds = dir.path().join("p.csv");
    fs::write(&preds, "record_id,target_h,prediction_h\n0,1.5,1.5\n1,3.25,3.25\n2,0.5,0.5\n").unwrap();
    let before = fs::read(&preds).unwrap();
    ok(&odtte(dir.path(), &["evaluate", "--predictions", preds.to_str().unwrap()]));
    let m = fs::read_to_string(dir.path().join("metrics.txt")).unwrap();
    for key in ["mse", "rmse", "mae", "mape_pct", "mare_pct", "ew90_h"] {
        assert!(m.contains(&format!("{key}=0\n")), "{key} in {m}");
    }
    assert!(m.contains("n=3\n"));
    assert_eq!(before, fs::read(&preds).unwrap(), "inputs are never modified");
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# small run\nn_samples = 300\nseed = 3\n").unwrap();
    ok(&odtte(dir.path(), &["--config", cfg.to_str().unwrap(), "--seed", "4", "gen-data"]));
    let resolved = fs::read_to_string(dir.path().join("config.txt")).unwrap();
    assert!(resolved.contains("seed=4\n"));
    assert!(resolved.contains("n_samples=300\n"));
    let first = fs::read_to_string(dir.path().join("data.csv")).unwrap();
    assert!(first.starts_with("# seed="));

    // The resolved config reproduces the run on its own.
    let again = tempfile::tempdir().unwrap();
    let resolved_path = dir.path().join("config.txt");
    ok(&odtte(again.path(), &["--config", resolved_path.to_str().unwrap(), "gen-data"]));
    assert_eq!(first, fs::read_to_string(again.path().join("data.csv")).unwrap());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let usage = odtte(dir.path(), &["train", "--family", "lstm"]);
    assert_eq!(usage.status.code(), Some(1));
    let line = String::from_utf8_lossy(&usage.stderr);
    assert!(line.starts_with("error kind=config code=1 "), "{line}");
    assert_eq!(line.lines().count(), 1);

    assert_eq!(odtte(dir.path(), &["--no-such-flag", "gen-data"]).status.code(), Some(1));
    assert_eq!(odtte(dir.path(), &["--help"]).status.code(), Some(0));

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "record_id,target_h,prediction_h\n0,abc,1\n").unwrap();
    let parse = odtte(dir.path(), &["evaluate", "--predictions", bad.to_str().unwrap()]);
    assert_eq!(parse.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&parse.stderr).contains("kind=parse"));

    let data = dir.path().join("data.csv");
    fs::write(&data, "depot_id,o_lat\n1,43.5\n").unwrap();
    let p = odtte(dir.path(), &["baseline", "--data", data.to_str().unwrap()]);
    assert_eq!(p.status.code(), Some(2));
}

#[test]
fn divergence_exits_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    ok(&odtte(dir.path(), &["gen-data", "--n", "200", "--seed", "1"]));
    let data = dir.path().join("data.csv");
    let o = odtte(
        dir.path(),
        &["--set", "width_divisor=32", "--set", "lr=1e300", "train", "--data", data.to_str().unwrap(), "--max-epochs", "3"],
    );
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(o.status.code(), Some(3), "{err}");
    assert!(err.contains("kind=diverged") || err.contains("kind=numerical"), "{err}");
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let p = |n: &str| d.join(n).to_str().unwrap().to_string();
    let small = ["--seed", "5", "--set", "width_divisor=32", "--set", "ae_max_epochs=50"];
    let run = |args: &[&str]| {
        let mut all: Vec<&str> = small.to_vec();
        all.extend_from_slice(args);
        ok(&odtte(d, &all));
    };
    run(&["gen-data", "--n", "600"]);
    run(&["train", "--data", &p("data.csv"), "--family", "vgg", "--depth", "4", "--se", "--max-epochs", "2"]);
    for f in ["model.ckpt", "model_history.csv", "model_summary.txt"] {
        assert!(d.join(f).exists(), "{f}");
    }
    let history = fs::read_to_string(d.join("model_history.csv")).unwrap();
    assert_eq!(history.lines().next(), Some("epoch,train_mse,val_mse,lr,seconds"));
    assert_eq!(history.lines().count(), 3);

    run(&["evaluate", "--checkpoint", &p("model.ckpt"), "--data", &p("data.csv")]);
    let preds = fs::read_to_string(d.join("predictions.csv")).unwrap();
    assert_eq!(preds.lines().count(), 1 + 180);

    run(&["predict", "--checkpoint", &p("model.ckpt"), "--data", &p("data.csv")]);
    assert_eq!(fs::read_to_string(d.join("predictions.csv")).unwrap().lines().count(), 601);

    run(&["analyze", "--data", &p("data.csv"), "--predictions", &p("predictions.csv")]);
    for dim in ["depot", "od_distance_km", "hour", "week", "dow", "target_hour"] {
        let t = fs::read_to_string(d.join(format!("breakdown_{dim}.csv"))).unwrap();
        let total: usize = t.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<usize>().unwrap()).sum();
        assert_eq!(total, 600, "{dim}");
    }
    assert!(fs::read_to_string(d.join("depot_map.csv")).unwrap().starts_with("depot_id,lat,lon,mape_pct,n\n"));

    run(&["project", "--checkpoint", &p("model.ckpt"), "--data", &p("data.csv")]);
    let proj = fs::read_to_string(d.join("projection.csv")).unwrap();
    assert!(proj.starts_with("sample_id,c1,c2,hour,dow\n"));
    assert_eq!(proj.lines().count(), 181);

    run(&["baseline", "--data", &p("data.csv")]);
    assert!(fs::read_to_string(d.join("sbtte_predictions.csv")).unwrap().starts_with("record_id,target_h,prediction_h\n"));
    assert!(fs::read_to_string(d.join("sbtte_metrics.txt")).unwrap().contains("n=180\n"));
}

#[test]
fn corrupt_checkpoint_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    ok(&odtte(dir.path(), &["gen-data", "--n", "50"]));
    let ckpt = dir.path().join("model.ckpt");
    fs::write(&ckpt, b"not a checkpoint").unwrap();
    let data = dir.path().join("data.csv");
    let o = odtte(dir.path(), &["predict", "--checkpoint", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("kind=checkpoint"));
}

#[test]
fn vgg_depth_sweep_reports_every_depth() {
    let dir = tempfile::tempdir().unwrap();
    let o = odtte(
        dir.path(),
        &["--set", "n_samples=200", "--set", "width_divisor=64", "depth-sweep", "--family", "vgg", "--max-epochs", "1"],
    );
    ok(&o);
    let sweep = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let rows: Vec<Vec<&str>> = sweep.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 8);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[0], (i + 3).to_string());
        assert_eq!(r[3], "3", "pools at depth {}", i + 3);
        assert!(r[2].parse::<usize>().unwrap() > 0);
        assert!(dir.path().join(format!("depth{}_metrics.txt", i + 3)).exists());
    }
}
