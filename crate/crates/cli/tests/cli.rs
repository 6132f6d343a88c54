use std::path::Path;
use std::process::{Command, Output};

fn glcnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glcnet"))
        .current_dir(dir)
        .env_remove("GLCNET_DATA_ROOT")
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const SMALL: [&str; 8] = [
    "--set",
    "synth.scene_size=128",
    "--set",
    "pretrain.epochs=1",
    "--set",
    "finetune.epochs=2",
    "--set",
    "finetune.label_fraction=0.2",
];

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let desk = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/desk.cfg");
    let mut v = vec!["--config", desk];
    v.extend(SMALL);
    v.extend(args);
    v
}

#[test]
fn full_pipeline_through_the_binary() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&glcnet(d, &with_small(&["synth", "--out", "scenes", "--scenes", "3"])));
    ok(&glcnet(d, &with_small(&["tile", "--input", "scenes", "--out", "tiles"])));
    ok(&glcnet(d, &with_small(&["pretrain", "--tiles", "tiles", "--out", "pre", "--method", "simclr"])));
    let loss = std::fs::read_to_string(d.join("pre/loss.csv")).unwrap();
    assert!(loss.starts_with("epoch,step,L_G,L_L,L_total,lr"));
    for row in loss.lines().skip(1) {
        assert_eq!(row.split(',').nth(3).unwrap().parse::<f64>().unwrap(), 0.0, "{row}");
    }
    ok(&glcnet(
        d,
        &with_small(&["finetune", "--tiles", "tiles", "--out", "ft", "--checkpoint", "pre/checkpoint.glck", "--load-groups", "encoder"]),
    ));
    let run = std::fs::read_to_string(d.join("ft/run.txt")).unwrap();
    assert!(run.contains("label_subset_size\t"), "{run}");
    assert!(run.contains("config_hash\t"), "{run}");
    let summary = ok(&glcnet(d, &with_small(&["evaluate", "--tiles", "tiles", "--model", "ft/model.glck"])));
    assert!(summary.contains("Kappa"));
    assert!(d.join("ft/config.cfg").is_file());
    let plots = ok(&glcnet(d, &["plot", "--run", "ft"]));
    assert!(plots.contains("f1.svg") && plots.contains("finetune_loss.svg"));
}

#[test]
fn user_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let bad = glcnet(d, &["--set", "pretrain.lambda=2.0", "--set", "finetune.epochs=0", "synth", "--out", "x"]);
    assert_eq!(bad.status.code(), Some(1));
    let err = String::from_utf8_lossy(&bad.stderr);
    assert!(err.contains("lambda") && err.contains("finetune.epochs"), "{err}");
    let missing = glcnet(d, &["pretrain", "--tiles", "nowhere", "--out", "pre"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("tile"));
    std::fs::create_dir(d.join("busy")).unwrap();
    std::fs::write(d.join("busy/.glcnet.lock"), "").unwrap();
    let locked = glcnet(d, &["synth", "--out", "busy", "--scenes", "1"]);
    assert_eq!(locked.status.code(), Some(1));
}
