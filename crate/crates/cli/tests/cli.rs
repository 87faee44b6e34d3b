use std::path::Path;
use std::process::{Command, Output};

fn climrl(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_climrl"))
        .args(args)
        .env("CLIMRL_OUTPUT_ROOT", out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&climrl(&["--help"], dir.path())), 0);
    assert_eq!(code(&climrl(&["--version"], dir.path())), 0);
    assert_eq!(code(&climrl(&[], dir.path())), 1);
    assert_eq!(code(&climrl(&["train", "--bogus"], dir.path())), 1);
    assert_eq!(code(&climrl(&["train", "--exp", "scbc-v1"], dir.path())), 1);
}

#[test]
fn bad_inputs_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cases: &[&[&str]] = &[
        &["train", "--exp", "scbc-v9", "--algo", "ddpg"],
        &["train", "--exp", "scbc-v1", "--algo", "sarsa"],
        &["train", "--exp", "scbc-v1", "--algo", "ddpg", "--steps", "150"],
        &["train", "--exp", "scbc-v1", "--algo", "ddpg", "--seeds", "3..1"],
        &["train", "--exp", "ebm-v2-a2-fed05", "--algo", "ddpg"],
        &["fed", "--exp", "ebm-v1", "--algo", "ddpg"],
        &[
            "train",
            "--exp",
            "ebm-v1",
            "--algo",
            "ddpg",
            "--climatology",
            "/no/such.csv",
        ],
        &["train", "--config", "/no/such.toml"],
        &["export", "--exp", "scbc-v1", "--algo", "ddpg"],
        &["eval", "--exp", "scbc-v1"],
        &["infer", "--exp", "scbc-v1", "--algo", "ddpg", "--seed", "1"],
    ];
    for args in cases {
        let o = climrl(args, dir.path());
        assert_eq!(code(&o), 1, "{args:?}: {}", stderr(&o));
        assert!(stderr(&o).contains("error"), "{args:?}");
    }
}

#[test]
fn malformed_climatology_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let clim = dir.path().join("clim.csv");
    std::fs::write(&clim, "lat_deg,temp_c\n0.0,10.0\n").unwrap();
    let o = climrl(
        &[
            "train",
            "--exp",
            "ebm-v0",
            "--algo",
            "ddpg",
            "--steps",
            "200",
            "--seed",
            "1",
            "--climatology",
            clim.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("clim.csv"));
}

#[test]
fn train_infer_eval_export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("scbc-v0-optim-L");
    for algo in ["ddpg", "td3"] {
        let o = climrl(
            &[
                "train", "--exp", "scbc-v0", "--algo", algo, "--steps", "400", "--seeds", "1..2",
            ],
            dir.path(),
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        for f in [
            "summary.json",
            "metrics.csv",
            "seed-1/curve.csv",
            "seed-2/final.ckpt",
            "seed-2/inference.csv",
        ] {
            assert!(run.join(algo).join(f).exists(), "{algo}/{f}");
        }
    }

    let o = climrl(
        &["infer", "--exp", "scbc-v0", "--algo", "ddpg", "--seed", "2"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("skill error"));

    let o = climrl(&["eval", "--exp", "scbc-v0"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ranking = std::fs::read_to_string(run.join("ranking.csv")).unwrap();
    assert!(ranking.contains("ddpg") && ranking.contains("td3"));

    let o = climrl(&["export", "--exp", "scbc-v0", "--algo", "td3"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(run.join("td3/curves_ci.csv").exists());

    std::fs::write(run.join("ddpg/seed-1/final.ckpt"), b"junk").unwrap();
    let o = climrl(
        &["infer", "--exp", "scbc-v0", "--algo", "ddpg", "--seed", "1"],
        dir.path(),
    );
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn out_flag_beats_environment_root() {
    let env_root = tempfile::tempdir().unwrap();
    let flag_root = tempfile::tempdir().unwrap();
    let o = climrl(
        &[
            "train",
            "--exp",
            "scbc-v2",
            "--algo",
            "dpg",
            "--steps",
            "200",
            "--seed",
            "4",
            "--out",
            flag_root.path().to_str().unwrap(),
        ],
        env_root.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(flag_root.path().join("scbc-v2-optim-L/dpg/seed-4/curve.csv").exists());
    assert!(std::fs::read_dir(env_root.path()).unwrap().next().is_none());
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "experiment = \"scbc-v1\"\nalgo = \"ddpg\"\nseeds = [1, 2, 3]\n[hyperparameters]\nhidden = [8]\n",
    )
    .unwrap();
    let o = climrl(
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "7",
            "--steps",
            "200",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let run = dir.path().join("scbc-v1-optim-L/ddpg");
    assert!(run.join("seed-7/final.ckpt").exists());
    assert!(!run.join("seed-1").exists());
}

#[test]
fn federated_run_and_global_inference() {
    let dir = tempfile::tempdir().unwrap();
    let o = climrl(
        &[
            "fed",
            "--exp",
            "ebm-v2-a2-fed05",
            "--algo",
            "ddpg",
            "--steps",
            "2000",
            "--seed",
            "1",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let seed = dir.path().join("ebm-v2-optim-L-a2-fed05/ddpg/seed-1");
    for f in [
        "round-001.ckpt",
        "round-002.ckpt",
        "agent-0.ckpt",
        "agent-1.ckpt",
        "zonal-global.csv",
    ] {
        assert!(seed.join(f).exists(), "{f}");
    }
    let o = climrl(
        &["infer", "--exp", "ebm-v2-a2-fed05", "--algo", "ddpg", "--seed", "1"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("global policy"));
}
