use std::path::Path;
use std::process::{Command, Output};

const SPEC: &str = r#"
task = "LinReg"
loss_scale = 0.01
seed = 4
replications = 3
test_size = 100

[data]
kind = "sparse_linear"
n = 40
d = 8
rho = 0.3
sigma = 0.5
active = 3

[mc]
truncation = 20
samples = 10

[sgd]
a = 20.0
b = 100.0
passes = 20

[[methods]]
label = "dp"
model = "DP"
beta = 1.0
alpha = 2.0

[[methods]]
label = "ols"
model = "OLS"
"#;

fn bnpdro(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bnpdro")).args(args).output().unwrap()
}

fn write_spec(dir: &Path, text: &str) -> String {
    let path = dir.join("spec.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_then_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), SPEC);
    let rows = dir.path().join("rows.csv");
    let out = bnpdro(&["simulate", "--spec", &spec, "--out", s(&rows)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&rows).unwrap();
    assert!(text.starts_with("replicate,method,testRisk,rmse,distanceToTruth,coeffNorm"));
    assert_eq!(text.lines().count(), 7);

    let json = dir.path().join("summary.json");
    let out = bnpdro(&["report", "--input", s(&rows), "--out", s(&json)]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 6);
    assert_eq!(report["summary"]["ols"]["testRisk"]["count"], 3);
}

#[test]
fn sequential_flag_and_seed_override_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), SPEC);
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let c = dir.path().join("c.json");
    assert!(
        bnpdro(&["simulate", "--spec", &spec, "--out", s(&a), "--format", "json"])
            .status
            .success()
    );
    assert!(bnpdro(&[
        "--sequential",
        "simulate",
        "--spec",
        &spec,
        "--out",
        s(&b),
        "--format",
        "json"
    ])
    .status
    .success());
    assert!(bnpdro(&[
        "simulate",
        "--spec",
        &spec,
        "--seed",
        "99",
        "--out",
        s(&c),
        "--format",
        "json"
    ])
    .status
    .success());
    let read = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn doro_fit_and_cv_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let with_grid = SPEC.replace("alpha = 2.0", "alpha = [1.0, 4.0]\nepsilon = 0.1");
    let spec = write_spec(dir.path(), &with_grid);
    let rows = dir.path().join("doro.csv");
    let out = bnpdro(&["doro", "--spec", &spec, "--out", s(&rows)]);
    // a multi-point grid without a selection rule is a spec error
    assert_eq!(out.status.code(), Some(2));

    let spec = write_spec(dir.path(), &SPEC.replace("alpha = 2.0", "alpha = 2.0\nepsilon = 0.1"));
    let out = bnpdro(&["doro", "--spec", &spec, "--out", s(&rows)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let fit = dir.path().join("fit.json");
    assert!(bnpdro(&["fit", "--spec", &spec, "--out", s(&fit)]).status.success());
    let fitted: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&fit).unwrap()).unwrap();
    assert_eq!(fitted.as_array().unwrap().len(), 2);

    let spec = write_spec(
        dir.path(),
        &with_grid.replace("[data]", "[selection]\nmode = \"kfold\"\nfolds = 4\n\n[data]"),
    );
    let cv = dir.path().join("cv.json");
    let out = bnpdro(&["cv", "--spec", &spec, "--out", s(&cv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let scores: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&cv).unwrap()).unwrap();
    assert_eq!(scores[0][1]["scores"].as_array().unwrap().len(), 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_spec(dir.path(), "task = \"LinReg\"\n");
    assert_eq!(
        bnpdro(&["simulate", "--spec", &bad, "--out", s(&dir.path().join("x.csv"))])
            .status
            .code(),
        Some(2)
    );

    let spec = write_spec(dir.path(), SPEC);
    let missing = dir.path().join("no/such/dir/x.csv");
    assert_eq!(
        bnpdro(&["simulate", "--spec", &spec, "--out", s(&missing)])
            .status
            .code(),
        Some(4)
    );

    let diverging = SPEC
        .replace("a = 20.0", "a = 1e9")
        .replace("[[methods]]\nlabel = \"ols\"\nmodel = \"OLS\"\n", "");
    let spec = write_spec(dir.path(), &diverging);
    let out = bnpdro(&["simulate", "--spec", &spec, "--out", s(&dir.path().join("d.csv"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let two_group = "task = \"LinReg\"\ntest_size = 10\n[data]\nkind = \"two_group_linear\"\nn = 20\np = 5\nrho = 0.3\nsigma = 0.5\nc = 0.2\n[[methods]]\nlabel = \"ols\"\nmodel = \"OLS\"\n";
    let spec = write_spec(dir.path(), two_group);
    assert_eq!(
        bnpdro(&["doro", "--spec", &spec, "--out", s(&dir.path().join("t.csv"))])
            .status
            .code(),
        Some(2)
    );
}
