use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use trustgrid::cli::{meta_path, parse_spec, ExperimentSpec};

fn trustgrid(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trustgrid"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

fn data_rows(csv: &str) -> usize {
    csv.lines().filter(|l| !l.starts_with('#')).count() - 1
}

const TRACE: &str = r#"{"kind":"trace","sim":{"model":"case_study",
    "attacker":{"target":1,"mode":"replace","frequency":0.2,"amplitude":0.1},"seed":3},
    "output":"trace.csv"}"#;

#[test]
fn trace_has_one_row_per_slot() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "t.json", TRACE);
    let out = trustgrid(&["run", &spec], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert_eq!(data_rows(&csv), 200);
    let header = csv.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, "t,pi_1,pi_2,pi_3,pi_4,pi_5,pi_6,pi_7,cost,state_norm,attacked");
    assert!(csv.starts_with("# trustgrid "));

    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("trace.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 3);
    assert!(meta["wall_time_seconds"].as_f64().unwrap() >= 0.0);
    assert_eq!(meta["spec"]["sim"]["horizon"], 200);
}

#[test]
fn same_spec_gives_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "t.json", TRACE);
    let mut outputs = Vec::new();
    for name in ["a.csv", "a.csv", "b.csv"] {
        let out = trustgrid(&["run", &spec, "--output", name], dir.path());
        assert!(out.status.success());
        outputs.push(fs::read(dir.path().join(name)).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    // the output path is part of the echoed spec, everything else matches
    let strip = |b: &[u8]| {
        String::from_utf8_lossy(b).lines().filter(|l| !l.starts_with("# spec")).collect::<Vec<_>>().join("\n")
    };
    assert_eq!(strip(&outputs[0]), strip(&outputs[2]));

    let other = trustgrid(&["run", &spec, "--output", "c.csv", "--seed", "4"], dir.path());
    assert!(other.status.success());
    assert_ne!(strip(&outputs[0]), strip(&fs::read(dir.path().join("c.csv")).unwrap()));
}

#[test]
fn roc_with_five_thresholds_has_five_rows() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "roc.json",
        r#"{"kind":"roc","sim":{"model":"case_study","horizon":60,
            "attacker":{"target":2,"mode":"replace","frequency":0.3,"amplitude":0.1}},
            "sweep":[0.5,0.6,0.7,0.8,0.9],"realizations":8,"output":"out/roc.csv"}"#,
    );
    let out = trustgrid(&["run", &spec], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/roc.csv")).unwrap();
    assert_eq!(data_rows(&csv), 5);
    assert!(csv.contains("\nthreshold,mean_delay,false_alarm_rate\n"));
}

#[test]
fn validation_failure_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "bad.json",
        r#"{"kind":"trace","sim":{"model":"case_study","attacker":{"frequency":1.5}}}"#,
    );
    let out = trustgrid(&["run", &spec], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sim.attacker.frequency"));

    let unknown = write(dir.path(), "u.json", r#"{"kind":"trace","sim":{"model":"case_study"},"colour":1}"#);
    assert_eq!(trustgrid(&["validate", &unknown], dir.path()).status.code(), Some(1));
    assert_eq!(trustgrid(&["run", "missing.json"], dir.path()).status.code(), Some(1));
    assert_eq!(trustgrid(&["bogus-command"], dir.path()).status.code(), Some(1));
    assert!(fs::read_dir(dir.path()).unwrap().all(|e| !e.unwrap().path().to_string_lossy().ends_with(".csv")));
}

#[test]
fn runtime_failure_exits_with_two_and_cleans_up() {
    let dir = tempfile::tempdir().unwrap();
    // unstabilizable: an unstable mode with no input authority
    let spec = write(
        dir.path(),
        "u.json",
        r#"{"kind":"trace","sim":{"model":{"A":[[2.0]],"B":[[0.0]],"C":[[1.0],[1.0]],"W":0.1,"V":0.1}},
            "output":"x.csv"}"#,
    );
    let out = trustgrid(&["run", &spec], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let left: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(left.len(), 1, "{left:?}");
}

#[test]
fn validate_prints_resolved_spec_that_parses_back() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "min.json", r#"{"kind":"cdf","sim":{"model":"case_study"}}"#);
    let out = trustgrid(&["validate", &spec, "--realizations", "12"], dir.path());
    assert!(out.status.success());
    let printed = String::from_utf8(out.stdout).unwrap();
    let resolved: ExperimentSpec = serde_json::from_str(&printed).unwrap();
    assert_eq!(resolved.realizations, Some(12));
    assert_eq!(resolved.output.as_deref(), Some(Path::new("cdf.csv")));
    assert_eq!(resolved.sim.detection_threshold, 0.7);

    let again = write(dir.path(), "again.json", &printed);
    assert_eq!(parse_spec(&dir.path().join(again)).unwrap(), resolved);
}

#[test]
fn shipped_recipes_round_trip() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("recipes");
    let tmp = tempfile::tempdir().unwrap();
    let mut count = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let spec = parse_spec(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let copy = tmp.path().join("copy.json");
        fs::write(&copy, serde_json::to_string_pretty(&spec).unwrap()).unwrap();
        assert_eq!(parse_spec(&copy).unwrap(), spec);
        count += 1;
    }
    assert!(count >= 9);

    let fig7 = parse_spec(&dir.join("fig7.json")).unwrap();
    let cfg = fig7.sim_config().unwrap();
    assert_eq!(cfg.attacker.amplitude, 100.0);
    assert_eq!(cfg.lqr.q, nalgebra::DMatrix::identity(7, 7));
    assert_eq!(cfg.lqr.pc, nalgebra::DMatrix::identity(7, 7) * 0.01);
    assert_eq!(fig7.sweep.as_deref(), Some(&[0.1, 0.2, 0.3][..]));
}

#[test]
fn show_model_output_is_a_model_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = trustgrid(&["show-model", "--dt", "0.02"], dir.path());
    assert!(out.status.success());
    fs::write(dir.path().join("m.json"), &out.stdout).unwrap();
    let spec = write(dir.path(), "s.json", r#"{"kind":"trace","sim":{"model":{"path":"m.json"}}}"#);
    let parsed = parse_spec(&dir.path().join(spec)).unwrap();
    let cfg = parsed.sim_config().unwrap();
    let built = trustgrid::linsys::ContinuousCaseStudy::grid(0.02).build_isotropic(1e-4, 1e-2).unwrap();
    assert!((cfg.model.a() - built.a()).abs().max() < 1e-15);
    assert!((cfg.model.w() - built.w()).abs().max() < 1e-20);
    assert_eq!(meta_path(Path::new("x/y.csv")), Path::new("x/y.csv.meta.json"));
}
