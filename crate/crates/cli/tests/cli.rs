use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use densopt::artifacts::{sha256_hex, RunManifest};
use densopt::commands::{stage_program, STAGES};
use densopt::config::{ConfigError, ExitCost, ProblemConfig};
use densopt_core::sdp::parse_sdpa;
use densopt_core::synthesis::{RationalController, SynthesisConfig};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn read_config(name: &str) -> String {
    fs::read_to_string(configs().join(name)).unwrap()
}

fn densopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_densopt")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// The scalar problem with a config written to `dir`.
fn scalar_config(dir: &Path, l_x: &str) -> PathBuf {
    let text = format!(
        r#"version = 1
name = "scalar"

[dynamics]
f = ["0"]
f_u = [["1"]]

[state_set]
kind = "box"
bounds = [[-1.0, 1.0]]

[inputs]
bounds = [[-1.0, 1.0]]

[costs]
l_x = "{l_x}"
l_u = ["0"]
beta = 1.0
M = "auto"
"#
    );
    let p = dir.join("scalar.cfg");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn bundled_configs_round_trip() {
    for name in ["double_integrator.cfg", "lotka_volterra.cfg"] {
        let cfg = ProblemConfig::parse(&read_config(name)).unwrap();
        let again = ProblemConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(cfg, again, "{name}");
    }
    let lv = ProblemConfig::parse(&read_config("lotka_volterra.cfg")).unwrap();
    assert_eq!(lv.costs.exit_cost, ExitCost::Value(16.16));
    assert_eq!(lv.dynamics.f_u.len(), 8);
    // the first four inputs harvest
    assert_eq!(lv.dynamics.f_u[0][0], "-1");
    assert_eq!(lv.dynamics.f_u[4][0], "1");
    let resolved = lv.resolve(&SynthesisConfig::default()).unwrap();
    assert!(!resolved.exit_cost_auto);
    assert_eq!(resolved.problem.n(), 4);
}

#[test]
fn auto_exit_cost_resolves() {
    let cfg = ProblemConfig::parse(&read_config("double_integrator.cfg")).unwrap();
    let mut auto = cfg.clone();
    auto.costs.exit_cost = ExitCost::Auto("auto".into());
    let r = auto.resolve(&SynthesisConfig::default()).unwrap();
    assert!(r.exit_cost_auto);
    assert!((r.problem.exit_cost - 1.01).abs() < 1e-5, "{}", r.problem.exit_cost);
}

#[test]
fn auto_exit_cost_for_lotka_volterra() {
    let mut cfg = ProblemConfig::parse(&read_config("lotka_volterra.cfg")).unwrap();
    cfg.costs.exit_cost = ExitCost::Auto("auto".into());
    let m = cfg.resolve(&SynthesisConfig::default()).unwrap().problem.exit_cost;
    assert!((m - 16.16).abs() < 1e-4, "{m}");
}

fn field_of(e: ConfigError) -> String {
    match e {
        ConfigError::Field { field, .. } => field,
        other => panic!("expected a field error, got {other}"),
    }
}

#[test]
fn config_errors_name_the_field() {
    let base = read_config("double_integrator.cfg");
    let settings = SynthesisConfig::default();

    let bad_poly = base.replace("x2 + 0.1*x1^3", "x2 + * x1");
    let e = ProblemConfig::parse(&bad_poly).unwrap().resolve(&settings).unwrap_err();
    assert!(e.to_string().contains("column"), "{e}");
    assert_eq!(field_of(e), "dynamics.f[0]");

    let mut cfg = ProblemConfig::parse(&base).unwrap();
    cfg.inputs.bounds.push([0.0, 1.0]);
    assert_eq!(field_of(cfg.resolve(&settings).unwrap_err()), "inputs.bounds");

    let mut cfg = ProblemConfig::parse(&base).unwrap();
    cfg.costs.exit_cost = ExitCost::Auto("often".into());
    assert_eq!(field_of(cfg.resolve(&settings).unwrap_err()), "costs.M");

    let mut cfg = ProblemConfig::parse(&base).unwrap();
    cfg.costs.exit_cost = ExitCost::Value(0.5);
    assert!(matches!(cfg.resolve(&settings), Err(ConfigError::Invalid(_))));

    let unknown = base.replace("[costs]", "[costs]\ncolour = 3");
    assert!(matches!(ProblemConfig::parse(&unknown), Err(ConfigError::Syntax(_))));

    let v2 = base.replace("version = 1", "version = 2");
    assert_eq!(field_of(ProblemConfig::parse(&v2).unwrap_err()), "version");
}

#[test]
fn manual_scaling_must_match() {
    let base = read_config("lotka_volterra.cfg");
    assert!(ProblemConfig::parse(&base)
        .unwrap()
        .resolve(&SynthesisConfig::default())
        .is_ok());
    let off = base.replace(
        "q_vec = [0.525, 0.525, 0.525, 0.525]",
        "q_vec = [0.5, 0.525, 0.525, 0.525]",
    );
    assert_ne!(off, base);
    let e = ProblemConfig::parse(&off)
        .unwrap()
        .resolve(&SynthesisConfig::default())
        .unwrap_err();
    assert_eq!(field_of(e), "scaling");
}

#[test]
fn malformed_polynomial_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scalar_config(dir.path(), "x1^^2");
    let o = densopt(&[
        "synthesize",
        "--config",
        path(&cfg),
        "--degree",
        "4",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert_eq!(err["exit_code"], 1);
    assert!(err["message"].as_str().unwrap().contains("column"), "{err}");
    assert!(err["message"].as_str().unwrap().contains("costs.l_x"), "{err}");
}

#[test]
fn unknown_stage_and_bad_arguments() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scalar_config(dir.path(), "x1^2");
    let o = densopt(&[
        "export-sdpa",
        "--config",
        path(&cfg),
        "--degree",
        "4",
        "--stage",
        "dual",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown stage"));
    let o = densopt(&["bound", "--config", path(&cfg), "--degree", "4", "--side", "middle"]);
    assert_eq!(o.status.code(), Some(1));
    let o = densopt(&["synthesize", "--config", path(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    let o = densopt(&[
        "synthesize",
        "--config",
        path(&dir.path().join("missing.cfg")),
        "--degree",
        "4",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn scalar_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let cfg = scalar_config(out, "x1^2");
    let run = |args: &[&str]| {
        let mut all = args.to_vec();
        all.extend(["--config", path(&cfg), "--out", path(out)]);
        let o = densopt(&all);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    };
    run(&["synthesize", "--degree", "4"]);
    let ctrl_path = out.join("controller_d4.json");
    let ctrl = RationalController::from_json(&fs::read_to_string(&ctrl_path).unwrap()).unwrap();
    assert_eq!(ctrl.m(), 1);

    // manifest hashes are the hashes of the files on disk
    let man: RunManifest =
        serde_json::from_str(&fs::read_to_string(out.join("manifest_synthesize.json")).unwrap()).unwrap();
    assert_eq!(man.command, "synthesize");
    assert_eq!(man.outputs.len(), 3);
    for f in &man.outputs {
        assert_eq!(
            sha256_hex(&fs::read(out.join(&f.path)).unwrap()),
            f.sha256,
            "{}",
            f.path
        );
    }
    assert!(man.config_sha256.len() == 64);

    run(&["bound", "--degree", "4", "--side", "lower-on-V"]);
    run(&[
        "bound",
        "--degree",
        "4",
        "--side",
        "upper-on-Vu",
        "--controller",
        path(&ctrl_path),
    ]);
    let surface = fs::read_to_string(out.join("surface_upper-on-Vu_d4.csv")).unwrap();
    assert!(surface.starts_with("x1,value\n"));
    assert_eq!(surface.lines().count(), 202);

    run(&[
        "gap",
        "--upper",
        path(&out.join("bound_upper-on-Vu_d4.json")),
        "--lower",
        path(&out.join("bound_lower-on-V_d4.json")),
    ]);
    let gap: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("gap.json")).unwrap()).unwrap();
    assert!(gap["gap_percent"].as_f64().unwrap() > 0.0, "{gap}");

    run(&[
        "simulate",
        "--controller",
        path(&ctrl_path),
        "--x0",
        "-0.5",
        "--t-max",
        "2",
    ]);
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,x1,u1\n"));
    assert_eq!(csv.lines().count(), 2002);

    let bound = out.join("bound_lower-on-V_d4.json");
    run(&[
        "simulate",
        "--controller",
        path(&ctrl_path),
        "--mc",
        "4",
        "--seed",
        "42",
        "--bound",
        path(&bound),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("cost_report.json")).unwrap()).unwrap();
    assert_eq!(report["samples"], 4);
    assert_eq!(report["seed"], 42);
    assert!(report["mean_cost"].as_f64().unwrap() >= report["mean_bound"].as_f64().unwrap() - 1e-3);
}

#[test]
fn simulate_rejects_bad_requests() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let cfg = scalar_config(out, "x1^2");
    let o = densopt(&[
        "synthesize",
        "--config",
        path(&cfg),
        "--degree",
        "2",
        "--out",
        path(out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = densopt(&[
        "bound",
        "--config",
        path(&cfg),
        "--degree",
        "2",
        "--side",
        "lower-on-V",
        "--out",
        path(out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ctrl = out.join("controller_d2.json");
    let bound = out.join("bound_lower-on-V_d2.json");
    let sim = |extra: &[&str]| {
        let mut args = vec![
            "simulate",
            "--config",
            path(&cfg),
            "--out",
            path(out),
            "--controller",
            path(&ctrl),
        ];
        args.extend(extra);
        densopt(&args)
    };
    assert_eq!(sim(&["--mc", "0", "--bound", path(&bound)]).status.code(), Some(1));
    assert_eq!(sim(&["--x0", "1.5"]).status.code(), Some(1));
    assert_eq!(sim(&["--x0", "0.1,0.2"]).status.code(), Some(1));
    assert_eq!(sim(&["--mc", "3"]).status.code(), Some(1));
    assert_eq!(sim(&["--x0", "0.1", "--step", "-1"]).status.code(), Some(1));
    assert_eq!(sim(&[]).status.code(), Some(1));
}

#[test]
fn thread_variable_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scalar_config(dir.path(), "x1^2");
    let o = Command::new(env!("CARGO_BIN_EXE_densopt"))
        .args([
            "synthesize",
            "--config",
            path(&cfg),
            "--degree",
            "2",
            "--out",
            path(dir.path()),
        ])
        .env("DENSOPT_THREADS", "none")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sdpa_export_parses_back() {
    let dir = tempfile::tempdir().unwrap();
    let text = read_config("double_integrator.cfg");
    let cfg_path = dir.path().join("di.cfg");
    fs::write(&cfg_path, &text).unwrap();
    let o = densopt(&[
        "export-sdpa",
        "--config",
        path(&cfg_path),
        "--degree",
        "4",
        "--stage",
        "density",
        "--out",
        path(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let parsed = parse_sdpa(&fs::read_to_string(dir.path().join("density_d4.dat-s")).unwrap()).unwrap();
    let settings = SynthesisConfig::default();
    let problem = ProblemConfig::parse(&text).unwrap().resolve(&settings).unwrap().problem;
    let compiled = stage_program(&problem, &settings, "density", 4, None)
        .unwrap()
        .compile()
        .unwrap();
    assert_eq!(parsed, compiled.sdp);
    let map = fs::read_to_string(dir.path().join("density_d4.map")).unwrap();
    assert!(map.starts_with("objective sign"));
    // stages that need a controller say so
    for stage in STAGES {
        let r = stage_program(&problem, &settings, stage, 4, None);
        assert_eq!(r.is_err(), stage.ends_with("_vu"), "{stage}");
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = scalar_config(a.path(), "x1^2");
    for out in [a.path(), b.path()] {
        let o = densopt(&[
            "synthesize",
            "--config",
            path(&cfg),
            "--degree",
            "4",
            "--out",
            path(out),
        ]);
        assert!(o.status.success());
    }
    for name in ["controller_d4.json", "density_d4.json", "solver_log_density_d4.csv"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}
