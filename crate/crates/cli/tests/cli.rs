use std::path::Path;
use std::process::{Command, Output};

fn optochaos(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_optochaos"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

const SYSTEM: &str = r#"
[system]
mechanical_frequency_hz = 21.5e6
mechanical_q = 2300.0
optical_q = 1.07e7
carrier_wavelength_m = 1550e-9
coupling_ratio = 0.5
g0 = 1.3508848410e8
delta = DELTA
drive_amplitude = DRIVE
noise_sigma = 20.0
dt = 3.7e-10
t_transient = 2e-5
t_record = 1.5e-4
decimation = 5
seed = 3

[analysis]
nfft = 2048

[stimulus]
frequency = 570e3
amplitude = 1e6
power = 1e-6
"#;

fn system_cfg(dir: &Path, name: &str, delta: &str, drive: &str) -> String {
    let file = format!("{name}.cfg");
    std::fs::write(
        dir.join(&file),
        SYSTEM.replace("DELTA", delta).replace("DRIVE", drive),
    )
    .unwrap();
    file
}

#[test]
fn synthesize_then_analyse() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = optochaos(
        d,
        &[
            "synthesize",
            "--period",
            "1",
            "--duty",
            "0.3",
            "--duration",
            "8",
            "--out",
            "syn",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(d.join("syn/synthesized.csv")).unwrap();
    assert!(csv.starts_with("t,value,label\n"));
    assert!(d.join("syn/manifest.json").exists());

    let out = optochaos(
        d,
        &["segment", "--input", "syn/synthesized.csv", "--out", "seg"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let seg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("seg/segments.json")).unwrap())
            .unwrap();
    let fraction = seg["report"]["chaotic_fraction"].as_f64().unwrap();
    assert!((fraction - 0.3).abs() < 0.05, "{fraction}");
    assert_eq!(seg["duty_cycle"]["status"], "estimate");
    assert_eq!(seg["provenance"]["seed"], 1);
    let labels = std::fs::read_to_string(d.join("seg/labels.csv")).unwrap();
    assert!(
        labels.starts_with("t_start,t_end,spectral_flatness,zero_one_k,period_return_error,label")
    );

    let out = optochaos(
        d,
        &[
            "spectrum",
            "--input",
            "syn/synthesized.csv",
            "--out",
            "spec",
        ],
    );
    assert_eq!(code(&out), 0);
    let spec = std::fs::read_to_string(d.join("spec/spectrum.csv")).unwrap();
    assert!(spec.starts_with("freq_hz,psd,psd_db\n"));

    let out = optochaos(
        d,
        &[
            "portrait",
            "--input",
            "syn/synthesized.csv",
            "--tau",
            "2",
            "--bins",
            "16",
            "--out",
            "por",
        ],
    );
    assert_eq!(code(&out), 0);
    let grid = std::fs::read_to_string(d.join("por/density.csv")).unwrap();
    assert_eq!(grid.lines().count(), 16);
    assert!(d.join("por/density.json").exists());

    let out = optochaos(
        d,
        &["classify", "--input", "syn/synthesized.csv", "--out", "cls"],
    );
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("intermittent_chaos"));
}

#[test]
fn purely_periodic_series_reports_insufficient_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(
        code(&optochaos(
            d,
            &[
                "synthesize",
                "--period",
                "1",
                "--duty",
                "0",
                "--duration",
                "4"
            ]
        )),
        0
    );
    let out = optochaos(d, &["segment", "--input", "out/synthesized.csv"]);
    assert_eq!(code(&out), 4);
    assert!(d.join("out/segments.json").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bad = SYSTEM
        .replace("DELTA", "-1.9e8")
        .replace("DRIVE", "6.75e8")
        .replace("coupling_ratio = 0.5", "coupling_ratio = 1.5");
    std::fs::write(d.join("bad.cfg"), bad).unwrap();
    let out = optochaos(d, &["simulate", "--config", "bad.cfg"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("kappa_ex"));

    let cfg = system_cfg(d, "blowup", "-1.9e8", "1e20");
    let out = optochaos(d, &["simulate", "--config", &cfg]);
    assert_eq!(code(&out), 3);

    let out = optochaos(d, &["spectrum", "--input", "missing.csv"]);
    assert_ne!(code(&out), 0);

    std::fs::write(d.join("tiny.csv"), "t,value\n0,1\n1,2\n2,3\n").unwrap();
    let out = optochaos(d, &["segment", "--input", "tiny.csv", "--window", "10"]);
    assert_eq!(code(&out), 4);
}

#[test]
fn simulate_and_classify_a_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = system_cfg(d, "periodic", "-1.8912387775e8", "6.7544242052e8");
    let out = optochaos(d, &["simulate", "--config", &cfg, "--seed", "11"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let traj = std::fs::read_to_string(d.join("out/trajectory.csv")).unwrap();
    assert!(traj.starts_with("t,intensity,x,v\n"));
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("out/trajectory.json")).unwrap())
            .unwrap();
    assert_eq!(meta["provenance"]["seed"], 11);
    assert_eq!(meta["params"]["seed"], 11);

    // The window comes from the trajectory's own parameters.
    let out = optochaos(
        d,
        &["segment", "--input", "out/trajectory.csv", "--out", "seg"],
    );
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    let out = optochaos(
        d,
        &["portrait", "--input", "out/trajectory.csv", "--out", "por"],
    );
    assert_eq!(code(&out), 0);

    let out = optochaos(d, &["classify", "--config", &cfg, "--out", "cls"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("periodic"));
}

#[test]
fn sweep_is_identical_across_job_counts_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let base = system_cfg(d, "base", "-1.8912387775e8", "6.7544242052e8");
    std::fs::write(
        d.join("plan.cfg"),
        format!(
            "[sweep]\nbase = \"{base}\"\nstart = -1.9e8\nstop = -1.7e8\nn = 3\nmaster_seed = 4\n"
        ),
    )
    .unwrap();
    for (jobs, out) in [("1", "a"), ("3", "b")] {
        let o = optochaos(
            d,
            &[
                "sweep", "--config", "plan.cfg", "--jobs", jobs, "--out", out,
            ],
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for file in [
        "sweep.json",
        "sweep.csv",
        "point_0001/trajectory.csv",
        "point_0001/labels.csv",
        "point_0002/report.json",
    ] {
        assert_eq!(
            std::fs::read(d.join("a").join(file)).unwrap(),
            std::fs::read(d.join("b").join(file)).unwrap(),
            "{file}"
        );
    }
    let o = optochaos(
        d,
        &["sweep", "--config", "plan.cfg", "--seed", "5", "--out", "c"],
    );
    assert_eq!(code(&o), 0);
    assert_ne!(
        std::fs::read(d.join("a/sweep.json")).unwrap(),
        std::fs::read(d.join("c/sweep.json")).unwrap()
    );

    let o = optochaos(d, &["report", "--input", "a"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let md = std::fs::read_to_string(d.join("a/report/report.md")).unwrap();
    assert!(md.contains("3 points, 0 failed"));
    let table = std::fs::read_to_string(d.join("a/report/fraction_vs_delta.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
}

#[test]
fn sense_ranks_configurations() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let a = system_cfg(d, "quiet", "-1.8912387775e8", "6.7544242052e8");
    let b = system_cfg(d, "noisy", "-1.4859733251e8", "6.7544242052e8");
    let out = optochaos(
        d,
        &["sense", &a, &b, "--bandwidth", "100", "--out", "sense"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("sense/sensing.json")).unwrap())
            .unwrap();
    let reports = json["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[0]["name"], "quiet");
    assert_eq!(reports[0]["bandwidth"], 100.0);
    let ranking = std::fs::read_to_string(d.join("sense/ranking.csv")).unwrap();
    assert_eq!(ranking.lines().count(), 3);

    let out = optochaos(d, &["sense", &a]);
    assert_eq!(code(&out), 2);
}
