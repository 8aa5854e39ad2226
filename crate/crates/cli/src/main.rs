use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use optochaos::config::{default_analysis, load_run, load_sweep, parse_run, RunConfig};
use optochaos::embedding::{delay_embed, density_grid, PointCloud};
use optochaos::io::{
    ensure_dir, read_json, read_table, write_csv, write_density, write_json, write_label_track,
    write_spectrum, write_synthesized, write_trajectory, Provenance,
};
use optochaos::model::{find_threshold, integrate, State, SystemParams};
use optochaos::regime::{analyze_series, regime_classify, AnalysisConfig};
use optochaos::report::render_report;
use optochaos::segmentation::{fit_duty_cycle, DutyCycleFit};
use optochaos::sensing::{nep, ranking, regime_comparison, ComparisonEntry, UltrasoundStimulus};
use optochaos::sweep::{resolve_out_dir, run_sweep, SweepResult};
use optochaos::{Error, Result, TimeSeries};

/// Simulate, segment and compare regimes of a driven optomechanical cavity.
#[derive(Parser)]
#[command(name = "optochaos", version)]
struct Cli {
    /// Run or sweep configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory [default: out].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads [default: 1, or the plan's `jobs` for sweeps].
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the model and write the trajectory.
    Simulate {
        /// Also search the configured drive range for the oscillation onset.
        #[arg(long)]
        threshold: bool,
    },
    /// Gate periodic and chaotic sources into an intermittent fixture.
    Synthesize {
        #[arg(long)]
        period: Option<f64>,
        #[arg(long)]
        duty: Option<f64>,
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Label windows of a series periodic or chaotic.
    Segment(InputArgs),
    /// Welch spectrum of a series.
    Spectrum(InputArgs),
    /// Occupancy grid of the phase plane or a delay embedding.
    Portrait {
        #[command(flatten)]
        input: InputArgs,
        /// Delay in samples; embeds the chosen column instead of using (x, v).
        #[arg(long)]
        tau: Option<usize>,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Regime label with evidence, for a CSV or a fresh simulation.
    Classify {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        column: Option<String>,
    },
    /// Stimulated response of several configurations, ranked by SNR.
    Sense {
        /// Configurations to compare.
        #[arg(required = true, num_args = 2..)]
        configs: Vec<PathBuf>,
        /// Stimulus frequency f_u (Hz).
        #[arg(long)]
        frequency: Option<f64>,
        /// Stimulus amplitude.
        #[arg(long)]
        amplitude: Option<f64>,
        /// Stimulus power P_u (W).
        #[arg(long)]
        power: Option<f64>,
        /// Bandwidth B used for the NEP (Hz); defaults to the resolution bandwidth.
        #[arg(long)]
        bandwidth: Option<f64>,
    },
    /// Run a parameter sweep.
    Sweep,
    /// Summarize a finished sweep directory.
    Report {
        /// Directory holding sweep.json.
        #[arg(long)]
        input: PathBuf,
        /// Sensing JSON to include in the report.
        #[arg(long)]
        sensing: Option<PathBuf>,
    },
}

#[derive(Args)]
struct InputArgs {
    /// CSV with a `t` column.
    #[arg(long)]
    input: PathBuf,
    /// Column to analyse; defaults to `value` when present, else the
    /// configured column.
    #[arg(long)]
    column: Option<String>,
    /// Analysis window (s).
    #[arg(long)]
    window: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Simulate { threshold } => simulate(cli, *threshold),
        Command::Synthesize {
            period,
            duty,
            duration,
        } => synthesize(cli, *period, *duty, *duration),
        Command::Segment(input) => segment(cli, input),
        Command::Spectrum(input) => spectrum(cli, input),
        Command::Portrait { input, tau, bins } => portrait(cli, input, *tau, *bins),
        Command::Classify { input, column } => classify(cli, input.as_deref(), column.as_deref()),
        Command::Sense {
            configs,
            frequency,
            amplitude,
            power,
            bandwidth,
        } => sense(cli, configs, *frequency, *amplitude, *power, *bandwidth),
        Command::Sweep => sweep(cli),
        Command::Report { input, sensing } => report(cli, input, sensing.as_deref()),
    }
}

fn run_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => load_run(path)?,
        None => parse_run("", Path::new("<defaults>"))?,
    };
    if let Some(seed) = cli.seed {
        if let Some(p) = cfg.system.as_mut() {
            p.seed = seed;
        }
        cfg.fixture.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> Result<&Path> {
    let out = cli.out.as_deref().unwrap_or(Path::new("out"));
    ensure_dir(out)?;
    Ok(out)
}

fn provenance(p: Option<&SystemParams>) -> Provenance {
    Provenance::new(p.map(|p| p.seed), p.map(SystemParams::hash))
}

fn simulate(cli: &Cli, threshold: bool) -> Result<u8> {
    let cfg = run_config(cli)?;
    let p = cfg.system()?;
    let out = out_dir(cli)?;
    let traj = integrate(p, State::default(), None)?;
    write_trajectory(
        &out.join("trajectory.csv"),
        &traj,
        Some(p),
        None,
        provenance(Some(p)),
    )?;
    if threshold {
        let scan = cfg
            .threshold
            .ok_or_else(|| precondition("threshold", "configuration has no [threshold] table"))?;
        let found = find_threshold(p, (scan.drive_min, scan.drive_max), scan.steps)?;
        write_json(
            &out.join("threshold.json"),
            &json!({ "scan": scan, "result": found, "provenance": provenance(Some(p)) }),
        )?;
    }
    println!("{} samples at {:.6e} Hz", traj.len(), traj.fs);
    Ok(0)
}

fn synthesize(
    cli: &Cli,
    period: Option<f64>,
    duty: Option<f64>,
    duration: Option<f64>,
) -> Result<u8> {
    let cfg = run_config(cli)?;
    let gate = cfg.gate;
    let (period, duty, duration) = (
        period.unwrap_or(gate.period),
        duty.unwrap_or(gate.duty),
        duration.unwrap_or(gate.duration),
    );
    let sig = cfg.fixture.intermittent(period, duty, duration)?;
    let out = out_dir(cli)?;
    let prov = Provenance::new(Some(cfg.fixture.seed), None);
    write_synthesized(&out.join("synthesized.csv"), &sig, prov.clone())?;
    write_json(
        &out.join("manifest.json"),
        &json!({ "fixture": cfg.fixture, "gate": sig.spec, "duration": duration, "provenance": prov }),
    )?;
    println!("chaotic fraction {:.4}", sig.chaotic_fraction());
    Ok(0)
}

/// Analysis settings and series for a CSV input. Without `--config`, a
/// trajectory sidecar's parameters set the window.
fn load_input(cli: &Cli, input: &InputArgs) -> Result<(AnalysisConfig, TimeSeries, Provenance)> {
    let sidecar: Option<serde_json::Value> =
        read_json(&optochaos::io::sidecar_path(&input.input)).ok();
    let field = |name: &str| sidecar.as_ref().and_then(|v| v.get(name)).cloned();
    let params: Option<SystemParams> = field("params").and_then(|v| serde_json::from_value(v).ok());
    let mut analysis = match (&cli.config, &params) {
        (None, Some(p)) => default_analysis(p.omega_m)?,
        _ => run_config(cli)?.analysis,
    };
    if let Some(w) = input.window {
        analysis.segmentation.window = w;
        analysis.segmentation.hop = 0.5 * w;
        analysis.segmentation.min_epoch = Some(3.0 * w);
    }
    let column = pick_column(&input.input, input.column.as_deref(), &analysis)?;
    let ts = optochaos::io::read_series(&input.input, &column)?;
    let prov = field("provenance")
        .and_then(|v| serde_json::from_value(v).ok())
        .unwrap_or_else(|| provenance(None));
    Ok((analysis, ts, prov))
}

fn pick_column(path: &Path, explicit: Option<&str>, analysis: &AnalysisConfig) -> Result<String> {
    if let Some(c) = explicit {
        return Ok(c.to_string());
    }
    let table = read_table(path)?;
    Ok(if table.column("value").is_some() {
        "value".into()
    } else {
        analysis.column.name().into()
    })
}

fn segment(cli: &Cli, input: &InputArgs) -> Result<u8> {
    let (analysis, ts, prov) = load_input(cli, input)?;
    let a = analyze_series(&ts, &analysis)?;
    let fit = fit_duty_cycle(a.report());
    let out = out_dir(cli)?;
    write_label_track(
        &out.join("labels.csv"),
        &a.segmentation.features,
        &a.segmentation.labels,
        a.report().window,
        prov.clone(),
    )?;
    write_json(
        &out.join("segments.json"),
        &json!({ "report": a.report(), "duty_cycle": fit, "provenance": prov }),
    )?;
    println!(
        "chaotic fraction {:.4} over {} epochs",
        a.report().chaotic_fraction,
        a.report().segments.len()
    );
    match fit {
        DutyCycleFit::Estimate(_) => Ok(0),
        DutyCycleFit::InsufficientEpochs { chaotic_epochs } => {
            eprintln!("insufficient epochs: {chaotic_epochs} chaotic");
            Ok(4)
        }
    }
}

fn spectrum(cli: &Cli, input: &InputArgs) -> Result<u8> {
    let (analysis, ts, prov) = load_input(cli, input)?;
    let spec = analysis.spectrum(&ts)?;
    write_spectrum(&out_dir(cli)?.join("spectrum.csv"), &spec, prov)?;
    println!(
        "{} bins, resolution {:.6e} Hz",
        spec.len(),
        spec.resolution_bandwidth
    );
    Ok(0)
}

fn portrait(cli: &Cli, input: &InputArgs, tau: Option<usize>, bins: Option<usize>) -> Result<u8> {
    let (analysis, ts, prov) = load_input(cli, input)?;
    let bins = bins.unwrap_or(analysis.density_bins);
    let (cloud, axes) = match tau {
        Some(tau) => (delay_embed(&ts, tau, 2)?, ("s(t)", "s(t+tau)")),
        None => {
            let table = read_table(&input.input)?;
            match (table.column("x"), table.column("v")) {
                (Some(x), Some(v)) => (PointCloud::from_pairs(x, v)?, ("x", "v")),
                _ => {
                    return Err(precondition(
                        "tau",
                        "input has no x and v columns; pass --tau to embed",
                    ))
                }
            }
        }
    };
    let grid = density_grid(&cloud, bins)?;
    write_density(&out_dir(cli)?.join("density.csv"), &grid, axes, prov)?;
    println!(
        "{} of {} cells occupied",
        grid.occupied_cells(),
        bins * bins
    );
    Ok(0)
}

fn classify(cli: &Cli, input: Option<&Path>, column: Option<&str>) -> Result<u8> {
    let (analysis, prov) = match input {
        Some(path) => {
            let args = InputArgs {
                input: path.to_path_buf(),
                column: column.map(str::to_string),
                window: None,
            };
            let (analysis, ts, prov) = load_input(cli, &args)?;
            (analyze_series(&ts, &analysis)?, prov)
        }
        None => {
            let mut cfg = run_config(cli)?;
            let p = cfg.system()?.clone();
            if let Some(c) = column {
                cfg.analysis.column = c.parse()?;
            }
            let traj = integrate(&p, State::default(), None)?;
            (
                regime_classify(&traj, &cfg.analysis, Some(&p))?,
                provenance(Some(&p)),
            )
        }
    };
    write_json(
        &out_dir(cli)?.join("regime.json"),
        &json!({ "regime": analysis.regime, "floor_db": analysis.floor_db, "provenance": prov }),
    )?;
    println!(
        "{} (chaotic fraction {:.4})",
        analysis.regime.label, analysis.regime.evidence.chaotic_fraction
    );
    Ok(0)
}

fn sense(
    cli: &Cli,
    configs: &[PathBuf],
    frequency: Option<f64>,
    amplitude: Option<f64>,
    power: Option<f64>,
    bandwidth: Option<f64>,
) -> Result<u8> {
    let loaded = configs
        .iter()
        .map(|path| load_run(path).map(|c| (path, c)))
        .collect::<Result<Vec<_>>>()?;
    // Stimulus, analysis and SNR settings come from --config when given,
    // else from the first configuration.
    let shared = match &cli.config {
        Some(path) => load_run(path)?,
        None => loaded[0].1.clone(),
    };
    let mut stim = shared.stimulus.unwrap_or_default();
    stim = UltrasoundStimulus {
        frequency: frequency.unwrap_or(stim.frequency),
        amplitude: amplitude.unwrap_or(stim.amplitude),
        power: power.unwrap_or(stim.power),
        ..stim
    };
    let named = loaded
        .iter()
        .map(|(path, c)| {
            let mut p = c.system()?.clone();
            if let Some(seed) = cli.seed {
                p.seed = seed;
            }
            let name = path.file_stem().map_or_else(
                || path.display().to_string(),
                |s| s.to_string_lossy().into_owned(),
            );
            Ok((name, p))
        })
        .collect::<Result<Vec<_>>>()?;
    let pool = rayon_pool(cli.jobs.unwrap_or(1))?;
    let mut entries =
        pool.install(|| regime_comparison(&named, &stim, &shared.analysis, &shared.snr))?;
    if let Some(b) = bandwidth {
        for e in &mut entries {
            if let ComparisonEntry::Ok(r) = e {
                r.nep = nep(stim.power, r.snr, b).ok();
                r.bandwidth = b;
            }
        }
    }
    let out = out_dir(cli)?;
    write_json(
        &out.join("sensing.json"),
        &json!({ "stimulus": stim, "reports": entries, "provenance": provenance(None) }),
    )?;
    let ranked = ranking(&entries);
    let rows: Vec<Vec<String>> = ranked
        .iter()
        .enumerate()
        .map(|(i, r)| {
            vec![
                (i + 1).to_string(),
                r.name.clone(),
                r.regime.name().into(),
                format!("{:e}", r.chaotic_fraction),
                format!("{:e}", r.snr_db),
                format!("{:e}", r.peak_db),
                format!("{:e}", r.floor_db),
                r.nep.map_or_else(String::new, |n| format!("{n:e}")),
            ]
        })
        .collect();
    write_csv(
        &out.join("ranking.csv"),
        &[
            "rank",
            "name",
            "regime",
            "chaotic_fraction",
            "snr_db",
            "peak_db",
            "floor_db",
            "nep",
        ],
        &rows,
    )?;
    for r in &ranked {
        println!(
            "{:<16} {:<20} {:>8.2} dB",
            r.name,
            r.regime.name(),
            r.snr_db
        );
    }
    Ok(0)
}

fn rayon_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| precondition("jobs", &e.to_string()))
}

fn sweep(cli: &Cli) -> Result<u8> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| precondition("config", "sweep needs --config <plan>"))?;
    let mut plan = load_sweep(path)?;
    if let Some(seed) = cli.seed {
        plan.master_seed = seed;
    }
    let out = resolve_out_dir(cli.out.as_deref(), &plan).unwrap_or_else(|| "out".into());
    let jobs = cli.jobs.or(plan.jobs).unwrap_or(1);
    let result = run_sweep(&plan, Some(&out), jobs)?;
    for r in &result.rows {
        println!(
            "{:>14.6e}  {:>6}  {}",
            r.value,
            r.chaotic_fraction
                .map_or_else(|| "-".into(), |f| format!("{f:.3}")),
            r.regime
                .map_or_else(|| r.error.clone().unwrap_or_default(), |l| l.name().into())
        );
    }
    println!("wrote {}", out.join("sweep.json").display());
    Ok(0)
}

fn report(cli: &Cli, input: &Path, sensing: Option<&Path>) -> Result<u8> {
    let result: SweepResult = read_json(&input.join("sweep.json"))?;
    let entries: Option<Vec<ComparisonEntry>> = sensing
        .map(|path| {
            let v: serde_json::Value = read_json(path)?;
            serde_json::from_value(v["reports"].clone()).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                reason: e.to_string(),
            })
        })
        .transpose()?;
    let bins = match &cli.config {
        Some(_) => run_config(cli)?.analysis.density_bins,
        None => 64,
    };
    let out = cli.out.clone().unwrap_or_else(|| input.join("report"));
    let summary = render_report(&result, input, &out, entries.as_deref(), bins)?;
    for note in &summary.notes {
        eprintln!("note: {note}");
    }
    println!("wrote {}", out.join("report.md").display());
    Ok(0)
}

fn precondition(field: &str, reason: &str) -> Error {
    Error::Precondition {
        field: field.into(),
        reason: reason.into(),
    }
}
