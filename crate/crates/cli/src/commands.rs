//! Subcommand implementations.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use favbot_core::controller::{ControllerState, MissionOutcome, MissionRun, ParameterSet, TargetSchedule};
use favbot_core::experiments::{scout, sweep, ScoutConfig, SweepConfig};
use favbot_core::kinematics::{marks_to_pose, write_characterization_csv, write_trajectory_csv, TrajectorySample};
use favbot_core::protocol::{CommandQueue, Driver, DriverConfig, Server};
use favbot_core::resonance::{load_mode_table, ModeTable, DEFAULT_CALIBRATION};
use favbot_core::telemetry::TelemetryFrame;
use favbot_core::vision::dataset::{class_histogram, write_archive};
use favbot_core::vision::train::{train_with_progress, write_metrics_csv};
use favbot_core::vision::{export_params, generate_dataset, import_params, CnnParams, GroundTruthClassifier, TrainConfig, ZoneClassifier, ZoneLabel};
use favbot_core::world::{Capture, Scenario};
use serde::Serialize;

use crate::gateway::Gateway;
use crate::output::{OutputDir, RunRecord};
use crate::svg::{Chart, Series};

#[derive(Debug, Parser)]
#[command(name = "favbot", version, about = "Simulate, characterize and steer a frequency-driven vibration robot")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Global {
    /// Mode table CSV; the built-in calibration when omitted.
    #[arg(long, global = true)]
    pub calibration: Option<PathBuf>,
    /// Replace an existing output directory.
    #[arg(long, global = true)]
    pub force: bool,
    /// Skip the SVG plots.
    #[arg(long, global = true)]
    pub no_svg: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Drive each frequency open loop and summarize the motion.
    Sweep(SweepArgs),
    /// Run one autonomous mission on a scenario.
    Track(TrackArgs),
    /// Alternate a clockwise and a counter-clockwise mode in place.
    Scout(ScoutArgs),
    /// Generate a synthetic dataset and train the zone classifier.
    Train(TrainArgs),
    /// Run the live system behind the command, telemetry and websocket ports.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SweepArgs {
    #[arg(long, default_value_t = 1)]
    pub start: u32,
    #[arg(long, default_value_t = 100)]
    pub end: u32,
    /// Seconds of actuation per frequency.
    #[arg(long, default_value_t = 30.0)]
    pub duration: f64,
    /// Analysis window, seconds.
    #[arg(long, default_value_t = 1.0)]
    pub window: f64,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short, default_value = "runs/sweep")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrackArgs {
    /// Mode parameter set (TOML).
    #[arg(long)]
    pub params: PathBuf,
    /// Scenario file (TOML).
    #[arg(long)]
    pub scenario: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the scenario noise scale.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, default_value_t = favbot_core::controller::DEFAULT_MAX_CYCLES)]
    pub max_cycles: u32,
    /// Trained classifier weights; the exact zone from the renderer when omitted.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, short, default_value = "runs/track")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScoutArgs {
    #[arg(long, default_value_t = 10)]
    pub cycles: u32,
    #[arg(long, default_value_t = 58)]
    pub cw: u32,
    #[arg(long, default_value_t = 59)]
    pub ccw: u32,
    /// Seconds per cycle.
    #[arg(long, default_value_t = 6.0)]
    pub segment: f64,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short, default_value = "runs/scout")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// Training configuration (TOML); defaults for anything missing.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub dataset_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the generated images and labels under `dataset/`.
    #[arg(long)]
    pub save_dataset: bool,
    #[arg(long, short, default_value = "runs/train")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ServeArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    pub scenario: PathBuf,
    /// Trained classifier weights; the exact zone from the renderer when omitted.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:7400")]
    pub command_addr: String,
    #[arg(long, default_value = "127.0.0.1:7401")]
    pub telemetry_addr: String,
    /// WebSocket gateway address; `off` disables it.
    #[arg(long, default_value = "127.0.0.1:7402")]
    pub ws_addr: String,
    /// Simulated seconds per wall-clock second; `inf` runs unpaced.
    #[arg(long, default_value_t = 1.0)]
    pub time_scale: f64,
    /// Simulated seconds per characterization step.
    #[arg(long, default_value_t = 0.2)]
    pub chunk: f64,
    #[arg(long, default_value_t = favbot_core::controller::DEFAULT_MAX_CYCLES)]
    pub max_cycles: u32,
    #[arg(long, default_value_t = 64)]
    pub queue: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for run.json and one folder per finished mission.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Stop after this many wall-clock seconds.
    #[arg(long)]
    pub duration: Option<f64>,
}

/// How a successful invocation ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    NotReached,
}

pub fn run(cli: Cli) -> Result<Status> {
    let g = &cli.global;
    match &cli.command {
        Command::Sweep(a) => run_sweep(g, a),
        Command::Track(a) => run_track(g, a),
        Command::Scout(a) => run_scout(g, a),
        Command::Train(a) => run_train(g, a),
        Command::Serve(a) => run_serve(g, a),
    }
}

fn load_table(g: &Global) -> Result<(ModeTable, String)> {
    let text = match &g.calibration {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading calibration {}", p.display()))?,
        None => DEFAULT_CALIBRATION.to_string(),
    };
    let table = load_mode_table(&text).context("parsing calibration")?;
    Ok((table, text))
}

/// Classifier chosen on the command line.
pub enum Classifier {
    Cnn(Box<CnnParams<f32>>),
    Exact(GroundTruthClassifier),
}

impl Classifier {
    pub fn load(weights: Option<&Path>) -> Result<Self> {
        Ok(match weights {
            Some(p) => {
                let blob = fs::read(p).with_context(|| format!("reading weights {}", p.display()))?;
                Self::Cnn(Box::new(import_params(&blob).with_context(|| format!("loading weights {}", p.display()))?))
            }
            None => Self::Exact(GroundTruthClassifier),
        })
    }
}

impl ZoneClassifier for Classifier {
    fn classify(&mut self, capture: &Capture) -> ZoneLabel {
        match self {
            Self::Cnn(p) => p.classify(capture),
            Self::Exact(g) => g.classify(capture),
        }
    }
}

fn trajectory_points(samples: &[TrajectorySample]) -> Vec<(f64, f64)> {
    samples
        .iter()
        .filter_map(|s| marks_to_pose(s).ok())
        .map(|p| (p.x_c, p.y_c))
        .collect()
}

fn run_sweep(g: &Global, a: &SweepArgs) -> Result<Status> {
    let (table, calibration) = load_table(g)?;
    let cfg = SweepConfig {
        start_khz: a.start,
        end_khz: a.end,
        duration_s: a.duration,
        window_s: a.window,
        noise_scale: a.noise,
        seed: a.seed,
        ..SweepConfig::default()
    };
    let out = OutputDir::create(&a.out, g.force)?;
    let t0 = Instant::now();
    let runs = sweep(&table, &cfg)?;
    let rows: Vec<_> = runs.iter().map(|r| r.row).collect();
    write_characterization_csv(out.file("characterization.csv")?, &rows)?;
    for r in &runs {
        write_trajectory_csv(out.file(&format!("trajectories/{:03}khz.csv", r.row.freq_khz))?, &r.trajectory)?;
    }
    if !g.no_svg {
        let f = |sel: fn(&favbot_core::kinematics::CharacterizationRow) -> f64| rows.iter().map(|r| (r.freq_khz as f64, sel(r))).collect();
        let speed = Chart::new("Linear velocity by frequency", "frequency [kHz]", "velocity [cm/s]")
            .with(Series::line("|v|", f(|r| r.v)))
            .with(Series::line("v_t", f(|r| r.v_t)))
            .with(Series::line("v_l", f(|r| r.v_l)));
        out.write("speed.svg", speed.render())?;
        let omega = Chart::new("Angular velocity by frequency", "frequency [kHz]", "omega [rad/s]")
            .with(Series::line("omega", f(|r| r.omega)));
        out.write("omega.svg", omega.render())?;
    }
    out.write("calibration.csv", &calibration)?;
    out.write_json("run.json", &RunRecord::new("sweep", &(a, g, cfg)).input("calibration", "calibration.csv"))?;
    let dest = out.commit()?;
    println!(
        "swept {}..={} kHz in {:.2?}; wrote {}",
        a.start,
        a.end,
        t0.elapsed(),
        dest.display()
    );
    Ok(Status::Success)
}

#[derive(Debug, Serialize)]
struct TrackConfig<'a> {
    args: &'a TrackArgs,
    global: &'a Global,
    seed: u64,
    noise_scale: f64,
    classifier: &'static str,
}

fn run_track(g: &Global, a: &TrackArgs) -> Result<Status> {
    let (table, calibration) = load_table(g)?;
    let mut scenario = Scenario::load(&a.scenario).with_context(|| format!("loading scenario {}", a.scenario.display()))?;
    if let Some(n) = a.noise {
        scenario.noise_scale = n;
    }
    let params = ParameterSet::load(&a.params).with_context(|| format!("loading parameter set {}", a.params.display()))?;
    let mut classifier = Classifier::load(a.weights.as_deref())?;
    let seed = a.seed.unwrap_or(scenario.seed);
    let out = OutputDir::create(&a.out, g.force)?;

    let mut world = scenario.build_world_with_seed(seed);
    let mut state = ControllerState::new(a.max_cycles).with_registry(params.registry.clone());
    state.start_autonomy().context("starting autonomy")?;
    let mut schedule = TargetSchedule::from_scenario(&scenario);
    let MissionRun { mut report, trajectory } =
        favbot_core::controller::run_mission(&mut state, &mut world, &table, &mut classifier, &mut schedule)?;
    report.trajectory_csv_path = Some("trajectory.csv".into());

    write_trajectory_csv(out.file("trajectory.csv")?, &trajectory)?;
    out.write("report.json", report.to_json_pretty() + "\n")?;
    let mut tel = out.file("telemetry.jsonl")?;
    for f in world.telemetry().snapshot() {
        tel.write_all(f.to_json_line().as_bytes())?;
    }
    tel.flush()?;
    drop(tel);
    if !g.no_svg {
        let targets = scenario.waypoints.iter().map(|w| (w.x, w.y)).collect();
        let chart = Chart::new(&format!("Mission with {}", params.name), "x [cm]", "y [cm]")
            .equal_aspect()
            .with(Series::line("robot center", trajectory_points(&trajectory)))
            .with(Series::markers("targets", targets));
        out.write("trajectory.svg", chart.render())?;
    }
    out.write("params.toml", params.to_toml_string())?;
    out.write("scenario.toml", scenario.to_toml_string())?;
    out.write("calibration.csv", &calibration)?;
    let cfg = TrackConfig {
        args: a,
        global: g,
        seed,
        noise_scale: scenario.noise_scale,
        classifier: match classifier {
            Classifier::Cnn(_) => "cnn",
            Classifier::Exact(_) => "exact",
        },
    };
    let mut record = RunRecord::new("track", &cfg)
        .input("params", "params.toml")
        .input("scenario", "scenario.toml")
        .input("calibration", "calibration.csv");
    if let Some(w) = &a.weights {
        fs::copy(w, out.path().join("weights.favw"))?;
        record = record.input("weights", "weights.favw");
    }
    out.write_json("run.json", &record)?;
    let dest = out.commit()?;

    let reached = report.waypoints.iter().filter(|h| h.reached).count();
    println!(
        "{:?} after {} cycles; {reached}/{} waypoints; {} over-corrections; wrote {}",
        report.outcome,
        report.cycles,
        scenario.waypoints.len(),
        report.over_correction_events.len(),
        dest.display()
    );
    Ok(match report.outcome {
        MissionOutcome::Reached => Status::Success,
        MissionOutcome::BudgetExhausted => Status::NotReached,
    })
}

fn run_scout(g: &Global, a: &ScoutArgs) -> Result<Status> {
    let (table, calibration) = load_table(g)?;
    let cfg = ScoutConfig {
        cycles: a.cycles,
        cw_khz: a.cw,
        ccw_khz: a.ccw,
        segment_s: a.segment,
        noise_scale: a.noise,
        seed: a.seed,
        ..ScoutConfig::default()
    };
    if a.cycles == 0 {
        bail!("--cycles must be at least 1");
    }
    let out = OutputDir::create(&a.out, g.force)?;
    let report = scout(&table, &cfg)?;
    out.write_json("scout.json", &report)?;
    write_trajectory_csv(out.file("trajectory.csv")?, &report.trajectory)?;
    if !g.no_svg {
        let mut heading = Vec::with_capacity(report.trajectory.len());
        let mut unwrapped = 0.0;
        let mut prev = None;
        for s in &report.trajectory {
            let p = marks_to_pose(s)?;
            if let Some(q) = prev {
                unwrapped += favbot_core::kinematics::wrap_angle(p.theta - q);
            }
            prev = Some(p.theta);
            heading.push((s.t, unwrapped.to_degrees()));
        }
        out.write(
            "heading.svg",
            Chart::new("Heading while scouting", "t [s]", "heading change [deg]")
                .with(Series::line("heading", heading))
                .render(),
        )?;
        out.write(
            "trajectory.svg",
            Chart::new("Center track while scouting", "x [cm]", "y [cm]")
                .equal_aspect()
                .with(Series::line("robot center", trajectory_points(&report.trajectory)))
                .render(),
        )?;
    }
    out.write("calibration.csv", &calibration)?;
    out.write_json("run.json", &RunRecord::new("scout", &(a, g, cfg)).input("calibration", "calibration.csv"))?;
    let dest = out.commit()?;
    println!(
        "coverage {:.1} deg, span {:.1} deg, net displacement {:.3} cm; wrote {}",
        report.coverage_rad.to_degrees(),
        report.heading_span_rad.to_degrees(),
        report.net_displacement_cm,
        dest.display()
    );
    Ok(Status::Success)
}

pub fn resolve_train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(n) = a.dataset_size {
        cfg.dataset_size = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    final_val_acc: f64,
    train_acc: f64,
    class_histogram: [usize; 4],
    seconds: f64,
}

fn run_train(g: &Global, a: &TrainArgs) -> Result<Status> {
    let cfg = resolve_train_config(a)?;
    let out = OutputDir::create(&a.out, g.force)?;
    let t0 = Instant::now();
    let data = generate_dataset(cfg.dataset_size, cfg.seed)?;
    let histogram = class_histogram(&data);
    eprintln!("generated {} samples {:?} in {:.1?}", data.len(), histogram, t0.elapsed());
    if a.save_dataset {
        write_archive(&out.path().join("dataset"), &data)?;
    }
    let outcome = train_with_progress(&cfg, &data, |m| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  val_acc {:.4}  ({:.1?})",
            m.epoch,
            m.train_loss,
            m.val_acc,
            t0.elapsed()
        );
    })?;
    out.write("weights.favw", export_params(&outcome.params))?;
    write_metrics_csv(out.file("metrics.csv")?, &outcome.metrics)?;
    if !g.no_svg {
        let pts = |f: fn(&favbot_core::vision::EpochMetrics) -> f64| outcome.metrics.iter().map(|m| (m.epoch as f64, f(m))).collect();
        out.write(
            "metrics.svg",
            Chart::new("Training", "epoch", "value")
                .with(Series::line("train loss", pts(|m| m.train_loss)))
                .with(Series::line("val accuracy", pts(|m| m.val_acc)))
                .render(),
        )?;
    }
    out.write("train_config.toml", toml::to_string(&cfg)?)?;
    let summary = TrainSummary {
        final_val_acc: outcome.metrics.last().map_or(0.0, |m| m.val_acc),
        train_acc: outcome.train_acc,
        class_histogram: histogram,
        seconds: t0.elapsed().as_secs_f64(),
    };
    out.write_json("summary.json", &summary)?;
    out.write_json("run.json", &RunRecord::new("train", &(a, cfg)).input("config", "train_config.toml"))?;
    let dest = out.commit()?;
    println!("final val_acc {:.4}; wrote {}", summary.final_val_acc, dest.display());
    Ok(Status::Success)
}

/// Addresses printed as the first stdout line of `serve`.
#[derive(Debug, Serialize, serde::Deserialize, PartialEq, Eq)]
pub struct Endpoints {
    pub command: String,
    pub telemetry: String,
    pub websocket: Option<String>,
}

fn write_mission(dir: &Path, index: usize, run: &MissionRun) -> Result<()> {
    let d = dir.join(format!("mission_{index:03}"));
    fs::create_dir_all(&d)?;
    let mut report = run.report.clone();
    report.trajectory_csv_path = Some("trajectory.csv".into());
    fs::write(d.join("report.json"), report.to_json_pretty() + "\n")?;
    write_trajectory_csv(fs::File::create(d.join("trajectory.csv"))?, &run.trajectory)?;
    Ok(())
}

fn run_serve(g: &Global, a: &ServeArgs) -> Result<Status> {
    let (table, calibration) = load_table(g)?;
    let scenario = Scenario::load(&a.scenario).with_context(|| format!("loading scenario {}", a.scenario.display()))?;
    let classifier = Classifier::load(a.weights.as_deref())?;
    let seed = a.seed.unwrap_or(scenario.seed);
    if !(a.chunk > 0.0 && a.chunk.is_finite()) {
        bail!("--chunk must be positive");
    }
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("scenario.toml"), scenario.to_toml_string())?;
        fs::write(dir.join("calibration.csv"), &calibration)?;
        let cfg = (a, g, seed);
        let record = RunRecord::new("serve", &cfg)
            .input("scenario", "scenario.toml")
            .input("calibration", "calibration.csv");
        fs::write(dir.join("run.json"), serde_json::to_string_pretty(&record)? + "\n")?;
    }

    let queue = Arc::new(CommandQueue::new(a.queue.max(1)));
    let mut driver = Driver::new(
        ControllerState::new(a.max_cycles),
        scenario.build_world_with_seed(seed),
        table,
        classifier,
        TargetSchedule::from_scenario(&scenario),
        queue.clone(),
        DriverConfig {
            chunk_s: a.chunk,
            time_scale: a.time_scale,
        },
    );
    if let Some(dir) = a.out.clone() {
        let mut count = 0;
        driver.on_mission(move |run| {
            count += 1;
            if let Err(e) = write_mission(&dir, count, run) {
                eprintln!("writing mission {count}: {e:#}");
            }
        });
    }
    let log = driver.telemetry().clone();
    let shutdown = Arc::new(AtomicBool::new(false));

    let server = Server::bind(&a.command_addr, &a.telemetry_addr)
        .with_context(|| format!("binding {} and {}", a.command_addr, a.telemetry_addr))?;
    let handle = server.spawn(queue.clone(), log.clone(), shutdown.clone())?;
    let gateway = if a.ws_addr.eq_ignore_ascii_case("off") {
        None
    } else {
        let gw = Gateway::bind(&a.ws_addr).with_context(|| format!("binding {}", a.ws_addr))?;
        let addr = gw.local_addr()?;
        Some((addr, gw.spawn(queue.clone(), log.clone(), shutdown.clone())?))
    };

    let endpoints = Endpoints {
        command: handle.command_addr.to_string(),
        telemetry: handle.telemetry_addr.to_string(),
        websocket: gateway.as_ref().map(|(addr, _)| addr.to_string()),
    };
    println!("{}", serde_json::to_string(&endpoints)?);
    std::io::stdout().flush()?;

    {
        let sd = shutdown.clone();
        ctrlc::set_handler(move || sd.store(true, Ordering::Relaxed)).context("installing the interrupt handler")?;
    }
    if let Some(secs) = a.duration {
        let sd = shutdown.clone();
        std::thread::spawn(move || {
            std::thread::sleep(Duration::from_secs_f64(secs.max(0.0)));
            sd.store(true, Ordering::Relaxed);
        });
    }

    let result = driver.run(&shutdown);
    shutdown.store(true, Ordering::Relaxed);
    queue.close();
    handle.shutdown();
    if let Some((_, h)) = gateway {
        let _ = h.join();
    }
    result?;
    let missions = driver.completed_missions();
    eprintln!(
        "served {:.1} simulated seconds; {} missions, {} telemetry frames",
        driver.world.clock(),
        missions.len(),
        log.len()
    );
    Ok(Status::Success)
}

/// Parse a telemetry JSON-lines file.
pub fn read_telemetry(path: &Path) -> Result<Vec<TelemetryFrame>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| TelemetryFrame::from_json_line(l).with_context(|| format!("bad telemetry line: {l}")))
        .collect()
}
