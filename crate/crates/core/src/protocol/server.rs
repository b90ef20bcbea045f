//! Live system: the controller loop and the TCP command and telemetry
//! endpoints that feed and observe it.
//!
//! The [`Driver`] owns the world and consumes queued commands between
//! actuation chunks (characterization) or between cycles (autonomy), so a
//! running segment is never preempted. The [`Server`] accepts one command
//! session at a time and any number of telemetry subscribers.

use std::io::{self, BufWriter, ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::RecvTimeoutError;
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::{CommandQueue, Decoded, FrameDecoder};
use crate::controller::{
    apply_command, autonomous_cycle, Action, ControllerState, MissionError, MissionRecorder, MissionRun, Phase,
    TargetSchedule,
};
use crate::resonance::ModeTable;
use crate::telemetry::{Event, TelemetryLog};
use crate::vision::ZoneClassifier;
use crate::world::World;

const POLL: Duration = Duration::from_millis(20);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriverConfig {
    /// Simulated seconds per characterization step.
    pub chunk_s: f64,
    /// Simulated seconds per wall-clock second; infinite runs unpaced.
    pub time_scale: f64,
}

impl Default for DriverConfig {
    fn default() -> Self {
        Self {
            chunk_s: 0.2,
            time_scale: 1.0,
        }
    }
}

type MissionHook = Box<dyn FnMut(&MissionRun) + Send>;

/// The controller loop of the live system.
pub struct Driver<C> {
    pub state: ControllerState,
    pub world: World,
    table: ModeTable,
    classifier: C,
    template: TargetSchedule,
    mission: Option<(TargetSchedule, MissionRecorder)>,
    queue: Arc<CommandQueue>,
    config: DriverConfig,
    completed: Vec<MissionRun>,
    on_mission: Option<MissionHook>,
}

impl<C: ZoneClassifier> Driver<C> {
    pub fn new(
        state: ControllerState,
        world: World,
        table: ModeTable,
        classifier: C,
        schedule: TargetSchedule,
        queue: Arc<CommandQueue>,
        config: DriverConfig,
    ) -> Self {
        Self {
            state,
            world,
            table,
            classifier,
            template: schedule,
            mission: None,
            queue,
            config,
            completed: Vec::new(),
            on_mission: None,
        }
    }

    /// Called with every finished mission.
    pub fn on_mission(&mut self, hook: impl FnMut(&MissionRun) + Send + 'static) {
        self.on_mission = Some(Box::new(hook));
    }

    pub fn completed_missions(&self) -> &[MissionRun] {
        &self.completed
    }

    pub fn telemetry(&self) -> &TelemetryLog {
        self.world.telemetry()
    }

    /// Apply every queued command.
    pub fn process_commands(&mut self) {
        for code in self.queue.drain() {
            let now = self.world.clock();
            match apply_command(&mut self.state, self.world.telemetry(), now, code) {
                Ok(Action::StartAutonomy) => self.begin_mission(),
                Ok(Action::Abort) => {
                    if self.mission.take().is_some() {
                        self.world.telemetry().append(
                            now,
                            Event::Mission {
                                outcome: "aborted".into(),
                                cycles: 0,
                            },
                        );
                    }
                }
                _ => {}
            }
        }
    }

    fn begin_mission(&mut self) {
        let mut schedule = self.template.clone();
        schedule.install(&mut self.world);
        let recorder = MissionRecorder::start(&self.world);
        schedule.check_reached(&mut self.world, 0);
        self.mission = Some((schedule, recorder));
        if self.mission.as_ref().is_some_and(|(s, _)| s.is_done()) {
            self.state.phase = Phase::Finished;
            self.finish_mission();
        }
    }

    fn finish_mission(&mut self) {
        if let Some((schedule, recorder)) = self.mission.take() {
            let run = recorder.finish(&self.state, &self.world, &schedule);
            if let Some(hook) = self.on_mission.as_mut() {
                hook(&run);
            }
            self.completed.push(run);
        }
    }

    /// Process commands, then advance the world by one chunk or one cycle.
    pub fn step(&mut self) -> Result<(), MissionError> {
        self.process_commands();
        match self.state.phase {
            Phase::Characterization => match self.state.current_freq {
                Some(f) => {
                    self.world.step_actuation(&self.table, f, self.config.chunk_s)?;
                }
                None => self.world.idle(self.config.chunk_s),
            },
            Phase::Autonomous => {
                let (schedule, recorder) = self.mission.as_mut().expect("autonomous phase always has a mission");
                let (rec, samples) =
                    autonomous_cycle(&mut self.state, &mut self.world, &self.table, &mut self.classifier, schedule)?;
                recorder.record(rec, samples);
                if self.state.phase == Phase::Finished {
                    self.finish_mission();
                }
            }
            Phase::Finished => self.world.idle(self.config.chunk_s),
        }
        Ok(())
    }

    /// Step until `shutdown` is set, pacing simulated time against the wall
    /// clock by `time_scale`.
    pub fn run(&mut self, shutdown: &AtomicBool) -> Result<(), MissionError> {
        let wall0 = Instant::now();
        let sim0 = self.world.clock();
        while !shutdown.load(Ordering::Relaxed) {
            self.step()?;
            if self.config.time_scale.is_finite() && self.config.time_scale > 0.0 {
                let due = Duration::from_secs_f64((self.world.clock() - sim0) / self.config.time_scale);
                let elapsed = wall0.elapsed();
                if due > elapsed {
                    thread::sleep(due - elapsed);
                }
            }
        }
        Ok(())
    }
}

/// Decode `bytes` and queue every valid command; rejected and unqueueable
/// commands are acknowledged negatively on telemetry.
pub fn forward_bytes(decoder: &mut FrameDecoder, bytes: &[u8], queue: &CommandQueue, log: &TelemetryLog) {
    decoder.push(bytes);
    while let Some(d) = decoder.next_decoded() {
        match d {
            Decoded::Frame(f) => {
                if let Err(e) = queue.push(f.code()) {
                    log.append_latest(Event::Command {
                        code: f.code(),
                        accepted: false,
                        detail: e.to_string(),
                    });
                }
            }
            Decoded::Rejected(e) => {
                let code = match e {
                    super::ProtocolError::Reserved(c) => c,
                    _ => 0,
                };
                log.append_latest(Event::Command {
                    code,
                    accepted: false,
                    detail: e.to_string(),
                });
            }
        }
    }
}

/// Read framed commands from `reader` until EOF, an I/O error or shutdown.
pub fn command_session<R: Read>(mut reader: R, queue: &CommandQueue, log: &TelemetryLog, shutdown: &AtomicBool) -> io::Result<()> {
    let mut decoder = FrameDecoder::new();
    let mut buf = [0u8; 512];
    while !shutdown.load(Ordering::Relaxed) {
        match reader.read(&mut buf) {
            Ok(0) => return Ok(()),
            Ok(n) => forward_bytes(&mut decoder, &buf[..n], queue, log),
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

/// Write the log's history and then every new frame as JSON lines.
pub fn telemetry_session<W: Write>(writer: W, log: &TelemetryLog, shutdown: &AtomicBool) -> io::Result<()> {
    let mut out = BufWriter::new(writer);
    let (history, rx) = log.subscribe_with_history();
    for f in history {
        out.write_all(f.to_json_line().as_bytes())?;
    }
    out.flush()?;
    while !shutdown.load(Ordering::Relaxed) {
        match rx.recv_timeout(Duration::from_millis(100)) {
            Ok(f) => {
                out.write_all(f.to_json_line().as_bytes())?;
                while let Ok(f) = rx.try_recv() {
                    out.write_all(f.to_json_line().as_bytes())?;
                }
                out.flush()?;
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => break,
        }
    }
    out.flush()
}

/// Bound command and telemetry listeners.
pub struct Server {
    command: TcpListener,
    telemetry: TcpListener,
}

pub struct ServerHandle {
    shutdown: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
    pub command_addr: SocketAddr,
    pub telemetry_addr: SocketAddr,
}

impl ServerHandle {
    pub fn shutdown_flag(&self) -> Arc<AtomicBool> {
        self.shutdown.clone()
    }

    pub fn shutdown(self) {
        self.shutdown.store(true, Ordering::Relaxed);
        for t in self.threads {
            let _ = t.join();
        }
    }
}

fn accept_loop(listener: TcpListener, shutdown: Arc<AtomicBool>, mut handle: impl FnMut(TcpStream)) {
    if listener.set_nonblocking(true).is_err() {
        return;
    }
    while !shutdown.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                if stream.set_nonblocking(false).is_ok() {
                    handle(stream);
                }
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(_) => thread::sleep(POLL),
        }
    }
}

impl Server {
    pub fn bind(command: impl ToSocketAddrs, telemetry: impl ToSocketAddrs) -> io::Result<Self> {
        Ok(Self {
            command: TcpListener::bind(command)?,
            telemetry: TcpListener::bind(telemetry)?,
        })
    }

    pub fn command_addr(&self) -> io::Result<SocketAddr> {
        self.command.local_addr()
    }

    pub fn telemetry_addr(&self) -> io::Result<SocketAddr> {
        self.telemetry.local_addr()
    }

    /// Start the accept loops. `shutdown` stops them and every session.
    pub fn spawn(self, queue: Arc<CommandQueue>, log: TelemetryLog, shutdown: Arc<AtomicBool>) -> io::Result<ServerHandle> {
        let command_addr = self.command.local_addr()?;
        let telemetry_addr = self.telemetry.local_addr()?;

        let (sd, tlog) = (shutdown.clone(), log.clone());
        let telemetry = thread::spawn(move || {
            let sessions_sd = sd.clone();
            accept_loop(self.telemetry, sd, |stream| {
                let (sd, log) = (sessions_sd.clone(), tlog.clone());
                thread::spawn(move || {
                    let _ = telemetry_session(stream, &log, &sd);
                });
            });
        });

        let sd = shutdown.clone();
        let command = thread::spawn(move || {
            let session_sd = sd.clone();
            accept_loop(self.command, sd, |stream| {
                // one session at a time: the accept loop waits for it to end
                let _ = stream.set_read_timeout(Some(Duration::from_millis(100)));
                let _ = command_session(stream, &queue, &log, &session_sd);
            });
        });

        Ok(ServerHandle {
            shutdown,
            threads: vec![telemetry, command],
            command_addr,
            telemetry_addr,
        })
    }
}
