//! Recognition sessions and their newline-delimited JSON protocol.
//!
//! A [`Session`] runs the whole pipeline on its own thread over one frame
//! source. Subscribers receive every published [`Message`] through bounded
//! queues; operator commands travel through a single queue that the
//! pipeline drains between windows, so all state changes happen on the
//! pipeline thread. Retraining runs on a worker thread and the resulting
//! snapshot is swapped in between windows.

mod protocol;
mod server;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, never, select, unbounded, Receiver, Sender};

pub use self::protocol::{error_code, parse_command, Command, Message, Op, RunState, StateSummary};
pub use self::server::serve;

use crate::activity::{classify_activity, ActivityAggregator, ActivityEvent, TimelineStore};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::features::{extract_features, Windower};
use crate::ingest::{replay, synth_stream, LabeledFrame, LiveSource, SAMPLE_RATE_HZ};
use crate::novelty::{Decision, Mode, NoveltyEvent};
use crate::recognizer::Recognizer;
use crate::registry::{save_snapshot, ModelSnapshot, PatternRegistry};

pub const DEFAULT_QUEUE_CAPACITY: usize = 1024;

type FrameSource = Box<dyn Iterator<Item = Result<LabeledFrame>> + Send>;

/// Where a session's frames come from.
#[derive(Clone, Debug)]
pub enum SourceSpec {
    Replay {
        path: PathBuf,
    },
    Synth {
        corpus: Corpus,
        seconds: f64,
        seed: u64,
    },
    Live {
        addr: String,
    },
    /// Frames already in memory.
    Frames(Vec<LabeledFrame>),
    /// Frames pushed by another thread; the stream ends when every sender
    /// is dropped.
    Channel(Receiver<LabeledFrame>),
}

impl SourceSpec {
    fn open(&self) -> Result<FrameSource> {
        Ok(match self {
            SourceSpec::Replay { path } => Box::new(replay(path, SAMPLE_RATE_HZ, false)?),
            SourceSpec::Synth { corpus, seconds, seed } => {
                Box::new(synth_stream(corpus.script(*seconds, *seed)?, *seed)?.map(Ok))
            }
            SourceSpec::Live { addr } => Box::new(LiveSource::connect(addr.as_str())?),
            SourceSpec::Frames(frames) => Box::new(frames.clone().into_iter().map(Ok)),
            SourceSpec::Channel(rx) => Box::new(rx.clone().into_iter().map(Ok)),
        })
    }
}

#[derive(Clone, Debug)]
pub struct SessionConfig {
    /// Stored training data; without it, collected patterns cannot be kept
    /// and `retrain` is refused.
    pub registry: Option<PatternRegistry>,
    /// Where a retrained snapshot and its registry are written.
    pub persist_snapshot: Option<PathBuf>,
    pub persist_registry: Option<PathBuf>,
    pub timeline: Option<TimelineStore>,
    /// Pace frames at the nominal sample rate instead of as fast as possible.
    pub realtime: bool,
    pub start_paused: bool,
    pub queue_capacity: usize,
    /// Upper bound on `frame` messages per second of stream time.
    pub frame_rate_hz: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            registry: None,
            persist_snapshot: None,
            persist_registry: None,
            timeline: None,
            realtime: false,
            start_paused: false,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            frame_rate_hz: 5.0,
        }
    }
}

/// Receiving end of one subscriber queue. Ends when the session stops or
/// the subscriber overflowed.
pub struct Subscription {
    rx: Receiver<Arc<str>>,
}

impl Subscription {
    pub fn recv_line(&self, timeout: Duration) -> Option<Arc<str>> {
        self.rx.recv_timeout(timeout).ok()
    }

    pub fn recv(&self, timeout: Duration) -> Option<Message> {
        self.recv_line(timeout).map(|l| Message::from_line(&l).expect("own messages parse"))
    }

    /// Blocks until the session closes the queue, returning everything.
    pub fn drain(&self) -> Vec<Message> {
        self.rx.iter().map(|l| Message::from_line(&l).expect("own messages parse")).collect()
    }

    pub fn lines(&self) -> impl Iterator<Item = Arc<str>> + '_ {
        self.rx.iter()
    }
}

struct Hub {
    seq: u64,
    capacity: usize,
    subscribers: Vec<Sender<Arc<str>>>,
    summary: StateSummary,
    patterns: Vec<String>,
    activities: Vec<String>,
    registry_version: u64,
    closed: bool,
}

impl Hub {
    fn publish(&mut self, mut msg: Message) {
        self.seq += 1;
        msg.set_seq(self.seq);
        let line: Arc<str> = msg.to_line().into();
        let (seq, cap) = (self.seq, self.capacity);
        self.subscribers.retain(|tx| {
            if tx.len() >= cap {
                let overflow = Message::Error {
                    seq,
                    cid: None,
                    code: "overflow".into(),
                    message: format!("subscriber queue exceeded {cap} messages; disconnecting"),
                };
                // One slot beyond `cap` is reserved for this notice.
                let _ = tx.try_send(overflow.to_line().into());
                return false;
            }
            tx.try_send(line.clone()).is_ok()
        });
    }

    fn registry_update(&self) -> Message {
        Message::RegistryUpdate {
            seq: self.seq,
            version: self.registry_version,
            patterns: self.patterns.clone(),
            activities: self.activities.clone(),
            state: self.summary.clone(),
        }
    }

    fn subscribe(&mut self) -> Subscription {
        let (tx, rx) = bounded(self.capacity + 1);
        if !self.closed {
            let _ = tx.try_send(self.registry_update().to_line().into());
            self.subscribers.push(tx);
        }
        Subscription { rx }
    }
}

static NEXT_SESSION: AtomicU64 = AtomicU64::new(1);

pub struct Session {
    id: u64,
    hub: Arc<Mutex<Hub>>,
    commands: Sender<Command>,
    thread: Mutex<Option<JoinHandle<Result<()>>>>,
}

impl Session {
    /// Validates the source and starts the pipeline thread. Nothing is
    /// published if the source cannot be opened.
    pub fn start(source: SourceSpec, snapshot: Arc<ModelSnapshot>, cfg: SessionConfig) -> Result<Session> {
        Ok(Session::start_inner(source, snapshot, cfg, false)?.0)
    }

    /// Like [`Session::start`], with a subscriber attached before the first
    /// frame is read, so it sees the stream from seq 1.
    pub fn start_subscribed(
        source: SourceSpec,
        snapshot: Arc<ModelSnapshot>,
        cfg: SessionConfig,
    ) -> Result<(Session, Subscription)> {
        let (s, sub) = Session::start_inner(source, snapshot, cfg, true)?;
        Ok((s, sub.expect("requested subscriber")))
    }

    fn start_inner(
        source: SourceSpec,
        snapshot: Arc<ModelSnapshot>,
        cfg: SessionConfig,
        subscribe: bool,
    ) -> Result<(Session, Option<Subscription>)> {
        let frames = source.open()?;
        let id = NEXT_SESSION.fetch_add(1, Ordering::Relaxed);
        let run = if cfg.start_paused { RunState::Paused } else { RunState::Running };
        let (patterns, activities, registry_version) = match &cfg.registry {
            Some(r) => (r.pattern_names(), r.activities().to_vec(), r.version()),
            None => (snapshot.patterns.clone(), snapshot.activities.clone(), snapshot.version),
        };
        let hub = Arc::new(Mutex::new(Hub {
            seq: 0,
            capacity: cfg.queue_capacity.max(1),
            subscribers: Vec::new(),
            summary: StateSummary {
                session: id,
                run,
                mode: Mode::Uncertain.to_string(),
                collected: 0,
                target: snapshot.novelty.collect_target,
                snapshot_version: snapshot.version,
            },
            patterns,
            activities,
            registry_version,
            closed: false,
        }));
        let first = subscribe.then(|| lock(&hub).subscribe());
        let (tx, rx) = unbounded();
        let (frame_tx, frame_rx) = bounded(256);
        let mut pipeline = Pipeline::new(hub.clone(), frame_rx, snapshot, cfg, rx, run)?;
        std::thread::Builder::new().name(format!("session-{id}-source")).spawn(move || {
            for item in frames {
                let failed = item.is_err();
                if frame_tx.send(item).is_err() || failed {
                    break;
                }
            }
        })?;
        let thread = std::thread::Builder::new().name(format!("session-{id}")).spawn(move || pipeline.run())?;
        Ok((Session { id, hub, commands: tx, thread: Mutex::new(Some(thread)) }, first))
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// New subscriber. Its first message is a `registry_update` carrying
    /// the current state, stamped with the latest published seq.
    pub fn subscribe(&self) -> Subscription {
        lock(&self.hub).subscribe()
    }

    pub fn summary(&self) -> StateSummary {
        lock(&self.hub).summary.clone()
    }

    /// Queues a command; its ack or error arrives on the message stream.
    pub fn command(&self, cmd: Command) -> Result<()> {
        self.commands.send(cmd).map_err(|_| Error::state(format!("session {} has stopped", self.id)))
    }

    /// Parses and queues one protocol line. Lines that are not valid
    /// commands are answered with an `error` message.
    pub fn submit_line(&self, line: &str) -> Result<()> {
        match parse_command(line) {
            Ok(cmd) => self.command(cmd),
            Err((cid, e)) => {
                lock(&self.hub).publish(Message::error(cid, &e));
                Ok(())
            }
        }
    }

    pub fn is_finished(&self) -> bool {
        lock(&self.thread).as_ref().is_none_or(|t| t.is_finished())
    }

    /// Waits for the pipeline thread and returns its outcome.
    pub fn join(&self) -> Result<()> {
        let handle = lock(&self.thread).take();
        match handle {
            Some(h) => h.join().unwrap_or_else(|_| Err(Error::state("session thread panicked"))),
            None => Ok(()),
        }
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

struct PendingRetrain {
    cid: String,
    rx: Receiver<Result<(ModelSnapshot, PatternRegistry)>>,
}

struct Pipeline {
    hub: Arc<Mutex<Hub>>,
    frames: Receiver<Result<LabeledFrame>>,
    commands_open: bool,
    windower: Windower,
    recognizer: Recognizer,
    aggregator: ActivityAggregator,
    snapshot: Arc<ModelSnapshot>,
    cfg: SessionConfig,
    commands: Receiver<Command>,
    retrain: Option<PendingRetrain>,
    run: RunState,
    origin_epoch_ms: i64,
    started: Option<(Instant, u64)>,
    last_frame_msg: Option<u64>,
}

impl Pipeline {
    fn new(
        hub: Arc<Mutex<Hub>>,
        frames: Receiver<Result<LabeledFrame>>,
        snapshot: Arc<ModelSnapshot>,
        cfg: SessionConfig,
        commands: Receiver<Command>,
        run: RunState,
    ) -> Result<Pipeline> {
        let windower = Windower::new(snapshot.window)?;
        let recognizer = Recognizer::new(snapshot.clone(), snapshot.recognizer_config());
        let aggregator = ActivityAggregator::new(snapshot.patterns.clone(), snapshot.seq_len, snapshot.step_ms())?;
        let origin_epoch_ms =
            std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_millis() as i64);
        Ok(Pipeline {
            hub,
            frames,
            commands_open: true,
            windower,
            recognizer,
            aggregator,
            snapshot,
            cfg,
            commands,
            retrain: None,
            run,
            origin_epoch_ms,
            started: None,
            last_frame_msg: None,
        })
    }

    fn publish(&self, msg: Message) {
        lock(&self.hub).publish(msg);
    }

    fn sync_summary(&self) {
        let nov = self.recognizer.novelty();
        let mut hub = lock(&self.hub);
        hub.summary.run = self.run;
        hub.summary.mode = nov.mode().to_string();
        hub.summary.collected = if nov.mode() == Mode::Collecting { nov.progress() } else { 0 };
        hub.summary.target = self.snapshot.novelty.collect_target;
        hub.summary.snapshot_version = self.snapshot.version;
    }

    fn run(&mut self) -> Result<()> {
        let out = self.run_loop();
        if let Err(e) = &out {
            self.publish(Message::error(None, e));
        }
        // A retrain still in flight gets its reply before the stream closes.
        if let Some(p) = self.retrain.take() {
            if let Ok(res) = p.rx.recv() {
                self.finish_retrain(p.cid, res);
            }
        }
        while let Ok(cmd) = self.commands.try_recv() {
            self.reject(&cmd.cid, Error::state("session has stopped"));
        }
        self.run = RunState::Stopped;
        self.sync_summary();
        let mut hub = lock(&self.hub);
        hub.closed = true;
        hub.subscribers.clear();
        out
    }

    fn run_loop(&mut self) -> Result<()> {
        loop {
            self.poll_retrain();
            if !self.commands_open && self.run == RunState::Paused {
                // Nobody is left to resume the session.
                self.run = RunState::Running;
            }
            let commands = if self.commands_open { self.commands.clone() } else { never() };
            let retrain = self.retrain.as_ref().map_or_else(never, |p| p.rx.clone());
            let frames = match self.run {
                RunState::Stopped => return Ok(()),
                RunState::Paused => never(),
                RunState::Running => self.frames.clone(),
            };
            select! {
                recv(commands) -> c => match c {
                    Ok(cmd) => self.handle(cmd),
                    Err(_) => self.commands_open = false,
                },
                recv(retrain) -> r => {
                    if let (Ok(res), Some(p)) = (r, self.retrain.take()) {
                        self.finish_retrain(p.cid, res);
                    }
                }
                recv(frames) -> f => match f {
                    Ok(frame) => {
                        self.pace();
                        self.process(frame?)?;
                    }
                    Err(_) => return Ok(()),
                },
            }
        }
    }

    fn pace(&mut self) {
        if !self.cfg.realtime {
            return;
        }
        let (start, n) = self.started.get_or_insert((Instant::now(), 0));
        let due = *start + Duration::from_secs_f64(*n as f64 / SAMPLE_RATE_HZ);
        *n += 1;
        if let Some(wait) = due.checked_duration_since(Instant::now()) {
            std::thread::sleep(wait);
        }
    }

    fn process(&mut self, frame: LabeledFrame) -> Result<()> {
        frame.frame.validate()?;
        let t = frame.frame.t_ms;
        let interval = (1000.0 / self.cfg.frame_rate_hz.max(1e-3)).round() as u64;
        if self.last_frame_msg.is_none_or(|last| t >= last + interval) {
            self.last_frame_msg = Some(t);
            let f = &frame.frame;
            self.publish(Message::Frame { seq: 0, t_ms: t, acc: f.acc, gyro: f.gyro, orient: f.orient });
        }
        let Some(w) = self.windower.push(frame) else { return Ok(()) };
        let fv = extract_features(&w.window)?;
        let (ev, novelty) = self.recognizer.classify_window(&fv)?;
        self.publish(Message::UnitEvent {
            seq: 0,
            t_ms: ev.t_ms,
            raw: ev.raw_label.clone(),
            voted: ev.voted_label.clone(),
            conf: ev.confidence,
        });
        if let Some(n) = novelty {
            self.on_novelty(n);
        }
        if let Some(h) = self.aggregator.push(&ev)? {
            if let Some(model) = &self.snapshot.activity {
                let a = classify_activity(&h, model)?;
                self.on_activity(a);
            }
        }
        self.sync_summary();
        Ok(())
    }

    fn on_activity(&self, a: ActivityEvent) {
        if let Some(store) = &self.cfg.timeline {
            if let Err(e) = store.append(self.origin_epoch_ms, &a) {
                self.publish(Message::error(None, &e));
            }
        }
        self.publish(Message::ActivityEvent {
            seq: 0,
            t0_ms: a.t0_ms,
            t1_ms: a.t1_ms,
            label: a.label,
            conf: a.confidence,
        });
    }

    fn on_novelty(&mut self, n: NoveltyEvent) {
        match n {
            NoveltyEvent::NoveltyDetected { candidate_id, .. } => {
                self.publish(Message::NoveltyPrompt { seq: 0, candidate_id: candidate_id.to_string() })
            }
            NoveltyEvent::CollectionProgress { collected, target } => {
                self.publish(Message::Progress { seq: 0, collected, target })
            }
            NoveltyEvent::CollectionComplete { name, activity, vectors } => {
                let target = self.snapshot.novelty.collect_target;
                self.publish(Message::Progress { seq: 0, collected: vectors.len(), target });
                let res = match self.cfg.registry.as_mut() {
                    Some(reg) => reg.add_pattern(&name, &activity, vectors, target).map(|_| ()),
                    None => Err(Error::state("no registry loaded; collected samples discarded")),
                };
                match res {
                    Ok(()) => {
                        self.refresh_registry_view();
                        let msg = lock(&self.hub).registry_update();
                        self.publish(msg);
                    }
                    Err(e) => self.publish(Message::error(None, &e)),
                }
            }
            NoveltyEvent::CollectionCancelled { .. } => {}
        }
    }

    fn refresh_registry_view(&self) {
        let mut hub = lock(&self.hub);
        match &self.cfg.registry {
            Some(r) => {
                hub.patterns = r.pattern_names();
                hub.activities = r.activities().to_vec();
                hub.registry_version = r.version();
            }
            None => {
                hub.patterns = self.snapshot.patterns.clone();
                hub.activities = self.snapshot.activities.clone();
                hub.registry_version = self.snapshot.version;
            }
        }
    }

    fn ack(&self, cid: &str) {
        self.publish(Message::CommandAck { seq: 0, cid: cid.to_string(), ok: true });
    }

    fn reject(&self, cid: &str, e: Error) {
        self.publish(Message::error(Some(cid.to_string()), &e));
    }

    fn handle(&mut self, cmd: Command) {
        let mode = self.recognizer.novelty().mode();
        let wrong_mode = |op: &Op| Error::state(format!("{} is not valid in mode {mode}", op.name()));
        let res = match &cmd.op {
            Op::SavePattern { name, activity } => {
                if mode != Mode::CandidatePending {
                    Err(wrong_mode(&cmd.op))
                } else if self.pattern_exists(name) {
                    Err(Error::Conflict(format!("pattern {name:?} already exists")))
                } else {
                    let d = Decision::Save { name: name.clone(), activity: activity.clone() };
                    self.recognizer.novelty_mut().resolve_candidate(d, &self.snapshot.novelty)
                }
            }
            Op::IgnorePattern | Op::NotOfInterest => {
                if mode != Mode::CandidatePending {
                    Err(wrong_mode(&cmd.op))
                } else {
                    let d = if cmd.op == Op::IgnorePattern { Decision::Ignore } else { Decision::NotOfInterest };
                    self.recognizer.novelty_mut().resolve_candidate(d, &self.snapshot.novelty)
                }
            }
            Op::CancelCollection => {
                if mode != Mode::Collecting {
                    Err(wrong_mode(&cmd.op))
                } else {
                    self.recognizer.novelty_mut().cancel_collection().map(|_| ())
                }
            }
            Op::Retrain => return self.start_retrain(cmd.cid),
            Op::Pause => match self.run {
                RunState::Running => {
                    self.run = RunState::Paused;
                    Ok(())
                }
                other => Err(Error::state(format!("pause is not valid while {other}"))),
            },
            Op::Resume => match self.run {
                RunState::Paused => {
                    self.run = RunState::Running;
                    Ok(())
                }
                other => Err(Error::state(format!("resume is not valid while {other}"))),
            },
            Op::Stop => {
                self.run = RunState::Stopped;
                Ok(())
            }
        };
        self.sync_summary();
        match res {
            Ok(()) => self.ack(&cmd.cid),
            Err(e) => self.reject(&cmd.cid, e),
        }
    }

    fn pattern_exists(&self, name: &str) -> bool {
        self.snapshot.patterns.iter().any(|p| p == name)
            || self.cfg.registry.as_ref().is_some_and(|r| r.patterns().iter().any(|p| p.name == name))
    }

    fn start_retrain(&mut self, cid: String) {
        if self.retrain.is_some() {
            return self.reject(&cid, Error::state("a retrain is already in progress"));
        }
        let Some(reg) = self.cfg.registry.clone() else {
            return self.reject(&cid, Error::state("no registry loaded; nothing to retrain from"));
        };
        let prev = self.snapshot.clone();
        let cfg = prev.train;
        let (tx, rx) = bounded(1);
        let spawned = std::thread::Builder::new().name("retrain".into()).spawn(move || {
            let res = reg.retrain(&cfg, Some(&prev)).map(|s| (s, reg));
            let _ = tx.send(res);
        });
        match spawned {
            Ok(_) => self.retrain = Some(PendingRetrain { cid, rx }),
            Err(e) => self.reject(&cid, e.into()),
        }
    }

    fn poll_retrain(&mut self) {
        let Some(p) = &self.retrain else { return };
        if let Ok(res) = p.rx.try_recv() {
            let p = self.retrain.take().expect("checked above");
            self.finish_retrain(p.cid, res);
        }
    }

    fn finish_retrain(&mut self, cid: String, res: Result<(ModelSnapshot, PatternRegistry)>) {
        let (snap, reg) = match res {
            Ok(ok) => ok,
            Err(e) => return self.reject(&cid, e),
        };
        if let Err(e) = self.persist(&snap, &reg) {
            return self.reject(&cid, e);
        }
        let snap = Arc::new(snap);
        self.recognizer.swap_snapshot(snap.clone());
        self.aggregator.set_vocabulary(snap.patterns.clone());
        self.snapshot = snap;
        self.refresh_registry_view();
        self.sync_summary();
        self.ack(&cid);
        let msg = lock(&self.hub).registry_update();
        self.publish(msg);
    }

    fn persist(&self, snap: &ModelSnapshot, reg: &PatternRegistry) -> Result<()> {
        if let Some(p) = &self.cfg.persist_snapshot {
            save_snapshot(snap, p)?;
        }
        if let Some(dir) = &self.cfg.persist_registry {
            reg.save_dir(dir)?;
        }
        Ok(())
    }
}
