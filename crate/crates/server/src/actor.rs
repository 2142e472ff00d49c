use std::collections::{HashMap, VecDeque};
use std::fs::File;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use ensemble_core::api::SessionStatus;
use ensemble_core::protocol::{encode_osc, Message};
use ensemble_core::session::{Counters, Destination, EnsembleTick, Outbound, Session};
use ensemble_core::session_log::{LogRecord, LogWriter};
use tokio::net::UdpSocket;
use tokio::sync::{mpsc, watch};
use tracing::{debug, error, info, warn};

use crate::transport::Inbound;
use crate::{ServerConfig, ServerError, ServerSummary, SessionClock};

/// How many recent ticks the HTTP API can serve.
pub const RECENT_TICKS: usize = 600;

/// Snapshot of the session for readers outside the actor.
#[derive(Debug, Clone)]
pub struct StatusBoard {
    pub status: SessionStatus,
    pub recent: VecDeque<EnsembleTick>,
}

impl StatusBoard {
    pub(crate) fn new(
        session_id: &str,
        config: &ServerConfig,
        osc_addr: SocketAddr,
        bridge_addr: Option<SocketAddr>,
        log_path: Option<&Path>,
    ) -> Self {
        StatusBoard {
            status: SessionStatus {
                session_id: session_id.to_string(),
                session_time: 0.0,
                clock_rate: config.clock_rate,
                config: config.session,
                osc_addr: osc_addr.to_string(),
                bridge_addr: bridge_addr.map(|a| a.to_string()),
                log_path: log_path.map(|p| p.display().to_string()),
                performers: Vec::new(),
                counters: Counters::default(),
                ticks: 0,
                new_ideas: 0,
                overruns: 0,
                last_tick: None,
            },
            recent: VecDeque::with_capacity(RECENT_TICKS),
        }
    }
}

type Log = LogWriter<BufWriter<File>>;

pub(crate) struct Actor {
    session: Session,
    clock: SessionClock,
    log: Option<Log>,
    udp: Arc<UdpSocket>,
    bridges: HashMap<u64, mpsc::Sender<Message>>,
    status: Arc<RwLock<StatusBoard>>,
    inbound: mpsc::Receiver<Inbound>,
    shutdown: watch::Receiver<bool>,
    session_id: String,
    log_path: Option<PathBuf>,
    ticks: u64,
    new_ideas: u64,
    overruns: u64,
}

impl Actor {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        session: Session,
        clock: SessionClock,
        log: Option<Log>,
        udp: Arc<UdpSocket>,
        status: Arc<RwLock<StatusBoard>>,
        inbound: mpsc::Receiver<Inbound>,
        shutdown: watch::Receiver<bool>,
        session_id: String,
        log_path: Option<PathBuf>,
    ) -> Self {
        Actor {
            session,
            clock,
            log,
            udp,
            bridges: HashMap::new(),
            status,
            inbound,
            shutdown,
            session_id,
            log_path,
            ticks: 0,
            new_ideas: 0,
            overruns: 0,
        }
    }

    pub(crate) async fn run(mut self) -> Result<ServerSummary, ServerError> {
        enum Step {
            Stop,
            Tick,
            Message(Inbound),
        }
        let mut shutdown = self.shutdown.clone();
        let mut next: u64 = 1;
        loop {
            let deadline = self.clock.instant_at(next as f64);
            let step = tokio::select! {
                biased;
                _ = shutdown.wait_for(|&s| s) => Step::Stop,
                _ = tokio::time::sleep_until(deadline) => Step::Tick,
                msg = self.inbound.recv() => msg.map_or(Step::Stop, Step::Message),
            };
            match step {
                Step::Stop => break,
                Step::Tick => next = self.on_tick(next).await + 1,
                Step::Message(m) => self.on_inbound(m),
            }
        }
        if let Some(log) = &mut self.log {
            if let Err(e) = log.flush() {
                error!("flushing session log: {e}");
            }
        }
        info!(
            ticks = self.ticks,
            new_ideas = self.new_ideas,
            "session closed"
        );
        Ok(ServerSummary {
            session_id: self.session_id,
            ticks: self.ticks,
            new_ideas: self.new_ideas,
            overruns: self.overruns,
            counters: self.session.counters(),
            log_path: self.log_path,
        })
    }

    fn append(&mut self, record: &LogRecord) {
        if let Some(log) = &mut self.log {
            if let Err(e) = log.append(record) {
                error!("writing session log: {e}");
            }
        }
    }

    fn on_inbound(&mut self, msg: Inbound) {
        match msg {
            Inbound::Packet {
                from,
                arrival,
                len,
                decoded,
            } => match decoded {
                Ok(items) => {
                    for d in items {
                        self.session.apply_decoded(from, &d, arrival);
                        self.append(&LogRecord::from_decoded(arrival, from, d));
                    }
                }
                Err(error) => {
                    debug!(%from, len, "malformed packet: {error}");
                    self.session.note_malformed();
                    self.append(&LogRecord::Malformed {
                        arrival,
                        from,
                        len,
                        error,
                    });
                }
            },
            Inbound::BridgeOpened { id, tx } => {
                self.bridges.insert(id, tx);
            }
            Inbound::BridgeClosed { id } => {
                self.bridges.remove(&id);
            }
        }
    }

    /// Runs the tick due at `due` (or later, if the scheduler fell behind) and
    /// returns the tick number actually run.
    async fn on_tick(&mut self, due: u64) -> u64 {
        // the queue is drained first so the tick sees everything that arrived before it
        while let Ok(m) = self.inbound.try_recv() {
            self.on_inbound(m);
        }
        let now_session = self.clock.now();
        let k = (now_session.floor() as u64).max(due);
        if k > due {
            let skipped = k - due;
            self.overruns += skipped;
            warn!(due, skipped, "tick overran; skipping ahead");
            self.append(&LogRecord::Overrun {
                time: k as f64,
                skipped,
            });
        }
        let time = k as f64;
        let (mut tick, outbound) = match self.session.tick(time) {
            Ok(r) => r,
            Err(e) => {
                error!("tick at {time} failed: {e}");
                return k;
            }
        };
        tick.lag = (now_session - time) / self.clock.rate();
        self.ticks += 1;
        if tick.new_idea {
            self.new_ideas += 1;
            info!(
                time,
                flux_now = tick.flux_now,
                flux_prev = tick.flux_prev,
                "new idea"
            );
        }
        self.append(&LogRecord::Tick(tick.clone()));
        if let Some(log) = &mut self.log {
            if let Err(e) = log.flush() {
                error!("flushing session log: {e}");
            }
        }
        self.publish(&tick);
        self.send(outbound).await;
        k
    }

    fn publish(&self, tick: &EnsembleTick) {
        let mut board = self.status.write().expect("status lock");
        let s = &mut board.status;
        s.session_time = tick.time;
        s.performers = self.session.performer_status();
        s.counters = self.session.counters();
        s.ticks = self.ticks;
        s.new_ideas = self.new_ideas;
        s.overruns = self.overruns;
        s.last_tick = Some(tick.clone());
        if board.recent.len() == RECENT_TICKS {
            board.recent.pop_front();
        }
        board.recent.push_back(tick.clone());
    }

    async fn send(&mut self, outbound: Vec<Outbound>) {
        for Outbound { to, message } in outbound {
            match to {
                Destination::Datagram(addr) => {
                    if let Err(e) = self.udp.send_to(&encode_osc(&message), addr).await {
                        debug!(%addr, "send failed: {e}");
                    }
                }
                Destination::Bridge(id) => {
                    if let Some(tx) = self.bridges.get(&id) {
                        if tx.try_send(message).is_err() {
                            debug!(id, "bridge connection is not keeping up; message dropped");
                        }
                    }
                }
                Destination::Local => {}
            }
        }
    }
}
