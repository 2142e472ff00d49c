//! Clients for the ensemble agent: the HTTP/JSON API, performer connections
//! over OSC datagrams or the framed-JSON bridge, and scripted bot performers.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::net::SocketAddr;
use std::time::Duration;

use ensemble_core::api::{
    ClassifyRequest, ClassifyResponse, ErrorBody, FluxRequest, FluxResponse, Health, SessionStatus,
    TicksResponse, TransitionsRequest, TransitionsResponse,
};
use ensemble_core::dynamics::ProbMatrix;
use ensemble_core::protocol::{
    decode_json, decode_osc, encode_json, encode_osc, Decoded, Message, MAX_FRAME_LEN,
};
use ensemble_core::scenario::BotScript;
use futures::{SinkExt, StreamExt};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;
use tokio::net::{TcpStream, UdpSocket};
use tokio::task::JoinSet;
use tokio::time::Instant;
use tokio_util::codec::{Framed, LengthDelimitedCodec};
use tracing::debug;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    #[error("server answered {status}: {message}")]
    Api { status: u16, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Protocol(#[from] ensemble_core::Error),
    #[error("connection closed")]
    Closed,
}

pub type Result<T, E = ClientError> = std::result::Result<T, E>;

#[derive(Debug, Clone)]
pub struct ApiClient {
    base: String,
    http: reqwest::Client,
}

impl ApiClient {
    /// `base` is e.g. `http://127.0.0.1:9080`.
    pub fn new(base: impl Into<String>) -> Self {
        let base = base.into().trim_end_matches('/').to_string();
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(10))
            .build()
            .expect("static client configuration");
        ApiClient { base, http }
    }

    pub fn for_addr(addr: SocketAddr) -> Self {
        Self::new(format!("http://{addr}"))
    }

    async fn read<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await.unwrap_or_default();
        let message = serde_json::from_str::<ErrorBody>(&text)
            .map(|b| b.error)
            .unwrap_or(text);
        Err(ClientError::Api {
            status: status.as_u16(),
            message,
        })
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        Self::read(self.http.get(format!("{}{path}", self.base)).send().await?).await
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        Self::read(
            self.http
                .post(format!("{}{path}", self.base))
                .json(body)
                .send()
                .await?,
        )
        .await
    }

    pub async fn health(&self) -> Result<Health> {
        self.get("/health").await
    }

    pub async fn session(&self) -> Result<SessionStatus> {
        self.get("/api/session").await
    }

    pub async fn ticks_since(&self, since: f64) -> Result<TicksResponse> {
        self.get(&format!("/api/ticks?since={since}")).await
    }

    pub async fn classify(&self, req: &ClassifyRequest) -> Result<ClassifyResponse> {
        self.post("/api/classify", req).await
    }

    pub async fn transitions(&self, req: &TransitionsRequest) -> Result<TransitionsResponse> {
        self.post("/api/transitions", req).await
    }

    pub async fn flux(&self, matrix: ProbMatrix) -> Result<FluxResponse> {
        self.post("/api/flux", &FluxRequest { matrix }).await
    }
}

/// A performer speaking OSC over UDP.
pub struct OscClient {
    socket: UdpSocket,
    buf: Vec<u8>,
}

impl OscClient {
    pub async fn connect(server: SocketAddr) -> Result<Self> {
        let local: SocketAddr = if server.is_ipv4() {
            ([0, 0, 0, 0], 0).into()
        } else {
            "[::]:0".parse().expect("literal")
        };
        let socket = UdpSocket::bind(local).await?;
        socket.connect(server).await?;
        Ok(OscClient {
            socket,
            buf: vec![0; 65_536],
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.socket.local_addr()?)
    }

    pub async fn send(&self, message: &Message) -> Result<()> {
        self.send_raw(&encode_osc(message)).await
    }

    pub async fn send_raw(&self, bytes: &[u8]) -> Result<()> {
        self.socket.send(bytes).await?;
        Ok(())
    }

    /// Waits up to `timeout` for one datagram. Unknown addresses are skipped.
    pub async fn recv(&mut self, timeout: Duration) -> Result<Option<Vec<Message>>> {
        match tokio::time::timeout(timeout, self.socket.recv(&mut self.buf)).await {
            Err(_) => Ok(None),
            Ok(r) => {
                let n = r?;
                let msgs = decode_osc(&self.buf[..n])?
                    .into_iter()
                    .filter_map(|d| match d {
                        Decoded::Message(m) => Some(m),
                        Decoded::Unknown(_) => None,
                    })
                    .collect();
                Ok(Some(msgs))
            }
        }
    }
}

/// A performer on the framed-JSON stream bridge.
pub struct BridgeClient {
    framed: Framed<TcpStream, LengthDelimitedCodec>,
}

impl BridgeClient {
    pub async fn connect(server: SocketAddr) -> Result<Self> {
        let stream = TcpStream::connect(server).await?;
        stream.set_nodelay(true)?;
        let codec = LengthDelimitedCodec::builder()
            .length_field_length(4)
            .big_endian()
            .max_frame_length(MAX_FRAME_LEN)
            .new_codec();
        Ok(BridgeClient {
            framed: Framed::new(stream, codec),
        })
    }

    pub async fn send(&mut self, message: &Message) -> Result<()> {
        self.send_raw(&encode_json(message)).await
    }

    /// Sends one frame with an arbitrary payload.
    pub async fn send_raw(&mut self, payload: &[u8]) -> Result<()> {
        self.framed.send(payload).await?;
        Ok(())
    }

    pub async fn recv(&mut self, timeout: Duration) -> Result<Option<Message>> {
        match tokio::time::timeout(timeout, self.framed.next()).await {
            Err(_) => Ok(None),
            Ok(None) => Err(ClientError::Closed),
            Ok(Some(frame)) => Ok(Some(decode_json(&frame?)?)),
        }
    }
}

/// What one bot heard back from the agent, with bot-clock receive times.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BotLog {
    pub performer_id: String,
    pub sent: usize,
    pub received: Vec<(f64, Message)>,
}

impl BotLog {
    pub fn gestures(&self) -> impl Iterator<Item = (f64, i32, f32)> + '_ {
        self.received.iter().filter_map(|(t, m)| match m {
            Message::Gesture {
                gesture_id,
                probability,
                ..
            } => Some((*t, *gesture_id, *probability)),
            _ => None,
        })
    }

    pub fn new_ideas(&self) -> impl Iterator<Item = f64> + '_ {
        self.received.iter().filter_map(|(_, m)| match m {
            Message::NewIdea { time, .. } => Some(*time),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BotOptions {
    /// Bot-clock seconds per wall second; match the server's clock rate.
    pub time_scale: f64,
    pub say_bye: bool,
    /// How long to keep listening after the script ends (bot-clock seconds).
    pub linger: f64,
}

impl Default for BotOptions {
    fn default() -> Self {
        BotOptions {
            time_scale: 1.0,
            say_bye: true,
            linger: 1.5,
        }
    }
}

/// Plays one script over OSC in real time (scaled), collecting replies.
pub async fn run_bot(server: SocketAddr, script: BotScript, options: BotOptions) -> Result<BotLog> {
    script.validate()?;
    let mut client = OscClient::connect(server).await?;
    let start = Instant::now();
    let scale = options.time_scale;
    let at = |t: f64| start + Duration::from_secs_f64(t.max(0.0) / scale);
    let bot_now = |start: Instant| start.elapsed().as_secs_f64() * scale;
    let mut log = BotLog {
        performer_id: script.performer_id.clone(),
        ..Default::default()
    };
    let messages = script.messages(options.say_bye);
    let end = messages.last().map(|m| m.time).unwrap_or(0.0) + options.linger;
    let mut pending = messages.into_iter().peekable();
    loop {
        let next_due = match pending.peek() {
            Some(m) => at(m.time),
            None => at(end),
        };
        tokio::select! {
            biased;
            r = client.recv(Duration::from_secs(3600)) => {
                if let Some(msgs) = r? {
                    let t = bot_now(start);
                    log.received.extend(msgs.into_iter().map(|m| (t, m)));
                }
            }
            _ = tokio::time::sleep_until(next_due) => {
                let Some(m) = pending.next() else { break };
                client.send(&m.message).await?;
                log.sent += 1;
                // send everything else that is already due without another trip through select
                while let Some(m) = pending.next_if(|m| at(m.time) <= Instant::now()) {
                    client.send(&m.message).await?;
                    log.sent += 1;
                }
            }
        }
    }
    debug!(performer = %log.performer_id, sent = log.sent, received = log.received.len(), "bot finished");
    Ok(log)
}

/// Runs every script concurrently, one socket per bot.
pub async fn run_bots(
    server: SocketAddr,
    scripts: Vec<BotScript>,
    options: BotOptions,
) -> Result<Vec<BotLog>> {
    let mut set = JoinSet::new();
    for (i, s) in scripts.into_iter().enumerate() {
        set.spawn(async move { (i, run_bot(server, s, options).await) });
    }
    let mut out: Vec<(usize, BotLog)> = Vec::new();
    while let Some(joined) = set.join_next().await {
        let (i, r) = joined.map_err(|e| ClientError::Io(std::io::Error::other(e)))?;
        out.push((i, r?));
    }
    out.sort_by_key(|(i, _)| *i);
    Ok(out.into_iter().map(|(_, l)| l).collect())
}
