use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use ensemble_core::protocol::{
    decode_json, decode_osc, encode_json, Decoded, Message, MAX_FRAME_LEN,
};
use ensemble_core::session::Destination;
use futures::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream, UdpSocket};
use tokio::sync::mpsc;
use tokio_util::codec::{FramedRead, FramedWrite, LengthDelimitedCodec};
use tracing::{debug, warn};

use crate::SessionClock;

pub(crate) const INBOUND_QUEUE: usize = 8192;
pub(crate) const OUTBOUND_QUEUE: usize = 256;

/// What transports hand to the session actor.
#[derive(Debug)]
pub(crate) enum Inbound {
    Packet {
        from: Destination,
        arrival: f64,
        len: usize,
        decoded: Result<Vec<Decoded>, String>,
    },
    BridgeOpened {
        id: u64,
        tx: mpsc::Sender<Message>,
    },
    BridgeClosed {
        id: u64,
    },
}

pub(crate) fn bridge_codec() -> LengthDelimitedCodec {
    LengthDelimitedCodec::builder()
        .length_field_length(4)
        .big_endian()
        .max_frame_length(MAX_FRAME_LEN)
        .new_codec()
}

pub(crate) fn decode_bridge_payload(bytes: &[u8]) -> Result<Vec<Decoded>, String> {
    decode_json(bytes)
        .map(|m| vec![Decoded::Message(m)])
        .map_err(|e| e.to_string())
}

pub(crate) async fn udp_receiver(
    socket: Arc<UdpSocket>,
    tx: mpsc::Sender<Inbound>,
    clock: SessionClock,
) {
    let mut buf = vec![0u8; 65_536];
    loop {
        let (len, from) = match socket.recv_from(&mut buf).await {
            Ok(r) => r,
            Err(e) => {
                // e.g. ICMP port-unreachable surfacing on some platforms
                debug!("udp receive error: {e}");
                continue;
            }
        };
        let arrival = clock.now();
        let decoded = decode_osc(&buf[..len]).map_err(|e| e.to_string());
        let packet = Inbound::Packet {
            from: Destination::Datagram(from),
            arrival,
            len,
            decoded,
        };
        if tx.send(packet).await.is_err() {
            return;
        }
    }
}

pub(crate) async fn bridge_acceptor(
    listener: TcpListener,
    tx: mpsc::Sender<Inbound>,
    ids: Arc<AtomicU64>,
    clock: SessionClock,
) {
    loop {
        match listener.accept().await {
            Ok((stream, peer)) => {
                let id = ids.fetch_add(1, Ordering::Relaxed);
                tokio::spawn(bridge_connection(stream, peer, id, tx.clone(), clock));
            }
            Err(e) => warn!("bridge accept failed: {e}"),
        }
    }
}

async fn bridge_connection(
    stream: TcpStream,
    peer: SocketAddr,
    id: u64,
    tx: mpsc::Sender<Inbound>,
    clock: SessionClock,
) {
    let _ = stream.set_nodelay(true);
    let (r, w) = stream.into_split();
    let mut frames = FramedRead::new(r, bridge_codec());
    let mut sink = FramedWrite::new(w, bridge_codec());
    let (out_tx, mut out_rx) = mpsc::channel::<Message>(OUTBOUND_QUEUE);
    if tx
        .send(Inbound::BridgeOpened { id, tx: out_tx })
        .await
        .is_err()
    {
        return;
    }
    debug!(%peer, id, "bridge connected");
    let writer = tokio::spawn(async move {
        while let Some(m) = out_rx.recv().await {
            if sink.send(&encode_json(&m)[..]).await.is_err() {
                break;
            }
        }
    });
    let from = Destination::Bridge(id);
    while let Some(frame) = frames.next().await {
        match frame {
            Ok(bytes) => {
                let arrival = clock.now();
                let packet = Inbound::Packet {
                    from,
                    arrival,
                    len: bytes.len(),
                    decoded: decode_bridge_payload(&bytes),
                };
                if tx.send(packet).await.is_err() {
                    break;
                }
            }
            Err(e) => {
                // a bad length prefix leaves the stream unframed; drop the connection
                warn!(%peer, id, "closing bridge connection: {e}");
                break;
            }
        }
    }
    writer.abort();
    let _ = tx.send(Inbound::BridgeClosed { id }).await;
    debug!(%peer, id, "bridge disconnected");
}
