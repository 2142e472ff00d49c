mod common;

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::time::Duration;

use ensemble_client::{run_bots, ApiClient, BotOptions, BridgeClient, ClientError, OscClient};
use ensemble_core::api::{ClassifyRequest, TransitionsRequest};
use ensemble_core::protocol::Message;
use ensemble_core::scenario::{scenario, ScenarioKind};
use ensemble_core::session_log::{read_log, LogRecord};
use ensemble_core::{FeatureVector, GestureClass};
use ensemble_server::{start, ServerConfig, ServerError};
use futures::{SinkExt, StreamExt};

fn logged_config(dir: &std::path::Path, rate: f64) -> ServerConfig {
    ServerConfig {
        log_dir: Some(dir.to_path_buf()),
        clock_rate: rate,
        ..ServerConfig::loopback()
    }
}

fn hello(id: &str) -> Message {
    Message::Hello {
        performer_id: id.into(),
        app_name: "test".into(),
    }
}

async fn wait_for_tick(api: &ApiClient, ticks: u64) {
    for _ in 0..200 {
        if api.session().await.unwrap().ticks >= ticks {
            return;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    panic!("server never reached {ticks} ticks");
}

#[tokio::test]
async fn lifecycle_logs_hello_and_ticks() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(logged_config(dir.path(), 10.0), common::small_model())
        .await
        .unwrap();
    let api = ApiClient::for_addr(server.http_addr.unwrap());
    assert_eq!(api.health().await.unwrap().status, "ok");
    let osc = OscClient::connect(server.osc_addr).await.unwrap();
    osc.send(&hello("alice")).await.unwrap();
    wait_for_tick(&api, 2).await;
    let status = api.session().await.unwrap();
    assert_eq!(status.performers.len(), 1);
    assert_eq!(status.performers[0].performer_id, "alice");
    let path = server.log_path.clone().unwrap();
    let summary = server.shutdown().await.unwrap();
    assert!(summary.ticks >= 2);

    let log = read_log(std::io::BufReader::new(std::fs::File::open(path).unwrap())).unwrap();
    assert!(log
        .records
        .iter()
        .any(|r| matches!(r, LogRecord::Inbound { message: Message::Hello { performer_id, .. }, .. } if performer_id == "alice")));
    assert_eq!(log.ticks().count() as u64, summary.ticks);
}

#[tokio::test]
async fn gestures_go_to_their_performer_and_new_ideas_to_everyone() {
    let server = start(
        ServerConfig {
            clock_rate: 8.0,
            ..ServerConfig::loopback()
        },
        common::reference_model(),
    )
    .await
    .unwrap();
    let bots = scenario(ScenarioKind::Repeated, 2, 50.0, 11);
    let logs = run_bots(
        server.osc_addr,
        bots,
        BotOptions {
            time_scale: 8.0,
            say_bye: false,
            linger: 2.0,
        },
    )
    .await
    .unwrap();
    let summary = server.shutdown().await.unwrap();
    for log in &logs {
        let ids: BTreeSet<String> = log
            .received
            .iter()
            .filter_map(|(_, m)| match m {
                Message::Gesture { performer_id, .. } => Some(performer_id.clone()),
                _ => None,
            })
            .collect();
        assert_eq!(ids, BTreeSet::from([log.performer_id.clone()]));
        assert!(
            log.gestures().count() >= 40,
            "{} gestures",
            log.gestures().count()
        );
        assert_eq!(log.new_ideas().count() as u64, summary.new_ideas);
    }
    assert!(summary.new_ideas >= 1);
}

#[tokio::test]
async fn second_address_takes_over_a_performer() {
    let server = start(
        ServerConfig {
            clock_rate: 10.0,
            ..ServerConfig::loopback()
        },
        common::small_model(),
    )
    .await
    .unwrap();
    let api = ApiClient::for_addr(server.http_addr.unwrap());
    let a = OscClient::connect(server.osc_addr).await.unwrap();
    let b = OscClient::connect(server.osc_addr).await.unwrap();
    a.send(&hello("p")).await.unwrap();
    wait_for_tick(&api, 1).await;
    b.send(&hello("p")).await.unwrap();
    let before = api.session().await.unwrap().ticks;
    wait_for_tick(&api, before + 1).await;
    let status = api.session().await.unwrap();
    assert_eq!(status.performers.len(), 1);
    assert_eq!(
        status.performers[0].address.to_string(),
        format!(
            "udp:{}",
            b.local_addr()
                .unwrap()
                .to_string()
                .replace("0.0.0.0", "127.0.0.1")
        )
    );
    assert_eq!(status.counters.address_changes, 1);
    server.shutdown().await.unwrap();
}

#[tokio::test]
async fn busy_port_is_reported() {
    let taken = std::net::UdpSocket::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap();
    let config = ServerConfig {
        osc_addr: addr,
        ..ServerConfig::loopback()
    };
    match start(config, common::small_model()).await {
        Err(ServerError::PortUnavailable { addr: a, .. }) => assert_eq!(a, addr),
        Err(e) => panic!("wrong error {e}"),
        Ok(_) => panic!("bound a busy port"),
    }
    let tcp = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let config = ServerConfig {
        http_addr: Some(tcp.local_addr().unwrap()),
        ..ServerConfig::loopback()
    };
    assert!(matches!(
        start(config, common::small_model()).await,
        Err(ServerError::PortUnavailable { .. })
    ));
}

#[tokio::test]
async fn bad_config_is_rejected_before_binding() {
    let config = ServerConfig {
        clock_rate: 0.0,
        ..ServerConfig::loopback()
    };
    assert!(matches!(
        start(config, common::small_model()).await,
        Err(ServerError::Config(_))
    ));
}

#[tokio::test]
async fn http_analysis_endpoints() {
    let server = start(ServerConfig::loopback(), common::small_model())
        .await
        .unwrap();
    let api = ApiClient::for_addr(server.http_addr.unwrap());

    let r = api
        .classify(&ClassifyRequest::Features {
            features: FeatureVector::zeros(),
        })
        .await
        .unwrap();
    assert_eq!(r.probabilities.len(), 9);
    assert!((r.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);

    let ft = ensemble_core::synth::synthesize(&ensemble_core::synth::GestureScript::new(
        GestureClass::FastTapping,
        10.0,
        3,
    ));
    let r = api
        .classify(&ClassifyRequest::Events {
            events: ft,
            now: 8.0,
            window_secs: None,
        })
        .await
        .unwrap();
    assert_eq!(r.gesture, GestureClass::FastTapping);
    assert_eq!(r.code, "FT");

    use GestureClass::*;
    let seq = vec![
        (1.0, FastTapping),
        (2.0, BigSwirling),
        (3.0, FastTapping),
        (4.0, BigSwirling),
    ];
    let t = api
        .transitions(&TransitionsRequest {
            sequences: vec![seq],
            lo: 0.0,
            hi: 10.0,
        })
        .await
        .unwrap();
    assert_eq!(t.flux, 1.0);
    let bad = vec![(2.0, FastTapping), (1.0, FastTapping)];
    match api
        .transitions(&TransitionsRequest {
            sequences: vec![bad],
            lo: 0.0,
            hi: 10.0,
        })
        .await
    {
        Err(ClientError::Api { status: 422, .. }) => {}
        other => panic!("{other:?}"),
    }

    let mut m = [[0.0; 9]; 9];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    assert_eq!(api.flux(m).await.unwrap().flux, 0.0);
    match api.flux([[0.0; 9]; 9]).await {
        Err(ClientError::Api {
            status: 422,
            message,
        }) => assert!(message.contains("no mass"), "{message}"),
        other => panic!("{other:?}"),
    }
    assert!(api.ticks_since(1e9).await.unwrap().ticks.is_empty());
    server.shutdown().await.unwrap();
}

#[tokio::test]
async fn stream_bridge_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(logged_config(dir.path(), 10.0), common::small_model())
        .await
        .unwrap();
    let mut bridge = BridgeClient::connect(server.bridge_addr.unwrap())
        .await
        .unwrap();
    bridge.send(&hello("web")).await.unwrap();
    bridge
        .send(&Message::Touch {
            performer_id: "web".into(),
            time: 0.1,
            x: 0.5,
            y: 0.5,
            velocity: -1.0,
        })
        .await
        .unwrap();
    bridge
        .send(&Message::TouchEnded {
            performer_id: "web".into(),
            time: 0.15,
        })
        .await
        .unwrap();
    bridge
        .send_raw(b"{\"address\":\"/mt/nope\"}")
        .await
        .unwrap();
    // the first gesture arrives once the warm-up window has passed
    let mut got = None;
    for _ in 0..50 {
        if let Some(m) = bridge.recv(Duration::from_millis(200)).await.unwrap() {
            got = Some(m);
            break;
        }
    }
    match got {
        Some(Message::Gesture { performer_id, .. }) => assert_eq!(performer_id, "web"),
        other => panic!("expected a gesture, got {other:?}"),
    }
    let path = server.log_path.clone().unwrap();
    let summary = server.shutdown().await.unwrap();
    assert_eq!(summary.counters.malformed_packets, 1);
    let log = read_log(std::io::BufReader::new(std::fs::File::open(path).unwrap())).unwrap();
    let phases: Vec<&str> = log
        .records
        .iter()
        .filter_map(|r| match r {
            LogRecord::Inbound { message, .. } => Some(message.address()),
            _ => None,
        })
        .collect();
    assert_eq!(phases, vec!["/mt/hello", "/mt/touch", "/mt/touch_ended"]);
}

#[tokio::test]
async fn oversized_bridge_frame_closes_only_that_connection() {
    let server = start(
        ServerConfig {
            clock_rate: 10.0,
            ..ServerConfig::loopback()
        },
        common::small_model(),
    )
    .await
    .unwrap();
    let addr: SocketAddr = server.bridge_addr.unwrap();
    let mut raw = tokio::net::TcpStream::connect(addr).await.unwrap();
    tokio::io::AsyncWriteExt::write_all(&mut raw, &u32::MAX.to_be_bytes())
        .await
        .unwrap();
    let mut buf = [0u8; 16];
    let n = tokio::time::timeout(
        Duration::from_secs(5),
        tokio::io::AsyncReadExt::read(&mut raw, &mut buf),
    )
    .await
    .unwrap();
    assert!(matches!(n, Ok(0) | Err(_)), "connection should be closed");
    let mut ok = BridgeClient::connect(addr).await.unwrap();
    ok.send(&hello("still-fine")).await.unwrap();
    let api = ApiClient::for_addr(server.http_addr.unwrap());
    wait_for_tick(&api, 2).await;
    assert!(api
        .session()
        .await
        .unwrap()
        .performers
        .iter()
        .any(|p| p.performer_id == "still-fine"));
    server.shutdown().await.unwrap();
}

#[tokio::test]
async fn websocket_bridge_accepts_json_messages() {
    let server = start(
        ServerConfig {
            clock_rate: 10.0,
            ..ServerConfig::loopback()
        },
        common::small_model(),
    )
    .await
    .unwrap();
    let url = format!("ws://{}/bridge", server.http_addr.unwrap());
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
    let text = String::from_utf8(ensemble_core::protocol::encode_json(&hello("surface"))).unwrap();
    ws.send(tokio_tungstenite::tungstenite::Message::Text(text.into()))
        .await
        .unwrap();
    let reply = tokio::time::timeout(Duration::from_secs(10), ws.next())
        .await
        .unwrap()
        .unwrap()
        .unwrap();
    let msg = ensemble_core::protocol::decode_json(reply.into_text().unwrap().as_bytes()).unwrap();
    assert!(
        matches!(msg, Message::Gesture { ref performer_id, gesture_id: 0, .. } if performer_id == "surface"),
        "{msg:?}"
    );
    server.shutdown().await.unwrap();
}
