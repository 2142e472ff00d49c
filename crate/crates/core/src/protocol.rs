//! Wire messages shared by the datagram (OSC 1.0) and stream-bridge transports.
//!
//! | address           | arguments                                             | direction |
//! |-------------------|-------------------------------------------------------|-----------|
//! | `/mt/hello`       | `s:performer_id s:app_name`                           | in        |
//! | `/mt/touch`       | `s:performer_id d:time f:x f:y f:velocity`            | in        |
//! | `/mt/touch_ended` | `s:performer_id d:time`                               | in        |
//! | `/mt/gesture`     | `s:performer_id i:gesture_id f:probability`           | out (one) |
//! | `/mt/newidea`     | `d:time f:flux_now f:flux_prev`                       | out (all) |
//! | `/mt/bye`         | `s:performer_id`                                      | in        |
//!
//! A touch with `velocity < 0` is a touch-down; otherwise it is a move.
//!
//! Bridge frames carry the same messages as JSON objects with an `address`
//! field plus one field per OSC argument, each prefixed by a 4-byte big-endian
//! length.

use rosc::{OscMessage, OscPacket, OscType};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const PROTOCOL_VERSION: u32 = 1;

/// Velocity sentinel marking a touch-down.
pub const DOWN_SENTINEL: f32 = -1.0;

/// Largest bridge frame accepted.
pub const MAX_FRAME_LEN: usize = 64 * 1024;

pub const ADDR_HELLO: &str = "/mt/hello";
pub const ADDR_TOUCH: &str = "/mt/touch";
pub const ADDR_TOUCH_ENDED: &str = "/mt/touch_ended";
pub const ADDR_GESTURE: &str = "/mt/gesture";
pub const ADDR_NEWIDEA: &str = "/mt/newidea";
pub const ADDR_BYE: &str = "/mt/bye";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "address", deny_unknown_fields)]
pub enum Message {
    #[serde(rename = "/mt/hello")]
    Hello {
        performer_id: String,
        app_name: String,
    },
    #[serde(rename = "/mt/touch")]
    Touch {
        performer_id: String,
        time: f64,
        x: f32,
        y: f32,
        velocity: f32,
    },
    #[serde(rename = "/mt/touch_ended")]
    TouchEnded { performer_id: String, time: f64 },
    #[serde(rename = "/mt/gesture")]
    Gesture {
        performer_id: String,
        gesture_id: i32,
        probability: f32,
    },
    #[serde(rename = "/mt/newidea")]
    NewIdea {
        time: f64,
        flux_now: f32,
        flux_prev: f32,
    },
    #[serde(rename = "/mt/bye")]
    Bye { performer_id: String },
}

impl Message {
    pub fn address(&self) -> &'static str {
        match self {
            Message::Hello { .. } => ADDR_HELLO,
            Message::Touch { .. } => ADDR_TOUCH,
            Message::TouchEnded { .. } => ADDR_TOUCH_ENDED,
            Message::Gesture { .. } => ADDR_GESTURE,
            Message::NewIdea { .. } => ADDR_NEWIDEA,
            Message::Bye { .. } => ADDR_BYE,
        }
    }

    pub fn performer_id(&self) -> Option<&str> {
        match self {
            Message::Hello { performer_id, .. }
            | Message::Touch { performer_id, .. }
            | Message::TouchEnded { performer_id, .. }
            | Message::Gesture { performer_id, .. }
            | Message::Bye { performer_id } => Some(performer_id),
            Message::NewIdea { .. } => None,
        }
    }

    fn to_osc(&self) -> OscMessage {
        use OscType::*;
        let args = match self.clone() {
            Message::Hello {
                performer_id,
                app_name,
            } => vec![String(performer_id), String(app_name)],
            Message::Touch {
                performer_id,
                time,
                x,
                y,
                velocity,
            } => {
                vec![
                    String(performer_id),
                    Double(time),
                    Float(x),
                    Float(y),
                    Float(velocity),
                ]
            }
            Message::TouchEnded { performer_id, time } => vec![String(performer_id), Double(time)],
            Message::Gesture {
                performer_id,
                gesture_id,
                probability,
            } => {
                vec![String(performer_id), Int(gesture_id), Float(probability)]
            }
            Message::NewIdea {
                time,
                flux_now,
                flux_prev,
            } => {
                vec![Double(time), Float(flux_now), Float(flux_prev)]
            }
            Message::Bye { performer_id } => vec![String(performer_id)],
        };
        OscMessage {
            addr: self.address().to_string(),
            args,
        }
    }
}

/// Either a message in our address space, or a well-formed packet for an
/// address we do not handle.
#[derive(Debug, Clone, PartialEq)]
pub enum Decoded {
    Message(Message),
    Unknown(String),
}

pub fn encode_osc(message: &Message) -> Vec<u8> {
    rosc::encoder::encode(&OscPacket::Message(message.to_osc()))
        .expect("encoding into a Vec cannot fail")
}

/// Decodes one datagram. Bundles are flattened in order.
pub fn decode_osc(bytes: &[u8]) -> Result<Vec<Decoded>> {
    let (rest, packet) =
        rosc::decoder::decode_udp(bytes).map_err(|e| Error::MalformedPacket(format!("{e:?}")))?;
    if !rest.is_empty() {
        return Err(Error::MalformedPacket(format!(
            "{} trailing bytes",
            rest.len()
        )));
    }
    let mut out = Vec::new();
    flatten(packet, &mut out, 0)?;
    Ok(out)
}

fn flatten(packet: OscPacket, out: &mut Vec<Decoded>, depth: usize) -> Result<()> {
    match packet {
        OscPacket::Message(m) => out.push(from_osc(m)?),
        OscPacket::Bundle(b) => {
            if depth > 8 {
                return Err(Error::MalformedPacket("bundles nested too deeply".into()));
            }
            for p in b.content {
                flatten(p, out, depth + 1)?;
            }
        }
    }
    Ok(())
}

struct Args {
    addr: String,
    args: std::vec::IntoIter<OscType>,
}

impl Args {
    fn next(&mut self, name: &str) -> Result<OscType> {
        self.args.next().ok_or_else(|| {
            Error::MalformedPacket(format!("{}: missing argument {name}", self.addr))
        })
    }

    fn string(&mut self, name: &str) -> Result<String> {
        match self.next(name)? {
            OscType::String(s) => Ok(s),
            other => Err(self.type_error(name, "string", &other)),
        }
    }

    fn number(&mut self, name: &str) -> Result<f64> {
        match self.next(name)? {
            OscType::Float(v) => Ok(v as f64),
            OscType::Double(v) => Ok(v),
            OscType::Int(v) => Ok(v as f64),
            OscType::Long(v) => Ok(v as f64),
            other => Err(self.type_error(name, "number", &other)),
        }
    }

    fn int(&mut self, name: &str) -> Result<i32> {
        match self.next(name)? {
            OscType::Int(v) => Ok(v),
            other => Err(self.type_error(name, "int", &other)),
        }
    }

    fn type_error(&self, name: &str, want: &str, got: &OscType) -> Error {
        Error::MalformedPacket(format!(
            "{}: argument {name} should be {want}, got {got:?}",
            self.addr
        ))
    }

    fn finish(self) -> Result<()> {
        match self.args.len() {
            0 => Ok(()),
            n => Err(Error::MalformedPacket(format!(
                "{}: {n} unexpected arguments",
                self.addr
            ))),
        }
    }
}

fn from_osc(m: OscMessage) -> Result<Decoded> {
    let mut a = Args {
        addr: m.addr,
        args: m.args.into_iter(),
    };
    let msg = match a.addr.as_str() {
        ADDR_HELLO => Message::Hello {
            performer_id: a.string("performer_id")?,
            app_name: a.string("app_name")?,
        },
        ADDR_TOUCH => Message::Touch {
            performer_id: a.string("performer_id")?,
            time: a.number("time")?,
            x: a.number("x")? as f32,
            y: a.number("y")? as f32,
            velocity: a.number("velocity")? as f32,
        },
        ADDR_TOUCH_ENDED => Message::TouchEnded {
            performer_id: a.string("performer_id")?,
            time: a.number("time")?,
        },
        ADDR_GESTURE => Message::Gesture {
            performer_id: a.string("performer_id")?,
            gesture_id: a.int("gesture_id")?,
            probability: a.number("probability")? as f32,
        },
        ADDR_NEWIDEA => Message::NewIdea {
            time: a.number("time")?,
            flux_now: a.number("flux_now")? as f32,
            flux_prev: a.number("flux_prev")? as f32,
        },
        ADDR_BYE => Message::Bye {
            performer_id: a.string("performer_id")?,
        },
        _ => return Ok(Decoded::Unknown(a.addr)),
    };
    a.finish()?;
    Ok(Decoded::Message(msg))
}

/// JSON body of one bridge frame (without the length prefix).
pub fn encode_json(message: &Message) -> Vec<u8> {
    serde_json::to_vec(message).expect("messages always serialize")
}

pub fn decode_json(bytes: &[u8]) -> Result<Message> {
    serde_json::from_slice(bytes).map_err(|e| Error::MalformedPacket(e.to_string()))
}

/// Length-prefixed bridge frame.
pub fn encode_frame(message: &Message) -> Vec<u8> {
    let body = encode_json(message);
    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_messages() -> Vec<Message> {
        vec![
            Message::Hello {
                performer_id: "alice".into(),
                app_name: "rings".into(),
            },
            Message::Touch {
                performer_id: "alice".into(),
                time: 1.25,
                x: 0.5,
                y: 0.25,
                velocity: DOWN_SENTINEL,
            },
            Message::TouchEnded {
                performer_id: "alice".into(),
                time: 1.5,
            },
            Message::Gesture {
                performer_id: "alice".into(),
                gesture_id: 6,
                probability: 0.75,
            },
            Message::NewIdea {
                time: 63.0,
                flux_now: 0.5,
                flux_prev: 0.125,
            },
            Message::Bye {
                performer_id: "alice".into(),
            },
        ]
    }

    #[test]
    fn osc_round_trip() {
        for m in all_messages() {
            let bytes = encode_osc(&m);
            assert_eq!(bytes.len() % 4, 0);
            assert_eq!(decode_osc(&bytes).unwrap(), vec![Decoded::Message(m)]);
        }
    }

    #[test]
    fn osc_wire_layout_of_touch() {
        let m = Message::Touch {
            performer_id: "ab".into(),
            time: 2.0,
            x: 0.5,
            y: 1.0,
            velocity: 0.0,
        };
        let b = encode_osc(&m);
        assert_eq!(&b[..12], b"/mt/touch\0\0\0");
        assert_eq!(&b[12..20], b",sdfff\0\0");
        assert_eq!(&b[20..24], b"ab\0\0");
        assert_eq!(&b[24..32], &2.0f64.to_be_bytes());
        assert_eq!(&b[32..36], &0.5f32.to_be_bytes());
    }

    #[test]
    fn json_field_names_match_osc_arguments() {
        let m = Message::Touch {
            performer_id: "p".into(),
            time: 1.0,
            x: 0.5,
            y: 0.5,
            velocity: 0.25,
        };
        let v: serde_json::Value = serde_json::from_slice(&encode_json(&m)).unwrap();
        assert_eq!(v["address"], "/mt/touch");
        assert_eq!(v["performer_id"], "p");
        assert_eq!(v["velocity"], 0.25);
        for m in all_messages() {
            assert_eq!(decode_json(&encode_json(&m)).unwrap(), m);
        }
        let frame = encode_frame(&all_messages()[0]);
        assert_eq!(
            u32::from_be_bytes(frame[..4].try_into().unwrap()) as usize,
            frame.len() - 4
        );
    }

    #[test]
    fn garbage_and_wrong_types_are_malformed() {
        assert!(matches!(
            decode_osc(&[1, 2, 3]),
            Err(Error::MalformedPacket(_))
        ));
        let wrong = OscPacket::Message(OscMessage {
            addr: ADDR_HELLO.into(),
            args: vec![OscType::Int(3), OscType::String("x".into())],
        });
        let bytes = rosc::encoder::encode(&wrong).unwrap();
        assert!(decode_osc(&bytes).is_err());
        let extra = OscPacket::Message(OscMessage {
            addr: ADDR_BYE.into(),
            args: vec![OscType::String("x".into()), OscType::Int(1)],
        });
        assert!(decode_osc(&rosc::encoder::encode(&extra).unwrap()).is_err());
        assert!(decode_json(br#"{"address":"/mt/bye"}"#).is_err());
        assert!(decode_json(br#"{"address":"/mt/nope","performer_id":"a"}"#).is_err());
    }

    #[test]
    fn unknown_address_is_not_an_error() {
        let p = OscPacket::Message(OscMessage {
            addr: "/other/thing".into(),
            args: vec![],
        });
        let out = decode_osc(&rosc::encoder::encode(&p).unwrap()).unwrap();
        assert_eq!(out, vec![Decoded::Unknown("/other/thing".into())]);
    }
}
