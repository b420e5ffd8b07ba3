//! Message framing and delivery between the two parties.
//!
//! A frame on the wire is
//!
//! ```text
//! len:u32be | kind:u8 | session_id:u64be | round:u32be | payload
//! ```
//!
//! where `len` counts every byte after the length field itself. Bit vectors
//! are packed LSB-first within bytes, floating-point fields cross the wire as
//! raw IEEE-754 binary64 bits, and integers are big-endian. The same codec
//! backs both the in-process loopback used by the simulator and the TCP
//! stream used for two-process operation, so the two are observationally
//! identical to the protocol layer.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::mpsc;

use thiserror::Error;

use crate::bits::fnv1a64_continue;

/// Maximum accepted frame body length (kind + header + payload).
const MAX_FRAME_LEN: u32 = 1 << 24;

const KIND_SESSION_INIT: u8 = 0x00;
const KIND_SYNDROME: u8 = 0x01;
const KIND_DISCLOSE: u8 = 0x02;
const KIND_VERIFY_TAG: u8 = 0x03;
const KIND_RESULT: u8 = 0x04;

#[derive(Debug, Error)]
pub enum TransportError {
    /// The peer closed the channel (or the process-local sender hung up).
    #[error("transport closed")]
    Closed,
    /// Structurally invalid frame: bad length, unknown tag, short payload,
    /// or a round-ordering violation.
    #[error("corrupt frame: {0}")]
    FrameCorrupt(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Session parameters exchanged (in both directions) before any syndrome.
///
/// `sender_role` is the role the sending endpoint has taken; everything else
/// must agree field-for-field between the two directions.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionInit {
    pub code_id: String,
    /// Raw binary64 bits so both parties decode a bit-identical value.
    pub q_est_bits: u64,
    pub f_start_bits: u64,
    pub disclose_per_round: u32,
    pub shared_seed: u64,
    pub sender_role: u8,
}

/// Disclosure payload. The symmetric protocol sends a digest of the
/// locally computed position list plus the local bit values; the standard
/// blind protocol sends explicit positions in the request direction and
/// values in the answer direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Disclose {
    /// FNV-1a digest of the position list, for desync detection.
    pub digest: u64,
    pub positions: Option<Vec<u32>>,
    /// (bit count, packed bits); `None` for a request without values.
    pub values: Option<(u32, Vec<u8>)>,
}

/// Result codes carried by [`Payload::Result`].
pub mod result_code {
    pub const RECONCILE_ABORTED: u8 = 0x00;
    pub const RECONCILE_DONE: u8 = 0x01;
    pub const VERIFY_FAILED: u8 = 0x10;
    pub const VERIFY_OK: u8 = 0x11;
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    SessionInit(SessionInit),
    /// Packed syndrome bits; the bit count is known from the session's code.
    Syndrome(Vec<u8>),
    Disclose(Disclose),
    VerifyTag { seed: u64, tag: u64 },
    Result(u8),
}

impl Payload {
    fn kind(&self) -> u8 {
        match self {
            Payload::SessionInit(_) => KIND_SESSION_INIT,
            Payload::Syndrome(_) => KIND_SYNDROME,
            Payload::Disclose(_) => KIND_DISCLOSE,
            Payload::VerifyTag { .. } => KIND_VERIFY_TAG,
            Payload::Result(_) => KIND_RESULT,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolMessage {
    pub session_id: u64,
    /// Per-direction sequence number, assigned by the sending endpoint and
    /// checked strictly increasing by the receiver.
    pub round: u32,
    pub payload: Payload,
}

impl ProtocolMessage {
    pub fn encode(&self) -> Vec<u8> {
        let mut body = Vec::with_capacity(32);
        body.push(self.payload.kind());
        body.extend_from_slice(&self.session_id.to_be_bytes());
        body.extend_from_slice(&self.round.to_be_bytes());
        match &self.payload {
            Payload::SessionInit(init) => {
                let id = init.code_id.as_bytes();
                body.extend_from_slice(&(id.len() as u16).to_be_bytes());
                body.extend_from_slice(id);
                body.extend_from_slice(&init.q_est_bits.to_be_bytes());
                body.extend_from_slice(&init.f_start_bits.to_be_bytes());
                body.extend_from_slice(&init.disclose_per_round.to_be_bytes());
                body.extend_from_slice(&init.shared_seed.to_be_bytes());
                body.push(init.sender_role);
            }
            Payload::Syndrome(bits) => body.extend_from_slice(bits),
            Payload::Disclose(d) => {
                let mut flags = 0u8;
                if d.positions.is_some() {
                    flags |= 1;
                }
                if d.values.is_some() {
                    flags |= 2;
                }
                body.push(flags);
                body.extend_from_slice(&d.digest.to_be_bytes());
                if let Some(pos) = &d.positions {
                    body.extend_from_slice(&(pos.len() as u32).to_be_bytes());
                    for p in pos {
                        body.extend_from_slice(&p.to_be_bytes());
                    }
                }
                if let Some((nbits, packed)) = &d.values {
                    body.extend_from_slice(&nbits.to_be_bytes());
                    body.extend_from_slice(packed);
                }
            }
            Payload::VerifyTag { seed, tag } => {
                body.extend_from_slice(&seed.to_be_bytes());
                body.extend_from_slice(&tag.to_be_bytes());
            }
            Payload::Result(code) => body.push(*code),
        }
        let mut frame = Vec::with_capacity(4 + body.len());
        frame.extend_from_slice(&(body.len() as u32).to_be_bytes());
        frame.extend_from_slice(&body);
        frame
    }

    /// Decodes one frame body (everything after the length prefix).
    pub fn decode(body: &[u8]) -> Result<Self, TransportError> {
        let corrupt = |what: &str| TransportError::FrameCorrupt(what.to_string());
        if body.len() < 13 {
            return Err(corrupt("frame shorter than header"));
        }
        let kind = body[0];
        let session_id = u64::from_be_bytes(body[1..9].try_into().unwrap());
        let round = u32::from_be_bytes(body[9..13].try_into().unwrap());
        let mut rest = &body[13..];

        fn take<'a>(rest: &mut &'a [u8], n: usize) -> Result<&'a [u8], TransportError> {
            if rest.len() < n {
                return Err(TransportError::FrameCorrupt("truncated payload".into()));
            }
            let (head, tail) = rest.split_at(n);
            *rest = tail;
            Ok(head)
        }
        fn take_u64(rest: &mut &[u8]) -> Result<u64, TransportError> {
            Ok(u64::from_be_bytes(take(rest, 8)?.try_into().unwrap()))
        }
        fn take_u32(rest: &mut &[u8]) -> Result<u32, TransportError> {
            Ok(u32::from_be_bytes(take(rest, 4)?.try_into().unwrap()))
        }

        let payload = match kind {
            KIND_SESSION_INIT => {
                let id_len = u16::from_be_bytes(take(&mut rest, 2)?.try_into().unwrap()) as usize;
                let code_id = String::from_utf8(take(&mut rest, id_len)?.to_vec())
                    .map_err(|_| corrupt("code id not utf-8"))?;
                let q_est_bits = take_u64(&mut rest)?;
                let f_start_bits = take_u64(&mut rest)?;
                let disclose_per_round = take_u32(&mut rest)?;
                let shared_seed = take_u64(&mut rest)?;
                let sender_role = take(&mut rest, 1)?[0];
                Payload::SessionInit(SessionInit {
                    code_id,
                    q_est_bits,
                    f_start_bits,
                    disclose_per_round,
                    shared_seed,
                    sender_role,
                })
            }
            KIND_SYNDROME => {
                let bits = rest.to_vec();
                rest = &[];
                Payload::Syndrome(bits)
            }
            KIND_DISCLOSE => {
                let flags = take(&mut rest, 1)?[0];
                if flags & !3 != 0 {
                    return Err(corrupt("unknown disclose flags"));
                }
                let digest = take_u64(&mut rest)?;
                let positions = if flags & 1 != 0 {
                    let count = take_u32(&mut rest)? as usize;
                    let raw = take(&mut rest, count * 4)?;
                    Some(
                        raw.chunks_exact(4)
                            .map(|c| u32::from_be_bytes(c.try_into().unwrap()))
                            .collect(),
                    )
                } else {
                    None
                };
                let values = if flags & 2 != 0 {
                    let nbits = take_u32(&mut rest)?;
                    let packed = take(&mut rest, (nbits as usize).div_ceil(8))?.to_vec();
                    Some((nbits, packed))
                } else {
                    None
                };
                Payload::Disclose(Disclose {
                    digest,
                    positions,
                    values,
                })
            }
            KIND_VERIFY_TAG => {
                let seed = take_u64(&mut rest)?;
                let tag = take_u64(&mut rest)?;
                Payload::VerifyTag { seed, tag }
            }
            KIND_RESULT => {
                let code = take(&mut rest, 1)?[0];
                Payload::Result(code)
            }
            other => return Err(corrupt(&format!("unknown kind tag {other:#04x}"))),
        };
        if !rest.is_empty() {
            return Err(corrupt("trailing bytes in payload"));
        }
        Ok(ProtocolMessage {
            session_id,
            round,
            payload,
        })
    }
}

/// Raw framed-byte channel under an [`Endpoint`].
pub trait FrameChannel: Send {
    /// Sends one complete frame (length prefix included).
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), TransportError>;
    /// Receives one complete frame body (length prefix stripped).
    fn recv_frame(&mut self) -> Result<Vec<u8>, TransportError>;
}

/// A transport endpoint: the codec plus per-direction sequence tracking and
/// a running transcript digest over every frame sent or received.
pub trait Transport: Send {
    fn send(&mut self, session_id: u64, payload: Payload) -> Result<(), TransportError>;
    fn recv(&mut self) -> Result<ProtocolMessage, TransportError>;
    /// FNV-1a digest over all frames seen so far, tagged by direction.
    fn transcript_digest(&self) -> u64;
    /// Marks the start of a new session: sequence numbers and the
    /// transcript digest are session-scoped, so an endpoint reused for
    /// consecutive sessions (one TCP connection, many frames) behaves
    /// exactly like a fresh one.
    fn begin_session(&mut self) {}
}

pub struct Endpoint<C: FrameChannel> {
    chan: C,
    next_send: u32,
    last_recv: Option<u32>,
    transcript: u64,
}

impl<C: FrameChannel> Endpoint<C> {
    pub fn new(chan: C) -> Self {
        Endpoint {
            chan,
            next_send: 0,
            last_recv: None,
            transcript: 0xcbf2_9ce4_8422_2325,
        }
    }
}

impl<C: FrameChannel> Transport for Endpoint<C> {
    fn send(&mut self, session_id: u64, payload: Payload) -> Result<(), TransportError> {
        let msg = ProtocolMessage {
            session_id,
            round: self.next_send,
            payload,
        };
        self.next_send += 1;
        let frame = msg.encode();
        self.transcript = fnv1a64_continue(self.transcript, b"S");
        self.transcript = fnv1a64_continue(self.transcript, &frame);
        self.chan.send_frame(&frame)
    }

    fn recv(&mut self) -> Result<ProtocolMessage, TransportError> {
        let body = self.chan.recv_frame()?;
        self.transcript = fnv1a64_continue(self.transcript, b"R");
        self.transcript = fnv1a64_continue(self.transcript, &(body.len() as u32).to_be_bytes());
        self.transcript = fnv1a64_continue(self.transcript, &body);
        let msg = ProtocolMessage::decode(&body)?;
        if let Some(last) = self.last_recv {
            if msg.round <= last {
                return Err(TransportError::FrameCorrupt(format!(
                    "round went backwards: {} after {}",
                    msg.round, last
                )));
            }
        }
        self.last_recv = Some(msg.round);
        Ok(msg)
    }

    fn transcript_digest(&self) -> u64 {
        self.transcript
    }

    fn begin_session(&mut self) {
        self.next_send = 0;
        self.last_recv = None;
        self.transcript = 0xcbf2_9ce4_8422_2325;
    }
}

/// In-process channel: frames travel over `mpsc` queues, still fully
/// serialized so loopback traffic is byte-identical to socket traffic.
pub struct LoopbackChannel {
    tx: mpsc::Sender<Vec<u8>>,
    rx: mpsc::Receiver<Vec<u8>>,
}

impl FrameChannel for LoopbackChannel {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        self.tx
            .send(frame.to_vec())
            .map_err(|_| TransportError::Closed)
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>, TransportError> {
        let frame = self.rx.recv().map_err(|_| TransportError::Closed)?;
        if frame.len() < 4 {
            return Err(TransportError::FrameCorrupt("frame shorter than length".into()));
        }
        let len = u32::from_be_bytes(frame[..4].try_into().unwrap());
        if len > MAX_FRAME_LEN || frame.len() != 4 + len as usize {
            return Err(TransportError::FrameCorrupt("length mismatch".into()));
        }
        Ok(frame[4..].to_vec())
    }
}

/// Creates a connected pair of loopback endpoints.
pub fn loopback_pair() -> (Endpoint<LoopbackChannel>, Endpoint<LoopbackChannel>) {
    let (tx_a, rx_b) = mpsc::channel();
    let (tx_b, rx_a) = mpsc::channel();
    (
        Endpoint::new(LoopbackChannel { tx: tx_a, rx: rx_a }),
        Endpoint::new(LoopbackChannel { tx: tx_b, rx: rx_b }),
    )
}

/// Framed byte stream over TCP.
pub struct TcpChannel {
    stream: TcpStream,
}

impl TcpChannel {
    pub fn new(stream: TcpStream) -> Self {
        let _ = stream.set_nodelay(true);
        TcpChannel { stream }
    }
}

impl FrameChannel for TcpChannel {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        self.stream.write_all(frame)?;
        Ok(())
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>, TransportError> {
        let mut len_buf = [0u8; 4];
        let mut filled = 0;
        while filled < 4 {
            match self.stream.read(&mut len_buf[filled..]) {
                Ok(0) if filled == 0 => return Err(TransportError::Closed),
                Ok(0) => {
                    return Err(TransportError::FrameCorrupt(
                        "eof inside frame length".into(),
                    ))
                }
                Ok(k) => filled += k,
                Err(e) => return Err(e.into()),
            }
        }
        let len = u32::from_be_bytes(len_buf);
        if len > MAX_FRAME_LEN {
            return Err(TransportError::FrameCorrupt(format!(
                "frame length {len} exceeds limit"
            )));
        }
        let mut body = vec![0u8; len as usize];
        self.stream
            .read_exact(&mut body)
            .map_err(|_| TransportError::FrameCorrupt("truncated frame".into()))?;
        Ok(body)
    }
}

pub type TcpTransport = Endpoint<TcpChannel>;

/// SplitMix64: the synchronized PRNG both parties run in lockstep for
/// position selection, and the seed-derivation primitive for the simulator.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// One bit, from the low bit of the next output.
    pub fn next_bit(&mut self) -> u8 {
        (self.next_u64() & 1) as u8
    }

    /// Uniform f64 in [0,1) from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform index in `0..range` via the rejection-free
    /// multiply-then-shift mapping.
    pub fn next_index(&mut self, range: usize) -> usize {
        debug_assert!(range > 0);
        ((self.next_u64() as u128 * range as u128) >> 64) as usize
    }

    /// Draws `k` distinct elements from `candidates` by partial
    /// Fisher-Yates; the drawn prefix order is the selection order.
    pub fn sample_positions(&mut self, candidates: &mut Vec<usize>, k: usize) -> Vec<usize> {
        let k = k.min(candidates.len());
        for i in 0..k {
            let j = i + self.next_index(candidates.len() - i);
            candidates.swap(i, j);
        }
        candidates.drain(..k).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_vector() {
        let mut rng = SplitMix64::new(0);
        assert_eq!(rng.next_u64(), 0xE220_A839_7B1D_CDAF);
    }

    #[test]
    fn splitmix_same_seed_same_stream() {
        let mut a = SplitMix64::new(42);
        let mut b = SplitMix64::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn sample_positions_deterministic_and_distinct() {
        let mut a = SplitMix64::new(7);
        let mut b = SplitMix64::new(7);
        let mut ca: Vec<usize> = (0..100).collect();
        let mut cb: Vec<usize> = (0..100).collect();
        let sa = a.sample_positions(&mut ca, 10);
        let sb = b.sample_positions(&mut cb, 10);
        assert_eq!(sa, sb);
        let mut sorted = sa.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 10);
    }

    #[test]
    fn syndrome_payload_is_packed_bits_only() {
        // 486 syndrome bits pack into exactly 61 payload bytes.
        let bits = vec![0u8; 61];
        let msg = ProtocolMessage {
            session_id: 1,
            round: 0,
            payload: Payload::Syndrome(bits),
        };
        let frame = msg.encode();
        // 4 length + 1 kind + 8 session + 4 round + 61 payload.
        assert_eq!(frame.len(), 4 + 13 + 61);
    }

    #[test]
    fn loopback_roundtrip_identity() {
        let (mut a, mut b) = loopback_pair();
        let payload = Payload::VerifyTag {
            seed: 0xdead_beef,
            tag: 42,
        };
        a.send(7, payload.clone()).unwrap();
        let got = b.recv().unwrap();
        assert_eq!(got.session_id, 7);
        assert_eq!(got.payload, payload);
    }

    #[test]
    fn recv_after_hangup_is_closed() {
        let (a, mut b) = loopback_pair();
        drop(a);
        assert!(matches!(b.recv(), Err(TransportError::Closed)));
    }

    #[test]
    fn unknown_kind_is_corrupt() {
        let msg = ProtocolMessage {
            session_id: 0,
            round: 0,
            payload: Payload::Result(0),
        };
        let mut frame = msg.encode();
        frame[4] = 0x7f; // kind byte
        let err = ProtocolMessage::decode(&frame[4..]).unwrap_err();
        assert!(matches!(err, TransportError::FrameCorrupt(_)));
    }

    #[test]
    fn truncated_tcp_frame_is_corrupt() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let writer = std::thread::spawn(move || {
            let mut s = TcpStream::connect(addr).unwrap();
            // Claim 20 body bytes, deliver 5, then close.
            s.write_all(&20u32.to_be_bytes()).unwrap();
            s.write_all(&[0u8; 5]).unwrap();
        });
        let (stream, _) = listener.accept().unwrap();
        let mut chan = TcpChannel::new(stream);
        writer.join().unwrap();
        assert!(matches!(
            chan.recv_frame(),
            Err(TransportError::FrameCorrupt(_))
        ));
    }

    #[test]
    fn repeated_round_number_is_corrupt() {
        // Hand-craft two frames with the same round and push them past the
        // sending endpoint's sequencing.
        let (tx, rx) = mpsc::channel();
        let (tx_unused, _rx_unused) = mpsc::channel();
        let mut b = Endpoint::new(LoopbackChannel {
            tx: tx_unused,
            rx,
        });
        let frame = ProtocolMessage {
            session_id: 1,
            round: 3,
            payload: Payload::Result(0x11),
        }
        .encode();
        tx.send(frame.clone()).unwrap();
        tx.send(frame).unwrap();
        assert!(b.recv().is_ok());
        assert!(matches!(b.recv(), Err(TransportError::FrameCorrupt(_))));
    }

    proptest::proptest! {
        /// Wire serialization round-trips bit-exactly for every message
        /// kind.
        #[test]
        fn encode_decode_roundtrip(
            session_id in proptest::prelude::any::<u64>(),
            round in proptest::prelude::any::<u32>(),
            variant in 0u8..5,
            code_id in "[a-z0-9_]{0,24}",
            a in proptest::prelude::any::<u64>(),
            b in proptest::prelude::any::<u64>(),
            small in 0u32..200,
            bytes in proptest::collection::vec(proptest::prelude::any::<u8>(), 0..64),
            positions in proptest::collection::vec(proptest::prelude::any::<u32>(), 0..32),
        ) {
            let payload = match variant {
                0 => Payload::SessionInit(SessionInit {
                    code_id,
                    q_est_bits: a,
                    f_start_bits: b,
                    disclose_per_round: small,
                    shared_seed: a ^ b,
                    sender_role: (small % 2) as u8,
                }),
                1 => Payload::Syndrome(bytes.clone()),
                2 => {
                    let nbits = (bytes.len() * 8) as u32;
                    Payload::Disclose(Disclose {
                        digest: a,
                        positions: if small % 2 == 0 { Some(positions.clone()) } else { None },
                        values: if small % 3 == 0 { Some((nbits, bytes.clone())) } else { None },
                    })
                }
                3 => Payload::VerifyTag { seed: a, tag: b },
                _ => Payload::Result((small % 256) as u8),
            };
            let msg = ProtocolMessage { session_id, round, payload };
            let frame = msg.encode();
            let len = u32::from_be_bytes(frame[..4].try_into().unwrap()) as usize;
            proptest::prop_assert_eq!(len, frame.len() - 4);
            let decoded = ProtocolMessage::decode(&frame[4..]).unwrap();
            proptest::prop_assert_eq!(decoded, msg);
        }
    }
}
