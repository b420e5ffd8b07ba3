//! Protocol-level invariants that cut across modules: disclosure
//! monotonicity, transport equivalence of the baseline protocols, and the
//! round-0 efficiency floor.

use std::net::{TcpListener, TcpStream};
use std::sync::Mutex;

use reconcile_core::codes::wifi::{standard_code, Rate};
use reconcile_core::codes::CodeSpec;
use reconcile_core::decoder::{self, DecodeOutcome, DecodeRequest};
use reconcile_core::protocol::{
    blind_efficiency, disclosure_count, run_pair_with, run_session_with, BpDecoder, Outcome,
    PartyState, PosClass, ProtocolKind, Role, SessionConfig, SessionResult, SyndromeDecoder,
};
use reconcile_core::sim::{sweep_layout, ChannelModel};
use reconcile_core::transport::{Endpoint, SplitMix64, TcpChannel};

/// Decoder wrapper that records every failed-round disclosure set.
struct RecordingDecoder {
    log: Mutex<Vec<Vec<usize>>>,
}

impl SyndromeDecoder for RecordingDecoder {
    fn decode(
        &self,
        req: &DecodeRequest,
        code: &CodeSpec,
    ) -> Result<DecodeOutcome, decoder::DecodeError> {
        let out = decoder::decode(req, code)?;
        if out.status == decoder::DecodeStatus::Failed {
            self.log.lock().unwrap().push(out.low_confidence.clone());
        }
        Ok(out)
    }
}

fn build_pair<'c>(
    code: &'c CodeSpec,
    q: f64,
    seed: u64,
    kind_seedmix: u64,
) -> (PartyState<'c>, PartyState<'c>) {
    let layout = sweep_layout(code).unwrap();
    let d = disclosure_count(code.rate(), code.n, 1.0);
    let mut key_rng = SplitMix64::new(seed ^ 0xfeed);
    let x: Vec<u8> = (0..layout.raw_len()).map(|_| key_rng.next_bit()).collect();
    let mut channel = ChannelModel::new(q, seed ^ 0xbeef).unwrap();
    let (y, _) = channel.transmit(&x);
    let cfg = SessionConfig::new(seed ^ kind_seedmix, q, d, seed ^ 0x5eed);
    let alice = PartyState::new(
        Role::Alice,
        x,
        code,
        layout.clone(),
        cfg.clone(),
        SplitMix64::new(seed ^ 0xaaaa),
    )
    .unwrap();
    let bob = PartyState::new(
        Role::Bob,
        y,
        code,
        layout,
        cfg,
        SplitMix64::new(seed ^ 0xbbbb),
    )
    .unwrap();
    (alice, bob)
}

/// Positions disclosed in one round never reappear in a later round's
/// disclosure set (they are shortened and the decoder excludes them).
#[test]
fn disclosure_sets_are_monotone() {
    let code = standard_code(Rate::R34);
    let mut saw_multi_round = false;
    for i in 0..40 {
        let dec = RecordingDecoder {
            log: Mutex::new(Vec::new()),
        };
        let (mut alice, mut bob) = build_pair(&code, 0.03, 0x510 + i, 0);
        let _ = run_pair_with(ProtocolKind::Symmetric, &mut alice, &mut bob, &dec).unwrap();
        let log = dec.log.into_inner().unwrap();
        // Rounds are synchronized, so the log holds each round's set twice
        // (once per party, in arbitrary order within the pair).
        assert_eq!(log.len() % 2, 0);
        if log.len() / 2 > 1 {
            saw_multi_round = true;
        }
        let mut seen: Vec<usize> = Vec::new();
        for (k, pair) in log.chunks(2).enumerate() {
            assert_eq!(pair[0], pair[1], "frame {i}: parties disagreed in round {k}");
            for &p in &pair[0] {
                assert!(
                    !seen.contains(&p),
                    "frame {i}: position {p} re-disclosed in round {k}"
                );
            }
            seen.extend_from_slice(&pair[0]);
        }
    }
    assert!(saw_multi_round, "test never exercised a multi-round frame");
}

fn run_tcp_pair(
    kind: ProtocolKind,
    alice: &mut PartyState,
    bob: &mut PartyState,
) -> (SessionResult, SessionResult) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::scope(|s| {
        let jb = s.spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut t = Endpoint::new(TcpChannel::new(stream));
            run_session_with(kind, bob, &mut t, &BpDecoder).unwrap()
        });
        let ja = s.spawn(move || {
            let stream = TcpStream::connect(addr).unwrap();
            let mut t = Endpoint::new(TcpChannel::new(stream));
            run_session_with(kind, alice, &mut t, &BpDecoder).unwrap()
        });
        (ja.join().unwrap(), jb.join().unwrap())
    })
}

/// The baseline protocols are transport-invariant too.
#[test]
fn blind_and_rate_adaptive_loopback_equals_tcp() {
    let code = standard_code(Rate::R23);
    for kind in [ProtocolKind::StandardBlind, ProtocolKind::RateAdaptive] {
        for i in 0..25 {
            let seed = 0xcafe + (i << 8);
            let (mut la, mut lb) = build_pair(&code, 0.04, seed, kind as u64);
            let (ra_loop, rb_loop) =
                run_pair_with(kind, &mut la, &mut lb, &BpDecoder).unwrap();
            let (mut ta, mut tb) = build_pair(&code, 0.04, seed, kind as u64);
            let (ra_tcp, rb_tcp) = run_tcp_pair(kind, &mut ta, &mut tb);
            assert_eq!(ra_loop.digests, ra_tcp.digests, "{kind:?} frame {i} alice");
            assert_eq!(rb_loop.digests, rb_tcp.digests, "{kind:?} frame {i} bob");
            assert_eq!(rb_loop.corrected, rb_tcp.corrected);
            assert_eq!(ra_loop.outcome, ra_tcp.outcome);
        }
    }
}

/// Per-frame efficiency never beats the round-0 value (m - p0) / ((n -
/// p0 - s0) h), and blind disclosure accounting respects the reserve cap.
#[test]
fn efficiency_floor_and_blind_cap() {
    let code = standard_code(Rate::R23);
    let floor = blind_efficiency(code.n, code.m, code.untainted.len(), 0, 0, 29, 0.05);
    for i in 0..30 {
        let (mut alice, mut bob) = build_pair(&code, 0.05, 0x0dd + (i << 8), 1);
        let (_, rb) =
            run_pair_with(ProtocolKind::StandardBlind, &mut alice, &mut bob, &BpDecoder)
                .unwrap();
        assert!(rb.stats.f_final >= floor - 1e-12);
        assert!(rb.stats.disclosed <= rb.stats.p0);
        if rb.outcome == Outcome::Verified {
            assert!(rb.stats.converged);
        }
    }
}

/// A disclosure round on a punctured layout moves positions out of the
/// punctured set on both sides; spot-check the layout bookkeeping that
/// the blind protocol relies on.
#[test]
fn blind_reserve_shrinks_by_disclosed_count() {
    let code = standard_code(Rate::R56);
    let (mut alice, mut bob) = build_pair(&code, 0.06, 0x1234, 2);
    let p0 = bob.layout().original_punctured().len();
    let (ra, rb) =
        run_pair_with(ProtocolKind::StandardBlind, &mut alice, &mut bob, &BpDecoder).unwrap();
    assert_eq!(ra.stats.disclosed, rb.stats.disclosed);
    assert_eq!(
        bob.layout().remaining_punctured().len(),
        p0 - rb.stats.disclosed
    );
    // All original punctured positions stay punctured or shortened, never
    // raw.
    for &p in bob.layout().original_punctured() {
        assert_ne!(bob.layout().class(p), PosClass::Raw);
    }
}
