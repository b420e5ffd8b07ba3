//! Party-level state machines for symmetric blind reconciliation plus the
//! one-shot rate-adaptive and standard blind baselines, including key
//! extension/shrink and error verification.
//!
//! Both parties of a session run the same state machine over a
//! [`Transport`]; the symmetric protocol relies on the decoder being fully
//! deterministic so both sides compute identical disclosure sets and
//! decoded patterns without ever comparing more than digests.

use std::fs;
use std::io::Write as _;
use std::path::PathBuf;

use thiserror::Error;

use crate::bits::{fnv1a64, fnv1a64_continue, pack_bits, unpack_bits, xor_in_place};
use crate::codes::CodeSpec;
use crate::decoder::{self, DecodeOutcome, DecodeRequest, DecodeStatus, DEFAULT_MAX_ITERS};
use crate::sim::h_binary;
use crate::transport::{
    loopback_pair, result_code, Disclose, Payload, SessionInit, SplitMix64, Transport,
    TransportError,
};

/// Domain separators for streams derived from the shared seed.
const LAYOUT_SEED_DOMAIN: u64 = 0x4c41_594f_5554_3031; // "LAYOUT01"
const DISCLOSE_SEED_DOMAIN: u64 = 0x4449_5343_4c4f_5345; // "DISCLOSE"

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    /// The parties' states diverged: mismatched session parameters or
    /// different locally computed disclosure sets.
    #[error("desync detected: {0}")]
    Desync(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("unexpected message: {0}")]
    UnexpectedMessage(String),
    #[error("internal error: {0}")]
    Internal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Alice,
    Bob,
}

impl Role {
    pub fn opposite(self) -> Role {
        match self {
            Role::Alice => Role::Bob,
            Role::Bob => Role::Alice,
        }
    }

    pub fn wire_byte(self) -> u8 {
        match self {
            Role::Alice => 0,
            Role::Bob => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::Alice => "alice",
            Role::Bob => "bob",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolKind {
    Symmetric,
    StandardBlind,
    RateAdaptive,
}

impl ProtocolKind {
    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::Symmetric => "symmetric",
            ProtocolKind::StandardBlind => "blind",
            ProtocolKind::RateAdaptive => "rate-adaptive",
        }
    }
}

impl std::str::FromStr for ProtocolKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "symmetric" => Ok(ProtocolKind::Symmetric),
            "blind" | "standard-blind" => Ok(ProtocolKind::StandardBlind),
            "rate-adaptive" | "rate_adaptive" => Ok(ProtocolKind::RateAdaptive),
            other => Err(format!("unknown protocol {other:?}")),
        }
    }
}

/// Classification of an extended-key position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PosClass {
    Raw,
    Shortened,
    Punctured,
}

/// Partition of the n extended-key positions into raw / shortened /
/// punctured sets, remembering the round-0 shortened and punctured sets.
///
/// Disclosure only ever moves positions into the shortened set, so the
/// original sets never change after construction.
#[derive(Debug, Clone)]
pub struct FrameLayout {
    classes: Vec<PosClass>,
    orig_shortened: Vec<usize>,
    orig_punctured: Vec<usize>,
    shortened_count: usize,
}

impl FrameLayout {
    pub fn new(
        n: usize,
        mut shortened: Vec<usize>,
        mut punctured: Vec<usize>,
    ) -> Result<Self, ProtocolError> {
        shortened.sort_unstable();
        punctured.sort_unstable();
        let mut classes = vec![PosClass::Raw; n];
        for &p in shortened.iter().chain(&punctured) {
            if p >= n {
                return Err(ProtocolError::Internal(format!(
                    "layout position {p} out of range for n={n}"
                )));
            }
            if classes[p] != PosClass::Raw {
                return Err(ProtocolError::Internal(format!(
                    "layout position {p} assigned twice"
                )));
            }
            classes[p] = PosClass::Shortened;
        }
        for &p in &punctured {
            classes[p] = PosClass::Punctured;
        }
        let shortened_count = shortened.len();
        Ok(FrameLayout {
            classes,
            orig_shortened: shortened,
            orig_punctured: punctured,
            shortened_count,
        })
    }

    pub fn n(&self) -> usize {
        self.classes.len()
    }

    pub fn class(&self, i: usize) -> PosClass {
        self.classes[i]
    }

    /// Original (round-0) shortened positions, ascending.
    pub fn original_shortened(&self) -> &[usize] {
        &self.orig_shortened
    }

    /// Original (round-0) punctured positions, ascending.
    pub fn original_punctured(&self) -> &[usize] {
        &self.orig_punctured
    }

    /// Raw-key payload length n - s0 - p0.
    pub fn raw_len(&self) -> usize {
        self.n() - self.orig_shortened.len() - self.orig_punctured.len()
    }

    pub fn shortened_count(&self) -> usize {
        self.shortened_count
    }

    /// Number of non-shortened positions (raw plus still-punctured).
    pub fn active_count(&self) -> usize {
        self.n() - self.shortened_count
    }

    /// Still-punctured positions, ascending.
    pub fn remaining_punctured(&self) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.classes[i] == PosClass::Punctured)
            .collect()
    }

    /// Moves the given raw/punctured positions into the shortened set.
    pub fn mark_shortened(&mut self, positions: &[usize]) {
        for &p in positions {
            assert_ne!(
                self.classes[p],
                PosClass::Shortened,
                "position {p} disclosed twice"
            );
            self.classes[p] = PosClass::Shortened;
            self.shortened_count += 1;
        }
    }
}

/// Pads a raw key block to the extended length: shortened positions get 0,
/// punctured positions get fresh private random bits, the rest take the
/// raw bits in order.
pub fn extend(
    raw: &[u8],
    layout: &FrameLayout,
    rng_private: &mut SplitMix64,
) -> Result<Vec<u8>, ProtocolError> {
    let expected = layout.n() - layout.shortened_count()
        - layout.remaining_punctured().len();
    if raw.len() != expected {
        return Err(ProtocolError::LengthMismatch {
            expected,
            got: raw.len(),
        });
    }
    let mut next_raw = raw.iter().copied();
    let ext = (0..layout.n())
        .map(|i| match layout.class(i) {
            PosClass::Shortened => 0,
            PosClass::Punctured => rng_private.next_bit(),
            PosClass::Raw => next_raw.next().expect("raw length checked"),
        })
        .collect();
    Ok(ext)
}

/// Drops the originally shortened and punctured positions, preserving
/// order; the inverse of [`extend`] on the raw payload.
pub fn shrink(ext: &[u8], orig_shortened: &[usize], orig_punctured: &[usize]) -> Vec<u8> {
    let mut drop = vec![false; ext.len()];
    for &p in orig_shortened.iter().chain(orig_punctured) {
        drop[p] = true;
    }
    ext.iter()
        .zip(&drop)
        .filter(|(_, &d)| !d)
        .map(|(&b, _)| b)
        .collect()
}

/// Number of bits disclosed per additional round for a code of rate `rate`
/// and block length `n`, with auxiliary factor `alpha`.
pub fn disclosure_count(rate: f64, n: usize, alpha: f64) -> usize {
    assert!(rate > 0.0 && rate < 1.0, "rate must lie in (0,1)");
    assert!(alpha > 0.0, "alpha must be positive");
    (n as f64 * (0.0280 - 0.02 * rate) * alpha).ceil() as usize
}

/// Efficiency of a symmetric blind session.
pub fn symmetric_efficiency(
    n: usize,
    m: usize,
    p0: usize,
    s0: usize,
    rounds: usize,
    d: usize,
    q: f64,
) -> f64 {
    (m - p0 + rounds * d) as f64 / ((n - p0 - s0) as f64 * h_binary(q).expect("q in domain"))
}

/// Efficiency of a standard blind session; disclosure is capped by the
/// punctured reserve.
pub fn blind_efficiency(
    n: usize,
    m: usize,
    p0: usize,
    s0: usize,
    rounds: usize,
    d: usize,
    q: f64,
) -> f64 {
    (m - p0 + (rounds * d).min(p0)) as f64
        / ((n - p0 - s0) as f64 * h_binary(q).expect("q in domain"))
}

/// Builds the frame layout both parties derive independently from the
/// shared seed: punctures come from the code's untainted list while it
/// lasts, any remainder plus all shortened positions from the synchronized
/// PRNG.
pub fn build_layout(
    code: &CodeSpec,
    s_count: usize,
    p_count: usize,
    shared_seed: u64,
) -> Result<FrameLayout, ProtocolError> {
    let mut prng = SplitMix64::new(shared_seed ^ LAYOUT_SEED_DOMAIN);
    let mut punctured: Vec<usize> = code.untainted.iter().take(p_count).copied().collect();
    if punctured.len() < p_count {
        let mut taken = vec![false; code.n];
        for &p in &punctured {
            taken[p] = true;
        }
        let mut cands: Vec<usize> = (0..code.n).filter(|&i| !taken[i]).collect();
        let extra = prng.sample_positions(&mut cands, p_count - punctured.len());
        punctured.extend(extra);
    }
    let mut taken = vec![false; code.n];
    for &p in &punctured {
        taken[p] = true;
    }
    let mut cands: Vec<usize> = (0..code.n).filter(|&i| !taken[i]).collect();
    let shortened = prng.sample_positions(&mut cands, s_count);
    FrameLayout::new(code.n, shortened, punctured)
}

/// Session parameters; must be identical on both sides (checked via the
/// SessionInit exchange for the fields that matter to the transcript).
#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub session_id: u64,
    pub q_est: f64,
    pub f_start: f64,
    pub disclose_per_round: usize,
    pub shared_seed: u64,
    /// Cap on disclosure rounds; `None` means the analytic bound
    /// ceil((n - s0) / d) for the symmetric protocol and "until the
    /// reserve runs out" for standard blind.
    pub max_rounds: Option<usize>,
    pub max_iters: usize,
    /// When set, every decode dumps its LLRs as CSV into this directory.
    pub trace_dir: Option<PathBuf>,
}

impl SessionConfig {
    pub fn new(session_id: u64, q_est: f64, disclose_per_round: usize, shared_seed: u64) -> Self {
        SessionConfig {
            session_id,
            q_est,
            f_start: 1.0,
            disclose_per_round,
            shared_seed,
            max_rounds: None,
            max_iters: DEFAULT_MAX_ITERS,
            trace_dir: None,
        }
    }
}

/// One party of a reconciliation session.
pub struct PartyState<'c> {
    pub role: Role,
    pub code: &'c CodeSpec,
    pub cfg: SessionConfig,
    raw: Vec<u8>,
    ext: Vec<u8>,
    pattern: Vec<u8>,
    layout: FrameLayout,
    rounds: usize,
    disclosed: usize,
    rng_private: SplitMix64,
    d_seq_digest: u64,
}

impl<'c> PartyState<'c> {
    pub fn new(
        role: Role,
        raw: Vec<u8>,
        code: &'c CodeSpec,
        layout: FrameLayout,
        cfg: SessionConfig,
        mut rng_private: SplitMix64,
    ) -> Result<Self, ProtocolError> {
        let ext = extend(&raw, &layout, &mut rng_private)?;
        Ok(PartyState {
            role,
            code,
            cfg,
            raw,
            ext,
            pattern: vec![0u8; layout.n()],
            layout,
            rounds: 0,
            disclosed: 0,
            rng_private,
            d_seq_digest: fnv1a64(b"D"),
        })
    }

    pub fn extended(&self) -> &[u8] {
        &self.ext
    }

    pub fn layout(&self) -> &FrameLayout {
        &self.layout
    }

    fn disclose_values(&self, positions: &[usize]) -> Vec<u8> {
        positions.iter().map(|&p| self.ext[p]).collect()
    }

    fn absorb_disclosure(&mut self, positions: &[usize], own: &[u8], peer: &[u8]) {
        for (&p, (&o, &r)) in positions.iter().zip(own.iter().zip(peer)) {
            self.pattern[p] = o ^ r;
        }
        self.layout.mark_shortened(positions);
        self.rounds += 1;
        self.disclosed += positions.len();
        self.d_seq_digest = fnv1a64_continue(self.d_seq_digest, &digest_positions(positions).to_be_bytes());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbortReason {
    /// Every non-shortened position was disclosed; the frame carries no
    /// secrecy and is discarded.
    FullDisclosure,
    /// Standard blind ran out of punctured positions to convert.
    ReserveExhausted,
    /// A caller-imposed round cap fired.
    RoundLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Verified,
    VerifyFailed,
    Aborted(AbortReason),
}

/// Digests for cross-party and cross-transport determinism checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionDigests {
    /// Over every frame sent or received, direction-tagged.
    pub transcript: u64,
    /// Over the sequence of disclosure position lists.
    pub disclosure_sequence: u64,
    /// Over the decoded error pattern (0 if never converged).
    pub error_pattern: u64,
}

/// Per-frame accounting.
#[derive(Debug, Clone)]
pub struct FrameStats {
    pub code_id: String,
    pub n: usize,
    pub m: usize,
    pub s0: usize,
    pub p0: usize,
    pub q_est: f64,
    pub disclose_per_round: usize,
    /// Efficiency per the protocol's equation, from the integer inputs.
    pub f_final: f64,
    /// Additional disclosure rounds.
    pub rounds: usize,
    /// Bits actually revealed in disclosure rounds.
    pub disclosed: usize,
    pub converged: bool,
    pub verified: bool,
    /// Filled by the simulator, which alone can see the ground truth.
    pub residual_errors: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct SessionResult {
    pub outcome: Outcome,
    /// Bob's corrected raw key (empty for Alice and for aborted frames).
    pub corrected: Vec<u8>,
    pub stats: FrameStats,
    pub digests: SessionDigests,
}

/// Decoder seam so tests can force failures; production code uses
/// [`BpDecoder`].
pub trait SyndromeDecoder: Sync {
    fn decode(
        &self,
        req: &DecodeRequest,
        code: &CodeSpec,
    ) -> Result<DecodeOutcome, decoder::DecodeError>;
}

/// The default belief-propagation decoder.
pub struct BpDecoder;

impl SyndromeDecoder for BpDecoder {
    fn decode(
        &self,
        req: &DecodeRequest,
        code: &CodeSpec,
    ) -> Result<DecodeOutcome, decoder::DecodeError> {
        decoder::decode(req, code)
    }
}

fn digest_positions(positions: &[usize]) -> u64 {
    let mut bytes = Vec::with_capacity(positions.len() * 4);
    for &p in positions {
        bytes.extend_from_slice(&(p as u32).to_be_bytes());
    }
    fnv1a64(&bytes)
}

fn recv_expected<T: Transport>(
    t: &mut T,
    session_id: u64,
    what: &str,
) -> Result<Payload, ProtocolError> {
    let msg = t.recv()?;
    if msg.session_id != session_id {
        return Err(ProtocolError::Desync(format!(
            "session id {:#x} != {:#x} while waiting for {what}",
            msg.session_id, session_id
        )));
    }
    Ok(msg.payload)
}

fn exchange_init<T: Transport>(party: &PartyState, t: &mut T) -> Result<(), ProtocolError> {
    t.begin_session();
    let own = SessionInit {
        code_id: party.code.id.clone(),
        q_est_bits: party.cfg.q_est.to_bits(),
        f_start_bits: party.cfg.f_start.to_bits(),
        disclose_per_round: party.cfg.disclose_per_round as u32,
        shared_seed: party.cfg.shared_seed,
        sender_role: party.role.wire_byte(),
    };
    t.send(party.cfg.session_id, Payload::SessionInit(own.clone()))?;
    let payload = recv_expected(t, party.cfg.session_id, "session init")?;
    let Payload::SessionInit(peer) = payload else {
        return Err(ProtocolError::UnexpectedMessage(
            "expected SessionInit".into(),
        ));
    };
    if peer.sender_role != party.role.opposite().wire_byte() {
        return Err(ProtocolError::Desync("role assignment clash".into()));
    }
    let mut mismatches = Vec::new();
    if peer.code_id != own.code_id {
        mismatches.push("code_id");
    }
    if peer.q_est_bits != own.q_est_bits {
        mismatches.push("q_est");
    }
    if peer.f_start_bits != own.f_start_bits {
        mismatches.push("f_start");
    }
    if peer.disclose_per_round != own.disclose_per_round {
        mismatches.push("disclose_per_round");
    }
    if peer.shared_seed != own.shared_seed {
        mismatches.push("shared_seed");
    }
    if !mismatches.is_empty() {
        return Err(ProtocolError::Desync(format!(
            "session init disagrees on {}",
            mismatches.join(", ")
        )));
    }
    Ok(())
}

fn recv_syndrome<T: Transport>(
    t: &mut T,
    session_id: u64,
    m: usize,
) -> Result<Vec<u8>, ProtocolError> {
    match recv_expected(t, session_id, "syndrome")? {
        Payload::Syndrome(packed) => unpack_bits(&packed, m).ok_or(ProtocolError::LengthMismatch {
            expected: m.div_ceil(8),
            got: packed.len(),
        }),
        _ => Err(ProtocolError::UnexpectedMessage("expected Syndrome".into())),
    }
}

/// Error-verification exchange: Alice draws a fresh seed and sends
/// (seed, tag); Bob compares against his own tag and answers with the
/// result, so both sides agree on the outcome.
pub fn run_verify<T: Transport>(
    role: Role,
    key: &[u8],
    t: &mut T,
    session_id: u64,
    rng_private: &mut SplitMix64,
) -> Result<bool, ProtocolError> {
    match role {
        Role::Alice => {
            let seed = rng_private.next_u64();
            let tag = poly_tag(seed, key);
            t.send(session_id, Payload::VerifyTag { seed, tag })?;
            match recv_expected(t, session_id, "verify result")? {
                Payload::Result(code) if code == result_code::VERIFY_OK => Ok(true),
                Payload::Result(code) if code == result_code::VERIFY_FAILED => Ok(false),
                _ => Err(ProtocolError::UnexpectedMessage(
                    "expected verify Result".into(),
                )),
            }
        }
        Role::Bob => {
            let (seed, tag) = match recv_expected(t, session_id, "verify tag")? {
                Payload::VerifyTag { seed, tag } => (seed, tag),
                _ => {
                    return Err(ProtocolError::UnexpectedMessage(
                        "expected VerifyTag".into(),
                    ))
                }
            };
            let ok = poly_tag(seed, key) == tag;
            let code = if ok {
                result_code::VERIFY_OK
            } else {
                result_code::VERIFY_FAILED
            };
            t.send(session_id, Payload::Result(code))?;
            Ok(ok)
        }
    }
}

/// Epsilon-universal polynomial hash over GF(2^64), Horner-evaluated at
/// `seed` over the key packed into 64-bit blocks. For an l-bit key the
/// collision probability for distinct equal-length keys is at most
/// ceil(l/64)/2^64 <= l/2^63.
pub fn poly_tag(seed: u64, key_bits: &[u8]) -> u64 {
    let packed = pack_bits(key_bits);
    let mut tag = 0u64;
    for chunk in packed.chunks(8) {
        let mut word = [0u8; 8];
        word[..chunk.len()].copy_from_slice(chunk);
        tag = gf64_mul(tag, seed) ^ u64::from_le_bytes(word);
    }
    tag
}

/// Carryless multiplication reduced modulo x^64 + x^4 + x^3 + x + 1.
fn gf64_mul(mut a: u64, mut b: u64) -> u64 {
    let mut acc = 0u64;
    while b != 0 {
        if b & 1 == 1 {
            acc ^= a;
        }
        b >>= 1;
        let carry = a >> 63;
        a <<= 1;
        if carry == 1 {
            a ^= 0x1b;
        }
    }
    acc
}

enum LoopExit {
    Converged(Vec<u8>),
    Abort(AbortReason),
}

fn trace_decode(party: &PartyState, out: &DecodeOutcome) {
    let Some(dir) = &party.cfg.trace_dir else {
        return;
    };
    let r0 = decoder::llr_init(&party.pattern, &party.layout, party.cfg.q_est);
    let path = dir.join(format!(
        "llr_{:016x}_{}_{}.csv",
        party.cfg.session_id,
        party.role.name(),
        party.rounds
    ));
    let write = || -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        let mut f = fs::File::create(path)?;
        writeln!(f, "position,r0,r_final,set")?;
        for i in 0..party.layout.n() {
            let set = match party.layout.class(i) {
                PosClass::Raw => "K",
                PosClass::Shortened => "S",
                PosClass::Punctured => "P",
            };
            writeln!(f, "{},{},{},{}", i, r0[i], out.final_llrs[i], set)?;
        }
        Ok(())
    };
    if let Err(e) = write() {
        eprintln!("warning: LLR trace failed: {e}");
    }
}

fn finish_stats(party: &PartyState, kind: ProtocolKind, exit: &LoopExit, verified: bool) -> FrameStats {
    let n = party.code.n;
    let m = party.code.m;
    let s0 = party.layout.original_shortened().len();
    let p0 = party.layout.original_punctured().len();
    let d = party.cfg.disclose_per_round;
    let f_final = match kind {
        ProtocolKind::Symmetric => {
            symmetric_efficiency(n, m, p0, s0, party.rounds, d, party.cfg.q_est)
        }
        ProtocolKind::StandardBlind | ProtocolKind::RateAdaptive => {
            blind_efficiency(n, m, p0, s0, party.rounds, d, party.cfg.q_est)
        }
    };
    FrameStats {
        code_id: party.code.id.clone(),
        n,
        m,
        s0,
        p0,
        q_est: party.cfg.q_est,
        disclose_per_round: d,
        f_final,
        rounds: party.rounds,
        disclosed: party.disclosed,
        converged: matches!(exit, LoopExit::Converged(_)),
        verified,
        residual_errors: None,
    }
}

fn finish_session<T: Transport>(
    party: &mut PartyState,
    t: &mut T,
    kind: ProtocolKind,
    exit: LoopExit,
) -> Result<SessionResult, ProtocolError> {
    let (outcome, corrected, e_digest, verified) = match &exit {
        LoopExit::Converged(e_dec) => {
            let e_digest = fnv1a64(e_dec);
            let corrected = if party.role == Role::Bob {
                let mut estimate = party.ext.clone();
                xor_in_place(&mut estimate, e_dec);
                shrink(
                    &estimate,
                    party.layout.original_shortened(),
                    party.layout.original_punctured(),
                )
            } else {
                Vec::new()
            };
            let key = match party.role {
                Role::Alice => &party.raw,
                Role::Bob => &corrected,
            };
            let ok = run_verify(
                party.role,
                key,
                t,
                party.cfg.session_id,
                &mut party.rng_private,
            )?;
            let outcome = if ok {
                Outcome::Verified
            } else {
                Outcome::VerifyFailed
            };
            (outcome, corrected, e_digest, ok)
        }
        LoopExit::Abort(reason) => (Outcome::Aborted(*reason), Vec::new(), 0u64, false),
    };
    let stats = finish_stats(party, kind, &exit, verified);
    Ok(SessionResult {
        outcome,
        corrected,
        stats,
        digests: SessionDigests {
            transcript: t.transcript_digest(),
            disclosure_sequence: party.d_seq_digest,
            error_pattern: e_digest,
        },
    })
}

/// Symmetric blind reconciliation: both parties exchange syndromes
/// simultaneously, decode the relative syndrome identically, and on
/// failure disclose the decoder-reported lowest-confidence positions,
/// also simultaneously.
pub fn run_symmetric_with<T: Transport, D: SyndromeDecoder>(
    party: &mut PartyState,
    t: &mut T,
    dec: &D,
) -> Result<SessionResult, ProtocolError> {
    exchange_init(party, t)?;
    let session_id = party.cfg.session_id;
    let own_synd = party.code.syndrome(&party.ext);
    t.send(session_id, Payload::Syndrome(pack_bits(&own_synd)))?;
    let peer_synd = recv_syndrome(t, session_id, party.code.m)?;
    let mut rel = own_synd;
    xor_in_place(&mut rel, &peer_synd);

    let s0 = party.layout.original_shortened().len();
    let bound = (party.code.n - s0).div_ceil(party.cfg.disclose_per_round);
    let max_rounds = party.cfg.max_rounds.unwrap_or(bound);

    let exit = loop {
        if party.layout.active_count() == 0 {
            break LoopExit::Abort(AbortReason::FullDisclosure);
        }
        let req = DecodeRequest {
            syndrome: &rel,
            pattern: &party.pattern,
            layout: &party.layout,
            q_est: party.cfg.q_est,
            disclose_count: party.cfg.disclose_per_round,
            max_iters: party.cfg.max_iters,
        };
        let out = dec
            .decode(&req, party.code)
            .map_err(|e| ProtocolError::Internal(e.to_string()))?;
        trace_decode(party, &out);
        match out.status {
            DecodeStatus::Converged => {
                let e_dec = out.e_dec.expect("converged outcome carries pattern");
                if !party.code.syndrome_matches(&e_dec, &rel) {
                    return Err(ProtocolError::Internal(
                        "converged pattern fails the relative syndrome".into(),
                    ));
                }
                break LoopExit::Converged(e_dec);
            }
            DecodeStatus::Failed => {
                if party.rounds >= max_rounds {
                    break LoopExit::Abort(AbortReason::RoundLimit);
                }
                let positions = out.low_confidence;
                let digest = digest_positions(&positions);
                let own_vals = party.disclose_values(&positions);
                t.send(
                    session_id,
                    Payload::Disclose(Disclose {
                        digest,
                        positions: None,
                        values: Some((own_vals.len() as u32, pack_bits(&own_vals))),
                    }),
                )?;
                let peer = match recv_expected(t, session_id, "disclosure")? {
                    Payload::Disclose(d) => d,
                    _ => {
                        return Err(ProtocolError::UnexpectedMessage(
                            "expected Disclose".into(),
                        ))
                    }
                };
                if peer.digest != digest {
                    return Err(ProtocolError::Desync(
                        "disclosure position lists differ".into(),
                    ));
                }
                let Some((nbits, packed)) = peer.values else {
                    return Err(ProtocolError::UnexpectedMessage(
                        "disclosure carried no values".into(),
                    ));
                };
                if nbits as usize != positions.len() {
                    return Err(ProtocolError::LengthMismatch {
                        expected: positions.len(),
                        got: nbits as usize,
                    });
                }
                let peer_vals = unpack_bits(&packed, positions.len()).ok_or(
                    ProtocolError::LengthMismatch {
                        expected: positions.len().div_ceil(8),
                        got: packed.len(),
                    },
                )?;
                party.absorb_disclosure(&positions, &own_vals, &peer_vals);
            }
        }
    };
    finish_session(party, t, ProtocolKind::Symmetric, exit)
}

/// Standard blind reconciliation: Alice sends one syndrome; on decoder
/// failure Bob requests batches of punctured positions (chosen via the
/// synchronized PRNG) and Alice answers with her values, until the
/// punctured reserve runs out.
pub fn run_standard_blind_with<T: Transport, D: SyndromeDecoder>(
    party: &mut PartyState,
    t: &mut T,
    dec: &D,
) -> Result<SessionResult, ProtocolError> {
    run_blind_internal(party, t, dec, ProtocolKind::StandardBlind)
}

/// One-shot rate-adaptive reconciliation: syndrome, a single decode, then
/// verify or abort. Identical on the wire to standard blind with a zero
/// round cap.
pub fn run_rate_adaptive_with<T: Transport, D: SyndromeDecoder>(
    party: &mut PartyState,
    t: &mut T,
    dec: &D,
) -> Result<SessionResult, ProtocolError> {
    party.cfg.max_rounds = Some(0);
    run_blind_internal(party, t, dec, ProtocolKind::RateAdaptive)
}

fn blind_abort_reason(party: &PartyState, max_rounds: usize) -> AbortReason {
    if party.rounds >= max_rounds {
        AbortReason::RoundLimit
    } else {
        AbortReason::ReserveExhausted
    }
}

fn run_blind_internal<T: Transport, D: SyndromeDecoder>(
    party: &mut PartyState,
    t: &mut T,
    dec: &D,
    kind: ProtocolKind,
) -> Result<SessionResult, ProtocolError> {
    exchange_init(party, t)?;
    let session_id = party.cfg.session_id;
    let max_rounds = party.cfg.max_rounds.unwrap_or(usize::MAX);
    let mut shared_prng = SplitMix64::new(party.cfg.shared_seed ^ DISCLOSE_SEED_DOMAIN);
    let d = party.cfg.disclose_per_round;

    let exit = match party.role {
        Role::Alice => {
            let own_synd = party.code.syndrome(&party.ext);
            t.send(session_id, Payload::Syndrome(pack_bits(&own_synd)))?;
            loop {
                match recv_expected(t, session_id, "request or result")? {
                    Payload::Disclose(req) => {
                        // Re-derive the expected request from the shared
                        // PRNG over the remaining punctured positions.
                        let mut cands = party.layout.remaining_punctured();
                        let take = d.min(cands.len());
                        let expected = shared_prng.sample_positions(&mut cands, take);
                        let expected_digest = digest_positions(&expected);
                        let positions: Vec<usize> = match &req.positions {
                            Some(pos) => pos.iter().map(|&p| p as usize).collect(),
                            None => {
                                return Err(ProtocolError::UnexpectedMessage(
                                    "request carried no positions".into(),
                                ))
                            }
                        };
                        if req.digest != expected_digest || positions != expected {
                            return Err(ProtocolError::Desync(
                                "requested positions disagree with shared PRNG".into(),
                            ));
                        }
                        let vals = party.disclose_values(&positions);
                        t.send(
                            session_id,
                            Payload::Disclose(Disclose {
                                digest: req.digest,
                                positions: None,
                                values: Some((vals.len() as u32, pack_bits(&vals))),
                            }),
                        )?;
                        party.layout.mark_shortened(&positions);
                        party.rounds += 1;
                        party.disclosed += positions.len();
                        party.d_seq_digest = fnv1a64_continue(
                            party.d_seq_digest,
                            &req.digest.to_be_bytes(),
                        );
                    }
                    Payload::Result(code) if code == result_code::RECONCILE_DONE => {
                        // Alice has no decoded pattern of her own in the
                        // one-way protocols; signal convergence upward.
                        break LoopExit::Converged(Vec::new());
                    }
                    Payload::Result(code) if code == result_code::RECONCILE_ABORTED => {
                        break LoopExit::Abort(blind_abort_reason(party, max_rounds));
                    }
                    _ => {
                        return Err(ProtocolError::UnexpectedMessage(
                            "expected Disclose or Result".into(),
                        ))
                    }
                }
            }
        }
        Role::Bob => {
            let peer_synd = recv_syndrome(t, session_id, party.code.m)?;
            let mut rel = party.code.syndrome(&party.ext);
            xor_in_place(&mut rel, &peer_synd);
            loop {
                let req = DecodeRequest {
                    syndrome: &rel,
                    pattern: &party.pattern,
                    layout: &party.layout,
                    q_est: party.cfg.q_est,
                    disclose_count: d,
                    max_iters: party.cfg.max_iters,
                };
                let out = dec
                    .decode(&req, party.code)
                    .map_err(|e| ProtocolError::Internal(e.to_string()))?;
                trace_decode(party, &out);
                match out.status {
                    DecodeStatus::Converged => {
                        let e_dec = out.e_dec.expect("converged outcome carries pattern");
                        if !party.code.syndrome_matches(&e_dec, &rel) {
                            return Err(ProtocolError::Internal(
                                "converged pattern fails the relative syndrome".into(),
                            ));
                        }
                        t.send(session_id, Payload::Result(result_code::RECONCILE_DONE))?;
                        break LoopExit::Converged(e_dec);
                    }
                    DecodeStatus::Failed => {
                        let mut cands = party.layout.remaining_punctured();
                        if party.rounds >= max_rounds || cands.is_empty() {
                            let reason = blind_abort_reason(party, max_rounds);
                            t.send(session_id, Payload::Result(result_code::RECONCILE_ABORTED))?;
                            break LoopExit::Abort(reason);
                        }
                        let take = d.min(cands.len());
                        let positions = shared_prng.sample_positions(&mut cands, take);
                        let digest = digest_positions(&positions);
                        t.send(
                            session_id,
                            Payload::Disclose(Disclose {
                                digest,
                                positions: Some(
                                    positions.iter().map(|&p| p as u32).collect(),
                                ),
                                values: None,
                            }),
                        )?;
                        let answer = match recv_expected(t, session_id, "disclosure answer")? {
                            Payload::Disclose(a) => a,
                            _ => {
                                return Err(ProtocolError::UnexpectedMessage(
                                    "expected Disclose answer".into(),
                                ))
                            }
                        };
                        if answer.digest != digest {
                            return Err(ProtocolError::Desync(
                                "answer digest disagrees with request".into(),
                            ));
                        }
                        let Some((nbits, packed)) = answer.values else {
                            return Err(ProtocolError::UnexpectedMessage(
                                "answer carried no values".into(),
                            ));
                        };
                        if nbits as usize != positions.len() {
                            return Err(ProtocolError::LengthMismatch {
                                expected: positions.len(),
                                got: nbits as usize,
                            });
                        }
                        let alice_vals = unpack_bits(&packed, positions.len()).ok_or(
                            ProtocolError::LengthMismatch {
                                expected: positions.len().div_ceil(8),
                                got: packed.len(),
                            },
                        )?;
                        let own_vals = party.disclose_values(&positions);
                        party.absorb_disclosure(&positions, &own_vals, &alice_vals);
                    }
                }
            }
        }
    };
    finish_session(party, t, kind, exit)
}

/// Dispatch by protocol kind.
pub fn run_session_with<T: Transport, D: SyndromeDecoder>(
    kind: ProtocolKind,
    party: &mut PartyState,
    t: &mut T,
    dec: &D,
) -> Result<SessionResult, ProtocolError> {
    match kind {
        ProtocolKind::Symmetric => run_symmetric_with(party, t, dec),
        ProtocolKind::StandardBlind => run_standard_blind_with(party, t, dec),
        ProtocolKind::RateAdaptive => run_rate_adaptive_with(party, t, dec),
    }
}

pub fn run_session<T: Transport>(
    kind: ProtocolKind,
    party: &mut PartyState,
    t: &mut T,
) -> Result<SessionResult, ProtocolError> {
    run_session_with(kind, party, t, &BpDecoder)
}

/// Runs both parties of one session over an in-process loopback, each on
/// its own thread.
pub fn run_pair_with<D: SyndromeDecoder>(
    kind: ProtocolKind,
    alice: &mut PartyState,
    bob: &mut PartyState,
    dec: &D,
) -> Result<(SessionResult, SessionResult), ProtocolError> {
    let (mut ta, mut tb) = loopback_pair();
    let (ra, rb) = std::thread::scope(|s| {
        let ja = s.spawn(move || run_session_with(kind, alice, &mut ta, dec));
        let jb = s.spawn(move || run_session_with(kind, bob, &mut tb, dec));
        (
            ja.join().expect("alice thread panicked"),
            jb.join().expect("bob thread panicked"),
        )
    });
    Ok((ra?, rb?))
}

pub fn run_pair(
    kind: ProtocolKind,
    alice: &mut PartyState,
    bob: &mut PartyState,
) -> Result<(SessionResult, SessionResult), ProtocolError> {
    run_pair_with(kind, alice, bob, &BpDecoder)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::CodeSpec;
    use proptest::prelude::*;

    fn six_code() -> CodeSpec {
        CodeSpec::from_rows(
            "six",
            6,
            vec![vec![0, 1, 3], vec![1, 2, 4], vec![2, 3, 5], vec![0, 4, 5]],
        )
        .unwrap()
        .with_untainted()
    }

    #[test]
    fn extend_places_raw_shortened_punctured() {
        let layout = FrameLayout::new(4, vec![0], vec![3]).unwrap();
        let mut rng = SplitMix64::new(1);
        // Find a seed whose first bit is 1 so the example matches exactly.
        while SplitMix64::new(rng.clone().next_u64()).next_bit() != 1 {
            rng.next_u64();
        }
        let seed = rng.next_u64();
        let mut private = SplitMix64::new(seed);
        let ext = extend(&[1, 0], &layout, &mut private).unwrap();
        assert_eq!(ext, vec![0, 1, 0, 1]);
    }

    #[test]
    fn extend_empty_sets_is_identity() {
        let layout = FrameLayout::new(3, vec![], vec![]).unwrap();
        let mut rng = SplitMix64::new(9);
        assert_eq!(extend(&[1, 0, 1], &layout, &mut rng).unwrap(), vec![1, 0, 1]);
    }

    #[test]
    fn extend_length_mismatch() {
        let layout = FrameLayout::new(4, vec![0], vec![3]).unwrap();
        let mut rng = SplitMix64::new(9);
        assert!(matches!(
            extend(&[1, 0, 1], &layout, &mut rng),
            Err(ProtocolError::LengthMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn shrink_inverse_of_extend_example() {
        assert_eq!(shrink(&[0, 1, 0, 1], &[0], &[3]), vec![1, 0]);
        assert_eq!(shrink(&[1, 0], &[], &[]), vec![1, 0]);
        assert_eq!(shrink(&[1, 0], &[0], &[1]), Vec::<u8>::new());
    }

    proptest! {
        #[test]
        fn shrink_extend_roundtrip(
            seed in any::<u64>(),
            n in 1usize..40,
            s_frac in 0usize..3,
            p_frac in 0usize..3,
        ) {
            let mut rng = SplitMix64::new(seed);
            let mut cands: Vec<usize> = (0..n).collect();
            let s_count = (n * s_frac / 4).min(n);
            let shortened = rng.sample_positions(&mut cands, s_count);
            let p_count = (n * p_frac / 4).min(cands.len());
            let punctured = rng.sample_positions(&mut cands.clone(), p_count);
            let layout = FrameLayout::new(n, shortened.clone(), punctured.clone()).unwrap();
            let raw: Vec<u8> = (0..layout.raw_len()).map(|_| rng.next_bit()).collect();
            let ext = extend(&raw, &layout, &mut rng).unwrap();
            prop_assert_eq!(shrink(&ext, &shortened, &punctured), raw);
        }
    }

    #[test]
    fn symmetric_efficiency_reference_point() {
        // m=486, p0=221, s0=0, two extra rounds of d=26 at q=0.02:
        // (486-221+52)/(1723*h_b(0.02)) evaluates to ~1.3007.
        let f = symmetric_efficiency(1944, 486, 221, 0, 2, 26, 0.02);
        assert!((f - 1.301).abs() < 1e-3, "f={f}");
        let manual = 317.0 / (1723.0 * crate::sim::h_binary(0.02).unwrap());
        assert_eq!(f.to_bits(), manual.to_bits());
    }

    #[test]
    fn blind_efficiency_reserve_cap() {
        // p0=154, d=23: seven failed rounds would disclose 161 bits but
        // the punctured reserve caps the numerator at p0.
        let h = crate::sim::h_binary(0.05).unwrap();
        let capped = blind_efficiency(1944, 324, 154, 0, 7, 23, 0.05);
        let manual = (324.0 - 154.0 + 154.0) / ((1944.0 - 154.0) * h);
        assert_eq!(capped.to_bits(), manual.to_bits());
        // Below the cap the two formulas agree.
        assert_eq!(
            blind_efficiency(1944, 324, 154, 0, 2, 23, 0.05).to_bits(),
            ((324.0 - 154.0 + 46.0) / ((1944.0 - 154.0) * h)).to_bits()
        );
    }

    #[test]
    fn rate_adaptive_efficiency_reference_point() {
        // s=p=0: f = (1-R)/h_b(q); R=3/4, q=0.02 gives ~1.768.
        let f = blind_efficiency(1944, 486, 0, 0, 0, 26, 0.02);
        assert!((f - 1.768).abs() < 1e-3, "f={f}");
    }

    #[test]
    fn disclosure_count_reference_table() {
        assert_eq!(disclosure_count(0.5, 1944, 1.0), 35);
        assert_eq!(disclosure_count(2.0 / 3.0, 1944, 1.0), 29);
        assert_eq!(disclosure_count(0.75, 1944, 1.0), 26);
        assert_eq!(disclosure_count(5.0 / 6.0, 1944, 1.0), 23);
        assert_eq!(disclosure_count(5.0 / 6.0, 1944, 0.5), 12);
    }

    #[test]
    fn poly_tag_matches_for_identical_keys() {
        let key: Vec<u8> = (0..131).map(|i| (i % 2) as u8).collect();
        for seed in [0u64, 1, 0xdead_beef, u64::MAX] {
            assert_eq!(poly_tag(seed, &key), poly_tag(seed, &key));
        }
        assert_eq!(poly_tag(12345, &[]), 0);
    }

    #[test]
    fn poly_tag_detects_single_bit_flips() {
        let mut rng = SplitMix64::new(77);
        let key: Vec<u8> = (0..1944).map(|_| rng.next_bit()).collect();
        let trials = 10_000;
        let mut detected = 0usize;
        for _ in 0..trials {
            let seed = rng.next_u64();
            let mut flipped = key.clone();
            let pos = rng.next_index(flipped.len());
            flipped[pos] ^= 1;
            if poly_tag(seed, &key) != poly_tag(seed, &flipped) {
                detected += 1;
            }
        }
        assert!(
            detected as f64 / trials as f64 >= 0.999,
            "detected {detected}/{trials}"
        );
    }

    #[test]
    fn gf64_mul_field_sanity() {
        let mut rng = SplitMix64::new(3);
        for _ in 0..200 {
            let a = rng.next_u64();
            let b = rng.next_u64();
            let c = rng.next_u64();
            assert_eq!(gf64_mul(a, 1), a);
            assert_eq!(gf64_mul(1, b), b);
            assert_eq!(gf64_mul(a, b), gf64_mul(b, a));
            assert_eq!(
                gf64_mul(a, b ^ c),
                gf64_mul(a, b) ^ gf64_mul(a, c),
                "distributivity"
            );
        }
    }

    fn make_pair<'c>(
        code: &'c CodeSpec,
        x: Vec<u8>,
        y: Vec<u8>,
        layout: FrameLayout,
        cfg: SessionConfig,
    ) -> (PartyState<'c>, PartyState<'c>) {
        let alice = PartyState::new(
            Role::Alice,
            x,
            code,
            layout.clone(),
            cfg.clone(),
            SplitMix64::new(cfg.shared_seed ^ 0xa11c_e000),
        )
        .unwrap();
        let bob = PartyState::new(
            Role::Bob,
            y,
            code,
            layout,
            cfg.clone(),
            SplitMix64::new(cfg.shared_seed ^ 0xb0b0_0000),
        )
        .unwrap();
        (alice, bob)
    }

    #[test]
    fn symmetric_noiseless_converges_without_rounds() {
        let code = six_code();
        let layout = FrameLayout::new(6, vec![], vec![]).unwrap();
        let x = vec![1, 0, 1, 1, 0, 0];
        let cfg = SessionConfig::new(1, 0.05, 2, 99);
        let (mut alice, mut bob) = make_pair(&code, x.clone(), x.clone(), layout, cfg);
        let (ra, rb) = run_pair(ProtocolKind::Symmetric, &mut alice, &mut bob).unwrap();
        assert_eq!(ra.outcome, Outcome::Verified);
        assert_eq!(rb.outcome, Outcome::Verified);
        assert_eq!(rb.corrected, x);
        assert_eq!(ra.stats.rounds, 0);
        let expect_f = symmetric_efficiency(6, 4, 0, 0, 0, 2, 0.05);
        assert_eq!(ra.stats.f_final, expect_f);
        assert_eq!(ra.digests.disclosure_sequence, rb.digests.disclosure_sequence);
        assert_eq!(ra.digests.error_pattern, rb.digests.error_pattern);
    }

    #[test]
    fn symmetric_corrects_single_flip() {
        let code = six_code();
        let layout = FrameLayout::new(6, vec![], vec![]).unwrap();
        let x = vec![1, 0, 1, 1, 0, 0];
        let mut y = x.clone();
        y[2] ^= 1;
        let cfg = SessionConfig::new(2, 0.05, 2, 7);
        let (mut alice, mut bob) = make_pair(&code, x.clone(), y, layout, cfg);
        let (ra, rb) = run_pair(ProtocolKind::Symmetric, &mut alice, &mut bob).unwrap();
        assert_eq!(ra.outcome, Outcome::Verified);
        assert_eq!(rb.corrected, x);
    }

    struct FailingDecoder;

    impl SyndromeDecoder for FailingDecoder {
        fn decode(
            &self,
            req: &DecodeRequest,
            _code: &CodeSpec,
        ) -> Result<DecodeOutcome, decoder::DecodeError> {
            let active: Vec<usize> = (0..req.layout.n())
                .filter(|&i| req.layout.class(i) != PosClass::Shortened)
                .take(req.disclose_count)
                .collect();
            Ok(DecodeOutcome {
                status: DecodeStatus::Failed,
                e_dec: None,
                low_confidence: active,
                iterations: 1,
                final_llrs: vec![0.0; req.layout.n()],
            })
        }
    }

    #[test]
    fn symmetric_forced_failure_aborts_at_analytic_bound() {
        let code = six_code();
        let layout = FrameLayout::new(6, vec![], vec![]).unwrap();
        let x = vec![1, 0, 1, 1, 0, 0];
        let cfg = SessionConfig::new(3, 0.05, 4, 7);
        let (mut alice, mut bob) = make_pair(&code, x.clone(), x, layout, cfg);
        let (ra, rb) =
            run_pair_with(ProtocolKind::Symmetric, &mut alice, &mut bob, &FailingDecoder)
                .unwrap();
        // ceil(6/4) = 2 disclosure rounds, then the frame is fully revealed.
        assert_eq!(ra.outcome, Outcome::Aborted(AbortReason::FullDisclosure));
        assert_eq!(ra.stats.rounds, 2);
        assert_eq!(rb.stats.rounds, 2);
        assert_eq!(rb.corrected, Vec::<u8>::new());
        assert_eq!(ra.stats.disclosed, 6);
    }

    #[test]
    fn mismatched_init_detected_as_desync() {
        let code = six_code();
        let layout = FrameLayout::new(6, vec![], vec![]).unwrap();
        let x = vec![0u8; 6];
        let cfg_a = SessionConfig::new(4, 0.05, 2, 7);
        let mut cfg_b = cfg_a.clone();
        cfg_b.disclose_per_round = 3; // e.g. a different alpha
        let mut alice = PartyState::new(
            Role::Alice,
            x.clone(),
            &code,
            layout.clone(),
            cfg_a,
            SplitMix64::new(1),
        )
        .unwrap();
        let mut bob =
            PartyState::new(Role::Bob, x, &code, layout, cfg_b, SplitMix64::new(2)).unwrap();
        let err = run_pair(ProtocolKind::Symmetric, &mut alice, &mut bob).unwrap_err();
        assert!(matches!(err, ProtocolError::Desync(_)), "got {err:?}");
    }

    #[test]
    fn standard_blind_discloses_from_reserve_then_aborts() {
        let code = six_code();
        // Punctured reserve of 2, disclosure batches of 2: a frame that
        // never converges aborts after exactly one round.
        let punctured = code.untainted.iter().take(2).copied().collect::<Vec<_>>();
        let layout = FrameLayout::new(6, vec![], punctured).unwrap();
        let x = vec![1, 0, 1, 0];
        let cfg = SessionConfig::new(5, 0.05, 2, 7);
        let (mut alice, mut bob) = make_pair(&code, x.clone(), x, layout, cfg);
        let (ra, rb) = run_pair_with(
            ProtocolKind::StandardBlind,
            &mut alice,
            &mut bob,
            &FailingDecoder,
        )
        .unwrap();
        assert_eq!(ra.outcome, Outcome::Aborted(AbortReason::ReserveExhausted));
        assert_eq!(rb.outcome, Outcome::Aborted(AbortReason::ReserveExhausted));
        assert_eq!(rb.stats.rounds, 1);
        assert_eq!(rb.stats.disclosed, 2);
    }

    #[test]
    fn rate_adaptive_equals_blind_with_zero_rounds() {
        let code = six_code();
        let x = vec![1, 0, 1, 1, 0, 0];
        let mut y = x.clone();
        y[4] ^= 1;
        let run = |kind: ProtocolKind, max_rounds: Option<usize>| {
            let layout = FrameLayout::new(6, vec![], vec![]).unwrap();
            let mut cfg = SessionConfig::new(6, 0.05, 2, 7);
            cfg.max_rounds = max_rounds;
            let (mut alice, mut bob) = make_pair(&code, x.clone(), y.clone(), layout, cfg);
            run_pair(kind, &mut alice, &mut bob).unwrap()
        };
        let (a1, b1) = run(ProtocolKind::RateAdaptive, None);
        let (a2, b2) = run(ProtocolKind::StandardBlind, Some(0));
        assert_eq!(a1.digests.transcript, a2.digests.transcript);
        assert_eq!(b1.digests.transcript, b2.digests.transcript);
        assert_eq!(a1.outcome, a2.outcome);
        assert_eq!(b1.stats.f_final, b2.stats.f_final);
    }

    #[test]
    fn verify_pair_identical_and_corrupted() {
        let key: Vec<u8> = (0..100).map(|i| (i % 3 == 0) as u8).collect();
        let run = |bob_key: Vec<u8>| {
            let (mut ta, mut tb) = loopback_pair();
            let alice_key = key.clone();
            std::thread::scope(|s| {
                let ja = s.spawn(move || {
                    let mut rng = SplitMix64::new(11);
                    run_verify(Role::Alice, &alice_key, &mut ta, 1, &mut rng).unwrap()
                });
                let jb = s.spawn(move || {
                    let mut rng = SplitMix64::new(12);
                    run_verify(Role::Bob, &bob_key, &mut tb, 1, &mut rng).unwrap()
                });
                (ja.join().unwrap(), jb.join().unwrap())
            })
        };
        assert_eq!(run(key.clone()), (true, true));
        let mut corrupted = key.clone();
        corrupted[50] ^= 1;
        assert_eq!(run(corrupted), (false, false));
        assert_eq!(poly_tag(42, &[]), poly_tag(42, &[]));
    }
}
