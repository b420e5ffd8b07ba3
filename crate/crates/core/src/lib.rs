//! LDPC-based information reconciliation for quantum key distribution.
//!
//! The crate implements symmetric blind reconciliation — both parties
//! exchange syndromes, decode the relative syndrome identically, and on
//! decoder failure disclose the lowest-confidence positions reported by
//! the failed decode — together with the one-shot rate-adaptive and
//! standard blind baselines, a deterministic belief-propagation syndrome
//! decoder, rate adaptation via puncturing and shortening, universal-hash
//! error verification, and a Monte-Carlo harness for QBER sweeps.

pub mod bits;
pub mod codes;
pub mod decoder;
pub mod protocol;
pub mod sim;
pub mod transport;

pub use codes::{load_alist, select_code, untainted_punctures, CodePool, CodeSpec};
pub use decoder::{decode, DecodeOutcome, DecodeRequest, DecodeStatus};
pub use protocol::{
    disclosure_count, extend, shrink, FrameLayout, FrameStats, Outcome, PartyState, ProtocolKind,
    Role, SessionConfig, SessionResult,
};
pub use sim::{h_binary, ChannelModel, SweepConfig};
pub use transport::{SplitMix64, Transport};
