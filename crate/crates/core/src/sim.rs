//! Binary-symmetric-channel frame generation, ground-truth bookkeeping,
//! and Monte-Carlo statistics aggregation for QBER sweeps.
//!
//! Frames are independent and may run on parallel workers; every stream of
//! randomness is derived from the master seed and the frame index, and the
//! aggregation folds records in frame order, so sweep outputs are
//! byte-identical across runs and across worker counts.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::bits::hamming;
use crate::codes::{CodeError, CodePool, CodeSpec};
use crate::protocol::{
    disclosure_count, run_pair, AbortReason, FrameLayout, Outcome, PartyState, ProtocolError,
    ProtocolKind, Role, SessionConfig,
};
use crate::transport::SplitMix64;

/// Seed-derivation domains for the per-frame streams.
const DOMAIN_KEY: u64 = 0x6b65_795f_6269_7473; // "key_bits"
const DOMAIN_CHANNEL: u64 = 0x6368_616e_6e65_6c5f; // "channel_"
const DOMAIN_SHARED: u64 = 0x7368_6172_6564_5f70; // "shared_p"
const DOMAIN_ALICE: u64 = 0x616c_6963_655f_7276; // "alice_rv"
const DOMAIN_BOB: u64 = 0x626f_625f_7072_6976; // "bob_priv"

#[derive(Debug, Error)]
pub enum SimError {
    #[error("argument out of domain: {0}")]
    Domain(String),
    #[error(transparent)]
    Code(#[from] CodeError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Shannon binary entropy, with 0*log2(0) taken as 0.
pub fn h_binary(q: f64) -> Result<f64, SimError> {
    if !(0.0..=1.0).contains(&q) {
        return Err(SimError::Domain(format!("h_binary({q}): q outside [0,1]")));
    }
    let term = |p: f64| if p == 0.0 { 0.0 } else { -p * p.log2() };
    Ok(term(q) + term(1.0 - q))
}

/// A binary symmetric channel with its own seeded entropy source,
/// independent from the protocol's shared PRNG.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    pub q: f64,
    rng: SplitMix64,
}

impl ChannelModel {
    pub fn new(q: f64, seed: u64) -> Result<Self, SimError> {
        if !(0.0..0.5).contains(&q) {
            return Err(SimError::Domain(format!(
                "channel q={q} outside [0, 1/2)"
            )));
        }
        Ok(ChannelModel {
            q,
            rng: SplitMix64::new(seed),
        })
    }

    /// Transmits `x`, flipping each bit independently with probability q.
    /// Returns the received word and the flip mask (the ground truth).
    pub fn transmit(&mut self, x: &[u8]) -> (Vec<u8>, Vec<u8>) {
        let mask: Vec<u8> = x
            .iter()
            .map(|_| (self.rng.next_f64() < self.q) as u8)
            .collect();
        let y = x.iter().zip(&mask).map(|(&b, &f)| b ^ f).collect();
        (y, mask)
    }
}

/// Per-frame record, mirrored into the JSON-lines log.
#[derive(Debug, Clone, Serialize)]
pub struct FrameRecord {
    pub frame: usize,
    pub protocol: String,
    pub code_id: String,
    pub q: f64,
    pub alpha: f64,
    pub n: usize,
    pub m: usize,
    pub s0: usize,
    pub p0: usize,
    pub disclose_per_round: usize,
    pub rounds: usize,
    pub disclosed: usize,
    pub converged: bool,
    pub verified: bool,
    pub aborted: Option<String>,
    pub f: f64,
    pub residual_errors: usize,
}

/// Aggregated statistics for one grid point.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub protocol: ProtocolKind,
    pub code_id: String,
    pub q: f64,
    pub alpha: f64,
    pub frames: usize,
    pub mean_f: f64,
    pub ci_f: f64,
    pub mean_rounds: f64,
    pub ci_rounds: f64,
    pub fer: f64,
    pub mean_disclosed: f64,
    /// Frames aborted for decoder non-convergence (any reserve/round
    /// exhaustion), separate from verification failures.
    pub aborts: usize,
    pub verify_failures: usize,
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub q_grid: Vec<f64>,
    pub alpha: f64,
    pub protocol: ProtocolKind,
    pub frames: usize,
    pub seed: u64,
    /// Frames per candidate code in the calibration pre-pass.
    pub calib_frames: usize,
}

impl SweepConfig {
    pub fn new(q_grid: Vec<f64>, alpha: f64, protocol: ProtocolKind, frames: usize, seed: u64) -> Self {
        SweepConfig {
            q_grid,
            alpha,
            protocol,
            frames,
            seed,
            calib_frames: 200,
        }
    }
}

fn frame_seed(master: u64, grid_idx: usize, frame_idx: usize, domain: u64) -> u64 {
    let mut s = SplitMix64::new(master ^ domain ^ ((grid_idx as u64) << 32) ^ frame_idx as u64);
    s.next_u64()
}

fn random_bits(rng: &mut SplitMix64, len: usize) -> Vec<u8> {
    (0..len).map(|_| rng.next_bit()).collect()
}

/// Runs one reconciliation frame over loopback and checks the outcome
/// against the channel ground truth.
pub fn run_frame(
    code: &CodeSpec,
    kind: ProtocolKind,
    q: f64,
    alpha: f64,
    layout: &FrameLayout,
    base_seed: u64,
    frame_idx: usize,
) -> Result<FrameRecord, SimError> {
    let d = disclosure_count(code.rate(), code.n, alpha);
    let mut key_rng = SplitMix64::new(base_seed ^ DOMAIN_KEY);
    let mut channel = ChannelModel::new(q, base_seed ^ DOMAIN_CHANNEL)?;
    let x = random_bits(&mut key_rng, layout.raw_len());
    let (y, _mask) = channel.transmit(&x);

    let cfg = SessionConfig::new(base_seed, q, d, base_seed ^ DOMAIN_SHARED);
    let mut alice = PartyState::new(
        Role::Alice,
        x.clone(),
        code,
        layout.clone(),
        cfg.clone(),
        SplitMix64::new(base_seed ^ DOMAIN_ALICE),
    )?;
    let mut bob = PartyState::new(
        Role::Bob,
        y,
        code,
        layout.clone(),
        cfg,
        SplitMix64::new(base_seed ^ DOMAIN_BOB),
    )?;
    let (ra, rb) = run_pair(kind, &mut alice, &mut bob)?;
    if ra.outcome != rb.outcome {
        return Err(SimError::Protocol(ProtocolError::Desync(format!(
            "outcomes diverged: {:?} vs {:?}",
            ra.outcome, rb.outcome
        ))));
    }

    let residual = if rb.stats.converged {
        hamming(&rb.corrected, &x)
    } else {
        0
    };
    let aborted = match rb.outcome {
        Outcome::Aborted(AbortReason::FullDisclosure) => Some("full-disclosure".to_string()),
        Outcome::Aborted(AbortReason::ReserveExhausted) => Some("reserve-exhausted".to_string()),
        Outcome::Aborted(AbortReason::RoundLimit) => Some("round-limit".to_string()),
        _ => None,
    };
    Ok(FrameRecord {
        frame: frame_idx,
        protocol: kind.name().to_string(),
        code_id: code.id.clone(),
        q,
        alpha,
        n: code.n,
        m: code.m,
        s0: rb.stats.s0,
        p0: rb.stats.p0,
        disclose_per_round: d,
        rounds: rb.stats.rounds,
        disclosed: rb.stats.disclosed,
        converged: rb.stats.converged,
        verified: rb.stats.verified,
        aborted,
        f: rb.stats.f_final,
        residual_errors: residual,
    })
}

/// A frame counts against the FER when it was discarded (aborted), failed
/// verification, or verified with residual errors (the 2^-63 anomaly).
fn frame_failed(rec: &FrameRecord) -> bool {
    rec.aborted.is_some() || !rec.verified || rec.residual_errors > 0
}

/// The sweep layout: no initially shortened bits, the full untainted list
/// punctured.
pub fn sweep_layout(code: &CodeSpec) -> Result<FrameLayout, SimError> {
    FrameLayout::new(code.n, Vec::new(), code.untainted.clone()).map_err(SimError::from)
}

/// Picks the highest-rate pool code whose standard-blind convergence at
/// `q` reaches at least 90%, the pre-pass behind the per-QBER code
/// switching. A candidate is dropped as soon as its failure count alone
/// rules the threshold out, which keeps hopeless high-rate candidates
/// cheap; the accept/reject decision is unchanged by the early exit.
pub fn calibrate_code<'p>(
    pool: &'p CodePool,
    q: f64,
    alpha: f64,
    calib_frames: usize,
    seed: u64,
) -> Result<Option<&'p CodeSpec>, SimError> {
    let mut candidates: Vec<&CodeSpec> = pool.iter().collect();
    candidates.sort_by(|a, b| b.rate().partial_cmp(&a.rate()).unwrap());
    let need = (0.9 * calib_frames as f64).ceil() as usize;
    let fail_budget = calib_frames - need;
    for code in candidates {
        let layout = sweep_layout(code)?;
        let mut converged = 0usize;
        let mut failed = 0usize;
        let chunk = 64;
        let mut idx = 0;
        while idx < calib_frames && failed <= fail_budget {
            let hi = (idx + chunk).min(calib_frames);
            let results: Vec<Result<FrameRecord, SimError>> = (idx..hi)
                .into_par_iter()
                .map(|i| {
                    let base = frame_seed(seed, 0xca11b, i, q.to_bits());
                    run_frame(code, ProtocolKind::StandardBlind, q, alpha, &layout, base, i)
                })
                .collect();
            for r in results {
                if r?.converged {
                    converged += 1;
                } else {
                    failed += 1;
                }
            }
            idx = hi;
        }
        if converged >= need {
            return Ok(Some(code));
        }
    }
    Ok(None)
}

/// Calibrates the whole grid once, so several protocol sweeps can share
/// the same per-QBER code selection.
pub fn calibrate_grid<'p>(
    pool: &'p CodePool,
    q_grid: &[f64],
    alpha: f64,
    calib_frames: usize,
    seed: u64,
) -> Result<Vec<Option<&'p CodeSpec>>, SimError> {
    q_grid
        .iter()
        .map(|&q| calibrate_code(pool, q, alpha, calib_frames, seed))
        .collect()
}

fn mean_and_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

/// Aggregates per-frame records into one sweep row; a pure fold.
pub fn aggregate(
    protocol: ProtocolKind,
    code_id: &str,
    q: f64,
    alpha: f64,
    records: &[FrameRecord],
) -> SweepRow {
    let fs: Vec<f64> = records.iter().map(|r| r.f).collect();
    let rounds: Vec<f64> = records.iter().map(|r| r.rounds as f64).collect();
    let (mean_f, ci_f) = mean_and_ci(&fs);
    let (mean_rounds, ci_rounds) = mean_and_ci(&rounds);
    let failures = records.iter().filter(|r| frame_failed(r)).count();
    let aborts = records.iter().filter(|r| r.aborted.is_some()).count();
    let verify_failures = records
        .iter()
        .filter(|r| r.converged && !r.verified)
        .count();
    let mean_disclosed =
        records.iter().map(|r| r.disclosed as f64).sum::<f64>() / records.len().max(1) as f64;
    SweepRow {
        protocol,
        code_id: code_id.to_string(),
        q,
        alpha,
        frames: records.len(),
        mean_f,
        ci_f,
        mean_rounds,
        ci_rounds,
        fer: failures as f64 / records.len().max(1) as f64,
        mean_disclosed,
        aborts,
        verify_failures,
    }
}

/// Outcome of one grid point: either a populated row or the point marked
/// unusable because no pool code calibrated.
#[derive(Debug, Clone)]
pub enum GridOutcome {
    Row(SweepRow),
    Unusable { q: f64 },
}

/// Runs the Monte-Carlo sweep. Per grid point: calibrate the code on the
/// blind baseline, run `frames` independent sessions over loopback, write
/// per-frame JSON-lines (before aggregation), and fold the records into a
/// row.
pub fn run_sweep(
    pool: &CodePool,
    cfg: &SweepConfig,
    frame_log: Option<&mut dyn Write>,
) -> Result<Vec<GridOutcome>, SimError> {
    let codes = calibrate_grid(pool, &cfg.q_grid, cfg.alpha, cfg.calib_frames, cfg.seed)?;
    run_sweep_with_codes(cfg, &codes, frame_log)
}

/// The sweep body, with the per-QBER code selection supplied by the
/// caller (typically from [`calibrate_grid`]).
pub fn run_sweep_with_codes(
    cfg: &SweepConfig,
    codes: &[Option<&CodeSpec>],
    mut frame_log: Option<&mut dyn Write>,
) -> Result<Vec<GridOutcome>, SimError> {
    assert_eq!(codes.len(), cfg.q_grid.len());
    let mut out = Vec::with_capacity(cfg.q_grid.len());
    for (gi, (&q, code)) in cfg.q_grid.iter().zip(codes).enumerate() {
        if !(q > 0.0 && q < 0.5) {
            return Err(SimError::Domain(format!("grid q={q} outside (0, 1/2)")));
        }
        let Some(code) = code else {
            out.push(GridOutcome::Unusable { q });
            continue;
        };
        let layout = sweep_layout(code)?;
        let records: Vec<Result<FrameRecord, SimError>> = (0..cfg.frames)
            .into_par_iter()
            .map(|i| {
                let base = frame_seed(cfg.seed, gi, i, 0);
                run_frame(code, cfg.protocol, q, cfg.alpha, &layout, base, i)
            })
            .collect();
        let mut done = Vec::with_capacity(cfg.frames);
        for r in records {
            done.push(r?);
        }
        if let Some(log) = frame_log.as_deref_mut() {
            for rec in &done {
                serde_json::to_writer(&mut *log, rec).map_err(std::io::Error::from)?;
                writeln!(log)?;
            }
        }
        out.push(GridOutcome::Row(aggregate(
            cfg.protocol,
            &code.id,
            q,
            cfg.alpha,
            &done,
        )));
    }
    Ok(out)
}

/// CSV header for sweep rows.
pub const CSV_HEADER: &str =
    "protocol,code_id,q,alpha,frames,mean_f,ci_f,mean_rounds,ci_rounds,fer,mean_disclosed";

/// Writes the sweep table as CSV; unusable grid points become comment
/// lines so partial results stay parseable.
pub fn write_csv(outcomes: &[GridOutcome], w: &mut dyn Write) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for o in outcomes {
        match o {
            GridOutcome::Row(r) => writeln!(
                w,
                "{},{},{:.6},{:.6},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.protocol.name(),
                r.code_id,
                r.q,
                r.alpha,
                r.frames,
                r.mean_f,
                r.ci_f,
                r.mean_rounds,
                r.ci_rounds,
                r.fer,
                r.mean_disclosed
            )?,
            GridOutcome::Unusable { q } => writeln!(w, "# q={q:.6}: no usable code")?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn h_binary_exact_endpoints() {
        assert_eq!(h_binary(0.5).unwrap(), 1.0);
        assert_eq!(h_binary(0.0).unwrap(), 0.0);
        assert_eq!(h_binary(1.0).unwrap(), 0.0);
        assert!(h_binary(-0.1).is_err());
        assert!(h_binary(1.1).is_err());
    }

    #[test]
    fn h_binary_reference_point() {
        // Independent 40-digit evaluation: 0.14144054254182064515...
        let got = h_binary(0.02).unwrap();
        assert!((got - 0.141440542541820645).abs() < 1e-12, "got {got}");
        assert!((got - 0.141441).abs() < 1e-6);
    }

    #[test]
    fn transmit_identity_at_zero_noise() {
        let mut ch = ChannelModel::new(0.0, 5).unwrap();
        let x = vec![1, 0, 1, 1, 0];
        let (y, mask) = ch.transmit(&x);
        assert_eq!(y, x);
        assert_eq!(mask, vec![0; 5]);
    }

    #[test]
    fn transmit_mask_bookkeeping_identity() {
        let mut ch = ChannelModel::new(0.3, 5).unwrap();
        let mut rng = SplitMix64::new(8);
        let x = random_bits(&mut rng, 1000);
        let (y, mask) = ch.transmit(&x);
        for i in 0..x.len() {
            assert_eq!(x[i] ^ mask[i], y[i]);
        }
    }

    #[test]
    fn transmit_flip_rate_within_binomial_bounds() {
        // q kept below 1/2 per the channel domain; binomial 5 sigma.
        let q = 0.4;
        let n = 1_000_000usize;
        let mut ch = ChannelModel::new(q, 123).unwrap();
        let x = vec![0u8; n];
        let (y, _) = ch.transmit(&x);
        let flips = y.iter().filter(|&&b| b == 1).count() as f64;
        let mean = q * n as f64;
        let sigma = (n as f64 * q * (1.0 - q)).sqrt();
        assert!((flips - mean).abs() < 5.0 * sigma, "flips={flips}");
    }

    #[test]
    fn channel_rejects_bad_q() {
        assert!(ChannelModel::new(0.5, 1).is_err());
        assert!(ChannelModel::new(-0.01, 1).is_err());
    }

    #[test]
    fn aggregate_is_recomputable_fold() {
        let rec = |f: f64, rounds: usize, verified: bool| FrameRecord {
            frame: 0,
            protocol: "symmetric".into(),
            code_id: "c".into(),
            q: 0.02,
            alpha: 1.0,
            n: 10,
            m: 5,
            s0: 0,
            p0: 0,
            disclose_per_round: 2,
            rounds,
            disclosed: rounds * 2,
            converged: true,
            verified,
            aborted: None,
            f,
            residual_errors: 0,
        };
        let records = vec![rec(1.0, 0, true), rec(1.5, 2, true), rec(2.0, 4, false)];
        let row = aggregate(ProtocolKind::Symmetric, "c", 0.02, 1.0, &records);
        assert!((row.mean_f - 1.5).abs() < 1e-12);
        assert!((row.mean_rounds - 2.0).abs() < 1e-12);
        assert!((row.fer - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(row.verify_failures, 1);
        assert_eq!(row.aborts, 0);
    }
}
