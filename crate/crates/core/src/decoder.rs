//! Belief-propagation sum-product syndrome decoder over LLRs.
//!
//! The decoder works on the relative syndrome and a supposed error pattern,
//! with shortened positions pinned at LLR +-100, punctured positions at 0,
//! and a trend-based stopping rule: once the averaged LLR magnitude over
//! the non-shortened positions stops growing against its 5-iteration
//! window, the decode is declared failed and the lowest-confidence
//! positions are reported so the protocol can disclose them.
//!
//! Everything here is strictly sequential with a fixed iteration and
//! summation order: both parties must reproduce bit-identical outcomes
//! from identical inputs.

use thiserror::Error;

use crate::codes::CodeSpec;
use crate::protocol::{FrameLayout, PosClass};

/// LLR magnitude assigned to shortened (publicly known) positions.
pub const SHORTENED_LLR: f64 = 100.0;
/// Length of the trend window for the stopping rule.
pub const TREND_WINDOW: usize = 5;
/// Default hard cap on iterations, on top of the trend rule.
pub const DEFAULT_MAX_ITERS: usize = 60;
/// LLRs are kept inside this magnitude.
const LLR_CLAMP: f64 = 1e3;
/// tanh outputs are kept strictly inside (-1, 1) before atanh.
const TANH_CLAMP: f64 = 1.0 - 1e-12;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// One decoding task: everything both parties need to run the identical
/// computation.
#[derive(Debug, Clone, Copy)]
pub struct DecodeRequest<'a> {
    /// Relative syndrome, length m.
    pub syndrome: &'a [u8],
    /// Current supposed error pattern, length n.
    pub pattern: &'a [u8],
    pub layout: &'a FrameLayout,
    pub q_est: f64,
    /// Number of lowest-confidence positions reported on failure.
    pub disclose_count: usize,
    pub max_iters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeStatus {
    Converged,
    Failed,
}

#[derive(Debug, Clone)]
pub struct DecodeOutcome {
    pub status: DecodeStatus,
    /// Decoded error pattern, present iff converged.
    pub e_dec: Option<Vec<u8>>,
    /// On failure: the positions of minimal |LLR| among raw and punctured
    /// positions, lowest magnitude first, ties to the lowest index.
    pub low_confidence: Vec<usize>,
    pub iterations: usize,
    /// Final LLR vector, for diagnostics and tracing.
    pub final_llrs: Vec<f64>,
}

/// Channel LLR magnitude log((1-q)/q) for raw-key positions.
pub fn channel_llr(q_est: f64) -> f64 {
    ((1.0 - q_est) / q_est).ln()
}

/// Initial LLR vector: +-log((1-q)/q) on raw positions, +-100 on
/// shortened positions (sign from the supposed pattern), 0 on punctured
/// positions.
pub fn llr_init(pattern: &[u8], layout: &FrameLayout, q_est: f64) -> Vec<f64> {
    assert_eq!(pattern.len(), layout.n());
    let base = channel_llr(q_est);
    (0..layout.n())
        .map(|i| {
            let sign = if pattern[i] & 1 == 1 { -1.0 } else { 1.0 };
            match layout.class(i) {
                PosClass::Raw => sign * base,
                PosClass::Shortened => sign * SHORTENED_LLR,
                PosClass::Punctured => 0.0,
            }
        })
        .collect()
}

fn clamp_llr(x: f64) -> f64 {
    x.clamp(-LLR_CLAMP, LLR_CLAMP)
}

/// Runs sum-product decoding of `req.syndrome` starting from
/// `req.pattern`.
pub fn decode(req: &DecodeRequest, code: &CodeSpec) -> Result<DecodeOutcome, DecodeError> {
    let n = code.n;
    let m = code.m;
    if req.syndrome.len() != m {
        return Err(DecodeError::DimensionMismatch(format!(
            "syndrome length {} != m {}",
            req.syndrome.len(),
            m
        )));
    }
    if req.pattern.len() != n || req.layout.n() != n {
        return Err(DecodeError::DimensionMismatch(format!(
            "pattern/layout length != n {n}"
        )));
    }
    if !(req.q_est > 0.0 && req.q_est < 0.5) {
        return Err(DecodeError::InvalidParameter(format!(
            "q_est {} outside (0, 1/2)",
            req.q_est
        )));
    }
    if req.disclose_count == 0 || req.max_iters == 0 {
        return Err(DecodeError::InvalidParameter(
            "disclose_count and max_iters must be positive".into(),
        ));
    }

    // Edge-indexed Tanner adjacency, check-major, flattened for the hot
    // loops.
    let mut row_ptr = Vec::with_capacity(m + 1);
    row_ptr.push(0usize);
    for row in &code.rows {
        row_ptr.push(row_ptr.last().unwrap() + row.len());
    }
    let edge_count = *row_ptr.last().unwrap();
    let mut edge_sym = Vec::with_capacity(edge_count);
    for row in &code.rows {
        edge_sym.extend_from_slice(row);
    }
    // Per-symbol edge ranges in A_i (ascending check) order.
    let mut col_ptr = Vec::with_capacity(n + 1);
    col_ptr.push(0usize);
    for col in &code.cols {
        col_ptr.push(col_ptr.last().unwrap() + col.len());
    }
    let mut col_edge = vec![0usize; edge_count];
    {
        let mut fill = col_ptr.clone();
        for j in 0..m {
            for e in row_ptr[j]..row_ptr[j + 1] {
                let i = edge_sym[e];
                col_edge[fill[i]] = e;
                fill[i] += 1;
            }
        }
    }

    let r0 = llr_init(req.pattern, req.layout, req.q_est);
    let mut r = r0.clone();
    // Messages symbol -> check start at the initial LLRs.
    let mut to_check: Vec<f64> = edge_sym.iter().map(|&i| r0[i]).collect();
    let mut to_sym = vec![0.0f64; edge_count];

    let active: Vec<usize> = (0..n)
        .filter(|&i| req.layout.class(i) != PosClass::Shortened)
        .collect();
    let active_len = active.len();

    let mut window: Vec<f64> = Vec::with_capacity(TREND_WINDOW);
    let mut z = vec![0u8; n];
    let mut tanh_buf: Vec<f64> = Vec::new();
    let mut prefix: Vec<f64> = Vec::new();
    let mut suffix: Vec<f64> = Vec::new();

    for k in 1..=req.max_iters {
        // Check-node messages, with exclusion products formed by
        // prefix/suffix so zero terms from punctured symbols are exact.
        for j in 0..m {
            let (lo, hi) = (row_ptr[j], row_ptr[j + 1]);
            let deg = hi - lo;
            tanh_buf.clear();
            tanh_buf.extend((lo..hi).map(|e| (to_check[e] / 2.0).tanh()));
            prefix.clear();
            prefix.resize(deg + 1, 1.0);
            for t in 0..deg {
                prefix[t + 1] = prefix[t] * tanh_buf[t];
            }
            suffix.clear();
            suffix.resize(deg + 1, 1.0);
            for t in (0..deg).rev() {
                suffix[t] = suffix[t + 1] * tanh_buf[t];
            }
            let sign = if req.syndrome[j] & 1 == 1 { -1.0 } else { 1.0 };
            for t in 0..deg {
                let excl = (prefix[t] * suffix[t + 1]).clamp(-TANH_CLAMP, TANH_CLAMP);
                to_sym[lo + t] = sign * 2.0 * excl.atanh();
            }
        }

        // Symbol-node LLR update and hard decision.
        for i in 0..n {
            let mut sum = r0[i];
            for &e in &col_edge[col_ptr[i]..col_ptr[i + 1]] {
                sum += to_sym[e];
            }
            r[i] = clamp_llr(sum);
            z[i] = (r[i] < 0.0) as u8;
        }

        if code.syndrome_matches(&z, req.syndrome) {
            return Ok(DecodeOutcome {
                status: DecodeStatus::Converged,
                e_dec: Some(z),
                low_confidence: Vec::new(),
                iterations: k,
                final_llrs: r,
            });
        }

        // Trend stopping rule over the non-shortened positions.
        let avg = active.iter().map(|&i| r[i].abs()).sum::<f64>() / active_len as f64;
        let stalled = k > TREND_WINDOW
            && window.len() == TREND_WINDOW
            && avg <= window.iter().sum::<f64>() / TREND_WINDOW as f64;
        if stalled || k == req.max_iters {
            let low_confidence = lowest_confidence(&r, &active, req.disclose_count);
            return Ok(DecodeOutcome {
                status: DecodeStatus::Failed,
                e_dec: None,
                low_confidence,
                iterations: k,
                final_llrs: r,
            });
        }
        if window.len() == TREND_WINDOW {
            window.remove(0);
        }
        window.push(avg);

        // Symbol -> check messages for the next iteration.
        for (e, &i) in edge_sym.iter().enumerate() {
            to_check[e] = r[i] - to_sym[e];
        }
    }
    unreachable!("loop returns at k == max_iters");
}

/// The `count` active positions of minimal |LLR|, ties to the lowest
/// index.
fn lowest_confidence(r: &[f64], active: &[usize], count: usize) -> Vec<usize> {
    let mut ranked: Vec<(f64, usize)> = active.iter().map(|&i| (r[i].abs(), i)).collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    ranked.truncate(count.min(ranked.len()));
    ranked.into_iter().map(|(_, i)| i).collect()
}
