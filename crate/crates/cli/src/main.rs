//! Command-line entry points: Monte-Carlo sweeps, two-process sessions
//! over TCP, and untainted puncture list generation.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 partial result (some
//! grid point had no usable code; the CSV is still written), 3 protocol
//! failure (transport closed or desync detected).

use std::fs;
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use reconcile_core::bits::unpack_bits;
use reconcile_core::codes::{
    load_alist, select_code, untainted_punctures, write_untainted_sidecar, CodePool, CodeSpec,
};
use reconcile_core::protocol::{
    build_layout, disclosure_count, run_pair, run_session, Outcome, PartyState, ProtocolError,
    ProtocolKind, Role, SessionConfig, SessionResult,
};
use reconcile_core::sim::{run_sweep, write_csv, ChannelModel, GridOutcome, SweepConfig};
use reconcile_core::transport::{Endpoint, SplitMix64, TcpChannel};

#[derive(Parser)]
#[command(name = "reconcile", version, about = "LDPC information reconciliation for QKD")]
struct Cli {
    /// Key=value config file; values in it override the flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Monte-Carlo QBER sweep over a code pool, emitting CSV and
    /// JSON-lines statistics.
    Sweep(SweepArgs),
    /// Run reconciliation sessions, either two-process over TCP or
    /// in-process over loopback.
    Run(RunArgs),
    /// Compute the untainted puncture list for a parity-check matrix.
    Punctures(PuncturesArgs),
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Directory of .alist matrices (with optional .untainted sidecars).
    #[arg(long)]
    codes: PathBuf,
    /// QBER grid as start:end:step (inclusive) or a single value.
    #[arg(long)]
    q: String,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// symmetric | blind | rate-adaptive
    #[arg(long, default_value = "symmetric")]
    protocol: String,
    /// Frames per grid point.
    #[arg(long, default_value_t = 1000)]
    frames: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON-lines per-frame log.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Frames per candidate code in the calibration pre-pass.
    #[arg(long, default_value_t = 200)]
    calib_frames: usize,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// alice | bob (ignored with --loopback).
    #[arg(long, default_value = "alice")]
    role: String,
    /// Connect to the peer (alice side), host:port.
    #[arg(long)]
    connect: Option<String>,
    /// Listen for the peer (bob side), host:port.
    #[arg(long)]
    listen: Option<String>,
    /// Run both parties in-process instead of over TCP.
    #[arg(long, default_value_t = false)]
    loopback: bool,
    /// Parity-check matrix (.alist).
    #[arg(long)]
    code: PathBuf,
    /// Estimated QBER used for code adaptation and decoding.
    #[arg(long)]
    q_est: f64,
    /// Channel QBER for generated test keys (defaults to --q-est).
    #[arg(long)]
    q: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    f_start: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1)]
    frames: usize,
    /// Shared seed; both sides must pass the same value. Random when
    /// omitted.
    #[arg(long)]
    seed: Option<u64>,
    /// Read this side's raw key bits (packed, LSB-first) from a file
    /// instead of generating test keys. In loopback mode this is Alice's
    /// key.
    #[arg(long)]
    key_file: Option<PathBuf>,
    /// Bob's key file, for loopback mode only.
    #[arg(long)]
    key_file_bob: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PuncturesArgs {
    /// Parity-check matrix (.alist).
    #[arg(long)]
    alist: PathBuf,
    /// Sidecar output path; defaults to the matrix path with extension
    /// .untainted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            classify_error(&e)
        }
    };
    ExitCode::from(code)
}

fn classify_error(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(pe) = cause.downcast_ref::<ProtocolError>() {
            match pe {
                ProtocolError::Transport(_) | ProtocolError::Desync(_) => return 3,
                _ => {}
            }
        }
    }
    1
}

fn run(cli: Cli) -> Result<u8> {
    let overrides = match &cli.config {
        Some(path) => parse_config(path)?,
        None => Vec::new(),
    };
    match cli.cmd {
        Cmd::Sweep(mut args) => {
            apply_sweep_overrides(&mut args, &overrides)?;
            cmd_sweep(args)
        }
        Cmd::Run(mut args) => {
            apply_run_overrides(&mut args, &overrides)?;
            cmd_run(args)
        }
        Cmd::Punctures(args) => cmd_punctures(args),
    }
}

/// Key=value lines, `#` comments. TOML-style scalars only.
fn parse_config(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("config {}:{}: expected key = value", path.display(), lineno + 1);
        };
        out.push((
            k.trim().to_string(),
            v.trim().trim_matches('"').to_string(),
        ));
    }
    Ok(out)
}

fn apply_sweep_overrides(args: &mut SweepArgs, kv: &[(String, String)]) -> Result<()> {
    for (k, v) in kv {
        match k.as_str() {
            "codes" => args.codes = v.into(),
            "q" => args.q = v.clone(),
            "alpha" => args.alpha = v.parse().context("alpha")?,
            "protocol" => args.protocol = v.clone(),
            "frames" => args.frames = v.parse().context("frames")?,
            "seed" => args.seed = v.parse().context("seed")?,
            "out" => args.out = v.into(),
            "log" => args.log = Some(v.into()),
            "calib_frames" => args.calib_frames = v.parse().context("calib_frames")?,
            other => bail!("unknown config key {other:?} for sweep"),
        }
    }
    Ok(())
}

fn apply_run_overrides(args: &mut RunArgs, kv: &[(String, String)]) -> Result<()> {
    for (k, v) in kv {
        match k.as_str() {
            "role" => args.role = v.clone(),
            "connect" => args.connect = Some(v.clone()),
            "listen" => args.listen = Some(v.clone()),
            "loopback" => args.loopback = v.parse().context("loopback")?,
            "code" => args.code = v.into(),
            "q_est" => args.q_est = v.parse().context("q_est")?,
            "q" => args.q = Some(v.parse().context("q")?),
            "f_start" => args.f_start = v.parse().context("f_start")?,
            "alpha" => args.alpha = v.parse().context("alpha")?,
            "frames" => args.frames = v.parse().context("frames")?,
            "seed" => args.seed = Some(v.parse().context("seed")?),
            "key_file" => args.key_file = Some(v.into()),
            "key_file_bob" => args.key_file_bob = Some(v.into()),
            other => bail!("unknown config key {other:?} for run"),
        }
    }
    Ok(())
}

/// Parses start:end:step (endpoints inclusive within 1e-9) or a single
/// value.
fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        [one] => Ok(vec![one.parse().context("grid value")?]),
        [start, end, step] => {
            let start: f64 = start.parse().context("grid start")?;
            let end: f64 = end.parse().context("grid end")?;
            let step: f64 = step.parse().context("grid step")?;
            if step <= 0.0 || end < start {
                bail!("grid requires step > 0 and end >= start");
            }
            let mut grid = Vec::new();
            let mut k = 0usize;
            loop {
                let q = start + k as f64 * step;
                if q > end + 1e-9 {
                    break;
                }
                grid.push(q);
                k += 1;
            }
            Ok(grid)
        }
        _ => bail!("grid syntax is start:end:step or a single value"),
    }
}

fn trace_dir_from_env() -> Option<PathBuf> {
    match std::env::var("RECONCILE_TRACE") {
        Ok(v) if v == "1" => Some(PathBuf::from("reconcile-trace")),
        _ => None,
    }
}

fn cmd_sweep(args: SweepArgs) -> Result<u8> {
    if !args.codes.is_dir() {
        bail!("codes directory {} does not exist", args.codes.display());
    }
    let protocol: ProtocolKind = args
        .protocol
        .parse()
        .map_err(|e: String| anyhow!(e))?;
    let grid = parse_grid(&args.q)?;
    let pool = CodePool::load_dir(&args.codes)?;
    let mut cfg = SweepConfig::new(grid, args.alpha, protocol, args.frames, args.seed);
    cfg.calib_frames = args.calib_frames;

    let mut log_file = match &args.log {
        Some(path) => Some(
            fs::File::create(path)
                .with_context(|| format!("cannot create log {}", path.display()))?,
        ),
        None => None,
    };
    let outcomes = run_sweep(
        &pool,
        &cfg,
        log_file.as_mut().map(|f| f as &mut dyn std::io::Write),
    )?;

    let mut csv = Vec::new();
    write_csv(&outcomes, &mut csv)?;
    fs::write(&args.out, &csv)
        .with_context(|| format!("cannot write {}", args.out.display()))?;

    let unusable = outcomes
        .iter()
        .filter(|o| matches!(o, GridOutcome::Unusable { .. }))
        .count();
    if unusable > 0 {
        eprintln!("{unusable} grid point(s) had no usable code; partial CSV written");
        return Ok(2);
    }
    Ok(0)
}

fn cmd_punctures(args: PuncturesArgs) -> Result<u8> {
    let bytes = fs::read(&args.alist)
        .with_context(|| format!("cannot read {}", args.alist.display()))?;
    let mut code = load_alist(&bytes)?;
    code.id = args
        .alist
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "unnamed".into());
    code.untainted = untainted_punctures(&code);
    let out = args
        .out
        .unwrap_or_else(|| args.alist.with_extension("untainted"));
    fs::write(&out, write_untainted_sidecar(&code))
        .with_context(|| format!("cannot write {}", out.display()))?;
    println!("{}", code.untainted.len());
    Ok(0)
}

fn load_key_file(path: &Path, bits: usize) -> Result<Vec<u8>> {
    let bytes =
        fs::read(path).with_context(|| format!("cannot read key file {}", path.display()))?;
    unpack_bits(&bytes, bits)
        .ok_or_else(|| anyhow!("key file {} holds fewer than {bits} bits", path.display()))
}

struct FramePlan {
    session_id: u64,
    shared_seed: u64,
}

struct SessionSetup {
    q_est: f64,
    f_start: f64,
    s_count: usize,
    p_count: usize,
    d: usize,
    trace: Option<PathBuf>,
}

fn make_party<'c>(
    setup: &SessionSetup,
    role: Role,
    plan: &FramePlan,
    raw: Vec<u8>,
    code: &'c CodeSpec,
) -> Result<PartyState<'c>> {
    let layout = build_layout(code, setup.s_count, setup.p_count, plan.shared_seed)?;
    let mut cfg = SessionConfig::new(plan.session_id, setup.q_est, setup.d, plan.shared_seed);
    cfg.f_start = setup.f_start;
    cfg.trace_dir = setup.trace.clone();
    let private_salt = match role {
        Role::Alice => 0xa11c_e000_0000_0000u64,
        Role::Bob => 0xb0b0_0000_0000_0000u64,
    };
    PartyState::new(
        role,
        raw,
        code,
        layout,
        cfg,
        SplitMix64::new(plan.session_id ^ private_salt),
    )
    .map_err(Into::into)
}

/// Both processes derive the same plan from the shared seed, so generated
/// test keys line up without any extra communication.
fn frame_plan(seed: u64, frame: usize) -> FramePlan {
    let mut base = SplitMix64::new(seed ^ frame as u64);
    FramePlan {
        session_id: base.next_u64(),
        shared_seed: base.next_u64(),
    }
}

/// The raw key for one role: from that role's key file when given,
/// otherwise a generated test key (Bob's side is Alice's test key sent
/// through a seeded BSC at `q`).
fn role_raw_key(
    role: Role,
    plan: &FramePlan,
    raw_len: usize,
    q: f64,
    key_bits: Option<&[u8]>,
) -> Result<Vec<u8>> {
    if let Some(bits) = key_bits {
        return Ok(bits.to_vec());
    }
    let mut key_rng = SplitMix64::new(plan.session_id ^ 0x6b65_79);
    let x: Vec<u8> = (0..raw_len).map(|_| key_rng.next_bit()).collect();
    match role {
        Role::Alice => Ok(x),
        Role::Bob => {
            let mut channel = ChannelModel::new(q, plan.session_id ^ 0x6368_616e)?;
            let (y, _) = channel.transmit(&x);
            Ok(y)
        }
    }
}

fn print_result(frame: usize, role: Role, res: &SessionResult) {
    let outcome = match res.outcome {
        Outcome::Verified => "verified".to_string(),
        Outcome::VerifyFailed => "verify-failed".to_string(),
        Outcome::Aborted(r) => format!("aborted({r:?})"),
    };
    println!(
        "frame {frame} {role}: outcome={outcome} f={f:.6} rounds={rounds} disclosed={disclosed} \
         transcript={t:016x} d_seq={d:016x} e_dec={e:016x}",
        role = role.name(),
        f = res.stats.f_final,
        rounds = res.stats.rounds,
        disclosed = res.stats.disclosed,
        t = res.digests.transcript,
        d = res.digests.disclosure_sequence,
        e = res.digests.error_pattern,
    );
}

fn cmd_run(args: RunArgs) -> Result<u8> {
    let bytes = fs::read(&args.code)
        .with_context(|| format!("cannot read {}", args.code.display()))?;
    let mut code = load_alist(&bytes)?;
    code.id = args
        .code
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "unnamed".into());
    code.untainted = untainted_punctures(&code);
    let q = args.q.unwrap_or(args.q_est);
    let seed = args.seed.unwrap_or_else(rand::random::<u64>);

    let pool = CodePool::new(vec![code])?;
    let (code, s_count, p_count) = select_code(&pool, args.q_est, args.f_start)?;
    let d = disclosure_count(code.rate(), code.n, args.alpha);
    let trace = trace_dir_from_env();

    let raw_len = code.n - s_count - p_count;
    let key_bits = match &args.key_file {
        Some(path) => Some(load_key_file(path, raw_len)?),
        None => None,
    };
    let key_bits_bob = match &args.key_file_bob {
        Some(path) => Some(load_key_file(path, raw_len)?),
        None => None,
    };

    let session = SessionSetup {
        q_est: args.q_est,
        f_start: args.f_start,
        s_count,
        p_count,
        d,
        trace,
    };

    if args.loopback {
        for frame in 0..args.frames {
            let plan = frame_plan(seed, frame);
            let raw_a = role_raw_key(Role::Alice, &plan, raw_len, q, key_bits.as_deref())?;
            let raw_b = role_raw_key(Role::Bob, &plan, raw_len, q, key_bits_bob.as_deref())?;
            let mut alice = make_party(&session, Role::Alice, &plan, raw_a, code)?;
            let mut bob = make_party(&session, Role::Bob, &plan, raw_b, code)?;
            let (ra, rb) = run_pair(ProtocolKind::Symmetric, &mut alice, &mut bob)?;
            print_result(frame, Role::Alice, &ra);
            print_result(frame, Role::Bob, &rb);
        }
        return Ok(0);
    }

    let role = match args.role.as_str() {
        "alice" => Role::Alice,
        "bob" => Role::Bob,
        other => bail!("role must be alice or bob, got {other:?}"),
    };
    let stream = match role {
        Role::Alice => {
            let addr = args
                .connect
                .as_ref()
                .ok_or_else(|| anyhow!("alice needs --connect host:port"))?;
            TcpStream::connect(addr).with_context(|| format!("cannot connect to {addr}"))?
        }
        Role::Bob => {
            let addr = args
                .listen
                .as_ref()
                .ok_or_else(|| anyhow!("bob needs --listen host:port"))?;
            let listener =
                TcpListener::bind(addr).with_context(|| format!("cannot listen on {addr}"))?;
            let (stream, peer) = listener.accept().context("accept failed")?;
            eprintln!("peer connected from {peer}");
            stream
        }
    };
    let mut transport = Endpoint::new(TcpChannel::new(stream));
    for frame in 0..args.frames {
        let plan = frame_plan(seed, frame);
        let raw = role_raw_key(role, &plan, raw_len, q, key_bits.as_deref())?;
        let mut party = make_party(&session, role, &plan, raw, code)?;
        let res = run_session(ProtocolKind::Symmetric, &mut party, &mut transport)?;
        print_result(frame, role, &res);
    }
    Ok(0)
}
