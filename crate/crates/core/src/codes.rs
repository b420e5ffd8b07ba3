//! LDPC parity-check matrices: loading, validation, untainted puncture
//! lists, and code selection from a pool.
//!
//! Matrices are held as Tanner-graph index lists only (no dense form), so
//! block lengths up to ~10^5 stay cheap.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

pub mod wifi;

#[derive(Debug, Error)]
pub enum CodeError {
    #[error("alist parse error at line {line}: {what}")]
    Parse { line: usize, what: String },
    #[error("invalid code {id:?}: {what}")]
    Invalid { id: String, what: String },
    #[error("untainted sidecar rejected: {0}")]
    Sidecar(String),
    #[error("no usable code in pool for q_est={q_est}, f_start={f_start}")]
    NoUsableCode { q_est: f64, f_start: f64 },
    #[error("duplicate code id {0:?} in pool")]
    DuplicateId(String),
    #[error("code pool is empty")]
    EmptyPool,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// A parity-check matrix with its Tanner-graph adjacency.
///
/// `rows[j]` lists the symbol (column) indices incident to check node `j`;
/// `cols[i]` lists the check (row) indices incident to symbol node `i`.
/// Both are strictly ascending. Immutable after construction.
#[derive(Debug, Clone)]
pub struct CodeSpec {
    pub id: String,
    /// Block length (columns).
    pub n: usize,
    /// Syndrome length (rows).
    pub m: usize,
    pub rows: Vec<Vec<usize>>,
    pub cols: Vec<Vec<usize>>,
    /// Ordered positions usable as punctures; empty until computed or
    /// loaded from a sidecar.
    pub untainted: Vec<usize>,
}

impl CodeSpec {
    /// Builds a spec from per-check symbol lists, deriving the column
    /// adjacency and validating the graph.
    pub fn from_rows(id: &str, n: usize, rows: Vec<Vec<usize>>) -> Result<Self, CodeError> {
        let m = rows.len();
        let invalid = |what: String| CodeError::Invalid {
            id: id.to_string(),
            what,
        };
        if m == 0 || n == 0 || m >= n {
            return Err(invalid(format!("need 0 < m < n, got m={m}, n={n}")));
        }
        let mut cols = vec![Vec::new(); n];
        for (j, row) in rows.iter().enumerate() {
            let mut prev: Option<usize> = None;
            for &i in row {
                if i >= n {
                    return Err(invalid(format!("row {j} references column {i} >= n")));
                }
                if prev.is_some_and(|p| p >= i) {
                    return Err(invalid(format!("row {j} not strictly ascending")));
                }
                prev = Some(i);
                cols[i].push(j);
            }
        }
        let spec = CodeSpec {
            id: id.to_string(),
            n,
            m,
            rows,
            cols,
            untainted: Vec::new(),
        };
        Ok(spec)
    }

    /// Code rate R = 1 - m/n.
    pub fn rate(&self) -> f64 {
        1.0 - self.m as f64 / self.n as f64
    }

    /// Syndrome of `word` (length n) under this matrix, as n-bit vector of
    /// length m.
    pub fn syndrome(&self, word: &[u8]) -> Vec<u8> {
        assert_eq!(word.len(), self.n, "word length must equal block length");
        self.rows
            .iter()
            .map(|row| row.iter().fold(0u8, |acc, &i| acc ^ (word[i] & 1)))
            .collect()
    }

    /// True iff `H * word = syndrome (mod 2)`.
    pub fn syndrome_matches(&self, word: &[u8], syndrome: &[u8]) -> bool {
        assert_eq!(syndrome.len(), self.m);
        assert_eq!(word.len(), self.n);
        self.rows
            .iter()
            .zip(syndrome)
            .all(|(row, &s)| row.iter().fold(0u8, |acc, &i| acc ^ (word[i] & 1)) == s)
    }

    /// Checks the untainted property: no check node touches two list
    /// members.
    pub fn untainted_property_holds(&self, list: &[usize]) -> bool {
        let mut member = vec![false; self.n];
        for &u in list {
            if u >= self.n || member[u] {
                return false;
            }
            member[u] = true;
        }
        self.rows
            .iter()
            .all(|row| row.iter().filter(|&&i| member[i]).count() <= 1)
    }

    /// Computes and stores the untainted puncture list.
    pub fn with_untainted(mut self) -> Self {
        self.untainted = untainted_punctures(&self);
        self
    }
}

/// Greedy untainted puncture list: repeatedly pick the candidate symbol
/// with the fewest yet-unblocked check neighbors (ties to the lowest
/// index), then drop every symbol sharing a check with the pick. The
/// result is deterministic, so both parties regenerate identical lists.
pub fn untainted_punctures(code: &CodeSpec) -> Vec<usize> {
    let mut candidate = vec![true; code.n];
    let mut blocked = vec![false; code.m];
    let mut picked = Vec::new();
    loop {
        let mut best: Option<(usize, usize)> = None;
        for i in 0..code.n {
            if !candidate[i] {
                continue;
            }
            let unblocked = code.cols[i].iter().filter(|&&j| !blocked[j]).count();
            if best.is_none_or(|(deg, _)| unblocked < deg) {
                best = Some((unblocked, i));
            }
        }
        let Some((_, pick)) = best else { break };
        picked.push(pick);
        candidate[pick] = false;
        for &j in &code.cols[pick] {
            blocked[j] = true;
            for &i in &code.rows[j] {
                candidate[i] = false;
            }
        }
    }
    debug_assert!(code.untainted_property_holds(&picked));
    picked
}

/// Parses the alist sparse-matrix interchange format.
///
/// Layout: line 1 `n m`; line 2 max column/row degrees; lines 3-4
/// per-column and per-row degrees; then one line of 1-based row indices per
/// column, then one line of 1-based column indices per row. Zero padding
/// entries are permitted and ignored.
pub fn load_alist(text: &[u8]) -> Result<CodeSpec, CodeError> {
    let text = std::str::from_utf8(text).map_err(|e| CodeError::Parse {
        line: 0,
        what: format!("not utf-8: {e}"),
    })?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let mut next_ints = |expect: &str| -> Result<(usize, Vec<i64>), CodeError> {
        let (lineno, line) = lines.next().ok_or(CodeError::Parse {
            line: 0,
            what: format!("unexpected end of file, expected {expect}"),
        })?;
        let mut vals = Vec::new();
        for tok in line.split_whitespace() {
            let v: i64 = tok.parse().map_err(|_| CodeError::Parse {
                line: lineno,
                what: format!("bad integer {tok:?}"),
            })?;
            vals.push(v);
        }
        Ok((lineno, vals))
    };

    let (lineno, dims) = next_ints("n m")?;
    if dims.len() != 2 || dims[0] <= 0 || dims[1] <= 0 {
        return Err(CodeError::Parse {
            line: lineno,
            what: "expected two positive integers: n m".into(),
        });
    }
    let (n, m) = (dims[0] as usize, dims[1] as usize);
    let (_, _max_degs) = next_ints("max degrees")?;

    let (lineno, col_degs) = next_ints("column degrees")?;
    if col_degs.len() != n {
        return Err(CodeError::Parse {
            line: lineno,
            what: format!("expected {n} column degrees, got {}", col_degs.len()),
        });
    }
    let (lineno, row_degs) = next_ints("row degrees")?;
    if row_degs.len() != m {
        return Err(CodeError::Parse {
            line: lineno,
            what: format!("expected {m} row degrees, got {}", row_degs.len()),
        });
    }

    let mut parse_block = |count: usize,
                           degs: &[i64],
                           limit: usize,
                           what: &str|
     -> Result<Vec<Vec<usize>>, CodeError> {
        let mut block = Vec::with_capacity(count);
        for k in 0..count {
            let (lineno, vals) = next_ints(what)?;
            let mut entries = Vec::new();
            for &v in &vals {
                if v == 0 {
                    continue; // padding
                }
                if v < 0 || v as usize > limit {
                    return Err(CodeError::Parse {
                        line: lineno,
                        what: format!("index {v} out of range 1..={limit}"),
                    });
                }
                entries.push(v as usize - 1);
            }
            if entries.len() != degs[k] as usize {
                return Err(CodeError::Parse {
                    line: lineno,
                    what: format!(
                        "{what} {k}: {} entries but declared degree {}",
                        entries.len(),
                        degs[k]
                    ),
                });
            }
            let mut sorted = entries.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != entries.len() {
                return Err(CodeError::Parse {
                    line: lineno,
                    what: format!("{what} {k} has duplicate entries"),
                });
            }
            block.push(sorted);
        }
        Ok(block)
    };

    let col_lists = parse_block(n, &col_degs, m, "column")?;
    let row_lists = parse_block(m, &row_degs, n, "row")?;

    let spec = CodeSpec::from_rows("unnamed", n, row_lists)?;
    // Cross-check the per-column block against the adjacency derived from
    // the rows: the two encodings must describe the same bipartite graph.
    for i in 0..n {
        if spec.cols[i] != col_lists[i] {
            return Err(CodeError::Parse {
                line: 0,
                what: format!("row/column lists disagree on symbol {i}"),
            });
        }
    }
    Ok(spec)
}

/// Serializes to canonical alist text (single spaces, no padding).
pub fn write_alist(code: &CodeSpec) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", code.n, code.m);
    let max_col = code.cols.iter().map(Vec::len).max().unwrap_or(0);
    let max_row = code.rows.iter().map(Vec::len).max().unwrap_or(0);
    let _ = writeln!(out, "{max_col} {max_row}");
    let join = |v: &[usize], base: usize| {
        v.iter()
            .map(|x| (x + base).to_string())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let degs: Vec<usize> = code.cols.iter().map(Vec::len).collect();
    let _ = writeln!(out, "{}", join(&degs, 0));
    let degs: Vec<usize> = code.rows.iter().map(Vec::len).collect();
    let _ = writeln!(out, "{}", join(&degs, 0));
    for col in &code.cols {
        let _ = writeln!(out, "{}", join(col, 1));
    }
    for row in &code.rows {
        let _ = writeln!(out, "{}", join(row, 1));
    }
    out
}

/// Untainted sidecar text: header line then one 0-based position per line.
pub fn write_untainted_sidecar(code: &CodeSpec) -> String {
    let mut out = format!("# untainted v1 {}\n", code.id);
    for &p in &code.untainted {
        let _ = writeln!(out, "{p}");
    }
    out
}

/// Parses a sidecar, checking the header id and the untainted property
/// against `code`.
pub fn parse_untainted_sidecar(text: &str, code: &CodeSpec) -> Result<Vec<usize>, CodeError> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let expected = format!("# untainted v1 {}", code.id);
    if header.trim() != expected {
        return Err(CodeError::Sidecar(format!(
            "bad header {header:?}, expected {expected:?}"
        )));
    }
    let mut list = Vec::new();
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let p: usize = line
            .parse()
            .map_err(|_| CodeError::Sidecar(format!("bad position {line:?}")))?;
        list.push(p);
    }
    if !code.untainted_property_holds(&list) {
        return Err(CodeError::Sidecar(
            "list violates the untainted property".into(),
        ));
    }
    Ok(list)
}

/// An ordered pool of codes with unique ids.
#[derive(Debug, Clone, Default)]
pub struct CodePool {
    codes: Vec<CodeSpec>,
}

impl CodePool {
    pub fn new(codes: Vec<CodeSpec>) -> Result<Self, CodeError> {
        if codes.is_empty() {
            return Err(CodeError::EmptyPool);
        }
        for (k, c) in codes.iter().enumerate() {
            if codes[..k].iter().any(|o| o.id == c.id) {
                return Err(CodeError::DuplicateId(c.id.clone()));
            }
        }
        Ok(CodePool { codes })
    }

    /// Loads every `*.alist` in `dir` (sorted by file name), computing
    /// untainted lists unless a valid `.untainted` sidecar sits next to
    /// the matrix.
    pub fn load_dir(dir: &Path) -> Result<Self, CodeError> {
        let io_err = |source| CodeError::Io {
            path: dir.display().to_string(),
            source,
        };
        let mut paths: Vec<_> = fs::read_dir(dir)
            .map_err(io_err)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "alist"))
            .collect();
        paths.sort();
        let mut codes = Vec::new();
        for path in paths {
            let bytes = fs::read(&path).map_err(|source| CodeError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let mut code = load_alist(&bytes)?;
            code.id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "unnamed".into());
            let sidecar = path.with_extension("untainted");
            if sidecar.exists() {
                let text = fs::read_to_string(&sidecar).map_err(|source| CodeError::Io {
                    path: sidecar.display().to_string(),
                    source,
                })?;
                code.untainted = parse_untainted_sidecar(&text, &code)?;
            } else {
                code = code.with_untainted();
            }
            codes.push(code);
        }
        CodePool::new(codes)
    }

    pub fn iter(&self) -> impl Iterator<Item = &CodeSpec> {
        self.codes.iter()
    }

    pub fn by_id(&self, id: &str) -> Option<&CodeSpec> {
        self.codes.iter().find(|c| c.id == id)
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

/// Shortening/puncturing sizes for one code at a target starting
/// efficiency, given the entropy `h = h_b(q_est)`. `None` when the code
/// is disqualified (`s >= n-m` or `p >= m`).
pub fn adapt_sizes(code: &CodeSpec, f_start: f64, h: f64) -> Option<(usize, usize)> {
    let (n, m) = (code.n as f64, code.m as f64);
    let f0 = m / (n * h);
    let (s, p) = if f0 > f_start {
        let p = ((m - n * h * f_start) / (1.0 - h * f_start)).floor();
        (0usize, p.max(0.0) as usize)
    } else if f0 < f_start {
        let s = (n - m / (h * f_start)).ceil();
        (s.max(0.0) as usize, 0usize)
    } else {
        (0, 0)
    };
    if s >= code.n - code.m || p >= code.m {
        return None;
    }
    Some((s, p))
}

/// Picks the pool code maximizing the raw-key payload `n - p - s` for the
/// estimated error rate; ties go to the higher rate, then pool order.
pub fn select_code<'p>(
    pool: &'p CodePool,
    q_est: f64,
    f_start: f64,
) -> Result<(&'p CodeSpec, usize, usize), CodeError> {
    assert!(q_est > 0.0 && q_est < 0.5, "q_est must lie in (0, 1/2)");
    assert!(f_start >= 1.0, "f_start must be at least 1");
    let h = crate::sim::h_binary(q_est).expect("q_est in domain");
    let mut best: Option<(&CodeSpec, usize, usize, usize)> = None;
    for code in pool.iter() {
        let Some((s, p)) = adapt_sizes(code, f_start, h) else {
            continue;
        };
        let payload = code.n - p - s;
        let better = match &best {
            None => true,
            Some((bc, _, _, bpay)) => {
                payload > *bpay || (payload == *bpay && code.rate() > bc.rate())
            }
        };
        if better {
            best = Some((code, s, p, payload));
        }
    }
    best.map(|(c, s, p, _)| (c, s, p))
        .ok_or(CodeError::NoUsableCode { q_est, f_start })
}
