//! Regular LDPC codes with a real-valued peeling decoder.
//!
//! The parity-check matrix `H` is binary and sparse, but its rows are read as
//! real linear constraints `Σ_{i ∈ check} c_i = 0`. A check with a single
//! erased coordinate therefore pins that coordinate to minus the sum of the
//! others, which lets the usual erasure-peeling schedule run directly on real
//! gradient payloads in time linear in the number of edges.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codes::{erasure_solve, CodeKind, ErasurePattern, LinearCode};
use crate::error::{param, Error, Result};

/// Full ensemble resamples before [`sample_ldpc`] gives up.
pub const SAMPLE_RETRY_CAP: usize = 100;

/// Allowed `|H · Gᵀ|` entry for the derived generator.
pub const PARITY_TOLERANCE: f64 = 1e-9;

const PIVOT_TOLERANCE: f64 = 1e-9;

/// A regular `[N, K]` LDPC code together with a real systematic generator
/// spanning the null space of `H`.
#[derive(Debug, Clone)]
pub struct LdpcCode {
    block_length: usize,
    variable_degree: usize,
    check_degree: usize,
    /// Column indices of the ones in each row of `H`, sorted.
    checks: Vec<Vec<usize>>,
    /// Rows of `H` touching each column.
    variable_checks: Vec<Vec<usize>>,
    code: LinearCode,
    seed: Option<u64>,
}

impl LdpcCode {
    /// Builds a code from an explicit regular parity-check matrix given as
    /// per-row column lists.
    pub fn from_parity_check(block_length: usize, rows: Vec<Vec<usize>>) -> Result<Self> {
        Self::build(block_length, rows, None)
    }

    fn build(block_length: usize, mut rows: Vec<Vec<usize>>, seed: Option<u64>) -> Result<Self> {
        let m = rows.len();
        if m == 0 || m >= block_length {
            return param(format!("need 1 <= N - K < N, got {m} checks for N = {block_length}"));
        }
        let mut variable_checks = vec![Vec::new(); block_length];
        for (c, row) in rows.iter_mut().enumerate() {
            row.sort_unstable();
            if row.windows(2).any(|w| w[0] == w[1]) {
                return param(format!("check {c} has a repeated column"));
            }
            for &v in row.iter() {
                if v >= block_length {
                    return param(format!("check {c} references column {v} >= N"));
                }
                variable_checks[v].push(c);
            }
        }
        let check_degree = rows[0].len();
        let variable_degree = variable_checks[0].len();
        if rows.iter().any(|r| r.len() != check_degree) {
            return param("parity-check rows must all have the same weight");
        }
        if variable_checks.iter().any(|c| c.len() != variable_degree) {
            return param("parity-check columns must all have the same weight");
        }
        let code = derive_generator(block_length, &rows)?;
        let ldpc = Self {
            block_length,
            variable_degree,
            check_degree,
            checks: rows,
            variable_checks,
            code,
            seed,
        };
        let residual = ldpc.parity_residual();
        if residual > PARITY_TOLERANCE {
            return Err(Error::Construction(format!(
                "derived generator violates parity checks by {residual:.3e}"
            )));
        }
        Ok(ldpc)
    }

    pub fn block_length(&self) -> usize {
        self.block_length
    }

    pub fn dimension(&self) -> usize {
        self.block_length - self.checks.len()
    }

    pub fn variable_degree(&self) -> usize {
        self.variable_degree
    }

    pub fn check_degree(&self) -> usize {
        self.check_degree
    }

    pub fn checks(&self) -> &[Vec<usize>] {
        &self.checks
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// The derived real generator. Its systematic positions are the free
    /// columns left by row reduction of `H`.
    pub fn linear_code(&self) -> &LinearCode {
        &self.code
    }

    /// Dense 0/1 copy of `H`.
    pub fn parity_check_dense(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.checks.len(), self.block_length);
        for (c, row) in self.checks.iter().enumerate() {
            for &v in row {
                h[(c, v)] = 1.0;
            }
        }
        h
    }

    /// Largest `|(H · Gᵀ)_{ij}|`.
    pub fn parity_residual(&self) -> f64 {
        let g = self.code.generator();
        let mut worst: f64 = 0.0;
        for row in &self.checks {
            for r in 0..g.nrows() {
                let s: f64 = row.iter().map(|&v| g[(r, v)]).sum();
                worst = worst.max(s.abs());
            }
        }
        worst
    }

    pub fn to_document(&self) -> ParityCheckDocument {
        ParityCheckDocument {
            n: self.block_length,
            k: self.dimension(),
            variable_degree: self.variable_degree,
            check_degree: self.check_degree,
            seed: self.seed,
            rows: self.checks.clone(),
        }
    }

    pub fn from_document(doc: ParityCheckDocument) -> Result<Self> {
        if doc.rows.len() + doc.k != doc.n {
            return param("document K does not match N minus the number of checks");
        }
        let code = Self::build(doc.n, doc.rows, doc.seed)?;
        if code.variable_degree != doc.variable_degree || code.check_degree != doc.check_degree {
            return param("document degrees do not match its rows");
        }
        Ok(code)
    }
}

/// Sparse JSON form of `H`: one list of column indices per check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityCheckDocument {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub variable_degree: usize,
    pub check_degree: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub rows: Vec<Vec<usize>>,
}

/// Draws `H` from the regular `(variable_degree, check_degree)` ensemble by
/// the configuration model.
///
/// Variable sockets are matched to a random permutation of check sockets.
/// Double edges are removed by swapping one endpoint with a random socket
/// elsewhere in the matching. A draw whose `H` is row-rank deficient over
/// the reals is thrown away; after [`SAMPLE_RETRY_CAP`] failed draws this
/// returns a construction error.
pub fn sample_ldpc(
    n: usize,
    k: usize,
    variable_degree: usize,
    check_degree: usize,
    seed: u64,
) -> Result<LdpcCode> {
    if k >= n {
        return param(format!("need N - K >= 1, got N = {n}, K = {k}"));
    }
    let m = n - k;
    if variable_degree == 0 || check_degree == 0 {
        return param("degrees must be positive");
    }
    if variable_degree * n != check_degree * m {
        return param(format!(
            "socket counts differ: d_v * N = {} but d_c * (N - K) = {}",
            variable_degree * n,
            check_degree * m
        ));
    }
    if variable_degree > m || check_degree > n {
        return param("degrees too large for a simple graph");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last_err = None;
    for _ in 0..SAMPLE_RETRY_CAP {
        let Some(rows) = configuration_model(m, variable_degree, check_degree, &mut rng) else {
            last_err = Some("double edges could not be repaired".to_string());
            continue;
        };
        match LdpcCode::build(n, rows, Some(seed)) {
            Ok(code) => return Ok(code),
            Err(Error::Construction(msg)) => last_err = Some(msg),
            Err(e) => return Err(e),
        }
    }
    Err(Error::Construction(format!(
        "no valid ({variable_degree}, {check_degree}) matrix in {SAMPLE_RETRY_CAP} draws: {}",
        last_err.unwrap_or_default()
    )))
}

fn configuration_model(
    m: usize,
    dv: usize,
    dc: usize,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<Vec<usize>>> {
    // socket s belongs to variable s / dv and is wired to check sockets[s].
    let mut sockets: Vec<usize> = (0..m).flat_map(|c| std::iter::repeat_n(c, dc)).collect();
    sockets.shuffle(rng);
    let edges = sockets.len();
    let has_check = |sockets: &[usize], v: usize, c: usize, skip: usize| {
        (v * dv..(v + 1) * dv).any(|s| s != skip && sockets[s] == c)
    };
    let mut budget = 50 * edges;
    loop {
        let dup = (0..edges).find(|&s| has_check(&sockets, s / dv, sockets[s], s));
        let Some(s) = dup else { break };
        // Swap endpoints with a random socket until the swap is clean.
        loop {
            if budget == 0 {
                return None;
            }
            budget -= 1;
            let q = rng.random_range(0..edges);
            let (v, w) = (s / dv, q / dv);
            if v == w {
                continue;
            }
            let (cs, cq) = (sockets[s], sockets[q]);
            if has_check(&sockets, v, cq, s) || has_check(&sockets, w, cs, q) {
                continue;
            }
            sockets.swap(s, q);
            break;
        }
    }
    let mut rows = vec![Vec::with_capacity(dc); m];
    for (s, &c) in sockets.iter().enumerate() {
        rows[c].push(s / dv);
    }
    Some(rows)
}

/// Row-reduces `H` over the reals and returns the generator whose rows span
/// its null space, systematic on the free columns.
fn derive_generator(n: usize, rows: &[Vec<usize>]) -> Result<LinearCode> {
    let m = rows.len();
    let mut h = vec![0.0f64; m * n];
    for (c, row) in rows.iter().enumerate() {
        for &v in row {
            h[c * n + v] = 1.0;
        }
    }
    let mut pivots = Vec::with_capacity(m);
    let mut is_pivot = vec![false; n];
    let mut r = 0;
    for col in 0..n {
        if r == m {
            break;
        }
        let (best, best_abs) = (r..m)
            .map(|i| (i, h[i * n + col].abs()))
            .fold((r, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best_abs < PIVOT_TOLERANCE {
            continue;
        }
        if best != r {
            for j in 0..n {
                h.swap(best * n + j, r * n + j);
            }
        }
        let inv = 1.0 / h[r * n + col];
        for j in col..n {
            h[r * n + j] *= inv;
        }
        let (before, rest) = h.split_at_mut(r * n);
        let (pivot_row, after) = rest.split_at_mut(n);
        let eliminate = |other: &mut [f64]| {
            let factor = other[col];
            if factor != 0.0 {
                for j in col..n {
                    other[j] -= factor * pivot_row[j];
                }
            }
        };
        before.chunks_mut(n).for_each(eliminate);
        after.chunks_mut(n).for_each(eliminate);
        pivots.push(col);
        is_pivot[col] = true;
        r += 1;
    }
    if pivots.len() < m {
        return Err(Error::Construction(format!(
            "parity-check matrix has real rank {} < {m}",
            pivots.len()
        )));
    }
    let free: Vec<usize> = (0..n).filter(|&c| !is_pivot[c]).collect();
    let k = free.len();
    let mut g = DMatrix::zeros(k, n);
    for (i, &f) in free.iter().enumerate() {
        g[(i, f)] = 1.0;
        for (row, &pc) in pivots.iter().enumerate() {
            g[(i, pc)] = -h[row * n + f];
        }
    }
    LinearCode::new(CodeKind::LdpcDerived, g, Some(free))
}

/// Outcome of one peeling run.
#[derive(Debug, Clone)]
pub struct PeelingResult {
    /// Full `rows × N` codeword matrix, present on success.
    pub codeword: Option<DMatrix<f64>>,
    /// `rows × K` message read from the systematic columns, present on success.
    pub message: Option<DMatrix<f64>>,
    /// Erased coordinates left when peeling stopped.
    pub residual_erasures: usize,
    /// Number of coordinates resolved by a degree-one check.
    pub peel_steps: usize,
    /// Edge visits performed, the decoder's work measure.
    pub edge_visits: usize,
    /// Erased coordinates at the start.
    pub initial_erasures: usize,
    /// Whether the message came from the dense fallback solver.
    pub used_fallback: bool,
}

impl PeelingResult {
    pub fn succeeded(&self) -> bool {
        self.message.is_some()
    }
}

/// Peels erasures from `coded`, whose columns hold the received coordinates
/// listed by `pattern`. Stops at a stopping set without falling back.
pub fn peel_decode(
    ldpc: &LdpcCode,
    pattern: &ErasurePattern,
    coded: &DMatrix<f64>,
) -> Result<PeelingResult> {
    peel_decode_with(ldpc, pattern, coded, false)
}

/// As [`peel_decode`]; when `fallback` is set and peeling stalls, the message
/// is recovered with [`erasure_solve`] on the derived code if the received
/// columns have full rank.
pub fn peel_decode_with(
    ldpc: &LdpcCode,
    pattern: &ErasurePattern,
    coded: &DMatrix<f64>,
    fallback: bool,
) -> Result<PeelingResult> {
    let n = ldpc.block_length;
    let received = pattern.received();
    if received.last().is_some_and(|&j| j >= n) {
        return param("pattern does not fit this code");
    }
    if coded.ncols() != received.len() {
        return param(format!(
            "coded matrix has {} columns for {} received indices",
            coded.ncols(),
            received.len()
        ));
    }
    let rows = coded.nrows();
    let mut values = DMatrix::zeros(rows, n);
    let mut known = vec![false; n];
    for (col, &j) in received.iter().enumerate() {
        values.set_column(j, &coded.column(col));
        known[j] = true;
    }
    let initial_erasures = n - received.len();

    let m = ldpc.checks.len();
    let mut erased_in_check = vec![0usize; m];
    let mut check_sums = DMatrix::zeros(rows, m);
    let mut edge_visits = 0;
    let mut queue = VecDeque::new();
    for (c, check) in ldpc.checks.iter().enumerate() {
        for &v in check {
            edge_visits += 1;
            if known[v] {
                let mut sum = check_sums.column_mut(c);
                sum += values.column(v);
            } else {
                erased_in_check[c] += 1;
            }
        }
        if erased_in_check[c] == 1 {
            queue.push_back(c);
        }
    }

    let mut peel_steps = 0;
    while let Some(c) = queue.pop_front() {
        if erased_in_check[c] != 1 {
            continue;
        }
        let check = &ldpc.checks[c];
        let pos = check.iter().position(|&v| !known[v]).expect("one erased coordinate");
        edge_visits += pos + 1;
        let v = check[pos];
        let resolved = -check_sums.column(c);
        values.set_column(v, &resolved);
        known[v] = true;
        peel_steps += 1;
        for &c2 in &ldpc.variable_checks[v] {
            edge_visits += 1;
            erased_in_check[c2] -= 1;
            let mut sum = check_sums.column_mut(c2);
            sum += &resolved;
            if erased_in_check[c2] == 1 {
                queue.push_back(c2);
            }
        }
    }

    let residual_erasures = known.iter().filter(|&&k| !k).count();
    let sys = ldpc.code.systematic_positions().expect("derived code is systematic");
    let mut result = PeelingResult {
        codeword: None,
        message: None,
        residual_erasures,
        peel_steps,
        edge_visits,
        initial_erasures,
        used_fallback: false,
    };
    if residual_erasures == 0 {
        result.message = Some(values.select_columns(sys.iter()));
        result.codeword = Some(values);
    } else if fallback {
        if let Ok(message) = erasure_solve(&ldpc.code, pattern, coded) {
            result.codeword = Some(&message * ldpc.code.generator());
            result.message = Some(message);
            result.used_fallback = true;
        }
    }
    Ok(result)
}

/// Degree pair and accuracy for a density-evolution threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdQuery {
    pub variable_degree: usize,
    pub check_degree: usize,
    pub tolerance: f64,
}

impl ThresholdQuery {
    pub fn new(variable_degree: usize, check_degree: usize, tolerance: f64) -> Self {
        Self { variable_degree, check_degree, tolerance }
    }

    /// One step of the erasure density-evolution map.
    pub fn evolve(&self, erasure: f64, x: f64) -> f64 {
        let inner = 1.0 - (1.0 - x).powi(self.check_degree as i32 - 1);
        erasure * inner.powi(self.variable_degree as i32 - 1)
    }
}

const DE_MAX_ITERATIONS: usize = 10_000_000;
const DE_ZERO: f64 = 1e-12;

/// Peeling threshold `p*` of the regular ensemble: the largest erasure
/// probability for which density evolution started at `x = ε` is driven to
/// zero. Found by bisection on `ε` to within `query.tolerance`.
pub fn bec_threshold(query: ThresholdQuery) -> Result<f64> {
    if query.variable_degree < 2 || query.check_degree < 2 {
        return param("threshold needs degrees >= 2");
    }
    if !(query.tolerance > 0.0 && query.tolerance < 1.0) {
        return param("tolerance must lie in (0, 1)");
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > query.tolerance {
        let mid = 0.5 * (lo + hi);
        if density_evolution_converges(&query, mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Iterates the map from `x = ε`. The sequence is non-increasing, so it either
/// reaches zero or stalls at a positive fixed point.
pub fn density_evolution_converges(query: &ThresholdQuery, erasure: f64) -> bool {
    let mut x = erasure;
    for _ in 0..DE_MAX_ITERATIONS {
        if x < DE_ZERO {
            return true;
        }
        let next = query.evolve(erasure, x);
        if x - next <= 1e-15 * x {
            return false;
        }
        x = next;
    }
    false
}
