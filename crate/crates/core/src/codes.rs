//! Real-valued linear codes.
//!
//! A code is described by its `K × N` generator matrix `G`. Column `j` of `G`
//! is the encoding vector handed to worker `j` of a group; a set of received
//! columns `T` can be decoded whenever `G_T` has rank `K`. The minimum
//! distance `δ` of the code therefore fixes how many columns may be lost:
//! every set of `N − δ + 1` columns has full rank.
//!
//! All arithmetic is `f64`. A column set is treated as rank deficient when its
//! `K`-th singular value falls below [`RANK_TOLERANCE`] times the largest one.

use std::sync::OnceLock;

use itertools::Itertools;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// Relative singular-value cutoff separating rank-deficient column sets from
/// full-rank ones.
pub const RANK_TOLERANCE: f64 = 1e-9;

/// Largest block length for which [`LinearCode::min_distance`] will enumerate
/// column subsets.
pub const MIN_DISTANCE_MAX_N: usize = 20;

/// Largest block length for which constructors certify the MDS property.
pub const MDS_CERTIFY_MAX_N: usize = 12;

/// Backward-error bound accepted for overdetermined solves.
pub const SOLVE_TOLERANCE: f64 = 1e-8;

const MDS_RESAMPLE_LIMIT: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CodeKind {
    Gaussian,
    SystematicMds,
    Repetition,
    Vandermonde,
    LdpcDerived,
    Custom,
}

impl CodeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CodeKind::Gaussian => "gaussian",
            CodeKind::SystematicMds => "systematic-mds",
            CodeKind::Repetition => "repetition",
            CodeKind::Vandermonde => "vandermonde",
            CodeKind::LdpcDerived => "ldpc-derived",
            CodeKind::Custom => "custom",
        }
    }
}

/// An `[N, K]` linear code over the reals.
///
/// The minimum distance is computed lazily and cached; constructors that
/// know it by design (repetition, Vandermonde, certified MDS) fill it in up
/// front.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "CodeDocument", into = "CodeDocument")]
pub struct LinearCode {
    kind: CodeKind,
    generator: DMatrix<f64>,
    systematic_positions: Option<Vec<usize>>,
    min_distance: OnceLock<usize>,
}

impl LinearCode {
    /// Wraps a generator matrix, checking that it has full row rank and that
    /// any claimed systematic columns are exactly the identity.
    pub fn new(
        kind: CodeKind,
        generator: DMatrix<f64>,
        systematic_positions: Option<Vec<usize>>,
    ) -> Result<Self> {
        let (k, n) = generator.shape();
        if k == 0 || n == 0 || k > n {
            return param(format!("generator must be K x N with 1 <= K <= N, got {k} x {n}"));
        }
        if generator.iter().any(|v| !v.is_finite()) {
            return param("generator contains non-finite entries");
        }
        if let Some(pos) = &systematic_positions {
            if pos.len() != k {
                return param(format!("{} systematic positions given for K = {k}", pos.len()));
            }
            if pos.iter().any(|&p| p >= n) || !pos.iter().all_unique() {
                return param("systematic positions must be distinct column indices");
            }
            for (row, &col) in pos.iter().enumerate() {
                for r in 0..k {
                    let expect = if r == row { 1.0 } else { 0.0 };
                    if generator[(r, col)] != expect {
                        return param(format!("column {col} is not identity column {row}"));
                    }
                }
            }
        }
        // An identity column block already certifies rank K.
        if systematic_positions.is_none() {
            let rank = numerical_rank(&generator);
            if rank < k {
                return Err(Error::Construction(format!("generator has rank {rank} < K = {k}")));
            }
        }
        Ok(Self {
            kind,
            generator,
            systematic_positions,
            min_distance: OnceLock::new(),
        })
    }

    /// Records a known minimum distance, rejecting values above the Singleton
    /// bound.
    pub fn with_min_distance(self, delta: usize) -> Result<Self> {
        let bound = self.singleton_bound();
        if delta == 0 || delta > bound {
            return param(format!("minimum distance {delta} outside [1, {bound}]"));
        }
        match self.min_distance.get() {
            Some(&known) if known != delta => {
                return param(format!("minimum distance already known to be {known}"))
            }
            Some(_) => {}
            None => {
                let _ = self.min_distance.set(delta);
            }
        }
        Ok(self)
    }

    pub fn kind(&self) -> CodeKind {
        self.kind
    }

    /// Block length `N`.
    pub fn block_length(&self) -> usize {
        self.generator.ncols()
    }

    /// Dimension `K`.
    pub fn dimension(&self) -> usize {
        self.generator.nrows()
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    pub fn systematic_positions(&self) -> Option<&[usize]> {
        self.systematic_positions.as_deref()
    }

    pub fn singleton_bound(&self) -> usize {
        self.block_length() - self.dimension() + 1
    }

    /// The minimum distance if it has been computed or declared.
    pub fn known_min_distance(&self) -> Option<usize> {
        self.min_distance.get().copied()
    }

    /// Minimum Hamming weight of a nonzero codeword, found by enumerating
    /// column subsets: `δ = N − max{|S| : rank(G_S) < K}`.
    pub fn min_distance(&self) -> Result<usize> {
        if let Some(&d) = self.min_distance.get() {
            return Ok(d);
        }
        let n = self.block_length();
        if n > MIN_DISTANCE_MAX_N {
            return Err(Error::UnsupportedSize(format!(
                "minimum distance enumeration supports N <= {MIN_DISTANCE_MAX_N}, got {n}"
            )));
        }
        let d = brute_force_min_distance(&self.generator);
        let _ = self.min_distance.set(d);
        Ok(d)
    }

    /// `δ − 1`, the number of lost columns any decoder can survive.
    pub fn straggler_tolerance(&self) -> Result<usize> {
        Ok(self.min_distance()? - 1)
    }

    pub fn is_mds(&self) -> Result<bool> {
        Ok(self.min_distance()? == self.singleton_bound())
    }

    /// Columns of `G` at the given indices, in order.
    pub fn columns(&self, indices: &[usize]) -> DMatrix<f64> {
        self.generator.select_columns(indices.iter())
    }

    /// Encodes a message matrix with `K` columns: returns `message · G_T`
    /// for the requested columns.
    pub fn encode_columns(&self, message: &DMatrix<f64>, columns: &[usize]) -> Result<DMatrix<f64>> {
        if message.ncols() != self.dimension() {
            return param(format!(
                "message has {} columns, code dimension is {}",
                message.ncols(),
                self.dimension()
            ));
        }
        if columns.iter().any(|&c| c >= self.block_length()) {
            return param("column index out of range");
        }
        Ok(message * self.columns(columns))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("code document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parameter(format!("code JSON: {e}")))
    }
}

/// On-disk form of a [`LinearCode`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CodeDocument {
    pub kind: CodeKind,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub systematic_positions: Option<Vec<usize>>,
    /// Row-major.
    pub generator: Vec<Vec<f64>>,
}

impl From<LinearCode> for CodeDocument {
    fn from(code: LinearCode) -> Self {
        let g = &code.generator;
        CodeDocument {
            kind: code.kind,
            n: g.ncols(),
            k: g.nrows(),
            delta: code.known_min_distance(),
            systematic_positions: code.systematic_positions.clone(),
            generator: g.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }
}

impl TryFrom<CodeDocument> for LinearCode {
    type Error = Error;

    fn try_from(doc: CodeDocument) -> Result<Self> {
        if doc.generator.len() != doc.k || doc.generator.iter().any(|r| r.len() != doc.n) {
            return param(format!("generator rows do not match K = {}, N = {}", doc.k, doc.n));
        }
        let g = DMatrix::from_fn(doc.k, doc.n, |r, c| doc.generator[r][c]);
        let code = LinearCode::new(doc.kind, g, doc.systematic_positions)?;
        match doc.delta {
            Some(d) => code.with_min_distance(d),
            None => Ok(code),
        }
    }
}

/// A named code family with its parameters, or an explicit generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CodeSpec {
    SystematicMds {
        #[serde(rename = "N")]
        n: usize,
        #[serde(rename = "K")]
        k: usize,
        #[serde(default)]
        seed: u64,
    },
    Gaussian {
        #[serde(rename = "N")]
        n: usize,
        #[serde(rename = "K")]
        k: usize,
        #[serde(default)]
        seed: u64,
    },
    Repetition {
        #[serde(rename = "N")]
        n: usize,
    },
    Vandermonde {
        #[serde(rename = "N")]
        n: usize,
        #[serde(rename = "K")]
        k: usize,
    },
    Inline {
        code: CodeDocument,
    },
}

impl CodeSpec {
    pub fn build(&self) -> Result<LinearCode> {
        match self {
            CodeSpec::SystematicMds { n, k, seed } => make_systematic_mds(*n, *k, *seed),
            CodeSpec::Gaussian { n, k, seed } => make_gaussian_code(*n, *k, *seed),
            CodeSpec::Repetition { n } => make_repetition_code(*n),
            CodeSpec::Vandermonde { n, k } => make_vandermonde_code(*n, *k, None),
            CodeSpec::Inline { code } => LinearCode::try_from(code.clone()),
        }
    }
}

/// The set of columns (workers) whose outputs reached the decoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErasurePattern {
    received: Vec<usize>,
}

impl ErasurePattern {
    /// Builds a pattern from received column indices; they are sorted and
    /// must be distinct and below `block_length`.
    pub fn new(block_length: usize, received: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut received: Vec<usize> = received.into_iter().collect();
        received.sort_unstable();
        if received.windows(2).any(|w| w[0] == w[1]) {
            return param("received indices must be distinct");
        }
        if received.last().is_some_and(|&last| last >= block_length) {
            return param(format!("received index out of range for N = {block_length}"));
        }
        Ok(Self { received })
    }

    /// Everything except the listed erased columns.
    pub fn from_erasures(block_length: usize, erased: &[usize]) -> Result<Self> {
        if erased.iter().any(|&e| e >= block_length) {
            return param(format!("erased index out of range for N = {block_length}"));
        }
        Self::new(block_length, (0..block_length).filter(|j| !erased.contains(j)))
    }

    pub fn received(&self) -> &[usize] {
        &self.received
    }

    pub fn len(&self) -> usize {
        self.received.len()
    }

    pub fn is_empty(&self) -> bool {
        self.received.is_empty()
    }
}

pub fn make_gaussian_code(n: usize, k: usize, seed: u64) -> Result<LinearCode> {
    check_dims(n, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = gaussian_matrix(k, n, &mut rng);
    let code = LinearCode::new(CodeKind::Gaussian, g, None)?;
    if k == n {
        return code.with_min_distance(1);
    }
    Ok(code)
}

/// `G = [I_K | P]` with a standard-normal parity block. For `N` up to
/// [`MDS_CERTIFY_MAX_N`] every `K`-subset of columns is checked and `P` is
/// redrawn if any of them is (numerically) singular.
pub fn make_systematic_mds(n: usize, k: usize, seed: u64) -> Result<LinearCode> {
    check_dims(n, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..=MDS_RESAMPLE_LIMIT {
        let parity = gaussian_matrix(k, n - k, &mut rng);
        let mut g = DMatrix::zeros(k, n);
        g.view_mut((0, 0), (k, k)).fill_with_identity();
        g.view_mut((0, k), (k, n - k)).copy_from(&parity);
        let code = LinearCode::new(CodeKind::SystematicMds, g, Some((0..k).collect()))?;
        let delta = n - k + 1;
        if n > MDS_CERTIFY_MAX_N {
            return code.with_min_distance(delta);
        }
        if every_k_subset_full_rank(&code.generator) {
            return code.with_min_distance(delta);
        }
    }
    Err(Error::Construction(format!(
        "no MDS parity block found for [{n}, {k}] after {MDS_RESAMPLE_LIMIT} resamples"
    )))
}

pub fn make_repetition_code(n: usize) -> Result<LinearCode> {
    if n == 0 {
        return param("repetition code needs N >= 1");
    }
    LinearCode::new(CodeKind::Repetition, DMatrix::from_element(1, n, 1.0), Some(vec![0]))?
        .with_min_distance(n)
}

/// Vandermonde code with `G[i][j] = x_j^i`. `points` defaults to `0, 1, …, N−1`.
pub fn make_vandermonde_code(n: usize, k: usize, points: Option<&[f64]>) -> Result<LinearCode> {
    check_dims(n, k)?;
    let points: Vec<f64> = match points {
        Some(p) if p.len() != n => {
            return param(format!("{} evaluation points given for N = {n}", p.len()))
        }
        Some(p) => p.to_vec(),
        None => (0..n).map(|j| j as f64).collect(),
    };
    if points.iter().any(|p| !p.is_finite()) {
        return param("evaluation points must be finite");
    }
    for (a, b) in points.iter().tuple_combinations() {
        if a == b {
            return param(format!("duplicate evaluation point {a}"));
        }
    }
    let g = DMatrix::from_fn(k, n, |i, j| points[j].powi(i as i32));
    LinearCode::new(CodeKind::Vandermonde, g, None)?.with_min_distance(n - k + 1)
}

/// Recovers the `rows × K` message `M` from `M · G_T = coded`, where `T` is
/// the pattern's received set and `coded` has one column per received index.
///
/// A square system is solved by LU; extra received columns are used through
/// a QR least-squares solve whose residual must stay within
/// [`SOLVE_TOLERANCE`]. When every systematic column is present the message
/// is read off without solving.
pub fn erasure_solve(
    code: &LinearCode,
    pattern: &ErasurePattern,
    coded: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let received = pattern.received();
    if received.last().is_some_and(|&j| j >= code.block_length()) {
        return param("pattern does not fit this code");
    }
    if coded.ncols() != received.len() {
        return param(format!(
            "coded matrix has {} columns for {} received indices",
            coded.ncols(),
            received.len()
        ));
    }
    let k = code.dimension();
    if let Some(sys) = code.systematic_positions() {
        let located: Option<Vec<usize>> =
            sys.iter().map(|s| received.binary_search(s).ok()).collect();
        if let Some(cols) = located {
            return Ok(coded.select_columns(cols.iter()));
        }
    }
    let g_t = code.columns(received);
    let rank = numerical_rank(&g_t);
    if rank < k {
        return Err(Error::UnrecoverableErasure { rank, needed: k });
    }
    solve_message(&g_t, coded)
}

/// Solves `X · A = B` for `X`, with `A` of full row rank (`r × c`, `c ≥ r`).
pub(crate) fn solve_message(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let at = a.transpose();
    let bt = b.transpose();
    let xt = if a.is_square() {
        at.lu()
            .solve(&bt)
            .ok_or(Error::UnrecoverableErasure { rank: numerical_rank(a), needed: a.nrows() })?
    } else {
        let qr = at.clone().qr();
        let q = qr.q();
        let r = qr.r();
        let rhs = q.transpose() * &bt;
        let xt = r
            .solve_upper_triangular(&rhs)
            .ok_or(Error::UnrecoverableErasure { rank: numerical_rank(a), needed: a.nrows() })?;
        let residual = (&at * &xt - &bt).norm();
        let scale = at.norm() * xt.norm() + bt.norm();
        if scale > 0.0 && residual > SOLVE_TOLERANCE * scale {
            return Err(Error::InconsistentSystem(residual / scale));
        }
        xt
    };
    Ok(xt.transpose())
}

/// 2-norm condition number `σ_max / σ_min`, infinite when `σ_min` is zero to
/// machine precision.
pub fn condition_number(matrix: &DMatrix<f64>) -> Result<f64> {
    if matrix.is_empty() {
        return param("condition number of an empty matrix");
    }
    let sv = matrix.singular_values();
    let max = sv.max();
    let min = sv.min();
    if max == 0.0 || min <= max * f64::EPSILON {
        return Ok(f64::INFINITY);
    }
    Ok(max / min)
}

/// Number of singular values at or above `RANK_TOLERANCE · σ_max`.
pub fn numerical_rank(matrix: &DMatrix<f64>) -> usize {
    if matrix.is_empty() {
        return 0;
    }
    let sv = matrix.singular_values();
    let max = sv.max();
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s >= RANK_TOLERANCE * max).count()
}

fn check_dims(n: usize, k: usize) -> Result<()> {
    if k == 0 || k > n {
        return param(format!("need 1 <= K <= N, got N = {n}, K = {k}"));
    }
    Ok(())
}

pub(crate) fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    // Row-major draw order so the stream maps onto the matrix as written.
    let values: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    DMatrix::from_row_slice(rows, cols, &values)
}

fn every_k_subset_full_rank(g: &DMatrix<f64>) -> bool {
    let (k, n) = g.shape();
    (0..n)
        .combinations(k)
        .all(|cols| numerical_rank(&g.select_columns(cols.iter())) == k)
}

fn brute_force_min_distance(g: &DMatrix<f64>) -> usize {
    let (k, n) = g.shape();
    if every_k_subset_full_rank(g) {
        return n - k + 1;
    }
    // Some K-subset is deficient; find the largest deficient subset.
    for size in (k..n).rev() {
        let deficient = (0..n)
            .combinations(size)
            .any(|cols| numerical_rank(&g.select_columns(cols.iter())) < k);
        if deficient {
            return n - size;
        }
    }
    unreachable!("a deficient K-subset exists")
}
