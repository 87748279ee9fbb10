//! Fractional-repetition gradient coding.
//!
//! `n` workers are split into `p = n / N` groups of `N`. Every worker of group
//! `i` holds the same `l = kN / n` datasets and therefore the same group
//! gradient `g⁽ⁱ⁾`. Worker `j` of the group sends `g⁽ⁱ⁾_mat · G_j`, a vector of
//! length `⌈d/K⌉`, where `g⁽ⁱ⁾_mat` is the zero-padded gradient folded
//! column-major into `⌈d/K⌉ × K`. Any `N − δ + 1` chunks of a group determine
//! `g⁽ⁱ⁾_mat`, so the scheme achieves `(l, m, s) = (kN/n, K, δ − 1)`.
//!
//! Worker, group and dataset indices are 0-based.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::codes::{numerical_rank, solve_message, ErasurePattern, LinearCode};
use crate::error::{param, Error, Result};
use crate::ldpc::{peel_decode, LdpcCode};

/// Smallest computation load compatible with the given saving and straggler
/// tolerance: `⌈k(s + m)/n⌉`.
pub fn lower_bound_load(n: usize, k: usize, s: usize, m: usize) -> Result<usize> {
    if k == 0 || m == 0 {
        return param("need k >= 1 and m >= 1");
    }
    if s + m > n {
        return param(format!("s + m = {} exceeds n = {n}", s + m));
    }
    Ok((k * (s + m)).div_ceil(n))
}

/// Load, communication saving and straggler tolerance of a scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub load: usize,
    pub saving: usize,
    pub stragglers: usize,
    /// `load` meets the lower bound for `(saving, stragglers)`.
    pub optimal: bool,
}

impl std::fmt::Display for Triple {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(l={}, m={}, s={})", self.load, self.saving, self.stragglers)
    }
}

fn check_divisibility(n: usize, k: usize, group_size: usize) -> Result<()> {
    if n == 0 || k == 0 || group_size == 0 {
        return param("n, k and N must be positive");
    }
    if !n.is_multiple_of(group_size) {
        return param(format!("group size N = {group_size} does not divide n = {n}"));
    }
    if !(k * group_size).is_multiple_of(n) {
        return param(format!("n = {n} does not divide k * N = {}", k * group_size));
    }
    Ok(())
}

/// The triple achieved by fractional-repetition coding with `code`:
/// `(kN/n, K, δ − 1)`.
pub fn achieved_triple(n: usize, k: usize, code: &LinearCode) -> Result<Triple> {
    let group_size = code.block_length();
    check_divisibility(n, k, group_size)?;
    let load = k * group_size / n;
    let saving = code.dimension();
    let stragglers = code.min_distance()? - 1;
    let optimal = lower_bound_load(n, k, stragglers, saving)? == load;
    Ok(Triple { load, saving, stragglers, optimal })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlacementScheme {
    FractionalRepetition,
    Cyclic,
}

/// Which datasets each worker holds, and how workers are grouped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementPlan {
    pub n: usize,
    pub k: usize,
    #[serde(rename = "N")]
    pub group_size: usize,
    pub l: usize,
    pub scheme: PlacementScheme,
    pub groups: Vec<Vec<usize>>,
    pub assignment: Vec<Vec<usize>>,
}

impl PlacementPlan {
    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    /// `(group, index within group)` of a worker.
    pub fn locate(&self, worker: usize) -> Result<(usize, usize)> {
        if worker >= self.n {
            return param(format!("worker {worker} out of range for n = {}", self.n));
        }
        Ok((worker / self.group_size, worker % self.group_size))
    }

    /// Datasets shared by every worker of `group`.
    pub fn group_datasets(&self, group: usize) -> Result<&[usize]> {
        if self.scheme != PlacementScheme::FractionalRepetition {
            return param("group datasets are defined for fractional-repetition plans");
        }
        let workers = self
            .groups
            .get(group)
            .ok_or_else(|| Error::Parameter(format!("group {group} out of range")))?;
        Ok(&self.assignment[workers[0]])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

pub fn fractional_repetition_placement(n: usize, k: usize, group_size: usize) -> Result<PlacementPlan> {
    check_divisibility(n, k, group_size)?;
    let l = k * group_size / n;
    let p = n / group_size;
    let groups: Vec<Vec<usize>> =
        (0..p).map(|i| (i * group_size..(i + 1) * group_size).collect()).collect();
    let assignment = (0..n)
        .map(|w| {
            let i = w / group_size;
            (i * l..(i + 1) * l).collect()
        })
        .collect();
    Ok(PlacementPlan {
        n,
        k,
        group_size,
        l,
        scheme: PlacementScheme::FractionalRepetition,
        groups,
        assignment,
    })
}

/// Worker `i` holds datasets `i, i+1, …, i+l−1` modulo `n` (`k = n`).
pub fn cyclic_placement(n: usize, l: usize) -> Result<PlacementPlan> {
    if n == 0 || l == 0 || l > n {
        return param(format!("need 1 <= l <= n, got n = {n}, l = {l}"));
    }
    Ok(PlacementPlan {
        n,
        k: n,
        group_size: n,
        l,
        scheme: PlacementScheme::Cyclic,
        groups: vec![(0..n).collect()],
        assignment: (0..n).map(|i| (0..l).map(|o| (i + o) % n).collect()).collect(),
    })
}

/// Partial gradients `g_1 … g_k`, all of length `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBatch {
    dim: usize,
    partials: Vec<DVector<f64>>,
}

impl GradientBatch {
    pub fn new(partials: Vec<DVector<f64>>) -> Result<Self> {
        let dim = partials.first().map_or(0, |g| g.len());
        if dim == 0 {
            return param("batch needs at least one non-empty partial gradient");
        }
        if partials.iter().any(|g| g.len() != dim) {
            return param("partial gradients differ in length");
        }
        Ok(Self { dim, partials })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.partials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partials.is_empty()
    }

    pub fn partials(&self) -> &[DVector<f64>] {
        &self.partials
    }

    /// `Σ_j g_j`.
    pub fn total(&self) -> DVector<f64> {
        self.partials.iter().fold(DVector::zeros(self.dim), |acc, g| acc + g)
    }
}

/// `g⁽ⁱ⁾ = Σ_{u ∈ D⁽ⁱ⁾} g_u`.
pub fn group_gradient(plan: &PlacementPlan, batch: &GradientBatch, group: usize) -> Result<DVector<f64>> {
    if batch.len() != plan.k {
        return param(format!("batch has {} partial gradients, plan has k = {}", batch.len(), plan.k));
    }
    let datasets = plan.group_datasets(group)?;
    Ok(datasets.iter().fold(DVector::zeros(batch.dim()), |acc, &u| acc + &batch.partials[u]))
}

/// Payload length `⌈d/K⌉`.
pub fn payload_len(d: usize, k: usize) -> usize {
    d.div_ceil(k)
}

/// Folds `v` column-major into a `⌈d/K⌉ × K` matrix after zero-padding it to
/// `K⌈d/K⌉` entries.
pub fn matricize(v: &DVector<f64>, k: usize) -> Result<DMatrix<f64>> {
    if k == 0 || v.is_empty() {
        return param("matricize needs K >= 1 and a non-empty vector");
    }
    let rows = payload_len(v.len(), k);
    let mut padded = v.as_slice().to_vec();
    padded.resize(rows * k, 0.0);
    Ok(DMatrix::from_column_slice(rows, k, &padded))
}

/// Inverse of [`matricize`]: unfolds column-major and drops the padding.
pub fn devectorize(m: &DMatrix<f64>, d: usize) -> Result<DVector<f64>> {
    if d == 0 || payload_len(d, m.ncols()) != m.nrows() {
        return param(format!(
            "a {} x {} matrix does not hold a length-{d} vector",
            m.nrows(),
            m.ncols()
        ));
    }
    Ok(DVector::from_column_slice(&m.as_slice()[..d]))
}

/// One worker's transmission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodedChunk {
    pub group: usize,
    /// Position of the worker inside its group, i.e. the code column.
    pub index: usize,
    pub payload: DVector<f64>,
}

fn check_code_fits(plan: &PlacementPlan, code: &LinearCode) -> Result<()> {
    if plan.scheme != PlacementScheme::FractionalRepetition {
        return param("coded encoding needs a fractional-repetition plan");
    }
    if code.block_length() != plan.group_size {
        return param(format!(
            "code block length {} differs from group size {}",
            code.block_length(),
            plan.group_size
        ));
    }
    Ok(())
}

/// `g⁽ⁱ⁾_mat · G_j` for the worker's group `i` and in-group index `j`.
pub fn encode_worker(
    plan: &PlacementPlan,
    code: &LinearCode,
    batch: &GradientBatch,
    worker: usize,
) -> Result<CodedChunk> {
    check_code_fits(plan, code)?;
    let (group, index) = plan.locate(worker)?;
    let mat = matricize(&group_gradient(plan, batch, group)?, code.dimension())?;
    Ok(CodedChunk { group, index, payload: mat * code.generator().column(index) })
}

/// Chunks for every worker of one group, sharing the group gradient.
pub fn encode_group(
    plan: &PlacementPlan,
    code: &LinearCode,
    batch: &GradientBatch,
    group: usize,
) -> Result<Vec<CodedChunk>> {
    check_code_fits(plan, code)?;
    let mat = matricize(&group_gradient(plan, batch, group)?, code.dimension())?;
    let coded = &mat * code.generator();
    Ok((0..code.block_length())
        .map(|index| CodedChunk { group, index, payload: coded.column(index).into_owned() })
        .collect())
}

/// Work done decoding one group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCost {
    pub group: usize,
    pub chunks_used: usize,
    /// Number of unknown message columns that had to be solved for.
    pub solve_dimension: usize,
    /// Estimated multiply-adds: back-substitution of known columns plus the
    /// factorization and triangular solves.
    pub multiply_adds: u64,
}

/// Decode cost summed over groups.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeCost {
    pub groups: Vec<GroupCost>,
}

impl DecodeCost {
    pub fn groups_decoded(&self) -> usize {
        self.groups.len()
    }

    pub fn max_solve_dimension(&self) -> usize {
        self.groups.iter().map(|g| g.solve_dimension).max().unwrap_or(0)
    }

    pub fn total_multiply_adds(&self) -> u64 {
        self.groups.iter().map(|g| g.multiply_adds).sum()
    }
}

fn solve_cost(rows: usize, unknowns: usize, equations: usize) -> u64 {
    let (r, u, e) = (rows as u64, unknowns as u64, equations as u64);
    if u == e {
        u * u * u / 3 + r * u * u
    } else {
        e * u * u + r * e * u + r * u * u
    }
}

/// Recovers the group gradient (length `d`) from whichever chunks of `group`
/// arrived.
///
/// With a systematic code, message columns whose systematic worker reported
/// are copied straight from its payload; only the missing ones are solved
/// for, against the received non-systematic chunks. Otherwise the full
/// `K`-column system is solved. Extra chunks enter a least-squares solve.
pub fn decode_group(
    code: &LinearCode,
    group: usize,
    chunks: &[CodedChunk],
    d: usize,
) -> Result<(DVector<f64>, GroupCost)> {
    let k = code.dimension();
    let rows = payload_len(d, k);
    let mut chunks: Vec<&CodedChunk> = chunks.iter().collect();
    chunks.sort_by_key(|c| c.index);
    if chunks.windows(2).any(|w| w[0].index == w[1].index) {
        return param("duplicate chunk index");
    }
    for c in &chunks {
        if c.group != group {
            return param(format!("chunk from group {} passed to group {group}", c.group));
        }
        if c.index >= code.block_length() {
            return param(format!("chunk index {} outside block length", c.index));
        }
        if c.payload.len() != rows {
            return param(format!("payload length {} != {rows}", c.payload.len()));
        }
    }
    let received: Vec<usize> = chunks.iter().map(|c| c.index).collect();
    let coded = DMatrix::from_columns(&chunks.iter().map(|c| c.payload.clone()).collect::<Vec<_>>());
    let unrecoverable = |rank| Error::UnrecoverableGroup {
        group,
        received: received.len(),
        rank,
        needed: k,
    };

    let (message, solve_dimension, multiply_adds) = match code.systematic_positions() {
        Some(sys) => {
            let mut message = DMatrix::zeros(rows, k);
            let mut missing = Vec::new();
            for (i, s) in sys.iter().enumerate() {
                match received.binary_search(s) {
                    Ok(pos) => message.set_column(i, &coded.column(pos)),
                    Err(_) => missing.push(i),
                }
            }
            if missing.is_empty() {
                (message, 0, 0)
            } else {
                let parity: Vec<usize> =
                    (0..received.len()).filter(|&pos| !sys.contains(&received[pos])).collect();
                let parity_cols: Vec<usize> = parity.iter().map(|&pos| received[pos]).collect();
                let g = code.generator();
                let a = g.select_columns(parity_cols.iter()).select_rows(missing.iter());
                let rank = numerical_rank(&a);
                if parity.len() < missing.len() || rank < missing.len() {
                    return Err(unrecoverable(k - missing.len() + rank.min(missing.len())));
                }
                // Residual of each parity chunk after removing the known columns.
                let mut residual = coded.select_columns(parity.iter());
                let known: Vec<usize> = (0..k).filter(|i| !missing.contains(i)).collect();
                if !known.is_empty() {
                    let g_known = g.select_columns(parity_cols.iter()).select_rows(known.iter());
                    residual -= message.select_columns(known.iter()) * g_known;
                }
                let solved = solve_message(&a, &residual).map_err(|_| unrecoverable(rank))?;
                for (col, &i) in missing.iter().enumerate() {
                    message.set_column(i, &solved.column(col));
                }
                let u = missing.len();
                let cost = (rows * parity.len() * known.len()) as u64 + solve_cost(rows, u, parity.len());
                (message, u, cost)
            }
        }
        None => {
            let g_t = code.columns(&received);
            let rank = numerical_rank(&g_t);
            if rank < k {
                return Err(unrecoverable(rank));
            }
            let message = solve_message(&g_t, &coded).map_err(|_| unrecoverable(rank))?;
            (message, k, solve_cost(rows, k, received.len()))
        }
    };
    let gradient = devectorize(&message, d)?;
    Ok((
        gradient,
        GroupCost { group, chunks_used: received.len(), solve_dimension, multiply_adds },
    ))
}

/// Decodes one group of an LDPC-coded plan with the peeling decoder. Chunks
/// are indexed by code column as usual.
pub fn decode_group_peeling(
    ldpc: &LdpcCode,
    group: usize,
    chunks: &[CodedChunk],
    d: usize,
) -> Result<(DVector<f64>, GroupCost)> {
    let k = ldpc.dimension();
    let rows = payload_len(d, k);
    if chunks.iter().any(|c| c.group != group || c.payload.len() != rows) {
        return param("chunk group or payload length mismatch");
    }
    let pattern = ErasurePattern::new(ldpc.block_length(), chunks.iter().map(|c| c.index))?;
    let mut ordered: Vec<&CodedChunk> = chunks.iter().collect();
    ordered.sort_by_key(|c| c.index);
    let coded =
        DMatrix::from_columns(&ordered.iter().map(|c| c.payload.clone()).collect::<Vec<_>>());
    let result = peel_decode(ldpc, &pattern, &coded)?;
    let message = result.message.ok_or(Error::UnrecoverableGroup {
        group,
        received: chunks.len(),
        rank: k.saturating_sub(result.residual_erasures),
        needed: k,
    })?;
    Ok((
        devectorize(&message, d)?,
        GroupCost {
            group,
            chunks_used: chunks.len(),
            solve_dimension: 0,
            multiply_adds: (result.edge_visits * rows) as u64,
        },
    ))
}

/// `g = Σ_i g⁽ⁱ⁾`; expects exactly one vector per group.
pub fn aggregate(group_gradients: &[DVector<f64>], group_count: usize) -> Result<DVector<f64>> {
    if group_gradients.len() != group_count {
        return param(format!(
            "{} group gradients for {group_count} groups",
            group_gradients.len()
        ));
    }
    let d = group_gradients.first().map_or(0, |g| g.len());
    if d == 0 || group_gradients.iter().any(|g| g.len() != d) {
        return param("group gradients must share a non-zero length");
    }
    Ok(group_gradients.iter().fold(DVector::zeros(d), |acc, g| acc + g))
}

/// Decodes every group from the chunks that arrived and sums the results.
pub fn decode_all(
    plan: &PlacementPlan,
    code: &LinearCode,
    chunks: &[CodedChunk],
    d: usize,
) -> Result<(DVector<f64>, DecodeCost)> {
    check_code_fits(plan, code)?;
    let mut gradients = Vec::with_capacity(plan.group_count());
    let mut cost = DecodeCost::default();
    for group in 0..plan.group_count() {
        let mine: Vec<CodedChunk> = chunks.iter().filter(|c| c.group == group).cloned().collect();
        let (g, c) = decode_group(code, group, &mine, d)?;
        gradients.push(g);
        cost.groups.push(c);
    }
    Ok((aggregate(&gradients, plan.group_count())?, cost))
}
