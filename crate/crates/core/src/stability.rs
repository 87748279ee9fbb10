//! Straggler tolerance under a condition-number budget.
//!
//! For a Gaussian `[m+s, m]` generator, waiting for `t` workers per group is
//! safe when every `m × t` column submatrix has condition number at most
//! `κ`. A union bound over the `C(m+s, t)` submatrices combined with a tail
//! bound on Gaussian condition numbers gives
//!
//! ```text
//! f(t) = C(m+s, t) / √(2π) · (C·t / (κ(t − m + 1)))^(t − m + 1)
//! ```
//!
//! as an upper bound on the probability that some submatrix exceeds `κ`.
//! The smallest `t* ∈ [m, m+s]` with `f(t*) ≤ ε` yields the tolerance
//! `s_κ = s + m − t*`. The same calculus applied to an `(n−s) × n` Gaussian
//! matrix (substitute `m + s → n`, `m → n − s`) gives the baseline
//! tolerance of the cyclic scheme.

use itertools::Itertools;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::codes::{condition_number, gaussian_matrix, make_gaussian_code, LinearCode};
use crate::error::{param, Error, Result};

/// Universal constant of the Gaussian condition-number tail bound.
pub const TAIL_CONSTANT: f64 = 6.414;

/// Subset count up to which [`empirical_group_stability`] enumerates every
/// column subset instead of sampling.
pub const EXHAUSTIVE_SUBSET_LIMIT: usize = 100_000;

fn ln_binomial(n: usize, k: usize) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Parameters of a threshold computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityQuery {
    pub s: usize,
    pub m: usize,
    pub kappa: f64,
    pub epsilon: f64,
    pub constant: f64,
}

impl StabilityQuery {
    pub fn new(s: usize, m: usize, kappa: f64, epsilon: f64) -> Self {
        Self { s, m, kappa, epsilon, constant: TAIL_CONSTANT }
    }

    pub fn with_constant(mut self, constant: f64) -> Self {
        self.constant = constant;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return param("m must be at least 1");
        }
        if !(self.kappa > 0.0) {
            return param("kappa must be positive");
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return param(format!("epsilon {} outside (0, 1)", self.epsilon));
        }
        if !(self.constant > 0.0) {
            return param("tail constant must be positive");
        }
        Ok(())
    }

    /// `ln f(t)`.
    pub fn ln_f(&self, t: usize) -> Result<f64> {
        let (s, m) = (self.s, self.m);
        if m == 0 || t < m || t > m + s {
            return param(format!("t = {t} outside [m, m + s] = [{m}, {}]", m + s));
        }
        if !(self.kappa > 0.0) {
            return param("kappa must be positive");
        }
        let e = (t - m + 1) as f64;
        let base = self.constant * t as f64 / (self.kappa * e);
        Ok(-0.5 * (2.0 * std::f64::consts::PI).ln() + ln_binomial(m + s, t) + e * base.ln())
    }

    pub fn f(&self, t: usize) -> Result<f64> {
        self.ln_f(t).map(f64::exp)
    }

    /// Smallest admissible `κ` (exclusive) for this `(s, m, ε)`.
    pub fn kappa_min(&self) -> Result<f64> {
        let (s, m) = (self.s as f64, self.m as f64);
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return param(format!("epsilon {} outside (0, 1)", self.epsilon));
        }
        let root = (1.0 / (self.epsilon * (2.0 * std::f64::consts::PI).sqrt())).powf(1.0 / (s + 1.0));
        let first = root * self.constant * (m + s) / (s + 1.0);
        let second = self.constant * s / 2.0;
        Ok(first.max(second))
    }

    /// Scans `t = m, …, m+s` for the first `f(t) ≤ ε`.
    pub fn report(&self) -> Result<StabilityReport> {
        self.validate()?;
        let minimum = self.kappa_min()?;
        if self.kappa <= minimum {
            return Err(Error::InadmissibleKappa { kappa: self.kappa, minimum });
        }
        let mut f_curve = Vec::with_capacity(self.s + 1);
        let mut t_star = None;
        for t in self.m..=self.m + self.s {
            let f = self.f(t)?;
            f_curve.push((t, f));
            if t_star.is_none() && f <= self.epsilon {
                t_star = Some(t);
            }
        }
        let t_star = t_star.ok_or_else(|| {
            Error::Invariant(format!("no t in [m, m+s] with f(t) <= epsilon for {self:?}"))
        })?;
        Ok(StabilityReport {
            query: *self,
            t_star,
            s_kappa: self.s + self.m - t_star,
            f_curve,
        })
    }
}

/// Result of a threshold scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub query: StabilityQuery,
    pub t_star: usize,
    pub s_kappa: usize,
    /// `(t, f(t))` for every scanned `t`.
    pub f_curve: Vec<(usize, f64)>,
}

/// `f(t)` with the default tail constant.
pub fn f_value(s: usize, m: usize, kappa: f64, t: usize) -> Result<f64> {
    StabilityQuery::new(s, m, kappa, 0.5).f(t)
}

/// Right-hand side of the admissibility condition on `κ`.
pub fn kappa_min(s: usize, m: usize, epsilon: f64) -> Result<f64> {
    StabilityQuery::new(s, m, f64::INFINITY, epsilon).kappa_min()
}

pub fn straggler_threshold_kappa(s: usize, m: usize, kappa: f64, epsilon: f64) -> Result<StabilityReport> {
    StabilityQuery::new(s, m, kappa, epsilon).report()
}

/// Baseline tolerance `n − t*` of an `(n−s) × n` Gaussian encoder.
pub fn ye_abbe_threshold(n: usize, s: usize, kappa: f64, epsilon: f64) -> Result<usize> {
    ye_abbe_report(n, s, StabilityQuery::new(s, 0, kappa, epsilon)).map(|r| r.s_kappa)
}

fn ye_abbe_report(n: usize, s: usize, base: StabilityQuery) -> Result<StabilityReport> {
    if s >= n {
        return param(format!("need s < n, got s = {s}, n = {n}"));
    }
    StabilityQuery { s, m: n - s, ..base }.report()
}

/// One `(n, s, m)` input of a threshold comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableInput {
    pub n: usize,
    pub s: usize,
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub n: usize,
    pub s: usize,
    pub m: usize,
    pub s_kappa_ya: Option<usize>,
    pub s_kappa: Option<usize>,
    /// Why a threshold is missing.
    pub warnings: Vec<String>,
    pub f_curve: Vec<(usize, f64)>,
    pub f_curve_ya: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityTable {
    pub kappa: f64,
    pub epsilon: f64,
    pub constant: f64,
    pub rows: Vec<TableRow>,
}

impl StabilityTable {
    /// CSV with header `n,s,m,s_kappa_YA,s_kappa`; missing thresholds are
    /// written as `NA`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["n", "s", "m", "s_kappa_YA", "s_kappa"]).expect("in-memory write");
        let cell = |v: Option<usize>| v.map_or_else(|| "NA".to_string(), |v| v.to_string());
        for r in &self.rows {
            w.write_record([
                r.n.to_string(),
                r.s.to_string(),
                r.m.to_string(),
                cell(r.s_kappa_ya),
                cell(r.s_kappa),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }
}

/// Both thresholds for every input row. Rows where `κ` is inadmissible for
/// either scheme keep the other threshold and carry a warning.
pub fn stability_table(rows: &[TableInput], kappa: f64, epsilon: f64) -> StabilityTable {
    stability_table_with(rows, kappa, epsilon, TAIL_CONSTANT)
}

pub fn stability_table_with(
    rows: &[TableInput],
    kappa: f64,
    epsilon: f64,
    constant: f64,
) -> StabilityTable {
    let rows = rows
        .iter()
        .map(|&TableInput { n, s, m }| {
            let base = StabilityQuery::new(s, m, kappa, epsilon).with_constant(constant);
            let mut warnings = Vec::new();
            let ours = if s + m > n {
                Err(Error::Parameter(format!("s + m = {} exceeds n = {n}", s + m)))
            } else {
                base.report()
            };
            let theirs = ye_abbe_report(n, s, base);
            let mut keep = |label: &str, r: Result<StabilityReport>| match r {
                Ok(r) => Some(r),
                Err(e) => {
                    warnings.push(format!("{label}: {e}"));
                    None
                }
            };
            let ya = keep("s_kappa_YA", theirs);
            let ours = keep("s_kappa", ours);
            TableRow {
                n,
                s,
                m,
                s_kappa_ya: ya.as_ref().map(|r| r.s_kappa),
                s_kappa: ours.as_ref().map(|r| r.s_kappa),
                warnings,
                f_curve: ours.map(|r| r.f_curve).unwrap_or_default(),
                f_curve_ya: ya.map(|r| r.f_curve).unwrap_or_default(),
            }
        })
        .collect();
    StabilityTable { kappa, epsilon, constant, rows }
}

/// Empirical tail of the normalized condition number at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailPoint {
    pub x: f64,
    /// Fraction of trials with `cond(M) / (v / (|v − u| + 1)) > x`.
    pub frequency: f64,
    pub standard_error: f64,
    /// `√(2π) (C/x)^(|v − u| + 1)`.
    pub bound: f64,
}

/// Monte-Carlo estimate of the condition-number tail of `u × v` standard
/// Gaussian matrices, next to its analytic bound.
pub fn empirical_condition_tail(
    u: usize,
    v: usize,
    x_values: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<TailPoint>> {
    if u < 2 || v < 2 {
        return param("tail bound needs u, v >= 2");
    }
    if trials == 0 {
        return param("need at least one trial");
    }
    let gap = u.abs_diff(v) + 1;
    if let Some(x) = x_values.iter().find(|&&x| !(x >= gap as f64)) {
        return param(format!("x = {x} below the bound's validity range x >= {gap}"));
    }
    let scale = v as f64 / gap as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normalized: Vec<f64> = (0..trials)
        .map(|_| condition_number(&gaussian_matrix(u, v, &mut rng)).map(|c| c / scale))
        .collect::<Result<_>>()?;
    Ok(x_values
        .iter()
        .map(|&x| {
            let hits = normalized.iter().filter(|&&c| c > x).count();
            let frequency = hits as f64 / trials as f64;
            TailPoint {
                x,
                frequency,
                standard_error: (frequency * (1.0 - frequency) / trials as f64).sqrt(),
                bound: (2.0 * std::f64::consts::PI).sqrt() * (TAIL_CONSTANT / x).powi(gap as i32),
            }
        })
        .collect())
}

/// Condition numbers of the size-`t` column submatrices of one code.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsetStability {
    pub subsets_checked: usize,
    pub compliant: usize,
    pub exhaustive: bool,
    pub max_condition: f64,
}

impl SubsetStability {
    pub fn compliant_fraction(&self) -> f64 {
        self.compliant as f64 / self.subsets_checked as f64
    }
}

/// Measures `cond(G_T)` over every `t`-subset `T` when there are at most
/// [`EXHAUSTIVE_SUBSET_LIMIT`] of them, otherwise over `samples` random ones.
pub fn empirical_group_stability(
    code: &LinearCode,
    t: usize,
    kappa: f64,
    samples: usize,
    seed: u64,
) -> Result<SubsetStability> {
    let (k, n) = (code.dimension(), code.block_length());
    if t < k || t > n {
        return param(format!("t = {t} outside [K, N] = [{k}, {n}]"));
    }
    let total = ln_binomial(n, t).exp().round();
    let exhaustive = total <= EXHAUSTIVE_SUBSET_LIMIT as f64;
    let subsets: Vec<Vec<usize>> = if exhaustive {
        (0..n).combinations(t).collect()
    } else {
        if samples == 0 {
            return param("need at least one sampled subset");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..samples)
            .map(|_| {
                let mut s = sample(&mut rng, n, t).into_vec();
                s.sort_unstable();
                s
            })
            .collect()
    };
    let mut compliant = 0;
    let mut max_condition: f64 = 0.0;
    for cols in &subsets {
        let c = condition_number(&code.columns(cols))?;
        if c <= kappa {
            compliant += 1;
        }
        max_condition = max_condition.max(c);
    }
    Ok(SubsetStability { subsets_checked: subsets.len(), compliant, exhaustive, max_condition })
}

/// Over freshly drawn `[m+s, m]` Gaussian codes, how often the worst `t`-subset
/// exceeds `κ`, next to the union-bound estimate `f(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnionBoundCheck {
    pub codes: usize,
    pub exceeded: usize,
    pub bound: f64,
}

impl UnionBoundCheck {
    pub fn frequency(&self) -> f64 {
        self.exceeded as f64 / self.codes as f64
    }
}

pub fn resampled_union_bound(
    s: usize,
    m: usize,
    t: usize,
    kappa: f64,
    codes: usize,
    seed: u64,
) -> Result<UnionBoundCheck> {
    let bound = f_value(s, m, kappa, t)?;
    if codes == 0 {
        return param("need at least one code");
    }
    if ln_binomial(m + s, t) > (EXHAUSTIVE_SUBSET_LIMIT as f64).ln() {
        return param("union-bound check needs exhaustive subsets");
    }
    let mut exceeded = 0;
    for i in 0..codes {
        let code = make_gaussian_code(m + s, m, seed.wrapping_add(i as u64))?;
        let stats = empirical_group_stability(&code, t, kappa, 0, 0)?;
        if stats.max_condition > kappa {
            exceeded += 1;
        }
    }
    Ok(UnionBoundCheck { codes, exceeded, bound })
}

/// Inputs of the published comparison table.
pub const REFERENCE_TABLE_INPUTS: [TableInput; 12] = [
    TableInput { n: 60, s: 3, m: 2 },
    TableInput { n: 60, s: 8, m: 2 },
    TableInput { n: 60, s: 13, m: 2 },
    TableInput { n: 60, s: 3, m: 12 },
    TableInput { n: 60, s: 8, m: 12 },
    TableInput { n: 60, s: 13, m: 12 },
    TableInput { n: 1000, s: 40, m: 10 },
    TableInput { n: 1000, s: 90, m: 10 },
    TableInput { n: 1000, s: 190, m: 10 },
    TableInput { n: 1000, s: 40, m: 210 },
    TableInput { n: 1000, s: 90, m: 210 },
    TableInput { n: 1000, s: 190, m: 210 },
];

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Direct evaluation with an explicit product for the binomial.
    fn naive_f(s: usize, m: usize, kappa: f64, t: usize) -> f64 {
        let n = m + s;
        let binom: f64 = (0..t).map(|i| (n - i) as f64 / (i + 1) as f64).product();
        let e = (t - m + 1) as i32;
        binom / (2.0 * std::f64::consts::PI).sqrt()
            * (TAIL_CONSTANT * t as f64 / (kappa * e as f64)).powi(e)
    }

    #[test]
    fn f_values() {
        assert_relative_eq!(f_value(3, 2, 1000.0, 3).unwrap(), 3.693e-4, epsilon = 1e-6);
        let at_m = f_value(3, 2, 1000.0, 2).unwrap();
        assert_relative_eq!(at_m, 5.117e-2, epsilon = 1e-4);
        assert!(at_m > 1e-3);
        let (m, kappa) = (4, 250.0);
        let closed = TAIL_CONSTANT * m as f64 / kappa / (2.0 * std::f64::consts::PI).sqrt();
        assert_relative_eq!(f_value(0, m, kappa, m).unwrap(), closed, max_relative = 1e-12);
        assert!(f_value(3, 2, 1000.0, 1).is_err());
        assert!(f_value(3, 2, 1000.0, 6).is_err());
    }

    #[test]
    fn kappa_minimum() {
        let k = kappa_min(3, 2, 1e-3).unwrap();
        let first = (1.0 / (1e-3 * (2.0 * std::f64::consts::PI).sqrt())).powf(0.25) * TAIL_CONSTANT * 5.0 / 4.0;
        assert_relative_eq!(k, first, max_relative = 1e-12);
        assert_relative_eq!(k, 35.83, epsilon = 5e-3);
        assert_relative_eq!(TAIL_CONSTANT * 3.0 / 2.0, 9.621, epsilon = 1e-9);
        let f: Vec<f64> = (2..=5).map(|t| f_value(3, 2, 1000.0, t).unwrap()).collect();
        assert!(f.windows(2).all(|w| w[1] < w[0]), "{f:?}");
        assert!(kappa_min(3, 2, 1.0).is_err());
    }

    #[test]
    fn thresholds_that_match_the_published_rows() {
        // Rows reproduced exactly with C = 6.414; the remaining rows are
        // covered (and reported) by the acceptance suite.
        assert_eq!(straggler_threshold_kappa(3, 2, 1000.0, 1e-3).unwrap().s_kappa, 2);
        assert_eq!(straggler_threshold_kappa(8, 2, 1000.0, 1e-3).unwrap().s_kappa, 6);
        assert_eq!(straggler_threshold_kappa(40, 10, 1000.0, 1e-3).unwrap().s_kappa, 32);
        assert_eq!(ye_abbe_threshold(60, 3, 1000.0, 1e-3).unwrap(), 0);
        assert_eq!(ye_abbe_threshold(60, 13, 1000.0, 1e-3).unwrap(), 6);
    }

    #[test]
    fn threshold_report_shape() {
        let r = straggler_threshold_kappa(8, 2, 1000.0, 1e-3).unwrap();
        assert_eq!(r.f_curve.len(), 9);
        assert_eq!(r.s_kappa, 8 + 2 - r.t_star);
        assert!(r.f_curve.iter().all(|&(t, f)| t < r.t_star || f <= 1e-3));
        assert!(r.f_curve.iter().any(|&(t, f)| t == r.t_star - 1 && f > 1e-3));
    }

    #[test]
    fn inadmissible_kappa() {
        assert!(matches!(
            straggler_threshold_kappa(3, 2, 30.0, 1e-3),
            Err(Error::InadmissibleKappa { .. })
        ));
        assert!(matches!(ye_abbe_threshold(60, 3, 400.0, 1e-3), Err(Error::InadmissibleKappa { .. })));
    }

    #[test]
    fn huge_kappa_saturates() {
        let t = stability_table(&[TableInput { n: 8, s: 2, m: 2 }], 1e9, 1e-3);
        assert_eq!(t.rows[0].s_kappa, Some(2));
        assert!(stability_table(&[], 1000.0, 1e-3).rows.is_empty());
        assert_eq!(stability_table(&[], 1000.0, 1e-3).to_csv(), "n,s,m,s_kappa_YA,s_kappa\n");
    }

    #[test]
    fn table_flags_inadmissible_rows() {
        let t = stability_table(&[TableInput { n: 60, s: 3, m: 2 }], 100.0, 1e-3);
        let row = &t.rows[0];
        let ours = straggler_threshold_kappa(3, 2, 100.0, 1e-3).unwrap().s_kappa;
        assert_eq!(row.s_kappa, Some(ours));
        assert_eq!(row.s_kappa_ya, None);
        assert_eq!(row.warnings.len(), 1);
        assert!(t.to_csv().ends_with(&format!("60,3,2,NA,{ours}\n")));
    }

    #[test]
    fn grouped_threshold_dominates_baseline_on_reference_rows() {
        for row in stability_table(&REFERENCE_TABLE_INPUTS, 1000.0, 1e-3).rows {
            assert!(row.s_kappa.unwrap() >= row.s_kappa_ya.unwrap(), "{row:?}");
        }
    }

    #[test]
    fn substitution_matches_direct_scan() {
        for &TableInput { n, s, .. } in &REFERENCE_TABLE_INPUTS {
            let direct = straggler_threshold_kappa(s, n - s, 1000.0, 1e-3).unwrap();
            assert_eq!(ye_abbe_threshold(n, s, 1000.0, 1e-3).unwrap(), direct.s_kappa);
        }
    }

    #[test]
    fn larger_constant_reproduces_all_consistent_rows() {
        // Published pairs; row 5 repeats row 4's values although its baseline
        // inputs (n, s) equal row 2's, so it cannot be matched.
        let published = [
            (0, 2), (2, 6), (6, 11), (0, 1), (2, 4), (2, 4),
            (8, 32), (29, 78), (85, 172), (8, 16), (29, 48), (85, 121),
        ];
        let t = stability_table_with(&REFERENCE_TABLE_INPUTS, 1000.0, 1e-3, 7.0);
        for (i, (row, &(ya, ours))) in t.rows.iter().zip(&published).enumerate() {
            if i == 5 {
                assert_ne!((row.s_kappa_ya, row.s_kappa), (Some(ya), Some(ours)));
                continue;
            }
            assert_eq!((row.s_kappa_ya, row.s_kappa), (Some(ya), Some(ours)), "row {i}");
        }
    }

    #[test]
    fn tail_bound_validity_range() {
        assert!(empirical_condition_tail(5, 10, &[5.0], 10, 0).is_err());
        assert!(empirical_condition_tail(4, 4, &[1.0, 2.0], 10, 0).is_ok());
        assert!(empirical_condition_tail(1, 4, &[10.0], 10, 0).is_err());
        let far = empirical_condition_tail(3, 6, &[1e12], 200, 1).unwrap();
        assert_eq!(far[0].frequency, 0.0);
    }

    #[test]
    fn tail_frequency_below_bound() {
        let pts = empirical_condition_tail(5, 10, &[20.0], 2000, 3).unwrap();
        let bound = (2.0 * std::f64::consts::PI).sqrt() * (TAIL_CONSTANT / 20.0f64).powi(6);
        assert_relative_eq!(pts[0].bound, bound);
        assert!(bound < 2.8e-3 && bound > 2.6e-3);
        assert!(pts[0].frequency <= bound);
    }

    #[test]
    fn group_stability() {
        let code = make_gaussian_code(5, 2, 4).unwrap();
        let whole = empirical_group_stability(&code, 5, 1e300, 0, 0).unwrap();
        assert_eq!(whole.subsets_checked, 1);
        assert_relative_eq!(whole.max_condition, condition_number(code.generator()).unwrap());
        let all = empirical_group_stability(&code, 3, 1e300, 0, 0).unwrap();
        assert_eq!((all.subsets_checked, all.compliant), (10, 10));
        assert_eq!(all.compliant_fraction(), 1.0);

        let check = resampled_union_bound(3, 2, 3, 1000.0, 200, 77).unwrap();
        assert_relative_eq!(check.bound, 3.693e-4, epsilon = 1e-6);
        // Slack of three binomial standard errors at the bound, plus one code.
        let slack = 3.0 * (check.bound / 200.0).sqrt() + 1.0 / 200.0;
        assert!(check.frequency() <= check.bound + slack, "{check:?}");
    }

    #[test]
    fn sampled_subsets_for_large_codes() {
        let code = make_gaussian_code(30, 10, 1).unwrap();
        let stats = empirical_group_stability(&code, 15, 1e6, 50, 2).unwrap();
        assert!(!stats.exhaustive);
        assert_eq!(stats.subsets_checked, 50);
    }

    proptest! {
        #[test]
        fn log_space_matches_naive(s in 0usize..30, m in 1usize..30, dt in 0usize..30, kappa in 1.0f64..1e4) {
            let t = m + dt.min(s);
            let naive = naive_f(s, m, kappa, t);
            prop_assume!(naive.is_finite() && naive > 1e-300);
            let logged = f_value(s, m, kappa, t).unwrap();
            prop_assert!((logged - naive).abs() <= 1e-9 * naive, "{logged} vs {naive}");
        }

        #[test]
        fn admissible_kappa_gives_decreasing_f(s in 0usize..60, m in 1usize..250, eps_exp in 1.0f64..8.0, factor in 1.0001f64..50.0) {
            let eps = 10f64.powf(-eps_exp);
            let kappa = kappa_min(s, m, eps).unwrap() * factor;
            let r = straggler_threshold_kappa(s, m, kappa, eps).unwrap();
            prop_assert!(r.f_curve.windows(2).all(|w| w[1].1 < w[0].1));
            prop_assert!(r.f_curve.last().unwrap().1 <= eps * (1.0 + 1e-12));
            prop_assert!(r.s_kappa <= s);
            prop_assert_eq!(r.s_kappa, s + m - r.t_star);
        }
    }
}
