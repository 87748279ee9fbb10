//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::time::{Duration, Instant};

use commfr_gc::codes::{make_systematic_mds, CodeKind, ErasurePattern, LinearCode};
use commfr_gc::coding::{
    achieved_triple, decode_all, decode_group, encode_group, encode_worker, fractional_repetition_placement,
    lower_bound_load, GradientBatch,
};
use commfr_gc::ldpc::{bec_threshold, peel_decode, sample_ldpc, ThresholdQuery};
use commfr_gc::sim::{
    logistic_gradient, logistic_loss_sum, run_training, straggler_sample, SchemeConfig, SimConfig, SimSettings,
    StragglerModel,
};
use commfr_gc::stability::{empirical_condition_tail, stability_table, REFERENCE_TABLE_INPUTS};
use commfr_gc::codes::CodeSpec;
use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn within(limit: Duration, start: Instant) -> Result<Duration, String> {
    let took = start.elapsed();
    if took < limit {
        Ok(took)
    } else {
        Err(format!("took {took:.2?}, limit {limit:?}"))
    }
}

fn example_code() -> LinearCode {
    let g = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 2.0]);
    LinearCode::new(CodeKind::Custom, g, Some(vec![0, 1])).unwrap()
}

fn worked_example() -> Outcome {
    let start = Instant::now();
    let (n, k, d) = (8, 4, 4);
    let code = example_code();
    let plan = fractional_repetition_placement(n, k, 4).map_err(|e| e.to_string())?;
    let batch = GradientBatch::new(
        (0..k).map(|i| DVector::from_fn(d, |j, _| (i * d + j + 1) as f64 * if j % 2 == 0 { 1.0 } else { -1.0 })).collect(),
    )
    .unwrap();
    let direct = batch.total();
    let options: Vec<Vec<Vec<usize>>> = plan
        .groups
        .iter()
        .map(|g| (0..=2).flat_map(|c| g.iter().copied().combinations(c)).collect())
        .collect();
    let mut patterns = 0;
    let mut worst: f64 = 0.0;
    for choice in options.iter().multi_cartesian_product() {
        let erased: Vec<usize> = choice.into_iter().flatten().copied().collect();
        let chunks: Vec<_> =
            (0..n).filter(|w| !erased.contains(w)).map(|w| encode_worker(&plan, &code, &batch, w).unwrap()).collect();
        let (decoded, _) = decode_all(&plan, &code, &chunks, d).map_err(|e| format!("{erased:?}: {e}"))?;
        worst = worst.max((&decoded - &direct).amax());
        patterns += 1;
    }
    let took = within(Duration::from_secs(1), start)?;
    if patterns != 121 || worst > 1e-12 {
        return Err(format!("{patterns} patterns, max abs error {worst:e}"));
    }
    Ok(format!("{patterns} patterns, max abs error {worst:e}, {took:.2?}"))
}

/// Published `(s_κ^YA, s_κ)` pairs for the reference inputs.
const PUBLISHED: [(usize, usize); 12] =
    [(0, 2), (2, 6), (6, 11), (0, 1), (2, 4), (2, 4), (8, 32), (29, 78), (85, 172), (8, 16), (29, 48), (85, 121)];

fn threshold_table() -> Outcome {
    let start = Instant::now();
    let table = stability_table(&REFERENCE_TABLE_INPUTS, 1000.0, 1e-3);
    let took = within(Duration::from_secs(1), start)?;
    let mismatches: Vec<String> = table
        .rows
        .iter()
        .zip(PUBLISHED)
        .filter(|(r, (ya, ours))| r.s_kappa_ya != Some(*ya) || r.s_kappa != Some(*ours))
        .map(|(r, (ya, ours))| {
            format!(
                "(n={}, s={}, m={}): got ({:?}, {:?}), published ({ya}, {ours})",
                r.n, r.s, r.m, r.s_kappa_ya, r.s_kappa
            )
        })
        .collect();
    if mismatches.is_empty() {
        Ok(format!("12/12 rows match, {took:.2?}"))
    } else {
        Err(format!("{}/12 rows match; {}", 12 - mismatches.len(), mismatches.join("; ")))
    }
}

fn ldpc_threshold() -> Outcome {
    let start = Instant::now();
    let p = bec_threshold(ThresholdQuery::new(3, 6, 1e-7)).map_err(|e| e.to_string())?;
    let took = within(Duration::from_secs(1), start)?;
    if (p - 0.4294).abs() <= 1e-4 {
        Ok(format!("p* = {p:.6}, {took:.2?}"))
    } else {
        Err(format!("p* = {p:.6}"))
    }
}

struct PeelStats {
    successes: usize,
    trials: usize,
    mean_erasures: f64,
    mean_visits: f64,
}

fn peel_trials(n: usize, p: f64, trials: usize, seed: u64) -> PeelStats {
    let coin = Bernoulli::new(p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut successes, mut erasures, mut visits) = (0, 0usize, 0usize);
    for t in 0..trials {
        let ldpc = sample_ldpc(n, n / 2, 3, 6, seed * 1000 + t as u64).unwrap();
        let code = ldpc.linear_code();
        let msg = DMatrix::from_fn(1, code.dimension(), |_, _| StandardNormal.sample(&mut rng));
        let received: Vec<usize> = (0..n).filter(|_| !coin.sample(&mut rng)).collect();
        let pattern = ErasurePattern::new(n, received.iter().copied()).unwrap();
        let coded = code.encode_columns(&msg, &received).unwrap();
        let r = peel_decode(&ldpc, &pattern, &coded).unwrap();
        if r.message.as_ref().is_some_and(|m| (m - &msg).amax() <= 1e-8 * msg.amax()) {
            successes += 1;
        }
        erasures += r.initial_erasures;
        visits += r.edge_visits;
    }
    PeelStats {
        successes,
        trials,
        mean_erasures: erasures as f64 / trials as f64,
        mean_visits: visits as f64 / trials as f64,
    }
}

fn peeling_at_scale() -> Outcome {
    let start = Instant::now();
    let main = peel_trials(1000, 0.40, 100, 1);
    let rate = main.successes as f64 / main.trials as f64;
    // Work per erasure at each block length; linear cost means these agree.
    let slopes: Vec<(usize, f64)> = [500, 1000, 2000]
        .into_iter()
        .map(|n| {
            let s = peel_trials(n, 0.40, 20, 2 + n as u64);
            (n, s.mean_visits / s.mean_erasures)
        })
        .collect();
    let mean = slopes.iter().map(|s| s.1).sum::<f64>() / slopes.len() as f64;
    let spread = slopes.iter().map(|s| (s.1 - mean).abs() / mean).fold(0.0, f64::max);
    let took = within(Duration::from_secs(30), start)?;
    let detail = format!(
        "success {}/{}, edge visits per erasure {}, max deviation {:.1}%, {took:.2?}",
        main.successes,
        main.trials,
        slopes.iter().map(|(n, s)| format!("N={n}: {s:.2}")).join(", "),
        spread * 100.0
    );
    if rate >= 0.9 && spread <= 0.2 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Rank by Gaussian elimination with partial pivoting.
fn elimination_rank(m: &DMatrix<f64>) -> usize {
    let mut a = m.clone();
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let (rows, cols) = a.shape();
    let mut rank = 0;
    for c in 0..cols {
        if rank == rows {
            break;
        }
        let (pivot, value) =
            (rank..rows).map(|r| (r, a[(r, c)].abs())).max_by(|x, y| x.1.total_cmp(&y.1)).unwrap();
        if value <= 1e-9 * scale {
            continue;
        }
        a.swap_rows(rank, pivot);
        for r in rank + 1..rows {
            let f = a[(r, c)] / a[(rank, c)];
            for j in c..cols {
                a[(r, j)] -= f * a[(rank, j)];
            }
        }
        rank += 1;
    }
    rank
}

/// `N − max{|S| : rank(G_S) < K}`.
fn oracle_min_distance(g: &DMatrix<f64>) -> usize {
    let (k, n) = g.shape();
    for size in (0..n).rev() {
        if (0..n).combinations(size).any(|cols| elimination_rank(&g.select_columns(&cols)) < k) {
            return n - size;
        }
    }
    n
}

fn optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = Vec::new();
    while checked.len() < 20 {
        let group = rng.random_range(2..=10usize);
        let dim = rng.random_range(1..group);
        let n = group * rng.random_range(1..=4usize);
        let k = rng.random_range(1..=2 * n);
        if (k * group) % n != 0 {
            continue;
        }
        let (s, m) = (group - dim, dim);
        if (k * (s + m)) % n != 0 {
            continue;
        }
        let code = make_systematic_mds(group, dim, checked.len() as u64).map_err(|e| e.to_string())?;
        let delta = oracle_min_distance(code.generator());
        if delta != group - dim + 1 {
            return Err(format!("[{group}, {dim}] code has distance {delta}"));
        }
        let triple = achieved_triple(n, k, &code).map_err(|e| e.to_string())?;
        let bound = lower_bound_load(n, k, triple.stragglers, triple.saving).unwrap();
        let exact = k * (s + m) / n;
        if triple.load != exact || bound != exact || triple.stragglers != s || triple.saving != m || !triple.optimal {
            return Err(format!("n={n} k={k} N={group} K={dim}: {triple}, bound {exact}"));
        }
        checked.push((n, k, group, dim));
    }
    Ok("20 parameter sets with N <= 10 meet the load bound; all codes MDS by enumeration".to_string())
}

fn solve_dimension_contract() -> Outcome {
    let mut summary = Vec::new();
    for (m, s) in [(2usize, 3usize), (5, 2), (4, 4)] {
        let group = m + s;
        let code = make_systematic_mds(group, m, 11).map_err(|e| e.to_string())?;
        let plan = fractional_repetition_placement(group, group, group).unwrap();
        let d = 7;
        let batch =
            GradientBatch::new((0..group).map(|i| DVector::from_fn(d, |j, _| (i * d + j) as f64)).collect()).unwrap();
        let all = encode_group(&plan, &code, &batch, 0).unwrap();
        let direct = batch.total();
        let mut worst = 0;
        let mut patterns = 0;
        for size in 0..=s {
            for erased in (0..group).combinations(size) {
                let chunks: Vec<_> = all.iter().filter(|c| !erased.contains(&c.index)).cloned().collect();
                let (g, cost) = decode_group(&code, 0, &chunks, d).map_err(|e| e.to_string())?;
                if (&g - &direct).amax() > 1e-8 * direct.amax() {
                    return Err(format!("(m={m}, s={s}) erased {erased:?}: wrong sum"));
                }
                worst = worst.max(cost.solve_dimension);
                patterns += 1;
            }
        }
        if worst > m.min(s) {
            return Err(format!("(m={m}, s={s}): solve dimension {worst} > {}", m.min(s)));
        }
        summary.push(format!("(m={m}, s={s}): max {worst} over {patterns} patterns"));
    }
    Ok(summary.join(", "))
}

fn tail_bound() -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    for (i, (u, v)) in [(3usize, 6usize), (5, 10), (4, 4)].into_iter().enumerate() {
        let gap = (u.abs_diff(v) + 1) as f64;
        let xs: Vec<f64> = [1.0, 1.5, 2.0, 4.0, 8.0, 16.0, 32.0].iter().map(|f| f * gap).collect();
        let points = empirical_condition_tail(u, v, &xs, 2000, 100 + i as u64).map_err(|e| e.to_string())?;
        if let Some(p) = points.iter().find(|p| p.frequency > p.bound + 3.0 * p.standard_error) {
            return Err(format!("({u}, {v}) at x = {}: frequency {} > bound {}", p.x, p.frequency, p.bound));
        }
        lines.push(format!("({u},{v}) ok at {} thresholds", points.len()));
    }
    let took = within(Duration::from_secs(60), start)?;
    Ok(format!("{}, {took:.2?}", lines.join(", ")))
}

fn settings(stragglers: StragglerModel, seed: u64, iterations: usize) -> SimSettings {
    SimSettings {
        n: 8,
        k: 4,
        d: 20,
        samples: 500,
        validation_samples: 0,
        stragglers,
        iterations,
        learning_rate: 1.0,
        momentum: 0.9,
        time_per_sample: 0.0,
        seed,
        dataset_csv: None,
    }
}

fn coded_scheme() -> SchemeConfig {
    SchemeConfig::CommfrGc { code: CodeSpec::SystematicMds { n: 4, k: 2, seed: 3 } }
}

fn max_relative_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / y.abs()).fold(0.0, f64::max)
}

fn training_fidelity() -> Outcome {
    let start = Instant::now();
    let run = |stragglers, scheme| {
        run_training(&SimConfig { settings: settings(stragglers, 21, 50), scheme }).map_err(|e| e.to_string())
    };
    let exact = run(StragglerModel::None, SchemeConfig::Naive)?;
    let random = StragglerModel::IidBernoulli { p: 0.25, delay: 4.0 };
    let coded = run(random, coded_scheme())?;
    let adversary = StragglerModel::FixedSet { workers: vec![0], delay: 4.0 };
    let ignored = run(adversary, SchemeConfig::IgnoreStragglers { s: 1 })?;
    let took = within(Duration::from_secs(30), start)?;
    let coded_gap = max_relative_gap(&coded.losses(), &exact.losses());
    let ignored_gap = max_relative_gap(&ignored.losses(), &exact.losses());
    let detail =
        format!("coded max rel gap {coded_gap:.2e}, ignore-stragglers max rel gap {ignored_gap:.2e}, {took:.2?}");
    if coded_gap <= 1e-6 && ignored_gap > 1e-3 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn timing_dominance() -> Outcome {
    let models = [
        StragglerModel::IidBernoulli { p: 0.2, delay: 5.0 },
        StragglerModel::ShiftedExponential { base: 1.0, rate: 0.5 },
        StragglerModel::FixedSet { workers: vec![1, 6], delay: 3.0 },
    ];
    let mut worst_ratio: f64 = 0.0;
    for model in &models {
        for seed in 0..5u64 {
            let run = |scheme| {
                run_training(&SimConfig { settings: settings(model.clone(), seed, 20), scheme })
                    .map_err(|e| e.to_string())
            };
            let naive = run(SchemeConfig::Naive)?;
            let coded = run(coded_scheme())?;
            for (a, b) in coded.records.iter().zip(&naive.records) {
                if a.iteration_time > b.iteration_time {
                    return Err(format!("{model:?} seed {seed} round {}: coded slower", a.iteration));
                }
            }
            let any_delay = (0..20)
                .map(|t| straggler_sample(model, 8, commfr_gc::sim::round_seed(seed, t)).unwrap())
                .any(|d| d.iter().any(|&x| x > 0.0));
            let (tc, tn) = (coded.summary.mean_iteration_time, naive.summary.mean_iteration_time);
            if tc > tn || (any_delay && tc >= tn) {
                return Err(format!("{model:?} seed {seed}: coded {tc} vs naive {tn}"));
            }
            worst_ratio = worst_ratio.max(tc / tn);
        }
    }
    Ok(format!("15 runs, coded/naive mean iteration time at most {worst_ratio:.3}"))
}

fn finite_differences() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let b = rng.random_range(1..=40usize);
        let d = rng.random_range(1..=12usize);
        let x = DMatrix::from_fn(b, d, |_, _| StandardNormal.sample(&mut rng));
        let y = DVector::from_fn(b, |_, _| if rng.random_bool(0.5) { 1.0 } else { 0.0 });
        let w = DVector::from_fn(d, |_, _| { let z: f64 = StandardNormal.sample(&mut rng); z * 0.5 });
        let g = logistic_gradient(&w, &x, &y).map_err(|e| e.to_string())?;
        let h = 1e-5;
        let fd = DVector::from_fn(d, |i, _| {
            let (mut up, mut down) = (w.clone(), w.clone());
            up[i] += h;
            down[i] -= h;
            (logistic_loss_sum(&up, &x, &y).unwrap() - logistic_loss_sum(&down, &x, &y).unwrap()) / (2.0 * h)
        });
        worst = worst.max((&fd - &g).norm() / g.norm());
    }
    if worst <= 1e-5 {
        Ok(format!("50 pairs, max relative error {worst:.2e}"))
    } else {
        Err(format!("max relative error {worst:.2e}"))
    }
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("worked example exactness", worked_example),
        ("threshold table", threshold_table),
        ("LDPC density-evolution threshold", ldpc_threshold),
        ("peeling at desk scale", peeling_at_scale),
        ("load optimality", optimality),
        ("decode solve dimension", solve_dimension_contract),
        ("condition-number tail bound", tail_bound),
        ("training fidelity", training_fidelity),
        ("timing dominance", timing_dominance),
        ("gradient finite differences", finite_differences),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS criterion {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
