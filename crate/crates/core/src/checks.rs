//! Randomized invariant suites: gradients, scalar-loop oracles, causality,
//! time-encoding translation identity and metric oracles.
//!
//! Each suite returns a [`CheckReport`]; `itgpt check` prints them and the
//! acceptance tests assert on them.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::attention::{causal_cross_attention, AttentionEncoding, AttentionWeights};
use crate::autodiff::{grad_check_coords, Tape, Tensor, Var};
use crate::data::{ModalitySeries, Observation, Target};
use crate::error::Result;
use crate::itnet::{itnet_forward, ItnetParams, MixingKind, TimedInput};
use crate::metrics::{auprc_macro_ovr, auroc, confusion_matrix, threshold_metrics, ScoredPredictions, ThresholdMetrics};
use crate::model::{itgpt_forward, predict_labels, predict_next_inputs, AnchorSpec, ItgptParams, ModelSpec, Prediction};
use crate::objectives::{ce_loss, ssl_mse_loss};
use crate::oracle::{self, Matrix, OracleConfig};
use crate::params::ParamStore;
use crate::time_encoding::{encode_time, PeConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub suite: String,
    pub instances: usize,
    /// Largest observed error; for exact suites, the largest absolute difference.
    pub max_error: f64,
    /// A case fails when its error is not strictly below this (exact suites use 0 and require equality).
    pub threshold: f64,
    pub failures: usize,
    pub notes: Vec<String>,
}

impl CheckReport {
    fn new(suite: &str, threshold: f64) -> Self {
        CheckReport {
            suite: suite.to_string(),
            instances: 0,
            max_error: 0.0,
            threshold,
            failures: 0,
            notes: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.instances > 0
    }

    /// Records one case with tolerance semantics.
    fn record(&mut self, err: f64) {
        self.instances += 1;
        if err.is_nan() || err > self.max_error {
            self.max_error = err;
        }
        if !(err < self.threshold) {
            self.failures += 1;
        }
    }

    /// Records one case that must match exactly.
    fn record_exact(&mut self, equal: bool, diff: f64) {
        self.instances += 1;
        if diff.is_nan() || diff > self.max_error {
            self.max_error = diff;
        }
        if !equal {
            self.failures += 1;
        }
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bound = if self.threshold == 0.0 {
            "exact".to_string()
        } else {
            format!("< {:e}", self.threshold)
        };
        write!(
            f,
            "{} {}: {} cases, max error {:e} ({bound}), {} failing",
            if self.passed() { "PASS" } else { "FAIL" },
            self.suite,
            self.instances,
            self.max_error,
            self.failures
        )?;
        for n in &self.notes {
            write!(f, "; {n}")?;
        }
        Ok(())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| normal(rng)).collect()).expect("shape")
}

/// Sorted times in `[0, span)`; roughly one in eight repeats its predecessor.
fn random_times(rng: &mut ChaCha8Rng, len: usize, span: f64) -> Vec<f64> {
    let mut t: Vec<f64> = (0..len).map(|_| rng.random::<f64>() * span).collect();
    t.sort_by(f64::total_cmp);
    for i in 1..t.len() {
        if rng.random_range(0..8) == 0 {
            t[i] = t[i - 1];
        }
    }
    t
}

/// Random observation with `1..=max_len` samples per modality and a target timeline.
pub fn random_observation(rng: &mut ChaCha8Rng, dims: &[usize], max_len: usize, num_classes: usize) -> Observation {
    let span = 10.0;
    let modalities = dims
        .iter()
        .enumerate()
        .map(|(m, &d)| {
            let len = rng.random_range(1..=max_len);
            let times = random_times(rng, len, span);
            ModalitySeries::new(format!("m{m}"), times, random_matrix(rng, len, d)).expect("valid series")
        })
        .collect();
    let len = rng.random_range(1..=max_len);
    let times = random_times(rng, len, span);
    let labels = (0..len).map(|_| rng.random_range(0..num_classes)).collect();
    Observation {
        id: "random".into(),
        modalities,
        target: Some(Target { times, labels }),
    }
}

fn to_rows(t: &Tensor) -> Matrix {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn max_diff(a: &Tensor, b: &Matrix) -> f64 {
    if a.rows() != b.len() {
        return f64::INFINITY;
    }
    let mut worst: f64 = 0.0;
    for (r, row) in b.iter().enumerate() {
        if row.len() != a.cols() {
            return f64::INFINITY;
        }
        for (c, &v) in row.iter().enumerate() {
            let d = (a.at(r, c) - v).abs();
            if d.is_nan() {
                return f64::NAN;
            }
            worst = worst.max(d);
        }
    }
    worst
}

const MIXINGS: [MixingKind; 3] = [MixingKind::Linear, MixingKind::Mlp1, MixingKind::Mlp2];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradSuite {
    pub seeds: u64,
    /// Depths cycle through `1..=max_depth` across seeds.
    pub max_depth: usize,
    pub coords_per_seed: usize,
    pub max_len: usize,
    pub d_k: usize,
    pub d_a: usize,
    pub anchor_len: usize,
    pub eps: f64,
    pub threshold: f64,
}

impl Default for GradSuite {
    fn default() -> Self {
        GradSuite {
            seeds: 5,
            max_depth: 3,
            coords_per_seed: 60,
            max_len: 16,
            d_k: 8,
            d_a: 8,
            anchor_len: 8,
            eps: 1e-6,
            threshold: 1e-4,
        }
    }
}

/// Combined cross-entropy and next-sample loss of one observation, as a tape function of all parameters.
pub fn full_loss(tape: &mut Tape, vars: &[Var], params: &ItgptParams, obs: &Observation, anchor: &AnchorSpec) -> Result<Var> {
    let chain = itgpt_forward(tape, vars, params, obs, anchor, None)?;
    let preds = predict_next_inputs(tape, vars, params, &chain.embeddings)?;
    let ssl = ssl_mse_loss(tape, obs, &preds, &chain.coverage)?;
    let target = obs.target.as_ref().expect("random observations carry targets");
    let out = predict_labels(tape, vars, params, chain.anchor, &anchor.times, &target.times)?;
    let probs = tape.softmax_rows(out.logits)?;
    let ce = ce_loss(tape, probs, &target.labels, &out.coverage, None)?;
    Ok(tape.add(ssl.value, ce.value)?)
}

/// Central finite differences against the tape gradient of [`full_loss`]
/// at random parameter coordinates. Coordinates straddling a rectifier kink
/// are skipped and counted.
pub fn grad_suite(cfg: &GradSuite, seed: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("grad", cfg.threshold);
    let (mut checked, mut skipped) = (0, 0);
    for s in 0..cfg.seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s);
        let spec = ModelSpec {
            modality_dims: vec![2, 3],
            num_classes: 3,
            d_k: cfg.d_k,
            d_o: cfg.d_k,
            d_a: cfg.d_a,
            depth: 1 + (s as usize) % cfg.max_depth,
            mixing: MIXINGS[(s as usize) % 3],
            dropout: 0.0,
            query_map: s % 2 == 1,
            lambda: 20.0,
        };
        let mut params = ItgptParams::init(&spec, seed.wrapping_add(s))?;
        // nonzero biases so their gradients are exercised away from the initial point
        for t in params.store.tensors_mut() {
            if t.rank() == 1 {
                t.data_mut().iter_mut().for_each(|v| *v = 0.1 * normal(&mut rng));
            }
        }
        let obs = random_observation(&mut rng, &spec.modality_dims, cfg.max_len, spec.num_classes);
        let anchor = AnchorSpec::for_observation(&obs, cfg.anchor_len)?;
        let tensors = params.store.tensors().to_vec();
        let coords: Vec<(usize, usize)> = (0..cfg.coords_per_seed)
            .map(|_| {
                let p = rng.random_range(0..tensors.len());
                (p, rng.random_range(0..tensors[p].len()))
            })
            .collect();
        let f = |tape: &mut Tape, vars: &[Var]| full_loss(tape, vars, &params, &obs, &anchor);
        let r = grad_check_coords(f, &tensors, &coords, cfg.eps)?;
        report.instances += r.checked;
        report.max_error = report.max_error.max(r.max_rel_err);
        if !(r.max_rel_err < cfg.threshold) {
            report.failures += 1;
        }
        checked += r.checked;
        skipped += r.skipped_kinks;
    }
    report.notes.push(format!("{checked} coordinates checked, {skipped} skipped at kinks"));
    Ok(report)
}

fn random_enc(rng: &mut ChaCha8Rng) -> Result<(usize, usize, f64)> {
    let d_k = 2 * rng.random_range(1..=4);
    let d_o = 2 * rng.random_range(1..=4);
    let lambda = [5.0, 20.0, 100.0][rng.random_range(0..3)];
    AttentionEncoding::new(d_k, d_o, lambda)?;
    Ok((d_k, d_o, lambda))
}

fn attention_case(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (d_k, d_o, lambda) = random_enc(rng)?;
    let d_in = rng.random_range(1..=4);
    let lq = rng.random_range(1..=8);
    let lk = rng.random_range(1..=10);
    let q = random_times(rng, lq, 10.0);
    let k = random_times(rng, lk, 10.0);
    let data = random_matrix(rng, lk, d_in);
    let w = AttentionWeights {
        w_key: random_matrix(rng, d_in, d_k),
        w_value: random_matrix(rng, d_in, d_o),
        w_query: rng.random_bool(0.5).then(|| random_matrix(rng, d_k, d_k)),
    };
    let got = causal_cross_attention(&q, &k, &data, &w, &AttentionEncoding::new(d_k, d_o, lambda)?)?;
    let want = oracle::attention(
        &q,
        &k,
        &to_rows(&data),
        &to_rows(&w.w_key),
        &to_rows(&w.w_value),
        w.w_query.as_ref().map(to_rows).as_ref(),
        d_k,
        d_o,
        lambda,
    );
    if got.coverage != want.coverage {
        return Ok(f64::INFINITY);
    }
    Ok(max_diff(&got.values, &want.values).max(max_diff(&got.weights, &want.weights)))
}

/// Replaces every parameter with standard normal draws (initial biases are zero).
fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for t in store.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.5 * normal(rng));
    }
}

fn itnet_case(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (d_k, d_o, lambda) = random_enc(rng)?;
    let enc = AttentionEncoding::new(d_k, d_o, lambda)?;
    let dims: Vec<usize> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(1..=3)).collect();
    let mixing = MIXINGS[rng.random_range(0..3)];
    let d_out = rng.random_range(1..=5);
    let hidden = rng.random_range(1..=5);
    let mut store = ParamStore::new();
    let mut init_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let params = ItnetParams::init(&mut store, "enc", &dims, &enc, rng.random_bool(0.5), mixing, hidden, d_out, 0.0, &mut init_rng)?;
    randomize(&mut store, rng);
    let len = rng.random_range(1..=8);
    let out_times = random_times(rng, len, 10.0);
    let inputs: Vec<(Vec<f64>, Tensor)> = dims
        .iter()
        .map(|&d| {
            let len = rng.random_range(1..=8);
            (random_times(rng, len, 10.0), random_matrix(rng, len, d))
        })
        .collect();

    let mut tape = Tape::new();
    let vars = store.register_frozen(&mut tape);
    let data: Vec<Var> = inputs.iter().map(|(_, x)| tape.constant(x.clone())).collect();
    let timed: Vec<TimedInput<'_>> = inputs
        .iter()
        .zip(&data)
        .map(|((t, _), &d)| TimedInput { times: t, data: d })
        .collect();
    let got = itnet_forward(&mut tape, &vars, &params, &timed, &out_times, &enc, None)?;
    let oracle_inputs: Vec<(Vec<f64>, Matrix)> = inputs.iter().map(|(t, x)| (t.clone(), to_rows(x))).collect();
    let want = oracle::itnet(&store, "enc", &oracle_inputs, &out_times, OracleConfig { d_k, d_o, lambda });
    Ok(max_diff(tape.value(got.output), &want))
}

fn itgpt_case(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (d_k, d_o, lambda) = random_enc(rng)?;
    let spec = ModelSpec {
        modality_dims: (0..rng.random_range(1..=3)).map(|_| rng.random_range(1..=3)).collect(),
        num_classes: rng.random_range(2..=4),
        d_k,
        d_o,
        d_a: rng.random_range(1..=6),
        depth: rng.random_range(1..=2),
        mixing: MIXINGS[rng.random_range(0..3)],
        dropout: 0.0,
        query_map: rng.random_bool(0.5),
        lambda,
    };
    let mut params = ItgptParams::init(&spec, rng.random())?;
    randomize(&mut params.store, rng);
    let obs = random_observation(rng, &spec.modality_dims, 10, spec.num_classes);
    let anchor = AnchorSpec::for_observation(&obs, rng.random_range(2..=12))?;
    let got = params.predict(&obs, &anchor)?;
    let modalities: Vec<(Vec<f64>, Matrix)> = obs
        .modalities
        .iter()
        .map(|m| (m.times.clone(), to_rows(&m.values)))
        .collect();
    let target = obs.target.as_ref().expect("target");
    let want = oracle::itgpt(&params.store, &modalities, &anchor.times, &target.times, OracleConfig { d_k, d_o, lambda });
    let mut err = max_diff(&got.anchor, &want.anchor);
    for (g, w) in got.embeddings.iter().zip(&want.embeddings) {
        err = err.max(max_diff(g, w));
    }
    for (g, w) in got.next_inputs.iter().zip(&want.next_inputs) {
        err = err.max(max_diff(g, w));
    }
    let logits = got.logits.as_ref().expect("logits");
    Ok(err.max(max_diff(logits, &want.logits)))
}

/// Tape implementations against the scalar-loop oracles, rotating through
/// attention, one encoder block and the full chain (depth ≤ 2).
pub fn oracle_suite(instances: usize, seed: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("oracle", 1e-8);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_kind = [0.0f64; 3];
    for i in 0..instances {
        let err = match i % 3 {
            0 => attention_case(&mut rng)?,
            1 => itnet_case(&mut rng)?,
            _ => itgpt_case(&mut rng)?,
        };
        per_kind[i % 3] = per_kind[i % 3].max(err);
        report.record(err);
    }
    report.notes.push(format!(
        "max error attention {:e}, itnet {:e}, itgpt {:e}",
        per_kind[0], per_kind[1], per_kind[2]
    ));
    Ok(report)
}

fn same_bits(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Rows `r` with `times[r] < cut` must be bit-identical.
fn rows_before(a: &Tensor, b: &Tensor, times: &[f64], cut: f64) -> (bool, f64) {
    let mut equal = true;
    let mut diff: f64 = 0.0;
    for (r, &t) in times.iter().enumerate() {
        if t < cut {
            equal &= same_bits(a.row(r), b.row(r));
            for (x, y) in a.row(r).iter().zip(b.row(r)) {
                diff = diff.max((x - y).abs());
            }
        }
    }
    (equal, diff)
}

fn compare_before(base: &Prediction, other: &Prediction, obs: &Observation, anchor: &[f64], cut: f64) -> (bool, f64) {
    let mut checks = vec![rows_before(&base.anchor, &other.anchor, anchor, cut)];
    for (m, series) in obs.modalities.iter().enumerate() {
        checks.push(rows_before(&base.embeddings[m], &other.embeddings[m], &series.times, cut));
        checks.push(rows_before(&base.next_inputs[m], &other.next_inputs[m], &series.times, cut));
    }
    if let (Some(a), Some(b), Some(target)) = (&base.logits, &other.logits, &obs.target) {
        checks.push(rows_before(a, b, &target.times, cut));
    }
    checks
        .into_iter()
        .fold((true, 0.0), |(e, d), (e2, d2)| (e && e2, f64::max(d, d2)))
}

/// Perturbs every sample and label at times `>= cut` and requires every
/// output row at an earlier time to keep its exact bits.
pub fn causality_suite(observations: usize, cuts: usize, seed: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("causality", 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..observations {
        let spec = ModelSpec {
            modality_dims: vec![2, 1, 3],
            num_classes: 3,
            d_k: 8,
            d_o: 8,
            d_a: 8,
            depth: rng.random_range(1..=3),
            mixing: MIXINGS[rng.random_range(0..3)],
            dropout: 0.0,
            query_map: rng.random_bool(0.5),
            lambda: 50.0,
        };
        let mut params = ItgptParams::init(&spec, rng.random())?;
        randomize(&mut params.store, &mut rng);
        let obs = random_observation(&mut rng, &spec.modality_dims, 16, spec.num_classes);
        let anchor = AnchorSpec::for_observation(&obs, 16)?;
        let base = params.predict(&obs, &anchor)?;
        let (lo, hi) = obs.span().expect("nonempty");
        for _ in 0..cuts {
            let cut = lo + rng.random::<f64>() * (hi - lo);
            let mut perturbed = obs.clone();
            for series in &mut perturbed.modalities {
                for r in 0..series.times.len() {
                    if series.times[r] >= cut {
                        for v in series.values.row_mut(r) {
                            *v += 10.0 * normal(&mut rng);
                        }
                    }
                }
            }
            if let Some(target) = &mut perturbed.target {
                for (t, y) in target.times.iter().zip(target.labels.iter_mut()) {
                    if *t >= cut {
                        *y = (*y + 1) % spec.num_classes;
                    }
                }
            }
            let other = params.predict(&perturbed, &anchor)?;
            let (equal, diff) = compare_before(&base, &other, &obs, &anchor.times, cut);
            report.record_exact(equal, diff);
        }
    }
    Ok(report)
}

/// `|p(t)·p(t') − Σ_i cos(ω_i (t − t'))|` over random pairs, cycling through `dims`.
pub fn pe_suite(pairs: usize, dims: &[usize], seed: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("pe", 1e-9);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let configs: Vec<PeConfig> = dims.iter().map(|&d| PeConfig::new(d, 1000.0)).collect::<Result<_>>()?;
    for i in 0..pairs {
        let cfg = &configs[i % configs.len()];
        let t = rng.random_range(-100.0..100.0);
        let u = rng.random_range(-100.0..100.0);
        let p = encode_time(t, cfg)?;
        let q = encode_time(u, cfg)?;
        let dot: f64 = p.data().iter().zip(q.data()).map(|(a, b)| a * b).sum();
        let expect: f64 = cfg.frequencies().iter().map(|w| (w * (t - u)).cos()).sum();
        report.record((dot - expect).abs());
    }
    report.notes.push(format!("dims {dims:?}"));
    Ok(report)
}

fn random_scores(rng: &mut ChaCha8Rng, n: usize, d_c: usize) -> Tensor {
    // coarse grids force ties
    let levels = [0u32, 4, 20][rng.random_range(0..3)];
    Tensor::matrix(
        n,
        d_c,
        (0..n * d_c)
            .map(|_| {
                let x: f64 = rng.random();
                if levels == 0 {
                    x
                } else {
                    (x * levels as f64).floor() / levels as f64
                }
            })
            .collect(),
    )
    .expect("shape")
}

fn opt_eq(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => x.to_bits() == y.to_bits(),
        (None, None) => true,
        _ => false,
    }
}

fn opt_diff(a: Option<f64>, b: Option<f64>) -> f64 {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs(),
        (None, None) => 0.0,
        _ => f64::INFINITY,
    }
}

/// Metric implementations against brute-force oracles, requiring exact equality.
pub fn metrics_suite(instances: usize, max_n: usize, seed: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("metrics", 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..instances {
        let n = rng.random_range(1..=max_n);
        let d_c = rng.random_range(2..=4);
        let scores = random_scores(&mut rng, n, d_c);
        let mut truths: Vec<usize> = (0..n).map(|_| rng.random_range(0..d_c)).collect();
        if rng.random_bool(0.1) {
            truths.iter_mut().for_each(|t| *t = 0);
        }
        truths.shuffle(&mut rng);
        let preds = ScoredPredictions::new(scores.clone(), truths.clone())?;
        let rows = to_rows(&scores);
        let mut equal = true;
        let mut diff: f64 = 0.0;

        let auprc = auprc_macro_ovr(&preds);
        for c in 0..d_c {
            let col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
            let pos: Vec<bool> = truths.iter().map(|&t| t == c).collect();
            let want_ap = oracle::auprc_sweep(&col, &pos);
            equal &= opt_eq(auprc.per_class[c], want_ap);
            diff = diff.max(opt_diff(auprc.per_class[c], want_ap));
            let want_auc = oracle::auroc_pairwise(&col, &pos);
            let got_auc = auroc(&preds, c).ok();
            equal &= opt_eq(got_auc, want_auc);
            diff = diff.max(opt_diff(got_auc, want_auc));

            let th = rng.random::<f64>();
            let (tp, fp, fn_, tn) = oracle::threshold_counts(&col, &pos, th);
            let got = threshold_metrics(&preds, c, th);
            let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
            let want = ThresholdMetrics {
                tp,
                fp,
                fn_,
                tn,
                recall: ratio(tp, tp + fn_),
                specificity: ratio(tn, tn + fp),
                precision: ratio(tp, tp + fp),
                f1: ratio(2 * tp, 2 * tp + fp + fn_),
            };
            equal &= got == want;
        }
        equal &= confusion_matrix(&preds).counts == oracle::confusion_counts(&rows, &truths, d_c);
        report.record_exact(equal, diff);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suites_pass() {
        assert!(pe_suite(300, &[8, 32], 1).unwrap().passed());
        assert!(metrics_suite(20, 40, 2).unwrap().passed());
        assert!(oracle_suite(30, 3).unwrap().passed());
        assert!(causality_suite(3, 4, 4).unwrap().passed());
        let g = grad_suite(&GradSuite { seeds: 2, coords_per_seed: 15, ..GradSuite::default() }, 5).unwrap();
        assert!(g.passed(), "{g}");
    }

    #[test]
    fn report_flags_failures() {
        let mut r = CheckReport::new("x", 1e-3);
        r.record(1e-4);
        assert!(r.passed());
        r.record(f64::NAN);
        assert!(!r.passed());
        assert!(r.to_string().starts_with("FAIL x"));
    }
}
