//! Optimization loop, evaluation and experiment grids.
//!
//! Every observation gets its own tape. Gradients are summed over a batch,
//! divided by the batch size and applied with one Adam step, so variable
//! timeline lengths never need padding.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, TensorError};
use crate::config::TrainConfig;
use crate::data::{split_kfold, Dataset, Fold, Observation};
use crate::error::{Error, Result};
use crate::itnet::MixingKind;
use crate::kv::{parse_value, KvFile};
use crate::metrics::{summarize, MetricSummary, ScoredPredictions};
use crate::model::{itgpt_forward, predict_labels, predict_next_inputs, AnchorSpec, ItgptParams};
use crate::objectives::{ce_loss, schedule_select, ssl_mse_loss, subsample_labels, LossConfig, Phase, Scheme};
use crate::params::ParamStore;
use crate::time_encoding::default_lambda;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

const LABEL_STREAM: u64 = 0x4c41_4245_4c53;
const SHUFFLE_STREAM: u64 = 0x5348_5546_464c;
const DROPOUT_STREAM: u64 = 0x4452_4f50_4f55;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// Bias-corrected Adam update. A non-finite gradient aborts before anything changes.
pub fn adam_step(store: &mut ParamStore, grads: &[Tensor], state: &mut AdamState, lr: f64) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(Error::Invalid(format!(
            "{} gradients and {} moment slots for {} parameters",
            grads.len(),
            state.m.len(),
            store.len()
        )));
    }
    for (i, (g, p)) in grads.iter().zip(store.tensors()).enumerate() {
        if g.shape() != p.shape() {
            return Err(Error::Invalid(format!(
                "gradient of `{}` has shape {:?}, parameter {:?}",
                store.names()[i],
                g.shape(),
                p.shape()
            )));
        }
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient {
                path: store.names()[i].clone(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for (((p, g), m), v) in store
        .tensors_mut()
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = BETA1 * *mv + (1.0 - BETA1) * gv;
            *vv = BETA2 * *vv + (1.0 - BETA2) * gv * gv;
            let update = lr * (*mv / c1) / ((*vv / c2).sqrt() + ADAM_EPS);
            *pv -= update;
        }
    }
    Ok(())
}

/// Rescales gradients so their global L2 norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// Loss terms evaluated for one observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Ce,
    Mse,
    /// Next-step MSE plus cross-entropy.
    MseCe,
}

/// What observation `i` contributes at 1-based `epoch`, or `None` to skip it.
pub fn objective_for(cfg: &LossConfig, epoch: usize, i: usize, has_target: bool) -> Result<Option<Objective>> {
    let labeled = cfg.is_labeled(i) && has_target;
    Ok(match cfg.scheme {
        Scheme::Ce => labeled.then_some(Objective::Ce),
        Scheme::CeSsl => Some(if labeled { Objective::MseCe } else { Objective::Mse }),
        Scheme::GptThenCe => match schedule_select(epoch, i, cfg)? {
            Phase::UseMse => Some(Objective::Mse),
            Phase::UseCe => has_target.then_some(Objective::Ce),
            Phase::Skip => None,
        },
    })
}

fn objective_name(scheme: Scheme, epoch: usize, pretrain: usize) -> &'static str {
    match scheme {
        Scheme::Ce => "ce",
        Scheme::CeSsl => "ce+ssl",
        Scheme::GptThenCe if epoch <= pretrain => "mse",
        Scheme::GptThenCe => "ce",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationLoss {
    pub loss: f64,
    pub ce_rows: usize,
    pub ssl_rows: usize,
    /// One gradient per parameter, present when requested.
    pub grads: Option<Vec<Tensor>>,
}

/// Forward (and optionally backward) pass of one observation. `rng` enables dropout.
pub fn observation_loss(
    params: &ItgptParams,
    obs: &Observation,
    objective: Objective,
    anchor_len: usize,
    censored_class: Option<usize>,
    rng: Option<&mut ChaCha8Rng>,
    with_grads: bool,
) -> Result<ObservationLoss> {
    let anchor = AnchorSpec::for_observation(obs, anchor_len)?;
    let mut tape = Tape::new();
    let vars = if with_grads {
        params.store.register(&mut tape)
    } else {
        params.store.register_frozen(&mut tape)
    };
    let chain = itgpt_forward(&mut tape, &vars, params, obs, &anchor, rng)?;
    let mut terms = Vec::new();
    let (mut ce_rows, mut ssl_rows) = (0, 0);
    if matches!(objective, Objective::Mse | Objective::MseCe) {
        let preds = predict_next_inputs(&mut tape, &vars, params, &chain.embeddings)?;
        let term = ssl_mse_loss(&mut tape, obs, &preds, &chain.coverage)?;
        ssl_rows = term.rows;
        terms.push(term.value);
    }
    if matches!(objective, Objective::Ce | Objective::MseCe) {
        let target = obs
            .target
            .as_ref()
            .ok_or_else(|| Error::Invalid(format!("observation `{}` has no labels", obs.id)))?;
        let out = predict_labels(&mut tape, &vars, params, chain.anchor, &anchor.times, &target.times)?;
        let probs = tape.softmax_rows(out.logits)?;
        let term = ce_loss(&mut tape, probs, &target.labels, &out.coverage, censored_class)?;
        ce_rows = term.rows;
        terms.push(term.value);
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    let loss = tape.value(total).item();
    let grads = if with_grads {
        let g = tape.backward(total)?;
        Some(vars.iter().map(|&v| g.wrt(&tape, v)).collect())
    } else {
        None
    };
    Ok(ObservationLoss {
        loss,
        ce_rows,
        ssl_rows,
        grads,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    pub split: String,
    pub objective: String,
    pub loss: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Final parameters, or the last good ones when `failure` is set.
    pub params: ItgptParams,
    pub trace: Vec<TraceRow>,
    pub labeled: Vec<usize>,
    pub lambda: f64,
    pub steps: u64,
    pub warnings: Vec<String>,
    /// Divergence or a non-finite gradient stopped training early.
    pub failure: Option<Error>,
    /// Parameter snapshot after each epoch, when requested.
    pub snapshots: Vec<ParamStore>,
}

/// Hooks for inspecting a run as it goes.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub keep_snapshots: bool,
}

fn derived_rng(seed: u64, salt: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    rng.set_stream(stream);
    rng
}

fn labeled_subset(dataset: &Dataset, train_idx: &[usize], cfg: &TrainConfig) -> Result<Vec<usize>> {
    let candidates: Vec<usize> = train_idx
        .iter()
        .copied()
        .filter(|&i| dataset.observations[i].target.as_ref().is_some_and(|t| !t.is_empty()))
        .collect();
    if cfg.label_fraction >= 1.0 {
        return Ok(candidates);
    }
    let strata: Vec<Option<usize>> = candidates
        .iter()
        .map(|&i| {
            dataset.observations[i]
                .target
                .as_ref()
                .and_then(|t| t.majority_class(dataset.schema.num_classes))
        })
        .collect();
    subsample_labels(&candidates, &strata, cfg.label_fraction, cfg.seed ^ LABEL_STREAM)
}

fn is_numeric(e: &Error) -> bool {
    matches!(e, Error::Tensor(TensorError::NonFinite { .. }))
}

/// Trains on `train_idx`. With `valid_idx` and `trace_valid`, the validation loss is traced per epoch.
pub fn train(dataset: &Dataset, train_idx: &[usize], valid_idx: Option<&[usize]>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(dataset, train_idx, valid_idx, cfg, &TrainOptions::default())
}

pub fn train_with(
    dataset: &Dataset,
    train_idx: &[usize],
    valid_idx: Option<&[usize]>,
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_idx.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut warnings = Vec::new();
    let usable: Vec<usize> = train_idx
        .iter()
        .copied()
        .filter(|&i| {
            let ok = dataset.observations[i].span().is_some();
            if !ok {
                warnings.push(format!("observation `{}` has no samples; skipped", dataset.observations[i].id));
            }
            ok
        })
        .collect();
    let lambda = cfg.lambda.unwrap_or_else(|| default_lambda(dataset.max_timestamp(&usable)));
    let spec = cfg.model_spec(&dataset.schema, lambda);
    let mut params = ItgptParams::init(&spec, cfg.seed)?;
    let labeled = labeled_subset(dataset, &usable, cfg)?;
    let mut loss_cfg = LossConfig::new(cfg.scheme, labeled.iter().copied());
    loss_cfg.pretrain_epochs = cfg.pretrain_epochs;
    loss_cfg.finetune_epochs = cfg.finetune_epochs;
    loss_cfg.censored_class = cfg.censored_class;
    let mut adam = AdamState::new(&params.store);
    let mut trace = Vec::new();
    let mut snapshots = Vec::new();
    let mut failure = None;

    'epochs: for epoch in 1..=cfg.total_epochs() {
        let mut order = usable.clone();
        order.shuffle(&mut derived_rng(cfg.seed, SHUFFLE_STREAM, epoch as u64));
        let (mut loss_sum, mut counted) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Vec<Tensor> = params.store.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
            for &i in batch {
                let obs = &dataset.observations[i];
                let has_target = obs.target.as_ref().is_some_and(|t| !t.is_empty());
                let Some(objective) = objective_for(&loss_cfg, epoch, i, has_target)? else {
                    continue;
                };
                let mut rng = derived_rng(cfg.seed, DROPOUT_STREAM, ((epoch as u64) << 32) | i as u64);
                let result = observation_loss(&params, obs, objective, cfg.anchor_len, cfg.censored_class, Some(&mut rng), true);
                let out = match result {
                    Ok(out) => out,
                    Err(e) if is_numeric(&e) => {
                        failure = Some(Error::Diverged { epoch, loss: f64::NAN });
                        break 'epochs;
                    }
                    Err(e) => return Err(e),
                };
                if !out.loss.is_finite() {
                    failure = Some(Error::Diverged { epoch, loss: out.loss });
                    break 'epochs;
                }
                loss_sum += out.loss;
                counted += 1;
                for (a, g) in acc.iter_mut().zip(out.grads.expect("requested")) {
                    a.add_assign(&g);
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for a in &mut acc {
                a.data_mut().iter_mut().for_each(|v| *v *= scale);
            }
            if let Some(max) = cfg.grad_clip {
                clip_gradients(&mut acc, max);
            }
            // adam_step validates every gradient before touching the parameters
            if let Err(e) = adam_step(&mut params.store, &acc, &mut adam, cfg.learning_rate) {
                failure = Some(e);
                break 'epochs;
            }
        }
        let mean = if counted > 0 { loss_sum / counted as f64 } else { 0.0 };
        if counted == 0 {
            warnings.push(format!("epoch {epoch}: no observation contributed a loss"));
        }
        trace.push(TraceRow {
            epoch,
            split: "train".into(),
            objective: objective_name(cfg.scheme, epoch, cfg.pretrain_epochs).into(),
            loss: mean,
        });
        if cfg.trace_valid {
            if let Some(valid) = valid_idx {
                let eval = evaluate(&params, dataset, valid, cfg)?;
                trace.push(TraceRow {
                    epoch,
                    split: "valid".into(),
                    objective: "ce".into(),
                    loss: eval.ce.unwrap_or(f64::NAN),
                });
            }
        }
        if opts.keep_snapshots {
            snapshots.push(params.store.clone());
        }
    }
    Ok(TrainOutcome {
        params,
        trace,
        labeled,
        lambda,
        steps: adam.step,
        warnings,
        failure,
        snapshots,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub predictions: ScoredPredictions,
    pub summary: MetricSummary,
    /// Mean cross-entropy over included rows; `None` when no row was included.
    pub ce: Option<f64>,
}

/// Inference-mode metrics over the labeled observations in `idx`.
pub fn evaluate(params: &ItgptParams, dataset: &Dataset, idx: &[usize], cfg: &TrainConfig) -> Result<Evaluation> {
    let d_c = dataset.schema.num_classes;
    let mut scores = Vec::new();
    let mut truths = Vec::new();
    let mut included = Vec::new();
    let (mut ce_sum, mut ce_rows) = (0.0, 0usize);
    for &i in idx {
        let obs = &dataset.observations[i];
        let Some(target) = obs.target.as_ref().filter(|t| !t.is_empty()) else {
            continue;
        };
        let anchor = AnchorSpec::for_observation(obs, cfg.anchor_len)?;
        let mut tape = Tape::new();
        let vars = params.store.register_frozen(&mut tape);
        let chain = itgpt_forward(&mut tape, &vars, params, obs, &anchor, None)?;
        let out = predict_labels(&mut tape, &vars, params, chain.anchor, &anchor.times, &target.times)?;
        let probs = tape.softmax_rows(out.logits)?;
        let term = ce_loss(&mut tape, probs, &target.labels, &out.coverage, cfg.censored_class)?;
        if term.rows > 0 {
            ce_sum += tape.value(term.value).item() * term.rows as f64;
            ce_rows += term.rows;
        }
        let p = tape.value(probs);
        for (r, (&y, &covered)) in target.labels.iter().zip(&out.coverage).enumerate() {
            scores.extend_from_slice(p.row(r));
            truths.push(y);
            included.push(covered && Some(y) != cfg.censored_class);
        }
    }
    let n = truths.len();
    let predictions = ScoredPredictions::with_mask(Tensor::matrix(n, d_c, scores)?, truths, included)?;
    Ok(Evaluation {
        summary: summarize(&predictions),
        predictions,
        ce: (ce_rows > 0).then(|| ce_sum / ce_rows as f64),
    })
}

#[derive(Debug)]
pub struct FoldResult {
    pub outcome: TrainOutcome,
    pub evaluation: Evaluation,
}

/// Trains on a fold's training part and evaluates on its validation part.
pub fn run_fold(dataset: &Dataset, fold: &Fold, cfg: &TrainConfig) -> Result<FoldResult> {
    let outcome = train(dataset, &fold.train, Some(&fold.valid), cfg)?;
    let evaluation = evaluate(&outcome.params, dataset, &fold.valid, cfg)?;
    Ok(FoldResult { outcome, evaluation })
}

/// Cartesian grid over the varied hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub base: TrainConfig,
    pub schemes: Vec<Scheme>,
    pub depths: Vec<usize>,
    pub mixings: Vec<MixingKind>,
    pub dropouts: Vec<f64>,
    pub label_fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Folds to run; empty means all.
    pub only_folds: Vec<usize>,
}

impl GridSpec {
    pub fn single(base: TrainConfig) -> Self {
        GridSpec {
            schemes: vec![base.scheme],
            depths: vec![base.depth],
            mixings: vec![base.mixing],
            dropouts: vec![base.dropout],
            label_fractions: vec![base.label_fraction],
            seeds: vec![base.seed],
            only_folds: Vec::new(),
            base,
        }
    }

    pub fn configs(&self) -> Vec<TrainConfig> {
        let mut out = Vec::new();
        for &scheme in &self.schemes {
            for &depth in &self.depths {
                for &mixing in &self.mixings {
                    for &dropout in &self.dropouts {
                        for &label_fraction in &self.label_fractions {
                            for &seed in &self.seeds {
                                out.push(TrainConfig {
                                    scheme,
                                    depth,
                                    mixing,
                                    dropout,
                                    label_fraction,
                                    seed,
                                    ..self.base.clone()
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Grid keys are plural lists (`schemes`, `depths`, `mixings`, `dropouts`,
    /// `label_fractions`, `seeds`, `only_folds`); every other key sets the base config.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
            v.split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| parse_value(key, s.trim()))
                .collect()
        }
        let kv = KvFile::parse(text, origin)?;
        let mut base = TrainConfig::default();
        for (k, v) in kv.entries() {
            if !matches!(k, "schemes" | "depths" | "mixings" | "dropouts" | "label_fractions" | "seeds" | "only_folds") {
                base.set(k, v)?;
            }
        }
        let mut grid = GridSpec::single(base);
        for (k, v) in kv.entries() {
            match k {
                "schemes" => grid.schemes = v.split(',').map(|s| s.parse()).collect::<Result<_>>()?,
                "mixings" => grid.mixings = v.split(',').map(|s| s.parse()).collect::<Result<_>>()?,
                "depths" => grid.depths = list(k, v)?,
                "dropouts" => grid.dropouts = list(k, v)?,
                "label_fractions" => grid.label_fractions = list(k, v)?,
                "seeds" => grid.seeds = list(k, v)?,
                "only_folds" => grid.only_folds = list(k, v)?,
                _ => {}
            }
        }
        if grid.configs().is_empty() {
            return Err(Error::Config("experiment grid is empty".into()));
        }
        for c in grid.configs() {
            c.validate()?;
        }
        Ok(grid)
    }
}

/// One value of one metric for one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub fold: usize,
    pub scheme: Scheme,
    pub depth: usize,
    pub mixing: MixingKind,
    pub dropout: f64,
    pub label_fraction: f64,
    pub seed: u64,
    pub metric: String,
    pub value: Option<f64>,
}

impl ResultRow {
    pub fn from_summary(fold: usize, cfg: &TrainConfig, summary: &MetricSummary) -> Vec<ResultRow> {
        summary
            .named()
            .into_iter()
            .map(|(metric, value)| ResultRow {
                fold,
                scheme: cfg.scheme,
                depth: cfg.depth,
                mixing: cfg.mixing,
                dropout: cfg.dropout,
                label_fraction: cfg.label_fraction,
                seed: cfg.seed,
                metric,
                value,
            })
            .collect()
    }
}

#[derive(Debug, Default)]
pub struct GridOutcome {
    pub rows: Vec<ResultRow>,
    /// `(fold, config summary, error)` for cells that failed.
    pub failures: Vec<(usize, String, String)>,
}

/// Runs every (fold, config) cell. Folds come from `base.split_seed`, so
/// they are identical across configurations; a failing cell is recorded
/// and the grid continues.
pub fn run_experiment_grid(dataset: &Dataset, grid: &GridSpec) -> Result<GridOutcome> {
    run_experiment_grid_with(dataset, grid, |_, _, _| {})
}

/// Like [`run_experiment_grid`], calling `progress(fold, config, result)` after every cell.
pub fn run_experiment_grid_with(
    dataset: &Dataset,
    grid: &GridSpec,
    mut progress: impl FnMut(usize, &TrainConfig, &Result<FoldResult>),
) -> Result<GridOutcome> {
    let configs = grid.configs();
    if configs.is_empty() {
        return Err(Error::Config("experiment grid is empty".into()));
    }
    let folds = split_kfold(dataset.len(), grid.base.folds, grid.base.split_seed)?;
    let mut outcome = GridOutcome::default();
    for (f, fold) in folds.iter().enumerate() {
        if !grid.only_folds.is_empty() && !grid.only_folds.contains(&f) {
            continue;
        }
        for cfg in &configs {
            let result = run_fold(dataset, fold, cfg);
            progress(f, cfg, &result);
            match result {
                Ok(r) => {
                    if let Some(e) = &r.outcome.failure {
                        outcome.failures.push((f, describe(cfg), e.to_string()));
                    }
                    outcome.rows.extend(ResultRow::from_summary(f, cfg, &r.evaluation.summary));
                }
                Err(e) => outcome.failures.push((f, describe(cfg), e.to_string())),
            }
        }
    }
    Ok(outcome)
}

fn describe(cfg: &TrainConfig) -> String {
    format!(
        "scheme={} depth={} mixing={} dropout={} p_l={} seed={}",
        cfg.scheme, cfg.depth, cfg.mixing, cfg.dropout, cfg.label_fraction, cfg.seed
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthModality, SynthSpec};

    fn tiny_data(n: usize) -> Dataset {
        let spec = SynthSpec {
            observations: n,
            modalities: vec![
                SynthModality { name: "a".into(), dim: 2, rate: 1.5, missing: 0.0 },
                SynthModality { name: "b".into(), dim: 1, rate: 1.0, missing: 0.0 },
            ],
            targets_per_observation: 3,
            ..SynthSpec::default()
        };
        synth_generate(&spec, 3).unwrap()
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            d_k: 4,
            d_a: 4,
            anchor_len: 6,
            batch_size: 4,
            epochs: 2,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.0, -2.0])).unwrap();
        let mut st = AdamState::new(&store);
        st.m[0] = Tensor::vector(vec![0.5, 0.5]);
        adam_step(&mut store, &[Tensor::zeros(&[2])], &mut st, 0.1).unwrap();
        assert_eq!(st.m[0].data(), &[0.45, 0.45]);
        let mut fresh = ParamStore::new();
        fresh.insert("w", Tensor::vector(vec![1.0, -2.0])).unwrap();
        let mut st = AdamState::new(&fresh);
        adam_step(&mut fresh, &[Tensor::zeros(&[2])], &mut st, 0.1).unwrap();
        assert_eq!(fresh.by_name("w").unwrap().data(), &[1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_is_lr_sign() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![0.0, 0.0, 0.0])).unwrap();
        let mut st = AdamState::new(&store);
        adam_step(&mut store, &[Tensor::vector(vec![3.0, -0.01, 0.0])], &mut st, 0.1).unwrap();
        let w = store.by_name("w").unwrap().data();
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + ε)
        assert!((w[0] + 0.1 * 3.0 / (3.0 + ADAM_EPS)).abs() < 1e-15);
        assert!((w[1] - 0.1 * 0.01 / (0.01 + ADAM_EPS)).abs() < 1e-15);
        assert_eq!(w[2], 0.0);
        assert!((w[0] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn adam_rejects_non_finite_with_path() {
        let mut store = ParamStore::new();
        store.insert("layer0.encoder.m0.w_key", Tensor::vector(vec![1.0])).unwrap();
        let mut st = AdamState::new(&store);
        let err = adam_step(&mut store, &[Tensor::vector(vec![f64::NAN])], &mut st, 0.1).unwrap_err();
        assert!(err.to_string().contains("layer0.encoder.m0.w_key"));
        assert_eq!(store.by_name("layer0.encoder.m0.w_key").unwrap().data(), &[1.0]);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn clipping_scales_to_norm() {
        let mut g = vec![Tensor::vector(vec![3.0, 4.0])];
        assert_eq!(clip_gradients(&mut g, 1.0), 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn objective_dispatch() {
        let ce = LossConfig::new(Scheme::Ce, [0]);
        assert_eq!(objective_for(&ce, 1, 0, true).unwrap(), Some(Objective::Ce));
        assert_eq!(objective_for(&ce, 1, 1, true).unwrap(), None);
        let ssl = LossConfig::new(Scheme::CeSsl, [0]);
        assert_eq!(objective_for(&ssl, 1, 0, true).unwrap(), Some(Objective::MseCe));
        assert_eq!(objective_for(&ssl, 1, 1, true).unwrap(), Some(Objective::Mse));
        let gpt = LossConfig::new(Scheme::GptThenCe, [0]);
        assert_eq!(objective_for(&gpt, 2, 0, true).unwrap(), Some(Objective::Mse));
        assert_eq!(objective_for(&gpt, 3, 0, true).unwrap(), Some(Objective::Ce));
        assert_eq!(objective_for(&gpt, 3, 1, true).unwrap(), None);
    }

    #[test]
    fn training_runs_and_is_deterministic() {
        let data = tiny_data(12);
        let idx: Vec<usize> = (0..12).collect();
        let a = train(&data, &idx, None, &tiny_cfg()).unwrap();
        let b = train(&data, &idx, None, &tiny_cfg()).unwrap();
        assert!(a.failure.is_none());
        assert_eq!(a.params.store, b.params.store);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.trace.len(), 2);
        assert_eq!(a.steps, 6);
    }

    #[test]
    fn zero_dropout_train_mode_matches_eval_mode() {
        let data = tiny_data(3);
        let params = ItgptParams::init(&tiny_cfg().model_spec(&data.schema, 100.0), 0).unwrap();
        let obs = &data.observations[1];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let train_mode = observation_loss(&params, obs, Objective::MseCe, 6, None, Some(&mut rng), true).unwrap();
        let eval_mode = observation_loss(&params, obs, Objective::MseCe, 6, None, None, false).unwrap();
        assert_eq!(train_mode.loss, eval_mode.loss);
    }

    #[test]
    fn grid_row_count_and_repeatability() {
        let data = tiny_data(10);
        let mut grid = GridSpec::single(TrainConfig { epochs: 1, ..tiny_cfg() });
        grid.base.folds = 5;
        let a = run_experiment_grid(&data, &grid).unwrap();
        assert!(a.failures.is_empty(), "{:?}", a.failures);
        let folds: std::collections::BTreeSet<usize> = a.rows.iter().map(|r| r.fold).collect();
        assert_eq!(folds.len(), 5);
        let per_fold = a.rows.iter().filter(|r| r.fold == 0).count();
        assert_eq!(a.rows.len(), 5 * per_fold);
        let b = run_experiment_grid(&data, &grid).unwrap();
        assert_eq!(a.rows, b.rows);
    }

    #[test]
    fn grid_text_parsing() {
        let g = GridSpec::parse("schemes = CE, CE+SSL\ndepths = 1,2\nepochs = 3\n", Path::new("g")).unwrap();
        assert_eq!(g.configs().len(), 4);
        assert_eq!(g.base.epochs, 3);
        assert!(GridSpec::parse("depths =\n", Path::new("g")).is_err());
    }
}
