//! Stacked encoder/decoder chain around a residual anchor state.
//!
//! Layer `l`:
//!
//! ```text
//! A   = ITNet({E_m, τ_m})            evaluated at the anchor times
//! Z   = Z + dropout(relu(A))         Z starts at zero
//! E_m = affine_m(attend(τ_m ← Z))    back to d_m features per modality
//! ```
//!
//! `E_m` of layer 0 is the raw modality data. A label head attends the final
//! anchor state at the target times; per-modality heads map the final `E_m`
//! to one-step-ahead predictions of the inputs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{attend, AttentionEncoding};
use crate::autodiff::{Tape, Tensor, Var};
use crate::data::Observation;
use crate::error::{Error, Result};
use crate::itnet::{dropout, itnet_forward, Affine, AttentionParams, ItnetParams, MixingKind, TimedInput};
use crate::params::ParamStore;
use crate::time_encoding::check_sorted;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub modality_dims: Vec<usize>,
    pub num_classes: usize,
    pub d_k: usize,
    pub d_o: usize,
    pub d_a: usize,
    pub depth: usize,
    pub mixing: MixingKind,
    pub dropout: f64,
    /// Learn a `d_k × d_k` map on the query encodings (identity at init).
    pub query_map: bool,
    /// Wavelength scale of the time encoding.
    pub lambda: f64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.modality_dims.is_empty() || self.modality_dims.contains(&0) {
            return Err(Error::Config("every model needs at least one modality of positive dimension".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        if self.depth == 0 {
            return Err(Error::Config("chain depth must be at least 1".into()));
        }
        if self.d_a == 0 {
            return Err(Error::Config("anchor dimension d_a must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        self.encoding().map(|_| ())
    }

    pub fn encoding(&self) -> Result<AttentionEncoding> {
        AttentionEncoding::new(self.d_k, self.d_o, self.lambda)
    }
}

/// Shared timeline onto which every layer's encoder projects.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSpec {
    pub times: Vec<f64>,
}

impl AnchorSpec {
    /// `len` evenly spaced points from `lo` to `hi`, both included.
    pub fn uniform(lo: f64, hi: f64, len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::Config("anchor length must be positive".into()));
        }
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Invalid(format!("bad anchor range [{lo}, {hi}]")));
        }
        let times = if len == 1 {
            vec![hi]
        } else {
            (0..len)
                .map(|i| {
                    if i == len - 1 {
                        hi
                    } else {
                        lo + (hi - lo) * (i as f64 / (len - 1) as f64)
                    }
                })
                .collect()
        };
        Ok(AnchorSpec { times })
    }

    /// Uniform grid over the observation's span (modalities and targets).
    pub fn for_observation(obs: &Observation, len: usize) -> Result<Self> {
        let (lo, hi) = obs
            .span()
            .ok_or_else(|| Error::Invalid(format!("observation `{}` has no timestamps", obs.id)))?;
        AnchorSpec::uniform(lo, hi, len)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn check(&self, obs: &Observation) -> Result<()> {
        if self.times.is_empty() {
            return Err(Error::Config("anchor timeline is empty".into()));
        }
        check_sorted(&self.times, "anchor timeline")?;
        if let Some((lo, hi)) = obs.span() {
            let (a, b) = (self.times[0], self.times[self.times.len() - 1]);
            if a > lo || b < hi {
                return Err(Error::Invalid(format!(
                    "anchor timeline [{a}, {b}] does not span observation `{}` [{lo}, {hi}]",
                    obs.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead {
    pub attention: AttentionParams,
    pub out: Affine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub encoder: ItnetParams,
    pub decoder: Vec<AttentionHead>,
}

/// All parameters of the chain, plus the layout that addresses them.
#[derive(Debug, Clone, PartialEq)]
pub struct ItgptParams {
    pub spec: ModelSpec,
    pub store: ParamStore,
    pub layers: Vec<LayerParams>,
    pub label_head: AttentionHead,
    pub ssl_heads: Vec<Affine>,
}

impl ItgptParams {
    /// Seeded initialization. Parameter paths:
    /// `layer{l}.encoder.m{m}.w_key`, `layer{l}.encoder.mix{j}.weight`,
    /// `layer{l}.decoder.m{m}.w_value`, `layer{l}.decoder.m{m}.out.bias`,
    /// `label_head.w_key`, `label_head.out.weight`, `ssl_head.m{m}.bias`, ...
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let enc = spec.encoding()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut layers = Vec::with_capacity(spec.depth);
        for l in 0..spec.depth {
            let encoder = ItnetParams::init(
                &mut store,
                &format!("layer{l}.encoder"),
                &spec.modality_dims,
                &enc,
                spec.query_map,
                spec.mixing,
                spec.d_a,
                spec.d_a,
                spec.dropout,
                &mut rng,
            )?;
            let decoder = spec
                .modality_dims
                .iter()
                .enumerate()
                .map(|(m, &d_m)| {
                    let prefix = format!("layer{l}.decoder.m{m}");
                    Ok(AttentionHead {
                        attention: AttentionParams::init(&mut store, &prefix, spec.d_a, &enc, spec.query_map, &mut rng)?,
                        out: Affine::init(&mut store, &format!("{prefix}.out"), spec.d_o, d_m, &mut rng)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            layers.push(LayerParams { encoder, decoder });
        }
        let label_head = AttentionHead {
            attention: AttentionParams::init(&mut store, "label_head", spec.d_a, &enc, spec.query_map, &mut rng)?,
            out: Affine::init(&mut store, "label_head.out", spec.d_o, spec.num_classes, &mut rng)?,
        };
        let ssl_heads = spec
            .modality_dims
            .iter()
            .enumerate()
            .map(|(m, &d_m)| Affine::init(&mut store, &format!("ssl_head.m{m}"), d_m, d_m, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(ItgptParams {
            spec: spec.clone(),
            store,
            layers,
            label_head,
            ssl_heads,
        })
    }

    pub fn param_count(&self) -> usize {
        self.store.size()
    }

    /// Whether a parameter path belongs to the label head.
    pub fn is_label_head(name: &str) -> bool {
        name.starts_with("label_head.")
    }
}

/// Tape handles produced by [`itgpt_forward`].
#[derive(Debug, Clone)]
pub struct ChainOutput {
    /// Final anchor state `Z`, `L_a × d_a`.
    pub anchor: Var,
    /// Final per-modality embeddings, `L_m × d_m` each.
    pub embeddings: Vec<Var>,
    /// Whether each modality row had at least one strictly earlier anchor point.
    pub coverage: Vec<Vec<bool>>,
}

fn check_observation(spec: &ModelSpec, obs: &Observation) -> Result<()> {
    if obs.modalities.len() != spec.modality_dims.len() {
        return Err(Error::Schema(format!(
            "model expects {} modalities, observation `{}` has {}",
            spec.modality_dims.len(),
            obs.id,
            obs.modalities.len()
        )));
    }
    for (series, &d) in obs.modalities.iter().zip(&spec.modality_dims) {
        if series.dim() != d {
            return Err(Error::Schema(format!(
                "modality `{}` has dimension {}, model expects {d}",
                series.name,
                series.dim()
            )));
        }
    }
    Ok(())
}

/// Runs the chain on one observation. `rng` enables dropout (training mode).
pub fn itgpt_forward(
    tape: &mut Tape,
    vars: &[Var],
    params: &ItgptParams,
    obs: &Observation,
    anchor: &AnchorSpec,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<ChainOutput> {
    let spec = &params.spec;
    check_observation(spec, obs)?;
    anchor.check(obs)?;
    let enc = spec.encoding()?;
    let mut embeddings: Vec<Var> = obs
        .modalities
        .iter()
        .map(|m| tape.constant(m.values.clone()))
        .collect();
    let mut z = tape.constant(Tensor::zeros(&[anchor.len(), spec.d_a]));
    let mut coverage = vec![Vec::new(); obs.modalities.len()];
    for layer in &params.layers {
        let inputs: Vec<TimedInput<'_>> = obs
            .modalities
            .iter()
            .zip(&embeddings)
            .map(|(m, &data)| TimedInput { times: &m.times, data })
            .collect();
        let a = itnet_forward(tape, vars, &layer.encoder, &inputs, &anchor.times, &enc, rng.as_deref_mut())?;
        let act = tape.relu(a.output)?;
        let dropped = dropout(tape, act, spec.dropout, rng.as_deref_mut())?;
        z = tape.add(z, dropped)?;
        for (m, head) in layer.decoder.iter().enumerate() {
            let att = attend(tape, &obs.modalities[m].times, &anchor.times, z, &head.attention.vars(vars), &enc)?;
            embeddings[m] = head.out.apply(tape, vars, att.values)?;
            coverage[m] = att.coverage;
        }
    }
    Ok(ChainOutput {
        anchor: z,
        embeddings,
        coverage,
    })
}

#[derive(Debug, Clone)]
pub struct LabelOutput {
    /// `L_y × d_c` logits; uncovered rows are zero.
    pub logits: Var,
    pub coverage: Vec<bool>,
}

/// Causal attention from the anchor state at the target times, then an affine map to class logits.
pub fn predict_labels(
    tape: &mut Tape,
    vars: &[Var],
    params: &ItgptParams,
    anchor_state: Var,
    anchor_times: &[f64],
    target_times: &[f64],
) -> Result<LabelOutput> {
    let enc = params.spec.encoding()?;
    let head = &params.label_head;
    let att = attend(tape, target_times, anchor_times, anchor_state, &head.attention.vars(vars), &enc)?;
    let logits = head.out.apply(tape, vars, att.values)?;
    let d_c = params.spec.num_classes;
    let mask: Vec<f64> = att
        .coverage
        .iter()
        .flat_map(|&c| std::iter::repeat_n(if c { 1.0 } else { 0.0 }, d_c))
        .collect();
    let mask = tape.constant(Tensor::matrix(target_times.len(), d_c, mask)?);
    let logits = tape.mul(logits, mask)?;
    Ok(LabelOutput {
        logits,
        coverage: att.coverage,
    })
}

/// Per-modality affine heads on the final embeddings; row `t` predicts the sample at `τ_m[t]`.
pub fn predict_next_inputs(tape: &mut Tape, vars: &[Var], params: &ItgptParams, embeddings: &[Var]) -> Result<Vec<Var>> {
    if embeddings.len() != params.ssl_heads.len() {
        return Err(Error::Invalid(format!(
            "{} embeddings for {} prediction heads",
            embeddings.len(),
            params.ssl_heads.len()
        )));
    }
    embeddings
        .iter()
        .zip(&params.ssl_heads)
        .map(|(&e, head)| head.apply(tape, vars, e))
        .collect()
}

/// Every model output for one observation, as plain tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub anchor: Tensor,
    pub embeddings: Vec<Tensor>,
    pub embedding_coverage: Vec<Vec<bool>>,
    pub next_inputs: Vec<Tensor>,
    /// Present when the observation has a target timeline.
    pub logits: Option<Tensor>,
    pub label_coverage: Vec<bool>,
}

impl ItgptParams {
    /// Inference-mode forward pass (no dropout, no gradients).
    pub fn predict(&self, obs: &Observation, anchor: &AnchorSpec) -> Result<Prediction> {
        let mut tape = Tape::new();
        let vars = self.store.register_frozen(&mut tape);
        let chain = itgpt_forward(&mut tape, &vars, self, obs, anchor, None)?;
        let next = predict_next_inputs(&mut tape, &vars, self, &chain.embeddings)?;
        let (logits, label_coverage) = match &obs.target {
            Some(target) => {
                let out = predict_labels(&mut tape, &vars, self, chain.anchor, &anchor.times, &target.times)?;
                (Some(tape.value(out.logits).clone()), out.coverage)
            }
            None => (None, Vec::new()),
        };
        Ok(Prediction {
            anchor: tape.value(chain.anchor).clone(),
            embeddings: chain.embeddings.iter().map(|&v| tape.value(v).clone()).collect(),
            embedding_coverage: chain.coverage,
            next_inputs: next.iter().map(|&v| tape.value(v).clone()).collect(),
            logits,
            label_coverage,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ModalitySeries, Target};

    pub(crate) fn toy_spec(depth: usize) -> ModelSpec {
        ModelSpec {
            modality_dims: vec![2, 1],
            num_classes: 3,
            d_k: 4,
            d_o: 4,
            d_a: 6,
            depth,
            mixing: MixingKind::Linear,
            dropout: 0.0,
            query_map: false,
            lambda: 50.0,
        }
    }

    fn toy_obs() -> Observation {
        Observation {
            id: "toy".into(),
            modalities: vec![
                ModalitySeries::new(
                    "a",
                    vec![0.0, 1.0, 2.5, 4.0],
                    Tensor::matrix(4, 2, vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6, 0.7, 0.8]).unwrap(),
                )
                .unwrap(),
                ModalitySeries::new("b", vec![0.5, 3.0], Tensor::matrix(2, 1, vec![1.0, -1.0]).unwrap()).unwrap(),
            ],
            target: Some(Target {
                times: vec![0.0, 2.0, 5.0],
                labels: vec![0, 1, 2],
            }),
        }
    }

    #[test]
    fn uniform_anchor_hits_endpoints() {
        let a = AnchorSpec::uniform(0.3, 7.1, 5).unwrap();
        assert_eq!(a.times[0], 0.3);
        assert_eq!(a.times[4], 7.1);
        assert!(a.times.windows(2).all(|w| w[0] < w[1]));
        assert!(AnchorSpec::uniform(0.0, 1.0, 0).is_err());
        assert_eq!(AnchorSpec::for_observation(&toy_obs(), 3).unwrap().times, vec![0.0, 2.5, 5.0]);
    }

    #[test]
    fn param_count_grows_by_one_layer() {
        let p1 = ItgptParams::init(&toy_spec(1), 0).unwrap().param_count();
        let p2 = ItgptParams::init(&toy_spec(2), 0).unwrap().param_count();
        let p3 = ItgptParams::init(&toy_spec(3), 0).unwrap().param_count();
        assert_eq!(p3 - p2, p2 - p1);
        // encoder: keys 2·4 + 1·4, values same, mixing 8·6 + 6; decoder: keys/values 6·4 ×2 per modality, affines 4·2+2, 4·1+1
        let per_layer = (12 + 12) + (48 + 6) + 2 * (24 + 24) + (8 + 2) + (4 + 1);
        assert_eq!(p2 - p1, per_layer);
    }

    #[test]
    fn negative_encoder_output_leaves_zero_anchor() {
        let mut params = ItgptParams::init(&toy_spec(1), 1).unwrap();
        // mixing weight zero and a negative bias: relu(A) = 0
        let w = params.store.id("layer0.encoder.mix0.weight").unwrap();
        let b = params.store.id("layer0.encoder.mix0.bias").unwrap();
        *params.store.get_mut(w) = Tensor::zeros(&[8, 6]);
        *params.store.get_mut(b) = Tensor::full(&[6], -1.0);
        let obs = toy_obs();
        let anchor = AnchorSpec::for_observation(&obs, 8).unwrap();
        let pred = params.predict(&obs, &anchor).unwrap();
        assert!(pred.anchor.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_decoder_gives_zero_embeddings() {
        let mut params = ItgptParams::init(&toy_spec(1), 2).unwrap();
        let names: Vec<String> = params
            .store
            .names()
            .iter()
            .filter(|n| n.starts_with("layer0.decoder") && (n.contains(".out.") || n.ends_with("w_value")))
            .cloned()
            .collect();
        for n in names {
            let id = params.store.id(&n).unwrap();
            let shape = params.store.get(id).shape().to_vec();
            *params.store.get_mut(id) = Tensor::zeros(&shape);
        }
        let obs = toy_obs();
        let pred = params.predict(&obs, &AnchorSpec::for_observation(&obs, 8).unwrap()).unwrap();
        for e in &pred.embeddings {
            assert!(e.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn first_target_uncovered_has_zero_logits() {
        let params = ItgptParams::init(&toy_spec(2), 3).unwrap();
        let obs = toy_obs();
        let pred = params.predict(&obs, &AnchorSpec::for_observation(&obs, 8).unwrap()).unwrap();
        let logits = pred.logits.unwrap();
        assert_eq!(pred.label_coverage, vec![false, true, true]);
        assert!(logits.row(0).iter().all(|&v| v == 0.0));
        assert!(logits.row(2).iter().any(|&v| v != 0.0));
        assert_eq!(pred.embedding_coverage[0], vec![false, true, true, true]);
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let params = ItgptParams::init(&toy_spec(1), 0).unwrap();
        let obs = toy_obs();
        let short = AnchorSpec::uniform(1.0, 2.0, 4).unwrap();
        assert!(params.predict(&obs, &short).unwrap_err().to_string().contains("does not span"));
        let mut bad = obs.clone();
        bad.modalities.pop();
        assert!(params.predict(&bad, &AnchorSpec::for_observation(&obs, 4).unwrap()).is_err());
        let mut spec = toy_spec(0);
        assert!(ItgptParams::init(&spec, 0).is_err());
        spec.depth = 1;
        spec.d_k = 3;
        assert!(ItgptParams::init(&spec, 0).is_err());
    }

    #[test]
    fn init_is_seeded() {
        let a = ItgptParams::init(&toy_spec(2), 11).unwrap();
        assert_eq!(a, ItgptParams::init(&toy_spec(2), 11).unwrap());
        assert_ne!(a.store, ItgptParams::init(&toy_spec(2), 12).unwrap().store);
        assert!(a.store.names().iter().any(|n| n == "layer1.decoder.m1.out.weight"));
        assert!(a.store.names().iter().any(|n| n == "ssl_head.m0.bias"));
    }
}
