//! Multimodal estimator: one causal cross-attention per modality onto a
//! shared output timeline, concatenated and passed through a mixing layer.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{attend, AttentionEncoding, AttentionVars};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{init_matrix, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MixingKind {
    Linear,
    Mlp1,
    Mlp2,
}

impl MixingKind {
    pub fn hidden_layers(self) -> usize {
        match self {
            MixingKind::Linear => 0,
            MixingKind::Mlp1 => 1,
            MixingKind::Mlp2 => 2,
        }
    }
}

impl fmt::Display for MixingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MixingKind::Linear => "Linear",
            MixingKind::Mlp1 => "MLP1",
            MixingKind::Mlp2 => "MLP2",
        })
    }
}

impl FromStr for MixingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" => Ok(MixingKind::Linear),
            "mlp1" | "mlp/1" => Ok(MixingKind::Mlp1),
            "mlp2" | "mlp/2" => Ok(MixingKind::Mlp2),
            other => Err(Error::Config(format!(
                "unknown mixing layer `{other}`; expected Linear, MLP1 or MLP2"
            ))),
        }
    }
}

/// `x·W + b` with `W: d_in × d_out`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Affine {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Affine {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Affine {
            weight: store.insert(format!("{prefix}.weight"), init_matrix(rng, d_in, d_out))?,
            bias: store.insert(format!("{prefix}.bias"), Tensor::zeros(&[d_out]))?,
        })
    }

    pub fn apply(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let xw = tape.matmul(x, vars[self.weight.index()])?;
        Ok(tape.add_bias(xw, vars[self.bias.index()])?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionParams {
    pub w_key: ParamId,
    pub w_value: ParamId,
    pub w_query: Option<ParamId>,
}

impl AttentionParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        enc: &AttentionEncoding,
        query_map: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let (d_k, d_o) = (enc.key.dim, enc.value.dim);
        let w_key = store.insert(format!("{prefix}.w_key"), init_matrix(rng, d_in, d_k))?;
        let w_value = store.insert(format!("{prefix}.w_value"), init_matrix(rng, d_in, d_o))?;
        let w_query = if query_map {
            Some(store.insert(format!("{prefix}.w_query"), Tensor::identity(d_k))?)
        } else {
            None
        };
        Ok(AttentionParams {
            w_key,
            w_value,
            w_query,
        })
    }

    pub fn vars(&self, vars: &[Var]) -> AttentionVars {
        AttentionVars {
            w_key: vars[self.w_key.index()],
            w_value: vars[self.w_value.index()],
            w_query: self.w_query.map(|q| vars[q.index()]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixingLayer {
    pub kind: MixingKind,
    /// One affine map for Linear, then one more per hidden layer.
    pub layers: Vec<Affine>,
    pub dropout: f64,
}

impl MixingLayer {
    /// Hidden layers have width `hidden`.
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        kind: MixingKind,
        d_in: usize,
        hidden: usize,
        d_out: usize,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let n = kind.hidden_layers();
        let mut layers = Vec::with_capacity(n + 1);
        let mut width = d_in;
        for j in 0..=n {
            let next = if j == n { d_out } else { hidden };
            layers.push(Affine::init(store, &format!("{prefix}.mix{j}"), width, next, rng)?);
            width = next;
        }
        Ok(MixingLayer {
            kind,
            layers,
            dropout,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ItnetParams {
    pub per_modality: Vec<AttentionParams>,
    pub mixing: MixingLayer,
}

impl ItnetParams {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        modality_dims: &[usize],
        enc: &AttentionEncoding,
        query_map: bool,
        mixing: MixingKind,
        hidden: usize,
        d_out: usize,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let per_modality = modality_dims
            .iter()
            .enumerate()
            .map(|(m, &d)| AttentionParams::init(store, &format!("{prefix}.m{m}"), d, enc, query_map, rng))
            .collect::<Result<Vec<_>>>()?;
        let d_in = modality_dims.len() * enc.value.dim;
        let mixing = MixingLayer::init(store, prefix, mixing, d_in, hidden, d_out, dropout, rng)?;
        Ok(ItnetParams {
            per_modality,
            mixing,
        })
    }
}

/// Inverted dropout: kept entries are scaled by `1/(1−p)`. Identity when
/// `rng` is `None` (evaluation) or `p == 0`.
pub fn dropout(tape: &mut Tape, x: Var, p: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
    let Some(rng) = rng else { return Ok(x) };
    if p <= 0.0 {
        return Ok(x);
    }
    if p >= 1.0 {
        return Err(Error::Config(format!("dropout probability must be below 1, got {p}")));
    }
    let keep = 1.0 / (1.0 - p);
    let shape = tape.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let mask: Vec<f64> = (0..n)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    let mask = tape.constant(Tensor::new(shape, mask)?);
    Ok(tape.mul(x, mask)?)
}

/// Applies the mixing layer row-wise: affine, then (ReLU, dropout, affine)
/// once per hidden layer.
pub fn mixing_apply(
    tape: &mut Tape,
    vars: &[Var],
    layer: &MixingLayer,
    x: Var,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let expected = tape.value(vars[layer.layers[0].weight.index()]).rows();
    let width = tape.shape(x).get(1).copied().unwrap_or(0);
    if width != expected {
        return Err(Error::Invalid(format!(
            "mixing layer expects width {expected}, got {width}"
        )));
    }
    let mut h = layer.layers[0].apply(tape, vars, x)?;
    for affine in &layer.layers[1..] {
        let act = tape.relu(h)?;
        let dropped = dropout(tape, act, layer.dropout, rng.as_deref_mut())?;
        h = affine.apply(tape, vars, dropped)?;
    }
    Ok(h)
}

#[derive(Debug, Clone)]
pub struct ItnetOutput {
    /// `L_out × d_out`
    pub output: Var,
    /// Per modality, per output time: whether a strictly earlier sample exists.
    pub coverage: Vec<Vec<bool>>,
}

/// One modality's input to an encoder: timestamps and `L_m × d_m` data.
#[derive(Debug, Clone, Copy)]
pub struct TimedInput<'a> {
    pub times: &'a [f64],
    pub data: Var,
}

pub fn itnet_forward(
    tape: &mut Tape,
    vars: &[Var],
    params: &ItnetParams,
    modalities: &[TimedInput<'_>],
    out_times: &[f64],
    enc: &AttentionEncoding,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<ItnetOutput> {
    if modalities.len() != params.per_modality.len() {
        return Err(Error::Invalid(format!(
            "encoder has {} modality blocks, got {} modalities",
            params.per_modality.len(),
            modalities.len()
        )));
    }
    let mut blocks = Vec::with_capacity(modalities.len());
    let mut coverage = Vec::with_capacity(modalities.len());
    for (input, attn) in modalities.iter().zip(&params.per_modality) {
        let out = attend(tape, out_times, input.times, input.data, &attn.vars(vars), enc)?;
        blocks.push(out.values);
        coverage.push(out.coverage);
    }
    let concat = tape.concat_cols(&blocks)?;
    let output = mixing_apply(tape, vars, &params.mixing, concat, rng.as_deref_mut())?;
    Ok(ItnetOutput { output, coverage })
}
