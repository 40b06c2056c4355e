//! Training losses and the per-epoch loss schedule.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::Observation;
use crate::error::{Error, Result};

/// Probabilities are clamped to this floor before the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    /// Cross-entropy on labeled observations only.
    Ce,
    /// Next-step MSE on every observation plus cross-entropy where labeled.
    CeSsl,
    /// MSE pretraining epochs, then cross-entropy fine-tuning.
    GptThenCe,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Ce, Scheme::CeSsl, Scheme::GptThenCe];
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Ce => "CE",
            Scheme::CeSsl => "CE+SSL",
            Scheme::GptThenCe => "GPT->CE",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .trim()
            .to_ascii_uppercase()
            .replace('→', "->")
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect();
        match norm.as_str() {
            "CE" => Ok(Scheme::Ce),
            "CE+SSL" | "CE_SSL" | "CESSL" => Ok(Scheme::CeSsl),
            "GPT->CE" | "GPT_THEN_CE" | "GPTTHENCE" | "GPT-CE" => Ok(Scheme::GptThenCe),
            _ => Err(Error::Config(format!(
                "unknown scheme `{s}`; expected one of CE, CE+SSL (or CE_SSL), GPT->CE (or GPT→CE, GPT_then_CE)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub scheme: Scheme,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    /// Observations whose labels the supervised term may use.
    pub labeled: BTreeSet<usize>,
    /// Class excluded from the cross-entropy term.
    pub censored_class: Option<usize>,
}

impl LossConfig {
    pub fn new(scheme: Scheme, labeled: impl IntoIterator<Item = usize>) -> Self {
        LossConfig {
            scheme,
            pretrain_epochs: 2,
            finetune_epochs: 5,
            labeled: labeled.into_iter().collect(),
            censored_class: None,
        }
    }

    pub fn is_labeled(&self, i: usize) -> bool {
        self.labeled.contains(&i)
    }

    /// Epoch budget: the schedule length for GPT->CE, `epochs` otherwise.
    pub fn total_epochs(&self, epochs: usize) -> usize {
        match self.scheme {
            Scheme::GptThenCe => self.pretrain_epochs + self.finetune_epochs,
            _ => epochs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    UseMse,
    UseCe,
    Skip,
}

/// Loss choice for observation `i` at 1-based `epoch` under GPT->CE.
pub fn schedule_select(epoch: usize, i: usize, cfg: &LossConfig) -> Result<Phase> {
    if cfg.scheme != Scheme::GptThenCe {
        return Err(Error::Config(format!("schedule_select applies to GPT->CE, not {}", cfg.scheme)));
    }
    let total = cfg.pretrain_epochs + cfg.finetune_epochs;
    if epoch == 0 || epoch > total {
        return Err(Error::Config(format!("epoch {epoch} outside the schedule 1..={total}")));
    }
    Ok(if epoch <= cfg.pretrain_epochs {
        Phase::UseMse
    } else if cfg.is_labeled(i) {
        Phase::UseCe
    } else {
        Phase::Skip
    })
}

/// `ssl + 1(i ∈ 𝓛) · ce`.
pub fn combined_loss(i: usize, cfg: &LossConfig, ce: f64, ssl: f64) -> Result<f64> {
    if cfg.scheme != Scheme::CeSsl {
        return Err(Error::Config(format!("combined loss applies to CE+SSL, not {}", cfg.scheme)));
    }
    Ok(if cfg.is_labeled(i) { ssl + ce } else { ssl })
}

/// A scalar loss on the tape and the number of rows it averages or sums over.
#[derive(Debug, Clone, Copy)]
pub struct LossTerm {
    pub value: Var,
    pub rows: usize,
}

impl LossTerm {
    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }
}

/// Mean cross-entropy over included rows of `probs` (`L_y × d_c`).
///
/// Rows are excluded when uncovered or labeled with the censored class. An
/// empty inclusion set yields a constant zero with `rows == 0`.
pub fn ce_loss(
    tape: &mut Tape,
    probs: Var,
    labels: &[usize],
    coverage: &[bool],
    censored_class: Option<usize>,
) -> Result<LossTerm> {
    let shape = tape.shape(probs).to_vec();
    if shape.len() != 2 || shape[0] != labels.len() || coverage.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "cross-entropy: probabilities {shape:?} for {} labels and {} coverage flags",
            labels.len(),
            coverage.len()
        )));
    }
    let d_c = shape[1];
    let mut mask = Tensor::zeros(&shape);
    let mut rows = 0;
    for (r, (&y, &covered)) in labels.iter().zip(coverage).enumerate() {
        if y >= d_c {
            return Err(Error::Invalid(format!("label {y} outside 0..{d_c}")));
        }
        if covered && Some(y) != censored_class {
            mask.set(r, y, 1.0);
            rows += 1;
        }
    }
    if rows == 0 {
        return Ok(LossTerm {
            value: tape.constant(Tensor::scalar(0.0)),
            rows,
        });
    }
    let logp = tape.ln_clamped(probs, PROB_FLOOR)?;
    let mask = tape.constant(mask);
    let picked = tape.mul(logp, mask)?;
    let total = tape.sum_all(picked)?;
    let value = tape.scale(total, -1.0 / rows as f64)?;
    Ok(LossTerm { value, rows })
}

/// `Σ_m (1/L_m) Σ_t ‖x_t − x̂_t‖²` over covered rows other than each modality's first.
pub fn ssl_mse_loss(tape: &mut Tape, obs: &Observation, predictions: &[Var], coverage: &[Vec<bool>]) -> Result<LossTerm> {
    if predictions.len() != obs.modalities.len() || coverage.len() != obs.modalities.len() {
        return Err(Error::Invalid(format!(
            "next-step loss: {} predictions / {} coverage lists for {} modalities",
            predictions.len(),
            coverage.len(),
            obs.modalities.len()
        )));
    }
    let mut terms = Vec::new();
    let mut rows = 0;
    for ((series, &pred), cov) in obs.modalities.iter().zip(predictions).zip(coverage) {
        if tape.shape(pred) != series.values.shape() || cov.len() != series.len() {
            return Err(Error::Invalid(format!(
                "modality `{}`: prediction {:?} vs data {:?}",
                series.name,
                tape.shape(pred),
                series.values.shape()
            )));
        }
        let d = series.dim();
        let mut mask = Tensor::zeros(series.values.shape());
        let mut used = 0;
        for (t, &c) in cov.iter().enumerate().skip(1) {
            if c {
                mask.row_mut(t).fill(1.0);
                used += 1;
            }
        }
        if used == 0 || d == 0 {
            continue;
        }
        rows += used;
        let data = tape.constant(series.values.clone());
        let diff = tape.sub(pred, data)?;
        let sq = tape.mul(diff, diff)?;
        let mask = tape.constant(mask);
        let masked = tape.mul(sq, mask)?;
        let total = tape.sum_all(masked)?;
        terms.push(tape.scale(total, 1.0 / series.len() as f64)?);
    }
    let Some((&first, rest)) = terms.split_first() else {
        return Ok(LossTerm {
            value: tape.constant(Tensor::scalar(0.0)),
            rows: 0,
        });
    };
    let mut value = first;
    for &t in rest {
        value = tape.add(value, t)?;
    }
    Ok(LossTerm { value, rows })
}

/// Plain-value cross-entropy; the flag is true when no row was included.
pub fn ce_loss_value(
    labels: &[usize],
    probs: &Tensor,
    coverage: &[bool],
    censored_class: Option<usize>,
) -> Result<(f64, bool)> {
    let mut tape = Tape::new();
    let p = tape.constant(probs.clone());
    let term = ce_loss(&mut tape, p, labels, coverage, censored_class)?;
    Ok((tape.value(term.value).item(), term.is_empty()))
}

/// Deterministic label subset of size `round(p_l · N)`.
///
/// `classes[j]` is the stratum of `indices[j]` (e.g. its majority class);
/// each stratum contributes in proportion to its size, remainders going to
/// the strata with the largest fractional share.
pub fn subsample_labels(indices: &[usize], classes: &[Option<usize>], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("label fraction must lie in (0, 1], got {fraction}")));
    }
    if classes.len() != indices.len() {
        return Err(Error::Invalid("one stratum per index required".into()));
    }
    let n = indices.len();
    let size = (fraction * n as f64).round() as usize;
    if size == 0 {
        return Err(Error::Config(format!(
            "label fraction {fraction} of {n} observations selects nobody; increase the fraction or the dataset size"
        )));
    }
    let mut strata: Vec<(Option<usize>, Vec<usize>)> = Vec::new();
    for (&i, &c) in indices.iter().zip(classes) {
        match strata.iter_mut().find(|(k, _)| *k == c) {
            Some((_, members)) => members.push(i),
            None => strata.push((c, vec![i])),
        }
    }
    strata.sort_by_key(|(k, _)| *k);
    let mut quota: Vec<(usize, f64)> = strata
        .iter()
        .map(|(_, members)| {
            let exact = size as f64 * members.len() as f64 / n as f64;
            (exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let mut missing = size - quota.iter().map(|q| q.0).sum::<usize>();
    let mut order: Vec<usize> = (0..quota.len()).collect();
    order.sort_by(|&a, &b| quota[b].1.total_cmp(&quota[a].1).then(a.cmp(&b)));
    for &s in order.iter().cycle() {
        if missing == 0 {
            break;
        }
        if quota[s].0 < strata[s].1.len() {
            quota[s].0 += 1;
            missing -= 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(size);
    for ((_, members), (take, _)) in strata.iter_mut().zip(&quota) {
        members.sort_unstable();
        members.shuffle(&mut rng);
        chosen.extend_from_slice(&members[..*take]);
    }
    chosen.sort_unstable();
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::data::{ModalitySeries, Observation};

    #[test]
    fn scheme_spellings() {
        for s in ["CE", "ce"] {
            assert_eq!(s.parse::<Scheme>().unwrap(), Scheme::Ce);
        }
        for s in ["CE+SSL", "CE_SSL"] {
            assert_eq!(s.parse::<Scheme>().unwrap(), Scheme::CeSsl);
        }
        for s in ["GPT->CE", "GPT→CE", "GPT_then_CE"] {
            assert_eq!(s.parse::<Scheme>().unwrap(), Scheme::GptThenCe);
        }
        let err = "SSL".parse::<Scheme>().unwrap_err().to_string();
        assert!(err.contains("CE+SSL") && err.contains("GPT->CE"), "{err}");
        for s in Scheme::ALL {
            assert_eq!(s.to_string().parse::<Scheme>().unwrap(), s);
        }
    }

    #[test]
    fn ce_examples() {
        let perfect = Tensor::matrix(2, 3, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let (v, empty) = ce_loss_value(&[0, 2], &perfect, &[true, true], None).unwrap();
        assert_eq!(v, 0.0);
        assert!(!empty);

        let uniform = Tensor::full(&[4, 5], 0.2);
        let (v, _) = ce_loss_value(&[0, 1, 2, 4], &uniform, &[true; 4], None).unwrap();
        assert!((v - 5f64.ln()).abs() < 1e-12);
        assert!((v - 1.6094).abs() < 1e-4);

        let (v, empty) = ce_loss_value(&[5, 5], &Tensor::full(&[2, 6], 1.0 / 6.0), &[true, true], Some(5)).unwrap();
        assert_eq!(v, 0.0);
        assert!(empty);
    }

    #[test]
    fn ce_clamps_and_skips_uncovered() {
        let p = Tensor::matrix(2, 2, vec![0.0, 1.0, 0.5, 0.5]).unwrap();
        let (v, _) = ce_loss_value(&[0, 0], &p, &[true, false], None).unwrap();
        assert!((v - 1e12f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn ssl_hand_example() {
        let obs = Observation {
            id: "x".into(),
            modalities: vec![ModalitySeries::new("a", vec![0.0, 1.0, 2.0], Tensor::matrix(3, 1, vec![1.0, 2.0, 3.0]).unwrap()).unwrap()],
            target: None,
        };
        let mut tape = Tape::new();
        // row 0 is never counted, whatever its value
        let pred = tape.constant(Tensor::matrix(3, 1, vec![100.0, 0.0, 0.0]).unwrap());
        let term = ssl_mse_loss(&mut tape, &obs, &[pred], &[vec![true, true, true]]).unwrap();
        assert!((tape.value(term.value).item() - 13.0 / 3.0).abs() < 1e-15);
        assert_eq!(term.rows, 2);

        let exact = tape.constant(obs.modalities[0].values.clone());
        let term = ssl_mse_loss(&mut tape, &obs, &[exact], &[vec![true; 3]]).unwrap();
        assert_eq!(tape.value(term.value).item(), 0.0);

        let term = ssl_mse_loss(&mut tape, &obs, &[pred], &[vec![false; 3]]).unwrap();
        assert_eq!(tape.value(term.value).item(), 0.0);
        assert!(term.is_empty());
    }

    #[test]
    fn combined_and_schedule() {
        let cfg = LossConfig::new(Scheme::CeSsl, [1, 3]);
        assert_eq!(combined_loss(0, &cfg, 0.5, 0.25).unwrap(), 0.25);
        assert_eq!(combined_loss(1, &cfg, 0.5, 0.25).unwrap(), 0.75);
        assert!(combined_loss(0, &LossConfig::new(Scheme::Ce, []), 0.5, 0.25).is_err());

        let gpt = LossConfig::new(Scheme::GptThenCe, [7]);
        assert_eq!(schedule_select(2, 0, &gpt).unwrap(), Phase::UseMse);
        assert_eq!(schedule_select(2, 7, &gpt).unwrap(), Phase::UseMse);
        assert_eq!(schedule_select(3, 7, &gpt).unwrap(), Phase::UseCe);
        assert_eq!(schedule_select(5, 0, &gpt).unwrap(), Phase::Skip);
        assert!(schedule_select(0, 0, &gpt).is_err());
        assert!(schedule_select(8, 0, &gpt).is_err());
        assert_eq!(gpt.total_epochs(20), 7);
    }

    #[test]
    fn subsample_rules() {
        let idx: Vec<usize> = (0..1000).collect();
        let cls: Vec<Option<usize>> = idx.iter().map(|i| Some(i % 3)).collect();
        assert_eq!(subsample_labels(&idx, &cls, 1.0, 0).unwrap(), idx);
        assert_eq!(subsample_labels(&idx, &cls, 0.001, 0).unwrap().len(), 1);
        let a = subsample_labels(&idx, &cls, 0.01, 4).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(a, subsample_labels(&idx, &cls, 0.01, 4).unwrap());
        let per: Vec<usize> = (0..3).map(|c| a.iter().filter(|&&i| i % 3 == c).count()).collect();
        assert!(per.iter().all(|&k| (3..=4).contains(&k)), "{per:?}");
        let err = subsample_labels(&idx[..10], &cls[..10], 0.01, 0).unwrap_err().to_string();
        assert!(err.contains("increase"), "{err}");
        assert!(subsample_labels(&idx, &cls, 0.0, 0).is_err());
    }
}
