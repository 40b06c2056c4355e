//! Seeded synthetic multimodal datasets.
//!
//! Each observation owns a few latent channels, each a sum of slow
//! sinusoids with random frequency, amplitude and phase. A modality is a
//! dataset-wide random linear readout of the latent plus Gaussian noise,
//! sampled at its own Poisson-spaced timestamps. Labels threshold one
//! latent channel on a separate timeline, so the label at `t` is a
//! function of the latent at `t` and can be predicted from past samples.

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

use super::{Dataset, ModalitySeries, Observation, Schema, Target};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::kv::{parse_value, KvFile};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthModality {
    pub name: String,
    pub dim: usize,
    /// Expected samples per unit time.
    pub rate: f64,
    /// Probability that a sample is dropped after drawing it.
    pub missing: f64,
}

/// `class = number of thresholds strictly exceeded by latent[channel](t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRule {
    pub channel: usize,
    pub thresholds: Vec<f64>,
}

impl LabelRule {
    pub fn num_classes(&self) -> usize {
        self.thresholds.len() + 1
    }

    pub fn classify(&self, latent: f64) -> usize {
        self.thresholds.iter().filter(|&&th| latent > th).count()
    }

    /// Accepts `latent[c] > x` (binary) or `latent[c] bins x1,x2,..` (sorted thresholds).
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("label_rule: expected `latent[c] > x` or `latent[c] bins a,b,..`, got `{s}`"));
        let rest = s.trim().strip_prefix("latent[").ok_or_else(bad)?;
        let (channel, rest) = rest.split_once(']').ok_or_else(bad)?;
        let channel: usize = channel.trim().parse().map_err(|_| bad())?;
        let rest = rest.trim();
        let thresholds: Vec<f64> = if let Some(x) = rest.strip_prefix('>') {
            vec![x.trim().parse().map_err(|_| bad())?]
        } else if let Some(list) = rest.strip_prefix("bins") {
            list.split(',')
                .map(|x| x.trim().parse().map_err(|_| bad()))
                .collect::<Result<_>>()?
        } else {
            return Err(bad());
        };
        if thresholds.is_empty() || thresholds.windows(2).any(|w| w[0] >= w[1]) || thresholds.iter().any(|t| !t.is_finite()) {
            return Err(Error::Config("label_rule: thresholds must be finite and strictly increasing".into()));
        }
        Ok(LabelRule { channel, thresholds })
    }

    fn render(&self) -> String {
        if self.thresholds.len() == 1 {
            format!("latent[{}] > {:?}", self.channel, self.thresholds[0])
        } else {
            let list: Vec<String> = self.thresholds.iter().map(|t| format!("{t:?}")).collect();
            format!("latent[{}] bins {}", self.channel, list.join(","))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub observations: usize,
    pub modalities: Vec<SynthModality>,
    /// Every observation covers `[0, horizon)`.
    pub horizon: f64,
    pub latent_channels: usize,
    /// Sinusoids per latent channel.
    pub components: usize,
    /// Frequency range in cycles per unit time.
    pub freq_range: (f64, f64),
    pub noise: f64,
    pub targets_per_observation: usize,
    /// Targets are drawn uniformly in `[target_start · horizon, horizon)`.
    pub target_start: f64,
    pub label_rule: LabelRule,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            observations: 500,
            modalities: vec![
                SynthModality { name: "alpha".into(), dim: 2, rate: 2.0, missing: 0.0 },
                SynthModality { name: "beta".into(), dim: 1, rate: 1.0, missing: 0.0 },
                SynthModality { name: "gamma".into(), dim: 3, rate: 0.5, missing: 0.0 },
            ],
            horizon: 10.0,
            latent_channels: 2,
            components: 2,
            freq_range: (0.03, 0.08),
            noise: 0.05,
            targets_per_observation: 6,
            target_start: 0.2,
            label_rule: LabelRule { channel: 0, thresholds: vec![0.0] },
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, msg: String| Err(Error::Config(format!("synth spec `{field}`: {msg}")));
        if self.modalities.is_empty() {
            return fail("modalities", "at least one modality is required".into());
        }
        for m in &self.modalities {
            if m.dim == 0 {
                return fail("modalities", format!("`{}` has dimension 0", m.name));
            }
            if !(m.rate > 0.0 && m.rate.is_finite()) {
                return fail("modalities", format!("`{}` needs a positive rate", m.name));
            }
            if !(0.0..1.0).contains(&m.missing) {
                return fail("modalities", format!("`{}` missing probability must lie in [0, 1)", m.name));
            }
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return fail("horizon", "must be positive".into());
        }
        if self.latent_channels == 0 {
            return fail("latent_channels", "must be positive".into());
        }
        if self.components == 0 {
            return fail("components", "must be positive".into());
        }
        let (lo, hi) = self.freq_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return fail("freq_min/freq_max", format!("need 0 < min <= max, got {lo}..{hi}"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return fail("noise", "must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.target_start) {
            return fail("target_start", "must lie in [0, 1)".into());
        }
        if self.label_rule.channel >= self.latent_channels {
            return fail("label_rule", format!("channel {} but only {} latent channels", self.label_rule.channel, self.latent_channels));
        }
        self.schema().map(|_| ())
    }

    pub fn schema(&self) -> Result<Schema> {
        Schema::new(
            self.modalities.iter().map(|m| (m.name.clone(), m.dim)).collect(),
            self.label_rule.num_classes(),
        )
    }

    /// Parses the `key = value` spec format; unknown keys are an error.
    ///
    /// `modalities = name:dim:rate[:missing], ...`
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let kv = KvFile::parse(text, origin)?;
        let mut spec = SynthSpec::default();
        for key in kv.keys() {
            let v = kv.get(key).unwrap_or_default();
            match key {
                "observations" => spec.observations = parse_value(key, v)?,
                "horizon" => spec.horizon = parse_value(key, v)?,
                "latent_channels" => spec.latent_channels = parse_value(key, v)?,
                "components" => spec.components = parse_value(key, v)?,
                "freq_min" => spec.freq_range.0 = parse_value(key, v)?,
                "freq_max" => spec.freq_range.1 = parse_value(key, v)?,
                "noise" => spec.noise = parse_value(key, v)?,
                "targets_per_observation" => spec.targets_per_observation = parse_value(key, v)?,
                "target_start" => spec.target_start = parse_value(key, v)?,
                "label_rule" => spec.label_rule = LabelRule::parse(v)?,
                "modalities" => spec.modalities = parse_modalities(v)?,
                other => {
                    return Err(Error::data(origin, kv.line_of(other), format!("unknown synth spec key `{other}`")));
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn render(&self) -> String {
        let mut kv = KvFile::default();
        kv.push("observations", self.observations);
        kv.push(
            "modalities",
            self.modalities
                .iter()
                .map(|m| format!("{}:{}:{:?}:{:?}", m.name, m.dim, m.rate, m.missing))
                .collect::<Vec<_>>()
                .join(", "),
        );
        kv.push("horizon", format!("{:?}", self.horizon));
        kv.push("latent_channels", self.latent_channels);
        kv.push("components", self.components);
        kv.push("freq_min", format!("{:?}", self.freq_range.0));
        kv.push("freq_max", format!("{:?}", self.freq_range.1));
        kv.push("noise", format!("{:?}", self.noise));
        kv.push("targets_per_observation", self.targets_per_observation);
        kv.push("target_start", format!("{:?}", self.target_start));
        kv.push("label_rule", self.label_rule.render());
        kv.render()
    }
}

fn parse_modalities(v: &str) -> Result<Vec<SynthModality>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|item| {
            let parts: Vec<&str> = item.trim().split(':').map(str::trim).collect();
            if !(3..=4).contains(&parts.len()) {
                return Err(Error::Config(format!("modalities: expected name:dim:rate[:missing], got `{}`", item.trim())));
            }
            Ok(SynthModality {
                name: parts[0].to_string(),
                dim: parse_value("modalities dim", parts[1])?,
                rate: parse_value("modalities rate", parts[2])?,
                missing: match parts.get(3) {
                    Some(p) => parse_value("modalities missing", p)?,
                    None => 0.0,
                },
            })
        })
        .collect()
}

/// Latent process of one observation.
#[derive(Debug, Clone)]
pub struct Latent {
    /// Per channel: (amplitude, frequency, phase) triples.
    channels: Vec<Vec<(f64, f64, f64)>>,
}

impl Latent {
    fn draw(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Self {
        let amp = Normal::new(0.0, 1.0 / (spec.components as f64).sqrt()).expect("valid normal");
        let channels = (0..spec.latent_channels)
            .map(|_| {
                (0..spec.components)
                    .map(|_| {
                        let f = if spec.freq_range.1 > spec.freq_range.0 {
                            rng.random_range(spec.freq_range.0..spec.freq_range.1)
                        } else {
                            spec.freq_range.0
                        };
                        (amp.sample(rng), f, rng.random_range(0.0..TAU))
                    })
                    .collect()
            })
            .collect();
        Latent { channels }
    }

    pub fn value(&self, channel: usize, t: f64) -> f64 {
        self.channels[channel]
            .iter()
            .map(|&(a, f, phi)| a * (TAU * f * t + phi).sin())
            .sum()
    }

    pub fn at(&self, t: f64) -> Vec<f64> {
        (0..self.channels.len()).map(|c| self.value(c, t)).collect()
    }
}

fn poisson_times(rate: f64, horizon: f64, missing: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gap = Exp::new(rate).expect("positive rate");
    let mut times = Vec::new();
    let mut t = gap.sample(rng);
    while t < horizon {
        let keep = rng.random::<f64>() >= missing;
        if keep {
            times.push(t);
        }
        t += gap.sample(rng);
    }
    times
}

/// Dataset-wide readout matrices, one `latent_channels × d_m` per modality.
fn readouts(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = Normal::new(0.0, 1.0).expect("valid normal");
    spec.modalities
        .iter()
        .map(|m| (0..spec.latent_channels * m.dim).map(|_| n.sample(rng)).collect())
        .collect()
}

fn observation_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Generates one observation together with its latent process.
pub fn synth_observation(spec: &SynthSpec, seed: u64, index: usize) -> Result<(Observation, Latent)> {
    spec.validate()?;
    let weights = readouts(spec, &mut ChaCha8Rng::seed_from_u64(seed));
    Ok(generate_one(spec, &weights, seed, index))
}

fn generate_one(spec: &SynthSpec, weights: &[Vec<f64>], seed: u64, index: usize) -> (Observation, Latent) {
    let mut rng = observation_rng(seed, index);
    let latent = Latent::draw(spec, &mut rng);
    let noise = Normal::new(0.0, spec.noise.max(0.0)).expect("valid normal");
    let k = spec.latent_channels;
    let mut modalities = Vec::with_capacity(spec.modalities.len());
    for (m, w) in spec.modalities.iter().zip(weights) {
        let times = poisson_times(m.rate, spec.horizon, m.missing, &mut rng);
        let mut data = Vec::with_capacity(times.len() * m.dim);
        for &t in &times {
            let z = latent.at(t);
            for j in 0..m.dim {
                let clean: f64 = (0..k).map(|c| z[c] * w[c * m.dim + j]).sum();
                data.push(clean + if spec.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 });
            }
        }
        let values = Tensor::matrix(times.len(), m.dim, data).expect("shape");
        modalities.push(ModalitySeries {
            name: m.name.clone(),
            times,
            values,
        });
    }
    let lo = spec.target_start * spec.horizon;
    let mut times: Vec<f64> = (0..spec.targets_per_observation)
        .map(|_| rng.random_range(lo..spec.horizon))
        .collect();
    times.sort_by(f64::total_cmp);
    let labels = times
        .iter()
        .map(|&t| spec.label_rule.classify(latent.value(spec.label_rule.channel, t)))
        .collect();
    let obs = Observation {
        id: format!("obs_{index:05}"),
        modalities,
        target: Some(Target { times, labels }),
    };
    (obs, latent)
}

/// Deterministic in `(spec, seed)`; observation `i` does not depend on `spec.observations`.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let weights = readouts(spec, &mut ChaCha8Rng::seed_from_u64(seed));
    let observations = (0..spec.observations)
        .map(|i| generate_one(spec, &weights, seed, i).0)
        .collect();
    Dataset::new(spec.schema()?, observations)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            observations: 20,
            modalities: vec![
                SynthModality { name: "a".into(), dim: 2, rate: 3.0, missing: 0.0 },
                SynthModality { name: "b".into(), dim: 1, rate: 1.0, missing: 0.2 },
            ],
            ..SynthSpec::default()
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = synth_generate(&small(), 5).unwrap();
        assert_eq!(a.len(), 20);
        assert_eq!(a, synth_generate(&small(), 5).unwrap());
        assert_ne!(a, synth_generate(&small(), 6).unwrap());
        let mut bigger = small();
        bigger.observations = 30;
        assert_eq!(synth_generate(&bigger, 5).unwrap().observations[..20], a.observations[..]);
    }

    #[test]
    fn zero_modalities_rejected() {
        let mut spec = small();
        spec.modalities.clear();
        let err = synth_generate(&spec, 0).unwrap_err().to_string();
        assert!(err.contains("modalities"), "{err}");
        assert!(SynthSpec::parse("modalities =\n", Path::new("s")).is_err());
    }

    #[test]
    fn labels_follow_latent_rule() {
        let spec = small();
        for i in 0..5 {
            let (obs, latent) = synth_observation(&spec, 9, i).unwrap();
            let target = obs.target.unwrap();
            for (&t, &c) in target.times.iter().zip(&target.labels) {
                assert_eq!(c, usize::from(latent.value(0, t) > 0.0));
            }
        }
    }

    #[test]
    fn spec_text_roundtrip() {
        let spec = small();
        let back = SynthSpec::parse(&spec.render(), Path::new("spec")).unwrap();
        assert_eq!(back, spec);
        let err = SynthSpec::parse("bogus = 1\n", Path::new("spec")).unwrap_err().to_string();
        assert!(err.contains("spec:1") && err.contains("bogus"), "{err}");
        let err = SynthSpec::parse("horizon = -1\n", Path::new("spec")).unwrap_err().to_string();
        assert!(err.contains("horizon"), "{err}");
    }

    #[test]
    fn label_rule_parsing() {
        let r = LabelRule::parse("latent[1] bins -0.5, 0, 0.5").unwrap();
        assert_eq!(r.num_classes(), 4);
        assert_eq!(r.classify(0.1), 2);
        assert_eq!(LabelRule::parse("latent[0] > 0").unwrap().thresholds, vec![0.0]);
        assert!(LabelRule::parse("latent[0] < 0").is_err());
        assert!(LabelRule::parse("latent[0] bins 1,0").is_err());
    }

    #[test]
    fn poisson_rate_is_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let times = poisson_times(2.0, 2000.0, 0.0, &mut rng);
        let mean_gap = super::super::TimeDeltas::from_times(&times).mean().unwrap();
        assert!((mean_gap - 0.5).abs() < 0.05, "{mean_gap}");
    }
}
