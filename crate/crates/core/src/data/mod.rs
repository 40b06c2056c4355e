//! Multimodal irregular timeseries datasets.
//!
//! An [`Observation`] holds one series per modality, each with its own
//! timestamps on a clock shared by all modalities, plus an optional labeled
//! target series on a separate timeline.

mod io;
mod split;
mod synth;

pub use io::{load_dataset, write_dataset, LoadReport};
pub use split::{split_kfold, split_timeseries, Fold, TimeSplit};
pub use synth::{synth_generate, synth_observation, LabelRule, Latent, SynthModality, SynthSpec};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ModalitySeries {
    pub name: String,
    pub times: Vec<f64>,
    /// `L_m × d_m`
    pub values: Tensor,
}

impl ModalitySeries {
    pub fn new(name: impl Into<String>, times: Vec<f64>, values: Tensor) -> Result<Self> {
        let series = ModalitySeries {
            name: name.into(),
            times,
            values,
        };
        series.validate()?;
        Ok(series)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.rank() != 2 || self.values.rows() != self.times.len() {
            return Err(Error::Invalid(format!(
                "modality `{}`: {} timestamps but values of shape {:?}",
                self.name,
                self.times.len(),
                self.values.shape()
            )));
        }
        crate::time_encoding::check_sorted(&self.times, &format!("modality `{}`", self.name))?;
        if !self.values.all_finite() {
            return Err(Error::Invalid(format!("modality `{}` has non-finite values", self.name)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn time_deltas(&self) -> TimeDeltas {
        TimeDeltas::from_times(&self.times)
    }

    /// Element-wise `ln(1 + x)`; negative entries are an error naming the row.
    pub fn log_normalized(&self) -> Result<ModalitySeries> {
        let values = log_normalize(&self.values)
            .map_err(|e| Error::Invalid(format!("modality `{}`: {e}", self.name)))?;
        Ok(ModalitySeries {
            name: self.name.clone(),
            times: self.times.clone(),
            values,
        })
    }

    /// Rows with `lo <= t < hi`.
    pub fn slice_time(&self, lo: f64, hi: f64) -> ModalitySeries {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| self.times[i] >= lo && self.times[i] < hi)
            .collect();
        let d = self.dim();
        let mut data = Vec::with_capacity(keep.len() * d);
        for &i in &keep {
            data.extend_from_slice(self.values.row(i));
        }
        ModalitySeries {
            name: self.name.clone(),
            times: keep.iter().map(|&i| self.times[i]).collect(),
            values: Tensor::matrix(keep.len(), d, data).expect("shape"),
        }
    }
}

/// Gaps between consecutive timestamps, with a leading 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeDeltas(pub Vec<f64>);

impl TimeDeltas {
    pub fn from_times(times: &[f64]) -> Self {
        let mut deltas = Vec::with_capacity(times.len());
        if !times.is_empty() {
            deltas.push(0.0);
        }
        deltas.extend(times.windows(2).map(|w| w[1] - w[0]));
        TimeDeltas(deltas)
    }

    /// Rebuilds timestamps from the first one by cumulative sum.
    pub fn cumulative(&self, start: f64) -> Vec<f64> {
        let mut t = start;
        self.0
            .iter()
            .map(|d| {
                t += d;
                t
            })
            .collect()
    }

    pub fn mean(&self) -> Option<f64> {
        if self.0.len() < 2 {
            return None;
        }
        Some(self.0[1..].iter().sum::<f64>() / (self.0.len() - 1) as f64)
    }
}

/// `x ↦ ln(1 + x)` for non-negative inputs.
pub fn log_normalize(values: &Tensor) -> Result<Tensor> {
    let cols = values.shape().get(1).copied().unwrap_or(1).max(1);
    if let Some(i) = values.data().iter().position(|&v| v < 0.0 || v.is_nan()) {
        return Err(Error::Invalid(format!(
            "negative value {} at row {} column {}",
            values.data()[i],
            i / cols,
            i % cols
        )));
    }
    Ok(values.map(f64::ln_1p))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub times: Vec<f64>,
    /// Class index per target timestamp.
    pub labels: Vec<usize>,
}

impl Target {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn one_hot(&self, num_classes: usize) -> Tensor {
        let mut t = Tensor::zeros(&[self.labels.len(), num_classes]);
        for (r, &c) in self.labels.iter().enumerate() {
            t.set(r, c, 1.0);
        }
        t
    }

    /// Most frequent class, lowest index on ties.
    pub fn majority_class(&self, num_classes: usize) -> Option<usize> {
        if self.labels.is_empty() {
            return None;
        }
        let mut counts = vec![0usize; num_classes];
        for &c in &self.labels {
            counts[c] += 1;
        }
        let best = *counts.iter().max()?;
        counts.iter().position(|&c| c == best)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub id: String,
    pub modalities: Vec<ModalitySeries>,
    pub target: Option<Target>,
}

impl Observation {
    /// Earliest and latest timestamp over all modalities and the target.
    pub fn span(&self) -> Option<(f64, f64)> {
        let all = self
            .modalities
            .iter()
            .flat_map(|m| m.times.iter())
            .chain(self.target.iter().flat_map(|t| t.times.iter()));
        let mut span: Option<(f64, f64)> = None;
        for &t in all {
            span = Some(match span {
                None => (t, t),
                Some((lo, hi)) => (lo.min(t), hi.max(t)),
            });
        }
        span
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        if self.modalities.len() != schema.modalities.len() {
            return Err(Error::Schema(format!(
                "observation `{}` has {} modalities, schema declares {}",
                self.id,
                self.modalities.len(),
                schema.modalities.len()
            )));
        }
        for (series, (name, dim)) in self.modalities.iter().zip(&schema.modalities) {
            if &series.name != name || series.dim() != *dim {
                return Err(Error::Schema(format!(
                    "observation `{}`: modality `{}` (dim {}) where schema expects `{name}` (dim {dim})",
                    self.id,
                    series.name,
                    series.dim()
                )));
            }
            series.validate()?;
        }
        if let Some(target) = &self.target {
            crate::time_encoding::check_sorted(&target.times, "target timeline")?;
            if target.labels.len() != target.times.len() {
                return Err(Error::Invalid(format!("observation `{}`: label count mismatch", self.id)));
            }
            if let Some(&bad) = target.labels.iter().find(|&&c| c >= schema.num_classes) {
                return Err(Error::Schema(format!(
                    "observation `{}`: class {bad} outside 0..{}",
                    self.id, schema.num_classes
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    /// Modality names and dimensions, in model order.
    pub modalities: Vec<(String, usize)>,
    pub num_classes: usize,
    pub class_names: Vec<String>,
}

impl Schema {
    pub fn new(modalities: Vec<(String, usize)>, num_classes: usize) -> Result<Self> {
        let class_names = (0..num_classes).map(|c| format!("class{c}")).collect();
        let schema = Schema {
            modalities,
            num_classes,
            class_names,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.modalities.is_empty() {
            return Err(Error::Schema("schema declares no modalities".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Schema(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        if self.class_names.len() != self.num_classes {
            return Err(Error::Schema(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.num_classes
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for (name, dim) in &self.modalities {
            if name.is_empty()
                || name.contains(|c: char| c == ',' || c == ':' || c == '/' || c == '\\' || c.is_whitespace())
            {
                return Err(Error::Schema(format!("invalid modality name `{name}`")));
            }
            if name == "target" {
                return Err(Error::Schema("`target` is reserved".into()));
            }
            if *dim == 0 {
                return Err(Error::Schema(format!("modality `{name}` has dimension 0")));
            }
            if !seen.insert(name) {
                return Err(Error::Schema(format!("duplicate modality `{name}`")));
            }
        }
        Ok(())
    }

    pub fn modality_dims(&self) -> Vec<usize> {
        self.modalities.iter().map(|(_, d)| *d).collect()
    }

    /// Modality layout of the truck-component dataset: 15 modalities, 6 classes.
    pub fn compx() -> Self {
        let mods: [(&str, usize); 15] = [
            ("specs", 94),
            ("397", 36),
            ("459", 20),
            ("291", 11),
            ("158", 10),
            ("272", 10),
            ("167", 10),
            ("370_0", 1),
            ("835_0", 1),
            ("309_0", 1),
            ("837_0", 1),
            ("427_0", 1),
            ("666_0", 1),
            ("171_0", 1),
            ("100_0", 1),
        ];
        Schema {
            modalities: mods.iter().map(|(n, d)| (n.to_string(), *d)).collect(),
            num_classes: 6,
            class_names: [
                "no_failure_48h",
                "failure_24h_48h",
                "failure_12h_24h",
                "failure_6h_12h",
                "failure_6h",
                "censored_48h",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        }
    }

    /// Modality layout of the in-home dementia monitoring dataset, binary alerts.
    pub fn tihm() -> Self {
        let mods: [(&str, usize); 18] = [
            ("kitchen", 1),
            ("bedroom", 1),
            ("hallway", 1),
            ("bathroom", 1),
            ("fridge_door", 1),
            ("front_door", 1),
            ("lounge", 1),
            ("back_door", 1),
            ("body_temperature", 2),
            ("systolic_bp", 2),
            ("diastolic_bp", 2),
            ("heart_rate", 2),
            ("skin_temperature", 2),
            ("sleep_hr", 2),
            ("sleep_rr", 2),
            ("body_weight", 2),
            ("total_body_water", 2),
            ("muscle_mass", 2),
        ];
        Schema {
            modalities: mods.iter().map(|(n, d)| (n.to_string(), *d)).collect(),
            num_classes: 2,
            class_names: vec!["no_alert".into(), "alert".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: Schema,
    pub observations: Vec<Observation>,
}

impl Dataset {
    pub fn new(schema: Schema, observations: Vec<Observation>) -> Result<Self> {
        schema.validate()?;
        for obs in &observations {
            obs.validate(&schema)?;
        }
        Ok(Dataset {
            schema,
            observations,
        })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Largest absolute timestamp among the selected observations.
    pub fn max_timestamp(&self, indices: &[usize]) -> f64 {
        indices
            .iter()
            .filter_map(|&i| self.observations[i].span())
            .map(|(lo, hi)| lo.abs().max(hi.abs()))
            .fold(0.0, f64::max)
    }

    /// Applies `ln(1 + x)` to the named modalities of every observation.
    pub fn log_normalize(&mut self, modalities: &[&str]) -> Result<()> {
        for obs in &mut self.observations {
            for series in &mut obs.modalities {
                if modalities.contains(&series.name.as_str()) {
                    *series = series
                        .log_normalized()
                        .map_err(|e| Error::Invalid(format!("observation `{}`: {e}", obs.id)))?;
                }
            }
        }
        Ok(())
    }
}
