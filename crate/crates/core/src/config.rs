//! Training configuration and its `key = value` text form.

use std::path::Path;

use crate::data::Schema;
use crate::error::{Error, Result};
use crate::itnet::MixingKind;
use crate::kv::{parse_value, KvFile};
use crate::model::ModelSpec;
use crate::objectives::Scheme;

/// Every knob of one training run. Defaults follow the reference
/// hyperparameter table: `d_k = 32`, `d_a = 64`, batch 64, learning rate
/// `5e-4`, 20 epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub d_k: usize,
    /// Attention output width; `None` means `d_k`.
    pub d_o: Option<usize>,
    pub d_a: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub depth: usize,
    pub dropout: f64,
    pub mixing: MixingKind,
    pub label_fraction: f64,
    pub scheme: Scheme,
    pub seed: u64,
    pub anchor_len: usize,
    /// Time-encoding wavelength scale; `None` means ten times the largest training timestamp.
    pub lambda: Option<f64>,
    pub query_map: bool,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub censored_class: Option<usize>,
    /// Global gradient-norm clip; off by default.
    pub grad_clip: Option<f64>,
    pub folds: usize,
    /// Which fold `itgpt train` validates on.
    pub fold: usize,
    /// Seed of the fold partition, kept apart from `seed` so folds match across runs.
    pub split_seed: u64,
    /// Also record the validation loss after every epoch.
    pub trace_valid: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d_k: 32,
            d_o: None,
            d_a: 64,
            batch_size: 64,
            learning_rate: 5e-4,
            epochs: 20,
            depth: 1,
            dropout: 0.0,
            mixing: MixingKind::Linear,
            label_fraction: 1.0,
            scheme: Scheme::Ce,
            seed: 0,
            anchor_len: 64,
            lambda: None,
            query_map: false,
            pretrain_epochs: 2,
            finetune_epochs: 5,
            censored_class: None,
            grad_clip: None,
            folds: 5,
            fold: 0,
            split_seed: 0,
            trace_valid: false,
        }
    }
}

fn opt_str<T: ToString>(v: &Option<T>, none: &str) -> String {
    v.as_ref().map_or_else(|| none.to_string(), ToString::to_string)
}

fn parse_opt<T: std::str::FromStr>(key: &str, v: &str, none: &str) -> Result<Option<T>> {
    if v.eq_ignore_ascii_case(none) {
        Ok(None)
    } else {
        parse_value(key, v).map(Some)
    }
}

impl TrainConfig {
    pub fn d_o(&self) -> usize {
        self.d_o.unwrap_or(self.d_k)
    }

    /// Epochs actually run: the two-phase schedule for GPT->CE, `epochs` otherwise.
    pub fn total_epochs(&self) -> usize {
        match self.scheme {
            Scheme::GptThenCe => self.pretrain_epochs + self.finetune_epochs,
            _ => self.epochs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.d_k == 0 || self.d_k % 2 != 0 || self.d_o() == 0 || self.d_o() % 2 != 0 {
            return bad(format!("d_k and d_o must be even and positive, got {} and {}", self.d_k, self.d_o()));
        }
        if self.d_a == 0 || self.batch_size == 0 || self.anchor_len == 0 {
            return bad("d_a, batch_size and anchor_len must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.depth == 0 {
            return bad("depth must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return bad(format!("label_fraction must lie in (0, 1], got {}", self.label_fraction));
        }
        if self.total_epochs() == 0 {
            return bad("the epoch budget is zero".into());
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return bad(format!("lambda must be positive, got {l}"));
            }
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        if self.folds < 2 || self.fold >= self.folds {
            return bad(format!("need folds >= 2 and fold < folds, got fold {} of {}", self.fold, self.folds));
        }
        Ok(())
    }

    pub fn model_spec(&self, schema: &Schema, lambda: f64) -> ModelSpec {
        ModelSpec {
            modality_dims: schema.modality_dims(),
            num_classes: schema.num_classes,
            d_k: self.d_k,
            d_o: self.d_o(),
            d_a: self.d_a,
            depth: self.depth,
            mixing: self.mixing,
            dropout: self.dropout,
            query_map: self.query_map,
            lambda,
        }
    }

    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::default();
        kv.push("d_k", self.d_k);
        kv.push("d_o", opt_str(&self.d_o, "auto"));
        kv.push("d_a", self.d_a);
        kv.push("batch_size", self.batch_size);
        kv.push("learning_rate", format!("{:?}", self.learning_rate));
        kv.push("epochs", self.epochs);
        kv.push("depth", self.depth);
        kv.push("dropout", format!("{:?}", self.dropout));
        kv.push("mixing", self.mixing);
        kv.push("label_fraction", format!("{:?}", self.label_fraction));
        kv.push("scheme", self.scheme);
        kv.push("seed", self.seed);
        kv.push("anchor_len", self.anchor_len);
        kv.push("lambda", self.lambda.map_or_else(|| "auto".to_string(), |l| format!("{l:?}")));
        kv.push("query_map", self.query_map);
        kv.push("pretrain_epochs", self.pretrain_epochs);
        kv.push("finetune_epochs", self.finetune_epochs);
        kv.push("censored_class", opt_str(&self.censored_class, "none"));
        kv.push("grad_clip", self.grad_clip.map_or_else(|| "none".to_string(), |c| format!("{c:?}")));
        kv.push("folds", self.folds);
        kv.push("fold", self.fold);
        kv.push("split_seed", self.split_seed);
        kv.push("trace_valid", self.trace_valid);
        kv
    }

    /// Overrides one field by name.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "d_k" => self.d_k = parse_value(key, v)?,
            "d_o" => self.d_o = parse_opt(key, v, "auto")?,
            "d_a" => self.d_a = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "learning_rate" => self.learning_rate = parse_value(key, v)?,
            "epochs" => self.epochs = parse_value(key, v)?,
            "depth" => self.depth = parse_value(key, v)?,
            "dropout" => self.dropout = parse_value(key, v)?,
            "mixing" => self.mixing = v.parse()?,
            "label_fraction" => self.label_fraction = parse_value(key, v)?,
            "scheme" => self.scheme = v.parse()?,
            "seed" => self.seed = parse_value(key, v)?,
            "anchor_len" => self.anchor_len = parse_value(key, v)?,
            "lambda" => self.lambda = parse_opt(key, v, "auto")?,
            "query_map" => self.query_map = parse_value(key, v)?,
            "pretrain_epochs" => self.pretrain_epochs = parse_value(key, v)?,
            "finetune_epochs" => self.finetune_epochs = parse_value(key, v)?,
            "censored_class" => self.censored_class = parse_opt(key, v, "none")?,
            "grad_clip" => self.grad_clip = parse_opt(key, v, "none")?,
            "folds" => self.folds = parse_value(key, v)?,
            "fold" => self.fold = parse_value(key, v)?,
            "split_seed" => self.split_seed = parse_value(key, v)?,
            "trace_valid" => self.trace_valid = parse_value(key, v)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (k, v) in kv.entries() {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        TrainConfig::from_kv(&KvFile::parse(text, origin)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        TrainConfig::from_kv(&KvFile::read(path)?)
    }

    pub fn render(&self) -> String {
        self.to_kv().render()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_table() {
        let c = TrainConfig::default();
        assert_eq!((c.d_k, c.d_a, c.batch_size, c.epochs), (32, 64, 64, 20));
        assert_eq!(c.learning_rate, 5e-4);
        assert_eq!(c.d_o(), 32);
        c.validate().unwrap();
    }

    #[test]
    fn text_roundtrip() {
        let mut c = TrainConfig::default();
        c.scheme = Scheme::GptThenCe;
        c.mixing = MixingKind::Mlp2;
        c.lambda = Some(123.5);
        c.censored_class = Some(5);
        c.grad_clip = Some(1.0);
        c.learning_rate = 0.1 + 0.2;
        let back = TrainConfig::parse(&c.render(), Path::new("cfg")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.total_epochs(), 7);
    }

    #[test]
    fn errors_name_the_field() {
        let err = TrainConfig::parse("scheme = SSL\n", Path::new("c")).unwrap_err().to_string();
        assert!(err.contains("CE+SSL"), "{err}");
        let err = TrainConfig::parse("depth = zero\n", Path::new("c")).unwrap_err().to_string();
        assert!(err.contains("depth"), "{err}");
        assert!(TrainConfig::parse("colour = red\n", Path::new("c")).is_err());
        assert!(TrainConfig::parse("dropout = 1.0\n", Path::new("c")).is_err());
        assert!(TrainConfig::parse("d_k = 7\n", Path::new("c")).is_err());
    }
}
