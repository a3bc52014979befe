//! `key=value` run configuration shared by the config file and the flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ianmt::model::{ModelConfig, Variant};
use ianmt::train::TrainConfig;
use ianmt::{Error, Result};

/// Every accepted key and its default (`""` means unset).
pub const KEYS: &[(&str, &str)] = &[
    ("variant", "interactive"),
    ("d_emb", "32"),
    ("d_enc", "32"),
    ("d_s", "64"),
    ("d_a", "32"),
    ("d_readout", "64"),
    ("src_vocab_cap", "30000"),
    ("tgt_vocab_cap", "30000"),
    ("batch_size", "80"),
    ("max_sentence_length", "50"),
    ("dropout_rate", "0.5"),
    ("max_epochs", "10"),
    ("patience", "3"),
    ("seed", "1234"),
    ("clip_norm", "1.0"),
    ("init_std", "0.01"),
    ("log_timing", "false"),
    ("beam_size", "10"),
    ("train_src", ""),
    ("train_tgt", ""),
    ("dev_src", ""),
    ("dev_tgt", ""),
    ("out", ""),
    ("log", ""),
    ("init_checkpoint", ""),
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

fn default_of(key: &str) -> &'static str {
    KEYS.iter().find(|(k, _)| *k == key).map(|(_, v)| *v).unwrap_or("")
}

impl RunConfig {
    /// Parses `key=value` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !known(key) {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn raw(&self, key: &str) -> &str {
        debug_assert!(known(key), "{key}");
        self.values.get(key).map(String::as_str).unwrap_or_else(|| default_of(key))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|_| Error::Config(format!("invalid value {raw:?} for {key}")))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        Some(self.raw(key)).filter(|s| !s.is_empty()).map(PathBuf::from)
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf> {
        self.path(key)
            .ok_or_else(|| Error::Config(format!("{key} is required")))
    }

    /// Every key with its effective value, in key order.
    pub fn effective(&self) -> BTreeMap<String, String> {
        KEYS.iter().map(|(k, _)| (k.to_string(), self.raw(k).to_string())).collect()
    }

    pub fn variant(&self) -> Result<Variant> {
        self.get("variant")
    }

    pub fn model_config(&self, src_vocab: usize, tgt_vocab: usize) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            variant: self.variant()?,
            src_vocab,
            tgt_vocab,
            d_emb: self.get("d_emb")?,
            d_enc: self.get("d_enc")?,
            d_s: self.get("d_s")?,
            d_a: self.get("d_a")?,
            d_readout: self.get("d_readout")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let clip = self.raw("clip_norm");
        let clip_norm = match clip {
            "none" | "0" | "0.0" => None,
            _ => Some(self.get("clip_norm")?),
        };
        let cfg = TrainConfig {
            batch_size: self.get("batch_size")?,
            max_sentence_length: self.get("max_sentence_length")?,
            dropout_rate: self.get("dropout_rate")?,
            max_epochs: self.get("max_epochs")?,
            patience: self.get("patience")?,
            seed: self.get("seed")?,
            clip_norm,
            log_timing: self.get("log_timing")?,
            ..TrainConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn init_std(&self) -> Result<f64> {
        self.get("init_std")
    }

    pub fn beam_size(&self) -> Result<usize> {
        let b: usize = self.get("beam_size")?;
        if b == 0 {
            return Err(Error::Config("beam_size must be at least 1".into()));
        }
        Ok(b)
    }
}
