//! The `--data` argument: a file path or a synthetic generator spec.
//!
//! ```text
//! synth[:k=16,sep=3,train=2000,test=1000,seed=1]
//! synth-classes[:k=10,classes=4,train=300,test=200,sep=4,seed=1]
//! ```

use std::collections::HashMap;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use dba_core::data::{
    load_embedding_file, load_multiclass_file, synth_gaussian_classes, synth_two_gaussians, EmbeddedDataset,
    MulticlassDataset,
};

use anyhow::Context;

use crate::ConfigError;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    File(PathBuf),
    TwoGaussians {
        k: usize,
        sep: f64,
        train: usize,
        test: usize,
        seed: u64,
    },
    GaussianClasses {
        k: usize,
        classes: usize,
        train: usize,
        test: usize,
        sep: f64,
        seed: u64,
    },
}

impl FromStr for DataSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, params) = match s.split_once(':') {
            Some((kind, rest)) => (kind, rest),
            None => (s, ""),
        };
        if kind != "synth" && kind != "synth-classes" {
            return Ok(DataSource::File(PathBuf::from(s)));
        }
        let mut map = HashMap::new();
        for pair in params.split(',').filter(|p| !p.is_empty()) {
            let (key, value) = pair.split_once('=').ok_or_else(|| format!("expected key=value, got {pair:?}"))?;
            map.insert(key.trim(), value.trim());
        }
        let mut take = |key: &str, default: f64| -> Result<f64, String> {
            match map.remove(key) {
                Some(v) => v.parse::<f64>().map_err(|_| format!("bad value for {key}: {v:?}")),
                None => Ok(default),
            }
        };
        let source = if kind == "synth" {
            DataSource::TwoGaussians {
                k: take("k", 16.0)? as usize,
                sep: take("sep", 3.0)?,
                train: take("train", 2000.0)? as usize,
                test: take("test", 1000.0)? as usize,
                seed: take("seed", 1.0)? as u64,
            }
        } else {
            DataSource::GaussianClasses {
                k: take("k", 10.0)? as usize,
                classes: take("classes", 4.0)? as usize,
                train: take("train", 300.0)? as usize,
                test: take("test", 200.0)? as usize,
                sep: take("sep", 4.0)?,
                seed: take("seed", 1.0)? as u64,
            }
        };
        if let Some(key) = map.keys().next() {
            return Err(format!("unknown parameter {key:?} for {kind}"));
        }
        Ok(source)
    }
}

impl DataSource {
    pub fn binary(&self) -> anyhow::Result<Arc<EmbeddedDataset>> {
        let data = match self {
            DataSource::File(path) => load_embedding_file(path).with_context(|| format!("loading {}", path.display()))?,
            DataSource::TwoGaussians { k, sep, train, test, seed } => synth_two_gaussians(*k, *train, *test, *sep, *seed)
                .map_err(|e| ConfigError(format!("synthetic data: {e}")))?,
            DataSource::GaussianClasses { .. } => {
                return Err(ConfigError("synth-classes is multiclass; use it with `bench pairs`".into()).into())
            }
        };
        Ok(Arc::new(data))
    }

    pub fn multiclass(&self) -> anyhow::Result<MulticlassDataset> {
        match self {
            DataSource::File(path) => Ok(load_multiclass_file(path).with_context(|| format!("loading {}", path.display()))?),
            DataSource::GaussianClasses {
                k,
                classes,
                train,
                test,
                sep,
                seed,
            } => Ok(synth_gaussian_classes(*k, *classes, *train, *test, *sep, *seed)
                .map_err(|e| ConfigError(format!("synthetic data: {e}")))?),
            DataSource::TwoGaussians { .. } => {
                Err(ConfigError("`bench pairs` needs a multiclass source (a file or synth-classes)".into()).into())
            }
        }
    }
}
