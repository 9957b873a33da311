//! Self-describing tensor container used for denoiser and critic checkpoints.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic  b"LDIFCKPT"
//! 8       4     format version (u32, currently 1)
//! 12      8     header length H in bytes (u64)
//! 20      H     UTF-8 JSON header (see `ContainerHeader`)
//! 20+H    ...   tensor payload: f64 little-endian values, row-major,
//!               tensors concatenated in header order
//! ```
//!
//! Each header tensor entry records `name`, `shape = [rows, cols]` and
//! `offset`, the index (in f64 elements, not bytes) of its first value in
//! the payload. Readers must reject unknown versions and truncated payloads.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::denoiser::{Denoiser, DenoiserConfig, DenoiserParams};
use crate::error::{Error, Result};
use crate::layout::DatasetSchema;
use crate::nn::{Adam, Parameters};
use crate::schedule::ScheduleConfig;

pub const MAGIC: &[u8; 8] = b"LDIFCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerHeader {
    /// `"denoiser"` or `"critic"`.
    pub kind: String,
    pub config: serde_json::Value,
    pub schema: DatasetSchema,
    #[serde(default)]
    pub extra: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub config: serde_json::Value,
    pub schema: DatasetSchema,
    pub extra: serde_json::Value,
    pub tensors: Vec<(String, Array2<f64>)>,
}

impl Container {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0;
        for (name, t) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: [t.nrows(), t.ncols()],
                offset,
            });
            offset += t.len();
        }
        let header = ContainerHeader {
            kind: self.kind.clone(),
            config: self.config.clone(),
            schema: self.schema.clone(),
            extra: self.extra.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for (_, t) in &self.tensors {
            for v in t.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)?;
        let header_len = u64::from_le_bytes(u64buf) as usize;
        let mut json = vec![0u8; header_len];
        r.read_exact(&mut json)?;
        let header: ContainerHeader = serde_json::from_slice(&json)?;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            let len = e.shape[0] * e.shape[1];
            let data = values
                .get(e.offset..e.offset + len)
                .ok_or_else(|| Error::Checkpoint(format!("tensor {} is truncated", e.name)))?;
            let t = Array2::from_shape_vec((e.shape[0], e.shape[1]), data.to_vec())
                .map_err(|err| Error::Checkpoint(err.to_string()))?;
            tensors.push((e.name.clone(), t));
        }
        header.schema.validate()?;
        Ok(Self {
            kind: header.kind,
            config: header.config,
            schema: header.schema,
            extra: header.extra,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn tensor_map(&self) -> HashMap<&str, &Array2<f64>> {
        self.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect()
    }

    /// Fill `target` from tensors named `prefix + name`.
    pub fn load_into<P: Parameters + ?Sized>(&self, prefix: &str, target: &mut P) -> Result<()> {
        let map = self.tensor_map();
        let mut err = None;
        target.visit_mut("", &mut |name, t| {
            if err.is_some() {
                return;
            }
            let key = format!("{prefix}{name}");
            match map.get(key.as_str()) {
                Some(src) if src.dim() == t.dim() => t.assign(src),
                Some(src) => err = Some(format!("tensor {key} has shape {:?}, expected {:?}", src.dim(), t.dim())),
                None => err = Some(format!("missing tensor {key}")),
            }
        });
        match err {
            Some(e) => Err(Error::Checkpoint(e)),
            None => Ok(()),
        }
    }
}

pub fn push_params<P: Parameters + ?Sized>(out: &mut Vec<(String, Array2<f64>)>, prefix: &str, params: &P) {
    params.visit("", &mut |name, t| out.push((format!("{prefix}{name}"), t.clone())));
}

/// Optimizer state carried by checkpoints written during training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub step: u64,
    pub adam: Adam,
    pub train_config: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DenoiserExtra {
    schedule: ScheduleConfig,
    /// `count_histogram[n]` = training layouts with `n` components.
    count_histogram: Vec<u64>,
    #[serde(default)]
    train_step: Option<u64>,
    #[serde(default)]
    adam_step: Option<u64>,
    #[serde(default)]
    train_config: Option<serde_json::Value>,
}

/// A trained denoiser with everything needed to sample from it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub denoiser: Denoiser,
    pub schedule: ScheduleConfig,
    pub schema: DatasetSchema,
    pub count_histogram: Vec<u64>,
    pub training: Option<TrainingState>,
}

impl ModelCheckpoint {
    pub fn validate(&self) -> Result<()> {
        let cfg = &self.denoiser.config;
        if cfg.num_classes != self.schema.k() {
            return Err(Error::SchemaMismatch(format!(
                "model has {} classes, schema has {}",
                cfg.num_classes,
                self.schema.k()
            )));
        }
        if cfg.n_max != self.schema.n_max {
            return Err(Error::SchemaMismatch(format!("model n_max {} vs schema {}", cfg.n_max, self.schema.n_max)));
        }
        if cfg.steps != self.schedule.steps {
            return Err(Error::SchemaMismatch(format!(
                "model trained for {} steps, schedule has {}",
                cfg.steps, self.schedule.steps
            )));
        }
        Ok(())
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut tensors = Vec::new();
        push_params(&mut tensors, "", &self.denoiser.params);
        let mut extra = DenoiserExtra {
            schedule: self.schedule,
            count_histogram: self.count_histogram.clone(),
            train_step: None,
            adam_step: None,
            train_config: None,
        };
        if let Some(state) = &self.training {
            extra.train_step = Some(state.step);
            extra.adam_step = Some(state.adam.step);
            extra.train_config = Some(state.train_config.clone());
            let names: Vec<String> = self.denoiser.params.named_tensors().into_iter().map(|(n, _)| n).collect();
            for (name, m) in names.iter().zip(&state.adam.m) {
                tensors.push((format!("opt.m.{name}"), m.clone()));
            }
            for (name, v) in names.iter().zip(&state.adam.v) {
                tensors.push((format!("opt.v.{name}"), v.clone()));
            }
        }
        Ok(Container {
            kind: "denoiser".into(),
            config: serde_json::to_value(&self.denoiser.config)?,
            schema: self.schema.clone(),
            extra: serde_json::to_value(&extra)?,
            tensors,
        })
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != "denoiser" {
            return Err(Error::Checkpoint(format!("expected a denoiser checkpoint, found {:?}", c.kind)));
        }
        let config: DenoiserConfig = serde_json::from_value(c.config.clone())?;
        config.validate()?;
        let extra: DenoiserExtra = serde_json::from_value(c.extra.clone())?;
        let mut params = DenoiserParams::zeros(&config);
        c.load_into("", &mut params)?;
        let denoiser = Denoiser::from_params(config, params)?;
        let training = match (extra.train_step, extra.adam_step) {
            (Some(step), Some(adam_step)) => {
                let mut adam = Adam::new(&denoiser.params);
                let mut m = DenoiserParams::zeros(&denoiser.config);
                let mut v = DenoiserParams::zeros(&denoiser.config);
                c.load_into("opt.m.", &mut m)?;
                c.load_into("opt.v.", &mut v)?;
                adam.m = m.named_tensors().into_iter().map(|(_, t)| t).collect();
                adam.v = v.named_tensors().into_iter().map(|(_, t)| t).collect();
                adam.step = adam_step;
                Some(TrainingState {
                    step,
                    adam,
                    train_config: extra.train_config.unwrap_or(serde_json::Value::Null),
                })
            }
            _ => None,
        };
        let ckpt = Self {
            denoiser,
            schedule: extra.schedule,
            schema: c.schema.clone(),
            count_histogram: extra.count_histogram,
            training,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> ModelCheckpoint {
        let schema = DatasetSchema::new("s", vec!["a".into(), "b".into(), "c".into()], 10, [100, 100]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = DenoiserConfig::scaled(16, 1, 2, 3, 10, 100);
        ModelCheckpoint {
            denoiser: Denoiser::new(cfg, &mut rng).unwrap(),
            schedule: ScheduleConfig::default(),
            schema,
            count_histogram: vec![0, 1, 2, 3, 0, 0, 0, 0, 0, 0, 0],
            training: None,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let bytes = ck.to_container().unwrap().to_bytes().unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        let back = ModelCheckpoint::from_container(&Container::read_from(bytes.as_slice()).unwrap()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn optimizer_state_round_trips() {
        let mut ck = sample();
        let mut adam = Adam::new(&ck.denoiser.params);
        adam.step = 17;
        adam.m[0].fill(0.5);
        ck.training = Some(TrainingState {
            step: 42,
            adam,
            train_config: serde_json::json!({"lr": 1e-3}),
        });
        let bytes = ck.to_container().unwrap().to_bytes().unwrap();
        let back = ModelCheckpoint::from_container(&Container::read_from(bytes.as_slice()).unwrap()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_container().unwrap().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Container::read_from(bad.as_slice()).is_err());
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(Container::read_from(bad.as_slice()).is_err());
        let truncated = &bytes[..bytes.len() - 8];
        assert!(Container::read_from(truncated).is_err());
    }

    #[test]
    fn schema_mismatch_detected() {
        let mut ck = sample();
        ck.schema.classes.push("d".into());
        assert!(matches!(ck.validate(), Err(Error::SchemaMismatch(_))));
    }
}
