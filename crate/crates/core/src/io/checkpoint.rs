//! Checkpoint files: a text manifest followed by a binary payload.
//!
//! ```text
//! OSPN1
//! key = value            (architecture, step, RNG, optimizer, params)
//! config.key = value     (run configuration echo)
//! payload_sha256 = ...
//! end
//! <payload: for each parameter, value then Adam m then Adam v, LE f64>
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::sparsity::SparsityConfig;
use crate::tensor::{AdamConfig, AdamState, Moments, ParamStore, Tensor};
use crate::trainer::{PruneCriterion, RngState, SupernetModel};

pub const CHECKPOINT_MAGIC: &str = "OSPN1";
const END_MARKER: &str = "end\n";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: SupernetModel,
    /// Training steps completed.
    pub step: u64,
    pub rng: RngState,
    pub config: RunConfig,
    /// Set on sub-networks materialized by extraction.
    pub extracted: Option<SparsityConfig>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corrupt(msg.into())
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let m = &ck.model;
    let mut payload = Vec::new();
    for (p, mo) in m.params.iter().zip(m.adam.moments()) {
        for v in p.value.as_slice().iter().chain(&mo.m).chain(&mo.v) {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let a = &m.adam.config;
    let mut text = format!("{CHECKPOINT_MAGIC}\n");
    let mut put = |k: &str, v: String| text.push_str(&format!("{k} = {v}\n"));
    put("input_dim", m.arch.input_dim.to_string());
    put("hidden", m.arch.hidden.to_string());
    put("layers", m.arch.layers.to_string());
    put("classes", m.arch.classes.to_string());
    put("criterion", m.criterion.as_str().to_string());
    put("step", ck.step.to_string());
    put("rng_seed", hex::encode(ck.rng.seed));
    put("rng_stream", ck.rng.stream.to_string());
    put("rng_word_pos", ck.rng.word_pos.to_string());
    put("adam_step_count", m.adam.step_count.to_string());
    put("adam_lr", format!("{:e}", a.lr));
    put("adam_beta1", format!("{:e}", a.beta1));
    put("adam_beta2", format!("{:e}", a.beta2));
    put("adam_eps", format!("{:e}", a.eps));
    put(
        "extracted",
        ck.extracted.as_ref().map_or("none".to_string(), |c| c.to_string()),
    );
    put("param_count", m.params.len().to_string());
    for (i, p) in m.params.iter().enumerate() {
        let shape: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
        put(&format!("param.{i}"), format!("{} {}", p.name, shape.join("x")));
    }
    for line in ck.config.to_text().lines() {
        let (k, v) = line.split_once(" = ").expect("config lines are key = value");
        put(&format!("config.{k}"), v.to_string());
    }
    put("payload_bytes", payload.len().to_string());
    put("payload_sha256", hex::encode(Sha256::digest(&payload)));
    text.push_str(END_MARKER);
    let mut out = text.into_bytes();
    out.extend(payload);
    out
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ck))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?, path)
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let first_nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| corrupt("missing header"))?;
    let magic = std::str::from_utf8(&bytes[..first_nl]).map_err(|_| corrupt("header is not text"))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Version(format!("checkpoint header {magic:?}, expected {CHECKPOINT_MAGIC}")));
    }
    let marker = format!("\n{END_MARKER}");
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker.as_bytes())
        .ok_or_else(|| corrupt("manifest is not terminated"))?;
    let manifest = std::str::from_utf8(&bytes[first_nl + 1..end + 1]).map_err(|_| corrupt("manifest is not text"))?;
    let payload = &bytes[end + marker.len()..];

    let mut fields = BTreeMap::new();
    let mut config_text = String::new();
    for line in manifest.lines() {
        if let Some(rest) = line.strip_prefix("config.") {
            config_text.push_str(rest);
            config_text.push('\n');
            continue;
        }
        let (k, v) = line
            .split_once(" = ")
            .ok_or_else(|| corrupt(format!("bad manifest line {line:?}")))?;
        fields.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| fields.get(k).ok_or_else(|| corrupt(format!("manifest lacks {k}")));
    fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
        v.parse().map_err(|_| corrupt(format!("bad value {v:?} for {k}")))
    }

    let expected_len: usize = num("payload_bytes", get("payload_bytes")?)?;
    if payload.len() != expected_len {
        return Err(corrupt(format!(
            "payload has {} bytes, manifest declares {expected_len}",
            payload.len()
        )));
    }
    if hex::encode(Sha256::digest(payload)) != *get("payload_sha256")? {
        return Err(corrupt("payload checksum mismatch"));
    }

    let config = RunConfig::parse(&config_text, path)?;
    let arch = crate::trainer::ModelArch {
        input_dim: num("input_dim", get("input_dim")?)?,
        hidden: num("hidden", get("hidden")?)?,
        layers: num("layers", get("layers")?)?,
        classes: num("classes", get("classes")?)?,
    };
    let criterion = PruneCriterion::parse(get("criterion")?)?;
    let adam_cfg = AdamConfig {
        lr: num("adam_lr", get("adam_lr")?)?,
        beta1: num("adam_beta1", get("adam_beta1")?)?,
        beta2: num("adam_beta2", get("adam_beta2")?)?,
        eps: num("adam_eps", get("adam_eps")?)?,
    };
    let seed_bytes = hex::decode(get("rng_seed")?).map_err(|_| corrupt("bad rng_seed"))?;
    let rng = RngState {
        seed: seed_bytes.try_into().map_err(|_| corrupt("rng_seed must be 32 bytes"))?,
        stream: num("rng_stream", get("rng_stream")?)?,
        word_pos: num("rng_word_pos", get("rng_word_pos")?)?,
    };
    let extracted = match get("extracted")?.as_str() {
        "none" => None,
        s => Some(s.parse::<SparsityConfig>()?),
    };

    let count: usize = num("param_count", get("param_count")?)?;
    let mut reals = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut take = |n: usize| -> Result<Vec<f64>> {
        let v: Vec<f64> = reals.by_ref().take(n).collect();
        if v.len() == n {
            Ok(v)
        } else {
            Err(corrupt("payload shorter than the declared parameters"))
        }
    };
    let mut params = ParamStore::new();
    let mut moments = Vec::with_capacity(count);
    for i in 0..count {
        let key = format!("param.{i}");
        let desc = get(&key)?;
        let (name, dims) = desc.split_once(' ').ok_or_else(|| corrupt(format!("bad {key}")))?;
        let shape: Vec<usize> = dims.split('x').map(|d| num(&key, d)).collect::<Result<_>>()?;
        let n = shape.iter().product();
        let value = Tensor::new(shape, take(n)?)?;
        params.add(name, value);
        moments.push(Moments { m: take(n)?, v: take(n)? });
    }
    if reals.next().is_some() {
        return Err(corrupt("payload longer than the declared parameters"));
    }
    let adam = AdamState::from_parts(adam_cfg, num("adam_step_count", get("adam_step_count")?)?, moments);
    let model = SupernetModel::from_parts(arch, params, adam, criterion)?;
    Ok(Checkpoint {
        model,
        step: num("step", get("step")?)?,
        rng,
        config,
        extracted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::ModelArch;

    fn sample() -> Checkpoint {
        let mut config = RunConfig::default();
        config.arch = ModelArch {
            input_dim: 3,
            hidden: 8,
            layers: 2,
            classes: 3,
        };
        config.space = crate::sparsity::SearchSpace::with_default_ratios(2).unwrap();
        let model = SupernetModel::new(config.arch, config.train.adam, PruneCriterion::Adam, 4).unwrap();
        Checkpoint {
            model,
            step: 0,
            rng: RngState {
                seed: [7; 32],
                stream: 1,
                word_pos: 12345,
            },
            config,
            extracted: Some("0.5;0.8".parse().unwrap()),
        }
    }

    #[test]
    fn encode_decode_encode_is_identical() {
        let ck = sample();
        let bytes = encode_checkpoint(&ck);
        let back = decode_checkpoint(&bytes, Path::new("x")).unwrap();
        assert_eq!(back, ck);
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn truncated_payload_is_corrupt() {
        let bytes = encode_checkpoint(&sample());
        let r = decode_checkpoint(&bytes[..bytes.len() - 5], Path::new("x"));
        assert!(matches!(r, Err(Error::Corrupt(_))), "{r:?}");
    }

    #[test]
    fn flipped_payload_byte_is_corrupt() {
        let mut bytes = encode_checkpoint(&sample());
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        assert!(matches!(decode_checkpoint(&bytes, Path::new("x")), Err(Error::Corrupt(_))));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut bytes = encode_checkpoint(&sample());
        bytes[4] = b'9';
        assert!(matches!(decode_checkpoint(&bytes, Path::new("x")), Err(Error::Version(_))));
    }
}
