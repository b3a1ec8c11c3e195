use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};

/// Per-layer sparsity ratios allowed during training and search.
///
/// `0.0` is always part of the space but is reserved for the dense network:
/// random sampling and search only draw from [`SearchSpace::sampleable`].
#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpace {
    num_layers: usize,
    allowed: Vec<f64>,
}

impl SearchSpace {
    pub const DEFAULT_RATIOS: [f64; 5] = [0.0, 0.5, 0.6, 0.7, 0.8];

    pub fn new(num_layers: usize, allowed: Vec<f64>) -> Result<Self> {
        if num_layers == 0 {
            return Err(Error::param("search space needs at least one layer"));
        }
        if allowed.first() != Some(&0.0) {
            return Err(Error::param("allowed ratios must start with 0.0"));
        }
        if allowed.iter().any(|r| !(0.0..1.0).contains(r)) {
            return Err(Error::param("allowed ratios must lie in [0, 1)"));
        }
        if allowed.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("allowed ratios must be strictly increasing"));
        }
        if allowed.len() < 2 {
            return Err(Error::param("no sampleable ratio besides 0.0"));
        }
        Ok(Self { num_layers, allowed })
    }

    pub fn with_default_ratios(num_layers: usize) -> Result<Self> {
        Self::new(num_layers, Self::DEFAULT_RATIOS.to_vec())
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn allowed(&self) -> &[f64] {
        &self.allowed
    }

    pub fn sampleable(&self) -> &[f64] {
        &self.allowed[1..]
    }

    pub fn max_ratio(&self) -> f64 {
        *self.allowed.last().expect("nonempty")
    }

    /// Number of configurations built from sampleable ratios only.
    pub fn num_configs(&self) -> u128 {
        (self.sampleable().len() as u128).saturating_pow(self.num_layers as u32)
    }

    pub fn dense(&self) -> SparsityConfig {
        SparsityConfig::uniform(0.0, self.num_layers)
    }

    pub fn sparsest(&self) -> SparsityConfig {
        SparsityConfig::uniform(self.max_ratio(), self.num_layers)
    }

    /// Each layer drawn independently and uniformly from the sampleable ratios.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SparsityConfig {
        let s = self.sampleable();
        SparsityConfig {
            ratios: (0..self.num_layers).map(|_| s[rng.gen_range(0..s.len())]).collect(),
        }
    }

    pub fn contains(&self, config: &SparsityConfig) -> bool {
        config.len() == self.num_layers && config.ratios.iter().all(|r| self.allowed.contains(r))
    }

    pub fn is_sampleable(&self, config: &SparsityConfig) -> bool {
        config.len() == self.num_layers && config.ratios.iter().all(|r| self.sampleable().contains(r))
    }

    pub fn validate(&self, config: &SparsityConfig) -> Result<()> {
        if config.len() != self.num_layers {
            return Err(Error::param(format!(
                "config has {} layers, space has {}",
                config.len(),
                self.num_layers
            )));
        }
        if let Some(r) = config.ratios.iter().find(|r| !self.allowed.contains(r)) {
            return Err(Error::param(format!("ratio {r} is not in the search space")));
        }
        Ok(())
    }

    /// Every sampleable configuration in lexicographic order of ratio index.
    pub fn enumerate(&self) -> impl Iterator<Item = SparsityConfig> + '_ {
        let k = self.sampleable().len();
        let total = self.num_configs();
        (0..total).map(move |mut code| {
            let mut ratios = vec![0.0; self.num_layers];
            for slot in ratios.iter_mut().rev() {
                *slot = self.sampleable()[(code % k as u128) as usize];
                code /= k as u128;
            }
            SparsityConfig { ratios }
        })
    }

    /// Uniform configurations, one per sampleable ratio.
    pub fn uniform_configs(&self) -> Vec<SparsityConfig> {
        self.sampleable()
            .iter()
            .map(|&s| SparsityConfig::uniform(s, self.num_layers))
            .collect()
    }
}

/// Layerwise sparsity ratios `[s_1, ..., s_L]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparsityConfig {
    ratios: Vec<f64>,
}

impl SparsityConfig {
    pub fn new(ratios: Vec<f64>) -> Result<Self> {
        if let Some(r) = ratios.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(Error::param(format!("sparsity {r} outside [0, 1)")));
        }
        Ok(Self { ratios })
    }

    pub fn uniform(ratio: f64, layers: usize) -> Self {
        Self {
            ratios: vec![ratio; layers],
        }
    }

    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    pub fn ratios_mut(&mut self) -> &mut [f64] {
        &mut self.ratios
    }

    pub fn len(&self) -> usize {
        self.ratios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratios.is_empty()
    }

    /// Lexicographic total order over the ratios.
    pub fn lex_cmp(&self, other: &Self) -> Ordering {
        for (a, b) in self.ratios.iter().zip(&other.ratios) {
            match a.total_cmp(b) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        self.ratios.len().cmp(&other.ratios.len())
    }

    /// Bit pattern key, usable in hash maps.
    pub fn key(&self) -> Vec<u64> {
        self.ratios.iter().map(|r| r.to_bits()).collect()
    }
}

impl fmt::Display for SparsityConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, r) in self.ratios.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{r:?}")?;
        }
        Ok(())
    }
}

impl FromStr for SparsityConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let ratios = s
            .trim()
            .split(';')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::param(format!("invalid sparsity value {tok:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        SparsityConfig::new(ratios)
    }
}

/// `floor(s · n_blocks)`, treating products within rounding noise of an
/// integer as that integer (so that e.g. `0.6 · 10` counts as 6).
pub fn pruned_block_count(sparsity: f64, n_blocks: usize) -> usize {
    let x = sparsity * n_blocks as f64;
    let nearest = x.round();
    let k = if (x - nearest).abs() <= 1e-9 * (n_blocks.max(1) as f64) {
        nearest
    } else {
        x.floor()
    };
    (k.max(0.0) as usize).min(n_blocks)
}
