use std::collections::BTreeMap;

use super::AdamConfig;
use crate::error::{Error, Result};
use crate::imageproc::{GuidedFilterParams, SegmentParams};
use crate::losses::LossWeights;
use crate::ssa::SsaConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub steps: usize,
    /// Frame pairs per step; their losses are averaged.
    pub batch_size: usize,
    pub image_size: usize,
    pub base_channels: usize,
    /// Patch width and levels; whether it runs is `ssa_on`.
    pub ssa: SsaConfig,
    pub ssa_on: bool,
    pub pmc_on: bool,
    pub weights: LossWeights,
    pub seed: u64,
    /// Write a checkpoint and a sample every this many steps (0: only at the end).
    pub checkpoint_interval: usize,
    pub guided: GuidedFilterParams,
    /// `None`: defaults scaled to the image size.
    pub segment: Option<SegmentParams>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            steps: 200,
            batch_size: 1,
            image_size: 64,
            base_channels: 32,
            ssa: SsaConfig::default(),
            ssa_on: true,
            pmc_on: true,
            weights: LossWeights::default(),
            seed: 0,
            checkpoint_interval: 0,
            guided: GuidedFilterParams::default(),
            segment: None,
        }
    }
}

impl TrainConfig {
    /// SSA settings with `enabled` taken from `ssa_on`.
    pub fn effective_ssa(&self) -> SsaConfig {
        SsaConfig {
            enabled: self.ssa_on,
            ..self.ssa.clone()
        }
    }

    pub fn segment_params(&self) -> SegmentParams {
        self.segment
            .unwrap_or_else(|| SegmentParams::for_size(self.image_size, self.image_size))
    }

    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        self.ssa.validate()?;
        if self.batch_size == 0 || self.base_channels == 0 {
            return Err(Error::Contract("batch_size and base_channels must be positive".into()));
        }
        if self.image_size < 8 || !self.image_size.is_multiple_of(4) {
            return Err(Error::Contract(format!(
                "image_size must be a multiple of 4 and at least 8, got {}",
                self.image_size
            )));
        }
        LossWeights::from_array(self.weights.to_array())?;
        Ok(())
    }

    /// `key=value` lines; floats use their shortest exact representation.
    pub fn to_kv(&self) -> String {
        let w = self.weights.to_array().map(|v| v.to_string()).join(",");
        let levels = self.ssa.levels.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",");
        let seg = self.segment_params();
        let mut lines = vec![
            format!("learning_rate={}", self.adam.learning_rate),
            format!("beta1={}", self.adam.beta1),
            format!("beta2={}", self.adam.beta2),
            format!("adam_eps={}", self.adam.eps),
            format!("steps={}", self.steps),
            format!("batch_size={}", self.batch_size),
            format!("image_size={}", self.image_size),
            format!("base_channels={}", self.base_channels),
            format!("ssa_r={}", self.ssa.patch_width),
            format!("ssa_levels={levels}"),
            format!("ssa_on={}", self.ssa_on),
            format!("pmc_on={}", self.pmc_on),
            format!("weights={w}"),
            format!("seed={}", self.seed),
            format!("checkpoint_interval={}", self.checkpoint_interval),
            format!("guided_radius={}", self.guided.radius),
            format!("guided_eps={}", self.guided.eps),
        ];
        if self.segment.is_some() {
            lines.push(format!("seg_k={}", seg.k));
            lines.push(format!("seg_sigma={}", seg.sigma));
            lines.push(format!("seg_min_size={}", seg.min_size));
        }
        lines.join("\n") + "\n"
    }

    /// Parses [`TrainConfig::to_kv`] output. Missing keys keep their defaults.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Schema(format!("config line without '=': {line}")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        fn get<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str, slot: &mut T) -> Result<()> {
            if let Some(v) = map.get(key) {
                *slot = v
                    .parse()
                    .map_err(|_| Error::Schema(format!("config key {key}: cannot parse '{v}'")))?;
            }
            Ok(())
        }
        let mut c = TrainConfig::default();
        get(&map, "learning_rate", &mut c.adam.learning_rate)?;
        get(&map, "beta1", &mut c.adam.beta1)?;
        get(&map, "beta2", &mut c.adam.beta2)?;
        get(&map, "adam_eps", &mut c.adam.eps)?;
        get(&map, "steps", &mut c.steps)?;
        get(&map, "batch_size", &mut c.batch_size)?;
        get(&map, "image_size", &mut c.image_size)?;
        get(&map, "base_channels", &mut c.base_channels)?;
        get(&map, "ssa_r", &mut c.ssa.patch_width)?;
        get(&map, "ssa_on", &mut c.ssa_on)?;
        get(&map, "pmc_on", &mut c.pmc_on)?;
        get(&map, "seed", &mut c.seed)?;
        get(&map, "checkpoint_interval", &mut c.checkpoint_interval)?;
        get(&map, "guided_radius", &mut c.guided.radius)?;
        get(&map, "guided_eps", &mut c.guided.eps)?;
        if let Some(levels) = map.get("ssa_levels") {
            c.ssa.levels = levels
                .split(',')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|_| Error::Schema(format!("bad ssa level '{s}'"))))
                .collect::<Result<_>>()?;
        }
        if let Some(w) = map.get("weights") {
            c.weights = LossWeights::parse(w).map_err(|e| Error::Schema(e.to_string()))?;
        }
        if map.contains_key("seg_k") {
            let mut seg = SegmentParams::default();
            get(&map, "seg_k", &mut seg.k)?;
            get(&map, "seg_sigma", &mut seg.sigma)?;
            get(&map, "seg_min_size", &mut seg.min_size)?;
            c.segment = Some(seg);
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let mut c = TrainConfig {
            steps: 17,
            pmc_on: false,
            seed: 99,
            weights: LossWeights::from_array([0.1, 1.0, 2.5e-3, 200.0, 1.0 / 3.0, 0.0]).unwrap(),
            ..TrainConfig::default()
        };
        c.ssa.patch_width = 5;
        c.ssa.levels = vec![1];
        assert_eq!(TrainConfig::from_kv(&c.to_kv()).unwrap(), c);
        c.segment = Some(SegmentParams { k: 50.0, sigma: 0.0, min_size: 4 });
        assert_eq!(TrainConfig::from_kv(&c.to_kv()).unwrap(), c);
        assert!(TrainConfig::from_kv("steps=abc").is_err());
        assert!(TrainConfig::from_kv("nonsense").is_err());
    }

    #[test]
    fn validation() {
        TrainConfig::default().validate().unwrap();
        assert!(TrainConfig { image_size: 30, ..TrainConfig::default() }.validate().is_err());
        let mut c = TrainConfig::default();
        c.adam.learning_rate = 0.0;
        assert!(c.validate().is_err());
    }
}
