//! Training and model-shape configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textgraph::Aggregator;

/// Hyperparameters for model shape and optimization.
///
/// Defaults: learning rate 0.001, dropout 0.5, batch size 32, LSTM
/// aggregator with three graph layers, 50 LSTM cells, 100-wide node
/// representations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub layers: usize,
    pub aggregator: Aggregator,
    /// LSTM cell count per direction.
    pub hidden: usize,
    /// Node representation width after the graph stack.
    pub gnn_dim: usize,
    /// Refined pair feature width.
    pub pair_hidden: usize,
    /// Trainable embedding width (ignored when a pretrained table is given).
    pub embed_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            dropout: 0.5,
            batch_size: 32,
            max_epochs: 300,
            patience: 20,
            seed: 42,
            layers: 3,
            aggregator: Aggregator::Lstm,
            hidden: 50,
            gnn_dim: 100,
            pair_hidden: 50,
            embed_dim: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        for (name, value) in [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("layers", self.layers),
            ("hidden", self.hidden),
            ("gnn_dim", self.gnn_dim),
            ("pair_hidden", self.pair_hidden),
            ("embed_dim", self.embed_dim),
        ] {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_roundtrip() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.lr, 0.001);
        assert_eq!(cfg.dropout, 0.5);
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.hidden, 50);
        assert_eq!(cfg.layers, 3);
        assert_eq!(cfg.aggregator, Aggregator::Lstm);

        let json = serde_json::to_string(&cfg).unwrap();
        let back: TrainConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: TrainConfig = serde_json::from_str(r#"{"lr":0.01,"aggregator":"mean"}"#).unwrap();
        assert_eq!(cfg.lr, 0.01);
        assert_eq!(cfg.aggregator, Aggregator::Mean);
        assert_eq!(cfg.batch_size, 32);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut cfg = TrainConfig::default();
        cfg.dropout = 1.0;
        assert!(cfg.validate().is_err());
        cfg.dropout = 0.5;
        cfg.layers = 0;
        assert!(cfg.validate().is_err());
    }
}
