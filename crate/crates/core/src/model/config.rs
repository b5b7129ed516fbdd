use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Model dimension at which the nominal FFN size is quoted; the effective FFN
/// hidden width is `(ffn_nominal / FFN_REFERENCE_DIM) * d_model`.
pub const FFN_REFERENCE_DIM: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityShape {
    pub channels: usize,
    pub timesteps: usize,
}

fn default_kernel() -> usize {
    3
}

fn default_dropout() -> f64 {
    0.1
}

/// Every quantity that determines a model instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_modalities: usize,
    pub modalities: Vec<ModalityShape>,
    pub cross_layers: usize,
    pub cross_heads: usize,
    pub self_layers: usize,
    pub self_heads: usize,
    pub d_model: usize,
    pub ffn_nominal: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    pub num_classes: usize,
    #[serde(default = "default_kernel")]
    pub kernel_size: usize,
}

impl ModelConfig {
    /// Same depth and head count in the cross-modal and fusion stacks.
    pub fn uniform(
        modalities: Vec<ModalityShape>,
        layers: usize,
        heads: usize,
        d_model: usize,
        ffn_nominal: usize,
        num_classes: usize,
    ) -> Self {
        Self {
            num_modalities: modalities.len(),
            modalities,
            cross_layers: layers,
            cross_heads: heads,
            self_layers: layers,
            self_heads: heads,
            d_model,
            ffn_nominal,
            dropout: default_dropout(),
            num_classes,
            kernel_size: default_kernel(),
        }
    }

    pub fn with_dropout(mut self, p: f64) -> Self {
        self.dropout = p;
        self
    }

    /// FFN coupling factor `ffn_nominal / 30`.
    pub fn alpha(&self) -> usize {
        self.ffn_nominal / FFN_REFERENCE_DIM
    }

    /// Effective FFN hidden width.
    pub fn ffn_hidden(&self) -> usize {
        self.alpha() * self.d_model
    }

    pub fn encoder_blocks(&self) -> usize {
        self.num_modalities * self.cross_layers + self.self_layers
    }

    pub fn fused_len(&self) -> usize {
        self.modalities.iter().map(|m| m.timesteps).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_modalities == 0 {
            return Err(Error::config("num_modalities must be at least 1"));
        }
        if self.modalities.len() != self.num_modalities {
            return Err(Error::config(format!(
                "num_modalities = {} but {} modality shapes given",
                self.num_modalities,
                self.modalities.len()
            )));
        }
        if let Some((i, m)) =
            self.modalities.iter().enumerate().find(|(_, m)| m.channels == 0 || m.timesteps == 0)
        {
            return Err(Error::config(format!("modality {i} has empty shape {m:?}")));
        }
        if self.cross_layers == 0 || self.self_layers == 0 {
            return Err(Error::config("layer counts must be at least 1"));
        }
        if self.d_model == 0 || self.cross_heads == 0 || self.self_heads == 0 {
            return Err(Error::config("d_model and head counts must be positive"));
        }
        for (what, h) in [("cross_heads", self.cross_heads), ("self_heads", self.self_heads)] {
            if !self.d_model.is_multiple_of(h) {
                return Err(Error::config(format!(
                    "(d_model = {}, {what} = {h}): d_model must be divisible by the head count",
                    self.d_model
                )));
            }
        }
        if self.ffn_nominal == 0 || !self.ffn_nominal.is_multiple_of(FFN_REFERENCE_DIM) {
            return Err(Error::config(format!(
                "ffn_nominal {} must be a positive multiple of {FFN_REFERENCE_DIM}",
                self.ffn_nominal
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be at least 2"));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::config(format!("kernel_size {} must be odd", self.kernel_size)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shapes(m: usize) -> Vec<ModalityShape> {
        vec![ModalityShape { channels: 1, timesteps: 8 }; m]
    }

    #[test]
    fn divisibility() {
        assert!(ModelConfig::uniform(shapes(6), 5, 3, 30, 120, 3).validate().is_ok());
        assert!(ModelConfig::uniform(shapes(6), 1, 3, 18, 120, 3).validate().is_ok());
        let e = ModelConfig::uniform(shapes(2), 1, 2, 9, 30, 3).validate().unwrap_err();
        assert_eq!(e.class(), "config-error");
        assert!(e.to_string().contains("d_model = 9") && e.to_string().contains("= 2"), "{e}");
    }

    #[test]
    fn alpha_coupling() {
        let c = ModelConfig::uniform(shapes(6), 1, 3, 18, 120, 3);
        assert_eq!(c.ffn_hidden(), 72);
        let c = ModelConfig::uniform(shapes(6), 1, 3, 18, 30, 3);
        assert_eq!(c.ffn_hidden(), 18);
        assert!(ModelConfig::uniform(shapes(1), 1, 1, 6, 45, 3).validate().is_err());
    }

    #[test]
    fn other_invariants() {
        let ok = ModelConfig::uniform(shapes(2), 1, 1, 6, 30, 3);
        let mut c = ok.clone();
        c.num_modalities = 3;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.kernel_size = 4;
        assert!(c.validate().is_err());
        assert!(ok.clone().with_dropout(1.0).validate().is_err());
        let mut c = ok;
        c.num_classes = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_field_names() {
        let c = ModelConfig::uniform(shapes(2), 1, 1, 12, 30, 3);
        let v: serde_json::Value = serde_json::to_value(&c).unwrap();
        for k in ["num_modalities", "cross_layers", "cross_heads", "self_layers", "self_heads", "d_model", "ffn_nominal"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        let back: ModelConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back, c);
    }
}
