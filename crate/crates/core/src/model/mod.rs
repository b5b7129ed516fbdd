//! Cross-modal transformer: per-modality Conv1D front-ends with sinusoidal
//! positions, `M` cross-modal streams attending over the fused sequence, a
//! self-attention fusion stack, mean pooling and a linear prediction head.

mod config;
mod count;
mod encoder;

use std::collections::BTreeMap;

pub use config::{ModalityShape, ModelConfig, FFN_REFERENCE_DIM};
pub use count::{analytic_param_count, per_block_params, ParamBreakdown};
pub use encoder::EncoderBlock;

use encoder::{Init, LinearIds};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{grad_check, GradCheckReport, Gradients, Graph, ParamId, ParamStore, Sampling, Tensor, Var};

/// Sinusoidal table: `PE[t, 2i] = sin(t / 10000^(2i/d))`, `PE[t, 2i+1] = cos(..)`.
/// For odd `d` the final column keeps only its sine.
pub fn positional_encoding(t_len: usize, d: usize) -> Tensor {
    let mut pe = vec![0.0; t_len * d];
    for t in 0..t_len {
        for c in 0..d {
            let pair = (c / 2 * 2) as f64;
            let angle = t as f64 / 10000f64.powf(pair / d as f64);
            pe[t * d + c] = if c % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(&[t_len, d], pe).expect("positional encoding shape")
}

#[derive(Debug, Clone)]
struct FrontEnd {
    conv_w: ParamId,
    conv_b: ParamId,
    pe: Tensor,
}

/// Graph handles for intermediate representations, for inspection in tests.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    /// Unimodal sequences after conv + positions, `[B*T_i, d]` each.
    pub unimodal: Vec<Var>,
    /// Fused sequence `Y_F`, `[B*ΣT_i, d]`.
    pub fused: Var,
    /// Key/value source handed to each cross-modal layer, per stream.
    pub cross_kv: Vec<Vec<Var>>,
    /// Output of each cross-modal stream.
    pub streams: Vec<Var>,
    pub fusion: Var,
    pub pooled: Var,
    pub logits: Var,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    front: Vec<FrontEnd>,
    cross: Vec<Vec<EncoderBlock>>,
    fusion: Vec<EncoderBlock>,
    head: LinearIds,
    params: ParamStore,
}

impl Model {
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let f = config.ffn_hidden();
        let mut init = Init { seed, tensors: BTreeMap::new() };
        for (i, m) in config.modalities.iter().enumerate() {
            init.conv(&format!("front{i:02}.conv"), m.channels, d, config.kernel_size);
        }
        for i in 0..config.num_modalities {
            for u in 0..config.cross_layers {
                init.block(&format!("cross{i:02}.layer{u:02}"), d, f);
            }
        }
        for u in 0..config.self_layers {
            init.block(&format!("fusion.layer{u:02}"), d, f);
        }
        init.linear("head", d, config.num_classes);
        let params = ParamStore::from_map(init.tensors);

        let front = config
            .modalities
            .iter()
            .enumerate()
            .map(|(i, m)| {
                Ok(FrontEnd {
                    conv_w: params.expect_id(&format!("front{i:02}.conv.weight"))?,
                    conv_b: params.expect_id(&format!("front{i:02}.conv.bias"))?,
                    pe: positional_encoding(m.timesteps, d),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let cross = (0..config.num_modalities)
            .map(|i| {
                (0..config.cross_layers)
                    .map(|u| {
                        EncoderBlock::resolve(
                            &params,
                            &format!("cross{i:02}.layer{u:02}"),
                            config.cross_heads,
                            config.dropout,
                        )
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let fusion = (0..config.self_layers)
            .map(|u| {
                EncoderBlock::resolve(&params, &format!("fusion.layer{u:02}"), config.self_heads, config.dropout)
            })
            .collect::<Result<Vec<_>>>()?;
        let head = LinearIds::resolve(&params, "head")?;
        Ok(Self { config: config.clone(), front, cross, fusion, head, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn encoder_block_count(&self) -> usize {
        self.cross.iter().map(Vec::len).sum::<usize>() + self.fusion.len()
    }

    /// Exact enumeration over the parameter store.
    pub fn count_params(&self) -> usize {
        self.params.total_count()
    }

    fn check_batch(&self, batch: &[Tensor]) -> Result<usize> {
        if batch.len() != self.config.num_modalities {
            return Err(Error::dim(format!(
                "{} modality tensors for a {}-modality model",
                batch.len(),
                self.config.num_modalities
            )));
        }
        let b = batch[0].shape().first().copied().unwrap_or(0);
        for (i, (x, m)) in batch.iter().zip(&self.config.modalities).enumerate() {
            if x.shape() != [b, m.channels, m.timesteps] {
                return Err(Error::dim(format!(
                    "modality {i}: expected [{b}, {}, {}], got {:?}",
                    m.channels,
                    m.timesteps,
                    x.shape()
                )));
            }
        }
        Ok(b)
    }

    /// Builds the forward pass on `g`, which must borrow this model's parameters.
    pub fn forward_vars(&self, g: &mut Graph, batch: &[Tensor]) -> Result<ForwardVars> {
        let b = self.check_batch(batch)?;
        let d = self.config.d_model;

        let mut unimodal = Vec::with_capacity(self.front.len());
        for (fe, x) in self.front.iter().zip(batch) {
            let xv = g.constant(x.clone());
            let w = g.param(fe.conv_w);
            let bias = g.param(fe.conv_b);
            let tokens = g.conv1d_tokens(xv, w, bias)?;
            let t_len = fe.pe.shape()[0];
            let mut tiled = Vec::with_capacity(b * t_len * d);
            for _ in 0..b {
                tiled.extend_from_slice(fe.pe.data());
            }
            let pe = g.constant(Tensor::new(&[b * t_len, d], tiled)?);
            unimodal.push(g.add(tokens, pe)?);
        }
        let fused = g.concat_seq(&unimodal, b)?;

        let mut cross_kv = Vec::with_capacity(self.cross.len());
        let mut streams = Vec::with_capacity(self.cross.len());
        for (stack, &y) in self.cross.iter().zip(&unimodal) {
            let mut z = y;
            let mut kvs = Vec::with_capacity(stack.len());
            for block in stack {
                // keys/values always come from the layer-0 fused sequence
                kvs.push(fused);
                z = block.forward(g, z, fused, b)?;
            }
            cross_kv.push(kvs);
            streams.push(z);
        }

        let mut z = g.concat_seq(&streams, b)?;
        for block in &self.fusion {
            z = block.forward(g, z, z, b)?;
        }
        let pooled = g.mean_pool(z, b)?;
        let logits = self.head.apply(g, pooled)?;
        Ok(ForwardVars { unimodal, fused, cross_kv, streams, fusion: z, pooled, logits })
    }

    pub fn forward(&self, g: &mut Graph, batch: &[Tensor]) -> Result<Var> {
        Ok(self.forward_vars(g, batch)?.logits)
    }

    /// Evaluation-mode logits `[B, n]`.
    pub fn logits(&self, batch: &[Tensor]) -> Result<Tensor> {
        let mut g = Graph::new(&self.params);
        let out = self.forward(&mut g, batch)?;
        Ok(g.value(out).clone())
    }

    /// Mean cross-entropy and its parameter gradients for one batch.
    pub fn loss_and_grads(
        &self,
        batch: &[Tensor],
        labels: &[usize],
        train: bool,
        seed: u64,
        step: u64,
    ) -> Result<(f64, Gradients)> {
        let mut g = Graph::with_mode(&self.params, train, seed, step);
        let logits = self.forward(&mut g, batch)?;
        let loss = g.cross_entropy(logits, labels)?;
        let value = g.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {value}")));
        }
        let grads = g.backward(loss)?;
        Ok((value, grads))
    }
}

/// Two 2x4 modalities, one layer, one head, `d_model = 6`, FFN hidden 6,
/// three classes.
pub fn minimal_config() -> ModelConfig {
    ModelConfig::uniform(vec![ModalityShape { channels: 2, timesteps: 4 }; 2], 1, 1, 6, 30, 3)
}

/// Finite-difference check of the full model's cross-entropy gradient on a
/// random batch of `batch` samples with inputs in `[-1, 1)`.
pub fn model_grad_check(
    config: &ModelConfig,
    batch: usize,
    seed: u64,
    eps: f64,
    sampling: Sampling,
) -> Result<GradCheckReport> {
    let model = Model::build(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let inputs = config
        .modalities
        .iter()
        .map(|m| {
            let n = batch * m.channels * m.timesteps;
            Tensor::new(&[batch, m.channels, m.timesteps], (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = (0..batch).map(|j| j % config.num_classes).collect();
    grad_check(model.params(), eps, sampling, |g| {
        let logits = model.forward(g, &inputs)?;
        g.cross_entropy(logits, &labels)
    })
}
