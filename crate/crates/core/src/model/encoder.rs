use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numerics::{Graph, ParamId, ParamStore, Tensor, Var};

/// FNV-1a, so each parameter's initial values depend only on `(seed, name)`.
fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Uniform in `±sqrt(1/fan_in)`.
pub(crate) fn init_uniform(shape: &[usize], fan_in: usize, seed: u64, name: &str) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_hash(name));
    let bound = (1.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-bound..bound)).collect()).expect("init shape")
}

/// Collects freshly initialized tensors during model construction.
pub(crate) struct Init {
    pub seed: u64,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Init {
    pub fn linear(&mut self, prefix: &str, d_in: usize, d_out: usize) {
        let w = format!("{prefix}.weight");
        let b = format!("{prefix}.bias");
        self.tensors.insert(w.clone(), init_uniform(&[d_in, d_out], d_in, self.seed, &w));
        self.tensors.insert(b.clone(), init_uniform(&[d_out], d_in, self.seed, &b));
    }

    pub fn layer_norm(&mut self, prefix: &str, d: usize) {
        self.tensors.insert(format!("{prefix}.gain"), Tensor::filled(&[d], 1.0));
        self.tensors.insert(format!("{prefix}.bias"), Tensor::zeros(&[d]));
    }

    pub fn conv(&mut self, prefix: &str, c_in: usize, c_out: usize, k: usize) {
        let w = format!("{prefix}.weight");
        let b = format!("{prefix}.bias");
        self.tensors.insert(w.clone(), init_uniform(&[c_out, c_in, k], c_in * k, self.seed, &w));
        self.tensors.insert(b.clone(), init_uniform(&[c_out], c_in * k, self.seed, &b));
    }

    pub fn block(&mut self, prefix: &str, d: usize, f: usize) {
        for p in ["q", "k", "v", "o"] {
            self.linear(&format!("{prefix}.attn.{p}"), d, d);
        }
        self.layer_norm(&format!("{prefix}.ln0"), d);
        self.layer_norm(&format!("{prefix}.ln1"), d);
        self.linear(&format!("{prefix}.ffn.fc1"), d, f);
        self.linear(&format!("{prefix}.ffn.fc2"), f, d);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearIds {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl LinearIds {
    pub(crate) fn resolve(store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(Self {
            weight: store.expect_id(&format!("{prefix}.weight"))?,
            bias: store.expect_id(&format!("{prefix}.bias"))?,
        })
    }

    pub(crate) fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.linear(x, w, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NormIds {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl NormIds {
    fn resolve(store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(Self {
            gain: store.expect_id(&format!("{prefix}.gain"))?,
            bias: store.expect_id(&format!("{prefix}.bias"))?,
        })
    }

    fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.layer_norm(x, gain, bias)
    }
}

/// One pre-norm encoder layer. With distinct query and key/value sources it
/// is a cross-modal layer; with the same source it is plain self-attention.
#[derive(Debug, Clone)]
pub struct EncoderBlock {
    pub name: String,
    pub heads: usize,
    pub dropout: f64,
    q: LinearIds,
    k: LinearIds,
    v: LinearIds,
    o: LinearIds,
    ln0: NormIds,
    ln1: NormIds,
    fc1: LinearIds,
    fc2: LinearIds,
}

impl EncoderBlock {
    pub(crate) fn resolve(store: &ParamStore, name: &str, heads: usize, dropout: f64) -> Result<Self> {
        let lin = |p: &str| LinearIds::resolve(store, &format!("{name}.{p}"));
        Ok(Self {
            name: name.to_string(),
            heads,
            dropout,
            q: lin("attn.q")?,
            k: lin("attn.k")?,
            v: lin("attn.v")?,
            o: lin("attn.o")?,
            ln0: NormIds::resolve(store, &format!("{name}.ln0"))?,
            ln1: NormIds::resolve(store, &format!("{name}.ln1"))?,
            fc1: lin("ffn.fc1")?,
            fc2: lin("ffn.fc2")?,
        })
    }

    /// `query[B*Tq, d]` attends over `kv[B*Tk, d]`:
    ///
    /// ```text
    /// a   = Attn(LN0(query), LN0(kv))
    /// mid = a + LN0(query)
    /// out = FFN(LN1(mid)) + LN1(mid)
    /// ```
    pub fn forward(&self, g: &mut Graph, query: Var, kv: Var, batch: usize) -> Result<Var> {
        let q_in = self.ln0.apply(g, query)?;
        let kv_in = if kv == query { q_in } else { self.ln0.apply(g, kv)? };
        let q = self.q.apply(g, q_in)?;
        let k = self.k.apply(g, kv_in)?;
        let v = self.v.apply(g, kv_in)?;
        let att = g.attention(q, k, v, batch, self.heads)?;
        let att = self.o.apply(g, att)?;
        let att = g.dropout(att, self.dropout)?;
        let mid = g.add(att, q_in)?;

        let n1 = self.ln1.apply(g, mid)?;
        let h = self.fc1.apply(g, n1)?;
        let h = g.relu(h);
        let h = g.dropout(h, self.dropout)?;
        let h = self.fc2.apply(g, h)?;
        let h = g.dropout(h, self.dropout)?;
        g.add(h, n1)
    }
}
