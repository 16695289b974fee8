use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use stratlab_autodiff::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use stratlab_autodiff::{Bound, Graph, ParamStore, Tensor, Var};
use stratlab_core::Real;

use crate::attention::{multi_head, AttentionKind, HeadWeights};
use crate::config::InformerConfig;
use crate::data::Batch;
use crate::error::{Error, Result};

pub const CONV_KERNEL: usize = 3;
pub const POOL_WINDOW: usize = 3;
pub const POOL_STRIDE: usize = 2;

/// Input layout the model was built for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    pub n_real: usize,
    pub cardinalities: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct InformerModel<T> {
    pub config: InformerConfig,
    pub input: InputSpec,
    pub params: ParamStore<T>,
}

/// Sinusoidal position code, `(len, d)` row-major.
pub fn positional_encoding(len: usize, d: usize) -> Vec<f64> {
    let mut pe = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
            pe[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

/// Sequence length after one distilling step.
pub fn distilled_len(len: usize) -> usize {
    (len + 2 * (POOL_WINDOW / 2) - POOL_WINDOW) / POOL_STRIDE + 1
}

fn heads(b: &Bound, prefix: &str) -> Result<HeadWeights> {
    Ok(HeadWeights {
        wq: b.var(&format!("{prefix}.wq"))?,
        wk: b.var(&format!("{prefix}.wk"))?,
        wv: b.var(&format!("{prefix}.wv"))?,
    })
}

impl<T: Real> InformerModel<T> {
    /// Fresh model with uniform fan-in initialisation drawn from `config.seed`.
    pub fn new(config: InformerConfig, input: InputSpec) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (d, f) = (config.d_model, config.d_ff);
        let mut p = ParamStore::new();
        let k = config.output_dim();

        p.insert_uniform("embed.real.w", &[input.n_real.max(1), d], input.n_real.max(1), &mut rng)?;
        p.insert_uniform("embed.real.b", &[d], input.n_real.max(1), &mut rng)?;
        for (j, &card) in input.cardinalities.iter().enumerate() {
            p.insert_uniform(format!("embed.cat{j}.table"), &[card, d], 1, &mut rng)?;
        }
        if !input.cardinalities.is_empty() {
            let width = input.cardinalities.len() * d;
            p.insert_uniform("embed.cat.w", &[width, d], width, &mut rng)?;
            p.insert_uniform("embed.cat.b", &[d], width, &mut rng)?;
        }
        let attn = |p: &mut ParamStore<T>, prefix: &str, rng: &mut ChaCha8Rng| -> Result<()> {
            for m in ["wq", "wk", "wv"] {
                p.insert_uniform(format!("{prefix}.{m}"), &[d, d], d, rng)?;
            }
            Ok(())
        };
        for i in 0..config.encoder_layers {
            attn(&mut p, &format!("enc{i}.attn"), &mut rng)?;
            p.insert_uniform(format!("enc{i}.conv.w"), &[CONV_KERNEL, d, d], CONV_KERNEL * d, &mut rng)?;
            p.insert_uniform(format!("enc{i}.conv.b"), &[d], CONV_KERNEL * d, &mut rng)?;
        }
        for j in 0..config.decoder_layers {
            attn(&mut p, &format!("dec{j}.self"), &mut rng)?;
            attn(&mut p, &format!("dec{j}.cross"), &mut rng)?;
            for n in 1..=3 {
                p.insert(format!("dec{j}.ln{n}.g"), Tensor::ones(&[d]))?;
                p.insert(format!("dec{j}.ln{n}.b"), Tensor::zeros(&[d]))?;
            }
            p.insert_uniform(format!("dec{j}.ffn.w1"), &[d, f], d, &mut rng)?;
            p.insert_uniform(format!("dec{j}.ffn.b1"), &[f], d, &mut rng)?;
            p.insert_uniform(format!("dec{j}.ffn.w2"), &[f, d], f, &mut rng)?;
            p.insert_uniform(format!("dec{j}.ffn.b2"), &[d], f, &mut rng)?;
        }
        p.insert_uniform("head.w", &[d, k], d, &mut rng)?;
        p.insert_uniform("head.b", &[k], d, &mut rng)?;
        Ok(InformerModel {
            config,
            input,
            params: p,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let n = self.config.past_window;
        if batch.past_window != n || batch.n_real != self.input.n_real || batch.cats.len() != self.input.cardinalities.len() {
            return Err(Error::Data(format!(
                "batch (window {}, {} real, {} categorical) does not match model (window {n}, {} real, {} categorical)",
                batch.past_window,
                batch.n_real,
                batch.cats.len(),
                self.input.n_real,
                self.input.cardinalities.len()
            )));
        }
        if batch.real.len() != batch.size * n * batch.n_real || batch.cats.iter().any(|c| c.len() != batch.size * n) {
            return Err(Error::Data("batch buffers do not match its declared size".into()));
        }
        Ok(())
    }

    /// Real projection + categorical projection + positional code, (B, n, d).
    pub fn embed(&self, g: &mut Graph<T>, b: &Bound, batch: &Batch) -> Result<Var> {
        self.check_batch(batch)?;
        let (bs, n, d) = (batch.size, batch.past_window, self.config.d_model);
        let real_in = if self.input.n_real == 0 {
            Tensor::zeros(&[bs, n, 1])
        } else {
            Tensor::from_f64(&[bs, n, self.input.n_real], &batch.real)?
        };
        let x = g.constant(real_in);
        let proj = g.matmul(x, b.var("embed.real.w")?)?;
        let mut out = g.add_bias(proj, b.var("embed.real.b")?)?;
        if !self.input.cardinalities.is_empty() {
            let mut parts = Vec::with_capacity(batch.cats.len());
            for (j, ids) in batch.cats.iter().enumerate() {
                parts.push(g.embedding(b.var(&format!("embed.cat{j}.table"))?, ids, &[bs, n])?);
            }
            let cat = g.concat(&parts, 2)?;
            let cat = g.matmul(cat, b.var("embed.cat.w")?)?;
            let cat = g.add_bias(cat, b.var("embed.cat.b")?)?;
            out = g.add(out, cat)?;
        }
        let pe = positional_encoding(n, d);
        let pe: Vec<f64> = (0..bs).flat_map(|_| pe.iter().copied()).collect();
        let pe = g.constant(Tensor::from_f64(&[bs, n, d], &pe)?);
        Ok(g.add(out, pe)?)
    }

    /// `MaxPool(ELU(Conv1d(MHSA(x))))`, halving the time axis.
    pub fn encoder_layer(&self, g: &mut Graph<T>, b: &Bound, i: usize, x: Var) -> Result<Var> {
        if g.shape(x)[1] < 2 {
            return Err(Error::Data("encoder input must have at least 2 time steps".into()));
        }
        let kind = AttentionKind::ProbSparse {
            factor: self.config.sampling_factor,
        };
        let a = multi_head(g, x, x, heads(b, &format!("enc{i}.attn"))?, self.config.n_heads, kind)?;
        let c = g.conv1d(
            a,
            b.var(&format!("enc{i}.conv.w"))?,
            b.var(&format!("enc{i}.conv.b"))?,
            1,
            CONV_KERNEL / 2,
        )?;
        let e = g.elu(c);
        Ok(g.maxpool1d(e, POOL_WINDOW, POOL_STRIDE, POOL_WINDOW / 2)?)
    }

    pub fn encode(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        let mut z = x;
        for i in 0..self.config.encoder_layers {
            z = self.encoder_layer(g, b, i, z)?;
        }
        Ok(z)
    }

    fn layer_norm(&self, g: &mut Graph<T>, b: &Bound, prefix: &str, x: Var) -> Result<Var> {
        Ok(g.layer_norm(x, b.var(&format!("{prefix}.g"))?, b.var(&format!("{prefix}.b"))?)?)
    }

    /// Self-attention and cross-attention sublayers, summed, then the
    /// position-wise feed-forward sublayer. Each sublayer has a residual
    /// connection, dropout and layer normalisation.
    pub fn decoder_layer(&self, g: &mut Graph<T>, b: &Bound, j: usize, y: Var, z: Var) -> Result<Var> {
        let c = &self.config;
        let p = format!("dec{j}");
        let sparse = AttentionKind::ProbSparse {
            factor: c.sampling_factor,
        };
        let s = multi_head(g, y, y, heads(b, &format!("{p}.self"))?, c.n_heads, sparse)?;
        let s = g.dropout(s, c.dropout)?;
        let s = g.add(s, y)?;
        let y1 = self.layer_norm(g, b, &format!("{p}.ln1"), s)?;

        let x = multi_head(g, y1, z, heads(b, &format!("{p}.cross"))?, c.n_heads, AttentionKind::Dense)?;
        let x = g.dropout(x, c.dropout)?;
        let x = g.add(x, y1)?;
        let y2 = self.layer_norm(g, b, &format!("{p}.ln2"), x)?;

        let y3 = g.add(y1, y2)?;
        let h = g.matmul(y3, b.var(&format!("{p}.ffn.w1"))?)?;
        let h = g.add_bias(h, b.var(&format!("{p}.ffn.b1"))?)?;
        let h = g.relu(h);
        let h = g.matmul(h, b.var(&format!("{p}.ffn.w2"))?)?;
        let h = g.add_bias(h, b.var(&format!("{p}.ffn.b2"))?)?;
        let h = g.dropout(h, c.dropout)?;
        let out = g.add(h, y3)?;
        self.layer_norm(g, b, &format!("{p}.ln3"), out)
    }

    /// Last `max(1, n/2)` embedded inputs followed by a zero slot carrying
    /// only its positional code.
    pub fn decoder_input(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let (bs, n, d) = {
            let s = g.shape(x);
            (s[0], s[1], s[2])
        };
        let m = self.config.decoder_history();
        let hist = g.slice(x, 1, n - m, m)?;
        let pe = positional_encoding(n + 1, d);
        let slot: Vec<f64> = (0..bs).flat_map(|_| pe[n * d..].iter().copied()).collect();
        let slot = g.constant(Tensor::from_f64(&[bs, 1, d], &slot)?);
        Ok(g.concat(&[hist, slot], 1)?)
    }

    /// Predictions (B, 1) or (B, levels).
    pub fn forward(&self, g: &mut Graph<T>, b: &Bound, batch: &Batch) -> Result<Var> {
        let x = self.embed(g, b, batch)?;
        let x = g.dropout(x, self.config.dropout)?;
        let z = self.encode(g, b, x)?;
        let mut y = self.decoder_input(g, x)?;
        for j in 0..self.config.decoder_layers {
            y = self.decoder_layer(g, b, j, y, z)?;
        }
        let m = g.shape(y)[1];
        let last = g.slice(y, 1, m - 1, 1)?;
        let last = g.reshape(last, &[batch.size, self.config.d_model])?;
        let out = g.matmul(last, b.var("head.w")?)?;
        Ok(g.add_bias(out, b.var("head.b")?)?)
    }

    /// Inference pass; returns row-major predictions.
    pub fn predict_batch(&self, batch: &Batch) -> Result<Vec<T>> {
        let mut g = Graph::new(self.config.seed, false);
        let b = self.params.bind_frozen(&mut g);
        let out = self.forward(&mut g, &b, batch)?;
        Ok(g.value(out).data().to_vec())
    }

    /// `extra` is stored in the checkpoint header next to the model config.
    pub fn save(&self, path: impl AsRef<Path>, extra: serde_json::Value) -> Result<()> {
        let config = serde_json::json!({
            "model": self.config,
            "input": self.input,
            "extra": extra,
        });
        let meta = CheckpointMeta {
            seed: self.config.seed,
            config,
            optimizer: format!("adam(lr={}, beta1=0.9, beta2=0.999, eps=1e-8)", self.config.learning_rate),
            init: "uniform(+-1/sqrt(fan_in))".into(),
            reduction: "mean".into(),
        };
        Ok(save_checkpoint(path, &self.params, &meta)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, serde_json::Value)> {
        let (params, header) = load_checkpoint::<T>(path)?;
        let config: InformerConfig = serde_json::from_value(header.config["model"].clone())?;
        let input: InputSpec = serde_json::from_value(header.config["input"].clone())?;
        let fresh = InformerModel::<T>::new(config.clone(), input.clone())?;
        if fresh.params.names() != params.names()
            || fresh.params.tensors().iter().zip(params.tensors()).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Config("checkpoint parameters do not match its config".into()));
        }
        let extra = header.config["extra"].clone();
        Ok((InformerModel { config, input, params }, extra))
    }
}
