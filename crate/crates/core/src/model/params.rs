use std::collections::BTreeMap;

use rand::Rng;

use super::config::{Flavor, ModelConfig};
use super::positional::sinusoidal;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const EMBED: &str = "embed.tokens";
pub const OUTPUT_PROJ: &str = "output.proj";
pub const LOG_SIGMA_SQ: &str = "decoder.soft_copy.log_sigma_sq";

/// How a declared parameter is initialized.
#[derive(Clone, Copy, Debug)]
enum Init {
    /// Xavier-normal for a `[fan_in, fan_out]` matrix.
    Xavier,
    Zeros,
    Ones,
    /// N(0, 1/sqrt(model_dim)).
    Embedding,
    /// Sinusoidal table; trained afterwards.
    Sinusoid,
    LogSigmaSq,
}

fn attention_specs(prefix: &str, d: usize, out: &mut Vec<(String, Vec<usize>, Init)>) {
    for w in ["wq", "wk", "wv", "wo"] {
        out.push((format!("{prefix}.{w}"), vec![d, d], Init::Xavier));
    }
    for b in ["bq", "bk", "bv", "bo"] {
        out.push((format!("{prefix}.{b}"), vec![d], Init::Zeros));
    }
}

fn norm_specs(prefix: &str, d: usize, out: &mut Vec<(String, Vec<usize>, Init)>) {
    out.push((format!("{prefix}.gain"), vec![d], Init::Ones));
    out.push((format!("{prefix}.bias"), vec![d], Init::Zeros));
}

fn ffn_specs(prefix: &str, d: usize, h: usize, out: &mut Vec<(String, Vec<usize>, Init)>) {
    out.push((format!("{prefix}.w1"), vec![d, h], Init::Xavier));
    out.push((format!("{prefix}.b1"), vec![h], Init::Zeros));
    out.push((format!("{prefix}.w2"), vec![h, d], Init::Xavier));
    out.push((format!("{prefix}.b2"), vec![d], Init::Zeros));
}

/// Every parameter path the configuration declares, with its shape.
fn specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (d, h, v) = (cfg.model_dim, cfg.hidden_dim, cfg.vocab_size);
    let mut out = vec![(EMBED.to_string(), vec![v, d], Init::Embedding)];
    if !cfg.tie_embeddings {
        out.push((OUTPUT_PROJ.to_string(), vec![d, v], Init::Xavier));
    }
    for l in 0..cfg.num_layers {
        let p = format!("encoder.layer{l}");
        attention_specs(&format!("{p}.self_attn"), d, &mut out);
        norm_specs(&format!("{p}.self_attn_norm"), d, &mut out);
        ffn_specs(&format!("{p}.ffn"), d, h, &mut out);
        norm_specs(&format!("{p}.ffn_norm"), d, &mut out);
    }
    for l in 0..cfg.num_layers {
        let p = format!("decoder.layer{l}");
        attention_specs(&format!("{p}.self_attn"), d, &mut out);
        norm_specs(&format!("{p}.self_attn_norm"), d, &mut out);
        attention_specs(&format!("{p}.cross_attn"), d, &mut out);
        norm_specs(&format!("{p}.cross_attn_norm"), d, &mut out);
        ffn_specs(&format!("{p}.ffn"), d, h, &mut out);
        norm_specs(&format!("{p}.ffn_norm"), d, &mut out);
    }
    if cfg.flavor == Flavor::Nar {
        out.push((LOG_SIGMA_SQ.to_string(), vec![1], Init::LogSigmaSq));
        if cfg.shared_layer_positions {
            out.push(("decoder.positions".to_string(), vec![cfg.max_len, d], Init::Sinusoid));
        } else {
            for l in 0..cfg.num_layers {
                out.push((format!("decoder.layer{l}.positions"), vec![cfg.max_len, d], Init::Sinusoid));
            }
        }
    }
    out
}

/// Name of the positional table added at the input of decoder layer `layer`.
pub fn layer_positions_name(cfg: &ModelConfig, layer: usize) -> String {
    if cfg.shared_layer_positions {
        "decoder.positions".to_string()
    } else {
        format!("decoder.layer{layer}.positions")
    }
}

/// Named parameters of an encoder-decoder transformer.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut tensors = BTreeMap::new();
        for (name, shape, init) in specs(&config) {
            let t = match init {
                Init::Xavier => {
                    let std = (2.0 / (shape[0] + shape[1]) as f64).sqrt();
                    Tensor::randn(&shape, std, rng)
                }
                Init::Zeros => Tensor::zeros(&shape),
                Init::Ones => Tensor::full(&shape, 1.0),
                Init::Embedding => Tensor::randn(&shape, (config.model_dim as f64).powf(-0.5), rng),
                Init::Sinusoid => sinusoidal(shape[0], shape[1]),
                Init::LogSigmaSq => Tensor::full(&shape, config.init_sigma_sq.ln()),
            };
            tensors.insert(name, t);
        }
        Ok(ModelParams { config, tensors })
    }

    /// Assembles parameters from a map, checking it matches the configuration exactly.
    pub fn from_tensors(config: ModelConfig, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        let declared = specs(&config);
        if declared.len() != tensors.len() {
            let extra: Vec<_> = tensors
                .keys()
                .filter(|k| !declared.iter().any(|(n, _, _)| n == *k))
                .collect();
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {} (unexpected: {extra:?})",
                declared.len(),
                tensors.len()
            )));
        }
        for (name, shape, _) in &declared {
            match tensors.get(name) {
                None => return Err(Error::Checkpoint(format!("missing parameter {name}"))),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::ShapeMismatch {
                        op: "parameter",
                        lhs: shape.clone(),
                        rhs: t.shape().to_vec(),
                    })
                }
                _ => {}
            }
        }
        Ok(ModelParams { config, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Current soft-copy variance, for NAR parameter sets.
    pub fn sigma_sq(&self) -> Option<f64> {
        self.get(LOG_SIGMA_SQ).map(|t| t.data()[0].exp())
    }

    /// Elementwise mean of parameter sets with identical layout.
    pub fn average(sets: &[&ModelParams]) -> Result<ModelParams> {
        let first = *sets.first().ok_or(Error::Empty("checkpoint list"))?;
        let mut out = first.clone();
        for other in &sets[1..] {
            if other.config != first.config {
                return Err(Error::invalid("cannot average checkpoints with different configs"));
            }
        }
        let n = sets.len() as f64;
        for (name, t) in out.tensors.iter_mut() {
            let slots = t.data_mut();
            // offsets from the first set keep identical inputs bit-exact
            for (i, v) in slots.iter_mut().enumerate() {
                let base = *v;
                let offset: f64 = sets.iter().map(|s| s.tensors[name].data()[i] - base).sum();
                *v = base + offset / n;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn params(flavor: Flavor) -> ModelParams {
        ModelParams::init(ModelConfig::desk(36, flavor), &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn embedding_table_is_vocab_by_dim() {
        let p = params(Flavor::Ar);
        assert_eq!(p.get(EMBED).unwrap().shape(), &[36, 64]);
        assert!(p.get(OUTPUT_PROJ).is_none(), "tied by default");
    }

    #[test]
    fn nar_adds_soft_copy_and_positions_only() {
        let ar = params(Flavor::Ar);
        let nar = params(Flavor::Nar);
        let extra: Vec<&str> = nar.names().filter(|n| ar.get(n).is_none()).collect();
        assert_eq!(extra, vec!["decoder.positions", LOG_SIGMA_SQ]);
        assert!((nar.sigma_sq().unwrap() - 1.0).abs() < 1e-15);
        assert!(!nar.names().any(|n| n.contains("pos_attn") || n.contains("positional_attn")));
    }

    #[test]
    fn per_layer_position_tables_when_unshared() {
        let mut cfg = ModelConfig::desk(36, Flavor::Nar);
        cfg.shared_layer_positions = false;
        let p = ModelParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(p.get("decoder.layer0.positions").is_some());
        assert!(p.get("decoder.layer1.positions").is_some());
        assert!(p.get("decoder.positions").is_none());
    }

    #[test]
    fn from_tensors_rejects_missing_and_misshapen() {
        let p = params(Flavor::Ar);
        let mut map: BTreeMap<String, Tensor> = p.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        map.remove(EMBED);
        assert!(ModelParams::from_tensors(p.config().clone(), map.clone()).is_err());
        map.insert(EMBED.into(), Tensor::zeros(&[36, 63]));
        assert!(ModelParams::from_tensors(p.config().clone(), map).is_err());
    }

    #[test]
    fn averaging_identical_sets_is_identity() {
        let p = params(Flavor::Nar);
        let avg = ModelParams::average(&[&p, &p, &p]).unwrap();
        assert_eq!(avg, p);
    }
}
