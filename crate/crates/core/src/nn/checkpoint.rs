use std::path::Path;

use super::{Activation, Layer, LayerSpec, NetParams, NnError};
use crate::manifest::{decode_header, encode_header, f64s_to_le, le_to_f64s, sha256_hex, Manifest};

pub const CHECKPOINT_MAGIC: &str = "bracketlab-checkpoint";
const VERSION: &str = "1";

/// Network parameters plus metadata.
///
/// On disk: a text manifest (layer specs, seed, epoch, free-form metadata)
/// followed by little-endian float64 blocks per layer, weights then bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: NetParams,
    pub seed: u64,
    pub epoch: usize,
    /// Extra keys such as the formalism and state dimension.
    pub meta: Manifest,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut m = Manifest::new();
        for (k, v) in &self.meta {
            m.insert(format!("meta.{k}"), v.clone());
        }
        m.insert("version".into(), VERSION.into());
        m.insert("seed".into(), self.seed.to_string());
        m.insert("epoch".into(), self.epoch.to_string());
        m.insert("layers".into(), self.params.layers().len().to_string());
        for (i, l) in self.params.layers().iter().enumerate() {
            m.insert(
                format!("layer.{i}"),
                format!("{},{},{}", l.spec.in_dim, l.spec.out_dim, l.spec.activation.as_str()),
            );
        }
        let mut payload = Vec::new();
        for l in self.params.layers() {
            payload.extend(f64s_to_le(&l.weight));
            payload.extend(f64s_to_le(&l.bias));
        }
        m.insert("sha256".into(), sha256_hex(&payload));
        let mut out = encode_header(CHECKPOINT_MAGIC, &m);
        out.extend(payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let bad = |s: String| NnError::Checkpoint(s);
        let (m, payload) = decode_header(CHECKPOINT_MAGIC, bytes).map_err(|e| bad(e.to_string()))?;
        let get = |k: &str| m.get(k).ok_or_else(|| bad(format!("missing key `{k}`")));
        if get("version")? != VERSION {
            return Err(bad(format!("unsupported version {}", get("version")?)));
        }
        let parse_usize =
            |k: &str| -> Result<usize, NnError> { get(k)?.parse().map_err(|_| bad(format!("bad value for `{k}`"))) };
        let n_layers = parse_usize("layers")?;
        let mut specs = Vec::with_capacity(n_layers);
        for i in 0..n_layers {
            let v = get(&format!("layer.{i}"))?;
            let parts: Vec<&str> = v.split(',').collect();
            let [a, b, c] = parts[..] else {
                return Err(bad(format!("bad layer spec `{v}`")));
            };
            let in_dim = a.parse().map_err(|_| bad(format!("bad layer spec `{v}`")))?;
            let out_dim = b.parse().map_err(|_| bad(format!("bad layer spec `{v}`")))?;
            let activation = Activation::parse(c).ok_or_else(|| bad(format!("bad activation `{c}`")))?;
            specs.push(LayerSpec { in_dim, out_dim, activation });
        }
        let expected: usize = specs.iter().map(|s| 8 * (s.in_dim * s.out_dim + s.out_dim)).sum();
        if payload.len() != expected {
            return Err(bad(format!("payload has {} bytes, expected {expected}", payload.len())));
        }
        if &sha256_hex(payload) != get("sha256")? {
            return Err(bad("checksum mismatch".into()));
        }
        let values = le_to_f64s(payload);
        let mut at = 0;
        let mut layers = Vec::with_capacity(n_layers);
        for s in specs {
            let nw = s.in_dim * s.out_dim;
            let weight = values[at..at + nw].to_vec();
            at += nw;
            let bias = values[at..at + s.out_dim].to_vec();
            at += s.out_dim;
            layers.push(Layer { spec: s, weight, bias });
        }
        let meta = m.iter().filter_map(|(k, v)| k.strip_prefix("meta.").map(|k| (k.to_string(), v.clone()))).collect();
        Ok(Checkpoint {
            params: NetParams::from_layers(layers)?,
            seed: get("seed")?.parse().map_err(|_| bad("bad seed".into()))?,
            epoch: parse_usize("epoch")?,
            meta,
        })
    }

    /// Header keys only, without validating the payload.
    pub fn header(bytes: &[u8]) -> Result<Manifest, NnError> {
        Ok(decode_header(CHECKPOINT_MAGIC, bytes).map_err(|e| NnError::Checkpoint(e.to_string()))?.0)
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp_spec;

    fn sample() -> Checkpoint {
        let mut meta = Manifest::new();
        meta.insert("formalism".into(), "generic".into());
        Checkpoint { params: NetParams::init_kaiming(&mlp_spec(4, 2, 6, 34), 2).unwrap(), seed: 2, epoch: 17, meta }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn layout_is_weights_then_bias_per_layer() {
        let c = sample();
        let bytes = c.to_bytes();
        let (_, payload) = decode_header(CHECKPOINT_MAGIC, &bytes).unwrap();
        let vals = le_to_f64s(payload);
        let l0 = &c.params.layers()[0];
        assert_eq!(&vals[..l0.weight.len()], &l0.weight[..]);
        assert_eq!(&vals[l0.weight.len()..l0.weight.len() + l0.bias.len()], &l0.bias[..]);
    }

    #[test]
    fn detects_corruption_and_truncation() {
        let mut bytes = sample().to_bytes();
        let n = bytes.len();
        bytes[n - 3] ^= 0x40;
        assert!(Checkpoint::from_bytes(&bytes).unwrap_err().to_string().contains("checksum"));
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..n - 8]).unwrap_err().to_string().contains("payload"));
    }
}
