//! Named parameter storage, initialization and the checkpoint container.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub(crate) enum Init {
    /// `N(0, std²)`.
    Normal(f64),
    Constant(f64),
}

/// Every learnable tensor with its shape and initializer, in a fixed order.
pub(crate) fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = cfg.d_model;
    let xavier = |fan_in: usize, fan_out: usize| Init::Normal((2.0 / (fan_in + fan_out) as f64).sqrt());
    let he = |fan_in: usize| Init::Normal((2.0 / fan_in as f64).sqrt());
    let mut out: Vec<(String, Vec<usize>, Init)> = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: Init| out.push((name, shape, init));

    let ln = |push: &mut dyn FnMut(String, Vec<usize>, Init), p: &str| {
        push(format!("{p}.ln.g"), vec![d], Init::Constant(1.0));
        push(format!("{p}.ln.b"), vec![d], Init::Constant(0.0));
    };
    let attention = |push: &mut dyn FnMut(String, Vec<usize>, Init), p: &str| {
        for w in ["wq", "wk", "wv", "wf"] {
            push(format!("{p}.{w}"), vec![d, d], xavier(d, d));
        }
        ln(push, p);
    };
    let channel_branch = |push: &mut dyn FnMut(String, Vec<usize>, Init), p: &str| {
        for (j, &k) in cfg.kernel_sizes.iter().enumerate() {
            push(format!("{p}.conv{j}.w"), vec![d, d, k], xavier(d * k, d * k));
            push(format!("{p}.conv{j}.b"), vec![d], Init::Constant(0.0));
        }
        let n = cfg.kernel_sizes.len() * d;
        push(format!("{p}.merge.w"), vec![d, n, 1], xavier(n, d));
        push(format!("{p}.merge.b"), vec![d], Init::Constant(0.0));
        let r = d / cfg.reduction;
        push(format!("{p}.squeeze.w"), vec![d, r], xavier(d, r));
        push(format!("{p}.squeeze.b"), vec![r], Init::Constant(0.0));
        push(format!("{p}.excite.w"), vec![r, d], xavier(r, d));
        push(format!("{p}.excite.b"), vec![d], Init::Constant(0.0));
        push(format!("{p}.out.w"), vec![d, d, 1], xavier(d, d));
        push(format!("{p}.out.b"), vec![d], Init::Constant(0.0));
        ln(push, p);
    };
    let ffn = |push: &mut dyn FnMut(String, Vec<usize>, Init), p: &str| {
        push(format!("{p}.w1"), vec![d, cfg.d_ff], he(d));
        push(format!("{p}.b1"), vec![cfg.d_ff], Init::Constant(0.0));
        push(format!("{p}.w2"), vec![cfg.d_ff, d], xavier(cfg.d_ff, d));
        push(format!("{p}.b2"), vec![d], Init::Constant(0.0));
        ln(push, p);
    };

    push("enc.emb".into(), vec![cfg.vocab_size, d], Init::Normal(1.0));
    for i in 0..cfg.layers {
        attention(&mut push, &format!("enc.{i}.sa"));
        channel_branch(&mut push, &format!("enc.{i}.ca"));
        ffn(&mut push, &format!("enc.{i}.ffn"));
    }
    let m2 = 2 * cfg.symbols_per_token;
    push("tx.w1".into(), vec![d, cfg.tx_hidden], he(d));
    push("tx.b1".into(), vec![cfg.tx_hidden], Init::Constant(0.0));
    push("tx.w2".into(), vec![cfg.tx_hidden, m2], xavier(cfg.tx_hidden, m2));
    push("tx.b2".into(), vec![m2], Init::Constant(0.0));
    let mut fan_in = m2;
    for (j, &h) in cfg.rx_hidden.iter().enumerate() {
        push(format!("rx.w{j}"), vec![fan_in, h], he(fan_in));
        push(format!("rx.b{j}"), vec![h], Init::Constant(0.0));
        fan_in = h;
    }
    let last = cfg.rx_hidden.len();
    push(format!("rx.w{last}"), vec![fan_in, d], xavier(fan_in, d));
    push(format!("rx.b{last}"), vec![d], Init::Constant(0.0));

    push("dec.emb".into(), vec![cfg.vocab_size, d], Init::Normal(1.0));
    for i in 0..cfg.layers {
        attention(&mut push, &format!("dec.{i}.sa"));
        channel_branch(&mut push, &format!("dec.{i}.ca"));
        attention(&mut push, &format!("dec.{i}.xa"));
        ffn(&mut push, &format!("dec.{i}.ffn"));
    }
    push("out.w".into(), vec![d, cfg.vocab_size], Init::Normal(0.1 / (d as f64).sqrt()));
    push("out.b".into(), vec![cfg.vocab_size], Init::Constant(0.0));
    out
}

/// Name → tensor map; iteration order is the sorted name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for (name, shape, init) in layout(cfg) {
            let n: usize = shape.iter().product();
            let data = match init {
                Init::Normal(std) => (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect(),
                Init::Constant(c) => vec![c; n],
            };
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        Ok(ParamStore { tensors })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Records every tensor on `tape`, as differentiable leaves when
    /// `trainable`, as constants otherwise.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Bound<'t> {
        let vars = self
            .tensors
            .iter()
            .map(|(k, t)| {
                let v = if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) };
                (k.clone(), v)
            })
            .collect();
        Bound { tape, vars }
    }
}

/// Parameters recorded on one tape.
pub struct Bound<'t> {
    pub tape: &'t Tape,
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var<'t>)> {
        self.vars.iter()
    }

    /// Replaces one bound tensor, e.g. with a probe variable.
    pub fn set(&mut self, name: &str, var: Var<'t>) -> Result<()> {
        match self.vars.get_mut(name) {
            Some(slot) => {
                *slot = var;
                Ok(())
            }
            None => Err(Error::Contract(format!("missing parameter {name}"))),
        }
    }
}

const MAGIC: &[u8; 8] = b"C2FSCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    model: ModelConfig,
    tensors: usize,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Data(format!("corrupt checkpoint: {}", msg.into()))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| bad(e.to_string()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| bad(e.to_string()))?;
    Ok(u64::from_le_bytes(b))
}

/// Serializes `MAGIC | version | header JSON | tensors`. Tensors are written
/// as `name | ndim | dims (u64) | data (f64)`, little-endian.
pub fn write_checkpoint(w: &mut impl Write, cfg: &ModelConfig, params: &ParamStore) -> std::io::Result<()> {
    let header = serde_json::to_vec(&Header {
        version: CHECKPOINT_VERSION,
        model: cfg.clone(),
        tensors: params.len(),
    })
    .expect("header serializes");
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    for (name, t) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.ndim() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 8);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<(ModelConfig, ParamStore)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| bad(e.to_string()))?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = read_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let hlen = read_u32(r)? as usize;
    let mut hbuf = vec![0u8; hlen];
    r.read_exact(&mut hbuf).map_err(|e| bad(e.to_string()))?;
    let header: Header = serde_json::from_slice(&hbuf).map_err(|e| bad(e.to_string()))?;
    header.model.validate()?;
    let mut params = ParamStore::default();
    for _ in 0..header.tensors {
        let nlen = read_u32(r)? as usize;
        let mut nbuf = vec![0u8; nlen];
        r.read_exact(&mut nbuf).map_err(|e| bad(e.to_string()))?;
        let name = String::from_utf8(nbuf).map_err(|e| bad(e.to_string()))?;
        let ndim = read_u32(r)? as usize;
        let shape = (0..ndim)
            .map(|_| read_u64(r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 8];
        r.read_exact(&mut raw).map_err(|e| bad(e.to_string()))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.insert(name, Tensor::new(shape, data)?);
    }
    for (name, shape, _) in layout(&header.model) {
        match params.get(&name) {
            Some(t) if t.shape() == shape.as_slice() => {}
            Some(t) => return Err(bad(format!("{name} has shape {:?}, expected {shape:?}", t.shape()))),
            None => return Err(bad(format!("missing tensor {name}"))),
        }
    }
    Ok((header.model, params))
}

pub fn save_checkpoint(path: &Path, cfg: &ModelConfig, params: &ParamStore) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let file = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(&mut w, cfg, params)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&tmp, e))?;
    drop(w);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ParamStore)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_complete() {
        let cfg = ModelConfig::tiny(12, 8, 1);
        let a = ParamStore::init(&cfg, 1).unwrap();
        assert_eq!(a, ParamStore::init(&cfg, 1).unwrap());
        assert_ne!(a, ParamStore::init(&cfg, 2).unwrap());
        assert_eq!(a.len(), layout(&cfg).len());
    }

    #[test]
    fn checkpoint_roundtrip_is_bitwise() {
        let cfg = ModelConfig::tiny(12, 8, 1);
        let p = ParamStore::init(&cfg, 3).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &cfg, &p).unwrap();
        let (c2, p2) = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(c2, cfg);
        assert_eq!(p2, p);
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let cfg = ModelConfig::tiny(12, 8, 1);
        let p = ParamStore::init(&cfg, 3).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &cfg, &p).unwrap();
        assert!(read_checkpoint(&mut &buf[..buf.len() - 3]).is_err());
        let mut bad_magic = buf.clone();
        bad_magic[0] = b'X';
        assert!(read_checkpoint(&mut bad_magic.as_slice()).is_err());
    }
}
