//! Learnable parameter groups, Xavier initialization, and the SRGF1
//! checkpoint format (32-bit storage, byte-stable round trips).

use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AdamState, DenseMatrix};
use crate::config::TrainConfig;
use crate::error::{Error, Result};

const MAGIC: &[u8; 5] = b"SRGF1";

/// Dataset shape the parameters are built against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelDims {
    pub user_count: usize,
    pub item_count: usize,
    /// (modality tag, raw feature dim) for each active modality.
    pub modal_dims: Vec<(String, usize)>,
}

/// All learnable parameters plus optimizer buffers.
pub struct ModelState {
    pub names: Vec<String>,
    pub params: Vec<DenseMatrix>,
    pub adam: AdamState,
    pub epoch: u64,
}

fn xavier_uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let values = (0..rows * cols)
        .map(|_| rng.gen_range(-limit..limit))
        .collect();
    DenseMatrix::from_values(rows, cols, values).unwrap()
}

impl ModelState {
    /// Parameter groups the configuration calls for; ablations remove groups.
    pub fn new(cfg: &TrainConfig, dims: &ModelDims, seed: u64) -> Result<ModelState> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.embedding_dim;
        let mut names = Vec::new();
        let mut params = Vec::new();

        names.push("id_embeddings".to_string());
        params.push(xavier_uniform(dims.user_count + dims.item_count, d, &mut rng));

        for (tag, d_m) in &dims.modal_dims {
            names.push(format!("proj_{tag}"));
            params.push(xavier_uniform(*d_m, d, &mut rng));
        }
        if !cfg.ablation.no_hypergraph {
            for (tag, d_m) in &dims.modal_dims {
                names.push(format!("hyperedges_{tag}"));
                params.push(xavier_uniform(cfg.hyperedges, *d_m, &mut rng));
            }
        }
        if !cfg.ablation.no_global {
            let head_dim = d / cfg.heads;
            for h in 0..cfg.heads {
                for kind in ["q", "k", "v"] {
                    names.push(format!("attn_{kind}_{h}"));
                    params.push(xavier_uniform(d, head_dim, &mut rng));
                }
            }
        }
        let adam = AdamState::new(&params, cfg.learning_rate);
        Ok(ModelState {
            names,
            params,
            adam,
            epoch: 0,
        })
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn param(&self, name: &str) -> Result<&DenseMatrix> {
        self.index_of(name)
            .map(|i| &self.params[i])
            .ok_or_else(|| Error::Contract(format!("no parameter group {name:?}")))
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Serialize to the SRGF1 layout. Values are truncated to 32-bit, so a
    /// save→load→save cycle is byte-identical.
    pub fn save(&self, path: &Path, config_digest: &str, with_adam: bool) -> Result<()> {
        let bytes = self.to_bytes(config_digest, with_adam);
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn to_bytes(&self, config_digest: &str, with_adam: bool) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(config_digest.len() as u32).to_le_bytes());
        out.extend_from_slice(config_digest.as_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (name, p) in self.names.iter().zip(&self.params) {
            write_block(&mut out, name, p);
        }
        if with_adam {
            out.push(1);
            out.extend_from_slice(&self.adam.t.to_le_bytes());
            out.extend_from_slice(&self.adam.lr.to_le_bytes());
            out.extend_from_slice(&self.adam.beta1.to_le_bytes());
            out.extend_from_slice(&self.adam.beta2.to_le_bytes());
            out.extend_from_slice(&self.adam.eps.to_le_bytes());
            for (m, v) in self.adam.m.iter().zip(&self.adam.v) {
                write_block(&mut out, "m", m);
                write_block(&mut out, "v", v);
            }
        } else {
            out.push(0);
        }
        out
    }

    pub fn load(path: &Path) -> Result<(ModelState, String)> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(ModelState, String)> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(5)?;
        if magic != MAGIC {
            return Err(Error::Data("not an SRGF1 checkpoint".into()));
        }
        let dlen = cur.u32()? as usize;
        let digest = String::from_utf8(cur.take(dlen)?.to_vec())
            .map_err(|_| Error::Data("bad digest encoding".into()))?;
        let epoch = cur.u64()?;
        let n = cur.u64()? as usize;
        let mut names = Vec::with_capacity(n);
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            let (name, m) = read_block(&mut cur)?;
            names.push(name);
            params.push(m);
        }
        let has_adam = cur.take(1)?[0] == 1;
        let mut adam = AdamState::new(&params, 1e-3);
        if has_adam {
            adam.t = cur.u64()?;
            adam.lr = cur.f64()?;
            adam.beta1 = cur.f64()?;
            adam.beta2 = cur.f64()?;
            adam.eps = cur.f64()?;
            for i in 0..n {
                let (_, m) = read_block(&mut cur)?;
                let (_, v) = read_block(&mut cur)?;
                adam.m[i] = m;
                adam.v[i] = v;
            }
        }
        Ok((
            ModelState {
                names,
                params,
                adam,
                epoch,
            },
            digest,
        ))
    }
}

fn write_block(out: &mut Vec<u8>, name: &str, m: &DenseMatrix) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(m.rows as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols as u64).to_le_bytes());
    for &v in &m.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Data("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn read_block(cur: &mut Cursor) -> Result<(String, DenseMatrix)> {
    let nlen = cur.u32()? as usize;
    let name = String::from_utf8(cur.take(nlen)?.to_vec())
        .map_err(|_| Error::Data("bad block name".into()))?;
    let rows = cur.u64()? as usize;
    let cols = cur.u64()? as usize;
    let mut values = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        values.push(f32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as f64);
    }
    Ok((name, DenseMatrix::from_values(rows, cols, values)?))
}
