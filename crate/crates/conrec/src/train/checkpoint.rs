//! Binary checkpoint format.
//!
//! Layout (little-endian): magic "CRCK", format version, config digest, epoch,
//! seed, best score/epoch, the model configuration, an optional config text
//! blob, then a table of named tensors (parameters, batch-norm state,
//! optimizer momentum buffers) as f32 data, and a CRC-32 trailer over all
//! preceding bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, Pooling};
use crate::numerics::Tensor;

const MAGIC: &[u8; 4] = b"CRCK";
const VERSION: u32 = 1;

const KIND_PARAM: u8 = 0;
const KIND_STATE: u8 = 1;
const KIND_OPTIM: u8 = 2;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub optim_buffers: BTreeMap<String, Tensor<f32>>,
    pub epoch: usize,
    pub seed: u64,
    pub config_digest: u64,
    /// Canonical resolved run configuration, for provenance.
    pub config_text: String,
    pub best_score: Option<f64>,
    pub best_epoch: Option<usize>,
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_tensor(buf: &mut Vec<u8>, kind: u8, name: &str, t: &Tensor<f32>) {
    buf.push(kind);
    let nb = name.as_bytes();
    buf.extend_from_slice(&(nb.len() as u16).to_le_bytes());
    buf.extend_from_slice(nb);
    buf.push(t.rank() as u8);
    for &d in t.shape() {
        push_u32(buf, d as u32);
    }
    for &v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_checkpoint(c: &Checkpoint, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    push_u32(&mut buf, VERSION);
    push_u64(&mut buf, c.config_digest);
    push_u32(&mut buf, c.epoch as u32);
    push_u64(&mut buf, c.seed);
    push_u64(&mut buf, c.best_score.unwrap_or(f64::NAN).to_bits());
    push_u32(&mut buf, c.best_epoch.map(|e| e as u32).unwrap_or(u32::MAX));

    let cfg = &c.params.cfg;
    push_u32(&mut buf, cfg.image_size as u32);
    push_u32(&mut buf, cfg.levels as u32);
    push_u32(&mut buf, cfg.base_channels as u32);
    push_u32(&mut buf, cfg.projection_hidden as u32);
    push_u32(&mut buf, cfg.projection_dim as u32);
    buf.push(match cfg.pooling {
        Pooling::Gap => 0,
        Pooling::Attention => 1,
    });
    push_u32(&mut buf, cfg.attention_filters.len() as u32);
    for &f in &cfg.attention_filters {
        push_u32(&mut buf, f as u32);
    }

    let text = c.config_text.as_bytes();
    push_u32(&mut buf, text.len() as u32);
    buf.extend_from_slice(text);

    let count = c.params.tensors().count() + c.params.state_entries().count() + c.optim_buffers.len();
    push_u32(&mut buf, count as u32);
    for (name, t) in c.params.tensors() {
        push_tensor(&mut buf, KIND_PARAM, name, t);
    }
    for (name, t) in c.params.state_entries() {
        push_tensor(&mut buf, KIND_STATE, name, t);
    }
    for (name, t) in &c.optim_buffers {
        push_tensor(&mut buf, KIND_OPTIM, name, t);
    }

    let crc = crc32fast::hash(&buf);
    push_u32(&mut buf, crc);
    fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Data(format!("{}: truncated checkpoint", self.path.display())));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = fs::read(path)?;
    if buf.len() < 8 {
        return Err(Error::Data(format!("{}: not a checkpoint", path.display())));
    }
    let (body, trailer) = buf.split_at(buf.len() - 4);
    let stored_crc = u32::from_le_bytes(trailer.try_into().unwrap());
    if crc32fast::hash(body) != stored_crc {
        return Err(Error::Data(format!("{}: checksum mismatch", path.display())));
    }

    let mut r = Reader { buf: body, pos: 0, path };
    if r.take(4)? != MAGIC {
        return Err(Error::Data(format!("{}: bad magic", path.display())));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Data(format!("{}: unsupported version {version}", path.display())));
    }
    let config_digest = r.u64()?;
    let epoch = r.u32()? as usize;
    let seed = r.u64()?;
    let best_bits = r.u64()?;
    let best_score = {
        let v = f64::from_bits(best_bits);
        if v.is_nan() {
            None
        } else {
            Some(v)
        }
    };
    let best_epoch = match r.u32()? {
        u32::MAX => None,
        e => Some(e as usize),
    };

    let image_size = r.u32()? as usize;
    let levels = r.u32()? as usize;
    let base_channels = r.u32()? as usize;
    let projection_hidden = r.u32()? as usize;
    let projection_dim = r.u32()? as usize;
    let pooling = match r.u8()? {
        0 => Pooling::Gap,
        1 => Pooling::Attention,
        other => return Err(Error::Data(format!("bad pooling tag {other}"))),
    };
    let nf = r.u32()? as usize;
    let mut attention_filters = Vec::with_capacity(nf);
    for _ in 0..nf {
        attention_filters.push(r.u32()? as usize);
    }
    let cfg = ModelConfig {
        image_size,
        levels,
        base_channels,
        projection_hidden,
        projection_dim,
        pooling,
        attention_filters,
    };

    let text_len = r.u32()? as usize;
    let config_text = String::from_utf8(r.take(text_len)?.to_vec())
        .map_err(|_| Error::Data("config text is not UTF-8".into()))?;

    let count = r.u32()? as usize;
    let mut params = ModelParams::new_empty(cfg);
    let mut optim_buffers = BTreeMap::new();
    for _ in 0..count {
        let kind = r.u8()?;
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Data("tensor name is not UTF-8".into()))?;
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 4)?;
        let mut data = Vec::with_capacity(numel);
        for c in raw.chunks_exact(4) {
            data.push(f32::from_le_bytes(c.try_into().unwrap()));
        }
        let t = Tensor::new(&shape, data)?;
        match kind {
            KIND_PARAM => params.insert_raw(name, t),
            KIND_STATE => params.insert_state_raw(name, t),
            KIND_OPTIM => {
                optim_buffers.insert(name, t);
            }
            other => return Err(Error::Data(format!("bad tensor kind {other}"))),
        }
    }

    Ok(Checkpoint {
        params,
        optim_buffers,
        epoch,
        seed,
        config_digest,
        config_text,
        best_score,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;

    fn sample_checkpoint() -> Checkpoint {
        let cfg = ModelConfig {
            image_size: 16,
            levels: 2,
            base_channels: 2,
            projection_hidden: 4,
            projection_dim: 3,
            pooling: Pooling::Attention,
            attention_filters: vec![4, 2],
        };
        let params = init_model::<f32>(&cfg, 9).unwrap();
        let mut optim_buffers = BTreeMap::new();
        optim_buffers.insert("enc.s0.c0.w".to_string(), Tensor::full(&[3, 3, 1, 2], 0.25));
        Checkpoint {
            params,
            optim_buffers,
            epoch: 17,
            seed: 123,
            config_digest: 0xdead_beef,
            config_text: "train.method = conrec\n".into(),
            best_score: Some(0.875),
            best_epoch: Some(12),
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = std::env::temp_dir().join(format!("conrec_ckpt_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("a.ckpt");
        let c = sample_checkpoint();
        save_checkpoint(&c, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.epoch, 17);
        assert_eq!(loaded.seed, 123);
        assert_eq!(loaded.config_digest, 0xdead_beef);
        assert_eq!(loaded.config_text, c.config_text);
        assert_eq!(loaded.best_score, Some(0.875));
        assert_eq!(loaded.best_epoch, Some(12));
        assert_eq!(loaded.params.cfg, c.params.cfg);
        assert_eq!(loaded.params.digest(), c.params.digest());
        for (name, t) in c.params.tensors() {
            assert_eq!(loaded.params.get(name).data(), t.data(), "{name}");
        }
        assert_eq!(
            loaded.optim_buffers["enc.s0.c0.w"].data(),
            c.optim_buffers["enc.s0.c0.w"].data()
        );
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn corrupt_byte_fails_checksum() {
        let dir = std::env::temp_dir().join(format!("conrec_ckpt_bad_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("b.ckpt");
        save_checkpoint(&sample_checkpoint(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(&path, bytes).unwrap();
        let err = load_checkpoint(&path);
        assert!(matches!(err, Err(Error::Data(ref m)) if m.contains("checksum")), "{err:?}");
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
