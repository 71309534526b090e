//! Binary checkpoint codec.
//!
//! ```text
//! "XMCO"                       4 bytes
//! version                      u32 LE
//! header                       u32 LE length + UTF-8 JSON
//!                              {train, encoder_a, encoder_b, step,
//!                               queue_a_pushed, queue_b_pushed}
//! tensor table                 u32 LE count, then per tensor:
//!                                u32 name length, UTF-8 name,
//!                                u32 rank, u64 LE per dim,
//!                                f64 LE values
//! queue table                  same encoding: "queue.a", "queue.b" as [len, d]
//! rng state                    u32 LE length + bytes
//!                              (u64 shuffle base seed, u64 batches consumed)
//! crc32                        u32 LE over every preceding byte
//! ```
//!
//! Tensor names: `query.<trainable>`, `momentum.{a,b}.<param>`,
//! `adam.m.<trainable>`, `adam.v.<trainable>`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, TrainConfig};
use crate::encoders::{EncoderConfig, EncoderParams};
use crate::error::{CheckpointError, Error, Result};
use crate::moco::{NegativeQueue, TwoTowerState, LOG_TAU};
use crate::numkit::{ParamSet, Tensor};

pub const MAGIC: &[u8; 4] = b"XMCO";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to resume training bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub train: TrainConfig,
    pub state: TwoTowerState,
    pub adam: AdamState,
    pub step: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    train: TrainConfig,
    encoder_a: EncoderConfig,
    encoder_b: EncoderConfig,
    step: u64,
    queue_a_pushed: u64,
    queue_b_pushed: u64,
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_len(buf: &mut Vec<u8>, n: usize) -> Result<()> {
    let n = u32::try_from(n)
        .map_err(|_| CheckpointError::Malformed(format!("length {n} exceeds u32")))?;
    put_u32(buf, n);
    Ok(())
}

fn put_bytes(buf: &mut Vec<u8>, bytes: &[u8]) -> Result<()> {
    put_len(buf, bytes.len())?;
    buf.extend_from_slice(bytes);
    Ok(())
}

fn put_tensor(buf: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) -> Result<()> {
    put_bytes(buf, name.as_bytes())?;
    put_len(buf, shape.len())?;
    for &d in shape {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

fn put_table(buf: &mut Vec<u8>, entries: &[(String, Tensor)]) -> Result<()> {
    put_len(buf, entries.len())?;
    for (name, t) in entries {
        put_tensor(buf, name, t.shape(), t.data())?;
    }
    Ok(())
}

fn queue_tensor(q: &NegativeQueue) -> Result<Tensor> {
    Tensor::matrix(q.len(), q.dim(), q.to_flat())
}

/// Serializes a checkpoint to bytes.
pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let s = &ck.state;
    let header = Header {
        train: ck.train.clone(),
        encoder_a: s.query_a.config().clone(),
        encoder_b: s.query_b.config().clone(),
        step: ck.step,
        queue_a_pushed: s.queue_a.total_pushed(),
        queue_b_pushed: s.queue_b.total_pushed(),
    };
    let mut tensors: Vec<(String, Tensor)> = Vec::new();
    let mut add = |prefix: &str, set: &ParamSet| {
        for (n, t) in set.iter() {
            tensors.push((format!("{prefix}{n}"), t.clone()));
        }
    };
    add("query.", &s.trainable());
    add("momentum.a.", s.momentum_a.params());
    add("momentum.b.", s.momentum_b.params());
    add("adam.m.", &ck.adam.m);
    add("adam.v.", &ck.adam.v);

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, FORMAT_VERSION);
    put_bytes(&mut buf, serde_json::to_string(&header)?.as_bytes())?;
    put_table(&mut buf, &tensors)?;
    put_table(
        &mut buf,
        &[
            ("queue.a".to_string(), queue_tensor(&s.queue_a)?),
            ("queue.b".to_string(), queue_tensor(&s.queue_b)?),
        ],
    )?;
    let mut rng = Vec::with_capacity(16);
    rng.extend_from_slice(&ck.train.seed.to_le_bytes());
    rng.extend_from_slice(&ck.step.to_le_bytes());
    put_bytes(&mut buf, &rng)?;
    let crc = crc32fast::hash(&buf);
    put_u32(&mut buf, crc);
    Ok(buf)
}

/// Writes through a sibling temp file and renames it into place.
pub fn save_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(ck)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Truncated(self.buf.len()).into());
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec())
            .map_err(|e| CheckpointError::Malformed(format!("invalid UTF-8: {e}")).into())
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let name = self.string()?;
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            let d = usize::try_from(self.u64()?)
                .map_err(|_| CheckpointError::Malformed(format!("dimension overflow in `{name}`")))?;
            shape.push(d);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|c| c.checked_mul(8))
            .ok_or_else(|| CheckpointError::Malformed(format!("tensor `{name}` too large")))?;
        let raw = self.take(count)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data)
            .map_err(|e| CheckpointError::Malformed(format!("tensor `{name}`: {e}")))?;
        Ok((name, t))
    }

    fn table(&mut self) -> Result<Vec<(String, Tensor)>> {
        let n = self.u32()? as usize;
        (0..n).map(|_| self.tensor()).collect()
    }
}

fn malformed(msg: impl Into<String>) -> Error {
    CheckpointError::Malformed(msg.into()).into()
}

fn queue_from(
    t: &Tensor,
    capacity: usize,
    dim: usize,
    pushed: u64,
) -> Result<NegativeQueue> {
    let rows: Vec<Vec<f64>> = match t.shape() {
        [_, d] if *d == dim => t.data().chunks(dim).map(<[f64]>::to_vec).collect(),
        other => return Err(malformed(format!("queue shape {other:?}, expected [_, {dim}]"))),
    };
    NegativeQueue::from_parts(capacity, dim, rows, pushed).map_err(|e| malformed(e.to_string()))
}

/// Parses bytes produced by [`encode_checkpoint`]. Any failure leaves no
/// partially built state behind.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic(bytes[..bytes.len().min(4)].to_vec()).into());
    }
    let mut r = Reader { buf: bytes, pos: 4 };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: FORMAT_VERSION,
        }
        .into());
    }
    let header_bytes = r.bytes()?;
    let tensors = r.table()?;
    let queues = r.table()?;
    let rng = r.bytes()?;
    let body_end = r.pos;
    let stored = r.u32()?;
    if r.pos != bytes.len() {
        return Err(malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(CheckpointError::Checksum { stored, computed }.into());
    }

    let header: Header = serde_json::from_slice(header_bytes)
        .map_err(|e| malformed(format!("header: {e}")))?;
    if rng.len() != 16 {
        return Err(malformed(format!("rng state of {} bytes, expected 16", rng.len())));
    }
    let rng_seed = u64::from_le_bytes(rng[..8].try_into().expect("8 bytes"));
    let rng_pos = u64::from_le_bytes(rng[8..].try_into().expect("8 bytes"));
    if rng_seed != header.train.seed || rng_pos != header.step {
        return Err(malformed("rng state disagrees with header"));
    }

    let mut groups: [ParamSet; 5] = Default::default();
    const PREFIXES: [&str; 5] = ["query.", "momentum.a.", "momentum.b.", "adam.m.", "adam.v."];
    for (name, t) in tensors {
        let slot = PREFIXES
            .iter()
            .position(|p| name.starts_with(p))
            .ok_or_else(|| malformed(format!("unexpected tensor `{name}`")))?;
        let short = name[PREFIXES[slot].len()..].to_string();
        groups[slot]
            .insert(short, t)
            .map_err(|e| malformed(e.to_string()))?;
    }
    let [query, mom_a, mom_b, adam_m, adam_v] = groups;

    let to_err = |e: Error| malformed(e.to_string());
    let enc = |cfg: &EncoderConfig, set: ParamSet| EncoderParams::from_params(cfg.clone(), set);
    let query_a = enc(&header.encoder_a, query.strip_prefix("a.")).map_err(to_err)?;
    let query_b = enc(&header.encoder_b, query.strip_prefix("b.")).map_err(to_err)?;
    let momentum_a = enc(&header.encoder_a, mom_a).map_err(to_err)?;
    let momentum_b = enc(&header.encoder_b, mom_b).map_err(to_err)?;
    let log_tau = query
        .get(LOG_TAU)
        .map_err(to_err)?
        .data()
        .first()
        .copied()
        .ok_or_else(|| malformed("empty log_tau"))?;

    let [(qa_name, qa), (qb_name, qb)] = <[(String, Tensor); 2]>::try_from(queues)
        .map_err(|q| malformed(format!("expected 2 queues, found {}", q.len())))?;
    if qa_name != "queue.a" || qb_name != "queue.b" {
        return Err(malformed(format!("queue names `{qa_name}`, `{qb_name}`")));
    }
    let cap = header.train.queue_capacity;
    let queue_a = queue_from(&qa, cap, header.encoder_a.embed_dim, header.queue_a_pushed)?;
    let queue_b = queue_from(&qb, cap, header.encoder_b.embed_dim, header.queue_b_pushed)?;

    let state = TwoTowerState::from_parts(
        query_a,
        query_b,
        momentum_a,
        momentum_b,
        queue_a,
        queue_b,
        log_tau,
        header.train.momentum,
    )
    .map_err(to_err)?;
    if state.log_tau() != log_tau {
        return Err(malformed("log_tau outside the temperature clamp"));
    }
    let trainable = state.trainable();
    if query.len() != trainable.len() {
        return Err(malformed("query tensors do not match the encoder layout"));
    }
    trainable.check_same_layout(&adam_m).map_err(to_err)?;
    trainable.check_same_layout(&adam_v).map_err(to_err)?;

    Ok(Checkpoint {
        train: header.train,
        state,
        adam: AdamState {
            step: header.step,
            m: adam_m,
            v: adam_v,
        },
        step: header.step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::Trainer;

    fn sample() -> Checkpoint {
        let enc = |input_dim, seed| EncoderConfig {
            input_dim,
            hidden_dims: vec![3],
            proj_hidden: 3,
            embed_dim: 2,
            seed,
        };
        let cfg = TrainConfig {
            queue_capacity: 4,
            ..TrainConfig::default()
        };
        let mut ck = Trainer::new(&cfg, &enc(3, 1), &enc(2, 2)).unwrap().checkpoint();
        ck.state.queue_a.push(&[vec![0.6, 0.8]]).unwrap();
        ck
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let bytes = encode_checkpoint(&ck).unwrap();
        assert_eq!(&bytes[..4], b"XMCO");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), FORMAT_VERSION);
        assert_eq!(decode_checkpoint(&bytes).unwrap(), ck);
        assert_eq!(encode_checkpoint(&ck).unwrap(), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode_checkpoint(&sample()).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'Y';
        assert!(matches!(
            decode_checkpoint(&bad),
            Err(Error::Checkpoint(CheckpointError::BadMagic(_)))
        ));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            decode_checkpoint(&bad),
            Err(Error::Checkpoint(CheckpointError::Version { found: 9, .. }))
        ));

        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 10]),
            Err(Error::Checkpoint(CheckpointError::Truncated(_)))
        ));

        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 30] ^= 0x01;
        assert!(matches!(
            decode_checkpoint(&bad),
            Err(Error::Checkpoint(CheckpointError::Checksum { .. }))
        ));
    }
}
