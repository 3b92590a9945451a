//! Corpus file layout, integers and reals little-endian:
//! `"RRPO-CORP\0"`, `u16` version, `u32` count, `u32` D, then per record
//! `u32` L, `u8` label and `L x D` `f64` values row by row.

use std::io::{Read, Write};

use super::{Corpus, Sample};
use crate::array::Array;
use crate::error::{Error, Result};
use crate::features::FeatureSequence;

pub const CORPUS_MAGIC: &[u8; 10] = b"RRPO-CORP\0";
pub const CORPUS_VERSION: u16 = 1;

pub fn write_corpus<W: Write>(mut w: W, corpus: &Corpus) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CORPUS_MAGIC);
    buf.extend_from_slice(&CORPUS_VERSION.to_le_bytes());
    buf.extend_from_slice(&(corpus.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(corpus.dim as u32).to_le_bytes());
    for s in &corpus.samples {
        if s.feats.dim() != corpus.dim {
            return Err(Error::Format(format!(
                "record dim {} in a corpus of dim {}",
                s.feats.dim(),
                corpus.dim
            )));
        }
        let label = u8::try_from(s.label)
            .map_err(|_| Error::Format(format!("label {} does not fit in u8", s.label)))?;
        buf.extend_from_slice(&(s.feats.len() as u32).to_le_bytes());
        buf.push(label);
        for v in s.feats.frames().data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn take<'a>(cur: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if cur.len() < n {
        return Err(Error::Format(format!("truncated corpus: missing {what}")));
    }
    let (head, tail) = cur.split_at(n);
    *cur = tail;
    Ok(head)
}

fn u32_at(cur: &mut &[u8], what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(take(cur, 4, what)?.try_into().unwrap()))
}

pub fn read_corpus<R: Read>(mut r: R) -> Result<Corpus> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = bytes.as_slice();
    if take(&mut cur, 10, "magic")? != CORPUS_MAGIC {
        return Err(Error::Format("not an RRPO corpus (bad magic)".into()));
    }
    let version = u16::from_le_bytes(take(&mut cur, 2, "version")?.try_into().unwrap());
    if version != CORPUS_VERSION {
        return Err(Error::Format(format!(
            "unsupported corpus version {version}"
        )));
    }
    let count = u32_at(&mut cur, "count")? as usize;
    let dim = u32_at(&mut cur, "dim")? as usize;
    let mut samples = Vec::with_capacity(count.min(1 << 20));
    for i in 0..count {
        let len = u32_at(&mut cur, "record length")? as usize;
        let label = take(&mut cur, 1, "label")?[0] as usize;
        let raw = take(&mut cur, len * dim * 8, "record values")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let feats = FeatureSequence::new(Array::new(&[len, dim], data))
            .map_err(|e| Error::Format(format!("record {i}: {e}")))?;
        samples.push(Sample { feats, label });
    }
    if !cur.is_empty() {
        return Err(Error::Format(format!(
            "{} trailing bytes after {count} records",
            cur.len()
        )));
    }
    Ok(Corpus { dim, samples })
}
