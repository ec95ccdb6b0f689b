//! Little-endian binary formats for datasets (`ICQD`) and indexes (`ICQI`).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::config::Config;
use crate::data::{CodeMatrix, CodebookSet, EmbeddedDataset};
use crate::error::{Error, Result};
use crate::prior::SubspaceMask;
use crate::search::SearchIndex;
use crate::train::FastSet;

pub const DATASET_MAGIC: &[u8; 4] = b"ICQD";
pub const INDEX_MAGIC: &[u8; 4] = b"ICQI";
pub const INDEX_VERSION: u32 = 1;

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("truncated file".into())
    } else {
        Error::Format(e.to_string())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file).read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

fn len_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Validation(format!("{what} {v} does not fit in 32 bits")))
}

fn checked_len(a: usize, b: usize) -> Result<usize> {
    a.checked_mul(b).ok_or_else(|| Error::Format(format!("size {a}x{b} overflows")))
}

/// Guards allocations against header values larger than the remaining bytes.
fn ensure_remaining(r: &&[u8], bytes: usize) -> Result<()> {
    if r.len() < bytes {
        return Err(Error::Format("truncated file".into()));
    }
    Ok(())
}

pub fn dataset_to_bytes(ds: &EmbeddedDataset) -> Result<Vec<u8>> {
    if ds.vectors().iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("dataset contains non-finite values".into()));
    }
    let mut out = Vec::with_capacity(13 + ds.vectors().len() * 4);
    out.extend_from_slice(DATASET_MAGIC);
    out.write_u32::<LE>(len_u32(ds.len(), "row count")?).unwrap();
    out.write_u32::<LE>(len_u32(ds.dim(), "dimension")?).unwrap();
    out.write_u8(ds.labels().is_some() as u8).unwrap();
    for &v in ds.vectors() {
        out.write_f32::<LE>(v).unwrap();
    }
    if let Some(labels) = ds.labels() {
        for &l in labels {
            out.write_u32::<LE>(l).unwrap();
        }
    }
    Ok(out)
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<EmbeddedDataset> {
    let mut r = bytes;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Format(format!("bad dataset magic {magic:?}")));
    }
    let n = r.read_u32::<LE>().map_err(truncated)? as usize;
    let d = r.read_u32::<LE>().map_err(truncated)? as usize;
    let has_labels = match r.read_u8().map_err(truncated)? {
        0 => false,
        1 => true,
        other => return Err(Error::Format(format!("bad label flag {other}"))),
    };
    let len = checked_len(n, d)?;
    ensure_remaining(&r, checked_len(len, 4)?)?;
    let mut vectors = vec![0.0f32; len];
    r.read_f32_into::<LE>(&mut vectors).map_err(truncated)?;
    let labels = if has_labels {
        ensure_remaining(&r, checked_len(n, 4)?)?;
        let mut l = vec![0u32; n];
        r.read_u32_into::<LE>(&mut l).map_err(truncated)?;
        Some(l)
    } else {
        None
    };
    if !r.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", r.len())));
    }
    EmbeddedDataset::new(d, vectors, labels).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_dataset(ds: &EmbeddedDataset, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &dataset_to_bytes(ds)?)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<EmbeddedDataset> {
    dataset_from_bytes(&read_file(path.as_ref())?)
}

fn write_bits(out: &mut Vec<u8>, bits: &[bool]) -> Result<()> {
    out.write_u32::<LE>(len_u32(bits.len(), "bitmask length")?).unwrap();
    let mut bytes = vec![0u8; bits.len().div_ceil(8)];
    for (i, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
        bytes[i / 8] |= 1 << (i % 8);
    }
    out.extend_from_slice(&bytes);
    Ok(())
}

fn read_bits(r: &mut &[u8], expected: usize, what: &str) -> Result<Vec<bool>> {
    let len = r.read_u32::<LE>().map_err(truncated)? as usize;
    if len != expected {
        return Err(Error::Format(format!("{what} has length {len}, expected {expected}")));
    }
    let mut bytes = vec![0u8; len.div_ceil(8)];
    r.read_exact(&mut bytes).map_err(truncated)?;
    let bits: Vec<bool> = (0..len).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect();
    if len % 8 != 0 && bytes[len / 8] >> (len % 8) != 0 {
        return Err(Error::Format(format!("{what} has stray padding bits")));
    }
    Ok(bits)
}

fn write_config(out: &mut Vec<u8>, cfg: &Config) -> Result<()> {
    out.write_u32::<LE>(len_u32(cfg.k, "K")?).unwrap();
    out.write_u32::<LE>(len_u32(cfg.m, "m")?).unwrap();
    for v in [cfg.gamma1, cfg.gamma2, cfg.pi1, cfg.pi2, cfg.alpha2, cfg.sigma_scale] {
        out.write_f64::<LE>(v).unwrap();
    }
    out.write_u32::<LE>(len_u32(cfg.epochs, "epochs")?).unwrap();
    out.write_u32::<LE>(len_u32(cfg.batch_size, "batch_size")?).unwrap();
    out.write_f64::<LE>(cfg.learning_rate).unwrap();
    out.write_u64::<LE>(cfg.seed).unwrap();
    out.write_u32::<LE>(len_u32(cfg.fast_quantizers, "fast_quantizers")?).unwrap();
    out.write_u32::<LE>(len_u32(cfg.psi_cap.unwrap_or(0), "psi_cap")?).unwrap();
    out.write_f64::<LE>(cfg.embed_weight).unwrap();
    Ok(())
}

fn read_config(r: &mut &[u8]) -> Result<Config> {
    let u = |r: &mut &[u8]| r.read_u32::<LE>().map(|v| v as usize).map_err(truncated);
    let f = |r: &mut &[u8]| r.read_f64::<LE>().map_err(truncated);
    let k = u(r)?;
    let m = u(r)?;
    let mut cfg = Config::new(k, m);
    cfg.gamma1 = f(r)?;
    cfg.gamma2 = f(r)?;
    cfg.pi1 = f(r)?;
    cfg.pi2 = f(r)?;
    cfg.alpha2 = f(r)?;
    cfg.sigma_scale = f(r)?;
    cfg.epochs = u(r)?;
    cfg.batch_size = u(r)?;
    cfg.learning_rate = f(r)?;
    cfg.seed = r.read_u64::<LE>().map_err(truncated)?;
    cfg.fast_quantizers = u(r)?;
    cfg.psi_cap = Some(u(r)?).filter(|&c| c > 0);
    cfg.embed_weight = f(r)?;
    cfg.validate().map_err(|e| Error::Format(format!("stored config invalid: {e}")))?;
    Ok(cfg)
}

pub fn index_to_bytes(index: &SearchIndex) -> Result<Vec<u8>> {
    let books = index.books();
    let codes = index.codes();
    let mut out = Vec::new();
    out.extend_from_slice(INDEX_MAGIC);
    out.write_u32::<LE>(INDEX_VERSION).unwrap();
    write_config(&mut out, index.config())?;
    out.write_u32::<LE>(len_u32(books.num_codebooks(), "K")?).unwrap();
    out.write_u32::<LE>(len_u32(books.codebook_size(), "m")?).unwrap();
    out.write_u32::<LE>(len_u32(books.dim(), "dimension")?).unwrap();
    for &v in books.as_slice() {
        out.write_f32::<LE>(v).unwrap();
    }
    out.write_u32::<LE>(len_u32(codes.len(), "row count")?).unwrap();
    for &c in codes.as_slice() {
        out.write_u16::<LE>(c).unwrap();
    }
    write_bits(&mut out, index.mask().bits())?;
    write_bits(&mut out, index.fast().bits())?;
    out.write_u32::<LE>(len_u32(index.lambdas().len(), "variance count")?).unwrap();
    for &l in index.lambdas() {
        out.write_f64::<LE>(l).unwrap();
    }
    out.write_f64::<LE>(index.sigma()).unwrap();
    Ok(out)
}

pub fn index_from_bytes(bytes: &[u8]) -> Result<SearchIndex> {
    let mut r = bytes;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != INDEX_MAGIC {
        return Err(Error::Format(format!("bad index magic {magic:?}")));
    }
    let version = r.read_u32::<LE>().map_err(truncated)?;
    if version != INDEX_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: INDEX_VERSION,
        });
    }
    let cfg = read_config(&mut r)?;
    let k = r.read_u32::<LE>().map_err(truncated)? as usize;
    let m = r.read_u32::<LE>().map_err(truncated)? as usize;
    let d = r.read_u32::<LE>().map_err(truncated)? as usize;
    let words = checked_len(checked_len(k, m)?, d)?;
    ensure_remaining(&r, checked_len(words, 4)?)?;
    let mut codewords = vec![0.0f32; words];
    r.read_f32_into::<LE>(&mut codewords).map_err(truncated)?;
    let books = CodebookSet::new(k, m, d, codewords).map_err(|e| Error::Format(e.to_string()))?;

    let n = r.read_u32::<LE>().map_err(truncated)? as usize;
    let code_len = checked_len(n, k)?;
    ensure_remaining(&r, checked_len(code_len, 2)?)?;
    let mut raw_codes = vec![0u16; code_len];
    r.read_u16_into::<LE>(&mut raw_codes).map_err(truncated)?;
    let codes = CodeMatrix::new(n, k, raw_codes, m).map_err(|e| Error::Format(e.to_string()))?;

    let mask = SubspaceMask::from_bits(read_bits(&mut r, d, "subspace mask")?);
    let fast_bits = read_bits(&mut r, k, "fast set")?;
    let nf = fast_bits.iter().filter(|&&b| b).count();
    if fast_bits.iter().enumerate().any(|(i, &b)| b != (i < nf)) {
        return Err(Error::Format("fast set is not a prefix of the codebooks".into()));
    }
    let lambda_len = r.read_u32::<LE>().map_err(truncated)? as usize;
    if lambda_len != d {
        return Err(Error::Format(format!("{lambda_len} variances for dimension {d}")));
    }
    ensure_remaining(&r, checked_len(d, 8)?)?;
    let mut lambdas = vec![0.0f64; d];
    r.read_f64_into::<LE>(&mut lambdas).map_err(truncated)?;
    let sigma = r.read_f64::<LE>().map_err(truncated)?;
    if !r.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", r.len())));
    }
    SearchIndex::new(cfg, books, codes, mask, FastSet::from_bits(fast_bits), sigma, lambdas)
        .map_err(|e| Error::Format(e.to_string()))
}

pub fn save_index(index: &SearchIndex, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &index_to_bytes(index)?)
}

pub fn load_index(path: impl AsRef<Path>) -> Result<SearchIndex> {
    index_from_bytes(&read_file(path.as_ref())?)
}
