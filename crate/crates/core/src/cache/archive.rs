use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use half::f16;
use memmap2::Mmap;

use super::{align_up, CacheManifest, Dtype, TensorEntry, ALIGN, FORMAT_VERSION, MAGIC, PREAMBLE_LEN, TRAILER_LEN};
use crate::error::{invalid, Error, Result};
use crate::numerics::Matrix;

fn encode(values: &[f64], dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * dtype.size() as usize);
    for &v in values {
        match dtype {
            Dtype::F16 => out.extend_from_slice(&f16::from_f64(v).to_le_bytes()),
            Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

pub(crate) fn decode(bytes: &[u8], dtype: Dtype) -> Vec<f64> {
    match dtype {
        Dtype::F16 => bytes.chunks_exact(2).map(|b| f16::from_le_bytes([b[0], b[1]]).to_f64()).collect(),
        Dtype::F32 => bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect(),
        Dtype::F64 => bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect(),
    }
}

/// Writes `tensors` in manifest order. Offsets, lengths and checksums in
/// the manifest are recomputed; the returned manifest is what was stored.
pub fn write_archive(manifest: &CacheManifest, tensors: &BTreeMap<String, Matrix>, path: &Path) -> Result<CacheManifest> {
    let mut manifest = manifest.clone();
    let mut seen = std::collections::HashSet::new();
    for e in &manifest.tensors {
        if !seen.insert(e.name.as_str()) {
            return Err(invalid(format!("tensor `{}` listed twice", e.name)));
        }
    }
    if let Some(extra) = tensors.keys().find(|k| !seen.contains(k.as_str())) {
        return Err(invalid(format!("tensor `{extra}` is not listed in the manifest")));
    }

    let mut payloads = Vec::with_capacity(manifest.tensors.len());
    let mut cursor = 0u64;
    for e in &mut manifest.tensors {
        let m = tensors.get(&e.name).ok_or_else(|| Error::IncompleteArchive(e.name.clone()))?;
        if e.numel() != m.as_slice().len() as u64 {
            return Err(invalid(format!(
                "tensor `{}` has {} values but shape {:?}",
                e.name,
                m.as_slice().len(),
                e.shape
            )));
        }
        let bytes = encode(m.as_slice(), e.dtype);
        e.offset = align_up(cursor);
        e.length = bytes.len() as u64;
        e.crc32 = crc32fast::hash(&bytes);
        cursor = e.offset + e.length;
        payloads.push(bytes);
    }

    let manifest_bytes = serde_json::to_vec(&manifest).map_err(|e| invalid(format!("manifest encoding: {e}")))?;
    let mut hasher = crc32fast::Hasher::new();
    let mut out = BufWriter::new(File::create(path)?);
    let mut put = |bytes: &[u8]| -> Result<()> {
        hasher.update(bytes);
        out.write_all(bytes)?;
        Ok(())
    };
    put(MAGIC)?;
    put(&FORMAT_VERSION.to_le_bytes())?;
    put(&(manifest_bytes.len() as u64).to_le_bytes())?;
    put(&manifest_bytes)?;
    let header_len = PREAMBLE_LEN + manifest_bytes.len() as u64;
    put(&vec![0u8; (align_up(header_len) - header_len) as usize])?;
    let mut written = 0u64;
    for (e, bytes) in manifest.tensors.iter().zip(&payloads) {
        put(&vec![0u8; (e.offset - written) as usize])?;
        put(bytes)?;
        written = e.offset + e.length;
    }
    let crc = hasher.finalize();
    out.write_all(&crc.to_le_bytes())?;
    out.flush()?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadMode {
    /// Whole file in memory.
    Eager,
    /// Memory-mapped; tensors are read on demand.
    Mapped,
}

enum Backing {
    Owned(Vec<u8>),
    Mapped(Mmap),
}

impl Backing {
    fn bytes(&self) -> &[u8] {
        match self {
            Backing::Owned(v) => v,
            Backing::Mapped(m) => m,
        }
    }
}

/// Byte range of the file touched by a tensor read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessRecord {
    pub start: u64,
    pub end: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    pub values: Vec<f64>,
}

impl Tensor {
    /// Views a 2-D tensor (or a 1-D one as a single row) as a matrix.
    pub fn to_matrix(&self) -> Result<Matrix> {
        let (r, c) = match self.shape[..] {
            [c] => (1, c),
            [r, c] => (r, c),
            _ => return Err(invalid(format!("shape {:?} is not 1-D or 2-D", self.shape))),
        };
        Matrix::from_vec(r, c, self.values.clone())
    }
}

pub struct CacheReader {
    backing: Backing,
    manifest: CacheManifest,
    payload_start: u64,
    format_version: u32,
    log: Mutex<Vec<AccessRecord>>,
}

impl std::fmt::Debug for CacheReader {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CacheReader").field("manifest", &self.manifest).field("payload_start", &self.payload_start).finish()
    }
}

pub(crate) struct Parsed {
    pub format_version: u32,
    pub manifest: CacheManifest,
    pub payload_start: u64,
}

/// Header checks shared by the reader and the validator.
pub(crate) fn parse_header(bytes: &[u8], path: &Path) -> Result<Parsed> {
    if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
        return Err(Error::NotACache(path.to_path_buf()));
    }
    if (bytes.len() as u64) < PREAMBLE_LEN + TRAILER_LEN {
        return Err(Error::CorruptArchive("file shorter than its fixed header".into()));
    }
    let format_version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let body_end = bytes.len() as u64 - TRAILER_LEN;
    if mlen > body_end - PREAMBLE_LEN {
        return Err(Error::CorruptArchive(format!("manifest length {mlen} overruns the file")));
    }
    let mbytes = &bytes[PREAMBLE_LEN as usize..(PREAMBLE_LEN + mlen) as usize];
    let manifest: CacheManifest =
        serde_json::from_slice(mbytes).map_err(|e| Error::CorruptArchive(format!("manifest does not parse: {e}")))?;
    let payload_start = align_up(PREAMBLE_LEN + mlen);
    Ok(Parsed { format_version, manifest, payload_start })
}

/// Bounds and size accounting for every entry, plus the total file size.
pub(crate) fn check_layout(manifest: &CacheManifest, payload_start: u64, file_len: u64) -> std::result::Result<(), String> {
    let mut end = 0u64;
    let mut ranges: Vec<(u64, u64, &str)> = Vec::new();
    for e in &manifest.tensors {
        let expect = e
            .shape
            .iter()
            .try_fold(e.dtype.size(), |acc, &d| acc.checked_mul(d as u64))
            .ok_or_else(|| format!("`{}`: shape {:?} overflows", e.name, e.shape))?;
        if e.length != expect {
            return Err(format!("`{}`: {} bytes declared, shape and dtype need {expect}", e.name, e.length));
        }
        if e.offset % ALIGN != 0 {
            return Err(format!("`{}`: offset {} is not {ALIGN}-byte aligned", e.name, e.offset));
        }
        let stop = e.offset.checked_add(e.length).ok_or_else(|| format!("`{}`: range overflows", e.name))?;
        ranges.push((e.offset, stop, &e.name));
        end = end.max(stop);
    }
    ranges.sort_unstable();
    for w in ranges.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(format!("`{}` overlaps `{}`", w[1].2, w[0].2));
        }
    }
    let expected = payload_start.checked_add(end).and_then(|v| v.checked_add(super::TRAILER_LEN));
    if expected != Some(file_len) {
        return Err(format!(
            "file is {file_len} bytes, header and payloads account for {}",
            expected.map_or("an overflowing count".into(), |v| v.to_string())
        ));
    }
    Ok(())
}

pub fn read_archive(path: &Path, mode: ReadMode) -> Result<CacheReader> {
    let file = File::open(path)?;
    let backing = match mode {
        ReadMode::Eager => Backing::Owned(std::fs::read(path)?),
        // SAFETY: archives are immutable once written; callers must not
        // modify the file while a reader is alive.
        ReadMode::Mapped => Backing::Mapped(unsafe { Mmap::map(&file)? }),
    };
    let bytes = backing.bytes();
    let parsed = parse_header(bytes, path)?;
    check_layout(&parsed.manifest, parsed.payload_start, bytes.len() as u64).map_err(Error::CorruptArchive)?;
    Ok(CacheReader {
        backing,
        manifest: parsed.manifest,
        payload_start: parsed.payload_start,
        format_version: parsed.format_version,
        log: Mutex::new(Vec::new()),
    })
}

impl CacheReader {
    pub fn manifest(&self) -> &CacheManifest {
        &self.manifest
    }

    pub fn format_version(&self) -> u32 {
        self.format_version
    }

    fn entry(&self, name: &str) -> Result<&TensorEntry> {
        self.manifest.entry(name).ok_or_else(|| invalid(format!("no tensor named `{name}`")))
    }

    /// Stored bytes of one tensor.
    pub fn raw(&self, name: &str) -> Result<&[u8]> {
        let e = self.entry(name)?;
        let start = self.payload_start + e.offset;
        let end = start + e.length;
        self.log.lock().unwrap_or_else(|p| p.into_inner()).push(AccessRecord { start, end });
        Ok(&self.backing.bytes()[start as usize..end as usize])
    }

    /// Decoded values; f16 payloads are widened exactly.
    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        let e = self.entry(name)?.clone();
        let values = decode(self.raw(name)?, e.dtype);
        Ok(Tensor { shape: e.shape, dtype: e.dtype, values })
    }

    /// File ranges touched by tensor reads so far.
    pub fn access_log(&self) -> Vec<AccessRecord> {
        self.log.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}
