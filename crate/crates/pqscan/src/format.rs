//! Little-endian binary persistence.
//!
//! | magic  | contents |
//! |--------|----------|
//! | `PQZ1` | m, b, d (`u32`), rotation flag (`u8`), d×d rotation, m codebooks, b̄ (`u32`, 0 when absent), m derived codebooks |
//! | `PQL1` | n (`u64`), m, b (`u32`), id flag (`u8`), packed codes, n ids (`u32`) |
//! | `PQG1` | n (`u64`), group count (`u32`), (key `[u8; 4]`, offset `u64`, count `u64`) per group, 6-byte codes, ids, positions |
//! | `IVF1` | K, d (`u32`), K×d coarse centroids, length-prefixed `PQZ1` blob, K length-prefixed `PQL1` blobs |
//!
//! Floats are stored as raw `f32` bits, so round trips are bit-exact.

use std::fs;
use std::path::Path;

use pqscan_core::derived::DerivedPQ;
use pqscan_core::fastscan::{GroupKey, GroupedDatabase, PACKED_BYTES};
use pqscan_core::ivf::{IvfIndex, IvfQuantizer};
use pqscan_core::{CodeList, Codebook, ProductQuantizer};

use crate::error::{Error, Result};

pub const MAGIC_PQ: &[u8; 4] = b"PQZ1";
pub const MAGIC_LIST: &[u8; 4] = b"PQL1";
pub const MAGIC_GROUPED: &[u8; 4] = b"PQG1";
pub const MAGIC_IVF: &[u8; 4] = b"IVF1";

/// Quantizer file contents: a product quantizer with optional derived
/// codebooks.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredQuantizer {
    Plain(ProductQuantizer),
    Derived(DerivedPQ),
}

impl StoredQuantizer {
    pub fn pq(&self) -> &ProductQuantizer {
        match self {
            StoredQuantizer::Plain(pq) => pq,
            StoredQuantizer::Derived(d) => d.pq(),
        }
    }
}

impl From<IvfQuantizer> for StoredQuantizer {
    fn from(q: IvfQuantizer) -> Self {
        match q {
            IvfQuantizer::Plain(pq) => StoredQuantizer::Plain(pq),
            IvfQuantizer::Derived(d) => StoredQuantizer::Derived(d),
        }
    }
}

impl From<StoredQuantizer> for IvfQuantizer {
    fn from(q: StoredQuantizer) -> Self {
        match q {
            StoredQuantizer::Plain(pq) => IvfQuantizer::Plain(pq),
            StoredQuantizer::Derived(d) => IvfQuantizer::Derived(d),
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    /// Offset of `bytes[0]` in the enclosing file.
    base: u64,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], base: u64) -> Self {
        Self { bytes, pos: 0, base }
    }

    fn offset(&self) -> u64 {
        self.base + self.pos as u64
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::format(self.offset(), message)
    }

    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < len {
            return Err(self.err(format!("truncated {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let at = self.offset();
        let got = self.take(4, "magic")?;
        if got != want {
            return Err(Error::format(at, format!("expected magic {}", String::from_utf8_lossy(want))));
        }
        Ok(())
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    /// A count that must fit in the remaining bytes at `unit` bytes each.
    fn count(&mut self, value: u64, unit: usize, what: &str) -> Result<usize> {
        let remaining = (self.bytes.len() - self.pos) as u64;
        if value.saturating_mul(unit as u64) > remaining {
            return Err(self.err(format!("{what} of {value} exceeds the remaining {remaining} bytes")));
        }
        Ok(value as usize)
    }

    fn f32s(&mut self, len: usize, what: &str) -> Result<Vec<f32>> {
        let len = self.count(len as u64, 4, what)?;
        let raw = self.take(len * 4, what)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn u32s(&mut self, len: usize, what: &str) -> Result<Vec<u32>> {
        let len = self.count(len as u64, 4, what)?;
        let raw = self.take(len * 4, what)?;
        Ok(raw.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn blob(&mut self, what: &str) -> Result<(u64, &'a [u8])> {
        let len = self.u64(what)?;
        let len = self.count(len, 1, what)?;
        let at = self.offset();
        Ok((at, self.take(len, what)?))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.err("trailing bytes"));
        }
        Ok(())
    }

    /// Runs a core constructor, reporting its error at `at`.
    fn build<T>(at: u64, r: pqscan_core::Result<T>) -> Result<T> {
        r.map_err(|e| Error::format(at, e.to_string()))
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u64).to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, vs: &[f32]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_u32s(out: &mut Vec<u8>, vs: &[u32]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_quantizer(q: &StoredQuantizer) -> Vec<u8> {
    let pq = q.pq();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC_PQ);
    put_u32(&mut out, pq.m());
    put_u32(&mut out, pq.b() as usize);
    put_u32(&mut out, pq.d());
    match pq.rotation() {
        Some(r) => {
            out.push(1);
            put_f32s(&mut out, r);
        }
        None => out.push(0),
    }
    for cb in pq.codebooks() {
        put_f32s(&mut out, cb.as_slice());
    }
    match q {
        StoredQuantizer::Plain(_) => put_u32(&mut out, 0),
        StoredQuantizer::Derived(d) => {
            put_u32(&mut out, d.bbar() as usize);
            for cb in d.derived() {
                put_f32s(&mut out, cb.as_slice());
            }
        }
    }
    out
}

fn parse_quantizer(r: &mut Reader) -> Result<StoredQuantizer> {
    r.magic(MAGIC_PQ)?;
    let at = r.offset();
    let m = r.u32("m")? as usize;
    let b = r.u32("b")?;
    let d = r.u32("d")? as usize;
    if m == 0 || d == 0 || d % m != 0 || !(1..=16).contains(&b) {
        return Err(Error::format(at, format!("invalid shape m={m} b={b} d={d}")));
    }
    let dsub = d / m;
    let flag_at = r.offset();
    let rotation = match r.u8("rotation flag")? {
        0 => None,
        1 => Some(r.f32s(d * d, "rotation")?),
        f => return Err(Error::format(flag_at, format!("bad rotation flag {f}"))),
    };
    let mut codebooks = Vec::with_capacity(m);
    for _ in 0..m {
        let at = r.offset();
        let c = r.f32s((1 << b) * dsub, "codebook")?;
        codebooks.push(Reader::build(at, Codebook::new(1 << b, dsub, c))?);
    }
    let pq = Reader::build(at, ProductQuantizer::new(b, codebooks, rotation))?;
    let bbar_at = r.offset();
    let bbar = r.u32("derived bits")?;
    if bbar == 0 {
        return Ok(StoredQuantizer::Plain(pq));
    }
    if bbar > b {
        return Err(Error::format(bbar_at, format!("derived bits {bbar} exceed b={b}")));
    }
    let mut derived = Vec::with_capacity(m);
    for _ in 0..m {
        let at = r.offset();
        let c = r.f32s((1 << bbar) * dsub, "derived codebook")?;
        derived.push(Reader::build(at, Codebook::new(1 << bbar, dsub, c))?);
    }
    Ok(StoredQuantizer::Derived(Reader::build(bbar_at, DerivedPQ::new(pq, bbar, derived))?))
}

pub fn decode_quantizer(bytes: &[u8]) -> Result<StoredQuantizer> {
    let mut r = Reader::new(bytes, 0);
    let q = parse_quantizer(&mut r)?;
    r.finish()?;
    Ok(q)
}

pub fn encode_list(list: &CodeList) -> Vec<u8> {
    let mut out = Vec::with_capacity(21 + list.packed().len() + 4 * list.len());
    out.extend_from_slice(MAGIC_LIST);
    put_u64(&mut out, list.len());
    put_u32(&mut out, list.m());
    put_u32(&mut out, list.b() as usize);
    match list.external_ids() {
        Some(ids) => {
            out.push(1);
            out.extend_from_slice(list.packed());
            put_u32s(&mut out, ids);
        }
        None => {
            out.push(0);
            out.extend_from_slice(list.packed());
        }
    }
    out
}

fn parse_list(r: &mut Reader) -> Result<CodeList> {
    r.magic(MAGIC_LIST)?;
    let at = r.offset();
    let n = r.u64("n")?;
    let m = r.u32("m")? as usize;
    let b = r.u32("b")?;
    let width = Reader::build(at, pqscan_core::CodeWidth::for_bits(b))?;
    if m == 0 {
        return Err(Error::format(at, "m must be positive"));
    }
    let flag_at = r.offset();
    let has_ids = match r.u8("id flag")? {
        0 => false,
        1 => true,
        f => return Err(Error::format(flag_at, format!("bad id flag {f}"))),
    };
    let n = r.count(n, width.code_bytes(m), "code count")?;
    let data_at = r.offset();
    let data = r.take(n * width.code_bytes(m), "codes")?.to_vec();
    let ids = if has_ids { Some(r.u32s(n, "ids")?) } else { None };
    Reader::build(data_at, CodeList::from_packed(m, b, n, data, ids))
}

pub fn decode_list(bytes: &[u8]) -> Result<CodeList> {
    let mut r = Reader::new(bytes, 0);
    let l = parse_list(&mut r)?;
    r.finish()?;
    Ok(l)
}

pub fn encode_grouped(g: &GroupedDatabase) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC_GROUPED);
    put_u64(&mut out, g.len());
    put_u32(&mut out, g.groups().len());
    for grp in g.groups() {
        out.extend_from_slice(&grp.key);
        put_u64(&mut out, grp.offset);
        put_u64(&mut out, grp.count);
    }
    for code in g.packed_codes() {
        out.extend_from_slice(&code);
    }
    put_u32s(&mut out, g.ids());
    put_u32s(&mut out, g.positions());
    out
}

pub fn decode_grouped(bytes: &[u8]) -> Result<GroupedDatabase> {
    let mut r = Reader::new(bytes, 0);
    r.magic(MAGIC_GROUPED)?;
    let n = r.u64("n")?;
    let n = r.count(n, PACKED_BYTES + 8, "code count")?;
    let groups = r.u32("group count")? as u64;
    let groups = r.count(groups, 20, "group count")?;
    let dir_at = r.offset();
    let mut directory = Vec::with_capacity(groups);
    let mut expected = 0u64;
    for _ in 0..groups {
        let at = r.offset();
        let key: GroupKey = r.take(4, "group key")?.try_into().unwrap();
        let offset = r.u64("group offset")?;
        let count = r.u64("group count")?;
        if offset != expected || count > n as u64 {
            return Err(Error::format(at, "group offsets are not contiguous"));
        }
        expected += count;
        directory.push((key, count as usize));
    }
    let packed: Vec<[u8; PACKED_BYTES]> = r
        .take(n * PACKED_BYTES, "codes")?
        .chunks_exact(PACKED_BYTES)
        .map(|c| c.try_into().unwrap())
        .collect();
    let ids = r.u32s(n, "ids")?;
    let positions = r.u32s(n, "positions")?;
    r.finish()?;
    Reader::build(dir_at, GroupedDatabase::from_parts(&directory, &packed, ids, positions))
}

pub fn encode_ivf(index: &IvfIndex) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC_IVF);
    put_u32(&mut out, index.num_lists());
    put_u32(&mut out, index.coarse().dsub());
    put_f32s(&mut out, index.coarse().as_slice());
    let q = encode_quantizer(&index.quantizer().clone().into());
    put_u64(&mut out, q.len());
    out.extend_from_slice(&q);
    for list in index.lists() {
        let l = encode_list(list);
        put_u64(&mut out, l.len());
        out.extend_from_slice(&l);
    }
    out
}

pub fn decode_ivf(bytes: &[u8]) -> Result<IvfIndex> {
    let mut r = Reader::new(bytes, 0);
    r.magic(MAGIC_IVF)?;
    let at = r.offset();
    let k = r.u32("K")? as usize;
    let d = r.u32("d")? as usize;
    if k == 0 || d == 0 {
        return Err(Error::format(at, "K and d must be positive"));
    }
    let c_at = r.offset();
    let coarse = Reader::build(c_at, Codebook::new(k, d, r.f32s(k * d, "coarse codebook")?))?;
    let (q_at, q_bytes) = r.blob("quantizer")?;
    let mut qr = Reader::new(q_bytes, q_at);
    let quantizer = parse_quantizer(&mut qr)?;
    qr.finish()?;
    let mut lists = Vec::with_capacity(k);
    for _ in 0..k {
        let (l_at, l_bytes) = r.blob("list")?;
        let mut lr = Reader::new(l_bytes, l_at);
        lists.push(parse_list(&mut lr)?);
        lr.finish()?;
    }
    r.finish()?;
    Reader::build(at, IvfIndex::from_parts(coarse, quantizer.into(), lists))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    Ok(fs::read(path)?)
}

pub fn save_quantizer(path: impl AsRef<Path>, q: &StoredQuantizer) -> Result<()> {
    Ok(fs::write(path, encode_quantizer(q))?)
}

pub fn load_quantizer(path: impl AsRef<Path>) -> Result<StoredQuantizer> {
    decode_quantizer(&read(path.as_ref())?)
}

pub fn save_list(path: impl AsRef<Path>, list: &CodeList) -> Result<()> {
    Ok(fs::write(path, encode_list(list))?)
}

pub fn load_list(path: impl AsRef<Path>) -> Result<CodeList> {
    decode_list(&read(path.as_ref())?)
}

pub fn save_grouped(path: impl AsRef<Path>, g: &GroupedDatabase) -> Result<()> {
    Ok(fs::write(path, encode_grouped(g))?)
}

pub fn load_grouped(path: impl AsRef<Path>) -> Result<GroupedDatabase> {
    decode_grouped(&read(path.as_ref())?)
}

pub fn save_ivf(path: impl AsRef<Path>, index: &IvfIndex) -> Result<()> {
    Ok(fs::write(path, encode_ivf(index))?)
}

pub fn load_ivf(path: impl AsRef<Path>) -> Result<IvfIndex> {
    decode_ivf(&read(path.as_ref())?)
}

/// Magic of a persisted file, if it is one of ours.
pub fn sniff(bytes: &[u8]) -> Option<&'static [u8; 4]> {
    [MAGIC_PQ, MAGIC_LIST, MAGIC_GROUPED, MAGIC_IVF]
        .into_iter()
        .find(|m| bytes.starts_with(*m))
}
