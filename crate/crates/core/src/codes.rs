//! Packed short-code storage: sequential code lists and the block-transposed
//! layout consumed by the 16-lane table-lookup kernels.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Lanes per transposed block.
pub const BLOCK: usize = 16;

/// Physical width of one sub-index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodeWidth {
    /// 4-bit sub-indexes, two per byte (even component in the low nibble).
    Nibble,
    Byte,
    /// Little-endian 16-bit words. Also hosts 9 to 15-bit quantizers.
    Word,
}

impl CodeWidth {
    pub fn for_bits(b: u32) -> Result<Self> {
        match b {
            4 => Ok(CodeWidth::Nibble),
            8 => Ok(CodeWidth::Byte),
            9..=16 => Ok(CodeWidth::Word),
            _ => Err(Error::UnsupportedBits(b)),
        }
    }

    pub fn code_bytes(self, m: usize) -> usize {
        match self {
            CodeWidth::Nibble => m.div_ceil(2),
            CodeWidth::Byte => m,
            CodeWidth::Word => 2 * m,
        }
    }

    #[inline]
    pub(crate) fn get(self, code: &[u8], j: usize) -> u16 {
        match self {
            CodeWidth::Nibble => ((code[j / 2] >> ((j & 1) * 4)) & 0x0f) as u16,
            CodeWidth::Byte => code[j] as u16,
            CodeWidth::Word => u16::from_le_bytes([code[2 * j], code[2 * j + 1]]),
        }
    }

    #[inline]
    pub(crate) fn set(self, code: &mut [u8], j: usize, v: u16) {
        match self {
            CodeWidth::Nibble => {
                let shift = (j & 1) * 4;
                code[j / 2] = (code[j / 2] & !(0x0f << shift)) | ((v as u8 & 0x0f) << shift);
            }
            CodeWidth::Byte => code[j] = v as u8,
            CodeWidth::Word => code[2 * j..2 * j + 2].copy_from_slice(&v.to_le_bytes()),
        }
    }
}

/// Contiguous array of `n` codes of `m` sub-indexes, with optional external
/// ids (positions otherwise).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeList {
    m: usize,
    b: u32,
    width: CodeWidth,
    code_bytes: usize,
    n: usize,
    data: Vec<u8>,
    ids: Option<Vec<u32>>,
}

impl CodeList {
    pub fn new(m: usize, b: u32) -> Result<Self> {
        Self::with_capacity(m, b, 0)
    }

    pub fn with_capacity(m: usize, b: u32, n: usize) -> Result<Self> {
        let width = CodeWidth::for_bits(b)?;
        if m == 0 {
            return Err(Error::invalid("codes need at least one component"));
        }
        let code_bytes = width.code_bytes(m);
        Ok(Self {
            m,
            b,
            width,
            code_bytes,
            n: 0,
            data: Vec::with_capacity(n * code_bytes),
            ids: None,
        })
    }

    /// Rebuilds a list from its packed bytes, validating every sub-index.
    pub fn from_packed(m: usize, b: u32, n: usize, data: Vec<u8>, ids: Option<Vec<u32>>) -> Result<Self> {
        let mut list = Self::with_capacity(m, b, 0)?;
        if data.len() != n * list.code_bytes {
            return Err(Error::DimensionMismatch {
                expected: n * list.code_bytes,
                found: data.len(),
            });
        }
        if let Some(ids) = &ids {
            if ids.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: ids.len(),
                });
            }
        }
        list.n = n;
        list.data = data;
        list.ids = ids;
        if list.width == CodeWidth::Word || (list.width == CodeWidth::Nibble && m % 2 == 1) {
            for i in 0..n {
                list.validate(i)?;
            }
        }
        Ok(list)
    }

    fn validate(&self, i: usize) -> Result<()> {
        let raw = self.raw(i);
        for j in 0..self.m {
            let v = self.width.get(raw, j) as usize;
            if v >> self.b != 0 {
                return Err(Error::IndexOutOfRange {
                    index: v,
                    bound: 1 << self.b,
                });
            }
        }
        if self.width == CodeWidth::Nibble && self.m % 2 == 1 && raw[self.code_bytes - 1] >> 4 != 0 {
            return Err(Error::invalid("padding nibble must be zero"));
        }
        Ok(())
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn b(&self) -> u32 {
        self.b
    }

    #[inline]
    pub fn width(&self) -> CodeWidth {
        self.width
    }

    #[inline]
    pub fn code_bytes(&self) -> usize {
        self.code_bytes
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn packed(&self) -> &[u8] {
        &self.data
    }

    pub fn external_ids(&self) -> Option<&[u32]> {
        self.ids.as_deref()
    }

    #[inline]
    pub fn id(&self, i: usize) -> u32 {
        match &self.ids {
            Some(ids) => ids[i],
            None => i as u32,
        }
    }

    #[inline]
    pub fn raw(&self, i: usize) -> &[u8] {
        &self.data[i * self.code_bytes..(i + 1) * self.code_bytes]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u16 {
        self.width.get(self.raw(i), j)
    }

    pub fn code(&self, i: usize) -> Vec<u16> {
        let raw = self.raw(i);
        (0..self.m).map(|j| self.width.get(raw, j)).collect()
    }

    pub fn push(&mut self, code: &[u16]) -> Result<()> {
        self.push_inner(code)?;
        if let Some(ids) = &mut self.ids {
            ids.push((self.n - 1) as u32);
        }
        Ok(())
    }

    pub fn push_with_id(&mut self, code: &[u16], id: u32) -> Result<()> {
        self.push_inner(code)?;
        let n = self.n;
        self.ids
            .get_or_insert_with(|| (0..n as u32 - 1).collect())
            .push(id);
        Ok(())
    }

    fn push_inner(&mut self, code: &[u16]) -> Result<()> {
        if code.len() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                found: code.len(),
            });
        }
        let start = self.data.len();
        self.data.resize(start + self.code_bytes, 0);
        for (j, &v) in code.iter().enumerate() {
            if (v as usize) >> self.b != 0 {
                self.data.truncate(start);
                return Err(Error::IndexOutOfRange {
                    index: v as usize,
                    bound: 1 << self.b,
                });
            }
            self.width.set(&mut self.data[start..], j, v);
        }
        self.n += 1;
        Ok(())
    }

    /// The first `count` codes (with their ids).
    pub fn prefix(&self, count: usize) -> CodeList {
        let count = count.min(self.n);
        CodeList {
            m: self.m,
            b: self.b,
            width: self.width,
            code_bytes: self.code_bytes,
            n: count,
            data: self.data[..count * self.code_bytes].to_vec(),
            ids: self.ids.as_ref().map(|ids| ids[..count].to_vec()),
        }
    }
}

impl CodeList {
    /// Block-transposed copy; see [`TransposedCodeList`].
    pub fn transpose_blocks(&self) -> Result<TransposedCodeList> {
        TransposedCodeList::from_list(self)
    }
}

/// Codes split into blocks of 16; inside a block, byte `r` of every code is
/// stored contiguously (16 bytes per row), so one 128-bit load fetches the
/// same component of 16 codes. With 4-bit codes a row holds components
/// `2r` (low nibbles) and `2r + 1` (high nibbles). The last block is
/// zero-padded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransposedCodeList {
    m: usize,
    b: u32,
    width: CodeWidth,
    code_bytes: usize,
    n: usize,
    blocks: Vec<u8>,
    ids: Option<Vec<u32>>,
}

impl TransposedCodeList {
    pub fn from_list(list: &CodeList) -> Result<Self> {
        if !matches!(list.width, CodeWidth::Nibble | CodeWidth::Byte) {
            return Err(Error::UnsupportedBits(list.b));
        }
        let cb = list.code_bytes;
        let nblocks = list.n.div_ceil(BLOCK);
        let mut blocks = vec![0u8; nblocks * BLOCK * cb];
        for i in 0..list.n {
            let (blk, lane) = (i / BLOCK, i % BLOCK);
            let base = blk * BLOCK * cb;
            for (r, &byte) in list.raw(i).iter().enumerate() {
                blocks[base + r * BLOCK + lane] = byte;
            }
        }
        Ok(Self {
            m: list.m,
            b: list.b,
            width: list.width,
            code_bytes: cb,
            n: list.n,
            blocks,
            ids: list.ids.clone(),
        })
    }

    pub fn detranspose(&self) -> CodeList {
        let cb = self.code_bytes;
        let mut data = vec![0u8; self.n * cb];
        for i in 0..self.n {
            let (blk, lane) = (i / BLOCK, i % BLOCK);
            let base = blk * BLOCK * cb;
            for r in 0..cb {
                data[i * cb + r] = self.blocks[base + r * BLOCK + lane];
            }
        }
        CodeList {
            m: self.m,
            b: self.b,
            width: self.width,
            code_bytes: cb,
            n: self.n,
            data,
            ids: self.ids.clone(),
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn b(&self) -> u32 {
        self.b
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Rows per block (bytes per code).
    pub fn rows(&self) -> usize {
        self.code_bytes
    }

    pub fn num_blocks(&self) -> usize {
        self.n.div_ceil(BLOCK)
    }

    #[inline]
    pub fn block(&self, blk: usize) -> &[u8] {
        let sz = BLOCK * self.code_bytes;
        &self.blocks[blk * sz..(blk + 1) * sz]
    }

    /// Number of real codes in block `blk` (the rest is padding).
    #[inline]
    pub fn valid(&self, blk: usize) -> usize {
        (self.n - blk * BLOCK).min(BLOCK)
    }

    #[inline]
    pub fn id(&self, i: usize) -> u32 {
        match &self.ids {
            Some(ids) => ids[i],
            None => i as u32,
        }
    }

    /// Sub-index `j` of code `i`.
    pub fn get(&self, i: usize, j: usize) -> u16 {
        let blk = self.block(i / BLOCK);
        let lane = i % BLOCK;
        match self.width {
            CodeWidth::Nibble => ((blk[(j / 2) * BLOCK + lane] >> ((j & 1) * 4)) & 0x0f) as u16,
            _ => blk[j * BLOCK + lane] as u16,
        }
    }
}
