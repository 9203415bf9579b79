//! Reference range coder over 16-bit frequency tables.
//!
//! A carry-propagating range coder with a 64-bit range and a 128-bit `low`
//! register. The range is kept in `[2^56, 2^64)`; each coded symbol narrows
//! it by `range >> 16`, so the truncation loss is below 2^-40 per symbol.
//!
//! Stream layout: the leading byte of the classic carry scheme is always zero
//! and is not written. On flush the final value is rounded up to a multiple of
//! 2^56 inside the current interval, so at most one significant byte follows
//! the pending carry bytes. Trailing zero bytes are stripped; the decoder
//! reads zeros past the end of the buffer.

use crate::entropy::cdf::{CdfProvider, TABLE_PRECISION, TABLE_TOTAL};
use crate::entropy::SymbolPlane;
use crate::error::{FcnrError, Result};

const TOP: u64 = 1 << 56;
const LOW_MASK: u128 = (1u128 << 56) - 1;

#[derive(Debug)]
pub struct RangeEncoder {
    low: u128,
    range: u64,
    cache: u8,
    cache_size: u64,
    skipped_lead: bool,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder {
            low: 0,
            range: u64::MAX,
            cache: 0,
            cache_size: 1,
            skipped_lead: false,
            out: Vec::new(),
        }
    }

    /// Code the interval `[start, start + freq)` out of `2^16`.
    pub fn encode(&mut self, start: u32, freq: u32) {
        debug_assert!(freq > 0 && start + freq <= TABLE_TOTAL);
        let r = self.range >> TABLE_PRECISION;
        self.low += r as u128 * start as u128;
        self.range = r * freq as u64;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    fn emit(&mut self, byte: u8) {
        if self.skipped_lead {
            self.out.push(byte);
        } else {
            debug_assert_eq!(byte, 0);
            self.skipped_lead = true;
        }
    }

    fn shift_low(&mut self) {
        let carry = (self.low >> 64) as u8;
        if (self.low as u64) < 0xFF00_0000_0000_0000 || carry != 0 {
            let mut pending = self.cache;
            loop {
                self.emit(pending.wrapping_add(carry));
                pending = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 56) & 0xFF) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & LOW_MASK) << 8;
    }

    pub fn finish(mut self) -> Vec<u8> {
        // Smallest multiple of 2^56 inside [low, low + range).
        self.low = (self.low + LOW_MASK) & !LOW_MASK;
        self.shift_low();
        self.shift_low();
        while self.out.last() == Some(&0) {
            self.out.pop();
        }
        self.out
    }
}

#[derive(Debug)]
pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    code: u64,
    range: u64,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        let mut dec = RangeDecoder {
            data,
            pos: 0,
            code: 0,
            range: u64::MAX,
        };
        for _ in 0..8 {
            dec.code = (dec.code << 8) | dec.next_byte() as u64;
        }
        dec
    }

    fn next_byte(&mut self) -> u8 {
        let b = self.data.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    /// Decode one symbol index against a cumulative table.
    pub fn decode(&mut self, cumulative: &[u32]) -> usize {
        let r = self.range >> TABLE_PRECISION;
        let target = (self.code / r).min(TABLE_TOTAL as u64 - 1) as u32;
        // Last index whose cumulative start is <= target.
        let idx = cumulative.partition_point(|&c| c <= target) - 1;
        let idx = idx.min(cumulative.len() - 2);
        let start = cumulative[idx];
        let freq = cumulative[idx + 1] - start;
        self.code = self.code.wrapping_sub(r * start as u64);
        self.range = r * freq as u64;
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte() as u64;
            self.range <<= 8;
        }
        idx
    }

    /// Bytes consumed beyond the end of the buffer (zero padding).
    pub fn overrun(&self) -> usize {
        self.pos.saturating_sub(self.data.len())
    }
}

/// Entropy-code a plane of symbols, one table per element.
pub fn ac_encode<P: CdfProvider + ?Sized>(symbols: &SymbolPlane, tables: &mut P) -> Result<Vec<u8>> {
    if symbols.symbols.len() != tables.len() {
        return Err(FcnrError::Shape(format!(
            "{} symbols but {} tables",
            symbols.symbols.len(),
            tables.len()
        )));
    }
    let bounds = tables.bounds();
    if symbols.bounds != bounds {
        return Err(FcnrError::InvalidArgument(format!(
            "symbol bounds {:?} differ from table bounds {bounds:?}",
            symbols.bounds
        )));
    }
    let mut enc = RangeEncoder::new();
    for (i, &v) in symbols.symbols.iter().enumerate() {
        if !bounds.contains(v) {
            return Err(FcnrError::InvalidArgument(format!(
                "symbol {v} at {i} outside {bounds:?}"
            )));
        }
        let k = (v - bounds.min) as usize;
        let table = tables.table(i);
        enc.encode(table[k], table[k + 1] - table[k]);
    }
    Ok(enc.finish())
}

/// Decode `tables.len()` symbols. Only the tables, never the stream, decide
/// the count.
pub fn ac_decode<P: CdfProvider + ?Sized>(stream: &[u8], tables: &mut P) -> Result<SymbolPlane> {
    let bounds = tables.bounds();
    let width = bounds.alphabet_size() + 1;
    let mut dec = RangeDecoder::new(stream);
    let mut symbols = Vec::with_capacity(tables.len());
    for i in 0..tables.len() {
        let table = tables.table(i);
        if table.len() != width {
            return Err(FcnrError::Shape(format!(
                "table {i} has {} entries, expected {width}",
                table.len()
            )));
        }
        symbols.push(bounds.min + dec.decode(table) as i32);
    }
    SymbolPlane::new(symbols, bounds)
}

/// Ideal code length of `symbols` under the quantized tables, in bits.
pub fn table_information_bits<P: CdfProvider + ?Sized>(symbols: &SymbolPlane, tables: &mut P) -> f64 {
    let min = tables.bounds().min;
    symbols
        .symbols
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let t = tables.table(i);
            let k = (v - min) as usize;
            -((t[k + 1] - t[k]) as f64 / TABLE_TOTAL as f64).log2()
        })
        .sum()
}
