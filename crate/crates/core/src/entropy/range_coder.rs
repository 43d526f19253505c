//! Byte-oriented range coder over 16-bit frequency tables.
//!
//! 32-bit range, 64-bit low with carry propagation through a cached byte.
//! Interval bounds are `floor(range * cum / 2^16)`, so the whole range is
//! used on every step and the only loss is the final flush.

use crate::error::{Error, Result};

use super::pmf::{PmfTable, PRECISION, TOTAL};

const TOP: u32 = 1 << 24;

#[inline]
fn bound(range: u32, cum: u32) -> u32 {
    ((range as u64 * cum as u64) >> PRECISION) as u32
}

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    pending: u64,
    first: bool,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder { low: 0, range: u32::MAX, cache: 0, pending: 1, first: true, out: Vec::new() }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                if self.first {
                    // The leading byte is always zero; it is not stored.
                    debug_assert_eq!(byte.wrapping_add(carry), 0);
                    self.first = false;
                } else {
                    self.out.push(byte.wrapping_add(carry));
                }
                byte = 0xFF;
                self.pending -= 1;
                if self.pending == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        }
        self.pending += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    /// Narrow to `[cum, cum + freq)` out of `2^16`.
    pub fn encode_interval(&mut self, cum: u32, freq: u32) {
        debug_assert!(freq > 0 && cum + freq <= TOTAL);
        let lo = bound(self.range, cum);
        let hi = if cum + freq == TOTAL { self.range } else { bound(self.range, cum + freq) };
        self.low += lo as u64;
        self.range = hi - lo;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    pub fn encode(&mut self, symbol: i32, table: &PmfTable) -> Result<()> {
        let i = table.index_of(symbol)?;
        let (c, f) = table.interval(i);
        self.encode_interval(c, f);
        if Some(i) == table.escape_index() {
            let z = ((symbol << 1) ^ (symbol >> 31)) as u32;
            self.encode_interval(z >> 16, 1);
            self.encode_interval(z & 0xFFFF, 1);
        }
        Ok(())
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        let mut d = RangeDecoder { data, pos: 0, code: 0, range: u32::MAX };
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next_byte()? as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = *self.data.get(self.pos).ok_or_else(|| Error::Decode("range coded stream is truncated".into()))?;
        self.pos += 1;
        Ok(b)
    }

    /// Bytes consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }

    fn target(&self) -> u32 {
        let t = (((self.code as u64 + 1) << PRECISION) - 1) / self.range as u64;
        t.min(TOTAL as u64 - 1) as u32
    }

    fn consume(&mut self, cum: u32, freq: u32) -> Result<()> {
        let lo = bound(self.range, cum);
        let hi = if cum + freq == TOTAL { self.range } else { bound(self.range, cum + freq) };
        self.code = self.code.wrapping_sub(lo);
        self.range = hi - lo;
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | self.next_byte()? as u32;
        }
        Ok(())
    }

    fn decode_raw16(&mut self) -> Result<u32> {
        let v = self.target();
        self.consume(v, 1)?;
        Ok(v)
    }

    pub fn decode(&mut self, table: &PmfTable) -> Result<i32> {
        let i = table.find(self.target());
        let (c, f) = table.interval(i);
        self.consume(c, f)?;
        if Some(i) == table.escape_index() {
            let z = (self.decode_raw16()? << 16) | self.decode_raw16()?;
            return Ok(((z >> 1) as i32) ^ -((z & 1) as i32));
        }
        Ok(table.symbol_at(i))
    }
}

/// Code `symbols`, each under its own table.
pub fn range_encode(symbols: &[i32], tables: &[&PmfTable]) -> Result<Vec<u8>> {
    if symbols.len() != tables.len() {
        return Err(Error::Shape(format!("{} symbols for {} tables", symbols.len(), tables.len())));
    }
    let mut enc = RangeEncoder::new();
    for (&s, t) in symbols.iter().zip(tables) {
        enc.encode(s, t)?;
    }
    Ok(enc.finish())
}

pub fn range_decode(bytes: &[u8], tables: &[&PmfTable]) -> Result<Vec<i32>> {
    let mut dec = RangeDecoder::new(bytes)?;
    tables.iter().map(|t| dec.decode(t)).collect()
}
