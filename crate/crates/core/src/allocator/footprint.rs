//! Exact images of physical address ranges under a linear mapping.
//!
//! An aligned block `[b, b + 2^k)` is `b XOR span(e_0 .. e_{k-1})`, so under a
//! GF(2)-linear mapping its image is the coset `f(b) XOR span(f(e_i))`. Any
//! range splits into O(address width) aligned blocks, so a range's footprint
//! is a small union of cosets, each enumerated from a reduced basis. Keys are
//! coordinate vectors restricted to a mask (e.g. all bits except the column).

use crate::addrmap::Translator;

/// Splits `[start, end)` into maximal aligned power-of-two blocks, ascending.
pub fn aligned_blocks(start: u64, end: u64) -> Vec<(u64, u32)> {
    let mut out = Vec::new();
    let mut s = start;
    while s < end {
        let mut k = if s == 0 { 63 } else { s.trailing_zeros() };
        while k > 0 && (end - s) < (1u64 << k) {
            k -= 1;
        }
        out.push((s, k));
        s += 1u64 << k;
    }
    out
}

/// Projection of coordinate vectors onto the bits in `mask`.
pub struct KeySpace {
    columns: Vec<u64>,
    mask: u64,
}

impl KeySpace {
    pub fn new(translator: &Translator, mask: u64) -> Self {
        let width = translator.geometry().address_width();
        let columns = (0..width)
            .map(|i| translator.pa_to_vec(1u64 << i) & mask)
            .collect();
        Self { columns, mask }
    }

    pub fn mask(&self) -> u64 {
        self.mask
    }

    pub fn key(&self, pa: u64) -> u64 {
        let mut acc = 0;
        let mut bits = pa;
        while bits != 0 {
            acc ^= self.columns[bits.trailing_zeros() as usize];
            bits &= bits - 1;
        }
        acc
    }

    /// Every key taken by the aligned block `[base, base + 2^log)`.
    pub fn block_keys(&self, base: u64, log: u32) -> Vec<u64> {
        let mut pivots: [u64; 64] = [0; 64];
        let mut basis = Vec::new();
        for &g in &self.columns[..log as usize] {
            let mut v = g;
            while v != 0 {
                let p = 63 - v.leading_zeros() as usize;
                if pivots[p] == 0 {
                    pivots[p] = v;
                    basis.push(v);
                    break;
                }
                v ^= pivots[p];
            }
        }
        let mut keys = Vec::with_capacity(1 << basis.len());
        keys.push(self.key(base));
        for b in basis {
            for i in 0..keys.len() {
                let k = keys[i] ^ b;
                keys.push(k);
            }
        }
        keys
    }

    /// Every key taken by `[start, end)`, possibly with repeats across blocks.
    pub fn range_keys(&self, start: u64, end: u64) -> impl Iterator<Item = u64> + '_ {
        aligned_blocks(start, end)
            .into_iter()
            .flat_map(move |(b, k)| self.block_keys(b, k))
    }

    /// Lowest `unit`-aligned block inside `[start, end)` containing a PA whose
    /// key satisfies `hit`. `start` and `end` must be multiples of
    /// `2^unit_log`.
    pub fn first_hit(
        &self,
        start: u64,
        end: u64,
        unit_log: u32,
        hit: &dyn Fn(u64) -> bool,
    ) -> Option<u64> {
        aligned_blocks(start, end)
            .into_iter()
            .find_map(|(b, k)| self.search(b, k, unit_log, hit))
    }

    fn search(&self, base: u64, log: u32, unit_log: u32, hit: &dyn Fn(u64) -> bool) -> Option<u64> {
        if !self.block_keys(base, log).into_iter().any(hit) {
            return None;
        }
        if log <= unit_log {
            return Some(base);
        }
        let half = log - 1;
        self.search(base, half, unit_log, hit)
            .or_else(|| self.search(base + (1u64 << half), half, unit_log, hit))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::addrmap::preset;
    use crate::geometry::{CoordKind, Geometry};
    use std::collections::BTreeSet;

    #[test]
    fn blocks_cover_range() {
        for (s, e) in [
            (0u64, 100u64),
            (3, 17),
            (8192, 8192 * 7),
            (5, 6),
            (0, 1 << 32),
        ] {
            let blocks = aligned_blocks(s, e);
            let mut pos = s;
            for (b, k) in blocks {
                assert_eq!(b, pos);
                assert_eq!(b % (1 << k), 0);
                pos += 1 << k;
            }
            assert_eq!(pos, e);
        }
        assert!(aligned_blocks(9, 9).is_empty());
    }

    #[test]
    fn block_keys_match_enumeration() {
        let t = preset("bank-xor-noncontig-row", Geometry::DDR4_4GIB)
            .unwrap()
            .translator()
            .unwrap();
        let mask = !t.field_mask(CoordKind::Column) & ((1 << 32) - 1);
        let ks = KeySpace::new(&t, mask);
        // 0x200000..+0x20000 touches x6 (bank) and x15, x16 (row)
        let (s, e) = (0x0020_0000u64, 0x0022_0000u64);
        let fast: BTreeSet<u64> = ks.range_keys(s, e).collect();
        let slow: BTreeSet<u64> = (s..e).map(|pa| t.pa_to_vec(pa) & mask).collect();
        assert_eq!(fast, slow);
    }

    #[test]
    fn first_hit_is_lowest() {
        let t = preset("simple", Geometry::DDR4_4GIB)
            .unwrap()
            .translator()
            .unwrap();
        let ks = KeySpace::new(&t, t.field_mask(CoordKind::Row));
        let row_off = Geometry::DDR4_4GIB.offset(CoordKind::Row);
        let hit = move |k: u64| (k >> row_off) == 300;
        // row 300 of bank 0 starts at 300 * 32 KiB
        assert_eq!(ks.first_hit(0, 1 << 31, 13, &hit), Some(300 * 0x8000));
        assert_eq!(ks.first_hit(0, 300 * 0x8000, 13, &hit), None);
    }
}
