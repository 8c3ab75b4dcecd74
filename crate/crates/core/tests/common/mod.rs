//! Brute-force reference implementations. Nothing here calls into the
//! library's algebra or planners; mappings are evaluated bit by bit.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use hammersim::{AddressMapping, CoordKind, Geometry};
use rand::seq::SliceRandom;
use rand::Rng;

/// (channel, rank, bankgroup, bank)
pub type Bank = [u64; 4];
/// (bank, row)
pub type Row = (Bank, u64);

fn log2(v: u64) -> u32 {
    assert!(v.is_power_of_two());
    v.trailing_zeros()
}

/// A mapping as per-field lists of XOR masks, LSB first.
#[derive(Clone, Debug)]
pub struct RefMap {
    pub g: Geometry,
    /// channel, rank, bankgroup, bank, row, column
    pub fields: [Vec<u64>; 6],
}

pub fn extents(g: &Geometry) -> [u64; 6] {
    [
        g.channels,
        g.ranks,
        g.bankgroups,
        g.banks,
        g.rows,
        g.columns,
    ]
}

pub fn width(g: &Geometry) -> u32 {
    extents(g).iter().map(|&e| log2(e)).sum()
}

impl RefMap {
    pub fn from_masks(g: Geometry, masks: &[u64]) -> Self {
        let mut fields: [Vec<u64>; 6] = Default::default();
        let mut it = masks.iter().copied();
        for (f, e) in fields.iter_mut().zip(extents(&g)) {
            *f = (0..log2(e))
                .map(|_| it.next().expect("enough masks"))
                .collect();
        }
        assert!(it.next().is_none());
        Self { g, fields }
    }

    pub fn to_mapping(&self) -> AddressMapping {
        let spec: Vec<(CoordKind, Vec<Vec<u32>>)> = CoordKind::ALL
            .iter()
            .zip(&self.fields)
            .map(|(k, masks)| {
                let bits = masks
                    .iter()
                    .map(|m| (0..64).filter(|b| m >> b & 1 == 1).collect())
                    .collect();
                (*k, bits)
            })
            .collect();
        AddressMapping::new(self.g, &spec).expect("structurally valid")
    }

    pub fn width(&self) -> u32 {
        width(&self.g)
    }

    pub fn total(&self) -> u64 {
        1 << self.width()
    }

    /// Coordinate of `pa`, evaluated bit by bit.
    pub fn decode(&self, pa: u64) -> [u64; 6] {
        let mut out = [0u64; 6];
        for (o, masks) in out.iter_mut().zip(&self.fields) {
            for (i, m) in masks.iter().enumerate() {
                *o |= (((m & pa).count_ones() & 1) as u64) << i;
            }
        }
        out
    }

    pub fn row(&self, pa: u64) -> Row {
        let c = self.decode(pa);
        ([c[0], c[1], c[2], c[3]], c[4])
    }

    pub fn subarray(&self, row: u64) -> u64 {
        row / self.g.rows_per_subarray
    }

    /// Bijective iff every PA decodes to a distinct coordinate.
    pub fn is_bijective(&self) -> bool {
        let mut seen = HashSet::with_capacity(self.total() as usize);
        (0..self.total()).all(|pa| seen.insert(self.decode(pa)))
    }

    pub fn footprint(&self, start: u64, end: u64) -> BTreeSet<Row> {
        (start..end).map(|pa| self.row(pa)).collect()
    }

    /// Lowest PA in `[start, end)` lying in `row`.
    pub fn lowest_pa_in_row(&self, start: u64, end: u64, row: Row) -> Option<u64> {
        (start..end).find(|&pa| self.row(pa) == row)
    }
}

/// Per-row-block key sets, so candidate ranges are unions of blocks.
pub struct Blocks<K> {
    pub unit: u64,
    pub keys: Vec<BTreeSet<K>>,
}

impl<K: Ord + Clone> Blocks<K> {
    pub fn new(m: &RefMap, key: impl Fn(u64) -> K) -> Self {
        let unit = m.g.columns;
        let keys = (0..m.total() / unit)
            .map(|b| (b * unit..(b + 1) * unit).map(&key).collect())
            .collect();
        Self { unit, keys }
    }

    pub fn range(&self, start: u64, end: u64) -> BTreeSet<K> {
        let mut out = BTreeSet::new();
        for b in start / self.unit..end / self.unit {
            out.extend(self.keys[b as usize].iter().cloned());
        }
        out
    }

    /// Lowest unit-aligned start `>= from` whose range avoids `bad`.
    pub fn first_fit(
        &self,
        from: u64,
        size: u64,
        total: u64,
        bad: impl Fn(&K) -> bool,
    ) -> Option<u64> {
        let mut start = from.div_ceil(self.unit) * self.unit;
        while start + size <= total {
            if !self.range(start, start + size).iter().any(&bad) {
                return Some(start);
            }
            start += self.unit;
        }
        None
    }
}

/// Expected VM starts for the subarray-isolating planner, or `None` when
/// some VM cannot be placed.
pub fn siloz_starts(m: &RefMap, sizes: &[u64]) -> Option<Vec<u64>> {
    let blocks = Blocks::new(m, |pa| {
        let (bank, row) = m.row(pa);
        (bank, m.subarray(row))
    });
    let mut taken = BTreeSet::new();
    let mut next = 0;
    let mut starts = Vec::new();
    for &size in sizes {
        let start = blocks.first_fit(next, size, m.total(), |k| taken.contains(k))?;
        taken.extend(blocks.range(start, start + size));
        starts.push(start);
        next = start + size;
    }
    Some(starts)
}

/// Expected VM starts for the guard-row planner.
pub fn citadel_starts(m: &RefMap, sizes: &[u64], guard: u64) -> Option<Vec<u64>> {
    let blocks = Blocks::new(m, |pa| m.row(pa));
    let mut forbidden: HashSet<Row> = HashSet::new();
    let mut next = 0;
    let mut starts = Vec::new();
    for &size in sizes {
        let start = blocks.first_fit(next, size, m.total(), |k| forbidden.contains(k))?;
        for (bank, row) in blocks.range(start, start + size) {
            for r in row.saturating_sub(guard)..=(row + guard).min(m.g.rows - 1) {
                forbidden.insert((bank, r));
            }
        }
        starts.push(start);
        next = start + size;
    }
    Some(starts)
}

/// (aggressor row, victim rows, lowest attacker PA in the aggressor row)
pub type RefAggressor = (Row, Vec<u64>, u64);

pub fn aggressors(
    m: &RefMap,
    attacker: (u64, u64),
    victim: (u64, u64),
    radius: u64,
) -> Vec<RefAggressor> {
    let a = m.footprint(attacker.0, attacker.1);
    let v = m.footprint(victim.0, victim.1);
    let mut out = Vec::new();
    for &(bank, r) in &a {
        let hits: Vec<u64> = v
            .iter()
            .filter(|(b, vr)| {
                *b == bank
                    && *vr != r
                    && vr.abs_diff(r) <= radius
                    && m.subarray(*vr) == m.subarray(r)
            })
            .map(|&(_, vr)| vr)
            .collect();
        if !hits.is_empty() {
            let pa = m
                .lowest_pa_in_row(attacker.0, attacker.1, (bank, r))
                .unwrap();
            out.push(((bank, r), hits, pa));
        }
    }
    out
}

pub enum Op {
    Access(u64),
    /// Activate the row holding this PA regardless of the row buffer.
    Activate(u64),
    Refresh,
}

#[derive(Debug, Default, PartialEq, Eq)]
pub struct OpenPageCount {
    pub accesses: u64,
    pub hits: u64,
    pub activations: u64,
    pub precharges: u64,
    /// Highest activation count any row reaches within one window.
    pub max_window_count: u64,
}

/// Replays `ops` against an open-page row buffer per bank.
pub fn open_page(m: &RefMap, ops: &[Op]) -> OpenPageCount {
    let mut open: HashMap<Bank, u64> = HashMap::new();
    let mut window: HashMap<Row, u64> = HashMap::new();
    let mut c = OpenPageCount::default();
    let activate = |c: &mut OpenPageCount,
                    window: &mut HashMap<Row, u64>,
                    open: &mut HashMap<Bank, u64>,
                    row: Row| {
        if open.insert(row.0, row.1).is_some() {
            c.precharges += 1;
        }
        c.activations += 1;
        let n = window.entry(row).or_insert(0);
        *n += 1;
        c.max_window_count = c.max_window_count.max(*n);
    };
    for op in ops {
        match *op {
            Op::Access(pa) => {
                c.accesses += 1;
                let row = m.row(pa);
                if open.get(&row.0) == Some(&row.1) {
                    c.hits += 1;
                } else {
                    activate(&mut c, &mut window, &mut open, row);
                }
            }
            Op::Activate(pa) => {
                c.accesses += 1;
                activate(&mut c, &mut window, &mut open, m.row(pa));
            }
            Op::Refresh => window.clear(),
        }
    }
    c
}

/// A geometry of at most `2^max_width` bytes with at least two rows per
/// subarray.
pub fn tiny_geometry(rng: &mut impl Rng, max_width: u32) -> Geometry {
    loop {
        let w = [
            rng.random_range(0..=1u32),
            rng.random_range(0..=1),
            rng.random_range(0..=2),
            rng.random_range(0..=2),
            rng.random_range(2..=7),
            rng.random_range(2..=7),
        ];
        if w.iter().sum::<u32>() > max_width {
            continue;
        }
        let sub = rng.random_range(1..=w[4]);
        return Geometry {
            channels: 1 << w[0],
            ranks: 1 << w[1],
            bankgroups: 1 << w[2],
            banks: 1 << w[3],
            rows: 1 << w[4],
            columns: 1 << w[5],
            rows_per_subarray: 1 << sub,
        };
    }
}

/// Uniformly random non-zero masks; invertible or not.
pub fn random_map(rng: &mut impl Rng, g: Geometry) -> RefMap {
    let w = width(&g);
    let masks: Vec<u64> = (0..w).map(|_| rng.random_range(1..1u64 << w)).collect();
    RefMap::from_masks(g, &masks)
}

/// Invertible by construction: a bit permutation followed by random row
/// additions.
pub fn random_invertible(rng: &mut impl Rng, g: Geometry) -> RefMap {
    let w = width(&g) as usize;
    let mut masks: Vec<u64> = (0..w).map(|b| 1u64 << b).collect();
    masks.shuffle(rng);
    if w > 1 {
        for _ in 0..rng.random_range(0..2 * w) {
            let i = rng.random_range(0..w);
            let j = rng.random_range(0..w);
            if i != j {
                masks[i] ^= masks[j];
            }
        }
    }
    RefMap::from_masks(g, &masks)
}

/// Invertible with the column field on the low address bits, as DRAM
/// controllers lay out a row; the remaining bits are mixed freely.
pub fn random_row_major(rng: &mut impl Rng, g: Geometry) -> RefMap {
    let w = width(&g) as usize;
    let cw = log2(g.columns) as usize;
    let upper = random_invertible(rng, Geometry { columns: 1, ..g });
    let mut masks: Vec<u64> = upper.fields[..5]
        .iter()
        .flatten()
        .map(|m| m << cw)
        .collect();
    // let the column bits leak into bank bits sometimes, like bank-xor
    for m in masks.iter_mut() {
        if rng.random_bool(0.2) {
            *m ^= 1 << rng.random_range(0..cw);
        }
    }
    masks.extend((0..cw).map(|b| 1u64 << b));
    assert_eq!(masks.len(), w);
    RefMap::from_masks(g, &masks)
}

/// Sizes in whole rows, summing to at most `total`.
pub fn random_sizes(rng: &mut impl Rng, g: &Geometry, count: usize) -> Vec<u64> {
    let total = width(g);
    let rows = (1u64 << total) / g.columns;
    (0..count)
        .map(|_| rng.random_range(1..=(rows / (2 * count as u64)).max(1)) * g.columns)
        .collect()
}

pub fn bank_of(b: &hammersim::BankTuple) -> Bank {
    [b.channel, b.rank, b.bankgroup, b.bank]
}

pub fn histogram<T: Ord + Clone>(items: impl IntoIterator<Item = T>) -> BTreeMap<T, usize> {
    let mut m = BTreeMap::new();
    for i in items {
        *m.entry(i).or_insert(0) += 1;
    }
    m
}

impl RefMap {
    pub fn from_mapping(m: &AddressMapping) -> Self {
        let fields = CoordKind::ALL.map(|k| m.function(k).to_vec());
        Self {
            g: *m.geometry(),
            fields,
        }
    }

    /// Lowest PA bit any bank or row bit depends on; bytes closer together
    /// than `1 << step_bits()` always share a row.
    pub fn step_bits(&self) -> u32 {
        self.fields[..5]
            .iter()
            .flatten()
            .map(|m| m.trailing_zeros())
            .min()
            .unwrap_or(0)
    }

    /// Footprint of a large region, sampling one byte per `1 << step_bits()`.
    pub fn footprint_sampled(&self, start: u64, end: u64) -> BTreeSet<Row> {
        let step = 1u64 << self.step_bits();
        assert!(start.is_multiple_of(step) && end.is_multiple_of(step));
        (start..end)
            .step_by(step as usize)
            .map(|pa| self.row(pa))
            .collect()
    }
}

/// Rank over GF(2) by straightforward elimination.
pub fn gf2_rank(rows: &[u64]) -> usize {
    let mut basis: Vec<u64> = Vec::new();
    for &r in rows {
        let mut v = r;
        for &b in &basis {
            v = v.min(v ^ b);
        }
        if v != 0 {
            basis.push(v);
            basis.sort_unstable_by(|a, b| b.cmp(a));
        }
    }
    basis.len()
}

/// Aggressor rows for large regions, using sampled footprints.
pub fn aggressors_sampled(m: &RefMap, attacker: (u64, u64), victim: (u64, u64)) -> BTreeSet<Row> {
    let v = m.footprint_sampled(victim.0, victim.1);
    m.footprint_sampled(attacker.0, attacker.1)
        .into_iter()
        .filter(|&(b, r)| {
            [r.wrapping_sub(1), r + 1]
                .iter()
                .any(|&n| v.contains(&(b, n)) && m.subarray(n) == m.subarray(r))
        })
        .collect()
}
