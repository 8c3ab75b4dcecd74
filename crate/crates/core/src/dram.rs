//! Open-page DRAM with per-row activation counting and threshold-triggered
//! bitflips.
//!
//! Flips are confined to the aggressor's bank and subarray: a victim row is
//! any row within `blast_radius` of the aggressor that shares its subarray.
//! Activation counters live for one refresh window and are cleared only by
//! [`SimState::refresh`]. A flip becomes possible on the activation that
//! takes a row's count above `hc_first`.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::addrmap::Translator;
use crate::error::MapError;
use crate::geometry::{DramCoordinate, Geometry, RowId};

/// Seed used in deterministic mode, where outcomes must not depend on the
/// configured seed.
const DETERMINISTIC_SEED: u64 = 0x005e_ed0f_d7a3;

fn default_hc_first() -> u64 {
    50_000
}
fn default_flip_probability() -> f64 {
    1e-4
}
fn default_blast_radius() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HammerParams {
    #[serde(default = "default_hc_first")]
    pub hc_first: u64,
    #[serde(default = "default_flip_probability")]
    pub flip_probability: f64,
    #[serde(default = "default_blast_radius")]
    pub blast_radius: u64,
    /// Flip every candidate victim on the first activation past the
    /// threshold, at most once per victim row per refresh window.
    #[serde(default, rename = "deterministic")]
    pub deterministic_mode: bool,
    #[serde(default, rename = "seed")]
    pub rng_seed: u64,
}

impl Default for HammerParams {
    fn default() -> Self {
        Self {
            hc_first: default_hc_first(),
            flip_probability: default_flip_probability(),
            blast_radius: default_blast_radius(),
            deterministic_mode: false,
            rng_seed: 0,
        }
    }
}

impl HammerParams {
    pub fn deterministic(hc_first: u64) -> Self {
        Self {
            hc_first,
            deterministic_mode: true,
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<(), String> {
        if self.hc_first == 0 {
            return Err("hc_first must be at least 1".into());
        }
        if !(self.flip_probability > 0.0 && self.flip_probability <= 1.0) {
            return Err(format!(
                "flip_probability {} not in (0, 1]",
                self.flip_probability
            ));
        }
        if self.blast_radius == 0 {
            return Err("blast_radius must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessKind {
    Read,
    Write,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AccessOutcome {
    pub hit: bool,
    /// Byte read, or the byte stored for writes.
    pub value: u8,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitflipRecord {
    #[serde(with = "crate::hex")]
    pub pa: u64,
    pub coord: DramCoordinate,
    pub bit_index: u8,
    pub aggressor_row: u64,
    pub old_value: u8,
    pub new_value: u8,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    pub accesses: u64,
    pub row_buffer_hits: u64,
    pub activations: u64,
    pub precharges: u64,
    pub refresh_windows: u64,
    /// Activations per bank, indexed by flat bank index.
    pub bank_activations: Vec<u64>,
}

impl Stats {
    pub fn hit_rate(&self) -> f64 {
        if self.accesses == 0 {
            0.0
        } else {
            self.row_buffer_hits as f64 / self.accesses as f64
        }
    }
}

/// Mutable simulation state for one DRAM device.
#[derive(Clone, Debug)]
pub struct SimState {
    geometry: Geometry,
    params: HammerParams,
    open_row: Vec<Option<u64>>,
    act_count: HashMap<(usize, u64), u64>,
    flipped_this_window: HashSet<(usize, u64)>,
    contents: BTreeMap<u64, u8>,
    flips: Vec<BitflipRecord>,
    stats: Stats,
    rng: ChaCha8Rng,
}

impl SimState {
    pub fn new(geometry: Geometry, params: HammerParams) -> Self {
        let seed = if params.deterministic_mode {
            DETERMINISTIC_SEED
        } else {
            params.rng_seed
        };
        let banks = geometry.bank_count() as usize;
        Self {
            geometry,
            params,
            open_row: vec![None; banks],
            act_count: HashMap::new(),
            flipped_this_window: HashSet::new(),
            contents: BTreeMap::new(),
            flips: Vec::new(),
            stats: Stats {
                bank_activations: vec![0; banks],
                ..Stats::default()
            },
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn params(&self) -> &HammerParams {
        &self.params
    }

    pub fn bank_count(&self) -> usize {
        self.open_row.len()
    }

    pub fn open_row(&self, coord: &DramCoordinate) -> Option<u64> {
        self.open_row[self.geometry.bank_index(coord.bank_tuple())]
    }

    pub fn activation_count(&self, row: RowId) -> u64 {
        let bank = self.geometry.bank_index(row.bank);
        self.act_count.get(&(bank, row.row)).copied().unwrap_or(0)
    }

    /// Largest activation count of any row in the current window.
    pub fn max_activation_count(&self) -> u64 {
        self.act_count.values().copied().max().unwrap_or(0)
    }

    fn check_pa(&self, pa: u64) -> Result<(), MapError> {
        let total = self.geometry.total_bytes();
        if pa >= total {
            return Err(MapError::PaOutOfRange { pa, total });
        }
        Ok(())
    }

    /// One memory access under the open-page policy.
    pub fn access(
        &mut self,
        mapping: &Translator,
        pa: u64,
        kind: AccessKind,
        data: Option<u8>,
    ) -> Result<AccessOutcome, MapError> {
        debug_assert_eq!(mapping.geometry(), &self.geometry);
        let coord = mapping.pa_to_coord(pa)?;
        let bank = self.geometry.bank_index(coord.bank_tuple());
        self.stats.accesses += 1;
        let hit = self.open_row[bank] == Some(coord.row);
        if hit {
            self.stats.row_buffer_hits += 1;
        } else {
            self.open_and_count(mapping, coord);
        }
        let value = match kind {
            AccessKind::Read => self.byte(pa),
            AccessKind::Write => {
                let v = data.unwrap_or(0);
                self.contents.insert(pa, v);
                v
            }
        };
        Ok(AccessOutcome { hit, value })
    }

    /// Opens `coord.row` regardless of the row buffer, as a flush-and-reload
    /// hammer iteration would. Counts as one access and one activation.
    pub fn activate_row(
        &mut self,
        mapping: &Translator,
        coord: &DramCoordinate,
    ) -> Result<(), MapError> {
        self.geometry.check_coord(coord)?;
        self.stats.accesses += 1;
        self.open_and_count(mapping, *coord);
        Ok(())
    }

    fn open_and_count(&mut self, mapping: &Translator, coord: DramCoordinate) {
        let bank = self.geometry.bank_index(coord.bank_tuple());
        if self.open_row[bank].is_some() {
            self.stats.precharges += 1;
        }
        self.open_row[bank] = Some(coord.row);
        self.stats.activations += 1;
        self.stats.bank_activations[bank] += 1;
        let count = self.act_count.entry((bank, coord.row)).or_insert(0);
        *count += 1;
        let count = *count;
        if count > self.params.hc_first {
            self.maybe_flip(mapping, &coord);
        }
    }

    /// Rows that can be disturbed by activating `row`: within the blast radius
    /// and in the same subarray, nearest first, lower before upper.
    pub fn victim_candidates(&self, row: u64) -> Vec<u64> {
        victim_rows(&self.geometry, row, self.params.blast_radius)
    }

    fn maybe_flip(&mut self, mapping: &Translator, aggressor: &DramCoordinate) {
        let bank = self.geometry.bank_index(aggressor.bank_tuple());
        for victim in self.victim_candidates(aggressor.row) {
            let flips = if self.params.deterministic_mode {
                self.flipped_this_window.insert((bank, victim))
            } else {
                self.rng.random_bool(self.params.flip_probability)
            };
            if !flips {
                continue;
            }
            let column = self.rng.random_range(0..self.geometry.columns);
            let bit = self.rng.random_range(0..8u8);
            let coord = DramCoordinate {
                row: victim,
                column,
                ..*aggressor
            };
            let pa = mapping.vec_to_pa(mapping.encode(&coord));
            let old = self.byte(pa);
            let new = old ^ (1 << bit);
            self.contents.insert(pa, new);
            let record = BitflipRecord {
                pa,
                coord,
                bit_index: bit,
                aggressor_row: aggressor.row,
                old_value: old,
                new_value: new,
            };
            debug_assert!(flip_is_confined(
                &self.geometry,
                self.params.blast_radius,
                &record,
                aggressor
            ));
            self.flips.push(record);
        }
    }

    /// Starts a new refresh window: activation counters and the
    /// deterministic-mode latches are cleared; open rows stay open.
    pub fn refresh(&mut self) {
        self.act_count.clear();
        self.flipped_this_window.clear();
        self.stats.refresh_windows += 1;
    }

    pub fn collect_flips(&self) -> &[BitflipRecord] {
        &self.flips
    }

    pub fn stats(&self) -> &Stats {
        &self.stats
    }

    fn byte(&self, pa: u64) -> u8 {
        self.contents.get(&pa).copied().unwrap_or(0)
    }

    /// Reads memory without touching row buffers, counters or stats.
    pub fn read_byte(&self, pa: u64) -> Result<u8, MapError> {
        self.check_pa(pa)?;
        Ok(self.byte(pa))
    }

    /// Writes memory without touching row buffers, counters or stats.
    pub fn write_byte(&mut self, pa: u64, value: u8) -> Result<(), MapError> {
        self.check_pa(pa)?;
        self.contents.insert(pa, value);
        Ok(())
    }

    pub fn into_parts(self) -> (Vec<BitflipRecord>, Stats) {
        (self.flips, self.stats)
    }
}

/// Rows within `radius` of `row` that share its subarray.
pub fn victim_rows(geometry: &Geometry, row: u64, radius: u64) -> Vec<u64> {
    let sub = geometry.subarray_of(row);
    let mut out = Vec::new();
    for d in 1..=radius {
        if let Some(v) = row.checked_sub(d) {
            if geometry.subarray_of(v) == sub {
                out.push(v);
            }
        }
        let v = row + d;
        if v < geometry.rows && geometry.subarray_of(v) == sub {
            out.push(v);
        }
    }
    out
}

/// Same bank, same subarray, within the blast radius, and exactly one bit
/// changed.
pub fn flip_is_confined(
    geometry: &Geometry,
    blast_radius: u64,
    flip: &BitflipRecord,
    aggressor: &DramCoordinate,
) -> bool {
    flip.coord.bank_tuple() == aggressor.bank_tuple()
        && flip.coord.row != aggressor.row
        && flip.coord.row.abs_diff(aggressor.row) <= blast_radius
        && geometry.subarray_of(flip.coord.row) == geometry.subarray_of(aggressor.row)
        && (flip.old_value ^ flip.new_value) == 1 << flip.bit_index
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::addrmap::preset;

    fn simple() -> Translator {
        preset("simple", Geometry::DDR4_4GIB)
            .unwrap()
            .translator()
            .unwrap()
    }

    fn row(r: u64) -> DramCoordinate {
        DramCoordinate {
            row: r,
            ..Default::default()
        }
    }

    fn hammer(state: &mut SimState, t: &Translator, c: DramCoordinate, n: u64) {
        for _ in 0..n {
            state.activate_row(t, &c).unwrap();
        }
    }

    #[test]
    fn fresh_state() {
        let s = SimState::new(Geometry::DDR4_4GIB, HammerParams::default());
        assert_eq!(s.bank_count(), 8);
        assert_eq!(s.stats().accesses, 0);
        assert!(s.collect_flips().is_empty());
    }

    #[test]
    fn open_page_hits_and_conflicts() {
        let t = simple();
        let mut s = SimState::new(Geometry::DDR4_4GIB, HammerParams::default());
        let a = s.access(&t, 0x40, AccessKind::Read, None).unwrap();
        let b = s.access(&t, 0x40, AccessKind::Read, None).unwrap();
        assert!(!a.hit && b.hit);

        // rows 0 and 1 of bank 0: every access conflicts
        let mut s = SimState::new(Geometry::DDR4_4GIB, HammerParams::default());
        for i in 0..10 {
            let pa = if i % 2 == 0 { 0 } else { 0x8000 };
            assert!(!s.access(&t, pa, AccessKind::Read, None).unwrap().hit);
        }
        assert_eq!(s.stats().precharges, 9);

        // bank 0 and bank 1: only the first touch of each misses
        let mut s = SimState::new(Geometry::DDR4_4GIB, HammerParams::default());
        let hits: Vec<bool> = (0..6)
            .map(|i| {
                let pa = if i % 2 == 0 { 0 } else { 0x8000_0000 };
                s.access(&t, pa, AccessKind::Read, None).unwrap().hit
            })
            .collect();
        assert_eq!(hits, [false, false, true, true, true, true]);
        let st = s.stats();
        assert_eq!(st.accesses, st.row_buffer_hits + st.activations);
    }

    #[test]
    fn reads_see_writes() {
        let t = simple();
        let mut s = SimState::new(Geometry::DDR4_4GIB, HammerParams::default());
        s.access(&t, 0x1234, AccessKind::Write, Some(0x5a)).unwrap();
        assert_eq!(
            s.access(&t, 0x1234, AccessKind::Read, None).unwrap().value,
            0x5a
        );
        assert_eq!(
            s.access(&t, 0x1235, AccessKind::Read, None).unwrap().value,
            0
        );
        assert!(s.access(&t, 1 << 32, AccessKind::Read, None).is_err());
    }

    #[test]
    fn byte_accessors_have_no_side_effects() {
        let mut s = SimState::new(Geometry::DDR4_4GIB, HammerParams::default());
        s.write_byte(0x99, 7).unwrap();
        assert_eq!(s.read_byte(0x99).unwrap(), 7);
        assert_eq!(
            s.stats(),
            &Stats {
                bank_activations: vec![0; 8],
                ..Stats::default()
            }
        );
        assert!(s.read_byte(1 << 32).is_err());
        assert!(s.write_byte(1 << 32, 0).is_err());
    }

    #[test]
    fn threshold_is_strict() {
        let t = simple();
        let mut s = SimState::new(Geometry::DDR4_4GIB, HammerParams::deterministic(50_000));
        hammer(&mut s, &t, row(100), 50_000);
        assert!(s.collect_flips().is_empty());
        hammer(&mut s, &t, row(100), 1);
        let rows: Vec<u64> = s.collect_flips().iter().map(|f| f.coord.row).collect();
        assert_eq!(rows, [99, 101]);
        // latched for the rest of the window
        hammer(&mut s, &t, row(100), 1000);
        assert_eq!(s.collect_flips().len(), 2);
    }

    #[test]
    fn subarray_edges_stop_flips() {
        let t = simple();
        let mut s = SimState::new(Geometry::DDR4_4GIB, HammerParams::deterministic(100));
        hammer(&mut s, &t, row(511), 101);
        let rows: Vec<u64> = s.collect_flips().iter().map(|f| f.coord.row).collect();
        assert_eq!(rows, [510]);
        hammer(&mut s, &t, row(512), 101);
        let rows: Vec<u64> = s.collect_flips().iter().map(|f| f.coord.row).collect();
        assert_eq!(rows, [510, 513]);
        assert_eq!(s.victim_candidates(0), vec![1]);
        assert_eq!(s.victim_candidates(65535), vec![65534]);
    }

    #[test]
    fn refresh_resets_counters() {
        let t = simple();
        let mut s = SimState::new(Geometry::DDR4_4GIB, HammerParams::deterministic(50_000));
        hammer(&mut s, &t, row(7), 49_999);
        s.refresh();
        assert_eq!(s.activation_count(row(7).row_id()), 0);
        assert_eq!(s.open_row(&row(7)), Some(7));
        hammer(&mut s, &t, row(7), 49_999);
        assert!(s.collect_flips().is_empty());

        let mut s = SimState::new(Geometry::DDR4_4GIB, HammerParams::deterministic(50_000));
        hammer(&mut s, &t, row(7), 50_001);
        s.refresh();
        hammer(&mut s, &t, row(7), 50_001);
        assert_eq!(s.collect_flips().len(), 4);
        assert_eq!(s.stats().refresh_windows, 1);
    }

    #[test]
    fn refresh_on_fresh_state() {
        let mut s = SimState::new(Geometry::DDR4_4GIB, HammerParams::default());
        s.refresh();
        let mut expected = Stats {
            bank_activations: vec![0; 8],
            ..Stats::default()
        };
        expected.refresh_windows = 1;
        assert_eq!(s.stats(), &expected);
    }

    #[test]
    fn probability_one_flips_every_candidate() {
        let t = simple();
        let params = HammerParams {
            hc_first: 50_000,
            flip_probability: 1.0,
            ..HammerParams::default()
        };
        let mut s = SimState::new(Geometry::DDR4_4GIB, params);
        hammer(&mut s, &t, row(300), 50_001);
        assert_eq!(s.collect_flips().len(), 2);
        hammer(&mut s, &t, row(300), 1);
        assert_eq!(s.collect_flips().len(), 4);
    }

    #[test]
    fn deterministic_mode_ignores_seed() {
        let t = simple();
        let run = |seed| {
            let mut p = HammerParams::deterministic(10);
            p.rng_seed = seed;
            let mut s = SimState::new(Geometry::DDR4_4GIB, p);
            hammer(&mut s, &t, row(40), 11);
            s.collect_flips().to_vec()
        };
        assert_eq!(run(1), run(2));
    }

    #[test]
    fn equal_seeds_equal_flips() {
        let t = simple();
        let run = || {
            let p = HammerParams {
                hc_first: 10,
                flip_probability: 0.3,
                rng_seed: 42,
                ..HammerParams::default()
            };
            let mut s = SimState::new(Geometry::DDR4_4GIB, p);
            hammer(&mut s, &t, row(40), 200);
            s.collect_flips().to_vec()
        };
        let a = run();
        assert!(!a.is_empty());
        assert_eq!(a, run());
    }

    #[test]
    fn flip_records_match_translation() {
        let t = preset("bank-xor-noncontig-row", Geometry::DDR4_4GIB)
            .unwrap()
            .translator()
            .unwrap();
        let mut s = SimState::new(Geometry::DDR4_4GIB, HammerParams::deterministic(5));
        let aggressor = DramCoordinate {
            bank: 1,
            bankgroup: 2,
            row: 1000,
            ..Default::default()
        };
        hammer(&mut s, &t, aggressor, 6);
        for f in s.collect_flips() {
            assert_eq!(t.pa_to_coord(f.pa).unwrap(), f.coord);
            assert!(flip_is_confined(s.geometry(), 1, f, &aggressor));
            assert_eq!(s.read_byte(f.pa).unwrap(), f.new_value);
        }
    }

    #[test]
    fn params_validation() {
        assert!(HammerParams::default().check().is_ok());
        let bad = [
            HammerParams {
                hc_first: 0,
                ..HammerParams::default()
            },
            HammerParams {
                flip_probability: 0.0,
                ..HammerParams::default()
            },
            HammerParams {
                flip_probability: 1.5,
                ..HammerParams::default()
            },
            HammerParams {
                blast_radius: 0,
                ..HammerParams::default()
            },
        ];
        for p in bad {
            assert!(p.check().is_err());
        }
    }
}
