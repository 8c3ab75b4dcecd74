//! Static VM memory layouts and mitigation-aware placement.
//!
//! VMs get one contiguous physical range each (guest PA == host PA). The
//! planners search ascending start addresses, in steps of one row of one
//! bank, and take the lowest start whose DRAM footprint satisfies the
//! mitigation's isolation rule against every VM placed before it:
//!
//! * Siloz: no (bank, subarray) pair shared with an earlier VM.
//! * Citadel: no row within `guard_global_rows` of an earlier VM's row in the
//!   same bank. The skipped addresses between consecutive VMs become an
//!   `unused` region holding the guard rows.

mod footprint;
mod layout;

pub use footprint::{aligned_blocks, KeySpace};
pub use layout::{check_layout, Classification, MemoryLayout, Owner, Region, Violation};

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::addrmap::Translator;
use crate::dram::victim_rows;
use crate::error::PlanError;
use crate::geometry::{BankTuple, CoordKind, Geometry, RowId};

/// DRAM rows and (bank, subarray) pairs touched by a region.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RowFootprint {
    pub rows: BTreeSet<RowId>,
    pub subarrays: BTreeSet<(BankTuple, u64)>,
}

fn row_key_mask(t: &Translator) -> u64 {
    let width = t.geometry().address_width();
    ((1u64 << width) - 1) & !t.field_mask(CoordKind::Column)
}

fn subarray_key_mask(t: &Translator) -> u64 {
    let g = t.geometry();
    let low_row_bits = g.rows_per_subarray.trailing_zeros();
    let row_low = ((1u64 << low_row_bits) - 1) << g.offset(CoordKind::Row);
    row_key_mask(t) & !row_low
}

fn key_to_row(t: &Translator, key: u64) -> RowId {
    t.decode(key).row_id()
}

/// Exact footprint of `region`: the row of every byte in it.
pub fn row_footprint(t: &Translator, region: &Region) -> RowFootprint {
    let ks = KeySpace::new(t, row_key_mask(t));
    let g = t.geometry();
    let rows: BTreeSet<RowId> = ks
        .range_keys(region.start_pa, region.end())
        .map(|k| key_to_row(t, k))
        .collect();
    let subarrays = rows
        .iter()
        .map(|r| (r.bank, g.subarray_of(r.row)))
        .collect();
    RowFootprint { rows, subarrays }
}

fn check_sizes(g: &Geometry, vm_sizes: &[u64]) -> Result<(), PlanError> {
    if vm_sizes.is_empty() {
        return Err(PlanError::Invalid("no VM sizes given".into()));
    }
    for (i, &s) in vm_sizes.iter().enumerate() {
        if s == 0 || s % g.row_bytes() != 0 {
            return Err(PlanError::Invalid(format!(
                "vm{i} size {s:#x} is not a positive multiple of the row size {:#x}",
                g.row_bytes()
            )));
        }
        if s > g.total_bytes() {
            return Err(PlanError::Infeasible {
                vm: i as u32,
                size: s,
                reason: "larger than the device".into(),
            });
        }
    }
    Ok(())
}

/// Back-to-back placement from PA 0 with no isolation.
pub fn pack_contiguous(g: &Geometry, vm_sizes: &[u64]) -> Result<MemoryLayout, PlanError> {
    check_sizes(g, vm_sizes)?;
    let mut start = 0u64;
    let mut regions = Vec::new();
    for (i, &size) in vm_sizes.iter().enumerate() {
        if start + size > g.total_bytes() {
            return Err(PlanError::Infeasible {
                vm: i as u32,
                size,
                reason: format!("only {:#x} bytes left", g.total_bytes() - start),
            });
        }
        regions.push(Region::new(Owner::Vm(i as u32), start, size));
        start += size;
    }
    Ok(MemoryLayout::new(regions))
}

/// Lowest row-aligned start `>= from` such that no key of `[start, start+size)`
/// is forbidden. On failure returns the last forbidden key encountered.
fn place(
    ks: &KeySpace,
    g: &Geometry,
    from: u64,
    size: u64,
    forbidden: &HashSet<u64>,
) -> Result<u64, Option<u64>> {
    let unit = g.row_bytes();
    let unit_log = unit.trailing_zeros();
    let mut start = from.div_ceil(unit) * unit;
    let mut last_key = None;
    let hit = |k: u64| forbidden.contains(&k);
    while start + size <= g.total_bytes() {
        match ks.first_hit(start, start + size, unit_log, &hit) {
            None => return Ok(start),
            Some(p) => {
                last_key = ks
                    .block_keys(p, unit_log)
                    .into_iter()
                    .find(|k| forbidden.contains(k));
                start = p + unit;
            }
        }
    }
    Err(last_key)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SilozAssignment {
    pub vm: u32,
    /// Subarray indices (subarray groups) the VM touches.
    pub subarray_groups: Vec<u64>,
    /// Whether the VM lies inside a single subarray group.
    pub contained: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SilozPlan {
    pub layout: MemoryLayout,
    pub assignments: Vec<SilozAssignment>,
}

/// Places VMs so that no two share a (bank, subarray) pair.
pub fn plan_siloz(t: &Translator, vm_sizes: &[u64]) -> Result<SilozPlan, PlanError> {
    let g = *t.geometry();
    check_sizes(&g, vm_sizes)?;
    let ks = KeySpace::new(t, subarray_key_mask(t));
    let group_bytes = g.total_bytes() / g.subarray_count();
    let mut taken: HashSet<u64> = HashSet::new();
    let mut regions = Vec::new();
    let mut assignments = Vec::new();
    let mut next = 0u64;
    for (i, &size) in vm_sizes.iter().enumerate() {
        let start = place(&ks, &g, next, size, &taken).map_err(|_| PlanError::Infeasible {
            vm: i as u32,
            size,
            reason: format!(
                "every contiguous range shares a (bank, subarray) pair with an earlier VM; \
                 subarray groups hold {group_bytes:#x} bytes"
            ),
        })?;
        let region = Region::new(Owner::Vm(i as u32), start, size);
        let keys: BTreeSet<u64> = ks.range_keys(start, start + size).collect();
        let groups: BTreeSet<u64> = keys
            .iter()
            .map(|&k| g.subarray_of(key_to_row(t, k).row))
            .collect();
        taken.extend(keys);
        assignments.push(SilozAssignment {
            vm: i as u32,
            contained: groups.len() == 1,
            subarray_groups: groups.into_iter().collect(),
        });
        regions.push(region);
        next = start + size;
    }
    Ok(SilozPlan {
        layout: MemoryLayout::new(regions),
        assignments,
    })
}

/// Places VMs so that rows of different VMs in the same bank are more than
/// `guard_global_rows` apart; the gaps become `unused` regions.
pub fn plan_citadel(
    t: &Translator,
    vm_sizes: &[u64],
    guard_global_rows: u64,
) -> Result<MemoryLayout, PlanError> {
    if guard_global_rows == 0 {
        return Err(PlanError::Invalid(
            "guard_global_rows must be at least 1".into(),
        ));
    }
    let g = *t.geometry();
    check_sizes(&g, vm_sizes)?;
    let ks = KeySpace::new(t, row_key_mask(t));
    let row_off = g.offset(CoordKind::Row);
    let row_field = t.field_mask(CoordKind::Row);
    let mut forbidden: HashSet<u64> = HashSet::new();
    let mut regions = Vec::new();
    let mut next = 0u64;
    for (i, &size) in vm_sizes.iter().enumerate() {
        let start = place(&ks, &g, next, size, &forbidden).map_err(|key| {
            let row = key.map(|k| key_to_row(t, k));
            PlanError::Infeasible {
                vm: i as u32,
                size,
                reason: match row {
                    Some(r) => {
                        format!("guard rows cannot be separated in PA space (blocked at {r})")
                    }
                    None => "not enough memory left".into(),
                },
            }
        })?;
        if i > 0 && start > next {
            regions.push(Region::new(Owner::Unused, next, start - next));
        }
        regions.push(Region::new(Owner::Vm(i as u32), start, size));
        let keys: HashSet<u64> = ks.range_keys(start, start + size).collect();
        for k in keys {
            let row = (k & row_field) >> row_off;
            let lo = row.saturating_sub(guard_global_rows);
            let hi = (row + guard_global_rows).min(g.rows - 1);
            for r in lo..=hi {
                forbidden.insert((k & !row_field) | r << row_off);
            }
        }
        next = start + size;
    }
    Ok(MemoryLayout::new(regions))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Aggressor {
    /// An attacker-owned PA in the aggressor row (column 0 when owned).
    #[serde(with = "crate::hex")]
    pub pa: u64,
    pub row: RowId,
    /// Victim-owned rows in reach, same bank and subarray.
    pub victim_rows: Vec<u64>,
}

fn vm_region(layout: &MemoryLayout, vm: u32) -> Result<&Region, PlanError> {
    layout
        .vm(vm)
        .ok_or_else(|| PlanError::Invalid(format!("vm{vm} not in layout")))
}

/// Lowest PA inside `region` that lies in `row`.
pub fn representative_pa(t: &Translator, region: &Region, row: RowId) -> Option<u64> {
    (0..t.geometry().columns)
        .map(|c| t.vec_to_pa(t.encode(&row.at_column(c))))
        .filter(|&pa| region.contains(pa))
        .min()
}

/// Every attacker row with at least one victim row within `blast_radius` in
/// the same bank and subarray, in row order.
pub fn find_aggressors(
    t: &Translator,
    layout: &MemoryLayout,
    attacker_vm: u32,
    victim_vm: u32,
    blast_radius: u64,
) -> Result<Vec<Aggressor>, PlanError> {
    let attacker = vm_region(layout, attacker_vm)?;
    let victim = vm_region(layout, victim_vm)?;
    let g = t.geometry();
    let a = row_footprint(t, attacker);
    let v: HashSet<RowId> = row_footprint(t, victim).rows.into_iter().collect();
    let mut out = Vec::new();
    for row in a.rows {
        let hits: Vec<u64> = victim_rows(g, row.row, blast_radius)
            .into_iter()
            .filter(|&r| {
                v.contains(&RowId {
                    bank: row.bank,
                    row: r,
                })
            })
            .collect();
        if hits.is_empty() {
            continue;
        }
        let mut hits = hits;
        hits.sort_unstable();
        let pa = representative_pa(t, attacker, row).expect("footprint row has an owned byte");
        out.push(Aggressor {
            pa,
            row,
            victim_rows: hits,
        });
    }
    Ok(out)
}

/// Attacker rows closest (in row index, same bank) to the victim, preferring
/// rows that share a subarray with a victim row. Used to hammer the boundary
/// when no aggressor can reach the victim.
pub fn boundary_rows(
    t: &Translator,
    layout: &MemoryLayout,
    attacker_vm: u32,
    victim_vm: u32,
) -> Result<Vec<Aggressor>, PlanError> {
    let attacker = vm_region(layout, attacker_vm)?;
    let victim = vm_region(layout, victim_vm)?;
    let g = t.geometry();
    let a = row_footprint(t, attacker);
    let mut victim_by_bank: BTreeMap<BankTuple, BTreeSet<u64>> = BTreeMap::new();
    for r in row_footprint(t, victim).rows {
        victim_by_bank.entry(r.bank).or_default().insert(r.row);
    }
    // rank = (no shared bank, different subarray, distance)
    let mut best: Option<(bool, bool, u64)> = None;
    let mut chosen = Vec::new();
    for row in a.rows {
        let rank = match victim_by_bank.get(&row.bank) {
            None => (true, true, u64::MAX),
            Some(rows) => {
                let below = rows.range(..row.row).next_back().copied();
                let above = rows.range(row.row..).next().copied();
                let nearest = [below, above]
                    .into_iter()
                    .flatten()
                    .min_by_key(|&r| (r.abs_diff(row.row), r))
                    .expect("non-empty");
                let same_sub = [below, above]
                    .into_iter()
                    .flatten()
                    .any(|r| g.subarray_of(r) == g.subarray_of(row.row));
                (false, !same_sub, nearest.abs_diff(row.row))
            }
        };
        match best {
            Some(b) if rank > b => {}
            Some(b) if rank == b => chosen.push(row),
            _ => {
                best = Some(rank);
                chosen = vec![row];
            }
        }
    }
    Ok(chosen
        .into_iter()
        .map(|row| Aggressor {
            pa: representative_pa(t, attacker, row).expect("footprint row has an owned byte"),
            row,
            victim_rows: Vec::new(),
        })
        .collect())
}
