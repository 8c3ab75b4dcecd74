use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::geometry::Geometry;

/// Owner of a region of physical memory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Owner {
    Vm(u32),
    Unused,
    Hypervisor,
}

/// Result of looking up a physical address in a layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Classification {
    Owned(Owner),
    Unallocated,
}

impl fmt::Display for Owner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Owner::Vm(id) => write!(f, "vm{id}"),
            Owner::Unused => f.write_str("unused"),
            Owner::Hypervisor => f.write_str("hypervisor"),
        }
    }
}

impl FromStr for Owner {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "unused" => Ok(Owner::Unused),
            "hypervisor" => Ok(Owner::Hypervisor),
            other => other
                .strip_prefix("vm")
                .and_then(|n| n.parse().ok())
                .map(Owner::Vm)
                .ok_or_else(|| format!("unknown owner `{s}` (expected vmN, unused or hypervisor)")),
        }
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Classification::Owned(o) => o.fmt(f),
            Classification::Unallocated => f.write_str("unallocated"),
        }
    }
}

impl FromStr for Classification {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("unallocated") {
            Ok(Classification::Unallocated)
        } else {
            s.parse().map(Classification::Owned)
        }
    }
}

macro_rules! string_serde {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(Owner);
string_serde!(Classification);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub owner: Owner,
    #[serde(with = "crate::hex")]
    pub start_pa: u64,
    pub size: u64,
}

impl Region {
    pub fn new(owner: Owner, start_pa: u64, size: u64) -> Self {
        Self {
            owner,
            start_pa,
            size,
        }
    }

    pub fn end(&self) -> u64 {
        self.start_pa.saturating_add(self.size)
    }

    pub fn contains(&self, pa: u64) -> bool {
        pa >= self.start_pa && pa < self.end()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryLayout {
    pub regions: Vec<Region>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Overlap { first: usize, second: usize },
    OutOfBounds { region: usize },
    DuplicateOwner { owner: Owner },
    Misaligned { region: usize, granularity: u64 },
}

impl MemoryLayout {
    pub fn new(mut regions: Vec<Region>) -> Self {
        regions.sort_by_key(|r| (r.start_pa, r.size));
        Self { regions }
    }

    pub fn region_of(&self, owner: Owner) -> Option<&Region> {
        self.regions.iter().find(|r| r.owner == owner)
    }

    pub fn vm(&self, id: u32) -> Option<&Region> {
        self.region_of(Owner::Vm(id))
    }

    pub fn vm_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self
            .regions
            .iter()
            .filter_map(|r| match r.owner {
                Owner::Vm(id) => Some(id),
                _ => None,
            })
            .collect();
        ids.sort_unstable();
        ids
    }

    /// Owner of the region containing `pa`. With overlapping regions (an
    /// invalid layout) the first match in region order wins.
    pub fn classify_pa(&self, pa: u64) -> Classification {
        self.regions
            .iter()
            .find(|r| r.contains(pa))
            .map_or(Classification::Unallocated, |r| {
                Classification::Owned(r.owner)
            })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("layout serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Structural problems of `layout` on `geometry`. Regions must be aligned to
/// one row of one bank (`geometry.columns` bytes), lie inside the device, not
/// overlap, and each VM may own only one region.
pub fn check_layout(layout: &MemoryLayout, geometry: &Geometry) -> Vec<Violation> {
    let mut out = Vec::new();
    let total = geometry.total_bytes();
    let gran = geometry.row_bytes();
    for (i, r) in layout.regions.iter().enumerate() {
        if r.start_pa.checked_add(r.size).is_none_or(|e| e > total) {
            out.push(Violation::OutOfBounds { region: i });
        }
        if r.start_pa % gran != 0 || r.size % gran != 0 {
            out.push(Violation::Misaligned {
                region: i,
                granularity: gran,
            });
        }
    }
    for i in 0..layout.regions.len() {
        for j in i + 1..layout.regions.len() {
            let (a, b) = (&layout.regions[i], &layout.regions[j]);
            if a.size > 0 && b.size > 0 && a.start_pa < b.end() && b.start_pa < a.end() {
                out.push(Violation::Overlap {
                    first: i,
                    second: j,
                });
            }
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    for r in &layout.regions {
        if let Owner::Vm(_) = r.owner {
            if !seen.insert(r.owner) {
                out.push(Violation::DuplicateOwner { owner: r.owner });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIB: u64 = 1 << 20;

    #[test]
    fn two_512mib_vms_are_valid() {
        let l = MemoryLayout::new(vec![
            Region::new(Owner::Vm(0), 0, 512 * MIB),
            Region::new(Owner::Vm(1), 0x2000_0000, 512 * MIB),
        ]);
        assert!(check_layout(&l, &Geometry::DDR4_4GIB).is_empty());
    }

    #[test]
    fn overlap_bounds_alignment_duplicates() {
        let g = Geometry::DDR4_4GIB;
        let l = MemoryLayout::new(vec![
            Region::new(Owner::Vm(0), 0, 4096 * MIB),
            Region::new(Owner::Vm(1), 0x1000_0000, MIB),
        ]);
        assert_eq!(
            check_layout(&l, &g),
            vec![Violation::Overlap {
                first: 0,
                second: 1
            }]
        );

        let l = MemoryLayout::new(vec![Region::new(Owner::Vm(0), 0x100, 32 * 1024)]);
        assert_eq!(
            check_layout(&l, &g),
            vec![Violation::Misaligned {
                region: 0,
                granularity: 8192
            }]
        );

        let l = MemoryLayout::new(vec![Region::new(Owner::Vm(0), 0xffff_e000, 0x4000)]);
        assert_eq!(
            check_layout(&l, &g),
            vec![Violation::OutOfBounds { region: 0 }]
        );

        let l = MemoryLayout::new(vec![
            Region::new(Owner::Vm(3), 0, MIB),
            Region::new(Owner::Vm(3), MIB, MIB),
        ]);
        assert_eq!(
            check_layout(&l, &g),
            vec![Violation::DuplicateOwner {
                owner: Owner::Vm(3)
            }]
        );
    }

    #[test]
    fn classify() {
        let l = MemoryLayout::new(vec![
            Region::new(Owner::Vm(0), 0, MIB),
            Region::new(Owner::Unused, MIB, 8192),
            Region::new(Owner::Vm(1), MIB + 8192, MIB),
        ]);
        assert_eq!(l.classify_pa(5), Classification::Owned(Owner::Vm(0)));
        assert_eq!(
            l.classify_pa(MIB + 100),
            Classification::Owned(Owner::Unused)
        );
        assert_eq!(l.classify_pa(64 * MIB), Classification::Unallocated);
    }

    #[test]
    fn json_format() {
        let l = MemoryLayout::new(vec![
            Region::new(Owner::Vm(0), 0, 16 * MIB),
            Region::new(Owner::Hypervisor, 0xf000_0000, MIB),
        ]);
        let text = l.to_json();
        assert!(text.contains("\"start_pa\": \"0xf0000000\""));
        assert!(text.contains("\"owner\": \"hypervisor\""));
        assert_eq!(MemoryLayout::from_json(&text).unwrap(), l);
        let parsed = MemoryLayout::from_json(
            r#"{"regions":[{"owner":"VM2","start_pa":"0x2000","size":8192}]}"#,
        )
        .unwrap();
        assert_eq!(parsed.vm(2).unwrap().start_pa, 0x2000);
        assert!(MemoryLayout::from_json(
            r#"{"regions":[{"owner":"guest","start_pa":"0","size":1}]}"#
        )
        .is_err());
    }
}
