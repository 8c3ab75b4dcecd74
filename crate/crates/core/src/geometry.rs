//! DRAM dimensions and coordinates.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::MapError;

/// Widest physical address the simulator accepts.
pub const MAX_ADDRESS_WIDTH: u32 = 63;

/// The coordinate kinds, in the order their bits are concatenated into a
/// coordinate vector (and into the rows of the validation matrix).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordKind {
    Channel,
    Rank,
    #[serde(rename = "bankgroup")]
    BankGroup,
    Bank,
    Row,
    Column,
}

impl CoordKind {
    pub const ALL: [CoordKind; 6] = [
        CoordKind::Channel,
        CoordKind::Rank,
        CoordKind::BankGroup,
        CoordKind::Bank,
        CoordKind::Row,
        CoordKind::Column,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CoordKind::Channel => "channel",
            CoordKind::Rank => "rank",
            CoordKind::BankGroup => "bankgroup",
            CoordKind::Bank => "bank",
            CoordKind::Row => "row",
            CoordKind::Column => "column",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for CoordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// DRAM dimensions. `columns` counts bytes per row per bank.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub channels: u64,
    pub ranks: u64,
    pub bankgroups: u64,
    pub banks: u64,
    pub rows: u64,
    pub columns: u64,
    pub rows_per_subarray: u64,
}

impl Geometry {
    /// DDR4 4 GiB module: 1 channel, 1 rank, 4 bank groups of 2 banks,
    /// 65536 rows of 8 KiB, split into 128 subarrays of 512 rows.
    pub const DDR4_4GIB: Geometry = Geometry {
        channels: 1,
        ranks: 1,
        bankgroups: 4,
        banks: 2,
        rows: 65536,
        columns: 8192,
        rows_per_subarray: 512,
    };

    pub fn check(&self) -> Result<(), MapError> {
        let fields = [
            ("channels", self.channels),
            ("ranks", self.ranks),
            ("bankgroups", self.bankgroups),
            ("banks", self.banks),
            ("rows", self.rows),
            ("columns", self.columns),
            ("rows_per_subarray", self.rows_per_subarray),
        ];
        for (name, v) in fields {
            if v == 0 || !v.is_power_of_two() {
                return Err(MapError::Geometry(format!(
                    "{name} = {v} is not a positive power of two"
                )));
            }
        }
        if self.rows_per_subarray > self.rows {
            return Err(MapError::Geometry(format!(
                "rows_per_subarray = {} exceeds rows = {}",
                self.rows_per_subarray, self.rows
            )));
        }
        let width: u32 = CoordKind::ALL.iter().map(|&k| self.width(k)).sum();
        if width > MAX_ADDRESS_WIDTH {
            return Err(MapError::Geometry(format!(
                "address width {width} exceeds {MAX_ADDRESS_WIDTH} bits"
            )));
        }
        Ok(())
    }

    pub fn extent(&self, kind: CoordKind) -> u64 {
        match kind {
            CoordKind::Channel => self.channels,
            CoordKind::Rank => self.ranks,
            CoordKind::BankGroup => self.bankgroups,
            CoordKind::Bank => self.banks,
            CoordKind::Row => self.rows,
            CoordKind::Column => self.columns,
        }
    }

    /// Number of coordinate bits for `kind`.
    pub fn width(&self, kind: CoordKind) -> u32 {
        self.extent(kind).trailing_zeros()
    }

    /// Bit offset of `kind` inside a coordinate vector.
    pub fn offset(&self, kind: CoordKind) -> u32 {
        CoordKind::ALL[..kind.index()]
            .iter()
            .map(|&k| self.width(k))
            .sum()
    }

    pub fn address_width(&self) -> u32 {
        CoordKind::ALL.iter().map(|&k| self.width(k)).sum()
    }

    pub fn total_bytes(&self) -> u64 {
        1u64 << self.address_width()
    }

    pub fn subarray_count(&self) -> u64 {
        self.rows / self.rows_per_subarray
    }

    pub fn subarray_of(&self, row: u64) -> u64 {
        row / self.rows_per_subarray
    }

    pub fn bank_count(&self) -> u64 {
        self.channels * self.ranks * self.bankgroups * self.banks
    }

    /// Bytes of one row in one bank.
    pub fn row_bytes(&self) -> u64 {
        self.columns
    }

    pub fn bank_index(&self, bank: BankTuple) -> usize {
        (((bank.channel * self.ranks + bank.rank) * self.bankgroups + bank.bankgroup) * self.banks
            + bank.bank) as usize
    }

    pub fn bank_tuple(&self, index: usize) -> BankTuple {
        let mut i = index as u64;
        let bank = i % self.banks;
        i /= self.banks;
        let bankgroup = i % self.bankgroups;
        i /= self.bankgroups;
        let rank = i % self.ranks;
        i /= self.ranks;
        BankTuple {
            channel: i,
            rank,
            bankgroup,
            bank,
        }
    }

    pub fn check_coord(&self, coord: &DramCoordinate) -> Result<(), MapError> {
        for kind in CoordKind::ALL {
            let v = coord.get(kind);
            let extent = self.extent(kind);
            if v >= extent {
                return Err(MapError::CoordOutOfRange {
                    field: kind,
                    value: v,
                    extent,
                });
            }
        }
        Ok(())
    }
}

/// Location of a bank: everything in a coordinate above the row.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct BankTuple {
    pub channel: u64,
    pub rank: u64,
    pub bankgroup: u64,
    pub bank: u64,
}

/// One row of one bank.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RowId {
    #[serde(flatten)]
    pub bank: BankTuple,
    pub row: u64,
}

impl RowId {
    pub fn at_column(self, column: u64) -> DramCoordinate {
        DramCoordinate {
            channel: self.bank.channel,
            rank: self.bank.rank,
            bankgroup: self.bank.bankgroup,
            bank: self.bank.bank,
            row: self.row,
            column,
        }
    }
}

impl fmt::Display for RowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ch{}/rk{}/bg{}/ba{}/row{}",
            self.bank.channel, self.bank.rank, self.bank.bankgroup, self.bank.bank, self.row
        )
    }
}

/// Location of one byte inside the DRAM hierarchy.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct DramCoordinate {
    pub channel: u64,
    pub rank: u64,
    pub bankgroup: u64,
    pub bank: u64,
    pub row: u64,
    pub column: u64,
}

impl DramCoordinate {
    pub fn get(&self, kind: CoordKind) -> u64 {
        match kind {
            CoordKind::Channel => self.channel,
            CoordKind::Rank => self.rank,
            CoordKind::BankGroup => self.bankgroup,
            CoordKind::Bank => self.bank,
            CoordKind::Row => self.row,
            CoordKind::Column => self.column,
        }
    }

    pub fn set(&mut self, kind: CoordKind, value: u64) {
        match kind {
            CoordKind::Channel => self.channel = value,
            CoordKind::Rank => self.rank = value,
            CoordKind::BankGroup => self.bankgroup = value,
            CoordKind::Bank => self.bank = value,
            CoordKind::Row => self.row = value,
            CoordKind::Column => self.column = value,
        }
    }

    pub fn bank_tuple(&self) -> BankTuple {
        BankTuple {
            channel: self.channel,
            rank: self.rank,
            bankgroup: self.bankgroup,
            bank: self.bank,
        }
    }

    pub fn row_id(&self) -> RowId {
        RowId {
            bank: self.bank_tuple(),
            row: self.row,
        }
    }

    pub fn subarray(&self, geometry: &Geometry) -> u64 {
        geometry.subarray_of(self.row)
    }

    pub fn row_in_subarray(&self, geometry: &Geometry) -> u64 {
        self.row % geometry.rows_per_subarray
    }
}

impl fmt::Display for DramCoordinate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ch{}/rk{}/bg{}/ba{}/row{}/col{:#x}",
            self.channel, self.rank, self.bankgroup, self.bank, self.row, self.column
        )
    }
}
