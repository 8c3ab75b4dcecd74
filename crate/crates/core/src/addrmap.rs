//! DRAM address mappings as GF(2)-linear maps from physical-address bits to
//! coordinate bits.
//!
//! Each coordinate bit is the XOR of a set of physical address bits. Stacking
//! every output bit (channel, rank, bank group, bank, row, column; least
//! significant bit first within each) gives a square matrix over GF(2); the
//! mapping is a bijection exactly when that matrix has full rank, and its
//! inverse translates coordinates back to addresses.

use serde::{Deserialize, Serialize};

use crate::error::MapError;
use crate::geometry::{CoordKind, DramCoordinate, Geometry};
use crate::gf2::BitMatrix;

/// Per-coordinate output-bit definitions. Each `u64` is the XOR mask of the
/// physical address bits feeding one output bit, least significant first.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AddressMapping {
    geometry: Geometry,
    functions: [Vec<u64>; 6],
}

/// On-disk shape of a mapping file.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MappingFile {
    geometry: Geometry,
    functions: FunctionsFile,
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FunctionsFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    channel: Option<Vec<Vec<u32>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rank: Option<Vec<Vec<u32>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bankgroup: Option<Vec<Vec<u32>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bank: Option<Vec<Vec<u32>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    row: Option<Vec<Vec<u32>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    column: Option<Vec<Vec<u32>>>,
}

impl FunctionsFile {
    fn slot(&mut self, kind: CoordKind) -> &mut Option<Vec<Vec<u32>>> {
        match kind {
            CoordKind::Channel => &mut self.channel,
            CoordKind::Rank => &mut self.rank,
            CoordKind::BankGroup => &mut self.bankgroup,
            CoordKind::Bank => &mut self.bank,
            CoordKind::Row => &mut self.row,
            CoordKind::Column => &mut self.column,
        }
    }
}

fn bits_of(mask: u64) -> Vec<u32> {
    (0..64).filter(|b| mask >> b & 1 == 1).collect()
}

impl AddressMapping {
    /// Builds a mapping from bit-index sets, enforcing the structural rules:
    /// power-of-two geometry, one output bit per coordinate bit, non-empty XOR
    /// sets, indices below the address width. Invertibility is not checked.
    pub fn new(
        geometry: Geometry,
        functions: &[(CoordKind, Vec<Vec<u32>>)],
    ) -> Result<Self, MapError> {
        geometry.check()?;
        let width = geometry.address_width();
        let mut masks: [Option<Vec<u64>>; 6] = Default::default();
        for (kind, bits) in functions {
            let slot = &mut masks[kind.index()];
            if slot.is_some() {
                return Err(MapError::Structure {
                    coordinate: kind.to_string(),
                    message: "defined more than once".into(),
                });
            }
            let mut out = Vec::with_capacity(bits.len());
            for (i, set) in bits.iter().enumerate() {
                if set.is_empty() {
                    return Err(MapError::Structure {
                        coordinate: kind.to_string(),
                        message: format!("output bit {i} has an empty XOR set"),
                    });
                }
                let mut mask = 0u64;
                for &b in set {
                    if b >= width {
                        return Err(MapError::Structure {
                            coordinate: kind.to_string(),
                            message: format!(
                                "output bit {i} uses PA bit {b}, address width is {width}"
                            ),
                        });
                    }
                    if mask >> b & 1 == 1 {
                        return Err(MapError::Structure {
                            coordinate: kind.to_string(),
                            message: format!("output bit {i} lists PA bit {b} twice"),
                        });
                    }
                    mask |= 1 << b;
                }
                out.push(mask);
            }
            *slot = Some(out);
        }
        let mut result: [Vec<u64>; 6] = Default::default();
        for kind in CoordKind::ALL {
            let expected = geometry.width(kind) as usize;
            let got = masks[kind.index()].take().unwrap_or_default();
            if got.len() != expected {
                return Err(MapError::Structure {
                    coordinate: kind.to_string(),
                    message: format!(
                        "expected {expected} output bits for extent {}, found {}",
                        geometry.extent(kind),
                        got.len()
                    ),
                });
            }
            result[kind.index()] = got;
        }
        Ok(Self {
            geometry,
            functions: result,
        })
    }

    /// Parses a JSON mapping file. Structural errors are reported; whether the
    /// mapping is invertible is left to [`AddressMapping::validate`].
    pub fn parse(text: &str) -> Result<Self, MapError> {
        let file: MappingFile = serde_json::from_str(text).map_err(|e| MapError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Self::from_file(file)
    }

    fn from_file(file: MappingFile) -> Result<Self, MapError> {
        let mut functions = file.functions;
        let parts: Vec<_> = CoordKind::ALL
            .into_iter()
            .filter_map(|k| functions.slot(k).take().map(|v| (k, v)))
            .collect();
        Self::new(file.geometry, &parts)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("mapping serializes")
    }

    fn to_file(&self) -> MappingFile {
        let mut functions = FunctionsFile::default();
        for kind in CoordKind::ALL {
            let list = &self.functions[kind.index()];
            if !list.is_empty() {
                *functions.slot(kind) = Some(list.iter().map(|&m| bits_of(m)).collect());
            }
        }
        MappingFile {
            geometry: self.geometry,
            functions,
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    /// XOR masks of the output bits of `kind`, least significant first.
    pub fn function(&self, kind: CoordKind) -> &[u64] {
        &self.functions[kind.index()]
    }

    /// The same as [`AddressMapping::function`], as PA bit index sets.
    pub fn function_bits(&self, kind: CoordKind) -> Vec<Vec<u32>> {
        self.function(kind).iter().map(|&m| bits_of(m)).collect()
    }

    /// All output-bit masks in matrix order.
    pub fn output_masks(&self) -> Vec<u64> {
        CoordKind::ALL
            .iter()
            .flat_map(|k| self.functions[k.index()].iter().copied())
            .collect()
    }

    /// Names the matrix row `index` (in the fixed concatenation order).
    pub fn output_bit(&self, index: usize) -> OutputBit {
        let mut rest = index;
        for kind in CoordKind::ALL {
            let n = self.functions[kind.index()].len();
            if rest < n {
                return OutputBit {
                    coordinate: kind,
                    bit: rest as u32,
                };
            }
            rest -= n;
        }
        panic!("output bit {index} out of range")
    }

    pub fn validate(&self) -> ValidationReport {
        let width = self.geometry.address_width();
        let masks = self.output_masks();
        let output_bits = masks.len() as u32;
        if output_bits != width {
            return ValidationReport {
                valid: false,
                address_width: width,
                output_bits,
                rank: None,
                witness: None,
                inverse: None,
                error: Some(
                    MapError::WidthMismatch {
                        expected: width,
                        found: output_bits,
                    }
                    .to_string(),
                ),
            };
        }
        let matrix = BitMatrix::new(masks, width as usize);
        let elim = matrix.eliminate();
        let witness = elim.dependency.map(|dep| {
            (0..64)
                .filter(|i| dep >> i & 1 == 1)
                .map(|i| self.output_bit(i))
                .collect()
        });
        let inverse = if elim.rank == width as usize {
            matrix.inverse().map(|m| m.rows().to_vec())
        } else {
            None
        };
        ValidationReport {
            valid: inverse.is_some(),
            address_width: width,
            output_bits,
            rank: Some(elim.rank),
            witness,
            inverse,
            error: None,
        }
    }

    /// Validates and returns a translator, or the reason it cannot be built.
    pub fn translator(&self) -> Result<Translator, MapError> {
        Translator::new(self.clone())
    }
}

impl Serialize for AddressMapping {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_file().serialize(s)
    }
}

impl<'de> Deserialize<'de> for AddressMapping {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let file = MappingFile::deserialize(d)?;
        Self::from_file(file).map_err(serde::de::Error::custom)
    }
}

/// One output bit of a mapping, e.g. bank bit 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputBit {
    pub coordinate: CoordKind,
    pub bit: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub address_width: u32,
    pub output_bits: u32,
    /// Absent when the width check failed before elimination.
    pub rank: Option<usize>,
    /// Output bits whose XOR is identically zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Vec<OutputBit>>,
    /// Row `j` selects the coordinate-vector bits whose XOR is PA bit `j`.
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        with = "crate::hex::option_vec"
    )]
    pub inverse: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// A validated mapping with its forward and inverse matrices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Translator {
    mapping: AddressMapping,
    forward: BitMatrix,
    inverse: BitMatrix,
}

impl Translator {
    pub fn new(mapping: AddressMapping) -> Result<Self, MapError> {
        let width = mapping.geometry.address_width();
        let masks = mapping.output_masks();
        if masks.len() as u32 != width {
            return Err(MapError::WidthMismatch {
                expected: width,
                found: masks.len() as u32,
            });
        }
        let forward = BitMatrix::new(masks, width as usize);
        let inverse = forward.inverse().ok_or(MapError::Singular {
            rank: forward.rank(),
            width,
        })?;
        Ok(Self {
            mapping,
            forward,
            inverse,
        })
    }

    pub fn mapping(&self) -> &AddressMapping {
        &self.mapping
    }

    pub fn geometry(&self) -> &Geometry {
        &self.mapping.geometry
    }

    pub fn inverse_matrix(&self) -> &BitMatrix {
        &self.inverse
    }

    /// Coordinate vector of `pa` (bits concatenated in matrix order). No range
    /// check.
    #[inline]
    pub fn pa_to_vec(&self, pa: u64) -> u64 {
        self.forward.mul_vec(pa)
    }

    #[inline]
    pub fn vec_to_pa(&self, v: u64) -> u64 {
        self.inverse.mul_vec(v)
    }

    pub fn decode(&self, v: u64) -> DramCoordinate {
        let g = &self.mapping.geometry;
        let mut c = DramCoordinate::default();
        for kind in CoordKind::ALL {
            let w = g.width(kind);
            let field = (v >> g.offset(kind)) & ((1u64 << w) - 1);
            c.set(kind, field);
        }
        c
    }

    pub fn encode(&self, c: &DramCoordinate) -> u64 {
        let g = &self.mapping.geometry;
        CoordKind::ALL
            .iter()
            .fold(0, |v, &k| v | c.get(k) << g.offset(k))
    }

    pub fn pa_to_coord(&self, pa: u64) -> Result<DramCoordinate, MapError> {
        let total = self.mapping.geometry.total_bytes();
        if pa >= total {
            return Err(MapError::PaOutOfRange { pa, total });
        }
        Ok(self.decode(self.pa_to_vec(pa)))
    }

    pub fn coord_to_pa(&self, coord: &DramCoordinate) -> Result<u64, MapError> {
        self.mapping.geometry.check_coord(coord)?;
        Ok(self.vec_to_pa(self.encode(coord)))
    }

    /// Mask of coordinate-vector bits belonging to `kind`.
    pub fn field_mask(&self, kind: CoordKind) -> u64 {
        let g = &self.mapping.geometry;
        ((1u64 << g.width(kind)) - 1) << g.offset(kind)
    }
}

/// Names of the built-in mappings, in presentation order.
pub const PRESET_NAMES: [&str; 3] = ["simple", "bank-xor", "bank-xor-noncontig-row"];

fn singles(bits: impl IntoIterator<Item = u32>) -> Vec<Vec<u32>> {
    bits.into_iter().map(|b| vec![b]).collect()
}

/// Builds one of the reference mappings for a geometry with a 13-bit column,
/// 2-bit bank group, 1-bit bank and 16-bit row field (and no channel or rank
/// bits). Column and bank group are always `x12..0` and `x14,13`.
///
/// * `simple`: bank = x31, row = x30..15
/// * `bank-xor`: bank = x31 ^ x6, row = x30..15
/// * `bank-xor-noncontig-row`: bank = x21 ^ x6, row = x31..22,20..15
pub fn preset(name: &str, geometry: Geometry) -> Result<AddressMapping, MapError> {
    geometry.check()?;
    let expect = [
        (CoordKind::Channel, 0),
        (CoordKind::Rank, 0),
        (CoordKind::BankGroup, 2),
        (CoordKind::Bank, 1),
        (CoordKind::Row, 16),
        (CoordKind::Column, 13),
    ];
    for (kind, w) in expect {
        if geometry.width(kind) != w {
            return Err(MapError::PresetGeometry(format!(
                "{kind} needs {w} bits, geometry has extent {}",
                geometry.extent(kind)
            )));
        }
    }
    let column = singles(0..13);
    let bankgroup = singles(13..15);
    let (bank, row) = match name {
        "simple" => (vec![vec![31]], singles(15..31)),
        "bank-xor" => (vec![vec![31, 6]], singles(15..31)),
        "bank-xor-noncontig-row" => (vec![vec![21, 6]], singles((15..21).chain(22..32))),
        other => return Err(MapError::UnknownPreset(other.to_string())),
    };
    AddressMapping::new(
        geometry,
        &[
            (CoordKind::BankGroup, bankgroup),
            (CoordKind::Bank, bank),
            (CoordKind::Row, row),
            (CoordKind::Column, column),
        ],
    )
}

/// All reference mappings for `geometry`, named.
pub fn builtin_mappings(
    geometry: Geometry,
) -> Result<Vec<(&'static str, AddressMapping)>, MapError> {
    PRESET_NAMES
        .iter()
        .map(|&n| preset(n, geometry).map(|m| (n, m)))
        .collect()
}
