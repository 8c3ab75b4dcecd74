//! Access traces: a line-oriented text format, synthetic generators, and
//! replay through the DRAM model.
//!
//! ```text
//! # comment
//! R 0x80000000
//! W 0x80000040 0xaa
//! ```

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::addrmap::Translator;
use crate::dram::{AccessKind, BitflipRecord, HammerParams, SimState, Stats};
use crate::error::{HarnessError, TraceError};
use crate::geometry::Geometry;
use crate::hex;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Access {
    pub kind: AccessKind,
    #[serde(with = "crate::hex")]
    pub pa: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<u8>,
}

impl Access {
    pub fn read(pa: u64) -> Self {
        Self {
            kind: AccessKind::Read,
            pa,
            data: None,
        }
    }

    pub fn write(pa: u64, data: u8) -> Self {
        Self {
            kind: AccessKind::Write,
            pa,
            data: Some(data),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessTrace {
    pub accesses: Vec<Access>,
}

impl AccessTrace {
    pub fn parse(text: &str) -> Result<Self, TraceError> {
        let mut accesses = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |message: String| TraceError { line, message };
            let fields: Vec<&str> = content.split_whitespace().collect();
            let pa = |s: &str| hex::parse(s).map_err(err);
            let access = match fields.as_slice() {
                ["R" | "r", addr] => Access::read(pa(addr)?),
                ["W" | "w", addr, byte] => {
                    let v = hex::parse(byte).map_err(err)?;
                    let v =
                        u8::try_from(v).map_err(|_| err(format!("data {v:#x} is not a byte")))?;
                    Access::write(pa(addr)?, v)
                }
                _ => {
                    return Err(err(format!(
                        "expected `R <pa>` or `W <pa> <byte>`, got `{content}`"
                    )))
                }
            };
            accesses.push(access);
        }
        Ok(Self { accesses })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for a in &self.accesses {
            match a.kind {
                AccessKind::Read => writeln!(out, "R {:#x}", a.pa),
                AccessKind::Write => writeln!(out, "W {:#x} {:#04x}", a.pa, a.data.unwrap_or(0)),
            }
            .expect("write to string");
        }
        out
    }

    pub fn len(&self) -> usize {
        self.accesses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accesses.is_empty()
    }
}

/// Synthetic access patterns.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TraceKind {
    /// Reads `[base, base + len)` every `step` bytes.
    Sequential { base: u64, len: u64, step: u64 },
    /// `count` reads at `base + i * stride`.
    Strided { base: u64, stride: u64, count: u64 },
    /// Row-major `rows x cols` matrix of `elem_size`-byte elements at `base`,
    /// followed by a `cols`-element vector. For each matrix row `i` and
    /// column `j`: read `A[i][j]`, then read `x[j]`.
    Matvec {
        rows: u64,
        cols: u64,
        base: u64,
        elem_size: u64,
    },
    /// `count` rounds of reading `a` then `b`.
    PingPong { a: u64, b: u64, count: u64 },
}

pub fn synth_trace(kind: &TraceKind, geometry: &Geometry) -> Result<AccessTrace, TraceError> {
    let pas: Vec<u64> = match *kind {
        TraceKind::Sequential { base, len, step } => {
            if step == 0 {
                return Err(TraceError {
                    line: 0,
                    message: "step must be positive".into(),
                });
            }
            (0..len.div_ceil(step)).map(|i| base + i * step).collect()
        }
        TraceKind::Strided {
            base,
            stride,
            count,
        } => (0..count).map(|i| base + i * stride).collect(),
        TraceKind::Matvec {
            rows,
            cols,
            base,
            elem_size,
        } => {
            let vector = base + rows * cols * elem_size;
            let mut out = Vec::with_capacity((2 * rows * cols) as usize);
            for i in 0..rows {
                for j in 0..cols {
                    out.push(base + (i * cols + j) * elem_size);
                    out.push(vector + j * elem_size);
                }
            }
            out
        }
        TraceKind::PingPong { a, b, count } => (0..count).flat_map(|_| [a, b]).collect(),
    };
    let total = geometry.total_bytes();
    if let Some(i) = pas.iter().position(|&pa| pa >= total) {
        return Err(TraceError {
            line: i + 1,
            message: format!("address {:#x} overflows the {total:#x}-byte device", pas[i]),
        });
    }
    Ok(AccessTrace {
        accesses: pas.into_iter().map(Access::read).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayResult {
    pub stats: Stats,
    pub flips: Vec<BitflipRecord>,
}

/// Feeds every access through the open-page model. A refresh window closes
/// after every `refresh_every` activations.
pub fn replay_trace(
    trace: &AccessTrace,
    mapping: &Translator,
    params: &HammerParams,
    refresh_every: u64,
) -> Result<ReplayResult, HarnessError> {
    params.check().map_err(HarnessError::Scenario)?;
    if refresh_every == 0 {
        return Err(HarnessError::Scenario(
            "refresh_every must be at least 1".into(),
        ));
    }
    let mut state = SimState::new(*mapping.geometry(), params.clone());
    let mut window = 0u64;
    for (i, a) in trace.accesses.iter().enumerate() {
        let outcome = state
            .access(mapping, a.pa, a.kind, a.data)
            .map_err(|e| TraceError {
                line: i + 1,
                message: e.to_string(),
            })?;
        if !outcome.hit {
            window += 1;
            if window == refresh_every {
                state.refresh();
                window = 0;
            }
        }
    }
    let (flips, stats) = state.into_parts();
    Ok(ReplayResult { stats, flips })
}
