//! End-to-end experiments: lay out the VMs under a mitigation policy, seed
//! the rows an attack can reach with a check pattern, hammer, and classify
//! every induced flip by owner.

mod trace;

pub use trace::{replay_trace, synth_trace, Access, AccessTrace, ReplayResult, TraceKind};

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::addrmap::{preset, AddressMapping, Translator};
use crate::allocator::{
    boundary_rows, check_layout, find_aggressors, pack_contiguous, plan_citadel, plan_siloz,
    row_footprint, Aggressor, Classification, MemoryLayout, Owner, SilozAssignment,
};
use crate::dram::{victim_rows, BitflipRecord, HammerParams, SimState, Stats};
use crate::error::HarnessError;
use crate::geometry::Geometry;

pub const TOOL_NAME: &str = "hammersim";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Where a scenario's mapping comes from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MappingSource {
    Preset(String),
    Path(PathBuf),
    Inline(AddressMapping),
}

impl MappingSource {
    /// A preset name when it is one, a file path otherwise.
    pub fn from_arg(arg: &str) -> Self {
        if crate::addrmap::PRESET_NAMES.contains(&arg) {
            MappingSource::Preset(arg.into())
        } else {
            MappingSource::Path(arg.into())
        }
    }

    /// Presets are instantiated at `geometry`, or the 4 GiB DDR4 device.
    pub fn load(&self, geometry: Option<Geometry>) -> Result<AddressMapping, HarnessError> {
        Ok(match self {
            MappingSource::Preset(name) => preset(name, geometry.unwrap_or(Geometry::DDR4_4GIB))?,
            MappingSource::Path(p) => AddressMapping::parse(&read(p)?)?,
            MappingSource::Inline(m) => m.clone(),
        })
    }

    pub fn label(&self) -> String {
        match self {
            MappingSource::Preset(n) => n.clone(),
            MappingSource::Path(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string()),
            MappingSource::Inline(_) => "inline".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mitigation {
    #[default]
    None,
    Siloz,
    Citadel {
        guard_global_rows: u64,
    },
}

impl Mitigation {
    pub fn label(&self) -> &'static str {
        match self {
            Mitigation::None => "none",
            Mitigation::Siloz => "siloz",
            Mitigation::Citadel { .. } => "citadel",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggressorSelection {
    All,
    #[default]
    First,
    /// Attacker rows with these row indices, in every bank that has them.
    Rows(Vec<u64>),
}

fn default_attacker() -> u32 {
    1
}
fn default_refresh_every() -> u64 {
    1_000_000
}
fn default_pattern() -> u8 {
    0xaa
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub mapping: MappingSource,
    /// Geometry for preset mappings; defaults to the 4 GiB DDR4 device.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<Geometry>,
    #[serde(default)]
    pub hammer: HammerParams,
    #[serde(default)]
    pub mitigation: Mitigation,
    #[serde(with = "crate::hex::size_vec")]
    pub vm_sizes: Vec<u64>,
    #[serde(default = "default_attacker")]
    pub attacker_vm: u32,
    #[serde(default)]
    pub victim_vm: u32,
    /// Activations per aggressor; `hc_first + 1000` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hammer_count: Option<u64>,
    #[serde(default = "default_refresh_every")]
    pub refresh_every: u64,
    #[serde(default)]
    pub aggressor_selection: AggressorSelection,
    #[serde(default = "default_pattern")]
    pub check_pattern: u8,
}

impl Scenario {
    /// Two VMs of `vm_size` bytes, attacker vm1 against victim vm0.
    pub fn new(
        mapping: MappingSource,
        mitigation: Mitigation,
        vm_size: u64,
        hammer: HammerParams,
    ) -> Self {
        Self {
            name: None,
            mapping,
            geometry: None,
            hammer,
            mitigation,
            vm_sizes: vec![vm_size, vm_size],
            attacker_vm: default_attacker(),
            victim_vm: 0,
            hammer_count: None,
            refresh_every: default_refresh_every(),
            aggressor_selection: AggressorSelection::default(),
            check_pattern: default_pattern(),
        }
    }

    /// Reads a scenario file; relative mapping paths resolve against the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = read(path)?;
        let mut s: Scenario = serde_json::from_str(&text).map_err(|source| HarnessError::Json {
            path: path.display().to_string(),
            source,
        })?;
        s.rebase(path.parent());
        Ok(s)
    }

    pub fn rebase(&mut self, dir: Option<&Path>) {
        if let (MappingSource::Path(p), Some(dir)) = (&mut self.mapping, dir) {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
    }

    pub fn effective_hammer_count(&self) -> u64 {
        self.hammer_count.unwrap_or(self.hammer.hc_first + 1000)
    }

    pub fn load_mapping(&self) -> Result<AddressMapping, HarnessError> {
        let mapping = self.mapping.load(self.geometry)?;
        if let Some(g) = self.geometry {
            if &g != mapping.geometry() {
                return Err(HarnessError::Scenario(
                    "scenario geometry differs from the mapping's geometry".into(),
                ));
            }
        }
        Ok(mapping)
    }

    pub fn check(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Scenario(m));
        if self.attacker_vm == self.victim_vm {
            return bad(format!(
                "attacker and victim are both vm{}",
                self.attacker_vm
            ));
        }
        let n = self.vm_sizes.len() as u32;
        if self.attacker_vm >= n || self.victim_vm >= n {
            return bad(format!("attacker/victim index out of range for {n} VMs"));
        }
        if self.hammer_count == Some(0) {
            return bad("hammer_count must be at least 1".into());
        }
        if self.refresh_every == 0 {
            return bad("refresh_every must be at least 1".into());
        }
        if let Mitigation::Citadel {
            guard_global_rows: 0,
        } = self.mitigation
        {
            return bad("guard_global_rows must be at least 1".into());
        }
        self.hammer.check().map_err(HarnessError::Scenario)
    }

    /// SHA-256 of the scenario's JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("scenario serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

pub(crate) fn read(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Mitigated,
    NotMitigated,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifiedFlip {
    #[serde(flatten)]
    pub flip: BitflipRecord,
    pub owner: Classification,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckerSummary {
    pub patterned_bytes: u64,
    /// Patterned bytes whose final value differs from the pattern.
    pub changed_bytes: u64,
    /// The flip list and the memory sweep agree.
    pub consistent: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggressorSource {
    /// Attacker rows adjacent to victim rows.
    Adjacent,
    /// No attacker row reaches the victim; the closest rows were hammered.
    Boundary,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub tool: ToolInfo,
    pub scenario_hash: String,
    pub scenario: Scenario,
    pub layout: MemoryLayout,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub siloz: Option<Vec<SilozAssignment>>,
    pub aggressor_source: AggressorSource,
    pub aggressors: Vec<Aggressor>,
    pub hammer_count: u64,
    pub flips: Vec<ClassifiedFlip>,
    pub ownership: BTreeMap<String, u64>,
    pub verdict: Verdict,
    pub checker: CheckerSummary,
    pub stats: Stats,
}

impl AttackReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// MITIGATED iff no flip is owned by the victim.
pub fn verdict_of(flips: &[ClassifiedFlip], victim_vm: u32) -> Verdict {
    if flips
        .iter()
        .any(|f| f.owner == Classification::Owned(Owner::Vm(victim_vm)))
    {
        Verdict::NotMitigated
    } else {
        Verdict::Mitigated
    }
}

/// Builds the layout for a scenario's mitigation.
pub fn build_layout(
    scenario: &Scenario,
    t: &Translator,
) -> Result<(MemoryLayout, Option<Vec<SilozAssignment>>), HarnessError> {
    Ok(match scenario.mitigation {
        Mitigation::None => (pack_contiguous(t.geometry(), &scenario.vm_sizes)?, None),
        Mitigation::Siloz => {
            let plan = plan_siloz(t, &scenario.vm_sizes)?;
            (plan.layout, Some(plan.assignments))
        }
        Mitigation::Citadel { guard_global_rows } => (
            plan_citadel(t, &scenario.vm_sizes, guard_global_rows)?,
            None,
        ),
    })
}

pub fn run_attack(scenario: &Scenario) -> Result<AttackReport, HarnessError> {
    scenario.check()?;
    let mapping = scenario.load_mapping()?;
    let t = mapping.translator()?;
    let g = *t.geometry();
    let (layout, siloz) = build_layout(scenario, &t)?;
    let violations = check_layout(&layout, &g);
    if !violations.is_empty() {
        return Err(HarnessError::Scenario(format!(
            "layout violations: {violations:?}"
        )));
    }

    let radius = scenario.hammer.blast_radius;
    let (attacker, victim) = (scenario.attacker_vm, scenario.victim_vm);
    let adjacent = find_aggressors(&t, &layout, attacker, victim, radius)?;
    let (source, candidates) = if adjacent.is_empty() {
        (
            AggressorSource::Boundary,
            boundary_rows(&t, &layout, attacker, victim)?,
        )
    } else {
        (AggressorSource::Adjacent, adjacent)
    };
    let aggressors = match &scenario.aggressor_selection {
        AggressorSelection::All => candidates,
        AggressorSelection::First => candidates.into_iter().take(1).collect(),
        AggressorSelection::Rows(rows) => select_rows(&t, &layout, attacker, victim, radius, rows)?,
    };
    if aggressors.is_empty() {
        return Err(HarnessError::Scenario(format!(
            "vm{attacker} has no row to hammer"
        )));
    }

    let mut state = SimState::new(g, scenario.hammer.clone());

    // Seed every row a hammered aggressor can disturb.
    let mut patterned = BTreeSet::new();
    for a in &aggressors {
        for v in victim_rows(&g, a.row.row, radius) {
            let row = crate::geometry::RowId {
                bank: a.row.bank,
                row: v,
            };
            for col in 0..g.columns {
                let pa = t.coord_to_pa(&row.at_column(col))?;
                if patterned.insert(pa) {
                    state.write_byte(pa, scenario.check_pattern)?;
                }
            }
        }
    }

    let hammer_count = scenario.effective_hammer_count();
    let mut window = 0u64;
    for a in &aggressors {
        let coord = a.row.at_column(0);
        for _ in 0..hammer_count {
            state.activate_row(&t, &coord)?;
            window += 1;
            if window == scenario.refresh_every {
                state.refresh();
                window = 0;
            }
        }
    }

    let flips: Vec<ClassifiedFlip> = state
        .collect_flips()
        .iter()
        .map(|f| ClassifiedFlip {
            flip: f.clone(),
            owner: layout.classify_pa(f.pa),
        })
        .collect();
    let checker = sweep(&state, &patterned, scenario.check_pattern, &flips);
    let mut ownership = BTreeMap::new();
    for f in &flips {
        *ownership.entry(f.owner.to_string()).or_insert(0) += 1;
    }
    Ok(AttackReport {
        tool: ToolInfo {
            name: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
        },
        scenario_hash: scenario.hash(),
        scenario: scenario.clone(),
        layout,
        siloz,
        aggressor_source: source,
        aggressors,
        hammer_count,
        verdict: verdict_of(&flips, victim),
        flips,
        ownership,
        checker,
        stats: state.stats().clone(),
    })
}

fn select_rows(
    t: &Translator,
    layout: &MemoryLayout,
    attacker: u32,
    victim: u32,
    radius: u64,
    rows: &[u64],
) -> Result<Vec<Aggressor>, HarnessError> {
    let region = *layout.vm(attacker).expect("checked by find_aggressors");
    let adjacent = find_aggressors(t, layout, attacker, victim, radius)?;
    let wanted: BTreeSet<u64> = rows.iter().copied().collect();
    Ok(row_footprint(t, &region)
        .rows
        .into_iter()
        .filter(|r| wanted.contains(&r.row))
        .map(|row| {
            let victim_rows = adjacent
                .iter()
                .find(|a| a.row == row)
                .map(|a| a.victim_rows.clone())
                .unwrap_or_default();
            Aggressor {
                pa: crate::allocator::representative_pa(t, &region, row).expect("owned row"),
                row,
                victim_rows,
            }
        })
        .collect())
}

/// Post-hoc memory sweep over the patterned bytes, cross-checked against the
/// flip list.
fn sweep(
    state: &SimState,
    patterned: &BTreeSet<u64>,
    pattern: u8,
    flips: &[ClassifiedFlip],
) -> CheckerSummary {
    let mut net: BTreeMap<u64, u8> = BTreeMap::new();
    let mut well_formed = true;
    for f in flips {
        let r = &f.flip;
        well_formed &= r.old_value ^ r.new_value == 1 << r.bit_index && patterned.contains(&r.pa);
        *net.entry(r.pa).or_insert(0) ^= 1 << r.bit_index;
    }
    let expected: BTreeSet<u64> = net
        .into_iter()
        .filter(|&(_, m)| m != 0)
        .map(|(pa, _)| pa)
        .collect();
    let changed: BTreeSet<u64> = patterned
        .iter()
        .copied()
        .filter(|&pa| state.read_byte(pa).expect("in range") != pattern)
        .collect();
    CheckerSummary {
        patterned_bytes: patterned.len() as u64,
        changed_bytes: changed.len() as u64,
        consistent: well_formed && changed == expected,
    }
}

/// Runs every scenario independently; results keep input order.
pub fn run_matrix(scenarios: &[Scenario]) -> Vec<Result<AttackReport, HarnessError>> {
    scenarios.par_iter().map(run_attack).collect()
}

/// Refresh windows an attack spans in [`default_matrix`].
pub const DEFAULT_WINDOWS: u64 = 16;

/// The 3 mappings x {none, siloz, citadel(1)} grid with two 8 MiB VMs. Each
/// attack hammers one aggressor for [`DEFAULT_WINDOWS`] refresh windows of
/// `hc_first + 1` activations.
pub fn default_matrix(hammer: HammerParams) -> Vec<Scenario> {
    let mut out = Vec::new();
    for mitigation in [
        Mitigation::None,
        Mitigation::Siloz,
        Mitigation::Citadel {
            guard_global_rows: 1,
        },
    ] {
        for name in crate::addrmap::PRESET_NAMES {
            let mut s = Scenario::new(
                MappingSource::Preset(name.into()),
                mitigation,
                8 << 20,
                hammer.clone(),
            );
            s.name = Some(format!("{}/{}", mitigation.label(), name));
            s.refresh_every = hammer.hc_first + 1;
            s.hammer_count = Some(DEFAULT_WINDOWS * (hammer.hc_first + 1));
            out.push(s);
        }
    }
    out
}

#[derive(Serialize)]
struct ErrorEntry<'a> {
    error: ErrorBody<'a>,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    message: String,
}

/// JSON for a matrix run: one element per scenario, either a report or an
/// `{"error": {...}}` object.
pub fn matrix_to_json(results: &[Result<AttackReport, HarnessError>]) -> serde_json::Value {
    serde_json::Value::Array(
        results
            .iter()
            .map(|r| match r {
                Ok(rep) => serde_json::to_value(rep).expect("report serializes"),
                Err(e) => serde_json::to_value(ErrorEntry {
                    error: ErrorBody {
                        kind: e.kind(),
                        message: e.to_string(),
                    },
                })
                .expect("error serializes"),
            })
            .collect(),
    )
}

/// Grid of verdicts: one line per mitigation, one column per mapping.
/// `✓` mitigated, `✗` not mitigated, `!` error.
pub fn summary_table(
    scenarios: &[Scenario],
    results: &[Result<AttackReport, HarnessError>],
) -> String {
    let mut mitigations: Vec<&'static str> = Vec::new();
    let mut mappings: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(usize, usize), &'static str> = BTreeMap::new();
    for (s, r) in scenarios.iter().zip(results) {
        let m = s.mitigation.label();
        let mi = mitigations.iter().position(|x| *x == m).unwrap_or_else(|| {
            mitigations.push(m);
            mitigations.len() - 1
        });
        let label = s.mapping.label();
        let pi = mappings
            .iter()
            .position(|x| *x == label)
            .unwrap_or_else(|| {
                mappings.push(label);
                mappings.len() - 1
            });
        let mark = match r {
            Ok(rep) if rep.verdict == Verdict::Mitigated => "✓",
            Ok(_) => "✗",
            Err(_) => "!",
        };
        cells.insert((mi, pi), mark);
    }
    let first = mitigations
        .iter()
        .map(|m| m.len())
        .max()
        .unwrap_or(0)
        .max(10);
    let mut out = format!("{:first$}", "");
    for m in &mappings {
        out.push_str(&format!(" | {m}"));
    }
    out.push('\n');
    for (mi, m) in mitigations.iter().enumerate() {
        out.push_str(&format!("{m:first$}"));
        for (pi, name) in mappings.iter().enumerate() {
            let mark = cells.get(&(mi, pi)).copied().unwrap_or("-");
            let w = name.chars().count();
            out.push_str(&format!(" | {mark:<w$}"));
        }
        out.push('\n');
    }
    out
}
