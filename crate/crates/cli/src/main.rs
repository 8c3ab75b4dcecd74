use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use hammersim::allocator::{
    check_layout, pack_contiguous, plan_citadel, plan_siloz, MemoryLayout, SilozAssignment,
};
use hammersim::dram::HammerParams;
use hammersim::harness::{
    default_matrix, matrix_to_json, replay_trace, run_attack, run_matrix, summary_table,
    synth_trace, AccessTrace, MappingSource, Scenario, TraceKind, Verdict,
};
use hammersim::{hex, CoordKind, DramCoordinate, HarnessError, Translator};

/// RowHammer isolation experiments on a simulated DRAM device.
///
/// Exit status: 0 on success (or MITIGATED), 1 for a negative domain result
/// (an invalid mapping, or NOT_MITIGATED under `attack --expect-mitigated`),
/// 2 for usage, input and I/O errors. Errors are printed to stderr as
/// `{"error": {"kind": ..., "message": ...}}`.
#[derive(Parser)]
#[command(name = "hammersim", version)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    /// Write the JSON result to this file instead of stdout.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

/// Overrides applied on top of scenario files; they always win.
#[derive(Args, Clone, Default)]
struct Overrides {
    /// RNG seed for probabilistic flips.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flip exactly once per victim row per window when the threshold is crossed.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Activations within one refresh window after which flips become possible.
    #[arg(long, global = true)]
    hc_first: Option<u64>,
    /// Activations issued per aggressor row.
    #[arg(long, global = true)]
    hammer_count: Option<u64>,
}

impl Overrides {
    fn apply_params(&self, p: &mut HammerParams) {
        if let Some(seed) = self.seed {
            p.rng_seed = seed;
        }
        if self.deterministic {
            p.deterministic_mode = true;
        }
        if let Some(hc) = self.hc_first {
            p.hc_first = hc;
        }
    }

    fn apply(&self, s: &mut Scenario) {
        self.apply_params(&mut s.hammer);
        if let Some(n) = self.hammer_count {
            s.hammer_count = Some(n);
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check that a mapping is a bijection; exits 1 when it is not.
    ValidateMap {
        /// Preset name (simple, bank-xor, bank-xor-noncontig-row) or mapping file.
        mapping: String,
    },
    /// Translate a physical address to DRAM coordinates or back.
    ///
    /// A coordinate is written as `key=value` pairs separated by commas
    /// (`bank=1,row=0x10,column=64`; missing fields are 0) or as six
    /// comma-separated values in channel,rank,bankgroup,bank,row,column order.
    Translate {
        mapping: String,
        /// A physical address (hex or decimal) or a coordinate.
        value: String,
    },
    /// Place VMs under a mitigation policy and print the layout.
    Plan {
        #[arg(value_enum)]
        mitigation: PlanKind,
        mapping: String,
        /// VM sizes, e.g. 16MiB or 0x1000000.
        #[arg(required = true, value_parser = hex::parse_size)]
        sizes: Vec<u64>,
        /// Guard rows between Citadel VMs.
        #[arg(long, default_value_t = 1)]
        guard: u64,
    },
    /// Run one attack scenario and print its report.
    Attack {
        scenario: PathBuf,
        /// Exit 1 unless the verdict is MITIGATED.
        #[arg(long)]
        expect_mitigated: bool,
    },
    /// Run a set of scenarios and print their reports as a JSON array.
    ///
    /// PATH is a directory of scenario files, a file holding one scenario or
    /// an array of them, or absent for the built-in 3 x 3 grid. The verdict
    /// grid goes to stderr. Exits 2 if any scenario failed.
    Matrix {
        path: Option<PathBuf>,
        /// Print the verdict grid to stdout instead of the JSON reports.
        #[arg(long)]
        table: bool,
    },
    /// Replay an access trace and print row-buffer statistics and flips.
    ReplayTrace {
        trace: PathBuf,
        mapping: String,
        /// Activations per refresh window.
        #[arg(long, default_value_t = 1_000_000)]
        refresh_every: u64,
    },
    /// Print a synthetic access trace.
    GenTrace {
        #[command(subcommand)]
        kind: GenKind,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PlanKind {
    None,
    Siloz,
    Citadel,
}

#[derive(Subcommand)]
enum GenKind {
    /// Reads over [base, base + len) every `step` bytes.
    Sequential {
        #[arg(long, value_parser = hex::parse, default_value = "0")]
        base: u64,
        #[arg(long, value_parser = hex::parse_size)]
        len: u64,
        #[arg(long, value_parser = hex::parse, default_value = "64")]
        step: u64,
    },
    /// `count` reads `stride` bytes apart.
    Strided {
        #[arg(long, value_parser = hex::parse, default_value = "0")]
        base: u64,
        #[arg(long, value_parser = hex::parse_size)]
        stride: u64,
        #[arg(long, value_parser = hex::parse)]
        count: u64,
    },
    /// Reads of a row-major matrix-vector product.
    Matvec {
        #[arg(long, value_parser = hex::parse)]
        rows: u64,
        #[arg(long, value_parser = hex::parse)]
        cols: u64,
        #[arg(long, value_parser = hex::parse, default_value = "0")]
        base: u64,
        #[arg(long, value_parser = hex::parse, default_value = "8")]
        elem_size: u64,
    },
    /// Alternating reads of two addresses.
    PingPong {
        #[arg(long, value_parser = hex::parse)]
        a: u64,
        #[arg(long, value_parser = hex::parse)]
        b: u64,
        #[arg(long, value_parser = hex::parse)]
        count: u64,
    },
}

struct Failure {
    kind: &'static str,
    message: String,
}

impl Failure {
    fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure::new(e.kind(), e.to_string())
    }
}

impl From<hammersim::MapError> for Failure {
    fn from(e: hammersim::MapError) -> Self {
        Failure::new("mapping", e.to_string())
    }
}

impl From<hammersim::PlanError> for Failure {
    fn from(e: hammersim::PlanError) -> Self {
        Failure::new("plan", e.to_string())
    }
}

impl From<hammersim::TraceError> for Failure {
    fn from(e: hammersim::TraceError) -> Self {
        Failure::new("trace", e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(f) => {
            let err = serde_json::json!({"error": {"kind": f.kind, "message": f.message}});
            eprintln!("{err}");
            ExitCode::from(2)
        }
    }
}

fn emit(output: &Option<PathBuf>, text: &str) -> Result<(), Failure> {
    match output {
        Some(path) => std::fs::write(path, format!("{text}\n"))
            .map_err(|e| Failure::new("io", format!("{}: {e}", path.display()))),
        None => {
            use std::io::Write;
            match writeln!(std::io::stdout(), "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    Err(Failure::new("io", e.to_string()))
                }
                _ => Ok(()),
            }
        }
    }
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn translator(mapping: &str) -> Result<Translator, Failure> {
    Ok(MappingSource::from_arg(mapping).load(None)?.translator()?)
}

fn run(cli: &Cli) -> Result<ExitCode, Failure> {
    let out = &cli.output;
    match &cli.command {
        Command::ValidateMap { mapping } => {
            let report = MappingSource::from_arg(mapping).load(None)?.validate();
            emit(out, &json(&report))?;
            Ok(if report.valid {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::Translate { mapping, value } => {
            let t = translator(mapping)?;
            let (pa, coord) = if value.contains([',', '=']) {
                let coord = parse_coord(value)?;
                (t.coord_to_pa(&coord)?, coord)
            } else {
                let pa = hex::parse(value).map_err(|m| Failure::new("usage", m))?;
                (pa, t.pa_to_coord(pa)?)
            };
            #[derive(Serialize)]
            struct Translation {
                #[serde(with = "hex")]
                pa: u64,
                coordinate: DramCoordinate,
            }
            emit(
                out,
                &json(&Translation {
                    pa,
                    coordinate: coord,
                }),
            )?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Plan {
            mitigation,
            mapping,
            sizes,
            guard,
        } => {
            let t = translator(mapping)?;
            #[derive(Serialize)]
            struct PlanOutput {
                mitigation: &'static str,
                layout: MemoryLayout,
                #[serde(skip_serializing_if = "Option::is_none")]
                siloz: Option<Vec<SilozAssignment>>,
            }
            let plan = match mitigation {
                PlanKind::None => PlanOutput {
                    mitigation: "none",
                    layout: pack_contiguous(t.geometry(), sizes)?,
                    siloz: None,
                },
                PlanKind::Siloz => {
                    let p = plan_siloz(&t, sizes)?;
                    PlanOutput {
                        mitigation: "siloz",
                        layout: p.layout,
                        siloz: Some(p.assignments),
                    }
                }
                PlanKind::Citadel => PlanOutput {
                    mitigation: "citadel",
                    layout: plan_citadel(&t, sizes, *guard)?,
                    siloz: None,
                },
            };
            debug_assert!(check_layout(&plan.layout, t.geometry()).is_empty());
            emit(out, &json(&plan))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Attack {
            scenario,
            expect_mitigated,
        } => {
            let mut s = Scenario::from_file(scenario)?;
            cli.overrides.apply(&mut s);
            s.check()?;
            s.load_mapping()?;
            let report = run_attack(&s)?;
            emit(out, &report.to_json())?;
            Ok(
                if *expect_mitigated && report.verdict != Verdict::Mitigated {
                    ExitCode::from(1)
                } else {
                    ExitCode::SUCCESS
                },
            )
        }
        Command::Matrix { path, table } => {
            let mut scenarios = match path {
                Some(p) => load_scenarios(p)?,
                None => default_matrix(HammerParams::deterministic(
                    HammerParams::default().hc_first,
                )),
            };
            for s in &mut scenarios {
                cli.overrides.apply(s);
            }
            let results = run_matrix(&scenarios);
            let grid = summary_table(&scenarios, &results);
            if *table {
                emit(out, grid.trim_end())?;
            } else {
                eprint!("{grid}");
                emit(out, &json(&matrix_to_json(&results)))?;
            }
            Ok(if results.iter().all(Result::is_ok) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::ReplayTrace {
            trace,
            mapping,
            refresh_every,
        } => {
            let text = std::fs::read_to_string(trace)
                .map_err(|e| Failure::new("io", format!("{}: {e}", trace.display())))?;
            let trace = AccessTrace::parse(&text)?;
            let t = translator(mapping)?;
            let mut params = HammerParams::default();
            cli.overrides.apply_params(&mut params);
            let result = replay_trace(&trace, &t, &params, *refresh_every)?;
            emit(out, &json(&result))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::GenTrace { kind } => {
            let kind = match *kind {
                GenKind::Sequential { base, len, step } => {
                    TraceKind::Sequential { base, len, step }
                }
                GenKind::Strided {
                    base,
                    stride,
                    count,
                } => TraceKind::Strided {
                    base,
                    stride,
                    count,
                },
                GenKind::Matvec {
                    rows,
                    cols,
                    base,
                    elem_size,
                } => TraceKind::Matvec {
                    rows,
                    cols,
                    base,
                    elem_size,
                },
                GenKind::PingPong { a, b, count } => TraceKind::PingPong { a, b, count },
            };
            let trace = synth_trace(&kind, &hammersim::Geometry::DDR4_4GIB)?;
            emit(out, trace.to_text().trim_end())?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn parse_coord(text: &str) -> Result<DramCoordinate, Failure> {
    let bad = |m: String| Failure::new("usage", m);
    let parts: Vec<&str> = text
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .collect();
    let mut coord = DramCoordinate::default();
    if parts.iter().all(|p| !p.contains('=')) {
        if parts.len() != CoordKind::ALL.len() {
            return Err(bad(format!(
                "expected 6 values (channel,rank,bankgroup,bank,row,column), got {}",
                parts.len()
            )));
        }
        for (kind, p) in CoordKind::ALL.iter().zip(&parts) {
            coord.set(*kind, hex::parse(p).map_err(bad)?);
        }
        return Ok(coord);
    }
    for p in parts {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| bad(format!("expected key=value, got `{p}`")))?;
        let kind = CoordKind::from_name(k.trim())
            .ok_or_else(|| bad(format!("unknown coordinate `{k}`")))?;
        coord.set(kind, hex::parse(v).map_err(bad)?);
    }
    Ok(coord)
}

fn load_scenarios(path: &Path) -> Result<Vec<Scenario>, Failure> {
    let io = |e: std::io::Error| Failure::new("io", format!("{}: {e}", path.display()));
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        return files
            .iter()
            .map(|f| Scenario::from_file(f).map_err(Failure::from))
            .collect();
    }
    let text = std::fs::read_to_string(path).map_err(io)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Failure::new("json", format!("{}: {e}", path.display())))?;
    let items = match value {
        serde_json::Value::Array(items) => items,
        other => vec![other],
    };
    items
        .into_iter()
        .map(|v| {
            let mut s: Scenario = serde_json::from_value(v)
                .map_err(|e| Failure::new("json", format!("{}: {e}", path.display())))?;
            s.rebase(path.parent());
            Ok(s)
        })
        .collect()
}
