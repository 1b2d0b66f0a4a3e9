//! Command implementations behind the `dasics` binary.
//!
//! Each command writes to caller-supplied streams and returns the process
//! exit status, so the binary is a thin wrapper and tests can drive the
//! commands in-process.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use dasics_core::{
    assemble_units, load, render, FaultPolicy, Image, LoadError, LoadOptions, Machine,
    MachineConfig, RunEnd, RunResult, SourceUnit, TrapKind,
};

/// Process exit statuses.
pub mod status {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const LOAD_ERROR: i32 = 2;
    pub const GUEST_EXIT: i32 = 3;
    pub const FAULT: i32 = 4;
    pub const STEP_LIMIT: i32 = 5;
}

pub const DEFAULT_MAX_STEPS: u64 = 10_000_000;

#[derive(Debug, Parser)]
#[command(
    name = "dasics",
    version,
    about = "RV64 emulator with DASICS compartments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a manifest and run it.
    Run(RunArgs),
    /// Assemble one source file to a flat binary.
    Asm(AsmArgs),
    /// Load and validate a manifest without running it.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub manifest: PathBuf,
    /// Write the event trace to this file.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
    pub max_steps: u64,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    pub dasics: Switch,
    /// Stop at the first fault (default).
    #[arg(long, conflicts_with = "resume_via_handler")]
    pub exit_on_fault: bool,
    /// Deliver faults to the guest handler and keep running.
    #[arg(long)]
    pub resume_via_handler: bool,
}

#[derive(Debug, Args)]
pub struct AsmArgs {
    pub source: PathBuf,
    /// Output file; without it a hex listing goes to stdout.
    #[arg(short = 'o', long = "output")]
    pub output: Option<PathBuf>,
    /// Load address of the first byte.
    #[arg(long, default_value = "0", value_parser = parse_u64)]
    pub base: u64,
    /// Print the symbol table to stdout.
    #[arg(long)]
    pub symbols: bool,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    pub manifest: PathBuf,
}

fn parse_u64(s: &str) -> Result<u64, String> {
    let clean = s.replace('_', "");
    let parsed = match clean.strip_prefix("0x").or(clean.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => clean.parse(),
    };
    parsed.map_err(|_| format!("invalid address `{s}`"))
}

/// Settings for one emulated run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub max_steps: u64,
    pub dasics: bool,
    pub fault_policy: FaultPolicy,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            max_steps: DEFAULT_MAX_STEPS,
            dasics: true,
            fault_policy: FaultPolicy::ExitOnFault,
        }
    }
}

/// Everything observable about a finished run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub result: RunResult,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub machine: Machine,
}

impl RunReport {
    /// True if a trap other than syscall interception was taken.
    pub fn faulted(&self) -> bool {
        self.result
            .traps
            .iter()
            .any(|t| t.kind != TrapKind::DasicsEcallFault)
    }

    pub fn exit_status(&self) -> i32 {
        match self.result.end {
            RunEnd::Halted(0) => status::OK,
            RunEnd::Halted(_) if self.faulted() => status::FAULT,
            RunEnd::Halted(_) => status::GUEST_EXIT,
            RunEnd::FaultTerminated(_) | RunEnd::Fatal(_) => status::FAULT,
            RunEnd::StepLimitExceeded => status::STEP_LIMIT,
        }
    }

    /// One-line description of how the run ended.
    pub fn summary(&self) -> String {
        let steps = self.result.steps;
        match self.result.end {
            RunEnd::Halted(code) => format!("halted exit={code} steps={steps}"),
            RunEnd::FaultTerminated(cause) => format!(
                "fault-terminated cause={} code={} tval={:#x} steps={steps}",
                cause.kind,
                cause.code(),
                cause.tval
            ),
            RunEnd::Fatal(reason) => format!("fatal steps={steps}: {reason}"),
            RunEnd::StepLimitExceeded => format!("step-limit steps={steps}"),
        }
    }

    /// The rendered event trace followed by the `# end:` trailer.
    pub fn trace_text(&self) -> String {
        let mut text = render(&self.result.events);
        text.push_str("# end: ");
        text.push_str(&self.summary());
        text.push('\n');
        text
    }
}

/// Runs an already built image.
pub fn run_image(image: &Image, opts: &RunOptions) -> RunReport {
    let mut machine = Machine::new(MachineConfig {
        fault_policy: opts.fault_policy,
    });
    load(
        image,
        &mut machine,
        LoadOptions {
            dasics: opts.dasics,
        },
    );
    let result = machine.run(opts.max_steps);
    RunReport {
        result,
        stdout: machine.kernel.stdout.clone(),
        stderr: machine.kernel.stderr.clone(),
        machine,
    }
}

pub fn run_manifest(path: &Path, opts: &RunOptions) -> Result<RunReport, LoadError> {
    let image = Image::from_manifest_path(path)?;
    Ok(run_image(&image, opts))
}

/// Dispatches a parsed command line.
pub fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match &cli.command {
        Command::Run(args) => cmd_run(args, out, err),
        Command::Asm(args) => cmd_asm(args, out, err),
        Command::Check(args) => cmd_check(args, out, err),
    }
}

pub fn cmd_run(args: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let opts = RunOptions {
        max_steps: args.max_steps,
        dasics: args.dasics == Switch::On,
        fault_policy: if args.resume_via_handler {
            FaultPolicy::ResumeViaHandler
        } else {
            FaultPolicy::ExitOnFault
        },
    };
    let report = match run_manifest(&args.manifest, &opts) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "dasics: {}: {e}", args.manifest.display());
            return status::LOAD_ERROR;
        }
    };
    let _ = out.write_all(&report.stdout);
    let _ = err.write_all(&report.stderr);
    if let Some(path) = &args.trace {
        if let Err(e) = fs::write(path, report.trace_text()) {
            let _ = writeln!(err, "dasics: cannot write trace `{}`: {e}", path.display());
            return status::USAGE;
        }
    }
    let code = report.exit_status();
    if code != status::OK {
        let _ = writeln!(err, "dasics: {}", report.summary());
    }
    code
}

pub fn cmd_asm(args: &AsmArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match assemble_file(args, out) {
        Ok(()) => status::OK,
        Err(e) => {
            let _ = writeln!(err, "dasics: {e:#}");
            status::LOAD_ERROR
        }
    }
}

fn assemble_file(args: &AsmArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    use anyhow::Context;
    let text = fs::read_to_string(&args.source)
        .with_context(|| format!("cannot read `{}`", args.source.display()))?;
    let name = args.source.display().to_string();
    let program = assemble_units(&[SourceUnit {
        name: &name,
        text: &text,
        base: args.base,
    }])?;
    let (base, bytes) = program.flatten().map_err(anyhow::Error::msg)?;
    match &args.output {
        Some(path) => {
            fs::write(path, &bytes)
                .with_context(|| format!("cannot write `{}`", path.display()))?;
        }
        None => {
            for (i, row) in bytes.chunks(16).enumerate() {
                let hex: Vec<String> = row.iter().map(|b| format!("{b:02x}")).collect();
                writeln!(out, "{:#010x}: {}", base + 16 * i as u64, hex.join(" "))?;
            }
        }
    }
    if args.symbols {
        for (sym, addr) in &program.symbols {
            writeln!(out, "{addr:#018x} {sym}")?;
        }
    }
    Ok(())
}

pub fn cmd_check(args: &CheckArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let image = match Image::from_manifest_path(&args.manifest) {
        Ok(i) => i,
        Err(e) => {
            let _ = writeln!(err, "dasics: {}: {e}", args.manifest.display());
            return status::LOAD_ERROR;
        }
    };
    let _ = write_check_summary(&image, out);
    status::OK
}

fn write_check_summary(image: &Image, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "entry    {:#x}", image.entry)?;
    match image.trusted {
        Some((lo, hi)) => writeln!(out, "trusted  {lo:#x}..={hi:#x}")?,
        None => writeln!(out, "trusted  none (DASICS disabled)")?,
    }
    match image.handler {
        Some(h) => writeln!(out, "handler  {h:#x}")?,
        None => writeln!(out, "handler  none")?,
    }
    for seg in image.memory.segments() {
        writeln!(
            out,
            "segment  {:#x} {:#x} bytes {}",
            seg.base,
            seg.bytes.len(),
            seg.label
        )?;
    }
    for file in image.vfs.files() {
        writeln!(out, "vfs      {} {} bytes", file.path, file.content.len())?;
    }
    writeln!(out, "symbols  {}", image.symbols.len())
}
