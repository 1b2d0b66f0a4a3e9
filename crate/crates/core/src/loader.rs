//! Manifest parsing, image building, and installation into a machine.
//!
//! A manifest is line-oriented; `#` starts a comment:
//!
//! ```text
//! entry    <addr|symbol>
//! trusted  <lo> <hi>            # at most once; absent = DASICS disabled
//! segment  <addr> <file>        # .s = assembly, .hex = hex bytes
//! vfs      <path> [<hex>|@file]
//! handler  <addr|symbol>
//! ```

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::asm::{assemble_units, AsmError, SourceUnit};
use crate::csr::{USTATUS_UIE, USTATUS_UPIE};
use crate::machine::Machine;
use crate::memory::{MemError, Memory};
use crate::syscall::{Kernel, VfsError, VirtualFs};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LoadError {
    #[error("cannot read `{path}`: {message}")]
    Io { path: String, message: String },
    #[error("manifest line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("{0}")]
    Asm(#[from] AsmError),
    #[error("{0}")]
    Memory(#[from] MemError),
    #[error("{0}")]
    Vfs(#[from] VfsError),
    #[error("`{file}`: invalid hex data: {message}")]
    BadHex { file: String, message: String },
    #[error("manifest has no `entry` line")]
    MissingEntry,
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("entry point {0:#x} is not mapped")]
    EntryUnmapped(u64),
    #[error("{what} {addr:#x} is not 4-byte aligned")]
    Misaligned { what: &'static str, addr: u64 },
    #[error("trusted range {lo:#x}..={hi:#x} is empty")]
    TrustedInverted { lo: u64, hi: u64 },
    #[error("trusted range {lo:#x}..={hi:#x} is not fully mapped (first hole at {hole:#x})")]
    TrustedUnmapped { lo: u64, hi: u64, hole: u64 },
    #[error("handler {0:#x} lies outside the trusted range")]
    HandlerOutsideTrusted(u64),
    #[error("handler {0:#x} is not mapped")]
    HandlerUnmapped(u64),
}

/// An address given as a number or as an assembly symbol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AddrRef {
    Addr(u64),
    Symbol(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentSpec {
    pub base: u64,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VfsContent {
    Bytes(Vec<u8>),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VfsSpec {
    pub path: String,
    pub content: VfsContent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub entry: AddrRef,
    pub trusted: Option<(AddrRef, AddrRef)>,
    pub segments: Vec<SegmentSpec>,
    pub vfs: Vec<VfsSpec>,
    pub handler: Option<AddrRef>,
}

fn parse_number(s: &str) -> Option<u64> {
    let clean = s.replace('_', "");
    match clean.strip_prefix("0x").or(clean.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16).ok(),
        None => clean.parse().ok(),
    }
}

fn parse_addr(s: &str) -> AddrRef {
    match parse_number(s) {
        Some(v) => AddrRef::Addr(v),
        None => AddrRef::Symbol(s.to_owned()),
    }
}

/// Parses whitespace-separated hex tokens; each token holds whole bytes.
pub fn parse_hex(text: &str) -> Result<Vec<u8>, String> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line.split_whitespace() {
            let tok = tok.strip_prefix("0x").unwrap_or(tok);
            if tok.len() % 2 != 0 {
                return Err(format!("token `{tok}` has an odd number of digits"));
            }
            for i in (0..tok.len()).step_by(2) {
                let byte = u8::from_str_radix(&tok[i..i + 2], 16)
                    .map_err(|_| format!("token `{tok}` is not hex"))?;
                out.push(byte);
            }
        }
    }
    Ok(out)
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Manifest, LoadError> {
        let mut entry = None;
        let mut trusted = None;
        let mut handler = None;
        let mut segments = Vec::new();
        let mut vfs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: String| LoadError::Syntax { line, message };
            let fields: Vec<&str> = raw
                .split('#')
                .next()
                .unwrap_or("")
                .split_whitespace()
                .collect();
            let Some((&key, args)) = fields.split_first() else {
                continue;
            };
            let want = |n: usize| {
                if args.len() == n {
                    Ok(())
                } else {
                    Err(err(format!("`{key}` takes {n} argument(s)")))
                }
            };
            match key {
                "entry" => {
                    want(1)?;
                    if entry.replace(parse_addr(args[0])).is_some() {
                        return Err(err("duplicate `entry`".into()));
                    }
                }
                "trusted" => {
                    want(2)?;
                    let range = (parse_addr(args[0]), parse_addr(args[1]));
                    if trusted.replace(range).is_some() {
                        return Err(err("only one trusted range is supported".into()));
                    }
                }
                "handler" => {
                    want(1)?;
                    if handler.replace(parse_addr(args[0])).is_some() {
                        return Err(err("duplicate `handler`".into()));
                    }
                }
                "segment" => {
                    want(2)?;
                    let base = parse_number(args[0]).ok_or_else(|| {
                        err(format!("segment base `{}` is not a number", args[0]))
                    })?;
                    let path = PathBuf::from(args[1]);
                    match path.extension().and_then(|e| e.to_str()) {
                        Some("s" | "hex") => {}
                        _ => {
                            return Err(err(format!(
                                "segment file `{}` must end in .s or .hex",
                                args[1]
                            )))
                        }
                    }
                    segments.push(SegmentSpec { base, path });
                }
                "vfs" => {
                    if args.is_empty() || args.len() > 2 {
                        return Err(err("`vfs` takes a path and optional content".into()));
                    }
                    let content = match args.get(1) {
                        None => VfsContent::Bytes(Vec::new()),
                        Some(c) => match c.strip_prefix('@') {
                            Some(file) => VfsContent::File(PathBuf::from(file)),
                            None => VfsContent::Bytes(parse_hex(c).map_err(err)?),
                        },
                    };
                    vfs.push(VfsSpec {
                        path: args[0].to_owned(),
                        content,
                    });
                }
                other => return Err(err(format!("unknown directive `{other}`"))),
            }
        }
        Ok(Manifest {
            entry: entry.ok_or(LoadError::MissingEntry)?,
            trusted,
            segments,
            vfs,
            handler,
        })
    }
}

/// A fully resolved, validated program ready to install.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub memory: Memory,
    pub symbols: std::collections::BTreeMap<String, u64>,
    pub entry: u64,
    pub trusted: Option<(u64, u64)>,
    pub handler: Option<u64>,
    pub vfs: VirtualFs,
}

impl Image {
    /// Builds an image; `read` fetches files named by the manifest.
    pub fn build(
        manifest: &Manifest,
        read: &dyn Fn(&Path) -> Result<Vec<u8>, LoadError>,
    ) -> Result<Image, LoadError> {
        let mut memory = Memory::new();
        let mut sources = Vec::new();
        for seg in &manifest.segments {
            let bytes = read(&seg.path)?;
            let name = seg.path.display().to_string();
            if seg.path.extension().is_some_and(|e| e == "hex") {
                let text = String::from_utf8_lossy(&bytes);
                let data = parse_hex(&text).map_err(|message| LoadError::BadHex {
                    file: name.clone(),
                    message,
                })?;
                memory.map(seg.base, data, name)?;
            } else {
                let text = String::from_utf8(bytes).map_err(|_| LoadError::Io {
                    path: name.clone(),
                    message: "not valid UTF-8".into(),
                })?;
                sources.push((name, text, seg.base));
            }
        }
        let units: Vec<SourceUnit<'_>> = sources
            .iter()
            .map(|(name, text, base)| SourceUnit {
                name,
                text,
                base: *base,
            })
            .collect();
        let program = assemble_units(&units)?;
        for chunk in program.chunks {
            memory.map(chunk.base, chunk.bytes, chunk.label)?;
        }
        let symbols = program.symbols;
        let resolve = |r: &AddrRef| match r {
            AddrRef::Addr(a) => Ok(*a),
            AddrRef::Symbol(s) => symbols
                .get(s)
                .copied()
                .ok_or_else(|| LoadError::UnknownSymbol(s.clone())),
        };

        let entry = resolve(&manifest.entry)?;
        if entry % 4 != 0 {
            return Err(LoadError::Misaligned {
                what: "entry point",
                addr: entry,
            });
        }
        if !memory.is_range_mapped(entry, 4) {
            return Err(LoadError::EntryUnmapped(entry));
        }
        let trusted = match &manifest.trusted {
            Some((lo, hi)) => {
                let (lo, hi) = (resolve(lo)?, resolve(hi)?);
                if lo > hi {
                    return Err(LoadError::TrustedInverted { lo, hi });
                }
                if let Some(hole) = memory.first_unmapped(lo, hi - lo + 1) {
                    return Err(LoadError::TrustedUnmapped { lo, hi, hole });
                }
                Some((lo, hi))
            }
            None => None,
        };
        let handler = match &manifest.handler {
            Some(h) => {
                let h = resolve(h)?;
                if h % 4 != 0 {
                    return Err(LoadError::Misaligned {
                        what: "handler",
                        addr: h,
                    });
                }
                if !memory.is_range_mapped(h, 4) {
                    return Err(LoadError::HandlerUnmapped(h));
                }
                if let Some((lo, hi)) = trusted {
                    if h < lo || h > hi {
                        return Err(LoadError::HandlerOutsideTrusted(h));
                    }
                }
                Some(h)
            }
            None => None,
        };
        let mut vfs = VirtualFs::new();
        for spec in &manifest.vfs {
            let content = match &spec.content {
                VfsContent::Bytes(b) => b.clone(),
                VfsContent::File(p) => read(p)?,
            };
            vfs.add_file(&spec.path, content)?;
        }
        Ok(Image {
            memory,
            symbols,
            entry,
            trusted,
            handler,
            vfs,
        })
    }

    /// Reads a manifest from disk; relative file names resolve against the
    /// manifest's directory.
    pub fn from_manifest_path(path: &Path) -> Result<Image, LoadError> {
        let io = |p: &Path, e: std::io::Error| LoadError::Io {
            path: p.display().to_string(),
            message: e.to_string(),
        };
        let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
        let manifest = Manifest::parse(&text)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let read = |p: &Path| -> Result<Vec<u8>, LoadError> {
            let full = dir.join(p);
            std::fs::read(&full).map_err(|e| io(&full, e))
        };
        Image::build(&manifest, &read)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    /// Enable DASICS when the manifest declares a trusted range.
    pub dasics: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { dasics: true }
    }
}

/// Installs `image` into `machine`, replacing its memory and kernel state.
pub fn load(image: &Image, machine: &mut Machine, opts: LoadOptions) {
    machine.mem = image.memory.clone();
    machine.regs.pc = image.entry;
    machine.csrs.ustatus = USTATUS_UIE | USTATUS_UPIE;
    machine.csrs.utvec = image.handler.unwrap_or(0);
    let (lo, hi, enable) = match image.trusted {
        Some((lo, hi)) => (lo, hi, opts.dasics),
        None => (0, 0, false),
    };
    machine
        .csrs
        .host_set_umain(lo, hi, enable)
        .expect("validated trusted range");
    machine.kernel = Kernel::new(image.vfs.clone());
}
