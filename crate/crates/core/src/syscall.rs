//! Emulated kernel: services `ecall` from trusted code against a
//! deterministic in-memory filesystem.
//!
//! Guest ABI (all integers little-endian):
//!
//! * dirent record: `ino: u64`, `off: u64`, `reclen: u16`, `type: u8`,
//!   NUL-terminated name, zero padding to a multiple of 8 bytes. `type` is 4
//!   for a directory and 8 for a regular file; `off` is the cursor value just
//!   past this record.
//! * stat record (16 bytes): `size: u64`, `kind: u8` (1 = file,
//!   2 = directory), zero padding.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::isa::RegisterFile;
use crate::memory::{MemError, Memory};
use crate::trap::{TrapCause, TrapKind};

pub const SYS_OPENAT: u64 = 56;
pub const SYS_CLOSE: u64 = 57;
pub const SYS_GETDENTS: u64 = 61;
pub const SYS_READ: u64 = 63;
pub const SYS_WRITE: u64 = 64;
pub const SYS_FSTATAT: u64 = 79;
pub const SYS_EXIT: u64 = 93;

pub const AT_FDCWD: i64 = -100;
pub const DT_DIR: u8 = 4;
pub const DT_REG: u8 = 8;
pub const STAT_FILE: u8 = 1;
pub const STAT_DIR: u8 = 2;
pub const STAT_SIZE: usize = 16;

const PATH_MAX: usize = 4096;
const FIRST_FD: u64 = 3;

pub fn syscall_name(nr: u64) -> &'static str {
    match nr {
        SYS_OPENAT => "openat",
        SYS_CLOSE => "close",
        SYS_GETDENTS => "getdents",
        SYS_READ => "read",
        SYS_WRITE => "write",
        SYS_FSTATAT => "fstatat",
        SYS_EXIT => "exit",
        _ => "unknown",
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VfsError {
    #[error("vfs path `{0}` must be absolute and normalized")]
    BadPath(String),
    #[error("vfs path `{0}` is listed twice")]
    Duplicate(String),
    #[error("vfs path `{0}` is both a file and a directory")]
    FileDirConflict(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VfsFile {
    pub path: String,
    pub content: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    File,
    Dir,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirEntry {
    pub ino: u64,
    pub name: String,
    pub kind: EntryKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Node {
    File(usize),
    Dir,
}

/// Read-only file tree. Directories exist implicitly as path prefixes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VirtualFs {
    files: Vec<VfsFile>,
}

/// Collapses `.`/`..`/empty components; `None` if `..` escapes the root.
pub fn normalize(path: &str) -> Option<String> {
    let mut parts: Vec<&str> = Vec::new();
    for comp in path.split('/') {
        match comp {
            "" | "." => {}
            ".." => {
                parts.pop()?;
            }
            c => parts.push(c),
        }
    }
    Some(format!("/{}", parts.join("/")))
}

impl VirtualFs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn files(&self) -> &[VfsFile] {
        &self.files
    }

    pub fn add_file(&mut self, path: &str, content: Vec<u8>) -> Result<(), VfsError> {
        if !path.starts_with('/') || normalize(path).as_deref() != Some(path) || path == "/" {
            return Err(VfsError::BadPath(path.to_owned()));
        }
        if self.files.iter().any(|f| f.path == path) {
            return Err(VfsError::Duplicate(path.to_owned()));
        }
        let as_dir = format!("{path}/");
        let conflict = self
            .files
            .iter()
            .any(|f| f.path.starts_with(&as_dir) || path.starts_with(&format!("{}/", f.path)));
        if conflict {
            return Err(VfsError::FileDirConflict(path.to_owned()));
        }
        self.files.push(VfsFile {
            path: path.to_owned(),
            content,
        });
        Ok(())
    }

    pub fn lookup(&self, path: &str) -> Option<Node> {
        if path == "/" {
            return Some(Node::Dir);
        }
        if let Some(i) = self.files.iter().position(|f| f.path == path) {
            return Some(Node::File(i));
        }
        let prefix = format!("{path}/");
        self.files
            .iter()
            .any(|f| f.path.starts_with(&prefix))
            .then_some(Node::Dir)
    }

    /// Immediate children of `dir`, in manifest order.
    pub fn list_dir(&self, dir: &str) -> Vec<DirEntry> {
        let prefix = if dir == "/" {
            "/".to_owned()
        } else {
            format!("{dir}/")
        };
        let mut out: Vec<DirEntry> = Vec::new();
        for (i, f) in self.files.iter().enumerate() {
            let Some(rest) = f.path.strip_prefix(&prefix) else {
                continue;
            };
            let (name, kind) = match rest.split_once('/') {
                Some((head, _)) => (head, EntryKind::Dir),
                None => (rest, EntryKind::File),
            };
            if out.iter().any(|e| e.name == name) {
                continue;
            }
            out.push(DirEntry {
                ino: i as u64 + 1,
                name: name.to_owned(),
                kind,
            });
        }
        out
    }
}

/// Encodes one dirent record.
pub fn dirent_record(entry: &DirEntry, next_off: u64) -> Vec<u8> {
    let unpadded = 8 + 8 + 2 + 1 + entry.name.len() + 1;
    let reclen = unpadded.div_ceil(8) * 8;
    let mut rec = Vec::with_capacity(reclen);
    rec.extend_from_slice(&entry.ino.to_le_bytes());
    rec.extend_from_slice(&next_off.to_le_bytes());
    rec.extend_from_slice(&(reclen as u16).to_le_bytes());
    rec.push(match entry.kind {
        EntryKind::Dir => DT_DIR,
        EntryKind::File => DT_REG,
    });
    rec.extend_from_slice(entry.name.as_bytes());
    rec.resize(reclen, 0);
    rec
}

/// Encodes a full directory listing starting at cursor 0.
pub fn dirent_layout(entries: &[DirEntry]) -> Vec<u8> {
    entries
        .iter()
        .enumerate()
        .flat_map(|(i, e)| dirent_record(e, i as u64 + 1))
        .collect()
}

pub fn stat_layout(size: u64, kind: EntryKind) -> [u8; STAT_SIZE] {
    let mut out = [0u8; STAT_SIZE];
    out[..8].copy_from_slice(&size.to_le_bytes());
    out[8] = match kind {
        EntryKind::File => STAT_FILE,
        EntryKind::Dir => STAT_DIR,
    };
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct OpenFile {
    path: String,
    node: Node,
    cursor: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyscallEffect {
    Return(i64),
    Exit(i64),
}

/// Observable record of one serviced syscall.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyscallRecord {
    pub nr: u64,
    pub args: [u64; 6],
    pub effect: SyscallEffect,
    /// Bytes written to a console stream, if any.
    pub data: Option<Vec<u8>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Kernel {
    pub vfs: VirtualFs,
    fds: BTreeMap<u64, OpenFile>,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
}

fn load_fault(e: MemError) -> TrapCause {
    match e {
        MemError::AccessFault(a) => TrapCause::new(TrapKind::LoadAccessFault, a),
        _ => TrapCause::new(TrapKind::LoadAccessFault, 0),
    }
}

fn store_fault(e: MemError) -> TrapCause {
    match e {
        MemError::AccessFault(a) => TrapCause::new(TrapKind::StoreAccessFault, a),
        _ => TrapCause::new(TrapKind::StoreAccessFault, 0),
    }
}

impl Kernel {
    pub fn new(vfs: VirtualFs) -> Self {
        Kernel {
            vfs,
            ..Default::default()
        }
    }

    fn resolve(&self, dirfd: i64, raw: &[u8]) -> Option<String> {
        let path = std::str::from_utf8(raw).ok()?;
        if path.starts_with('/') {
            return normalize(path);
        }
        let base = if dirfd == AT_FDCWD {
            "/".to_owned()
        } else {
            let open = self.fds.get(&(dirfd as u64))?;
            if open.node != Node::Dir {
                return None;
            }
            open.path.clone()
        };
        normalize(&format!("{base}/{path}"))
    }

    fn lowest_free_fd(&self) -> u64 {
        (FIRST_FD..)
            .find(|fd| !self.fds.contains_key(fd))
            .expect("fd space exhausted")
    }

    /// Services the syscall described by `a7` and `a0`..`a5`.
    ///
    /// A guest buffer that is not mapped yields an access-fault trap; in that
    /// case no kernel or memory state has changed.
    pub fn handle_ecall(
        &mut self,
        regs: &RegisterFile,
        mem: &mut Memory,
    ) -> Result<SyscallRecord, TrapCause> {
        let nr = regs.get(17);
        let args: [u64; 6] = std::array::from_fn(|i| regs.get(10 + i as u8));
        let mut data = None;
        let ret = match nr {
            SYS_EXIT => {
                return Ok(SyscallRecord {
                    nr,
                    args,
                    effect: SyscallEffect::Exit(args[0] as i64),
                    data,
                })
            }
            SYS_WRITE => {
                let bytes = mem.read_bytes(args[1], args[2]).map_err(load_fault)?;
                let sink = match args[0] {
                    1 => Some(&mut self.stdout),
                    2 => Some(&mut self.stderr),
                    _ => None,
                };
                match sink {
                    Some(buf) => {
                        buf.extend_from_slice(&bytes);
                        data = Some(bytes);
                        args[2] as i64
                    }
                    None => -1,
                }
            }
            SYS_READ => self.sys_read(args, mem)?,
            SYS_OPENAT => {
                let raw = mem.read_cstr(args[1], PATH_MAX).map_err(load_fault)?;
                match self.resolve(args[0] as i64, &raw) {
                    Some(path) => match self.vfs.lookup(&path) {
                        Some(node) => {
                            let fd = self.lowest_free_fd();
                            self.fds.insert(
                                fd,
                                OpenFile {
                                    path,
                                    node,
                                    cursor: 0,
                                },
                            );
                            fd as i64
                        }
                        None => -1,
                    },
                    None => -1,
                }
            }
            SYS_CLOSE => {
                if self.fds.remove(&args[0]).is_some() {
                    0
                } else {
                    -1
                }
            }
            SYS_GETDENTS => self.sys_getdents(args, mem)?,
            SYS_FSTATAT => {
                let raw = mem.read_cstr(args[1], PATH_MAX).map_err(load_fault)?;
                let node = self
                    .resolve(args[0] as i64, &raw)
                    .and_then(|p| self.vfs.lookup(&p));
                match node {
                    Some(node) => {
                        let rec = match node {
                            Node::File(i) => {
                                stat_layout(self.vfs.files[i].content.len() as u64, EntryKind::File)
                            }
                            Node::Dir => stat_layout(0, EntryKind::Dir),
                        };
                        mem.write_bytes(args[2], &rec).map_err(store_fault)?;
                        0
                    }
                    None => -1,
                }
            }
            _ => -1,
        };
        Ok(SyscallRecord {
            nr,
            args,
            effect: SyscallEffect::Return(ret),
            data,
        })
    }

    fn sys_read(&mut self, args: [u64; 6], mem: &mut Memory) -> Result<i64, TrapCause> {
        if args[0] == 0 {
            return Ok(0);
        }
        let Some(open) = self.fds.get(&args[0]) else {
            return Ok(-1);
        };
        let Node::File(i) = open.node else {
            return Ok(-1);
        };
        let content = &self.vfs.files[i].content;
        let start = (open.cursor as usize).min(content.len());
        let n = (content.len() - start).min(args[2] as usize);
        let chunk = content[start..start + n].to_vec();
        mem.write_bytes(args[1], &chunk).map_err(store_fault)?;
        if let Some(open) = self.fds.get_mut(&args[0]) {
            open.cursor += n as u64;
        }
        Ok(n as i64)
    }

    fn sys_getdents(&mut self, args: [u64; 6], mem: &mut Memory) -> Result<i64, TrapCause> {
        let Some(open) = self.fds.get(&args[0]) else {
            return Ok(-1);
        };
        if open.node != Node::Dir {
            return Ok(-1);
        }
        let entries = self.vfs.list_dir(&open.path);
        let start = open.cursor as usize;
        if start >= entries.len() {
            return Ok(0);
        }
        let capacity = args[2] as usize;
        let mut out = Vec::new();
        let mut consumed = 0;
        for (i, entry) in entries.iter().enumerate().skip(start) {
            let rec = dirent_record(entry, i as u64 + 1);
            if out.len() + rec.len() > capacity {
                break;
            }
            out.extend_from_slice(&rec);
            consumed += 1;
        }
        if consumed == 0 {
            return Ok(-1);
        }
        mem.write_bytes(args[1], &out).map_err(store_fault)?;
        if let Some(open) = self.fds.get_mut(&args[0]) {
            open.cursor += consumed as u64;
        }
        Ok(out.len() as i64)
    }
}
