//! Flat little-endian guest memory built from non-overlapping segments.
//!
//! There is no MMU: addresses are used directly, so DASICS bound checks
//! operate on the same addresses that reach memory.

use std::collections::BTreeMap;

use thiserror::Error;

pub const DEFAULT_CAP: u64 = 64 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemError {
    #[error("access fault at {0:#x}")]
    AccessFault(u64),
    #[error("segment `{label}` at {base:#x} overlaps an existing segment")]
    Overlap { base: u64, label: String },
    #[error("mapping `{label}` would exceed the {cap}-byte memory cap")]
    CapExceeded { label: String, cap: u64 },
    #[error("segment `{label}` wraps the address space")]
    Wraps { label: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub base: u64,
    pub bytes: Vec<u8>,
    pub label: String,
}

impl Segment {
    /// Inclusive last address; `None` for an empty segment.
    pub fn last(&self) -> Option<u64> {
        (!self.bytes.is_empty()).then(|| self.base + (self.bytes.len() as u64 - 1))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Memory {
    segments: BTreeMap<u64, Segment>,
    cap: u64,
    mapped: u64,
}

impl Default for Memory {
    fn default() -> Self {
        Memory::with_cap(DEFAULT_CAP)
    }
}

impl Memory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_cap(cap: u64) -> Self {
        Memory {
            segments: BTreeMap::new(),
            cap,
            mapped: 0,
        }
    }

    pub fn segments(&self) -> impl Iterator<Item = &Segment> {
        self.segments.values()
    }

    pub fn mapped_bytes(&self) -> u64 {
        self.mapped
    }

    pub fn map(
        &mut self,
        base: u64,
        bytes: Vec<u8>,
        label: impl Into<String>,
    ) -> Result<(), MemError> {
        let label = label.into();
        if bytes.is_empty() {
            return Ok(());
        }
        let len = bytes.len() as u64;
        let last = base.checked_add(len - 1).ok_or_else(|| MemError::Wraps {
            label: label.clone(),
        })?;
        if self.mapped + len > self.cap {
            return Err(MemError::CapExceeded {
                label,
                cap: self.cap,
            });
        }
        let before = self.segments.range(..=last).next_back();
        if let Some((_, seg)) = before {
            if seg.last().is_some_and(|l| l >= base) {
                return Err(MemError::Overlap { base, label });
            }
        }
        self.mapped += len;
        self.segments.insert(base, Segment { base, bytes, label });
        Ok(())
    }

    fn segment_for(&self, addr: u64) -> Option<&Segment> {
        let (_, seg) = self.segments.range(..=addr).next_back()?;
        (seg.last()? >= addr).then_some(seg)
    }

    fn segment_for_mut(&mut self, addr: u64) -> Option<&mut Segment> {
        let (_, seg) = self.segments.range_mut(..=addr).next_back()?;
        (seg.last()? >= addr).then_some(seg)
    }

    pub fn is_mapped(&self, addr: u64) -> bool {
        self.segment_for(addr).is_some()
    }

    /// True when every byte of `[addr, addr + len)` is mapped.
    pub fn is_range_mapped(&self, addr: u64, len: u64) -> bool {
        self.first_unmapped(addr, len).is_none()
    }

    /// First unmapped byte of `[addr, addr + len)`, if any.
    pub fn first_unmapped(&self, addr: u64, len: u64) -> Option<u64> {
        let mut cur = addr;
        let end = u128::from(addr) + u128::from(len);
        while u128::from(cur) < end {
            let Some(seg) = self.segment_for(cur) else {
                return Some(cur);
            };
            let seg_end = u128::from(seg.base) + seg.bytes.len() as u128;
            if seg_end >= end {
                return None;
            }
            if seg_end > u128::from(u64::MAX) {
                return Some(0);
            }
            cur = seg_end as u64;
            if self.segment_for(cur).is_none() {
                return Some(cur);
            }
        }
        None
    }

    fn locate(&self, addr: u64, len: usize) -> Result<(&Segment, usize), MemError> {
        let seg = self.segment_for(addr).ok_or(MemError::AccessFault(addr))?;
        let off = (addr - seg.base) as usize;
        if off + len > seg.bytes.len() {
            // Adjacent segments are separate objects; a single access never
            // straddles two of them.
            return Err(MemError::AccessFault(addr));
        }
        Ok((seg, off))
    }

    pub fn read(&self, addr: u64, width: u8) -> Result<u64, MemError> {
        debug_assert!(matches!(width, 1 | 2 | 4 | 8));
        let (seg, off) = self.locate(addr, usize::from(width))?;
        let mut buf = [0u8; 8];
        buf[..usize::from(width)].copy_from_slice(&seg.bytes[off..off + usize::from(width)]);
        Ok(u64::from_le_bytes(buf))
    }

    pub fn write(&mut self, addr: u64, width: u8, value: u64) -> Result<(), MemError> {
        debug_assert!(matches!(width, 1 | 2 | 4 | 8));
        let w = usize::from(width);
        let seg = self
            .segment_for_mut(addr)
            .ok_or(MemError::AccessFault(addr))?;
        let off = (addr - seg.base) as usize;
        if off + w > seg.bytes.len() {
            return Err(MemError::AccessFault(addr));
        }
        seg.bytes[off..off + w].copy_from_slice(&value.to_le_bytes()[..w]);
        Ok(())
    }

    /// Byte-wise bulk read; may span adjacent segments.
    pub fn read_bytes(&self, addr: u64, len: u64) -> Result<Vec<u8>, MemError> {
        if let Some(bad) = self.first_unmapped(addr, len) {
            return Err(MemError::AccessFault(bad));
        }
        let mut out = Vec::with_capacity(len as usize);
        for i in 0..len {
            out.push(self.read(addr.wrapping_add(i), 1)? as u8);
        }
        Ok(out)
    }

    /// Byte-wise bulk write; nothing is written unless the whole range is mapped.
    pub fn write_bytes(&mut self, addr: u64, bytes: &[u8]) -> Result<(), MemError> {
        if let Some(bad) = self.first_unmapped(addr, bytes.len() as u64) {
            return Err(MemError::AccessFault(bad));
        }
        for (i, b) in bytes.iter().enumerate() {
            self.write(addr.wrapping_add(i as u64), 1, u64::from(*b))?;
        }
        Ok(())
    }

    /// Reads a NUL-terminated string of at most `max` bytes (terminator excluded).
    pub fn read_cstr(&self, addr: u64, max: usize) -> Result<Vec<u8>, MemError> {
        let mut out = Vec::new();
        for i in 0..=max as u64 {
            let a = addr.wrapping_add(i);
            let b = self.read(a, 1)? as u8;
            if b == 0 {
                return Ok(out);
            }
            if out.len() == max {
                break;
            }
            out.push(b);
        }
        Err(MemError::AccessFault(addr))
    }
}
