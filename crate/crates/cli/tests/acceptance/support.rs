//! Helpers shared by the acceptance criteria.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use dasics_core::{
    load, CheckSubject, EventKind, FaultPolicy, Image, LoadError, LoadOptions, Machine,
    MachineConfig, Manifest, TraceEvent, Verdict,
};

pub type Outcome = Result<String, String>;

/// Returns early with a failure message unless `cond` holds.
macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}
pub(crate) use ensure;

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn fixture(name: &str) -> PathBuf {
    fixtures_dir().join(format!("{name}.manifest"))
}

/// Builds an image from manifest text whose segment files are supplied
/// in memory.
pub fn image_from_sources(manifest: &str, files: &[(&str, &str)]) -> Result<Image, LoadError> {
    let m = Manifest::parse(manifest)?;
    let map: HashMap<PathBuf, Vec<u8>> = files
        .iter()
        .map(|(n, t)| (PathBuf::from(n), t.as_bytes().to_vec()))
        .collect();
    Image::build(&m, &|p: &Path| {
        map.get(p).cloned().ok_or_else(|| LoadError::Io {
            path: p.display().to_string(),
            message: "not supplied".into(),
        })
    })
}

pub fn machine(image: &Image, dasics: bool, policy: FaultPolicy) -> Machine {
    let mut m = Machine::new(MachineConfig {
        fault_policy: policy,
    });
    load(image, &mut m, LoadOptions { dasics });
    m
}

/// Memory checks as `(kind name, addr, len, passed, rule text)`.
pub fn memory_checks(events: &[TraceEvent]) -> Vec<(&'static str, u64, u64, bool, String)> {
    events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::Check {
                subject: CheckSubject::Memory { kind, addr, len },
                result,
                ..
            } => Some((
                kind.name(),
                *addr,
                u64::from(*len),
                result.verdict == Verdict::Pass,
                result.rule.to_string(),
            )),
            _ => None,
        })
        .collect()
}

pub fn overlaps(addr: u64, len: u64, lo: u64, hi_excl: u64) -> bool {
    addr < hi_excl && lo < addr.saturating_add(len)
}

pub fn contains_bytes(hay: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}
