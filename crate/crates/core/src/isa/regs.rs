const ABI_NAMES: [&str; 32] = [
    "zero", "ra", "sp", "gp", "tp", "t0", "t1", "t2", "s0", "s1", "a0", "a1", "a2", "a3", "a4",
    "a5", "a6", "a7", "s2", "s3", "s4", "s5", "s6", "s7", "s8", "s9", "s10", "s11", "t3", "t4",
    "t5", "t6",
];

pub fn reg_name(index: u8) -> &'static str {
    ABI_NAMES[usize::from(index & 31)]
}

/// Parses `x0`..`x31`, ABI names, and `fp`.
pub fn parse_reg(name: &str) -> Option<u8> {
    if let Some(n) = name.strip_prefix('x') {
        if let Ok(i) = n.parse::<u8>() {
            return (i < 32).then_some(i);
        }
    }
    if name == "fp" {
        return Some(8);
    }
    ABI_NAMES.iter().position(|&n| n == name).map(|i| i as u8)
}

/// Integer register file and program counter. `x0` is hardwired to zero.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RegisterFile {
    x: [u64; 32],
    pub pc: u64,
}

impl RegisterFile {
    pub fn new(pc: u64) -> Self {
        RegisterFile { x: [0; 32], pc }
    }

    pub fn get(&self, index: u8) -> u64 {
        self.x[usize::from(index & 31)]
    }

    pub fn set(&mut self, index: u8, value: u64) {
        if index & 31 != 0 {
            self.x[usize::from(index & 31)] = value;
        }
    }

    pub fn snapshot(&self) -> [u64; 32] {
        self.x
    }
}
