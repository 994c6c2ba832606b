//! Benchmark kernels in baseline and Ozone form, with host reference
//! implementations.

pub mod aes;
pub mod keymap;
pub mod rsa;
pub mod sha512;

use std::collections::HashMap;
use std::sync::OnceLock;

use rand::Rng;
use thiserror::Error;

use crate::ifconv::{convert_program, ConvertError};
use crate::ir::{
    AddrSpace, DataInit, DataLayout, DataObject, Function, Inst, Program, Region,
};
use crate::verifier::SpmLayout;

pub(crate) const MAIN: AddrSpace = AddrSpace::Main;

/// Bytes reserved per activation for the return address and frame link.
pub const FRAME_OVERHEAD: u64 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Footprint {
    pub code_bytes: u64,
    /// Read-only tables plus writable globals.
    pub data_bytes: u64,
    /// Deepest call chain from the entry, in bytes.
    pub max_stack: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FootprintError {
    #[error("recursion through `{0}`: stack is unbounded")]
    Recursion(String),
    #[error("call to unknown function `{0}`")]
    Unknown(String),
}

/// Activation size: frame overhead plus a spill slot per register.
pub fn frame_bytes(f: &Function) -> u64 {
    FRAME_OVERHEAD + 8 * f.reg_bound() as u64
}

/// Code, data and stack requirements of `p`.
pub fn footprint(p: &Program) -> Result<Footprint, FootprintError> {
    fn depth<'a>(
        p: &'a Program,
        name: &'a str,
        memo: &mut HashMap<&'a str, u64>,
        active: &mut Vec<&'a str>,
    ) -> Result<u64, FootprintError> {
        if let Some(d) = memo.get(name) {
            return Ok(*d);
        }
        if active.contains(&name) {
            return Err(FootprintError::Recursion(name.to_string()));
        }
        let f = p
            .function(name)
            .ok_or_else(|| FootprintError::Unknown(name.to_string()))?;
        active.push(name);
        let mut deepest = 0;
        for c in f.callees() {
            deepest = deepest.max(depth(p, c, memo, active)?);
        }
        active.pop();
        let d = frame_bytes(f) + deepest;
        memo.insert(name, d);
        Ok(d)
    }
    let max_stack = depth(p, &p.entry, &mut HashMap::new(), &mut Vec::new())?;
    Ok(Footprint {
        code_bytes: p.code_bytes(),
        data_bytes: p.data.iter().map(|d| d.size()).sum(),
        max_stack,
    })
}

pub(crate) fn obj_bytes(name: &str, bytes: Vec<u8>) -> DataObject {
    DataObject {
        name: name.into(),
        addr: 0,
        init: DataInit::Bytes(bytes),
    }
}

pub(crate) fn obj_zeroed(name: &str, size: u64) -> DataObject {
    DataObject {
        name: name.into(),
        addr: 0,
        init: DataInit::Zeroed(size),
    }
}

pub(crate) fn le_words(w: &[u32]) -> Vec<u8> {
    w.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub(crate) fn le_words64(w: &[u64]) -> Vec<u8> {
    w.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Assigns consecutive addresses from `base`, each object starting on an
/// `align` boundary.
fn place(objects: &mut [DataObject], base: u64, align: u64) {
    let mut at = base;
    for o in objects.iter_mut() {
        at = at.next_multiple_of(align);
        o.addr = at;
        at += o.size();
    }
}

/// Where baseline kernels keep their data in main memory.
pub const BASELINE_DATA_BASE: u64 = 0x0060_0000;
/// Alignment of each baseline data object.
pub const BASELINE_DATA_ALIGN: u64 = 0x1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Baseline,
    Ozone,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Ozone => "ozone",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = KernelError;
    fn from_str(s: &str) -> Result<Self, KernelError> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "ozone" => Ok(Variant::Ozone),
            _ => Err(KernelError::Unknown(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("unknown kernel `{0}`")]
    Unknown(String),
    #[error("bad input for `{kernel}`: {why}")]
    BadInput { kernel: String, why: String },
    #[error("byte index {index} out of range for `{kernel}`")]
    ByteIndex { kernel: String, index: usize },
    #[error(transparent)]
    Convert(#[from] ConvertError),
}

pub const KERNEL_NAMES: [&str; 5] = ["aes-cbc", "aes-xts", "gdk-keymap", "rsa-modexp", "sha512"];

pub struct KernelEntry {
    pub name: &'static str,
    pub baseline: Program,
    pub ozone: Program,
    /// Scratchpads the Ozone variant is placed in.
    pub layout: SpmLayout,
    pub arity: usize,
    pub outputs: usize,
    /// Bytes addressable by `sweep_inputs`.
    pub sweep_bytes: usize,
}

pub struct KernelCatalog {
    entries: Vec<KernelEntry>,
}

impl KernelCatalog {
    pub fn get(&self, name: &str) -> Result<&KernelEntry, KernelError> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| KernelError::Unknown(name.to_string()))
    }

    pub fn entries(&self) -> &[KernelEntry] {
        &self.entries
    }
}

fn assemble(functions: Vec<Function>, data: Vec<DataObject>) -> Program {
    let mut data = data;
    place(&mut data, BASELINE_DATA_BASE, BASELINE_DATA_ALIGN);
    Program {
        functions,
        entry: "main".into(),
        data,
        layout: DataLayout::default(),
    }
}

/// Moves code and data into the scratchpads and retags every access.
pub fn to_scratchpad(p: &Program, layout: &SpmLayout) -> Program {
    let mut q = p.clone();
    for f in &mut q.functions {
        for b in &mut f.blocks {
            for i in &mut b.insts {
                match i {
                    Inst::Load { space, .. } | Inst::Store { space, .. } => *space = AddrSpace::Spm,
                    _ => {}
                }
            }
        }
    }
    place(&mut q.data, layout.dspm.base, 64);
    q.layout = DataLayout {
        code_base: layout.ispm.base,
        stack: Region::new(layout.stack.base, layout.stack.size),
    };
    q
}

fn entry(
    name: &'static str,
    baseline: Vec<Function>,
    ozone_src: Option<Vec<Function>>,
    data: Vec<DataObject>,
    arity: usize,
    outputs: usize,
    sweep_bytes: usize,
) -> Result<KernelEntry, KernelError> {
    let layout = SpmLayout::default();
    let base = assemble(baseline, data.clone());
    let src = match ozone_src {
        Some(f) => assemble(f, data),
        None => base.clone(),
    };
    let ozone = convert_program(&to_scratchpad(&src, &layout))?;
    Ok(KernelEntry {
        name,
        baseline: base,
        ozone,
        layout,
        arity,
        outputs,
        sweep_bytes,
    })
}

fn build_catalog() -> Result<KernelCatalog, KernelError> {
    Ok(KernelCatalog {
        entries: vec![
            entry("aes-cbc", aes::cbc_functions(), None, aes::data_objects(), 6, 2, 16)?,
            entry("aes-xts", aes::xts_functions(), None, aes::data_objects(), 10, 4, 16)?,
            entry(
                "gdk-keymap",
                keymap::baseline_functions(),
                Some(keymap::ozone_functions()),
                keymap::data_objects(),
                1,
                1,
                1,
            )?,
            entry("rsa-modexp", rsa::functions(), None, rsa::data_objects(), 3, 1, 8)?,
            entry(
                "sha512",
                sha512::baseline_functions(),
                Some(sha512::ozone_functions()),
                sha512::data_objects(),
                17,
                8,
                128,
            )?,
        ],
    })
}

/// The kernel catalog, built on first use.
pub fn catalog() -> &'static KernelCatalog {
    static C: OnceLock<KernelCatalog> = OnceLock::new();
    C.get_or_init(|| build_catalog().expect("kernel catalog builds"))
}

pub fn build_kernel(name: &str, variant: Variant) -> Result<Program, KernelError> {
    let e = catalog().get(name)?;
    Ok(match variant {
        Variant::Baseline => e.baseline.clone(),
        Variant::Ozone => e.ozone.clone(),
    })
}

fn bad(kernel: &str, why: impl Into<String>) -> KernelError {
    KernelError::BadInput {
        kernel: kernel.into(),
        why: why.into(),
    }
}

/// Checks `inputs` against the kernel's input domain.
pub fn check_inputs(name: &str, inputs: &[u64]) -> Result<(), KernelError> {
    let e = catalog().get(name)?;
    if inputs.len() != e.arity {
        return Err(bad(name, format!("expected {} inputs, got {}", e.arity, inputs.len())));
    }
    match name {
        "sha512" if !(1..=sha512::MAX_LEN).contains(&inputs[16]) => {
            Err(bad(name, "length must be 1..=128"))
        }
        "rsa-modexp" if !rsa::valid(inputs) => {
            Err(bad(name, "modulus must be odd and at least 3, base below it"))
        }
        _ => Ok(()),
    }
}

/// Reference outputs computed on the host.
pub fn oracle_eval(name: &str, inputs: &[u64]) -> Result<Vec<u64>, KernelError> {
    check_inputs(name, inputs)?;
    Ok(match name {
        "aes-cbc" => aes::cbc_oracle(inputs),
        "aes-xts" => aes::xts_oracle(inputs),
        "gdk-keymap" => vec![keymap::oracle(inputs[0])],
        "rsa-modexp" => rsa::oracle(inputs),
        "sha512" => sha512::oracle(inputs),
        _ => unreachable!(),
    })
}

fn random_modulus<R: Rng + ?Sized>(rng: &mut R) -> u64 {
    rng.random::<u64>() | 1 | (1 << 63)
}

/// A random input from the kernel's domain.
pub fn random_inputs<R: Rng + ?Sized>(name: &str, rng: &mut R) -> Result<Vec<u64>, KernelError> {
    let e = catalog().get(name)?;
    Ok(match name {
        "gdk-keymap" => vec![keymap::table()[rng.random_range(0..keymap::ENTRIES)].0 as u64],
        "rsa-modexp" => {
            let n = random_modulus(rng);
            vec![rng.random_range(0..n), rng.random(), n]
        }
        "sha512" => {
            let mut v: Vec<u64> = (0..16).map(|_| rng.random()).collect();
            v.push(rng.random_range(1..=sha512::MAX_LEN));
            v
        }
        _ => (0..e.arity).map(|_| rng.random()).collect(),
    })
}

fn set_be_byte(words: &mut [u64], index: usize, value: u8) {
    let shift = 56 - 8 * (index % 8);
    let w = &mut words[index / 8];
    *w = (*w & !(0xff << shift)) | ((value as u64) << shift);
}

/// Input with byte `index` of the kernel's data block fixed to `value`, the
/// rest of the data random, and the secret taken from `key`.
///
/// The data block is the plaintext for the AES kernels (the first block for
/// XTS), the message for sha512, the base for rsa-modexp and a choice among
/// table codes for gdk-keymap.
pub fn sweep_inputs<R: Rng + ?Sized>(
    name: &str,
    key: &[u8; 16],
    index: usize,
    value: u8,
    rng: &mut R,
) -> Result<Vec<u64>, KernelError> {
    let e = catalog().get(name)?;
    if index >= e.sweep_bytes {
        return Err(KernelError::ByteIndex {
            kernel: name.into(),
            index,
        });
    }
    let (k0, k1) = aes::block_to_words(key);
    Ok(match name {
        "aes-cbc" => {
            let mut pt = [rng.random::<u64>(), rng.random()];
            set_be_byte(&mut pt, index, value);
            vec![k0, k1, 0, 0, pt[0], pt[1]]
        }
        "aes-xts" => {
            let mut pt = [rng.random::<u64>(), rng.random()];
            set_be_byte(&mut pt, index, value);
            // fixed tweak key and tweak so only the data key is secret
            vec![k0, k1, !k1, !k0, 0, 0, pt[0], pt[1], rng.random(), rng.random()]
        }
        "gdk-keymap" => {
            let slot = value as usize + 256 * rng.random_range(0..3usize);
            vec![keymap::table()[slot].0 as u64]
        }
        "rsa-modexp" => {
            let n = k1 | 1 | (1 << 63);
            let mut base = [rng.random::<u64>()];
            set_be_byte(&mut base, index, value);
            let b = if base[0] >= n { base[0] - n } else { base[0] };
            vec![b, k0, n]
        }
        "sha512" => {
            let mut v: Vec<u64> = (0..16).map(|_| rng.random()).collect();
            set_be_byte(&mut v, index, value);
            v.push(rng.random_range(1..=sha512::MAX_LEN));
            v
        }
        _ => unreachable!(),
    })
}
