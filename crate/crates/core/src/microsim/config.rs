//! Machine configuration and its `key = value` text form.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ir::{BinOp, Opcode, Region};
use crate::verifier::SpmLayout;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CacheConfig {
    pub size: u64,
    pub assoc: u64,
    pub line: u64,
    pub hit_latency: u64,
}

impl CacheConfig {
    pub fn sets(&self) -> u64 {
        self.size / (self.assoc * self.line)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PredictorConfig {
    AlwaysTaken,
    Bimodal {
        entries: u64,
    },
    Tournament {
        /// Global history length; global and choice tables have 2^bits entries.
        global_bits: u32,
        /// Local history table has 2^bits entries.
        local_entries_bits: u32,
        /// Local history length; the local counter table has 2^bits entries.
        local_history_bits: u32,
    },
}

impl PredictorConfig {
    pub const DEFAULT_TOURNAMENT: PredictorConfig = PredictorConfig::Tournament {
        global_bits: 16,
        local_entries_bits: 12,
        local_history_bits: 16,
    };

    pub fn name(&self) -> &'static str {
        match self {
            PredictorConfig::AlwaysTaken => "always-taken",
            PredictorConfig::Bimodal { .. } => "bimodal",
            PredictorConfig::Tournament { .. } => "tournament",
        }
    }

    /// Storage in bytes.
    pub fn storage_bytes(&self) -> u64 {
        match *self {
            PredictorConfig::AlwaysTaken => 0,
            PredictorConfig::Bimodal { entries } => entries * 2 / 8,
            PredictorConfig::Tournament {
                global_bits,
                local_entries_bits,
                local_history_bits,
            } => {
                let bits = 2 * (1u64 << global_bits) * 2
                    + (1u64 << local_entries_bits) * local_history_bits as u64
                    + (1u64 << local_history_bits) * 2;
                bits / 8
            }
        }
    }
}

/// Cycles per operation class. Loads and stores are timed by the memory
/// system instead.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct OpLatencies {
    pub alu: u64,
    pub mul: u64,
    pub cmp: u64,
    pub select: u64,
    pub konst: u64,
    pub branch: u64,
    pub call: u64,
    pub ret: u64,
}

impl OpLatencies {
    #[inline]
    pub fn of(&self, op: Opcode) -> u64 {
        match op {
            Opcode::Bin(BinOp::Mul) => self.mul,
            Opcode::Bin(BinOp::CmpEq | BinOp::CmpLt) => self.cmp,
            Opcode::Bin(_) => self.alu,
            Opcode::Select => self.select,
            Opcode::Const => self.konst,
            Opcode::Branch | Opcode::CondBranch | Opcode::LoopBranch => self.branch,
            Opcode::Call => self.call,
            Opcode::Return => self.ret,
            Opcode::Load | Opcode::Store => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MicroarchConfig {
    pub l1i: CacheConfig,
    pub l1d: CacheConfig,
    pub l2: CacheConfig,
    pub mem_latency: u64,
    pub predictor: PredictorConfig,
    /// Predictor used while in Ozone mode, always started fresh.
    pub ozone_predictor: PredictorConfig,
    pub mispredict_penalty: u64,
    pub latency: OpLatencies,
    pub spm_latency: u64,
    pub spm: SpmLayout,
    pub step_cap: u64,
}

impl Default for MicroarchConfig {
    fn default() -> Self {
        let l1 = CacheConfig {
            size: 32 * 1024,
            assoc: 4,
            line: 64,
            hit_latency: 2,
        };
        MicroarchConfig {
            l1i: l1,
            l1d: l1,
            l2: CacheConfig {
                size: 256 * 1024,
                assoc: 4,
                line: 64,
                hit_latency: 12,
            },
            mem_latency: 100,
            predictor: PredictorConfig::DEFAULT_TOURNAMENT,
            ozone_predictor: PredictorConfig::AlwaysTaken,
            mispredict_penalty: 14,
            latency: OpLatencies {
                alu: 1,
                mul: 3,
                cmp: 1,
                select: 1,
                konst: 1,
                branch: 1,
                call: 1,
                ret: 1,
            },
            spm_latency: 1,
            spm: SpmLayout::default(),
            step_cap: crate::ir::DEFAULT_STEP_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {0}: expected `key = value`")]
    Syntax(usize),
    #[error("line {0}: unknown key `{1}`")]
    UnknownKey(usize, String),
    #[error("line {0}: bad value for `{1}`")]
    BadValue(usize, String),
    #[error("{0}")]
    Invalid(String),
}

fn pow2(name: &str, v: u64) -> Result<(), ConfigError> {
    if v == 0 || !v.is_power_of_two() {
        Err(ConfigError::Invalid(format!("{name} = {v} is not a power of two")))
    } else {
        Ok(())
    }
}

fn positive(name: &str, v: u64) -> Result<(), ConfigError> {
    if v == 0 {
        Err(ConfigError::Invalid(format!("{name} must be at least 1")))
    } else {
        Ok(())
    }
}

impl MicroarchConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, c) in [("l1i", &self.l1i), ("l1d", &self.l1d), ("l2", &self.l2)] {
            pow2(&format!("{name}.size"), c.size)?;
            pow2(&format!("{name}.assoc"), c.assoc)?;
            pow2(&format!("{name}.line"), c.line)?;
            if c.assoc * c.line > c.size {
                return Err(ConfigError::Invalid(format!(
                    "{name}: assoc * line exceeds size"
                )));
            }
            positive(&format!("{name}.hit_latency"), c.hit_latency)?;
        }
        positive("mem_latency", self.mem_latency)?;
        positive("mispredict_penalty", self.mispredict_penalty)?;
        positive("spm_latency", self.spm_latency)?;
        positive("step_cap", self.step_cap)?;
        let l = &self.latency;
        for (n, v) in [
            ("alu", l.alu),
            ("mul", l.mul),
            ("cmp", l.cmp),
            ("select", l.select),
            ("const", l.konst),
            ("branch", l.branch),
            ("call", l.call),
            ("ret", l.ret),
        ] {
            positive(&format!("latency.{n}"), v)?;
        }
        for p in [self.predictor, self.ozone_predictor] {
            match p {
                PredictorConfig::Bimodal { entries } => pow2("bimodal.entries", entries)?,
                PredictorConfig::Tournament {
                    global_bits,
                    local_entries_bits,
                    local_history_bits,
                } => {
                    if global_bits > 24 || local_entries_bits > 24 || local_history_bits > 16 {
                        return Err(ConfigError::Invalid(
                            "tournament table sizes out of range".into(),
                        ));
                    }
                }
                PredictorConfig::AlwaysTaken => {}
            }
        }
        SpmLayout::new(self.spm.ispm, self.spm.dspm, self.spm.stack)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    fn entries(&self) -> Vec<(String, String)> {
        let mut kv: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| kv.push((k.to_string(), v));
        for (name, c) in [("l1i", &self.l1i), ("l1d", &self.l1d), ("l2", &self.l2)] {
            put(&format!("{name}.size"), c.size.to_string());
            put(&format!("{name}.assoc"), c.assoc.to_string());
            put(&format!("{name}.line"), c.line.to_string());
            put(&format!("{name}.hit_latency"), c.hit_latency.to_string());
        }
        put("mem_latency", self.mem_latency.to_string());
        put("mispredict_penalty", self.mispredict_penalty.to_string());
        for (prefix, p) in [("predictor", self.predictor), ("ozone_predictor", self.ozone_predictor)] {
            put(prefix, p.name().to_string());
            match p {
                PredictorConfig::AlwaysTaken => {}
                PredictorConfig::Bimodal { entries } => {
                    put(&format!("{prefix}.entries"), entries.to_string())
                }
                PredictorConfig::Tournament {
                    global_bits,
                    local_entries_bits,
                    local_history_bits,
                } => {
                    put(&format!("{prefix}.global_bits"), global_bits.to_string());
                    put(
                        &format!("{prefix}.local_entries_bits"),
                        local_entries_bits.to_string(),
                    );
                    put(
                        &format!("{prefix}.local_history_bits"),
                        local_history_bits.to_string(),
                    );
                }
            }
        }
        let l = &self.latency;
        for (n, v) in [
            ("alu", l.alu),
            ("mul", l.mul),
            ("cmp", l.cmp),
            ("select", l.select),
            ("const", l.konst),
            ("branch", l.branch),
            ("call", l.call),
            ("ret", l.ret),
        ] {
            put(&format!("latency.{n}"), v.to_string());
        }
        put("spm_latency", self.spm_latency.to_string());
        put("spm.ispm_base", format!("{:#x}", self.spm.ispm.base));
        put("spm.ispm_size", format!("{:#x}", self.spm.ispm.size));
        put("spm.dspm_base", format!("{:#x}", self.spm.dspm.base));
        put("spm.dspm_size", format!("{:#x}", self.spm.dspm.size));
        put("spm.stack_base", format!("{:#x}", self.spm.stack.base));
        put("spm.stack_size", format!("{:#x}", self.spm.stack.size));
        put("step_cap", self.step_cap.to_string());
        kv
    }

    /// Canonical text: every key, one per line, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Hex SHA-256 of the canonical text.
    pub fn hash_hex(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    /// Keys not mentioned keep their default values.
    pub fn parse(text: &str) -> Result<MicroarchConfig, ConfigError> {
        let mut kv: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax(i + 1))?;
            kv.insert(k.trim().to_string(), (i + 1, v.trim().to_string()));
        }
        let mut cfg = MicroarchConfig::default();
        let num = |k: &str, line: usize, v: &str| -> Result<u64, ConfigError> {
            let v = v.replace('_', "");
            let parsed = match v.strip_prefix("0x") {
                Some(h) => u64::from_str_radix(h, 16),
                None => v.parse(),
            };
            parsed.map_err(|_| ConfigError::BadValue(line, k.to_string()))
        };

        // predictor kinds first so their size keys have somewhere to go
        for prefix in ["predictor", "ozone_predictor"] {
            if let Some((line, v)) = kv.get(prefix) {
                let p = match v.as_str() {
                    "always-taken" => PredictorConfig::AlwaysTaken,
                    "bimodal" => PredictorConfig::Bimodal { entries: 4096 },
                    "tournament" => PredictorConfig::DEFAULT_TOURNAMENT,
                    _ => return Err(ConfigError::BadValue(*line, prefix.into())),
                };
                if prefix == "predictor" {
                    cfg.predictor = p;
                } else {
                    cfg.ozone_predictor = p;
                }
            }
        }

        let mut ispm = cfg.spm.ispm;
        let mut dspm = cfg.spm.dspm;
        let mut stack = cfg.spm.stack;
        let mut stack_base_set = false;
        for (k, (line, v)) in &kv {
            let line = *line;
            if k == "predictor" || k == "ozone_predictor" {
                continue;
            }
            let n = num(k, line, v)?;
            let small = || u32::try_from(n).map_err(|_| ConfigError::BadValue(line, k.clone()));
            let (head, field) = k.split_once('.').unwrap_or((k.as_str(), ""));
            match (head, field) {
                ("l1i" | "l1d" | "l2", f) => {
                    let c = match head {
                        "l1i" => &mut cfg.l1i,
                        "l1d" => &mut cfg.l1d,
                        _ => &mut cfg.l2,
                    };
                    match f {
                        "size" => c.size = n,
                        "assoc" => c.assoc = n,
                        "line" => c.line = n,
                        "hit_latency" => c.hit_latency = n,
                        _ => return Err(ConfigError::UnknownKey(line, k.clone())),
                    }
                }
                ("mem_latency", "") => cfg.mem_latency = n,
                ("mispredict_penalty", "") => cfg.mispredict_penalty = n,
                ("spm_latency", "") => cfg.spm_latency = n,
                ("step_cap", "") => cfg.step_cap = n,
                ("predictor" | "ozone_predictor", f) => {
                    let p = if head == "predictor" {
                        &mut cfg.predictor
                    } else {
                        &mut cfg.ozone_predictor
                    };
                    match (p, f) {
                        (PredictorConfig::Bimodal { entries }, "entries") => *entries = n,
                        (PredictorConfig::Tournament { global_bits, .. }, "global_bits") => {
                            *global_bits = small()?
                        }
                        (
                            PredictorConfig::Tournament {
                                local_entries_bits, ..
                            },
                            "local_entries_bits",
                        ) => *local_entries_bits = small()?,
                        (
                            PredictorConfig::Tournament {
                                local_history_bits, ..
                            },
                            "local_history_bits",
                        ) => *local_history_bits = small()?,
                        _ => return Err(ConfigError::UnknownKey(line, k.clone())),
                    }
                }
                ("latency", f) => {
                    let l = &mut cfg.latency;
                    match f {
                        "alu" => l.alu = n,
                        "mul" => l.mul = n,
                        "cmp" => l.cmp = n,
                        "select" => l.select = n,
                        "const" => l.konst = n,
                        "branch" => l.branch = n,
                        "call" => l.call = n,
                        "ret" => l.ret = n,
                        _ => return Err(ConfigError::UnknownKey(line, k.clone())),
                    }
                }
                ("spm", f) => match f {
                    "ispm_base" => ispm.base = n,
                    "ispm_size" => ispm.size = n,
                    "dspm_base" => dspm.base = n,
                    "dspm_size" => dspm.size = n,
                    "stack_base" => {
                        stack.base = n;
                        stack_base_set = true;
                    }
                    "stack_size" => stack.size = n,
                    _ => return Err(ConfigError::UnknownKey(line, k.clone())),
                },
                _ => return Err(ConfigError::UnknownKey(line, k.clone())),
            }
        }
        if !stack_base_set {
            // keep the stack at the top of the data scratchpad
            stack.base = dspm.end().saturating_sub(stack.size);
        }
        cfg.spm = SpmLayout::new(
            Region::new(ispm.base, ispm.size),
            Region::new(dspm.base, dspm.size),
            stack,
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
