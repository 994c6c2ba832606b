//! Cycle-level timing model of a single-issue in-order core.
//!
//! Baseline mode runs through split L1 caches, a unified L2 and a stateful
//! branch predictor. Ozone mode runs from scratchpads with a freshly reset
//! predictor and a watchdog that demands an exact cycle count.
//!
//! Each instruction costs its opcode latency, plus any instruction fetch miss
//! penalty, plus the time of its data access, plus the mispredict penalty
//! when its branch direction was guessed wrong.

mod cache;
mod config;
mod predictor;

use sha2::{Digest, Sha256};

use crate::ir::exec::{execute, Hooks, Lowered, Site};
use crate::ir::{AddrSpace, ExecError, IrError, Program, Width, INST_BYTES};
use crate::verifier::SpmLayout;

pub use cache::{cache_access, Cache, CacheState, Level, Outcome, Served};
pub use config::{CacheConfig, ConfigError, MicroarchConfig, OpLatencies, PredictorConfig};
pub use predictor::Predictor;

/// A program lowered once for repeated simulation.
pub struct Compiled {
    lowered: Lowered,
}

impl Compiled {
    pub fn new(p: &Program) -> Result<Compiled, IrError> {
        Ok(Compiled {
            lowered: Lowered::new(p)?,
        })
    }

    pub fn arity(&self) -> usize {
        self.lowered.entry_arity()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Baseline,
    Ozone,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Ozone => "ozone",
        }
    }
}

/// What the caller hands over when starting an Ozone thread.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OzoneContext {
    pub declared_cycles: u64,
    pub layout: SpmLayout,
}

impl OzoneContext {
    pub fn new(declared_cycles: u64, layout: SpmLayout) -> OzoneContext {
        assert!(declared_cycles > 0, "declared cycle count must be positive");
        OzoneContext {
            declared_cycles,
            layout,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SimResult {
    pub cycles: u64,
    pub instructions: u64,
    pub l1i_hits: u64,
    pub l1i_misses: u64,
    pub l1d_hits: u64,
    pub l1d_misses: u64,
    pub l2_hits: u64,
    pub l2_misses: u64,
    pub branches: u64,
    pub mispredictions: u64,
    pub terminated_by_wdt: bool,
    /// Withheld when the watchdog fired.
    pub outputs: Option<Vec<u64>>,
}

pub const CSV_HEADER: &str = "kernel,mode,input_hash,cycles,l1i_miss,l1d_miss,l2_miss,mispred,wdt_flag";

impl SimResult {
    pub fn csv_row(&self, kernel: &str, mode: Mode, input_hash: &str) -> String {
        format!(
            "{kernel},{},{input_hash},{},{},{},{},{},{}",
            mode.name(),
            self.cycles,
            self.l1i_misses,
            self.l1d_misses,
            self.l2_misses,
            self.mispredictions,
            self.terminated_by_wdt as u8
        )
    }
}

/// Short stable digest of an input vector, for result tables.
pub fn input_hash(inputs: &[u64]) -> String {
    let mut h = Sha256::new();
    for v in inputs {
        h.update(v.to_le_bytes());
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

struct Timing<'a> {
    cfg: &'a MicroarchConfig,
    mode: Mode,
    caches: &'a mut CacheState,
    predictor: &'a mut Predictor,
    /// Data scratchpad bounds for SPM-tagged accesses.
    dspm: crate::ir::Region,
    ispm: crate::ir::Region,
    cycles: u64,
    limit: u64,
    instructions: u64,
    branches: u64,
    mispredictions: u64,
    last_line: u64,
}

impl Hooks for Timing<'_> {
    #[inline]
    fn step(&mut self, site: Site) -> Result<(), ExecError> {
        if self.cycles > self.limit {
            return Err(ExecError::Watchdog(self.cycles));
        }
        self.instructions += 1;
        self.cycles += self.cfg.latency.of(site.op);
        match self.mode {
            Mode::Baseline => {
                let line = self.caches.l1i.line_of(site.addr);
                if line != self.last_line {
                    self.last_line = line;
                    self.cycles += match self.caches.fetch(site.addr) {
                        Served::L1 => 0,
                        Served::L2 => self.cfg.l2.hit_latency,
                        Served::Memory => self.cfg.l2.hit_latency + self.cfg.mem_latency,
                    };
                }
            }
            Mode::Ozone => {
                if !self.ispm.contains(site.addr, INST_BYTES) {
                    return Err(ExecError::FetchFault { addr: site.addr });
                }
            }
        }
        Ok(())
    }

    #[inline]
    fn mem(
        &mut self,
        _site: Site,
        space: AddrSpace,
        addr: u64,
        width: Width,
        _store: bool,
        _tainted: bool,
    ) -> Result<(), ExecError> {
        match space {
            AddrSpace::Spm => {
                if !self.dspm.contains(addr, width.bytes()) {
                    return Err(ExecError::ScratchpadFault {
                        addr,
                        len: width.bytes(),
                    });
                }
                self.cycles += self.cfg.spm_latency;
            }
            AddrSpace::Main => {
                if self.mode == Mode::Ozone {
                    return Err(ExecError::MainMemoryInOzone { addr });
                }
                let l1 = self.cfg.l1d.hit_latency;
                self.cycles += match self.caches.data(addr) {
                    Served::L1 => l1,
                    Served::L2 => l1 + self.cfg.l2.hit_latency,
                    Served::Memory => l1 + self.cfg.l2.hit_latency + self.cfg.mem_latency,
                };
            }
        }
        Ok(())
    }

    #[inline]
    fn branch(&mut self, site: Site, taken: bool) {
        self.branches += 1;
        if self.predictor.predict_and_update(site.addr, taken) != taken {
            self.mispredictions += 1;
            self.cycles += self.cfg.mispredict_penalty;
        }
    }
}

/// A core whose caches and predictor persist across baseline runs.
pub struct Core {
    cfg: MicroarchConfig,
    caches: CacheState,
    predictor: Predictor,
}

impl Core {
    pub fn new(cfg: MicroarchConfig) -> Core {
        Core {
            caches: CacheState::new(&cfg.l1i, &cfg.l1d, &cfg.l2),
            predictor: Predictor::new(&cfg.predictor),
            cfg,
        }
    }

    pub fn config(&self) -> &MicroarchConfig {
        &self.cfg
    }

    pub fn caches(&self) -> &CacheState {
        &self.caches
    }

    /// Empties the caches and resets the predictor.
    pub fn flush(&mut self) {
        self.caches.flush();
        self.predictor.reset();
    }

    /// Baseline run. Counters in the result cover this run only.
    pub fn run_baseline(
        &mut self,
        prog: &Compiled,
        inputs: &[u64],
        flush_first: bool,
    ) -> Result<SimResult, ExecError> {
        if flush_first {
            self.flush();
        }
        self.caches.reset_counters();
        let mut t = Timing {
            cfg: &self.cfg,
            mode: Mode::Baseline,
            caches: &mut self.caches,
            predictor: &mut self.predictor,
            dspm: self.cfg.spm.dspm,
            ispm: self.cfg.spm.ispm,
            cycles: 0,
            limit: u64::MAX,
            instructions: 0,
            branches: 0,
            mispredictions: 0,
            last_line: u64::MAX,
        };
        let mut mem = prog.lowered.fresh_memory();
        let outputs = execute(&prog.lowered, inputs, &mut mem, &mut t, self.cfg.step_cap)?;
        let (cycles, instructions, branches, mispredictions) =
            (t.cycles, t.instructions, t.branches, t.mispredictions);
        let c = &self.caches;
        Ok(SimResult {
            cycles,
            instructions,
            l1i_hits: c.l1i.hits,
            l1i_misses: c.l1i.misses,
            l1d_hits: c.l1d.hits,
            l1d_misses: c.l1d.misses,
            l2_hits: c.l2.hits,
            l2_misses: c.l2.misses,
            branches,
            mispredictions,
            terminated_by_wdt: false,
            outputs: Some(outputs),
        })
    }

    /// Ozone run. Neither the caches nor the baseline predictor are
    /// consulted or disturbed.
    pub fn run_ozone(
        &mut self,
        prog: &Compiled,
        inputs: &[u64],
        ctx: &OzoneContext,
    ) -> Result<SimResult, ExecError> {
        run_ozone(&self.cfg, prog, inputs, ctx.layout, Some(ctx.declared_cycles))
    }
}

fn run_ozone(
    cfg: &MicroarchConfig,
    prog: &Compiled,
    inputs: &[u64],
    layout: SpmLayout,
    declared: Option<u64>,
) -> Result<SimResult, ExecError> {
    // the scratch cache state is never touched in ozone mode
    let tiny = CacheConfig {
        size: 1,
        assoc: 1,
        line: 1,
        hit_latency: 1,
    };
    let mut caches = CacheState::new(&tiny, &tiny, &tiny);
    let mut predictor = Predictor::new(&cfg.ozone_predictor);
    let mut t = Timing {
        cfg,
        mode: Mode::Ozone,
        caches: &mut caches,
        predictor: &mut predictor,
        dspm: layout.dspm,
        ispm: layout.ispm,
        cycles: 0,
        limit: declared.unwrap_or(u64::MAX),
        instructions: 0,
        branches: 0,
        mispredictions: 0,
        last_line: u64::MAX,
    };
    let mut mem = prog.lowered.fresh_memory();
    let run = execute(&prog.lowered, inputs, &mut mem, &mut t, cfg.step_cap);
    let mut res = SimResult {
        cycles: t.cycles,
        instructions: t.instructions,
        branches: t.branches,
        mispredictions: t.mispredictions,
        ..SimResult::default()
    };
    match run {
        Ok(out) => {
            if declared.is_some_and(|d| d != t.cycles) {
                res.terminated_by_wdt = true;
            } else {
                res.outputs = Some(out);
            }
        }
        Err(ExecError::Watchdog(_)) => res.terminated_by_wdt = true,
        Err(e) => return Err(e),
    }
    Ok(res)
}

/// Baseline run on a fresh core. With `flush_first` false the fresh core
/// is first warmed by one untimed run on the same inputs.
pub fn simulate_baseline(
    p: &Program,
    inputs: &[u64],
    cfg: &MicroarchConfig,
    flush_first: bool,
) -> Result<SimResult, ExecError> {
    let prog = Compiled::new(p)?;
    let mut core = Core::new(*cfg);
    if !flush_first {
        core.run_baseline(&prog, inputs, true)?;
    }
    core.run_baseline(&prog, inputs, flush_first)
}

pub fn simulate_ozone(
    p: &Program,
    inputs: &[u64],
    cfg: &MicroarchConfig,
    ctx: &OzoneContext,
) -> Result<SimResult, ExecError> {
    let prog = Compiled::new(p)?;
    run_ozone(cfg, &prog, inputs, ctx.layout, Some(ctx.declared_cycles))
}

pub fn simulate_ozone_compiled(
    prog: &Compiled,
    inputs: &[u64],
    cfg: &MicroarchConfig,
    ctx: &OzoneContext,
) -> Result<SimResult, ExecError> {
    run_ozone(cfg, prog, inputs, ctx.layout, Some(ctx.declared_cycles))
}

/// Ozone-mode cycle count with the watchdog disabled, for calibrating
/// `declared_cycles`. Uses the layout from `cfg`.
pub fn measure_cycles(p: &Program, inputs: &[u64], cfg: &MicroarchConfig) -> Result<u64, ExecError> {
    measure_cycles_compiled(&Compiled::new(p)?, inputs, cfg)
}

pub fn measure_cycles_compiled(
    prog: &Compiled,
    inputs: &[u64],
    cfg: &MicroarchConfig,
) -> Result<u64, ExecError> {
    Ok(run_ozone(cfg, prog, inputs, cfg.spm, None)?.cycles)
}
