use super::exec::{execute, ExecError, Hooks, Lowered, Site, DEFAULT_STEP_CAP};
use super::{AddrSpace, Program, Width};

/// One dynamically executed instruction. `inst` equal to the block's
/// instruction count denotes the terminator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TraceEntry {
    pub func: u32,
    pub block: u32,
    pub inst: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemAccess {
    pub at: TraceEntry,
    pub space: AddrSpace,
    pub addr: u64,
    pub width: Width,
    pub store: bool,
    /// The address was computed from the result of a `select`.
    pub select_derived: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Interpretation {
    pub outputs: Vec<u64>,
    pub trace: Vec<TraceEntry>,
    pub accesses: Vec<MemAccess>,
}

struct Recorder<'a> {
    prog: &'a Lowered,
    trace: Vec<TraceEntry>,
    accesses: Vec<MemAccess>,
}

impl Recorder<'_> {
    fn entry(&self, site: Site) -> TraceEntry {
        let (block, inst) = self.prog.funcs[site.func as usize].loc[site.pc as usize];
        TraceEntry {
            func: site.func,
            block,
            inst,
        }
    }
}

impl Hooks for Recorder<'_> {
    const TAINT: bool = true;

    fn step(&mut self, site: Site) -> Result<(), ExecError> {
        let e = self.entry(site);
        self.trace.push(e);
        Ok(())
    }

    fn mem(
        &mut self,
        site: Site,
        space: AddrSpace,
        addr: u64,
        width: Width,
        store: bool,
        tainted: bool,
    ) -> Result<(), ExecError> {
        let at = self.entry(site);
        self.accesses.push(MemAccess {
            at,
            space,
            addr,
            width,
            store,
            select_derived: tainted,
        });
        Ok(())
    }

    fn branch(&mut self, _site: Site, _taken: bool) {}
}

/// Functional reference execution with the default step cap.
pub fn interpret(p: &Program, inputs: &[u64]) -> Result<Interpretation, ExecError> {
    interpret_with(p, inputs, DEFAULT_STEP_CAP)
}

pub fn interpret_with(
    p: &Program,
    inputs: &[u64],
    step_cap: u64,
) -> Result<Interpretation, ExecError> {
    let lowered = Lowered::new(p)?;
    let mut mem = lowered.fresh_memory();
    let mut rec = Recorder {
        prog: &lowered,
        trace: Vec::new(),
        accesses: Vec::new(),
    };
    let outputs = execute(&lowered, inputs, &mut mem, &mut rec, step_cap)?;
    Ok(Interpretation {
        outputs,
        trace: rec.trace,
        accesses: rec.accesses,
    })
}
