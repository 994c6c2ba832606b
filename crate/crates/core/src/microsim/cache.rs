use super::config::CacheConfig;

const INVALID: u64 = u64::MAX;

/// One set-associative level with true LRU replacement. Each set is stored
/// most-recently-used first.
#[derive(Clone, Debug)]
pub struct Cache {
    tags: Vec<u64>,
    assoc: usize,
    set_mask: u64,
    line_shift: u32,
    pub hits: u64,
    pub misses: u64,
}

impl Cache {
    pub fn new(cfg: &CacheConfig) -> Cache {
        let sets = cfg.sets();
        Cache {
            tags: vec![INVALID; (sets * cfg.assoc) as usize],
            assoc: cfg.assoc as usize,
            set_mask: sets - 1,
            line_shift: cfg.line.trailing_zeros(),
            hits: 0,
            misses: 0,
        }
    }

    pub fn line_of(&self, addr: u64) -> u64 {
        addr >> self.line_shift
    }

    /// Looks up the line holding `addr`, filling it on a miss.
    #[inline]
    pub fn access(&mut self, addr: u64) -> bool {
        let line = addr >> self.line_shift;
        let set = (line & self.set_mask) as usize;
        let ways = &mut self.tags[set * self.assoc..(set + 1) * self.assoc];
        match ways.iter().position(|t| *t == line) {
            Some(i) => {
                ways[..=i].rotate_right(1);
                self.hits += 1;
                true
            }
            None => {
                ways.rotate_right(1);
                ways[0] = line;
                self.misses += 1;
                false
            }
        }
    }

    /// Invalidates every line; counters are kept.
    pub fn flush(&mut self) {
        self.tags.fill(INVALID);
    }

    pub fn reset_counters(&mut self) {
        self.hits = 0;
        self.misses = 0;
    }

    /// Valid lines of `set`, most recently used first.
    pub fn set_contents(&self, set: usize) -> Vec<u64> {
        self.tags[set * self.assoc..(set + 1) * self.assoc]
            .iter()
            .copied()
            .filter(|t| *t != INVALID)
            .collect()
    }

    pub fn sets(&self) -> usize {
        self.set_mask as usize + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    L1I,
    L1D,
    L2,
}

/// Which level satisfied an access.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Served {
    L1,
    L2,
    Memory,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Hit,
    Miss,
}

/// The baseline cache hierarchy: split L1s over a unified L2. Inclusion is
/// not enforced.
#[derive(Clone, Debug)]
pub struct CacheState {
    pub l1i: Cache,
    pub l1d: Cache,
    pub l2: Cache,
}

impl CacheState {
    pub fn new(l1i: &CacheConfig, l1d: &CacheConfig, l2: &CacheConfig) -> CacheState {
        CacheState {
            l1i: Cache::new(l1i),
            l1d: Cache::new(l1d),
            l2: Cache::new(l2),
        }
    }

    pub fn flush(&mut self) {
        self.l1i.flush();
        self.l1d.flush();
        self.l2.flush();
    }

    pub fn reset_counters(&mut self) {
        self.l1i.reset_counters();
        self.l1d.reset_counters();
        self.l2.reset_counters();
    }

    #[inline]
    pub fn fetch(&mut self, addr: u64) -> Served {
        if self.l1i.access(addr) {
            Served::L1
        } else if self.l2.access(addr) {
            Served::L2
        } else {
            Served::Memory
        }
    }

    #[inline]
    pub fn data(&mut self, addr: u64) -> Served {
        if self.l1d.access(addr) {
            Served::L1
        } else if self.l2.access(addr) {
            Served::L2
        } else {
            Served::Memory
        }
    }
}

/// Accesses `addr` at `level`, continuing to L2 when an L1 misses. Returns
/// the outcome at `level` itself.
pub fn cache_access(state: &mut CacheState, level: Level, addr: u64) -> Outcome {
    let hit = match level {
        Level::L1I => state.fetch(addr) == Served::L1,
        Level::L1D => state.data(addr) == Served::L1,
        Level::L2 => state.l2.access(addr),
    };
    if hit {
        Outcome::Hit
    } else {
        Outcome::Miss
    }
}
