use super::config::PredictorConfig;

#[inline]
fn bump(c: &mut u8, taken: bool) {
    if taken {
        if *c < 3 {
            *c += 1;
        }
    } else if *c > 0 {
        *c -= 1;
    }
}

/// Branch direction predictor state. Counters are 2-bit saturating and
/// start weakly not-taken.
#[derive(Clone, Debug)]
pub enum Predictor {
    AlwaysTaken,
    Bimodal {
        table: Vec<u8>,
    },
    /// Local/global hybrid with a global-history-indexed chooser.
    Tournament {
        global: Vec<u8>,
        choice: Vec<u8>,
        local_hist: Vec<u16>,
        local: Vec<u8>,
        ghr: u64,
        global_mask: u64,
        local_hist_mask: u64,
        local_mask: u64,
    },
}

const WEAK_NOT_TAKEN: u8 = 1;

impl Predictor {
    pub fn new(cfg: &PredictorConfig) -> Predictor {
        match *cfg {
            PredictorConfig::AlwaysTaken => Predictor::AlwaysTaken,
            PredictorConfig::Bimodal { entries } => Predictor::Bimodal {
                table: vec![WEAK_NOT_TAKEN; entries as usize],
            },
            PredictorConfig::Tournament {
                global_bits,
                local_entries_bits,
                local_history_bits,
            } => Predictor::Tournament {
                global: vec![WEAK_NOT_TAKEN; 1 << global_bits],
                choice: vec![WEAK_NOT_TAKEN; 1 << global_bits],
                local_hist: vec![0; 1 << local_entries_bits],
                local: vec![WEAK_NOT_TAKEN; 1 << local_history_bits],
                ghr: 0,
                global_mask: (1 << global_bits) - 1,
                local_hist_mask: (1 << local_entries_bits) - 1,
                local_mask: (1 << local_history_bits) - 1,
            },
        }
    }

    /// Returns to the initial state.
    pub fn reset(&mut self) {
        match self {
            Predictor::AlwaysTaken => {}
            Predictor::Bimodal { table } => table.fill(WEAK_NOT_TAKEN),
            Predictor::Tournament {
                global,
                choice,
                local_hist,
                local,
                ghr,
                ..
            } => {
                global.fill(WEAK_NOT_TAKEN);
                choice.fill(WEAK_NOT_TAKEN);
                local_hist.fill(0);
                local.fill(WEAK_NOT_TAKEN);
                *ghr = 0;
            }
        }
    }

    /// Predicts the branch at `pc`, then trains on `taken`. Returns the
    /// prediction.
    #[inline]
    pub fn predict_and_update(&mut self, pc: u64, taken: bool) -> bool {
        let idx = pc >> 2;
        match self {
            Predictor::AlwaysTaken => true,
            Predictor::Bimodal { table } => {
                let i = (idx as usize) & (table.len() - 1);
                let pred = table[i] >= 2;
                bump(&mut table[i], taken);
                pred
            }
            Predictor::Tournament {
                global,
                choice,
                local_hist,
                local,
                ghr,
                global_mask,
                local_hist_mask,
                local_mask,
            } => {
                let gi = (*ghr & *global_mask) as usize;
                let hi = (idx & *local_hist_mask) as usize;
                let li = (local_hist[hi] as u64 & *local_mask) as usize;
                let gp = global[gi] >= 2;
                let lp = local[li] >= 2;
                let pred = if choice[gi] >= 2 { gp } else { lp };
                if gp != lp {
                    bump(&mut choice[gi], gp == taken);
                }
                bump(&mut global[gi], taken);
                bump(&mut local[li], taken);
                local_hist[hi] = (local_hist[hi] << 1) | taken as u16;
                *ghr = (*ghr << 1) | taken as u64;
                pred
            }
        }
    }
}
