//! Cache-timing key recovery by plaintext-byte sweeps, and leakage metrics.
//!
//! A profile records, for each of the 256 values of one input byte, the mean
//! cycle count over `trials` runs with the rest of the input random. Two
//! profiles taken under different keys are related by an XOR shift of the
//! swept byte, which is what `recover_key_byte` searches for.

use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::ir::ExecError;
use crate::kernels::{catalog, sweep_inputs, KernelError};
use crate::microsim::{
    measure_cycles_compiled, Compiled, Core, MicroarchConfig, Mode, OzoneContext, SimResult,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttackError {
    #[error("profile is flat: no timing signal")]
    NoSignal,
    #[error("profiles do not match: {0}")]
    Mismatch(&'static str),
    #[error("trials must be at least 1")]
    NoTrials,
    #[error("watchdog terminated an ozone run at {0} cycles")]
    Watchdog(u64),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimingProfile<T> {
    pub kernel: String,
    pub mode: Mode,
    pub byte_index: usize,
    pub trials: usize,
    /// Mean cycles for each value of the swept byte.
    pub means: Vec<T>,
    /// Smallest and largest cycle count over every trial.
    pub raw_min: u64,
    pub raw_max: u64,
}

pub type Profile = TimingProfile<f64>;

impl<T: Float> TimingProfile<T> {
    pub fn spread(&self) -> T {
        let (lo, hi) = min_max(&self.means);
        hi - lo
    }

    pub fn is_flat(&self) -> bool {
        self.raw_min == self.raw_max
    }

    /// Lowest value with the largest mean.
    pub fn argmax(&self) -> u8 {
        argmax(&self.means) as u8
    }
}

fn min_max<T: Float>(xs: &[T]) -> (T, T) {
    xs.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

fn argmax<T: Float>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct LeakageReport<T> {
    pub samples: usize,
    /// Largest minus smallest cycle count.
    pub spread: T,
    /// Population variance of the cycle counts.
    pub variance: T,
    pub zero_leakage: bool,
}

pub type Leakage = LeakageReport<f64>;

/// Spread and variance over raw cycle counts.
pub fn leakage_of<T: Float>(cycles: &[u64]) -> LeakageReport<T> {
    let n = T::from(cycles.len().max(1)).unwrap();
    let lo = cycles.iter().copied().min().unwrap_or(0);
    let hi = cycles.iter().copied().max().unwrap_or(0);
    let mean = cycles.iter().fold(T::zero(), |a, &c| a + T::from(c).unwrap()) / n;
    let variance = cycles.iter().fold(T::zero(), |a, &c| {
        let d = T::from(c).unwrap() - mean;
        a + d * d
    }) / n;
    LeakageReport {
        samples: cycles.len(),
        spread: T::from(hi - lo).unwrap(),
        variance,
        zero_leakage: lo == hi,
    }
}

pub fn leakage_metric(results: &[SimResult]) -> Leakage {
    let cycles: Vec<u64> = results.iter().map(|r| r.cycles).collect();
    leakage_of(&cycles)
}

/// Sweeps byte `byte_index` of the kernel's data through 0..=255. Baseline
/// runs start from flushed caches and predictor; ozone runs use the
/// scratchpads of `cfg` and a watchdog calibrated on the first input.
///
/// Each point draws its random inputs from its own stream of `seed`, so the
/// result does not depend on evaluation order.
#[allow(clippy::too_many_arguments)]
pub fn profile_kernel_with<T: Float + Send>(
    kernel: &str,
    mode: Mode,
    key: &[u8; 16],
    byte_index: usize,
    trials: usize,
    cfg: &MicroarchConfig,
    seed: u64,
) -> Result<TimingProfile<T>, AttackError> {
    if trials == 0 {
        return Err(AttackError::NoTrials);
    }
    let entry = catalog().get(kernel)?;
    let cfg = *cfg;
    let prog = match mode {
        Mode::Baseline => Compiled::new(&entry.baseline),
        Mode::Ozone => Compiled::new(&entry.ozone),
    }
    .map_err(ExecError::from)?;
    let ctx = match mode {
        Mode::Baseline => None,
        Mode::Ozone => {
            let mut rng = point_rng(seed, byte_index, 0);
            let probe = sweep_inputs(kernel, key, byte_index, 0, &mut rng)?;
            let c = measure_cycles_compiled(&prog, &probe, &cfg)?;
            Some(OzoneContext::new(c, cfg.spm))
        }
    };

    let points: Vec<(u64, u64, u64)> = (0..256u32)
        .into_par_iter()
        .map(|v| -> Result<(u64, u64, u64), AttackError> {
            let mut rng = point_rng(seed, byte_index, v);
            let mut core = Core::new(cfg);
            let (mut sum, mut lo, mut hi) = (0u64, u64::MAX, 0u64);
            for _ in 0..trials {
                let inputs = sweep_inputs(kernel, key, byte_index, v as u8, &mut rng)?;
                let r = match &ctx {
                    None => core.run_baseline(&prog, &inputs, true)?,
                    Some(ctx) => core.run_ozone(&prog, &inputs, ctx)?,
                };
                if r.terminated_by_wdt {
                    return Err(AttackError::Watchdog(r.cycles));
                }
                sum += r.cycles;
                lo = lo.min(r.cycles);
                hi = hi.max(r.cycles);
            }
            Ok((sum, lo, hi))
        })
        .collect::<Result<_, _>>()?;

    let n = T::from(trials).unwrap();
    Ok(TimingProfile {
        kernel: kernel.to_string(),
        mode,
        byte_index,
        trials,
        means: points.iter().map(|p| T::from(p.0).unwrap() / n).collect(),
        raw_min: points.iter().map(|p| p.1).min().unwrap(),
        raw_max: points.iter().map(|p| p.2).max().unwrap(),
    })
}

pub fn profile_kernel(
    kernel: &str,
    mode: Mode,
    key: &[u8; 16],
    byte_index: usize,
    trials: usize,
    cfg: &MicroarchConfig,
    seed: u64,
) -> Result<Profile, AttackError> {
    profile_kernel_with(kernel, mode, key, byte_index, trials, cfg, seed)
}

fn point_rng(seed: u64, byte_index: usize, value: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((byte_index as u64) << 16) | value as u64);
    rng
}

/// Candidates for one key byte, most likely first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ByteRanking {
    pub byte_index: usize,
    pub ranking: Vec<u8>,
}

impl ByteRanking {
    pub fn best(&self) -> u8 {
        self.ranking[0]
    }

    pub fn rank_of(&self, v: u8) -> usize {
        self.ranking.iter().position(|c| *c == v).unwrap()
    }
}

fn pearson<T: Float>(a: &[T], b: &[T]) -> T {
    let n = T::from(a.len()).unwrap();
    let ma = a.iter().fold(T::zero(), |s, &x| s + x) / n;
    let mb = b.iter().fold(T::zero(), |s, &x| s + x) / n;
    let (mut ab, mut aa, mut bb) = (T::zero(), T::zero(), T::zero());
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (*x - ma, *y - mb);
        ab = ab + dx * dy;
        aa = aa + dx * dx;
        bb = bb + dy * dy;
    }
    let d = (aa * bb).sqrt();
    if d > T::zero() {
        ab / d
    } else {
        T::zero()
    }
}

/// Ranks candidates for the target's key byte given a reference profile
/// taken under the known byte `kref`.
///
/// The first candidate is `kref ^ argmax(reference) ^ argmax(target)`. The
/// rest follow by the correlation of the target profile with the reference
/// shifted to that candidate, ties going to the lower value.
pub fn recover_key_byte<T: Float>(
    reference: &TimingProfile<T>,
    kref: u8,
    target: &TimingProfile<T>,
) -> Result<ByteRanking, AttackError> {
    if reference.byte_index != target.byte_index {
        return Err(AttackError::Mismatch("byte index"));
    }
    if reference.kernel != target.kernel || reference.mode != target.mode {
        return Err(AttackError::Mismatch("kernel or mode"));
    }
    if reference.means.len() != 256 || target.means.len() != 256 {
        return Err(AttackError::Mismatch("profile length"));
    }
    if reference.spread() == T::zero() || target.spread() == T::zero() {
        return Err(AttackError::NoSignal);
    }
    let s_star = kref ^ reference.argmax();
    let first = s_star ^ target.argmax();
    let mut scored: Vec<(T, u8)> = (0..=255u8)
        .filter(|c| *c != first)
        .map(|c| {
            let d = (c ^ kref) as usize;
            let shifted: Vec<T> = (0..256).map(|n| reference.means[n ^ d]).collect();
            (pearson(&target.means, &shifted), c)
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
    let mut ranking = vec![first];
    ranking.extend(scored.into_iter().map(|s| s.1));
    Ok(ByteRanking {
        byte_index: target.byte_index,
        ranking,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Position {
    pub byte_index: usize,
    pub true_byte: u8,
    pub outcome: Result<ByteRanking, AttackError>,
}

impl Position {
    pub fn rank(&self) -> Option<usize> {
        self.outcome.as_ref().ok().map(|r| r.rank_of(self.true_byte))
    }

    pub fn guess(&self) -> Option<u8> {
        self.outcome.as_ref().ok().map(|r| r.best())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecoveredKey {
    pub positions: Vec<Position>,
}

impl RecoveredKey {
    /// Best guess per byte, `None` where no signal was found.
    pub fn best_guess(&self) -> Vec<Option<u8>> {
        self.positions.iter().map(|p| p.guess()).collect()
    }

    pub fn all_rank_zero(&self) -> bool {
        self.positions.iter().all(|p| p.rank() == Some(0))
    }

    pub fn all_no_signal(&self) -> bool {
        self.positions
            .iter()
            .all(|p| p.outcome == Err(AttackError::NoSignal))
    }
}

pub struct AttackSetup<'a> {
    pub kernel: &'a str,
    pub mode: Mode,
    pub cfg: &'a MicroarchConfig,
    pub trials: usize,
    pub seed: u64,
}

/// Profiles every key byte position under `kref` and under `ktarget` and
/// ranks candidates for each target byte. `ktarget` is only used to drive
/// the simulator and to report ranks.
pub fn recover_full_key(
    setup: &AttackSetup<'_>,
    kref: &[u8; 16],
    ktarget: &[u8; 16],
) -> Result<RecoveredKey, AttackError> {
    recover_positions(setup, kref, ktarget, 0..16)
}

pub fn recover_positions(
    setup: &AttackSetup<'_>,
    kref: &[u8; 16],
    ktarget: &[u8; 16],
    indices: impl IntoIterator<Item = usize>,
) -> Result<RecoveredKey, AttackError> {
    let mut positions = Vec::new();
    for i in indices {
        let (r, t) = profile_pair(setup, kref, ktarget, i)?;
        positions.push(Position {
            byte_index: i,
            true_byte: ktarget[i],
            outcome: recover_key_byte(&r, kref[i], &t),
        });
    }
    Ok(RecoveredKey { positions })
}

/// Reference and target profiles for one position. The two use different
/// random streams.
pub fn profile_pair(
    setup: &AttackSetup<'_>,
    kref: &[u8; 16],
    ktarget: &[u8; 16],
    byte_index: usize,
) -> Result<(Profile, Profile), AttackError> {
    let p = |k: &[u8; 16], seed: u64| {
        profile_kernel(setup.kernel, setup.mode, k, byte_index, setup.trials, setup.cfg, seed)
    };
    Ok((p(kref, setup.seed)?, p(ktarget, setup.seed ^ 0x5eed_0f7a_4e77)?))
}
