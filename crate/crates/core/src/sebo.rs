//! Successive exhaustive Boolean optimization over antenna coders.
//!
//! A sweep visits the `ceil(Q/J)` blocks of `J` consecutive switches in
//! index order and sets each block to the best of its `2^J` assignments with
//! the rest of the coder held fixed. Sweeps repeat until one makes no strict
//! progress. Random multi-bit kicks followed by fresh sweeps are accepted
//! only when they beat the incumbent; the whole procedure is restarted from
//! random coders and the best coder seen is returned.
//!
//! Ties are broken toward the lexicographically smallest coder.

use rand::seq::index;
use rand::Rng;

use crate::channel::substream;
use crate::em_model::AntennaCoder;
use crate::error::{Error, Result};

/// Upper bound on the block size; `2^16` evaluations per block already
/// dwarfs every other cost.
pub const MAX_BLOCK: usize = 16;
const MAX_SWEEPS: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct SeboConfig {
    /// Bits per exhaustively searched block (`J`).
    pub block: usize,
    /// Kick iterations per restart (`I`).
    pub iterations: usize,
    /// Bits flipped by each kick.
    pub flips_per_kick: usize,
    /// Independent starts; the first one is the caller's initial coder.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SeboConfig {
    fn default() -> Self {
        Self {
            block: 8,
            iterations: 5,
            flips_per_kick: 8,
            restarts: 2,
            seed: 0,
        }
    }
}

impl SeboConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block == 0 || self.block > MAX_BLOCK {
            return Err(Error::config("sebo_J", format!("block size must be in 1..={MAX_BLOCK}")));
        }
        if self.iterations == 0 {
            return Err(Error::config("sebo_I", "need at least one iteration"));
        }
        if self.flips_per_kick > self.block {
            return Err(Error::config("sebo_flips", "cannot flip more bits than the block size"));
        }
        if self.restarts == 0 {
            return Err(Error::config("sebo_restarts", "need at least one start"));
        }
        Ok(())
    }

    /// Same settings with a different random stream.
    pub fn reseeded(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeboOutcome {
    pub coder: AntennaCoder,
    pub value: f64,
    pub evaluations: usize,
}

struct Search<'a, F> {
    objective: &'a mut F,
    block: usize,
    evaluations: usize,
}

impl<F: FnMut(&AntennaCoder) -> f64> Search<'_, F> {
    fn eval(&mut self, b: &AntennaCoder) -> f64 {
        self.evaluations += 1;
        let v = (self.objective)(b);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }

    /// Block-coordinate ascent to a block-wise local optimum.
    fn descend(&mut self, x: &mut AntennaCoder, fx: &mut f64) {
        let q = x.len();
        for _ in 0..MAX_SWEEPS {
            let mut improved = false;
            let mut start = 0;
            while start < q {
                let len = self.block.min(q - start);
                let current = read_block(x, start, len);
                let mut best = (*fx, current);
                for assign in 0..(1u32 << len) {
                    let v = if assign == current {
                        *fx
                    } else {
                        write_block(x, start, len, assign);
                        self.eval(x)
                    };
                    if v > best.0 || (v == best.0 && assign < best.1) {
                        best = (v, assign);
                    }
                }
                if best.0 > *fx {
                    improved = true;
                }
                write_block(x, start, len, best.1);
                *fx = best.0;
                start += len;
            }
            if !improved {
                break;
            }
        }
    }
}

/// Block bits packed with the block's first switch as the most significant bit.
fn read_block(x: &AntennaCoder, start: usize, len: usize) -> u32 {
    (0..len).fold(0u32, |acc, j| (acc << 1) | x.get(start + j) as u32)
}

fn write_block(x: &mut AntennaCoder, start: usize, len: usize, assign: u32) {
    for j in 0..len {
        x.set(start + j, (assign >> (len - 1 - j)) & 1 == 1);
    }
}

fn random_coder<R: Rng + ?Sized>(rng: &mut R, q: usize) -> AntennaCoder {
    AntennaCoder::new((0..q).map(|_| rng.random::<bool>()).collect())
}

fn better(v: f64, x: &AntennaCoder, best_v: f64, best: &AntennaCoder) -> bool {
    v > best_v || (v == best_v && x < best)
}

pub fn sebo_search_detailed<F>(mut objective: F, q: usize, cfg: &SeboConfig, init: &AntennaCoder) -> SeboOutcome
where
    F: FnMut(&AntennaCoder) -> f64,
{
    assert_eq!(init.len(), q, "initial coder length must equal Q");
    let block = cfg.block.clamp(1, MAX_BLOCK).min(q.max(1));
    let flips = cfg.flips_per_kick.min(q);
    let mut rng = substream(cfg.seed, &[crate::channel::tag::SEBO]);
    let mut search = Search {
        objective: &mut objective,
        block,
        evaluations: 0,
    };

    let mut best = init.clone();
    let mut best_v = search.eval(init);
    for restart in 0..cfg.restarts.max(1) {
        let mut x = if restart == 0 { init.clone() } else { random_coder(&mut rng, q) };
        let mut fx = if restart == 0 { best_v } else { search.eval(&x) };
        search.descend(&mut x, &mut fx);
        for _ in 0..cfg.iterations {
            if flips == 0 {
                break;
            }
            let mut y = x.clone();
            for i in index::sample(&mut rng, q, flips) {
                y.flip(i);
            }
            let mut fy = search.eval(&y);
            search.descend(&mut y, &mut fy);
            if fy > fx {
                x = y;
                fx = fy;
            }
        }
        if better(fx, &x, best_v, &best) {
            best = x;
            best_v = fx;
        }
    }
    SeboOutcome {
        coder: best,
        value: best_v,
        evaluations: search.evaluations,
    }
}

/// Best coder found by SEBO; never worse than `init` under `objective`.
pub fn sebo_search<F>(objective: F, q: usize, cfg: &SeboConfig, init: &AntennaCoder) -> AntennaCoder
where
    F: FnMut(&AntennaCoder) -> f64,
{
    sebo_search_detailed(objective, q, cfg, init).coder
}

/// Exhaustive maximization over all `2^q` coders (ties to the
/// lexicographically smallest). Practical for `q <= 20`.
pub fn brute_force_best<F>(mut objective: F, q: usize) -> (AntennaCoder, f64)
where
    F: FnMut(&AntennaCoder) -> f64,
{
    let mut x = AntennaCoder::zeros(q);
    let mut best = (x.clone(), f64::NEG_INFINITY);
    for assign in 0..(1u64 << q) {
        for j in 0..q {
            x.set(j, (assign >> (q - 1 - j)) & 1 == 1);
        }
        let v = objective(&x);
        if v > best.1 {
            best = (x.clone(), v);
        }
    }
    best
}
