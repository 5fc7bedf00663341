//! Minimum error rate training over fixed N-best lists.
//!
//! Along one weight coordinate every hypothesis score is a line in that
//! weight, so each list's top-1 choice is piecewise constant and changes only
//! where its upper envelope bends. Merging the bends of all lists gives every
//! interval on which corpus BLEU is constant; the line search scans them all.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dot;
use crate::error::{Error, Result};
use crate::metrics::BleuStats;

/// One dev sentence: feature rows of its N-best and their BLEU statistics
/// against the reference(s).
#[derive(Debug, Clone, PartialEq)]
pub struct DevList {
    pub features: Vec<Vec<f64>>,
    pub stats: Vec<BleuStats>,
}

impl DevList {
    pub fn new(features: Vec<Vec<f64>>, stats: Vec<BleuStats>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::input("empty N-best list in dev set"));
        }
        if features.len() != stats.len() {
            return Err(Error::input("features and BLEU statistics differ in length"));
        }
        Ok(DevList { features, stats })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MertConfig {
    /// Random restarts in addition to the run from the initial weights.
    pub restarts: usize,
    /// Maximum coordinate-ascent passes per restart.
    pub max_iters: usize,
    pub seed: u64,
    pub max_n: usize,
    /// Above this many breakpoints per coordinate, fall back to a grid.
    pub breakpoint_cap: usize,
}

impl Default for MertConfig {
    fn default() -> Self {
        MertConfig {
            restarts: 8,
            max_iters: 20,
            seed: 0,
            max_n: 4,
            breakpoint_cap: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MertStep {
    pub restart: usize,
    pub iteration: usize,
    pub coordinate: usize,
    pub bleu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MertResult {
    pub weights: Vec<f64>,
    pub bleu: f64,
    pub init_bleu: f64,
    /// Accepted steps in order; BLEU within one restart is strictly increasing.
    pub steps: Vec<MertStep>,
}

fn top1(list: &DevList, w: &[f64]) -> usize {
    let mut best = 0;
    let mut best_s = f64::NEG_INFINITY;
    for (i, f) in list.features.iter().enumerate() {
        let s = dot(w, f);
        if s > best_s || i == 0 {
            best = i;
            best_s = s;
        }
    }
    best
}

/// Corpus BLEU of the top-1 choices under `weights` (ties to the earlier entry).
pub fn dev_bleu(dev: &[DevList], weights: &[f64], max_n: usize) -> f64 {
    let mut total = BleuStats::zero(max_n);
    for l in dev {
        total.add(&l.stats[top1(l, weights)]);
    }
    total.bleu()
}

/// Argmax segments of `max_i (a_i + b_i x)` from left to right as
/// `(start_x, index)`; the first segment starts at -inf.
fn upper_envelope(a: &[f64], b: &[f64]) -> Vec<(f64, usize)> {
    let n = a.len();
    // At -inf: smallest slope, then largest intercept, then lowest index.
    let mut cur = (0..n)
        .min_by(|&i, &j| b[i].total_cmp(&b[j]).then(a[j].total_cmp(&a[i])).then(i.cmp(&j)))
        .expect("non-empty list");
    let mut segs = vec![(f64::NEG_INFINITY, cur)];
    let mut x_cur = f64::NEG_INFINITY;
    loop {
        let mut next: Option<(f64, usize)> = None;
        for j in 0..n {
            if b[j] <= b[cur] {
                continue;
            }
            let x = (a[cur] - a[j]) / (b[j] - b[cur]);
            if !x.is_finite() || x < x_cur {
                continue;
            }
            next = match next {
                None => Some((x, j)),
                Some((bx, bj)) => {
                    let take = x < bx
                        || (x == bx
                            && (b[j] > b[bj] || (b[j] == b[bj] && (a[j] > a[bj] || (a[j] == a[bj] && j < bj)))));
                    Some(if take { (x, j) } else { (bx, bj) })
                }
            };
        }
        match next {
            Some((x, j)) => {
                segs.push((x, j));
                cur = j;
                x_cur = x;
            }
            None => return segs,
        }
    }
}

/// Best value for coordinate `d` with the others held fixed. Returns the
/// chosen value and the BLEU on its interval.
fn line_search(dev: &[DevList], w: &[f64], d: usize, cfg: &MertConfig) -> (f64, f64) {
    let mut envelopes = Vec::with_capacity(dev.len());
    let mut n_breaks = 0usize;
    for l in dev {
        let slope: Vec<f64> = l.features.iter().map(|f| f[d]).collect();
        let icpt: Vec<f64> = l.features.iter().map(|f| dot(w, f) - w[d] * f[d]).collect();
        let env = upper_envelope(&icpt, &slope);
        n_breaks += env.len() - 1;
        envelopes.push(env);
    }
    if n_breaks > cfg.breakpoint_cap {
        return grid_search(dev, w, d, cfg.max_n);
    }

    let mut events: Vec<(f64, usize, usize)> = Vec::with_capacity(n_breaks);
    let mut stats = BleuStats::zero(cfg.max_n);
    let mut choice = Vec::with_capacity(dev.len());
    for (li, env) in envelopes.iter().enumerate() {
        stats.add(&dev[li].stats[env[0].1]);
        choice.push(env[0].1);
        events.extend(env[1..].iter().map(|&(x, i)| (x, li, i)));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let pick = |lo: f64, hi: f64| -> f64 {
        match (lo.is_finite(), hi.is_finite()) {
            (false, false) => w[d],
            (false, true) => hi - 1.0,
            (true, false) => lo + 1.0,
            (true, true) => 0.5 * (lo + hi),
        }
    };
    let contains = |lo: f64, hi: f64| lo < w[d] && w[d] < hi;

    let mut lo = f64::NEG_INFINITY;
    let mut best: Option<(f64, f64, bool)> = None; // (bleu, x, holds current value)
    let mut consider = |lo: f64, hi: f64, bleu: f64| {
        let here = contains(lo, hi);
        let better = match best {
            None => true,
            Some((b, _, cur)) => bleu > b || (bleu == b && here && !cur),
        };
        if better {
            best = Some((bleu, if here { w[d] } else { pick(lo, hi) }, here));
        }
    };
    let mut i = 0;
    while i < events.len() {
        let x = events[i].0;
        consider(lo, x, stats.bleu());
        while i < events.len() && events[i].0 == x {
            let (_, li, new) = events[i];
            stats.sub(&dev[li].stats[choice[li]]);
            stats.add(&dev[li].stats[new]);
            choice[li] = new;
            i += 1;
        }
        lo = x;
    }
    consider(lo, f64::INFINITY, stats.bleu());
    let (bleu, x, _) = best.expect("at least one interval");
    (x, bleu)
}

fn grid_search(dev: &[DevList], w: &[f64], d: usize, max_n: usize) -> (f64, f64) {
    let mut probe = w.to_vec();
    let mut best = (w[d], dev_bleu(dev, w, max_n));
    for k in 0..=100 {
        probe[d] = -5.0 + 0.1 * k as f64;
        let b = dev_bleu(dev, &probe, max_n);
        if b > best.1 {
            best = (probe[d], b);
        }
    }
    best
}

/// Och-style coordinate ascent with random restarts. A step is kept only if
/// dev BLEU strictly improves, so the result never scores below `init`.
pub fn mert_tune(dev: &[DevList], init: &[f64], cfg: &MertConfig) -> Result<MertResult> {
    if dev.is_empty() {
        return Err(Error::input("empty dev set"));
    }
    if init.is_empty() || init.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("initial weights must be non-empty and finite"));
    }
    if let Some(l) = dev
        .iter()
        .find(|l| l.features.is_empty() || l.features.iter().any(|f| f.len() != init.len()))
    {
        return Err(Error::input(format!(
            "dev list with {} entries does not match weight dimension {}",
            l.features.len(),
            init.len()
        )));
    }
    let max_n = cfg.max_n;
    let init_bleu = dev_bleu(dev, init, max_n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best_w = init.to_vec();
    let mut best_bleu = init_bleu;
    let mut steps = Vec::new();

    for restart in 0..=cfg.restarts {
        let mut w: Vec<f64> = if restart == 0 {
            init.to_vec()
        } else {
            (0..init.len()).map(|_| rng.gen_range(-1.0..=1.0)).collect()
        };
        let mut bleu = dev_bleu(dev, &w, max_n);
        for iteration in 0..cfg.max_iters {
            let mut improved = false;
            for d in 0..w.len() {
                let (x, _) = line_search(dev, &w, d, cfg);
                let mut trial = w.clone();
                trial[d] = x;
                let b = dev_bleu(dev, &trial, max_n);
                if b > bleu {
                    w = trial;
                    bleu = b;
                    improved = true;
                    steps.push(MertStep {
                        restart,
                        iteration,
                        coordinate: d,
                        bleu,
                    });
                }
            }
            if !improved {
                break;
            }
        }
        if bleu > best_bleu {
            best_bleu = bleu;
            best_w = w;
        }
    }
    Ok(MertResult {
        weights: best_w,
        bleu: best_bleu,
        init_bleu,
        steps,
    })
}
