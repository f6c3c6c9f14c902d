//! Monte-Carlo check of the excess-risk story: splitting one 3-class
//! task into two binary subtasks creates a conflict region where both
//! subtask classifiers fire, and the composite's excess risk over the
//! jointly learned classifier is approximately Pr(error | conflict) *
//! Pr(conflict). Worlds are axis-aligned boxes over uniform X in [0,1]^2
//! so every region probability has a closed form.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// rho = (p - p1 p2) / sqrt(p1 (1-p1) p2 (1-p2)) for event probabilities
/// p1 = Pr(A), p2 = Pr(B), p = Pr(A and B).
pub fn correlation_coefficient(p: f64, p1: f64, p2: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p1) || !(0.0..=1.0).contains(&p2) || !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(
            "probabilities must lie in [0,1]".into(),
        ));
    }
    if p1 == 0.0 || p1 == 1.0 || p2 == 0.0 || p2 == 1.0 {
        return Err(Error::DegenerateProbability(format!(
            "p1={p1}, p2={p2}: indicator variance is zero"
        )));
    }
    let lo = (p1 + p2 - 1.0).max(0.0);
    let hi = p1.min(p2);
    if p < lo - 1e-12 || p > hi + 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "joint probability p={p} outside feasible [{lo}, {hi}] for p1={p1}, p2={p2}"
        )));
    }
    Ok((p - p1 * p2) / (p1 * (1.0 - p1) * p2 * (1.0 - p2)).sqrt())
}

/// Full-height boxes over uniform X in [0,1]^2. Subtask 1's positive
/// region is x0 in [0, p1]; subtask 2's is x0 in [p1-p, p1-p+p2], so the
/// overlap has measure exactly p. Truth labels the overlap 1, so the
/// jointly learned (Bayes) classifier is error-free and all composite
/// error comes from the conflict region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxWorld {
    pub p: f64,
    pub p1: f64,
    pub p2: f64,
}

impl BoxWorld {
    pub fn new(p: f64, p1: f64, p2: f64) -> Result<BoxWorld> {
        // validates feasibility as a side effect
        correlation_coefficient(p, p1, p2)?;
        if p1 - p + p2 > 1.0 + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "regions [0,{p1}] and [{},{}] do not fit in [0,1]",
                p1 - p,
                p1 - p + p2
            )));
        }
        Ok(BoxWorld { p, p1, p2 })
    }

    /// Disjoint positive regions: empty conflict region, zero excess
    /// risk. (Its exact indicator correlation is -p1p2/denominator.)
    pub fn disjoint(p1: f64, p2: f64) -> Result<BoxWorld> {
        BoxWorld::new(0.0, p1, p2)
    }

    pub fn in_b1(&self, x0: f64) -> bool {
        x0 <= self.p1
    }

    pub fn in_b2(&self, x0: f64) -> bool {
        x0 >= self.p1 - self.p && x0 <= self.p1 - self.p + self.p2
    }

    pub fn truth(&self, x0: f64) -> usize {
        if self.in_b1(x0) {
            1
        } else if self.in_b2(x0) {
            2
        } else {
            0
        }
    }

    pub fn rho(&self) -> f64 {
        correlation_coefficient(self.p, self.p1, self.p2).unwrap()
    }
}

/// A world for a target subtask correlation: p = p1 p2 + rho * sqrt(...).
/// Unreachable rho (for these marginals and the unit interval) errors
/// with the feasible interval.
pub fn make_world_for_rho(rho: f64, p1: f64, p2: f64) -> Result<BoxWorld> {
    if p1 <= 0.0 || p1 >= 1.0 || p2 <= 0.0 || p2 >= 1.0 {
        return Err(Error::DegenerateProbability(format!(
            "p1={p1}, p2={p2}: need open-interval marginals"
        )));
    }
    let denom = (p1 * (1.0 - p1) * p2 * (1.0 - p2)).sqrt();
    // both boxes must fit in [0,1]: p >= p1 + p2 - 1 as well
    let lo_p = (p1 + p2 - 1.0).max(0.0);
    let hi_p = p1.min(p2);
    let lo = (lo_p - p1 * p2) / denom;
    let hi = (hi_p - p1 * p2) / denom;
    if rho < lo - 1e-12 || rho > hi + 1e-12 {
        return Err(Error::UnreachableCorrelation {
            requested: rho,
            lo,
            hi,
        });
    }
    let p = (p1 * p2 + rho * denom).clamp(lo_p, hi_p);
    BoxWorld::new(p, p1, p2)
}

pub type RegionFn = Box<dyn Fn(&[f64]) -> bool + Sync>;
pub type LabelFn = Box<dyn Fn(&[f64]) -> usize + Sync>;

/// Two fixed subtask classifiers, a fixed joint classifier, and the
/// ground truth, all over the same sampler.
pub struct SubtaskWorld {
    pub f1: RegionFn,
    pub f2: RegionFn,
    pub f: LabelFn,
    pub truth: LabelFn,
    pub dim: usize,
    pub n_samples: usize,
    pub seed: u64,
}

impl SubtaskWorld {
    /// Exact mode: the region-optimal classifiers themselves.
    pub fn exact(world: BoxWorld, n_samples: usize, seed: u64) -> SubtaskWorld {
        let w1 = world;
        let w2 = world;
        let w3 = world;
        let w4 = world;
        SubtaskWorld {
            f1: Box::new(move |x| w1.in_b1(x[0])),
            f2: Box::new(move |x| w2.in_b2(x[0])),
            f: Box::new(move |x| w3.truth(x[0])),
            truth: Box::new(move |x| w4.truth(x[0])),
            dim: 2,
            n_samples,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskEstimate {
    pub rho: f64,
    pub p: f64,
    pub p1: f64,
    pub p2: f64,
    pub pr_conflict: f64,
    pub excess_risk: f64,
    pub predicted_excess: f64,
    pub err_composite: f64,
    pub err_joint: f64,
    pub se_conflict: f64,
    pub se_excess: f64,
    pub n_samples: usize,
}

pub fn standard_error(q: f64, n: usize) -> f64 {
    (q * (1.0 - q) / n as f64).sqrt()
}

const CHUNK: usize = 1 << 14;
pub const MIN_SAMPLES: usize = 10_000;

#[derive(Default, Clone, Copy)]
struct Tally {
    c1: u64,
    c2: u64,
    c_both: u64,
    c_conflict: u64,
    c_err_f: u64,
    c_err_fhat: u64,
    c_fhat_err_in_conflict: u64,
    sum_d: i64,
    sum_d2: u64,
}

impl Tally {
    fn merge(mut self, o: Tally) -> Tally {
        self.c1 += o.c1;
        self.c2 += o.c2;
        self.c_both += o.c_both;
        self.c_conflict += o.c_conflict;
        self.c_err_f += o.c_err_f;
        self.c_err_fhat += o.c_err_fhat;
        self.c_fhat_err_in_conflict += o.c_fhat_err_in_conflict;
        self.sum_d += o.sum_d;
        self.sum_d2 += o.sum_d2;
        self
    }
}

/// The composite of the two subtask classifiers; both firing is the
/// conflict case, left undefined by the construction and scored as an
/// error here (the conservative reading).
const ND: usize = usize::MAX;

fn composite(pos1: bool, pos2: bool) -> usize {
    match (pos1, pos2) {
        (true, true) => ND,
        (true, false) => 1,
        (false, true) => 2,
        (false, false) => 0,
    }
}

/// Monte-Carlo estimate of the event probabilities, the conflict mass,
/// and both sides of the excess-risk approximation. Integer per-chunk
/// tallies merged by summation keep the result byte-deterministic under
/// parallel sampling.
pub fn estimate_risks(world: &SubtaskWorld) -> Result<RiskEstimate> {
    if world.n_samples < MIN_SAMPLES {
        return Err(Error::InvalidParameter(format!(
            "need at least {MIN_SAMPLES} samples, got {}",
            world.n_samples
        )));
    }
    let n = world.n_samples;
    let n_chunks = n.div_ceil(CHUNK);
    let tally = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(
                world
                    .seed
                    .wrapping_add((chunk as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            );
            let size = CHUNK.min(n - chunk * CHUNK);
            let mut t = Tally::default();
            let mut x = vec![0.0f64; world.dim];
            for _ in 0..size {
                for v in x.iter_mut() {
                    *v = rng.gen::<f64>();
                }
                let y = (world.truth)(&x);
                // event probabilities are estimated from the subtask
                // classifiers' positive regions (which equal the truth
                // regions in exact mode)
                let in1 = (world.f1)(&x);
                let in2 = (world.f2)(&x);
                if in1 {
                    t.c1 += 1;
                }
                if in2 {
                    t.c2 += 1;
                }
                if in1 && in2 {
                    t.c_both += 1;
                    t.c_conflict += 1;
                }
                let fhat = composite(in1, in2);
                let fj = (world.f)(&x);
                let err_hat = (fhat != y) as i64;
                let err_j = (fj != y) as i64;
                t.c_err_fhat += err_hat as u64;
                t.c_err_f += err_j as u64;
                if in1 && in2 && err_hat == 1 {
                    t.c_fhat_err_in_conflict += 1;
                }
                let d = err_hat - err_j;
                t.sum_d += d;
                t.sum_d2 += d.unsigned_abs();
            }
            t
        })
        .reduce(Tally::default, Tally::merge);

    let nf = n as f64;
    let p1 = tally.c1 as f64 / nf;
    let p2 = tally.c2 as f64 / nf;
    let p = tally.c_both as f64 / nf;
    let pr_conflict = tally.c_conflict as f64 / nf;
    let denom = p1 * (1.0 - p1) * p2 * (1.0 - p2);
    let rho = if denom > 0.0 {
        (p - p1 * p2) / denom.sqrt()
    } else {
        log::warn!("degenerate marginal estimate; reporting rho = 0");
        0.0
    };
    let excess_risk = tally.sum_d as f64 / nf;
    let mean_d2 = tally.sum_d2 as f64 / nf;
    let se_excess = ((mean_d2 - excess_risk * excess_risk).max(0.0) / nf).sqrt();
    let predicted_excess = tally.c_fhat_err_in_conflict as f64 / nf;
    Ok(RiskEstimate {
        rho,
        p,
        p1,
        p2,
        pr_conflict,
        excess_risk,
        predicted_excess,
        err_composite: tally.c_err_fhat as f64 / nf,
        err_joint: tally.c_err_f as f64 / nf,
        se_conflict: standard_error(pr_conflict, n),
        se_excess,
        n_samples: n,
    })
}

/// One estimate per target correlation level; the zero level is realized
/// as disjoint positive regions (the no-conflict regime the theorem
/// contrasts against), positive levels via the closed-form joint
/// probability.
pub fn sweep_correlation(
    levels: &[f64],
    p1: f64,
    p2: f64,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<RiskEstimate>> {
    levels
        .iter()
        .map(|&rho| {
            let world = if rho == 0.0 {
                BoxWorld::disjoint(p1, p2)?
            } else {
                make_world_for_rho(rho, p1, p2)?
            };
            estimate_risks(&SubtaskWorld::exact(world, n_samples, seed))
        })
        .collect()
}

/// Secondary mode: the same world but with CART-learned classifiers in
/// place of the region-optimal ones, to show the approximation holds
/// approximately when f1, f2, f only approach the Bayes classifiers.
pub fn learned_world(
    world: BoxWorld,
    n_train: usize,
    n_samples: usize,
    seed: u64,
) -> Result<SubtaskWorld> {
    use crate::cart::{fit_indices, TreeParams};
    use crate::dataset::FeatureVector;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7ea1);
    let records: Vec<FeatureVector> = (0..n_train)
        .map(|_| FeatureVector {
            values: vec![rng.gen::<f64>(), rng.gen::<f64>()],
            payload_len: 0,
            label_index: 0,
        })
        .collect();
    let y: Vec<usize> = records.iter().map(|r| world.truth(r.values[0])).collect();
    // subtask labels are the region memberships: each subtask sees its
    // own binary problem, and both fire on the overlap
    let y1: Vec<usize> = records.iter().map(|r| world.in_b1(r.values[0]) as usize).collect();
    let y2: Vec<usize> = records.iter().map(|r| world.in_b2(r.values[0]) as usize).collect();
    let all: Vec<usize> = (0..n_train).collect();
    let params = TreeParams {
        max_depth: Some(8),
        ..TreeParams::default()
    };
    let t1 = fit_indices(&records, &y1, &all, 2, &params, seed)?;
    let t2 = fit_indices(&records, &y2, &all, 2, &params, seed.wrapping_add(1))?;
    let tj = fit_indices(&records, &y, &all, 3, &params, seed.wrapping_add(2))?;
    Ok(SubtaskWorld {
        f1: Box::new(move |x| t1.predict(x).map(|(c, _)| c == 1).unwrap_or(false)),
        f2: Box::new(move |x| t2.predict(x).map(|(c, _)| c == 1).unwrap_or(false)),
        f: Box::new(move |x| tj.predict(x).map(|(c, _)| c).unwrap_or(0)),
        truth: Box::new(move |x| world.truth(x[0])),
        dim: 2,
        n_samples,
        seed,
    })
}
