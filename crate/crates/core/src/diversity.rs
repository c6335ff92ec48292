//! Ego-diversity initial selection.
//!
//! The pool is split into weather/lighting buckets, each bucket into maneuver
//! classes, and the initial budget is spread over the resulting 16 strata
//! with shares proportional to `count^gamma`. `gamma < 1` flattens the
//! distribution towards rare strata. Inside a stratum clips are sorted by
//! mean speed and picked at evenly spaced positions.
//!
//! Integer counts come from largest-remainder apportionment, applied
//! top-down: first the budget over buckets, then each bucket's count over
//! its maneuver classes. Bucket totals therefore depend only on bucket sizes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::{classify_command, Bucket, ClipRecord, CommandClass, Pool};

/// `count^gamma / sum(count^gamma)` for each entry, with `0^gamma = 0`.
fn power_shares(counts: &[usize], gamma: f64) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    let weights: Vec<f64> = counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { (c as f64).powf(gamma) })
        .collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::AllCountsZero);
    }
    Ok(weights.into_iter().map(|w| w / total).collect())
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::Config(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    Ok(())
}

/// Bucket shares, indexed by [`Bucket::index`].
pub fn first_level_shares(counts: &[usize; 4], gamma: f64) -> Result<[f64; 4]> {
    let shares = power_shares(counts, gamma)?;
    Ok([shares[0], shares[1], shares[2], shares[3]])
}

/// Splits a bucket share over the maneuver classes of that bucket, indexed by
/// [`CommandClass::index`]. A zero bucket share yields all zeros; a positive
/// share over four empty classes is [`Error::EmptyStratum`] so the caller
/// can hand that share to the other buckets.
pub fn second_level_shares(bucket_share: f64, counts: &[usize; 4], gamma: f64) -> Result<[f64; 4]> {
    if !(0.0..=1.0).contains(&bucket_share) {
        return Err(Error::Config(format!(
            "bucket share must lie in [0, 1], got {bucket_share}"
        )));
    }
    match power_shares(counts, gamma) {
        Ok(s) => Ok([
            bucket_share * s[0],
            bucket_share * s[1],
            bucket_share * s[2],
            bucket_share * s[3],
        ]),
        Err(Error::AllCountsZero) if bucket_share == 0.0 => Ok([0.0; 4]),
        Err(Error::AllCountsZero) => Err(Error::EmptyStratum),
        Err(e) => Err(e),
    }
}

/// Largest-remainder apportionment of `total` over strata with the given
/// shares, never exceeding a stratum's capacity.
///
/// Strata are listed in their fixed order; ties on the fractional remainder
/// go to the earlier stratum. When a stratum hits its capacity the overflow
/// is apportioned again over the strata that still have room, using their
/// original shares. If every positive-share stratum is full the remainder is
/// spread evenly over whatever capacity is left.
pub fn integerize(shares: &[f64], total: usize, capacities: &[usize]) -> Result<Vec<usize>> {
    if shares.len() != capacities.len() {
        return Err(Error::LengthMismatch {
            left: shares.len(),
            right: capacities.len(),
        });
    }
    if let Some(s) = shares.iter().find(|s| !s.is_finite() || **s < 0.0) {
        return Err(Error::Config(format!("invalid share {s}")));
    }
    let available: usize = capacities.iter().sum();
    if total > available {
        return Err(Error::BudgetExceedsPool {
            requested: total,
            available,
        });
    }

    let mut allocated = vec![0usize; shares.len()];
    let mut remaining = total;
    let mut uniform = false;
    while remaining > 0 {
        let open: Vec<usize> = (0..shares.len())
            .filter(|&i| allocated[i] < capacities[i] && (uniform || shares[i] > 0.0))
            .collect();
        if open.is_empty() {
            // Only zero-share strata have room left.
            uniform = true;
            continue;
        }
        let weight = |i: usize| if uniform { 1.0 } else { shares[i] };
        let open_total: f64 = open.iter().map(|&i| weight(i)).sum();

        let quotas: Vec<f64> = open
            .iter()
            .map(|&i| remaining as f64 * weight(i) / open_total)
            .collect();
        let mut grant: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let floored: usize = grant.iter().sum();
        let mut leftover = remaining.saturating_sub(floored);

        let mut by_remainder: Vec<usize> = (0..open.len()).collect();
        by_remainder.sort_by(|&a, &b| {
            let ra = quotas[a] - quotas[a].floor();
            let rb = quotas[b] - quotas[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for &slot in &by_remainder {
            if leftover == 0 {
                break;
            }
            grant[slot] += 1;
            leftover -= 1;
        }

        let mut placed = 0;
        for (slot, &i) in open.iter().enumerate() {
            let room = capacities[i] - allocated[i];
            let take = grant[slot].min(room).min(remaining - placed);
            allocated[i] += take;
            placed += take;
        }
        remaining -= placed;
        if placed == 0 {
            // Nothing fit; shares are too small to move anything.
            uniform = true;
        }
    }
    Ok(allocated)
}

/// Evenly spaced positions `floor((j + 0.5) * m / k)` for `j in 0..k`.
pub fn speed_pick_indices(m: usize, k: usize) -> Result<Vec<usize>> {
    if k > m {
        return Err(Error::BudgetExceedsPool {
            requested: k,
            available: m,
        });
    }
    Ok((0..k).map(|j| (2 * j + 1) * m / (2 * k)).collect())
}

/// Picks `k` items at regular intervals from a list already sorted by
/// ascending mean speed.
pub fn select_by_speed<T: Clone>(sorted: &[T], k: usize) -> Result<Vec<T>> {
    Ok(speed_pick_indices(sorted.len(), k)?
        .into_iter()
        .map(|i| sorted[i].clone())
        .collect())
}

/// Budget bookkeeping for one (bucket, maneuver) stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumAllocation {
    pub bucket: Bucket,
    pub command: CommandClass,
    pub available: usize,
    /// `P_{x,y} * n0` before rounding.
    pub share: f64,
    pub allocated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversitySelection {
    /// Selected ids, stratum by stratum, slowest first within a stratum.
    pub ids: Vec<String>,
    /// All 16 strata in fixed order, including empty ones.
    pub allocations: Vec<StratumAllocation>,
}

impl DiversitySelection {
    pub fn bucket_totals(&self) -> [usize; 4] {
        let mut totals = [0; 4];
        for a in &self.allocations {
            totals[a.bucket.index()] += a.allocated;
        }
        totals
    }

    pub fn command_totals(&self) -> [usize; 4] {
        let mut totals = [0; 4];
        for a in &self.allocations {
            totals[a.command.index()] += a.allocated;
        }
        totals
    }
}

/// Groups clips into the 16 strata, each sorted by (mean speed, id).
pub fn stratify(pool: &Pool, tau_c: usize) -> [[Vec<&ClipRecord>; 4]; 4] {
    let mut strata: [[Vec<&ClipRecord>; 4]; 4] = Default::default();
    for clip in pool.clips() {
        let b = clip.bucket().index();
        let c = classify_command(clip, tau_c).index();
        strata[b][c].push(clip);
    }
    for row in strata.iter_mut() {
        for members in row.iter_mut() {
            members.sort_by(|a, b| {
                a.mean_speed()
                    .total_cmp(&b.mean_speed())
                    .then_with(|| a.id.cmp(&b.id))
            });
        }
    }
    strata
}

/// Selects `min(n0, |pool|)` clips by two-level stratified allocation and
/// speed-interval picking. Deterministic for a fixed pool.
pub fn ego_diversity_init(
    pool: &Pool,
    n0: usize,
    gamma: f64,
    tau_c: usize,
) -> Result<DiversitySelection> {
    if n0 == 0 {
        return Err(Error::Config("initial budget must be at least 1".into()));
    }
    if tau_c == 0 {
        return Err(Error::Config("command threshold must be at least 1".into()));
    }
    let budget = n0.min(pool.len());
    let strata = stratify(pool, tau_c);

    let bucket_counts: [usize; 4] = std::array::from_fn(|b| strata[b].iter().map(Vec::len).sum());
    let bucket_shares = first_level_shares(&bucket_counts, gamma)?;
    let bucket_alloc = integerize(&bucket_shares, budget, &bucket_counts)?;

    let mut ids = Vec::with_capacity(budget);
    let mut allocations = Vec::with_capacity(16);
    for bucket in Bucket::ALL {
        let b = bucket.index();
        let cmd_counts: [usize; 4] = std::array::from_fn(|c| strata[b][c].len());
        let cmd_shares = if bucket_counts[b] == 0 {
            [0.0; 4]
        } else {
            second_level_shares(bucket_shares[b], &cmd_counts, gamma)?
        };
        let cmd_alloc = if bucket_alloc[b] == 0 {
            vec![0; 4]
        } else {
            let conditional: Vec<f64> = cmd_shares.iter().map(|s| s / bucket_shares[b]).collect();
            integerize(&conditional, bucket_alloc[b], &cmd_counts)?
        };
        for command in CommandClass::ALL {
            let c = command.index();
            let members = &strata[b][c];
            let picked = select_by_speed(members, cmd_alloc[c])?;
            ids.extend(picked.into_iter().map(|clip| clip.id.clone()));
            allocations.push(StratumAllocation {
                bucket,
                command,
                available: members.len(),
                share: cmd_shares[c] * n0 as f64,
                allocated: cmd_alloc[c],
            });
        }
    }
    Ok(DiversitySelection { ids, allocations })
}
