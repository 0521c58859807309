use std::ops::Range;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Shard {
    pub worker: usize,
    pub start: usize,
    pub len: usize,
}

impl Shard {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.len
    }
}

/// Contiguous ranges of `[0, total)`, one per worker, sized by weight.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShardPlan {
    pub total: usize,
    pub assignments: Vec<Shard>,
    pub weights: Vec<f64>,
}

impl ShardPlan {
    pub fn equal(n: usize, workers: usize) -> Result<Self> {
        plan_shards(n, &vec![1.0; workers.max(1)])
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.assignments.iter().map(|s| s.len).collect()
    }
}

/// Largest-remainder apportionment of `n` items proportional to `weights`.
/// Remainder ties go to the lower worker index.
pub fn plan_shards(n: usize, weights: &[f64]) -> Result<ShardPlan> {
    if weights.is_empty() {
        return Err(Error::InvalidConfig("at least one shard weight is required".into()));
    }
    for (index, &weight) in weights.iter().enumerate() {
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::NonPositiveWeight { index, weight });
        }
    }
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| n as f64 * w / sum).collect();
    let mut lens: Vec<usize> = quotas.iter().map(|q| (q.floor() as usize).min(n)).collect();
    let assigned: usize = lens.iter().sum();
    let mut remainder = n.saturating_sub(assigned);

    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if remainder == 0 {
            break;
        }
        lens[i] += 1;
        remainder -= 1;
    }
    // Float rounding can overshoot by a unit in pathological cases.
    let mut excess = lens.iter().sum::<usize>().saturating_sub(n);
    for i in order.iter().rev() {
        while excess > 0 && lens[*i] > 0 {
            lens[*i] -= 1;
            excess -= 1;
        }
    }

    let mut start = 0;
    let assignments = lens
        .iter()
        .enumerate()
        .map(|(worker, &len)| {
            let s = Shard { worker, start, len };
            start += len;
            s
        })
        .collect();
    Ok(ShardPlan {
        total: n,
        assignments,
        weights: weights.to_vec(),
    })
}
