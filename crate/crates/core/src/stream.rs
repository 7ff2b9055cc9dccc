//! Non-stationary stream construction.
//!
//! Each task proposes a Gaussian over stream positions centred on
//! `|D_i|/2 + sum_{k<i} |D_k|` with spread `|D_i|/2`. Proposals are
//! discretized into unit slots by cumulative rounding and a greedy pass fills
//! slots in time order, spilling overflow forward.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Instance, TaskId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy")]
pub enum OrderPolicy {
    Random { seed: u64 },
    AscSize,
    DescSize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSchedule {
    pub order: Vec<TaskId>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub sizes: Vec<usize>,
    pub total: usize,
}

impl TaskSchedule {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Per-slot proposal counts for task `i`; sums to `sizes[i]`.
    ///
    /// The Gaussian is truncated to the widest window symmetric about its
    /// mean that fits in `[0, total]`, then renormalized.
    pub fn proposals(&self, i: usize) -> Vec<usize> {
        let (mu, sigma, size, n) = (self.mu[i], self.sigma[i], self.sizes[i] as f64, self.total);
        let radius = mu.min(n as f64 - mu).max(0.0);
        let (lo, hi) = (mu - radius, mu + radius);
        let cdf = |x: f64| normal_cdf((x - mu) / sigma);
        let (c_lo, c_hi) = (cdf(lo), cdf(hi));
        let mass = c_hi - c_lo;
        let cumulative = |t: usize| -> i64 {
            let x = (t as f64).clamp(lo, hi);
            let frac = if mass > 0.0 {
                (cdf(x) - c_lo) / mass
            } else if x >= mu {
                1.0
            } else {
                0.0
            };
            (size * frac).round() as i64
        };
        let mut out = Vec::with_capacity(n);
        let mut prev = cumulative(0);
        for t in 0..n {
            let next = if t + 1 == n {
                size as i64
            } else {
                cumulative(t + 1)
            };
            out.push((next - prev).max(0) as usize);
            prev = next.max(prev);
        }
        out
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

pub fn propose_schedule<T>(
    task_pools: &BTreeMap<TaskId, Vec<T>>,
    policy: OrderPolicy,
) -> Result<TaskSchedule> {
    let mut tasks: Vec<(&TaskId, usize)> = task_pools
        .iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(k, v)| (k, v.len()))
        .collect();
    if tasks.is_empty() {
        return Err(Error::EmptyPools);
    }
    match policy {
        OrderPolicy::Random { seed } => tasks.shuffle(&mut ChaCha8Rng::seed_from_u64(seed)),
        OrderPolicy::AscSize => tasks.sort_by_key(|&(_, n)| n),
        OrderPolicy::DescSize => tasks.sort_by_key(|&(_, n)| std::cmp::Reverse(n)),
    }
    let mut mu = Vec::with_capacity(tasks.len());
    let mut sigma = Vec::with_capacity(tasks.len());
    let mut before = 0usize;
    for &(_, n) in &tasks {
        mu.push(n as f64 / 2.0 + before as f64);
        sigma.push(n as f64 / 2.0);
        before += n;
    }
    Ok(TaskSchedule {
        order: tasks.iter().map(|(k, _)| (*k).clone()).collect(),
        sizes: tasks.iter().map(|&(_, n)| n).collect(),
        mu,
        sigma,
        total: before,
    })
}

/// Stream order as `(task index in schedule, index within the shuffled pool)`.
pub fn stream_order(schedule: &TaskSchedule, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = schedule.total;
    let within: Vec<Vec<usize>> = schedule
        .sizes
        .iter()
        .map(|&size| {
            let mut idx: Vec<usize> = (0..size).collect();
            idx.shuffle(&mut rng);
            idx
        })
        .collect();
    let proposals: Vec<Vec<usize>> = (0..schedule.len()).map(|i| schedule.proposals(i)).collect();
    let mut next_item = vec![0usize; schedule.len()];

    let mut pending: VecDeque<(usize, usize)> = VecDeque::new();
    let mut out = Vec::with_capacity(n);
    let mut arrivals = Vec::new();
    for t in 0..n {
        arrivals.clear();
        for (task, props) in proposals.iter().enumerate() {
            for _ in 0..props[t] {
                arrivals.push((task, within[task][next_item[task]]));
                next_item[task] += 1;
            }
        }
        arrivals.shuffle(&mut rng);
        pending.extend(arrivals.iter().copied());
        if let Some(item) = pending.pop_front() {
            out.push(item);
        }
    }
    out.extend(pending);
    debug_assert_eq!(out.len(), n);
    out
}

#[derive(Debug, Clone)]
pub struct Stream {
    pub instances: Vec<Instance>,
    pub batch_size: usize,
}

impl Stream {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn num_batches(&self) -> usize {
        self.instances.len().div_ceil(self.batch_size)
    }

    /// Single pass in stream order; the last batch may be short.
    pub fn batches(&self) -> std::slice::Chunks<'_, Instance> {
        self.instances.chunks(self.batch_size)
    }

    /// For each task, the number of batches after which `fraction` of its
    /// instances have been visited.
    pub fn task_windows(&self, fraction: f64) -> BTreeMap<TaskId, usize> {
        let mut positions: BTreeMap<&TaskId, Vec<usize>> = BTreeMap::new();
        for (i, inst) in self.instances.iter().enumerate() {
            positions.entry(&inst.task_id).or_default().push(i);
        }
        positions
            .into_iter()
            .map(|(task, pos)| {
                let need = ((fraction * pos.len() as f64).ceil() as usize).clamp(1, pos.len());
                (task.clone(), pos[need - 1] / self.batch_size + 1)
            })
            .collect()
    }
}

pub fn build_stream(
    schedule: &TaskSchedule,
    task_pools: &BTreeMap<TaskId, Vec<Instance>>,
    seed: u64,
    batch_size: usize,
) -> Result<Stream> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let pools: Vec<&Vec<Instance>> = schedule
        .order
        .iter()
        .zip(&schedule.sizes)
        .map(|(t, &n)| match task_pools.get(t) {
            Some(p) if p.len() == n => Ok(p),
            _ => Err(Error::Config(format!(
                "pool for task `{t}` does not match the schedule"
            ))),
        })
        .collect::<Result<_>>()?;
    let instances = stream_order(schedule, seed)
        .into_iter()
        .map(|(task, item)| pools[task][item].clone())
        .collect();
    Ok(Stream {
        instances,
        batch_size,
    })
}

/// Writes `slot,task_id` rows.
pub fn write_slot_csv(path: &Path, stream: &Stream) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["slot", "task_id"])?;
    for (i, inst) in stream.instances.iter().enumerate() {
        w.write_record([i.to_string(), inst.task_id.0.clone()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `task,mu,sigma,count` rows.
pub fn write_schedule_csv(path: &Path, schedule: &TaskSchedule) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["task", "mu", "sigma", "count"])?;
    for i in 0..schedule.len() {
        w.write_record([
            schedule.order[i].0.clone(),
            schedule.mu[i].to_string(),
            schedule.sigma[i].to_string(),
            schedule.sizes[i].to_string(),
        ])?;
    }
    let mut inner = w
        .into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?;
    inner.flush().map_err(|e| Error::io(path, e))
}

pub fn read_slot_csv(path: &Path) -> Result<Vec<(usize, TaskId)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let (slot, task): (usize, String) = row?;
        out.push((slot, TaskId(task)));
    }
    Ok(out)
}
