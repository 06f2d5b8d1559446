//! Tabular discriminator over `(s, a, o, o')` tuples and the adversarial objective.
//!
//! `D = sigmoid(logit)` is the probability that a tuple came from the agent
//! rather than the expert. The imitation cost is `c = ln D`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::model::OptionTrajectory;
use crate::occupancy::OptionOccupancy;

pub const LOGIT_CLAMP: f64 = 30.0;
pub const DEFAULT_LEARNING_RATE: f64 = 3e-4;
pub const DEFAULT_MINI_BATCH: usize = 64;

/// Which parts of the tuple the discriminator sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// `(s, a, o, o')`.
    Full,
    /// `(s, a, o)`: the previous option is dropped.
    NoPrev,
    /// `(s, a)` only, for the option-agnostic baselines.
    StateAction,
}

/// One `(s, a, o, o')` tuple; `prev == k` is the initial option.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub s: usize,
    pub a: usize,
    pub o: usize,
    pub prev: usize,
}

impl Cell {
    pub fn new(s: usize, a: usize, o: usize, prev: usize) -> Self {
        Self { s, a, o, prev }
    }
}

/// A normalized weighted set of tuples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightedCells {
    pub cells: Vec<(Cell, f64)>,
}

impl WeightedCells {
    /// Normalizes the given weights to total one; zero-weight entries are dropped.
    pub fn new(cells: Vec<(Cell, f64)>) -> Result<Self> {
        if cells.iter().any(|&(_, w)| w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidModel(
                "cell weights must be finite and nonnegative",
            ));
        }
        let total: f64 = cells.iter().map(|&(_, w)| w).sum();
        if total <= 0.0 {
            return Err(Error::Empty("weighted cell set"));
        }
        Ok(Self {
            cells: cells
                .into_iter()
                .filter(|&(_, w)| w > 0.0)
                .map(|(c, w)| (c, w / total))
                .collect(),
        })
    }

    /// Every nonzero cell of an occupancy measure, weighted by its mass.
    pub fn from_occupancy(occ: &OptionOccupancy) -> Self {
        let (n_a, k) = (occ.n_actions(), occ.k());
        let cells = occ
            .values()
            .iter()
            .enumerate()
            .filter(|&(_, &x)| x > 0.0)
            .map(|(i, &x)| {
                let prev = i % (k + 1);
                let o = (i / (k + 1)) % k;
                let a = (i / ((k + 1) * k)) % n_a;
                let s = i / ((k + 1) * k * n_a);
                (Cell::new(s, a, o, prev), x)
            })
            .collect();
        Self::new(cells).expect("occupancy has positive mass")
    }

    /// Tuples from labeled trajectories, weighted `γ^t` when `discount` is given, else uniformly.
    pub fn from_trajectories(trajs: &[OptionTrajectory], discount: Option<f64>) -> Result<Self> {
        let mut cells = Vec::new();
        for traj in trajs {
            let mut w = 1.0;
            for t in 0..traj.len() {
                let cell = Cell::new(
                    traj.states[t],
                    traj.actions[t],
                    traj.option_at(t),
                    traj.prev_option_at(t),
                );
                cells.push((cell, w));
                if let Some(g) = discount {
                    w *= g;
                }
            }
        }
        Self::new(cells)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    n_states: usize,
    n_actions: usize,
    k: usize,
    variant: Variant,
    logits: Vec<f64>,
    pub learning_rate: f64,
    step_count: u64,
}

impl Discriminator {
    /// All logits zero, so `D ≡ 1/2`.
    pub fn new(n_states: usize, n_actions: usize, k: usize, variant: Variant) -> Self {
        let slots = match variant {
            Variant::Full => n_states * n_actions * k * (k + 1),
            Variant::NoPrev => n_states * n_actions * k,
            Variant::StateAction => n_states * n_actions,
        };
        Self {
            n_states,
            n_actions,
            k,
            variant,
            logits: vec![0.0; slots],
            learning_rate: DEFAULT_LEARNING_RATE,
            step_count: 0,
        }
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    #[inline]
    fn slot(&self, s: usize, a: usize, o: usize, prev: usize) -> usize {
        let sa = s * self.n_actions + a;
        match self.variant {
            Variant::Full => (sa * self.k + o) * (self.k + 1) + prev,
            Variant::NoPrev => sa * self.k + o,
            Variant::StateAction => sa,
        }
    }

    fn check(&self, s: usize, a: usize, o: usize, prev: usize) -> Result<()> {
        if s >= self.n_states || a >= self.n_actions || o >= self.k || prev > self.k {
            return Err(Error::IndexOutOfRange("discriminator cell"));
        }
        Ok(())
    }

    pub fn logit(&self, s: usize, a: usize, o: usize, prev: usize) -> f64 {
        self.logits[self.slot(s, a, o, prev)]
    }

    pub fn set_logit(&mut self, s: usize, a: usize, o: usize, prev: usize, value: f64) {
        let i = self.slot(s, a, o, prev);
        self.logits[i] = value.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    }

    /// `D(s, a, o, o')`.
    pub fn prob(&self, s: usize, a: usize, o: usize, prev: usize) -> f64 {
        math::sigmoid(self.logit(s, a, o, prev))
    }

    /// `c = ln D`, always negative.
    pub fn cost(&self, s: usize, a: usize, o: usize, prev: usize) -> Result<f64> {
        self.check(s, a, o, prev)?;
        Ok(self.cost_at(s, a, o, prev))
    }

    /// Imitation reward `-c = -ln D`, always positive.
    pub fn reward(&self, s: usize, a: usize, o: usize, prev: usize) -> Result<f64> {
        Ok(-self.cost(s, a, o, prev)?)
    }

    #[inline]
    pub(crate) fn cost_at(&self, s: usize, a: usize, o: usize, prev: usize) -> f64 {
        math::log_sigmoid(self.logit(s, a, o, prev))
    }

    /// Cost table indexed `(s, a, o, o')`, expanded over collapsed axes.
    pub fn cost_table(&self) -> Vec<f64> {
        let k = self.k;
        let mut out = Vec::with_capacity(self.n_states * self.n_actions * k * (k + 1));
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                for o in 0..k {
                    for prev in 0..=k {
                        out.push(self.cost_at(s, a, o, prev));
                    }
                }
            }
        }
        out
    }

    /// Sets every logit to the exact maximizer of the weighted objective,
    /// `ln(w_agent / w_demo)` per slot (clamped). Slots no data touches keep their logit.
    pub fn fit_optimal(&mut self, demo: &WeightedCells, agent: &WeightedCells) {
        let mut wd = vec![0.0; self.logits.len()];
        let mut wa = vec![0.0; self.logits.len()];
        for &(c, w) in &demo.cells {
            wd[self.slot(c.s, c.a, c.o, c.prev)] += w;
        }
        for &(c, w) in &agent.cells {
            wa[self.slot(c.s, c.a, c.o, c.prev)] += w;
        }
        for (i, logit) in self.logits.iter_mut().enumerate() {
            *logit = match (wd[i] > 0.0, wa[i] > 0.0) {
                (false, false) => *logit,
                (true, false) => -LOGIT_CLAMP,
                (false, true) => LOGIT_CLAMP,
                (true, true) => math::ln(wa[i] / wd[i]).clamp(-LOGIT_CLAMP, LOGIT_CLAMP),
            };
        }
    }
}

/// `E_demo[ln(1 - D)] + E_agent[ln D]`, the quantity the discriminator maximizes.
pub fn discriminator_objective(
    d: &Discriminator,
    demo: &WeightedCells,
    agent: &WeightedCells,
) -> f64 {
    let demo_term: f64 = demo
        .cells
        .iter()
        .map(|&(c, w)| w * math::log_sigmoid(-d.logit(c.s, c.a, c.o, c.prev)))
        .sum();
    let agent_term: f64 = agent
        .cells
        .iter()
        .map(|&(c, w)| w * d.cost_at(c.s, c.a, c.o, c.prev))
        .sum();
    demo_term + agent_term
}

/// One epoch of mini-batched gradient ascent on [`discriminator_objective`].
///
/// Both batches are walked in order. Mini-batch `j` of `M` pairs the `j`-th
/// proportional slice of each batch, where `M` is set by the larger batch, and
/// within a mini-batch each side's term is a weighted mean. Returns the
/// objective of each mini-batch before its step.
pub fn update_discriminator(
    d: &mut Discriminator,
    demo: &[(Cell, f64)],
    agent: &[(Cell, f64)],
    mini_batch: usize,
) -> Result<Vec<f64>> {
    if demo.is_empty() || agent.is_empty() {
        return Err(Error::Empty("discriminator batch"));
    }
    if mini_batch == 0 {
        return Err(Error::InvalidConfig("mini-batch size must be positive"));
    }
    for &(c, w) in demo.iter().chain(agent) {
        d.check(c.s, c.a, c.o, c.prev)?;
        if w < 0.0 || !w.is_finite() {
            return Err(Error::InvalidModel(
                "sample weights must be finite and nonnegative",
            ));
        }
    }
    let n_mb = demo.len().max(agent.len()).div_ceil(mini_batch);
    let slice = |len: usize, j: usize| (j * len / n_mb, (j + 1) * len / n_mb);
    let mut trace = Vec::with_capacity(n_mb);
    // per-slot weights of each side, so identical batches cancel exactly
    let mut wd = vec![0.0; d.logits.len()];
    let mut wa = vec![0.0; d.logits.len()];
    let mut touched = Vec::new();
    for j in 0..n_mb {
        let (d0, d1) = slice(demo.len(), j);
        let (a0, a1) = slice(agent.len(), j);
        let dw: f64 = demo[d0..d1].iter().map(|x| x.1).sum();
        let aw: f64 = agent[a0..a1].iter().map(|x| x.1).sum();
        let mut objective = 0.0;
        if dw > 0.0 {
            for &(c, w) in &demo[d0..d1] {
                let i = d.slot(c.s, c.a, c.o, c.prev);
                objective += w / dw * math::log_sigmoid(-d.logits[i]);
                wd[i] += w / dw;
                touched.push(i);
            }
        }
        if aw > 0.0 {
            for &(c, w) in &agent[a0..a1] {
                let i = d.slot(c.s, c.a, c.o, c.prev);
                objective += w / aw * math::log_sigmoid(d.logits[i]);
                wa[i] += w / aw;
                touched.push(i);
            }
        }
        for &i in &touched {
            if wd[i] != 0.0 || wa[i] != 0.0 {
                let p = math::sigmoid(d.logits[i]);
                let grad = wa[i] * (1.0 - p) - wd[i] * p;
                d.logits[i] =
                    (d.logits[i] + d.learning_rate * grad).clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
                wd[i] = 0.0;
                wa[i] = 0.0;
            }
        }
        touched.clear();
        d.step_count += 1;
        trace.push(objective);
    }
    Ok(trace)
}

/// Unweighted convenience form of [`update_discriminator`].
pub fn update_discriminator_uniform(
    d: &mut Discriminator,
    demo: &[Cell],
    agent: &[Cell],
    mini_batch: usize,
) -> Result<Vec<f64>> {
    let demo: Vec<_> = demo.iter().map(|&c| (c, 1.0)).collect();
    let agent: Vec<_> = agent.iter().map(|&c| (c, 1.0)).collect();
    update_discriminator(d, &demo, &agent, mini_batch)
}
