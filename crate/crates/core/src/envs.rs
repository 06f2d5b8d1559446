//! Small tabular tasks with hand-built hierarchical experts.
//!
//! Each task ends in an absorbing zero-reward goal state, so the infinite-horizon
//! occupancy machinery applies unchanged. Experts are full option models whose
//! options are the natural sub-tasks of the environment.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{self, FullOptionModel, HierPolicy, OptionTrajectory, TabularMdp, Trajectory};
use crate::rng;

pub const ENV_NAMES: [&str; 3] = ["corridor-switch", "four-rooms", "lock-key"];

/// Tunable environment parameters. `None` picks the environment's default.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvParams {
    /// Corridor length (corridor-switch) or room side (lock-key). Ignored by four-rooms.
    pub size: Option<usize>,
    /// Probability that the intended action is replaced by the environment's slip outcome.
    pub slip: f64,
    pub gamma: f64,
    pub horizon: Option<usize>,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            size: None,
            slip: 0.1,
            gamma: 0.99,
            horizon: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: String,
    pub params: EnvParams,
    pub mdp: TabularMdp,
    pub expert: FullOptionModel,
    /// Options the expert actually uses.
    pub true_options: usize,
    pub horizon: usize,
}

impl EnvSpec {
    /// The expert as a one-step hierarchical policy.
    pub fn expert_policy(&self) -> HierPolicy {
        model::one_step_from_full(&self.expert)
    }

    /// Optimal expected discounted return by value iteration.
    pub fn optimal_return(&self) -> f64 {
        let v = value_iteration(&self.mdp, 1e-12);
        self.mdp.mu0().iter().zip(&v).map(|(p, x)| p * x).sum()
    }
}

/// `V*` to within `tol` in sup norm.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Vec<f64> {
    let (n_s, n_a) = (mdp.n_states(), mdp.n_actions());
    let mut v = vec![0.0; n_s];
    loop {
        let mut delta: f64 = 0.0;
        let next: Vec<f64> = (0..n_s)
            .map(|s| {
                (0..n_a)
                    .map(|a| {
                        mdp.reward(s, a)
                            + mdp.gamma()
                                * mdp
                                    .next_states(s, a)
                                    .iter()
                                    .zip(&v)
                                    .map(|(p, x)| p * x)
                                    .sum::<f64>()
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        for (a, b) in next.iter().zip(&v) {
            delta = delta.max((a - b).abs());
        }
        v = next;
        // sup-norm contraction bound on the remaining error
        if delta * mdp.gamma() / (1.0 - mdp.gamma()) < tol {
            return v;
        }
    }
}

/// Shortest episode whose truncated discount tail `γ^H` is at most 1%, so
/// empirical demo occupancies are close to their infinite-horizon values.
pub fn default_horizon(gamma: f64) -> usize {
    if gamma <= 0.0 {
        return 1;
    }
    (libm::log(0.01) / libm::log(gamma)).ceil().max(1.0) as usize
}

pub fn build_env(name: &str, params: EnvParams) -> Result<EnvSpec> {
    if !(0.0..1.0).contains(&params.slip) {
        return Err(Error::InvalidConfig("slip must lie in [0, 1)"));
    }
    match name {
        "corridor-switch" => corridor_switch(params),
        "four-rooms" => four_rooms(params),
        "lock-key" => lock_key(params),
        other => Err(Error::UnknownEnv(other.to_string())),
    }
}

/// Accumulates a transition tensor and reward table action by action.
struct Builder {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
}

impl Builder {
    fn new(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            transition: vec![0.0; n_states * n_actions * n_states],
            reward: vec![0.0; n_states * n_actions],
        }
    }

    fn add(&mut self, s: usize, a: usize, next: usize, p: f64, reward_on_arrival: f64) {
        self.transition[(s * self.n_actions + a) * self.n_states + next] += p;
        self.reward[s * self.n_actions + a] += p * reward_on_arrival;
    }

    fn finish(self, mu0: Vec<f64>, gamma: f64) -> Result<TabularMdp> {
        TabularMdp::new(
            self.n_states,
            self.n_actions,
            self.transition,
            self.reward,
            mu0,
            gamma,
        )
    }
}

/// Full option model tables under construction.
struct ExpertBuilder {
    n_states: usize,
    n_actions: usize,
    k: usize,
    intra: Vec<f64>,
    termination: Vec<f64>,
    inter: Vec<f64>,
}

impl ExpertBuilder {
    fn new(n_states: usize, n_actions: usize, k: usize) -> Self {
        Self {
            n_states,
            n_actions,
            k,
            intra: vec![1.0 / n_actions as f64; k * n_states * n_actions],
            termination: vec![1.0; k * n_states],
            inter: vec![0.0; n_states * k],
        }
    }

    /// Option `o` owns state `s`: it acts with `a` there, never terminates there, and is the one picked there.
    fn own(&mut self, o: usize, s: usize, a: usize) {
        let row = &mut self.intra[(o * self.n_states + s) * self.n_actions
            ..(o * self.n_states + s + 1) * self.n_actions];
        row.iter_mut()
            .enumerate()
            .for_each(|(i, x)| *x = if i == a { 1.0 } else { 0.0 });
        self.termination[o * self.n_states + s] = 0.0;
        let pick = &mut self.inter[s * self.k..(s + 1) * self.k];
        pick.iter_mut()
            .enumerate()
            .for_each(|(i, x)| *x = if i == o { 1.0 } else { 0.0 });
    }

    fn finish(self) -> Result<FullOptionModel> {
        FullOptionModel::new(
            self.n_states,
            self.n_actions,
            self.k,
            self.intra,
            self.termination,
            self.inter,
        )
    }
}

/// A 1×N chain ending in an absorbing goal. Cells alternate between segments
/// where `right` advances and segments where `switch` advances; the other of
/// the two is a no-op. `left` steps back. A slip turns the chosen action into
/// `left`. Entering the goal pays 1.
fn corridor_switch(params: EnvParams) -> Result<EnvSpec> {
    const LEFT: usize = 0;
    const RIGHT: usize = 1;
    const SWITCH: usize = 2;
    let n = params.size.unwrap_or(8);
    if n < 3 {
        return Err(Error::InvalidConfig(
            "corridor-switch needs at least 3 states",
        ));
    }
    let goal = n - 1;
    let segment = goal.div_ceil(2);
    let skill = |s: usize| {
        if s == goal {
            (goal - 1) / segment % 2
        } else {
            s / segment % 2
        }
    };
    let mover = |s: usize| if skill(s) == 0 { RIGHT } else { SWITCH };
    let mut b = Builder::new(n, 3);
    for s in 0..n {
        for a in 0..3 {
            if s == goal {
                b.add(s, a, s, 1.0, 0.0);
                continue;
            }
            let back = s.saturating_sub(1);
            let intended = match a {
                LEFT => back,
                x if x == mover(s) => s + 1,
                _ => s,
            };
            let pay = |t: usize| if t == goal { 1.0 } else { 0.0 };
            b.add(s, a, intended, 1.0 - params.slip, pay(intended));
            if params.slip > 0.0 {
                b.add(s, a, back, params.slip, 0.0);
            }
        }
    }
    let mut mu0 = vec![0.0; n];
    mu0[0] = 1.0;
    let mdp = b.finish(mu0, params.gamma)?;
    let mut e = ExpertBuilder::new(n, 3, 2);
    for s in 0..n {
        e.own(skill(s), s, mover(s));
    }
    // each skill keeps its motor primitive everywhere, not just where it is in charge
    for s in 0..n {
        for o in 0..2 {
            let a = if o == 0 { RIGHT } else { SWITCH };
            let row = &mut e.intra[(o * n + s) * 3..(o * n + s + 1) * 3];
            row.iter_mut()
                .enumerate()
                .for_each(|(i, x)| *x = if i == a { 1.0 } else { 0.0 });
        }
    }
    let true_options = if goal > segment { 2 } else { 1 };
    Ok(EnvSpec {
        name: "corridor-switch".into(),
        params,
        mdp,
        expert: e.finish()?,
        true_options,
        horizon: params
            .horizon
            .unwrap_or_else(|| default_horizon(params.gamma)),
    })
}

/// A square room of `L×L` cells. The agent starts in the top-left corner on
/// the locked door; the key lies in the opposite corner. States are
/// `(cell, has_key)` plus the absorbing goal. Actions: north, east, south,
/// west, interact. A slip moves in a uniformly random direction instead.
/// Opening the door with the key pays 1.
fn lock_key(params: EnvParams) -> Result<EnvSpec> {
    const INTERACT: usize = 4;
    let side = params.size.unwrap_or(4);
    if side < 2 {
        return Err(Error::InvalidConfig(
            "lock-key needs a room side of at least 2 cells",
        ));
    }
    let cells = side * side;
    let n = 2 * cells + 1;
    let goal = 2 * cells;
    let (door, key_cell) = (0, cells - 1);
    let state = |cell: usize, key: bool| cell + if key { cells } else { 0 };
    let moves: [(isize, isize); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];
    let step = |cell: usize, dir: usize| -> usize {
        let (r, c) = (
            (cell / side) as isize + moves[dir].0,
            (cell % side) as isize + moves[dir].1,
        );
        if (0..side as isize).contains(&r) && (0..side as isize).contains(&c) {
            r as usize * side + c as usize
        } else {
            cell
        }
    };
    let mut b = Builder::new(n, 5);
    for a in 0..5 {
        b.add(goal, a, goal, 1.0, 0.0);
    }
    for key in [false, true] {
        for cell in 0..cells {
            let s = state(cell, key);
            for a in 0..5 {
                let (next, pay) = match a {
                    INTERACT if !key && cell == key_cell => (state(cell, true), 0.0),
                    INTERACT if key && cell == door => (goal, 1.0),
                    INTERACT => (s, 0.0),
                    dir => (state(step(cell, dir), key), 0.0),
                };
                b.add(s, a, next, 1.0 - params.slip, pay);
                for dir in 0..4 {
                    b.add(s, a, state(step(cell, dir), key), params.slip / 4.0, 0.0);
                }
            }
        }
    }
    let mut mu0 = vec![0.0; n];
    mu0[state(door, false)] = 1.0;
    let mdp = b.finish(mu0, params.gamma)?;
    // Manhattan descent, east/west before north/south so the fetch and return legs differ
    let toward = |from: usize, to: usize| -> usize {
        let (fr, fc, tr, tc) = (from / side, from % side, to / side, to % side);
        match () {
            _ if fc < tc => 1,
            _ if fc > tc => 3,
            _ if fr < tr => 2,
            _ => 0,
        }
    };
    let mut e = ExpertBuilder::new(n, 5, 2);
    for cell in 0..cells {
        e.own(
            0,
            state(cell, false),
            if cell == key_cell {
                INTERACT
            } else {
                toward(cell, key_cell)
            },
        );
        e.own(
            1,
            state(cell, true),
            if cell == door {
                INTERACT
            } else {
                toward(cell, door)
            },
        );
    }
    e.own(1, goal, INTERACT);
    Ok(EnvSpec {
        name: "lock-key".into(),
        params,
        mdp,
        expert: e.finish()?,
        true_options: 2,
        horizon: params
            .horizon
            .unwrap_or_else(|| default_horizon(params.gamma)),
    })
}

/// The classic four-rooms layout: 104 open cells inside a 13×13 walled grid.
pub const FOUR_ROOMS_LAYOUT: [&str; 13] = [
    "wwwwwwwwwwwww",
    "w     w     w",
    "w     w     w",
    "w           w",
    "w     w     w",
    "w     w     w",
    "ww wwww     w",
    "w     www www",
    "w     w     w",
    "w     w     w",
    "w           w",
    "w     w     w",
    "wwwwwwwwwwwww",
];

/// Room of an open cell: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
/// Doorways belong to the room on their upper or left side.
fn room_of(row: usize, col: usize) -> usize {
    match (row, col) {
        (3, 6) | (6, 2) => 0,
        (7, 9) => 1,
        (10, 6) => 2,
        _ => {
            let right = col > 6;
            let bottom = if right { row > 7 } else { row > 6 };
            (bottom as usize) * 2 + right as usize
        }
    }
}

/// Four rooms, start in the top-left corner, goal in the bottom-right corner.
/// Actions north, east, south, west. A slip moves in a uniformly random direction.
fn four_rooms(params: EnvParams) -> Result<EnvSpec> {
    let grid: Vec<&[u8]> = FOUR_ROOMS_LAYOUT.iter().map(|r| r.as_bytes()).collect();
    let mut cells = Vec::new();
    let mut index = vec![usize::MAX; 13 * 13];
    for (r, row) in grid.iter().enumerate() {
        for (c, &ch) in row.iter().enumerate() {
            if ch == b' ' {
                index[r * 13 + c] = cells.len();
                cells.push((r, c));
            }
        }
    }
    let n = cells.len();
    let start = index[13 + 1];
    let goal = index[11 * 13 + 11];
    let moves: [(isize, isize); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];
    let step = |s: usize, a: usize| -> usize {
        let (r, c) = cells[s];
        let (nr, nc) = (
            (r as isize + moves[a].0) as usize,
            (c as isize + moves[a].1) as usize,
        );
        match index[nr * 13 + nc] {
            usize::MAX => s,
            t => t,
        }
    };
    let mut b = Builder::new(n, 4);
    for s in 0..n {
        for a in 0..4 {
            if s == goal {
                b.add(s, a, s, 1.0, 0.0);
                continue;
            }
            let pay = |t: usize| if t == goal { 1.0 } else { 0.0 };
            let t = step(s, a);
            b.add(s, a, t, 1.0 - params.slip, pay(t));
            for d in 0..4 {
                let t = step(s, d);
                b.add(s, a, t, params.slip / 4.0, pay(t));
            }
        }
    }
    let mut mu0 = vec![0.0; n];
    mu0[start] = 1.0;
    let mdp = b.finish(mu0, params.gamma)?;

    // breadth-first distances to the goal; the expert descends them, preferring lower action indices
    let mut dist = vec![usize::MAX; n];
    dist[goal] = 0;
    let mut queue = alloc::collections::VecDeque::from([goal]);
    while let Some(s) = queue.pop_front() {
        for a in 0..4 {
            let t = step(s, a);
            if dist[t] == usize::MAX {
                dist[t] = dist[s] + 1;
                queue.push_back(t);
            }
        }
    }
    let mut e = ExpertBuilder::new(n, 4, 4);
    for s in 0..n {
        let best = (0..4)
            .min_by_key(|&a| dist[step(s, a)])
            .expect("four actions");
        let (r, c) = cells[s];
        e.own(room_of(r, c), s, best);
    }
    Ok(EnvSpec {
        name: "four-rooms".into(),
        params,
        mdp,
        expert: e.finish()?,
        // the route crosses three of the four rooms
        true_options: 3,
        horizon: params
            .horizon
            .unwrap_or_else(|| default_horizon(params.gamma)),
    })
}

/// Rolls the expert for whole episodes of `spec.horizon` steps until at least
/// `n_steps` steps are collected. Returns unlabeled demos and their labeled twins.
pub fn generate_demos(
    spec: &EnvSpec,
    n_steps: usize,
    seed: u64,
) -> Result<(Vec<Trajectory>, Vec<OptionTrajectory>)> {
    if n_steps < spec.horizon {
        return Err(Error::InvalidConfig("n_steps must be at least the horizon"));
    }
    let policy = spec.expert_policy();
    let mut plain = Vec::new();
    let mut labeled = Vec::new();
    let mut total = 0;
    let mut episode = 0u64;
    while total < n_steps {
        let mut r = rng::seeded(rng::derive_seed(seed, episode));
        let traj = model::rollout(&policy, &spec.mdp, spec.horizon, &mut r);
        total += traj.len();
        plain.push(traj.trajectory());
        labeled.push(traj);
        episode += 1;
    }
    Ok((plain, labeled))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_rooms_has_104_cells() {
        let open: usize = FOUR_ROOMS_LAYOUT
            .iter()
            .map(|r| r.bytes().filter(|&b| b == b' ').count())
            .sum();
        assert_eq!(open, 104);
        let spec = build_env("four-rooms", EnvParams::default()).unwrap();
        assert_eq!(spec.mdp.n_states(), 104);
    }

    #[test]
    fn corridor_dimensions() {
        let spec = build_env(
            "corridor-switch",
            EnvParams {
                size: Some(8),
                ..EnvParams::default()
            },
        )
        .unwrap();
        assert_eq!(spec.mdp.n_states(), 8);
        assert_eq!(spec.mdp.n_actions(), 3);
        assert_eq!(spec.true_options, 2);
    }

    #[test]
    fn unknown_name() {
        assert_eq!(
            build_env("maze", EnvParams::default()),
            Err(Error::UnknownEnv("maze".into()))
        );
    }
}
