//! The EM training loop and the comparison baselines.
//!
//! Every trainer produces a [`TrainReport`] with one row per snapshot: the
//! initial policy and the policy after each iteration.

use alloc::vec;
use alloc::vec::Vec;

use crate::adversarial::{self, Cell, Discriminator, Variant, WeightedCells};
use crate::error::{Error, Result};
use crate::hrl::{self, EntropyWeights, ExactConfig, SampledConfig};
use crate::inference::{self, AnnotateMode, LogPolicy};
use crate::linalg::{self, Side};
use crate::math;
use crate::model::{self, FlatPolicy, HierPolicy, OptionTrajectory, TabularMdp, Trajectory};
use crate::occupancy::{self, FlatOccupancy, OptionOccupancy};
use crate::rng;

pub const ACTIVATION_THRESHOLD: f64 = 0.01;
pub const SMOOTHING: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    OptionGail,
    Gail,
    GailHrl,
    Hbc,
    Bc,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::OptionGail => "option-gail",
            Method::Gail => "gail",
            Method::GailHrl => "gail-hrl",
            Method::Hbc => "hbc",
            Method::Bc => "bc",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        [
            Method::OptionGail,
            Method::Gail,
            Method::GailHrl,
            Method::Hbc,
            Method::Bc,
        ]
        .into_iter()
        .find(|m| m.name() == name)
    }
}

/// How demo options are produced each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EStep {
    /// Most probable path under the current policy.
    Viterbi,
    /// Full posterior weighting. In exact mode the expert occupancy is split by
    /// the policy's own `p(o, o' | s, a)`; in sampled mode demo tuples are
    /// weighted by forward-backward pair marginals.
    Posterior,
    /// One exact posterior draw per demo.
    PosteriorSample,
    /// Labels drawn uniformly at random, fresh each iteration.
    Random,
    /// Labels decoded once from the starting policy and never revised.
    Fixed,
}

impl EStep {
    pub fn name(self) -> &'static str {
        match self {
            EStep::Viterbi => "viterbi",
            EStep::Posterior => "posterior",
            EStep::PosteriorSample => "posterior-sample",
            EStep::Random => "random",
            EStep::Fixed => "fixed",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        [
            EStep::Viterbi,
            EStep::Posterior,
            EStep::PosteriorSample,
            EStep::Random,
            EStep::Fixed,
        ]
        .into_iter()
        .find(|m| m.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MStep {
    Exact,
    Sampled,
}

impl MStep {
    pub fn name(self) -> &'static str {
        match self {
            MStep::Exact => "exact",
            MStep::Sampled => "sampled",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "exact" => Some(MStep::Exact),
            "sampled" => Some(MStep::Sampled),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub iterations: usize,
    pub e_step: EStep,
    pub m_step: MStep,
    /// `Full` or `NoPrev`; the option-agnostic methods always use a state-action discriminator.
    pub discriminator: Variant,
    pub k: usize,
    pub entropy: EntropyWeights,
    pub gamma: f64,
    pub seed: u64,
    /// Train only the low level after an H-BC warm start of the high level.
    pub freeze_high: bool,
    /// H-BC epochs used for the warm start when `freeze_high` is set.
    pub pretrain_epochs: usize,
    /// Mixing coefficient of the exact improvement step, in `(0, 1]`.
    pub step: f64,
    /// Exact improvement sweeps per iteration.
    pub m_sweeps: usize,
    pub sampled: SampledConfig,
    pub disc_learning_rate: f64,
    pub disc_epochs: usize,
    /// Weight demo tuples by `γ^t`; `None` picks on in exact mode, off in sampled mode.
    pub discount_demos: Option<bool>,
    pub init_noise: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::OptionGail,
            iterations: 30,
            e_step: EStep::Viterbi,
            m_step: MStep::Exact,
            discriminator: Variant::Full,
            k: 4,
            entropy: EntropyWeights::default(),
            gamma: 0.99,
            seed: 0,
            freeze_high: false,
            pretrain_epochs: 50,
            step: 0.5,
            m_sweeps: 1,
            sampled: SampledConfig::default(),
            disc_learning_rate: adversarial::DEFAULT_LEARNING_RATE,
            disc_epochs: 1,
            discount_demos: None,
            init_noise: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig("gamma must lie in [0, 1)"));
        }
        if !(self.step > 0.0 && self.step <= 1.0) {
            return Err(Error::InvalidConfig("step must lie in (0, 1]"));
        }
        if self.entropy.lambda_high < 0.0 || self.entropy.lambda_low < 0.0 {
            return Err(Error::InvalidConfig("entropy weights must be nonnegative"));
        }
        if self.discriminator == Variant::NoPrev
            && matches!(
                self.method,
                Method::Gail | Method::GailHrl | Method::Hbc | Method::Bc
            )
        {
            return Err(Error::InvalidConfig(
                "the no-prev discriminator applies to option-gail only",
            ));
        }
        if self.freeze_high && !matches!(self.method, Method::OptionGail | Method::GailHrl) {
            return Err(Error::InvalidConfig(
                "freeze-high applies to the adversarial hierarchical methods only",
            ));
        }
        Ok(())
    }

    /// Options actually used by the method (`bc` and `gail` are flat).
    pub fn effective_k(&self) -> usize {
        match self.method {
            Method::Bc | Method::Gail => 1,
            _ => self.k,
        }
    }

    fn discount_demos(&self) -> bool {
        self.discount_demos.unwrap_or(self.m_step == MStep::Exact)
    }
}

/// One snapshot row.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub iter: usize,
    pub env_steps: usize,
    /// Joint divergence to the expert occupancy split by the previous iterate.
    pub q_joint: f64,
    pub q_marginal: f64,
    pub demo_loglik: f64,
    pub ret: f64,
    pub option_agreement: Option<f64>,
    pub activated_options: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub records: Vec<Record>,
    /// Which estimator produced `q_joint` / `q_marginal`.
    pub q_estimator: &'static str,
}

/// Everything a snapshot needs besides the policy.
struct Monitor<'a> {
    mdp: &'a TabularMdp,
    demos: &'a [Trajectory],
    expert: FlatOccupancy,
    truth: Option<&'a [OptionTrajectory]>,
    /// Split the expert measure by posterior weights rather than Viterbi labels.
    soft: bool,
}

impl<'a> Monitor<'a> {
    fn new(
        mdp: &'a TabularMdp,
        demos: &'a [Trajectory],
        truth: Option<&'a [OptionTrajectory]>,
        e_step: EStep,
    ) -> Result<Self> {
        let expert =
            FlatOccupancy::from_demos(demos, mdp.n_states(), mdp.n_actions(), mdp.gamma())?;
        Ok(Self {
            mdp,
            demos,
            expert,
            truth,
            soft: e_step == EStep::Posterior,
        })
    }

    /// Joint divergence against the demos annotated by `annotator`, plus the flat divergence.
    fn q(&self, occ: &OptionOccupancy, annotator: &HierPolicy) -> Result<(f64, f64)> {
        let annotator_occ = occupancy::compute_occupancy(annotator, self.mdp)?;
        if self.soft {
            return q_from_occupancies(occ, &annotator_occ, &self.expert);
        }
        let labeled =
            match inference::annotate_demos(annotator, self.demos, AnnotateMode::Viterbi, 0) {
                Ok(l) => l,
                Err(Error::ImpossibleDemo { .. }) => {
                    return q_from_occupancies(occ, &annotator_occ, &self.expert)
                }
                Err(e) => return Err(e),
            };
        let (n_s, n_a, k) = (self.mdp.n_states(), self.mdp.n_actions(), annotator.k());
        let target = cell_table(
            &WeightedCells::from_trajectories(&labeled, Some(self.mdp.gamma()))?,
            n_s,
            n_a,
            k,
        );
        let scale = 1.0 - self.mdp.gamma();
        let q_joint: f64 = occ
            .values()
            .iter()
            .zip(&target)
            .map(|(&p, &q)| occupancy::js_term(p * scale, q))
            .sum();
        let q_marginal = occupancy::js_divergence(&occupancy::marginalize(occ), &self.expert)?;
        Ok((q_joint, q_marginal))
    }

    fn record(
        &self,
        iter: usize,
        env_steps: usize,
        policy: &HierPolicy,
        annotator: &HierPolicy,
    ) -> Result<Record> {
        let occ = occupancy::compute_occupancy(policy, self.mdp)?;
        let (q_joint, q_marginal) = self.q(&occ, annotator)?;
        let demo_loglik = match inference::demo_log_likelihood(policy, self.demos) {
            Ok(v) => v,
            Err(Error::ImpossibleDemo { .. }) => f64::NEG_INFINITY,
            Err(e) => return Err(e),
        };
        let option_agreement = match self.truth {
            Some(t) => Some(option_agreement(policy, t)?),
            None => None,
        };
        Ok(Record {
            iter,
            env_steps,
            q_joint,
            q_marginal,
            demo_loglik,
            ret: hrl::hier_return(policy, self.mdp)?,
            option_agreement,
            activated_options: count_active(&occ, ACTIVATION_THRESHOLD),
        })
    }
}

fn q_from_occupancies(
    occ: &OptionOccupancy,
    annotator_occ: &OptionOccupancy,
    expert: &FlatOccupancy,
) -> Result<(f64, f64)> {
    let target = occupancy::split_by(expert, annotator_occ);
    let q_joint = occupancy::js_divergence(occ, &target)?;
    let q_marginal = occupancy::js_divergence(&occupancy::marginalize(occ), expert)?;
    Ok((q_joint, q_marginal))
}

/// `(q_joint, q_marginal)` with the policy annotating the expert occupancy itself.
pub fn compute_q(
    policy: &HierPolicy,
    expert_flat: &FlatOccupancy,
    mdp: &TabularMdp,
) -> Result<(f64, f64)> {
    compute_q_with_annotator(policy, policy, expert_flat, mdp)
}

/// `(q_joint, q_marginal)` where `annotator` splits the expert occupancy over options.
pub fn compute_q_with_annotator(
    policy: &HierPolicy,
    annotator: &HierPolicy,
    expert_flat: &FlatOccupancy,
    mdp: &TabularMdp,
) -> Result<(f64, f64)> {
    if annotator.k() != policy.k() {
        return Err(Error::DimensionMismatch("annotator vs policy"));
    }
    if expert_flat.n_states() != mdp.n_states() || expert_flat.n_actions() != mdp.n_actions() {
        return Err(Error::DimensionMismatch("expert occupancy vs MDP"));
    }
    let mdp = with_gamma(mdp, expert_flat.gamma())?;
    let occ = occupancy::compute_occupancy(policy, &mdp)?;
    let ann = occupancy::compute_occupancy(annotator, &mdp)?;
    q_from_occupancies(&occ, &ann, expert_flat)
}

/// `(q_joint, q_marginal)` against demos annotated by `annotator`, computed the
/// way training snapshots are: Viterbi labels for every E-step except
/// `Posterior`, which splits the demo occupancy softly.
pub fn compute_q_on_demos(
    policy: &HierPolicy,
    annotator: &HierPolicy,
    demos: &[Trajectory],
    mdp: &TabularMdp,
    e_step: EStep,
) -> Result<(f64, f64)> {
    if annotator.k() != policy.k() {
        return Err(Error::DimensionMismatch("annotator vs policy"));
    }
    let monitor = Monitor::new(mdp, demos, None, e_step)?;
    monitor.q(&occupancy::compute_occupancy(policy, mdp)?, annotator)
}

fn with_gamma(mdp: &TabularMdp, gamma: f64) -> Result<TabularMdp> {
    if mdp.gamma() == gamma {
        Ok(mdp.clone())
    } else {
        mdp.with_gamma(gamma)
    }
}

fn count_active(occ: &OptionOccupancy, threshold: f64) -> usize {
    occ.option_mass_fractions()
        .iter()
        .filter(|&&m| m > threshold)
        .count()
}

/// Options carrying more than `threshold` of the normalized occupancy mass.
pub fn activated_options(policy: &HierPolicy, mdp: &TabularMdp, threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidConfig("threshold must lie in (0, 1)"));
    }
    Ok(count_active(
        &occupancy::compute_occupancy(policy, mdp)?,
        threshold,
    ))
}

/// Fraction of demo steps where the policy's Viterbi labels match the truth,
/// maximized over relabelings. Demos the policy cannot explain score zero.
pub fn option_agreement(policy: &HierPolicy, truth: &[OptionTrajectory]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::Empty("labeled demonstrations"));
    }
    let lp = LogPolicy::new(policy);
    let mut decoded = Vec::with_capacity(truth.len());
    for t in truth {
        t.validate(policy.n_states(), policy.n_actions())?;
        decoded.push(
            inference::decode_with(&lp, &t.trajectory())
                .ok()
                .map(|d| d.options),
        );
    }
    let n = policy.k().max(truth[0].k());
    // confusion[learned][true]
    let mut confusion = vec![0usize; n * n];
    let mut total = 0usize;
    for (t, d) in truth.iter().zip(&decoded) {
        total += t.len();
        if let Some(d) = d {
            for (&learned, &label) in d.iter().zip(t.chosen_options()) {
                confusion[learned * n + label] += 1;
            }
        }
    }
    let mut best = 0usize;
    let mut perm: Vec<usize> = (0..n).collect();
    permutations(&mut perm, 0, &mut |p| {
        let hits = (0..n)
            .map(|learned| confusion[learned * n + p[learned]])
            .sum::<usize>();
        best = best.max(hits);
    });
    Ok(best as f64 / total as f64)
}

fn permutations(perm: &mut [usize], i: usize, f: &mut impl FnMut(&[usize])) {
    if i == perm.len() {
        f(perm);
        return;
    }
    for j in i..perm.len() {
        perm.swap(i, j);
        permutations(perm, i + 1, f);
        perm.swap(i, j);
    }
}

fn check_inputs(
    cfg: &TrainConfig,
    demos: &[Trajectory],
    mdp: &TabularMdp,
    init: &HierPolicy,
) -> Result<()> {
    cfg.validate()?;
    if demos.is_empty() {
        return Err(Error::Empty("demonstrations"));
    }
    init.check_mdp(mdp)?;
    if init.k() != cfg.effective_k() {
        return Err(Error::DimensionMismatch(
            "initial policy option count vs config",
        ));
    }
    for d in demos {
        d.validate(mdp.n_states(), mdp.n_actions())?;
    }
    Ok(())
}

/// Option-GAIL: alternate option inference on the demos with adversarial
/// hierarchical policy optimization.
pub fn train_option_gail(
    cfg: &TrainConfig,
    demos: &[Trajectory],
    mdp: &TabularMdp,
    init: &HierPolicy,
    truth: Option<&[OptionTrajectory]>,
) -> Result<(HierPolicy, TrainReport)> {
    adversarial_loop(cfg, demos, mdp, init, truth, cfg.discriminator, true)
}

/// Hierarchical policy trained against a state-action discriminator; no option inference.
pub fn train_gail_hrl(
    cfg: &TrainConfig,
    demos: &[Trajectory],
    mdp: &TabularMdp,
    init: &HierPolicy,
    truth: Option<&[OptionTrajectory]>,
) -> Result<(HierPolicy, TrainReport)> {
    adversarial_loop(cfg, demos, mdp, init, truth, Variant::StateAction, false)
}

fn adversarial_loop(
    cfg: &TrainConfig,
    demos: &[Trajectory],
    mdp: &TabularMdp,
    init: &HierPolicy,
    truth: Option<&[OptionTrajectory]>,
    variant: Variant,
    infer_options: bool,
) -> Result<(HierPolicy, TrainReport)> {
    check_inputs(cfg, demos, mdp, init)?;
    let mdp = with_gamma(mdp, cfg.gamma)?;
    let mdp = &mdp;
    let monitor = Monitor::new(mdp, demos, truth, cfg.e_step)?;
    let k = init.k();
    let (n_s, n_a) = (mdp.n_states(), mdp.n_actions());

    let mut policy = init.clone();
    if cfg.freeze_high {
        let hbc_cfg = TrainConfig {
            method: Method::Hbc,
            iterations: cfg.pretrain_epochs,
            freeze_high: false,
            ..cfg.clone()
        };
        policy = baum_welch(&hbc_cfg, demos, init)?.0;
    }
    let mut report = TrainReport {
        records: Vec::new(),
        q_estimator: "exact",
    };
    report.records.push(monitor.record(0, 0, &policy, &policy)?);

    let discount = if cfg.discount_demos() {
        Some(mdp.gamma())
    } else {
        None
    };
    let fixed_labels = if infer_options && cfg.e_step == EStep::Fixed {
        Some(inference::annotate_demos(
            &policy,
            demos,
            AnnotateMode::Viterbi,
            cfg.seed,
        )?)
    } else {
        None
    };
    let mut disc = Discriminator::new(n_s, n_a, k, variant);
    disc.learning_rate = cfg.disc_learning_rate;
    let mut env_steps = 0;

    for n in 0..cfg.iterations {
        let iter_seed = rng::derive_seed(cfg.seed, n as u64);
        let wrap = |e: Error| Error::Iteration {
            iteration: n,
            source: alloc::boxed::Box::new(e),
        };
        let occ = occupancy::compute_occupancy(&policy, mdp).map_err(wrap)?;

        // E-step: the demo side of the discriminator's data
        let demo_cells = if !infer_options {
            unlabeled_cells(demos, k, discount)
        } else if cfg.e_step == EStep::Posterior && cfg.m_step == MStep::Exact {
            WeightedCells::from_occupancy(&occupancy::split_by(&monitor.expert, &occ))
        } else if cfg.e_step == EStep::Posterior {
            posterior_cells(&policy, demos, discount).map_err(wrap)?
        } else {
            let labeled = match (cfg.e_step, &fixed_labels) {
                (EStep::Fixed, Some(l)) => l.clone(),
                (EStep::Random, _) => random_labels(demos, k, iter_seed)?,
                (EStep::PosteriorSample, _) => inference::annotate_demos(
                    &policy,
                    demos,
                    AnnotateMode::PosteriorSample,
                    iter_seed,
                )
                .map_err(wrap)?,
                _ => inference::annotate_demos(&policy, demos, AnnotateMode::Viterbi, iter_seed)
                    .map_err(wrap)?,
            };
            WeightedCells::from_trajectories(&labeled, discount)?
        };

        // M-step
        let next = match cfg.m_step {
            MStep::Exact => {
                let agent_cells = WeightedCells::from_occupancy(&occ);
                disc.fit_optimal(&demo_cells, &agent_cells);
                let cost = disc.cost_table();
                let exact = ExactConfig {
                    weights: cfg.entropy,
                    step: cfg.step,
                    freeze_high: cfg.freeze_high,
                };
                let mut candidate = policy.clone();
                for _ in 0..cfg.m_sweeps.max(1) {
                    candidate = hrl::exact_improve_with_cost(&candidate, mdp, &cost, exact)
                        .map_err(wrap)?
                        .policy;
                }
                js_guard(&policy, candidate, &demo_cells, variant, mdp).map_err(wrap)?
            }
            MStep::Sampled => {
                let rollout_cfg = cfg.sampled;
                let agent = collect_cells(
                    &policy,
                    mdp,
                    rollout_cfg.batch,
                    rollout_cfg.horizon,
                    rng::derive_seed(iter_seed, 1),
                );
                env_steps += agent.len();
                let demo_batch: Vec<(Cell, f64)> = demo_cells.cells.clone();
                for _ in 0..cfg.disc_epochs.max(1) {
                    adversarial::update_discriminator(
                        &mut disc,
                        &demo_batch,
                        &agent,
                        rollout_cfg.mini_batch,
                    )
                    .map_err(wrap)?;
                }
                let sampled = SampledConfig {
                    freeze_high: cfg.freeze_high,
                    ..rollout_cfg
                };
                let out = hrl::sampled_improve(
                    &policy,
                    mdp,
                    &disc,
                    cfg.entropy,
                    sampled,
                    rng::derive_seed(iter_seed, 2),
                )
                .map_err(wrap)?;
                env_steps += out.env_steps;
                out.policy
            }
        };
        let annotator = core::mem::replace(&mut policy, next);
        report.records.push(
            monitor
                .record(n + 1, env_steps, &policy, &annotator)
                .map_err(wrap)?,
        );
    }
    Ok((policy, report))
}

/// Demo tuples with every option slot at zero, for discriminators that ignore options.
fn unlabeled_cells(demos: &[Trajectory], k: usize, discount: Option<f64>) -> WeightedCells {
    let labeled: Vec<OptionTrajectory> = demos
        .iter()
        .map(|d| {
            OptionTrajectory::from_parts(d.states.clone(), d.actions.clone(), &vec![0; d.len()], k)
                .expect("valid demo")
        })
        .collect();
    WeightedCells::from_trajectories(&labeled, discount).expect("nonempty demos")
}

fn random_labels(demos: &[Trajectory], k: usize, seed: u64) -> Result<Vec<OptionTrajectory>> {
    let uniform = vec![1.0; k];
    demos
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let mut r = rng::seeded(rng::derive_seed(seed, i as u64));
            let labels: Vec<usize> = (0..d.len())
                .map(|_| rng::sample_categorical(&mut r, &uniform))
                .collect();
            OptionTrajectory::from_parts(d.states.clone(), d.actions.clone(), &labels, k)
        })
        .collect()
}

/// Demo tuples weighted by forward-backward pair marginals.
fn posterior_cells(
    policy: &HierPolicy,
    demos: &[Trajectory],
    discount: Option<f64>,
) -> Result<WeightedCells> {
    let k = policy.k();
    let mut cells = Vec::new();
    for (i, d) in demos.iter().enumerate() {
        let post = inference::forward_backward(policy, d).map_err(|e| match e {
            Error::ImpossibleTrajectory { step } => Error::ImpossibleDemo { demo: i, step },
            other => other,
        })?;
        let mut w = 1.0;
        for t in 0..d.len() {
            for o in 0..k {
                for prev in 0..=k {
                    let p = post.pair(t, o, prev);
                    if p > 0.0 {
                        cells.push((Cell::new(d.states[t], d.actions[t], o, prev), w * p));
                    }
                }
            }
            if let Some(g) = discount {
                w *= g;
            }
        }
    }
    WeightedCells::new(cells)
}

fn collect_cells(
    policy: &HierPolicy,
    mdp: &TabularMdp,
    batch: usize,
    horizon: usize,
    seed: u64,
) -> Vec<(Cell, f64)> {
    let mut cells = Vec::with_capacity(batch);
    let mut episode = 0u64;
    while cells.len() < batch {
        let len = horizon.min(batch - cells.len()).max(1);
        let mut r = rng::seeded(rng::derive_seed(seed, episode));
        let traj = model::rollout(policy, mdp, len, &mut r);
        for t in 0..traj.len() {
            cells.push((
                Cell::new(
                    traj.states[t],
                    traj.actions[t],
                    traj.option_at(t),
                    traj.prev_option_at(t),
                ),
                1.0,
            ));
        }
        episode += 1;
    }
    cells
}

/// Collapses a weight table over `(s, a, o, o')` onto the discriminator's cells.
fn project(weights: &[f64], k: usize, variant: Variant) -> Vec<f64> {
    match variant {
        Variant::Full => weights.to_vec(),
        Variant::NoPrev => weights.chunks(k + 1).map(|c| c.iter().sum()).collect(),
        Variant::StateAction => weights
            .chunks(k * (k + 1))
            .map(|c| c.iter().sum())
            .collect(),
    }
}

fn cell_table(cells: &WeightedCells, n_s: usize, n_a: usize, k: usize) -> Vec<f64> {
    let mut t = vec![0.0; n_s * n_a * k * (k + 1)];
    for &(c, w) in &cells.cells {
        t[((c.s * n_a + c.a) * k + c.o) * (k + 1) + c.prev] += w;
    }
    t
}

fn projected_js(
    policy: &HierPolicy,
    target: &[f64],
    variant: Variant,
    mdp: &TabularMdp,
) -> Result<f64> {
    let occ = occupancy::compute_occupancy(policy, mdp)?;
    let scale = 1.0 - mdp.gamma();
    let agent = project(occ.values(), policy.k(), variant);
    Ok(agent
        .iter()
        .zip(target)
        .map(|(&p, &q)| occupancy::js_term(p * scale, q))
        .sum())
}

/// Accepts `candidate` only if it does not increase the divergence to the
/// current demo target; otherwise backtracks toward `current`.
fn js_guard(
    current: &HierPolicy,
    candidate: HierPolicy,
    demo: &WeightedCells,
    variant: Variant,
    mdp: &TabularMdp,
) -> Result<HierPolicy> {
    let (n_s, n_a, k) = (mdp.n_states(), mdp.n_actions(), current.k());
    let target = project(&cell_table(demo, n_s, n_a, k), k, variant);
    let base = projected_js(current, &target, variant, mdp)?;
    let mut t = 1.0;
    while t >= hrl::MIN_STEP {
        let p = if t == 1.0 {
            candidate.clone()
        } else {
            current.mix(&candidate, t)
        };
        if projected_js(&p, &target, variant, mdp)? <= base {
            return Ok(p);
        }
        t *= 0.5;
    }
    Ok(current.clone())
}

/// Flat GAIL with its own flat discriminator, flat occupancy solves and flat
/// policy improvement. It follows the same schedule as [`train_option_gail`]
/// with one option and a previous-option-free discriminator.
pub fn train_gail_flat(
    cfg: &TrainConfig,
    demos: &[Trajectory],
    mdp: &TabularMdp,
    init: &FlatPolicy,
) -> Result<(FlatPolicy, TrainReport)> {
    let cfg = TrainConfig {
        method: Method::Gail,
        k: 1,
        discriminator: Variant::Full,
        ..cfg.clone()
    };
    check_inputs(&cfg, demos, mdp, &init.to_hier())?;
    if cfg.m_step == MStep::Sampled {
        // the sampled path has no separate flat implementation
        let ocfg = TrainConfig {
            method: Method::OptionGail,
            discriminator: Variant::NoPrev,
            ..cfg.clone()
        };
        let (p, r) = adversarial_loop(
            &ocfg,
            demos,
            mdp,
            &init.to_hier(),
            None,
            Variant::StateAction,
            false,
        )?;
        return Ok((FlatPolicy::from_single_option(&p)?, r));
    }
    let mdp = with_gamma(mdp, cfg.gamma)?;
    let mdp = &mdp;
    let monitor = Monitor::new(mdp, demos, None, cfg.e_step)?;
    let (n_s, n_a) = (mdp.n_states(), mdp.n_actions());
    let g = mdp.gamma();
    let expert = &monitor.expert;
    let demo_w: Vec<f64> = if cfg.discount_demos() {
        expert.values().iter().map(|x| x * (1.0 - g)).collect()
    } else {
        let mut counts = vec![0.0; n_s * n_a];
        for d in demos {
            for (&s, &a) in d.states.iter().zip(&d.actions) {
                counts[s * n_a + a] += 1.0;
            }
        }
        let z: f64 = counts.iter().sum();
        counts.iter().map(|c| c / z).collect()
    };
    let mut policy = init.clone();
    let mut report = TrainReport {
        records: Vec::new(),
        q_estimator: "exact",
    };
    report
        .records
        .push(monitor.record(0, 0, &policy.to_hier(), &policy.to_hier())?);
    for n in 0..cfg.iterations {
        let wrap = |e: Error| Error::Iteration {
            iteration: n,
            source: alloc::boxed::Box::new(e),
        };
        let occ = FlatOccupancy::from_policy(&policy, mdp).map_err(wrap)?;
        let agent_w: Vec<f64> = occ.values().iter().map(|x| x * (1.0 - g)).collect();
        let cost: Vec<f64> = agent_w
            .iter()
            .zip(&demo_w)
            .map(|(&a, &d)| {
                let logit = match (d > 0.0, a > 0.0) {
                    (false, false) => 0.0,
                    (true, false) => -adversarial::LOGIT_CLAMP,
                    (false, true) => adversarial::LOGIT_CLAMP,
                    (true, true) => {
                        math::ln(a / d).clamp(-adversarial::LOGIT_CLAMP, adversarial::LOGIT_CLAMP)
                    }
                };
                math::log_sigmoid(logit)
            })
            .collect();
        let mut candidate = policy.clone();
        for _ in 0..cfg.m_sweeps.max(1) {
            candidate = flat_improve(&candidate, mdp, &cost, cfg.entropy.lambda_low, cfg.step)
                .map_err(wrap)?;
        }
        let flat_js = |p: &FlatPolicy| -> Result<f64> {
            let o = FlatOccupancy::from_policy(p, mdp)?;
            Ok(o.values()
                .iter()
                .zip(&demo_w)
                .map(|(&x, &y)| occupancy::js_term(x * (1.0 - g), y))
                .sum())
        };
        let base = flat_js(&policy).map_err(wrap)?;
        let mut t = 1.0;
        let mut accepted = policy.clone();
        while t >= hrl::MIN_STEP {
            let p = if t == 1.0 {
                candidate.clone()
            } else {
                mix_flat(&policy, &candidate, t)
            };
            if flat_js(&p).map_err(wrap)? <= base {
                accepted = p;
                break;
            }
            t *= 0.5;
        }
        let annotator = core::mem::replace(&mut policy, accepted);
        report.records.push(
            monitor
                .record(n + 1, 0, &policy.to_hier(), &annotator.to_hier())
                .map_err(wrap)?,
        );
    }
    Ok((policy, report))
}

fn mix_flat(a: &FlatPolicy, b: &FlatPolicy, t: f64) -> FlatPolicy {
    let n_a = a.n_actions();
    let probs = (0..a.n_states() * n_a)
        .map(|i| (1.0 - t) * a.prob(i / n_a, i % n_a) + t * b.prob(i / n_a, i % n_a))
        .collect();
    FlatPolicy::new(a.n_states(), n_a, probs).expect("convex combination of policies")
}

fn flat_objective(policy: &FlatPolicy, mdp: &TabularMdp, cost: &[f64], lambda: f64) -> Result<f64> {
    let occ = FlatOccupancy::from_policy(policy, mdp)?;
    let n_a = mdp.n_actions();
    Ok(occ
        .values()
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let p = policy.prob(i / n_a, i % n_a);
            r * (cost[i] + if p > 0.0 { lambda * math::ln(p) } else { 0.0 })
        })
        .sum())
}

/// One soft policy improvement sweep on the flat MDP with backtracking.
fn flat_improve(
    policy: &FlatPolicy,
    mdp: &TabularMdp,
    cost: &[f64],
    lambda: f64,
    step: f64,
) -> Result<FlatPolicy> {
    let (n_s, n_a) = (mdp.n_states(), mdp.n_actions());
    let g = mdp.gamma();
    let mut chain = vec![0.0; n_s * n_s];
    let mut r = vec![0.0; n_s];
    for s in 0..n_s {
        for a in 0..n_a {
            let p = policy.prob(s, a);
            r[s] += p * -cost[s * n_a + a] - lambda * math::xlogx(p);
            for (s1, &q) in mdp.next_states(s, a).iter().enumerate() {
                chain[s * n_s + s1] += p * q;
            }
        }
    }
    let v = linalg::solve_discounted(&chain, n_s, g, &r, Side::Value)?;
    let mut target = vec![0.0; n_s * n_a];
    for s in 0..n_s {
        let row = &mut target[s * n_a..(s + 1) * n_a];
        for (a, slot) in row.iter_mut().enumerate() {
            *slot = -cost[s * n_a + a]
                + g * mdp
                    .next_states(s, a)
                    .iter()
                    .zip(&v)
                    .map(|(p, x)| p * x)
                    .sum::<f64>();
        }
        if lambda > 0.0 {
            math::softmax_in_place(row, lambda);
        } else {
            let best = math::argmax(row);
            row.iter_mut()
                .enumerate()
                .for_each(|(i, x)| *x = if i == best { 1.0 } else { 0.0 });
        }
    }
    let target = FlatPolicy::new(n_s, n_a, target)?;
    let base = flat_objective(policy, mdp, cost, lambda)?;
    let mut t = step;
    while t >= hrl::MIN_STEP {
        let candidate = mix_flat(policy, &target, t);
        if flat_objective(&candidate, mdp, cost, lambda)? <= base {
            return Ok(candidate);
        }
        t *= 0.5;
    }
    Ok(policy.clone())
}

/// Baum-Welch on the option chain, then a snapshot row per iteration.
pub fn train_hbc(
    cfg: &TrainConfig,
    demos: &[Trajectory],
    mdp: &TabularMdp,
    init: &HierPolicy,
    truth: Option<&[OptionTrajectory]>,
) -> Result<(HierPolicy, TrainReport)> {
    let cfg = TrainConfig {
        method: Method::Hbc,
        ..cfg.clone()
    };
    check_inputs(&cfg, demos, mdp, init)?;
    let mdp = with_gamma(mdp, cfg.gamma)?;
    let monitor = Monitor::new(&mdp, demos, truth, cfg.e_step)?;
    let (policy, snapshots) = baum_welch(&cfg, demos, init)?;
    let mut report = TrainReport {
        records: Vec::new(),
        q_estimator: "exact",
    };
    for (i, p) in snapshots.iter().enumerate() {
        let annotator = if i == 0 { p } else { &snapshots[i - 1] };
        report.records.push(monitor.record(i, 0, p, annotator)?);
    }
    Ok((policy, report))
}

/// EM iterations; returns the final policy and every snapshot including the initial one.
fn baum_welch(
    cfg: &TrainConfig,
    demos: &[Trajectory],
    init: &HierPolicy,
) -> Result<(HierPolicy, Vec<HierPolicy>)> {
    let mut policy = init.clone();
    let mut snapshots = vec![policy.clone()];
    for n in 0..cfg.iterations {
        policy = baum_welch_step(&policy, demos).map_err(|e| Error::Iteration {
            iteration: n,
            source: alloc::boxed::Box::new(e),
        })?;
        snapshots.push(policy.clone());
    }
    Ok((policy, snapshots))
}

/// One EM update: expected counts under the current posteriors, then smoothed normalization.
pub fn baum_welch_step(policy: &HierPolicy, demos: &[Trajectory]) -> Result<HierPolicy> {
    let (n_s, n_a, k) = (policy.n_states(), policy.n_actions(), policy.k());
    let mut high = vec![0.0; n_s * (k + 1) * k];
    let mut low = vec![0.0; n_s * k * n_a];
    let lp = LogPolicy::new(policy);
    for (i, d) in demos.iter().enumerate() {
        d.validate(n_s, n_a)?;
        let post = inference::posterior_with(&lp, d).map_err(|e| match e {
            Error::ImpossibleTrajectory { step } => Error::ImpossibleDemo { demo: i, step },
            other => other,
        })?;
        for t in 0..d.len() {
            let (s, a) = (d.states[t], d.actions[t]);
            for o in 0..k {
                for prev in 0..=k {
                    high[(s * (k + 1) + prev) * k + o] += post.pair(t, o, prev);
                }
                low[(s * k + o) * n_a + a] += post.single(t, o);
            }
        }
    }
    smooth_rows(&mut high, k);
    smooth_rows(&mut low, n_a);
    HierPolicy::new(n_s, n_a, k, high, low)
}

fn smooth_rows(table: &mut [f64], width: usize) {
    for row in table.chunks_mut(width) {
        let z: f64 = row.iter().sum::<f64>() + SMOOTHING * width as f64;
        row.iter_mut().for_each(|x| *x = (*x + SMOOTHING) / z);
        let drift: f64 = 1.0 - row.iter().sum::<f64>();
        let i = math::argmax(row);
        row[i] += drift;
    }
}

/// Behaviour cloning: smoothed action counts per state.
pub fn train_bc(demos: &[Trajectory], n_states: usize, n_actions: usize) -> Result<FlatPolicy> {
    if demos.is_empty() {
        return Err(Error::Empty("demonstrations"));
    }
    let mut counts = vec![0.0; n_states * n_actions];
    for d in demos {
        d.validate(n_states, n_actions)?;
        for (&s, &a) in d.states.iter().zip(&d.actions) {
            counts[s * n_actions + a] += 1.0;
        }
    }
    smooth_rows(&mut counts, n_actions);
    FlatPolicy::new(n_states, n_actions, counts)
}

/// Snapshot rows for a BC policy (initial and fitted), so every method reports the same way.
pub fn train_bc_report(
    demos: &[Trajectory],
    mdp: &TabularMdp,
    truth: Option<&[OptionTrajectory]>,
) -> Result<(FlatPolicy, TrainReport)> {
    let policy = train_bc(demos, mdp.n_states(), mdp.n_actions())?;
    let monitor = Monitor::new(mdp, demos, truth, EStep::Viterbi)?;
    let uniform = HierPolicy::uniform(mdp.n_states(), mdp.n_actions(), 1);
    let hier = policy.to_hier();
    let records = vec![
        monitor.record(0, 0, &uniform, &uniform)?,
        monitor.record(1, 0, &hier, &uniform)?,
    ];
    Ok((
        policy,
        TrainReport {
            records,
            q_estimator: "exact",
        },
    ))
}

/// Dispatches on `cfg.method`. Flat methods return their policy embedded with one option.
pub fn train(
    cfg: &TrainConfig,
    demos: &[Trajectory],
    mdp: &TabularMdp,
    truth: Option<&[OptionTrajectory]>,
) -> Result<(HierPolicy, TrainReport)> {
    cfg.validate()?;
    let k = cfg.effective_k();
    let init = HierPolicy::noisy_uniform(
        mdp.n_states(),
        mdp.n_actions(),
        k,
        cfg.init_noise,
        rng::derive_seed(cfg.seed, u64::MAX),
    );
    match cfg.method {
        Method::OptionGail => train_option_gail(cfg, demos, mdp, &init, truth),
        Method::GailHrl => train_gail_hrl(cfg, demos, mdp, &init, truth),
        Method::Hbc => train_hbc(cfg, demos, mdp, &init, truth),
        Method::Gail => {
            let flat = FlatPolicy::from_single_option(&init)?;
            train_gail_flat(cfg, demos, mdp, &flat).map(|(p, r)| (p.to_hier(), r))
        }
        Method::Bc => train_bc_report(demos, mdp, truth).map(|(p, r)| (p.to_hier(), r)),
    }
}
