//! Closed-loop stepping for every model family, trace collection, and the
//! Monte Carlo harness. One simulation is strictly sequential; trials are
//! independent and may run concurrently.

use std::collections::{HashMap, VecDeque};

use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{sample_delay, sample_loss, DelayModel, DelaySample};
use crate::error::{Error, Result};
use crate::matrix::{dot, norm2, Matrix};
use crate::plant::{
    build_lifted, decompose_delay, discretize, gamma_split, ContinuousPlant, DiscretizationTriple,
    LiftedSystem,
};
use crate::rng::RandomStream;
use crate::scenario::{validate, ModelFamily, ScenarioSpec};
use crate::strategies::{
    compensate_ca, compensate_sc, open_loop_step, CompensationStrategy, EstimatorState,
};

/// Norm bound above which a trajectory counts as divergent unless the
/// caller picks another through `run_guarded`.
pub const DIVERGENCE_GUARD: f64 = 1e12;

const TRIPLE_CACHE_CAP: usize = 1024;

/// Rolling loop memory: current and previous true state, the applied-input
/// ring (front is u(k-1)), and the sensor-side estimator.
#[derive(Debug, Clone)]
pub struct LoopState {
    pub x: Vec<f64>,
    pub x_prev: Vec<f64>,
    u_past: VecDeque<Vec<f64>>,
    pub estimator: EstimatorState,
    pub k: usize,
}

impl LoopState {
    /// `depth` is the largest input lag the active model references; the
    /// ring always keeps at least two entries.
    pub fn new(x0: &[f64], m: usize, depth: usize) -> Self {
        let depth = depth.max(2);
        Self {
            x: x0.to_vec(),
            x_prev: x0.to_vec(),
            u_past: (0..depth).map(|_| vec![0.0; m]).collect(),
            estimator: EstimatorState::new(x0.len(), m),
            k: 0,
        }
    }

    /// Applied input `lag` steps back; lag 1 is u(k-1).
    pub fn past_input(&self, lag: usize) -> Result<&[f64]> {
        if lag == 0 {
            return Err(Error::Contract("input lag starts at 1".into()));
        }
        self.u_past
            .get(lag - 1)
            .map(Vec::as_slice)
            .ok_or_else(|| {
                Error::Contract(format!(
                    "input history holds {} entries, lag {lag} requested",
                    self.u_past.len()
                ))
            })
    }

    fn commit(&mut self, new_x: Vec<f64>, u_applied: Vec<f64>) {
        self.estimator.observe_state(&self.x);
        self.x_prev = std::mem::replace(&mut self.x, new_x);
        self.u_past.pop_back();
        self.u_past.push_front(u_applied);
        self.k += 1;
    }
}

/// Measurement map y = C x + D u, with D defaulting to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputMap {
    c: Matrix,
    d: Option<Matrix>,
}

impl OutputMap {
    pub fn new(c: Matrix, d: Option<Matrix>) -> Result<Self> {
        if let Some(d) = &d {
            if d.rows() != c.rows() {
                return Err(Error::Dimension(
                    "feedthrough must have as many rows as the output map".into(),
                ));
            }
        }
        Ok(Self { c, d })
    }

    pub fn from_plant(plant: &ContinuousPlant) -> Self {
        Self {
            c: plant.c.clone(),
            d: plant.d.clone(),
        }
    }

    pub fn eval(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        (0..self.c.rows())
            .map(|i| {
                dot(self.c.row(i), x)
                    + self.d.as_ref().map_or(0.0, |d| dot(d.row(i), u))
            })
            .collect()
    }
}

/// What the channels did on one step: sampled delays and arrival flags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStep {
    pub sample: DelaySample,
    pub gamma_sc: u8,
    pub gamma_ca: u8,
}

impl ChannelStep {
    pub fn lossless(sample: DelaySample) -> Self {
        Self {
            sample,
            gamma_sc: 1,
            gamma_ca: 1,
        }
    }
}

/// Everything observable about one step. `x` is the state at the start of
/// the step; `y` always equals C x + D u_applied of the same record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub k: usize,
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub u_computed: Vec<f64>,
    pub u_applied: Vec<f64>,
    pub tau_sc: f64,
    pub tau_ca: f64,
    pub tau_k: f64,
    pub gamma_sc: u8,
    pub gamma_ca: u8,
}

/// A complete run: consecutive records from k = 0, the state after the last
/// step, and the step index at which the divergence guard tripped, if any.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationTrace {
    pub scenario_id: String,
    pub seed: u64,
    pub h: f64,
    pub records: Vec<StepRecord>,
    pub x_final: Vec<f64>,
    pub diverged_at: Option<usize>,
}

fn check_flags(gamma_sc: u8, gamma_ca: u8) -> Result<()> {
    if gamma_sc > 1 || gamma_ca > 1 {
        return Err(Error::Contract(format!(
            "arrival flags must be 0 or 1, got ({gamma_sc}, {gamma_ca})"
        )));
    }
    Ok(())
}

fn check_gain(l: &Matrix, n: usize, m: usize) -> Result<()> {
    if l.rows() != m || l.cols() != n {
        return Err(Error::Dimension(format!(
            "gain must be {m}x{n}, got {}x{}",
            l.rows(),
            l.cols()
        )));
    }
    Ok(())
}

fn neg_matvec(l: &Matrix, x: &[f64]) -> Vec<f64> {
    l.matvec(x).into_iter().map(|v| -v).collect()
}

fn record(
    state: &LoopState,
    h: f64,
    out: &OutputMap,
    u_computed: Vec<f64>,
    u_applied: Vec<f64>,
    ch: &ChannelStep,
) -> StepRecord {
    StepRecord {
        k: state.k,
        t: state.k as f64 * h,
        x: state.x.clone(),
        y: out.eval(&state.x, &u_applied),
        u_computed,
        u_applied,
        tau_sc: ch.sample.tau_sc,
        tau_ca: ch.sample.tau_ca,
        tau_k: ch.sample.tau_k,
        gamma_sc: ch.gamma_sc,
        gamma_ca: ch.gamma_ca,
    }
}

/// One step of the delay-free loop: u = -L x, x+ = Phi x + Gamma u.
pub fn step_delay_free(
    state: &mut LoopState,
    phi: &Matrix,
    gamma: &Matrix,
    h: f64,
    out: &OutputMap,
    l: &Matrix,
) -> Result<StepRecord> {
    let n = phi.rows();
    check_gain(l, n, gamma.cols())?;
    if state.x.len() != n {
        return Err(Error::Dimension("state length disagrees with the plant".into()));
    }
    let u = neg_matvec(l, &state.x);
    let new_x: Vec<f64> = (0..n)
        .map(|i| dot(phi.row(i), &state.x) + dot(gamma.row(i), &u))
        .collect();
    let ch = ChannelStep::lossless(DelaySample {
        tau_sc: 0.0,
        tau_ca: 0.0,
        tau_k: 0.0,
    });
    let rec = record(state, h, out, u.clone(), u.clone(), &ch);
    state.commit(new_x, u);
    Ok(rec)
}

/// One step of the sub-interval-delay loop:
/// u = -L x, x+ = Phi x + Gamma0 u + Gamma1 u(k-1).
pub fn step_short_delay(
    state: &mut LoopState,
    triple: &DiscretizationTriple,
    out: &OutputMap,
    l: &Matrix,
    sample: DelaySample,
) -> Result<StepRecord> {
    check_gain(l, triple.n(), triple.m())?;
    if sample.tau_k > triple.h {
        return Err(Error::Contract(format!(
            "delay {} exceeds the interval {}; route to the long-delay path",
            sample.tau_k, triple.h
        )));
    }
    let u = neg_matvec(l, &state.x);
    let new_x = triple.advance(&state.x, &u, state.past_input(1)?);
    let ch = ChannelStep::lossless(sample);
    let rec = record(state, triple.h, out, u.clone(), u.clone(), &ch);
    state.commit(new_x, u);
    Ok(rec)
}

/// One step of the multi-interval-delay loop over the lifted state.
/// The x-block obeys x+ = Phi x + Gamma0 u(k-d+1) + Gamma1 u(k-d); the
/// freshly computed u = -L x enters the input ring and acts d steps later.
pub fn step_long_delay(
    state: &mut LoopState,
    lifted: &LiftedSystem,
    out: &OutputMap,
    l: &Matrix,
    sample: DelaySample,
) -> Result<StepRecord> {
    check_gain(l, lifted.n, lifted.m)?;
    let u = neg_matvec(l, &state.x);
    let new_x = if lifted.d == 1 {
        lifted.triple.advance(&state.x, &u, state.past_input(1)?)
    } else {
        lifted.triple.advance(
            &state.x,
            state.past_input(lifted.d - 1)?,
            state.past_input(lifted.d)?,
        )
    };
    let ch = ChannelStep::lossless(sample);
    let rec = record(state, lifted.triple.h, out, u.clone(), u.clone(), &ch);
    state.commit(new_x, u);
    Ok(rec)
}

/// The loss model taken literally: x+ = gamma_sc (Phi x) + gamma_ca (Gamma u)
/// with u = -L x. The whole state term vanishes on a sensor-side loss, so
/// this stepper is kept for reference only; the catalog cases use the
/// compensated loops instead.
#[allow(clippy::too_many_arguments)]
pub fn step_naive_loss(
    state: &mut LoopState,
    phi: &Matrix,
    gamma: &Matrix,
    h: f64,
    out: &OutputMap,
    l: &Matrix,
    gamma_sc: u8,
    gamma_ca: u8,
) -> Result<StepRecord> {
    check_flags(gamma_sc, gamma_ca)?;
    check_gain(l, phi.rows(), gamma.cols())?;
    let u = neg_matvec(l, &state.x);
    let (s, c) = (f64::from(gamma_sc), f64::from(gamma_ca));
    let new_x: Vec<f64> = (0..phi.rows())
        .map(|i| s * dot(phi.row(i), &state.x) + c * dot(gamma.row(i), &u))
        .collect();
    let u_applied: Vec<f64> = u.iter().map(|v| c * v).collect();
    let ch = ChannelStep {
        sample: DelaySample {
            tau_sc: 0.0,
            tau_ca: 0.0,
            tau_k: 0.0,
        },
        gamma_sc,
        gamma_ca,
    };
    let rec = record(state, h, out, u, u_applied.clone(), &ch);
    state.commit(new_x, u_applied);
    Ok(rec)
}

/// One step of a loss-compensated loop. Pipeline: the sensor-side strategy
/// produces the controller output, the actuator-side strategy produces the
/// applied input, then the plant advances on the applied input; when a
/// zero-strategy loss leaves the loop open, the step is the bare transition
/// x+ = Phi x with nothing applied.
///
/// `triple` is this step's input split and drives the plant; `est_triple`
/// must be the split the plant used on the previous transition, because the
/// estimators reconstruct that transition (the current split is not even
/// knowable before the step runs). Under a constant delay the two coincide.
#[allow(clippy::too_many_arguments)]
pub fn step_compensated(
    state: &mut LoopState,
    triple: &DiscretizationTriple,
    est_triple: &DiscretizationTriple,
    out: &OutputMap,
    l: &Matrix,
    strategy_sc: &CompensationStrategy,
    strategy_ca: &CompensationStrategy,
    ch: ChannelStep,
) -> Result<StepRecord> {
    check_flags(ch.gamma_sc, ch.gamma_ca)?;
    check_gain(l, triple.n(), triple.m())?;
    if ch.sample.tau_k > triple.h {
        return Err(Error::Contract(format!(
            "delay {} exceeds the interval {}; route to the long-delay path",
            ch.sample.tau_k, triple.h
        )));
    }
    let u_computed = compensate_sc(
        strategy_sc,
        ch.gamma_sc,
        &state.x,
        &mut state.estimator,
        l,
        est_triple,
    );
    let open_loop = open_loop_step(strategy_sc, strategy_ca, ch.gamma_sc, ch.gamma_ca);
    let (u_applied, new_x) = if open_loop {
        (vec![0.0; triple.m()], triple.phi.matvec(&state.x))
    } else {
        let u_applied = compensate_ca(
            strategy_ca,
            ch.gamma_ca,
            &u_computed,
            state.past_input(1)?,
            state.past_input(2)?,
            &state.x_prev,
            l,
            est_triple,
        );
        let new_x = triple.advance(&state.x, &u_applied, state.past_input(1)?);
        (u_applied, new_x)
    };
    let rec = record(state, triple.h, out, u_computed, u_applied.clone(), &ch);
    state.commit(new_x, u_applied);
    Ok(rec)
}

/// Closed-loop matrix over [x; u(k-1)] for the sub-interval-delay loop with
/// u = -L x: [[Phi - Gamma0 L, Gamma1], [-L, 0]].
pub fn closed_loop_matrix(triple: &DiscretizationTriple, l: &Matrix) -> Result<Matrix> {
    let (n, m) = (triple.n(), triple.m());
    check_gain(l, n, m)?;
    let mut cl = Matrix::zeros(n + m, n + m);
    cl.set_block(0, 0, &(&triple.phi - &triple.gamma0.matmul(l)));
    cl.set_block(0, n, &triple.gamma1);
    cl.set_block(n, 0, &l.scale(-1.0));
    Ok(cl)
}

/// Closed-loop matrix of the lifted loop with feedback on the x-block only.
pub fn closed_loop_matrix_lifted(lifted: &LiftedSystem, l: &Matrix) -> Result<Matrix> {
    check_gain(l, lifted.n, lifted.m)?;
    let mut feedback = Matrix::zeros(lifted.m, lifted.a_aug.cols());
    feedback.set_block(0, 0, l);
    Ok(&lifted.a_aug - &lifted.b_aug.matmul(&feedback))
}

enum Engine {
    DelayFree { phi: Matrix, gamma: Matrix },
    Short,
    Long { lifted: LiftedSystem },
    Compensated,
}

fn cached_triple<'a>(
    cache: &'a mut HashMap<u64, DiscretizationTriple>,
    plant: &ContinuousPlant,
    h: f64,
    tau: f64,
) -> Result<&'a DiscretizationTriple> {
    let key = tau.to_bits();
    if !cache.contains_key(&key) {
        let triple = gamma_split(plant, h, tau)?;
        if cache.len() >= TRIPLE_CACHE_CAP {
            cache.clear();
        }
        cache.insert(key, triple);
    }
    Ok(&cache[&key])
}

/// Run one simulation. Equivalent to trial 0 of the Monte Carlo harness
/// with the default divergence guard.
pub fn run(spec: &ScenarioSpec, steps: usize, seed: u64) -> Result<SimulationTrace> {
    run_guarded(spec, steps, seed, 0, DIVERGENCE_GUARD)
}

/// Run the trial-indexed stream of a Monte Carlo sweep.
pub fn run_trial(spec: &ScenarioSpec, steps: usize, seed: u64, trial: u64) -> Result<SimulationTrace> {
    run_guarded(spec, steps, seed, trial, DIVERGENCE_GUARD)
}

/// Full-control run: trial selects the random stream, `guard` is the state
/// norm above which the run stops and is flagged divergent.
pub fn run_guarded(
    spec: &ScenarioSpec,
    steps: usize,
    seed: u64,
    trial: u64,
    guard: f64,
) -> Result<SimulationTrace> {
    if steps == 0 {
        return Err(Error::Domain("a run needs at least one step".into()));
    }
    let violations = validate(spec);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    let gain = spec.gain.resolve(&spec.plant, spec.h)?;
    let out = OutputMap::from_plant(&spec.plant);
    let root = RandomStream::new(seed, trial);
    let mut delay_rng = root.fork_named("delay");
    let mut loss_rng = root.fork_named("loss");

    let engine = match spec.family() {
        ModelFamily::DelayFree => {
            let (phi, gamma) = discretize(&spec.plant, spec.h)?;
            Engine::DelayFree { phi, gamma }
        }
        ModelFamily::ShortDelay => Engine::Short,
        ModelFamily::LongDelay => {
            let tau_k = match spec.delay {
                DelayModel::Constant { tau_sc, tau_ca } => tau_sc + tau_ca,
                _ => unreachable!("validation pins the long-delay case to a constant delay"),
            };
            let decomp = decompose_delay(tau_k, spec.h)?;
            let lifted = build_lifted(&spec.plant, spec.h, decomp.d, decomp.tau_prime)?;
            Engine::Long { lifted }
        }
        ModelFamily::Compensated => Engine::Compensated,
    };
    let depth = match &engine {
        Engine::Long { lifted } => lifted.d,
        _ => 2,
    };
    let mut state = LoopState::new(&spec.x0, spec.plant.m(), depth);
    state.estimator.x_hat.copy_from_slice(&spec.x0);
    state.estimator.observe_state(&spec.x0);

    let mut cache: HashMap<u64, DiscretizationTriple> = HashMap::new();
    let mut records = Vec::with_capacity(steps);
    let mut diverged_at = None;
    // split the plant advanced through one step ago; what the estimators
    // reconstruct on the step after it
    let mut prev_triple: Option<DiscretizationTriple> = None;
    for _ in 0..steps {
        let sample = sample_delay(&spec.delay, &mut delay_rng);
        let (gamma_sc, gamma_ca) = sample_loss(&spec.loss, &mut loss_rng);
        let l = gain.at(spec.gain_tau(sample.tau_sc, sample.tau_k))?;
        let rec = match &engine {
            Engine::DelayFree { phi, gamma } => {
                step_delay_free(&mut state, phi, gamma, spec.h, &out, l)?
            }
            Engine::Short => {
                let triple = cached_triple(&mut cache, &spec.plant, spec.h, sample.tau_k)?;
                step_short_delay(&mut state, triple, &out, l, sample)?
            }
            Engine::Long { lifted } => step_long_delay(&mut state, lifted, &out, l, sample)?,
            Engine::Compensated => {
                let triple = cached_triple(&mut cache, &spec.plant, spec.h, sample.tau_k)?.clone();
                // first step: no transition to reconstruct yet, and the
                // input histories the split would weigh are still zero, so
                // any placeholder gives the same numbers
                let est_triple = prev_triple.as_ref().unwrap_or(&triple);
                let rec = step_compensated(
                    &mut state,
                    &triple,
                    est_triple,
                    &out,
                    l,
                    &spec.strategy_sc,
                    &spec.strategy_ca,
                    ChannelStep {
                        sample,
                        gamma_sc,
                        gamma_ca,
                    },
                )?;
                prev_triple = Some(triple);
                rec
            }
        };
        records.push(rec);
        if !state.x.iter().all(|v| v.is_finite()) || norm2(&state.x) > guard {
            diverged_at = Some(state.k);
            break;
        }
    }
    Ok(SimulationTrace {
        scenario_id: spec.case_id.to_string(),
        seed,
        h: spec.h,
        records,
        x_final: state.x,
        diverged_at,
    })
}

/// Aggregate view of a Monte Carlo sweep. Per-step rows cover every step at
/// which at least one trial was still running.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloSummary {
    pub trials: usize,
    pub steps: usize,
    pub terminal_norms: Vec<f64>,
    pub diverged: Vec<Option<usize>>,
    pub mean_norm: Vec<f64>,
    pub max_norm: Vec<f64>,
    pub loss_rate_sc: f64,
    pub loss_rate_ca: f64,
    pub mean_tau_sc: f64,
    pub mean_tau_ca: f64,
    pub mean_tau_k: f64,
    pub divergent_trials: usize,
}

/// Run `trials` independent seeded trials and aggregate. The aggregation
/// reads trials in index order regardless of completion order, so the
/// summary is independent of scheduling.
pub fn monte_carlo(
    spec: &ScenarioSpec,
    steps: usize,
    trials: usize,
    seed: u64,
) -> Result<MonteCarloSummary> {
    if trials == 0 {
        return Err(Error::Domain("a sweep needs at least one trial".into()));
    }
    let violations = validate(spec);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    let traces = (0..trials)
        .into_par_iter()
        .map(|i| run_trial(spec, steps, seed, i as u64))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(steps, &traces))
}

/// Reduce traces (in trial order) to the summary statistics.
pub fn summarize(steps: usize, traces: &[SimulationTrace]) -> MonteCarloSummary {
    let longest = traces.iter().map(|t| t.records.len()).max().unwrap_or(0);
    let mut mean_norm = Vec::with_capacity(longest);
    let mut max_norm = Vec::with_capacity(longest);
    for k in 0..longest {
        let mut sum = 0.0;
        let mut max = 0.0;
        let mut alive = 0usize;
        for trace in traces {
            if let Some(rec) = trace.records.get(k) {
                let norm = norm2(&rec.x);
                sum += norm;
                if norm > max {
                    max = norm;
                }
                alive += 1;
            }
        }
        mean_norm.push(sum / alive as f64);
        max_norm.push(max);
    }
    let mut lost_sc = 0usize;
    let mut lost_ca = 0usize;
    let mut tau_sc_sum = 0.0;
    let mut tau_ca_sum = 0.0;
    let mut tau_k_sum = 0.0;
    let mut total = 0usize;
    for trace in traces {
        for rec in &trace.records {
            lost_sc += usize::from(rec.gamma_sc == 0);
            lost_ca += usize::from(rec.gamma_ca == 0);
            tau_sc_sum += rec.tau_sc;
            tau_ca_sum += rec.tau_ca;
            tau_k_sum += rec.tau_k;
            total += 1;
        }
    }
    let total_f = total as f64;
    MonteCarloSummary {
        trials: traces.len(),
        steps,
        terminal_norms: traces.iter().map(|t| norm2(&t.x_final)).collect(),
        diverged: traces.iter().map(|t| t.diverged_at).collect(),
        mean_norm,
        max_norm,
        loss_rate_sc: lost_sc as f64 / total_f,
        loss_rate_ca: lost_ca as f64 / total_f,
        mean_tau_sc: tau_sc_sum / total_f,
        mean_tau_ca: tau_ca_sum / total_f,
        mean_tau_k: tau_k_sum / total_f,
        divergent_trials: traces.iter().filter(|t| t.diverged_at.is_some()).count(),
    }
}
