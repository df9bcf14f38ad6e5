//! Loss compensation and feedback gain selection.
//!
//! When a packet is lost, the receiving side substitutes zero, the previous
//! value, or a model-based estimate blended with the last known value. The
//! gain is either fixed, scheduled against the delay, or designed once by a
//! discrete Riccati recursion.

use crate::error::{Error, Result};
use crate::matrix::{spectral_radius, Matrix};
use crate::plant::{discretize, ContinuousPlant, DiscretizationTriple};

/// Substitution rule for a lost packet. `Estimate` blends a one-step model
/// prediction (weight `alpha`) with the last known value (weight `beta`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CompensationStrategy {
    Zero,
    Previous,
    Estimate { alpha: f64, beta: f64 },
}

impl CompensationStrategy {
    pub fn estimate(alpha: f64, beta: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("beta", beta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(Self::Estimate { alpha, beta })
    }
}

/// One row of a scheduled gain table: gain `l` applies for delays in
/// [lo, hi) (the last bucket includes its upper edge).
#[derive(Debug, Clone, PartialEq)]
pub struct GainBucket {
    pub lo: f64,
    pub hi: f64,
    pub l: Matrix,
}

/// How the feedback gain is obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum GainPolicy {
    Fixed(Matrix),
    Scheduled(Vec<GainBucket>),
    DesignedLqr { q: Matrix, r: Matrix },
}

/// A gain policy bound to a plant: cheap per-step lookup by delay.
#[derive(Debug, Clone, PartialEq)]
pub enum ResolvedGain {
    Fixed(Matrix),
    Scheduled(Vec<GainBucket>),
}

impl GainPolicy {
    /// Bind the policy to a plant. A designed policy solves the regulator
    /// problem once on the delay-free discretization and is fixed
    /// thereafter.
    pub fn resolve(&self, plant: &ContinuousPlant, h: f64) -> Result<ResolvedGain> {
        let n = plant.n();
        let m = plant.m();
        match self {
            Self::Fixed(l) => {
                check_gain_dims(l, n, m)?;
                Ok(ResolvedGain::Fixed(l.clone()))
            }
            Self::Scheduled(buckets) => {
                if buckets.is_empty() {
                    return Err(Error::GainConfig("schedule table is empty".into()));
                }
                let mut prev_hi = 0.0;
                for (i, b) in buckets.iter().enumerate() {
                    check_gain_dims(&b.l, n, m)?;
                    if b.lo != prev_hi {
                        return Err(Error::GainConfig(format!(
                            "schedule bucket {i} starts at {} but must start at {prev_hi}",
                            b.lo
                        )));
                    }
                    // a NaN edge must fail here, not slip through as "not >"
                    let ordered = b.hi.is_finite() && b.hi > b.lo;
                    if !ordered {
                        return Err(Error::GainConfig(format!(
                            "schedule bucket {i} has empty range [{}, {})",
                            b.lo, b.hi
                        )));
                    }
                    prev_hi = b.hi;
                }
                Ok(ResolvedGain::Scheduled(buckets.clone()))
            }
            Self::DesignedLqr { q, r } => {
                let (phi, gamma) = discretize(plant, h)?;
                let l = lqr_design(&phi, &gamma, q, r)?;
                Ok(ResolvedGain::Fixed(l))
            }
        }
    }
}

impl ResolvedGain {
    /// Gain for the given delay.
    pub fn at(&self, tau: f64) -> Result<&Matrix> {
        match self {
            Self::Fixed(l) => Ok(l),
            Self::Scheduled(buckets) => {
                let last = buckets.len() - 1;
                for (i, b) in buckets.iter().enumerate() {
                    if tau >= b.lo && (tau < b.hi || (i == last && tau <= b.hi)) {
                        return Ok(&b.l);
                    }
                }
                Err(Error::GainConfig(format!(
                    "delay {tau} outside scheduled range [0, {}]",
                    buckets[last].hi
                )))
            }
        }
    }

    /// Largest delay the policy can serve, if bounded.
    pub fn coverage(&self) -> Option<f64> {
        match self {
            Self::Fixed(_) => None,
            Self::Scheduled(buckets) => Some(buckets[buckets.len() - 1].hi),
        }
    }
}

fn check_gain_dims(l: &Matrix, n: usize, m: usize) -> Result<()> {
    if l.rows() != m || l.cols() != n {
        return Err(Error::GainConfig(format!(
            "gain must be {m}x{n}, got {}x{}",
            l.rows(),
            l.cols()
        )));
    }
    Ok(())
}

const RICCATI_TOL: f64 = 1e-10;
const RICCATI_MAX_ITERS: usize = 10_000;

/// State-feedback gain by iterating the discrete Riccati recursion
/// P <- Q + Phi' P Phi - Phi' P Gamma (R + Gamma' P Gamma)^-1 Gamma' P Phi
/// from P = Q until successive iterates agree to 1e-10 in max norm.
pub fn lqr_design(phi: &Matrix, gamma: &Matrix, q: &Matrix, r: &Matrix) -> Result<Matrix> {
    let n = phi.rows();
    let m = gamma.cols();
    if !phi.is_square() || gamma.rows() != n {
        return Err(Error::Dimension("transition/input matrix shapes disagree".into()));
    }
    if q.rows() != n || q.cols() != n || r.rows() != m || r.cols() != m {
        return Err(Error::Dimension(format!(
            "weights must be {n}x{n} and {m}x{m}"
        )));
    }
    for (name, w) in [("state weight", q), ("input weight", r)] {
        let asym = (w - &w.transpose()).max_abs();
        if asym > 1e-9 * w.max_abs().max(1.0) {
            return Err(Error::Domain(format!("{name} must be symmetric")));
        }
    }
    let phi_t = phi.transpose();
    let gamma_t = gamma.transpose();
    let mut p = q.clone();
    for _ in 0..RICCATI_MAX_ITERS {
        let gtp = gamma_t.matmul(&p);
        let s = r + &gtp.matmul(gamma);
        let l = s.solve(&gtp.matmul(phi))?;
        let ptp = phi_t.matmul(&p);
        let p_next = &(q + &ptp.matmul(phi)) - &ptp.matmul(gamma).matmul(&l);
        let diff = (&p_next - &p).max_abs();
        p = p_next;
        if diff < RICCATI_TOL {
            let gtp = gamma_t.matmul(&p);
            let s = r + &gtp.matmul(gamma);
            return s.solve(&gtp.matmul(phi));
        }
    }
    Err(Error::DesignDivergence(RICCATI_MAX_ITERS))
}

/// Rolling state for the sensor-side estimator: the model-propagated state
/// guess, the last two effective controller outputs, and the last true
/// state. Everything starts at zero unless the caller seeds it.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub x_hat: Vec<f64>,
    pub u_tilde_prev: Vec<f64>,
    pub u_tilde_prev2: Vec<f64>,
    pub x_delayed: Vec<f64>,
    primed: bool,
}

impl EstimatorState {
    pub fn new(n: usize, m: usize) -> Self {
        Self {
            x_hat: vec![0.0; n],
            u_tilde_prev: vec![0.0; m],
            u_tilde_prev2: vec![0.0; m],
            x_delayed: vec![0.0; n],
            primed: false,
        }
    }

    /// Record the true state at the end of a step; it becomes the "previous
    /// state" the strategies see on the next step.
    pub fn observe_state(&mut self, x: &[f64]) {
        self.x_delayed.copy_from_slice(x);
    }
}

fn neg_matvec(l: &Matrix, x: &[f64]) -> Vec<f64> {
    l.matvec(x).into_iter().map(|v| -v).collect()
}

/// Controller output for one step under sensor-side loss.
///
/// On delivery the controller sees the true state. On loss it substitutes
/// zero, the previous state, or the blend alpha*x_hat + beta*x_prev. The
/// estimator recursion x_hat <- Phi x_hat + Gamma0 u~(k-1) + Gamma1 u~(k-2)
/// advances every step (after the first) so it is ready whenever a loss
/// occurs, and the effective output history rotates every step.
///
/// `triple` must carry the input split of the transition being caught up,
/// i.e. the split the plant used on the previous step; only then does the
/// recursion reproduce the plant exactly. With time-varying delays the
/// current step's split is the wrong one (and the controller could not know
/// it yet anyway).
pub fn compensate_sc(
    strategy: &CompensationStrategy,
    gamma_sc: u8,
    x: &[f64],
    estimator: &mut EstimatorState,
    l: &Matrix,
    triple: &DiscretizationTriple,
) -> Vec<f64> {
    if estimator.primed {
        estimator.x_hat = triple.advance(
            &estimator.x_hat,
            &estimator.u_tilde_prev,
            &estimator.u_tilde_prev2,
        );
    } else {
        estimator.primed = true;
    }
    let u = if gamma_sc == 1 {
        neg_matvec(l, x)
    } else {
        match strategy {
            CompensationStrategy::Zero => vec![0.0; l.rows()],
            CompensationStrategy::Previous => neg_matvec(l, &estimator.x_delayed),
            CompensationStrategy::Estimate { alpha, beta } => {
                let x_tilde: Vec<f64> = estimator
                    .x_hat
                    .iter()
                    .zip(&estimator.x_delayed)
                    .map(|(xh, xd)| alpha * xh + beta * xd)
                    .collect();
                neg_matvec(l, &x_tilde)
            }
        }
    };
    estimator.u_tilde_prev2 = std::mem::replace(&mut estimator.u_tilde_prev, u.clone());
    u
}

/// Actuator input for one step under actuator-side loss.
///
/// On delivery the computed value passes through. On loss the actuator
/// substitutes zero, holds the previously applied value, or blends a
/// model-based reconstruction with the (undelivered) computed value: the
/// reconstruction predicts the state from the last true state and the two
/// previously applied inputs, then feeds it back through the gain. As with
/// the sensor-side estimator, `triple` must be the previous step's split,
/// the one that transition actually ran under.
#[allow(clippy::too_many_arguments)]
pub fn compensate_ca(
    strategy: &CompensationStrategy,
    gamma_ca: u8,
    u_computed: &[f64],
    u_prev_applied: &[f64],
    u_prev2_applied: &[f64],
    x_prev: &[f64],
    l: &Matrix,
    triple: &DiscretizationTriple,
) -> Vec<f64> {
    if gamma_ca == 1 {
        return u_computed.to_vec();
    }
    match strategy {
        CompensationStrategy::Zero => vec![0.0; u_computed.len()],
        CompensationStrategy::Previous => u_prev_applied.to_vec(),
        CompensationStrategy::Estimate { alpha, beta } => {
            let x_hat = triple.advance(x_prev, u_prev_applied, u_prev2_applied);
            let u_tilde = neg_matvec(l, &x_hat);
            u_tilde
                .iter()
                .zip(u_computed)
                .map(|(ut, uc)| alpha * ut + beta * uc)
                .collect()
        }
    }
}

/// True when a lost packet combined with the zero strategy on the deciding
/// link turns the whole step into the open-loop model x+ = Phi x.
///
/// The actuator link decides when it loses; otherwise a lost sensor packet
/// with the zero strategy reaches the plant as a zero input.
pub fn open_loop_step(
    strategy_sc: &CompensationStrategy,
    strategy_ca: &CompensationStrategy,
    gamma_sc: u8,
    gamma_ca: u8,
) -> bool {
    (gamma_ca == 0 && matches!(strategy_ca, CompensationStrategy::Zero))
        || (gamma_ca == 1 && gamma_sc == 0 && matches!(strategy_sc, CompensationStrategy::Zero))
}

/// Closed-loop check used after design: radius of Phi - Gamma L.
pub fn closed_loop_radius(phi: &Matrix, gamma: &Matrix, l: &Matrix) -> Result<f64> {
    spectral_radius(&(phi - &gamma.matmul(l)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::gamma_split;
    use crate::rng::RandomStream;

    fn assert_close(actual: f64, expected: f64, tol: f64) {
        assert!(
            (actual - expected).abs() <= tol * expected.abs().max(1.0),
            "expected {expected}, got {actual}"
        );
    }

    fn scalar_plant(a: f64) -> ContinuousPlant {
        ContinuousPlant::new(
            Matrix::from_rows(&[vec![a]]).unwrap(),
            Matrix::from_rows(&[vec![1.0]]).unwrap(),
            Matrix::identity(1),
            None,
        )
        .unwrap()
    }

    #[test]
    fn fixed_policy_ignores_delay() {
        let l = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let plant = ContinuousPlant::new(
            Matrix::zeros(2, 2),
            Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap(),
            Matrix::identity(2),
            None,
        )
        .unwrap();
        let g = GainPolicy::Fixed(l.clone()).resolve(&plant, 1.0).unwrap();
        assert_eq!(g.at(0.0).unwrap(), &l);
        assert_eq!(g.at(0.9).unwrap(), &l);
    }

    #[test]
    fn scheduled_single_bucket_covers_interval() {
        let l = Matrix::from_rows(&[vec![0.5]]).unwrap();
        let policy = GainPolicy::Scheduled(vec![GainBucket {
            lo: 0.0,
            hi: 1.0,
            l: l.clone(),
        }]);
        let g = policy.resolve(&scalar_plant(0.0), 1.0).unwrap();
        assert_eq!(g.at(0.1).unwrap(), &l);
        assert_eq!(g.at(0.9).unwrap(), &l);
        assert_eq!(g.at(1.0).unwrap(), &l);
        assert!(g.at(1.1).is_err());
    }

    #[test]
    fn scheduled_rejects_gaps() {
        let l = Matrix::from_rows(&[vec![0.5]]).unwrap();
        let policy = GainPolicy::Scheduled(vec![
            GainBucket { lo: 0.0, hi: 0.4, l: l.clone() },
            GainBucket { lo: 0.5, hi: 1.0, l },
        ]);
        assert!(matches!(
            policy.resolve(&scalar_plant(0.0), 1.0),
            Err(Error::GainConfig(_))
        ));
    }

    #[test]
    fn scheduled_lookup_picks_matching_bucket() {
        let l0 = Matrix::from_rows(&[vec![0.1]]).unwrap();
        let l1 = Matrix::from_rows(&[vec![0.9]]).unwrap();
        let policy = GainPolicy::Scheduled(vec![
            GainBucket { lo: 0.0, hi: 0.5, l: l0.clone() },
            GainBucket { lo: 0.5, hi: 1.0, l: l1.clone() },
        ]);
        let g = policy.resolve(&scalar_plant(0.0), 1.0).unwrap();
        assert_eq!(g.at(0.49).unwrap(), &l0);
        assert_eq!(g.at(0.5).unwrap(), &l1);
    }

    #[test]
    fn designed_policy_on_integrator_hits_golden_ratio() {
        let policy = GainPolicy::DesignedLqr {
            q: Matrix::identity(1),
            r: Matrix::identity(1),
        };
        let g = policy.resolve(&scalar_plant(0.0), 1.0).unwrap();
        let l = g.at(0.0).unwrap();
        assert_close(l[(0, 0)], 0.618034, 1e-5);
    }

    #[test]
    fn riccati_deadbeat_plant_needs_no_feedback() {
        let zero = Matrix::from_rows(&[vec![0.0]]).unwrap();
        let one = Matrix::identity(1);
        let l = lqr_design(&zero, &one, &one, &one).unwrap();
        assert_eq!(l[(0, 0)], 0.0);
    }

    #[test]
    fn riccati_scalar_fixed_point() {
        let one = Matrix::identity(1);
        let l = lqr_design(&one, &one, &one, &one).unwrap();
        // p converges to (1 + sqrt 5) / 2, gain p / (1 + p)
        let p = (1.0 + 5.0f64.sqrt()) / 2.0;
        assert_close(l[(0, 0)], p / (1.0 + p), 1e-9);
    }

    #[test]
    fn riccati_gain_stabilizes_random_plants() {
        let mut rng = RandomStream::new(21, 0);
        for _ in 0..20 {
            let n = 2;
            let phi =
                Matrix::new(n, n, (0..n * n).map(|_| 2.0 * rng.next_f64() - 1.0).collect())
                    .unwrap();
            let gamma =
                Matrix::new(n, 1, (0..n).map(|_| 2.0 * rng.next_f64() - 1.0).collect()).unwrap();
            if gamma.max_abs() < 0.1 {
                continue;
            }
            let q = Matrix::identity(n);
            let r = Matrix::identity(1);
            if let Ok(l) = lqr_design(&phi, &gamma, &q, &r) {
                let rho = closed_loop_radius(&phi, &gamma, &l).unwrap();
                assert!(rho < 1.0, "unstable closed loop, radius {rho}");
            }
        }
    }

    #[test]
    fn riccati_rejects_asymmetric_weights() {
        let phi = Matrix::identity(2);
        let gamma = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let q = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]).unwrap();
        assert!(lqr_design(&phi, &gamma, &q, &Matrix::identity(1)).is_err());
    }

    fn test_triple() -> DiscretizationTriple {
        gamma_split(&scalar_plant(0.0), 1.0, 0.5).unwrap()
    }

    #[test]
    fn sc_delivery_uses_true_state() {
        let l = Matrix::from_rows(&[vec![2.0]]).unwrap();
        let triple = test_triple();
        for strategy in [
            CompensationStrategy::Zero,
            CompensationStrategy::Previous,
            CompensationStrategy::estimate(0.3, 0.6).unwrap(),
        ] {
            let mut est = EstimatorState::new(1, 1);
            let u = compensate_sc(&strategy, 1, &[3.0], &mut est, &l, &triple);
            assert_eq!(u, vec![-6.0]);
            assert_eq!(est.u_tilde_prev, vec![-6.0]);
        }
    }

    #[test]
    fn sc_zero_strategy_outputs_zero_on_loss() {
        let l = Matrix::from_rows(&[vec![2.0]]).unwrap();
        let mut est = EstimatorState::new(1, 1);
        let u = compensate_sc(&CompensationStrategy::Zero, 0, &[3.0], &mut est, &l, &test_triple());
        assert_eq!(u, vec![0.0]);
    }

    #[test]
    fn sc_previous_strategy_uses_delayed_state() {
        let l = Matrix::from_rows(&[vec![2.0]]).unwrap();
        let mut est = EstimatorState::new(1, 1);
        est.x_delayed = vec![5.0];
        let u = compensate_sc(
            &CompensationStrategy::Previous,
            0,
            &[3.0],
            &mut est,
            &l,
            &test_triple(),
        );
        assert_eq!(u, vec![-10.0]);
    }

    #[test]
    fn sc_estimate_combination_is_linear() {
        let l = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let triple = test_triple();
        for (alpha, beta) in [(1.0, 0.0), (0.0, 1.0), (0.5, 0.5), (0.3, 0.4)] {
            let mut est = EstimatorState::new(1, 1);
            est.x_hat = vec![2.0];
            est.x_delayed = vec![2.0];
            est.primed = false;
            let strategy = CompensationStrategy::estimate(alpha, beta).unwrap();
            let u = compensate_sc(&strategy, 0, &[9.0], &mut est, &l, &triple);
            assert_close(u[0], -(alpha + beta) * 2.0, 1e-15);
        }
    }

    #[test]
    fn sc_estimator_recursion_advances_once_primed() {
        let l = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let triple = test_triple();
        let mut est = EstimatorState::new(1, 1);
        est.x_hat = vec![1.0];
        // first call leaves the seed in place
        compensate_sc(&CompensationStrategy::Zero, 1, &[1.0], &mut est, &l, &triple);
        assert_eq!(est.x_hat, vec![1.0]);
        assert_eq!(est.u_tilde_prev, vec![-1.0]);
        // second call propagates: x_hat = 1*1 + 0.5*(-1) + 0.5*0
        compensate_sc(&CompensationStrategy::Zero, 1, &[0.5], &mut est, &l, &triple);
        assert_close(est.x_hat[0], 0.5, 1e-15);
    }

    #[test]
    fn ca_delivery_passes_through() {
        let l = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let u = compensate_ca(
            &CompensationStrategy::estimate(0.5, 0.5).unwrap(),
            1,
            &[7.0],
            &[1.0],
            &[2.0],
            &[3.0],
            &l,
            &test_triple(),
        );
        assert_eq!(u, vec![7.0]);
    }

    #[test]
    fn ca_hold_repeats_last_applied_value() {
        let l = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let triple = test_triple();
        let held = vec![-1.5];
        let first = compensate_ca(
            &CompensationStrategy::Previous,
            0,
            &[9.0],
            &held,
            &[0.0],
            &[0.0],
            &l,
            &triple,
        );
        assert_eq!(first, held);
        let second = compensate_ca(
            &CompensationStrategy::Previous,
            0,
            &[4.0],
            &first,
            &held,
            &[0.0],
            &l,
            &triple,
        );
        assert_eq!(second, held);
    }

    #[test]
    fn ca_zero_strategy_applies_zero() {
        let l = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let u = compensate_ca(
            &CompensationStrategy::Zero,
            0,
            &[9.0],
            &[1.0],
            &[2.0],
            &[3.0],
            &l,
            &test_triple(),
        );
        assert_eq!(u, vec![0.0]);
    }

    #[test]
    fn ca_estimate_beta_only_degenerates_to_computed() {
        let l = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let u = compensate_ca(
            &CompensationStrategy::estimate(0.0, 1.0).unwrap(),
            0,
            &[9.0],
            &[1.0],
            &[2.0],
            &[3.0],
            &l,
            &test_triple(),
        );
        assert_eq!(u, vec![9.0]);
    }

    #[test]
    fn ca_estimate_reconstruction_uses_state_prediction() {
        let l = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let triple = test_triple();
        // x_hat = 1*x_prev + 0.5*u_prev + 0.5*u_prev2 = 2 - 0.5 + 0.25
        let u = compensate_ca(
            &CompensationStrategy::estimate(1.0, 0.0).unwrap(),
            0,
            &[9.0],
            &[-1.0],
            &[0.5],
            &[2.0],
            &l,
            &triple,
        );
        assert_close(u[0], -1.75, 1e-15);
    }

    #[test]
    fn open_loop_rule_matches_link_semantics() {
        let zero = CompensationStrategy::Zero;
        let prev = CompensationStrategy::Previous;
        assert!(open_loop_step(&prev, &zero, 1, 0));
        assert!(open_loop_step(&zero, &prev, 0, 1));
        assert!(!open_loop_step(&zero, &prev, 0, 0));
        assert!(!open_loop_step(&prev, &prev, 0, 0));
        assert!(!open_loop_step(&zero, &zero, 1, 1));
    }

    #[test]
    fn estimate_constructor_bounds_weights() {
        assert!(CompensationStrategy::estimate(-0.1, 0.5).is_err());
        assert!(CompensationStrategy::estimate(0.5, 1.1).is_err());
        assert!(CompensationStrategy::estimate(0.0, 1.0).is_ok());
    }
}
