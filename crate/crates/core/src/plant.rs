//! Continuous plant and its sampled-data forms: exact zero-order-hold
//! discretization, the split of one sampling interval at the input-arrival
//! instant, decomposition of delays longer than one interval, and the
//! augmented model that carries the in-flight inputs as state.

use crate::error::{Error, Result};
use crate::matrix::{dot, mat_exp, Matrix};

/// Continuous LTI plant dx/dt = Ax + Bu, y = Cx + Du.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousPlant {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Option<Matrix>,
}

impl ContinuousPlant {
    pub fn new(a: Matrix, b: Matrix, c: Matrix, d: Option<Matrix>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Dimension(format!(
                "state matrix must be square, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        let n = a.rows();
        if b.rows() != n {
            return Err(Error::Dimension(format!(
                "input matrix has {} rows, expected {n}",
                b.rows()
            )));
        }
        if c.cols() != n {
            return Err(Error::Dimension(format!(
                "output matrix has {} cols, expected {n}",
                c.cols()
            )));
        }
        if let Some(ref d) = d {
            if d.rows() != c.rows() || d.cols() != b.cols() {
                return Err(Error::Dimension(format!(
                    "feedthrough matrix must be {}x{}, got {}x{}",
                    c.rows(),
                    b.cols(),
                    d.rows(),
                    d.cols()
                )));
            }
        }
        Ok(Self { a, b, c, d })
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.rows()
    }

    /// Input dimension.
    pub fn m(&self) -> usize {
        self.b.cols()
    }

    /// Output dimension.
    pub fn p(&self) -> usize {
        self.c.rows()
    }

    pub fn feedthrough(&self) -> Matrix {
        self.d
            .clone()
            .unwrap_or_else(|| Matrix::zeros(self.p(), self.m()))
    }
}

/// State transition and the two input matrices for one sampling interval in
/// which the new input takes effect `tau` seconds after the sample.
///
/// `gamma0` drives the interval's tail with the newly arrived input;
/// `gamma1` carries the previous input across the head. The two always sum
/// to the full-interval input matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizationTriple {
    pub phi: Matrix,
    pub gamma0: Matrix,
    pub gamma1: Matrix,
    pub h: f64,
    pub tau: f64,
}

impl DiscretizationTriple {
    pub fn new(phi: Matrix, gamma0: Matrix, gamma1: Matrix, h: f64, tau: f64) -> Result<Self> {
        if !phi.is_square() {
            return Err(Error::Dimension("state transition matrix must be square".into()));
        }
        let n = phi.rows();
        if gamma0.rows() != n || gamma1.rows() != n || gamma0.cols() != gamma1.cols() {
            return Err(Error::Dimension(
                "input matrices must have matching shapes with n rows".into(),
            ));
        }
        if h <= 0.0 || !h.is_finite() {
            return Err(Error::Domain(format!("sampling period must be positive, got {h}")));
        }
        if !(0.0..=h).contains(&tau) {
            return Err(Error::Domain(format!("delay must lie in [0, {h}], got {tau}")));
        }
        Ok(Self {
            phi,
            gamma0,
            gamma1,
            h,
            tau,
        })
    }

    pub fn n(&self) -> usize {
        self.phi.rows()
    }

    pub fn m(&self) -> usize {
        self.gamma0.cols()
    }

    /// One state update x+ = Phi x + Gamma0 u_new + Gamma1 u_old.
    ///
    /// Single shared kernel with a fixed accumulation order, so every code
    /// path that steps this model gives bit-equal results on equal inputs.
    pub fn advance(&self, x: &[f64], u_new: &[f64], u_old: &[f64]) -> Vec<f64> {
        (0..self.phi.rows())
            .map(|i| {
                dot(self.phi.row(i), x)
                    + dot(self.gamma0.row(i), u_new)
                    + dot(self.gamma1.row(i), u_old)
            })
            .collect()
    }
}

/// A delay longer than one interval, written as (d-1)h plus a remainder in
/// (0, h]. A delay of exactly k*h keeps d = k with remainder h.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayDecomposition {
    pub d: usize,
    pub tau_prime: f64,
}

/// Plant dynamics over the stacked state [x(k); u(k-d); ...; u(k-1)].
///
/// The x-rows apply the transition and the two split input matrices to the
/// oldest stored inputs; the remaining rows shift each stored input one slot
/// and admit the new input at the newest slot.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedSystem {
    pub a_aug: Matrix,
    pub b_aug: Matrix,
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub triple: DiscretizationTriple,
}

impl LiftedSystem {
    pub fn size(&self) -> usize {
        self.n + self.d * self.m
    }

    pub fn total_delay(&self) -> f64 {
        (self.d as f64 - 1.0) * self.triple.h + self.triple.tau
    }
}

/// Transition matrix and integrated input matrix over one step of length t,
/// read off the exponential of [[A, B], [0, 0]] t. Exact for singular A and
/// t = 0.
fn phi_and_integral(a: &Matrix, b: &Matrix, t: f64) -> Result<(Matrix, Matrix)> {
    let n = a.rows();
    let m = b.cols();
    let mut block = Matrix::zeros(n + m, n + m);
    block.set_block(0, 0, a);
    block.set_block(0, n, b);
    let e = mat_exp(&block, t)?;
    Ok((e.block(0, 0, n, n), e.block(0, n, n, m)))
}

/// Zero-order-hold discretization over one full interval: x(k+1) = Phi x(k)
/// + Gamma u(k).
pub fn discretize(plant: &ContinuousPlant, h: f64) -> Result<(Matrix, Matrix)> {
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::Domain(format!("sampling period must be positive, got {h}")));
    }
    phi_and_integral(&plant.a, &plant.b, h)
}

/// Discretization with the interval split at the input arrival: the first
/// tau seconds still run on the previous input, the rest on the new one.
pub fn gamma_split(plant: &ContinuousPlant, h: f64, tau: f64) -> Result<DiscretizationTriple> {
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::Domain(format!("sampling period must be positive, got {h}")));
    }
    if !(0.0..=h).contains(&tau) {
        return Err(Error::Domain(format!(
            "delay must lie in [0, {h}] (decompose longer delays first), got {tau}"
        )));
    }
    let (phi_head, gamma0) = phi_and_integral(&plant.a, &plant.b, h - tau)?;
    let (_, gamma_tail) = phi_and_integral(&plant.a, &plant.b, tau)?;
    let gamma1 = phi_head.matmul(&gamma_tail);
    let phi = mat_exp(&plant.a, h)?;
    DiscretizationTriple::new(phi, gamma0, gamma1, h, tau)
}

/// Write tau > 0 as (d-1)h + tau' with tau' in (0, h]. A tau within
/// rounding of a multiple of h settles on the boundary convention tau' = h.
pub fn decompose_delay(tau: f64, h: f64) -> Result<DelayDecomposition> {
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::Domain(format!("sampling period must be positive, got {h}")));
    }
    if tau <= 0.0 || !tau.is_finite() {
        return Err(Error::Domain(format!("delay must be positive, got {tau}")));
    }
    let mut d = (tau / h).ceil().max(1.0);
    let mut tau_prime = tau - (d - 1.0) * h;
    if tau_prime <= 0.0 {
        d -= 1.0;
        tau_prime = tau - (d - 1.0) * h;
    } else if tau_prime > h {
        d += 1.0;
        tau_prime = tau - (d - 1.0) * h;
    }
    if tau_prime > h {
        tau_prime = h;
    } else if tau_prime <= 0.0 {
        d -= 1.0;
        tau_prime = h;
    }
    debug_assert!(d >= 1.0);
    Ok(DelayDecomposition {
        d: d as usize,
        tau_prime,
    })
}

/// Augmented model for a delay spanning d intervals with remainder
/// tau_prime: state [x(k); u(k-d); ...; u(k-1)], input u(k).
pub fn build_lifted(
    plant: &ContinuousPlant,
    h: f64,
    d: usize,
    tau_prime: f64,
) -> Result<LiftedSystem> {
    if d < 1 {
        return Err(Error::Domain("delay interval count must be at least 1".into()));
    }
    if !(tau_prime > 0.0 && tau_prime <= h) {
        return Err(Error::Domain(format!(
            "delay remainder must lie in (0, {h}], got {tau_prime}"
        )));
    }
    let triple = gamma_split(plant, h, tau_prime)?;
    let n = plant.n();
    let m = plant.m();
    let size = n + d * m;
    let mut a_aug = Matrix::zeros(size, size);
    let mut b_aug = Matrix::zeros(size, m);
    a_aug.set_block(0, 0, &triple.phi);
    a_aug.set_block(0, n, &triple.gamma1);
    if d >= 2 {
        a_aug.set_block(0, n + m, &triple.gamma0);
    } else {
        b_aug.set_block(0, 0, &triple.gamma0);
    }
    for j in 0..d {
        let row0 = n + j * m;
        if j + 1 < d {
            for i in 0..m {
                a_aug.set(row0 + i, n + (j + 1) * m + i, 1.0);
            }
        } else {
            for i in 0..m {
                b_aug.set(row0 + i, i, 1.0);
            }
        }
    }
    Ok(LiftedSystem {
        a_aug,
        b_aug,
        n,
        m,
        d,
        triple,
    })
}
