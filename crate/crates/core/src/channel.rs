//! Network link models: per-step transmission delays in one of three
//! structures (symmetric, correlated by a rational ratio, uncorrelated) and
//! independent Bernoulli packet loss per link.

use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// Delay distribution on a single link, support in seconds >= 0.
#[derive(Debug, Clone, PartialEq)]
pub enum Dist {
    Uniform { lo: f64, hi: f64 },
    DiscreteUniform { values: Vec<f64> },
}

impl Dist {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Domain("uniform bounds must be finite".into()));
        }
        if lo < 0.0 {
            return Err(Error::Domain(format!(
                "delay support must be non-negative, got lo={lo}"
            )));
        }
        if lo > hi {
            return Err(Error::Domain(format!("uniform needs lo <= hi, got [{lo}, {hi}]")));
        }
        Ok(Self::Uniform { lo, hi })
    }

    pub fn discrete(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Domain("discrete distribution needs at least one value".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Domain(format!(
                "delay values must be finite and non-negative, got {bad}"
            )));
        }
        Ok(Self::DiscreteUniform { values })
    }

    /// Re-run the constructor checks; variants are public, so a literal can
    /// bypass them.
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Uniform { lo, hi } => Self::uniform(*lo, *hi).map(drop),
            Self::DiscreteUniform { values } => Self::discrete(values.clone()).map(drop),
        }
    }

    pub fn sample(&self, rng: &mut RandomStream) -> f64 {
        match self {
            Self::Uniform { lo, hi } => rng.next_range(*lo, *hi),
            Self::DiscreteUniform { values } => values[rng.next_index(values.len())],
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Uniform { lo, hi } => 0.5 * (lo + hi),
            Self::DiscreteUniform { values } => {
                values.iter().sum::<f64>() / values.len() as f64
            }
        }
    }

    /// Largest value the distribution can produce.
    pub fn sup(&self) -> f64 {
        match self {
            Self::Uniform { hi, .. } => *hi,
            Self::DiscreteUniform { values } => values.iter().fold(0.0, |m, v| m.max(*v)),
        }
    }
}

/// Positive rational restricted to an integer or a unit fraction
/// (k or 1/k), the two shapes a correlated-delay ratio can take.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    num: u32,
    den: u32,
}

impl Ratio {
    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::Domain(format!("ratio must be positive, got {num}/{den}")));
        }
        if num != 1 && den != 1 {
            return Err(Error::Domain(format!(
                "ratio must be an integer or a unit fraction, got {num}/{den}"
            )));
        }
        Ok(Self { num, den })
    }

    pub fn num(&self) -> u32 {
        self.num
    }

    pub fn den(&self) -> u32 {
        self.den
    }

    pub fn value(&self) -> f64 {
        f64::from(self.num) / f64::from(self.den)
    }
}

/// How the two link delays relate step to step.
///
/// `Symmetric` draws one value used for both directions; `Correlated` ties
/// the sensor-side delay to the actuator-side draw by a fixed rational
/// ratio; `Uncorrelated` draws the links independently.
#[derive(Debug, Clone, PartialEq)]
pub enum DelayModel {
    Constant { tau_sc: f64, tau_ca: f64 },
    Symmetric { dist: Dist },
    Correlated { dist: Dist, ratio: Ratio },
    Uncorrelated { dist_sc: Dist, dist_ca: Dist },
}

impl DelayModel {
    pub fn constant(tau_sc: f64, tau_ca: f64) -> Result<Self> {
        if !tau_sc.is_finite() || !tau_ca.is_finite() || tau_sc < 0.0 || tau_ca < 0.0 {
            return Err(Error::Domain(format!(
                "constant delays must be finite and non-negative, got ({tau_sc}, {tau_ca})"
            )));
        }
        Ok(Self::Constant { tau_sc, tau_ca })
    }

    /// Re-run the constructor checks on every contained distribution.
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Constant { tau_sc, tau_ca } => Self::constant(*tau_sc, *tau_ca).map(drop),
            Self::Symmetric { dist } | Self::Correlated { dist, .. } => dist.validate(),
            Self::Uncorrelated { dist_sc, dist_ca } => {
                dist_sc.validate()?;
                dist_ca.validate()
            }
        }
    }

    /// Largest round-trip delay the model can produce.
    pub fn max_tau_k(&self) -> f64 {
        match self {
            Self::Constant { tau_sc, tau_ca } => tau_sc + tau_ca,
            Self::Symmetric { dist } => 2.0 * dist.sup(),
            // written as the sampling arithmetic evaluates it at the supremum,
            // so every draw is bounded by this value even at the ulp level
            Self::Correlated { dist, ratio } => ratio.value() * dist.sup() + dist.sup(),
            Self::Uncorrelated { dist_sc, dist_ca } => dist_sc.sup() + dist_ca.sup(),
        }
    }

    /// Largest sensor-side delay the model can produce.
    pub fn max_tau_sc(&self) -> f64 {
        match self {
            Self::Constant { tau_sc, .. } => *tau_sc,
            Self::Symmetric { dist } => dist.sup(),
            Self::Correlated { dist, ratio } => ratio.value() * dist.sup(),
            Self::Uncorrelated { dist_sc, .. } => dist_sc.sup(),
        }
    }

    /// Mean actuator-side delay, the natural default for an assumed value
    /// when the true one is unobservable.
    pub fn mean_tau_ca(&self) -> f64 {
        match self {
            Self::Constant { tau_ca, .. } => *tau_ca,
            Self::Symmetric { dist } | Self::Correlated { dist, .. } => dist.mean(),
            Self::Uncorrelated { dist_ca, .. } => dist_ca.mean(),
        }
    }

    pub fn is_random(&self) -> bool {
        !matches!(self, Self::Constant { .. })
    }
}

/// One step's delays; `tau_k` is always the exact sum of the two links.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelaySample {
    pub tau_sc: f64,
    pub tau_ca: f64,
    pub tau_k: f64,
}

/// Per-link loss probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossModel {
    p_sc: f64,
    p_ca: f64,
}

impl LossModel {
    pub fn new(p_sc: f64, p_ca: f64) -> Result<Self> {
        for (name, p) in [("p_sc", p_sc), ("p_ca", p_ca)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Domain(format!(
                    "{name} must be a probability in [0, 1], got {p}"
                )));
            }
        }
        Ok(Self { p_sc, p_ca })
    }

    pub fn lossless() -> Self {
        Self { p_sc: 0.0, p_ca: 0.0 }
    }

    pub fn p_sc(&self) -> f64 {
        self.p_sc
    }

    pub fn p_ca(&self) -> f64 {
        self.p_ca
    }
}

/// Draw one step's link delays. The sensor-side value is drawn (or derived)
/// first, so a model's draw count per step is fixed and reproducible.
pub fn sample_delay(model: &DelayModel, rng: &mut RandomStream) -> DelaySample {
    let (tau_sc, tau_ca) = match model {
        DelayModel::Constant { tau_sc, tau_ca } => (*tau_sc, *tau_ca),
        DelayModel::Symmetric { dist } => {
            let tau_ca = dist.sample(rng);
            (tau_ca, tau_ca)
        }
        DelayModel::Correlated { dist, ratio } => {
            let tau_ca = dist.sample(rng);
            (ratio.value() * tau_ca, tau_ca)
        }
        DelayModel::Uncorrelated { dist_sc, dist_ca } => {
            let tau_sc = dist_sc.sample(rng);
            (tau_sc, dist_ca.sample(rng))
        }
    };
    DelaySample {
        tau_sc,
        tau_ca,
        tau_k: tau_sc + tau_ca,
    }
}

/// Draw one step's arrival flags: 1 = delivered, 0 = lost. The
/// sensor-to-controller flag is drawn first.
pub fn sample_loss(model: &LossModel, rng: &mut RandomStream) -> (u8, u8) {
    let gamma_sc = u8::from(!rng.next_bernoulli(model.p_sc));
    let gamma_ca = u8::from(!rng.next_bernoulli(model.p_ca));
    (gamma_sc, gamma_ca)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_degenerate_doubles() {
        let model = DelayModel::Symmetric {
            dist: Dist::uniform(0.1, 0.1).unwrap(),
        };
        let mut rng = RandomStream::new(1, 0);
        let s = sample_delay(&model, &mut rng);
        assert_eq!(s.tau_sc, 0.1);
        assert_eq!(s.tau_ca, 0.1);
        assert_eq!(s.tau_k, 0.2);
    }

    #[test]
    fn correlated_integer_ratio() {
        let model = DelayModel::Correlated {
            dist: Dist::uniform(0.2, 0.2).unwrap(),
            ratio: Ratio::new(2, 1).unwrap(),
        };
        let mut rng = RandomStream::new(1, 0);
        let s = sample_delay(&model, &mut rng);
        assert_eq!(s.tau_sc, 0.4);
        assert_eq!(s.tau_ca, 0.2);
        assert_eq!(s.tau_k, 0.6000000000000001);
    }

    #[test]
    fn correlated_ratio_exact_over_random_draws() {
        for ratio in [Ratio::new(3, 1).unwrap(), Ratio::new(1, 4).unwrap()] {
            let model = DelayModel::Correlated {
                dist: Dist::uniform(0.0, 0.25).unwrap(),
                ratio,
            };
            let mut rng = RandomStream::new(8, 3);
            for _ in 0..1000 {
                let s = sample_delay(&model, &mut rng);
                assert_eq!(s.tau_sc, ratio.value() * s.tau_ca);
                assert_eq!(s.tau_k, s.tau_sc + s.tau_ca);
            }
        }
    }

    #[test]
    fn symmetric_links_always_equal() {
        let model = DelayModel::Symmetric {
            dist: Dist::uniform(0.0, 0.25).unwrap(),
        };
        let mut rng = RandomStream::new(2, 7);
        for _ in 0..1000 {
            let s = sample_delay(&model, &mut rng);
            assert_eq!(s.tau_sc, s.tau_ca);
            assert_eq!(s.tau_k, s.tau_sc + s.tau_ca);
        }
    }

    #[test]
    fn uncorrelated_links_uncorrelated() {
        let model = DelayModel::Uncorrelated {
            dist_sc: Dist::uniform(0.0, 0.25).unwrap(),
            dist_ca: Dist::uniform(0.0, 0.25).unwrap(),
        };
        let mut rng = RandomStream::new(4, 1);
        let n = 100_000;
        let samples: Vec<DelaySample> = (0..n).map(|_| sample_delay(&model, &mut rng)).collect();
        let msc = samples.iter().map(|s| s.tau_sc).sum::<f64>() / n as f64;
        let mca = samples.iter().map(|s| s.tau_ca).sum::<f64>() / n as f64;
        let cov: f64 = samples.iter().map(|s| (s.tau_sc - msc) * (s.tau_ca - mca)).sum();
        let vsc: f64 = samples.iter().map(|s| (s.tau_sc - msc).powi(2)).sum();
        let vca: f64 = samples.iter().map(|s| (s.tau_ca - mca).powi(2)).sum();
        let r = cov / (vsc * vca).sqrt();
        assert!(r.abs() < 0.02, "correlation {r}");
    }

    #[test]
    fn discrete_uniform_hits_whole_grid() {
        let dist = Dist::discrete(vec![0.1, 0.2, 0.3]).unwrap();
        let mut rng = RandomStream::new(6, 6);
        let mut seen = [false; 3];
        for _ in 0..200 {
            let v = dist.sample(&mut rng);
            let idx = [0.1, 0.2, 0.3].iter().position(|g| *g == v).unwrap();
            seen[idx] = true;
        }
        assert_eq!(seen, [true; 3]);
    }

    #[test]
    fn loss_degenerate_probabilities() {
        let mut rng = RandomStream::new(3, 3);
        let never = LossModel::new(0.0, 0.0).unwrap();
        let always = LossModel::new(1.0, 1.0).unwrap();
        for _ in 0..1000 {
            assert_eq!(sample_loss(&never, &mut rng), (1, 1));
            assert_eq!(sample_loss(&always, &mut rng), (0, 0));
        }
    }

    #[test]
    fn loss_rate_within_binomial_band() {
        let model = LossModel::new(0.3, 0.05).unwrap();
        let mut rng = RandomStream::new(12, 0);
        let n = 100_000;
        let mut lost_sc = 0u32;
        let mut lost_ca = 0u32;
        for _ in 0..n {
            let (gsc, gca) = sample_loss(&model, &mut rng);
            lost_sc += u32::from(gsc == 0);
            lost_ca += u32::from(gca == 0);
        }
        let rate_sc = f64::from(lost_sc) / n as f64;
        let rate_ca = f64::from(lost_ca) / n as f64;
        assert!((rate_sc - 0.3).abs() < 3.0 * (0.3 * 0.7 / n as f64).sqrt(), "{rate_sc}");
        assert!((rate_ca - 0.05).abs() < 3.0 * (0.05 * 0.95 / n as f64).sqrt(), "{rate_ca}");
    }

    #[test]
    fn ratio_rejects_composite_fraction() {
        assert!(Ratio::new(2, 3).is_err());
        assert!(Ratio::new(0, 1).is_err());
        assert!(Ratio::new(1, 0).is_err());
        assert!(Ratio::new(5, 1).is_ok());
        assert!(Ratio::new(1, 5).is_ok());
    }

    #[test]
    fn dist_validation() {
        assert!(Dist::uniform(-0.1, 0.2).is_err());
        assert!(Dist::uniform(0.3, 0.2).is_err());
        assert!(Dist::discrete(vec![]).is_err());
        assert!(Dist::discrete(vec![0.1, -0.2]).is_err());
    }

    #[test]
    fn loss_model_rejects_bad_probability() {
        assert!(LossModel::new(-0.1, 0.0).is_err());
        assert!(LossModel::new(0.0, 1.5).is_err());
    }

    #[test]
    fn model_bounds() {
        let m = DelayModel::Correlated {
            dist: Dist::uniform(0.0, 0.2).unwrap(),
            ratio: Ratio::new(3, 1).unwrap(),
        };
        assert_eq!(m.max_tau_k(), 3.0 * 0.2 + 0.2);
        assert_eq!(m.max_tau_sc(), 0.6000000000000001);
        assert_eq!(m.mean_tau_ca(), 0.1);
        // the bound matches the draw arithmetic at the supremum exactly
        let draw_at_sup = 3.0 * 0.2 + 0.2;
        assert!(draw_at_sup <= m.max_tau_k());
    }

    #[test]
    fn samples_reproducible_across_rebuilt_streams() {
        let model = DelayModel::Uncorrelated {
            dist_sc: Dist::uniform(0.0, 0.25).unwrap(),
            dist_ca: Dist::discrete(vec![0.05, 0.1]).unwrap(),
        };
        let mut a = RandomStream::new(99, 7);
        let first: Vec<DelaySample> = (0..50).map(|_| sample_delay(&model, &mut a)).collect();
        let mut b = RandomStream::new(99, 7);
        let second: Vec<DelaySample> = (0..50).map(|_| sample_delay(&model, &mut b)).collect();
        assert_eq!(first, second);
    }
}
