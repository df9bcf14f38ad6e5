//! The scenario catalog: 24 named loop configurations pairing a delay
//! structure with a loss pattern and a compensation strategy, plus a TOML
//! file form with strict field checking.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::channel::{DelayModel, Dist, LossModel, Ratio};
use crate::error::{Error, Result, Violation};
use crate::matrix::Matrix;
use crate::plant::ContinuousPlant;
use crate::strategies::{CompensationStrategy, GainBucket, GainPolicy};

/// Catalog case identifier. Case 0 has two variants: `ZeroA` runs without
/// delay, `ZeroB` with a constant sub-interval delay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CaseId {
    ZeroA,
    ZeroB,
    Numbered(u8),
}

impl CaseId {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "0a" => Ok(Self::ZeroA),
            "0b" => Ok(Self::ZeroB),
            _ => match s.parse::<u8>() {
                Ok(k) if (1..=23).contains(&k) => Ok(Self::Numbered(k)),
                _ => Err(Error::Domain(format!(
                    "unknown case '{s}' (expected 0a, 0b, or 1..23)"
                ))),
            },
        }
    }

    /// All 24 catalog cases in catalog order.
    pub fn all() -> Vec<Self> {
        let mut v = vec![Self::ZeroA, Self::ZeroB];
        v.extend((1..=23).map(Self::Numbered));
        v
    }

    fn number(self) -> Option<u8> {
        match self {
            Self::Numbered(k) => Some(k),
            _ => None,
        }
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ZeroA => write!(f, "0a"),
            Self::ZeroB => write!(f, "0b"),
            Self::Numbered(k) => write!(f, "{k}"),
        }
    }
}

/// Which model family a case steps through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelFamily {
    DelayFree,
    ShortDelay,
    LongDelay,
    Compensated,
}

/// Which links can lose packets in a case.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LossSide {
    None,
    Sensor,
    Actuator,
    Both,
}

fn loss_side(case: CaseId) -> LossSide {
    match case.number() {
        Some(k) if (5..=13).contains(&k) => LossSide::Sensor,
        Some(k) if (14..=22).contains(&k) => LossSide::Actuator,
        Some(23) => LossSide::Both,
        _ => LossSide::None,
    }
}

/// Delay structure a case is defined over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DelayShape {
    NoDelay,
    ConstantShort,
    ConstantLong,
    Symmetric,
    Correlated,
    Uncorrelated,
    AnyRandom,
}

fn delay_shape(case: CaseId) -> DelayShape {
    match case {
        CaseId::ZeroA => DelayShape::NoDelay,
        CaseId::ZeroB => DelayShape::ConstantShort,
        CaseId::Numbered(4) => DelayShape::ConstantLong,
        CaseId::Numbered(k) => match k {
            1 | 5..=7 | 14..=16 => DelayShape::Symmetric,
            2 | 8..=10 | 17..=19 => DelayShape::Correlated,
            3 | 11..=13 | 20..=22 => DelayShape::Uncorrelated,
            _ => DelayShape::AnyRandom,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StrategyKind {
    Zero,
    Previous,
    Estimate,
}

fn strategy_kind(s: &CompensationStrategy) -> StrategyKind {
    match s {
        CompensationStrategy::Zero => StrategyKind::Zero,
        CompensationStrategy::Previous => StrategyKind::Previous,
        CompensationStrategy::Estimate { .. } => StrategyKind::Estimate,
    }
}

fn strategy_kind_name(k: StrategyKind) -> &'static str {
    match k {
        StrategyKind::Zero => "zero",
        StrategyKind::Previous => "previous",
        StrategyKind::Estimate => "estimate",
    }
}

/// The strategy a case's description fixes for its lossy link.
fn required_strategy(case: CaseId) -> Option<StrategyKind> {
    match case.number()? {
        5 | 8 | 11 | 14 | 17 | 20 => Some(StrategyKind::Zero),
        6 | 9 | 12 | 15 | 18 | 21 => Some(StrategyKind::Previous),
        7 | 10 | 13 | 16 | 19 | 22 => Some(StrategyKind::Estimate),
        _ => None,
    }
}

/// One fully parameterized loop configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub case_id: CaseId,
    pub plant: ContinuousPlant,
    pub h: f64,
    pub delay: DelayModel,
    pub loss: LossModel,
    pub strategy_sc: CompensationStrategy,
    pub strategy_ca: CompensationStrategy,
    pub gain: GainPolicy,
    pub x0: Vec<f64>,
    pub assumed_tau_ca: f64,
}

impl ScenarioSpec {
    pub fn family(&self) -> ModelFamily {
        match self.case_id {
            CaseId::ZeroA => ModelFamily::DelayFree,
            CaseId::ZeroB => ModelFamily::ShortDelay,
            CaseId::Numbered(4) => ModelFamily::LongDelay,
            CaseId::Numbered(k) if (1..=3).contains(&k) => ModelFamily::ShortDelay,
            CaseId::Numbered(_) => ModelFamily::Compensated,
        }
    }

    /// Delay the gain schedule is indexed by: the true round trip when the
    /// actuator-side delay is deducible from the sensor-side one, otherwise
    /// the measured sensor delay plus the configured assumption.
    pub fn gain_tau(&self, tau_sc: f64, tau_k: f64) -> f64 {
        match self.delay {
            DelayModel::Uncorrelated { .. } => tau_sc + self.assumed_tau_ca,
            _ => tau_k,
        }
    }

    /// Largest delay the gain policy must serve.
    pub fn max_gain_tau(&self) -> f64 {
        match self.delay {
            DelayModel::Uncorrelated { .. } => self.delay.max_tau_sc() + self.assumed_tau_ca,
            _ => self.delay.max_tau_k(),
        }
    }
}

/// Optional replacements applied on top of a case's defaults. Structural
/// conflicts (wrong delay shape, losses on a lossless link) are rejected.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub delay: Option<DelayModel>,
    pub loss: Option<LossModel>,
    pub strategy_sc: Option<CompensationStrategy>,
    pub strategy_ca: Option<CompensationStrategy>,
    pub gain: Option<GainPolicy>,
    pub x0: Option<Vec<f64>>,
    pub assumed_tau_ca: Option<f64>,
}

/// Demonstration plant used by the catalog defaults: a double integrator
/// with full state output. Every discretization quantity has a closed form.
pub fn default_plant() -> ContinuousPlant {
    ContinuousPlant::new(
        Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).expect("static shape"),
        Matrix::from_rows(&[vec![0.0], vec![1.0]]).expect("static shape"),
        Matrix::identity(2),
        None,
    )
    .expect("static shape")
}

const DEFAULT_LOSS_P: f64 = 0.1;

/// Build the named case over the given plant, apply overrides, and validate.
pub fn scenario_from_case(
    case_id: CaseId,
    plant: ContinuousPlant,
    h: f64,
    overrides: Overrides,
) -> Result<ScenarioSpec> {
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::Domain(format!("sampling period must be positive, got {h}")));
    }
    let link_dist = Dist::uniform(0.0, h / 4.0)?;
    let delay = match delay_shape(case_id) {
        DelayShape::NoDelay => DelayModel::constant(0.0, 0.0)?,
        DelayShape::ConstantShort => DelayModel::constant(h / 8.0, h / 8.0)?,
        DelayShape::ConstantLong => DelayModel::constant(1.15 * h, 1.15 * h)?,
        DelayShape::Symmetric => DelayModel::Symmetric { dist: link_dist },
        DelayShape::Correlated => DelayModel::Correlated {
            dist: link_dist,
            ratio: Ratio::new(2, 1)?,
        },
        DelayShape::Uncorrelated | DelayShape::AnyRandom => DelayModel::Uncorrelated {
            dist_sc: link_dist.clone(),
            dist_ca: link_dist,
        },
    };
    let loss = match loss_side(case_id) {
        LossSide::None => LossModel::lossless(),
        LossSide::Sensor => LossModel::new(DEFAULT_LOSS_P, 0.0)?,
        LossSide::Actuator => LossModel::new(0.0, DEFAULT_LOSS_P)?,
        LossSide::Both => LossModel::new(DEFAULT_LOSS_P, DEFAULT_LOSS_P)?,
    };
    let default_strategy = |kind: Option<StrategyKind>| -> Result<CompensationStrategy> {
        Ok(match kind {
            Some(StrategyKind::Zero) | None => CompensationStrategy::Zero,
            Some(StrategyKind::Previous) => CompensationStrategy::Previous,
            Some(StrategyKind::Estimate) => CompensationStrategy::estimate(0.5, 0.5)?,
        })
    };
    let (strategy_sc, strategy_ca) = match loss_side(case_id) {
        LossSide::Sensor => (
            default_strategy(required_strategy(case_id))?,
            CompensationStrategy::Zero,
        ),
        LossSide::Actuator => (
            CompensationStrategy::Zero,
            default_strategy(required_strategy(case_id))?,
        ),
        LossSide::Both => (CompensationStrategy::Previous, CompensationStrategy::Previous),
        LossSide::None => (CompensationStrategy::Zero, CompensationStrategy::Zero),
    };
    let n = plant.n();
    let m = plant.m();
    let mut x0 = vec![0.0; n];
    x0[0] = 1.0;
    let delay = overrides.delay.unwrap_or(delay);
    let assumed_tau_ca = overrides.assumed_tau_ca.unwrap_or_else(|| delay.mean_tau_ca());
    let spec = ScenarioSpec {
        case_id,
        plant,
        h,
        loss: overrides.loss.unwrap_or(loss),
        strategy_sc: overrides.strategy_sc.unwrap_or(strategy_sc),
        strategy_ca: overrides.strategy_ca.unwrap_or(strategy_ca),
        gain: overrides.gain.unwrap_or(GainPolicy::DesignedLqr {
            q: Matrix::identity(n),
            r: Matrix::identity(m),
        }),
        x0: overrides.x0.unwrap_or(x0),
        assumed_tau_ca,
        delay,
    };
    let violations = validate(&spec);
    if violations.is_empty() {
        Ok(spec)
    } else {
        Err(Error::Validation(violations))
    }
}

/// Check every case constraint and dimension; violations are data, an empty
/// list means the spec is runnable.
pub fn validate(spec: &ScenarioSpec) -> Vec<Violation> {
    let mut v = Vec::new();
    let n = spec.plant.n();
    if spec.h <= 0.0 || !spec.h.is_finite() {
        v.push(Violation::new("h", "sampling period must be positive"));
        return v;
    }
    if spec.x0.len() != n {
        v.push(Violation::new(
            "x0",
            format!("needs {n} entries, got {}", spec.x0.len()),
        ));
    }
    if spec.x0.iter().any(|e| !e.is_finite()) {
        v.push(Violation::new("x0", "entries must be finite"));
    }
    if !spec.assumed_tau_ca.is_finite() || spec.assumed_tau_ca < 0.0 {
        v.push(Violation::new(
            "assumed_tau_ca",
            "must be finite and non-negative",
        ));
    }
    if let Err(e) = spec.delay.validate() {
        v.push(Violation::new("delay", e.to_string()));
        return v;
    }
    for (field, s) in [("strategy_sc", &spec.strategy_sc), ("strategy_ca", &spec.strategy_ca)] {
        if let CompensationStrategy::Estimate { alpha, beta } = s {
            if !(0.0..=1.0).contains(alpha) || !(0.0..=1.0).contains(beta) {
                v.push(Violation::new(field, "estimate weights must lie in [0, 1]"));
            }
        }
    }
    match loss_side(spec.case_id) {
        LossSide::None => {
            if spec.loss.p_sc() != 0.0 {
                v.push(Violation::new("loss.p_sc", "cases 0-4 are loss-free"));
            }
            if spec.loss.p_ca() != 0.0 {
                v.push(Violation::new("loss.p_ca", "cases 0-4 are loss-free"));
            }
        }
        LossSide::Sensor => {
            if spec.loss.p_ca() != 0.0 {
                v.push(Violation::new(
                    "loss.p_ca",
                    "cases 5-13 require lossless CA link",
                ));
            }
        }
        LossSide::Actuator => {
            if spec.loss.p_sc() != 0.0 {
                v.push(Violation::new(
                    "loss.p_sc",
                    "cases 14-22 require lossless SC link",
                ));
            }
        }
        LossSide::Both => {}
    }
    let shape = delay_shape(spec.case_id);
    let shape_ok = match (shape, &spec.delay) {
        (DelayShape::NoDelay, DelayModel::Constant { tau_sc, tau_ca }) => {
            *tau_sc == 0.0 && *tau_ca == 0.0
        }
        (DelayShape::ConstantShort, DelayModel::Constant { .. }) => true,
        (DelayShape::ConstantLong, DelayModel::Constant { .. }) => true,
        (DelayShape::Symmetric, DelayModel::Symmetric { .. }) => true,
        (DelayShape::Correlated, DelayModel::Correlated { .. }) => true,
        (DelayShape::Uncorrelated, DelayModel::Uncorrelated { .. }) => true,
        (DelayShape::AnyRandom, m) => m.is_random(),
        _ => false,
    };
    if !shape_ok {
        let want = match shape {
            DelayShape::NoDelay => "a zero constant delay",
            DelayShape::ConstantShort | DelayShape::ConstantLong => "a constant delay",
            DelayShape::Symmetric => "a symmetric delay",
            DelayShape::Correlated => "a correlated delay",
            DelayShape::Uncorrelated => "an uncorrelated delay",
            DelayShape::AnyRandom => "a random delay",
        };
        v.push(Violation::new(
            "delay",
            format!("case {} requires {want}", spec.case_id),
        ));
    } else if shape == DelayShape::ConstantLong {
        if spec.delay.max_tau_k() <= spec.h {
            v.push(Violation::new(
                "delay",
                "case 4 requires a delay longer than one sampling interval",
            ));
        }
    } else if spec.delay.max_tau_k() > spec.h {
        v.push(Violation::new(
            "delay",
            "short-delay cases require tau_k <= h support",
        ));
    }
    match spec.gain.resolve(&spec.plant, spec.h) {
        Err(e) => v.push(Violation::new("gain", e.to_string())),
        Ok(resolved) => {
            if let Some(coverage) = resolved.coverage() {
                let needed = spec.max_gain_tau();
                if coverage < needed {
                    v.push(Violation::new(
                        "gain",
                        format!("schedule covers delays up to {coverage}, but they can reach {needed}"),
                    ));
                }
            }
        }
    }
    if let Some(required) = required_strategy(spec.case_id) {
        let (field, actual) = match loss_side(spec.case_id) {
            LossSide::Sensor => ("strategy_sc", strategy_kind(&spec.strategy_sc)),
            _ => ("strategy_ca", strategy_kind(&spec.strategy_ca)),
        };
        if actual != required {
            v.push(Violation::new(
                field,
                format!(
                    "case {} requires the {} strategy on its lossy link",
                    spec.case_id,
                    strategy_kind_name(required)
                ),
            ));
        }
    }
    v
}

/// One catalog row: the case text and the model equations it runs.
#[derive(Debug, Clone, Copy)]
pub struct CaseInfo {
    pub id: CaseId,
    pub description: &'static str,
    pub equations: &'static str,
    pub remark: &'static str,
}

const TAU_UNKNOWN: &str =
    "controller to actuator delay is not known (not possible to calculate tau_k)";

static CATALOG: [CaseInfo; 25] = [
    CaseInfo {
        id: CaseId::ZeroA,
        description: "no delay",
        equations: "(3)-(7)",
        remark: "",
    },
    CaseInfo {
        id: CaseId::ZeroB,
        description: "constant delay",
        equations: "(8)-(13)",
        remark: "",
    },
    CaseInfo {
        id: CaseId::Numbered(1),
        description: "symmetric delays",
        equations: "(17)-(22)",
        remark: "",
    },
    CaseInfo {
        id: CaseId::Numbered(2),
        description: "correlated delays",
        equations: "(17)-(22)",
        remark: "",
    },
    CaseInfo {
        id: CaseId::Numbered(3),
        description: "unsymmetrical and uncorrelated delays",
        equations: "(17)-(22)",
        remark: TAU_UNKNOWN,
    },
    CaseInfo {
        id: CaseId::Numbered(4),
        description: "state space model",
        equations: "(28)-(30)",
        remark: "",
    },
    CaseInfo {
        id: CaseId::Numbered(5),
        description: "sensor to controller packet loss and symmetric delays with zero input strategy",
        equations: "(31)-(32)",
        remark: "",
    },
    CaseInfo {
        id: CaseId::Numbered(6),
        description: "sensor to controller packet loss and symmetric delays with previous input strategy",
        equations: "(33)-(38)",
        remark: "",
    },
    CaseInfo {
        id: CaseId::Numbered(7),
        description: "sensor to controller packet loss and symmetric delays with linear combination strategy",
        equations: "(39)-(44)",
        remark: "",
    },
    CaseInfo {
        id: CaseId::Numbered(8),
        description: "sensor to controller packet loss and correlated delays with zero input strategy",
        equations: "(31)-(32)",
        remark: "",
    },
    CaseInfo {
        id: CaseId::Numbered(9),
        description: "sensor to controller packet loss and correlated delays with previous input strategy",
        equations: "(33)-(38)",
        remark: "",
    },
    CaseInfo {
        id: CaseId::Numbered(10),
        description: "sensor to controller packet loss and correlated delays with linear combination strategy",
        equations: "(39)-(44)",
        remark: "",
    },
    CaseInfo {
        id: CaseId::Numbered(11),
        description: "sensor to controller packet loss and unsymmetrical and uncorrelated delays with zero input strategy",
        equations: "(31)-(32)",
        remark: TAU_UNKNOWN,
    },
    CaseInfo {
        id: CaseId::Numbered(12),
        description: "sensor to controller packet loss and unsymmetrical and uncorrelated delays with previous input strategy",
        equations: "(33)-(38)",
        remark: TAU_UNKNOWN,
    },
    CaseInfo {
        id: CaseId::Numbered(13),
        description: "sensor to controller packet loss and unsymmetrical and uncorrelated delays with linear combination strategy",
        equations: "(39)-(44)",
        remark: TAU_UNKNOWN,
    },
    CaseInfo {
        id: CaseId::Numbered(14),
        description: "controller to actuator packet loss and symmetric delays with zero input strategy",
        equations: "(31)-(32)",
        remark: "",
    },
    CaseInfo {
        id: CaseId::Numbered(15),
        description: "controller to actuator packet loss and symmetric delays with previous input strategy",
        equations: "(45)-(50)",
        remark: "",
    },
    CaseInfo {
        id: CaseId::Numbered(16),
        description: "controller to actuator packet loss and symmetric delays with linear combination strategy",
        equations: "(51)-(55)",
        remark: "",
    },
    CaseInfo {
        id: CaseId::Numbered(17),
        description: "controller to actuator packet loss and correlated delays with zero input strategy",
        equations: "(31)-(32)",
        remark: "",
    },
    CaseInfo {
        id: CaseId::Numbered(18),
        description: "controller to actuator packet loss and correlated delays with previous input strategy",
        equations: "(45)-(50)",
        remark: "",
    },
    CaseInfo {
        id: CaseId::Numbered(19),
        description: "controller to actuator packet loss and correlated delays with linear combination strategy",
        equations: "(51)-(55)",
        remark: "",
    },
    CaseInfo {
        id: CaseId::Numbered(20),
        description: "controller to actuator packet loss and unsymmetrical and uncorrelated delays with zero input strategy",
        equations: "(31)-(32)",
        remark: TAU_UNKNOWN,
    },
    CaseInfo {
        id: CaseId::Numbered(21),
        description: "controller to actuator packet loss and unsymmetrical and uncorrelated delays with previous input strategy",
        equations: "(45)-(50)",
        remark: TAU_UNKNOWN,
    },
    CaseInfo {
        id: CaseId::Numbered(22),
        description: "controller to actuator packet loss and unsymmetrical and uncorrelated delays with linear combination strategy",
        equations: "(51)-(55)",
        remark: TAU_UNKNOWN,
    },
    CaseInfo {
        id: CaseId::Numbered(23),
        description: "sensor to controller packet loss and actuator to controller packet loss",
        equations: "(31)-(55)",
        remark: "non-deterministic",
    },
];

pub fn catalog() -> &'static [CaseInfo] {
    &CATALOG
}

pub fn case_info(case: CaseId) -> &'static CaseInfo {
    CATALOG
        .iter()
        .find(|info| info.id == case)
        .expect("catalog covers every case")
}

// ---- file form -------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    case_id: String,
    h: f64,
    x0: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    assumed_tau_ca: Option<f64>,
    plant: PlantFile,
    delay: DelayFile,
    loss: LossFile,
    strategy_sc: StrategyFile,
    strategy_ca: StrategyFile,
    gain: GainFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlantFile {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    d: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DelayFile {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    tau_sc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tau_ca: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ratio: Option<RatioFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dist: Option<DistFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dist_sc: Option<DistFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dist_ca: Option<DistFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DistFile {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    lo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RatioFile {
    num: u32,
    den: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LossFile {
    p_sc: f64,
    p_ca: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StrategyFile {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GainFile {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    l: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    q: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    r: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    buckets: Option<Vec<BucketFile>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BucketFile {
    lo: f64,
    hi: f64,
    l: Vec<Vec<f64>>,
}

fn file_err(field: &str, message: impl fmt::Display) -> Error {
    Error::ScenarioFile(format!("{field}: {message}"))
}

fn matrix_from_nested(field: &str, rows: &[Vec<f64>]) -> Result<Matrix> {
    Matrix::from_rows(rows).map_err(|e| file_err(field, e))
}

fn require<T>(field: &str, value: Option<T>, kind: &str) -> Result<T> {
    value.ok_or_else(|| file_err(field, format!("required by the '{kind}' kind")))
}

fn reject_unused(field: &str, present: bool, kind: &str) -> Result<()> {
    if present {
        Err(file_err(field, format!("not a field of the '{kind}' kind")))
    } else {
        Ok(())
    }
}

fn dist_from_file(field: &str, file: &DistFile) -> Result<Dist> {
    match file.kind.as_str() {
        "uniform" => {
            reject_unused(&format!("{field}.values"), file.values.is_some(), "uniform")?;
            let lo = require(&format!("{field}.lo"), file.lo, "uniform")?;
            let hi = require(&format!("{field}.hi"), file.hi, "uniform")?;
            Dist::uniform(lo, hi).map_err(|e| file_err(field, e))
        }
        "discrete_uniform" => {
            reject_unused(&format!("{field}.lo"), file.lo.is_some(), "discrete_uniform")?;
            reject_unused(&format!("{field}.hi"), file.hi.is_some(), "discrete_uniform")?;
            let values = require(&format!("{field}.values"), file.values.clone(), "discrete_uniform")?;
            Dist::discrete(values).map_err(|e| file_err(field, e))
        }
        other => Err(file_err(
            &format!("{field}.kind"),
            format!("unknown kind '{other}' (expected uniform or discrete_uniform)"),
        )),
    }
}

fn dist_to_file(dist: &Dist) -> DistFile {
    match dist {
        Dist::Uniform { lo, hi } => DistFile {
            kind: "uniform".into(),
            lo: Some(*lo),
            hi: Some(*hi),
            values: None,
        },
        Dist::DiscreteUniform { values } => DistFile {
            kind: "discrete_uniform".into(),
            lo: None,
            hi: None,
            values: Some(values.clone()),
        },
    }
}

fn delay_from_file(file: &DelayFile) -> Result<DelayModel> {
    let kind = file.kind.as_str();
    match kind {
        "constant" => {
            for (name, present) in [
                ("delay.dist", file.dist.is_some()),
                ("delay.ratio", file.ratio.is_some()),
                ("delay.dist_sc", file.dist_sc.is_some()),
                ("delay.dist_ca", file.dist_ca.is_some()),
            ] {
                reject_unused(name, present, kind)?;
            }
            let tau_sc = require("delay.tau_sc", file.tau_sc, kind)?;
            let tau_ca = require("delay.tau_ca", file.tau_ca, kind)?;
            DelayModel::constant(tau_sc, tau_ca).map_err(|e| file_err("delay", e))
        }
        "symmetric" | "correlated" => {
            for (name, present) in [
                ("delay.tau_sc", file.tau_sc.is_some()),
                ("delay.tau_ca", file.tau_ca.is_some()),
                ("delay.dist_sc", file.dist_sc.is_some()),
                ("delay.dist_ca", file.dist_ca.is_some()),
                ("delay.ratio", kind == "symmetric" && file.ratio.is_some()),
            ] {
                reject_unused(name, present, kind)?;
            }
            let dist = dist_from_file(
                "delay.dist",
                &require("delay.dist", file.dist.clone(), kind)?,
            )?;
            if kind == "symmetric" {
                Ok(DelayModel::Symmetric { dist })
            } else {
                let ratio = require("delay.ratio", file.ratio.clone(), kind)?;
                let ratio =
                    Ratio::new(ratio.num, ratio.den).map_err(|e| file_err("delay.ratio", e))?;
                Ok(DelayModel::Correlated { dist, ratio })
            }
        }
        "uncorrelated" => {
            for (name, present) in [
                ("delay.tau_sc", file.tau_sc.is_some()),
                ("delay.tau_ca", file.tau_ca.is_some()),
                ("delay.dist", file.dist.is_some()),
                ("delay.ratio", file.ratio.is_some()),
            ] {
                reject_unused(name, present, kind)?;
            }
            let dist_sc = dist_from_file(
                "delay.dist_sc",
                &require("delay.dist_sc", file.dist_sc.clone(), kind)?,
            )?;
            let dist_ca = dist_from_file(
                "delay.dist_ca",
                &require("delay.dist_ca", file.dist_ca.clone(), kind)?,
            )?;
            Ok(DelayModel::Uncorrelated { dist_sc, dist_ca })
        }
        other => Err(file_err(
            "delay.kind",
            format!("unknown kind '{other}' (expected constant, symmetric, correlated, or uncorrelated)"),
        )),
    }
}

fn delay_to_file(model: &DelayModel) -> DelayFile {
    let empty = DelayFile {
        kind: String::new(),
        tau_sc: None,
        tau_ca: None,
        ratio: None,
        dist: None,
        dist_sc: None,
        dist_ca: None,
    };
    match model {
        DelayModel::Constant { tau_sc, tau_ca } => DelayFile {
            kind: "constant".into(),
            tau_sc: Some(*tau_sc),
            tau_ca: Some(*tau_ca),
            ..empty
        },
        DelayModel::Symmetric { dist } => DelayFile {
            kind: "symmetric".into(),
            dist: Some(dist_to_file(dist)),
            ..empty
        },
        DelayModel::Correlated { dist, ratio } => DelayFile {
            kind: "correlated".into(),
            dist: Some(dist_to_file(dist)),
            ratio: Some(RatioFile {
                num: ratio.num(),
                den: ratio.den(),
            }),
            ..empty
        },
        DelayModel::Uncorrelated { dist_sc, dist_ca } => DelayFile {
            kind: "uncorrelated".into(),
            dist_sc: Some(dist_to_file(dist_sc)),
            dist_ca: Some(dist_to_file(dist_ca)),
            ..empty
        },
    }
}

fn strategy_from_file(field: &str, file: &StrategyFile) -> Result<CompensationStrategy> {
    match file.kind.as_str() {
        "zero" | "previous" => {
            reject_unused(&format!("{field}.alpha"), file.alpha.is_some(), &file.kind)?;
            reject_unused(&format!("{field}.beta"), file.beta.is_some(), &file.kind)?;
            Ok(if file.kind == "zero" {
                CompensationStrategy::Zero
            } else {
                CompensationStrategy::Previous
            })
        }
        "estimate" => {
            let alpha = require(&format!("{field}.alpha"), file.alpha, "estimate")?;
            let beta = require(&format!("{field}.beta"), file.beta, "estimate")?;
            CompensationStrategy::estimate(alpha, beta).map_err(|e| file_err(field, e))
        }
        other => Err(file_err(
            &format!("{field}.kind"),
            format!("unknown kind '{other}' (expected zero, previous, or estimate)"),
        )),
    }
}

fn strategy_to_file(strategy: &CompensationStrategy) -> StrategyFile {
    match strategy {
        CompensationStrategy::Zero => StrategyFile {
            kind: "zero".into(),
            alpha: None,
            beta: None,
        },
        CompensationStrategy::Previous => StrategyFile {
            kind: "previous".into(),
            alpha: None,
            beta: None,
        },
        CompensationStrategy::Estimate { alpha, beta } => StrategyFile {
            kind: "estimate".into(),
            alpha: Some(*alpha),
            beta: Some(*beta),
        },
    }
}

fn gain_from_file(file: &GainFile) -> Result<GainPolicy> {
    match file.kind.as_str() {
        "fixed" => {
            for (name, present) in [
                ("gain.q", file.q.is_some()),
                ("gain.r", file.r.is_some()),
                ("gain.buckets", file.buckets.is_some()),
            ] {
                reject_unused(name, present, "fixed")?;
            }
            let l = require("gain.l", file.l.clone(), "fixed")?;
            Ok(GainPolicy::Fixed(matrix_from_nested("gain.l", &l)?))
        }
        "designed_lqr" => {
            for (name, present) in [
                ("gain.l", file.l.is_some()),
                ("gain.buckets", file.buckets.is_some()),
            ] {
                reject_unused(name, present, "designed_lqr")?;
            }
            let q = require("gain.q", file.q.clone(), "designed_lqr")?;
            let r = require("gain.r", file.r.clone(), "designed_lqr")?;
            Ok(GainPolicy::DesignedLqr {
                q: matrix_from_nested("gain.q", &q)?,
                r: matrix_from_nested("gain.r", &r)?,
            })
        }
        "scheduled" => {
            for (name, present) in [
                ("gain.l", file.l.is_some()),
                ("gain.q", file.q.is_some()),
                ("gain.r", file.r.is_some()),
            ] {
                reject_unused(name, present, "scheduled")?;
            }
            let buckets = require("gain.buckets", file.buckets.clone(), "scheduled")?;
            let buckets = buckets
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    Ok(GainBucket {
                        lo: b.lo,
                        hi: b.hi,
                        l: matrix_from_nested(&format!("gain.buckets[{i}].l"), &b.l)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(GainPolicy::Scheduled(buckets))
        }
        other => Err(file_err(
            "gain.kind",
            format!("unknown kind '{other}' (expected fixed, scheduled, or designed_lqr)"),
        )),
    }
}

fn gain_to_file(gain: &GainPolicy) -> GainFile {
    let empty = GainFile {
        kind: String::new(),
        l: None,
        q: None,
        r: None,
        buckets: None,
    };
    match gain {
        GainPolicy::Fixed(l) => GainFile {
            kind: "fixed".into(),
            l: Some(l.to_nested()),
            ..empty
        },
        GainPolicy::DesignedLqr { q, r } => GainFile {
            kind: "designed_lqr".into(),
            q: Some(q.to_nested()),
            r: Some(r.to_nested()),
            ..empty
        },
        GainPolicy::Scheduled(buckets) => GainFile {
            kind: "scheduled".into(),
            buckets: Some(
                buckets
                    .iter()
                    .map(|b| BucketFile {
                        lo: b.lo,
                        hi: b.hi,
                        l: b.l.to_nested(),
                    })
                    .collect(),
            ),
            ..empty
        },
    }
}

fn spec_from_file(file: &ScenarioFile) -> Result<ScenarioSpec> {
    let case_id = CaseId::parse(&file.case_id).map_err(|e| file_err("case_id", e))?;
    let plant = ContinuousPlant::new(
        matrix_from_nested("plant.a", &file.plant.a)?,
        matrix_from_nested("plant.b", &file.plant.b)?,
        matrix_from_nested("plant.c", &file.plant.c)?,
        match &file.plant.d {
            Some(d) => Some(matrix_from_nested("plant.d", d)?),
            None => None,
        },
    )
    .map_err(|e| file_err("plant", e))?;
    let delay = delay_from_file(&file.delay)?;
    let loss =
        LossModel::new(file.loss.p_sc, file.loss.p_ca).map_err(|e| file_err("loss", e))?;
    let assumed_tau_ca = file.assumed_tau_ca.unwrap_or_else(|| delay.mean_tau_ca());
    Ok(ScenarioSpec {
        case_id,
        plant,
        h: file.h,
        strategy_sc: strategy_from_file("strategy_sc", &file.strategy_sc)?,
        strategy_ca: strategy_from_file("strategy_ca", &file.strategy_ca)?,
        gain: gain_from_file(&file.gain)?,
        x0: file.x0.clone(),
        assumed_tau_ca,
        delay,
        loss,
    })
}

fn spec_to_file(spec: &ScenarioSpec) -> ScenarioFile {
    ScenarioFile {
        case_id: spec.case_id.to_string(),
        h: spec.h,
        x0: spec.x0.clone(),
        assumed_tau_ca: Some(spec.assumed_tau_ca),
        plant: PlantFile {
            a: spec.plant.a.to_nested(),
            b: spec.plant.b.to_nested(),
            c: spec.plant.c.to_nested(),
            d: spec.plant.d.as_ref().map(Matrix::to_nested),
        },
        delay: delay_to_file(&spec.delay),
        loss: LossFile {
            p_sc: spec.loss.p_sc(),
            p_ca: spec.loss.p_ca(),
        },
        strategy_sc: strategy_to_file(&spec.strategy_sc),
        strategy_ca: strategy_to_file(&spec.strategy_ca),
        gain: gain_to_file(&spec.gain),
    }
}

/// Parse a scenario from TOML text. Shape problems (unknown keys, missing
/// fields, malformed numbers) are reported with their field path; run
/// `validate` afterwards for the case-level constraints.
pub fn from_toml(text: &str) -> Result<ScenarioSpec> {
    let file: ScenarioFile =
        toml::from_str(text).map_err(|e| Error::ScenarioFile(e.to_string()))?;
    spec_from_file(&file)
}

/// Render a scenario as TOML text; `from_toml` restores it field for field.
pub fn to_toml(spec: &ScenarioSpec) -> Result<String> {
    toml::to_string_pretty(&spec_to_file(spec)).map_err(|e| Error::ScenarioFile(e.to_string()))
}
