//! Security rule evaluation for active products.
//!
//! Four rule families classify a product into [`SecurityLevel`]s:
//!
//! - static rules compare a sensed value against a min/max band with a margin,
//! - dynamic rules watch the static level over time (persistent bad state,
//!   repeated good-to-bad switches),
//! - community rules compare the distance to a chemically incompatible
//!   neighbour against a critical distance,
//! - the global rule folds the others into the worst level.
//!
//! Everything here is pure. The functions are generic over [`Scalar`] so the
//! same engine runs on `f32` firmware-style inputs and `f64` simulator inputs.

mod matrix;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::num::Scalar;

pub use matrix::{Compatibility, CompatibilityMatrix};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuleError {
    #[error("invalid rule configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown chemical symbol `{0}`")]
    UnknownSymbol(String),
    #[error("cannot combine an empty list of levels")]
    EmptyInput,
    #[error("distance must be a non-negative number, got {0}")]
    InvalidDistance(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Good / bad / danger. Ordered by escalation: `G < B < D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum SecurityLevel {
    #[default]
    G,
    B,
    D,
}

impl SecurityLevel {
    pub const ALL: [SecurityLevel; 3] = [SecurityLevel::G, SecurityLevel::B, SecurityLevel::D];

    pub fn as_char(self) -> char {
        match self {
            SecurityLevel::G => 'G',
            SecurityLevel::B => 'B',
            SecurityLevel::D => 'D',
        }
    }

    pub fn to_u8(self) -> u8 {
        self as u8
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ALL.get(v as usize).copied()
    }
}

impl fmt::Display for SecurityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl FromStr for SecurityLevel {
    type Err = RuleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "G" | "g" => Ok(SecurityLevel::G),
            "B" | "b" => Ok(SecurityLevel::B),
            "D" | "d" => Ok(SecurityLevel::D),
            other => Err(RuleError::InvalidConfig(format!("unknown level `{other}`"))),
        }
    }
}

/// Temperature band with safety margin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticRuleConfig<T> {
    pub v_min: T,
    pub v_max: T,
    pub delta_v: T,
}

impl<T: Scalar> StaticRuleConfig<T> {
    pub fn new(v_min: T, v_max: T, delta_v: T) -> Result<Self, RuleError> {
        let cfg = Self { v_min, v_max, delta_v };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The good band `[v_min + delta_v, v_max - delta_v]` must be non-empty.
    pub fn validate(&self) -> Result<(), RuleError> {
        if !(self.v_min.is_finite() && self.v_max.is_finite() && self.delta_v.is_finite()) {
            return Err(RuleError::InvalidConfig("static thresholds must be finite".into()));
        }
        if self.delta_v < T::zero() {
            return Err(RuleError::InvalidConfig(format!(
                "delta_v must be >= 0, got {}",
                self.delta_v
            )));
        }
        if self.v_min + self.delta_v > self.v_max - self.delta_v {
            return Err(RuleError::InvalidConfig(format!(
                "empty good band: v_min + delta_v ({}) > v_max - delta_v ({})",
                self.v_min + self.delta_v,
                self.v_max - self.delta_v
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicRuleConfig<T> {
    /// Critical duration of an uninterrupted bad episode.
    pub t_cr: T,
    /// Number of good-to-bad switches tolerated before danger.
    pub n_c: u32,
}

impl<T: Scalar> DynamicRuleConfig<T> {
    pub fn new(t_cr: T, n_c: u32) -> Result<Self, RuleError> {
        let cfg = Self { t_cr, n_c };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RuleError> {
        if !(self.t_cr.is_finite() && self.t_cr > T::zero()) {
            return Err(RuleError::InvalidConfig(format!("t_cr must be > 0, got {}", self.t_cr)));
        }
        if self.n_c == 0 {
            return Err(RuleError::InvalidConfig("n_c must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-product memory of the dynamic rule.
///
/// `bad_since` is `Some` exactly while `last_level` is `B`. Once the rule
/// reports `D` it stays latched until [`DynamicRuleState::reset`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DynamicRuleState<T> {
    pub occur_count: u32,
    pub bad_since: Option<T>,
    pub last_level: SecurityLevel,
    pub latched: bool,
}

impl<T: Scalar> DynamicRuleState<T> {
    pub fn new() -> Self {
        Self { occur_count: 0, bad_since: None, last_level: SecurityLevel::G, latched: false }
    }

    /// Operator reset: clears the latch and the switch counter.
    pub fn reset(&mut self) {
        *self = Self::new();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommunityRuleConfig<T> {
    pub d_min: T,
    pub delta_d: T,
    pub matrix: CompatibilityMatrix,
}

impl<T: Scalar> CommunityRuleConfig<T> {
    pub fn new(d_min: T, delta_d: T, matrix: CompatibilityMatrix) -> Result<Self, RuleError> {
        let cfg = Self { d_min, delta_d, matrix };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RuleError> {
        if !(self.d_min.is_finite() && self.d_min > T::zero()) {
            return Err(RuleError::InvalidConfig(format!("d_min must be > 0, got {}", self.d_min)));
        }
        if !(self.delta_d.is_finite() && self.delta_d >= T::zero()) {
            return Err(RuleError::InvalidConfig(format!(
                "delta_d must be >= 0, got {}",
                self.delta_d
            )));
        }
        Ok(())
    }
}

/// Classify a sensed value against the static band.
///
/// `G` owns the closed interval `[v_min + dv, v_max - dv]`, `B` the half-open
/// remainders inside `[v_min, v_max]`, and `D` everything outside (NaN included).
pub fn eval_static<T: Scalar>(value: T, cfg: &StaticRuleConfig<T>) -> Result<SecurityLevel, RuleError> {
    cfg.validate()?;
    let lo_good = cfg.v_min + cfg.delta_v;
    let hi_good = cfg.v_max - cfg.delta_v;
    Ok(if value >= lo_good && value <= hi_good {
        SecurityLevel::G
    } else if value >= cfg.v_min && value <= cfg.v_max {
        SecurityLevel::B
    } else {
        SecurityLevel::D
    })
}

/// Advance the dynamic rule by one static-level sample taken at `now`.
///
/// Returns `D` when the current bad episode has lasted at least `t_cr`, when
/// the good-to-bad switch count reached `n_c`, or when a previous `D` is still
/// latched. Otherwise the static level passes through.
pub fn update_dynamic<T: Scalar>(
    state: &DynamicRuleState<T>,
    s_sr: SecurityLevel,
    now: T,
    cfg: &DynamicRuleConfig<T>,
) -> (DynamicRuleState<T>, SecurityLevel) {
    let mut next = *state;
    if state.last_level == SecurityLevel::G && s_sr == SecurityLevel::B {
        next.occur_count = next.occur_count.saturating_add(1);
    }
    next.bad_since = match (s_sr, state.bad_since) {
        (SecurityLevel::B, Some(t)) => Some(t),
        (SecurityLevel::B, None) => Some(now),
        _ => None,
    };
    next.last_level = s_sr;

    let persisted = next.bad_since.is_some_and(|t1| now - t1 >= cfg.t_cr);
    let oscillating = next.occur_count >= cfg.n_c;
    if state.latched || persisted || oscillating {
        next.latched = true;
        (next, SecurityLevel::D)
    } else {
        (next, s_sr)
    }
}

/// Community level between two products at `distance` meters.
pub fn eval_community<T: Scalar>(
    symb_i: &str,
    symb_j: &str,
    distance: T,
    cfg: &CommunityRuleConfig<T>,
) -> Result<SecurityLevel, RuleError> {
    cfg.validate()?;
    if !(distance >= T::zero()) {
        return Err(RuleError::InvalidDistance(distance.to_string()));
    }
    match cfg.matrix.lookup(symb_i, symb_j)? {
        Compatibility::Compatible => Ok(SecurityLevel::G),
        Compatibility::Incompatible => Ok(if distance > cfg.d_min + cfg.delta_d {
            SecurityLevel::G
        } else if distance >= cfg.d_min {
            SecurityLevel::B
        } else {
            SecurityLevel::D
        }),
    }
}

/// Worst level of the list.
pub fn combine_global(levels: &[SecurityLevel]) -> Result<SecurityLevel, RuleError> {
    levels.iter().copied().max().ok_or(RuleError::EmptyInput)
}

#[cfg(test)]
mod tests {
    use super::SecurityLevel::{B, D, G};
    use super::*;

    fn static_cfg(v_min: f64, v_max: f64, dv: f64) -> StaticRuleConfig<f64> {
        StaticRuleConfig::new(v_min, v_max, dv).unwrap()
    }

    #[test]
    fn static_examples() {
        assert_eq!(eval_static(10.0, &static_cfg(0.0, 14.0, 2.0)), Ok(G));
        assert_eq!(eval_static(15.0158, &static_cfg(0.0, 14.0, 0.0)), Ok(D));
        assert_eq!(eval_static(13.5, &static_cfg(0.0, 14.0, 1.0)), Ok(B));
    }

    #[test]
    fn static_boundaries() {
        let cfg = static_cfg(0.0, 14.0, 1.0);
        assert_eq!(eval_static(1.0, &cfg), Ok(G));
        assert_eq!(eval_static(13.0, &cfg), Ok(G));
        assert_eq!(eval_static(0.0, &cfg), Ok(B));
        assert_eq!(eval_static(14.0, &cfg), Ok(B));
        assert_eq!(eval_static(-0.001, &cfg), Ok(D));
        assert_eq!(eval_static(f64::NAN, &cfg), Ok(D));
        assert_eq!(eval_static(f64::INFINITY, &cfg), Ok(D));
    }

    #[test]
    fn static_works_in_f32() {
        let cfg = StaticRuleConfig::<f32>::new(0.0, 14.0, 0.0).unwrap();
        assert_eq!(eval_static(14.0f32, &cfg), Ok(G));
        assert_eq!(eval_static(15.0158f32, &cfg), Ok(D));
    }

    #[test]
    fn static_rejects_invalid_config() {
        assert!(StaticRuleConfig::new(0.0, 14.0, -1.0).is_err());
        assert!(StaticRuleConfig::new(0.0, 4.0, 3.0).is_err());
        let bad = StaticRuleConfig { v_min: 10.0, v_max: 0.0, delta_v: 0.0 };
        assert!(matches!(eval_static(5.0, &bad), Err(RuleError::InvalidConfig(_))));
    }

    #[test]
    fn dynamic_fresh_good_stays_good() {
        let cfg = DynamicRuleConfig::new(5.0, 3).unwrap();
        let (st, lvl) = update_dynamic(&DynamicRuleState::new(), G, 0.0, &cfg);
        assert_eq!(lvl, G);
        assert_eq!(st.occur_count, 0);
        assert_eq!(st.bad_since, None);
    }

    #[test]
    fn dynamic_sustained_bad_reaches_danger_at_t_cr() {
        let cfg = DynamicRuleConfig::new(5.0, 100).unwrap();
        let mut st = DynamicRuleState::new();
        for t in 0..5 {
            let (next, lvl) = update_dynamic(&st, B, t as f64, &cfg);
            assert_eq!(lvl, B, "t={t}");
            st = next;
        }
        let (st, lvl) = update_dynamic(&st, B, 5.0, &cfg);
        assert_eq!(lvl, D);
        assert!(st.latched);
        // latched even after recovery
        let (st, lvl) = update_dynamic(&st, G, 6.0, &cfg);
        assert_eq!(lvl, D);
        assert_eq!(st.bad_since, None);
    }

    #[test]
    fn dynamic_oscillation_counts_good_to_bad_edges() {
        let cfg = DynamicRuleConfig::new(1000.0, 3).unwrap();
        let mut st = DynamicRuleState::new();
        let seq = [G, B, G, B, G, B];
        let mut out = Vec::new();
        for (i, s) in seq.iter().enumerate() {
            let (next, lvl) = update_dynamic(&st, *s, i as f64, &cfg);
            st = next;
            out.push(lvl);
        }
        assert_eq!(out, vec![G, B, G, B, G, D]);
        assert_eq!(st.occur_count, 3);
    }

    #[test]
    fn dynamic_danger_samples_break_bad_episode() {
        let cfg = DynamicRuleConfig::new(2.0, 100).unwrap();
        let mut st = DynamicRuleState::new();
        let mut out = Vec::new();
        for (t, s) in [(0.0, B), (1.0, D), (2.0, B), (3.0, B)] {
            let (next, lvl) = update_dynamic(&st, s, t, &cfg);
            st = next;
            out.push(lvl);
        }
        // the D sample passes through without latching
        assert_eq!(out, vec![B, D, B, B]);
        assert_eq!(st.bad_since, Some(2.0));
        assert!(!st.latched);
        // D->B is not a good-to-bad switch
        assert_eq!(st.occur_count, 1);
    }

    #[test]
    fn dynamic_reset_clears_latch() {
        let cfg = DynamicRuleConfig::new(1.0, 1).unwrap();
        let (mut st, lvl) = update_dynamic(&DynamicRuleState::new(), B, 0.0, &cfg);
        assert_eq!(lvl, D);
        st.reset();
        let (_, lvl) = update_dynamic(&st, G, 1.0, &cfg);
        assert_eq!(lvl, G);
    }

    fn community_cfg() -> CommunityRuleConfig<f64> {
        let matrix: CompatibilityMatrix =
            "H2SO4 HF incompatible\nH2SO4 H2O compatible\n".parse().unwrap();
        CommunityRuleConfig::new(5.0, 3.0, matrix).unwrap()
    }

    #[test]
    fn community_examples() {
        let cfg = community_cfg();
        assert_eq!(eval_community("H2SO4", "H2O", 0.5, &cfg), Ok(G));
        assert_eq!(eval_community("H2SO4", "HF", 4.99, &cfg), Ok(D));
        assert_eq!(eval_community("H2SO4", "HF", 8.0, &cfg), Ok(B));
        assert_eq!(eval_community("H2SO4", "HF", 5.0, &cfg), Ok(B));
        assert_eq!(eval_community("HF", "H2SO4", 8.0001, &cfg), Ok(G));
    }

    #[test]
    fn community_errors() {
        let cfg = community_cfg();
        assert_eq!(
            eval_community("H2SO4", "NaOH", 1.0, &cfg),
            Err(RuleError::UnknownSymbol("NaOH".into()))
        );
        assert!(matches!(
            eval_community("H2SO4", "HF", -1.0, &cfg),
            Err(RuleError::InvalidDistance(_))
        ));
        assert!(CommunityRuleConfig::<f64>::new(0.0, 1.0, CompatibilityMatrix::new()).is_err());
    }

    #[test]
    fn global_examples() {
        assert_eq!(combine_global(&[G, G, G]), Ok(G));
        assert_eq!(combine_global(&[G, B, G]), Ok(B));
        assert_eq!(combine_global(&[B, D, G]), Ok(D));
        assert_eq!(combine_global(&[]), Err(RuleError::EmptyInput));
    }

    #[test]
    fn level_order_and_codec() {
        assert!(G < B && B < D);
        for l in SecurityLevel::ALL {
            assert_eq!(SecurityLevel::from_u8(l.to_u8()), Some(l));
            assert_eq!(l.to_string().parse::<SecurityLevel>(), Ok(l));
        }
        assert_eq!(SecurityLevel::from_u8(3), None);
    }
}
