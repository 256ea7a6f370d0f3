//! Binomial subjective-logic opinions.
//!
//! An [`Opinion`] is derived from positive/negative evidence counts with a
//! non-informative prior weight of [`PRIOR_WEIGHT`]. Two opinions held by
//! independent observers are merged with [`fuse_cumulative`], and the
//! projected probability [`trust_score`] is what the intersection manager
//! consumes as a vehicle's trustworthiness.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Non-informative prior weight (the `W` of the evidence-to-opinion mapping).
pub const PRIOR_WEIGHT: f64 = 2.0;

/// Tolerance used when checking `b + d + u = 1`.
pub const TOLERANCE: f64 = 1e-9;

/// Base rate used throughout the trust table.
pub const DEFAULT_BASE_RATE: f64 = 0.5;

/// Accumulated positive (`r`) and negative (`s`) evidence about one agent.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvidenceCounter {
    pub positive: f64,
    pub negative: f64,
}

impl EvidenceCounter {
    pub const EMPTY: EvidenceCounter = EvidenceCounter {
        positive: 0.0,
        negative: 0.0,
    };

    pub fn new(positive: f64, negative: f64) -> Result<Self> {
        let ev = EvidenceCounter { positive, negative };
        ev.validate()?;
        Ok(ev)
    }

    pub fn positive(amount: f64) -> Self {
        EvidenceCounter {
            positive: amount,
            negative: 0.0,
        }
    }

    pub fn negative(amount: f64) -> Self {
        EvidenceCounter {
            positive: 0.0,
            negative: amount,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if ok(self.positive) && ok(self.negative) {
            Ok(())
        } else {
            Err(Error::InvalidEvidence {
                positive: self.positive,
                negative: self.negative,
            })
        }
    }

    pub fn total(&self) -> f64 {
        self.positive + self.negative
    }
}

impl std::ops::Add for EvidenceCounter {
    type Output = EvidenceCounter;

    fn add(self, rhs: EvidenceCounter) -> EvidenceCounter {
        EvidenceCounter {
            positive: self.positive + rhs.positive,
            negative: self.negative + rhs.negative,
        }
    }
}

impl std::ops::AddAssign for EvidenceCounter {
    fn add_assign(&mut self, rhs: EvidenceCounter) {
        self.positive += rhs.positive;
        self.negative += rhs.negative;
    }
}

/// A binomial opinion `(belief, disbelief, uncertainty, base_rate)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Opinion {
    belief: f64,
    disbelief: f64,
    uncertainty: f64,
    base_rate: f64,
}

impl Opinion {
    /// The vacuous opinion: no evidence either way.
    pub fn vacuous(base_rate: f64) -> Self {
        Opinion {
            belief: 0.0,
            disbelief: 0.0,
            uncertainty: 1.0,
            base_rate,
        }
    }

    pub fn new(belief: f64, disbelief: f64, uncertainty: f64, base_rate: f64) -> Result<Self> {
        let components = [belief, disbelief, uncertainty, base_rate];
        if components
            .iter()
            .any(|c| !c.is_finite() || *c < -TOLERANCE || *c > 1.0 + TOLERANCE)
        {
            return Err(Error::InvalidOpinion(format!(
                "components must lie in [0,1], got b={belief} d={disbelief} u={uncertainty} a={base_rate}"
            )));
        }
        let sum = belief + disbelief + uncertainty;
        if (sum - 1.0).abs() > TOLERANCE {
            return Err(Error::InvalidOpinion(format!(
                "belief + disbelief + uncertainty = {sum}, expected 1"
            )));
        }
        Ok(Opinion {
            belief: clamp_unit(belief),
            disbelief: clamp_unit(disbelief),
            uncertainty: clamp_unit(uncertainty),
            base_rate: clamp_unit(base_rate),
        })
    }

    pub fn belief(&self) -> f64 {
        self.belief
    }

    pub fn disbelief(&self) -> f64 {
        self.disbelief
    }

    pub fn uncertainty(&self) -> f64 {
        self.uncertainty
    }

    pub fn base_rate(&self) -> f64 {
        self.base_rate
    }

    pub fn is_dogmatic(&self) -> bool {
        self.uncertainty <= 0.0
    }

    /// Recovers the evidence counts behind a non-dogmatic opinion.
    pub fn to_evidence(&self) -> Result<EvidenceCounter> {
        if self.is_dogmatic() {
            return Err(Error::InvalidOpinion(
                "a dogmatic opinion has no finite evidence representation".into(),
            ));
        }
        EvidenceCounter::new(
            PRIOR_WEIGHT * self.belief / self.uncertainty,
            PRIOR_WEIGHT * self.disbelief / self.uncertainty,
        )
    }
}

fn clamp_unit(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Maps evidence counts to an opinion with prior weight 2.
pub fn opinion_from_evidence(ev: EvidenceCounter, base_rate: f64) -> Result<Opinion> {
    ev.validate()?;
    if !(0.0..=1.0).contains(&base_rate) {
        return Err(Error::InvalidOpinion(format!(
            "base rate {base_rate} outside [0,1]"
        )));
    }
    let denom = ev.positive + ev.negative + PRIOR_WEIGHT;
    Ok(Opinion {
        belief: clamp_unit(ev.positive / denom),
        disbelief: clamp_unit(ev.negative / denom),
        uncertainty: clamp_unit(PRIOR_WEIGHT / denom),
        base_rate,
    })
}

/// Cumulative fusion of two independent opinions about the same agent.
///
/// Fails with [`Error::DogmaticFusion`] when both uncertainties are zero.
pub fn fuse_cumulative(first: &Opinion, second: &Opinion) -> Result<Opinion> {
    let (ua, ub) = (first.uncertainty, second.uncertainty);
    if ua <= 0.0 && ub <= 0.0 {
        return Err(Error::DogmaticFusion);
    }
    let k = ua + ub - ua * ub;
    let belief = (first.belief * ub + second.belief * ua) / k;
    let disbelief = (first.disbelief * ub + second.disbelief * ua) / k;
    let uncertainty = (ua * ub) / k;

    let (aa, ab) = (first.base_rate, second.base_rate);
    let base_rate = if ua >= 1.0 && ub >= 1.0 {
        (aa + ab) / 2.0
    } else {
        // Also covers the mixed case where exactly one side is vacuous; the
        // denominator only vanishes when both sides are vacuous or dogmatic.
        (aa * ub + ab * ua - (aa + ab) * ua * ub) / (ua + ub - 2.0 * ua * ub)
    };

    Ok(Opinion {
        belief: clamp_unit(belief),
        disbelief: clamp_unit(disbelief),
        uncertainty: clamp_unit(uncertainty),
        base_rate: clamp_unit(base_rate),
    })
}

/// Projected probability `b + u·a`.
pub fn trust_score(op: &Opinion) -> f64 {
    clamp_unit(op.belief + op.uncertainty * op.base_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op(r: f64, s: f64) -> Opinion {
        opinion_from_evidence(EvidenceCounter::new(r, s).unwrap(), 0.5).unwrap()
    }

    fn assert_close(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-9, "{a} != {b}");
    }

    fn assert_op(o: &Opinion, b: f64, d: f64, u: f64, a: f64) {
        assert_close(o.belief(), b);
        assert_close(o.disbelief(), d);
        assert_close(o.uncertainty(), u);
        assert_close(o.base_rate(), a);
    }

    #[test]
    fn evidence_examples() {
        assert_op(&op(0.0, 0.0), 0.0, 0.0, 1.0, 0.5);
        assert_op(&op(2.0, 0.0), 0.5, 0.0, 0.5, 0.5);
        assert_op(&op(3.0, 1.0), 0.5, 1.0 / 6.0, 1.0 / 3.0, 0.5);
    }

    #[test]
    fn rejects_bad_evidence() {
        assert!(EvidenceCounter::new(-1.0, 0.0).is_err());
        assert!(EvidenceCounter::new(0.0, f64::NAN).is_err());
        assert!(EvidenceCounter::new(f64::INFINITY, 0.0).is_err());
        let bad = EvidenceCounter {
            positive: -0.5,
            negative: 0.0,
        };
        assert!(opinion_from_evidence(bad, 0.5).is_err());
        assert!(opinion_from_evidence(EvidenceCounter::EMPTY, 1.5).is_err());
    }

    #[test]
    fn fusion_examples() {
        let w = Opinion::new(0.3, 0.2, 0.5, 0.7).unwrap();
        let fused = fuse_cumulative(&Opinion::vacuous(0.5), &w).unwrap();
        assert_op(&fused, 0.3, 0.2, 0.5, 0.7);

        let fused = fuse_cumulative(&op(1.0, 0.0), &op(0.0, 1.0)).unwrap();
        assert_op(&fused, 0.25, 0.25, 0.5, 0.5);
        let direct = op(1.0, 1.0);
        assert_op(&fused, direct.belief(), direct.disbelief(), direct.uncertainty(), 0.5);

        let both_vacuous =
            fuse_cumulative(&Opinion::vacuous(0.5), &Opinion::vacuous(0.5)).unwrap();
        assert_op(&both_vacuous, 0.0, 0.0, 1.0, 0.5);
        let mixed = fuse_cumulative(&Opinion::vacuous(0.2), &Opinion::vacuous(0.6)).unwrap();
        assert_close(mixed.base_rate(), 0.4);
    }

    #[test]
    fn dogmatic_pair_is_refused() {
        let a = Opinion::new(1.0, 0.0, 0.0, 0.5).unwrap();
        let b = Opinion::new(0.0, 1.0, 0.0, 0.5).unwrap();
        assert!(matches!(fuse_cumulative(&a, &b), Err(Error::DogmaticFusion)));
        // one dogmatic side is fine and dominates
        let fused = fuse_cumulative(&a, &op(0.0, 3.0)).unwrap();
        assert_op(&fused, 1.0, 0.0, 0.0, 0.5);
    }

    #[test]
    fn trust_examples() {
        assert_close(trust_score(&Opinion::new(1.0, 0.0, 0.0, 0.5).unwrap()), 1.0);
        assert_close(trust_score(&Opinion::vacuous(0.5)), 0.5);
        let o = Opinion::new(0.5, 1.0 / 6.0, 1.0 / 3.0, 0.5).unwrap();
        assert_close(trust_score(&o), 2.0 / 3.0);
    }

    #[test]
    fn opinion_constructor_checks_sum() {
        assert!(Opinion::new(0.5, 0.5, 0.5, 0.5).is_err());
        assert!(Opinion::new(-0.1, 0.6, 0.5, 0.5).is_err());
        assert!(Opinion::new(0.2, 0.3, 0.5, 0.5).is_ok());
    }

    #[test]
    fn evidence_round_trip() {
        let ev = op(3.0, 7.0).to_evidence().unwrap();
        assert_close(ev.positive, 3.0);
        assert_close(ev.negative, 7.0);
        assert!(Opinion::new(1.0, 0.0, 0.0, 0.5).unwrap().to_evidence().is_err());
    }
}
