//! Which side of the weight-balance threshold a (modulus, weight) pair sits on.

use crate::apriori::balance_probe;
use crate::coefficient::Regime;
use crate::moduli::{ContinuityModulus, ProbeTrace, Trend, WeightFunction};
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    /// balance statistic bounded: a priori estimates apply
    Existence,
    /// balance statistic unbounded: the loss construction applies
    Counterexample,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize)]
pub struct ClassifyReport {
    pub regime: Regime,
    pub omega: String,
    pub phi: String,
    pub statistic: String,
    pub probe: ProbeTrace,
    pub classification: Classification,
}

pub fn classify(regime: Regime, omega: &ContinuityModulus, phi: &WeightFunction) -> ClassifyReport {
    let probe = balance_probe(regime, omega, phi);
    let classification = match probe.trend {
        Trend::Bounded => Classification::Existence,
        Trend::Divergent => Classification::Counterexample,
        Trend::Unclear => Classification::Inconclusive,
    };
    ClassifyReport {
        regime,
        omega: omega.name().to_string(),
        phi: phi.name().to_string(),
        statistic: match regime {
            Regime::Sh => "sigma omega(1/sigma) / phi(sigma)".into(),
            Regime::Wh => "sigma / phi(sigma / sqrt(omega(1/sigma)))".into(),
        },
        probe,
        classification,
    }
}
