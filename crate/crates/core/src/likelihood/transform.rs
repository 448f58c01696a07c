use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters that can be estimated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Param {
    R0,
    Nu,
    T0,
    C1,
}

impl Param {
    pub const ALL: [Param; 4] = [Param::R0, Param::Nu, Param::T0, Param::C1];

    pub fn name(self) -> &'static str {
        match self {
            Param::R0 => "r0",
            Param::Nu => "nu",
            Param::T0 => "t0",
            Param::C1 => "c1",
        }
    }

    /// Maps a natural-scale value to the unconstrained optimization scale:
    /// log for `r0`, `nu` and `t0`, logit for `c1`.
    pub fn to_unconstrained(self, value: f64) -> Result<f64> {
        match self {
            Param::C1 => {
                if value > 0.0 && value < 1.0 {
                    Ok((value / (1.0 - value)).ln())
                } else {
                    Err(Error::TransformDomain {
                        transform: "logit",
                        value,
                    })
                }
            }
            _ => {
                if value > 0.0 && value.is_finite() {
                    Ok(value.ln())
                } else {
                    Err(Error::TransformDomain {
                        transform: "log",
                        value,
                    })
                }
            }
        }
    }

    pub fn from_unconstrained(self, z: f64) -> f64 {
        match self {
            Param::C1 => logistic(z),
            _ => z.exp(),
        }
    }

    /// `d(natural) / d(unconstrained)` evaluated at a natural-scale value.
    pub fn jacobian(self, value: f64) -> f64 {
        match self {
            Param::C1 => value * (1.0 - value),
            _ => value,
        }
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Param {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "r0" => Ok(Param::R0),
            "nu" => Ok(Param::Nu),
            "t0" => Ok(Param::T0),
            "c1" => Ok(Param::C1),
            other => Err(Error::Config(format!("unknown parameter '{other}'"))),
        }
    }
}

pub fn transform(params: &[Param], values: &[f64]) -> Result<Vec<f64>> {
    if params.len() != values.len() {
        return Err(Error::LengthMismatch {
            left: params.len(),
            right: values.len(),
        });
    }
    params
        .iter()
        .zip(values)
        .map(|(p, &v)| p.to_unconstrained(v))
        .collect()
}

pub fn untransform(params: &[Param], z: &[f64]) -> Vec<f64> {
    params
        .iter()
        .zip(z)
        .map(|(p, &v)| p.from_unconstrained(v))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn symmetry_points() {
        assert_eq!(Param::C1.to_unconstrained(0.5).unwrap(), 0.0);
        assert_eq!(Param::R0.to_unconstrained(1.0).unwrap(), 0.0);
        assert_eq!(Param::C1.from_unconstrained(0.0), 0.5);
    }

    #[test]
    fn boundaries_are_errors() {
        assert!(Param::C1.to_unconstrained(0.0).is_err());
        assert!(Param::C1.to_unconstrained(1.0).is_err());
        assert!(Param::Nu.to_unconstrained(0.0).is_err());
        assert!(Param::T0.to_unconstrained(-2.0).is_err());
    }

    #[test]
    fn logistic_is_stable_in_tails() {
        assert!(Param::C1.from_unconstrained(-800.0) >= 0.0);
        assert!(Param::C1.from_unconstrained(800.0) <= 1.0);
    }

    #[test]
    fn parses_names() {
        for p in Param::ALL {
            assert_eq!(p.name().parse::<Param>().unwrap(), p);
        }
        assert!("beta".parse::<Param>().is_err());
    }

    proptest! {
        #[test]
        fn round_trip(r0 in 0.05f64..20.0, nu in 1e-3f64..5.0, t0 in 0.1f64..60.0, c1 in 1e-3f64..0.999) {
            let values = [r0, nu, t0, c1];
            let z = transform(&Param::ALL, &values).unwrap();
            let back = untransform(&Param::ALL, &z);
            for (a, b) in values.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }
}
