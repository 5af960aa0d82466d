use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::GridField;
use crate::ode::OdeNet;
use crate::pde::{pde_numeric_step, PdeCoefficients};

/// Where the homogeneous prediction comes from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PhysicsSpec {
    None,
    Pde(PathBuf),
    Ode(PathBuf),
    TruthWave,
}

impl FromStr for PhysicsSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "truth-wave" => Ok(Self::TruthWave),
            _ => match s.split_once(':') {
                Some(("pde", p)) if !p.is_empty() => Ok(Self::Pde(p.into())),
                Some(("ode", p)) if !p.is_empty() => Ok(Self::Ode(p.into())),
                _ => Err(Error::config(format!(
                    "physics must be none|pde:<path>|ode:<path>|truth-wave, got {s:?}"
                ))),
            },
        }
    }
}

impl fmt::Display for PhysicsSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::None => write!(f, "none"),
            Self::Pde(p) => write!(f, "pde:{}", p.display()),
            Self::Ode(p) => write!(f, "ode:{}", p.display()),
            Self::TruthWave => write!(f, "truth-wave"),
        }
    }
}

/// Numeric one-step physics used by the coupling layer.
#[derive(Clone, Debug)]
pub enum Physics {
    None,
    /// Recovered PDE stepped with the sequence's `dt`.
    Pde {
        coefficients: PdeCoefficients,
        dx: f64,
        dy: f64,
    },
    Ode {
        net: Box<OdeNet>,
        dx: f64,
        dy: f64,
    },
    /// The simulator's own equation with the given speed.
    TruthWave {
        speed: f64,
        dx: f64,
        dy: f64,
    },
}

impl Physics {
    pub fn is_none(&self) -> bool {
        matches!(self, Self::None)
    }

    /// Load the backend named by `spec`.
    pub fn load(spec: &PhysicsSpec, speed: f64, dx: f64, dy: f64) -> Result<Self> {
        Ok(match spec {
            PhysicsSpec::None => Self::None,
            PhysicsSpec::TruthWave => Self::TruthWave { speed, dx, dy },
            PhysicsSpec::Pde(p) => Self::Pde {
                coefficients: PdeCoefficients::load(&coefficients_path(p))?,
                dx,
                dy,
            },
            PhysicsSpec::Ode(p) => Self::Ode {
                net: Box::new(super::checkpoint::load_ode(p)?),
                dx,
                dy,
            },
        })
    }

    /// Perturb the PDE coefficients of `Pde` and `TruthWave` backends by
    /// relative Gaussian noise; other backends are rejected unless `fraction` is 0.
    pub fn with_coefficient_noise(self, fraction: f64, seed: u64) -> Result<Self> {
        if fraction == 0.0 {
            return Ok(self);
        }
        match self {
            Self::Pde {
                coefficients,
                dx,
                dy,
            } => Ok(Self::Pde {
                coefficients: coefficients.perturbed(fraction, seed)?,
                dx,
                dy,
            }),
            Self::TruthWave { speed, dx, dy } => Ok(Self::Pde {
                coefficients: PdeCoefficients::wave(speed).perturbed(fraction, seed)?,
                dx,
                dy,
            }),
            _ => Err(Error::config(
                "coefficient noise needs a pde or truth-wave backend",
            )),
        }
    }

    /// Next frame from `(prev, curr)`. Masked cells are set to 0.
    pub fn step(
        &self,
        prev: &GridField,
        curr: &GridField,
        mask: &[bool],
        dt: f64,
    ) -> Result<GridField> {
        let mut next = match self {
            Self::None => return Err(Error::contract("no physics backend")),
            Self::Pde {
                coefficients,
                dx,
                dy,
            } => pde_numeric_step(prev, curr, coefficients, dt, *dx, *dy)?,
            Self::TruthWave { speed, dx, dy } => {
                pde_numeric_step(prev, curr, &PdeCoefficients::wave(*speed), dt, *dx, *dy)?
            }
            Self::Ode { net, dx, dy } => net.predict_frame(prev, curr, mask, *dx, *dy)?,
        };
        for (v, &m) in next.data_mut().iter_mut().zip(mask) {
            if !m {
                *v = 0.0;
            }
        }
        if next.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerics("physics step".into()));
        }
        Ok(next)
    }
}

/// A PDE artifact may be given as the JSON file or the directory holding it.
fn coefficients_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("coefficients.json")
    } else {
        p.to_path_buf()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_parsing_round_trips() {
        for s in ["none", "truth-wave", "pde:runs/c.json", "ode:runs/ode"] {
            assert_eq!(s.parse::<PhysicsSpec>().unwrap().to_string(), s);
        }
        assert!("pde:".parse::<PhysicsSpec>().is_err());
        assert!("wave".parse::<PhysicsSpec>().is_err());
    }

    #[test]
    fn degenerate_pde_is_reported() {
        let c = PdeCoefficients::new([0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let phys = Physics::Pde {
            coefficients: c,
            dx: 1.0,
            dy: 1.0,
        };
        let f = GridField::zeros(3, 3);
        assert!(matches!(
            phys.step(&f, &f, &[true; 9], 0.1),
            Err(Error::DegeneratePde(_))
        ));
    }
}
