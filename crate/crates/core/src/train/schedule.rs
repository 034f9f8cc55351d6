//! Per-epoch schedules for the loss weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    Constant {
        value: f64,
    },
    /// `values[k]` applies once the epoch fraction reaches
    /// `boundaries[k - 1]`.
    Step {
        values: Vec<f64>,
        boundaries: Vec<f64>,
    },
    Linear {
        start: f64,
        end: f64,
    },
    /// Sawtooth ramp `start -> end`, repeated `n_cycles` times.
    Cyclic {
        start: f64,
        end: f64,
        n_cycles: usize,
    },
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Constant { value: 0.0 }
    }
}

impl Schedule {
    pub fn constant(value: f64) -> Self {
        Schedule::Constant { value }
    }

    /// Parses the kind name used on the command line and in configs.
    pub fn from_kind(kind: &str, params: &[f64]) -> Result<Self> {
        let need = |n: usize| {
            if params.len() == n {
                Ok(())
            } else {
                Err(Error::Config(format!("schedule {kind} takes {n} parameters, got {}", params.len())))
            }
        };
        let s = match kind {
            "constant" => {
                need(1)?;
                Schedule::Constant { value: params[0] }
            }
            "linear" => {
                need(2)?;
                Schedule::Linear { start: params[0], end: params[1] }
            }
            "cyclic" => {
                need(3)?;
                Schedule::Cyclic {
                    start: params[0],
                    end: params[1],
                    n_cycles: params[2] as usize,
                }
            }
            "step" => {
                if params.is_empty() || params.len() % 2 == 0 {
                    return Err(Error::Config("step schedule takes v0, (boundary, value)...".into()));
                }
                let mut values = vec![params[0]];
                let mut boundaries = Vec::new();
                for pair in params[1..].chunks(2) {
                    boundaries.push(pair[0]);
                    values.push(pair[1]);
                }
                Schedule::Step { values, boundaries }
            }
            other => return Err(Error::Config(format!("unknown schedule kind '{other}'"))),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let values: Vec<f64> = match self {
            Schedule::Constant { value } => vec![*value],
            Schedule::Step { values, boundaries } => {
                if values.len() != boundaries.len() + 1 {
                    return bad("step schedule needs one more value than boundaries");
                }
                if boundaries.windows(2).any(|w| w[0] >= w[1]) || boundaries.iter().any(|b| !(0.0..=1.0).contains(b)) {
                    return bad("step boundaries must be increasing fractions in [0, 1]");
                }
                values.clone()
            }
            Schedule::Linear { start, end } => vec![*start, *end],
            Schedule::Cyclic { start, end, n_cycles } => {
                if *n_cycles == 0 {
                    return bad("cyclic schedule needs n_cycles >= 1");
                }
                vec![*start, *end]
            }
        };
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("schedule values must be finite and non-negative");
        }
        Ok(())
    }

    /// Value at `epoch` of `total_epochs`.
    pub fn value(&self, epoch: usize, total_epochs: usize) -> Result<f64> {
        schedule_value(self, epoch, total_epochs)
    }

    /// Whether the schedule never changes.
    pub fn is_constant(&self) -> bool {
        matches!(self, Schedule::Constant { .. })
    }
}

pub fn schedule_value(s: &Schedule, epoch: usize, total_epochs: usize) -> Result<f64> {
    if epoch >= total_epochs {
        return Err(Error::Config(format!("epoch {epoch} outside [0, {total_epochs})")));
    }
    let frac = epoch as f64 / total_epochs as f64;
    Ok(match s {
        Schedule::Constant { value } => *value,
        Schedule::Step { values, boundaries } => {
            let k = boundaries.iter().filter(|&&b| frac >= b).count();
            values[k]
        }
        Schedule::Linear { start, end } => start + (end - start) * frac,
        Schedule::Cyclic { start, end, n_cycles } => {
            let period = total_epochs as f64 / *n_cycles as f64;
            let pos = (epoch as f64 % period) / period;
            start + (end - start) * pos
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(schedule_value(&Schedule::constant(0.01), 73, 100).unwrap(), 0.01);
        let lin = Schedule::Linear { start: 0.0, end: 1.0 };
        assert!((schedule_value(&lin, 50, 100).unwrap() - 0.5).abs() < 1e-15);
        let cyc = Schedule::Cyclic {
            start: 0.0,
            end: 1.0,
            n_cycles: 4,
        };
        assert!((schedule_value(&cyc, 26, 100).unwrap() - 0.04).abs() < 1e-12);
        let st = Schedule::from_kind("step", &[0.0, 0.5, 0.1]).unwrap();
        assert_eq!(st.value(49, 100).unwrap(), 0.0);
        assert_eq!(st.value(50, 100).unwrap(), 0.1);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Schedule::from_kind("exponential", &[1.0]).is_err());
        assert!(schedule_value(&Schedule::constant(1.0), 10, 10).is_err());
        let parsed: std::result::Result<Schedule, _> = toml::from_str("kind = \"warp\"\nvalue = 1.0");
        assert!(parsed.is_err());
    }
}
