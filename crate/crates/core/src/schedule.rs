//! Continuous coefficient schedules.
//!
//! A schedule fixes the cumulative coefficients of the generalist forward
//! map: `alpha_bar(t)` (residual injection), `beta_bar(t)` (noise scale)
//! and `delta_bar(t)` (removal of the degraded input), all vanishing at
//! `t = 0`. Rates are returned as `h = d alpha_bar/dt`,
//! `l = -d delta_bar/dt` and `g2 = d beta_bar^2/dt`; the drift on the
//! state itself is identically zero and is not represented.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScheduleFamily {
    /// Constant per-unit rates: cumulative coefficients linear in `t`.
    Uniform,
    /// Rates proportional to `t`: cumulative coefficients quadratic in `t`.
    #[default]
    LinearRamp,
}

impl FromStr for ScheduleFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(Self::Uniform),
            "linear-ramp" | "linear_ramp" | "linear" | "ramp" => Ok(Self::LinearRamp),
            other => Err(Error::InvalidConfig(format!("unknown schedule family {other:?}"))),
        }
    }
}

impl fmt::Display for ScheduleFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Uniform => "uniform",
            Self::LinearRamp => "linear-ramp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleConfig {
    pub horizon: f64,
    pub family: ScheduleFamily,
    /// Terminal value `delta_bar(T)`, in `[0, 1]`.
    pub delta_t: f64,
    /// Terminal value `beta_bar(T)`, positive.
    pub beta_t: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            family: ScheduleFamily::LinearRamp,
            delta_t: 1.0,
            beta_t: 1.0,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidConfig(format!("horizon must be > 0, got {}", self.horizon)));
        }
        if !(0.0..=1.0).contains(&self.delta_t) {
            return Err(Error::InvalidConfig(format!(
                "delta_T must lie in [0, 1], got {}",
                self.delta_t
            )));
        }
        if !(self.beta_t > 0.0 && self.beta_t.is_finite()) {
            return Err(Error::InvalidConfig(format!("beta_T must be > 0, got {}", self.beta_t)));
        }
        Ok(())
    }
}

/// Cumulative coefficients at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub alpha_bar: f64,
    pub beta_bar: f64,
    pub delta_bar: f64,
}

/// Time derivatives of the coefficients at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    /// `d alpha_bar / dt`
    pub h: f64,
    /// `-d delta_bar / dt`
    pub l: f64,
    /// `d beta_bar^2 / dt`
    pub g2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    config: ScheduleConfig,
}

pub fn build_schedule(config: ScheduleConfig) -> Result<Schedule> {
    config.validate()?;
    Ok(Schedule { config })
}

impl Schedule {
    pub fn new(config: ScheduleConfig) -> Result<Self> {
        build_schedule(config)
    }

    pub fn config(&self) -> &ScheduleConfig {
        &self.config
    }

    pub fn horizon(&self) -> f64 {
        self.config.horizon
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if (0.0..=self.config.horizon).contains(&t) {
            Ok(())
        } else {
            Err(Error::TimeOutOfRange {
                t,
                horizon: self.config.horizon,
            })
        }
    }

    pub fn eval(&self, t: f64) -> Result<Coefficients> {
        self.check_time(t)?;
        let c = &self.config;
        let u = t / c.horizon;
        Ok(match c.family {
            ScheduleFamily::Uniform => Coefficients {
                alpha_bar: u,
                beta_bar: c.beta_t * u.sqrt(),
                delta_bar: c.delta_t * u,
            },
            ScheduleFamily::LinearRamp => Coefficients {
                alpha_bar: u * u,
                // sqrt(beta_T^2 u^2) without the round trip
                beta_bar: c.beta_t * u,
                delta_bar: c.delta_t * (u * u),
            },
        })
    }

    pub fn eval_rates(&self, t: f64) -> Result<Rates> {
        self.check_time(t)?;
        let c = &self.config;
        let big_t = c.horizon;
        let b2 = c.beta_t * c.beta_t;
        Ok(match c.family {
            ScheduleFamily::Uniform => Rates {
                h: 1.0 / big_t,
                l: -c.delta_t / big_t,
                g2: b2 / big_t,
            },
            ScheduleFamily::LinearRamp => {
                let k = 2.0 * t / (big_t * big_t);
                Rates {
                    h: k,
                    l: -c.delta_t * k,
                    g2: b2 * k,
                }
            }
        })
    }

    /// `d beta_bar / dt`, i.e. `g2 / (2 beta_bar)`, evaluated without the
    /// 0/0 at `t = 0` where the closed form allows it.
    pub fn beta_bar_rate(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        let c = &self.config;
        Ok(match c.family {
            ScheduleFamily::Uniform => {
                if t == 0.0 {
                    f64::INFINITY
                } else {
                    c.beta_t / (2.0 * (t * c.horizon).sqrt())
                }
            }
            ScheduleFamily::LinearRamp => c.beta_t / c.horizon,
        })
    }

    /// Uniform grid `t_i = T (1 - i/M)`, decreasing from `T` to exactly 0.
    pub fn time_grid(&self, steps: usize) -> Result<Vec<f64>> {
        if steps == 0 {
            return Err(Error::InvalidConfig("time grid needs at least one step".into()));
        }
        let big_t = self.config.horizon;
        let mut grid: Vec<f64> = (0..=steps)
            .map(|i| big_t * (1.0 - i as f64 / steps as f64))
            .collect();
        grid[0] = big_t;
        grid[steps] = 0.0;
        Ok(grid)
    }
}

/// Default number of sampling steps.
pub const DEFAULT_STEPS: usize = 8;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::SeededRng;
    use approx::assert_relative_eq;

    fn sched(family: ScheduleFamily, delta_t: f64, beta_t: f64) -> Schedule {
        build_schedule(ScheduleConfig {
            horizon: 1.0,
            family,
            delta_t,
            beta_t,
        })
        .unwrap()
    }

    const FAMILIES: [ScheduleFamily; 2] = [ScheduleFamily::Uniform, ScheduleFamily::LinearRamp];

    #[test]
    fn boundary_values() {
        for fam in FAMILIES {
            let s = sched(fam, 0.7, 1.3);
            let c0 = s.eval(0.0).unwrap();
            assert_eq!((c0.alpha_bar, c0.beta_bar, c0.delta_bar), (0.0, 0.0, 0.0));
            let c1 = s.eval(1.0).unwrap();
            assert_eq!((c1.alpha_bar, c1.beta_bar, c1.delta_bar), (1.0, 1.3, 0.7));
        }
    }

    #[test]
    fn worked_examples() {
        let ramp = sched(ScheduleFamily::LinearRamp, 1.0, 1.0);
        assert_relative_eq!(ramp.eval(0.5).unwrap().beta_bar, 0.5, epsilon = 1e-15);
        let uni = sched(ScheduleFamily::Uniform, 0.5, 1.0);
        let c = uni.eval(0.25).unwrap();
        assert_eq!((c.alpha_bar, c.beta_bar, c.delta_bar), (0.25, 0.5, 0.125));
        for t in [0.0, 0.3, 1.0] {
            assert_eq!(uni.eval_rates(t).unwrap().h, 1.0);
            assert_eq!(sched(ScheduleFamily::Uniform, 1.0, 1.0).eval_rates(t).unwrap().g2, 1.0);
        }
        assert_eq!(ramp.eval_rates(0.0).unwrap().h, 0.0);
    }

    #[test]
    fn rejects_bad_configs_and_times() {
        for (h, d, b) in [(0.0, 0.5, 1.0), (1.0, 1.5, 1.0), (1.0, -0.1, 1.0), (1.0, 0.5, 0.0)] {
            let cfg = ScheduleConfig {
                horizon: h,
                family: ScheduleFamily::Uniform,
                delta_t: d,
                beta_t: b,
            };
            assert!(build_schedule(cfg).is_err());
        }
        let s = sched(ScheduleFamily::Uniform, 1.0, 1.0);
        assert!(matches!(s.eval(1.01), Err(Error::TimeOutOfRange { .. })));
        assert!(s.eval(-1e-9).is_err());
        assert!(s.eval_rates(2.0).is_err());
    }

    #[test]
    fn grids() {
        let s = sched(ScheduleFamily::LinearRamp, 1.0, 1.0);
        assert_eq!(s.time_grid(1).unwrap(), vec![1.0, 0.0]);
        assert_eq!(s.time_grid(4).unwrap(), vec![1.0, 0.75, 0.5, 0.25, 0.0]);
        let g = s.time_grid(DEFAULT_STEPS).unwrap();
        assert_eq!(g.len(), 9);
        assert!(g.windows(2).all(|w| w[0] > w[1]));
        assert!(s.time_grid(0).is_err());
        let long = build_schedule(ScheduleConfig {
            horizon: 3.7,
            ..Default::default()
        })
        .unwrap();
        let g = long.time_grid(7).unwrap();
        assert_eq!((g[0], g[7]), (3.7, 0.0));
    }

    #[test]
    fn finite_difference_rates() {
        let mut rng = SeededRng::new(11);
        for fam in FAMILIES {
            let s = sched(fam, 0.6, 1.7);
            for _ in 0..100 {
                let t = rng.uniform(0.01, 0.99);
                let eps = 1e-6;
                let (p, m) = (s.eval(t + eps).unwrap(), s.eval(t - eps).unwrap());
                let r = s.eval_rates(t).unwrap();
                let h = (p.alpha_bar - m.alpha_bar) / (2.0 * eps);
                let l = -(p.delta_bar - m.delta_bar) / (2.0 * eps);
                let g2 = (p.beta_bar.powi(2) - m.beta_bar.powi(2)) / (2.0 * eps);
                assert!((h - r.h).abs() < 1e-6, "{fam} h at {t}");
                assert!((l - r.l).abs() < 1e-6, "{fam} l at {t}");
                assert!((g2 - r.g2).abs() < 1e-6, "{fam} g2 at {t}");
                let db = (p.beta_bar - m.beta_bar) / (2.0 * eps);
                assert!((db - s.beta_bar_rate(t).unwrap()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn monotone_and_delta_scaling() {
        let mut rng = SeededRng::new(12);
        for fam in FAMILIES {
            let s = sched(fam, 0.8, 1.0);
            let unit = sched(fam, 1.0, 1.0);
            let c = 0.8;
            for _ in 0..200 {
                let a = rng.uniform(1e-6, 1.0);
                let b = rng.uniform(1e-6, 1.0);
                let (t1, t2) = if a < b { (a, b) } else { (b, a) };
                if t1 == t2 {
                    continue;
                }
                let (c1, c2) = (s.eval(t1).unwrap(), s.eval(t2).unwrap());
                assert!(c1.alpha_bar < c2.alpha_bar);
                assert!(c1.beta_bar < c2.beta_bar);
                assert!(c1.delta_bar < c2.delta_bar);
                assert_eq!(c1.delta_bar, c * unit.eval(t1).unwrap().delta_bar);
            }
        }
    }
}
