//! Drive protocols: the Rabi frequency is ramped up at constant detuning,
//! the detuning is then swept linearly at constant Rabi frequency, and the
//! Rabi frequency is ramped back down at the final detuning.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::mhz_to_angular;

/// Shape of the Rabi-frequency rise and fall.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampShape {
    #[default]
    Linear,
    /// `sin^2` edge, zero slope at both ends.
    SineSquared,
}

impl RampShape {
    fn profile(self, s: f64) -> f64 {
        match self {
            RampShape::Linear => s,
            RampShape::SineSquared => (0.5 * std::f64::consts::PI * s).sin().powi(2),
        }
    }
}

/// Drive values at one instant, in rad/us.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Drive {
    pub omega: f64,
    pub delta: f64,
}

/// Ramp parameters as tabulated for experiments: durations in us,
/// frequencies as `Omega/2pi` and `delta/2pi` in MHz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RampParams {
    pub t_rise_us: f64,
    pub t_sweep_us: f64,
    pub t_fall_us: f64,
    pub omega_max_mhz: f64,
    pub delta0_mhz: f64,
    pub delta_final_mhz: f64,
    #[serde(default)]
    pub shape: RampShape,
}

impl RampParams {
    /// Table parameters of the time-trace and spatial-map runs
    /// (`U/h = 2.7 MHz`).
    pub fn time_trace() -> Self {
        RampParams {
            t_rise_us: 0.25,
            t_sweep_us: 0.44,
            t_fall_us: 0.25,
            omega_max_mhz: 1.8,
            delta0_mhz: -6.0,
            delta_final_mhz: 4.5,
            shape: RampShape::Linear,
        }
    }

    /// Detuning scan (`U/h = 1.0 MHz`): the sweep rate is fixed at
    /// 10 MHz/us, so the sweep duration follows from the final detuning.
    pub fn detuning_scan(delta_final_mhz: f64) -> Self {
        RampParams {
            t_rise_us: 0.25,
            t_sweep_us: (delta_final_mhz - -6.0) / 10.0,
            t_fall_us: 0.5,
            omega_max_mhz: 2.3,
            delta0_mhz: -6.0,
            delta_final_mhz,
            shape: RampShape::Linear,
        }
    }

    /// Duration scan (`U/h = 2.7 MHz`) at a given sweep time.
    pub fn duration_scan(t_sweep_us: f64) -> Self {
        RampParams {
            t_sweep_us,
            ..RampParams::time_trace()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RampSchedule {
    t_rise: f64,
    t_sweep: f64,
    t_fall: f64,
    omega_max: f64,
    delta0: f64,
    delta_final: f64,
    shape: RampShape,
    /// End of a truncated run: the drive is switched off instantaneously here.
    stop: Option<f64>,
}

/// Convert tabulated parameters to a schedule in internal units.
pub fn build_ramp(params: &RampParams) -> Result<RampSchedule> {
    for (name, v) in [
        ("t_rise_us", params.t_rise_us),
        ("t_sweep_us", params.t_sweep_us),
        ("t_fall_us", params.t_fall_us),
    ] {
        if !v.is_finite() {
            return Err(Error::invalid(name, "must be finite"));
        }
        if v < 0.0 {
            return Err(Error::invalid(name, format!("negative duration {v}")));
        }
    }
    for (name, v) in [
        ("omega_max_mhz", params.omega_max_mhz),
        ("delta0_mhz", params.delta0_mhz),
        ("delta_final_mhz", params.delta_final_mhz),
    ] {
        if !v.is_finite() {
            return Err(Error::invalid(name, "non-finite frequency"));
        }
    }
    if params.omega_max_mhz < 0.0 {
        return Err(Error::invalid("omega_max_mhz", "must be non-negative"));
    }
    if params.t_rise_us == 0.0 && params.t_sweep_us == 0.0 {
        return Err(Error::invalid(
            "t_sweep_us",
            "at least one of t_rise_us, t_sweep_us must be positive",
        ));
    }
    Ok(RampSchedule {
        t_rise: params.t_rise_us,
        t_sweep: params.t_sweep_us,
        t_fall: params.t_fall_us,
        omega_max: mhz_to_angular(params.omega_max_mhz),
        delta0: mhz_to_angular(params.delta0_mhz),
        delta_final: mhz_to_angular(params.delta_final_mhz),
        shape: params.shape,
        stop: None,
    })
}

impl RampSchedule {
    /// Sweep-only schedule in internal units: constant `omega`, detuning
    /// linear from `delta0` to `delta_final` over `duration`.
    pub fn sweep(omega: f64, delta0: f64, delta_final: f64, duration: f64) -> Result<Self> {
        if !(duration.is_finite() && duration > 0.0) {
            return Err(Error::invalid("duration", "must be positive"));
        }
        if ![omega, delta0, delta_final].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("drive", "non-finite frequency"));
        }
        Ok(RampSchedule {
            t_rise: 0.0,
            t_sweep: duration,
            t_fall: 0.0,
            omega_max: omega,
            delta0,
            delta_final,
            shape: RampShape::Linear,
            stop: None,
        })
    }

    /// Constant drive for `duration`.
    pub fn constant(omega: f64, delta: f64, duration: f64) -> Result<Self> {
        Self::sweep(omega, delta, delta, duration)
    }

    /// The same protocol cut at `t_stop`, followed by an instantaneous
    /// switch-off.
    pub fn stopped_at(&self, t_stop: f64) -> Result<Self> {
        if !(t_stop > 0.0 && t_stop <= self.total_duration()) {
            return Err(Error::invalid(
                "t_stop",
                format!("must lie in (0, {}]", self.total_duration()),
            ));
        }
        Ok(RampSchedule {
            stop: Some(t_stop),
            ..self.clone()
        })
    }

    /// Interior times in `(0, duration)` where the drive has a kink: the
    /// ends of the rise and of the sweep.
    pub fn breakpoints(&self) -> Vec<f64> {
        let end = self.duration();
        let slack = 1e-12 * end.max(1.0);
        let mut out: Vec<f64> = [self.t_rise, self.t_rise + self.t_sweep]
            .into_iter()
            .filter(|&t| t > slack && t < end - slack)
            .collect();
        out.dedup_by(|a, b| (*a - *b).abs() <= slack);
        out
    }

    /// `t_rise + t_sweep + t_fall`, regardless of any stop time.
    pub fn total_duration(&self) -> f64 {
        self.t_rise + self.t_sweep + self.t_fall
    }

    /// Time span actually driven: the stop time if set, else the total.
    pub fn duration(&self) -> f64 {
        self.stop.unwrap_or_else(|| self.total_duration())
    }

    pub fn t_rise(&self) -> f64 {
        self.t_rise
    }

    pub fn t_sweep(&self) -> f64 {
        self.t_sweep
    }

    pub fn t_fall(&self) -> f64 {
        self.t_fall
    }

    pub fn omega_max(&self) -> f64 {
        self.omega_max
    }

    pub fn delta0(&self) -> f64 {
        self.delta0
    }

    pub fn delta_final(&self) -> f64 {
        self.delta_final
    }

    pub fn shape(&self) -> RampShape {
        self.shape
    }

    /// True when the Rabi frequency is constant over the driven span.
    pub fn has_constant_omega(&self) -> bool {
        self.t_rise == 0.0 && (self.t_fall == 0.0 || self.duration() <= self.t_sweep)
    }

    /// Same schedule with detunings negated, for the attractive-interaction
    /// frame (see [`crate::operator::CouplingMap::repulsive_frame`]).
    pub fn mirrored(&self) -> Self {
        RampSchedule {
            delta0: -self.delta0,
            delta_final: -self.delta_final,
            ..self.clone()
        }
    }

    /// Drive at time `t`, `0 <= t <= duration()`.
    pub fn evaluate(&self, t: f64) -> Result<Drive> {
        let end = self.duration();
        let slack = 1e-12 * end.max(1.0);
        if !(t >= -slack && t <= end + slack) {
            return Err(Error::invalid("t", format!("{t} outside [0, {end}]")));
        }
        Ok(self.drive_clamped(t.clamp(0.0, end)))
    }

    pub(crate) fn drive_clamped(&self, t: f64) -> Drive {
        let sweep_end = self.t_rise + self.t_sweep;
        if t < self.t_rise {
            Drive {
                omega: self.omega_max * self.shape.profile(t / self.t_rise),
                delta: self.delta0,
            }
        } else if t <= sweep_end {
            let delta = if self.t_sweep > 0.0 {
                let s = (t - self.t_rise) / self.t_sweep;
                self.delta0 + s * (self.delta_final - self.delta0)
            } else {
                self.delta_final
            };
            Drive {
                omega: self.omega_max,
                delta,
            }
        } else {
            let s = if self.t_fall > 0.0 {
                ((self.total_duration() - t) / self.t_fall).clamp(0.0, 1.0)
            } else {
                0.0
            };
            Drive {
                omega: self.omega_max * self.shape.profile(s),
                delta: self.delta_final,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::mhz_to_angular;

    #[test]
    fn time_trace_row() {
        let s = build_ramp(&RampParams::time_trace()).unwrap();
        assert!((s.total_duration() - 0.94).abs() < 1e-12);
        assert_eq!(s.evaluate(0.25).unwrap().delta, mhz_to_angular(-6.0));
        assert!((s.evaluate(0.69).unwrap().delta - mhz_to_angular(4.5)).abs() < 1e-9);
        assert_eq!(s.evaluate(0.0).unwrap().omega, 0.0);
        assert!(s.evaluate(s.total_duration()).unwrap().omega.abs() < 1e-12);
        let mid = s.evaluate(0.25 + 0.22).unwrap();
        assert!((mid.delta - mhz_to_angular(-0.75)).abs() < 1e-9);
        assert_eq!(mid.omega, mhz_to_angular(1.8));
    }

    #[test]
    fn detuning_scan_sweep_time() {
        let p = RampParams::detuning_scan(4.0);
        assert!((p.t_sweep_us - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid() {
        let mut p = RampParams::time_trace();
        p.t_sweep_us = -0.1;
        assert!(matches!(build_ramp(&p), Err(Error::Invalid { field, .. }) if field == "t_sweep_us"));
        let mut p = RampParams::time_trace();
        p.delta0_mhz = f64::NAN;
        assert!(build_ramp(&p).is_err());
        let mut p = RampParams::time_trace();
        p.t_rise_us = 0.0;
        p.t_sweep_us = 0.0;
        assert!(build_ramp(&p).is_err());
        let s = build_ramp(&RampParams::time_trace()).unwrap();
        assert!(s.evaluate(-0.1).is_err());
        assert!(s.evaluate(1.0).is_err());
    }

    #[test]
    fn sweep_only_is_strictly_monotone() {
        let s = RampSchedule::sweep(1.0, -3.0, 5.0, 2.0).unwrap();
        let mut last = f64::NEG_INFINITY;
        for i in 0..=100 {
            let d = s.evaluate(2.0 * i as f64 / 100.0).unwrap();
            assert!(d.delta > last);
            assert_eq!(d.omega, 1.0);
            last = d.delta;
        }
        assert!(s.has_constant_omega());
    }

    #[test]
    fn stopped_schedule_follows_the_profile() {
        let s = build_ramp(&RampParams::time_trace()).unwrap();
        let cut = s.stopped_at(0.6).unwrap();
        assert_eq!(cut.duration(), 0.6);
        assert_eq!(cut.evaluate(0.5).unwrap(), s.evaluate(0.5).unwrap());
        assert!(cut.evaluate(0.7).is_err());
        assert!(s.stopped_at(2.0).is_err());
    }

    #[test]
    fn smooth_shape_keeps_endpoints() {
        let mut p = RampParams::time_trace();
        p.shape = RampShape::SineSquared;
        let s = build_ramp(&p).unwrap();
        assert_eq!(s.evaluate(0.0).unwrap().omega, 0.0);
        assert!((s.evaluate(0.25).unwrap().omega - s.omega_max()).abs() < 1e-9);
    }
}
