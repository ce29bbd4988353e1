//! Piecewise-linear control waveforms for the Rabi frequency and detuning.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DeviceParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Omega,
    Delta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Linear,
    Hold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    pub shape: Shape,
    pub start: f64,
    pub end: f64,
}

impl Segment {
    pub fn linear(t_start: f64, t_end: f64, start: f64, end: f64) -> Self {
        Segment { t_start, t_end, shape: Shape::Linear, start, end }
    }

    pub fn hold(t_start: f64, t_end: f64, value: f64) -> Self {
        Segment { t_start, t_end, shape: Shape::Hold, start: value, end: value }
    }

    fn value_at(&self, t: f64) -> f64 {
        match self.shape {
            Shape::Hold => self.start,
            Shape::Linear => {
                let len = self.t_end - self.t_start;
                if len <= 0.0 {
                    return self.end;
                }
                let x = ((t - self.t_start) / len).clamp(0.0, 1.0);
                self.start + (self.end - self.start) * x
            }
        }
    }

    /// Exact integral over `[a, b]` (clipped to the segment).
    fn integral(&self, a: f64, b: f64) -> f64 {
        let (a, b) = (a.max(self.t_start), b.min(self.t_end));
        if b <= a {
            return 0.0;
        }
        0.5 * (self.value_at(a) + self.value_at(b)) * (b - a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub channel: Channel,
    pub segments: Vec<Segment>,
}

impl Waveform {
    pub fn new(channel: Channel, segments: Vec<Segment>) -> Result<Self> {
        let w = Waveform { channel, segments };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::Constraint(format!("{:?} waveform has no segments", self.channel)));
        }
        let mut t = self.segments[0].t_start;
        for s in &self.segments {
            if (s.t_start - t).abs() > 1e-12 * t.abs().max(s.t_end.abs()).max(1e-30) {
                return Err(Error::Constraint(format!("{:?} segments are not contiguous at t = {t}", self.channel)));
            }
            if s.t_end < s.t_start {
                return Err(Error::Constraint(format!("{:?} segment ends before it starts", self.channel)));
            }
            if s.shape == Shape::Hold && s.start != s.end {
                return Err(Error::Constraint("hold segment with differing end values".into()));
            }
            if self.channel == Channel::Omega && (s.start < 0.0 || s.end < 0.0) {
                return Err(Error::Constraint("Rabi frequency must stay non-negative".into()));
            }
            t = s.t_end;
        }
        Ok(())
    }

    pub fn start_time(&self) -> f64 {
        self.segments[0].t_start
    }

    pub fn end_time(&self) -> f64 {
        self.segments.last().map(|s| s.t_end).unwrap_or(0.0)
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let idx = self.segments.partition_point(|s| s.t_end < t);
        match self.segments.get(idx) {
            Some(s) => s.value_at(t),
            None => self.segments.last().map(|s| s.end).unwrap_or(0.0),
        }
    }

    pub fn integral(&self, a: f64, b: f64) -> f64 {
        self.segments.iter().map(|s| s.integral(a, b)).sum()
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.segments.iter().map(|s| s.t_start).collect();
        v.push(self.end_time());
        v
    }

    pub fn max_abs(&self) -> f64 {
        self.segments.iter().map(|s| s.start.abs().max(s.end.abs())).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    Adiabatic,
    Quench,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub omega: Waveform,
    pub delta: Waveform,
    pub total_time: f64,
    pub kind: ProtocolKind,
}

/// Edge timings. Physical defaults are in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Shortest allowed slow (acousto-optic) ramp.
    pub min_slow_rise: f64,
    /// Duration of the fast (electro-optic) edges.
    pub fast_edge: f64,
    /// Allowed plateau window for quenches.
    pub hold_min: f64,
    pub hold_max: f64,
}

impl Timing {
    pub fn physical() -> Self {
        Timing { min_slow_rise: 80e-9, fast_edge: 20e-9, hold_min: 100e-9, hold_max: 5.9e-6 }
    }

    /// No rise-time constraints and zero-length edges (ideal quench).
    pub fn ideal() -> Self {
        Timing { min_slow_rise: 0.0, fast_edge: 0.0, hold_min: 0.0, hold_max: f64::INFINITY }
    }
}

impl Default for Timing {
    fn default() -> Self {
        Self::physical()
    }
}

/// Default sweep length, 5 us.
pub const DEFAULT_ADIABATIC_TIME: f64 = 5e-6;

/// Quasi-adiabatic preparation: from `(Omega, delta) = (0, -3 U1)` both
/// channels ramp linearly over `ramp_fraction * t_total` to
/// `(dev.omega, target_delta)`, hold, and `Omega` is switched off with a fast
/// edge at the end.
pub fn make_adiabatic(
    dev: &DeviceParams,
    target_delta: f64,
    t_total: f64,
    ramp_fraction: f64,
    timing: &Timing,
) -> Result<Protocol> {
    if !(t_total > 0.0) {
        return Err(Error::Constraint(format!("total time must be positive, got {t_total}")));
    }
    if !(0.0..=1.0).contains(&ramp_fraction) {
        return Err(Error::Constraint(format!("ramp fraction {ramp_fraction} outside [0, 1]")));
    }
    dev.check_drive(dev.omega, target_delta).map_err(|e| Error::Constraint(e.to_string()))?;
    let delta0 = -3.0 * dev.u1();
    dev.check_drive(0.0, delta0).map_err(|e| Error::Constraint(e.to_string()))?;
    let t_rise = ramp_fraction * t_total;
    let t_down = timing.fast_edge;
    if t_rise < timing.min_slow_rise {
        return Err(Error::Constraint(format!(
            "rise time {t_rise:.3e} s is shorter than the minimum {:.3e} s",
            timing.min_slow_rise
        )));
    }
    if t_rise + t_down > t_total * (1.0 + 1e-12) {
        return Err(Error::Constraint("ramps do not fit in the total time".into()));
    }
    let t_off = t_total - t_down;
    let omega = Waveform::new(
        Channel::Omega,
        vec![
            Segment::linear(0.0, t_rise, 0.0, dev.omega),
            Segment::hold(t_rise, t_off, dev.omega),
            Segment::linear(t_off, t_total, dev.omega, 0.0),
        ],
    )?;
    let delta = Waveform::new(
        Channel::Delta,
        vec![Segment::linear(0.0, t_rise, delta0, target_delta), Segment::hold(t_rise, t_total, target_delta)],
    )?;
    Ok(Protocol { omega, delta, total_time: t_total, kind: ProtocolKind::Adiabatic })
}

/// Square pulse: fast linear edges up to `(dev.omega, hold_delta)`, plateau
/// of `t_hold`, fast edge of `Omega` back to zero.
pub fn make_quench(dev: &DeviceParams, hold_delta: f64, t_hold: f64, timing: &Timing) -> Result<Protocol> {
    dev.check_drive(dev.omega, hold_delta).map_err(|e| Error::Constraint(e.to_string()))?;
    let edge = timing.fast_edge;
    if t_hold < 2.0 * edge {
        return Err(Error::Constraint(format!("hold {t_hold:.3e} s shorter than two edges ({edge:.3e} s each)")));
    }
    let eps = 1e-12;
    if t_hold < timing.hold_min * (1.0 - eps) || t_hold > timing.hold_max * (1.0 + eps) {
        return Err(Error::Constraint(format!(
            "hold {t_hold:.3e} s outside [{:.3e}, {:.3e}]",
            timing.hold_min, timing.hold_max
        )));
    }
    let t1 = edge;
    let t2 = edge + t_hold;
    let total = t2 + edge;
    let omega = Waveform::new(
        Channel::Omega,
        vec![
            Segment::linear(0.0, t1, 0.0, dev.omega),
            Segment::hold(t1, t2, dev.omega),
            Segment::linear(t2, total, dev.omega, 0.0),
        ],
    )?;
    let delta = Waveform::new(
        Channel::Delta,
        vec![Segment::linear(0.0, t1, 0.0, hold_delta), Segment::hold(t1, total, hold_delta)],
    )?;
    Ok(Protocol { omega, delta, total_time: total, kind: ProtocolKind::Quench })
}

/// One propagation step with midpoint-sampled drive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub t0: f64,
    pub dt: f64,
    pub omega: f64,
    pub delta: f64,
}

impl Protocol {
    pub fn validate(&self) -> Result<()> {
        self.omega.validate()?;
        self.delta.validate()?;
        for w in [&self.omega, &self.delta] {
            if w.start_time().abs() > 0.0 || (w.end_time() - self.total_time).abs() > 1e-12 * self.total_time.max(1e-30) {
                return Err(Error::Constraint(format!("{:?} waveform does not span [0, T]", w.channel)));
            }
        }
        Ok(())
    }

    pub fn check_limits(&self, dev: &DeviceParams) -> Result<()> {
        for s in &self.omega.segments {
            dev.check_drive(s.start, 0.0)?;
            dev.check_drive(s.end, 0.0)?;
        }
        for s in &self.delta.segments {
            dev.check_drive(0.0, s.start)?;
            dev.check_drive(0.0, s.end)?;
        }
        Ok(())
    }

    fn breakpoints(&self) -> Vec<f64> {
        let mut b = self.omega.breakpoints();
        b.extend(self.delta.breakpoints());
        b.sort_by(|a, c| a.partial_cmp(c).unwrap());
        b.dedup_by(|a, c| (*a - *c).abs() <= 1e-12 * self.total_time);
        b
    }

    /// Time grid of roughly uniform `dt` steps over `[0, T]`, never straddling
    /// a waveform breakpoint so that midpoint sampling integrates each linear
    /// piece exactly.
    pub fn sample(&self, dt: f64) -> Vec<Step> {
        self.sample_range(0.0, self.total_time, dt)
    }

    /// As [`Protocol::sample`] over `[t_from, t_to]`.
    pub fn sample_range(&self, t_from: f64, t_to: f64, dt: f64) -> Vec<Step> {
        assert!(dt > 0.0, "dt must be positive");
        let mut cuts: Vec<f64> = self
            .breakpoints()
            .into_iter()
            .filter(|&b| b > t_from && b < t_to)
            .collect();
        cuts.insert(0, t_from);
        cuts.push(t_to);
        let mut steps = Vec::new();
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let span = b - a;
            if span <= 1e-15 * self.total_time.max(1e-30) {
                continue;
            }
            let full = (span / dt * (1.0 + 1e-12)).floor() as usize;
            let mut t = a;
            for k in 0..full {
                let t_next = a + (k + 1) as f64 * dt;
                steps.push(self.step(t, t_next - t));
                t = t_next;
            }
            if b - t > 1e-12 * dt {
                steps.push(self.step(t, b - t));
            } else if let Some(last) = steps.last_mut() {
                // absorb rounding so the grid ends exactly on b
                last.dt = b - last.t0;
            }
        }
        steps
    }

    fn step(&self, t0: f64, dt: f64) -> Step {
        let mid = t0 + 0.5 * dt;
        Step { t0, dt, omega: self.omega.value_at(mid), delta: self.delta.value_at(mid) }
    }

    /// CSV rows `t, Omega/2pi, delta/2pi` at grid points and breakpoints.
    pub fn render_csv(&self, dt: f64) -> String {
        let mut times: Vec<f64> = self.sample(dt).iter().map(|s| s.t0).collect();
        times.extend(self.breakpoints());
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        times.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * self.total_time);
        let tau = 2.0 * std::f64::consts::PI;
        let mut out = String::from("t,omega_2pi,delta_2pi\n");
        for t in times {
            out.push_str(&format!(
                "{:.12e},{:.12e},{:.12e}\n",
                t,
                self.omega.value_at(t) / tau,
                self.delta.value_at(t) / tau
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DeviceParams, TWO_PI_MHZ};
    use proptest::prelude::*;

    fn device() -> DeviceParams {
        let mut d = DeviceParams::default_physical();
        d.c6 = 3.7 * TWO_PI_MHZ * 9f64.powi(6);
        d.omega = 2.0 * TWO_PI_MHZ;
        d
    }

    #[test]
    fn adiabatic_starts_at_minus_three_u1() {
        let dev = device();
        let p = make_adiabatic(&dev, 0.0, DEFAULT_ADIABATIC_TIME, 0.5, &Timing::physical()).unwrap();
        assert!((p.delta.value_at(0.0).abs() / TWO_PI_MHZ - 11.1).abs() < 1e-9);
        assert_eq!(p.omega.value_at(0.0), 0.0);
        assert_eq!(p.omega.value_at(p.total_time), 0.0);
        assert_eq!(p.total_time, 5e-6);
        p.validate().unwrap();
        p.check_limits(&dev).unwrap();
    }

    #[test]
    fn adiabatic_flat_delta_when_target_is_start() {
        let dev = device();
        let d0 = -3.0 * dev.u1();
        let p = make_adiabatic(&dev, d0, 5e-6, 0.5, &Timing::physical()).unwrap();
        for s in p.sample(1e-7) {
            assert!((s.delta - d0).abs() < 1e-9 * d0.abs());
        }
    }

    #[test]
    fn adiabatic_rise_constraint() {
        let dev = device();
        assert!(matches!(make_adiabatic(&dev, 0.0, 100e-9, 0.5, &Timing::physical()), Err(Error::Constraint(_))));
    }

    #[test]
    fn quench_window() {
        let dev = device();
        let t = Timing::physical();
        assert!(make_quench(&dev, 0.0, 0.1e-6, &t).is_ok());
        assert!(make_quench(&dev, 0.0, 5.9e-6, &t).is_ok());
        assert!(make_quench(&dev, 0.0, 30e-9, &t).is_err());
        assert!(make_quench(&dev, 0.0, 6.5e-6, &t).is_err());
        let ideal = make_quench(&dev, 1.0, 1e-6, &Timing::ideal()).unwrap();
        for s in ideal.sample(1e-8) {
            assert_eq!(s.omega, dev.omega);
            assert_eq!(s.delta, 1.0);
        }
    }

    #[test]
    fn midpoint_samples_on_linear_ramp() {
        let w = Waveform::new(Channel::Omega, vec![Segment::linear(0.0, 1e-6, 0.0, 4.0)]).unwrap();
        let d = Waveform::new(Channel::Delta, vec![Segment::hold(0.0, 1e-6, 0.0)]).unwrap();
        let p = Protocol { omega: w, delta: d, total_time: 1e-6, kind: ProtocolKind::Adiabatic };
        let s = p.sample(0.5e-6);
        assert_eq!(s.len(), 2);
        assert!((s[0].omega - 1.0).abs() < 1e-12 && (s[1].omega - 3.0).abs() < 1e-12);
        assert!(s.iter().all(|x| x.delta == 0.0));
    }

    #[test]
    fn step_count_matches_resolution() {
        let dev = DeviceParams::unit_j1(2.16, 0.0);
        let p = make_adiabatic(&dev, 1.0, 20.0, 0.5, &Timing { fast_edge: 0.05, ..Timing::ideal() }).unwrap();
        let n = p.sample(1e-3).len();
        assert!((n as f64 - 20.0 * 1e3).abs() <= 4.0, "{n}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn sampled_integral_is_exact(
            t_total in 0.5e-6..8e-6f64,
            frac in 0.05..0.9f64,
            dt_frac in 1e-3..0.3f64,
            target in -10.0..10.0f64,
            om in 0.0..2.0f64,
        ) {
            let dev = device().with_drive(om * TWO_PI_MHZ, 0.0);
            let timing = Timing { min_slow_rise: 0.0, ..Timing::physical() };
            let p = make_adiabatic(&dev, target * TWO_PI_MHZ, t_total, frac, &timing).unwrap();
            let steps = p.sample(dt_frac * t_total);
            let approx: f64 = steps.iter().map(|s| s.omega * s.dt).sum();
            let exact = p.omega.integral(0.0, p.total_time);
            prop_assert!((approx - exact).abs() <= 1e-9 * exact.abs().max(1e-30));
            let span: f64 = steps.iter().map(|s| s.dt).sum();
            prop_assert!((span - t_total).abs() <= 1e-12 * t_total);
            for s in &steps {
                prop_assert!(dev.check_drive(s.omega, s.delta).is_ok());
            }
        }

        #[test]
        fn quench_samples_respect_channel_limits(
            om in 0.0..2.0f64,
            target in -14.0..14.0f64,
            hold in 0.1e-6..5.9e-6f64,
            dt_frac in 1e-3..0.3f64,
        ) {
            let dev = device().with_drive(om * TWO_PI_MHZ, 0.0);
            let p = make_quench(&dev, target * TWO_PI_MHZ, hold, &Timing::physical()).unwrap();
            prop_assert!(p.check_limits(&dev).is_ok());
            for s in p.sample(dt_frac * p.total_time) {
                prop_assert!(dev.check_drive(s.omega, s.delta).is_ok());
            }
        }

        #[test]
        fn adiabatic_waveform_continuity(
            frac in 0.1..0.9f64,
            target in -10.0..10.0f64,
        ) {
            let dev = device();
            let p = make_adiabatic(&dev, target * TWO_PI_MHZ, 5e-6, frac, &Timing::physical()).unwrap();
            let jump = |dt: f64| {
                let s = p.sample(dt);
                s.windows(2)
                    .map(|w| (w[1].omega - w[0].omega).abs().max((w[1].delta - w[0].delta).abs()))
                    .fold(0.0, f64::max)
            };
            let coarse = jump(1e-8);
            let fine = jump(1e-9);
            prop_assert!(fine < 0.6 * coarse);
        }
    }
}
