//! Synthetic gather generation: dispersive ground-roll, reflection events,
//! mixtures, and noisy variants.
//!
//! Ground-roll is modeled as a linear frequency sweep inside a Tukey-tapered
//! time window that spreads symmetrically from a center trace at a fixed
//! apparent velocity, with a per-trace degradation factor. Reflections are
//! spike trains on hyperbolic and linear move-out curves convolved with a
//! Ricker wavelet. Everything is deterministic given its parameters and
//! seed.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::gather::Gather;
use crate::par;

/// Ricker wavelet of main frequency `f_m`, sampled at `dt` symmetrically
/// about t = 0 with support wide enough that |w| < 1e-6 at the ends.
///
/// w(t) = (1 − 2π²f_m²t²)·exp(−π²f_m²t²)
pub fn ricker(f_m: f64, dt: f64) -> Result<Vec<f64>> {
    if !(f_m > 0.0) {
        return Err(Error::invalid("f_m", format!("must be positive, got {f_m}")));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
    }
    let value = |t: f64| {
        let a = (std::f64::consts::PI * f_m * t).powi(2);
        (1.0 - 2.0 * a) * (-a).exp()
    };
    // |w| decays monotonically past its trough at t = sqrt(3/2)/(π f_m).
    let trough = (1.5_f64).sqrt() / (std::f64::consts::PI * f_m);
    let mut half = (trough / dt).ceil() as usize;
    while value(half as f64 * dt).abs() >= 1e-6 {
        half += 1;
    }
    Ok((-(half as i64)..=half as i64).map(|i| value(i as f64 * dt)).collect())
}

/// Continuous Tukey taper at normalized position `u` in [0, 1]: cosine
/// ramps over a fraction `alpha/2` at each side, flat 1 between.
pub fn tukey_value(u: f64, alpha: f64) -> f64 {
    if !(0.0..=1.0).contains(&u) {
        return 0.0;
    }
    if alpha <= 0.0 {
        return 1.0;
    }
    let edge = alpha / 2.0;
    if u < edge {
        0.5 * (1.0 + (std::f64::consts::PI * (2.0 * u / alpha - 1.0)).cos())
    } else if u > 1.0 - edge {
        0.5 * (1.0 + (std::f64::consts::PI * (2.0 * (1.0 - u) / alpha - 1.0)).cos())
    } else {
        1.0
    }
}

/// Discrete Tukey window of `len` samples (alpha = 0 is rectangular,
/// alpha = 1 is Hann).
pub fn tukey_window(len: usize, alpha: f64) -> Result<Vec<f64>> {
    if len == 0 {
        return Err(Error::invalid("len", "must be >= 1"));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid("alpha", format!("must be in [0, 1], got {alpha}")));
    }
    if len == 1 {
        return Ok(vec![1.0]);
    }
    let n = (len - 1) as f64;
    Ok((0..len).map(|i| tukey_value(i as f64 / n, alpha)).collect())
}

/// Linear sweep frequency f(t) = f_b + (f_e − f_b)·t/(2T). The carrier
/// sin(2π f(t) t) then sweeps its instantaneous frequency from f_b at t = 0
/// to f_e at t = T.
pub fn sweep_frequency(t: f64, f_b: f64, f_e: f64, t_dur: f64) -> Result<f64> {
    if !(t_dur > 0.0) {
        return Err(Error::invalid("t_dur", format!("must be positive, got {t_dur}")));
    }
    Ok(f_b + (f_e - f_b) * t / (2.0 * t_dur))
}

/// Per-trace sweep duration T(x).
#[derive(Debug, Clone)]
pub enum TraceDuration {
    Constant(f64),
    PerTrace(Vec<f64>),
}

impl TraceDuration {
    pub fn at(&self, x: usize) -> f64 {
        match self {
            TraceDuration::Constant(t) => *t,
            TraceDuration::PerTrace(v) => v[x],
        }
    }

    fn validate(&self, n_x: usize) -> Result<()> {
        match self {
            TraceDuration::Constant(t) if *t > 0.0 => Ok(()),
            TraceDuration::Constant(t) => {
                Err(Error::invalid("t_dur", format!("must be positive, got {t}")))
            }
            TraceDuration::PerTrace(v) => {
                if v.len() != n_x {
                    return Err(Error::invalid(
                        "t_dur",
                        format!("expected {n_x} per-trace durations, got {}", v.len()),
                    ));
                }
                if v.iter().any(|t| !(*t > 0.0)) {
                    return Err(Error::invalid("t_dur", "all durations must be positive"));
                }
                Ok(())
            }
        }
    }
}

/// Ground-roll synthesis recipe.
#[derive(Debug, Clone)]
pub struct GroundRollParams {
    /// Sweep start frequency (Hz).
    pub f_b: f64,
    /// Sweep end frequency (Hz).
    pub f_e: f64,
    /// Apparent velocity (m/s).
    pub velocity: f64,
    /// Center trace index the cone spreads from.
    pub x_center: usize,
    /// Per-trace window duration (s).
    pub duration: TraceDuration,
    /// Tukey taper ratio in [0, 1].
    pub alpha: f64,
    /// Per-trace degradation base s in (0, 1]; trace x scales by s^|x - x_c|.
    pub degradation: f64,
    /// Overall amplitude scale.
    pub amplitude: f64,
}

impl GroundRollParams {
    /// Defaults matching the training configuration: 5–15 Hz sweep, cone
    /// centered on the gather, 1.2 s window with alpha 0.5, degradation
    /// 0.98 per trace, unit amplitude.
    pub fn train_default(n_x: usize) -> Self {
        GroundRollParams {
            f_b: 5.0,
            f_e: 15.0,
            velocity: 300.0,
            x_center: n_x / 2,
            duration: TraceDuration::Constant(1.2),
            alpha: 0.5,
            degradation: 0.98,
            amplitude: 1.0,
        }
    }

    /// Random draw from the training ranges: velocity uniform in
    /// [200, 500] m/s, everything else the training defaults.
    pub fn random_train<R: Rng>(rng: &mut R, n_x: usize) -> Self {
        let mut p = GroundRollParams::train_default(n_x);
        p.velocity = rng.gen_range(200.0..=500.0);
        p
    }

    fn validate(&self, n_x: usize) -> Result<()> {
        if !(self.f_b > 0.0 && self.f_b <= self.f_e) {
            return Err(Error::invalid(
                "f_b",
                format!("need 0 < f_b <= f_e, got f_b={}, f_e={}", self.f_b, self.f_e),
            ));
        }
        if !(self.velocity > 0.0) {
            return Err(Error::invalid("velocity", "must be positive"));
        }
        if self.x_center >= n_x {
            return Err(Error::invalid(
                "x_center",
                format!("trace index {} out of range (n_x = {n_x})", self.x_center),
            ));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid("alpha", "must be in [0, 1]"));
        }
        if !(self.degradation > 0.0 && self.degradation <= 1.0) {
            return Err(Error::invalid("degradation", "must be in (0, 1]"));
        }
        if !self.amplitude.is_finite() {
            return Err(Error::invalid("amplitude", "must be finite"));
        }
        self.duration.validate(n_x)
    }
}

/// Synthesize a ground-roll gather.
///
/// Trace x onsets at t_on = |x − x_c|·dx/v and carries
/// `amplitude · Tukey((t − t_on)/T) · s^|x−x_c| · sin(2π f(t−t_on)(t−t_on))`
/// inside [t_on, t_on + T(x)], exactly zero elsewhere.
pub fn synth_ground_roll(
    p: &GroundRollParams,
    n_t: usize,
    n_x: usize,
    dt: f64,
    dx: f64,
) -> Result<Gather> {
    if n_t == 0 || n_x == 0 {
        return Err(Error::invalid("n_t", "grid must be non-empty"));
    }
    if !(dt > 0.0) || !(dx > 0.0) {
        return Err(Error::invalid("dt", "sampling steps must be positive"));
    }
    p.validate(n_x)?;

    let columns = par::map_indexed(n_x, |x| {
        let offset = (x as f64 - p.x_center as f64).abs();
        let t_on = offset * dx / p.velocity;
        let t_dur = p.duration.at(x);
        let scale = p.amplitude * p.degradation.powf(offset);
        let mut col = vec![0.0; n_t];
        for (i, v) in col.iter_mut().enumerate() {
            let tau = i as f64 * dt - t_on;
            if tau >= 0.0 && tau <= t_dur {
                let f = p.f_b + (p.f_e - p.f_b) * tau / (2.0 * t_dur);
                *v = scale
                    * tukey_value(tau / t_dur, p.alpha)
                    * (2.0 * std::f64::consts::PI * f * tau).sin();
            }
        }
        col
    });

    let mut grid = Array2::zeros((n_t, n_x));
    for (x, col) in columns.iter().enumerate() {
        for (t, &v) in col.iter().enumerate() {
            grid[[t, x]] = v;
        }
    }
    Gather::new(dt, dx, grid)
}

/// Hyperbolic reflection event: t(x) = sqrt(t0² + ((x·dx − x_off)/v_nmo)²).
#[derive(Debug, Clone)]
pub struct HyperbolicEvent {
    pub t0: f64,
    pub v_nmo: f64,
    pub amp: f64,
}

/// Linear event (direct wave): t(x) = t0 + slowness·|x·dx − x_off|.
#[derive(Debug, Clone)]
pub struct LinearEvent {
    pub t0: f64,
    pub slowness: f64,
    pub amp: f64,
}

/// Reflection synthesis recipe.
#[derive(Debug, Clone)]
pub struct ReflectionParams {
    /// Ricker wavelet main frequency (Hz).
    pub ricker_hz: f64,
    pub hyperbolic: Vec<HyperbolicEvent>,
    pub linear: Vec<LinearEvent>,
    /// Source position in meters; defaults to the center trace.
    pub x_offset_m: Option<f64>,
}

impl ReflectionParams {
    /// Random event set in the training ranges: one linear direct wave and
    /// `n_hyperbolic` hyperbolas with random times, velocities and signed
    /// amplitudes.
    pub fn random_train<R: Rng>(rng: &mut R, t_max: f64, n_hyperbolic: usize) -> Self {
        let hyperbolic = (0..n_hyperbolic)
            .map(|_| {
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                HyperbolicEvent {
                    t0: rng.gen_range(0.08..0.9 * t_max),
                    v_nmo: rng.gen_range(1500.0..4000.0),
                    amp: sign * rng.gen_range(0.5..1.5),
                }
            })
            .collect();
        let linear = vec![LinearEvent {
            t0: rng.gen_range(0.01..0.05),
            slowness: 1.0 / rng.gen_range(1000.0..2500.0),
            amp: rng.gen_range(0.5..1.0),
        }];
        ReflectionParams { ricker_hz: 50.0, hyperbolic, linear, x_offset_m: None }
    }

    fn validate(&self) -> Result<()> {
        if !(self.ricker_hz > 0.0) {
            return Err(Error::invalid("ricker_hz", "must be positive"));
        }
        for ev in &self.hyperbolic {
            if !(ev.t0 >= 0.0 && ev.t0.is_finite()) || !ev.amp.is_finite() || !(ev.v_nmo > 0.0) {
                return Err(Error::invalid(
                    "hyperbolic",
                    format!("event t0={}, v_nmo={}, amp={} invalid", ev.t0, ev.v_nmo, ev.amp),
                ));
            }
        }
        for ev in &self.linear {
            if !(ev.t0 >= 0.0 && ev.t0.is_finite()) || !ev.amp.is_finite() || !ev.slowness.is_finite()
            {
                return Err(Error::invalid(
                    "linear",
                    format!("event t0={}, slowness={}, amp={} invalid", ev.t0, ev.slowness, ev.amp),
                ));
            }
        }
        Ok(())
    }
}

/// A reflection gather plus the count of events whose move-out curve fell
/// entirely outside the time range and were skipped.
#[derive(Debug, Clone)]
pub struct ReflectionSynthesis {
    pub gather: Gather,
    pub skipped_events: usize,
}

/// Synthesize reflections: spike reflectivity on each event's move-out
/// curve, convolved per trace with the Ricker wavelet.
pub fn synth_reflections(
    p: &ReflectionParams,
    n_t: usize,
    n_x: usize,
    dt: f64,
    dx: f64,
) -> Result<ReflectionSynthesis> {
    if n_t == 0 || n_x == 0 {
        return Err(Error::invalid("n_t", "grid must be non-empty"));
    }
    if !(dt > 0.0) || !(dx > 0.0) {
        return Err(Error::invalid("dt", "sampling steps must be positive"));
    }
    p.validate()?;

    let x_off = p.x_offset_m.unwrap_or((n_x / 2) as f64 * dx);
    let wavelet = ricker(p.ricker_hz, dt)?;
    let half = wavelet.len() / 2;

    // Event arrival time per trace, or None when out of range.
    let mut curves: Vec<(f64, Vec<Option<usize>>)> = Vec::new();
    let mut skipped = 0usize;
    let arrival = |t: f64| -> Option<usize> {
        let idx = (t / dt).round() as i64;
        (0..n_t as i64).contains(&idx).then_some(idx as usize)
    };
    for ev in &p.hyperbolic {
        let picks: Vec<Option<usize>> = (0..n_x)
            .map(|x| {
                let off = x as f64 * dx - x_off;
                arrival((ev.t0 * ev.t0 + (off / ev.v_nmo).powi(2)).sqrt())
            })
            .collect();
        if picks.iter().all(|p| p.is_none()) {
            skipped += 1;
        } else {
            curves.push((ev.amp, picks));
        }
    }
    for ev in &p.linear {
        let picks: Vec<Option<usize>> = (0..n_x)
            .map(|x| arrival(ev.t0 + ev.slowness * (x as f64 * dx - x_off).abs()))
            .collect();
        if picks.iter().all(|p| p.is_none()) {
            skipped += 1;
        } else {
            curves.push((ev.amp, picks));
        }
    }

    let columns = par::map_indexed(n_x, |x| {
        let mut col = vec![0.0; n_t];
        for (amp, picks) in &curves {
            if let Some(spike) = picks[x] {
                // Scatter the wavelet centered on the spike sample.
                for (k, &w) in wavelet.iter().enumerate() {
                    let i = spike as i64 + k as i64 - half as i64;
                    if (0..n_t as i64).contains(&i) {
                        col[i as usize] += amp * w;
                    }
                }
            }
        }
        col
    });

    let mut grid = Array2::zeros((n_t, n_x));
    for (x, col) in columns.iter().enumerate() {
        for (t, &v) in col.iter().enumerate() {
            grid[[t, x]] = v;
        }
    }
    Ok(ReflectionSynthesis { gather: Gather::new(dt, dx, grid)?, skipped_events: skipped })
}

/// Element-wise sum of two gathers sharing geometry.
pub fn mix(a: &Gather, b: &Gather) -> Result<Gather> {
    if !a.same_geometry(b) {
        return Err(Error::DimensionMismatch(format!(
            "mix: {:?} dt={} dx={} vs {:?} dt={} dx={}",
            a.samples().dim(),
            a.dt(),
            a.dx(),
            b.samples().dim(),
            b.dt(),
            b.dx()
        )));
    }
    a.with_samples(a.samples() + b.samples())
}

/// Add zero-mean white Gaussian noise scaled so that the noise holds exactly
/// `energy_ratio` of the output's total energy. The scale is solved in
/// closed form from the sampled noise energy and the mixture/noise cross
/// term, so the realized ratio matches to machine precision.
pub fn add_gaussian_noise(m: &Gather, energy_ratio: f64, seed: u64) -> Result<Gather> {
    if !(0.0..1.0).contains(&energy_ratio) {
        return Err(Error::invalid(
            "energy_ratio",
            format!("must be in [0, 1), got {energy_ratio}"),
        ));
    }
    if energy_ratio == 0.0 {
        return Ok(m.clone());
    }
    let mixture_energy = m.energy();
    if mixture_energy == 0.0 {
        return Err(Error::invalid("mixture", "zero energy, cannot set a noise ratio"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..m.samples().len()).map(|_| StandardNormal.sample(&mut rng)).collect();

    let noise_energy: f64 = noise.iter().map(|v| v * v).sum();
    let cross: f64 = m.samples().iter().zip(&noise).map(|(a, b)| a * b).sum();
    // Solve a²N(1−r) − 2rCa − rM = 0 for the positive root a.
    let r = energy_ratio;
    let disc = (r * cross).powi(2) + noise_energy * (1.0 - r) * r * mixture_energy;
    let a = (r * cross + disc.sqrt()) / (noise_energy * (1.0 - r));

    let mut grid = m.samples().clone();
    for (g, n) in grid.iter_mut().zip(&noise) {
        *g += a * n;
    }
    m.with_samples(grid)
}
