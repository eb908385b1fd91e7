//! Backward self-similar frames.
//!
//! Around a blowup point `x₀` with estimated time `T̂` a snapshot is pulled
//! back to `z(y, s) = (T̂ − t) u(x₀ + y (T̂ − t)^{1/2}, t)`, `s = −log(T̂ − t)`.
//! Frames are post-processing only; nothing here integrates the rescaled
//! equation.

use std::io::{self, Write};

use crate::diagnostics::BlowupEstimate;
use crate::error::{Error, Result};
use crate::grid::{rect_fraction_inside, Disk, DomainKind, Field, Point};
use crate::radial_oracle::MassProfile;
use crate::scalar::{ksum, median, Real};

/// Sampled `z` on a square `y`-grid or on radial shells.
#[derive(Debug, Clone, PartialEq)]
pub enum FrameGeometry<T> {
    /// `n × n` cells covering `[−half_width, half_width]²`, row-major in `y₂`.
    Planar { n: usize, half_width: T, z: Vec<T> },
    /// `n` shells of width `outer / n`; `z` is the shell average.
    Radial { n: usize, outer: T, z: Vec<T> },
}

impl<T: Real> FrameGeometry<T> {
    pub fn values(&self) -> &[T] {
        match self {
            FrameGeometry::Planar { z, .. } | FrameGeometry::Radial { z, .. } => z,
        }
    }

    /// Cell centre of entry `k` (radial: `(ρ, 0)`).
    pub fn node(&self, k: usize) -> Point<T> {
        match *self {
            FrameGeometry::Planar { n, half_width, .. } => {
                let d = T::lit(2.0) * half_width / T::from_usize_lossy(n);
                let c = |i: usize| -half_width + (T::from_usize_lossy(i) + T::lit(0.5)) * d;
                (c(k % n), c(k / n))
            }
            FrameGeometry::Radial { n, outer, .. } => ((T::from_usize_lossy(k) + T::lit(0.5)) * outer / T::from_usize_lossy(n), T::zero()),
        }
    }

    /// Mass and second moment over the disk `|y| ≤ radius`.
    fn moments(&self, radius: T) -> (T, T) {
        match self {
            FrameGeometry::Planar { n, half_width, z } => {
                let d = T::lit(2.0) * *half_width / T::from_usize_lossy(*n);
                let disk = [Disk::new((T::zero(), T::zero()), radius)];
                let mut mass = Vec::with_capacity(z.len());
                let mut moment = Vec::with_capacity(z.len());
                for (k, &zk) in z.iter().enumerate() {
                    let (i, j) = (k % n, k / n);
                    let x0 = -*half_width + T::from_usize_lossy(i) * d;
                    let y0 = -*half_width + T::from_usize_lossy(j) * d;
                    let w = rect_fraction_inside(x0, x0 + d, y0, y0 + d, &disk);
                    if w > T::zero() {
                        let (yx, yy) = self.node(k);
                        mass.push(zk * w);
                        moment.push(zk * w * (yx * yx + yy * yy));
                    }
                }
                (ksum(mass) * d * d, ksum(moment) * d * d)
            }
            FrameGeometry::Radial { n, outer, z } => {
                let d = *outer / T::from_usize_lossy(*n);
                let mut mass = Vec::with_capacity(z.len());
                let mut moment = Vec::with_capacity(z.len());
                for (i, &zi) in z.iter().enumerate() {
                    let a = T::from_usize_lossy(i) * d;
                    let b = (a + d).min(radius);
                    if b <= a {
                        break;
                    }
                    mass.push(zi * T::PI() * (b * b - a * a));
                    moment.push(zi * T::FRAC_PI_2() * (b.powi(4) - a.powi(4)));
                }
                (ksum(mass), ksum(moment))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RescaledFrame<T> {
    pub t: T,
    pub s: T,
    /// `T̂ − t`.
    pub tau: T,
    pub x0: Point<T>,
    pub y_max: T,
    pub geometry: FrameGeometry<T>,
    /// `∫_{|y| ≤ y_max} z dy`.
    pub frame_mass: T,
    /// `∫_{|y| ≤ y_max} |y|² z dy`.
    pub second_moment: T,
}

impl<T: Real> RescaledFrame<T> {
    /// `yx,yy,z` rows (radial frames write `ρ,0,z`).
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "yx,yy,z")?;
        for (k, z) in self.geometry.values().iter().enumerate() {
            let (a, b) = self.geometry.node(k);
            writeln!(w, "{a},{b},{z}")?;
        }
        Ok(())
    }
}

/// Pulls `f` at time `t` back to the frame of `est` around `x0`.
pub fn make_frame<T: Real>(f: &Field<T>, t: T, est: &BlowupEstimate<T>, x0: Point<T>, y_max: T, n_y: usize) -> Result<RescaledFrame<T>> {
    if !(est.t_hat > t) {
        return Err(Error::InvalidEstimate(format!("frame time {t} is not before T̂ = {}", est.t_hat)));
    }
    frame_with_tau(f, t, est.t_hat - t, x0, y_max, n_y)
}

/// [`make_frame`] with `T̂ − t` given directly.
pub fn frame_with_tau<T: Real>(f: &Field<T>, t: T, tau: T, x0: Point<T>, y_max: T, n_y: usize) -> Result<RescaledFrame<T>> {
    if !(tau > T::zero()) || !(y_max > T::zero()) || n_y < 2 {
        return Err(Error::InvalidArgument("frames need T̂ − t > 0, y_max > 0 and at least two cells".into()));
    }
    let g = f.grid();
    let scale = tau.sqrt();
    let reach = y_max * scale;
    let geometry = match g.kind() {
        DomainKind::Square => {
            let l = g.length();
            if x0.0 - reach < T::zero() || x0.1 - reach < T::zero() || x0.0 + reach > l || x0.1 + reach > l {
                return Err(Error::Geometry(format!("pullback window of half-width {reach} leaves the domain")));
            }
            let mut geometry = FrameGeometry::Planar { n: n_y, half_width: y_max, z: Vec::new() };
            let z = (0..n_y * n_y)
                .map(|k| {
                    let (yx, yy) = geometry.node(k);
                    tau * f.sample((x0.0 + yx * scale, x0.1 + yy * scale))
                })
                .collect();
            if let FrameGeometry::Planar { z: slot, .. } = &mut geometry {
                *slot = z;
            }
            geometry
        }
        DomainKind::RadialDisk => {
            if x0.0.hypot(x0.1) > T::lit(1e-12) * g.length() {
                return Err(Error::Geometry("radial frames are centred at the origin".into()));
            }
            if reach > g.length() * (T::one() + T::lit(1e-12)) {
                return Err(Error::Geometry(format!("pullback radius {reach} exceeds the disk radius {}", g.length())));
            }
            // Conservative remap: shell averages from the exact cumulative mass.
            let profile = MassProfile::from_field(f)?;
            let d = y_max / T::from_usize_lossy(n_y);
            let z = (0..n_y)
                .map(|i| {
                    let a = T::from_usize_lossy(i) * d;
                    let b = a + d;
                    let dm = profile.mass_at(b * scale) - profile.mass_at(a * scale);
                    dm / (T::PI() * (b * b - a * a))
                })
                .collect();
            FrameGeometry::Radial { n: n_y, outer: y_max, z }
        }
    };
    let (frame_mass, second_moment) = geometry.moments(y_max);
    Ok(RescaledFrame { t, s: -tau.ln(), tau, x0, y_max, geometry, frame_mass, second_moment })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopePoint<T> {
    pub s: T,
    pub frame_mass: T,
    pub second_moment: T,
    /// Second moment above three times the series median.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeSeries<T> {
    pub points: Vec<EnvelopePoint<T>>,
    pub median_second_moment: T,
    pub s_increasing: bool,
}

pub const ENVELOPE_FLAG_FACTOR: f64 = 3.0;

impl<T: Real> EnvelopeSeries<T> {
    pub fn flagged(&self) -> usize {
        self.points.iter().filter(|p| p.flagged).count()
    }

    /// Points with `s ≥ s_last − span`.
    pub fn tail(&self, span: T) -> &[EnvelopePoint<T>] {
        let Some(last) = self.points.last() else {
            return &[];
        };
        let start = self.points.iter().position(|p| p.s >= last.s - span).unwrap_or(self.points.len());
        &self.points[start..]
    }

    /// Mean frame mass over the last `span` units of `s`.
    pub fn plateau(&self, span: T) -> Option<T> {
        let tail = self.tail(span);
        if tail.is_empty() {
            return None;
        }
        Some(tail.iter().map(|p| p.frame_mass).sum::<T>() / T::from_usize_lossy(tail.len()))
    }
}

pub fn envelope_series<T: Real>(frames: &[RescaledFrame<T>]) -> Result<EnvelopeSeries<T>> {
    if let Some(first) = frames.first() {
        if frames.iter().any(|f| f.x0 != first.x0 || f.y_max != first.y_max) {
            return Err(Error::InvalidArgument("envelope frames must share x0 and y_max".into()));
        }
    }
    let moments: Vec<T> = frames.iter().map(|f| f.second_moment).collect();
    let med = median(&moments).unwrap_or(T::zero());
    let limit = T::lit(ENVELOPE_FLAG_FACTOR) * med;
    let points = frames
        .iter()
        .map(|f| EnvelopePoint { s: f.s, frame_mass: f.frame_mass, second_moment: f.second_moment, flagged: f.second_moment > limit })
        .collect();
    Ok(EnvelopeSeries { points, median_second_moment: med, s_increasing: frames.windows(2).all(|w| w[1].s > w[0].s) })
}

pub const SENSITIVITY_PERTURBATION: f64 = 1e-3;
pub const SENSITIVITY_TOLERANCE: f64 = 0.01;

/// Plateau levels under `T̂ → T̂ (1 ± 10⁻³)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauSensitivity<T> {
    pub base: T,
    pub lower: Option<T>,
    pub upper: Option<T>,
    /// Largest relative shift of a perturbed plateau from the base one.
    pub max_shift: T,
    pub stable: bool,
}

/// Recomputes the envelope for perturbed `T̂`. Snapshots at or beyond a
/// perturbed `T̂`, or whose window no longer fits, are dropped from that
/// series.
pub fn envelope_sensitivity<T: Real>(
    snapshots: &[(T, &Field<T>)],
    est: &BlowupEstimate<T>,
    x0: Point<T>,
    y_max: T,
    n_y: usize,
    span: T,
) -> Result<PlateauSensitivity<T>> {
    let series = |e: &BlowupEstimate<T>| -> Result<Option<T>> {
        let frames: Vec<_> = snapshots.iter().filter_map(|(t, f)| make_frame(f, *t, e, x0, y_max, n_y).ok()).collect();
        Ok(envelope_series(&frames)?.plateau(span))
    };
    let base = series(est)?.ok_or_else(|| Error::InvalidArgument("no valid frame for the unperturbed estimate".into()))?;
    let eps = T::lit(SENSITIVITY_PERTURBATION);
    let lower = series(&est.scaled(T::one() - eps))?;
    let upper = series(&est.scaled(T::one() + eps))?;
    let shift = |p: Option<T>| p.map_or(T::infinity(), |p| ((p - base) / base).abs());
    let max_shift = shift(lower).max(shift(upper));
    Ok(PlateauSensitivity { base, lower, upper, max_shift, stable: max_shift < T::lit(SENSITIVITY_TOLERANCE) })
}

/// `a(y′, s′) = e^s z(e^{s/2} y′)` with `s′ = −e^{−s}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledBackFrame<T> {
    pub s_prime: T,
    /// Same layout as the source frame with every length scaled by `e^{−s/2}`.
    pub geometry: FrameGeometry<T>,
    pub mass: T,
}

/// The `y′`-grid is the image of the frame's grid, so no interpolation is
/// needed and mass is preserved up to rounding.
pub fn scale_back<T: Real>(frame: &RescaledFrame<T>) -> ScaledBackFrame<T> {
    let grow = frame.s.exp();
    let shrink = (-frame.s / T::lit(2.0)).exp();
    let geometry = match &frame.geometry {
        FrameGeometry::Planar { n, half_width, z } => {
            FrameGeometry::Planar { n: *n, half_width: *half_width * shrink, z: z.iter().map(|&v| v * grow).collect() }
        }
        FrameGeometry::Radial { n, outer, z } => FrameGeometry::Radial { n: *n, outer: *outer * shrink, z: z.iter().map(|&v| v * grow).collect() },
    };
    let radius = frame.y_max * shrink;
    let (mass, _) = geometry.moments(radius);
    ScaledBackFrame { s_prime: -(-frame.s).exp(), geometry, mass }
}

impl<T: Real> ScaledBackFrame<T> {
    /// Bilinear (planar) or linear (radial) interpolation of `a`, zero outside.
    pub fn sample(&self, p: Point<T>) -> T {
        match &self.geometry {
            FrameGeometry::Planar { n, half_width, z } => {
                let d = T::lit(2.0) * *half_width / T::from_usize_lossy(*n);
                let fx = (p.0 + *half_width) / d - T::lit(0.5);
                let fy = (p.1 + *half_width) / d - T::lit(0.5);
                let limit = T::from_usize_lossy(*n - 1);
                let slack = T::lit(1e-9);
                if fx < -slack || fy < -slack || fx > limit + slack || fy > limit + slack {
                    return T::zero();
                }
                let (fx, fy) = (fx.max(T::zero()).min(limit), fy.max(T::zero()).min(limit));
                let (i, j) = (fx.floor().to_usize().unwrap_or(0).min(n - 2), fy.floor().to_usize().unwrap_or(0).min(n - 2));
                let (tx, ty) = (fx - T::from_usize_lossy(i), fy - T::from_usize_lossy(j));
                let v = |a: usize, b: usize| z[b * n + a];
                let one = T::one();
                (one - ty) * ((one - tx) * v(i, j) + tx * v(i + 1, j)) + ty * ((one - tx) * v(i, j + 1) + tx * v(i + 1, j + 1))
            }
            FrameGeometry::Radial { n, outer, z } => {
                let d = *outer / T::from_usize_lossy(*n);
                let f = p.0.hypot(p.1) / d - T::lit(0.5);
                if f <= T::zero() {
                    return z[0];
                }
                let limit = T::from_usize_lossy(*n - 1);
                if f > limit + T::lit(1e-9) {
                    return T::zero();
                }
                let f = f.min(limit);
                let i = f.floor().to_usize().unwrap_or(0).min(n - 2);
                let tx = f - T::from_usize_lossy(i);
                (T::one() - tx) * z[i] + tx * z[i + 1]
            }
        }
    }
}

/// Inverse of [`scale_back`]: `z(y) = e^{−s} a(e^{−s/2} y)` on the frame's grid.
pub fn unscale<T: Real>(back: &ScaledBackFrame<T>, frame_like: &RescaledFrame<T>) -> Vec<T> {
    let s = -(-back.s_prime).ln();
    let shrink = (-s / T::lit(2.0)).exp();
    let decay = (-s).exp();
    (0..frame_like.geometry.values().len())
        .map(|k| {
            let (a, b) = frame_like.geometry.node(k);
            decay * back.sample((a * shrink, b * shrink))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{local_ball_mass, GridSpec};

    fn est(t_hat: f64) -> BlowupEstimate<f64> {
        BlowupEstimate { t_hat, fit_window: (0.0, t_hat), fit_residual: 0.0, rate: 1.0 }
    }

    #[test]
    fn constant_field_frame() {
        let g = GridSpec::square(64, 1.0f64).unwrap();
        let c = 3.0;
        let f = Field::constant(g, c).unwrap();
        let fr = make_frame(&f, 0.99, &est(1.0), (0.5, 0.5), 4.0, 64).unwrap();
        assert!((fr.tau - 0.01).abs() < 1e-12);
        assert!(fr.geometry.values().iter().all(|&z| (z - 0.01 * c).abs() < 1e-12));
        // Change of variables: ∫ z dy over |y| ≤ 4 equals ∫ u dx over |x − x0| ≤ 0.4.
        let physical = local_ball_mass(&f, (0.5, 0.5), 4.0 * 0.1);
        assert!((fr.frame_mass - physical).abs() < 0.01 * physical);
        assert!((fr.frame_mass - 0.01 * c * std::f64::consts::PI * 16.0).abs() < 0.01 * fr.frame_mass);
    }

    #[test]
    fn s_values() {
        let g = GridSpec::square(32, 1.0f64).unwrap();
        let f = Field::constant(g, 1.0).unwrap();
        for k in [1.0f64, 2.0] {
            let t = 5.0 - (-k).exp();
            let fr = make_frame(&f, t, &est(5.0), (0.5, 0.5), 0.5, 8).unwrap();
            assert!((fr.s - k).abs() < 1e-12);
        }
    }

    #[test]
    fn window_leaving_domain_is_an_error() {
        let g = GridSpec::square(32, 1.0f64).unwrap();
        let f = Field::constant(g, 1.0).unwrap();
        assert!(matches!(make_frame(&f, 0.0, &est(1.0), (0.5, 0.5), 10.0, 8), Err(Error::Geometry(_))));
        assert!(matches!(make_frame(&f, 1.0, &est(1.0), (0.5, 0.5), 1.0, 8), Err(Error::InvalidEstimate(_))));
    }

    fn stationary(y2: f64) -> f64 {
        8.0 / (1.0 + y2).powi(2)
    }

    #[test]
    fn self_similar_field_is_reproduced() {
        let g = GridSpec::square(512, 1.0f64).unwrap();
        let tau: f64 = 1e-3;
        let x0 = (0.5, 0.5);
        let f = Field::from_fn(g, |p| stationary(((p.0 - x0.0).powi(2) + (p.1 - x0.1).powi(2)) / tau) / tau).unwrap();
        let fr = frame_with_tau(&f, 0.0, tau, x0, 10.0, 100).unwrap();
        let peak = fr.geometry.values().iter().cloned().fold(0.0, f64::max);
        for (k, &z) in fr.geometry.values().iter().enumerate() {
            let (a, b) = fr.geometry.node(k);
            assert!((z - stationary(a * a + b * b)).abs() < 0.01 * peak);
        }
    }

    #[test]
    fn second_moment_of_stationary_bump() {
        // Radial frame of the truncated profile 8/(1+|y|²)²: closed forms on |y| ≤ Y.
        let y_max: f64 = 10.0;
        let tau: f64 = 1e-4;
        let g = GridSpec::radial(20_000, 0.2).unwrap();
        let f = Field::from_fn(g, |p| stationary((p.0 * p.0 + p.1 * p.1) / tau) / tau).unwrap();
        let fr = frame_with_tau(&f, 0.0, tau, (0.0, 0.0), y_max, 2000).unwrap();
        let y2 = y_max * y_max;
        let mass = 8.0 * std::f64::consts::PI * y2 / (1.0 + y2);
        let moment = 8.0 * std::f64::consts::PI * ((1.0 + y2).ln() + 1.0 / (1.0 + y2) - 1.0);
        assert!((fr.frame_mass - mass).abs() < 0.01 * mass);
        assert!((fr.second_moment - moment).abs() < 0.01 * moment);

        let gp = GridSpec::square(1024, 1.0f64).unwrap();
        let tau: f64 = 1e-3;
        let f = Field::from_fn(gp, |p| stationary(((p.0 - 0.5).powi(2) + (p.1 - 0.5).powi(2)) / tau) / tau).unwrap();
        let fr = frame_with_tau(&f, 0.0, tau, (0.5, 0.5), y_max, 400).unwrap();
        assert!((fr.second_moment - moment).abs() < 0.01 * moment, "{} vs {moment}", fr.second_moment);
    }

    #[test]
    fn constant_envelope_is_unflagged() {
        let g = GridSpec::square(64, 1.0f64).unwrap();
        let tau0: f64 = 1e-2;
        let frames: Vec<_> = (0..6)
            .map(|k| {
                let tau = tau0 * 0.5f64.powi(k);
                let f = Field::from_fn(g, |p| stationary(((p.0 - 0.5).powi(2) + (p.1 - 0.5).powi(2)) / tau) / tau).unwrap();
                frame_with_tau(&f, 1.0 - tau, tau, (0.5, 0.5), 2.0, 40).unwrap()
            })
            .collect();
        let series = envelope_series(&frames).unwrap();
        assert_eq!(series.flagged(), 0);
        assert!(series.s_increasing);
        let p = series.points[0];
        assert!(series.points.iter().all(|q| (q.frame_mass - p.frame_mass).abs() < 0.05 * p.frame_mass));
    }

    #[test]
    fn envelope_flags_outliers() {
        let g = GridSpec::square(64, 1.0f64).unwrap();
        let base = Field::constant(g, 1.0).unwrap();
        let mut frames: Vec<_> = (0..5).map(|k| frame_with_tau(&base, k as f64, 1e-2 / (k + 1) as f64, (0.5, 0.5), 2.0, 16).unwrap()).collect();
        for f in frames.iter_mut() {
            f.second_moment = 1.0;
        }
        frames[3].second_moment = 10.0;
        let series = envelope_series(&frames).unwrap();
        assert_eq!(series.flagged(), 1);
        assert!(series.points[3].flagged);
        frames[1].y_max = 3.0;
        assert!(envelope_series(&frames).is_err());
    }

    #[test]
    fn scale_back_identity_and_mass() {
        let g = GridSpec::square(128, 1.0f64).unwrap();
        let f = Field::from_fn(g, |p| 1.0 + (-((p.0 - 0.5).powi(2) + (p.1 - 0.5).powi(2)) / 0.002).exp()).unwrap();
        let fr = frame_with_tau(&f, 0.0, 1.0 / 100.0, (0.5, 0.5), 3.0, 48).unwrap();
        let mut unit = fr.clone();
        unit.s = 0.0;
        let same = scale_back(&unit);
        assert_eq!(same.geometry, unit.geometry);
        assert!((same.s_prime + 1.0).abs() < 1e-15);

        let back = scale_back(&fr);
        assert!((back.mass - fr.frame_mass).abs() < 0.01 * fr.frame_mass);
        let z = unscale(&back, &fr);
        let peak = fr.geometry.values().iter().cloned().fold(0.0, f64::max);
        for (a, b) in z.iter().zip(fr.geometry.values()) {
            assert!((a - b).abs() < 0.02 * peak);
        }
    }

    #[test]
    fn radial_frame_mass_matches_ball_mass() {
        let g = GridSpec::radial(4096, 1.0f64).unwrap();
        let f = Field::from_fn(g, |p| 50.0 * (-(p.0 * p.0 + p.1 * p.1) / 0.001).exp() + 2.0).unwrap();
        let fr = frame_with_tau(&f, 0.0, 0.004, (0.0, 0.0), 5.0, 300).unwrap();
        let physical = local_ball_mass(&f, (0.0, 0.0), 5.0 * 0.004f64.sqrt());
        assert!((fr.frame_mass - physical).abs() < 1e-10 * physical);
        let back = scale_back(&fr);
        assert!((back.mass - fr.frame_mass).abs() < 1e-10 * physical);
    }
}
