use crate::error::{Error, Result};
use crate::grid::{region_mass, Disk, DomainKind, Field, Point};
use crate::scalar::{eight_pi, median, Real};

use super::blowup::BlowupEstimate;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollapseConfig<T> {
    /// Window radius in units of `R(t)`.
    pub b: T,
    /// Quantization tolerance `|mass − 8π| < epsilon`.
    pub epsilon: T,
    /// Balls stop growing at `c3 · R(t)`.
    pub c3: T,
    /// Candidate maxima must exceed this multiple of the window median.
    pub peak_factor: T,
    /// Growth stops once a radius step adds less than this fraction of 8π.
    pub growth_fraction: T,
    /// Radius increment; `None` uses `max(h, R/10)`.
    pub radius_step: Option<T>,
}

impl<T: Real> Default for CollapseConfig<T> {
    fn default() -> Self {
        Self {
            b: T::lit(20.0),
            epsilon: T::lit(0.5),
            c3: T::lit(3.0),
            peak_factor: T::lit(10.0),
            growth_fraction: T::lit(0.01),
            radius_step: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollapseBall<T> {
    pub center: Point<T>,
    pub radius: T,
    pub mass: T,
    pub quantized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollapseReport<T> {
    pub t: T,
    pub balls: Vec<CollapseBall<T>>,
    pub residual_mass: T,
    pub window: Disk<T>,
    pub window_mass: T,
    /// Parabolic radius `R(t)` the window was built from.
    pub scale: T,
    pub b: T,
    pub epsilon: T,
}

impl<T: Real> CollapseReport<T> {
    pub fn quantized_count(&self) -> usize {
        self.balls.iter().filter(|b| b.quantized).count()
    }

    pub fn all_quantized(&self) -> bool {
        self.balls.iter().all(|b| b.quantized)
    }

    /// `"x,y,r,mass,quantized"` rows.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,x,y,r,mass,quantized")?;
        for b in &self.balls {
            writeln!(w, "{},{},{},{},{},{}", self.t, b.center.0, b.center.1, b.radius, b.mass, b.quantized)?;
        }
        Ok(())
    }
}

/// Collapse balls inside the parabolic window `B(x0, b R(t))`.
pub fn detect_collapses<T: Real>(f: &Field<T>, t: T, est: &BlowupEstimate<T>, x0: Point<T>, cfg: &CollapseConfig<T>) -> Result<CollapseReport<T>> {
    let scale = est.radius_at(t)?;
    detect_collapses_at_scale(f, t, x0, scale, cfg)
}

/// [`detect_collapses`] with the parabolic radius given directly.
pub fn detect_collapses_at_scale<T: Real>(f: &Field<T>, t: T, x0: Point<T>, scale: T, cfg: &CollapseConfig<T>) -> Result<CollapseReport<T>> {
    if !(scale > T::zero()) || !(cfg.b > T::zero()) || !(cfg.c3 > T::zero()) || !(cfg.epsilon > T::zero()) {
        return Err(Error::InvalidArgument("window scale, b, c3 and epsilon must be positive".into()));
    }
    let g = *f.grid();
    let window = Disk::new(x0, cfg.b * scale);
    if g.kind() == DomainKind::RadialDisk && x0.0.hypot(x0.1) > T::lit(1e-12) * g.length() {
        return Err(Error::Geometry("radial fields collapse only at the origin".into()));
    }
    let inside: Vec<usize> = (0..g.len()).filter(|&k| window.contains(g.center(k))).collect();
    let window_mass = region_mass(f, &[window]);
    if inside.is_empty() && window_mass == T::zero() {
        let meets = match g.kind() {
            DomainKind::Square => {
                let (cx, cy) = (x0.0.max(T::zero()).min(g.length()), x0.1.max(T::zero()).min(g.length()));
                window.contains((cx, cy))
            }
            DomainKind::RadialDisk => true,
        };
        if !meets {
            return Err(Error::Geometry("collapse window does not meet the domain".into()));
        }
    }
    let vals = f.values();
    let med = median(&inside.iter().map(|&k| vals[k]).collect::<Vec<_>>()).unwrap_or(T::zero());
    let threshold = cfg.peak_factor * med;
    let step = cfg.radius_step.unwrap_or_else(|| g.h().max(scale / T::lit(10.0)));
    let cap = cfg.c3 * scale;
    let grower = Grower { f, window, step, cap, min_increment: cfg.growth_fraction * eight_pi::<T>() };

    let mut candidates: Vec<usize> = inside
        .iter()
        .copied()
        .filter(|&k| vals[k] > T::zero() && vals[k] > threshold && is_local_max(f, k))
        .collect();
    candidates.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));

    let mut balls: Vec<(Point<T>, T, T)> = Vec::new();
    for k in candidates {
        let c = g.center(k);
        let c = if g.kind() == DomainKind::RadialDisk { (T::zero(), T::zero()) } else { c };
        if balls.iter().any(|b| Disk::new(b.0, b.1).contains(c)) {
            continue;
        }
        let mut ball = grower.grow(c);
        // Merge with any overlapping ball and re-grow until disjoint.
        while let Some(pos) = balls.iter().position(|b| Disk::new(b.0, b.1).intersects(&Disk::new(ball.0, ball.1))) {
            let other = balls.remove(pos);
            let total = ball.2 + other.2;
            let center = if total > T::zero() {
                ((ball.0 .0 * ball.2 + other.0 .0 * other.2) / total, (ball.0 .1 * ball.2 + other.0 .1 * other.2) / total)
            } else {
                ball.0
            };
            log::info!("merging overlapping collapse balls at ({}, {}) and ({}, {})", ball.0 .0, ball.0 .1, other.0 .0, other.0 .1);
            let regrown = grower.grow(center);
            // A re-grown ball must cover at least the larger of its parts.
            ball = if regrown.1 >= ball.1.max(other.1) { regrown } else { (center, ball.1.max(other.1), grower.mass(center, ball.1.max(other.1))) };
        }
        balls.push(ball);
    }

    let balls: Vec<CollapseBall<T>> = balls
        .into_iter()
        .map(|(center, radius, mass)| CollapseBall { center, radius, mass, quantized: (mass - eight_pi::<T>()).abs() < cfg.epsilon })
        .collect();
    let residual = window_mass - balls.iter().map(|b| b.mass).sum::<T>();
    Ok(CollapseReport {
        t,
        balls,
        residual_mass: residual.max(T::zero()),
        window,
        window_mass,
        scale,
        b: cfg.b,
        epsilon: cfg.epsilon,
    })
}

struct Grower<'a, T> {
    f: &'a Field<T>,
    window: Disk<T>,
    step: T,
    cap: T,
    min_increment: T,
}

impl<T: Real> Grower<'_, T> {
    fn mass(&self, c: Point<T>, r: T) -> T {
        region_mass(self.f, &[Disk::new(c, r), self.window])
    }

    fn grow(&self, c: Point<T>) -> (Point<T>, T, T) {
        let mut r = self.step.min(self.cap);
        let mut m = self.mass(c, r);
        // At least two radius steps before the increment test can stop growth.
        while r < self.cap {
            let next = (r + self.step).min(self.cap);
            let mn = self.mass(c, next);
            let inc = mn - m;
            r = next;
            m = mn;
            if inc < self.min_increment {
                break;
            }
        }
        (c, r, m)
    }
}

fn is_local_max<T: Real>(f: &Field<T>, k: usize) -> bool {
    let g = f.grid();
    let v = f.values();
    match g.kind() {
        DomainKind::RadialDisk => k == 0 || (v[k] >= v[k - 1] && (k + 1 == g.n() || v[k] >= v[k + 1])),
        DomainKind::Square => {
            let n = g.n() as isize;
            let (i, j) = ((k % g.n()) as isize, (k / g.n()) as isize);
            for dj in -1..=1 {
                for di in -1..=1 {
                    let (a, b) = (i + di, j + dj);
                    if (di, dj) != (0, 0) && a >= 0 && b >= 0 && a < n && b < n && v[(b * n + a) as usize] > v[k] {
                        return false;
                    }
                }
            }
            true
        }
    }
}

/// Window masses `‖u‖_{L¹(B(x0, b R(t)))}` for each `b`.
pub fn mass_window_sweep<T: Real>(f: &Field<T>, t: T, est: &BlowupEstimate<T>, x0: Point<T>, b_list: &[T]) -> Result<Vec<(T, T)>> {
    let scale = est.radius_at(t)?;
    Ok(b_list.iter().map(|&b| (b, crate::grid::local_ball_mass(f, x0, b * scale))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{total_mass, GridSpec};
    use proptest::prelude::*;

    /// Compactly supported bump `(1 − r²/a²)³` scaled to `mass` by quadrature.
    fn bumps(g: GridSpec<f64>, centers: &[Point<f64>], a: f64, mass: f64) -> Field<f64> {
        let mut values = vec![0.0; g.len()];
        for &c in centers {
            let one = Field::from_fn(g, |p| {
                let q = ((p.0 - c.0).powi(2) + (p.1 - c.1).powi(2)) / (a * a);
                if q < 1.0 {
                    (1.0 - q).powi(3)
                } else {
                    0.0
                }
            })
            .unwrap();
            let s = mass / total_mass(&one);
            for (v, x) in values.iter_mut().zip(one.values()) {
                *v += s * x;
            }
        }
        Field::new(g, values).unwrap()
    }

    #[test]
    fn flat_field_has_no_balls() {
        let g = GridSpec::square(64, 1.0f64).unwrap();
        let f = Field::constant(g, 3.0).unwrap();
        let r = detect_collapses_at_scale(&f, 0.0, (0.5, 0.5), 0.01, &CollapseConfig::default()).unwrap();
        assert!(r.balls.is_empty());
        assert_eq!(r.residual_mass, r.window_mass);
        assert!((r.window_mass - 3.0 * std::f64::consts::PI * 0.04).abs() < 0.01 * r.window_mass);
    }

    #[test]
    fn single_bump_is_quantized() {
        let g = GridSpec::square(128, 1.0f64).unwrap();
        let f = bumps(g, &[(0.5, 0.5)], 0.05, eight_pi());
        let r = detect_collapses_at_scale(&f, 0.0, (0.5, 0.5), 0.03, &CollapseConfig::default()).unwrap();
        assert_eq!(r.balls.len(), 1);
        assert!(r.balls[0].quantized);
        assert!((r.balls[0].mass - eight_pi::<f64>()).abs() < 0.05, "{:?}", r.balls[0]);
    }

    #[test]
    fn two_bumps_give_two_disjoint_balls() {
        let g = GridSpec::square(128, 1.0f64).unwrap();
        let f = bumps(g, &[(0.3, 0.5), (0.7, 0.5)], 0.06, eight_pi());
        let r = detect_collapses_at_scale(&f, 0.0, (0.5, 0.5), 0.04, &CollapseConfig::default()).unwrap();
        assert_eq!(r.balls.len(), 2);
        assert!(r.all_quantized());
        let (a, b) = (r.balls[0], r.balls[1]);
        assert!(!Disk::new(a.center, a.radius).intersects(&Disk::new(b.center, b.radius)));
        assert!(r.residual_mass <= 1e-3 * total_mass(&f));
        assert!((r.balls.iter().map(|b| b.mass).sum::<f64>() + r.residual_mass - r.window_mass).abs() <= 1e-10 * r.window_mass);
    }

    #[test]
    fn close_bumps_are_merged() {
        let g = GridSpec::square(128, 1.0f64).unwrap();
        let f = bumps(g, &[(0.46, 0.5), (0.54, 0.5)], 0.05, 4.0 * std::f64::consts::PI);
        let r = detect_collapses_at_scale(&f, 0.0, (0.5, 0.5), 0.05, &CollapseConfig::default()).unwrap();
        assert_eq!(r.balls.len(), 1);
        assert!(r.balls[0].quantized, "{:?}", r.balls[0]);
    }

    #[test]
    fn radial_field_collapses_at_origin() {
        let g = GridSpec::radial(512, 1.0f64).unwrap();
        let a: f64 = 0.02;
        let f = Field::from_fn(g, |p| {
            let q = (p.0 * p.0 + p.1 * p.1) / (a * a);
            if q < 1.0 {
                (1.0 - q).powi(3)
            } else {
                0.0
            }
        })
        .unwrap();
        let s = eight_pi::<f64>() / total_mass(&f);
        let f = Field::new(g, f.values().iter().map(|v| v * s).collect()).unwrap();
        let r = detect_collapses_at_scale(&f, 0.0, (0.0, 0.0), 0.01, &CollapseConfig::default()).unwrap();
        assert_eq!(r.balls.len(), 1);
        assert!(r.balls[0].quantized);
        assert!(detect_collapses_at_scale(&f, 0.0, (0.1, 0.0), 0.01, &CollapseConfig::default()).is_err());
    }

    #[test]
    fn window_outside_domain_is_rejected() {
        let g = GridSpec::square(32, 1.0f64).unwrap();
        let f = Field::constant(g, 1.0).unwrap();
        assert!(detect_collapses_at_scale(&f, 0.0, (5.0, 5.0), 0.01, &CollapseConfig::default()).is_err());
    }

    #[test]
    fn sweep_of_zero_field() {
        let g = GridSpec::square(32, 1.0f64).unwrap();
        let est = BlowupEstimate { t_hat: 1.0, fit_window: (0.0, 0.9), fit_residual: 0.0, rate: 1.0 };
        let s = mass_window_sweep(&Field::zeros(g), 0.99, &est, (0.5, 0.5), &[5.0, 10.0, 20.0]).unwrap();
        assert!(s.iter().all(|&(_, m)| m == 0.0));
        let f = bumps(g, &[(0.5, 0.5)], 0.05, eight_pi());
        let s = mass_window_sweep(&f, 0.99, &est, (0.5, 0.5), &[1.0, 2.0, 4.0]).unwrap();
        for (_, m) in s {
            assert!((m - eight_pi::<f64>()).abs() < 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn translation_invariance(dx in -8i32..8, dy in -8i32..8) {
            let g = GridSpec::square(96, 1.0f64).unwrap();
            let h = g.h();
            let shift = (dx as f64 * h, dy as f64 * h);
            let c1 = (0.3, 0.45);
            let c2 = (0.62, 0.55);
            let f = bumps(g, &[c1, c2], 0.05, eight_pi());
            let moved = bumps(g, &[(c1.0 + shift.0, c1.1 + shift.1), (c2.0 + shift.0, c2.1 + shift.1)], 0.05, eight_pi());
            let cfg = CollapseConfig::default();
            let a = detect_collapses_at_scale(&f, 0.0, (0.46, 0.5), 0.03, &cfg).unwrap();
            let b = detect_collapses_at_scale(&moved, 0.0, (0.46 + shift.0, 0.5 + shift.1), 0.03, &cfg).unwrap();
            prop_assert_eq!(a.balls.len(), b.balls.len());
            let mut ma: Vec<f64> = a.balls.iter().map(|x| x.mass).collect();
            let mut mb: Vec<f64> = b.balls.iter().map(|x| x.mass).collect();
            ma.sort_by(f64::total_cmp);
            mb.sort_by(f64::total_cmp);
            for (x, y) in ma.iter().zip(&mb) {
                prop_assert!((x - y).abs() < 1e-9 * x);
            }
            prop_assert!((a.residual_mass - b.residual_mass).abs() < 1e-9 * a.window_mass);
        }

        #[test]
        fn mass_bookkeeping(seed_x in 0.2f64..0.8, seed_y in 0.2f64..0.8, mass in 1.0f64..40.0, scale in 0.005f64..0.05) {
            let g = GridSpec::square(64, 1.0f64).unwrap();
            let f = bumps(g, &[(seed_x, seed_y)], 0.08, mass);
            let r = detect_collapses_at_scale(&f, 0.0, (0.5, 0.5), scale, &CollapseConfig::default()).unwrap();
            let sum: f64 = r.balls.iter().map(|b| b.mass).sum();
            prop_assert!(r.residual_mass >= 0.0);
            prop_assert!((sum + r.residual_mass - r.window_mass).abs() <= 1e-10 * r.window_mass.max(1.0));
            prop_assert!(sum + r.residual_mass <= total_mass(&f) + 1e-10);
            for (i, a) in r.balls.iter().enumerate() {
                for b in &r.balls[i + 1..] {
                    prop_assert!(!Disk::new(a.center, a.radius).intersects(&Disk::new(b.center, b.radius)));
                }
            }
        }
    }
}
