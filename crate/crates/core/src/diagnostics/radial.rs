use crate::error::{Error, Result};
use crate::grid::{DomainKind, Field, Point};
use crate::scalar::Real;

pub const AVERAGE_ANGLES: usize = 64;

/// Circular average `(1/2π) ∫ f(center + r e^{iθ}) dθ` from 64 bilinear samples.
pub fn radial_average<T: Real>(f: &Field<T>, center: Point<T>, r: T) -> Result<T> {
    if !(r >= T::zero()) {
        return Err(Error::InvalidArgument(format!("radius must be nonnegative, got {r}")));
    }
    let g = f.grid();
    let fits = match g.kind() {
        DomainKind::Square => {
            let (x, y) = center;
            x - r >= T::zero() && y - r >= T::zero() && x + r <= g.length() && y + r <= g.length()
        }
        DomainKind::RadialDisk => center.0.hypot(center.1) + r <= g.length(),
    };
    if !fits {
        return Err(Error::Geometry(format!("circle of radius {r} leaves the domain")));
    }
    if g.kind() == DomainKind::RadialDisk && center == (T::zero(), T::zero()) {
        return Ok(f.sample_radial(r));
    }
    let k = T::from_usize_lossy(AVERAGE_ANGLES);
    let sum: T = (0..AVERAGE_ANGLES)
        .map(|a| {
            let th = T::TAU() * T::from_usize_lossy(a) / k;
            f.sample((center.0 + r * th.cos(), center.1 + r * th.sin()))
        })
        .sum();
    Ok(sum / k)
}

/// Trapezoid rule for `∫₀^r ρ f̄(ρ) dρ`, i.e. ball mass over 2π.
///
/// Nodes are spaced `h/4` apart with a shorter last panel, so the result
/// varies continuously with `r`.
pub fn shell_mass<T: Real>(f: &Field<T>, center: Point<T>, r: T) -> Result<T> {
    if !(r > T::zero()) {
        return Ok(T::zero());
    }
    let d = f.grid().h() / T::lit(4.0);
    let full = (r / d).floor().to_usize().unwrap_or(0);
    let integrand = |rho: T| radial_average(f, center, rho).map(|a| rho * a);
    let mut acc = T::zero();
    let mut prev = T::zero();
    for i in 1..=full {
        let next = integrand(d * T::from_usize_lossy(i))?;
        acc = acc + (prev + next) * d / T::lit(2.0);
        prev = next;
    }
    let last = d * T::from_usize_lossy(full);
    if r > last {
        acc = acc + (prev + integrand(r)?) * (r - last) / T::lit(2.0);
    }
    Ok(acc)
}
