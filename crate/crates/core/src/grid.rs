//! Computational domains and the cell-averaged density container.
//!
//! Two geometries are supported: the square `[0, L]²` split into `n × n`
//! uniform Cartesian cells, and the disk of radius `R` centred at the origin,
//! represented by `n` uniform radial shells (radially symmetric data only).
//!
//! Square fields are stored row-major, `values[j * n + i]` being the cell
//! whose centre is `((i + ½)h, (j + ½)h)`.

use std::io::{self, BufRead, Write};

use crate::error::{Error, Result};
use crate::scalar::{ksum, Real};

/// A point in the plane.
pub type Point<T> = (T, T);

/// Subcells per axis used when a cell is cut by a circle.
pub const COVERAGE_SUBCELLS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DomainKind {
    Square,
    RadialDisk,
}

impl DomainKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DomainKind::Square => "square",
            DomainKind::RadialDisk => "radial-disk",
        }
    }
}

impl std::str::FromStr for DomainKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "square" => Ok(DomainKind::Square),
            "radial-disk" | "radial" | "disk" => Ok(DomainKind::RadialDisk),
            other => Err(Error::InvalidGrid(format!("unknown domain kind {other:?}"))),
        }
    }
}

/// Uniform grid on either the square or the radial disk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec<T> {
    kind: DomainKind,
    n: usize,
    length: T,
}

impl<T: Real> GridSpec<T> {
    pub fn new(kind: DomainKind, n: usize, length: T) -> Result<Self> {
        if n < 8 {
            return Err(Error::InvalidGrid(format!("need at least 8 cells per axis, got {n}")));
        }
        if !(length > T::zero()) || !length.is_finite() {
            return Err(Error::InvalidGrid(format!("length must be positive, got {length}")));
        }
        Ok(Self { kind, n, length })
    }

    /// `n × n` cells on `[0, side]²`.
    pub fn square(n: usize, side: T) -> Result<Self> {
        Self::new(DomainKind::Square, n, side)
    }

    /// `n` radial shells on the disk of the given radius.
    pub fn radial(n: usize, radius: T) -> Result<Self> {
        Self::new(DomainKind::RadialDisk, n, radius)
    }

    pub fn kind(&self) -> DomainKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Side length of the square or radius of the disk.
    pub fn length(&self) -> T {
        self.length
    }

    pub fn h(&self) -> T {
        self.length / T::from_usize_lossy(self.n)
    }

    pub fn is_square(&self) -> bool {
        self.kind == DomainKind::Square
    }

    /// Number of stored cells.
    pub fn len(&self) -> usize {
        match self.kind {
            DomainKind::Square => self.n * self.n,
            DomainKind::RadialDisk => self.n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    /// Radius of the centre of shell `i` (radial grids).
    #[inline]
    pub fn shell_center(&self, i: usize) -> T {
        (T::from_usize_lossy(i) + T::lit(0.5)) * self.h()
    }

    /// Centre of cell `idx`; for radial grids `(r_i, 0)`.
    pub fn center(&self, idx: usize) -> Point<T> {
        let h = self.h();
        match self.kind {
            DomainKind::Square => {
                let i = idx % self.n;
                let j = idx / self.n;
                (
                    (T::from_usize_lossy(i) + T::lit(0.5)) * h,
                    (T::from_usize_lossy(j) + T::lit(0.5)) * h,
                )
            }
            DomainKind::RadialDisk => (self.shell_center(idx), T::zero()),
        }
    }

    /// Cell area; radial shells use the midpoint rule `2π r_i h`, which is
    /// exactly the annulus area.
    #[inline]
    pub fn cell_area(&self, idx: usize) -> T {
        let h = self.h();
        match self.kind {
            DomainKind::Square => h * h,
            DomainKind::RadialDisk => T::lit(2.0) * T::PI() * self.shell_center(idx) * h,
        }
    }

    pub fn domain_area(&self) -> T {
        match self.kind {
            DomainKind::Square => self.length * self.length,
            DomainKind::RadialDisk => T::PI() * self.length * self.length,
        }
    }

    /// Closed-domain membership test.
    pub fn contains(&self, p: Point<T>) -> bool {
        match self.kind {
            DomainKind::Square => {
                p.0 >= T::zero() && p.1 >= T::zero() && p.0 <= self.length && p.1 <= self.length
            }
            DomainKind::RadialDisk => (p.0 * p.0 + p.1 * p.1).sqrt() <= self.length,
        }
    }

    /// Strict interior membership test.
    pub fn contains_interior(&self, p: Point<T>) -> bool {
        match self.kind {
            DomainKind::Square => {
                p.0 > T::zero() && p.1 > T::zero() && p.0 < self.length && p.1 < self.length
            }
            DomainKind::RadialDisk => (p.0 * p.0 + p.1 * p.1).sqrt() < self.length,
        }
    }

    /// Largest distance between two points of the domain.
    pub fn diameter(&self) -> T {
        match self.kind {
            DomainKind::Square => self.length * T::SQRT_2(),
            DomainKind::RadialDisk => T::lit(2.0) * self.length,
        }
    }

    /// Whether the closed disk lies inside the closed domain.
    pub fn contains_disk(&self, disk: Disk<T>) -> bool {
        match self.kind {
            DomainKind::Square => {
                let (x, y) = disk.center;
                x - disk.radius >= T::zero()
                    && y - disk.radius >= T::zero()
                    && x + disk.radius <= self.length
                    && y + disk.radius <= self.length
            }
            DomainKind::RadialDisk => disk.center_norm() + disk.radius <= self.length,
        }
    }
}

/// Closed disk used for ball and window integrals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disk<T> {
    pub center: Point<T>,
    pub radius: T,
}

impl<T: Real> Disk<T> {
    pub fn new(center: Point<T>, radius: T) -> Self {
        Self { center, radius }
    }

    #[inline]
    pub fn contains(&self, p: Point<T>) -> bool {
        let dx = p.0 - self.center.0;
        let dy = p.1 - self.center.1;
        dx * dx + dy * dy <= self.radius * self.radius
    }

    pub fn center_norm(&self) -> T {
        (self.center.0 * self.center.0 + self.center.1 * self.center.1).sqrt()
    }

    pub fn intersects(&self, other: &Disk<T>) -> bool {
        let dx = self.center.0 - other.center.0;
        let dy = self.center.1 - other.center.1;
        (dx * dx + dy * dy).sqrt() < self.radius + other.radius
    }
}

/// Cell-averaged nonnegative density on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field<T> {
    grid: GridSpec<T>,
    values: Vec<T>,
}

impl<T: Real> Field<T> {
    /// Builds a field, rejecting negative or non-finite values.
    pub fn new(grid: GridSpec<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidField(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some((idx, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < T::zero())
        {
            return Err(Error::InvalidField(format!("cell {idx} holds {v}")));
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_raw(grid: GridSpec<T>, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn zeros(grid: GridSpec<T>) -> Self {
        Self { grid, values: vec![T::zero(); grid.len()] }
    }

    pub fn constant(grid: GridSpec<T>, value: T) -> Result<Self> {
        Self::new(grid, vec![value; grid.len()])
    }

    /// Evaluates `f` at every cell centre.
    pub fn from_fn(grid: GridSpec<T>, f: impl Fn(Point<T>) -> T) -> Result<Self> {
        let values = (0..grid.len()).map(|idx| f(grid.center(idx))).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &GridSpec<T> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    /// Sup norm (the density is nonnegative).
    pub fn max(&self) -> T {
        self.values.iter().fold(T::zero(), |m, &v| m.max(v))
    }

    /// Index of the largest cell value (first on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }

    /// `α·self + β·other` for nonnegative coefficients.
    pub fn combine(&self, alpha: T, other: &Field<T>, beta: T) -> Result<Field<T>> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("cannot combine fields on different grids".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| alpha * a + beta * b)
            .collect();
        Field::new(self.grid, values)
    }

    /// Bilinear interpolation between cell centres, constant beyond the
    /// outermost centres. Radial fields interpolate linearly in `|p|`.
    pub fn sample(&self, p: Point<T>) -> T {
        let n = self.grid.n;
        let h = self.grid.h();
        match self.grid.kind {
            DomainKind::Square => {
                let (i0, tx) = bracket(p.0 / h - T::lit(0.5), n);
                let (j0, ty) = bracket(p.1 / h - T::lit(0.5), n);
                let v = |i: usize, j: usize| self.values[j * n + i];
                let one = T::one();
                (one - ty) * ((one - tx) * v(i0, j0) + tx * v(i0 + 1, j0))
                    + ty * ((one - tx) * v(i0, j0 + 1) + tx * v(i0 + 1, j0 + 1))
            }
            DomainKind::RadialDisk => {
                let r = (p.0 * p.0 + p.1 * p.1).sqrt();
                self.sample_radial(r)
            }
        }
    }

    /// Linear interpolation of a radial field at radius `r`.
    pub fn sample_radial(&self, r: T) -> T {
        let (i0, t) = bracket(r / self.grid.h() - T::lit(0.5), self.grid.n);
        (T::one() - t) * self.values[i0] + t * self.values[i0 + 1]
    }

    /// Writes the snapshot CSV (`i,j,x,y,u` or `i,r,u`).
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        match self.grid.kind {
            DomainKind::Square => {
                writeln!(w, "i,j,x,y,u")?;
                let n = self.grid.n;
                for (idx, v) in self.values.iter().enumerate() {
                    let (x, y) = self.grid.center(idx);
                    writeln!(w, "{},{},{},{},{}", idx % n, idx / n, x, y, v)?;
                }
            }
            DomainKind::RadialDisk => {
                writeln!(w, "i,r,u")?;
                for (i, v) in self.values.iter().enumerate() {
                    writeln!(w, "{},{},{}", i, self.grid.shell_center(i), v)?;
                }
            }
        }
        Ok(())
    }

    /// Reads a snapshot CSV written by [`Field::write_csv`] for a known grid.
    pub fn read_csv<R: BufRead>(grid: GridSpec<T>, r: R) -> Result<Field<T>> {
        let mut values = vec![T::zero(); grid.len()];
        let mut seen = 0usize;
        for (line_no, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::InvalidField(e.to_string()))?;
            if line_no == 0 || line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            let bad = || Error::InvalidField(format!("malformed csv line {}", line_no + 1));
            let idx = match grid.kind {
                DomainKind::Square if cols.len() == 5 => {
                    let i: usize = cols[0].trim().parse().map_err(|_| bad())?;
                    let j: usize = cols[1].trim().parse().map_err(|_| bad())?;
                    if i >= grid.n || j >= grid.n {
                        return Err(bad());
                    }
                    grid.index(i, j)
                }
                DomainKind::RadialDisk if cols.len() == 3 => {
                    let i: usize = cols[0].trim().parse().map_err(|_| bad())?;
                    if i >= grid.n {
                        return Err(bad());
                    }
                    i
                }
                _ => return Err(bad()),
            };
            let v: f64 = cols[cols.len() - 1].trim().parse().map_err(|_| bad())?;
            values[idx] = T::lit(v);
            seen += 1;
        }
        if seen != grid.len() {
            return Err(Error::InvalidField(format!("csv holds {seen} cells, grid has {}", grid.len())));
        }
        Field::new(grid, values)
    }
}

/// Splits a fractional index into a lower node and weight, clamped so that
/// `i0 + 1 < n`.
#[inline]
fn bracket<T: Real>(f: T, n: usize) -> (usize, T) {
    if f <= T::zero() {
        return (0, T::zero());
    }
    let last = T::from_usize_lossy(n - 1);
    if f >= last {
        return (n - 2, T::one());
    }
    let i0 = f.floor().to_usize().unwrap_or(0).min(n - 2);
    (i0, f - T::from_usize_lossy(i0))
}

/// Total mass `Σ u_i |cell_i|`.
pub fn total_mass<T: Real>(f: &Field<T>) -> T {
    let g = f.grid;
    match g.kind {
        DomainKind::Square => ksum(f.values.iter().copied()) * g.h() * g.h(),
        DomainKind::RadialDisk => ksum(f.values.iter().enumerate().map(|(i, &v)| v * g.cell_area(i))),
    }
}

/// Initial densities; every profile is renormalised to its requested mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialProfile<T> {
    Constant { mass: T },
    Gaussian { center: Point<T>, width: T, mass: T },
    TwoBumps { centers: [Point<T>; 2], width: T, masses: [T; 2] },
}

impl<T: Real> InitialProfile<T> {
    pub fn total_mass(&self) -> T {
        match *self {
            InitialProfile::Constant { mass } | InitialProfile::Gaussian { mass, .. } => mass,
            InitialProfile::TwoBumps { masses, .. } => masses[0] + masses[1],
        }
    }
}

fn check_positive<T: Real>(name: &str, v: T) -> Result<()> {
    if v > T::zero() && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidProfile(format!("{name} must be positive, got {v}")))
    }
}

fn gaussian_bump<T: Real>(spec: &GridSpec<T>, center: Point<T>, width: T, mass: T) -> Result<Vec<T>> {
    check_positive("mass", mass)?;
    check_positive("width", width)?;
    if !spec.contains_interior(center) {
        return Err(Error::InvalidProfile(format!(
            "bump centre ({}, {}) lies outside the {} domain",
            center.0,
            center.1,
            spec.kind.as_str()
        )));
    }
    if spec.kind == DomainKind::RadialDisk && (center.0 != T::zero() || center.1 != T::zero()) {
        return Err(Error::InvalidProfile(
            "radial grids carry radially symmetric data; the bump must sit at the origin".into(),
        ));
    }
    let two_w2 = T::lit(2.0) * width * width;
    let raw: Vec<T> = (0..spec.len())
        .map(|idx| {
            let (x, y) = spec.center(idx);
            let (dx, dy) = match spec.kind {
                DomainKind::Square => (x - center.0, y - center.1),
                DomainKind::RadialDisk => (x, T::zero()),
            };
            (-(dx * dx + dy * dy) / two_w2).exp()
        })
        .collect();
    let quad = total_mass(&Field::from_raw(*spec, raw.clone()));
    if !(quad > T::zero()) {
        return Err(Error::InvalidProfile("bump is not resolved by any cell centre".into()));
    }
    let scale = mass / quad;
    Ok(raw.into_iter().map(|v| v * scale).collect())
}

/// Builds the initial density for `profile`, renormalised so that
/// `total_mass` equals the requested mass.
pub fn make_initial<T: Real>(spec: GridSpec<T>, profile: &InitialProfile<T>) -> Result<Field<T>> {
    let values = match *profile {
        InitialProfile::Constant { mass } => {
            check_positive("mass", mass)?;
            let raw = vec![T::one(); spec.len()];
            let quad = total_mass(&Field::from_raw(spec, raw));
            vec![mass / quad; spec.len()]
        }
        InitialProfile::Gaussian { center, width, mass } => gaussian_bump(&spec, center, width, mass)?,
        InitialProfile::TwoBumps { centers, width, masses } => {
            if spec.kind == DomainKind::RadialDisk {
                return Err(Error::InvalidProfile("two bumps are not radially symmetric".into()));
            }
            let a = gaussian_bump(&spec, centers[0], width, masses[0])?;
            let b = gaussian_bump(&spec, centers[1], width, masses[1])?;
            a.into_iter().zip(b).map(|(x, y)| x + y).collect()
        }
    };
    Field::new(spec, values)
}

/// Fraction of the axis-aligned rectangle lying inside every disk.
pub(crate) fn rect_fraction_inside<T: Real>(x0: T, x1: T, y0: T, y1: T, disks: &[Disk<T>]) -> T {
    let mut all_full = true;
    for d in disks {
        let (cx, cy) = d.center;
        let nx = cx.max(x0).min(x1) - cx;
        let ny = cy.max(y0).min(y1) - cy;
        if nx * nx + ny * ny >= d.radius * d.radius {
            return T::zero();
        }
        let fx = (x0 - cx).abs().max((x1 - cx).abs());
        let fy = (y0 - cy).abs().max((y1 - cy).abs());
        if fx * fx + fy * fy > d.radius * d.radius {
            all_full = false;
        }
    }
    if all_full {
        return T::one();
    }
    let k = COVERAGE_SUBCELLS;
    let kt = T::from_usize_lossy(k);
    let dx = (x1 - x0) / kt;
    let dy = (y1 - y0) / kt;
    let mut inside = 0usize;
    for a in 0..k {
        let py = y0 + (T::from_usize_lossy(a) + T::lit(0.5)) * dy;
        for b in 0..k {
            let px = x0 + (T::from_usize_lossy(b) + T::lit(0.5)) * dx;
            if disks.iter().all(|d| d.contains((px, py))) {
                inside += 1;
            }
        }
    }
    T::from_usize_lossy(inside) / T::from_usize_lossy(k * k)
}

/// Mass of `f` inside the intersection of the given disks (and the domain).
///
/// Square cells fully inside or outside get weight 1 or 0; cut cells are
/// weighted by 4×4 subcell sampling. Radial fields use exact annulus
/// fractions when every disk is centred at the origin.
pub fn region_mass<T: Real>(f: &Field<T>, disks: &[Disk<T>]) -> T {
    if disks.is_empty() {
        return total_mass(f);
    }
    let g = f.grid;
    let h = g.h();
    match g.kind {
        DomainKind::Square => {
            let n = g.n;
            // Bounding box of the smallest disk restricts the cells visited.
            let d = disks
                .iter()
                .min_by(|a, b| a.radius.partial_cmp(&b.radius).unwrap_or(std::cmp::Ordering::Equal))
                .copied()
                .unwrap();
            if !(d.radius > T::zero()) {
                return T::zero();
            }
            let to_idx = |c: T| -> isize { (c / h).floor().to_isize().unwrap_or(0) };
            let i_lo = to_idx(d.center.0 - d.radius).max(0) as usize;
            let j_lo = to_idx(d.center.1 - d.radius).max(0) as usize;
            let i_hi = to_idx(d.center.0 + d.radius).min(n as isize - 1);
            let j_hi = to_idx(d.center.1 + d.radius).min(n as isize - 1);
            if i_hi < 0 || j_hi < 0 {
                return T::zero();
            }
            let (i_hi, j_hi) = (i_hi as usize, j_hi as usize);
            let mut terms = Vec::new();
            for j in j_lo..=j_hi {
                let y0 = T::from_usize_lossy(j) * h;
                for i in i_lo..=i_hi {
                    let v = f.values[j * n + i];
                    if v == T::zero() {
                        continue;
                    }
                    let x0 = T::from_usize_lossy(i) * h;
                    let w = rect_fraction_inside(x0, x0 + h, y0, y0 + h, disks);
                    if w > T::zero() {
                        terms.push(v * w);
                    }
                }
            }
            ksum(terms) * h * h
        }
        DomainKind::RadialDisk => {
            let tiny = T::lit(1e-12) * g.length;
            if disks.iter().all(|d| d.center_norm() <= tiny) {
                let r = disks.iter().fold(T::infinity(), |m, d| m.min(d.radius));
                radial_prefix_mass(f, r)
            } else {
                radial_sampled_mass(f, disks)
            }
        }
    }
}

/// Mass of a radial field inside the origin-centred disk of radius `r`.
pub(crate) fn radial_prefix_mass<T: Real>(f: &Field<T>, r: T) -> T {
    let g = f.grid;
    let h = g.h();
    if !(r > T::zero()) {
        return T::zero();
    }
    let r = r.min(g.length);
    let mut terms = Vec::with_capacity(g.n);
    for (i, &v) in f.values.iter().enumerate() {
        let a = T::from_usize_lossy(i) * h;
        if a >= r {
            break;
        }
        let b = (a + h).min(r);
        terms.push(v * T::PI() * (b * b - a * a));
    }
    ksum(terms)
}

fn radial_sampled_mass<T: Real>(f: &Field<T>, disks: &[Disk<T>]) -> T {
    const RADIAL: usize = 4;
    const ANGULAR: usize = 256;
    let g = f.grid;
    let h = g.h();
    let mut terms = Vec::new();
    for (i, &v) in f.values.iter().enumerate() {
        if v == T::zero() {
            continue;
        }
        let mut weight = T::zero();
        for a in 0..RADIAL {
            let r = (T::from_usize_lossy(i) + (T::from_usize_lossy(a) + T::lit(0.5)) / T::from_usize_lossy(RADIAL)) * h;
            let mut inside = 0usize;
            for k in 0..ANGULAR {
                let th = T::TAU() * T::from_usize_lossy(k) / T::from_usize_lossy(ANGULAR);
                let p = (r * th.cos(), r * th.sin());
                if disks.iter().all(|d| d.contains(p)) {
                    inside += 1;
                }
            }
            // Sub-annulus areas are proportional to their mid radius.
            weight = weight + r * T::from_usize_lossy(inside) / T::from_usize_lossy(ANGULAR);
        }
        let mid_total: T = (0..RADIAL)
            .map(|a| (T::from_usize_lossy(i) + (T::from_usize_lossy(a) + T::lit(0.5)) / T::from_usize_lossy(RADIAL)) * h)
            .sum();
        if weight > T::zero() {
            terms.push(v * g.cell_area(i) * weight / mid_total);
        }
    }
    ksum(terms)
}

/// Mass of `f` in `B(center, radius) ∩ Ω`.
pub fn local_ball_mass<T: Real>(f: &Field<T>, center: Point<T>, radius: T) -> T {
    if !(radius > T::zero()) {
        return T::zero();
    }
    region_mass(f, &[Disk::new(center, radius)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit(n: usize) -> GridSpec<f64> {
        GridSpec::square(n, 1.0).unwrap()
    }

    #[test]
    fn rejects_small_grids() {
        assert!(GridSpec::square(4, 1.0f64).is_err());
        assert!(GridSpec::radial(16, 0.0f64).is_err());
    }

    #[test]
    fn cell_areas_tile_domain() {
        for g in [unit(37), GridSpec::radial(101, 0.7).unwrap()] {
            let s = ksum((0..g.len()).map(|i| g.cell_area(i)));
            assert_relative_eq!(s, g.domain_area(), max_relative = 1e-12);
        }
    }

    #[test]
    fn total_mass_examples() {
        let g = unit(32);
        assert_eq!(total_mass(&Field::zeros(g)), 0.0);
        assert_relative_eq!(total_mass(&Field::constant(g, 1.0).unwrap()), 1.0, max_relative = 1e-14);
        let r = GridSpec::radial(200, 0.5).unwrap();
        let c = 3.0;
        let m = total_mass(&Field::constant(r, c).unwrap());
        assert_relative_eq!(m, c * std::f64::consts::PI * 0.25, max_relative = 1e-12);
    }

    #[test]
    fn constant_profile_is_uniform() {
        let f = make_initial(unit(16), &InitialProfile::Constant { mass: 1.0 }).unwrap();
        assert!(f.values().iter().all(|&v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn gaussian_profile_has_requested_mass() {
        let lam = 8.0 * std::f64::consts::PI;
        let f = make_initial(unit(64), &InitialProfile::Gaussian { center: (0.5, 0.5), width: 0.05, mass: lam }).unwrap();
        assert!((total_mass(&f) - lam).abs() <= 1e-10);
    }

    #[test]
    fn two_bumps_have_two_maxima() {
        let lam = 8.0 * std::f64::consts::PI;
        let g = unit(64);
        let f = make_initial(
            g,
            &InitialProfile::TwoBumps { centers: [(0.3, 0.5), (0.7, 0.5)], width: 0.05, masses: [lam, lam] },
        )
        .unwrap();
        assert_relative_eq!(total_mass(&f), 2.0 * lam, max_relative = 1e-12);
        let n = g.n();
        let v = f.values();
        // Cells not below any neighbour; the centres sit on a cell edge in y,
        // so each bump shows up as a vertical pair of tied cells.
        let is_max = |i: usize, j: usize| {
            let c = v[j * n + i];
            [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)].iter().all(|&(a, b)| v[b * n + a] <= c)
        };
        let mut maxima = 0;
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                if is_max(i, j) && !(j > 1 && is_max(i, j - 1)) {
                    maxima += 1;
                }
            }
        }
        assert_eq!(maxima, 2);
    }

    #[test]
    fn bump_outside_domain_is_rejected() {
        let err = make_initial(unit(16), &InitialProfile::Gaussian { center: (1.2, 0.5), width: 0.1, mass: 1.0 });
        assert!(matches!(err, Err(Error::InvalidProfile(_))));
        let err = make_initial(
            GridSpec::radial(16, 1.0).unwrap(),
            &InitialProfile::Gaussian { center: (0.1, 0.0), width: 0.1, mass: 1.0 },
        );
        assert!(err.is_err());
    }

    #[test]
    fn ball_mass_examples() {
        let g = unit(64);
        assert_eq!(local_ball_mass(&Field::zeros(g), (0.5, 0.5), 0.3), 0.0);
        let one = Field::constant(g, 1.0).unwrap();
        assert_relative_eq!(local_ball_mass(&one, (0.5, 0.5), 2.0), total_mass(&one), max_relative = 1e-14);
        let m = local_ball_mass(&one, (0.5, 0.5), 0.25);
        let exact = std::f64::consts::PI / 16.0;
        assert!((m - exact).abs() / exact < 0.01, "{m} vs {exact}");
        assert_eq!(local_ball_mass(&one, (3.0, 3.0), 0.5), 0.0);
    }

    #[test]
    fn radial_ball_mass_is_exact_for_constants() {
        let g = GridSpec::radial(64, 1.0).unwrap();
        let f = Field::constant(g, 2.0).unwrap();
        let m = local_ball_mass(&f, (0.0, 0.0), 0.3);
        assert_relative_eq!(m, 2.0 * std::f64::consts::PI * 0.09, max_relative = 1e-12);
        // Off-centre balls fall back to sampling.
        let m = local_ball_mass(&f, (0.2, 0.1), 0.3);
        assert!((m - 2.0 * std::f64::consts::PI * 0.09).abs() < 0.02 * m);
    }

    #[test]
    fn bilinear_sampling_reproduces_linear_functions() {
        let g = unit(20);
        let f = Field::from_fn(g, |(x, y)| 1.0 + 2.0 * x + 3.0 * y).unwrap();
        for &(x, y) in &[(0.3, 0.4), (0.51, 0.77), (0.1, 0.9)] {
            assert_relative_eq!(f.sample((x, y)), 1.0 + 2.0 * x + 3.0 * y, max_relative = 1e-12);
        }
    }

    #[test]
    fn csv_round_trip() {
        let g = unit(8);
        let f = Field::from_fn(g, |(x, y)| x * y + 1.0 / 3.0).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"i,j,x,y,u\n"));
        let back = Field::read_csv(g, &buf[..]).unwrap();
        assert_eq!(back, f);
        let r = GridSpec::radial(10, 1.0).unwrap();
        let f = Field::from_fn(r, |(x, _): (f64, f64)| x.exp()).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"i,r,u\n"));
        assert_eq!(Field::read_csv(r, &buf[..]).unwrap(), f);
    }

    proptest! {
        #[test]
        fn total_mass_is_linear(a in 0.0f64..5.0, b in 0.0f64..5.0, seed in 0u64..1000) {
            let g = unit(16);
            let f = Field::from_fn(g, |(x, y)| ((x * 13.0 + seed as f64).sin() + 1.0) * (y + 0.1)).unwrap();
            let h = Field::from_fn(g, |(x, y)| (x - y).abs() + (seed as f64 * 0.01)).unwrap();
            let lhs = total_mass(&f.combine(a, &h, b).unwrap());
            let rhs = a * total_mass(&f) + b * total_mass(&h);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1e-300));
        }

        #[test]
        fn ball_mass_monotone_in_radius(cx in 0.1f64..0.9, cy in 0.1f64..0.9, r in 0.01f64..0.8) {
            let g = unit(24);
            let f = Field::from_fn(g, |(x, y)| 1.0 + (7.0 * x).sin() * (5.0 * y).cos()).unwrap();
            let m1 = local_ball_mass(&f, (cx, cy), r);
            let m2 = local_ball_mass(&f, (cx, cy), r * 1.1);
            prop_assert!(m2 >= m1 - 1e-15);
            let all = local_ball_mass(&f, (cx, cy), g.diameter());
            prop_assert!((all - total_mass(&f)).abs() <= 1e-12 * total_mass(&f));
        }

        #[test]
        fn initial_mass_matches_request(lam in 0.1f64..100.0, w in 0.03f64..0.3, cx in 0.2f64..0.8) {
            let g = unit(32);
            let f = make_initial(g, &InitialProfile::Gaussian { center: (cx, 0.5), width: w, mass: lam }).unwrap();
            prop_assert!((total_mass(&f) - lam).abs() <= 1e-12 * lam);
            let r = GridSpec::radial(50, 1.0).unwrap();
            let f = make_initial(r, &InitialProfile::Gaussian { center: (0.0, 0.0), width: w, mass: lam }).unwrap();
            prop_assert!((total_mass(&f) - lam).abs() <= 1e-12 * lam);
        }
    }
}
