//! Integer lattice geometry on Z^d for d in {2, 3, 4}.
//!
//! Boxes are max-norm balls `B(x, n) = x + [-n, n]^d`. Neighbour relations
//! and Lipschitz bounds use the l1 norm. Sites order lexicographically by
//! coordinates, which fixes every "first in some deterministic order" choice
//! made elsewhere in the crate.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 4;

/// Largest absolute coordinate accepted by [`Site::new`].
pub const MAX_COORD: i64 = 1 << 20;

/// Lattice dimension, validated to lie in {2, 3, 4}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Dim(u8);

impl Dim {
    pub fn new(d: usize) -> Result<Self> {
        if (2..=MAX_DIM).contains(&d) {
            Ok(Dim(d as u8))
        } else {
            Err(Error::Dimension(d))
        }
    }

    #[inline]
    pub fn get(self) -> usize {
        self.0 as usize
    }

    /// Number of nearest neighbours, 2d.
    #[inline]
    pub fn degree(self) -> usize {
        2 * self.get()
    }

    pub fn directions(self) -> impl Iterator<Item = Direction> {
        (0..self.degree() as u8).map(Direction)
    }
}

impl TryFrom<usize> for Dim {
    type Error = Error;
    fn try_from(d: usize) -> Result<Self> {
        Dim::new(d)
    }
}

impl From<Dim> for usize {
    fn from(d: Dim) -> usize {
        d.get()
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One of the 2d unit steps. Index `2 * axis` is the negative step along
/// `axis`, `2 * axis + 1` the positive one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Direction(u8);

impl Direction {
    pub fn new(axis: usize, positive: bool) -> Self {
        Direction((2 * axis + usize::from(positive)) as u8)
    }

    pub fn from_index(index: usize) -> Self {
        Direction(index as u8)
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    #[inline]
    pub fn axis(self) -> usize {
        (self.0 / 2) as usize
    }

    #[inline]
    pub fn is_positive(self) -> bool {
        self.0 % 2 == 1
    }

    #[inline]
    pub fn step(self) -> i64 {
        if self.is_positive() {
            1
        } else {
            -1
        }
    }

    #[inline]
    pub fn reverse(self) -> Self {
        Direction(self.0 ^ 1)
    }
}

/// A point of Z^d.
///
/// Unused trailing coordinates are kept at zero so derived equality, hashing
/// and ordering only see the meaningful prefix.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Site {
    dim: Dim,
    coords: [i64; MAX_DIM],
}

impl Site {
    pub fn new(coords: &[i64]) -> Result<Self> {
        let dim = Dim::new(coords.len())?;
        let mut c = [0; MAX_DIM];
        for (slot, &v) in c.iter_mut().zip(coords) {
            if v.abs() > MAX_COORD {
                return Err(Error::CoordinateRange(v));
            }
            *slot = v;
        }
        Ok(Site { dim, coords: c })
    }

    pub fn origin(dim: Dim) -> Self {
        Site {
            dim,
            coords: [0; MAX_DIM],
        }
    }

    /// The unit vector `e_{axis+1}`.
    pub fn unit(dim: Dim, axis: usize) -> Self {
        let mut s = Site::origin(dim);
        s.coords[axis] = 1;
        s
    }

    pub(crate) fn from_raw(dim: Dim, coords: [i64; MAX_DIM]) -> Self {
        Site { dim, coords }
    }

    #[inline]
    pub fn dim(&self) -> Dim {
        self.dim
    }

    #[inline]
    pub fn coords(&self) -> &[i64] {
        &self.coords[..self.dim.get()]
    }

    #[inline]
    pub fn coord(&self, axis: usize) -> i64 {
        self.coords[axis]
    }

    pub fn is_origin(&self) -> bool {
        self.coords.iter().all(|&c| c == 0)
    }

    #[inline]
    pub fn step(&self, dir: Direction) -> Site {
        let mut s = *self;
        s.coords[dir.axis()] += dir.step();
        s
    }

    pub fn add(&self, other: &Site) -> Site {
        let mut s = *self;
        for i in 0..MAX_DIM {
            s.coords[i] += other.coords[i];
        }
        s
    }

    pub fn sub(&self, other: &Site) -> Site {
        let mut s = *self;
        for i in 0..MAX_DIM {
            s.coords[i] -= other.coords[i];
        }
        s
    }

    pub fn scale(&self, k: i64) -> Site {
        let mut s = *self;
        for c in s.coords.iter_mut() {
            *c *= k;
        }
        s
    }

    pub fn norm_l1(&self) -> i64 {
        self.coords.iter().map(|c| c.abs()).sum()
    }

    pub fn norm_inf(&self) -> i64 {
        self.coords.iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    pub fn norm_l2(&self) -> f64 {
        self.coords
            .iter()
            .map(|&c| (c as f64) * (c as f64))
            .sum::<f64>()
            .sqrt()
    }

    pub fn dist_l1(&self, other: &Site) -> i64 {
        self.sub(other).norm_l1()
    }

    pub fn dist_inf(&self, other: &Site) -> i64 {
        self.sub(other).norm_inf()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.coords().iter().map(|&c| c as f64).collect()
    }

    /// The 2d nearest neighbours, ordered by axis and then `-` before `+`.
    pub fn neighbors(&self) -> Vec<Site> {
        self.dim.directions().map(|d| self.step(d)).collect()
    }
}

impl fmt::Debug for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.coords().iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl FromStr for Site {
    type Err = Error;

    /// Accepts `1,0,-2` with or without surrounding parentheses.
    fn from_str(s: &str) -> Result<Self> {
        let inner = s.trim().trim_start_matches('(').trim_end_matches(')');
        let coords = inner
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<i64>()
                    .map_err(|e| Error::Parse(format!("bad coordinate {p:?} in {s:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Site::new(&coords)
    }
}

impl Serialize for Site {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.coords().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Site {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<i64>::deserialize(deserializer)?;
        Site::new(&v).map_err(serde::de::Error::custom)
    }
}

/// Ordered pair of nearest-neighbour sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OrientedBond {
    pub from: Site,
    pub to: Site,
}

impl OrientedBond {
    pub fn new(from: Site, to: Site) -> Result<Self> {
        if from.dim() != to.dim() || from.dist_l1(&to) != 1 {
            return Err(Error::NotAdjacent {
                from: from.to_string(),
                to: to.to_string(),
            });
        }
        Ok(OrientedBond { from, to })
    }

    pub fn from_step(from: Site, dir: Direction) -> Self {
        OrientedBond {
            from,
            to: from.step(dir),
        }
    }

    pub fn direction(&self) -> Direction {
        let diff = self.to.sub(&self.from);
        let axis = (0..MAX_DIM).find(|&i| diff.coord(i) != 0).unwrap_or(0);
        Direction::new(axis, diff.coord(axis) > 0)
    }

    pub fn reversed(&self) -> Self {
        OrientedBond {
            from: self.to,
            to: self.from,
        }
    }
}

impl fmt::Display for OrientedBond {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.from, self.to)
    }
}

/// The max-norm ball `B(center, radius)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeBox {
    pub center: Site,
    pub radius: i64,
}

impl LatticeBox {
    pub fn new(center: Site, radius: i64) -> Result<Self> {
        if !(0..=MAX_COORD).contains(&radius) {
            return Err(Error::InvalidArgument(format!(
                "box radius {radius} outside [0, {MAX_COORD}]"
            )));
        }
        Ok(LatticeBox { center, radius })
    }

    /// `B_n = [-n, n]^d`.
    pub fn centered(dim: Dim, radius: i64) -> Result<Self> {
        LatticeBox::new(Site::origin(dim), radius)
    }

    pub fn dim(&self) -> Dim {
        self.center.dim()
    }

    #[inline]
    pub fn contains(&self, y: &Site) -> bool {
        y.dist_inf(&self.center) <= self.radius
    }

    pub fn on_boundary(&self, y: &Site) -> bool {
        y.dist_inf(&self.center) == self.radius
    }

    /// Max-norm distance from `y` to the outside of the box, `radius - ‖y - center‖_∞`.
    pub fn dist_to_edge(&self, y: &Site) -> i64 {
        self.radius - y.dist_inf(&self.center)
    }

    /// Number of sites, `(2n+1)^d`.
    pub fn len(&self) -> usize {
        ((2 * self.radius + 1) as usize).pow(self.dim().get() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// All sites in lexicographic order.
    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        let d = self.dim().get();
        let side = (2 * self.radius + 1) as usize;
        let total = self.len();
        let lo = self.center.sub(&Site::from_raw(self.dim(), {
            let mut r = [0; MAX_DIM];
            r[..d].iter_mut().for_each(|c| *c = self.radius);
            r
        }));
        (0..total).map(move |mut idx| {
            let mut c = [0; MAX_DIM];
            for axis in (0..d).rev() {
                c[axis] = lo.coord(axis) + (idx % side) as i64;
                idx /= side;
            }
            Site::from_raw(lo.dim(), c)
        })
    }

    /// `∂B(x, n)`: the sites at max-norm distance exactly `n` from the centre.
    pub fn boundary(&self) -> Result<Vec<Site>> {
        if self.radius == 0 {
            return Err(Error::InvalidArgument(
                "boundary of a radius-0 box is undefined".into(),
            ));
        }
        Ok(self.sites().filter(|y| self.on_boundary(y)).collect())
    }
}

/// `{y : 0 <= y[axis] <= thickness}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Slab {
    pub thickness: i64,
    pub axis: usize,
}

impl Slab {
    pub fn new(thickness: i64, axis: usize) -> Result<Self> {
        if thickness < 1 {
            return Err(Error::InvalidArgument(format!(
                "slab thickness must be positive, got {thickness}"
            )));
        }
        if axis >= MAX_DIM {
            return Err(Error::InvalidArgument(format!("slab axis {axis} out of range")));
        }
        Ok(Slab { thickness, axis })
    }

    #[inline]
    pub fn contains(&self, y: &Site) -> bool {
        (0..=self.thickness).contains(&y.coord(self.axis))
    }
}

/// `C(x, δ) = Z^d ∩ ⋃_{t≥0} B(tx, δt)` for an integer direction `x` and a
/// rational amplitude `δ = num/den`.
///
/// A rational direction `x/m` gives the same cone as `x` with amplitude
/// `mδ`, so integer directions lose no generality.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cone {
    pub direction: Site,
    pub amplitude_num: i64,
    pub amplitude_den: i64,
}

/// Non-negative fraction with positive denominator.
#[derive(Clone, Copy)]
struct Frac(i128, i128);

impl Frac {
    fn le(self, other: Frac) -> bool {
        self.0 * other.1 <= other.0 * self.1
    }
}

impl Cone {
    pub fn new(direction: Site, amplitude_num: i64, amplitude_den: i64) -> Result<Self> {
        if amplitude_num <= 0 || amplitude_den <= 0 {
            return Err(Error::InvalidArgument("cone amplitude must be positive".into()));
        }
        Ok(Cone {
            direction,
            amplitude_num,
            amplitude_den,
        })
    }

    /// Exact membership: intersect the half-lines in `t` cut out by the
    /// 2d linear constraints `|q z_i - t q x_i| <= p t`, together with `t >= 0`.
    pub fn contains(&self, z: &Site) -> bool {
        let p = self.amplitude_num as i128;
        let q = self.amplitude_den as i128;
        let mut lo = Frac(0, 1);
        let mut hi: Option<Frac> = None;
        let tighten_lo = |f: Frac, lo: &mut Frac| {
            if lo.le(f) {
                *lo = f;
            }
        };
        let tighten_hi = |f: Frac, hi: &mut Option<Frac>| match hi {
            Some(h) if h.le(f) => {}
            _ => *hi = Some(f),
        };
        for i in 0..z.dim().get() {
            let zi = q * z.coord(i) as i128;
            let xi = q * self.direction.coord(i) as i128;
            // t (xi + p) >= zi
            let a = xi + p;
            match a.signum() {
                1 => tighten_lo(Frac(zi, a), &mut lo),
                0 => {
                    if zi > 0 {
                        return false;
                    }
                }
                _ => tighten_hi(Frac(-zi, -a), &mut hi),
            }
            // t (xi - p) <= zi
            let b = xi - p;
            match b.signum() {
                1 => tighten_hi(Frac(zi, b), &mut hi),
                0 => {
                    if zi < 0 {
                        return false;
                    }
                }
                _ => tighten_lo(Frac(-zi, -b), &mut lo),
            }
        }
        match hi {
            None => true,
            Some(h) => h.0 >= 0 && lo.le(h),
        }
    }
}

/// `Δ_V A = {x ∉ A : x ~ y for some y ∈ A}`.
pub fn exterior_vertex_boundary(set: &BTreeSet<Site>) -> BTreeSet<Site> {
    set.iter()
        .flat_map(|y| y.neighbors())
        .filter(|x| !set.contains(x))
        .collect()
}
