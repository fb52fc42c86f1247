//! Finite windows of the open-bond digraph.
//!
//! A [`Window`] indexes the sites of a box in lexicographic order, so index
//! order and site order agree. [`WindowSample`] materialises the λ-free part
//! of the field (`T_x` and the unit clocks) over a window; an [`OpenGraph`]
//! applies a particular λ on top of it. The values are the same ones
//! [`FieldConfig`] returns for individual queries, bit for bit.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::{entity_word, FieldConfig};
use crate::lattice::{Dim, Direction, LatticeBox, Site, MAX_DIM};

pub const UNREACHED: u32 = u32::MAX;

/// Follow bonds forward (`Out`, sites reachable from the sources) or
/// backward (`In`, sites that reach the sources).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Out,
    In,
}

impl std::fmt::Display for Orientation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Orientation::Out => "out",
            Orientation::In => "in",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Window {
    bounds: LatticeBox,
    dim: Dim,
    side: usize,
    len: usize,
    stride: [usize; MAX_DIM],
    lo: [i64; MAX_DIM],
    /// Bit `dir` set when the neighbour in direction `dir` is inside.
    inside: Vec<u8>,
}

impl Window {
    pub fn new(bounds: LatticeBox) -> Result<Self> {
        let dim = bounds.dim();
        let d = dim.get();
        let side = (2 * bounds.radius + 1) as usize;
        let len = side
            .checked_pow(d as u32)
            .filter(|&n| n <= u32::MAX as usize / 2)
            .ok_or_else(|| Error::InvalidArgument(format!("window radius {} too large", bounds.radius)))?;
        let mut stride = [0; MAX_DIM];
        let mut s = 1;
        for axis in (0..d).rev() {
            stride[axis] = s;
            s *= side;
        }
        let mut lo = [0; MAX_DIM];
        for (axis, l) in lo.iter_mut().enumerate().take(d) {
            *l = bounds.center.coord(axis) - bounds.radius;
        }
        let mut inside = vec![0u8; len];
        for (idx, mask) in inside.iter_mut().enumerate() {
            for axis in 0..d {
                let off = (idx / stride[axis]) % side;
                if off > 0 {
                    *mask |= 1 << (2 * axis);
                }
                if off + 1 < side {
                    *mask |= 1 << (2 * axis + 1);
                }
            }
        }
        Ok(Window {
            bounds,
            dim,
            side,
            len,
            stride,
            lo,
            inside,
        })
    }

    pub fn bounds(&self) -> &LatticeBox {
        &self.bounds
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn contains(&self, x: &Site) -> bool {
        self.bounds.contains(x)
    }

    pub fn index(&self, x: &Site) -> Option<usize> {
        if !self.contains(x) {
            return None;
        }
        Some(
            (0..self.dim.get())
                .map(|a| (x.coord(a) - self.lo[a]) as usize * self.stride[a])
                .sum(),
        )
    }

    pub fn site(&self, idx: usize) -> Site {
        let mut c = [0; MAX_DIM];
        for (axis, slot) in c.iter_mut().enumerate().take(self.dim.get()) {
            *slot = self.lo[axis] + ((idx / self.stride[axis]) % self.side) as i64;
        }
        Site::from_raw(self.dim, c)
    }

    #[inline]
    pub fn neighbor(&self, idx: usize, dir: Direction) -> Option<usize> {
        if self.inside[idx] & (1 << dir.index()) == 0 {
            return None;
        }
        let s = self.stride[dir.axis()];
        Some(if dir.is_positive() { idx + s } else { idx - s })
    }

    #[inline]
    pub(crate) fn inside_mask(&self, idx: usize) -> u8 {
        self.inside[idx]
    }

    /// Max-norm distance from the window centre.
    pub fn radius_of(&self, idx: usize) -> i64 {
        self.site(idx).dist_inf(&self.bounds.center)
    }

    pub fn on_boundary(&self, idx: usize) -> bool {
        self.inside[idx].count_ones() as usize != self.dim.degree()
    }

    /// Indices of the sites of the box `b ∩ window`.
    pub fn indices_in(&self, b: &LatticeBox) -> Vec<usize> {
        (0..self.len).filter(|&i| b.contains(&self.site(i))).collect()
    }

    /// Membership mask of `b ∩ window`.
    pub fn mask_of(&self, b: &LatticeBox) -> Vec<bool> {
        let mut m = vec![false; self.len];
        let d = self.dim.get();
        // Walk only the intersection.
        let mut lo = [0i64; MAX_DIM];
        let mut hi = [0i64; MAX_DIM];
        for a in 0..d {
            lo[a] = (b.center.coord(a) - b.radius).max(self.lo[a]);
            hi[a] = (b.center.coord(a) + b.radius).min(self.lo[a] + self.side as i64 - 1);
            if lo[a] > hi[a] {
                return m;
            }
        }
        let mut cur = lo;
        loop {
            let idx: usize = (0..d)
                .map(|a| (cur[a] - self.lo[a]) as usize * self.stride[a])
                .sum();
            m[idx] = true;
            let mut a = d;
            loop {
                if a == 0 {
                    return m;
                }
                a -= 1;
                if cur[a] < hi[a] {
                    cur[a] += 1;
                    break;
                }
                cur[a] = lo[a];
            }
        }
    }
}

/// `T_x` and `e_1(x, ·)` for every site of a window.
#[derive(Debug, Clone)]
pub struct WindowSample {
    window: Window,
    field: FieldConfig,
    recovery: Vec<f64>,
    unit: Vec<f64>,
}

impl WindowSample {
    pub fn new(field: &FieldConfig, bounds: LatticeBox) -> Result<Self> {
        if bounds.dim() != field.dim {
            return Err(Error::InvalidArgument(format!(
                "window dimension {} does not match field dimension {}",
                bounds.dim(),
                field.dim
            )));
        }
        let window = Window::new(bounds)?;
        let deg = window.dim.degree();
        let mut recovery = Vec::with_capacity(window.len);
        let mut unit = Vec::with_capacity(window.len * deg);
        for idx in 0..window.len {
            let site = window.site(idx);
            let mut raw = [0; MAX_DIM];
            raw[..site.coords().len()].copy_from_slice(site.coords());
            recovery.push(field.recovery_raw(&raw));
            let prefix = field.bond_prefix(&raw);
            for dir in 0..deg {
                unit.push(FieldConfig::unit_clock_word(entity_word(prefix, dir as u64)));
            }
        }
        Ok(WindowSample {
            window,
            field: *field,
            recovery,
            unit,
        })
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn field(&self) -> &FieldConfig {
        &self.field
    }

    #[inline]
    pub fn recovery(&self, idx: usize) -> f64 {
        self.recovery[idx]
    }

    #[inline]
    pub fn unit_clock(&self, idx: usize, dir: Direction) -> f64 {
        self.unit[idx * self.window.dim.degree() + dir.index()]
    }

    /// The open digraph at rate `lambda`.
    pub fn open_graph(self: &Arc<Self>, lambda: f64) -> OpenGraph {
        OpenGraph::new(Arc::clone(self), lambda)
    }
}

/// The open-bond digraph of a window at a fixed λ. Bonds leaving the window
/// are treated as absent.
#[derive(Debug, Clone)]
pub struct OpenGraph {
    sample: Arc<WindowSample>,
    lambda: f64,
    open: Vec<u8>,
}

impl OpenGraph {
    pub fn new(sample: Arc<WindowSample>, lambda: f64) -> Self {
        let deg = sample.window.dim.degree();
        let open = (0..sample.window.len)
            .map(|idx| {
                let t = sample.recovery[idx];
                let inside = sample.window.inside[idx];
                let mut m = 0u8;
                for dir in 0..deg {
                    if inside & (1 << dir) != 0 && sample.unit[idx * deg + dir] / lambda < t {
                        m |= 1 << dir;
                    }
                }
                m
            })
            .collect();
        OpenGraph {
            sample,
            lambda,
            open,
        }
    }

    /// Samples `bounds` for `field` and builds the graph at `field.lambda`.
    pub fn build(field: &FieldConfig, bounds: LatticeBox) -> Result<Self> {
        let sample = Arc::new(WindowSample::new(field, bounds)?);
        Ok(OpenGraph::new(sample, field.lambda))
    }

    /// The same field at another rate.
    pub fn relambda(&self, lambda: f64) -> Self {
        OpenGraph::new(Arc::clone(&self.sample), lambda)
    }

    pub fn sample(&self) -> &WindowSample {
        &self.sample
    }

    pub fn window(&self) -> &Window {
        &self.sample.window
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn field(&self) -> FieldConfig {
        self.sample.field.with_lambda(self.lambda)
    }

    #[inline]
    pub fn open_mask(&self, idx: usize) -> u8 {
        self.open[idx]
    }

    #[inline]
    pub fn is_open(&self, idx: usize, dir: Direction) -> bool {
        self.open[idx] & (1 << dir.index()) != 0
    }

    /// `e_λ` of the bond leaving `idx` in direction `dir`.
    #[inline]
    pub fn clock(&self, idx: usize, dir: Direction) -> f64 {
        self.sample.unit_clock(idx, dir) / self.lambda
    }

    pub fn degree(&self) -> usize {
        self.sample.window.dim.degree()
    }

    /// Open steps from `idx` along `orient`: for `Out` the bonds `(idx, j)`,
    /// for `In` the bonds `(j, idx)`. Yields `(j, bond source, bond direction)`.
    #[inline]
    pub fn steps(&self, idx: usize, orient: Orientation) -> impl Iterator<Item = (usize, usize, Direction)> + '_ {
        let w = &self.sample.window;
        let mask = match orient {
            Orientation::Out => self.open[idx],
            Orientation::In => w.inside_mask(idx),
        };
        (0..self.degree()).filter_map(move |k| {
            if mask & (1 << k) == 0 {
                return None;
            }
            let dir = Direction::from_index(k);
            let j = w.neighbor(idx, dir)?;
            match orient {
                Orientation::Out => Some((j, idx, dir)),
                Orientation::In => {
                    let back = dir.reverse();
                    self.is_open(j, back).then_some((j, j, back))
                }
            }
        })
    }

    /// Number of open bonds with both ends in the window.
    pub fn open_bond_count(&self) -> usize {
        self.open.iter().map(|m| m.count_ones() as usize).sum()
    }
}

/// Breadth-first search returning minimal hop counts.
///
/// Sources are always expanded. Other reached sites are expanded only when
/// `allowed` admits them; non-admitted sites still get a hop count, which is
/// how "within A" paths whose end point leaves A are represented. Sites at
/// hop count `budget` are not expanded.
pub fn bfs(
    g: &OpenGraph,
    sources: &[usize],
    orient: Orientation,
    allowed: Option<&[bool]>,
    budget: Option<u32>,
) -> Vec<u32> {
    let n = g.window().len();
    let mut hops = vec![UNREACHED; n];
    let mut queue = std::collections::VecDeque::with_capacity(64);
    for &s in sources {
        if hops[s] == UNREACHED {
            hops[s] = 0;
            queue.push_back(s);
        }
    }
    while let Some(i) = queue.pop_front() {
        let h = hops[i];
        if budget.is_some_and(|b| h >= b) {
            continue;
        }
        if h > 0 && allowed.is_some_and(|a| !a[i]) {
            continue;
        }
        for (j, _, _) in g.steps(i, orient) {
            if hops[j] == UNREACHED {
                hops[j] = h + 1;
                queue.push_back(j);
            }
        }
    }
    hops
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    time: f64,
    idx: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on (time, idx): lower index first on ties.
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Options for [`dijkstra`].
#[derive(Debug, Clone, Copy, Default)]
pub struct DijkstraLimits<'a> {
    /// Interior-site constraint, same semantics as in [`bfs`].
    pub allowed: Option<&'a [bool]>,
    /// Sites whose passage time exceeds this are left at infinity.
    pub horizon: Option<f64>,
    /// Stop as soon as a site in this set is settled.
    pub targets: Option<&'a [bool]>,
}

/// First-passage times from a set of sources (all starting at time 0) over
/// open bonds, weighting each bond by its clock `e_λ`.
pub fn dijkstra(g: &OpenGraph, sources: &[usize], orient: Orientation, limits: DijkstraLimits<'_>) -> Vec<f64> {
    let n = g.window().len();
    let mut dist = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    for &s in sources {
        if dist[s] > 0.0 {
            dist[s] = 0.0;
            heap.push(Entry { time: 0.0, idx: s });
        }
    }
    let mut is_source = vec![false; if limits.allowed.is_some() { n } else { 0 }];
    if limits.allowed.is_some() {
        for &s in sources {
            is_source[s] = true;
        }
    }
    let horizon = limits.horizon.unwrap_or(f64::INFINITY);
    while let Some(Entry { time, idx }) = heap.pop() {
        if done[idx] {
            continue;
        }
        if time > horizon {
            break;
        }
        done[idx] = true;
        if limits.targets.is_some_and(|t| t[idx]) {
            break;
        }
        if limits.allowed.is_some_and(|a| !a[idx]) && !is_source[idx] {
            continue;
        }
        for (j, from, dir) in g.steps(idx, orient) {
            if done[j] {
                continue;
            }
            let t = time + g.clock(from, dir);
            if t < dist[j] {
                dist[j] = t;
                heap.push(Entry { time: t, idx: j });
            }
        }
    }
    for (d, fin) in dist.iter_mut().zip(&done) {
        if !fin || *d > horizon {
            *d = f64::INFINITY;
        }
    }
    dist
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::RecoveryDist;
    use crate::lattice::OrientedBond;

    fn field(d: usize, lambda: f64, rec: &str, seed: u64) -> FieldConfig {
        FieldConfig::new(Dim::new(d).unwrap(), lambda, rec.parse::<RecoveryDist>().unwrap(), seed).unwrap()
    }

    #[test]
    fn window_index_roundtrip() {
        let b = LatticeBox::new(Site::new(&[2, -1, 0]).unwrap(), 2).unwrap();
        let w = Window::new(b).unwrap();
        let sites: Vec<_> = b.sites().collect();
        assert_eq!(w.len(), sites.len());
        for (i, s) in sites.iter().enumerate() {
            assert_eq!(w.index(s), Some(i));
            assert_eq!(w.site(i), *s);
        }
        assert_eq!(w.index(&Site::new(&[5, 0, 0]).unwrap()), None);
    }

    #[test]
    fn window_neighbors_match_lattice() {
        let b = LatticeBox::centered(Dim::new(2).unwrap(), 2).unwrap();
        let w = Window::new(b).unwrap();
        for i in 0..w.len() {
            let x = w.site(i);
            for dir in x.dim().directions() {
                let y = x.step(dir);
                assert_eq!(w.neighbor(i, dir), w.index(&y));
            }
            assert_eq!(w.on_boundary(i), b.on_boundary(&x));
        }
    }

    #[test]
    fn mask_of_matches_filter() {
        let w = Window::new(LatticeBox::centered(Dim::new(3).unwrap(), 3).unwrap()).unwrap();
        let inner = LatticeBox::new(Site::new(&[2, 0, -1]).unwrap(), 2).unwrap();
        let m = w.mask_of(&inner);
        for i in 0..w.len() {
            assert_eq!(m[i], inner.contains(&w.site(i)));
        }
    }

    #[test]
    fn open_graph_agrees_with_pointwise_queries() {
        let f = field(3, 0.8, "exp:1.0", 11);
        let g = OpenGraph::build(&f, LatticeBox::centered(f.dim, 2).unwrap()).unwrap();
        let w = g.window();
        for i in 0..w.len() {
            let x = w.site(i);
            assert_eq!(g.sample().recovery(i), f.recovery_time(&x));
            for dir in f.dim.directions() {
                let b = OrientedBond::from_step(x, dir);
                assert_eq!(g.clock(i, dir), f.edge_clock(&b));
                if w.neighbor(i, dir).is_some() {
                    assert_eq!(g.is_open(i, dir), f.is_open(&b));
                } else {
                    assert!(!g.is_open(i, dir));
                }
            }
        }
    }

    #[test]
    fn in_steps_are_reversed_out_steps() {
        let f = field(2, 1.0, "exp:1.0", 5);
        let g = OpenGraph::build(&f, LatticeBox::centered(f.dim, 3).unwrap()).unwrap();
        let n = g.window().len();
        let mut out_pairs = Vec::new();
        let mut in_pairs = Vec::new();
        for i in 0..n {
            out_pairs.extend(g.steps(i, Orientation::Out).map(|(j, _, _)| (i, j)));
            in_pairs.extend(g.steps(i, Orientation::In).map(|(j, _, _)| (j, i)));
        }
        out_pairs.sort();
        in_pairs.sort();
        assert_eq!(out_pairs, in_pairs);
    }
}
