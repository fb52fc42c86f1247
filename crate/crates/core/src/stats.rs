//! Survival probabilities, critical-rate bisection, decay fits, FKG
//! covariance checks and the slab probe.
//!
//! Every replica `i` uses the field `cfg.replica(i)`, so curves computed at
//! different λ share seeds and inherit the monotone coupling exactly.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::export::format_sig;
use crate::field::FieldConfig;
use crate::graph::{Orientation, Window};
use crate::lattice::{LatticeBox, OrientedBond, Site};

pub const MIN_SURVIVAL_REPLICAS: u64 = 100;

/// Monte Carlo estimate of `P(o → ∂B_n)` (`Out`) or `P(∂B_n → o)` (`In`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurvivalCurve {
    pub lambda: f64,
    pub n: i64,
    pub direction: Orientation,
    pub p_hat: f64,
    pub se: f64,
    pub replicas: u64,
}

impl SurvivalCurve {
    fn from_hits(lambda: f64, n: i64, direction: Orientation, hits: u64, replicas: u64) -> Self {
        let p = hits as f64 / replicas as f64;
        SurvivalCurve {
            lambda,
            n,
            direction,
            p_hat: p,
            se: (p * (1.0 - p) / replicas as f64).sqrt(),
            replicas,
        }
    }
}

/// Out-neighbours (`Out`) or in-neighbours (`In`) of `s` joined to it by an
/// open bond.
fn open_steps<'a>(cfg: &'a FieldConfig, s: Site, orient: Orientation) -> impl Iterator<Item = Site> + 'a {
    let t_s = cfg.recovery_time(&s);
    cfg.dim.directions().filter_map(move |dir| {
        let y = s.step(dir);
        let open = match orient {
            Orientation::Out => cfg.edge_clock(&OrientedBond::from_step(s, dir)) < t_s,
            Orientation::In => cfg.is_open(&OrientedBond::from_step(y, dir.reverse())),
        };
        open.then_some(y)
    })
}

/// Largest `n <= n_max` such that `x → ∂B(x, n)` (or `∂B(x, n) → x`) by an
/// open path inside `B(x, n)`.
///
/// A path leaving `B(x, n - 1)` for the first time lands on `∂B(x, n)` with
/// every earlier site inside, so one search in `B(x, n_max)` answers every
/// `n` at once.
pub fn reach_radius(cfg: &FieldConfig, x: &Site, orient: Orientation, n_max: i64) -> Result<i64> {
    let w = Window::new(LatticeBox::new(*x, n_max)?)?;
    let mut seen = vec![false; w.len()];
    let mut queue = VecDeque::new();
    seen[w.index(x).expect("centre")] = true;
    queue.push_back(*x);
    let mut best = 0;
    while let Some(s) = queue.pop_front() {
        for y in open_steps(cfg, s, orient) {
            let Some(j) = w.index(&y) else { continue };
            if seen[j] {
                continue;
            }
            seen[j] = true;
            let r = y.dist_inf(x);
            if r > best {
                best = r;
                if best == n_max {
                    return Ok(best);
                }
            }
            queue.push_back(y);
        }
    }
    Ok(best)
}

/// Columns `lambda, n, direction, p_hat, se, replicas`.
pub fn survival_csv(curves: &[SurvivalCurve]) -> String {
    let mut out = String::from("lambda,n,direction,p_hat,se,replicas\n");
    for c in curves {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            format_sig(c.lambda, 9),
            c.n,
            c.direction,
            format_sig(c.p_hat, 9),
            format_sig(c.se, 9),
            c.replicas
        );
    }
    out
}

/// Survival curves for every `n` in `ns` from one search per replica.
pub fn survival_profile(cfg: &FieldConfig, ns: &[i64], orient: Orientation, replicas: u64) -> Result<Vec<SurvivalCurve>> {
    if replicas < MIN_SURVIVAL_REPLICAS {
        return Err(Error::InvalidArgument(format!(
            "survival estimates need at least {MIN_SURVIVAL_REPLICAS} replicas, got {replicas}"
        )));
    }
    let n_max = match ns.iter().max() {
        Some(&m) if ns.iter().all(|&n| n >= 1) => m,
        _ => return Err(Error::InvalidArgument("box radii must be at least 1".into())),
    };
    let o = Site::origin(cfg.dim);
    let radii = (0..replicas)
        .into_par_iter()
        .map(|i| reach_radius(&cfg.replica(i), &o, orient, n_max))
        .collect::<Result<Vec<_>>>()?;
    Ok(ns
        .iter()
        .map(|&n| {
            let hits = radii.iter().filter(|&&r| r >= n).count() as u64;
            SurvivalCurve::from_hits(cfg.lambda, n, orient, hits, replicas)
        })
        .collect())
}

pub fn survival_probability(cfg: &FieldConfig, n: i64, orient: Orientation, replicas: u64) -> Result<SurvivalCurve> {
    Ok(survival_profile(cfg, &[n], orient, replicas)?[0])
}

#[derive(Clone, Copy, PartialEq)]
struct Bottleneck {
    w: f64,
    idx: usize,
}

impl Eq for Bottleneck {}

impl Ord for Bottleneck {
    fn cmp(&self, other: &Self) -> Ordering {
        other.w.total_cmp(&self.w).then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Bottleneck {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// The least λ above which the connection event at radius `n` holds.
///
/// A bond `(a, b)` is open at λ iff `λ > e_1(a, b) / T_a`, so the event holds
/// iff λ exceeds the minimax of that ratio over paths from `o` to `∂B_n`.
pub fn critical_threshold(cfg: &FieldConfig, n: i64, orient: Orientation) -> Result<f64> {
    let o = Site::origin(cfg.dim);
    let w = Window::new(LatticeBox::new(o, n)?)?;
    let mut best = vec![f64::INFINITY; w.len()];
    let mut heap = BinaryHeap::new();
    let src = w.index(&o).expect("origin");
    best[src] = 0.0;
    heap.push(Bottleneck { w: 0.0, idx: src });
    while let Some(Bottleneck { w: level, idx }) = heap.pop() {
        if level > best[idx] {
            continue;
        }
        if w.on_boundary(idx) {
            return Ok(level);
        }
        let s = w.site(idx);
        for dir in cfg.dim.directions() {
            let Some(j) = w.neighbor(idx, dir) else { continue };
            let bond = match orient {
                Orientation::Out => OrientedBond::from_step(s, dir),
                Orientation::In => OrientedBond::from_step(w.site(j), dir.reverse()),
            };
            let ratio = cfg.unit_clock(&bond) / cfg.recovery_time(&bond.from);
            let cand = level.max(ratio);
            if cand < best[j] {
                best[j] = cand;
                heap.push(Bottleneck { w: cand, idx: j });
            }
        }
    }
    Ok(f64::INFINITY)
}

/// Bracket `[lo, hi]` with `p̂(lo) < 1/2 <= p̂(hi)` and `hi - lo <= tol`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LambdaBracket {
    pub direction: Orientation,
    pub n: i64,
    pub lo: f64,
    pub hi: f64,
    pub p_lo: f64,
    pub p_hi: f64,
    pub replicas: u64,
    pub evaluations: u32,
}

impl LambdaBracket {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn overlaps(&self, other: &LambdaBracket) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }
}

/// Per-replica thresholds, sorted, for the event at radius `n`.
pub fn critical_thresholds(cfg: &FieldConfig, n: i64, orient: Orientation, replicas: u64) -> Result<Vec<f64>> {
    let mut t = (0..replicas)
        .into_par_iter()
        .map(|i| critical_threshold(&cfg.replica(i), n, orient))
        .collect::<Result<Vec<_>>>()?;
    t.sort_by(f64::total_cmp);
    Ok(t)
}

/// `p̂(λ)` from sorted thresholds: the fraction of replicas whose threshold
/// lies strictly below λ.
pub fn p_hat_at(thresholds: &[f64], lambda: f64) -> f64 {
    let below = thresholds.partition_point(|&m| m < lambda);
    below as f64 / thresholds.len() as f64
}

/// Bisection on λ for the crossing of `p̂(λ, n)` with 1/2. The recovery
/// law and seed come from `cfg`; its λ is ignored.
pub fn estimate_lambda_c(cfg: &FieldConfig, n: i64, orient: Orientation, tol: f64, replicas: u64) -> Result<LambdaBracket> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {tol}")));
    }
    if replicas < MIN_SURVIVAL_REPLICAS {
        return Err(Error::InvalidArgument(format!(
            "survival estimates need at least {MIN_SURVIVAL_REPLICAS} replicas, got {replicas}"
        )));
    }
    let th = critical_thresholds(cfg, n, orient, replicas)?;
    let mut evaluations = 0;
    let mut p = |l: f64| {
        evaluations += 1;
        p_hat_at(&th, l)
    };
    let (mut lo, mut hi) = (0.5, 1.0);
    let mut p_lo = p(lo);
    let mut p_hi = p(hi);
    for _ in 0..60 {
        if p_lo < 0.5 {
            break;
        }
        hi = lo;
        p_hi = p_lo;
        lo *= 0.5;
        p_lo = p(lo);
    }
    for _ in 0..60 {
        if p_hi >= 0.5 {
            break;
        }
        lo = hi;
        p_lo = p_hi;
        hi *= 2.0;
        p_hi = p(hi);
    }
    if p_lo >= 0.5 || p_hi < 0.5 {
        return Err(Error::Estimation(format!(
            "survival curve at n = {n} never crosses 1/2; increase replicas"
        )));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let pm = p(mid);
        if pm >= 0.5 {
            hi = mid;
            p_hi = pm;
        } else {
            lo = mid;
            p_lo = pm;
        }
    }
    Ok(LambdaBracket {
        direction: orient,
        n,
        lo,
        hi,
        p_lo,
        p_hi,
        replicas,
        evaluations,
    })
}

/// Decay model for `log p` against `n` or `n^{1/root}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailModel {
    Exp,
    Stretched { root: u32 },
}

impl TailModel {
    pub fn abscissa(&self, n: f64) -> f64 {
        match *self {
            TailModel::Exp => n,
            TailModel::Stretched { root } => n.powf(1.0 / root as f64),
        }
    }
}

impl fmt::Display for TailModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TailModel::Exp => f.write_str("exp_n"),
            TailModel::Stretched { root } => write!(f, "exp_n_pow(1/{root})"),
        }
    }
}

impl Serialize for TailModel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailFit {
    pub model: TailModel,
    /// Minus the fitted slope of `log p`.
    pub rate: f64,
    pub rate_se: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Smallest and largest `n` used.
    pub support: (f64, f64),
    pub points: usize,
}

/// Least squares of `log p` on the model abscissa. Points with `p <= 0`
/// are dropped; fewer than four remaining is an error.
pub fn tail_fit(points: &[(f64, f64)], model: TailModel) -> Result<TailFit> {
    let kept: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(_, p)| p > 0.0)
        .map(|&(n, p)| (n, p.ln()))
        .collect();
    if kept.len() < 4 {
        return Err(Error::Estimation(format!(
            "tail fit needs at least 4 points with p > 0, got {}",
            kept.len()
        )));
    }
    let xs: Vec<f64> = kept.iter().map(|&(n, _)| model.abscissa(n)).collect();
    let ys: Vec<f64> = kept.iter().map(|&(_, y)| y).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Estimation("tail fit needs distinct abscissae".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r2 = if syy > 0.0 { (1.0 - ssr / syy).clamp(0.0, 1.0) } else { 0.0 };
    let rate_se = (ssr / (k - 2.0) / sxx).sqrt();
    let ns = kept.iter().map(|&(n, _)| n);
    let support = (ns.clone().fold(f64::INFINITY, f64::min), ns.fold(f64::NEG_INFINITY, f64::max));
    Ok(TailFit {
        model,
        rate: -slope,
        rate_se,
        intercept,
        r2,
        support,
        points: kept.len(),
    })
}

/// [`tail_fit`] over a family of survival curves, abscissa `n`.
pub fn tail_fit_curves(curves: &[SurvivalCurve], model: TailModel) -> Result<TailFit> {
    let pts: Vec<(f64, f64)> = curves.iter().map(|c| (c.n as f64, c.p_hat)).collect();
    tail_fit(&pts, model)
}

/// Increasing event written as a disjunction of conjunctions of open-bond
/// indicators, e.g. `(0,0,0)->(1,0,0) & (1,0,0)->(2,0,0) | (0,0,0)->(0,1,0)`.
/// Negation is not expressible, so every parsed event is increasing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonotoneEvent {
    clauses: Vec<Vec<OrientedBond>>,
}

impl MonotoneEvent {
    pub fn new(clauses: Vec<Vec<OrientedBond>>) -> Result<Self> {
        if clauses.is_empty() || clauses.iter().any(|c| c.is_empty()) {
            return Err(Error::Parse("events need at least one non-empty clause".into()));
        }
        Ok(MonotoneEvent { clauses })
    }

    pub fn single(b: OrientedBond) -> Self {
        MonotoneEvent { clauses: vec![vec![b]] }
    }

    pub fn clauses(&self) -> &[Vec<OrientedBond>] {
        &self.clauses
    }

    pub fn bonds(&self) -> impl Iterator<Item = &OrientedBond> {
        self.clauses.iter().flatten()
    }

    pub fn holds(&self, cfg: &FieldConfig) -> bool {
        self.clauses.iter().any(|c| c.iter().all(|b| cfg.is_open(b)))
    }
}

impl FromStr for MonotoneEvent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lowered = s.to_ascii_lowercase();
        if s.contains(['!', '~', '¬']) || lowered.split(|c: char| !c.is_alphanumeric()).any(|w| w == "not") {
            return Err(Error::NonMonotone(format!("negation in event {s:?}")));
        }
        let clauses = s
            .split('|')
            .map(|clause| {
                clause
                    .split('&')
                    .map(|lit| parse_bond(lit.trim()))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        MonotoneEvent::new(clauses)
    }
}

fn parse_bond(s: &str) -> Result<OrientedBond> {
    let (a, b) = s
        .split_once("->")
        .ok_or_else(|| Error::Parse(format!("bond {s:?} is not of the form (x)->(y)")))?;
    OrientedBond::new(a.parse()?, b.parse()?)
}

impl fmt::Display for MonotoneEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.clauses.iter().enumerate() {
            if i > 0 {
                f.write_str(" | ")?;
            }
            for (j, b) in c.iter().enumerate() {
                if j > 0 {
                    f.write_str(" & ")?;
                }
                write!(f, "{b}")?;
            }
        }
        Ok(())
    }
}

impl Serialize for MonotoneEvent {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FkgReport {
    pub u: MonotoneEvent,
    pub v: MonotoneEvent,
    pub mean_u: f64,
    pub mean_v: f64,
    pub cov: f64,
    pub se: f64,
    pub replicas: u64,
    /// `cov >= -3 se`.
    pub passed: bool,
}

/// Empirical `Cov(U, V)` over independent replicas of the field.
pub fn fkg_check(cfg: &FieldConfig, u: &MonotoneEvent, v: &MonotoneEvent, replicas: u64) -> Result<FkgReport> {
    if replicas < 2 {
        return Err(Error::InvalidArgument("covariance needs at least 2 replicas".into()));
    }
    if let Some(b) = u.bonds().chain(v.bonds()).find(|b| b.from.dim() != cfg.dim) {
        return Err(Error::InvalidArgument(format!("bond {b} does not match d = {}", cfg.dim)));
    }
    let obs: Vec<(f64, f64)> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let f = cfg.replica(i);
            (f64::from(u8::from(u.holds(&f))), f64::from(u8::from(v.holds(&f))))
        })
        .collect();
    let n = replicas as f64;
    let mu = obs.iter().map(|p| p.0).sum::<f64>() / n;
    let mv = obs.iter().map(|p| p.1).sum::<f64>() / n;
    let w: Vec<f64> = obs.iter().map(|&(a, b)| (a - mu) * (b - mv)).collect();
    let cov = w.iter().sum::<f64>() / (n - 1.0);
    let mw = w.iter().sum::<f64>() / n;
    let var_w = w.iter().map(|x| (x - mw).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var_w / n).sqrt();
    Ok(FkgReport {
        u: u.clone(),
        v: v.clone(),
        mean_u: mu,
        mean_v: mv,
        cov,
        se,
        replicas,
        passed: cov >= -3.0 * se,
    })
}

/// Box `B(L e_d, L)` used by the slab probe, `L = extent / 2`.
pub fn slab_box(cfg: &FieldConfig, extent: i64) -> Result<LatticeBox> {
    if extent < 2 {
        return Err(Error::InvalidArgument(format!("lateral extent must be at least 2, got {extent}")));
    }
    let half = extent / 2;
    let top = cfg.dim.get() - 1;
    LatticeBox::new(Site::unit(cfg.dim, top).scale(half), half)
}

/// Whether `C_x^o(S_k ∩ box)` for `x = h e_d` reaches lateral distance
/// `L = extent / 2`, i.e. the side faces of [`slab_box`].
pub fn slab_hits(cfg: &FieldConfig, k: i64, extent: i64, height: i64) -> Result<bool> {
    if k < 1 {
        return Err(Error::InvalidArgument(format!("slab thickness must be positive, got {k}")));
    }
    let bounds = slab_box(cfg, extent)?;
    let half = bounds.radius;
    let top = cfg.dim.get() - 1;
    if !(0..=k.min(2 * half)).contains(&height) {
        return Err(Error::InvalidArgument(format!("height {height} outside the slab")));
    }
    let inside = |y: &Site| bounds.contains(y) && (0..=k).contains(&y.coord(top));
    let lateral = |y: &Site| (0..top).map(|a| y.coord(a).abs()).max().unwrap_or(0);
    let w = Window::new(bounds)?;
    let x = Site::unit(cfg.dim, top).scale(height);
    let mut seen = vec![false; w.len()];
    seen[w.index(&x).expect("x in box")] = true;
    let mut queue = VecDeque::from([x]);
    while let Some(s) = queue.pop_front() {
        if lateral(&s) >= half {
            return Ok(true);
        }
        for y in open_steps(cfg, s, Orientation::Out) {
            if !inside(&y) {
                continue;
            }
            let j = w.index(&y).expect("inside the box");
            if !seen[j] {
                seen[j] = true;
                queue.push_back(y);
            }
        }
    }
    Ok(false)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlabHeight {
    pub height: i64,
    pub frequency: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlabReport {
    pub k: i64,
    pub extent: i64,
    pub replicas: u64,
    pub heights: Vec<SlabHeight>,
    pub min_frequency: f64,
}

impl SlabReport {
    /// Columns `k, extent, height, frequency, se, replicas`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,extent,height,frequency,se,replicas\n");
        for h in &self.heights {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                self.k,
                self.extent,
                h.height,
                format_sig(h.frequency, 9),
                format_sig(h.se, 9),
                self.replicas
            );
        }
        out
    }
}

/// Heights probed for thickness `k`: bottom, middle and top of the part of
/// the slab inside the box.
pub fn slab_heights(k: i64, extent: i64) -> Vec<i64> {
    let top = k.min(2 * (extent / 2));
    let mut h = vec![0, top / 2, top];
    h.dedup();
    h
}

pub fn slab_percolation_probe(cfg: &FieldConfig, k: i64, extent: i64, replicas: u64) -> Result<SlabReport> {
    if replicas == 0 {
        return Err(Error::InvalidArgument("need at least one replica".into()));
    }
    let heights = slab_heights(k, extent)
        .into_iter()
        .map(|h| {
            let hits = (0..replicas)
                .into_par_iter()
                .map(|i| slab_hits(&cfg.replica(i), k, extent, h).map(u64::from))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .sum::<u64>();
            let p = hits as f64 / replicas as f64;
            Ok(SlabHeight {
                height: h,
                frequency: p,
                se: (p * (1.0 - p) / replicas as f64).sqrt(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let min_frequency = heights.iter().map(|h| h.frequency).fold(f64::INFINITY, f64::min);
    Ok(SlabReport {
        k,
        extent,
        replicas,
        heights,
        min_frequency,
    })
}

/// Percentile bootstrap interval of `stat` at level 0.95.
pub fn bootstrap_ci(xs: &[f64], stat: impl Fn(&[f64]) -> f64, resamples: usize, seed: u64) -> (f64, f64) {
    let point = stat(xs);
    if xs.len() < 2 || resamples == 0 {
        return (point, point);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = vec![0.0; xs.len()];
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = xs[rng.random_range(0..xs.len())];
            }
            stat(&buf)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let q = |p: f64| stats[((p * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    (q(0.025).min(point), q(0.975).max(point))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
