//! Regularised passage times, radial limits and the asymptotic shape.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::cluster::{kappa, u_weight_in, Neighborhood, TildeC};
use crate::error::{Error, Result};
use crate::export::{format_sig, format_time};
use crate::field::FieldConfig;
use crate::graph::{bfs, dijkstra, DijkstraLimits, OpenGraph, Orientation, UNREACHED};
use crate::lattice::{Dim, LatticeBox, Site};
use crate::stats::{bootstrap_ci, mean, median, tail_fit, TailFit, TailModel};

pub const DEFAULT_C_PRIME: i64 = 8;
pub const DEFAULT_RESAMPLES: usize = 1000;

/// A sampled window `B_L` together with its backbone proxy `C̃`.
pub struct Backbone {
    pub graph: OpenGraph,
    pub tilde_c: TildeC,
}

impl Backbone {
    pub fn new(cfg: &FieldConfig, box_radius: i64) -> Result<Self> {
        let graph = OpenGraph::build(cfg, LatticeBox::centered(cfg.dim, box_radius)?)?;
        let tilde_c = TildeC::compute(&graph)?;
        Ok(Backbone { graph, tilde_c })
    }

    pub fn neighborhood(&self, x: &Site, c_prime: i64) -> Result<Neighborhood> {
        kappa(&self.graph, &self.tilde_c, x, c_prime)
    }

    pub fn u(&self, nb: &Neighborhood) -> f64 {
        u_weight_in(&self.graph, nb)
    }

    /// `τ(V(x), ·)` for every site of the window.
    pub fn times_from(&self, nb: &Neighborhood) -> Vec<f64> {
        dijkstra(&self.graph, nb.v_indices(), Orientation::Out, DijkstraLimits::default())
    }

    /// `τ̂(x, y)` given the two neighbourhoods.
    pub fn tau_hat(&self, nx: &Neighborhood, ny: &Neighborhood) -> f64 {
        let mut targets = vec![false; self.graph.window().len()];
        for &i in ny.v_indices() {
            targets[i] = true;
        }
        let t = dijkstra(
            &self.graph,
            nx.v_indices(),
            Orientation::Out,
            DijkstraLimits {
                targets: Some(&targets),
                ..Default::default()
            },
        );
        min_over(&t, ny)
    }

    /// `τ(x, y)` in the window.
    pub fn tau(&self, x: &Site, y: &Site) -> Result<f64> {
        crate::epidemic::passage_time_in(&self.graph, x, y, &crate::cluster::Region::All)
    }
}

/// Minimum of per-site times over `V(y)`.
pub fn min_over(times: &[f64], ny: &Neighborhood) -> f64 {
    ny.v_indices().iter().map(|&i| times[i]).fold(f64::INFINITY, f64::min)
}

/// `τ̂(x, y)`, the first-passage time from `V(x)` to `V(y)`, sampled in `B_L`.
pub fn tau_hat(cfg: &FieldConfig, x: &Site, y: &Site, box_radius: i64, c_prime: i64) -> Result<f64> {
    let bb = Backbone::new(cfg, box_radius)?;
    let nx = bb.neighborhood(x, c_prime)?;
    let ny = bb.neighborhood(y, c_prime)?;
    Ok(bb.tau_hat(&nx, &ny))
}

#[derive(Debug, Clone, Serialize)]
pub struct RadialParams {
    pub box_radius: i64,
    pub c_prime: i64,
    pub replicas: u64,
    /// Replica indices used are `first_replica..first_replica + replicas`.
    pub first_replica: u64,
    pub resamples: usize,
    /// Estimated critical rate; a warning is recorded when λ is below it.
    pub lambda_c: Option<f64>,
}

impl RadialParams {
    pub fn new(box_radius: i64, replicas: u64) -> Self {
        RadialParams {
            box_radius,
            c_prime: DEFAULT_C_PRIME,
            replicas,
            first_replica: 0,
            resamples: DEFAULT_RESAMPLES,
            lambda_c: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RadialSample {
    pub replica: u64,
    pub n: i64,
    pub ratio: f64,
    /// `(τ̂(o, nz) + u(nz)) / n`, the exactly subadditive companion.
    pub subadditive: f64,
}

/// Summary of `τ̂(o, nz) / n` over replicas at one `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RadialPoint {
    pub n: i64,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub count: usize,
    /// Replicas with `nz` outside the cluster of `o`.
    pub excluded: usize,
    /// Replicas whose neighbourhoods did not fit in the box.
    pub truncated: usize,
    /// Mean of `(τ̂(o, nz) + u(nz)) / n` with its bootstrap interval.
    pub sub_mean: f64,
    pub sub_ci_lo: f64,
    pub sub_ci_hi: f64,
}

impl RadialPoint {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_hi - self.ci_lo)
    }

    pub fn sub_half_width(&self) -> f64 {
        0.5 * (self.sub_ci_hi - self.sub_ci_lo)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RadialEstimate {
    pub z: Site,
    pub n_values: Vec<i64>,
    pub samples: Vec<RadialSample>,
    pub points: Vec<RadialPoint>,
    pub mu_hat: f64,
    pub ci: (f64, f64),
    pub warnings: Vec<String>,
}

impl RadialEstimate {
    pub fn point(&self, n: i64) -> Option<&RadialPoint> {
        self.points.iter().find(|p| p.n == n)
    }

    /// Columns `z, n, replica, ratio`; `z` is quoted.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("z,n,replica,ratio\n");
        for s in &self.samples {
            let _ = writeln!(out, "\"{}\",{},{},{}", self.z, s.n, s.replica, format_time(s.ratio));
        }
        out
    }
}

enum RadialOutcome {
    Ratio(f64, f64),
    Excluded,
    Truncated,
}

fn radial_replica(cfg: &FieldConfig, z: &Site, n_values: &[i64], p: &RadialParams) -> Result<Vec<RadialOutcome>> {
    let bb = Backbone::new(cfg, p.box_radius)?;
    let o = Site::origin(cfg.dim);
    let no = match bb.neighborhood(&o, p.c_prime) {
        Ok(nb) => nb,
        Err(Error::Truncated(_)) => return Ok(n_values.iter().map(|_| RadialOutcome::Truncated).collect()),
        Err(e) => return Err(e),
    };
    let w = bb.graph.window();
    let reach = bfs(&bb.graph, &[w.index(&o).expect("origin")], Orientation::Out, None, None);
    let times = bb.times_from(&no);
    n_values
        .iter()
        .map(|&n| {
            let x = z.scale(n);
            let xi = w.index(&x).expect("checked against the box");
            if reach[xi] == UNREACHED {
                return Ok(RadialOutcome::Excluded);
            }
            let nx = match bb.neighborhood(&x, p.c_prime) {
                Ok(nb) => nb,
                Err(Error::Truncated(_)) => return Ok(RadialOutcome::Truncated),
                Err(e) => return Err(e),
            };
            let t = min_over(&times, &nx);
            // Two backbone sites can sit in different components of the
            // finite window; that is a finite-size artefact.
            Ok(if t.is_finite() {
                RadialOutcome::Ratio(t / n as f64, (t + bb.u(&nx)) / n as f64)
            } else {
                RadialOutcome::Truncated
            })
        })
        .collect()
}

/// Samples of `τ̂(o, nz) / n` for each `n` in `n_values`, conditioned on
/// `nz ∈ C_o^o`.
pub fn radial_limit(cfg: &FieldConfig, z: &Site, n_values: &[i64], p: &RadialParams) -> Result<RadialEstimate> {
    if n_values.is_empty() || n_values.iter().any(|&n| n < 1) {
        return Err(Error::InvalidArgument("n values must be positive".into()));
    }
    if z.dim() != cfg.dim {
        return Err(Error::InvalidArgument(format!("direction {z} does not match d = {}", cfg.dim)));
    }
    let reach = n_values.iter().max().copied().unwrap_or(0) * z.norm_inf();
    if reach + p.c_prime > p.box_radius {
        return Err(Error::Truncated(format!(
            "n z reaches radius {reach}, which with C' = {} does not fit in B_{}",
            p.c_prime, p.box_radius
        )));
    }
    let mut warnings = Vec::new();
    if let Some(lc) = p.lambda_c.filter(|&lc| cfg.lambda <= lc) {
        warnings.push(format!("λ = {} is not above the estimated critical rate {lc}", cfg.lambda));
    }
    let per_replica = (p.first_replica..p.first_replica + p.replicas)
        .into_par_iter()
        .map(|i| radial_replica(&cfg.replica(i), z, n_values, p))
        .collect::<Result<Vec<_>>>()?;

    let mut samples = Vec::new();
    let mut points = Vec::new();
    for (k, &n) in n_values.iter().enumerate() {
        let (mut ratios, mut subs, mut excluded, mut truncated) = (Vec::new(), Vec::new(), 0, 0);
        for (r, outcomes) in per_replica.iter().enumerate() {
            match outcomes[k] {
                RadialOutcome::Ratio(v, s) => {
                    ratios.push(v);
                    subs.push(s);
                    samples.push(RadialSample {
                        replica: p.first_replica + r as u64,
                        n,
                        ratio: v,
                        subadditive: s,
                    });
                }
                RadialOutcome::Excluded => excluded += 1,
                RadialOutcome::Truncated => truncated += 1,
            }
        }
        let summarize = |xs: &[f64], salt: u64| {
            if xs.is_empty() {
                (f64::NAN, (f64::NAN, f64::NAN))
            } else {
                (mean(xs), bootstrap_ci(xs, mean, p.resamples, cfg.seed ^ n as u64 ^ salt))
            }
        };
        let (m, (lo, hi)) = summarize(&ratios, 0);
        let (sm, (slo, shi)) = summarize(&subs, 1 << 40);
        points.push(RadialPoint {
            n,
            mean: m,
            ci_lo: lo,
            ci_hi: hi,
            count: ratios.len(),
            excluded,
            truncated,
            sub_mean: sm,
            sub_ci_lo: slo,
            sub_ci_hi: shi,
        });
    }
    if points.iter().all(|pt| pt.count == 0) {
        return Err(Error::Estimation("every replica was excluded: subcritical or box too small".into()));
    }
    samples.sort_by_key(|s| (s.n, s.replica));
    let last = *points.last().expect("non-empty");
    Ok(RadialEstimate {
        z: *z,
        n_values: n_values.to_vec(),
        samples,
        points,
        mu_hat: last.mean,
        ci: (last.ci_lo, last.ci_hi),
        warnings,
    })
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Primitive integer vectors with `‖z‖_∞ <= 2`, in site order: the axes,
/// all diagonals and the knight-type refinements between them.
pub fn direction_grid(dim: Dim) -> Vec<Site> {
    LatticeBox::centered(dim, 2)
        .expect("radius 2")
        .sites()
        .filter(|z| !z.is_origin() && z.coords().iter().fold(0, |g, &c| gcd(g, c)) == 1)
        .collect()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
    v.iter().map(|c| c / n).collect()
}

/// Angle between unit vectors, accurate near 0 and π.
fn angle(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let sum = a.iter().zip(b).map(|(x, y)| (x + y).powi(2)).sum::<f64>().sqrt();
    2.0 * diff.atan2(sum)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DirectionalRadius {
    pub direction: Site,
    pub radius: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl DirectionalRadius {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_hi - self.ci_lo)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct CloudPoint {
    pub replica: u64,
    pub site: Site,
}

/// `D̂` as a table of radii along grid directions, with the homogeneous
/// interpolant `φ̂` and the rescaled point clouds it came from.
#[derive(Debug, Clone, Serialize)]
pub struct ShapeEstimate {
    pub t: f64,
    pub dim: Dim,
    pub radii: Vec<DirectionalRadius>,
    /// Sites with infection time `<= t`, kept only on request.
    pub cloud: Vec<CloudPoint>,
    pub survivors: usize,
    pub excluded: usize,
    #[serde(skip)]
    units: Vec<Vec<f64>>,
    #[serde(skip)]
    coverage: f64,
}

impl ShapeEstimate {
    pub fn from_radii(dim: Dim, t: f64, radii: Vec<DirectionalRadius>) -> Result<Self> {
        if radii.is_empty() {
            return Err(Error::InvalidArgument("the radius table is empty".into()));
        }
        if radii.iter().any(|r| r.direction.dim() != dim || r.direction.is_origin()) {
            return Err(Error::InvalidArgument("bad direction in the radius table".into()));
        }
        let units: Vec<Vec<f64>> = radii.iter().map(|r| unit(&r.direction.to_f64())).collect();
        // Largest angular gap from a grid direction to its nearest neighbour;
        // query directions farther than this from the grid are extrapolated.
        let coverage = units
            .iter()
            .enumerate()
            .map(|(i, u)| {
                units
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, v)| angle(u, v))
                    .fold(std::f64::consts::PI, f64::min)
            })
            .fold(0.0, f64::max);
        Ok(ShapeEstimate {
            t,
            dim,
            radii,
            cloud: Vec::new(),
            survivors: 0,
            excluded: 0,
            units,
            coverage,
        })
    }

    pub fn radius(&self, direction: &Site) -> Option<&DirectionalRadius> {
        self.radii.iter().find(|r| r.direction == *direction)
    }

    /// `φ̂(x)` and whether `x / ‖x‖` lies outside the grid's coverage.
    ///
    /// Speeds `1 / radius` are averaged over the `d + 1` nearest grid
    /// directions with weights `(1/a - 1/a_cut)^2`, where `a` is the angle to
    /// a grid direction and `a_cut` the angle to the next one, so weights
    /// vanish as directions leave the set and `φ̂` is continuous. The average
    /// is scaled by `‖x‖_2`. Exact on grid directions.
    pub fn phi_checked(&self, x: &[f64]) -> (f64, bool) {
        let norm = x.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm == 0.0 {
            return (0.0, false);
        }
        let u: Vec<f64> = x.iter().map(|c| c / norm).collect();
        let mut near: Vec<(f64, usize)> = self.units.iter().enumerate().map(|(i, g)| (angle(&u, g), i)).collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0));
        let speed = |i: usize| 1.0 / self.radii[i].radius;
        let (a0, i0) = near[0];
        let extrapolated = a0 > 1.01 * self.coverage;
        if a0 < 1e-12 {
            return (norm * speed(i0), extrapolated);
        }
        let k = (self.dim.get() + 1).min(near.len());
        let cut = near.get(k).map_or(f64::INFINITY, |n| n.0);
        let (mut num, mut den) = (0.0, 0.0);
        for &(a, i) in &near[..k] {
            let w = (1.0 / a - 1.0 / cut).powi(2);
            num += w * speed(i);
            den += w;
        }
        if den == 0.0 {
            // All k directions tie with the next one.
            let mean = near[..k].iter().map(|&(_, i)| speed(i)).sum::<f64>() / k as f64;
            return (norm * mean, extrapolated);
        }
        (norm * (num / den), extrapolated)
    }

    pub fn phi(&self, x: &[f64]) -> f64 {
        self.phi_checked(x).0
    }

    /// Whether `x ∈ scale · D̂`, i.e. `φ̂(x) <= scale`.
    pub fn contains_scaled(&self, x: &[f64], scale: f64) -> bool {
        self.phi(x) <= scale
    }

    /// Boundary points `r(u) u` of `D̂`.
    pub fn boundary_points(&self) -> Vec<Vec<f64>> {
        self.units
            .iter()
            .zip(&self.radii)
            .map(|(u, r)| u.iter().map(|c| c * r.radius).collect())
            .collect()
    }

    /// Hausdorff distance between the boundary point sets of two estimates.
    pub fn hausdorff(&self, other: &ShapeEstimate) -> f64 {
        let a = self.boundary_points();
        let b = other.boundary_points();
        let dist = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let one_way = |s: &[Vec<f64>], t: &[Vec<f64>]| {
            s.iter()
                .map(|p| t.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max)
        };
        one_way(&a, &b).max(one_way(&b, &a))
    }

    /// Columns `direction, radius, ci_lo, ci_hi`; the direction is quoted.
    pub fn radii_csv(&self) -> String {
        let mut out = String::from("direction,radius,ci_lo,ci_hi\n");
        for r in &self.radii {
            let _ = writeln!(
                out,
                "\"{}\",{},{},{}",
                r.direction,
                format_sig(r.radius, 9),
                format_sig(r.ci_lo, 9),
                format_sig(r.ci_hi, 9)
            );
        }
        out
    }

    /// Columns `replica, x_1..x_d` with coordinates divided by `t`.
    pub fn cloud_csv(&self) -> String {
        let mut out = String::from("replica");
        for a in 1..=self.dim.get() {
            let _ = write!(out, ",x_{a}");
        }
        out.push('\n');
        for p in &self.cloud {
            let _ = write!(out, "{}", p.replica);
            for &c in p.site.coords() {
                let _ = write!(out, ",{}", format_sig(c as f64 / self.t, 9));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ShapeParams {
    pub box_radius: i64,
    pub replicas: u64,
    pub first_replica: u64,
    pub resamples: usize,
    pub keep_cloud: bool,
}

impl ShapeParams {
    pub fn new(box_radius: i64, replicas: u64) -> Self {
        ShapeParams {
            box_radius,
            replicas,
            first_replica: 0,
            resamples: DEFAULT_RESAMPLES,
            keep_cloud: false,
        }
    }
}

/// One replica's infection times in `B_L` with no horizon.
struct GrowthRun {
    graph: OpenGraph,
    infection: Vec<f64>,
    recovery: Vec<f64>,
    survived: bool,
}

fn growth_run(cfg: &FieldConfig, box_radius: i64) -> Result<GrowthRun> {
    let graph = OpenGraph::build(cfg, LatticeBox::centered(cfg.dim, box_radius)?)?;
    let w = graph.window();
    let o = w.index(&Site::origin(cfg.dim)).expect("origin");
    let infection = dijkstra(&graph, &[o], Orientation::Out, DijkstraLimits::default());
    let recovery = infection
        .iter()
        .enumerate()
        .map(|(i, &t)| t + graph.sample().recovery(i))
        .collect();
    let half = box_radius / 2;
    let survived = infection
        .iter()
        .enumerate()
        .any(|(i, t)| t.is_finite() && w.radius_of(i) >= half);
    Ok(GrowthRun {
        graph,
        infection,
        recovery,
        survived,
    })
}

fn check_inside(run: &GrowthRun, t: f64, box_radius: i64) -> Result<()> {
    let w = run.graph.window();
    if run.infection.iter().enumerate().any(|(i, &s)| s <= t && w.on_boundary(i)) {
        return Err(Error::Truncated(format!(
            "the infected set reaches ∂B_{box_radius} before t = {t}"
        )));
    }
    Ok(())
}

/// Per-replica radius `max{‖kz‖_2 : infection(kz) <= t} / t` along `z`.
fn replica_radii(run: &GrowthRun, grid: &[Site], t: f64) -> Vec<f64> {
    let w = run.graph.window();
    grid.iter()
        .map(|z| {
            let mut best = 0;
            let mut k = 1;
            while let Some(i) = w.index(&z.scale(k)) {
                if run.infection[i] <= t {
                    best = k;
                }
                k += 1;
            }
            z.scale(best).norm_l2() / t
        })
        .collect()
}

/// Estimates `D̂` at time `t` from the replicas that survive to `∂B_{L/2}`.
pub fn estimate_shape(cfg: &FieldConfig, t: f64, p: &ShapeParams) -> Result<ShapeEstimate> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("t must be positive, got {t}")));
    }
    let grid = direction_grid(cfg.dim);
    let per_replica = (p.first_replica..p.first_replica + p.replicas)
        .into_par_iter()
        .map(|i| -> Result<Option<(Vec<f64>, Vec<CloudPoint>)>> {
            let run = growth_run(&cfg.replica(i), p.box_radius)?;
            if !run.survived {
                return Ok(None);
            }
            check_inside(&run, t, p.box_radius)?;
            let cloud = if p.keep_cloud {
                let w = run.graph.window();
                run.infection
                    .iter()
                    .enumerate()
                    .filter(|(_, &s)| s <= t)
                    .map(|(j, _)| CloudPoint {
                        replica: i,
                        site: w.site(j),
                    })
                    .collect()
            } else {
                Vec::new()
            };
            Ok(Some((replica_radii(&run, &grid, t), cloud)))
        })
        .collect::<Result<Vec<_>>>()?;
    let survivors: Vec<_> = per_replica.into_iter().flatten().collect();
    let excluded = p.replicas as usize - survivors.len();
    if survivors.is_empty() {
        return Err(Error::Estimation("no replica survived: subcritical or box too small".into()));
    }
    let radii = grid
        .iter()
        .enumerate()
        .map(|(k, z)| {
            let xs: Vec<f64> = survivors.iter().map(|(r, _)| r[k]).collect();
            let (lo, hi) = bootstrap_ci(&xs, median, p.resamples, cfg.seed ^ ((k as u64) << 8));
            DirectionalRadius {
                direction: *z,
                radius: median(&xs),
                ci_lo: lo,
                ci_hi: hi,
            }
        })
        .collect();
    let mut est = ShapeEstimate::from_radii(cfg.dim, t, radii)?;
    est.survivors = survivors.len();
    est.excluded = excluded;
    est.cloud = survivors.into_iter().flat_map(|(_, c)| c).collect();
    Ok(est)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SandwichRow {
    pub t: f64,
    /// Mean fraction of `(1-ε)tD̂ ∩ C_o^o` not yet infected by `t`.
    pub inner_violation: f64,
    pub inner_se: f64,
    /// Mean fraction of `ξ_t ∪ ζ_t` outside `(1+ε)tD̂`.
    pub outer_violation: f64,
    pub outer_se: f64,
    /// Mean fraction of `ζ_t` inside `(1-ε)tD̂`.
    pub annulus_fraction: f64,
    pub annulus_se: f64,
    pub replicas: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SandwichReport {
    pub eps: f64,
    pub rows: Vec<SandwichRow>,
    pub survivors: usize,
    pub excluded: usize,
}

impl SandwichReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "eps,t,inner_violation,inner_se,outer_violation,outer_se,annulus_fraction,annulus_se,replicas\n",
        );
        for r in &self.rows {
            let cells = [r.t, r.inner_violation, r.inner_se, r.outer_violation, r.outer_se, r.annulus_fraction, r.annulus_se];
            let _ = write!(out, "{}", format_sig(self.eps, 9));
            for c in cells {
                let _ = write!(out, ",{}", format_sig(c, 9));
            }
            let _ = writeln!(out, ",{}", r.replicas);
        }
        out
    }
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = mean(xs);
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Checks `(1-ε)tD̂ ∩ C_o^o ⊂ ξ_t ∪ ζ_t ⊂ (1+ε)tD̂` and the annulus
/// property of `ζ_t` along a ladder of times, against a reference `D̂`.
pub fn sandwich_check(
    cfg: &FieldConfig,
    eps: f64,
    ts: &[f64],
    reference: &ShapeEstimate,
    p: &ShapeParams,
) -> Result<SandwichReport> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidArgument(format!("eps must lie in (0, 1], got {eps}")));
    }
    if ts.is_empty() || ts.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::InvalidArgument("times must be positive".into()));
    }
    if reference.dim != cfg.dim {
        return Err(Error::InvalidArgument("reference shape has the wrong dimension".into()));
    }
    let t_max = ts.iter().copied().fold(0.0, f64::max);
    let r_max = reference.radii.iter().map(|r| r.radius).fold(0.0, f64::max);
    if (1.0 + eps) * t_max * r_max >= p.box_radius as f64 {
        return Err(Error::Truncated(format!(
            "(1+ε) t D̂ reaches radius {:.1}, beyond B_{}",
            (1.0 + eps) * t_max * r_max,
            p.box_radius
        )));
    }
    let window = crate::graph::Window::new(LatticeBox::centered(cfg.dim, p.box_radius)?)?;
    let phi: Vec<f64> = (0..window.len())
        .into_par_iter()
        .map(|i| reference.phi(&window.site(i).to_f64()))
        .collect();

    let per_replica = (p.first_replica..p.first_replica + p.replicas)
        .into_par_iter()
        .map(|i| -> Result<Option<Vec<[f64; 3]>>> {
            let run = growth_run(&cfg.replica(i), p.box_radius)?;
            if !run.survived {
                return Ok(None);
            }
            check_inside(&run, t_max, p.box_radius)?;
            Ok(Some(
                ts.iter()
                    .map(|&t| {
                        let (mut inner_den, mut inner_bad) = (0, 0);
                        let (mut ever, mut outer_bad) = (0, 0);
                        let (mut zeta, mut zeta_in) = (0, 0);
                        for (j, (&s, &rec)) in run.infection.iter().zip(&run.recovery).enumerate() {
                            let in_inner = phi[j] <= (1.0 - eps) * t;
                            if in_inner && s.is_finite() {
                                inner_den += 1;
                                if s > t {
                                    inner_bad += 1;
                                }
                            }
                            if s <= t {
                                ever += 1;
                                if phi[j] > (1.0 + eps) * t {
                                    outer_bad += 1;
                                }
                                if rec > t {
                                    zeta += 1;
                                    if in_inner {
                                        zeta_in += 1;
                                    }
                                }
                            }
                        }
                        [ratio(inner_bad, inner_den), ratio(outer_bad, ever), ratio(zeta_in, zeta)]
                    })
                    .collect(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let survivors: Vec<Vec<[f64; 3]>> = per_replica.into_iter().flatten().collect();
    if survivors.is_empty() {
        return Err(Error::Estimation("no replica survived: subcritical or box too small".into()));
    }
    let rows = ts
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let col = |c: usize| mean_se(&survivors.iter().map(|r| r[k][c]).collect::<Vec<_>>());
            let (inner, inner_se) = col(0);
            let (outer, outer_se) = col(1);
            let (ann, ann_se) = col(2);
            SandwichRow {
                t,
                inner_violation: inner,
                inner_se,
                outer_violation: outer,
                outer_se,
                annulus_fraction: ann,
                annulus_se: ann_se,
                replicas: survivors.len(),
            }
        })
        .collect();
    Ok(SandwichReport {
        eps,
        rows,
        survivors: survivors.len(),
        excluded: p.replicas as usize - survivors.len(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthTailRow {
    pub k: f64,
    /// `(r, P(τ̂(o, z) > K r), samples)` for `‖z‖_∞ = r`.
    pub probabilities: Vec<(i64, f64, usize)>,
    pub fit: Option<TailFit>,
    pub accepted: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthTailReport {
    pub radii: Vec<i64>,
    pub rows: Vec<GrowthTailRow>,
    pub truncated: usize,
    /// Smallest grid `K` whose tail fit has a positive rate and `R² >= 0.9`.
    pub smallest_k: Option<f64>,
}

/// Tail of `τ̂(o, z) / ‖z‖_∞` for `z` on the axes at the given radii,
/// fitted against `‖z‖_∞^{1/d}` for each `K`.
pub fn linear_growth_tail(cfg: &FieldConfig, radii: &[i64], k_grid: &[f64], p: &RadialParams) -> Result<GrowthTailReport> {
    let r_max = radii.iter().copied().max().unwrap_or(0);
    if radii.iter().any(|&r| r < 1) || r_max + p.c_prime > p.box_radius {
        return Err(Error::Truncated(format!(
            "radii up to {r_max} with C' = {} do not fit in B_{}",
            p.c_prime, p.box_radius
        )));
    }
    let dim = cfg.dim;
    let per_replica = (p.first_replica..p.first_replica + p.replicas)
        .into_par_iter()
        .map(|i| -> Result<(Vec<Vec<f64>>, usize)> {
            let bb = Backbone::new(&cfg.replica(i), p.box_radius)?;
            let no = match bb.neighborhood(&Site::origin(dim), p.c_prime) {
                Ok(nb) => nb,
                Err(Error::Truncated(_)) => return Ok((vec![Vec::new(); radii.len()], radii.len() * dim.degree())),
                Err(e) => return Err(e),
            };
            let times = bb.times_from(&no);
            let mut trunc = 0;
            let mut out = Vec::with_capacity(radii.len());
            for &r in radii {
                let mut vals = Vec::new();
                for dir in dim.directions() {
                    let z = Site::origin(dim).step(dir).scale(r);
                    match bb.neighborhood(&z, p.c_prime) {
                        Ok(nz) => {
                            let t = min_over(&times, &nz);
                            if t.is_finite() {
                                vals.push(t);
                            } else {
                                trunc += 1;
                            }
                        }
                        Err(Error::Truncated(_)) => trunc += 1,
                        Err(e) => return Err(e),
                    }
                }
                out.push(vals);
            }
            Ok((out, trunc))
        })
        .collect::<Result<Vec<_>>>()?;
    let truncated = per_replica.iter().map(|(_, t)| t).sum();
    let pooled: Vec<Vec<f64>> = (0..radii.len())
        .map(|k| per_replica.iter().flat_map(|(v, _)| v[k].iter().copied()).collect())
        .collect();
    let model = TailModel::Stretched { root: dim.get() as u32 };
    let rows: Vec<GrowthTailRow> = k_grid
        .iter()
        .map(|&k| {
            let probabilities: Vec<(i64, f64, usize)> = radii
                .iter()
                .zip(&pooled)
                .map(|(&r, v)| {
                    let above = v.iter().filter(|&&t| t > k * r as f64).count();
                    (r, ratio(above, v.len()), v.len())
                })
                .collect();
            let pts: Vec<(f64, f64)> = probabilities.iter().map(|&(r, pr, _)| (r as f64, pr)).collect();
            let fit = tail_fit(&pts, model).ok();
            let accepted = fit.as_ref().is_some_and(|f| f.rate > 0.0 && f.r2 >= 0.9);
            GrowthTailRow {
                k,
                probabilities,
                fit,
                accepted,
            }
        })
        .collect();
    let smallest_k = rows.iter().filter(|r| r.accepted).map(|r| r.k).fold(None, |a: Option<f64>, k| {
        Some(a.map_or(k, |a| a.min(k)))
    });
    Ok(GrowthTailReport {
        radii: radii.to_vec(),
        rows,
        truncated,
        smallest_k,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct KappaTail {
    pub box_radius: i64,
    pub c_prime: i64,
    /// Largest radius `κ(o)` can certify in the box.
    pub l_max: i64,
    /// `κ(o)` per replica, `None` when no admissible radius up to `l_max` exists.
    pub values: Vec<Option<i64>>,
    /// `(n, P(κ(o) >= n))` for `n = 1..=l_max + 1`; truncated replicas count as `κ > l_max`.
    pub survival: Vec<(i64, f64)>,
    pub fit: Option<TailFit>,
}

impl KappaTail {
    pub fn truncated(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,p_hat,replicas\n");
        for &(n, p) in &self.survival {
            let _ = writeln!(s, "{n},{},{}", format_sig(p, 9), self.values.len());
        }
        s
    }
}

/// Empirical tail of `κ(o)` in `B_L`, fitted against `n^{1/d}`.
pub fn kappa_tail(cfg: &FieldConfig, box_radius: i64, c_prime: i64, replicas: u64, first_replica: u64) -> Result<KappaTail> {
    if replicas == 0 {
        return Err(Error::InvalidArgument("need at least one replica".into()));
    }
    let l_max = box_radius / c_prime.max(1);
    if l_max < 1 {
        return Err(Error::Truncated(format!("B(o, {c_prime}) does not fit in B_{box_radius}")));
    }
    let o = Site::origin(cfg.dim);
    let values = (first_replica..first_replica + replicas)
        .into_par_iter()
        .map(|i| -> Result<Option<i64>> {
            let bb = Backbone::new(&cfg.replica(i), box_radius)?;
            match bb.neighborhood(&o, c_prime) {
                Ok(nb) => Ok(Some(nb.kappa)),
                Err(Error::Truncated(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let survival: Vec<(i64, f64)> = (1..=l_max + 1)
        .map(|n| {
            let hits = values.iter().filter(|v| v.is_none_or(|k| k >= n)).count();
            (n, ratio(hits, values.len()))
        })
        .collect();
    let pts: Vec<(f64, f64)> = survival.iter().map(|&(n, p)| (n as f64, p)).collect();
    let fit = tail_fit(&pts, TailModel::Stretched { root: cfg.dim.get() as u32 }).ok();
    Ok(KappaTail {
        box_radius,
        c_prime,
        l_max,
        values,
        survival,
        fit,
    })
}
