mod common;

use std::collections::BTreeSet;

use common::field;
use epishape::cluster::{cluster, Region};
use epishape::epidemic::run_epidemic;
use epishape::lattice::{exterior_vertex_boundary, Cone, Slab};
use epishape::shape::{direction_grid, DirectionalRadius, ShapeEstimate};
use epishape::{Dim, LatticeBox, Orientation, Site};
use proptest::prelude::*;

fn site2() -> impl Strategy<Value = Site> {
    (-20i64..20, -20i64..20).prop_map(|(a, b)| Site::new(&[a, b]).unwrap())
}

fn site3() -> impl Strategy<Value = Site> {
    (-9i64..9, -9i64..9, -9i64..9).prop_map(|(a, b, c)| Site::new(&[a, b, c]).unwrap())
}

#[test]
fn neighbor_order_and_boundaries() {
    let x = Site::new(&[1, 0]).unwrap();
    let want: Vec<Site> = [[0, 0], [2, 0], [1, -1], [1, 1]].iter().map(|c| Site::new(c).unwrap()).collect();
    assert_eq!(x.neighbors(), want);
    let d3 = Dim::new(3).unwrap();
    assert_eq!(LatticeBox::centered(d3, 1).unwrap().boundary().unwrap().len(), 26);
    let d2 = Dim::new(2).unwrap();
    assert_eq!(LatticeBox::centered(d2, 2).unwrap().boundary().unwrap().len(), 16);
    let ring = LatticeBox::new(Site::new(&[5, 5]).unwrap(), 1).unwrap().boundary().unwrap();
    assert_eq!(ring.len(), 8);
    assert!(ring.iter().all(|s| s.dist_inf(&Site::new(&[5, 5]).unwrap()) == 1));
    assert!(LatticeBox::centered(d2, 0).unwrap().boundary().is_err());
}

#[test]
fn exterior_boundary_examples() {
    let d3 = Dim::new(3).unwrap();
    let o = BTreeSet::from([Site::origin(d3)]);
    assert_eq!(exterior_vertex_boundary(&o), Site::origin(d3).neighbors().into_iter().collect());
    let block: BTreeSet<Site> = LatticeBox::centered(Dim::new(2).unwrap(), 1).unwrap().sites().collect();
    let ext = exterior_vertex_boundary(&block);
    // Enumerate the ring at l1-distance one from the block by brute force.
    let brute: BTreeSet<Site> = LatticeBox::centered(Dim::new(2).unwrap(), 3)
        .unwrap()
        .sites()
        .filter(|s| !block.contains(s) && block.iter().any(|b| b.dist_l1(s) == 1))
        .collect();
    assert_eq!(ext, brute);
    assert_eq!(ext.len(), 12);
    assert!(exterior_vertex_boundary(&BTreeSet::new()).is_empty());
}

#[test]
fn cone_membership_matches_scan() {
    let dir = Site::new(&[2, 1]).unwrap();
    // δ = 1/2; z ∈ C iff some t >= 0 has ‖z - t x‖_∞ <= t/2, scanned on a fine grid.
    let cone = Cone::new(dir, 1, 2).unwrap();
    for z in LatticeBox::centered(dir.dim(), 8).unwrap().sites() {
        let scan = (0..=120_000).any(|k| {
            let t = k as f64 / 6000.0;
            z.coords().iter().zip(dir.coords()).all(|(&zc, &xc)| (zc as f64 - t * xc as f64).abs() <= t / 2.0 + 1e-9)
        });
        assert_eq!(cone.contains(&z), scan, "{z}");
    }
}

fn table(dim: Dim, f: impl Fn(&Site) -> f64) -> ShapeEstimate {
    let radii = direction_grid(dim)
        .into_iter()
        .map(|z| {
            let r = f(&z);
            DirectionalRadius {
                direction: z,
                radius: r,
                ci_lo: r,
                ci_hi: r,
            }
        })
        .collect();
    ShapeEstimate::from_radii(dim, 1.0, radii).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn neighbors_are_symmetric(x in site3()) {
        for y in x.neighbors() {
            prop_assert_eq!(x.dist_l1(&y), 1);
            prop_assert!(y.neighbors().contains(&x));
        }
    }

    #[test]
    fn clusters_grow_with_the_region(seed in 0u64..10_000, r in 1i64..5, lam in 0.3f64..1.5) {
        let f = field(2, lam, "exp:1.0", seed);
        let o = Site::origin(f.dim);
        let small = LatticeBox::centered(f.dim, r).unwrap();
        let big = LatticeBox::centered(f.dim, r + 2).unwrap();
        let slab = Region::Slab { slab: Slab::new(1, 1).unwrap(), bounds: big };
        let a = cluster(&f, &o, Orientation::Out, &Region::Box(small), None).unwrap();
        let b = cluster(&f, &o, Orientation::Out, &Region::Box(big), None).unwrap();
        let s = cluster(&f, &o, Orientation::Out, &slab, None).unwrap();
        prop_assert!(a.sites.is_subset(&b.sites));
        prop_assert!(s.sites.is_subset(&b.sites));
        for (y, h) in &a.hops {
            prop_assert!(b.hops[y] <= *h);
        }
        prop_assert_eq!(a.hops.get(&o), Some(&0));
    }

    #[test]
    fn infected_sets_are_nested(seed in 0u64..10_000, t0 in 0.1f64..3.0, dt in 0.0f64..3.0) {
        let f = field(2, 1.0, "uniform:0.5,1.5", seed);
        let tr = run_epidemic(&f, LatticeBox::centered(f.dim, 8).unwrap(), 10.0).unwrap();
        prop_assert!(tr.ever_infected_by(t0).is_subset(&tr.ever_infected_by(t0 + dt)));
        let s = tr.snapshot(t0);
        prop_assert!(s.xi.is_disjoint(&s.zeta));
    }

    #[test]
    fn phi_is_homogeneous(x in site3(), k in 0i32..6, alpha in 0.01f64..50.0) {
        let dim = Dim::new(3).unwrap();
        let shape = table(dim, |z| 1.0 + 0.1 * z.norm_l1() as f64);
        let v = x.to_f64();
        let p = shape.phi(&v);
        let scale = 2f64.powi(k);
        let scaled: Vec<f64> = v.iter().map(|c| c * scale).collect();
        prop_assert_eq!(shape.phi(&scaled), scale * p);
        let scaled: Vec<f64> = v.iter().map(|c| c * alpha).collect();
        prop_assert!((shape.phi(&scaled) - alpha * p).abs() <= 1e-12 * (1.0 + alpha * p));
        prop_assert!(p >= 0.0);
    }

    #[test]
    fn phi_is_exact_on_grid(x in site2()) {
        let dim = Dim::new(2).unwrap();
        let shape = table(dim, |z| 2.0 + z.coord(0) as f64 * 0.25);
        for r in &shape.radii {
            let u = r.direction.to_f64();
            let n = r.direction.norm_l2();
            prop_assert!((shape.phi(&u) - n / r.radius).abs() < 1e-12);
        }
        prop_assert_eq!(shape.phi(&[0.0, 0.0]), 0.0);
        prop_assert!(shape.phi(&x.to_f64()).is_finite());
    }
}
