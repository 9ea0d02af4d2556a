#![allow(dead_code)]

use paraisite::crystal::{CrystalStructure, Lattice, Site};
use paraisite::data::rock_salt_primitive;
use paraisite::graph::{build_graph, GraphConfig, MaterialGraph};
use paraisite::model::ModelConfig;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn nacl_conventional() -> CrystalStructure {
    let mut sites = Vec::new();
    for f in [[0.0, 0.0, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]] {
        sites.push(Site::from_symbol("Na", f).unwrap());
        sites.push(Site::from_symbol("Cl", [(f[0] + 0.5) % 1.0, f[1], f[2]]).unwrap());
    }
    CrystalStructure::new(Lattice::cubic(5.64).unwrap(), sites, "NaCl").unwrap()
}

/// A triclinic-ish cell with `n_sites` random sites at least 1 Å apart.
pub fn random_structure(rng: &mut ChaCha8Rng, n_sites: usize, id: &str) -> CrystalStructure {
    loop {
        let len = |rng: &mut ChaCha8Rng| rng.gen_range(3.0..6.5);
        let ang = |rng: &mut ChaCha8Rng| rng.gen_range(70.0..110.0);
        let (a, b, c) = (len(rng), len(rng), len(rng));
        let (al, be, ga) = (ang(rng), ang(rng), ang(rng));
        let Ok(lattice) = Lattice::from_parameters(a, b, c, al, be, ga) else { continue };
        if lattice.volume() < 20.0 {
            continue;
        }
        let sites: Vec<Site> = (0..n_sites)
            .map(|_| {
                let z = rng.gen_range(1..=94u8);
                Site::new(z, [rng.gen(), rng.gen(), rng.gen()]).unwrap()
            })
            .collect();
        if let Ok(s) = CrystalStructure::new(lattice, sites, id) {
            let close = paraisite::crystal::neighbors_within(&s, 1.0).map_or(true, |n| !n.is_empty());
            let bonded = paraisite::crystal::neighbors_within(&s, 4.0).is_ok_and(|n| !n.is_empty());
            if !close && bonded {
                return s;
            }
        }
    }
}

/// Ten structures including conventional and primitive NaCl.
pub fn corpus(rng: &mut ChaCha8Rng) -> Vec<CrystalStructure> {
    let mut out = vec![
        nacl_conventional(),
        rock_salt_primitive([11, 17], 5.64, "NaCl-prim").unwrap(),
        rock_salt_primitive([12, 8], 4.21, "MgO-prim").unwrap(),
    ];
    for k in 0..7 {
        let n = 1 + k % 4;
        out.push(random_structure(rng, n, &format!("random{k}")));
    }
    out
}

pub fn small_model_config() -> ModelConfig {
    ModelConfig {
        embed_dim: 4,
        n_blocks: 2,
        block_hidden: vec![6],
        head_layers: vec![7, 5],
        n_centers: 12,
        state_dim: 2,
    }
}

/// Cell with `n_sites` sites at least 0.8 Å apart, lengths 2.5–7 Å and
/// angles 55–125°, so strongly skewed cells occur.
pub fn skewed_structure(rng: &mut ChaCha8Rng, n_sites: usize, id: &str) -> CrystalStructure {
    loop {
        let len = |rng: &mut ChaCha8Rng| rng.gen_range(2.5..7.0);
        let ang = |rng: &mut ChaCha8Rng| rng.gen_range(55.0..125.0);
        let (a, b, c) = (len(rng), len(rng), len(rng));
        let (al, be, ga) = (ang(rng), ang(rng), ang(rng));
        let Ok(lattice) = Lattice::from_parameters(a, b, c, al, be, ga) else { continue };
        if lattice.volume() < 4.0 * n_sites as f64 {
            continue;
        }
        let sites: Vec<Site> = (0..n_sites)
            .map(|_| Site::new(rng.gen_range(1..=94u8), [rng.gen(), rng.gen(), rng.gen()]).unwrap())
            .collect();
        if let Ok(s) = CrystalStructure::new(lattice, sites, id) {
            if paraisite::crystal::neighbors_within(&s, 0.8).is_ok_and(|n| n.is_empty()) {
                return s;
            }
        }
    }
}

/// Brute-force neighbor list: every image in a fixed `±reach` box, distance
/// computed from the lattice rows directly. Sorted by `(src, dst, image)`.
pub fn brute_force_neighbors(s: &CrystalStructure, cutoff: f64, reach: i32) -> Vec<(usize, usize, [i32; 3], f64)> {
    let rows = s.lattice().rows();
    let cart = |f: [f64; 3]| -> [f64; 3] {
        let mut x = [0.0; 3];
        for (k, r) in rows.iter().enumerate() {
            for j in 0..3 {
                x[j] += f[k] * r[j];
            }
        }
        x
    };
    let mut out = Vec::new();
    for (i, a) in s.sites().iter().enumerate() {
        let pa = cart(a.frac());
        for (j, b) in s.sites().iter().enumerate() {
            for n0 in -reach..=reach {
                for n1 in -reach..=reach {
                    for n2 in -reach..=reach {
                        if i == j && (n0, n1, n2) == (0, 0, 0) {
                            continue;
                        }
                        let f = b.frac();
                        let pb = cart([f[0] + n0 as f64, f[1] + n1 as f64, f[2] + n2 as f64]);
                        let d = ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2) + (pb[2] - pa[2]).powi(2)).sqrt();
                        if d <= cutoff {
                            out.push((i, j, [n0, n1, n2], d));
                        }
                    }
                }
            }
        }
    }
    out.sort_by_key(|x| (x.0, x.1, x.2));
    out
}

/// Box half-width that certainly contains every image within `cutoff`:
/// `cutoff / min perpendicular width + 1`, widths from `V / |a_j × a_k|`.
pub fn safe_reach(s: &CrystalStructure, cutoff: f64) -> i32 {
    let r = s.lattice().rows();
    let cross = |u: [f64; 3], v: [f64; 3]| [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    let norm = |u: [f64; 3]| (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    let c = cross(r[0], r[1]);
    let vol = (c[0] * r[2][0] + c[1] * r[2][1] + c[2] * r[2][2]).abs();
    let w = [norm(cross(r[1], r[2])), norm(cross(r[2], r[0])), norm(c)]
        .map(|a| vol / a)
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    (cutoff / w).ceil() as i32 + 1
}

/// Compares the crate's neighbor list with the brute-force oracle.
pub fn neighbors_match_oracle(s: &CrystalStructure, cutoff: f64) -> Result<(), String> {
    let fast = paraisite::crystal::neighbors_within(s, cutoff).map_err(|e| e.to_string())?;
    let slow = brute_force_neighbors(s, cutoff, safe_reach(s, cutoff));
    if fast.len() != slow.len() {
        return Err(format!("{}: {} neighbors vs {} by brute force", s.source_id(), fast.len(), slow.len()));
    }
    for (f, b) in fast.iter().zip(&slow) {
        if (f.src, f.dst, f.image) != (b.0, b.1, b.2) {
            return Err(format!("{}: pair {:?} vs {:?}", s.source_id(), (f.src, f.dst, f.image), (b.0, b.1, b.2)));
        }
        if (f.distance - b.3).abs() > 1e-9 {
            return Err(format!("{}: distance {} vs {}", s.source_id(), f.distance, b.3));
        }
    }
    Ok(())
}

/// Sorted `(src, dst, distance)` triples, for comparisons that ignore
/// which image index a pair is reached through.
pub fn pair_distances(s: &CrystalStructure, cutoff: f64) -> Vec<(usize, usize, f64)> {
    let mut v: Vec<_> = paraisite::crystal::neighbors_within(s, cutoff)
        .unwrap()
        .into_iter()
        .map(|n| (n.src, n.dst, n.distance))
        .collect();
    v.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then(a.2.total_cmp(&b.2)));
    v
}

/// The structure with site `i` moved by `shifts[i]` in fractional
/// coordinates (wrapped back into the cell).
pub fn translated(s: &CrystalStructure, shifts: &[[f64; 3]]) -> CrystalStructure {
    let sites = s
        .sites()
        .iter()
        .zip(shifts)
        .map(|(site, t)| {
            let f = site.frac();
            Site::new(site.species(), [f[0] + t[0], f[1] + t[1], f[2] + t[2]]).unwrap()
        })
        .collect();
    CrystalStructure::new(*s.lattice(), sites, s.source_id()).unwrap()
}

/// Same crystal in the basis `(a + b, b, c)`.
pub fn sheared_basis(s: &CrystalStructure) -> CrystalStructure {
    let r = s.lattice().rows();
    let rows = [[r[0][0] + r[1][0], r[0][1] + r[1][1], r[0][2] + r[1][2]], r[1], r[2]];
    let sites = s
        .sites()
        .iter()
        .map(|site| {
            let f = site.frac();
            Site::new(site.species(), [f[0], f[1] - f[0], f[2]]).unwrap()
        })
        .collect();
    CrystalStructure::new(Lattice::new(rows).unwrap(), sites, s.source_id()).unwrap()
}

/// Whether two sorted `(src, dst, distance)` lists agree to `tol`.
pub fn same_pairs(a: &[(usize, usize, f64)], b: &[(usize, usize, f64)], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.0 == y.0 && x.1 == y.1 && (x.2 - y.2).abs() <= tol)
}

pub fn graph_config(n_centers: usize) -> GraphConfig {
    GraphConfig {
        n_centers,
        ..GraphConfig::default()
    }
}

pub fn graph_of(s: &CrystalStructure, cfg: &ModelConfig) -> MaterialGraph {
    let mut g = build_graph(s, &graph_config(cfg.n_centers)).unwrap();
    // a nonzero state exercises the state path
    g.state = vec![0.3, -0.7];
    g
}

/// Graph with nodes relabelled by `perm` and edges shuffled.
pub fn permuted(g: &MaterialGraph, rng: &mut ChaCha8Rng) -> MaterialGraph {
    let n = g.n_nodes();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut species = vec![0; n];
    for (old, &new) in perm.iter().enumerate() {
        species[new] = g.node_species[old];
    }
    let mut order: Vec<usize> = (0..g.n_edges()).collect();
    order.shuffle(rng);
    MaterialGraph {
        node_species: species,
        edges: order.iter().map(|&k| (perm[g.edges[k].0], perm[g.edges[k].1])).collect(),
        distances: order.iter().map(|&k| g.distances[k]).collect(),
        edge_features: g.edge_features.select(ndarray::Axis(0), &order),
        ..g.clone()
    }
}
