//! Crystal structures and periodic geometry.
//!
//! Lattices use the row-vector convention throughout: each row of the 3×3
//! matrix is one lattice vector in Å, and a fractional coordinate `f` maps to
//! Cartesian `f · L`.

mod cif;
mod text;

pub use cif::parse_cif;
pub use text::{parse_structure_text, write_structure_text};

use std::path::Path;

use thiserror::Error;

use crate::elements;

/// Sites closer than this under the minimum image are rejected.
pub const MIN_SITE_SEPARATION: f64 = 0.1;
/// Symmetry-generated sites closer than this are merged.
pub const MERGE_TOLERANCE: f64 = 0.01;
/// Largest cutoff accepted by [`neighbors_within`].
pub const MAX_CUTOFF: f64 = 20.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrystalError {
    #[error("missing cell parameter {0}")]
    MissingCellParameters(String),
    #[error("unknown element symbol {0:?}")]
    UnknownElementSymbol(String),
    #[error("unsupported symmetry description: {0}")]
    UnsupportedSymmetryFormat(String),
    #[error("atom-site loop is missing or empty")]
    EmptyAtomLoop,
    #[error("partial occupancy {occupancy} on site {label}")]
    PartialOccupancy { label: String, occupancy: f64 },
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("sites {0} and {1} are only {2:.4} Å apart")]
    SitesTooClose(usize, usize, f64),
    #[error("structure has no sites")]
    NoSites,
    #[error("site index {index} out of range for {len} sites")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("cutoff {0} Å outside (0, 20]")]
    CutoffOutOfRange(f64),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("reading {path}: {msg}")]
    Io { path: String, msg: String },
}

pub type Result<T> = std::result::Result<T, CrystalError>;

fn cos_deg(deg: f64) -> f64 {
    // keep right angles exact so orthogonal cells come out diagonal
    if deg == 90.0 {
        0.0
    } else {
        deg.to_radians().cos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    rows: [[f64; 3]; 3],
}

impl Lattice {
    pub fn new(rows: [[f64; 3]; 3]) -> Result<Self> {
        if rows.iter().flatten().any(|x| !x.is_finite()) {
            return Err(CrystalError::InvalidLattice("non-finite entry".into()));
        }
        let lattice = Lattice { rows };
        let det = lattice.determinant();
        if !(det > 1e-8) {
            return Err(CrystalError::InvalidLattice(format!(
                "determinant {det} must be positive"
            )));
        }
        Ok(lattice)
    }

    /// Builds a cell from lengths (Å) and angles (degrees): `a` along x and
    /// `b` in the xy-plane.
    pub fn from_parameters(a: f64, b: f64, c: f64, alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && c > 0.0) {
            return Err(CrystalError::InvalidLattice("cell lengths must be positive".into()));
        }
        let (ca, cb, cg) = (cos_deg(alpha), cos_deg(beta), cos_deg(gamma));
        let sg = if gamma == 90.0 { 1.0 } else { gamma.to_radians().sin() };
        let cy = (ca - cb * cg) / sg;
        let cz2 = 1.0 - cb * cb - cy * cy;
        if !(cz2 > 0.0) || !(sg > 0.0) {
            return Err(CrystalError::InvalidLattice(format!(
                "angles ({alpha}, {beta}, {gamma}) do not form a cell"
            )));
        }
        Lattice::new([
            [a, 0.0, 0.0],
            [b * cg, b * sg, 0.0],
            [c * cb, c * cy, c * cz2.sqrt()],
        ])
    }

    pub fn cubic(a: f64) -> Result<Self> {
        Lattice::new([[a, 0.0, 0.0], [0.0, a, 0.0], [0.0, 0.0, a]])
    }

    pub fn rows(&self) -> &[[f64; 3]; 3] {
        &self.rows
    }

    pub fn determinant(&self) -> f64 {
        let r = &self.rows;
        dot(r[0], cross(r[1], r[2]))
    }

    pub fn volume(&self) -> f64 {
        self.determinant().abs()
    }

    pub fn to_cartesian(&self, frac: [f64; 3]) -> [f64; 3] {
        let r = &self.rows;
        let mut out = [0.0; 3];
        for (k, o) in out.iter_mut().enumerate() {
            *o = frac[0] * r[0][k] + frac[1] * r[1][k] + frac[2] * r[2][k];
        }
        out
    }

    /// Distance between lattice planes spanned by the other two vectors,
    /// one entry per lattice vector.
    pub fn perpendicular_widths(&self) -> [f64; 3] {
        let r = &self.rows;
        let v = self.volume();
        [
            v / norm(cross(r[1], r[2])),
            v / norm(cross(r[2], r[0])),
            v / norm(cross(r[0], r[1])),
        ]
    }
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// Wraps a fractional coordinate into `[0, 1)`.
pub fn wrap_frac(x: f64) -> f64 {
    let w = x - x.floor();
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Site {
    species: u8,
    frac: [f64; 3],
}

impl Site {
    pub fn new(species: u8, frac: [f64; 3]) -> Result<Self> {
        if elements::symbol(species).is_none() {
            return Err(CrystalError::UnknownElementSymbol(format!("Z={species}")));
        }
        if frac.iter().any(|x| !x.is_finite()) {
            return Err(CrystalError::InvalidLattice("non-finite fractional coordinate".into()));
        }
        Ok(Site {
            species,
            frac: frac.map(wrap_frac),
        })
    }

    pub fn from_symbol(symbol: &str, frac: [f64; 3]) -> Result<Self> {
        let z = elements::atomic_number(symbol)
            .ok_or_else(|| CrystalError::UnknownElementSymbol(symbol.to_string()))?;
        Site::new(z, frac)
    }

    /// Atomic number.
    pub fn species(&self) -> u8 {
        self.species
    }

    pub fn symbol(&self) -> &'static str {
        elements::symbol(self.species).expect("validated at construction")
    }

    pub fn frac(&self) -> [f64; 3] {
        self.frac
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrystalStructure {
    lattice: Lattice,
    sites: Vec<Site>,
    source_id: String,
}

impl CrystalStructure {
    pub fn new(lattice: Lattice, sites: Vec<Site>, source_id: impl Into<String>) -> Result<Self> {
        if sites.is_empty() {
            return Err(CrystalError::NoSites);
        }
        for i in 0..sites.len() {
            for j in i..sites.len() {
                let mut closest = f64::INFINITY;
                for_each_image(&lattice, sites[i].frac, sites[j].frac, MIN_SITE_SEPARATION, |img, d| {
                    if !(i == j && img == [0, 0, 0]) {
                        closest = closest.min(d);
                    }
                });
                if closest < MIN_SITE_SEPARATION {
                    return Err(CrystalError::SitesTooClose(i, j, closest));
                }
            }
        }
        Ok(CrystalStructure {
            lattice,
            sites,
            source_id: source_id.into(),
        })
    }

    /// Reads a `.cif` file, or the plain lattice-plus-sites text format for
    /// any other extension. The file stem becomes the source id.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CrystalError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let is_cif = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("cif"));
        if is_cif {
            let mut s = parse_cif(&text)?;
            if s.source_id.is_empty() {
                s.source_id = stem;
            }
            Ok(s)
        } else {
            parse_structure_text(&text, &stem)
        }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn frac_to_cart(&self, site_index: usize) -> Result<[f64; 3]> {
        let site = self.sites.get(site_index).ok_or(CrystalError::IndexOutOfRange {
            index: site_index,
            len: self.sites.len(),
        })?;
        Ok(self.lattice.to_cartesian(site.frac))
    }

    /// Replicates the cell `n[k]` times along lattice vector `k`.
    pub fn supercell(&self, n: [usize; 3]) -> Result<Self> {
        if n.contains(&0) {
            return Err(CrystalError::InvalidLattice("zero replication".into()));
        }
        let r = self.lattice.rows;
        let mut rows = r;
        for k in 0..3 {
            rows[k] = r[k].map(|x| x * n[k] as f64);
        }
        let lattice = Lattice::new(rows)?;
        let mut sites = Vec::with_capacity(self.sites.len() * n.iter().product::<usize>());
        for i in 0..n[0] {
            for j in 0..n[1] {
                for k in 0..n[2] {
                    for s in &self.sites {
                        let f = s.frac;
                        sites.push(Site::new(
                            s.species,
                            [
                                (f[0] + i as f64) / n[0] as f64,
                                (f[1] + j as f64) / n[1] as f64,
                                (f[2] + k as f64) / n[2] as f64,
                            ],
                        )?);
                    }
                }
            }
        }
        CrystalStructure::new(lattice, sites, self.source_id.clone())
    }
}

/// One directed periodic neighbor pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub src: usize,
    pub dst: usize,
    /// Lattice translation applied to `dst`.
    pub image: [i32; 3],
    pub distance: f64,
}

/// Calls `f(image, distance)` for every image of `to` within `cutoff` of
/// `from`. Image ranges are bounded per axis from the perpendicular widths,
/// so arbitrarily skewed cells are handled.
fn for_each_image(lattice: &Lattice, from: [f64; 3], to: [f64; 3], cutoff: f64, mut f: impl FnMut([i32; 3], f64)) {
    let widths = lattice.perpendicular_widths();
    let delta = [to[0] - from[0], to[1] - from[1], to[2] - from[2]];
    let mut lo = [0i32; 3];
    let mut hi = [0i32; 3];
    for k in 0..3 {
        let reach = cutoff / widths[k] + 1e-9;
        lo[k] = (-reach - delta[k]).ceil() as i32;
        hi[k] = (reach - delta[k]).floor() as i32;
    }
    for a in lo[0]..=hi[0] {
        for b in lo[1]..=hi[1] {
            for c in lo[2]..=hi[2] {
                let shifted = [delta[0] + a as f64, delta[1] + b as f64, delta[2] + c as f64];
                let d = norm(lattice.to_cartesian(shifted));
                if d <= cutoff {
                    f([a, b, c], d);
                }
            }
        }
    }
}

/// All directed pairs `(src, dst, image)` with `0 < distance <= cutoff`,
/// sorted by `(src, dst, image)`.
pub fn neighbors_within(structure: &CrystalStructure, cutoff: f64) -> Result<Vec<Neighbor>> {
    if !(cutoff > 0.0 && cutoff <= MAX_CUTOFF) {
        return Err(CrystalError::CutoffOutOfRange(cutoff));
    }
    let sites = &structure.sites;
    let mut out = Vec::new();
    for (src, s) in sites.iter().enumerate() {
        for (dst, t) in sites.iter().enumerate() {
            let start = out.len();
            for_each_image(&structure.lattice, s.frac, t.frac, cutoff, |image, distance| {
                if src == dst && image == [0, 0, 0] {
                    return;
                }
                if distance > 0.0 {
                    out.push(Neighbor { src, dst, image, distance });
                }
            });
            out[start..].sort_by_key(|x| x.image);
        }
    }
    Ok(out)
}

/// Shortest image distance between two fractional positions, if any image
/// lies within `cutoff`.
pub(crate) fn closest_image_within(lattice: &Lattice, a: [f64; 3], b: [f64; 3], cutoff: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    for_each_image(lattice, a, b, cutoff, |_, d| {
        best = Some(best.map_or(d, |x| x.min(d)));
    });
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nacl() -> CrystalStructure {
        let a = 5.64;
        let mut sites = Vec::new();
        for f in [[0.0, 0.0, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]] {
            sites.push(Site::from_symbol("Na", f).unwrap());
            sites.push(Site::from_symbol("Cl", [f[0] + 0.5, f[1], f[2]]).unwrap());
        }
        CrystalStructure::new(Lattice::cubic(a).unwrap(), sites, "NaCl").unwrap()
    }

    #[test]
    fn frac_to_cart_cases() {
        let l = Lattice::cubic(5.0).unwrap();
        let s = CrystalStructure::new(
            l,
            vec![
                Site::from_symbol("Na", [0.0, 0.0, 0.0]).unwrap(),
                Site::from_symbol("Cl", [0.5, 0.5, 0.5]).unwrap(),
            ],
            "x",
        )
        .unwrap();
        assert_eq!(s.frac_to_cart(0).unwrap(), [0.0, 0.0, 0.0]);
        assert_eq!(s.frac_to_cart(1).unwrap(), [2.5, 2.5, 2.5]);
        assert!(matches!(
            s.frac_to_cart(2),
            Err(CrystalError::IndexOutOfRange { index: 2, len: 2 })
        ));
        let wrapped = Site::from_symbol("Na", [1.0, 0.0, 0.0]).unwrap();
        assert_eq!(wrapped.frac(), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn wrap_handles_edges() {
        assert_eq!(wrap_frac(1.0), 0.0);
        assert_eq!(wrap_frac(-0.25), 0.75);
        assert_eq!(wrap_frac(2.5), 0.5);
        assert!(wrap_frac(-1e-18) < 1.0);
    }

    #[test]
    fn single_atom_neighbor_shells() {
        let s = CrystalStructure::new(
            Lattice::cubic(5.0).unwrap(),
            vec![Site::from_symbol("Na", [0.0; 3]).unwrap()],
            "na",
        )
        .unwrap();
        assert!(neighbors_within(&s, 4.0).unwrap().is_empty());
        let six = neighbors_within(&s, 6.0).unwrap();
        assert_eq!(six.len(), 6);
        assert!(six.iter().all(|n| (n.distance - 5.0).abs() < 1e-12));
    }

    #[test]
    fn nacl_neighbor_counts() {
        let s = nacl();
        let n = neighbors_within(&s, 4.0).unwrap();
        assert_eq!(n.len(), 144);
        for site in 0..8 {
            let mine: Vec<_> = n.iter().filter(|p| p.src == site).collect();
            let near = mine.iter().filter(|p| (p.distance - 2.82).abs() < 1e-9).count();
            let next = mine
                .iter()
                .filter(|p| (p.distance - 2.82 * 2f64.sqrt()).abs() < 1e-9)
                .count();
            assert_eq!((near, next), (6, 12));
            for p in &mine {
                let unlike = s.sites()[p.src].species() != s.sites()[p.dst].species();
                assert_eq!(unlike, p.distance < 3.0);
            }
        }
    }

    #[test]
    fn cutoff_range_is_enforced() {
        let s = nacl();
        assert!(matches!(neighbors_within(&s, 0.0), Err(CrystalError::CutoffOutOfRange(_))));
        assert!(matches!(neighbors_within(&s, 20.5), Err(CrystalError::CutoffOutOfRange(_))));
        assert!(neighbors_within(&s, 20.0).is_ok());
    }

    #[test]
    fn rejects_overlapping_sites() {
        let err = CrystalStructure::new(
            Lattice::cubic(5.0).unwrap(),
            vec![
                Site::from_symbol("Na", [0.0; 3]).unwrap(),
                Site::from_symbol("Cl", [0.999, 0.0, 0.0]).unwrap(),
            ],
            "bad",
        )
        .unwrap_err();
        assert!(matches!(err, CrystalError::SitesTooClose(0, 1, _)));
        assert!(matches!(
            CrystalStructure::new(Lattice::cubic(5.0).unwrap(), vec![], "e"),
            Err(CrystalError::NoSites)
        ));
    }

    #[test]
    fn lattice_validation() {
        assert!(Lattice::new([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]]).is_err());
        assert!(Lattice::new([[f64::NAN, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).is_err());
        let hex = Lattice::from_parameters(3.0, 3.0, 5.0, 90.0, 90.0, 120.0).unwrap();
        let r = hex.rows();
        assert!((r[1][0] + 1.5).abs() < 1e-12);
        assert!((hex.volume() - 3.0 * 3.0 * 5.0 * (120f64.to_radians()).sin()).abs() < 1e-9);
        let w = Lattice::cubic(4.0).unwrap().perpendicular_widths();
        assert_eq!(w, [4.0, 4.0, 4.0]);
    }

    #[test]
    fn supercell_doubles_sites() {
        let s = nacl().supercell([2, 1, 1]).unwrap();
        assert_eq!(s.len(), 16);
        assert!((s.lattice().volume() - 2.0 * 5.64f64.powi(3)).abs() < 1e-9);
        assert_eq!(neighbors_within(&s, 4.0).unwrap().len(), 288);
    }
}
