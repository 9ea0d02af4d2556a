//! Plain structure text: three lattice rows in Å, then one `symbol fx fy fz`
//! line per site. Blank lines and `#` comments are ignored.

use std::fmt::Write as _;

use super::{CrystalError, CrystalStructure, Lattice, Result, Site};

pub fn parse_structure_text(text: &str, source_id: &str) -> Result<CrystalStructure> {
    let mut rows = Vec::with_capacity(3);
    let mut sites = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| CrystalError::Parse { line: idx + 1, msg };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let nums = |fs: &[&str]| -> Result<[f64; 3]> {
            let mut out = [0.0; 3];
            for (o, f) in out.iter_mut().zip(fs) {
                *o = f.parse().map_err(|_| err(format!("bad number {f:?}")))?;
            }
            Ok(out)
        };
        if rows.len() < 3 {
            if fields.len() != 3 {
                return Err(err(format!("lattice row needs 3 numbers, got {}", fields.len())));
            }
            rows.push(nums(&fields)?);
        } else {
            if fields.len() != 4 {
                return Err(err(format!("site line needs `symbol fx fy fz`, got {line:?}")));
            }
            sites.push(Site::from_symbol(fields[0], nums(&fields[1..])?)?);
        }
    }
    if rows.len() < 3 {
        return Err(CrystalError::Parse {
            line: 0,
            msg: "fewer than three lattice rows".into(),
        });
    }
    let lattice = Lattice::new([rows[0], rows[1], rows[2]])?;
    CrystalStructure::new(lattice, sites, source_id)
}

/// Writes a structure in the format read by [`parse_structure_text`]. Numbers
/// use the shortest round-trip representation, so re-reading is exact.
pub fn write_structure_text(structure: &CrystalStructure) -> String {
    let mut out = String::new();
    for r in structure.lattice().rows() {
        let _ = writeln!(out, "{} {} {}", r[0], r[1], r[2]);
    }
    for s in structure.sites() {
        let f = s.frac();
        let _ = writeln!(out, "{} {} {} {}", s.symbol(), f[0], f[1], f[2]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_and_writes() {
        let text = "# rock salt primitive\n0 2.82 2.82\n2.82 0 2.82\n2.82 2.82 0\nNa 0 0 0\nCl 0.5 0.5 0.5\n";
        let s = parse_structure_text(text, "nacl").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.source_id(), "nacl");
        let again = parse_structure_text(&write_structure_text(&s), "nacl").unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn malformed_inputs() {
        assert!(parse_structure_text("1 0 0\n0 1 0\n", "x").is_err());
        assert!(parse_structure_text("1 0 0\n0 1 0\n0 0 1\nNa 0 0\n", "x").is_err());
        assert!(matches!(
            parse_structure_text("5 0 0\n0 5 0\n0 0 5\nXx 0 0 0\n", "x"),
            Err(CrystalError::UnknownElementSymbol(_))
        ));
        assert!(matches!(
            parse_structure_text("5 0 0\n0 5 0\n0 0 5\n", "x"),
            Err(CrystalError::NoSites)
        ));
    }
}
