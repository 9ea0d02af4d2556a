//! A small CIF reader covering the subset used by structure databases:
//! cell parameters, one `_atom_site_*` loop with fractional coordinates, and
//! either P1 or an explicit list of `x,y,z` symmetry operators.

use std::collections::HashMap;

use super::{closest_image_within, CrystalError, CrystalStructure, Lattice, Result, Site, MERGE_TOLERANCE};
use crate::elements;

#[derive(Debug, Clone)]
struct Token {
    text: String,
    quoted: bool,
    line: usize,
}

fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut in_text_field = false;
    let mut field = String::new();
    let mut field_line = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.starts_with(';') {
            if in_text_field {
                tokens.push(Token {
                    text: std::mem::take(&mut field),
                    quoted: true,
                    line: field_line,
                });
                in_text_field = false;
            } else {
                in_text_field = true;
                field_line = line;
                field.push_str(&raw[1..]);
            }
            continue;
        }
        if in_text_field {
            field.push('\n');
            field.push_str(raw);
            continue;
        }
        let chars: Vec<char> = raw.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c.is_whitespace() {
                i += 1;
            } else if c == '#' {
                break;
            } else if c == '\'' || c == '"' {
                // a quote only closes when followed by whitespace or end of line
                let mut j = i + 1;
                while j < chars.len() && !(chars[j] == c && (j + 1 == chars.len() || chars[j + 1].is_whitespace())) {
                    j += 1;
                }
                tokens.push(Token {
                    text: chars[i + 1..j.min(chars.len())].iter().collect(),
                    quoted: true,
                    line,
                });
                i = j + 1;
            } else {
                let mut j = i;
                while j < chars.len() && !chars[j].is_whitespace() {
                    j += 1;
                }
                tokens.push(Token {
                    text: chars[i..j].iter().collect(),
                    quoted: false,
                    line,
                });
                i = j;
            }
        }
    }
    tokens
}

#[derive(Debug, Default)]
struct Block {
    name: String,
    items: HashMap<String, String>,
    loops: Vec<Loop>,
}

#[derive(Debug)]
struct Loop {
    tags: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Loop {
    fn column(&self, tag: &str) -> Option<usize> {
        self.tags.iter().position(|t| t == tag)
    }
}

fn is_keyword(t: &Token) -> bool {
    if t.quoted {
        return false;
    }
    let lower = t.text.to_ascii_lowercase();
    t.text.starts_with('_') || lower == "loop_" || lower.starts_with("data_")
}

fn read_block(tokens: &[Token]) -> Result<Block> {
    let mut block = Block::default();
    let mut i = 0;
    let mut seen_data = false;
    while i < tokens.len() {
        let tok = &tokens[i];
        let lower = tok.text.to_ascii_lowercase();
        if !tok.quoted && lower.starts_with("data_") {
            if seen_data {
                // only the first data block is read
                break;
            }
            seen_data = true;
            block.name = tok.text[5..].to_string();
            i += 1;
        } else if !tok.quoted && lower == "loop_" {
            i += 1;
            let mut tags = Vec::new();
            while i < tokens.len() && !tokens[i].quoted && tokens[i].text.starts_with('_') {
                tags.push(tokens[i].text.to_ascii_lowercase());
                i += 1;
            }
            if tags.is_empty() {
                return Err(CrystalError::Parse {
                    line: tok.line,
                    msg: "loop_ without tags".into(),
                });
            }
            let mut values = Vec::new();
            while i < tokens.len() && !is_keyword(&tokens[i]) {
                values.push(tokens[i].text.clone());
                i += 1;
            }
            if values.len() % tags.len() != 0 {
                return Err(CrystalError::Parse {
                    line: tok.line,
                    msg: format!("{} values do not fill {} loop columns", values.len(), tags.len()),
                });
            }
            let rows = values.chunks(tags.len()).map(|c| c.to_vec()).collect();
            block.loops.push(Loop { tags, rows });
        } else if !tok.quoted && tok.text.starts_with('_') {
            let value = tokens.get(i + 1).filter(|t| !is_keyword(t)).ok_or_else(|| CrystalError::Parse {
                line: tok.line,
                msg: format!("tag {} has no value", tok.text),
            })?;
            block.items.insert(lower, value.text.clone());
            i += 2;
        } else {
            return Err(CrystalError::Parse {
                line: tok.line,
                msg: format!("unexpected value {:?}", tok.text),
            });
        }
    }
    Ok(block)
}

/// Parses a CIF number, dropping a trailing standard uncertainty `(n)`.
fn cif_number(s: &str) -> Option<f64> {
    let core = match s.find('(') {
        Some(p) => &s[..p],
        None => s,
    };
    core.trim().parse().ok()
}

fn is_missing(s: &str) -> bool {
    s == "?" || s == "."
}

/// Element symbol from a type symbol or label such as `Na1`, `O2-`, `Fe3+`.
fn element_from_label(label: &str) -> Result<u8> {
    let mut chars = label.chars();
    let mut symbol = String::new();
    if let Some(c) = chars.next().filter(|c| c.is_ascii_alphabetic()) {
        symbol.push(c.to_ascii_uppercase());
        if let Some(d) = chars.next().filter(|d| d.is_ascii_lowercase()) {
            symbol.push(d);
        }
    }
    elements::atomic_number(&symbol).ok_or_else(|| CrystalError::UnknownElementSymbol(label.to_string()))
}

/// Affine operator on fractional coordinates: `f' = R f + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SymOp {
    rot: [[f64; 3]; 3],
    trans: [f64; 3],
}

impl SymOp {
    fn identity() -> Self {
        SymOp {
            rot: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            trans: [0.0; 3],
        }
    }

    pub(crate) fn parse(s: &str) -> Result<Self> {
        let bad = || CrystalError::UnsupportedSymmetryFormat(format!("cannot read operator {s:?}"));
        let parts: Vec<&str> = s.split(',').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let mut op = SymOp {
            rot: [[0.0; 3]; 3],
            trans: [0.0; 3],
        };
        for (row, part) in parts.iter().enumerate() {
            let expr: Vec<char> = part.chars().filter(|c| !c.is_whitespace()).map(|c| c.to_ascii_lowercase()).collect();
            if expr.is_empty() {
                return Err(bad());
            }
            let mut i = 0;
            while i < expr.len() {
                let mut sign = 1.0;
                if expr[i] == '+' || expr[i] == '-' {
                    if expr[i] == '-' {
                        sign = -1.0;
                    }
                    i += 1;
                }
                let start = i;
                while i < expr.len() && (expr[i].is_ascii_digit() || expr[i] == '.') {
                    i += 1;
                }
                let mut value: Option<f64> = None;
                if i > start {
                    let num: String = expr[start..i].iter().collect();
                    let mut v: f64 = num.parse().map_err(|_| bad())?;
                    if i < expr.len() && expr[i] == '/' {
                        i += 1;
                        let ds = i;
                        while i < expr.len() && expr[i].is_ascii_digit() {
                            i += 1;
                        }
                        let den: String = expr[ds..i].iter().collect();
                        let den: f64 = den.parse().map_err(|_| bad())?;
                        if den == 0.0 {
                            return Err(bad());
                        }
                        v /= den;
                    }
                    value = Some(v);
                    if i < expr.len() && expr[i] == '*' {
                        i += 1;
                    }
                }
                let axis = match expr.get(i) {
                    Some('x') => Some(0),
                    Some('y') => Some(1),
                    Some('z') => Some(2),
                    _ => None,
                };
                match (axis, value) {
                    (Some(k), v) => {
                        op.rot[row][k] += sign * v.unwrap_or(1.0);
                        i += 1;
                    }
                    (None, Some(v)) => op.trans[row] += sign * v,
                    (None, None) => return Err(bad()),
                }
            }
        }
        Ok(op)
    }

    pub(crate) fn apply(&self, f: [f64; 3]) -> [f64; 3] {
        let mut out = self.trans;
        for (row, o) in out.iter_mut().enumerate() {
            *o += self.rot[row][0] * f[0] + self.rot[row][1] * f[1] + self.rot[row][2] * f[2];
        }
        out
    }
}

fn symmetry_ops(block: &Block) -> Result<Vec<SymOp>> {
    const OP_TAGS: [&str; 2] = ["_symmetry_equiv_pos_as_xyz", "_space_group_symop_operation_xyz"];
    for lp in &block.loops {
        if let Some(col) = OP_TAGS.iter().find_map(|t| lp.column(t)) {
            return lp.rows.iter().map(|r| SymOp::parse(&r[col])).collect();
        }
    }
    if let Some(op) = OP_TAGS.iter().find_map(|t| block.items.get(*t)) {
        return Ok(vec![SymOp::parse(op)?]);
    }
    for tag in ["_symmetry_space_group_name_h-m", "_space_group_name_h-m_alt"] {
        if let Some(name) = block.items.get(tag) {
            let compact: String = name.chars().filter(|c| !c.is_whitespace()).collect();
            if !is_missing(&compact) && !compact.eq_ignore_ascii_case("p1") {
                return Err(CrystalError::UnsupportedSymmetryFormat(format!(
                    "space group {name:?} without explicit operators"
                )));
            }
        }
    }
    for tag in ["_symmetry_int_tables_number", "_space_group_it_number"] {
        if let Some(num) = block.items.get(tag) {
            if !is_missing(num) && num.trim() != "1" {
                return Err(CrystalError::UnsupportedSymmetryFormat(format!(
                    "space group number {num} without explicit operators"
                )));
            }
        }
    }
    Ok(vec![SymOp::identity()])
}

/// Parses one CIF data block into a structure. Symmetry operators are
/// applied to every listed site and generated copies within 0.01 Å of an
/// existing site of the same species are merged.
pub fn parse_cif(text: &str) -> Result<CrystalStructure> {
    let block = read_block(&tokenize(text))?;

    let cell = |tag: &str| -> Result<f64> {
        block
            .items
            .get(tag)
            .and_then(|v| cif_number(v))
            .ok_or_else(|| CrystalError::MissingCellParameters(tag.to_string()))
    };
    let lattice = Lattice::from_parameters(
        cell("_cell_length_a")?,
        cell("_cell_length_b")?,
        cell("_cell_length_c")?,
        cell("_cell_angle_alpha")?,
        cell("_cell_angle_beta")?,
        cell("_cell_angle_gamma")?,
    )?;

    let atoms = block
        .loops
        .iter()
        .find(|l| l.column("_atom_site_fract_x").is_some())
        .ok_or(CrystalError::EmptyAtomLoop)?;
    if atoms.rows.is_empty() {
        return Err(CrystalError::EmptyAtomLoop);
    }
    let col = |tag: &str| {
        atoms.column(tag).ok_or_else(|| CrystalError::Parse {
            line: 0,
            msg: format!("atom-site loop lacks {tag}"),
        })
    };
    let (cx, cy, cz) = (col("_atom_site_fract_x")?, col("_atom_site_fract_y")?, col("_atom_site_fract_z")?);
    let type_col = atoms.column("_atom_site_type_symbol");
    let label_col = atoms.column("_atom_site_label");
    let occ_col = atoms.column("_atom_site_occupancy");
    if type_col.is_none() && label_col.is_none() {
        return Err(CrystalError::Parse {
            line: 0,
            msg: "atom-site loop has neither type symbol nor label".into(),
        });
    }

    let ops = symmetry_ops(&block)?;
    let mut sites: Vec<Site> = Vec::new();
    for row in &atoms.rows {
        let label = label_col.or(type_col).map(|c| row[c].as_str()).unwrap_or_default();
        let species = element_from_label(&row[type_col.or(label_col).expect("checked above")])?;
        if let Some(c) = occ_col {
            if !is_missing(&row[c]) {
                let occupancy = cif_number(&row[c]).ok_or_else(|| CrystalError::Parse {
                    line: 0,
                    msg: format!("bad occupancy {:?}", row[c]),
                })?;
                if (occupancy - 1.0).abs() > 1e-6 {
                    return Err(CrystalError::PartialOccupancy {
                        label: label.to_string(),
                        occupancy,
                    });
                }
            }
        }
        let coord = |c: usize| {
            cif_number(&row[c]).ok_or_else(|| CrystalError::Parse {
                line: 0,
                msg: format!("bad fractional coordinate {:?} on {label}", row[c]),
            })
        };
        let frac = [coord(cx)?, coord(cy)?, coord(cz)?];
        for op in &ops {
            let candidate = Site::new(species, op.apply(frac))?;
            let duplicate = sites.iter().position(|s| {
                closest_image_within(&lattice, s.frac(), candidate.frac(), MERGE_TOLERANCE).is_some()
            });
            match duplicate {
                Some(k) if sites[k].species() == species => {}
                Some(k) => return Err(CrystalError::SitesTooClose(k, sites.len(), 0.0)),
                None => sites.push(candidate),
            }
        }
    }
    CrystalStructure::new(lattice, sites, block.name)
}
