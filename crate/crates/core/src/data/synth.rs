//! Two-fidelity synthetic corpus of rock-salt binaries.
//!
//! Each material is a two-site primitive rock-salt cell (FCC lattice with
//! conventional parameter `a`) with species A at the origin and B at the
//! body center. The noiseless target is
//!
//! ```text
//! ln k = 6 - 1.2 ln(mean atomic mass) - 0.8 (a / 5)
//! ```
//!
//! High fidelity adds Gaussian noise with sigma 0.05. Low fidelity adds a
//! bias of +0.5 and Gaussian noise with sigma 0.4.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DataError, DatasetManifest, Fidelity, GraphDataset, ManifestRow};
use crate::crystal::{write_structure_text, CrystalStructure, Lattice, Site};
use crate::elements;
use crate::graph::GraphConfig;

pub const HIGH_FIDELITY_NOISE: f64 = 0.05;
pub const LOW_FIDELITY_NOISE: f64 = 0.4;
pub const LOW_FIDELITY_BIAS: f64 = 0.5;

pub fn ground_truth_ln_k(mean_mass: f64, lattice_a: f64) -> f64 {
    6.0 - 1.2 * mean_mass.ln() - 0.8 * (lattice_a / 5.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub n: usize,
    pub seed: u64,
    pub fidelity: Fidelity,
    pub name: String,
    /// Atomic numbers to draw the two species from.
    pub species: Vec<u8>,
    pub a_range: (f64, f64),
    /// Multiplies the fidelity's noise; 0 gives the noiseless target.
    pub noise_scale: f64,
}

impl SynthOptions {
    pub fn new(n: usize, seed: u64, fidelity: Fidelity) -> Self {
        SynthOptions {
            n,
            seed,
            fidelity,
            name: match fidelity {
                Fidelity::High => "highfid".into(),
                Fidelity::Low => "lowfid".into(),
            },
            species: (1..=elements::MAX_Z as u8).collect(),
            a_range: (3.0, 7.0),
            noise_scale: 1.0,
        }
    }

    /// Chemically narrow high-fidelity variant: period-4 transition metals
    /// (Sc–Zn) and `a` in [5.5, 6.0] Å, so targets span well under a decade.
    pub fn narrow(n: usize, seed: u64) -> Self {
        SynthOptions {
            name: "narrow".into(),
            species: (21..=30).collect(),
            a_range: (5.5, 6.0),
            ..SynthOptions::new(n, seed, Fidelity::High)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthEntry {
    pub material_id: String,
    pub structure: CrystalStructure,
    pub species: [u8; 2],
    pub lattice_a: f64,
    pub mean_mass: f64,
    pub ln_k_clean: f64,
    /// Everything added on top of the clean target (bias plus noise).
    pub offset: f64,
    pub ltc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub name: String,
    pub fidelity: Fidelity,
    pub entries: Vec<SynthEntry>,
}

pub fn rock_salt_primitive(a: [u8; 2], lattice_a: f64, id: &str) -> Result<CrystalStructure, DataError> {
    let h = lattice_a / 2.0;
    let lattice = Lattice::new([[0.0, h, h], [h, 0.0, h], [h, h, 0.0]]).map_err(|e| DataError::Format(e.to_string()))?;
    let sites = vec![
        Site::new(a[0], [0.0; 3]).map_err(|e| DataError::Format(e.to_string()))?,
        Site::new(a[1], [0.5; 3]).map_err(|e| DataError::Format(e.to_string()))?,
    ];
    CrystalStructure::new(lattice, sites, id).map_err(|e| DataError::Format(e.to_string()))
}

pub fn synth_generate(n: usize, seed: u64, fidelity: Fidelity) -> Result<SynthDataset, DataError> {
    synth_generate_with(&SynthOptions::new(n, seed, fidelity))
}

pub fn synth_generate_with(opts: &SynthOptions) -> Result<SynthDataset, DataError> {
    if opts.n < 10 {
        return Err(DataError::DatasetTooSmall(opts.n));
    }
    if opts.species.len() < 2 || opts.species.iter().any(|&z| elements::atomic_mass(z).is_none()) {
        return Err(DataError::Format("species pool needs at least two valid elements".into()));
    }
    let (lo, hi) = opts.a_range;
    if !(lo > 0.0 && hi >= lo) {
        return Err(DataError::Format(format!("bad lattice range {lo}..{hi}")));
    }
    let (bias, sigma) = match opts.fidelity {
        Fidelity::High => (0.0, HIGH_FIDELITY_NOISE),
        Fidelity::Low => (LOW_FIDELITY_BIAS, LOW_FIDELITY_NOISE),
    };
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut entries = Vec::with_capacity(opts.n);
    for i in 0..opts.n {
        let first = rng.gen_range(0..opts.species.len());
        let mut second = rng.gen_range(0..opts.species.len() - 1);
        if second >= first {
            second += 1;
        }
        let species = [opts.species[first], opts.species[second]];
        let lattice_a = if hi > lo { rng.gen_range(lo..hi) } else { lo };
        let eta: f64 = normal.sample(&mut rng);
        let mean_mass = species.iter().map(|&z| elements::atomic_mass(z).expect("checked")).sum::<f64>() / 2.0;
        let ln_k_clean = ground_truth_ln_k(mean_mass, lattice_a);
        let offset = bias + opts.noise_scale * sigma * eta;
        let material_id = format!("{}-{:05}", opts.name, i);
        entries.push(SynthEntry {
            structure: rock_salt_primitive(species, lattice_a, &material_id)?,
            material_id,
            species,
            lattice_a,
            mean_mass,
            ln_k_clean,
            offset,
            ltc: (ln_k_clean + offset).exp(),
        });
    }
    Ok(SynthDataset {
        name: opts.name.clone(),
        fidelity: opts.fidelity,
        entries,
    })
}

impl SynthDataset {
    pub fn graphs(&self, config: &GraphConfig) -> Result<GraphDataset, DataError> {
        let items: Vec<_> = self
            .entries
            .iter()
            .map(|e| (e.material_id.clone(), e.structure.clone(), e.ltc))
            .collect();
        GraphDataset::from_structures(&self.name, &items, config)
    }

    /// Writes `structures/<id>.txt`, the manifest `<name>.csv`, per-row
    /// ground truth `<name>_truth.csv` and a description of the generating
    /// function `<name>_ground_truth.txt`, all under `dir`.
    pub fn write(&self, dir: &Path) -> Result<DatasetManifest, DataError> {
        let sdir = dir.join("structures");
        std::fs::create_dir_all(&sdir).map_err(|e| DataError::io(&sdir, e))?;
        let mut rows = Vec::with_capacity(self.entries.len());
        let mut truth = String::from("material_id,species_a,species_b,lattice_a,mean_mass,ln_k_clean,offset,ltc_w_per_mk\n");
        for e in &self.entries {
            let path = sdir.join(format!("{}.txt", e.material_id));
            crate::io::write_atomic(&path, write_structure_text(&e.structure).as_bytes())
                .map_err(|err| DataError::io(&path, err))?;
            rows.push(ManifestRow {
                material_id: e.material_id.clone(),
                structure_path: path,
                ltc: e.ltc,
            });
            let _ = writeln!(
                truth,
                "{},{},{},{:?},{:?},{:?},{:?},{:?}",
                e.material_id,
                elements::symbol(e.species[0]).unwrap_or("?"),
                elements::symbol(e.species[1]).unwrap_or("?"),
                e.lattice_a,
                e.mean_mass,
                e.ln_k_clean,
                e.offset,
                e.ltc
            );
        }
        let manifest = DatasetManifest::new(self.name.clone(), self.fidelity, rows)?;
        manifest.write(&dir.join(format!("{}.csv", self.name)))?;
        let tpath = dir.join(format!("{}_truth.csv", self.name));
        crate::io::write_atomic(&tpath, truth.as_bytes()).map_err(|e| DataError::io(&tpath, e))?;
        let (bias, sigma) = match self.fidelity {
            Fidelity::High => (0.0, HIGH_FIDELITY_NOISE),
            Fidelity::Low => (LOW_FIDELITY_BIAS, LOW_FIDELITY_NOISE),
        };
        let desc = format!(
            "structure: rock-salt primitive cell, species A at (0,0,0), B at (1/2,1/2,1/2)\n\
             lattice rows: (0,a/2,a/2) (a/2,0,a/2) (a/2,a/2,0)\n\
             ln_k_clean = 6 - 1.2*ln(mean_mass) - 0.8*(a/5)\n\
             ln_k = ln_k_clean + {bias} + N(0, {sigma}^2)\n"
        );
        let gpath = dir.join(format!("{}_ground_truth.txt", self.name));
        crate::io::write_atomic(&gpath, desc.as_bytes()).map_err(|e| DataError::io(&gpath, e))?;
        Ok(manifest)
    }
}
