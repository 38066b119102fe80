//! Batches of labeled traces written to a directory with a manifest.

use super::{compile, generate, NoiseModel, Scenario, SynthError, Template};
use crate::ontology::Ontology;
use crate::recognizer::{write_timeline, Timeline};
use crate::trace::{write_trace, Trace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Noise settings shared by one slice of the corpus; seeds are drawn per entry.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseParams {
    #[serde(default)]
    pub centroid_jitter_px: f64,
    #[serde(default)]
    pub dropout_prob: f64,
    #[serde(default)]
    pub grip_offset_px: f64,
}

impl NoiseParams {
    fn with_seed(self, seed: u64) -> NoiseModel {
        NoiseModel {
            centroid_jitter_px: self.centroid_jitter_px,
            dropout_prob: self.dropout_prob,
            grip_offset_px: self.grip_offset_px,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    /// Scenarios per noise setting.
    pub count: usize,
    pub templates: Vec<Template>,
    pub noise_grid: Vec<NoiseParams>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub template: String,
    pub activity: String,
    pub scenario_seed: u64,
    pub noise: NoiseModel,
    pub trace: String,
    pub labels: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub seed: u64,
    pub count: usize,
    pub templates: Vec<Template>,
    pub noise_grid: Vec<NoiseParams>,
    pub entries: Vec<ManifestEntry>,
}

/// Lays out `count × |noise_grid|` entries. Scenario `k` uses template
/// `k mod |templates|` and the same scenario seed under every noise setting,
/// so slices differ only in noise.
pub fn plan_corpus(spec: &CorpusSpec) -> Result<Manifest, SynthError> {
    if spec.templates.is_empty() {
        return Err(SynthError::Manifest("no templates".into()));
    }
    if spec.noise_grid.is_empty() {
        return Err(SynthError::Manifest("empty noise grid".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scenario_seeds: Vec<u64> = (0..spec.count).map(|_| rng.random()).collect();
    let mut entries = Vec::with_capacity(spec.count * spec.noise_grid.len());
    for params in &spec.noise_grid {
        params.with_seed(0).validate()?;
        for (k, &scenario_seed) in scenario_seeds.iter().enumerate() {
            let id = format!("{:04}", entries.len());
            let t = &spec.templates[k % spec.templates.len()];
            entries.push(ManifestEntry {
                trace: format!("{id}.trace.jsonl"),
                labels: format!("{id}.labels.jsonl"),
                id,
                template: t.name.clone(),
                activity: t.activity.clone(),
                scenario_seed,
                noise: params.with_seed(rng.random()),
            });
        }
    }
    Ok(Manifest {
        seed: spec.seed,
        count: spec.count,
        templates: spec.templates.clone(),
        noise_grid: spec.noise_grid.clone(),
        entries,
    })
}

/// Compiles and renders one manifest entry.
pub fn generate_entry(
    manifest: &Manifest,
    entry: &ManifestEntry,
    ontology: &Ontology,
) -> Result<(Scenario, Trace, Timeline), SynthError> {
    let template = manifest
        .templates
        .iter()
        .find(|t| t.name == entry.template)
        .ok_or_else(|| SynthError::Manifest(format!("entry {} names unknown template '{}'", entry.id, entry.template)))?;
    let scenario = compile(template, entry.scenario_seed, ontology)?;
    let (trace, mut labels) = generate(&scenario, &entry.noise)?;
    labels.trace = entry.id.clone();
    Ok((scenario, trace, labels))
}

/// Writes every entry of `manifest` plus the manifest itself into `dir`.
pub fn write_corpus(manifest: &Manifest, ontology: &Ontology, dir: &Path) -> Result<(), SynthError> {
    std::fs::create_dir_all(dir)?;
    manifest.entries.par_iter().try_for_each(|entry| -> Result<(), SynthError> {
        let (_, trace, labels) = generate_entry(manifest, entry, ontology)?;
        write_trace(&trace, BufWriter::new(File::create(dir.join(&entry.trace))?))?;
        write_timeline(&labels, BufWriter::new(File::create(dir.join(&entry.labels))?))?;
        Ok(())
    })?;
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
    Ok(())
}

pub fn batch(spec: &CorpusSpec, ontology: &Ontology, dir: &Path) -> Result<Manifest, SynthError> {
    let manifest = plan_corpus(spec)?;
    write_corpus(&manifest, ontology, dir)?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest, SynthError> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| SynthError::Manifest(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| SynthError::Manifest(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::builtin_templates;

    fn spec(count: usize, grid: Vec<NoiseParams>) -> CorpusSpec {
        CorpusSpec { count, templates: builtin_templates(), noise_grid: grid, seed: 11 }
    }

    #[test]
    fn entry_counts() {
        let m = plan_corpus(&spec(50, vec![NoiseParams::default()])).unwrap();
        assert_eq!(m.entries.len(), 50);
        let grid = [0.0, 0.05, 0.1].map(|p| NoiseParams { dropout_prob: p, ..Default::default() }).to_vec();
        let m = plan_corpus(&spec(10, grid)).unwrap();
        assert_eq!(m.entries.len(), 30);
        assert_eq!(m.entries[3].scenario_seed, m.entries[13].scenario_seed);
        assert_eq!(m.entries[3].template, m.entries[23].template);
    }

    #[test]
    fn regenerating_from_manifest_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let o = Ontology::builtin();
        let m = batch(&spec(6, vec![NoiseParams { centroid_jitter_px: 1.0, ..Default::default() }]), &o, dir.path()).unwrap();
        let again = tempfile::tempdir().unwrap();
        let loaded = load_manifest(dir.path()).unwrap();
        assert_eq!(loaded, m);
        write_corpus(&loaded, &o, again.path()).unwrap();
        for e in &m.entries {
            for f in [&e.trace, &e.labels] {
                assert_eq!(std::fs::read(dir.path().join(f)).unwrap(), std::fs::read(again.path().join(f)).unwrap());
            }
        }
        assert_eq!(
            std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap(),
            std::fs::read(again.path().join(MANIFEST_FILE)).unwrap()
        );
    }

    #[test]
    fn bad_grid_rejected() {
        assert!(plan_corpus(&spec(2, vec![])).is_err());
        assert!(plan_corpus(&spec(2, vec![NoiseParams { dropout_prob: -0.1, ..Default::default() }])).is_err());
    }
}
