//! Datasets: a CSV manifest of PNG files, prompt lists, and generated
//! synthetic sets.

use std::fs;
use std::path::{Path, PathBuf};

use canon_core::image::{load_png, save_png, LabeledImage, ManifestEntry};
use canon_core::synthetic::{banded_scene, upright_scene};
use serde::Serialize;

use crate::config::{DatasetSection, DEFAULT_TEMPLATE};
use crate::error::{BenchError, Result};

/// Images that loaded, plus the entries that did not.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub items: Vec<LabeledImage>,
    pub skipped: Vec<Skipped>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Skipped {
    pub id: String,
    pub reason: String,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| BenchError::Config(format!("cannot open manifest {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| BenchError::Dataset(format!("{}: {e}", path.display())))?
        .clone();
    for column in ["id", "path", "label"] {
        if !headers.iter().any(|h| h == column) {
            return Err(BenchError::Dataset(format!(
                "{}: header must contain id,path,label (missing {column})",
                path.display()
            )));
        }
    }
    let mut entries = Vec::new();
    for (line, row) in reader.deserialize::<ManifestEntry>().enumerate() {
        let entry = row.map_err(|e| BenchError::Dataset(format!("{} row {}: {e}", path.display(), line + 2)))?;
        entries.push(entry);
    }
    let mut ids: Vec<&str> = entries.iter().map(|e| e.id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(BenchError::Dataset(format!("{}: duplicate id {:?}", path.display(), w[0])));
    }
    Ok(entries)
}

/// Load every manifest entry; unreadable images are recorded, not fatal.
pub fn load_dataset(manifest: &Path, limit: Option<usize>) -> Result<Dataset> {
    let entries = read_manifest(manifest)?;
    let root = manifest.parent().unwrap_or(Path::new("."));
    let mut out = Dataset::default();
    for entry in entries.into_iter().take(limit.unwrap_or(usize::MAX)) {
        let path = root.join(&entry.path);
        match load_png(&path) {
            Ok(image) => out.items.push(LabeledImage {
                id: entry.id,
                label: entry.label,
                image,
            }),
            Err(e) => out.skipped.push(Skipped {
                id: entry.id,
                reason: e.to_string(),
            }),
        }
    }
    Ok(out)
}

/// Dataset named by the config: the manifest, or a single unlabeled image.
pub fn load_from_config(section: &DatasetSection) -> Result<Dataset> {
    match (&section.manifest, &section.image) {
        (Some(m), _) => load_dataset(m, section.limit),
        (None, Some(p)) => {
            let image = load_png(p).map_err(|e| BenchError::Dataset(e.to_string()))?;
            let id = p.file_stem().map_or("image".into(), |s| s.to_string_lossy().into_owned());
            Ok(Dataset {
                items: vec![LabeledImage { id, label: 0, image }],
                skipped: Vec::new(),
            })
        }
        (None, None) => Err(BenchError::Config("[dataset] needs `manifest` or `image`".into())),
    }
}

pub fn read_prompts(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)
        .map_err(|e| BenchError::Config(format!("cannot read prompts {}: {e}", path.display())))?;
    let prompts: Vec<String> = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
    if prompts.is_empty() {
        return Err(BenchError::Config(format!("prompts file {} is empty", path.display())));
    }
    Ok(prompts)
}

pub fn fill_template(template: &str, label: &str) -> String {
    template.replace("{label}", label)
}

/// Class prompts, indexed by label: the prompts file, else class names in
/// the template, else label numbers in the template.
pub fn class_prompts(section: &DatasetSection, dataset: &Dataset) -> Result<Vec<String>> {
    let template = if section.prompt_template.is_empty() {
        DEFAULT_TEMPLATE
    } else {
        &section.prompt_template
    };
    let prompts = if let Some(p) = &section.prompts_file {
        read_prompts(p)?
    } else if !section.class_names.is_empty() {
        section.class_names.iter().map(|c| fill_template(template, c)).collect()
    } else {
        let classes = dataset.items.iter().map(|i| i.label + 1).max().unwrap_or(1);
        (0..classes).map(|c| fill_template(template, &c.to_string())).collect()
    };
    if let Some(bad) = dataset.items.iter().find(|i| i.label >= prompts.len()) {
        return Err(BenchError::Dataset(format!(
            "image {} has label {} but only {} prompts are defined",
            bad.id,
            bad.label,
            prompts.len()
        )));
    }
    Ok(prompts)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticKind {
    /// Upright tinted scenes; label = tint channel (3 classes).
    Upright,
    /// Gray banded scenes; label = brightest band.
    Banded { bands: usize },
}

impl std::str::FromStr for SyntheticKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "upright" => Ok(SyntheticKind::Upright),
            "banded" => Ok(SyntheticKind::Banded { bands: 4 }),
            other => Err(format!("unknown synthetic dataset {other:?}; expected upright or banded")),
        }
    }
}

/// Write `count` synthetic images, `manifest.csv` and `prompts.txt` into `dir`.
/// Returns the manifest path.
pub fn make_synthetic(dir: &Path, kind: SyntheticKind, count: usize, size: usize, seed: u64) -> Result<PathBuf> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| BenchError::io(&images, e))?;
    let manifest = dir.join("manifest.csv");
    let mut writer = csv::Writer::from_path(&manifest).map_err(|e| BenchError::io(&manifest, e.into()))?;
    writer
        .write_record(["id", "path", "label"])
        .map_err(|e| BenchError::io(&manifest, e.into()))?;
    let classes = match kind {
        SyntheticKind::Upright => 3,
        SyntheticKind::Banded { bands } => bands,
    };
    for i in 0..count {
        let label = i % classes;
        let image_seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        let image = match kind {
            SyntheticKind::Upright => upright_scene(size, label, image_seed),
            SyntheticKind::Banded { bands } => banded_scene(size, label, bands, image_seed),
        };
        let id = format!("img{i:05}");
        let rel = format!("images/{id}.png");
        save_png(&image, dir.join(&rel))?;
        writer
            .write_record([id.as_str(), rel.as_str(), &label.to_string()])
            .map_err(|e| BenchError::io(&manifest, e.into()))?;
    }
    writer.flush().map_err(|e| BenchError::io(&manifest, e))?;
    let names: Vec<String> = match kind {
        SyntheticKind::Upright => ["red", "green", "blue"].iter().map(|c| format!("a photo of a {c} scene")).collect(),
        SyntheticKind::Banded { bands } => (0..bands).map(|b| format!("a photo with bright band {b}")).collect(),
    };
    let prompts = dir.join("prompts.txt");
    fs::write(&prompts, names.join("\n") + "\n").map_err(|e| BenchError::io(&prompts, e))?;
    Ok(manifest)
}
