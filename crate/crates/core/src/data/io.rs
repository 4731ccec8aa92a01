use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pgm::{encode_pgm, image_to_pgm, mask_to_pgm, parse_pgm, pgm_to_image, pgm_to_mask};
use super::{Attrs, DataError, GenConfig, Sample};

/// One `manifest.jsonl` line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub image: String,
    pub mask: String,
    pub report: String,
    pub attrs: Attrs,
    pub seed: u64,
}

fn in_file(path: &Path, e: DataError) -> DataError {
    DataError::File { path: path.display().to_string(), source: Box::new(e) }
}

/// Writes `images/`, `masks/`, `manifest.jsonl` and `meta.json` under `dir`.
pub fn write_dataset(samples: &[Sample], dir: impl AsRef<Path>, meta: &GenConfig) -> Result<(), DataError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("masks"))?;
    let mut manifest = Vec::new();
    for s in samples {
        let entry = ManifestEntry {
            id: s.id.clone(),
            image: format!("images/{}.pgm", s.id),
            mask: format!("masks/{}.pgm", s.id),
            report: s.report.clone(),
            attrs: s.attrs,
            seed: s.seed,
        };
        fs::write(dir.join(&entry.image), encode_pgm(&image_to_pgm(&s.image, s.size)))?;
        fs::write(dir.join(&entry.mask), encode_pgm(&mask_to_pgm(&s.mask, s.size)))?;
        serde_json::to_writer(&mut manifest, &entry).expect("manifest entries serialize");
        manifest.push(b'\n');
    }
    fs::File::create(dir.join("manifest.jsonl"))?.write_all(&manifest)?;
    let meta = serde_json::to_string_pretty(meta).expect("config serializes");
    fs::write(dir.join("meta.json"), meta + "\n")?;
    Ok(())
}

fn read_square(path: &Path) -> Result<(super::pgm::Pgm, usize), DataError> {
    let bytes = fs::read(path).map_err(|e| in_file(path, e.into()))?;
    let pgm = parse_pgm(&bytes).map_err(|e| in_file(path, e))?;
    if pgm.width != pgm.height {
        return Err(in_file(path, DataError::Pgm(format!("image is {}x{}, expected square", pgm.width, pgm.height))));
    }
    let size = pgm.width;
    Ok((pgm, size))
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Vec<Sample>, DataError> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("manifest.jsonl");
    let text = fs::read_to_string(&manifest_path).map_err(|e| in_file(&manifest_path, e.into()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry =
            serde_json::from_str(line).map_err(|e| DataError::Manifest { line: i + 1, reason: e.to_string() })?;
        let (img, size) = read_square(&dir.join(&entry.image))?;
        let (mask, msize) = read_square(&dir.join(&entry.mask))?;
        if msize != size {
            return Err(DataError::Manifest { line: i + 1, reason: format!("mask is {msize}px wide, image {size}px") });
        }
        out.push(Sample {
            id: entry.id,
            size,
            image: pgm_to_image(&img),
            mask: pgm_to_mask(&mask),
            report: entry.report,
            attrs: entry.attrs,
            seed: entry.seed,
        });
    }
    Ok(out)
}
