//! Venue records, manifest ingestion, train/test pairing and the synthetic
//! venue generator.

mod features;
mod split;
mod synth;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub use features::{
    decode_csv, decode_raw, encode_csv, encode_raw, read_features, write_features, FeatureBlock,
    FeatureFormat, RAW_MAGIC,
};
pub use split::{build_pairs, SplitSpec};
pub use synth::{synth_generate, synth_generate_with_latents, SynthConfig, SynthOutput};

/// Largest category id accepted when the manifest does not declare one.
pub const DEFAULT_CATEGORIES: u32 = 10;

/// One venue: its article feature, its photos, and where it is.
///
/// `photo_features[0]` plays the role of the encyclopedia photo; the rest are
/// user photos.
#[derive(Debug, Clone, PartialEq)]
pub struct VenueRecord {
    pub venue_id: String,
    pub category: u32,
    pub latitude: f64,
    pub longitude: f64,
    pub text_feature: Vec<f64>,
    pub photo_features: Vec<Vec<f64>>,
}

/// A validated venue collection, sorted by `venue_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim_x: usize,
    pub dim_y: usize,
    pub n_categories: u32,
    pub venues: Vec<VenueRecord>,
}

impl Dataset {
    /// Validates and sorts `venues`.
    pub fn new(
        dim_x: usize,
        dim_y: usize,
        n_categories: u32,
        mut venues: Vec<VenueRecord>,
    ) -> Result<Self> {
        venues.sort_by(|a, b| a.venue_id.cmp(&b.venue_id));
        for pair in venues.windows(2) {
            if pair[0].venue_id == pair[1].venue_id {
                return Err(Error::DuplicateVenue(pair[0].venue_id.clone()));
            }
        }
        for v in &venues {
            if v.category < 1 || v.category > n_categories {
                return Err(Error::CategoryOutOfRange {
                    venue: v.venue_id.clone(),
                    category: v.category,
                    max: n_categories,
                });
            }
            if v.text_feature.len() != dim_y {
                return Err(Error::dims(
                    format!("text feature of venue {:?}", v.venue_id),
                    dim_y,
                    v.text_feature.len(),
                ));
            }
            if let Some(p) = v.photo_features.iter().find(|p| p.len() != dim_x) {
                return Err(Error::dims(
                    format!("photo feature of venue {:?}", v.venue_id),
                    dim_x,
                    p.len(),
                ));
            }
        }
        Ok(Self {
            dim_x,
            dim_y,
            n_categories,
            venues,
        })
    }

    pub fn venue(&self, id: &str) -> Option<&VenueRecord> {
        self.venues
            .binary_search_by(|v| v.venue_id.as_str().cmp(id))
            .ok()
            .map(|i| &self.venues[i])
    }

    pub fn n_photos(&self) -> usize {
        self.venues.iter().map(|v| v.photo_features.len()).sum()
    }
}

/// Aligned image/text samples. Column `i` of `x` and `y` form pair `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    pub x: Matrix,
    pub y: Matrix,
    pub venue_ids: Vec<String>,
    pub categories: Vec<u32>,
    pub coords: Vec<(f64, f64)>,
}

impl PairedDataset {
    pub fn empty(dim_x: usize, dim_y: usize) -> Self {
        Self {
            x: Matrix::zeros(dim_x, 0),
            y: Matrix::zeros(dim_y, 0),
            venue_ids: Vec::new(),
            categories: Vec::new(),
            coords: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.venue_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.venue_ids.is_empty()
    }

    pub(crate) fn from_pairs(dim_x: usize, dim_y: usize, pairs: &[(&VenueRecord, &[f64])]) -> Self {
        let n = pairs.len();
        let x = Matrix::from_fn(dim_x, n, |r, c| pairs[c].1[r]);
        let y = Matrix::from_fn(dim_y, n, |r, c| pairs[c].0.text_feature[r]);
        Self {
            x,
            y,
            venue_ids: pairs.iter().map(|(v, _)| v.venue_id.clone()).collect(),
            categories: pairs.iter().map(|(v, _)| v.category).collect(),
            coords: pairs.iter().map(|(v, _)| (v.latitude, v.longitude)).collect(),
        }
    }

    /// Subset of samples, in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select_columns(idx),
            y: self.y.select_columns(idx),
            venue_ids: idx.iter().map(|&i| self.venue_ids[i].clone()).collect(),
            categories: idx.iter().map(|&i| self.categories[i]).collect(),
            coords: idx.iter().map(|&i| self.coords[i]).collect(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    dim_x: usize,
    dim_y: usize,
    #[serde(default = "default_categories")]
    n_categories: u32,
    venues: Vec<ManifestVenue>,
}

fn default_categories() -> u32 {
    DEFAULT_CATEGORIES
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestVenue {
    id: String,
    category: u32,
    lat: f64,
    lon: f64,
    text_file: String,
    photo_files: Vec<String>,
}

fn base_dir(manifest_path: &Path) -> PathBuf {
    manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default()
}

/// Reads a manifest and every feature file it references.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    if !manifest_path.exists() {
        return Err(Error::MissingFile(manifest_path.to_path_buf()));
    }
    let manifest: Manifest = serde_json::from_slice(&fs::read(manifest_path)?)?;
    let base = base_dir(manifest_path);

    let mut seen = BTreeSet::new();
    let mut venues = Vec::with_capacity(manifest.venues.len());
    for entry in manifest.venues {
        if !seen.insert(entry.id.clone()) {
            return Err(Error::DuplicateVenue(entry.id));
        }
        let text = read_features(&base.join(&entry.text_file))?;
        if text.cols != manifest.dim_y {
            return Err(Error::dims(
                format!("text file {}", entry.text_file),
                manifest.dim_y,
                text.cols,
            ));
        }
        if text.rows.len() != 1 {
            return Err(Error::format(
                entry.text_file.clone(),
                format!("expected exactly one text vector, found {}", text.rows.len()),
            ));
        }
        let mut photos = Vec::new();
        for file in &entry.photo_files {
            let block = read_features(&base.join(file))?;
            if block.cols != manifest.dim_x && !block.rows.is_empty() {
                return Err(Error::dims(
                    format!("photo file {file}"),
                    manifest.dim_x,
                    block.cols,
                ));
            }
            photos.extend(block.rows);
        }
        venues.push(VenueRecord {
            venue_id: entry.id,
            category: entry.category,
            latitude: entry.lat,
            longitude: entry.lon,
            text_feature: text.rows.into_iter().next().unwrap(),
            photo_features: photos,
        });
    }
    Dataset::new(
        manifest.dim_x,
        manifest.dim_y,
        manifest.n_categories,
        venues,
    )
}

/// Writes `manifest_path` plus `text/NNNNN.csv` and `photos/NNNNN.f64`
/// sidecars next to it.
pub fn write_dataset(dataset: &Dataset, manifest_path: &Path) -> Result<()> {
    let base = base_dir(manifest_path);
    if !dataset.venues.is_empty() {
        fs::create_dir_all(base.join("text"))?;
        fs::create_dir_all(base.join("photos"))?;
    } else if !base.as_os_str().is_empty() {
        fs::create_dir_all(&base)?;
    }
    let mut entries = Vec::with_capacity(dataset.venues.len());
    for (i, v) in dataset.venues.iter().enumerate() {
        let text_file = format!("text/{i:05}.{}", FeatureFormat::Csv.extension());
        write_features(
            &base.join(&text_file),
            &FeatureBlock::new(dataset.dim_y, vec![v.text_feature.clone()])?,
            FeatureFormat::Csv,
        )?;
        let mut photo_files = Vec::new();
        if !v.photo_features.is_empty() {
            let file = format!("photos/{i:05}.{}", FeatureFormat::Raw.extension());
            write_features(
                &base.join(&file),
                &FeatureBlock::new(dataset.dim_x, v.photo_features.clone())?,
                FeatureFormat::Raw,
            )?;
            photo_files.push(file);
        }
        entries.push(ManifestVenue {
            id: v.venue_id.clone(),
            category: v.category,
            lat: v.latitude,
            lon: v.longitude,
            text_file,
            photo_files,
        });
    }
    let manifest = Manifest {
        dim_x: dataset.dim_x,
        dim_y: dataset.dim_y,
        n_categories: dataset.n_categories,
        venues: entries,
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    fs::write(manifest_path, json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn venue(id: &str, category: u32, photos: usize, dx: usize, dy: usize) -> VenueRecord {
        let seed = id.len() as f64;
        VenueRecord {
            venue_id: id.into(),
            category,
            latitude: 34.05 + seed * 1e-3,
            longitude: -118.25,
            text_feature: (0..dy).map(|j| j as f64 * 0.1 + seed).collect(),
            photo_features: (0..photos)
                .map(|p| (0..dx).map(|j| (p * dx + j) as f64 / 7.0).collect())
                .collect(),
        }
    }

    #[test]
    fn two_venues_three_photos_each() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let ds = Dataset::new(4, 3, 10, vec![venue("b", 2, 3, 4, 3), venue("a", 1, 3, 4, 3)]).unwrap();
        write_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.venues.len(), 2);
        assert_eq!(back.venues[0].venue_id, "a");
        assert_eq!(
            back.venues.iter().map(|v| v.photo_features.len()).collect::<Vec<_>>(),
            vec![3, 3]
        );
        assert_eq!(back, ds);
    }

    #[test]
    fn empty_and_photoless_venues_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.json");
        let ds = Dataset::new(4, 3, 10, vec![]).unwrap();
        write_dataset(&ds, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap().venues.len(), 0);

        let path = dir.path().join("one.json");
        let ds = Dataset::new(4, 3, 10, vec![venue("solo", 5, 0, 4, 3)]).unwrap();
        write_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert!(back.venues[0].photo_features.is_empty());
        assert_eq!(back, ds);
    }

    #[test]
    fn text_dimension_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let ds = Dataset::new(4, 299, 10, vec![venue("a", 1, 1, 4, 299)]).unwrap();
        write_dataset(&ds, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap().replace("\"dim_y\": 299", "\"dim_y\": 300");
        fs::write(&path, text).unwrap();
        match load_dataset(&path) {
            Err(Error::DimensionMismatch { expected: 300, found: 299, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn diagnostics_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let ds = Dataset::new(2, 2, 10, vec![venue("a", 1, 1, 2, 2), venue("bb", 2, 1, 2, 2)]).unwrap();
        write_dataset(&ds, &path).unwrap();
        let original = fs::read_to_string(&path).unwrap();

        fs::write(&path, original.replace("\"bb\"", "\"a\"")).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::DuplicateVenue(id)) if id == "a"));

        fs::write(&path, original.replace("\"category\": 2", "\"category\": 11")).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::CategoryOutOfRange { category: 11, .. })));

        fs::remove_file(dir.path().join("photos/00001.f64")).unwrap();
        fs::write(&path, &original).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::MissingFile(_))));

        assert!(matches!(
            load_dataset(&dir.path().join("nope.json")),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn manifest_accepts_csv_photos_and_default_categories() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("t.csv"), "f0,f1\n1.5,2\n").unwrap();
        fs::write(dir.path().join("p.csv"), "f0,f1,f2\n1,2,3\n4,5,6\n").unwrap();
        let manifest = r#"{"dim_x": 3, "dim_y": 2, "venues": [
            {"id": "x", "category": 10, "lat": 51.5, "lon": -0.12,
             "text_file": "t.csv", "photo_files": ["p.csv", "p.csv"]}]}"#;
        let path = dir.path().join("m.json");
        fs::write(&path, manifest).unwrap();
        let ds = load_dataset(&path).unwrap();
        assert_eq!(ds.n_categories, 10);
        assert_eq!(ds.venues[0].photo_features.len(), 4);
        assert_eq!(ds.venues[0].text_feature, vec![1.5, 2.0]);
    }
}
