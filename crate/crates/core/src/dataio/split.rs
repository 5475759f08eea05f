use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, PairedDataset, VenueRecord};
use crate::error::{Error, Result};

/// Random venue/photo split.
///
/// A training venue always trains on its first photo; `extra_photo_ratio` of
/// its remaining photos also join training. Every other photo, including all
/// photos of non-training venues, becomes a test query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub train_venue_fraction: f64,
    pub extra_photo_ratio: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            train_venue_fraction: 0.75,
            extra_photo_ratio: 0.2,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_venue_fraction > 0.0 && self.train_venue_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "train_venue_fraction must be in (0, 1], got {}",
                self.train_venue_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.extra_photo_ratio) {
            return Err(Error::Config(format!(
                "extra_photo_ratio must be in [0, 1], got {}",
                self.extra_photo_ratio
            )));
        }
        Ok(())
    }
}

/// Splits venues into training pairs and test queries.
pub fn build_pairs(dataset: &Dataset, split: &SplitSpec) -> Result<(PairedDataset, PairedDataset)> {
    split.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(split.seed);
    let venues = &dataset.venues;

    let n_train = ((venues.len() as f64) * split.train_venue_fraction).round() as usize;
    let mut order: Vec<usize> = (0..venues.len()).collect();
    order.shuffle(&mut rng);
    let mut is_train = vec![false; venues.len()];
    for &i in order.iter().take(n_train) {
        is_train[i] = true;
    }

    let mut train: Vec<(&VenueRecord, &[f64])> = Vec::new();
    let mut test: Vec<(&VenueRecord, &[f64])> = Vec::new();
    for (v, &training) in venues.iter().zip(&is_train) {
        let photos = &v.photo_features;
        if !training {
            test.extend(photos.iter().map(|p| (v, p.as_slice())));
            continue;
        }
        if photos.is_empty() {
            return Err(Error::Config(format!(
                "training venue {:?} has no photos",
                v.venue_id
            )));
        }
        train.push((v, photos[0].as_slice()));
        let mut rest: Vec<usize> = (1..photos.len()).collect();
        rest.shuffle(&mut rng);
        let extra = ((rest.len() as f64) * split.extra_photo_ratio).round() as usize;
        let (to_train, to_test) = rest.split_at(extra);
        let mut to_train = to_train.to_vec();
        let mut to_test = to_test.to_vec();
        to_train.sort_unstable();
        to_test.sort_unstable();
        train.extend(to_train.iter().map(|&p| (v, photos[p].as_slice())));
        test.extend(to_test.iter().map(|&p| (v, photos[p].as_slice())));
    }
    Ok((
        PairedDataset::from_pairs(dataset.dim_x, dataset.dim_y, &train),
        PairedDataset::from_pairs(dataset.dim_x, dataset.dim_y, &test),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn dataset(n_venues: usize, photos: usize) -> Dataset {
        let venues = (0..n_venues)
            .map(|i| VenueRecord {
                venue_id: format!("v{i:03}"),
                category: (i % 3) as u32 + 1,
                latitude: 0.0,
                longitude: 0.0,
                text_feature: vec![i as f64, -(i as f64)],
                photo_features: (0..photos).map(|p| vec![(i * 100 + p) as f64]).collect(),
            })
            .collect();
        Dataset::new(1, 2, 10, venues).unwrap()
    }

    /// Photo identity is encoded in its single feature value.
    fn photo_ids(p: &PairedDataset) -> Vec<u64> {
        p.x.iter().map(|&x| x as u64).collect()
    }

    #[test]
    fn one_venue_four_photos_two_extra() {
        let ds = dataset(1, 4);
        let split = SplitSpec {
            seed: 3,
            train_venue_fraction: 1.0,
            extra_photo_ratio: 2.0 / 3.0,
        };
        let (train, test) = build_pairs(&ds, &split).unwrap();
        assert_eq!(train.len(), 3);
        assert_eq!(test.len(), 1);
        for c in train.y.column_iter() {
            assert_eq!(c, train.y.column(0));
        }
        assert_eq!(photo_ids(&train)[0], 0);
    }

    #[test]
    fn zero_ratio_trains_primary_photo_only() {
        let ds = dataset(8, 5);
        let split = SplitSpec {
            seed: 1,
            train_venue_fraction: 1.0,
            extra_photo_ratio: 0.0,
        };
        let (train, test) = build_pairs(&ds, &split).unwrap();
        assert_eq!(train.len(), 8);
        assert!(photo_ids(&train).iter().all(|id| id % 100 == 0));
        assert_eq!(test.len(), 8 * 4);
    }

    #[test]
    fn photoless_training_venue_is_a_configuration_error() {
        let mut ds = dataset(2, 2);
        ds.venues[1].photo_features.clear();
        let split = SplitSpec {
            seed: 0,
            train_venue_fraction: 1.0,
            extra_photo_ratio: 0.5,
        };
        assert!(matches!(build_pairs(&ds, &split), Err(Error::Config(_))));
    }

    #[test]
    fn seeds_control_membership() {
        let ds = dataset(20, 6);
        let split = |seed| SplitSpec {
            seed,
            train_venue_fraction: 0.75,
            extra_photo_ratio: 0.4,
        };
        let (a_train, a_test) = build_pairs(&ds, &split(7)).unwrap();
        let (b_train, b_test) = build_pairs(&ds, &split(7)).unwrap();
        assert_eq!(a_train, b_train);
        assert_eq!(a_test, b_test);
        let (_, c_test) = build_pairs(&ds, &split(8)).unwrap();
        let a: BTreeSet<_> = photo_ids(&a_test).into_iter().collect();
        let c: BTreeSet<_> = photo_ids(&c_test).into_iter().collect();
        assert_ne!(a, c);
    }

    #[test]
    fn train_and_test_are_disjoint_and_keep_categories() {
        let ds = dataset(20, 6);
        let split = SplitSpec {
            seed: 5,
            train_venue_fraction: 0.6,
            extra_photo_ratio: 0.5,
        };
        let (train, test) = build_pairs(&ds, &split).unwrap();
        let tr: BTreeSet<_> = photo_ids(&train).into_iter().collect();
        let te: BTreeSet<_> = photo_ids(&test).into_iter().collect();
        assert!(tr.is_disjoint(&te));
        assert_eq!(tr.len() + te.len(), 20 * 6);
        for p in [&train, &test] {
            for (i, id) in p.venue_ids.iter().enumerate() {
                let v = ds.venue(id).unwrap();
                assert_eq!(p.categories[i], v.category);
                assert_eq!(p.y.column(i).as_slice(), v.text_feature.as_slice());
            }
        }
    }

    #[test]
    fn fractions_are_validated() {
        let ds = dataset(2, 2);
        for (f, r) in [(0.0, 0.1), (1.5, 0.1), (0.5, -0.1), (0.5, 1.1)] {
            let split = SplitSpec {
                seed: 0,
                train_venue_fraction: f,
                extra_photo_ratio: r,
            };
            assert!(build_pairs(&ds, &split).is_err());
        }
    }
}
