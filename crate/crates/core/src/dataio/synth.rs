//! Latent-factor venue generator.
//!
//! Every category owns a latent vector, every venue another one; a venue's
//! latent mix is `category_signal * cat + venue_signal * venue`. Text and
//! photo features are fixed random linear maps of that mix plus independent
//! Gaussian noise, with fresh noise for each photo.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, VenueRecord};
use crate::error::{Error, Result};
use crate::geo::KM_PER_DEGREE;
use crate::linalg::{Matrix, Vector};

const CITY_CENTERS: [(f64, f64); 5] = [
    (34.0522, -118.2437),
    (51.5074, -0.1278),
    (40.7128, -74.0060),
    (-33.8688, 151.2093),
    (28.5383, -81.3792),
];

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_venues: usize,
    pub n_categories: u32,
    pub photos_per_venue: usize,
    pub d_x: usize,
    pub d_y: usize,
    pub latent_dim: usize,
    pub category_signal: f64,
    pub venue_signal: f64,
    pub noise: f64,
    pub n_cities: usize,
    pub geo_cluster_radius_km: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_venues: 200,
            n_categories: 10,
            photos_per_venue: 10,
            d_x: 128,
            d_y: 64,
            latent_dim: 32,
            category_signal: 1.0,
            venue_signal: 1.0,
            noise: 0.5,
            n_cities: 2,
            geo_cluster_radius_km: 3.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_venues == 0 {
            return fail("n_venues must be positive".into());
        }
        if self.n_categories == 0 || self.n_categories as usize > self.n_venues {
            return fail(format!(
                "n_categories must be in 1..={}, got {}",
                self.n_venues, self.n_categories
            ));
        }
        if self.d_x == 0 || self.d_y == 0 || self.latent_dim == 0 {
            return fail("feature and latent dimensions must be positive".into());
        }
        for (name, v) in [
            ("category_signal", self.category_signal),
            ("venue_signal", self.venue_signal),
            ("noise", self.noise),
            ("geo_cluster_radius_km", self.geo_cluster_radius_km),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.n_cities == 0 || self.n_cities > CITY_CENTERS.len() {
            return fail(format!(
                "n_cities must be in 1..={}, got {}",
                CITY_CENTERS.len(),
                self.n_cities
            ));
        }
        Ok(())
    }
}

/// Generated venues plus the latent mix behind each one (same order as
/// `dataset.venues`).
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: Dataset,
    pub latents: Vec<Vector>,
}

pub fn synth_generate(config: &SynthConfig) -> Result<Dataset> {
    Ok(synth_generate_with_latents(config)?.dataset)
}

pub fn synth_generate_with_latents(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let l = config.latent_dim;
    let scale = 1.0 / (l as f64).sqrt();

    let a_x = Matrix::from_fn(config.d_x, l, |_, _| gaussian(&mut rng) * scale);
    let a_y = Matrix::from_fn(config.d_y, l, |_, _| gaussian(&mut rng) * scale);
    let cat_latents: Vec<Vector> = (0..config.n_categories)
        .map(|_| Vector::from_fn(l, |_, _| gaussian(&mut rng)))
        .collect();

    let mut venues = Vec::with_capacity(config.n_venues);
    let mut latents = Vec::with_capacity(config.n_venues);
    for i in 0..config.n_venues {
        let category = (i % config.n_categories as usize) as u32 + 1;
        let venue_latent = Vector::from_fn(l, |_, _| gaussian(&mut rng));
        let mix = &cat_latents[category as usize - 1] * config.category_signal
            + venue_latent * config.venue_signal;

        let text_clean = &a_y * &mix;
        let text_feature = text_clean
            .iter()
            .map(|&t| t + config.noise * gaussian(&mut rng))
            .collect();
        let photo_clean = &a_x * &mix;
        let photo_features = (0..config.photos_per_venue)
            .map(|_| {
                photo_clean
                    .iter()
                    .map(|&p| p + config.noise * gaussian(&mut rng))
                    .collect()
            })
            .collect();

        let (lat0, lon0) = CITY_CENTERS[i % config.n_cities];
        let radius = config.geo_cluster_radius_km * rng.random::<f64>().sqrt();
        let angle = std::f64::consts::TAU * rng.random::<f64>();
        let north_km = radius * angle.sin();
        let east_km = radius * angle.cos();
        let latitude = lat0 + north_km / KM_PER_DEGREE;
        let longitude = lon0 + east_km / (KM_PER_DEGREE * lat0.to_radians().cos());

        venues.push(VenueRecord {
            venue_id: format!("v{i:05}"),
            category,
            latitude,
            longitude,
            text_feature,
            photo_features,
        });
        latents.push(mix);
    }
    let dataset = Dataset::new(config.d_x, config.d_y, config.n_categories, venues)?;
    Ok(SynthOutput { dataset, latents })
}
