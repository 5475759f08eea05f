//! Venue ranking for photo queries and the evaluation metrics.
//!
//! Venues are represented by their projected text feature only. A query
//! photo is projected with the image side and every candidate venue is
//! scored by cosine similarity in the canonical space. An optional
//! coarse-location filter keeps only venues within a radius of the query
//! position.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataio::{PairedDataset, VenueRecord};
use crate::error::{Error, Result};
use crate::geo::{haversine_km, KM_PER_DEGREE};
use crate::linalg::{Matrix, Vector};
use crate::model::{CorrelationModel, Side};

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub venue_id: String,
    pub category: u32,
    pub latitude: f64,
    pub longitude: f64,
    pub vector: Vector,
}

/// Projected text vectors of every venue, built once and queried read-only.
#[derive(Debug, Clone, PartialEq)]
pub struct VenueIndex {
    entries: Vec<IndexEntry>,
    /// Per-component weights applied to both sides before the cosine.
    weights: Option<Vector>,
}

impl VenueIndex {
    /// Reassembles a stored index, checking ids and dimensions.
    pub fn from_parts(entries: Vec<IndexEntry>, weights: Option<Vector>) -> Result<Self> {
        let mut seen = HashSet::new();
        let dim = weights.as_ref().map(|w| w.len()).or(entries.first().map(|e| e.vector.len()));
        for e in &entries {
            if !seen.insert(e.venue_id.as_str()) {
                return Err(Error::DuplicateVenue(e.venue_id.clone()));
            }
            if Some(e.vector.len()) != dim {
                return Err(Error::dims(format!("index vector of {}", e.venue_id), dim.unwrap_or(0), e.vector.len()));
            }
        }
        Ok(Self { entries, weights })
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.entries.first().map_or(0, |e| e.vector.len())
    }

    pub fn weights(&self) -> Option<&Vector> {
        self.weights.as_ref()
    }
}

/// Projects each venue's text feature. With `rho_weighted`, canonical
/// components are scaled by the head correlations before scoring.
pub fn build_index(model: &dyn CorrelationModel, venues: &[VenueRecord], rho_weighted: bool) -> Result<VenueIndex> {
    let mut seen = HashSet::new();
    for v in venues {
        if !seen.insert(v.venue_id.as_str()) {
            return Err(Error::DuplicateVenue(v.venue_id.clone()));
        }
    }
    let dim = model.input_dim(Side::Text);
    for v in venues {
        if v.text_feature.len() != dim {
            return Err(Error::dims(format!("text feature of venue {}", v.venue_id), dim, v.text_feature.len()));
        }
    }
    let weights = rho_weighted.then(|| model.correlations().clone());
    if venues.is_empty() {
        return Ok(VenueIndex { entries: Vec::new(), weights });
    }
    let text = Matrix::from_fn(dim, venues.len(), |i, j| venues[j].text_feature[i]);
    let mut projected = model.project(&text, Side::Text)?;
    if let Some(w) = &weights {
        for mut col in projected.column_iter_mut() {
            col.component_mul_assign(w);
        }
    }
    let entries = venues
        .iter()
        .zip(projected.column_iter())
        .map(|(v, col)| IndexEntry {
            venue_id: v.venue_id.clone(),
            category: v.category,
            latitude: v.latitude,
            longitude: v.longitude,
            vector: col.into_owned(),
        })
        .collect();
    Ok(VenueIndex { entries, weights })
}

/// Cosine similarity; a zero vector scores 0 against anything.
pub fn score(u: &Vector, v: &Vector) -> f64 {
    let nu = u.norm();
    let nv = v.norm();
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (u.dot(v) / (nu * nv)).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoFilter {
    pub latitude: f64,
    pub longitude: f64,
    pub radius_km: f64,
}

impl GeoFilter {
    pub fn admits(&self, entry: &IndexEntry) -> bool {
        haversine_km(self.latitude, self.longitude, entry.latitude, entry.longitude) <= self.radius_km
    }
}

/// Ground truth carried alongside a query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTruth {
    pub query_id: String,
    pub venue_id: String,
    pub category: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedVenue {
    pub venue_id: String,
    pub category: u32,
    pub score: f64,
}

/// Candidate venues ordered by descending score, ties broken by venue id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankList {
    pub truth: QueryTruth,
    pub ranked: Vec<RankedVenue>,
    /// The geo filter left no candidates.
    pub empty: bool,
}

impl RankList {
    /// 1-based rank of the true venue, if it is among the candidates.
    pub fn true_rank(&self) -> Option<usize> {
        self.ranked.iter().position(|r| r.venue_id == self.truth.venue_id).map(|p| p + 1)
    }

    pub fn relevance(&self) -> impl Iterator<Item = bool> + '_ {
        self.ranked.iter().map(|r| r.category == self.truth.category)
    }

    pub fn n_relevant(&self) -> usize {
        self.relevance().filter(|&r| r).count()
    }
}

/// Ranks index entries against an already projected query vector.
pub fn rank_projected(u: &Vector, index: &VenueIndex, geo: Option<&GeoFilter>, truth: QueryTruth) -> Result<RankList> {
    if !index.is_empty() && u.len() != index.dim() {
        return Err(Error::dims("query projection", index.dim(), u.len()));
    }
    let weighted;
    let u = match index.weights() {
        Some(w) => {
            weighted = u.component_mul(w);
            &weighted
        }
        None => u,
    };
    let mut ranked: Vec<RankedVenue> = index
        .entries()
        .iter()
        .filter(|e| geo.is_none_or(|g| g.admits(e)))
        .map(|e| RankedVenue {
            venue_id: e.venue_id.clone(),
            category: e.category,
            score: score(u, &e.vector),
        })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.venue_id.cmp(&b.venue_id)));
    let empty = ranked.is_empty();
    if empty && geo.is_some() {
        warn!("geo filter left no candidate venues for query {}", truth.query_id);
    }
    Ok(RankList { truth, ranked, empty })
}

/// Projects one photo feature with the image side and ranks the index.
pub fn rank_venues(
    photo: &Vector,
    model: &dyn CorrelationModel,
    index: &VenueIndex,
    geo: Option<&GeoFilter>,
    truth: QueryTruth,
) -> Result<RankList> {
    let dim = model.input_dim(Side::Image);
    if photo.len() != dim {
        return Err(Error::dims("photo feature", dim, photo.len()));
    }
    let z = Matrix::from_column_slice(dim, 1, photo.as_slice());
    let u = model.project(&z, Side::Image)?.column(0).into_owned();
    rank_projected(&u, index, geo, truth)
}

/// Reciprocal rank of the true venue; 0 when it is not a candidate.
pub fn reciprocal_rank(list: &RankList) -> f64 {
    list.true_rank().map_or(0.0, |r| 1.0 / r as f64)
}

pub fn mrr1(lists: &[RankList]) -> Result<f64> {
    if lists.is_empty() {
        return Err(Error::UndefinedMetric("MRR1 of zero queries"));
    }
    Ok(lists.iter().map(reciprocal_rank).sum::<f64>() / lists.len() as f64)
}

/// Average precision with same-category relevance, over all relevant
/// candidates. `None` when no candidate is relevant.
pub fn average_precision(list: &RankList) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, rel) in list.relevance().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapSummary {
    pub map: f64,
    pub evaluated: usize,
    /// Queries without any relevant candidate.
    pub skipped: usize,
}

pub fn map(lists: &[RankList]) -> Result<MapSummary> {
    let aps: Vec<f64> = lists.iter().filter_map(average_precision).collect();
    if aps.is_empty() {
        return Err(Error::UndefinedMetric("MAP without any query that has a relevant venue"));
    }
    Ok(MapSummary {
        map: aps.iter().sum::<f64>() / aps.len() as f64,
        evaluated: aps.len(),
        skipped: lists.len() - aps.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallPrecisionPoint {
    pub cutoff: usize,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallPrecisionCurve {
    pub points: Vec<RecallPrecisionPoint>,
    /// Some cutoff exceeded a candidate list and was clamped to its length.
    pub clamped: bool,
}

/// Mean precision and recall of the top-`c` candidates for each cutoff.
/// Queries without relevant candidates are left out of both means.
pub fn recall_precision_curve(lists: &[RankList], cutoffs: &[usize]) -> Result<RecallPrecisionCurve> {
    if cutoffs.is_empty() || cutoffs[0] == 0 || cutoffs.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Argument("cutoffs must be positive and strictly ascending".into()));
    }
    let usable: Vec<(Vec<bool>, usize)> = lists
        .iter()
        .map(|l| {
            let rel: Vec<bool> = l.relevance().collect();
            let total = rel.iter().filter(|&&r| r).count();
            (rel, total)
        })
        .filter(|(_, total)| *total > 0)
        .collect();
    if usable.is_empty() {
        return Err(Error::UndefinedMetric("recall without any query that has a relevant venue"));
    }
    let mut clamped = false;
    let mut points = Vec::with_capacity(cutoffs.len());
    for &c in cutoffs {
        let (mut recall, mut precision) = (0.0, 0.0);
        for (rel, total) in &usable {
            let top = c.min(rel.len());
            clamped |= top < c;
            let hits = rel[..top].iter().filter(|&&r| r).count() as f64;
            recall += hits / *total as f64;
            precision += hits / top as f64;
        }
        let m = usable.len() as f64;
        points.push(RecallPrecisionPoint {
            cutoff: c,
            recall: recall / m,
            precision: precision / m,
        });
    }
    if clamped {
        info!("recall-precision cutoffs exceed some candidate lists; clamped");
    }
    Ok(RecallPrecisionCurve { points, clamped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Coarse-location filter radius; no filter when unset.
    pub geo_radius_km: Option<f64>,
    /// Standard deviation of Gaussian noise on the query position, in km.
    pub geo_noise_km: f64,
    pub seed: u64,
    /// Recall-precision cutoffs; `1..=index size` when unset.
    pub cutoffs: Option<Vec<usize>>,
    pub rho_weighted: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            geo_radius_km: None,
            geo_noise_km: 0.0,
            seed: 0,
            cutoffs: None,
            rho_weighted: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub n_queries: usize,
    pub n_venues: usize,
    pub mrr1: f64,
    pub map: f64,
    pub map_skipped: usize,
    pub per_category_map: BTreeMap<u32, f64>,
    pub recall_precision: RecallPrecisionCurve,
    /// Queries whose geo filter left no candidates.
    pub empty_lists: usize,
    /// Queries whose true venue did not survive the geo filter.
    pub true_venue_filtered: usize,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn recall_precision_csv(&self) -> String {
        let mut out = String::from("cutoff,recall,precision\n");
        for p in &self.recall_precision.points {
            let _ = writeln!(out, "{},{},{}", p.cutoff, p.recall, p.precision);
        }
        out
    }

    /// Writes `<stem>.json` and `<stem>_rp.csv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.json")), self.to_json()? + "\n")?;
        std::fs::write(dir.join(format!("{stem}_rp.csv")), self.recall_precision_csv())?;
        Ok(())
    }
}

/// Summary metrics over a set of rank lists.
pub fn summarize(method: &str, n_venues: usize, lists: &[RankList], cutoffs: &[usize]) -> Result<EvalReport> {
    let summary = map(lists)?;
    let mut by_category: BTreeMap<u32, Vec<RankList>> = BTreeMap::new();
    for l in lists {
        by_category.entry(l.truth.category).or_default().push(l.clone());
    }
    let per_category_map = by_category
        .into_iter()
        .filter_map(|(c, ls)| map(&ls).ok().map(|m| (c, m.map)))
        .collect();
    Ok(EvalReport {
        method: method.to_string(),
        n_queries: lists.len(),
        n_venues,
        mrr1: mrr1(lists)?,
        map: summary.map,
        map_skipped: summary.skipped,
        per_category_map,
        recall_precision: recall_precision_curve(lists, cutoffs)?,
        empty_lists: lists.iter().filter(|l| l.empty).count(),
        true_venue_filtered: lists.iter().filter(|l| l.true_rank().is_none()).count(),
    })
}

/// Query position: the true venue's coordinates, optionally perturbed.
fn query_position(lat: f64, lon: f64, noise_km: f64, rng: &mut ChaCha8Rng) -> (f64, f64) {
    if noise_km == 0.0 {
        return (lat, lon);
    }
    let dn: f64 = rng.sample::<f64, _>(StandardNormal) * noise_km;
    let de: f64 = rng.sample::<f64, _>(StandardNormal) * noise_km;
    let lat_q = lat + dn / KM_PER_DEGREE;
    let lon_q = lon + de / (KM_PER_DEGREE * lat.to_radians().cos().max(1e-6));
    (lat_q, lon_q)
}

/// Ranks every test photo against the index and returns the lists in query order.
pub fn rank_queries(
    model: &dyn CorrelationModel,
    index: &VenueIndex,
    queries: &PairedDataset,
    options: &EvalOptions,
) -> Result<Vec<RankList>> {
    if let Some(r) = options.geo_radius_km {
        if !(r > 0.0) {
            return Err(Error::Argument(format!("geo radius must be > 0, got {r}")));
        }
    }
    if !(options.geo_noise_km >= 0.0) {
        return Err(Error::Argument("geo noise must be >= 0".into()));
    }
    let dim = model.input_dim(Side::Image);
    if queries.x.nrows() != dim {
        return Err(Error::dims("photo features", dim, queries.x.nrows()));
    }
    let projected = model.project(&queries.x, Side::Image)?;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    (0..queries.len())
        .map(|i| {
            let geo = options.geo_radius_km.map(|radius_km| {
                let (lat, lon) = queries.coords[i];
                let (latitude, longitude) = query_position(lat, lon, options.geo_noise_km, &mut rng);
                GeoFilter { latitude, longitude, radius_km }
            });
            let truth = QueryTruth {
                query_id: format!("q{i}"),
                venue_id: queries.venue_ids[i].clone(),
                category: queries.categories[i],
            };
            rank_projected(&projected.column(i).into_owned(), index, geo.as_ref(), truth)
        })
        .collect()
}

/// Builds the index over `venues`, ranks every test query and summarizes.
pub fn evaluate(
    model: &dyn CorrelationModel,
    venues: &[VenueRecord],
    queries: &PairedDataset,
    options: &EvalOptions,
) -> Result<EvalReport> {
    let index = build_index(model, venues, options.rho_weighted)?;
    let lists = rank_queries(model, &index, queries, options)?;
    let cutoffs = options.cutoffs.clone().unwrap_or_else(|| (1..=index.len().max(1)).collect());
    summarize(model.method(), index.len(), &lists, &cutoffs)
}
