//! Geo-tagged buildings, pairwise distances and anchor-specific scale partitions.
//!
//! A scale partition assigns every building a relevance level relative to an
//! anchor building: level 0 is the anchor itself, levels `1..L` are the
//! nested distance rings bounded by [`ScaleConfig::thresholds`], and level `L`
//! holds the pure negatives beyond the largest threshold.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type BuildingId = u64;

/// Mean Earth radius in meters used for great-circle distances.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CoordSystem {
    #[serde(rename = "planar")]
    Planar,
    #[serde(rename = "geo")]
    Geographic,
}

/// A building location, either projected meters or WGS84 degrees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Coord {
    Planar { x: f64, y: f64 },
    Geographic { lat: f64, lon: f64 },
}

impl Coord {
    pub fn system(&self) -> CoordSystem {
        match self {
            Coord::Planar { .. } => CoordSystem::Planar,
            Coord::Geographic { .. } => CoordSystem::Geographic,
        }
    }

    fn pair(&self) -> [f64; 2] {
        match *self {
            Coord::Planar { x, y } => [x, y],
            Coord::Geographic { lat, lon } => [lat, lon],
        }
    }

    fn from_pair(pair: [f64; 2], system: CoordSystem) -> Self {
        match system {
            CoordSystem::Planar => Coord::Planar {
                x: pair[0],
                y: pair[1],
            },
            CoordSystem::Geographic => Coord::Geographic {
                lat: pair[0],
                lon: pair[1],
            },
        }
    }

    fn validate(&self) -> Result<()> {
        let [a, b] = self.pair();
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::Input(format!("non-finite coordinate ({a}, {b})")));
        }
        if let Coord::Geographic { lat, lon } = *self {
            if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
                return Err(Error::Input(format!(
                    "geographic coordinate out of range ({lat}, {lon})"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BuildingRecord {
    pub building_id: BuildingId,
    pub name: Option<String>,
    pub coord: Coord,
    pub split: Split,
}

/// Ordered set of buildings sharing one coordinate system.
#[derive(Clone, Debug)]
pub struct CampusRegistry {
    buildings: Vec<BuildingRecord>,
    system: CoordSystem,
    index: HashMap<BuildingId, usize>,
}

impl CampusRegistry {
    pub fn new(system: CoordSystem, buildings: Vec<BuildingRecord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(buildings.len());
        for (pos, b) in buildings.iter().enumerate() {
            if b.coord.system() != system {
                return Err(Error::Config(format!(
                    "building {} uses {:?} coordinates in a {:?} registry",
                    b.building_id,
                    b.coord.system(),
                    system
                )));
            }
            b.coord.validate()?;
            if index.insert(b.building_id, pos).is_some() {
                return Err(Error::Input(format!(
                    "duplicate building_id {}",
                    b.building_id
                )));
            }
        }
        Ok(Self {
            buildings,
            system,
            index,
        })
    }

    pub fn system(&self) -> CoordSystem {
        self.system
    }

    pub fn buildings(&self) -> &[BuildingRecord] {
        &self.buildings
    }

    pub fn len(&self) -> usize {
        self.buildings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buildings.is_empty()
    }

    pub fn position(&self, id: BuildingId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn get(&self, id: BuildingId) -> Option<&BuildingRecord> {
        self.position(id).map(|p| &self.buildings[p])
    }

    fn lookup(&self, id: BuildingId) -> Result<&BuildingRecord> {
        self.get(id).ok_or(Error::Lookup {
            kind: "building",
            id,
        })
    }

    /// Buildings of one split, keeping registry order.
    pub fn split(&self, split: Split) -> Result<CampusRegistry> {
        let members = self
            .buildings
            .iter()
            .filter(|b| b.split == split)
            .cloned()
            .collect();
        CampusRegistry::new(self.system, members)
    }

    pub fn distance(&self, a: BuildingId, b: BuildingId) -> Result<f64> {
        geodesic_distance(&self.lookup(a)?.coord, &self.lookup(b)?.coord)
    }
}

/// Great-circle distance (geographic) or 2-D Euclidean distance (planar), in meters.
pub fn geodesic_distance(a: &Coord, b: &Coord) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    match (*a, *b) {
        (Coord::Planar { x: x1, y: y1 }, Coord::Planar { x: x2, y: y2 }) => {
            Ok((x1 - x2).hypot(y1 - y2))
        }
        (
            Coord::Geographic {
                lat: lat1,
                lon: lon1,
            },
            Coord::Geographic {
                lat: lat2,
                lon: lon2,
            },
        ) => {
            if lat1 == lat2 && lon1 == lon2 {
                return Ok(0.0);
            }
            let (phi1, phi2) = (lat1.to_radians(), lat2.to_radians());
            let dphi = (lat2 - lat1).to_radians();
            let dlambda = (lon2 - lon1).to_radians();
            let h = (dphi / 2.0).sin().powi(2)
                + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
            Ok(2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin())
        }
        _ => Err(Error::Config("mixed coordinate systems".into())),
    }
}

/// Dense symmetric building-to-building distances in meters, in registry order.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrixMeters {
    ids: Vec<BuildingId>,
    data: Vec<f64>,
}

impl DistanceMatrixMeters {
    pub fn ids(&self) -> &[BuildingId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ids.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.ids.len();
        &self.data[i * n..(i + 1) * n]
    }
}

pub fn pairwise_distances(registry: &CampusRegistry) -> Result<DistanceMatrixMeters> {
    if registry.is_empty() {
        return Err(Error::Input("empty registry".into()));
    }
    let b = registry.buildings();
    let n = b.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| geodesic_distance(&b[i].coord, &b[j].coord))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(DistanceMatrixMeters {
        ids: b.iter().map(|r| r.building_id).collect(),
        data: rows.into_iter().flatten().collect(),
    })
}

/// Strictly increasing distance thresholds in meters; `L = thresholds.len()`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleConfig {
    thresholds: Vec<f64>,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        Self {
            thresholds: vec![0.0, 200.0, 500.0],
        }
    }
}

impl ScaleConfig {
    pub fn new(thresholds: Vec<f64>) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(Error::Config(
                "at least one distance threshold is required".into(),
            ));
        }
        if !thresholds.iter().all(|t| t.is_finite()) || thresholds[0] < 0.0 {
            return Err(Error::Config(format!(
                "thresholds must be finite and non-negative: {thresholds:?}"
            )));
        }
        if thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "thresholds must be strictly increasing: {thresholds:?}"
            )));
        }
        Ok(Self { thresholds })
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// Number of positive scales `L`; level `L` is the pure-negative level.
    pub fn num_scales(&self) -> usize {
        self.thresholds.len()
    }
}

/// Smallest `l` with `d <= thresholds[l]`, or `L` beyond the last threshold.
pub fn relevance_level(d: f64, config: &ScaleConfig) -> Result<usize> {
    if d.is_nan() || d < 0.0 {
        return Err(Error::Input(format!(
            "distance must be non-negative, got {d}"
        )));
    }
    Ok(config
        .thresholds
        .iter()
        .position(|&t| d <= t)
        .unwrap_or(config.thresholds.len()))
}

/// Per-building relevance levels around one anchor building.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalePartition {
    anchor: BuildingId,
    num_scales: usize,
    levels: BTreeMap<BuildingId, usize>,
}

impl ScalePartition {
    pub fn anchor(&self) -> BuildingId {
        self.anchor
    }

    pub fn num_scales(&self) -> usize {
        self.num_scales
    }

    pub fn level_of(&self, id: BuildingId) -> Option<usize> {
        self.levels.get(&id).copied()
    }

    pub fn levels(&self) -> &BTreeMap<BuildingId, usize> {
        &self.levels
    }

    /// Buildings exactly at `level` (`S^l`).
    pub fn at_level(&self, level: usize) -> Vec<BuildingId> {
        self.levels
            .iter()
            .filter(|(_, &l)| l == level)
            .map(|(&id, _)| id)
            .collect()
    }

    /// Buildings at or below `level` (`S^{<=l}`).
    pub fn within(&self, level: usize) -> Vec<BuildingId> {
        self.levels
            .iter()
            .filter(|(_, &l)| l <= level)
            .map(|(&id, _)| id)
            .collect()
    }

    /// Buildings strictly beyond `level` (`S^{>l}`).
    pub fn beyond(&self, level: usize) -> Vec<BuildingId> {
        self.levels
            .iter()
            .filter(|(_, &l)| l > level)
            .map(|(&id, _)| id)
            .collect()
    }
}

pub fn build_scale_partition(
    anchor: BuildingId,
    registry: &CampusRegistry,
    config: &ScaleConfig,
) -> Result<ScalePartition> {
    let origin = registry.lookup(anchor)?.coord;
    let mut levels = BTreeMap::new();
    for b in registry.buildings() {
        let level = if b.building_id == anchor {
            0
        } else {
            relevance_level(geodesic_distance(&origin, &b.coord)?, config)?
        };
        levels.insert(b.building_id, level);
    }
    Ok(ScalePartition {
        anchor,
        num_scales: config.num_scales(),
        levels,
    })
}

/// Partitions for every building of the registry, keyed by anchor.
pub fn build_all_partitions(
    registry: &CampusRegistry,
    config: &ScaleConfig,
) -> Result<BTreeMap<BuildingId, ScalePartition>> {
    let dist = pairwise_distances(registry)?;
    let ids = dist.ids().to_vec();
    let parts: Vec<ScalePartition> = (0..ids.len())
        .into_par_iter()
        .map(|i| {
            let mut levels = BTreeMap::new();
            for (j, &id) in ids.iter().enumerate() {
                let level = if i == j {
                    0
                } else {
                    relevance_level(dist.get(i, j), config)?
                };
                levels.insert(id, level);
            }
            Ok(ScalePartition {
                anchor: ids[i],
                num_scales: config.num_scales(),
                levels,
            })
        })
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().map(|p| (p.anchor, p)).collect())
}

/// All other buildings by ascending distance from `anchor`, ties by ascending id.
pub fn distance_ranking(anchor: BuildingId, registry: &CampusRegistry) -> Result<Vec<BuildingId>> {
    let origin = registry.lookup(anchor)?.coord;
    let mut others = registry
        .buildings()
        .iter()
        .filter(|b| b.building_id != anchor)
        .map(|b| Ok((geodesic_distance(&origin, &b.coord)?, b.building_id)))
        .collect::<Result<Vec<_>>>()?;
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(others.into_iter().map(|(_, id)| id).collect())
}

/// Query-by-gallery relevance levels, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceTable {
    rows: usize,
    cols: usize,
    levels: Vec<u8>,
    num_scales: usize,
}

impl RelevanceTable {
    /// Levels of each gallery image's building relative to each query image's building.
    pub fn build(
        query_buildings: &[BuildingId],
        gallery_buildings: &[BuildingId],
        partitions: &BTreeMap<BuildingId, ScalePartition>,
    ) -> Result<Self> {
        let num_scales = partitions
            .values()
            .next()
            .map(|p| p.num_scales)
            .ok_or_else(|| Error::Input("no partitions supplied".into()))?;
        let mut levels = Vec::with_capacity(query_buildings.len() * gallery_buildings.len());
        for &q in query_buildings {
            let part = partitions.get(&q).ok_or(Error::Lookup {
                kind: "partition anchor",
                id: q,
            })?;
            for &g in gallery_buildings {
                let l = part.level_of(g).ok_or(Error::Lookup {
                    kind: "building",
                    id: g,
                })?;
                levels.push(l as u8);
            }
        }
        Ok(Self {
            rows: query_buildings.len(),
            cols: gallery_buildings.len(),
            levels,
            num_scales,
        })
    }

    pub fn from_levels(
        rows: usize,
        cols: usize,
        levels: Vec<u8>,
        num_scales: usize,
    ) -> Result<Self> {
        if levels.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} levels for a {rows}x{cols} table",
                levels.len()
            )));
        }
        if levels.iter().any(|&l| l as usize > num_scales) {
            return Err(Error::Input(format!("level exceeds {num_scales}")));
        }
        Ok(Self {
            rows,
            cols,
            levels,
            num_scales,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn num_scales(&self) -> usize {
        self.num_scales
    }

    pub fn row(&self, q: usize) -> &[u8] {
        &self.levels[q * self.cols..(q + 1) * self.cols]
    }
}

#[derive(Serialize, Deserialize)]
struct RegistryLine {
    building_id: BuildingId,
    name: Option<String>,
    coord: [f64; 2],
    system: CoordSystem,
    split: Split,
}

/// Writes the registry as JSON lines, one building per line.
pub fn save_registry(registry: &CampusRegistry, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for b in registry.buildings() {
        let line = RegistryLine {
            building_id: b.building_id,
            name: b.name.clone(),
            coord: b.coord.pair(),
            system: registry.system,
            split: b.split,
        };
        serde_json::to_writer(&mut out, &line).map_err(|e| Error::Parse(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_registry(path: &Path) -> Result<CampusRegistry> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut system = None;
    let mut buildings = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RegistryLine = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        match system {
            None => system = Some(rec.system),
            Some(s) if s != rec.system => {
                return Err(Error::Config(format!(
                    "line {} mixes coordinate systems",
                    lineno + 1
                )))
            }
            _ => {}
        }
        buildings.push(BuildingRecord {
            building_id: rec.building_id,
            name: rec.name,
            coord: Coord::from_pair(rec.coord, rec.system),
            split: rec.split,
        });
    }
    let system =
        system.ok_or_else(|| Error::Input(format!("{} contains no buildings", path.display())))?;
    CampusRegistry::new(system, buildings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn planar(id: BuildingId, x: f64, y: f64) -> BuildingRecord {
        BuildingRecord {
            building_id: id,
            name: None,
            coord: Coord::Planar { x, y },
            split: Split::Train,
        }
    }

    fn registry(points: &[(f64, f64)]) -> CampusRegistry {
        let b = points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| planar(i as u64 + 1, x, y))
            .collect();
        CampusRegistry::new(CoordSystem::Planar, b).unwrap()
    }

    fn random_registry(seed: u64, n: usize) -> CampusRegistry {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<_> = (0..n)
            .map(|_| (rng.random_range(0.0..1500.0), rng.random_range(0.0..1500.0)))
            .collect();
        registry(&pts)
    }

    #[test]
    fn distance_examples() {
        let p = Coord::Geographic {
            lat: 10.0,
            lon: 20.0,
        };
        assert_eq!(geodesic_distance(&p, &p).unwrap(), 0.0);
        let a = Coord::Planar { x: 0.0, y: 0.0 };
        let b = Coord::Planar { x: 3.0, y: 4.0 };
        assert_eq!(geodesic_distance(&a, &b).unwrap(), 5.0);
        // R * 0.001 deg in radians
        let a = Coord::Geographic { lat: 0.0, lon: 0.0 };
        let b = Coord::Geographic {
            lat: 0.001,
            lon: 0.0,
        };
        let d = geodesic_distance(&a, &b).unwrap();
        assert!((d - 111.195).abs() < 0.01, "{d}");
        let oracle = EARTH_RADIUS_M * 0.001_f64.to_radians();
        assert!((d - oracle).abs() < 1e-6);
    }

    #[test]
    fn distance_errors() {
        let a = Coord::Planar { x: 0.0, y: 0.0 };
        let g = Coord::Geographic { lat: 0.0, lon: 0.0 };
        assert!(matches!(geodesic_distance(&a, &g), Err(Error::Config(_))));
        let nan = Coord::Planar {
            x: f64::NAN,
            y: 0.0,
        };
        assert!(matches!(geodesic_distance(&a, &nan), Err(Error::Input(_))));
        let bad = Coord::Geographic {
            lat: 91.0,
            lon: 0.0,
        };
        assert!(geodesic_distance(&g, &bad).is_err());
    }

    #[test]
    fn registry_rejects_mixed_and_duplicates() {
        let mixed = vec![
            planar(1, 0.0, 0.0),
            BuildingRecord {
                building_id: 2,
                name: None,
                coord: Coord::Geographic { lat: 0.0, lon: 0.0 },
                split: Split::Test,
            },
        ];
        assert!(matches!(
            CampusRegistry::new(CoordSystem::Planar, mixed),
            Err(Error::Config(_))
        ));
        let dup = vec![planar(1, 0.0, 0.0), planar(1, 5.0, 0.0)];
        assert!(CampusRegistry::new(CoordSystem::Planar, dup).is_err());
    }

    #[test]
    fn pairwise_examples() {
        let one = registry(&[(3.0, 3.0)]);
        let d = pairwise_distances(&one).unwrap();
        assert_eq!(d.row(0), &[0.0]);

        let two = registry(&[(0.0, 0.0), (0.0, 100.0)]);
        let d = pairwise_distances(&two).unwrap();
        assert_eq!(d.get(0, 1), 100.0);
        assert_eq!(d.get(1, 0), 100.0);

        let tri = registry(&[(0.0, 0.0), (30.0, 0.0), (10.0, 70.0)]);
        let d = pairwise_distances(&tri).unwrap();
        let b = tri.buildings();
        for i in 0..3 {
            for j in 0..3 {
                let oracle = ((b[i].coord.pair()[0] - b[j].coord.pair()[0]).powi(2)
                    + (b[i].coord.pair()[1] - b[j].coord.pair()[1]).powi(2))
                .sqrt();
                assert!((d.get(i, j) - oracle).abs() < 1e-12);
                assert_eq!(d.get(i, j), d.get(j, i));
            }
        }
    }

    #[test]
    fn level_examples() {
        let cfg = ScaleConfig::default();
        assert_eq!(relevance_level(0.0, &cfg).unwrap(), 0);
        assert_eq!(relevance_level(150.0, &cfg).unwrap(), 1);
        assert_eq!(relevance_level(200.0, &cfg).unwrap(), 1);
        assert_eq!(relevance_level(500.0, &cfg).unwrap(), 2);
        assert_eq!(relevance_level(750.0, &cfg).unwrap(), 3);
        let single = ScaleConfig::new(vec![0.0]).unwrap();
        assert_eq!(relevance_level(0.0001, &single).unwrap(), 1);
        assert!(relevance_level(-1.0, &cfg).is_err());
    }

    #[test]
    fn scale_config_validation() {
        assert!(ScaleConfig::new(vec![]).is_err());
        assert!(ScaleConfig::new(vec![-1.0, 10.0]).is_err());
        assert!(ScaleConfig::new(vec![0.0, 200.0, 200.0]).is_err());
        assert_eq!(
            ScaleConfig::new(vec![0.0, 200.0, 500.0])
                .unwrap()
                .num_scales(),
            3
        );
    }

    #[test]
    fn partition_examples() {
        let single = registry(&[(5.0, 5.0)]);
        let p = build_scale_partition(1, &single, &ScaleConfig::default()).unwrap();
        assert_eq!(p.levels().len(), 1);
        assert_eq!(p.level_of(1), Some(0));

        // reference building 1, two neighbours inside 200 m, seven more inside 500 m
        let mut pts = vec![(0.0, 0.0), (120.0, 0.0), (0.0, -180.0)];
        for k in 0..7 {
            let angle = k as f64 * 0.9;
            pts.push((350.0 * angle.cos(), 350.0 * angle.sin()));
        }
        let fig = registry(&pts);
        let p = build_scale_partition(1, &fig, &ScaleConfig::default()).unwrap();
        assert_eq!(p.at_level(1), vec![2, 3]);
        assert_eq!(p.at_level(2), (4..=10).collect::<Vec<_>>());
        assert!(p.at_level(3).is_empty());

        assert!(matches!(
            build_scale_partition(99, &fig, &ScaleConfig::default()),
            Err(Error::Lookup { .. })
        ));
    }

    #[test]
    fn partition_matches_brute_force() {
        let reg = random_registry(7, 10);
        let cfg = ScaleConfig::default();
        let dist = pairwise_distances(&reg).unwrap();
        let all = build_all_partitions(&reg, &cfg).unwrap();
        for (i, anchor) in reg.buildings().iter().enumerate() {
            let p = build_scale_partition(anchor.building_id, &reg, &cfg).unwrap();
            assert_eq!(&p, &all[&anchor.building_id]);
            for (j, b) in reg.buildings().iter().enumerate() {
                let d = dist.get(i, j);
                let mut expect = 3;
                for (l, &t) in [0.0, 200.0, 500.0].iter().enumerate() {
                    if d <= t {
                        expect = l;
                        break;
                    }
                }
                assert_eq!(p.level_of(b.building_id), Some(expect));
            }
        }
    }

    #[test]
    fn ranking_examples() {
        let two = registry(&[(0.0, 0.0), (10.0, 0.0)]);
        assert_eq!(distance_ranking(1, &two).unwrap(), vec![2]);
        let tie = registry(&[(0.0, 0.0), (0.0, 50.0), (50.0, 0.0)]);
        assert_eq!(distance_ranking(1, &tie).unwrap(), vec![2, 3]);

        let reg = random_registry(11, 10);
        for anchor in reg.buildings() {
            let ranked = distance_ranking(anchor.building_id, &reg).unwrap();
            let mut oracle: Vec<_> = reg
                .buildings()
                .iter()
                .filter(|b| b.building_id != anchor.building_id)
                .map(|b| {
                    (
                        reg.distance(anchor.building_id, b.building_id).unwrap(),
                        b.building_id,
                    )
                })
                .collect();
            // insertion sort keeps the oracle independent of the library sort
            for i in 1..oracle.len() {
                let mut j = i;
                while j > 0
                    && (oracle[j - 1].0 > oracle[j].0
                        || (oracle[j - 1].0 == oracle[j].0 && oracle[j - 1].1 > oracle[j].1))
                {
                    oracle.swap(j - 1, j);
                    j -= 1;
                }
            }
            assert_eq!(
                ranked,
                oracle.into_iter().map(|(_, id)| id).collect::<Vec<_>>()
            );
        }
        assert!(distance_ranking(42, &reg).is_err());
    }

    #[test]
    fn registry_jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("registry.jsonl");
        let mut reg = random_registry(3, 5);
        reg.buildings[2].name = Some("library".into());
        reg.buildings[4].split = Split::Test;
        save_registry(&reg, &path).unwrap();
        let back = load_registry(&path).unwrap();
        assert_eq!(back.buildings(), reg.buildings());
        let text = fs::read_to_string(&path).unwrap();
        assert!(text
            .lines()
            .next()
            .unwrap()
            .contains("\"system\":\"planar\""));
    }
}
