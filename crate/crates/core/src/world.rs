//! Synthetic monitoring-point world: normal sample generation and anomaly injection.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{build_encoder_input, CellRef, ClassVocabulary, ContextRecord, RawDetection, Sample, SECONDS_PER_DAY};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Zone {
    Road,
    BikeLane,
    Sidewalk,
    Parking,
    Building,
    OpenLand,
}

impl Zone {
    pub const ALL: [Zone; 6] = [Zone::Road, Zone::BikeLane, Zone::Sidewalk, Zone::Parking, Zone::Building, Zone::OpenLand];

    /// Single-letter code used in layout strings.
    pub fn from_letter(ch: char) -> Option<Zone> {
        Some(match ch {
            'R' => Zone::Road,
            'B' => Zone::BikeLane,
            'S' => Zone::Sidewalk,
            'P' => Zone::Parking,
            'H' => Zone::Building,
            'O' => Zone::OpenLand,
            _ => return None,
        })
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Zone::Road => "road",
            Zone::BikeLane => "bike_lane",
            Zone::Sidewalk => "sidewalk",
            Zone::Parking => "parking",
            Zone::Building => "building",
            Zone::OpenLand => "open_land",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AltitudeBand {
    Low,
    Mid,
    High,
}

/// Half-open hour interval; wraps past midnight when `start_hour > end_hour`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeBand {
    pub name: String,
    pub start_hour: f64,
    pub end_hour: f64,
}

impl TimeBand {
    pub fn contains(&self, seconds: f64) -> bool {
        let h = seconds / 3600.0;
        if self.start_hour <= self.end_hour {
            h >= self.start_hour && h < self.end_hour
        } else {
            h >= self.start_hour || h < self.end_hour
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorNoise {
    pub objectness_mean: f64,
    pub objectness_std: f64,
    pub class_confidence_mean: f64,
    pub class_confidence_std: f64,
    /// Probability that a placed object is missed by the detector.
    pub dropout: f64,
}

impl Default for DetectorNoise {
    fn default() -> Self {
        DetectorNoise {
            objectness_mean: 0.97,
            objectness_std: 0.015,
            class_confidence_mean: 0.995,
            class_confidence_std: 0.005,
            dropout: 0.05,
        }
    }
}

impl DetectorNoise {
    /// One detection score: clipped objectness times clipped class confidence.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f32, f32) {
        let o = clip01(self.objectness_mean + self.objectness_std * rng.sample::<f64, _>(StandardNormal));
        let c = clip01(self.class_confidence_mean + self.class_confidence_std * rng.sample::<f64, _>(StandardNormal));
        (o as f32, c as f32)
    }
}

fn clip01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Presence probability per time band and a uniform `1..=max_count` count for one class in one zone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Occurrence {
    pub zone: Zone,
    pub class: String,
    pub presence: Vec<f64>,
    pub max_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitoringPoint {
    pub id: String,
    pub latitude: f64,
    pub longitude: f64,
    pub altitude: AltitudeBand,
    /// Visual identity for frame activations. Points sharing it look alike from the air.
    #[serde(default)]
    pub appearance: Option<String>,
    /// Key into `ScenarioSpec::layouts`.
    pub layout: String,
    pub headings: Vec<u16>,
    #[serde(default)]
    pub occurrence: Vec<Occurrence>,
}

impl MonitoringPoint {
    pub fn appearance(&self) -> &str {
        self.appearance.as_deref().unwrap_or(&self.id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoBounds {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub seed: u64,
    pub grid_size: usize,
    pub frame_dim: usize,
    pub classes: Vec<String>,
    /// Objects are only placed where presence probability reaches this value.
    pub normality_floor: f64,
    /// Contextual anomalies use (class, zone) pairs below this probability.
    pub rarity_threshold: f64,
    pub frame_jitter: f64,
    pub bounds: GeoBounds,
    pub detector: DetectorNoise,
    pub time_bands: Vec<TimeBand>,
    pub layouts: BTreeMap<String, Vec<String>>,
    pub points: Vec<MonitoringPoint>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Vehicle,
    Pedestrian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub kind: RuleKind,
    pub classes: Vec<String>,
    pub zone: Zone,
    pub description: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleBook {
    pub rules: Vec<Rule>,
}

impl RuleBook {
    pub fn validate(&self, classes: &ClassVocabulary) -> Result<()> {
        if self.rules.len() != 12 {
            return Err(Error::Config(alloc::format!("rulebook needs 12 rules, has {}", self.rules.len())));
        }
        let vehicle = self.rules.iter().filter(|r| r.kind == RuleKind::Vehicle).count();
        if vehicle != 8 {
            return Err(Error::Config(alloc::format!("rulebook needs 8 vehicle and 4 pedestrian rules, has {vehicle} vehicle")));
        }
        for r in &self.rules {
            if r.classes.is_empty() {
                return Err(Error::Config(alloc::format!("rule '{}' names no class", r.description)));
            }
            if let Some(c) = r.classes.iter().find(|c| classes.index(c).is_none()) {
                return Err(Error::Config(alloc::format!("rule '{}' names unknown class {c}", r.description)));
            }
        }
        Ok(())
    }

    /// Indices of rules forbidding `class` in `zone`.
    pub fn violated_by(&self, zone: Zone, class: &str) -> impl Iterator<Item = usize> + '_ {
        let class = class.to_string();
        self.rules
            .iter()
            .enumerate()
            .filter(move |(_, r)| r.zone == zone && r.classes.iter().any(|c| *c == class))
            .map(|(i, _)| i)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    Point,
    Contextual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyInjectionPlan {
    pub kind: AnomalyKind,
    pub sample_id: u64,
    pub cells: Vec<(CellRef, f32)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Injection {
    /// Modified copies of the chosen samples, with `ground_truth` set.
    pub samples: Vec<Sample>,
    pub plans: Vec<AnomalyInjectionPlan>,
    pub warnings: Vec<String>,
}

/// Validated scenario with lookup tables.
#[derive(Clone, Debug)]
pub struct World {
    pub spec: ScenarioSpec,
    pub classes: ClassVocabulary,
    /// `[point][zone][band][class]`
    prob: Vec<f64>,
    /// `[point][zone][class]`
    max_count: Vec<usize>,
    /// Rotated zone maps keyed by `(point, heading)`.
    zone_maps: BTreeMap<(usize, u16), Vec<Zone>>,
    frame_bases: BTreeMap<(String, u16, AltitudeBand), Vec<f32>>,
    frame_salt: u64,
}

const NZ: usize = 6;

impl World {
    pub fn new(spec: ScenarioSpec) -> Result<Self> {
        let classes = ClassVocabulary(spec.classes.clone());
        let (np, nb, nc, s) = (spec.points.len(), spec.time_bands.len(), classes.len(), spec.grid_size);
        if np == 0 || nb == 0 || nc == 0 || s == 0 || spec.frame_dim == 0 {
            return Err(Error::Config("scenario needs points, time bands, classes, a grid and frame features".into()));
        }
        check_bands(&spec.time_bands)?;
        for (name, v) in [("normality_floor", spec.normality_floor), ("rarity_threshold", spec.rarity_threshold)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(alloc::format!("{name} must lie in [0, 1]")));
            }
        }
        let d = &spec.detector;
        if !(0.0..=1.0).contains(&d.dropout) || d.objectness_std < 0.0 || d.class_confidence_std < 0.0 {
            return Err(Error::Config("bad detector noise parameters".into()));
        }
        let b = &spec.bounds;
        if !(b.lat_max > b.lat_min && b.lon_max > b.lon_min) {
            return Err(Error::Config("empty GPS bounds".into()));
        }
        let mut prob = vec![0.0; np * NZ * nb * nc];
        let mut max_count = vec![1; np * NZ * nc];
        let mut zone_maps = BTreeMap::new();
        let mut seen = BTreeMap::new();
        for (pi, p) in spec.points.iter().enumerate() {
            if seen.insert(p.id.clone(), ()).is_some() {
                return Err(Error::Config(alloc::format!("duplicate point id {}", p.id)));
            }
            if !(b.lat_min..=b.lat_max).contains(&p.latitude) || !(b.lon_min..=b.lon_max).contains(&p.longitude) {
                return Err(Error::Config(alloc::format!("point {} lies outside the scenario bounds", p.id)));
            }
            let rows = spec
                .layouts
                .get(&p.layout)
                .ok_or_else(|| Error::Config(alloc::format!("point {} uses unknown layout {}", p.id, p.layout)))?;
            let base = parse_layout(rows, s).map_err(|e| Error::Config(alloc::format!("layout {}: {e}", p.layout)))?;
            if p.headings.is_empty() {
                return Err(Error::Config(alloc::format!("point {} has no headings", p.id)));
            }
            for &h in &p.headings {
                if h % 90 != 0 || h >= 360 {
                    return Err(Error::Config(alloc::format!("heading {h} is not one of 0/90/180/270")));
                }
                zone_maps.insert((pi, h), rotate(&base, s, (h / 90) as usize));
            }
            for o in &p.occurrence {
                let c = classes
                    .index(&o.class)
                    .ok_or_else(|| Error::Config(alloc::format!("point {} names unknown class {}", p.id, o.class)))?;
                if o.presence.len() != nb {
                    return Err(Error::Config(alloc::format!(
                        "point {} {}/{}: {} presence values for {nb} time bands",
                        p.id,
                        o.zone.name(),
                        o.class,
                        o.presence.len()
                    )));
                }
                if o.presence.iter().any(|v| !(0.0..=1.0).contains(v)) || o.max_count == 0 {
                    return Err(Error::Config(alloc::format!("point {} {}/{}: bad occurrence", p.id, o.zone.name(), o.class)));
                }
                let z = o.zone.index();
                for (bi, &v) in o.presence.iter().enumerate() {
                    prob[((pi * NZ + z) * nb + bi) * nc + c] = v;
                }
                max_count[(pi * NZ + z) * nc + c] = o.max_count;
            }
        }
        let mut world = World { spec, classes, prob, max_count, zone_maps, frame_bases: BTreeMap::new(), frame_salt: 0 };
        world.build_frame_bases();
        Ok(world)
    }

    // Base vectors are independent Gaussian draws per (appearance, heading, altitude). Any pair
    // with cosine similarity >= 0.5 triggers a redraw with a new salt.
    fn build_frame_bases(&mut self) {
        let mut keys: Vec<(String, u16, AltitudeBand)> = Vec::new();
        for p in &self.spec.points {
            for &h in &p.headings {
                let k = (p.appearance().to_string(), h, p.altitude);
                if !keys.contains(&k) {
                    keys.push(k);
                }
            }
        }
        loop {
            let bases: Vec<Vec<f32>> =
                keys.iter().map(|(a, h, alt)| frame_base(a, *h, *alt, self.spec.frame_dim, self.spec.seed ^ self.frame_salt)).collect();
            let ok = (0..bases.len()).all(|i| (i + 1..bases.len()).all(|j| cosine(&bases[i], &bases[j]) < 0.5));
            if ok {
                self.frame_bases = keys.into_iter().zip(bases).collect();
                return;
            }
            self.frame_salt += 1;
        }
    }

    pub fn grid_size(&self) -> usize {
        self.spec.grid_size
    }

    pub fn num_bands(&self) -> usize {
        self.spec.time_bands.len()
    }

    pub fn point_index(&self, id: &str) -> Option<usize> {
        self.spec.points.iter().position(|p| p.id == id)
    }

    pub fn band_of(&self, seconds: f64) -> usize {
        self.spec.time_bands.iter().position(|b| b.contains(seconds)).expect("bands cover the day")
    }

    pub fn presence(&self, point: usize, zone: Zone, band: usize, class: usize) -> f64 {
        let (nb, nc) = (self.num_bands(), self.classes.len());
        self.prob[((point * NZ + zone.index()) * nb + band) * nc + class]
    }

    pub fn max_count(&self, point: usize, zone: Zone, class: usize) -> usize {
        self.max_count[(point * NZ + zone.index()) * self.classes.len() + class]
    }

    /// Zone of every cell for a point seen at `heading`, row-major.
    pub fn zone_map(&self, point: usize, heading: u16) -> Result<&[Zone]> {
        self.zone_maps
            .get(&(point, heading))
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::Data(alloc::format!("point {} has no heading {heading}", self.spec.points[point].id)))
    }

    pub fn zone_present(&self, point: usize, zone: Zone) -> bool {
        let h = self.spec.points[point].headings[0];
        self.zone_maps[&(point, h)].contains(&zone)
    }

    pub fn frame_base(&self, point: usize, heading: u16) -> Option<&[f32]> {
        let p = &self.spec.points[point];
        self.frame_bases.get(&(p.appearance().to_string(), heading, p.altitude)).map(|v| v.as_slice())
    }

    /// Frame activation for a point and heading: the base vector plus `N(0, sigma)` jitter.
    pub fn synth_frame_activation<R: Rng + ?Sized>(&self, point: usize, heading: u16, sigma: f64, rng: &mut R) -> Result<Vec<f32>> {
        let base = self
            .frame_base(point, heading)
            .ok_or_else(|| Error::Data(alloc::format!("point {} has no heading {heading}", self.spec.points[point].id)))?;
        if sigma == 0.0 {
            return Ok(base.to_vec());
        }
        let n = Normal::new(0.0, sigma).map_err(|_| Error::Config("bad jitter".into()))?;
        Ok(base.iter().map(|&b| b + n.sample(rng) as f32).collect())
    }

    /// Draws one normal sample for sample index `id`.
    pub fn sample_normal(&self, id: u64, seed: u64) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id);
        let spec = &self.spec;
        let pi = rng.random_range(0..spec.points.len());
        let p = &spec.points[pi];
        let heading = p.headings[rng.random_range(0..p.headings.len())];
        let t = rng.random_range(0.0..SECONDS_PER_DAY);
        let band = self.band_of(t);
        let zones = &self.zone_maps[&(pi, heading)];
        let (s, nc) = (spec.grid_size, self.classes.len());
        let mut detections = Vec::new();
        for zone in Zone::ALL {
            let cells: Vec<usize> = (0..s * s).filter(|&i| zones[i] == zone).collect();
            if cells.is_empty() {
                continue;
            }
            for class in 0..nc {
                let pr = self.presence(pi, zone, band, class);
                if pr < spec.normality_floor || pr == 0.0 {
                    continue;
                }
                if rng.random::<f64>() >= pr {
                    continue;
                }
                let k = rng.random_range(1..=self.max_count(pi, zone, class)).min(cells.len());
                for j in index::sample(&mut rng, cells.len(), k).into_vec() {
                    if rng.random::<f64>() < spec.detector.dropout {
                        continue;
                    }
                    detections.push(self.detection(cells[j], class, &mut rng));
                }
            }
        }
        let grid = build_encoder_input(&detections, s, nc).expect("generated detections are in range");
        let frame = self.synth_frame_activation(pi, heading, spec.frame_jitter, &mut rng).expect("known heading");
        Sample {
            id,
            monitoring_point_id: p.id.clone(),
            heading,
            grid,
            context: ContextRecord { time_of_day: t, latitude: p.latitude, longitude: p.longitude, frame_activation: frame },
            ground_truth: None,
        }
    }

    fn detection<R: Rng + ?Sized>(&self, cell: usize, class: usize, rng: &mut R) -> RawDetection {
        let s = self.spec.grid_size;
        let (objectness, conf) = self.spec.detector.sample(rng);
        let mut class_probabilities = vec![0.0; self.classes.len()];
        class_probabilities[class] = conf;
        RawDetection {
            row: cell / s,
            col: cell % s,
            objectness,
            class_probabilities,
            dx: rng.random_range(0.0..1.0),
            dy: rng.random_range(0.0..1.0),
            width: rng.random_range(0.3..1.0),
            height: rng.random_range(0.3..1.0),
        }
    }

    fn detection_value<R: Rng + ?Sized>(&self, rng: &mut R) -> f32 {
        let (o, c) = self.spec.detector.sample(rng);
        o * c
    }

    /// Samples `0..n`, each from its own stream of `seed`.
    pub fn generate_normal(&self, n: usize, seed: u64) -> Vec<Sample> {
        (0..n as u64).map(|i| self.sample_normal(i, seed)).collect()
    }

    fn sample_point(&self, s: &Sample) -> Result<usize> {
        self.point_index(&s.monitoring_point_id)
            .ok_or_else(|| Error::Data(alloc::format!("sample {} names unknown point {}", s.id, s.monitoring_point_id)))
    }

    /// Rule violations present in a sample's grid, as `(cell, rule index)`.
    pub fn rule_violations(&self, s: &Sample, rules: &RuleBook) -> Result<Vec<(CellRef, usize)>> {
        let zones = self.zone_map(self.sample_point(s)?, s.heading)?;
        let mut out = Vec::new();
        for (r, c, k, _) in s.grid.nonzero() {
            let zone = zones[r * s.grid.size() + c];
            for rule in rules.violated_by(zone, self.classes.name(k)) {
                out.push((CellRef::new(r, c, k), rule));
            }
        }
        Ok(out)
    }

    /// True when `(zone, class)` is normal at some other (point, band) where that zone exists.
    pub fn has_alibi(&self, point: usize, band: usize, zone: Zone, class: usize) -> bool {
        (0..self.spec.points.len()).any(|pj| {
            self.zone_present(pj, zone)
                && (0..self.num_bands()).any(|bj| {
                    (pj, bj) != (point, band) && self.presence(pj, zone, bj, class) >= self.spec.normality_floor.max(f64::MIN_POSITIVE)
                })
        })
    }

    /// Adds one rule-violating object to each of `n` distinct samples.
    pub fn inject_point_anomalies(&self, dataset: &[Sample], rules: &RuleBook, n: usize, seed: u64) -> Result<Injection> {
        rules.validate(&self.classes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Injection { samples: Vec::new(), plans: Vec::new(), warnings: Vec::new() };
        if n == 0 {
            return Ok(out);
        }
        if n > dataset.len() {
            return Err(Error::Config(alloc::format!("{n} point anomalies requested from {} samples", dataset.len())));
        }
        let s = self.spec.grid_size;
        for i in index::sample(&mut rng, dataset.len(), n).into_vec() {
            let mut sample = dataset[i].clone();
            let zones = self.zone_map(self.sample_point(&sample)?, sample.heading)?.to_vec();
            let usable: Vec<&Rule> = rules.rules.iter().filter(|r| zones.contains(&r.zone)).collect();
            if usable.is_empty() {
                out.warnings.push(alloc::format!("sample {}: no rule-violating placement possible", sample.id));
                continue;
            }
            let rule = usable[rng.random_range(0..usable.len())];
            let class = self.classes.index(&rule.classes[rng.random_range(0..rule.classes.len())]).expect("validated");
            let cells: Vec<usize> =
                (0..s * s).filter(|&c| zones[c] == rule.zone && sample.grid.get(c / s, c % s, class) == 0.0).collect();
            if cells.is_empty() {
                out.warnings.push(alloc::format!("sample {}: zone {} is full", sample.id, rule.zone.name()));
                continue;
            }
            let cell = cells[rng.random_range(0..cells.len())];
            let v = self.detection_value(&mut rng);
            let at = CellRef::new(cell / s, cell % s, class);
            sample.grid.set(cell / s, cell % s, class, v)?;
            sample.ground_truth = Some(vec![at]);
            out.plans.push(AnomalyInjectionPlan { kind: AnomalyKind::Point, sample_id: sample.id, cells: vec![(at, v)] });
            out.samples.push(sample);
        }
        Ok(out)
    }

    /// Adds one rule-legal object that is rare for the sample's (point, band) but normal elsewhere.
    pub fn inject_contextual_anomalies(
        &self,
        dataset: &[Sample],
        rules: &RuleBook,
        rarity_threshold: f64,
        n: usize,
        seed: u64,
    ) -> Result<Injection> {
        rules.validate(&self.classes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Injection { samples: Vec::new(), plans: Vec::new(), warnings: Vec::new() };
        if n == 0 {
            return Ok(out);
        }
        let s = self.spec.grid_size;
        let nc = self.classes.len();
        for i in index::sample(&mut rng, dataset.len(), dataset.len()).into_vec() {
            if out.samples.len() == n {
                break;
            }
            let mut sample = dataset[i].clone();
            let pi = self.sample_point(&sample)?;
            let band = self.band_of(sample.context.time_of_day);
            let zones = self.zone_map(pi, sample.heading)?.to_vec();
            let mut cands = Vec::new();
            for zone in Zone::ALL {
                if !zones.contains(&zone) {
                    continue;
                }
                for class in 0..nc {
                    if rules.violated_by(zone, self.classes.name(class)).next().is_some() {
                        continue;
                    }
                    if self.presence(pi, zone, band, class) >= rarity_threshold {
                        continue;
                    }
                    if self.has_alibi(pi, band, zone, class) {
                        cands.push((zone, class));
                    }
                }
            }
            if cands.is_empty() {
                continue;
            }
            let (zone, class) = cands[rng.random_range(0..cands.len())];
            let cells: Vec<usize> = (0..s * s).filter(|&c| zones[c] == zone && sample.grid.get(c / s, c % s, class) == 0.0).collect();
            if cells.is_empty() {
                continue;
            }
            let cell = cells[rng.random_range(0..cells.len())];
            let v = self.detection_value(&mut rng);
            let at = CellRef::new(cell / s, cell % s, class);
            sample.grid.set(cell / s, cell % s, class, v)?;
            sample.ground_truth = Some(vec![at]);
            out.plans.push(AnomalyInjectionPlan { kind: AnomalyKind::Contextual, sample_id: sample.id, cells: vec![(at, v)] });
            out.samples.push(sample);
        }
        if out.samples.len() < n {
            out.warnings.push(alloc::format!("only {} of {n} contextual anomalies could be placed", out.samples.len()));
        }
        Ok(out)
    }
}

fn check_bands(bands: &[TimeBand]) -> Result<()> {
    // Every minute of the day must fall in exactly one band.
    for m in 0..1440 {
        let t = m as f64 * 60.0 + 30.0;
        let hits = bands.iter().filter(|b| b.contains(t)).count();
        if hits != 1 {
            return Err(Error::Config(alloc::format!("time bands cover minute {m} {hits} times")));
        }
    }
    Ok(())
}

fn parse_layout(rows: &[String], s: usize) -> Result<Vec<Zone>> {
    if rows.len() != s {
        return Err(Error::Config(alloc::format!("{} rows for a {s}x{s} grid", rows.len())));
    }
    let mut out = Vec::with_capacity(s * s);
    for row in rows {
        let zones: Option<Vec<Zone>> = row.chars().map(Zone::from_letter).collect();
        let zones = zones.ok_or_else(|| Error::Config(alloc::format!("unknown zone letter in '{row}'")))?;
        if zones.len() != s {
            return Err(Error::Config(alloc::format!("row '{row}' is not {s} cells wide")));
        }
        out.extend(zones);
    }
    Ok(out)
}

/// Rotates a square row-major map counter-clockwise `k` quarter turns.
pub fn rotate<T: Copy>(m: &[T], s: usize, k: usize) -> Vec<T> {
    let mut cur = m.to_vec();
    for _ in 0..k % 4 {
        let mut next = cur.clone();
        for i in 0..s {
            for j in 0..s {
                next[i * s + j] = cur[j * s + (s - 1 - i)];
            }
        }
        cur = next;
    }
    cur
}

fn fnv1a(bytes: &[u8], mut h: u64) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// Deterministic Gaussian base vector for one (appearance, heading, altitude) triple,
/// scaled so each component has standard deviation 0.5.
pub fn frame_base(appearance: &str, heading: u16, altitude: AltitudeBand, dim: usize, seed: u64) -> Vec<f32> {
    let mut h = fnv1a(appearance.as_bytes(), 0xcbf2_9ce4_8422_2325);
    h = fnv1a(&heading.to_le_bytes(), h);
    h = fnv1a(&[altitude as u8], h);
    let mut rng = ChaCha8Rng::seed_from_u64(h ^ seed);
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = 0.5 * Float::sqrt(dim as f64) / norm;
    v.iter().map(|x| (x * scale) as f32).collect()
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        ab += x as f64 * y as f64;
        aa += x as f64 * x as f64;
        bb += y as f64 * y as f64;
    }
    ab / Float::sqrt(aa * bb)
}

/// Train/validation/test partition, stratified by monitoring point.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

pub fn split_dataset(dataset: Vec<Sample>, fractions: [f64; 3], seed: u64) -> Result<Split> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(alloc::format!("split fractions {fractions:?} must be in [0, 1] and sum to 1")));
    }
    let n = dataset.len();
    let quota = largest_remainder(n, &fractions);
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in dataset.iter().enumerate() {
        groups.entry(s.monitoring_point_id.clone()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Floor allocation per group, then the leftover units: largest demand first, each to the
    // split with most remaining global quota, at most one extra per split and group when possible.
    let sizes: Vec<usize> = groups.values().map(|v| v.len()).collect();
    let mut cap = quota;
    let mut alloc_: Vec<[usize; 3]> = Vec::with_capacity(sizes.len());
    let mut rem: Vec<[f64; 3]> = Vec::with_capacity(sizes.len());
    for &ng in &sizes {
        let mut a = [0usize; 3];
        let mut r = [0f64; 3];
        for s in 0..3 {
            let exact = fractions[s] * ng as f64;
            a[s] = Float::floor(exact + 1e-9) as usize;
            r[s] = exact - a[s] as f64;
            cap[s] -= a[s];
        }
        alloc_.push(a);
        rem.push(r);
    }
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by_key(|&g| core::cmp::Reverse(sizes[g] - alloc_[g].iter().sum::<usize>()));
    for g in order {
        let mut extra = [false; 3];
        for _ in 0..sizes[g] - alloc_[g].iter().sum::<usize>() {
            let best = |fresh: bool| {
                (0..3)
                    .filter(|&s| cap[s] > 0 && (!fresh || !extra[s]))
                    .max_by(|&a, &b| cap[a].cmp(&cap[b]).then(rem[g][a].total_cmp(&rem[g][b])))
            };
            let s = best(true).or_else(|| best(false)).expect("quota covers every sample");
            alloc_[g][s] += 1;
            extra[s] = true;
            cap[s] -= 1;
        }
    }
    let mut slots: Vec<Option<Sample>> = dataset.into_iter().map(Some).collect();
    let mut out = Split { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    for (g, idx) in groups.values().enumerate() {
        let order = index::sample(&mut rng, idx.len(), idx.len()).into_vec();
        let mut it = order.into_iter().map(|j| slots[idx[j]].take().expect("each sample used once"));
        out.train.extend(it.by_ref().take(alloc_[g][0]));
        out.val.extend(it.by_ref().take(alloc_[g][1]));
        out.test.extend(it.by_ref().take(alloc_[g][2]));
    }
    for part in [&mut out.train, &mut out.val, &mut out.test] {
        part.sort_by_key(|s| s.id);
    }
    Ok(out)
}

fn largest_remainder(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut q = [0usize; 3];
    for s in 0..3 {
        q[s] = Float::floor(exact[s] + 1e-9) as usize;
    }
    let mut left = n - q.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| (exact[b] - q[b] as f64).total_cmp(&(exact[a] - q[a] as f64)).then(a.cmp(&b)));
    for &s in order.iter().cycle() {
        if left == 0 {
            break;
        }
        q[s] += 1;
        left -= 1;
    }
    q
}
