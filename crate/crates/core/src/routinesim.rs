//! Seeded generator of household routine streams.
//!
//! Each simulated day starts from the household's initial placement. Every
//! activity fires independently with its daily probability at its nominal
//! time plus Gaussian jitter, and its moves are applied in firing order.
//! The environment is snapshotted at a fixed interval.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphdomain::{
    Entity, EntityCatalog, EntityId, EntityKind, GraphError, GraphSnapshot, IndexedGraph,
    Timestamp, TransitionPair, MINUTES_PER_DAY,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("days must be at least 1")]
    NoDays,
    #[error("sample interval {0} must be positive and divide 1440")]
    BadInterval(u64),
    #[error("activity {activity}: {reason}")]
    BadActivity { activity: String, reason: String },
    #[error("initial placement: {0}")]
    BadPlacement(String),
    #[error("activities cannot be replayed in nominal order: {0}")]
    Unreachable(String),
    #[error("split of {train}+{test} days exceeds the {available} available")]
    InsufficientDays {
        train: u64,
        test: u64,
        available: u64,
    },
    #[error("horizon {horizon} is not a positive multiple of the sample interval {interval}")]
    BadHorizon { horizon: u64, interval: u64 },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Move {
    pub object: EntityId,
    pub from: EntityId,
    pub to: EntityId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivitySpec {
    pub name: String,
    /// Nominal time of day in minutes.
    pub minute: u32,
    /// Standard deviation of the firing time, in minutes.
    pub jitter: f64,
    /// Probability that the activity happens on a given day.
    pub probability: f64,
    pub moves: Vec<Move>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HouseholdSpec {
    pub name: String,
    pub catalog: Arc<EntityCatalog>,
    pub activities: Vec<ActivitySpec>,
    pub initial: BTreeMap<EntityId, EntityId>,
}

impl HouseholdSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let cat = &self.catalog;
        for o in cat.objects() {
            match self.initial.get(&o.id) {
                Some(&l) if cat.kind(l) == Some(EntityKind::Location) => {}
                Some(l) => {
                    return Err(SimError::BadPlacement(format!(
                        "{} placed in non-location {l}",
                        o.name
                    )))
                }
                None => return Err(SimError::BadPlacement(format!("{} not placed", o.name))),
            }
        }
        if self.initial.len() != cat.objects().len() {
            return Err(SimError::BadPlacement(
                "placement of unknown objects".into(),
            ));
        }
        for a in &self.activities {
            let bad = |reason: &str| SimError::BadActivity {
                activity: a.name.clone(),
                reason: reason.into(),
            };
            if !(0.0..=1.0).contains(&a.probability) {
                return Err(bad("probability outside [0, 1]"));
            }
            if !(a.jitter >= 0.0 && a.jitter.is_finite()) {
                return Err(bad("jitter must be a finite non-negative value"));
            }
            if u64::from(a.minute) >= MINUTES_PER_DAY {
                return Err(bad("nominal minute outside the day"));
            }
            for m in &a.moves {
                if cat.kind(m.object) != Some(EntityKind::Object)
                    || cat.kind(m.from) != Some(EntityKind::Location)
                    || cat.kind(m.to) != Some(EntityKind::Location)
                {
                    return Err(bad("move references unknown catalog entries"));
                }
            }
        }
        // replaying every activity at its nominal time must never skip a move
        let mut placement = self.initial.clone();
        let mut order: Vec<usize> = (0..self.activities.len()).collect();
        order.sort_by_key(|&i| (self.activities[i].minute, i));
        for i in order {
            let a = &self.activities[i];
            for m in &a.moves {
                if placement[&m.object] != m.from {
                    return Err(SimError::Unreachable(format!(
                        "{} expects {} in {}",
                        a.name, m.object, m.from
                    )));
                }
                placement.insert(m.object, m.to);
            }
        }
        Ok(())
    }

    /// Most likely destination of each moved object, weighting every move by
    /// its activity probability (ties go to the lowest location id).
    pub fn dominant_destinations(&self) -> BTreeMap<EntityId, EntityId> {
        let mut mass: BTreeMap<EntityId, BTreeMap<EntityId, f64>> = BTreeMap::new();
        for a in &self.activities {
            for m in &a.moves {
                *mass.entry(m.object).or_default().entry(m.to).or_default() += a.probability;
            }
        }
        mass.into_iter()
            .filter_map(|(o, dests)| {
                let mut best: Option<(EntityId, f64)> = None;
                for (l, w) in dests {
                    if best.is_none_or(|(_, bw)| w > bw) {
                        best = Some((l, w));
                    }
                }
                best.map(|(l, _)| (o, l))
            })
            .collect()
    }
}

/// Fraction of shared objects whose dominant destinations differ.
pub fn destination_drift(a: &HouseholdSpec, b: &HouseholdSpec) -> f64 {
    let (da, db) = (a.dominant_destinations(), b.dominant_destinations());
    let objects: BTreeSet<_> = a
        .catalog
        .objects()
        .iter()
        .map(|o| o.id)
        .filter(|id| b.catalog.object_index(*id).is_some())
        .collect();
    if objects.is_empty() {
        return 0.0;
    }
    let differ = objects.iter().filter(|o| da.get(o) != db.get(o)).count();
    differ as f64 / objects.len() as f64
}

/// Snapshots of one household sampled at a fixed interval over whole days.
///
/// The first `train_days` days form the training partition, the rest the
/// test partition.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskDataset {
    pub task: usize,
    pub name: String,
    pub catalog: Arc<EntityCatalog>,
    pub sample_interval: u64,
    pub first_day: u64,
    pub days: u64,
    pub train_days: u64,
    pub snapshots: Vec<GraphSnapshot>,
    /// Moves skipped because the object was not at the expected location.
    pub skipped_moves: u64,
}

impl TaskDataset {
    pub fn snapshots_per_day(&self) -> usize {
        (MINUTES_PER_DAY / self.sample_interval) as usize
    }

    pub fn day(&self, offset: u64) -> &[GraphSnapshot] {
        let n = self.snapshots_per_day();
        let start = offset as usize * n;
        &self.snapshots[start..start + n]
    }

    /// Indices into `snapshots` where each day begins.
    pub fn day_boundaries(&self) -> Vec<usize> {
        (0..self.days as usize)
            .map(|d| d * self.snapshots_per_day())
            .collect()
    }

    pub fn is_train_day(&self, day: u64) -> bool {
        day < self.first_day + self.train_days
    }

    pub fn with_task(mut self, task: usize) -> Self {
        self.task = task;
        for s in &mut self.snapshots {
            s.task = task;
        }
        self
    }

    /// Training and test partitions as separate datasets.
    pub fn partition(&self) -> (TaskDataset, TaskDataset) {
        let n = self.snapshots_per_day() * self.train_days as usize;
        let train = TaskDataset {
            days: self.train_days,
            snapshots: self.snapshots[..n].to_vec(),
            ..self.clone()
        };
        let test = TaskDataset {
            first_day: self.first_day + self.train_days,
            days: self.days - self.train_days,
            train_days: 0,
            snapshots: self.snapshots[n..].to_vec(),
            ..self.clone()
        };
        (train, test)
    }

    /// Every `(t, t + horizon)` pair that lies within a single day.
    pub fn pairs(&self, horizon: u64) -> Result<Vec<TransitionPair>, SimError> {
        if horizon == 0 || !horizon.is_multiple_of(self.sample_interval) {
            return Err(SimError::BadHorizon {
                horizon,
                interval: self.sample_interval,
            });
        }
        let step = (horizon / self.sample_interval) as usize;
        let mut out = Vec::new();
        for d in 0..self.days {
            let day: Vec<IndexedGraph> = self
                .day(d)
                .iter()
                .map(GraphSnapshot::to_indexed)
                .collect::<Result<_, _>>()?;
            for w in 0..day.len().saturating_sub(step) {
                out.push(TransitionPair {
                    input: day[w].clone(),
                    target: day[w + step].clone(),
                });
            }
        }
        Ok(out)
    }
}

pub fn generate_dataset(
    spec: &HouseholdSpec,
    days: u64,
    sample_interval: u64,
    seed: u64,
) -> Result<TaskDataset, SimError> {
    if days == 0 {
        return Err(SimError::NoDays);
    }
    if sample_interval == 0 || !MINUTES_PER_DAY.is_multiple_of(sample_interval) {
        return Err(SimError::BadInterval(sample_interval));
    }
    spec.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_day = MINUTES_PER_DAY / sample_interval;
    let mut snapshots = Vec::with_capacity((days * per_day) as usize);
    let mut skipped = 0u64;

    for day in 0..days {
        let mut fired: Vec<(u64, usize)> = Vec::new();
        for (i, a) in spec.activities.iter().enumerate() {
            let happens = rng.gen_bool(a.probability);
            let z: f64 = rng.sample(StandardNormal);
            if happens {
                let minute = (f64::from(a.minute) + a.jitter * z)
                    .round()
                    .clamp(0.0, (MINUTES_PER_DAY - 1) as f64);
                fired.push((minute as u64, i));
            }
        }
        fired.sort_unstable();

        let mut placement = spec.initial.clone();
        let mut next = 0;
        for s in 0..per_day {
            let minute = s * sample_interval;
            while next < fired.len() && fired[next].0 <= minute {
                for m in &spec.activities[fired[next].1].moves {
                    match placement.get_mut(&m.object) {
                        Some(p) if *p == m.from => *p = m.to,
                        _ => skipped += 1,
                    }
                }
                next += 1;
            }
            snapshots.push(GraphSnapshot::new(
                spec.catalog.clone(),
                0,
                Timestamp::from_day_minute(day, minute),
                placement.clone(),
            ));
        }
    }

    Ok(TaskDataset {
        task: 0,
        name: spec.name.clone(),
        catalog: spec.catalog.clone(),
        sample_interval,
        first_day: 0,
        days,
        train_days: days,
        snapshots,
        skipped_moves: skipped,
    })
}

/// Chronological split into `train_days` and the following `test_days`.
pub fn split_train_test(
    ds: &TaskDataset,
    train_days: u64,
    test_days: u64,
) -> Result<(TaskDataset, TaskDataset), SimError> {
    if train_days + test_days > ds.days {
        return Err(SimError::InsufficientDays {
            train: train_days,
            test: test_days,
            available: ds.days,
        });
    }
    let n = ds.snapshots_per_day();
    let cut = train_days as usize * n;
    let end = (train_days + test_days) as usize * n;
    let train = TaskDataset {
        days: train_days,
        train_days,
        snapshots: ds.snapshots[..cut].to_vec(),
        ..ds.clone()
    };
    let test = TaskDataset {
        first_day: ds.first_day + train_days,
        days: test_days,
        train_days: 0,
        snapshots: ds.snapshots[cut..end].to_vec(),
        ..ds.clone()
    };
    Ok((train, test))
}

pub const SUITE_OBJECTS: [&str; 10] = [
    "mug", "plate", "bowl", "spoon", "kettle", "book", "laptop", "keys", "towel", "remote",
];
pub const SUITE_LOCATIONS: [&str; 7] =
    ["house", "cabinet", "table", "sink", "shelf", "desk", "sofa"];

/// Minimum fraction of objects whose dominant destination differs between
/// any two households of the builtin suite.
pub const SUITE_MIN_DRIFT: f64 = 0.3;

/// Shared catalog of the builtin suite.
pub fn suite_catalog() -> Arc<EntityCatalog> {
    Arc::new(
        EntityCatalog::from_names(&SUITE_OBJECTS, &SUITE_LOCATIONS)
            .expect("builtin catalog is well formed"),
    )
}

/// `n` households over a shared object vocabulary with distinct home
/// placements and schedules.
///
/// Households are variations of one base routine: each object's home and
/// uses are redrawn with probability [`SUITE_CHANGE_PROB`], otherwise kept.
/// Nominal times sit half way between 10-minute sampling points so that a
/// small jitter rarely moves an event into a neighbouring window.
pub fn builtin_household_suite(n: usize, seed: u64) -> Vec<HouseholdSpec> {
    let catalog = suite_catalog();
    let places: Vec<EntityId> = catalog.locations()[1..].iter().map(|e| e.id).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<ObjectRoutine> = catalog
        .objects()
        .iter()
        .map(|o| ObjectRoutine::random(o, &places, &mut rng))
        .collect();
    let mut suite: Vec<HouseholdSpec> = Vec::with_capacity(n);
    while suite.len() < n {
        let routines: Vec<ObjectRoutine> = base
            .iter()
            .zip(catalog.objects())
            .map(|(r, o)| {
                if rng.gen_bool(SUITE_CHANGE_PROB) {
                    ObjectRoutine::random(o, &places, &mut rng)
                } else {
                    r.clone()
                }
            })
            .collect();
        let candidate = household_from_routines(&catalog, suite.len(), &routines);
        if suite
            .iter()
            .all(|h| destination_drift(h, &candidate) >= SUITE_MIN_DRIFT)
        {
            suite.push(candidate);
        }
    }
    suite
}

/// Waking hours, in minutes, during which suite objects are used.
const ACTIVE_START: u64 = 6 * 60;
const ACTIVE_END: u64 = 21 * 60;

/// Datasets of the built-in suite: household `i` is simulated for `days`
/// days with seed `100 * seed + i`, becomes task `i`, and keeps its first
/// `train_days` days for training.
pub fn simulate_suite(
    households: usize,
    days: u64,
    train_days: u64,
    sample_interval: u64,
    seed: u64,
) -> Result<Vec<TaskDataset>, SimError> {
    if train_days >= days {
        return Err(SimError::InsufficientDays {
            train: train_days,
            test: 1,
            available: days,
        });
    }
    builtin_household_suite(households, seed)
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let ds = generate_dataset(
                h,
                days,
                sample_interval,
                seed.wrapping_mul(100).wrapping_add(i as u64),
            )?;
            Ok(TaskDataset {
                train_days,
                ..ds.with_task(i)
            })
        })
        .collect()
}

/// Share of objects whose routine differs from the base in each household.
pub const SUITE_CHANGE_PROB: f64 = 0.5;

/// Home and daily uses of one object.
#[derive(Clone, Debug)]
struct ObjectRoutine {
    object: EntityId,
    name: String,
    home: EntityId,
    /// `(start, end, destination, probability, jitter)` per use.
    uses: Vec<(u64, u64, EntityId, f64, f64)>,
}

impl ObjectRoutine {
    fn random(obj: &Entity, places: &[EntityId], rng: &mut ChaCha8Rng) -> Self {
        let home = *places.choose(rng).expect("locations");
        let count = match rng.gen_range(0..10) {
            0 => 0,
            1..=6 => 1,
            _ => 2,
        };
        let mut uses = Vec::new();
        // uses of one object never overlap
        let mut earliest = ACTIVE_START;
        for u in 0..count {
            let latest = ACTIVE_END - 60 * (count - u - 1) * 3;
            if earliest + 30 >= latest {
                break;
            }
            let start = rng.gen_range(earliest / 10..(latest - 30) / 10) * 10 + 5;
            let duration = rng.gen_range(3..=12) * 10;
            let end = (start + duration).min(23 * 60 + 5);
            let dest = loop {
                let d = *places.choose(rng).expect("locations");
                if d != home {
                    break d;
                }
            };
            let probability = rng.gen_range(0.75..=1.0);
            let jitter = rng.gen_range(1.0..2.5);
            uses.push((start, end, dest, probability, jitter));
            earliest = end + 30;
        }
        Self {
            object: obj.id,
            name: obj.name.clone(),
            home,
            uses,
        }
    }
}

fn household_from_routines(
    catalog: &Arc<EntityCatalog>,
    idx: usize,
    routines: &[ObjectRoutine],
) -> HouseholdSpec {
    let mut initial = BTreeMap::new();
    let mut activities = Vec::new();
    for r in routines {
        initial.insert(r.object, r.home);
        for (u, &(start, end, dest, probability, jitter)) in r.uses.iter().enumerate() {
            activities.push(ActivitySpec {
                name: format!("use {} #{u}", r.name),
                minute: start as u32,
                jitter,
                probability,
                moves: vec![Move {
                    object: r.object,
                    from: r.home,
                    to: dest,
                }],
            });
            activities.push(ActivitySpec {
                name: format!("put back {} #{u}", r.name),
                minute: end as u32,
                jitter,
                probability: 1.0,
                moves: vec![Move {
                    object: r.object,
                    from: dest,
                    to: r.home,
                }],
            });
        }
    }
    HouseholdSpec {
        name: format!("household-{idx}"),
        catalog: catalog.clone(),
        activities,
        initial,
    }
}
