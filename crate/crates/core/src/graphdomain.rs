//! Environment graphs: objects sit in locations through a single "is-in" edge,
//! forming an in-tree under one root location.
//!
//! A [`GraphSnapshot`] stores only the parent map. Consecutive snapshots are
//! related by a [`GraphDelta`], and net parent changes over a horizon are
//! reported as [`RelocationEvent`]s.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::TAU;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MINUTES_PER_DAY: u64 = 1440;

/// Day-of-day harmonics used by [`time_encoding`].
pub const DAY_HARMONICS: [u32; 7] = [1, 2, 4, 8, 16, 32, 64];

/// Length of the vector returned by [`time_encoding`].
pub const TIME_ENCODING_DIM: usize = 2 * DAY_HARMONICS.len() + 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub name: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntityKind {
    Object,
    Location,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("duplicate entity id {0}")]
    DuplicateId(EntityId),
    #[error("root {0} is not one of the locations")]
    BadRoot(EntityId),
    #[error("snapshots belong to different catalogs")]
    CatalogMismatch,
    #[error("snapshots belong to different tasks ({0} vs {1})")]
    TaskMismatch(usize, usize),
    #[error("later snapshot at t={later} precedes earlier at t={earlier}")]
    TimeOrder { later: u64, earlier: u64 },
    #[error("stale delta: {object} expected in {expected} but is in {actual:?}")]
    StaleDelta {
        object: EntityId,
        expected: EntityId,
        actual: Option<EntityId>,
    },
    #[error("unknown entity {0}")]
    UnknownEntity(EntityId),
    #[error("invalid snapshot: {0:?}")]
    Invalid(Vec<Violation>),
}

/// Objects and locations of one environment. Exactly one location is the root.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CatalogRepr", into = "CatalogRepr")]
pub struct EntityCatalog {
    objects: Vec<Entity>,
    locations: Vec<Entity>,
    root: EntityId,
    lookup: HashMap<EntityId, (EntityKind, usize)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogRepr {
    objects: Vec<Entity>,
    locations: Vec<Entity>,
    root: EntityId,
}

impl TryFrom<CatalogRepr> for EntityCatalog {
    type Error = GraphError;

    fn try_from(r: CatalogRepr) -> Result<Self, GraphError> {
        EntityCatalog::new(r.objects, r.locations, r.root)
    }
}

impl From<EntityCatalog> for CatalogRepr {
    fn from(c: EntityCatalog) -> Self {
        CatalogRepr {
            objects: c.objects,
            locations: c.locations,
            root: c.root,
        }
    }
}

impl EntityCatalog {
    pub fn new(
        objects: Vec<Entity>,
        locations: Vec<Entity>,
        root: EntityId,
    ) -> Result<Self, GraphError> {
        let mut lookup = HashMap::new();
        for (kind, list) in [
            (EntityKind::Object, &objects),
            (EntityKind::Location, &locations),
        ] {
            for (i, e) in list.iter().enumerate() {
                if lookup.insert(e.id, (kind, i)).is_some() {
                    return Err(GraphError::DuplicateId(e.id));
                }
            }
        }
        if lookup.get(&root).map(|k| k.0) != Some(EntityKind::Location) {
            return Err(GraphError::BadRoot(root));
        }
        Ok(Self {
            objects,
            locations,
            root,
            lookup,
        })
    }

    /// Builds a catalog from names, assigning ids `0..` to objects and then
    /// locations. The first location becomes the root.
    pub fn from_names(objects: &[&str], locations: &[&str]) -> Result<Self, GraphError> {
        let mk = |offset: usize, names: &[&str]| {
            names
                .iter()
                .enumerate()
                .map(|(i, n)| Entity {
                    id: EntityId((offset + i) as u32),
                    name: n.to_string(),
                })
                .collect::<Vec<_>>()
        };
        let objs = mk(0, objects);
        let locs = mk(objects.len(), locations);
        let root = locs.first().map(|e| e.id).unwrap_or(EntityId(u32::MAX));
        Self::new(objs, locs, root)
    }

    pub fn objects(&self) -> &[Entity] {
        &self.objects
    }

    pub fn locations(&self) -> &[Entity] {
        &self.locations
    }

    pub fn root(&self) -> EntityId {
        self.root
    }

    pub fn kind(&self, id: EntityId) -> Option<EntityKind> {
        self.lookup.get(&id).map(|k| k.0)
    }

    pub fn object_index(&self, id: EntityId) -> Option<usize> {
        match self.lookup.get(&id) {
            Some(&(EntityKind::Object, i)) => Some(i),
            _ => None,
        }
    }

    pub fn location_index(&self, id: EntityId) -> Option<usize> {
        match self.lookup.get(&id) {
            Some(&(EntityKind::Location, i)) => Some(i),
            _ => None,
        }
    }

    pub fn object_by_name(&self, name: &str) -> Option<EntityId> {
        self.objects.iter().find(|e| e.name == name).map(|e| e.id)
    }

    pub fn location_by_name(&self, name: &str) -> Option<EntityId> {
        self.locations.iter().find(|e| e.name == name).map(|e| e.id)
    }

    pub fn name(&self, id: EntityId) -> Option<&str> {
        let &(kind, i) = self.lookup.get(&id)?;
        Some(match kind {
            EntityKind::Object => &self.objects[i].name,
            EntityKind::Location => &self.locations[i].name,
        })
    }
}

/// Minutes since the start of the stream. Day 0 is a Monday.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub fn from_day_minute(day: u64, minute: u64) -> Self {
        Self(day * MINUTES_PER_DAY + minute)
    }

    pub fn day(self) -> u64 {
        self.0 / MINUTES_PER_DAY
    }

    pub fn minute_of_day(self) -> u64 {
        self.0 % MINUTES_PER_DAY
    }

    pub fn day_of_week(self) -> u64 {
        self.day() % 7
    }

    pub fn plus(self, minutes: u64) -> Self {
        Self(self.0 + minutes)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.minute_of_day();
        write!(f, "d{} {:02}:{:02}", self.day(), m / 60, m % 60)
    }
}

/// Periodic encoding of a timestamp.
///
/// Sine/cosine pairs of the time of day at each of [`DAY_HARMONICS`], followed
/// by the sine/cosine of the day of the week.
pub fn time_encoding(t: Timestamp) -> Vec<f64> {
    let day_phase = TAU * t.minute_of_day() as f64 / MINUTES_PER_DAY as f64;
    let week_phase = TAU * t.day_of_week() as f64 / 7.0;
    let mut out = Vec::with_capacity(TIME_ENCODING_DIM);
    for &h in &DAY_HARMONICS {
        let a = day_phase * h as f64;
        out.push(a.sin());
        out.push(a.cos());
    }
    out.push(week_phase.sin());
    out.push(week_phase.cos());
    out
}

/// State of one environment at one instant.
#[derive(Clone, Debug)]
pub struct GraphSnapshot {
    pub task: usize,
    pub t: Timestamp,
    /// "is-in" edges: object -> location.
    pub parents: BTreeMap<EntityId, EntityId>,
    pub catalog: Arc<EntityCatalog>,
}

impl PartialEq for GraphSnapshot {
    fn eq(&self, other: &Self) -> bool {
        self.task == other.task
            && self.t == other.t
            && self.parents == other.parents
            && same_catalog(&self.catalog, &other.catalog)
    }
}

fn same_catalog(a: &Arc<EntityCatalog>, b: &Arc<EntityCatalog>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

impl GraphSnapshot {
    pub fn new(
        catalog: Arc<EntityCatalog>,
        task: usize,
        t: Timestamp,
        parents: BTreeMap<EntityId, EntityId>,
    ) -> Self {
        Self {
            task,
            t,
            parents,
            catalog,
        }
    }

    pub fn time_encoding(&self) -> Vec<f64> {
        time_encoding(self.t)
    }

    pub fn parent(&self, object: EntityId) -> Option<EntityId> {
        self.parents.get(&object).copied()
    }

    /// Location index of every object in catalog order.
    pub fn to_indexed(&self) -> Result<IndexedGraph, GraphError> {
        if let Err(v) = validate_snapshot(self) {
            return Err(GraphError::Invalid(v));
        }
        let parent = self
            .catalog
            .objects()
            .iter()
            .map(|o| {
                let loc = self.parents[&o.id];
                self.catalog
                    .location_index(loc)
                    .ok_or(GraphError::UnknownEntity(loc))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(IndexedGraph { t: self.t, parent })
    }

    /// Inverse of [`GraphSnapshot::to_indexed`].
    pub fn from_indexed(
        catalog: Arc<EntityCatalog>,
        task: usize,
        g: &IndexedGraph,
    ) -> Result<Self, GraphError> {
        if g.parent.len() != catalog.objects().len() {
            return Err(GraphError::CatalogMismatch);
        }
        let mut parents = BTreeMap::new();
        for (o, &l) in catalog.objects().iter().zip(&g.parent) {
            let loc = catalog
                .locations()
                .get(l)
                .ok_or(GraphError::CatalogMismatch)?;
            parents.insert(o.id, loc.id);
        }
        Ok(Self::new(catalog, task, g.t, parents))
    }
}

/// Dense form of a snapshot: `parent[i]` is the location index of object `i`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IndexedGraph {
    pub t: Timestamp,
    pub parent: Vec<usize>,
}

/// One training/evaluation example: the graph at `t` and at `t + delta`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TransitionPair {
    pub input: IndexedGraph,
    pub target: IndexedGraph,
}

impl TransitionPair {
    pub fn horizon(&self) -> u64 {
        self.target.t.0 - self.input.t.0
    }

    /// Object indices whose parent differs between input and target.
    pub fn moved_objects(&self) -> Vec<usize> {
        self.input
            .parent
            .iter()
            .zip(&self.target.parent)
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParentChange {
    pub object: EntityId,
    pub from: EntityId,
    pub to: EntityId,
}

/// Parent changes turning the snapshot at `from_t` into the one at `to_t`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDelta {
    pub from_t: Timestamp,
    pub to_t: Timestamp,
    pub changes: Vec<ParentChange>,
}

impl GraphDelta {
    pub fn is_empty(&self) -> bool {
        self.changes.is_empty()
    }

    /// Collapses a chain of consecutive deltas into the net change per object.
    pub fn compose(deltas: &[GraphDelta]) -> Option<GraphDelta> {
        let first = deltas.first()?;
        let last = deltas.last()?;
        let mut net: BTreeMap<EntityId, (EntityId, EntityId)> = BTreeMap::new();
        for d in deltas {
            for c in &d.changes {
                net.entry(c.object)
                    .and_modify(|e| e.1 = c.to)
                    .or_insert((c.from, c.to));
            }
        }
        let changes = net
            .into_iter()
            .filter(|(_, (from, to))| from != to)
            .map(|(object, (from, to))| ParentChange { object, from, to })
            .collect();
        Some(GraphDelta {
            from_t: first.from_t,
            to_t: last.to_t,
            changes,
        })
    }
}

/// An object moving between two locations within `[window.0, window.1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelocationEvent {
    pub object: EntityId,
    pub from: EntityId,
    pub to: EntityId,
    pub window: (Timestamp, Timestamp),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    MissingParent(EntityId),
    ParentNotLocation { object: EntityId, parent: EntityId },
    UnknownId(EntityId),
    NestedLocation(EntityId),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingParent(o) => write!(f, "missing parent for {o}"),
            Violation::ParentNotLocation { object, parent } => {
                write!(f, "parent not a location: {object} is in {parent}")
            }
            Violation::UnknownId(id) => write!(f, "unknown id {id}"),
            Violation::NestedLocation(l) => write!(f, "location {l} has a parent"),
        }
    }
}

/// Checks the in-tree invariant. Locations form a flat set under the root,
/// so only objects may appear as keys of the parent map.
pub fn validate_snapshot(g: &GraphSnapshot) -> Result<(), Vec<Violation>> {
    let cat = &g.catalog;
    let mut violations = Vec::new();
    for o in cat.objects() {
        if !g.parents.contains_key(&o.id) {
            violations.push(Violation::MissingParent(o.id));
        }
    }
    for (&child, &parent) in &g.parents {
        match cat.kind(child) {
            None => violations.push(Violation::UnknownId(child)),
            Some(EntityKind::Location) => violations.push(Violation::NestedLocation(child)),
            Some(EntityKind::Object) => match cat.kind(parent) {
                None => violations.push(Violation::UnknownId(parent)),
                Some(EntityKind::Object) => violations.push(Violation::ParentNotLocation {
                    object: child,
                    parent,
                }),
                Some(EntityKind::Location) => {}
            },
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

fn check_pair(later: &GraphSnapshot, earlier: &GraphSnapshot) -> Result<(), GraphError> {
    if !same_catalog(&later.catalog, &earlier.catalog) {
        return Err(GraphError::CatalogMismatch);
    }
    if later.task != earlier.task {
        return Err(GraphError::TaskMismatch(later.task, earlier.task));
    }
    if later.t < earlier.t {
        return Err(GraphError::TimeOrder {
            later: later.t.0,
            earlier: earlier.t.0,
        });
    }
    Ok(())
}

fn changed_parents<'a>(
    later: &'a GraphSnapshot,
    earlier: &'a GraphSnapshot,
) -> impl Iterator<Item = ParentChange> + 'a {
    earlier.catalog.objects().iter().filter_map(move |o| {
        let from = earlier.parent(o.id)?;
        let to = later.parent(o.id)?;
        (from != to).then_some(ParentChange {
            object: o.id,
            from,
            to,
        })
    })
}

/// Minimal delta turning `earlier` into `later`.
pub fn snapshot_diff(
    later: &GraphSnapshot,
    earlier: &GraphSnapshot,
) -> Result<GraphDelta, GraphError> {
    check_pair(later, earlier)?;
    Ok(GraphDelta {
        from_t: earlier.t,
        to_t: later.t,
        changes: changed_parents(later, earlier).collect(),
    })
}

pub fn apply_delta(base: &GraphSnapshot, delta: &GraphDelta) -> Result<GraphSnapshot, GraphError> {
    let mut parents = base.parents.clone();
    for c in &delta.changes {
        if base.catalog.kind(c.to) != Some(EntityKind::Location) {
            return Err(GraphError::UnknownEntity(c.to));
        }
        match parents.get_mut(&c.object) {
            Some(p) if *p == c.from => *p = c.to,
            other => {
                return Err(GraphError::StaleDelta {
                    object: c.object,
                    expected: c.from,
                    actual: other.copied(),
                })
            }
        }
    }
    Ok(GraphSnapshot::new(
        base.catalog.clone(),
        base.task,
        delta.to_t,
        parents,
    ))
}

/// Net relocations between two snapshots. Objects that moved and returned
/// within the window produce no event.
pub fn extract_relocations(
    at_t: &GraphSnapshot,
    at_t_plus_delta: &GraphSnapshot,
) -> Result<Vec<RelocationEvent>, GraphError> {
    check_pair(at_t_plus_delta, at_t)?;
    let window = (at_t.t, at_t_plus_delta.t);
    Ok(changed_parents(at_t_plus_delta, at_t)
        .map(|c| RelocationEvent {
            object: c.object,
            from: c.from,
            to: c.to,
            window,
        })
        .collect())
}
