use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::graph::EMPTY_RELATION;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeStat {
    pub mean: f64,
    pub std: f64,
}

/// On-disk form of a [`RuleSet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleSetDocument {
    pub object_classes: Vec<String>,
    pub relation_classes: Vec<String>,
    pub valid_triples: Vec<(String, String, String)>,
    pub room_allowed: BTreeMap<String, Vec<String>>,
    pub volume_stats: BTreeMap<String, VolumeStat>,
    pub architectural: Vec<String>,
    pub volume_ratio_mean: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub aspect_ratios: BTreeMap<String, [f64; 3]>,
}

/// Label spaces and the semantic/space knowledge used by generation and
/// evaluation, with names resolved to class indices.
#[derive(Clone, Debug)]
pub struct RuleSet {
    doc: RuleSetDocument,
    object_index: HashMap<String, usize>,
    relation_index: HashMap<String, usize>,
    triples: HashSet<(usize, usize, usize)>,
    room_allowed: BTreeMap<String, Vec<bool>>,
    volume: Vec<Option<VolumeStat>>,
    architectural: Vec<bool>,
    aspect: Vec<[f64; 3]>,
}

impl RuleSet {
    pub fn from_document(doc: RuleSetDocument) -> Result<Self> {
        let object_index = index_names("object_classes", &doc.object_classes)?;
        let relation_index = index_names("relation_classes", &doc.relation_classes)?;
        if doc.relation_classes.first().map(String::as_str) != Some("empty") {
            return Err(Error::data("relation_classes[0] must be \"empty\""));
        }
        let obj = |field: &str, name: &str| {
            object_index
                .get(name)
                .copied()
                .ok_or_else(|| Error::data(format!("{field}: undeclared object class {name:?}")))
        };
        let mut triples = HashSet::new();
        for (k, (s, r, o)) in doc.valid_triples.iter().enumerate() {
            let field = format!("valid_triples[{k}]");
            let rel = relation_index
                .get(r)
                .copied()
                .ok_or_else(|| Error::data(format!("{field}: undeclared relation class {r:?}")))?;
            if rel == EMPTY_RELATION {
                return Err(Error::data(format!("{field}: the empty relation cannot form a triple")));
            }
            triples.insert((obj(&field, s)?, rel, obj(&field, o)?));
        }
        let n = doc.object_classes.len();
        let mut room_allowed = BTreeMap::new();
        for (room, classes) in &doc.room_allowed {
            let mut mask = vec![false; n];
            for c in classes {
                mask[obj(&format!("room_allowed[{room:?}]"), c)?] = true;
            }
            room_allowed.insert(room.clone(), mask);
        }
        let mut volume = vec![None; n];
        for (class, stat) in &doc.volume_stats {
            let field = format!("volume_stats[{class:?}]");
            if !(stat.std > 0.0) || !stat.mean.is_finite() {
                return Err(Error::data(format!("{field}: std must be positive and mean finite")));
            }
            volume[obj(&field, class)?] = Some(*stat);
        }
        let mut architectural = vec![false; n];
        for c in &doc.architectural {
            architectural[obj("architectural", c)?] = true;
        }
        let mut aspect = vec![[1.0; 3]; n];
        for (class, ratio) in &doc.aspect_ratios {
            let field = format!("aspect_ratios[{class:?}]");
            if ratio.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::data(format!("{field}: ratios must be positive")));
            }
            aspect[obj(&field, class)?] = *ratio;
        }
        if !(doc.volume_ratio_mean > 0.0) {
            return Err(Error::data("volume_ratio_mean must be positive"));
        }
        Ok(Self {
            doc,
            object_index,
            relation_index,
            triples,
            room_allowed,
            volume,
            architectural,
            aspect,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: RuleSetDocument = serde_json::from_str(&text).map_err(|source| Error::Json {
            context: path.display().to_string(),
            source,
        })?;
        Self::from_document(doc).map_err(|e| Error::data(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.doc).map_err(|source| Error::Json {
            context: path.display().to_string(),
            source,
        })?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn document(&self) -> &RuleSetDocument {
        &self.doc
    }

    pub fn node_classes(&self) -> usize {
        self.doc.object_classes.len()
    }

    pub fn edge_classes(&self) -> usize {
        self.doc.relation_classes.len()
    }

    pub fn object_name(&self, class: usize) -> &str {
        &self.doc.object_classes[class]
    }

    pub fn relation_name(&self, class: usize) -> &str {
        &self.doc.relation_classes[class]
    }

    pub fn object_id(&self, name: &str) -> Option<usize> {
        self.object_index.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relation_index.get(name).copied()
    }

    pub fn is_valid_triple(&self, subject: usize, relation: usize, object: usize) -> bool {
        self.triples.contains(&(subject, relation, object))
    }

    pub fn is_architectural(&self, class: usize) -> bool {
        self.architectural.get(class).copied().unwrap_or(false)
    }

    pub fn room_functions(&self) -> impl Iterator<Item = &str> {
        self.room_allowed.keys().map(String::as_str)
    }

    /// `None` when the room function has no allowlist.
    pub fn allowed_in_room(&self, room_function: &str, class: usize) -> Option<bool> {
        self.room_allowed.get(room_function).map(|mask| mask[class])
    }

    pub fn volume_stat(&self, class: usize) -> Option<VolumeStat> {
        self.volume.get(class).copied().flatten()
    }

    pub fn aspect_ratio(&self, class: usize) -> [f64; 3] {
        self.aspect[class]
    }

    pub fn volume_ratio_mean(&self) -> f64 {
        self.doc.volume_ratio_mean
    }

    /// Short digest of the ordered object and relation class names.
    pub fn label_checksum(&self) -> String {
        label_checksum(&self.doc.object_classes, &self.doc.relation_classes)
    }
}

pub fn label_checksum(objects: &[String], relations: &[String]) -> String {
    let mut h = Sha256::new();
    for name in objects {
        h.update(b"o:");
        h.update(name.as_bytes());
        h.update([0]);
    }
    for name in relations {
        h.update(b"r:");
        h.update(name.as_bytes());
        h.update([0]);
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn index_names(field: &str, names: &[String]) -> Result<HashMap<String, usize>> {
    let mut map = HashMap::new();
    for (i, n) in names.iter().enumerate() {
        if map.insert(n.clone(), i).is_some() {
            return Err(Error::data(format!("{field}: duplicate class {n:?}")));
        }
    }
    if map.is_empty() {
        return Err(Error::data(format!("{field}: no classes declared")));
    }
    Ok(map)
}
