//! Verified image pairs and the feature tracks they induce.

use std::collections::{BTreeMap, HashMap};

use crate::verify::TwoViewGeometry;

/// One physical point seen in several images: `(image, feature)` pairs,
/// sorted by image, at most one per image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Track {
    pub observations: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, Default)]
pub struct SceneGraph {
    pub num_images: usize,
    /// Sorted by `(image_a, image_b)`.
    pub edges: Vec<TwoViewGeometry>,
    pub tracks: Vec<Track>,
    /// Tracks discarded for holding two features of one image.
    pub dropped_tracks: usize,
    lookup: HashMap<(usize, usize), usize>,
    per_image: Vec<Vec<(usize, usize)>>,
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new() -> Self {
        Self {
            parent: Vec::new(),
            rank: Vec::new(),
        }
    }

    fn push(&mut self) -> usize {
        self.parent.push(self.parent.len());
        self.rank.push(0);
        self.parent.len() - 1
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Assembles the graph from verified pairs; edges between an image and
/// itself, or naming images outside `0..num_images`, are ignored.
pub fn build_scene_graph(num_images: usize, verified: Vec<TwoViewGeometry>) -> SceneGraph {
    let mut edges: Vec<TwoViewGeometry> = verified
        .into_iter()
        .filter(|e| e.image_a != e.image_b && e.image_a < num_images && e.image_b < num_images)
        .map(|mut e| {
            if e.image_a > e.image_b {
                std::mem::swap(&mut e.image_a, &mut e.image_b);
                e.inliers.iter_mut().for_each(|m| *m = (m.1, m.0));
                e.matrix = match e.kind {
                    crate::verify::ModelKind::Homography => e.matrix.try_inverse().unwrap_or(e.matrix),
                    _ => e.matrix.transpose(),
                };
            }
            e
        })
        .collect();
    edges.sort_by_key(|e| (e.image_a, e.image_b));

    let mut ids: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut sets = DisjointSet::new();
    let mut node = |key: (usize, usize), sets: &mut DisjointSet| *ids.entry(key).or_insert_with(|| sets.push());
    for e in &edges {
        for &(fa, fb) in &e.inliers {
            let a = node((e.image_a, fa), &mut sets);
            let b = node((e.image_b, fb), &mut sets);
            sets.union(a, b);
        }
    }
    let mut components: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for (&key, &id) in &ids {
        let root = sets.find(id);
        components.entry(root).or_default().push(key);
    }
    let mut tracks = Vec::new();
    let mut dropped = 0;
    for (_, mut obs) in components {
        obs.sort_unstable();
        if obs.windows(2).any(|w| w[0].0 == w[1].0) {
            dropped += 1;
            continue;
        }
        if obs.len() >= 2 {
            tracks.push(Track { observations: obs });
        }
    }
    tracks.sort_by(|a, b| a.observations.cmp(&b.observations));
    let mut lookup = HashMap::new();
    let mut per_image = vec![Vec::new(); num_images];
    for (t, track) in tracks.iter().enumerate() {
        for &(img, f) in &track.observations {
            lookup.insert((img, f), t);
            per_image[img].push((t, f));
        }
    }
    SceneGraph {
        num_images,
        edges,
        tracks,
        dropped_tracks: dropped,
        lookup,
        per_image,
    }
}

impl SceneGraph {
    pub fn track_of(&self, image: usize, feature: usize) -> Option<usize> {
        self.lookup.get(&(image, feature)).copied()
    }

    pub fn edge(&self, a: usize, b: usize) -> Option<&TwoViewGeometry> {
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        self.edges.iter().find(|e| e.image_a == a && e.image_b == b)
    }

    /// Tracks observed in `image`, as `(track, feature)`.
    pub fn tracks_in_image(&self, image: usize) -> &[(usize, usize)] {
        self.per_image.get(image).map_or(&[], |v| v.as_slice())
    }
}
