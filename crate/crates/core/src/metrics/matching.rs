//! Labeled subgraph matching, and the uniqueness and diversity scores
//! built on it.

use crate::error::{Error, Result};
use crate::scene::{SceneGraph, EMPTY_RELATION};

/// Sorted `(outgoing, relation, neighbor label)` of every incident edge.
fn signature(g: &SceneGraph, v: usize) -> Vec<(bool, usize, usize)> {
    let mut s = Vec::new();
    for w in 0..g.node_count() {
        if g.edge(v, w) != EMPTY_RELATION {
            s.push((true, g.edge(v, w), g.label(w)));
        }
        if g.edge(w, v) != EMPTY_RELATION {
            s.push((false, g.edge(w, v), g.label(w)));
        }
    }
    s.sort_unstable();
    s
}

/// Multiset inclusion of two sorted sequences.
fn sub_multiset<T: Ord>(a: &[T], b: &[T]) -> bool {
    let mut j = 0;
    for x in a {
        while j < b.len() && b[j] < *x {
            j += 1;
        }
        if j == b.len() || b[j] != *x {
            return false;
        }
        j += 1;
    }
    true
}

struct Matcher<'a> {
    small: &'a SceneGraph,
    large: &'a SceneGraph,
    exact: bool,
    order: Vec<usize>,
    candidates: Vec<Vec<usize>>,
    map: Vec<usize>,
    used: Vec<bool>,
}

impl Matcher<'_> {
    fn consistent(&self, depth: usize, u: usize, v: usize) -> bool {
        self.order[..depth].iter().all(|&w| {
            let x = self.map[w];
            let (f, b) = (self.small.edge(u, w), self.small.edge(w, u));
            let (lf, lb) = (self.large.edge(v, x), self.large.edge(x, v));
            if self.exact {
                f == lf && b == lb
            } else {
                (f == EMPTY_RELATION || f == lf) && (b == EMPTY_RELATION || b == lb)
            }
        })
    }

    fn search(&mut self, depth: usize) -> bool {
        if depth == self.order.len() {
            return true;
        }
        let u = self.order[depth];
        for k in 0..self.candidates[u].len() {
            let v = self.candidates[u][k];
            if self.used[v] || !self.consistent(depth, u, v) {
                continue;
            }
            self.used[v] = true;
            self.map[u] = v;
            if self.search(depth + 1) {
                return true;
            }
            self.used[v] = false;
        }
        false
    }
}

fn find(small: &SceneGraph, large: &SceneGraph, exact: bool) -> bool {
    let (n, m) = (small.node_count(), large.node_count());
    if n > m || small.edge_count() > large.edge_count() || (exact && (n != m || small.edge_count() != large.edge_count())) {
        return false;
    }
    let mut ls: Vec<usize> = small.labels().to_vec();
    let mut ll: Vec<usize> = large.labels().to_vec();
    ls.sort_unstable();
    ll.sort_unstable();
    if !sub_multiset(&ls, &ll) {
        return false;
    }
    let small_sig: Vec<_> = (0..n).map(|v| signature(small, v)).collect();
    let large_sig: Vec<_> = (0..m).map(|v| signature(large, v)).collect();
    let candidates: Vec<Vec<usize>> = (0..n)
        .map(|u| {
            (0..m)
                .filter(|&v| {
                    small.label(u) == large.label(v)
                        && if exact {
                            small_sig[u] == large_sig[v]
                        } else {
                            sub_multiset(&small_sig[u], &large_sig[v])
                        }
                })
                .collect()
        })
        .collect();
    if candidates.iter().any(Vec::is_empty) {
        return false;
    }
    // Fewest candidates first, then prefer nodes tied to those already placed.
    let mut order = Vec::with_capacity(n);
    let mut placed = vec![false; n];
    for _ in 0..n {
        let next = (0..n)
            .filter(|&u| !placed[u])
            .min_by_key(|&u| {
                let links = order.iter().filter(|&&w| small.connected(u, w)).count();
                (std::cmp::Reverse(links), candidates[u].len(), u)
            })
            .expect("unplaced node remains");
        placed[next] = true;
        order.push(next);
    }
    let mut matcher = Matcher {
        small,
        large,
        exact,
        order,
        candidates,
        map: vec![0; n],
        used: vec![false; m],
    };
    matcher.search(0)
}

/// Whether `small` maps injectively into `large` preserving node labels and
/// every non-empty relation (not necessarily induced).
pub fn embeds(small: &SceneGraph, large: &SceneGraph) -> bool {
    find(small, large, false)
}

/// Label-preserving isomorphism, relation labels included.
pub fn isomorphic(a: &SceneGraph, b: &SceneGraph) -> bool {
    find(a, b, true)
}

/// Embeds into `large` without being isomorphic to it.
pub fn strictly_embeds(small: &SceneGraph, large: &SceneGraph) -> bool {
    (small.node_count(), small.edge_count()) != (large.node_count(), large.edge_count()) && embeds(small, large)
}

/// Percentage of graphs up to isomorphism: distinct classes over count.
pub fn uniqueness(graphs: &[SceneGraph]) -> Result<f64> {
    if graphs.is_empty() {
        return Err(Error::invalid("uniqueness of an empty set"));
    }
    let mut classes: Vec<&SceneGraph> = Vec::new();
    for g in graphs {
        if !classes.iter().any(|c| isomorphic(c, g)) {
            classes.push(g);
        }
    }
    Ok(100.0 * classes.len() as f64 / graphs.len() as f64)
}

/// Percentage of one scene's graphs that do not strictly embed into another
/// graph of the same scene.
pub fn scene_diversity(graphs: &[SceneGraph]) -> Result<f64> {
    if graphs.is_empty() {
        return Err(Error::invalid("diversity of an empty scene"));
    }
    let kept = (0..graphs.len())
        .filter(|&a| !(0..graphs.len()).any(|b| a != b && strictly_embeds(&graphs[a], &graphs[b])))
        .count();
    Ok(100.0 * kept as f64 / graphs.len() as f64)
}

/// Mean of [`scene_diversity`] over scenes.
pub fn diversity(scenes: &[Vec<SceneGraph>]) -> Result<f64> {
    if scenes.is_empty() {
        return Err(Error::invalid("diversity over no scenes"));
    }
    let mut total = 0.0;
    for s in scenes {
        total += scene_diversity(s)?;
    }
    Ok(total / scenes.len() as f64)
}
