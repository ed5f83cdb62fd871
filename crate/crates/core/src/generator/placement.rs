//! Axis-aligned poses for generated objects.

use rand::Rng;

use crate::scene::{Aabb, RuleSet, SceneGraph, EMPTY_RELATION};

/// Relations that put the subject in contact with its object.
pub const SUPPORT_RELATIONS: &[&str] = &[
    "standing on",
    "lying on",
    "supported by",
    "attached to",
    "hanging on",
    "build in",
    "leaning against",
    "standing in",
    "lying in",
    "hanging in",
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Support {
    /// Rest on the top face of a box.
    OnTop(Aabb),
    /// Hang below the bottom face of a box.
    Below(Aabb),
    /// Sit flush against the room-facing side of a vertical slab.
    Flush(Aabb),
    /// Anywhere in free space.
    Free,
}

/// Chooses how to pose node `new` from its first support relation whose
/// object already has a box.
pub fn support_for(graph: &SceneGraph, new: usize, boxes: &[Option<Aabb>], rules: &RuleSet, room: &Aabb) -> Support {
    for j in 0..graph.node_count() {
        let r = graph.edge(new, j);
        if j == new || r == EMPTY_RELATION || !SUPPORT_RELATIONS.contains(&rules.relation_name(r)) {
            continue;
        }
        let Some(Some(target)) = boxes.get(j) else { continue };
        let e = target.extents();
        let thinnest = (0..3).min_by(|&a, &b| e[a].total_cmp(&e[b])).expect("three axes");
        let room_height = room.extents()[2];
        return if thinnest == 2 && target.center()[2] > room.center()[2] {
            Support::Below(*target)
        } else if thinnest != 2 && e[2] >= 0.5 * room_height {
            Support::Flush(*target)
        } else {
            Support::OnTop(*target)
        };
    }
    Support::Free
}

fn uniform_center<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo < hi {
        rng.gen_range(lo..hi)
    } else {
        (lo + hi) / 2.0
    }
}

/// Draws poses until one lies inside `room` without intersecting any
/// occupied box; `None` after `max_retries` rejected draws. `extents` are
/// (width, depth, height); depth faces the slab for flush placements.
pub fn place_box<R: Rng + ?Sized>(
    extents: [f64; 3],
    support: &Support,
    room: &Aabb,
    occupied: &[Aabb],
    max_retries: usize,
    rng: &mut R,
) -> Option<Aabb> {
    for _ in 0..max_retries {
        let mut e = extents;
        let mut c = [0.0; 3];
        match support {
            Support::OnTop(t) | Support::Below(t) => {
                if rng.gen_bool(0.5) {
                    e.swap(0, 1);
                }
                for a in 0..2 {
                    c[a] = uniform_center(rng, t.min[a].max(room.min[a] + e[a] / 2.0), t.max[a].min(room.max[a] - e[a] / 2.0));
                }
                c[2] = match support {
                    Support::OnTop(_) => t.max[2] + e[2] / 2.0,
                    _ => t.min[2] - e[2] / 2.0,
                };
            }
            Support::Flush(t) => {
                let te = t.extents();
                let normal = if te[0] < te[1] { 0 } else { 1 };
                let along = 1 - normal;
                let mut size = [0.0; 3];
                size[normal] = e[1];
                size[along] = e[0];
                size[2] = e[2];
                e = size;
                c[normal] = if t.center()[normal] < room.center()[normal] {
                    t.max[normal] + e[normal] / 2.0
                } else {
                    t.min[normal] - e[normal] / 2.0
                };
                c[along] = uniform_center(rng, t.min[along] + e[along] / 2.0, t.max[along] - e[along] / 2.0);
                c[2] = uniform_center(rng, room.min[2] + e[2] / 2.0, room.max[2] - e[2] / 2.0);
            }
            Support::Free => {
                for a in 0..3 {
                    c[a] = uniform_center(rng, room.min[a] + e[a] / 2.0, room.max[a] - e[a] / 2.0);
                }
            }
        }
        let b = Aabb::from_center(c, e);
        if room.contains(&b) && occupied.iter().all(|o| !o.intersects(&b)) {
            return Some(b);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn shell() -> (Aabb, Vec<Aabb>) {
        let t = 0.1;
        let (w, d, h) = (4.0, 3.0, 2.5);
        let room = Aabb { min: [-t, -t, -t], max: [w + t, d + t, h + t] };
        let boxes = vec![
            Aabb { min: [-t, -t, -t], max: [w + t, d + t, 0.0] },
            Aabb { min: [-t, -t, h], max: [w + t, d + t, h + t] },
            Aabb { min: [-t, -t, 0.0], max: [w + t, 0.0, h] },
            Aabb { min: [-t, d, 0.0], max: [w + t, d + t, h] },
            Aabb { min: [-t, 0.0, 0.0], max: [0.0, d, h] },
            Aabb { min: [w, 0.0, 0.0], max: [w + t, d, h] },
        ];
        (room, boxes)
    }

    #[test]
    fn first_object_fits_on_first_attempt() {
        let (room, occupied) = shell();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = place_box([0.5, 0.5, 0.8], &Support::OnTop(occupied[0]), &room, &occupied, 1, &mut rng).unwrap();
        assert!(room.contains(&b));
        assert!(b.min[2].abs() < 1e-12);
    }

    #[test]
    fn flush_and_below_placements() {
        let (room, occupied) = shell();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = place_box([0.8, 0.05, 0.6], &Support::Flush(occupied[5]), &room, &occupied, 10, &mut rng).unwrap();
        assert!((b.max[0] - 4.0).abs() < 1e-12 && (b.extents()[0] - 0.05).abs() < 1e-12);
        let b = place_box([0.3, 0.3, 0.4], &Support::Below(occupied[1]), &room, &occupied, 10, &mut rng).unwrap();
        assert!((b.max[2] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn full_room_fails() {
        let (room, mut occupied) = shell();
        occupied.push(Aabb { min: [0.0; 3], max: [4.0, 3.0, 2.5] });
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(place_box([0.5; 3], &Support::Free, &room, &occupied, 25, &mut rng).is_none());
    }

    #[test]
    fn hundred_placements_never_intersect() {
        let (room, mut occupied) = shell();
        let floor = occupied[0];
        let shell_len = occupied.len();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut placed = 0;
        for k in 0..400 {
            if placed == 100 {
                break;
            }
            let support = if k % 2 == 0 { Support::OnTop(floor) } else { Support::Free };
            if let Some(b) = place_box([0.3, 0.25, 0.2], &support, &room, &occupied, 25, &mut rng) {
                occupied.push(b);
                placed += 1;
            }
        }
        assert_eq!(placed, 100);
        let objs = &occupied[shell_len..];
        for a in 0..objs.len() {
            for b in 0..objs.len() {
                assert!(a == b || !objs[a].intersects(&objs[b]));
            }
            for s in &occupied[..shell_len] {
                assert!(!objs[a].intersects(s));
            }
        }
    }
}
