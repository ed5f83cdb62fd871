//! Volume budget of generated furniture relative to the room.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scene::RuleSet;

/// Smallest volume drawn for an object, in cubic meters.
pub const MIN_VOLUME: f64 = 0.01;

/// Volume used for classes without statistics, in cubic meters.
pub const FALLBACK_VOLUME: f64 = 0.125;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceVerdict {
    Under,
    Within,
    Over,
}

/// Where `sum(volumes)` falls relative to
/// `[lambda * r * room_volume, beta * r * room_volume]` with `r` the mean
/// furniture-to-room volume ratio of the rules. Both bounds are inclusive.
pub fn check_space(volumes: &[f64], room_volume: f64, rules: &RuleSet, lambda: f64, beta: f64) -> Result<SpaceVerdict> {
    if !(room_volume > 0.0) {
        return Err(Error::invalid(format!("room volume must be positive, got {room_volume}")));
    }
    let total: f64 = volumes.iter().sum();
    let ratio = rules.volume_ratio_mean();
    if total < lambda * ratio * room_volume {
        Ok(SpaceVerdict::Under)
    } else if total > beta * ratio * room_volume {
        Ok(SpaceVerdict::Over)
    } else {
        Ok(SpaceVerdict::Within)
    }
}

/// Draws an object volume from the class's Gaussian, redrawing values below
/// [`MIN_VOLUME`].
pub fn sample_volume<R: Rng + ?Sized>(class: usize, rules: &RuleSet, rng: &mut R) -> f64 {
    let Some(stat) = rules.volume_stat(class) else {
        return FALLBACK_VOLUME;
    };
    let normal = Normal::new(stat.mean, stat.std).expect("positive std validated by the rule set");
    for _ in 0..100 {
        let v = normal.sample(rng);
        if v >= MIN_VOLUME {
            return v;
        }
    }
    stat.mean.max(MIN_VOLUME)
}

/// Box extents of the given volume shaped by the class's aspect ratio.
pub fn extents_for(volume: f64, class: usize, rules: &RuleSet) -> [f64; 3] {
    let ratio = rules.aspect_ratio(class);
    let norm = (ratio[0] * ratio[1] * ratio[2]).cbrt();
    let side = volume.cbrt();
    ratio.map(|r| side * r / norm)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::scene::GrammarConfig;

    #[test]
    fn verdict_boundaries() {
        let rules = GrammarConfig::default().rules().unwrap();
        let r = rules.volume_ratio_mean();
        assert_eq!(check_space(&[], 50.0, &rules, 0.8, 1.2).unwrap(), SpaceVerdict::Under);
        assert_eq!(check_space(&[0.8 * r * 50.0], 50.0, &rules, 0.8, 1.2).unwrap(), SpaceVerdict::Within);
        assert_eq!(check_space(&[1.3 * r * 50.0], 50.0, &rules, 0.8, 1.2).unwrap(), SpaceVerdict::Over);
        assert!(check_space(&[1.0], 0.0, &rules, 0.8, 1.2).is_err());
    }

    #[test]
    fn verdicts_match_direct_inequality() {
        let rules = GrammarConfig::default().rules().unwrap();
        let r = rules.volume_ratio_mean();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let n = rng.gen_range(0..6);
            let vols: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..3.0)).collect();
            let room = rng.gen_range(10.0..100.0);
            let (lambda, beta) = (rng.gen_range(0.1..1.0), rng.gen_range(1.0..2.0));
            let s: f64 = vols.iter().sum();
            let expected = if s < lambda * r * room {
                SpaceVerdict::Under
            } else if s <= beta * r * room {
                SpaceVerdict::Within
            } else {
                SpaceVerdict::Over
            };
            assert_eq!(check_space(&vols, room, &rules, lambda, beta).unwrap(), expected);
        }
    }

    #[test]
    fn sampled_volumes_respect_floor_and_shape() {
        let rules = GrammarConfig::default().rules().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let picture = rules.object_id("picture").unwrap();
        for _ in 0..200 {
            let v = sample_volume(picture, &rules, &mut rng);
            assert!(v >= MIN_VOLUME);
            let e = extents_for(v, picture, &rules);
            assert!((e[0] * e[1] * e[2] - v).abs() < 1e-12);
            assert!(e[1] < e[0] && e[1] < e[2]);
        }
    }
}
