//! Seeded placement draws shared by every experiment cell.

use pinch_core::system::{Scenario, SystemConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One placement draw: users i.i.d. uniform over the `[0, S]²` ground
/// square, waveguides at the midpoints of `K` equal slices of the region
/// (`y_k = (k + 1/2) S / K`), every feed at the lower edge of the position
/// box. Deterministic per seed.
pub fn sample_scenario(cfg: &SystemConfig, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = cfg.region_side;
    let users = (0..cfg.num_users)
        .map(|_| (rng.gen::<f64>() * s, rng.gen::<f64>() * s))
        .collect();
    let k = cfg.num_waveguides;
    let waveguide_y = (0..k)
        .map(|i| (i as f64 + 0.5) * s / k as f64)
        .collect();
    let feed_x = vec![cfg.position_box.0; k];
    Scenario {
        users,
        waveguide_y,
        feed_x,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn the_same_seed_reproduces_the_same_scenario() {
        let cfg = SystemConfig::new_28ghz(3, 4, 30.0, 20.0);
        let a = sample_scenario(&cfg, 17);
        let b = sample_scenario(&cfg, 17);
        assert_eq!(a.users, b.users);
        assert_eq!(a.waveguide_y, b.waveguide_y);
        assert_eq!(a.feed_x, b.feed_x);
        let c = sample_scenario(&cfg, 18);
        assert_ne!(a.users, c.users);
    }

    #[test]
    fn samples_validate_against_their_config() {
        let cfg = SystemConfig::new_28ghz(2, 3, 30.0, 20.0);
        for seed in 0..20 {
            let sc = sample_scenario(&cfg, seed);
            sc.validate(&cfg).unwrap();
            for (x, y) in &sc.users {
                assert!((0.0..=cfg.region_side).contains(x));
                assert!((0.0..=cfg.region_side).contains(y));
            }
        }
    }

    #[test]
    fn user_coordinates_average_to_the_region_center() {
        let cfg = SystemConfig::new_28ghz(1, 1, 30.0, 20.0);
        let n = 10_000;
        let mut sum = (0.0, 0.0);
        for seed in 0..n {
            let sc = sample_scenario(&cfg, seed);
            sum.0 += sc.users[0].0;
            sum.1 += sc.users[0].1;
        }
        let mean = (sum.0 / n as f64, sum.1 / n as f64);
        // Uniform on [0, S] has mean S/2 and sigma = S / sqrt(12); allow a
        // three-sigma band around the sample mean.
        let s = cfg.region_side;
        let band = 3.0 * (s / 12f64.sqrt()) / (n as f64).sqrt();
        assert!((mean.0 - s / 2.0).abs() < band, "x mean {} off", mean.0);
        assert!((mean.1 - s / 2.0).abs() < band, "y mean {} off", mean.1);
    }

    #[test]
    fn two_waveguides_split_the_region_into_quarters() {
        let cfg = SystemConfig::new_28ghz(2, 1, 30.0, 20.0);
        let sc = sample_scenario(&cfg, 0);
        assert_eq!(sc.waveguide_y, vec![5.0, 15.0]);
        assert_eq!(sc.feed_x, vec![0.0, 0.0]);
    }
}
