//! Fixtures shared by the benchmarks.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use notif_ltv_core::behavior::{BehaviorModel, FactorTable};
use notif_ltv_core::model::{StreakBounds, UserType};
use notif_ltv_core::SimConfig;

/// A full six-type model with smooth, streak-dependent factors.
pub fn full_model() -> BehaviorModel {
    let factors = FactorTable::from_fn(StreakBounds::default(), UserType::all(), |c, s| {
        let v = f64::from(s.value());
        let scale = 1.0 + 0.1 * c.index() as f64;
        if v > 0.0 {
            1.0 + 0.2 * scale * (1.0 - (-v / 3.0).exp())
        } else {
            1.0 - 0.38 * (1.0 - (v / (3.0 * scale)).exp())
        }
    })
    .expect("valid factors");
    let means: BTreeMap<_, _> = UserType::all()
        .map(|c| (c, 0.08 + 0.03 * c.index() as f64))
        .collect();
    let shares: BTreeMap<_, _> = UserType::all()
        .map(|c| (c, if c.index() == 0 { 0.5 } else { 0.1 }))
        .collect();
    BehaviorModel::new(factors, 0.4, means, shares).expect("valid model")
}

/// `n` random (score, outcome) pairs with a monotone underlying relation.
pub fn calibration_pairs(n: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x: f64 = rng.random();
            let y = if rng.random::<f64>() < x * x { 1.0 } else { 0.0 };
            (x, y)
        })
        .collect()
}

/// The shipped simulation config, shrunk to `users` users and `days` days.
pub fn sim_config(users: usize, days: u32) -> SimConfig {
    let text = include_str!("../../../configs/sim.toml");
    let mut cfg: SimConfig = toml::from_str(text).expect("shipped config parses");
    cfg.num_users = users;
    cfg.days = days;
    cfg
}
