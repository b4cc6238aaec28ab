use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::stats::Proportion;
use crate::par::{map_chunks, Exec};
use crate::rng::{Domain, NoiseStream};

/// (4/π) exp(−π² V / (8a²)), uncapped.
pub fn confinement_bound(v: f64, a: f64) -> f64 {
    4.0 / PI * (-PI * PI * v / (8.0 * a * a)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfinementCheck {
    pub empirical: Proportion,
    /// Bound capped at 1.
    pub bound: f64,
    pub raw_bound: f64,
}

impl ConfinementCheck {
    /// empirical ≤ bound + 3 SE.
    pub fn passes(&self) -> bool {
        let p = self.empirical.rate().unwrap_or(0.0);
        p <= self.bound + 3.0 * self.empirical.se().unwrap_or(0.0)
    }
}

/// Fraction of discretised Brownian paths on [0, V] with sup |B| ≤ a.
pub fn brownian_confinement_check(v: f64, a: f64, n_paths: u64, substeps: usize, seed: u64, exec: Exec) -> ConfinementCheck {
    let sd = (v / substeps as f64).sqrt();
    let inside: u64 = map_chunks(exec, 0..n_paths, |ids| {
        ids.filter(|&id| {
            let mut r = NoiseStream::new(seed, id).rng(Domain::Aux, 0);
            let mut b = 0.0f64;
            for _ in 0..substeps {
                let z: f64 = StandardNormal.sample(&mut r);
                b += sd * z;
                if b.abs() > a {
                    return false;
                }
            }
            true
        })
        .count() as u64
    })
    .iter()
    .sum();
    let raw = confinement_bound(v, a);
    ConfinementCheck { empirical: Proportion::new(inside, n_paths), bound: raw.min(1.0), raw_bound: raw }
}
