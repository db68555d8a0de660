//! Exhaustive nearest-neighbour matching and random score sets.

use std::collections::BTreeMap;

use ets_causal::matching::{MatchWeights, ScoredUnit};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{id, unit};

/// Exhaustive matching: for every treated unit (ascending id) rank every
/// still-available control by `(|score gap|, id)` and keep the first `k`.
pub fn brute_force(units: &[ScoredUnit], k: usize, with_replacement: bool) -> BTreeMap<String, Vec<(String, f64)>> {
    let mut treated: Vec<&ScoredUnit> = units.iter().filter(|u| u.treated).collect();
    treated.sort_by(|a, b| a.firm_id.cmp(&b.firm_id));
    let mut available: Vec<&ScoredUnit> = units.iter().filter(|u| !u.treated).collect();
    let mut out = BTreeMap::new();
    for t in treated {
        let mut ranked: Vec<(f64, &str)> = available
            .iter()
            .map(|c| ((t.score - c.score).abs(), c.firm_id.as_str()))
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
        let chosen: Vec<String> = ranked.iter().take(k).map(|r| r.1.to_string()).collect();
        if chosen.is_empty() {
            continue;
        }
        let w = 1.0 / chosen.len() as f64;
        if !with_replacement {
            available.retain(|c| !chosen.contains(&c.firm_id));
        }
        let mut row: Vec<(String, f64)> = chosen.into_iter().map(|c| (c, w)).collect();
        row.sort_by(|a, b| a.0.cmp(&b.0));
        out.insert(t.firm_id.clone(), row);
    }
    out
}

pub fn as_map(w: &MatchWeights) -> BTreeMap<String, Vec<(String, f64)>> {
    w.treated()
        .iter()
        .zip(w.rows())
        .map(|(t, row)| {
            let mut r: Vec<(String, f64)> = row.iter().map(|(c, x)| (w.controls()[*c].clone(), *x)).collect();
            r.sort_by(|a, b| a.0.cmp(&b.0));
            (t.clone(), r)
        })
        .collect()
}

/// Scores on a coarse lattice so that distance ties actually occur.
pub fn random_units(rng: &mut ChaCha8Rng, n: usize) -> Vec<ScoredUnit> {
    let mut units: Vec<ScoredUnit> = (0..n)
        .map(|i| {
            unit(
                &id(i),
                f64::from(rng.random_range(1..40u32)) / 40.0,
                rng.random_bool(0.3),
            )
        })
        .collect();
    units[0].treated = true;
    units[1].treated = false;
    units
}
