use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::{MlpBaseline, ModelRegistry, TrendModel};

use super::{run_model, Dataset, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationPoint {
    pub fraction: f64,
    pub seed: u64,
    pub gnn_f1: f64,
    pub mlp_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCurve {
    /// Sorted by fraction, then seed.
    pub points: Vec<AblationPoint>,
    pub removal_seed: u64,
}

impl AblationCurve {
    /// `(fraction, mean gnn F1, mean mlp F1)` per fraction.
    pub fn means(&self) -> Vec<(f64, f64, f64)> {
        let mut acc: BTreeMap<u64, (f64, f64, f64, usize)> = BTreeMap::new();
        for p in &self.points {
            let e = acc.entry(p.fraction.to_bits()).or_insert((p.fraction, 0.0, 0.0, 0));
            e.1 += p.gnn_f1;
            e.2 += p.mlp_f1;
            e.3 += 1;
        }
        let mut out: Vec<_> = acc
            .into_values()
            .map(|(f, g, m, n)| (f, g / n as f64, m / n as f64))
            .collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out
    }
}

/// Retrains both models from scratch for every `(fraction, seed)` pair after
/// removing `floor(fraction * |E|)` split edges chosen uniformly at random.
///
/// Each training seed draws one edge permutation and drops a growing prefix
/// of it, so the removed sets are nested across fractions. The baseline
/// never sees edges, so it is trained once per seed.
pub fn ablate_edges(
    registry: &ModelRegistry,
    data: &Dataset,
    fractions: &[f64],
    seeds: &[u64],
    cfg: &TrainConfig,
    removal_seed: u64,
) -> Result<AblationCurve> {
    if let Some(bad) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Error::Config(format!("removal fraction {bad} outside [0, 1]")));
    }
    if fractions.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config("removal fractions must be sorted ascending".into()));
    }
    let edges: Vec<(usize, usize)> = data
        .split
        .prior_edges
        .iter()
        .chain(&data.split.target_edges)
        .copied()
        .collect();

    let mut points = Vec::with_capacity(fractions.len() * seeds.len());
    for &seed in seeds {
        let run_cfg = cfg.with_seed(seed);
        let (_, mlp) = run_model(registry, MlpBaseline::NAME, data, &run_cfg)?;
        let mut order = edges.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(removal_seed);
        rng.set_stream(seed);
        order.shuffle(&mut rng);
        for &fraction in fractions {
            let k = (fraction * edges.len() as f64 + 1e-9).floor() as usize;
            let removed: HashSet<(usize, usize)> = order[..k.min(order.len())].iter().copied().collect();
            let ablated = data.with_split(data.split.retain_edges(|a, b| !removed.contains(&(a, b))))?;
            let (_, gnn) = run_model(registry, TrendModel::NAME, &ablated, &run_cfg)?;
            points.push(AblationPoint {
                fraction,
                seed,
                gnn_f1: gnn.report.f1,
                mlp_f1: mlp.report.f1,
            });
        }
    }
    points.sort_by(|a, b| a.fraction.total_cmp(&b.fraction).then(a.seed.cmp(&b.seed)));
    Ok(AblationCurve { points, removal_seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn means_group_by_fraction() {
        let p = |fraction, seed, gnn_f1, mlp_f1| AblationPoint {
            fraction,
            seed,
            gnn_f1,
            mlp_f1,
        };
        let curve = AblationCurve {
            points: vec![p(0.0, 1, 0.5, 0.2), p(0.0, 2, 0.7, 0.4), p(1.0, 1, 0.3, 0.3)],
            removal_seed: 0,
        };
        let m = curve.means();
        assert_eq!(m.len(), 2);
        assert!((m[0].1 - 0.6).abs() < 1e-12 && (m[0].2 - 0.3).abs() < 1e-12);
        assert_eq!(m[1], (1.0, 0.3, 0.3));
    }
}
