//! Tier-by-tier Gibbs sampling from a compiled conditional model.

use rand::Rng;

use crate::graph::{Tier, TieredChainGraph};
use crate::model::CompiledModel;

/// Column layout of the three tiers and whether each needs repeated sweeps.
#[derive(Clone, Debug)]
pub struct TierSampler {
    columns: [Vec<usize>; 3],
    coupled: [bool; 3],
}

fn tier_slot(t: Tier) -> usize {
    match t {
        Tier::L => 0,
        Tier::A => 1,
        Tier::Y => 2,
    }
}

impl TierSampler {
    pub fn new(graph: &TieredChainGraph, model: &CompiledModel) -> Self {
        let p = graph.p();
        let mut columns: [Vec<usize>; 3] = Default::default();
        for v in graph.variables() {
            columns[tier_slot(v.tier())].push(v.column(p));
        }
        let mut coupled = [false; 3];
        for (slot, cols) in columns.iter().enumerate() {
            coupled[slot] = cols
                .iter()
                .any(|&c| model.terms(c).iter().any(|(src, _)| cols.contains(src)));
        }
        TierSampler { columns, coupled }
    }

    pub fn columns(&self, tier: Tier) -> &[usize] {
        &self.columns[tier_slot(tier)]
    }

    /// True when the tier's variables are dependent given earlier tiers, so
    /// one sweep is not an exact draw.
    pub fn is_coupled(&self, tier: Tier) -> bool {
        self.coupled[tier_slot(tier)]
    }

    /// One systematic-scan sweep over the tier in canonical order.
    pub fn sweep<R: Rng>(&self, model: &CompiledModel, x: &mut [u8], tier: Tier, rng: &mut R) {
        for &c in &self.columns[tier_slot(tier)] {
            let p1 = model.prob_one(c, x);
            x[c] = u8::from(rng.gen::<f64>() < p1);
        }
    }

    /// `sweeps` sweeps over a coupled tier, or a single exact sweep otherwise.
    pub fn advance<R: Rng>(
        &self,
        model: &CompiledModel,
        x: &mut [u8],
        tier: Tier,
        sweeps: usize,
        rng: &mut R,
    ) {
        let k = if self.is_coupled(tier) {
            sweeps.max(1)
        } else {
            1
        };
        for _ in 0..k {
            self.sweep(model, x, tier, rng);
        }
    }

    /// Independent Bernoulli(0.5) initial values for every column.
    pub fn initialize<R: Rng>(&self, x: &mut [u8], rng: &mut R) {
        for cols in &self.columns {
            for &c in cols {
                x[c] = u8::from(rng.gen::<bool>());
            }
        }
    }
}
