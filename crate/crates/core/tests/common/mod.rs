#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splitpipe_core::{LayerNode, ModelGraph, PartitionStrategy, PrecisionDomain};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn layer(rng: &mut ChaCha8Rng, i: usize) -> LayerNode {
    let e = f64::from(rng.gen_range(1..=100u32)) / 10.0;
    let c = f64::from(rng.gen_range(1..=100u32)) / 10.0;
    let l = LayerNode::new(format!("v{i}"), e, c).with_output(rng.gen_range(100..20_000), 4);
    if rng.gen_bool(0.3) {
        return l;
    }
    let mut acc = rng.gen_range(0.5..0.7);
    let table: Vec<(u8, f64)> = PrecisionDomain::default()
        .bits()
        .iter()
        .map(|&b| {
            acc += rng.gen_range(0.0..0.01);
            (b, acc)
        })
        .collect();
    l.with_accuracy(table)
}

struct Gen<'a> {
    rng: &'a mut ChaCha8Rng,
    layers: Vec<LayerNode>,
    edges: Vec<(usize, usize)>,
}

impl Gen<'_> {
    fn push(&mut self) -> usize {
        let l = layer(self.rng, self.layers.len());
        self.layers.push(l);
        self.layers.len() - 1
    }

    /// Appends up to `budget` layers after `from`, nesting forks while room
    /// remains; returns the last layer.
    fn series(&mut self, from: usize, budget: usize) -> usize {
        let mut last = from;
        let mut left = budget;
        while left > 0 {
            if left >= 3 && self.rng.gen_bool(0.4) {
                let inner = self.rng.gen_range(2..left);
                let before = self.layers.len();
                let mut ends = Vec::new();
                let branches = self.rng.gen_range(2..=3usize).min(inner);
                for b in 0..branches {
                    let share = (inner - (self.layers.len() - before)) / (branches - b);
                    ends.push(self.series(last, share.max(1)));
                }
                let join = self.push();
                ends.sort_unstable();
                ends.dedup();
                for e in ends {
                    self.edges.push((e, join));
                }
                left = left.saturating_sub(self.layers.len() - before);
                last = join;
            } else {
                let v = self.push();
                self.edges.push((last, v));
                last = v;
                left -= 1;
            }
            if self.rng.gen_bool(0.2) {
                break;
            }
        }
        last
    }
}

/// Random single-entry single-exit series-parallel model; the layer count
/// stays within a few layers of `size`.
pub fn series_parallel(rng: &mut ChaCha8Rng, size: usize) -> ModelGraph {
    let mut g = Gen {
        rng,
        layers: Vec::new(),
        edges: Vec::new(),
    };
    let entry = g.push();
    let exit = g.series(entry, size.max(2) - 1);
    if exit == entry {
        let v = g.push();
        g.edges.push((entry, v));
    }
    let input_bits = g.rng.gen_range(8_000..200_000);
    ModelGraph::from_indexed("random", g.layers, g.edges)
        .expect("series-parallel construction")
        .with_input_bits(input_bits)
}

/// Random downward-closed device set with random cut precisions.
pub fn strategy(g: &ModelGraph, rng: &mut ChaCha8Rng) -> PartitionStrategy {
    let bits = PrecisionDomain::default().bits().to_vec();
    let p = rng.gen_range(0.0..1.0);
    let mut device = vec![false; g.len()];
    for &v in g.topo_order() {
        device[v] = g.preds(v).iter().all(|&u| device[u]) && rng.gen_bool(p);
    }
    let pick: Vec<u8> = (0..g.len()).map(|_| bits[rng.gen_range(0..bits.len())]).collect();
    PartitionStrategy::from_device_set(g, device, |v| pick[v]).expect("downward closed")
}
