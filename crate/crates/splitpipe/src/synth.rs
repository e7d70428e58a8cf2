//! Random model profiles for tests and benchmarks.

use rand::Rng;
use splitpipe_core::{LayerNode, ModelGraph, PrecisionDomain};

/// Random layer: device and cloud times in [0.1, 10] ms (multiples of 0.1),
/// and an accuracy table over `domain` that saturates at a random precision.
/// Roughly a third of the layers are insensitive to quantization.
pub fn random_layer<R: Rng>(rng: &mut R, id: String, domain: &PrecisionDomain) -> LayerNode {
    let e = f64::from(rng.gen_range(1..=100u32)) / 10.0;
    let c = f64::from(rng.gen_range(1..=100u32)) / 10.0;
    let channels = rng.gen_range(1..=8u32);
    let elements = u64::from(channels) * rng.gen_range(100..=2000u64);
    let layer = LayerNode::new(id, e, c).with_output(elements, channels);
    if rng.gen_bool(1.0 / 3.0) {
        return layer;
    }
    let full = rng.gen_range(0.7..0.95);
    let saturate = domain.bits()[rng.gen_range(0..domain.bits().len())];
    let table = domain.bits().iter().map(|&b| {
        let acc = if b >= saturate {
            full
        } else {
            full - 0.01 * f64::from(saturate - b) * rng.gen_range(0.5..2.0)
        };
        (b, acc)
    });
    // The random drops can break monotonicity; take a running max.
    let mut best = 0.0f64;
    let table: Vec<(u8, f64)> = table
        .map(|(b, a)| {
            best = best.max(a.max(0.0));
            (b, best)
        })
        .collect();
    layer.with_accuracy(table)
}

struct Builder<'a, R> {
    rng: &'a mut R,
    domain: &'a PrecisionDomain,
    layers: Vec<LayerNode>,
    edges: Vec<(usize, usize)>,
}

impl<R: Rng> Builder<'_, R> {
    fn layer(&mut self) -> usize {
        let id = format!("v{}", self.layers.len() + 1);
        let l = random_layer(self.rng, id, self.domain);
        self.layers.push(l);
        self.layers.len() - 1
    }

    /// Appends a series-parallel segment of at most `budget` layers after
    /// `from`; returns the last layer and the layers used.
    fn segment(&mut self, from: usize, budget: usize) -> (usize, usize) {
        let mut last = from;
        let mut used = 0;
        while used < budget {
            let left = budget - used;
            if left >= 3 && self.rng.gen_bool(0.4) {
                let (end, n) = self.block(last, left);
                last = end;
                used += n;
            } else {
                let v = self.layer();
                self.edges.push((last, v));
                last = v;
                used += 1;
            }
            if self.rng.gen_bool(0.25) {
                break;
            }
        }
        (last, used)
    }

    /// Fork at `from`, two or three branches (one may be a bare skip edge),
    /// then a join layer.
    fn block(&mut self, from: usize, budget: usize) -> (usize, usize) {
        let branches = if budget >= 5 && self.rng.gen_bool(0.3) { 3 } else { 2 };
        let mut inner = budget - 1;
        let mut ends = Vec::new();
        let mut used = 0;
        for i in 0..branches {
            let skip = i == 0 && self.rng.gen_bool(0.3);
            if skip || inner == 0 {
                ends.push(from);
                continue;
            }
            let share = (inner / (branches - i)).max(1);
            let size = self.rng.gen_range(1..=share);
            let (end, n) = self.segment(from, size);
            ends.push(end);
            inner -= n;
            used += n;
        }
        let join = self.layer();
        ends.sort_unstable();
        ends.dedup();
        for e in ends {
            self.edges.push((e, join));
        }
        (join, used + 1)
    }
}

/// A random single-entry single-exit series-parallel model with at most
/// `max_layers` layers (at least 2).
pub fn random_series_parallel<R: Rng>(rng: &mut R, max_layers: usize, domain: &PrecisionDomain) -> ModelGraph {
    assert!(max_layers >= 2);
    let mut b = Builder {
        rng,
        domain,
        layers: Vec::new(),
        edges: Vec::new(),
    };
    let entry = b.layer();
    let target = b.rng.gen_range(1..max_layers);
    let mut last = entry;
    let mut used = 0;
    while used < target {
        let (end, n) = b.segment(last, target - used);
        last = end;
        used += n;
    }
    let input_bits = b.rng.gen_range(8_000..=200_000u64);
    ModelGraph::from_indexed("random", b.layers, b.edges)
        .expect("generated graphs are single-entry single-exit DAGs")
        .with_input_bits(input_bits)
}

/// `n` parallel chains of `c` random layers between an entry and an exit
/// layer.
pub fn parallel_flows<R: Rng>(rng: &mut R, c: usize, n: usize, domain: &PrecisionDomain) -> ModelGraph {
    let mut layers = vec![random_layer(rng, "in".into(), domain)];
    let mut edges = Vec::new();
    for f in 0..n {
        let mut prev = 0;
        for k in 0..c {
            layers.push(random_layer(rng, format!("f{f}_{k}"), domain));
            let v = layers.len() - 1;
            edges.push((prev, v));
            prev = v;
        }
        edges.push((prev, usize::MAX));
    }
    layers.push(random_layer(rng, "out".into(), domain));
    let exit = layers.len() - 1;
    for e in &mut edges {
        if e.1 == usize::MAX {
            e.1 = exit;
        }
    }
    ModelGraph::from_indexed("flows", layers, edges)
        .expect("parallel chains form a DAG")
        .with_input_bits(50_000)
}
