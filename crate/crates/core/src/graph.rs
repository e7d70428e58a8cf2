//! Profiled model DAGs and their chain-flow decomposition.
//!
//! A [`ModelGraph`] is a validated DAG with one entry and one exit layer.
//! [`cluster_virtual_blocks`] walks the graph between its *separator* layers
//! (layers that every entry-to-exit path passes through) and replaces each
//! region between two consecutive separators by a [`VirtualBlock`]. A block
//! holds one [`ChainFlow`] per parallel branch; branches are decomposed the
//! same way, so blocks nest. Regions that do not decompose further (no
//! separator inside a single connected branch) become opaque blocks.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::quant::{MAX_BITS, MIN_BITS};

/// One profiled layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNode {
    pub id: String,
    /// Computation time on the end device.
    pub device_time_ms: f64,
    /// Computation time on the cloud server.
    pub cloud_time_ms: f64,
    /// Element count of the output tensor (C·H·W).
    pub output_elements: u64,
    pub output_channels: u32,
    /// Clamp range used when the output is quantized for transmission.
    pub output_range: (f64, f64),
    /// Accuracy of the whole model when this layer's output is quantized to
    /// the given bit-width. Empty means the cut point is insensitive to
    /// quantization.
    pub accuracy_table: BTreeMap<u8, f64>,
}

impl LayerNode {
    /// A layer with the given costs, a one-channel output and an empty
    /// accuracy table.
    pub fn new(id: impl Into<String>, device_time_ms: f64, cloud_time_ms: f64) -> Self {
        LayerNode {
            id: id.into(),
            device_time_ms,
            cloud_time_ms,
            output_elements: 1,
            output_channels: 1,
            output_range: (0.0, 1.0),
            accuracy_table: BTreeMap::new(),
        }
    }

    pub fn with_output(mut self, elements: u64, channels: u32) -> Self {
        self.output_elements = elements;
        self.output_channels = channels;
        self
    }

    pub fn with_range(mut self, min: f64, max: f64) -> Self {
        self.output_range = (min, max);
        self
    }

    pub fn with_accuracy(mut self, table: impl IntoIterator<Item = (u8, f64)>) -> Self {
        self.accuracy_table = table.into_iter().collect();
        self
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let bad = |what: &'static str| GraphError::InvalidLayer {
            id: self.id.clone(),
            what,
        };
        if !(self.device_time_ms.is_finite() && self.device_time_ms >= 0.0)
            || !(self.cloud_time_ms.is_finite() && self.cloud_time_ms >= 0.0)
        {
            return Err(GraphError::NegativeCost(self.id.clone()));
        }
        if self.output_channels == 0 {
            return Err(bad("output_channels must be positive"));
        }
        if self.output_elements < u64::from(self.output_channels) {
            return Err(bad("output_elements smaller than output_channels"));
        }
        let (lo, hi) = self.output_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(bad("output_range must satisfy min < max"));
        }
        let mut prev: Option<f64> = None;
        for (&bits, &acc) in &self.accuracy_table {
            if !(MIN_BITS..=MAX_BITS).contains(&bits) {
                return Err(bad("accuracy_table key outside [2,16]"));
            }
            if !(0.0..=1.0).contains(&acc) {
                return Err(bad("accuracy outside [0,1]"));
            }
            if prev.is_some_and(|p| acc < p) {
                return Err(GraphError::NonMonotoneAccuracy(self.id.clone()));
            }
            prev = Some(acc);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GraphError {
    Empty,
    DuplicateLayer(String),
    UnknownLayer(String),
    SelfLoop(String),
    DuplicateEdge(String, String),
    Cycle,
    MultipleSources(Vec<String>),
    MultipleSinks(Vec<String>),
    NegativeCost(String),
    NonMonotoneAccuracy(String),
    InvalidLayer { id: String, what: &'static str },
}

impl fmt::Display for GraphError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphError::Empty => write!(f, "model has no layers"),
            GraphError::DuplicateLayer(id) => write!(f, "duplicate layer id `{id}`"),
            GraphError::UnknownLayer(id) => write!(f, "edge references unknown layer `{id}`"),
            GraphError::SelfLoop(id) => write!(f, "self-loop on layer `{id}`"),
            GraphError::DuplicateEdge(a, b) => write!(f, "duplicate edge `{a}` -> `{b}`"),
            GraphError::Cycle => write!(f, "model graph contains a cycle"),
            GraphError::MultipleSources(ids) => write!(f, "expected one entry layer, found {ids:?}"),
            GraphError::MultipleSinks(ids) => write!(f, "expected one exit layer, found {ids:?}"),
            GraphError::NegativeCost(id) => {
                write!(f, "layer `{id}` has a negative or non-finite time")
            }
            GraphError::NonMonotoneAccuracy(id) => {
                write!(f, "accuracy table of layer `{id}` decreases with precision")
            }
            GraphError::InvalidLayer { id, what } => write!(f, "layer `{id}`: {what}"),
        }
    }
}

impl core::error::Error for GraphError {}

/// A validated, immutable layer DAG with a single entry and a single exit.
///
/// Layers are addressed by their index in [`ModelGraph::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    name: String,
    layers: Vec<LayerNode>,
    edges: Vec<(usize, usize)>,
    preds: Vec<Vec<usize>>,
    succs: Vec<Vec<usize>>,
    topo: Vec<usize>,
    topo_pos: Vec<usize>,
    entry: usize,
    exit: usize,
    input_bits: u64,
}

impl ModelGraph {
    /// Builds and validates a graph from layers and edges given by layer id.
    pub fn new<S: AsRef<str>>(
        name: impl Into<String>,
        layers: Vec<LayerNode>,
        edges: &[(S, S)],
    ) -> Result<Self, GraphError> {
        let mut index = BTreeMap::new();
        for (i, layer) in layers.iter().enumerate() {
            if index.insert(layer.id.as_str(), i).is_some() {
                return Err(GraphError::DuplicateLayer(layer.id.clone()));
            }
        }
        let mut indexed = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            let lookup = |s: &str| {
                index
                    .get(s)
                    .copied()
                    .ok_or_else(|| GraphError::UnknownLayer(String::from(s)))
            };
            indexed.push((lookup(a.as_ref())?, lookup(b.as_ref())?));
        }
        Self::from_indexed(name, layers, indexed)
    }

    /// Builds and validates a graph whose edges are given by layer index.
    pub fn from_indexed(
        name: impl Into<String>,
        layers: Vec<LayerNode>,
        edges: Vec<(usize, usize)>,
    ) -> Result<Self, GraphError> {
        let n = layers.len();
        if n == 0 {
            return Err(GraphError::Empty);
        }
        let mut seen = BTreeSet::new();
        for layer in &layers {
            if !seen.insert(layer.id.as_str()) {
                return Err(GraphError::DuplicateLayer(layer.id.clone()));
            }
            layer.validate()?;
        }
        let mut preds = vec![Vec::new(); n];
        let mut succs = vec![Vec::new(); n];
        let mut edge_set = BTreeSet::new();
        for &(a, b) in &edges {
            if a >= n || b >= n {
                return Err(GraphError::UnknownLayer(alloc::format!("#{}", a.max(b))));
            }
            if a == b {
                return Err(GraphError::SelfLoop(layers[a].id.clone()));
            }
            if !edge_set.insert((a, b)) {
                return Err(GraphError::DuplicateEdge(
                    layers[a].id.clone(),
                    layers[b].id.clone(),
                ));
            }
            succs[a].push(b);
            preds[b].push(a);
        }
        for list in preds.iter_mut().chain(succs.iter_mut()) {
            list.sort_unstable();
        }

        // Kahn's algorithm, always taking the lowest ready index.
        let mut indegree: Vec<usize> = preds.iter().map(Vec::len).collect();
        let mut ready: BTreeSet<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
        let mut topo = Vec::with_capacity(n);
        while let Some(v) = ready.pop_first() {
            topo.push(v);
            for &w in &succs[v] {
                indegree[w] -= 1;
                if indegree[w] == 0 {
                    ready.insert(w);
                }
            }
        }
        if topo.len() != n {
            return Err(GraphError::Cycle);
        }

        let sources: Vec<usize> = (0..n).filter(|&v| preds[v].is_empty()).collect();
        let sinks: Vec<usize> = (0..n).filter(|&v| succs[v].is_empty()).collect();
        let ids = |vs: &[usize]| vs.iter().map(|&v| layers[v].id.clone()).collect();
        if sources.len() != 1 {
            return Err(GraphError::MultipleSources(ids(&sources)));
        }
        if sinks.len() != 1 {
            return Err(GraphError::MultipleSinks(ids(&sinks)));
        }
        // With a unique source and sink every node of a DAG lies on an
        // entry-to-exit path, so no separate reachability check is needed.

        let mut topo_pos = vec![0; n];
        for (p, &v) in topo.iter().enumerate() {
            topo_pos[v] = p;
        }
        let edges = edge_set.into_iter().collect();
        Ok(ModelGraph {
            name: name.into(),
            layers,
            edges,
            preds,
            succs,
            topo,
            topo_pos,
            entry: sources[0],
            exit: sinks[0],
            input_bits: 0,
        })
    }

    /// Size in bits of the raw task input, uploaded when no layer runs on
    /// the device.
    pub fn with_input_bits(mut self, bits: u64) -> Self {
        self.input_bits = bits;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[LayerNode] {
        &self.layers
    }

    pub fn layer(&self, v: usize) -> &LayerNode {
        &self.layers[v]
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Edges sorted by (producer, consumer).
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn preds(&self, v: usize) -> &[usize] {
        &self.preds[v]
    }

    pub fn succs(&self, v: usize) -> &[usize] {
        &self.succs[v]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.succs[a].binary_search(&b).is_ok()
    }

    /// Layers in a deterministic topological order.
    pub fn topo_order(&self) -> &[usize] {
        &self.topo
    }

    pub fn topo_position(&self, v: usize) -> usize {
        self.topo_pos[v]
    }

    pub fn entry(&self) -> usize {
        self.entry
    }

    pub fn exit(&self) -> usize {
        self.exit
    }

    pub fn input_bits(&self) -> u64 {
        self.input_bits
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.id == id)
    }
}

/// One element of a chain flow.
#[derive(Debug, Clone, PartialEq)]
pub enum FlowElement {
    Layer(usize),
    Block(VirtualBlock),
}

impl FlowElement {
    /// Appends every layer covered by this element.
    pub fn collect_layers(&self, out: &mut Vec<usize>) {
        match self {
            FlowElement::Layer(v) => out.push(*v),
            FlowElement::Block(b) => out.extend_from_slice(&b.members),
        }
    }

    pub fn as_block(&self) -> Option<&VirtualBlock> {
        match self {
            FlowElement::Block(b) => Some(b),
            FlowElement::Layer(_) => None,
        }
    }
}

/// A topologically ordered sequence of layers and virtual blocks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChainFlow {
    pub elements: Vec<FlowElement>,
}

impl ChainFlow {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// All layers of the flow, nested blocks flattened, in topological order.
    pub fn layers(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for e in &self.elements {
            e.collect_layers(&mut out);
        }
        out
    }

    /// Visits every block of the flow, outermost first.
    pub fn for_each_block<'a>(&'a self, f: &mut impl FnMut(&'a VirtualBlock)) {
        for e in &self.elements {
            if let FlowElement::Block(b) = e {
                f(b);
                for inner in &b.flows {
                    inner.for_each_block(f);
                }
            }
        }
    }
}

/// A single-entry single-exit region of parallel branches.
///
/// `entry` and `exit` are the separator layers enclosing the region; they are
/// not members. `members` lists the interior layers in topological order.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualBlock {
    pub id: usize,
    pub entry: usize,
    pub exit: usize,
    pub members: Vec<usize>,
    /// One flow per weakly connected interior branch.
    pub flows: Vec<ChainFlow>,
    /// Whether the block also contains the skip edge `entry -> exit`.
    pub direct_edge: bool,
    /// The region has no internal separator and is not split further.
    pub opaque: bool,
}

/// Clusters the parallel regions of `g` into virtual blocks and returns the
/// top-level chain flow from entry to exit.
pub fn cluster_virtual_blocks(g: &ModelGraph) -> ChainFlow {
    let mut c = Clusterer { g, next_id: 1 };
    let inner: Vec<usize> = g
        .topo_order()
        .iter()
        .copied()
        .filter(|&v| v != g.entry && v != g.exit)
        .collect();
    let mut elements = Vec::new();
    if g.len() == 1 {
        elements.push(FlowElement::Layer(g.entry));
        return ChainFlow { elements };
    }
    elements.push(FlowElement::Layer(g.entry));
    elements.extend(c.chain(g.entry, g.exit, &inner, None));
    elements.push(FlowElement::Layer(g.exit));
    ChainFlow { elements }
}

struct Clusterer<'g> {
    g: &'g ModelGraph,
    next_id: usize,
}

impl Clusterer<'_> {
    /// Positions (into `nodes`) of the layers every path from `nodes[0]` to
    /// `nodes[last]` passes through, using only edges inside `nodes` and
    /// skipping `ignored`.
    fn separators(&self, nodes: &[usize], ignored: Option<(usize, usize)>) -> Vec<usize> {
        let local: BTreeMap<usize, usize> =
            nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        // diff[i] counts edges (a, b) with pos(a) < i < pos(b).
        let mut diff = vec![0i64; nodes.len() + 1];
        for (&v, &i) in &local {
            for &w in self.g.succs(v) {
                if Some((v, w)) == ignored {
                    continue;
                }
                if let Some(&j) = local.get(&w) {
                    if j > i + 1 {
                        diff[i + 1] += 1;
                        diff[j] -= 1;
                    }
                }
            }
        }
        let mut crossing = 0;
        let mut out = Vec::new();
        for (i, d) in diff.iter().take(nodes.len()).enumerate() {
            crossing += d;
            if crossing == 0 {
                out.push(i);
            }
        }
        out
    }

    /// Elements strictly between `u` and `w`, where `inner` (topologically
    /// sorted) holds every layer between them.
    fn chain(
        &mut self,
        u: usize,
        w: usize,
        inner: &[usize],
        ignored: Option<(usize, usize)>,
    ) -> Vec<FlowElement> {
        let mut nodes = Vec::with_capacity(inner.len() + 2);
        nodes.push(u);
        nodes.extend_from_slice(inner);
        nodes.push(w);
        let seps = self.separators(&nodes, ignored);
        let mut out = Vec::new();
        for pair in seps.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if a != 0 {
                out.push(FlowElement::Layer(nodes[a]));
            }
            if b > a + 1 {
                let interior = &nodes[a + 1..b];
                let direct =
                    self.g.has_edge(nodes[a], nodes[b]) && ignored != Some((nodes[a], nodes[b]));
                out.push(FlowElement::Block(self.block(
                    nodes[a],
                    nodes[b],
                    interior,
                    direct,
                )));
            }
        }
        out
    }

    fn block(&mut self, u: usize, w: usize, interior: &[usize], direct: bool) -> VirtualBlock {
        let id = self.next_id;
        self.next_id += 1;
        let comps = self.components(interior);
        let mut block = VirtualBlock {
            id,
            entry: u,
            exit: w,
            members: interior.to_vec(),
            flows: Vec::new(),
            direct_edge: direct,
            opaque: false,
        };
        if comps.len() == 1 {
            let mut nodes = Vec::with_capacity(interior.len() + 2);
            nodes.push(u);
            nodes.extend_from_slice(interior);
            nodes.push(w);
            if self.separators(&nodes, Some((u, w))).len() == 2 {
                block.opaque = true;
                return block;
            }
        }
        for comp in comps {
            let elements = self.chain(u, w, &comp, Some((u, w)));
            block.flows.push(ChainFlow { elements });
        }
        block
    }

    /// Weakly connected components of `interior`, each topologically sorted,
    /// ordered by their first layer.
    fn components(&self, interior: &[usize]) -> Vec<Vec<usize>> {
        let inside: BTreeSet<usize> = interior.iter().copied().collect();
        let mut comp_of: BTreeMap<usize, usize> = BTreeMap::new();
        let mut comps: Vec<Vec<usize>> = Vec::new();
        for &start in interior {
            if comp_of.contains_key(&start) {
                continue;
            }
            let c = comps.len();
            let mut stack = vec![start];
            let mut members = Vec::new();
            comp_of.insert(start, c);
            while let Some(v) = stack.pop() {
                members.push(v);
                for &x in self.g.preds(v).iter().chain(self.g.succs(v)) {
                    if inside.contains(&x) && !comp_of.contains_key(&x) {
                        comp_of.insert(x, c);
                        stack.push(x);
                    }
                }
            }
            members.sort_by_key(|&v| self.g.topo_position(v));
            comps.push(members);
        }
        comps
    }
}

/// A boundary between two consecutive elements of a chain flow.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CutCandidate {
    /// Index of the last element on the device side.
    pub after: usize,
    /// Graph edges from the flow's prefix to its suffix.
    pub severed: Vec<(usize, usize)>,
}

/// Every interior boundary of `flow` with the edges cutting there severs.
pub fn enumerate_cut_candidates(g: &ModelGraph, flow: &ChainFlow) -> Vec<CutCandidate> {
    let n = flow.elements.len();
    if n < 2 {
        return Vec::new();
    }
    let mut side = vec![None; g.len()];
    for (i, e) in flow.elements.iter().enumerate() {
        let mut layers = Vec::new();
        e.collect_layers(&mut layers);
        for v in layers {
            side[v] = Some(i);
        }
    }
    (0..n - 1)
        .map(|after| {
            let severed = g
                .edges()
                .iter()
                .copied()
                .filter(|&(a, b)| {
                    matches!((side[a], side[b]), (Some(x), Some(y)) if x <= after && y > after)
                })
                .collect();
            CutCandidate { after, severed }
        })
        .collect()
}
