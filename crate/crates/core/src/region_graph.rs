//! Region adjacency graphs over a [`LabelMap`].

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster_io::Mask;
use crate::superpixel::LabelMap;

pub const SEA: u8 = 0;
pub const DARK_SPOT: u8 = 1;

/// Undirected superpixel graph with per-node pixel lists.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionGraph {
    width: usize,
    height: usize,
    /// Unordered edges stored as (lo, hi), sorted.
    edges: Vec<(usize, usize)>,
    /// Count of 4-adjacent pixel pairs across each edge.
    shared_boundary: Vec<usize>,
    /// Row-major pixel indices of each node, ascending.
    node_pixels: Vec<Vec<usize>>,
    node_boundary_len: Vec<usize>,
    adj_offsets: Vec<usize>,
    adj: Vec<usize>,
}

impl RegionGraph {
    pub fn n_nodes(&self) -> usize {
        self.node_pixels.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn shared_boundary(&self) -> &[usize] {
        &self.shared_boundary
    }

    pub fn node_pixels(&self, node: usize) -> &[usize] {
        &self.node_pixels[node]
    }

    pub fn area(&self, node: usize) -> usize {
        self.node_pixels[node].len()
    }

    pub fn boundary_len(&self, node: usize) -> usize {
        self.node_boundary_len[node]
    }

    /// Sorted neighbour ids of `node`.
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adj[self.adj_offsets[node]..self.adj_offsets[node + 1]]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adj_offsets[node + 1] - self.adj_offsets[node]
    }

    /// Builds a graph directly from an edge list, with no pixel geometry.
    /// Used for model tests and batching of synthetic graphs.
    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut norm: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for &(u, v) in edges {
            if u == v {
                return Err(Error::invalid(format!("self-loop on node {u}")));
            }
            if u >= n_nodes || v >= n_nodes {
                return Err(Error::invalid(format!("edge ({u},{v}) out of range")));
            }
            norm.push((u.min(v), u.max(v)));
        }
        norm.sort_unstable();
        norm.dedup();
        let shared = vec![0; norm.len()];
        Ok(Self::assemble(0, 0, norm, shared, vec![Vec::new(); n_nodes], vec![0; n_nodes]))
    }

    fn assemble(
        width: usize,
        height: usize,
        edges: Vec<(usize, usize)>,
        shared_boundary: Vec<usize>,
        node_pixels: Vec<Vec<usize>>,
        node_boundary_len: Vec<usize>,
    ) -> Self {
        let n = node_pixels.len();
        let mut degree = vec![0usize; n];
        for &(u, v) in &edges {
            degree[u] += 1;
            degree[v] += 1;
        }
        let mut adj_offsets = vec![0usize; n + 1];
        for i in 0..n {
            adj_offsets[i + 1] = adj_offsets[i] + degree[i];
        }
        let mut fill = adj_offsets.clone();
        let mut adj = vec![0usize; adj_offsets[n]];
        for &(u, v) in &edges {
            adj[fill[u]] = v;
            fill[u] += 1;
            adj[fill[v]] = u;
            fill[v] += 1;
        }
        for i in 0..n {
            adj[adj_offsets[i]..adj_offsets[i + 1]].sort_unstable();
        }
        Self {
            width,
            height,
            edges,
            shared_boundary,
            node_pixels,
            node_boundary_len,
            adj_offsets,
            adj,
        }
    }

    /// Disjoint union of several graphs; node ids of graph `i` are shifted
    /// by the total node count of graphs `0..i`.
    pub fn disjoint_union<'a>(graphs: impl IntoIterator<Item = &'a RegionGraph>) -> RegionGraph {
        let mut edges = Vec::new();
        let mut shared = Vec::new();
        let mut pixels = Vec::new();
        let mut boundary = Vec::new();
        let mut offset = 0;
        for g in graphs {
            edges.extend(g.edges.iter().map(|&(u, v)| (u + offset, v + offset)));
            shared.extend_from_slice(&g.shared_boundary);
            pixels.extend(g.node_pixels.iter().cloned());
            boundary.extend_from_slice(&g.node_boundary_len);
            offset += g.n_nodes();
        }
        Self::assemble(0, 0, edges, shared, pixels, boundary)
    }
}

/// Builds the 4-connectivity region adjacency graph of `labels`.
pub fn build_graph(labels: &LabelMap) -> RegionGraph {
    let (w, h) = (labels.width(), labels.height());
    let l = labels.labels();
    let n = labels.n_regions();
    let mut node_pixels = vec![Vec::new(); n];
    let mut boundary = vec![0usize; n];
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for p in 0..w * h {
        let a = l[p];
        if a < 0 {
            continue;
        }
        let a = a as usize;
        node_pixels[a].push(p);
        let (r, c) = (p / w, p % w);
        let on_edge = r == 0 || c == 0 || r + 1 == h || c + 1 == w;
        let differs = |q: usize| l[q] != a as i32;
        let touches_other = (r > 0 && differs(p - w))
            || (r + 1 < h && differs(p + w))
            || (c > 0 && differs(p - 1))
            || (c + 1 < w && differs(p + 1));
        if on_edge || touches_other {
            boundary[a] += 1;
        }
        if c + 1 < w && l[p + 1] >= 0 && l[p + 1] as usize != a {
            let b = l[p + 1] as usize;
            pairs.push((a.min(b), a.max(b)));
        }
        if r + 1 < h && l[p + w] >= 0 && l[p + w] as usize != a {
            let b = l[p + w] as usize;
            pairs.push((a.min(b), a.max(b)));
        }
    }
    pairs.sort_unstable();
    let mut edges = Vec::new();
    let mut shared = Vec::new();
    for pair in pairs {
        if edges.last() == Some(&pair) {
            *shared.last_mut().unwrap() += 1;
        } else {
            edges.push(pair);
            shared.push(1);
        }
    }
    RegionGraph::assemble(w, h, edges, shared, node_pixels, boundary)
}

/// Per-node class: [`SEA`] or [`DARK_SPOT`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeLabeling {
    pub classes: Vec<u8>,
}

impl NodeLabeling {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

/// A node is a dark spot iff at least `threshold` of its pixels are marked.
pub fn label_nodes(graph: &RegionGraph, truth: &Mask, threshold: f64) -> Result<NodeLabeling> {
    if truth.width() != graph.width || truth.height() != graph.height {
        return Err(Error::DimensionMismatch(format!(
            "truth mask {}x{} vs label map {}x{}",
            truth.width(),
            truth.height(),
            graph.width,
            graph.height
        )));
    }
    let bits = truth.bits();
    let classes = graph
        .node_pixels
        .iter()
        .map(|px| {
            let marked = px.iter().filter(|&&p| bits[p]).count();
            if !px.is_empty() && marked as f64 >= threshold * px.len() as f64 {
                DARK_SPOT
            } else {
                SEA
            }
        })
        .collect();
    Ok(NodeLabeling { classes })
}

/// Paints each pixel with its node's class; invalid pixels stay 0.
pub fn rasterize_prediction(graph: &RegionGraph, classes: &NodeLabeling, labels: &LabelMap) -> Result<Mask> {
    if classes.len() != graph.n_nodes() || labels.n_regions() != graph.n_nodes() {
        return Err(Error::DimensionMismatch(format!(
            "{} classes for {} nodes and {} regions",
            classes.len(),
            graph.n_nodes(),
            labels.n_regions()
        )));
    }
    let bits = labels
        .labels()
        .iter()
        .map(|&l| l >= 0 && classes.classes[l as usize] == DARK_SPOT)
        .collect();
    Mask::new(labels.width(), labels.height(), bits)
}

/// Writes `u v shared_boundary` lines.
pub fn write_edge_list(graph: &RegionGraph, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for (&(u, v), &s) in graph.edges.iter().zip(&graph.shared_boundary) {
        writeln!(out, "{u} {v} {s}")?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes `node_id,area,label`; label is empty when no labeling is given.
pub fn write_node_csv(graph: &RegionGraph, labeling: Option<&NodeLabeling>, path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["node_id", "area", "label"])?;
    for v in 0..graph.n_nodes() {
        let label = labeling.map(|l| l.classes[v].to_string()).unwrap_or_default();
        wtr.write_record([v.to_string(), graph.area(v).to_string(), label])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_pixel_map() {
        let map = LabelMap::new(2, 1, vec![0, 1]).unwrap();
        let g = build_graph(&map);
        assert_eq!(g.n_nodes(), 2);
        assert_eq!(g.edges(), &[(0, 1)]);
        assert_eq!(g.shared_boundary(), &[1]);
        assert_eq!(g.neighbors(0), &[1]);
    }

    #[test]
    fn single_label_has_no_edges() {
        let map = LabelMap::new(3, 3, vec![0; 9]).unwrap();
        let g = build_graph(&map);
        assert_eq!(g.n_nodes(), 1);
        assert!(g.edges().is_empty());
        assert_eq!(g.boundary_len(0), 8);
    }

    #[test]
    fn sentinel_pixels_add_nothing() {
        let map = LabelMap::new(3, 1, vec![0, -1, 1]).unwrap();
        let g = build_graph(&map);
        assert_eq!(g.n_nodes(), 2);
        assert!(g.edges().is_empty());
    }

    #[test]
    fn node_labels_follow_purity() {
        // node 0: 5 pixels, 3 marked (60%); node 1: 5 pixels, none marked
        let map = LabelMap::new(5, 2, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]).unwrap();
        let g = build_graph(&map);
        let truth = Mask::new(5, 2, vec![true, true, true, false, false, false, false, false, false, false]).unwrap();
        assert_eq!(label_nodes(&g, &truth, 0.5).unwrap().classes, vec![1, 0]);
        assert_eq!(label_nodes(&g, &truth, 0.7).unwrap().classes, vec![0, 0]);
        let full = Mask::new(5, 2, vec![true; 10]).unwrap();
        assert_eq!(label_nodes(&g, &full, 0.5).unwrap().classes, vec![1, 1]);
        assert!(label_nodes(&g, &Mask::zeros(4, 2), 0.5).is_err());
    }

    #[test]
    fn rasterize_uniform_labelings() {
        let map = LabelMap::new(3, 2, vec![0, 0, 1, -1, 1, 1]).unwrap();
        let g = build_graph(&map);
        let zeros = rasterize_prediction(&g, &NodeLabeling { classes: vec![0, 0] }, &map).unwrap();
        assert_eq!(zeros.count_ones(), 0);
        let ones = rasterize_prediction(&g, &NodeLabeling { classes: vec![1, 1] }, &map).unwrap();
        assert_eq!(ones.bits(), &[true, true, true, false, true, true]);
    }

    #[test]
    fn disjoint_union_offsets_ids() {
        let a = RegionGraph::from_edges(2, &[(0, 1)]).unwrap();
        let b = RegionGraph::from_edges(3, &[(2, 0), (1, 2)]).unwrap();
        let u = RegionGraph::disjoint_union([&a, &b]);
        assert_eq!(u.n_nodes(), 5);
        assert_eq!(u.edges(), &[(0, 1), (2, 4), (3, 4)]);
        assert_eq!(u.neighbors(4), &[2, 3]);
        assert!(RegionGraph::from_edges(2, &[(1, 1)]).is_err());
    }
}
