use std::cell::OnceCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{Matrix, NeighborLists, SparseMatrix};

/// A directed weighted graph, usually the disjoint union of a batch of
/// chains. Messages flow from source to target.
///
/// The propagation matrices each operator needs are built on first use and
/// cached.
#[derive(Debug, Default)]
pub struct Graph {
    n_nodes: usize,
    sources: Vec<usize>,
    targets: Vec<usize>,
    weights: Vec<f64>,
    add: OnceCell<Rc<SparseMatrix>>,
    mean: OnceCell<Rc<SparseMatrix>>,
    gcn: OnceCell<Rc<SparseMatrix>>,
    sage: OnceCell<Rc<SparseMatrix>>,
    cheb: OnceCell<Rc<SparseMatrix>>,
    gin: OnceCell<(f64, Rc<SparseMatrix>)>,
    in_neighbors: OnceCell<NeighborLists>,
}

impl Clone for Graph {
    fn clone(&self) -> Self {
        Graph {
            n_nodes: self.n_nodes,
            sources: self.sources.clone(),
            targets: self.targets.clone(),
            weights: self.weights.clone(),
            ..Default::default()
        }
    }
}

impl Graph {
    pub fn new(n_nodes: usize, edge_index: [&[usize]; 2], weights: &[f64]) -> Result<Self> {
        let [sources, targets] = edge_index;
        if sources.len() != targets.len() || sources.len() != weights.len() {
            return Err(Error::contract(format!(
                "edge index has {}/{} entries but {} weights",
                sources.len(),
                targets.len(),
                weights.len()
            )));
        }
        for (&s, &t) in sources.iter().zip(targets) {
            if s >= n_nodes || t >= n_nodes {
                return Err(Error::contract(format!("edge {s}->{t} out of range for {n_nodes} nodes")));
            }
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::contract(format!("edge weight {w} must be finite and nonnegative")));
        }
        Ok(Graph {
            n_nodes,
            sources: sources.to_vec(),
            targets: targets.to_vec(),
            weights: weights.to_vec(),
            ..Default::default()
        })
    }

    /// A chain `0 → 1 → … → n−1` with one weight per edge.
    pub fn chain(weights: &[f64]) -> Result<Self> {
        let n = weights.len() + 1;
        let sources: Vec<usize> = (0..n - 1).collect();
        let targets: Vec<usize> = (1..n).collect();
        Graph::new(n, [&sources, &targets], weights)
    }

    /// Places graphs side by side; node ids are offset in order.
    pub fn disjoint_union<'a>(parts: impl IntoIterator<Item = &'a Graph>) -> Graph {
        let mut g = Graph::default();
        for p in parts {
            let offset = g.n_nodes;
            g.sources.extend(p.sources.iter().map(|s| s + offset));
            g.targets.extend(p.targets.iter().map(|t| t + offset));
            g.weights.extend_from_slice(&p.weights);
            g.n_nodes += p.n_nodes;
        }
        g
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.weights.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.sources
            .iter()
            .zip(&self.targets)
            .zip(&self.weights)
            .map(|((&s, &t), &w)| (s, t, w))
    }

    /// Dense weighted adjacency with `A[target][source] = w`.
    pub fn adjacency(&self, self_loops: bool) -> Matrix {
        let n = self.n_nodes;
        let mut a = Matrix::zeros(n, n);
        for (s, t, w) in self.edges() {
            a.set(t, s, a.get(t, s) + w);
        }
        if self_loops {
            for i in 0..n {
                a.set(i, i, a.get(i, i) + 1.0);
            }
        }
        a
    }

    fn sparse(&self, triplets: Vec<(usize, usize, f64)>) -> Rc<SparseMatrix> {
        Rc::new(SparseMatrix::from_triplets(self.n_nodes, self.n_nodes, &triplets).expect("indices validated at construction"))
    }

    fn in_weight(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n_nodes];
        for (_, t, w) in self.edges() {
            d[t] += w;
        }
        d
    }

    /// `A_w`.
    pub fn add_matrix(&self) -> &Rc<SparseMatrix> {
        self.add.get_or_init(|| self.sparse(self.edges().map(|(s, t, w)| (t, s, w)).collect()))
    }

    /// `D_w⁻¹ A_w`; rows without incoming weight are zero.
    pub fn mean_matrix(&self) -> &Rc<SparseMatrix> {
        self.mean.get_or_init(|| {
            let d = self.in_weight();
            self.sparse(
                self.edges()
                    .filter(|&(_, t, _)| d[t] > 0.0)
                    .map(|(s, t, w)| (t, s, w / d[t]))
                    .collect(),
            )
        })
    }

    /// `D̂^{-1/2} (A_w + I) D̂^{-1/2}` with `D̂` the row sums of `A_w + I`.
    pub fn gcn_matrix(&self) -> &Rc<SparseMatrix> {
        self.gcn.get_or_init(|| {
            let d: Vec<f64> = self.in_weight().iter().map(|x| x + 1.0).collect();
            let mut triplets: Vec<_> = self.edges().map(|(s, t, w)| (t, s, w / (d[t] * d[s]).sqrt())).collect();
            triplets.extend((0..self.n_nodes).map(|i| (i, i, 1.0 / d[i])));
            self.sparse(triplets)
        })
    }

    /// Edge-weighted mean over in-neighbors: `w / |N(v)|`.
    pub fn sage_matrix(&self) -> &Rc<SparseMatrix> {
        self.sage.get_or_init(|| {
            let mut count = vec![0usize; self.n_nodes];
            for &t in &self.targets {
                count[t] += 1;
            }
            self.sparse(self.edges().map(|(s, t, w)| (t, s, w / count[t] as f64)).collect())
        })
    }

    /// Scaled Laplacian `2L/λ_max − I` with `λ_max = 2`, where `L` is the
    /// symmetric-normalized Laplacian of `(A_w + A_wᵀ)/2`. Isolated nodes
    /// have `L_ii = 0`.
    pub fn scaled_laplacian(&self) -> &Rc<SparseMatrix> {
        self.cheb.get_or_init(|| {
            let mut d = vec![0.0; self.n_nodes];
            let mut sym = Vec::with_capacity(2 * self.n_edges());
            for (s, t, w) in self.edges() {
                let h = 0.5 * w;
                sym.push((t, s, h));
                sym.push((s, t, h));
                d[t] += h;
                d[s] += h;
            }
            let mut triplets: Vec<_> = sym
                .into_iter()
                .filter(|&(i, j, _)| d[i] > 0.0 && d[j] > 0.0)
                .map(|(i, j, a)| (i, j, -a / (d[i] * d[j]).sqrt()))
                .collect();
            // L_ii = 1 for connected nodes, so the shifted diagonal is 0
            triplets.extend((0..self.n_nodes).filter(|&i| d[i] <= 0.0).map(|i| (i, i, -1.0)));
            self.sparse(triplets)
        })
    }

    /// `(1 + ε) I + A_w`.
    pub fn gin_matrix(&self, epsilon: f64) -> Rc<SparseMatrix> {
        let build = || {
            let mut triplets: Vec<_> = self.edges().map(|(s, t, w)| (t, s, w)).collect();
            triplets.extend((0..self.n_nodes).map(|i| (i, i, 1.0 + epsilon)));
            self.sparse(triplets)
        };
        match self.gin.get() {
            Some((eps, m)) if *eps == epsilon => m.clone(),
            Some(_) => build(),
            None => self.gin.get_or_init(|| (epsilon, build())).1.clone(),
        }
    }

    /// In-neighbors of each node regardless of weight.
    pub fn in_neighbors(&self) -> &NeighborLists {
        self.in_neighbors.get_or_init(|| {
            let mut lists = vec![Vec::new(); self.n_nodes];
            for (s, t, _) in self.edges() {
                lists[t].push(s);
            }
            NeighborLists::new(lists)
        })
    }
}
