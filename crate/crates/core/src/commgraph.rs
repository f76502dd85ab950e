//! Undirected, static robot communication graphs.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGraph {
    n_robots: usize,
    edges: BTreeSet<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl CommGraph {
    pub fn new(n_robots: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut canonical = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::InvalidArgument(format!("self loop on robot {a}")));
            }
            if a >= n_robots || b >= n_robots {
                return Err(Error::InvalidArgument(format!(
                    "edge ({a}, {b}) references a robot outside 0..{n_robots}"
                )));
            }
            canonical.insert((a.min(b), a.max(b)));
        }
        let mut adjacency = vec![Vec::new(); n_robots];
        for &(a, b) in &canonical {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }
        Ok(Self {
            n_robots,
            edges: canonical,
            adjacency,
        })
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n).flat_map(|a| ((a + 1)..n).map(move |b| (a, b)));
        Self::new(n, edges).expect("complete graph is valid")
    }

    pub fn empty(n: usize) -> Self {
        Self::new(n, []).expect("empty graph is valid")
    }

    pub fn path(n: usize) -> Self {
        Self::new(n, (1..n).map(|b| (b - 1, b))).expect("path graph is valid")
    }

    pub fn star(n: usize) -> Self {
        Self::new(n, (1..n).map(|b| (0, b))).expect("star graph is valid")
    }

    pub fn n_robots(&self) -> usize {
        self.n_robots
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, i: usize) -> Result<&[usize]> {
        self.adjacency
            .get(i)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::InvalidArgument(format!("robot {i} not in graph of {}", self.n_robots)))
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn average_degree(&self) -> f64 {
        if self.n_robots == 0 {
            return 0.0;
        }
        2.0 * self.edges.len() as f64 / self.n_robots as f64
    }

    fn bfs(&self, source: usize) -> Vec<Option<usize>> {
        let mut hops = vec![None; self.n_robots];
        let mut queue = VecDeque::from([source]);
        hops[source] = Some(0);
        while let Some(v) = queue.pop_front() {
            let h = hops[v].expect("queued robots have a hop count");
            for &w in &self.adjacency[v] {
                if hops[w].is_none() {
                    hops[w] = Some(h + 1);
                    queue.push_back(w);
                }
            }
        }
        hops
    }

    pub fn is_connected(&self) -> bool {
        self.n_robots == 0 || self.bfs(0).iter().all(Option::is_some)
    }

    /// Hop distance from `source` to every robot.
    pub fn broadcast_hops(&self, source: usize) -> Result<Vec<usize>> {
        if source >= self.n_robots {
            return Err(Error::InvalidArgument(format!("robot {source} not in graph")));
        }
        self.bfs(source)
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::InvalidArgument("broadcast on a disconnected graph".into()))
    }

    /// Connected components, each sorted, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.n_robots];
        let mut out = Vec::new();
        for start in 0..self.n_robots {
            if seen[start] {
                continue;
            }
            let mut comp: Vec<usize> = self
                .bfs(start)
                .iter()
                .enumerate()
                .filter_map(|(v, h)| h.map(|_| v))
                .collect();
            comp.sort_unstable();
            for &v in &comp {
                seen[v] = true;
            }
            out.push(comp);
        }
        out
    }

    /// Random spanning tree plus uniformly random extra edges until the average
    /// degree reaches `target_avg_degree`.
    pub fn random_connected(n: usize, target_avg_degree: f64, seed: u64) -> Result<Self> {
        let lower = if n == 0 { 0.0 } else { 2.0 * (n as f64 - 1.0) / n as f64 };
        let upper = n.saturating_sub(1) as f64;
        if n == 0 || !(target_avg_degree >= lower - 1e-12 && target_avg_degree <= upper + 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "average degree {target_avg_degree} infeasible for {n} robots (range [{lower}, {upper}])"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = random_tree(n, usize::MAX, &mut rng)?;
        let mut candidates: Vec<(usize, usize)> = (0..n)
            .flat_map(|a| ((a + 1)..n).map(move |b| (a, b)))
            .filter(|e| !edges.contains(e))
            .collect();
        candidates.shuffle(&mut rng);
        let needed = (target_avg_degree * n as f64 / 2.0 - 1e-9).ceil() as usize;
        for e in candidates {
            if edges.len() >= needed {
                break;
            }
            edges.insert(e);
        }
        Self::new(n, edges)
    }

    /// Random connected graph whose degrees never exceed `max_degree`; extra edges are
    /// added between unsaturated robots until none can be joined.
    pub fn random_bounded_degree(n: usize, max_degree: usize, seed: u64) -> Result<Self> {
        if n == 0 || (n > 2 && max_degree < 2) || (n == 2 && max_degree < 1) {
            return Err(Error::InvalidArgument(format!(
                "no connected graph on {n} robots with maximum degree {max_degree}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = random_tree(n, max_degree, &mut rng)?;
        let mut degree = vec![0usize; n];
        for &(a, b) in &edges {
            degree[a] += 1;
            degree[b] += 1;
        }
        let mut candidates: Vec<(usize, usize)> = (0..n)
            .flat_map(|a| ((a + 1)..n).map(move |b| (a, b)))
            .filter(|e| !edges.contains(e))
            .collect();
        candidates.shuffle(&mut rng);
        for (a, b) in candidates {
            if degree[a] < max_degree && degree[b] < max_degree {
                edges.insert((a, b));
                degree[a] += 1;
                degree[b] += 1;
            }
        }
        Self::new(n, edges)
    }
}

/// Random recursive spanning tree over a shuffled vertex order, respecting a degree cap.
fn random_tree(n: usize, max_degree: usize, rng: &mut ChaCha8Rng) -> Result<BTreeSet<(usize, usize)>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut degree = vec![0usize; n];
    let mut edges = BTreeSet::new();
    for k in 1..n {
        let open: Vec<usize> = order[..k]
            .iter()
            .copied()
            .filter(|&v| degree[v] < max_degree)
            .collect();
        if open.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "degree cap {max_degree} leaves no attachment point"
            )));
        }
        let parent = open[rng.random_range(0..open.len())];
        let child = order[k];
        degree[parent] += 1;
        degree[child] += 1;
        edges.insert((parent.min(child), parent.max(child)));
    }
    Ok(edges)
}

/// Communication graph description as it appears in scenarios and on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSpec {
    Full,
    None,
    Random { avg_degree: f64, seed: u64 },
    Bounded { max_degree: usize, seed: u64 },
    Edges { edges: Vec<(usize, usize)> },
}

impl GraphSpec {
    pub fn build(&self, n: usize) -> Result<CommGraph> {
        match self {
            GraphSpec::Full => Ok(CommGraph::complete(n)),
            GraphSpec::None => Ok(CommGraph::empty(n)),
            GraphSpec::Random { avg_degree, seed } => CommGraph::random_connected(n, *avg_degree, *seed),
            GraphSpec::Bounded { max_degree, seed } => {
                CommGraph::random_bounded_degree(n, *max_degree, *seed)
            }
            GraphSpec::Edges { edges } => CommGraph::new(n, edges.iter().copied()),
        }
    }

    /// Whether planning may proceed on a disconnected result (the "no communication" case).
    pub fn allows_disconnected(&self) -> bool {
        matches!(self, GraphSpec::None)
    }
}

impl fmt::Display for GraphSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphSpec::Full => write!(f, "full"),
            GraphSpec::None => write!(f, "none"),
            GraphSpec::Random { avg_degree, seed } => write!(f, "random:{avg_degree}:{seed}"),
            GraphSpec::Bounded { max_degree, seed } => write!(f, "bounded:{max_degree}:{seed}"),
            GraphSpec::Edges { edges } => {
                let parts: Vec<String> = edges.iter().map(|(a, b)| format!("{a}-{b}")).collect();
                write!(f, "edges:{}", parts.join(","))
            }
        }
    }
}

impl FromStr for GraphSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unrecognized graph spec `{s}`"));
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["full"] => Ok(GraphSpec::Full),
            ["none"] => Ok(GraphSpec::None),
            ["random", deg, seed] => Ok(GraphSpec::Random {
                avg_degree: deg.parse().map_err(|_| bad())?,
                seed: seed.parse().map_err(|_| bad())?,
            }),
            ["bounded", deg, seed] => Ok(GraphSpec::Bounded {
                max_degree: deg.parse().map_err(|_| bad())?,
                seed: seed.parse().map_err(|_| bad())?,
            }),
            ["edges", list] => {
                let edges = list
                    .split(',')
                    .filter(|p| !p.is_empty())
                    .map(|pair| {
                        let (a, b) = pair.split_once('-').ok_or_else(bad)?;
                        Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(GraphSpec::Edges { edges })
            }
            _ => Err(bad()),
        }
    }
}
