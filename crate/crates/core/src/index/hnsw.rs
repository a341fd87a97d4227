//! Hierarchical navigable small-world graph with inner-product similarity.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{rank_order, FlatIndex, Hit, IndexError, MipsIndex};
use crate::corpus::PassageHandle;
use crate::encoder::dot;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HnswParams {
    /// Maximum neighbors per node above level 0 (level 0 allows twice this).
    pub m_links: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    /// Seed for level assignment.
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        HnswParams {
            m_links: 16,
            ef_construction: 200,
            ef_search: 64,
            seed: 0,
        }
    }
}

impl HnswParams {
    pub fn validate(&self) -> Result<(), IndexError> {
        if self.m_links < 2 {
            return Err(IndexError::InvalidParams(format!(
                "m_links must be at least 2, got {}",
                self.m_links
            )));
        }
        if self.ef_construction == 0 {
            return Err(IndexError::InvalidParams("ef_construction must be positive".into()));
        }
        if self.ef_search == 0 {
            return Err(IndexError::InvalidParams("ef_search must be positive".into()));
        }
        Ok(())
    }
}

/// A node id paired with its similarity to the current query.
#[derive(Debug, Clone, Copy)]
struct Scored {
    sim: f32,
    node: u32,
}

impl PartialEq for Scored {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Scored {}
impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
/// Greater = more similar; equal similarity prefers the lower node id.
impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim
            .total_cmp(&other.sim)
            .then_with(|| other.node.cmp(&self.node))
    }
}

struct Visited {
    bits: Vec<u64>,
}

impl Visited {
    fn new(n: usize) -> Self {
        Visited {
            bits: vec![0; n.div_ceil(64)],
        }
    }

    /// Marks `i`; returns true if it was not yet marked.
    fn insert(&mut self, i: u32) -> bool {
        let (w, b) = ((i / 64) as usize, i % 64);
        let fresh = self.bits[w] & (1 << b) == 0;
        self.bits[w] |= 1 << b;
        fresh
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HnswIndex {
    base: FlatIndex,
    params: HnswParams,
    /// `links[node][level]` = neighbor ids, for levels `0..=level(node)`.
    links: Vec<Vec<Vec<u32>>>,
    entry_point: u32,
    max_level: usize,
}

impl HnswIndex {
    pub fn build(base: FlatIndex, params: HnswParams) -> Result<Self, IndexError> {
        params.validate()?;
        let n = base.len();
        if n > u32::MAX as usize {
            return Err(IndexError::InvalidParams("more than 2^32 vectors".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let level_mult = 1.0 / (params.m_links as f64).ln();
        let levels: Vec<usize> = (0..n)
            .map(|_| {
                let u: f64 = rng.random::<f64>();
                let l = (-(1.0 - u).ln() * level_mult).floor() as usize;
                l.min(u8::MAX as usize)
            })
            .collect();

        let mut index = HnswIndex {
            base,
            params,
            links: Vec::with_capacity(n),
            entry_point: 0,
            max_level: levels[0],
        };
        index.links.push(vec![Vec::new(); levels[0] + 1]);
        // Rows are copied so `insert` can read them while it rewrites links.
        let space = index.base.data().to_vec();
        for (node, &level) in levels.iter().enumerate().skip(1) {
            index.insert(&space, node as u32, level);
        }
        Ok(index)
    }

    pub(crate) fn from_parts(
        base: FlatIndex,
        params: HnswParams,
        links: Vec<Vec<Vec<u32>>>,
        entry_point: u32,
        max_level: usize,
    ) -> Result<Self, IndexError> {
        let n = base.len();
        if links.len() != n || entry_point as usize >= n {
            return Err(IndexError::Format("graph does not match vector count".into()));
        }
        for node_links in &links {
            if node_links.is_empty() || node_links.len() > max_level + 1 {
                return Err(IndexError::Format("node level out of range".into()));
            }
            if node_links.iter().flatten().any(|&nb| nb as usize >= n) {
                return Err(IndexError::Format("edge references a missing node".into()));
            }
        }
        if links[entry_point as usize].len() != max_level + 1 {
            return Err(IndexError::Format("entry point is not on the top level".into()));
        }
        Ok(HnswIndex {
            base,
            params,
            links,
            entry_point,
            max_level,
        })
    }

    pub fn base(&self) -> &FlatIndex {
        &self.base
    }

    pub fn params(&self) -> HnswParams {
        self.params
    }

    pub fn set_ef_search(&mut self, ef_search: usize) {
        self.params.ef_search = ef_search;
    }

    pub fn entry_point(&self) -> usize {
        self.entry_point as usize
    }

    pub fn max_level(&self) -> usize {
        self.max_level
    }

    pub fn node_level(&self, node: usize) -> usize {
        self.links[node].len() - 1
    }

    pub fn neighbors(&self, node: usize, level: usize) -> &[u32] {
        &self.links[node][level]
    }

    fn row<'a>(&self, space: &'a [f32], node: u32) -> &'a [f32] {
        let d = self.base.dimension();
        &space[node as usize * d..(node as usize + 1) * d]
    }

    fn sim(&self, space: &[f32], query: &[f32], node: u32) -> f32 {
        dot(self.row(space, node), query)
    }

    fn max_links(&self, level: usize) -> usize {
        if level == 0 {
            2 * self.params.m_links
        } else {
            self.params.m_links
        }
    }

    fn greedy_descend(&self, space: &[f32], query: &[f32], mut current: Scored, from: usize, to: usize) -> Scored {
        for level in (to..=from).rev() {
            let mut improved = true;
            while improved {
                improved = false;
                for &nb in &self.links[current.node as usize][level] {
                    let cand = Scored {
                        sim: self.sim(space, query, nb),
                        node: nb,
                    };
                    if cand > current {
                        current = cand;
                        improved = true;
                    }
                }
            }
        }
        current
    }

    /// Beam search within one level; returns up to `ef` nodes, most similar first.
    fn search_level(&self, space: &[f32], query: &[f32], entries: &[Scored], ef: usize, level: usize) -> Vec<Scored> {
        let mut visited = Visited::new(self.base.len());
        let mut candidates: BinaryHeap<Scored> = BinaryHeap::new();
        // Min-heap of the current best `ef` results.
        let mut results: BinaryHeap<std::cmp::Reverse<Scored>> = BinaryHeap::new();
        for &e in entries {
            if visited.insert(e.node) {
                candidates.push(e);
                results.push(std::cmp::Reverse(e));
            }
        }
        while results.len() > ef {
            results.pop();
        }
        while let Some(c) = candidates.pop() {
            let worst = results.peek().map(|r| r.0);
            if let Some(w) = worst {
                if results.len() >= ef && c < w {
                    break;
                }
            }
            for &nb in &self.links[c.node as usize][level] {
                if !visited.insert(nb) {
                    continue;
                }
                let cand = Scored {
                    sim: self.sim(space, query, nb),
                    node: nb,
                };
                let admit = results.len() < ef || results.peek().is_some_and(|w| cand > w.0);
                if admit {
                    candidates.push(cand);
                    results.push(std::cmp::Reverse(cand));
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        let mut out: Vec<Scored> = results.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    /// Diversity heuristic: keep a candidate only if it is more similar to the
    /// base point than to every neighbor already kept, then fill any free
    /// slots with the most similar candidates that were skipped.
    fn select_neighbors(&self, space: &[f32], candidates: &[Scored], max: usize) -> Vec<u32> {
        let mut kept: Vec<u32> = Vec::with_capacity(max);
        for c in candidates {
            if kept.len() >= max {
                break;
            }
            let row = self.row(space, c.node);
            let diverse = kept.iter().all(|&k| dot(row, self.row(space, k)) < c.sim);
            if diverse {
                kept.push(c.node);
            }
        }
        for c in candidates {
            if kept.len() >= max {
                break;
            }
            if !kept.contains(&c.node) {
                kept.push(c.node);
            }
        }
        kept
    }

    fn insert(&mut self, space: &[f32], node: u32, level: usize) {
        self.links.push(vec![Vec::new(); level + 1]);
        let query = self.row(space, node);
        let entry = Scored {
            sim: self.sim(space, query, self.entry_point),
            node: self.entry_point,
        };
        let ep = if self.max_level > level {
            self.greedy_descend(space, query, entry, self.max_level, level + 1)
        } else {
            entry
        };
        let mut entries = vec![ep];
        for lc in (0..=level.min(self.max_level)).rev() {
            let found = self.search_level(space, query, &entries, self.params.ef_construction, lc);
            let max = self.max_links(lc);
            let chosen = self.select_neighbors(space, &found, max);
            self.links[node as usize][lc] = chosen.clone();
            for &nb in &chosen {
                let nb_row = self.row(space, nb);
                let list = &self.links[nb as usize][lc];
                if list.len() < max {
                    self.links[nb as usize][lc].push(node);
                    continue;
                }
                let mut scored: Vec<Scored> = list
                    .iter()
                    .chain(std::iter::once(&node))
                    .map(|&x| Scored {
                        sim: dot(nb_row, self.row(space, x)),
                        node: x,
                    })
                    .collect();
                scored.sort_by(|a, b| b.cmp(a));
                self.links[nb as usize][lc] = self.select_neighbors(space, &scored, max);
            }
            entries = found;
        }
        if level > self.max_level {
            self.max_level = level;
            self.entry_point = node;
        }
    }

    /// Approximate top-k with an explicit beam width.
    pub fn search_with_ef(&self, query: &[f32], k: usize, ef_search: usize) -> Result<Vec<Hit>, IndexError> {
        self.base.check_query(query, k)?;
        if ef_search < k {
            return Err(IndexError::EfTooSmall { ef: ef_search, k });
        }
        let space = self.base.data();
        let entry = Scored {
            sim: self.sim(space, query, self.entry_point),
            node: self.entry_point,
        };
        let ep = if self.max_level > 0 {
            self.greedy_descend(space, query, entry, self.max_level, 1)
        } else {
            entry
        };
        let found = self.search_level(space, query, &[ep], ef_search, 0);
        let mut hits: Vec<Hit> = found
            .into_iter()
            .map(|s| Hit {
                handle: PassageHandle(s.node as usize),
                score: s.sim,
            })
            .collect();
        hits.sort_by(rank_order);
        hits.truncate(k);
        Ok(hits)
    }
}

impl MipsIndex for HnswIndex {
    fn dimension(&self) -> usize {
        self.base.dimension()
    }

    fn len(&self) -> usize {
        self.base.len()
    }

    fn id(&self, handle: PassageHandle) -> Option<&str> {
        self.base.id(handle)
    }

    /// Uses `max(ef_search, k)` as the beam width.
    fn search(&self, query: &[f32], k: usize) -> Result<Vec<Hit>, IndexError> {
        self.search_with_ef(query, k, self.params.ef_search.max(k))
    }
}
