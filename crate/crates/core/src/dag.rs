//! Structure-only directed acyclic graphs, score-equivalence classes and
//! exhaustive enumeration.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Maximum number of variables a [`Dag`] can hold (parent sets are bitmasks).
pub const MAX_VARIABLES: usize = 64;

/// Largest order accepted by [`enumerate_dags`].
pub const MAX_ENUMERATION_ORDER: usize = 6;

/// An arc `from -> to`, by variable index.
pub type Edge = (usize, usize);

/// A directed acyclic graph over named variables.
///
/// Parent sets are stored as bitmasks indexed by variable position; the
/// variable list is shared between graphs derived from one another.
#[derive(Clone)]
pub struct Dag {
    variables: Arc<[String]>,
    parents: Vec<u64>,
}

impl PartialEq for Dag {
    fn eq(&self, other: &Self) -> bool {
        self.parents == other.parents && self.variables == other.variables
    }
}

impl Eq for Dag {}

impl std::hash::Hash for Dag {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.parents.hash(state);
    }
}

impl fmt::Debug for Dag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Dag{{")?;
        for (k, (a, b)) in self.arcs().into_iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{}->{}", self.variables[a], self.variables[b])?;
        }
        write!(f, "}}")
    }
}

impl Dag {
    /// Builds a graph from per-variable parent index lists.
    pub fn new<S: Into<String>>(
        variables: impl IntoIterator<Item = S>,
        parents: &[Vec<usize>],
    ) -> Result<Self> {
        let variables = shared_names(variables)?;
        let n = variables.len();
        if parents.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: parents.len(),
            });
        }
        let mut masks = vec![0u64; n];
        for (child, ps) in parents.iter().enumerate() {
            for &p in ps {
                if p >= n {
                    return Err(Error::IndexOutOfRange { index: p, order: n });
                }
                if p == child {
                    return Err(Error::SelfLoop(variables[child].clone()));
                }
                masks[child] |= 1 << p;
            }
        }
        Self::from_masks(variables, masks)
    }

    /// Builds a graph from an arc list.
    pub fn from_arcs<S: Into<String>>(
        variables: impl IntoIterator<Item = S>,
        arcs: &[Edge],
    ) -> Result<Self> {
        let variables = shared_names(variables)?;
        let mut parents = vec![Vec::new(); variables.len()];
        for &(from, to) in arcs {
            if to >= variables.len() {
                return Err(Error::IndexOutOfRange {
                    index: to,
                    order: variables.len(),
                });
            }
            parents[to].push(from);
        }
        Self::new(variables.iter().cloned(), &parents)
    }

    /// Builds a graph from arcs given by variable name.
    pub fn from_named_arcs<S: Into<String>>(
        variables: impl IntoIterator<Item = S>,
        arcs: &[(&str, &str)],
    ) -> Result<Self> {
        let variables = shared_names(variables)?;
        let lookup = |name: &str| {
            variables
                .iter()
                .position(|v| v == name)
                .ok_or_else(|| Error::UnknownVariable(name.to_string()))
        };
        let idx = arcs
            .iter()
            .map(|(a, b)| Ok((lookup(a)?, lookup(b)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_arcs(variables.iter().cloned(), &idx)
    }

    pub fn empty<S: Into<String>>(variables: impl IntoIterator<Item = S>) -> Result<Self> {
        let variables = shared_names(variables)?;
        let n = variables.len();
        Self::from_masks(variables, vec![0; n])
    }

    /// The complete graph in which every variable is a parent of all
    /// variables after it in `order`.
    pub fn complete<S: Into<String>>(
        variables: impl IntoIterator<Item = S>,
        order: &[usize],
    ) -> Result<Self> {
        let variables = shared_names(variables)?;
        let n = variables.len();
        if order.len() != n || order.iter().collect::<HashSet<_>>().len() != n {
            return Err(Error::InvalidNetwork(
                "order must be a permutation of the variables".into(),
            ));
        }
        let mut masks = vec![0u64; n];
        for (k, &child) in order.iter().enumerate() {
            if child >= n {
                return Err(Error::IndexOutOfRange {
                    index: child,
                    order: n,
                });
            }
            for &p in &order[..k] {
                masks[child] |= 1 << p;
            }
        }
        Self::from_masks(variables, masks)
    }

    pub(crate) fn from_masks(variables: Arc<[String]>, parents: Vec<u64>) -> Result<Self> {
        let dag = Self { variables, parents };
        topological_order(&dag.parents).map_err(|cycle| {
            Error::CycleDetected(cycle.iter().map(|&i| dag.variables[i].clone()).collect())
        })?;
        Ok(dag)
    }

    fn with_masks_unchecked(&self, parents: Vec<u64>) -> Self {
        Self {
            variables: Arc::clone(&self.variables),
            parents,
        }
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }

    pub fn parent_mask(&self, child: usize) -> u64 {
        self.parents[child]
    }

    /// Parent indices of `child`, ascending.
    pub fn parents(&self, child: usize) -> Vec<usize> {
        bits(self.parents[child]).collect()
    }

    pub fn has_arc(&self, from: usize, to: usize) -> bool {
        self.parents[to] & (1 << from) != 0
    }

    pub fn is_adjacent(&self, a: usize, b: usize) -> bool {
        self.has_arc(a, b) || self.has_arc(b, a)
    }

    pub fn arc_count(&self) -> usize {
        self.parents.iter().map(|m| m.count_ones() as usize).sum()
    }

    /// All arcs, sorted lexicographically by `(from, to)`.
    pub fn arcs(&self) -> Vec<Edge> {
        let mut arcs: Vec<Edge> = (0..self.len())
            .flat_map(|c| bits(self.parents[c]).map(move |p| (p, c)))
            .collect();
        arcs.sort_unstable();
        arcs
    }

    /// Deterministic topological order; ties go to the lower index.
    pub fn topological_order(&self) -> Vec<usize> {
        topological_order(&self.parents).expect("Dag invariant: acyclic")
    }

    /// True when `to` can be reached from `from` along directed arcs.
    pub fn reaches(&self, from: usize, to: usize) -> bool {
        if from == to {
            return true;
        }
        let children = self.children_masks();
        let mut seen = 1u64 << from;
        let mut frontier = 1u64 << from;
        while frontier != 0 {
            let mut next = 0u64;
            for v in bits(frontier) {
                next |= children[v];
            }
            next &= !seen;
            if next & (1 << to) != 0 {
                return true;
            }
            seen |= next;
            frontier = next;
        }
        false
    }

    fn children_masks(&self) -> Vec<u64> {
        let mut children = vec![0u64; self.len()];
        for (c, &m) in self.parents.iter().enumerate() {
            for p in bits(m) {
                children[p] |= 1 << c;
            }
        }
        children
    }

    /// Adds `from -> to` if the result stays acyclic.
    pub fn with_arc(&self, from: usize, to: usize) -> Option<Dag> {
        if from == to || self.is_adjacent(from, to) || self.reaches(to, from) {
            return None;
        }
        let mut p = self.parents.clone();
        p[to] |= 1 << from;
        Some(self.with_masks_unchecked(p))
    }

    pub fn without_arc(&self, from: usize, to: usize) -> Option<Dag> {
        if !self.has_arc(from, to) {
            return None;
        }
        let mut p = self.parents.clone();
        p[to] &= !(1 << from);
        Some(self.with_masks_unchecked(p))
    }

    /// Replaces `from -> to` by `to -> from` if the result stays acyclic.
    pub fn with_arc_reversed(&self, from: usize, to: usize) -> Option<Dag> {
        let removed = self.without_arc(from, to)?;
        if removed.reaches(from, to) {
            return None;
        }
        let mut p = removed.parents;
        p[from] |= 1 << to;
        Some(self.with_masks_unchecked(p))
    }

    /// An arc `from -> to` is covered when the parents of `to` are exactly
    /// the parents of `from` plus `from`. Reversing a covered arc keeps the
    /// graph in its equivalence class.
    pub fn is_covered(&self, from: usize, to: usize) -> bool {
        self.has_arc(from, to) && self.parents[to] == self.parents[from] | (1 << from)
    }

    /// Unordered adjacent pairs `(a, b)` with `a < b`.
    pub fn skeleton(&self) -> BTreeSet<(usize, usize)> {
        self.arcs()
            .into_iter()
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect()
    }

    /// Triples `(a, child, b)` with `a < b`, both parents of `child` and
    /// not adjacent to each other.
    pub fn v_structures(&self) -> BTreeSet<(usize, usize, usize)> {
        let mut out = BTreeSet::new();
        for child in 0..self.len() {
            let ps = self.parents(child);
            for (i, &a) in ps.iter().enumerate() {
                for &b in &ps[i + 1..] {
                    if !self.is_adjacent(a, b) {
                        out.insert((a, child, b));
                    }
                }
            }
        }
        out
    }

    /// Same graph with variables reordered to `order` (names must be a
    /// permutation of this graph's variables).
    pub fn reindexed(&self, order: &[String]) -> Result<Dag> {
        if order.len() != self.len() {
            return Err(Error::VariableMismatch);
        }
        let map = order
            .iter()
            .map(|name| self.index_of(name).ok_or(Error::VariableMismatch))
            .collect::<Result<Vec<_>>>()?;
        let mut inverse = vec![0usize; self.len()];
        for (new, &old) in map.iter().enumerate() {
            inverse[old] = new;
        }
        let parents = map
            .iter()
            .map(|&old| bits(self.parents[old]).fold(0u64, |acc, p| acc | 1 << inverse[p]))
            .collect();
        Dag::from_masks(shared_names(order.iter().cloned())?, parents)
    }

    /// Lexicographic key on the sorted arc list; smaller is "simpler".
    pub fn edge_key(&self) -> Vec<Edge> {
        self.arcs()
    }

    /// Graphviz rendering of the structure.
    pub fn to_dot(&self, graph_name: &str) -> String {
        let mut s = format!("digraph {} {{\n", dot_id(graph_name));
        for v in self.variables.iter() {
            s.push_str(&format!("  {};\n", dot_id(v)));
        }
        for (a, b) in self.arcs() {
            s.push_str(&format!(
                "  {} -> {};\n",
                dot_id(&self.variables[a]),
                dot_id(&self.variables[b])
            ));
        }
        s.push_str("}\n");
        s
    }

    fn class_key(&self) -> (Vec<u64>, BTreeSet<(usize, usize, usize)>) {
        let mut skel = vec![0u64; self.len()];
        for (a, b) in self.arcs() {
            skel[a.min(b)] |= 1 << a.max(b);
        }
        (skel, self.v_structures())
    }
}

fn dot_id(s: &str) -> String {
    let plain = !s.is_empty()
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !s.starts_with(|c: char| c.is_ascii_digit());
    if plain {
        s.to_string()
    } else {
        format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
    }
}

pub(crate) fn bits(mut m: u64) -> impl Iterator<Item = usize> {
    std::iter::from_fn(move || {
        if m == 0 {
            None
        } else {
            let i = m.trailing_zeros() as usize;
            m &= m - 1;
            Some(i)
        }
    })
}

fn shared_names<S: Into<String>>(variables: impl IntoIterator<Item = S>) -> Result<Arc<[String]>> {
    let names: Vec<String> = variables.into_iter().map(Into::into).collect();
    if names.len() > MAX_VARIABLES {
        return Err(Error::TooLarge {
            n: names.len(),
            max: MAX_VARIABLES,
        });
    }
    let mut seen = HashSet::new();
    for n in &names {
        if !seen.insert(n.as_str()) {
            return Err(Error::DuplicateVariableName(n.clone()));
        }
    }
    Ok(names.into())
}

/// Kahn's algorithm with lowest-index-first tie breaking. On failure returns
/// the indices of one directed cycle, first node repeated at the end.
pub(crate) fn topological_order(parents: &[u64]) -> std::result::Result<Vec<usize>, Vec<usize>> {
    let n = parents.len();
    let mut placed = 0u64;
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let next = (0..n).find(|&i| placed & (1 << i) == 0 && parents[i] & !placed == 0);
        match next {
            Some(i) => {
                placed |= 1 << i;
                order.push(i);
            }
            None => return Err(find_cycle(parents, placed)),
        }
    }
    Ok(order)
}

fn find_cycle(parents: &[u64], placed: u64) -> Vec<usize> {
    // Every unplaced node has an unplaced parent; walk parents until a repeat.
    let start = (0..parents.len())
        .find(|&i| placed & (1 << i) == 0)
        .expect("some node is unplaced");
    let mut path = vec![start];
    let mut pos: HashMap<usize, usize> = HashMap::from([(start, 0)]);
    let mut cur = start;
    loop {
        let p = bits(parents[cur] & !placed)
            .next()
            .expect("unplaced parent");
        if let Some(&k) = pos.get(&p) {
            let mut cycle: Vec<usize> = path[k..].to_vec();
            cycle.reverse();
            cycle.push(cycle[0]);
            return cycle;
        }
        pos.insert(p, path.len());
        path.push(p);
        cur = p;
    }
}

/// Order of the nodes of a parent-index list, rejecting cycles.
pub fn topological_order_of(variables: &[String], parents: &[Vec<usize>]) -> Result<Vec<usize>> {
    let masks: Vec<u64> = parents
        .iter()
        .map(|ps| ps.iter().fold(0u64, |m, &p| m | 1 << p))
        .collect();
    topological_order(&masks)
        .map_err(|c| Error::CycleDetected(c.into_iter().map(|i| variables[i].clone()).collect()))
}

/// A set of score-equivalent structures.
#[derive(Debug, Clone)]
pub struct EquivalenceClass {
    pub members: Vec<Dag>,
    pub representative: Dag,
}

impl EquivalenceClass {
    pub fn contains(&self, dag: &Dag) -> bool {
        self.members.iter().any(|m| m == dag)
    }
}

/// True iff both graphs share skeleton and v-structures.
pub fn same_class(a: &Dag, b: &Dag) -> Result<bool> {
    if a.variables() != b.variables() {
        return Err(Error::VariableMismatch);
    }
    Ok(a.skeleton() == b.skeleton() && a.v_structures() == b.v_structures())
}

/// Every labeled DAG on `n` variables named `x1..xn`, each exactly once.
pub fn enumerate_dags(n: usize) -> Result<Vec<Dag>> {
    let names: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    enumerate_dags_over(&names)
}

/// Every labeled DAG over the given variables.
pub fn enumerate_dags_over(variables: &[String]) -> Result<Vec<Dag>> {
    let n = variables.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if n > MAX_ENUMERATION_ORDER {
        return Err(Error::TooLarge {
            n,
            max: MAX_ENUMERATION_ORDER,
        });
    }
    let names = shared_names(variables.iter().cloned())?;
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    let mut out = Vec::new();
    let mut parents = vec![0u64; n];
    extend_patterns(&pairs, 0, &mut parents, &mut |p| {
        out.push(Dag {
            variables: Arc::clone(&names),
            parents: p.to_vec(),
        })
    });
    Ok(out)
}

/// Depth-first over pair states (absent, i->j, j->i), pruning any branch
/// whose newest arc closes a cycle.
fn extend_patterns(
    pairs: &[(usize, usize)],
    k: usize,
    parents: &mut Vec<u64>,
    emit: &mut impl FnMut(&[u64]),
) {
    if k == pairs.len() {
        emit(parents);
        return;
    }
    let (i, j) = pairs[k];
    extend_patterns(pairs, k + 1, parents, emit);
    for (from, to) in [(i, j), (j, i)] {
        if !mask_reaches(parents, to, from) {
            parents[to] |= 1 << from;
            extend_patterns(pairs, k + 1, parents, emit);
            parents[to] &= !(1 << from);
        }
    }
}

/// Reachability along arcs, walking parent masks backwards from `to`.
fn mask_reaches(parents: &[u64], from: usize, to: usize) -> bool {
    let mut seen = 1u64 << to;
    let mut frontier = 1u64 << to;
    while frontier != 0 {
        if frontier & (1 << from) != 0 {
            return true;
        }
        let mut next = 0u64;
        for v in bits(frontier) {
            next |= parents[v];
        }
        frontier = next & !seen;
        seen |= next;
    }
    false
}

/// Partitions graphs into score-equivalence classes. Classes appear in the
/// order of their first member; each representative is the member with the
/// lexicographically least arc list.
pub fn partition_classes(dags: &[Dag]) -> Result<Vec<EquivalenceClass>> {
    let Some(first) = dags.first() else {
        return Ok(Vec::new());
    };
    let mut index = HashMap::new();
    let mut groups: Vec<Vec<Dag>> = Vec::new();
    for d in dags {
        if d.variables() != first.variables() {
            return Err(Error::VariableMismatch);
        }
        let slot = *index.entry(d.class_key()).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[slot].push(d.clone());
    }
    Ok(groups
        .into_iter()
        .map(|members| {
            let representative = members
                .iter()
                .min_by_key(|d| d.edge_key())
                .expect("nonempty")
                .clone();
            EquivalenceClass {
                members,
                representative,
            }
        })
        .collect())
}

/// Explores the equivalence class of `dag` through covered-arc reversals.
/// Returns `None` if the class holds more than `limit` members.
pub fn class_of(dag: &Dag, limit: usize) -> Option<EquivalenceClass> {
    let mut seen: HashSet<Dag> = HashSet::from([dag.clone()]);
    let mut members = vec![dag.clone()];
    let mut queue = VecDeque::from([dag.clone()]);
    while let Some(g) = queue.pop_front() {
        for (a, b) in g.arcs() {
            if !g.is_covered(a, b) {
                continue;
            }
            let r = g
                .with_arc_reversed(a, b)
                .expect("covered reversal is acyclic");
            if seen.insert(r.clone()) {
                if members.len() == limit {
                    return None;
                }
                members.push(r.clone());
                queue.push_back(r);
            }
        }
    }
    members.sort_by_key(|d| d.edge_key());
    let representative = members[0].clone();
    Some(EquivalenceClass {
        members,
        representative,
    })
}
