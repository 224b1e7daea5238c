//! The transaction network: users as nodes, aggregated transfers as
//! weighted directed edges.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ingest::TransactionRecord;

/// Bijection between user ids and dense node ids `0..len`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NodeIndex {
    users: Vec<String>,
    ids: HashMap<String, usize>,
}

impl NodeIndex {
    pub fn from_users(users: Vec<String>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(users.len());
        for (i, u) in users.iter().enumerate() {
            if ids.insert(u.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate user id {u:?}")));
            }
        }
        Ok(NodeIndex { users, ids })
    }

    fn intern(&mut self, user: &str) -> usize {
        if let Some(&id) = self.ids.get(user) {
            return id;
        }
        let id = self.users.len();
        self.users.push(user.to_owned());
        self.ids.insert(user.to_owned(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn id_of(&self, user: &str) -> Option<usize> {
        self.ids.get(user).copied()
    }

    pub fn user(&self, id: usize) -> Option<&str> {
        self.users.get(id).map(String::as_str)
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }
}

/// Directed (or symmetrised) weighted user-to-user graph.
///
/// Adjacency lists are sorted by neighbour id; weights are transfer counts.
#[derive(Debug, Clone, PartialEq)]
pub struct TransactionNetwork {
    nodes: Arc<NodeIndex>,
    adjacency: Vec<Vec<(usize, u64)>>,
    undirected: bool,
}

/// Builds the network from a record window.
///
/// Parallel transfers collapse into one weighted edge, self-transfers are
/// dropped (their users still become nodes), and node ids follow first
/// appearance (transferor before transferee).
pub fn build_network<'a, I>(records: I) -> Result<TransactionNetwork>
where
    I: IntoIterator<Item = &'a TransactionRecord>,
{
    let mut nodes = NodeIndex::default();
    let mut edges: HashMap<(usize, usize), u64> = HashMap::new();
    for rec in records {
        let u = nodes.intern(&rec.transferor);
        let v = nodes.intern(&rec.transferee);
        if u != v {
            *edges.entry((u, v)).or_default() += 1;
        }
    }
    if nodes.is_empty() {
        return Err(Error::Empty("record window"));
    }
    if edges.is_empty() {
        return Err(Error::Empty("transaction network (no non-self transfers)"));
    }
    let mut adjacency = vec![Vec::new(); nodes.len()];
    for ((u, v), w) in edges {
        adjacency[u].push((v, w));
    }
    for list in &mut adjacency {
        list.sort_unstable();
    }
    Ok(TransactionNetwork {
        nodes: Arc::new(nodes),
        adjacency,
        undirected: false,
    })
}

impl TransactionNetwork {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Number of stored (directed) adjacency entries.
    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    pub fn total_weight(&self) -> u64 {
        self.adjacency.iter().flatten().map(|&(_, w)| w).sum()
    }

    pub fn nodes(&self) -> &Arc<NodeIndex> {
        &self.nodes
    }

    pub fn is_undirected(&self) -> bool {
        self.undirected
    }

    pub fn out_neighbors(&self, node: usize) -> Result<&[(usize, u64)]> {
        self.adjacency
            .get(node)
            .map(Vec::as_slice)
            .ok_or(Error::NodeOutOfRange {
                id: node,
                len: self.node_count(),
            })
    }

    /// Weight of the stored edge `u -> v`, zero when absent.
    pub fn weight(&self, u: usize, v: usize) -> u64 {
        self.adjacency
            .get(u)
            .and_then(|l| l.binary_search_by_key(&v, |&(n, _)| n).ok().map(|i| l[i].1))
            .unwrap_or(0)
    }

    /// Symmetrised view: `w'(u,v) = w(u,v) + w(v,u)` in both directions.
    /// Already-undirected networks are returned unchanged.
    pub fn as_undirected(&self) -> TransactionNetwork {
        if self.undirected {
            return self.clone();
        }
        let mut merged: Vec<HashMap<usize, u64>> = vec![HashMap::new(); self.node_count()];
        for (u, list) in self.adjacency.iter().enumerate() {
            for &(v, w) in list {
                *merged[u].entry(v).or_default() += w;
                *merged[v].entry(u).or_default() += w;
            }
        }
        let adjacency = merged
            .into_iter()
            .map(|m| {
                let mut l: Vec<_> = m.into_iter().collect();
                l.sort_unstable();
                l
            })
            .collect();
        TransactionNetwork {
            nodes: Arc::clone(&self.nodes),
            adjacency,
            undirected: true,
        }
    }

    /// Writes the text edge-list dump.
    ///
    /// Layout: `#nodes <n> #edges <m>`, then `#node <id> <user>` for every
    /// node in id order, then `<u> <v> <weight>` per stored edge using dense
    /// ids. An undirected network is dumped with both directions.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "#nodes {} #edges {}", self.node_count(), self.edge_count())?;
        for (i, u) in self.nodes.users().iter().enumerate() {
            writeln!(out, "#node {i} {u}")?;
        }
        for (u, list) in self.adjacency.iter().enumerate() {
            for &(v, w) in list {
                writeln!(out, "{u} {v} {w}")?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a dump produced by [`write_edge_list`](Self::write_edge_list).
    /// The result is treated as directed.
    pub fn read_edge_list<R: BufRead>(input: R) -> Result<TransactionNetwork> {
        let mut lines = input.lines().enumerate();
        let (n, m) = match lines.next() {
            Some((_, line)) => {
                let line = line?;
                let parts: Vec<&str> = line.split_whitespace().collect();
                match parts.as_slice() {
                    ["#nodes", n, "#edges", m] => (
                        n.parse::<usize>()
                            .map_err(|e| Error::parse(1, "#nodes", e.to_string()))?,
                        m.parse::<usize>()
                            .map_err(|e| Error::parse(1, "#edges", e.to_string()))?,
                    ),
                    _ => return Err(Error::parse(1, "header", "expected `#nodes <n> #edges <m>`")),
                }
            }
            None => return Err(Error::Empty("edge list")),
        };
        let mut users = Vec::with_capacity(n);
        let mut adjacency = vec![Vec::new(); n];
        let mut seen_edges = 0usize;
        for (i, line) in lines {
            let line = line?;
            let line_no = i + 1;
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                [] => continue,
                ["#node", id, user] => {
                    if id.parse::<usize>().ok() != Some(users.len()) {
                        return Err(Error::parse(line_no, "#node", "node ids must be dense and ordered"));
                    }
                    users.push((*user).to_owned());
                }
                [u, v, w] => {
                    let parse =
                        |s: &str, f: &str| s.parse::<u64>().map_err(|e| Error::parse(line_no, f, e.to_string()));
                    let (u, v, w) = (parse(u, "u")? as usize, parse(v, "v")? as usize, parse(w, "weight")?);
                    if u >= n || v >= n {
                        return Err(Error::parse(line_no, "edge", "node id out of range"));
                    }
                    adjacency[u].push((v, w));
                    seen_edges += 1;
                }
                _ => return Err(Error::parse(line_no, "edge", "expected `<u> <v> <weight>`")),
            }
        }
        if users.len() != n || seen_edges != m {
            return Err(Error::corrupt(
                "edge list",
                format!(
                    "header promised {n} nodes / {m} edges, found {} / {seen_edges}",
                    users.len()
                ),
            ));
        }
        if m == 0 {
            return Err(Error::Empty("transaction network (no edges)"));
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(TransactionNetwork {
            nodes: Arc::new(NodeIndex::from_users(users)?),
            adjacency,
            undirected: false,
        })
    }
}
