//! Post-hoc reconstruction of lineages and phylogenetic trees from event
//! logs, plus training-curve aggregation.
//!
//! Everything here is pure post-processing over an immutable, globally
//! ordered event log.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{score_serde, ExploitMask, HyperparamVector, MemberId};
use crate::engine::RunReport;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("event log is not globally ordered at counter {0}")]
    UnorderedLog(u64),
    #[error("exploit event {counter} references parent {parent} with no prior state")]
    UnknownParent { counter: u64, parent: MemberId },
    #[error("exploit event {0} carries no parent member")]
    MissingParent(u64),
    #[error("top-k {k} exceeds population size {n}")]
    TopKTooLarge { k: usize, n: usize },
}

/// What happened at one point of a member's history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    /// A run of plain training steps (a zero-length batch marks a member's
    /// birth).
    StepBatch,
    Eval,
    Exploit,
    Explore,
}

/// One record of the exploit/explore history. The log reconstructs both the
/// hyperparameter lineages and the phylogenetic forest of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineageEvent {
    /// Strictly increasing across the whole run.
    pub event_counter: u64,
    pub member_id: MemberId,
    pub kind: EventKind,
    /// Exploit events only: the member whose checkpoint was copied.
    pub parent_member_id: Option<MemberId>,
    /// Exploit events only: what the copy transferred.
    pub mask: Option<ExploitMask>,
    pub h_before: HyperparamVector,
    pub h_after: HyperparamVector,
    #[serde(with = "score_serde")]
    pub p_at_event: f64,
    pub t_at_event: u64,
}

impl LineageEvent {
    /// True when this event re-rooted the member's weights onto its parent.
    fn copies_weights(&self) -> bool {
        self.kind == EventKind::Exploit
            && matches!(
                self.mask,
                None | Some(ExploitMask::All) | Some(ExploitMask::WeightsOnly)
            )
    }

    fn copies_hyperparams(&self) -> bool {
        self.kind == EventKind::Exploit
            && matches!(
                self.mask,
                None | Some(ExploitMask::All) | Some(ExploitMask::HyperparamsOnly)
            )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhyloNode {
    pub member_id: MemberId,
    pub t: u64,
    pub event_counter: u64,
    /// Performance at this point; −∞ before the first eval.
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    /// Consecutive training updates of one member's weights.
    Training,
    /// An exploit copy: the child continues from the parent's weights.
    Branch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhyloEdge {
    pub from: usize,
    pub to: usize,
    pub kind: EdgeKind,
}

/// The phylogenetic forest of a run: training segments plus exploit
/// branches, rooted at the initial population.
#[derive(Debug, Clone, PartialEq)]
pub struct Phylogeny {
    pub nodes: Vec<PhyloNode>,
    pub edges: Vec<PhyloEdge>,
    /// Node index of each initial member.
    pub roots: Vec<usize>,
    /// Node index of each member's final state.
    pub tips: BTreeMap<MemberId, usize>,
    parent: Vec<Option<usize>>,
}

impl Phylogeny {
    /// Walk up to the root above `node`.
    pub fn root_of(&self, mut node: usize) -> usize {
        while let Some(up) = self.parent[node] {
            node = up;
        }
        node
    }

    /// Distinct roots reachable from the final population's tips.
    pub fn final_root_count(&self) -> usize {
        self.tips
            .values()
            .map(|&tip| self.root_of(tip))
            .collect::<BTreeSet<_>>()
            .len()
    }

    /// Every node has at most one parent and no walk up revisits a node.
    pub fn is_forest(&self) -> bool {
        // parent indices always point at earlier nodes, so cycles are
        // impossible by construction; verify anyway
        self.parent
            .iter()
            .enumerate()
            .all(|(i, p)| p.is_none_or(|p| p < i))
    }

    /// GraphViz rendering; edge colors encode the destination node's
    /// performance, min-max normalized per run, from black (weak) to cyan
    /// (strong).
    pub fn to_dot(&self) -> String {
        let finite: Vec<f64> = self
            .nodes
            .iter()
            .map(|n| n.p)
            .filter(|p| p.is_finite())
            .collect();
        let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let norm = |p: f64| -> f64 {
            if !p.is_finite() || hi <= lo {
                0.0
            } else {
                (p - lo) / (hi - lo)
            }
        };
        let mut out = String::from("digraph phylogeny {\n  rankdir=LR;\n  node [shape=point];\n");
        for (i, n) in self.nodes.iter().enumerate() {
            let shape = if self.roots.contains(&i) {
                " shape=circle style=filled fillcolor=pink"
            } else if self.tips.values().any(|&t| t == i) {
                " shape=circle style=filled fillcolor=lightblue"
            } else {
                ""
            };
            out.push_str(&format!(
                "  n{i} [label=\"m{}@{}\"{shape}];\n",
                n.member_id, n.t
            ));
        }
        for e in &self.edges {
            let value = norm(self.nodes[e.to].p);
            let style = match e.kind {
                EdgeKind::Training => "",
                EdgeKind::Branch => " style=dashed",
            };
            out.push_str(&format!(
                "  n{} -> n{} [color=\"0.500 1.000 {value:.3}\"{style}];\n",
                e.from, e.to
            ));
        }
        out.push_str("}\n");
        out
    }
}

/// Build the phylogenetic forest from a globally ordered event log.
///
/// A member's first event creates its root. Weight-copying exploits re-root
/// the member onto its parent's current node, abandoning its old path (the
/// dead branch stays in the graph, as in a phylogenetic tree). All other
/// events extend the member's own training path.
pub fn build_phylogeny(events: &[LineageEvent]) -> Result<Phylogeny, AnalysisError> {
    let mut phylo = Phylogeny {
        nodes: Vec::new(),
        edges: Vec::new(),
        roots: Vec::new(),
        tips: BTreeMap::new(),
        parent: Vec::new(),
    };
    let mut current: BTreeMap<MemberId, usize> = BTreeMap::new();
    let mut last_counter: Option<u64> = None;

    for ev in events {
        if last_counter.is_some_and(|c| ev.event_counter <= c) {
            return Err(AnalysisError::UnorderedLog(ev.event_counter));
        }
        last_counter = Some(ev.event_counter);

        let node = PhyloNode {
            member_id: ev.member_id,
            t: ev.t_at_event,
            event_counter: ev.event_counter,
            p: ev.p_at_event,
        };
        let idx = phylo.nodes.len();

        let from = if let Some(&own) = current.get(&ev.member_id) {
            if ev.copies_weights() {
                let parent = ev
                    .parent_member_id
                    .ok_or(AnalysisError::MissingParent(ev.event_counter))?;
                let &src = current.get(&parent).ok_or(AnalysisError::UnknownParent {
                    counter: ev.event_counter,
                    parent,
                })?;
                Some((src, EdgeKind::Branch))
            } else {
                Some((own, EdgeKind::Training))
            }
        } else {
            None
        };

        phylo.nodes.push(node);
        match from {
            Some((from, kind)) => {
                phylo.parent.push(Some(from));
                phylo.edges.push(PhyloEdge { from, to: idx, kind });
            }
            None => {
                phylo.parent.push(None);
                phylo.roots.push(idx);
            }
        }
        current.insert(ev.member_id, idx);
    }
    phylo.tips = current;
    Ok(phylo)
}

/// Distinct ancestor ids of the live population after replaying the log up
/// to (and including) `at_event_counter`.
pub fn ancestor_census(events: &[LineageEvent], at_event_counter: u64) -> BTreeSet<MemberId> {
    let mut ancestor: BTreeMap<MemberId, MemberId> = BTreeMap::new();
    for ev in events {
        if ev.event_counter > at_event_counter {
            break;
        }
        ancestor.entry(ev.member_id).or_insert(ev.member_id);
        if ev.copies_weights() {
            if let Some(parent) = ev.parent_member_id {
                if let Some(&anc) = ancestor.get(&parent) {
                    ancestor.insert(ev.member_id, anc);
                }
            }
        }
    }
    ancestor.values().copied().collect()
}

/// The hyperparameter schedule experienced by one final member's weight
/// lineage: splice points sit exactly at weight-copying exploit events.
pub type Lineage = Vec<(u64, HyperparamVector)>;

/// For each member of the final population, walk parent links backward to
/// the root and return the forward-time (t, h) schedule of that weight
/// lineage. Only h changes are kept; several changes at the same t collapse
/// to the last one.
pub fn extract_lineages(
    events: &[LineageEvent],
    final_population: &[MemberId],
) -> Result<BTreeMap<MemberId, Lineage>, AnalysisError> {
    // indices of each member's events, in order
    let mut per_member: BTreeMap<MemberId, Vec<usize>> = BTreeMap::new();
    for (i, ev) in events.iter().enumerate() {
        if i > 0 && events[i - 1].event_counter >= ev.event_counter {
            return Err(AnalysisError::UnorderedLog(ev.event_counter));
        }
        per_member.entry(ev.member_id).or_default().push(i);
    }

    let mut out = BTreeMap::new();
    for &member in final_population {
        // walk backward, collecting event indices on the weight lineage
        let mut path: Vec<usize> = Vec::new();
        let mut cursor: Option<(MemberId, usize)> = per_member
            .get(&member)
            .and_then(|list| list.last().map(|&i| (member, i)));
        'walk: while let Some((m, at)) = cursor {
            let list = &per_member[&m];
            let pos = list.binary_search(&at).expect("index comes from the list");
            for &i in list[..=pos].iter().rev() {
                let ev = &events[i];
                path.push(i);
                if ev.copies_weights() {
                    let parent = ev
                        .parent_member_id
                        .ok_or(AnalysisError::MissingParent(ev.event_counter))?;
                    let plist = per_member
                        .get(&parent)
                        .ok_or(AnalysisError::UnknownParent {
                            counter: ev.event_counter,
                            parent,
                        })?;
                    // parent's last event strictly before the copy
                    let before = plist.partition_point(|&j| j < i);
                    if before == 0 {
                        return Err(AnalysisError::UnknownParent {
                            counter: ev.event_counter,
                            parent,
                        });
                    }
                    cursor = Some((parent, plist[before - 1]));
                    continue 'walk;
                }
            }
            cursor = None;
        }
        path.reverse();

        // forward pass: keep h changes, collapsing same-t entries.
        // a weight-copying exploit that does not copy h keeps the inheriting
        // member's own h: the schedule jumps from the parent's h to the
        // child's at the splice point.
        let mut lineage: Lineage = Vec::new();
        let mut current: Option<HyperparamVector> = None;
        for &i in &path {
            let ev = &events[i];
            let h = if ev.kind == EventKind::Exploit && !ev.copies_hyperparams() {
                ev.h_before.clone()
            } else {
                ev.h_after.clone()
            };
            let changed = current.as_ref() != Some(&h);
            if changed || lineage.is_empty() {
                match lineage.last_mut() {
                    Some((t, prev)) if *t == ev.t_at_event => *prev = h.clone(),
                    _ => lineage.push((ev.t_at_event, h.clone())),
                }
                current = Some(h);
            }
        }
        out.insert(member, lineage);
    }
    Ok(out)
}

/// Per-timestep aggregation of eval curves: mean p of the `top_k` best
/// members at each step plus the per-member traces.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveTable {
    pub top_k: usize,
    pub steps: Vec<u64>,
    pub mean_top_k: Vec<f64>,
    /// Per member: one entry per step, `None` where the member has no eval.
    pub per_member: BTreeMap<MemberId, Vec<Option<f64>>>,
}

pub fn aggregate_curves(report: &RunReport, top_k: usize) -> Result<CurveTable, AnalysisError> {
    let members: Vec<MemberId> = report.final_population.iter().map(|m| m.id).collect();
    aggregate_curve_points(&report.curves, &members, top_k)
}

/// Same aggregation when only the raw curve points are at hand (e.g. when
/// re-reading a run directory).
pub fn aggregate_curve_points(
    curves: &[crate::engine::CurvePoint],
    members: &[MemberId],
    top_k: usize,
) -> Result<CurveTable, AnalysisError> {
    let n = members.len();
    if top_k > n {
        return Err(AnalysisError::TopKTooLarge { k: top_k, n });
    }
    let mut by_step: BTreeMap<u64, BTreeMap<MemberId, f64>> = BTreeMap::new();
    for point in curves {
        by_step
            .entry(point.t)
            .or_default()
            .insert(point.member_id, point.p);
    }
    let mut table = CurveTable {
        top_k,
        steps: Vec::new(),
        mean_top_k: Vec::new(),
        per_member: members.iter().map(|&m| (m, Vec::new())).collect(),
    };
    for (step, scores) in by_step {
        let mut best: Vec<f64> = scores.values().copied().collect();
        best.sort_by(|a, b| b.partial_cmp(a).expect("scores are never NaN"));
        let k = top_k.min(best.len());
        table.steps.push(step);
        table.mean_top_k.push(best[..k].iter().sum::<f64>() / k as f64);
        for &m in members {
            table
                .per_member
                .get_mut(&m)
                .expect("initialized above")
                .push(scores.get(&m).copied());
        }
    }
    Ok(table)
}

impl CurveTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,mean_top_k");
        for m in self.per_member.keys() {
            out.push_str(&format!(",p_member_{m}"));
        }
        out.push('\n');
        for (i, step) in self.steps.iter().enumerate() {
            out.push_str(&format!("{step},{}", self.mean_top_k[i]));
            for trace in self.per_member.values() {
                match trace[i] {
                    Some(p) => out.push_str(&format!(",{p}")),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// CSV rendering of extracted lineages: one row per (member, t) schedule
/// point, hyperparameters in name order.
pub fn lineages_to_csv(lineages: &BTreeMap<MemberId, Lineage>) -> String {
    let names: BTreeSet<&String> = lineages
        .values()
        .flat_map(|l| l.iter().flat_map(|(_, h)| h.names()))
        .collect();
    let mut out = String::from("member_id,t");
    for n in &names {
        out.push_str(&format!(",{n}"));
    }
    out.push('\n');
    for (member, lineage) in lineages {
        for (t, h) in lineage {
            out.push_str(&format!("{member},{t}"));
            for n in &names {
                match h.get(n) {
                    Some(v) => out.push_str(&format!(",{v}")),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
    }
    out
}
