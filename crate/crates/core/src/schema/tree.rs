//! Parent-pointer trees: problem modules and discussion threads.
//!
//! A problem module (homework, quiz, exam) is an ordered tree whose leaves
//! receive submissions. Numbering walks the tree depth-first, pre-order, so a
//! parent always receives a smaller id than its descendants.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{Collaboration, Id, Problem};
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TreeError {
    #[error("duplicate order {order} among children of `{parent}`")]
    DuplicateSiblingOrder { parent: String, order: u32 },
    #[error("problem {0} appears more than once")]
    DuplicateId(Id),
    #[error("row {id} points at missing parent {parent}")]
    DanglingParent { id: Id, parent: Id },
    #[error("parent links of row {0} form a cycle")]
    Cycle(Id),
    #[error("thread root {0} not found")]
    MissingRoot(Id),
}

/// Hierarchical description of one problem module, as authored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemTree {
    pub name: String,
    #[serde(default = "default_problem_type")]
    pub problem_type_id: Id,
    /// Explicit position among siblings; when absent the list position (1-based) is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub release: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soft_deadline: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hard_deadline: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_submissions: Option<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<ProblemTree>,
}

fn default_problem_type() -> Id {
    1
}

impl ProblemTree {
    pub fn new(name: impl Into<String>) -> Self {
        ProblemTree {
            name: name.into(),
            problem_type_id: default_problem_type(),
            order: None,
            release: None,
            soft_deadline: None,
            hard_deadline: None,
            max_submissions: None,
            children: Vec::new(),
        }
    }

    pub fn with_children(mut self, children: Vec<ProblemTree>) -> Self {
        self.children = children;
        self
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(ProblemTree::node_count).sum::<usize>()
    }

    /// Same tree with every non-root order filled in and children sorted by it.
    pub fn normalized(&self) -> ProblemTree {
        let mut out = self.clone();
        out.children = self
            .children
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let mut n = c.normalized();
                n.order = Some(c.order.unwrap_or(i as u32 + 1));
                n
            })
            .collect();
        out.children.sort_by_key(|c| c.order);
        out
    }

    /// Leaf names in depth-first order.
    pub fn leaves(&self) -> Vec<&ProblemTree> {
        if self.children.is_empty() {
            return vec![self];
        }
        self.children.iter().flat_map(ProblemTree::leaves).collect()
    }
}

/// Assigns ids depth-first starting at `first_id` and flattens to table rows.
pub fn number_problem_tree(tree: &ProblemTree, first_id: Id) -> Result<Vec<Problem>, TreeError> {
    let mut rows = Vec::with_capacity(tree.node_count());
    let mut next = first_id;
    number_node(tree, None, tree.order, &mut next, &mut rows)?;
    Ok(rows)
}

fn number_node(
    node: &ProblemTree,
    parent: Option<Id>,
    order: Option<u32>,
    next: &mut Id,
    rows: &mut Vec<Problem>,
) -> Result<(), TreeError> {
    let id = *next;
    *next += 1;
    rows.push(Problem {
        problem_id: id,
        problem_parent_id: parent,
        order_id: order,
        problem_name: node.name.clone(),
        problem_type_id: node.problem_type_id,
        problem_release_timestamp: node.release,
        problem_soft_deadline_timestamp: node.soft_deadline,
        problem_hard_deadline_timestamp: node.hard_deadline,
        problem_max_submission: node.max_submissions,
    });

    let mut ordered: Vec<(u32, &ProblemTree)> = node
        .children
        .iter()
        .enumerate()
        .map(|(i, c)| (c.order.unwrap_or(i as u32 + 1), c))
        .collect();
    ordered.sort_by_key(|(o, _)| *o);
    for pair in ordered.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(TreeError::DuplicateSiblingOrder {
                parent: node.name.clone(),
                order: pair[0].0,
            });
        }
    }
    for (order, child) in ordered {
        number_node(child, Some(id), Some(order), next, rows)?;
    }
    Ok(())
}

/// A problem row together with its ordered children.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemNode {
    pub problem: Problem,
    pub children: Vec<ProblemNode>,
}

impl ProblemNode {
    pub fn to_tree(&self) -> ProblemTree {
        let p = &self.problem;
        ProblemTree {
            name: p.problem_name.clone(),
            problem_type_id: p.problem_type_id,
            order: p.order_id,
            release: p.problem_release_timestamp,
            soft_deadline: p.problem_soft_deadline_timestamp,
            hard_deadline: p.problem_hard_deadline_timestamp,
            max_submissions: p.problem_max_submission,
            children: self.children.iter().map(ProblemNode::to_tree).collect(),
        }
    }
}

/// Outcome of a parent-pointer scan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum ForestDefect {
    Dangling { id: Id, parent: Id },
    /// One report per cycle, naming its smallest member.
    Cycle(Id),
}

/// Finds dangling parents and cycles; each defect is reported exactly once.
pub(crate) fn forest_defects(links: &BTreeMap<Id, Option<Id>>) -> Vec<ForestDefect> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Active,
        Done,
    }
    let mut marks: HashMap<Id, Mark> = HashMap::with_capacity(links.len());
    let mut defects = Vec::new();
    for &start in links.keys() {
        if marks.contains_key(&start) {
            continue;
        }
        let mut path = Vec::new();
        let mut cur = start;
        loop {
            match marks.get(&cur) {
                Some(Mark::Done) => break,
                Some(Mark::Active) => {
                    let pos = path.iter().position(|&n| n == cur).expect("active node on path");
                    let smallest = *path[pos..].iter().min().expect("non-empty cycle");
                    defects.push(ForestDefect::Cycle(smallest));
                    break;
                }
                None => {}
            }
            marks.insert(cur, Mark::Active);
            path.push(cur);
            match links[&cur] {
                None => break,
                Some(parent) if links.contains_key(&parent) => cur = parent,
                Some(parent) => {
                    defects.push(ForestDefect::Dangling { id: cur, parent });
                    break;
                }
            }
        }
        for n in path {
            marks.insert(n, Mark::Done);
        }
    }
    defects
}

fn first_defect_error(links: &BTreeMap<Id, Option<Id>>) -> Option<TreeError> {
    forest_defects(links).into_iter().next().map(|d| match d {
        ForestDefect::Dangling { id, parent } => TreeError::DanglingParent { id, parent },
        ForestDefect::Cycle(id) => TreeError::Cycle(id),
    })
}

/// Rebuilds ordered trees from problem rows. Roots come out sorted by id.
pub fn reconstruct_problem_tree(rows: &[Problem]) -> Result<Vec<ProblemNode>, TreeError> {
    let mut links = BTreeMap::new();
    for r in rows {
        if links.insert(r.problem_id, r.problem_parent_id).is_some() {
            return Err(TreeError::DuplicateId(r.problem_id));
        }
    }
    if let Some(err) = first_defect_error(&links) {
        return Err(err);
    }

    let mut children: HashMap<Option<Id>, Vec<&Problem>> = HashMap::new();
    for r in rows {
        children.entry(r.problem_parent_id).or_default().push(r);
    }
    for v in children.values_mut() {
        v.sort_by_key(|p| (p.order_id, p.problem_id));
    }

    fn build(p: &Problem, children: &HashMap<Option<Id>, Vec<&Problem>>) -> ProblemNode {
        ProblemNode {
            problem: p.clone(),
            children: children
                .get(&Some(p.problem_id))
                .map(|kids| kids.iter().map(|k| build(k, children)).collect())
                .unwrap_or_default(),
        }
    }

    let mut roots: Vec<&Problem> = children.get(&None).cloned().unwrap_or_default();
    roots.sort_by_key(|p| p.problem_id);
    Ok(roots.into_iter().map(|r| build(r, &children)).collect())
}

/// A collaboration and its replies, ordered by timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct ThreadNode {
    pub post: Collaboration,
    pub children: Vec<ThreadNode>,
}

impl ThreadNode {
    pub fn size(&self) -> usize {
        1 + self.children.iter().map(ThreadNode::size).sum::<usize>()
    }

    /// (child, parent) id pairs of the whole thread.
    pub fn parent_links(&self) -> Vec<(Id, Id)> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            for c in &n.children {
                out.push((c.post.collaboration_id, n.post.collaboration_id));
                stack.push(c);
            }
        }
        out.sort_unstable();
        out
    }
}

/// Builds the reply tree hanging below `root_id`.
pub fn reconstruct_thread(rows: &[Collaboration], root_id: Id) -> Result<ThreadNode, TreeError> {
    let mut links = BTreeMap::new();
    for r in rows {
        if links.insert(r.collaboration_id, r.collaboration_parent_id).is_some() {
            return Err(TreeError::DuplicateId(r.collaboration_id));
        }
    }
    if !links.contains_key(&root_id) {
        return Err(TreeError::MissingRoot(root_id));
    }
    if let Some(err) = first_defect_error(&links) {
        return Err(err);
    }

    let by_id: HashMap<Id, &Collaboration> = rows.iter().map(|r| (r.collaboration_id, r)).collect();
    let mut children: HashMap<Id, Vec<&Collaboration>> = HashMap::new();
    for r in rows {
        if let Some(p) = r.collaboration_parent_id {
            children.entry(p).or_default().push(r);
        }
    }
    for v in children.values_mut() {
        v.sort_by_key(|c| (c.collaboration_timestamp, c.collaboration_id));
    }

    // Iterative build: threads can be long reply chains.
    let root = by_id[&root_id];
    let mut order: Vec<&Collaboration> = Vec::new();
    let mut stack = vec![root];
    while let Some(c) = stack.pop() {
        order.push(c);
        if let Some(kids) = children.get(&c.collaboration_id) {
            stack.extend(kids.iter().copied());
        }
    }
    let mut built: HashMap<Id, ThreadNode> = HashMap::with_capacity(order.len());
    for c in order.into_iter().rev() {
        let kids = children
            .get(&c.collaboration_id)
            .map(|kids| {
                kids.iter()
                    .map(|k| built.remove(&k.collaboration_id).expect("child built first"))
                    .collect()
            })
            .unwrap_or_default();
        built.insert(
            c.collaboration_id,
            ThreadNode {
                post: c.clone(),
                children: kids,
            },
        );
    }
    Ok(built.remove(&root_id).expect("root built"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_branch_homework() -> ProblemTree {
        let leaves = |prefix: &str, n: usize| {
            (1..=n)
                .map(|i| ProblemTree::new(format!("{prefix}.{i}")))
                .collect::<Vec<_>>()
        };
        ProblemTree::new("homework 1").with_children(vec![
            ProblemTree::new("problem 1").with_children(leaves("p1", 4)),
            ProblemTree::new("problem 2").with_children(leaves("p2", 3)),
        ])
    }

    #[test]
    fn two_problem_homework_numbers_ten_rows() {
        let rows = number_problem_tree(&two_branch_homework(), 1).unwrap();
        assert_eq!(rows.len(), 10);
        let root = &rows[0];
        assert_eq!(root.problem_parent_id, None);
        assert_eq!(root.order_id, None);

        let a = rows.iter().find(|r| r.problem_name == "problem 1").unwrap();
        let b = rows.iter().find(|r| r.problem_name == "problem 2").unwrap();
        assert_eq!(a.problem_parent_id, Some(root.problem_id));
        assert_eq!(b.problem_parent_id, Some(root.problem_id));
        assert_eq!((a.order_id, b.order_id), (Some(1), Some(2)));

        let under = |parent: Id| {
            let mut o: Vec<u32> = rows
                .iter()
                .filter(|r| r.problem_parent_id == Some(parent))
                .map(|r| r.order_id.unwrap())
                .collect();
            o.sort_unstable();
            o
        };
        assert_eq!(under(a.problem_id), vec![1, 2, 3, 4]);
        assert_eq!(under(b.problem_id), vec![1, 2, 3]);

        let mut ids: Vec<Id> = rows.iter().map(|r| r.problem_id).collect();
        ids.dedup();
        assert_eq!(ids, (1..=10).collect::<Vec<_>>());
    }

    #[test]
    fn ten_rows_reconstruct_to_original() {
        let t = two_branch_homework();
        let rows = number_problem_tree(&t, 1).unwrap();
        let forest = reconstruct_problem_tree(&rows).unwrap();
        assert_eq!(forest.len(), 1);
        assert_eq!(forest[0].to_tree(), t.normalized());
        assert_eq!(forest[0].children.len(), 2);
    }

    #[test]
    fn single_node() {
        let rows = number_problem_tree(&ProblemTree::new("quiz"), 7).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].problem_id, 7);
        assert_eq!(rows[0].problem_parent_id, None);
        assert_eq!(rows[0].order_id, None);
    }

    #[test]
    fn duplicate_sibling_order_rejected() {
        let mut a = ProblemTree::new("a");
        a.order = Some(2);
        let mut b = ProblemTree::new("b");
        b.order = Some(2);
        let t = ProblemTree::new("hw").with_children(vec![a, b]);
        assert_eq!(
            number_problem_tree(&t, 1),
            Err(TreeError::DuplicateSiblingOrder {
                parent: "hw".into(),
                order: 2
            })
        );
    }

    #[test]
    fn self_parent_is_a_cycle() {
        let mut rows = number_problem_tree(&ProblemTree::new("x"), 1).unwrap();
        rows[0].problem_parent_id = Some(1);
        assert_eq!(reconstruct_problem_tree(&rows), Err(TreeError::Cycle(1)));
    }

    #[test]
    fn dangling_parent_named() {
        let mut rows = number_problem_tree(&two_branch_homework(), 1).unwrap();
        rows[3].problem_parent_id = Some(99);
        assert_eq!(
            reconstruct_problem_tree(&rows),
            Err(TreeError::DanglingParent { id: 4, parent: 99 })
        );
    }

    #[test]
    fn one_cycle_reported_once() {
        let mut links = BTreeMap::new();
        // 1 -> 2 -> 3 -> 1, plus 4 -> 3 hanging off the cycle.
        links.insert(1, Some(2));
        links.insert(2, Some(3));
        links.insert(3, Some(1));
        links.insert(4, Some(3));
        links.insert(5, None);
        assert_eq!(forest_defects(&links), vec![ForestDefect::Cycle(1)]);
    }
}
