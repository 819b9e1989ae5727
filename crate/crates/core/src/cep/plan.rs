use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::naming::Name;
use crate::query::{OpKind, OperatorSpec, QueryAst};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("query has no operators")]
    NoOperators,
    #[error("operator over an unwindowed source")]
    UnwindowedSource,
}

/// One vertex of the operator graph. Ids follow pre-order: parent, then
/// left subtree, then right subtree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanNode {
    pub id: usize,
    pub kind: OpKind,
    pub depth: usize,
    pub expression: String,
    #[serde(skip)]
    pub op: OperatorSpec,
    pub left: Option<Box<PlanNode>>,
    pub right: Option<Box<PlanNode>>,
    pub assigned_node: Option<String>,
}

pub fn build_operator_tree(ast: &QueryAst) -> Result<PlanNode, PlanError> {
    if ast.root.kind() == OpKind::Source {
        return Err(PlanError::NoOperators);
    }
    let mut next = 0;
    build(&ast.root, 0, &mut next)
}

fn build(op: &OperatorSpec, depth: usize, next: &mut usize) -> Result<PlanNode, PlanError> {
    let id = *next;
    *next += 1;
    let mut node = PlanNode {
        id,
        kind: op.kind(),
        depth,
        expression: op.canonical(),
        op: op.clone(),
        left: None,
        right: None,
        assigned_node: None,
    };
    if op.kind() == OpKind::Window {
        return Ok(node);
    }
    let children = op.children();
    for (i, c) in children.into_iter().enumerate() {
        if c.kind() == OpKind::Source {
            return Err(PlanError::UnwindowedSource);
        }
        let child = Box::new(build(c, depth + 1, next)?);
        if i == 0 {
            node.left = Some(child);
        } else {
            node.right = Some(child);
        }
    }
    Ok(node)
}

impl PlanNode {
    pub fn children(&self) -> Vec<&PlanNode> {
        self.left
            .iter()
            .chain(self.right.iter())
            .map(|b| b.as_ref())
            .collect()
    }

    pub fn is_leaf(&self) -> bool {
        self.left.is_none() && self.right.is_none()
    }

    pub fn pre_order(&self) -> Vec<&PlanNode> {
        let mut out = vec![self];
        for c in self.children() {
            out.extend(c.pre_order());
        }
        out
    }

    pub fn find(&self, id: usize) -> Option<&PlanNode> {
        self.pre_order().into_iter().find(|n| n.id == id)
    }

    pub fn parent_of(&self, id: usize) -> Option<usize> {
        self.pre_order()
            .into_iter()
            .find(|n| n.children().iter().any(|c| c.id == id))
            .map(|n| n.id)
    }

    pub fn height(&self) -> usize {
        self.pre_order().iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.pre_order().len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Source read by a leaf window.
    pub fn leaf_source(&self) -> Option<&str> {
        match &self.op {
            OperatorSpec::Window { child, .. } => match child.as_ref() {
                OperatorSpec::Source { name } => Some(name),
                _ => None,
            },
            _ => None,
        }
    }

    /// Copy with `assigned_node` filled from `assignments`.
    pub fn with_assignments(&self, assignments: &BTreeMap<usize, String>) -> PlanNode {
        let mut n = self.clone();
        n.assign(assignments);
        n
    }

    fn assign(&mut self, a: &BTreeMap<usize, String>) {
        self.assigned_node = a.get(&self.id).cloned();
        if let Some(l) = self.left.as_mut() {
            l.assign(a);
        }
        if let Some(r) = self.right.as_mut() {
            r.assign(a);
        }
    }
}

/// Name of the sub continuous interest for plan node `id`.
pub fn sub_name(qname: &Name, id: usize) -> Name {
    qname
        .append("sub")
        .and_then(|n| n.append(id.to_string()))
        .expect("static components are valid")
}

/// Splits `<qname>/sub/<id>` into its parts.
pub fn parse_sub_name(name: &Name) -> Option<(Name, usize)> {
    let c = name.components();
    if c.len() < 3 || c[c.len() - 2] != "sub" {
        return None;
    }
    let id = c[c.len() - 1].parse().ok()?;
    Some((name.prefix(c.len() - 2)?, id))
}

/// Operator trees keyed by canonical query text, so repeated submissions of
/// the same query share one tree.
#[derive(Debug, Default)]
pub struct PlanCache {
    plans: HashMap<String, Arc<PlanNode>>,
    builds: usize,
}

impl PlanCache {
    pub fn get_or_build(&mut self, ast: &QueryAst) -> Result<Arc<PlanNode>, PlanError> {
        let key = ast.canonical();
        if let Some(p) = self.plans.get(&key) {
            return Ok(p.clone());
        }
        let plan = Arc::new(build_operator_tree(ast)?);
        self.builds += 1;
        self.plans.insert(key, plan.clone());
        Ok(plan)
    }

    pub fn builds(&self) -> usize {
        self.builds
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::{parse_query, samples};

    #[test]
    fn window_query_is_single_node() {
        let p = build_operator_tree(&parse_query(samples::WINDOW_QUERY).unwrap()).unwrap();
        assert!(p.is_leaf());
        assert_eq!(p.leaf_source(), Some("GPS_S1"));
        assert_eq!(p.expression, "WINDOW(GPS_S1,4s)");
    }

    #[test]
    fn join_pre_order() {
        let p = build_operator_tree(&parse_query(samples::JOIN_QUERY).unwrap()).unwrap();
        let order: Vec<(usize, OpKind)> = p.pre_order().iter().map(|n| (n.id, n.kind)).collect();
        assert_eq!(
            order,
            vec![
                (0, OpKind::Join),
                (1, OpKind::Filter),
                (2, OpKind::Window),
                (3, OpKind::Filter),
                (4, OpKind::Window)
            ]
        );
        assert_eq!(p.height(), 2);
        assert_eq!(p.parent_of(4), Some(3));
        assert_eq!(p.parent_of(0), None);
        assert_eq!(p.find(4).unwrap().leaf_source(), Some("GPS_S2"));
    }

    #[test]
    fn reuse() {
        let mut cache = PlanCache::default();
        let a = cache
            .get_or_build(&parse_query(samples::FILTER_QUERY).unwrap())
            .unwrap();
        let b = cache
            .get_or_build(&parse_query("FILTER( WINDOW(GPS_S1,4s) , 'latitude' < 50 )").unwrap())
            .unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(cache.builds(), 1);
    }

    #[test]
    fn raw_source_has_no_plan() {
        assert_eq!(
            build_operator_tree(&parse_query("GPS_S1").unwrap()),
            Err(PlanError::NoOperators)
        );
    }

    #[test]
    fn sub_names() {
        let q = Name::parse("/GPS_S1/WINDOW(GPS_S1,4s)").unwrap();
        let s = sub_name(&q, 3);
        assert_eq!(s.to_string(), "/GPS_S1/WINDOW(GPS_S1,4s)/sub/3");
        assert_eq!(parse_sub_name(&s), Some((q.clone(), 3)));
        assert_eq!(parse_sub_name(&q), None);
    }
}
