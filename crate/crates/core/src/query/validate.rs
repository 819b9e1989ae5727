use serde::Serialize;

use super::ast::*;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "diagnostic")]
pub enum Diagnostic {
    InvalidDuration { op: OpKind, ms: u64 },
    InvalidArea { area: String },
    InvalidCellSize { value: f64 },
    UnknownParameter { name: String },
    WindowChildNotSource { found: OpKind },
    SourceNotWindowed { op: OpKind },
    NotATupleStream { op: OpKind, child: OpKind },
    JoinSourceMismatch { source: String },
}

/// Checks operator invariants with the default deployment parameters.
pub fn validate(ast: &QueryAst) -> Vec<Diagnostic> {
    validate_with(ast, &QueryParams::default())
}

pub fn validate_with(ast: &QueryAst, params: &QueryParams) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    check(&ast.root, params, &mut out);
    out
}

fn produces_tuples(op: &OperatorSpec) -> bool {
    matches!(op.kind(), OpKind::Window | OpKind::Filter | OpKind::Join)
}

fn check_tuple_child(op: OpKind, child: &OperatorSpec, out: &mut Vec<Diagnostic>) {
    if child.kind() == OpKind::Source {
        out.push(Diagnostic::SourceNotWindowed { op });
    } else if !produces_tuples(child) {
        out.push(Diagnostic::NotATupleStream {
            op,
            child: child.kind(),
        });
    }
}

fn check(op: &OperatorSpec, params: &QueryParams, out: &mut Vec<Diagnostic>) {
    match op {
        OperatorSpec::Source { .. } => {}
        OperatorSpec::Window { duration_ms, child } => {
            if *duration_ms == 0 {
                out.push(Diagnostic::InvalidDuration {
                    op: OpKind::Window,
                    ms: 0,
                });
            }
            if child.kind() != OpKind::Source {
                out.push(Diagnostic::WindowChildNotSource {
                    found: child.kind(),
                });
            }
        }
        OperatorSpec::Filter { child, .. } | OperatorSpec::Aggregate { child, .. } => {
            check_tuple_child(op.kind(), child, out);
        }
        OperatorSpec::Join {
            predicate,
            left,
            right,
        } => {
            check_tuple_child(OpKind::Join, left, out);
            check_tuple_child(OpKind::Join, right, out);
            if !left.sources().contains(&predicate.left.source) {
                out.push(Diagnostic::JoinSourceMismatch {
                    source: predicate.left.source.clone(),
                });
            }
            if !right.sources().contains(&predicate.right.source) {
                out.push(Diagnostic::JoinSourceMismatch {
                    source: predicate.right.source.clone(),
                });
            }
        }
        OperatorSpec::Heatmap {
            cell_size,
            area,
            child,
        } => {
            match params.cell_size(cell_size) {
                Some(c) if c > 0.0 && c.is_finite() => {}
                Some(c) => out.push(Diagnostic::InvalidCellSize { value: c }),
                None => out.push(Diagnostic::UnknownParameter {
                    name: named(cell_size),
                }),
            }
            match params.area(area) {
                Some(a) if a.is_well_ordered() => {}
                Some(a) => out.push(Diagnostic::InvalidArea {
                    area: a.to_string(),
                }),
                None => out.push(Diagnostic::UnknownParameter { name: named(area) }),
            }
            check_tuple_child(OpKind::Heatmap, child, out);
        }
        OperatorSpec::Predict { interval_ms, child } => {
            if *interval_ms == 0 {
                out.push(Diagnostic::InvalidDuration {
                    op: OpKind::Predict,
                    ms: 0,
                });
            }
            check_tuple_child(OpKind::Predict, child, out);
        }
    }
    for c in op.children() {
        check(c, params, out);
    }
}

fn named<T>(p: &Param<T>) -> String {
    match p {
        Param::Named(n) => n.clone(),
        Param::Value(_) => String::new(),
    }
}
