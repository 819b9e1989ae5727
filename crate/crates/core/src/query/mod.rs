//! The meta query language: parser, validator and canonical form.

mod ast;
mod parser;
pub mod samples;
mod validate;

use serde::Serialize;
use thiserror::Error;

use crate::naming::Name;

pub use ast::*;
pub use parser::{parse_query, ParseError};
pub use validate::{validate, validate_with, Diagnostic};

#[derive(Debug, Error, Clone, PartialEq, Serialize)]
pub enum QueryError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("query failed validation: {0:?}")]
    Invalid(Vec<Diagnostic>),
}

/// Parses and validates in one step.
pub fn compile(text: &str, params: &QueryParams) -> Result<QueryAst, QueryError> {
    let ast = parse_query(text)?;
    let diags = validate_with(&ast, params);
    if diags.is_empty() {
        Ok(ast)
    } else {
        Err(QueryError::Invalid(diags))
    }
}

/// A name component carries a query when it contains a call.
pub fn is_query_component(c: &str) -> bool {
    c.contains('(')
}

/// Name under which a query is requested: `/<first source>/<canonical text>`.
/// A bare source is a plain stream subscription named `/<source>`.
pub fn qname(ast: &QueryAst) -> Name {
    let sources = ast.sources();
    let first = sources[0].clone();
    if ast.root.kind() == OpKind::Source {
        Name::from_components([first]).expect("source names are non-empty")
    } else {
        Name::from_components([first, ast.canonical()]).expect("canonical text has no '/'")
    }
}

/// Recovers the query from a query name, returning `None` for names that
/// carry no query component.
pub fn query_of_name(name: &Name) -> Option<Result<QueryAst, ParseError>> {
    let c = name.components();
    if c.len() >= 2 && is_query_component(&c[1]) {
        Some(parse_query(&c[1]))
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qnames() {
        let q = parse_query(samples::FILTER_QUERY).unwrap();
        assert_eq!(
            qname(&q).to_string(),
            "/GPS_S1/FILTER(WINDOW(GPS_S1,4s),'latitude'<50)"
        );
        let raw = parse_query("GPS_S1").unwrap();
        assert_eq!(qname(&raw).to_string(), "/GPS_S1");
        let back = query_of_name(&qname(&q)).unwrap().unwrap();
        assert_eq!(back, q);
        assert!(query_of_name(&qname(&raw)).is_none());
    }

    #[test]
    fn compile_reports_diagnostics() {
        let e = compile("WINDOW(A,0s)", &QueryParams::default()).unwrap_err();
        assert!(matches!(e, QueryError::Invalid(_)));
        assert!(matches!(
            compile("JOIN(WINDOW(A,4s))", &QueryParams::default()),
            Err(QueryError::Parse(_))
        ));
    }
}
