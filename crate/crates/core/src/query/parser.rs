use serde::Serialize;
use thiserror::Error;

use super::ast::*;

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "error")]
pub enum ParseError {
    #[error("syntax error at {pos}: expected {expected}, found {found}")]
    SyntaxError {
        pos: usize,
        expected: String,
        found: String,
    },
    #[error("arity error at {pos}: {op} takes {expected} arguments, got {got}")]
    ArityError {
        pos: usize,
        op: String,
        expected: usize,
        got: usize,
    },
    #[error("unknown operator {name} at {pos}")]
    UnknownOperator { pos: usize, name: String },
}

impl ParseError {
    pub fn pos(&self) -> usize {
        match self {
            ParseError::SyntaxError { pos, .. }
            | ParseError::ArityError { pos, .. }
            | ParseError::UnknownOperator { pos, .. } => *pos,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Duration(u64),
    Quoted(String),
    LParen,
    RParen,
    Comma,
    Dot,
    Cmp(CmpOp),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier {s}"),
            Tok::Number(x) => format!("number {x}"),
            Tok::Duration(ms) => format!("duration {}", fmt_duration(*ms)),
            Tok::Quoted(s) => format!("'{s}'"),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::Comma => "','".into(),
            Tok::Dot => "'.'".into(),
            Tok::Cmp(op) => format!("'{}'", op.symbol()),
            Tok::Eof => "end of input".into(),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let b = text.as_bytes();
    let mut i = 0;
    let mut out = Vec::new();
    let syntax = |pos: usize, expected: &str, found: String| ParseError::SyntaxError {
        pos,
        expected: expected.into(),
        found,
    };
    while i < b.len() {
        let c = b[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'(' => out.push((start, Tok::LParen)),
            b')' => out.push((start, Tok::RParen)),
            b',' => out.push((start, Tok::Comma)),
            b'.' => out.push((start, Tok::Dot)),
            b'=' => out.push((start, Tok::Cmp(CmpOp::Eq))),
            b'<' | b'>' | b'!' => {
                let eq = b.get(i + 1) == Some(&b'=');
                let op = match (c, eq) {
                    (b'<', false) => CmpOp::Lt,
                    (b'<', true) => CmpOp::Le,
                    (b'>', false) => CmpOp::Gt,
                    (b'>', true) => CmpOp::Ge,
                    (b'!', true) => CmpOp::Ne,
                    _ => return Err(syntax(start + 1, "'='", found_at(text, start + 1))),
                };
                if eq {
                    i += 1;
                }
                out.push((start, Tok::Cmp(op)));
            }
            b'\'' => {
                let end = text[i + 1..]
                    .find('\'')
                    .ok_or_else(|| syntax(text.len(), "closing quote", "end of input".into()))?;
                // Query text travels inside a single name component.
                if let Some(slash) = text[i + 1..i + 1 + end].find('/') {
                    return Err(syntax(
                        i + 1 + slash,
                        "quoted text without '/'",
                        "'/'".into(),
                    ));
                }
                out.push((start, Tok::Quoted(text[i + 1..i + 1 + end].to_owned())));
                i += end + 2;
                continue;
            }
            b'-' | b'0'..=b'9' => {
                let mut j = i + 1;
                while j < b.len() && (b[j].is_ascii_digit() || b[j] == b'.') {
                    j += 1;
                }
                let digits = &text[i..j];
                if j < b.len() && b[j].is_ascii_alphabetic() {
                    let mut k = j;
                    while k < b.len() && b[k].is_ascii_alphanumeric() {
                        k += 1;
                    }
                    let unit = &text[j..k];
                    let n: u64 = digits.parse().map_err(|_| {
                        syntax(start, "integer duration", format!("{digits}{unit}"))
                    })?;
                    let ms = match unit {
                        "s" => n.checked_mul(1000),
                        "ms" => Some(n),
                        _ => return Err(syntax(j, "duration unit 's' or 'ms'", unit.to_owned())),
                    }
                    .ok_or_else(|| syntax(start, "duration in range", digits.to_owned()))?;
                    out.push((start, Tok::Duration(ms)));
                    i = k;
                    continue;
                }
                let x: f64 = digits
                    .parse()
                    .map_err(|_| syntax(start, "number", digits.to_owned()))?;
                out.push((start, Tok::Number(x)));
                i = j;
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let mut j = i + 1;
                while j < b.len() && (b[j].is_ascii_alphanumeric() || b[j] == b'_') {
                    j += 1;
                }
                out.push((start, Tok::Ident(text[i..j].to_owned())));
                i = j;
                continue;
            }
            _ => return Err(syntax(start, "token", found_at(text, start))),
        }
        i += 1;
    }
    out.push((text.len(), Tok::Eof));
    Ok(out)
}

fn found_at(text: &str, pos: usize) -> String {
    text[pos..]
        .chars()
        .next()
        .map_or("end of input".into(), |c| format!("'{c}'"))
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].1
    }

    fn pos(&self) -> usize {
        self.toks[self.at].0
    }

    fn bump(&mut self) -> (usize, Tok) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn err(&self, expected: &str) -> ParseError {
        ParseError::SyntaxError {
            pos: self.pos(),
            expected: expected.into(),
            found: self.peek().describe(),
        }
    }

    fn expect(&mut self, tok: Tok, expected: &str) -> Result<(), ParseError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.err(expected))
        }
    }

    /// Separator between arguments `i-1` and `i` of an operator call; turns
    /// an early `)` into an arity error.
    fn arg_sep(&mut self, kind: OpKind, call_pos: usize, got: usize) -> Result<(), ParseError> {
        match self.peek() {
            Tok::Comma => {
                self.bump();
                Ok(())
            }
            Tok::RParen => Err(ParseError::ArityError {
                pos: call_pos,
                op: kind.keyword().into(),
                expected: kind.arity(),
                got,
            }),
            _ => Err(self.err("','")),
        }
    }

    /// Closing parenthesis; extra arguments become an arity error.
    fn close(&mut self, kind: OpKind, call_pos: usize) -> Result<(), ParseError> {
        match self.peek() {
            Tok::RParen => {
                self.bump();
                Ok(())
            }
            Tok::Comma => {
                let got = kind.arity() + self.count_extra_args();
                Err(ParseError::ArityError {
                    pos: call_pos,
                    op: kind.keyword().into(),
                    expected: kind.arity(),
                    got,
                })
            }
            _ => Err(self.err("')'")),
        }
    }

    fn count_extra_args(&self) -> usize {
        let mut depth = 0usize;
        let mut extra = 0;
        for (_, t) in &self.toks[self.at..] {
            match t {
                Tok::LParen => depth += 1,
                Tok::RParen if depth == 0 => break,
                Tok::RParen => depth -= 1,
                Tok::Comma if depth == 0 => extra += 1,
                _ => {}
            }
        }
        extra
    }

    fn operator(&mut self) -> Result<OperatorSpec, ParseError> {
        let (pos, tok) = match self.peek() {
            Tok::Ident(_) => self.bump(),
            _ => return Err(self.err("operator or source")),
        };
        let Tok::Ident(word) = tok else {
            unreachable!()
        };
        if *self.peek() != Tok::LParen {
            return Ok(OperatorSpec::Source { name: word });
        }
        let kind = OpKind::from_keyword(&word).ok_or(ParseError::UnknownOperator {
            pos,
            name: word.clone(),
        })?;
        self.bump();
        if *self.peek() == Tok::RParen {
            return Err(ParseError::ArityError {
                pos,
                op: kind.keyword().into(),
                expected: kind.arity(),
                got: 0,
            });
        }
        let spec = match kind {
            OpKind::Window => {
                let child = self.operator()?;
                self.arg_sep(kind, pos, 1)?;
                let duration_ms = self.duration()?;
                OperatorSpec::Window {
                    duration_ms,
                    child: Box::new(child),
                }
            }
            OpKind::Filter => {
                let child = self.operator()?;
                self.arg_sep(kind, pos, 1)?;
                let predicate = self.predicate()?;
                OperatorSpec::Filter {
                    predicate,
                    child: Box::new(child),
                }
            }
            OpKind::Join => {
                let left = self.operator()?;
                self.arg_sep(kind, pos, 1)?;
                let right = self.operator()?;
                self.arg_sep(kind, pos, 2)?;
                let predicate = self.join_predicate()?;
                OperatorSpec::Join {
                    predicate,
                    left: Box::new(left),
                    right: Box::new(right),
                }
            }
            OpKind::Aggregate => {
                let func = match self.peek().clone() {
                    Tok::Ident(f) => match AggFn::parse(&f) {
                        Some(func) => {
                            self.bump();
                            func
                        }
                        None => return Err(self.err("max, min, count, sum or avg")),
                    },
                    _ => return Err(self.err("max, min, count, sum or avg")),
                };
                self.arg_sep(kind, pos, 1)?;
                let attr = self.quoted("quoted attribute")?;
                self.arg_sep(kind, pos, 2)?;
                let child = self.operator()?;
                OperatorSpec::Aggregate {
                    func,
                    attr,
                    child: Box::new(child),
                }
            }
            OpKind::Heatmap => {
                let c = self.quoted("quoted cell size")?;
                let cell_size = match c.trim().parse::<f64>() {
                    Ok(v) => Param::Value(v),
                    Err(_) => Param::Named(c),
                };
                self.arg_sep(kind, pos, 1)?;
                let a = self.quoted("quoted area")?;
                let area = match Area::parse(&a) {
                    Some(v) => Param::Value(v),
                    None => Param::Named(a),
                };
                self.arg_sep(kind, pos, 2)?;
                let child = self.operator()?;
                OperatorSpec::Heatmap {
                    cell_size,
                    area,
                    child: Box::new(child),
                }
            }
            OpKind::Predict => {
                let interval_ms = self.duration()?;
                self.arg_sep(kind, pos, 1)?;
                let child = self.operator()?;
                OperatorSpec::Predict {
                    interval_ms,
                    child: Box::new(child),
                }
            }
            OpKind::Source => unreachable!("sources have no call syntax"),
        };
        self.close(kind, pos)?;
        Ok(spec)
    }

    fn duration(&mut self) -> Result<u64, ParseError> {
        match self.peek() {
            Tok::Duration(ms) => {
                let ms = *ms;
                self.bump();
                Ok(ms)
            }
            _ => Err(self.err("duration like 4s or 500ms")),
        }
    }

    fn quoted(&mut self, expected: &str) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Quoted(s) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.err(expected)),
        }
    }

    fn predicate(&mut self) -> Result<Predicate, ParseError> {
        let attr = self.quoted("quoted attribute")?;
        let op = match self.peek() {
            Tok::Cmp(op) => *op,
            _ => return Err(self.err("comparison operator")),
        };
        self.bump();
        let value = match self.peek().clone() {
            Tok::Number(x) => Literal::Num(x),
            Tok::Quoted(s) => Literal::Str(s),
            _ => return Err(self.err("number or quoted string")),
        };
        self.bump();
        Ok(Predicate { attr, op, value })
    }

    fn qualified(&mut self) -> Result<QualifiedAttr, ParseError> {
        let source = match self.peek().clone() {
            Tok::Ident(s) => s,
            _ => return Err(self.err("source name")),
        };
        self.bump();
        self.expect(Tok::Dot, "'.'")?;
        let attr = self.quoted("quoted attribute")?;
        Ok(QualifiedAttr { source, attr })
    }

    fn join_predicate(&mut self) -> Result<JoinPredicate, ParseError> {
        let left = self.qualified()?;
        self.expect(Tok::Cmp(CmpOp::Eq), "'='")?;
        let right = self.qualified()?;
        Ok(JoinPredicate { left, right })
    }
}

pub fn parse_query(text: &str) -> Result<QueryAst, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, at: 0 };
    let root = p.operator()?;
    if *p.peek() != Tok::Eof {
        return Err(p.err("end of input"));
    }
    Ok(QueryAst {
        root,
        text: text.to_owned(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::samples::*;

    #[test]
    fn window_query() {
        let q = parse_query(WINDOW_QUERY).unwrap();
        assert_eq!(
            q.root,
            OperatorSpec::Window {
                duration_ms: 4000,
                child: Box::new(OperatorSpec::Source {
                    name: "GPS_S1".into()
                })
            }
        );
        assert_eq!(q.canonical(), "WINDOW(GPS_S1,4s)");
    }

    #[test]
    fn join_query_shape() {
        let q = parse_query(JOIN_QUERY).unwrap();
        assert_eq!(q.root.operator_count(), 5);
        assert_eq!(q.sources(), vec!["GPS_S1", "GPS_S2"]);
        let back = parse_query(&q.canonical()).unwrap();
        assert_eq!(back, q);
    }

    #[test]
    fn whitespace_insensitive() {
        let a = parse_query(FILTER_QUERY).unwrap();
        let b = parse_query(" FILTER ( WINDOW ( GPS_S1 ,4s ) , 'latitude' < 50 ) ").unwrap();
        assert_eq!(a.canonical(), b.canonical());
        assert_eq!(a.canonical(), "FILTER(WINDOW(GPS_S1,4s),'latitude'<50)");
    }

    #[test]
    fn join_needs_two_streams() {
        let e = parse_query("JOIN(WINDOW(A,4s))").unwrap_err();
        assert_eq!(
            e,
            ParseError::ArityError {
                pos: 0,
                op: "JOIN".into(),
                expected: 3,
                got: 1
            }
        );
    }

    #[test]
    fn too_many_args() {
        let e = parse_query("WINDOW(A,4s,5s)").unwrap_err();
        assert!(matches!(e, ParseError::ArityError { got: 3, .. }));
    }

    #[test]
    fn unknown_operator() {
        let e = parse_query("WINDOWS(A,4s)").unwrap_err();
        assert_eq!(
            e,
            ParseError::UnknownOperator {
                pos: 0,
                name: "WINDOWS".into()
            }
        );
    }

    #[test]
    fn empty_input() {
        assert_eq!(parse_query("").unwrap_err().pos(), 0);
    }

    #[test]
    fn durations() {
        let q = parse_query("WINDOW(A,250ms)").unwrap();
        assert_eq!(q.canonical(), "WINDOW(A,250ms)");
        assert!(parse_query("WINDOW(A,4h)").is_err());
        assert!(parse_query("WINDOW(A,4)").is_err());
    }

    #[test]
    fn all_comparisons() {
        for op in ["<", ">", "<=", ">=", "=", "!="] {
            let text = format!("FILTER(WINDOW(A,1s),'x'{op}-2.5)");
            let q = parse_query(&text).unwrap();
            assert_eq!(q.canonical(), text);
        }
        let q = parse_query("FILTER(WINDOW(A,1s),'property'='load')").unwrap();
        assert_eq!(q.canonical(), "FILTER(WINDOW(A,1s),'property'='load')");
    }

    #[test]
    fn heatmap_and_predict() {
        let q = parse_query("HEATMAP(\n 'cell_size', 'area',\n WINDOW(GPS_S1, 4s)\n)").unwrap();
        assert_eq!(
            q.canonical(),
            "HEATMAP('cell_size','area',WINDOW(GPS_S1,4s))"
        );
        let q = parse_query("HEATMAP('0.5','-10,-20,10,20',WINDOW(GPS_S1,4s))").unwrap();
        let OperatorSpec::Heatmap {
            cell_size, area, ..
        } = &q.root
        else {
            panic!()
        };
        assert_eq!(*cell_size, Param::Value(0.5));
        assert_eq!(
            *area,
            Param::Value(Area {
                min_lat: -10.0,
                min_lon: -20.0,
                max_lat: 10.0,
                max_lon: 20.0
            })
        );
        let q = parse_query("PREDICT(30s, WINDOW(PLUG_S1, 4s))").unwrap();
        assert_eq!(q.canonical(), "PREDICT(30s,WINDOW(PLUG_S1,4s))");
    }

    #[test]
    fn aggregate() {
        let q = parse_query("AGGREGATE(avg, 'speed', WINDOW(GPS_S1, 4s))").unwrap();
        assert_eq!(q.canonical(), "AGGREGATE(avg,'speed',WINDOW(GPS_S1,4s))");
        assert!(parse_query("AGGREGATE(median,'speed',WINDOW(GPS_S1,4s))").is_err());
    }

    #[test]
    fn positioned_errors() {
        let e = parse_query("FILTER(WINDOW(GPS_S1, 4s) 'latitude'<50)").unwrap_err();
        assert_eq!(e.pos(), 26);
        let e = parse_query("WINDOW(GPS_S1, 4s").unwrap_err();
        assert_eq!(e.pos(), 17);
        let e = parse_query("FILTER(WINDOW(GPS_S1,4s),'latitude<50)").unwrap_err();
        assert!(matches!(e, ParseError::SyntaxError { .. }));
    }
}
