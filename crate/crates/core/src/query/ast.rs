use std::fmt;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum CmpOp {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Gt => ">",
            CmpOp::Le => "<=",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
        }
    }

    pub fn holds<T: PartialOrd>(self, a: &T, b: &T) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Gt => a > b,
            CmpOp::Le => a <= b,
            CmpOp::Ge => a >= b,
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Literal {
    Num(f64),
    Str(String),
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Num(x) => write!(f, "{x}"),
            Literal::Str(s) => write!(f, "'{s}'"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Predicate {
    pub attr: String,
    pub op: CmpOp,
    pub value: Literal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QualifiedAttr {
    pub source: String,
    pub attr: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct JoinPredicate {
    pub left: QualifiedAttr,
    pub right: QualifiedAttr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AggFn {
    Max,
    Min,
    Count,
    Sum,
    Avg,
}

impl AggFn {
    pub fn parse(s: &str) -> Option<AggFn> {
        match s {
            "max" => Some(AggFn::Max),
            "min" => Some(AggFn::Min),
            "count" => Some(AggFn::Count),
            "sum" => Some(AggFn::Sum),
            "avg" => Some(AggFn::Avg),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AggFn::Max => "max",
            AggFn::Min => "min",
            AggFn::Count => "count",
            AggFn::Sum => "sum",
            AggFn::Avg => "avg",
        }
    }
}

/// Bounding box `minLat,minLon,maxLat,maxLon` in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Area {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl Area {
    pub const WORLD: Area = Area {
        min_lat: -90.0,
        min_lon: -180.0,
        max_lat: 90.0,
        max_lon: 180.0,
    };

    pub fn parse(s: &str) -> Option<Area> {
        let v: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse().ok())
            .collect::<Option<_>>()?;
        match v[..] {
            [min_lat, min_lon, max_lat, max_lon] => Some(Area {
                min_lat,
                min_lon,
                max_lat,
                max_lon,
            }),
            _ => None,
        }
    }

    pub fn is_well_ordered(&self) -> bool {
        self.min_lat < self.max_lat && self.min_lon < self.max_lon
    }
}

impl fmt::Display for Area {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{}",
            self.min_lat, self.min_lon, self.max_lat, self.max_lon
        )
    }
}

/// A heatmap parameter is either a literal or the name of a value supplied
/// by the deployment (`'cell_size'`, `'area'`).
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Param<T> {
    Named(String),
    Value(T),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryParams {
    pub cell_size: f64,
    pub area: Area,
}

impl Default for QueryParams {
    fn default() -> Self {
        QueryParams {
            cell_size: 10.0,
            area: Area::WORLD,
        }
    }
}

impl QueryParams {
    pub fn cell_size(&self, p: &Param<f64>) -> Option<f64> {
        match p {
            Param::Value(v) => Some(*v),
            Param::Named(n) if n == "cell_size" => Some(self.cell_size),
            Param::Named(_) => None,
        }
    }

    pub fn area(&self, p: &Param<Area>) -> Option<Area> {
        match p {
            Param::Value(a) => Some(*a),
            Param::Named(n) if n == "area" => Some(self.area),
            Param::Named(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "op", rename_all = "UPPERCASE")]
pub enum OperatorSpec {
    Source {
        name: String,
    },
    Window {
        duration_ms: u64,
        child: Box<OperatorSpec>,
    },
    Filter {
        predicate: Predicate,
        child: Box<OperatorSpec>,
    },
    Join {
        predicate: JoinPredicate,
        left: Box<OperatorSpec>,
        right: Box<OperatorSpec>,
    },
    Aggregate {
        func: AggFn,
        attr: String,
        child: Box<OperatorSpec>,
    },
    Heatmap {
        cell_size: Param<f64>,
        area: Param<Area>,
        child: Box<OperatorSpec>,
    },
    Predict {
        interval_ms: u64,
        child: Box<OperatorSpec>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum OpKind {
    Source,
    Window,
    Filter,
    Join,
    Aggregate,
    Heatmap,
    Predict,
}

impl OpKind {
    pub fn keyword(self) -> &'static str {
        match self {
            OpKind::Source => "SOURCE",
            OpKind::Window => "WINDOW",
            OpKind::Filter => "FILTER",
            OpKind::Join => "JOIN",
            OpKind::Aggregate => "AGGREGATE",
            OpKind::Heatmap => "HEATMAP",
            OpKind::Predict => "PREDICT",
        }
    }

    pub fn from_keyword(s: &str) -> Option<OpKind> {
        match s {
            "WINDOW" => Some(OpKind::Window),
            "FILTER" => Some(OpKind::Filter),
            "JOIN" => Some(OpKind::Join),
            "AGGREGATE" => Some(OpKind::Aggregate),
            "HEATMAP" => Some(OpKind::Heatmap),
            "PREDICT" => Some(OpKind::Predict),
            _ => None,
        }
    }

    /// Number of arguments between the parentheses.
    pub fn arity(self) -> usize {
        match self {
            OpKind::Source => 0,
            OpKind::Window | OpKind::Filter | OpKind::Predict => 2,
            OpKind::Join | OpKind::Aggregate | OpKind::Heatmap => 3,
        }
    }
}

impl OperatorSpec {
    pub fn kind(&self) -> OpKind {
        match self {
            OperatorSpec::Source { .. } => OpKind::Source,
            OperatorSpec::Window { .. } => OpKind::Window,
            OperatorSpec::Filter { .. } => OpKind::Filter,
            OperatorSpec::Join { .. } => OpKind::Join,
            OperatorSpec::Aggregate { .. } => OpKind::Aggregate,
            OperatorSpec::Heatmap { .. } => OpKind::Heatmap,
            OperatorSpec::Predict { .. } => OpKind::Predict,
        }
    }

    pub fn children(&self) -> Vec<&OperatorSpec> {
        match self {
            OperatorSpec::Source { .. } => vec![],
            OperatorSpec::Join { left, right, .. } => vec![left, right],
            OperatorSpec::Window { child, .. }
            | OperatorSpec::Filter { child, .. }
            | OperatorSpec::Aggregate { child, .. }
            | OperatorSpec::Heatmap { child, .. }
            | OperatorSpec::Predict { child, .. } => vec![child],
        }
    }

    /// Source names, left to right, without repeats.
    pub fn sources(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_sources(&mut out);
        out
    }

    fn collect_sources(&self, out: &mut Vec<String>) {
        if let OperatorSpec::Source { name } = self {
            if !out.contains(name) {
                out.push(name.clone());
            }
        }
        for c in self.children() {
            c.collect_sources(out);
        }
    }

    /// Number of operator nodes, sources excluded.
    pub fn operator_count(&self) -> usize {
        let own = usize::from(self.kind() != OpKind::Source);
        own + self
            .children()
            .iter()
            .map(|c| c.operator_count())
            .sum::<usize>()
    }

    /// Fully parenthesized text without whitespace.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        self.write_canonical(&mut s);
        s
    }

    fn write_canonical(&self, s: &mut String) {
        use std::fmt::Write;
        match self {
            OperatorSpec::Source { name } => s.push_str(name),
            OperatorSpec::Window { duration_ms, child } => {
                s.push_str("WINDOW(");
                child.write_canonical(s);
                let _ = write!(s, ",{})", fmt_duration(*duration_ms));
            }
            OperatorSpec::Filter { predicate, child } => {
                s.push_str("FILTER(");
                child.write_canonical(s);
                let _ = write!(
                    s,
                    ",'{}'{}{})",
                    predicate.attr,
                    predicate.op.symbol(),
                    predicate.value
                );
            }
            OperatorSpec::Join {
                predicate,
                left,
                right,
            } => {
                s.push_str("JOIN(");
                left.write_canonical(s);
                s.push(',');
                right.write_canonical(s);
                let _ = write!(
                    s,
                    ",{}.'{}'={}.'{}')",
                    predicate.left.source,
                    predicate.left.attr,
                    predicate.right.source,
                    predicate.right.attr
                );
            }
            OperatorSpec::Aggregate { func, attr, child } => {
                let _ = write!(s, "AGGREGATE({},'{}',", func.name(), attr);
                child.write_canonical(s);
                s.push(')');
            }
            OperatorSpec::Heatmap {
                cell_size,
                area,
                child,
            } => {
                s.push_str("HEATMAP(");
                match cell_size {
                    Param::Named(n) => {
                        let _ = write!(s, "'{n}',");
                    }
                    Param::Value(v) => {
                        let _ = write!(s, "'{v}',");
                    }
                }
                match area {
                    Param::Named(n) => {
                        let _ = write!(s, "'{n}',");
                    }
                    Param::Value(a) => {
                        let _ = write!(s, "'{a}',");
                    }
                }
                child.write_canonical(s);
                s.push(')');
            }
            OperatorSpec::Predict { interval_ms, child } => {
                let _ = write!(s, "PREDICT({},", fmt_duration(*interval_ms));
                child.write_canonical(s);
                s.push(')');
            }
        }
    }
}

pub fn fmt_duration(ms: u64) -> String {
    if ms.is_multiple_of(1000) {
        format!("{}s", ms / 1000)
    } else {
        format!("{ms}ms")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryAst {
    pub root: OperatorSpec,
    pub text: String,
}

impl QueryAst {
    pub fn canonical(&self) -> String {
        self.root.canonical()
    }

    pub fn sources(&self) -> Vec<String> {
        self.root.sources()
    }
}

/// Structural equality; the original text is ignored.
impl PartialEq for QueryAst {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root
    }
}

pub fn to_canonical_expression(ast: &QueryAst) -> String {
    ast.canonical()
}
