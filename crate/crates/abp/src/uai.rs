//! UAI `MARKOV` model files.
//!
//! Tables are stored as linear potentials in the file and as natural logs in
//! memory. Entry order is row-major in declared scope order, last variable
//! fastest, which is also the in-memory layout.

use std::fmt::Write as _;

use abp_core::{FactorGraph, ModelError};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum UaiError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: nonpositive potential {value}")]
    NonPositive { line: usize, value: f64 },
    #[error("invalid model: {0}")]
    Model(#[from] ModelError),
}

struct Tokens<'a> {
    inner: Box<dyn Iterator<Item = (usize, &'a str)> + 'a>,
    last_line: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let inner = text
            .lines()
            .enumerate()
            .flat_map(|(i, l)| l.split_whitespace().map(move |t| (i + 1, t)));
        Self {
            inner: Box::new(inner),
            last_line: 1,
        }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str), UaiError> {
        match self.inner.next() {
            Some((line, t)) => {
                self.last_line = line;
                Ok((line, t))
            }
            None => Err(UaiError::Syntax {
                line: self.last_line,
                message: format!("unexpected end of input, expected {what}"),
            }),
        }
    }

    fn usize(&mut self, what: &str) -> Result<(usize, usize), UaiError> {
        let (line, t) = self.next(what)?;
        t.parse().map(|v| (line, v)).map_err(|_| UaiError::Syntax {
            line,
            message: format!("expected {what}, found {t:?}"),
        })
    }
}

/// Parse a UAI `MARKOV` model.
pub fn parse_uai(text: &str) -> Result<FactorGraph, UaiError> {
    let mut tok = Tokens::new(text);
    let (line, kind) = tok.next("model type")?;
    if kind != "MARKOV" {
        return Err(UaiError::Syntax {
            line,
            message: format!("expected MARKOV header, found {kind:?}"),
        });
    }
    let (_, n) = tok.usize("variable count")?;
    let mut sizes = Vec::with_capacity(n);
    for _ in 0..n {
        let (line, d) = tok.usize("cardinality")?;
        if d == 0 {
            return Err(UaiError::Syntax {
                line,
                message: "cardinality must be positive".into(),
            });
        }
        sizes.push(d);
    }
    let (_, m) = tok.usize("factor count")?;
    let mut scopes = Vec::with_capacity(m);
    for _ in 0..m {
        let (line, k) = tok.usize("scope size")?;
        if k == 0 {
            return Err(UaiError::Syntax {
                line,
                message: "empty factor scope".into(),
            });
        }
        let mut scope = Vec::with_capacity(k);
        for _ in 0..k {
            let (line, v) = tok.usize("variable index")?;
            if v >= n {
                return Err(UaiError::Syntax {
                    line,
                    message: format!("scope references unknown variable {v}"),
                });
            }
            scope.push(v);
        }
        scopes.push(scope);
    }
    let mut factors = Vec::with_capacity(m);
    for scope in scopes {
        let expected: usize = scope.iter().map(|&v| sizes[v]).product();
        let (line, len) = tok.usize("table length")?;
        if len != expected {
            return Err(UaiError::Syntax {
                line,
                message: format!("table length mismatch: scope needs {expected} entries, table declares {len}"),
            });
        }
        let mut table = Vec::with_capacity(len);
        for _ in 0..len {
            let (line, t) = tok.next("table entry")?;
            let value: f64 = t.parse().map_err(|_| UaiError::Syntax {
                line,
                message: format!("expected table entry, found {t:?}"),
            })?;
            if !(value > 0.0) || !value.is_finite() {
                return Err(UaiError::NonPositive { line, value });
            }
            table.push(value.ln());
        }
        factors.push((scope, table));
    }
    if let Some((line, t)) = tok.inner.next() {
        return Err(UaiError::Syntax {
            line,
            message: format!("trailing data {t:?}"),
        });
    }
    Ok(FactorGraph::new(sizes, factors)?)
}

/// Write `graph` as a UAI `MARKOV` model. Entries use the shortest
/// representation that parses back to the same `f64`.
pub fn serialize_uai(graph: &FactorGraph) -> String {
    let mut out = String::from("MARKOV\n");
    let sizes = graph.domain_sizes();
    let _ = writeln!(out, "{}", sizes.len());
    let cards: Vec<String> = sizes.iter().map(usize::to_string).collect();
    let _ = writeln!(out, "{}", cards.join(" "));
    let _ = writeln!(out, "{}", graph.num_factors());
    for f in graph.factors() {
        let _ = write!(out, "{}", f.arity());
        for v in f.neighbors() {
            let _ = write!(out, " {}", v.0);
        }
        out.push('\n');
    }
    for f in graph.factors() {
        let _ = writeln!(out, "\n{}", f.log_potentials().len());
        let entries: Vec<String> = f.log_potentials().iter().map(|x| format!("{:e}", x.exp())).collect();
        let _ = writeln!(out, "{}", entries.join(" "));
    }
    out
}
