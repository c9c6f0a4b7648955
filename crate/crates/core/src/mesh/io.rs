//! Plain-text mesh format.
//!
//! ```text
//! sets 2
//! nodes 4
//! cells 2
//! maps 1
//! pcell cells nodes 3
//! 1 2 3
//! 2 4 3
//! dats 1
//! x nodes 2 f64
//! 0 0
//! ...
//! ```
//!
//! Tokens are whitespace separated and `#` starts a comment. Map rows are
//! 1-based. Dat kinds are `f64` (alias `r8`) or `i64`.

use std::fmt::Write as _;
use std::path::Path;

use super::{Mesh, Payload};
use crate::error::FormatError;

struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let mut items = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("");
            items.extend(line.split_whitespace().map(|t| (ln + 1, t)));
        }
        Tokens { items, pos: 0 }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str), FormatError> {
        let tok = self
            .items
            .get(self.pos)
            .copied()
            .ok_or_else(|| FormatError::Eof(format!("expected {what}")))?;
        self.pos += 1;
        Ok(tok)
    }

    fn keyword(&mut self, kw: &str) -> Result<(), FormatError> {
        let (line, tok) = self.next(kw)?;
        if tok != kw {
            return Err(FormatError::Syntax {
                line,
                msg: format!("expected `{kw}`, found `{tok}`"),
            });
        }
        Ok(())
    }

    fn count(&mut self, what: &str) -> Result<usize, FormatError> {
        let (line, tok) = self.next(what)?;
        tok.parse::<usize>().map_err(|_| FormatError::Syntax {
            line,
            msg: format!("{what} must be a non-negative integer, found `{tok}`"),
        })
    }

    fn int(&mut self, what: &str) -> Result<i64, FormatError> {
        let (line, tok) = self.next(what)?;
        tok.parse::<i64>().map_err(|_| FormatError::Syntax {
            line,
            msg: format!("{what} must be an integer, found `{tok}`"),
        })
    }

    fn float(&mut self, what: &str) -> Result<f64, FormatError> {
        let (line, tok) = self.next(what)?;
        tok.parse::<f64>().map_err(|_| FormatError::Syntax {
            line,
            msg: format!("{what} must be a number, found `{tok}`"),
        })
    }

    fn name(&mut self, what: &str) -> Result<(usize, &'a str), FormatError> {
        self.next(what)
    }
}

pub fn parse_mesh(text: &str) -> Result<Mesh, FormatError> {
    let mut t = Tokens::new(text);
    let mut mesh = Mesh::new();

    t.keyword("sets")?;
    for _ in 0..t.count("set count")? {
        let (_, name) = t.name("set name")?;
        let size = t.count("set size")?;
        mesh.decl_set(name, size)?;
    }

    t.keyword("maps")?;
    for _ in 0..t.count("map count")? {
        let (_, name) = t.name("map name")?;
        let from = lookup_set(&mesh, &mut t, "source set")?;
        let to = lookup_set(&mesh, &mut t, "target set")?;
        let arity = t.count("arity")?;
        let n = mesh.set(from).size * arity;
        let mut table = Vec::with_capacity(n);
        for _ in 0..n {
            table.push(t.int("map entry")?);
        }
        mesh.decl_map(name, from, to, arity, &table)?;
    }

    t.keyword("dats")?;
    for _ in 0..t.count("dat count")? {
        let (_, name) = t.name("dat name")?;
        let set = lookup_set(&mesh, &mut t, "dat set")?;
        let dim = t.count("dim")?;
        let (line, kind) = t.name("element kind")?;
        let n = mesh.set(set).size * dim;
        let payload = match kind {
            "f64" | "r8" => {
                let mut v = Vec::with_capacity(n);
                for _ in 0..n {
                    v.push(t.float("dat value")?);
                }
                Payload::F64(v)
            }
            "i64" => {
                let mut v = Vec::with_capacity(n);
                for _ in 0..n {
                    v.push(t.int("dat value")?);
                }
                Payload::I64(v)
            }
            other => {
                return Err(FormatError::Syntax {
                    line,
                    msg: format!("unknown element kind `{other}`"),
                })
            }
        };
        mesh.decl_dat(name, set, dim, payload)?;
    }

    if let Some(&(line, tok)) = t.items.get(t.pos) {
        return Err(FormatError::Syntax {
            line,
            msg: format!("trailing token `{tok}`"),
        });
    }
    Ok(mesh)
}

fn lookup_set(
    mesh: &Mesh,
    t: &mut Tokens<'_>,
    what: &str,
) -> Result<super::SetId, FormatError> {
    let (line, name) = t.name(what)?;
    mesh.set_by_name(name).map_err(|_| FormatError::Syntax {
        line,
        msg: format!("unknown set `{name}`"),
    })
}

pub fn read_mesh(path: &Path) -> Result<Mesh, FormatError> {
    let text = std::fs::read_to_string(path)?;
    parse_mesh(&text)
}

/// Serializes sets, maps and dats. Globals and constants are not part of the format.
pub fn write_mesh(mesh: &Mesh) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "sets {}", mesh.sets.len());
    for s in &mesh.sets {
        let _ = writeln!(out, "{} {}", s.name, s.size);
    }
    let _ = writeln!(out, "maps {}", mesh.maps.len());
    for m in &mesh.maps {
        let _ = writeln!(
            out,
            "{} {} {} {}",
            m.name,
            mesh.set(m.from).name,
            mesh.set(m.to).name,
            m.arity
        );
        for row in m.table.chunks(m.arity) {
            let line: Vec<String> = row.iter().map(|v| (v + 1).to_string()).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
    }
    let _ = writeln!(out, "dats {}", mesh.dats.len());
    for d in &mesh.dats {
        let _ = writeln!(
            out,
            "{} {} {} {}",
            d.name,
            mesh.set(d.set).name,
            d.dim,
            d.kind().name()
        );
        match d.to_aos() {
            Payload::F64(v) => {
                for row in v.chunks(d.dim) {
                    let line: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
                    let _ = writeln!(out, "{}", line.join(" "));
                }
            }
            Payload::I64(v) => {
                for row in v.chunks(d.dim) {
                    let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
                    let _ = writeln!(out, "{}", line.join(" "));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::MeshError;

    const SMALL: &str = "
# two triangles
sets 2
nodes 4
cells 2
maps 1
pcell cells nodes 3
1 2 3   # first
2 4 3
dats 2
x nodes 2 r8
0 0
1 0
0 1
1 1
tag cells 1 i64
7
-3
";

    #[test]
    fn parses_small_mesh() {
        let m = parse_mesh(SMALL).unwrap();
        let cells = m.set_by_name("cells").unwrap();
        assert_eq!(m.set(cells).size, 2);
        let map = m.map_by_name("pcell").unwrap();
        assert_eq!(m.map(map).table(), &[0, 1, 2, 1, 3, 2]);
        let x = m.dat_by_name("x").unwrap();
        assert_eq!(m.get_f64(x, 3, 1).unwrap(), 1.0);
        let tag = m.dat_by_name("tag").unwrap();
        assert_eq!(m.fetch_i64(tag).unwrap(), vec![7, -3]);
    }

    #[test]
    fn write_then_parse() {
        let m = parse_mesh(SMALL).unwrap();
        let text = write_mesh(&m);
        let again = parse_mesh(&text).unwrap();
        assert_eq!(write_mesh(&again), text);
    }

    #[test]
    fn range_error_surfaces() {
        let bad = SMALL.replace("2 4 3", "2 5 3");
        match parse_mesh(&bad) {
            Err(FormatError::Mesh(MeshError::MapRange { position: 4, value: 5, .. })) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn negative_size_rejected() {
        let err = parse_mesh("sets 1\nnodes -3\nmaps 0\ndats 0\n").unwrap_err();
        assert!(matches!(err, FormatError::Syntax { line: 2, .. }));
    }

    #[test]
    fn truncated_input() {
        let err = parse_mesh("sets 1\nnodes 2\nmaps 0\ndats 1\nx nodes 1 f64\n1.0\n").unwrap_err();
        assert!(matches!(err, FormatError::Eof(_)));
    }

    #[test]
    fn unknown_kind() {
        let err = parse_mesh("sets 1\nn 1\nmaps 0\ndats 1\nx n 1 c16\n1\n").unwrap_err();
        assert!(matches!(err, FormatError::Syntax { line: 5, .. }));
    }
}
