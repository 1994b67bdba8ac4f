//! Reader for Gmsh ASCII v2.2 `.msh` files.
//!
//! Only 8-node hexahedra (element type 5) become cells. Points, lines,
//! triangles and quadrangles (types 15, 1, 2, 3) are physical-group
//! decorations and are skipped; any other volume element is rejected.
//! Nodes not referenced by a hexahedron are dropped and the rest renumbered
//! in file order.

use std::collections::HashMap;

use crate::error::{FemError, Result};
use crate::mesh::Mesh;

const HEX8: u32 = 5;
const SKIPPED: [u32; 4] = [15, 1, 2, 3];

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        loop {
            match self.inner.next() {
                Some((i, l)) => {
                    self.last = i + 1;
                    let t = l.trim();
                    if !t.is_empty() {
                        return Ok(t);
                    }
                }
                None => return Err(self.err("unexpected end of file")),
            }
        }
    }

    fn err(&self, msg: impl Into<String>) -> FemError {
        FemError::Parse {
            line: self.last,
            msg: msg.into(),
        }
    }

    fn expect(&mut self, tag: &str) -> Result<()> {
        let l = self.next()?;
        if l != tag {
            return Err(self.err(format!("expected {tag}, found {l:?}")));
        }
        Ok(())
    }

    fn parse<T: std::str::FromStr>(&self, tok: Option<&str>, what: &str) -> Result<T> {
        tok.and_then(|t| t.parse().ok())
            .ok_or_else(|| self.err(format!("bad {what}")))
    }
}

pub fn parse_msh(text: &str) -> Result<Mesh> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    let mut raw_nodes: Vec<(u64, [f64; 3])> = Vec::new();
    let mut raw_cells: Vec<[u64; 8]> = Vec::new();
    let mut seen_format = false;
    loop {
        let section = match lines.inner.next() {
            Some((i, l)) => {
                lines.last = i + 1;
                let t = l.trim();
                if t.is_empty() {
                    continue;
                }
                t
            }
            None => break,
        };
        match section {
            "$MeshFormat" => {
                let l = lines.next()?;
                let mut tok = l.split_whitespace();
                let version: f64 = lines.parse(tok.next(), "format version")?;
                let file_type: u32 = lines.parse(tok.next(), "file type")?;
                if !(2.0..3.0).contains(&version) || file_type != 0 {
                    return Err(lines.err(format!("only ASCII v2 is supported, got {l:?}")));
                }
                lines.expect("$EndMeshFormat")?;
                seen_format = true;
            }
            "$Nodes" => {
                let n: usize = {
                    let l = lines.next()?;
                    lines.parse(Some(l), "node count")?
                };
                raw_nodes.reserve(n);
                for _ in 0..n {
                    let l = lines.next()?;
                    let mut tok = l.split_whitespace();
                    let id: u64 = lines.parse(tok.next(), "node id")?;
                    let mut x = [0.0; 3];
                    for v in x.iter_mut() {
                        *v = lines.parse(tok.next(), "node coordinate")?;
                    }
                    raw_nodes.push((id, x));
                }
                lines.expect("$EndNodes")?;
            }
            "$Elements" => {
                let n: usize = {
                    let l = lines.next()?;
                    lines.parse(Some(l), "element count")?
                };
                for _ in 0..n {
                    let l = lines.next()?;
                    let tok: Vec<&str> = l.split_whitespace().collect();
                    if tok.len() < 3 {
                        return Err(lines.err("truncated element record"));
                    }
                    let ty: u32 = lines.parse(Some(tok[1]), "element type")?;
                    let ntags: usize = lines.parse(Some(tok[2]), "tag count")?;
                    if SKIPPED.contains(&ty) {
                        continue;
                    }
                    if ty != HEX8 {
                        return Err(FemError::UnsupportedCell(ty));
                    }
                    let conn = &tok[(3 + ntags).min(tok.len())..];
                    if conn.len() != 8 {
                        return Err(lines.err("hexahedron needs 8 node ids"));
                    }
                    let mut c = [0u64; 8];
                    for (k, t) in conn.iter().enumerate() {
                        c[k] = lines.parse(Some(t), "node id")?;
                    }
                    raw_cells.push(c);
                }
                lines.expect("$EndElements")?;
            }
            s if s.starts_with('$') => {
                let end = format!("$End{}", &s[1..]);
                while lines.next()? != end {}
            }
            other => return Err(lines.err(format!("unexpected line {other:?}"))),
        }
    }
    if !seen_format {
        return Err(FemError::Parse {
            line: 1,
            msg: "missing $MeshFormat".into(),
        });
    }
    if raw_cells.is_empty() {
        return Err(FemError::InvalidArgument(
            "mesh contains no hexahedra".into(),
        ));
    }
    let mut by_id: HashMap<u64, usize> = HashMap::with_capacity(raw_nodes.len());
    for (k, (id, _)) in raw_nodes.iter().enumerate() {
        if by_id.insert(*id, k).is_some() {
            return Err(FemError::InvalidArgument(format!("duplicate node id {id}")));
        }
    }
    let mut used = vec![false; raw_nodes.len()];
    for c in &raw_cells {
        for id in c {
            let k = *by_id.get(id).ok_or_else(|| {
                FemError::InvalidArgument(format!("element references unknown node {id}"))
            })?;
            used[k] = true;
        }
    }
    let mut new_index = vec![usize::MAX; raw_nodes.len()];
    let mut nodes = Vec::new();
    for (k, (_, x)) in raw_nodes.iter().enumerate() {
        if used[k] {
            new_index[k] = nodes.len();
            nodes.push(*x);
        }
    }
    let cells = raw_cells
        .iter()
        .map(|c| c.map(|id| new_index[by_id[&id]]))
        .collect();
    Mesh::new(nodes, cells)
}
