//! OFF mesh reader/writer.
//!
//! Accepts the standard header (`OFF` on its own line, counts on the next)
//! and the widespread malformed variant where the counts share the header
//! line, including the headerless-space form `OFF490 581 0`. Non-triangular
//! faces are fan-triangulated. Parse errors carry 1-based line numbers.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    /// Triangles; indices into `vertices`.
    pub faces: Vec<[usize; 3]>,
}

struct Tokens<'a> {
    items: Vec<(&'a str, usize)>,
    pos: usize,
    last_line: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let mut items = Vec::new();
        let mut last_line = 1;
        for (i, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            };
            for tok in line.split_whitespace() {
                items.push((tok, i + 1));
            }
            last_line = i + 1;
        }
        Tokens {
            items,
            pos: 0,
            last_line,
        }
    }

    fn next(&mut self, what: &str) -> Result<(&'a str, usize)> {
        match self.items.get(self.pos) {
            Some(&(tok, line)) => {
                self.pos += 1;
                Ok((tok, line))
            }
            None => Err(Error::OffParse {
                line: self.last_line,
                msg: format!("truncated file: expected {what}"),
            }),
        }
    }

    fn next_usize(&mut self, what: &str) -> Result<(usize, usize)> {
        let (tok, line) = self.next(what)?;
        let v = tok.parse::<usize>().map_err(|_| Error::OffParse {
            line,
            msg: format!("non-numeric token {tok:?} (expected {what})"),
        })?;
        Ok((v, line))
    }

    fn next_f64(&mut self, what: &str) -> Result<f64> {
        let (tok, line) = self.next(what)?;
        tok.parse::<f64>().map_err(|_| Error::OffParse {
            line,
            msg: format!("non-numeric token {tok:?} (expected {what})"),
        })
    }
}

pub fn parse_off(bytes: &[u8]) -> Result<Mesh> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::OffParse {
        line: 0,
        msg: format!("not valid UTF-8: {e}"),
    })?;
    let mut toks = Tokens::new(text);

    let (header, header_line) = toks.next("OFF header")?;
    if !header.starts_with("OFF") {
        return Err(Error::OffParse {
            line: header_line,
            msg: format!("expected OFF header, found {header:?}"),
        });
    }
    // "OFF490" style: digits glued to the keyword become the vertex count
    let glued = &header[3..];
    let n_vertices = if glued.is_empty() {
        toks.next_usize("vertex count")?.0
    } else {
        glued.parse::<usize>().map_err(|_| Error::OffParse {
            line: header_line,
            msg: format!("bad header {header:?}"),
        })?
    };
    let n_faces = toks.next_usize("face count")?.0;
    let _n_edges = toks.next_usize("edge count")?.0;

    let mut vertices = Vec::with_capacity(n_vertices);
    for _ in 0..n_vertices {
        let x = toks.next_f64("vertex coordinate")?;
        let y = toks.next_f64("vertex coordinate")?;
        let z = toks.next_f64("vertex coordinate")?;
        vertices.push([x, y, z]);
    }

    let mut faces = Vec::with_capacity(n_faces);
    for _ in 0..n_faces {
        let (arity, arity_line) = toks.next_usize("face vertex count")?;
        if arity < 3 {
            return Err(Error::OffParse {
                line: arity_line,
                msg: format!("face with {arity} vertices (need at least 3)"),
            });
        }
        let mut idx = Vec::with_capacity(arity);
        for _ in 0..arity {
            let (v, line) = toks.next_usize("face vertex index")?;
            if v >= n_vertices {
                return Err(Error::OffParse {
                    line,
                    msg: format!("face index {v} out of range (mesh has {n_vertices} vertices)"),
                });
            }
            idx.push(v);
        }
        // fan triangulation around the first vertex
        for i in 1..arity - 1 {
            faces.push([idx[0], idx[i], idx[i + 1]]);
        }
    }

    Ok(Mesh { vertices, faces })
}

/// Canonical OFF text for a triangulated mesh; `parse_off` round-trips it.
pub fn write_off(mesh: &Mesh) -> String {
    let mut out = String::from("OFF\n");
    out.push_str(&format!("{} {} 0\n", mesh.vertices.len(), mesh.faces.len()));
    for v in &mesh.vertices {
        out.push_str(&format!("{} {} {}\n", v[0], v[1], v[2]));
    }
    for f in &mesh.faces {
        out.push_str(&format!("3 {} {} {}\n", f[0], f[1], f[2]));
    }
    out
}
