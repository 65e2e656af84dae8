//! Frozen word vectors in the whitespace-separated text layout
//! (`token v1 v2 ... vE` per line, no header).

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Token that always maps to the UNK row.
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
    unk: usize,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unk_index(&self) -> usize {
        self.unk
    }

    /// Index of `token`, or the UNK index.
    pub fn get(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(self.unk)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, i: usize) -> &str {
        &self.tokens[i]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Immutable `V × E` embedding matrix; the last row is UNK (all zeros).
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    matrix: Tensor,
    vocab: Vocabulary,
    duplicates: usize,
}

impl EmbeddingTable {
    /// Build from `(token, vector)` rows. Later duplicates are dropped and counted.
    pub fn from_rows<I>(dim: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        if dim == 0 {
            return Err(Error::Input("embedding dimension must be positive".into()));
        }
        let mut index = HashMap::new();
        let mut tokens = Vec::new();
        let mut values = Vec::new();
        let mut duplicates = 0;
        for (token, vec) in rows {
            if vec.len() != dim {
                return Err(Error::Dimension(format!(
                    "row `{token}` has {} values, expected {dim}",
                    vec.len()
                )));
            }
            if token == UNK_TOKEN || index.contains_key(&token) {
                duplicates += 1;
                continue;
            }
            index.insert(token.clone(), tokens.len());
            tokens.push(token);
            values.extend(vec);
        }
        let unk = tokens.len();
        index.insert(UNK_TOKEN.to_string(), unk);
        tokens.push(UNK_TOKEN.to_string());
        values.extend(std::iter::repeat_n(0.0, dim));
        let matrix = Tensor::matrix(tokens.len(), dim, values)?;
        Ok(EmbeddingTable {
            dim,
            matrix,
            vocab: Vocabulary { index, tokens, unk },
            duplicates,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    /// Number of duplicate entries skipped while loading.
    pub fn duplicate_count(&self) -> usize {
        self.duplicates
    }

    pub fn lookup(&self, token: &str) -> &[f64] {
        self.matrix.row(self.vocab.get(token))
    }

    pub fn embed_sequence<S: AsRef<str>>(&self, tokens: &[S]) -> Tensor {
        let mut values = Vec::with_capacity(tokens.len() * self.dim);
        for t in tokens {
            values.extend_from_slice(self.lookup(t.as_ref()));
        }
        Tensor::matrix(tokens.len(), self.dim, values).expect("rows have width dim")
    }

    pub fn checksum(&self) -> u64 {
        self.matrix.checksum()
    }

    /// Writes every non-UNK row in load order.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        for (i, token) in self.vocab.tokens.iter().enumerate() {
            if i == self.vocab.unk {
                continue;
            }
            write!(out, "{token}")?;
            for v in self.matrix.row(i) {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Parse the text embedding format. The dimension comes from the first line
/// unless `expected_dim` is given.
pub fn load_embeddings_text<R: BufRead>(
    stream: R,
    expected_dim: Option<usize>,
) -> Result<EmbeddingTable> {
    let mut dim = expected_dim;
    let mut rows = Vec::new();
    for (lineno, line) in stream.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts.next().expect("non-empty line").to_string();
        let vec = parts
            .map(|p| {
                p.parse::<f64>().map_err(|e| Error::Parse {
                    line: lineno,
                    message: format!("bad float `{p}`: {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let d = *dim.get_or_insert(vec.len());
        if vec.len() != d || d == 0 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {d} values, found {}", vec.len()),
            });
        }
        if let Some(bad) = vec.iter().find(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line: lineno,
                message: format!("non-finite value {bad}"),
            });
        }
        rows.push((token, vec));
    }
    if rows.is_empty() {
        return Err(Error::Input("empty embedding stream".into()));
    }
    let table = EmbeddingTable::from_rows(dim.unwrap_or(0), rows)?;
    if table.duplicates > 0 {
        log::warn!("skipped {} duplicate embedding entries", table.duplicates);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ab() -> EmbeddingTable {
        load_embeddings_text("a 1 0\nb 0 1\n".as_bytes(), None).unwrap()
    }

    #[test]
    fn loads_two_rows_plus_unk() {
        let t = ab();
        assert_eq!(t.vocab().len(), 3);
        assert_eq!(t.dim(), 2);
        assert_eq!(t.lookup(UNK_TOKEN), &[0.0, 0.0]);
        assert_eq!(t.lookup("a"), &[1.0, 0.0]);
        assert_eq!(t.lookup("zzz"), &[0.0, 0.0]);
        assert_eq!(t.lookup("A"), &[0.0, 0.0]);
    }

    #[test]
    fn rejects_wrong_width() {
        let err = load_embeddings_text("a 1 0\nb 0 1 2\n".as_bytes(), Some(2)).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = load_embeddings_text("a 1 0 3\n".as_bytes(), Some(2)).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        assert!(matches!(
            load_embeddings_text("".as_bytes(), None),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn duplicate_keeps_first() {
        let t = load_embeddings_text("a 1 0\na 5 5\nb 0 1\n".as_bytes(), None).unwrap();
        assert_eq!(t.lookup("a"), &[1.0, 0.0]);
        assert_eq!(t.duplicate_count(), 1);
        assert_eq!(t.vocab().len(), 3);
    }

    #[test]
    fn embed_sequences() {
        let t = ab();
        let empty: [&str; 0] = [];
        let e = t.embed_sequence(&empty);
        assert_eq!(e.shape(), &[0, 2]);
        let e = t.embed_sequence(&["a", "a"]);
        assert_eq!(e.row(0), e.row(1));
        let e = t.embed_sequence(&["a", "unseen"]);
        assert_eq!(e.values(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn text_round_trip() {
        let t = load_embeddings_text("x 0.1 -2.5e-3\ny 1e10 3\n".as_bytes(), None).unwrap();
        let mut buf = Vec::new();
        t.write_text(&mut buf).unwrap();
        let u = load_embeddings_text(buf.as_slice(), None).unwrap();
        assert_eq!(t, u);
    }
}
