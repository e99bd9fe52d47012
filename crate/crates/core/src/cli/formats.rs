//! Text formats read and written by the command-line tool.
//!
//! Dense matrix: first line `n`, then `n` rows of `n` whitespace-separated
//! values. Triplets: first line `n`, then `i j value` per line (0-based;
//! one of each mirrored pair). Factors: first line `n k`, second line the
//! `k` weights, then `n` rows of the `n×k` basis.
//! Blank lines and lines starting with `#` are skipped everywhere.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{FactorizedPsd, SparseSymmetric, SymmetricMatrix};

/// Largest `|A − Aᵀ|` entry accepted, relative to the largest entry.
const SYMMETRY_TOL: f64 = 1e-9;

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    origin: &'a str,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str, origin: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate(),
            origin,
            last: 0,
        }
    }

    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.origin.into(),
            line,
            message: message.into(),
        }
    }

    /// Next non-blank, non-comment line as (line number, tokens).
    fn next_tokens(&mut self) -> Option<(usize, Vec<&'a str>)> {
        for (k, raw) in self.inner.by_ref() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            self.last = k + 1;
            return Some((k + 1, line.split_whitespace().collect()));
        }
        None
    }

    fn expect_tokens(&mut self, what: &str) -> Result<(usize, Vec<&'a str>)> {
        let last = self.last;
        self.next_tokens()
            .ok_or_else(|| self.err(last + 1, format!("unexpected end of input, expected {what}")))
    }

    fn finish(mut self) -> Result<()> {
        match self.next_tokens() {
            Some((line, _)) => Err(self.err(line, "trailing data")),
            None => Ok(()),
        }
    }

    fn float(&self, line: usize, tok: &str) -> Result<f64> {
        tok.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.err(line, format!("bad number {tok:?}")))
    }

    fn index(&self, line: usize, tok: &str) -> Result<usize> {
        tok.parse::<usize>()
            .map_err(|_| self.err(line, format!("bad index {tok:?}")))
    }

    fn header(&mut self, count: usize) -> Result<(usize, Vec<usize>)> {
        let (line, toks) = self.expect_tokens("header")?;
        if toks.len() != count {
            return Err(self.err(line, format!("header must have {count} field(s), found {}", toks.len())));
        }
        let vals = toks.iter().map(|t| self.index(line, t)).collect::<Result<Vec<_>>>()?;
        Ok((line, vals))
    }
}

fn read(path: &Path) -> Result<String> {
    Ok(std::fs::read_to_string(path)?)
}

pub fn parse_matrix_text(text: &str, origin: &str) -> Result<SymmetricMatrix> {
    let mut lines = Lines::new(text, origin);
    let (hline, h) = lines.header(1)?;
    let n = h[0];
    if n == 0 {
        return Err(lines.err(hline, "dimension must be >= 1"));
    }
    let mut data = Vec::with_capacity(n * n);
    for row in 0..n {
        let (line, toks) = lines.expect_tokens(&format!("row {}", row + 1))?;
        if toks.len() != n {
            return Err(lines.err(line, format!("row has {} values, expected {n}", toks.len())));
        }
        for t in toks {
            data.push(lines.float(line, t)?);
        }
    }
    lines.finish()?;
    let m = DMatrix::from_row_slice(n, n, &data);
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let asym = (&m - m.transpose()).amax();
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::Input(format!("{origin}: matrix is not symmetric (max |A - Aᵀ| = {asym:.3e})")));
    }
    SymmetricMatrix::new(m)
}

pub fn read_matrix_text(path: &Path) -> Result<SymmetricMatrix> {
    parse_matrix_text(&read(path)?, &path.display().to_string())
}

pub fn parse_triplets(text: &str, origin: &str) -> Result<SparseSymmetric> {
    let mut lines = Lines::new(text, origin);
    let (hline, h) = lines.header(1)?;
    let n = h[0];
    if n == 0 {
        return Err(lines.err(hline, "dimension must be >= 1"));
    }
    let mut seen = std::collections::HashSet::new();
    let mut trip = Vec::new();
    while let Some((line, toks)) = lines.next_tokens() {
        if toks.len() != 3 {
            return Err(lines.err(line, format!("expected `i j value`, found {} fields", toks.len())));
        }
        let i = lines.index(line, toks[0])?;
        let j = lines.index(line, toks[1])?;
        if i >= n || j >= n {
            return Err(lines.err(line, format!("index ({i}, {j}) out of range for n = {n}")));
        }
        if !seen.insert((i.min(j), i.max(j))) {
            return Err(lines.err(line, format!("duplicate entry ({i}, {j})")));
        }
        trip.push((i, j, lines.float(line, toks[2])?));
    }
    SparseSymmetric::from_triplets(n, trip)
}

pub fn read_triplets(path: &Path) -> Result<SparseSymmetric> {
    parse_triplets(&read(path)?, &path.display().to_string())
}

pub fn write_factors<W: Write>(mut w: W, x: &FactorizedPsd) -> std::io::Result<()> {
    let (n, k) = (x.n(), x.rank());
    writeln!(w, "{n} {k}")?;
    let join = |it: &mut dyn Iterator<Item = f64>| it.map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ");
    writeln!(w, "{}", join(&mut x.weights().iter().copied()))?;
    let v = x.basis();
    for i in 0..n {
        writeln!(w, "{}", join(&mut (0..k).map(|j| v[(i, j)])))?;
    }
    Ok(())
}

pub fn parse_factors(text: &str, origin: &str) -> Result<FactorizedPsd> {
    let mut lines = Lines::new(text, origin);
    let (_, h) = lines.header(2)?;
    let (n, k) = (h[0], h[1]);
    let weights = if k == 0 {
        Vec::new()
    } else {
        let (line, toks) = lines.expect_tokens("weights")?;
        if toks.len() != k {
            return Err(lines.err(line, format!("expected {k} weights, found {}", toks.len())));
        }
        toks.iter().map(|t| lines.float(line, t)).collect::<Result<Vec<_>>>()?
    };
    let mut basis = DMatrix::zeros(n, k);
    if k > 0 {
        for i in 0..n {
            let (line, toks) = lines.expect_tokens(&format!("basis row {}", i + 1))?;
            if toks.len() != k {
                return Err(lines.err(line, format!("basis row has {} values, expected {k}", toks.len())));
            }
            for (j, t) in toks.iter().enumerate() {
                basis[(i, j)] = lines.float(line, t)?;
            }
        }
    }
    lines.finish()?;
    FactorizedPsd::new(basis, weights)
}

pub fn read_factors(path: &Path) -> Result<FactorizedPsd> {
    parse_factors(&read(path)?, &path.display().to_string())
}
