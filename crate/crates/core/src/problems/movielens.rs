//! MovieLens `u.data` ratings: `user\titem\trating\ttimestamp`, 1-based ids.

use std::collections::HashSet;
use std::path::Path;

use super::ObservedEntry;
use crate::error::{input, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Ratings {
    pub entries: Vec<ObservedEntry>,
    /// Largest user id.
    pub m: usize,
    /// Largest item id.
    pub n: usize,
}

const RATING_RANGE: std::ops::RangeInclusive<f64> = 1.0..=5.0;

pub fn movielens_read(path: &Path) -> Result<Ratings> {
    let text = std::fs::read_to_string(path)?;
    movielens_parse(&text, &path.display().to_string())
}

/// Parses ratings text; `origin` names the source in error messages.
pub fn movielens_parse(text: &str, origin: &str) -> Result<Ratings> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.into(),
        line,
        message,
    };
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    let (mut m, mut n) = (0, 0);
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(err(lineno, format!("expected 4 tab-separated fields, found {}", fields.len())));
        }
        let id = |s: &str, what: &str| -> Result<usize> {
            match s.trim().parse::<usize>() {
                Ok(v) if v >= 1 => Ok(v),
                _ => Err(err(lineno, format!("bad {what} id {s:?}"))),
            }
        };
        let user = id(fields[0], "user")?;
        let item = id(fields[1], "item")?;
        let rating: f64 = fields[2]
            .trim()
            .parse()
            .ok()
            .filter(|r: &f64| r.is_finite())
            .ok_or_else(|| err(lineno, format!("bad rating {:?}", fields[2])))?;
        if fields[3].trim().parse::<i64>().is_err() {
            return Err(err(lineno, format!("bad timestamp {:?}", fields[3])));
        }
        if !RATING_RANGE.contains(&rating) {
            log::warn!("{origin}:{lineno}: rating {rating} outside 1..=5, kept");
        }
        if !seen.insert((user, item)) {
            return Err(err(lineno, format!("duplicate rating for user {user}, item {item}")));
        }
        m = m.max(user);
        n = n.max(item);
        entries.push(ObservedEntry {
            i: user - 1,
            j: item - 1,
            rating,
        });
    }
    if entries.is_empty() {
        return Err(input(format!("{origin}: no ratings found")));
    }
    Ok(Ratings { entries, m, n })
}
