//! Plain-text distribution files.
//!
//! ```text
//! d k
//! x_1 ... x_d w
//! ...            (k lines)
//! ```
//!
//! Fields are whitespace separated. Blank lines and lines starting with `#`
//! are ignored. Weights are renormalised to sum to one after parsing.

use std::fmt::Write as _;
use std::path::Path;

use super::dist::DiscreteDist;
use super::OtError;

pub fn parse_dist(text: &str) -> Result<DiscreteDist<f64>, OtError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hline, header) = lines.next().ok_or(OtError::Parse { line: 1, message: "missing 'd k' header".into() })?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| OtError::Parse { line: hline, message: format!("bad header field '{t}'") }))
        .collect::<Result<_, _>>()?;
    let [d, k] = dims[..] else {
        return Err(OtError::Parse { line: hline, message: "header must be exactly 'd k'".into() });
    };
    if d == 0 || k == 0 {
        return Err(OtError::Parse { line: hline, message: "d and k must be positive".into() });
    }
    let mut points = Vec::with_capacity(k);
    let mut weights = Vec::with_capacity(k);
    for (line, body) in lines.by_ref().take(k) {
        let fields: Vec<f64> = body
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| OtError::Parse { line, message: format!("bad number '{t}'") }))
            .collect::<Result<_, _>>()?;
        if fields.len() != d + 1 {
            return Err(OtError::Parse { line, message: format!("expected {} fields, found {}", d + 1, fields.len()) });
        }
        weights.push(fields[d]);
        points.push(fields[..d].to_vec());
    }
    if points.len() != k {
        return Err(OtError::Parse { line: hline, message: format!("header announces {k} atoms, found {}", points.len()) });
    }
    if let Some((line, _)) = lines.next() {
        return Err(OtError::Parse { line, message: "trailing data after the last atom".into() });
    }
    DiscreteDist::normalized(points, weights)
}

pub fn read_dist(path: &Path) -> Result<DiscreteDist<f64>, OtError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| OtError::InvalidArgument(format!("cannot read {}: {e}", path.display())))?;
    parse_dist(&text)
}

/// Inverse of [`parse_dist`]; floats are written in shortest round-trip form.
pub fn format_dist(dist: &DiscreteDist<f64>) -> String {
    let mut out = format!("{} {}\n", dist.dim(), dist.len());
    for (x, w) in dist.iter() {
        for v in x {
            let _ = write!(out, "{v:?} ");
        }
        let _ = writeln!(out, "{w:?}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let d = DiscreteDist::new(vec![vec![0.1, -2.0], vec![3.5, 1e-7]], vec![0.3, 0.7]).unwrap();
        assert_eq!(parse_dist(&format_dist(&d)).unwrap(), d);
    }

    #[test]
    fn normalises_weights() {
        let d = parse_dist("1 2\n0 1\n# comment\n2 3\n").unwrap();
        assert_eq!(d.weights(), &[0.25, 0.75]);
    }

    #[test]
    fn reports_line_numbers() {
        let err = parse_dist("1 2\n0 1\n2\n").unwrap_err();
        assert!(matches!(err, OtError::Parse { line: 3, .. }));
        assert!(parse_dist("1 3\n0 1\n").is_err());
        assert!(parse_dist("1 1\n0 -1\n").is_err());
    }
}
