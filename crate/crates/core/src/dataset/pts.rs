//! 300-W style `.pts` annotations:
//!
//! ```text
//! version: 1
//! n_points: 68
//! {
//! 112.5 204.25
//! ...
//! }
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{DatasetError, PtsErrorKind};
use crate::geometry::Point;
use crate::landmarks::{CoordinateFrame, LandmarkSet};

pub fn parse_pts(path: impl AsRef<Path>) -> Result<LandmarkSet, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_pts_str(&text, path)
}

/// Parses pts text; `origin` is only used in error messages.
pub fn parse_pts_str(text: &str, origin: &Path) -> Result<LandmarkSet, DatasetError> {
    let err = |line: usize, kind| DatasetError::Pts {
        path: origin.to_path_buf(),
        line,
        kind,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let mut declared = None;
    let mut last_line = 0;
    for (n, line) in lines.by_ref() {
        last_line = n;
        if line == "{" {
            break;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| err(n, PtsErrorKind::MalformedHeader))?;
        match key.trim() {
            "version" => {
                value
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| err(n, PtsErrorKind::MalformedHeader))?;
            }
            "n_points" => {
                declared = Some(
                    value
                        .trim()
                        .parse::<usize>()
                        .map_err(|_| err(n, PtsErrorKind::MalformedHeader))?,
                );
            }
            _ => return Err(err(n, PtsErrorKind::MalformedHeader)),
        }
    }
    let declared = declared.ok_or_else(|| err(last_line.max(1), PtsErrorKind::MalformedHeader))?;
    if declared == 0 {
        return Err(err(last_line, PtsErrorKind::MalformedHeader));
    }

    let mut points = Vec::with_capacity(declared);
    let mut closed = false;
    for (n, line) in lines.by_ref() {
        last_line = n;
        if line == "}" {
            closed = true;
            break;
        }
        let mut it = line.split_whitespace();
        let (Some(x), Some(y), None) = (it.next(), it.next(), it.next()) else {
            return Err(err(n, PtsErrorKind::BadCoordinate));
        };
        let parse = |v: &str| {
            v.parse::<f64>()
                .ok()
                .filter(|f| f.is_finite())
                .ok_or_else(|| err(n, PtsErrorKind::BadCoordinate))
        };
        points.push(Point::new(parse(x)?, parse(y)?));
    }
    if !closed {
        return Err(err(last_line, PtsErrorKind::MissingBrace));
    }
    if points.len() != declared {
        return Err(err(
            last_line,
            PtsErrorKind::CountMismatch {
                declared,
                found: points.len(),
            },
        ));
    }
    Ok(LandmarkSet::new(points, CoordinateFrame::ImagePixels))
}

pub fn write_pts(path: impl AsRef<Path>, landmarks: &LandmarkSet) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let mut s = format!("version: 1\nn_points: {}\n{{\n", landmarks.len());
    for p in landmarks.points() {
        writeln!(s, "{} {}", p.x, p.y).unwrap();
    }
    s.push_str("}\n");
    fs::write(path, s).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<LandmarkSet, DatasetError> {
        parse_pts_str(text, Path::new("t.pts"))
    }

    fn kind(r: Result<LandmarkSet, DatasetError>) -> (usize, PtsErrorKind) {
        match r {
            Err(DatasetError::Pts { line, kind, .. }) => (line, kind),
            other => panic!("expected pts error, got {other:?}"),
        }
    }

    #[test]
    fn sixty_eight_points() {
        let mut text = String::from("version: 1\nn_points:  68\n{\n");
        for i in 0..68 {
            text += &format!("{}.5 {}.25\n", i, 2 * i);
        }
        text += "}\n";
        let l = parse(&text).unwrap();
        assert_eq!(l.len(), 68);
        assert_eq!(l.points()[3], Point::new(3.5, 6.25));
    }

    #[test]
    fn exact_float_parse() {
        let l = parse("version: 1\nn_points: 1\n{\n10.5 20.25\n}").unwrap();
        assert_eq!(l.points()[0], Point::new(10.5, 20.25));
    }

    #[test]
    fn count_mismatch() {
        let r = parse("version: 1\nn_points: 2\n{\n1 2\n3 4\n5 6\n}\n");
        assert_eq!(
            kind(r),
            (
                7,
                PtsErrorKind::CountMismatch {
                    declared: 2,
                    found: 3
                }
            )
        );
    }

    #[test]
    fn distinct_errors_with_lines() {
        assert_eq!(
            kind(parse("version 1\nn_points: 1\n{\n1 2\n}")),
            (1, PtsErrorKind::MalformedHeader)
        );
        assert_eq!(
            kind(parse("version: 1\nn_points: x\n{\n1 2\n}")),
            (2, PtsErrorKind::MalformedHeader)
        );
        assert_eq!(
            kind(parse("version: 1\nn_points: 1\n{\n1 abc\n}")),
            (4, PtsErrorKind::BadCoordinate)
        );
        assert_eq!(
            kind(parse("version: 1\nn_points: 1\n{\n1 2\n")),
            (4, PtsErrorKind::MissingBrace)
        );
        assert_eq!(
            kind(parse("version: 1\n{\n1 2\n}")).1,
            PtsErrorKind::MalformedHeader
        );
    }

    #[test]
    fn write_then_parse() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pts");
        let l = LandmarkSet::new(
            vec![Point::new(0.1, 1e-7), Point::new(123.456, 7.0)],
            CoordinateFrame::ImagePixels,
        );
        write_pts(&p, &l).unwrap();
        assert_eq!(parse_pts(&p).unwrap(), l);
    }
}
