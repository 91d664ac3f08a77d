//! `MNU 1` text format: one `x y theta_degrees` record per line, `#` comments.

use std::fmt::Write;

use constellation::{Constellation, Minutia};

pub const HEADER: &str = "MNU 1";

#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for ParseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for ParseError {}

fn err(line: usize, message: impl Into<String>) -> ParseError {
    ParseError {
        line,
        message: message.into(),
    }
}

pub fn parse(text: &str) -> Result<Vec<Minutia>, ParseError> {
    let mut header_seen = false;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if !header_seen {
            if line != HEADER {
                return Err(err(n, format!("expected header `{HEADER}`, found `{line}`")));
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(err(n, format!("expected `x y theta_degrees`, found {} fields", fields.len())));
        }
        let mut v = [0.0; 3];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| err(n, format!("not a finite number: `{f}`")))?;
        }
        out.push(Minutia::new(v[0], v[1], v[2].to_radians()));
    }
    if !header_seen {
        return Err(err(1, format!("missing `{HEADER}` header")));
    }
    Ok(out)
}

/// Six decimals for all fields; `parse` then `render` reproduces the text.
pub fn render(minutiae: &[Minutia], comments: &[String]) -> String {
    let mut s = String::new();
    s.push_str(HEADER);
    s.push('\n');
    for c in comments {
        let _ = writeln!(s, "# {c}");
    }
    for m in minutiae {
        let _ = writeln!(s, "{:.6} {:.6} {:.6}", m.x, m.y, m.theta.to_degrees());
    }
    s
}

pub fn read(path: &std::path::Path) -> Result<Constellation, crate::CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| crate::CliError::Data(format!("{}: {e}", path.display())))?;
    let ms = parse(&text).map_err(|e| crate::CliError::Data(format!("{}: {e}", path.display())))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Constellation::new(id, ms).map_err(|e| crate::CliError::Data(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_at_six_decimals() {
        let ms = vec![
            Minutia::new(1.25, -3.5, 0.3),
            Minutia::new(100.123456789, 7.0, 6.2),
            Minutia::new(0.0, 0.0, 0.0),
        ];
        let text = render(&ms, &["seed=1".into()]);
        let back = parse(&text).unwrap();
        assert_eq!(render(&back, &["seed=1".into()]), text);
        for (a, b) in ms.iter().zip(&back) {
            assert!((a.x - b.x).abs() <= 5e-7 && (a.y - b.y).abs() <= 5e-7);
        }
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let ms = parse("# leading\n\nMNU 1\n10 20 90 # trailing\n\n").unwrap();
        assert_eq!(ms.len(), 1);
        assert!((ms[0].theta - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        assert_eq!(parse("MNU 1\n1 2 3\n1 2\n").unwrap_err().line, 3);
        assert_eq!(parse("MNU 1\n1 x 3\n").unwrap_err().line, 2);
        assert_eq!(parse("MNU 1\n1 2 inf\n").unwrap_err().line, 2);
        assert_eq!(parse("1 2 3\n").unwrap_err().line, 1);
        assert!(parse("").is_err());
    }

    #[test]
    fn empty_body_is_allowed() {
        assert!(parse("MNU 1\n").unwrap().is_empty());
    }
}
