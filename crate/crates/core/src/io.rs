//! Plain-text table I/O shared by every artifact writer.
//!
//! Tables are CSV with an optional block of `#`-prefixed provenance lines
//! before the header. Floats are written with 17 significant digits.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Formats `x` with 17 significant digits (round-trip exact for `f64`).
/// Negative zero is written as `0`.
pub fn fmt17(x: f64) -> String {
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{x:.16e}")
}

pub fn write_table<W: Write>(
    out: W,
    comments: &[String],
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<f64>>,
) -> Result<()> {
    let mut out = out;
    for c in comments {
        writeln!(out, "# {c}").map_err(|e| Error::io("<table>", e))?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::Validation(format!(
                "row of width {} under a header of width {}",
                row.len(),
                header.len()
            )));
        }
        w.write_record(row.iter().map(|v| fmt17(*v)))?;
    }
    w.flush().map_err(|e| Error::io("<table>", e))?;
    Ok(())
}

/// Reads a numeric table, skipping `#` comment lines. Returns the header
/// and the rows.
pub fn read_table<R: Read>(input: R) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("not a number: {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// Checks that `header` equals `expected` column for column.
pub fn expect_header(header: &[String], expected: &[&str]) -> Result<()> {
    if header.len() != expected.len() || header.iter().zip(expected).any(|(a, b)| a != b) {
        return Err(Error::Parse(format!(
            "expected columns {expected:?}, found {header:?}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0] {
            assert_eq!(fmt17(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn table_with_comments() {
        let mut buf = Vec::new();
        write_table(
            &mut buf,
            &["command=test".into()],
            &["t", "r"],
            vec![vec![0.0, 1.0], vec![0.5, -2.0]],
        )
        .unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# command=test\nt,r\n"));
        let (header, rows) = read_table(buf.as_slice()).unwrap();
        assert_eq!(header, ["t", "r"]);
        assert_eq!(rows, vec![vec![0.0, 1.0], vec![0.5, -2.0]]);
    }

    #[test]
    fn ragged_row_rejected() {
        let err = write_table(Vec::new(), &[], &["a", "b"], vec![vec![1.0]]);
        assert!(matches!(err, Err(Error::Validation(_))));
    }
}
