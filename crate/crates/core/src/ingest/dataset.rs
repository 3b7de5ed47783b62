use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Dataset, Sample};

#[derive(Deserialize)]
struct Record {
    id: String,
    vision_units: i64,
    text_tokens: i64,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a str,
    vision_units: u32,
    text_tokens: u32,
}

fn count(line: usize, field: &str, v: i64, min: i64) -> Result<u32> {
    if v < min {
        return Err(Error::Parse {
            line,
            message: format!("{field} must be >= {min}, got {v}"),
        });
    }
    u32::try_from(v).map_err(|_| Error::Parse {
        line,
        message: format!("{field} {v} does not fit in 32 bits"),
    })
}

/// Reads one `{"id", "vision_units", "text_tokens"}` object per line.
/// Blank lines are skipped; errors carry the 1-based line number.
pub fn read_dataset<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut seen = HashSet::new();
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let vision = count(line_no, "vision_units", r.vision_units, 0)?;
        let text = count(line_no, "text_tokens", r.text_tokens, 1)?;
        if !seen.insert(r.id.clone()) {
            return Err(Error::DuplicateId {
                id: r.id,
                line: Some(line_no),
            });
        }
        samples.push(Sample {
            id: r.id,
            vision_units: vision,
            text_tokens: text,
        });
    }
    Ok(Dataset::from_valid(samples))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset(BufReader::new(File::open(path)?))
}

pub fn write_dataset<W: Write>(dataset: &Dataset, mut w: W) -> Result<()> {
    for s in dataset.samples() {
        let rec = RecordOut {
            id: &s.id,
            vision_units: s.vision_units,
            text_tokens: s.text_tokens,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_dataset(dataset, BufWriter::new(File::create(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(s: &str) -> Result<Dataset> {
        read_dataset(s.as_bytes())
    }

    #[test]
    fn empty_input() {
        assert!(read("").unwrap().is_empty());
    }

    #[test]
    fn parses_and_skips_blank_lines() {
        let d = read("{\"id\":\"a\",\"vision_units\":2,\"text_tokens\":100}\n\n{\"id\":\"b\",\"vision_units\":0,\"text_tokens\":5}\n").unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.total_vision(), 2);
    }

    #[test]
    fn negative_tokens_rejected_with_line() {
        let e = read("{\"id\":\"a\",\"vision_units\":1,\"text_tokens\":3}\n{\"id\":\"b\",\"vision_units\":1,\"text_tokens\":-4}\n")
            .unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
        assert!(matches!(
            read("{\"id\":\"a\",\"vision_units\":1,\"text_tokens\":0}").unwrap_err(),
            Error::Parse { line: 1, .. }
        ));
    }

    #[test]
    fn malformed_and_duplicate() {
        assert!(matches!(
            read("{\"id\":\"a\"").unwrap_err(),
            Error::Parse { line: 1, .. }
        ));
        let dup = "{\"id\":\"a\",\"vision_units\":1,\"text_tokens\":3}\n{\"id\":\"a\",\"vision_units\":1,\"text_tokens\":3}\n";
        assert!(matches!(
            read(dup).unwrap_err(),
            Error::DuplicateId { line: Some(2), .. }
        ));
    }

    #[test]
    fn round_trip() {
        let d = Dataset::new(vec![
            Sample::new("x", 3, 9).unwrap(),
            Sample::new("y", 0, 1).unwrap(),
        ])
        .unwrap();
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), d);
    }
}
