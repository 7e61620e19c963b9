//! CSV sequence files and JSON documents.
//!
//! Sequence files have a header of either `seq_id,t,obs` (discrete, integer
//! symbols) or `seq_id,t,obs_1,...,obs_d` (continuous). `t` is 1-based and
//! consecutive within a sequence; rows of one sequence are contiguous. Lines
//! starting with `#` are comments.

use super::{Observations, ObservationSeq};
use crate::{Error, Result};
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// Writes sequences in the canonical CSV layout.
pub fn write_sequences(path: impl AsRef<Path>, seqs: &[ObservationSeq]) -> Result<()> {
    write_sequences_with_comments(path, seqs, &[])
}

/// As [`write_sequences`], with `#`-prefixed comment lines above the header.
pub fn write_sequences_with_comments(
    path: impl AsRef<Path>,
    seqs: &[ObservationSeq],
    comments: &[String],
) -> Result<()> {
    let dim = check_uniform_kind(seqs)?;
    let mut out = String::new();
    for c in comments {
        writeln!(out, "# {c}").expect("string write");
    }
    match dim {
        None => out.push_str("seq_id,t,obs\n"),
        Some(d) => {
            out.push_str("seq_id,t");
            for j in 1..=d {
                write!(out, ",obs_{j}").expect("string write");
            }
            out.push('\n');
        }
    }
    for seq in seqs {
        match &seq.obs {
            Observations::Discrete(v) => {
                for (t, x) in v.iter().enumerate() {
                    writeln!(out, "{},{},{}", seq.id, t + 1, x).expect("string write");
                }
            }
            Observations::Continuous(m) => {
                for t in 0..m.nrows() {
                    write!(out, "{},{}", seq.id, t + 1).expect("string write");
                    for j in 0..m.ncols() {
                        write!(out, ",{}", m[(t, j)]).expect("string write");
                    }
                    out.push('\n');
                }
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn check_uniform_kind(seqs: &[ObservationSeq]) -> Result<Option<usize>> {
    let mut dim: Option<Option<usize>> = None;
    for s in seqs {
        let d = s.dim();
        match dim {
            None => dim = Some(d),
            Some(prev) if prev != d => {
                return Err(Error::Param(format!(
                    "sequences mix kinds or dimensions: {:?} vs {:?}",
                    prev, d
                )))
            }
            _ => {}
        }
    }
    Ok(dim.unwrap_or(None))
}

/// Reads a sequence CSV written by [`write_sequences`].
///
/// Malformed rows are reported with their 1-based line number. A file with
/// only a header yields an empty list.
pub fn read_sequences(path: impl AsRef<Path>) -> Result<Vec<ObservationSeq>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    let dim = parse_header(&cols)?;

    struct Pending {
        id: String,
        symbols: Vec<u32>,
        rows: Vec<Vec<f64>>,
        next_t: usize,
    }
    let mut done: Vec<ObservationSeq> = Vec::new();
    let mut seen: std::collections::HashSet<String> = std::collections::HashSet::new();
    let mut cur: Option<Pending> = None;

    let flush = |cur: &mut Option<Pending>, done: &mut Vec<ObservationSeq>| -> Result<()> {
        if let Some(p) = cur.take() {
            let seq = match dim {
                None => ObservationSeq::discrete(p.id, p.symbols)?,
                Some(d) => {
                    let m = DMatrix::from_fn(p.rows.len(), d, |i, j| p.rows[i][j]);
                    ObservationSeq::continuous(p.id, m)?
                }
            };
            done.push(seq);
        }
        Ok(())
    };

    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let fail = |msg: String| Error::Parse { line, msg };
        if record.len() != cols.len() {
            return Err(fail(format!("expected {} fields, found {}", cols.len(), record.len())));
        }
        let id = record.get(0).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(fail("empty seq_id".into()));
        }
        let t: usize = record
            .get(1)
            .unwrap()
            .parse()
            .map_err(|e| fail(format!("bad t value: {e}")))?;

        let start_new = match &cur {
            Some(p) => p.id != id,
            None => true,
        };
        if start_new {
            flush(&mut cur, &mut done)?;
            if !seen.insert(id.clone()) {
                return Err(fail(format!("rows of sequence '{id}' are not contiguous")));
            }
            cur = Some(Pending { id, symbols: Vec::new(), rows: Vec::new(), next_t: 1 });
        }
        let p = cur.as_mut().expect("pending sequence exists");
        if t != p.next_t {
            return Err(fail(format!("t = {t} out of order, expected {}", p.next_t)));
        }
        p.next_t += 1;
        match dim {
            None => {
                let x: u32 = record
                    .get(2)
                    .unwrap()
                    .parse()
                    .map_err(|e| fail(format!("bad obs value: {e}")))?;
                p.symbols.push(x);
            }
            Some(d) => {
                let mut row = Vec::with_capacity(d);
                for j in 0..d {
                    let v: f64 = record
                        .get(2 + j)
                        .unwrap()
                        .parse()
                        .map_err(|e| fail(format!("bad obs_{} value: {e}", j + 1)))?;
                    row.push(v);
                }
                p.rows.push(row);
            }
        }
    }
    flush(&mut cur, &mut done)?;
    Ok(done)
}

fn parse_header(cols: &[&str]) -> Result<Option<usize>> {
    let fail = |msg: String| Error::Parse { line: 1, msg };
    if cols.len() < 3 || cols[0] != "seq_id" || cols[1] != "t" {
        return Err(fail(format!("unrecognized header {cols:?}; expected seq_id,t,obs[...]")));
    }
    if cols.len() == 3 && cols[2] == "obs" {
        return Ok(None);
    }
    for (j, c) in cols[2..].iter().enumerate() {
        let expect = format!("obs_{}", j + 1);
        if *c != expect {
            return Err(fail(format!("unrecognized header column '{c}', expected '{expect}'")));
        }
    }
    Ok(Some(cols.len() - 2))
}

/// Serializes `value` as pretty-printed JSON at `path`.
pub fn save_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Reads a JSON document written by [`save_json`].
pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqdata::{sample_lds, BktParams, LdsParams, sample_hmm};
    use nalgebra::{DMatrix, DVector};

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("psrlearn-io-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn discrete_roundtrip_is_exact() {
        let hmm = BktParams::default().compile().unwrap();
        let seqs = sample_hmm(&hmm, 17, 5, 11).unwrap();
        let path = tmp("discrete.csv");
        write_sequences(&path, &seqs).unwrap();
        let back = read_sequences(&path).unwrap();
        assert_eq!(seqs, back);
    }

    #[test]
    fn continuous_roundtrip_is_exact() {
        let params = LdsParams::new(
            DMatrix::from_row_slice(1, 1, &[0.9]),
            DMatrix::from_row_slice(2, 1, &[1.0, -0.3]),
            DMatrix::from_row_slice(1, 1, &[0.3]),
            DMatrix::identity(2, 2).scale(0.05),
            DVector::zeros(1),
            DMatrix::from_row_slice(1, 1, &[1.0]),
        )
        .unwrap();
        let (seq, _) = sample_lds(&params, 40, 2).unwrap();
        let path = tmp("cont.csv");
        write_sequences(&path, std::slice::from_ref(&seq)).unwrap();
        let back = read_sequences(&path).unwrap();
        assert_eq!(vec![seq], back);
    }

    #[test]
    fn malformed_row_reports_line() {
        let path = tmp("bad.csv");
        std::fs::write(&path, "seq_id,t,obs\na,1,0\na,2,oops\n").unwrap();
        match read_sequences(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn header_only_is_empty() {
        let path = tmp("empty.csv");
        std::fs::write(&path, "seq_id,t,obs\n").unwrap();
        assert!(read_sequences(&path).unwrap().is_empty());
    }

    #[test]
    fn comments_are_skipped() {
        let path = tmp("comments.csv");
        std::fs::write(&path, "# seed=9\nseq_id,t,obs\na,1,0\na,2,1\n").unwrap();
        let seqs = read_sequences(&path).unwrap();
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].len(), 2);
    }

    #[test]
    fn gap_in_t_is_rejected() {
        let path = tmp("gap.csv");
        std::fs::write(&path, "seq_id,t,obs\na,1,0\na,3,1\n").unwrap();
        assert!(matches!(read_sequences(&path), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn json_roundtrip() {
        let hmm = BktParams::default().compile().unwrap();
        let path = tmp("params.json");
        save_json(&path, &hmm).unwrap();
        let back: crate::seqdata::HmmParams = load_json(&path).unwrap();
        assert_eq!(hmm, back);
    }
}
