//! Text checkpoint format for named real tensors.
//!
//! ```text
//! dop-params 1
//! tensor <name> <rows> <cols>
//! <cols hex words per line, rows lines>
//! end
//! ```
//!
//! Values are the IEEE-754 bit patterns of `f64`, written as 16 hex digits,
//! so a write/read cycle is bit-exact. Names must not contain whitespace.

use std::io::{BufRead, Write};

use crate::error::{ensure, DopError, Result};

const MAGIC: &str = "dop-params 1";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

pub fn write_tensors<W: Write>(mut out: W, tensors: &[NamedTensor]) -> Result<()> {
    writeln!(out, "{MAGIC}")?;
    for t in tensors {
        ensure!(!t.name.is_empty() && !t.name.contains(char::is_whitespace), Input, "bad tensor name {:?}", t.name);
        ensure!(t.data.len() == t.rows * t.cols, Shape, "tensor {} has {} values for shape {}x{}", t.name, t.data.len(), t.rows, t.cols);
        writeln!(out, "tensor {} {} {}", t.name, t.rows, t.cols)?;
        for r in 0..t.rows {
            let line: Vec<String> = t.data[r * t.cols..(r + 1) * t.cols].iter().map(|v| format!("{:016x}", v.to_bits())).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
    }
    writeln!(out, "end")?;
    Ok(())
}

pub fn read_tensors<R: BufRead>(input: R) -> Result<Vec<NamedTensor>> {
    let mut lines = input.lines();
    let mut next = |what: &str| -> Result<String> {
        lines.next().transpose()?.ok_or_else(|| DopError::Data(format!("checkpoint ended while reading {what}")))
    };
    ensure!(next("header")? == MAGIC, Data, "not a dop parameter file");
    let mut out = Vec::new();
    loop {
        let line = next("tensor header")?;
        if line == "end" {
            return Ok(out);
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        ensure!(parts.len() == 4 && parts[0] == "tensor", Data, "malformed tensor header {line:?}");
        let parse = |s: &str| s.parse::<usize>().map_err(|e| DopError::Data(format!("bad dimension {s:?}: {e}")));
        let (rows, cols) = (parse(parts[2])?, parse(parts[3])?);
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let row = next("tensor row")?;
            let before = data.len();
            for word in row.split_whitespace() {
                let bits = u64::from_str_radix(word, 16).map_err(|e| DopError::Data(format!("bad value {word:?}: {e}")))?;
                data.push(f64::from_bits(bits));
            }
            ensure!(data.len() - before == cols, Data, "row {r} of {} has the wrong length", parts[1]);
        }
        out.push(NamedTensor { name: parts[1].to_string(), rows, cols, data });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(values in proptest::collection::vec(any::<f64>(), 0..24), cols in 1usize..5) {
            let rows = values.len() / cols;
            let data = values[..rows * cols].to_vec();
            let tensors = vec![
                NamedTensor { name: "a.w".into(), rows, cols, data: data.clone() },
                NamedTensor { name: "b".into(), rows: 1, cols: 1, data: vec![-0.0] },
            ];
            let mut buf = Vec::new();
            write_tensors(&mut buf, &tensors).unwrap();
            let back = read_tensors(buf.as_slice()).unwrap();
            prop_assert_eq!(back.len(), 2);
            let bits = |t: &NamedTensor| t.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back[0]), bits(&tensors[0]));
            prop_assert_eq!(bits(&back[1]), bits(&tensors[1]));
            prop_assert_eq!((back[0].rows, back[0].cols), (rows, cols));
        }
    }

    #[test]
    fn truncated_file_is_data_error() {
        let text = "dop-params 1\ntensor w 2 1\n3ff0000000000000\n";
        assert!(matches!(read_tensors(text.as_bytes()), Err(DopError::Data(_))));
    }
}
