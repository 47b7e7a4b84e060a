//! CSV files for trajectories, datasets and loss curves.
//!
//! Comma-delimited, `\n` line endings, floats with 17 significant digits.

use std::io::{Read, Write};

use crate::dynamics::{PairDataset, Trajectory};
use crate::error::{Error, Result};
use crate::numfmt::fmt_f64;

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

/// Header `t,y1,..,yD`.
pub fn write_trajectory<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let mut w = writer(out);
    let dim = traj.dim();
    let mut header = vec!["t".to_string()];
    header.extend((1..=dim).map(|d| format!("y{d}")));
    w.write_record(&header)?;
    for (t, state) in traj.times.iter().zip(&traj.states) {
        let mut row = vec![fmt_f64(*t)];
        row.extend(state.iter().map(|v| fmt_f64(*v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Header `x1,..,xD,xp1,..,xpD`, one pair per row.
pub fn write_dataset<W: Write>(ds: &PairDataset, out: W) -> Result<()> {
    let mut w = writer(out);
    let dim = ds.dim();
    let mut header: Vec<String> = (1..=dim).map(|d| format!("x{d}")).collect();
    header.extend((1..=dim).map(|d| format!("xp{d}")));
    w.write_record(&header)?;
    for (x, y) in ds.inputs.iter().zip(&ds.targets) {
        let row: Vec<String> = x.iter().chain(y).map(|v| fmt_f64(*v)).collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(input: R, h_data: f64) -> Result<PairDataset> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let headers = r.headers()?.clone();
    let n = headers.len();
    if n < 4 || n % 2 != 0 {
        return Err(Error::parse(
            "header",
            format!("expected x1..xD,xp1..xpD with D >= 2, got {n} columns"),
        ));
    }
    let dim = n / 2;
    for (k, name) in headers.iter().enumerate() {
        let expected = if k < dim {
            format!("x{}", k + 1)
        } else {
            format!("xp{}", k - dim + 1)
        };
        if name.trim() != expected {
            return Err(Error::parse(
                "header",
                format!("column {} is `{name}`, expected `{expected}`", k + 1),
            ));
        }
    }
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        let values = record
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        Error::parse(
                            format!("row {}", line + 1),
                            format!("`{s}` is not a finite number"),
                        )
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        inputs.push(values[..dim].to_vec());
        targets.push(values[dim..].to_vec());
    }
    PairDataset::new(inputs, targets, h_data)
}

/// Header `epoch,mse`.
pub fn write_loss_curve<W: Write>(curve: &[(usize, f64)], out: W) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["epoch", "mse"])?;
    for (epoch, mse) in curve {
        w.write_record([epoch.to_string(), fmt_f64(*mse)])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_round_trip() {
        let ds = PairDataset::new(vec![vec![0.1, 0.2]], vec![vec![1.0 / 3.0, -2.0]], 0.2).unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2,xp1,xp2\n"));
        assert!(!text.contains('\r'));
        assert_eq!(read_dataset(buf.as_slice(), 0.2).unwrap(), ds);
    }

    #[test]
    fn trajectory_header() {
        let traj = Trajectory::new(
            vec![0.0, 1.0],
            vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_trajectory(&traj, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t,y1,y2,y3");
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn malformed_dataset() {
        assert!(read_dataset("a,b,c,d\n1,2,3,4\n".as_bytes(), 0.2).is_err());
        assert!(read_dataset("x1,x2,xp1,xp2\n1,2,nan,4\n".as_bytes(), 0.2).is_err());
        assert!(read_dataset("x1,x2,xp1,xp2\n1,2,3\n".as_bytes(), 0.2).is_err());
    }
}
