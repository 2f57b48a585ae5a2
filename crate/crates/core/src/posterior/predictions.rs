//! Prediction dump: `id,label,p_0,...,p_{K-1}`.

use std::io::{Read, Write};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionDump {
    pub ids: Vec<usize>,
    pub labels: Vec<usize>,
    /// `[M, K]` predictive probabilities.
    pub probs: Tensor,
}

pub fn write_predictions_csv<W: Write>(w: W, probs: &Tensor, labels: &[usize]) -> Result<()> {
    if probs.rank() != 2 || probs.rows() != labels.len() {
        return shape_err(
            "write_predictions_csv",
            format!("{:?} with {} labels", probs.shape(), labels.len()),
        );
    }
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..probs.row_len()).map(|k| format!("p_{k}")));
    out.write_record(&header)?;
    for (i, y) in labels.iter().enumerate() {
        let mut rec = vec![i.to_string(), y.to_string()];
        rec.extend(probs.row(i).iter().map(|p| format!("{p:e}")));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_predictions_csv<R: Read>(r: R) -> Result<PredictionDump> {
    let mut rdr = csv::Reader::from_reader(r);
    let k = rdr.headers()?.len().saturating_sub(2);
    if k == 0 {
        return Err(Error::InvalidArgument(
            "prediction file has no probability columns".into(),
        ));
    }
    let (mut ids, mut labels, mut values) = (Vec::new(), Vec::new(), Vec::new());
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |j: usize| -> Result<&str> {
            rec.get(j)
                .ok_or_else(|| Error::InvalidArgument(format!("row {}: missing column {j}", line + 1)))
        };
        let parse_err = |j: usize| Error::InvalidArgument(format!("row {}: bad value in column {j}", line + 1));
        ids.push(field(0)?.parse().map_err(|_| parse_err(0))?);
        labels.push(field(1)?.parse().map_err(|_| parse_err(1))?);
        for j in 2..k + 2 {
            values.push(field(j)?.parse::<f64>().map_err(|_| parse_err(j))?);
        }
    }
    let m = ids.len();
    Ok(PredictionDump {
        ids,
        labels,
        probs: Tensor::new(vec![m, k], values)?,
    })
}
