//! CSV output. Column names are stable:
//!
//! - training log: `iteration,train_loss,val_mae,wall_time_s` (`val_mae`
//!   is empty when no validation set was given)
//! - evaluation: `image_id,actual,predicted`

use std::io::Write;

use crate::error::Result;
use crate::train::{EvalRow, TrainLog};

pub const TRAIN_LOG_HEADER: [&str; 4] = ["iteration", "train_loss", "val_mae", "wall_time_s"];
pub const EVAL_HEADER: [&str; 3] = ["image_id", "actual", "predicted"];

pub fn write_train_log<W: Write>(out: W, log: &TrainLog) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAIN_LOG_HEADER)?;
    for r in &log.rows {
        w.write_record([
            r.iteration.to_string(),
            r.train_loss.to_string(),
            r.val_mae.map(|v| v.to_string()).unwrap_or_default(),
            format!("{:.3}", r.wall_time_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_eval_rows<W: Write>(out: W, rows: &[EvalRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EVAL_HEADER)?;
    for r in rows {
        w.write_record([r.image_id.clone(), r.actual.to_string(), r.predicted.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_eval_rows<R: std::io::Read>(input: R) -> Result<Vec<EvalRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| Ok(row?)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::TrainLogRow;

    #[test]
    fn log_columns() {
        let log = TrainLog {
            rows: vec![
                TrainLogRow {
                    iteration: 100,
                    train_loss: 0.5,
                    val_mae: None,
                    wall_time_s: 1.25,
                },
                TrainLogRow {
                    iteration: 200,
                    train_loss: 0.25,
                    val_mae: Some(3.0),
                    wall_time_s: 2.5,
                },
            ],
        };
        let mut buf = Vec::new();
        write_train_log(&mut buf, &log).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "iteration,train_loss,val_mae,wall_time_s\n100,0.5,,1.250\n200,0.25,3,2.500\n"
        );
    }

    #[test]
    fn eval_rows_round_trip() {
        let rows = vec![EvalRow {
            image_id: "a,b".into(),
            actual: 12.0,
            predicted: 11.5,
        }];
        let mut buf = Vec::new();
        write_eval_rows(&mut buf, &rows).unwrap();
        assert_eq!(read_eval_rows(buf.as_slice()).unwrap(), rows);
    }
}
