//! Dataset CSV (`subject_id,replicate_id,x,y`) and truth-label files.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use nestclust::model::{NestedDataset, Replicate, Subject};
use nestclust::simulate::SimulatedTruth;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

pub const HEADER: [&str; 4] = ["subject_id", "replicate_id", "x", "y"];

/// Parse a dataset. Ids are mapped to dense indices in order of first
/// appearance; points keep their row order within each replicate.
pub fn read_dataset<R: Read>(input: R) -> CliResult<NestedDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(input);
    let header = reader.headers().map_err(|e| CliError::data(format!("line 1: {e}")))?.clone();
    if header.iter().map(str::trim).ne(HEADER.iter().copied()) {
        return Err(CliError::data(format!("line 1: expected header {}", HEADER.join(","))));
    }
    let mut subjects: Vec<Subject> = Vec::new();
    let mut subject_index: HashMap<String, usize> = HashMap::new();
    let mut replicate_index: Vec<HashMap<String, usize>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::data(format!("line {line}: {e}"))
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 4 {
            return Err(CliError::data(format!("line {line}: expected 4 fields, found {}", record.len())));
        }
        let number = |k: usize| -> CliResult<f64> {
            let raw = record[k].trim();
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(CliError::data(format!("line {line}: {} is not a finite number: {raw:?}", HEADER[k]))),
            }
        };
        let (x, y) = (number(2)?, number(3)?);
        let sid = record[0].trim();
        let rid = record[1].trim();
        if sid.is_empty() || rid.is_empty() {
            return Err(CliError::data(format!("line {line}: empty subject or replicate id")));
        }
        let si = *subject_index.entry(sid.to_string()).or_insert_with(|| {
            subjects.push(Subject { id: sid.to_string(), replicates: Vec::new() });
            replicate_index.push(HashMap::new());
            subjects.len() - 1
        });
        let reps = &mut subjects[si].replicates;
        let ri = *replicate_index[si].entry(rid.to_string()).or_insert_with(|| {
            reps.push(Replicate { id: rid.to_string(), x: Vec::new(), y: Vec::new() });
            reps.len() - 1
        });
        reps[ri].x.push(x);
        reps[ri].y.push(y);
    }
    if subjects.is_empty() {
        return Err(CliError::data("dataset has no rows"));
    }
    NestedDataset::new(subjects).map_err(CliError::from_core)
}

pub fn read_dataset_file(path: &Path) -> CliResult<NestedDataset> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    read_dataset(std::io::BufReader::new(file)).map_err(|e| match e {
        CliError::Data(m) => CliError::data(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Write a dataset with 17 significant digits, which round-trips exactly.
pub fn write_dataset<W: Write>(data: &NestedDataset, out: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    let fail = |e: csv::Error| CliError::data(e.to_string());
    w.write_record(HEADER).map_err(fail)?;
    for s in data.subjects() {
        for r in &s.replicates {
            for (x, y) in r.x.iter().zip(&r.y) {
                w.write_record([s.id.as_str(), r.id.as_str(), &format!("{x:.16e}"), &format!("{y:.16e}")])
                    .map_err(fail)?;
            }
        }
    }
    w.flush().map_err(|e| CliError::data(e.to_string()))
}

/// Truth labels keyed by subject id (and replicate id for curves).
pub fn truth_json(data: &NestedDataset, truth: &SimulatedTruth) -> Value {
    let mut subjects = Map::new();
    let mut curves = Map::new();
    for (i, s) in data.subjects().iter().enumerate() {
        subjects.insert(s.id.clone(), Value::from(truth.subject_labels[i]));
        let mut reps = Map::new();
        for (j, r) in s.replicates.iter().enumerate() {
            reps.insert(r.id.clone(), Value::from(truth.curve_labels[i][j]));
        }
        curves.insert(s.id.clone(), Value::Object(reps));
    }
    let mut root = Map::new();
    root.insert("subjects".into(), Value::Object(subjects));
    root.insert("curves".into(), Value::Object(curves));
    Value::Object(root)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_in_any_order_group_by_first_appearance() {
        let text = "subject_id,replicate_id,x,y\nb,1,0,1\na,1,0,2\nb,2,0,3\nb,1,1,4\n";
        let d = read_dataset(text.as_bytes()).unwrap();
        let ids: Vec<&str> = d.subjects().iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["b", "a"]);
        let b = &d.subjects()[0];
        assert_eq!(b.replicates[0].x, [0.0, 1.0]);
        assert_eq!(b.replicates[0].y, [1.0, 4.0]);
        assert_eq!(b.replicates[1].y, [3.0]);
    }

    #[test]
    fn exact_round_trip() {
        let text = "subject_id,replicate_id,x,y\ns,r,0.1,0.30000000000000004\ns,r,1e-300,-2.5e17\n";
        let d = read_dataset(text.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), d);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = "subject_id,replicate_id,x,y\ns,r,0,1\ns,r,zero,1\n";
        match read_dataset(bad.as_bytes()).unwrap_err() {
            CliError::Data(m) => assert!(m.starts_with("line 3:"), "{m}"),
            e => panic!("{e:?}"),
        }
        let short = "subject_id,replicate_id,x,y\ns,r,0\n";
        match read_dataset(short.as_bytes()).unwrap_err() {
            CliError::Data(m) => assert!(m.starts_with("line 2:"), "{m}"),
            e => panic!("{e:?}"),
        }
        let nan = "subject_id,replicate_id,x,y\ns,r,0,NaN\n";
        assert!(matches!(read_dataset(nan.as_bytes()), Err(CliError::Data(_))));
        assert!(matches!(read_dataset("a,b,c,d\n".as_bytes()), Err(CliError::Data(_))));
        assert!(matches!(read_dataset("subject_id,replicate_id,x,y\n".as_bytes()), Err(CliError::Data(_))));
    }
}
