//! File formats. Category indices are 1-based in every file and 0-based in
//! memory.
//!
//! * Datasets are CSV with header `domain,w,x,y`; `domain` is a source index
//!   or `T`, and target rows leave `x` and `y` empty.
//! * Models and dimension sidecars are JSON. Conditional pmfs are stored as
//!   lists of columns, one pmf per conditioning value.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{check_record, Dataset, Domain, Record};
use crate::error::{Error, Result};
use crate::linalg::CategorySpec;
use crate::scm::{ScmParts, ScmSpec};

pub const DATASET_HEADER: [&str; 4] = ["domain", "w", "x", "y"];

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn parse_index(field: &str, what: &str, line: u64) -> Result<usize> {
    let v: usize = field.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("{what} must be a positive integer, got {field:?}"),
    })?;
    if v == 0 {
        return Err(Error::Parse {
            line,
            message: format!("{what} indices are 1-based, got 0"),
        });
    }
    Ok(v - 1)
}

fn parse_row(fields: &csv::StringRecord, line: u64) -> Result<Record> {
    let get = |i: usize| fields.get(i).unwrap_or("").trim();
    let w = parse_index(get(1), "w", line)?;
    let (x, y) = (get(2), get(3));
    if get(0) == "T" {
        if !x.is_empty() || !y.is_empty() {
            return Err(Error::Parse {
                line,
                message: "target row carries x/y".into(),
            });
        }
        return Ok(Record::target(w));
    }
    let e = parse_index(get(0), "domain", line)?;
    if x.is_empty() || y.is_empty() {
        return Err(Error::Parse {
            line,
            message: "source row is missing x or y".into(),
        });
    }
    Ok(Record::source(e, w, parse_index(x, "x", line)?, parse_index(y, "y", line)?))
}

pub fn read_dataset<R: Read>(reader: R, dims: &CategorySpec) -> Result<Dataset> {
    dims.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().map(str::trim).ne(DATASET_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {:?}", DATASET_HEADER.join(",")),
        });
    }
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let record = parse_row(&row, line)?;
        check_record(dims, &record).map_err(|message| Error::Parse { line, message })?;
        records.push(record);
    }
    Dataset::new(dims.clone(), records)
}

pub fn load_dataset(path: &Path, dims: &CategorySpec) -> Result<Dataset> {
    read_dataset(fs::File::open(path)?, dims)
}

pub fn write_dataset<W: Write>(writer: W, ds: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(DATASET_HEADER)?;
    for r in ds.records() {
        let domain = match r.domain {
            Domain::Source(e) => (e + 1).to_string(),
            Domain::Target => "T".to_string(),
        };
        let opt = |v: Option<usize>| v.map_or(String::new(), |v| (v + 1).to_string());
        w.write_record([domain, (r.w + 1).to_string(), opt(r.x), opt(r.y)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn dataset_to_string(ds: &Dataset) -> Result<String> {
    let mut buf = Vec::new();
    write_dataset(&mut buf, ds)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    write_atomic(path, dataset_to_string(ds)?.as_bytes())
}

/// On-disk layout of a model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub dims: CategorySpec,
    /// `k_E` columns of length `k_U`.
    pub p_u_given_e: Vec<Vec<f64>>,
    pub q_u: Vec<f64>,
    /// `k_U` columns of length `k_W`.
    pub p_w_given_u: Vec<Vec<f64>>,
    /// `k_U` columns of length `k_X`.
    pub p_x_given_u: Vec<Vec<f64>>,
    /// Indexed `[u][w][x]`, each a pmf over Y.
    pub p_y_given_uwx: Vec<Vec<Vec<Vec<f64>>>>,
    /// Over `{e_1, ..., e_kE, e_T}`.
    pub domain_prior: Vec<f64>,
}

impl From<&ScmSpec> for ModelFile {
    fn from(spec: &ScmSpec) -> Self {
        let p = spec.parts();
        ModelFile {
            dims: spec.dims.clone(),
            p_u_given_e: p.p_u_given_e,
            q_u: p.q_u,
            p_w_given_u: p.p_w_given_u,
            p_x_given_u: p.p_x_given_u,
            p_y_given_uwx: p.p_y_given_uwx,
            domain_prior: p.domain_prior,
        }
    }
}

impl TryFrom<ModelFile> for ScmSpec {
    type Error = Error;

    fn try_from(m: ModelFile) -> Result<Self> {
        ScmSpec::new(
            m.dims,
            ScmParts {
                p_u_given_e: m.p_u_given_e,
                q_u: m.q_u,
                p_w_given_u: m.p_w_given_u,
                p_x_given_u: m.p_x_given_u,
                p_y_given_uwx: m.p_y_given_uwx,
                domain_prior: m.domain_prior,
            },
        )
    }
}

pub fn model_to_string(spec: &ScmSpec) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ModelFile::from(spec))? + "\n")
}

pub fn model_from_str(s: &str) -> Result<ScmSpec> {
    serde_json::from_str::<ModelFile>(s)?.try_into()
}

pub fn load_model(path: &Path) -> Result<ScmSpec> {
    model_from_str(&fs::read_to_string(path)?)
}

pub fn save_model(path: &Path, spec: &ScmSpec) -> Result<()> {
    write_atomic(path, model_to_string(spec)?.as_bytes())
}

pub fn load_dims(path: &Path) -> Result<CategorySpec> {
    let dims: CategorySpec = serde_json::from_str(&fs::read_to_string(path)?)?;
    dims.validate()?;
    Ok(dims)
}

pub fn save_dims(path: &Path, dims: &CategorySpec) -> Result<()> {
    write_atomic(path, (serde_json::to_string_pretty(dims)? + "\n").as_bytes())
}

/// Serialises `value` as pretty JSON followed by a newline.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::scm::fixtures::{counterexample, CounterexampleVariant};
    use crate::scm::{sample_scm_spec, simulate_dataset};

    fn dims() -> CategorySpec {
        CategorySpec::new(2, 2, 2, 2, 2).unwrap()
    }

    #[test]
    fn reads_mixed_rows() {
        let csv = "domain,w,x,y\n1,1,2,1\nT,2,,\n2,2,1,2\n";
        let ds = read_dataset(csv.as_bytes(), &dims()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.target_records().count(), 1);
        assert_eq!(ds.source_records().count(), 2);
        assert_eq!(ds.records()[0], Record::source(0, 0, 1, 0));
        assert_eq!(ds.records()[1], Record::target(1));
    }

    #[test]
    fn target_with_outcome_is_rejected_with_line() {
        let csv = "domain,w,x,y\n1,1,2,1\nT,2,1,1\n";
        match read_dataset(csv.as_bytes(), &dims()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("target row carries x/y"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_rows_are_reported() {
        for (csv, line) in [
            ("domain,w,x,y\n1,3,1,1\n", 2),
            ("domain,w,x,y\n1,1,1,1\n0,1,1,1\n", 3),
            ("domain,w,x,y\n1,1,,1\n", 2),
            ("domain,w,x,y\n1,a,1,1\n", 2),
            ("domain,w,x,y\n1,1,1\n", 2),
        ] {
            match read_dataset(csv.as_bytes(), &dims()) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{csv}"),
                other => panic!("{csv}: unexpected {other:?}"),
            }
        }
        assert!(matches!(
            read_dataset("a,b,c,d\n".as_bytes(), &dims()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn dataset_round_trip() {
        let mut rng = seeded(1);
        let spec = sample_scm_spec(&dims(), &mut rng).unwrap();
        let ds = simulate_dataset(&spec, 200, &mut rng);
        let text = dataset_to_string(&ds).unwrap();
        let back = read_dataset(text.as_bytes(), &dims()).unwrap();
        assert_eq!(back, ds);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        save_dataset(&path, &ds).unwrap();
        assert_eq!(load_dataset(&path, &dims()).unwrap(), ds);
    }

    #[test]
    fn model_round_trip_is_exact() {
        let mut rng = seeded(2);
        let spec = sample_scm_spec(&CategorySpec::new(3, 2, 3, 2, 2).unwrap(), &mut rng).unwrap();
        let text = model_to_string(&spec).unwrap();
        let back = model_from_str(&text).unwrap();
        assert_eq!(back.parts().p_y_given_uwx, spec.parts().p_y_given_uwx);
        assert_eq!(back.p_w_given_u, spec.p_w_given_u);
        assert_eq!(model_to_string(&back).unwrap(), text);

        let fixture = counterexample(CounterexampleVariant::First);
        let json: serde_json::Value = serde_json::from_str(&model_to_string(&fixture).unwrap()).unwrap();
        assert_eq!(json["p_w_given_u"][0], serde_json::json!([0.23, 0.46, 0.31]));
        for key in ["dims", "p_u_given_e", "q_u", "p_w_given_u", "p_x_given_u", "p_y_given_uwx", "domain_prior"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn invalid_model_is_rejected() {
        let mut m = ModelFile::from(&counterexample(CounterexampleVariant::First));
        m.q_u = vec![0.5, 0.5, 0.5];
        assert!(ScmSpec::try_from(m).is_err());
    }

    #[test]
    fn dims_sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dims.json");
        save_dims(&path, &dims()).unwrap();
        assert_eq!(load_dims(&path).unwrap(), dims());
        fs::write(&path, r#"{"k_e":0,"k_u":1,"k_w":1,"k_x":1,"k_y":1}"#).unwrap();
        assert!(load_dims(&path).is_err());
    }
}
