//! Artifact files: model JSON, prediction CSV and run records.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::grid::GridSearch;
use crate::bagcore::io::format_real;
use crate::bagcore::Bag;
use crate::eval::BagPrediction;
use crate::weak::TrainedBagModel;
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// The command, its resolved configuration and root seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config: Value,
}

impl RunRecord {
    pub fn new(command: &str, seed: Option<u64>, config: Value) -> Self {
        RunRecord {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub run: RunRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_search: Option<GridSearch>,
    pub model: TrainedBagModel,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    crate::bagcore::io::create(path).map(BufWriter::new)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

/// Sidecar run record for CSV artifacts: `<file>.run.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}

pub fn write_sidecar(path: &Path, run: &RunRecord) -> Result<()> {
    write_json(run, &sidecar_path(path))
}

/// Instance-level predictions for one bag.
#[derive(Debug, Clone, PartialEq)]
pub struct BagOutput {
    pub bag_id: String,
    pub extent: f64,
    pub instance_ids: Vec<String>,
    pub probabilities: Vec<f64>,
    pub labels: Vec<bool>,
}

impl BagOutput {
    pub fn predict(model: &TrainedBagModel, bag: &Bag) -> Result<Self> {
        let probabilities = model.instance_probabilities(bag)?;
        let labels: Vec<bool> = probabilities.iter().map(|&p| p > model.instance_threshold).collect();
        let extent = labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64;
        Ok(BagOutput {
            bag_id: bag.id.clone(),
            extent,
            instance_ids: bag.instances.iter().map(|i| i.id.clone()).collect(),
            probabilities,
            labels,
        })
    }

    pub fn to_prediction(&self) -> BagPrediction {
        BagPrediction {
            bag_id: self.bag_id.clone(),
            extent: self.extent,
            instance_labels: self.labels.clone(),
        }
    }
}

/// `bag_id,extent,instance_id,prob,label`, one row per instance.
pub fn write_predictions<W: Write>(outputs: &[BagOutput], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["bag_id", "extent", "instance_id", "prob", "label"])?;
    for o in outputs {
        let extent = format_real(o.extent);
        for ((id, p), l) in o.instance_ids.iter().zip(&o.probabilities).zip(&o.labels) {
            w.write_record([o.bag_id.as_str(), &extent, id, &format_real(*p), if *l { "1" } else { "0" }])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_predictions_file(outputs: &[BagOutput], path: &Path) -> Result<()> {
    write_predictions(outputs, create(path)?)
}

/// Reads `pred.csv` back into per-bag predictions, in file order.
pub fn read_predictions<R: Read>(reader: R) -> Result<Vec<BagPrediction>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if headers != ["bag_id", "extent", "instance_id", "prob", "label"] {
        return Err(Error::data("prediction CSV header must be `bag_id,extent,instance_id,prob,label`"));
    }
    let mut out: Vec<BagPrediction> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let id = &rec[0];
        let extent: f64 = rec[1].trim().parse().map_err(|_| Error::data(format!("bad extent `{}`", &rec[1])))?;
        let label = match rec[4].trim() {
            "1" => true,
            "0" => false,
            other => return Err(Error::data(format!("bad instance label `{other}`"))),
        };
        match out.last_mut() {
            Some(last) if last.bag_id == id => {
                if last.extent != extent {
                    return Err(Error::data(format!("bag `{id}` has inconsistent extents")));
                }
                last.instance_labels.push(label);
            }
            _ => {
                if !seen.insert(id.to_string()) {
                    return Err(Error::data(format!("rows of bag `{id}` are not contiguous")));
                }
                out.push(BagPrediction {
                    bag_id: id.to_string(),
                    extent,
                    instance_labels: vec![label],
                });
            }
        }
    }
    Ok(out)
}

pub fn read_predictions_file(path: &Path) -> Result<Vec<BagPrediction>> {
    read_predictions(File::open(path).map_err(|e| Error::io(path, e))?)
}
