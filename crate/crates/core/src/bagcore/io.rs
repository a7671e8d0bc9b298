//! CSV formats.
//!
//! * bags: `bag_id,instance_id,f0,...,f{d-1}`
//! * rater labels: `bag_id,rater,interval` with intervals `0,1-5,6-25,26-50,51-75,76-100`
//! * extent labels: `bag_id,extent` with extent in [0, 1]

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{combine_raters, Bag, BagDataset, ExtentInterval, Instance, RaterAssessment};
use crate::{Error, Result};

/// Reference labels for a set of bags.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Raters(Vec<RaterAssessment>),
    Extents(Vec<(String, f64)>),
}

impl Labels {
    /// Point-estimate extent per bag: rater midpoints averaged, or the given
    /// extent.
    pub fn extents(&self) -> Result<BTreeMap<String, f64>> {
        match self {
            Labels::Extents(v) => Ok(v.iter().cloned().collect()),
            Labels::Raters(r) => {
                let mut per_bag: BTreeMap<String, Vec<ExtentInterval>> = BTreeMap::new();
                for a in r {
                    per_bag.entry(a.bag_id.clone()).or_default().push(a.interval);
                }
                per_bag
                    .into_iter()
                    .map(|(k, v)| Ok((k, combine_raters(&v)?)))
                    .collect()
            }
        }
    }

    /// Distinct rater ids in first-appearance order (empty for extent labels).
    pub fn raters(&self) -> Vec<String> {
        match self {
            Labels::Extents(_) => Vec::new(),
            Labels::Raters(r) => {
                let mut out: Vec<String> = Vec::new();
                for a in r {
                    if !out.contains(&a.rater_id) {
                        out.push(a.rater_id.clone());
                    }
                }
                out
            }
        }
    }

    /// Intervals assigned by `rater`, keyed by bag id.
    pub fn rater_intervals(&self, rater: &str) -> HashMap<String, ExtentInterval> {
        match self {
            Labels::Extents(_) => HashMap::new(),
            Labels::Raters(r) => r
                .iter()
                .filter(|a| a.rater_id == rater)
                .map(|a| (a.bag_id.clone(), a.interval))
                .collect(),
        }
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

/// Creates the parent directories of an output path.
pub(crate) fn create_parent_dirs(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

pub(crate) fn create(path: &Path) -> Result<File> {
    create_parent_dirs(path)?;
    File::create(path).map_err(|e| Error::io(path, e))
}

pub fn read_bags<R: Read>(reader: R) -> Result<BagDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 || &headers[0] != "bag_id" || &headers[1] != "instance_id" {
        return Err(Error::data("bag CSV must start with `bag_id,instance_id`"));
    }
    let dim = headers.len() - 2;
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<Instance>> = HashMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != dim + 2 {
            return Err(Error::data(format!("row {}: expected {} fields", line + 2, dim + 2)));
        }
        let features = rec
            .iter()
            .skip(2)
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::data(format!("row {}: bad number `{s}`", line + 2)))
            })
            .collect::<Result<Vec<f64>>>()?;
        let bag_id = rec[0].to_string();
        let entry = groups.entry(bag_id.clone()).or_insert_with(|| {
            order.push(bag_id);
            Vec::new()
        });
        entry.push(Instance::new(&rec[1], features));
    }
    let bags = order
        .into_iter()
        .map(|id| {
            let inst = groups.remove(&id).unwrap_or_default();
            Bag::new(id, inst)
        })
        .collect::<Result<Vec<Bag>>>()?;
    BagDataset::new(bags)
}

pub fn read_bags_file(path: &Path) -> Result<BagDataset> {
    read_bags(open(path)?).map_err(|e| match e {
        Error::Data(m) => Error::data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_bags<W: Write>(dataset: &BagDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["bag_id".to_string(), "instance_id".to_string()];
    header.extend((0..dataset.feature_dim()).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for bag in dataset.bags() {
        for inst in &bag.instances {
            let mut rec = vec![bag.id.clone(), inst.id.clone()];
            rec.extend(inst.features.iter().map(|v| format_real(*v)));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_bags_file(dataset: &BagDataset, path: &Path) -> Result<()> {
    write_bags(dataset, create(path)?)
}

pub fn read_labels<R: Read>(reader: R) -> Result<Labels> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let hdr: Vec<&str> = headers.iter().map(String::as_str).collect();
    match hdr.as_slice() {
        ["bag_id", "rater", "interval"] => {
            let mut out = Vec::new();
            let mut seen = std::collections::HashSet::new();
            for rec in rdr.records() {
                let rec = rec?;
                let a = RaterAssessment {
                    bag_id: rec[0].to_string(),
                    rater_id: rec[1].to_string(),
                    interval: rec[2].parse()?,
                };
                if !seen.insert((a.rater_id.clone(), a.bag_id.clone())) {
                    return Err(Error::data(format!(
                        "rater `{}` assessed bag `{}` twice",
                        a.rater_id, a.bag_id
                    )));
                }
                out.push(a);
            }
            Ok(Labels::Raters(out))
        }
        ["bag_id", "extent"] => {
            let mut out = Vec::new();
            for rec in rdr.records() {
                let rec = rec?;
                let e: f64 = rec[1]
                    .trim()
                    .parse()
                    .map_err(|_| Error::data(format!("bad extent `{}`", &rec[1])))?;
                crate::bagcore::check_proportion(e, "extent").map_err(|e| Error::data(e.to_string()))?;
                out.push((rec[0].to_string(), e));
            }
            Ok(Labels::Extents(out))
        }
        _ => Err(Error::data(
            "labels CSV header must be `bag_id,rater,interval` or `bag_id,extent`",
        )),
    }
}

pub fn read_labels_file(path: &Path) -> Result<Labels> {
    read_labels(open(path)?)
}

pub fn write_rater_labels<W: Write>(assessments: &[RaterAssessment], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["bag_id", "rater", "interval"])?;
    for a in assessments {
        w.write_record([a.bag_id.as_str(), a.rater_id.as_str(), a.interval.label()])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_extent_labels<W: Write>(extents: &[(String, f64)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["bag_id", "extent"])?;
    for (id, e) in extents {
        w.write_record([id.clone(), format_real(*e)])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Attaches extents (and the implied binary labels) to every bag.
pub fn apply_labels(dataset: &mut BagDataset, labels: &Labels) -> Result<()> {
    let extents = labels.extents()?;
    for bag in dataset.bags_mut() {
        let e = extents
            .get(&bag.id)
            .ok_or_else(|| Error::data(format!("no label for bag `{}`", bag.id)))?;
        bag.set_extent(*e)?;
    }
    Ok(())
}

/// Shortest decimal that parses back to the same `f64`.
pub fn format_real(v: f64) -> String {
    let s = format!("{v:?}");
    s.strip_suffix(".0").map(str::to_string).unwrap_or(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bag_csv_round_trip() {
        let text = "bag_id,instance_id,f0,f1\nA,0,1.5,2\nA,1,0.1,-3\nB,0,4,5\n";
        let ds = read_bags(text.as_bytes()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.feature_dim(), 2);
        assert_eq!(ds.bags()[0].instances[1].features, vec![0.1, -3.0]);
        let mut out = Vec::new();
        write_bags(&ds, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn bad_bag_csv() {
        assert!(read_bags("id,x\n".as_bytes()).is_err());
        assert!(read_bags("bag_id,instance_id,f0\nA,0,zz\n".as_bytes()).is_err());
        assert!(read_bags("bag_id,instance_id,f0\nA,0,1\nA,0,2\n".as_bytes()).is_err());
    }

    #[test]
    fn rater_labels_combine() {
        let text = "bag_id,rater,interval\nA,r1,6-25\nA,r2,1-5\nB,r1,0\nB,r2,0\n";
        let labels = read_labels(text.as_bytes()).unwrap();
        let ext = labels.extents().unwrap();
        assert_eq!(ext["A"], 0.0925);
        assert_eq!(ext["B"], 0.0);
        assert_eq!(labels.raters(), vec!["r1", "r2"]);
        let dup = "bag_id,rater,interval\nA,r1,0\nA,r1,1-5\n";
        assert!(read_labels(dup.as_bytes()).is_err());
    }

    #[test]
    fn extent_labels() {
        let labels = read_labels("bag_id,extent\nA,0.25\nB,0\n".as_bytes()).unwrap();
        assert_eq!(labels.extents().unwrap()["A"], 0.25);
        assert!(read_labels("bag_id,extent\nA,1.25\n".as_bytes()).is_err());
        assert!(read_labels("bag,label\n".as_bytes()).is_err());
    }

    #[test]
    fn real_formatting_round_trips() {
        for v in [0.1, 1.0 / 3.0, 1e-300, -2.5, 100.0, 0.0925] {
            assert_eq!(format_real(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
        assert_eq!(format_real(2.0), "2");
    }
}
