use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::taxonomy::{self, CPU_SENSORS, GPU_SENSORS, MAX_LABEL};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensorKind {
    Gpu,
    Cpu,
}

impl SensorKind {
    pub fn sensors(self) -> &'static [&'static str] {
        match self {
            SensorKind::Gpu => &GPU_SENSORS,
            SensorKind::Cpu => &CPU_SENSORS,
        }
    }
}

/// What to do with NaN, infinite or empty readings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NonFinitePolicy {
    #[default]
    DropRow,
    /// Reuse the previous finite reading of the same sensor; rows with no
    /// earlier reading are dropped.
    ForwardFill,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IngestConfig {
    pub non_finite: NonFinitePolicy,
    /// Ignore columns that are neither identifiers nor sensors.
    pub allow_extra_columns: bool,
}

/// One job's series on one device.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrial {
    pub job_id: String,
    pub node: String,
    /// GPU index on the node; `None` for CPU series.
    pub gpu_index: Option<u32>,
    /// Taxonomy class index, when the row label names a known class.
    pub label: Option<usize>,
    pub sensor_kind: SensorKind,
    pub timestamps: Vec<f64>,
    /// `n_samples × n_sensors`, sensors in table order.
    pub series: Array2<f64>,
}

impl RawTrial {
    pub fn n_samples(&self) -> usize {
        self.series.nrows()
    }

    /// Stable identity of the series inside its job.
    pub fn trial_key(&self) -> String {
        match self.gpu_index {
            Some(g) => format!("{}/{}/gpu{}", self.job_id, self.node, g),
            None => format!("{}/{}", self.job_id, self.node),
        }
    }
}

const ID_COLUMNS: [&str; 5] = ["job_id", "node", "gpu_index", "timestamp", "label"];

pub fn ingest_raw_csv(
    path: impl AsRef<Path>,
    kind: SensorKind,
    config: IngestConfig,
) -> Result<Vec<RawTrial>> {
    let file = File::open(path)?;
    ingest_raw_reader(file, kind, config)
}

struct Group {
    job_id: String,
    node: String,
    gpu_index: Option<u32>,
    label: Option<usize>,
    rows: Vec<(f64, Vec<f64>)>,
}

/// Groups delimited telemetry rows into one trial per (job, node, gpu).
///
/// Trials come out in first-appearance order; rows inside a trial are
/// stably sorted by timestamp.
pub fn ingest_raw_reader<R: Read>(
    reader: R,
    kind: SensorKind,
    config: IngestConfig,
) -> Result<Vec<RawTrial>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::EmptyFile);
    }
    let col = |name: &str| headers.iter().position(|h| h == name);
    let job_col = col("job_id").ok_or_else(|| Error::SchemaMismatch("missing job_id column".into()))?;
    let ts_col =
        col("timestamp").ok_or_else(|| Error::SchemaMismatch("missing timestamp column".into()))?;
    let node_col = col("node");
    let gpu_col = col("gpu_index");
    let label_col = col("label");

    let sensors = kind.sensors();
    let sensor_cols: Vec<usize> = sensors
        .iter()
        .map(|s| {
            col(s).ok_or_else(|| Error::SchemaMismatch(format!("missing sensor column {s:?}")))
        })
        .collect::<Result<_>>()?;
    if !config.allow_extra_columns {
        if let Some(extra) = headers
            .iter()
            .find(|h| !ID_COLUMNS.contains(h) && !sensors.contains(h))
        {
            return Err(Error::SchemaMismatch(format!("unexpected column {extra:?}")));
        }
    }

    let mut groups: Vec<Group> = Vec::new();
    let mut index: std::collections::HashMap<(String, String, Option<u32>), usize> =
        Default::default();
    let mut any_row = false;
    for (row_no, record) in rdr.records().enumerate() {
        let record = record?;
        any_row = true;
        let line = row_no + 2;
        let field = |c: usize| record.get(c).unwrap_or("");
        let job_id = field(job_col).to_string();
        let node = node_col.map(|c| field(c).to_string()).unwrap_or_default();
        let gpu_index = match (kind, gpu_col) {
            (SensorKind::Gpu, Some(c)) => Some(field(c).parse::<u32>().map_err(|_| {
                Error::SchemaMismatch(format!("line {line}: bad gpu_index {:?}", field(c)))
            })?),
            (SensorKind::Gpu, None) => Some(0),
            (SensorKind::Cpu, _) => None,
        };
        let ts: f64 = field(ts_col)
            .parse()
            .ok()
            .filter(|t: &f64| t.is_finite())
            .ok_or_else(|| {
                Error::SchemaMismatch(format!("line {line}: bad timestamp {:?}", field(ts_col)))
            })?;
        let label = label_col.and_then(|c| parse_label(field(c)));
        let values: Vec<f64> = sensor_cols
            .iter()
            .map(|&c| field(c).parse::<f64>().unwrap_or(f64::NAN))
            .collect();

        let key = (job_id.clone(), node.clone(), gpu_index);
        let g = *index.entry(key).or_insert_with(|| {
            groups.push(Group {
                job_id,
                node,
                gpu_index,
                label,
                rows: Vec::new(),
            });
            groups.len() - 1
        });
        if groups[g].label.is_none() {
            groups[g].label = label;
        }
        groups[g].rows.push((ts, values));
    }
    if !any_row {
        return Err(Error::EmptyFile);
    }

    let width = sensors.len();
    let mut trials = Vec::with_capacity(groups.len());
    for mut g in groups {
        // stable: equal timestamps keep input order
        g.rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut timestamps = Vec::with_capacity(g.rows.len());
        let mut flat = Vec::with_capacity(g.rows.len() * width);
        let mut last: Option<Vec<f64>> = None;
        for (ts, mut values) in g.rows {
            if values.iter().any(|v| !v.is_finite()) {
                match (config.non_finite, &last) {
                    (NonFinitePolicy::ForwardFill, Some(prev)) => {
                        for (v, p) in values.iter_mut().zip(prev) {
                            if !v.is_finite() {
                                *v = *p;
                            }
                        }
                    }
                    _ => continue,
                }
            }
            timestamps.push(ts);
            flat.extend_from_slice(&values);
            last = Some(values);
        }
        if timestamps.is_empty() {
            log::warn!("job {} dropped: no finite rows", g.job_id);
            continue;
        }
        let series = Array2::from_shape_vec((timestamps.len(), width), flat)
            .expect("row width is fixed");
        trials.push(RawTrial {
            job_id: g.job_id,
            node: g.node,
            gpu_index: g.gpu_index,
            label: g.label,
            sensor_kind: kind,
            timestamps,
            series,
        });
    }
    Ok(trials)
}

fn parse_label(text: &str) -> Option<usize> {
    if text.is_empty() {
        return None;
    }
    match text.parse::<usize>() {
        Ok(i) if i <= MAX_LABEL => Some(i),
        Ok(_) => None,
        Err(_) => taxonomy::class_index(text),
    }
}

/// Writes trials in the layout `ingest_raw_csv` reads. Labels are written
/// as class names.
pub fn write_raw_csv<W: Write>(trials: &[RawTrial], writer: W) -> Result<()> {
    let Some(first) = trials.first() else {
        return Err(Error::EmptyInput);
    };
    let kind = first.sensor_kind;
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = vec!["job_id", "node"];
    if kind == SensorKind::Gpu {
        header.push("gpu_index");
    }
    header.extend(["timestamp", "label"]);
    header.extend(kind.sensors());
    w.write_record(&header)?;
    for t in trials {
        if t.sensor_kind != kind {
            return Err(Error::InvalidArgument("mixed sensor kinds".into()));
        }
        let label = t
            .label
            .map(|l| taxonomy::CLASSES[l].name.to_string())
            .unwrap_or_default();
        for (row, ts) in t.series.rows().into_iter().zip(&t.timestamps) {
            let mut rec: Vec<String> = vec![t.job_id.clone(), t.node.clone()];
            if let Some(g) = t.gpu_index {
                rec.push(g.to_string());
            }
            rec.push(ts.to_string());
            rec.push(label.clone());
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gpu_header() -> String {
        format!("job_id,node,gpu_index,timestamp,label,{}", GPU_SENSORS.join(","))
    }

    fn ingest(text: &str) -> Result<Vec<RawTrial>> {
        ingest_raw_reader(text.as_bytes(), SensorKind::Gpu, IngestConfig::default())
    }

    #[test]
    fn gpu_columns_give_seven_sensors() {
        let text = format!("{}\nj1,n1,0,10,VGG16,1,2,3,4,5,6,7\n", gpu_header());
        let trials = ingest(&text).unwrap();
        assert_eq!(trials.len(), 1);
        assert_eq!(trials[0].series.ncols(), 7);
        assert_eq!(trials[0].n_samples(), 1);
        assert_eq!(trials[0].label, Some(1));
    }

    #[test]
    fn multi_node_multi_gpu_job_splits_into_trials() {
        let mut text = gpu_header();
        for node in ["n1", "n2"] {
            for gpu in 0..2 {
                for t in 0..3 {
                    text.push_str(&format!("\njob7,{node},{gpu},{t},PNA,1,2,3,4,5,6,7"));
                }
            }
        }
        let trials = ingest(&text).unwrap();
        assert_eq!(trials.len(), 4);
        assert!(trials.iter().all(|t| t.label == Some(24) && t.n_samples() == 3));
        let mut keys: Vec<_> = trials.iter().map(|t| t.trial_key()).collect();
        keys.dedup();
        assert_eq!(keys.len(), 4);
    }

    #[test]
    fn cpu_schema() {
        let text = format!(
            "job_id,node,timestamp,label,{}\nj,n,1,Bert,1,2,3,4,5,6,7,8\n",
            CPU_SENSORS.join(",")
        );
        let trials = ingest_raw_reader(text.as_bytes(), SensorKind::Cpu, IngestConfig::default())
            .unwrap();
        assert_eq!(trials[0].series.ncols(), 8);
        assert_eq!(trials[0].gpu_index, None);
        // the same file is not a GPU file
        assert!(matches!(ingest(&text), Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn schema_and_empty_errors() {
        assert!(matches!(ingest(""), Err(Error::EmptyFile)));
        assert!(matches!(ingest(&gpu_header()), Err(Error::EmptyFile)));
        let extra = format!("{},fan_speed\nj,n,0,1,PNA,1,2,3,4,5,6,7,8\n", gpu_header());
        assert!(matches!(ingest(&extra), Err(Error::SchemaMismatch(_))));
        let lenient = ingest_raw_reader(
            extra.as_bytes(),
            SensorKind::Gpu,
            IngestConfig {
                allow_extra_columns: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(lenient[0].series.ncols(), 7);
    }

    #[test]
    fn non_finite_policies() {
        let text = format!(
            "{}\nj,n,0,1,PNA,1,1,1,1,1,1,1\nj,n,0,2,PNA,2,nan,2,2,2,2,2\nj,n,0,3,PNA,3,3,3,3,3,,3\n",
            gpu_header()
        );
        let dropped = ingest(&text).unwrap();
        assert_eq!(dropped[0].n_samples(), 1);
        let filled = ingest_raw_reader(
            text.as_bytes(),
            SensorKind::Gpu,
            IngestConfig {
                non_finite: NonFinitePolicy::ForwardFill,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(filled[0].n_samples(), 3);
        assert_eq!(filled[0].series[[1, 1]], 1.0);
        assert_eq!(filled[0].series[[2, 5]], 2.0);
    }

    #[test]
    fn unknown_label_is_none() {
        let text = format!("{}\nj,n,0,1,LSTM,1,1,1,1,1,1,1\n", gpu_header());
        assert_eq!(ingest(&text).unwrap()[0].label, None);
    }

    #[test]
    fn write_then_ingest_round_trips() {
        let text = format!(
            "{}\nj,n,0,1.5,PNA,1,2,3,4,5,6,7\nj,n,0,2.5,PNA,1.25,2,3,4,5,6,7\n",
            gpu_header()
        );
        let trials = ingest(&text).unwrap();
        let mut out = Vec::new();
        write_raw_csv(&trials, &mut out).unwrap();
        let again = ingest(std::str::from_utf8(&out).unwrap()).unwrap();
        assert_eq!(again, trials);
    }

    proptest! {
        #[test]
        fn rows_come_out_time_ordered(ts in proptest::collection::vec(0u32..50, 1..40)) {
            let mut text = gpu_header();
            for (i, t) in ts.iter().enumerate() {
                text.push_str(&format!("\nj,n,0,{t},PNA,{i},0,0,0,0,0,0"));
            }
            let trials = ingest(&text).unwrap();
            let t = &trials[0];
            prop_assert!(t.timestamps.windows(2).all(|w| w[0] <= w[1]));
            // ties keep input order
            for w in 0..t.n_samples().saturating_sub(1) {
                if t.timestamps[w] == t.timestamps[w + 1] {
                    prop_assert!(t.series[[w, 0]] < t.series[[w + 1, 0]]);
                }
            }
        }
    }
}
