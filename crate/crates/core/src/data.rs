//! Datasets: synthetic generators and CSV ingestion.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::network::{Activation, LossKind, Model, Network, NetworkConfig, Target};
use crate::rng::{stream, substream};

/// Name of the optional CSV column holding `train` / `validation`.
pub const SPLIT_COLUMN: &str = "split";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<Target>,
    /// `Some(C)` for classification.
    pub classes: Option<usize>,
    /// Row indices, ascending.
    pub train: Vec<usize>,
    /// Row indices, ascending, disjoint from `train`.
    pub validation: Vec<usize>,
}

impl Dataset {
    /// All rows go to the training split.
    pub fn new(features: Vec<Vec<f64>>, targets: Vec<Target>, classes: Option<usize>) -> Result<Self> {
        if features.len() != targets.len() {
            return Err(Error::Data(format!(
                "{} feature rows but {} targets",
                features.len(),
                targets.len()
            )));
        }
        if let Some(first) = features.first() {
            if first.is_empty() {
                return Err(Error::Data("rows have no features".into()));
            }
            if let Some(i) = features.iter().position(|r| r.len() != first.len()) {
                return Err(Error::Data(format!(
                    "row {i} has {} features, expected {}",
                    features[i].len(),
                    first.len()
                )));
            }
            if !features.iter().flatten().all(|v| v.is_finite()) {
                return Err(Error::Data("non-finite feature value".into()));
            }
        }
        match classes {
            Some(c) => {
                if c < 2 {
                    return Err(Error::Data(format!("need >= 2 classes, got {c}")));
                }
                for (index, t) in targets.iter().enumerate() {
                    match t {
                        Target::Class(k) if *k < c => {}
                        Target::Class(_) => return Err(Error::Label { index, classes: c }),
                        Target::Values(_) => {
                            return Err(Error::Data("value target in a classification dataset".into()))
                        }
                    }
                }
            }
            None => {
                let width = match targets.first() {
                    Some(Target::Values(v)) => v.len(),
                    Some(Target::Class(_)) => return Err(Error::Data("class target in a regression dataset".into())),
                    None => 0,
                };
                for t in &targets {
                    match t {
                        Target::Values(v) if v.len() == width && width > 0 && v.iter().all(|x| x.is_finite()) => {}
                        _ => return Err(Error::Data("inconsistent or non-finite regression targets".into())),
                    }
                }
            }
        }
        let n = features.len();
        Ok(Self {
            features,
            targets,
            classes,
            train: (0..n).collect(),
            validation: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Number of model outputs the targets call for.
    pub fn output_dim(&self) -> usize {
        match (self.classes, self.targets.first()) {
            (Some(c), _) => c,
            (None, Some(Target::Values(v))) => v.len(),
            _ => 0,
        }
    }

    /// Cross-entropy for classification, otherwise the squared loss that fits
    /// the target width.
    pub fn default_loss(&self) -> LossKind {
        match (self.classes, self.output_dim()) {
            (Some(_), _) => LossKind::CrossEntropy,
            (None, 1) => LossKind::SquaredScalar,
            _ => LossKind::SquaredVector,
        }
    }

    /// Uses the last `round(fraction·n)` rows for validation.
    pub fn split_last(&mut self, fraction: f64) -> Result<()> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::Config(format!(
                "validation fraction must lie in [0, 1), got {fraction}"
            )));
        }
        let n = self.len();
        let n_val = (fraction * n as f64).round() as usize;
        if n_val >= n {
            return Err(Error::Data(format!(
                "validation split leaves no training rows (n = {n})"
            )));
        }
        self.train = (0..n - n_val).collect();
        self.validation = (n - n_val..n).collect();
        Ok(())
    }
}

/// Regression targets from a random one-hidden-layer tanh teacher plus
/// Gaussian noise. Returns the dataset and the teacher.
pub fn gen_regression(n: usize, input_dim: usize, noise_sd: f64, seed: u64) -> Result<(Dataset, Network)> {
    if n < 2 {
        return Err(Error::Data(format!("need n >= 2, got {n}")));
    }
    if input_dim == 0 || !(noise_sd >= 0.0) || !noise_sd.is_finite() {
        return Err(Error::Data(
            "input_dim must be >= 1 and noise_sd finite and >= 0".into(),
        ));
    }
    let mut rng = substream(seed, stream::DATA);
    let teacher = Network::new(NetworkConfig {
        input_dim,
        hidden_widths: vec![16],
        output_dim: 1,
        activation: Activation::Tanh,
        seed: rng.random(),
    })?;
    let mut features = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..input_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (_, out) = teacher.cheap_forward(&x, false)?;
        let z: f64 = StandardNormal.sample(&mut rng);
        targets.push(Target::Values(vec![out[0] + noise_sd * z]));
        features.push(x);
    }
    Ok((Dataset::new(features, targets, None)?, teacher))
}

/// Unit-variance Gaussian clusters with pairwise centre distance at least
/// `separation`. Labels cycle through the classes before the rows are
/// shuffled, so class counts differ by at most one.
pub fn gen_blobs(n: usize, classes: usize, input_dim: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 || n < 2 || input_dim == 0 || !(separation > 0.0) || !separation.is_finite() {
        return Err(Error::Data(format!(
            "invalid blob parameters: n={n}, classes={classes}, input_dim={input_dim}, separation={separation}"
        )));
    }
    let mut rng = substream(seed, stream::DATA);
    let centers = blob_centers(classes, input_dim, separation, &mut rng);
    let mut rows: Vec<(Vec<f64>, usize)> = (0..n)
        .map(|i| {
            let k = i % classes;
            let x = centers[k]
                .iter()
                .map(|c| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    c + z
                })
                .collect();
            (x, k)
        })
        .collect();
    rows.shuffle(&mut rng);
    let (features, labels): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    Dataset::new(features, labels.into_iter().map(Target::Class).collect(), Some(classes))
}

fn blob_centers(classes: usize, dim: usize, separation: f64, rng: &mut crate::rng::Rng) -> Vec<Vec<f64>> {
    if classes <= dim {
        // Scaled basis vectors are exactly `separation` apart.
        let scale = separation / 2f64.sqrt();
        let mut axes: Vec<usize> = (0..dim).collect();
        axes.shuffle(rng);
        return axes[..classes]
            .iter()
            .map(|&a| {
                let mut c = vec![0.0; dim];
                c[a] = scale;
                c
            })
            .collect();
    }
    // Rejection sampling in a cube that grows until the classes fit.
    let mut half_width = separation;
    loop {
        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(classes);
        let mut attempts = 0;
        while centers.len() < classes && attempts < 1000 {
            attempts += 1;
            let c: Vec<f64> = (0..dim).map(|_| rng.random_range(-half_width..half_width)).collect();
            let far = centers
                .iter()
                .all(|o| o.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= separation);
            if far {
                centers.push(c);
            }
        }
        if centers.len() == classes {
            return centers;
        }
        half_width *= 1.5;
    }
}

/// Column layout for [`load_csv`].
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    /// `None` uses every column that is neither a target nor the split column.
    pub feature_cols: Option<Vec<String>>,
    pub target_cols: Vec<String>,
    /// `Some(C)` reads the single target column as an integer class label.
    pub classes: Option<usize>,
    /// Used only when there is no split column.
    pub validation_fraction: f64,
}

impl CsvSchema {
    pub fn regression(target: &str) -> Self {
        Self {
            feature_cols: None,
            target_cols: vec![target.to_string()],
            classes: None,
            validation_fraction: 0.0,
        }
    }

    pub fn classification(target: &str, classes: usize) -> Self {
        Self {
            classes: Some(classes),
            ..Self::regression(target)
        }
    }
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

/// [`load_csv`] from any reader. Line numbers in errors are 1-based and count
/// the header.
pub fn read_csv<R: Read>(input: R, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| Error::Format {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    let find = |name: &str| -> Result<usize> {
        header.iter().position(|h| h == name).ok_or_else(|| Error::Format {
            line: 1,
            msg: format!("missing column {name:?}"),
        })
    };
    if schema.target_cols.is_empty() {
        return Err(Error::Config("at least one target column is required".into()));
    }
    if schema.classes.is_some() && schema.target_cols.len() != 1 {
        return Err(Error::Config("classification takes exactly one target column".into()));
    }
    let target_idx = schema.target_cols.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let split_idx = header.iter().position(|h| h == SPLIT_COLUMN);
    let feature_idx: Vec<usize> = match &schema.feature_cols {
        Some(cols) => cols.iter().map(|c| find(c)).collect::<Result<_>>()?,
        None => (0..header.len())
            .filter(|i| !target_idx.contains(i) && Some(*i) != split_idx)
            .collect(),
    };
    if feature_idx.is_empty() {
        return Err(Error::Data("no feature columns".into()));
    }

    let mut features = Vec::new();
    let mut targets = Vec::new();
    let mut is_val = Vec::new();
    for (row_no, record) in reader.records().enumerate() {
        let line = row_no as u64 + 2;
        let record = record.map_err(|e| Error::Format {
            line: e.position().map_or(line, |p| p.line()),
            msg: e.to_string(),
        })?;
        let field = |i: usize| -> Result<f64> {
            let raw = record.get(i).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Format {
                    line,
                    msg: format!("column {:?}: cannot parse {raw:?} as a finite number", &header[i]),
                })
        };
        features.push(feature_idx.iter().map(|&i| field(i)).collect::<Result<Vec<_>>>()?);
        let target = match schema.classes {
            Some(c) => {
                let raw = record.get(target_idx[0]).unwrap_or("");
                let k: usize = raw.parse().map_err(|_| Error::Format {
                    line,
                    msg: format!("cannot parse class label {raw:?}"),
                })?;
                if k >= c {
                    return Err(Error::Format {
                        line,
                        msg: format!("class label {k} out of range for {c} classes"),
                    });
                }
                Target::Class(k)
            }
            None => Target::Values(target_idx.iter().map(|&i| field(i)).collect::<Result<_>>()?),
        };
        targets.push(target);
        if let Some(s) = split_idx {
            match record.get(s).unwrap_or("") {
                "train" => is_val.push(false),
                "validation" | "val" => is_val.push(true),
                other => {
                    return Err(Error::Format {
                        line,
                        msg: format!("split must be train or validation, got {other:?}"),
                    })
                }
            }
        }
    }
    if features.len() < 2 {
        return Err(Error::Data(format!("need at least 2 rows, got {}", features.len())));
    }
    let mut data = Dataset::new(features, targets, schema.classes)?;
    if split_idx.is_some() {
        data.train = (0..data.len()).filter(|&i| !is_val[i]).collect();
        data.validation = (0..data.len()).filter(|&i| is_val[i]).collect();
        if data.train.is_empty() {
            return Err(Error::Data("split column marks no training rows".into()));
        }
    } else {
        data.split_last(schema.validation_fraction)?;
    }
    Ok(data)
}

/// Columns `x0..`, then `label` or `y0..`, then `split`. Floats are written in
/// shortest round-trip form.
pub fn write_csv<W: Write>(data: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut header: Vec<String> = (0..data.input_dim()).map(|j| format!("x{j}")).collect();
    match data.classes {
        Some(_) => header.push("label".into()),
        None => header.extend((0..data.output_dim()).map(|j| format!("y{j}"))),
    }
    header.push(SPLIT_COLUMN.into());
    w.write_record(&header).map_err(csv_err)?;
    let mut is_val = vec![false; data.len()];
    data.validation.iter().for_each(|&i| is_val[i] = true);
    for (i, (x, t)) in data.features.iter().zip(&data.targets).enumerate() {
        let mut row: Vec<String> = x.iter().map(f64::to_string).collect();
        match t {
            Target::Class(k) => row.push(k.to_string()),
            Target::Values(v) => row.extend(v.iter().map(f64::to_string)),
        }
        row.push(if is_val[i] { "validation" } else { "train" }.into());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// The schema that [`write_csv`] produces for `data`.
pub fn schema_for(data: &Dataset) -> CsvSchema {
    match data.classes {
        Some(c) => CsvSchema::classification("label", c),
        None => CsvSchema {
            target_cols: (0..data.output_dim()).map(|j| format!("y{j}")).collect(),
            ..CsvSchema::regression("y0")
        },
    }
}
