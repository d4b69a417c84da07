//! Flat `key = value` settings: defaults, then the config file, then flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use gradpred::{Error, Result};

pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, help }
}

pub const COMMON: &[Key] = &[
    key("seed", "0", "root seed for every random stream"),
    key("execution", "parallel", "parallel or sequential"),
];

pub const DATA: &[Key] = &[
    key("source", "regression", "regression, blobs or csv"),
    key("n", "1000", "number of generated examples"),
    key("input_dim", "8", "feature dimension of generated data"),
    key("noise_sd", "0.1", "target noise for regression data"),
    key("classes", "10", "number of blob classes (csv: 0 means regression)"),
    key("separation", "3.0", "minimum distance between blob centers"),
    key("data_path", "", "csv file when source = csv"),
    key(
        "feature_cols",
        "",
        "comma-separated feature columns (empty: all others)",
    ),
    key("target_cols", "label", "comma-separated target columns"),
    key(
        "validation_fraction",
        "0.2",
        "trailing fraction held out for validation",
    ),
];

pub const MODEL: &[Key] = &[
    key("hidden", "32,16", "comma-separated hidden widths"),
    key("activation", "tanh", "tanh, relu or identity"),
];

pub const TRAIN: &[Key] = &[
    key("epochs", "10", "passes over the training split"),
    key("batch_size", "32", "mini-batch size m"),
    key("control_fraction", "0.25", "control fraction f in (0, 1]"),
    key("loss", "auto", "auto, squared_scalar, squared_vector or cross_entropy"),
    key("label_smoothing", "0", "label smoothing for cross-entropy"),
    key("optimizer", "sgd", "sgd or sgd_momentum"),
    key("learning_rate", "0.05", "base step size"),
    key("momentum", "0.9", "momentum coefficient"),
    key("lr_decay", "0", "step size lr / (1 + decay * t)"),
    key("weight_decay", "0", "L2 penalty added to the gradient"),
    key(
        "predictor",
        "structured",
        "scalar, structured, structured:RANK or perfect",
    ),
    key("refit_period", "50", "refit the predictor every this many steps"),
    key("refit_buffer", "256", "fit samples retained for refitting"),
    key(
        "ridge_lambda",
        "auto",
        "predictor ridge strength (auto: data-scaled default)",
    ),
    key("budget", "none", "cost-unit budget (none: unlimited)"),
    key("max_steps", "none", "optimizer step cap (none: unlimited)"),
    key("warmup", "true", "fit the predictor on a warmup batch before training"),
    key("eval_every", "1", "validation cadence in steps"),
    key("reduce_precision", "false", "round cheap-pass outputs to f32"),
];

pub const COST: &[Key] = &[
    key("cost_backward", "2", "cost of one backward pass"),
    key("cost_forward", "1", "cost of one forward pass"),
    key("cost_cheap_forward", "0.7", "cost of one cheap forward pass"),
];

pub const ANALYZE: &[Key] = &[
    key("f", "0.05:1:20", "control fractions: list or lo:hi:n"),
    key("rho", "0:0.95:20", "alignments: list or lo:hi:n"),
    key("kappa", "1", "scale ratios: list or lo:hi:n"),
    key("f_min", "0.01", "lower clamp for the optimal fraction"),
];

pub const SIMULATE: &[Key] = &[
    key("f", "0.25", "control fractions: list or lo:hi:n"),
    key("rho", "0.8", "alignments: list or lo:hi:n"),
    key("kappa", "1", "scale ratios: list or lo:hi:n"),
    key("sigma_g", "1", "true-gradient noise scale"),
    key("m", "20", "mini-batch size"),
    key("trials", "10000", "Monte Carlo trials per grid point"),
    key("dim", "8", "gradient dimension"),
    key("mean_scale", "1", "scale of the true mean gradient"),
];

/// Resolved settings for one command.
#[derive(Debug, Clone)]
pub struct Settings {
    values: BTreeMap<&'static str, String>,
}

impl Settings {
    pub fn defaults(tables: &[&[Key]]) -> Self {
        let values = tables
            .iter()
            .flat_map(|t| t.iter())
            .map(|k| (k.name, k.default.to_string()))
            .collect();
        Self { values }
    }

    pub fn set(&mut self, name: &str, value: &str) -> Result<()> {
        let slot = self
            .values
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown key {name:?}")))?;
        *slot = value.trim().to_string();
        Ok(())
    }

    /// `key = value` lines; `#` starts a comment. Repeated keys are rejected.
    pub fn apply_file(&mut self, text: &str, origin: &Path) -> Result<()> {
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{}:{}: expected key = value", origin.display(), i + 1)))?;
            let k = k.trim();
            if seen.contains(&k) {
                return Err(Error::Config(format!(
                    "{}:{}: repeated key {k:?}",
                    origin.display(),
                    i + 1
                )));
            }
            seen.push(k);
            self.set(k, v)
                .map_err(|e| Error::Config(format!("{}:{}: {e}", origin.display(), i + 1)))?;
        }
        Ok(())
    }

    /// `k=v` from `--set`.
    pub fn apply_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got {assignment:?}")))?;
        self.set(k.trim(), v)
    }

    pub fn raw(&self, name: &str) -> &str {
        self.values
            .get(name)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("key {name} not registered"))
    }

    pub fn get<T: FromStr>(&self, name: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let raw = self.raw(name);
        raw.parse().map_err(|e| Error::Config(format!("{name} = {raw:?}: {e}")))
    }

    /// `none` (or empty) maps to `None`.
    pub fn get_opt<T: FromStr>(&self, name: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.raw(name) {
            "" | "none" | "auto" => Ok(None),
            _ => self.get(name).map(Some),
        }
    }

    pub fn get_list<T: FromStr>(&self, name: &str) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        let raw = self.raw(name);
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| Error::Config(format!("{name} = {raw:?}: {e}"))))
            .collect()
    }

    /// Either a comma list or `lo:hi:n`.
    pub fn get_axis(&self, name: &str) -> Result<Vec<f64>> {
        let raw = self.raw(name);
        let parts: Vec<&str> = raw.split(':').collect();
        let axis = match parts.as_slice() {
            [lo, hi, n] => {
                let bad = |e: &dyn Display| Error::Config(format!("{name} = {raw:?}: {e}"));
                let lo: f64 = lo.trim().parse().map_err(|e| bad(&e))?;
                let hi: f64 = hi.trim().parse().map_err(|e| bad(&e))?;
                let n: usize = n.trim().parse().map_err(|e| bad(&e))?;
                gradpred::analysis::Sweep::linspace(lo, hi, n)
            }
            [_] => self.get_list(name)?,
            _ => return Err(Error::Config(format!("{name} = {raw:?}: expected a list or lo:hi:n"))),
        };
        if axis.is_empty() {
            return Err(Error::Config(format!("{name} is empty")));
        }
        Ok(axis)
    }

    /// Effective configuration in the same format the loader accepts.
    pub fn dump(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Settings {
        Settings::defaults(&[COMMON, ANALYZE])
    }

    #[test]
    fn unknown_key_rejected() {
        let mut s = sample();
        assert!(matches!(s.set("batch_size", "3"), Err(Error::Config(_))));
        assert!(s.apply_assignment("f").is_err());
    }

    #[test]
    fn file_then_override() {
        let mut s = sample();
        s.apply_file("# c\nseed = 4\nf = 0.1, 0.2  # trailing\n\n", Path::new("x"))
            .unwrap();
        s.apply_assignment("seed=9").unwrap();
        assert_eq!(s.get::<u64>("seed").unwrap(), 9);
        assert_eq!(s.get_axis("f").unwrap(), vec![0.1, 0.2]);
        assert!(s.apply_file("seed = 1\nseed = 2\n", Path::new("x")).is_err());
        assert!(s
            .apply_file("seed 1\n", Path::new("x"))
            .unwrap_err()
            .to_string()
            .contains("x:1"));
    }

    #[test]
    fn axes_and_optionals() {
        let mut s = Settings::defaults(&[COMMON, ANALYZE, TRAIN]);
        assert_eq!(s.get_axis("f").unwrap().len(), 20);
        s.set("rho", "0:1:3").unwrap();
        assert_eq!(s.get_axis("rho").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(s.get_opt::<f64>("budget").unwrap(), None);
        s.set("budget", "12.5").unwrap();
        assert_eq!(s.get_opt::<f64>("budget").unwrap(), Some(12.5));
        s.set("kappa", "1:2").unwrap();
        assert!(s.get_axis("kappa").is_err());
    }

    #[test]
    fn dump_round_trips() {
        let mut s = sample();
        s.set("kappa", "0.5,2").unwrap();
        let mut t = sample();
        t.apply_file(&s.dump(), Path::new("dump")).unwrap();
        assert_eq!(s.dump(), t.dump());
    }
}
