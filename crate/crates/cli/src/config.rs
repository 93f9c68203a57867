//! Experiment configuration: built-in defaults, `key = value` config files,
//! and flag overrides, resolved with precedence flags > file > defaults.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use graffopt::optimize::StopCriteria;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Problem {
    Quadratic,
    Mean,
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Problem::Quadratic => "quadratic",
            Problem::Mean => "mean",
        })
    }
}

impl FromStr for Problem {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "quadratic" => Ok(Problem::Quadratic),
            "mean" => Ok(Problem::Mean),
            other => Err(format!(
                "unknown problem '{other}' (expected quadratic or mean)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Sd,
    Cg,
    Newton,
    SdProj,
    NewtonProj,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Sd => "sd",
            Algorithm::Cg => "cg",
            Algorithm::Newton => "newton",
            Algorithm::SdProj => "sd-proj",
            Algorithm::NewtonProj => "newton-proj",
        })
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sd" => Ok(Algorithm::Sd),
            "cg" => Ok(Algorithm::Cg),
            "newton" => Ok(Algorithm::Newton),
            "sd-proj" => Ok(Algorithm::SdProj),
            "newton-proj" => Ok(Algorithm::NewtonProj),
            other => Err(format!(
                "unknown algorithm '{other}' (expected sd, cg, newton, sd-proj, or newton-proj)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    K,
    N,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::K => "k",
            SweepAxis::N => "n",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "k" => Ok(SweepAxis::K),
            "n" => Ok(SweepAxis::N),
            other => Err(format!("unknown sweep axis '{other}' (expected k or n)")),
        }
    }
}

/// Comma-separated unsigned integers; blank tokens are ignored so a bare ""
/// resolves to an empty sweep, which validation then rejects.
pub fn parse_sweep_values(s: &str) -> Result<Vec<usize>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|tok| !tok.is_empty())
        .map(|tok| {
            tok.parse::<usize>()
                .map_err(|_| format!("bad sweep value '{tok}' (expected an unsigned integer)"))
        })
        .collect()
}

/// One layer of configuration. Fields left `None` fall through to the next
/// layer when merged with [`Partial::or`].
#[derive(Debug, Default, Clone)]
pub struct Partial {
    pub problem: Option<Problem>,
    pub algorithm: Option<Algorithm>,
    pub n: Option<usize>,
    pub k: Option<usize>,
    pub m: Option<usize>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub grad_tol: Option<f64>,
    pub step_tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub out: Option<PathBuf>,
    pub timing: Option<bool>,
    pub sweep: Option<SweepAxis>,
    pub sweep_values: Option<Vec<usize>>,
}

impl Partial {
    /// Field-wise precedence: values in `self` win over `fallback`.
    pub fn or(self, fallback: Partial) -> Partial {
        Partial {
            problem: self.problem.or(fallback.problem),
            algorithm: self.algorithm.or(fallback.algorithm),
            n: self.n.or(fallback.n),
            k: self.k.or(fallback.k),
            m: self.m.or(fallback.m),
            trials: self.trials.or(fallback.trials),
            seed: self.seed.or(fallback.seed),
            grad_tol: self.grad_tol.or(fallback.grad_tol),
            step_tol: self.step_tol.or(fallback.step_tol),
            max_iter: self.max_iter.or(fallback.max_iter),
            out: self.out.or(fallback.out),
            timing: self.timing.or(fallback.timing),
            sweep: self.sweep.or(fallback.sweep),
            sweep_values: self.sweep_values.or(fallback.sweep_values),
        }
    }

    /// Parses a `key = value` config file. Keys mirror the long flags; `#`
    /// starts a comment. Unknown and duplicated keys are errors so typos do
    /// not silently fall back to defaults.
    pub fn from_file(path: &Path) -> Result<Partial, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config file {}: {e}", path.display()))?;
        let mut out = Partial::default();
        let mut seen: Vec<String> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = idx + 1;
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {lineno}: expected 'key = value', got '{line}'"))?;
            let key = key.trim();
            let value = value.trim();
            if seen.iter().any(|k| k == key) {
                return Err(format!("line {lineno}: duplicate key '{key}'"));
            }
            seen.push(key.to_string());
            let ctx = |e: String| format!("line {lineno}: {e}");
            match key {
                "problem" => out.problem = Some(value.parse().map_err(ctx)?),
                "algo" => out.algorithm = Some(value.parse().map_err(ctx)?),
                "n" => out.n = Some(parse_num(value, key).map_err(ctx)?),
                "k" => out.k = Some(parse_num(value, key).map_err(ctx)?),
                "m" => out.m = Some(parse_num(value, key).map_err(ctx)?),
                "trials" => out.trials = Some(parse_num(value, key).map_err(ctx)?),
                "seed" => out.seed = Some(parse_num(value, key).map_err(ctx)?),
                "grad-tol" => out.grad_tol = Some(parse_num(value, key).map_err(ctx)?),
                "step-tol" => out.step_tol = Some(parse_num(value, key).map_err(ctx)?),
                "max-iter" => out.max_iter = Some(parse_num(value, key).map_err(ctx)?),
                "out" => out.out = Some(PathBuf::from(value)),
                "timing" => {
                    out.timing = Some(match value {
                        "true" => true,
                        "false" => false,
                        other => {
                            return Err(ctx(format!(
                                "bad value '{other}' for timing (expected true or false)"
                            )))
                        }
                    })
                }
                "sweep" => out.sweep = Some(value.parse().map_err(ctx)?),
                "sweep-values" => out.sweep_values = Some(parse_sweep_values(value).map_err(ctx)?),
                other => return Err(format!("line {lineno}: unknown key '{other}'")),
            }
        }
        Ok(out)
    }
}

fn parse_num<T: FromStr>(value: &str, key: &str) -> Result<T, String> {
    value
        .parse::<T>()
        .map_err(|_| format!("bad value '{value}' for {key}"))
}

/// A fully resolved experiment. Serialized verbatim into summaries so every
/// output file carries the configuration that produced it.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub problem: Problem,
    pub algorithm: Algorithm,
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub trials: usize,
    pub seed: u64,
    pub grad_tol: f64,
    pub step_tol: f64,
    pub max_iter: usize,
    pub out: PathBuf,
    pub timing: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepAxis>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_values: Option<Vec<usize>>,
}

impl ExperimentConfig {
    /// Fills the merged layers with desk-scale defaults: the flagship
    /// quadratic benchmark shape on Graff(3, 6), ten trials, seed 42.
    pub fn resolve(merged: Partial, default_out: &str) -> ExperimentConfig {
        let stop = StopCriteria::default();
        ExperimentConfig {
            problem: merged.problem.unwrap_or(Problem::Quadratic),
            algorithm: merged.algorithm.unwrap_or(Algorithm::Sd),
            n: merged.n.unwrap_or(6),
            k: merged.k.unwrap_or(3),
            m: merged.m.unwrap_or(2),
            trials: merged.trials.unwrap_or(10),
            seed: merged.seed.unwrap_or(42),
            grad_tol: merged.grad_tol.unwrap_or(stop.grad_tol),
            step_tol: merged.step_tol.unwrap_or(stop.step_tol),
            max_iter: merged.max_iter.unwrap_or(stop.max_iter),
            out: merged.out.unwrap_or_else(|| PathBuf::from(default_out)),
            timing: merged.timing.unwrap_or(false),
            sweep: merged.sweep,
            sweep_values: merged.sweep_values,
        }
    }

    pub fn stop(&self) -> StopCriteria {
        StopCriteria {
            grad_tol: self.grad_tol,
            step_tol: self.step_tol,
            max_iter: self.max_iter,
        }
    }

    /// Usage-level validation. `for_table` additionally requires a
    /// well-formed, non-empty sweep whose every cell is a valid shape.
    pub fn validate(&self, for_table: bool) -> Result<(), String> {
        // A table overrides one axis per cell, so only the cells' shapes
        // matter there; the base shape is what a single run uses.
        if !for_table && self.k >= self.n {
            return Err(format!(
                "Graff(k, n) needs k < n; got k = {}, n = {}",
                self.k, self.n
            ));
        }
        if self.trials == 0 {
            return Err("trials must be at least 1".into());
        }
        if !(self.grad_tol.is_finite() && self.grad_tol > 0.0) {
            return Err(format!("grad-tol must be positive, got {}", self.grad_tol));
        }
        if !(self.step_tol.is_finite() && self.step_tol > 0.0) {
            return Err(format!("step-tol must be positive, got {}", self.step_tol));
        }
        if self.max_iter == 0 {
            return Err("max-iter must be at least 1".into());
        }
        if self.problem == Problem::Mean {
            if self.m < 2 {
                return Err(format!(
                    "the mean objective needs m >= 2 points, got {}",
                    self.m
                ));
            }
            match self.algorithm {
                Algorithm::Newton | Algorithm::NewtonProj => {
                    return Err(format!(
                        "{} needs second derivatives, which the mean objective does not \
                         provide; use sd or cg",
                        self.algorithm
                    ));
                }
                Algorithm::SdProj => {
                    return Err(
                        "sd-proj needs projection-coordinate callbacks, which the mean \
                         objective does not provide; use sd or cg"
                            .into(),
                    );
                }
                Algorithm::Sd | Algorithm::Cg => {}
            }
        }
        if for_table {
            let axis = self
                .sweep
                .ok_or("table needs --sweep k or --sweep n".to_string())?;
            let values = self
                .sweep_values
                .as_deref()
                .ok_or("table needs --sweep-values".to_string())?;
            if values.is_empty() {
                return Err("sweep is empty: --sweep-values lists no axis values".into());
            }
            if self.problem == Problem::Mean && self.m != 2 {
                return Err(format!(
                    "table accuracy for the mean objective needs the closed-form midpoint \
                     reference, which exists for m = 2; got m = {}",
                    self.m
                ));
            }
            for &v in values {
                let (n, k) = match axis {
                    SweepAxis::K => (self.n, v),
                    SweepAxis::N => (v, self.k),
                };
                if k >= n {
                    return Err(format!(
                        "sweep cell {axis} = {v} gives Graff({k}, {n}), but k < n is required"
                    ));
                }
            }
        }
        Ok(())
    }
}
