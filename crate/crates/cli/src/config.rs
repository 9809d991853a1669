use std::fmt;
use std::str::FromStr;

use mlbddc::{CoarseSpace, HierarchySpec};

use crate::CliError;

/// Configurations with more unknowns than this are refused by default.
pub const DEFAULT_MAX_DOFS: usize = 20_000_000;

/// One solver experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dim: usize,
    pub levels: usize,
    /// A single entry means the same ratio at every level.
    pub ratios: Vec<usize>,
    pub coarse_space: CoarseSpace,
    pub tol: f64,
    pub seed: u64,
    pub maxit: usize,
    pub oracle: bool,
    pub max_dofs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dim: 2,
            levels: 2,
            ratios: vec![3],
            coarse_space: CoarseSpace::C,
            tol: 1e-8,
            seed: 0,
            maxit: 500,
            oracle: false,
            max_dofs: DEFAULT_MAX_DOFS,
        }
    }
}

/// Ratios as written in files and CSV rows: `3` or `3/4`.
pub fn format_ratios(ratios: &[usize]) -> String {
    ratios
        .iter()
        .map(|r| r.to_string())
        .collect::<Vec<_>>()
        .join("/")
}

pub fn parse_ratios(s: &str) -> Result<Vec<usize>, CliError> {
    s.split('/')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Config(format!("invalid ratio {t:?}")))
        })
        .collect()
}

impl RunConfig {
    /// Ratios per coarsening step, finest first.
    pub fn level_ratios(&self) -> Result<Vec<usize>, CliError> {
        if self.levels < 2 {
            return Err(CliError::Config(format!(
                "need at least 2 levels, got {}",
                self.levels
            )));
        }
        match self.ratios.len() {
            1 => Ok(vec![self.ratios[0]; self.levels - 1]),
            k if k == self.levels - 1 => Ok(self.ratios.clone()),
            k => Err(CliError::Config(format!(
                "{k} ratios given for {} levels",
                self.levels
            ))),
        }
    }

    pub fn hierarchy_spec(&self) -> Result<HierarchySpec, CliError> {
        Ok(HierarchySpec::new(
            self.dim,
            self.level_ratios()?,
            self.coarse_space,
        ))
    }

    pub fn validate(&self) -> Result<HierarchySpec, CliError> {
        if !(self.tol > 0.0) {
            return Err(CliError::Config(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.maxit == 0 {
            return Err(CliError::Config("maxit must be positive".into()));
        }
        let spec = self.hierarchy_spec()?;
        spec.validate()?;
        let n = spec.num_dofs();
        if n > self.max_dofs {
            return Err(CliError::TooLarge {
                n,
                limit: self.max_dofs,
            });
        }
        Ok(spec)
    }

    /// Applies `key = value` settings.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let bad = || CliError::Config(format!("invalid value {value:?} for {key}"));
        match key.replace('-', "_").as_str() {
            "dim" => self.dim = value.parse().map_err(|_| bad())?,
            "levels" | "L" => self.levels = value.parse().map_err(|_| bad())?,
            "ratio" | "ratios" | "r" => self.ratios = parse_ratios(value)?,
            "coarse_space" => self.coarse_space = value.parse().map_err(|_| bad())?,
            "tol" => self.tol = value.parse().map_err(|_| bad())?,
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            "maxit" => self.maxit = value.parse().map_err(|_| bad())?,
            "oracle" => self.oracle = value.parse().map_err(|_| bad())?,
            "max_dofs" => self.max_dofs = parse_count(value).ok_or_else(bad)?,
            _ => return Err(CliError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Reads a flat `key = value` file; `#` starts a comment.
    pub fn apply_file_contents(&mut self, text: &str) -> Result<(), CliError> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }
}

/// Accepts plain integers and float notation such as `2e7`.
pub fn parse_count(s: &str) -> Option<usize> {
    if let Ok(n) = s.parse::<usize>() {
        return Some(n);
    }
    let x: f64 = s.parse().ok()?;
    (x >= 0.0 && x.fract() == 0.0 && x <= usize::MAX as f64).then_some(x as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Levels,
    Ratio,
    CoarseSpace,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Levels => "L",
            SweepAxis::Ratio => "r",
            SweepAxis::CoarseSpace => "coarse_space",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "L" | "levels" => Ok(SweepAxis::Levels),
            "r" | "ratio" | "ratios" => Ok(SweepAxis::Ratio),
            "coarse_space" | "coarse-space" | "cs" => Ok(SweepAxis::CoarseSpace),
            other => Err(CliError::Config(format!("unknown sweep axis {other:?}"))),
        }
    }
}

/// `axis=v1,v2,...`; an empty value list is allowed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<String>,
}

impl FromStr for Sweep {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (axis, values) = s
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("sweep {s:?} is not axis=values")))?;
        Ok(Sweep {
            axis: axis.parse()?,
            values: values
                .split(',')
                .map(str::trim)
                .filter(|v| !v.is_empty())
                .map(String::from)
                .collect(),
        })
    }
}

impl Sweep {
    /// One configuration per value.
    pub fn variants(&self, template: &RunConfig) -> Result<Vec<RunConfig>, CliError> {
        self.values
            .iter()
            .map(|v| {
                let mut c = template.clone();
                match self.axis {
                    SweepAxis::Levels => c.set("levels", v)?,
                    SweepAxis::Ratio => c.set("ratio", v)?,
                    SweepAxis::CoarseSpace => c.set("coarse_space", v)?,
                }
                Ok(c)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_and_explicit_ratios() {
        let mut c = RunConfig {
            levels: 4,
            ..Default::default()
        };
        assert_eq!(c.level_ratios().unwrap(), vec![3, 3, 3]);
        c.ratios = vec![3, 4, 2];
        assert_eq!(c.level_ratios().unwrap(), vec![3, 4, 2]);
        c.ratios = vec![3, 4];
        assert!(c.level_ratios().is_err());
        assert_eq!(format_ratios(&[3, 4]), "3/4");
        assert_eq!(parse_ratios("3/4").unwrap(), vec![3, 4]);
    }

    #[test]
    fn file_then_override() {
        let mut c = RunConfig::default();
        c.apply_file_contents(
            "# experiment\ndim = 3\nlevels=3\ncoarse_space = CEF  # faces too\ntol = 1e-6\n\nmax_dofs = 2e5\n",
        )
        .unwrap();
        assert_eq!(c.dim, 3);
        assert_eq!(c.levels, 3);
        assert_eq!(c.coarse_space, CoarseSpace::CEF);
        assert_eq!(c.tol, 1e-6);
        assert_eq!(c.max_dofs, 200_000);
        assert!(c.apply_file_contents("bogus = 1").is_err());
        assert!(c.apply_file_contents("dim 3").is_err());
    }

    #[test]
    fn validation() {
        let mut c = RunConfig::default();
        assert_eq!(c.validate().unwrap().num_dofs(), 144);
        c.tol = 0.0;
        assert!(c.validate().is_err());
        let c = RunConfig {
            coarse_space: CoarseSpace::E,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = RunConfig {
            levels: 4,
            ratios: vec![16],
            max_dofs: 1000,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(CliError::TooLarge { .. })));
    }

    #[test]
    fn sweeps() {
        let s: Sweep = "L=2,3,4".parse().unwrap();
        let v = s.variants(&RunConfig::default()).unwrap();
        assert_eq!(
            v.iter().map(|c| c.levels).collect::<Vec<_>>(),
            vec![2, 3, 4]
        );
        let s: Sweep = "coarse_space=C,CE".parse().unwrap();
        assert_eq!(
            s.variants(&RunConfig::default()).unwrap()[1].coarse_space,
            CoarseSpace::CE
        );
        let s: Sweep = "r=".parse().unwrap();
        assert!(s.values.is_empty());
        assert!("x=1".parse::<Sweep>().is_err());
        assert!("L".parse::<Sweep>().is_err());
    }
}
