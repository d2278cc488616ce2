use serde::{Deserialize, Serialize};
use stochint::bounds::BoundConstants;
use stochint::statistics::StatisticKind;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SupTail,
    Symmetrization,
    Decoupling,
    Counterexample,
    ChaosAudit,
    ExpansionAudit,
    ScheduleAudit,
}

/// An explicit list, or `points` values from `start` to `stop`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    List(Vec<f64>),
    Range {
        start: f64,
        stop: f64,
        points: usize,
        #[serde(default)]
        log: bool,
    },
}

impl GridSpec {
    pub fn expand(&self) -> Result<Vec<f64>, CliError> {
        let grid = match self {
            GridSpec::List(values) => values.clone(),
            GridSpec::Range {
                start,
                stop,
                points,
                log,
            } => {
                if *points < 2 {
                    return Err(CliError::field("x_grid.points", "must be at least 2"));
                }
                if *log && !(*start > 0.0) {
                    return Err(CliError::field("x_grid.start", "log spacing needs start > 0"));
                }
                let step = |i: usize| i as f64 / (*points - 1) as f64;
                (0..*points)
                    .map(|i| {
                        if *log {
                            (start.ln() + step(i) * (stop.ln() - start.ln())).exp()
                        } else {
                            start + step(i) * (stop - start)
                        }
                    })
                    .collect()
            }
        };
        if grid.iter().any(|x| !x.is_finite()) {
            return Err(CliError::field("x_grid", "values must be finite"));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CliError::field("x_grid", "must be strictly increasing"));
        }
        Ok(grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightsSpec {
    Named(String),
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSpec {
    pub points: usize,
    #[serde(default = "uniform_weights")]
    pub weights: WeightsSpec,
}

fn uniform_weights() -> WeightsSpec {
    WeightsSpec::Named("uniform".into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FamilySpec {
    /// Indicators of grid intervals of length at most `sigma^2`; brings its
    /// own uniform space with `grid` points.
    Interval { grid: usize },
    /// Restrictions of a tabulated kernel to grid-aligned boxes.
    Box { table: Vec<f64>, grid_per_axis: usize },
    /// One tabulated kernel.
    Singleton { table: Vec<f64> },
    /// Canonical parts of random kernels, scaled into `[-1, 1]`.
    RandomCanonical { members: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChaosEntry {
    pub tuple: Vec<usize>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChaosSpec {
    /// Variable count.
    pub variables: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub entries: Vec<ChaosEntry>,
    /// Additional coefficient sets with entries uniform in [-1, 1).
    #[serde(default)]
    pub random_sets: usize,
    #[serde(default = "default_moment_pairs")]
    pub moment_pairs: Vec<(f64, f64)>,
}

fn default_moment_pairs() -> Vec<(f64, f64)> {
    vec![(2.0, 4.0), (2.0, 6.0), (3.0, 5.0)]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseSpec {
    pub d: f64,
    pub l: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a0: Option<f64>,
}

impl ConstantOverrides {
    pub fn resolve(&self, k: usize) -> BoundConstants {
        let base = BoundConstants::exploratory(k);
        BoundConstants {
            c: self.c.unwrap_or(base.c),
            alpha: self.alpha.unwrap_or(base.alpha),
            m: self.m.unwrap_or(base.m),
            gamma: self.gamma.unwrap_or(base.gamma),
            k_threshold: self.k_threshold.unwrap_or(base.k_threshold),
            a0: self.a0.unwrap_or(base.a0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statistic: Option<StatisticKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub held_out: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_bar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dense: Option<DenseSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<SpaceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<FamilySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chaos: Option<ChaosSpec>,
    #[serde(default)]
    pub constants: ConstantOverrides,
}

fn default_reps() -> usize {
    1000
}

fn default_k() -> usize {
    1
}

/// Key named on the line of a parse error, if any.
fn key_at(source: &str, offset: usize) -> Option<String> {
    let start = source[..offset.min(source.len())].rfind('\n').map_or(0, |i| i + 1);
    let line = source[start..].lines().next()?;
    let key = line.split('=').next()?.trim();
    (!key.is_empty() && !key.starts_with('[')).then(|| key.trim_matches('"').to_string())
}

impl ExperimentConfig {
    pub fn parse(source: &str) -> Result<Self, CliError> {
        let config: Self = toml::from_str(source).map_err(|e| {
            let message = e.message().replace('\n', " ");
            let field = e
                .span()
                .and_then(|span| key_at(source, span.start))
                .unwrap_or_else(|| "config".into());
            CliError::Validation(format!("invalid config field `{field}`: {message}"))
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn n(&self) -> Result<usize, CliError> {
        match self.n {
            Some(n) if n > 0 => Ok(n),
            Some(_) => Err(CliError::field("n", "must be at least 1")),
            None => Err(CliError::field("n", "required for this experiment")),
        }
    }

    pub fn sigma(&self) -> Result<f64, CliError> {
        match self.sigma {
            Some(s) if s > 0.0 && s <= 1.0 => Ok(s),
            Some(_) => Err(CliError::field("sigma", "must lie in (0, 1]")),
            None => Err(CliError::field("sigma", "required for this experiment")),
        }
    }

    pub fn grid(&self) -> Result<Vec<f64>, CliError> {
        self.x_grid
            .as_ref()
            .ok_or_else(|| CliError::field("x_grid", "required for this experiment"))?
            .expand()
    }

    pub fn family(&self) -> Result<&FamilySpec, CliError> {
        self.family
            .as_ref()
            .ok_or_else(|| CliError::field("family", "required for this experiment"))
    }

    pub fn bound_constants(&self) -> BoundConstants {
        self.constants.resolve(self.k)
    }

    /// Checks every field the experiment reads before anything runs.
    pub fn validate(&self) -> Result<(), CliError> {
        use ExperimentKind::*;
        if self.reps == 0 {
            return Err(CliError::field("reps", "must be at least 1"));
        }
        if self.k == 0 || self.k > 6 {
            return Err(CliError::field("k", "must lie in 1..=6"));
        }
        self.bound_constants()
            .validate()
            .map_err(|e| CliError::Validation(format!("invalid config field `constants`: {e}")))?;
        if let Some(grid) = &self.x_grid {
            grid.expand()?;
        }
        if let Some(space) = &self.space {
            validate_space(space)?;
        }
        match self.experiment {
            SupTail | Symmetrization | Decoupling => {
                self.n()?;
                self.grid()?;
                self.validate_family()?;
                if self.experiment == Symmetrization && self.k != 1 {
                    return Err(CliError::field("k", "symmetrization needs k = 1"));
                }
                if self.experiment == Decoupling && self.k < 2 {
                    return Err(CliError::field("k", "decoupling needs k >= 2"));
                }
                if self.experiment == Symmetrization && self.grid()?.iter().any(|x| *x < 0.0) {
                    return Err(CliError::field("x_grid", "symmetrization needs x >= 0"));
                }
            }
            Counterexample => {
                self.n()?;
                let sigma = self.sigma()?;
                if sigma >= 1.0 {
                    return Err(CliError::field("sigma", "must lie in (0, 1)"));
                }
                match self.epsilon {
                    Some(e) if e > 0.0 && e < 1.0 => {}
                    Some(_) => return Err(CliError::field("epsilon", "must lie in (0, 1)")),
                    None => return Err(CliError::field("epsilon", "required for counterexample")),
                }
                if self.k != 1 {
                    return Err(CliError::field("k", "counterexample is defined for k = 1"));
                }
            }
            ChaosAudit => {
                let chaos = self
                    .chaos
                    .as_ref()
                    .ok_or_else(|| CliError::field("chaos", "required for chaos_audit"))?;
                if chaos.variables == 0 || chaos.variables > stochint::chaos::ENUMERATION_LIMIT {
                    return Err(CliError::field("chaos.variables", "must lie in 1..=24"));
                }
                if chaos.entries.is_empty() && chaos.random_sets == 0 {
                    return Err(CliError::field("chaos.entries", "give entries or random_sets"));
                }
                for entry in &chaos.entries {
                    if entry.tuple.len() != self.k {
                        return Err(CliError::field("chaos.entries", "tuple length must equal k"));
                    }
                }
                for (p, q) in &chaos.moment_pairs {
                    if !(*p > 1.0 && q >= p) {
                        return Err(CliError::field("chaos.moment_pairs", "need 1 < p <= q"));
                    }
                }
            }
            ExpansionAudit => {
                let n = self.n()?;
                if n < self.k {
                    return Err(CliError::field("n", "must be at least k"));
                }
                if self.space.is_none() {
                    return Err(CliError::field("space", "required for expansion_audit"));
                }
                if let Some(t) = self.trials {
                    if t < 3 * (self.k + 1) {
                        return Err(CliError::field("trials", "must be at least 3(k+1)"));
                    }
                }
            }
            ScheduleAudit => {
                self.n()?;
                self.sigma()?;
                let grid = self.grid()?;
                if grid.iter().any(|x| *x <= 0.0) {
                    return Err(CliError::field("x_grid", "schedule needs x > 0"));
                }
                if let Some(a) = self.a_bar {
                    if !(a >= (self.k as f64).exp2()) {
                        return Err(CliError::field("a_bar", "must be at least 2^k"));
                    }
                }
                match self.dense {
                    Some(d) if d.d >= 1.0 && d.l >= 0.0 => {}
                    Some(_) => return Err(CliError::field("dense", "need d >= 1 and l >= 0")),
                    None => return Err(CliError::field("dense", "required for schedule_audit")),
                }
            }
        }
        Ok(())
    }

    fn validate_family(&self) -> Result<(), CliError> {
        match self.family()? {
            FamilySpec::Interval { grid } => {
                self.sigma()?;
                if *grid == 0 {
                    return Err(CliError::field("family.grid", "must be positive"));
                }
                if self.k != 1 {
                    return Err(CliError::field("k", "interval family has k = 1"));
                }
            }
            FamilySpec::Box { table, grid_per_axis } => {
                let m = self.require_space()?;
                self.check_table(table, m)?;
                if *grid_per_axis == 0 || *grid_per_axis > m {
                    return Err(CliError::field("family.grid_per_axis", "must lie in 1..=space.points"));
                }
                if table.iter().any(|v| v.abs() > 1.0) {
                    return Err(CliError::field("family.table", "box family needs |f| <= 1"));
                }
            }
            FamilySpec::Singleton { table } => {
                let m = self.require_space()?;
                self.check_table(table, m)?;
            }
            FamilySpec::RandomCanonical { members, .. } => {
                self.require_space()?;
                if *members == 0 {
                    return Err(CliError::field("family.members", "must be at least 1"));
                }
            }
        }
        Ok(())
    }

    fn require_space(&self) -> Result<usize, CliError> {
        Ok(self
            .space
            .as_ref()
            .ok_or_else(|| CliError::field("space", "required for this family"))?
            .points)
    }

    fn check_table(&self, table: &[f64], m: usize) -> Result<(), CliError> {
        let cells = m.checked_pow(self.k as u32).unwrap_or(usize::MAX);
        if table.len() != cells {
            return Err(CliError::field(
                "family.table",
                format!("needs space.points^k = {cells} entries, got {}", table.len()),
            ));
        }
        if table.iter().any(|v| !v.is_finite()) {
            return Err(CliError::field("family.table", "entries must be finite"));
        }
        Ok(())
    }
}

fn validate_space(space: &SpaceSpec) -> Result<(), CliError> {
    if space.points == 0 {
        return Err(CliError::field("space.points", "must be at least 1"));
    }
    match &space.weights {
        WeightsSpec::Named(name) if name == "uniform" => Ok(()),
        WeightsSpec::Named(other) => Err(CliError::field(
            "space.weights",
            format!("expected \"uniform\" or a list, got \"{other}\""),
        )),
        WeightsSpec::Explicit(w) if w.len() != space.points => Err(CliError::field(
            "space.weights",
            format!("needs {} entries, got {}", space.points, w.len()),
        )),
        WeightsSpec::Explicit(w) => stochint::measure_space::ProbabilitySpace::finite(w)
            .map(|_| ())
            .map_err(|e| CliError::field("space.weights", e.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_expansion() {
        let g = GridSpec::Range { start: 0.0, stop: 1.0, points: 5, log: false };
        assert_eq!(g.expand().unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let g = GridSpec::Range { start: 1.0, stop: 100.0, points: 3, log: true };
        let v = g.expand().unwrap();
        assert!((v[1] - 10.0).abs() < 1e-12);
        assert!(GridSpec::List(vec![1.0, 1.0]).expand().is_err());
    }

    #[test]
    fn zero_reps_names_field() {
        let src = "experiment = \"counterexample\"\nseed = 1\nreps = 0\nn = 100\nsigma = 0.1\nepsilon = 0.5\n";
        let err = ExperimentConfig::parse(src).unwrap_err();
        assert!(err.to_string().contains("`reps`"), "{err}");
    }

    #[test]
    fn unknown_experiment_names_field() {
        let err = ExperimentConfig::parse("experiment = \"nope\"\nseed = 1\n").unwrap_err();
        assert!(err.to_string().contains("`experiment`"), "{err}");
        assert!(!err.to_string().contains('\n'));
    }

    #[test]
    fn round_trip_through_toml() {
        let src = r#"
experiment = "sup_tail"
seed = 3
reps = 10
n = 50
k = 1
x_grid = { start = 0.1, stop = 1.0, points = 4 }
statistic = "j"
[space]
points = 3
weights = [0.2, 0.3, 0.5]
[family]
kind = "singleton"
table = [1.0, -1.0, 0.0]
[constants]
m = 5.0
"#;
        let cfg = ExperimentConfig::parse(src).unwrap();
        let again = ExperimentConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.bound_constants().m, 5.0);
    }
}
