//! Search hyperparameters. Key names follow the PySR parameter table, so a
//! TOML file such as `parsimony = 0.0032` configures the engine directly.

use serde::{Deserialize, Serialize};

use crate::constopt::ConstOptOptions;
use crate::error::{Error, Result};
use crate::expr::{BinaryOp, ComplexityTable, OperatorSet, UnaryOp};

/// Relative selection weights of the mutation kinds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MutationWeights {
    pub add_node: f64,
    pub insert_node: f64,
    pub delete_node: f64,
    pub do_nothing: f64,
    pub mutate_constant: f64,
    pub mutate_operator: f64,
    pub swap_operands: f64,
    pub randomize: f64,
    pub simplify: f64,
}

impl MutationWeights {
    pub fn as_array(&self) -> [f64; 9] {
        [
            self.add_node,
            self.insert_node,
            self.delete_node,
            self.do_nothing,
            self.mutate_constant,
            self.mutate_operator,
            self.swap_operands,
            self.randomize,
            self.simplify,
        ]
    }

    /// Every kind at zero weight except `do_nothing`.
    pub fn only_do_nothing() -> Self {
        Self {
            add_node: 0.0,
            insert_node: 0.0,
            delete_node: 0.0,
            do_nothing: 1.0,
            mutate_constant: 0.0,
            mutate_operator: 0.0,
            swap_operands: 0.0,
            randomize: 0.0,
            simplify: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub niterations: usize,
    pub populations: usize,
    pub population_size: usize,
    pub ncycles_per_iteration: usize,
    /// Upper bound on an expression's parsimony score.
    pub maxsize: u32,
    #[serde(rename = "parsimony")]
    pub parsimony_coefficient: f64,
    pub adaptive_parsimony_scaling: f64,
    pub use_frequency: bool,
    pub use_frequency_in_tournament: bool,
    pub should_simplify: bool,
    pub should_optimize_constants: bool,
    pub weight_add_node: f64,
    pub weight_insert_node: f64,
    pub weight_delete_node: f64,
    pub weight_do_nothing: f64,
    pub weight_mutate_constant: f64,
    pub weight_mutate_operator: f64,
    pub weight_swap_operands: f64,
    pub weight_randomize: f64,
    pub weight_simplify: f64,
    pub crossover_probability: f64,
    pub annealing: bool,
    pub alpha: f64,
    pub perturbation_factor: f64,
    pub tournament_selection_n: usize,
    pub tournament_selection_p: f64,
    pub fraction_replaced: f64,
    pub fraction_replaced_hof: f64,
    pub migration: bool,
    pub hof_migration: bool,
    pub topn: usize,
    pub optimize_probability: f64,
    pub optimizer_iterations: usize,
    pub optimizer_nrestarts: usize,
    pub complexity_of_constants: u32,
    pub complexity_of_variables: u32,
    pub binary_operators: Vec<String>,
    pub unary_operators: Vec<String>,
    #[serde(rename = "random_state")]
    pub seed: u64,
    /// Evolve populations on the calling thread only.
    pub deterministic: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            niterations: 40,
            populations: 15,
            population_size: 33,
            ncycles_per_iteration: 550,
            maxsize: 20,
            parsimony_coefficient: 0.0032,
            adaptive_parsimony_scaling: 20.0,
            use_frequency: true,
            use_frequency_in_tournament: true,
            should_simplify: true,
            should_optimize_constants: true,
            weight_add_node: 0.79,
            weight_insert_node: 5.1,
            weight_delete_node: 1.7,
            weight_do_nothing: 0.21,
            weight_mutate_constant: 0.048,
            weight_mutate_operator: 0.47,
            weight_swap_operands: 0.1,
            weight_randomize: 0.00023,
            weight_simplify: 0.0020,
            crossover_probability: 0.066,
            annealing: false,
            alpha: 0.1,
            perturbation_factor: 0.076,
            tournament_selection_n: 10,
            tournament_selection_p: 0.86,
            fraction_replaced: 0.000364,
            fraction_replaced_hof: 0.035,
            migration: true,
            hof_migration: true,
            topn: 12,
            optimize_probability: 0.14,
            optimizer_iterations: 8,
            optimizer_nrestarts: 2,
            complexity_of_constants: 1,
            complexity_of_variables: 1,
            binary_operators: BinaryOp::ALL.iter().map(|op| op.symbol().to_string()).collect(),
            unary_operators: UnaryOp::ALL.iter().map(|op| op.name().to_string()).collect(),
            seed: 0,
            deterministic: false,
        }
    }
}

impl SearchConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Like [`SearchConfig::from_toml`], but also accepts a top-level `tau`
    /// entry, returned separately because the search itself is tau-agnostic.
    pub fn from_toml_with_tau(text: &str) -> Result<(Self, Option<f64>)> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let tau = match table.remove("tau") {
            None => None,
            Some(toml::Value::Float(t)) => Some(t),
            Some(toml::Value::Integer(t)) => Some(t as f64),
            Some(other) => return Err(Error::Config(format!("tau must be a number, got {other}"))),
        };
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok((cfg, tau))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn mutation_weights(&self) -> MutationWeights {
        MutationWeights {
            add_node: self.weight_add_node,
            insert_node: self.weight_insert_node,
            delete_node: self.weight_delete_node,
            do_nothing: self.weight_do_nothing,
            mutate_constant: self.weight_mutate_constant,
            mutate_operator: self.weight_mutate_operator,
            swap_operands: self.weight_swap_operands,
            randomize: self.weight_randomize,
            simplify: self.weight_simplify,
        }
    }

    pub fn set_mutation_weights(&mut self, w: MutationWeights) {
        self.weight_add_node = w.add_node;
        self.weight_insert_node = w.insert_node;
        self.weight_delete_node = w.delete_node;
        self.weight_do_nothing = w.do_nothing;
        self.weight_mutate_constant = w.mutate_constant;
        self.weight_mutate_operator = w.mutate_operator;
        self.weight_swap_operands = w.swap_operands;
        self.weight_randomize = w.randomize;
        self.weight_simplify = w.simplify;
    }

    pub fn operators(&self) -> Result<OperatorSet> {
        let binary = self
            .binary_operators
            .iter()
            .map(|s| BinaryOp::from_name(s).ok_or_else(|| Error::Config(format!("unknown binary operator `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        let unary = self
            .unary_operators
            .iter()
            .map(|s| UnaryOp::from_name(s).ok_or_else(|| Error::Config(format!("unknown unary operator `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(OperatorSet { binary, unary })
    }

    pub fn complexity_table(&self) -> ComplexityTable {
        ComplexityTable {
            feature: self.complexity_of_variables,
            constant: self.complexity_of_constants,
            ..ComplexityTable::default()
        }
    }

    pub fn constopt_options(&self) -> ConstOptOptions {
        ConstOptOptions {
            iterations: self.optimizer_iterations,
            nrestarts: self.optimizer_nrestarts,
            perturbation: self.perturbation_factor,
            ..ConstOptOptions::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        let weights = self.mutation_weights().as_array();
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return fail("mutation weights must be finite and non-negative".into());
        }
        if !weights.iter().any(|w| *w > 0.0) {
            return fail("at least one mutation weight must be positive".into());
        }
        if !(self.tournament_selection_p > 0.0 && self.tournament_selection_p <= 1.0) {
            return fail(format!(
                "tournament_selection_p must lie in (0, 1], got {}",
                self.tournament_selection_p
            ));
        }
        if self.populations == 0 {
            return fail("populations must be at least 1".into());
        }
        if self.population_size < 2 {
            return fail("population_size must be at least 2".into());
        }
        if self.tournament_selection_n == 0 || self.tournament_selection_n > self.population_size {
            return fail(format!(
                "tournament_selection_n must lie in 1..={}, got {}",
                self.population_size, self.tournament_selection_n
            ));
        }
        if self.niterations == 0 || self.ncycles_per_iteration == 0 {
            return fail("niterations and ncycles_per_iteration must be positive".into());
        }
        let table = self.complexity_table();
        if table.feature == 0 || table.constant == 0 {
            return fail("leaf complexities must be positive".into());
        }
        if self.maxsize < table.feature.min(table.constant) {
            return fail(format!("maxsize {} admits no expression", self.maxsize));
        }
        for (name, p) in [
            ("crossover_probability", self.crossover_probability),
            ("fraction_replaced", self.fraction_replaced),
            ("fraction_replaced_hof", self.fraction_replaced_hof),
            ("optimize_probability", self.optimize_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        for (name, v) in [
            ("parsimony", self.parsimony_coefficient),
            ("adaptive_parsimony_scaling", self.adaptive_parsimony_scaling),
            ("perturbation_factor", self.perturbation_factor),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return fail(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.binary_operators.is_empty() && self.unary_operators.is_empty() {
            return fail("the operator set is empty".into());
        }
        self.operators()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_parameter_table() {
        let c = SearchConfig::default();
        assert_eq!((c.niterations, c.populations, c.population_size), (40, 15, 33));
        assert_eq!((c.ncycles_per_iteration, c.maxsize, c.topn), (550, 20, 12));
        assert_eq!(c.parsimony_coefficient, 0.0032);
        assert_eq!(c.adaptive_parsimony_scaling, 20.0);
        assert_eq!(
            c.mutation_weights().as_array(),
            [0.79, 5.1, 1.7, 0.21, 0.048, 0.47, 0.1, 0.00023, 0.0020]
        );
        assert_eq!((c.tournament_selection_n, c.tournament_selection_p), (10, 0.86));
        assert_eq!((c.fraction_replaced, c.fraction_replaced_hof), (0.000364, 0.035));
        assert_eq!((c.optimize_probability, c.optimizer_iterations, c.optimizer_nrestarts), (0.14, 8, 2));
        assert_eq!((c.crossover_probability, c.alpha, c.perturbation_factor), (0.066, 0.1, 0.076));
        assert!(!c.annealing && c.migration && c.hof_migration);
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_key_names() {
        let c = SearchConfig::from_toml("parsimony = 0.01\nrandom_state = 9\nniterations = 3\n").unwrap();
        assert_eq!(c.parsimony_coefficient, 0.01);
        assert_eq!(c.seed, 9);
        assert_eq!(c.niterations, 3);
        assert_eq!(c.populations, 15);
        assert_eq!(SearchConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn invalid_configs_are_config_errors() {
        for text in [
            "tournament_selection_p = 0.0",
            "populations = 0",
            "no_such_key = 1",
            "weight_add_node = -1.0",
            "binary_operators = [\"pow\"]",
            "tournament_selection_n = 100",
        ] {
            let err = SearchConfig::from_toml(text).unwrap_err();
            assert!(err.is_config(), "{text}: {err}");
        }
        let mut c = SearchConfig::default();
        c.set_mutation_weights(MutationWeights {
            do_nothing: 0.0,
            ..MutationWeights::only_do_nothing()
        });
        assert!(c.validate().is_err());
    }

    #[test]
    fn tau_key_is_split_off() {
        let (c, tau) = SearchConfig::from_toml_with_tau("tau = 0.9\nniterations = 2\n").unwrap();
        assert_eq!(tau, Some(0.9));
        assert_eq!(c.niterations, 2);
        let (_, tau) = SearchConfig::from_toml_with_tau("maxsize = 10\n").unwrap();
        assert_eq!(tau, None);
        assert!(SearchConfig::from_toml_with_tau("tau = \"high\"\n").unwrap_err().is_config());
        assert!(SearchConfig::from_toml_with_tau("tau = 0.5\nbogus = 1\n").unwrap_err().is_config());
    }
}
