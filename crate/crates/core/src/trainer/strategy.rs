use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{CentroidTable, ClassId};
use crate::losses::{loss_c4, loss_dom, LossConfig};
use crate::tensor::{Tape, Var};

/// One ablation variant of the training loop.
pub trait TrainingStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    /// Whether scheduled expansion rounds run.
    fn expands(&self) -> bool;

    /// The objective minimized over each batch of the combined set.
    fn phase_two_loss(
        &self,
        tape: &Tape,
        batch: &[(Var, ClassId)],
        centroids: &CentroidTable,
        cfg: &LossConfig,
    ) -> Result<Var>;
}

impl fmt::Debug for dyn TrainingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TrainingStrategy({})", self.name())
    }
}

fn contrastive(tape: &Tape, batch: &[(Var, ClassId)], cfg: &LossConfig) -> Result<Var> {
    loss_dom(tape, batch, cfg)
}

struct Baseline;

impl TrainingStrategy for Baseline {
    fn name(&self) -> &'static str {
        "baseline"
    }
    fn expands(&self) -> bool {
        false
    }
    fn phase_two_loss(&self, tape: &Tape, batch: &[(Var, ClassId)], _: &CentroidTable, cfg: &LossConfig) -> Result<Var> {
        contrastive(tape, batch, cfg)
    }
}

struct ConstraintOnly;

impl TrainingStrategy for ConstraintOnly {
    fn name(&self) -> &'static str {
        "c4_only"
    }
    fn expands(&self) -> bool {
        false
    }
    fn phase_two_loss(&self, tape: &Tape, batch: &[(Var, ClassId)], c: &CentroidTable, cfg: &LossConfig) -> Result<Var> {
        loss_c4(tape, batch, c, cfg)
    }
}

struct ExpansionOnly;

impl TrainingStrategy for ExpansionOnly {
    fn name(&self) -> &'static str {
        "c3e_only"
    }
    fn expands(&self) -> bool {
        true
    }
    fn phase_two_loss(&self, tape: &Tape, batch: &[(Var, ClassId)], _: &CentroidTable, cfg: &LossConfig) -> Result<Var> {
        contrastive(tape, batch, cfg)
    }
}

struct Full;

impl TrainingStrategy for Full {
    fn name(&self) -> &'static str {
        "full"
    }
    fn expands(&self) -> bool {
        true
    }
    fn phase_two_loss(&self, tape: &Tape, batch: &[(Var, ClassId)], c: &CentroidTable, cfg: &LossConfig) -> Result<Var> {
        loss_c4(tape, batch, c, cfg)
    }
}

type Factory = Arc<dyn Fn() -> Box<dyn TrainingStrategy> + Send + Sync>;

/// Name → strategy constructor. Aliases resolve to a registered name.
#[derive(Clone)]
pub struct StrategyRegistry {
    factories: BTreeMap<String, Factory>,
    aliases: BTreeMap<String, String>,
}

impl fmt::Debug for StrategyRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StrategyRegistry")
            .field("names", &self.factories.keys().collect::<Vec<_>>())
            .field("aliases", &self.aliases)
            .finish()
    }
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
            aliases: BTreeMap::new(),
        }
    }

    /// `baseline`, `c4_only`, `c3e_only`, `full`, plus the short forms `c4`
    /// and `c3e`.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("baseline", || Box::new(Baseline));
        r.register("c4_only", || Box::new(ConstraintOnly));
        r.register("c3e_only", || Box::new(ExpansionOnly));
        r.register("full", || Box::new(Full));
        r.alias("c4", "c4_only").expect("builtin alias");
        r.alias("c3e", "c3e_only").expect("builtin alias");
        r
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn() -> Box<dyn TrainingStrategy> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Arc::new(factory));
    }

    pub fn alias(&mut self, alias: &str, target: &str) -> Result<()> {
        if !self.factories.contains_key(target) {
            return Err(Error::Config(format!("alias target {target:?} is not registered")));
        }
        self.aliases.insert(alias.to_string(), target.to_string());
        Ok(())
    }

    /// Canonical name for `name`, following an alias if needed.
    pub fn resolve<'a>(&'a self, name: &'a str) -> Result<&'a str> {
        let canonical = self.aliases.get(name).map_or(name, String::as_str);
        if self.factories.contains_key(canonical) {
            Ok(canonical)
        } else {
            Err(Error::Config(format!(
                "unknown ablation {name:?}; known: {}",
                self.names().join(", ")
            )))
        }
    }

    pub fn create(&self, name: &str) -> Result<Box<dyn TrainingStrategy>> {
        let canonical = self.resolve(name)?;
        Ok((self.factories[canonical])())
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories
            .keys()
            .chain(self.aliases.keys())
            .map(String::as_str)
            .collect()
    }
}
