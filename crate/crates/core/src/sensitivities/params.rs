use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::term_structure::ModelSpec;

/// Per-factor parameter symbol; the discriminant is the local index used by
/// the loading and noise derivative arrays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Symbol {
    Kappa = 0,
    Eta = 1,
    Theta = 2,
}

impl Symbol {
    pub fn local(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Symbol::Kappa => "kappa",
            Symbol::Eta => "eta",
            Symbol::Theta => "theta",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamId {
    Factor { factor: usize, symbol: Symbol },
    SigmaEps,
}

impl ParamId {
    /// `kappa_1`, `eta_2`, ..., `sigma_eps` (factors numbered from 1).
    pub fn label(&self) -> String {
        match self {
            ParamId::Factor { factor, symbol } => format!("{}_{}", symbol.name(), factor + 1),
            ParamId::SigmaEps => "sigma_eps".to_string(),
        }
    }

    pub fn factor(&self) -> Option<(usize, usize)> {
        match *self {
            ParamId::Factor { factor, symbol } => Some((factor, symbol.local())),
            ParamId::SigmaEps => None,
        }
    }
}

/// The free parameters of a model: per factor `(kappa, eta, theta)` with
/// pinned `eta` omitted, then `sigma_eps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub ids: Vec<ParamId>,
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn layout(spec: &ModelSpec) -> Vec<ParamId> {
        let mut ids = Vec::with_capacity(3 * spec.dim() + 1);
        for (factor, f) in spec.factors.iter().enumerate() {
            ids.push(ParamId::Factor {
                factor,
                symbol: Symbol::Kappa,
            });
            if !f.params.eta_fixed_zero {
                ids.push(ParamId::Factor {
                    factor,
                    symbol: Symbol::Eta,
                });
            }
            ids.push(ParamId::Factor {
                factor,
                symbol: Symbol::Theta,
            });
        }
        ids.push(ParamId::SigmaEps);
        ids
    }

    pub fn from_spec(spec: &ModelSpec) -> Self {
        let ids = Self::layout(spec);
        let values = ids
            .iter()
            .map(|id| match *id {
                ParamId::Factor { factor, symbol } => {
                    let p = &spec.factors[factor].params;
                    match symbol {
                        Symbol::Kappa => p.kappa,
                        Symbol::Eta => p.eta,
                        Symbol::Theta => p.theta,
                    }
                }
                ParamId::SigmaEps => spec.sigma_eps,
            })
            .collect();
        ParamVector { ids, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.ids.len());
        ParamVector {
            ids: self.ids.clone(),
            values,
        }
    }

    pub fn labels(&self) -> Vec<String> {
        self.ids.iter().map(ParamId::label).collect()
    }

    /// A copy of `spec` carrying these parameter values.
    pub fn apply(&self, spec: &ModelSpec) -> Result<ModelSpec> {
        if self.ids != Self::layout(spec) {
            return Err(Error::invalid("parameter vector does not match the model layout"));
        }
        let mut out = spec.clone();
        for (id, &v) in self.ids.iter().zip(&self.values) {
            match *id {
                ParamId::Factor { factor, symbol } => {
                    let p = &mut out.factors[factor].params;
                    match symbol {
                        Symbol::Kappa => p.kappa = v,
                        Symbol::Eta => p.eta = v,
                        Symbol::Theta => p.theta = v,
                    }
                }
                ParamId::SigmaEps => out.sigma_eps = v,
            }
        }
        out.validate()?;
        Ok(out)
    }
}
