use std::path::{Path, PathBuf};

use pmqkd_core::concentration::EpsilonBudget;
use pmqkd_core::linalg::CMatrix;
use pmqkd_core::operator::HermitianOperator;
use pmqkd_core::pmqkd::{ChannelModel, ObservedCounts, PmQkdParams, SearchSpec, StateSource};
use pmqkd_core::protocol::{
    build_inner_product_constraints, build_observation_constraints, build_phase_error_operator, BetaEntry,
    ConstraintSet, NuEntry, ProtocolInstance,
};
use pmqkd_core::sdp::SdpProblem;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolChoice {
    #[default]
    Pmqkd,
    CustomInstanceFile,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    pub mu_x: f64,
    pub mu_y: f64,
    pub p_basis0: f64,
    pub p_aux0: f64,
    pub p_trash: f64,
    pub n_tot: f64,
    #[serde(default = "default_f_ec")]
    pub f_ec: f64,
}

fn default_f_ec() -> f64 {
    1.1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    /// ε_ph; split evenly as ε_ph/14 over the concentration bounds.
    #[serde(default = "default_eps_ph")]
    pub eps_ph: f64,
    #[serde(default = "default_s_pa")]
    pub s_pa: u32,
    #[serde(default = "default_s_prime")]
    pub s_prime: u32,
}

fn default_eps_ph() -> f64 {
    2f64.powi(-66)
}

fn default_s_pa() -> u32 {
    66
}

fn default_s_prime() -> u32 {
    32
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self { eps_ph: default_eps_ph(), s_pa: default_s_pa(), s_prime: default_s_prime() }
    }
}

impl BudgetConfig {
    pub fn budget(&self) -> EpsilonBudget<f64> {
        EpsilonBudget::uniform(self.eps_ph / 14.0, self.s_pa, self.s_prime)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub distance_min_km: f64,
    pub distance_max_km: f64,
    pub step_km: f64,
    /// Optimize (μ_X, μ_Y, p_basis0, p_aux0, p_trash) at every distance.
    #[serde(default = "yes")]
    pub optimize: bool,
}

fn yes() -> bool {
    true
}

impl SweepConfig {
    pub fn distances(&self) -> Vec<f64> {
        let n = ((self.distance_max_km - self.distance_min_km) / self.step_km + 1e-9).floor() as usize;
        (0..=n).map(|k| self.distance_min_km + k as f64 * self.step_km).collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationConfig {
    pub trials: usize,
    /// Relaxed failure probability used for every concentration bound.
    pub epsilon: f64,
    #[serde(default)]
    pub source: StateSource,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub protocol: ProtocolChoice,
    pub instance_file: Option<PathBuf>,
    pub channel: ChannelModel<f64>,
    pub params: Option<ParamsConfig>,
    #[serde(default)]
    pub budget: BudgetConfig,
    pub sweep: Option<SweepConfig>,
    pub search: Option<SearchSpec<f64>>,
    /// Recorded counts; nominal counts are used when absent.
    pub observed: Option<ObservedCounts<f64>>,
    pub validation: Option<ValidationConfig>,
    #[serde(default = "yes")]
    pub auto_certify: bool,
    #[serde(default)]
    pub seed: u64,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        self.channel.validate().map_err(|e| config_err(e.to_string()))?;
        match self.protocol {
            ProtocolChoice::Pmqkd => {
                self.params()?.validate().map_err(|e| config_err(e.to_string()))?;
            }
            ProtocolChoice::CustomInstanceFile => {
                let f = self.instance_path()?;
                if !f.exists() {
                    return Err(config_err(format!("instance file {} does not exist", f.display())));
                }
            }
        }
        self.budget.budget().validate().map_err(|e| config_err(e.to_string()))?;
        if let Some(s) = &self.sweep {
            if !(s.step_km > 0.0) || !(s.distance_min_km >= 0.0) || !(s.distance_max_km >= s.distance_min_km) {
                return Err(config_err("sweep needs step_km > 0 and 0 ≤ distance_min_km ≤ distance_max_km"));
            }
        }
        if let Some(v) = &self.validation {
            if !(v.epsilon > 0.0 && v.epsilon <= 1.0) {
                return Err(config_err(format!("validation epsilon {} outside (0, 1]", v.epsilon)));
            }
        }
        if let Some(o) = &self.observed {
            o.validate().map_err(|e| config_err(e.to_string()))?;
        }
        Ok(())
    }

    pub fn instance_path(&self) -> Result<PathBuf, CliError> {
        let f = self.instance_file.as_ref().ok_or_else(|| config_err("custom-instance-file needs instance_file"))?;
        Ok(self.base_dir.join(f))
    }

    pub fn params(&self) -> Result<PmQkdParams<f64>, CliError> {
        let p = self.params.as_ref().ok_or_else(|| config_err("missing params"))?;
        Ok(PmQkdParams {
            mu_x: p.mu_x,
            mu_y: p.mu_y,
            p_basis0: p.p_basis0,
            p_aux0: p.p_aux0,
            p_trash: p.p_trash,
            budget: self.budget.budget(),
            f_ec: p.f_ec,
            n_tot: p.n_tot,
        })
    }

    pub fn require_pmqkd(&self, cmd: &str) -> Result<(), CliError> {
        if self.protocol != ProtocolChoice::Pmqkd {
            return Err(config_err(format!("`{cmd}` supports only the pmqkd protocol")));
        }
        Ok(())
    }
}

/// A protocol described entirely by data: the instance, ν and β coefficients, nominal
/// observations and the unrenormalized phase-error terms of each announcement block.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomInstance {
    pub instance: ProtocolInstance<f64>,
    pub nu: Vec<NuEntry<f64>>,
    pub beta: Vec<BetaEntry<f64>>,
    pub q_nom: Vec<f64>,
    pub phase_terms: Vec<Vec<CMatrix<f64>>>,
}

impl CustomInstance {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
    }

    pub fn problem(&self) -> Result<SdpProblem<f64>, CliError> {
        let inst = &self.instance;
        inst.validate().map_err(|e| config_err(e.to_string()))?;
        let terms = self
            .phase_terms
            .iter()
            .map(|b| b.iter().map(|m| HermitianOperator::new(m.clone())).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| config_err(e.to_string()))?;
        let phase = build_phase_error_operator(inst, &terms).map_err(|e| config_err(e.to_string()))?;
        let (p_ops, p_vals) = build_inner_product_constraints(inst, &self.nu).map_err(|e| config_err(e.to_string()))?;
        let q_ops = build_observation_constraints(inst, &self.beta).map_err(|e| config_err(e.to_string()))?;
        let cs = ConstraintSet {
            p_ops,
            p_vals,
            q_ops,
            q_nom: self.q_nom.clone(),
            nu_coeffs: self.nu.clone(),
            beta_coeffs: self.beta.clone(),
        };
        SdpProblem::from_constraint_set(inst, &phase, &cs).map_err(|e| config_err(e.to_string()))
    }
}
