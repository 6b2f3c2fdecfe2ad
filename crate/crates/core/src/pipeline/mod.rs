//! Training, prediction and ablation runs built from a [`PipelineConfig`].

pub mod config;
pub mod mock;
pub mod model;
pub mod predict;
pub mod train;

use serde::Serialize;

pub use config::{ClustererConfig, DataPaths, DetectorConfig, LlmBackend, LlmSettings, PipelineConfig, TrainConfig};
pub use mock::MockLlm;
pub use model::{Backbone, CorefModel};
pub use predict::{evaluate, predict_document, run_predict, AgentSetup, DocOutcome, PredictOutput};
pub use train::{train, EpochRecord, StopReason, TrainReport};

use crate::agent::{read_audit, AgentStats, HttpLlmClient, LlmClient};
use crate::corpus::Document;
use crate::encoder::Bridging;
use crate::error::{CorefError, Result};
use crate::metrics::Report;

/// Builds the LLM client selected by `settings`. The gold-backed mock
/// answers from the annotations of `docs`.
pub fn make_client(settings: &LlmSettings, docs: &[Document]) -> Result<Box<dyn LlmClient>> {
    Ok(match settings.backend {
        LlmBackend::Api => Box::new(HttpLlmClient::new(settings.api.clone())?),
        LlmBackend::MockYes => Box::new(MockLlm::all_yes()),
        LlmBackend::MockNo => Box::new(MockLlm::all_no()),
        LlmBackend::MockGold => Box::new(MockLlm::gold_backed(docs)),
        LlmBackend::MockScripted => {
            let path = settings
                .script
                .as_deref()
                .ok_or_else(|| CorefError::Config("llm.script is required for the scripted mock".into()))?;
            Box::new(MockLlm::scripted(&read_audit(path)?))
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sweep {
    Eta,
    Lmax,
    Rho,
    Bridging,
}

impl std::str::FromStr for Sweep {
    type Err = CorefError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eta" => Ok(Sweep::Eta),
            "lmax" => Ok(Sweep::Lmax),
            "rho" => Ok(Sweep::Rho),
            "bridging" => Ok(Sweep::Bridging),
            other => Err(CorefError::Config(format!("unknown sweep {other:?} (expected eta, lmax, rho or bridging)"))),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub setting: String,
    pub report: Report,
    pub agent: AgentStats,
}

fn score(model: &CorefModel, cfg: &PipelineConfig, docs: &[Document], client: &dyn LlmClient) -> Result<(Report, AgentStats)> {
    let setup = AgentSetup {
        client,
        filters: &cfg.filters,
        context_sentences: cfg.llm.context_sentences,
        max_parallel: cfg.llm.api.max_parallel,
    };
    let out = run_predict(model, docs, Some(setup))?;
    Ok((evaluate(docs, &out.predictions, cfg.data.drop_singletons)?, out.stats))
}

/// Evaluates `eval_docs` under each value of the swept setting. The
/// filter and span-limit sweeps reuse `model`; the bridging sweep trains a
/// fresh model per variant on `train_docs`.
pub fn ablate(
    cfg: &PipelineConfig,
    sweep: Sweep,
    model: Option<CorefModel>,
    train_docs: &[Document],
    eval_docs: &[Document],
) -> Result<Vec<AblationRow>> {
    let client = make_client(&cfg.llm, eval_docs)?;
    let need_model = || model.ok_or_else(|| CorefError::Config("this sweep needs a trained checkpoint".into()));
    let mut rows = Vec::new();
    match sweep {
        Sweep::Eta | Sweep::Rho => {
            let model = need_model()?;
            let values: &[f64] = if sweep == Sweep::Eta { &[0.0, 0.2, 0.4, 0.6, 0.8, 1.0] } else { &[1e-4, 1e-3, 1e-2, 1e-1, 1.0] };
            for &v in values {
                let mut c = cfg.clone();
                if sweep == Sweep::Eta {
                    c.filters.eta1 = v;
                    c.filters.eta2 = v;
                } else {
                    c.filters.rho = v;
                }
                c.validate()?;
                let (report, agent) = score(&model, &c, eval_docs, client.as_ref())?;
                let name = if sweep == Sweep::Eta { "eta" } else { "rho" };
                rows.push(AblationRow { setting: format!("{name}={v}"), report, agent });
            }
        }
        Sweep::Lmax => {
            let mut model = need_model()?;
            for l_max in [Some(1), Some(5), Some(10), Some(20), Some(30), None] {
                model.hymr.l_max = l_max;
                let (report, agent) = score(&model, cfg, eval_docs, client.as_ref())?;
                let setting = l_max.map_or("l_max=inf".to_string(), |l| format!("l_max={l}"));
                rows.push(AblationRow { setting, report, agent });
            }
        }
        Sweep::Bridging => {
            for bridging in [Bridging::None, Bridging::LbmFc, Bridging::LbmMha] {
                let mut c = cfg.clone();
                c.encoder.bridging = bridging;
                let (model, _) = train(&c, train_docs, &[])?;
                let (report, agent) = score(&model, &c, eval_docs, client.as_ref())?;
                rows.push(AblationRow { setting: format!("bridging={bridging:?}"), report, agent });
            }
        }
    }
    Ok(rows)
}
