use serde::Serialize;

use super::fusion::run_fused_pipeline;
use super::{run_pipeline, PipelineError, PreparedData, Result, RunConfig};
use crate::metrics::{render_table, ClassificationReport};

pub const ABLATION_ROWS: [&str; 6] = ["baseline", "+fgm", "+heated-loss", "+new-tokens", "+all-three", "fused"];

/// The six configurations, identical except for their toggles.
pub fn ablation_configs(base: &RunConfig) -> Vec<(&'static str, RunConfig)> {
    let with = |fgm: bool, hl: bool, nt: bool, fusion: bool| {
        let mut c = base.clone();
        c.adv.enabled = fgm;
        c.toggles.heated_loss = hl;
        c.toggles.new_tokens = nt;
        c.toggles.fusion = fusion;
        c
    };
    let configs = [
        with(false, false, false, false),
        with(true, false, false, false),
        with(false, true, false, false),
        with(false, false, true, false),
        with(true, true, true, false),
        with(true, true, true, true),
    ];
    ABLATION_ROWS.into_iter().zip(configs).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub name: String,
    pub validation: ClassificationReport,
    pub test: Option<ClassificationReport>,
}

impl AblationRow {
    /// Test report when there is one, validation otherwise.
    pub fn headline(&self) -> &ClassificationReport {
        self.test.as_ref().unwrap_or(&self.validation)
    }
}

fn run_row(name: &str, cfg: &RunConfig, data: &PreparedData) -> Result<AblationRow> {
    let out = if cfg.toggles.fusion {
        run_fused_pipeline(cfg, data)?
    } else {
        run_pipeline(cfg, data)?
    };
    Ok(AblationRow {
        name: name.to_string(),
        validation: out.validation,
        test: out.test,
    })
}

/// Runs every configuration, one thread each when `parallel`.
pub fn ablation_suite(base: &RunConfig, data: &PreparedData, parallel: bool) -> Result<Vec<AblationRow>> {
    let configs = ablation_configs(base);
    if !parallel {
        return configs.iter().map(|(n, c)| run_row(n, c, data)).collect();
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .iter()
            .map(|(n, c)| s.spawn(move || run_row(n, c, data)))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .map_err(|_| PipelineError::Data("ablation worker panicked".into()))?
            })
            .collect()
    })
}

/// Table with one row per configuration.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let named: Vec<(&str, ClassificationReport)> = rows.iter().map(|r| (r.name.as_str(), r.headline().clone())).collect();
    render_table(&named)
}
