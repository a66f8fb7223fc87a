//! Weight/activation alignment and per-layer distribution summaries.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{activation_part, weight_part, MetricKind};
use crate::model::{ModelWeights, SubModule, SubModuleId};
use crate::objective::ActivationStats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubModuleAlignment {
    pub name: String,
    /// Σ_ij α(|W|)_ij · F1(|W|)_ij
    pub weight_sum: f64,
    /// Σ_j β(v)_j · F2(v)_j
    pub activation_sum: f64,
    pub difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerAlignment {
    pub layer: usize,
    pub submodules: Vec<SubModuleAlignment>,
    pub mean_difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub metric: MetricKind,
    pub layers: Vec<LayerAlignment>,
    pub model_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDistribution {
    pub layer: usize,
    /// Mean over the layer's sub-modules of Σ|W|.
    pub weight_l1_mean: f64,
    /// Mean over the layer's sub-modules of Σ_j ‖X_j‖₂.
    pub activation_norm_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DistributionReport {
    pub layers: Vec<LayerDistribution>,
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len();
    if n == 0 {
        return 0.0;
    }
    xs.sum::<f64>() / n as f64
}

/// Per sub-module `|Σ weight part − Σ activation part|`, averaged per layer
/// and then over layers.
pub fn alignment_discrepancy(
    weights: &ModelWeights,
    stats: &ActivationStats,
    kind: &MetricKind,
) -> Result<AlignmentReport> {
    let config = match kind {
        MetricKind::Meta(c) => c,
        MetricKind::Magnitude => {
            return Err(Error::Unsupported(
                "magnitude has no activation component to align".into(),
            ))
        }
    };
    let mut layers = Vec::with_capacity(weights.config.n_layers);
    for layer in 0..weights.config.n_layers {
        let mut submodules = Vec::with_capacity(SubModule::ALL.len());
        for kind in SubModule::ALL {
            let id = SubModuleId::new(layer, kind);
            let s = stats
                .get(id)
                .ok_or_else(|| Error::MissingStats(id.to_string()))?;
            let w = weights.submodule(id);
            if s.features() != w.cols() {
                return Err(Error::Shape(format!("{id}: stats width {} vs {}", s.features(), w.cols())));
            }
            let weight_sum = weight_part(w, config).sum();
            let activation_sum = activation_part(s, config).sum();
            submodules.push(SubModuleAlignment {
                name: id.to_string(),
                weight_sum,
                activation_sum,
                difference: (weight_sum - activation_sum).abs(),
            });
        }
        let mean_difference = mean(submodules.iter().map(|s| s.difference));
        layers.push(LayerAlignment {
            layer,
            submodules,
            mean_difference,
        });
    }
    let model_mean = mean(layers.iter().map(|l| l.mean_difference));
    Ok(AlignmentReport {
        metric: *kind,
        layers,
        model_mean,
    })
}

pub fn distribution_summary(weights: &ModelWeights, stats: &ActivationStats) -> Result<DistributionReport> {
    let mut layers = Vec::with_capacity(weights.config.n_layers);
    for layer in 0..weights.config.n_layers {
        let mut w_l1 = Vec::with_capacity(7);
        let mut x_norm = Vec::with_capacity(7);
        for kind in SubModule::ALL {
            let id = SubModuleId::new(layer, kind);
            let s = stats
                .get(id)
                .ok_or_else(|| Error::MissingStats(id.to_string()))?;
            w_l1.push(weights.submodule(id).abs_sum());
            x_norm.push(s.v.sum());
        }
        layers.push(LayerDistribution {
            layer,
            weight_l1_mean: mean(w_l1.into_iter()),
            activation_norm_mean: mean(x_norm.into_iter()),
        });
    }
    Ok(DistributionReport { layers })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    /// `.csv` selects CSV; anything else is JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => ReportFormat::Csv,
            _ => ReportFormat::Json,
        }
    }
}

/// A report that can be written as JSON or as a one-row-per-layer CSV.
pub trait Report: Serialize {
    fn csv_header(&self) -> Vec<String>;
    fn csv_rows(&self) -> Vec<Vec<String>>;
}

/// Alignment CSV columns: `layer,q,k,v,o,gate,up,down,mean_difference`.
impl Report for AlignmentReport {
    fn csv_header(&self) -> Vec<String> {
        std::iter::once("layer")
            .chain(SubModule::ALL.iter().map(|k| k.name()))
            .chain(std::iter::once("mean_difference"))
            .map(String::from)
            .collect()
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        self.layers
            .iter()
            .map(|l| {
                std::iter::once(l.layer.to_string())
                    .chain(l.submodules.iter().map(|s| s.difference.to_string()))
                    .chain(std::iter::once(l.mean_difference.to_string()))
                    .collect()
            })
            .collect()
    }
}

/// Distribution CSV columns: `layer,weight_l1_mean,activation_norm_mean`.
impl Report for DistributionReport {
    fn csv_header(&self) -> Vec<String> {
        ["layer", "weight_l1_mean", "activation_norm_mean"]
            .map(String::from)
            .to_vec()
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        self.layers
            .iter()
            .map(|l| {
                vec![
                    l.layer.to_string(),
                    l.weight_l1_mean.to_string(),
                    l.activation_norm_mean.to_string(),
                ]
            })
            .collect()
    }
}

pub fn emit_report<R: Report>(report: &R, format: ReportFormat, path: &Path) -> Result<()> {
    let bytes = match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report)
                .map_err(|e| Error::Format(e.to_string()))?;
            s.push('\n');
            s.into_bytes()
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(report.csv_header())?;
            for row in report.csv_rows() {
                w.write_record(row)?;
            }
            w.into_inner().map_err(|e| Error::Format(e.to_string()))?
        }
    };
    File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))
}
