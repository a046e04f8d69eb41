use std::path::Path;
use std::process::ExitCode;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use shiftrisk::event_tree::Topology;
use shiftrisk::experiments::risk::{CbaPoint, RiskCurve};
use shiftrisk::experiments::{
    accuracy_error_sweep, cba_surface, rate_error_sweep, risk_curve, ErrorReport,
};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{self, Format};
use crate::GlobalArgs;

pub const META_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepKindArg {
    RateError,
    AccuracyError,
    RiskCurve,
    Cba,
}

impl SweepKindArg {
    pub fn name(self) -> &'static str {
        match self {
            SweepKindArg::RateError => "rate-error",
            SweepKindArg::AccuracyError => "accuracy-error",
            SweepKindArg::RiskCurve => "risk-curve",
            SweepKindArg::Cba => "cba",
        }
    }
}

/// Flat row of the risk-curve table: one per rate and topology, then one
/// crossing summary per topology (rate column empty, values are rates).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskRow {
    pub record: String,
    pub topology: Topology,
    pub rate: Option<f64>,
    pub analytic: Option<f64>,
    pub estimated: Option<f64>,
    pub realized: Option<f64>,
}

fn risk_rows(curve: &RiskCurve) -> Vec<RiskRow> {
    let mut rows = Vec::new();
    for point in &curve.points {
        for (topology, values) in [(Topology::Base, point.no_rv), (Topology::Rv, point.rv)] {
            rows.push(RiskRow {
                record: "point".into(),
                topology,
                rate: Some(point.rate),
                analytic: Some(values.analytic),
                estimated: Some(values.estimated),
                realized: Some(values.realized),
            });
        }
    }
    for crossing in &curve.crossings {
        rows.push(RiskRow {
            record: "crossing".into(),
            topology: crossing.topology,
            rate: None,
            analytic: crossing.analytic,
            estimated: crossing.estimated,
            realized: crossing.realized,
        });
    }
    rows
}

fn error_summary(report: &ErrorReport) -> Value {
    let total = report.total();
    let by_ba: Vec<Value> = report
        .aggregate_by(|c| output::round_sig(c.profile.balanced_accuracy()))
        .into_iter()
        .map(|(ba, agg)| json!({ "balanced_accuracy": ba, "mae": agg.method.mae(), "baseline_mae": agg.baseline.mae() }))
        .collect();
    let by_rate: Vec<Value> = report
        .aggregate_by(|c| c.rate)
        .into_iter()
        .map(|(rate, agg)| json!({ "rate": rate, "mae": agg.method.mae(), "baseline_mae": agg.baseline.mae() }))
        .collect();
    json!({
        "cells": total.cells,
        "refusals": total.refusals,
        "mae": total.method.mae(),
        "mean_signed_error": total.method.mean_signed(),
        "baseline_mae": total.baseline.mae(),
        "by_balanced_accuracy": by_ba,
        "by_rate": by_rate,
    })
}

struct Report {
    table: String,
    summary: Value,
    master_seed: Option<u64>,
}

pub fn run(global: &GlobalArgs, config: &RunConfig, kind: SweepKindArg) -> Result<ExitCode, CliError> {
    let dir = global
        .output
        .as_ref()
        .ok_or_else(|| CliError::Usage("sweep needs --output DIR".into()))?;
    let sweep = config.sweep()?;
    let structured = global.format == Format::Structured;
    let report = match kind {
        SweepKindArg::RateError | SweepKindArg::AccuracyError => {
            let report = if kind == SweepKindArg::RateError {
                rate_error_sweep(&sweep.grid)?
            } else {
                accuracy_error_sweep(&sweep.grid, config.oracle()?, &sweep.accuracy)?
            };
            Report {
                table: if structured {
                    output::to_json(&report)
                } else {
                    output::to_csv(&report.records())?
                },
                summary: error_summary(&report),
                master_seed: Some(sweep.grid.master_seed),
            }
        }
        SweepKindArg::RiskCurve => {
            let spec = sweep
                .risk_curve
                .as_ref()
                .ok_or_else(|| CliError::Config("missing [sweep.risk_curve] section".into()))?;
            let curve = risk_curve(spec, config.oracle()?, config.costs()?)?;
            Report {
                table: if structured {
                    output::to_json(&curve)
                } else {
                    output::to_csv(&risk_rows(&curve))?
                },
                summary: json!({ "threshold": curve.threshold, "crossings": curve.crossings }),
                master_seed: Some(spec.master_seed),
            }
        }
        SweepKindArg::Cba => {
            let spec = sweep
                .cba
                .as_ref()
                .ok_or_else(|| CliError::Config("missing [sweep.cba] section".into()))?;
            let surface = cba_surface(spec, config.oracle()?, config.costs()?)?;
            Report {
                table: if structured {
                    output::to_json(&surface)
                } else {
                    output::to_csv::<CbaPoint>(&surface.points)?
                },
                summary: json!({
                    "rate": surface.rate,
                    "rows": surface.classifier_axis.len(),
                    "columns": surface.detector_axis.len(),
                    "operating_point": surface.operating_point,
                }),
                master_seed: None,
            }
        }
    };
    write_report(dir, kind, global.format, config, report)?;
    Ok(ExitCode::SUCCESS)
}

fn write_report(
    dir: &Path,
    kind: SweepKindArg,
    format: Format,
    config: &RunConfig,
    report: Report,
) -> Result<(), CliError> {
    let name = kind.name();
    output::write_file(&dir.join(format!("{name}.{}", format.extension())), &report.table)?;
    let meta = json!({
        "schema_version": META_SCHEMA_VERSION,
        "kind": name,
        "tool": env!("CARGO_PKG_NAME"),
        "tool_version": env!("CARGO_PKG_VERSION"),
        "master_seed": report.master_seed,
        "config": config,
        "summary": report.summary,
    });
    output::write_file(&dir.join(format!("{name}.meta.json")), &output::to_json(&meta))
}
