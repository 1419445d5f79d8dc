//! `report`: one JSON document and a Markdown digest of a finished run.

use std::fmt::Write;

use serde::Serialize;

use super::analyze::AnalysisReport;
use super::config::RunConfig;
use super::tables::{read_csv, AccuracyRow, ComparisonRow};
use super::{update_manifest, write_atomic, write_json, CliError, Summary};

#[derive(Debug, Serialize)]
struct FullReport<'a> {
    analysis: &'a AnalysisReport,
    paradigm_accuracies: Vec<AccuracyRow>,
    paradigm_comparison: Vec<ComparisonRow>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

pub fn cmd_report(cfg: &RunConfig) -> Result<Summary, CliError> {
    let mut summary = Summary::default();
    let analysis_path = cfg.run_dir.join("analysis").join("analysis.json");
    if !analysis_path.exists() {
        return Err(CliError::Data(format!(
            "{} not found; run `analyze` first",
            analysis_path.display()
        )));
    }
    let analysis: AnalysisReport = serde_json::from_slice(&std::fs::read(&analysis_path)?)?;
    let psy = cfg.run_dir.join("psycholing");
    let (accuracies, comparison) = if psy.join("comparison_by_duality.csv").exists() {
        (
            read_csv::<AccuracyRow>(&psy.join("accuracy.csv"))?,
            read_csv::<ComparisonRow>(&psy.join("comparison_by_duality.csv"))?,
        )
    } else {
        summary.warn("no psycholing tables; run `psycholing` to include paradigm accuracies".into());
        (Vec::new(), Vec::new())
    };

    let mut md = String::new();
    let p = &analysis.provenance;
    let _ = writeln!(md, "# probekit report\n");
    let _ = writeln!(
        md,
        "tool {} | config {} | probe config {} | seed {}\n",
        p.tool_version, p.config_hash, p.probe_config_hash, p.seed
    );
    let _ = writeln!(md, "## Saturation and maximum layers\n");
    let _ = writeln!(md, "| model | curve | saturation | maximum | peak |");
    let _ = writeln!(md, "|---|---|---|---|---|");
    for s in analysis.saturation.iter().filter(|s| s.kind == "group") {
        let sat = s.saturation_layer.map_or_else(|| "degenerate".to_string(), |l| l.to_string());
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {:.3} |",
            s.model, s.curve_id, sat, s.maximum_layer, s.peak_value
        );
    }
    if !analysis.stouffer.is_empty() {
        let _ = writeln!(md, "\n## Combined tests at the last layer\n");
        let _ = writeln!(md, "| comparison | duality | k | Z | p | |");
        let _ = writeln!(md, "|---|---|---|---|---|---|");
        let last = analysis.layers.last().copied().unwrap_or(0);
        for s in analysis.stouffer.iter().filter(|s| s.layer == last) {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {:.3} | {:.3e} | {} |",
                s.comparison, s.duality, s.k, s.combined_z, s.combined_p, s.stars
            );
        }
    }
    if let Some(f) = &analysis.fit {
        let _ = writeln!(
            md,
            "\n## Form vs meaning\n\nslope {:.3}, intercept {:.3}, r {:.3}, R² {:.3} over {} points",
            f.slope, f.intercept, f.r, f.r_squared, f.n_points
        );
    }
    if !comparison.is_empty() {
        let _ = writeln!(md, "\n## Paradigms\n");
        let _ = writeln!(md, "| model | duality | direct | meta | neuro |");
        let _ = writeln!(md, "|---|---|---|---|---|");
        for r in &comparison {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} |",
                r.model,
                r.duality,
                cell(r.direct),
                cell(r.meta),
                cell(r.neuro)
            );
        }
    }
    if !analysis.missing_groups.is_empty() {
        let _ = writeln!(md, "\nGroups without probed tasks: {}", analysis.missing_groups.join(", "));
    }

    let md_path = cfg.run_dir.join("report.md");
    write_atomic(&md_path, md.as_bytes())?;
    let json_path = cfg.run_dir.join("report.json");
    write_json(
        &json_path,
        &FullReport {
            analysis: &analysis,
            paradigm_accuracies: accuracies,
            paradigm_comparison: comparison,
        },
    )?;
    summary.outputs.extend([md_path, json_path]);
    summary.outputs.push(update_manifest(cfg)?);
    Ok(summary)
}
