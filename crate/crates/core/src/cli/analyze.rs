//! `analyze`: curves, saturation, differences, significance tests and the
//! form-vs-meaning scatter, as tables, JSON and SVG.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::config::{RunConfig, TTestUnit, TaskGroup};
use super::svg::{bar_plot, line_plot, scatter_plot, FitLine, ScatterPoint, Series};
use super::tables::*;
use super::{read_probe_table, update_manifest, write_atomic, write_json, CliError, Summary, TOOL_VERSION};
use crate::corpus::Duality;
use crate::layers::{aggregate_curves, difference_curve, saturation_layer, LayerCurve};
use crate::probe::ProbeScore;
use crate::stats::{linear_fit, significance_stars, stouffer_combine, t_test};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_hash: String,
    pub probe_config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn of(cfg: &RunConfig) -> Self {
        Provenance {
            tool_version: TOOL_VERSION.to_string(),
            config_hash: cfg.hash(),
            probe_config_hash: cfg.probe.hash(cfg.seed),
            seed: cfg.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub provenance: Provenance,
    pub layers: Vec<usize>,
    pub curves: Vec<CurveRow>,
    pub saturation: Vec<SaturationRow>,
    pub differences: Vec<DifferenceRow>,
    pub ttests: Vec<TTestRow>,
    pub stouffer: Vec<StoufferRow>,
    pub scatter: Vec<ScatterRow>,
    pub fit: Option<FitRow>,
    /// Groups named in the grouping with no probed task.
    pub missing_groups: Vec<String>,
}

/// One model's probe table arranged by task.
struct ModelScores {
    name: String,
    language: String,
    layers: Vec<usize>,
    by_task: BTreeMap<String, Vec<ProbeScore>>,
}

fn population_std(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

impl ModelScores {
    fn load(cfg: &RunConfig, name: &str, language: &str) -> Result<Self, CliError> {
        let mut by_task: BTreeMap<String, Vec<ProbeScore>> = BTreeMap::new();
        for s in read_probe_table(cfg, name)? {
            by_task.entry(s.task_id.clone()).or_default().push(s);
        }
        let mut layers: Option<Vec<usize>> = None;
        for (task, scores) in by_task.iter_mut() {
            scores.sort_by_key(|s| s.layer);
            let ls: Vec<usize> = scores.iter().map(|s| s.layer).collect();
            match &layers {
                None => layers = Some(ls),
                Some(l) if *l != ls => {
                    return Err(CliError::Data(format!(
                        "model `{name}`: task `{task}` covers different layers than the other tasks"
                    )))
                }
                _ => {}
            }
        }
        Ok(ModelScores {
            name: name.to_string(),
            language: language.to_string(),
            layers: layers.unwrap_or_default(),
            by_task,
        })
    }

    fn task_curve(&self, task: &str) -> LayerCurve {
        let scores = &self.by_task[task];
        LayerCurve {
            curve_id: task.to_string(),
            values: scores.iter().map(|s| s.normalized_perf).collect(),
            stds: scores.iter().map(|s| population_std(&s.normalized_fold_scores())).collect(),
        }
    }

    fn score_at(&self, task: &str, layer: usize) -> Option<&ProbeScore> {
        self.by_task.get(task)?.iter().find(|s| s.layer == layer)
    }
}

fn curve_rows(model: &str, kind: &str, layers: &[usize], c: &LayerCurve) -> Vec<CurveRow> {
    layers
        .iter()
        .enumerate()
        .map(|(i, &layer)| CurveRow {
            model: model.to_string(),
            curve_id: c.curve_id.clone(),
            kind: kind.to_string(),
            layer,
            value: c.values[i],
            std: c.stds[i],
        })
        .collect()
}

fn saturation_row(model: &str, kind: &str, layers: &[usize], c: &LayerCurve, ratio: f64) -> Result<SaturationRow, CliError> {
    let s = saturation_layer(c, ratio)?;
    Ok(SaturationRow {
        model: model.to_string(),
        curve_id: c.curve_id.clone(),
        kind: kind.to_string(),
        saturation_layer: s.saturation_layer.map(|i| layers[i]),
        maximum_layer: layers[s.maximum_layer],
        peak_value: s.peak_value,
        threshold_ratio: s.threshold_ratio,
        degenerate: s.degenerate,
    })
}

/// Group name -> member tasks present in the table, in task order.
fn groups_of<'a>(grouping: &'a BTreeMap<String, TaskGroup>, m: &ModelScores) -> BTreeMap<&'a str, Vec<String>> {
    let mut groups: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for (task, g) in grouping {
        if m.by_task.contains_key(task) {
            groups.entry(g.group_name()).or_default().push(task.clone());
        }
    }
    groups
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn cmd_analyze(cfg: &RunConfig) -> Result<(AnalysisReport, Summary), CliError> {
    let grouping = cfg.grouping()?;
    let ratio = cfg.analysis.threshold_ratio;
    let mut summary = Summary::default();
    let models = cfg
        .models
        .iter()
        .map(|m| ModelScores::load(cfg, &m.name, &m.language))
        .collect::<Result<Vec<_>, _>>()?;
    let layers = models[0].layers.clone();
    if models.iter().any(|m| m.layers != layers) {
        return Err(CliError::Data("models were probed on different layers".into()));
    }
    if layers.is_empty() {
        return Err(CliError::Data("probe tables are empty".into()));
    }
    let score_layer = cfg.analysis.score_layer.unwrap_or(*layers.last().expect("non-empty"));
    if !layers.contains(&score_layer) {
        return Err(CliError::Config(format!("score_layer {score_layer} was not probed")));
    }

    let all_groups: BTreeSet<&str> = grouping.values().map(TaskGroup::group_name).collect();
    let mut present_groups = BTreeSet::new();
    let mut curves = Vec::new();
    let mut saturation = Vec::new();
    let mut group_curves: BTreeMap<(String, String), LayerCurve> = BTreeMap::new();
    let mut ungrouped = BTreeSet::new();
    for m in &models {
        for task in m.by_task.keys() {
            if !grouping.contains_key(task) {
                ungrouped.insert(task.clone());
            }
            let c = m.task_curve(task);
            curves.extend(curve_rows(&m.name, "task", &layers, &c));
            saturation.push(saturation_row(&m.name, "task", &layers, &c, ratio)?);
        }
        for (group, tasks) in groups_of(&grouping, m) {
            present_groups.insert(group);
            let members: Vec<LayerCurve> = tasks.iter().map(|t| m.task_curve(t)).collect();
            let c = aggregate_curves(group, &members)?;
            curves.extend(curve_rows(&m.name, "group", &layers, &c));
            saturation.push(saturation_row(&m.name, "group", &layers, &c, ratio)?);
            group_curves.insert((m.name.clone(), group.to_string()), c);
        }
    }
    for t in &ungrouped {
        summary.warn(format!("task `{t}` is not in the grouping and is left out of group curves"));
    }
    let missing_groups: Vec<String> = all_groups
        .difference(&present_groups)
        .map(|g| g.to_string())
        .collect();
    for g in &missing_groups {
        summary.warn(format!("group `{g}` has no probed tasks"));
    }

    let mut differences = Vec::new();
    let mut ttests = Vec::new();
    let mut stouffer = Vec::new();
    for [a, b] in &cfg.analysis.comparisons {
        let comparison = format!("{a}-{b}");
        let ma = models.iter().find(|m| &m.name == a).expect("checked");
        let mb = models.iter().find(|m| &m.name == b).expect("checked");
        for group in &present_groups {
            let (Some(ca), Some(cb)) = (
                group_curves.get(&(a.clone(), group.to_string())),
                group_curves.get(&(b.clone(), group.to_string())),
            ) else {
                continue;
            };
            let d = difference_curve(ca, cb)?;
            for (i, &layer) in layers.iter().enumerate() {
                differences.push(DifferenceRow {
                    comparison: comparison.clone(),
                    curve_id: group.to_string(),
                    layer,
                    value: d.values[i],
                    std_diff: d.std_diff[i],
                });
            }
        }
        for duality in [Duality::Form, Duality::Meaning] {
            let tasks: Vec<&String> = grouping
                .iter()
                .filter(|(t, g)| g.duality == duality && ma.by_task.contains_key(*t) && mb.by_task.contains_key(*t))
                .map(|(t, _)| t)
                .collect();
            if tasks.is_empty() {
                continue;
            }
            for &layer in &layers {
                let mut p_values = Vec::new();
                let mut push = |unit: String, xa: &[f64], xb: &[f64]| -> Result<(), CliError> {
                    let r = t_test(cfg.analysis.ttest_kind, xa, xb)?;
                    p_values.push(r.p_one_sided);
                    ttests.push(TTestRow {
                        comparison: comparison.clone(),
                        layer,
                        unit,
                        duality: duality.as_str().to_string(),
                        t_statistic: r.t_statistic,
                        degrees_of_freedom: r.degrees_of_freedom,
                        p_one_sided: r.p_one_sided,
                        p_two_sided: r.p_two_sided,
                        mean_a: r.mean_a,
                        mean_b: r.mean_b,
                        stars: significance_stars(r.p_two_sided).to_string(),
                    });
                    Ok(())
                };
                match cfg.analysis.ttest_unit {
                    TTestUnit::Folds => {
                        for t in &tasks {
                            let sa = ma.score_at(t, layer).expect("same layers");
                            let sb = mb.score_at(t, layer).expect("same layers");
                            push((*t).clone(), &sa.normalized_fold_scores(), &sb.normalized_fold_scores())?;
                        }
                    }
                    TTestUnit::Tasks => {
                        let xa: Vec<f64> = tasks.iter().map(|t| ma.score_at(t, layer).expect("same layers").normalized_perf).collect();
                        let xb: Vec<f64> = tasks.iter().map(|t| mb.score_at(t, layer).expect("same layers").normalized_perf).collect();
                        push(duality.as_str().to_string(), &xa, &xb)?;
                    }
                }
                let c = stouffer_combine(&p_values)?;
                if c.n_clamped > 0 {
                    summary.warn(format!(
                        "{comparison} layer {layer} {duality}: {} p-values clamped before combining",
                        c.n_clamped
                    ));
                }
                stouffer.push(StoufferRow {
                    comparison: comparison.clone(),
                    layer,
                    duality: duality.as_str().to_string(),
                    k: p_values.len(),
                    combined_z: c.combined_z,
                    combined_p: c.combined_p,
                    n_clamped: c.n_clamped,
                    stars: significance_stars(c.combined_p).to_string(),
                });
            }
        }
    }

    let mut scatter = Vec::new();
    for m in &models {
        let mean_of = |d: Duality| {
            let vals: Vec<f64> = grouping
                .iter()
                .filter(|(t, g)| g.duality == d && m.by_task.contains_key(*t))
                .map(|(t, _)| m.score_at(t, score_layer).expect("same layers").normalized_perf)
                .collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        if let (Some(form), Some(meaning)) = (mean_of(Duality::Form), mean_of(Duality::Meaning)) {
            scatter.push(ScatterRow {
                model: m.name.clone(),
                language: m.language.clone(),
                layer: score_layer,
                form,
                meaning,
            });
        }
    }
    let xs: Vec<f64> = scatter.iter().map(|s| s.form).collect();
    let ys: Vec<f64> = scatter.iter().map(|s| s.meaning).collect();
    let fit = match linear_fit(&xs, &ys) {
        Ok(f) => Some(FitRow {
            n_points: f.n_points,
            slope: f.slope,
            intercept: f.intercept,
            r: f.r,
            r_squared: f.r_squared,
        }),
        Err(e) => {
            summary.warn(format!("no form-vs-meaning fit: {e}"));
            None
        }
    };

    let report = AnalysisReport {
        provenance: Provenance::of(cfg),
        layers: layers.clone(),
        curves,
        saturation,
        differences,
        ttests,
        stouffer,
        scatter,
        fit,
        missing_groups,
    };
    summary.outputs.extend(write_analysis(cfg, &report, &group_curves)?);
    summary.outputs.push(update_manifest(cfg)?);
    Ok((report, summary))
}

fn write_analysis(
    cfg: &RunConfig,
    r: &AnalysisReport,
    group_curves: &BTreeMap<(String, String), LayerCurve>,
) -> Result<Vec<std::path::PathBuf>, CliError> {
    let dir = cfg.run_dir.join("analysis");
    let mut out = Vec::new();
    let mut csv = |name: &str, bytes: Vec<u8>| -> Result<(), CliError> {
        let p = dir.join(name);
        write_atomic(&p, &bytes)?;
        out.push(p);
        Ok(())
    };
    csv("curves.csv", to_csv(&r.curves)?)?;
    csv("saturation.csv", to_csv(&r.saturation)?)?;
    csv("differences.csv", to_csv(&r.differences)?)?;
    csv("ttests.csv", to_csv(&r.ttests)?)?;
    csv("stouffer.csv", to_csv(&r.stouffer)?)?;
    csv("scatter.csv", to_csv(&r.scatter)?)?;
    csv("fit.csv", to_csv(&r.fit.iter().cloned().collect::<Vec<_>>())?)?;
    let json = dir.join("analysis.json");
    write_json(&json, r)?;
    out.push(json);

    let plots = dir.join("plots");
    let layers_f: Vec<f64> = r.layers.iter().map(|&l| l as f64).collect();
    let mut svg = |name: String, body: String| -> Result<(), CliError> {
        let p = plots.join(name);
        write_atomic(&p, body.as_bytes())?;
        out.push(p);
        Ok(())
    };
    for m in &cfg.models {
        let series: Vec<Series> = group_curves
            .iter()
            .filter(|((model, _), _)| model == &m.name)
            .map(|((_, g), c)| Series {
                label: g.clone(),
                points: layers_f.iter().copied().zip(c.values.iter().copied()).collect(),
                band: Some(c.stds.clone()),
            })
            .collect();
        svg(
            format!("groups_{}.svg", file_safe(&m.name)),
            line_plot(&format!("{}: group curves", m.name), "layer", "normalized performance", &series),
        )?;
        let mut tasks: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
        for row in r.curves.iter().filter(|c| c.model == m.name && c.kind == "task") {
            tasks.entry(&row.curve_id).or_default().push((row.layer as f64, row.value));
        }
        let series: Vec<Series> = tasks
            .into_iter()
            .map(|(t, points)| Series { label: t.to_string(), points, band: None })
            .collect();
        svg(
            format!("tasks_{}.svg", file_safe(&m.name)),
            line_plot(&format!("{}: task curves", m.name), "layer", "normalized performance", &series),
        )?;
    }
    let group_rows: Vec<&SaturationRow> = r.saturation.iter().filter(|s| s.kind == "group").collect();
    let categories: Vec<String> = group_rows.iter().map(|s| format!("{} {}", s.model, s.curve_id)).collect();
    let values = vec![
        group_rows
            .iter()
            .map(|s| s.saturation_layer.map_or(f64::NAN, |l| l as f64))
            .collect(),
        group_rows.iter().map(|s| s.maximum_layer as f64).collect(),
    ];
    svg(
        "saturation.svg".into(),
        bar_plot("Saturation and maximum layers", "layer", &categories, &["saturation".into(), "maximum".into()], &values),
    )?;
    for [a, b] in &cfg.analysis.comparisons {
        let comparison = format!("{a}-{b}");
        let mut by_group: BTreeMap<&str, (Vec<(f64, f64)>, Vec<f64>)> = BTreeMap::new();
        for d in r.differences.iter().filter(|d| d.comparison == comparison) {
            let e = by_group.entry(&d.curve_id).or_default();
            e.0.push((d.layer as f64, d.value));
            e.1.push(d.std_diff);
        }
        let series: Vec<Series> = by_group
            .into_iter()
            .map(|(g, (points, band))| Series { label: g.to_string(), points, band: Some(band) })
            .collect();
        svg(
            format!("diff_{}_vs_{}.svg", file_safe(a), file_safe(b)),
            line_plot(&format!("{a} minus {b}"), "layer", "difference", &series),
        )?;
    }
    let points: Vec<ScatterPoint> = r
        .scatter
        .iter()
        .map(|s| ScatterPoint { label: format!("{} ({})", s.model, s.language), x: s.form, y: s.meaning })
        .collect();
    let fit = r.fit.as_ref().map(|f| FitLine { slope: f.slope, intercept: f.intercept, r_squared: f.r_squared });
    svg(
        "scatter.svg".into(),
        scatter_plot("Form vs meaning", "form", "meaning", &points, fit.as_ref()),
    )?;
    Ok(out)
}
