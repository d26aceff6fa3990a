//! The report suite built from aggregated certificates.

use super::*;
use crate::config::ReportConfig;
use crate::heritage::floor_area_totals;
use crate::imagery::CoverageStats;

pub struct ReportInputs<'a> {
    pub epcs: &'a [EpcAssessment],
    pub assignments: &'a [HeritageAssignment],
    pub funnel: Option<&'a Funnel>,
    pub coverage: Option<&'a CoverageStats>,
    pub pipeline: &'a PipelineConfig,
    pub report: &'a ReportConfig,
}

const AGE_CAVEAT: &str = "Shares use the predicted value of every observed certificate. \
Certificates built before the age cutoff, or carrying the default year, are assigned heritage value from their age whatever their score.";

pub fn build_reports(inp: &ReportInputs<'_>) -> Vec<Table> {
    let pd = inp.report.percent_decimals;
    let sd = inp.report.share_decimals;
    let observed: Vec<&EpcAssessment> = inp.epcs.iter().filter(|e| e.best_observation.is_some()).collect();
    let mut out = Vec::new();

    if let Some(f) = inp.funnel {
        out.push(f.to_table("funnel", "Certificates and buildings through the pipeline"));
    }

    let years: Vec<(Option<i64>, Option<i64>)> = observed
        .iter()
        .map(|e| {
            let p = e.best_observation.as_ref().and_then(|o| o.assessment.construction_year.value()).map(i64::from);
            (Some(i64::from(e.construction_year)), p)
        })
        .collect();
    let x = confusion_matrix(&years, &Binning::construction_periods());
    let mut t = x.to_table(
        "construction_period_confusion",
        "Predicted construction periods (columns) against certificate construction periods (rows)",
        "Certificate period",
        pd,
    );
    t.notes.push(agreement_note(&x, pd));
    out.push(t);

    let floors: Vec<(Option<i64>, Option<i64>)> = observed
        .iter()
        .map(|e| {
            let p = e.best_observation.as_ref().map(|o| i64::from(o.assessment.floor_number));
            (Some(i64::from(e.floors)), p)
        })
        .collect();
    let rows = Binning::distinct(floors.iter().filter_map(|p| p.0));
    let cols = Binning::distinct(floors.iter().filter_map(|p| p.1));
    let x = confusion_matrix_with(&floors, &rows, &cols);
    let mut t = x.to_table(
        "floors_confusion",
        "Predicted number of floors (columns) against certificate floors (rows)",
        "Certificate floors",
        pd,
    );
    t.notes.push(agreement_note(&x, pd));
    out.push(t);

    let panes = |e: &EpcAssessment| e.best_observation.as_ref().map(|o| i64::from(o.assessment.window_avg_pane_number));
    let pane_bins = Binning::distinct(inp.epcs.iter().filter_map(panes));
    let x = group_distribution(inp.epcs, inp.assignments, &panes, &pane_bins, None);
    let mut t = x.to_table(
        "window_panes_by_group",
        "Predicted window pane count per heritage group, share of heated floor area",
        "Panes",
        pd,
    );
    t.notes.push("Columns sum to 100%. Certificates without an observation are left out.".into());
    out.push(t);

    let value = |e: &EpcAssessment| e.predicted_heritage_value.map(i64::from);
    let x = group_distribution(inp.epcs, inp.assignments, &value, &Binning::heritage_value(), Some("N/A*"));
    let mut t = x.to_table(
        "heritage_value_by_group",
        "Predicted heritage value per heritage group, share of heated floor area",
        "Predicted heritage value",
        pd,
    );
    t.notes.push("*No available street view image".into());
    out.push(t);

    let cmp = if inp.pipeline.threshold_inclusive { "≥" } else { ">" };
    let qualifying = format!("Heritage value {cmp} {}", inp.pipeline.heritage_threshold);
    let periods = Binning::report_periods();
    let s = share_above_threshold(inp.epcs, Dimension::RegionFlag, &periods, inp.pipeline);
    let mut t = s.to_detailed_table(
        "share_by_region",
        &format!("Certificates with {} inside and outside {}", qualifying.to_lowercase(), inp.report.capital_region),
        &qualifying,
        sd,
    );
    t.notes.push(AGE_CAVEAT.into());
    out.push(t);

    let s = share_above_threshold(inp.epcs, Dimension::IncomeBand, &periods, inp.pipeline);
    let mut t = s.to_share_table(
        "share_by_income",
        &format!("Share with {} by disposable income band [KSEK]", qualifying.to_lowercase()),
        sd,
    );
    t.notes.push(AGE_CAVEAT.into());
    out.push(t);

    let s = share_above_threshold(inp.epcs, Dimension::PredictedFacadeMaterial, &periods, inp.pipeline);
    let mut t = s.to_share_table(
        "share_by_facade_material",
        &format!("Share with {} by predicted facade material", qualifying.to_lowercase()),
        sd,
    );
    t.notes.push(AGE_CAVEAT.into());
    out.push(t);

    let sweep = threshold_sweep(inp.epcs, &inp.report.sweep_thresholds, inp.pipeline.threshold_inclusive);
    out.push(sweep_table(&sweep, "threshold_sweep", "Scored certificates included at each threshold", sd));

    out.push(group_area_table(inp.assignments, sd));

    if let Some(c) = inp.coverage {
        out.push(coverage_table(c, sd));
    }
    out
}

fn agreement_note(x: &CrossTab, decimals: usize) -> String {
    match x.agreement() {
        Some(a) => format!("Agreement on the diagonal: {}%", round_half_up(100.0 * a, decimals)),
        None => "Agreement on the diagonal: n/a".into(),
    }
}

/// Exact floor-area partition over all six groups.
pub fn group_area_table(assignments: &[HeritageAssignment], decimals: usize) -> Table {
    let totals = floor_area_totals(assignments);
    let cols = ["EPCs", "Heated floor area [Mm²]", "Share of floor area [%]"];
    let mut t = Table::new("heritage_groups", "Heated floor area per heritage group", "Group", cols.map(String::from).to_vec());
    let grand = totals.total_milli_m2();
    let share = |m: i64| (grand > 0).then(|| 100.0 * m as f64 / grand as f64);
    for g in HeritageGroup::ALL {
        let n = assignments.iter().filter(|a| a.group == g).count();
        let m = totals.milli_m2[&g];
        t.push(g.label(), vec![Cell::count(n as i64), Cell::number(totals.group_mm2(g), 2), Cell::percent(share(m), decimals)]);
    }
    t.push(
        "Total",
        vec![Cell::count(assignments.len() as i64), Cell::number(totals.total_mm2(), 2), Cell::percent(share(grand), decimals)],
    );
    t
}

pub fn coverage_table(c: &CoverageStats, decimals: usize) -> Table {
    let mut t = Table::new("coverage", "Street view coverage of queried buildings", "Capture year", vec![
        "Buildings".into(),
        "Share of covered [%]".into(),
    ]);
    for (y, n) in &c.by_capture_year {
        t.push(y.to_string(), vec![Cell::count(*n as i64), Cell::percent(c.pct_by_capture_year.get(y).copied(), decimals)]);
    }
    let undated = (c.covered > 0).then(|| 100.0 * c.undated as f64 / c.covered as f64);
    t.push("Undated", vec![Cell::count(c.undated as i64), Cell::percent(undated, decimals)]);
    t.push("Covered", vec![Cell::count(c.covered as i64), Cell::percent(c.pct_within_radius, decimals)]);
    t.push("Queried", vec![Cell::count(c.buildings as i64), Cell::Blank]);
    t.notes.push("The Covered share is relative to all queried buildings.".into());
    t
}
