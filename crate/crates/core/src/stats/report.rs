//! CSV / JSON renderings of the prevalence tables and association report.

use serde::Serialize;

use super::{AssociationReport, CountRow, PrevalenceTable};
use crate::lexicon::LexiconVersion;

/// Everything the stats stage writes, as `(file name, bytes)` pairs.
pub fn render(
    prevalence: &PrevalenceTable,
    report: &AssociationReport,
    lexicon: &LexiconVersion,
) -> Result<Vec<(&'static str, Vec<u8>)>, csv::Error> {
    let term = |id: &str| lexicon.get(id).map(|e| e.canonical.clone()).unwrap_or_default();
    let mut files = Vec::new();

    let count_rows = |rows: &[CountRow], bracket: bool| -> Result<Vec<u8>, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["entry_id", "term", "users", "proportion", "percent", "label"])?;
        for r in rows {
            let label = if bracket { r.with_brackets() } else { r.with_parens() };
            w.write_record([
                r.entry_id.clone(),
                term(&r.entry_id),
                r.count.to_string(),
                r.proportion.to_string(),
                r.percent(),
                label,
            ])?;
        }
        finish(w)
    };
    files.push(("prevalence_medications.csv", count_rows(&prevalence.medications, false)?));
    files.push(("prevalence_side_effects.csv", count_rows(&prevalence.side_effects, true)?));

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["pattern", "users", "proportion", "label"])?;
    for p in &prevalence.patterns {
        w.write_record([
            p.pattern.to_string(),
            p.count.to_string(),
            p.proportion.to_string(),
            format!("{} ({:.1}%)", p.count, p.proportion * 100.0),
        ])?;
    }
    files.push(("patterns.csv", finish(w)?));

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["side_effect", "term", "h", "df", "p", "p_adjusted", "significant", "note"])?;
    for r in &report.results {
        w.write_record([
            r.side_effect.clone(),
            term(&r.side_effect),
            r.h.to_string(),
            r.df.to_string(),
            r.p.to_string(),
            r.p_adjusted.to_string(),
            r.significant.to_string(),
            r.note.clone().unwrap_or_default(),
        ])?;
    }
    files.push(("association.csv", finish(w)?));

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["side_effect", "pattern_a", "pattern_b", "z", "p", "p_adjusted"])?;
    for r in &report.results {
        for c in &r.pairwise {
            w.write_record([
                r.side_effect.clone(),
                c.pattern_a.to_string(),
                c.pattern_b.to_string(),
                c.z.to_string(),
                c.p.to_string(),
                c.p_adjusted.to_string(),
            ])?;
        }
    }
    files.push(("pairwise.csv", finish(w)?));

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["side_effect".to_string(), "term".to_string()];
    header.extend(report.heatmap.patterns.iter().map(|p| p.to_string()));
    w.write_record(&header)?;
    for row in &report.heatmap.rows {
        let mut rec = vec![row.side_effect.clone(), term(&row.side_effect)];
        rec.extend(row.prevalence.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    files.push(("heatmap.csv", finish(w)?));

    #[derive(Serialize)]
    struct Document<'a> {
        lexicon_version: u64,
        prevalence: &'a PrevalenceTable,
        association: &'a AssociationReport,
    }
    let mut json = serde_json::to_vec_pretty(&Document {
        lexicon_version: lexicon.version(),
        prevalence,
        association: report,
    })
    .expect("report serializes");
    json.push(b'\n');
    files.push(("report.json", json));
    Ok(files)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>, csv::Error> {
    w.into_inner().map_err(|e| csv::Error::from(e.into_error()))
}
