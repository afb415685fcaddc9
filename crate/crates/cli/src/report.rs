//! Text renderings: statistics after `augment`, CPT tables, query answers.
//! Every number is printed with 6 fractional digits.

use std::fmt::Write;

use nodefail::augment::{CountMode, CptTable};
use nodefail::infer::{BayesNet, Posterior};
use nodefail::model::{Assignment, EventFailureMatrix};
use nodefail::predict::{self, format_assignment, Prediction};
use nodefail::Model;

pub fn population_stats(model: &Model) -> String {
    let m = &model.matrix;
    let p = model.net.provenance().expect("augmented model has provenance");
    let mut out = String::new();
    let mode = match p.spec.mode {
        CountMode::Deterministic => "deterministic".to_string(),
        CountMode::Sampled => format!("sampled (seed {})", p.spec.seed.unwrap_or_default()),
    };
    let mass: f64 = p.pmf.iter().sum();
    writeln!(
        out,
        "power law: k = {}, a = {:.6}, N = {}, S = {}, mode = {mode}, sum p(x) = {mass:.6}",
        p.spec.exponent, p.scale, p.spec.failures, p.spec.population
    )
    .unwrap();
    writeln!(out).unwrap();
    writeln!(out, "{:<10} {:>10} {:>10} {:>10}", "failure", "p(x)", "count", "share").unwrap();
    for (i, label) in m.failure_labels().iter().enumerate() {
        writeln!(
            out,
            "{:<10} {:>10.6} {:>10} {:>10.6}",
            label,
            p.pmf[i],
            p.counts[i],
            p.counts[i] as f64 / p.total as f64
        )
        .unwrap();
    }
    writeln!(out, "{:<10} {:>10} {:>10}", "total", "", p.total).unwrap();
    writeln!(out).unwrap();
    writeln!(out, "{:<10} {:>10}", "event", "Pr(E = 1)").unwrap();
    let population = nodefail::augment::FailurePopulation::new(p.counts.clone()).expect("stored counts are valid");
    let probs = nodefail::augment::event_probabilities(m, &population).expect("aligned with matrix");
    for (label, prob) in m.event_labels().iter().zip(probs) {
        writeln!(out, "{label:<10} {prob:>10.6}").unwrap();
    }
    out
}

fn heading(net: &BayesNet, cpt: &CptTable) -> String {
    let node = net.label(cpt.node);
    if cpt.parents.is_empty() {
        format!("Pr({node})")
    } else {
        let parents: Vec<&str> = cpt.parents.iter().map(|&p| net.label(p)).collect();
        format!("Pr({node} | {})", parents.join(", "))
    }
}

pub fn cpt_table(net: &BayesNet, cpt: &CptTable) -> String {
    let node = net.label(cpt.node);
    let mut out = String::new();
    writeln!(out, "{}", heading(net, cpt)).unwrap();
    let one = format!("Pr({node} = 1)");
    let zero = format!("Pr({node} = 0)");
    writeln!(out, "  {:<28} {:>14} {:>14}  comments", "condition on", one, zero).unwrap();
    for (r, row) in cpt.rows.iter().enumerate() {
        let condition = if cpt.parents.is_empty() {
            "-".to_string()
        } else {
            cpt.parents
                .iter()
                .zip(cpt.config(r))
                .map(|(&p, v)| format!("{} = {}", net.label(p), u8::from(v)))
                .collect::<Vec<_>>()
                .join(" and ")
        };
        let comment = if row.filler {
            "filler: configuration unseen in population"
        } else {
            ""
        };
        writeln!(
            out,
            "  {:<28} {:>14.6} {:>14.6}  {}",
            condition, row.p_true, row.p_false, comment
        )
        .unwrap();
    }
    out
}

pub fn all_cpts(net: &BayesNet) -> String {
    net.cpts()
        .iter()
        .map(|c| cpt_table(net, c))
        .collect::<Vec<_>>()
        .join("\n")
}

fn label_list(m: &EventFailureMatrix, events: impl Iterator<Item = nodefail::EventId>) -> String {
    let labels: Vec<String> = events.map(|e| format!("'{}'", m.event_label(e))).collect();
    format!("[{}]", labels.join(", "))
}

/// The FUNCTION CALL / OUTPUT / PREDICTION block.
pub fn query_answer(m: &EventFailureMatrix, p: &Prediction) -> String {
    let mut out = String::new();
    writeln!(out, "FUNCTION CALL:").unwrap();
    writeln!(
        out,
        "    map_query({}, evidence={})",
        label_list(m, p.query.iter().copied()),
        format_assignment(m, &p.evidence)
    )
    .unwrap();
    writeln!(out, "OUTPUT:").unwrap();
    writeln!(out, "    {}", format_assignment(m, &p.output)).unwrap();
    writeln!(out, "PREDICTION:").unwrap();
    writeln!(
        out,
        "    {} --> {}",
        format_assignment(m, &p.assignment),
        p.verdict.describe(m)
    )
    .unwrap();
    writeln!(out, "score: {:.6}", p.score).unwrap();
    out
}

/// Every query assignment with positive posterior mass, best first, each
/// with the verdict its completion would get.
pub fn posterior_table(model: &Model, evidence: &Assignment, post: &Posterior) -> String {
    let m = &model.matrix;
    let mut rows: Vec<(usize, f64)> = post
        .factor
        .values()
        .iter()
        .copied()
        .enumerate()
        .filter(|&(_, v)| v > 0.0)
        .collect();
    rows.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out = String::new();
    writeln!(out, "posterior over query (Pr(evidence) = {:.6}):", post.evidence_probability).unwrap();
    if rows.is_empty() {
        writeln!(out, "    (none: evidence has probability 0)").unwrap();
    }
    for (index, value) in rows {
        let output = post.factor.assignment_at(index);
        let full = predict::assemble(evidence, &output, m.n_events()).expect("query and evidence are disjoint");
        writeln!(
            out,
            "    {} {:.6} --> {}",
            format_assignment(m, &output),
            value,
            predict::match_failure(&full, m).describe(m)
        )
        .unwrap();
    }
    out
}

pub fn marginals_table(m: &EventFailureMatrix, marginals: &[f64]) -> String {
    let mut out = String::from("marginals Pr(E = 1 | evidence):\n");
    for (label, p) in m.event_labels().iter().zip(marginals) {
        writeln!(out, "    {label:<8} {p:.6}").unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nodefail::augment::PowerLawSpec;
    use nodefail::{parse_matrix, Structure};

    const EXAMPLE: &str = include_str!("../../../fixtures/example_matrix.csv");

    fn example_model() -> Model {
        Model::augment(
            parse_matrix(EXAMPLE).unwrap(),
            &PowerLawSpec::new(2.0, 5, 10_000).with_scale(0.7),
            &Structure::Window(2),
        )
        .unwrap()
    }

    #[test]
    fn export_round_trips_at_six_digits() {
        let model = example_model();
        let text = all_cpts(&model.net);
        let exported: Vec<(String, String)> = text
            .lines()
            .filter(|l| l.starts_with("  ") && !l.trim_start().starts_with("condition on"))
            .map(|l| {
                let nums: Vec<&str> = l
                    .split_whitespace()
                    .filter(|t| t.contains('.') && t.parse::<f64>().is_ok())
                    .collect();
                (nums[0].to_string(), nums[1].to_string())
            })
            .collect();
        let expected: Vec<(String, String)> = model
            .net
            .cpts()
            .iter()
            .flat_map(|c| c.rows.iter().map(|r| (format!("{:.6}", r.p_true), format!("{:.6}", r.p_false))))
            .collect();
        assert_eq!(exported, expected);
        assert_eq!(text.matches("filler").count(), 3);
        assert!(text.contains("E1 = 1 and E2 = 1"));
    }

    #[test]
    fn stats_show_counts() {
        let text = population_stats(&example_model());
        assert!(text.contains("7000"));
        assert!(text.contains("10244"));
        assert!(text.contains("0.924151"));
    }
}
