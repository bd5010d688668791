//! Property checks shared by the proptest suite and the acceptance target.
//! Each returns a short summary on success or the first counterexample.

use std::collections::{BTreeMap, BTreeSet};

use mailform::eval::{cost_model, score_plan, CostParams, FieldOutcome, GoldKey};
use mailform::form::{fill_form, generate_test_form, read_back, FieldKind, FieldSpec, FormField, FormSchema};
use mailform::ingest::{parse_inbound, Attachment, AttachmentKind, InboundRequest, MediaType};
use mailform::plan::{build_prompt, CompletionPlan, PlanValue};
use mailform::reply::{compose_reply, thread_id, DEFAULT_FROM};
use mailform::form::FilledForm;
use mailform::util::sha256_hex;
use proptest::prelude::*;
use proptest::test_runner::{Config as RunnerConfig, TestCaseError, TestRunner};

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(RunnerConfig { cases, failure_persistence: None, ..RunnerConfig::default() })
}

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

// ---- (a) scoring against an independent per-field classifier ----

fn oracle(observed: &str, gold: Option<&str>) -> FieldOutcome {
    let o = observed.trim().to_lowercase();
    if o.is_empty() {
        FieldOutcome::Blank
    } else if gold.is_some_and(|g| g.trim().to_lowercase() == o) {
        FieldOutcome::Correct
    } else {
        FieldOutcome::Incorrect
    }
}

/// Every schema of 1..=4 text fields, every gold marking, every observed
/// assignment over {empty, gold value, "WRONG"}. Returns assignments checked.
pub fn scoring_brute_force() -> Result<usize, String> {
    let mut checked = 0;
    for n in 1..=4usize {
        let schema = FormSchema {
            form_digest: String::new(),
            fields: (0..n).map(|i| FormField::new(&format!("f{i}"), FieldKind::Text { max_len: None }, 1)).collect(),
        };
        for gold_mask in 0..(1u32 << n) {
            let gold_values: Vec<Option<String>> =
                (0..n).map(|i| (gold_mask >> i & 1 == 1).then(|| format!("Value {i}"))).collect();
            let gold = GoldKey::from_options(
                gold_values.iter().enumerate().map(|(i, v)| (format!("f{i}"), v.clone())).collect(),
            );
            for assignment in 0..3usize.pow(n as u32) {
                let mut observed = BTreeMap::new();
                let mut code = assignment;
                for (i, g) in gold_values.iter().enumerate() {
                    let value = match code % 3 {
                        0 => String::new(),
                        1 => g.clone().unwrap_or_default(),
                        _ => "WRONG".to_string(),
                    };
                    code /= 3;
                    observed.insert(format!("f{i}"), value);
                }
                let report = score_plan(&observed, &gold, &schema).map_err(|e| e.to_string())?;
                let mut counts = (0, 0, 0);
                for (i, g) in gold_values.iter().enumerate() {
                    let name = format!("f{i}");
                    let want = oracle(&observed[&name], g.as_deref());
                    if report.per_field[&name] != want {
                        return Err(format!("field {name}: got {:?}, oracle {want:?} ({observed:?})", report.per_field[&name]));
                    }
                    match want {
                        FieldOutcome::Correct => counts.0 += 1,
                        FieldOutcome::Incorrect => counts.1 += 1,
                        FieldOutcome::Blank => counts.2 += 1,
                    }
                }
                if report.counts() != counts || report.total != n {
                    return Err(format!("counts {:?} vs oracle {counts:?}", report.counts()));
                }
                checked += 1;
            }
        }
    }
    Ok(checked)
}

// ---- (b) fill / read_back round trip ----

#[derive(Debug, Clone)]
pub struct FormCase {
    pub specs: Vec<FieldSpec>,
    pub values: Vec<Option<String>>,
}

fn kind_strategy() -> impl Strategy<Value = FieldKind> {
    prop_oneof![
        3 => proptest::option::of(1u32..24).prop_map(|max_len| FieldKind::Text { max_len }),
        1 => Just(FieldKind::Checkbox),
        1 => proptest::collection::btree_set("[A-Z][a-z]{1,8}( [a-z]{1,5})?", 1..5)
            .prop_map(|set| FieldKind::Choice { options: set.into_iter().collect() }),
    ]
}

fn text_value() -> impl Strategy<Value = String> {
    prop_oneof![
        4 => "[A-Za-z0-9ÑñÁáÉéÍíÓóÚúü/@.,-][A-Za-z0-9ÑñÁáÉéÍíÓóÚúü/@., -]{0,30}",
        1 => "[日本語кириллица€]{1,6}",
    ]
}

fn value_for(kind: &FieldKind) -> BoxedStrategy<Option<String>> {
    let some = match kind {
        FieldKind::Text { .. } => text_value().boxed(),
        FieldKind::Checkbox => prop_oneof![Just("true"), Just("sí"), Just("X"), Just("yes"), Just("no"), Just("false")]
            .prop_map(str::to_string)
            .boxed(),
        FieldKind::Choice { options } => (proptest::sample::select(options.clone()), any::<bool>())
            .prop_map(|(o, upper)| if upper { o.to_uppercase() } else { o })
            .boxed(),
    };
    proptest::option::weighted(0.75, some).boxed()
}

pub fn form_case() -> impl Strategy<Value = FormCase> {
    proptest::collection::vec(("[a-z]{1,10}( [a-z]{1,8})?", kind_strategy()), 1..30)
        .prop_map(|fields| {
            let mut seen = BTreeSet::new();
            fields
                .into_iter()
                .enumerate()
                .filter_map(|(i, (name, kind))| {
                    let name = format!("{name} {i}");
                    seen.insert(name.clone()).then(|| FieldSpec::new(&name, kind))
                })
                .collect::<Vec<_>>()
        })
        .prop_flat_map(|specs| {
            let values: Vec<_> = specs.iter().map(|s| value_for(&s.kind)).collect();
            (Just(specs), values)
        })
        .prop_map(|(specs, values)| FormCase { specs, values })
}

/// What read_back must return for one planned value.
fn expected_read(kind: &FieldKind, value: Option<&str>) -> String {
    match (kind, value) {
        (_, None) => String::new(),
        (FieldKind::Text { max_len: Some(n) }, Some(v)) => v.chars().take(*n as usize).collect(),
        (FieldKind::Text { max_len: None }, Some(v)) => v.to_string(),
        (FieldKind::Checkbox, Some(v)) => {
            if ["true", "sí", "x", "yes", "1"].contains(&v.trim().to_lowercase().as_str()) { "true".into() } else { String::new() }
        }
        (FieldKind::Choice { options }, Some(v)) => {
            options.iter().find(|o| o.to_lowercase() == v.to_lowercase()).cloned().unwrap_or_default()
        }
    }
}

pub fn check_fill_case(case: &FormCase) -> Result<(), TestCaseError> {
    let pdf = generate_test_form(&case.specs).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let plan = CompletionPlan {
        entries: case
            .specs
            .iter()
            .zip(&case.values)
            .map(|(s, v)| {
                (s.name.clone(), v.clone().map_or(PlanValue::IntentionalBlank, PlanValue::Value))
            })
            .collect(),
        warnings: vec![],
        model_name: "prop".into(),
        elapsed_s: 0.0,
    };
    let filled = fill_form(&pdf, &plan).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let read = read_back(&filled.bytes).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert_eq!(read.len(), case.specs.len());
    for (spec, value) in case.specs.iter().zip(&case.values) {
        let want = expected_read(&spec.kind, value.as_deref());
        prop_assert_eq!(&read[&spec.name], &want, "field {:?} planned {:?}", spec.name, value);
        if let Some(applied) = filled.applied.get(&spec.name) {
            prop_assert_eq!(applied, &want);
        }
    }
    Ok(())
}

pub fn fill_round_trip(cases: u32) -> Result<(), String> {
    run(cases, form_case(), |case| check_fill_case(&case))
}

// ---- (c) prompt determinism ----

pub fn prompt_determinism(cases: u32) -> Result<(), String> {
    let strategy = (
        proptest::collection::vec(("[A-Za-zñ ]{1,12}", kind_strategy()), 1..12),
        "\\PC{0,200}",
        "\\PC{0,400}",
    );
    run(cases, strategy, |(fields, instruction, context)| {
        let mut seen = BTreeSet::new();
        let schema = FormSchema {
            form_digest: "d".into(),
            fields: fields
                .into_iter()
                .enumerate()
                .map(|(i, (n, k))| FormField::new(&format!("{n}{i}"), k, 1))
                .filter(|f| seen.insert(f.name.clone()))
                .collect(),
        };
        let a = build_prompt(&instruction, &schema, &context).unwrap();
        let b = build_prompt(&instruction, &schema.clone(), &context.clone()).unwrap();
        prop_assert_eq!(a.system_text.as_bytes(), b.system_text.as_bytes());
        prop_assert_eq!(a.user_text.as_bytes(), b.user_text.as_bytes());
        prop_assert_eq!(&a.schema_digest, &b.schema_digest);
        Ok(())
    })
}

// ---- (d) cost identities and monotonicity ----

pub fn cost_params() -> impl Strategy<Value = CostParams> {
    (10_000.0..200_000.0f64, 10.0..60.0f64, 30.0..52.0f64, 1.0..120.0f64, 0.0..60.0f64, 0.0..5.0f64).prop_map(
        |(s, h, w, m, sup, c)| CostParams {
            annual_salary_eur: s,
            hours_per_week: h,
            weeks_per_year: w,
            manual_minutes: m,
            supervision_minutes: sup,
            cloud_cost_eur: c,
        },
    )
}

pub fn cost_identities(cases: u32) -> Result<(), String> {
    run(cases, (cost_params(), 0.01..30.0f64, 0.001..2.0f64), |(p, d_sup, d_cloud)| {
        let r = cost_model(&p).unwrap();
        prop_assert_eq!(r.savings_eur, r.manual_cost_eur - r.system_cost_eur);
        let tol = 4.0 * f64::EPSILON * r.manual_cost_eur.abs().max(r.system_cost_eur.abs());
        prop_assert!((r.savings_eur + r.system_cost_eur - r.manual_cost_eur).abs() <= tol);
        prop_assert_eq!(r.savings_pct, r.savings_eur / r.manual_cost_eur);
        let wage = p.annual_salary_eur / (p.hours_per_week * p.weeks_per_year);
        prop_assert!((r.hourly_wage_eur - wage).abs() <= 1e-12 * wage);

        let more_sup = cost_model(&CostParams { supervision_minutes: p.supervision_minutes + d_sup, ..p }).unwrap();
        prop_assert!(more_sup.system_cost_eur > r.system_cost_eur);
        prop_assert!(more_sup.savings_eur < r.savings_eur);
        prop_assert_eq!(more_sup.manual_cost_eur, r.manual_cost_eur);
        let more_cloud = cost_model(&CostParams { cloud_cost_eur: p.cloud_cost_eur + d_cloud, ..p }).unwrap();
        prop_assert!(more_cloud.system_cost_eur > r.system_cost_eur);
        prop_assert!(more_cloud.savings_eur < r.savings_eur);
        let more_manual = cost_model(&CostParams { manual_minutes: p.manual_minutes + d_sup, ..p }).unwrap();
        prop_assert!(more_manual.manual_cost_eur > r.manual_cost_eur);
        prop_assert!(more_manual.savings_eur > r.savings_eur);
        Ok(())
    })
}

// ---- (e) MIME round trip ----

pub fn mime_round_trip(cases: u32) -> Result<(), String> {
    let strategy = (
        proptest::collection::vec(any::<u8>(), 0..20_000),
        "\\PC{0,60}",
        "[a-z0-9]{1,12}@[a-z]{1,8}\\.(es|org)",
        "[a-z0-9.-]{1,20}",
    );
    run(cases, strategy, |(payload, subject, sender, local)| {
        let message_id = format!("{local}@example.org");
        let request = InboundRequest {
            message_id: message_id.clone(),
            message_id_synthesized: false,
            sender,
            subject: subject.clone(),
            instruction_text: String::new(),
            attachments: vec![Attachment {
                filename: "solicitud.pdf".into(),
                media_type: MediaType::Pdf,
                bytes: Vec::new(),
                kind: AttachmentKind::TargetForm,
            }],
            received_at: chrono::Utc::now(),
            warnings: vec![],
            no_target_form: false,
        };
        let filled = FilledForm { bytes: payload.clone(), applied: BTreeMap::new(), skipped: BTreeMap::new(), notes: BTreeMap::new() };
        let plan = CompletionPlan { entries: BTreeMap::new(), warnings: vec![], model_name: "m".into(), elapsed_s: 0.0 };
        let reply = compose_reply(&request, &filled, &plan, DEFAULT_FROM).unwrap();
        let parsed = parse_inbound(&reply.bytes).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(parsed.attachments.len(), 1);
        prop_assert_eq!(sha256_hex(&parsed.attachments[0].bytes), sha256_hex(&payload));
        prop_assert_eq!(thread_id(&reply.bytes), Some(message_id));
        // header whitespace is not significant
        let squash = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
        prop_assert_eq!(squash(&parsed.subject), squash(&format!("Re: {subject}")));
        Ok(())
    })
}
