//! Frozen parser corpora: reason-response fixtures and clustering-output
//! fixtures, each paired with its golden structure or its exact typed error.

use failsem_core::discover::{parse_clustering_output, CandidateCluster};
use failsem_core::model::FrequencyEstimate;
use failsem_core::reason::parse_reason_response;

pub enum ReasonExpect {
    Ok { description: &'static str, reason: &'static str },
    Err { code: &'static str },
}

pub struct ReasonCase {
    pub name: &'static str,
    pub input: &'static str,
    pub expect: ReasonExpect,
}

pub fn reason_cases() -> Vec<ReasonCase> {
    use ReasonExpect::{Err, Ok};
    vec![
        ReasonCase {
            name: "clean_two_line",
            input: "trajectory: moves ahead\nfailure_reason: rear-end due to tailgating",
            expect: Ok { description: "moves ahead", reason: "rear-end due to tailgating" },
        },
        ReasonCase {
            name: "clean_blank_line_between",
            input: "trajectory: approaches intersection\n\nfailure_reason: ran the red light",
            expect: Ok { description: "approaches intersection", reason: "ran the red light" },
        },
        ReasonCase {
            name: "uppercase_keys",
            input: "TRAJECTORY: drives at night\nFAILURE_REASON: low visibility in rain",
            expect: Ok { description: "drives at night", reason: "low visibility in rain" },
        },
        ReasonCase {
            name: "mixed_case_keys",
            input: "Trajectory: slows near crosswalk\nFailure_Reason: pedestrian not yielded to",
            expect: Ok { description: "slows near crosswalk", reason: "pedestrian not yielded to" },
        },
        ReasonCase {
            name: "space_in_reason_key",
            input: "trajectory: merges left\nfailure reason: cut-in by a truck",
            expect: Ok { description: "merges left", reason: "cut-in by a truck" },
        },
        ReasonCase {
            name: "extra_whitespace",
            input: "trajectory:    follows a van   \nfailure_reason:   tailgating   ",
            expect: Ok { description: "follows a van", reason: "tailgating" },
        },
        ReasonCase {
            name: "bold_keys",
            input: "**trajectory:** the car drives uphill\n**failure_reason:** glare from the sun",
            expect: Ok { description: "the car drives uphill", reason: "glare from the sun" },
        },
        ReasonCase {
            name: "bold_keys_closing_after_colon",
            input: "**Trajectory**: cruises on a highway\n**failure_reason:** sun glare obscured lead vehicle",
            expect: Ok { description: "cruises on a highway", reason: "sun glare obscured lead vehicle" },
        },
        ReasonCase {
            name: "bulleted_keys",
            input: "- trajectory: enters a roundabout\n- failure_reason: failed to yield",
            expect: Ok { description: "enters a roundabout", reason: "failed to yield" },
        },
        ReasonCase {
            name: "numbered_keys",
            input: "1. trajectory: reverses out of a driveway\n2. failure_reason: crossing cyclist not seen",
            expect: Ok { description: "reverses out of a driveway", reason: "crossing cyclist not seen" },
        },
        ReasonCase {
            name: "preamble_before_keys",
            input: "Sure, here is the analysis you asked for.\n\ntrajectory: drifts right\nfailure_reason: lane departure",
            expect: Ok { description: "drifts right", reason: "lane departure" },
        },
        ReasonCase {
            name: "fenced_response",
            input: "```\ntrajectory: passes a parked car\nfailure_reason: door opened suddenly\n```",
            expect: Ok { description: "passes a parked car", reason: "door opened suddenly" },
        },
        ReasonCase {
            name: "multiline_description",
            input: "trajectory: the robot crosses a hallway\nthen turns toward an office door\nfailure_reason: clipped the door frame",
            expect: Ok {
                description: "the robot crosses a hallway\nthen turns toward an office door",
                reason: "clipped the door frame",
            },
        },
        ReasonCase {
            name: "multiline_reason_to_end",
            input: "trajectory: follows the corridor\nfailure_reason: thin chair legs\nwere invisible against the floor",
            expect: Ok {
                description: "follows the corridor",
                reason: "thin chair legs\nwere invisible against the floor",
            },
        },
        ReasonCase {
            name: "reason_before_trajectory",
            input: "failure_reason: wheel caught a cable\ntrajectory: crosses the lab",
            expect: Ok { description: "crosses the lab", reason: "wheel caught a cable" },
        },
        ReasonCase {
            name: "reason_only_warns_but_parses",
            input: "failure_reason: backed into a shelf",
            expect: Ok { description: "", reason: "backed into a shelf" },
        },
        ReasonCase {
            name: "repeated_keys_keep_first",
            input: "trajectory: first description\nfailure_reason: first reason\ntrajectory: second description",
            expect: Ok { description: "first description", reason: "first reason" },
        },
        ReasonCase {
            name: "colon_inside_reason_value",
            input: "trajectory: moves forward\nfailure_reason: collision type: rear-end",
            expect: Ok { description: "moves forward", reason: "collision type: rear-end" },
        },
        ReasonCase {
            name: "no_keys_at_all",
            input: "The car crashed.",
            expect: Err { code: "REASON_PARSE" },
        },
        ReasonCase {
            name: "only_trajectory_key",
            input: "trajectory: goes straight and stops",
            expect: Err { code: "REASON_PARSE" },
        },
        ReasonCase {
            name: "empty_reason_value",
            input: "trajectory: x\nfailure_reason:",
            expect: Err { code: "REASON_EMPTY" },
        },
        ReasonCase {
            name: "whitespace_reason_value",
            input: "trajectory: x\nfailure_reason:    \n",
            expect: Err { code: "REASON_EMPTY" },
        },
        ReasonCase {
            name: "empty_input",
            input: "",
            expect: Err { code: "REASON_PARSE" },
        },
        ReasonCase {
            name: "prose_mentioning_the_phrase",
            input: "The failure reason here is unclear to me.",
            expect: Err { code: "REASON_PARSE" },
        },
    ]
}

pub fn check_reason_corpus() -> usize {
    let cases = reason_cases();
    for case in &cases {
        let result = parse_reason_response(case.input);
        match (&case.expect, result) {
            (ReasonExpect::Ok { description, reason }, Ok(parsed)) => {
                assert_eq!(parsed.trajectory_description, *description, "case {}", case.name);
                assert_eq!(parsed.failure_reason, *reason, "case {}", case.name);
            }
            (ReasonExpect::Err { code }, Err(err)) => {
                assert_eq!(err.code(), *code, "case {}", case.name);
            }
            (ReasonExpect::Ok { .. }, Err(err)) => {
                panic!("case {}: expected parse, got {err}", case.name)
            }
            (ReasonExpect::Err { code }, Ok(parsed)) => {
                panic!("case {}: expected {code}, got {parsed:?}", case.name)
            }
        }
    }
    cases.len()
}

pub enum ClusteringExpect {
    Ok(Vec<CandidateCluster>),
    Err { code: &'static str },
}

pub struct ClusteringCase {
    pub name: &'static str,
    pub input: &'static str,
    pub expect: ClusteringExpect,
}

fn cluster(
    name: &str,
    keywords: &[&str],
    frequency: FrequencyEstimate,
    description: Option<&str>,
) -> CandidateCluster {
    CandidateCluster {
        name: name.into(),
        keywords: keywords.iter().map(|k| k.to_string()).collect(),
        frequency,
        description: description.map(|d| d.to_string()),
        failure_modes: None,
    }
}

fn pct(value: f64) -> FrequencyEstimate {
    FrequencyEstimate::PercentPoint { value }
}

fn range(lo: f64, hi: f64) -> FrequencyEstimate {
    FrequencyEstimate::PercentRange { lo, hi }
}

fn count(value: u64) -> FrequencyEstimate {
    FrequencyEstimate::Count { value }
}

pub fn clustering_cases() -> Vec<ClusteringCase> {
    use ClusteringExpect::{Err, Ok};
    vec![
        ClusteringCase {
            name: "array_plain",
            input: r#"[{"cluster_name":"Rear-End","keywords":["tailgating"],"frequency":"35%"}]"#,
            expect: Ok(vec![cluster("Rear-End", &["tailgating"], pct(35.0), None)]),
        },
        ClusteringCase {
            name: "array_fenced_with_prose",
            input: "Here you go.\n```json\n[{\"name\":\"Walls\",\"keywords\":[\"wall\",\"cabinet\"],\"frequency\":\"20-25%\"}]\n```\nDone.",
            expect: Ok(vec![cluster("Walls", &["wall", "cabinet"], range(20.0, 25.0), None)]),
        },
        ClusteringCase {
            name: "array_terms_and_count_keys",
            input: r#"[{"name":"Chairs","terms":["chair","legs"],"count":12,"description":"thin chair legs"}]"#,
            expect: Ok(vec![cluster("Chairs", &["chair", "legs"], count(12), Some("thin chair legs"))]),
        },
        ClusteringCase {
            name: "array_numeric_and_range_frequencies",
            input: r#"[{"cluster_name":"Glare","keywords":["sun"],"frequency":7},{"cluster_name":"Rare","keywords":["edge"],"frequency":"<2%"}]"#,
            expect: Ok(vec![
                cluster("Glare", &["sun"], count(7), None),
                cluster("Rare", &["edge"], range(0.0, 2.0), None),
            ]),
        },
        ClusteringCase {
            name: "array_en_dash_range",
            input: "[{\"cluster_name\":\"Thin Objects\",\"keywords\":[\"chair legs\"],\"frequency\":\"40\u{2013}45%\"}]",
            expect: Ok(vec![cluster("Thin Objects", &["chair legs"], range(40.0, 45.0), None)]),
        },
        ClusteringCase {
            name: "object_with_assignments_dropped",
            input: r#"{"clusters":[{"name":"Walls","keywords":["wall"],"frequency":"60%"}],"assignments":{"t0":"Walls","t1":"Walls"}}"#,
            expect: Ok(vec![cluster("Walls", &["wall"], pct(60.0), None)]),
        },
        ClusteringCase {
            name: "object_clusters_only",
            input: r#"{"clusters":[{"cluster_name":"Bins","keywords":["trash bin","recycling"],"frequency":"5-7%"}]}"#,
            expect: Ok(vec![cluster("Bins", &["trash bin", "recycling"], range(5.0, 7.0), None)]),
        },
        ClusteringCase {
            name: "object_keyword_string_split",
            input: r#"{"clusters":[{"name":"Corners","keywords":"door frame, wall corner","count":9}]}"#,
            expect: Ok(vec![cluster("Corners", &["door frame", "wall corner"], count(9), None)]),
        },
        ClusteringCase {
            name: "markdown_table_basic",
            input: "| Cluster Name | Keywords | Examples | Frequency |\n|---|---|---|---|\n| Glare | glare, sun | car hidden by glare | 7% |",
            expect: Ok(vec![cluster("Glare", &["glare", "sun"], pct(7.0), None)]),
        },
        ClusteringCase {
            name: "markdown_table_multiple_rows_and_prose",
            input: "The results:\n\n| Cluster Name | Keywords | Examples | Frequency |\n| --- | --- | --- | --- |\n| Rear-End | tailgating | ... | 35% |\n| Cut-In | lane change, merge | ... | 18% |\n\nLet me know if you need more.",
            expect: Ok(vec![
                cluster("Rear-End", &["tailgating"], pct(35.0), None),
                cluster("Cut-In", &["lane change", "merge"], pct(18.0), None),
            ]),
        },
        ClusteringCase {
            name: "markdown_table_count_column",
            input: "| Cluster Name | Keywords | Count |\n|---|---|---|\n| Boxes | cart, server | 14 |",
            expect: Ok(vec![cluster("Boxes", &["cart", "server"], count(14), None)]),
        },
        ClusteringCase {
            name: "nameless_cluster_dropped_others_kept",
            input: r#"[{"keywords":["lost"],"frequency":"9%"},{"cluster_name":"Kept","keywords":["kept"],"frequency":"91%"}]"#,
            expect: Ok(vec![cluster("Kept", &["kept"], pct(91.0), None)]),
        },
        ClusteringCase {
            name: "prose_only",
            input: "I could not find any clusters in this data.",
            expect: Err { code: "CLUSTERING_PARSE" },
        },
        ClusteringCase {
            name: "empty_array",
            input: "[]",
            expect: Err { code: "CLUSTERING_PARSE" },
        },
        ClusteringCase {
            name: "empty_clusters_object",
            input: r#"{"clusters":[]}"#,
            expect: Err { code: "CLUSTERING_PARSE" },
        },
    ]
}

pub fn check_clustering_corpus() -> usize {
    let cases = clustering_cases();
    for case in &cases {
        let result = parse_clustering_output(case.input);
        match (&case.expect, result) {
            (ClusteringExpect::Ok(golden), Ok(parsed)) => {
                assert_eq!(&parsed.clusters, golden, "case {}", case.name);
            }
            (ClusteringExpect::Err { code }, Err(err)) => {
                assert_eq!(err.code(), *code, "case {}", case.name);
            }
            (ClusteringExpect::Ok(_), Err(err)) => {
                panic!("case {}: expected parse, got {err}", case.name)
            }
            (ClusteringExpect::Err { code }, Ok(parsed)) => {
                panic!("case {}: expected {code}, got {:?}", case.name, parsed.clusters)
            }
        }
    }
    cases.len()
}
