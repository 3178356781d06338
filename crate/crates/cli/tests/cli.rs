use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;
use tempfile::TempDir;

const ESH: &str = env!("CARGO_BIN_EXE_esh");

const FIG1: &str = r#"{"source":"A job is performed by him .","hypothesis":"The work was performed by him .","edits":[{"start":0,"end":1,"replacement":"The","type":"R:DET"},{"start":1,"end":2,"replacement":"work","type":"R:NOUN"},{"start":2,"end":3,"replacement":"was","type":"R:VERB:TENSE"}]}"#;
const FIG1_BONUS: &str = r#"{"source":"A job is performed by him .","edits":[{"start":0,"end":1,"replacement":"The","bonus":0.2},{"start":1,"end":2,"replacement":"work","bonus":0.1},{"start":2,"end":3,"replacement":"was","bonus":-0.35}]}"#;

struct Work {
    dir: TempDir,
}

impl Work {
    fn new() -> Self {
        Work {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn file(&self, name: &str, content: &str) -> PathBuf {
        let p = self.dir.path().join(name);
        fs::write(&p, content).unwrap();
        p
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn esh(args: &[&str]) -> Output {
    Command::new(ESH)
        .args(args)
        .env_remove("ESH_SCORER")
        .env_remove("ESH_METHOD")
        .env_remove("ESH_SEED")
        .env_remove("ESH_T")
        .output()
        .unwrap()
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "esh failed: {}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn records(text: &str) -> Vec<Value> {
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn phis(rec: &Value) -> Vec<f64> {
    rec["edits"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["phi"].as_f64().unwrap())
        .collect()
}

/// A few sentences with typed edits of different lengths.
fn corpus() -> String {
    [
        FIG1,
        r#"{"source":"he go to school","hypothesis":"He goes to the school","edits":[{"start":0,"end":1,"replacement":"He","type":"R:ORTH"},{"start":1,"end":2,"replacement":"goes","type":"R:VERB:SVA"},{"start":3,"end":3,"replacement":"the","type":"M:DET"}]}"#,
        r#"{"source":"I like like it very much .","hypothesis":"I like it much .","edits":[{"start":1,"end":2,"replacement":"","type":"U:VERB"},{"start":4,"end":5,"replacement":"","type":"U:ADV"}]}"#,
        r#"{"source":"Fine as is .","hypothesis":"Fine as is ."}"#,
    ]
    .join("\n")
        + "\n"
}

#[test]
fn fig1_additive_attribution() {
    let w = Work::new();
    let input = w.file("in.jsonl", &format!("{FIG1}\n"));
    let bonus = w.file("bonus.jsonl", &format!("{FIG1_BONUS}\n"));
    let out = ok(esh(&[
        "attribute",
        "--input",
        s(&input),
        "--scorer",
        &format!("additive:{}", s(&bonus)),
    ]));
    let recs = records(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(recs.len(), 1);
    let r = &recs[0];
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["method"], "shapley");
    assert!((r["delta_m"].as_f64().unwrap() + 0.05).abs() < 1e-12);
    for (got, want) in phis(r).iter().zip([0.2, 0.1, -0.35]) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
    assert_eq!(r["scorer_calls"], 8);
    assert!(r["edits"][0].get("phi_norm").is_none());
    assert_eq!(r["edits"][0]["span"], serde_json::json!([0, 1]));
    assert_eq!(r["edits"][2]["type"], "R:VERB:TENSE");
}

#[test]
fn zero_edit_sentence() {
    let w = Work::new();
    let input = w.file(
        "in.jsonl",
        "{\"source\":\"Fine as is .\",\"hypothesis\":\"Fine as is .\"}\n",
    );
    for method in ["shapley", "sampling", "add", "sub"] {
        let out = ok(esh(&[
            "attribute",
            "--input",
            s(&input),
            "--scorer",
            "stub",
            "--method",
            method,
        ]));
        let r = &records(&String::from_utf8(out.stdout).unwrap())[0];
        assert_eq!(r["edits"].as_array().unwrap().len(), 0);
        assert_eq!(r["delta_m"].as_f64(), Some(0.0));
    }
}

#[test]
fn sampling_runs_are_byte_identical() {
    let w = Work::new();
    let input = w.file("in.jsonl", &corpus());
    let run = |jobs: &str, name: &str| {
        let path = w.path(name);
        ok(esh(&[
            "attribute",
            "--input",
            s(&input),
            "--scorer",
            "stub:1.5,2",
            "--method",
            "sampling",
            "--t",
            "64",
            "--seed",
            "7",
            "--omit-timing",
            "--normalize",
            "--jobs",
            jobs,
            "-o",
            s(&path),
        ]));
        fs::read(path).unwrap()
    };
    let a = run("1", "a.jsonl");
    let b = run("1", "b.jsonl");
    let c = run("4", "c.jsonl");
    assert_eq!(a, b);
    assert_eq!(a, c);
    let recs = records(std::str::from_utf8(&a).unwrap());
    assert_eq!(recs[0]["seed"], 7);
    // three edits have only 3! orderings
    assert_eq!(recs[0]["t"], 6);
    assert_eq!(recs[0]["t_capped"], true);
}

#[test]
fn exit_codes() {
    let w = Work::new();
    let input = w.file("in.jsonl", &corpus());
    let code = |out: Output| out.status.code().unwrap();

    assert_eq!(
        code(esh(&[
            "attribute",
            "--input",
            s(&w.path("missing.jsonl")),
            "--scorer",
            "stub"
        ])),
        1
    );
    let bad = w.file(
        "bad.jsonl",
        "{\"source\":\"a b\",\"hypothesis\":\"a c\",\"edits\":[{\"start\":0,\"end\":9,\"replacement\":\"x\"}]}\n",
    );
    assert_eq!(code(esh(&["attribute", "--input", s(&bad), "--scorer", "stub"])), 1);
    assert_eq!(
        code(esh(&["attribute", "--input", s(&input), "--scorer", "nonsense:1"])),
        2
    );
    assert_eq!(
        code(esh(&["attribute", "--input", s(&input), "--scorer", "external:exit 0"])),
        2
    );
    assert_eq!(
        code(esh(&[
            "attribute",
            "--input",
            s(&input),
            "--scorer",
            "stub",
            "--max-edits",
            "2"
        ])),
        3
    );
    assert_eq!(code(esh(&["attribute", "--bogus-flag"])), 1);

    // additive oracle cannot score sentences it was not given
    let bonus = w.file("bonus.jsonl", &format!("{FIG1_BONUS}\n"));
    assert_eq!(
        code(esh(&[
            "attribute",
            "--input",
            s(&input),
            "--scorer",
            &format!("additive:{}", s(&bonus))
        ])),
        2
    );

    let out = ok(esh(&[
        "attribute",
        "--input",
        s(&input),
        "--scorer",
        "stub",
        "--max-edits",
        "2",
        "--auto-sampling",
        "--omit-timing",
    ]));
    let methods: Vec<String> = records(&String::from_utf8(out.stdout).unwrap())
        .iter()
        .map(|r| r["method"].as_str().unwrap().to_owned())
        .collect();
    assert_eq!(methods, ["shapley_sampling", "shapley_sampling", "shapley", "shapley"]);
}

#[test]
fn env_vars_fill_in_missing_flags() {
    let w = Work::new();
    let input = w.file("in.jsonl", &format!("{FIG1}\n"));
    let run = |extra: &[&str]| {
        let out = Command::new(ESH)
            .args(["attribute", "--input", s(&input), "--omit-timing"])
            .args(extra)
            .env("ESH_SCORER", "stub:2")
            .env("ESH_METHOD", "add")
            .output()
            .unwrap();
        records(&String::from_utf8(ok(out).stdout).unwrap()).remove(0)
    };
    let from_env = run(&[]);
    assert_eq!(from_env["method"], "add");
    // replacing one token by one changes no lengths
    assert_eq!(phis(&from_env), vec![0.0; 3]);
    let flagged = run(&["--method", "sub", "--scorer", "stub:1,5"]);
    assert_eq!(flagged["method"], "sub");
}

#[test]
fn bridge_scoring_matches_in_process() {
    let w = Work::new();
    let input = w.file("in.jsonl", &corpus());
    let attribute = |scorer: &str| {
        let out = ok(esh(&[
            "attribute",
            "--input",
            s(&input),
            "--scorer",
            scorer,
            "--omit-timing",
        ]));
        records(&String::from_utf8(out.stdout).unwrap())
    };
    let local = attribute("stub:0.5,3");
    let bridged = attribute(&format!("external:{ESH} serve --scorer stub:0.5,3"));
    assert_eq!(local.len(), bridged.len());
    for (l, b) in local.iter().zip(&bridged) {
        for (x, y) in phis(l).iter().zip(phis(b)) {
            assert!((x - y).abs() < 1e-9);
        }
    }
    // the length game is additive: each edit earns slope * (its length change)
    let second = phis(&bridged[1]);
    assert_eq!(second, vec![0.0, 0.0, 0.5]);
    let third = phis(&bridged[2]);
    assert_eq!(third, vec![-0.5, -0.5]);
}

#[test]
fn tcp_bridge() {
    let w = Work::new();
    let input = w.file("in.jsonl", &corpus());
    let mut server = Command::new(ESH)
        .args(["serve", "--scorer", "stub:1", "--listen", "127.0.0.1:0"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(server.stderr.as_mut().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line.trim().strip_prefix("listening on ").unwrap().to_owned();
    let out = esh(&[
        "attribute",
        "--input",
        s(&input),
        "--scorer",
        &format!("external:{addr}"),
        "--omit-timing",
    ]);
    server.kill().unwrap();
    let _ = server.wait();
    let recs = records(&String::from_utf8(ok(out).stdout).unwrap());
    assert_eq!(phis(&recs[1]), vec![0.0, 0.0, 1.0]);
}

#[test]
fn stdio_serve_protocol() {
    let mut child = Command::new(ESH)
        .args(["serve", "--scorer", "stub:2"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    {
        use std::io::Write;
        let stdin = child.stdin.as_mut().unwrap();
        stdin
            .write_all(
                b"{\"id\":42,\"pairs\":[{\"src\":\"a b\",\"hyp\":\"a b c\"},{\"src\":\"a\",\"hyp\":\"\"}]}\nnot json\n",
            )
            .unwrap();
    }
    drop(child.stdin.take());
    let out = child.wait_with_output().unwrap();
    let lines: Vec<Value> = records(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(lines[0], serde_json::json!({"id": 42, "scores": [6.0, 0.0]}));
    assert_eq!(lines[1]["id"], -1);
    assert!(lines[1]["error"].is_string());
}

#[test]
fn agreement_with_hypothesis_as_reference() {
    let w = Work::new();
    let input = w.file("in.jsonl", &corpus());
    let lm = train_lm(&w);
    let scorer = format!("ngram:{}", s(&lm));
    // agreement re-diffs each hypothesis, which is what attribute does for
    // lines without explicit edits
    let bare: String = corpus()
        .lines()
        .map(|l| {
            let v: Value = serde_json::from_str(l).unwrap();
            serde_json::json!({"source": v["source"], "hypothesis": v["hypothesis"]}).to_string() + "\n"
        })
        .collect();
    let bare = w.file("bare.jsonl", &bare);
    let attributed = ok(esh(&[
        "attribute",
        "--input",
        s(&bare),
        "--scorer",
        &scorer,
        "--omit-timing",
    ]));
    let recs = records(&String::from_utf8(attributed.stdout).unwrap());
    // positive share of non-zero attributions among sentences with two or more edits
    let eligible: Vec<f64> = recs
        .iter()
        .map(phis)
        .filter(|p| p.len() >= 2)
        .flatten()
        .filter(|v| *v != 0.0)
        .collect();
    let expected = eligible.iter().filter(|v| **v > 0.0).count() as f64 / eligible.len() as f64;

    let hyps: String = corpus()
        .lines()
        .map(|l| {
            serde_json::from_str::<Value>(l).unwrap()["hypothesis"]
                .as_str()
                .unwrap()
                .to_owned()
                + "\n"
        })
        .collect();
    let refs = w.file("refs.txt", &hyps);
    let report = w.path("agreement.json");
    let csv = w.path("agreement.csv");
    ok(esh(&[
        "agreement",
        "--input",
        s(&input),
        "--scorer",
        &scorer,
        "--references",
        s(&refs),
        "--report",
        s(&report),
        "--csv",
        s(&csv),
    ]));
    let rep: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(rep["schema_version"], 1);
    assert_eq!(rep["command"], "agreement");
    assert_eq!(rep["config"]["scoring"]["scorer"], scorer.as_str());
    assert!((rep["accuracy"].as_f64().unwrap() - expected).abs() < 1e-12);
    let csv = fs::read_to_string(csv).unwrap();
    assert_eq!(csv.lines().count(), 11);
    let last = csv.lines().last().unwrap();
    assert!(last.starts_with("1.0,"));
    assert!(last.ends_with(&format!(",{}", eligible.len())));
}

fn train_lm(w: &Work) -> PathBuf {
    let corpus = w.file(
        "corpus.txt",
        "The work was performed by him .\nHe goes to the school .\nI like it much .\nThe school is fine .\nHe likes the work .\n",
    );
    let lm = w.path("lm.json");
    ok(esh(&[
        "train-lm",
        "--corpus",
        s(&corpus),
        "--order",
        "2",
        "--alpha",
        "0.5",
        "-o",
        s(&lm),
    ]));
    lm
}

#[test]
fn consistency_on_length_scorer_is_exact() {
    let w = Work::new();
    let input = w.file("in.jsonl", &corpus());
    let report = w.path("c.json");
    let out = ok(esh(&[
        "consistency",
        "--input",
        s(&input),
        "--scorer",
        "stub",
        "--report",
        s(&report),
    ]));
    let rep: Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    let r = &rep["report"];
    // only the third sentence has non-zero edits of one sign, so it is skipped;
    // the second mixes zero and positive
    assert_eq!(r["skipped"]["fewer_than_two_edits"], 1);
    for rec in r["records"].as_array().unwrap() {
        let p = rec["predicted_group_scores"].as_array().unwrap();
        let o = rec["observed_group_scores"].as_array().unwrap();
        for (a, b) in p.iter().zip(o) {
            assert!((a.as_f64().unwrap() - b.as_f64().unwrap()).abs() < 1e-12);
        }
    }
    assert!(String::from_utf8(out.stdout).unwrap().contains("sign agreement"));
}

#[test]
fn precision_on_all_positive_corpus() {
    let w = Work::new();
    let input = w.file(
        "in.jsonl",
        &[
            r#"{"source":"a b","hypothesis":"a b c","edits":[{"start":2,"end":2,"replacement":"c","type":"M:X"}]}"#,
            r#"{"source":"a b","hypothesis":"x y b z","edits":[{"start":0,"end":1,"replacement":"x y","type":"R:Y"},{"start":2,"end":2,"replacement":"z","type":"M:X"}]}"#,
        ]
        .join("\n"),
    );
    let results = w.path("sys.jsonl");
    ok(esh(&[
        "attribute",
        "--input",
        s(&input),
        "--scorer",
        "stub",
        "-o",
        s(&results),
    ]));
    let csv = w.path("p.csv");
    let report = w.path("p.json");
    ok(esh(&[
        "precision",
        s(&results),
        "--csv",
        s(&csv),
        "--report",
        s(&report),
    ]));
    assert_eq!(fs::read_to_string(csv).unwrap(), "system,M:X,R:Y\nsys,1,1\n");
    let rep: Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(rep["systems"]["sys"]["R:Y"], 1.0);
}

#[test]
fn aggregate_round_trips_attribution_output() {
    let w = Work::new();
    let input = w.file("in.jsonl", &corpus());
    let with_norm = w.path("a.jsonl");
    let without = w.path("b.jsonl");
    ok(esh(&[
        "attribute",
        "--input",
        s(&input),
        "--scorer",
        "stub",
        "--normalize",
        "-o",
        s(&with_norm),
    ]));
    ok(esh(&[
        "attribute",
        "--input",
        s(&input),
        "--scorer",
        "stub",
        "-o",
        s(&without),
    ]));
    let csv = w.path("m.csv");
    let report = w.path("m.json");
    ok(esh(&[
        "aggregate",
        &format!("normed={}", s(&with_norm)),
        &format!("plain={}", s(&without)),
        "--jobs",
        "3",
        "--csv",
        s(&csv),
        "--report",
        s(&report),
    ]));
    let csv = fs::read_to_string(csv).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1].split_once(',').unwrap().1, rows[2].split_once(',').unwrap().1);

    // stub scores: sentence 2 has phi (0, 0, 1), sentence 3 has (-1, -1)
    let rep: Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    let sys = &rep["systems"]["normed"];
    assert_eq!(sys["M:DET"]["mean"], 1.0);
    assert_eq!(sys["U:ADV"]["mean"], -0.5);
    assert_eq!(sys["R:ORTH"]["count"], 1);
    assert_eq!(sys["R:ORTH"]["low_support"], true);
}

#[test]
fn m2_input() {
    let w = Work::new();
    let m2 = w.file(
        "in.m2",
        "S A job is performed by him .\nA 0 1|||R:DET|||The|||REQUIRED|||-NONE-|||0\nA 1 2|||R:NOUN|||work|||REQUIRED|||-NONE-|||0\nA 2 3|||R:VERB:TENSE|||was|||REQUIRED|||-NONE-|||0\nA 5 6|||U:PRON|||-NONE-|||REQUIRED|||-NONE-|||1\n",
    );
    let out = ok(esh(&["attribute", "--m2", s(&m2), "--scorer", "stub", "--omit-timing"]));
    let r = &records(&String::from_utf8(out.stdout).unwrap())[0];
    assert_eq!(r["hypothesis"], "The work was performed by him .");
    let out = ok(esh(&[
        "attribute",
        "--m2",
        s(&m2),
        "--annotator",
        "1",
        "--scorer",
        "stub",
        "--omit-timing",
    ]));
    let r = &records(&String::from_utf8(out.stdout).unwrap())[0];
    assert_eq!(phis(r), vec![-1.0]);
}

#[test]
fn bench_call_budget() {
    let w = Work::new();
    let csv = w.path("bench.csv");
    ok(esh(&["bench", "--n", "2..8", "--reps", "1", "--csv", s(&csv)]));
    let mut reader = csv::Reader::from_path(csv).unwrap();
    let headers = reader.headers().unwrap().clone();
    let n_col = headers.iter().position(|h| h == "n").unwrap();
    let calls_col = headers.iter().position(|h| h == "scorer_calls").unwrap();
    let mut seen = Vec::new();
    for row in reader.records() {
        let row = row.unwrap();
        let n: u32 = row[n_col].parse().unwrap();
        let calls: u64 = row[calls_col].parse().unwrap();
        assert_eq!(calls, 1 << n);
        seen.push(n);
    }
    assert_eq!(seen, (2..=8).collect::<Vec<_>>());
}

#[test]
fn sampling_error_report() {
    let w = Work::new();
    let input = w.file("in.jsonl", &corpus());
    let lm = train_lm(&w);
    let csv = w.path("se.csv");
    ok(esh(&[
        "sampling-error",
        "--input",
        s(&input),
        "--scorer",
        &format!("ngram:{}", s(&lm)),
        "--t",
        "1,6,720",
        "--csv",
        s(&csv),
    ]));
    let text = fs::read_to_string(csv).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    // every sentence has at most 3 edits, so 6 permutations already enumerate them all
    assert!(rows[1][1].parse::<f64>().unwrap() < 1e-12);
    assert!(rows[2][1].parse::<f64>().unwrap() < 1e-12);
}
