use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const OBO: &str = "[Term]\nid: CHEBI:50906\nname: role\n\n\
[Term]\nid: CHEBI:24431\nname: chemical entity\n\n\
[Term]\nid: CHEBI:35225\nname: buffer\nis_a: CHEBI:50906\n\n\
[Term]\nid: CHEBI:46787\nname: solvent\nis_a: CHEBI:50906\n\n\
[Term]\nid: CHEBI:30741\nname: ethylene glycol bis(2-aminoethyl)tetraacetate\nsynonym: \"EGTA\" RELATED []\nis_a: CHEBI:24431\n\n\
[Term]\nid: CHEBI:15377\nname: water\nis_a: CHEBI:24431\n";

fn cear(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_cear")).current_dir(dir).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "cear {args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn corpus(dir: &Path) {
    fs::create_dir_all(dir.join("papers")).unwrap();
    fs::write(dir.join("chebi.obo"), OBO).unwrap();
    fs::write(dir.join("papers/a.txt"), "EGTA is used as buffer in all runs. Water was used as solvent.").unwrap();
    fs::write(dir.join("papers/b.txt"), "Samples were kept in PBS. EGTA was used as buffer.").unwrap();
    fs::write(
        dir.join("papers/c.json"),
        r#"{"source_name": "c", "pages": [{"number": 1, "text": "Water is a solvent."}, {"number": 2, "text": "Water was used as solvent again."}]}"#,
    )
    .unwrap();
    fs::write(dir.join("papers/dup.txt"), "EGTA is used as buffer in all runs. Water was used as solvent.").unwrap();
}

fn stages(dir: &Path, jobs: &str, out: &str) {
    cear(
        dir,
        &[
            "--jobs",
            jobs,
            "annotate",
            "--store",
            "store",
            "--lexicon",
            "roles.json",
            "--lexicon",
            "chems.json",
            "--out",
            "ann",
        ],
    );
    cear(dir, &["--jobs", jobs, "candidates", "--store", "store", "--ann", "ann", "--out", "pairs.jsonl"]);
    cear(dir, &["validate", "--pairs", "pairs.jsonl", "--cache", "verdicts.jsonl", "--stub"]);
    cear(
        dir,
        &["--jobs", jobs, "build", "--cache", "verdicts.jsonl", "--obo", "chebi.obo", "--min-ref", "1", "--out", out],
    );
}

#[test]
fn staged_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    corpus(dir);

    let o = stdout(&cear(dir, &["ingest", "--in", "papers", "--store", "store"]));
    assert_eq!(o.lines().filter(|l| l.starts_with("Added")).count(), 3, "{o}");
    assert_eq!(o.lines().filter(|l| l.starts_with("Duplicate")).count(), 1, "{o}");
    let again = stdout(&cear(dir, &["ingest", "--in", "papers/a.txt", "--store", "store"]));
    assert!(again.starts_with("Duplicate"));

    cear(dir, &["lexicon", "--obo", "chebi.obo", "--kind", "role", "--min-len", "4", "--out", "roles.json"]);
    cear(dir, &["lexicon", "--obo", "chebi.obo", "--kind", "chemical", "--min-len", "4", "--out", "chems.json"]);
    let lex: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("roles.json")).unwrap()).unwrap();
    assert_eq!(lex["min_length"], 4);
    assert!(lex["entries"].as_array().unwrap().iter().any(|e| e["key"] == "buffer" && e["kind"] == "role"));

    stages(dir, "1", "kg1.ttl");
    let pairs = fs::read_to_string(dir.join("pairs.jsonl")).unwrap();
    assert_eq!(pairs.lines().count(), 5);
    let ttl = fs::read_to_string(dir.join("kg1.ttl")).unwrap();
    assert!(ttl.contains("obo:CHEBI_30741 obo:RO_0000087 obo:CHEBI_35225 ."), "{ttl}");
    assert!(ttl.contains("obo:CHEBI_15377 obo:RO_0000087 obo:CHEBI_46787 ."), "{ttl}");

    // warm cache: no new verdicts, identical records
    let records = fs::read(dir.join("verdicts.jsonl")).unwrap();
    let o = stdout(&cear(dir, &["validate", "--pairs", "pairs.jsonl", "--cache", "verdicts.jsonl", "--stub"]));
    assert!(o.contains("0 new verdicts"), "{o}");
    assert_eq!(fs::read(dir.join("verdicts.jsonl")).unwrap(), records);

    stages(dir, "8", "kg8.ttl");
    assert_eq!(fs::read(dir.join("kg8.ttl")).unwrap(), ttl.as_bytes());

    let o = stdout(&cear(
        dir,
        &[
            "build",
            "--cache",
            "verdicts.jsonl",
            "--obo",
            "chebi.obo",
            "--min-ref",
            "2",
            "--out",
            "kg.ttl",
            "--rdf-star",
            "--html",
            "kg.html",
            "--stats",
            "1,2,5",
            "--stats-json",
            "stats.json",
            "--rank",
            "3",
        ],
    ));
    assert!(o.contains("relevant text positions"), "{o}");
    assert!(o.contains("most frequent"), "{o}");
    let star = fs::read_to_string(dir.join("kg.ttl")).unwrap();
    assert!(star.contains("<< obo:CHEBI_") && star.contains("cear:source"), "{star}");
    assert!(fs::read_to_string(dir.join("kg.html")).unwrap().contains("#8B0000"));
    let stats: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["columns"].as_array().unwrap().len(), 3);

    let o = stdout(&cear(dir, &["compact-cache", "--cache", "verdicts.jsonl"]));
    assert!(o.contains("dropped 0"), "{o}");
}

#[test]
fn eval_reports_tables_and_json() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let doc = "a".repeat(64);
    let file =
        |mentions: &str| format!(r#"{{"doc_checksum": "{doc}", "provenance": "gold", "mentions": [{mentions}]}}"#);
    let m = |s: usize, e: usize, surface: &str| {
        format!(r#"{{"page": 1, "start": {s}, "end": {e}, "kind": "chemical", "surface": "{surface}"}}"#)
    };
    fs::create_dir_all(dir.join("gold")).unwrap();
    fs::create_dir_all(dir.join("pred")).unwrap();
    fs::write(dir.join("gold/d.json"), file(&[m(0, 1, "A"), m(2, 3, "B"), m(4, 5, "C")].join(","))).unwrap();
    fs::write(dir.join("pred/d.json"), file(&[m(0, 1, "A"), m(2, 3, "B"), m(6, 7, "D")].join(","))).unwrap();
    let o = stdout(&cear(dir, &["eval", "--gold", "gold", "--pred", "pred", "--json", "eval.json"]));
    assert!(o.contains("66.7"), "{o}");
    assert!(o.contains("false positive"), "{o}");
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("eval.json")).unwrap()).unwrap();
    let f1 = v["metrics"]["overall"]["f1"].as_f64().unwrap();
    assert!((f1 - 2.0 / 3.0).abs() < 1e-9);
    assert_eq!(v["errors"]["false_negatives"][0][0], "C");
}

#[test]
fn run_with_config_then_skip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    corpus(dir);
    fs::write(dir.join("cear.toml"), "input = \"papers\"\nwork_dir = \"work\"\nobo = \"chebi.obo\"\nmin_ref = 1\n")
        .unwrap();
    let first = stdout(&cear(dir, &["run", "--config", "cear.toml"]));
    assert!(first.lines().all(|l| l.contains(" ran ")), "{first}");
    assert!(dir.join("work/kg.ttl").exists() && dir.join("work/kg.html").exists());
    let second = stdout(&cear(dir, &["run", "--config", "cear.toml"]));
    assert_eq!(second.lines().filter(|l| l.contains("skipped (up-to-date)")).count(), 6, "{second}");
    let third = stdout(&cear(dir, &["run", "--config", "cear.toml", "--set", "min_ref=2", "--json"]));
    assert!(third.lines().any(|l| l.starts_with("build") && l.contains(" ran ")), "{third}");
}

#[test]
fn failures_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("cear.toml"), "obo = \"missing.obo\"\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cear"))
        .current_dir(dir)
        .args(["run", "--config", "cear.toml"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.obo"));

    let out = Command::new(env!("CARGO_BIN_EXE_cear"))
        .current_dir(dir)
        .args(["validate", "--pairs", "p.jsonl", "--cache", "c.jsonl"])
        .output()
        .unwrap();
    assert!(!out.status.success(), "validate needs --stub or --model");
}
